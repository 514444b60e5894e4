//! Matrix Market coordinate files and flat report formats.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::matrix::{MatrixSource, MetzlerSource, StateId};

/// A finite matrix read from disk.
#[derive(Clone, Debug)]
pub enum Ingested {
    NonNegative(MatrixSource),
    Metzler(MetzlerSource),
}

impl Ingested {
    pub fn n_states(&self) -> Option<usize> {
        match self {
            Ingested::NonNegative(a) => a.n_states(),
            Ingested::Metzler(g) => g.n_states(),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Pattern,
}

/// Reads `%%MatrixMarket matrix coordinate {real|integer|pattern}
/// {general|symmetric}`. Any negative diagonal entry makes the result a
/// Metzler matrix; negative off-diagonal entries are rejected.
pub fn read_matrix_market<R: Read>(reader: R) -> Result<Ingested> {
    let mut lines = BufReader::new(reader).lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = header?;
    let words: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(parse_err(1, format!("expected a %%MatrixMarket matrix header, got `{header}`")));
    }
    if words[2] != "coordinate" {
        return Err(parse_err(1, format!("only coordinate format is supported, got `{}`", words[2])));
    }
    let field = match words[3].as_str() {
        "real" | "integer" | "double" => Field::Real,
        "pattern" => Field::Pattern,
        other => return Err(parse_err(1, format!("unsupported field `{other}`"))),
    };
    let symmetric = match words[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(1, format!("unsupported symmetry `{other}`"))),
    };

    let mut size = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut expected = 0;
    for (no, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let Some((n, _)) = size else {
            let [r, c, nnz] = parts[..] else {
                return Err(parse_err(no, "size line must be `rows cols entries`"));
            };
            let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(no, format!("bad integer `{s}`")));
            let (r, c, nnz) = (num(r)?, num(c)?, num(nnz)?);
            if r != c {
                return Err(parse_err(no, format!("matrix must be square, got {r}×{c}")));
            }
            if r == 0 {
                return Err(parse_err(no, "matrix has no rows"));
            }
            size = Some((r, nnz));
            expected = nnz;
            continue;
        };
        let want = if field == Field::Pattern { 2 } else { 3 };
        if parts.len() != want {
            return Err(parse_err(no, format!("expected {want} fields, got {}", parts.len())));
        }
        let index = |s: &str| -> Result<usize> {
            let i: usize = s.parse().map_err(|_| parse_err(no, format!("bad index `{s}`")))?;
            if i == 0 || i > n {
                return Err(parse_err(no, format!("index {i} outside 1..={n}")));
            }
            Ok(i - 1)
        };
        let (i, j) = (index(parts[0])?, index(parts[1])?);
        let v = if field == Field::Pattern {
            1.0
        } else {
            let v: f64 = parts[2]
                .parse()
                .map_err(|_| parse_err(no, format!("bad value `{}`", parts[2])))?;
            if !v.is_finite() {
                return Err(parse_err(no, format!("value {v} is not finite")));
            }
            v
        };
        if symmetric && i < j {
            return Err(parse_err(no, "symmetric files list the lower triangle only"));
        }
        triplets.push((i, j, v));
        if symmetric && i != j {
            triplets.push((j, i, v));
        }
        if expected == 0 {
            return Err(parse_err(no, "more entries than declared"));
        }
        expected -= 1;
    }
    let (n, _) = size.ok_or_else(|| parse_err(1, "missing size line"))?;
    if expected != 0 {
        return Err(parse_err(0, format!("{expected} declared entries are missing")));
    }
    for &(i, j, v) in &triplets {
        if i != j && v < 0.0 {
            return Err(Error::NegativeOffDiagonal {
                row: StateId::from(i),
                col: StateId::from(j),
                value: v,
            });
        }
    }
    triplets.retain(|&(_, _, v)| v != 0.0);
    if triplets.iter().any(|&(i, j, v)| i == j && v < 0.0) {
        Ok(Ingested::Metzler(MetzlerSource::from_triplets(n, triplets)?))
    } else {
        Ok(Ingested::NonNegative(MatrixSource::from_triplets(n, triplets)?))
    }
}

pub fn ingest(path: impl AsRef<Path>) -> Result<Ingested> {
    read_matrix_market(File::open(path)?)
}

fn write_rows<W: Write>(mut w: W, n: usize, rows: &[Vec<(StateId, f64)>]) -> Result<()> {
    let nnz: usize = rows.iter().map(Vec::len).sum();
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{n} {n} {nnz}")?;
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            // `{:e}` prints the shortest string that reads back to the same f64.
            writeln!(w, "{} {} {:e}", i + 1, j.0 + 1, v)?;
        }
    }
    Ok(())
}

/// Writes a finite source; reading it back reproduces it exactly.
pub fn write_matrix_market<W: Write>(w: W, src: &MatrixSource) -> Result<()> {
    let n = src
        .n_states()
        .ok_or_else(|| Error::invalid("only finite sources can be written"))?;
    let rows = (0..n)
        .map(|i| Ok(src.row(StateId::from(i))?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    write_rows(w, n, &rows)
}

pub fn write_metzler_market<W: Write>(w: W, g: &MetzlerSource) -> Result<()> {
    let n = g
        .n_states()
        .ok_or_else(|| Error::invalid("only finite sources can be written"))?;
    let rows = (0..n)
        .map(|i| Ok(g.row(StateId::from(i))?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    write_rows(w, n, &rows)
}

/// 17 significant digits, `.` as the decimal mark.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn flatten_into(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten_into(&key(k), v, out)),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten_into(&key(&i.to_string()), v, out)),
        Value::Number(n) => {
            let s = match (n.as_i64(), n.as_u64(), n.as_f64()) {
                (Some(i), _, _) => i.to_string(),
                (_, Some(u), _) => u.to_string(),
                (_, _, Some(f)) => format_f64(f),
                _ => n.to_string(),
            };
            out.push((prefix.to_string(), s));
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Null => out.push((prefix.to_string(), String::new())),
    }
}

/// Dotted-path `(key, value)` rows of a JSON report, in document order.
pub fn flatten_report(v: &Value) -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten_into("", v, &mut out);
    out
}

/// Long-format CSV with columns `key,value`.
pub fn write_csv_report<W: Write>(w: W, report: &Value) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["key", "value"]).map_err(csv_err)?;
    for (k, v) in flatten_report(report) {
        csv.write_record([k, v]).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_csv_report<R: Read>(r: R) -> Result<Vec<(String, String)>> {
    let mut csv = csv::Reader::from_reader(r);
    csv.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            match (rec.get(0), rec.get(1)) {
                (Some(k), Some(v)) => Ok((k.to_string(), v.to_string())),
                _ => Err(parse_err(rec.position().map_or(0, |p| p.line() as usize), "expected key,value")),
            }
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(line, e.to_string())
}

pub fn write_json_report<W: Write>(mut w: W, report: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<Ingested> {
        read_matrix_market(s.as_bytes())
    }

    #[test]
    fn reads_the_swap_matrix() {
        let m = read("%%MatrixMarket matrix coordinate real general\n% comment\n2 2 2\n1 2 2.0\n2 1 2.0\n").unwrap();
        let Ingested::NonNegative(a) = m else { panic!("expected non-negative") };
        assert_eq!(a.to_dense().unwrap(), vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
    }

    #[test]
    fn rejects_negative_off_diagonal() {
        let e = read("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 -1.0\n").unwrap_err();
        assert!(matches!(e, Error::NegativeOffDiagonal { .. }), "{e}");
    }

    #[test]
    fn negative_diagonal_means_metzler() {
        let m = read("%%MatrixMarket matrix coordinate real general\n2 2 4\n1 1 -2\n1 2 1\n2 1 1\n2 2 -2\n").unwrap();
        let Ingested::Metzler(g) = m else { panic!("expected Metzler") };
        assert_eq!(g.to_dense().unwrap(), vec![vec![-2.0, 1.0], vec![1.0, -2.0]]);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(read(""), Err(Error::Parse { .. })));
        assert!(matches!(read("%%MatrixMarket matrix array real general\n2 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            read("%%MatrixMarket matrix coordinate real general\n2 3 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            read("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 x\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(read("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            read("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1\n1 2 3\n"),
            Err(Error::DuplicateEntry { .. })
        ));
    }

    #[test]
    fn symmetric_and_pattern() {
        let m = read("%%MatrixMarket matrix coordinate pattern symmetric\n3 3 2\n2 1\n3 2\n").unwrap();
        let Ingested::NonNegative(a) = m else { panic!() };
        assert_eq!(
            a.to_dense().unwrap(),
            vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn round_trip_is_exact() {
        let a = MatrixSource::from_dense(&[[0.1, 1.0 / 3.0, 0.0], [1e-300, 0.0, 7e300], [2.0, 0.0, std::f64::consts::PI]])
            .unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &a).unwrap();
        let Ingested::NonNegative(b) = read_matrix_market(&buf[..]).unwrap() else { panic!() };
        assert_eq!(a.to_dense(), b.to_dense());

        let g = MetzlerSource::from_dense(&[[-0.7, 0.1], [1.0 / 7.0, 2.5]]).unwrap();
        let mut buf = Vec::new();
        write_metzler_market(&mut buf, &g).unwrap();
        let Ingested::Metzler(h) = read_matrix_market(&buf[..]).unwrap() else { panic!() };
        assert_eq!(g.to_dense(), h.to_dense());
    }

    #[test]
    fn csv_report_round_trip() {
        let report = serde_json::json!({
            "R": 1.0 / 3.0,
            "recurrence": "R-recurrent",
            "u": {"0": 1.0, "1": 0.1},
            "ladder": [{"radius": 8, "R": 0.5}],
            "ok": true,
        });
        let mut buf = Vec::new();
        write_csv_report(&mut buf, &report).unwrap();
        let rows = read_csv_report(&buf[..]).unwrap();
        let get = |k: &str| rows.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone()).unwrap();
        assert_eq!(get("R").parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(get("R"), "3.3333333333333331e-1");
        assert_eq!(get("u.1").parse::<f64>().unwrap(), 0.1);
        assert_eq!(get("ladder.0.radius"), "8");
        assert_eq!(get("recurrence"), "R-recurrent");
        assert_eq!(get("ok"), "true");
    }
}
