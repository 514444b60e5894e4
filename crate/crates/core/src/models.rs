//! Built-in countable test families with their analytic reference values.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{MatrixSource, MetzlerSource, RowFn, DEFAULT_STATE_BUDGET};
use crate::StateId;

/// Rate or coefficient as a function of the integer state.
pub type Coefficient = Arc<dyn Fn(i64) -> f64 + Send + Sync>;

pub fn constant(c: f64) -> Coefficient {
    Arc::new(move |_| c)
}

/// Known closed-form values for a model, where they exist.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AnalyticReference {
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Spectral bound, for Metzler models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `u_i/u_0 = base^i` when the left vector is geometric.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left_ratio: Option<f64>,
    /// `y_i/y_0 = base^i` when the right vector is geometric.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right_ratio: Option<f64>,
}

impl AnalyticReference {
    pub fn left(&self, i: i64) -> Option<f64> {
        self.left_ratio.map(|b| b.powi(i as i32))
    }

    pub fn right(&self, i: i64) -> Option<f64> {
        self.right_ratio.map(|b| b.powi(i as i32))
    }
}

#[derive(Clone, Debug)]
pub enum Realization {
    NonNegative(MatrixSource),
    Metzler(MetzlerSource),
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub parameters: BTreeMap<String, f64>,
    pub realization: Realization,
    pub reference: AnalyticReference,
    /// A convenient reference state inside the state space.
    pub origin: StateId,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("parameters", &self.parameters)
            .field("reference", &self.reference)
            .finish()
    }
}

impl ModelSpec {
    pub fn matrix(&self) -> Option<&MatrixSource> {
        match &self.realization {
            Realization::NonNegative(a) => Some(a),
            Realization::Metzler(_) => None,
        }
    }

    pub fn metzler(&self) -> Option<&MetzlerSource> {
        match &self.realization {
            Realization::Metzler(g) => Some(g),
            Realization::NonNegative(_) => None,
        }
    }
}

fn positive(name: &str, i: i64, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{name}({i}) must be positive and finite, got {v}")))
    }
}

/// Simple random walk on ℤ: `a_{i,i+1} = p`, `a_{i,i−1} = 1 − p`.
pub fn srw_line(p: f64) -> Result<ModelSpec> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    let q = 1.0 - p;
    let step = move |i: StateId| vec![(StateId(i.0 - 1), q), (StateId(i.0 + 1), p)];
    let back = move |j: StateId| vec![(StateId(j.0 - 1), p), (StateId(j.0 + 1), q)];
    Ok(ModelSpec {
        name: "srw".into(),
        parameters: BTreeMap::from([("p".into(), p)]),
        realization: Realization::NonNegative(MatrixSource::lazy(step).with_columns(back).build()),
        reference: AnalyticReference {
            r: Some(1.0 / (2.0 * (p * q).sqrt())),
            lambda: None,
            left_ratio: Some((p / q).sqrt()),
            right_ratio: Some((q / p).sqrt()),
        },
        origin: StateId(0),
    })
}

/// Birth–death chain on `{0, 1, …}`: `a_{i,i+1} = λ_i`, `a_{i,i−1} = μ_i`,
/// reflecting at 0. Rates are checked as rows are generated.
pub fn birth_death(birth: Coefficient, death: Coefficient) -> Result<ModelSpec> {
    birth_death_with(birth, death, BTreeMap::new(), AnalyticReference::default())
}

fn birth_death_with(
    birth: Coefficient,
    death: Coefficient,
    parameters: BTreeMap<String, f64>,
    reference: AnalyticReference,
) -> Result<ModelSpec> {
    positive("lambda", 0, birth(0))?;
    let (b, d) = (birth.clone(), death.clone());
    let rows: Arc<RowFn> = Arc::new(move |s: StateId| {
        let i = s.0;
        if i < 0 {
            return Err(Error::UnknownState(s));
        }
        let mut row = Vec::with_capacity(2);
        if i > 0 {
            row.push((StateId(i - 1), positive("mu", i, d(i))?));
        }
        row.push((StateId(i + 1), positive("lambda", i, b(i))?));
        Ok(row)
    });
    let cols: Arc<RowFn> = Arc::new(move |s: StateId| {
        let j = s.0;
        if j < 0 {
            return Err(Error::UnknownState(s));
        }
        let mut col = Vec::with_capacity(2);
        if j > 0 {
            col.push((StateId(j - 1), positive("lambda", j - 1, birth(j - 1))?));
        }
        col.push((StateId(j + 1), positive("mu", j + 1, death(j + 1))?));
        Ok(col)
    });
    Ok(ModelSpec {
        name: "bd".into(),
        parameters,
        realization: Realization::NonNegative(MatrixSource::lazy_derived(rows, Some(cols), DEFAULT_STATE_BUDGET)),
        reference,
        origin: StateId(0),
    })
}

/// Birth–death chain with constant rates; truncations are tridiagonal
/// Toeplitz, so `R = 1/(2√(λμ))`.
pub fn birth_death_constant(lambda: f64, mu: f64) -> Result<ModelSpec> {
    positive("lambda", 0, lambda)?;
    positive("mu", 1, mu)?;
    birth_death_with(
        constant(lambda),
        constant(mu),
        BTreeMap::from([("lambda".into(), lambda), ("mu".into(), mu)]),
        AnalyticReference {
            r: Some(1.0 / (2.0 * (lambda * mu).sqrt())),
            ..Default::default()
        },
    )
}

/// Tridiagonal Metzler matrix on ℤ: `g_ii = diag(i)`, `g_{i,i±1} = off(i)`.
/// `diag_bound` is the declared `sup_i g_ii`.
pub fn metzler_tridiagonal(diag: Coefficient, off: Coefficient, diag_bound: f64) -> Result<ModelSpec> {
    metzler_tri_with(diag, off, diag_bound, BTreeMap::new(), AnalyticReference::default())
}

fn metzler_tri_with(
    diag: Coefficient,
    off: Coefficient,
    diag_bound: f64,
    parameters: BTreeMap<String, f64>,
    reference: AnalyticReference,
) -> Result<ModelSpec> {
    let (d, o) = (diag.clone(), off.clone());
    let rows: Arc<RowFn> = Arc::new(move |s: StateId| {
        let i = s.0;
        let b = positive("off", i, o(i))?;
        Ok(vec![(StateId(i - 1), b), (s, d(i)), (StateId(i + 1), b)])
    });
    let cols: Arc<RowFn> = Arc::new(move |s: StateId| {
        let j = s.0;
        Ok(vec![
            (StateId(j - 1), positive("off", j - 1, off(j - 1))?),
            (s, diag(j)),
            (StateId(j + 1), positive("off", j + 1, off(j + 1))?),
        ])
    });
    Ok(ModelSpec {
        name: "metzler-tri".into(),
        parameters,
        realization: Realization::Metzler(MetzlerSource::lazy_with(rows, Some(cols), diag_bound)?),
        reference,
        origin: StateId(0),
    })
}

/// Constant coefficients: `λ = diag + 2·off`, with a flat left vector.
pub fn metzler_tridiagonal_constant(diag: f64, off: f64) -> Result<ModelSpec> {
    positive("off", 0, off)?;
    if !diag.is_finite() {
        return Err(Error::Domain(format!("diag must be finite, got {diag}")));
    }
    metzler_tri_with(
        constant(diag),
        constant(off),
        diag,
        BTreeMap::from([("diag".into(), diag), ("off".into(), off)]),
        AnalyticReference {
            lambda: Some(diag + 2.0 * off),
            left_ratio: Some(1.0),
            right_ratio: Some(1.0),
            ..Default::default()
        },
    )
}

/// Parses `srw:p=0.3`, `bd:lambda=1,mu=2` or `metzler-tri:diag=-2,off=1`.
pub fn parse_model(spec: &str) -> Result<ModelSpec> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params = BTreeMap::new();
    for part in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("model parameter `{part}` is not key=value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("model parameter `{key}` is not a number: `{value}`")))?;
        params.insert(key.trim().to_string(), value);
    }
    let take = |params: &mut BTreeMap<String, f64>, key: &str| {
        params
            .remove(key)
            .ok_or_else(|| Error::invalid(format!("model `{name}` needs parameter `{key}`")))
    };
    let model = match name.trim() {
        "srw" => srw_line(take(&mut params, "p")?)?,
        "bd" => {
            let lambda = take(&mut params, "lambda")?;
            birth_death_constant(lambda, take(&mut params, "mu")?)?
        }
        "metzler-tri" => {
            let diag = take(&mut params, "diag")?;
            metzler_tridiagonal_constant(diag, take(&mut params, "off")?)?
        }
        other => return Err(Error::invalid(format!("unknown model `{other}` (expected srw, bd or metzler-tri)"))),
    };
    if let Some(extra) = params.keys().next() {
        return Err(Error::invalid(format!("model `{name}` has no parameter `{extra}`")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convergence::convergence_parameter_ladder;
    use crate::matrix::row_sums;
    use crate::metzler::spectral_bound_ladder;
    use crate::series::{left_vector_series, Horizon};

    #[test]
    fn srw_references() {
        let m = srw_line(0.5).unwrap();
        assert_eq!(m.reference.r, Some(1.0));
        let m = srw_line(0.3).unwrap();
        assert!((m.reference.r.unwrap() - 1.0910894512).abs() < 1e-10);
        assert!((m.reference.left(1).unwrap() - (3.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!(srw_line(1.0).is_err());
        assert!(srw_line(0.0).is_err());
    }

    #[test]
    fn srw_left_vector_satisfies_eigen_equation() {
        // u_{i−1}p + u_{i+1}q = 2√(pq)·u_i
        let (p, q) = (0.3, 0.7);
        let m = srw_line(p).unwrap();
        for i in -4..4 {
            let lhs = m.reference.left(i - 1).unwrap() * p + m.reference.left(i + 1).unwrap() * q;
            let rhs = 2.0 * (p * q).sqrt() * m.reference.left(i).unwrap();
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn srw_series_matches_reference() {
        let m = srw_line(0.3).unwrap();
        let a = m.matrix().unwrap();
        let r = m.reference.r.unwrap();
        let states: Vec<StateId> = (-2..=2).map(StateId).collect();
        let u = left_vector_series(a, r, StateId(0), &states, Horizon::adaptive(1e-6)).unwrap();
        for &i in &states {
            let want = m.reference.left(i.0).unwrap();
            assert!((u.get(i).unwrap() - want).abs() < 1e-4 * want, "{i}");
        }
    }

    #[test]
    fn birth_death_rows() {
        let m = birth_death_constant(1.0, 1.0).unwrap();
        let a = m.matrix().unwrap();
        let f = row_sums(a, &[StateId(0), StateId(1), StateId(5)]).unwrap();
        assert_eq!(f.get(StateId(0)), Some(1.0));
        assert_eq!(f.get(StateId(1)), Some(2.0));
        assert_eq!(f.get(StateId(5)), Some(2.0));
        assert_eq!(a.column(StateId(0)).unwrap().to_vec(), vec![(StateId(1), 1.0)]);
    }

    #[test]
    fn birth_death_ladder() {
        let m = birth_death_constant(1.0, 2.0).unwrap();
        let rep = convergence_parameter_ladder(m.matrix().unwrap(), StateId(0), &[16, 32, 64], 1e-4).unwrap();
        let want = 1.0 / (2.0 * 2f64.sqrt());
        assert!((rep.r - want).abs() < 1e-3, "{}", rep.r);
        assert!(rep.r >= want);
    }

    #[test]
    fn birth_death_rejects_bad_rates() {
        assert!(birth_death_constant(0.0, 1.0).is_err());
        let m = birth_death(constant(1.0), Arc::new(|i| if i > 3 { -1.0 } else { 1.0 })).unwrap();
        let a = m.matrix().unwrap();
        assert!(a.row(StateId(2)).is_ok());
        assert!(matches!(a.row(StateId(4)), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_birth_death_is_irreducible() {
        let m = birth_death_constant(0.7, 1.3).unwrap();
        let a = m.matrix().unwrap();
        let states: Vec<StateId> = (0..6).map(StateId).collect();
        let r = a.restrict(&states).unwrap();
        assert!(crate::matrix::is_irreducible(&r.source, StateId(0), 0).unwrap().holds());
    }

    #[test]
    fn metzler_tri_examples() {
        let m = metzler_tridiagonal_constant(-2.0, 1.0).unwrap();
        let g = m.metzler().unwrap();
        assert_eq!(g.diagonal(StateId(0)).unwrap(), -2.0);
        assert_eq!(g.row(StateId(0)).unwrap().to_vec(), vec![(StateId(-1), 1.0), (StateId(0), -2.0), (StateId(1), 1.0)]);

        let m = metzler_tridiagonal_constant(0.0, 1.0).unwrap();
        let s = spectral_bound_ladder(m.metzler().unwrap(), StateId(0), &[8, 16, 32, 64], 1e-4).unwrap();
        assert!((s.lambda - m.reference.lambda.unwrap()).abs() < 2e-3);
        assert!((s.r_d - 1.0 / 3.0).abs() < 1e-3);

        let bad = metzler_tridiagonal(Arc::new(|i| i as f64), constant(1.0), 2.0).unwrap();
        assert!(matches!(bad.metzler().unwrap().row(StateId(3)), Err(Error::Domain(_))));
    }

    #[test]
    fn model_strings() {
        let m = parse_model("srw:p=0.3").unwrap();
        assert_eq!(m.name, "srw");
        assert_eq!(m.parameters["p"], 0.3);
        let m = parse_model("bd:lambda=1,mu=2").unwrap();
        assert!((m.reference.r.unwrap() - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-15);
        let m = parse_model("metzler-tri:diag=-2,off=1").unwrap();
        assert_eq!(m.reference.lambda, Some(0.0));
        assert!(parse_model("srw").is_err());
        assert!(parse_model("srw:p=2").is_err());
        assert!(parse_model("srw:p=0.3,q=1").is_err());
        assert!(parse_model("torus:n=3").is_err());
        assert!(parse_model("srw:p=abc").is_err());
    }
}
