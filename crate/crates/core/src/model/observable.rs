use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{HamiltonianPair, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::{diag_matrix, ProductSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ObservableSpec {
    /// Oscillator position of site 1.
    PositionSite1,
    /// S_z of site 1.
    SzSite1,
    /// Total S_z.
    SzGlobal,
    /// Pauli z of a spin-1/2 site 1.
    SigmaZSite1,
    /// Projector onto site-1 quantum number `value`.
    Projector(f64),
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "position_site_1" => Ok(Self::PositionSite1),
            "sz_site_1" => Ok(Self::SzSite1),
            "sz_global" => Ok(Self::SzGlobal),
            "sigma_z_site_1" => Ok(Self::SigmaZSite1),
            _ => {
                let inner = s
                    .strip_prefix("projector(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown observable '{s}'")))?;
                let v: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad projector value '{inner}'")))?;
                Ok(Self::Projector(v))
            }
        }
    }
}

impl TryFrom<String> for ObservableSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ObservableSpec> for String {
    fn from(o: ObservableSpec) -> String {
        o.to_string()
    }
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PositionSite1 => write!(f, "position_site_1"),
            Self::SzSite1 => write!(f, "sz_site_1"),
            Self::SzGlobal => write!(f, "sz_global"),
            Self::SigmaZSite1 => write!(f, "sigma_z_site_1"),
            Self::Projector(v) => write!(f, "projector({v})"),
        }
    }
}

/// A measurable observable with its spectral decomposition.
///
/// Projectors are diagonal in a *measurement basis*: the free basis when
/// `rotation` is `None`, otherwise the computational product basis, with
/// `rotation[(c, alpha)]` the amplitude of free state alpha on state c.
#[derive(Clone, Debug)]
pub struct Observable {
    pub spec: ObservableSpec,
    /// Matrix in the free basis.
    pub matrix: Array2<f64>,
    /// Distinct eigenvalues, ascending.
    pub outcomes: Vec<f64>,
    /// Outcome index of each measurement-basis state.
    pub labels: Vec<usize>,
    pub rotation: Option<Arc<Array2<f64>>>,
    pub diagonal_in_free_basis: bool,
}

fn require_spin_model(model: &HamiltonianPair, spec: &ObservableSpec) -> Result<()> {
    match model.params {
        ModelParams::OscillatorChain(_) => {
            invalid(format!("observable {spec} is not defined on the oscillator chain"))
        }
        _ => Ok(()),
    }
}

pub fn build_observable(model: &HamiltonianPair, spec: &ObservableSpec) -> Result<Observable> {
    let site_values = &model.frame.site_values;
    let space = ProductSpace::new(model.basis.site_dims().to_vec());
    let site1 = |c: usize| site_values[0][space.digit(c, 0)];
    let comp: Vec<f64> = match spec {
        ObservableSpec::PositionSite1 => {
            if !matches!(model.params, ModelParams::OscillatorChain(_)) {
                return invalid(format!("{spec} needs the oscillator chain"));
            }
            (0..space.dim()).map(site1).collect()
        }
        ObservableSpec::SzSite1 => {
            require_spin_model(model, spec)?;
            (0..space.dim()).map(site1).collect()
        }
        ObservableSpec::SzGlobal => {
            require_spin_model(model, spec)?;
            (0..space.dim())
                .map(|c| (0..space.n_sites()).map(|i| site_values[i][space.digit(c, i)]).sum())
                .collect()
        }
        ObservableSpec::SigmaZSite1 => {
            require_spin_model(model, spec)?;
            if space.site_dim(0) != 2 {
                return invalid(format!("{spec} needs a spin-1/2 site 1"));
            }
            (0..space.dim()).map(|c| 2.0 * site1(c)).collect()
        }
        ObservableSpec::Projector(v) => {
            if !site_values[0].iter().any(|x| (x - v).abs() < 1e-9) {
                return invalid(format!("site 1 has no state with quantum number {v}"));
            }
            (0..space.dim()).map(|c| if (site1(c) - v).abs() < 1e-9 { 1.0 } else { 0.0 }).collect()
        }
    };
    from_computational_values(spec.clone(), &comp, model.frame.rotation.clone())
}

fn distinct_sorted(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = values.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    out
}

fn label_of(outcomes: &[f64], x: f64) -> Option<usize> {
    outcomes.iter().position(|o| (o - x).abs() < 1e-9)
}

pub(crate) fn from_computational_values(
    spec: ObservableSpec,
    comp: &[f64],
    rotation: Option<Arc<Array2<f64>>>,
) -> Result<Observable> {
    let outcomes = distinct_sorted(comp);
    let matrix = match &rotation {
        None => diag_matrix(comp),
        Some(r) => {
            let mut weighted = r.as_ref().clone();
            for (mut row, v) in weighted.axis_iter_mut(Axis(0)).zip(comp) {
                row *= *v;
            }
            let mut m = weighted.t().dot(r.as_ref());
            crate::linalg::symmetrize(&mut m);
            m
        }
    };
    let max_off = matrix
        .indexed_iter()
        .filter(|((i, j), _)| i != j)
        .fold(0.0f64, |m, (_, x)| m.max(x.abs()));
    let diagonal = max_off < 1e-12;
    let (labels, rotation) = if diagonal && rotation.is_some() {
        // Projectors are diagonal in the free basis: measure there.
        let mut labels = Vec::with_capacity(comp.len());
        for x in matrix.diag() {
            labels.push(label_of(&outcomes, *x).ok_or_else(|| {
                Error::InvalidParameter(format!("free-basis diagonal {x} is not an eigenvalue"))
            })?);
        }
        (labels, None)
    } else {
        let labels = comp.iter().map(|x| label_of(&outcomes, *x).expect("value in set")).collect();
        (labels, rotation)
    };
    Ok(Observable { spec, matrix, outcomes, labels, rotation, diagonal_in_free_basis: diagonal })
}

impl Observable {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn min(&self) -> f64 {
        self.outcomes[0]
    }

    pub fn max(&self) -> f64 {
        *self.outcomes.last().expect("nonempty")
    }

    /// Measurement-basis indices belonging to each outcome.
    pub fn sectors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_outcomes()];
        for (c, &k) in self.labels.iter().enumerate() {
            out[k].push(c);
        }
        out
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.sectors().iter().map(Vec::len).collect()
    }

    /// Projector onto outcome `k`, in the free basis.
    pub fn projector(&self, k: usize) -> Array2<f64> {
        let d = self.dim();
        match &self.rotation {
            None => {
                let mut p = Array2::zeros((d, d));
                for (i, &l) in self.labels.iter().enumerate() {
                    if l == k {
                        p[[i, i]] = 1.0;
                    }
                }
                p
            }
            Some(r) => {
                let rows = r.select(Axis(0), &self.sectors()[k]);
                rows.t().dot(&rows)
            }
        }
    }

    /// (P_k)_{alpha alpha} for every outcome k (rows) and free state alpha.
    pub fn projector_diagonals(&self) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((self.n_outcomes(), d));
        match &self.rotation {
            None => {
                for (a, &k) in self.labels.iter().enumerate() {
                    out[[k, a]] = 1.0;
                }
            }
            Some(r) => {
                for (c, &k) in self.labels.iter().enumerate() {
                    for a in 0..d {
                        out[[k, a]] += r[[c, a]] * r[[c, a]];
                    }
                }
            }
        }
        out
    }

    /// O_{alpha alpha} in the free basis.
    pub fn free_diagonal(&self) -> Vec<f64> {
        self.matrix.diag().to_vec()
    }

    /// Transform free-basis coefficients to the measurement basis.
    pub fn to_measurement_basis(&self, free: &[f64]) -> Vec<f64> {
        match &self.rotation {
            None => free.to_vec(),
            Some(r) => r.dot(&ndarray::ArrayView1::from(free)).to_vec(),
        }
    }
}
