//! Model Hamiltonians split as H = H0 + V in an energy-labelled free
//! product basis, plus measurable observables.

mod builders;
mod observable;
pub mod spin;

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use builders::{build_blbq_chain, build_oscillator_chain, build_spin_half_chain};
pub use observable::{build_observable, Observable, ObservableSpec};

use crate::error::Result;

pub const DEFAULT_MAX_DIM: usize = 20_000;

/// Discretized harmonic oscillators with on-site kinetic term and
/// nearest-neighbour hopping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorParams {
    pub n_sites: usize,
    pub spin_cutoff: usize,
    pub h_x: f64,
    pub j: f64,
}

/// Bilinear-biquadratic spin-S chain in a tilted field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlbqParams {
    pub n_sites: usize,
    pub spin: f64,
    pub h_z: f64,
    pub h_x: f64,
    pub j: f64,
    pub delta: f64,
    pub q: f64,
}

/// Spin-1/2 probe (site 1) coupled to site 3 of an Ising+XX bath chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinHalfParams {
    pub n_sites: usize,
    pub b_z_sys: f64,
    #[serde(default)]
    pub b_x_sys: f64,
    pub b_z_bath: f64,
    pub b_x_bath: f64,
    pub j_z_bath: f64,
    pub j_x_bath: f64,
    pub j_z_sb: f64,
    pub j_x_sb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    OscillatorChain(OscillatorParams),
    BlbqChain(BlbqParams),
    SpinHalfChain(SpinHalfParams),
}

impl ModelParams {
    pub fn build(&self, max_dim: usize) -> Result<HamiltonianPair> {
        match self {
            ModelParams::OscillatorChain(p) => build_oscillator_chain(p, max_dim),
            ModelParams::BlbqChain(p) => build_blbq_chain(p, max_dim),
            ModelParams::SpinHalfChain(p) => build_spin_half_chain(p, max_dim),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelParams::OscillatorChain(_) => "oscillator_chain",
            ModelParams::BlbqChain(_) => "blbq_chain",
            ModelParams::SpinHalfChain(_) => "spin_half_chain",
        }
    }
}

/// Product basis of free eigenstates |s> (system, site 1) x |beta> (bath).
///
/// Product index alpha = s * d_B + beta. The energy-ordered view is a
/// stable sort of the product energies, ties kept in product order.
#[derive(Clone, Debug)]
pub struct FreeBasis {
    site_dims: Vec<usize>,
    system_energies: Vec<f64>,
    bath_energies: Vec<f64>,
    product_energies: Vec<f64>,
    energy_order: Vec<usize>,
    rank: Vec<usize>,
    system_labels: Option<Vec<f64>>,
}

impl FreeBasis {
    pub fn new(
        site_dims: Vec<usize>,
        system_energies: Vec<f64>,
        bath_energies: Vec<f64>,
        system_labels: Option<Vec<f64>>,
    ) -> Self {
        let d_b = bath_energies.len();
        let mut product_energies = Vec::with_capacity(system_energies.len() * d_b);
        for es in &system_energies {
            for eb in &bath_energies {
                product_energies.push(es + eb);
            }
        }
        let mut energy_order: Vec<usize> = (0..product_energies.len()).collect();
        energy_order.sort_by(|&a, &b| product_energies[a].total_cmp(&product_energies[b]));
        let mut rank = vec![0; energy_order.len()];
        for (r, &a) in energy_order.iter().enumerate() {
            rank[a] = r;
        }
        Self {
            site_dims,
            system_energies,
            bath_energies,
            product_energies,
            energy_order,
            rank,
            system_labels,
        }
    }

    pub fn dim(&self) -> usize {
        self.product_energies.len()
    }

    pub fn site_dims(&self) -> &[usize] {
        &self.site_dims
    }

    pub fn system_dim(&self) -> usize {
        self.system_energies.len()
    }

    pub fn bath_dim(&self) -> usize {
        self.bath_energies.len()
    }

    /// alpha -> (s, beta)
    pub fn split(&self, alpha: usize) -> (usize, usize) {
        (alpha / self.bath_dim(), alpha % self.bath_dim())
    }

    /// (s, beta) -> alpha
    pub fn join(&self, s: usize, beta: usize) -> usize {
        s * self.bath_dim() + beta
    }

    /// E_alpha in product order.
    pub fn energy(&self, alpha: usize) -> f64 {
        self.product_energies[alpha]
    }

    pub fn product_energies(&self) -> &[f64] {
        &self.product_energies
    }

    pub fn system_energies(&self) -> &[f64] {
        &self.system_energies
    }

    pub fn bath_energies(&self) -> &[f64] {
        &self.bath_energies
    }

    /// Quantum numbers of the system states when the system factor is
    /// unrotated (oscillator position, or m for a pure Zeeman probe).
    pub fn system_labels(&self) -> Option<&[f64]> {
        self.system_labels.as_deref()
    }

    /// Product indices in order of increasing free energy.
    pub fn energy_order(&self) -> &[usize] {
        &self.energy_order
    }

    pub fn rank(&self, alpha: usize) -> usize {
        self.rank[alpha]
    }

    pub fn sorted_energies(&self) -> Vec<f64> {
        self.energy_order.iter().map(|&a| self.product_energies[a]).collect()
    }

    pub fn median_energy(&self) -> f64 {
        let s = self.sorted_energies();
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    }
}

/// Computational-frame information needed to build observables.
#[derive(Clone, Debug)]
pub(crate) struct Frame {
    /// Columns are free states written in the computational basis.
    pub rotation: Option<Arc<Array2<f64>>>,
    /// Local quantum number of each computational digit, per site.
    pub site_values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct HamiltonianPair {
    pub basis: Arc<FreeBasis>,
    /// Diagonal of H0 in product order.
    pub h0: Vec<f64>,
    /// Perturbation in the free basis, product order.
    pub v: Array2<f64>,
    pub params: ModelParams,
    pub(crate) frame: Frame,
}

impl HamiltonianPair {
    pub fn dim(&self) -> usize {
        self.h0.len()
    }

    pub fn total(&self) -> Array2<f64> {
        let mut h = self.v.clone();
        for (i, e) in self.h0.iter().enumerate() {
            h[[i, i]] += e;
        }
        h
    }

    /// Free-to-computational rotation, `None` when it is the identity.
    pub fn rotation(&self) -> Option<&Array2<f64>> {
        self.frame.rotation.as_deref()
    }
}
