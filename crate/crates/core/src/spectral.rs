//! Exact diagonalization, kernel density of states and envelope fits.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::minimize_log_scan;
use crate::linalg::{eigh, fix_row_signs, max_asymmetry};
use crate::model::HamiltonianPair;

/// Interacting eigenpairs expanded over the free basis.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// E_mu, ascending.
    pub energies: Vec<f64>,
    /// Row mu holds c_mu(alpha), alpha in product order.
    pub coefficients: Array2<f64>,
    /// E_alpha in product order.
    pub free_energies: Vec<f64>,
    /// max_mu || H psi_mu - E_mu psi_mu ||.
    pub max_residual: f64,
}

pub fn diagonalize(h: &HamiltonianPair) -> Result<Spectrum> {
    diagonalize_matrix(&h.total(), h.h0.clone())
}

/// Diagonalize a real symmetric matrix written in a basis whose
/// unperturbed energies are `free_energies`.
pub fn diagonalize_matrix(h: &Array2<f64>, free_energies: Vec<f64>) -> Result<Spectrum> {
    let n = h.nrows();
    if h.ncols() != n || free_energies.len() != n {
        return invalid("matrix and free-energy dimensions disagree");
    }
    let scale = h.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let asym = max_asymmetry(h.view());
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { max_asymmetry: asym });
    }
    let (energies, mut coefficients) = eigh(h.view())?;
    fix_row_signs(&mut coefficients);
    let max_residual = residual(h, &energies, &coefficients).max(sampled_residual(h, &energies, &coefficients));
    if !(max_residual < 1e-8 * scale.max(1.0)) {
        return Err(Error::Residual { max_residual });
    }
    Ok(Spectrum { energies, coefficients, free_energies, max_residual })
}

fn residual(h: &Array2<f64>, energies: &[f64], rows: &Array2<f64>) -> f64 {
    // H C^T - C^T diag(E), column norms.
    let mut r = h.dot(&rows.t());
    for (mut col, (e, v)) in r.axis_iter_mut(Axis(1)).zip(energies.iter().zip(rows.rows())) {
        col.scaled_add(-*e, &v);
    }
    r.axis_iter(Axis(1))
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Residual of a few eigenpairs with plain loops, so a faulty BLAS cannot
/// vouch for its own output.
fn sampled_residual(h: &Array2<f64>, energies: &[f64], rows: &Array2<f64>) -> f64 {
    let n = energies.len();
    let step = (n / 16).max(1);
    let mut worst = 0.0f64;
    for mu in (0..n).step_by(step).chain(std::iter::once(n - 1)) {
        let v = rows.row(mu);
        let mut r2 = 0.0;
        for (i, hrow) in h.rows().into_iter().enumerate() {
            let hv: f64 = hrow.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            r2 += (hv - energies[mu] * v[i]).powi(2);
        }
        let norm: f64 = v.iter().map(|x| x * x).sum();
        worst = worst.max(r2.sqrt()).max((norm - 1.0).abs());
    }
    worst
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn e_min(&self) -> f64 {
        self.energies[0]
    }

    pub fn e_max(&self) -> f64 {
        self.energies[self.dim() - 1]
    }

    pub fn width(&self) -> f64 {
        self.e_max() - self.e_min()
    }

    /// Energy interval covering the central `fraction` of [E_min, E_max].
    pub fn central_window(&self, fraction: f64) -> (f64, f64) {
        let mid = 0.5 * (self.e_min() + self.e_max());
        let half = 0.5 * fraction * self.width();
        (mid - half, mid + half)
    }

    /// Overlaps a_mu = <psi_mu|psi0> for a free-basis state.
    pub fn overlaps(&self, psi0: &[f64]) -> Vec<f64> {
        self.coefficients.dot(&ndarray::ArrayView1::from(psi0)).to_vec()
    }

    /// Largest deviation of C C^T from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.coefficients.dot(&self.coefficients.t());
        g.indexed_iter()
            .map(|((i, j), x)| (x - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

/// Gaussian kernel density of a level set.
#[derive(Clone, Debug)]
pub struct KernelDensity {
    levels: Vec<f64>,
    bandwidth: f64,
}

impl KernelDensity {
    pub fn new(levels: &[f64], bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return invalid(format!("bandwidth must be positive, got {bandwidth}"));
        }
        if levels.is_empty() {
            return invalid("kernel density needs at least one level");
        }
        let mut levels = levels.to_vec();
        levels.sort_by(f64::total_cmp);
        Ok(Self { levels, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn eval(&self, e: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.levels.partition_point(|&x| x < e - 9.0 * h);
        let hi = self.levels.partition_point(|&x| x <= e + 9.0 * h);
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h);
        self.levels[lo..hi]
            .iter()
            .map(|x| {
                let u = (e - x) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
            * norm
    }

    pub fn support(&self) -> (f64, f64) {
        (self.levels[0], self.levels[self.levels.len() - 1])
    }
}

/// Default smoothing width: five mean level spacings in the central 20%
/// of the levels, and never below the largest gap there (so that
/// lattice-valued spectra such as integer bath energies come out smooth).
pub fn default_bandwidth(levels: &[f64]) -> Result<f64> {
    if levels.len() < 10 {
        return invalid("default bandwidth needs at least 10 levels");
    }
    let mut s = levels.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let lo = (0.4 * n as f64) as usize;
    let hi = ((0.6 * n as f64) as usize).clamp(lo + 1, n - 1);
    let mut spacing = (s[hi] - s[lo]) / (hi - lo) as f64;
    let max_gap = s[lo..=hi].windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if !(spacing > 0.0) {
        spacing = (s[n - 1] - s[0]) / (n - 1) as f64;
    }
    let h = (5.0 * spacing).max(max_gap);
    if !(h > 0.0) {
        return invalid("levels are fully degenerate; bandwidth undefined");
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct DosEstimate {
    pub energy_grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub bath_density: Option<Vec<f64>>,
    total: KernelDensity,
    bath: Option<KernelDensity>,
}

fn grid_for(k: &KernelDensity) -> Vec<f64> {
    let (lo, hi) = k.support();
    let h = k.bandwidth();
    let (a, b) = (lo - 6.0 * h, hi + 6.0 * h);
    let n = (((b - a) / (0.25 * h)).ceil() as usize).clamp(256, 200_000);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub fn estimate_dos(levels: &[f64], bandwidth: Option<f64>) -> Result<DosEstimate> {
    let h = match bandwidth {
        Some(h) => h,
        None => default_bandwidth(levels)?,
    };
    let total = KernelDensity::new(levels, h)?;
    let energy_grid = grid_for(&total);
    let density = energy_grid.iter().map(|&e| total.eval(e)).collect();
    Ok(DosEstimate { energy_grid, density, bandwidth: h, bath_density: None, total, bath: None })
}

/// Total and bath densities on a common grid.
pub fn estimate_dos_with_bath(
    levels: &[f64],
    bath_levels: &[f64],
    bandwidth: Option<f64>,
    bath_bandwidth: Option<f64>,
) -> Result<DosEstimate> {
    let mut est = estimate_dos(levels, bandwidth)?;
    let hb = match bath_bandwidth {
        Some(h) => h,
        None => default_bandwidth(bath_levels)?,
    };
    let bath = KernelDensity::new(bath_levels, hb)?;
    est.bath_density = Some(est.energy_grid.iter().map(|&e| bath.eval(e)).collect());
    est.bath = Some(bath);
    Ok(est)
}

impl DosEstimate {
    pub fn density_at(&self, e: f64) -> f64 {
        self.total.eval(e)
    }

    pub fn bath_density_at(&self, e: f64) -> Option<f64> {
        self.bath.as_ref().map(|b| b.eval(e))
    }

    pub fn bath_kernel(&self) -> Option<&KernelDensity> {
        self.bath.as_ref()
    }

    pub fn kernel(&self) -> &KernelDensity {
        &self.total
    }

    /// Trapezoid integral of D(E) over the grid.
    pub fn integral(&self) -> f64 {
        self.energy_grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(e, d)| 0.5 * (e[1] - e[0]) * (d[0] + d[1]))
            .sum()
    }

    /// max |D(E) - sum_s D_B(E - eps_s)| / D(E) over grid points in `window`.
    pub fn bath_relation_deviation(&self, system_energies: &[f64], window: (f64, f64)) -> Option<f64> {
        let bath = self.bath.as_ref()?;
        let mut worst: Option<f64> = None;
        for (&e, &d) in self.energy_grid.iter().zip(&self.density) {
            if e < window.0 || e > window.1 || d <= 0.0 {
                continue;
            }
            let pred: f64 = system_energies.iter().map(|s| bath.eval(e - s)).sum();
            let dev = (d - pred).abs() / d;
            worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
        }
        worst
    }
}

/// Coarse-grained envelope <c_mu(alpha)^2> versus E_mu - E_alpha.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub bin_centers: Vec<f64>,
    pub lambda_avg: Vec<f64>,
    pub counts: Vec<usize>,
    pub bin_width: f64,
    /// Local free-level spacing 1/D_0(E) at the window centre.
    pub omega0: f64,
    pub gamma: Option<f64>,
    /// RMS misfit relative to the largest bin value.
    pub fit_residual: f64,
    pub flagged: bool,
    /// sum_b lambda_b * bin_width / omega0; close to 1 when the offset
    /// range covers the envelope.
    pub normalization: f64,
    pub n_states: usize,
}

pub fn lorentzian(x: f64, gamma: f64, omega0: f64) -> f64 {
    omega0 * gamma / std::f64::consts::PI / (x * x + gamma * gamma)
}

/// Bin c_mu(alpha)^2 by E_mu - E_alpha over eigenstates with E_mu in
/// `window` and fit a Lorentzian of half-width Gamma with omega0 fixed.
pub fn fit_envelope(
    spectrum: &Spectrum,
    window: (f64, f64),
    n_bins: usize,
    max_offset: f64,
) -> Result<EnvelopeFit> {
    if n_bins < 3 {
        return invalid("envelope needs at least 3 bins");
    }
    if !(max_offset > 0.0) {
        return invalid("max_offset must be positive");
    }
    let mus: Vec<usize> =
        (0..spectrum.dim()).filter(|&m| (window.0..=window.1).contains(&spectrum.energies[m])).collect();
    if mus.len() < 50 {
        return invalid(format!("energy window holds {} eigenstates, need >= 50", mus.len()));
    }
    let mut order: Vec<usize> = (0..spectrum.free_energies.len()).collect();
    order.sort_by(|&a, &b| spectrum.free_energies[a].total_cmp(&spectrum.free_energies[b]));
    let sorted: Vec<f64> = order.iter().map(|&a| spectrum.free_energies[a]).collect();

    let width = 2.0 * max_offset / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &mu in &mus {
        let e = spectrum.energies[mu];
        let lo = sorted.partition_point(|&x| x < e - max_offset);
        let hi = sorted.partition_point(|&x| x <= e + max_offset);
        let row = spectrum.coefficients.row(mu);
        for (k, &alpha) in order[lo..hi].iter().enumerate() {
            let de = e - sorted[lo + k];
            let b = (((de + max_offset) / width).floor() as isize).clamp(0, n_bins as isize - 1) as usize;
            sums[b] += row[alpha] * row[alpha];
            counts[b] += 1;
        }
    }
    let bin_centers: Vec<f64> = (0..n_bins).map(|b| -max_offset + (b as f64 + 0.5) * width).collect();
    let lambda_avg: Vec<f64> =
        sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();

    let centre = 0.5 * (window.0 + window.1);
    let free_dos = estimate_dos(&spectrum.free_energies, None)?;
    let d0 = free_dos.density_at(centre);
    if !(d0 > 0.0) {
        return Err(Error::DensityUnavailable { energy: centre });
    }
    let omega0 = 1.0 / d0;
    let normalization = lambda_avg.iter().sum::<f64>() * width / omega0;

    let used: Vec<usize> = (0..n_bins).filter(|&b| counts[b] > 0).collect();
    let lmax = lambda_avg.iter().cloned().fold(0.0, f64::max);
    let sse = |g: f64| -> f64 {
        used.iter().map(|&b| (lambda_avg[b] - lorentzian(bin_centers[b], g, omega0)).powi(2)).sum()
    };
    let m = minimize_log_scan(sse, width / 10.0, 10.0 * max_offset, 200);
    let fit_residual = if lmax > 0.0 { (m.fx / used.len().max(1) as f64).sqrt() / lmax } else { 1.0 };
    let resolved = !m.at_boundary && m.x >= width;
    Ok(EnvelopeFit {
        bin_centers,
        lambda_avg,
        counts,
        bin_width: width,
        omega0,
        gamma: if resolved { Some(m.x) } else { None },
        fit_residual,
        flagged: !resolved,
        normalization,
        n_states: mus.len(),
    })
}
