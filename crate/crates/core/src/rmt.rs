//! Random-matrix predictions: Lorentzian envelopes, constrained Gaussian
//! eigenvector ensembles, microcanonical averages, the system
//! distribution and Einstein relation, the outcome Markov kernel and
//! Gibbs entropy.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::eigh;
use crate::model::Observable;
use crate::seed::stream_rng;
use crate::spectral::KernelDensity;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LorentzianEnvelope {
    pub gamma: f64,
    pub omega0: f64,
    pub center: f64,
}

impl LorentzianEnvelope {
    pub fn new(gamma: f64, omega0: f64, center: f64) -> Result<Self> {
        if !(gamma > 0.0 && omega0 > 0.0) {
            return invalid("envelope needs gamma > 0 and omega0 > 0");
        }
        Ok(Self { gamma, omega0, center })
    }

    /// Width from the perturbation strength: Gamma = pi g^2 / (N omega0).
    pub fn from_coupling(g: f64, n: usize, omega0: f64, center: f64) -> Result<Self> {
        Self::new(PI * g * g / (n as f64 * omega0), omega0, center)
    }

    /// Lambda(center, alpha) for a free state of energy `e`.
    pub fn value(&self, e: f64) -> f64 {
        let x = self.center - e;
        self.omega0 * self.gamma / PI / (x * x + self.gamma * self.gamma)
    }
}

#[derive(Clone, Debug)]
pub struct MicrocanonicalWeights {
    pub weights: Vec<f64>,
    pub energies: Vec<f64>,
}

impl MicrocanonicalWeights {
    /// Lorentzian weights over free states, normalized to sum 1.
    pub fn lorentzian(env: &LorentzianEnvelope, free_energies: &[f64]) -> Result<Self> {
        let w: Vec<f64> = free_energies.iter().map(|&e| env.value(e)).collect();
        Self::normalized(w, free_energies.to_vec())
    }

    pub fn delta(free_energies: &[f64], alpha: usize) -> Result<Self> {
        let mut w = vec![0.0; free_energies.len()];
        *w.get_mut(alpha).ok_or_else(|| Error::InvalidParameter("alpha out of range".into()))? = 1.0;
        Self::normalized(w, free_energies.to_vec())
    }

    pub fn normalized(weights: Vec<f64>, energies: Vec<f64>) -> Result<Self> {
        if weights.len() != energies.len() {
            return invalid("weights and energies differ in length");
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return invalid("weights must be non-negative");
        }
        let z: f64 = weights.iter().sum();
        if !(z > 0.0) {
            return invalid("weights sum to zero");
        }
        Ok(Self { weights: weights.iter().map(|w| w / z).collect(), energies })
    }
}

/// sum_alpha Lambda(alpha0, alpha) O_{alpha alpha}.
pub fn microcanonical_average(values: &[f64], w: &MicrocanonicalWeights) -> Result<f64> {
    if values.len() != w.weights.len() {
        return invalid("observable diagonal and weights differ in length");
    }
    Ok(values.iter().zip(&w.weights).map(|(v, p)| v * p).sum())
}

/// p_inf(s) as the weighted average of (P_s)_{alpha alpha}.
pub fn stationary_distribution(w: &MicrocanonicalWeights, obs: &Observable) -> Result<Vec<f64>> {
    let pd = obs.projector_diagonals();
    if pd.ncols() != w.weights.len() {
        return invalid("observable and weights live on different spaces");
    }
    Ok(pd.rows().into_iter().map(|r| r.iter().zip(&w.weights).map(|(a, b)| a * b).sum()).collect())
}

/// Per-row Gaussian variances Lambda(mu, alpha) for ensemble sampling.
#[derive(Clone, Debug)]
pub struct ChaoticEnsemble {
    variances: Array2<f64>,
}

impl ChaoticEnsemble {
    pub fn new(variances: Array2<f64>) -> Result<Self> {
        let (k, d) = variances.dim();
        if k == 0 || k > d {
            return invalid(format!("cannot draw {k} orthonormal states on a grid of {d}"));
        }
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("variances must be finite and non-negative");
        }
        if variances.rows().into_iter().any(|r| !(r.sum() > 0.0)) {
            return invalid("every envelope row needs positive total weight");
        }
        Ok(Self { variances })
    }

    /// Lorentzian of half-width `gamma` on a grid of `grid` equally spaced
    /// free levels (spacing omega0 = 1); rows are the eigenstates whose
    /// centres sit on grid points `rows`.
    pub fn lorentzian(grid: usize, gamma: f64, rows: std::ops::Range<usize>) -> Result<Self> {
        if rows.end > grid {
            return invalid("row range exceeds the grid");
        }
        let mut v = Array2::zeros((rows.len(), grid));
        for (i, mu) in rows.enumerate() {
            let env = LorentzianEnvelope::new(gamma, 1.0, mu as f64)?;
            for a in 0..grid {
                v[[i, a]] = env.value(a as f64);
            }
        }
        Self::new(v)
    }

    pub fn flat(n_states: usize, grid: usize) -> Result<Self> {
        Self::new(Array2::from_elem((n_states, grid), 1.0 / grid as f64))
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }

    /// One member: Gaussian draw with variance Lambda, then symmetric
    /// (Loewdin) orthonormalization of the rows.
    pub fn sample(&self, seed: u64, member: u64) -> Result<Array2<f64>> {
        let mut rng = stream_rng(seed, member);
        let mut g = self.variances.mapv(|v| v.sqrt());
        for x in g.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x *= z;
        }
        let s = g.dot(&g.t());
        let (w, q) = eigh(s.view())?;
        let wmax = w.iter().cloned().fold(0.0, f64::max);
        if w.iter().any(|&x| !(x > 1e-13 * wmax)) {
            return Err(Error::InvalidParameter("sampled rows are linearly dependent".into()));
        }
        // S^{-1/2} = Q^T diag(w^{-1/2}) Q with Q holding eigenvectors as rows.
        let mut scaled = q.clone();
        for (mut row, x) in scaled.axis_iter_mut(Axis(0)).zip(&w) {
            row /= x.sqrt();
        }
        let inv_sqrt = q.t().dot(&scaled);
        Ok(inv_sqrt.dot(&g))
    }
}

pub fn sample_chaotic_ensemble(ens: &ChaoticEnsemble, n_members: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    (0..n_members as u64).map(|m| ens.sample(seed, m)).collect()
}

/// Indices of <c_mu(alpha) c_nu(beta) c_mu(alpha') c_nu(beta')>.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourPointIndex {
    pub mu: usize,
    pub nu: usize,
    pub alpha: usize,
    pub beta: usize,
    pub alpha_p: usize,
    pub beta_p: usize,
}

fn kd(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Gaussian contraction plus orthogonality correction for mu != nu; the
/// full Wick sum for mu = nu.
pub fn four_point_prediction(lambda: &Array2<f64>, ix: &FourPointIndex) -> f64 {
    let l = |m: usize, a: usize| lambda[[m, a]];
    let FourPointIndex { mu, nu, alpha, beta, alpha_p, beta_p } = *ix;
    if mu == nu {
        return l(mu, alpha) * l(mu, beta) * kd(alpha, alpha_p) * kd(beta, beta_p)
            + l(mu, alpha) * l(mu, alpha_p) * kd(alpha, beta) * kd(alpha_p, beta_p)
            + l(mu, alpha) * l(mu, beta) * kd(alpha, beta_p) * kd(beta, alpha_p);
    }
    let overlap: f64 = lambda.row(mu).iter().zip(lambda.row(nu)).map(|(a, b)| a * b).sum();
    let gaussian = l(mu, alpha) * l(nu, beta) * kd(alpha, alpha_p) * kd(beta, beta_p);
    let correction = l(mu, alpha) * l(nu, beta) * l(mu, alpha_p) * l(nu, beta_p) / overlap
        * (kd(alpha, beta) * kd(alpha_p, beta_p) + kd(alpha, beta_p) * kd(beta, alpha_p));
    gaussian - correction
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourPointEstimate {
    pub empirical: f64,
    pub std_err: f64,
    pub predicted: f64,
    /// (empirical - predicted) / std_err
    pub z: f64,
    pub n_members: usize,
}

/// Empirical mean, over members, of the four-point product averaged over
/// the index set, against the averaged prediction.
pub fn four_point_check(
    samples: &[Array2<f64>],
    lambda: &Array2<f64>,
    set: &[FourPointIndex],
) -> Result<FourPointEstimate> {
    if samples.len() < 2 || set.is_empty() {
        return invalid("four-point check needs >= 2 members and a nonempty index set");
    }
    let per_member: Vec<f64> = samples
        .iter()
        .map(|c| {
            set.iter()
                .map(|ix| c[[ix.mu, ix.alpha]] * c[[ix.nu, ix.beta]] * c[[ix.mu, ix.alpha_p]] * c[[ix.nu, ix.beta_p]])
                .sum::<f64>()
                / set.len() as f64
        })
        .collect();
    let (mean, se) = mean_and_se(&per_member);
    let predicted = set.iter().map(|ix| four_point_prediction(lambda, ix)).sum::<f64>() / set.len() as f64;
    Ok(FourPointEstimate {
        empirical: mean,
        std_err: se,
        predicted,
        z: if se > 0.0 { (mean - predicted) / se } else { f64::INFINITY },
        n_members: samples.len(),
    })
}

pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// A density that may be undefined outside its support.
pub trait BathDensity {
    fn density(&self, e: f64) -> Option<f64>;
}

impl BathDensity for KernelDensity {
    fn density(&self, e: f64) -> Option<f64> {
        let (lo, hi) = self.support();
        let h = self.bandwidth();
        if e < lo - 3.0 * h || e > hi + 3.0 * h {
            return None;
        }
        let d = self.eval(e);
        (d > 1e-300).then_some(d)
    }
}

/// Adapter for closed-form densities.
pub struct FnDensity<F: Fn(f64) -> Option<f64>>(pub F);

impl<F: Fn(f64) -> Option<f64>> BathDensity for FnDensity<F> {
    fn density(&self, e: f64) -> Option<f64> {
        (self.0)(e)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemDistribution {
    /// Quantum number s of each system level (position for oscillators).
    pub positions: Vec<f64>,
    pub energies: Vec<f64>,
    pub p: Vec<f64>,
    pub beta: f64,
    /// m in eps_s = m s^2 / 2, when the dispersion is quadratic.
    pub mass: Option<f64>,
}

impl SystemDistribution {
    pub fn new(positions: Vec<f64>, energies: Vec<f64>, p: Vec<f64>, beta: f64, mass: Option<f64>) -> Result<Self> {
        if positions.len() != p.len() || energies.len() != p.len() {
            return invalid("positions, energies and probabilities differ in length");
        }
        if p.iter().any(|x| !(*x >= 0.0)) {
            return invalid("probabilities must be non-negative");
        }
        let z: f64 = p.iter().sum();
        if !(z > 0.0) {
            return invalid("probabilities sum to zero");
        }
        let p = p.iter().map(|x| x / z).collect();
        Ok(Self { positions, energies, p, beta, mass })
    }

    pub fn variance(&self) -> f64 {
        let m: f64 = self.p.iter().zip(&self.positions).map(|(p, s)| p * s).sum();
        self.p.iter().zip(&self.positions).map(|(p, s)| p * (s - m).powi(2)).sum()
    }
}

/// m such that eps_s = m s^2 / 2 for every level, if one exists.
pub fn quadratic_mass(positions: &[f64], energies: &[f64]) -> Option<f64> {
    let mut m: Option<f64> = None;
    for (&s, &e) in positions.iter().zip(energies) {
        if s == 0.0 {
            if e.abs() > 1e-9 {
                return None;
            }
            continue;
        }
        let mi = 2.0 * e / (s * s);
        match m {
            None => m = Some(mi),
            Some(m0) if (m0 - mi).abs() <= 1e-9 * m0.abs().max(1.0) => {}
            _ => return None,
        }
    }
    m
}

/// Window for the log-slope fit: max(4 Gamma, 10 local bath spacings).
pub fn beta_window_width(gamma: f64, bath_density_at_e: f64) -> f64 {
    (4.0 * gamma).max(10.0 / bath_density_at_e)
}

/// d ln D_B / dE by least squares over 21 points spanning `width`.
pub fn log_slope(bath: &dyn BathDensity, center: f64, width: f64) -> Result<f64> {
    let n = 21;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let e = center - 0.5 * width + width * i as f64 / (n - 1) as f64;
        let d = bath.density(e).ok_or(Error::DensityUnavailable { energy: e })?;
        xs.push(e);
        ys.push(d.ln());
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// p(s) proportional to D_B(E - eps_s), with beta from the log-slope of D_B.
pub fn system_distribution(
    bath: &dyn BathDensity,
    positions: &[f64],
    system_energies: &[f64],
    e_alpha0: f64,
    beta_window: f64,
) -> Result<SystemDistribution> {
    if positions.len() != system_energies.len() || positions.is_empty() {
        return invalid("positions and system energies must be nonempty and equal in length");
    }
    let mut p = Vec::with_capacity(positions.len());
    for &eps in system_energies {
        let e = e_alpha0 - eps;
        p.push(bath.density(e).ok_or(Error::DensityUnavailable { energy: e })?);
    }
    let beta = log_slope(bath, e_alpha0, beta_window)?;
    SystemDistribution::new(
        positions.to_vec(),
        system_energies.to_vec(),
        p,
        beta,
        quadratic_mass(positions, system_energies),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EinsteinReport {
    pub sigma2_from_p: f64,
    pub sigma2_predicted: Option<f64>,
    /// |sigma^2 m beta - 1|
    pub relative_deviation: Option<f64>,
    pub beta: f64,
    pub mass: f64,
    /// Gaussian width 1/sqrt(m beta) between one level and a third of the
    /// largest |s|.
    pub in_regime: bool,
    pub flagged: bool,
}

pub fn einstein_check(dist: &SystemDistribution) -> Result<EinsteinReport> {
    let mass = dist
        .mass
        .ok_or_else(|| Error::InvalidParameter("Einstein check needs a quadratic dispersion".into()))?;
    let sigma2 = dist.variance();
    let mb = mass * dist.beta;
    let (pred, dev) = if mb > 0.0 { (Some(1.0 / mb), Some((sigma2 * mb - 1.0).abs())) } else { (None, None) };
    let s_max = dist.positions.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let in_regime = pred.is_some_and(|v| v.sqrt() >= 1.0 && 3.0 * v.sqrt() <= s_max);
    Ok(EinsteinReport {
        sigma2_from_p: sigma2,
        sigma2_predicted: pred,
        relative_deviation: dev,
        beta: dist.beta,
        mass,
        in_regime,
        flagged: !(mb > 0.0) || !in_regime,
    })
}

/// K(s_f | s_i; dt) = (delta - p_inf(s_f)) e^{-2 Gamma dt} + p_inf(s_f).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkovKernel {
    pub p_inf: Vec<f64>,
    pub gamma: f64,
}

impl MarkovKernel {
    pub fn new(p_inf: Vec<f64>, gamma: f64) -> Result<Self> {
        if p_inf.is_empty() || p_inf.iter().any(|p| !(*p >= 0.0)) {
            return invalid("p_inf must be a nonempty non-negative vector");
        }
        if (p_inf.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("p_inf must sum to 1");
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return invalid("gamma must be positive");
        }
        Ok(Self { p_inf, gamma })
    }

    pub fn decay(&self, dt: f64) -> f64 {
        (-2.0 * self.gamma * dt).exp()
    }

    /// Row-stochastic matrix: row s_i, column s_f.
    pub fn matrix(&self, dt: f64) -> Array2<f64> {
        let n = self.p_inf.len();
        let e = self.decay(dt);
        Array2::from_shape_fn((n, n), |(i, f)| (kd(i, f) - self.p_inf[f]) * e + self.p_inf[f])
    }

    /// p(t) = p0 K(t).
    pub fn propagate(&self, p0: &[f64], dt: f64) -> Vec<f64> {
        let e = self.decay(dt);
        let z: f64 = p0.iter().sum();
        p0.iter().zip(&self.p_inf).map(|(p, q)| e * p + (1.0 - e) * z * q).collect()
    }
}

pub fn markov_kernel(p_inf: &[f64], gamma: f64, dt: f64) -> Result<Array2<f64>> {
    Ok(MarkovKernel::new(p_inf.to_vec(), gamma)?.matrix(dt))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// || K1(t_m - t_i) K2(t_f - t_m) - K_ref(t_f - t_i) ||_max
pub fn chapman_kolmogorov_error(
    first: &MarkovKernel,
    second: &MarkovKernel,
    reference: &MarkovKernel,
    (ti, tm, tf): (f64, f64, f64),
) -> f64 {
    let composed = first.matrix(tm - ti).dot(&second.matrix(tf - tm));
    max_abs_diff(&composed, &reference.matrix(tf - ti))
}

pub fn chapman_kolmogorov_check(kernel: &MarkovKernel, triples: &[(f64, f64, f64)]) -> f64 {
    triples.iter().map(|&t| chapman_kolmogorov_error(kernel, kernel, kernel, t)).fold(0.0, f64::max)
}

/// Shannon entropy with 0 ln 0 = 0.
pub fn gibbs_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Smallest finite difference S(t_{k+1}) - S(t_k).
    pub min_increment: f64,
    /// All increments >= -1e-12.
    pub non_decreasing: bool,
}

pub fn predicted_entropy_curve(p0: &[f64], p_inf: &[f64], gamma: f64, times: &[f64]) -> Result<EntropyCurve> {
    if p0.len() != p_inf.len() {
        return invalid("p0 and p_inf differ in length");
    }
    let k = MarkovKernel::new(p_inf.to_vec(), gamma)?;
    let entropy: Vec<f64> = times.iter().map(|&t| gibbs_entropy(&k.propagate(p0, t))).collect();
    let min_increment = entropy.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    Ok(EntropyCurve {
        times: times.to_vec(),
        non_decreasing: min_increment >= -1e-12,
        entropy,
        min_increment,
    })
}

/// Starting from certainty in outcome `s0`, the interpolated entropy is
/// monotone in time exactly when p_inf(s0) >= exp(-S(p_inf)).
pub fn entropy_monotone_from(p_inf: &[f64], s0: usize) -> bool {
    p_inf[s0] >= (-gibbs_entropy(p_inf)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorentzian_from_coupling() {
        let env = LorentzianEnvelope::from_coupling(0.1, 100, 0.01, 0.0).unwrap();
        assert!((env.gamma - PI * 0.01 / 1.0).abs() < 1e-15);
        assert!((env.value(0.0) - 0.01 / (PI * env.gamma)).abs() < 1e-15);
        assert!(LorentzianEnvelope::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn microcanonical_limits() {
        let e: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let env = LorentzianEnvelope::new(3.0, 1.0, 25.0).unwrap();
        let w = MicrocanonicalWeights::lorentzian(&env, &e).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((microcanonical_average(&vec![2.5; 50], &w).unwrap() - 2.5).abs() < 1e-12);
        let narrow = MicrocanonicalWeights::lorentzian(&LorentzianEnvelope::new(1e-9, 1.0, 25.0).unwrap(), &e).unwrap();
        assert!((microcanonical_average(&e, &narrow).unwrap() - 25.0).abs() < 1e-6);
        let d = MicrocanonicalWeights::delta(&e, 7).unwrap();
        assert_eq!(microcanonical_average(&e, &d).unwrap(), 7.0);
        assert!(microcanonical_average(&e[..3], &d).is_err());
    }

    #[test]
    fn kernel_special_cases() {
        let p = vec![0.1, 0.2, 0.3, 0.4];
        let k = MarkovKernel::new(p.clone(), 0.5).unwrap();
        assert_eq!(k.matrix(0.0), Array2::eye(4));
        // 2 Gamma dt = ln 2 halves the memory term; Gamma = 1 quarters it.
        assert!((k.decay(2f64.ln()) - 0.5).abs() < 1e-15);
        let k1 = MarkovKernel::new(p.clone(), 1.0).unwrap();
        let m = k1.matrix(2f64.ln());
        for i in 0..4 {
            for f in 0..4 {
                let want = 0.25 * kd(i, f) + 0.75 * p[f];
                assert!((m[[i, f]] - want).abs() < 1e-15);
            }
        }
        let far = k.matrix(1e3);
        for row in far.rows() {
            for (a, b) in row.iter().zip(&p) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!(MarkovKernel::new(vec![0.5, 0.6], 1.0).is_err());
        assert!(MarkovKernel::new(vec![0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn perturbed_leg_breaks_composition() {
        let p = vec![0.2, 0.3, 0.5];
        let k = MarkovKernel::new(p.clone(), 0.4).unwrap();
        let k2 = MarkovKernel::new(p, 0.44).unwrap();
        assert!(chapman_kolmogorov_error(&k, &k, &k, (0.0, 1.0, 3.0)) < 1e-15);
        assert!(chapman_kolmogorov_error(&k, &k2, &k, (0.0, 1.0, 3.0)) > 1e-3);
    }

    #[test]
    fn entropy_endpoints() {
        let p_inf = vec![1.0 / 7.0; 7];
        let mut p0 = vec![0.0; 7];
        p0[0] = 1.0;
        let c = predicted_entropy_curve(&p0, &p_inf, 0.3, &[0.0, 1.0, 100.0]).unwrap();
        assert_eq!(c.entropy[0], 0.0);
        assert!((c.entropy[2] - 7f64.ln()).abs() < 1e-9);
        assert!(c.non_decreasing);
        let flat = predicted_entropy_curve(&p_inf, &p_inf, 0.3, &[0.0, 1.0, 2.0]).unwrap();
        assert!(flat.entropy.iter().all(|s| (s - 7f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn entropy_can_overshoot_from_unlikely_outcome() {
        // Start in an outcome that is rare at equilibrium: the entropy
        // peaks before settling, so the curve is not monotone.
        let p_inf = vec![0.9, 0.05, 0.05];
        assert!(!entropy_monotone_from(&p_inf, 1));
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let c = predicted_entropy_curve(&[0.0, 1.0, 0.0], &p_inf, 0.5, &times).unwrap();
        assert!(!c.non_decreasing);
        assert!(entropy_monotone_from(&p_inf, 0));
        let c = predicted_entropy_curve(&[1.0, 0.0, 0.0], &p_inf, 0.5, &times).unwrap();
        assert!(c.non_decreasing);
    }

    #[test]
    fn quadratic_mass_detection() {
        let s: Vec<f64> = (-3..=3).map(|x| x as f64).collect();
        let e: Vec<f64> = s.iter().map(|x| x * x).collect();
        assert_eq!(quadratic_mass(&s, &e), Some(2.0));
        let e2: Vec<f64> = s.iter().map(|x| x.abs()).collect();
        assert_eq!(quadratic_mass(&s, &e2), None);
    }

    #[test]
    fn constant_bath_gives_equal_probabilities() {
        let bath = FnDensity(|_| Some(3.0));
        let s: Vec<f64> = (-3..=3).map(|x| x as f64).collect();
        let e: Vec<f64> = s.iter().map(|x| x * x).collect();
        let d = system_distribution(&bath, &s, &e, 10.0, 2.0).unwrap();
        assert!(d.p.iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-15));
        assert!(d.beta.abs() < 1e-12);
        let r = einstein_check(&d).unwrap();
        assert!((r.sigma2_from_p - 4.0).abs() < 1e-12); // S(S+1)/3 at S = 3
        assert!(r.flagged && r.sigma2_predicted.is_none());
    }

    #[test]
    fn exponential_bath_gives_gaussian() {
        let bath = FnDensity(|e: f64| Some((0.5 * e).exp()));
        let s: Vec<f64> = (-5..=5).map(|x| x as f64).collect();
        let e: Vec<f64> = s.iter().map(|x| 0.5 * x * x).collect();
        let d = system_distribution(&bath, &s, &e, 3.0, 2.0).unwrap();
        assert!((d.beta - 0.5).abs() < 1e-10);
        let z: f64 = s.iter().map(|x| (-0.25 * x * x).exp()).sum();
        for (p, x) in d.p.iter().zip(&s) {
            assert!((p - (-0.25 * x * x).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_bath_density_refused() {
        let bath = FnDensity(|e: f64| if e > 0.0 { Some(1.0) } else { None });
        let r = system_distribution(&bath, &[0.0, 1.0], &[0.0, 5.0], 2.0, 0.5);
        assert!(matches!(r, Err(Error::DensityUnavailable { .. })));
    }

    #[test]
    fn gaussian_einstein_exact() {
        let (m, beta) = (2.0, 0.7);
        let s: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 0.01).collect();
        let e: Vec<f64> = s.iter().map(|x| 0.5 * m * x * x).collect();
        let p: Vec<f64> = e.iter().map(|x| (-beta * x).exp()).collect();
        let d = SystemDistribution::new(s, e, p, beta, Some(m)).unwrap();
        let r = einstein_check(&d).unwrap();
        assert!((r.sigma2_from_p - 1.0 / (m * beta)).abs() < 1e-6);
        assert!(r.relative_deviation.unwrap() < 1e-6);
    }

    #[test]
    fn delta_envelope_gives_signed_identity() {
        let ens = ChaoticEnsemble::new(Array2::eye(6)).unwrap();
        let c = ens.sample(3, 0).unwrap();
        for ((i, j), x) in c.indexed_iter() {
            if i == j {
                assert!((x.abs() - 1.0).abs() < 1e-12);
            } else {
                assert!(x.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_many_states_refused() {
        assert!(ChaoticEnsemble::flat(5, 4).is_err());
        assert!(ChaoticEnsemble::new(Array2::zeros((2, 4))).is_err());
    }

    #[test]
    fn sampled_rows_orthonormal() {
        let ens = ChaoticEnsemble::lorentzian(60, 4.0, 20..40).unwrap();
        let c = ens.sample(11, 5).unwrap();
        let g = c.dot(&c.t());
        for ((i, j), x) in g.indexed_iter() {
            assert!((x - kd(i, j)).abs() < 1e-12);
        }
    }
}
