//! Overdamped Ornstein-Uhlenbeck particle in a harmonic trap, optionally
//! with a constant random drift per realization ("shaken trap").

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    pub k: f64,
    pub gamma_friction: f64,
    pub diffusion: f64,
    #[serde(default)]
    pub x0: f64,
    pub dt_step: f64,
    pub t_final: f64,
}

impl OuParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.k, self.gamma_friction, self.dt_step, self.t_final];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return invalid("k, gamma_friction, dt_step and t_final must be positive");
        }
        if !(self.diffusion >= 0.0) || !self.diffusion.is_finite() || !self.x0.is_finite() {
            return invalid("diffusion must be non-negative and x0 finite");
        }
        if self.dt_step >= self.gamma_friction / (5.0 * self.k) {
            return invalid(format!(
                "dt_step {} violates the stability bound gamma/(5k) = {}",
                self.dt_step,
                self.gamma_friction / (5.0 * self.k)
            ));
        }
        Ok(())
    }

    /// Relaxation rate k/gamma.
    pub fn rate(&self) -> f64 {
        self.k / self.gamma_friction
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt_step).round() as usize
    }

    pub fn stationary_variance(&self) -> f64 {
        self.diffusion * self.gamma_friction / self.k
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        self.x0 * (-self.rate() * t).exp()
    }

    /// Variance across noise realizations at time t, deterministic x0.
    pub fn variance_at(&self, t: f64) -> f64 {
        self.stationary_variance() * (1.0 - (-2.0 * self.rate() * t).exp())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuSeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub n_paths: usize,
}

impl OuSeries {
    /// Average of var(t) over recorded times t >= t_from.
    pub fn late_variance(&self, t_from: f64) -> Option<f64> {
        let v: Vec<f64> = self.times.iter().zip(&self.var).filter(|(t, _)| **t >= t_from).map(|(_, v)| *v).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuScheme {
    EulerMaruyama,
    /// Sampling of the exact Gaussian transition density.
    Exact,
}

struct Accum {
    sum: Vec<f64>,
    sum2: Vec<f64>,
}

/// Ensemble mean and variance of x(t), recorded every `record_every`
/// integrator steps (t = 0 included). Path i uses stream (seed, i).
pub fn simulate_ou(params: &OuParams, n_paths: usize, seed: u64, record_every: usize, scheme: OuScheme) -> Result<OuSeries> {
    params.validate()?;
    if n_paths < 2 || record_every == 0 {
        return invalid("need at least 2 paths and record_every >= 1");
    }
    let n_steps = params.n_steps();
    let n_rec = n_steps / record_every + 1;
    let mut acc = Accum { sum: vec![0.0; n_rec], sum2: vec![0.0; n_rec] };
    let step = Stepper::new(params, scheme);
    for p in 0..n_paths as u64 {
        let mut rng = stream_rng(seed, p);
        let mut x = params.x0;
        acc.sum[0] += x;
        acc.sum2[0] += x * x;
        for i in 1..=n_steps {
            x = step.advance(x, 0.0, rng.sample(StandardNormal));
            if i % record_every == 0 {
                let r = i / record_every;
                acc.sum[r] += x;
                acc.sum2[r] += x * x;
            }
        }
    }
    let n = n_paths as f64;
    let times = (0..n_rec).map(|r| (r * record_every) as f64 * params.dt_step).collect();
    let mean: Vec<f64> = acc.sum.iter().map(|s| s / n).collect();
    let var = acc.sum2.iter().zip(&mean).map(|(s2, m)| (s2 / n - m * m) * n / (n - 1.0)).collect();
    Ok(OuSeries { times, mean, var, n_paths })
}

struct Stepper {
    decay: f64,
    drift_gain: f64,
    noise: f64,
}

impl Stepper {
    fn new(params: &OuParams, scheme: OuScheme) -> Self {
        let (r, h, d) = (params.rate(), params.dt_step, params.diffusion);
        match scheme {
            OuScheme::EulerMaruyama => Self { decay: 1.0 - r * h, drift_gain: h, noise: (2.0 * d * h).sqrt() },
            OuScheme::Exact => {
                let e = (-r * h).exp();
                Self {
                    decay: e,
                    drift_gain: (1.0 - e) / r,
                    noise: (d / r * (1.0 - e * e)).sqrt(),
                }
            }
        }
    }

    /// dx = (-(k/gamma) x + v) dt + sqrt(2D) dW
    fn advance(&self, x: f64, v: f64, z: f64) -> f64 {
        self.decay * x + self.drift_gain * v + self.noise * z
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShakenReport {
    pub drifts: Vec<f64>,
    /// Per-path time average of x over [burn_in, t_final].
    pub path_means: Vec<f64>,
    pub delta_x2: f64,
    /// Standard error of delta_x2 for Gaussian path means.
    pub delta_x2_se: f64,
    /// v_std^2 gamma^2 / k^2.
    pub predicted: f64,
    /// Residual variance of a finite time average of the unshaken
    /// process, about 2 sigma_x^2 / (rate T).
    pub averaging_noise: f64,
    pub burn_in: f64,
}

pub fn simulate_shaken_ou(
    params: &OuParams,
    v_std: f64,
    n_paths: usize,
    seed: u64,
    burn_in: f64,
    scheme: OuScheme,
) -> Result<ShakenReport> {
    params.validate()?;
    if !(v_std >= 0.0) || !v_std.is_finite() {
        return invalid("v_std must be non-negative");
    }
    if n_paths < 2 || !(burn_in >= 0.0) || burn_in >= params.t_final {
        return invalid("need at least 2 paths and 0 <= burn_in < t_final");
    }
    let n_steps = params.n_steps();
    let first = (burn_in / params.dt_step).ceil() as usize;
    let step = Stepper::new(params, scheme);
    let mut drifts = Vec::with_capacity(n_paths);
    let mut path_means = Vec::with_capacity(n_paths);
    for p in 0..n_paths as u64 {
        let mut rng = stream_rng(seed, p);
        let v = v_std * rng.sample::<f64, _>(StandardNormal);
        let mut x = params.x0;
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 1..=n_steps {
            x = step.advance(x, v, rng.sample(StandardNormal));
            if i >= first {
                sum += x;
                count += 1;
            }
        }
        drifts.push(v);
        path_means.push(sum / count as f64);
    }
    let n = n_paths as f64;
    let m = path_means.iter().sum::<f64>() / n;
    let delta_x2 = path_means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let t_avg = params.t_final - burn_in;
    Ok(ShakenReport {
        drifts,
        path_means,
        delta_x2,
        delta_x2_se: delta_x2 * (2.0 / (n - 1.0)).sqrt(),
        predicted: (v_std * params.gamma_friction / params.k).powi(2),
        averaging_noise: 2.0 * params.stationary_variance() / (params.rate() * t_avg),
        burn_in,
    })
}

/// Classical trap matched to a quantum run: unit stiffness and mass,
/// relaxation rate k/gamma = Gamma and temperature T = sigma^2, so that
/// the equipartition variance reproduces sigma^2.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantumMapping {
    pub k: f64,
    pub gamma_friction: f64,
    pub temperature: f64,
    pub diffusion: f64,
    /// v^2 = sigma^2 Gamma / (4 pi D(E)).
    pub v2: f64,
}

impl QuantumMapping {
    pub fn new(sigma2: f64, gamma: f64, dos: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !(gamma > 0.0) || !(dos > 0.0) {
            return invalid("sigma2, gamma and dos must be positive");
        }
        let k = 1.0;
        let gamma_friction = k / gamma;
        Ok(Self {
            k,
            gamma_friction,
            temperature: sigma2,
            diffusion: sigma2 / gamma_friction,
            v2: sigma2 * gamma / (4.0 * std::f64::consts::PI * dos),
        })
    }

    pub fn stationary_variance(&self) -> f64 {
        self.diffusion * self.gamma_friction / self.k
    }

    /// v^2 gamma^2 / k^2, to compare with the quantum delta^2.
    pub fn predicted_delta_x2(&self) -> f64 {
        self.v2 * (self.gamma_friction / self.k).powi(2)
    }

    pub fn params(&self, dt_step: f64, t_final: f64) -> OuParams {
        OuParams {
            k: self.k,
            gamma_friction: self.gamma_friction,
            diffusion: self.diffusion,
            x0: 0.0,
            dt_step,
            t_final,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> OuParams {
        OuParams { k: 1.0, gamma_friction: 1.0, diffusion: 0.5, x0: 1.0, dt_step: 0.01, t_final: 5.0 }
    }

    #[test]
    fn stability_bound_refused() {
        let p = OuParams { dt_step: 0.3, ..base() };
        assert!(p.validate().is_err());
        assert!(simulate_ou(&p, 10, 0, 1, OuScheme::EulerMaruyama).is_err());
    }

    #[test]
    fn noiseless_relaxation() {
        let p = OuParams { diffusion: 0.0, ..base() };
        let s = simulate_ou(&p, 2, 0, 10, OuScheme::Exact).unwrap();
        for (t, m) in s.times.iter().zip(&s.mean) {
            assert!((m - p.mean_at(*t)).abs() < 1e-12);
        }
        let e = simulate_ou(&p, 2, 0, 10, OuScheme::EulerMaruyama).unwrap();
        let last = *e.mean.last().unwrap();
        assert!((last - p.mean_at(5.0)).abs() / p.mean_at(5.0) < 0.05);
    }

    #[test]
    fn exact_sampler_variance_curve() {
        let p = base();
        let s = simulate_ou(&p, 4000, 1, 25, OuScheme::Exact).unwrap();
        for (t, v) in s.times.iter().zip(&s.var).skip(1) {
            let want = p.variance_at(*t);
            let se = want * (2.0 / 3999.0f64).sqrt();
            assert!((v - want).abs() < 4.0 * se, "t={t} v={v} want={want}");
        }
    }

    #[test]
    fn mapping_reproduces_quantum_ratio() {
        let (sigma2, gamma, dos) = (3.9, 0.07, 310.0);
        let m = QuantumMapping::new(sigma2, gamma, dos).unwrap();
        let delta2 = sigma2 / (4.0 * std::f64::consts::PI * gamma * dos);
        assert!((m.predicted_delta_x2() - delta2).abs() < 1e-12 * delta2);
        assert!((m.stationary_variance() - sigma2).abs() < 1e-12);
    }

    #[test]
    fn unshaken_trap_has_only_averaging_noise() {
        let p = OuParams { diffusion: 0.05, x0: 0.0, t_final: 50.0, ..base() };
        let r = simulate_shaken_ou(&p, 0.0, 400, 4, 5.0, OuScheme::Exact).unwrap();
        assert!(r.delta_x2 < 3.0 * r.averaging_noise, "{} {}", r.delta_x2, r.averaging_noise);
        assert_eq!(r.predicted, 0.0);
    }
}
