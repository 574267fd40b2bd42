//! Projective-measurement trajectories: exact evolution for a fixed
//! interval, sampling of an outcome, collapse onto its eigenspace.

use ndarray::{s, Array2, ArrayView1, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::check_normalized;
use crate::error::{invalid, Error, Result};
use crate::fit::DecayFit;
use crate::model::Observable;
use crate::rmt::{gibbs_entropy, MarkovKernel};
use crate::seed::derive_seed;
use crate::spectral::Spectrum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub dt: f64,
    /// Outcome index before the first evolution, if the initial state
    /// lies inside one eigenspace.
    pub initial_outcome: Option<usize>,
    pub initial_energy: f64,
    /// Outcome indices s_1..s_N (into the observable's ascending outcomes).
    pub outcomes: Vec<usize>,
    /// <H> right after each collapse.
    pub energies: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn n_meas(&self) -> usize {
        self.outcomes.len()
    }
}

/// Eigenspace-restricted unitary blocks for one interval.
pub struct Propagator {
    pub dt: f64,
    /// Per outcome k: [Re U | -Im U] restricted to the columns of sector k,
    /// with U = exp(-i H dt) in the measurement basis.
    blocks: Vec<Array2<f64>>,
}

/// Shared, read-only data for simulating many trajectories.
pub struct TrajectoryEngine<'a> {
    spectrum: &'a Spectrum,
    outcomes: Vec<f64>,
    /// Row c, column mu: measurement-basis component of eigenstate mu.
    meas: Array2<f64>,
    sectors: Vec<Vec<usize>>,
    sector_h: Vec<Array2<f64>>,
    rotation: Option<Array2<f64>>,
}

struct Live {
    k: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl<'a> TrajectoryEngine<'a> {
    pub fn new(spectrum: &'a Spectrum, obs: &'a Observable) -> Result<Self> {
        if obs.dim() != spectrum.dim() {
            return invalid("observable and spectrum dimensions differ");
        }
        let ct = spectrum.coefficients.t();
        let meas = match &obs.rotation {
            Some(r) => r.dot(&ct),
            None => ct.to_owned(),
        };
        let sectors = obs.sectors();
        let sector_h = sectors
            .iter()
            .map(|sec| {
                let rows = meas.select(Axis(0), sec);
                let mut scaled = rows.clone();
                for (mut col, e) in scaled.axis_iter_mut(Axis(1)).zip(&spectrum.energies) {
                    col *= *e;
                }
                scaled.dot(&rows.t())
            })
            .collect();
        Ok(Self {
            spectrum,
            outcomes: obs.outcomes.clone(),
            meas,
            sectors,
            sector_h,
            rotation: obs.rotation.as_deref().cloned(),
        })
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn propagator(&self, dt: f64) -> Result<Propagator> {
        if !(dt > 0.0) || !dt.is_finite() {
            return invalid("measurement interval must be positive");
        }
        let d = self.spectrum.dim();
        let mut stacked = Array2::zeros((2 * d, d));
        for (mu, e) in self.spectrum.energies.iter().enumerate() {
            let (sn, cs) = (e * dt).sin_cos();
            let col = self.meas.column(mu);
            stacked.slice_mut(s![..d, mu]).assign(&(&col * cs));
            stacked.slice_mut(s![d.., mu]).assign(&(&col * sn));
        }
        let blocks = self
            .sectors
            .iter()
            .map(|sec| {
                let rows = self.meas.select(Axis(0), sec);
                // [C cos C_k^T ; C sin C_k^T] -> d x 2 r_k as [Ur_k | Ui_k]
                let prod = stacked.dot(&rows.t());
                let r = sec.len();
                let mut out = Array2::zeros((d, 2 * r));
                out.slice_mut(s![.., ..r]).assign(&prod.slice(s![..d, ..]));
                out.slice_mut(s![.., r..]).assign(&prod.slice(s![d.., ..]));
                out
            })
            .collect();
        Ok(Propagator { dt, blocks })
    }

    fn sector_probabilities(&self, re: ArrayView1<f64>, im: ArrayView1<f64>) -> Vec<f64> {
        self.sectors.iter().map(|sec| sec.iter().map(|&c| re[c] * re[c] + im[c] * im[c]).sum()).collect()
    }

    fn sector_energy(&self, k: usize, re: &[f64], im: &[f64]) -> f64 {
        let h = &self.sector_h[k];
        let r = ArrayView1::from(re);
        let i = ArrayView1::from(im);
        r.dot(&h.dot(&r)) + i.dot(&h.dot(&i))
    }

    /// Outcome probabilities ||P_s psi||^2 for a free-basis state.
    pub fn initial_distribution(&self, psi0: &[f64]) -> Vec<f64> {
        let b = match &self.rotation {
            Some(r) => r.dot(&ArrayView1::from(psi0)).to_vec(),
            None => psi0.to_vec(),
        };
        let zero = vec![0.0; b.len()];
        self.sector_probabilities(ArrayView1::from(&b), ArrayView1::from(&zero))
    }

    /// Long-time outcome distribution of the unmonitored state,
    /// p(s) = sum_mu |a_mu|^2 <mu|P_s|mu>.
    pub fn diagonal_ensemble(&self, psi0: &[f64]) -> Vec<f64> {
        let a = self.spectrum.overlaps(psi0);
        self.sectors
            .iter()
            .map(|sec| {
                sec.iter()
                    .map(|&c| {
                        let row = self.meas.row(c);
                        a.iter().zip(row.iter()).map(|(x, m)| x * x * m * m).sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }

    /// Simulate one trajectory per seed. Each trajectory consumes exactly
    /// one uniform draw per measurement from its own stream.
    pub fn run_seeds(&self, psi0: &[f64], prop: &Propagator, n_meas: usize, seeds: &[u64]) -> Result<Vec<TrajectoryRecord>> {
        let d = self.spectrum.dim();
        if psi0.len() != d {
            return invalid("initial state has the wrong dimension");
        }
        check_normalized(psi0)?;
        if n_meas == 0 {
            return invalid("n_meas must be at least 1");
        }
        let a = self.spectrum.overlaps(psi0);
        let initial_energy: f64 = a.iter().zip(&self.spectrum.energies).map(|(x, e)| x * x * e).sum();
        let p0 = self.initial_distribution(psi0);
        let initial_outcome = p0.iter().position(|p| (p - 1.0).abs() < 1e-12);

        // The first interval is common to all trajectories.
        let (sn, cs): (Vec<f64>, Vec<f64>) =
            self.spectrum.energies.iter().map(|e| (e * prop.dt).sin_cos()).unzip();
        let ac: Vec<f64> = a.iter().zip(&cs).map(|(x, c)| x * c).collect();
        let as_: Vec<f64> = a.iter().zip(&sn).map(|(x, s)| -x * s).collect();
        let re0 = self.meas.dot(&ArrayView1::from(&ac));
        let im0 = self.meas.dot(&ArrayView1::from(&as_));

        let n = seeds.len();
        let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
        let mut records: Vec<TrajectoryRecord> = seeds
            .iter()
            .map(|&seed| TrajectoryRecord {
                seed,
                dt: prop.dt,
                initial_outcome,
                initial_energy,
                outcomes: Vec::with_capacity(n_meas),
                energies: Vec::with_capacity(n_meas),
            })
            .collect();

        let probs0 = self.sector_probabilities(re0.view(), im0.view());
        let mut live: Vec<Live> = Vec::with_capacity(n);
        for i in 0..n {
            live.push(self.measure(0, re0.view(), im0.view(), &probs0, &mut rngs[i])?);
        }
        self.record(&live, &mut records);

        for step in 1..n_meas {
            let mut next: Vec<Option<Live>> = (0..n).map(|_| None).collect();
            for k in 0..self.sectors.len() {
                let members: Vec<usize> = (0..n).filter(|&i| live[i].k == k).collect();
                if members.is_empty() {
                    continue;
                }
                let r = self.sectors[k].len();
                let m = members.len();
                let mut rhs = Array2::zeros((2 * r, 2 * m));
                for (j, &i) in members.iter().enumerate() {
                    for c in 0..r {
                        let (x, y) = (live[i].re[c], live[i].im[c]);
                        rhs[[c, j]] = x;
                        rhs[[r + c, j]] = y;
                        rhs[[c, m + j]] = y;
                        rhs[[r + c, m + j]] = -x;
                    }
                }
                let out = prop.blocks[k].dot(&rhs);
                for (j, &i) in members.iter().enumerate() {
                    let re = out.column(j);
                    let im = out.column(m + j);
                    let probs = self.sector_probabilities(re, im);
                    next[i] = Some(self.measure(step, re, im, &probs, &mut rngs[i])?);
                }
            }
            live = next.into_iter().map(|x| x.expect("every trajectory advanced")).collect();
            self.record(&live, &mut records);
        }
        Ok(records)
    }

    fn record(&self, live: &[Live], records: &mut [TrajectoryRecord]) {
        for (l, rec) in live.iter().zip(records.iter_mut()) {
            rec.outcomes.push(l.k);
            rec.energies.push(self.sector_energy(l.k, &l.re, &l.im));
        }
    }

    fn measure(
        &self,
        step: usize,
        re: ArrayView1<f64>,
        im: ArrayView1<f64>,
        probs: &[f64],
        rng: &mut impl RngCore,
    ) -> Result<Live> {
        let total: f64 = probs.iter().sum();
        if probs.iter().all(|p| *p < 1e-14) {
            return Err(Error::ProbabilityLoss { step, total });
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::ProbabilityLeak { step, total });
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut k = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        // Guard against landing on a numerically empty trailing sector.
        while probs[k] <= 0.0 && k > 0 {
            k -= 1;
        }
        let norm = probs[k].sqrt();
        let sec = &self.sectors[k];
        Ok(Live {
            k,
            re: sec.iter().map(|&c| re[c] / norm).collect(),
            im: sec.iter().map(|&c| im[c] / norm).collect(),
        })
    }

    /// Trajectories with seeds derived from (base_seed, index).
    pub fn run_ensemble(&self, psi0: &[f64], dt: f64, n_meas: usize, n_real: usize, base_seed: u64) -> Result<Vec<TrajectoryRecord>> {
        let prop = self.propagator(dt)?;
        let seeds: Vec<u64> = (0..n_real as u64).map(|i| derive_seed(base_seed, i)).collect();
        self.run_seeds(psi0, &prop, n_meas, &seeds)
    }
}

pub fn run_trajectory(
    spectrum: &Spectrum,
    psi0: &[f64],
    obs: &Observable,
    dt: f64,
    n_meas: usize,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let engine = TrajectoryEngine::new(spectrum, obs)?;
    let prop = engine.propagator(dt)?;
    Ok(engine.run_seeds(psi0, &prop, n_meas, &[seed])?.remove(0))
}

/// Outcome chains drawn directly from a Markov kernel.
pub fn simulate_kernel_chain(
    kernel: &MarkovKernel,
    s0: usize,
    dt: f64,
    n_meas: usize,
    n_real: usize,
    base_seed: u64,
) -> Result<Vec<TrajectoryRecord>> {
    if s0 >= kernel.p_inf.len() {
        return invalid("initial outcome out of range");
    }
    let k = kernel.matrix(dt);
    let mut out = Vec::with_capacity(n_real);
    for i in 0..n_real as u64 {
        let seed = derive_seed(base_seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = s0;
        let mut outcomes = Vec::with_capacity(n_meas);
        for _ in 0..n_meas {
            let u: f64 = rng.random();
            let row = k.row(s);
            let mut acc = 0.0;
            let mut next = row.len() - 1;
            for (j, p) in row.iter().enumerate() {
                acc += p.max(0.0);
                if u < acc {
                    next = j;
                    break;
                }
            }
            s = next;
            outcomes.push(s);
        }
        out.push(TrajectoryRecord {
            seed,
            dt,
            initial_outcome: Some(s0),
            initial_energy: 0.0,
            energies: vec![0.0; n_meas],
            outcomes,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub dt: f64,
    pub n_real: usize,
    pub outcomes: Vec<f64>,
    /// t_j = j dt for j = 0..=N_m; j = 0 holds exact initial values.
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Row j: outcome frequencies at t_j.
    pub empirical_p: Vec<Vec<f64>>,
    pub entropy: Vec<f64>,
    pub entropy_se: Vec<f64>,
    pub energy_mean: Vec<f64>,
    pub energy_std: Vec<f64>,
    /// E_max - E_min of the spectrum.
    pub energy_range: f64,
    /// Pooled lag-dt transition counts between consecutive measurements.
    pub transitions: Vec<Vec<u64>>,
    pub gamma_qj: Option<DecayFit>,
}

impl EnsembleStats {
    pub fn from_records(
        records: &[TrajectoryRecord],
        outcomes: &[f64],
        initial_distribution: &[f64],
        energy_range: f64,
    ) -> Result<Self> {
        if records.len() < 2 {
            return invalid("ensemble statistics need at least 2 records");
        }
        let n_meas = records[0].n_meas();
        if records.iter().any(|r| r.n_meas() != n_meas) {
            return invalid("records have different lengths");
        }
        let n = records.len();
        let nf = n as f64;
        let k = outcomes.len();
        let dt = records[0].dt;
        let mut times = vec![0.0];
        let mut mean = vec![initial_distribution.iter().zip(outcomes).map(|(p, o)| p * o).sum::<f64>()];
        let mut std_err = vec![0.0];
        let mut empirical_p = vec![initial_distribution.to_vec()];
        let e0 = records.iter().map(|r| r.initial_energy).sum::<f64>() / nf;
        let mut energy_mean = vec![e0];
        let mut energy_std = vec![0.0];
        for j in 0..n_meas {
            times.push((j + 1) as f64 * dt);
            let vals: Vec<f64> = records.iter().map(|r| outcomes[r.outcomes[j]]).collect();
            let (m, se) = crate::rmt::mean_and_se(&vals);
            mean.push(m);
            std_err.push(se);
            let mut hist = vec![0.0; k];
            for r in records {
                hist[r.outcomes[j]] += 1.0 / nf;
            }
            empirical_p.push(hist);
            let es: Vec<f64> = records.iter().map(|r| r.energies[j]).collect();
            let em = es.iter().sum::<f64>() / nf;
            let ev = es.iter().map(|e| (e - em).powi(2)).sum::<f64>() / nf;
            energy_mean.push(em);
            energy_std.push(ev.sqrt());
        }
        let mut entropy = Vec::with_capacity(empirical_p.len());
        let mut entropy_se = Vec::with_capacity(empirical_p.len());
        for (j, p) in empirical_p.iter().enumerate() {
            let s = gibbs_entropy(p);
            entropy.push(s);
            if j == 0 {
                entropy_se.push(0.0);
            } else {
                // delta method: Var(-ln p_s) over the empirical distribution
                let m2: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln() * x.ln()).sum();
                entropy_se.push(((m2 - s * s).max(0.0) / nf).sqrt());
            }
        }
        let mut transitions = vec![vec![0u64; k]; k];
        for r in records {
            for w in r.outcomes.windows(2) {
                transitions[w[0]][w[1]] += 1;
            }
        }
        Ok(Self {
            dt,
            n_real: n,
            outcomes: outcomes.to_vec(),
            times,
            mean,
            std_err,
            empirical_p,
            entropy,
            entropy_se,
            energy_mean,
            energy_std,
            energy_range,
            transitions,
            gamma_qj: None,
        })
    }

    /// Fit the decay rate of the mean outcome. With `reference` =
    /// (plateau, delta2) the window follows the dynamics rule.
    pub fn fit_gamma(&mut self, reference: Option<(f64, f64)>) -> Result<&DecayFit> {
        let series = crate::dynamics::EvolutionSeries {
            times: self.times.clone(),
            values: self.mean.clone(),
            observable: String::new(),
            initial_state: None,
        };
        let fit = match reference {
            Some((plateau, delta2)) => crate::dynamics::fit_decay_auto(&series, plateau, delta2)?,
            None => crate::dynamics::fit_decay(&series, None)?,
        };
        self.gamma_qj = Some(fit);
        Ok(self.gamma_qj.as_ref().expect("just set"))
    }

    /// Time average of sigma_E(t)/Delta E over the measured steps.
    pub fn relative_energy_spread(&self) -> f64 {
        let s = &self.energy_std[1..];
        s.iter().sum::<f64>() / s.len() as f64 / self.energy_range
    }

    /// Standard deviation over time of the ensemble-mean energy.
    pub fn energy_time_fluctuation(&self) -> f64 {
        let e = &self.energy_mean[1..];
        let m = e.iter().sum::<f64>() / e.len() as f64;
        (e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / e.len() as f64).sqrt()
    }
}

/// Entropy of the outcome histogram of one record, ignoring measurements
/// before `discard_time`.
pub fn single_trajectory_entropy(record: &TrajectoryRecord, n_outcomes: usize, discard_time: f64) -> Option<f64> {
    let mut hist = vec![0.0; n_outcomes];
    let mut n = 0.0;
    for (j, &k) in record.outcomes.iter().enumerate() {
        if (j + 1) as f64 * record.dt >= discard_time {
            hist[k] += 1.0;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return None;
    }
    for h in &mut hist {
        *h /= n;
    }
    Some(gibbs_entropy(&hist))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryCheck {
    pub times: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub max_abs_z: f64,
}

/// z-scores of the ensemble mean against unmonitored <O(t_j)>, j >= 1.
pub fn consistent_histories_check(stats: &EnsembleStats, unmonitored: &[f64]) -> Result<HistoryCheck> {
    if unmonitored.len() != stats.times.len() {
        return invalid("unmonitored series must be sampled at the ensemble times");
    }
    let mut times = Vec::new();
    let mut z_scores = Vec::new();
    for j in 1..stats.times.len() {
        let diff = stats.mean[j] - unmonitored[j];
        let z = if stats.std_err[j] > 0.0 {
            diff / stats.std_err[j]
        } else if diff.abs() < 1e-9 {
            0.0
        } else {
            f64::INFINITY
        };
        times.push(stats.times[j]);
        z_scores.push(z);
    }
    let max_abs_z = z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    Ok(HistoryCheck { times, z_scores, max_abs_z })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionCheck {
    pub predicted: Vec<Vec<f64>>,
    pub empirical: Vec<Vec<f64>>,
    pub row_counts: Vec<u64>,
    /// Per entry (count - n K) / sqrt(n K (1 - K)).
    pub z: Vec<Vec<f64>>,
    pub max_abs_z: f64,
}

pub fn transition_check(counts: &[Vec<u64>], kernel: &Array2<f64>) -> TransitionCheck {
    let k = counts.len();
    let mut predicted = vec![vec![0.0; k]; k];
    let mut empirical = vec![vec![0.0; k]; k];
    let mut z = vec![vec![0.0; k]; k];
    let mut row_counts = vec![0; k];
    let mut max_abs_z = 0.0f64;
    for i in 0..k {
        let n: u64 = counts[i].iter().sum();
        row_counts[i] = n;
        for f in 0..k {
            let p = kernel[[i, f]];
            predicted[i][f] = p;
            if n == 0 {
                continue;
            }
            let nf = n as f64;
            empirical[i][f] = counts[i][f] as f64 / nf;
            let sd = (nf * p * (1.0 - p)).sqrt();
            let diff = counts[i][f] as f64 - nf * p;
            let zi = if sd > 0.0 { diff / sd } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
            z[i][f] = zi;
            max_abs_z = max_abs_z.max(zi.abs());
        }
    }
    TransitionCheck { predicted, empirical, row_counts, z, max_abs_z }
}
