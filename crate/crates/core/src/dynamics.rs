//! Exact unitary evolution of expectation values, decay fits and
//! infinite-time fluctuation measures.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{fit_exponential_decay, DecayFit};
use crate::model::{FreeBasis, Observable};
use crate::spectral::{estimate_dos, Spectrum};

/// Observable matrix O_{mu nu} in the interacting eigenbasis.
#[derive(Clone, Debug)]
pub struct EigenObservable {
    pub matrix: Array2<f64>,
    pub min: f64,
    pub max: f64,
    pub name: String,
}

impl EigenObservable {
    pub fn new(spectrum: &Spectrum, obs: &Observable) -> Self {
        let c = &spectrum.coefficients;
        let mut m = c.dot(&obs.matrix).dot(&c.t());
        crate::linalg::symmetrize(&mut m);
        Self { matrix: m, min: obs.min(), max: obs.max(), name: obs.spec.to_string() }
    }

    /// From a free-basis symmetric matrix with known spectral bounds.
    pub fn from_free_matrix(spectrum: &Spectrum, free: &Array2<f64>, name: &str) -> Result<Self> {
        let (w, _) = crate::linalg::eigh(free.view())?;
        let c = &spectrum.coefficients;
        let mut m = c.dot(free).dot(&c.t());
        crate::linalg::symmetrize(&mut m);
        Ok(Self { matrix: m, min: w[0], max: w[w.len() - 1], name: name.to_string() })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvolutionSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub observable: String,
    /// Free-basis index of the initial state, when it is a basis state.
    pub initial_state: Option<usize>,
}

pub fn check_normalized(psi: &[f64]) -> Result<()> {
    let n = crate::linalg::norm(psi);
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::Unnormalized { norm: n });
    }
    Ok(())
}

pub fn unit_state(dim: usize, alpha: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[alpha] = 1.0;
    v
}

pub fn evolve_expectation(
    spectrum: &Spectrum,
    psi0: &[f64],
    obs: &Observable,
    times: &[f64],
) -> Result<EvolutionSeries> {
    evolve_with(spectrum, &EigenObservable::new(spectrum, obs), psi0, times)
}

/// <O(t)> = sum_{mu nu} a_mu a_nu cos((E_mu - E_nu) t) O_{mu nu}.
pub fn evolve_with(
    spectrum: &Spectrum,
    obs: &EigenObservable,
    psi0: &[f64],
    times: &[f64],
) -> Result<EvolutionSeries> {
    if psi0.len() != spectrum.dim() {
        return invalid("initial state has the wrong dimension");
    }
    check_normalized(psi0)?;
    let a = spectrum.overlaps(psi0);
    let d = a.len();
    let mut values = Vec::with_capacity(times.len());
    const CHUNK: usize = 128;
    for chunk in times.chunks(CHUNK) {
        // Columns: Re and Im of a_mu e^{-i E_mu t} for each t.
        let k = chunk.len();
        let mut m = Array2::zeros((d, 2 * k));
        for (j, &t) in chunk.iter().enumerate() {
            for mu in 0..d {
                let (s, c) = (spectrum.energies[mu] * t).sin_cos();
                m[[mu, j]] = a[mu] * c;
                m[[mu, k + j]] = a[mu] * s;
            }
        }
        let y = obs.matrix.dot(&m);
        for j in 0..k {
            let re: f64 = m.column(j).dot(&y.column(j));
            let im: f64 = m.column(k + j).dot(&y.column(k + j));
            values.push(re + im);
        }
    }
    let initial_state = {
        let nz: Vec<usize> = (0..d).filter(|&i| psi0[i] != 0.0).collect();
        if nz.len() == 1 && (psi0[nz[0]] - 1.0).abs() < 1e-12 {
            Some(nz[0])
        } else {
            None
        }
    };
    Ok(EvolutionSeries { times: times.to_vec(), values, observable: obs.name.clone(), initial_state })
}

/// `n` log-spaced times in [t_min, t_max], preceded by t = 0.
pub fn log_times(t_min: f64, t_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max > t_min) || n < 2 {
        return invalid("log grid needs 0 < t_min < t_max and n >= 2");
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    let mut out = vec![0.0];
    out.extend((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()));
    Ok(out)
}

/// `n + 1` equally spaced times from 0 to t_max.
pub fn linear_times(t_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(t_max > 0.0) || n < 1 {
        return invalid("linear grid needs t_max > 0 and n >= 1");
    }
    Ok((0..=n).map(|i| t_max * i as f64 / n as f64).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub o_infinity: f64,
    pub sigma2: f64,
    pub delta2: f64,
    pub ratio: Option<f64>,
    pub dos_inferred: Option<f64>,
    pub gamma_used: f64,
    pub flagged: bool,
    /// Number of groups of (near-)degenerate levels folded together.
    pub degenerate_blocks: usize,
}

/// Group consecutive energies closer than `tol` into blocks.
fn degenerate_blocks(energies: &[f64], tol: f64) -> Vec<usize> {
    let mut block = vec![0; energies.len()];
    let mut b = 0;
    for i in 1..energies.len() {
        if energies[i] - energies[i - 1] > tol {
            b += 1;
        }
        block[i] = b;
    }
    block
}

/// Diagonal-ensemble mean, quantum fluctuations sigma^2 and infinite-time
/// fluctuations delta^2 of <O(t)>; levels within 1e-10 are merged.
pub fn equilibrium_fluctuations(
    spectrum: &Spectrum,
    psi0: &[f64],
    obs: &EigenObservable,
    gamma: f64,
) -> Result<FluctuationReport> {
    check_normalized(psi0)?;
    let a = spectrum.overlaps(psi0);
    let d = a.len();
    let block = degenerate_blocks(&spectrum.energies, 1e-10);
    let nb = block[d - 1] + 1;
    let o = &obs.matrix;

    let mut o_inf = 0.0;
    let mut o2_inf = 0.0;
    let mut delta2 = 0.0;
    if nb == d {
        for mu in 0..d {
            let row = o.row(mu);
            let p = a[mu] * a[mu];
            o_inf += p * row[mu];
            o2_inf += p * row.dot(&row);
            let mut s = 0.0;
            for nu in 0..d {
                if nu != mu {
                    s += a[nu] * a[nu] * row[nu] * row[nu];
                }
            }
            delta2 += p * s;
        }
    } else {
        let mut m = Array2::<f64>::zeros((nb, nb));
        for mu in 0..d {
            for nu in 0..d {
                m[[block[mu], block[nu]]] += a[mu] * a[nu] * o[[mu, nu]];
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for (mu, &b) in block.iter().enumerate() {
            members[b].push(mu);
        }
        for (b, mem) in members.iter().enumerate() {
            o_inf += m[[b, b]];
            for &mu in mem {
                for &nu in mem {
                    o2_inf += a[mu] * a[nu] * o.row(mu).dot(&o.row(nu));
                }
            }
        }
        for b in 0..nb {
            for c in 0..nb {
                if b != c {
                    delta2 += m[[b, c]] * m[[b, c]];
                }
            }
        }
    }
    let sigma2 = (o2_inf - o_inf * o_inf).max(0.0);
    let usable = delta2 >= 1e-14 && gamma > 0.0 && gamma.is_finite();
    let ratio = if delta2 >= 1e-14 { Some(sigma2 / delta2) } else { None };
    let dos_inferred = if usable { ratio.map(|r| r / (4.0 * std::f64::consts::PI * gamma)) } else { None };
    Ok(FluctuationReport {
        o_infinity: o_inf,
        sigma2,
        delta2,
        ratio,
        dos_inferred,
        gamma_used: gamma,
        flagged: !usable,
        degenerate_blocks: d - nb,
    })
}

/// End of the default fit window: the first time t* after which the
/// series stays within 2 sqrt(delta2) of `plateau` for one decay time
/// 1/(2 gamma), plus that decay time. `None` if it never settles.
pub fn default_fit_end(series: &EvolutionSeries, plateau: f64, delta2: f64, gamma: f64) -> Option<f64> {
    let band = 2.0 * delta2.max(0.0).sqrt();
    let tau = 1.0 / (2.0 * gamma);
    let t = &series.times;
    let v = &series.values;
    let last = *t.last()?;
    for i in 0..t.len() {
        if t[i] + tau > last {
            break;
        }
        let settled = (i..t.len()).take_while(|&j| t[j] <= t[i] + tau).all(|j| (v[j] - plateau).abs() <= band);
        if settled {
            return Some(t[i] + tau);
        }
    }
    None
}

/// Fit A exp(-2 Gamma t) + B to the part of `series` inside `window`.
pub fn fit_decay(series: &EvolutionSeries, window: Option<(f64, f64)>) -> Result<DecayFit> {
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let (t, y): (Vec<f64>, Vec<f64>) = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(t, y)| (*t, *y))
        .unzip();
    fit_exponential_decay(&t, &y)
}

/// Fit over the whole series, then refit over the default window.
pub fn fit_decay_auto(series: &EvolutionSeries, plateau: f64, delta2: f64) -> Result<DecayFit> {
    let first = fit_decay(series, None)?;
    match default_fit_end(series, plateau, delta2, first.gamma) {
        Some(end) => {
            let n_in = series.times.iter().filter(|t| **t <= end).count();
            if n_in >= 8 {
                fit_decay(series, Some((series.times[0], end)))
            } else {
                Ok(first)
            }
        }
        None => Ok(first),
    }
}

/// Free states alpha with O_{alpha alpha} = max O; used for initial states.
fn max_observable_states(obs: &Observable) -> Vec<usize> {
    let diag = obs.free_diagonal();
    let top = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..diag.len()).filter(|&a| (diag[a] - top).abs() < 1e-9).collect()
}

/// Mid-energy free eigenstate with maximal <O>: the candidate closest to
/// the median free energy, lower product index on ties.
pub fn select_initial_state(basis: &FreeBasis, obs: &Observable) -> Result<usize> {
    let median = basis.median_energy();
    max_observable_states(obs)
        .into_iter()
        .min_by(|&a, &b| {
            let da = (basis.energy(a) - median).abs();
            let db = (basis.energy(b) - median).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .ok_or_else(|| Error::InvalidParameter("observable has no maximal free state".into()))
}

/// Free eigenstates with maximal <O> whose energy lies in the central
/// half of the interacting spectrum, sorted by energy.
pub fn central_states(basis: &FreeBasis, obs: &Observable, spectrum: &Spectrum) -> Vec<usize> {
    let (lo, hi) = spectrum.central_window(0.5);
    let mut out: Vec<usize> = max_observable_states(obs)
        .into_iter()
        .filter(|&a| (lo..=hi).contains(&basis.energy(a)))
        .collect();
    out.sort_by(|&a, &b| basis.energy(a).total_cmp(&basis.energy(b)).then(a.cmp(&b)));
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DosRow {
    pub alpha: usize,
    pub energy: f64,
    pub gamma: Option<f64>,
    pub sigma2: f64,
    pub delta2: f64,
    pub dos_inferred: Option<f64>,
    pub dos_exact: f64,
}

impl DosRow {
    pub fn ratio(&self) -> Option<f64> {
        self.dos_inferred.map(|d| d / self.dos_exact)
    }
}

/// Infer D(E) from sigma^2 / (4 pi Gamma delta^2) for each initial free
/// state and compare with the kernel density of the spectrum.
pub fn measure_dos_experiment(
    spectrum: &Spectrum,
    obs: &Observable,
    states: &[usize],
    times: &[f64],
    bandwidth: Option<f64>,
) -> Result<Vec<DosRow>> {
    let eig = EigenObservable::new(spectrum, obs);
    let dos = estimate_dos(&spectrum.energies, bandwidth)?;
    let mut rows = Vec::with_capacity(states.len());
    for &alpha in states {
        let psi0 = unit_state(spectrum.dim(), alpha);
        let series = evolve_with(spectrum, &eig, &psi0, times)?;
        let pre = equilibrium_fluctuations(spectrum, &psi0, &eig, f64::NAN)?;
        let gamma = fit_decay_auto(&series, pre.o_infinity, pre.delta2).ok().map(|f| f.gamma);
        let report = equilibrium_fluctuations(spectrum, &psi0, &eig, gamma.unwrap_or(f64::NAN))?;
        let energy = spectrum.free_energies[alpha];
        rows.push(DosRow {
            alpha,
            energy,
            gamma,
            sigma2: report.sigma2,
            delta2: report.delta2,
            dos_inferred: report.dos_inferred,
            dos_exact: dos.density_at(energy),
        });
    }
    Ok(rows)
}

/// Time average of the series over samples with t in [lo, hi].
pub fn time_average(series: &EvolutionSeries, lo: f64, hi: f64) -> Option<(f64, f64, usize)> {
    let v: Vec<f64> =
        series.times.iter().zip(&series.values).filter(|(t, _)| (lo..=hi).contains(*t)).map(|(_, v)| *v).collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var, v.len()))
}
