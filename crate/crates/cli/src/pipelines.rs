//! One function per experiment kind. Each writes its artifacts through
//! `Outputs` and returns a JSON summary for the console.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;
use serde_json::{json, Value};
use thermalab_core::dynamics::{
    central_states, equilibrium_fluctuations, evolve_expectation, fit_decay_auto, measure_dos_experiment,
    select_initial_state, unit_state, EigenObservable, EvolutionSeries, FluctuationReport,
};
use thermalab_core::export::{Cell, Table};
use thermalab_core::fit::DecayFit;
use thermalab_core::model::{build_observable, HamiltonianPair, Observable};
use thermalab_core::ou::{simulate_ou, simulate_shaken_ou, OuParams};
use thermalab_core::rmt::{
    beta_window_width, chapman_kolmogorov_error, einstein_check, four_point_prediction, gibbs_entropy,
    max_abs_diff, mean_and_se, predicted_entropy_curve, system_distribution, BathDensity, ChaoticEnsemble,
    FourPointIndex, MarkovKernel,
};
use thermalab_core::seed::{derive_seed, stream_rng};
use thermalab_core::spectral::{default_bandwidth, diagonalize, fit_envelope, KernelDensity, Spectrum};
use thermalab_core::trajectories::{
    consistent_histories_check, single_trajectory_entropy, transition_check, EnsembleStats, TrajectoryEngine,
    TrajectoryRecord,
};

use crate::config::{
    Config, DosSection, EinsteinSection, EnsembleSection, EntropySection, EvolveSection, OuSection, StateRule,
    TimeGrid, TrajectorySection,
};
use crate::output::Outputs;
use crate::RunError;

pub struct Quantum {
    pub model: HamiltonianPair,
    pub spectrum: Spectrum,
    pub obs: Observable,
}

pub fn setup(cfg: &Config) -> Result<Quantum, RunError> {
    let params = cfg.model.as_ref().ok_or_else(|| RunError::Config("missing model".into()))?;
    let spec = cfg.observable.as_ref().ok_or_else(|| RunError::Config("missing observable".into()))?;
    let model = params.build(cfg.max_dim())?;
    let obs = build_observable(&model, spec)?;
    let spectrum = diagonalize(&model)?;
    Ok(Quantum { model, spectrum, obs })
}

pub fn select_states(q: &Quantum, rule: &StateRule) -> Result<Vec<usize>, RunError> {
    match rule {
        StateRule::MaxObservable => Ok(vec![select_initial_state(&q.model.basis, &q.obs)?]),
        StateRule::Index { alpha } => {
            if *alpha >= q.model.dim() {
                return Err(RunError::Config(format!("state index {alpha} outside dimension {}", q.model.dim())));
            }
            Ok(vec![*alpha])
        }
        StateRule::Central { count } => {
            let all = central_states(&q.model.basis, &q.obs, &q.spectrum);
            if all.is_empty() || *count == 0 {
                return Err(RunError::Config("no central states available".into()));
            }
            if all.len() <= *count {
                return Ok(all);
            }
            // evenly spaced in energy order, endpoints included
            let n = *count;
            Ok((0..n)
                .map(|i| all[if n == 1 { all.len() / 2 } else { i * (all.len() - 1) / (n - 1) }])
                .collect())
        }
    }
}

fn f(x: f64) -> Cell {
    Cell::F(x)
}

fn series_table(series: &EvolutionSeries) -> Result<Table, RunError> {
    let mut t = Table::new(&["t", "value"]);
    for (x, y) in series.times.iter().zip(&series.values) {
        t.push(vec![f(*x), f(*y)])?;
    }
    Ok(t)
}

/// Unmonitored evolution, fluctuation report and decay fit for one state.
pub struct Reference {
    pub alpha: usize,
    pub energy: f64,
    pub series: EvolutionSeries,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    pub fluctuations: FluctuationReport,
}

impl Reference {
    pub fn gamma(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.gamma)
    }

    fn summary(&self) -> Value {
        json!({
            "alpha0": self.alpha,
            "free_energy": self.energy,
            "gamma_ev": self.gamma(),
            "fit": self.fit,
            "fit_error": self.fit_error,
            "fluctuations": self.fluctuations,
        })
    }
}

pub fn reference(q: &Quantum, alpha: usize, grid: &TimeGrid) -> Result<Reference, RunError> {
    let psi = unit_state(q.model.dim(), alpha);
    let series = evolve_expectation(&q.spectrum, &psi, &q.obs, &grid.times()?)?;
    let eig = EigenObservable::new(&q.spectrum, &q.obs);
    let pre = equilibrium_fluctuations(&q.spectrum, &psi, &eig, f64::NAN)?;
    let (fit, fit_error) = match fit_decay_auto(&series, pre.o_infinity, pre.delta2) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let gamma = fit.as_ref().map_or(f64::NAN, |f| f.gamma);
    let fluctuations = equilibrium_fluctuations(&q.spectrum, &psi, &eig, gamma)?;
    Ok(Reference { alpha, energy: q.model.basis.energy(alpha), series, fit, fit_error, fluctuations })
}

fn write_levels(q: &Quantum, out: &mut Outputs) -> Result<(), RunError> {
    let mut t = Table::new(&["index", "energy"]);
    for (i, e) in q.spectrum.energies.iter().enumerate() {
        t.push(vec![i.into(), f(*e)])?;
    }
    out.table("levels.csv", &t)
}

pub fn evolve(cfg: &Config, sec: &EvolveSection, out: &mut Outputs) -> Result<Value, RunError> {
    let q = setup(cfg)?;
    let alpha = select_states(&q, &cfg.state)?[0];
    let r = reference(&q, alpha, &sec.times)?;
    out.table("evolve.csv", &series_table(&r.series)?)?;
    write_levels(&q, out)?;
    let mut summary = r.summary();
    summary["dim"] = json!(q.model.dim());
    summary["max_residual"] = json!(q.spectrum.max_residual);
    if let Some(env) = &sec.envelope {
        let fit = fit_envelope(
            &q.spectrum,
            q.spectrum.central_window(env.window_fraction),
            env.n_bins,
            env.max_offset,
        )?;
        let mut t = Table::new(&["offset", "lambda_avg", "count", "lorentzian"]);
        for b in 0..fit.bin_centers.len() {
            let model = fit.gamma.map(|g| thermalab_core::spectral::lorentzian(fit.bin_centers[b], g, fit.omega0));
            t.push(vec![f(fit.bin_centers[b]), f(fit.lambda_avg[b]), fit.counts[b].into(), model.into()])?;
        }
        out.table("envelope.csv", &t)?;
        summary["envelope"] = json!({
            "gamma": fit.gamma,
            "omega0": fit.omega0,
            "fit_residual": fit.fit_residual,
            "flagged": fit.flagged,
            "normalization": fit.normalization,
            "n_states": fit.n_states,
            "ratio_to_gamma_ev": fit.gamma.zip(r.gamma()).map(|(a, b)| a / b),
        });
    }
    out.json("decay_fit.json", &summary)?;
    Ok(summary)
}

fn dt_tag(dt: f64) -> String {
    format!("{dt}")
}

#[derive(Serialize)]
struct DtSummary {
    dt: f64,
    n_meas: usize,
    n_real: usize,
    gamma_qj: Option<f64>,
    gamma_ev: Option<f64>,
    ratio: Option<f64>,
    fit_residual: Option<f64>,
    fit_error: Option<String>,
    history_max_abs_z: f64,
    kernel_max_abs_z: Option<f64>,
    entropy_late: f64,
    entropy_single: Option<f64>,
    entropy_worst_drop_se: f64,
    sigma_e_over_range: f64,
    delta_e: f64,
}

fn record_table(rec: &TrajectoryRecord, outcomes: &[f64]) -> Result<Table, RunError> {
    let mut t = Table::new(&["j", "t", "s", "energy"]);
    if let Some(s0) = rec.initial_outcome {
        t.push(vec![0usize.into(), f(0.0), f(outcomes[s0]), f(rec.initial_energy)])?;
    }
    for (j, (&k, &e)) in rec.outcomes.iter().zip(&rec.energies).enumerate() {
        t.push(vec![(j + 1).into(), f((j + 1) as f64 * rec.dt), f(outcomes[k]), f(e)])?;
    }
    Ok(t)
}

pub fn trajectories(cfg: &Config, sec: &TrajectorySection, out: &mut Outputs) -> Result<Value, RunError> {
    let q = setup(cfg)?;
    let alpha = select_states(&q, &cfg.state)?[0];
    let r = reference(&q, alpha, &sec.reference)?;
    out.table("evolve.csv", &series_table(&r.series)?)?;
    out.json("decay_fit.json", &r.summary())?;
    let gamma_ev = r.gamma();

    let psi = unit_state(q.model.dim(), alpha);
    let engine = TrajectoryEngine::new(&q.spectrum, &q.obs)?;
    let p0 = engine.initial_distribution(&psi);
    let p_inf = engine.diagonal_ensemble(&psi);
    let kernel = match gamma_ev {
        Some(g) => Some(MarkovKernel::new(p_inf.clone(), g)?),
        None => None,
    };
    let outcomes = q.obs.outcomes.clone();
    let eig = EigenObservable::new(&q.spectrum, &q.obs);

    let mut header: Vec<String> = [
        "j", "t", "mean", "std_err", "unmonitored", "z", "entropy", "entropy_se", "energy_mean", "energy_std",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..outcomes.len()).map(|k| format!("p_{k}")));

    let mut rows = Vec::new();
    for (i, &dt) in sec.dt_list.iter().enumerate() {
        let tag = dt_tag(dt);
        let n_meas = sec.n_meas_for(dt);
        let base = derive_seed(cfg.seed, i as u64);
        let prop = engine.propagator(dt)?;
        let seeds: Vec<u64> = (0..sec.n_real as u64).map(|k| derive_seed(base, k)).collect();
        let records = engine.run_seeds(&psi, &prop, n_meas, &seeds)?;
        let mut stats = EnsembleStats::from_records(&records, &outcomes, &p0, q.spectrum.width())?;
        let fit_error = stats
            .fit_gamma(Some((r.fluctuations.o_infinity, r.fluctuations.delta2)))
            .err()
            .map(|e| e.to_string());
        let unmonitored = thermalab_core::dynamics::evolve_with(&q.spectrum, &eig, &psi, &stats.times)?.values;
        let history = consistent_histories_check(&stats, &unmonitored)?;

        let mut t = Table::new(&header);
        for j in 0..stats.times.len() {
            let z = if j == 0 { Cell::Empty } else { f(history.z_scores[j - 1]) };
            let mut row = vec![
                j.into(),
                f(stats.times[j]),
                f(stats.mean[j]),
                f(stats.std_err[j]),
                f(unmonitored[j]),
                z,
                f(stats.entropy[j]),
                f(stats.entropy_se[j]),
                f(stats.energy_mean[j]),
                f(stats.energy_std[j]),
            ];
            row.extend(stats.empirical_p[j].iter().map(|p| f(*p)));
            t.push(row)?;
        }
        out.table(&format!("traj_dt{tag}_summary.csv"), &t)?;

        let kernel_max = match &kernel {
            Some(k) => {
                let check = transition_check(&stats.transitions, &k.matrix(dt));
                let mut t = Table::new(&["s_i", "s_f", "count", "empirical", "predicted", "z"]);
                for a in 0..outcomes.len() {
                    for b in 0..outcomes.len() {
                        t.push(vec![
                            f(outcomes[a]),
                            f(outcomes[b]),
                            (stats.transitions[a][b] as usize).into(),
                            f(check.empirical[a][b]),
                            f(check.predicted[a][b]),
                            f(check.z[a][b]),
                        ])?;
                    }
                }
                out.table(&format!("traj_dt{tag}_transitions.csv"), &t)?;
                Some(check.max_abs_z)
            }
            None => None,
        };

        for (k, rec) in records.iter().take(sec.records_written).enumerate() {
            out.table(&format!("traj_dt{tag}_record{k}.csv"), &record_table(rec, &outcomes)?)?;
        }

        let long_seed = derive_seed(base, u64::MAX);
        let long = engine.run_seeds(&psi, &prop, sec.single_record, &[long_seed])?;
        let discard = gamma_ev.map_or(0.5 * sec.single_record as f64 * dt, |g| 1.5 / g);
        let entropy_single = single_trajectory_entropy(&long[0], outcomes.len(), discard);

        let half = stats.entropy.len() / 2;
        let late = &stats.entropy[half..];
        let entropy_late = late.iter().sum::<f64>() / late.len() as f64;
        let mut worst_drop = f64::NEG_INFINITY;
        for j in 1..stats.entropy.len() - 1 {
            let se = (stats.entropy_se[j].powi(2) + stats.entropy_se[j + 1].powi(2)).sqrt();
            let drop = stats.entropy[j] - stats.entropy[j + 1];
            worst_drop = worst_drop.max(if se > 0.0 { drop / se } else if drop > 0.0 { f64::INFINITY } else { 0.0 });
        }

        let gamma_qj = stats.gamma_qj.as_ref().map(|f| f.gamma);
        rows.push(DtSummary {
            dt,
            n_meas,
            n_real: sec.n_real,
            gamma_qj,
            gamma_ev,
            ratio: gamma_qj.zip(gamma_ev).map(|(a, b)| a / b),
            fit_residual: stats.gamma_qj.as_ref().map(|f| f.residual),
            fit_error,
            history_max_abs_z: history.max_abs_z,
            kernel_max_abs_z: kernel_max,
            entropy_late,
            entropy_single,
            entropy_worst_drop_se: worst_drop,
            sigma_e_over_range: stats.relative_energy_spread(),
            delta_e: stats.energy_time_fluctuation(),
        });
    }

    let mut t = Table::new(&[
        "dt",
        "n_meas",
        "n_real",
        "gamma_qj",
        "gamma_ev",
        "ratio",
        "fit_residual",
        "history_max_abs_z",
        "kernel_max_abs_z",
        "entropy_late",
        "entropy_single",
        "entropy_worst_drop_se",
        "sigma_e_over_range",
        "delta_e",
    ]);
    for s in &rows {
        t.push(vec![
            f(s.dt),
            s.n_meas.into(),
            s.n_real.into(),
            s.gamma_qj.into(),
            s.gamma_ev.into(),
            s.ratio.into(),
            s.fit_residual.into(),
            f(s.history_max_abs_z),
            s.kernel_max_abs_z.into(),
            f(s.entropy_late),
            s.entropy_single.into(),
            f(s.entropy_worst_drop_se),
            f(s.sigma_e_over_range),
            f(s.delta_e),
        ])?;
    }
    out.table("gamma_qj.csv", &t)?;
    let summary = json!({
        "reference": r.summary(),
        "p_initial": p0,
        "p_infinity": p_inf,
        "energy_range": q.spectrum.width(),
        "dt": rows,
    });
    out.json("trajectories.json", &summary)?;
    Ok(summary)
}

pub fn dos_measure(cfg: &Config, sec: &DosSection, out: &mut Outputs) -> Result<Value, RunError> {
    let q = setup(cfg)?;
    let states = select_states(&q, &cfg.state)?;
    let rows = measure_dos_experiment(&q.spectrum, &q.obs, &states, &sec.times.times()?, sec.bandwidth)?;
    let bandwidth = match sec.bandwidth {
        Some(b) => b,
        None => default_bandwidth(&q.spectrum.energies)?,
    };
    let mut t = Table::new(&[
        "alpha", "energy", "gamma", "sigma2", "delta2", "dos_inferred", "dos_exact", "ratio", "within",
    ]);
    let mut within = 0usize;
    for r in &rows {
        let ratio = r.ratio();
        let ok = ratio.is_some_and(|x| x <= sec.factor && x >= 1.0 / sec.factor);
        within += ok as usize;
        t.push(vec![
            r.alpha.into(),
            f(r.energy),
            r.gamma.into(),
            f(r.sigma2),
            f(r.delta2),
            r.dos_inferred.into(),
            f(r.dos_exact),
            ratio.into(),
            ok.into(),
        ])?;
    }
    out.table("dos.csv", &t)?;
    write_levels(&q, out)?;
    let summary = json!({
        "n_states": rows.len(),
        "n_within": within,
        "fraction_within": within as f64 / rows.len() as f64,
        "factor": sec.factor,
        "bandwidth": bandwidth,
    });
    out.json("dos.json", &summary)?;
    Ok(summary)
}

pub fn einstein(cfg: &Config, sec: &EinsteinSection, out: &mut Outputs) -> Result<Value, RunError> {
    let q = setup(cfg)?;
    let basis = &q.model.basis;
    let positions = basis
        .system_labels()
        .ok_or_else(|| RunError::Config("Einstein check needs an unrotated system factor".into()))?
        .to_vec();
    let bath_levels = basis.bath_energies();
    let bw = match sec.bath_bandwidth {
        Some(b) => b,
        None => default_bandwidth(bath_levels)?,
    };
    let bath = KernelDensity::new(bath_levels, bw)?;
    let states = select_states(&q, &cfg.state)?;
    let mut t = Table::new(&[
        "alpha",
        "energy",
        "gamma",
        "beta",
        "mass",
        "sigma2_measured",
        "sigma2_distribution",
        "sigma2_predicted",
        "deviation",
        "in_regime",
        "error",
    ]);
    let mut n_pass = 0usize;
    let mut n_eval = 0usize;
    for &alpha in &states {
        let r = reference(&q, alpha, &sec.times)?;
        let sigma2 = r.fluctuations.sigma2;
        let gamma = r.gamma();
        let e = r.energy;
        let attempt = (|| {
            let g = gamma.ok_or_else(|| thermalab_core::Error::FitNotConverged {
                reason: "no decay rate for the beta window".into(),
                residual: f64::NAN,
            })?;
            let d_b = bath.density(e).ok_or(thermalab_core::Error::DensityUnavailable { energy: e })?;
            let dist = system_distribution(&bath, &positions, basis.system_energies(), e, beta_window_width(g, d_b))?;
            einstein_check(&dist)
        })();
        match attempt {
            Ok(rep) => {
                let mb = rep.mass * rep.beta;
                let dev = (mb > 0.0).then(|| (sigma2 * mb - 1.0).abs());
                n_eval += 1;
                n_pass += dev.is_some_and(|d| d < 0.3) as usize;
                t.push(vec![
                    alpha.into(),
                    f(e),
                    gamma.into(),
                    f(rep.beta),
                    f(rep.mass),
                    f(sigma2),
                    f(rep.sigma2_from_p),
                    rep.sigma2_predicted.into(),
                    dev.into(),
                    rep.in_regime.into(),
                    "".into(),
                ])?;
            }
            Err(err) => {
                t.push(vec![
                    alpha.into(),
                    f(e),
                    gamma.into(),
                    Cell::Empty,
                    Cell::Empty,
                    f(sigma2),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    false.into(),
                    err.to_string().as_str().into(),
                ])?;
            }
        }
    }
    out.table("einstein.csv", &t)?;
    let summary = json!({
        "n_states": states.len(),
        "n_evaluated": n_eval,
        "n_within_0_3": n_pass,
        "bath_bandwidth": bw,
    });
    out.json("einstein.json", &summary)?;
    Ok(summary)
}

fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn entropy(cfg: &Config, sec: &EntropySection, out: &mut Outputs) -> Result<Value, RunError> {
    let d = sec.d_s;
    if d < 2 || sec.n_draws == 0 {
        return Err(RunError::Config("entropy needs d_s >= 2 and n_draws >= 1".into()));
    }
    let mut kt = Table::new(&[
        "draw",
        "gamma",
        "ck_error",
        "row_sum_error",
        "stationarity_error",
        "identity_error",
        "limit_error",
        "min_entry",
    ]);
    let mut et = Table::new(&[
        "draw",
        "s0",
        "gamma",
        "p_s0",
        "threshold",
        "monotone_predicted",
        "min_increment",
        "non_decreasing",
    ]);
    let mut worst = [0.0f64; 5];
    let mut min_entry = f64::INFINITY;
    let (mut n_mono, mut n_pred, mut n_pred_ok) = (0usize, 0usize, 0usize);
    let mut worst_increment = f64::INFINITY;
    for draw in 0..sec.n_draws as u64 {
        let mut rng = stream_rng(cfg.seed, draw);
        let p = random_distribution(&mut rng, d);
        let gamma = rng.random_range(0.05..3.0);
        let k = MarkovKernel::new(p.clone(), gamma)?;
        let mut ck = 0.0f64;
        for _ in 0..sec.n_ck {
            let ti = rng.random_range(0.0..5.0);
            let tm = ti + rng.random_range(0.0..5.0) / gamma;
            let tf = tm + rng.random_range(0.0..5.0) / gamma;
            ck = ck.max(chapman_kolmogorov_error(&k, &k, &k, (ti, tm, tf)));
        }
        let dt = rng.random_range(0.0..10.0) / gamma;
        let m = k.matrix(dt);
        let row_sum = m.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
        let stat = ndarray::Array1::from(p.clone()).dot(&m);
        let stationarity = stat.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let identity = max_abs_diff(&k.matrix(0.0), &Array2::eye(d));
        let limit_m = k.matrix(50.0 / gamma);
        let limit = limit_m
            .rows()
            .into_iter()
            .flat_map(|r| r.iter().zip(&p).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        let me = m.iter().cloned().fold(f64::INFINITY, f64::min);
        min_entry = min_entry.min(me);
        for (w, v) in worst.iter_mut().zip([ck, row_sum, stationarity, identity, limit]) {
            *w = w.max(v);
        }
        kt.push(vec![
            (draw as usize).into(),
            f(gamma),
            f(ck),
            f(row_sum),
            f(stationarity),
            f(identity),
            f(limit),
            f(me),
        ])?;

        let s0 = rng.random_range(0..d);
        if draw >= sec.n_entropy as u64 {
            continue;
        }
        let mut p0 = vec![0.0; d];
        p0[s0] = 1.0;
        let times: Vec<f64> = (0..sec.n_times).map(|i| i as f64 * 6.0 / (gamma * sec.n_times as f64)).collect();
        let curve = predicted_entropy_curve(&p0, &p, gamma, &times)?;
        let threshold = (-gibbs_entropy(&p)).exp();
        let predicted = p[s0] >= threshold;
        n_mono += curve.non_decreasing as usize;
        if predicted {
            n_pred += 1;
            n_pred_ok += curve.non_decreasing as usize;
        }
        worst_increment = worst_increment.min(curve.min_increment);
        et.push(vec![
            (draw as usize).into(),
            s0.into(),
            f(gamma),
            f(p[s0]),
            f(threshold),
            predicted.into(),
            f(curve.min_increment),
            curve.non_decreasing.into(),
        ])?;
    }
    let uniform = vec![1.0 / d as f64; d];
    let mut delta = vec![0.0; d];
    delta[0] = 1.0;
    let endpoint = predicted_entropy_curve(&delta, &uniform, 1.0, &[0.0, 1e3])?;
    let endpoint_error = (endpoint.entropy[1] - (d as f64).ln()).abs();
    out.table("kernel.csv", &kt)?;
    out.table("entropy.csv", &et)?;
    let summary = json!({
        "d_s": d,
        "n_draws": sec.n_draws,
        "max_ck_error": worst[0],
        "max_row_sum_error": worst[1],
        "max_stationarity_error": worst[2],
        "max_identity_error": worst[3],
        "max_limit_error": worst[4],
        "min_kernel_entry": min_entry,
        "n_entropy_monotone": n_mono,
        "min_entropy_increment": worst_increment,
        "n_monotone_predicted": n_pred,
        "n_monotone_predicted_and_observed": n_pred_ok,
        "uniform_endpoint_error": endpoint_error,
    });
    out.json("oracle.json", &summary)?;
    Ok(summary)
}

pub fn ou(cfg: &Config, sec: &OuSection, out: &mut Outputs) -> Result<Value, RunError> {
    let p = &sec.params;
    let series = simulate_ou(p, sec.n_paths, cfg.seed, sec.record_every, sec.scheme)?;
    let mut t = Table::new(&["t", "mean", "var", "mean_exact", "var_exact"]);
    for i in 0..series.times.len() {
        let tt = series.times[i];
        t.push(vec![f(tt), f(series.mean[i]), f(series.var[i]), f(p.mean_at(tt)), f(p.variance_at(tt))])?;
    }
    out.table("ou_series.csv", &t)?;
    let n = sec.n_paths as f64;
    let stationary = |params: &OuParams, var: &[f64], times: &[f64]| -> (f64, f64) {
        let from = 5.0 / params.rate();
        let late: Vec<f64> = times.iter().zip(var).filter(|(t, _)| **t >= from).map(|(_, v)| *v).collect();
        let est = if late.is_empty() { *var.last().expect("nonempty") } else { late.iter().sum::<f64>() / late.len() as f64 };
        (est, est * (2.0 / (n - 1.0)).sqrt())
    };
    let (var_est, var_se) = stationary(p, &series.var, &series.times);
    let mut summary = json!({
        "n_paths": sec.n_paths,
        "stationary_variance": var_est,
        "stationary_variance_se": var_se,
        "stationary_variance_expected": p.stationary_variance(),
    });
    if let Some(v_std) = sec.v_std {
        let rep = simulate_shaken_ou(p, v_std, sec.n_paths, derive_seed(cfg.seed, 1), sec.burn_in, sec.scheme)?;
        let mut t = Table::new(&["path", "drift", "time_mean"]);
        for (i, (v, m)) in rep.drifts.iter().zip(&rep.path_means).enumerate() {
            t.push(vec![i.into(), f(*v), f(*m)])?;
        }
        out.table("ou_shaken.csv", &t)?;
        summary["shaken"] = json!({
            "v_std": v_std,
            "delta_x2": rep.delta_x2,
            "delta_x2_se": rep.delta_x2_se,
            "predicted": rep.predicted,
            "averaging_noise": rep.averaging_noise,
            "burn_in": rep.burn_in,
        });
    }
    if let Some(temp) = sec.temperature {
        let pe = OuParams { diffusion: temp / p.gamma_friction, ..p.clone() };
        let s = simulate_ou(&pe, sec.n_paths, derive_seed(cfg.seed, 2), sec.record_every, sec.scheme)?;
        let (est, se) = stationary(&pe, &s.var, &s.times);
        summary["einstein"] = json!({
            "temperature": temp,
            "diffusion": pe.diffusion,
            "variance": est,
            "variance_se": se,
            "expected": temp / p.k,
        });
    }
    out.json("ou.json", &summary)?;
    Ok(summary)
}

pub fn sample_ensemble(cfg: &Config, sec: &EnsembleSection, out: &mut Outputs) -> Result<Value, RunError> {
    if sec.n_rows == 0 || sec.n_rows > sec.grid || sec.n_members < 2 {
        return Err(RunError::Config("need 0 < n_rows <= grid and n_members >= 2".into()));
    }
    let start = (sec.grid - sec.n_rows) / 2;
    let ens = ChaoticEnsemble::lorentzian(sec.grid, sec.gamma, start..start + sec.n_rows)?;
    let lambda = ens.variances().clone();
    let half = (sec.n_bins / 2) as i64;
    let n_off = (2 * half + 1) as usize;
    let mut sums = vec![0.0; n_off];
    let mut counts = vec![0usize; n_off];
    let mut pred = vec![0.0; n_off];
    for i in 0..sec.n_rows {
        let mu = (start + i) as i64;
        for a in 0..sec.grid {
            let off = mu - a as i64;
            if off.abs() <= half {
                pred[(off + half) as usize] += lambda[[i, a]];
                counts[(off + half) as usize] += 1;
            }
        }
    }

    // Four-point set: adjacent central rows, alpha = beta, alpha' = beta',
    // alpha != alpha', all within pair_range of the first row's centre.
    let mu = (sec.n_rows - 1) / 2;
    let nu = (mu + 1).min(sec.n_rows - 1);
    let centre = (start + mu) as i64;
    let r = sec.pair_range as i64;
    let mut set = Vec::new();
    for a in (centre - r)..=(centre + r) {
        for b in (centre - r)..=(centre + r) {
            if a != b && a >= 0 && b >= 0 && (a as usize) < sec.grid && (b as usize) < sec.grid {
                let (a, b) = (a as usize, b as usize);
                set.push(FourPointIndex { mu, nu, alpha: a, beta: a, alpha_p: b, beta_p: b });
            }
        }
    }
    if mu == nu || set.is_empty() {
        return Err(RunError::Config("four-point check needs at least two rows and pair_range >= 1".into()));
    }
    let predicted4 = set.iter().map(|ix| four_point_prediction(&lambda, ix)).sum::<f64>() / set.len() as f64;
    let mut member_vals = Vec::with_capacity(sec.n_members);
    for m in 0..sec.n_members as u64 {
        let cm = ens.sample(cfg.seed, m)?;
        for i in 0..sec.n_rows {
            let mu_g = (start + i) as i64;
            for a in 0..sec.grid {
                let off = mu_g - a as i64;
                if off.abs() <= half {
                    sums[(off + half) as usize] += cm[[i, a]] * cm[[i, a]];
                }
            }
        }
        let v = set
            .iter()
            .map(|ix| cm[[ix.mu, ix.alpha]] * cm[[ix.nu, ix.beta]] * cm[[ix.mu, ix.alpha_p]] * cm[[ix.nu, ix.beta_p]])
            .sum::<f64>()
            / set.len() as f64;
        member_vals.push(v);
    }
    let nm = sec.n_members as f64;
    let mut t = Table::new(&["offset", "variance", "predicted", "relative_error"]);
    let mut worst = 0.0f64;
    for k in 0..n_off {
        if counts[k] == 0 {
            continue;
        }
        let var = sums[k] / (nm * counts[k] as f64);
        let p = pred[k] / counts[k] as f64;
        let rel = (var - p) / p;
        worst = worst.max(rel.abs());
        t.push(vec![(k as i64 - half).to_string().as_str().into(), f(var), f(p), f(rel)])?;
    }
    out.table("ensemble_variance.csv", &t)?;
    let (mean, se) = mean_and_se(&member_vals);
    let summary = json!({
        "grid": sec.grid,
        "gamma": sec.gamma,
        "n_rows": sec.n_rows,
        "n_members": sec.n_members,
        "max_relative_variance_error": worst,
        "four_point": {
            "empirical": mean,
            "std_err": se,
            "predicted": predicted4,
            "z": if se > 0.0 { (mean - predicted4) / se } else { f64::INFINITY },
            "set_size": set.len(),
        },
        "omega0": 1.0,
        "lorentzian_peak": 1.0 / (PI * sec.gamma),
    });
    out.json("ensemble.json", &summary)?;
    Ok(summary)
}
