//! Re-evaluate the acceptance checks of a finished run from its files.
//!
//! Checks recompute derived columns (ratios, deviations) from the raw
//! ones rather than trusting them, so an edited CSV either breaks its
//! hash or fails a criterion.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thermalab_core::export::Table;
use thermalab_core::fit::fit_exponential_decay;

use crate::config::{Config, ExperimentKind};
use crate::output::{file_digest, sha256_hex, Manifest};
use crate::{output_dir, RunError};

#[derive(Clone, Debug)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub dir: PathBuf,
    pub experiment: ExperimentKind,
    pub verdicts: Vec<Verdict>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Verdict> + 'a {
        self.verdicts.iter().filter(move |v| v.name.starts_with(prefix))
    }
}

fn required_files(cfg: &Config) -> Vec<&'static str> {
    match cfg.experiment {
        ExperimentKind::Evolve => vec!["evolve.csv", "decay_fit.json"],
        ExperimentKind::Trajectories => vec!["gamma_qj.csv", "trajectories.json"],
        ExperimentKind::DosMeasure => vec!["dos.csv", "dos.json"],
        ExperimentKind::Einstein => vec!["einstein.csv"],
        ExperimentKind::Entropy => vec!["kernel.csv", "entropy.csv", "oracle.json"],
        ExperimentKind::Ou => vec!["ou_series.csv", "ou.json"],
        ExperimentKind::SampleEnsemble => vec!["ensemble_variance.csv", "ensemble.json"],
    }
}

struct Run<'a> {
    dir: &'a Path,
}

impl Run<'_> {
    fn table(&self, name: &str) -> Result<Table, RunError> {
        Ok(Table::read(&self.dir.join(name))?)
    }

    fn json(&self, name: &str) -> Result<Value, RunError> {
        let p = self.dir.join(name);
        let src = fs::read_to_string(&p)?;
        serde_json::from_str(&src).map_err(|e| RunError::Output(format!("{}: {e}", p.display())))
    }
}

fn num(v: &Value, path: &[&str]) -> Option<f64> {
    let mut cur = v;
    for k in path {
        cur = cur.get(k)?;
    }
    cur.as_f64()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1e-12)
}

pub fn verify(config_path: &Path, out: Option<PathBuf>) -> Result<VerifyReport, RunError> {
    let (cfg, src) = Config::load(config_path)?;
    verify_dir(&cfg, &src, &output_dir(config_path, out))
}

pub fn verify_dir(cfg: &Config, config_src: &str, dir: &Path) -> Result<VerifyReport, RunError> {
    let manifest = Manifest::load(dir)?;
    let mut missing: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|o| !dir.join(&o.path).is_file())
        .map(|o| dir.join(&o.path).display().to_string())
        .collect();
    for name in required_files(cfg) {
        if manifest.output(name).is_none() && !missing.iter().any(|m| m.ends_with(name)) {
            missing.push(dir.join(name).display().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(RunError::Missing(missing));
    }

    let mut v = Vec::new();
    let cfg_ok = manifest.config_sha256 == sha256_hex(config_src.as_bytes());
    v.push(Verdict::new(
        "integrity.config",
        cfg_ok && manifest.experiment == cfg.experiment.name(),
        if cfg_ok { "config matches the manifest" } else { "config changed since the run" },
    ));
    let mut altered = Vec::new();
    for o in &manifest.outputs {
        let (hash, bytes) = file_digest(&dir.join(&o.path))?;
        if hash != o.sha256 || bytes != o.bytes {
            altered.push(o.path.clone());
        }
    }
    v.push(Verdict::new(
        "integrity.outputs",
        altered.is_empty(),
        if altered.is_empty() {
            format!("{} files match their recorded sha256", manifest.outputs.len())
        } else {
            format!("modified since the run: {}", altered.join(", "))
        },
    ));

    let run = Run { dir };
    match cfg.experiment {
        ExperimentKind::Evolve => check_evolve(&run, &mut v)?,
        ExperimentKind::Trajectories => check_trajectories(cfg, &run, &mut v)?,
        ExperimentKind::DosMeasure => check_dos(cfg, &run, &mut v)?,
        ExperimentKind::Einstein => check_einstein(&run, &mut v)?,
        ExperimentKind::Entropy => check_entropy(cfg, &run, &mut v)?,
        ExperimentKind::Ou => check_ou(&run, &mut v)?,
        ExperimentKind::SampleEnsemble => check_ensemble(&run, &mut v)?,
    }
    Ok(VerifyReport { dir: dir.to_path_buf(), experiment: cfg.experiment, verdicts: v })
}

fn check_evolve(run: &Run, v: &mut Vec<Verdict>) -> Result<(), RunError> {
    let fit = run.json("decay_fit.json")?;
    let series = run.table("evolve.csv")?;
    let (t, y) = (series.column("t")?, series.column("value")?);
    let Some(gamma) = num(&fit, &["fit", "gamma"]) else {
        let why = fit.get("fit_error").and_then(Value::as_str).unwrap_or("no fit recorded");
        v.push(Verdict::new("decay.fit", false, why.to_string()));
        return Ok(());
    };
    let amp = num(&fit, &["fit", "amplitude"]).unwrap_or(f64::NAN).abs();
    let resid = num(&fit, &["fit", "residual"]).unwrap_or(f64::NAN);
    v.push(Verdict::new(
        "decay.fit",
        gamma > 0.0 && resid < 0.1 * amp,
        format!("Gamma = {gamma:.5}, RMS residual {resid:.3e} vs 10% of amplitude {:.3e}", 0.1 * amp),
    ));
    let lo = fit["fit"]["fit_window"][0].as_f64();
    let hi = fit["fit"]["fit_window"][1].as_f64();
    if let (Some(lo), Some(hi)) = (lo, hi) {
        let (tw, yw): (Vec<f64>, Vec<f64>) =
            t.iter().zip(&y).filter(|(x, _)| (lo..=hi).contains(*x)).map(|(a, b)| (*a, *b)).unzip();
        let refit = fit_exponential_decay(&tw, &yw).map(|f| f.gamma).unwrap_or(f64::NAN);
        v.push(Verdict::new(
            "decay.refit",
            (refit - gamma).abs() <= 1e-6 * gamma.abs(),
            format!("refit of evolve.csv on [{lo:.3}, {hi:.3}] gives {refit:.8} vs recorded {gamma:.8}"),
        ));
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |x| format!("{x:.5}"))
}

fn dt_label(dt: f64) -> String {
    format!("dt={dt}")
}

fn check_trajectories(cfg: &Config, run: &Run, v: &mut Vec<Verdict>) -> Result<(), RunError> {
    let t = run.table("gamma_qj.csv")?;
    let dts = t.column("dt")?;
    let gq = t.column_opt("gamma_qj")?;
    let ge = t.column_opt("gamma_ev")?;
    let ratio_col = t.column_opt("ratio")?;
    let hist = t.column("history_max_abs_z")?;
    let kern = t.column_opt("kernel_max_abs_z")?;
    let s_late = t.column("entropy_late")?;
    let s_single = t.column_opt("entropy_single")?;
    let drop = t.column("entropy_worst_drop_se")?;
    let drift = t.column("sigma_e_over_range")?;

    for i in 0..dts.len() {
        let dt = dts[i];
        let ratio = match (gq[i], ge[i]) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some(a / b),
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        let consistent = match (ratio, ratio_col[i]) {
            (Some(r), Some(c)) => close(c, r),
            (None, None) => true,
            _ => false,
        };
        if !consistent {
            v.push(Verdict::new(
                format!("gamma.consistency[{}]", dt_label(dt)),
                false,
                "ratio column disagrees with gamma_qj / gamma_ev",
            ));
        }
        let plateau_band = (2.0..=4.0).contains(&dt);
        let zeno = dt <= 0.1 + 1e-12;
        if plateau_band || zeno {
            let (pass, want) = match ratio {
                Some(r) if plateau_band => ((0.8..=1.2).contains(&r), "in [0.8, 1.2]"),
                Some(r) => (r < 0.8 && r > 0.0, "below 0.8"),
                None => (false, "defined"),
            };
            v.push(Verdict::new(
                format!("gamma.ratio[{}]", dt_label(dt)),
                pass,
                format!(
                    "Gamma_QJ/Gamma_EV = {} ({want}); Gamma_QJ = {}, Gamma_EV = {}",
                    ratio.map_or("undefined".into(), |r| format!("{r:.4}")),
                    opt(gq[i]),
                    opt(ge[i])
                ),
            ));
        }
        if plateau_band {
            v.push(Verdict::new(
                format!("entropy.nondecreasing[{}]", dt_label(dt)),
                drop[i] <= 2.0,
                format!("largest step-to-step drop {:.2} SE (limit 2)", drop[i]),
            ));
            let rel = s_single[i].map(|s| (s_late[i] - s).abs() / s);
            v.push(Verdict::new(
                format!("entropy.saturation[{}]", dt_label(dt)),
                rel.is_some_and(|r| r < 0.05),
                format!(
                    "late ensemble entropy {:.4} vs single-record {} (rel. diff {})",
                    s_late[i],
                    s_single[i].map_or("n/a".into(), |s| format!("{s:.4}")),
                    rel.map_or("n/a".into(), |r| format!("{r:.4}"))
                ),
            ));
        }
        if (dt - 2.0).abs() < 1e-12 {
            v.push(Verdict::new(
                format!("histories[{}]", dt_label(dt)),
                hist[i] < 3.0,
                format!("max |z| of ensemble mean vs unmonitored <O(t)>: {:.3} (limit 3)", hist[i]),
            ));
        }
        if (dt - 3.0).abs() < 1e-12 {
            v.push(Verdict::new(
                format!("kernel[{}]", dt_label(dt)),
                kern[i].is_some_and(|z| z < 3.0),
                format!("max |z| of lag-dt transition frequencies vs kernel: {} (limit 3)", opt(kern[i])),
            ));
        }
    }
    if let Some(d) = cfg.trajectories.as_ref().and_then(|s| s.drift.as_ref()) {
        match dts.iter().position(|x| (x - d.dt).abs() < 1e-12) {
            Some(i) => {
                let r = drift[i] / d.target;
                v.push(Verdict::new(
                    format!("drift[{}]", dt_label(d.dt)),
                    (0.5..=2.0).contains(&r),
                    format!("sigma_E/Delta_E = {:.4} vs reference {} (ratio {r:.3}, allowed [0.5, 2])", drift[i], d.target),
                ));
            }
            None => v.push(Verdict::new(format!("drift[{}]", dt_label(d.dt)), false, "dt not in gamma_qj.csv")),
        }
    }
    Ok(())
}

fn check_dos(cfg: &Config, run: &Run, v: &mut Vec<Verdict>) -> Result<(), RunError> {
    let factor = cfg.dos_measure.as_ref().map_or(1.5, |d| d.factor);
    let t = run.table("dos.csv")?;
    let inferred = t.column_opt("dos_inferred")?;
    let exact = t.column("dos_exact")?;
    let n = exact.len();
    let within = inferred
        .iter()
        .zip(&exact)
        .filter(|(i, e)| i.is_some_and(|i| i / **e <= factor && i / **e >= 1.0 / factor))
        .count();
    let frac = if n == 0 { 0.0 } else { within as f64 / n as f64 };
    v.push(Verdict::new(
        "dos.factor",
        n > 0 && frac >= 0.8,
        format!("{within}/{n} states within a factor {factor} ({:.0}%, need 80%)", 100.0 * frac),
    ));
    Ok(())
}

fn check_einstein(run: &Run, v: &mut Vec<Verdict>) -> Result<(), RunError> {
    let t = run.table("einstein.csv")?;
    let s2 = t.column("sigma2_measured")?;
    let mass = t.column_opt("mass")?;
    let beta = t.column_opt("beta")?;
    let mut devs = Vec::new();
    for i in 0..s2.len() {
        devs.push(match (mass[i], beta[i]) {
            (Some(m), Some(b)) if m * b > 0.0 => Some((s2[i] * m * b - 1.0).abs()),
            _ => None,
        });
    }
    let ok = devs.iter().filter(|d| d.is_some_and(|d| d < 0.3)).count();
    let shown: Vec<String> = devs.iter().map(|d| d.map_or("n/a".into(), |d| format!("{d:.3}"))).collect();
    v.push(Verdict::new(
        "einstein",
        devs.len() >= 5 && ok == devs.len(),
        format!("|sigma^2 m beta - 1| per state: [{}]; {ok}/{} below 0.3, need all of >= 5", shown.join(", "), devs.len()),
    ));
    Ok(())
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn check_entropy(cfg: &Config, run: &Run, v: &mut Vec<Verdict>) -> Result<(), RunError> {
    let k = run.table("kernel.csv")?;
    let ck = max_of(&k.column("ck_error")?);
    let n_ck = cfg.entropy.as_ref().map_or(0, |e| e.n_draws * e.n_ck);
    v.push(Verdict::new(
        "kernel.chapman_kolmogorov",
        ck <= 1e-12 && n_ck >= 100,
        format!("max error {ck:.2e} over {n_ck} draws (limit 1e-12, need >= 100 draws)"),
    ));
    let rows = max_of(&k.column("row_sum_error")?);
    let stat = max_of(&k.column("stationarity_error")?);
    let ident = max_of(&k.column("identity_error")?);
    let limit = max_of(&k.column("limit_error")?);
    let min_entry = k.column("min_entry")?.iter().cloned().fold(f64::INFINITY, f64::min);
    v.push(Verdict::new(
        "kernel.semigroup",
        rows <= 1e-14 && stat <= 1e-12 && ident <= 1e-15 && limit <= 1e-9 && min_entry >= 0.0,
        format!(
            "row sums {rows:.1e}, stationarity {stat:.1e}, K(0) {ident:.1e}, K(50/Gamma) {limit:.1e}, min entry {min_entry:.2e}"
        ),
    ));
    let e = run.table("entropy.csv")?;
    let inc = e.column("min_increment")?;
    let worst = inc.iter().cloned().fold(f64::INFINITY, f64::min);
    let n_bad = inc.iter().filter(|x| **x < -1e-12).count();
    let oracle = run.json("oracle.json")?;
    let endpoint = num(&oracle, &["uniform_endpoint_error"]).unwrap_or(f64::NAN);
    v.push(Verdict::new(
        "entropy.monotone",
        n_bad == 0 && endpoint <= 1e-9,
        format!(
            "{n_bad}/{} delta starts lose entropy (worst increment {worst:.3e}); uniform endpoint error {endpoint:.1e}",
            inc.len()
        ),
    ));
    let p = e.column("p_s0")?;
    let thr = e.column("threshold")?;
    let (mut n_pred, mut n_bad_pred) = (0, 0);
    for i in 0..inc.len() {
        if p[i] >= thr[i] {
            n_pred += 1;
            n_bad_pred += (inc[i] < -1e-12) as usize;
        }
    }
    v.push(Verdict::new(
        "entropy.monotone_where_predicted",
        n_bad_pred == 0,
        format!("{n_bad_pred}/{n_pred} starts with p_inf(s0) >= exp(-S(p_inf)) lose entropy"),
    ));
    Ok(())
}

fn check_ou(run: &Run, v: &mut Vec<Verdict>) -> Result<(), RunError> {
    let j = run.json("ou.json")?;
    let est = num(&j, &["stationary_variance"]).unwrap_or(f64::NAN);
    let se = num(&j, &["stationary_variance_se"]).unwrap_or(f64::NAN);
    let want = num(&j, &["stationary_variance_expected"]).unwrap_or(f64::NAN);
    let z = (est - want) / se;
    v.push(Verdict::new(
        "ou.stationary",
        z.abs() < 3.0,
        format!("variance {est:.5} vs D gamma/k = {want:.5} (z = {z:.2})"),
    ));
    if j.get("shaken").is_some() {
        let got = num(&j, &["shaken", "delta_x2"]).unwrap_or(f64::NAN);
        let pred = num(&j, &["shaken", "predicted"]).unwrap_or(f64::NAN);
        let rel = (got - pred).abs() / pred;
        v.push(Verdict::new(
            "ou.shaken",
            rel < 0.1,
            format!("delta_x^2 = {got:.5} vs v_std^2 gamma^2/k^2 = {pred:.5} (rel. diff {rel:.3})"),
        ));
    }
    if j.get("einstein").is_some() {
        let got = num(&j, &["einstein", "variance"]).unwrap_or(f64::NAN);
        let se = num(&j, &["einstein", "variance_se"]).unwrap_or(f64::NAN);
        let want = num(&j, &["einstein", "expected"]).unwrap_or(f64::NAN);
        let z = (got - want) / se;
        v.push(Verdict::new("ou.einstein", z.abs() < 3.0, format!("variance {got:.5} vs T/k = {want:.5} (z = {z:.2})")));
    }
    Ok(())
}

fn check_ensemble(run: &Run, v: &mut Vec<Verdict>) -> Result<(), RunError> {
    let t = run.table("ensemble_variance.csv")?;
    let var = t.column("variance")?;
    let pred = t.column("predicted")?;
    let worst = var.iter().zip(&pred).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
    v.push(Verdict::new(
        "ensemble.variance",
        !var.is_empty() && worst < 0.05,
        format!("worst binned relative deviation {worst:.4} over {} offsets (limit 0.05)", var.len()),
    ));
    let j = run.json("ensemble.json")?;
    let emp = num(&j, &["four_point", "empirical"]).unwrap_or(f64::NAN);
    let se = num(&j, &["four_point", "std_err"]).unwrap_or(f64::NAN);
    let p = num(&j, &["four_point", "predicted"]).unwrap_or(f64::NAN);
    let z = (emp - p) / se;
    v.push(Verdict::new(
        "ensemble.four_point",
        p < 0.0 && z.abs() < 3.0,
        format!("empirical {emp:.4e} +- {se:.2e} vs predicted {p:.4e} (z = {z:.2})"),
    ));
    Ok(())
}
