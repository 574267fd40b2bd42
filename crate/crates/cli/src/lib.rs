//! Experiment driver: one TOML config describes one experiment. `run`
//! writes CSV/JSON artifacts and a manifest; `verify` re-reads them and
//! evaluates the acceptance checks that apply to that experiment.

pub mod config;
pub mod output;
pub mod pipelines;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::Value;
use thiserror::Error;

use config::{Config, ExperimentKind};
use output::{sha256_hex, Manifest, Outputs, FAILED_MARKER, MANIFEST};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numeric(thermalab_core::Error),

    #[error("acceptance failure: {0}")]
    Acceptance(String),

    #[error("missing artifacts: {}", .0.join(", "))]
    Missing(Vec<String>),

    #[error("output error: {0}")]
    Output(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<thermalab_core::Error> for RunError {
    fn from(e: thermalab_core::Error) -> Self {
        use thermalab_core::Error as E;
        match e {
            E::InvalidParameter(m) => RunError::Config(m),
            E::DimensionTooLarge { .. } => RunError::Config(e.to_string()),
            E::Io(io) => RunError::Io(io),
            E::Csv(_) | E::Format(_) => RunError::Output(e.to_string()),
            other => RunError::Numeric(other),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(_) => 3,
            RunError::Acceptance(_) => 4,
            RunError::Missing(_) => 5,
            RunError::Output(_) | RunError::Io(_) => 1,
        }
    }
}

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "THERMALAB_OUT";

pub fn output_dir(config_path: &Path, out: Option<PathBuf>) -> PathBuf {
    config::resolve_output(out, std::env::var_os(OUT_ENV).map(PathBuf::from), config_path)
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub report: Value,
}

fn dispatch(cfg: &Config, out: &mut Outputs) -> Result<Value, RunError> {
    let missing = || RunError::Config(format!("missing [{}] section", cfg.experiment.name()));
    match cfg.experiment {
        ExperimentKind::Evolve => pipelines::evolve(cfg, cfg.evolve.as_ref().ok_or_else(missing)?, out),
        ExperimentKind::Trajectories => {
            pipelines::trajectories(cfg, cfg.trajectories.as_ref().ok_or_else(missing)?, out)
        }
        ExperimentKind::DosMeasure => pipelines::dos_measure(cfg, cfg.dos_measure.as_ref().ok_or_else(missing)?, out),
        ExperimentKind::Einstein => pipelines::einstein(cfg, cfg.einstein.as_ref().ok_or_else(missing)?, out),
        ExperimentKind::Entropy => pipelines::entropy(cfg, cfg.entropy.as_ref().ok_or_else(missing)?, out),
        ExperimentKind::Ou => pipelines::ou(cfg, cfg.ou.as_ref().ok_or_else(missing)?, out),
        ExperimentKind::SampleEnsemble => {
            pipelines::sample_ensemble(cfg, cfg.sample_ensemble.as_ref().ok_or_else(missing)?, out)
        }
    }
}

/// Parse, validate and execute a config. Nothing is written when the
/// config is rejected; a failed pipeline leaves its partial outputs and a
/// FAILED marker holding the error.
pub fn run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<RunSummary, RunError> {
    let (mut cfg, src) = Config::load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = output_dir(config_path, out);
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut outputs = Outputs::new(&dir)?;
    let report = match dispatch(&cfg, &mut outputs) {
        Ok(r) => r,
        Err(e) => {
            std::fs::write(dir.join(FAILED_MARKER), format!("{e}\n"))?;
            return Err(e);
        }
    };
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        experiment: cfg.experiment.name().into(),
        config_file: config_path.display().to_string(),
        config_sha256: sha256_hex(src.as_bytes()),
        seed: cfg.seed,
        started_unix,
        wall_time_s: started.elapsed().as_secs_f64(),
        blas_coretype: std::env::var("OPENBLAS_CORETYPE").ok(),
        status: "ok".into(),
        outputs: outputs.files()?,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST), text)?;
    Ok(RunSummary { dir, manifest, report })
}

/// Write the interacting Hamiltonian of a config's model as CSV.
pub fn dump_matrix(config_path: &Path, out: Option<PathBuf>) -> Result<PathBuf, RunError> {
    let (cfg, _) = Config::load(config_path)?;
    let params = cfg.model.as_ref().ok_or_else(|| RunError::Config("config has no model".into()))?;
    let model = params.build(cfg.max_dim())?;
    let dir = output_dir(config_path, out);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("hamiltonian.csv");
    thermalab_core::export::matrix_table(&model.total()).write(&path)?;
    Ok(path)
}

pub fn list_models() -> String {
    let mut s = String::new();
    s.push_str("models (set `kind` under [model]):\n");
    s.push_str("  oscillator_chain  n_sites, spin_cutoff, h_x, j\n");
    s.push_str("  blbq_chain        n_sites, spin, h_z, h_x, j, delta, q\n");
    s.push_str("  spin_half_chain   n_sites, b_z_sys, b_x_sys, b_z_bath, b_x_bath, j_z_bath, j_x_bath, j_z_sb, j_x_sb\n");
    s.push_str("observables: position_site_1, sz_site_1, sz_global, sigma_z_site_1, projector(<value>)\n");
    s.push_str("experiments: evolve, trajectories, dos_measure, einstein, entropy, ou, sample_ensemble\n");
    s
}

extern "C" {
    fn openblas_set_num_threads(n: std::os::raw::c_int);
}

pub fn set_blas_threads(n: usize) {
    // SAFETY: plain setter in the linked OpenBLAS; no pointers involved.
    unsafe { openblas_set_num_threads(n.clamp(1, 1024) as std::os::raw::c_int) }
}
