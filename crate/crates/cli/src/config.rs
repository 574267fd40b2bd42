//! Experiment configuration files (TOML). One file describes one
//! experiment; sweeps are lists inside it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermalab_core::model::{ModelParams, ObservableSpec, DEFAULT_MAX_DIM};
use thermalab_core::ou::{OuParams, OuScheme};

use crate::RunError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Evolve,
    Trajectories,
    DosMeasure,
    Einstein,
    Entropy,
    Ou,
    SampleEnsemble,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Evolve => "evolve",
            Self::Trajectories => "trajectories",
            Self::DosMeasure => "dos_measure",
            Self::Einstein => "einstein",
            Self::Entropy => "entropy",
            Self::Ou => "ou",
            Self::SampleEnsemble => "sample_ensemble",
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, Self::Evolve | Self::Trajectories | Self::DosMeasure | Self::Einstein)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateRule {
    /// Free state maximizing O_aa, closest to the median free energy.
    MaxObservable,
    Index { alpha: usize },
    /// Maximal-O free states in the central half of the spectrum, thinned
    /// evenly to at most `count`.
    Central { count: usize },
}

impl Default for StateRule {
    fn default() -> Self {
        Self::MaxObservable
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_max: f64,
    pub n_times: usize,
    #[serde(default)]
    pub grid: GridKind,
    /// First nonzero time of a log grid.
    pub t_min: Option<f64>,
}

impl TimeGrid {
    pub fn times(&self) -> thermalab_core::Result<Vec<f64>> {
        match self.grid {
            GridKind::Linear => thermalab_core::dynamics::linear_times(self.t_max, self.n_times),
            GridKind::Log => {
                thermalab_core::dynamics::log_times(self.t_min.unwrap_or(self.t_max * 1e-3), self.t_max, self.n_times)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSection {
    /// Central fraction of the spectrum whose eigenstates are binned.
    #[serde(default = "default_window_fraction")]
    pub window_fraction: f64,
    #[serde(default = "default_envelope_bins")]
    pub n_bins: usize,
    pub max_offset: f64,
}

fn default_window_fraction() -> f64 {
    0.2
}

fn default_envelope_bins() -> usize {
    40
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSection {
    pub times: TimeGrid,
    pub envelope: Option<EnvelopeSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub dt_list: Vec<f64>,
    /// Fixed record length; default max(50, ceil(40 / dt)).
    pub n_meas: Option<usize>,
    pub n_real: usize,
    /// Unmonitored reference run used for Gamma_EV.
    pub reference: TimeGrid,
    /// Length of the single long record used for its outcome entropy.
    #[serde(default = "default_single_record")]
    pub single_record: usize,
    /// Number of individual trajectories written per dt.
    #[serde(default = "default_records_written")]
    pub records_written: usize,
    /// Reference level for the energy-drift check in `verify`.
    pub drift: Option<DriftTarget>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftTarget {
    pub dt: f64,
    /// Expected time-averaged sigma_E / Delta E.
    pub target: f64,
}

fn default_single_record() -> usize {
    1000
}

fn default_records_written() -> usize {
    3
}

impl TrajectorySection {
    pub fn n_meas_for(&self, dt: f64) -> usize {
        self.n_meas.unwrap_or_else(|| 50usize.max((40.0 / dt).ceil() as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosSection {
    pub times: TimeGrid,
    /// Kernel bandwidth for the exact DOS; default rule when absent.
    pub bandwidth: Option<f64>,
    /// Agreement band: inferred/exact within [1/f, f].
    #[serde(default = "default_dos_factor")]
    pub factor: f64,
}

fn default_dos_factor() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EinsteinSection {
    /// Time grid for the decay fit that sets Gamma per state.
    pub times: TimeGrid,
    /// Bath kernel bandwidth; default rule when absent.
    pub bath_bandwidth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySection {
    #[serde(default = "default_d_s")]
    pub d_s: usize,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    /// Chapman-Kolmogorov triples per draw.
    #[serde(default = "default_draws")]
    pub n_ck: usize,
    /// Draws (taken first) that also get the entropy check.
    #[serde(default = "default_draws")]
    pub n_entropy: usize,
    #[serde(default = "default_entropy_steps")]
    pub n_times: usize,
}

fn default_d_s() -> usize {
    7
}

fn default_draws() -> usize {
    50
}

fn default_entropy_steps() -> usize {
    400
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    pub params: OuParams,
    pub n_paths: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_scheme")]
    pub scheme: OuScheme,
    /// Shaken-trap variant: drift spread and averaging start.
    pub v_std: Option<f64>,
    #[serde(default)]
    pub burn_in: f64,
    /// Einstein identity check: rerun with D = T / gamma.
    pub temperature: Option<f64>,
}

fn default_record_every() -> usize {
    10
}

fn default_scheme() -> OuScheme {
    OuScheme::EulerMaruyama
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub grid: usize,
    /// Envelope half-width in units of the level spacing.
    pub gamma: f64,
    /// Number of eigenstates sampled, centred on the grid.
    pub n_rows: usize,
    pub n_members: usize,
    #[serde(default = "default_ensemble_bins")]
    pub n_bins: usize,
    /// Offset range |alpha - alpha'| for the four-point pairs.
    #[serde(default = "default_pair_range")]
    pub pair_range: usize,
}

fn default_ensemble_bins() -> usize {
    41
}

fn default_pair_range() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub max_dim: Option<usize>,
    pub model: Option<ModelParams>,
    pub observable: Option<ObservableSpec>,
    #[serde(default)]
    pub state: StateRule,
    pub evolve: Option<EvolveSection>,
    pub trajectories: Option<TrajectorySection>,
    pub dos_measure: Option<DosSection>,
    pub einstein: Option<EinsteinSection>,
    pub entropy: Option<EntropySection>,
    pub ou: Option<OuSection>,
    pub sample_ensemble: Option<EnsembleSection>,
}

impl Config {
    pub fn from_toml(src: &str) -> Result<Self, RunError> {
        let cfg: Config = toml::from_str(src).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), RunError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_toml(&src)?, src))
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim.unwrap_or(DEFAULT_MAX_DIM)
    }

    fn validate(&self) -> Result<(), RunError> {
        let present = [
            (ExperimentKind::Evolve, self.evolve.is_some()),
            (ExperimentKind::Trajectories, self.trajectories.is_some()),
            (ExperimentKind::DosMeasure, self.dos_measure.is_some()),
            (ExperimentKind::Einstein, self.einstein.is_some()),
            (ExperimentKind::Entropy, self.entropy.is_some()),
            (ExperimentKind::Ou, self.ou.is_some()),
            (ExperimentKind::SampleEnsemble, self.sample_ensemble.is_some()),
        ];
        for (kind, has) in present {
            if kind == self.experiment && !has {
                return Err(RunError::Config(format!("missing [{}] section", kind.name())));
            }
            if kind != self.experiment && has {
                return Err(RunError::Config(format!(
                    "section [{}] does not belong to a {} experiment",
                    kind.name(),
                    self.experiment.name()
                )));
            }
        }
        if self.experiment.needs_model() {
            if self.model.is_none() || self.observable.is_none() {
                return Err(RunError::Config(format!("{} needs model and observable", self.experiment.name())));
            }
        } else if self.model.is_some() || self.observable.is_some() {
            return Err(RunError::Config(format!("{} takes no model or observable", self.experiment.name())));
        }
        let single_state = matches!(self.experiment, ExperimentKind::Evolve | ExperimentKind::Trajectories);
        if single_state && matches!(self.state, StateRule::Central { .. }) {
            return Err(RunError::Config("central state rule needs a multi-state experiment".into()));
        }
        if let Some(t) = &self.trajectories {
            if t.dt_list.is_empty() || t.dt_list.iter().any(|d| !(*d > 0.0)) {
                return Err(RunError::Config("dt_list must hold positive intervals".into()));
            }
            if let Some(d) = &t.drift {
                if !t.dt_list.contains(&d.dt) || !(d.target > 0.0) {
                    return Err(RunError::Config("drift check needs a listed dt and a positive target".into()));
                }
            }
            if t.n_real < 2 {
                return Err(RunError::Config("n_real must be at least 2".into()));
            }
        }
        if let Some(o) = &self.ou {
            o.params.validate().map_err(|e| RunError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Output directory: --out, else $THERMALAB_OUT/<config stem>, else
/// ./runs/<config stem>.
pub fn resolve_output(out: Option<PathBuf>, env_root: Option<PathBuf>, config: &Path) -> PathBuf {
    if let Some(o) = out {
        return o;
    }
    let stem = config.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "run".into());
    env_root.unwrap_or_else(|| PathBuf::from("runs")).join(stem)
}
