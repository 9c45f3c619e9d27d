//! TOML experiment configuration.
//!
//! Every field has a default; unknown keys are rejected. The fully resolved
//! config is echoed into the output directory, and its serialized form is
//! what the manifest hashes.

use crate::error::LabError;
use crate::grid::GridDescriptor;
use crate::noise::KernelSpec;
use crate::nonlinear::{Nonlinearity, StoppingParams};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Lyapunov,
    FkConsistency,
    Sync,
    Contraction,
    Corrector,
    Generator,
    Supermartingale,
    Moments,
    KernelBounds,
    StoppingStats,
    AllenCahnThreshold,
}

impl ExperimentKind {
    pub fn all() -> &'static [ExperimentKind] {
        use ExperimentKind::*;
        &[
            Lyapunov,
            FkConsistency,
            Sync,
            Contraction,
            Corrector,
            Generator,
            Supermartingale,
            Moments,
            KernelBounds,
            StoppingStats,
            AllenCahnThreshold,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Lyapunov => "lyapunov",
            ExperimentKind::FkConsistency => "fk-consistency",
            ExperimentKind::Sync => "sync",
            ExperimentKind::Contraction => "contraction",
            ExperimentKind::Corrector => "corrector",
            ExperimentKind::Generator => "generator",
            ExperimentKind::Supermartingale => "supermartingale",
            ExperimentKind::Moments => "moments",
            ExperimentKind::KernelBounds => "kernel-bounds",
            ExperimentKind::StoppingStats => "stopping-stats",
            ExperimentKind::AllenCahnThreshold => "allen-cahn-threshold",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            ExperimentKind::Lyapunov => "exponent estimators on the linear flow (slope and FK)",
            ExperimentKind::FkConsistency => "two-route exponent consistency on shared noise",
            ExperimentKind::Sync => "coupled projective pairs: synchronization rates",
            ExperimentKind::Contraction => "Birkhoff factors of flow kernels vs observed ratios",
            ExperimentKind::Corrector => "corrector estimates, norms and admissible eta",
            ExperimentKind::Generator => "generator identity residual for the corrector",
            ExperimentKind::Supermartingale => "corrected functional decay at checkpoints",
            ExperimentKind::Moments => "negative moments of min u over scales and times",
            ExperimentKind::KernelBounds => "flow kernel positivity, entries and c_K moments",
            ExperimentKind::StoppingStats => "stopping-time statistics and piecewise invariants",
            ExperimentKind::AllenCahnThreshold => "zero crossing of lambda(alpha) for shifted AC",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ExperimentKind::all()
            .iter()
            .find(|k| k.name() == name)
            .copied()
            .ok_or_else(|| LabError::UnknownExperiment(name.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: u32,
    pub points_per_axis: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 1, points_per_axis: 128 }
    }
}

impl GridConfig {
    pub fn descriptor(&self) -> Result<GridDescriptor> {
        GridDescriptor::new(self.dim, self.points_per_axis)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// constant | gaussian-periodic | matrix
    pub kind: String,
    pub variance: f64,
    pub length_scale: f64,
    /// CSV path for kind = "matrix" (row-major, total_points lines).
    pub path: String,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kind: "gaussian-periodic".into(),
            variance: 1.0,
            length_scale: 0.25,
            path: String::new(),
        }
    }
}

impl KernelConfig {
    pub fn spec(&self, grid: GridDescriptor) -> Result<KernelSpec> {
        match self.kind.as_str() {
            "constant" => Ok(KernelSpec::Constant { variance: self.variance }),
            "gaussian-periodic" => Ok(KernelSpec::GaussianPeriodic {
                length_scale: self.length_scale,
                variance: self.variance,
            }),
            "matrix" => {
                let text = std::fs::read_to_string(&self.path)
                    .map_err(|e| LabError::io(self.path.clone(), e))?;
                let mut values = Vec::new();
                for line in text.lines() {
                    for tok in line.split(',') {
                        let tok = tok.trim();
                        if tok.is_empty() {
                            continue;
                        }
                        values.push(tok.parse::<f64>().map_err(|e| {
                            LabError::InvalidConfig(format!("bad kernel entry {tok}: {e}"))
                        })?);
                    }
                }
                let n_tot = grid.total_points();
                if values.len() != n_tot * n_tot {
                    return Err(LabError::InvalidConfig(format!(
                        "kernel matrix has {} entries, expected {}",
                        values.len(),
                        n_tot * n_tot
                    )));
                }
                Ok(KernelSpec::Matrix { values })
            }
            other => Err(LabError::InvalidConfig(format!("unknown kernel kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearityConfig {
    /// linear | logistic | shifted-allen-cahn
    pub preset: String,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        NonlinearityConfig { preset: "linear".into(), gamma: 1.0, beta: 1.0, alpha: 1.2 }
    }
}

impl NonlinearityConfig {
    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        let nl = match self.preset.as_str() {
            "linear" => Nonlinearity::Linear { gamma: self.gamma },
            "logistic" => Nonlinearity::Logistic { gamma: self.gamma, beta: self.beta },
            "shifted-allen-cahn" => Nonlinearity::ShiftedAllenCahn { alpha: self.alpha },
            other => {
                return Err(LabError::InvalidConfig(format!("unknown nonlinearity preset {other}")))
            }
        };
        nl.validate()?;
        Ok(nl)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub record_dt: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { dt: 1e-3, horizon: 50.0, burn_in: 2.0, record_dt: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { n_paths: 200 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingConfig {
    pub frak_t: f64,
    pub eps0: f64,
    pub eps: f64,
    pub eps1: f64,
    pub delta: f64,
    pub big_m: f64,
    pub rho: f64,
    pub c_dtm: f64,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        let p = StoppingParams::default();
        StoppingConfig {
            frak_t: p.frak_t,
            eps0: p.eps0,
            eps: p.eps,
            eps1: p.eps1,
            delta: p.delta,
            big_m: p.big_m,
            rho: p.rho,
            c_dtm: p.c_dtm,
        }
    }
}

impl StoppingConfig {
    pub fn params(&self) -> StoppingParams {
        StoppingParams {
            frak_t: self.frak_t,
            eps0: self.eps0,
            eps: self.eps,
            eps1: self.eps1,
            delta: self.delta,
            big_m: self.big_m,
            rho: self.rho,
            c_dtm: self.c_dtm,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub eta: f64,
    pub u0_scales: Vec<f64>,
    pub checkpoints: Vec<f64>,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            eta: 0.1,
            u0_scales: vec![1e-1, 1e-2, 1e-3, 1e-4],
            checkpoints: vec![1.0, 2.0, 5.0, 10.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncExpConfig {
    pub kernel_tau_paths: usize,
    pub kernel_tau_windows: usize,
    /// Optional explicit fit window; zeros mean the default (second half,
    /// capped to the resolvable range).
    pub fit_lo: f64,
    pub fit_hi: f64,
}

impl Default for SyncExpConfig {
    fn default() -> Self {
        SyncExpConfig { kernel_tau_paths: 2, kernel_tau_windows: 2, fit_lo: 0.0, fit_hi: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorConfig {
    pub n_points: usize,
    pub inner_paths: usize,
    pub trunc_t: f64,
    pub stationary_points: usize,
    pub calib_pairs: usize,
    pub calib_horizon: f64,
    pub lambda_paths: usize,
    pub lambda_horizon: f64,
    pub h: f64,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        CorrectorConfig {
            n_points: 20,
            inner_paths: 24,
            trunc_t: 8.0,
            stationary_points: 12,
            calib_pairs: 32,
            calib_horizon: 8.0,
            lambda_paths: 48,
            lambda_horizon: 30.0,
            h: 0.02,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupermartingaleExpConfig {
    /// 0 means "use min(eta0/2, 0.05)".
    pub eta: f64,
    pub checkpoints: Vec<f64>,
    pub inner_paths: usize,
    pub inner_trunc_t: f64,
}

impl Default for SupermartingaleExpConfig {
    fn default() -> Self {
        SupermartingaleExpConfig {
            eta: 0.0,
            checkpoints: vec![1.0, 2.0, 5.0, 10.0],
            inner_paths: 6,
            inner_trunc_t: 6.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllenCahnConfig {
    pub alphas: Vec<f64>,
}

impl Default for AllenCahnConfig {
    fn default() -> Self {
        AllenCahnConfig { alphas: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8] }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelBoundsConfig {
    pub eta: f64,
    pub windows: [f64; 2],
    pub c_k_paths: usize,
}

impl Default for KernelBoundsConfig {
    fn default() -> Self {
        KernelBoundsConfig { eta: 0.05, windows: [0.1, 1.0], c_k_paths: 200 }
    }
}

/// Top-level experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub nonlinearity: NonlinearityConfig,
    pub time: TimeConfig,
    pub ensemble: EnsembleConfig,
    pub stopping: StoppingConfig,
    pub moments: MomentsConfig,
    pub sync: SyncExpConfig,
    pub corrector: CorrectorConfig,
    pub supermartingale: SupermartingaleExpConfig,
    pub allen_cahn: AllenCahnConfig,
    pub kernel_bounds: KernelBoundsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: "lyapunov".into(),
            seed: 7,
            grid: GridConfig::default(),
            kernel: KernelConfig::default(),
            nonlinearity: NonlinearityConfig::default(),
            time: TimeConfig::default(),
            ensemble: EnsembleConfig::default(),
            stopping: StoppingConfig::default(),
            moments: MomentsConfig::default(),
            sync: SyncExpConfig::default(),
            corrector: CorrectorConfig::default(),
            supermartingale: SupermartingaleExpConfig::default(),
            allen_cahn: AllenCahnConfig::default(),
            kernel_bounds: KernelBoundsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::InvalidConfig(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        ExperimentKind::parse(&self.experiment)
    }
}
