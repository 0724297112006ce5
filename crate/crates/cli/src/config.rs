//! Declarative pipeline configuration (TOML) and command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ndebias::{AdapterTrainConfig, InlpConfig, SynthConfig};

use crate::exit::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed mixed into every stochastic stage.
    pub seed: u64,
    /// Output directory for all artifacts.
    pub out: PathBuf,
    pub data: DataConfig,
    pub rff: RffConfig,
    pub inlp: InlpConfig,
    pub adapter: AdapterTrainConfig,
    pub report: ReportConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("ndebias-out"),
            data: DataConfig::default(),
            rff: RffConfig::default(),
            inlp: InlpConfig::default(),
            adapter: AdapterTrainConfig::default(),
            report: ReportConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Embedding file (`.csv` or binary); relative to the output directory
    /// when not found as given.
    pub embeddings: PathBuf,
    /// Ground-truth sidecar holding the toy-task item embeddings.
    pub items: Option<PathBuf>,
    /// Attributes to debias; empty means every attribute in the file.
    pub attributes: Vec<String>,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            embeddings: PathBuf::from("embeddings.ndbs"),
            items: None,
            attributes: Vec::new(),
            split: (0.7, 0.1, 0.2),
        }
    }
}

/// RFF bandwidth: a number, or `"auto"` for the median heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Fixed(f64),
    Named(String),
}

impl Sigma {
    pub fn fixed(&self) -> Result<Option<f64>, CliError> {
        match self {
            Sigma::Fixed(v) if *v > 0.0 && v.is_finite() => Ok(Some(*v)),
            Sigma::Fixed(v) => Err(CliError::validation(format!("rff.sigma must be positive, got {v}"))),
            Sigma::Named(s) if s == "auto" => Ok(None),
            Sigma::Named(s) => Err(CliError::validation(format!(
                "rff.sigma must be a number or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RffConfig {
    /// Number of Fourier features `D`; 0 disables the lift.
    pub dim: usize,
    pub sigma: Sigma,
    /// Perturbation scale applied while fitting probes.
    pub eta: f64,
    pub seed: u64,
}

impl Default for RffConfig {
    fn default() -> Self {
        RffConfig {
            dim: 4096,
            sigma: Sigma::Named("auto".into()),
            eta: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub hit_ks: Vec<usize>,
    pub negatives: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            hit_ks: vec![1, 3, 10],
            negatives: 99,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::validation(format!("bad config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.inlp.validate()?;
        self.adapter.validate()?;
        self.rff.sigma.fixed()?;
        if !(self.rff.eta >= 0.0 && self.rff.eta.is_finite()) {
            return Err(CliError::validation(format!(
                "rff.eta must be non-negative, got {}",
                self.rff.eta
            )));
        }
        if self.report.hit_ks.contains(&0) {
            return Err(CliError::validation("report.hit_ks entries must be positive"));
        }
        Ok(())
    }

    /// Embedding path: as given if it exists, else under the output directory.
    pub fn embeddings_path(&self) -> PathBuf {
        resolve(&self.data.embeddings, &self.out)
    }

    pub fn items_path(&self) -> Option<PathBuf> {
        self.data.items.as_ref().map(|p| resolve(p, &self.out))
    }
}

fn resolve(p: &Path, out: &Path) -> PathBuf {
    if p.is_absolute() || p.exists() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

/// Flags overriding individual config fields; names mirror config paths.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long = "data.embeddings", value_name = "PATH", global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long = "data.items", value_name = "PATH", global = true)]
    pub items: Option<PathBuf>,
    /// Comma-separated attribute names.
    #[arg(long = "data.attributes", value_name = "NAMES", value_delimiter = ',', global = true)]
    pub attributes: Option<Vec<String>>,
    #[arg(long = "rff.dim", value_name = "D", global = true)]
    pub rff_dim: Option<usize>,
    /// Bandwidth, or "auto".
    #[arg(long = "rff.sigma", value_name = "SIGMA", global = true)]
    pub rff_sigma: Option<String>,
    #[arg(long = "rff.eta", value_name = "ETA", global = true)]
    pub rff_eta: Option<f64>,
    #[arg(long = "inlp.tau", value_name = "TAU", global = true)]
    pub tau: Option<f64>,
    #[arg(long = "inlp.max_iterations", value_name = "N", global = true)]
    pub max_iterations: Option<usize>,
    #[arg(long = "inlp.max_refinements", value_name = "N", global = true)]
    pub max_refinements: Option<usize>,
    #[arg(long = "adapter.epochs", value_name = "N", global = true)]
    pub epochs: Option<usize>,
    #[arg(long = "adapter.lr", value_name = "LR", global = true)]
    pub lr: Option<f64>,
    #[arg(long = "adapter.batch_size", value_name = "N", global = true)]
    pub batch_size: Option<usize>,
    #[arg(long = "adapter.rank", value_name = "R", global = true)]
    pub rank: Option<usize>,
    #[arg(long = "adapter.lambda_entropy", value_name = "W", global = true)]
    pub lambda_entropy: Option<f64>,
    #[arg(long = "adapter.lambda_l1", value_name = "W", global = true)]
    pub lambda_l1: Option<f64>,
    /// Turn off both adapter penalties.
    #[arg(long = "adapter.no_regularizers", global = true)]
    pub no_regularizers: bool,
    #[arg(long = "synth.n", value_name = "N", global = true)]
    pub synth_n: Option<usize>,
    #[arg(long = "synth.d", value_name = "D", global = true)]
    pub synth_d: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<(), CliError> {
        if let Some(p) = &self.embeddings {
            cfg.data.embeddings = p.clone();
        }
        if let Some(p) = &self.items {
            cfg.data.items = Some(p.clone());
        }
        if let Some(a) = &self.attributes {
            cfg.data.attributes = a.clone();
        }
        if let Some(v) = self.rff_dim {
            cfg.rff.dim = v;
        }
        if let Some(s) = &self.rff_sigma {
            cfg.rff.sigma = match s.parse::<f64>() {
                Ok(v) => Sigma::Fixed(v),
                Err(_) => Sigma::Named(s.clone()),
            };
        }
        if let Some(v) = self.rff_eta {
            cfg.rff.eta = v;
        }
        if let Some(v) = self.tau {
            cfg.inlp.tau = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.inlp.max_iterations = v;
        }
        if let Some(v) = self.max_refinements {
            cfg.inlp.max_refinements = v;
        }
        if let Some(v) = self.epochs {
            cfg.adapter.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.adapter.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.adapter.batch_size = v;
        }
        if let Some(v) = self.rank {
            cfg.adapter.rank = v;
        }
        if let Some(v) = self.lambda_entropy {
            cfg.adapter.lambda_entropy = v;
        }
        if let Some(v) = self.lambda_l1 {
            cfg.adapter.lambda_l1 = v;
        }
        if self.no_regularizers {
            cfg.adapter = cfg.adapter.clone().without_regularizers();
        }
        if let Some(v) = self.synth_n {
            cfg.synth.n = v;
        }
        if let Some(v) = self.synth_d {
            cfg.synth.d = v;
        }
        cfg.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: PipelineConfig = toml::from_str("seed = 3\n[inlp]\ntau = 0.1\n[rff]\nsigma = 2.5\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.inlp.tau, 0.1);
        assert_eq!(cfg.inlp.max_refinements, 3);
        assert_eq!(cfg.rff.sigma.fixed().unwrap(), Some(2.5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[inlp]\ntua = 0.1\n").is_err());
    }

    #[test]
    fn sigma_must_be_auto_or_positive() {
        assert_eq!(Sigma::Named("auto".into()).fixed().unwrap(), None);
        assert!(Sigma::Named("median".into()).fixed().is_err());
        assert!(Sigma::Fixed(-1.0).fixed().is_err());
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut cfg = PipelineConfig::default();
        let o = Overrides {
            tau: Some(0.2),
            rff_sigma: Some("1.5".into()),
            no_regularizers: true,
            ..Overrides::default()
        };
        o.apply(&mut cfg).unwrap();
        assert_eq!(cfg.inlp.tau, 0.2);
        assert_eq!(cfg.rff.sigma, Sigma::Fixed(1.5));
        assert_eq!(cfg.adapter.lambda_l1, 0.0);
        let bad = Overrides {
            tau: Some(1.5),
            ..Overrides::default()
        };
        assert!(bad.apply(&mut PipelineConfig::default()).is_err());
    }
}
