use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::cluster::FitOptions;
use crate::error::{KmglError, Result};
use crate::filter::FilterParams;
use crate::io::read_json;
use crate::synth::SynthConfig;

/// Where `fit` gets its node-side kernels from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelSpec {
    /// `kernels/kernel_<k>.csv` inside the dataset directory.
    Dataset,
    Identity,
    /// Diffusion kernels of the dataset's `graphs/` with the given `η`.
    Diffusion(f64),
    /// One shared kernel matrix read from a CSV file.
    File(PathBuf),
    /// Gaussian kernel over node coordinates (`coords`) with this bandwidth.
    Rbf(f64),
}

impl FromStr for KernelSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let number = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| format!("kernel parameter must be a positive number, got {v:?}"))
        };
        match s.split_once(':') {
            None if s == "dataset" => Ok(Self::Dataset),
            None if s == "identity" => Ok(Self::Identity),
            Some(("diffusion", v)) => Ok(Self::Diffusion(number(v)?)),
            Some(("rbf", v)) => Ok(Self::Rbf(number(v)?)),
            Some(("file", v)) if !v.is_empty() => Ok(Self::File(PathBuf::from(v))),
            _ => Err(format!(
                "unknown kernel {s:?}; expected dataset, identity, diffusion:<eta>, file:<path> or rbf:<bandwidth>"
            )),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dataset => write!(f, "dataset"),
            Self::Identity => write!(f, "identity"),
            Self::Diffusion(eta) => write!(f, "diffusion:{eta}"),
            Self::File(p) => write!(f, "file:{}", p.display()),
            Self::Rbf(h) => write!(f, "rbf:{h}"),
        }
    }
}

impl TryFrom<String> for KernelSpec {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<KernelSpec> for String {
    fn from(k: KernelSpec) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Clusters,
    Snr,
    MissingRate,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Clusters => "clusters",
            Axis::Snr => "snr",
            Axis::MissingRate => "missing-rate",
        }
    }
}

/// Every setting of every subcommand. Loaded from a JSON file and then
/// overridden by command-line flags of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 picks one per available CPU.
    pub jobs: usize,

    pub n: usize,
    pub m: usize,
    pub clusters: usize,
    pub p: f64,
    pub eta: f64,
    pub snr_db: f64,
    pub missing_rate: f64,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub restarts: usize,
    pub max_rounds: usize,
    pub kernel: KernelSpec,
    pub coords: Option<PathBuf>,
    pub tied_alpha_beta: bool,

    pub axis: Option<Axis>,
    pub grid: Vec<f64>,
    pub realizations: usize,
    /// Explicit dataset seeds, one per realization.
    pub seeds: Option<Vec<u64>>,
    pub kmeans_restarts: usize,
}

impl Default for Config {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let fit = FitOptions::default();
        Self {
            seed: synth.seed,
            jobs: 0,
            n: synth.n,
            m: synth.m,
            clusters: synth.clusters,
            p: synth.p,
            eta: synth.eta,
            snr_db: synth.snr_db,
            missing_rate: synth.missing_rate,
            alpha: 1e-2,
            beta: 1e-2,
            gamma: fit.gamma,
            epsilon: fit.epsilon,
            restarts: 1,
            max_rounds: fit.max_rounds,
            kernel: KernelSpec::Dataset,
            coords: None,
            tied_alpha_beta: false,
            axis: None,
            grid: Vec::new(),
            realizations: 10,
            seeds: None,
            kmeans_restarts: 10,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        read_json(path).map_err(|e| match e {
            KmglError::Schema { path, message } => {
                KmglError::Config(format!("{path}: {message}"))
            }
            other => other,
        })
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n: self.n,
            m: self.m,
            clusters: self.clusters,
            p: self.p,
            eta: self.eta,
            snr_db: self.snr_db,
            missing_rate: self.missing_rate,
            seed: self.seed,
        }
    }

    pub fn filter_params(&self) -> Result<FilterParams> {
        let beta = if self.tied_alpha_beta { self.alpha } else { self.beta };
        FilterParams::new(self.alpha, beta)
    }

    pub fn fit_options(&self, seed: u64) -> Result<FitOptions> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(KmglError::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(KmglError::Config(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if self.restarts == 0 {
            return Err(KmglError::Config("restarts must be at least 1".into()));
        }
        Ok(FitOptions {
            clusters: self.clusters,
            gamma: self.gamma,
            epsilon: self.epsilon,
            seed,
            max_rounds: self.max_rounds,
            ..FitOptions::default()
        })
    }

    /// Dataset seed of every realization.
    pub fn realization_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.realizations as u64).map(|i| self.seed + i).collect(),
        }
    }
}
