//! Synthetic datasets: planted Erdős–Rényi graphs, diffusion kernels and
//! Gaussian signals at a target SNR, with optional missing entries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KmglError, Result};
use crate::filter::ObservationMask;
use crate::graph::{erdos_renyi, LaplacianGraph};
use crate::kernel::{diffusion_kernel, KernelOperator, DEFAULT_JITTER};
use crate::metrics::sigma_for_snr;
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::signals::SignalSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub clusters: usize,
    /// Edge probability of the planted graphs.
    pub p: f64,
    /// Diffusion kernel parameter.
    pub eta: f64,
    pub snr_db: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 20,
            m: 500,
            clusters: 3,
            p: 0.3,
            eta: 10.0,
            snr_db: 15.0,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KmglError::Config(msg));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.clusters == 0 || self.m < self.clusters {
            return bad(format!(
                "{} signals cannot fill {} clusters",
                self.m, self.clusters
            ));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("edge probability must lie in (0, 1], got {}", self.p));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !self.snr_db.is_finite() {
            return bad(format!("SNR must be finite, got {}", self.snr_db));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!(
                "missing rate must lie in [0, 1), got {}",
                self.missing_rate
            ));
        }
        Ok(())
    }

    /// Signals drawn for cluster `k`; earlier clusters absorb the remainder.
    pub fn cluster_size(&self, k: usize) -> usize {
        self.m / self.clusters + usize::from(k < self.m % self.clusters)
    }
}

/// Generation parameters plus the derived noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    #[serde(flatten)]
    pub config: SynthConfig,
    pub sigma_eps: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub truth_graphs: Vec<LaplacianGraph>,
    pub kernels: Vec<KernelOperator>,
    /// Always carries masks (all full when the missing rate is 0).
    /// Unobserved entries are stored as zero.
    pub signals: SignalSet,
    pub truth_assignment: Vec<usize>,
    pub meta: SynthMeta,
}

impl SyntheticDataset {
    pub fn has_missing(&self) -> bool {
        self.signals
            .masks()
            .is_some_and(|ms| ms.iter().any(|m| !m.is_full()))
    }
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let SynthConfig { n, m, clusters, seed, .. } = *config;

    let truth_graphs = (0..clusters)
        .map(|k| erdos_renyi(n, config.p, derive_seed(seed, stream::GRAPH, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let kernels = truth_graphs
        .iter()
        .map(|g| diffusion_kernel(g, config.eta))
        .collect::<Result<Vec<_>>>()?;
    let sigma_eps = sigma_for_snr(&kernels, config.snr_db)?;

    let mut signals = Vec::with_capacity(m);
    let mut truth_assignment = Vec::with_capacity(m);
    for (k, kernel) in kernels.iter().enumerate() {
        let cov = kernel.matrix() + DMatrix::identity(n, n) * (sigma_eps * sigma_eps);
        let factor = KernelOperator::from_matrix(&cov, DEFAULT_JITTER)?.cholesky_factor();
        let mut rng = rng_from_seed(derive_seed(seed, stream::SIGNAL, k as u64));
        for _ in 0..config.cluster_size(k) {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            signals.push(&factor * z);
            truth_assignment.push(k);
        }
    }

    // one uniform per entry, so raising the rate only hides more entries
    let mut rng = rng_from_seed(derive_seed(seed, stream::MASK, 0));
    let keep = 1.0 - config.missing_rate;
    let masks: Vec<ObservationMask> = (0..m)
        .map(|_| ObservationMask::new((0..n).map(|_| rng.random::<f64>() < keep).collect()))
        .collect();
    let signals = signals.iter().zip(&masks).map(|(x, mask)| mask.apply(x)).collect();

    Ok(SyntheticDataset {
        truth_graphs,
        kernels,
        signals: SignalSet::new(n, signals)?.with_masks(masks)?,
        truth_assignment,
        meta: SynthMeta {
            config: *config,
            sigma_eps,
        },
    })
}
