use std::path::Path;

use rayon::prelude::*;

use super::config::{Config, KernelSpec};
use crate::cluster::{fit, fit_masked, ClusterState};
use crate::error::{KmglError, Result};
use crate::graph::LaplacianGraph;
use crate::io::{self, FitResults, FitSummary};
use crate::kernel::{diffusion_kernel, precomputed_kernel, rbf_kernel, KernelOperator, DEFAULT_JITTER};
use crate::metrics::{aligned_aps, best_label_map, mean, MetricsRecord};
use crate::seed::{derive_seed, stream};
use crate::signals::SignalSet;
use crate::synth::{generate, SyntheticDataset};

/// Runs `f` on a pool of `jobs` threads (0 = one per CPU).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| KmglError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

pub fn cmd_synth(cfg: &Config, out: &Path) -> Result<SyntheticDataset> {
    let ds = generate(&cfg.synth())?;
    io::write_dataset(out, &ds)?;
    Ok(ds)
}

/// Builds the kernels named by `spec`. Dataset-backed specs pull from the
/// two closures so callers can serve them from disk or from memory.
pub fn resolve_kernels(
    spec: &KernelSpec,
    coords: Option<&Path>,
    n: usize,
    dataset_kernels: impl FnOnce() -> Result<Vec<KernelOperator>>,
    dataset_graphs: impl FnOnce() -> Result<Vec<LaplacianGraph>>,
) -> Result<Vec<KernelOperator>> {
    let kernels = match spec {
        KernelSpec::Dataset => dataset_kernels()?,
        KernelSpec::Identity => vec![KernelOperator::identity(n)],
        KernelSpec::Diffusion(eta) => dataset_graphs()?
            .iter()
            .map(|g| diffusion_kernel(g, *eta))
            .collect::<Result<_>>()?,
        KernelSpec::File(path) => vec![precomputed_kernel(&io::read_matrix(path)?, DEFAULT_JITTER)?],
        KernelSpec::Rbf(h) => {
            let path = coords.ok_or_else(|| {
                KmglError::Config("an rbf kernel needs node coordinates (coords)".into())
            })?;
            vec![rbf_kernel(&io::read_matrix(path)?, *h)?]
        }
    };
    if let Some(k) = kernels.iter().find(|k| k.nodes() != n) {
        return Err(KmglError::Dimension(format!(
            "kernel on {} nodes for signals on {n} nodes",
            k.nodes()
        )));
    }
    Ok(kernels)
}

/// Seed of restart `r`; the first restart uses the base seed itself.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, stream::RESTART, r as u64)
    }
}

/// Runs `cfg.restarts` fits and keeps the one with the highest objective
/// (earliest restart on ties). Masked fitting is used whenever masks are
/// attached. Returns the winner and its restart index.
pub fn fit_with_restarts(
    data: &SignalSet,
    kernels: &[KernelOperator],
    cfg: &Config,
) -> Result<(ClusterState, usize)> {
    let params = cfg.filter_params()?;
    cfg.fit_options(cfg.seed)?;
    let runs: Vec<Result<ClusterState>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let opts = cfg.fit_options(restart_seed(cfg.seed, r))?;
            if data.masks().is_some() {
                fit_masked(data, kernels, params, &opts)
            } else {
                fit(data, kernels, params, &opts)
            }
        })
        .collect();
    let mut best: Option<(ClusterState, usize)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let state = run?;
        if best.as_ref().is_none_or(|(b, _)| state.objective > b.objective) {
            best = Some((state, r));
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn cmd_fit(cfg: &Config, dataset: &Path, out: &Path) -> Result<(ClusterState, FitSummary)> {
    let data = io::read_signals(dataset)?;
    let kernels = resolve_kernels(
        &cfg.kernel,
        cfg.coords.as_deref(),
        data.nodes(),
        || io::read_kernels(dataset),
        || io::read_graphs(dataset),
    )?;
    let (state, best_restart) = fit_with_restarts(&data, &kernels, cfg)?;
    let params = cfg.filter_params()?;
    let summary = FitSummary {
        clusters: state.clusters(),
        rounds: state.rounds,
        converged: state.converged,
        objective: state.objective,
        masked: state.masked,
        restarts: cfg.restarts,
        best_restart,
        seed: cfg.seed,
        alpha: params.alpha(),
        beta: params.beta(),
        gamma: cfg.gamma,
        epsilon: cfg.epsilon,
        kernel: cfg.kernel.to_string(),
    };
    io::write_results(out, &state, &summary)?;
    Ok((state, summary))
}

/// CAR of `assignment` and, when graphs are given, APS per true cluster.
pub fn score(
    assignment: &[usize],
    graphs: Option<&[LaplacianGraph]>,
    truth: &SyntheticDataset,
    clusters: usize,
) -> Result<(f64, Option<Vec<f64>>)> {
    let k = clusters.max(truth.truth_graphs.len());
    let (map, correct) = best_label_map(assignment, &truth.truth_assignment, k)?;
    let car = if assignment.is_empty() {
        1.0
    } else {
        correct as f64 / assignment.len() as f64
    };
    let aps = graphs
        .map(|g| aligned_aps(g, &truth.truth_graphs, &map))
        .transpose()?;
    Ok((car, aps))
}

pub fn evaluate(results: &FitResults, truth: &SyntheticDataset) -> Result<MetricsRecord> {
    let k = results.summary.clusters;
    let (car, aps) = score(&results.assignment, Some(&results.graphs), truth, k)?;
    let aps_per_cluster = aps.expect("graphs supplied");
    let meta = truth.meta.config;
    Ok(MetricsRecord {
        seed: meta.seed,
        clusters: truth.truth_graphs.len(),
        n: truth.signals.nodes(),
        m: truth.signals.len(),
        snr_db: meta.snr_db,
        missing_rate: meta.missing_rate,
        car,
        aps_mean: mean(&aps_per_cluster),
        aps_per_cluster,
        rounds: results.summary.rounds,
        converged: results.summary.converged,
    })
}

pub fn cmd_eval(results_dir: &Path, dataset: &Path, out: Option<&Path>) -> Result<MetricsRecord> {
    let results = io::read_results(results_dir)?;
    let truth = io::read_dataset(dataset)?;
    if results.assignment.len() != truth.truth_assignment.len() {
        return Err(KmglError::Schema {
            path: results_dir.join("assignment.csv").display().to_string(),
            message: format!(
                "{} labels but the dataset holds {} signals",
                results.assignment.len(),
                truth.truth_assignment.len()
            ),
        });
    }
    if let Some(&label) = results.assignment.iter().find(|&&a| a >= results.summary.clusters) {
        return Err(KmglError::Schema {
            path: results_dir.join("assignment.csv").display().to_string(),
            message: format!("label {label} with {} clusters", results.summary.clusters),
        });
    }
    let record = evaluate(&results, &truth)?;
    if let Some(dir) = out {
        io::write_csv(&dir.join("metrics.csv"), Some(&record.csv_header()), &[record.csv_row()])?;
    }
    Ok(record)
}
