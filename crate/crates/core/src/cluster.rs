//! K-means style alternation between per-cluster graph learning and signal
//! reassignment.
//!
//! Each round learns one Laplacian per cluster (warm-started from the
//! previous round) and then moves every signal to the cluster whose filter
//! preserves it best, measured by `xᵀx̂` (or `xᵀMx̂` for masked signals).
//! The objective `Σ_k Σ_{x∈X_k} xᵀx̂ - γ‖L_k‖_F²` never decreases from one
//! round to the next, and the loop stops once the partition is stable.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{KmglError, Result};
use crate::filter::{masked_dot, FilterParams, FilterSystem, ObservationMask};
use crate::graph::LaplacianGraph;
use crate::kernel::KernelOperator;
use crate::learning::{bcd_inner_loop, bcd_inner_loop_masked, BcdOptions, QpOptions};
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::signals::SignalSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub clusters: usize,
    pub gamma: f64,
    /// Inner-loop tolerance on `‖ΔL_k‖_F`.
    pub epsilon: f64,
    pub seed: u64,
    pub max_rounds: usize,
    pub max_inner: usize,
    pub qp: QpOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            clusters: 3,
            gamma: 1e-4,
            epsilon: 1e-4,
            seed: 0,
            max_rounds: 200,
            max_inner: 100,
            qp: QpOptions::default(),
        }
    }
}

impl FitOptions {
    fn bcd(&self) -> BcdOptions {
        BcdOptions {
            gamma: self.gamma,
            epsilon: self.epsilon,
            max_outer: self.max_inner,
            qp: self.qp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub assignment: Vec<usize>,
    pub laplacians: Vec<LaplacianGraph>,
    /// Each signal filtered with its own cluster's graph and kernel.
    pub filtered: Vec<DVector<f64>>,
    pub objective: f64,
    /// Outer rounds run (each round learns graphs once).
    pub rounds: usize,
    pub converged: bool,
    /// Objective after every round's learning step.
    pub objective_trace: Vec<f64>,
    /// Whether similarities are measured on observed entries only.
    pub masked: bool,
}

impl ClusterState {
    pub fn clusters(&self) -> usize {
        self.laplacians.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.clusters()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn check_kernels(kernels: &[KernelOperator], clusters: usize, n: usize) -> Result<()> {
    if kernels.len() != 1 && kernels.len() != clusters {
        return Err(KmglError::Config(format!(
            "expected 1 shared kernel or {clusters} per-cluster kernels, got {}",
            kernels.len()
        )));
    }
    if let Some(k) = kernels.iter().find(|k| k.nodes() != n) {
        return Err(KmglError::Dimension(format!(
            "kernel on {} nodes for signals on {n} nodes",
            k.nodes()
        )));
    }
    Ok(())
}

/// Kernel for cluster `k`; a single kernel is shared by all clusters.
fn kernel_for(kernels: &[KernelOperator], k: usize) -> &KernelOperator {
    if kernels.len() == 1 {
        &kernels[0]
    } else {
        &kernels[k]
    }
}

/// Random partition with every cluster non-empty: `K` randomly chosen
/// signals seed one cluster each, the rest are labelled uniformly.
fn initial_partition(m: usize, clusters: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(derive_seed(seed, stream::PARTITION, 0));
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0; m];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = if pos < clusters {
            pos
        } else {
            rng.random_range(0..clusters)
        };
    }
    assignment
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Similarity `xᵀMx̂_k` of one signal against every cluster's filter.
fn similarities(
    x: &DVector<f64>,
    mask: Option<&ObservationMask>,
    systems: Option<&[FilterSystem]>,
    laplacians: &[LaplacianGraph],
    kernels: &[KernelOperator],
    params: FilterParams,
) -> Result<Vec<f64>> {
    (0..laplacians.len())
        .map(|k| {
            let filtered = match (systems, mask) {
                (Some(s), _) => s[k].apply(x)?,
                (None, m) => {
                    FilterSystem::build(kernel_for(kernels, k), &laplacians[k], params, m)?
                        .apply(x)?
                }
            };
            Ok(masked_dot(x, &filtered, mask))
        })
        .collect()
}

fn cluster_systems(
    laplacians: &[LaplacianGraph],
    kernels: &[KernelOperator],
    params: FilterParams,
) -> Result<Vec<FilterSystem>> {
    laplacians
        .iter()
        .enumerate()
        .map(|(k, g)| FilterSystem::new(kernel_for(kernels, k), g, params))
        .collect()
}

/// Cluster whose filter best preserves `x`; ties go to the lowest index.
pub fn reassign(
    x: &DVector<f64>,
    state: &ClusterState,
    kernels: &[KernelOperator],
    params: FilterParams,
) -> Result<usize> {
    let scores = similarities(x, None, None, &state.laplacians, kernels, params)?;
    Ok(argmax_lowest(&scores))
}

/// [`reassign`] comparing `xᵀMx̂_k` on observed entries only.
pub fn reassign_masked(
    x: &DVector<f64>,
    mask: &ObservationMask,
    state: &ClusterState,
    kernels: &[KernelOperator],
    params: FilterParams,
) -> Result<usize> {
    let scores = similarities(x, Some(mask), None, &state.laplacians, kernels, params)?;
    Ok(argmax_lowest(&scores))
}

/// Objective `Σ_k [Σ_{x∈X_k} xᵀMx̂ - γ‖L_k‖_F²]`, recomputed from the state.
pub fn objective(state: &ClusterState, data: &SignalSet, gamma: f64) -> Result<f64> {
    let m = data.len();
    let clusters = state.clusters();
    if state.assignment.len() != m || state.filtered.len() != m {
        return Err(KmglError::Inconsistent(format!(
            "state holds {} labels and {} filtered signals for {m} signals",
            state.assignment.len(),
            state.filtered.len()
        )));
    }
    if let Some(&label) = state.assignment.iter().find(|&&a| a >= clusters) {
        return Err(KmglError::LabelOutOfRange { label, clusters });
    }
    if state.masked && data.masks().is_none() {
        return Err(KmglError::Inconsistent("masked state for unmasked data".into()));
    }
    let mut total = 0.0;
    for (k, graph) in state.laplacians.iter().enumerate() {
        let mut fit = 0.0;
        for i in (0..m).filter(|&i| state.assignment[i] == k) {
            let mask = if state.masked { data.mask(i) } else { None };
            fit += masked_dot(data.signal(i), &state.filtered[i], mask);
        }
        total += fit - gamma * graph.frobenius_norm_sq();
    }
    Ok(total)
}

/// Keeps reassignment from emptying a cluster: for each cluster left empty,
/// the former member that gains least by leaving stays put. Unmoved signals
/// keep their old contribution, so the objective still cannot drop.
fn keep_clusters_populated(
    old: &[usize],
    new: &mut [usize],
    scores: &[Vec<f64>],
    clusters: usize,
) -> Result<()> {
    loop {
        let mut sizes = vec![0usize; clusters];
        for &a in new.iter() {
            sizes[a] += 1;
        }
        let empty: Vec<usize> = (0..clusters).filter(|&k| sizes[k] == 0).collect();
        if empty.is_empty() {
            return Ok(());
        }
        for e in empty {
            let keep = (0..old.len())
                .filter(|&i| old[i] == e && new[i] != e)
                .min_by(|&a, &b| {
                    let ga = scores[a][new[a]] - scores[a][e];
                    let gb = scores[b][new[b]] - scores[b][e];
                    ga.total_cmp(&gb).then(a.cmp(&b))
                })
                .ok_or_else(|| {
                    KmglError::DegenerateClustering(format!("cluster {e} cannot be repopulated"))
                })?;
            new[keep] = e;
        }
    }
}

/// Learns one graph per cluster; signals are grouped by `assignment`.
fn learn_graphs(
    data: &SignalSet,
    masked: bool,
    assignment: &[usize],
    laplacians: &[LaplacianGraph],
    kernels: &[KernelOperator],
    params: FilterParams,
    bcd: &BcdOptions,
) -> Result<(Vec<LaplacianGraph>, Vec<DVector<f64>>)> {
    let clusters = laplacians.len();
    let results: Vec<(Vec<usize>, LaplacianGraph, Vec<DVector<f64>>)> = (0..clusters)
        .into_par_iter()
        .map(|k| {
            let members: Vec<usize> = (0..assignment.len())
                .filter(|&i| assignment[i] == k)
                .collect();
            if members.is_empty() {
                return Err(KmglError::EmptyCluster(k));
            }
            let signals: Vec<&DVector<f64>> = members.iter().map(|&i| data.signal(i)).collect();
            let res = if masked {
                let masks: Vec<&ObservationMask> = members
                    .iter()
                    .map(|&i| data.mask(i).expect("masks checked before fitting"))
                    .collect();
                bcd_inner_loop_masked(
                    &signals,
                    &masks,
                    kernel_for(kernels, k),
                    params,
                    bcd,
                    Some(&laplacians[k]),
                )?
            } else {
                bcd_inner_loop(&signals, kernel_for(kernels, k), params, bcd, Some(&laplacians[k]))?
            };
            Ok((members, res.graph, res.filtered))
        })
        .collect::<Result<_>>()?;

    let mut graphs = Vec::with_capacity(clusters);
    let mut filtered = vec![DVector::zeros(data.nodes()); assignment.len()];
    for (members, graph, xs) in results {
        for (i, x) in members.into_iter().zip(xs) {
            filtered[i] = x;
        }
        graphs.push(graph);
    }
    Ok((graphs, filtered))
}

/// Joint clustering and graph learning on fully observed signals. Any masks
/// attached to `data` are ignored.
pub fn fit(
    data: &SignalSet,
    kernels: &[KernelOperator],
    params: FilterParams,
    opts: &FitOptions,
) -> Result<ClusterState> {
    fit_impl(data, kernels, params, opts, false)
}

/// Joint clustering and graph learning on partially observed signals. Every
/// signal is filtered with `(M + αK⁻¹ + βL)⁻¹M` and compared via `xᵀMx̂`.
pub fn fit_masked(
    data: &SignalSet,
    kernels: &[KernelOperator],
    params: FilterParams,
    opts: &FitOptions,
) -> Result<ClusterState> {
    let masks = data
        .masks()
        .ok_or_else(|| KmglError::Config("masked fit requires observation masks".into()))?;
    if masks.iter().all(|m| m.observed_count() == 0) {
        return Err(KmglError::DegenerateClustering(
            "no signal has any observed entry".into(),
        ));
    }
    fit_impl(data, kernels, params, opts, true)
}

fn fit_impl(
    data: &SignalSet,
    kernels: &[KernelOperator],
    params: FilterParams,
    opts: &FitOptions,
    masked: bool,
) -> Result<ClusterState> {
    let m = data.len();
    let clusters = opts.clusters;
    if clusters == 0 {
        return Err(KmglError::Config("at least one cluster is required".into()));
    }
    if m < clusters {
        return Err(KmglError::Config(format!(
            "{m} signals cannot fill {clusters} clusters"
        )));
    }
    if opts.max_rounds == 0 {
        return Err(KmglError::Config("max_rounds must be at least 1".into()));
    }
    check_kernels(kernels, clusters, data.nodes())?;
    let bcd = opts.bcd();

    let mut assignment = initial_partition(m, clusters, opts.seed);
    let mut laplacians = vec![LaplacianGraph::uniform(data.nodes())?; clusters];
    let mut trace = Vec::new();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let (graphs, filtered) =
            learn_graphs(data, masked, &assignment, &laplacians, kernels, params, &bcd)?;
        laplacians = graphs;
        let mut state = ClusterState {
            assignment,
            laplacians,
            filtered,
            objective: 0.0,
            rounds,
            converged: false,
            objective_trace: Vec::new(),
            masked,
        };
        state.objective = objective(&state, data, opts.gamma)?;
        trace.push(state.objective);

        let systems = if masked {
            None
        } else {
            Some(cluster_systems(&state.laplacians, kernels, params)?)
        };
        let scores: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mask = if masked { data.mask(i) } else { None };
                similarities(
                    data.signal(i),
                    mask,
                    systems.as_deref(),
                    &state.laplacians,
                    kernels,
                    params,
                )
            })
            .collect::<Result<_>>()?;
        let mut next: Vec<usize> = scores.iter().map(|s| argmax_lowest(s)).collect();
        keep_clusters_populated(&state.assignment, &mut next, &scores, clusters)?;

        let stable = next == state.assignment;
        if stable || rounds >= opts.max_rounds {
            state.converged = stable;
            state.objective_trace = trace;
            return Ok(state);
        }
        assignment = next;
        laplacians = state.laplacians;
    }
}
