//! Per-cluster Laplacian estimation.
//!
//! With filtered signals fixed, the Laplacian subproblem in edge-weight
//! space is
//!
//! ```text
//! min_w  β·zᵀw + γ·(Σ_i d_i(w)² + 2 Σ_e w_e²)
//! s.t.   w ≥ 0,  Σ_e w_e = n/2          (i.e. trace(L) = n)
//! ```
//!
//! where `z_e = Σ_x̂ (x̂_i - x̂_j)²`. It is solved by projected gradient over
//! the scaled simplex. [`bcd_inner_loop`] alternates this with filtering
//! until the Laplacian stops moving.

use nalgebra::DVector;

use crate::error::{KmglError, Result};
use crate::filter::{masked_dot, FilterParams, FilterSystem, ObservationMask};
use crate::graph::{frobenius_sq_from_weights, EdgePairIndex, LaplacianGraph};
use crate::kernel::KernelOperator;

/// Euclidean projection of `v` onto `{w ≥ 0, Σw = target_sum}`.
pub fn project_simplex(v: &[f64], target_sum: f64) -> Vec<f64> {
    assert!(target_sum > 0.0, "target sum must be positive");
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - target_sum) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Edge-space form of the Laplacian subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    n: usize,
    z: Vec<f64>,
    beta: f64,
    gamma: f64,
}

impl QpProblem {
    pub fn new(n: usize, z: Vec<f64>, beta: f64, gamma: f64) -> Result<Self> {
        let pairs = EdgePairIndex::new(n).len();
        if z.len() != pairs {
            return Err(KmglError::Dimension(format!(
                "smoothness vector has length {}, expected {pairs}",
                z.len()
            )));
        }
        if z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(KmglError::Config("smoothness vector must be non-negative".into()));
        }
        if !(beta >= 0.0 && gamma >= 0.0 && beta.is_finite() && gamma.is_finite()) {
            return Err(KmglError::Config(format!(
                "beta and gamma must be finite and non-negative, got ({beta}, {gamma})"
            )));
        }
        Ok(Self { n, z, beta, gamma })
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Required `Σ_e w_e`.
    pub fn weight_sum(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let linear: f64 = self.z.iter().zip(w).map(|(z, w)| z * w).sum();
        self.beta * linear + self.gamma * frobenius_sq_from_weights(w, self.n)
    }

    /// `∂f/∂w_e = β z_e + γ (2(d_i + d_j) + 4 w_e)`.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let index = EdgePairIndex::new(self.n);
        let mut degrees = vec![0.0; self.n];
        for ((i, j), &we) in index.pairs().zip(w) {
            degrees[i] += we;
            degrees[j] += we;
        }
        index
            .pairs()
            .zip(w.iter().zip(&self.z))
            .map(|((i, j), (&we, &ze))| {
                self.beta * ze + self.gamma * (2.0 * (degrees[i] + degrees[j]) + 4.0 * we)
            })
            .collect()
    }

    /// Upper bound on the gradient's Lipschitz constant, `4γn`.
    ///
    /// The Hessian is `2γ(PᵀP + 2I)` with `P` the node–edge incidence map,
    /// and `‖PᵀP‖ = 2n - 2` on the complete graph.
    pub fn lipschitz(&self) -> f64 {
        4.0 * self.gamma * self.n as f64
    }

    /// Natural stationarity residual `‖w - Π(w - ∇f(w))‖∞`.
    pub fn kkt_residual(&self, w: &[f64]) -> f64 {
        let g = self.gradient(w);
        let shifted: Vec<f64> = w.iter().zip(&g).map(|(w, g)| w - g).collect();
        project_simplex(&shifted, self.weight_sum())
            .iter()
            .zip(w)
            .map(|(p, w)| (p - w).abs())
            .fold(0.0, f64::max)
    }
}

/// Accumulates edge-wise smoothness `z` over filtered signals.
pub fn build_qp(signals: &[DVector<f64>], beta: f64, gamma: f64) -> Result<QpProblem> {
    build_qp_from(signals.iter(), beta, gamma)
}

fn build_qp_from<'a>(
    signals: impl Iterator<Item = &'a DVector<f64>>,
    beta: f64,
    gamma: f64,
) -> Result<QpProblem> {
    let mut signals = signals.peekable();
    let n = match signals.peek() {
        Some(x) => x.len(),
        None => return Err(KmglError::EmptyCluster(0)),
    };
    let index = EdgePairIndex::new(n);
    let mut z = vec![0.0; index.len()];
    for x in signals {
        if x.len() != n {
            return Err(KmglError::Dimension("signals differ in length".into()));
        }
        for ((i, j), ze) in index.pairs().zip(z.iter_mut()) {
            let d = x[i] - x[j];
            *ze += d * d;
        }
    }
    QpProblem::new(n, z, beta, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub graph: LaplacianGraph,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent with backtracking from step `1/Lip`.
///
/// `w0` defaults to the uniform feasible point and is projected onto the
/// feasible set if it is not already on it.
pub fn solve_laplacian_qp(
    q: &QpProblem,
    w0: Option<&[f64]>,
    opts: QpOptions,
) -> Result<QpSolution> {
    let pairs = q.z.len();
    if pairs == 0 {
        return Err(KmglError::DegenerateGraph("graph has no node pairs".into()));
    }
    let total = q.weight_sum();
    let mut w = match w0 {
        Some(w0) if w0.len() != pairs => {
            return Err(KmglError::Dimension(format!(
                "initial weights have length {}, expected {pairs}",
                w0.len()
            )))
        }
        Some(w0) => project_simplex(w0, total),
        None => vec![total / pairs as f64; pairs],
    };

    let lip = q.lipschitz();
    let mut step = if lip > 0.0 { 1.0 / lip } else { 1e12 };
    let mut f = q.objective(&w);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let g = q.gradient(&w);
        let (next, f_next, delta) = loop {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(w, g)| w - step * g).collect();
            let next = project_simplex(&trial, total);
            let f_next = q.objective(&next);
            let mut lin = 0.0;
            let mut dist2 = 0.0;
            let mut delta: f64 = 0.0;
            for ((a, b), g) in next.iter().zip(&w).zip(&g) {
                let d = a - b;
                lin += g * d;
                dist2 += d * d;
                delta = delta.max(d.abs());
            }
            let model = f + lin + dist2 / (2.0 * step);
            if f_next <= model + 1e-12 * f.abs().max(1.0) || step < 1e-30 {
                break (next, f_next, delta);
            }
            step *= 0.5;
        };
        w = next;
        f = f_next;
        if delta <= opts.tol {
            converged = true;
            break;
        }
    }
    let graph = LaplacianGraph::from_weights(w, q.n)?.mark_normalized();
    Ok(QpSolution {
        objective: f,
        graph,
        iterations,
        converged,
    })
}

/// Options for the alternating filter/learn loop of one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    pub gamma: f64,
    /// Stop once `‖L_new - L_old‖_F ≤ epsilon`.
    pub epsilon: f64,
    pub max_outer: usize,
    pub qp: QpOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            gamma: 1e-4,
            epsilon: 1e-4,
            max_outer: 100,
            qp: QpOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcdResult {
    pub graph: LaplacianGraph,
    /// Signals filtered with the returned graph.
    pub filtered: Vec<DVector<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized-fit objective after every half-step (filter, learn, ...),
    /// ending with the final filter pass.
    pub objective_trace: Vec<f64>,
}

/// Penalized fit of one cluster:
/// `Σ ‖M(x - x̂)‖² + α x̂ᵀK⁻¹x̂ + β x̂ᵀLx̂ + γ‖L‖_F²`.
pub fn penalized_fit(
    signals: &[&DVector<f64>],
    masks: Option<&[&ObservationMask]>,
    filtered: &[DVector<f64>],
    kernel: &KernelOperator,
    graph: &LaplacianGraph,
    params: FilterParams,
    gamma: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (idx, (x, xh)) in signals.iter().zip(filtered).enumerate() {
        let r = *x - xh;
        let mask = masks.map(|m| m[idx]);
        total += masked_dot(&r, &r, mask);
        if params.alpha() != 0.0 {
            total += params.alpha() * kernel.quad_inv(xh)?;
        }
        total += params.beta() * graph.quadratic_form(xh);
    }
    Ok(total + gamma * graph.frobenius_norm_sq())
}

fn filter_all(
    signals: &[&DVector<f64>],
    masks: Option<&[&ObservationMask]>,
    kernel: &KernelOperator,
    graph: &LaplacianGraph,
    params: FilterParams,
) -> Result<Vec<DVector<f64>>> {
    match masks {
        None => {
            let system = FilterSystem::new(kernel, graph, params)?;
            signals.iter().map(|x| system.apply(x)).collect()
        }
        Some(masks) => signals
            .iter()
            .zip(masks)
            .map(|(x, m)| FilterSystem::masked(kernel, graph, params, m)?.apply(x))
            .collect(),
    }
}

fn laplacian_distance(a: &LaplacianGraph, b: &LaplacianGraph) -> f64 {
    (a.laplacian() - b.laplacian()).norm()
}

/// Alternates filtering and Laplacian learning for one cluster.
///
/// Starts from `init` (the uniform complete graph when `None`). The QP is
/// warm-started from the current weights, so the penalized fit never
/// increases; this is checked in debug builds.
pub fn bcd_inner_loop(
    signals: &[&DVector<f64>],
    kernel: &KernelOperator,
    params: FilterParams,
    opts: &BcdOptions,
    init: Option<&LaplacianGraph>,
) -> Result<BcdResult> {
    bcd_impl(signals, None, kernel, params, opts, init)
}

/// [`bcd_inner_loop`] with per-signal observation masks; signals are
/// filtered with `(M + αK⁻¹ + βL)⁻¹ M`.
pub fn bcd_inner_loop_masked(
    signals: &[&DVector<f64>],
    masks: &[&ObservationMask],
    kernel: &KernelOperator,
    params: FilterParams,
    opts: &BcdOptions,
    init: Option<&LaplacianGraph>,
) -> Result<BcdResult> {
    if masks.len() != signals.len() {
        return Err(KmglError::Dimension(format!(
            "{} masks for {} signals",
            masks.len(),
            signals.len()
        )));
    }
    bcd_impl(signals, Some(masks), kernel, params, opts, init)
}

fn bcd_impl(
    signals: &[&DVector<f64>],
    masks: Option<&[&ObservationMask]>,
    kernel: &KernelOperator,
    params: FilterParams,
    opts: &BcdOptions,
    init: Option<&LaplacianGraph>,
) -> Result<BcdResult> {
    let Some(first) = signals.first() else {
        return Err(KmglError::EmptyCluster(0));
    };
    let n = first.len();
    if kernel.nodes() != n {
        return Err(KmglError::Dimension(format!(
            "kernel on {} nodes for signals of length {n}",
            kernel.nodes()
        )));
    }
    let mut graph = match init {
        Some(g) if g.nodes() != n => {
            return Err(KmglError::Dimension("initial graph size mismatch".into()))
        }
        Some(g) => g.clone(),
        None => LaplacianGraph::uniform(n)?,
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let fit = |filtered: &[DVector<f64>], graph: &LaplacianGraph| {
        penalized_fit(signals, masks, filtered, kernel, graph, params, opts.gamma)
    };

    while iterations < opts.max_outer {
        iterations += 1;
        let filtered = filter_all(signals, masks, kernel, &graph, params)?;
        if cfg!(debug_assertions) {
            trace.push(fit(&filtered, &graph)?);
        }
        let qp = build_qp_from(filtered.iter(), params.beta(), opts.gamma)?;
        let next = solve_laplacian_qp(&qp, Some(graph.weights()), opts.qp)?.graph;
        if cfg!(debug_assertions) {
            trace.push(fit(&filtered, &next)?);
        }
        let moved = laplacian_distance(&graph, &next);
        graph = next;
        if moved <= opts.epsilon {
            converged = true;
            break;
        }
    }

    let filtered = filter_all(signals, masks, kernel, &graph, params)?;
    if cfg!(debug_assertions) {
        trace.push(fit(&filtered, &graph)?);
        for w in trace.windows(2) {
            debug_assert!(
                w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0),
                "penalized fit increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
    Ok(BcdResult {
        graph,
        filtered,
        iterations,
        converged,
        objective_trace: trace,
    })
}
