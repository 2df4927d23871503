//! Clustering and graph-recovery metrics, plus the K-means baseline.

use nalgebra::DVector;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{KmglError, Result};
use crate::graph::LaplacianGraph;
use crate::kernel::KernelOperator;
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::signals::SignalSet;

fn check_labels(labels: &[usize], clusters: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= clusters) {
        Some(&label) => Err(KmglError::LabelOutOfRange { label, clusters }),
        None => Ok(()),
    }
}

/// `K × K` confusion counts, rows indexed by predicted label.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], clusters: usize) -> Result<Vec<Vec<i64>>> {
    if pred.len() != truth.len() {
        return Err(KmglError::Dimension(format!(
            "{} predicted labels for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    check_labels(pred, clusters)?;
    check_labels(truth, clusters)?;
    let mut counts = vec![vec![0i64; clusters]; clusters];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    Ok(counts)
}

/// Accuracy-maximizing map from predicted to true labels.
///
/// Returns `map` with `map[p]` the true label matched to predicted label `p`,
/// and the number of correctly labelled items under that map.
pub fn best_label_map(pred: &[usize], truth: &[usize], clusters: usize) -> Result<(Vec<usize>, usize)> {
    if clusters == 0 {
        return Err(KmglError::Config("at least one cluster is required".into()));
    }
    let counts = confusion_matrix(pred, truth, clusters)?;
    let weights = Matrix::from_rows(counts).expect("confusion matrix is square");
    let (correct, map) = kuhn_munkres(&weights);
    Ok((map, correct as usize))
}

/// Clustering accuracy ratio over labels in `[0, clusters)`.
pub fn car_with_clusters(pred: &[usize], truth: &[usize], clusters: usize) -> Result<f64> {
    if pred.is_empty() && truth.is_empty() {
        return Ok(1.0);
    }
    let (_, correct) = best_label_map(pred, truth, clusters)?;
    Ok(correct as f64 / pred.len() as f64)
}

/// Clustering accuracy ratio; the label count is inferred from the inputs.
pub fn car(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let clusters = pred.iter().chain(truth).max().map_or(1, |m| m + 1);
    car_with_clusters(pred, truth, clusters)
}

/// Average precision of ranking node pairs by predicted weight against the
/// true edge set (true weight > 0). Tied scores form one threshold step.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(KmglError::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(KmglError::DegenerateGraph(
            "reference graph has no edges".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        tp += order[start..end].iter().filter(|&&i| positive[i]).count();
        seen += end - start;
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }
    Ok(ap)
}

/// Average precision score of a learned graph against the true graph.
pub fn aps(predicted: &LaplacianGraph, truth: &LaplacianGraph) -> Result<f64> {
    if predicted.nodes() != truth.nodes() {
        return Err(KmglError::Dimension(format!(
            "predicted graph on {} nodes, true graph on {}",
            predicted.nodes(),
            truth.nodes()
        )));
    }
    let positive: Vec<bool> = truth.weights().iter().map(|&w| w > 0.0).collect();
    average_precision(predicted.weights(), &positive)
}

/// APS per true cluster after aligning learned graphs with the
/// CAR-optimal label map (`label_map[p]` is the true label matched to
/// learned graph `p`). True clusters left without a learned graph score 0.
pub fn aligned_aps(
    learned: &[LaplacianGraph],
    truth: &[LaplacianGraph],
    label_map: &[usize],
) -> Result<Vec<f64>> {
    if label_map.len() < learned.len() {
        return Err(KmglError::Dimension(format!(
            "label map of length {} for {} learned graphs",
            label_map.len(),
            learned.len()
        )));
    }
    let mut per_truth = vec![0.0; truth.len()];
    for (p, graph) in learned.iter().enumerate() {
        if let Some(t) = truth.get(label_map[p]) {
            per_truth[label_map[p]] = aps(graph, t)?;
        }
    }
    Ok(per_truth)
}

/// `10·log10( Σ_c Tr(K_c) / (K·n·σ²) )`.
pub fn snr_db(kernels: &[KernelOperator], sigma_eps: f64) -> Result<f64> {
    if !(sigma_eps > 0.0 && sigma_eps.is_finite()) {
        return Err(KmglError::Config(format!(
            "noise level must be positive, got {sigma_eps}"
        )));
    }
    let (clusters, n, trace_sum) = kernel_power(kernels)?;
    Ok(10.0 * (trace_sum / (clusters * n * sigma_eps * sigma_eps)).log10())
}

/// Noise level `σ` that yields `target_db` under [`snr_db`].
pub fn sigma_for_snr(kernels: &[KernelOperator], target_db: f64) -> Result<f64> {
    if !target_db.is_finite() {
        return Err(KmglError::Config(format!("SNR target must be finite, got {target_db}")));
    }
    let (clusters, n, trace_sum) = kernel_power(kernels)?;
    Ok((trace_sum / (clusters * n * 10f64.powf(target_db / 10.0))).sqrt())
}

fn kernel_power(kernels: &[KernelOperator]) -> Result<(f64, f64, f64)> {
    let Some(first) = kernels.first() else {
        return Err(KmglError::Config("at least one kernel is required".into()));
    };
    let n = first.nodes();
    if kernels.iter().any(|k| k.nodes() != n) {
        return Err(KmglError::Dimension("kernels differ in size".into()));
    }
    let trace_sum: f64 = kernels.iter().map(|k| k.trace()).sum();
    Ok((kernels.len() as f64, n as f64, trace_sum))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    /// Within-cluster sum of squares.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every centroid update.
    pub inertia_trace: Vec<f64>,
}

fn nearest(x: &DVector<f64>, centroids: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = (x - c).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn inertia(points: &[DVector<f64>], assignment: &[usize], centroids: &[DVector<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(x, &k)| (x - &centroids[k]).norm_squared())
        .sum()
}

/// Lloyd's algorithm with random distinct data points as initial centroids.
/// A cluster that empties is reseeded with the point farthest from its
/// centroid.
pub fn kmeans(points: &[DVector<f64>], clusters: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let m = points.len();
    if clusters == 0 || m < clusters {
        return Err(KmglError::Config(format!(
            "{m} points cannot fill {clusters} clusters"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut centroids: Vec<DVector<f64>> = sample(&mut rng, m, clusters)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut assignment: Vec<usize> = points.iter().map(|x| nearest(x, &centroids).0).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        update_centroids(points, &mut assignment, &mut centroids);
        trace.push(inertia(points, &assignment, &centroids));
        let next: Vec<usize> = points.iter().map(|x| nearest(x, &centroids).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    // a no-op after convergence; after the iteration cap it restores non-empty clusters
    update_centroids(points, &mut assignment, &mut centroids);
    let inertia = inertia(points, &assignment, &centroids);
    Ok(KMeansResult {
        assignment,
        centroids,
        inertia,
        iterations,
        inertia_trace: trace,
    })
}

fn update_centroids(points: &[DVector<f64>], assignment: &mut [usize], centroids: &mut [DVector<f64>]) {
    let clusters = centroids.len();
    let dim = points[0].len();
    loop {
        let mut sums = vec![DVector::zeros(dim); clusters];
        let mut counts = vec![0usize; clusters];
        for (x, &k) in points.iter().zip(assignment.iter()) {
            sums[k] += x;
            counts[k] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
                *c = s / n as f64;
            }
            return;
        };
        for (k, (s, &n)) in sums.iter().zip(&counts).enumerate() {
            if n > 0 {
                centroids[k] = s / n as f64;
            }
        }
        let far = (0..points.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                let da = (&points[a] - &centroids[assignment[a]]).norm_squared();
                let db = (&points[b] - &centroids[assignment[b]]).norm_squared();
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("m >= K leaves a cluster with at least two points");
        assignment[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

/// Best of `restarts` K-means runs by inertia.
pub fn kmeans_best_of(
    points: &[DVector<f64>],
    clusters: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans(points, clusters, derive_seed(seed, stream::KMEANS, r as u64), max_iter)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// K-means labels for `data`, with unobserved entries set to zero.
pub fn kmeans_baseline(data: &SignalSet, clusters: usize, seed: u64, max_iter: usize) -> Result<Vec<usize>> {
    Ok(kmeans(&data.zero_filled(), clusters, seed, max_iter)?.assignment)
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub clusters: usize,
    pub n: usize,
    pub m: usize,
    pub snr_db: f64,
    pub missing_rate: f64,
    pub car: f64,
    pub aps_per_cluster: Vec<f64>,
    pub aps_mean: f64,
    pub rounds: usize,
    pub converged: bool,
}

impl MetricsRecord {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["seed", "K", "n", "m", "snr_db", "missing_rate", "car", "aps_mean"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..self.aps_per_cluster.len()).map(|c| format!("aps_c{c}")));
        h.push("rounds".into());
        h.push("converged".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.seed.to_string(),
            self.clusters.to_string(),
            self.n.to_string(),
            self.m.to_string(),
            self.snr_db.to_string(),
            self.missing_rate.to_string(),
            self.car.to_string(),
            self.aps_mean.to_string(),
        ];
        r.extend(self.aps_per_cluster.iter().map(|a| a.to_string()));
        r.push(self.rounds.to_string());
        r.push(u8::from(self.converged).to_string());
        r
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, laplacian_from_weights};
    use crate::kernel::diffusion_kernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All permutations of `0..k` (Heap's algorithm).
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        fn rec(n: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if n <= 1 {
                out.push(a.clone());
                return;
            }
            for i in 0..n - 1 {
                rec(n - 1, a, out);
                if n.is_multiple_of(2) {
                    a.swap(i, n - 1);
                } else {
                    a.swap(0, n - 1);
                }
            }
            rec(n - 1, a, out);
        }
        let mut a: Vec<usize> = (0..k).collect();
        let mut out = Vec::new();
        rec(k, &mut a, &mut out);
        out
    }

    fn brute_force_car(pred: &[usize], truth: &[usize], k: usize) -> f64 {
        permutations(k)
            .iter()
            .map(|p| pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count())
            .max()
            .unwrap() as f64
            / pred.len() as f64
    }

    #[test]
    fn car_examples() {
        let truth = [0, 0, 1, 1, 2, 2];
        assert_eq!(car(&truth, &truth).unwrap(), 1.0);
        assert_eq!(car(&[2, 2, 0, 0, 1, 1], &truth).unwrap(), 1.0);
        assert_eq!(car(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(brute_force_car(&[0, 0, 0, 0], &[0, 0, 1, 1], 2), 0.5);
    }

    #[test]
    fn car_errors() {
        assert!(matches!(car(&[0, 1], &[0]), Err(KmglError::Dimension(_))));
        assert!(matches!(
            car_with_clusters(&[0, 3], &[0, 1], 2),
            Err(KmglError::LabelOutOfRange { label: 3, clusters: 2 })
        ));
    }

    proptest! {
        #[test]
        fn car_matches_brute_force(
            k in 1usize..6,
            raw in proptest::collection::vec((0usize..100, 0usize..100), 1..40),
            relabel_seed in any::<u64>(),
        ) {
            let pred: Vec<usize> = raw.iter().map(|(a, _)| a % k).collect();
            let truth: Vec<usize> = raw.iter().map(|(_, b)| b % k).collect();
            let got = car_with_clusters(&pred, &truth, k).unwrap();
            prop_assert!((got - brute_force_car(&pred, &truth, k)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
            prop_assert_eq!(car_with_clusters(&pred, &pred, k).unwrap(), 1.0);

            let perm = &permutations(k)[(relabel_seed as usize) % permutations(k).len()];
            let relabelled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
            prop_assert!((car_with_clusters(&relabelled, &truth, k).unwrap() - got).abs() < 1e-12);
            prop_assert!((car_with_clusters(&truth, &pred, k).unwrap() - got).abs() < 1e-12);
        }

        #[test]
        fn aps_invariant_to_monotone_transform(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..30).map(|_| (rng.random_range(0..8) as f64) * 0.25).collect();
            let mut positive: Vec<bool> = (0..30).map(|_| rng.random_bool(0.4)).collect();
            positive[0] = true;
            let base = average_precision(&scores, &positive).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert!((average_precision(&transformed, &positive).unwrap() - base).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
        }
    }

    #[test]
    fn aps_perfect_ranking() {
        let g = erdos_renyi(10, 0.3, 4).unwrap();
        assert!((aps(&g, &g).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aps_all_tied() {
        let truth = erdos_renyi(10, 0.3, 4).unwrap();
        let flat = laplacian_from_weights(&[1.0; 45], 10).unwrap();
        let e = truth.edge_count() as f64;
        assert!((aps(&flat, &truth).unwrap() - e / 45.0).abs() < 1e-15);
    }

    #[test]
    fn aps_worst_ranking() {
        // 3 positives ranked strictly below 7 negatives
        let scores: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        let positive: Vec<bool> = (0..10).map(|i| i >= 7).collect();
        let (e, total) = (3usize, 10usize);
        let oracle: f64 = (1..=e)
            .map(|i| (1.0 / e as f64) * (i as f64 / (total - e + i) as f64))
            .sum();
        assert!((average_precision(&scores, &positive).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn aps_rejects_mismatch_and_empty_truth() {
        let a = erdos_renyi(5, 0.5, 1).unwrap();
        let b = erdos_renyi(6, 0.5, 1).unwrap();
        assert!(matches!(aps(&a, &b), Err(KmglError::Dimension(_))));
        let empty = laplacian_from_weights(&[0.0; 10], 5).unwrap();
        assert!(aps(&a, &empty).is_err());
    }

    #[test]
    fn snr_identity_kernels() {
        let kernels = vec![KernelOperator::identity(20); 3];
        assert!(snr_db(&kernels, 1.0).unwrap().abs() < 1e-12);
        let sigma = 10f64.powf(-1.5).sqrt();
        assert!((snr_db(&kernels, sigma).unwrap() - 15.0).abs() < 1e-12);
        let back = sigma_for_snr(&kernels, 15.0).unwrap();
        assert!((back * back - 10f64.powf(-1.5)).abs() < 1e-15);
        assert!(snr_db(&kernels, 0.0).is_err());
        assert!(snr_db(&kernels, -1.0).is_err());
    }

    #[test]
    fn snr_diffusion_kernels_match_trace_sum() {
        let kernels: Vec<KernelOperator> = (0..3)
            .map(|s| diffusion_kernel(&erdos_renyi(20, 0.3, s).unwrap(), 10.0).unwrap())
            .collect();
        let sigma = 0.07;
        let mut trace_sum = 0.0;
        for k in &kernels {
            for i in 0..20 {
                trace_sum += k.matrix()[(i, i)];
            }
        }
        let oracle = 10.0 * (trace_sum / (3.0 * 20.0 * sigma * sigma)).log10();
        assert!((snr_db(&kernels, sigma).unwrap() - oracle).abs() < 1e-12);
        let s = sigma_for_snr(&kernels, oracle).unwrap();
        assert!((s - sigma).abs() < 1e-12);
    }

    #[test]
    fn snr_round_trip_grid() {
        let kernels: Vec<KernelOperator> = (0..2)
            .map(|s| diffusion_kernel(&erdos_renyi(12, 0.3, s).unwrap(), 10.0).unwrap())
            .collect();
        for step in 0..=50 {
            let target = step as f64 * 0.5;
            let s = sigma_for_snr(&kernels, target).unwrap();
            assert!((snr_db(&kernels, s).unwrap() - target).abs() < 1e-9);
        }
    }

    fn blobs(seed: u64) -> (Vec<DVector<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..30 {
                pts.push(DVector::from_vec(vec![
                    c[0] + rng.random_range(-1.0..1.0),
                    c[1] + rng.random_range(-1.0..1.0),
                ]));
                labels.push(k);
            }
        }
        (pts, labels)
    }

    #[test]
    fn kmeans_point_masses() {
        let pts: Vec<DVector<f64>> = (0..10)
            .map(|i| DVector::from_vec(vec![if i < 5 { 0.0 } else { 5.0 }, 1.0]))
            .collect();
        let truth: Vec<usize> = (0..10).map(|i| usize::from(i >= 5)).collect();
        for seed in 0..10 {
            let data = SignalSet::new(2, pts.clone()).unwrap();
            let labels = kmeans_baseline(&data, 2, seed, 100).unwrap();
            assert_eq!(car(&labels, &truth).unwrap(), 1.0);
        }
    }

    #[test]
    fn kmeans_single_cluster_and_errors() {
        let (pts, _) = blobs(1);
        let data = SignalSet::new(2, pts.clone()).unwrap();
        assert!(kmeans_baseline(&data, 1, 0, 50).unwrap().iter().all(|&l| l == 0));
        assert!(kmeans(&pts[..2], 3, 0, 10).is_err());
    }

    #[test]
    fn kmeans_inertia_is_monotone() {
        let (pts, labels) = blobs(2);
        let best = kmeans_best_of(&pts, 3, 7, 10, 100).unwrap();
        assert_eq!(car(&best.assignment, &labels).unwrap(), 1.0);
        for seed in 0..10 {
            let run = kmeans(&pts, 3, seed, 100).unwrap();
            for w in run.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    #[test]
    fn kmeans_reseeds_empty_clusters() {
        // duplicated points force ties that can starve a centroid
        let pts: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_vec(vec![1.0, 1.0])).collect();
        let res = kmeans(&pts, 3, 0, 20).unwrap();
        let mut sizes = [0; 3];
        for &a in &res.assignment {
            sizes[a] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
    }

    #[test]
    fn aligned_aps_follows_label_map() {
        let g0 = erdos_renyi(8, 0.4, 1).unwrap();
        let g1 = erdos_renyi(8, 0.4, 2).unwrap();
        let learned = vec![g1.clone(), g0.clone()];
        let truth = vec![g0, g1];
        let (map, _) = best_label_map(&[1, 1, 0], &[0, 0, 1], 2).unwrap();
        assert_eq!(map, vec![1, 0]);
        let per = aligned_aps(&learned, &truth, &map).unwrap();
        assert_eq!(per, vec![1.0, 1.0]);
        // one learned graph for two true clusters
        let per = aligned_aps(&learned[..1], &truth, &map).unwrap();
        assert_eq!(per, vec![0.0, 1.0]);
    }

    #[test]
    fn metrics_row_layout() {
        let rec = MetricsRecord {
            seed: 1,
            clusters: 2,
            n: 20,
            m: 500,
            snr_db: 15.0,
            missing_rate: 0.0,
            car: 1.0,
            aps_per_cluster: vec![0.5, 0.25],
            aps_mean: 0.375,
            rounds: 3,
            converged: true,
        };
        assert_eq!(
            rec.csv_header().join(","),
            "seed,K,n,m,snr_db,missing_rate,car,aps_mean,aps_c0,aps_c1,rounds,converged"
        );
        assert_eq!(rec.csv_row().join(","), "1,2,20,500,15,0,1,0.375,0.5,0.25,3,1");
    }
}
