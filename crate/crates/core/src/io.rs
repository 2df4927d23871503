//! On-disk layout for datasets and fit results.
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces the in-memory values bit for bit.
//!
//! Dataset directory:
//! `signals.csv`, `masks.csv` (only with missing entries), `assignment.csv`,
//! `meta.json`, `graphs/graph_<k>.csv`, `kernels/kernel_<k>.csv`.
//!
//! Results directory:
//! `assignment.csv`, `graphs/graph_<k>.csv`, `filtered_signals.csv`,
//! `objective_trace.csv`, `summary.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::cluster::ClusterState;
use crate::error::{KmglError, Result};
use crate::filter::ObservationMask;
use crate::graph::LaplacianGraph;
use crate::kernel::{precomputed_kernel, KernelOperator, DEFAULT_JITTER};
use crate::signals::SignalSet;
use crate::synth::{SynthMeta, SyntheticDataset};

fn io_err(path: &Path, e: impl std::fmt::Display) -> KmglError {
    KmglError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn schema_err(path: &Path, message: impl Into<String>) -> KmglError {
    KmglError::Schema {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    create_dir(parent)?;
    let mut tmp = NamedTempFile::new_in(parent).map_err(|e| io_err(parent, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Serializes `rows` under an optional header into CSV bytes.
pub fn csv_bytes<S: AsRef<str>>(header: Option<&[S]>, rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h.iter().map(|s| s.as_ref())).expect("writing to memory");
    }
    for r in rows {
        w.write_record(r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: Option<&[S]>, rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows))
}

/// Reads a CSV file; returns the header (if `has_header`) and the rows.
pub fn read_csv(path: &Path, has_header: bool) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = if has_header {
        r.headers()
            .map_err(|e| schema_err(path, e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect()
    } else {
        Vec::new()
    };
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_owned).collect())
                .map_err(|e| schema_err(path, e.to_string()))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| schema_err(path, format!("not a number: {s:?}")))
}

fn parse_usize(path: &Path, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| schema_err(path, format!("not a non-negative integer: {s:?}")))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<String>> {
    m.row_iter()
        .map(|r| r.iter().map(f64::to_string).collect())
        .collect()
}

fn rows_to_matrix(path: &Path, rows: &[Vec<String>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * ncols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(schema_err(path, format!("row {i} has {} fields, expected {ncols}", r.len())));
        }
        for v in r {
            data.push(parse_f64(path, v)?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}

/// Headerless numeric matrix.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_csv::<&str>(path, None, &matrix_rows(m))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let (_, rows) = read_csv(path, false)?;
    rows_to_matrix(path, &rows)
}

fn node_header(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn check_node_header(path: &Path, header: &[String]) -> Result<()> {
    if header != node_header(header.len()).as_slice() {
        return Err(schema_err(path, "expected header s0,s1,..."));
    }
    Ok(())
}

/// One signal per row under the header `s0..s{n-1}`.
pub fn write_signals(path: &Path, signals: &[DVector<f64>], n: usize) -> Result<()> {
    let rows: Vec<Vec<String>> = signals
        .iter()
        .map(|x| x.iter().map(f64::to_string).collect())
        .collect();
    write_csv(path, Some(&node_header(n)), &rows)
}

pub fn read_signal_rows(path: &Path) -> Result<(usize, Vec<DVector<f64>>)> {
    let (header, rows) = read_csv(path, true)?;
    check_node_header(path, &header)?;
    let n = header.len();
    let m = rows_to_matrix(path, &rows)?;
    if !rows.is_empty() && m.ncols() != n {
        return Err(schema_err(path, format!("{} columns under a header of {n}", m.ncols())));
    }
    Ok((n, m.row_iter().map(|r| r.transpose()).collect()))
}

pub fn write_masks(path: &Path, masks: &[ObservationMask], n: usize) -> Result<()> {
    let rows: Vec<Vec<String>> = masks
        .iter()
        .map(|m| m.observed().iter().map(|&o| u8::from(o).to_string()).collect())
        .collect();
    write_csv(path, Some(&node_header(n)), &rows)
}

pub fn read_masks(path: &Path) -> Result<Vec<ObservationMask>> {
    let (header, rows) = read_csv(path, true)?;
    check_node_header(path, &header)?;
    rows.iter()
        .map(|r| {
            if r.len() != header.len() {
                return Err(schema_err(path, "ragged mask row"));
            }
            r.iter()
                .map(|v| match v.trim() {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(schema_err(path, format!("mask entry {other:?} is not 0 or 1"))),
                })
                .collect::<Result<Vec<bool>>>()
                .map(ObservationMask::new)
        })
        .collect()
}

pub fn write_assignment(path: &Path, assignment: &[usize]) -> Result<()> {
    let rows: Vec<Vec<String>> = assignment.iter().map(|a| vec![a.to_string()]).collect();
    write_csv(path, Some(&["cluster"]), &rows)
}

pub fn read_assignment(path: &Path) -> Result<Vec<usize>> {
    let (header, rows) = read_csv(path, true)?;
    if header != ["cluster"] {
        return Err(schema_err(path, "expected header cluster"));
    }
    rows.iter().map(|r| parse_usize(path, &r[0])).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| schema_err(path, e.to_string()))
}

fn graph_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("graphs").join(format!("graph_{k}.csv"))
}

fn kernel_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("kernels").join(format!("kernel_{k}.csv"))
}

fn write_graphs(dir: &Path, graphs: &[LaplacianGraph]) -> Result<()> {
    graphs
        .iter()
        .enumerate()
        .try_for_each(|(k, g)| write_matrix(&graph_path(dir, k), &g.adjacency()))
}

/// Reads `graphs/graph_0.csv`, `graph_1.csv`, ... until the first gap.
pub fn read_graphs(dir: &Path) -> Result<Vec<LaplacianGraph>> {
    let mut graphs = Vec::new();
    loop {
        let path = graph_path(dir, graphs.len());
        if !path.exists() {
            break;
        }
        let adjacency = read_matrix(&path)?;
        graphs.push(LaplacianGraph::from_adjacency(&adjacency).map_err(|e| schema_err(&path, e.to_string()))?);
    }
    if graphs.is_empty() {
        return Err(io_err(&graph_path(dir, 0), "no graph files found"));
    }
    Ok(graphs)
}

/// Reads `kernels/kernel_0.csv`, ... until the first gap.
pub fn read_kernels(dir: &Path) -> Result<Vec<KernelOperator>> {
    let mut kernels = Vec::new();
    loop {
        let path = kernel_path(dir, kernels.len());
        if !path.exists() {
            break;
        }
        kernels.push(precomputed_kernel(&read_matrix(&path)?, DEFAULT_JITTER)?);
    }
    if kernels.is_empty() {
        return Err(io_err(&kernel_path(dir, 0), "no kernel files found"));
    }
    Ok(kernels)
}

pub fn write_dataset(dir: &Path, ds: &SyntheticDataset) -> Result<()> {
    let n = ds.signals.nodes();
    create_dir(dir)?;
    write_signals(&dir.join("signals.csv"), ds.signals.signals(), n)?;
    let masks_path = dir.join("masks.csv");
    match ds.signals.masks() {
        Some(masks) if ds.has_missing() => write_masks(&masks_path, masks, n)?,
        _ => {
            if masks_path.exists() {
                fs::remove_file(&masks_path).map_err(|e| io_err(&masks_path, e))?;
            }
        }
    }
    write_assignment(&dir.join("assignment.csv"), &ds.truth_assignment)?;
    write_json(&dir.join("meta.json"), &ds.meta)?;
    write_graphs(dir, &ds.truth_graphs)?;
    for (k, kernel) in ds.kernels.iter().enumerate() {
        write_matrix(&kernel_path(dir, k), kernel.matrix())?;
    }
    Ok(())
}

/// Signals plus masks when `masks.csv` is present.
pub fn read_signals(dir: &Path) -> Result<SignalSet> {
    let path = dir.join("signals.csv");
    let (n, signals) = read_signal_rows(&path)?;
    let set = SignalSet::new(n, signals).map_err(|e| schema_err(&path, e.to_string()))?;
    let masks_path = dir.join("masks.csv");
    if masks_path.exists() {
        let masks = read_masks(&masks_path)?;
        return set
            .with_masks(masks)
            .map_err(|e| schema_err(&masks_path, e.to_string()));
    }
    Ok(set)
}

/// Full synthetic dataset; masks are all full when `masks.csv` is absent.
pub fn read_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let mut signals = read_signals(dir)?;
    if signals.masks().is_none() {
        let full = vec![ObservationMask::full(signals.nodes()); signals.len()];
        signals = signals.with_masks(full)?;
    }
    let assignment_path = dir.join("assignment.csv");
    let truth_assignment = read_assignment(&assignment_path)?;
    if truth_assignment.len() != signals.len() {
        return Err(schema_err(
            &assignment_path,
            format!("{} labels for {} signals", truth_assignment.len(), signals.len()),
        ));
    }
    Ok(SyntheticDataset {
        truth_graphs: read_graphs(dir)?,
        kernels: read_kernels(dir)?,
        signals,
        truth_assignment,
        meta: read_json::<SynthMeta>(&dir.join("meta.json"))?,
    })
}

/// Run-level facts stored next to a fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub clusters: usize,
    pub rounds: usize,
    pub converged: bool,
    pub objective: f64,
    pub masked: bool,
    pub restarts: usize,
    pub best_restart: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub kernel: String,
}

pub fn write_results(dir: &Path, state: &ClusterState, summary: &FitSummary) -> Result<()> {
    create_dir(dir)?;
    write_assignment(&dir.join("assignment.csv"), &state.assignment)?;
    write_graphs(dir, &state.laplacians)?;
    let n = state.laplacians.first().map_or(0, LaplacianGraph::nodes);
    write_signals(&dir.join("filtered_signals.csv"), &state.filtered, n)?;
    let trace: Vec<Vec<String>> = state
        .objective_trace
        .iter()
        .enumerate()
        .map(|(t, f)| vec![(t + 1).to_string(), f.to_string()])
        .collect();
    write_csv(&dir.join("objective_trace.csv"), Some(&["round", "objective"]), &trace)?;
    write_json(&dir.join("summary.json"), summary)
}

pub struct FitResults {
    pub assignment: Vec<usize>,
    pub graphs: Vec<LaplacianGraph>,
    pub objective_trace: Vec<f64>,
    pub summary: FitSummary,
}

pub fn read_results(dir: &Path) -> Result<FitResults> {
    let summary: FitSummary = read_json(&dir.join("summary.json"))?;
    let graphs = read_graphs(dir)?;
    if graphs.len() != summary.clusters {
        return Err(schema_err(
            &dir.join("graphs"),
            format!("{} graphs for {} clusters", graphs.len(), summary.clusters),
        ));
    }
    let trace_path = dir.join("objective_trace.csv");
    let (header, rows) = read_csv(&trace_path, true)?;
    if header != ["round", "objective"] {
        return Err(schema_err(&trace_path, "expected header round,objective"));
    }
    let objective_trace = rows
        .iter()
        .map(|r| parse_f64(&trace_path, r.get(1).map_or("", String::as_str)))
        .collect::<Result<_>>()?;
    Ok(FitResults {
        assignment: read_assignment(&dir.join("assignment.csv"))?,
        graphs,
        objective_trace,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn floats_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, -2.5e-300, f64::MAX, 1e-7, 6.02e23]);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { m: 30, missing_rate: 0.25, seed: 4, ..Default::default() };
        let ds = generate(&cfg).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert!(dir.path().join("masks.csv").exists());
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.signals, ds.signals);
        assert_eq!(back.truth_assignment, ds.truth_assignment);
        assert_eq!(back.meta, ds.meta);
        for (a, b) in back.truth_graphs.iter().zip(&ds.truth_graphs) {
            assert_eq!(a.weights(), b.weights());
        }
        for (a, b) in back.kernels.iter().zip(&ds.kernels) {
            assert_eq!(a.matrix(), b.matrix());
        }
    }

    #[test]
    fn full_observation_writes_no_masks() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SynthConfig { m: 9, ..Default::default() }).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert!(!dir.path().join("masks.csv").exists());
        assert!(read_signals(dir.path()).unwrap().masks().is_none());
        let header = fs::read_to_string(dir.path().join("signals.csv")).unwrap();
        assert!(header.starts_with("s0,s1,s2,"));
    }

    #[test]
    fn rewriting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SynthConfig { m: 12, ..Default::default() }).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let first = fs::read(dir.path().join("signals.csv")).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert_eq!(fs::read(dir.path().join("signals.csv")).unwrap(), first);
    }

    #[test]
    fn malformed_files_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("assignment.csv");
        fs::write(&path, "label\n0\n").unwrap();
        assert!(matches!(read_assignment(&path), Err(KmglError::Schema { .. })));
        fs::write(&path, "cluster\nx\n").unwrap();
        assert!(matches!(read_assignment(&path), Err(KmglError::Schema { .. })));
        let missing = dir.path().join("nope.csv");
        let err = read_matrix(&missing).unwrap_err();
        assert!(matches!(err, KmglError::Io { .. }));
        assert_eq!(err.exit_code(), 4);
    }
}
