use std::path::Path;

use rayon::prelude::*;

use super::commands::{fit_with_restarts, resolve_kernels, score};
use super::config::{Axis, Config};
use crate::error::{KmglError, Result};
use crate::io;
use crate::metrics::{kmeans_best_of, mean};
use crate::synth::generate;

pub const HEADER: [&str; 7] = ["axis", "value", "realization", "method", "car", "aps_mean", "failed"];

const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub axis: Axis,
    pub value: f64,
    pub realization: usize,
    pub method: &'static str,
    pub car: Option<f64>,
    /// K-means learns no graphs, so its rows leave this empty.
    pub aps_mean: Option<f64>,
    pub failed: bool,
}

impl ExperimentRow {
    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        vec![
            self.axis.name().to_string(),
            self.value.to_string(),
            self.realization.to_string(),
            self.method.to_string(),
            opt(self.car),
            opt(self.aps_mean),
            u8::from(self.failed).to_string(),
        ]
    }
}

fn with_axis(cfg: &Config, axis: Axis, value: f64, seed: u64) -> Result<Config> {
    let mut c = cfg.clone();
    c.seed = seed;
    c.restarts = 1;
    match axis {
        Axis::Clusters => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(KmglError::Config(format!(
                    "cluster counts must be positive integers, got {value}"
                )));
            }
            c.clusters = value as usize;
        }
        Axis::Snr => c.snr_db = value,
        Axis::MissingRate => c.missing_rate = value,
    }
    Ok(c)
}

fn run_realization(cfg: &Config, axis: Axis, value: f64, realization: usize, seed: u64) -> [ExperimentRow; 2] {
    let row = |method, car, aps_mean, failed| ExperimentRow {
        axis,
        value,
        realization,
        method,
        car,
        aps_mean,
        failed,
    };
    let Ok(c) = with_axis(cfg, axis, value, seed) else {
        return [row("kmgl", None, None, true), row("kmeans", None, None, true)];
    };
    let Ok(ds) = generate(&c.synth()) else {
        return [row("kmgl", None, None, true), row("kmeans", None, None, true)];
    };

    let kmgl = (|| {
        let data = if ds.has_missing() {
            ds.signals.clone()
        } else {
            ds.signals.without_masks()
        };
        let kernels = resolve_kernels(
            &c.kernel,
            c.coords.as_deref(),
            data.nodes(),
            || Ok(ds.kernels.clone()),
            || Ok(ds.truth_graphs.clone()),
        )?;
        let (state, _) = fit_with_restarts(&data, &kernels, &c)?;
        let (car, aps) = score(&state.assignment, Some(&state.laplacians), &ds, c.clusters)?;
        Ok::<_, KmglError>((car, mean(&aps.expect("graphs supplied"))))
    })();
    let kmeans = (|| {
        let km = kmeans_best_of(&ds.signals.zero_filled(), c.clusters, seed, c.kmeans_restarts, KMEANS_MAX_ITER)?;
        Ok::<_, KmglError>(score(&km.assignment, None, &ds, c.clusters)?.0)
    })();
    [
        match kmgl {
            Ok((car, aps)) => row("kmgl", Some(car), Some(aps), false),
            Err(_) => row("kmgl", None, None, true),
        },
        match kmeans {
            Ok(car) => row("kmeans", Some(car), None, false),
            Err(_) => row("kmeans", None, None, true),
        },
    ]
}

/// Sweeps `cfg.axis` over `cfg.grid`, one synthetic realization per seed.
/// Rows come back ordered by (grid value, realization, method) regardless
/// of how many threads ran them.
pub fn run_experiment(cfg: &Config) -> Result<Vec<ExperimentRow>> {
    let axis = cfg
        .axis
        .ok_or_else(|| KmglError::Config("experiment needs a sweep axis".into()))?;
    if cfg.grid.is_empty() {
        return Err(KmglError::Config("experiment grid is empty".into()));
    }
    let seeds = cfg.realization_seeds();
    if seeds.is_empty() {
        return Err(KmglError::Config("experiment needs at least one realization".into()));
    }
    if cfg.kmeans_restarts == 0 {
        return Err(KmglError::Config("kmeans_restarts must be at least 1".into()));
    }
    // surface configuration mistakes up front instead of as failed rows
    cfg.filter_params()?;
    cfg.fit_options(cfg.seed)?;
    for &v in &cfg.grid {
        with_axis(cfg, axis, v, cfg.seed)?.synth().validate()?;
    }

    let tasks: Vec<(f64, usize, u64)> = cfg
        .grid
        .iter()
        .flat_map(|&v| seeds.iter().enumerate().map(move |(r, &s)| (v, r, s)))
        .collect();
    let rows: Vec<[ExperimentRow; 2]> = tasks
        .par_iter()
        .map(|&(v, r, s)| run_realization(cfg, axis, v, r, s))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn experiment_csv(rows: &[ExperimentRow]) -> Vec<u8> {
    let body: Vec<Vec<String>> = rows.iter().map(ExperimentRow::csv_row).collect();
    io::csv_bytes(Some(&HEADER), &body)
}

pub fn cmd_experiment(cfg: &Config, out: Option<&Path>) -> Result<Vec<u8>> {
    let csv = experiment_csv(&run_experiment(cfg)?);
    if let Some(dir) = out {
        io::write_atomic(&dir.join("experiment.csv"), &csv)?;
    }
    Ok(csv)
}

/// Mean of the non-failed values of one method at one grid value.
pub fn mean_of(rows: &[ExperimentRow], method: &str, value: f64, pick: impl Fn(&ExperimentRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.value == value && !r.failed)
        .filter_map(pick)
        .collect();
    (!vals.is_empty()).then(|| mean(&vals))
}
