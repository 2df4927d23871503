use nalgebra::{DMatrix, DVector};

use crate::error::{KmglError, Result};
use crate::filter::ObservationMask;

/// `m` graph signals on `n` shared nodes, stored column by column, with
/// optional per-signal observation masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    n: usize,
    signals: Vec<DVector<f64>>,
    masks: Option<Vec<ObservationMask>>,
}

impl SignalSet {
    pub fn new(n: usize, signals: Vec<DVector<f64>>) -> Result<Self> {
        if let Some((j, x)) = signals.iter().enumerate().find(|(_, x)| x.len() != n) {
            return Err(KmglError::Dimension(format!(
                "signal {j} has length {}, expected {n}",
                x.len()
            )));
        }
        Ok(Self {
            n,
            signals,
            masks: None,
        })
    }

    /// Columns of an `n × m` matrix.
    pub fn from_matrix(data: &DMatrix<f64>) -> Self {
        let signals = data.column_iter().map(|c| c.into_owned()).collect();
        Self {
            n: data.nrows(),
            signals,
            masks: None,
        }
    }

    pub fn with_masks(mut self, masks: Vec<ObservationMask>) -> Result<Self> {
        if masks.len() != self.signals.len() {
            return Err(KmglError::Dimension(format!(
                "{} masks for {} signals",
                masks.len(),
                self.signals.len()
            )));
        }
        if masks.iter().any(|m| m.len() != self.n) {
            return Err(KmglError::Dimension("mask length differs from node count".into()));
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn without_masks(&self) -> Self {
        Self {
            n: self.n,
            signals: self.signals.clone(),
            masks: None,
        }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn signals(&self) -> &[DVector<f64>] {
        &self.signals
    }

    pub fn signal(&self, j: usize) -> &DVector<f64> {
        &self.signals[j]
    }

    pub fn masks(&self) -> Option<&[ObservationMask]> {
        self.masks.as_deref()
    }

    pub fn mask(&self, j: usize) -> Option<&ObservationMask> {
        self.masks.as_ref().map(|m| &m[j])
    }

    /// Signals with unobserved entries replaced by zero.
    pub fn zero_filled(&self) -> Vec<DVector<f64>> {
        match &self.masks {
            None => self.signals.clone(),
            Some(masks) => self
                .signals
                .iter()
                .zip(masks)
                .map(|(x, m)| m.apply(x))
                .collect(),
        }
    }

    /// `n × m` matrix with one signal per column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        if self.signals.is_empty() {
            return DMatrix::zeros(self.n, 0);
        }
        DMatrix::from_columns(&self.signals)
    }
}
