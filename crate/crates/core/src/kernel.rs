//! Node-side kernel matrices.
//!
//! A [`KernelOperator`] owns a symmetric positive-definite matrix together
//! with its Cholesky factor. Quadratic forms against `K⁻¹` go through
//! triangular solves; the dense inverse is only materialized on request
//! (the filter assembles `I + αK⁻¹ + βL` explicitly).

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{KmglError, Result};
use crate::graph::LaplacianGraph;

/// Starting jitter when a kernel fails to factorize.
pub const DEFAULT_JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct KernelOperator {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter_applied: f64,
    inverse: OnceLock<DMatrix<f64>>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

impl KernelOperator {
    /// Symmetrizes `m` and factorizes it, adding escalating diagonal jitter
    /// (×10 per step from `jitter` up to `1e-4·trace(m)/n`) if needed.
    pub fn from_matrix(m: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(KmglError::Dimension(format!(
                "kernel must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if n == 0 {
            return Err(KmglError::Dimension("kernel is empty".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(KmglError::InvalidKernel("non-finite entry".into()));
        }
        let matrix = symmetrize(m);
        if let Some(chol) = Cholesky::new(matrix.clone()) {
            return Ok(Self::assemble(matrix, chol, 0.0));
        }

        let cap = 1e-4 * matrix.trace() / n as f64;
        let mut eps = jitter.max(f64::MIN_POSITIVE);
        while eps <= cap {
            let shifted = &matrix + DMatrix::identity(n, n) * eps;
            if let Some(chol) = Cholesky::new(shifted) {
                return Ok(Self::assemble(matrix, chol, eps));
            }
            eps *= 10.0;
        }
        Err(KmglError::InvalidKernel(format!(
            "matrix is not positive definite even with jitter up to {cap:e}"
        )))
    }

    fn assemble(matrix: DMatrix<f64>, chol: Cholesky<f64, Dyn>, jitter_applied: f64) -> Self {
        Self {
            matrix,
            chol,
            jitter_applied,
            inverse: OnceLock::new(),
        }
    }

    /// Identity kernel on `n` nodes.
    pub fn identity(n: usize) -> Self {
        let m = DMatrix::identity(n, n);
        let chol = Cholesky::new(m.clone()).expect("identity is positive definite");
        Self::assemble(m, chol, 0.0)
    }

    pub fn nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    /// Lower Cholesky factor of `K + jitter·I`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.nodes() {
            return Err(KmglError::Dimension(format!(
                "vector of length {} against a kernel on {} nodes",
                x.len(),
                self.nodes()
            )));
        }
        Ok(())
    }

    /// `xᵀK⁻¹x` via one triangular solve.
    pub fn quad_inv(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_len(x)?;
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(x)
            .ok_or(KmglError::SingularKernel)?;
        Ok(y.norm_squared())
    }

    /// `K⁻¹x`.
    pub fn solve(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        Ok(self.chol.solve(x))
    }

    /// Dense symmetric `K⁻¹`, computed once and cached.
    pub fn inverse(&self) -> &DMatrix<f64> {
        self.inverse.get_or_init(|| symmetrize(&self.chol.inverse()))
    }
}

/// Diffusion kernel `K = (I + ηL)⁻¹`.
pub fn diffusion_kernel(g: &LaplacianGraph, eta: f64) -> Result<KernelOperator> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(KmglError::Config(format!("eta must be positive, got {eta}")));
    }
    let n = g.nodes();
    let system = DMatrix::identity(n, n) + g.laplacian() * eta;
    let chol = Cholesky::new(system).ok_or(KmglError::SingularKernel)?;
    let k = symmetrize(&chol.inverse());
    KernelOperator::from_matrix(&k, DEFAULT_JITTER)
}

/// User-supplied kernel matrix.
pub fn precomputed_kernel(m: &DMatrix<f64>, jitter: f64) -> Result<KernelOperator> {
    KernelOperator::from_matrix(m, jitter)
}

/// Gaussian RBF kernel `exp(-‖p_i - p_j‖² / (2h²))` over node coordinates,
/// one row per node.
pub fn rbf_kernel(coords: &DMatrix<f64>, bandwidth: f64) -> Result<KernelOperator> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(KmglError::Config(format!(
            "RBF bandwidth must be positive, got {bandwidth}"
        )));
    }
    let n = coords.nrows();
    let denom = 2.0 * bandwidth * bandwidth;
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d2 = (coords.row(i) - coords.row(j)).norm_squared();
        (-d2 / denom).exp()
    });
    KernelOperator::from_matrix(&k, DEFAULT_JITTER)
}

/// Free-function form of [`KernelOperator::quad_inv`].
pub fn quad_inv(k: &KernelOperator, x: &DVector<f64>) -> Result<f64> {
    k.quad_inv(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, laplacian_from_weights};
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn empty_graph_diffusion_is_identity() {
        let g = laplacian_from_weights(&[0.0; 3], 3).unwrap();
        let k = diffusion_kernel(&g, 2.0).unwrap();
        assert!((k.matrix() - DMatrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn two_node_diffusion_closed_form() {
        let g = laplacian_from_weights(&[1.0], 2).unwrap();
        let k = diffusion_kernel(&g, 1.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) / 3.0;
        let oracle = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0])
            .try_inverse()
            .unwrap();
        assert!((k.matrix() - &expected).amax() < 1e-14);
        assert!((&oracle - &expected).amax() < 1e-14);
    }

    #[test]
    fn diffusion_spectrum_in_unit_interval() {
        let g = erdos_renyi(20, 0.3, 5).unwrap();
        let k = diffusion_kernel(&g, 10.0).unwrap();
        let eig = SymmetricEigen::new(k.matrix().clone());
        assert!(eig.eigenvalues.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
    }

    #[test]
    fn diffusion_shares_eigenbasis_with_laplacian() {
        for seed in 0..5 {
            let g = erdos_renyi(8, 0.5, seed).unwrap();
            let eta = 3.0;
            let k = diffusion_kernel(&g, eta).unwrap();
            let eig = SymmetricEigen::new(g.laplacian().clone());
            for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
                let u = eig.eigenvectors.column(idx).into_owned();
                let ku = k.matrix() * &u;
                let expected = &u / (1.0 + eta * lambda);
                assert!((ku - expected).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn identity_needs_no_jitter() {
        let k = precomputed_kernel(&DMatrix::identity(4, 4), DEFAULT_JITTER).unwrap();
        assert_eq!(k.jitter_applied(), 0.0);
        assert_eq!(k.matrix(), &DMatrix::identity(4, 4));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let eig = SymmetricEigen::new(m.clone());
        assert!(eig.eigenvalues.iter().any(|&v| (v + 1.0).abs() < 1e-12));
        assert!(matches!(
            precomputed_kernel(&m, DEFAULT_JITTER),
            Err(KmglError::InvalidKernel(_))
        ));
    }

    #[test]
    fn near_singular_matrix_gets_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let k = precomputed_kernel(&m, DEFAULT_JITTER).unwrap();
        assert!(k.jitter_applied() > 0.0);
        assert!(k.jitter_applied() <= 1e-4);
    }

    #[test]
    fn asymmetric_input_is_symmetrized() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        let k = precomputed_kernel(&m, DEFAULT_JITTER).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.15, 0.15, 1.0]);
        assert!((k.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn non_square_is_dimension_error() {
        let m = DMatrix::zeros(2, 3);
        assert!(matches!(
            precomputed_kernel(&m, DEFAULT_JITTER),
            Err(KmglError::Dimension(_))
        ));
    }

    #[test]
    fn quad_inv_small_cases() {
        let k = KernelOperator::identity(2);
        assert_eq!(k.quad_inv(&DVector::from_vec(vec![3.0, 4.0])).unwrap(), 25.0);
        let k2 = precomputed_kernel(&(DMatrix::identity(2, 2) * 2.0), DEFAULT_JITTER).unwrap();
        assert!((k2.quad_inv(&DVector::from_vec(vec![2.0, 0.0])).unwrap() - 2.0).abs() < 1e-14);
        assert!(k.quad_inv(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn quad_inv_matches_dense_inverse() {
        for (seed, n) in [(1u64, 5usize), (2, 12), (3, 50)] {
            let m = random_spd(n, seed);
            let k = precomputed_kernel(&m, DEFAULT_JITTER).unwrap();
            let inv = m.clone().try_inverse().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..10 {
                let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
                let oracle = (x.transpose() * &inv * &x)[(0, 0)];
                let got = k.quad_inv(&x).unwrap();
                assert!(got >= 0.0);
                assert!((got - oracle).abs() <= 1e-8 * oracle.abs(), "{got} vs {oracle}");
            }
            assert!((k.inverse() - &inv).amax() < 1e-8 * inv.amax());
        }
    }

    #[test]
    fn rbf_kernel_is_unit_diagonal() {
        let coords = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0]);
        let k = rbf_kernel(&coords, 1.0).unwrap();
        for i in 0..3 {
            assert!((k.matrix()[(i, i)] - 1.0).abs() < 1e-15);
        }
        assert!((k.matrix()[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!(rbf_kernel(&coords, 0.0).is_err());
    }
}
