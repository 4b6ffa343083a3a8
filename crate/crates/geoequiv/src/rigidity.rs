//! Finite-dimensional linear algebra behind the rigidity argument.
//!
//! Executable versions of the kernel statements used to force the curvature
//! deviation tensor to vanish in dimension 4: rank computations on the
//! constrained component space, Jordan structure of a self-adjoint endomorphism
//! with respect to an indefinite metric, kernel containment for generalized
//! eigenspaces, and the eigenvalue-gradient alignment check on field data.

use nalgebra::DMatrix;

/// Fully lowered 4-index tensor with the pair symmetries
/// `Z_ijkl = Z_klij`, `Z_ijkl = -Z_jikl` (hence `Z_ijkl = -Z_ijlk`).
#[derive(Clone, Debug)]
pub struct ZTensor {
    pub dim: usize,
    /// Dense values, index (i, j, k, l).
    pub values: Vec<f64>,
}

impl ZTensor {
    pub fn zeros(dim: usize) -> ZTensor {
        ZTensor { dim, values: vec![0.0; dim * dim * dim * dim] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.values[((i * self.dim + j) * self.dim + k) * self.dim + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.values[((i * self.dim + j) * self.dim + k) * self.dim + l] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum violation of the defining symmetries, relative to the scale.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = self.get(i, j, k, l);
                        worst = worst.max((v - self.get(k, l, i, j)).abs());
                        worst = worst.max((v + self.get(j, i, k, l)).abs());
                    }
                }
            }
        }
        worst / self.max_abs().max(crate::tensor::SCALE_FLOOR)
    }

    /// Norm of the contraction v^i Z_ijkl.
    pub fn kernel_violation(&self, v: &[f64]) -> f64 {
        let n = self.dim;
        let mut sum = 0.0;
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut c = 0.0;
                    for i in 0..n {
                        c += v[i] * self.get(i, j, k, l);
                    }
                    sum += c * c;
                }
            }
        }
        sum.sqrt()
    }
}

