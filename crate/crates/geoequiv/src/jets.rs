//! Truncated Taylor arithmetic of order 3.
//!
//! A [`Jet3`] carries the value of a scalar quantity at a point together with
//! its partial derivatives up to third order. Arithmetic and elementary
//! functions propagate all coefficients, so any quantity assembled from metric
//! components by rational operations and elementary functions comes with exact
//! (to rounding) derivatives — no finite differencing anywhere in the chain.
//!
//! Symmetric coefficient blocks are stored once per canonical index tuple
//! (`i <= j` for the Hessian, `i <= j <= k` for the third order block).
//! Dimensions up to [`MAX_DIM`] are supported; storage is dense and inline.

use thiserror::Error;

/// Largest chart dimension supported by the inline coefficient storage.
pub const MAX_DIM: usize = 8;

const HESS_LEN: usize = MAX_DIM * (MAX_DIM + 1) / 2;
const THIRD_LEN: usize = MAX_DIM * (MAX_DIM + 1) * (MAX_DIM + 2) / 6;

/// Relative threshold below which a divisor is treated as zero.
///
/// Dividing by a jet whose value is this close to zero (relative to the
/// numerator) is reported as an error instead of producing NaN/Inf that would
/// poison residual verdicts downstream.
pub const DIV_EPS: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("jet dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("coordinate index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension {0} outside supported range 1..={MAX_DIM}")]
    UnsupportedDim(usize),
    #[error("division by near-zero value {divisor:e}")]
    DivisionByZero { divisor: f64 },
    #[error("{func} applied outside its domain (argument value {value:e})")]
    Domain { func: &'static str, value: f64 },
}

#[inline]
fn hess_idx(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

#[inline]
fn third_idx(i: usize, j: usize, k: usize) -> usize {
    let mut t = [i, j, k];
    t.sort_unstable();
    let [i, j, k] = t;
    k * (k + 1) * (k + 2) / 6 + j * (j + 1) / 2 + i
}

/// Value and partial derivatives up to order 3 of a scalar quantity at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet3 {
    dim: usize,
    /// Value of the quantity at the base point.
    pub value: f64,
    grad: [f64; MAX_DIM],
    hess: [f64; HESS_LEN],
    third: [f64; THIRD_LEN],
}

impl Jet3 {
    /// Constant jet: all derivatives vanish.
    pub fn constant(dim: usize, value: f64) -> Jet3 {
        assert!(dim >= 1 && dim <= MAX_DIM, "jet dimension out of range");
        Jet3 {
            dim,
            value,
            grad: [0.0; MAX_DIM],
            hess: [0.0; HESS_LEN],
            third: [0.0; THIRD_LEN],
        }
    }

    /// Jet of the `k`-th coordinate function evaluated at `x`.
    pub fn coordinate(dim: usize, k: usize, x: &[f64]) -> Result<Jet3, JetError> {
        if dim < 1 || dim > MAX_DIM {
            return Err(JetError::UnsupportedDim(dim));
        }
        if k >= dim {
            return Err(JetError::IndexOutOfRange { index: k, dim });
        }
        let mut j = Jet3::constant(dim, x[k]);
        j.grad[k] = 1.0;
        Ok(j)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grad(&self, i: usize) -> f64 {
        debug_assert!(i < self.dim);
        self.grad[i]
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.dim && j < self.dim);
        self.hess[hess_idx(i, j)]
    }

    pub fn third(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert!(i < self.dim && j < self.dim && k < self.dim);
        self.third[third_idx(i, j, k)]
    }

    pub fn grad_vec(&self) -> Vec<f64> {
        self.grad[..self.dim].to_vec()
    }

    /// Jet of the partial derivative with respect to coordinate `k`.
    ///
    /// The result is one order shallower: its value/grad/hess are this jet's
    /// grad/hess/third slices, and its own third-order block is zero and must
    /// not be consumed.
    pub fn partial(&self, k: usize) -> Jet3 {
        debug_assert!(k < self.dim);
        let mut out = Jet3::constant(self.dim, self.grad[k]);
        for i in 0..self.dim {
            out.grad[i] = self.hess(i, k);
        }
        for j in 0..self.dim {
            for i in 0..=j {
                out.hess[hess_idx(i, j)] = self.third(i, j, k);
            }
        }
        out
    }

    fn check_dim(&self, other: &Jet3) -> Result<(), JetError> {
        if self.dim != other.dim {
            Err(JetError::DimMismatch(self.dim, other.dim))
        } else {
            Ok(())
        }
    }

    pub fn add(&self, rhs: &Jet3) -> Result<Jet3, JetError> {
        self.check_dim(rhs)?;
        let mut out = self.clone();
        out.value += rhs.value;
        for i in 0..MAX_DIM {
            out.grad[i] += rhs.grad[i];
        }
        for i in 0..HESS_LEN {
            out.hess[i] += rhs.hess[i];
        }
        for i in 0..THIRD_LEN {
            out.third[i] += rhs.third[i];
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Jet3) -> Result<Jet3, JetError> {
        self.check_dim(rhs)?;
        let mut out = self.clone();
        out.value -= rhs.value;
        for i in 0..MAX_DIM {
            out.grad[i] -= rhs.grad[i];
        }
        for i in 0..HESS_LEN {
            out.hess[i] -= rhs.hess[i];
        }
        for i in 0..THIRD_LEN {
            out.third[i] -= rhs.third[i];
        }
        Ok(out)
    }

    pub fn neg(&self) -> Jet3 {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Jet3 {
        let mut out = self.clone();
        out.value *= c;
        for v in out.grad.iter_mut() {
            *v *= c;
        }
        for v in out.hess.iter_mut() {
            *v *= c;
        }
        for v in out.third.iter_mut() {
            *v *= c;
        }
        out
    }

    /// Leibniz product through third order.
    pub fn mul(&self, rhs: &Jet3) -> Result<Jet3, JetError> {
        self.check_dim(rhs)?;
        let n = self.dim;
        let (a, b) = (self, rhs);
        let mut out = Jet3::constant(n, a.value * b.value);
        for i in 0..n {
            out.grad[i] = a.grad[i] * b.value + a.value * b.grad[i];
        }
        for j in 0..n {
            for i in 0..=j {
                out.hess[hess_idx(i, j)] = a.hess(i, j) * b.value
                    + a.grad[i] * b.grad[j]
                    + a.grad[j] * b.grad[i]
                    + a.value * b.hess(i, j);
            }
        }
        for k in 0..n {
            for j in 0..=k {
                for i in 0..=j {
                    out.third[third_idx(i, j, k)] = a.third(i, j, k) * b.value
                        + a.hess(i, j) * b.grad[k]
                        + a.hess(i, k) * b.grad[j]
                        + a.hess(j, k) * b.grad[i]
                        + a.grad[i] * b.hess(j, k)
                        + a.grad[j] * b.hess(i, k)
                        + a.grad[k] * b.hess(i, j)
                        + a.value * b.third(i, j, k);
                }
            }
        }
        Ok(out)
    }

    pub fn div(&self, rhs: &Jet3) -> Result<Jet3, JetError> {
        self.check_dim(rhs)?;
        if rhs.value.abs() <= DIV_EPS * (1.0 + self.value.abs()) {
            return Err(JetError::DivisionByZero { divisor: rhs.value });
        }
        let v = rhs.value;
        let recip = rhs.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v), -6.0 / (v * v * v * v));
        self.mul(&recip)
    }

    /// Chain rule: outer function with derivatives `f0..f3` at `self.value`.
    fn compose(&self, f0: f64, f1: f64, f2: f64, f3: f64) -> Jet3 {
        let n = self.dim;
        let u = self;
        let mut out = Jet3::constant(n, f0);
        for i in 0..n {
            out.grad[i] = f1 * u.grad[i];
        }
        for j in 0..n {
            for i in 0..=j {
                out.hess[hess_idx(i, j)] = f2 * u.grad[i] * u.grad[j] + f1 * u.hess(i, j);
            }
        }
        for k in 0..n {
            for j in 0..=k {
                for i in 0..=j {
                    out.third[third_idx(i, j, k)] = f3 * u.grad[i] * u.grad[j] * u.grad[k]
                        + f2 * (u.hess(i, j) * u.grad[k]
                            + u.hess(i, k) * u.grad[j]
                            + u.hess(j, k) * u.grad[i])
                        + f1 * u.third(i, j, k);
                }
            }
        }
        out
    }

    pub fn sin(&self) -> Jet3 {
        let v = self.value;
        self.compose(v.sin(), v.cos(), -v.sin(), -v.cos())
    }

    pub fn cos(&self) -> Jet3 {
        let v = self.value;
        self.compose(v.cos(), -v.sin(), -v.cos(), v.sin())
    }

    pub fn exp(&self) -> Jet3 {
        let e = self.value.exp();
        self.compose(e, e, e, e)
    }

    pub fn ln(&self) -> Result<Jet3, JetError> {
        let v = self.value;
        if v <= 0.0 {
            return Err(JetError::Domain { func: "log", value: v });
        }
        Ok(self.compose(v.ln(), 1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v)))
    }

    pub fn sqrt(&self) -> Result<Jet3, JetError> {
        let v = self.value;
        if v <= 0.0 {
            return Err(JetError::Domain { func: "sqrt", value: v });
        }
        let s = v.sqrt();
        Ok(self.compose(s, 0.5 / s, -0.25 / (s * v), 0.375 / (s * v * v)))
    }

    pub fn atan(&self) -> Jet3 {
        let v = self.value;
        let d = 1.0 + v * v;
        self.compose(v.atan(), 1.0 / d, -2.0 * v / (d * d), (6.0 * v * v - 2.0) / (d * d * d))
    }

    /// Integer power by repeated multiplication; supports negative bases.
    pub fn powi(&self, e: i64) -> Result<Jet3, JetError> {
        if e == 0 {
            return Ok(Jet3::constant(self.dim, 1.0));
        }
        let m = e.unsigned_abs();
        let mut acc = self.clone();
        for _ in 1..m {
            acc = acc.mul(self)?;
        }
        if e < 0 {
            Jet3::constant(self.dim, 1.0).div(&acc)
        } else {
            Ok(acc)
        }
    }

    /// Real power, routed through `exp(e * log(base))`; requires positive base.
    pub fn powf(&self, e: f64) -> Result<Jet3, JetError> {
        if e == e.trunc() && e.abs() < 64.0 {
            return self.powi(e as i64);
        }
        if self.value <= 0.0 {
            return Err(JetError::Domain { func: "pow", value: self.value });
        }
        Ok(self.ln()?.scale(e).exp())
    }

    /// Maximum absolute coefficient over every stored order.
    pub fn max_abs_coeff(&self) -> f64 {
        let mut m = self.value.abs();
        for v in &self.grad {
            m = m.max(v.abs());
        }
        for v in &self.hess {
            m = m.max(v.abs());
        }
        for v in &self.third {
            m = m.max(v.abs());
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|v| v.is_finite())
            && self.hess.iter().all(|v| v.is_finite())
            && self.third.iter().all(|v| v.is_finite())
    }
}

macro_rules! impl_op {
    ($trait:ident, $method:ident, $delegate:ident) => {
        impl std::ops::$trait for &Jet3 {
            type Output = Jet3;
            fn $method(self, rhs: &Jet3) -> Jet3 {
                self.$delegate(rhs).expect("jet arithmetic")
            }
        }
        impl std::ops::$trait for Jet3 {
            type Output = Jet3;
            fn $method(self, rhs: Jet3) -> Jet3 {
                (&self).$delegate(&rhs).expect("jet arithmetic")
            }
        }
    };
}

impl_op!(Add, add, add);
impl_op!(Sub, sub, sub);
impl_op!(Mul, mul, mul);

impl std::ops::Neg for &Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        Jet3::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord(dim: usize, k: usize, x: &[f64]) -> Jet3 {
        Jet3::coordinate(dim, k, x).unwrap()
    }

    #[test]
    fn coordinate_projection() {
        let j = coord(2, 0, &[3.0, 5.0]);
        assert_eq!(j.value, 3.0);
        assert_eq!(j.grad(0), 1.0);
        assert_eq!(j.grad(1), 0.0);
        assert_eq!(j.hess(0, 0), 0.0);
        assert_eq!(j.third(0, 0, 0), 0.0);

        let j = coord(4, 3, &[0.0; 4]);
        assert_eq!(j.value, 0.0);
        assert_eq!(j.grad(3), 1.0);
    }

    #[test]
    fn coordinate_index_out_of_range() {
        assert!(matches!(
            Jet3::coordinate(3, 3, &[0.0; 3]),
            Err(JetError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn bilinear_product() {
        // x*y at (2,3): value 6, grad (3,2), mixed second derivative 1.
        let x = coord(2, 0, &[2.0, 3.0]);
        let y = coord(2, 1, &[2.0, 3.0]);
        let p = &x * &y;
        assert_eq!(p.value, 6.0);
        assert_eq!(p.grad(0), 3.0);
        assert_eq!(p.grad(1), 2.0);
        assert_eq!(p.hess(0, 1), 1.0);
        assert_eq!(p.hess(0, 0), 0.0);
    }

    #[test]
    fn constants_multiply() {
        let a = Jet3::constant(3, 2.0);
        let b = Jet3::constant(3, 3.0);
        let p = &a * &b;
        assert_eq!(p.value, 6.0);
        assert_eq!(p.max_abs_coeff(), 6.0); // all derivatives zero
    }

    #[test]
    fn division_identity() {
        let x = coord(1, 0, &[5.0]);
        let q = x.div(&x).unwrap();
        assert!((q.value - 1.0).abs() < 1e-15);
        assert!(q.grad(0).abs() < 1e-15);
        assert!(q.hess(0, 0).abs() < 1e-15);
        assert!(q.third(0, 0, 0).abs() < 1e-14);
    }

    #[test]
    fn division_by_near_zero_is_error() {
        let a = Jet3::constant(1, 1.0);
        let b = Jet3::constant(1, 1e-14);
        assert!(matches!(a.div(&b), Err(JetError::DivisionByZero { .. })));
    }

    #[test]
    fn cube_third_derivative() {
        // d^3/dx^3 (x^3) = 6, via x * (x * x)
        let x = coord(1, 0, &[1.7]);
        let c = &x * &(&x * &x);
        assert!((c.third(0, 0, 0) - 6.0).abs() < 1e-12);
        assert!((c.hess(0, 0) - 6.0 * 1.7).abs() < 1e-12);
    }

    #[test]
    fn sine_taylor_coefficients() {
        let x = coord(1, 0, &[0.0]);
        let s = x.sin();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.grad(0), 1.0);
        assert_eq!(s.hess(0, 0), 0.0);
        assert_eq!(s.third(0, 0, 0), -1.0);
    }

    #[test]
    fn log_exp_inverse_pair() {
        let x = coord(2, 0, &[0.7, -0.2]);
        let roundtrip = x.exp().ln().unwrap();
        assert!((roundtrip.value - 0.7).abs() < 1e-15);
        assert!((roundtrip.grad(0) - 1.0).abs() < 1e-13);
        assert!(roundtrip.grad(1).abs() < 1e-13);
        assert!(roundtrip.hess(0, 0).abs() < 1e-13);
        assert!(roundtrip.third(0, 0, 0).abs() < 1e-12);
    }

    #[test]
    fn exp_of_zero_constant() {
        let e = Jet3::constant(2, 0.0).exp();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.max_abs_coeff(), 1.0);
    }

    #[test]
    fn log_domain_error_reports_value() {
        let x = Jet3::constant(1, -2.0);
        match x.ln() {
            Err(JetError::Domain { func, value }) => {
                assert_eq!(func, "log");
                assert_eq!(value, -2.0);
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn partial_shifts_orders() {
        // f = x^2 y at (2, 3); df/dx = 2xy with grad (2y, 2x), mixed hess 2.
        let x = coord(2, 0, &[2.0, 3.0]);
        let y = coord(2, 1, &[2.0, 3.0]);
        let f = &(&x * &x) * &y;
        let fx = f.partial(0);
        assert!((fx.value - 12.0).abs() < 1e-15);
        assert!((fx.grad(0) - 6.0).abs() < 1e-15);
        assert!((fx.grad(1) - 4.0).abs() < 1e-15);
        assert!((fx.hess(0, 1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dim_mismatch_detected() {
        let a = Jet3::constant(2, 1.0);
        let b = Jet3::constant(3, 1.0);
        assert!(matches!(a.add(&b), Err(JetError::DimMismatch(2, 3))));
    }

    #[test]
    fn integer_power_negative_base() {
        let x = coord(1, 0, &[-2.0]);
        let p = x.powi(3).unwrap();
        assert!((p.value + 8.0).abs() < 1e-14);
        assert!((p.grad(0) - 12.0).abs() < 1e-13);
        assert!((p.third(0, 0, 0) - 6.0).abs() < 1e-13);
    }

    #[test]
    fn fractional_power_requires_positive_base() {
        let x = coord(1, 0, &[-1.0]);
        assert!(matches!(x.powf(0.5), Err(JetError::Domain { .. })));
        let y = coord(1, 0, &[4.0]);
        let p = y.powf(0.5).unwrap();
        assert!((p.value - 2.0).abs() < 1e-14);
        assert!((p.grad(0) - 0.25).abs() < 1e-14);
    }
}
