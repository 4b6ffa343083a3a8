//! Per-point curvature machinery.
//!
//! Conventions are pinned by one normalization: the unit round sphere has
//! scalar curvature n(n-1) (positive). Concretely,
//!
//! ```text
//! R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj + Gamma^i_ka Gamma^a_lj - Gamma^i_la Gamma^a_kj
//! Ric_jl  = R^a_jal                  (contraction on first and third slots)
//! R       = g^jl Ric_jl
//! k       = -R / (n(n-1))            (so the unit sphere has k = -1)
//! ```
//!
//! All residuals are relative: the defect norm is divided by the largest
//! cancellation-free term entering the expression, floored at 1e-12.

use crate::fields::{riemann_jets, CalcError, MetricJets, TensorJets};
use crate::metric::MetricField;
use nalgebra::DMatrix;

/// Absolute floor for residual denominators.
pub const SCALE_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn rel(defect: f64, scale: f64) -> f64 {
    defect / scale.max(SCALE_FLOOR)
}

/// All curvature data of one metric at one point.
#[derive(Clone, Debug)]
pub struct PointFrame {
    pub x: Vec<f64>,
    pub dim: usize,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// d_k g_ij, index (k, i, j).
    pub dg: Vec<f64>,
    /// Gamma^i_jk, index (i, j, k).
    pub gamma: Vec<f64>,
    /// d_m Gamma^i_jk, index (i, j, k, m).
    pub dgamma: Vec<f64>,
    /// R^i_jkl, index (i, j, k, l).
    pub riemann: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub scalar_r: f64,
    /// Normalized curvature constant -R/(n(n-1)).
    pub k: f64,
}

impl PointFrame {
    #[inline]
    pub fn gamma_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    pub fn dgamma_at(&self, i: usize, j: usize, k: usize, m: usize) -> f64 {
        self.dgamma[((i * self.dim + j) * self.dim + k) * self.dim + m]
    }

    #[inline]
    pub fn riemann_at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.riemann[((i * self.dim + j) * self.dim + k) * self.dim + l]
    }

    /// Fully lowered curvature R_ijkl = g_ia R^a_jkl.
    pub fn riemann_lowered(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        (0..self.dim).map(|a| self.g[(i, a)] * self.riemann_at(a, j, k, l)).sum()
    }

    pub fn max_abs_gamma(&self) -> f64 {
        self.gamma.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_riemann(&self) -> f64 {
        self.riemann.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Build the full curvature frame of `field` at `x`.
///
/// Deterministic: identical inputs produce bit-identical frames.
pub fn frame_at(field: &MetricField, x: &[f64]) -> Result<PointFrame, CalcError> {
    let mj = MetricJets::evaluate(field, x)?;
    frame_from_jets(&mj, x)
}

pub fn frame_from_jets(mj: &MetricJets, x: &[f64]) -> Result<PointFrame, CalcError> {
    let n = mj.dim();
    let g = mj.g_matrix();
    let g_inv = mj.g_inv_matrix();
    let mut dg = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                dg[(k * n + i) * n + j] = mj.g(i, j).grad(k);
            }
        }
    }
    let mut gamma = vec![0.0; n * n * n];
    let mut dgamma = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let jet = mj.gamma(i, j, k);
                gamma[(i * n + j) * n + k] = jet.value;
                for m in 0..n {
                    dgamma[((i * n + j) * n + k) * n + m] = jet.grad(m);
                }
            }
        }
    }
    let at = |v: &Vec<f64>, i: usize, j: usize, k: usize| v[(i * n + j) * n + k];
    let dat = |v: &Vec<f64>, i: usize, j: usize, k: usize, m: usize| {
        v[((i * n + j) * n + k) * n + m]
    };
    let mut riemann = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut r = dat(&dgamma, i, l, j, k) - dat(&dgamma, i, k, j, l);
                    for a in 0..n {
                        r += at(&gamma, i, k, a) * at(&gamma, a, l, j)
                            - at(&gamma, i, l, a) * at(&gamma, a, k, j);
                    }
                    riemann[((i * n + j) * n + k) * n + l] = r;
                }
            }
        }
    }
    let mut ricci = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in 0..n {
            let mut s = 0.0;
            for a in 0..n {
                s += riemann[((a * n + j) * n + a) * n + l];
            }
            ricci[(j, l)] = s;
        }
    }
    let mut scalar_r = 0.0;
    for j in 0..n {
        for l in 0..n {
            scalar_r += g_inv[(j, l)] * ricci[(j, l)];
        }
    }
    let k = -scalar_r / (n as f64 * (n as f64 - 1.0));
    Ok(PointFrame {
        x: x.to_vec(),
        dim: n,
        g,
        g_inv,
        dg,
        gamma,
        dgamma,
        riemann,
        ricci,
        scalar_r,
        k,
    })
}

/// Relative Frobenius norm of `Ric - (R/n) g`.
pub fn einstein_residual(frame: &PointFrame) -> f64 {
    let n = frame.dim as f64;
    let defect = (&frame.ricci - &frame.g * (frame.scalar_r / n)).norm();
    rel(defect, frame.g.norm())
}

/// Dense values of a tensor at a point.
#[derive(Clone, Debug)]
pub struct TensorPoint {
    pub dim: usize,
    pub contra: usize,
    pub co: usize,
    pub values: Vec<f64>,
}

impl TensorPoint {
    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.contra + self.co);
        self.values[idx.iter().fold(0, |acc, &i| acc * self.dim + i)]
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn from_jets(t: &TensorJets) -> TensorPoint {
        TensorPoint {
            dim: t.dim,
            contra: t.contra,
            co: t.co,
            values: t.values(),
        }
    }
}

/// Concircular curvature: Y^h_ijk = R^h_ijk - R/(n(n-1)) (d^h_j g_ik - d^h_k g_ij).
///
/// Vanishes exactly for constant sectional curvature.
pub fn yano_tensor(frame: &PointFrame) -> TensorPoint {
    let n = frame.dim;
    let c = frame.scalar_r / (n as f64 * (n as f64 - 1.0));
    let mut values = vec![0.0; n * n * n * n];
    for h in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = frame.riemann_at(h, i, j, k);
                    if h == j {
                        v -= c * frame.g[(i, k)];
                    }
                    if h == k {
                        v += c * frame.g[(i, j)];
                    }
                    values[((h * n + i) * n + j) * n + k] = v;
                }
            }
        }
    }
    TensorPoint { dim: n, contra: 1, co: 3, values }
}

/// Lowered curvature deviation from constant curvature, with diagnostics.
#[derive(Clone, Debug)]
pub struct ZTensorPoint {
    /// Z_ijkl, fully lowered.
    pub tensor: crate::rigidity::ZTensor,
    /// Relative residual of the pair-symmetry / antisymmetry conditions.
    pub symmetry_residual: f64,
    /// Relative residual of the trace condition g^ik Z_ijkl = 0
    /// (vanishes when the frame is Einstein; flagged otherwise).
    pub trace_residual: f64,
}

/// Z^i_jkl = R^i_jkl - k (d^i_l g_jk - d^i_k g_jl), lowered to Z_ijkl.
pub fn z_tensor(frame: &PointFrame) -> ZTensorPoint {
    let n = frame.dim;
    let k_const = frame.k;
    let mut upper = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut v = frame.riemann_at(i, j, k, l);
                    if i == l {
                        v -= k_const * frame.g[(j, k)];
                    }
                    if i == k {
                        v += k_const * frame.g[(j, l)];
                    }
                    upper[((i * n + j) * n + k) * n + l] = v;
                }
            }
        }
    }
    let mut lowered = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut v = 0.0;
                    for a in 0..n {
                        v += frame.g[(i, a)] * upper[((a * n + j) * n + k) * n + l];
                    }
                    lowered[((i * n + j) * n + k) * n + l] = v;
                }
            }
        }
    }
    let z = crate::rigidity::ZTensor { dim: n, values: lowered };
    let scale = z.max_abs().max(frame.max_abs_riemann());
    let mut sym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let v = z.get(i, j, k, l);
                    sym = sym.max((v - z.get(k, l, i, j)).abs());
                    sym = sym.max((v + z.get(j, i, k, l)).abs());
                }
            }
        }
    }
    let mut trace = 0.0f64;
    for j in 0..n {
        for l in 0..n {
            let mut t = 0.0;
            for i in 0..n {
                for k in 0..n {
                    t += frame.g_inv[(i, k)] * z.get(i, j, k, l);
                }
            }
            trace = trace.max(t.abs());
        }
    }
    ZTensorPoint {
        tensor: z,
        symmetry_residual: rel(sym, scale),
        trace_residual: rel(trace, scale),
    }
}

/// Norms of the divergence of the curvature tensor and of the antisymmetrized
/// Ricci derivative, as a pair of relative residuals.
///
/// The two conditions are equivalent (each is the contracted second Bianchi
/// identity of the other), so they vanish together — in particular on every
/// Einstein metric.
pub fn harmonic_curvature_residual(
    field: &MetricField,
    x: &[f64],
) -> Result<(f64, f64), CalcError> {
    let mj = MetricJets::evaluate(field, x)?;
    harmonic_curvature_from_jets(&mj)
}

/// Same residual pair computed from already-evaluated metric jets.
pub fn harmonic_curvature_from_jets(mj: &MetricJets) -> Result<(f64, f64), CalcError> {
    let riem = riemann_jets(mj)?;
    let driem = riem.covariant_derivative(&mj)?; // valence (1,4): slots i | j k l m
    let n = mj.dim();

    // scale: largest cancellation-free term in nabla Riemann
    let mut dscale = 0.0f64;
    let mut idx = [0usize; 4];
    loop {
        let jet = riem.get(&idx);
        for m in 0..n {
            dscale = dscale.max(jet.grad(m).abs());
        }
        let mut c = 4;
        let mut done = true;
        while c > 0 {
            c -= 1;
            idx[c] += 1;
            if idx[c] < n {
                done = false;
                break;
            }
            idx[c] = 0;
        }
        if done {
            break;
        }
    }
    let max_gamma = {
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    m = m.max(mj.gamma(i, j, k).value.abs());
                }
            }
        }
        m
    };
    let max_riem = riem.max_abs_value();
    let scale = dscale.max(max_gamma * max_riem);

    // divergence on the upper slot: R^a_jkl,a
    let div = driem.contract(0, 4)?;
    let div_norm = TensorPoint::from_jets(&div).frobenius();

    // Ricci derivative antisymmetry: R_ik,j - R_ij,k
    let ricci = riem.contract(0, 2)?;
    let dricci = ricci.covariant_derivative(&mj)?; // (0,3): i k m
    let mut asym = 0.0f64;
    let dricci_vals = TensorPoint::from_jets(&dricci);
    let mut sum_sq = 0.0;
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                let v = dricci_vals.get(&[i, k, j]) - dricci_vals.get(&[i, j, k]);
                sum_sq += v * v;
                asym = asym.max(v.abs());
            }
        }
    }
    let asym_norm = sum_sq.sqrt();
    Ok((rel(div_norm, scale), rel(asym_norm, scale)))
}

/// Specification of a tensor field for the covariant-derivative operation.
pub enum TensorFieldSpec<'a> {
    /// Components evaluate to jets; supports derivative orders 1..=3.
    Jets {
        contra: usize,
        co: usize,
        eval: &'a dyn Fn(&[f64]) -> Result<TensorJets, CalcError>,
    },
    /// Value-only sampler; first-order derivative via central differences
    /// with the documented step.
    Values {
        contra: usize,
        co: usize,
        eval: &'a dyn Fn(&[f64]) -> Result<Vec<f64>, CalcError>,
        step: f64,
    },
}

/// Covariant derivative of order 1..=3 of a tensor field at `x`, indices
/// appended in differentiation order.
pub fn covariant_derivative(
    field: &MetricField,
    spec: &TensorFieldSpec<'_>,
    x: &[f64],
    order: usize,
) -> Result<TensorPoint, CalcError> {
    if order == 0 || order > 3 {
        return Err(CalcError::OrderUnsupported(order));
    }
    let mj = MetricJets::evaluate(field, x)?;
    match spec {
        TensorFieldSpec::Jets { eval, .. } => {
            let mut t = eval(x)?;
            for _ in 0..order {
                t = t.covariant_derivative(&mj)?;
            }
            Ok(TensorPoint::from_jets(&t))
        }
        TensorFieldSpec::Values { contra, co, eval, step } => {
            if order != 1 {
                return Err(CalcError::OrderUnsupported(order));
            }
            let n = field.dim();
            let base = eval(x)?;
            let rank = contra + co;
            let len = base.len();
            debug_assert_eq!(len, n.pow(rank as u32));
            let frame = frame_from_jets(&mj, x)?;
            let mut values = vec![0.0; len * n];
            // partial derivatives by central differences
            let mut partials = Vec::with_capacity(n);
            for m in 0..n {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[m] += step;
                xm[m] -= step;
                let fp = eval(&xp)?;
                let fm = eval(&xm)?;
                let col: Vec<f64> =
                    fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
                partials.push(col);
            }
            let strides: Vec<usize> = (0..rank).map(|s| n.pow((rank - 1 - s) as u32)).collect();
            for flat in 0..len {
                let idx: Vec<usize> = strides.iter().map(|&st| (flat / st) % n).collect();
                for m in 0..n {
                    let mut acc = partials[m][flat];
                    for (slot, &is) in idx.iter().enumerate() {
                        let upper = slot < *contra;
                        for alpha in 0..n {
                            let mut swapped_flat = flat;
                            // replace slot digit with alpha
                            swapped_flat -= is * strides[slot];
                            swapped_flat += alpha * strides[slot];
                            let tval = base[swapped_flat];
                            if upper {
                                acc += frame.gamma_at(is, m, alpha) * tval;
                            } else {
                                acc -= frame.gamma_at(alpha, m, is) * tval;
                            }
                        }
                    }
                    values[flat * n + m] = acc;
                }
            }
            Ok(TensorPoint { dim: n, contra: *contra, co: co + 1, values })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::jets::Jet3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn build(id: &str, kv: &[(&str, &str)]) -> MetricField {
        let params: Vec<(String, String)> =
            kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        catalog::build(id, &params).unwrap()
    }

    #[test]
    fn euclidean_frame_is_flat() {
        let m = build("euclidean", &[("dim", "4")]);
        let f = frame_at(&m, &[0.3, -0.2, 0.9, 0.0]).unwrap();
        assert_eq!(f.max_abs_gamma(), 0.0);
        assert_eq!(f.max_abs_riemann(), 0.0);
        assert_eq!(f.scalar_r, 0.0);
        assert_eq!(f.k, 0.0);
        assert_eq!(einstein_residual(&f), 0.0);
    }

    #[test]
    fn sphere_scalar_curvature_dim2() {
        let m = build("sphere_stereo", &[("dim", "2")]);
        let f = frame_at(&m, &[0.0, 0.0]).unwrap();
        assert!((f.scalar_r - 2.0).abs() < 1e-10, "R = {}", f.scalar_r);
        assert!((f.k + 1.0).abs() < 1e-10);
    }

    #[test]
    fn sphere_scalar_curvature_dim4() {
        let m = build("sphere_stereo", &[("dim", "4")]);
        let f = frame_at(&m, &[0.3, 0.0, 0.0, 0.0]).unwrap();
        assert!((f.scalar_r - 12.0).abs() < 1e-7, "R = {}", f.scalar_r);
        assert!((f.k + 1.0).abs() < 1e-8);
        assert!(einstein_residual(&f) < 1e-8);
    }

    #[test]
    fn schwarzschild_is_ricci_flat() {
        let m = build("schwarzschild", &[]);
        let f = frame_at(&m, &[0.0, 4.0, PI / 2.0, 0.0]).unwrap();
        assert!(einstein_residual(&f) < 1e-7, "residual {}", einstein_residual(&f));
        assert!(f.ricci.norm() < 1e-7 * f.g.norm());
        // not flat though
        assert!(f.max_abs_riemann() > 1e-3);
    }

    #[test]
    fn riemann_symmetries_and_bianchi_across_catalog() {
        let metrics = vec![
            build("sphere_stereo", &[("dim", "3")]),
            build("hyperbolic_ball", &[("dim", "4")]),
            build("lorentz_const_curv", &[("dim", "4")]),
            build("schwarzschild", &[]),
            build("beltrami_pullback", &[("dim", "3"), ("A", "diag(2,1,1,1)")]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in &metrics {
            for _ in 0..8 {
                let x: Vec<f64> = m
                    .chart
                    .sample_box
                    .iter()
                    .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                    .collect();
                if !m.accepts(&x) {
                    continue;
                }
                let f = frame_at(&m, &x).unwrap();
                let n = f.dim;
                let scale = (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .flat_map(|(i, j)| (0..n).map(move |k| (i, j, k)))
                    .flat_map(|(i, j, k)| (0..n).map(move |l| (i, j, k, l)))
                    .map(|(i, j, k, l)| f.riemann_lowered(i, j, k, l).abs())
                    .fold(0.0f64, f64::max)
                    .max(SCALE_FLOOR);
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                let r = f.riemann_lowered(i, j, k, l);
                                let checks = [
                                    r + f.riemann_lowered(j, i, k, l),
                                    r + f.riemann_lowered(i, j, l, k),
                                    r - f.riemann_lowered(k, l, i, j),
                                    f.riemann_at(i, j, k, l)
                                        + f.riemann_at(i, k, l, j)
                                        + f.riemann_at(i, l, j, k),
                                ];
                                for (c, v) in checks.iter().enumerate() {
                                    assert!(
                                        v.abs() / scale < 1e-8,
                                        "{}: symmetry {c} fails at {x:?}: {v}",
                                        m.label
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn yano_tensor_cases() {
        let sphere = build("sphere_stereo", &[("dim", "4")]);
        let f = frame_at(&sphere, &[0.2, -0.1, 0.4, 0.0]).unwrap();
        let y = yano_tensor(&f);
        assert!(rel(y.max_abs(), f.max_abs_riemann()) < 1e-8);

        let flat = build("euclidean", &[("dim", "3")]);
        let f = frame_at(&flat, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(yano_tensor(&f).max_abs(), 0.0);

        let schw = build("schwarzschild", &[]);
        let f = frame_at(&schw, &[0.0, 4.0, PI / 2.0, 0.0]).unwrap();
        assert!(yano_tensor(&f).max_abs() > 1e-2);
    }

    #[test]
    fn z_tensor_cases() {
        let sphere = build("sphere_stereo", &[("dim", "4")]);
        let f = frame_at(&sphere, &[0.1, 0.2, -0.3, 0.05]).unwrap();
        let z = z_tensor(&f);
        assert!(rel(z.tensor.max_abs(), f.max_abs_riemann()) < 1e-8);

        let schw = build("schwarzschild", &[]);
        let f = frame_at(&schw, &[0.2, 5.0, PI / 2.5, 1.0]).unwrap();
        let z = z_tensor(&f);
        assert!(z.tensor.max_abs() > 1e-3);
        assert!(z.symmetry_residual < 1e-10);
        assert!(z.trace_residual < 1e-8); // Ricci-flat is Einstein

        // a visibly non-Einstein metric: trace condition violated, flagged
        let src = "dim 3; coords x y z; box [-1,1]^3\n\
                   g11 = 1+x^2; g22 = 1+exp(y); g33 = 2+sin(x+z)";
        let m = MetricField::parse(src).unwrap();
        let f = frame_at(&m, &[0.4, 0.3, -0.2]).unwrap();
        assert!(einstein_residual(&f) > 1e-3);
        let z = z_tensor(&f);
        assert!(z.symmetry_residual < 1e-10); // symmetries hold regardless
        assert!(z.trace_residual > 1e-4);
    }

    #[test]
    fn harmonic_curvature_pair() {
        let flat = build("euclidean", &[("dim", "3")]);
        let (a, b) = harmonic_curvature_residual(&flat, &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!((a, b), (0.0, 0.0));

        let sphere = build("sphere_stereo", &[("dim", "4")]);
        let (a, b) = harmonic_curvature_residual(&sphere, &[0.3, -0.2, 0.1, 0.4]).unwrap();
        assert!(a < 1e-6, "divergence residual {a}");
        assert!(b < 1e-6, "ricci asymmetry residual {b}");

        // both residuals agree in vanishing status on a generic non-Einstein metric
        let src = "dim 3; coords x y z; box [-1,1]^3\n\
                   g11 = 1+x^2; g22 = 1+exp(y); g33 = 2+sin(x+z)";
        let m = MetricField::parse(src).unwrap();
        let (a, b) = harmonic_curvature_residual(&m, &[0.4, 0.3, -0.2]).unwrap();
        assert!(a > 1e-4 && b > 1e-4, "expected both nonvanishing: {a}, {b}");
    }

    #[test]
    fn leibniz_rule_on_flat_chart() {
        // nabla(f g) for scalar f = x1 on flat space has components df x g.
        let m = build("euclidean", &[("dim", "3")]);
        let x = [0.5, -0.4, 0.2];
        let eval = |x: &[f64]| -> Result<TensorJets, CalcError> {
            let mj = MetricJets::evaluate(&m, x)?;
            let f = Jet3::coordinate(3, 0, x)?;
            let mut t = TensorJets::zeros(3, 0, 2);
            for i in 0..3 {
                for j in 0..3 {
                    t.set(&[i, j], f.mul(mj.g(i, j))?);
                }
            }
            Ok(t)
        };
        let spec = TensorFieldSpec::Jets { contra: 0, co: 2, eval: &eval };
        let d = covariant_derivative(&m, &spec, &x, 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let want = if i == j && k == 0 { 1.0 } else { 0.0 };
                    assert!((d.get(&[i, j, k]) - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn ricci_identity_on_covector() {
        // lambda_{i,jk} - lambda_{i,kj} = lambda_a R^a_ijk  on the 4-sphere chart.
        let m = build("sphere_stereo", &[("dim", "4")]);
        let x = [0.25, -0.15, 0.35, 0.1];
        let mj = MetricJets::evaluate(&m, &x).unwrap();
        let f = frame_from_jets(&mj, &x).unwrap();
        // covector field with nontrivial derivatives
        let mut lam = TensorJets::zeros(4, 0, 1);
        let c0 = Jet3::coordinate(4, 0, &x).unwrap();
        let c1 = Jet3::coordinate(4, 1, &x).unwrap();
        let c2 = Jet3::coordinate(4, 2, &x).unwrap();
        let c3 = Jet3::coordinate(4, 3, &x).unwrap();
        lam.set(&[0], c1.sin());
        lam.set(&[1], c0.mul(&c2).unwrap());
        lam.set(&[2], c3.exp());
        lam.set(&[3], c0.mul(&c0).unwrap().sub(&c2).unwrap());
        let lam_vals = lam.values();
        let dd = lam
            .covariant_derivative(&mj)
            .unwrap()
            .covariant_derivative(&mj)
            .unwrap();
        let ddv = TensorPoint::from_jets(&dd);
        let mut max_err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let lhs = ddv.get(&[i, j, k]) - ddv.get(&[i, k, j]);
                    let mut rhs = 0.0;
                    for a in 0..4 {
                        rhs += lam_vals[a] * f.riemann_at(a, i, j, k);
                    }
                    scale = scale.max(lhs.abs()).max(rhs.abs());
                    max_err = max_err.max((lhs - rhs).abs());
                }
            }
        }
        assert!(rel(max_err, scale) < 1e-7, "ricci identity defect {}", rel(max_err, scale));
    }

    #[test]
    fn fd_backed_first_order_derivative() {
        // value-only sampler: scalar x1^2 on the 2-sphere chart
        let m = build("sphere_stereo", &[("dim", "2")]);
        let x = [0.3, 0.2];
        let eval = |x: &[f64]| -> Result<Vec<f64>, CalcError> { Ok(vec![x[0] * x[0]]) };
        let spec = TensorFieldSpec::Values { contra: 0, co: 0, eval: &eval, step: 1e-6 };
        let d = covariant_derivative(&m, &spec, &x, 1).unwrap();
        assert!((d.get(&[0]) - 2.0 * x[0]).abs() < 1e-8);
        assert!(d.get(&[1]).abs() < 1e-8);
        // second order through FD is unsupported
        assert!(matches!(
            covariant_derivative(&m, &spec, &x, 2),
            Err(CalcError::OrderUnsupported(2))
        ));
    }

    #[test]
    fn frames_are_deterministic() {
        let m = build("beltrami_pullback", &[("dim", "4"), ("A", "diag(2,1,1,1,1)")]);
        let x = [0.3, -0.2, 0.5, 0.1];
        let a = frame_at(&m, &x).unwrap();
        let b = frame_at(&m, &x).unwrap();
        assert_eq!(a.riemann, b.riemann);
        assert_eq!(a.scalar_r.to_bits(), b.scalar_r.to_bits());
    }
}
