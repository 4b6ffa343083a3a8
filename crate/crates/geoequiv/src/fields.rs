//! Jet-backed tensor data at a single point.
//!
//! Everything here operates on [`Jet3`] components, so covariant derivative
//! chains keep exact derivatives as long as the truncation order allows:
//! metric components are order 3, Christoffel jets are effectively order 2,
//! and each covariant derivative consumes one order via [`Jet3::partial`].

use crate::expr::ExprError;
use crate::jets::{Jet3, JetError};
use crate::metric::MetricField;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalcError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("jet arithmetic failed: {0}")]
    Jet(#[from] JetError),
    #[error("metric is singular at the evaluation point (pivot {pivot:e})")]
    SingularMetric { pivot: f64 },
    #[error("covariant derivative order {0} unsupported (jet depth exhausted)")]
    OrderUnsupported(usize),
    #[error("{0}")]
    Precondition(String),
}

/// Gauss-Jordan inverse and determinant of a square matrix of jets.
///
/// Pivoting is on the value part; a pivot below `1e-12 * scale` reports the
/// metric as singular rather than dividing through.
pub fn jet_matrix_inverse(
    m: &[Vec<Jet3>],
) -> Result<(Vec<Vec<Jet3>>, Jet3), CalcError> {
    let n = m.len();
    let dim = m[0][0].dim();
    let scale = m
        .iter()
        .flat_map(|row| row.iter())
        .map(|j| j.value.abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut a: Vec<Vec<Jet3>> = m.to_vec();
    let mut inv: Vec<Vec<Jet3>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| Jet3::constant(dim, if i == j { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    let mut det = Jet3::constant(dim, 1.0);
    let mut sign = 1.0;
    for col in 0..n {
        let p = (col..n)
            .max_by(|&r, &s| {
                a[r][col]
                    .value
                    .abs()
                    .partial_cmp(&a[s][col].value.abs())
                    .unwrap()
            })
            .unwrap();
        let pivot_val = a[p][col].value;
        if pivot_val.abs() <= 1e-12 * scale {
            return Err(CalcError::SingularMetric { pivot: pivot_val });
        }
        if p != col {
            a.swap(p, col);
            inv.swap(p, col);
            sign = -sign;
        }
        let pivot = a[col][col].clone();
        det = det.mul(&pivot)?;
        for k in 0..n {
            a[col][k] = a[col][k].div(&pivot)?;
            inv[col][k] = inv[col][k].div(&pivot)?;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col].clone();
                if f.max_abs_coeff() == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[r][k] = a[r][k].sub(&f.mul(&a[col][k])?)?;
                    inv[r][k] = inv[r][k].sub(&f.mul(&inv[col][k])?)?;
                }
            }
        }
    }
    Ok((inv, det.scale(sign)))
}

/// Metric component jets, inverse jets, determinant jet, and Christoffel jets
/// of one metric at one point.
#[derive(Clone)]
pub struct MetricJets {
    dim: usize,
    g: Vec<Vec<Jet3>>,
    g_inv: Vec<Vec<Jet3>>,
    det: Jet3,
    gamma: Vec<Jet3>, // index (i, j, k) -> Gamma^i_jk, symmetric in j, k
}

impl MetricJets {
    pub fn evaluate(field: &MetricField, x: &[f64]) -> Result<MetricJets, CalcError> {
        Self::from_component_jets(field.eval_jets(x)?)
    }

    pub fn from_component_jets(g: Vec<Vec<Jet3>>) -> Result<MetricJets, CalcError> {
        let n = g.len();
        let (g_inv, det) = jet_matrix_inverse(&g)?;
        // Gamma^i_jk = 1/2 g^im (d_j g_mk + d_k g_mj - d_m g_jk)
        let mut dg = Vec::with_capacity(n);
        for m in 0..n {
            let mut row = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    row.push(g[i][j].partial(m));
                }
            }
            dg.push(row);
        }
        let dg_at = |m: usize, i: usize, j: usize| &dg[m][i * n + j];
        let mut gamma: Vec<Jet3> = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if k < j {
                        // symmetric in (j, k); copy the computed entry
                        let prev = gamma[(i * n + k) * n + j].clone();
                        gamma.push(prev);
                        continue;
                    }
                    let mut acc = Jet3::constant(g[0][0].dim(), 0.0);
                    for m in 0..n {
                        let t = dg_at(j, m, k)
                            .add(dg_at(k, m, j))?
                            .sub(dg_at(m, j, k))?;
                        acc = acc.add(&g_inv[i][m].mul(&t)?)?;
                    }
                    gamma.push(acc.scale(0.5));
                }
            }
        }
        Ok(MetricJets { dim: n, g, g_inv, det, gamma })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn g(&self, i: usize, j: usize) -> &Jet3 {
        &self.g[i][j]
    }

    pub fn g_inv(&self, i: usize, j: usize) -> &Jet3 {
        &self.g_inv[i][j]
    }

    pub fn det(&self) -> &Jet3 {
        &self.det
    }

    pub fn gamma(&self, i: usize, j: usize, k: usize) -> &Jet3 {
        &self.gamma[(i * self.dim + j) * self.dim + k]
    }

    /// Metric values as a matrix.
    pub fn g_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim;
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.g[i][j].value)
    }

    pub fn g_inv_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim;
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.g_inv[i][j].value)
    }
}

/// Dense tensor of jets at a point, with `contra` upper slots followed by
/// `co` lower slots.
#[derive(Clone)]
pub struct TensorJets {
    pub dim: usize,
    pub contra: usize,
    pub co: usize,
    comps: Vec<Jet3>,
}

impl TensorJets {
    pub fn zeros(dim: usize, contra: usize, co: usize) -> TensorJets {
        let len = dim.pow((contra + co) as u32);
        TensorJets {
            dim,
            contra,
            co,
            comps: vec![Jet3::constant(dim, 0.0); len],
        }
    }

    pub fn scalar(j: Jet3) -> TensorJets {
        TensorJets { dim: j.dim(), contra: 0, co: 0, comps: vec![j] }
    }

    pub fn rank(&self) -> usize {
        self.contra + self.co
    }

    fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> &Jet3 {
        &self.comps[self.flat(idx)]
    }

    pub fn set(&mut self, idx: &[usize], j: Jet3) {
        let f = self.flat(idx);
        self.comps[f] = j;
    }

    /// Plain values, flattened in the same order as the jet components.
    pub fn values(&self) -> Vec<f64> {
        self.comps.iter().map(|j| j.value).collect()
    }

    pub fn max_abs_value(&self) -> f64 {
        self.comps.iter().map(|j| j.value.abs()).fold(0.0, f64::max)
    }

    /// Frobenius norm of the value part.
    pub fn frobenius(&self) -> f64 {
        self.comps.iter().map(|j| j.value * j.value).sum::<f64>().sqrt()
    }

    /// Covariant derivative with respect to the given metric connection.
    /// The new (covariant) index is appended last.
    pub fn covariant_derivative(&self, mj: &MetricJets) -> Result<TensorJets, CalcError> {
        let n = self.dim;
        let rank = self.rank();
        let mut out = TensorJets::zeros(n, self.contra, self.co + 1);
        let mut idx = vec![0usize; rank];
        loop {
            let base = self.get(&idx);
            for m in 0..n {
                let mut acc = base.partial(m);
                // connection terms
                for (slot, &is) in idx.iter().enumerate() {
                    let upper = slot < self.contra;
                    for alpha in 0..n {
                        let mut swapped = idx.clone();
                        swapped[slot] = alpha;
                        let t = self.get(&swapped);
                        if t.max_abs_coeff() == 0.0 {
                            continue;
                        }
                        let term = if upper {
                            mj.gamma(is, m, alpha).mul(t)?
                        } else {
                            mj.gamma(alpha, m, is).mul(t)?.neg()
                        };
                        acc = acc.add(&term)?;
                    }
                }
                let mut out_idx = idx.clone();
                out_idx.push(m);
                out.set(&out_idx, acc);
            }
            // advance multi-index
            let mut c = rank;
            loop {
                if c == 0 {
                    return Ok(out);
                }
                c -= 1;
                idx[c] += 1;
                if idx[c] < n {
                    break;
                }
                idx[c] = 0;
            }
        }
    }

    /// Contract one upper slot against one lower slot (slot positions in the
    /// combined index list). Result keeps remaining slots in order.
    pub fn contract(&self, upper_slot: usize, lower_slot: usize) -> Result<TensorJets, CalcError> {
        assert!(upper_slot < self.contra);
        assert!(lower_slot >= self.contra && lower_slot < self.rank());
        let n = self.dim;
        let mut out = TensorJets::zeros(n, self.contra - 1, self.co - 1);
        let rank_out = out.rank();
        let mut idx_out = vec![0usize; rank_out];
        loop {
            let mut acc = Jet3::constant(n, 0.0);
            for alpha in 0..n {
                let mut idx = Vec::with_capacity(self.rank());
                let mut it = idx_out.iter();
                for slot in 0..self.rank() {
                    if slot == upper_slot || slot == lower_slot {
                        idx.push(alpha);
                    } else {
                        idx.push(*it.next().unwrap());
                    }
                }
                acc = acc.add(self.get(&idx))?;
            }
            out.set(&idx_out.clone(), acc);
            let mut c = rank_out;
            loop {
                if c == 0 {
                    return Ok(out);
                }
                c -= 1;
                idx_out[c] += 1;
                if idx_out[c] < n {
                    break;
                }
                idx_out[c] = 0;
            }
        }
    }
}

/// Riemann curvature as jets (valence (1,3), effective order 1), assembled
/// from Christoffel jets.
pub fn riemann_jets(mj: &MetricJets) -> Result<TensorJets, CalcError> {
    let n = mj.dim();
    let mut out = TensorJets::zeros(n, 1, 3);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    // R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj
                    //           + Gamma^i_ka Gamma^a_lj - Gamma^i_la Gamma^a_kj
                    let mut acc = mj.gamma(i, l, j).partial(k).sub(&mj.gamma(i, k, j).partial(l))?;
                    for a in 0..n {
                        acc = acc.add(&mj.gamma(i, k, a).mul(mj.gamma(a, l, j))?)?;
                        acc = acc.sub(&mj.gamma(i, l, a).mul(mj.gamma(a, k, j))?)?;
                    }
                    out.set(&[i, j, k, l], acc);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricField;

    fn sphere2() -> MetricField {
        crate::catalog::build("sphere_stereo", &[("dim".into(), "2".into())]).unwrap()
    }

    #[test]
    fn inverse_of_metric_jets() {
        let m = sphere2();
        let x = [0.3, -0.1];
        let mj = MetricJets::evaluate(&m, &x).unwrap();
        let g = mj.g_matrix();
        let ginv = mj.g_inv_matrix();
        let prod = &g * &ginv;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-12);
            }
        }
        // det jet gradient vs finite differences of the determinant
        let h = 1e-6;
        let det_at = |x: &[f64]| m.eval_matrix(x).unwrap().determinant();
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (det_at(&xp) - det_at(&xm)) / (2.0 * h);
            assert!((mj.det().grad(k) - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn christoffel_jets_match_finite_differences() {
        // FD of Gamma values vs the jet gradient of gamma.
        let m = sphere2();
        let x = [0.25, 0.4];
        let mj = MetricJets::evaluate(&m, &x).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for d in 0..2 {
                        let mut xp = x;
                        let mut xm = x;
                        xp[d] += h;
                        xm[d] -= h;
                        let gp = MetricJets::evaluate(&m, &xp).unwrap();
                        let gm = MetricJets::evaluate(&m, &xm).unwrap();
                        let fd = (gp.gamma(i, j, k).value - gm.gamma(i, j, k).value) / (2.0 * h);
                        let jet = mj.gamma(i, j, k).grad(d);
                        assert!(
                            (jet - fd).abs() < 1e-7 * (1.0 + fd.abs()),
                            "dGamma^{i}_{j}{k}/dx{d}: jet {jet} vs fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn metric_compatibility() {
        // Covariant derivative of the metric vanishes.
        let m = sphere2();
        let x = [0.15, -0.35];
        let mj = MetricJets::evaluate(&m, &x).unwrap();
        let mut g = TensorJets::zeros(2, 0, 2);
        for i in 0..2 {
            for j in 0..2 {
                g.set(&[i, j], mj.g(i, j).clone());
            }
        }
        let dg = g.covariant_derivative(&mj).unwrap();
        assert!(dg.max_abs_value() < 1e-9, "nabla g = {}", dg.max_abs_value());
    }

    #[test]
    fn scalar_gradient_is_plain_derivative() {
        let m = sphere2();
        let x = [0.2, 0.1];
        let mj = MetricJets::evaluate(&m, &x).unwrap();
        // f = first coordinate; covariant derivative of a scalar = gradient
        let f = TensorJets::scalar(Jet3::coordinate(2, 0, &x).unwrap());
        let df = f.covariant_derivative(&mj).unwrap();
        assert!((df.get(&[0]).value - 1.0).abs() < 1e-15);
        assert!(df.get(&[1]).value.abs() < 1e-15);
    }

    #[test]
    fn contraction_shapes() {
        let r = riemann_jets(&MetricJets::evaluate(&sphere2(), &[0.1, 0.2]).unwrap()).unwrap();
        let ricci = r.contract(0, 2).unwrap();
        assert_eq!(ricci.contra, 0);
        assert_eq!(ricci.co, 2);
    }
}
