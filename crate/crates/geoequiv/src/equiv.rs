//! Projective data of a metric pair and the derived identity residuals.
//!
//! For two metrics g, gbar on one chart the pair carries, at every sample
//! point, the scaled log-determinant ratio `phi`, its differential, the
//! linearizing tensor `a_ij = e^{2 phi} gbar^{ab} g_ai g_bj`, and the
//! covector `lambda_i = -e^{2 phi} phi_a gbar^{ab} g_bi` together with the
//! potential `lambda = (1/2) g^{ab} a_ab`. Geodesic equivalence and the whole
//! battery of identities for the Einstein case are evaluated as relative
//! residuals; identities whose hypotheses fail are skipped with a recorded
//! reason, never silently dropped.

use crate::fields::{CalcError, MetricJets, TensorJets};
use crate::jets::Jet3;
use crate::metric::MetricField;
use crate::tensor::{
    einstein_residual, frame_from_jets, rel, yano_tensor, PointFrame, TensorPoint,
};
use nalgebra::DMatrix;
use serde::Serialize;

/// Einstein-hypothesis gate for identities that assume it.
pub const EINSTEIN_GATE: f64 = 1e-6;

/// A metric pair on a common chart.
#[derive(Clone, Debug)]
pub struct EquivPair {
    pub g: MetricField,
    pub gbar: MetricField,
}

/// Reason an identity was skipped at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SkipReason {
    NotEinstein { residual: f64 },
    LambdaBelowFloor { norm: f64, floor: f64 },
    EigenvalueNotSimple,
    NullEigenvector,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::NotEinstein { residual } => {
                write!(f, "einstein hypothesis not met (residual {residual:.3e})")
            }
            SkipReason::LambdaBelowFloor { norm, floor } => {
                write!(f, "lambda gradient below floor ({norm:.3e} <= {floor:.3e})")
            }
            SkipReason::EigenvalueNotSimple => write!(f, "no simple eigenvalue"),
            SkipReason::NullEigenvector => write!(f, "eigenvector is null"),
        }
    }
}

/// Outcome of a gated identity evaluation.
#[derive(Clone, Debug)]
pub enum Gated<T = f64> {
    Value(T),
    Skipped(SkipReason),
}

impl<T> Gated<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Gated::Value(v) => Some(v),
            Gated::Skipped(_) => None,
        }
    }
}

/// All pair data evaluated at one point.
pub struct PairPoint {
    pub x: Vec<f64>,
    pub dim: usize,
    /// Jets and connection of g.
    pub mj: MetricJets,
    /// Jets and connection of gbar.
    pub mj_bar: MetricJets,
    /// Curvature frame of g.
    pub frame: PointFrame,
    /// Curvature frame of gbar.
    pub frame_bar: PointFrame,
    /// Scaled log-determinant ratio (order-3 jet).
    pub phi: Jet3,
    /// Differential of phi as jets (order 2 each).
    pub phi_i: Vec<Jet3>,
    /// Linearizing symmetric tensor a_ij (order-3 jets).
    pub a: TensorJets,
    /// Covector lambda_i (order-2 jets).
    pub lambda_cov: TensorJets,
    /// Potential lambda = (1/2) g^{ab} a_ab (order-3 jet).
    pub lambda_scalar: Jet3,
    /// First covariant derivative of lambda_i in g (jets, order 1).
    pub dlambda: TensorJets,
}

fn log_abs(j: &Jet3) -> Result<Jet3, CalcError> {
    if j.value < 0.0 { Ok(j.neg().ln()?) } else { Ok(j.ln()?) }
}

impl EquivPair {
    pub fn new(g: MetricField, gbar: MetricField) -> Result<EquivPair, CalcError> {
        if !g.chart.compatible(&gbar.chart) {
            return Err(CalcError::Precondition(format!(
                "charts are not compatible: {} vs {}",
                g.label, gbar.label
            )));
        }
        Ok(EquivPair { g, gbar })
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// The scaled log-determinant ratio as a jet, without building the full
    /// pair data (used along geodesic traces).
    pub fn phi_jet(&self, x: &[f64]) -> Result<Jet3, CalcError> {
        let n = self.dim() as f64;
        let gj = self.g.eval_jets(x)?;
        let gbj = self.gbar.eval_jets(x)?;
        let (_, det_g) = crate::fields::jet_matrix_inverse(&gj)?;
        let (_, det_gb) = crate::fields::jet_matrix_inverse(&gbj)?;
        let diff = log_abs(&det_gb)?.sub(&log_abs(&det_g)?)?;
        Ok(diff.scale(1.0 / (2.0 * (n + 1.0))))
    }

    /// Evaluate the full pair data at `x`.
    pub fn at(&self, x: &[f64]) -> Result<PairPoint, CalcError> {
        let n = self.dim();
        let mj = MetricJets::evaluate(&self.g, x)?;
        let mj_bar = MetricJets::evaluate(&self.gbar, x)?;
        let frame = frame_from_jets(&mj, x)?;
        let frame_bar = frame_from_jets(&mj_bar, x)?;

        let diff = log_abs(mj_bar.det())?.sub(&log_abs(mj.det())?)?;
        let phi = diff.scale(1.0 / (2.0 * (n as f64 + 1.0)));
        let phi_i: Vec<Jet3> = (0..n).map(|k| phi.partial(k)).collect();
        let e2phi = phi.scale(2.0).exp();

        // a_ij = e^{2 phi} gbar^{ab} g_ai g_bj (upper triangle, mirrored)
        let mut a = TensorJets::zeros(n, 0, 2);
        for j in 0..n {
            for i in 0..=j {
                let mut acc = Jet3::constant(n, 0.0);
                for al in 0..n {
                    for be in 0..n {
                        let t = mj_bar.g_inv(al, be).mul(mj.g(al, i))?.mul(mj.g(be, j))?;
                        acc = acc.add(&t)?;
                    }
                }
                let v = e2phi.mul(&acc)?;
                a.set(&[i, j], v.clone());
                if i != j {
                    a.set(&[j, i], v);
                }
            }
        }

        // lambda_i = -e^{2 phi} phi_a gbar^{ab} g_bi
        let mut lambda_cov = TensorJets::zeros(n, 0, 1);
        for i in 0..n {
            let mut acc = Jet3::constant(n, 0.0);
            for al in 0..n {
                for be in 0..n {
                    let t = phi_i[al].mul(mj_bar.g_inv(al, be))?.mul(mj.g(be, i))?;
                    acc = acc.add(&t)?;
                }
            }
            lambda_cov.set(&[i], e2phi.mul(&acc)?.neg());
        }

        // lambda = (1/2) g^{ab} a_ab
        let mut lam = Jet3::constant(n, 0.0);
        for al in 0..n {
            for be in 0..n {
                lam = lam.add(&mj.g_inv(al, be).mul(a.get(&[al, be]))?)?;
            }
        }
        let lambda_scalar = lam.scale(0.5);

        let dlambda = lambda_cov.covariant_derivative(&mj)?;

        Ok(PairPoint {
            x: x.to_vec(),
            dim: n,
            mj,
            mj_bar,
            frame,
            frame_bar,
            phi,
            phi_i,
            a,
            lambda_cov,
            lambda_scalar,
            dlambda,
        })
    }

    /// Sample points acceptable for both metrics.
    pub fn sample_points(
        &self,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>, crate::metric::SampleError> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let max_attempts = 1000 * n.max(1);
        let mut attempts = 0;
        while out.len() < n && attempts < max_attempts {
            attempts += 1;
            let x: Vec<f64> = self
                .g
                .chart
                .sample_box
                .iter()
                .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                .collect();
            if self.g.accepts(&x) && self.gbar.accepts(&x) {
                out.push(x);
            }
        }
        if out.len() < n {
            return Err(crate::metric::SampleError { accepted: out.len(), requested: n, attempts });
        }
        Ok(out)
    }
}

impl PairPoint {
    pub fn lambda_grad_norm(&self) -> f64 {
        self.lambda_cov.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn lambda_floor(&self) -> f64 {
        1e-6 * (1.0 + self.lambda_scalar.value.abs())
    }

    fn lambda_gate(&self) -> Option<SkipReason> {
        let norm = self.lambda_grad_norm();
        let floor = self.lambda_floor();
        if norm <= floor {
            Some(SkipReason::LambdaBelowFloor { norm, floor })
        } else {
            None
        }
    }

    fn einstein_gate(&self) -> Option<SkipReason> {
        let r = einstein_residual(&self.frame);
        if r > EINSTEIN_GATE {
            Some(SkipReason::NotEinstein { residual: r })
        } else {
            None
        }
    }

    /// Mixed tensor a^i_j = g^{ia} a_aj (values).
    fn a_mixed(&self) -> DMatrix<f64> {
        let n = self.dim;
        let a_vals = self.a.values();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for al in 0..n {
                    s += self.frame.g_inv[(i, al)] * a_vals[al * n + j];
                }
                m[(i, j)] = s;
            }
        }
        m
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.dim;
        let v = self.a.values();
        DMatrix::from_fn(n, n, |i, j| v[i * n + j])
    }

    pub fn a_mixed_matrix(&self) -> DMatrix<f64> {
        self.a_mixed()
    }

    /// Norm of the connection-difference defect
    /// `(Gbar - G)^i_jk - d^i_k phi_j - d^i_j phi_k`; vanishing certifies
    /// geodesic equivalence at the point.
    pub fn pure_trace_residual(&self) -> f64 {
        let n = self.dim;
        let mut defect = 0.0;
        let mut scale = 0.0f64;
        let phi_vals: Vec<f64> = self.phi_i.iter().map(|j| j.value).collect();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let gb = self.frame_bar.gamma_at(i, j, k);
                    let gg = self.frame.gamma_at(i, j, k);
                    let mut d = gb - gg;
                    if i == k {
                        d -= phi_vals[j];
                    }
                    if i == j {
                        d -= phi_vals[k];
                    }
                    defect += d * d;
                    scale = scale.max(gb.abs()).max(gg.abs());
                }
            }
        }
        let phimax = phi_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rel(defect.sqrt(), scale.max(phimax))
    }

    /// Norm of `gbar_{ij,k} - 2 gbar_ij phi_k - gbar_ik phi_j - gbar_jk phi_i`
    /// (covariant derivative in g).
    pub fn levi_civita_residual(&self) -> Result<f64, CalcError> {
        let n = self.dim;
        let mut gbar = TensorJets::zeros(n, 0, 2);
        for i in 0..n {
            for j in 0..n {
                gbar.set(&[i, j], self.mj_bar.g(i, j).clone());
            }
        }
        let dgbar = gbar.covariant_derivative(&self.mj)?;
        let dgbar_v = TensorPoint::from_jets(&dgbar);
        let phi_vals: Vec<f64> = self.phi_i.iter().map(|j| j.value).collect();
        let gb = self.frame_bar.g.clone();
        let mut defect = 0.0;
        let mut dscale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let d = dgbar_v.get(&[i, j, k])
                        - 2.0 * gb[(i, j)] * phi_vals[k]
                        - gb[(i, k)] * phi_vals[j]
                        - gb[(j, k)] * phi_vals[i];
                    defect += d * d;
                    dscale = dscale.max(dgbar_v.get(&[i, j, k]).abs());
                }
            }
        }
        let phimax = phi_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = dscale
            .max(self.frame.max_abs_gamma() * gb.amax())
            .max(gb.amax() * phimax);
        Ok(rel(defect.sqrt(), scale))
    }

    /// Norm of `a_{ij,k} - lambda_i g_jk - lambda_j g_ik`.
    pub fn sinjukov_residual(&self) -> Result<f64, CalcError> {
        let n = self.dim;
        let da = self.a.covariant_derivative(&self.mj)?;
        let da_v = TensorPoint::from_jets(&da);
        let lam: Vec<f64> = self.lambda_cov.values();
        let mut defect = 0.0;
        let mut dscale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let d = da_v.get(&[i, j, k])
                        - lam[i] * self.frame.g[(j, k)]
                        - lam[j] * self.frame.g[(i, k)];
                    defect += d * d;
                    dscale = dscale.max(da_v.get(&[i, j, k]).abs());
                }
            }
        }
        let lmax = lam.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = dscale
            .max(self.frame.max_abs_gamma() * self.a.max_abs_value())
            .max(lmax * self.frame.g.amax());
        Ok(rel(defect.sqrt(), scale))
    }

    /// Norm of the curvature integrability defect of the linear system.
    pub fn integrability_residual(&self) -> Result<f64, CalcError> {
        let n = self.dim;
        let a_vals = self.a.values();
        let dl = TensorPoint::from_jets(&self.dlambda);
        let g = &self.frame.g;
        let mut defect = 0.0;
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut lhs = 0.0;
                        for al in 0..n {
                            lhs += a_vals[i * n + al] * self.frame.riemann_at(al, j, k, l)
                                + a_vals[al * n + j] * self.frame.riemann_at(al, i, k, l);
                        }
                        let rhs = dl.get(&[l, i]) * g[(j, k)] + dl.get(&[l, j]) * g[(i, k)]
                            - dl.get(&[k, i]) * g[(j, l)]
                            - dl.get(&[k, j]) * g[(i, l)];
                        let d = lhs - rhs;
                        defect += d * d;
                        scale = scale.max(lhs.abs()).max(rhs.abs());
                    }
                }
            }
        }
        let base = self.a.max_abs_value() * self.frame.max_abs_riemann();
        Ok(rel(defect.sqrt(), scale.max(base)))
    }

    /// Norm of `a^a_i Ric_aj - a^a_j Ric_ia` (commutation with the Ricci tensor).
    pub fn ricci_commute_residual(&self) -> f64 {
        let am = self.a_mixed();
        let ric = &self.frame.ricci;
        let m = am.transpose() * ric;
        let defect = (&m - m.transpose()).norm();
        rel(defect, m.norm())
    }

    /// Norm of `Ricbar_ij - Ric_ij + (n-1)(phi_{i,j} - phi_i phi_j)`.
    pub fn ricci_relation_residual(&self) -> Result<f64, CalcError> {
        let n = self.dim;
        let phi_t = TensorJets::scalar(self.phi.clone());
        let dphi = phi_t.covariant_derivative(&self.mj)?;
        let ddphi = dphi.covariant_derivative(&self.mj)?;
        let ddphi_v = TensorPoint::from_jets(&ddphi);
        let phi_vals: Vec<f64> = self.phi_i.iter().map(|j| j.value).collect();
        let nn = n as f64 - 1.0;
        let mut defect = 0.0;
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let corr = nn * (ddphi_v.get(&[i, j]) - phi_vals[i] * phi_vals[j]);
                let d = self.frame_bar.ricci[(i, j)] - self.frame.ricci[(i, j)] + corr;
                defect += d * d;
                scale = scale
                    .max(self.frame_bar.ricci[(i, j)].abs())
                    .max(self.frame.ricci[(i, j)].abs())
                    .max(corr.abs());
            }
        }
        Ok(rel(defect.sqrt(), scale))
    }

    /// Coefficient of the lambda-Hessian identity: mu = (lap lambda - 2 k lambda)/n.
    pub fn mu_value(&self) -> f64 {
        let n = self.dim;
        let dl = self.dlambda.values();
        let mut trace = 0.0;
        for al in 0..n {
            for be in 0..n {
                trace += self.frame.g_inv[(al, be)] * dl[al * n + be];
            }
        }
        (trace - 2.0 * self.frame.k * self.lambda_scalar.value) / n as f64
    }

    /// Residual of `lambda_{i,j} = mu g_ij + k a_ij` (requires Einstein g and
    /// nonvanishing lambda gradient).
    pub fn lambda_hessian_residual(&self) -> Gated {
        if let Some(r) = self.einstein_gate() {
            return Gated::Skipped(r);
        }
        if let Some(r) = self.lambda_gate() {
            return Gated::Skipped(r);
        }
        let n = self.dim;
        let mu = self.mu_value();
        let k = self.frame.k;
        let dl = self.dlambda.values();
        let a_vals = self.a.values();
        let mut defect = 0.0;
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let d = dl[i * n + j] - mu * self.frame.g[(i, j)] - k * a_vals[i * n + j];
                defect += d * d;
                scale = scale
                    .max(dl[i * n + j].abs())
                    .max((mu * self.frame.g[(i, j)]).abs())
                    .max((k * a_vals[i * n + j]).abs());
            }
        }
        Gated::Value(rel(defect.sqrt(), scale))
    }

    /// Residual of `mu_{,i} = 2 k lambda_i` under the same gates.
    pub fn mu_gradient_residual(&self) -> Result<Gated, CalcError> {
        if let Some(r) = self.einstein_gate() {
            return Ok(Gated::Skipped(r));
        }
        if let Some(r) = self.lambda_gate() {
            return Ok(Gated::Skipped(r));
        }
        let n = self.dim;
        let k = self.frame.k;
        // mu as a jet of effective order 1
        let mut trace = Jet3::constant(n, 0.0);
        let mut idx = [0usize; 2];
        for al in 0..n {
            for be in 0..n {
                idx = [al, be];
                trace = trace.add(&self.mj.g_inv(al, be).mul(self.dlambda.get(&idx))?)?;
            }
        }
        let _ = idx;
        let mu_jet = trace
            .sub(&self.lambda_scalar.scale(2.0 * k))?
            .scale(1.0 / n as f64);
        let lam = self.lambda_cov.values();
        let mut defect = 0.0;
        let mut scale = 0.0f64;
        for i in 0..n {
            let d = mu_jet.grad(i) - 2.0 * k * lam[i];
            defect += d * d;
            scale = scale.max(mu_jet.grad(i).abs()).max((2.0 * k * lam[i]).abs());
        }
        Ok(Gated::Value(rel(defect.sqrt(), scale)))
    }

    /// Norm of `lambda_a Y^a_ijk` against the concircular curvature of g.
    pub fn yano_contraction_residual(&self) -> Gated {
        if let Some(r) = self.einstein_gate() {
            return Gated::Skipped(r);
        }
        let n = self.dim;
        let y = yano_tensor(&self.frame);
        let lam = self.lambda_cov.values();
        let mut defect = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut c = 0.0;
                    for al in 0..n {
                        c += lam[al] * y.get(&[al, i, j, k]);
                    }
                    defect += c * c;
                }
            }
        }
        let lmax = lam.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gmax = self.frame.g.amax();
        let scale = lmax
            * self
                .frame
                .max_abs_riemann()
                .max(self.frame.k.abs() * gmax * gmax);
        Gated::Value(rel(defect.sqrt(), scale))
    }

    /// Residual of the third-order equation
    /// `lambda_{,ijk} = k (2 lambda_{,k} g_ij + lambda_{,j} g_ik + lambda_{,i} g_jk)`.
    pub fn tanno_residual(&self) -> Result<Gated, CalcError> {
        if let Some(r) = self.einstein_gate() {
            return Ok(Gated::Skipped(r));
        }
        let n = self.dim;
        let k = self.frame.k;
        let t = TensorJets::scalar(self.lambda_scalar.clone());
        let d1 = t.covariant_derivative(&self.mj)?;
        let d2 = d1.covariant_derivative(&self.mj)?;
        let d3 = d2.covariant_derivative(&self.mj)?;
        let d1v = TensorPoint::from_jets(&d1);
        let d3v = TensorPoint::from_jets(&d3);
        let g = &self.frame.g;
        let mut defect = 0.0;
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for kk in 0..n {
                    let rhs = k
                        * (2.0 * d1v.get(&[kk]) * g[(i, j)]
                            + d1v.get(&[j]) * g[(i, kk)]
                            + d1v.get(&[i]) * g[(j, kk)]);
                    let d = d3v.get(&[i, j, kk]) - rhs;
                    defect += d * d;
                    scale = scale.max(d3v.get(&[i, j, kk]).abs()).max(rhs.abs());
                }
            }
        }
        Ok(Gated::Value(rel(defect.sqrt(), scale)))
    }

    /// Einstein transfer: residuals of (a) the Einstein condition for gbar and
    /// (b) `phi_{i,j} - phi_i phi_j - R/(n(n-1)) g_ij + Rbar/(n(n-1)) gbar_ij`,
    /// plus the two routes to the normalized curvature of gbar.
    pub fn einstein_transfer(&self) -> Result<Gated<EinsteinTransfer>, CalcError> {
        if let Some(r) = self.einstein_gate() {
            return Ok(Gated::Skipped(r));
        }
        if let Some(r) = self.lambda_gate() {
            return Ok(Gated::Skipped(r));
        }
        let n = self.dim;
        let nf = n as f64;
        let phi_t = TensorJets::scalar(self.phi.clone());
        let ddphi = phi_t
            .covariant_derivative(&self.mj)?
            .covariant_derivative(&self.mj)?;
        let ddphi_v = TensorPoint::from_jets(&ddphi);
        let phi_vals: Vec<f64> = self.phi_i.iter().map(|j| j.value).collect();
        let c = 1.0 / (nf * (nf - 1.0));
        let r_g = self.frame.scalar_r;
        let r_gb = self.frame_bar.scalar_r;
        let g = &self.frame.g;
        let gb = &self.frame_bar.g;
        let mut defect = 0.0;
        let mut scale = 0.0f64;
        // kbar estimated from the transfer formula: kbar gbar = k g + hess phi - dphi dphi
        let mut kbar_num = 0.0;
        for i in 0..n {
            for j in 0..n {
                let hess = ddphi_v.get(&[i, j]) - phi_vals[i] * phi_vals[j];
                let d = hess - c * r_g * g[(i, j)] + c * r_gb * gb[(i, j)];
                defect += d * d;
                scale = scale
                    .max(hess.abs())
                    .max((c * r_g * g[(i, j)]).abs())
                    .max((c * r_gb * gb[(i, j)]).abs());
                kbar_num += self.frame_bar.g_inv[(i, j)] * (self.frame.k * g[(i, j)] + hess);
            }
        }
        Ok(Gated::Value(EinsteinTransfer {
            gbar_einstein_residual: einstein_residual(&self.frame_bar),
            formula_residual: rel(defect.sqrt(), scale),
            kbar_estimate: kbar_num / nf,
            kbar_from_frame: self.frame_bar.k,
        }))
    }

    /// Decomposition of the lambda Hessian under harmonic curvature:
    /// `lambda_{k,j} = c1 g_kj + c2 Ric_kj + c3 a_kj + c4 a^a_j Ric_ak`,
    /// with the coefficient functions depending on a unit-pairing vector xi.
    pub fn harmonic_coeffs(&self, xi: Option<&[f64]>) -> Result<Gated<HarmonicCoeffs>, CalcError> {
        let n = self.dim;
        // hypothesis: divergence-free curvature; automatic for Einstein,
        // otherwise checked directly.
        if self.einstein_gate().is_some() {
            let (div, _) = crate::tensor::harmonic_curvature_residual(&self.g, &self.x)?;
            if div > 1e-6 {
                return Ok(Gated::Skipped(SkipReason::NotEinstein { residual: div }));
            }
        }
        if let Some(r) = self.lambda_gate() {
            return Ok(Gated::Skipped(r));
        }
        let lam = self.lambda_cov.values();
        let xi = match xi {
            Some(v) => {
                let pairing: f64 = lam.iter().zip(v).map(|(a, b)| a * b).sum();
                if pairing.abs() < 1e-12 {
                    return Err(CalcError::Precondition(
                        "xi pairs to zero against the lambda gradient".into(),
                    ));
                }
                v.iter().map(|c| c / pairing).collect::<Vec<f64>>()
            }
            None => self.default_xi(),
        };

        let ric = &self.frame.ricci;
        let g = &self.frame.g;
        let am = self.a_mixed(); // a^i_j
        let a_vals = self.a.values();
        let dl = self.dlambda.values();
        let r_scalar = self.frame.scalar_r;
        let lambda_val = self.lambda_scalar.value;

        // lap lambda_i trace and second-derivative trace terms
        let mut lap_trace = 0.0; // lambda_{a,}^a
        for al in 0..n {
            for be in 0..n {
                lap_trace += self.frame.g_inv[(al, be)] * dl[al * n + be];
            }
        }
        let ddl = self.dlambda.covariant_derivative(&self.mj)?;
        let ddl_v = TensorPoint::from_jets(&ddl);
        // w_a = lambda_{a,b}^{ b} = g^{bc} lambda_{a,bc}
        let mut w = vec![0.0; n];
        for (alpha, wa) in w.iter_mut().enumerate() {
            let mut s = 0.0;
            for be in 0..n {
                for ga in 0..n {
                    s += self.frame.g_inv[(be, ga)] * ddl_v.get(&[alpha, be, ga]);
                }
            }
            *wa = s;
        }

        // scalar contractions
        let mut s_a_lam_xi = 0.0; // lambda_a a^a_b xi^b
        for al in 0..n {
            for be in 0..n {
                s_a_lam_xi += lam[al] * am[(al, be)] * xi[be];
            }
        }
        let s_lap_xi: f64 = w.iter().zip(&xi).map(|(a, b)| a * b).sum();
        let mut t_ar = 0.0; // a^a_b Ric^b_a
        for al in 0..n {
            for be in 0..n {
                let mut ric_mixed = 0.0;
                for c in 0..n {
                    ric_mixed += self.frame.g_inv[(be, c)] * ric[(c, al)];
                }
                t_ar += am[(al, be)] * ric_mixed;
            }
        }

        let nf = n as f64;
        let c1 = (s_a_lam_xi * r_scalar - 2.0 * lambda_val * s_lap_xi - t_ar + 4.0 * lap_trace)
            / (4.0 * nf);
        let c2 = -0.25 * s_a_lam_xi;
        let c3 = 0.25 * s_lap_xi;
        let c4 = 0.25;

        let mut defect = 0.0;
        let mut scale = 0.0f64;
        for k in 0..n {
            for j in 0..n {
                let mut a_ric = 0.0;
                for al in 0..n {
                    a_ric += am[(al, j)] * ric[(al, k)];
                }
                let rhs =
                    c1 * g[(k, j)] + c2 * ric[(k, j)] + c3 * a_vals[k * n + j] + c4 * a_ric;
                let d = dl[k * n + j] - rhs;
                defect += d * d;
                scale = scale.max(dl[k * n + j].abs()).max(rhs.abs());
            }
        }
        Ok(Gated::Value(HarmonicCoeffs {
            c1,
            c2,
            c3,
            c4,
            residual: rel(defect.sqrt(), scale),
        }))
    }

    /// Default pairing vector: lambda^i / (lambda_a lambda^a) when the
    /// gradient is non-null, otherwise the least-norm solution of
    /// `lambda_i xi^i = 1`.
    pub fn default_xi(&self) -> Vec<f64> {
        let n = self.dim;
        let lam = self.lambda_cov.values();
        let mut up = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                up[i] += self.frame.g_inv[(i, j)] * lam[j];
            }
        }
        let pairing: f64 = lam.iter().zip(&up).map(|(a, b)| a * b).sum();
        let e_norm2: f64 = lam.iter().map(|v| v * v).sum();
        if pairing.abs() > 1e-8 * e_norm2 {
            up.iter().map(|v| v / pairing).collect()
        } else {
            lam.iter().map(|v| v / e_norm2).collect()
        }
    }
}

/// Result pair of the Einstein-transfer identity.
#[derive(Clone, Debug)]
pub struct EinsteinTransfer {
    pub gbar_einstein_residual: f64,
    pub formula_residual: f64,
    pub kbar_estimate: f64,
    pub kbar_from_frame: f64,
}

impl EinsteinTransfer {
    pub fn kbar_cross_check(&self) -> f64 {
        (self.kbar_estimate - self.kbar_from_frame).abs()
            / self.kbar_from_frame.abs().max(crate::tensor::SCALE_FLOOR)
    }
}

/// Coefficients of the lambda-Hessian decomposition and its residual.
#[derive(Clone, Debug)]
pub struct HarmonicCoeffs {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub residual: f64,
}

/// Verdict of the pointwise affine-equivalence test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineVerdict {
    Affine,
    NonAffine,
    Inconclusive,
}

/// Sampling test for affine equivalence: affine when the phi differential
/// vanishes everywhere, non-affine when it is clearly nonzero on at least 1%
/// of samples (non-affinity is dense when it holds anywhere).
pub fn affine_equivalence_test(pair: &EquivPair, samples: &[Vec<f64>]) -> AffineVerdict {
    let mut max_norm = 0.0f64;
    let mut clearly_nonzero = 0usize;
    let mut evaluated = 0usize;
    for x in samples {
        let Ok(phi) = pair.phi_jet(x) else { continue };
        evaluated += 1;
        let norm = phi
            .grad_vec()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        max_norm = max_norm.max(norm);
        if norm > 1e-4 {
            clearly_nonzero += 1;
        }
    }
    if evaluated == 0 {
        return AffineVerdict::Inconclusive;
    }
    if max_norm <= 1e-8 {
        AffineVerdict::Affine
    } else if clearly_nonzero * 100 >= evaluated {
        AffineVerdict::NonAffine
    } else {
        AffineVerdict::Inconclusive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn build(id: &str, kv: &[(&str, &str)]) -> MetricField {
        let params: Vec<(String, String)> =
            kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        catalog::build(id, &params).unwrap()
    }

    fn beltrami_pair() -> EquivPair {
        let g = build("sphere_stereo", &[("dim", "4")]);
        let gbar = build("beltrami_pullback", &[("dim", "4"), ("A", "diag(2,1,1,1,1)")]);
        EquivPair::new(g, gbar).unwrap()
    }

    fn sphere_identity_pair() -> EquivPair {
        let g = build("sphere_stereo", &[("dim", "4")]);
        let gbar = build("sphere_stereo", &[("dim", "4")]);
        EquivPair::new(g, gbar).unwrap()
    }

    /// Conformal constant pair: gbar = 3 g on the same chart.
    fn scaled_pair() -> EquivPair {
        let g = build("euclidean", &[("dim", "4")]);
        let gbar = build("euclidean", &[("dim", "4"), ("scale", "3")]);
        EquivPair::new(g, gbar).unwrap()
    }

    const SAMPLES_4D: [[f64; 4]; 5] = [
        [0.3, -0.2, 0.5, 0.1],
        [-0.6, 0.4, 0.0, 0.7],
        [0.1, 0.1, -0.8, 0.3],
        [0.9, -0.5, 0.2, -0.4],
        [-0.2, 0.75, 0.35, -0.6],
    ];

    #[test]
    fn identity_pair_is_trivial() {
        let pair = sphere_identity_pair();
        let pp = pair.at(&[0.3, -0.2, 0.5, 0.1]).unwrap();
        assert_eq!(pp.phi.value, 0.0);
        assert_eq!(pp.lambda_grad_norm(), 0.0);
        // a = g exactly up to rounding
        let a = pp.a_matrix();
        assert!((a - &pp.frame.g).amax() < 1e-12);
        assert_eq!(pp.pure_trace_residual(), 0.0);
        assert!(pp.sinjukov_residual().unwrap() < 1e-12);
        assert!(pp.levi_civita_residual().unwrap() < 1e-12);
        assert!(pp.integrability_residual().unwrap() < 1e-12);
        assert!(pp.ricci_commute_residual() < 1e-12);
        assert!(pp.ricci_relation_residual().unwrap() < 1e-12);
        // lambda-gated identities skip
        assert!(matches!(
            pp.lambda_hessian_residual(),
            Gated::Skipped(SkipReason::LambdaBelowFloor { .. })
        ));
        match pp.tanno_residual().unwrap() {
            Gated::Value(v) => assert!(v < 1e-10),
            other => panic!("expected value, got {other:?}"),
        }
    }

    #[test]
    fn conformal_constant_pair() {
        let pair = scaled_pair();
        let n = 4.0;
        let pp = pair.at(&[0.2, 0.4, -0.1, 0.0]).unwrap();
        let want_phi = n * 3.0f64.ln() / (2.0 * (n + 1.0));
        assert!((pp.phi.value - want_phi).abs() < 1e-14);
        assert!(pp.lambda_grad_norm() < 1e-14);
        assert!(pp.pure_trace_residual() < 1e-12);
        assert!(pp.ricci_relation_residual().unwrap() < 1e-12);
        // Weyl proportionality: a proportional to g and phi_i = 0 together
        let a = pp.a_matrix();
        let dev = (&a - &pp.frame.g * (2.0 * pp.lambda_scalar.value / n)).amax();
        assert!(dev < 1e-12, "a deviates from (2 lambda / n) g by {dev}");
    }

    #[test]
    fn beltrami_pair_is_geodesically_equivalent() {
        let pair = beltrami_pair();
        let mut saw_significant_lambda = false;
        for x in SAMPLES_4D {
            let pp = pair.at(&x).unwrap();
            assert!(pp.pure_trace_residual() < 1e-7, "pure trace at {x:?}");
            assert!(pp.sinjukov_residual().unwrap() < 1e-7, "sinjukov at {x:?}");
            assert!(pp.levi_civita_residual().unwrap() < 1e-7, "levi-civita at {x:?}");
            assert!(pp.integrability_residual().unwrap() < 1e-6, "integrability at {x:?}");
            assert!(pp.ricci_commute_residual() < 1e-7, "ricci commute at {x:?}");
            assert!(pp.ricci_relation_residual().unwrap() < 1e-6, "ricci relation at {x:?}");
            if pp.lambda_grad_norm() > 1e-3 {
                saw_significant_lambda = true;
            }
        }
        assert!(saw_significant_lambda, "lambda gradient vanished everywhere");
    }

    #[test]
    fn beltrami_einstein_battery() {
        let pair = beltrami_pair();
        for x in SAMPLES_4D {
            let pp = pair.at(&x).unwrap();
            if pp.lambda_grad_norm() <= 1e-3 {
                continue;
            }
            match pp.lambda_hessian_residual() {
                Gated::Value(v) => assert!(v < 1e-6, "lambda hessian {v} at {x:?}"),
                Gated::Skipped(r) => panic!("unexpected skip: {r}"),
            }
            match pp.mu_gradient_residual().unwrap() {
                Gated::Value(v) => assert!(v < 1e-5, "mu gradient {v} at {x:?}"),
                Gated::Skipped(r) => panic!("unexpected skip: {r}"),
            }
            match pp.yano_contraction_residual() {
                Gated::Value(v) => assert!(v < 1e-8, "yano contraction {v} at {x:?}"),
                Gated::Skipped(r) => panic!("unexpected skip: {r}"),
            }
            match pp.tanno_residual().unwrap() {
                Gated::Value(v) => assert!(v < 1e-5, "third-order identity {v} at {x:?}"),
                Gated::Skipped(r) => panic!("unexpected skip: {r}"),
            }
            match pp.einstein_transfer().unwrap() {
                Gated::Value(t) => {
                    assert!(t.gbar_einstein_residual < 1e-6, "gbar einstein at {x:?}");
                    assert!(t.formula_residual < 1e-6, "transfer formula at {x:?}");
                    assert!(t.kbar_cross_check() < 1e-6, "kbar routes at {x:?}");
                }
                Gated::Skipped(r) => panic!("unexpected skip: {r}"),
            }
            match pp.harmonic_coeffs(None).unwrap() {
                Gated::Value(h) => {
                    assert!(h.residual < 1e-5, "harmonic decomposition {} at {x:?}", h.residual);
                    // Einstein collapse: c1 + c2 R/n = mu and c3 + c4 R/n = k
                    let n = 4.0;
                    let mu = pp.mu_value();
                    let k = pp.frame.k;
                    let r = pp.frame.scalar_r;
                    assert!((h.c1 + h.c2 * r / n - mu).abs() < 1e-6 * (1.0 + mu.abs()));
                    assert!((h.c3 + h.c4 * r / n - k).abs() < 1e-6 * (1.0 + k.abs()));
                }
                Gated::Skipped(r) => panic!("unexpected skip: {r}"),
            }
        }
    }

    #[test]
    fn harmonic_coeffs_xi_independent() {
        use rand::{Rng, SeedableRng};
        let pair = beltrami_pair();
        let pp = pair.at(&[0.3, -0.2, 0.5, 0.1]).unwrap();
        assert!(pp.lambda_grad_norm() > 1e-3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut residuals = Vec::new();
        for _ in 0..5 {
            let xi: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            match pp.harmonic_coeffs(Some(&xi)).unwrap() {
                Gated::Value(h) => residuals.push(h.residual),
                Gated::Skipped(r) => panic!("unexpected skip: {r}"),
            }
        }
        let spread = residuals.iter().fold(0.0f64, |m, v| m.max(*v))
            - residuals.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        assert!(spread < 1e-7, "xi spread {spread}: {residuals:?}");
    }

    #[test]
    fn harmonic_coeffs_identity_pair_fails_precondition() {
        let pair = sphere_identity_pair();
        let pp = pair.at(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(matches!(
            pp.harmonic_coeffs(None).unwrap(),
            Gated::Skipped(SkipReason::LambdaBelowFloor { .. })
        ));
    }

    #[test]
    fn non_equivalent_pair_fails_certification() {
        let g = build("sphere_stereo", &[("dim", "2")]);
        let gbar = build("euclidean", &[("dim", "2")]);
        // same coordinate names required for a pair
        let gbar = {
            let mut doc = String::from(
                "dim 2\ncoords x1 x2\nbox [-1,1]^2\ng11 = 1\ng22 = 1\n",
            );
            doc.push_str("label \"flat on sphere chart\"\n");
            MetricField::parse(&doc).unwrap()
        };
        let _ = gbar;
        let gbar2 = MetricField::parse(
            "dim 2\ncoords x1 x2\nbox [-1,1]^2\ng11 = 1\ng22 = 1\nlabel \"flat\"",
        )
        .unwrap();
        let pair = EquivPair::new(g, gbar2).unwrap();
        let mut worst = 0.0f64;
        for x in [[0.4, 0.2], [-0.3, 0.6], [0.8, -0.5]] {
            let pp = pair.at(&x).unwrap();
            worst = worst.max(pp.pure_trace_residual());
            // the equivalent formulations agree on the verdict
            let s = pp.sinjukov_residual().unwrap();
            let lc = pp.levi_civita_residual().unwrap();
            assert_eq!(s < 1e-6, lc < 1e-6);
            assert_eq!(s < 1e-6, pp.pure_trace_residual() < 1e-6);
        }
        assert!(worst > 1e-2, "expected visible defect, got {worst}");
    }

    #[test]
    fn lambda_covector_is_gradient_of_potential() {
        let pair = beltrami_pair();
        for x in SAMPLES_4D.iter().take(3) {
            let pp = pair.at(x).unwrap();
            let lam = pp.lambda_cov.values();
            let mut worst = 0.0f64;
            for i in 0..4 {
                worst = worst.max((lam[i] - pp.lambda_scalar.grad(i)).abs());
            }
            assert!(worst < 1e-9, "lambda vs grad lambda differ by {worst}");
            // and the connection contraction identity fixing phi_i
            let mut worst_phi = 0.0f64;
            for i in 0..4 {
                let mut tr = 0.0;
                for al in 0..4 {
                    tr += pp.frame_bar.gamma_at(al, al, i) - pp.frame.gamma_at(al, al, i);
                }
                worst_phi = worst_phi.max((tr / 5.0 - pp.phi_i[i].value).abs());
            }
            assert!(worst_phi < 1e-9, "phi_i trace identity defect {worst_phi}");
        }
    }

    #[test]
    fn affine_test_verdicts() {
        let scaled = scaled_pair();
        let samples = scaled.sample_points(40, 17).unwrap();
        assert_eq!(affine_equivalence_test(&scaled, &samples), AffineVerdict::Affine);

        let beltrami = beltrami_pair();
        let samples = beltrami.sample_points(40, 17).unwrap();
        assert_eq!(affine_equivalence_test(&beltrami, &samples), AffineVerdict::NonAffine);

        // orthogonal A: an isometry, hence affine (phi identically zero)
        let g = build("sphere_stereo", &[("dim", "2")]);
        let rot = build(
            "beltrami_pullback",
            &[("dim", "2"), ("A", "0,1,0;-1,0,0;0,0,1")],
        );
        let pair = EquivPair::new(g, rot).unwrap();
        let samples = pair.sample_points(40, 9).unwrap();
        for x in &samples {
            let phi = pair.phi_jet(x).unwrap();
            assert!(phi.value.abs() < 1e-10, "phi nonzero for isometry");
        }
        assert_eq!(affine_equivalence_test(&pair, &samples), AffineVerdict::Affine);
    }

    #[test]
    fn chart_mismatch_rejected() {
        let g = build("sphere_stereo", &[("dim", "2")]);
        let h = build("schwarzschild", &[]);
        assert!(EquivPair::new(g, h).is_err());
    }
}
