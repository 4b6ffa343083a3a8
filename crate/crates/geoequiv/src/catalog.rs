//! Built-in metric catalog.
//!
//! Every entry is delivered in a fixed documented chart. Most entries are
//! generated as DSL documents and parsed; the Beltrami pullback family is
//! assembled from closures because its components share one computation.
//!
//! Catalog ids and parameter names are part of the CLI contract:
//!
//! | id                  | parameters                        | chart |
//! |---------------------|-----------------------------------|-------|
//! | `euclidean`         | `dim` (2..=8), `scale` (>0)       | cartesian |
//! | `minkowski`         | `dim`, `scale`                    | cartesian, first coordinate timelike |
//! | `sphere_stereo`     | `dim`, `radius`                   | stereographic projection of the round sphere |
//! | `hyperbolic_ball`   | `dim`, `radius`                   | conformal unit ball |
//! | `lorentz_const_curv`| `dim`, `k` (+1 or -1)             | conformal pseudo-sphere chart |
//! | `schwarzschild`     | `mass` (>0)                       | exterior (t, r, th, ph), r > 2.5 mass |
//! | `beltrami_pullback` | `dim`, `A` ((dim+1)^2 matrix)     | same chart as `sphere_stereo` radius 1 |
//!
//! Matrix parameters accept `diag(a,b,...)` or row form `a,b;c,d`.

use crate::expr::ExprError;
use crate::jets::{Jet3, JetError, MAX_DIM};
use crate::metric::{Chart, MetricField};
use nalgebra::DMatrix;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown catalog id `{0}`")]
    UnknownId(String),
    #[error("catalog id `{id}` does not accept parameter `{name}`")]
    UnknownParam { id: String, name: String },
    #[error("parameter `{name}`: {msg}")]
    BadParam { name: String, msg: String },
    #[error("linear map is singular (|det A| = {0:e} < 1e-10)")]
    SingularMap(f64),
    #[error("internal catalog document failed to parse: {0}")]
    Dsl(#[from] crate::metric::DslError),
}

/// One catalog entry for listings.
pub struct CatalogEntry {
    pub id: &'static str,
    pub params: &'static str,
    pub description: &'static str,
}

pub fn entries() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            id: "euclidean",
            params: "dim=4, scale=1",
            description: "flat positive-definite metric, cartesian chart",
        },
        CatalogEntry {
            id: "minkowski",
            params: "dim=4, scale=1",
            description: "flat metric of signature (-,+,...,+), cartesian chart",
        },
        CatalogEntry {
            id: "sphere_stereo",
            params: "dim=4, radius=1",
            description: "round sphere in the stereographic chart (scalar curvature n(n-1)/radius^2)",
        },
        CatalogEntry {
            id: "hyperbolic_ball",
            params: "dim=4, radius=1",
            description: "hyperbolic space in the conformal ball chart",
        },
        CatalogEntry {
            id: "lorentz_const_curv",
            params: "dim=4, k=1",
            description: "constant-curvature pseudo-Riemannian metric, conformal chart, k = +1 or -1",
        },
        CatalogEntry {
            id: "schwarzschild",
            params: "mass=1",
            description: "vacuum black-hole exterior in (t, r, th, ph), r > 2.5*mass, poles excluded",
        },
        CatalogEntry {
            id: "beltrami_pullback",
            params: "dim=4, A=diag(2,1,1,1,1)",
            description: "pullback of the round metric under v -> Av/|Av|; geodesically equivalent to sphere_stereo",
        },
    ]
}

pub type Params = [(String, String)];

fn lookup<'a>(params: &'a Params, key: &str) -> Option<&'a str> {
    params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn check_keys(id: &str, params: &Params, allowed: &[&str]) -> Result<(), CatalogError> {
    for (k, _) in params {
        if !allowed.contains(&k.as_str()) {
            return Err(CatalogError::UnknownParam { id: id.into(), name: k.clone() });
        }
    }
    Ok(())
}

fn get_dim(params: &Params, default: usize) -> Result<usize, CatalogError> {
    let d = match lookup(params, "dim") {
        Some(s) => s.parse::<usize>().map_err(|_| CatalogError::BadParam {
            name: "dim".into(),
            msg: format!("expected integer, got `{s}`"),
        })?,
        None => default,
    };
    if !(2..=MAX_DIM).contains(&d) {
        return Err(CatalogError::BadParam {
            name: "dim".into(),
            msg: format!("dimension {d} outside 2..={MAX_DIM}"),
        });
    }
    Ok(d)
}

fn get_f64(params: &Params, key: &str, default: f64) -> Result<f64, CatalogError> {
    match lookup(params, key) {
        Some(s) => s.parse::<f64>().map_err(|_| CatalogError::BadParam {
            name: key.into(),
            msg: format!("expected number, got `{s}`"),
        }),
        None => Ok(default),
    }
}

fn get_positive(params: &Params, key: &str, default: f64) -> Result<f64, CatalogError> {
    let v = get_f64(params, key, default)?;
    if v <= 0.0 {
        return Err(CatalogError::BadParam {
            name: key.into(),
            msg: format!("must be positive, got {v}"),
        });
    }
    Ok(v)
}

/// Parse `diag(a,b,...)` or `a,b;c,d` into an n x n matrix.
pub fn parse_matrix(src: &str, n: usize) -> Result<DMatrix<f64>, CatalogError> {
    let bad = |msg: String| CatalogError::BadParam { name: "A".into(), msg };
    let src = src.trim();
    if src == "identity" {
        return Ok(DMatrix::identity(n, n));
    }
    if let Some(inner) = src.strip_prefix("diag(").and_then(|s| s.strip_suffix(')')) {
        let vals: Result<Vec<f64>, _> =
            inner.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|_| bad(format!("bad diagonal `{inner}`")))?;
        if vals.len() != n {
            return Err(bad(format!("expected {n} diagonal entries, found {}", vals.len())));
        }
        return Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals)));
    }
    let rows: Vec<&str> = src.split(';').collect();
    if rows.len() != n {
        return Err(bad(format!("expected {n} rows, found {}", rows.len())));
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let vals: Result<Vec<f64>, _> = row.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|_| bad(format!("bad row `{row}`")))?;
        if vals.len() != n {
            return Err(bad(format!("row {} has {} entries, expected {n}", i + 1, vals.len())));
        }
        for (j, v) in vals.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn coord_list(dim: usize) -> String {
    (1..=dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(" ")
}

fn sum_of_squares(dim: usize) -> String {
    (1..=dim).map(|i| format!("x{i}^2")).collect::<Vec<_>>().join("+")
}

/// Build a catalog metric by id.
pub fn build(id: &str, params: &Params) -> Result<MetricField, CatalogError> {
    match id {
        "euclidean" => {
            check_keys(id, params, &["dim", "scale"])?;
            let dim = get_dim(params, 4)?;
            let scale = get_positive(params, "scale", 1.0)?;
            let mut doc = format!(
                "dim {dim}\ncoords {}\nbox [-1,1]^{dim}\ndomain [-1000,1000]^{dim}\n\
                 signature {dim} 0\nlabel \"euclidean dim {dim} scale {scale}\"\n",
                coord_list(dim)
            );
            for i in 1..=dim {
                doc.push_str(&format!("g{i}{i} = {scale}\n"));
            }
            Ok(MetricField::parse(&doc)?)
        }
        "minkowski" => {
            check_keys(id, params, &["dim", "scale"])?;
            let dim = get_dim(params, 4)?;
            let scale = get_positive(params, "scale", 1.0)?;
            let mut doc = format!(
                "dim {dim}\ncoords {}\nbox [-1,1]^{dim}\ndomain [-1000,1000]^{dim}\n\
                 signature {} 1\nlabel \"minkowski dim {dim} scale {scale}\"\n",
                coord_list(dim),
                dim - 1
            );
            doc.push_str(&format!("g11 = -{scale}\n"));
            for i in 2..=dim {
                doc.push_str(&format!("g{i}{i} = {scale}\n"));
            }
            Ok(MetricField::parse(&doc)?)
        }
        "sphere_stereo" => {
            check_keys(id, params, &["dim", "radius"])?;
            let dim = get_dim(params, 4)?;
            let radius = get_positive(params, "radius", 1.0)?;
            let conf = 4.0 * radius * radius;
            let mut doc = format!(
                "dim {dim}\ncoords {}\nbox [-1,1]^{dim}\ndomain [-10000,10000]^{dim}\n\
                 signature {dim} 0\nlabel \"sphere_stereo dim {dim} radius {radius}\"\n",
                coord_list(dim)
            );
            for i in 1..=dim {
                doc.push_str(&format!("g{i}{i} = {conf}/(1+{})^2\n", sum_of_squares(dim)));
            }
            Ok(MetricField::parse(&doc)?)
        }
        "hyperbolic_ball" => {
            check_keys(id, params, &["dim", "radius"])?;
            let dim = get_dim(params, 4)?;
            let radius = get_positive(params, "radius", 1.0)?;
            let conf = 4.0 * radius * radius;
            // Domain box inscribed in the unit ball so integration never
            // crosses the chart boundary.
            let half = 0.99 / (dim as f64).sqrt();
            let mut doc = format!(
                "dim {dim}\ncoords {}\nbox [-0.4,0.4]^{dim}\ndomain [-{half},{half}]^{dim}\n\
                 exclude 0.05\nsingular = 1-({})\n\
                 signature {dim} 0\nlabel \"hyperbolic_ball dim {dim} radius {radius}\"\n",
                coord_list(dim),
                sum_of_squares(dim)
            );
            for i in 1..=dim {
                doc.push_str(&format!("g{i}{i} = {conf}/(1-({}))^2\n", sum_of_squares(dim)));
            }
            Ok(MetricField::parse(&doc)?)
        }
        "lorentz_const_curv" => {
            check_keys(id, params, &["dim", "k"])?;
            let dim = get_dim(params, 4)?;
            let k = get_f64(params, "k", 1.0)?;
            if k != 1.0 && k != -1.0 {
                return Err(CatalogError::BadParam {
                    name: "k".into(),
                    msg: format!("expected +1 or -1, got {k}"),
                });
            }
            let q = {
                let rest: Vec<String> = (2..=dim).map(|i| format!("x{i}^2")).collect();
                format!("(-x1^2+{})", rest.join("+"))
            };
            let mut doc = format!(
                "dim {dim}\ncoords {}\nbox [-0.3,0.3]^{dim}\ndomain [-0.35,0.35]^{dim}\n\
                 exclude 0.1\nsingular = 1+{k}*{q}\n\
                 signature {} 1\nlabel \"lorentz_const_curv dim {dim} k {k}\"\n",
                coord_list(dim),
                dim - 1
            );
            doc.push_str(&format!("g11 = -4/(1+{k}*{q})^2\n"));
            for i in 2..=dim {
                doc.push_str(&format!("g{i}{i} = 4/(1+{k}*{q})^2\n"));
            }
            Ok(MetricField::parse(&doc)?)
        }
        "schwarzschild" => {
            check_keys(id, params, &["mass"])?;
            let m = get_positive(params, "mass", 1.0)?;
            let doc = format!(
                "dim 4\ncoords t r th ph\n\
                 box [-1,1] [{rmin},{rmax}] [0.1,{thmax}] [0,{phmax}]\n\
                 domain [-1000,1000] [{rdom},{rdommax}] [0.02,{thdom}] [-1000,1000]\n\
                 param m = {m}\nexclude {excl}\nsingular = r - 2*m\n\
                 signature 3 1\nlabel \"schwarzschild mass {m}\"\n\
                 g11 = -(1-2*m/r)\n\
                 g22 = 1/(1-2*m/r)\n\
                 g33 = r^2\n\
                 g44 = r^2*sin(th)^2\n",
                rmin = 2.6 * m,
                rmax = 8.0 * m,
                thmax = PI - 0.1,
                phmax = 2.0 * PI,
                rdom = 2.5 * m,
                rdommax = 200.0 * m,
                thdom = PI - 0.02,
                excl = 0.5 * m,
            );
            Ok(MetricField::parse(&doc)?)
        }
        "beltrami_pullback" => {
            check_keys(id, params, &["dim", "A"])?;
            let dim = get_dim(params, 4)?;
            let a_src = lookup(params, "A").unwrap_or("identity");
            let a = parse_matrix(a_src, dim + 1)?;
            beltrami_pullback(dim, &a)
        }
        other => Err(CatalogError::UnknownId(other.into())),
    }
}

/// Pullback of the unit round metric under the sphere self-map
/// `v -> Av/|Av|`, realized in the stereographic chart.
///
/// The chart point x maps to the embedded unit vector w(x); the composed map
/// F(x) = A w(x) / |A w(x)| lands on the sphere, and since the round metric
/// is the restriction of the ambient euclidean one, the pullback components
/// are plain dot products of the columns of dF. The differential dw is coded
/// in closed form so every component stays a full order-3 jet.
pub fn beltrami_pullback(dim: usize, a: &DMatrix<f64>) -> Result<MetricField, CatalogError> {
    assert_eq!(a.nrows(), dim + 1);
    assert_eq!(a.ncols(), dim + 1);
    let det = a.determinant();
    if det.abs() < 1e-10 {
        return Err(CatalogError::SingularMap(det.abs()));
    }
    let chart = Chart {
        dim,
        coord_names: (1..=dim).map(|i| format!("x{i}")).collect(),
        sample_box: vec![(-1.0, 1.0); dim],
        domain: vec![(-10000.0, 10000.0); dim],
        excluded_radius: 0.0,
    };
    let a = a.clone();
    let label = format!("beltrami_pullback dim {dim}");
    let eval = Arc::new(move |x: &[f64]| beltrami_triangle(&a, dim, x));
    Ok(MetricField::from_matrix_closure(
        chart,
        label,
        Some((dim, 0)),
        eval,
    ))
}

fn beltrami_triangle(a: &DMatrix<f64>, n: usize, x: &[f64]) -> Result<Vec<Jet3>, ExprError> {
    let amb = n + 1;
    let coord = |k: usize| -> Result<Jet3, JetError> { Jet3::coordinate(n, k, x) };

    // s = 1 + |x|^2
    let mut s = Jet3::constant(n, 1.0);
    let mut xs = Vec::with_capacity(n);
    for k in 0..n {
        let xk = coord(k)?;
        s = s.add(&xk.mul(&xk)?)?;
        xs.push(xk);
    }
    let s2 = s.mul(&s)?;

    // Inverse stereographic embedding w(x) and its differential dw[i][b]:
    //   w_b     = 2 x_b / s              (b < n)
    //   w_n     = (|x|^2 - 1) / s
    //   dw_i b  = 2 d_ib / s - 4 x_i x_b / s^2
    //   dw_i n  = 4 x_i / s^2
    let mut w = Vec::with_capacity(amb);
    for b in 0..n {
        w.push(xs[b].scale(2.0).div(&s)?);
    }
    let norm2 = s.sub(&Jet3::constant(n, 2.0))?; // |x|^2 - 1
    w.push(norm2.div(&s)?);

    let mut dw = vec![vec![Jet3::constant(n, 0.0); amb]; n];
    for i in 0..n {
        for b in 0..n {
            let mut t = xs[i].mul(&xs[b])?.scale(-4.0).div(&s2)?;
            if i == b {
                t = t.add(&Jet3::constant(n, 2.0).div(&s)?)?;
            }
            dw[i][b] = t;
        }
        dw[i][n] = xs[i].scale(4.0).div(&s2)?;
    }

    // u = A w, du_i = A dw_i
    let mut u = vec![Jet3::constant(n, 0.0); amb];
    let mut du = vec![vec![Jet3::constant(n, 0.0); amb]; n];
    for r in 0..amb {
        for c in 0..amb {
            let coeff = a[(r, c)];
            if coeff != 0.0 {
                u[r] = u[r].add(&w[c].scale(coeff))?;
                for i in 0..n {
                    du[i][r] = du[i][r].add(&dw[i][c].scale(coeff))?;
                }
            }
        }
    }

    // F = u / |u|; dF_i = du_i / r - u (u . du_i) / r^3
    let mut r2 = Jet3::constant(n, 0.0);
    for b in 0..amb {
        r2 = r2.add(&u[b].mul(&u[b])?)?;
    }
    let r = r2.sqrt()?;
    let r3 = r2.mul(&r)?;
    let mut df = vec![vec![Jet3::constant(n, 0.0); amb]; n];
    for i in 0..n {
        let mut q = Jet3::constant(n, 0.0);
        for b in 0..amb {
            q = q.add(&u[b].mul(&du[i][b])?)?;
        }
        let proj = q.div(&r3)?;
        for b in 0..amb {
            df[i][b] = du[i][b].div(&r)?.sub(&u[b].mul(&proj)?)?;
        }
    }

    // Upper triangle of the pullback metric.
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            let mut gij = Jet3::constant(n, 0.0);
            for b in 0..amb {
                gij = gij.add(&df[i][b].mul(&df[j][b])?)?;
            }
            out.push(gij);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn euclidean_components() {
        let m = build("euclidean", &[("dim".into(), "4".into())]).unwrap();
        let g = m.eval_matrix(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(g, DMatrix::identity(4, 4));
    }

    #[test]
    fn scaled_euclidean() {
        let m = build(
            "euclidean",
            &[("dim".into(), "3".into()), ("scale".into(), "3".into())],
        )
        .unwrap();
        let g = m.eval_matrix(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g[(0, 0)], 3.0);
    }

    #[test]
    fn minkowski_signature() {
        let m = build("minkowski", &[("dim".into(), "4".into())]).unwrap();
        let g = m.eval_matrix(&[0.0; 4]).unwrap();
        assert_eq!(g[(0, 0)], -1.0);
        assert_eq!(g[(1, 1)], 1.0);
        assert_eq!(m.signature_hint, Some((3, 1)));
    }

    #[test]
    fn sphere_stereo_components() {
        let m = build("sphere_stereo", &[("dim".into(), "2".into())]).unwrap();
        let g = m.eval_matrix(&[0.0, 0.0]).unwrap();
        assert_eq!(g[(0, 0)], 4.0);
        let g = m.eval_matrix(&[1.0, 0.0]).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
    }

    #[test]
    fn schwarzschild_chart() {
        let m = build("schwarzschild", &[]).unwrap();
        assert!(m.accepts(&[0.0, 4.0, PI / 2.0, 0.0]));
        assert!(!m.accepts(&[0.0, 2.2, PI / 2.0, 0.0]));
        let g = m.eval_matrix(&[0.0, 4.0, PI / 2.0, 0.0]).unwrap();
        assert!((g[(0, 0)] + 0.5).abs() < 1e-14);
        assert!((g[(1, 1)] - 2.0).abs() < 1e-14);
        assert!((g[(3, 3)] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_id_and_params() {
        assert!(matches!(build("nope", &[]), Err(CatalogError::UnknownId(_))));
        assert!(matches!(
            build("euclidean", &[("radius".into(), "1".into())]),
            Err(CatalogError::UnknownParam { .. })
        ));
        assert!(matches!(
            build("sphere_stereo", &[("radius".into(), "-1".into())]),
            Err(CatalogError::BadParam { .. })
        ));
    }

    #[test]
    fn beltrami_identity_map_is_round_metric() {
        let round = build("sphere_stereo", &[("dim".into(), "4".into())]).unwrap();
        let pulled = build("beltrami_pullback", &[("dim".into(), "4".into())]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = round.eval_matrix(&x).unwrap();
            let b = pulled.eval_matrix(&x).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert!(
                        (a[(i, j)] - b[(i, j)]).abs() <= 1e-12,
                        "component ({i},{j}) differs at {x:?}: {} vs {}",
                        a[(i, j)],
                        b[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn beltrami_jets_match_finite_differences() {
        // The closed-form differential inside the closure must agree with
        // numerical derivatives of the component values.
        let a = parse_matrix("diag(2,1,1,1,1)", 5).unwrap();
        let m = beltrami_pullback(4, &a).unwrap();
        let x = [0.3, -0.2, 0.5, 0.1];
        let h = 1e-5;
        for i in 0..4 {
            for j in i..4 {
                let jet = m.component_jet(i, j, &x).unwrap();
                for k in 0..4 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let fp = m.component_jet(i, j, &xp).unwrap().value;
                    let fm = m.component_jet(i, j, &xm).unwrap().value;
                    let fd = (fp - fm) / (2.0 * h);
                    assert!(
                        (jet.grad(k) - fd).abs() < 1e-8 * (1.0 + fd.abs()),
                        "d g{}{} / dx{} mismatch: jet {} vs fd {}",
                        i + 1,
                        j + 1,
                        k + 1,
                        jet.grad(k),
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn beltrami_rejects_singular_map() {
        let a = DMatrix::zeros(5, 5);
        assert!(matches!(
            beltrami_pullback(4, &a),
            Err(CatalogError::SingularMap(_))
        ));
    }
}
