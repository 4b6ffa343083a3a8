//! Metric fields over a single coordinate chart.
//!
//! A metric specification declares a chart (dimension, coordinate names,
//! sampling box) and the upper-triangular components as expressions; the
//! symmetric completion is applied automatically. Components evaluate to
//! order-3 jets so that all curvature machinery downstream gets exact
//! derivatives.
//!
//! Document grammar (newline- or `;`-separated statements, `#` comments):
//!
//! ```text
//! dim 2
//! coords x y
//! box [-1,1]^2            # per-coordinate form: box [-1,1] [0,3]
//! domain [-50,50]^2       # optional validity region for integration; default: box
//! param r = 1.0           # optional named constants
//! exclude 0.05            # optional rejection radius around singular loci
//! singular = x^2+y^2-1    # optional; points with |expr| < exclude are rejected
//! signature 2 0           # optional (p,q) hint
//! label "round sphere"
//! g11 = 4/(1+x^2+y^2)^2
//! g12 = 0
//! g22 = 4/(1+x^2+y^2)^2
//! ```

use crate::expr::{parse_expr, Expr, ExprError, Scope};
use crate::jets::{Jet3, MAX_DIM};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

/// Determinant magnitude below which a sampled point counts as degenerate.
pub const DET_EPS: f64 = 1e-10;

pub type Point = Vec<f64>;

#[derive(Debug, Error)]
pub enum DslError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("line {line}: {msg}")]
    Statement { line: usize, msg: String },
    #[error("missing declaration: {0}")]
    Missing(&'static str),
    #[error("missing metric component g{}{}", .0 + 1, .1 + 1)]
    MissingComponent(usize, usize),
    #[error("line {line}: duplicate declaration of {what}")]
    Duplicate { line: usize, what: String },
    #[error("dimension {0} outside supported range 2..={MAX_DIM}")]
    BadDim(usize),
}

#[derive(Debug, Error)]
#[error(
    "rejection sampling exhausted: accepted {accepted}/{requested} points after {attempts} draws"
)]
pub struct SampleError {
    pub accepted: usize,
    pub requested: usize,
    pub attempts: usize,
}

/// Coordinate chart with sampling and validity boxes.
#[derive(Debug, Clone)]
pub struct Chart {
    pub dim: usize,
    pub coord_names: Vec<String>,
    /// Closed intervals from which sample points are drawn.
    pub sample_box: Vec<(f64, f64)>,
    /// Region on which the chart is trusted; geodesic integration truncates on exit.
    pub domain: Vec<(f64, f64)>,
    /// Points with any singular-locus expression magnitude below this are rejected.
    pub excluded_radius: f64,
}

impl Chart {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.domain).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    pub fn compatible(&self, other: &Chart) -> bool {
        self.dim == other.dim && self.coord_names == other.coord_names
    }
}

/// Evaluator producing the whole upper triangle of component jets at once.
pub type MatrixFn = dyn Fn(&[f64]) -> Result<Vec<Jet3>, ExprError> + Send + Sync;

#[derive(Clone)]
enum Component {
    Expr(Expr),
}

impl Component {
    fn eval(&self, dim: usize, x: &[f64]) -> Result<Jet3, ExprError> {
        match self {
            Component::Expr(e) => e.eval_jet(dim, x),
        }
    }
}

#[derive(Clone)]
enum Evaluator {
    /// One expression per upper-triangle component.
    PerComponent(Vec<Component>),
    /// Single closure computing the whole upper triangle (shared subterms).
    WholeMatrix(Arc<MatrixFn>),
}

/// A chart plus a symmetric matrix of jet-valued component evaluators.
#[derive(Clone)]
pub struct MetricField {
    pub chart: Chart,
    pub label: String,
    pub signature_hint: Option<(usize, usize)>,
    eval: Evaluator,
    singular: Vec<Expr>,
    source: Option<String>,
}

impl std::fmt::Debug for MetricField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricField")
            .field("label", &self.label)
            .field("dim", &self.chart.dim)
            .finish_non_exhaustive()
    }
}


fn tri(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

impl MetricField {
    /// Build from a whole-matrix closure (used by catalog entries whose
    /// components share most of their computation).
    pub fn from_matrix_closure(
        chart: Chart,
        label: impl Into<String>,
        signature_hint: Option<(usize, usize)>,
        eval: Arc<MatrixFn>,
    ) -> MetricField {
        MetricField {
            chart,
            label: label.into(),
            signature_hint,
            eval: Evaluator::WholeMatrix(eval),
            singular: Vec::new(),
            source: None,
        }
    }

    /// Parse a metric specification document.
    pub fn parse(src: &str) -> Result<MetricField, DslError> {
        let mut dim: Option<usize> = None;
        let mut coords: Option<(usize, Vec<String>)> = None;
        let mut box_stmt: Option<(usize, String, usize, usize)> = None;
        let mut domain_stmt: Option<(usize, String, usize, usize)> = None;
        let mut params: Vec<(String, f64)> = Vec::new();
        let mut exclude = 0.0f64;
        let mut singular_src: Vec<(String, usize, usize)> = Vec::new();
        let mut signature: Option<(usize, usize)> = None;
        let mut label: Option<String> = None;
        let mut comp_src: Vec<(usize, usize, String, usize, usize)> = Vec::new();

        for (line_idx, raw_line) in src.lines().enumerate() {
            let line_no = line_idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            };
            let mut col = 1usize;
            for stmt in line.split(';') {
                let stmt_col = col + (stmt.len() - stmt.trim_start().len());
                let text = stmt.trim();
                col += stmt.len() + 1;
                if text.is_empty() {
                    continue;
                }
                let bad = |msg: String| DslError::Statement { line: line_no, msg };
                let (head, rest) = match text.split_once(|c: char| c.is_whitespace() || c == '=') {
                    Some((h, r)) => (h, r.trim()),
                    None => (text, ""),
                };
                let rest = rest.strip_prefix('=').map(str::trim).unwrap_or(rest);
                match head {
                    "dim" => {
                        if dim.is_some() {
                            return Err(DslError::Duplicate { line: line_no, what: "dim".into() });
                        }
                        let d: usize =
                            rest.parse().map_err(|_| bad(format!("bad dimension `{rest}`")))?;
                        if !(2..=MAX_DIM).contains(&d) {
                            return Err(DslError::BadDim(d));
                        }
                        dim = Some(d);
                    }
                    "coords" => {
                        if coords.is_some() {
                            return Err(DslError::Duplicate {
                                line: line_no,
                                what: "coords".into(),
                            });
                        }
                        let names: Vec<String> = rest
                            .split(|c: char| c.is_whitespace() || c == ',')
                            .filter(|s| !s.is_empty())
                            .map(|s| s.to_string())
                            .collect();
                        coords = Some((line_no, names));
                    }
                    "box" => box_stmt = Some((line_no, rest.to_string(), line_no, stmt_col)),
                    "domain" => domain_stmt = Some((line_no, rest.to_string(), line_no, stmt_col)),
                    "param" => {
                        let (name, value_src) = rest
                            .split_once('=')
                            .ok_or_else(|| bad("param expects `name = value`".into()))?;
                        let name = name.trim().to_string();
                        let scope = Scope { coords: &[], params: &params };
                        let e = parse_expr(value_src.trim(), &scope, line_no, stmt_col)?;
                        let v = e
                            .eval_f64(&[])
                            .ok_or_else(|| bad(format!("param `{name}` is not a constant")))?;
                        params.push((name, v));
                    }
                    "exclude" => {
                        exclude = rest
                            .parse()
                            .map_err(|_| bad(format!("bad exclusion radius `{rest}`")))?;
                    }
                    "singular" => {
                        singular_src.push((rest.to_string(), line_no, stmt_col));
                    }
                    "signature" => {
                        let parts: Vec<&str> = rest.split_whitespace().collect();
                        if parts.len() != 2 {
                            return Err(bad("signature expects two integers".into()));
                        }
                        let p = parts[0].parse().map_err(|_| bad("bad signature".into()))?;
                        let q = parts[1].parse().map_err(|_| bad("bad signature".into()))?;
                        signature = Some((p, q));
                    }
                    "label" => {
                        label = Some(rest.trim_matches('"').to_string());
                    }
                    _ if head.starts_with('g') && head.len() == 3 => {
                        let b = head.as_bytes();
                        let i = (b[1] as char).to_digit(10);
                        let j = (b[2] as char).to_digit(10);
                        match (i, j) {
                            (Some(i), Some(j)) if i >= 1 && j >= 1 => {
                                let (i, j) = (i as usize - 1, j as usize - 1);
                                if comp_src.iter().any(|(a, b, ..)| tri(*a, *b) == tri(i, j)) {
                                    return Err(DslError::Duplicate {
                                        line: line_no,
                                        what: format!("g{}{}", i + 1, j + 1),
                                    });
                                }
                                comp_src.push((i, j, rest.to_string(), line_no, stmt_col));
                            }
                            _ => return Err(bad(format!("bad component name `{head}`"))),
                        }
                    }
                    other => return Err(bad(format!("unknown statement `{other}`"))),
                }
            }
        }

        let dim = dim.ok_or(DslError::Missing("dim"))?;
        let (coords_line, coord_names) = coords.ok_or(DslError::Missing("coords"))?;
        if coord_names.len() != dim {
            return Err(DslError::Statement {
                line: coords_line,
                msg: format!("expected {dim} coordinate names, found {}", coord_names.len()),
            });
        }
        for (a, name) in coord_names.iter().enumerate() {
            if coord_names[..a].contains(name) {
                return Err(DslError::Statement {
                    line: coords_line,
                    msg: format!("duplicate coordinate name `{name}`"),
                });
            }
        }

        let (box_line, box_src, ..) = box_stmt.ok_or(DslError::Missing("box"))?;
        let sample_box = parse_box(&box_src, dim, box_line)?;
        let domain = match domain_stmt {
            Some((l, s, ..)) => parse_box(&s, dim, l)?,
            None => sample_box.clone(),
        };

        let scope = Scope { coords: &coord_names, params: &params };
        let mut singular = Vec::new();
        for (s, line, col) in &singular_src {
            singular.push(parse_expr(s, &scope, *line, *col)?);
        }

        let mut comps: Vec<Option<Component>> = vec![None; dim * (dim + 1) / 2];
        for (i, j, s, line, col) in &comp_src {
            if *i >= dim || *j >= dim {
                return Err(DslError::Statement {
                    line: *line,
                    msg: format!("component g{}{} outside dimension {dim}", i + 1, j + 1),
                });
            }
            comps[tri(*i, *j)] = Some(Component::Expr(parse_expr(s, &scope, *line, *col)?));
        }
        // Missing off-diagonal components default to zero; diagonals are required.
        for i in 0..dim {
            if comps[tri(i, i)].is_none() {
                return Err(DslError::MissingComponent(i, i));
            }
        }
        let comps: Vec<Component> = comps
            .into_iter()
            .map(|c| c.unwrap_or(Component::Expr(Expr::Num(0.0))))
            .collect();

        Ok(MetricField {
            chart: Chart {
                dim,
                coord_names,
                sample_box,
                domain,
                excluded_radius: exclude,
            },
            label: label.unwrap_or_else(|| "metric".into()),
            signature_hint: signature,
            eval: Evaluator::PerComponent(comps),
            singular,
            source: Some(src.to_string()),
        })
    }

    pub fn dim(&self) -> usize {
        self.chart.dim
    }

    fn eval_triangle(&self, x: &[f64]) -> Result<Vec<Jet3>, ExprError> {
        let n = self.dim();
        match &self.eval {
            Evaluator::PerComponent(comps) => {
                comps.iter().map(|c| c.eval(n, x)).collect()
            }
            Evaluator::WholeMatrix(f) => f(x),
        }
    }

    /// Jet of component `g_ij` at `x`.
    pub fn component_jet(&self, i: usize, j: usize, x: &[f64]) -> Result<Jet3, ExprError> {
        match &self.eval {
            Evaluator::PerComponent(comps) => comps[tri(i, j)].eval(self.dim(), x),
            Evaluator::WholeMatrix(f) => Ok(f(x)?[tri(i, j)].clone()),
        }
    }

    /// Full symmetric matrix of component jets at `x`.
    pub fn eval_jets(&self, x: &[f64]) -> Result<Vec<Vec<Jet3>>, ExprError> {
        let n = self.dim();
        let tri_jets = self.eval_triangle(x)?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                row.push(tri_jets[tri(i, j)].clone());
            }
            rows.push(row);
        }
        Ok(rows)
    }

    /// Component values at `x` as a matrix.
    pub fn eval_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let n = self.dim();
        let tri_jets = self.eval_triangle(x)?;
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = tri_jets[tri(i, j)].value;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Whether `x` passes the domain, singular-locus, and nondegeneracy checks.
    pub fn accepts(&self, x: &[f64]) -> bool {
        for s in &self.singular {
            match s.eval_f64(x) {
                Some(v) if v.abs() >= self.chart.excluded_radius => {}
                _ => return false,
            }
        }
        match self.eval_matrix(x) {
            Ok(m) => m.determinant().abs() > DET_EPS,
            Err(_) => false,
        }
    }

    /// Draw `n` points from the sample box by rejection sampling.
    ///
    /// Rejects points where a component evaluation fails, where a declared
    /// singular locus is closer than the exclusion radius, or where
    /// `|det g| <= 1e-10`. Deterministic for a fixed seed.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<Vec<Point>, SampleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let max_attempts = 1000 * n.max(1);
        let mut attempts = 0;
        while out.len() < n && attempts < max_attempts {
            attempts += 1;
            let x: Point = self
                .chart
                .sample_box
                .iter()
                .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                .collect();
            if self.accepts(&x) {
                out.push(x);
            }
        }
        if out.len() < n {
            return Err(SampleError { accepted: out.len(), requested: n, attempts });
        }
        Ok(out)
    }

    /// The original document for parsed metrics; regenerated declarations for
    /// others are not supported.
    pub fn pretty_print(&self) -> Option<String> {
        let src = self.source.as_ref()?;
        // Re-parse and re-emit via the expression printer so the output is a
        // normal form: parse(pretty_print(m)) evaluates identically to m.
        let mut out = String::new();
        out.push_str(&format!("dim {}\n", self.dim()));
        out.push_str(&format!("coords {}\n", self.chart.coord_names.join(" ")));
        let fmt_box = |b: &[(f64, f64)]| -> String {
            b.iter().map(|(lo, hi)| format!("[{lo},{hi}]")).collect::<Vec<_>>().join(" ")
        };
        out.push_str(&format!("box {}\n", fmt_box(&self.chart.sample_box)));
        out.push_str(&format!("domain {}\n", fmt_box(&self.chart.domain)));
        if self.chart.excluded_radius > 0.0 {
            out.push_str(&format!("exclude {}\n", self.chart.excluded_radius));
        }
        for s in &self.singular {
            out.push_str(&format!("singular = {}\n", s.print(&self.chart.coord_names)));
        }
        if let Some((p, q)) = self.signature_hint {
            out.push_str(&format!("signature {p} {q}\n"));
        }
        out.push_str(&format!("label \"{}\"\n", self.label));
        let Evaluator::PerComponent(comps) = &self.eval else {
            return None;
        };
        for j in 0..self.dim() {
            for i in 0..=j {
                let Component::Expr(e) = &comps[tri(i, j)];
                out.push_str(&format!(
                    "g{}{} = {}\n",
                    i + 1,
                    j + 1,
                    e.print(&self.chart.coord_names)
                ));
            }
        }
        let _ = src;
        Some(out)
    }
}

fn parse_box(src: &str, dim: usize, line: usize) -> Result<Vec<(f64, f64)>, DslError> {
    let bad = |msg: String| DslError::Statement { line, msg };
    let src = src.trim();
    let parse_interval = |s: &str| -> Result<(f64, f64), DslError> {
        let inner = s
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| bad(format!("bad interval `{s}`")))?;
        let (a, b) = inner.split_once(',').ok_or_else(|| bad(format!("bad interval `{s}`")))?;
        let lo: f64 = a.trim().parse().map_err(|_| bad(format!("bad number `{a}`")))?;
        let hi: f64 = b.trim().parse().map_err(|_| bad(format!("bad number `{b}`")))?;
        if !(hi > lo) {
            return Err(bad(format!("interval [{lo},{hi}] must have positive length")));
        }
        Ok((lo, hi))
    };
    if let Some((head, pow)) = src.rsplit_once('^') {
        if let Ok(k) = pow.trim().parse::<usize>() {
            if k != dim {
                return Err(bad(format!("box exponent {k} does not match dimension {dim}")));
            }
            let iv = parse_interval(head.trim())?;
            return Ok(vec![iv; dim]);
        }
    }
    let parts: Vec<&str> = src.split_whitespace().collect();
    if parts.len() != dim {
        return Err(bad(format!("expected {dim} intervals, found {}", parts.len())));
    }
    parts.into_iter().map(parse_interval).collect()
}
