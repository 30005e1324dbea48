//! Generalized plant data model.
//!
//! The plant is a discrete-time realization
//!
//! ```text
//! x+ = A x + B1 w + B2 u
//! z  = C1 x        + D12 u
//! y  = C2 x + D21 w
//! ```
//!
//! with the `D11` and `D22` feedthrough terms fixed at zero. Synthesis
//! routines further require `A` to be Schur stable.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::boolmat::owners;
use crate::commgraph::{base_graph, graph_delay};
use crate::error::{Error, Result};

pub const DEFAULT_TOL_ZERO: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
}

impl PlantModel {
    /// Build a plant, checking that every block conforms with `A`.
    pub fn new(
        a: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        c1: DMatrix<f64>,
        c2: DMatrix<f64>,
        d12: DMatrix<f64>,
        d21: DMatrix<f64>,
    ) -> Result<Self> {
        let p = PlantModel {
            a,
            b1,
            b2,
            c1,
            c2,
            d12,
            d21,
        };
        p.check_dims()?;
        Ok(p)
    }

    fn check_dims(&self) -> Result<()> {
        let s = self.a.nrows();
        let expect = |field: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::DimensionMismatch {
                    field: field.into(),
                    detail: format!("expected {}x{}, got {}x{}", want.0, want.1, got.0, got.1),
                })
            } else {
                Ok(())
            }
        };
        if self.a.ncols() != s {
            return Err(Error::DimensionMismatch {
                field: "A".into(),
                detail: format!("must be square, got {}x{}", s, self.a.ncols()),
            });
        }
        expect("B1", self.b1.shape(), (s, self.p1()))?;
        expect("B2", self.b2.shape(), (s, self.p2()))?;
        expect("C1", self.c1.shape(), (self.q1(), s))?;
        expect("C2", self.c2.shape(), (self.q2(), s))?;
        expect("D12", self.d12.shape(), (self.q1(), self.p2()))?;
        expect("D21", self.d21.shape(), (self.q2(), self.p1()))?;
        Ok(())
    }

    pub fn s(&self) -> usize {
        self.a.nrows()
    }
    pub fn p1(&self) -> usize {
        self.b1.ncols()
    }
    pub fn p2(&self) -> usize {
        self.b2.ncols()
    }
    pub fn q1(&self) -> usize {
        self.c1.nrows()
    }
    pub fn q2(&self) -> usize {
        self.c2.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Error unless `rho(A) < 1`.
    pub fn require_stable(&self) -> Result<()> {
        let rho = self.spectral_radius();
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::Unstable(rho))
        }
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Block structure of the sub-controllers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub n: usize,
    pub u_sizes: Vec<usize>,
    pub y_sizes: Vec<usize>,
    /// Explicit state attribution; when absent the states are split
    /// contiguously and equally.
    pub x_sizes: Option<Vec<usize>>,
}

impl Partition {
    pub fn new(u_sizes: Vec<usize>, y_sizes: Vec<usize>) -> Result<Self> {
        let p = Partition {
            n: u_sizes.len(),
            u_sizes,
            y_sizes,
            x_sizes: None,
        };
        if p.n == 0 {
            return Err(Error::InvalidArgument("partition needs n >= 1".into()));
        }
        if p.y_sizes.len() != p.n {
            return Err(Error::DimensionMismatch {
                field: "partition.y".into(),
                detail: format!("{} blocks, expected {}", p.y_sizes.len(), p.n),
            });
        }
        if p.u_sizes.iter().chain(&p.y_sizes).any(|&k| k == 0) {
            return Err(Error::InvalidArgument("partition block sizes must be positive".into()));
        }
        Ok(p)
    }

    pub fn with_states(mut self, x_sizes: Vec<usize>) -> Result<Self> {
        if x_sizes.len() != self.n {
            return Err(Error::DimensionMismatch {
                field: "partition.x".into(),
                detail: format!("{} blocks, expected {}", x_sizes.len(), self.n),
            });
        }
        self.x_sizes = Some(x_sizes);
        Ok(self)
    }

    pub fn uniform(n: usize) -> Self {
        Partition {
            n,
            u_sizes: vec![1; n],
            y_sizes: vec![1; n],
            x_sizes: None,
        }
    }

    /// Check block sums against the plant.
    pub fn check(&self, p: &PlantModel) -> Result<()> {
        let sum_u: usize = self.u_sizes.iter().sum();
        let sum_y: usize = self.y_sizes.iter().sum();
        if sum_u != p.p2() {
            return Err(Error::DimensionMismatch {
                field: "partition.u".into(),
                detail: format!("sizes sum to {sum_u}, B2 has {} columns", p.p2()),
            });
        }
        if sum_y != p.q2() {
            return Err(Error::DimensionMismatch {
                field: "partition.y".into(),
                detail: format!("sizes sum to {sum_y}, C2 has {} rows", p.q2()),
            });
        }
        if let Some(x) = &self.x_sizes {
            let sum_x: usize = x.iter().sum();
            if sum_x != p.s() {
                return Err(Error::DimensionMismatch {
                    field: "partition.x".into(),
                    detail: format!("sizes sum to {sum_x}, A is {}x{}", p.s(), p.s()),
                });
            }
        }
        Ok(())
    }

    /// Number of states attributed to each sub-system.
    pub fn state_sizes(&self, s: usize) -> Result<Vec<usize>> {
        match &self.x_sizes {
            Some(x) => Ok(x.clone()),
            None if s.is_multiple_of(self.n) => Ok(vec![s / self.n; self.n]),
            None => Err(Error::InvalidArgument(format!(
                "{s} states cannot be split equally across {} sub-systems; give partition.x",
                self.n
            ))),
        }
    }

    /// Scalar size of the controller parameter (`p2 x q2`).
    pub fn param_shape(&self) -> (usize, usize) {
        (self.u_sizes.iter().sum(), self.y_sizes.iter().sum())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub stable: bool,
    pub spectral_radius: f64,
    pub b2_block_diag: bool,
    pub c2_block_diag: bool,
    pub base_strongly_connected: bool,
    /// `||D12'D12 - I||`, `||D21 D21' - I||`, `||C1'D12||`, `||B1 D21'||`.
    pub param_assumption_residuals: [f64; 4],
    pub warnings: Vec<String>,
}

/// Report-only structural and numerical checks. Never fails.
pub fn validate_plant(p: &PlantModel, part: &Partition, tol_zero: f64) -> ValidationReport {
    let mut warnings = Vec::new();
    let rho = p.spectral_radius();
    let stable = rho < 1.0 - tol_zero;
    if !stable {
        warnings.push(format!("spectral radius {rho:.6} >= 1; synthesis requires a stable plant"));
    }

    let (b2_block_diag, c2_block_diag) = match part.state_sizes(p.s()) {
        Ok(xs) => (
            is_block_diag(&p.b2, &xs, &part.u_sizes, tol_zero),
            is_block_diag(&p.c2, &part.y_sizes, &xs, tol_zero),
        ),
        Err(e) => {
            warnings.push(e.to_string());
            (false, false)
        }
    };
    if !b2_block_diag {
        warnings.push("B2 is not block diagonal".into());
    }
    if !c2_block_diag {
        warnings.push("C2 is not block diagonal".into());
    }

    let base_strongly_connected = match base_graph(p, part, tol_zero) {
        Ok(g) => graph_delay(&g).is_some(),
        Err(_) => false,
    };
    if !base_strongly_connected {
        warnings.push("base graph bsupp(A) has infinite delay".into());
    }

    let eye = |k| DMatrix::<f64>::identity(k, k);
    let residuals = [
        (p.d12.transpose() * &p.d12 - eye(p.p2())).norm(),
        (&p.d21 * p.d21.transpose() - eye(p.q2())).norm(),
        (p.c1.transpose() * &p.d12).norm(),
        (&p.b1 * p.d21.transpose()).norm(),
    ];
    let names = ["D12'D12 = I", "D21 D21' = I", "C1'D12 = 0", "B1 D21' = 0"];
    for (r, name) in residuals.iter().zip(names) {
        if *r > tol_zero {
            warnings.push(format!("assumption {name} violated (residual {r:.3e})"));
        }
    }

    ValidationReport {
        stable,
        spectral_radius: rho,
        b2_block_diag,
        c2_block_diag,
        base_strongly_connected,
        param_assumption_residuals: residuals,
        warnings,
    }
}

/// True when every entry outside the diagonal blocks is at most `tol`.
pub fn is_block_diag(m: &DMatrix<f64>, row_sizes: &[usize], col_sizes: &[usize], tol: f64) -> bool {
    let ro = owners(row_sizes);
    let co = owners(col_sizes);
    if ro.len() != m.nrows() || co.len() != m.ncols() {
        return false;
    }
    (0..m.nrows()).all(|r| (0..m.ncols()).all(|c| ro[r] == co[c] || m[(r, c)].abs() <= tol))
}

/// One of the four transfer blocks of the generalized plant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    G11,
    G12,
    G21,
    G22,
}

impl std::str::FromStr for Block {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "11" => Ok(Block::G11),
            "12" => Ok(Block::G12),
            "21" => Ok(Block::G21),
            "22" => Ok(Block::G22),
            other => Err(Error::InvalidArgument(format!("unknown block {other}"))),
        }
    }
}

/// Markov parameters `G^(t)` for `t_from..=t_to`.
pub fn markov_params(
    p: &PlantModel,
    block: Block,
    t_from: usize,
    t_to: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if t_from > t_to {
        return Err(Error::InvalidArgument(format!(
            "invalid Markov range {t_from}..={t_to}"
        )));
    }
    let (c, b, d) = match block {
        Block::G11 => (&p.c1, &p.b1, None),
        Block::G12 => (&p.c1, &p.b2, Some(&p.d12)),
        Block::G21 => (&p.c2, &p.b1, Some(&p.d21)),
        Block::G22 => (&p.c2, &p.b2, None),
    };
    let mut out = Vec::with_capacity(t_to - t_from + 1);
    if t_from == 0 {
        out.push(match d {
            Some(d) => d.clone(),
            None => DMatrix::zeros(c.nrows(), b.ncols()),
        });
    }
    // x_t = A^{t-1} B
    let mut x = b.clone();
    for t in 1..=t_to {
        if t >= t_from {
            out.push(c * &x);
        }
        if t < t_to {
            x = &p.a * x;
        }
    }
    Ok(out)
}

/// Coupling used by the example generator.
pub const DEFAULT_COUPLING: f64 = 0.2;

/// Seeded chain of `n` scalar sub-systems with nearest-neighbour coupling.
///
/// The performance and noise channels are chosen so that the standard
/// orthogonality assumptions hold exactly.
pub fn gen_chain_plant(n: usize, couple: f64, seed: u64) -> Result<(PlantModel, Partition)> {
    if n < 2 {
        return Err(Error::InvalidArgument("chain plant needs n >= 2".into()));
    }
    if !(couple >= 0.0) || !couple.is_finite() {
        return Err(Error::InvalidArgument(format!("coupling must be >= 0, got {couple}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = rng.gen_range(0.3..0.6);
        if i + 1 < n {
            a[(i, i + 1)] = couple;
            a[(i + 1, i)] = couple;
        }
    }
    let rho = spectral_radius(&a);
    if rho > 0.95 {
        a *= 0.95 / rho * (1.0 - 1e-12);
    }
    assert!(spectral_radius(&a) < 1.0, "chain plant must be stable after scaling");

    let eye = DMatrix::<f64>::identity(n, n);
    let zero = DMatrix::<f64>::zeros(n, n);
    let b1 = hcat(&eye, &zero);
    let d21 = hcat(&zero, &eye);
    let c1 = vcat(&eye, &zero);
    let d12 = vcat(&zero, &eye);
    let plant = PlantModel::new(a, b1, eye.clone(), c1, eye, d12, d21)?;
    Ok((plant, Partition::uniform(n)))
}

fn hcat(l: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(l.nrows(), l.ncols() + r.ncols());
    out.view_mut((0, 0), l.shape()).copy_from(l);
    out.view_mut((0, l.ncols()), r.shape()).copy_from(r);
    out
}

fn vcat(t: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(t.nrows() + b.nrows(), t.ncols());
    out.view_mut((0, 0), t.shape()).copy_from(t);
    out.view_mut((t.nrows(), 0), b.shape()).copy_from(b);
    out
}

// ---------------------------------------------------------------------------
// JSON document format

const MATRIX_KEYS: [&str; 7] = ["A", "B1", "B2", "C1", "C2", "D12", "D21"];

/// A parsed matrix whose column count is unknown when it has no rows.
struct RawMatrix {
    rows: usize,
    cols: Option<usize>,
    data: Vec<f64>,
}

fn parse_matrix(doc: &Map<String, Value>, field: &str) -> Result<RawMatrix> {
    let v = doc
        .get(field)
        .ok_or_else(|| Error::Malformed(format!("missing matrix `{field}`")))?;
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Malformed(format!("`{field}` must be an array of rows")))?;
    let mut cols = None;
    let mut data = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| Error::Malformed(format!("`{field}` row {i} is not an array")))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::DimensionMismatch {
                    field: field.into(),
                    detail: format!("row {i} has {} entries, expected {c}", row.len()),
                })
            }
            _ => {}
        }
        for x in row {
            data.push(x.as_f64().ok_or_else(|| {
                Error::Malformed(format!("`{field}` row {i} holds a non-numeric entry"))
            })?);
        }
    }
    Ok(RawMatrix {
        rows: rows.len(),
        cols,
        data,
    })
}

impl RawMatrix {
    fn build(self, field: &str, want_cols: usize) -> Result<DMatrix<f64>> {
        let cols = self.cols.unwrap_or(want_cols);
        if cols != want_cols {
            return Err(Error::DimensionMismatch {
                field: field.into(),
                detail: format!("has {cols} columns, expected {want_cols}"),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, cols, &self.data))
    }
}

fn parse_sizes(part: &Map<String, Value>, key: &str) -> Result<Option<Vec<usize>>> {
    match part.get(key) {
        None => Ok(None),
        Some(v) => {
            let arr = v
                .as_array()
                .ok_or_else(|| Error::Malformed(format!("`partition.{key}` must be an array")))?;
            arr.iter()
                .map(|x| {
                    x.as_u64().map(|k| k as usize).ok_or_else(|| {
                        Error::Malformed(format!("`partition.{key}` entries must be integers"))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        }
    }
}

/// Parse a plant document. Performs shape checks only.
pub fn load_plant(doc: &Value) -> Result<(PlantModel, Partition)> {
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Malformed("plant document must be a JSON object".into()))?;
    let raw: Vec<RawMatrix> = MATRIX_KEYS
        .iter()
        .map(|k| parse_matrix(obj, k))
        .collect::<Result<_>>()?;
    let mut it = raw.into_iter();
    let (ra, rb1, rb2, rc1, rc2, rd12, rd21) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );

    let s = ra.rows;
    let a = ra.build("A", s)?;
    for (field, m) in [("B1", &rb1), ("B2", &rb2)] {
        if m.rows != s {
            return Err(Error::DimensionMismatch {
                field: field.into(),
                detail: format!("has {} rows, expected {s}", m.rows),
            });
        }
    }
    let p1 = rb1.cols.unwrap_or(0);
    let p2 = rb2.cols.unwrap_or(0);
    let q1 = rc1.rows;
    let q2 = rc2.rows;
    let b1 = rb1.build("B1", p1)?;
    let b2 = rb2.build("B2", p2)?;
    let c1 = rc1.build("C1", s)?;
    let c2 = rc2.build("C2", s)?;
    if rd12.rows != q1 {
        return Err(Error::DimensionMismatch {
            field: "D12".into(),
            detail: format!("has {} rows, expected {q1}", rd12.rows),
        });
    }
    if rd21.rows != q2 {
        return Err(Error::DimensionMismatch {
            field: "D21".into(),
            detail: format!("has {} rows, expected {q2}", rd21.rows),
        });
    }
    let d12 = rd12.build("D12", p2)?;
    let d21 = rd21.build("D21", p1)?;
    let plant = PlantModel::new(a, b1, b2, c1, c2, d12, d21)?;

    let part_obj = obj
        .get("partition")
        .ok_or(Error::PartitionRequired)?
        .as_object()
        .ok_or_else(|| Error::Malformed("`partition` must be an object".into()))?;
    let u = parse_sizes(part_obj, "u")?.ok_or(Error::PartitionRequired)?;
    let y = parse_sizes(part_obj, "y")?.ok_or(Error::PartitionRequired)?;
    let mut part = Partition::new(u, y)?;
    if let Some(x) = parse_sizes(part_obj, "x")? {
        part = part.with_states(x)?;
    }
    part.check(&plant)?;
    Ok((plant, part))
}

fn matrix_rows(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Serialize a plant into the document format accepted by [`load_plant`].
pub fn save_plant(p: &PlantModel, part: &Partition) -> Value {
    let mut obj = Map::new();
    for (k, m) in MATRIX_KEYS
        .iter()
        .zip([&p.a, &p.b1, &p.b2, &p.c1, &p.c2, &p.d12, &p.d21])
    {
        obj.insert((*k).to_string(), matrix_rows(m));
    }
    let mut po = Map::new();
    po.insert("u".into(), json!(part.u_sizes));
    po.insert("y".into(), json!(part.y_sizes));
    if let Some(x) = &part.x_sizes {
        po.insert("x".into(), json!(x));
    }
    obj.insert("partition".into(), Value::Object(po));
    Value::Object(obj)
}
