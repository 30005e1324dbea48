//! FIR transfer matrices and the truncated H2 model-matching objective.
//!
//! For a stable plant the parameter `R = K (I - G22 K)^{-1}` enters the
//! closed loop affinely, `T = G11 - G12 R G21`, and the cost is the squared
//! H2 norm of `T` summed up to a truncation horizon `T_max` chosen so that the
//! neglected tail is certified small.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boolmat::BoolMatrix;
use crate::commgraph::Graph;
use crate::error::{Error, Result};
use crate::sysmodel::{markov_params, Block, Partition, PlantModel};

pub const DEFAULT_TOL_TAIL: f64 = 1e-10;

/// Finite impulse response transfer matrix with coefficients at
/// `t = t_min..=t_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct FirTM {
    rows: usize,
    cols: usize,
    t_min: usize,
    coeffs: Vec<DMatrix<f64>>,
}

impl FirTM {
    pub fn new(t_min: usize, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::InvalidArgument("FIR needs at least one coefficient".into()))?;
        let shape = first.shape();
        if let Some((t, m)) = coeffs.iter().enumerate().find(|(_, m)| m.shape() != shape) {
            return Err(Error::DimensionMismatch {
                field: "coeffs".into(),
                detail: format!(
                    "coefficient at t = {} is {}x{}, expected {}x{}",
                    t_min + t,
                    m.nrows(),
                    m.ncols(),
                    shape.0,
                    shape.1
                ),
            });
        }
        Ok(FirTM {
            rows: shape.0,
            cols: shape.1,
            t_min,
            coeffs,
        })
    }

    pub fn zeros(rows: usize, cols: usize, t_min: usize, t_max: usize) -> Self {
        assert!(t_max >= t_min);
        FirTM {
            rows,
            cols,
            t_min,
            coeffs: vec![DMatrix::zeros(rows, cols); t_max - t_min + 1],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn t_min(&self) -> usize {
        self.t_min
    }
    pub fn t_max(&self) -> usize {
        self.t_min + self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// Coefficient at delay `t`; panics outside the stored range.
    pub fn coeff(&self, t: usize) -> &DMatrix<f64> {
        &self.coeffs[t - self.t_min]
    }

    pub fn coeff_mut(&mut self, t: usize) -> &mut DMatrix<f64> {
        &mut self.coeffs[t - self.t_min]
    }

    /// Coefficient at `t`, or `None` when outside the stored range.
    pub fn get(&self, t: usize) -> Option<&DMatrix<f64>> {
        t.checked_sub(self.t_min).and_then(|k| self.coeffs.get(k))
    }

    pub fn h2_norm(&self) -> f64 {
        self.coeffs.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    fn zip(&self, other: &FirTM, f: impl Fn(f64, f64) -> f64) -> FirTM {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let lo = self.t_min.min(other.t_min);
        let hi = self.t_max().max(other.t_max());
        let zero = DMatrix::zeros(self.rows, self.cols);
        let coeffs = (lo..=hi)
            .map(|t| {
                let a = self.get(t).unwrap_or(&zero);
                let b = other.get(t).unwrap_or(&zero);
                a.zip_map(b, &f)
            })
            .collect();
        FirTM {
            rows: self.rows,
            cols: self.cols,
            t_min: lo,
            coeffs,
        }
    }

    pub fn add(&self, other: &FirTM) -> FirTM {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FirTM) -> FirTM {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> FirTM {
        FirTM {
            rows: self.rows,
            cols: self.cols,
            t_min: self.t_min,
            coeffs: self.coeffs.iter().map(|m| m * k).collect(),
        }
    }

    pub fn dot(&self, other: &FirTM) -> f64 {
        (self.t_min.max(other.t_min)..=self.t_max().min(other.t_max()))
            .map(|t| self.coeff(t).dot(other.coeff(t)))
            .sum()
    }

    /// Extend with zero coefficients up to `t_max`.
    pub fn padded(&self, t_max: usize) -> FirTM {
        let mut out = self.clone();
        while out.t_max() < t_max {
            out.coeffs.push(DMatrix::zeros(self.rows, self.cols));
        }
        out
    }
}

pub fn fir_h2_norm(x: &FirTM) -> f64 {
    x.h2_norm()
}

#[derive(Serialize, Deserialize)]
struct FirDoc {
    rows: usize,
    cols: usize,
    #[serde(rename = "tMin")]
    t_min: usize,
    #[serde(rename = "tMax")]
    t_max: usize,
    coeffs: Vec<Vec<Vec<f64>>>,
}

impl Serialize for FirTM {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FirDoc {
            rows: self.rows,
            cols: self.cols,
            t_min: self.t_min,
            t_max: self.t_max(),
            coeffs: self
                .coeffs
                .iter()
                .map(|m| {
                    (0..m.nrows())
                        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                        .collect()
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FirTM {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = FirDoc::deserialize(d)?;
        if doc.t_max < doc.t_min || doc.coeffs.len() != doc.t_max - doc.t_min + 1 {
            return Err(D::Error::custom("coefficient count does not match tMin..tMax"));
        }
        let mut coeffs = Vec::with_capacity(doc.coeffs.len());
        for (k, m) in doc.coeffs.iter().enumerate() {
            if m.len() != doc.rows || m.iter().any(|r| r.len() != doc.cols) {
                return Err(D::Error::custom(format!(
                    "coefficient {} is not {}x{}",
                    doc.t_min + k,
                    doc.rows,
                    doc.cols
                )));
            }
            let flat: Vec<f64> = m.iter().flatten().copied().collect();
            coeffs.push(DMatrix::from_row_slice(doc.rows, doc.cols, &flat));
        }
        Ok(FirTM {
            rows: doc.rows,
            cols: doc.cols,
            t_min: doc.t_min,
            coeffs,
        })
    }
}

/// Flat coordinates of a strictly proper `p2 x q2` parameter over `t = 1..=N`,
/// row-major within each coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub horizon: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.horizon * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, r: usize, c: usize) -> usize {
        (t - 1) * self.rows * self.cols + r * self.cols + c
    }

    /// Inverse of [`ParamLayout::index`].
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let per = self.rows * self.cols;
        (idx / per + 1, (idx % per) / self.cols, idx % self.cols)
    }

    pub fn to_fir(&self, x: &[f64]) -> FirTM {
        assert_eq!(x.len(), self.len());
        let per = self.rows * self.cols;
        let coeffs = (0..self.horizon)
            .map(|k| DMatrix::from_row_slice(self.rows, self.cols, &x[k * per..(k + 1) * per]))
            .collect();
        FirTM {
            rows: self.rows,
            cols: self.cols,
            t_min: 1,
            coeffs,
        }
    }

    /// Flatten; coefficients outside `1..=horizon` must be zero-free or absent.
    pub fn from_fir(&self, r: &FirTM) -> Result<Vec<f64>> {
        if (r.rows, r.cols) != (self.rows, self.cols) {
            return Err(Error::DimensionMismatch {
                field: "R".into(),
                detail: format!(
                    "parameter is {}x{}, expected {}x{}",
                    r.rows, r.cols, self.rows, self.cols
                ),
            });
        }
        let mut x = vec![0.0; self.len()];
        for t in r.t_min()..=r.t_max() {
            let m = r.coeff(t);
            if t == 0 || t > self.horizon {
                if m.iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "parameter has a nonzero coefficient at t = {t} outside 1..={}",
                        self.horizon
                    )));
                }
                continue;
            }
            for i in 0..self.rows {
                for j in 0..self.cols {
                    x[self.index(t, i, j)] = m[(i, j)];
                }
            }
        }
        Ok(x)
    }
}

/// Envelope constants used for the geometric tail bound.
#[derive(Clone, Debug)]
struct TailEnvelope {
    rho: f64,
    c11: f64,
    c12: f64,
    c21: f64,
    d12: f64,
    d21: f64,
    /// `A` nilpotent: every Markov parameter past this index vanishes.
    nilpotent: Option<usize>,
}

impl TailEnvelope {
    fn new(p: &PlantModel) -> Result<Self> {
        p.require_stable()?;
        let s = p.s();
        let mut pow = DMatrix::<f64>::identity(s, s);
        let mut nilpotent = None;
        for k in 1..=s {
            pow = &pow * &p.a;
            if pow.iter().all(|&v| v == 0.0) {
                nilpotent = Some(k);
                break;
            }
        }
        let d12 = p.d12.norm();
        let d21 = p.d21.norm();
        if nilpotent.is_some() {
            return Ok(TailEnvelope {
                rho: 0.0,
                c11: 0.0,
                c12: 0.0,
                c21: 0.0,
                d12,
                d21,
                nilpotent,
            });
        }
        let rho = p.spectral_radius();
        let rho_hat = (1.05 * rho).min(0.5 * (1.0 + rho)).max(0.05);
        if rho_hat >= 1.0 {
            return Err(Error::Unstable(rho));
        }
        let window = (4 * s).max(64);
        let env = |block| -> Result<f64> {
            let ms = markov_params(p, block, 1, window)?;
            Ok(ms
                .iter()
                .enumerate()
                .map(|(k, m)| m.norm() / rho_hat.powi(k as i32 + 1))
                .fold(0.0, f64::max))
        };
        Ok(TailEnvelope {
            rho: rho_hat,
            c11: env(Block::G11)?,
            c12: env(Block::G12)?,
            c21: env(Block::G21)?,
            d12,
            d21,
            nilpotent: None,
        })
    }

    /// Bound on `sum_{t > t_max} ||T^(t)||_F^2` for a parameter whose
    /// coefficient norms are `r[b-1]`, `b = 1..`.
    fn tail(&self, t_max: usize, r: &[f64]) -> f64 {
        if self.nilpotent.is_some() {
            return 0.0;
        }
        let rho = self.rho;
        let alpha = self.d12 * self.c21 + self.c12 * self.d21;
        let beta = self.c12 * self.c21;
        let mut total = 0.0;
        for t in t_max + 1.. {
            let mut env = self.c11 * rho.powi(t as i32);
            for (k, &rb) in r.iter().enumerate() {
                let b = k + 1;
                if rb == 0.0 || b >= t {
                    continue;
                }
                let m = (t - b) as f64;
                env += rb * rho.powi((t - b) as i32) * (alpha + (m - 1.0) * beta);
            }
            let term = env * env;
            total += term;
            if term <= 1e-18 * total || (total == 0.0 && t > t_max + 64) {
                // remaining terms decay at least geometrically
                let ratio = rho * rho * 1.1;
                total += term * ratio / (1.0 - ratio).max(1e-12);
                break;
            }
        }
        total
    }
}

/// Smallest `T_max >= N + 2` whose certified tail is below `tol_tail` times
/// the open-loop head energy, together with that bound.
pub fn truncation_horizon(p: &PlantModel, n_param: usize, tol_tail: f64) -> Result<(usize, f64)> {
    let env = TailEnvelope::new(p)?;
    truncation_from_envelope(p, &env, n_param, tol_tail)
}

fn truncation_from_envelope(
    p: &PlantModel,
    env: &TailEnvelope,
    n_param: usize,
    tol_tail: f64,
) -> Result<(usize, f64)> {
    if !(tol_tail > 0.0) {
        return Err(Error::InvalidArgument("tolTail must be positive".into()));
    }
    if let Some(k) = env.nilpotent {
        return Ok((n_param + 2 * k.max(1), 0.0));
    }
    let window = (4 * p.s()).max(64);
    let head: f64 = markov_params(p, Block::G11, 1, window)?
        .iter()
        .map(|m| m.norm_squared())
        .sum();
    // Reference parameter scale for picking the horizon; the certificate for a
    // concrete parameter comes from `ObjectiveOracle::tail_bound`.
    let r_ref = vec![head.sqrt(); n_param];
    let target = tol_tail * head.max(f64::MIN_POSITIVE);
    let mut t_max = n_param + 2;
    loop {
        let eps = env.tail(t_max, &r_ref);
        if eps <= target {
            return Ok((t_max, eps));
        }
        // geometric decay: jump close to the crossing, then walk
        let step = ((eps / target).ln() / (-2.0 * env.rho.ln())).floor() as usize;
        t_max += step.clamp(1, 1 << 16);
        if t_max > 1 << 22 {
            return Err(Error::InvalidArgument(
                "truncation horizon exceeds 4M steps; plant is too close to instability".into(),
            ));
        }
    }
}

/// Matrix-free evaluation of the affine closed-loop map `R -> G11 - G12 R G21`
/// and its adjoint, truncated at `T_max`.
#[derive(Clone, Debug)]
pub struct ObjectiveOracle {
    plant: PlantModel,
    layout: ParamLayout,
    t_max: usize,
    eps_tail: f64,
    env: TailEnvelope,
    g11: Vec<DMatrix<f64>>,
    g22: Vec<DMatrix<f64>>,
}

impl ObjectiveOracle {
    /// Build the oracle with a certified truncation horizon.
    pub fn new(p: &PlantModel, n_param: usize, tol_tail: f64) -> Result<Self> {
        let env = TailEnvelope::new(p)?;
        let (t_max, eps) = truncation_from_envelope(p, &env, n_param, tol_tail)?;
        Self::build(p, n_param, t_max, eps, env)
    }

    /// Build the oracle with an explicit truncation horizon.
    pub fn with_horizon(p: &PlantModel, n_param: usize, t_max: usize) -> Result<Self> {
        let env = TailEnvelope::new(p)?;
        if t_max < n_param + 2 {
            return Err(Error::InvalidArgument(format!(
                "T_max = {t_max} must be at least N + 2 = {}",
                n_param + 2
            )));
        }
        let window = (4 * p.s()).max(64);
        let head: f64 = markov_params(p, Block::G11, 1, window)?
            .iter()
            .map(|m| m.norm_squared())
            .sum();
        let eps = env.tail(t_max, &vec![head.sqrt(); n_param]);
        Self::build(p, n_param, t_max, eps, env)
    }

    fn build(p: &PlantModel, n_param: usize, t_max: usize, eps: f64, env: TailEnvelope) -> Result<Self> {
        if n_param == 0 {
            return Err(Error::InvalidArgument("parameter horizon N must be >= 1".into()));
        }
        Ok(ObjectiveOracle {
            plant: p.clone(),
            layout: ParamLayout {
                horizon: n_param,
                rows: p.p2(),
                cols: p.q2(),
            },
            t_max,
            eps_tail: eps,
            env,
            g11: markov_params(p, Block::G11, 0, t_max)?,
            g22: markov_params(p, Block::G22, 0, t_max)?,
        })
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }
    pub fn layout(&self) -> ParamLayout {
        self.layout
    }
    pub fn n_param(&self) -> usize {
        self.layout.horizon
    }
    pub fn t_max(&self) -> usize {
        self.t_max
    }
    /// Tail bound at the reference parameter scale used to pick `T_max`.
    pub fn eps_tail(&self) -> f64 {
        self.eps_tail
    }

    /// Open-loop Markov parameters of `G11`, `t = 0..=T_max`.
    pub fn g11(&self) -> &[DMatrix<f64>] {
        &self.g11
    }

    pub fn g22(&self) -> &[DMatrix<f64>] {
        &self.g22
    }

    /// Certified bound on the closed-loop energy beyond `T_max` for `R`.
    pub fn tail_bound(&self, r: &FirTM) -> f64 {
        let mut norms = vec![0.0; self.n_param()];
        for t in r.t_min().max(1)..=r.t_max().min(self.n_param()) {
            norms[t - 1] = r.coeff(t).norm();
        }
        self.env.tail(self.t_max, &norms)
    }

    /// `W = G12 * R * G21` for `t = 0..=T_max`, `R` given in flat layout.
    pub fn convolve_flat(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        assert_eq!(x.len(), self.layout.len());
        let p = &self.plant;
        let (s, p1, p2) = (p.s(), p.p1(), p.p2());
        let per = self.layout.rows * self.layout.cols;
        let n = self.n_param();
        let coeff = |t: usize| -> DMatrix<f64> {
            DMatrix::from_row_slice(p2, p.q2(), &x[(t - 1) * per..t * per])
        };
        // U = R * G21 via the row-state  xi_{t+1} = xi_t A + R^(t) C2,
        // U^(t) = xi_t B1 + R^(t) D21.
        // W = G12 * U via the state  x_{t+1} = A x_t + B2 U^(t),
        // W^(t) = C1 x_t + D12 U^(t).
        let mut xi = DMatrix::<f64>::zeros(p2, s);
        let mut state = DMatrix::<f64>::zeros(s, p1);
        let mut out = Vec::with_capacity(self.t_max + 1);
        out.push(DMatrix::zeros(p.q1(), p1));
        let mut u = DMatrix::<f64>::zeros(p2, p1);
        for t in 1..=self.t_max {
            // state holds x_t = sum_{k<t} A^{t-1-k} B2 U^(k)
            let r_t = (t <= n).then(|| coeff(t));
            u.gemm(1.0, &xi, &p.b1, 0.0);
            if let Some(r) = &r_t {
                u.gemm(1.0, r, &p.d21, 1.0);
            }
            let mut w = &p.c1 * &state;
            w.gemm(1.0, &p.d12, &u, 1.0);
            out.push(w);
            if t < self.t_max {
                let next_state = &p.a * &state + &p.b2 * &u;
                state = next_state;
                let mut next_xi = &xi * &p.a;
                if let Some(r) = &r_t {
                    next_xi.gemm(1.0, r, &p.c2, 1.0);
                }
                xi = next_xi;
            }
        }
        out
    }

    /// Adjoint of [`ObjectiveOracle::convolve_flat`], returned in flat layout.
    pub fn convolve_adjoint_flat(&self, seq: &[DMatrix<f64>]) -> Vec<f64> {
        assert_eq!(seq.len(), self.t_max + 1, "sequence must cover t = 0..=T_max");
        let p = &self.plant;
        let (s, p1, p2) = (p.s(), p.p1(), p.p2());
        let t_max = self.t_max;
        // Y^(t) = sum_{a>=0} G12^(a)' S^(t+a) via eta_t = A' eta_{t+1} + C1' S^(t+1).
        let mut y = vec![DMatrix::<f64>::zeros(p2, p1); t_max + 2];
        let mut eta = DMatrix::<f64>::zeros(s, p1);
        let b2t = p.b2.transpose();
        let d12t = p.d12.transpose();
        let at = p.a.transpose();
        let c1t = p.c1.transpose();
        for t in (1..=t_max).rev() {
            let mut yt = &d12t * &seq[t];
            yt.gemm(1.0, &b2t, &eta, 1.0);
            y[t] = yt;
            let mut next = &at * &eta;
            next.gemm(1.0, &c1t, &seq[t], 1.0);
            eta = next;
        }
        // Z^(b) = sum_{c>=0} Y^(b+c) G21^(c)' via zeta_b = Y^(b+1) B1' + zeta_{b+1} A'.
        let b1t = p.b1.transpose();
        let d21t = p.d21.transpose();
        let c2t = p.c2.transpose();
        let n = self.n_param();
        let mut zeta = DMatrix::<f64>::zeros(p2, s);
        let mut out = vec![0.0; self.layout.len()];
        for b in (1..=t_max).rev() {
            if b <= n {
                let mut z = &y[b] * &d21t;
                z.gemm(1.0, &zeta, &c2t, 1.0);
                let base = (b - 1) * p2 * p.q2();
                for i in 0..p2 {
                    for j in 0..p.q2() {
                        out[base + i * p.q2() + j] = z[(i, j)];
                    }
                }
            }
            if b > 1 {
                let mut next = &zeta * &at;
                next.gemm(1.0, &y[b], &b1t, 1.0);
                zeta = next;
            }
        }
        out
    }

    /// Closed-loop sequence `T^(t)`, `t = 0..=T_max`.
    pub fn apply_flat(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let mut w = self.convolve_flat(x);
        for (wt, g) in w.iter_mut().zip(&self.g11) {
            *wt = g - &*wt;
        }
        w
    }

    /// Adjoint of the linear part `R -> -G12 R G21`.
    pub fn adjoint_flat(&self, seq: &[DMatrix<f64>]) -> Vec<f64> {
        let mut z = self.convolve_adjoint_flat(seq);
        z.iter_mut().for_each(|v| *v = -*v);
        z
    }

    /// Gradient of `J` at the flat parameter `x`, with `J` itself.
    pub fn gradient_flat(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let t = self.apply_flat(x);
        let j = seq_norm2(&t);
        let mut g = self.adjoint_flat(&t);
        g.iter_mut().for_each(|v| *v *= 2.0);
        (g, j)
    }

    pub fn objective_flat(&self, x: &[f64]) -> f64 {
        seq_norm2(&self.apply_flat(x))
    }

    fn check_param(&self, r: &FirTM) -> Result<Vec<f64>> {
        if r.t_min() < 1 {
            return Err(Error::InvalidArgument("parameter must be strictly proper".into()));
        }
        if r.t_max() > self.n_param() {
            return Err(Error::InvalidArgument(format!(
                "parameter horizon {} exceeds N = {}",
                r.t_max(),
                self.n_param()
            )));
        }
        self.layout.from_fir(r)
    }

    pub fn closed_loop_apply(&self, r: &FirTM) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.apply_flat(&self.check_param(r)?))
    }

    pub fn closed_loop_adjoint(&self, seq: &[DMatrix<f64>]) -> Result<FirTM> {
        if seq.len() != self.t_max + 1 {
            return Err(Error::InvalidArgument(format!(
                "sequence has {} coefficients, expected T_max + 1 = {}",
                seq.len(),
                self.t_max + 1
            )));
        }
        let shape = (self.plant.q1(), self.plant.p1());
        if seq.iter().any(|m| m.shape() != shape) {
            return Err(Error::DimensionMismatch {
                field: "seq".into(),
                detail: format!("coefficients must be {}x{}", shape.0, shape.1),
            });
        }
        Ok(self.layout.to_fir(&self.adjoint_flat(seq)))
    }

    /// `J(R) = sum_{t <= T_max} ||T^(t)||_F^2`.
    pub fn objective(&self, r: &FirTM) -> Result<f64> {
        Ok(seq_norm2(&self.closed_loop_apply(r)?))
    }

    /// Power-iteration estimate of the gradient Lipschitz constant
    /// `2 λ_max(adjoint ∘ apply_lin)`, inflated by 2%.
    pub fn lipschitz(&self, iters: usize, seed: u64) -> Result<f64> {
        if iters < 10 {
            return Err(Error::InvalidArgument("lipschitz needs at least 10 iterations".into()));
        }
        Ok(self.lipschitz_on(None, iters, seed))
    }

    /// As [`ObjectiveOracle::lipschitz`], restricted to the coordinates with
    /// `support[k] == true`.
    pub fn lipschitz_on(&self, support: Option<&[bool]>, iters: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = self.layout.len();
        let keep = |k: usize| support.is_none_or(|s| s[k]);
        let mut v: Vec<f64> = (0..len)
            .map(|k| if keep(k) { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let mut lambda = 0.0;
        for _ in 0..iters {
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let w = self.convolve_flat(&v);
            let mut hv = self.convolve_adjoint_flat(&w);
            for (k, h) in hv.iter_mut().enumerate() {
                if !keep(k) {
                    *h = 0.0;
                }
            }
            lambda = norm(&hv);
            v = hv;
        }
        2.0 * lambda * 1.02
    }
}

pub fn seq_norm2(seq: &[DMatrix<f64>]) -> f64 {
    seq.iter().map(|m| m.norm_squared()).sum()
}

pub fn seq_dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse of the power series `I + sum_{t>=1} m[t] z^{-t}` up to `horizon`.
fn series_inverse(m: &[DMatrix<f64>], horizon: usize) -> Vec<DMatrix<f64>> {
    let k = m[0].nrows();
    let mut w: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    w.push(DMatrix::identity(k, k));
    for t in 1..=horizon {
        let mut acc = DMatrix::zeros(k, k);
        for s in 1..=t {
            acc.gemm(-1.0, &m[s], &w[t - s], 1.0);
        }
        w.push(acc);
    }
    w
}

/// `F * (I + sign * G22 F)^{-1}` truncated to `t = 1..=horizon`, for strictly
/// proper `F`.
fn feedback_series(
    g22: &[DMatrix<f64>],
    f: &FirTM,
    horizon: usize,
    sign: f64,
) -> Vec<DMatrix<f64>> {
    let (rows, cols) = (f.rows(), f.cols());
    let zero = DMatrix::zeros(rows, cols);
    let fc = |t: usize| f.get(t).unwrap_or(&zero);
    let q2 = g22[0].nrows();
    let mut m = Vec::with_capacity(horizon + 1);
    m.push(DMatrix::identity(q2, q2));
    for t in 1..=horizon {
        let mut acc = DMatrix::zeros(q2, q2);
        for a in 1..t {
            acc.gemm(sign, &g22[a], fc(t - a), 1.0);
        }
        m.push(acc);
    }
    let w = series_inverse(&m, horizon);
    (1..=horizon)
        .map(|t| {
            let mut acc = DMatrix::zeros(rows, q2);
            for a in 1..=t {
                acc.gemm(1.0, fc(a), &w[t - a], 1.0);
            }
            acc
        })
        .collect()
}

/// Controller `K = R (I + G22 R)^{-1}` as Markov coefficients `t = 1..=horizon`.
pub fn recover_controller(p: &PlantModel, r: &FirTM, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    p.require_stable()?;
    if r.t_min() < 1 && r.coeffs()[0].iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidArgument("parameter must be strictly proper".into()));
    }
    let g22 = markov_params(p, Block::G22, 0, horizon.max(1))?;
    Ok(feedback_series(&g22, r, horizon, 1.0))
}

/// Mirror of [`recover_controller`]: `R = K (I - G22 K)^{-1}`.
pub fn param_from_controller(
    p: &PlantModel,
    k: &[DMatrix<f64>],
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let kf = FirTM::new(1, k.to_vec())?;
    let g22 = markov_params(p, Block::G22, 0, horizon.max(1))?;
    Ok(feedback_series(&g22, &kf, horizon, -1.0))
}

/// Whether `K^(t)` (starting at `t = 1`) respects `supp(Γ^{t-1})` blockwise.
pub fn implementability_check(
    k_seq: &[DMatrix<f64>],
    g: &Graph,
    part: &Partition,
    tol_zero: f64,
) -> bool {
    let mut pow = BoolMatrix::identity(g.n());
    for k in k_seq {
        let allowed = pow.inflate(&part.u_sizes, &part.y_sizes);
        if k.shape() != (allowed.rows(), allowed.cols()) {
            return false;
        }
        for r in 0..k.nrows() {
            for c in 0..k.ncols() {
                if !allowed.get(r, c) && k[(r, c)].abs() > tol_zero {
                    return false;
                }
            }
        }
        if !pow.all() {
            pow = pow.mul(g.adj());
        }
    }
    true
}
