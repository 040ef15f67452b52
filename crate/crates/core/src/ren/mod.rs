//! Rationale-enhanced network, desk-scale.
//!
//! Row convention: hidden states are `(sequence, d)` matrices and projections
//! multiply on the right.
//!
//! ```text
//! S   = (Hx Wq)(Hr Wk)^T / sqrt(d)      n x m
//! A   = softmax_rows(S)
//! Att = A (Hr Wv)                        n x d
//! F   = lambda * Att + Hx
//! y   = softmax(F[0] Wo)                 pooled at the [CLS] row
//! L   = -sum_i log y_i[gold_i]
//! ```
//!
//! Gradients are derived by hand and checked against central differences.

mod encoder;
mod export;
mod matrix;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use encoder::{HashedTextEncoder, TextEncoder};
pub use export::{read_fixture, write_fixture, ExportError, RenFixture};
pub use matrix::Matrix;

use crate::par;

pub const NUM_CLASSES: usize = 3;
pub const INIT_HALF_WIDTH: f64 = 0.1;
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_FD_STEP: f64 = 5e-3;
pub const MAX_FD_STEP: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("{probs} probability rows but {golds} gold labels")]
    LengthMismatch { probs: usize, golds: usize },
    #[error("gold index {gold} out of range for {classes} classes")]
    BadGold { gold: usize, classes: usize },
    #[error("finite-difference step {0} not in (0, 1e-2]")]
    BadEpsilon(f64),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("hidden states need at least one row")]
    EmptySequence,
}

/// Token-level hidden states, `(sequence length, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates(Matrix);

impl HiddenStates {
    pub fn new(m: Matrix) -> Result<Self, RenError> {
        if m.rows() == 0 {
            return Err(RenError::EmptySequence);
        }
        if !m.is_finite() {
            return Err(RenError::NonFinite("hidden states"));
        }
        Ok(HiddenStates(m))
    }

    /// Concatenates several rationales along the sequence axis.
    pub fn concat(parts: &[HiddenStates]) -> Result<Self, RenError> {
        let mats: Vec<Matrix> = parts.iter().map(|h| h.0.clone()).collect();
        let m = Matrix::vstack(&mats).ok_or_else(|| RenError::Shape("rationales differ in width or none given".into()))?;
        HiddenStates::new(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub lambda: f64,
}

impl RenParams {
    /// Seeded uniform init in [-0.1, 0.1], lambda = 1.
    pub fn init(d: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RenParams {
            w_q: Matrix::uniform(d, d, INIT_HALF_WIDTH, &mut rng),
            w_k: Matrix::uniform(d, d, INIT_HALF_WIDTH, &mut rng),
            w_v: Matrix::uniform(d, d, INIT_HALF_WIDTH, &mut rng),
            w_o: Matrix::uniform(d, classes, INIT_HALF_WIDTH, &mut rng),
            lambda: 1.0,
        }
    }

    pub fn d(&self) -> usize {
        self.w_q.rows()
    }

    pub fn classes(&self) -> usize {
        self.w_o.cols()
    }

    pub fn validate(&self) -> Result<(), RenError> {
        let d = self.d();
        for (name, m) in [("W_q", &self.w_q), ("W_k", &self.w_k), ("W_v", &self.w_v)] {
            if m.shape() != (d, d) {
                return Err(RenError::Shape(format!("{name} is {:?}, expected ({d}, {d})", m.shape())));
            }
        }
        if self.w_o.rows() != d || self.w_o.cols() == 0 {
            return Err(RenError::Shape(format!("W_o is {:?}, expected ({d}, C)", self.w_o.shape())));
        }
        if ![&self.w_q, &self.w_k, &self.w_v, &self.w_o].iter().all(|m| m.is_finite()) || !self.lambda.is_finite() {
            return Err(RenError::NonFinite("parameters"));
        }
        Ok(())
    }

    /// Total scalar parameter count including lambda.
    pub fn len(&self) -> usize {
        self.w_q.as_slice().len() + self.w_k.as_slice().len() + self.w_v.as_slice().len() + self.w_o.as_slice().len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn get_flat(&self, mut i: usize) -> f64 {
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            if i < m.as_slice().len() {
                return m.as_slice()[i];
            }
            i -= m.as_slice().len();
        }
        self.lambda
    }

    fn set_flat(&mut self, mut i: usize, v: f64) {
        for m in [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o] {
            let n = m.as_slice().len();
            if i < n {
                m.as_mut_slice()[i] = v;
                return;
            }
            i -= n;
        }
        self.lambda = v;
    }
}

fn check_inputs(hx: &HiddenStates, hr: &HiddenStates, p: &RenParams) -> Result<(), RenError> {
    p.validate()?;
    if hx.dim() != p.d() || hr.dim() != p.d() {
        return Err(RenError::Shape(format!("hidden width {}/{} vs d={}", hx.dim(), hr.dim(), p.d())));
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn softmax_rows(s: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        for (c, v) in softmax(s.row(r)).into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    out
}

/// Intermediate values kept for the backward pass.
struct Forward {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
    att: Matrix,
    pooled: Vec<f64>,
    probs: Vec<f64>,
}

fn forward(hx: &Matrix, hr: &Matrix, p: &RenParams) -> Forward {
    let scale = 1.0 / (p.d() as f64).sqrt();
    let q = hx.matmul(&p.w_q);
    let k = hr.matmul(&p.w_k);
    let v = hr.matmul(&p.w_v);
    let attn = softmax_rows(&q.matmul(&k.transpose()).scale(scale));
    let att = attn.matmul(&v);
    let pooled: Vec<f64> = (0..p.d()).map(|j| p.lambda * att[(0, j)] + hx[(0, j)]).collect();
    let logits: Vec<f64> = (0..p.classes())
        .map(|c| pooled.iter().enumerate().map(|(j, x)| x * p.w_o[(j, c)]).sum())
        .collect();
    let probs = softmax(&logits);
    Forward { q, k, v, attn, att, pooled, probs }
}

/// Rationale-guided attention: `softmax((Hx Wq)(Hr Wk)^T / sqrt(d)) (Hr Wv)`.
pub fn rga_attention(hx: &HiddenStates, hr: &HiddenStates, p: &RenParams) -> Result<Matrix, RenError> {
    check_inputs(hx, hr, p)?;
    Ok(forward(hx.matrix(), hr.matrix(), p).att)
}

/// The row-stochastic attention weights, exposed for invariant checks.
pub fn attention_weights(hx: &HiddenStates, hr: &HiddenStates, p: &RenParams) -> Result<Matrix, RenError> {
    check_inputs(hx, hr, p)?;
    Ok(forward(hx.matrix(), hr.matrix(), p).attn)
}

/// Class distribution for one instance.
pub fn ren_forward(hx: &HiddenStates, hr: &HiddenStates, p: &RenParams) -> Result<Vec<f64>, RenError> {
    check_inputs(hx, hr, p)?;
    Ok(forward(hx.matrix(), hr.matrix(), p).probs)
}

/// Summed cross-entropy against one-hot golds. Probabilities at or below zero
/// are floored at 1e-12 with a warning.
pub fn ce_loss(probs: &[Vec<f64>], golds: &[usize]) -> Result<f64, RenError> {
    if probs.len() != golds.len() {
        return Err(RenError::LengthMismatch { probs: probs.len(), golds: golds.len() });
    }
    let mut loss = 0.0;
    for (row, &g) in probs.iter().zip(golds) {
        let p = *row.get(g).ok_or(RenError::BadGold { gold: g, classes: row.len() })?;
        if !p.is_finite() {
            return Err(RenError::NonFinite("probabilities"));
        }
        if p <= PROB_FLOOR {
            log::warn!("probability {p} at gold class {g} clamped to {PROB_FLOOR}");
        }
        loss -= p.max(PROB_FLOOR).ln();
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenGrads {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub lambda: f64,
}

impl RenGrads {
    fn get_flat(&self, mut i: usize) -> f64 {
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            if i < m.as_slice().len() {
                return m.as_slice()[i];
            }
            i -= m.as_slice().len();
        }
        self.lambda
    }
}

/// Loss `-log y[gold]` and its analytic gradient.
pub fn loss_and_grad(hx: &HiddenStates, hr: &HiddenStates, p: &RenParams, gold: usize) -> Result<(f64, RenGrads), RenError> {
    check_inputs(hx, hr, p)?;
    let (d, c) = (p.d(), p.classes());
    if gold >= c {
        return Err(RenError::BadGold { gold, classes: c });
    }
    let (hxm, hrm) = (hx.matrix(), hr.matrix());
    let f = forward(hxm, hrm, p);
    let loss = ce_loss(std::slice::from_ref(&f.probs), &[gold])?;

    // Softmax + cross-entropy: dL/dlogits = y - onehot.
    let mut dz = f.probs.clone();
    dz[gold] -= 1.0;
    let w_o = Matrix::from_fn(d, c, |j, k| f.pooled[j] * dz[k]);
    let dpooled: Vec<f64> = (0..d).map(|j| (0..c).map(|k| p.w_o[(j, k)] * dz[k]).sum()).collect();

    let lambda = (0..d).map(|j| dpooled[j] * f.att[(0, j)]).sum();

    // Only the pooled row of F feeds the classifier.
    let n = hxm.rows();
    let mut datt = Matrix::zeros(n, d);
    for j in 0..d {
        datt[(0, j)] = p.lambda * dpooled[j];
    }
    let dv = f.attn.transpose().matmul(&datt);
    let dattn = datt.matmul(&f.v.transpose());
    let scale = 1.0 / (d as f64).sqrt();
    let mut ds = Matrix::zeros(n, hrm.rows());
    for i in 0..n {
        let dot: f64 = (0..hrm.rows()).map(|k| f.attn[(i, k)] * dattn[(i, k)]).sum();
        for k in 0..hrm.rows() {
            ds[(i, k)] = f.attn[(i, k)] * (dattn[(i, k)] - dot) * scale;
        }
    }
    let dq = ds.matmul(&f.k);
    let dk = ds.transpose().matmul(&f.q);

    let grads = RenGrads {
        w_q: hxm.transpose().matmul(&dq),
        w_k: hrm.transpose().matmul(&dk),
        w_v: hrm.transpose().matmul(&dv),
        w_o,
        lambda,
    };
    Ok((loss, grads))
}

/// Largest relative disagreement between the analytic gradient and a
/// five-point central difference with step `eps` over every parameter entry:
/// `|g - g_fd| / max(1e-8, |g| + |g_fd|)`.
pub fn grad_check(p: &RenParams, hx: &HiddenStates, hr: &HiddenStates, gold: usize, eps: f64) -> Result<f64, RenError> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(RenError::BadEpsilon(eps));
    }
    let (_, analytic) = loss_and_grad(hx, hr, p, gold)?;
    let loss_at = |q: &RenParams| -> Result<f64, RenError> {
        let f = forward(hx.matrix(), hr.matrix(), q);
        ce_loss(&[f.probs], &[gold])
    };
    let mut worst: f64 = 0.0;
    let mut probe = p.clone();
    for i in 0..p.len() {
        let orig = p.get_flat(i);
        let mut at = |h: f64| -> Result<f64, RenError> {
            probe.set_flat(i, orig + h);
            loss_at(&probe)
        };
        let fd = (at(-2.0 * eps)? - 8.0 * at(-eps)? + 8.0 * at(eps)? - at(2.0 * eps)?) / (12.0 * eps);
        probe.set_flat(i, orig);
        let g = analytic.get_flat(i);
        if !fd.is_finite() || !g.is_finite() {
            return Err(RenError::NonFiniteGradient);
        }
        worst = worst.max((g - fd).abs() / (g.abs() + fd.abs()).max(1e-8));
    }
    Ok(worst)
}

/// One test item: text, target and zero or more rationale strings.
#[derive(Debug, Clone)]
pub struct RenInput {
    pub text: String,
    pub target: String,
    pub rationales: Vec<String>,
}

/// Encodes and classifies a batch. Rationales are concatenated along the
/// sequence axis; an item without rationales gets an empty one.
pub fn predict_batch<E: TextEncoder + Sync>(encoder: &E, p: &RenParams, items: &[RenInput]) -> Result<Vec<Vec<f64>>, RenError> {
    par::map(items, |item| {
        let hx = encoder.encode(&item.text, &item.target)?;
        let parts = if item.rationales.is_empty() {
            vec![encoder.encode_rationale("")?]
        } else {
            item.rationales.iter().map(|r| encoder.encode_rationale(r)).collect::<Result<Vec<_>, _>>()?
        };
        ren_forward(&hx, &HiddenStates::concat(&parts)?, p)
    })
    .into_iter()
    .collect()
}

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Randomized shapes and inputs for one check configuration.
pub fn random_case(rng: &mut ChaCha8Rng) -> (RenParams, HiddenStates, HiddenStates, usize) {
    use rand::Rng;
    let d = [2, 4, 8][rng.gen_range(0..3)];
    let p = RenParams::init(d, NUM_CLASSES, rng.gen());
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=5);
    let hx = HiddenStates(Matrix::uniform(n, d, 1.0, rng));
    let hr = HiddenStates(Matrix::uniform(m, d, 1.0, rng));
    let gold = rng.gen_range(0..NUM_CLASSES);
    (p, hx, hr, gold)
}

/// Row normalisation, lambda = 0 independence, single-key degeneracy and the
/// gradient check over `configs` random configurations.
pub fn invariant_suite(seed: u64, configs: usize) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<_> = (0..configs).map(|_| random_case(&mut rng)).collect();
    let mut out = Vec::new();

    let mut worst_row: f64 = 0.0;
    for (p, hx, hr, _) in &cases {
        if let Ok(a) = attention_weights(hx, hr, p) {
            for r in 0..a.rows() {
                worst_row = worst_row.max((a.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
        if let Ok(y) = ren_forward(hx, hr, p) {
            worst_row = worst_row.max((y.iter().sum::<f64>() - 1.0).abs());
        }
    }
    out.push(CheckResult {
        name: "softmax rows sum to one",
        passed: worst_row <= ROW_SUM_TOLERANCE,
        detail: format!("max |row sum - 1| = {worst_row:e}"),
    });

    let mut independent = true;
    for (p, hx, hr, _) in &cases {
        let mut p0 = p.clone();
        p0.lambda = 0.0;
        let other = HiddenStates(Matrix::uniform(hr.len() + 1, p.d(), 1.0, &mut rng));
        independent &= ren_forward(hx, hr, &p0).ok() == ren_forward(hx, &other, &p0).ok();
    }
    out.push(CheckResult {
        name: "lambda = 0 ignores rationales",
        passed: independent,
        detail: format!("{configs} configurations, exact comparison"),
    });

    let mut degenerate = true;
    for (p, hx, hr, _) in &cases {
        let single = HiddenStates(Matrix::from_vec(1, p.d(), hr.matrix().row(0).to_vec()).expect("row width"));
        let v = single.matrix().matmul(&p.w_v);
        match rga_attention(hx, &single, p) {
            Ok(att) => degenerate &= (0..att.rows()).all(|r| att.row(r) == v.row(0)),
            Err(_) => degenerate = false,
        }
    }
    out.push(CheckResult {
        name: "single rationale token copies its value",
        passed: degenerate,
        detail: format!("{configs} configurations, exact comparison"),
    });

    let errs: Vec<Result<f64, RenError>> = par::map(&cases, |(p, hx, hr, gold)| grad_check(p, hx, hr, *gold, DEFAULT_FD_STEP));
    let worst = errs.iter().map(|e| e.as_ref().map_or(f64::INFINITY, |x| *x)).fold(0.0, f64::max);
    out.push(CheckResult {
        name: "analytic gradient matches finite differences",
        passed: worst < GRAD_TOLERANCE,
        detail: format!("max relative error {worst:e} over {configs} configurations"),
    });
    out
}
