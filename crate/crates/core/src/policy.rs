//! Two-layer feedforward policy over group actions, with a hand-written
//! backward pass for the log-probability of a chosen action.
//!
//! ```text
//! s_c    = M · c_avg                      (d)
//! x      = [s_k ‖ s_c]                    (5d)
//! z      = W2 · relu(W1 · x)              (4d)
//! d_t    = softmax(A · z)                 (|groups|)
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{read_file, write_file};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        out
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!((u.len(), v.len()), (self.rows, self.cols));
        for (r, &ur) in u.iter().enumerate() {
            let k = scale * ur;
            if k == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &vc) in row.iter_mut().zip(v) {
                *w += k * vc;
            }
        }
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, scale: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Self { rows, cols, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub d: usize,
    pub seed: u64,
    /// 4d × 5d
    pub w1: Matrix,
    /// 4d × 4d
    pub w2: Matrix,
    /// d × d
    pub m: Matrix,
}

/// Glorot-uniform initialization, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn init_params(d: usize, seed: u64) -> Result<PolicyParams> {
    if d < 2 {
        return Err(Error::Config(format!("policy dimension must be at least 2, got {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = Matrix::uniform(4 * d, 5 * d, &mut rng);
    let w2 = Matrix::uniform(4 * d, 4 * d, &mut rng);
    let m = Matrix::uniform(d, d, &mut rng);
    Ok(PolicyParams { d, seed, w1, w2, m })
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Vec<f64>,
    pub h1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z: Vec<f64>,
    pub actions: Matrix,
    pub probs: Vec<f64>,
    pub c_avg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
    pub m: Matrix,
}

impl Gradients {
    pub fn zeros(d: usize) -> Self {
        Self {
            w1: Matrix::zeros(4 * d, 5 * d),
            w2: Matrix::zeros(4 * d, 4 * d),
            m: Matrix::zeros(d, d),
        }
    }

    pub fn add_scaled(&mut self, scale: f64, other: &Gradients) {
        self.w1.add_scaled(scale, &other.w1);
        self.w2.add_scaled(scale, &other.w2);
        self.m.add_scaled(scale, &other.m);
    }

    pub fn scale(&mut self, k: f64) {
        for v in [&mut self.w1, &mut self.w2, &mut self.m] {
            v.as_mut_slice().iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.w2, &self.m]
            .iter()
            .all(|m| m.as_slice().iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        [&self.w1, &self.w2, &self.m]
            .iter()
            .flat_map(|m| m.as_slice())
            .fold(0.0, |a, &x| a.max(x.abs()))
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl PolicyParams {
    pub fn forward(&self, s_k: &[f64], c_avg: &[f64], actions: Matrix) -> Result<ForwardCache> {
        let d = self.d;
        if s_k.len() != 4 * d || c_avg.len() != d {
            return Err(Error::Shape(format!(
                "state lengths ({}, {}) for d = {d}",
                s_k.len(),
                c_avg.len()
            )));
        }
        if actions.cols() != 4 * d || actions.rows() == 0 {
            return Err(Error::Shape(format!(
                "action matrix {}x{} for d = {d}",
                actions.rows(),
                actions.cols()
            )));
        }
        let s_c = self.m.matvec(c_avg);
        let mut x = Vec::with_capacity(5 * d);
        x.extend_from_slice(s_k);
        x.extend_from_slice(&s_c);
        let h1 = self.w1.matvec(&x);
        let a1: Vec<f64> = h1.iter().map(|&h| h.max(0.0)).collect();
        let z = self.w2.matvec(&a1);
        let probs = softmax(&actions.matvec(&z));
        Ok(ForwardCache {
            x,
            h1,
            a1,
            z,
            actions,
            probs,
            c_avg: c_avg.to_vec(),
        })
    }

    /// Gradient of `log probs[action]` with respect to W1, W2 and M.
    pub fn logprob_backward(&self, cache: &ForwardCache, action: usize) -> Result<Gradients> {
        let d = self.d;
        if cache.x.len() != 5 * d || cache.z.len() != 4 * d || cache.c_avg.len() != d {
            return Err(Error::Shape("forward cache does not match these parameters".into()));
        }
        if action >= cache.probs.len() {
            return Err(Error::Shape(format!(
                "action {action} outside {} actions",
                cache.probs.len()
            )));
        }
        let mut g_logits: Vec<f64> = cache.probs.iter().map(|p| -p).collect();
        g_logits[action] += 1.0;
        let g_z = cache.actions.matvec_t(&g_logits);

        let mut grads = Gradients::zeros(d);
        grads.w2.add_outer(1.0, &g_z, &cache.a1);
        let mut g_h1 = self.w2.matvec_t(&g_z);
        for (g, &h) in g_h1.iter_mut().zip(&cache.h1) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        grads.w1.add_outer(1.0, &g_h1, &cache.x);
        let g_x = self.w1.matvec_t(&g_h1);
        grads.m.add_outer(1.0, &g_x[4 * d..], &cache.c_avg);
        Ok(grads)
    }

    /// `params += lr · grad`
    pub fn ascend(&mut self, lr: f64, grad: &Gradients) {
        self.w1.add_scaled(lr, &grad.w1);
        self.w2.add_scaled(lr, &grad.w2);
        self.m.add_scaled(lr, &grad.m);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            d: self.d,
            seed: self.seed,
            w1: self.w1.to_rows(),
            w2: self.w2.to_rows(),
            m: self.m.to_rows(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        let d = ck.d;
        let w1 = Matrix::from_rows(&ck.w1)?;
        let w2 = Matrix::from_rows(&ck.w2)?;
        let m = Matrix::from_rows(&ck.m)?;
        if w1.shape() != (4 * d, 5 * d) || w2.shape() != (4 * d, 4 * d) || m.shape() != (d, d) {
            return Err(Error::Shape(format!("checkpoint matrices do not match d = {d}")));
        }
        let params = Self {
            d,
            seed: ck.seed,
            w1,
            w2,
            m,
        };
        if ![&params.w1, &params.w2, &params.m]
            .iter()
            .all(|m| m.as_slice().iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite("checkpoint weight".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string(&self.to_checkpoint())?;
        json.push('\n');
        write_file(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&read_file(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

/// On-disk checkpoint, matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    pub seed: u64,
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    #[serde(rename = "W2")]
    pub w2: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
}

/// Inverse-CDF sample from a single uniform draw in [0, 1).
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    sample_index(probs, rng.random::<f64>())
}

/// Argmax, ties to the smallest index.
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
