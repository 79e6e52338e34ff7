//! Toy diffusion transformer used as a learned vector field: residual
//! multi-head attention and feed-forward blocks over a folded input, with
//! hand-written reverse-mode gradients and a plain gradient-descent trainer.

use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::flow::{draw_flow_batch, FlowContext, FlowDraw};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, GaussianStream};
use crate::scalar::Scalar;

const INIT_STREAM: u64 = 0x6469_7469_6e69;
const EVAL_BATCH: u64 = 0xe7a1;
const TRAIN_BATCH: u64 = 0x7ea1;
const MAX_BACKTRACK: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DitShape {
    /// Sequence length `L`.
    pub seq_len: usize,
    /// Embedding width `d`.
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Per-head projection width `m`.
    pub head_dim: usize,
    /// Feed-forward hidden width `r`.
    pub hidden: usize,
    pub n_output: usize,
    pub n_input: usize,
}

impl DitShape {
    /// Smallest `L` with `L·d ≥ N_y + N_x + 1`.
    pub fn fitted(n_output: usize, n_input: usize, width: usize, blocks: usize, heads: usize, head_dim: usize, hidden: usize) -> Self {
        let need = n_output + n_input + 1;
        Self {
            seq_len: need.div_ceil(width.max(1)),
            width,
            blocks,
            heads,
            head_dim,
            hidden,
            n_output,
            n_input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("L", self.seq_len),
            ("d", self.width),
            ("K", self.blocks),
            ("h", self.heads),
            ("m", self.head_dim),
            ("r", self.hidden),
            ("N_y", self.n_output),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("DiT dimension {name} must be >= 1")));
            }
        }
        if self.seq_len * self.width < self.n_output + self.n_input + 1 {
            return Err(Error::InvalidConfig(format!(
                "L*d = {} cannot hold N_y + N_x + 1 = {}",
                self.seq_len * self.width,
                self.n_output + self.n_input + 1
            )));
        }
        Ok(())
    }
}

/// One attention head; all four maps are `d × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead<T> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
    pub output: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DitBlock<T> {
    pub heads: Vec<AttentionHead<T>>,
    /// `d × r`.
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// `d × r`.
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DitParams<T> {
    pub shape: DitShape,
    pub blocks: Vec<DitBlock<T>>,
    /// Positional encoding, `L × d`.
    pub pos: Matrix<T>,
}

impl<T: Scalar> DitParams<T> {
    pub fn zeros(shape: DitShape) -> Result<Self> {
        Self::filled(shape, || T::zero())
    }

    /// Every entry `scale · N(0, 1)`.
    pub fn random(shape: DitShape, scale: T, seed: u64) -> Result<Self> {
        let mut g = GaussianStream::new(seed, INIT_STREAM);
        Self::filled(shape, || scale * g.next_value::<T>())
    }

    fn filled(shape: DitShape, mut f: impl FnMut() -> T) -> Result<Self> {
        shape.validate()?;
        let (d, m, r) = (shape.width, shape.head_dim, shape.hidden);
        let mut mat = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| f());
        let mut blocks = Vec::with_capacity(shape.blocks);
        for _ in 0..shape.blocks {
            let heads = (0..shape.heads)
                .map(|_| AttentionHead {
                    query: mat(d, m),
                    key: mat(d, m),
                    value: mat(d, m),
                    output: mat(d, m),
                })
                .collect();
            let w1 = mat(d, r);
            let b1 = mat(1, r).into_vec();
            let w2 = mat(d, r);
            let b2 = mat(1, d).into_vec();
            blocks.push(DitBlock { heads, w1, b1, w2, b2 });
        }
        let pos = mat(shape.seq_len, d);
        Ok(Self { shape, blocks, pos })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape).expect("shape already validated")
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            for (i, h) in b.heads.iter().enumerate() {
                out.push((format!("block{k}.head{i}.query"), h.query.as_slice()));
                out.push((format!("block{k}.head{i}.key"), h.key.as_slice()));
                out.push((format!("block{k}.head{i}.value"), h.value.as_slice()));
                out.push((format!("block{k}.head{i}.output"), h.output.as_slice()));
            }
            out.push((format!("block{k}.ff.w1"), b.w1.as_slice()));
            out.push((format!("block{k}.ff.b1"), &b.b1[..]));
            out.push((format!("block{k}.ff.w2"), b.w2.as_slice()));
            out.push((format!("block{k}.ff.b2"), &b.b2[..]));
        }
        out.push(("pos".into(), self.pos.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            for h in &mut b.heads {
                out.push(h.query.as_mut_slice());
                out.push(h.key.as_mut_slice());
                out.push(h.value.as_mut_slice());
                out.push(h.output.as_mut_slice());
            }
            out.push(b.w1.as_mut_slice());
            out.push(&mut b.b1[..]);
            out.push(b.w2.as_mut_slice());
            out.push(&mut b.b2[..]);
        }
        out.push(self.pos.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        let src: Vec<Vec<T>> = other.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += s * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `[x; f_x; t]`, zero-padded to `L·d` and folded row-major (no `E`).
    pub fn fold_input(&self, x: &[T], f_x: &[T], t: T) -> Result<Matrix<T>> {
        let s = &self.shape;
        if x.len() != s.n_output {
            return Err(Error::shape(s.n_output, x.len()));
        }
        if f_x.len() != s.n_input {
            return Err(Error::shape(s.n_input, f_x.len()));
        }
        let mut data = Vec::with_capacity(s.seq_len * s.width);
        data.extend_from_slice(x);
        data.extend_from_slice(f_x);
        data.push(t);
        data.resize(s.seq_len * s.width, T::zero());
        Matrix::new(s.seq_len, s.width, data)
    }

    /// `F_θ(x, f_x, t)`: the first `N_y` entries of the flattened output.
    pub fn field(&self, x: &[T], f_x: &[T], t: T) -> Result<Vec<T>> {
        let mut h = self.fold_input(x, f_x, t)?.add(&self.pos);
        for b in &self.blocks {
            h = block_forward(b, &h)?;
        }
        Ok(h.as_slice()[..self.shape.n_output].to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mat = |m: &Matrix<T>| MatrixJson {
            shape: [m.rows(), m.cols()],
            values: (0..m.rows())
                .map(|i| m.row(i).iter().map(|v| v.as_f64()).collect())
                .collect(),
        };
        let vector = |v: &[T]| VectorJson {
            shape: [v.len()],
            values: v.iter().map(|x| x.as_f64()).collect(),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.shape,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockJson {
                    heads: b
                        .heads
                        .iter()
                        .map(|h| HeadJson {
                            query: mat(&h.query),
                            key: mat(&h.key),
                            value: mat(&h.value),
                            output: mat(&h.output),
                        })
                        .collect(),
                    w1: mat(&b.w1),
                    b1: vector(&b.b1),
                    w2: mat(&b.w2),
                    b2: vector(&b.b2),
                })
                .collect(),
            pos: mat(&self.pos),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        let mut p = Self::zeros(c.shape)?;
        if c.blocks.len() != p.blocks.len() {
            return Err(Error::shape(p.blocks.len(), c.blocks.len()));
        }
        let load_mat = |dst: &mut Matrix<T>, src: &MatrixJson| -> Result<()> {
            if src.shape != [dst.rows(), dst.cols()]
                || src.values.len() != dst.rows()
                || src.values.iter().any(|r| r.len() != dst.cols())
            {
                return Err(Error::shape(format!("{:?}", dst.shape()), format!("{:?}", src.shape)));
            }
            for (i, row) in src.values.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    dst[(i, j)] = T::lit(*v);
                }
            }
            Ok(())
        };
        let load_vec = |dst: &mut Vec<T>, src: &VectorJson| -> Result<()> {
            if src.shape[0] != dst.len() || src.values.len() != dst.len() {
                return Err(Error::shape(dst.len(), src.values.len()));
            }
            *dst = src.values.iter().map(|v| T::lit(*v)).collect();
            Ok(())
        };
        for (b, src) in p.blocks.iter_mut().zip(&c.blocks) {
            if src.heads.len() != b.heads.len() {
                return Err(Error::shape(b.heads.len(), src.heads.len()));
            }
            for (h, s) in b.heads.iter_mut().zip(&src.heads) {
                load_mat(&mut h.query, &s.query)?;
                load_mat(&mut h.key, &s.key)?;
                load_mat(&mut h.value, &s.value)?;
                load_mat(&mut h.output, &s.output)?;
            }
            load_mat(&mut b.w1, &src.w1)?;
            load_vec(&mut b.b1, &src.b1)?;
            load_mat(&mut b.w2, &src.w2)?;
            load_vec(&mut b.b2, &src.b2)?;
        }
        load_mat(&mut p.pos, &c.pos)?;
        if !p.is_finite() {
            return Err(Error::InvalidInput("non-finite checkpoint entry".into()));
        }
        Ok(p)
    }
}

pub const CHECKPOINT_FORMAT: &str = "dit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub shape: [usize; 2],
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorJson {
    pub shape: [usize; 1],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadJson {
    pub query: MatrixJson,
    pub key: MatrixJson,
    pub value: MatrixJson,
    pub output: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockJson {
    pub heads: Vec<HeadJson>,
    pub w1: MatrixJson,
    pub b1: VectorJson,
    pub w2: MatrixJson,
    pub b2: VectorJson,
}

/// Shape-tagged nested-array parameter dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: DitShape,
    pub blocks: Vec<BlockJson>,
    pub pos: MatrixJson,
}

fn check_block_input<T: Scalar>(block: &DitBlock<T>, x: &Matrix<T>) -> Result<()> {
    let d = block.w1.rows();
    if x.cols() != d {
        return Err(Error::shape(format!("L x {d}"), format!("{:?}", x.shape())));
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let peak = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - peak).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

struct HeadCache<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    p: Matrix<T>,
    u: Matrix<T>,
}

struct BlockCache<T> {
    input: Matrix<T>,
    heads: Vec<HeadCache<T>>,
    mid: Matrix<T>,
    pre: Matrix<T>,
}

fn attn_cached<T: Scalar>(block: &DitBlock<T>, x: &Matrix<T>) -> (Matrix<T>, Vec<HeadCache<T>>) {
    let mut out = x.clone();
    let mut caches = Vec::with_capacity(block.heads.len());
    for h in &block.heads {
        let q = x.matmul(&h.query);
        let k = x.matmul(&h.key);
        let v = x.matmul(&h.value);
        let p = softmax_rows(&q.matmul_tr(&k));
        let u = p.matmul(&v);
        out.add_scaled(T::one(), &u.matmul_tr(&h.output));
        caches.push(HeadCache { q, k, v, p, u });
    }
    (out, caches)
}

fn ff_cached<T: Scalar>(block: &DitBlock<T>, x: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let mut pre = x.matmul(&block.w1);
    for i in 0..pre.rows() {
        for (v, b) in pre.row_mut(i).iter_mut().zip(&block.b1) {
            *v += *b;
        }
    }
    let act = pre.map(|v| v.max(T::zero()));
    let mut out = act.matmul_tr(&block.w2);
    for i in 0..out.rows() {
        for (v, b) in out.row_mut(i).iter_mut().zip(&block.b2) {
            *v += *b;
        }
    }
    out.add_scaled(T::one(), x);
    (out, pre)
}

/// `Σ_i softmax(X W_Q W_Kᵀ Xᵀ) X W_V W_Oᵀ + X` (no temperature).
pub fn attn_forward<T: Scalar>(block: &DitBlock<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_block_input(block, x)?;
    Ok(attn_cached(block, x).0)
}

/// `ReLU(X W₁ + 1 b₁ᵀ) W₂ᵀ + 1 b₂ᵀ + X`.
pub fn ff_forward<T: Scalar>(block: &DitBlock<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_block_input(block, x)?;
    Ok(ff_cached(block, x).0)
}

/// `FF ∘ Attn`.
pub fn block_forward<T: Scalar>(block: &DitBlock<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_block_input(block, x)?;
    let (mid, _) = attn_cached(block, x);
    Ok(ff_cached(block, &mid).0)
}

fn column_sums<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    let mut out = vec![T::zero(); m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += *v;
        }
    }
    out
}

fn block_backward<T: Scalar>(
    block: &DitBlock<T>,
    cache: &BlockCache<T>,
    d_out: &Matrix<T>,
    grad: &mut DitBlock<T>,
) -> Matrix<T> {
    // feed-forward
    let act = cache.pre.map(|v| v.max(T::zero()));
    grad.w2.add_scaled(T::one(), &d_out.tr_matmul(&act));
    for (g, v) in grad.b2.iter_mut().zip(column_sums(d_out)) {
        *g += v;
    }
    let d_act = d_out.matmul(&block.w2);
    let d_pre = d_act.zip_map(&cache.pre, |g, p| if p > T::zero() { g } else { T::zero() });
    grad.w1.add_scaled(T::one(), &cache.mid.tr_matmul(&d_pre));
    for (g, v) in grad.b1.iter_mut().zip(column_sums(&d_pre)) {
        *g += v;
    }
    let mut d_mid = d_out.clone();
    d_mid.add_scaled(T::one(), &d_pre.matmul_tr(&block.w1));

    // attention
    let x = &cache.input;
    let mut d_x = d_mid.clone();
    for ((h, c), gh) in block.heads.iter().zip(&cache.heads).zip(grad.heads.iter_mut()) {
        gh.output.add_scaled(T::one(), &d_mid.tr_matmul(&c.u));
        let d_u = d_mid.matmul(&h.output);
        let d_p = d_u.matmul_tr(&c.v);
        let d_v = c.p.tr_matmul(&d_u);
        let mut d_a = d_p.clone();
        for i in 0..d_a.rows() {
            let pr = c.p.row(i);
            let inner: T = d_p.row(i).iter().zip(pr).map(|(a, b)| *a * *b).sum();
            for (da, p) in d_a.row_mut(i).iter_mut().zip(pr) {
                *da = *p * (*da - inner);
            }
        }
        let d_q = d_a.matmul(&c.k);
        let d_k = d_a.tr_matmul(&c.q);
        gh.query.add_scaled(T::one(), &x.tr_matmul(&d_q));
        gh.key.add_scaled(T::one(), &x.tr_matmul(&d_k));
        gh.value.add_scaled(T::one(), &x.tr_matmul(&d_v));
        d_x.add_scaled(T::one(), &d_q.matmul_tr(&h.query));
        d_x.add_scaled(T::one(), &d_k.matmul_tr(&h.key));
        d_x.add_scaled(T::one(), &d_v.matmul_tr(&h.value));
    }
    d_x
}

/// Mean of `‖F_θ(ψ, f_x, t) − target‖²` over the draws and its gradient.
pub fn flow_loss_and_grad<T: Scalar>(
    params: &DitParams<T>,
    dataset: &Dataset<T>,
    draws: &[FlowDraw<T>],
) -> Result<(T, DitParams<T>)> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let scale = T::one() / T::from_count(draws.len());
    let two = T::lit(2.0);
    let ny = params.shape.n_output;
    let mut grad = params.zeros_like();
    let mut loss = T::zero();
    for d in draws {
        let f_x = &dataset.samples[d.sample].f_x;
        let mut h = params.fold_input(&d.psi, f_x, d.t)?.add(&params.pos);
        let mut caches = Vec::with_capacity(params.blocks.len());
        for b in &params.blocks {
            check_block_input(b, &h)?;
            let (mid, heads) = attn_cached(b, &h);
            let (out, pre) = ff_cached(b, &mid);
            caches.push(BlockCache {
                input: h,
                heads,
                mid,
                pre,
            });
            h = out;
        }
        let mut d_h = Matrix::zeros(h.rows(), h.cols());
        for i in 0..ny {
            let r = h.as_slice()[i] - d.target[i];
            loss += scale * r * r;
            d_h.as_mut_slice()[i] = two * scale * r;
        }
        for k in (0..params.blocks.len()).rev() {
            d_h = block_backward(&params.blocks[k], &caches[k], &d_h, &mut grad.blocks[k]);
        }
        grad.pos.add_scaled(T::one(), &d_h);
    }
    Ok((loss, grad))
}

pub fn flow_loss<T: Scalar>(params: &DitParams<T>, dataset: &Dataset<T>, draws: &[FlowDraw<T>]) -> Result<T> {
    let mut total = T::zero();
    for d in draws {
        let out = params.field(&d.psi, &dataset.samples[d.sample].f_x, d.t)?;
        total += out.iter().zip(&d.target).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>();
    }
    Ok(total / T::from_count(draws.len().max(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T> {
    pub steps: usize,
    pub lr: T,
    pub mc_batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: DitParams<T>,
    /// Loss on the fixed evaluation batch, initial value first.
    pub history: Vec<T>,
    /// Steps where no backtracked step size lowered the batch loss.
    pub rejected_steps: usize,
}

/// Gradient descent on the Monte Carlo flow-matching loss. Each step draws a
/// fresh batch from a step-derived seed and halves the step size until the
/// batch loss does not increase.
pub fn train_dit<T: Scalar>(
    init: &DitParams<T>,
    ctx: &FlowContext<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    if !(cfg.lr.is_finite() && cfg.lr >= T::zero()) {
        return Err(Error::InvalidConfig(format!("lr = {} must be >= 0", cfg.lr)));
    }
    if init.shape.n_output != ctx.n_output() || init.shape.n_input != dataset.index_sets.n_input() {
        return Err(Error::shape(
            format!("N_y = {}, N_x = {}", ctx.n_output(), dataset.index_sets.n_input()),
            format!("N_y = {}, N_x = {}", init.shape.n_output, init.shape.n_input),
        ));
    }
    let eval = draw_flow_batch(ctx, dataset, cfg.mc_batch, derive_seed(cfg.seed, &[EVAL_BATCH]))?;
    let mut params = init.clone();
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let first = flow_loss(&params, dataset, &eval)?;
    if !first.is_finite() {
        return Err(Error::Divergence {
            at: "step 0".into(),
            detail: format!("loss = {first}"),
        });
    }
    history.push(first);
    let mut rejected = 0;
    for step in 1..=cfg.steps {
        if cfg.lr > T::zero() {
            let batch = draw_flow_batch(
                ctx,
                dataset,
                cfg.mc_batch,
                derive_seed(cfg.seed, &[TRAIN_BATCH, step as u64]),
            )?;
            let (base, grad) = flow_loss_and_grad(&params, dataset, &batch)?;
            let mut lr = cfg.lr;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACK {
                let mut trial = params.clone();
                trial.add_scaled(-lr, &grad);
                let l = flow_loss(&trial, dataset, &batch)?;
                if l.is_finite() && l <= base {
                    params = trial;
                    accepted = true;
                    break;
                }
                lr /= T::lit(2.0);
            }
            if !accepted {
                rejected += 1;
            }
        }
        let l = flow_loss(&params, dataset, &eval)?;
        if !l.is_finite() {
            return Err(Error::Divergence {
                at: format!("step {step}"),
                detail: format!("loss = {l}"),
            });
        }
        history.push(l);
    }
    Ok(TrainOutcome {
        params,
        history,
        rejected_steps: rejected,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

/// `step,loss`.
pub fn write_history_csv<T: Scalar, W: std::io::Write>(history: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (step, l) in history.iter().enumerate() {
        w.serialize(StepLoss { step, loss: l.as_f64() })?;
    }
    w.flush()?;
    Ok(())
}

/// Per-tensor relative error `‖g − g_fd‖ / max(‖g_fd‖, 1e-12)` of the
/// analytic gradient against central differences with step `delta`.
pub fn gradient_check<T: Scalar>(
    params: &DitParams<T>,
    dataset: &Dataset<T>,
    draws: &[FlowDraw<T>],
    delta: T,
) -> Result<Vec<(String, f64)>> {
    let (_, grad) = flow_loss_and_grad(params, dataset, draws)?;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<T>> = grad.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let mut out = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let len = analytic[ti].len();
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for j in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][j] += delta;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][j] -= delta;
            let fd = ((flow_loss(&plus, dataset, draws)? - flow_loss(&minus, dataset, draws)?)
                / (delta + delta))
                .as_f64();
            num += (analytic[ti][j].as_f64() - fd).powi(2);
            den += fd * fd;
        }
        out.push((name, num.sqrt() / den.sqrt().max(1e-12)));
    }
    Ok(out)
}
