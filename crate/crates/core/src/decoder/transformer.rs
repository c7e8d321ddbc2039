//! A small pre-norm causal transformer with hand-written backward passes.
//!
//! Block: `x += Attn(LN(x)); x += FF(LN(x))`, GELU feed-forward, untied
//! output projection. Positional embeddings are learned and added to the
//! input rows inside [`TransformerDecoder::hidden`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prompt::Instruction;
use super::vocab::{TokenId, Vocabulary};
use super::{LanguageModel, ResponseLoss};
use crate::digest::{Digest, TensorHasher};
use crate::linalg::{exp, log_softmax, sqrt, tanh, Matrix};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { d_model: 32, n_heads: 2, n_layers: 2, d_ff: 64, max_len: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_qkv: Matrix,
    pub b_qkv: Matrix,
    pub w_attn_out: Matrix,
    pub b_attn_out: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
}

impl BlockWeights {
    fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_qkv,
            &self.b_qkv,
            &self.w_attn_out,
            &self.b_attn_out,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_attn_out,
            &mut self.b_attn_out,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }
}

/// All decoder tensors. Also used as the gradient accumulator during
/// pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderWeights {
    pub token_embeddings: Matrix,
    pub position_embeddings: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub lnf_gain: Matrix,
    pub lnf_bias: Matrix,
    pub w_vocab: Matrix,
    pub b_vocab: Matrix,
}

impl DecoderWeights {
    pub fn init<R: Rng>(vocab_size: usize, config: &TransformerConfig, rng: &mut R) -> Self {
        let d = config.d_model;
        let ones = |n: usize| Matrix::from_vec(1, n, vec![1.0; n]).expect("shape");
        let lin = |rows: usize, cols: usize, rng: &mut R| Matrix::uniform(rows, cols, 1.0 / sqrt(rows as f64), rng);
        let blocks = (0..config.n_layers)
            .map(|_| BlockWeights {
                ln1_gain: ones(d),
                ln1_bias: Matrix::zeros(1, d),
                w_qkv: lin(d, 3 * d, rng),
                b_qkv: Matrix::zeros(1, 3 * d),
                w_attn_out: lin(d, d, rng),
                b_attn_out: Matrix::zeros(1, d),
                ln2_gain: ones(d),
                ln2_bias: Matrix::zeros(1, d),
                w_ff1: lin(d, config.d_ff, rng),
                b_ff1: Matrix::zeros(1, config.d_ff),
                w_ff2: lin(config.d_ff, d, rng),
                b_ff2: Matrix::zeros(1, d),
            })
            .collect();
        Self {
            token_embeddings: Matrix::uniform(vocab_size, d, 0.5, rng),
            position_embeddings: Matrix::uniform(config.max_len, d, 0.1, rng),
            blocks,
            lnf_gain: ones(d),
            lnf_bias: Matrix::zeros(1, d),
            w_vocab: lin(d, vocab_size, rng),
            b_vocab: Matrix::zeros(1, vocab_size),
        }
    }

    /// Deterministic tensor order, shared by the optimizer and the digest.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.token_embeddings, &self.position_embeddings];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([&self.lnf_gain, &self.lnf_bias, &self.w_vocab, &self.b_vocab]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.token_embeddings, &mut self.position_embeddings];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend([&mut self.lnf_gain, &mut self.lnf_bias, &mut self.w_vocab, &mut self.b_vocab]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone)]
struct LayerNormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, LayerNormCache) {
    let (t, d) = x.shape();
    let mut xhat = Matrix::zeros(t, d);
    let mut out = Matrix::zeros(t, d);
    let mut rstd = Vec::with_capacity(t);
    let (g, b) = (gain.as_slice(), bias.as_slice());
    for i in 0..t {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / sqrt(var + LN_EPS);
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for (k, v) in row.iter().enumerate() {
            xh[k] = (v - mean) * r;
        }
        let o = out.row_mut(i);
        for k in 0..d {
            o[k] = xhat[(i, k)] * g[k] + b[k];
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Matrix,
    dy: &Matrix,
    grads: Option<(&mut Matrix, &mut Matrix)>,
) -> Matrix {
    let (t, d) = dy.shape();
    let g = gain.as_slice();
    if let Some((dg, db)) = grads {
        for i in 0..t {
            for k in 0..d {
                dg.as_mut_slice()[k] += dy[(i, k)] * cache.xhat[(i, k)];
                db.as_mut_slice()[k] += dy[(i, k)];
            }
        }
    }
    let mut dx = Matrix::zeros(t, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let mut sum = 0.0;
        let mut sum_xh = 0.0;
        for k in 0..d {
            dxhat[k] = dy[(i, k)] * g[k];
            sum += dxhat[k];
            sum_xh += dxhat[k] * cache.xhat[(i, k)];
        }
        let r = cache.rstd[i] / d as f64;
        let row = dx.row_mut(i);
        for k in 0..d {
            row[k] = r * (d as f64 * dxhat[k] - sum - cache.xhat[(i, k)] * sum_xh);
        }
    }
    dx
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = x.matmul(w).expect("linear shapes");
    y.add_row_broadcast(b.as_slice());
    y
}

fn linear_backward(x: &Matrix, w: &Matrix, dy: &Matrix, grads: Option<(&mut Matrix, &mut Matrix)>) -> Matrix {
    if let Some((dw, db)) = grads {
        crate::linalg::gemm_tn_acc(x, dy, dw);
        for (acc, v) in db.as_mut_slice().iter_mut().zip(dy.column_sums()) {
            *acc += v;
        }
    }
    dy.matmul_t(w).expect("linear shapes")
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = tanh(GELU_C * (x + 0.044715 * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone)]
struct BlockCache {
    ln1: LayerNormCache,
    a: Matrix,
    qkv: Matrix,
    /// Attention probabilities per head, `T×T` lower-triangular.
    probs: Vec<Matrix>,
    attn: Matrix,
    ln2: LayerNormCache,
    c: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
}

/// Intermediate state of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    lnf: LayerNormCache,
    /// Final normalized hidden states, `T×d`.
    pub hidden: Matrix,
}

/// The frozen decoder: vocabulary, weights and freeze digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerDecoder {
    pub vocab: Vocabulary,
    pub config: TransformerConfig,
    pub weights: DecoderWeights,
    pub frozen: bool,
    pub freeze_digest: Option<Digest>,
}

impl TransformerDecoder {
    pub fn new<R: Rng>(vocab: Vocabulary, config: TransformerConfig, rng: &mut R) -> Result<Self> {
        if config.d_model == 0 || config.n_heads == 0 || config.d_model % config.n_heads != 0 {
            return Err(Error::InvalidArgument("d_model must be a positive multiple of n_heads".into()));
        }
        let weights = DecoderWeights::init(vocab.len(), &config, rng);
        Ok(Self { vocab, config, weights, frozen: false, freeze_digest: None })
    }

    /// Content digest of vocabulary, config and every weight tensor.
    pub fn compute_digest(&self) -> Digest {
        let mut h = TensorHasher::default();
        h.label("vocab").usize(self.vocab.len());
        for t in self.vocab.tokens() {
            h.label(t);
        }
        let c = &self.config;
        h.label("config").usize(c.d_model).usize(c.n_heads).usize(c.n_layers).usize(c.d_ff).usize(c.max_len);
        for t in self.weights.tensors() {
            h.matrix(t);
        }
        h.finish()
    }

    /// Marks the decoder read-only and records its digest.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.freeze_digest = Some(self.compute_digest());
    }

    /// Runs the blocks over `input` (raw embeddings, positions added here).
    pub fn hidden(&self, input: &Matrix) -> Result<ForwardCache> {
        let (t, d) = input.shape();
        if d != self.config.d_model {
            return Err(Error::DimensionMismatch {
                context: "decoder input width",
                expected: alloc::format!("{}", self.config.d_model),
                got: alloc::format!("{d}"),
            });
        }
        if t == 0 {
            return Err(Error::Empty("decoder input"));
        }
        if t > self.config.max_len {
            return Err(Error::SequenceTooLong { len: t, max_len: self.config.max_len });
        }
        let mut x = input.clone();
        for i in 0..t {
            for (v, p) in x.row_mut(i).iter_mut().zip(self.weights.position_embeddings.row(i)) {
                *v += p;
            }
        }
        let mut blocks = Vec::with_capacity(self.weights.blocks.len());
        for bw in &self.weights.blocks {
            let (cache, out) = self.block_forward(bw, x);
            blocks.push(cache);
            x = out;
        }
        let (hidden, lnf) = layer_norm(&x, &self.weights.lnf_gain, &self.weights.lnf_bias);
        if !hidden.is_finite() {
            return Err(Error::NonFinite("decoder hidden states"));
        }
        Ok(ForwardCache { blocks, lnf, hidden })
    }

    fn block_forward(&self, bw: &BlockWeights, x_in: Matrix) -> (BlockCache, Matrix) {
        let (t, d) = x_in.shape();
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / sqrt(dh as f64);
        let (a, ln1) = layer_norm(&x_in, &bw.ln1_gain, &bw.ln1_bias);
        let qkv = linear(&a, &bw.w_qkv, &bw.b_qkv);
        let mut attn = Matrix::zeros(t, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let mut p = Matrix::zeros(t, t);
            for i in 0..t {
                let q = &qkv.row(i)[qo..qo + dh];
                let row = p.row_mut(i);
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let k = &qkv.row(j)[ko..ko + dh];
                    let s = crate::linalg::dot(q, k) * scale;
                    row[j] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for v in row.iter_mut().take(i + 1) {
                    *v = exp(*v - max);
                    sum += *v;
                }
                for v in row.iter_mut().take(i + 1) {
                    *v /= sum;
                }
            }
            for i in 0..t {
                let out = &mut attn.row_mut(i)[qo..qo + dh];
                for j in 0..=i {
                    let w = p[(i, j)];
                    let v = &qkv.row(j)[vo..vo + dh];
                    for (o, vv) in out.iter_mut().zip(v) {
                        *o += w * vv;
                    }
                }
            }
            probs.push(p);
        }
        let mut x_mid = linear(&attn, &bw.w_attn_out, &bw.b_attn_out);
        x_mid.add_assign(&x_in);
        let (c, ln2) = layer_norm(&x_mid, &bw.ln2_gain, &bw.ln2_bias);
        let ff_pre = linear(&c, &bw.w_ff1, &bw.b_ff1);
        let mut ff_act = ff_pre.clone();
        for v in ff_act.as_mut_slice() {
            *v = gelu(*v);
        }
        let mut out = linear(&ff_act, &bw.w_ff2, &bw.b_ff2);
        out.add_assign(&x_mid);
        (BlockCache { ln1, a, qkv, probs, attn, ln2, c, ff_pre, ff_act }, out)
    }

    /// Logits for the selected rows of the final hidden states.
    pub fn logits(&self, cache: &ForwardCache, rows: &[usize]) -> Matrix {
        let d = self.config.d_model;
        let mut z = Matrix::zeros(0, d);
        for &r in rows {
            z.push_row(cache.hidden.row(r));
        }
        linear(&z, &self.weights.w_vocab, &self.weights.b_vocab)
    }

    /// Back-propagates `dlogits` (for `rows`) to the input embeddings.
    /// Parameter gradients are accumulated into `grads` when given.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        rows: &[usize],
        dlogits: &Matrix,
        mut grads: Option<&mut DecoderWeights>,
    ) -> Matrix {
        let (t, d) = cache.hidden.shape();
        let mut z = Matrix::zeros(0, d);
        for &r in rows {
            z.push_row(cache.hidden.row(r));
        }
        let dz_rows = linear_backward(
            &z,
            &self.weights.w_vocab,
            dlogits,
            grads.as_deref_mut().map(|g| (&mut g.w_vocab, &mut g.b_vocab)),
        );
        let mut d_hidden = Matrix::zeros(t, d);
        for (k, &r) in rows.iter().enumerate() {
            for (acc, v) in d_hidden.row_mut(r).iter_mut().zip(dz_rows.row(k)) {
                *acc += v;
            }
        }
        let mut dx = layer_norm_backward(
            &cache.lnf,
            &self.weights.lnf_gain,
            &d_hidden,
            grads.as_deref_mut().map(|g| (&mut g.lnf_gain, &mut g.lnf_bias)),
        );
        for (l, (bw, bc)) in self.weights.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let bg = grads.as_deref_mut().map(|g| &mut g.blocks[l]);
            dx = self.block_backward(bw, bc, dx, bg);
        }
        if let Some(g) = grads {
            for i in 0..t {
                for (acc, v) in g.position_embeddings.row_mut(i).iter_mut().zip(dx.row(i)) {
                    *acc += v;
                }
            }
        }
        dx
    }

    fn block_backward(&self, bw: &BlockWeights, bc: &BlockCache, d_out: Matrix, mut bg: Option<&mut BlockWeights>) -> Matrix {
        let (t, d) = d_out.shape();
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / sqrt(dh as f64);

        // feed-forward branch
        let mut d_act = linear_backward(&bc.ff_act, &bw.w_ff2, &d_out, bg.as_deref_mut().map(|g| (&mut g.w_ff2, &mut g.b_ff2)));
        for (g, &pre) in d_act.as_mut_slice().iter_mut().zip(bc.ff_pre.as_slice()) {
            *g *= gelu_grad(pre);
        }
        let d_c = linear_backward(&bc.c, &bw.w_ff1, &d_act, bg.as_deref_mut().map(|g| (&mut g.w_ff1, &mut g.b_ff1)));
        let mut d_mid = layer_norm_backward(&bc.ln2, &bw.ln2_gain, &d_c, bg.as_deref_mut().map(|g| (&mut g.ln2_gain, &mut g.ln2_bias)));
        d_mid.add_assign(&d_out);

        // attention branch
        let d_attn = linear_backward(
            &bc.attn,
            &bw.w_attn_out,
            &d_mid,
            bg.as_deref_mut().map(|g| (&mut g.w_attn_out, &mut g.b_attn_out)),
        );
        let mut d_qkv = Matrix::zeros(t, 3 * d);
        let mut dp = vec![0.0; t];
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let p = &bc.probs[h];
            for i in 0..t {
                let d_o = &d_attn.row(i)[qo..qo + dh];
                let mut weighted = 0.0;
                for j in 0..=i {
                    let v = &bc.qkv.row(j)[vo..vo + dh];
                    dp[j] = crate::linalg::dot(d_o, v);
                    weighted += p[(i, j)] * dp[j];
                }
                for j in 0..=i {
                    let pij = p[(i, j)];
                    // dV_j += P_ij dO_i
                    {
                        let dv = &mut d_qkv.row_mut(j)[vo..vo + dh];
                        for (acc, g) in dv.iter_mut().zip(d_o) {
                            *acc += pij * g;
                        }
                    }
                    let ds = pij * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for k in 0..dh {
                        let qk = bc.qkv[(i, qo + k)];
                        let kk = bc.qkv[(j, ko + k)];
                        d_qkv[(i, qo + k)] += ds * kk;
                        d_qkv[(j, ko + k)] += ds * qk;
                    }
                }
            }
        }
        let d_a = linear_backward(&bc.a, &bw.w_qkv, &d_qkv, bg.as_deref_mut().map(|g| (&mut g.w_qkv, &mut g.b_qkv)));
        let mut d_in = layer_norm_backward(&bc.ln1, &bw.ln1_gain, &d_a, bg.map(|g| (&mut g.ln1_gain, &mut g.ln1_bias)));
        d_in.add_assign(&d_mid);
        d_in
    }

    /// Input rows for a prompt followed by a partial response.
    fn sequence(&self, instruction: &Instruction, response: &[TokenId]) -> Matrix {
        let mut input = instruction.embeddings.clone();
        for &tok in response {
            input.push_row(self.weights.token_embeddings.row(tok.index()));
        }
        input
    }
}

/// Mean next-token cross-entropy of `targets` at `rows` and its gradient
/// with respect to the logits.
pub(crate) fn cross_entropy(logits: &Matrix, targets: &[TokenId]) -> (f64, Matrix) {
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut d = Matrix::zeros(logits.rows(), logits.cols());
    for (i, &tgt) in targets.iter().enumerate() {
        let lp = log_softmax(logits.row(i));
        loss -= lp[tgt.index()];
        let row = d.row_mut(i);
        for (g, l) in row.iter_mut().zip(&lp) {
            *g = exp(*l) / n;
        }
        row[tgt.index()] -= 1.0 / n;
    }
    (loss / n, d)
}

impl LanguageModel for TransformerDecoder {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn embed_dim(&self) -> usize {
        self.config.d_model
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn digest(&self) -> Digest {
        self.compute_digest()
    }

    fn token_embedding(&self, id: TokenId) -> &[f64] {
        self.weights.token_embeddings.row(id.index())
    }

    fn next_token_logprobs(&self, instruction: &Instruction, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let input = self.sequence(instruction, prefix);
        let cache = self.hidden(&input)?;
        let logits = self.logits(&cache, &[input.rows() - 1]);
        Ok(log_softmax(logits.row(0)))
    }

    fn response_loss(&self, instruction: &Instruction, target: &[TokenId]) -> Result<ResponseLoss> {
        if target.is_empty() {
            return Err(Error::Empty("target response"));
        }
        let p = instruction.len();
        if p == 0 {
            return Err(Error::Empty("instruction"));
        }
        let input = self.sequence(instruction, &target[..target.len() - 1]);
        let cache = self.hidden(&input)?;
        let rows: Vec<usize> = (p - 1..p - 1 + target.len()).collect();
        let logits = self.logits(&cache, &rows);
        let (loss, dlogits) = cross_entropy(&logits, target);
        if !loss.is_finite() {
            return Err(Error::NonFinite("response loss"));
        }
        let d_input = self.backward(&cache, &rows, &dlogits, None);
        let mut instruction_grad = Matrix::zeros(0, self.config.d_model);
        for i in 0..p {
            instruction_grad.push_row(d_input.row(i));
        }
        Ok(ResponseLoss { loss, instruction_grad })
    }
}
