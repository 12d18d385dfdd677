//! Attentional encoder-decoder over characters with an optional radical
//! embedding concatenated to each source character embedding.
//!
//! Encoder: bidirectional single-layer LSTM over `[E₁ x_j ‖ E₂ f_j]`; the
//! annotation of position j is `[h⃗_j ‖ h⃖_j]`.
//! Decoder: single-layer LSTM fed `[E_y y_{i-1} ‖ h̃_{i-1}]` (input feeding),
//! global attention over annotations, `h̃_i = tanh(W_c [s_i ‖ c_i])`, and a
//! softmax projection of `h̃_i`.
//!
//! Embedding tables are stored `[vocab, width]` so a lookup gathers rows.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AttentionScore, ModelConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Batch, ExamplePair, BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, grad_check, Axis, GradCheckReport, ParamId, ParamStore, Tape, Tensor, Var, INIT_HIGH, INIT_LOW};
use crate::scalar::Scalar;

pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmIds {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
}

/// Parameter ids of every weight in the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub src_embed: ParamId,
    pub feature_embed: Option<ParamId>,
    pub enc_fwd: LstmIds,
    pub enc_bwd: LstmIds,
    pub bridge_w: ParamId,
    pub bridge_b: ParamId,
    pub tgt_embed: ParamId,
    pub dec: LstmIds,
    pub attn: Option<ParamId>,
    pub attn_out: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Names and shapes of all parameters, in storage order.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (p, p1, q) = (config.embed_dim(), config.char_embed, config.hidden);
    let mut out = vec![("src_embed".to_string(), vec![config.src_vocab, p1])];
    if config.feature_path {
        out.push(("feature_embed".into(), vec![config.feature_vocab, config.feature_embed]));
    }
    for (name, input) in [("enc_fwd", p), ("enc_bwd", p)] {
        out.push((format!("{name}.input"), vec![input, 4 * q]));
        out.push((format!("{name}.recurrent"), vec![q, 4 * q]));
        out.push((format!("{name}.bias"), vec![1, 4 * q]));
    }
    out.push(("bridge.w".into(), vec![q, q]));
    out.push(("bridge.b".into(), vec![1, q]));
    out.push(("tgt_embed".into(), vec![config.tgt_vocab, p1]));
    out.push(("dec.input".into(), vec![p1 + q, 4 * q]));
    out.push(("dec.recurrent".into(), vec![q, 4 * q]));
    out.push(("dec.bias".into(), vec![1, 4 * q]));
    if config.attention == AttentionScore::General {
        out.push(("attn.w".into(), vec![q, 2 * q]));
    }
    out.push(("attn.out".into(), vec![3 * q, q]));
    out.push(("out.w".into(), vec![q, config.tgt_vocab]));
    out.push(("out.b".into(), vec![1, config.tgt_vocab]));
    out
}

impl Layout {
    pub fn resolve<S: Scalar>(config: &ModelConfig, store: &ParamStore<S>) -> Result<Self> {
        for (name, shape) in param_shapes(config) {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
        }
        if store.len() != param_shapes(config).len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        let id = |n: &str| store.id(n).expect("checked above");
        let lstm = |prefix: &str| LstmIds {
            input: id(&format!("{prefix}.input")),
            recurrent: id(&format!("{prefix}.recurrent")),
            bias: id(&format!("{prefix}.bias")),
        };
        Ok(Layout {
            src_embed: id("src_embed"),
            feature_embed: store.id("feature_embed"),
            enc_fwd: lstm("enc_fwd"),
            enc_bwd: lstm("enc_bwd"),
            bridge_w: id("bridge.w"),
            bridge_b: id("bridge.b"),
            tgt_embed: id("tgt_embed"),
            dec: lstm("dec"),
            attn: store.id("attn.w"),
            attn_out: id("attn.out"),
            out_w: id("out.w"),
            out_b: id("out.b"),
        })
    }
}

/// Model hyperparameters plus parameter layout; everything except the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub arch: Architecture,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Uniform `[-0.1, 0.1)` initialization, forget-gate biases set to 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let q = config.hidden;
        for (name, shape) in param_shapes(&config) {
            let mut value = Tensor::uniform(&shape, INIT_LOW, INIT_HIGH, &mut rng)?;
            if name.ends_with(".bias") {
                for v in &mut value.data_mut()[q..2 * q] {
                    *v = S::of(FORGET_BIAS);
                }
            }
            store.add(name, value)?;
        }
        Self::from_params(config, store)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        Ok(Model {
            arch: Architecture { config, layout },
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Total NLL and predicted-token count for a batch.
    pub fn loss(&self, tape: &Tape<S>, batch: &Batch, dropout: &mut Dropout<'_>) -> Result<(Var, usize)> {
        let bound = self.arch.bind(tape, &self.params)?;
        self.arch.forward_loss(tape, &bound, batch, dropout)
    }

    /// Loss value with dropout disabled.
    pub fn eval_loss(&self, batch: &Batch) -> Result<(S, usize)> {
        let tape = Tape::new();
        let (loss, tokens) = self.loss(&tape, batch, &mut Dropout::off())?;
        Ok((tape.scalar(loss), tokens))
    }

    pub fn bind(&self, tape: &Tape<S>) -> Result<Bound> {
        self.arch.bind(tape, &self.params)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

/// Parameter nodes recorded on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    pub src_embed: Var,
    pub feature_embed: Option<Var>,
    pub enc_fwd: LstmVars,
    pub enc_bwd: LstmVars,
    pub bridge_w: Var,
    pub bridge_b: Var,
    pub tgt_embed: Var,
    pub dec: LstmVars,
    pub attn: Option<Var>,
    pub attn_out: Var,
    pub out_w: Var,
    pub out_b: Var,
}

/// Dropout source. Inactive when no rng is supplied or the drop probability is 0.
pub struct Dropout<'r> {
    drop_p: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn new(drop_p: f64, rng: Option<&'r mut ChaCha8Rng>) -> Self {
        Dropout { drop_p, rng }
    }

    pub fn off() -> Self {
        Dropout { drop_p: 0.0, rng: None }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.drop_p > 0.0
    }

    pub fn apply<S: Scalar>(&mut self, tape: &Tape<S>, x: Var) -> Result<Var> {
        if !self.is_active() {
            return Ok(x);
        }
        let rng = self.rng.as_mut().expect("active dropout has rng");
        let n = tape.with_value(x, |t| t.len());
        let keep = dropout_mask(n, self.drop_p, &mut **rng);
        tape.dropout(x, &keep, S::of(1.0 / (1.0 - self.drop_p)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// Encoder output for a batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// One `[B, 2q]` annotation per source position.
    pub annotations: Vec<Var>,
    /// `[B, q]` sums of the two halves, used by the dot score.
    pub folded: Vec<Var>,
    /// Row-major `[B, L]` source mask.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub init: DecoderState,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }
}

pub struct StepOutput {
    pub logits: Var,
    pub state: DecoderState,
    pub htilde: Var,
    pub alpha: Var,
}

/// Row `r` of the output concatenates `E₁[chars[r]]` and, when present, `E₂[feats[r]]`.
pub fn embed_with_features<S: Scalar>(
    tape: &Tape<S>,
    char_table: Var,
    feature_table: Option<Var>,
    chars: &[usize],
    feats: &[u16],
) -> Result<Var> {
    let chars_emb = tape.embedding(char_table, chars)?;
    match feature_table {
        None => Ok(chars_emb),
        Some(table) => {
            if feats.len() != chars.len() {
                return Err(Error::shape("embed_with_features", &[chars.len()], &[feats.len()]));
            }
            let ids: Vec<usize> = feats.iter().map(|&f| f as usize).collect();
            let feat_emb = tape.embedding(table, &ids)?;
            tape.concat(&[chars_emb, feat_emb], Axis::Cols)
        }
    }
}

/// Standard LSTM step with gate order input, forget, output, candidate.
pub fn lstm_cell<S: Scalar>(tape: &Tape<S>, x: Var, h: Var, c: Var, w: &LstmVars) -> Result<(Var, Var)> {
    let q = tape.with_value(h, |t| t.cols());
    let xin = tape.matmul(x, w.input)?;
    let rec = tape.matmul(h, w.recurrent)?;
    let gates = tape.add_bias(tape.add(xin, rec)?, w.bias)?;
    let i = tape.sigmoid(tape.slice(gates, Axis::Cols, 0, q)?)?;
    let f = tape.sigmoid(tape.slice(gates, Axis::Cols, q, q)?)?;
    let o = tape.sigmoid(tape.slice(gates, Axis::Cols, 2 * q, q)?)?;
    let g = tape.tanh(tape.slice(gates, Axis::Cols, 3 * q, q)?)?;
    let c_new = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
    let h_new = tape.mul(o, tape.tanh(c_new)?)?;
    Ok((h_new, c_new))
}

fn column<T: Copy>(grid: &[Vec<T>], j: usize) -> Vec<T> {
    grid.iter().map(|row| row[j]).collect()
}

impl Architecture {
    pub fn bind<S: Scalar>(&self, tape: &Tape<S>, store: &ParamStore<S>) -> Result<Bound> {
        let l = &self.layout;
        let p = |id: ParamId| tape.param(store, id);
        let lstm = |ids: &LstmIds| -> Result<LstmVars> {
            Ok(LstmVars {
                input: p(ids.input)?,
                recurrent: p(ids.recurrent)?,
                bias: p(ids.bias)?,
            })
        };
        Ok(Bound {
            src_embed: p(l.src_embed)?,
            feature_embed: l.feature_embed.map(p).transpose()?,
            enc_fwd: lstm(&l.enc_fwd)?,
            enc_bwd: lstm(&l.enc_bwd)?,
            bridge_w: p(l.bridge_w)?,
            bridge_b: p(l.bridge_b)?,
            tgt_embed: p(l.tgt_embed)?,
            dec: lstm(&l.dec)?,
            attn: l.attn.map(p).transpose()?,
            attn_out: p(l.attn_out)?,
            out_w: p(l.out_w)?,
            out_b: p(l.out_b)?,
        })
    }

    /// Bidirectional encoding. Each direction starts from a zero state and
    /// carries its state unchanged across PAD positions.
    pub fn encode<S: Scalar>(
        &self,
        tape: &Tape<S>,
        bound: &Bound,
        src: &[Vec<usize>],
        feats: &[Vec<u16>],
        mask: &[Vec<bool>],
        dropout: &mut Dropout<'_>,
    ) -> Result<Encoded> {
        let batch = src.len();
        let len = src.first().map_or(0, Vec::len);
        if batch == 0 || len == 0 {
            return Err(Error::Usage("encode: empty source batch".into()));
        }
        let q = self.config.hidden;

        let mut inputs = Vec::with_capacity(len);
        for j in 0..len {
            let x = embed_with_features(
                tape,
                bound.src_embed,
                bound.feature_embed,
                &column(src, j),
                &column(feats, j),
            )?;
            inputs.push(dropout.apply(tape, x)?);
        }

        let zero = tape.constant(Tensor::zeros(&[batch, q]));
        let mut fwd = Vec::with_capacity(len);
        let (mut h, mut c) = (zero, zero);
        for (j, &x) in inputs.iter().enumerate() {
            let m = column(mask, j);
            let (hn, cn) = lstm_cell(tape, x, h, c, &bound.enc_fwd)?;
            h = tape.select_rows(&m, hn, h)?;
            c = tape.select_rows(&m, cn, c)?;
            fwd.push(h);
        }
        let mut bwd = vec![zero; len];
        let (mut h, mut c) = (zero, zero);
        for j in (0..len).rev() {
            let m = column(mask, j);
            let (hn, cn) = lstm_cell(tape, inputs[j], h, c, &bound.enc_bwd)?;
            h = tape.select_rows(&m, hn, h)?;
            c = tape.select_rows(&m, cn, c)?;
            bwd[j] = h;
        }

        let mut annotations = Vec::with_capacity(len);
        let mut folded = Vec::new();
        for j in 0..len {
            annotations.push(tape.concat(&[fwd[j], bwd[j]], Axis::Cols)?);
            if self.config.attention == AttentionScore::Dot {
                folded.push(tape.add(fwd[j], bwd[j])?);
            }
        }

        let init_h = tape.tanh(tape.add_bias(tape.matmul(bwd[0], bound.bridge_w)?, bound.bridge_b)?)?;
        let mut flat_mask = Vec::with_capacity(batch * len);
        for row in mask {
            flat_mask.extend_from_slice(row);
        }
        Ok(Encoded {
            annotations,
            folded,
            mask: flat_mask,
            batch,
            init: DecoderState { h: init_h, c: zero },
        })
    }

    /// Global attention of decoder state `s[B,q]` over the annotations.
    /// Returns the context `[B,2q]` and weights `[B,L]`.
    pub fn attention<S: Scalar>(&self, tape: &Tape<S>, bound: &Bound, s: Var, enc: &Encoded) -> Result<(Var, Var)> {
        let mut scores = Vec::with_capacity(enc.len());
        match (self.config.attention, bound.attn) {
            (AttentionScore::General, Some(w)) => {
                let projected = tape.matmul(s, w)?;
                for &h in &enc.annotations {
                    scores.push(tape.sum_cols(tape.mul(projected, h)?)?);
                }
            }
            (AttentionScore::Dot, _) => {
                for &h in &enc.folded {
                    scores.push(tape.sum_cols(tape.mul(s, h)?)?);
                }
            }
            (AttentionScore::General, None) => {
                return Err(Error::Usage("general attention requires attn.w".into()));
            }
        }
        let scores = tape.concat(&scores, Axis::Cols)?;
        let alpha = tape.masked_softmax(scores, Some(&enc.mask))?;
        let mut context = None;
        for (j, &h) in enc.annotations.iter().enumerate() {
            let weight = tape.slice(alpha, Axis::Cols, j, 1)?;
            let term = tape.mul_col(h, weight)?;
            context = Some(match context {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((context.expect("non-empty source"), alpha))
    }

    /// One decoder step from previous tokens `y_prev` and previous attentional
    /// output `htilde_prev` (zeros at the first step).
    #[allow(clippy::too_many_arguments)]
    pub fn decode_step<S: Scalar>(
        &self,
        tape: &Tape<S>,
        bound: &Bound,
        y_prev: &[usize],
        htilde_prev: Var,
        state: DecoderState,
        enc: &Encoded,
        dropout: &mut Dropout<'_>,
    ) -> Result<StepOutput> {
        let emb = tape.embedding(bound.tgt_embed, y_prev)?;
        let emb = dropout.apply(tape, emb)?;
        let feed = if self.config.input_feed {
            htilde_prev
        } else {
            tape.constant(Tensor::zeros(&[y_prev.len(), self.config.hidden]))
        };
        let x = tape.concat(&[emb, feed], Axis::Cols)?;
        let (h, c) = lstm_cell(tape, x, state.h, state.c, &bound.dec)?;
        let (context, alpha) = self.attention(tape, bound, h, enc)?;
        let htilde = tape.tanh(tape.matmul(tape.concat(&[h, context], Axis::Cols)?, bound.attn_out)?)?;
        let dropped = dropout.apply(tape, htilde)?;
        let logits = tape.add_bias(tape.matmul(dropped, bound.out_w)?, bound.out_b)?;
        Ok(StepOutput {
            logits,
            state: DecoderState { h, c },
            htilde,
            alpha,
        })
    }

    /// Teacher-forced loss: sum over real target positions after BOS of
    /// `-log p(y_i | y_<i, x)`, and the number of such positions.
    pub fn forward_loss<S: Scalar>(
        &self,
        tape: &Tape<S>,
        bound: &Bound,
        batch: &Batch,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, usize)> {
        let enc = self.encode(tape, bound, &batch.src, &batch.feats, &batch.src_mask, dropout)?;
        let b = batch.size();
        let mut state = enc.init;
        let mut htilde = tape.constant(Tensor::zeros(&[b, self.config.hidden]));
        let mut total: Option<Var> = None;
        for t in 0..batch.tgt_len().saturating_sub(1) {
            let step = self.decode_step(tape, bound, &column(&batch.tgt, t), htilde, state, &enc, dropout)?;
            let nll = tape.masked_nll(step.logits, &column(&batch.tgt, t + 1), &column(&batch.tgt_mask, t + 1))?;
            total = Some(match total {
                None => nll,
                Some(acc) => tape.add(acc, nll)?,
            });
            state = step.state;
            htilde = step.htilde;
        }
        let total = match total {
            Some(v) => v,
            None => tape.constant(Tensor::scalar(S::zero())),
        };
        Ok((total, batch.target_tokens()))
    }
}

/// Seeded generator for dropout masks, derived from a training seed and step.
pub fn dropout_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Central-difference step for [`full_model_gradcheck`]. Smaller steps are
/// dominated by f64 roundoff on coordinates with gradients near 1e-8, larger
/// ones by truncation error.
pub const GRADCHECK_EPS: f64 = 7e-4;
/// Weights for the check are drawn from `[-GRADCHECK_SCALE, GRADCHECK_SCALE)`.
pub const GRADCHECK_SCALE: f64 = 0.5;

/// q=4, p₁=4, p₂=2, all vocabularies of size 8.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        char_embed: 4,
        feature_embed: 2,
        hidden: 4,
        feature_vocab: 8,
        ..ModelConfig::new(8, 8)
    }
}

/// Random batch of `count` pairs with 1 to `max_len` characters on each side.
pub fn random_batch(config: &ModelConfig, count: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Batch {
    let pairs: Vec<ExamplePair> = (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=max_len);
            let m = rng.gen_range(1..=max_len);
            let mut src: Vec<usize> = (0..n).map(|_| rng.gen_range(4..config.src_vocab)).collect();
            src.push(EOS);
            let mut feats: Vec<u16> = (0..n).map(|_| rng.gen_range(1..config.feature_vocab) as u16).collect();
            feats.push(0);
            let mut tgt = vec![BOS];
            tgt.extend((0..m).map(|_| rng.gen_range(4..config.tgt_vocab)));
            tgt.push(EOS);
            ExamplePair { src, feats, tgt }
        })
        .collect();
    Batch::from_pairs(&pairs.iter().collect::<Vec<_>>())
}

/// Finite-difference check of the batch-averaged loss of a random tiny model.
pub fn full_model_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-GRADCHECK_SCALE..GRADCHECK_SCALE);
        }
    }
    let batch = random_batch(&config, 3, 3, &mut rng);
    let arch = model.arch.clone();
    grad_check(&mut model.params, GRADCHECK_EPS, |tape, store| {
        let bound = arch.bind(tape, store)?;
        let (loss, _) = arch.forward_loss(tape, &bound, &batch, &mut Dropout::off())?;
        tape.scale(loss, 1.0 / batch.size() as f64)
    })
}
