//! Beam-search translation.
//!
//! Each step expands every live hypothesis over all emittable tokens (PAD and
//! BOS are never emitted) and ranks the candidates. EOS candidates ranked
//! within the top `beam_size` move to the finished pool; the `beam_size` best
//! other candidates stay live. A hypothesis that reaches
//! `max_len` tokens is closed with EOS: at that step only the EOS extension is
//! scored, and the result is flagged `truncated`. Equal scores are broken by
//! lower token id, then by earlier parent.

use std::path::Path;

use crate::corpus::{encode_source, Vocab, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::io::{read_lines, write_text};
use crate::model::{DecoderState, Dropout, Model};
use crate::numerics::{Tape, Tensor, Var};
use crate::radicals::RadicalTable;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Defaults to twice the source length plus 10.
    pub max_len: Option<usize>,
    /// Length-normalization exponent; 0 ranks by raw log-probability.
    pub alpha: f64,
    pub n_best: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_len: None,
            alpha: 0.0,
            n_best: 1,
        }
    }
}

impl BeamConfig {
    pub fn with_beam(beam_size: usize) -> Self {
        BeamConfig {
            beam_size,
            ..Self::default()
        }
    }

    pub fn max_len_for(&self, src_chars: usize) -> usize {
        self.max_len.unwrap_or(2 * src_chars + 10).max(1)
    }
}

/// Decoder state captured at the end of a hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderSnapshot<S> {
    pub h: Tensor<S>,
    pub c: Tensor<S>,
    pub htilde: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<S> {
    /// Emitted ids, ending with EOS when `finished`.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    /// Log-probability of each emitted token.
    pub step_logprobs: Vec<f64>,
    pub finished: bool,
    /// Closed by the length cap rather than by choosing EOS freely.
    pub truncated: bool,
    pub state: DecoderSnapshot<S>,
}

impl<S> Hypothesis<S> {
    /// Ids without the trailing EOS.
    pub fn output(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            self.logprob
        } else {
            self.logprob / (self.tokens.len().max(1) as f64).powf(alpha)
        }
    }
}

#[derive(Clone, Debug)]
pub struct BeamOutput<S> {
    pub best: Hypothesis<S>,
    /// Up to `n_best` hypotheses, best first.
    pub n_best: Vec<Hypothesis<S>>,
}

struct Live {
    tokens: Vec<usize>,
    logprob: f64,
    step_logprobs: Vec<f64>,
    state: DecoderState,
    htilde: Var,
}

struct Candidate {
    score: f64,
    parent: usize,
    token: usize,
    logp: f64,
}

/// `log softmax` of a row, computed in f64.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Translates one source sentence given as EOS-terminated ids and aligned features.
pub fn beam_search<S: Scalar>(model: &Model<S>, src: &[usize], feats: &[u16], cfg: &BeamConfig) -> Result<BeamOutput<S>> {
    let chars = src.iter().take_while(|&&t| t != EOS).count();
    if chars == 0 {
        return Err(Error::Usage("beam_search: empty source sentence".into()));
    }
    if cfg.beam_size == 0 {
        return Err(Error::Parameter("beam size must be at least 1".into()));
    }
    let max_len = cfg.max_len_for(chars);
    let vocab = model.config().tgt_vocab;
    let arch = &model.arch;

    let tape = Tape::<S>::new();
    let bound = model.bind(&tape)?;
    let mut off = Dropout::off();
    let enc = arch.encode(&tape, &bound, &[src.to_vec()], &[feats.to_vec()], &[vec![true; src.len()]], &mut off)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        logprob: 0.0,
        step_logprobs: Vec::new(),
        state: enc.init,
        htilde: tape.constant(Tensor::zeros(&[1, arch.config.hidden])),
    }];
    let mut finished: Vec<Hypothesis<S>> = Vec::new();

    for step in 1..=max_len {
        let last_step = step == max_len;
        let mut outputs = Vec::with_capacity(live.len());
        let mut candidates = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let y_prev = *hyp.tokens.last().unwrap_or(&BOS);
            let out = arch.decode_step(&tape, &bound, &[y_prev], hyp.htilde, hyp.state, &enc, &mut off)?;
            let logits: Vec<f64> = tape.with_value(out.logits, |t| t.data().iter().map(|v| v.as_f64()).collect());
            let logp = log_softmax(&logits);
            let tokens: Box<dyn Iterator<Item = usize>> = if last_step {
                Box::new(std::iter::once(EOS))
            } else {
                Box::new((0..vocab).filter(|&t| t != PAD && t != BOS))
            };
            for token in tokens {
                candidates.push(Candidate {
                    score: hyp.logprob + logp[token],
                    parent,
                    token,
                    logp: logp[token],
                });
            }
            outputs.push(out);
        }
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.token.cmp(&b.token))
                .then(a.parent.cmp(&b.parent))
        });
        let mut next = Vec::with_capacity(cfg.beam_size);
        for (rank, cand) in candidates.into_iter().enumerate() {
            let is_eos = cand.token == EOS;
            if (is_eos && rank >= cfg.beam_size) || (!is_eos && next.len() == cfg.beam_size) {
                continue;
            }
            let parent = &live[cand.parent];
            let out = &outputs[cand.parent];
            let mut tokens = parent.tokens.clone();
            tokens.push(cand.token);
            let mut step_logprobs = parent.step_logprobs.clone();
            step_logprobs.push(cand.logp);
            if is_eos {
                finished.push(Hypothesis {
                    tokens,
                    logprob: cand.score,
                    step_logprobs,
                    finished: true,
                    truncated: last_step,
                    state: DecoderSnapshot {
                        h: tape.value(out.state.h),
                        c: tape.value(out.state.c),
                        htilde: tape.value(out.htilde),
                    },
                });
            } else {
                next.push(Live {
                    tokens,
                    logprob: cand.score,
                    step_logprobs,
                    state: out.state,
                    htilde: out.htilde,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // with raw log-probabilities no live hypothesis can overtake a finished one
        if cfg.alpha == 0.0 {
            let best_done = finished.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            if live.iter().all(|h| h.logprob <= best_done) {
                break;
            }
        }
    }

    let mut pool = finished;
    if pool.is_empty() {
        // unreachable with the EOS cap, kept for max_len edge cases
        pool = live
            .into_iter()
            .map(|h| Hypothesis {
                tokens: h.tokens,
                logprob: h.logprob,
                step_logprobs: h.step_logprobs,
                finished: false,
                truncated: true,
                state: DecoderSnapshot {
                    h: tape.value(h.state.h),
                    c: tape.value(h.state.c),
                    htilde: tape.value(h.htilde),
                },
            })
            .collect();
    }
    pool.sort_by(|a, b| b.score(cfg.alpha).total_cmp(&a.score(cfg.alpha)).then(a.tokens.cmp(&b.tokens)));
    pool.truncate(cfg.n_best.max(1));
    Ok(BeamOutput {
        best: pool[0].clone(),
        n_best: pool,
    })
}

/// Source text to target text. Empty lines translate to empty lines.
pub fn translate_line<S: Scalar>(
    model: &Model<S>,
    line: &str,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    table: &RadicalTable,
    cfg: &BeamConfig,
    unk: &str,
) -> Result<String> {
    if line.is_empty() {
        return Ok(String::new());
    }
    let (ids, feats) = encode_source(line, src_vocab, table);
    let out = beam_search(model, &ids, &feats, cfg)?;
    Ok(tgt_vocab.decode_with(out.best.output(), unk))
}

/// Translates every line, preserving order. Work is split across threads; the
/// output does not depend on the thread count.
pub fn translate_lines<S: Scalar>(
    model: &Model<S>,
    lines: &[String],
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    table: &RadicalTable,
    cfg: &BeamConfig,
    unk: &str,
) -> Result<Vec<String>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(lines.len().max(1));
    let chunk = lines.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<String>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = lines
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, line)| {
                            translate_line(model, line, src_vocab, tgt_vocab, table, cfg, unk).map_err(|e| {
                                Error::Data(format!("line {}: {e}", ci * chunk + i + 1))
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("translation thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(lines.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn translate_file<S: Scalar>(
    model: &Model<S>,
    input: &Path,
    output: &Path,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    table: &RadicalTable,
    cfg: &BeamConfig,
    unk: &str,
) -> Result<usize> {
    let lines = read_lines(input)?;
    let translated = translate_lines(model, &lines, src_vocab, tgt_vocab, table, cfg, unk)?;
    let mut text = String::new();
    for l in &translated {
        text.push_str(l);
        text.push('\n');
    }
    write_text(output, &text)?;
    Ok(translated.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(lp[2] > lp[1] && lp[1] > lp[0]);
    }

    #[test]
    fn default_max_len() {
        assert_eq!(BeamConfig::default().max_len_for(7), 24);
        let cfg = BeamConfig {
            max_len: Some(3),
            ..BeamConfig::default()
        };
        assert_eq!(cfg.max_len_for(100), 3);
    }
}
