//! Corpus BLEU, perplexity and side-by-side translation dumps.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{encode_pair, Vocab};
use crate::decoding::{translate_lines, BeamConfig};
use crate::error::{Error, Result};
use crate::io::write_text;
use crate::model::Model;
use crate::radicals::RadicalTable;
use crate::scalar::Scalar;
use crate::training::perplexity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Tokenization {
    /// Every character is a token; whitespace is dropped.
    #[default]
    Char,
    Whitespace,
}

impl Tokenization {
    pub fn tokenize<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Tokenization::Whitespace => line.split_whitespace().collect(),
            Tokenization::Char => line
                .char_indices()
                .filter(|(_, c)| !c.is_whitespace())
                .map(|(i, c)| &line[i..i + c.len_utf8()])
                .collect(),
        }
    }
}

impl fmt::Display for Tokenization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tokenization::Char => "char",
            Tokenization::Whitespace => "whitespace",
        })
    }
}

impl FromStr for Tokenization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Tokenization::Char),
            "whitespace" => Ok(Tokenization::Whitespace),
            other => Err(Error::Config(format!(
                "tokenization must be `char` or `whitespace`, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// 0 to 100.
    pub bleu: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub tokenization: Tokenization,
}

impl BleuReport {
    /// `100 · BP · exp(mean ln p_n)`, zero when any precision is zero.
    pub fn combine(precisions: &[f64], brevity_penalty: f64) -> f64 {
        if precisions.is_empty() || precisions.iter().any(|&p| p <= 0.0) {
            return 0.0;
        }
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / precisions.len() as f64;
        100.0 * brevity_penalty * mean_log.exp()
    }
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with clipped n-gram counts and a single reference per line.
/// With `smoothing`, orders 2 and up use add-one counts.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    max_n: usize,
    tokenization: Tokenization,
    smoothing: bool,
) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "hypothesis and reference line counts differ ({} vs {})",
            hyps.len(),
            refs.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Parameter("max_n must be at least 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let h = tokenization.tokenize(h.as_ref());
        let r = tokenization.tokenize(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let ref_counts = ngram_counts(&r, n);
            for (gram, count) in ngram_counts(&h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let precisions: Vec<f64> = (0..max_n)
        .map(|i| {
            let (m, t) = (matches[i] as f64, totals[i] as f64);
            if smoothing && i > 0 {
                (m + 1.0) / (t + 1.0)
            } else if t == 0.0 {
                0.0
            } else {
                m / t
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    Ok(BleuReport {
        bleu: BleuReport::combine(&precisions, brevity_penalty),
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        tokenization,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub bleu: BleuReport,
    pub perplexity: f64,
    pub sentences: usize,
    pub hypotheses: Vec<String>,
}

impl EvalReport {
    pub fn metrics_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        out.push_str(&format!("bleu\t{:.4}\n", self.bleu.bleu));
        for (i, p) in self.bleu.precisions.iter().enumerate() {
            out.push_str(&format!("p{}\t{p:.6}\n", i + 1));
        }
        out.push_str(&format!("brevity_penalty\t{:.6}\n", self.bleu.brevity_penalty));
        out.push_str(&format!("hyp_len\t{}\n", self.bleu.hyp_len));
        out.push_str(&format!("ref_len\t{}\n", self.bleu.ref_len));
        out.push_str(&format!("perplexity\t{:.6}\n", self.perplexity));
        out.push_str(&format!("sentences\t{}\n", self.sentences));
        out.push_str(&format!("tokenization\t{}\n", self.bleu.tokenization));
        out
    }
}

/// Source, reference and system output for each sentence, one block per line.
pub fn examples_text(sources: &[String], references: &[String], hypotheses: &[String]) -> String {
    let mut out = String::new();
    for (i, ((s, r), h)) in sources.iter().zip(references).zip(hypotheses).enumerate() {
        out.push_str(&format!("[{}]\nSOURCE:    {s}\nREFERENCE: {r}\nOUTPUT:    {h}\n\n", i + 1));
    }
    out
}

pub struct EvalInputs<'a> {
    pub sources: &'a [String],
    pub references: &'a [String],
    pub src_vocab: &'a Vocab,
    pub tgt_vocab: &'a Vocab,
    pub table: &'a RadicalTable,
    pub beam: &'a BeamConfig,
    pub tokenization: Tokenization,
    pub batch_size: usize,
}

/// Teacher-forced perplexity on the references plus BLEU of beam translations.
pub fn evaluate<S: Scalar>(model: &Model<S>, inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    if inputs.sources.len() != inputs.references.len() {
        return Err(Error::Data(format!(
            "source and reference line counts differ ({} vs {})",
            inputs.sources.len(),
            inputs.references.len()
        )));
    }
    let pairs: Vec<_> = inputs
        .sources
        .iter()
        .zip(inputs.references)
        .filter(|(s, _)| !s.is_empty())
        .map(|(s, r)| encode_pair(s, r, inputs.src_vocab, inputs.tgt_vocab, inputs.table))
        .collect();
    let ppl = perplexity(model, &pairs, inputs.batch_size)?;
    let hypotheses = translate_lines(
        model,
        inputs.sources,
        inputs.src_vocab,
        inputs.tgt_vocab,
        inputs.table,
        inputs.beam,
        "",
    )?;
    let report = bleu(&hypotheses, inputs.references, 4, inputs.tokenization, false)?;
    Ok(EvalReport {
        bleu: report,
        perplexity: ppl,
        sentences: inputs.sources.len(),
        hypotheses,
    })
}

/// Writes `metrics.tsv` and `examples.txt` into `dir`.
pub fn write_eval_outputs(dir: &Path, report: &EvalReport, sources: &[String], references: &[String]) -> Result<()> {
    write_text(&dir.join("metrics.tsv"), &report.metrics_tsv())?;
    write_text(
        &dir.join("examples.txt"),
        &examples_text(sources, references, &report.hypotheses),
    )
}
