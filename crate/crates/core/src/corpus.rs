//! Parallel text, character vocabularies, encoded examples and padded batches.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{read_lines, read_utf8, write_text};
use crate::radicals::RadicalTable;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Feature id carried by EOS and PAD positions; real radicals use 1..=214.
pub const NO_FEATURE: u16 = 0;
/// Size of the feature vocabulary: the reserved id plus 214 radicals.
pub const FEATURE_VOCAB_SIZE: usize = 215;

pub const DEFAULT_MAX_SENTENCE_CHARS: usize = 400;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i + RESERVED.len()).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary entry {c:?}")));
            }
        }
        Ok(Vocab { chars, index })
    }

    pub fn len(&self) -> usize {
        RESERVED.len() + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn id(&self, c: char) -> usize {
        self.get(c).unwrap_or(UNK)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(RESERVED.len()).and_then(|i| self.chars.get(i).copied())
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Renders ids, skipping PAD/BOS/EOS and writing `unk` for UNK.
    pub fn decode_with(&self, ids: &[usize], unk: &str) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                UNK => out.push_str(unk),
                _ => {
                    if let Some(c) = self.char_of(id) {
                        out.push(c);
                    }
                }
            }
        }
        out
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        self.decode_with(ids, "")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, name) in RESERVED.iter().enumerate() {
            out.push_str(&format!("{id}\t{name}\n"));
        }
        for (i, &c) in self.chars.iter().enumerate() {
            out.push_str(&format!("{}\t{}\n", i + RESERVED.len(), escape_char(c)));
        }
        out
    }

    pub fn from_tsv(text: &str, name: &Path) -> Result<Self> {
        let mut chars = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let err = |msg: String| Error::Parse {
                path: name.to_path_buf(),
                line: lineno,
                msg,
            };
            let (id, entry) = line
                .split_once('\t')
                .ok_or_else(|| err(format!("expected `id<TAB>char`, got {line:?}")))?;
            let id: usize = id.parse().map_err(|_| err(format!("bad id {id:?}")))?;
            if id != i {
                return Err(err(format!("expected id {i}, found {id}")));
            }
            if id < RESERVED.len() {
                if entry != RESERVED[id] {
                    return Err(err(format!("reserved id {id} must be {}", RESERVED[id])));
                }
                continue;
            }
            let c = unescape_char(entry).ok_or_else(|| err(format!("bad entry {entry:?}")))?;
            chars.push(c);
        }
        if text.lines().count() < RESERVED.len() {
            return Err(Error::Parse {
                path: name.to_path_buf(),
                line: 1,
                msg: "vocabulary file lacks the reserved entries".into(),
            });
        }
        Vocab::from_chars(chars)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_tsv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&read_utf8(path)?, path)
    }
}

fn escape_char(c: char) -> String {
    match c {
        '\t' => "\\t".into(),
        '\n' => "\\n".into(),
        '\r' => "\\r".into(),
        '\\' => "\\\\".into(),
        _ => c.to_string(),
    }
}

fn unescape_char(s: &str) -> Option<char> {
    match s {
        "\\t" => Some('\t'),
        "\\n" => Some('\n'),
        "\\r" => Some('\r'),
        "\\\\" => Some('\\'),
        _ => {
            let mut it = s.chars();
            let c = it.next()?;
            it.next().is_none().then_some(c)
        }
    }
}

/// Characters with frequency >= `min_count`, most frequent first, ties by codepoint.
pub fn build_vocab<S: AsRef<str>>(sentences: &[S], min_count: usize, max_size: Option<usize>) -> Vocab {
    let mut counts: HashMap<char, usize> = HashMap::new();
    for s in sentences {
        for c in s.as_ref().chars() {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut entries: Vec<(char, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_count.max(1))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(max) = max_size {
        entries.truncate(max.saturating_sub(RESERVED.len()));
    }
    Vocab::from_chars(entries.into_iter().map(|(c, _)| c).collect())
        .expect("counted characters are distinct")
}

/// Line-aligned source and target sentences.
pub fn read_parallel(src_path: &Path, tgt_path: &Path) -> Result<Vec<(String, String)>> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "line-count mismatch: {} has {} lines vs {} has {} lines ({} vs {})",
            src_path.display(),
            src.len(),
            tgt_path.display(),
            tgt.len(),
            src.len(),
            tgt.len()
        )));
    }
    Ok(src.into_iter().zip(tgt).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExamplePair {
    /// Source character ids, EOS-terminated.
    pub src: Vec<usize>,
    /// Radical index per source position; [`NO_FEATURE`] at EOS.
    pub feats: Vec<u16>,
    /// Target ids, BOS ... EOS.
    pub tgt: Vec<usize>,
}

/// Source ids and aligned features, EOS-terminated.
pub fn encode_source(src: &str, vocab: &Vocab, table: &RadicalTable) -> (Vec<usize>, Vec<u16>) {
    let mut ids = vocab.encode(src);
    ids.push(EOS);
    let mut feats = table.annotate(src).indices();
    feats.push(NO_FEATURE);
    (ids, feats)
}

pub fn encode_target(tgt: &str, vocab: &Vocab) -> Vec<usize> {
    let mut ids = Vec::with_capacity(tgt.chars().count() + 2);
    ids.push(BOS);
    ids.extend(vocab.encode(tgt));
    ids.push(EOS);
    ids
}

pub fn encode_pair(
    src: &str,
    tgt: &str,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    table: &RadicalTable,
) -> ExamplePair {
    let (src, feats) = encode_source(src, src_vocab, table);
    ExamplePair {
        src,
        feats,
        tgt: encode_target(tgt, tgt_vocab),
    }
}

/// Drops pairs whose source or target exceeds `max_chars` characters.
pub fn filter_by_length(pairs: Vec<ExamplePair>, max_chars: usize) -> Vec<ExamplePair> {
    let before = pairs.len();
    let kept: Vec<_> = pairs
        .into_iter()
        .filter(|p| p.src.len() - 1 <= max_chars && p.tgt.len() - 2 <= max_chars)
        .collect();
    if kept.len() < before {
        log::info!(
            "skipped {} of {before} pairs longer than {max_chars} characters",
            before - kept.len()
        );
    }
    kept
}

/// Padded mini-batch. All grids are indexed `[example][position]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub feats: Vec<Vec<u16>>,
    pub src_mask: Vec<Vec<bool>>,
    pub tgt: Vec<Vec<usize>>,
    pub tgt_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&ExamplePair]) -> Self {
        let src_len = pairs.iter().map(|p| p.src.len()).max().unwrap_or(0);
        let tgt_len = pairs.iter().map(|p| p.tgt.len()).max().unwrap_or(0);
        let pad = |v: &[usize], n: usize| {
            let mut row = v.to_vec();
            row.resize(n, PAD);
            row
        };
        let mask = |len: usize, n: usize| (0..n).map(|j| j < len).collect::<Vec<_>>();
        Batch {
            src: pairs.iter().map(|p| pad(&p.src, src_len)).collect(),
            feats: pairs
                .iter()
                .map(|p| {
                    let mut row = p.feats.clone();
                    row.resize(src_len, NO_FEATURE);
                    row
                })
                .collect(),
            src_mask: pairs.iter().map(|p| mask(p.src.len(), src_len)).collect(),
            tgt: pairs.iter().map(|p| pad(&p.tgt, tgt_len)).collect(),
            tgt_mask: pairs.iter().map(|p| mask(p.tgt.len(), tgt_len)).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.src.len()
    }

    pub fn src_len(&self) -> usize {
        self.src.first().map_or(0, Vec::len)
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt.first().map_or(0, Vec::len)
    }

    /// Target tokens that are predicted: every real position after BOS.
    pub fn target_tokens(&self) -> usize {
        self.tgt_mask
            .iter()
            .map(|row| row.iter().skip(1).filter(|&&m| m).count())
            .sum()
    }
}

/// Shuffles with `seed`, groups similar source lengths, splits into batches of at
/// most `batch_size`, then shuffles the batch order.
pub fn make_batches(pairs: &[ExamplePair], batch_size: usize, seed: u64) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| pairs[i].src.len());
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&ExamplePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            Batch::from_pairs(&refs)
        })
        .collect();
    batches.shuffle(&mut rng);
    batches
}

/// Consecutive batches in corpus order, for evaluation.
pub fn sequential_batches(pairs: &[ExamplePair], batch_size: usize) -> Vec<Batch> {
    pairs
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::from_pairs(&chunk.iter().collect::<Vec<_>>()))
        .collect()
}
