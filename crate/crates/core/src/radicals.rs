//! Kangxi radical features for source characters.
//!
//! Every character resolves to exactly one of the 214 Kangxi radicals:
//!
//! 1. Han characters use the radical recorded in the Han table.
//! 2. Hiragana and katakana borrow the radical of the kanji they derive from.
//! 3. Digits (ASCII or fullwidth) borrow the radical of the Chinese numeral
//!    零 一 二 三 四 五 六 七 八 九.
//! 4. Latin letters (ASCII or fullwidth, either case) use the radical of 英.
//! 5. Everything else uses the radical of 符.
//!
//! Han characters missing from the table fall through to rule 5 and are
//! counted, see [`RadicalTable::unknown_han_count`].

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::io::read_utf8;

pub const KANGXI_RADICAL_COUNT: u16 = 214;

const CHINESE_NUMERALS: [char; 10] = ['零', '一', '二', '三', '四', '五', '六', '七', '八', '九'];
const LATIN_ANCHOR: char = '英';
const SYMBOL_ANCHOR: char = '符';

/// Marks that must be present in the kana table besides the two syllabaries.
const KANA_MARKS: [char; 5] = ['ー', 'ゝ', 'ゞ', 'ヽ', 'ヾ'];

static BUNDLED_HAN: &str = include_str!("../data/han_radicals.tsv");
static BUNDLED_KANA: &str = include_str!("../data/kana_sources.tsv");

/// A Kangxi radical number in `1..=214`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RadicalId(u8);

impl RadicalId {
    pub fn new(index: u16) -> Result<Self> {
        if (1..=KANGXI_RADICAL_COUNT).contains(&index) {
            Ok(RadicalId(index as u8))
        } else {
            Err(Error::Validation(format!(
                "radical index {index} outside 1..={KANGXI_RADICAL_COUNT}"
            )))
        }
    }

    pub fn index(self) -> u16 {
        self.0 as u16
    }

    /// The glyph from the Kangxi Radicals block (U+2F00..U+2FD5).
    pub fn glyph(self) -> char {
        char::from_u32(0x2F00 + self.0 as u32 - 1).expect("Kangxi radical block")
    }
}

impl fmt::Display for RadicalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which assignment rule produced a radical.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Han,
    Kana,
    Numeral,
    Latin,
    Symbol,
}

/// Radical features aligned position-by-position with a character sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureSeq(Vec<RadicalId>);

impl FeatureSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[RadicalId] {
        &self.0
    }

    pub fn indices(&self) -> Vec<u16> {
        self.0.iter().map(|r| r.index()).collect()
    }
}

impl std::ops::Index<usize> for FeatureSeq {
    type Output = RadicalId;

    fn index(&self, i: usize) -> &RadicalId {
        &self.0[i]
    }
}

#[derive(Debug)]
pub struct RadicalTable {
    han: HashMap<char, RadicalId>,
    kana: HashMap<char, (char, RadicalId)>,
    numerals: [RadicalId; 10],
    latin: RadicalId,
    symbol: RadicalId,
    unknown_han: AtomicU64,
}

impl RadicalTable {
    pub fn load(han_path: impl AsRef<Path>, kana_path: impl AsRef<Path>) -> Result<Self> {
        let han_path = han_path.as_ref();
        let kana_path = kana_path.as_ref();
        let han_text = read_utf8(han_path)?;
        let kana_text = read_utf8(kana_path)?;
        Self::from_sources(&han_text, han_path, &kana_text, kana_path)
    }

    /// The tables shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_sources(
            BUNDLED_HAN,
            Path::new("<bundled>/han_radicals.tsv"),
            BUNDLED_KANA,
            Path::new("<bundled>/kana_sources.tsv"),
        )
        .expect("bundled radical tables are valid")
    }

    pub fn from_sources(
        han_text: &str,
        han_name: &Path,
        kana_text: &str,
        kana_name: &Path,
    ) -> Result<Self> {
        let han = parse_han(han_text, han_name)?;

        let anchor = |c: char| {
            han.get(&c).copied().ok_or_else(|| {
                Error::Config(format!(
                    "Han table {} has no entry for {c} (U+{:04X})",
                    han_name.display(),
                    c as u32
                ))
            })
        };
        let latin = anchor(LATIN_ANCHOR)?;
        let symbol = anchor(SYMBOL_ANCHOR)?;
        let mut numerals = [symbol; 10];
        for (slot, &c) in numerals.iter_mut().zip(CHINESE_NUMERALS.iter()) {
            *slot = anchor(c)?;
        }

        let kana = parse_kana(kana_text, kana_name, &han)?;

        Ok(RadicalTable {
            han,
            kana,
            numerals,
            latin,
            symbol,
            unknown_han: AtomicU64::new(0),
        })
    }

    pub fn radical_of(&self, c: char) -> RadicalId {
        self.resolve(c).0
    }

    /// Radical plus the rule that assigned it.
    pub fn resolve(&self, c: char) -> (RadicalId, Rule) {
        if let Some(&r) = self.han.get(&c) {
            return (r, Rule::Han);
        }
        if let Some(&(_, r)) = self.kana.get(&c) {
            return (r, Rule::Kana);
        }
        let folded = fold_fullwidth(c);
        if let Some(d) = folded.to_digit(10) {
            return (self.numerals[d as usize], Rule::Numeral);
        }
        if folded.is_ascii_alphabetic() {
            return (self.latin, Rule::Latin);
        }
        if is_han(c) {
            let seen = self.unknown_han.fetch_add(1, Ordering::Relaxed);
            if seen == 0 {
                log::warn!(
                    "Han character {c} (U+{:04X}) missing from radical table; using symbol radical",
                    c as u32
                );
            }
        }
        (self.symbol, Rule::Symbol)
    }

    pub fn annotate(&self, sentence: &str) -> FeatureSeq {
        FeatureSeq(sentence.chars().map(|c| self.radical_of(c)).collect())
    }

    /// Number of lookups of Han characters absent from the table.
    pub fn unknown_han_count(&self) -> u64 {
        self.unknown_han.load(Ordering::Relaxed)
    }

    pub fn han_len(&self) -> usize {
        self.han.len()
    }

    pub fn han_entries(&self) -> impl Iterator<Item = (char, RadicalId)> + '_ {
        self.han.iter().map(|(&c, &r)| (c, r))
    }

    /// Source kanji a kana character was derived from.
    pub fn kana_source(&self, c: char) -> Option<char> {
        self.kana.get(&c).map(|&(k, _)| k)
    }

    pub fn latin_radical(&self) -> RadicalId {
        self.latin
    }

    pub fn symbol_radical(&self) -> RadicalId {
        self.symbol
    }

    pub fn numeral_radical(&self, digit: u32) -> Option<RadicalId> {
        self.numerals.get(digit as usize).copied()
    }
}

fn parse_han(text: &str, name: &Path) -> Result<HashMap<char, RadicalId>> {
    let mut map = HashMap::new();
    for (lineno, line) in data_lines(text) {
        let err = |msg: String| Error::Parse {
            path: name.to_path_buf(),
            line: lineno,
            msg,
        };
        let (cp, idx) = line
            .split_once('\t')
            .ok_or_else(|| err(format!("expected `U+XXXX<TAB>radical`, got {line:?}")))?;
        let hex = cp
            .strip_prefix("U+")
            .ok_or_else(|| err(format!("codepoint {cp:?} lacks U+ prefix")))?;
        let c = u32::from_str_radix(hex, 16)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| err(format!("invalid codepoint {cp:?}")))?;
        let idx: u16 = idx
            .trim()
            .parse()
            .map_err(|_| err(format!("radical index {idx:?} is not an integer")))?;
        let radical = RadicalId::new(idx).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!(
                "{}:{lineno}: {msg}",
                name.display()
            )),
            other => other,
        })?;
        map.insert(c, radical);
    }
    Ok(map)
}

fn parse_kana(
    text: &str,
    name: &Path,
    han: &HashMap<char, RadicalId>,
) -> Result<HashMap<char, (char, RadicalId)>> {
    let mut map = HashMap::new();
    for (lineno, line) in data_lines(text) {
        let err = |msg: String| Error::Parse {
            path: name.to_path_buf(),
            line: lineno,
            msg,
        };
        let (kana, source) = line
            .split_once('\t')
            .ok_or_else(|| err(format!("expected `kana<TAB>kanji`, got {line:?}")))?;
        let kana = single_char(kana).ok_or_else(|| err(format!("{kana:?} is not one character")))?;
        let source =
            single_char(source).ok_or_else(|| err(format!("{source:?} is not one character")))?;
        let radical = *han.get(&source).ok_or_else(|| {
            err(format!(
                "source kanji {source} (U+{:04X}) not in Han table",
                source as u32
            ))
        })?;
        map.insert(kana, (source, radical));
    }

    let missing: Vec<char> = required_kana().filter(|c| !map.contains_key(c)).collect();
    if let Some(first) = missing.first() {
        return Err(Error::Validation(format!(
            "kana table {} is missing coverage for {} kana characters (first: {first} U+{:04X})",
            name.display(),
            missing.len(),
            *first as u32
        )));
    }
    Ok(map)
}

/// Hiragana U+3041..=U+3096, katakana U+30A1..=U+30FA and the kana marks.
pub fn required_kana() -> impl Iterator<Item = char> {
    (0x3041..=0x3096u32)
        .chain(0x30A1..=0x30FA)
        .filter_map(char::from_u32)
        .chain(KANA_MARKS)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    let c = it.next()?;
    it.next().is_none().then_some(c)
}

/// Folds fullwidth digits and Latin letters to ASCII; other characters pass through.
pub fn fold_fullwidth(c: char) -> char {
    match c as u32 {
        0xFF10..=0xFF19 | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A => {
            char::from_u32(c as u32 - 0xFF10 + 0x30).unwrap_or(c)
        }
        _ => c,
    }
}

/// CJK ideograph blocks.
pub fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x2F800..=0x2FA1F
        | 0x30000..=0x3134F)
}

/// Path of the bundled data directory, for tools that want the files on disk.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}
