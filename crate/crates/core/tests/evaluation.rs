mod common;

use proptest::prelude::*;
use radnmt::decoding::BeamConfig;
use radnmt::evaluation::{bleu, evaluate, write_eval_outputs, BleuReport, EvalInputs, Tokenization};
use radnmt::model::{Model, ModelConfig};
use radnmt::radicals::RadicalTable;

#[test]
fn identical_corpus_scores_100() {
    let h = ["植物の細胞", "反応速度を測定した"];
    let r = bleu(&h, &h, 4, Tokenization::Char, false).unwrap();
    assert_eq!(r.bleu, 100.0);
    assert_eq!(r.brevity_penalty, 1.0);
}

#[test]
fn four_versus_five_tokens() {
    let r = bleu(&["a b c d"], &["a b c d e"], 4, Tokenization::Whitespace, false).unwrap();
    assert_eq!(r.precisions, vec![1.0; 4]);
    assert!((r.bleu - 77.88).abs() <= 0.01, "{}", r.bleu);
    assert_eq!((r.hyp_len, r.ref_len), (4, 5));
}

#[test]
fn hand_computed_trigram_bleu() {
    // p1 = 3/4, p2 = 2/3, p3 = 1/2, BP = 1
    let r = bleu(&["a b c x"], &["a b c d"], 3, Tokenization::Whitespace, false).unwrap();
    assert_eq!(r.precisions, vec![0.75, 2.0 / 3.0, 0.5]);
    assert!((r.bleu - 100.0 * 0.25f64.powf(1.0 / 3.0)).abs() < 1e-9);
}

#[test]
fn zero_precision_and_smoothing() {
    let r = bleu(&["abcx"], &["abcd"], 4, Tokenization::Char, false).unwrap();
    assert_eq!(r.precisions[3], 0.0);
    assert_eq!(r.bleu, 0.0);
    let s = bleu(&["abcx"], &["abcd"], 4, Tokenization::Char, true).unwrap();
    assert_eq!(s.precisions[3], 0.5);
    assert!(s.bleu > 0.0);
    assert_eq!(bleu(&["xyz"], &["abc"], 4, Tokenization::Char, false).unwrap().bleu, 0.0);
}

#[test]
fn empty_hypotheses_and_mismatched_lengths() {
    let r = bleu(&[""], &["abc"], 4, Tokenization::Char, false).unwrap();
    assert_eq!((r.bleu, r.brevity_penalty), (0.0, 0.0));
    assert!(bleu(&["a", "b"], &["a"], 4, Tokenization::Char, false).is_err());
    assert_eq!("whitespace".parse::<Tokenization>().unwrap(), Tokenization::Whitespace);
    assert!("words".parse::<Tokenization>().is_err());
}

#[test]
fn one_character_difference_is_below_100() {
    let r = bleu(&["植物細胞の構造"], &["植物細胞の講造"], 4, Tokenization::Char, false).unwrap();
    assert!(r.bleu < 100.0 && r.bleu > 0.0);
}

fn corpus() -> impl Strategy<Value = Vec<(String, String)>> {
    proptest::collection::vec(("[a-e ]{0,12}", "[a-e ]{1,12}"), 1..6)
}

proptest! {
    #[test]
    fn self_bleu_is_100(lines in proptest::collection::vec("[a-z]{4,10}", 1..6)) {
        prop_assert_eq!(bleu(&lines, &lines, 4, Tokenization::Char, false).unwrap().bleu, 100.0);
    }

    #[test]
    fn bleu_is_permutation_invariant(pairs in corpus(), rot in 0usize..6) {
        let (h, r): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
        let mut rotated = pairs.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        let (h2, r2): (Vec<String>, Vec<String>) = rotated.into_iter().unzip();
        for tok in [Tokenization::Char, Tokenization::Whitespace] {
            let a = bleu(&h, &r, 4, tok, false).unwrap();
            let b = bleu(&h2, &r2, 4, tok, false).unwrap();
            prop_assert!((a.bleu - b.bleu).abs() < 1e-9);
        }
    }

    #[test]
    fn precisions_reproduce_the_score(pairs in corpus(), smoothing in any::<bool>()) {
        let (h, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let rep = bleu(&h, &r, 4, Tokenization::Char, smoothing).unwrap();
        prop_assert!((BleuReport::combine(&rep.precisions, rep.brevity_penalty) - rep.bleu).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&rep.bleu));
    }
}

#[test]
fn evaluate_writes_metrics_and_examples() {
    let toy = common::toy();
    let mut c = ModelConfig::new(toy.src_vocab.len(), toy.tgt_vocab.len());
    c.char_embed = 6;
    c.feature_embed = 2;
    c.hidden = 8;
    let model = Model::<f64>::new(c, 1).unwrap();
    let table = RadicalTable::bundled();
    let sources: Vec<String> = toy.train_text.iter().take(5).map(|p| p.0.clone()).collect();
    let references: Vec<String> = toy.train_text.iter().take(5).map(|p| p.1.clone()).collect();
    let beam = BeamConfig::with_beam(3);
    let inputs = EvalInputs {
        sources: &sources,
        references: &references,
        src_vocab: &toy.src_vocab,
        tgt_vocab: &toy.tgt_vocab,
        table: &table,
        beam: &beam,
        tokenization: Tokenization::Char,
        batch_size: 2,
    };
    let report = evaluate(&model, &inputs).unwrap();
    assert_eq!(report.sentences, 5);
    assert_eq!(report.hypotheses.len(), 5);
    // an untrained model is close to uniform
    let v = toy.tgt_vocab.len() as f64;
    assert!(report.perplexity > 0.5 * v && report.perplexity < 2.0 * v, "{}", report.perplexity);

    let dir = tempfile::tempdir().unwrap();
    write_eval_outputs(dir.path(), &report, &sources, &references).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    assert!(metrics.starts_with("metric\tvalue\nbleu\t"));
    assert!(metrics.contains("tokenization\tchar"));
    let examples = std::fs::read_to_string(dir.path().join("examples.txt")).unwrap();
    assert_eq!(examples.matches("REFERENCE:").count(), 5);
    assert!(examples.contains(&format!("SOURCE:    {}", sources[0])));
}
