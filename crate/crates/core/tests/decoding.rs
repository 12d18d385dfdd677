mod common;

use radnmt::corpus::{Vocab, EOS};
use radnmt::decoding::{beam_search, translate_file, translate_lines, BeamConfig};
use radnmt::model::Model;
use radnmt::radicals::RadicalTable;

fn cfg(beam: usize, max_len: usize) -> BeamConfig {
    BeamConfig {
        beam_size: beam,
        max_len: Some(max_len),
        ..BeamConfig::default()
    }
}

#[test]
fn beam_five_matches_brute_force() {
    let config = common::small_vocab_config();
    for seed in 0..20 {
        let model = common::random_model(&config, seed, 2.0);
        let pair = &common::random_pairs(seed, &config, 1, 3)[0];
        for max_len in 1..=3 {
            let out = beam_search(&model, &pair.src, &pair.feats, &cfg(5, max_len)).unwrap();
            let (best, lp) = common::brute_force_best(&model, &pair.src, &pair.feats, max_len);
            assert_eq!(out.best.tokens, best, "seed {seed}, max_len {max_len}");
            assert!((out.best.logprob - lp).abs() < 1e-10);
        }
    }
}

#[test]
fn beam_one_matches_greedy() {
    let config = common::tiny_config();
    for seed in 0..20 {
        let model = common::random_model(&config, seed + 50, 1.0);
        let pair = &common::random_pairs(seed + 50, &config, 1, 3)[0];
        let max_len = BeamConfig::default().max_len_for(pair.src.len() - 1);
        let out = beam_search(&model, &pair.src, &pair.feats, &BeamConfig::with_beam(1)).unwrap();
        let greedy = common::greedy_decode(&model, &pair.src, &pair.feats, max_len);
        assert_eq!(out.best.tokens, greedy, "seed {seed}");
    }
}

#[test]
fn logprob_is_sum_of_recomputed_steps() {
    let config = common::tiny_config();
    for seed in 0..5 {
        let model = common::random_model(&config, seed, 1.0);
        let pair = &common::random_pairs(seed, &config, 1, 3)[0];
        let out = beam_search(&model, &pair.src, &pair.feats, &cfg(3, 6)).unwrap();
        let h = &out.best;
        let summed: f64 = h.step_logprobs.iter().sum();
        assert!((summed - h.logprob).abs() < 1e-10);
        let independent = common::sequence_logprob(&model, &pair.src, &pair.feats, &h.tokens);
        assert!((independent - h.logprob).abs() < 1e-10, "{independent} vs {}", h.logprob);
        for w in h.step_logprobs.iter() {
            assert!(*w <= 0.0);
        }
        assert!(h.finished && *h.tokens.last().unwrap() == EOS);
    }
}

#[test]
fn wider_beam_never_worse() {
    let config = common::tiny_config();
    for seed in 0..10 {
        let model = common::random_model(&config, seed + 7, 1.5);
        let pair = &common::random_pairs(seed + 7, &config, 1, 3)[0];
        let one = beam_search(&model, &pair.src, &pair.feats, &cfg(1, 5)).unwrap();
        let five = beam_search(&model, &pair.src, &pair.feats, &cfg(5, 5)).unwrap();
        assert!(one.best.logprob <= five.best.logprob + 1e-12);
    }
}

#[test]
fn length_cap_forces_eos() {
    let config = common::tiny_config();
    let model = common::random_model(&config, 3, 1.0);
    let pair = &common::random_pairs(3, &config, 1, 3)[0];
    let out = beam_search(&model, &pair.src, &pair.feats, &cfg(2, 1)).unwrap();
    assert_eq!(out.best.tokens, vec![EOS]);
    assert!(out.best.truncated);
}

#[test]
fn n_best_is_sorted() {
    let config = common::tiny_config();
    let model = common::random_model(&config, 11, 1.0);
    let pair = &common::random_pairs(11, &config, 1, 3)[0];
    let c = BeamConfig {
        n_best: 4,
        ..cfg(5, 4)
    };
    let out = beam_search(&model, &pair.src, &pair.feats, &c).unwrap();
    assert!(!out.n_best.is_empty());
    for w in out.n_best.windows(2) {
        assert!(w[0].logprob >= w[1].logprob);
    }
    assert_eq!(out.n_best[0], out.best);
}

#[test]
fn never_emits_pad_or_bos() {
    let config = common::tiny_config();
    for seed in 0..10 {
        let model = common::random_model(&config, seed, 3.0);
        let pair = &common::random_pairs(seed, &config, 1, 3)[0];
        let out = beam_search(&model, &pair.src, &pair.feats, &cfg(5, 8)).unwrap();
        for h in &out.n_best {
            assert!(h.tokens.iter().all(|&t| t > 1), "{:?}", h.tokens);
        }
    }
}

#[test]
fn empty_source_is_an_error() {
    let config = common::tiny_config();
    let model = Model::<f64>::new(config, 0).unwrap();
    assert!(beam_search(&model, &[EOS], &[0], &BeamConfig::default()).is_err());
}

fn toy_vocabs() -> (Vocab, Vocab) {
    let v = |s: &str| radnmt::corpus::build_vocab(&[s], 1, None);
    (v("水木火"), v("山川"))
}

#[test]
fn translate_file_handles_empty_input_and_is_deterministic() {
    let (src, tgt) = toy_vocabs();
    let mut config = common::tiny_config();
    config.src_vocab = src.len();
    config.tgt_vocab = tgt.len();
    config.feature_vocab = radnmt::corpus::FEATURE_VOCAB_SIZE;
    let model = common::random_model(&config, 1, 1.0);
    let table = RadicalTable::bundled();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("out.txt");
    let n = translate_file(&model, &empty, &out, &src, &tgt, &table, &BeamConfig::default(), "?").unwrap();
    assert_eq!(n, 0);
    assert_eq!(std::fs::read(&out).unwrap(), b"");

    let input = dir.path().join("in.txt");
    std::fs::write(&input, "水木\n\n火水火\n未知\n").unwrap();
    let out2 = dir.path().join("out2.txt");
    translate_file(&model, &input, &out, &src, &tgt, &table, &BeamConfig::default(), "?").unwrap();
    translate_file(&model, &input, &out2, &src, &tgt, &table, &BeamConfig::default(), "?").unwrap();
    let a = std::fs::read_to_string(&out).unwrap();
    assert_eq!(a, std::fs::read_to_string(&out2).unwrap());
    assert_eq!(a.lines().count(), 4);
    assert_eq!(a.lines().nth(1), Some(""));

    // order preserved regardless of threading
    let lines: Vec<String> = a.lines().map(String::from).collect();
    let inputs: Vec<String> = ["水木", "", "火水火", "未知"].iter().map(|s| s.to_string()).collect();
    let one_by_one: Vec<String> = inputs
        .iter()
        .map(|l| translate_lines(&model, &[l.clone()], &src, &tgt, &table, &BeamConfig::default(), "?").unwrap()[0].clone())
        .collect();
    assert_eq!(lines, one_by_one);
}
