mod common;

use radnmt::corpus::ExamplePair;
use radnmt::model::{param_shapes, AttentionScore, Checkpoint, Model, ModelConfig};
use radnmt::training::perplexity;

fn small(feature_path: bool) -> ModelConfig {
    let mut c = ModelConfig::new(9, 7);
    c.char_embed = 5;
    c.feature_embed = 3;
    c.hidden = 6;
    c.feature_vocab = 215;
    c.feature_path = feature_path;
    c
}

fn total_nll(model: &Model<f64>, pairs: &[ExamplePair]) -> f64 {
    model.eval_loss(&common::batch_of(pairs)).unwrap().0
}

#[test]
fn ablation_removes_only_the_feature_table_and_widened_inputs() {
    let full = small(true);
    let base = full.baseline();
    let count = |c: &ModelConfig| param_shapes(c).iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>();
    let (q, p2) = (full.hidden, full.feature_embed);
    assert_eq!(count(&full) - count(&base), 215 * p2 + 2 * p2 * 4 * q);
    let base_model = Model::<f64>::new(base, 1).unwrap();
    assert!(base_model.params.id("feature_embed").is_none());
    assert_eq!(base_model.params.value(base_model.params.id("enc_fwd.input").unwrap()).shape(), &[5, 24]);
}

#[test]
fn baseline_ignores_features_and_full_model_uses_them() {
    let pairs = common::random_pairs(4, &small(true), 3, 4);
    let mut shifted = pairs.clone();
    for p in &mut shifted {
        for f in p.feats.iter_mut().filter(|f| **f != 0) {
            *f = (*f % 200) + 7;
        }
    }
    let base = Model::<f64>::new(small(false), 2).unwrap();
    assert_eq!(total_nll(&base, &pairs), total_nll(&base, &shifted));
    let full = Model::<f64>::new(small(true), 2).unwrap();
    assert_ne!(total_nll(&full, &pairs), total_nll(&full, &shifted));
}

#[test]
fn padding_does_not_change_per_sentence_loss() {
    for attention in [AttentionScore::General, AttentionScore::Dot] {
        let mut config = small(true);
        config.attention = attention;
        let model = Model::<f64>::new(config.clone(), 3).unwrap();
        let pairs = common::random_pairs(11, &config, 6, 6);
        let alone: f64 = pairs.iter().map(|p| total_nll(&model, std::slice::from_ref(p))).sum();
        let batched = total_nll(&model, &pairs);
        assert!((alone - batched).abs() < 1e-12, "{attention:?}: {alone} vs {batched}");
    }
}

#[test]
fn disabling_input_feeding_feeds_zeros() {
    let on = small(true);
    let off = ModelConfig { input_feed: false, ..on.clone() };
    assert_eq!(param_shapes(&on), param_shapes(&off));
    let pairs = common::random_pairs(1, &on, 4, 4);
    let a = total_nll(&Model::<f64>::new(on, 1).unwrap(), &pairs);
    let b = total_nll(&Model::<f64>::new(off, 1).unwrap(), &pairs);
    assert!(b.is_finite() && a != b);
}

#[test]
fn zero_output_layer_gives_uniform_perplexity() {
    let config = small(true);
    let mut model = Model::<f64>::new(config.clone(), 5).unwrap();
    for name in ["out.w", "out.b"] {
        let id = model.params.id(name).unwrap();
        model.params.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let pairs = common::random_pairs(8, &config, 9, 5);
    let ppl = perplexity(&model, &pairs, 4).unwrap();
    assert!((ppl - config.tgt_vocab as f64).abs() < 1e-9, "{ppl}");
}

#[test]
fn initialization_is_seeded_and_bounded() {
    let a = Model::<f64>::new(small(true), 9).unwrap();
    assert_eq!(a, Model::<f64>::new(small(true), 9).unwrap());
    assert_ne!(a, Model::<f64>::new(small(true), 10).unwrap());
    let q = a.config().hidden;
    for (_, p) in a.params.iter() {
        let forget = p.name.ends_with(".bias");
        for (k, &v) in p.value.data().iter().enumerate() {
            if forget && (q..2 * q).contains(&k) {
                assert_eq!(v, 1.0);
            } else {
                assert!((-0.1..0.1).contains(&v), "{} {v}", p.name);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let toy = common::toy();
    let mut config = ModelConfig::new(toy.src_vocab.len(), toy.tgt_vocab.len());
    config.char_embed = 12;
    config.feature_embed = 4;
    config.hidden = 10;
    let model = Model::<f64>::new(config, 3).unwrap();
    let mut ckpt = Checkpoint::new(model, toy.src_vocab.clone(), toy.tgt_vocab.clone());
    ckpt.meta.insert("epoch".into(), "1".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rnmt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let before = perplexity(&ckpt.model, &toy.dev, 10).unwrap();
    let after = perplexity(&back.model, &toy.dev, 10).unwrap();
    assert!((before - after).abs() <= 1e-12);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    let bytes = std::fs::read(&path).unwrap();
    assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn f32_model_trains_a_forward_pass() {
    let config = small(true);
    let pairs = common::random_pairs(2, &config, 3, 4);
    let m32 = radnmt::Model32::new(config.clone(), 1).unwrap();
    let m64 = Model::<f64>::new(config, 1).unwrap();
    let a = m32.eval_loss(&common::batch_of(&pairs)).unwrap().0 as f64;
    let b = total_nll(&m64, &pairs);
    assert!((a - b).abs() < 1e-3 * b.abs(), "{a} vs {b}");
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small(true);
    c.hidden = 0;
    assert!(Model::<f64>::new(c, 1).is_err());
    let mut c = small(true);
    c.layers = 2;
    assert!(matches!(Model::<f64>::new(c, 1), Err(radnmt::Error::Config(_))));
}
