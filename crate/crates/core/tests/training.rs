mod common;

use radnmt::corpus::ExamplePair;
use radnmt::model::{Checkpoint, Model, ModelConfig};
use radnmt::training::{perplexity, train, LrSchedule, StepStats, TrainConfig, TrainData, TrainReport};

fn toy_model(toy: &common::Toy, seed: u64) -> Model<f64> {
    toy_model_sized(toy, seed, 16)
}

fn toy_model_sized(toy: &common::Toy, seed: u64, hidden: usize) -> Model<f64> {
    let mut c = ModelConfig::new(toy.src_vocab.len(), toy.tgt_vocab.len());
    c.char_embed = 3 * hidden / 4;
    c.feature_embed = hidden / 4;
    c.hidden = hidden;
    Model::new(c, seed).unwrap()
}

fn run(config: &TrainConfig, toy: &common::Toy) -> (TrainReport, Vec<StepStats>, Model<f64>) {
    run_with(config, toy, toy_model(toy, 1))
}

fn run_with(config: &TrainConfig, toy: &common::Toy, mut model: Model<f64>) -> (TrainReport, Vec<StepStats>, Model<f64>) {
    let mut steps = Vec::new();
    let data = TrainData { train: &toy.train, dev: &toy.dev, vocabs: None };
    let report = train(config, &mut model, &data, &mut |s| steps.push(s.clone())).unwrap();
    (report, steps, model)
}

#[test]
fn step_count_follows_batching() {
    let toy = common::toy();
    assert_eq!(toy.train.len(), 50);
    let config = TrainConfig { epochs: 2, batch_size: 10, ..TrainConfig::default() };
    let (report, steps, _) = run(&config, &toy);
    assert_eq!(report.steps, 10);
    assert_eq!(steps.len(), 10);
    assert_eq!(steps.iter().filter(|s| s.epoch == 2).count(), 5);
    assert_eq!(steps.iter().map(|s| s.tokens).take(5).sum::<usize>(), toy.train.iter().map(|p| p.tgt.len() - 1).sum::<usize>());
}

#[test]
fn identical_seeds_give_identical_runs() {
    let toy = common::toy();
    let config = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let (a, sa, ma) = run(&config, &toy);
    let (b, sb, mb) = run(&config, &toy);
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(sa, sb);
    assert_eq!(ma, mb);
    let (c, _, _) = run(&TrainConfig { seed: 2, ..config }, &toy);
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn post_clip_norms_respect_the_threshold() {
    let toy = common::toy();
    for max_norm in [0.05, 1.0] {
        let config = TrainConfig { epochs: 2, max_norm, dropout: 0.3, ..TrainConfig::default() };
        let (_, steps, _) = run(&config, &toy);
        for s in &steps {
            assert!(s.post_clip_norm <= max_norm * (1.0 + 1e-12), "{s:?}");
            if s.pre_clip_norm <= max_norm {
                assert_eq!(s.pre_clip_norm, s.post_clip_norm);
            }
        }
        assert!(steps.iter().any(|s| s.pre_clip_norm > max_norm) || max_norm == 1.0);
    }
}

#[test]
fn training_nll_falls_over_the_first_epochs() {
    let toy = common::toy();
    let config = TrainConfig { epochs: 5, dropout: 0.0, schedule: LrSchedule::Constant, ..TrainConfig::default() };
    let (report, _, _) = run_with(&config, &toy, toy_model_sized(&toy, 1, 32));
    let nll: Vec<f64> = report.epochs.iter().map(|e| e.train_nll).collect();
    assert!(nll.windows(2).all(|w| w[1] < w[0]), "{nll:?}");
}

#[test]
fn learning_rate_never_increases_and_halves_on_plateau() {
    let toy = common::toy();
    let config = TrainConfig {
        epochs: 8,
        patience: 0,
        schedule: LrSchedule::Plateau { min_improvement: 0.5 },
        ..TrainConfig::default()
    };
    let (report, steps, _) = run(&config, &toy);
    assert!(steps.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert!(report.epochs.windows(2).all(|w| w[1].lr == w[0].lr || w[1].lr == w[0].lr * 0.5));
    assert!(report.epochs.last().unwrap().lr < 1.0);

    let fixed = TrainConfig { epochs: 4, schedule: LrSchedule::FixedEpoch { start_epoch: 2 }, ..TrainConfig::default() };
    let (report, _, _) = run(&fixed, &toy);
    let lrs: Vec<f64> = report.epochs.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, vec![1.0, 1.0, 0.5, 0.25]);
}

#[test]
fn patience_stops_early() {
    let toy = common::toy();
    let config = TrainConfig {
        epochs: 20,
        patience: 2,
        lr: 1e-6,
        schedule: LrSchedule::Plateau { min_improvement: 0.5 },
        ..TrainConfig::default()
    };
    let (report, _, _) = run(&config, &toy);
    assert_eq!(report.epochs.len(), 3);
}

#[test]
fn perplexity_does_not_depend_on_batch_size() {
    let toy = common::toy();
    let model = toy_model(&toy, 4);
    let reference = perplexity(&model, &toy.dev, 1).unwrap();
    for b in [2, 3, 7, 100] {
        assert!((perplexity(&model, &toy.dev, b).unwrap() - reference).abs() < 1e-9);
    }
    let empty: Vec<ExamplePair> = Vec::new();
    assert!(perplexity(&model, &empty, 4).is_err());
}

#[test]
fn checkpoints_are_written_each_epoch_and_reload() {
    let toy = common::toy();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { epochs: 2, checkpoint_dir: Some(dir.path().to_path_buf()), ..TrainConfig::default() };
    let mut model = toy_model(&toy, 1);
    let data = TrainData { train: &toy.train, dev: &toy.dev, vocabs: Some((&toy.src_vocab, &toy.tgt_vocab)) };
    let report = train(&config, &mut model, &data, &mut |_| {}).unwrap();
    assert_eq!(report.checkpoints.len(), 2);
    assert!(report.checkpoints[1].ends_with("epoch_002.rnmt"));
    let last = Checkpoint::<f64>::load(&report.checkpoints[1]).unwrap();
    for ((_, a), (_, b)) in last.model.params.iter().zip(model.params.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    let ppl = perplexity(&last.model, &toy.dev, 10).unwrap();
    assert!((ppl - report.epochs[1].dev_ppl.unwrap()).abs() <= 1e-12);
    assert!(report.to_tsv().starts_with("epoch\ttrain_nll\tdev_ppl\tlr\tseconds\n"));
}

#[test]
fn invalid_configs_fail_before_training() {
    let toy = common::toy();
    for bad in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { dropout: 1.0, ..TrainConfig::default() },
        TrainConfig { lr: -1.0, ..TrainConfig::default() },
        TrainConfig { max_norm: 0.0, ..TrainConfig::default() },
    ] {
        let mut model = toy_model(&toy, 1);
        let data = TrainData { train: &toy.train, dev: &toy.dev, vocabs: None };
        assert!(matches!(train(&bad, &mut model, &data, &mut |_| {}), Err(radnmt::Error::Config(_))), "{bad:?}");
    }
}
