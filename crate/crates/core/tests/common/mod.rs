//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radnmt::corpus::{Batch, ExamplePair, BOS, EOS, PAD};
use radnmt::model::{Dropout, Model, ModelConfig};
use radnmt::numerics::{Tape, Tensor};

pub use radnmt::model::tiny_config;

/// Random pair with 1..=max_len source characters and 1..=max_len target characters.
pub fn random_pair(rng: &mut ChaCha8Rng, config: &ModelConfig, max_len: usize) -> ExamplePair {
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
}

pub fn random_pairs(seed: u64, config: &ModelConfig, count: usize, max_len: usize) -> Vec<ExamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_pair(&mut rng, config, max_len)).collect()
}

pub fn batch_of(pairs: &[ExamplePair]) -> Batch {
    Batch::from_pairs(&pairs.iter().collect::<Vec<_>>())
}

/// Log-probability of a full target sequence (`BOS`-less, EOS-terminated),
/// scored with a fresh batch-of-one teacher-forced pass.
pub fn sequence_logprob(model: &Model<f64>, src: &[usize], feats: &[u16], tokens: &[usize]) -> f64 {
    let mut tgt = vec![BOS];
    tgt.extend_from_slice(tokens);
    let pair = ExamplePair {
        src: src.to_vec(),
        feats: feats.to_vec(),
        tgt,
    };
    let (nll, _) = model.eval_loss(&batch_of(&[pair])).unwrap();
    -nll
}

/// Per-step distribution after a target prefix, recomputed from scratch.
pub fn next_logprobs(model: &Model<f64>, src: &[usize], feats: &[u16], prefix: &[usize]) -> Vec<f64> {
    let arch = &model.arch;
    let tape = Tape::<f64>::new();
    let bound = model.bind(&tape).unwrap();
    let mut off = Dropout::off();
    let enc = arch
        .encode(&tape, &bound, &[src.to_vec()], &[feats.to_vec()], &[vec![true; src.len()]], &mut off)
        .unwrap();
    let mut state = enc.init;
    let mut htilde = tape.constant(Tensor::zeros(&[1, arch.config.hidden]));
    let mut prev = BOS;
    let mut logits = None;
    for &tok in prefix.iter().chain(std::iter::once(&usize::MAX)) {
        let step = arch.decode_step(&tape, &bound, &[prev], htilde, state, &enc, &mut off).unwrap();
        state = step.state;
        htilde = step.htilde;
        logits = Some(step.logits);
        prev = tok;
    }
    let row = tape.value(logits.unwrap()).data().to_vec();
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row.iter().map(|v| v - max - z.ln()).collect()
}

/// Greedy decoding: argmax (lowest id on ties) over tokens other than PAD/BOS,
/// EOS forced once `max_len` tokens would otherwise be exceeded.
pub fn greedy_decode(model: &Model<f64>, src: &[usize], feats: &[u16], max_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    loop {
        if out.len() + 1 == max_len {
            out.push(EOS);
            return out;
        }
        let lp = next_logprobs(model, src, feats, &out);
        let mut best = None;
        for (t, &v) in lp.iter().enumerate() {
            if t == PAD || t == BOS {
                continue;
            }
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        let tok = best.unwrap().0;
        out.push(tok);
        if tok == EOS {
            return out;
        }
    }
}

/// Highest-probability EOS-terminated sequence of at most `max_len` tokens.
pub fn brute_force_best(model: &Model<f64>, src: &[usize], feats: &[u16], max_len: usize) -> (Vec<usize>, f64) {
    let vocab = model.config().tgt_vocab;
    let emit: Vec<usize> = (0..vocab).filter(|&t| t != PAD && t != BOS && t != EOS).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut prefixes: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &prefixes {
            let mut seq = p.clone();
            seq.push(EOS);
            let lp = sequence_logprob(model, src, feats, &seq);
            if best.as_ref().map_or(true, |(_, b)| lp > *b) {
                best = Some((seq, lp));
            }
            for &t in &emit {
                let mut q = p.clone();
                q.push(t);
                next.push(q);
            }
        }
        prefixes = next;
    }
    best.unwrap()
}

/// Toy corpus encoded with vocabularies built from its training side.
pub struct Toy {
    pub src_vocab: radnmt::corpus::Vocab,
    pub tgt_vocab: radnmt::corpus::Vocab,
    pub train: Vec<ExamplePair>,
    pub dev: Vec<ExamplePair>,
    pub train_text: Vec<(String, String)>,
}

pub fn toy() -> Toy {
    use radnmt::corpus::{build_vocab, encode_pair, read_parallel};
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy");
    let table = radnmt::radicals::RadicalTable::bundled();
    let train_text = read_parallel(&dir.join("train.ja"), &dir.join("train.zh")).unwrap();
    let dev_text = read_parallel(&dir.join("dev.ja"), &dir.join("dev.zh")).unwrap();
    let src: Vec<&str> = train_text.iter().map(|(s, _)| s.as_str()).collect();
    let tgt: Vec<&str> = train_text.iter().map(|(_, t)| t.as_str()).collect();
    let src_vocab = build_vocab(&src, 1, None);
    let tgt_vocab = build_vocab(&tgt, 1, None);
    let enc = |v: &[(String, String)]| {
        v.iter()
            .map(|(s, t)| encode_pair(s, t, &src_vocab, &tgt_vocab, &table))
            .collect::<Vec<_>>()
    };
    Toy {
        train: enc(&train_text),
        dev: enc(&dev_text),
        src_vocab,
        tgt_vocab,
        train_text,
    }
}

/// Model with every weight redrawn from `[-scale, scale)`, for peaked distributions.
pub fn random_model(config: &ModelConfig, seed: u64, scale: f64) -> Model<f64> {
    let mut model = Model::<f64>::new(config.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    model
}

/// Target vocabulary 5 (one real character besides the reserved ids).
pub fn small_vocab_config() -> ModelConfig {
    ModelConfig {
        src_vocab: 5,
        tgt_vocab: 5,
        ..tiny_config()
    }
}

/// Independent central-difference oracle: largest
/// `|a - n| / max(|a|, |n|, 1e-8)` over every parameter coordinate.
pub fn fd_max_rel_error<F>(store: &mut radnmt::numerics::ParamStore<f64>, eps: f64, f: F) -> f64
where
    F: Fn(&Tape<f64>, &radnmt::numerics::ParamStore<f64>) -> radnmt::Result<radnmt::numerics::Var>,
{
    store.zero_grad();
    let tape = Tape::new();
    let loss = f(&tape, store).unwrap();
    tape.backward_into(loss, store).unwrap();
    let value = |s: &radnmt::numerics::ParamStore<f64>| {
        let t = Tape::new();
        let l = f(&t, s).unwrap();
        t.scalar(l)
    };
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + eps;
            let up = value(store);
            store.get_mut(id).value.data_mut()[k] = orig - eps;
            let down = value(store);
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = store.grad(id).data()[k];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Synthetic corpus where each target token names the radical class of the
/// aligned source character. Test sentences use only characters absent from
/// training, so their radicals are the only usable signal.
pub struct RadicalSignal {
    pub src_vocab: radnmt::corpus::Vocab,
    pub tgt_vocab: radnmt::corpus::Vocab,
    pub train: Vec<ExamplePair>,
    pub test: Vec<ExamplePair>,
}

pub const SIGNAL_CLASSES: [(u16, char); 4] = [(85, 'W'), (75, 'T'), (30, 'M'), (64, 'H')];

pub fn radical_signal(seed: u64) -> RadicalSignal {
    use radnmt::corpus::{build_vocab, encode_pair};
    let table = radnmt::radicals::RadicalTable::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = Vec::new();
    for &(radical, label) in &SIGNAL_CLASSES {
        let mut chars: Vec<char> = table
            .han_entries()
            .filter(|&(c, r)| r.index() == radical && (0x4E00..=0x9FFF).contains(&(c as u32)))
            .map(|(c, _)| c)
            .collect();
        chars.sort_unstable();
        chars.truncate(16);
        let (seen, unseen) = chars.split_at(10);
        pools.push((seen.to_vec(), unseen.to_vec(), label));
    }
    let sample = |test: bool, rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(2..=4);
        let mut src = String::new();
        let mut tgt = String::new();
        for _ in 0..n {
            let (seen, unseen, label) = &pools[rng.gen_range(0..pools.len())];
            let pool = if test { unseen } else { seen };
            src.push(pool[rng.gen_range(0..pool.len())]);
            tgt.push(*label);
        }
        (src, tgt)
    };
    let train_text: Vec<(String, String)> = (0..200).map(|_| sample(false, &mut rng)).collect();
    let test_text: Vec<(String, String)> = (0..60).map(|_| sample(true, &mut rng)).collect();
    let src_vocab = build_vocab(&train_text.iter().map(|p| p.0.as_str()).collect::<Vec<_>>(), 1, None);
    let tgt_vocab = build_vocab(&train_text.iter().map(|p| p.1.as_str()).collect::<Vec<_>>(), 1, None);
    let enc = |v: &[(String, String)]| {
        v.iter().map(|(s, t)| encode_pair(s, t, &src_vocab, &tgt_vocab, &table)).collect::<Vec<_>>()
    };
    RadicalSignal { train: enc(&train_text), test: enc(&test_text), src_vocab, tgt_vocab }
}
