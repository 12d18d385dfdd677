//! The `radnmt` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numeric failure (including a failed gradient check).

mod config;
mod manifest;

pub use config::{env_seed, load_config, ConfigLayers, RunConfig, ScheduleKind, KEYS, SEED_ENV};
pub use manifest::{sha256_file, RunManifest};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::corpus::{build_vocab, encode_pair, filter_by_length, read_parallel};
use crate::decoding::{translate_file, BeamConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, write_eval_outputs, EvalInputs, Tokenization};
use crate::io::{read_lines, write_text};
use crate::model::{full_model_gradcheck, Checkpoint, Model, GRADCHECK_EPS};
use crate::radicals::RadicalTable;
use crate::training::{train, TrainData, TrainReport};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_UNK: &str = "<unk>";

#[derive(Parser, Debug)]
#[command(name = "radnmt", version, about = "Character-level Japanese to Chinese NMT with radical features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
pub struct Tables {
    /// Han radical table (`U+XXXX<TAB>radical`); defaults to the bundled table.
    #[arg(long)]
    pub han_table: Option<PathBuf>,
    /// Kana source table (`kana<TAB>kanji`); defaults to the bundled table.
    #[arg(long)]
    pub kana_table: Option<PathBuf>,
}

impl Tables {
    pub fn load(&self, manifest: &mut RunManifest) -> Result<RadicalTable> {
        match (&self.han_table, &self.kana_table) {
            (None, None) => Ok(RadicalTable::bundled()),
            (Some(han), Some(kana)) => {
                manifest.input(han)?;
                manifest.input(kana)?;
                RadicalTable::load(han, kana)
            }
            _ => Err(Error::Usage("--han-table and --kana-table must be given together".into())),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write `char|radical` pairs for every character of every line.
    Annotate {
        #[command(flatten)]
        tables: Tables,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a character vocabulary (`id<TAB>char`) from a text file.
    BuildVocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long)]
        max_size: Option<usize>,
    },
    /// Train a model; writes checkpoints, a report TSV and a log into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train_src: PathBuf,
        #[arg(long)]
        train_tgt: PathBuf,
        #[arg(long)]
        dev_src: PathBuf,
        #[arg(long)]
        dev_tgt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Size profile applied before the config file: toy or paper.
        #[arg(long)]
        profile: Option<String>,
        /// Dropout preset applied before the config file: paper-default or paper-best.
        #[arg(long)]
        preset: Option<String>,
        /// Override a config key; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        tables: Tables,
    },
    /// Translate a file line by line with beam search.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        tables: Tables,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        max_len: Option<usize>,
        /// Text written in place of unknown target characters.
        #[arg(long, default_value = DEFAULT_UNK)]
        unk: String,
    },
    /// Perplexity and BLEU against references.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "char")]
        tokenization: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, default_value_t = 10)]
        batch_size: usize,
        #[command(flatten)]
        tables: Tables,
    },
    /// Finite-difference check of the full model gradient on a tiny random model.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Annotate { tables, input, output } => annotate(&tables, &input, &output),
        Command::BuildVocab {
            input,
            output,
            min_count,
            max_size,
        } => {
            let mut manifest = RunManifest::start("build-vocab");
            manifest.input(&input)?;
            manifest.config.insert("min_count".into(), min_count.to_string());
            manifest
                .config
                .insert("max_size".into(), max_size.map_or_else(|| "none".into(), |m| m.to_string()));
            let lines = read_lines(&input)?;
            let vocab = build_vocab(&lines, min_count, max_size);
            vocab.save(&output)?;
            manifest.write(&sidecar(&output))?;
            println!("{} entries written to {}", vocab.len(), output.display());
            Ok(0)
        }
        Command::Train {
            config,
            train_src,
            train_tgt,
            dev_src,
            dev_tgt,
            out,
            profile,
            preset,
            overrides,
            seed,
            tables,
        } => {
            let text = crate::io::read_utf8(&config)?;
            let cfg = ConfigLayers {
                profile: profile.as_deref(),
                preset: preset.as_deref(),
                env_seed: env_seed()?,
                file: Some((&text, &config)),
                overrides: &overrides,
                seed,
            }
            .resolve()?;
            let mut manifest = RunManifest::start("train");
            manifest.input(&config)?;
            let files = TrainFiles {
                train_src: &train_src,
                train_tgt: &train_tgt,
                dev_src: &dev_src,
                dev_tgt: &dev_tgt,
            };
            let report = train_command(&cfg, &files, &tables, &out, manifest)?;
            if let Some(last) = report.epochs.last() {
                println!(
                    "trained {} epochs, {} steps; final train nll {:.4}",
                    report.epochs.len(),
                    report.steps,
                    last.train_nll
                );
            }
            Ok(0)
        }
        Command::Translate {
            model,
            tables,
            input,
            output,
            beam,
            max_len,
            unk,
        } => {
            let mut manifest = RunManifest::start("translate");
            manifest.input(&model)?;
            manifest.input(&input)?;
            let table = tables.load(&mut manifest)?;
            let ckpt = Checkpoint::<f64>::load(&model)?;
            let cfg = BeamConfig {
                beam_size: beam,
                max_len,
                ..BeamConfig::default()
            };
            manifest.config.insert("beam".into(), beam.to_string());
            manifest
                .config
                .insert("max_len".into(), max_len.map_or_else(|| "none".into(), |m| m.to_string()));
            manifest.config.insert("unk".into(), unk.clone());
            let n = translate_file(&ckpt.model, &input, &output, &ckpt.src_vocab, &ckpt.tgt_vocab, &table, &cfg, &unk)?;
            manifest.write(&sidecar(&output))?;
            println!("{n} lines translated");
            Ok(0)
        }
        Command::Eval {
            model,
            src,
            reference,
            tokenization,
            out,
            beam,
            max_len,
            batch_size,
            tables,
        } => {
            let tokenization: Tokenization = tokenization.parse()?;
            let mut manifest = RunManifest::start("eval");
            for p in [&model, &src, &reference] {
                manifest.input(p)?;
            }
            let table = tables.load(&mut manifest)?;
            let ckpt = Checkpoint::<f64>::load(&model)?;
            let sources = read_lines(&src)?;
            let references = read_lines(&reference)?;
            let beam_cfg = BeamConfig {
                beam_size: beam,
                max_len,
                ..BeamConfig::default()
            };
            for (k, v) in [
                ("beam", beam.to_string()),
                ("max_len", max_len.map_or_else(|| "none".into(), |m| m.to_string())),
                ("batch_size", batch_size.to_string()),
                ("tokenization", tokenization.to_string()),
            ] {
                manifest.config.insert(k.into(), v);
            }
            let report = evaluate(
                &ckpt.model,
                &EvalInputs {
                    sources: &sources,
                    references: &references,
                    src_vocab: &ckpt.src_vocab,
                    tgt_vocab: &ckpt.tgt_vocab,
                    table: &table,
                    beam: &beam_cfg,
                    tokenization,
                    batch_size,
                },
            )?;
            print!("{}", report.metrics_tsv());
            if let Some(dir) = out {
                write_eval_outputs(&dir, &report, &sources, &references)?;
                manifest.write(&dir.join("manifest.json"))?;
            }
            Ok(0)
        }
        Command::Gradcheck { seed } => {
            let seed = match seed {
                Some(s) => s,
                None => env_seed()?.unwrap_or(0),
            };
            let report = full_model_gradcheck(seed)?;
            let pass = report.max_rel_error <= GRADCHECK_TOLERANCE;
            println!(
                "seed {seed}: max relative error {:.3e} over {} coordinates (eps {GRADCHECK_EPS:e}, worst {})",
                report.max_rel_error,
                report.coordinates,
                report
                    .worst
                    .as_ref()
                    .map_or_else(|| "-".to_string(), |(name, k)| format!("{name}[{k}]"))
            );
            println!("{} at tolerance {GRADCHECK_TOLERANCE:e}", if pass { "PASS" } else { "FAIL" });
            Ok(if pass { 0 } else { 3 })
        }
    }
}

/// `out.txt` → `out.txt.manifest.json`
fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn annotate(tables: &Tables, input: &Path, output: &Path) -> Result<i32> {
    let mut manifest = RunManifest::start("annotate");
    manifest.input(input)?;
    let table = tables.load(&mut manifest)?;
    let mut text = String::new();
    for line in read_lines(input)? {
        let pairs: Vec<String> = line
            .chars()
            .map(|c| format!("{c}|{}", table.radical_of(c).index()))
            .collect();
        text.push_str(&pairs.join(" "));
        text.push('\n');
    }
    write_text(output, &text)?;
    if table.unknown_han_count() > 0 {
        log::warn!("{} Han characters were not in the table", table.unknown_han_count());
    }
    manifest.write(&sidecar(output))?;
    Ok(0)
}

pub struct TrainFiles<'a> {
    pub train_src: &'a Path,
    pub train_tgt: &'a Path,
    pub dev_src: &'a Path,
    pub dev_tgt: &'a Path,
}

/// Full training run writing into `out`: vocabularies, per-epoch checkpoints,
/// the final model, `report.tsv`, `train.log` and `manifest.json`.
pub fn train_command(
    cfg: &RunConfig,
    files: &TrainFiles<'_>,
    tables: &Tables,
    out: &Path,
    mut manifest: RunManifest,
) -> Result<TrainReport> {
    for p in [files.train_src, files.train_tgt, files.dev_src, files.dev_tgt] {
        manifest.input(p)?;
    }
    let table = tables.load(&mut manifest)?;
    manifest.config = cfg.to_pairs();
    manifest.seeds.insert("init".into(), cfg.train.seed);
    manifest.seeds.insert("batches".into(), cfg.train.seed);
    manifest.seeds.insert("dropout".into(), cfg.train.seed);

    let train_text = read_parallel(files.train_src, files.train_tgt)?;
    let dev_text = read_parallel(files.dev_src, files.dev_tgt)?;
    let src_lines: Vec<&str> = train_text.iter().map(|(s, _)| s.as_str()).collect();
    let tgt_lines: Vec<&str> = train_text.iter().map(|(_, t)| t.as_str()).collect();
    let src_vocab = build_vocab(&src_lines, cfg.min_count, cfg.max_vocab);
    let tgt_vocab = build_vocab(&tgt_lines, cfg.min_count, cfg.max_vocab);
    let encode = |pairs: &[(String, String)]| -> Vec<_> {
        pairs
            .iter()
            .filter(|(s, t)| !s.is_empty() && !t.is_empty())
            .map(|(s, t)| encode_pair(s, t, &src_vocab, &tgt_vocab, &table))
            .collect()
    };
    let train_pairs = filter_by_length(encode(&train_text), cfg.max_sent_len);
    let dev_pairs = encode(&dev_text);
    if train_pairs.is_empty() {
        return Err(Error::Data("no usable training pairs".into()));
    }

    let model_cfg = cfg.model_config(src_vocab.len(), tgt_vocab.len())?;
    let mut model = Model::<f64>::new(model_cfg, cfg.train.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = Some(out.join("checkpoints"));
    src_vocab.save(&out.join("src.vocab"))?;
    tgt_vocab.save(&out.join("tgt.vocab"))?;

    let data = TrainData {
        train: &train_pairs,
        dev: &dev_pairs,
        vocabs: Some((&src_vocab, &tgt_vocab)),
    };
    let mut log = format!(
        "training on {} pairs ({} dev), source vocab {}, target vocab {}, {} parameters\n",
        train_pairs.len(),
        dev_pairs.len(),
        src_vocab.len(),
        tgt_vocab.len(),
        model.params.num_values()
    );
    let result = train(&train_cfg, &mut model, &data, &mut |_| {});
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            log.push_str(&format!("aborted: {e}\n"));
            write_text(&out.join("train.log"), &log)?;
            return Err(e);
        }
    };
    for e in &report.epochs {
        log.push_str(&format!(
            "epoch {:>3}  train nll {:.4}  dev ppl {}  lr {}  ({:.1}s)\n",
            e.epoch,
            e.train_nll,
            e.dev_ppl.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}")),
            e.lr,
            e.seconds
        ));
    }
    log.push_str(&format!("{} updates\n", report.steps));
    Checkpoint::new(model, src_vocab, tgt_vocab).save(&out.join("model.rnmt"))?;
    write_text(&out.join("report.tsv"), &report.to_tsv())?;
    write_text(&out.join("train.log"), &log)?;
    manifest.write(&out.join("manifest.json"))?;
    Ok(report)
}
