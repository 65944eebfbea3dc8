//! `s2tp` command-line front end.

pub mod checkpoint;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{AttentionRecord, Checkpoint};
pub use config::Config;

use crate::decoder::GenerationConfig;
use crate::dla;
use crate::error::{Error, Result};
use crate::flops::{self, Family, ModelSpec};
use crate::harness::{self, EvalMetrics, Split};
use crate::model::{DlaMode, Model};
use crate::nn::ParamStore;

#[derive(Debug, Parser)]
#[command(name = "s2tp", version, about = "Perceiver speech-to-text with dynamic latent access")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dla {
    Full,
    Diverse,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Valid,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the generated toy task; writes metrics.tsv and last/best/avg checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, repeatable.
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Wall-clock cap in seconds, checked between epochs.
        #[arg(long)]
        time_limit: Option<u64>,
    },
    /// Decode a generated split and report accuracy and inference FLOPs.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Dla::Full)]
        dla: Dla,
        #[arg(long)]
        k_prime: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode spectrograms stored in a tensor container, or the first test examples.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Dla::Full)]
        dla: Dla,
        #[arg(long)]
        k_prime: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the cross-attention output and weights of one test example.
    AttentionRecord {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select latents from a stored attention record.
    SelectLatents {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        k_prime: usize,
        #[arg(long, value_enum, default_value_t = Dla::Diverse)]
        mode: Dla,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Analytic FLOPs of a model against a baseline over a length corpus.
    Flops {
        /// Model config; defaults to the paper-scale Perceiver.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Baseline config; defaults to the Transformer variant of the model.
        #[arg(long)]
        baseline_config: Option<PathBuf>,
        /// File of `m t` pairs; defaults to a synthetic speech-like corpus.
        #[arg(long)]
        lengths: Option<PathBuf>,
        #[arg(long)]
        k_prime: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Elementwise mean of checkpoints sharing one configuration.
    AverageCheckpoints {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Finite-difference gradient check of every layer and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr as one line.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let text = match path {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    Config::parse_with_overrides(&text, overrides)
}

/// Model and configuration stored in a checkpoint file.
pub fn load_model(path: &Path) -> Result<(Config, Model<f32>)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = Config::parse(&ckpt.config).map_err(|e| match e {
        Error::Config { key, message } => Error::Incompatible(format!("stored config key `{key}`: {message}")),
        other => other,
    })?;
    let model = Model::from_named(cfg.model.clone(), &ckpt.tensors)?;
    Ok((cfg, model))
}

pub fn save_model(path: &Path, cfg: &Config, params: &ParamStore<f32>) -> Result<()> {
    Checkpoint {
        config: cfg.to_text(),
        tensors: params.to_named(),
    }
    .save(path)
}

fn dla_mode(cfg: &Config, model: &Model<f32>, dla: Dla, k_prime: Option<usize>) -> Result<DlaMode> {
    let n = model.n_latents();
    let k = k_prime.or(cfg.k_prime).unwrap_or(n);
    if n > 0 {
        if k == 0 {
            return Err(Error::Config {
                key: "k_prime".into(),
                message: "must be at least 1".into(),
            });
        }
        if k > n {
            return Err(Error::KPrime { k_prime: k, n });
        }
    }
    Ok(match dla {
        Dla::Full => DlaMode::Full,
        Dla::Diverse => DlaMode::Diverse(k),
        Dla::Random => DlaMode::Random(k),
    })
}

fn selection_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(harness::RANDOM_SELECTION_STREAM);
    rng
}

fn tokens(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn metrics_line(m: &EvalMetrics) -> String {
    format!(
        "token_accuracy\t{:.6}\nexact_match\t{:.6}\ntruncated\t{}\nexamples\t{}\nflops_per_example\t{:.0}",
        m.token_accuracy, m.exact_match, m.truncated, m.examples, m.flops_per_example
    )
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train {
            config,
            overrides,
            out: dir,
            seed,
            time_limit,
        } => {
            let mut cfg = read_config(config.as_deref(), &overrides)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            cfg.train.time_limit = time_limit.map(Duration::from_secs);
            fs::create_dir_all(&dir)?;
            let train = cfg.task.generate(Split::Train, cfg.data.train)?;
            let valid = cfg.task.generate(Split::Valid, cfg.data.valid)?;
            let mut log = fs::File::create(dir.join("metrics.tsv"))?;
            let outcome = harness::train(cfg.model.clone(), &cfg.train, &train, &valid, Some(&mut log))?;
            save_model(&dir.join("last.ckpt"), &cfg, &outcome.model.params)?;
            let best = &outcome.best[0];
            save_model(&dir.join("best.ckpt"), &cfg, &best.params)?;
            let stores: Vec<_> = outcome.best.iter().map(|s| s.params.clone()).collect();
            save_model(&dir.join("avg.ckpt"), &cfg, &harness::average_checkpoints(&stores)?)?;
            fs::write(dir.join("config.txt"), cfg.to_text())?;
            writeln!(
                out,
                "stopped\t{:?}\nepochs\t{}\nsteps\t{}\nbest_epoch\t{}\nbest_valid_token_acc\t{:.6}\nelapsed_s\t{:.1}",
                outcome.stop,
                outcome.log.len(),
                outcome.steps,
                best.epoch,
                best.valid_token_acc,
                outcome.elapsed.as_secs_f64()
            )?;
        }
        Command::Evaluate {
            checkpoint,
            dla,
            k_prime,
            beam,
            split,
            seed,
        } => {
            let (cfg, model) = load_model(&checkpoint)?;
            let mode = dla_mode(&cfg, &model, dla, k_prime)?;
            let examples = match split {
                EvalSplit::Valid => cfg.task.generate(Split::Valid, cfg.data.valid)?,
                EvalSplit::Test => cfg.task.generate(Split::Test, cfg.data.test)?,
            };
            let seed = seed.unwrap_or(cfg.train.seed);
            let metrics = harness::evaluate(&model, &examples, mode, beam.unwrap_or(cfg.beam), seed)?;
            writeln!(out, "{}", metrics_line(&metrics))?;
            if mode != DlaMode::Full {
                // the same corpus through all n latents, for comparison
                let full = model.config.spec(model.n_latents());
                let mut total = 0u64;
                for ex in &examples {
                    total += flops::cost(&full, ex.spectrogram.rows(), ex.target.len() - 1)?.total();
                }
                let full_per = total as f64 / examples.len() as f64;
                writeln!(
                    out,
                    "full_flops_per_example\t{full_per:.0}\nflops_vs_full\t{:.4}",
                    metrics.flops_per_example / full_per
                )?;
            }
        }
        Command::Generate {
            checkpoint,
            inputs,
            count,
            dla,
            k_prime,
            beam,
            seed,
        } => {
            let (cfg, model) = load_model(&checkpoint)?;
            let mode = dla_mode(&cfg, &model, dla, k_prime)?;
            let mut rng = selection_rng(seed.unwrap_or(cfg.train.seed));
            let beam = beam.unwrap_or(cfg.beam);
            let cap = 2 * cfg.task.max_len + 2;
            let generation = GenerationConfig { beam, max_len: cap };
            match inputs {
                Some(path) => {
                    for (name, x) in Checkpoint::load(&path)?.tensors {
                        let hyp = model.transcribe(&x, mode, &generation, &mut rng)?;
                        writeln!(out, "{name}\t{}", tokens(&hyp.tokens))?;
                    }
                }
                None => {
                    writeln!(out, "index\treference\thypothesis")?;
                    for (i, ex) in cfg.task.generate(Split::Test, count)?.iter().enumerate() {
                        let hyp = model.transcribe(&ex.spectrogram, mode, &generation, &mut rng)?;
                        writeln!(out, "{i}\t{}\t{}", tokens(ex.content()), tokens(&hyp.tokens))?;
                    }
                }
            }
        }
        Command::AttentionRecord { checkpoint, index, out: path } => {
            let (cfg, model) = load_model(&checkpoint)?;
            let examples = cfg.task.generate(Split::Test, index + 1)?;
            let (z, a) = model.attention_record(&examples[index].spectrogram)?;
            let frame_mask = vec![true; a.cols()];
            AttentionRecord { z, a, frame_mask }.to_checkpoint().save(&path)?;
        }
        Command::SelectLatents {
            record,
            k_prime,
            mode,
            seed,
        } => {
            let rec = AttentionRecord::from_checkpoint(&Checkpoint::load(&record)?)?;
            dla::check_k_prime(k_prime, rec.z.rows())?;
            let ids = match mode {
                Dla::Full => (0..rec.z.rows()).collect(),
                Dla::Diverse => dla::select_diverse(&rec.z, &rec.a, k_prime, Some(&rec.frame_mask))?.ids,
                Dla::Random => dla::select_random(&rec.z, k_prime, &mut selection_rng(seed))?.ids,
            };
            writeln!(out, "{}", tokens(&ids))?;
        }
        Command::Flops {
            config,
            baseline_config,
            lengths,
            k_prime,
            seed,
        } => {
            let (spec, baseline) = flops_specs(config.as_deref(), baseline_config.as_deref(), k_prime)?;
            let lengths = match lengths {
                Some(p) => flops::parse_lengths(&fs::read_to_string(p)?)?,
                None => flops::default_lengths(1000, seed),
            };
            write!(out, "{}", flops::format_report(&spec, &baseline, &lengths)?)?;
        }
        Command::AverageCheckpoints { out: path, inputs } => {
            let mut config = None;
            let mut stores = Vec::with_capacity(inputs.len());
            for p in &inputs {
                let (cfg, model) = load_model(p)?;
                match &config {
                    None => config = Some(cfg),
                    Some(first) if first.model != cfg.model => {
                        return Err(Error::Incompatible(format!("{} has a different architecture", p.display())))
                    }
                    Some(_) => {}
                }
                stores.push(model.params);
            }
            let cfg = config.expect("at least one input");
            save_model(&path, &cfg, &harness::average_checkpoints(&stores)?)?;
        }
        Command::Gradcheck { seed } => {
            writeln!(out, "check\tmax_rel_error\tparameter\telement\tanalytic\tnumeric\tcoordinates\tstatus")?;
            let entries = harness::gradcheck_suite(seed)?;
            for e in &entries {
                writeln!(
                    out,
                    "{}\t{:.3e}\t{}\t{}\t{:.6e}\t{:.6e}\t{}\t{}",
                    e.name,
                    e.report.worst_error,
                    e.param,
                    e.report.element,
                    e.report.analytic,
                    e.report.numeric,
                    e.report.checked,
                    if e.passed() { "ok" } else { "FAIL" }
                )?;
            }
            let failed: Vec<_> = entries.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
            if !failed.is_empty() {
                return Err(Error::GradientCheck(format!(
                    "{} above {:e}",
                    failed.join(", "),
                    harness::gradcheck::TOLERANCE
                )));
            }
        }
    }
    Ok(())
}

fn flops_specs(config: Option<&Path>, baseline: Option<&Path>, k_prime: Option<usize>) -> Result<(ModelSpec, ModelSpec)> {
    let spec = match config {
        Some(p) => {
            let cfg = read_config(Some(p), &[])?;
            let k = k_prime.or(cfg.k_prime).unwrap_or(cfg.model.n_latents);
            if cfg.model.family == Family::Perceiver && k > cfg.model.n_latents {
                return Err(Error::KPrime {
                    k_prime: k,
                    n: cfg.model.n_latents,
                });
            }
            cfg.model.spec(k)
        }
        None => {
            let paper = ModelSpec::paper_perceiver(k_prime.unwrap_or(1024));
            if paper.k_prime > paper.n_latents {
                return Err(Error::KPrime {
                    k_prime: paper.k_prime,
                    n: paper.n_latents,
                });
            }
            paper
        }
    };
    let base = match (baseline, config) {
        (Some(p), _) => {
            let cfg = read_config(Some(p), &[])?;
            cfg.model.spec(cfg.k_prime.unwrap_or(cfg.model.n_latents))
        }
        (None, Some(p)) => {
            let cfg = read_config(Some(p), &["family=transformer".to_string(), "k_prime=none".to_string()])?;
            cfg.model.spec(0)
        }
        (None, None) => ModelSpec::paper_transformer(),
    };
    Ok((spec, base))
}
