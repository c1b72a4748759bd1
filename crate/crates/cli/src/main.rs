//! `tog`: corpus generation, training, adaptation, LM training, decoding and
//! scoring for textogram RNN-T models.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tog_core::adapt::{adapt, train_lm_head, AdaptMode};
use tog_core::corpus::{build_corpus, derive_seed, read_text_lines, CorpusSpec, Manifest};
use tog_core::decode::{decode_one, score_corpus, DecodeConfig};
use tog_core::model::{ExternalLm, TransducerModel};
use tog_core::runconfig::RunConfig;
use tog_core::selfcheck::run_self_check;
use tog_core::train::{load_items, train_external_lm, EpochMetrics, Trainer};

const MODEL_FILE: &str = "model.togm";
const LM_FILE: &str = "lm.togm";
const TRAINER_FILE: &str = "trainer.ckpt";
const CONFIG_FILE: &str = "run.cfg";
const METRICS_FILE: &str = "metrics.log";

#[derive(Parser)]
#[command(name = "tog", version, about = "Textogram RNN-T training, text-only adaptation and scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand that reads the run configuration.
#[derive(Args, Clone, Default)]
struct Common {
    /// key=value run configuration file (later sources win: defaults, file, flags)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the `seed` key)
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for per-utterance work; results do not depend on it
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Extra config override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic two-domain corpus
    GenCorpus {
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Corpus spec file (defaults to the shipped spec)
        #[arg(long, value_name = "PATH")]
        spec: Option<PathBuf>,
        /// Corpus seed (overrides the spec)
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
    },
    /// Train a transducer on a speech manifest
    Train {
        #[command(flatten)]
        common: Common,
        /// Training manifest (speech records)
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Train on speech only (no textogram input block)
        #[arg(long)]
        speech_only: bool,
        /// Continue from the trainer checkpoint in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Text-only adaptation of a trained model
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Adaptation text: a manifest (.tsv) or one sentence per line
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_parser = ["nnlm", "tog-p", "tog-pj", "tog-p+nnlm"])]
        mode: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the external character LM used for shallow fusion
    LmTrain {
        #[command(flatten)]
        common: Common,
        /// Training text: a manifest (.tsv) or one sentence per line
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Attach and train the NN-LM head on base-domain transcripts
    LmHeadTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Transcripts: a manifest (.tsv) or one sentence per line
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Decode a speech manifest, writing `id<TAB>hypothesis` lines
    Decode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Output directory (hypotheses go to stdout if omitted)
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Decode and report pooled word error rate
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Also write the report and hypotheses here
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Numerical self-test: loss oracle and gradient checks
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct Search {
    /// Beam width (1 without an LM is greedy search)
    #[arg(long, value_name = "N")]
    beam: Option<usize>,
    /// External LM for shallow fusion
    #[arg(long, value_name = "PATH")]
    lm: Option<PathBuf>,
    /// Shallow-fusion weight
    #[arg(long, value_name = "F")]
    fusion_weight: Option<f64>,
}

fn resolve(common: &Common, extra: &[(String, String)]) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(w) = common.workers {
        overrides.push(("workers".into(), w.to_string()));
    }
    overrides.extend_from_slice(extra);
    let (cfg, _warnings) = RunConfig::resolve(common.config.as_deref(), &overrides)?;
    log::info!("resolved config (hash {}):\n{}", cfg.hash(), cfg.to_text());
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let p = out.join(CONFIG_FILE);
    fs::write(&p, cfg.to_text()).with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}

/// Sentences from a manifest (`.tsv`) or a plain one-per-line text file.
fn read_texts(path: &Path) -> Result<Vec<String>> {
    if path.extension().is_some_and(|e| e == "tsv") {
        Ok(Manifest::read(path)?.texts())
    } else {
        Ok(read_text_lines(path)?)
    }
}

fn metrics_sink(out: &Path) -> Result<impl FnMut(&EpochMetrics)> {
    let path = out.join(METRICS_FILE);
    fs::write(&path, "").with_context(|| format!("writing {}", path.display()))?;
    Ok(move |m: &EpochMetrics| {
        let line = format!("{m}\n");
        if let Err(e) = fs::OpenOptions::new().append(true).open(&path).and_then(|mut f| {
            use std::io::Write;
            f.write_all(line.as_bytes())
        }) {
            log::warn!("cannot append to {}: {e}", path.display());
        }
    })
}

fn decode_config<'a>(cfg: &RunConfig, search: &Search, lm: Option<&'a ExternalLm>) -> DecodeConfig<'a> {
    DecodeConfig {
        beam: search.beam.unwrap_or(cfg.beam),
        lm,
        fusion_weight: search.fusion_weight.or(cfg.fusion_weight),
        workers: cfg.workers,
    }
}

fn search_overrides(search: &Search) -> Vec<(String, String)> {
    let mut o = Vec::new();
    if let Some(b) = search.beam {
        o.push(("beam".into(), b.to_string()));
    }
    if let Some(w) = search.fusion_weight {
        o.push(("fusion_weight".into(), w.to_string()));
    }
    o
}

fn load_lm(path: &Option<PathBuf>) -> Result<Option<ExternalLm>> {
    path.as_ref()
        .map(|p| ExternalLm::load(p).with_context(|| format!("loading LM {}", p.display())))
        .transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { out, spec, seed } => {
            let mut spec = match spec {
                Some(p) => CorpusSpec::read(&p)?,
                None => CorpusSpec::shipped(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let table = RunConfig::default().model.alphabet;
            let summary = build_corpus(&spec, &table, &out)?;
            for (name, path, n) in &summary.manifests {
                println!("{name}: {n} records -> {}", path.display());
            }
            println!("adaptation text -> {}", summary.adapt_text.display());
            println!(
                "min prototype distance {:.3}, nearest-prototype oracle accuracy {:.4}, dev-b bigram overlap {:.3}",
                summary.min_prototype_distance, summary.oracle_accuracy, summary.dev_b_bigram_overlap
            );
        }
        Command::Train { common, manifest, out, speech_only, resume } => {
            let extra = if speech_only { vec![("text_input".into(), "false".into())] } else { Vec::new() };
            let cfg = resolve(&common, &extra)?;
            prepare_out(&out, &cfg)?;
            let manifest = Manifest::read(&manifest)?;
            let items = load_items(&manifest, &cfg.model.alphabet)?;
            let ckpt = out.join(TRAINER_FILE);
            let mut trainer = if resume && ckpt.exists() {
                let t = Trainer::load(&ckpt, cfg.train.clone())?;
                log::info!("resuming at step {}", t.state.step);
                t
            } else {
                let model = TransducerModel::new(cfg.model.clone(), derive_seed(cfg.seed, "model-init"))?;
                Trainer::new(model, cfg.train.clone())?
            };
            let mut sink = metrics_sink(&out)?;
            trainer.fit_with_checkpoints(&items, &ckpt, &mut sink)?;
            trainer.model.save(&out.join(MODEL_FILE))?;
            println!("model -> {}", out.join(MODEL_FILE).display());
        }
        Command::Adapt { common, model, manifest, mode, out } => {
            let extra = mode.map(|m| vec![("adapt_mode".to_string(), m)]).unwrap_or_default();
            let cfg = resolve(&common, &extra)?;
            let base = TransducerModel::load(&model).with_context(|| format!("loading {}", model.display()))?;
            if cfg.adapt.mode != AdaptMode::Nnlm {
                base.require_text_input()?;
            }
            let texts = read_texts(&manifest)?;
            prepare_out(&out, &cfg)?;
            let outcome = adapt(&base, &texts, &cfg.adapt)?;
            let mut sink = metrics_sink(&out)?;
            outcome.metrics.iter().for_each(&mut sink);
            outcome.model.save(&out.join(MODEL_FILE))?;
            println!("{} adapted model -> {}", cfg.adapt.mode, out.join(MODEL_FILE).display());
        }
        Command::LmTrain { common, manifest, out } => {
            let cfg = resolve(&common, &[])?;
            let texts = read_texts(&manifest)?;
            prepare_out(&out, &cfg)?;
            let mut lm = ExternalLm::new(cfg.lm_config(), derive_seed(cfg.seed, "lm-init"))?;
            let mut sink = metrics_sink(&out)?;
            train_external_lm(&mut lm, &texts, &cfg.lm_train, &mut sink)?;
            lm.save(&out.join(LM_FILE))?;
            println!("lm -> {}", out.join(LM_FILE).display());
        }
        Command::LmHeadTrain { common, model, manifest, out } => {
            let cfg = resolve(&common, &[])?;
            let base = TransducerModel::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let texts = read_texts(&manifest)?;
            prepare_out(&out, &cfg)?;
            let (with_head, report) = train_lm_head(&base, &texts, None, &cfg.head_train)?;
            let mut sink = metrics_sink(&out)?;
            report.metrics.iter().for_each(&mut sink);
            println!("head cross-entropy per symbol: {:.4}", report.dev_cross_entropy);
            with_head.save(&out.join(MODEL_FILE))?;
            println!("model with head -> {}", out.join(MODEL_FILE).display());
        }
        Command::Decode { common, search, model, manifest, out } => {
            let cfg = resolve(&common, &search_overrides(&search))?;
            let model = TransducerModel::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let lm = load_lm(&search.lm)?;
            let dc = decode_config(&cfg, &search, lm.as_ref());
            let manifest = Manifest::read(&manifest)?;
            let mut lines = String::new();
            for r in &manifest.records {
                let x = model.prepare_speech(&manifest.load_features(r)?.frames)?;
                let hyp = model.config.alphabet.decode(&decode_one(&model, &x, &dc)?);
                lines.push_str(&format!("{}\t{}\n", r.id, hyp.split_whitespace().collect::<Vec<_>>().join(" ")));
            }
            match out {
                Some(dir) => {
                    prepare_out(&dir, &cfg)?;
                    fs::write(dir.join("hyp.txt"), &lines)?;
                    println!("hypotheses -> {}", dir.join("hyp.txt").display());
                }
                None => print!("{lines}"),
            }
        }
        Command::Score { common, search, model, manifest, out } => {
            let cfg = resolve(&common, &search_overrides(&search))?;
            let model = TransducerModel::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let lm = load_lm(&search.lm)?;
            let dc = decode_config(&cfg, &search, lm.as_ref());
            let score = score_corpus(&model, &Manifest::read(&manifest)?, &dc)?;
            println!("{}", score.report);
            if let Some(dir) = out {
                prepare_out(&dir, &cfg)?;
                fs::write(dir.join("hyp.txt"), score.hypotheses_text())?;
                fs::write(dir.join("score.txt"), format!("{}\n", score.report))?;
            }
        }
        Command::Check { seed } => {
            let report = run_self_check(seed)?;
            println!("{report}");
            if !report.passed() {
                bail!("self-check failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
