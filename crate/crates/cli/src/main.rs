use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use semnet_core::config::RunConfig;
use semnet_core::corpus::{generate_synthetic, Corpus};
use semnet_core::evaluation::{evaluate_task, report, ResultRecord, Task, TaskLabels};
use semnet_core::memory::{parse_trace, register_memory, run_trace, trace_to_jsonl, verify_trace, write_rng, MemoryState, ReadMode, ResetPolicy};
use semnet_core::model::{
    file_hash, gradient_audit, holdout_split, load_checkpoint, retrieval_eval, save_checkpoint, train, Model, ModelVariant,
};
use semnet_core::rng::derive_seed;
use semnet_core::tensor_core::{Container, Init, ParameterStore};
use semnet_core::{Error, Result};

const AUDIT_THRESHOLD: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "semnet", version, about = "Video semantic network pipeline on feature sequences and plot summaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus (features, plots, manifest).
    GenData(Common),
    /// Train a model variant and write a checkpoint.
    Train(Common),
    /// Embed every item of a corpus with a trained checkpoint.
    Embed(Common),
    /// Probe or retrieval evaluation on the held-out split.
    Eval(Common),
    /// Full-model gradient audit against central differences.
    Gradcheck(Common),
    /// Record a memory trace, or replay and verify one with --trace.
    Memtrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Number of cycles when recording.
        #[arg(long, default_value_t = 64)]
        cycles: usize,
    },
    /// Render a variant × task table from result files.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    variant: Option<ModelVariant>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_read)]
    read: Option<ReadMode>,
}

fn parse_read(s: &str) -> std::result::Result<ReadMode, String> {
    match s {
        "hard" => Ok(ReadMode::Hard),
        "soft" => Ok(ReadMode::Soft),
        _ => Err(format!("expected hard or soft, got {s:?}")),
    }
}

/// Config file (or defaults) with command-line flags applied on top.
struct Resolved {
    cfg: RunConfig,
    common: Common,
}

impl Resolved {
    fn new(common: Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(v) = common.variant {
            cfg.variant = v;
            cfg.audit.variant = v;
        }
        if let Some(r) = common.read {
            cfg.train.read_mode = r;
            cfg.audit.read_mode = r;
        }
        cfg.validate()?;
        Ok(Resolved { cfg, common })
    }

    fn pick(&self, flag: &Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        flag.clone()
            .or_else(|| from_config.clone())
            .ok_or_else(|| Error::Config(format!("no {what} given; pass --{what} or set paths.{what} in the config")))
    }

    fn out(&self) -> Result<PathBuf> {
        self.pick(&self.common.out, &self.cfg.paths.out, "out")
    }

    fn manifest(&self) -> Result<PathBuf> {
        self.pick(&self.common.manifest, &self.cfg.paths.manifest, "manifest")
    }

    /// Explicit checkpoint path, else `<out>/<variant>.vsnt`.
    fn checkpoint(&self) -> Result<PathBuf> {
        self.pick(&self.common.checkpoint, &self.cfg.paths.checkpoint, "checkpoint")
            .or_else(|_| self.out().map(|o| o.join(format!("{}.vsnt", self.cfg.variant))))
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn gen_data(r: &Resolved) -> Result<()> {
    let out = r.out()?;
    let manifest = generate_synthetic(&r.cfg.synthetic, &out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run_train(r: &Resolved) -> Result<()> {
    let corpus = Corpus::load(&r.manifest()?)?;
    let split = holdout_split(&corpus, &r.cfg.train)?;
    let train_set = corpus.subset(&split.train);
    let f = corpus.feature_dim().ok_or(Error::EmptyInput("corpus"))?;
    // the vocabulary covers every plot so held-out items can be embedded
    let mut model: Model<f32> = Model::new(r.cfg.variant, r.cfg.train.clone(), f, corpus.token_index(), corpus.genres.clone())?;
    info!(
        "training {} on {} of {} items for {} epochs",
        r.cfg.variant.display_name(),
        train_set.len(),
        corpus.len(),
        r.cfg.train.epochs
    );
    let outcome = train(&mut model, &train_set, |epoch, loss| info!("epoch {epoch}: mean loss {loss:.5}"))?;
    let path = r.checkpoint()?;
    save_checkpoint(&model, &path)?;
    println!(
        "{} loss {:.5} -> {:.5}, {} steps",
        path.display(),
        outcome.loss_curve.first().copied().unwrap_or(f64::NAN),
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
        outcome.optimizer_steps
    );
    Ok(())
}

fn run_embed(r: &Resolved) -> Result<()> {
    let model: Model<f32> = load_checkpoint(&r.checkpoint()?)?;
    let corpus = Corpus::load(&r.manifest()?)?;
    let emb = model.embed_corpus(&corpus)?;
    let out = r.out()?;
    std::fs::create_dir_all(&out)?;
    let path = out.join(format!("embeddings-{}.vsnt", model.variant));
    let mut c = Container::new();
    c.push("videos", &emb.videos);
    c.push("plots", &emb.plots);
    c.write(&path)?;
    std::fs::write(path.with_extension("ids.txt"), emb.ids.join("\n") + "\n")?;
    println!("{}", path.display());
    Ok(())
}

fn run_eval(r: &Resolved) -> Result<()> {
    let ckpt = r.checkpoint()?;
    let model: Model<f32> = load_checkpoint(&ckpt)?;
    let corpus = Corpus::load(&r.manifest()?)?;
    let task = r.common.task.unwrap_or(Task::Genre);
    let split = holdout_split(&corpus, &model.config)?;
    let hash = file_hash(&ckpt)?;
    let record = match task {
        Task::Retrieval => {
            let test = model.embed_corpus(&corpus.subset(&split.test))?;
            let recall = retrieval_eval(&test.videos, &test.plots, &r.cfg.retrieval_ks)?;
            ResultRecord {
                task,
                variant: model.variant,
                weighted_f1: None,
                per_class_f1: None,
                confusion: None,
                majority_baseline: None,
                recall: Some(recall.into_iter().map(|(k, v)| (k.to_string(), v)).collect()),
                seed: model.config.seed,
                checkpoint_hash: hash,
                timestamp: now(),
            }
        }
        Task::Genre | Task::Rating => {
            let emb = model.embed_corpus(&corpus)?;
            let labels = match task {
                Task::Genre => TaskLabels::genre(corpus.genre_labels(), corpus.genres.clone()),
                _ => TaskLabels::rating(&corpus.ratings())?,
            };
            let outcome = evaluate_task(&emb.videos, &labels, &split, &r.cfg.probe)?;
            ResultRecord::classification(task, model.variant, &outcome, model.config.seed, hash, now())
        }
    };
    let text = serde_json::to_string_pretty(&record)?;
    if let Some(out) = r.common.out.clone().or_else(|| r.cfg.paths.out.clone()) {
        std::fs::create_dir_all(&out)?;
        let path = out.join(format!("results-{}-{}.json", model.variant, task));
        std::fs::write(&path, &text)?;
        info!("wrote {}", path.display());
    }
    println!("{text}");
    Ok(())
}

/// Exit code 2 when the audit misses the threshold.
fn run_gradcheck(r: &Resolved) -> Result<bool> {
    let rep = gradient_audit(&r.cfg.audit)?;
    for (name, err) in &rep.per_param {
        info!("{name}: max relative error {err:.3e}");
    }
    println!(
        "variant {} read {:?}: {} parameters, {} coordinates, loss {:.6}, max relative error {:.3e} at {:?} ({:.1} s)",
        r.cfg.audit.variant,
        r.cfg.audit.read_mode,
        rep.parameters,
        rep.coordinates,
        rep.loss,
        rep.max_rel_error,
        rep.worst,
        rep.elapsed.as_secs_f64()
    );
    Ok(rep.max_rel_error < AUDIT_THRESHOLD)
}

fn run_memtrace(r: &Resolved, trace: Option<&Path>, cycles: usize) -> Result<()> {
    let slots = r.cfg.train.memory_slots;
    let r_max = r.cfg.train.r_max;
    let records = match trace {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
                path: path.to_path_buf(),
                source,
            })?;
            parse_trace(&text)?
        }
        None => {
            let d = r.cfg.train.model_dim;
            let seed = derive_seed(r.cfg.train.seed, "memtrace");
            let mut params = ParameterStore::<f64>::new();
            register_memory(&mut params, d, seed)?;
            let mut state = MemoryState::zeros(slots, d);
            state.reset(ResetPolicy::SeededRandom, seed);
            let summaries: Vec<_> = (0..cycles)
                .map(|i| Init::Normal { std: 1.0, seed: derive_seed(seed, &format!("summary-{i}")) }.materialize(&[d]))
                .collect();
            let run = run_trace(&state, &params, &summaries, r.cfg.train.read_mode, r_max, &mut write_rng(seed))?;
            let text = trace_to_jsonl(&run.records)?;
            match r.common.out.clone().or_else(|| r.cfg.paths.out.clone()) {
                Some(out) => {
                    std::fs::create_dir_all(&out)?;
                    let path = out.join("memtrace.jsonl");
                    std::fs::write(&path, &text)?;
                    info!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
            run.records
        }
    };
    let check = verify_trace(&records, slots, r_max)?;
    println!("verified {} cycles, {} writes over {slots} slots", check.cycles, check.writes);
    Ok(())
}

fn run_report(paths: &[PathBuf]) -> Result<()> {
    let records = paths.iter().map(|p| ResultRecord::load(p)).collect::<Result<Vec<_>>>()?;
    let (table, warnings) = report(&records)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    print!("{table}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Report { results } => run_report(&results)?,
        Command::Memtrace { common, trace, cycles } => run_memtrace(&Resolved::new(common)?, trace.as_deref(), cycles)?,
        Command::GenData(c) => gen_data(&Resolved::new(c)?)?,
        Command::Train(c) => run_train(&Resolved::new(c)?)?,
        Command::Embed(c) => run_embed(&Resolved::new(c)?)?,
        Command::Eval(c) => run_eval(&Resolved::new(c)?)?,
        Command::Gradcheck(c) => {
            if !run_gradcheck(&Resolved::new(c)?)? {
                eprintln!("gradient audit failed: max relative error is not below {AUDIT_THRESHOLD:e}");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEMNET_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
