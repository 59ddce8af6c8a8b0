//! Command-line front end. Every subcommand writes a run manifest before it
//! starts and rewrites it with the finish time once done.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bench::{append_report, evaluate, FrameMeanScorer, ModelScorer, ReportEntry, Scorer, Task};
use crate::curation::{curate_jsonl, CurateOptions, Lexicon, NegativeKind};
use crate::error::{Error, Result};
use crate::synthgen::{build_dataset, Dataset, SynthConfig};
use crate::trainer::{Checkpoint, Model, TrainConfig, Trainer};
use crate::verify::{dtw_oracle, gradcheck_suite};

#[derive(Debug, Parser)]
#[command(name = "instract", version, about = "Action-centric video-text pretraining toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter captions, extract verb phrases and mint hard negatives.
    Curate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Lexicon JSON; the built-in lexicon when omitted.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Comma-separated negative kinds: verb, order.
        #[arg(long, value_delimiter = ',', default_value = "verb,order")]
        neg: Vec<String>,
        #[arg(long, default_value_t = 1)]
        per_kind: usize,
    },
    /// Generate a synthetic dataset directory.
    Synth {
        /// TOML synth config; defaults apply to missing keys.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a synthetic dataset and write a checkpoint.
    Train {
        /// TOML train config or a preset name (default, cross_eval, ...).
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; its config must match apart from `steps`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON-lines loss log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on one benchmark task and append to a report.
    Eval {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ScorerArg::Model)]
        scorer: ScorerArg,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Optional JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare implementations against brute-force oracles.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
}

#[derive(Debug, Subcommand)]
enum OracleCmd {
    /// Soft-DTW at small gamma against exact hard DTW.
    Dtw {
        /// Cost matrix size as ROWSxCOLS.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Semantic,
    Logic,
    Dynamics,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScorerArg {
    Model,
    FrameMean,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let n = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((n(a)?, n(b)?))
}

#[derive(Debug, Serialize)]
struct PathRecord {
    role: &'static str,
    given: String,
    canonical: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: &'static str,
    config: serde_json::Value,
    paths: Vec<PathRecord>,
    seed: Option<u64>,
    version: &'static str,
    started: String,
    finished: Option<String>,
}

/// Absolute form of a path that may not exist yet.
fn canonical(p: &Path) -> String {
    if let Ok(c) = fs::canonicalize(p) {
        return c.display().to_string();
    }
    let parent = match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => fs::canonicalize(d).unwrap_or_else(|_| d.to_path_buf()),
        _ => std::env::current_dir().unwrap_or_default(),
    };
    match p.file_name() {
        Some(name) => parent.join(name).display().to_string(),
        None => parent.display().to_string(),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Run {
    manifest: RunManifest,
    at: PathBuf,
}

impl Run {
    fn start(
        subcommand: &'static str,
        config: serde_json::Value,
        paths: &[(&'static str, &Path)],
        seed: Option<u64>,
        at: PathBuf,
    ) -> Result<Self> {
        let manifest = RunManifest {
            subcommand,
            config,
            paths: paths
                .iter()
                .map(|&(role, p)| PathRecord { role, given: p.display().to_string(), canonical: canonical(p) })
                .collect(),
            seed,
            version: env!("CARGO_PKG_VERSION"),
            started: now(),
            finished: None,
        };
        let run = Self { manifest, at };
        run.write()?;
        Ok(run)
    }

    fn write(&self) -> Result<()> {
        if let Some(dir) = self.at.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&self.at, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finished = Some(now());
        self.write()
    }
}

/// `out.ext` → `out.ext.manifest.json`.
fn manifest_beside(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn sha256_file(p: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(p)?)))
}

fn load_train_config(spec: &str) -> Result<TrainConfig> {
    let p = Path::new(spec);
    if p.exists() {
        TrainConfig::load(p)
    } else if !spec.contains(['/', '.']) {
        TrainConfig::preset(spec)
    } else {
        Err(Error::Config(format!("config file {spec} not found")))
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn curate(input: &Path, out: &Path, lexicon: Option<&Path>, seed: u64, neg: &[String], per_kind: usize) -> Result<()> {
    let kinds = neg
        .iter()
        .map(|k| NegativeKind::parse(k.trim()).ok_or_else(|| Error::Config(format!("unknown negative kind {k:?}; use verb or order"))))
        .collect::<Result<Vec<_>>>()?;
    let opts = CurateOptions { seed, kinds, per_kind };
    let config = serde_json::json!({
        "lexicon": lexicon.map(|p| p.display().to_string()).unwrap_or_else(|| "builtin".into()),
        "neg": opts.kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "per_kind": per_kind,
    });
    let mut paths = vec![("in", input), ("out", out)];
    if let Some(l) = lexicon {
        paths.push(("lexicon", l));
    }
    let run = Run::start("curate", config, &paths, Some(seed), manifest_beside(out))?;
    let lex = match lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::builtin(),
    };
    let reader = BufReader::new(fs::File::open(input)?);
    let writer = BufWriter::new(fs::File::create(out)?);
    let summary = curate_jsonl(reader, writer, &lex, &opts)?;
    println!("{}", serde_json::to_string(&summary)?);
    run.finish()
}

fn synth(config: &Path, out: &Path, seed: u64) -> Result<()> {
    let text = fs::read_to_string(config)?;
    let cfg: SynthConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let run = Run::start("synth", to_value(&cfg)?, &[("config", config), ("out", out)], Some(seed), out.join("manifest.json"))?;
    let data = build_dataset(&cfg, seed)?;
    data.write(out)?;
    println!(
        "{} clips, {} semantic, {} logic, {} dynamics pools -> {}",
        data.clips.len(),
        data.semantic.len(),
        data.logic.len(),
        data.dynamics.len(),
        out.display()
    );
    run.finish()
}

fn train(config: &str, data_dir: &Path, out: &Path, resume: Option<&Path>, seed: Option<u64>, log: Option<&Path>) -> Result<()> {
    let mut cfg = load_train_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let config_path = Path::new(config);
    let mut paths = vec![("data", data_dir), ("out", out)];
    if config_path.exists() {
        paths.push(("config", config_path));
    }
    if let Some(r) = resume {
        paths.push(("resume", r));
    }
    if let Some(l) = log {
        paths.push(("log", l));
    }
    let run = Run::start("train", to_value(&cfg)?, &paths, Some(cfg.seed), manifest_beside(out))?;
    let data = Dataset::load(data_dir)?;
    let ck;
    let mut trainer = match resume {
        Some(r) => {
            ck = {
                let mut ck = Checkpoint::load(r)?;
                let mut theirs = ck.config.clone();
                theirs.steps = cfg.steps;
                if theirs != cfg {
                    return Err(Error::Config(format!("{} was trained with a different config", r.display())));
                }
                ck.config.steps = cfg.steps;
                ck
            };
            Trainer::resume(&ck, &data)?
        }
        None => Trainer::new(cfg, &data)?,
    };
    let mut log_file = log.map(|p| fs::File::create(p).map(BufWriter::new)).transpose()?;
    let history = trainer.fit(log_file.as_mut().map(|w| w as &mut dyn Write), Some(out))?;
    if let Some(mut w) = log_file {
        w.flush()?;
    }
    if let Some(last) = history.last() {
        println!("{} steps, final loss {:.6} -> {}", trainer.step(), last.total, out.display());
    } else {
        println!("nothing to do: already at step {}", trainer.step());
    }
    run.finish()
}

fn eval(task: TaskArg, ckpt: &Path, data_dir: &Path, out: &Path, scorer: ScorerArg) -> Result<()> {
    let task = match task {
        TaskArg::Semantic => Task::Semantic,
        TaskArg::Logic => Task::Logic,
        TaskArg::Dynamics => Task::Dynamics,
    };
    let config = serde_json::json!({ "task": task, "scorer": format!("{scorer:?}") });
    let run = Run::start("eval", config, &[("ckpt", ckpt), ("data", data_dir), ("out", out)], None, manifest_beside(out))?;
    let ck = Checkpoint::load(ckpt)?;
    let model = Model::from_checkpoint(&ck)?;
    let data = Dataset::load(data_dir)?;
    let ms = ModelScorer { model: &model, temperature: ck.config.temperature };
    let fm = FrameMeanScorer { model: &model };
    let scorer: &dyn Scorer = match scorer {
        ScorerArg::Model => &ms,
        ScorerArg::FrameMean => &fm,
    };
    let report = evaluate(task, scorer, &data)?;
    let config_hash = hex::encode(Sha256::digest(ck.config.to_toml()?.as_bytes()));
    let entry = ReportEntry {
        created: now(),
        config_hash,
        checkpoint_hash: sha256_file(ckpt)?,
        data: data_dir.display().to_string(),
        report,
    };
    append_report(out, &entry)?;
    println!("{}", serde_json::to_string(&entry.report.metrics)?);
    run.finish()
}

fn gradcheck(seeds: u64, out: Option<&Path>) -> Result<()> {
    let run = out
        .map(|o| Run::start("gradcheck", serde_json::json!({ "seeds": seeds }), &[("out", o)], None, manifest_beside(o)))
        .transpose()?;
    let reports = gradcheck_suite(seeds)?;
    let mut worst: f64 = 0.0;
    for r in &reports {
        println!("{:<14} max rel. error {:.3e} over {} seeds", r.op, r.max_rel_err, r.seeds);
        worst = worst.max(r.max_rel_err);
    }
    println!("max rel. error {worst:.3e}");
    if let Some(o) = out {
        fs::write(o, serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    if let Some(run) = run {
        run.finish()?;
    }
    if worst >= 1e-4 {
        return Err(Error::NumericDomain(format!("gradient check failed: {worst:.3e} >= 1e-4")));
    }
    Ok(())
}

fn oracle_dtw(size: (usize, usize), seed: u64, gamma: f64, out: Option<&Path>) -> Result<()> {
    let config = serde_json::json!({ "oracle": "dtw", "rows": size.0, "cols": size.1, "gamma": gamma });
    let run = out.map(|o| Run::start("oracle", config, &[("out", o)], Some(seed), manifest_beside(o))).transpose()?;
    let r = dtw_oracle(size.0, size.1, seed, gamma)?;
    println!("soft-dtw (gamma={gamma}) {:.6}", r.soft);
    println!("hard dtw            {:.6}", r.hard);
    if let Some(e) = r.enumerated {
        println!("enumerated paths    {e:.6}");
    }
    println!("gap {:.3e}", r.gap());
    if let Some(o) = out {
        fs::write(o, serde_json::to_string_pretty(&r)? + "\n")?;
    }
    if let Some(run) = run {
        run.finish()?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Curate { input, out, lexicon, seed, neg, per_kind } => curate(&input, &out, lexicon.as_deref(), seed, &neg, per_kind),
        Command::Synth { config, out, seed } => synth(&config, &out, seed),
        Command::Train { config, data, out, resume, seed, log } => train(&config, &data, &out, resume.as_deref(), seed, log.as_deref()),
        Command::Eval { task, ckpt, data, out, scorer } => eval(task, &ckpt, &data, &out, scorer),
        Command::Gradcheck { seeds, out } => gradcheck(seeds, out.as_deref()),
        Command::Oracle { which: OracleCmd::Dtw { size, seed, gamma, out } } => oracle_dtw(size, seed, gamma, out.as_deref()),
    }
}

/// Parses `argv` and runs the subcommand. Returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
