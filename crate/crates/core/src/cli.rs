//! The `semisel` command line.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::{RunConfig, SweepKind};
use crate::data::PartitionTag;
use crate::error::{Error, Result};
use crate::harness::{
    cross_validate, downstream_eval, label_budget_sweep, noise_robustness_sweep, pretrain_for, select_with,
    ExperimentResult, NoiseSetting, RunContext, RunRecord,
};
use crate::nn::Checkpoint;
use crate::pretext::AutoencoderModel;
use crate::rng::SeedStream;
use crate::selector::{precision_at_k, select_top_k, FeatureRanking};

/// Exit status for a `verify` digest mismatch.
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "semisel", version, about = "Semi-supervised feature selection for tabular data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set selector.epochs=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Sweep cells evaluated concurrently.
    #[arg(long, default_value_t = 1, global = true)]
    pub jobs: usize,
    /// Only print results and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the autoencoder on the unlabeled rows.
    Pretrain {
        /// Shorthand for `--set pretext.epochs=N`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the attention selector and write a feature ranking.
    Select {
        /// Autoencoder checkpoint from `pretrain`; required unless the mode is no-selfsup.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score the top-k features of a ranking with the downstream classifier.
    Evaluate {
        #[arg(long)]
        ranking: PathBuf,
        /// Defaults to the ranking's own k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write the prepared (scaled, corrupted) dataset as CSV.
    Corrupt {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sweep declared in the config's `[sweep]` table.
    Sweep,
    /// Check that artifacts embed the digest of the current config.
    Verify {
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.global.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let mut overrides = cli.global.overrides.clone();
    if let Command::Pretrain { epochs: Some(n) } = &cli.command {
        overrides.push(format!("pretext.epochs={n}"));
    }
    let config = match &cli.global.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::from_toml("", &overrides)?,
    };
    if cli.global.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::Pretrain { .. } => cmd_pretrain(&config).map(|_| 0),
        Command::Select { checkpoint } => cmd_select(&config, checkpoint.as_deref()).map(|_| 0),
        Command::Evaluate { ranking, k } => cmd_evaluate(&config, ranking, *k).map(|_| 0),
        Command::Corrupt { out } => cmd_corrupt(&config, out).map(|_| 0),
        Command::Sweep => cmd_sweep(&config, cli.global.jobs).map(|_| 0),
        Command::Verify { artifacts } => cmd_verify(&config, artifacts),
    }
}

fn run_dir(config: &RunConfig, kind: &str, run_id: &str) -> Result<PathBuf> {
    let dir = config.output_dir.join(kind).join(run_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_pretrain(config: &RunConfig) -> Result<PathBuf> {
    if !config.mode.uses_autoencoder() {
        return Err(Error::Config(format!("mode {} does not use a pretrained autoencoder", config.mode)));
    }
    let ds = config.prepare(config.seed)?;
    if ds.count(PartitionTag::UnlabeledTrain) == 0 {
        return Err(Error::Config("pretraining needs unlabeled rows (data.partition.unlabeled)".into()));
    }
    let model = pretrain_for(&ds, &config.pipeline(), config.seed)?.expect("mode uses an autoencoder");
    let digest = config.digest();
    let dir = run_dir(config, "checkpoints", &config.run_id("pretrain"))?;
    let mut log = format!("# config_digest={digest}\nepoch\tmask\trecon\ttotal\n");
    for e in &model.log {
        info!("epoch {:>3}  l_m {:.6}  l_r {:.6}  total {:.6}", e.epoch, e.mask, e.recon, e.total);
        log.push_str(&format!("{}\t{}\t{}\t{}\n", e.epoch, e.mask, e.recon, e.total));
    }
    write_file(&dir.join("pretext_loss.tsv"), &log)?;
    let path = dir.join("autoencoder.ckpt");
    model.to_checkpoint(&digest).save(&path)?;
    println!("{}", path.display());
    Ok(path)
}

pub fn cmd_select(config: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let ds = config.prepare(config.seed)?;
    let autoencoder = match (config.mode.uses_autoencoder(), checkpoint) {
        (true, None) => {
            return Err(Error::Config(format!(
                "mode {} needs --checkpoint from `semisel pretrain`",
                config.mode
            )))
        }
        (true, Some(path)) => {
            let model = AutoencoderModel::from_checkpoint(&Checkpoint::load(path)?)?;
            if model.n_features() != ds.n_features() {
                return Err(Error::dimension("autoencoder checkpoint", ds.n_features(), model.n_features()));
            }
            if model.mask_task() != config.mode.mask_task() {
                return Err(Error::Config(format!(
                    "checkpoint was pretrained {} the mask task, which does not match mode {}",
                    if model.mask_task() { "with" } else { "without" },
                    config.mode
                )));
            }
            Some(model)
        }
        (false, Some(_)) => {
            log::warn!("mode {} ignores --checkpoint", config.mode);
            None
        }
        (false, None) => None,
    };
    let outcome = select_with(&ds, &config.pipeline(), autoencoder, None, config.seed)?;
    let digest = config.digest();
    let run_id = config.run_id("select");
    let ranking = outcome.ranking.with_digest(&digest);
    let path = run_dir(config, "rankings", &run_id)?.join("ranking.csv");
    ranking.save(&path)?;
    outcome
        .selector
        .to_checkpoint(&digest)
        .save(&run_dir(config, "checkpoints", &run_id)?.join("selector.ckpt"))?;
    info!(
        "selector loss {:.6} after {} steps",
        outcome.selector_log.epoch_loss.last().copied().unwrap_or(f64::NAN),
        outcome.selector_log.steps
    );
    let top: Vec<String> = ranking.top_k().iter().map(|&j| ranking.feature_names[j].clone()).collect();
    println!("top {}: {}", ranking.k, top.join(", "));
    if let Some(truth) = &ds.informative {
        info!("precision@{} {:.3}", ranking.k, precision_at_k(ranking.top_k(), truth));
    }
    info!("ranking written to {}", path.display());
    Ok(path)
}

pub fn cmd_evaluate(config: &RunConfig, ranking_path: &Path, k: Option<usize>) -> Result<RunRecord> {
    let ranking = FeatureRanking::load(ranking_path)?;
    let ds = config.prepare(config.seed)?;
    if ranking.weights.len() != ds.n_features() {
        return Err(Error::dimension("ranking", ds.n_features(), ranking.weights.len()));
    }
    if ds.labels.is_none() || ds.count(PartitionTag::Test) == 0 {
        return Err(Error::Validation("evaluation needs labeled test rows".into()));
    }
    let k = k.unwrap_or(ranking.k);
    let selected = select_top_k(&ranking, k)?;
    let m = downstream_eval(&ds, &selected, &config.classifier, SeedStream::new(config.seed).child("downstream"))?;
    let digest = config.digest();
    let run_id = config.run_id("evaluate");
    let record = RunRecord {
        run_id: run_id.clone(),
        config_digest: digest,
        experiment: "evaluate".into(),
        mode: ranking.mode,
        seed: config.seed,
        repeat: None,
        fold: None,
        noise: noise_label(&config.noise),
        k,
        budget: None,
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        precision_at_k: ds.informative.as_ref().map(|t| precision_at_k(&selected, t)),
        selected,
    };
    let path = run_dir(config, "results", &run_id)?.join("records.jsonl");
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", record.to_json_line()).map_err(|e| Error::io(&path, e))?;
    println!("accuracy {:.6}", m.accuracy);
    println!("macro_f1 {:.6}", m.macro_f1);
    Ok(record)
}

fn noise_label(specs: &[crate::noise::NoiseSpec]) -> String {
    if specs.is_empty() {
        "none".into()
    } else {
        specs.iter().map(|s| s.kind.name()).collect::<Vec<_>>().join("+")
    }
}

pub fn cmd_corrupt(config: &RunConfig, out: &Path) -> Result<()> {
    let ds = config.prepare(config.seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    ds.write_csv(out, &[format!("config_digest={}", config.digest())])?;
    info!("wrote {} rows to {}", ds.n_rows(), out.display());
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig, jobs: usize) -> Result<ExperimentResult> {
    let run_id = config.run_id("sweep");
    let mut ctx = RunContext::new(&run_id, config.digest());
    ctx.jobs = jobs;
    let dir = run_dir(config, "results", &run_id)?;
    let records_path = dir.join("records.jsonl");
    let file = File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut writer = BufWriter::new(file);
    let mut sink = |r: &RunRecord| -> Result<()> {
        writeln!(writer, "{}", r.to_json_line())
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(&records_path, e))?;
        info!(
            "{} {} seed {} noise {} k {} accuracy {:.4} macro_f1 {:.4}",
            r.experiment, r.mode, r.seed, r.noise, r.k, r.accuracy, r.macro_f1
        );
        Ok(())
    };
    let prepare = |seed: u64| config.prepare(seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let s = &config.sweep;
    let seeds = config.seed_list();
    let pipeline = config.pipeline();
    let k = config.selector.k;
    let result = pool.install(|| match s.kind {
        SweepKind::Noise => {
            noise_robustness_sweep(&ctx, &prepare, &s.noise, &s.ks, &s.modes, &seeds, &pipeline, &mut sink)
        }
        SweepKind::Budget => {
            let setting = match s.noise.as_slice() {
                [] => NoiseSetting::clean(),
                [one] => one.clone(),
                _ => return Err(Error::Config("a budget sweep takes at most one noise setting".into())),
            };
            label_budget_sweep(&ctx, &prepare, &s.budgets, &setting, k, &s.modes, &seeds, &pipeline, &mut sink)
        }
        SweepKind::Cv => cross_validate(
            &ctx,
            &prepare,
            s.folds,
            s.repeats,
            k,
            &seeds,
            s.shared_pretraining,
            &pipeline,
            &mut sink,
        ),
    })?;
    let table = result.to_table();
    write_file(&dir.join("table.tsv"), &table)?;
    print!("{table}");
    info!("sweep finished in {:.1?}", result.wall_clock);
    Ok(result)
}

/// Config digests embedded in an artifact: checkpoint meta, `# config_digest=`
/// header comments, and record-stream fields.
pub fn embedded_digests(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("meta config_digest ") {
            out.push(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("# config_digest=") {
            out.push(rest.trim().to_string());
        } else if line.starts_with('{') {
            if let Ok(r) = RunRecord::from_json_line(line) {
                out.push(r.config_digest);
            }
        }
    }
    out
}

pub fn cmd_verify(config: &RunConfig, artifacts: &[PathBuf]) -> Result<i32> {
    let digest = config.digest();
    let mut ok = true;
    for path in artifacts {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let found = embedded_digests(&text);
        let status = if found.is_empty() {
            "no digest"
        } else if found.iter().all(|d| *d == digest) {
            "ok"
        } else {
            "mismatch"
        };
        if status != "ok" {
            ok = false;
        }
        println!("{status}\t{}", path.display());
    }
    Ok(if ok { 0 } else { EXIT_MISMATCH })
}
