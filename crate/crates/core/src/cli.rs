//! Command-line interface. [`run`] maps every outcome to an exit code:
//! 0 success, 1 usage or config error, 2 data error, 3 runtime failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{FoldPlan, Role};
use crate::error::{Error, Result};
use crate::harness::output::{sweep_chart, write_cv_run, write_json, write_text};
use crate::harness::{
    ablation_grid, context_sweep, cross_validate_with, grid_to_csv, online_evaluate, sweep_to_csv,
    Dataset, SweepMode, TrainConfig,
};
use crate::metrics::{random_baseline, EvalReport};
use crate::model::{Checkpoint, ModelConfig, Variant};
use crate::store::{read_store, synth_generate, Modality, SynthConfig};

#[derive(Parser, Debug)]
#[command(
    name = "m3tcm",
    version,
    about = "Multi-task multi-modal context model for MI utterance classification"
)]
pub struct Cli {
    /// Seed for data generation, fold assignment, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with `train` and `synth` sections; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic embedding store.
    Synth(SynthArgs),
    /// Validate a store and write (or audit) a fold plan.
    Prepare(PrepareArgs),
    /// Cross-validated training.
    Train(TrainArgs),
    /// Score a checkpoint on a store.
    Evaluate(EvaluateArgs),
    /// Architecture x modality ablation table.
    Ablate(TrainArgs),
    /// Offline macro F1 against context size.
    Sweep(SweepArgs),
    /// Online macro F1 against context size.
    Online(SweepArgs),
    /// Proportional random baseline.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub reply_correlation: Option<f64>,
    #[arg(long)]
    pub d_text: Option<usize>,
    #[arg(long)]
    pub d_audio: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Audit this plan instead of generating one.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub modality: Option<Modality>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Run only these test folds.
    #[arg(long, value_delimiter = ',')]
    pub splits: Option<Vec<usize>>,
    #[arg(long)]
    pub attn_width: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub head_hidden: Option<Vec<usize>>,
    /// Small attention and head widths for CPU runs.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub no_positional: bool,
    /// Disable data parallelism.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sessions to score; defaults to the checkpoint's test sessions.
    #[arg(long, value_delimiter = ',')]
    pub sessions: Option<Vec<String>>,
    /// Score the last position of past-only windows.
    #[arg(long)]
    pub online: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(
        long = "ks",
        alias = "k-values",
        value_delimiter = ',',
        default_value = "1,2,4,6,8,10,12"
    )]
    pub ks: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// Class priors; defaults to the role's label distribution.
    #[arg(long, value_delimiter = ',')]
    pub priors: Option<Vec<f64>>,
    #[arg(long, default_value = "client")]
    pub role: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
}

/// Contents of `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthConfig>,
}

fn load_config(path: Option<&Path>) -> Result<CliConfig> {
    let Some(path) = path else {
        return Ok(CliConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth_config(cli: &Cli, file: &CliConfig, a: &SynthArgs) -> SynthConfig {
    let mut c = file.synth.clone().unwrap_or_default();
    macro_rules! set {
        ($($field:ident = $v:expr),*) => { $(if let Some(v) = $v { c.$field = v; })* };
    }
    set!(
        n_sessions = a.sessions,
        utterances_per_role = a.utterances,
        signal_strength = a.signal,
        cross_task_coupling = a.coupling,
        dependency_lag = a.lag,
        reply_correlation = a.reply_correlation,
        d_text = a.d_text,
        d_audio = a.d_audio,
        seed = cli.seed
    );
    c
}

fn train_config(cli: &Cli, file: &CliConfig, a: &TrainArgs, ds: &Dataset) -> Result<TrainConfig> {
    let mut c = file.train.clone().unwrap_or_default();
    if a.desk {
        let base = ModelConfig::desk(c.model.k, c.model.input_width);
        c.model.attn_width = base.attn_width;
        c.model.head_hidden = base.head_hidden;
    }
    macro_rules! set {
        ($($($field:ident).+ = $v:expr),*) => { $(if let Some(v) = $v.clone() { c.$($field).+ = v; })* };
    }
    set!(
        model.k = a.k,
        model.variant = a.variant,
        model.modality = a.modality,
        optimizer.lr = a.lr,
        epochs = a.epochs,
        batch_size = a.batch_size,
        optimizer.weight_decay = a.weight_decay,
        loss.gamma = a.gamma,
        n_folds = a.folds,
        model.attn_width = a.attn_width,
        model.head_hidden = a.head_hidden,
        seed = cli.seed
    );
    if a.splits.is_some() {
        c.folds = a.splits.clone();
    }
    if a.no_positional {
        c.model.use_positional = false;
    }
    if a.sequential {
        c.parallel = false;
    }
    c.model.input_width = c.model.modality.width(ds.store.meta());
    c.validate()?;
    Ok(c)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::new(read_store(path)?)
}

fn macro_line(label: &str, r: &EvalReport) -> String {
    let mut s = label.to_string();
    for role in Role::BOTH {
        if let Some(t) = r.task(role) {
            let _ = write!(s, " {role} macro-F1 {:.4}", t.macro_f1);
        }
    }
    s
}

fn cmd_synth(cli: &Cli, file: &CliConfig, a: &SynthArgs) -> Result<()> {
    let cfg = synth_config(cli, file, a);
    let data = synth_generate(&cfg)?;
    create_dir(&cli.out)?;
    data.store.write(&cli.out)?;
    println!(
        "wrote {} utterances in {} sessions to {}",
        data.store.len(),
        data.sessions.len(),
        cli.out.display()
    );
    Ok(())
}

fn cmd_prepare(cli: &Cli, a: &PrepareArgs) -> Result<()> {
    let ds = load_dataset(&a.store)?;
    let plan = match &a.plan {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<FoldPlan>(&text).map_err(|e| Error::json(p, e))?
        }
        None => ds.fold_plan(a.folds, cli.seed.unwrap_or(0))?,
    };
    crate::harness::audit_plan(&plan, &ds)?;
    create_dir(&cli.out)?;
    write_json(&cli.out.join("folds.json"), &plan)?;
    let mut csv = String::from("split,train_sessions,val_sessions,test_sessions\n");
    for (i, s) in plan.splits.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{i},{},{},{}",
            s.train.len(),
            s.val.len(),
            s.test.len()
        );
        println!(
            "split {i}: train {} val {} test {} sessions",
            s.train.len(),
            s.val.len(),
            s.test.len()
        );
    }
    write_text(&cli.out.join("folds.csv"), &csv)?;
    println!(
        "{} sessions, {} utterances, no leaks",
        ds.sessions.len(),
        ds.store.len()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, file: &CliConfig, a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.store)?;
    let cfg = train_config(cli, file, a, &ds)?;
    let plan = ds.fold_plan(cfg.n_folds, cfg.seed)?;
    let cv = cross_validate_with(&ds, &cfg, plan)?;
    write_cv_run(&cli.out, &cfg, &cv)?;
    for r in &cv.runs {
        println!(
            "{}",
            macro_line(
                &format!(
                    "split {} (epoch {}):",
                    r.record.split, r.record.selected_epoch
                ),
                &r.record.test
            )
        );
    }
    print!("{}", cv.aggregate.to_csv());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&a.store)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let sessions = a
        .sessions
        .clone()
        .unwrap_or_else(|| ck.meta.test_sessions.clone());
    if sessions.is_empty() {
        return Err(Error::Config("no sessions to evaluate".into()));
    }
    let report = if a.online {
        online_evaluate(&ds, &ck, &sessions, true)?
    } else {
        let data = ds.prepare(&sessions, &ck.meta.config, crate::data::StrideMode::Train)?;
        crate::harness::evaluate(&ck.params, &data, &ck.meta.config, true)?
    };
    create_dir(&cli.out)?;
    write_json(&cli.out.join("report.json"), &report)?;
    write_text(&cli.out.join("report.csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_ablate(cli: &Cli, file: &CliConfig, a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.store)?;
    let cfg = train_config(cli, file, a, &ds)?;
    let cells = ablation_grid(&ds, &cfg)?;
    create_dir(&cli.out)?;
    write_json(&cli.out.join("config.json"), &cfg)?;
    write_json(&cli.out.join("ablation.json"), &cells)?;
    write_text(&cli.out.join("ablation.csv"), &grid_to_csv(&cells))?;
    for c in &cells {
        let f = |r: Role| {
            c.aggregate
                .task(r)
                .map_or("-".to_string(), |t| format!("{:.4}", t.macro_mean))
        };
        println!(
            "{:<28} therapist {}  client {}",
            c.name,
            f(Role::Therapist),
            f(Role::Client)
        );
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, file: &CliConfig, a: &SweepArgs, mode: SweepMode) -> Result<()> {
    let ds = load_dataset(&a.train.store)?;
    let cfg = train_config(cli, file, &a.train, &ds)?;
    let points = context_sweep(&ds, &cfg, &a.ks)?;
    let stem = match mode {
        SweepMode::Offline => "sweep",
        SweepMode::Online => "online",
    };
    create_dir(&cli.out.join("plots"))?;
    write_json(&cli.out.join("config.json"), &cfg)?;
    write_json(&cli.out.join(format!("{stem}.json")), &points)?;
    let csv = sweep_to_csv(&points, mode);
    write_text(&cli.out.join(format!("{stem}.csv")), &csv)?;
    write_text(
        &cli.out.join("plots").join(format!("{stem}.svg")),
        &sweep_chart(&points, mode),
    )?;
    print!("{csv}");
    Ok(())
}

fn cmd_baseline(cli: &Cli, a: &BaselineArgs) -> Result<()> {
    let role: Role = match a.role.as_str() {
        "therapist" => Role::Therapist,
        "client" => Role::Client,
        other => return Err(Error::Config(format!("unknown role {other:?}"))),
    };
    let priors = a.priors.clone().unwrap_or_else(|| role.priors().to_vec());
    let total: f64 = priors.iter().sum();
    if priors.is_empty() || priors.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "priors must be non-negative and sum to 1, got {priors:?}"
        )));
    }
    if a.n == 0 || a.trials == 0 {
        return Err(Error::Config("--n and --trials must be positive".into()));
    }
    let labels = proportional_labels(&priors, a.n);
    let report = random_baseline(&labels, &priors, cli.seed.unwrap_or(0), a.trials)?;
    let names: Vec<String> = if priors.len() == role.n_classes() {
        role.classes().iter().map(|s| s.to_string()).collect()
    } else {
        (0..priors.len()).map(|i| format!("class{i}")).collect()
    };
    let mut csv = String::from("class,prior,precision,recall,f1\n");
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{name},{:.4},{:.6},{:.6},{:.6}",
            priors[i], report.precision[i], report.recall[i], report.f1[i]
        );
    }
    let _ = writeln!(csv, "macro,,,,{:.6}", report.macro_f1);
    create_dir(&cli.out)?;
    write_text(&cli.out.join("baseline.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// `n` labels with class counts proportional to `priors` (largest remainders).
pub fn proportional_labels(priors: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c, m))
        .collect()
}

fn dispatch(cli: &Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, &file, a),
        Command::Prepare(a) => cmd_prepare(cli, a),
        Command::Train(a) => cmd_train(cli, &file, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Ablate(a) => cmd_ablate(cli, &file, a),
        Command::Sweep(a) => cmd_sweep(cli, &file, a, SweepMode::Offline),
        Command::Online(a) => cmd_sweep(cli, &file, a, SweepMode::Online),
        Command::Baseline(a) => cmd_baseline(cli, a),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    crate::parallel::init_from_env();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
