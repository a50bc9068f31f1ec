//! `qdiscord`: discord oracle, dataset generation, training and evaluation.
//!
//! Every command first prints a `# qdiscord <command> key=value ...` line on
//! stderr that lists the full configuration, defaults included. Data goes to
//! stdout or `--out` as comma-separated text.
//!
//! Exit status: 0 on success, 2 for usage errors, 1 for runtime errors.

use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use qdiscord::datagen::{build_dataset, read_dataset, write_dataset, Dataset, Family, RealStateParams, SamplerConfig};
use qdiscord::features::{feature_dim, FeatureMap};
use qdiscord::models::{predict, ModelKind, ModelWeights};
use qdiscord::quantum::{read_state, DensityMatrix, DiscordBreakdown, OptimizerConfig};
use qdiscord::training::{
    default_decay, evaluate, evaluate_dataset, load_checkpoint, replicate_experiment, save_checkpoint, test_seed,
    train_prepared, write_report, write_trajectory, BatchMode, Checkpoint, PreparedData, RunStatus, Solver, TrainConfig,
    DEFAULT_DECAY_INTERVAL, DEFAULT_DEGREE, DEFAULT_HIDDEN, DEFAULT_LOG_EVERY, DEFAULT_LR0, DEFAULT_STEPS,
    DEFAULT_TEST_SIZE, DEFAULT_TRAIN_SIZE,
};
use qdiscord::xstate::{
    analytic_c, example_analytic_c, example_valid_interval, normalized_example_state, pauli_candidates, XStateParams,
};
use qdiscord::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "qdiscord", version, about = "Quantum discord of two-qubit states and neural-network estimators")]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feature dimension C(n+L, n) for one family and degree, or the full table.
    FeatureDim(FeatureDimArgs),
    /// Sample states and label them with the oracle.
    GenData(GenDataArgs),
    /// Discord breakdown of one state.
    Discord(DiscordArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Loss of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train several seeded replicates of each model and tabulate losses.
    Replicate(ReplicateArgs),
    /// Closed-form curves, oracle and optional prediction along the example family.
    SweepExample(SweepArgs),
    /// Predict the optimization term of one state with a checkpoint.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Xstate,
    Real,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Xstate => Family::XState,
            FamilyArg::Real => Family::Real,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Nn,
    Pknn,
    Dbnn,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Nn => ModelKind::Nn,
            ModelArg::Pknn => ModelKind::Pknn,
            ModelArg::Dbnn => ModelKind::Dbnn,
        }
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Oracle grid points in the polar angle.
    #[arg(long, default_value_t = OptimizerConfig::default().theta_points)]
    grid_theta: usize,
    /// Oracle grid points in the azimuth.
    #[arg(long, default_value_t = OptimizerConfig::default().phi_points)]
    grid_phi: usize,
    /// Grid minima refined by simplex descent.
    #[arg(long, default_value_t = OptimizerConfig::default().starts)]
    starts: usize,
    #[arg(long, default_value_t = OptimizerConfig::default().tol)]
    oracle_tol: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().max_iterations)]
    oracle_max_iter: usize,
}

impl OracleArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            theta_points: self.grid_theta,
            phi_points: self.grid_phi,
            starts: self.starts,
            tol: self.oracle_tol,
            max_iterations: self.oracle_max_iter,
        }
    }
}

#[derive(Args)]
struct FeatureDimArgs {
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Number of variables; overrides --family.
    #[arg(long)]
    n: Option<usize>,
    /// Total degree L; all of 1..=9 when omitted.
    #[arg(long)]
    degree: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "xstate")]
    family: FamilyArg,
    #[arg(long, default_value_t = DEFAULT_TRAIN_SIZE)]
    train_size: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_SIZE)]
    test_size: usize,
    /// Which set to write; the test set uses the seed derived from --seed.
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = qdiscord::datagen::DEFAULT_MAX_REJECTIONS)]
    max_rejections: usize,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiscordArgs {
    /// Family of --params.
    #[arg(long, value_enum, default_value = "xstate")]
    family: FamilyArg,
    /// Comma-separated parameter vector.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "state")]
    params: Option<String>,
    /// State file (`dim 4` then one `re im` line per entry).
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Args)]
struct TrainSpec {
    #[arg(long, value_enum, default_value = "xstate")]
    family: FamilyArg,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_LR0)]
    lr0: f64,
    /// Learning-rate decay factor; 0.98 for X-states, 0.96 for real states.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_DECAY_INTERVAL)]
    decay_interval: usize,
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    degree: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    /// `full` or a mini-batch size.
    #[arg(long, default_value = "full")]
    batch: String,
    /// `dense` or `subspace[:tol]`.
    #[arg(long, default_value = "subspace")]
    solver: String,
    #[arg(long, default_value_t = DEFAULT_LOG_EVERY)]
    log_every: usize,
    /// Training samples; all of --data when omitted and a file is given.
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Training set file; sampled from --seed when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test set file; sampled from the derived test seed when omitted.
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleArgs,
}

impl TrainSpec {
    fn config(&self, kind: ModelKind) -> Result<TrainConfig, Failure> {
        let family: Family = self.family.into();
        let cfg = TrainConfig {
            kind,
            steps: self.steps,
            lr0: self.lr0,
            decay_factor: self.decay.unwrap_or_else(|| default_decay(family)),
            decay_interval: self.decay_interval,
            hidden: self.hidden,
            degree: self.degree,
            batch: parse_flag::<BatchMode>("--batch", &self.batch)?,
            seed: self.seed,
            log_every: self.log_every,
            solver: parse_flag::<Solver>("--solver", &self.solver)?,
        };
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn datasets(&self) -> Result<(Dataset, Dataset), Failure> {
        let family = self.family.into();
        let oracle = self.oracle.config();
        let train = obtain(family, self.data.as_deref(), self.train_size, DEFAULT_TRAIN_SIZE, self.seed, &oracle)?;
        let test = obtain(
            family,
            self.test_data.as_deref(),
            self.test_size,
            DEFAULT_TEST_SIZE,
            test_seed(self.seed),
            &oracle,
        )?;
        Ok((train, test))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "dbnn")]
    model: ModelArg,
    #[command(flatten)]
    run: TrainSpec,
    /// Checkpoint file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss trajectory file (`step,lr,loss`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Per-sample `c,prediction,abs_error` file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Models to train, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "nn,pknn,dbnn")]
    model: Vec<ModelArg>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[command(flatten)]
    run: TrainSpec,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one checkpoint per completed run.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    a_min: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    a_max: f64,
    /// Number of rows.
    #[arg(long, default_value_t = 101)]
    steps: usize,
    /// X-state checkpoint whose predictions fill the last column.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated parameter vector of the checkpoint's family.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "state")]
    params: Option<String>,
    #[arg(long)]
    state: Option<PathBuf>,
    /// Also run the oracle and report the absolute error.
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    oracle_cfg: OracleArgs,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn parse_flag<T: FromStr>(flag: &str, s: &str) -> Result<T, Failure>
where
    T::Err: Display,
{
    s.parse().map_err(|e| Failure::Usage(format!("{flag}: {e}")))
}

fn parse_params(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',').map(|v| parse_flag::<f64>("--params", v.trim())).collect()
}

/// One line on stderr with the resolved configuration.
fn echo(command: &str, items: &[(&str, String)]) {
    let fields: Vec<String> = items.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("# qdiscord {command} {}", fields.join(" "));
}

fn opt_path(p: Option<&Path>) -> String {
    p.map_or_else(|| "-".to_string(), |p| p.display().to_string())
}

fn oracle_echo(items: &mut Vec<(&str, String)>, o: &OptimizerConfig) {
    items.push(("grid_theta", o.theta_points.to_string()));
    items.push(("grid_phi", o.phi_points.to_string()));
    items.push(("starts", o.starts.to_string()));
    items.push(("oracle_tol", format!("{:e}", o.tol)));
    items.push(("oracle_max_iter", o.max_iterations.to_string()));
}

/// Runs `f` against `path`, or stdout when `path` is `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Error> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn open(p: &Path) -> Result<BufReader<File>, Error> {
    File::open(p).map(BufReader::new).map_err(|e| Error::io(p, e))
}

fn load_dataset(p: &Path) -> Result<Dataset, Error> {
    read_dataset(open(p)?)
}

fn load_ckpt(p: &Path) -> Result<Checkpoint, Error> {
    load_checkpoint(open(p)?)
}

fn generate(family: Family, m: usize, seed: u64, max_rejections: usize, oracle: &OptimizerConfig) -> Result<Dataset, Error> {
    let cfg = SamplerConfig {
        family,
        seed,
        max_rejections,
    };
    let start = Instant::now();
    let ds = build_dataset(&cfg, m, oracle)?;
    let rejected = ds.stats.attempts - ds.stats.accepted;
    eprintln!(
        "generated {m} {family} states (seed {seed}) in {:.1}s: {} draws, {rejected} rejected, acceptance {:.4}",
        start.elapsed().as_secs_f64(),
        ds.stats.attempts,
        ds.stats.acceptance_rate()
    );
    Ok(ds)
}

/// A dataset read from `path` (truncated to `size` if given) or sampled.
fn obtain(
    family: Family,
    path: Option<&Path>,
    size: Option<usize>,
    default_size: usize,
    seed: u64,
    oracle: &OptimizerConfig,
) -> Result<Dataset, Failure> {
    let Some(p) = path else {
        let m = size.unwrap_or(default_size);
        return Ok(generate(family, m, seed, qdiscord::datagen::DEFAULT_MAX_REJECTIONS, oracle)?);
    };
    let ds = load_dataset(p)?;
    if ds.family != family {
        return Err(Error::FamilyMismatch {
            expected: family.to_string(),
            found: format!("{} in {}", ds.family, p.display()),
        }
        .into());
    }
    match size {
        Some(m) if m > ds.len() => Err(Failure::Usage(format!(
            "{} holds {} samples, {m} requested",
            p.display(),
            ds.len()
        ))),
        Some(m) => Ok(ds.head(m)),
        None => Ok(ds),
    }
}

fn train_echo<'a>(items: &mut Vec<(&'a str, String)>, family: Family, cfg: &TrainConfig) {
    items.push(("family", family.to_string()));
    items.push(("model", cfg.kind.to_string()));
    items.push(("steps", cfg.steps.to_string()));
    items.push(("lr0", cfg.lr0.to_string()));
    items.push(("decay", cfg.decay_factor.to_string()));
    items.push(("decay_interval", cfg.decay_interval.to_string()));
    items.push(("degree", cfg.degree.to_string()));
    items.push(("hidden", cfg.hidden.to_string()));
    items.push(("batch", cfg.batch.to_string()));
    items.push(("solver", cfg.solver.to_string()));
    items.push(("log_every", cfg.log_every.to_string()));
    items.push(("seed", cfg.seed.to_string()));
}

fn data_echo<'a>(items: &mut Vec<(&'a str, String)>, run: &'a TrainSpec, train: &Dataset, test: &Dataset) {
    items.push(("data", opt_path(run.data.as_deref())));
    items.push(("test_data", opt_path(run.test_data.as_deref())));
    items.push(("train_size", train.len().to_string()));
    items.push(("test_size", test.len().to_string()));
    items.push(("train_seed", train.sampler_seed.to_string()));
    items.push(("test_seed", test.sampler_seed.to_string()));
}

fn cmd_feature_dim(a: &FeatureDimArgs) -> Result<(), Failure> {
    let ns: Vec<usize> = match (a.n, a.family) {
        (Some(n), _) => vec![n],
        (None, Some(f)) => vec![Family::from(f).n()],
        (None, None) => vec![Family::XState.n(), Family::Real.n()],
    };
    let degrees: Vec<usize> = a.degree.map_or_else(|| (1..=9).collect(), |l| vec![l]);
    echo(
        "feature-dim",
        &[
            ("n", ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")),
            ("degree", degrees.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")),
        ],
    );
    let mut rows = Vec::new();
    for &n in &ns {
        for &l in &degrees {
            rows.push((n, l, feature_dim(n, l).map_err(|e| Failure::Usage(e.to_string()))?));
        }
    }
    with_output(None, |w| {
        writeln!(w, "n,degree,dim")?;
        for (n, l, d) in rows {
            writeln!(w, "{n},{l},{d}")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<(), Failure> {
    let family: Family = a.family.into();
    let oracle = a.oracle.config();
    let (m, seed, split) = match a.split {
        Split::Train => (a.train_size, a.seed, "train"),
        Split::Test => (a.test_size, test_seed(a.seed), "test"),
    };
    let mut items = vec![
        ("family", family.to_string()),
        ("split", split.to_string()),
        ("size", m.to_string()),
        ("seed", a.seed.to_string()),
        ("sampler_seed", seed.to_string()),
        ("max_rejections", a.max_rejections.to_string()),
    ];
    oracle_echo(&mut items, &oracle);
    items.push(("out", opt_path(a.out.as_deref())));
    echo("gen-data", &items);
    oracle.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let ds = generate(family, m, seed, a.max_rejections, &oracle)?;
    with_output(a.out.as_deref(), |w| write_dataset(w, &ds))?;
    Ok(())
}

fn cmd_discord(a: &DiscordArgs) -> Result<(), Failure> {
    let oracle = a.oracle.config();
    let family: Family = a.family.into();
    let mut items = vec![
        ("family", family.to_string()),
        ("params", a.params.clone().unwrap_or_else(|| "-".into())),
        ("state", opt_path(a.state.as_deref())),
    ];
    oracle_echo(&mut items, &oracle);
    echo("discord", &items);
    let matrix = match (&a.params, &a.state) {
        (Some(p), None) => family.state(&parse_params(p)?)?.matrix().clone(),
        (None, Some(path)) => read_state(open(path)?)?,
        _ => return Err(Failure::Usage("give exactly one of --params or --state".into())),
    };
    let rho = DensityMatrix::new(matrix)?;
    let b = DiscordBreakdown::compute(&rho, &oracle)?;
    let dir = b.optimization.argmin;
    with_output(None, |w| {
        writeln!(w, "entropy_a,{:.16e}", b.entropy_a)?;
        writeln!(w, "entropy_b,{:.16e}", b.entropy_b)?;
        writeln!(w, "entropy_ab,{:.16e}", b.entropy_ab)?;
        writeln!(w, "mutual_information,{:.16e}", b.mutual_information)?;
        writeln!(w, "c_min,{:.16e}", b.optimization.c_min)?;
        writeln!(w, "argmin_theta,{:.16e}", dir.theta())?;
        writeln!(w, "argmin_phi,{:.16e}", dir.phi())?;
        writeln!(w, "classical_correlation,{:.16e}", b.classical_correlation)?;
        writeln!(w, "discord,{:.16e}", b.discord)?;
        if let Ok(p) = XStateParams::from_matrix(rho.matrix()) {
            let c = pauli_candidates(&p);
            writeln!(w, "candidate_z,{:.16e}", c.s_z)?;
            writeln!(w, "candidate_x,{:.16e}", c.s_x)?;
            writeln!(w, "candidate_y,{:.16e}", c.s_y)?;
            writeln!(w, "candidate_equator,{:.16e}", c.s_equator)?;
            writeln!(w, "analytic_c,{:.16e}", analytic_c(&p))?;
        }
        Ok(())
    })?;
    Ok(())
}

fn save_ckpt(path: &Path, ckpt: &Checkpoint) -> Result<(), Error> {
    with_output(Some(path), |w| save_checkpoint(w, ckpt))
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let family: Family = a.run.family.into();
    let cfg = a.run.config(a.model.into())?;
    let (train_set, test_set) = a.run.datasets()?;
    let mut items = Vec::new();
    train_echo(&mut items, family, &cfg);
    data_echo(&mut items, &a.run, &train_set, &test_set);
    oracle_echo(&mut items, &a.run.oracle.config());
    items.push(("out", opt_path(a.out.as_deref())));
    items.push(("log", opt_path(a.log.as_deref())));
    echo("train", &items);

    let train_data = PreparedData::new(&train_set, cfg.degree)?;
    let test_data = PreparedData::new(&test_set, cfg.degree)?;
    let out = train_prepared(&cfg, &train_data)?;
    let test = evaluate(&out.weights, test_data.features.view(), test_data.labels.view())?;
    let r = &out.record;
    println!("model,steps,rank,dead_units_at_init,train_loss,test_loss,wall_s");
    println!(
        "{},{},{},{},{:.16e},{:.16e},{:.3}",
        cfg.kind,
        cfg.steps,
        r.rank,
        r.dead_units_at_init,
        r.train_loss,
        test.loss,
        r.wall_time.as_secs_f64()
    );
    if let Some(p) = &a.log {
        with_output(Some(p), |w| write_trajectory(w, &r.trajectory))?;
    }
    if let Some(p) = &a.out {
        save_ckpt(
            p,
            &Checkpoint {
                family,
                config: cfg,
                steps_done: cfg.steps,
                weights: out.weights,
            },
        )?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    echo(
        "eval",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("data", a.data.display().to_string()),
            ("out", opt_path(a.out.as_deref())),
        ],
    );
    let ckpt = load_ckpt(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    if ds.family != ckpt.family {
        return Err(Error::FamilyMismatch {
            expected: ckpt.family.to_string(),
            found: ds.family.to_string(),
        }
        .into());
    }
    let ev = evaluate_dataset(&ckpt.weights, &ds, ckpt.config.degree)?;
    println!("model,samples,loss");
    println!("{},{},{:.16e}", ckpt.weights.kind(), ds.len(), ev.loss);
    if let Some(p) = &a.out {
        with_output(Some(p), |w| {
            writeln!(w, "c,prediction,abs_error")?;
            for (c, pred) in &ev.pairs {
                writeln!(w, "{c:.16e},{pred:.16e},{:.16e}", (c - pred).abs())?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn cmd_replicate(a: &ReplicateArgs) -> Result<(), Failure> {
    let family: Family = a.run.family.into();
    if a.model.is_empty() {
        return Err(Failure::Usage("--model needs at least one model".into()));
    }
    let configs = a
        .model
        .iter()
        .map(|&m| a.run.config(m.into()))
        .collect::<Result<Vec<_>, _>>()?;
    let (train_set, test_set) = a.run.datasets()?;
    let mut items = Vec::new();
    train_echo(&mut items, family, &configs[0]);
    items[1].1 = configs.iter().map(|c| c.kind.to_string()).collect::<Vec<_>>().join(",");
    items.push(("runs", a.runs.to_string()));
    data_echo(&mut items, &a.run, &train_set, &test_set);
    oracle_echo(&mut items, &a.run.oracle.config());
    items.push(("out", opt_path(a.out.as_deref())));
    items.push(("checkpoint_dir", opt_path(a.checkpoint_dir.as_deref())));
    echo("replicate", &items);

    let train_data = PreparedData::new(&train_set, a.run.degree)?;
    let test_data = PreparedData::new(&test_set, a.run.degree)?;
    let mut reports = Vec::new();
    for cfg in &configs {
        let (report, weights) = replicate_experiment(cfg, &train_data, &test_data, a.runs)?;
        for r in &report.rows {
            let status = match r.status {
                RunStatus::Completed => "ok".to_string(),
                RunStatus::Diverged { step } => format!("diverged at step {step}"),
            };
            eprintln!(
                "{} run {}: test {:.4e} ({status}, rank {}, {:.1}s)",
                cfg.kind,
                r.run,
                r.test_loss.unwrap_or(f64::NAN),
                r.rank,
                r.wall_time.as_secs_f64()
            );
        }
        if let Some(dir) = &a.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            for (r, w) in report.rows.iter().zip(weights) {
                if let Some(weights) = w {
                    let path = dir.join(format!("{}-run{}.ckpt", cfg.kind.to_string().to_lowercase(), r.run));
                    let config = TrainConfig { seed: r.seed, ..*cfg };
                    save_ckpt(
                        &path,
                        &Checkpoint {
                            family,
                            config,
                            steps_done: cfg.steps,
                            weights,
                        },
                    )?;
                }
            }
        }
        reports.push(report);
    }
    with_output(a.out.as_deref(), |w| write_report(w, &reports))?;
    Ok(())
}

fn predict_one(w: &ModelWeights, map: &FeatureMap, x: &[f64]) -> Result<f64, Error> {
    let phi = map.transform(x)?;
    let row = Array2::from_shape_vec((1, phi.len()), phi.0).expect("one row");
    Ok(predict(w, row.view())?[0])
}

fn checkpoint_map(ckpt: &Checkpoint) -> Result<FeatureMap, Error> {
    let map = FeatureMap::new(ckpt.n(), ckpt.config.degree)?;
    if map.dim() != ckpt.weights.feature_dim() {
        return Err(Error::FamilyMismatch {
            expected: format!("D={}", ckpt.weights.feature_dim()),
            found: format!("{} with L={} (D={})", ckpt.family, ckpt.config.degree, map.dim()),
        });
    }
    Ok(map)
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let oracle = a.oracle.config();
    let (lo, hi) = example_valid_interval();
    let mut items = vec![
        ("a_min", a.a_min.to_string()),
        ("a_max", a.a_max.to_string()),
        ("steps", a.steps.to_string()),
        ("checkpoint", opt_path(a.checkpoint.as_deref())),
    ];
    oracle_echo(&mut items, &oracle);
    items.push(("out", opt_path(a.out.as_deref())));
    echo("sweep-example", &items);
    eprintln!("valid interval: [{lo:.6}, {hi:.6}]");
    if !(a.a_min < a.a_max) || a.steps < 2 {
        return Err(Failure::Usage("need --a-min < --a-max and --steps >= 2".into()));
    }
    oracle.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let model = match &a.checkpoint {
        Some(p) => {
            let ckpt = load_ckpt(p)?;
            if ckpt.family != Family::XState {
                return Err(Error::FamilyMismatch {
                    expected: Family::XState.to_string(),
                    found: ckpt.family.to_string(),
                }
                .into());
            }
            let map = checkpoint_map(&ckpt)?;
            Some((ckpt, map))
        }
        None => None,
    };

    let nan = f64::NAN;
    let mut rows = Vec::with_capacity(a.steps);
    for i in 0..a.steps {
        let t = i as f64 / (a.steps - 1) as f64;
        let av = if i + 1 == a.steps { a.a_max } else { a.a_min + t * (a.a_max - a.a_min) };
        let curves = example_analytic_c(av).ok();
        let state = normalized_example_state(av).ok();
        let (oracle_c, prediction) = match &state {
            Some(rho) => {
                let c = qdiscord::quantum::minimize_conditional_entropy(rho, &oracle)?.c_min;
                let pred = match &model {
                    Some((ckpt, map)) => {
                        let p = XStateParams::from_matrix(rho.matrix())?;
                        predict_one(&ckpt.weights, map, p.as_array())?
                    }
                    None => nan,
                };
                (c, pred)
            }
            None => (nan, nan),
        };
        let valid = state.is_some() && curves.is_some();
        let (z, x, y, m) = curves.map_or((nan, nan, nan, nan), |c| (c.z_curve, c.x_curve, c.y_curve, c.min));
        rows.push((av, z, x, y, m, oracle_c, prediction, valid));
    }
    with_output(a.out.as_deref(), |w| {
        writeln!(w, "a,z_curve,x_curve,y_curve,analytic_min,oracle_c,model_prediction,valid")?;
        for (av, z, x, y, m, c, p, valid) in &rows {
            writeln!(
                w,
                "{av:.16e},{z:.16e},{x:.16e},{y:.16e},{m:.16e},{c:.16e},{p:.16e},{}",
                u8::from(*valid)
            )?;
        }
        Ok(())
    })?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<(), Failure> {
    let oracle = a.oracle_cfg.config();
    let mut items = vec![
        ("checkpoint", a.checkpoint.display().to_string()),
        ("params", a.params.clone().unwrap_or_else(|| "-".into())),
        ("state", opt_path(a.state.as_deref())),
        ("oracle", a.oracle.to_string()),
    ];
    oracle_echo(&mut items, &oracle);
    echo("predict", &items);
    let ckpt = load_ckpt(&a.checkpoint)?;
    let x: Vec<f64> = match (&a.params, &a.state) {
        (Some(p), None) => parse_params(p)?,
        (None, Some(path)) => {
            let m = read_state(open(path)?)?;
            match ckpt.family {
                Family::XState => XStateParams::from_matrix(&m)?.as_array().to_vec(),
                Family::Real => RealStateParams::from_matrix(&m)?.as_array().to_vec(),
            }
        }
        _ => return Err(Failure::Usage("give exactly one of --params or --state".into())),
    };
    if x.len() != ckpt.n() {
        return Err(Error::FamilyMismatch {
            expected: format!("{} (n={})", ckpt.family, ckpt.n()),
            found: format!("{} parameters", x.len()),
        }
        .into());
    }
    let rho = ckpt.family.state(&x)?;
    let map = checkpoint_map(&ckpt)?;
    let pred = predict_one(&ckpt.weights, &map, &x)?;
    println!("prediction,{pred:.16e}");
    if a.oracle {
        let c = qdiscord::quantum::minimize_conditional_entropy(&rho, &oracle)?.c_min;
        println!("oracle_c,{c:.16e}");
        println!("abs_error,{:.16e}", (c - pred).abs());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    eprintln!("# qdiscord threads={}", rayon::current_num_threads());
    match &cli.command {
        Command::FeatureDim(a) => cmd_feature_dim(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Discord(a) => cmd_discord(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Replicate(a) => cmd_replicate(a),
        Command::SweepExample(a) => cmd_sweep(a),
        Command::Predict(a) => cmd_predict(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own usage errors.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
