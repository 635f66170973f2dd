mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dib_core::decomposition::LabelingMode;
use dib_core::dib::{BaselineRegularizer, Strategy};
use dib_core::DibError;

use config::{Check, DataConfig, ErmModes, FileConfig, Targets, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "dib", version, about = "Decodable information bottleneck experiments")]
struct Cli {
    /// Run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; every run writes to `<out>/<command>-<hash>-s<seed>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an encoder with the DIB objective (or a baseline).
    Train(TrainArgs),
    /// Train average and worst-case downstream classifiers on a frozen encoder.
    Downstream(DownstreamArgs),
    /// Rank a model zoo by the minimality probe and by generalization gap.
    Probe(ProbeArgs),
    /// Exact checks on a finite problem.
    Oracle(OracleArgs),
    /// Grid of beta x seed x downstream family.
    Sweep(SweepArgs),
    /// Write a synthetic dataset as CSV.
    DataGen(DataArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Dataset CSV to load instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Distractor classes (0 disables the distractor block).
    #[arg(long)]
    distractor_classes: Option<usize>,
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
}

impl DataArgs {
    fn apply(&self, c: &mut DataConfig) {
        set(&mut c.path, self.data.clone().map(Some));
        set(&mut c.n_per_class, self.n_per_class);
        set(&mut c.n_classes, self.classes);
        set(&mut c.dim, self.dim);
        set(&mut c.noise, self.noise);
        set(&mut c.distractor_classes, self.distractor_classes);
        set(&mut c.strength, self.strength);
        set(&mut c.seed, self.data_seed.map(Some));
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Joint,
    Unrolled,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelingArg {
    Base,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    None,
    Dropout,
    WeightDecay,
    Vib,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Minimality heads (labelings) per class set.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Head-only steps per encoder step with the unrolled strategy.
    #[arg(long)]
    n_inner: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    encoder_hidden: Option<Vec<usize>>,
    #[arg(long)]
    z_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    head_hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    labeling: Option<LabelingArg>,
    /// One set of minimality heads per class instead of shared heads.
    #[arg(long)]
    per_class_heads: bool,
    /// Replace the stochastic DIB encoder by a regularized baseline.
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    /// Dropout rate, weight decay or VIB beta of the baseline.
    #[arg(long)]
    baseline_strength: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl ModelArgs {
    fn apply(&self, c: &mut TrainConfig) -> Result<(), DibError> {
        set(&mut c.k, self.k);
        match (self.strategy, self.n_inner) {
            (Some(StrategyArg::Joint), _) => c.strategy = Strategy::JointReversal,
            (Some(StrategyArg::Unrolled), n) => c.strategy = Strategy::Unrolled { n_inner: n.unwrap_or(5) },
            (None, Some(n)) => match &mut c.strategy {
                Strategy::Unrolled { n_inner } => *n_inner = n,
                Strategy::JointReversal => return Err(DibError::Config("--n-inner needs the unrolled strategy".into())),
            },
            (None, None) => {}
        }
        set(&mut c.encoder_hidden, self.encoder_hidden.clone());
        set(&mut c.z_dim, self.z_dim);
        set(&mut c.head_hidden, self.head_hidden.clone());
        set(
            &mut c.labeling,
            self.labeling.map(|l| match l {
                LabelingArg::Base => LabelingMode::BaseExpansion,
                LabelingArg::Random => LabelingMode::Random,
            }),
        );
        if self.per_class_heads {
            c.shared_heads = false;
        }
        if let Some(b) = self.baseline {
            let s = self.baseline_strength;
            c.baseline = match b {
                BaselineArg::None => Some(BaselineRegularizer::None),
                BaselineArg::Dropout => Some(BaselineRegularizer::Dropout { p: s.unwrap_or(0.5) }),
                BaselineArg::WeightDecay => Some(BaselineRegularizer::WeightDecay { lambda: s.unwrap_or(1e-4) }),
                BaselineArg::Vib => Some(BaselineRegularizer::VibKl { beta: s.unwrap_or(0.1) }),
            };
        } else if self.baseline_strength.is_some() {
            return Err(DibError::Config("--baseline-strength needs --baseline".into()));
        }
        set(&mut c.optim.epochs, self.epochs);
        set(&mut c.optim.lr, self.lr);
        set(&mut c.optim.batch_size, self.batch_size);
        Ok(())
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Avg,
    Worst,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetsArg {
    Labels,
    Distractor,
}

#[derive(Args, Debug)]
struct DownstreamArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Weights of the test loss in the worst-case search.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    family_hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    targets: Option<TargetsArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory of model checkpoints; a fresh zoo is trained when absent.
    #[arg(long)]
    zoo: Option<PathBuf>,
    #[arg(long)]
    zoo_size: Option<usize>,
    #[arg(long)]
    zoo_epochs: Option<usize>,
    /// Largest train log loss of a retained model.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    labeling: Option<LabelingArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CheckArg {
    Theorem1,
    Prop2,
    Pac,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Problem file (TOML with x_size, y_size, z_size, labels, p_x).
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    check: Option<Vec<CheckArg>>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    /// Number of seeds, starting at the run seed.
    #[arg(long)]
    seeds: Option<usize>,
    /// Hidden widths of the one-layer downstream families.
    #[arg(long, value_delimiter = ',')]
    family: Option<Vec<usize>>,
    #[arg(long)]
    gamma: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Global settings after merging the file and the flags.
pub struct Globals {
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

fn resolve(cli: Cli) -> Result<(Globals, FileConfig, Command), DibError> {
    let mut file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let workers = cli.workers.or(file.workers).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(DibError::Config("--workers must be >= 1".into()));
    }
    let globals = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("runs")),
        workers,
    };
    match &cli.command {
        Command::Train(a) => {
            a.data.apply(&mut file.data);
            a.model.apply(&mut file.train)?;
            set(&mut file.train.beta, a.beta);
        }
        Command::Downstream(a) => {
            a.data.apply(&mut file.data);
            let d = &mut file.downstream;
            set(&mut d.checkpoint, a.checkpoint.clone().map(Some));
            set(
                &mut d.mode,
                a.mode.map(|m| match m {
                    ModeArg::Avg => ErmModes::Avg,
                    ModeArg::Worst => ErmModes::Worst,
                    ModeArg::Both => ErmModes::Both,
                }),
            );
            set(&mut d.gammas, a.gamma.clone());
            set(&mut d.family_hidden, a.family_hidden.clone());
            set(
                &mut d.targets,
                a.targets.map(|t| match t {
                    TargetsArg::Labels => Targets::Labels,
                    TargetsArg::Distractor => Targets::Distractor,
                }),
            );
            set(&mut d.optim.epochs, a.epochs);
            set(&mut d.optim.lr, a.lr);
            set(&mut d.optim.batch_size, a.batch_size);
        }
        Command::Probe(a) => {
            a.data.apply(&mut file.data);
            let p = &mut file.probe;
            set(&mut p.zoo, a.zoo.clone().map(Some));
            set(&mut p.zoo_spec.size, a.zoo_size);
            set(&mut p.zoo_spec.optim.epochs, a.zoo_epochs);
            set(&mut p.settings.train_loss_threshold, a.threshold);
            set(&mut p.settings.k, a.k);
            set(
                &mut p.settings.mode,
                a.labeling.map(|l| match l {
                    LabelingArg::Base => LabelingMode::BaseExpansion,
                    LabelingArg::Random => LabelingMode::Random,
                }),
            );
        }
        Command::Oracle(a) => {
            let o = &mut file.oracle;
            set(&mut o.problem, a.problem.clone().map(Some));
            set(
                &mut o.checks,
                a.check.as_ref().map(|cs| {
                    cs.iter()
                        .map(|c| match c {
                            CheckArg::Theorem1 => Check::Theorem1,
                            CheckArg::Prop2 => Check::Prop2,
                            CheckArg::Pac => Check::Pac,
                        })
                        .collect()
                }),
            );
            set(&mut o.resolution, a.resolution);
            set(&mut o.beta, a.beta);
            set(&mut o.m, a.m);
            set(&mut o.draws, a.draws);
            set(&mut o.delta, a.delta);
        }
        Command::Sweep(a) => {
            a.data.apply(&mut file.data);
            a.model.apply(&mut file.train)?;
            let s = &mut file.sweep;
            set(&mut s.betas, a.beta.clone());
            set(&mut s.seeds, a.seeds);
            set(&mut s.families, a.family.clone());
            set(&mut s.gamma, a.gamma);
        }
        Command::DataGen(a) => a.apply(&mut file.data),
    }
    Ok((globals, file, cli.command))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e.chain().any(|c| matches!(c.downcast_ref::<DibError>(), Some(DibError::Numeric(_))));
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(cli).map_err(anyhow::Error::from).and_then(|(globals, file, command)| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(globals.workers).build()?;
        pool.install(|| commands::run(&globals, &file, &command))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
