//! `camforest` command-line entry point.
//!
//! Every subcommand reads and writes the file formats of the core crate:
//! model files (JSON), array CSVs with JSON sidecars, report CSVs, tiling
//! plans and cost reports. Exit status is 0 on success, 2 for bad
//! arguments, configs or missing inputs, and 1 when a pipeline step fails.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use camforest::pipeline::DATA_DIR_ENV;

#[derive(Parser, Debug)]
#[command(name = "camforest", version, about = "Soft decision trees on analog CAM")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a tree or forest and write a model file.
    Train(TrainCmd),
    /// Turn a hard tree or forest into a trained soft model.
    Soften(SoftenCmd),
    /// Map a model onto CAM threshold arrays.
    Map(MapCmd),
    /// Monte Carlo accuracy under threshold variation.
    Mc(McCmd),
    /// Variation sweep over several models and magnitudes.
    Sweep(SweepCmd),
    /// Root-feature replacement attack.
    Attack(AttackCmd),
    /// Match-line circuit simulation, behavior fitting and column study.
    Circuit(CircuitCmd),
    /// Tile a model's arrays into subarrays.
    Plan(PlanCmd),
    /// Latency and energy of a tiling plan.
    Cost(CostCmd),
    /// Class-score surface over two features.
    Surface(SurfaceCmd),
    /// Run a declarative pipeline from a JSON config.
    Run(RunCmd),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// wdbc, iris, mnist or csv.
    #[arg(long, default_value = "wdbc")]
    dataset: String,
    /// Dataset root.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// CSV file for `--dataset csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// Comma-separated feature subset.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Sigmoid gain for soft models.
    #[arg(long, visible_alias = "gain-k", default_value_t = 20.0)]
    k: f64,
    /// Behavior parameters: `a,b` (gain from --k), a JSON file, or
    /// `fit-from-circuit`.
    #[arg(long)]
    behavior: Option<String>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, visible_alias = "lr", default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Dt,
    Sdt,
    Rf,
    Srf,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_enum, default_value = "dt")]
    model: KindArg,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 50)]
    n_trees: usize,
    /// A number or `tune`.
    #[arg(long, default_value = "0")]
    ccp_alpha: String,
    /// Soft-forest members train on at most this many bootstrap draws.
    #[arg(long)]
    member_train_limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SoftenCmd {
    /// Hard tree or forest model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    member_train_limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short, default_value = "soft.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MapCmd {
    #[arg(long)]
    model: PathBuf,
    /// Array CSV; the sidecar goes next to it with a .json extension.
    /// Forests write one numbered pair per tree.
    #[arg(long, short, default_value = "array.csv")]
    out: PathBuf,
    /// Write wildcards as this voltage instead of an empty cell.
    #[arg(long)]
    wildcard_voltage: Option<f64>,
}

#[derive(Args, Debug)]
struct McCmd {
    #[arg(long)]
    model: PathBuf,
    /// `uniform:<half-width>` or `gaussian:<sigma>`, in volts.
    #[arg(long, default_value = "uniform:0.1")]
    noise: String,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    test_limit: Option<usize>,
    /// Report CSV (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepCmd {
    /// Model files; repeat for several models.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long, default_value = "uniform")]
    kind: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.025,0.05,0.075,0.1")]
    magnitudes: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Level {
    Software,
    Cam,
}

#[derive(Args, Debug)]
struct AttackCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = camforest::robust::ATTACK_TRIALS)]
    trials: usize,
    #[arg(long, value_enum, default_value = "software")]
    level: Level,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CircuitCmd {
    /// Row description: conditions and the input applied to each.
    #[arg(long)]
    row: Option<PathBuf>,
    /// Sweep the input of this condition over [-1, 1] instead of writing a trace.
    #[arg(long)]
    sweep: Option<usize>,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Circuit parameters JSON (default: calibrated defaults).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Fit behavior parameters to the reference 4-cell row.
    #[arg(long)]
    characterize: bool,
    /// Run the column-count scaling study.
    #[arg(long)]
    scaling: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100,200,500,1000")]
    n_cols: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlanCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Rows per band (default: the width).
    #[arg(long)]
    band_height: Option<usize>,
    #[arg(long, short, default_value = "plan.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CostCmd {
    /// Plan file written by `plan`.
    #[arg(long)]
    plan: PathBuf,
    /// Calibration JSON.
    #[arg(long, conflicts_with = "reference")]
    calibration: Option<PathBuf>,
    /// Calibrate so that this plan costs the reference per-sample energy.
    #[arg(long)]
    reference: bool,
    /// Model the plan was made from (for the digital reference).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Mean conditions per path, if no model is given.
    #[arg(long)]
    path_len: Option<f64>,
    /// Also write the calibration used.
    #[arg(long)]
    save_calibration: Option<PathBuf>,
    /// Report file; `.csv` selects CSV, anything else JSON.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SurfaceCmd {
    #[arg(long)]
    model: PathBuf,
    /// Two comma-separated feature names.
    #[arg(long, value_delimiter = ',', num_args = 1, required = true)]
    features: Vec<String>,
    #[arg(long, default_value_t = camforest::robust::SURFACE_RESOLUTION)]
    resolution: usize,
    #[arg(long, short, default_value = "surface.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunCmd {
    config: PathBuf,
    /// Dataset root when the config does not name one.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
