//! `jidm`: data generation, training, evaluation, rollouts, sweeps and plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use jidm::dataset::{read_dataset, write_dataset};
use jidm::experiment::{
    data_cells, dof_cells, evaluate, gap_by_dof, loss_curve_csv, run_rollouts, run_sweep, smallest_matching_budget, FieldChoice,
    RunConfig, SweepResult,
};
use jidm::metrics::{Metric, MetricsRow, MetricsTable};
use jidm::models::checkpoint::{load_checkpoint, save_checkpoint};
use jidm::models::train::train;
use jidm::models::{Model, ModelKind};
use jidm::plot::{plot_table, PlotSpec, XAxis};

#[derive(Parser)]
#[command(name = "jidm", version, about = "Jacobian inverse-dynamics experiments on a simulated planar finger")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration file; defaults apply to anything it leaves out
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel sweep cells
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration
    Defaults,
    /// Generate training and held-out datasets
    GenData {
        #[arg(long)]
        dof: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Train one model and write its checkpoint and loss curve
    Train {
        #[arg(long)]
        kind: Option<ModelKind>,
        /// Training set manifest; generated from the config when absent
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        dof: Option<usize>,
    },
    /// Held-out action MSE (and flow EPE for field models) of a checkpoint
    EvalIdm {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest
        #[arg(long)]
        data: PathBuf,
        /// Recovery ridge weight, image-normalized
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Closed-loop reaching episodes
    Rollout {
        /// Field model checkpoint; the analytic field is used when absent
        #[arg(long, conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Every (kind, DoF, seed) at a fixed budget
    SweepDof,
    /// Every (kind, budget, seed) at a fixed DoF
    SweepData,
    /// Line plot of seed medians from a metrics file
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        experiment: String,
        #[arg(long, default_value = "dof")]
        x: XAxis,
        #[arg(long, default_value = "action_mse")]
        y: Metric,
        /// Comma-separated kinds; all when absent
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        log_y: bool,
        #[arg(long, default_value = "")]
        title: String,
        /// Output SVG path
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn create_dir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sweep_outputs(cfg: &RunConfig, name: &str, x: XAxis, result: &SweepResult) -> anyhow::Result<PathBuf> {
    let dir = cfg.out.join(name);
    create_dir(&dir)?;
    let path = dir.join("metrics.csv");
    write(&path, result.table.to_csv()?)?;
    for (cell, err) in &result.failures {
        log::error!("cell {cell} failed: {err}");
    }
    let spec = PlotSpec {
        experiment: name.to_string(),
        kinds: vec![],
        x,
        y: Metric::ActionMse,
        log_x: x == XAxis::Budget,
        log_y: true,
        title: format!("held-out action MSE, {name}"),
    };
    match plot_table(&result.table, &spec) {
        Ok(svg) => write(&dir.join("mse.svg"), svg)?,
        Err(e) => log::warn!("no MSE plot: {e}"),
    }
    Ok(path)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Defaults => {
            print!("{}", RunConfig::default().to_text());
        }
        Command::GenData { dof, budget } => {
            let cfg = load_config(g)?;
            let n = dof.unwrap_or(cfg.n_joints);
            let budget = budget.unwrap_or(cfg.data.budget);
            let dir = cfg.out.join("data");
            create_dir(&dir)?;
            let train_path = write_dataset(&cfg.train_set(n, budget, cfg.seed)?, &dir, "train", None)?;
            let test_path = write_dataset(&cfg.test_set(n, cfg.seed)?, &dir, "test", None)?;
            println!("{}", train_path.display());
            println!("{}", test_path.display());
        }
        Command::Train { kind, data, dof } => {
            let cfg = load_config(g)?;
            let kind = kind.unwrap_or(cfg.model.kind);
            let train_set = match &data {
                Some(p) => read_dataset(p).with_context(|| format!("reading {}", p.display()))?,
                None => cfg.train_set(dof.unwrap_or(cfg.n_joints), cfg.data.budget, cfg.seed)?,
            };
            let n = train_set.n_joints();
            if let Some(d) = dof {
                if d != n {
                    bail!("--dof {d} does not match the dataset's {n} joints");
                }
            }
            let init = cfg.build_model(kind, n, cfg.seed)?;
            let (model, curve) = train(&init, &train_set, &cfg.train_config(n, cfg.seed))?;
            let dir = cfg.out.join(format!("{kind}-dof{n}-s{}", cfg.seed));
            create_dir(&dir)?;
            save_checkpoint(&model, &dir.join("model.ckpt"))?;
            write(&dir.join("loss.csv"), loss_curve_csv(&curve))?;
            println!("{}", dir.join("model.ckpt").display());
        }
        Command::EvalIdm { checkpoint, data, lambda } => {
            let mut cfg = load_config(g)?;
            if let Some(l) = lambda {
                cfg.eval.lambda_inf = l;
            }
            let model = load_checkpoint(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let test = read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            let mut row = MetricsRow::new("eval", &model.kind().to_string(), test.n_joints(), 0, cfg.seed);
            let start = std::time::Instant::now();
            evaluate(&cfg, &model, &test, &mut row)?;
            row.wall_time = start.elapsed().as_secs_f64();
            let table = MetricsTable::new(vec![row]);
            print!("{}", table.to_csv()?);
            create_dir(&cfg.out)?;
            table.append_to(&cfg.out.join("metrics.csv"))?;
        }
        Command::Rollout { checkpoint, oracle: _, episodes } => {
            let mut cfg = load_config(g)?;
            if let Some(e) = episodes {
                cfg.control.episodes = e;
            }
            let field = match &checkpoint {
                None => FieldChoice::Analytic,
                Some(p) => match load_checkpoint(p).with_context(|| format!("reading {}", p.display()))? {
                    Model::Field(m) => {
                        cfg.n_joints = m.n_joints();
                        FieldChoice::Learned(Arc::new(m))
                    }
                    Model::Direct(_) => bail!("rollouts need a field model checkpoint"),
                },
            };
            let (logs, row) = run_rollouts(&cfg, &field, cfg.seed)?;
            let dir = cfg.out.join("rollouts");
            create_dir(&dir)?;
            for (i, log) in logs.iter().enumerate() {
                write(&dir.join(format!("episode_{i:03}.log")), log.to_text())?;
            }
            let table = MetricsTable::new(vec![row]);
            print!("{}", table.to_csv()?);
            table.append_to(&cfg.out.join("metrics.csv"))?;
        }
        Command::SweepDof => {
            let cfg = load_config(g)?;
            let result = run_sweep(&cfg, "dof", &dof_cells(&cfg), g.jobs, Some(&cfg.out))?;
            let path = sweep_outputs(&cfg, "dof", XAxis::Dof, &result)?;
            println!("{}", path.display());
            println!("dof,jidm,best_direct,gap");
            for r in gap_by_dof(&result.table, "dof") {
                println!("{},{:.6},{:.6},{:.6}", r.dof, r.jidm, r.best_direct, r.gap);
            }
        }
        Command::SweepData => {
            let cfg = load_config(g)?;
            let result = run_sweep(&cfg, "data", &data_cells(&cfg), g.jobs, Some(&cfg.out))?;
            let path = sweep_outputs(&cfg, "data", XAxis::Budget, &result)?;
            println!("{}", path.display());
            match smallest_matching_budget(&result.table, "data") {
                Some(b) => println!("smallest jidm budget matching the best direct model at the largest budget: {b}"),
                None => println!("no jidm budget matches the best direct model at the largest budget"),
            }
        }
        Command::Plot { metrics, experiment, x, y, kinds, log_x, log_y, title, output } => {
            let text = std::fs::read_to_string(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
            let table = MetricsTable::parse(&text)?;
            let spec = PlotSpec { experiment, kinds, x, y, log_x, log_y, title };
            write(&output, plot_table(&table, &spec)?)?;
        }
    }
    Ok(())
}

fn error_code(e: &anyhow::Error) -> &'static str {
    e.chain().find_map(|c| c.downcast_ref::<jidm::Error>()).map(|e| e.code()).unwrap_or("io")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error\tcode={}\tmessage={msg}", error_code(&e));
            ExitCode::FAILURE
        }
    }
}
