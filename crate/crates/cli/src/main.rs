use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use onebit::data::{load_dataset, parse_movielens, write_dataset};
use onebit::error::{Error, Result};
use onebit::experiment::{
    cross_validate, evaluate, prepare_data, run_with_model, sweep_noise, write_sweep_csv, BoundSettings, CvSettings,
    ExperimentConfig, SavedModel, Solver,
};
use onebit::model::PriorFamily;

#[derive(Parser)]
#[command(name = "onebit", version, about = "Variational 1-bit matrix completion experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where to write the command's output; stdout when unset.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    solver: Option<SolverArg>,
    #[arg(long, global = true)]
    prior: Option<PriorArg>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Hinge temperature; the number of training observations when unset.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Number of latent factors.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Hinge,
    Logit,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Gamma,
    InvGamma,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Movielens,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured training data in the text format.
    Simulate,
    /// Fit the configured solver and print the JSON report.
    Fit {
        /// Also save the factor means for `evaluate`.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Risks of a saved model on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Cross-validation table over the configured grid.
    Cv,
    /// Truth error of both solvers across switch-noise levels, as CSV.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3])]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        replications: usize,
    },
    /// Fit the hinge solver and report the empirical risk bound.
    Bound {
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParameter(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = c.solver {
        cfg.solver = match s {
            SolverArg::Hinge => Solver::Hinge,
            SolverArg::Logit => Solver::Logit,
        };
    }
    if let Some(p) = c.prior {
        cfg.prior.family = match p {
            PriorArg::Gamma => PriorFamily::Gamma,
            PriorArg::InvGamma => PriorFamily::InvGamma,
        };
    }
    if let Some(a) = c.alpha {
        cfg.prior.alpha = a;
    }
    if let Some(b) = c.beta {
        cfg.prior.beta = b;
    }
    if let Some(l) = c.lambda {
        cfg.lambda = Some(l);
    }
    if let Some(k) = c.k {
        cfg.prior.k = k;
    }
    if let Some(o) = &c.out {
        cfg.output = Some(o.clone());
    }
    Ok(cfg)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = open_out(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config {
                path: "--threads".into(),
                msg: e.to_string(),
            })?;
    }
    let mut cfg = load_config(&cli.common)?;
    let out = cfg.output.clone();
    let out = out.as_deref();
    match cli.command {
        Command::Simulate => {
            cfg.validate()?;
            let data = prepare_data(&cfg)?;
            let mut w = open_out(out)?;
            write_dataset(&data.train, &mut w)?;
            w.flush()?;
        }
        Command::Fit { model_out } => {
            let (report, model) = run_with_model(&cfg)?;
            if let Some(p) = model_out {
                write_json(&model.to_saved(), Some(&p))?;
            }
            write_json(&report, out)?;
        }
        Command::Evaluate { model, data, format } => {
            let text = std::fs::read_to_string(&model)?;
            let model: SavedModel = serde_json::from_str(&text)?;
            let data = match format {
                FormatArg::Text => load_dataset(&data)?,
                FormatArg::Movielens => parse_movielens(&data)?,
            };
            write_json(&evaluate(&model, &data)?, out)?;
        }
        Command::Cv => {
            cfg.cv.get_or_insert_with(CvSettings::default);
            cfg.validate()?;
            let data = prepare_data(&cfg)?;
            write_json(&cross_validate(&cfg, &data.train)?, out)?;
        }
        Command::Sweep { levels, replications } => {
            let rows = sweep_noise(&cfg, &levels, replications)?;
            write_sweep_csv(&rows, open_out(out)?)?;
        }
        Command::Bound { epsilon } => {
            let b = cfg.bound.get_or_insert_with(BoundSettings::default);
            if let Some(e) = epsilon {
                b.epsilon = e;
            }
            let (report, _) = run_with_model(&cfg)?;
            write_json(&report, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
