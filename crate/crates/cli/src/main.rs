use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cokrige::benchmark::{run_benchmark, summary_table, BenchmarkConfig, Problem};
use cokrige::design::{nest, DesignMethod, DesignRequest};
use cokrige::io::{
    design_table, load_model, provenance, read_points, read_table, save_model, write_table, RunConfig, Table,
};
use cokrige::metrics::{maxae, q2, rimse, rmse, EvalSet};
use cokrige::{fast_cv, loo_rmse, CVRequest, Error, PredictionMode, Result};

#[derive(Parser)]
#[command(name = "cokrige", version, about = "Recursive multi-fidelity co-kriging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Simple,
    Universal,
}

impl From<Mode> for PredictionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Simple => PredictionMode::Simple,
            Mode::Universal => PredictionMode::Universal,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate nested designs, one CSV per level.
    Design {
        /// Points per level, cheapest level first (e.g. 25,5).
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Per-dimension intervals `lo:hi`, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        bounds: Vec<String>,
        #[arg(long, default_value = "lhs")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Files are written as `<prefix><level>.csv`.
        #[arg(long, default_value = "level")]
        out_prefix: String,
    },
    /// Fit a model from a TOML run configuration.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the top level at query points.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the mode recorded in the model.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Cross-validate the top level.
    Cv {
        #[arg(long)]
        model: PathBuf,
        /// `loo` or a number of folds.
        #[arg(long, default_value = "loo")]
        folds: String,
        /// `top`, `all`, or the lowest level (1-based) points are removed from.
        #[arg(long, default_value = "top")]
        remove_depth: String,
        #[arg(long, value_enum, default_value = "universal")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy metrics of a prediction file against a truth file.
    Eval {
        /// CSV with `mean` and `variance` columns.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Column of the truth file; defaults to the last one.
        #[arg(long)]
        truth_column: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Co-kriging versus kriging on an analytic two-level problem.
    Benchmark {
        #[arg(long, default_value_t = 25)]
        n1: usize,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25")]
        n2: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "forrester")]
        problem: String,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_bounds(items: &[String]) -> Result<Vec<(f64, f64)>> {
    items
        .iter()
        .map(|s| {
            let (lo, hi) = s.split_once(':').ok_or_else(|| Error::Config(format!("bound `{s}` is not `lo:hi`")))?;
            let num =
                |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bound `{s}` is not numeric")));
            Ok((num(lo)?, num(hi)?))
        })
        .collect()
}

fn remove_depth(spec: &str, levels: usize) -> Result<usize> {
    match spec {
        "top" => Ok(levels),
        "all" => Ok(1),
        n => n
            .parse::<usize>()
            .ok()
            .filter(|t| (1..=levels).contains(t))
            .ok_or_else(|| Error::Config(format!("remove depth `{n}` must be top, all or a level in 1..={levels}"))),
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design { sizes, bounds, method, seed, out_prefix } => {
            let req =
                DesignRequest { sizes, bounds: parse_bounds(&bounds)?, method: method.parse::<DesignMethod>()?, seed };
            for (t, design) in nest(&req)?.iter().enumerate() {
                write_table(Path::new(&format!("{out_prefix}{}.csv", t + 1)), &design_table(design))?;
            }
        }
        Command::Fit { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let model = cfg.fit(&config_dir(&config))?;
            for w in model.warnings() {
                eprintln!("warning: {w}");
            }
            save_model(&out, &model, &provenance(&cfg, &model))?;
        }
        Command::Predict { model, points, out, mode } => {
            let (model, prov) = load_model(&model)?;
            let mode = match mode {
                Some(m) => m.into(),
                None => prov.prediction.parse()?,
            };
            let x = read_points(&points, model.dim())?;
            let preds = model.predict_batch(&x, mode)?;
            let mut table = design_table(&x);
            table.header.extend(["mean".to_string(), "variance".to_string()]);
            for (row, p) in table.rows.iter_mut().zip(&preds) {
                row.extend([p.mean(), p.variance()]);
            }
            write_table(&out, &table)?;
        }
        Command::Cv { model, folds, remove_depth: depth, mode, seed, out } => {
            let (model, _) = load_model(&model)?;
            let n = model.top().data.n();
            let t_min = remove_depth(&depth, model.n_levels())?;
            let req = match folds.as_str() {
                "loo" => CVRequest::loo(n, t_min, mode.into()),
                k => {
                    let k = k.parse().map_err(|_| Error::Config(format!("folds `{k}` must be loo or a count")))?;
                    CVRequest::k_fold(n, k, seed, t_min, mode.into())?
                }
            };
            let report = fast_cv(&model, &req)?;
            let mut table = Table { header: vec!["index".into()], rows: Vec::new() };
            table.header.extend((1..=model.dim()).map(|j| format!("x{j}")));
            table.header.extend(["error".to_string(), "variance".to_string()]);
            for (i, e, v) in report.by_index() {
                let mut row = vec![i as f64];
                row.extend(&model.top().data.design[i]);
                row.extend([e, v]);
                table.rows.push(row);
            }
            write_table(&out, &table)?;
            println!("rmse,{}", cokrige::io::format_number(loo_rmse(&report)?));
        }
        Command::Eval { pred, truth, truth_column, out } => {
            let p = read_table(&pred)?;
            let t = read_table(&truth)?;
            let missing = |f: &Path, c: &str| Error::Config(format!("{}: no `{c}` column", f.display()));
            let mean = p.column("mean").ok_or_else(|| missing(&pred, "mean"))?;
            let var = p.column("variance").ok_or_else(|| missing(&pred, "variance"))?;
            let name = truth_column.unwrap_or_else(|| t.header.last().cloned().unwrap_or_default());
            let truth_values = t.column(&name).ok_or_else(|| missing(&truth, &name))?;
            let set = EvalSet::new(truth_values, mean, var)?;
            let table = Table {
                header: ["rmse", "maxae", "q2", "rimse"].iter().map(|h| h.to_string()).collect(),
                rows: vec![vec![rmse(&set)?, maxae(&set)?, q2(&set)?, rimse(&set)?]],
            };
            match out {
                Some(path) => write_table(&path, &table)?,
                None => {
                    for (h, v) in table.header.iter().zip(&table.rows[0]) {
                        println!("{h},{}", cokrige::io::format_number(*v));
                    }
                }
            }
        }
        Command::Benchmark { n1, n2, repeats, seed, problem, restarts, threads, out } => {
            let defaults = BenchmarkConfig::default();
            let cfg = BenchmarkConfig {
                problem: problem.parse::<Problem>()?,
                n1,
                n2_values: n2,
                repeats,
                seed,
                restarts,
                threads: threads.unwrap_or(defaults.threads),
            };
            write_table(&out, &summary_table(&run_benchmark(&cfg)?))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {}", category.as_str(), e.to_string().replace('\n', " "));
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
