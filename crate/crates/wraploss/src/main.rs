//! `wraploss` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 numeric/assertion failure,
//! 3 I/O error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use wraploss::analysis::{
    check_theorem1, gradient_check_suite, linspace, wrap_error_surface, SurfaceGrid,
};
use wraploss::config::{CompareConfig, DataConfig, ExperimentConfig};
use wraploss::datagen::{
    gen_heteroscedastic_regression, gen_imbalanced_classification, save_csv_dataset,
};
use wraploss::runner::{compare, fmt_float, run_experiment, write_atomic};
use wraploss::{Error, Result};

#[derive(Parser)]
#[command(name = "wraploss", version, about = "Wrapped-loss experiment runner")]
struct Cli {
    /// Output root; defaults to $WRAPLOSS_OUT, then the current directory
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Override the seed from the config (run, compare, datagen) or the
    /// sampling seed (theorem1, gradcheck)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel comparison runs
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config
    Run { config: PathBuf },
    /// Run a comparison grid from a JSON config
    Compare { config: PathBuf },
    /// Emit the WrapErr(o, P) = oP^2 + log(1/o) surface as CSV
    Surface {
        #[arg(long, default_value_t = 0.1)]
        o_min: f64,
        #[arg(long, default_value_t = 3.0)]
        o_max: f64,
        #[arg(long, default_value_t = 59)]
        o_steps: usize,
        #[arg(long, default_value_t = 0.0)]
        p_min: f64,
        #[arg(long, default_value_t = 20.0)]
        p_max: f64,
        #[arg(long, default_value_t = 21)]
        p_steps: usize,
    },
    /// Check every analytic gradient against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Fail (exit 2) if any max relative error exceeds this
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Monte-Carlo check of the wrapped-vs-original approximation bound
    Theorem1 {
        #[arg(long)]
        c: usize,
        /// Residual bound L (must exceed 1)
        #[arg(long)]
        l: f64,
        /// Weight perturbation radius; defaults to the boundary (c(L+1))^-2
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 1.05)]
        slack: f64,
    },
    /// Generate a synthetic dataset (train.csv / test.csv) from a data config
    Datagen { config: PathBuf },
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn out_root(flag: &Option<PathBuf>, from_config: Option<&PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| from_config.cloned())
        .or_else(|| std::env::var_os("WRAPLOSS_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn surface_csv(grid: &SurfaceGrid) -> String {
    let mut text = String::from("o");
    for p in &grid.axis2 {
        text.push(',');
        text.push_str(&fmt_float(*p));
    }
    text.push('\n');
    for (i, o) in grid.axis1.iter().enumerate() {
        text.push_str(&fmt_float(*o));
        for v in &grid.values[i] {
            text.push(',');
            text.push_str(&fmt_float(*v));
        }
        text.push('\n');
    }
    text
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::from_json(&read_to_string(&config)?)?;
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            let root = out_root(&cli.out_dir, cfg.out_dir.as_ref());
            let artifacts = run_experiment(&cfg, &root)?;
            println!(
                "run {}: best {} = {} at epoch {} ({} epochs); artifacts in {}",
                artifacts.summary.label,
                if artifacts.summary.higher_is_better { "metric" } else { "loss/metric" },
                fmt_float(artifacts.summary.best_metric),
                artifacts.summary.epoch_of_best,
                artifacts.summary.epochs_run,
                artifacts.dir.display(),
            );
            Ok(())
        }
        Command::Compare { config } => {
            let mut cfg = CompareConfig::from_json(&read_to_string(&config)?)?;
            if let Some(seed) = cli.seed {
                for run in &mut cfg.runs {
                    run.train.seed = seed;
                }
            }
            let root = out_root(&cli.out_dir, cfg.out_dir.as_ref());
            let report = compare(&cfg, &root, cli.jobs)?;
            for row in &report.rows {
                match &row.error {
                    None => println!(
                        "{}: best {} at epoch {}",
                        row.label,
                        row.best_metric.map(fmt_float).unwrap_or_default(),
                        row.epoch_of_best.unwrap_or(0),
                    ),
                    Some(e) => println!("{}: FAILED ({e})", row.label),
                }
            }
            if report.complete {
                Ok(())
            } else {
                Err(Error::Numeric(
                    "one or more comparison runs failed; see the partial report".into(),
                ))
            }
        }
        Command::Surface {
            o_min,
            o_max,
            o_steps,
            p_min,
            p_max,
            p_steps,
        } => {
            let grid = wrap_error_surface(
                &linspace(o_min, o_max, o_steps)?,
                &linspace(p_min, p_max, p_steps)?,
            )?;
            let root = out_root(&cli.out_dir, None);
            std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
            let path = root.join("surface.csv");
            write_atomic(&path, surface_csv(&grid).as_bytes())?;
            println!("surface grid ({} x {}) written to {}", o_steps, p_steps, path.display());
            Ok(())
        }
        Command::Gradcheck { instances, tolerance } => {
            let report = gradient_check_suite(instances, cli.seed.unwrap_or(0))?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            match report.iter().find(|e| e.max_rel_err > tolerance) {
                Some(worst) => Err(Error::Numeric(format!(
                    "{} relative error {} exceeds {}",
                    worst.name, worst.max_rel_err, tolerance
                ))),
                None => Ok(()),
            }
        }
        Command::Theorem1 {
            c,
            l,
            delta,
            trials,
            slack,
        } => {
            let delta = delta.unwrap_or_else(|| 1.0 / (c as f64 * (l + 1.0)).powi(2));
            let report = check_theorem1(c, l, delta, trials, cli.seed.unwrap_or(0), slack)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if report.pass {
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "max |l_wrap - l_orig| = {} exceeds {} * {}",
                    report.max_diff, report.slack, report.bound
                )))
            }
        }
        Command::Datagen { config } => {
            let text = read_to_string(&config)?;
            let mut data: DataConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(vec![format!("config parse: {e}")]))?;
            if let Some(seed) = cli.seed {
                match &mut data {
                    DataConfig::SyntheticRegression(spec) => spec.seed = seed,
                    DataConfig::SyntheticClassification(spec) => spec.seed = seed,
                    DataConfig::Csv { .. } => {}
                }
            }
            let (train, test) = match &data {
                DataConfig::SyntheticRegression(spec) => gen_heteroscedastic_regression(spec)?,
                DataConfig::SyntheticClassification(spec) => gen_imbalanced_classification(spec)?,
                DataConfig::Csv { .. } => {
                    return Err(Error::Validation(vec![
                        "datagen needs a synthetic data spec, not a csv source".into(),
                    ]))
                }
            };
            let root = out_root(&cli.out_dir, None);
            std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
            let train_path = root.join("train.csv");
            let test_path = root.join("test.csv");
            save_csv_dataset(&train, &train_path)?;
            save_csv_dataset(&test, &test_path)?;
            println!(
                "wrote {} ({} rows) and {} ({} rows)",
                train_path.display(),
                train.len(),
                test_path.display(),
                test.len(),
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = execute(cli) {
        if let Error::Validation(problems) = &e {
            eprintln!("error: invalid configuration:");
            for p in problems {
                eprintln!("  - {p}");
            }
        } else {
            eprintln!("error: {e}");
        }
        std::process::exit(e.exit_code());
    }
}
