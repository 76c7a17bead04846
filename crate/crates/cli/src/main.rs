use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evidseg::backbone::Head;
use evidseg::harness::{self, ExperimentConfig, SelfCheckHooks};
use evidseg::volio::{self, Cell, CsvRow};
use evidseg::{Error, Result};

/// Evidential brain-tumour segmentation experiments on synthetic phantoms.
#[derive(Parser)]
#[command(name = "evidseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the phantom dataset and its manifest.
    Generate(Common),
    /// Train one head (or every configured head) and write checkpoints.
    Train(Common),
    /// Evaluate checkpoints on the test split at one noise variance.
    Eval(Common),
    /// Evaluate every head at every configured noise variance.
    Sweep(Common),
    /// Run the fast self-verification suite.
    Selfcheck(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to one head.
    #[arg(long)]
    head: Option<Head>,
    /// Noise variance for `eval`.
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    /// Output directory, overriding `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--config <path> is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }

    fn heads(&self, cfg: &ExperimentConfig) -> Vec<Head> {
        self.head.map_or_else(|| cfg.heads.clone(), |h| vec![h])
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.load()?;
            let entries = harness::cmd_generate(&cfg)?;
            println!(
                "wrote {} samples ({} train / {} val / {} test) to {}",
                entries.len(),
                cfg.n_train,
                cfg.n_val,
                cfg.n_test,
                harness::Layout::new(&cfg.out_dir).data_dir().display()
            );
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            for head in args.heads(&cfg) {
                let epochs = cfg.train.epochs;
                let out = harness::cmd_train(&cfg, head, |log| {
                    let val = log.val_dice.map_or_else(|| "-".to_string(), |d| format!("{d:.4}"));
                    eprintln!(
                        "[{head}] epoch {:>3}/{epochs} loss {:.5} (ce {:.5} kl {:.5} dice {:.5}) val dice {val}",
                        log.epoch, log.loss.total, log.loss.ice, log.loss.kl, log.loss.dice
                    );
                })?;
                println!("[{head}] checkpoint written to {}", out.path.display());
            }
        }
        Command::Eval(args) => {
            let cfg = args.load()?;
            for head in args.heads(&cfg) {
                let out = harness::cmd_eval(&cfg, head, args.sigma2)?;
                let r = &out.aggregate;
                println!(
                    "[{head}] sigma2 {} on {} samples: dice {:.4} ne {:.4} ece {:.4} ueo {:.4} mean u {:.4} ({})",
                    args.sigma2,
                    out.samples.len(),
                    r.dice_whole_tumor,
                    r.ne,
                    r.ece,
                    r.ueo_best,
                    r.mean_uncertainty,
                    r.uncertainty_source.name()
                );
            }
        }
        Command::Sweep(args) => {
            let mut cfg = args.load()?;
            if let Some(h) = args.head {
                cfg.heads = vec![h];
            }
            let result = harness::cmd_sweep(&cfg)?;
            println!("{:<11} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}", "head", "sigma2", "dice", "ne", "ece", "ueo", "mean_u");
            for c in &result.cells {
                let r = &c.aggregate;
                println!(
                    "{:<11} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                    c.head.name(),
                    c.sigma2,
                    r.dice_whole_tumor,
                    r.ne,
                    r.ece,
                    r.ueo_best,
                    r.mean_uncertainty
                );
            }
            println!(
                "wrote {} rows to {}",
                result.rows().len(),
                harness::Layout::new(&cfg.out_dir).sweep_csv().display()
            );
        }
        Command::Selfcheck(args) => {
            let report = harness::run_selfcheck(&SelfCheckHooks::default(), |c| println!("{c}"));
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let rows: Vec<CsvRow> = report
                    .checks
                    .iter()
                    .map(|c| {
                        [
                            ("check".to_string(), Cell::from(c.name)),
                            ("passed".to_string(), Cell::from(if c.passed { "true" } else { "false" })),
                            ("detail".to_string(), Cell::from(c.detail.as_str())),
                            ("seconds".to_string(), Cell::Num(c.seconds)),
                        ]
                        .into()
                    })
                    .collect();
                volio::write_csv(&dir.join("selfcheck.csv"), &rows)?;
            }
            if !report.all_passed() {
                return Err(Error::CheckFailed(format!("failing checks: {}", report.failed().join(", "))));
            }
            println!("selfcheck: all {} checks passed", report.checks.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { harness::EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
