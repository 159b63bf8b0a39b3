use std::path::PathBuf;
use std::process::ExitCode;

use causal_bart::kfold::StandardError;
use causal_bart_cli::{ablate, report, run, CliError, EstimatorKind, ExperimentConfig, Source};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "kfcb", version, about = "Seeded simulation studies of BART treatment-effect estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic scenarios.
    Simulate(Common),
    /// IHDP realizations, or the setup-B surrogate when no path is given.
    Ihdp {
        #[arg(long)]
        path: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// K-fold causal BART and its four sub-models under shared seeds.
    Ablate {
        #[arg(long)]
        ihdp_path: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-aggregate an existing metrics.csv.
    Report {
        /// metrics.csv or the directory holding it.
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        buckets: usize,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// e.g. linear-homogeneous, nonlinear-heterogeneous, ihdp.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, e.g. ps-bart,bcf,kfold-causal-bart.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, env = "KFCB_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    inflation: Option<f64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    /// Heteroskedasticity-robust standard error for the ATE.
    #[arg(long)]
    hc1: bool,
    #[arg(long)]
    skip_stage2: bool,
    #[arg(long)]
    skip_partialling_out: bool,
    #[arg(long)]
    no_kfold_stage2: bool,
    #[arg(long)]
    no_kfold_stage1: bool,
}

impl Common {
    fn into_config(self, ihdp_path: Option<PathBuf>, force_ihdp: bool) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if force_ihdp {
            cfg.source = Source::Ihdp { path: ihdp_path.clone() };
            cfg.n = causal_bart::data::IHDP_UNITS;
        }
        if let Some(s) = &self.scenario {
            cfg.source = Source::parse(s, ihdp_path.as_deref())?;
        } else if let (Some(p), Source::Ihdp { path }) = (&ihdp_path, &mut cfg.source) {
            *path = Some(p.clone());
        }
        if matches!(cfg.source, Source::Synthetic { .. }) && force_ihdp {
            return Err(CliError::Usage("the ihdp command takes no synthetic scenario".into()));
        }
        macro_rules! set {
            ($($flag:ident => $field:expr),*) => { $(if let Some(v) = self.$flag { $field = v; })* };
        }
        set!(n => cfg.n, reps => cfg.replications, seed => cfg.base_seed, folds => cfg.folds,
             jobs => cfg.jobs, inflation => cfg.inflation, trees => cfg.bart.m,
             burn_in => cfg.bart.burn_in, draws => cfg.bart.n_draws);
        if let Some(list) = &self.estimators {
            cfg.estimators = list.iter().map(|s| s.parse::<EstimatorKind>()).collect::<Result<_, _>>()?;
        }
        if self.out.is_some() {
            cfg.out_dir = self.out;
        }
        if self.hc1 {
            cfg.standard_error = StandardError::Hc1;
        }
        let a = &mut cfg.ablation;
        a.skip_stage2 |= self.skip_stage2;
        a.skip_partialling_out |= self.skip_partialling_out;
        a.no_kfold_stage2 |= self.no_kfold_stage2;
        a.no_kfold_stage1 |= self.no_kfold_stage1;
        if cfg.out_dir.is_none() {
            cfg.out_dir = Some(PathBuf::from("results"));
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let outcome = match Cli::parse().command {
        Command::Simulate(c) => c.into_config(None, false).and_then(|cfg| run(&cfg)),
        Command::Ihdp { path, common } => common.into_config(path, true).and_then(|cfg| run(&cfg)),
        Command::Ablate { ihdp_path, common } => common.into_config(ihdp_path, false).and_then(|cfg| ablate(&cfg)),
        Command::Report { input, out, buckets } => {
            return match report(&input, out.as_deref(), buckets) {
                Ok((table, _)) => {
                    for row in &table.rows {
                        println!(
                            "{:<40} {:<28} ate_rmse {:.3}  cate_rmse {:.3}  cate_cover {:.3}",
                            row.estimator, row.scenario, row.ate_rmse, row.cate_rmse, row.cate_cover
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match outcome.and_then(|o| {
        for row in &o.aggregate.rows {
            println!(
                "{:<40} {:<28} ate_rmse {:.3}  cate_rmse {:.3}  cate_cover {:.3}  failures {}",
                row.estimator, row.scenario, row.ate_rmse, row.cate_rmse, row.cate_cover, row.failures
            );
        }
        o.check()
    }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Failures { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
