//! `inscorr`: run experiments, campaigns and λ sweeps, write datasets, and
//! check the acceptance criteria.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inscorr::experiment::{
    self, emit_ablation, load_config, parse_override, run_campaign, write_ablation_csv,
    write_campaign_csv, CampaignGrid, DEFAULT_LAMBDAS,
};
use inscorr::noise::NoiseKind;
use inscorr::pipeline::{ExperimentConfig, LambdaRole, Method};
use inscorr::verify;

#[derive(Parser)]
#[command(name = "inscorr", version, about = "Open-set noisy-label experiments")]
struct Cli {
    /// Root directory for outputs.
    #[arg(long, global = true, env = "INSCORR_OUT", default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(ConfigArgs),
    /// Run a grid of noise kinds x rates x seeds x methods.
    Campaign {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "type-i")]
        kinds: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0.4")]
        rates: Vec<f64>,
        /// Trial indices; trial k offsets every seed by k.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        trials: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "selection-only,mix,inscorr")]
        methods: Vec<String>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
    /// Sweep λ and write (lambda, mean_acc, std_acc) rows.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to 0.05, 0.10, ..., 0.30.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        trials: Vec<u64>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
    /// Write the noisy train/validation splits and the clean test set.
    MakeData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write CSV mirrors.
        #[arg(long)]
        csv: bool,
    },
    /// Run acceptance criteria (all when none are named).
    Verify {
        ids: Vec<String>,
    },
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set attack.budget=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_role: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t_c: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    noise_kind: Option<String>,
    #[arg(long)]
    noise_rate: Option<f64>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl ConfigArgs {
    /// `--set` pairs first, then the named flags, so named flags win.
    fn overrides(&self) -> inscorr::Result<Vec<(String, String)>> {
        let mut out = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<inscorr::Result<Vec<_>>>()?;
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let quoted = |s: &Option<String>| s.as_ref().map(|v| format!("\"{v}\""));
        push("method", quoted(&self.method));
        push("lambda", self.lambda.map(|v| v.to_string()));
        push("lambda_role", quoted(&self.lambda_role));
        push("schedule.tau", self.tau.map(|v| v.to_string()));
        push("t_c", self.t_c.map(|v| v.to_string()));
        push("t_max", self.t_max.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("noise.kind", quoted(&self.noise_kind));
        push("noise.rate", self.noise_rate.map(|v| v.to_string()));
        Ok(out)
    }

    fn load(&self) -> inscorr::Result<ExperimentConfig> {
        load_config(self.config.as_deref(), &self.overrides()?)
    }
}

fn parse_list<T>(values: &[String], what: &str) -> Result<Vec<T>, String>
where
    T: serde::de::DeserializeOwned,
{
    values
        .iter()
        .map(|v| {
            serde_json::from_value(serde_json::Value::String(v.trim().to_string()))
                .map_err(|_| format!("unknown {what} `{v}`"))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    let out = cli.out;
    match cli.command {
        Command::Run(args) => run(&args, &out),
        Command::Campaign {
            config,
            kinds,
            rates,
            trials,
            methods,
            workers,
        } => {
            let grid = CampaignGrid {
                base: config.load().map_err(|e| e.to_string())?,
                kinds: parse_list::<NoiseKind>(&kinds, "noise kind")?,
                rates,
                seeds: trials,
                methods: parse_list::<Method>(&methods, "method")?,
                workers,
            };
            campaign(&grid, &out)
        }
        Command::Ablate {
            config,
            lambdas,
            trials,
            workers,
        } => {
            let base = config.load().map_err(|e| e.to_string())?;
            let lambdas = if lambdas.is_empty() { DEFAULT_LAMBDAS.to_vec() } else { lambdas };
            ablate(&base, &lambdas, &trials, workers, &out)
        }
        Command::MakeData { config, csv } => {
            let cfg = config.load().map_err(|e| e.to_string())?;
            let dir = out.join(format!("data-{}", &experiment::config_hash(&cfg)[..16]));
            for p in experiment::make_data(&cfg, &dir, csv).map_err(|e| e.to_string())? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { ids } => verify_cmd(&ids, &out),
    }
}

fn run(args: &ConfigArgs, out: &Path) -> Result<ExitCode, String> {
    let cfg = args.load().map_err(|e| e.to_string())?;
    let m = experiment::run_experiment(&cfg, out).map_err(|e| e.to_string())?;
    println!("run directory: {}", m.dir.display());
    println!("config hash:   {}", m.config_hash);
    match (m.summary.last_ten_mean, m.summary.last_ten_std) {
        (Some(mean), Some(std)) => println!("last-ten test accuracy: {mean:.4} ± {std:.4}"),
        _ => println!(
            "final test accuracy: {:.4} (fewer than 10 epochs)",
            m.summary.final_test_accuracy.unwrap_or(f64::NAN)
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn campaign(grid: &CampaignGrid, out: &Path) -> Result<ExitCode, String> {
    let rows = run_campaign(grid, out).map_err(|e| e.to_string())?;
    let path = out.join(format!("campaign-{}.csv", grid.tag()));
    write_campaign_csv(&rows, &path).map_err(|e| e.to_string())?;
    println!("{:<12} {:>5}  {:<16} {:>8} {:>8}", "noise", "rate", "method", "mean", "std");
    let mut failures = 0;
    for r in &rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<12} {:>5}  {:<16} {:>8} {:>8}",
            r.noise.to_string(),
            r.rate,
            r.method.to_string(),
            f(r.mean),
            f(r.std)
        );
        for e in &r.failures {
            eprintln!("  failed run: {e}");
        }
        failures += r.failures.len();
    }
    println!("summary: {}", path.display());
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn ablate(
    base: &ExperimentConfig,
    lambdas: &[f64],
    trials: &[u64],
    workers: usize,
    out: &Path,
) -> Result<ExitCode, String> {
    let rows = emit_ablation(lambdas, base, trials, workers, out).map_err(|e| e.to_string())?;
    let role = match base.lambda_role {
        LambdaRole::CleanWeight => "clean-weight",
        LambdaRole::DiscardedWeight => "discarded-weight",
    };
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let path = out.join(format!(
        "ablation-{}-{role}.csv",
        &experiment::config_hash(base)[..16]
    ));
    write_ablation_csv(&rows, &path).map_err(|e| e.to_string())?;
    println!("lambda role: {role}");
    for r in &rows {
        println!("{:.2}  {:.4} ± {:.4}", r.lambda, r.mean_acc, r.std_acc);
    }
    println!("curve: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(ids: &[String], out: &Path) -> Result<ExitCode, String> {
    let scratch = out.join("verify");
    std::fs::create_dir_all(&scratch).map_err(|e| e.to_string())?;
    let selected: Vec<&str> = if ids.is_empty() {
        verify::IDS.to_vec()
    } else {
        ids.iter().map(String::as_str).collect()
    };
    let mut failed = 0;
    for id in selected {
        let report = verify::run(id, &scratch);
        println!("{report}");
        failed += usize::from(!report.passed);
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
