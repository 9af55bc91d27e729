//! `adcov`: run coverage scenarios, compare variants and run the acceptance
//! checks.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 failed
//! verification.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adcov::harness::record::{to_csv, to_jsonl};
use adcov::harness::scenario::{config_to_toml, load_config_file};
use adcov::harness::{apply_overrides, preset, run, RunRecord, Scenario, ScenarioConfig, PRESETS};
use adcov::verify::{render_report, Fault, Suite, CHECK_IDS};
use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "adcov", version, about = "Distributed adaptive coverage control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and export its time series.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run several variants of one scenario on the same seed.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `l2`, `locopt`, `none`, `undirected`, `directed` or `key=value`,
        /// joined by `+` such as `directed+gains.zeta=2`.
        #[arg(long = "variant", required = true, num_args = 1.., value_delimiter = ',')]
        variants: Vec<String>,
        /// Repeat the comparison for each seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance checks and print a pass/fail table.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Subset of checks, e.g. `c01,c05`.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// List built-in presets.
    PresetList,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// TOML scenario document.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key override, repeatable: `--set gains.zeta=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    Gradient,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Run { scenario, out, format } => cmd_run(&scenario, &out, format),
        Command::Compare {
            scenario,
            variants,
            seeds,
            out,
        } => cmd_compare(&scenario, &variants, &seeds, &out),
        Command::Verify { out, only, inject_fault } => cmd_verify(out.as_deref(), &only, inject_fault),
        Command::PresetList => {
            for (name, description) in PRESETS {
                println!("{name:<14} {description}");
            }
            Ok(0)
        }
    }
}

fn base_config(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut config = match (&args.preset, &args.scenario) {
        (Some(name), None) => preset(name).invalid()?,
        (None, Some(path)) => load_config_file(path).invalid()?,
        (None, None) => preset("table1").invalid()?,
        (Some(_), Some(_)) => return Err(anyhow!("--preset and --scenario are exclusive")).invalid(),
    };
    config = apply_overrides(&config, &args.overrides).invalid()?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .runtime()
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .runtime()
}

fn simulate(config: ScenarioConfig) -> Result<RunRecord, Failure> {
    let scenario = Scenario::from_config(config).invalid()?;
    log::info!("running {} for {} ticks", scenario.config.name, scenario.n_ticks);
    run(&scenario).runtime()
}

fn summary(record: &RunRecord) -> serde_json::Value {
    match record.last() {
        Some(last) => json!({
            "scenario": record.scenario,
            "t": last.t,
            "e_p": last.e_p,
            "e_v": last.e_v,
            "param_errors": last.param_errors,
            "mean_param_error": last.mean_param_error(),
            "disagreement": last.disagreement,
            "cost": last.cost,
            "lyapunov": last.lyapunov,
        }),
        None => json!({ "scenario": record.scenario }),
    }
}

fn cmd_run(args: &ScenarioArgs, out: &Path, format: Format) -> Result<u8, Failure> {
    let config = base_config(args)?;
    let resolved = config_to_toml(&config);
    let record = simulate(config)?;
    create_dir(out)?;
    write(&out.join("scenario.toml"), &resolved)?;
    let (name, text) = match format {
        Format::Csv => ("run.csv", to_csv(&record)),
        Format::Jsonl => ("run.jsonl", to_jsonl(&record)),
    };
    write(&out.join(name), &text)?;
    let summary = summary(&record);
    let pretty = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&out.join("summary.json"), &pretty)?;
    println!("{pretty}");
    Ok(0)
}

/// Resolves a variant spec such as `directed+gains.zeta=2` into overrides.
fn variant_overrides(spec: &str) -> Result<Vec<String>, Failure> {
    spec.split('+')
        .map(|part| {
            let fixed = match part {
                "l2" => "controller=diff_drive_l2",
                "locopt" => "controller=diff_drive_locopt",
                "none" => "consensus=none",
                "undirected" => "consensus=undirected",
                "directed" => "consensus=directed",
                other if other.contains('=') => other,
                other => return Err(anyhow!("unknown variant `{other}`")).invalid(),
            };
            Ok(fixed.to_string())
        })
        .collect()
}

fn comparison_csv(labels: &[String], records: &[RunRecord]) -> Result<String, Failure> {
    let base = &records[0];
    for (label, r) in labels.iter().zip(records) {
        let same = r.samples.len() == base.samples.len()
            && r.samples.iter().zip(&base.samples).all(|(a, b)| a.t == b.t);
        if !same {
            return Err(anyhow!("variant `{label}` has a different time base")).invalid();
        }
    }
    let mut out = String::from("t");
    for label in labels {
        for metric in ["e_p", "e_v", "param_error", "disagreement"] {
            write!(out, ",{label}.{metric}").unwrap();
        }
    }
    out.push('\n');
    for k in 0..base.samples.len() {
        write!(out, "{:.8e}", base.samples[k].t).unwrap();
        for r in records {
            let s = &r.samples[k];
            for v in [s.e_p, s.e_v, s.mean_param_error(), s.disagreement] {
                write!(out, ",{v:.8e}").unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn cmd_compare(args: &ScenarioArgs, variants: &[String], seeds: &[u64], out: &Path) -> Result<u8, Failure> {
    if variants.len() < 2 {
        return Err(anyhow!("compare needs at least two variants")).invalid();
    }
    let base = base_config(args)?;
    let mut configs = Vec::new();
    for v in variants {
        configs.push(apply_overrides(&base, &variant_overrides(v)?).invalid()?);
    }
    // validate everything before the first long run
    for c in &configs {
        Scenario::from_config(c.clone()).invalid()?;
    }
    let sweep: Vec<Option<u64>> = if seeds.is_empty() {
        vec![None]
    } else {
        seeds.iter().copied().map(Some).collect()
    };
    create_dir(out)?;
    let mut finals = String::from("seed,variant,e_p,e_v,mean_param_error,disagreement\n");
    let mut totals = vec![0.0; variants.len()];
    for seed in &sweep {
        let mut records = Vec::new();
        for c in &configs {
            let mut c = c.clone();
            if let Some(s) = seed {
                c.seed = *s;
            }
            records.push(simulate(c)?);
        }
        let dir = match seed {
            Some(s) => out.join(format!("seed_{s}")),
            None => out.to_path_buf(),
        };
        create_dir(&dir)?;
        write(&dir.join("compare.csv"), &comparison_csv(variants, &records)?)?;
        let seed_value = seed.unwrap_or(configs[0].seed);
        for (i, (label, r)) in variants.iter().zip(&records).enumerate() {
            if let Some(last) = r.last() {
                totals[i] += last.mean_param_error();
                writeln!(
                    finals,
                    "{seed_value},{label},{:.8e},{:.8e},{:.8e},{:.8e}",
                    last.e_p,
                    last.e_v,
                    last.mean_param_error(),
                    last.disagreement
                )
                .unwrap();
            }
        }
    }
    write(&out.join("final.csv"), &finals)?;
    print!("{finals}");
    for (label, total) in variants.iter().zip(totals) {
        println!("mean final parameter error {label}: {:.6e}", total / sweep.len() as f64);
    }
    Ok(0)
}

fn cmd_verify(out: Option<&Path>, only: &[String], fault: Option<FaultArg>) -> Result<u8, Failure> {
    for id in only {
        if !CHECK_IDS.contains(&id.as_str()) {
            bail_invalid(format!("unknown check `{id}`"))?;
        }
    }
    let suite = match fault {
        Some(FaultArg::Gradient) => Suite::with_fault(Fault::Gradient),
        None => Suite::new(),
    };
    let ids: Vec<&str> = if only.is_empty() {
        CHECK_IDS.to_vec()
    } else {
        only.iter().map(String::as_str).collect()
    };
    let mut results = Vec::new();
    for id in ids {
        let r = suite.run_check(id).expect("known check");
        println!("{}", r.line());
        results.push(r);
    }
    let report = render_report(&results);
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("verify.txt"), &report)?;
    }
    let passed = results.iter().all(|r| r.passed);
    println!("{}", report.lines().last().unwrap_or_default());
    Ok(if passed { 0 } else { 3 })
}

fn bail_invalid(message: String) -> Result<(), Failure> {
    let r: anyhow::Result<()> = (|| bail!(message))();
    r.invalid()
}
