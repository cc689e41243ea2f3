use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use oaas_core::enforcement::PolicyKind;
use oaas_core::harness::{
    compare_policies, preset, read_csv, refinement_comparison, run_experiment, write_csv, ExperimentResult, HarnessError, Scenario,
    Summary, PRESETS,
};
use oaas_core::runtime::{DeployOptions, InvocationRequest, Platform, PlatformConfig, RuntimeError};

#[derive(Parser)]
#[command(name = "oaas", version, about = "Deploy classes and run experiments on a simulated OaaS cluster")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Record a platform trace (trace.log).
    #[arg(long, global = true)]
    trace: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deploy a class package and print what was provisioned.
    Deploy {
        manifest: PathBuf,
        #[arg(long, default_value = "oprc")]
        policy: PolicyKind,
    },
    /// Create one object and invoke a method on it.
    Invoke {
        manifest: PathBuf,
        #[arg(long)]
        class: String,
        /// Method name; repeat for a chain.
        #[arg(long = "function", required = true)]
        functions: Vec<String>,
        /// Initial attributes as JSON.
        #[arg(long, default_value = "{}")]
        attributes: String,
        /// Arguments for the first call, as JSON.
        #[arg(long)]
        args: Option<String>,
        #[arg(long, default_value = "oprc")]
        policy: PolicyKind,
    },
    /// Run one scenario or preset.
    Run {
        #[command(flatten)]
        source: Source,
        /// Override the scenario's policy.
        #[arg(long)]
        policy: Option<PolicyKind>,
    },
    /// Run a scenario or preset under several policies.
    Compare {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_value = "oprc,knative,knative-con,knative-rts")]
        policies: Vec<PolicyKind>,
    },
    /// Summarize result directories written by `run` or `compare`.
    Report { dirs: Vec<PathBuf> },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    #[arg(long)]
    preset: Option<String>,
    /// Scenario YAML file.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Runtime(r) => r.into(),
            HarnessError::Audit(m) => Failure::Runtime(format!("audit failed: {m}")),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Sim(_) | RuntimeError::Store(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn json(text: &str, what: &str) -> Result<Value, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Usage(format!("{what}: {e}")))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn scenarios(source: &Source, seed: u64) -> Result<Vec<Scenario>, Failure> {
    match (&source.preset, &source.scenario) {
        (Some(name), _) => Ok(preset(name, seed)?),
        (_, Some(path)) => {
            let mut s = Scenario::from_yaml(&read(path)?)?;
            s.seed = seed;
            Ok(vec![s])
        }
        _ => Err(Failure::Usage("one of --preset or --scenario is required".into())),
    }
}

fn write_result(dir: &Path, r: &ExperimentResult) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv = dir.join("series.csv");
    let f = fs::File::create(&csv).map_err(|e| io_err(&csv, e))?;
    write_csv(&r.series, f).map_err(|e| io_err(&csv, e))?;
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(r).expect("serializable")).map_err(|e| io_err(&summary, e))?;
    if !r.trace.is_empty() {
        let log = dir.join("trace.log");
        fs::write(&log, r.trace.join("\n") + "\n").map_err(|e| io_err(&log, e))?;
    }
    Ok(())
}

fn line(r: &ExperimentResult) -> String {
    let s = &r.summary;
    format!(
        "{:<28} {:<12} offered {:>9.1} rps  achieved {:>9.1} rps  errors {:>7.4}%  mean {:>8.2} ms  p99 {:>8.2} ms  overhead {:>5.1}%",
        r.scenario,
        r.policy.as_str(),
        s.offered_rps,
        s.achieved_rps,
        s.error_ratio * 100.0,
        s.mean_latency_ms,
        s.p99_ms,
        s.overhead_share * 100.0
    )
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Deploy { manifest, policy } => {
            let mut p = Platform::new(PlatformConfig { seed: cli.seed, ..Default::default() })?;
            print_json(&p.deploy_manifest(&read(&manifest)?, DeployOptions::policy(policy))?);
        }
        Command::Invoke { manifest, class, functions, attributes, args, policy } => {
            let mut p = Platform::new(PlatformConfig { seed: cli.seed, trace: cli.trace, ..Default::default() })?;
            p.deploy_manifest(&read(&manifest)?, DeployOptions::policy(policy))?;
            let id = p.create_object(&class, json(&attributes, "--attributes")?, BTreeMap::new())?;
            let mut outcomes = Vec::new();
            for (i, f) in functions.iter().enumerate() {
                let mut req = InvocationRequest::new(&class, id, f);
                if i == 0 {
                    if let Some(a) = &args {
                        req.args = json(a, "--args")?;
                    }
                }
                outcomes.push(p.invoke(&req)?);
            }
            print_json(&serde_json::json!({ "object": p.object(&class, id)?, "outcomes": outcomes }));
            if cli.trace {
                for l in p.take_trace() {
                    eprintln!("{l}");
                }
            }
        }
        Command::Run { source, policy } => {
            if source.preset.as_deref() == Some("refinement-manual-vs-auto") {
                let base = preset("refinement-manual-vs-auto", cli.seed)?.remove(0);
                let report = refinement_comparison(&base, 10_000.0, 0.95, 12)?;
                for (i, r) in report.manual_rounds.iter().enumerate() {
                    println!("manual round {:>2}: pods {:>3} x{:<2} achieved {:>9.1} rps", i + 1, r.pods, r.concurrency, r.achieved_rps);
                }
                println!("{}", line(&report.auto));
                let dir = cli.out.join(&base.name);
                write_result(&dir.join("oprc"), &report.auto)?;
                let path = dir.join("refinement.json");
                fs::write(&path, serde_json::to_string_pretty(&report).expect("serializable")).map_err(|e| io_err(&path, e))?;
                return Ok(());
            }
            for mut s in scenarios(&source, cli.seed)? {
                if let Some(p) = policy {
                    s = s.with_policy(p);
                }
                let r = run_experiment(&s, cli.trace)?;
                println!("{}", line(&r));
                write_result(&cli.out.join(&s.name).join(r.policy.as_str()), &r)?;
            }
        }
        Command::Compare { source, policies } => {
            for s in scenarios(&source, cli.seed)? {
                for r in compare_policies(&s, &policies, cli.trace)? {
                    println!("{}", line(&r));
                    write_result(&cli.out.join(&s.name).join(r.policy.as_str()), &r)?;
                }
            }
        }
        Command::Report { dirs } => {
            if dirs.is_empty() {
                return Err(Failure::Usage("report needs at least one result directory".into()));
            }
            for d in dirs {
                let summary_path = d.join("summary.json");
                let v = json(&read(&summary_path)?, &summary_path.display().to_string())?;
                let s: Summary = serde_json::from_value(v["summary"].clone()).map_err(|e| Failure::Usage(format!("{}: {e}", summary_path.display())))?;
                let csv_path = d.join("series.csv");
                let rows = read_csv(fs::File::open(&csv_path).map_err(|e| Failure::Usage(format!("{}: {e}", csv_path.display())))?)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", csv_path.display())))?;
                let worst = rows.iter().map(|r| r.error_ratio).fold(0.0, f64::max);
                println!(
                    "{}: {} s, offered {}, completed {}, errors {:.4}%, worst second {:.2}%, mean {:.2} ms, p99 {:.2} ms",
                    d.display(),
                    s.duration_s,
                    s.offered,
                    s.completed,
                    s.error_ratio * 100.0,
                    worst * 100.0,
                    s.mean_latency_ms,
                    s.p99_ms
                );
            }
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
