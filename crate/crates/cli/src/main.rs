use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::Value;
use trconsent_core::scenario::{parse_trace, run_file};
use trconsent_core::template::parse_templates;
use trconsent_core::time::TimeOfDay;
use trconsent_core::{
    evaluate_access, parse_authorization_policy, parse_tr_policy, AccessRequest, ContextSnapshot, Outcome,
};
use trconsent_server::{serve, Service, ServiceConfig};

/// Exit status: 0 success, 1 a check failed or access was refused, 2 bad input.
const FAILED: u8 = 1;
const BAD_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "trconsent",
    version,
    about = "Consent management with teleo-reactive policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP service.
    Serve {
        /// Service configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Replay scenario traces and report their assertions.
    RunScenario {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Print the reports as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Validate a `.tr` policy, template library, authorization policy or
    /// scenario trace.
    Check {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Decide one access request against an authorization policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        requester: String,
        #[arg(long)]
        role: String,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        resource: String,
        #[arg(long, default_value = "READ")]
        right: String,
        #[arg(long)]
        purpose: String,
        /// Access time, HH:MM.
        #[arg(long)]
        time: String,
        /// Access date, YYYY-MM-DD; defaults to today.
        #[arg(long)]
        date: Option<chrono::NaiveDate>,
        #[arg(long)]
        requester_location: String,
        #[arg(long)]
        subject_location: String,
        #[arg(long)]
        emergency: bool,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Cmd::Serve { config, listen } => run_serve(&config, listen),
        Cmd::RunScenario { files, json } => run_scenarios(&files, json),
        Cmd::Check { files } => check_files(&files),
        Cmd::Eval {
            policy,
            requester,
            role,
            subject,
            resource,
            right,
            purpose,
            time,
            date,
            requester_location,
            subject_location,
            emergency,
        } => {
            let input = || -> Result<_, String> {
                let text = read(&policy)?;
                let policy = parse_authorization_policy(&text).map_err(|e| format!("{}: {e}", policy.display()))?;
                let request = AccessRequest {
                    requester_id: requester,
                    requester_role: role,
                    subject_id: subject,
                    resource,
                    right: right.parse().map_err(|_| format!("unknown access right `{right}`"))?,
                    purpose,
                };
                let ctx = ContextSnapshot {
                    access_time: time.parse::<TimeOfDay>().map_err(|e| e.to_string())?,
                    access_date: date.unwrap_or_else(|| chrono::Local::now().date_naive()),
                    requester_location,
                    subject_location,
                    emergency,
                };
                Ok((policy, request, ctx))
            };
            match input() {
                Ok((policy, request, ctx)) => match evaluate_access(&policy, &request, &ctx) {
                    Ok(d) => {
                        println!("{}", d.explain());
                        if d.outcome == Outcome::Permit {
                            ExitCode::SUCCESS
                        } else {
                            ExitCode::from(FAILED)
                        }
                    }
                    Err(e) => bad_input(e),
                },
                Err(e) => bad_input(e),
            }
        }
    }
}

fn bad_input(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(BAD_INPUT)
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_serve(config: &Path, listen: Option<String>) -> ExitCode {
    tracing_subscriber::fmt().with_target(false).init();
    let cfg = match ServiceConfig::load(config) {
        Ok(c) => c,
        Err(e) => return bad_input(e),
    };
    let addr = listen.or(cfg.listen.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());
    let svc = match Service::from_config(&cfg) {
        Ok(s) => Arc::new(s),
        Err(e) => return bad_input(e),
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return bad_input(e),
    };
    match rt.block_on(serve(svc, &addr)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => bad_input(format!("{addr}: {e}")),
    }
}

fn run_scenarios(files: &[PathBuf], json: bool) -> ExitCode {
    let mut status = ExitCode::SUCCESS;
    let mut reports = Vec::new();
    for f in files {
        match run_file(f) {
            Ok((report, _)) => {
                if !report.passed() && status == ExitCode::SUCCESS {
                    status = ExitCode::from(FAILED);
                }
                if !json {
                    for c in &report.checks {
                        let mark = if c.passed { "ok  " } else { "FAIL" };
                        let note = c.note.as_deref().unwrap_or("");
                        println!("{mark} step {:>3} {note}", c.step);
                        for why in &c.failures {
                            println!("       {why}");
                        }
                    }
                    println!("{}", report.summary());
                }
                reports.push(report);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", f.display());
                status = ExitCode::from(BAD_INPUT);
            }
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    }
    status
}

/// Describes a document after validating it.
fn check(path: &Path) -> Result<String, String> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "tr") {
        let p = parse_tr_policy(&text).map_err(|e| e.to_string())?;
        return Ok(format!(
            "TR policy {}({}) with {} rules",
            p.name,
            p.params.join(", "),
            p.rules.len()
        ));
    }
    let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let is_template = |v: &Value| v.get("goalTag").is_some();
    if v.is_array() || is_template(&v) {
        let ts = parse_templates(&text).map_err(|e| e.to_string())?;
        let ids: Vec<&str> = ts.iter().map(|t| t.id.as_str()).collect();
        Ok(format!("{} templates: {}", ts.len(), ids.join(", ")))
    } else if v.get("steps").is_some() {
        let t = parse_trace(&text).map_err(|e| e.to_string())?;
        Ok(format!("scenario \"{}\" with {} steps", t.name, t.steps.len()))
    } else {
        let p = parse_authorization_policy(&text).map_err(|e| e.to_string())?;
        Ok(format!("authorization policy {} ({})", p.id, p.state))
    }
}

fn check_files(files: &[PathBuf]) -> ExitCode {
    let mut status = ExitCode::SUCCESS;
    for f in files {
        match check(f) {
            Ok(what) => println!("{}: {what}", f.display()),
            Err(e) => {
                eprintln!("{}: {e}", f.display());
                status = ExitCode::from(BAD_INPUT);
            }
        }
    }
    status
}
