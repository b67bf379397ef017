mod client;
mod service;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use airan_core::model::{Elasticity, ResourceVector, SiteId, Target, WorkloadClass, WorkloadDescriptor};
use airan_core::o2::{
    AdviceReply, AdviceRequest, AuthReply, AuthRequest, CapacityQuery, JobStatusRequest, Payload, RtAdmissionRequest,
    RtOutcome, RtResult, SubmitBatchRequest, SubmitReply,
};
use airan_core::sim::{self, RunOptions, Scenario, SimError};
use airan_core::smo::{Alternative, RejectionAdvice};
use clap::{Parser, Subcommand, ValueEnum};

use client::{call, CallError, Identity};
use service::wall_now;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_UNHEALTHY: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_NOT_ADMITTED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "airan",
    version,
    about = "AI-RAN orchestration: simulator, services and client"
)]
struct Cli {
    /// Orchestrator address for client commands.
    #[arg(long, global = true, env = "AIRAN_ENDPOINT", default_value = "127.0.0.1:7000")]
    endpoint: String,
    /// Identity file holding tenant, credential and the current token.
    #[arg(long, global = true, default_value = "airan-identity.json")]
    identity: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Structured,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the utilization CSV plus a summary.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        check_invariants: bool,
    },
    /// Obtain a token from the orchestrator and store it in the identity file.
    Auth {
        #[arg(long)]
        tenant: Option<String>,
        #[arg(long)]
        credential: Option<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        sites: Vec<String>,
        #[arg(long)]
        ceiling: ResourceVector,
        /// Token lifetime in seconds.
        #[arg(long, default_value_t = 3600.0)]
        duration: f64,
    },
    /// Submit a real-time workload directly to a site.
    SubmitRt {
        #[arg(long)]
        site: String,
        #[arg(long)]
        site_endpoint: String,
        #[command(flatten)]
        demand: DemandArgs,
    },
    /// Submit a batch workload to the orchestrator.
    SubmitBatch {
        #[command(flatten)]
        demand: DemandArgs,
        /// Deadline in seconds from now.
        #[arg(long)]
        deadline: Option<f64>,
    },
    /// Show a batch job's record.
    Status { job_id: String },
    /// Show AI headroom per granted site and node.
    Capacity,
    /// Run the orchestrator service.
    ServeSmo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an edge site service.
    ServeSite {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(clap::Args)]
struct DemandArgs {
    #[arg(long)]
    min: Option<ResourceVector>,
    #[arg(long)]
    preferred: Option<ResourceVector>,
    #[arg(long)]
    max: ResourceVector,
    /// Estimated run time in seconds.
    #[arg(long)]
    duration: f64,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    priority: Option<u8>,
}

impl DemandArgs {
    fn elasticity(&self) -> Elasticity {
        let preferred = self.preferred.unwrap_or(self.max);
        let min = self.min.unwrap_or(preferred);
        if min == self.max {
            Elasticity::NonElastic { demand: min }
        } else {
            Elasticity::Elastic {
                min,
                preferred,
                max: self.max,
            }
        }
    }

    fn descriptor(&self, identity: &Identity, class: WorkloadClass, target: Target) -> WorkloadDescriptor {
        let id = self.id.clone().unwrap_or_else(|| {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0);
            format!("{}-{nanos}", identity.tenant)
        });
        WorkloadDescriptor {
            id: id.into(),
            tenant: identity.tenant.clone(),
            class,
            elasticity: self.elasticity(),
            target,
            priority: self.priority.unwrap_or(1),
            deadline: None,
            est_duration: self.duration,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    ExitCode::from(dispatch(cli))
}

fn fail(code: u8, msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    code
}

fn transport(e: CallError) -> u8 {
    fail(EXIT_TRANSPORT, e)
}

fn dispatch(cli: Cli) -> u8 {
    match &cli.command {
        Command::Simulate {
            scenario,
            out,
            seed,
            check_invariants,
        } => simulate(scenario, out, *seed, *check_invariants),
        Command::Auth {
            tenant,
            credential,
            sites,
            ceiling,
            duration,
        } => auth(&cli, tenant.clone(), credential.clone(), sites, *ceiling, *duration),
        Command::SubmitRt {
            site,
            site_endpoint,
            demand,
        } => submit_rt(&cli, site, site_endpoint, demand),
        Command::SubmitBatch { demand, deadline } => submit_batch(&cli, demand, *deadline),
        Command::Status { job_id } => status(&cli, job_id),
        Command::Capacity => capacity(&cli),
        Command::ServeSmo { config } => serve(config, |text, stop| {
            let cfg = serde_json::from_str(text).map_err(|e| e.to_string())?;
            service::serve_smo(cfg, stop).map_err(|e| e.to_string())
        }),
        Command::ServeSite { config } => serve(config, |text, stop| {
            let cfg = serde_json::from_str(text).map_err(|e| e.to_string())?;
            service::serve_site(cfg, stop).map_err(|e| e.to_string())
        }),
    }
}

fn simulate(path: &Path, out: &Path, seed: Option<u64>, check_invariants: bool) -> u8 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    let mut scenario = match Scenario::from_json(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let log = match sim::run(&scenario, RunOptions { check_invariants }) {
        Ok(log) => log,
        Err(e @ SimError::Invariant { .. }) => return fail(EXIT_UNHEALTHY, e),
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let summary = sim::summarize(&log);
    let summary_path = out.with_extension("summary.json");
    let written = std::fs::write(out, log.to_csv()).and_then(|()| {
        std::fs::write(
            &summary_path,
            serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
        )
    });
    if let Err(e) = written {
        return fail(EXIT_USAGE, format!("cannot write output: {e}"));
    }
    println!("samples            {}", summary.samples);
    println!("ran violations     {}", summary.ran_violations);
    println!("over-capacity      {}", summary.over_capacity_samples);
    println!(
        "rt acceptance      {:.3} ({}/{})",
        summary.acceptance_ratio, summary.rt_admitted, summary.rt_requests
    );
    println!("preemptions        {}", summary.preemptions);
    println!(
        "batch running      {}/{}",
        summary.batch_reached_running, summary.batch_submitted
    );
    println!("alarms             {}", summary.alarms);
    println!("wrote {} and {}", out.display(), summary_path.display());
    if summary.healthy() {
        EXIT_OK
    } else {
        if summary.alarms > 0 {
            eprintln!(
                "infrastructure alarms: {} (RAN demand exceeded site capacity)",
                summary.alarms
            );
        }
        EXIT_UNHEALTHY
    }
}

fn load_identity(cli: &Cli) -> Result<Identity, u8> {
    Identity::load(&cli.identity).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", cli.identity.display())))
}

fn token_of(identity: &Identity) -> Result<airan_core::auth::AuthToken, u8> {
    identity
        .token
        .clone()
        .ok_or_else(|| fail(EXIT_USAGE, "no token in identity file; run `airan auth` first"))
}

fn auth(
    cli: &Cli,
    tenant: Option<String>,
    credential: Option<String>,
    sites: &[String],
    ceiling: ResourceVector,
    duration: f64,
) -> u8 {
    let stored = Identity::load(&cli.identity).ok();
    let tenant = tenant.or_else(|| stored.as_ref().map(|i| i.tenant.to_string()));
    let credential = credential.or_else(|| stored.as_ref().map(|i| i.credential.clone()));
    let (Some(tenant), Some(credential)) = (tenant, credential) else {
        return fail(EXIT_USAGE, "tenant and credential required (flags or identity file)");
    };
    let req = AuthRequest {
        tenant: tenant.as_str().into(),
        credential: credential.clone(),
        sites: sites.iter().map(|s| SiteId::from(s.as_str())).collect(),
        ceiling,
        duration,
    };
    match call(&cli.endpoint, &Payload::AuthRequest(req)) {
        Ok(Payload::AuthReply(AuthReply::Granted(token))) => {
            let sites: Vec<&str> = token.granted_sites.iter().map(|s| s.as_str()).collect();
            println!(
                "token {} for {} (ceiling {})",
                token.token_id,
                sites.join(","),
                token.ceiling
            );
            let identity = Identity {
                tenant: tenant.as_str().into(),
                credential,
                token: Some(token),
            };
            if let Err(e) = identity.save(&cli.identity) {
                return fail(EXIT_USAGE, format!("{}: {e}", cli.identity.display()));
            }
            EXIT_OK
        }
        Ok(Payload::AuthReply(AuthReply::Denied { reason })) => fail(EXIT_NOT_ADMITTED, format!("denied: {reason}")),
        Ok(other) => fail(EXIT_TRANSPORT, format!("unexpected reply {:?}", other.kind())),
        Err(e) => transport(e),
    }
}

fn print_advice(advice: &RejectionAdvice) {
    println!("reason: {}", advice.reason);
    if advice.alternatives.is_empty() {
        println!("no alternatives");
    }
    for a in &advice.alternatives {
        match a {
            Alternative::RaisePriority { tier } => println!("  RAISE_PRIORITY({tier})"),
            Alternative::ResubmitAsBatch => println!("  RESUBMIT_AS_BATCH"),
            Alternative::AlternateSite { sites } => {
                let s: Vec<&str> = sites.iter().map(|s| s.as_str()).collect();
                println!("  ALTERNATE_SITE({})", s.join(","));
            }
        }
    }
}

fn submit_rt(cli: &Cli, site: &str, site_endpoint: &str, demand: &DemandArgs) -> u8 {
    let identity = match load_identity(cli) {
        Ok(i) => i,
        Err(code) => return code,
    };
    let token = match token_of(&identity) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let descriptor = demand.descriptor(&identity, WorkloadClass::AiRealtime, Target::Site(site.into()));
    let req = RtAdmissionRequest {
        token,
        descriptor,
        submitted_at: wall_now(),
    };
    let result: RtResult = match call(site_endpoint, &Payload::RtAdmit(req)) {
        Ok(Payload::RtResult(r)) => r,
        Ok(Payload::ErrorReply(e)) => return fail(EXIT_TRANSPORT, e.message),
        Ok(other) => return fail(EXIT_TRANSPORT, format!("unexpected reply {:?}", other.kind())),
        Err(e) => return transport(e),
    };
    match &result.outcome {
        RtOutcome::Deployed {
            handle,
            node_id,
            grant,
            admission_latency,
        } => {
            if cli.format == Format::Structured {
                println!("{}", serde_json::to_string_pretty(&result.outcome).expect("serializes"));
            } else {
                println!(
                    "deployed {handle} on {node_id} grant {grant} (admission {:.3} ms)",
                    admission_latency * 1e3
                );
            }
            EXIT_OK
        }
        RtOutcome::NotAdmitted { reason } => {
            eprintln!("not admitted: {}", reason.as_str());
            let req = AdviceRequest {
                job_id: result.descriptor.id.clone(),
                report: Some(result.clone()),
            };
            match call(&cli.endpoint, &Payload::AdviceRequest(req)) {
                Ok(Payload::AdviceReply(AdviceReply::Advice(a))) => print_advice(&a),
                Ok(_) => println!("reason: {}", reason.as_str()),
                Err(e) => eprintln!("advice unavailable: {e}"),
            }
            EXIT_NOT_ADMITTED
        }
    }
}

fn submit_batch(cli: &Cli, demand: &DemandArgs, deadline: Option<f64>) -> u8 {
    let identity = match load_identity(cli) {
        Ok(i) => i,
        Err(code) => return code,
    };
    let token = match token_of(&identity) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let mut descriptor = demand.descriptor(&identity, WorkloadClass::AiBatch, Target::AnySite);
    descriptor.deadline = deadline.map(|d| wall_now() + d);
    match call(
        &cli.endpoint,
        &Payload::SubmitBatch(SubmitBatchRequest { token, descriptor }),
    ) {
        Ok(Payload::SubmitReply(SubmitReply::Accepted { job_id })) => {
            println!("{job_id}");
            EXIT_OK
        }
        Ok(Payload::SubmitReply(SubmitReply::Rejected { reason })) => {
            fail(EXIT_NOT_ADMITTED, format!("rejected: {reason}"))
        }
        Ok(other) => fail(EXIT_TRANSPORT, format!("unexpected reply {:?}", other.kind())),
        Err(e) => transport(e),
    }
}

fn status(cli: &Cli, job_id: &str) -> u8 {
    let req = JobStatusRequest { job_id: job_id.into() };
    match call(&cli.endpoint, &Payload::JobStatus(req)) {
        Ok(Payload::JobStatusReply(r)) => match r.record {
            Some(rec) => {
                if cli.format == Format::Structured {
                    println!("{}", serde_json::to_string_pretty(&rec).expect("serializes"));
                } else {
                    println!("{job_id} {}", state_name(rec.state));
                    if let Some(p) = &rec.placement {
                        println!("  on {}/{} grant {}", p.site_id, p.node_id, p.granted);
                    }
                    for h in &rec.history {
                        println!(
                            "  {:.3} {} -> {} ({})",
                            h.at,
                            state_name(h.from),
                            state_name(h.to),
                            h.reason
                        );
                    }
                }
                EXIT_OK
            }
            None => fail(EXIT_NOT_ADMITTED, format!("job {job_id} not found")),
        },
        Ok(other) => fail(EXIT_TRANSPORT, format!("unexpected reply {:?}", other.kind())),
        Err(e) => transport(e),
    }
}

fn state_name(state: impl serde::Serialize) -> String {
    match serde_json::to_value(state) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

fn capacity(cli: &Cli) -> u8 {
    let identity = match load_identity(cli) {
        Ok(i) => i,
        Err(code) => return code,
    };
    let token = match token_of(&identity) {
        Ok(t) => t,
        Err(code) => return code,
    };
    match call(&cli.endpoint, &Payload::CapacityQuery(CapacityQuery { token })) {
        Ok(Payload::CapacityReply(r)) => {
            match cli.format {
                Format::Structured => println!("{}", serde_json::to_string_pretty(&r).expect("serializes")),
                Format::Csv => {
                    println!("site,node,accel_milli,cpu_milli,mem_mb,storage_gb,net_mbps");
                    for (site, nodes) in &r.headroom {
                        for (node, v) in nodes {
                            let [a, c, m, s, n] = v.components();
                            println!("{site},{node},{a},{c},{m},{s},{n}");
                        }
                    }
                }
                Format::Table => {
                    for (site, nodes) in &r.headroom {
                        for (node, v) in nodes {
                            println!("{site:<12} {node:<12} {v}");
                        }
                    }
                }
            }
            EXIT_OK
        }
        Ok(Payload::ErrorReply(e)) => fail(EXIT_NOT_ADMITTED, e.message),
        Ok(other) => fail(EXIT_TRANSPORT, format!("unexpected reply {:?}", other.kind())),
        Err(e) => transport(e),
    }
}

fn serve(config: &Path, run: impl FnOnce(&str, Arc<AtomicBool>) -> Result<(), String>) -> u8 {
    let text = match std::fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", config.display())),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("no signal handler: {e}");
    }
    match run(&text, stop) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(EXIT_USAGE, e),
    }
}
