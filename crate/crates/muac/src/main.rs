//! Command-line front end: policy checking, off-chain proving, certificate
//! verification, and the ledger simulator. Machine-readable JSON goes to
//! standard output, prose to standard error.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use muac::ledger::{append_events, load_events, Ledger, RequestOutcome, SubmitOutcome};
use muac::model::{Context, ContextFact, OwnershipState, ResourceKind, UserId};
use muac::muacl::{check_detailed, Certificate, Goal, Theory, Violation};
use muac::policy::{parse_policy, validate, Policy};
use muac::solver::{solve, SolveError, SolveRequest};

const EXIT_OK: u8 = 0;
const EXIT_VERDICT: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "muac", about = "Automatic fair exchanges of finite resources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a policy file; warnings are printed as JSON lines.
    Check { policy_file: PathBuf },
    /// Search for a certificate proving the goal reachable by a fair exchange.
    Solve(SolveArgs),
    /// Verify a certificate against policies, state, context and goal.
    Verify(VerifyArgs),
    /// Operate the smart-contract ledger simulator.
    Ledger(LedgerArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Directory of `<user>.muac` policy files.
    #[arg(long)]
    policies: PathBuf,
    /// State JSON: user -> kind -> count.
    #[arg(long)]
    state: PathBuf,
    /// Context JSON: array of {"pred":..., "args":[...]}.
    #[arg(long)]
    context: Option<PathBuf>,
    /// `owns:<user>:<kind>:<count>` or `state:<file.json>`.
    #[arg(long)]
    goal: String,
    /// Step budget.
    #[arg(long, default_value_t = 4)]
    max: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    cert: PathBuf,
    #[arg(long)]
    policies: PathBuf,
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    context: Option<PathBuf>,
    #[arg(long)]
    goal: String,
}

#[derive(Args)]
struct LedgerArgs {
    /// Ledger directory; defaults to $MUAC_LEDGER_DIR.
    #[arg(long, env = "MUAC_LEDGER_DIR")]
    dir: PathBuf,
    #[command(subcommand)]
    command: LedgerCommand,
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Create the ledger directory and an empty event log.
    Init,
    /// Mint a token of the kind into the user's wallet.
    Deposit { user: String, kind: String },
    /// Remove a token from the user's wallet.
    Withdraw { user: String, token_id: u64 },
    /// Install the policy file as the user's policy.
    Policy { user: String, file: PathBuf },
    /// Assert (or retract) a fact; the user must be its first argument.
    Fact {
        #[arg(long)]
        retract: bool,
        user: String,
        pred: String,
        args: Vec<String>,
    },
    /// Request one more unit of a kind; solves, verifies and applies.
    Request {
        user: String,
        kind: String,
        #[arg(long, default_value_t = 4)]
        max: usize,
    },
    /// Submit an externally produced certificate.
    Submit {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        goal: String,
    },
    /// Print the event log as JSON lines and verify the hash chain.
    Log,
    /// Serve line-delimited JSON requests on standard input.
    Serve,
}

/// An error that ends the run with the usage/IO exit code.
struct CliError(String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

type CliResult = Result<u8, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { policy_file } => cmd_check(&policy_file),
        Command::Solve(args) => cmd_solve(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Ledger(args) => cmd_ledger(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError(message)) => {
            eprintln!("muac: {message}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn owner_from_path(path: &Path) -> Result<UserId, CliError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError(format!("cannot derive user name from {}", path.display())))?;
    Ok(UserId::new(stem)?)
}

fn cmd_check(policy_file: &Path) -> CliResult {
    let owner = owner_from_path(policy_file)?;
    let text = fs::read_to_string(policy_file)?;
    match parse_policy(&text, owner) {
        Ok(policy) => {
            for warning in validate(&policy) {
                println!("{}", serde_json::to_string(&warning).expect("warning serializes"));
            }
            Ok(EXIT_OK)
        }
        Err(err) => {
            println!("{}", serde_json::to_string(&err).expect("parse error serializes"));
            Ok(EXIT_VERDICT)
        }
    }
}

fn load_policies(dir: &Path) -> Result<BTreeMap<UserId, Policy>, CliError> {
    let mut policies = BTreeMap::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "muac"))
        .collect();
    paths.sort();
    for path in paths {
        let owner = owner_from_path(&path)?;
        let text = fs::read_to_string(&path)?;
        let policy = parse_policy(&text, owner.clone())
            .map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        policies.insert(owner, policy);
    }
    Ok(policies)
}

fn load_state(path: &Path) -> Result<OwnershipState, CliError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn load_context(path: Option<&PathBuf>) -> Result<Context, CliError> {
    match path {
        None => Ok(Context::new()),
        Some(path) => {
            let facts: Vec<ContextFact> = serde_json::from_str(&fs::read_to_string(path)?)?;
            Ok(Context::from_facts(facts))
        }
    }
}

fn parse_goal(spec: &str) -> Result<Goal, CliError> {
    if let Some(rest) = spec.strip_prefix("owns:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [user, kind, count] = parts[..] else {
            return Err(CliError(format!("bad goal spec {spec:?}")));
        };
        Ok(Goal::OwnsAtLeast {
            user: UserId::new(user)?,
            kind: ResourceKind::new(kind)?,
            count: count.parse::<u32>()?,
        })
    } else if let Some(path) = spec.strip_prefix("state:") {
        Ok(Goal::ExactState { target: load_state(Path::new(path))? })
    } else {
        Err(CliError(format!("bad goal spec {spec:?} (want owns:... or state:...)")))
    }
}

fn cmd_solve(args: &SolveArgs) -> CliResult {
    let req = SolveRequest {
        policies: load_policies(&args.policies)?,
        context: load_context(args.context.as_ref())?,
        state: load_state(&args.state)?,
        goal: parse_goal(&args.goal)?,
        max_transfers: args.max,
    };
    match solve(&req) {
        Ok(cert) => {
            println!("{}", serde_json::to_string(&cert).expect("certificate serializes"));
            Ok(EXIT_OK)
        }
        Err(SolveError::NoSolution) => {
            println!("{}", json!({"result": "no_solution"}));
            Ok(EXIT_VERDICT)
        }
        Err(SolveError::BudgetExceeded) => {
            println!("{}", json!({"result": "budget_exceeded"}));
            Ok(EXIT_VERDICT)
        }
    }
}

fn violation_json(violation: &Violation) -> serde_json::Value {
    let value = serde_json::to_value(violation).expect("violation serializes");
    json!({
        "valid": false,
        "violation": value["violation"],
        "step": violation.step(),
    })
}

fn cmd_verify(args: &VerifyArgs) -> CliResult {
    let policies = load_policies(&args.policies)?;
    let context = load_context(args.context.as_ref())?;
    let state = load_state(&args.state)?;
    let goal = parse_goal(&args.goal)?;
    let cert: Certificate = serde_json::from_str(&fs::read_to_string(&args.cert)?)?;
    let theory = Theory::new(&policies, context, state);
    match check_detailed(&theory, &cert, &goal) {
        Ok(_) => {
            println!("{}", json!({"valid": true}));
            Ok(EXIT_OK)
        }
        Err(violation) => {
            println!("{}", violation_json(&violation));
            Ok(EXIT_VERDICT)
        }
    }
}

fn open_ledger(dir: &Path) -> Result<Ledger, CliError> {
    let events = load_events(dir)
        .map_err(|e| CliError(format!("ledger at {} not initialized: {e}", dir.display())))?;
    Ok(Ledger::replay(events)?)
}

/// Appends any events produced since `prev_len` to the log file.
fn persist(dir: &Path, ledger: &Ledger, prev_len: usize) -> Result<(), CliError> {
    append_events(dir, &ledger.log()[prev_len..])?;
    Ok(())
}

fn cmd_ledger(args: &LedgerArgs) -> CliResult {
    let dir = &args.dir;
    if let LedgerCommand::Init = args.command {
        fs::create_dir_all(dir)?;
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))?;
        println!("{}", json!({"status": "ok"}));
        return Ok(EXIT_OK);
    }
    let mut ledger = open_ledger(dir)?;
    let prev_len = ledger.log().len();
    match &args.command {
        LedgerCommand::Init => unreachable!("handled above"),
        LedgerCommand::Deposit { user, kind } => {
            let token = ledger.deposit(&UserId::new(user)?, &ResourceKind::new(kind)?)?;
            persist(dir, &ledger, prev_len)?;
            println!("{}", json!({"status": "ok", "token": token}));
            Ok(EXIT_OK)
        }
        LedgerCommand::Withdraw { user, token_id } => {
            ledger.withdraw(&UserId::new(user)?, *token_id)?;
            persist(dir, &ledger, prev_len)?;
            println!("{}", json!({"status": "ok"}));
            Ok(EXIT_OK)
        }
        LedgerCommand::Policy { user, file } => {
            let text = fs::read_to_string(file)?;
            ledger.set_policy(&UserId::new(user)?, &text)?;
            persist(dir, &ledger, prev_len)?;
            println!("{}", json!({"status": "ok"}));
            Ok(EXIT_OK)
        }
        LedgerCommand::Fact { retract, user, pred, args: fact_args } => {
            let user = UserId::new(user)?;
            let fact_users = fact_args
                .iter()
                .map(|a| UserId::new(a))
                .collect::<Result<Vec<_>, _>>()?;
            let fact = ContextFact::new(pred, fact_users)?;
            if *retract {
                ledger.retract_fact(&user, fact)?;
            } else {
                ledger.assert_fact(&user, fact)?;
            }
            persist(dir, &ledger, prev_len)?;
            println!("{}", json!({"status": "ok"}));
            Ok(EXIT_OK)
        }
        LedgerCommand::Request { user, kind, max } => {
            let outcome =
                ledger.request(&UserId::new(user)?, &ResourceKind::new(kind)?, *max)?;
            match outcome {
                RequestOutcome::Applied(cert) => {
                    persist(dir, &ledger, prev_len)?;
                    println!("{}", json!({"status": "applied", "certificate": cert}));
                    Ok(EXIT_OK)
                }
                RequestOutcome::Denied(reason) => {
                    println!("{}", json!({"status": "denied", "reason": reason_str(reason)}));
                    Ok(EXIT_VERDICT)
                }
            }
        }
        LedgerCommand::Submit { cert, goal } => {
            let cert: Certificate = serde_json::from_str(&fs::read_to_string(cert)?)?;
            let goal = parse_goal(goal)?;
            match ledger.submit_certificate(cert, goal) {
                SubmitOutcome::Applied => {
                    persist(dir, &ledger, prev_len)?;
                    println!("{}", json!({"status": "applied"}));
                    Ok(EXIT_OK)
                }
                SubmitOutcome::Rejected(violation) => {
                    println!(
                        "{}",
                        json!({"status": "rejected", "diagnostics": violation_json(&violation)})
                    );
                    Ok(EXIT_VERDICT)
                }
            }
        }
        LedgerCommand::Log => {
            for event in ledger.log() {
                println!("{}", serde_json::to_string(event).expect("event serializes"));
            }
            Ok(EXIT_OK)
        }
        LedgerCommand::Serve => serve(dir, ledger),
    }
}

fn reason_str(reason: SolveError) -> &'static str {
    match reason {
        SolveError::NoSolution => "no_solution",
        SolveError::BudgetExceeded => "budget_exceeded",
    }
}

/// One request per input line, one JSON response per output line. Requests
/// are serialized through the single ledger owner.
fn serve(dir: &Path, mut ledger: Ledger) -> CliResult {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serve_one(dir, &mut ledger, &line) {
            Ok(value) => value,
            Err(CliError(message)) => json!({"status": "error", "message": message}),
        };
        let mut out = stdout.lock();
        serde_json::to_writer(&mut out, &response)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(EXIT_OK)
}

fn serve_one(dir: &Path, ledger: &mut Ledger, line: &str) -> Result<serde_json::Value, CliError> {
    let request: serde_json::Value = serde_json::from_str(line)?;
    let op = request["op"].as_str().ok_or_else(|| CliError("missing op".into()))?;
    let prev_len = ledger.log().len();
    let str_field = |name: &str| -> Result<String, CliError> {
        request[name]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| CliError(format!("missing field {name:?}")))
    };
    let value = match op {
        "request" => {
            let user = UserId::new(&str_field("user")?)?;
            let kind = ResourceKind::new(&str_field("kind")?)?;
            let max = request["max_transfers"].as_u64().unwrap_or(4) as usize;
            match ledger.request(&user, &kind, max)? {
                RequestOutcome::Applied(cert) => {
                    json!({"status": "applied", "certificate": cert})
                }
                RequestOutcome::Denied(reason) => {
                    json!({"status": "denied", "reason": reason_str(reason)})
                }
            }
        }
        "deposit" => {
            let token = ledger
                .deposit(&UserId::new(&str_field("user")?)?, &ResourceKind::new(&str_field("kind")?)?)?;
            json!({"status": "ok", "token": token})
        }
        "withdraw" => {
            let token_id = request["token_id"]
                .as_u64()
                .ok_or_else(|| CliError("missing field \"token_id\"".into()))?;
            ledger.withdraw(&UserId::new(&str_field("user")?)?, token_id)?;
            json!({"status": "ok"})
        }
        "set_policy" => {
            ledger.set_policy(&UserId::new(&str_field("user")?)?, &str_field("text")?)?;
            json!({"status": "ok"})
        }
        "assert_fact" | "retract_fact" => {
            let user = UserId::new(&str_field("user")?)?;
            let args = request["args"]
                .as_array()
                .ok_or_else(|| CliError("missing field \"args\"".into()))?
                .iter()
                .map(|v| {
                    v.as_str()
                        .ok_or_else(|| CliError("fact args must be strings".into()))
                        .and_then(|s| Ok(UserId::new(s)?))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let fact = ContextFact::new(&str_field("pred")?, args)?;
            if op == "assert_fact" {
                ledger.assert_fact(&user, fact)?;
            } else {
                ledger.retract_fact(&user, fact)?;
            }
            json!({"status": "ok"})
        }
        "submit" => {
            let cert: Certificate = serde_json::from_value(request["certificate"].clone())?;
            let goal: Goal = serde_json::from_value(request["goal"].clone())?;
            match ledger.submit_certificate(cert, goal) {
                SubmitOutcome::Applied => json!({"status": "applied"}),
                SubmitOutcome::Rejected(violation) => {
                    json!({"status": "rejected", "diagnostics": violation_json(&violation)})
                }
            }
        }
        other => return Err(CliError(format!("unknown op {other:?}"))),
    };
    persist(dir, ledger, prev_len)?;
    Ok(value)
}
