use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use mapverify::engine::{
    default_linked, evaluate, load_linked, report_to_json, EvalConfig, LinkedRuleset, ReportMeta, RuleStatus,
};
use mapverify::eval_harness::{self, CategoryMapping};
use mapverify::map_io::{convert_roads, read_map, read_opendrive, write_map, DEFAULT_STEP};
use mapverify::scenario_gen::{build_corpus, DefectKind};
use mapverify::synthesis::pending::{Decision, PendingCandidate, PendingStore, Review};
use mapverify::synthesis::registry::Recovery;
use mapverify::synthesis::{self, infer_category, CompletionClient, HttpClient, Registry, ReplayClient, RuleSpecRequest};
use mapverify::write_atomic;

#[derive(Parser)]
#[command(name = "mapverify", version, about = "Verify lanelet maps with elevation against first-order rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Category {
    Slope,
    Step,
    Clearance,
}

impl From<Category> for DefectKind {
    fn from(c: Category) -> Self {
        match c {
            Category::Slope => DefectKind::ExcessiveSlope,
            Category::Step => DefectKind::AbruptStep,
            Category::Clearance => DefectKind::LowClearance,
        }
    }
}

#[derive(clap::Args)]
struct RuleArgs {
    /// Ruleset file; the shipped rules when omitted
    #[arg(long, requires = "predicates")]
    rules: Option<PathBuf>,
    /// Predicate file; the shipped predicates when omitted
    #[arg(long, requires = "rules")]
    predicates: Option<PathBuf>,
    /// TOML evaluation config
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate rules on a map
    Verify {
        #[arg(long)]
        map: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        /// Write the JSON report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Convert an OpenDRIVE subset file to the map format
    Convert {
        #[arg(long)]
        opendrive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampling step along the reference line, meters
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
    },
    /// Generate a synthetic corpus with ground truth
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        clean: usize,
        #[arg(long)]
        defective: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draft a rule for a defect description and validate it
    #[command(group(ArgGroup::new("spec_src").required(true).args(["spec", "spec_file"])))]
    #[command(group(ArgGroup::new("source").required(true).args(["replay", "live"])))]
    Synthesize {
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        spec_file: Option<PathBuf>,
        /// Registry directory providing the context and the active rules
        #[arg(long)]
        context: PathBuf,
        /// Shipped fixture name or response file to replay
        #[arg(long)]
        replay: Option<String>,
        /// Query the configured completion endpoint over the network
        #[arg(long)]
        live: bool,
        /// Request id; defaults to the fixture name or a digest of the request text
        #[arg(long)]
        id: Option<String>,
        /// Smoke-test category; inferred from the request text when omitted
        #[arg(long, value_enum)]
        category: Option<Category>,
        /// Suggested rule name passed to the model
        #[arg(long)]
        name_hint: Option<String>,
        /// Pending directory; `<context>/pending` when omitted
        #[arg(long)]
        pending: Option<PathBuf>,
        /// Also print the prompt
        #[arg(long)]
        show_prompt: bool,
    },
    /// Approve or reject pending candidates
    #[command(group(ArgGroup::new("decision").args(["approve", "reject", "recover"])))]
    Review {
        #[arg(long, required_unless_present = "recover")]
        pending: Option<PathBuf>,
        #[arg(long)]
        approve: Option<String>,
        #[arg(long)]
        reject: Option<String>,
        /// Undo an interrupted registration in this registry directory
        #[arg(long)]
        recover: Option<PathBuf>,
    },
    /// Score rules on a generated corpus
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        /// Write the JSON metrics here
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Parse, type-check and link rules and predicates
    Lint {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        predicates: PathBuf,
    },
    /// Create a registry with the shipped rules, predicates and context
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Any failure that maps to exit status 2.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<ExitCode, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<EvalConfig, Failure> {
    match path {
        Some(p) => EvalConfig::from_toml(&read_text(p)?).map_err(|e| Failure(format!("{}: {e}", p.display()))),
        None => Ok(EvalConfig::default()),
    }
}

fn load_rules(args: &RuleArgs) -> Result<(LinkedRuleset, EvalConfig, String, String), Failure> {
    let cfg = load_config(args.config.as_deref())?;
    match (&args.rules, &args.predicates) {
        (Some(r), Some(p)) => {
            let linked = load_linked(&read_text(r)?, &read_text(p)?)?;
            Ok((linked, cfg, r.display().to_string(), p.display().to_string()))
        }
        _ => Ok((default_linked(&cfg.thresholds), cfg, "default".into(), "default".into())),
    }
}

fn verify(map: &Path, rules: &RuleArgs, report: Option<&Path>) -> Outcome {
    let (linked, cfg, rules_src, preds_src) = load_rules(rules)?;
    let bytes = fs::read(map).map_err(|e| Failure(format!("{}: {e}", map.display())))?;
    let net = read_map(&bytes).map_err(|e| Failure(format!("{}: {e}", map.display())))?;
    let result = evaluate(&linked, &net, &cfg)?;
    if let Some(out) = report {
        let meta = ReportMeta::new(map.display().to_string(), rules_src, preds_src);
        write_out(out, &report_to_json(&result, &meta, &cfg))?;
    }
    let total = result.rules.len();
    let violated = result.violated_rules().count();
    if violated == 0 {
        println!("{total} rules satisfied");
        return Ok(ExitCode::SUCCESS);
    }
    let n = result.violation_count();
    println!("{violated} of {total} rules violated ({n} violation{})", if n == 1 { "" } else { "s" });
    for r in result.rules.iter().filter(|r| r.status == RuleStatus::Violated) {
        for v in &r.violations {
            let binding: Vec<String> = v.binding.iter().map(|b| format!("{}={}", b.var, b.lanelet)).collect();
            let witness: Vec<String> = v.witness.iter().map(|w| format!("{} = {}", w.call, w.value)).collect();
            println!("  {}: {} [{}]", r.name, binding.join(", "), witness.join(", "));
        }
    }
    Ok(ExitCode::from(1))
}

fn convert(opendrive: &Path, out: &Path, step: f64) -> Outcome {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Failure(format!("--step must be positive, got {step}")));
    }
    let bytes = fs::read(opendrive).map_err(|e| Failure(format!("{}: {e}", opendrive.display())))?;
    let roads = read_opendrive(&bytes).map_err(|e| Failure(format!("{}: {e}", opendrive.display())))?;
    let net = convert_roads(&roads, step)?;
    write_out(out, &write_map(&net))?;
    println!("converted {} road(s) into {} lanelet(s)", roads.len(), net.len());
    Ok(ExitCode::SUCCESS)
}

fn gen(seed: u64, clean: usize, defective: usize, out: &Path) -> Outcome {
    let m = build_corpus(seed, clean, defective, out)?;
    let counts: Vec<String> = DefectKind::ALL
        .iter()
        .map(|d| format!("{} {}", d.name(), m.category_count(*d)))
        .collect();
    println!("wrote {} maps to {} ({})", m.maps.len(), out.display(), counts.join(", "));
    Ok(ExitCode::SUCCESS)
}

fn digest_id(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    let hex: String = hash.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("req-{hex}")
}

#[allow(clippy::too_many_arguments)]
fn synthesize(
    spec: Option<String>,
    spec_file: Option<PathBuf>,
    context: &Path,
    replay: Option<String>,
    live: bool,
    id: Option<String>,
    category: Option<Category>,
    name_hint: Option<String>,
    pending: Option<PathBuf>,
    show_prompt: bool,
) -> Outcome {
    let description = match (spec, spec_file) {
        (Some(s), _) => s,
        (None, Some(f)) => read_text(&f)?,
        (None, None) => unreachable!("clap requires one"),
    };
    let req = RuleSpecRequest::new(description.clone(), name_hint).ok_or_else(|| Failure("empty spec".into()))?;
    let category: DefectKind = match category {
        Some(c) => c.into(),
        None => infer_category(&description).ok_or_else(|| {
            Failure("cannot infer the defect category from the request; pass --category".into())
        })?,
    };
    let (request_id, client): (String, Box<dyn CompletionClient>) = match (replay, live) {
        (Some(r), false) => {
            let path = Path::new(&r);
            if path.is_file() {
                let (stem, loaded) = ReplayClient::from_file(path)?;
                let id = id.unwrap_or(stem.clone());
                let mut client = ReplayClient::new();
                client.insert(id.clone(), loaded_response(&loaded, &stem));
                (id, Box::new(client))
            } else {
                let shipped = ReplayClient::shipped();
                if !shipped.ids().any(|i| i == r) {
                    return Err(Failure(format!(
                        "no fixture `{r}`; shipped fixtures: {}",
                        shipped.ids().collect::<Vec<_>>().join(", ")
                    )));
                }
                let id = id.unwrap_or_else(|| r.clone());
                let mut client = ReplayClient::new();
                client.insert(id.clone(), loaded_response(&shipped, &r));
                (id, Box::new(client))
            }
        }
        (None, true) => (id.unwrap_or_else(|| digest_id(&description)), Box::new(HttpClient::from_env()?)),
        _ => unreachable!("clap requires exactly one"),
    };
    let outcome = synthesis::synthesize(client.as_ref(), &request_id, &req, category, context)?;
    if show_prompt {
        println!("{}", outcome.prompt);
    }
    let store = PendingStore::open(&pending.unwrap_or_else(|| context.join("pending")))?;
    let registry = fs::canonicalize(context).unwrap_or_else(|_| context.to_path_buf());
    let saved = store.save(
        &PendingCandidate {
            request_id: request_id.clone(),
            description,
            category,
            registry,
            response: outcome.response,
        },
        &outcome.verdict,
    )?;
    print!("{}", outcome.verdict.summary());
    match outcome.verdict.rejected_at() {
        None => {
            println!("candidate {request_id} accepted; awaiting review in {}", saved.display());
            Ok(ExitCode::SUCCESS)
        }
        Some(stage) => {
            println!("candidate {request_id} rejected at {stage}; saved to {}", saved.display());
            Ok(ExitCode::from(2))
        }
    }
}

fn loaded_response(client: &ReplayClient, id: &str) -> String {
    client
        .complete(&synthesis::CompletionRequest {
            id: id.to_string(),
            prompt: String::new(),
        })
        .expect("fixture present")
}

fn decide(store: &PendingStore, id: &str, decision: Decision) -> Outcome {
    let review = Review::prepare(store, id)?;
    print!("{}", review.render());
    match review.decide(store, decision)? {
        Some(a) => println!("approved {id}: registered rule {} with predicates {}", a.rule, a.predicates.join(", ")),
        None => println!("rejected {id}; registry unchanged"),
    }
    Ok(ExitCode::SUCCESS)
}

fn interactive(store: &PendingStore) -> Outcome {
    let ids = store.undecided()?;
    if ids.is_empty() {
        println!("no pending candidates");
        return Ok(ExitCode::SUCCESS);
    }
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    for id in ids {
        let review = Review::prepare(store, &id)?;
        println!("{}", review.render());
        loop {
            print!("[a]pprove, [r]eject, [s]kip, [q]uit? ");
            io::stdout().flush()?;
            let Some(line) = lines.next() else {
                return Ok(ExitCode::SUCCESS);
            };
            match line?.trim() {
                "a" => {
                    if !review.verdict.is_accepted() {
                        println!("a rejected candidate cannot be approved");
                        continue;
                    }
                    let a = review.decide(store, Decision::Approve)?.expect("approval");
                    println!("registered rule {}", a.rule);
                }
                "r" => {
                    review.decide(store, Decision::Reject)?;
                    println!("rejected {id}");
                }
                "s" => {}
                "q" => return Ok(ExitCode::SUCCESS),
                _ => continue,
            }
            break;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn review(pending: Option<PathBuf>, approve: Option<String>, reject: Option<String>, recover: Option<PathBuf>) -> Outcome {
    if let Some(dir) = recover {
        let msg = match Registry::open(&dir)?.recover()? {
            Recovery::Clean => "registry is consistent; nothing to recover".to_string(),
            Recovery::Cleaned => "removed leftovers of an interrupted attempt; files unchanged".to_string(),
            Recovery::RolledBack(id) => format!("rolled back unfinished registration of {id}"),
        };
        println!("{msg}");
        return Ok(ExitCode::SUCCESS);
    }
    let store = PendingStore::open(&pending.expect("clap requires --pending"))?;
    match (approve, reject) {
        (Some(id), None) => decide(&store, &id, Decision::Approve),
        (None, Some(id)) => decide(&store, &id, Decision::Reject),
        _ => interactive(&store),
    }
}

fn eval(corpus: &Path, rules: &RuleArgs, json: Option<&Path>) -> Outcome {
    let (linked, cfg, _, _) = load_rules(rules)?;
    let m = eval_harness::run(corpus, &linked, &cfg, &CategoryMapping::default())?;
    if let Some(out) = json {
        write_out(out, &m.to_json())?;
    }
    print!("{}", m.to_table());
    Ok(if m.meets_target() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn lint(rules: &Path, predicates: &Path) -> Outcome {
    let linked = load_linked(&read_text(rules)?, &read_text(predicates)?)?;
    println!("ok: {} rule(s), {} predicate(s)", linked.rules().len(), linked.predicates().len());
    Ok(ExitCode::SUCCESS)
}

fn init(out: &Path, config: Option<&Path>) -> Outcome {
    let cfg = load_config(config)?;
    Registry::init(out, &cfg.thresholds)?;
    println!("initialized registry in {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify { map, rules, report } => verify(&map, &rules, report.as_deref()),
        Command::Convert { opendrive, out, step } => convert(&opendrive, &out, step),
        Command::Gen {
            seed,
            clean,
            defective,
            out,
        } => gen(seed, clean, defective, &out),
        Command::Synthesize {
            spec,
            spec_file,
            context,
            replay,
            live,
            id,
            category,
            name_hint,
            pending,
            show_prompt,
        } => synthesize(spec, spec_file, &context, replay, live, id, category, name_hint, pending, show_prompt),
        Command::Review {
            pending,
            approve,
            reject,
            recover,
        } => review(pending, approve, reject, recover),
        Command::Eval { corpus, rules, json } => eval(&corpus, &rules, json.as_deref()),
        Command::Lint { rules, predicates } => lint(&rules, &predicates),
        Command::Init { out, config } => init(&out, config.as_deref()),
    };
    result.unwrap_or_else(|Failure(msg)| {
        eprintln!("error: {msg}");
        ExitCode::from(2)
    })
}
