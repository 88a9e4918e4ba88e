use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use faultforge::buchi::SearchOptions;
use faultforge::fixtures::reproduce_tables;
use faultforge::gadgets::{GadgetConfig, GadgetKind};
use faultforge::modelfmt::{list_channels, parse_model, validate_baseline, BaselineError, ModelDocument};
use faultforge::synthesis::{default_victim_configs, render_trace, run_matrix, synthesize, MatrixSpec, Outcome, ThreatModel, TraceStyle};

const EXIT_OK: u8 = 0;
const EXIT_ATTACK: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

/// Synthesizes channel-fault attacks against protocol models.
///
/// Exit status: 0 safe or success, 1 attack found (or a baseline violation,
/// or a table mismatch), 2 usage or model error, 3 inconclusive.
///
/// The full interleaving state space is explored; no partial order reduction
/// is applied. The state cap defaults to 10000000 and can be set with
/// --state-cap or the FAULTFORGE_STATE_CAP environment variable.
#[derive(Parser, Debug)]
#[command(name = "faultforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every property of a model without an attacker.
    Check {
        #[command(flatten)]
        model: ModelArgs,
        /// Restrict to these properties.
        #[arg(long = "property", short = 'p')]
        properties: Vec<String>,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
    /// Search for an attack on one property under a set of gadgets.
    Attack {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, short = 'p')]
        property: String,
        /// Gadget kind; one for all victims, or one per victim in order.
        #[arg(long = "gadget", short = 'g', required = true)]
        gadgets: Vec<GadgetKind>,
        /// Victim channel, optionally with its own limit as `channel:limit`.
        #[arg(long = "victim", required = true)]
        victims: Vec<String>,
        /// Limit for victims without an explicit one.
        #[arg(long, default_value_t = 1)]
        limit: usize,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
    /// Evaluate properties against gadget kinds and victim configurations.
    Matrix {
        #[command(flatten)]
        model: ModelArgs,
        /// Properties to evaluate; all of them by default.
        #[arg(long = "property", short = 'p')]
        properties: Vec<String>,
        /// Gadget kinds; all three by default.
        #[arg(long = "gadget", short = 'g')]
        gadgets: Vec<GadgetKind>,
        /// `N` for every gadget or `kind=N` for one kind.
        #[arg(long = "limit")]
        limits: Vec<String>,
        /// A victim configuration as a comma-separated channel list. Defaults
        /// to each channel alone and then all channels together.
        #[arg(long = "victims")]
        victims: Vec<String>,
        #[command(flatten)]
        search: SearchArgs,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
    /// Print channels, processes and properties of a model.
    Inspect {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Re-run the bundled TCP and ABP tables and compare with the expected verdicts.
    #[command(alias = "reproduce-tables")]
    Reproduce {
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Path to a .fproto model.
    #[arg(long, short = 'm')]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Maximum number of product states to explore.
    #[arg(long)]
    state_cap: Option<usize>,
    /// Only report runs that are weakly fair towards every process.
    #[arg(long)]
    fairness: bool,
}

impl SearchArgs {
    fn options(&self) -> SearchOptions {
        let mut o = SearchOptions::from_env();
        if let Some(cap) = self.state_cap {
            o.max_states = cap;
        }
        o.weak_fairness = self.fairness;
        o
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn load(path: &Path) -> Result<ModelDocument, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| Failure(format!("{}:\n{e}", path.display())))
}

fn exit_for(o: Outcome) -> u8 {
    match o {
        Outcome::Safe => EXIT_OK,
        Outcome::Attack => EXIT_ATTACK,
        Outcome::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

fn check(model: &Path, properties: &[String], options: SearchOptions, format: Format) -> Result<u8, Failure> {
    let mut doc = load(model)?;
    if !properties.is_empty() {
        for p in properties {
            if doc.property(p).is_none() {
                return Err(Failure(format!("unknown property {p}")));
            }
        }
        doc.properties.retain(|p| properties.contains(&p.name));
    }
    match validate_baseline(&doc, options) {
        Ok(report) => {
            match format {
                Format::Human => {
                    for (name, states) in &report.satisfied {
                        println!("{name}: holds ({states} states)");
                    }
                }
                Format::Json => {
                    let v: Vec<_> = report.satisfied.iter().map(|(n, s)| serde_json::json!({"property": n, "holds": true, "states": s})).collect();
                    println!("{}", serde_json::to_string_pretty(&v)?);
                }
            }
            Ok(EXIT_OK)
        }
        Err(BaselineError::BaselineViolation { property, .. }) => {
            // Re-run as an attack without gadgets to get a rendered trace.
            let verdict = synthesize(&ThreatModel::new(&doc, &property, Vec::new())?, options)?;
            match format {
                Format::Human => {
                    println!("{property}: violated without any attacker");
                    print!("{}", render_trace(&verdict, TraceStyle::Human)?);
                }
                Format::Json => println!("{}", verdict.to_json()),
            }
            Ok(EXIT_ATTACK)
        }
        Err(BaselineError::Inconclusive(p)) => {
            eprintln!("{p}: state cap reached");
            Ok(EXIT_INCONCLUSIVE)
        }
        Err(e) => Err(e.into()),
    }
}

fn parse_victim(spec: &str, default_limit: usize) -> Result<(String, usize), Failure> {
    match spec.split_once(':') {
        Some((c, l)) => {
            let limit = l.parse().map_err(|_| Failure(format!("bad limit in victim {spec}")))?;
            Ok((c.to_string(), limit))
        }
        None => Ok((spec.to_string(), default_limit)),
    }
}

#[allow(clippy::too_many_arguments)]
fn attack(model: &Path, property: &str, kinds: &[GadgetKind], victims: &[String], limit: usize, options: SearchOptions, format: Format) -> Result<u8, Failure> {
    let doc = load(model)?;
    if kinds.len() != 1 && kinds.len() != victims.len() {
        return Err(Failure(format!("{} gadget kinds for {} victims; give one kind or one per victim", kinds.len(), victims.len())));
    }
    let mut configs = Vec::new();
    for (i, v) in victims.iter().enumerate() {
        let (victim, limit) = parse_victim(v, limit)?;
        let kind = if kinds.len() == 1 { kinds[0] } else { kinds[i] };
        configs.push(GadgetConfig { kind, victim, limit });
    }
    let tm = ThreatModel::new(&doc, property, configs)?;
    let verdict = synthesize(&tm, options)?;
    match format {
        Format::Human => {
            println!("{}: {} ({} states, {} transitions, {} ms)", verdict.property, verdict.outcome, verdict.stats.states, verdict.stats.transitions, verdict.stats.millis);
            if verdict.trace.is_some() {
                print!("{}", render_trace(&verdict, TraceStyle::Human)?);
            }
        }
        Format::Json => println!("{}", verdict.to_json()),
    }
    Ok(exit_for(verdict.outcome))
}

fn parse_limits(kinds: &[GadgetKind], limits: &[String]) -> Result<Vec<(GadgetKind, usize)>, Failure> {
    let mut out: Vec<(GadgetKind, usize)> = kinds.iter().map(|&k| (k, 1)).collect();
    for l in limits {
        match l.split_once('=') {
            Some((k, n)) => {
                let kind: GadgetKind = k.parse()?;
                let n: usize = n.parse().map_err(|_| Failure(format!("bad limit {l}")))?;
                match out.iter_mut().find(|(k2, _)| *k2 == kind) {
                    Some(slot) => slot.1 = n,
                    None => return Err(Failure(format!("limit given for {kind}, which is not evaluated"))),
                }
            }
            None => {
                let n: usize = l.parse().map_err(|_| Failure(format!("bad limit {l}")))?;
                out.iter_mut().for_each(|slot| slot.1 = n);
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn matrix(model: &Path, properties: &[String], kinds: &[GadgetKind], limits: &[String], victims: &[String], options: SearchOptions, jobs: usize, format: Format) -> Result<u8, Failure> {
    let doc = load(model)?;
    let properties = if properties.is_empty() { doc.properties.iter().map(|p| p.name.clone()).collect() } else { properties.to_vec() };
    let kinds = if kinds.is_empty() { GadgetKind::ALL.to_vec() } else { kinds.to_vec() };
    let victims = if victims.is_empty() {
        default_victim_configs(&doc)
    } else {
        victims.iter().map(|v| v.split(',').map(|c| c.trim().to_string()).collect()).collect()
    };
    let spec = MatrixSpec { properties, gadgets: parse_limits(&kinds, limits)?, victims, options, jobs };
    let m = run_matrix(&doc, &spec);
    match format {
        Format::Human => {
            print!("{}", m.to_markdown());
            for cell in &m.cells {
                for run in &cell.runs {
                    if let Some(e) = &run.error {
                        eprintln!("{} / {} on {}: {e}", cell.property, cell.gadget, run.victims.join("+"));
                    }
                }
            }
        }
        Format::Json => println!("{}", m.to_json()),
    }
    let outcomes: Vec<Option<Outcome>> = m.cells.iter().map(|c| c.outcome).collect();
    if outcomes.iter().any(|o| o.is_none()) {
        Ok(EXIT_USAGE)
    } else if outcomes.contains(&Some(Outcome::Inconclusive)) {
        Ok(EXIT_INCONCLUSIVE)
    } else {
        Ok(EXIT_OK)
    }
}

fn inspect(model: &Path) -> Result<u8, Failure> {
    let doc = load(model)?;
    if let Some(t) = &doc.title {
        println!("model {t}");
    }
    for (id, capacity, messages) in list_channels(&doc) {
        println!("channel {id} capacity {capacity} messages {{{}}}", messages.join(", "));
    }
    for p in &doc.processes {
        println!("process {} : {} states, {} transitions, init {}", p.id, p.states.len(), p.transitions.len(), p.states[p.initial]);
    }
    for p in &doc.properties {
        println!("property {} := {}", p.name, p.formula);
    }
    Ok(EXIT_OK)
}

fn reproduce(options: SearchOptions, jobs: usize) -> Result<u8, Failure> {
    let reports = reproduce_tables(options, jobs);
    let mut ok = true;
    for r in &reports {
        println!("{}", r.render());
        ok &= r.matches();
    }
    Ok(if ok { EXIT_OK } else { EXIT_ATTACK })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Check { model, properties, search, format } => check(&model.model, properties, search.options(), *format),
        Command::Attack { model, property, gadgets, victims, limit, search, format } => attack(&model.model, property, gadgets, victims, *limit, search.options(), *format),
        Command::Matrix { model, properties, gadgets, limits, victims, search, jobs, format } => {
            matrix(&model.model, properties, gadgets, limits, victims, search.options(), *jobs, *format)
        }
        Command::Inspect { model } => inspect(&model.model),
        Command::Reproduce { search, jobs } => reproduce(search.options(), *jobs),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
