//! Threat-model assembly, attack search, verdicts and trace rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buchi::{find_accepting_run, ltl_to_buchi, BuchiError, SearchOptions, SearchOutcome, SearchStats, SystemLasso};
use crate::gadgets::{self, GadgetConfig, GadgetError, GadgetKind, DONE};
use crate::kernel::{Choice, Component, CompositeState, KernelError, Role, System};
use crate::ltl::{eval_word, expand_derived, Formula, LassoWord};
use crate::modelfmt::{ModelDocument, Property};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("unknown property {0}")]
    UnknownProperty(String),
    #[error("victim channel {0} is not declared")]
    UnknownVictim(String),
    #[error(transparent)]
    Gadget(#[from] GadgetError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Buchi(#[from] BuchiError),
    #[error("internal error: attack trace failed its self-check: {0}")]
    SelfCheck(String),
    #[error("verdict is not an attack")]
    NotAnAttack,
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

/// A base model, one gadget per victim channel and the property under attack.
#[derive(Clone, Debug)]
pub struct ThreatModel<'a> {
    pub base: &'a ModelDocument,
    pub gadgets: Vec<GadgetConfig>,
    pub property: Property,
}

impl<'a> ThreatModel<'a> {
    pub fn new(base: &'a ModelDocument, property: &str, gadgets: Vec<GadgetConfig>) -> Result<Self, SynthesisError> {
        let property = base.property(property).ok_or_else(|| SynthesisError::UnknownProperty(property.to_string()))?.clone();
        Ok(ThreatModel { base, gadgets, property })
    }
}

/// Process id given to a gadget, e.g. `drop(AtoB)`.
pub fn gadget_id(config: &GadgetConfig) -> String {
    format!("{}({})", config.kind, config.victim)
}

/// Composes the base processes with one gadget process per configuration.
/// Each gadget's `done` proposition is renamed to `<gadget id>.done`.
pub fn assemble(tm: &ThreatModel<'_>) -> Result<System, SynthesisError> {
    let mut components: Vec<Component> = tm.base.processes.iter().cloned().map(Component::base).collect();
    let mut used: BTreeSet<String> = BTreeSet::new();
    for config in &tm.gadgets {
        let channel = tm.base.channel(&config.victim).ok_or_else(|| SynthesisError::UnknownVictim(config.victim.clone()))?;
        let g = gadgets::build(config.kind, channel, config.limit)?;
        let mut def = g.process;
        let mut id = gadget_id(config);
        let mut n = 2;
        while !used.insert(id.clone()) {
            id = format!("{}#{n}", gadget_id(config));
            n += 1;
        }
        let done = format!("{id}.{DONE}");
        for l in &mut def.labels {
            if l.remove(DONE) {
                l.insert(done.clone());
            }
        }
        def.atomic_props = BTreeSet::from([done]);
        def.id = id;
        components.push(Component { def, role: Role::Gadget { preemptive: config.kind == GadgetKind::Reorder } });
    }
    Ok(System::compose(tm.base.channels.clone(), components)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Safe,
    Attack,
    Inconclusive,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Safe => "Safe",
            Outcome::Attack => "Attack",
            Outcome::Inconclusive => "Inconclusive",
        })
    }
}

/// Channel contents at one trace position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSnapshot {
    pub channel: String,
    pub messages: Vec<String>,
}

/// One position of an attack trace and the move taken from it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Local state name of every process.
    pub locals: Vec<String>,
    pub buffers: Vec<BufferSnapshot>,
    /// The move taken from this position; `None` is the deadlock stutter.
    pub choice: Option<Choice>,
    pub process: Option<String>,
    pub action: String,
    /// Whether the property automaton is in an accepting state here.
    pub accepting: bool,
}

/// A lasso: `steps[loop_start..]` repeats forever.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub processes: Vec<String>,
    pub steps: Vec<TraceStep>,
    pub loop_start: usize,
    /// Index of the first position from which every continuation violates
    /// the property, for safety violations.
    pub violation_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub property: String,
    pub config: Vec<GadgetConfig>,
    pub stats: SearchStats,
    pub trace: Option<Trace>,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts serialize")
    }
}

fn step_record(system: &System, state: &CompositeState, choice: Option<Choice>, accepting: bool) -> TraceStep {
    let locals = (0..system.process_count()).map(|i| system.process(i).states[state.locals[i] as usize].clone()).collect();
    let buffers = system
        .channels()
        .iter()
        .enumerate()
        .map(|(c, ch)| BufferSnapshot { channel: ch.id.clone(), messages: system.buffer_messages(state, c).iter().map(|m| m.to_string()).collect() })
        .collect();
    let (process, action) = match choice {
        Some(c) => (Some(system.process(c.process).id.clone()), system.transition(c).action.to_string()),
        None => (None, "stutter".to_string()),
    };
    TraceStep { locals, buffers, choice, process, action, accepting }
}

fn to_trace(system: &System, accepting: &[bool], lasso: &SystemLasso) -> Trace {
    let record = |(n, e): &(crate::buchi::ProductState, Option<Choice>)| step_record(system, &n.state, *e, accepting[n.automaton]);
    Trace {
        processes: (0..system.process_count()).map(|i| system.process(i).id.clone()).collect(),
        steps: lasso.prefix.iter().chain(&lasso.cycle).map(record).collect(),
        loop_start: lasso.prefix.len(),
        violation_at: lasso.violation_point,
    }
}

/// Replays a lasso of composite states and moves through the kernel and
/// returns its label word.
pub fn replay_states(system: &System, states: &[CompositeState], moves: &[Option<Choice>], loop_start: usize) -> Result<LassoWord, SynthesisError> {
    let bad = |m: String| SynthesisError::SelfCheck(m);
    if states.is_empty() || states.len() != moves.len() || loop_start >= states.len() {
        return Err(bad("trace has an invalid shape".into()));
    }
    if states[0] != system.initial_state() {
        return Err(bad("trace does not start in the initial state".into()));
    }
    for i in 0..states.len() {
        let next = if i + 1 < states.len() { &states[i + 1] } else { &states[loop_start] };
        let got = match moves[i] {
            Some(c) => system.step(&states[i], c).map_err(|e| bad(format!("step {i}: {e}")))?,
            None => {
                if !system.enabled_transitions(&states[i]).is_empty() {
                    return Err(bad(format!("step {i}: stutter in a state that can move")));
                }
                states[i].clone()
            }
        };
        if &got != next {
            return Err(bad(format!("step {i}: successor does not match the trace")));
        }
    }
    let labels: Vec<BTreeSet<String>> = states.iter().map(|s| system.composite_labels(s)).collect();
    let cycle = labels[loop_start..].to_vec();
    let mut prefix = labels;
    prefix.truncate(loop_start);
    Ok(LassoWord::new(prefix, cycle))
}

/// Replays a rendered trace from its moves alone, checking each recorded
/// snapshot, and returns the label word.
pub fn replay_trace(system: &System, trace: &Trace) -> Result<LassoWord, SynthesisError> {
    let bad = |m: String| SynthesisError::MalformedTrace(m);
    if trace.steps.is_empty() || trace.loop_start >= trace.steps.len() {
        return Err(bad("trace has an invalid shape".into()));
    }
    let mut states = vec![system.initial_state()];
    for (i, step) in trace.steps.iter().enumerate() {
        let cur = states.last().unwrap().clone();
        if step_record(system, &cur, step.choice, step.accepting) != *step {
            return Err(bad(format!("step {i} does not match the replayed state")));
        }
        let next = match step.choice {
            Some(c) => system.step(&cur, c).map_err(|e| bad(format!("step {i}: {e}")))?,
            None => cur,
        };
        states.push(next);
    }
    let back = states.pop().unwrap();
    if back != states[trace.loop_start] {
        return Err(bad("the cycle does not close".into()));
    }
    let moves: Vec<_> = trace.steps.iter().map(|s| s.choice).collect();
    replay_states(system, &states, &moves, trace.loop_start).map_err(|e| bad(e.to_string()))
}

/// Searches for an attack: a run of the assembled system violating the
/// property.
pub fn synthesize(tm: &ThreatModel<'_>, options: SearchOptions) -> Result<Verdict, SynthesisError> {
    let system = assemble(tm)?;
    synthesize_on(&system, tm, options)
}

fn synthesize_on(system: &System, tm: &ThreatModel<'_>, options: SearchOptions) -> Result<Verdict, SynthesisError> {
    let negated = expand_derived(&Formula::not(tm.property.formula.clone()));
    let automaton = ltl_to_buchi(&negated);
    let run = find_accepting_run(system, &automaton, options)?;
    let (outcome, trace) = match &run.outcome {
        SearchOutcome::Absent => (Outcome::Safe, None),
        SearchOutcome::LimitReached => (Outcome::Inconclusive, None),
        SearchOutcome::Found(lasso) => {
            let states: Vec<CompositeState> = lasso.nodes().map(|n| n.state.clone()).collect();
            let moves: Vec<Option<Choice>> = lasso.prefix.iter().chain(&lasso.cycle).map(|(_, e)| *e).collect();
            let word = replay_states(system, &states, &moves, lasso.prefix.len())?;
            if eval_word(&tm.property.formula, &word, 0) {
                return Err(SynthesisError::SelfCheck("the trace satisfies the property".into()));
            }
            (Outcome::Attack, Some(to_trace(system, &automaton.accepting, lasso)))
        }
    };
    Ok(Verdict { outcome, property: tm.property.name.clone(), config: tm.gadgets.clone(), stats: run.stats, trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceStyle {
    Human,
    Machine,
}

/// Renders the trace of an attack verdict.
///
/// The human style numbers the steps and marks where the cycle begins. For a
/// safety violation it stops at the violating state. The machine style is the
/// JSON form of [`Trace`], accepted by [`replay_trace`].
pub fn render_trace(v: &Verdict, style: TraceStyle) -> Result<String, SynthesisError> {
    let trace = match (&v.outcome, &v.trace) {
        (Outcome::Attack, Some(t)) => t,
        _ => return Err(SynthesisError::NotAnAttack),
    };
    if style == TraceStyle::Machine {
        return Ok(serde_json::to_string_pretty(trace).expect("traces serialize"));
    }
    let mut out = String::new();
    let shown = match trace.violation_at {
        Some(v) => v.saturating_sub(1).min(trace.steps.len() - 1),
        None => trace.steps.len() - 1,
    };
    for (i, step) in trace.steps.iter().enumerate().take(shown + 1) {
        if trace.violation_at.is_none() && i == trace.loop_start {
            out.push_str("-- cycle begins here --\n");
        }
        let locals: Vec<String> = trace.processes.iter().zip(&step.locals).map(|(p, s)| format!("{p}={s}")).collect();
        let bufs: Vec<String> = step.buffers.iter().map(|b| format!("{}=[{}]", b.channel, b.messages.join(","))).collect();
        let mark = if step.accepting { " *" } else { "" };
        let _ = writeln!(out, "{i:>3}. {} | {}{mark}", locals.join(" "), bufs.join(" "));
        if trace.violation_at.is_some() && i == shown {
            out.push_str("     ^ violating state: every continuation from here violates the property\n");
            break;
        }
        match &step.process {
            Some(p) => {
                let _ = writeln!(out, "     {p}: {}", step.action);
            }
            None => out.push_str("     (no process can move)\n"),
        }
    }
    if trace.violation_at.is_none() {
        let _ = writeln!(out, "-- back to step {} --", trace.loop_start);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Matrices

/// One attack run of a matrix cell: a set of victim channels, each with the
/// cell's gadget kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRun {
    pub victims: Vec<String>,
    pub outcome: Option<Outcome>,
    pub states: usize,
    pub transitions: usize,
    pub error: Option<String>,
    #[serde(skip)]
    pub verdict: Option<Verdict>,
}

/// A (property, gadget kind) cell. It is an attack if any victim
/// configuration yields one, and safe only if all are safe.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub property: String,
    pub gadget: GadgetKind,
    pub limit: usize,
    pub outcome: Option<Outcome>,
    pub runs: Vec<MatrixRun>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matrix {
    pub properties: Vec<String>,
    pub gadgets: Vec<GadgetKind>,
    pub cells: Vec<MatrixCell>,
}

/// What a matrix evaluates.
#[derive(Clone, Debug)]
pub struct MatrixSpec {
    pub properties: Vec<String>,
    pub gadgets: Vec<(GadgetKind, usize)>,
    /// Victim configurations; each is a set of channels attacked together.
    pub victims: Vec<Vec<String>>,
    pub options: SearchOptions,
    /// Worker threads; `0` uses the global pool.
    pub jobs: usize,
}

/// All single channels of the model, then all of them together when there
/// is more than one.
pub fn default_victim_configs(doc: &ModelDocument) -> Vec<Vec<String>> {
    let ids: Vec<String> = doc.channels.iter().map(|c| c.id.clone()).collect();
    let mut out: Vec<Vec<String>> = ids.iter().map(|c| vec![c.clone()]).collect();
    if ids.len() > 1 {
        out.push(ids);
    }
    out
}

fn aggregate(runs: &[MatrixRun]) -> Option<Outcome> {
    if runs.iter().any(|r| r.outcome == Some(Outcome::Attack)) {
        Some(Outcome::Attack)
    } else if runs.is_empty() || runs.iter().any(|r| r.outcome.is_none()) {
        None
    } else if runs.iter().any(|r| r.outcome == Some(Outcome::Inconclusive)) {
        Some(Outcome::Inconclusive)
    } else {
        Some(Outcome::Safe)
    }
}

fn run_one(doc: &ModelDocument, property: &str, kind: GadgetKind, limit: usize, victims: &[String], options: SearchOptions) -> MatrixRun {
    let gadgets = victims.iter().map(|v| GadgetConfig { kind, victim: v.clone(), limit }).collect();
    let result = ThreatModel::new(doc, property, gadgets).and_then(|tm| synthesize(&tm, options));
    match result {
        Ok(v) => MatrixRun {
            victims: victims.to_vec(),
            outcome: Some(v.outcome),
            states: v.stats.states,
            transitions: v.stats.transitions,
            error: None,
            verdict: Some(v),
        },
        Err(e) => MatrixRun { victims: victims.to_vec(), outcome: None, states: 0, transitions: 0, error: Some(e.to_string()), verdict: None },
    }
}

/// Runs every (property, gadget, victim configuration) combination. Cells are
/// independent; an error in one is recorded in that cell only.
pub fn run_matrix(doc: &ModelDocument, spec: &MatrixSpec) -> Matrix {
    let mut jobs = Vec::new();
    for p in &spec.properties {
        for &(kind, limit) in &spec.gadgets {
            for v in &spec.victims {
                jobs.push((p.clone(), kind, limit, v.clone()));
            }
        }
    }
    let work = || -> Vec<MatrixRun> {
        jobs.par_iter().map(|(p, kind, limit, v)| run_one(doc, p, *kind, *limit, v, spec.options)).collect()
    };
    let runs = if spec.jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new().num_threads(spec.jobs).build().expect("thread pool").install(work)
    };
    let mut runs = runs.into_iter();
    let mut cells = Vec::new();
    for p in &spec.properties {
        for &(kind, limit) in &spec.gadgets {
            let rs: Vec<MatrixRun> = runs.by_ref().take(spec.victims.len()).collect();
            cells.push(MatrixCell { property: p.clone(), gadget: kind, limit, outcome: aggregate(&rs), runs: rs });
        }
    }
    Matrix { properties: spec.properties.clone(), gadgets: spec.gadgets.iter().map(|g| g.0).collect(), cells }
}

impl Matrix {
    pub fn cell(&self, property: &str, gadget: GadgetKind) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.property == property && c.gadget == gadget)
    }

    /// Markdown table with one row per property and one column per gadget.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| property |");
        for g in &self.gadgets {
            let limit = self.cells.iter().find(|c| c.gadget == *g).map(|c| c.limit).unwrap_or(0);
            let _ = write!(out, " {g} (l={limit}) |");
        }
        out.push_str("\n|---|");
        for _ in &self.gadgets {
            out.push_str("---|");
        }
        out.push('\n');
        for p in &self.properties {
            let _ = write!(out, "| {p} |");
            for g in &self.gadgets {
                let text = match self.cell(p, *g).and_then(|c| c.outcome) {
                    Some(o) => o.to_string(),
                    None => "error".to_string(),
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.cells).expect("matrices serialize")
    }
}
