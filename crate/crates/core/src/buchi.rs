//! Büchi automata and the emptiness machinery of the checker.
//!
//! * [`ltl_to_buchi`] translates a formula with a declarative tableau
//!   (closure sets with until obligations), producing a generalized automaton
//!   that is then degeneralized.
//! * [`process_to_ba`] / [`ba_to_process`] map between processes and automata
//!   over action alphabets.
//! * [`nested_dfs`] decides emptiness of an on-the-fly product; the
//!   [`scc_emptiness_oracle`] decides the same question by SCC decomposition of
//!   a materialized graph and exists to cross-check it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::hash::Hash;
use std::time::Instant;

use indexmap::IndexSet;
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Action, AtomEval, Choice, CompositeState, ProcessDef, System, Transition};
use crate::ltl::{expand_derived, Formula, LassoWord};

/// Default cap on explored product states.
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuchiError {
    #[error("proposition {0} is not declared by the process")]
    UnknownProposition(String),
    #[error("property refers to unknown channel {0}")]
    UnknownChannel(String),
}

/// Conjunction of literals over named propositions. The empty guard is `true`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Guard {
    pub pos: Vec<String>,
    pub neg: Vec<String>,
}

impl Guard {
    pub fn is_true(&self) -> bool {
        self.pos.is_empty() && self.neg.is_empty()
    }

    pub fn holds(&self, labels: &BTreeSet<String>) -> bool {
        self.pos.iter().all(|p| labels.contains(p)) && self.neg.iter().all(|p| !labels.contains(p))
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_true() {
            return f.write_str("true");
        }
        let lits: Vec<String> = self.pos.iter().cloned().chain(self.neg.iter().map(|p| format!("!{p}"))).collect();
        f.write_str(&lits.join(" && "))
    }
}

/// `(Q, Σ, δ, Q0, F)` with transitions labeled by symbols of type `S`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuchiAutomaton<S> {
    pub states: Vec<String>,
    pub transitions: Vec<(usize, S, usize)>,
    pub initial: Vec<usize>,
    pub accepting: Vec<bool>,
}

impl<S> BuchiAutomaton<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Decides whether the automaton accepts `prefix · cycle^ω`. `matches`
    /// says whether a transition symbol admits a word letter.
    pub fn accepts<L>(&self, word: &LassoWord<L>, matches: impl Fn(&S, &L) -> bool) -> bool {
        let n = word.len();
        let id = |q: usize, i: usize| q * n + i;
        let mut edges = vec![Vec::new(); self.states.len() * n];
        for &(q, ref sym, q2) in &self.transitions {
            for i in 0..n {
                if matches(sym, word.letter(i)) {
                    edges[id(q, i)].push(id(q2, word.succ(i)));
                }
            }
        }
        let graph = ExplicitGraph {
            initial: self.initial.iter().map(|&q| id(q, 0)).collect(),
            accepting: (0..self.states.len() * n).map(|v| self.accepting[v / n]).collect(),
            edges,
        };
        scc_emptiness_oracle(&graph).is_some()
    }
}

impl BuchiAutomaton<Guard> {
    /// States that are accepting and loop on `true`: once reached, every
    /// continuation is accepted.
    pub fn universal_states(&self) -> Vec<bool> {
        let mut out = vec![false; self.states.len()];
        for (q, g, q2) in &self.transitions {
            if q == q2 && g.is_true() && self.accepting[*q] {
                out[*q] = true;
            }
        }
        out
    }

    pub fn accepts_word(&self, word: &LassoWord) -> bool {
        self.accepts(word, |g, l| g.holds(l))
    }
}

// ---------------------------------------------------------------------------
// LTL to Büchi

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Nnf {
    True,
    False,
    Lit(bool, String),
    And(usize, usize),
    Or(usize, usize),
    Next(usize),
    Until(usize, usize),
    Release(usize, usize),
}

#[derive(Default)]
struct Closure {
    nodes: Vec<Nnf>,
    ids: HashMap<Nnf, usize>,
}

impl Closure {
    fn intern(&mut self, n: Nnf) -> usize {
        if let Some(&i) = self.ids.get(&n) {
            return i;
        }
        self.nodes.push(n.clone());
        self.ids.insert(n, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    /// Negation normal form of `f` (negated when `neg`), with `R` as the dual of `U`.
    fn nnf(&mut self, f: &Formula, neg: bool) -> usize {
        let node = match f {
            Formula::True => {
                if neg {
                    Nnf::False
                } else {
                    Nnf::True
                }
            }
            Formula::Prop(p) => Nnf::Lit(!neg, p.clone()),
            Formula::Not(a) => return self.nnf(a, !neg),
            Formula::And(a, b) => {
                let (x, y) = (self.nnf(a, neg), self.nnf(b, neg));
                if neg {
                    Nnf::Or(x, y)
                } else {
                    Nnf::And(x, y)
                }
            }
            Formula::Next(a) => Nnf::Next(self.nnf(a, neg)),
            Formula::Until(a, b) => {
                let (x, y) = (self.nnf(a, neg), self.nnf(b, neg));
                if neg {
                    Nnf::Release(x, y)
                } else {
                    Nnf::Until(x, y)
                }
            }
            other => return self.nnf(&expand_derived(other), neg),
        };
        self.intern(node)
    }
}

#[derive(Clone)]
struct Pending {
    incoming: BTreeSet<usize>,
    new: BTreeSet<usize>,
    old: BTreeSet<usize>,
    next: BTreeSet<usize>,
}

struct TableauNode {
    incoming: BTreeSet<usize>,
    old: BTreeSet<usize>,
}

const INIT: usize = usize::MAX;

/// Number of formulas in the closure of `f` (subformulas and their negations).
pub fn closure_size(f: &Formula) -> usize {
    let core = expand_derived(f);
    let mut subs = BTreeSet::new();
    fn walk(f: &Formula, out: &mut BTreeSet<Formula>) {
        let stripped = match f {
            Formula::Not(a) => a.as_ref(),
            other => other,
        };
        out.insert(stripped.clone());
        match stripped {
            Formula::True | Formula::Prop(_) => {}
            Formula::Not(a) | Formula::Next(a) => walk(a, out),
            Formula::And(a, b) | Formula::Until(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            _ => unreachable!("core syntax only"),
        }
    }
    walk(&core, &mut subs);
    2 * subs.len()
}

/// Translates an LTL formula into a Büchi automaton accepting exactly the
/// words that satisfy it. Transition guards read the letter at the source
/// position.
pub fn ltl_to_buchi(f: &Formula) -> BuchiAutomaton<Guard> {
    let mut cl = Closure::default();
    let root = cl.nnf(f, false);

    let mut done: Vec<TableauNode> = Vec::new();
    let mut index: HashMap<(BTreeSet<usize>, BTreeSet<usize>), usize> = HashMap::new();
    let mut stack = vec![Pending {
        incoming: BTreeSet::from([INIT]),
        new: BTreeSet::from([root]),
        old: BTreeSet::new(),
        next: BTreeSet::new(),
    }];

    while let Some(mut n) = stack.pop() {
        let Some(&eta) = n.new.iter().next() else {
            let key = (n.old.clone(), n.next.clone());
            if let Some(&i) = index.get(&key) {
                done[i].incoming.extend(n.incoming);
            } else {
                let id = done.len();
                index.insert(key, id);
                stack.push(Pending {
                    incoming: BTreeSet::from([id]),
                    new: n.next.clone(),
                    old: BTreeSet::new(),
                    next: BTreeSet::new(),
                });
                done.push(TableauNode { incoming: n.incoming, old: n.old });
            }
            continue;
        };
        n.new.remove(&eta);
        if n.old.contains(&eta) {
            stack.push(n);
            continue;
        }
        let add_new = |p: &mut Pending, xs: &[usize]| {
            for &x in xs {
                if !p.old.contains(&x) {
                    p.new.insert(x);
                }
            }
        };
        match cl.nodes[eta].clone() {
            Nnf::False => {}
            Nnf::True => {
                n.old.insert(eta);
                stack.push(n);
            }
            Nnf::Lit(b, p) => {
                let contradiction = cl.ids.get(&Nnf::Lit(!b, p)).is_some_and(|neg| n.old.contains(neg));
                if !contradiction {
                    n.old.insert(eta);
                    stack.push(n);
                }
            }
            Nnf::And(a, b) => {
                add_new(&mut n, &[a, b]);
                n.old.insert(eta);
                stack.push(n);
            }
            Nnf::Next(a) => {
                n.old.insert(eta);
                n.next.insert(a);
                stack.push(n);
            }
            Nnf::Or(a, b) => {
                let mut other = n.clone();
                add_new(&mut n, &[a]);
                add_new(&mut other, &[b]);
                n.old.insert(eta);
                other.old.insert(eta);
                stack.push(other);
                stack.push(n);
            }
            Nnf::Until(a, b) => {
                let mut other = n.clone();
                add_new(&mut n, &[a]);
                n.next.insert(eta);
                add_new(&mut other, &[b]);
                n.old.insert(eta);
                other.old.insert(eta);
                stack.push(other);
                stack.push(n);
            }
            Nnf::Release(a, b) => {
                let mut other = n.clone();
                add_new(&mut n, &[b]);
                n.next.insert(eta);
                add_new(&mut other, &[a, b]);
                n.old.insert(eta);
                other.old.insert(eta);
                stack.push(other);
                stack.push(n);
            }
        }
    }

    // Generalized acceptance: one set per until subformula.
    let untils: Vec<(usize, usize)> = cl
        .nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| if let Nnf::Until(_, b) = n { Some((i, *b)) } else { None })
        .collect();
    let in_set = |node: &TableauNode, k: usize| {
        let (u, b) = untils[k];
        !node.old.contains(&u) || node.old.contains(&b)
    };
    let guard_of = |node: &TableauNode| {
        let mut g = Guard::default();
        for &x in &node.old {
            if let Nnf::Lit(b, p) = &cl.nodes[x] {
                if *b {
                    g.pos.push(p.clone());
                } else {
                    g.neg.push(p.clone());
                }
            }
        }
        g.pos.sort();
        g.neg.sort();
        g
    };
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); done.len()];
    let mut initial_nodes = Vec::new();
    for (i, node) in done.iter().enumerate() {
        for &m in &node.incoming {
            if m == INIT {
                initial_nodes.push(i);
            } else {
                succ[m].push(i);
            }
        }
    }

    // Degeneralize with a counter that advances greedily through the sets the
    // current node belongs to; a wrap-around marks an accepting state.
    let k = untils.len();
    let advance = |node: usize, c: usize| -> (bool, usize) {
        if k == 0 {
            return (true, 0);
        }
        let mut j = c;
        while j < k && in_set(&done[node], j) {
            j += 1;
        }
        if j == k {
            (true, 0)
        } else {
            (false, j)
        }
    };
    let mut ids: IndexSet<(usize, usize)> = IndexSet::new();
    let mut queue = VecDeque::new();
    let mut initial = Vec::new();
    for &n in &initial_nodes {
        let (i, fresh) = ids.insert_full((n, 0));
        if fresh {
            queue.push_back(i);
        }
        initial.push(i);
    }
    let mut transitions = Vec::new();
    let mut accepting = Vec::new();
    while let Some(i) = queue.pop_front() {
        let (node, c) = ids[i];
        let (acc, c2) = advance(node, c);
        if accepting.len() <= i {
            accepting.resize(i + 1, false);
        }
        accepting[i] = acc;
        let g = guard_of(&done[node]);
        for &m in &succ[node] {
            let (j, fresh) = ids.insert_full((m, c2));
            if fresh {
                queue.push_back(j);
            }
            transitions.push((i, g.clone(), j));
        }
    }
    accepting.resize(ids.len(), false);
    // States are discovered before they are processed, so every id was handled.
    let states = ids.iter().map(|(n, c)| if k > 1 { format!("n{n}/{c}") } else { format!("n{n}") }).collect();
    initial.sort_unstable();
    initial.dedup();
    BuchiAutomaton { states, transitions, initial, accepting }
}

// ---------------------------------------------------------------------------
// Process <-> automaton

/// Forward mapping: states, initial state and transitions carry over; the
/// accepting states are those labeled with `accept_prop`.
pub fn process_to_ba(p: &ProcessDef, accept_prop: &str) -> Result<BuchiAutomaton<Action>, BuchiError> {
    if !p.atomic_props.contains(accept_prop) {
        return Err(BuchiError::UnknownProposition(accept_prop.to_string()));
    }
    Ok(BuchiAutomaton {
        states: p.states.clone(),
        transitions: p.transitions.iter().map(|t| (t.source, t.action.clone(), t.target)).collect(),
        initial: vec![p.initial],
        accepting: p.labels.iter().map(|l| l.contains(accept_prop)).collect(),
    })
}

/// Proposition used by [`ba_to_process`] to mark accepting states.
pub const ACCEPT: &str = "accept";

/// Backward mapping. A fresh initial state with τ edges to every member of
/// `Q0` is added unless `|Q0| = 1`. Every symbol becomes an input.
pub fn ba_to_process(b: &BuchiAutomaton<Action>) -> ProcessDef {
    let mut states = b.states.clone();
    let mut transitions: Vec<Transition> =
        b.transitions.iter().map(|(s, a, t)| Transition { source: *s, action: a.clone(), target: *t }).collect();
    let mut labels: Vec<BTreeSet<String>> = b
        .accepting
        .iter()
        .map(|&acc| if acc { BTreeSet::from([ACCEPT.to_string()]) } else { BTreeSet::new() })
        .collect();
    let initial = if b.initial.len() == 1 {
        b.initial[0]
    } else {
        let fresh = states.len();
        let mut name = "init".to_string();
        while states.contains(&name) {
            name.push('\'');
        }
        states.push(name);
        labels.push(BTreeSet::new());
        for &q in &b.initial {
            transitions.push(Transition { source: fresh, action: Action::Internal, target: q });
        }
        fresh
    };
    let inputs = b.transitions.iter().filter(|(_, a, _)| !matches!(a, Action::Internal | Action::Timeout)).map(|(_, a, _)| a.clone()).collect();
    ProcessDef {
        id: "automaton".into(),
        atomic_props: BTreeSet::from([ACCEPT.to_string()]),
        inputs,
        outputs: BTreeSet::new(),
        states,
        initial,
        transitions,
        labels,
    }
}

// ---------------------------------------------------------------------------
// Emptiness

/// A graph explored on the fly by the emptiness checks.
pub trait ProductGraph {
    type Node: Clone + Eq + Hash;
    type Edge: Clone;

    fn initial(&self) -> Vec<Self::Node>;
    fn successors(&self, node: &Self::Node) -> Vec<(Self::Edge, Self::Node)>;
    fn is_accepting(&self, node: &Self::Node) -> bool;

    /// An accepting node from which every infinite continuation is accepted.
    fn is_universal(&self, _node: &Self::Node) -> bool {
        false
    }
}

/// A lasso-shaped path: `prefix` leads to `cycle[0].0` and the last edge of
/// `cycle` returns to it. Every element is a node with the edge taken from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lasso<N, E> {
    pub prefix: Vec<(N, E)>,
    pub cycle: Vec<(N, E)>,
    /// Position (in `prefix ++ cycle`) from which every continuation is a
    /// violation, when the run was cut short at a universal node.
    pub violation_point: Option<usize>,
}

impl<N, E> Lasso<N, E> {
    pub fn nodes(&self) -> impl Iterator<Item = &N> {
        self.prefix.iter().chain(&self.cycle).map(|(n, _)| n)
    }

    pub fn map<N2, E2>(self, mut fnode: impl FnMut(N) -> N2, mut fedge: impl FnMut(E) -> E2) -> Lasso<N2, E2> {
        Lasso {
            prefix: self.prefix.into_iter().map(|(n, e)| (fnode(n), fedge(e))).collect(),
            cycle: self.cycle.into_iter().map(|(n, e)| (fnode(n), fedge(e))).collect(),
            violation_point: self.violation_point,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Distinct product states stored.
    pub states: usize,
    /// Product edges traversed.
    pub transitions: usize,
    pub millis: u128,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SearchOutcome<N, E> {
    Found(Lasso<N, E>),
    Absent,
    LimitReached,
}

struct Frame<E> {
    id: usize,
    succ: Vec<(E, usize)>,
    next: usize,
    entered_by: Option<E>,
}

struct Store<G: ProductGraph> {
    nodes: IndexSet<G::Node>,
    blue: Vec<bool>,
    red: Vec<bool>,
    cyan: Vec<bool>,
}

impl<G: ProductGraph> Store<G> {
    fn intern(&mut self, n: G::Node) -> usize {
        let (i, fresh) = self.nodes.insert_full(n);
        if fresh {
            self.blue.push(false);
            self.red.push(false);
            self.cyan.push(false);
        }
        i
    }
}

/// Nested depth-first search for a reachable accepting cycle.
///
/// The outer search marks states on its stack; after an accepting state's
/// subtree is finished, the inner search from it looks for any state still on
/// the outer stack. Back edges from or to an accepting state on the stack are
/// reported during the outer search directly. Reaching a universal node ends
/// the search with that node's forced continuation as the cycle.
pub fn nested_dfs<G: ProductGraph>(g: &G, max_states: usize) -> (SearchOutcome<G::Node, G::Edge>, SearchStats) {
    let start = Instant::now();
    let mut store: Store<G> = Store { nodes: IndexSet::new(), blue: vec![], red: vec![], cyan: vec![] };
    let mut stats = SearchStats::default();

    let finish = |outcome, store: &Store<G>, mut stats: SearchStats| {
        stats.states = store.nodes.len();
        stats.millis = start.elapsed().as_millis();
        (outcome, stats)
    };

    let inits: Vec<usize> = g.initial().into_iter().map(|n| store.intern(n)).collect();
    for init in inits {
        if store.blue[init] {
            continue;
        }
        let mut stack: Vec<Frame<G::Edge>> = Vec::new();
        macro_rules! push {
            ($id:expr, $edge:expr) => {{
                let id = $id;
                store.blue[id] = true;
                store.cyan[id] = true;
                let node = store.nodes[id].clone();
                if g.is_universal(&node) {
                    stack.push(Frame { id, succ: Vec::new(), next: 0, entered_by: $edge });
                    let lasso = universal_lasso(g, &stack, &store, &mut stats);
                    return finish(SearchOutcome::Found(lasso), &store, stats);
                }
                let mut succ = Vec::new();
                for (e, n) in g.successors(&node) {
                    succ.push((e, store.intern(n)));
                }
                if store.nodes.len() > max_states {
                    return finish(SearchOutcome::LimitReached, &store, stats);
                }
                stack.push(Frame { id, succ, next: 0, entered_by: $edge });
            }};
        }
        push!(init, None);
        while let Some(top) = stack.last_mut() {
            if top.next < top.succ.len() {
                let (e, t) = top.succ[top.next].clone();
                top.next += 1;
                stats.transitions += 1;
                let here = top.id;
                if store.cyan[t] && (g.is_accepting(&store.nodes[here]) || g.is_accepting(&store.nodes[t])) {
                    let lasso = stack_cycle_lasso(&stack, &store, t, e);
                    return finish(SearchOutcome::Found(lasso), &store, stats);
                }
                if !store.blue[t] {
                    push!(t, Some(e));
                }
                continue;
            }
            let id = top.id;
            if g.is_accepting(&store.nodes[id]) {
                if let Some(path) = red_search(g, &mut store, id) {
                    let lasso = red_lasso(&stack, &store, path);
                    return finish(SearchOutcome::Found(lasso), &store, stats);
                }
            }
            store.cyan[id] = false;
            stack.pop();
        }
    }
    finish(SearchOutcome::Absent, &store, stats)
}

/// Inner search from `seed`; returns the edge path to a state on the outer stack.
fn red_search<G: ProductGraph>(g: &G, store: &mut Store<G>, seed: usize) -> Option<Vec<(usize, G::Edge)>> {
    let succ_ids = |store: &mut Store<G>, id: usize| -> Vec<(G::Edge, usize)> {
        let node = store.nodes[id].clone();
        g.successors(&node).into_iter().map(|(e, n)| (e, store.intern(n))).collect()
    };
    let mut stack: Vec<Frame<G::Edge>> = Vec::new();
    let succ = succ_ids(store, seed);
    stack.push(Frame { id: seed, succ, next: 0, entered_by: None });
    while let Some(top) = stack.last_mut() {
        if top.next < top.succ.len() {
            let (e, t) = top.succ[top.next].clone();
            top.next += 1;
            if store.cyan[t] {
                let mut path: Vec<(usize, G::Edge)> = Vec::new();
                for w in stack.windows(2) {
                    path.push((w[0].id, w[1].entered_by.clone().expect("inner frames record their edge")));
                }
                path.push((stack.last().unwrap().id, e));
                path.push((t, path.last().unwrap().1.clone()));
                return Some(path);
            }
            if !store.red[t] {
                store.red[t] = true;
                let succ = succ_ids(store, t);
                stack.push(Frame { id: t, succ, next: 0, entered_by: Some(e) });
            }
            continue;
        }
        stack.pop();
    }
    None
}

fn stack_path<G: ProductGraph>(stack: &[Frame<G::Edge>], store: &Store<G>, from: usize, to: usize) -> Vec<(G::Node, G::Edge)> {
    (from..to)
        .map(|i| (store.nodes[stack[i].id].clone(), stack[i + 1].entered_by.clone().expect("non-root frame")))
        .collect()
}

fn position_on_stack<E>(stack: &[Frame<E>], id: usize) -> usize {
    stack.iter().position(|f| f.id == id).expect("cyan state is on the stack")
}

fn stack_cycle_lasso<G: ProductGraph>(stack: &[Frame<G::Edge>], store: &Store<G>, target: usize, back: G::Edge) -> Lasso<G::Node, G::Edge> {
    let k = position_on_stack(stack, target);
    let prefix = stack_path(stack, store, 0, k);
    let mut cycle = stack_path(stack, store, k, stack.len() - 1);
    cycle.push((store.nodes[stack.last().unwrap().id].clone(), back));
    Lasso { prefix, cycle, violation_point: None }
}

fn red_lasso<G: ProductGraph>(stack: &[Frame<G::Edge>], store: &Store<G>, path: Vec<(usize, G::Edge)>) -> Lasso<G::Node, G::Edge> {
    // path: seed -> ... -> t, where t is on the outer stack and the last entry is t itself.
    let t = path.last().unwrap().0;
    let k = position_on_stack(stack, t);
    let prefix = stack_path(stack, store, 0, k);
    let mut cycle = stack_path(stack, store, k, stack.len() - 1);
    for (id, e) in &path[..path.len() - 1] {
        cycle.push((store.nodes[*id].clone(), e.clone()));
    }
    Lasso { prefix, cycle, violation_point: None }
}

/// The stack leads to a universal node; extend it by always taking the first
/// successor until a node repeats.
fn universal_lasso<G: ProductGraph>(g: &G, stack: &[Frame<G::Edge>], store: &Store<G>, stats: &mut SearchStats) -> Lasso<G::Node, G::Edge> {
    let mut prefix = stack_path(stack, store, 0, stack.len() - 1);
    let violation_point = Some(prefix.len());
    let mut walk: Vec<(G::Node, G::Edge)> = Vec::new();
    let mut seen: HashMap<G::Node, usize> = HashMap::new();
    let mut cur = store.nodes[stack.last().unwrap().id].clone();
    loop {
        if let Some(&i) = seen.get(&cur) {
            let cycle = walk.split_off(i);
            prefix.extend(walk);
            return Lasso { prefix, cycle, violation_point };
        }
        seen.insert(cur.clone(), walk.len());
        let (e, next) = g.successors(&cur).into_iter().next().expect("universal nodes have successors");
        stats.transitions += 1;
        walk.push((cur, e));
        cur = next;
    }
}

// ---------------------------------------------------------------------------
// Explicit graphs and the SCC oracle

/// A fully materialized graph with accepting marks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExplicitGraph {
    pub initial: Vec<usize>,
    pub edges: Vec<Vec<usize>>,
    pub accepting: Vec<bool>,
}

impl ProductGraph for ExplicitGraph {
    type Node = usize;
    type Edge = ();

    fn initial(&self) -> Vec<usize> {
        self.initial.clone()
    }

    fn successors(&self, n: &usize) -> Vec<((), usize)> {
        self.edges[*n].iter().map(|&t| ((), t)).collect()
    }

    fn is_accepting(&self, n: &usize) -> bool {
        self.accepting[*n]
    }
}

fn bfs_path(edges: &[Vec<usize>], sources: &[usize], allowed: impl Fn(usize) -> bool, goal: impl Fn(usize) -> bool) -> Option<Vec<usize>> {
    let mut parent: HashMap<usize, Option<usize>> = HashMap::new();
    let mut queue = VecDeque::new();
    for &s in sources {
        if allowed(s) && parent.insert(s, None).is_none() {
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        if goal(v) {
            let mut path = vec![v];
            let mut cur = v;
            while let Some(Some(p)) = parent.get(&cur) {
                path.push(*p);
                cur = *p;
            }
            path.reverse();
            return Some(path);
        }
        for &w in &edges[v] {
            if allowed(w) && !parent.contains_key(&w) {
                parent.insert(w, Some(v));
                queue.push_back(w);
            }
        }
    }
    None
}

/// Decides whether a reachable cycle passes through an accepting node by
/// strongly-connected-component decomposition.
pub fn scc_emptiness_oracle(g: &ExplicitGraph) -> Option<Lasso<usize, ()>> {
    let n = g.edges.len();
    let mut graph: DiGraph<(), ()> = DiGraph::with_capacity(n, 0);
    for _ in 0..n {
        graph.add_node(());
    }
    for (v, outs) in g.edges.iter().enumerate() {
        for &w in outs {
            graph.add_edge(NodeIndex::new(v), NodeIndex::new(w), ());
        }
    }
    let reachable = {
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = g.initial.clone();
        while let Some(v) = stack.pop() {
            if !std::mem::replace(&mut seen[v], true) {
                stack.extend(&g.edges[v]);
            }
        }
        seen
    };
    let mut component = vec![usize::MAX; n];
    let sccs = tarjan_scc(&graph);
    for (ci, scc) in sccs.iter().enumerate() {
        for v in scc {
            component[v.index()] = ci;
        }
    }
    for (ci, scc) in sccs.iter().enumerate() {
        let nontrivial = scc.len() > 1 || g.edges[scc[0].index()].contains(&scc[0].index());
        if !nontrivial {
            continue;
        }
        let Some(acc) = scc.iter().map(|v| v.index()).find(|&v| g.accepting[v] && reachable[v]) else {
            continue;
        };
        let to_acc = bfs_path(&g.edges, &g.initial, |_| true, |v| v == acc).expect("reachable");
        let inside = |v: usize| component[v] == ci;
        let back = g.edges[acc]
            .iter()
            .filter(|&&w| inside(w))
            .find_map(|&w| bfs_path(&g.edges, &[w], inside, |v| v == acc))
            .expect("nontrivial SCC has a cycle through each member");
        let prefix = to_acc[..to_acc.len() - 1].iter().map(|&v| (v, ())).collect();
        let mut cycle = vec![(acc, ())];
        cycle.extend(back[..back.len() - 1].iter().map(|&v| (v, ())));
        return Some(Lasso { prefix, cycle, violation_point: None });
    }
    None
}

/// Materializes every node reachable in `g`. Returns `None` if more than
/// `max_states` nodes are reachable.
pub fn materialize<G: ProductGraph>(g: &G, max_states: usize) -> Option<(ExplicitGraph, Vec<G::Node>)> {
    let mut ids: IndexSet<G::Node> = IndexSet::new();
    let mut edges: Vec<Vec<usize>> = Vec::new();
    let mut initial = Vec::new();
    for n in g.initial() {
        initial.push(ids.insert_full(n).0);
    }
    let mut i = 0;
    while i < ids.len() {
        let node = ids[i].clone();
        let mut outs = Vec::new();
        for (_, m) in g.successors(&node) {
            outs.push(ids.insert_full(m).0);
        }
        edges.push(outs);
        if ids.len() > max_states {
            return None;
        }
        i += 1;
    }
    let accepting = ids.iter().map(|n| g.is_accepting(n)).collect();
    Some((ExplicitGraph { initial, edges, accepting }, ids.into_iter().collect()))
}

// ---------------------------------------------------------------------------
// System × property product

/// A node of the system/property product.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProductState {
    pub state: CompositeState,
    pub automaton: usize,
}

/// The on-the-fly product of a composed system with a property automaton.
pub struct SystemProduct<'a> {
    system: &'a System,
    automaton: &'a BuchiAutomaton<Guard>,
    atoms: Vec<AtomEval>,
    /// Per automaton state: outgoing (positive atoms, negative atoms, target).
    out: Vec<Vec<(Vec<usize>, Vec<usize>, usize)>>,
    universal: Vec<bool>,
}

impl<'a> SystemProduct<'a> {
    pub fn new(system: &'a System, automaton: &'a BuchiAutomaton<Guard>) -> Result<Self, BuchiError> {
        let mut names: BTreeMap<String, usize> = BTreeMap::new();
        let mut atoms = Vec::new();
        let mut index = |p: &String, atoms: &mut Vec<AtomEval>| -> Result<usize, BuchiError> {
            if let Some(&i) = names.get(p) {
                return Ok(i);
            }
            let eval = system.atom(p).map_err(|e| match e {
                crate::kernel::ChannelError::UnknownChannel(c) => BuchiError::UnknownChannel(c),
                other => BuchiError::UnknownChannel(other.to_string()),
            })?;
            atoms.push(eval);
            names.insert(p.clone(), atoms.len() - 1);
            Ok(atoms.len() - 1)
        };
        let mut out = vec![Vec::new(); automaton.len()];
        for (q, g, q2) in &automaton.transitions {
            let pos = g.pos.iter().map(|p| index(p, &mut atoms)).collect::<Result<_, _>>()?;
            let neg = g.neg.iter().map(|p| index(p, &mut atoms)).collect::<Result<_, _>>()?;
            out[*q].push((pos, neg, *q2));
        }
        Ok(SystemProduct { system, automaton, atoms, out, universal: automaton.universal_states() })
    }

    pub fn system(&self) -> &System {
        self.system
    }

    pub fn automaton(&self) -> &BuchiAutomaton<Guard> {
        self.automaton
    }

    pub fn decode(&self, node: &(Box<[u8]>, u32)) -> ProductState {
        ProductState { state: self.system.decode(&node.0), automaton: node.1 as usize }
    }

    /// Processes enabled at a product node, as a bitmap over process indices.
    pub fn enabled_processes(&self, node: &(Box<[u8]>, u32)) -> Vec<bool> {
        let s = self.system.decode(&node.0);
        let mut out = vec![false; self.system.process_count()];
        for c in self.system.enabled_transitions(&s) {
            out[c.process] = true;
        }
        out
    }
}

impl ProductGraph for SystemProduct<'_> {
    type Node = (Box<[u8]>, u32);
    type Edge = Option<Choice>;

    fn initial(&self) -> Vec<Self::Node> {
        let s0 = self.system.initial_state().encode();
        self.automaton.initial.iter().map(|&q| (s0.clone(), q as u32)).collect()
    }

    fn successors(&self, node: &Self::Node) -> Vec<(Self::Edge, Self::Node)> {
        let state = self.system.decode(&node.0);
        let mut values: Vec<Option<bool>> = vec![None; self.atoms.len()];
        let mut val = |i: usize| *values[i].get_or_insert_with(|| self.atoms[i].holds(&state));
        let targets: Vec<u32> = self.out[node.1 as usize]
            .iter()
            .filter(|(pos, neg, _)| pos.iter().all(|&a| val(a)) && neg.iter().all(|&a| !val(a)))
            .map(|&(_, _, q)| q as u32)
            .collect();
        if targets.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (choice, next) in self.system.successors(&state) {
            let bytes = next.encode();
            for &q in &targets {
                out.push((choice, (bytes.clone(), q)));
            }
        }
        out
    }

    fn is_accepting(&self, node: &Self::Node) -> bool {
        self.automaton.accepting[node.1 as usize]
    }

    fn is_universal(&self, node: &Self::Node) -> bool {
        self.universal[node.1 as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub max_states: usize,
    /// Restrict to runs that are weakly fair towards every process.
    pub weak_fairness: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { max_states: DEFAULT_STATE_CAP, weak_fairness: false }
    }
}

/// Environment variable that overrides the default state cap.
pub const STATE_CAP_VAR: &str = "FAULTFORGE_STATE_CAP";

impl SearchOptions {
    /// Defaults, with the state cap taken from `FAULTFORGE_STATE_CAP` when it
    /// holds a positive integer.
    pub fn from_env() -> Self {
        let max_states = std::env::var(STATE_CAP_VAR)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(DEFAULT_STATE_CAP);
        SearchOptions { max_states, weak_fairness: false }
    }
}

pub type SystemLasso = Lasso<ProductState, Option<Choice>>;

#[derive(Clone, Debug)]
pub struct RunSearch {
    pub outcome: SearchOutcome<ProductState, Option<Choice>>,
    pub stats: SearchStats,
}

/// Searches the product of `system` with the automaton of a negated property
/// for an accepting run.
pub fn find_accepting_run(system: &System, negated_property: &BuchiAutomaton<Guard>, options: SearchOptions) -> Result<RunSearch, BuchiError> {
    let product = SystemProduct::new(system, negated_property)?;
    let (outcome, stats) = if options.weak_fairness {
        fair_search(&product, options.max_states)
    } else {
        nested_dfs(&product, options.max_states)
    };
    let outcome = match outcome {
        SearchOutcome::Found(l) => SearchOutcome::Found(l.map(|n| product.decode(&n), |e| e)),
        SearchOutcome::Absent => SearchOutcome::Absent,
        SearchOutcome::LimitReached => SearchOutcome::LimitReached,
    };
    Ok(RunSearch { outcome, stats })
}

/// Accepting-cycle search restricted to weakly fair runs: a process that is
/// enabled everywhere on the cycle must take a step on it.
///
/// The product is materialized and decomposed into SCCs. An SCC contains a
/// fair accepting cycle iff it is nontrivial, holds an accepting node, and
/// every process either moves inside it or is disabled somewhere in it; the
/// cycle then tours all those witnesses.
pub fn fair_search(p: &SystemProduct<'_>, max_states: usize) -> (SearchOutcome<(Box<[u8]>, u32), Option<Choice>>, SearchStats) {
    let start = Instant::now();
    let mut ids: IndexSet<(Box<[u8]>, u32)> = IndexSet::new();
    let mut edges: Vec<Vec<(Option<Choice>, usize)>> = Vec::new();
    let mut stats = SearchStats::default();
    let initial: Vec<usize> = p.initial().into_iter().map(|n| ids.insert_full(n).0).collect();
    let mut i = 0;
    while i < ids.len() {
        let node = ids[i].clone();
        let outs: Vec<_> = p.successors(&node).into_iter().map(|(e, m)| (e, ids.insert_full(m).0)).collect();
        stats.transitions += outs.len();
        edges.push(outs);
        if ids.len() > max_states {
            stats.states = ids.len();
            stats.millis = start.elapsed().as_millis();
            return (SearchOutcome::LimitReached, stats);
        }
        i += 1;
    }
    stats.states = ids.len();
    let n = ids.len();
    let mut graph: DiGraph<(), ()> = DiGraph::with_capacity(n, 0);
    for _ in 0..n {
        graph.add_node(());
    }
    for (v, outs) in edges.iter().enumerate() {
        for (_, w) in outs {
            graph.add_edge(NodeIndex::new(v), NodeIndex::new(*w), ());
        }
    }
    let plain: Vec<Vec<usize>> = edges.iter().map(|o| o.iter().map(|(_, w)| *w).collect()).collect();
    let procs = p.system().process_count();
    let mut component = vec![usize::MAX; n];
    let sccs = tarjan_scc(&graph);
    for (ci, scc) in sccs.iter().enumerate() {
        for v in scc {
            component[v.index()] = ci;
        }
    }
    for (ci, scc) in sccs.iter().enumerate() {
        let members: Vec<usize> = scc.iter().map(|v| v.index()).collect();
        let inside = |v: usize| component[v] == ci;
        let internal: Vec<(usize, Option<Choice>, usize)> = members
            .iter()
            .flat_map(|&v| edges[v].iter().filter(|(_, w)| inside(*w)).map(move |(e, w)| (v, *e, *w)))
            .collect();
        if internal.is_empty() {
            continue;
        }
        let Some(&acc) = members.iter().find(|&&v| p.is_accepting(&ids[v])) else {
            continue;
        };
        // One witness per process: a node where it is disabled, or an internal edge it takes.
        let mut waypoints: Vec<(usize, Option<(Option<Choice>, usize)>)> = vec![(acc, None)];
        let mut fair = true;
        for proc in 0..procs {
            if let Some(&v) = members.iter().find(|&&v| !p.enabled_processes(&ids[v])[proc]) {
                waypoints.push((v, None));
            } else if let Some(&(v, e, w)) = internal.iter().find(|(_, e, _)| e.map(|c| c.process) == Some(proc)) {
                waypoints.push((v, Some((e, w))));
            } else {
                fair = false;
                break;
            }
        }
        if !fair {
            continue;
        }
        let edge_between = |a: usize, b: usize| edges[a].iter().find(|(_, w)| *w == b).map(|(e, _)| *e).expect("edge exists");
        let to_acc = bfs_path(&plain, &initial, |_| true, |v| v == acc).expect("SCC nodes are reachable");
        let mut prefix = Vec::new();
        for w in to_acc.windows(2) {
            prefix.push((ids[w[0]].clone(), edge_between(w[0], w[1])));
        }
        // Tour: acc -> waypoint_1 -> ... -> waypoint_k -> acc, all inside the SCC.
        let mut cycle: Vec<((Box<[u8]>, u32), Option<Choice>)> = Vec::new();
        let mut cur = acc;
        let visit = |from: usize, to: usize, cycle: &mut Vec<_>| -> usize {
            let path = bfs_path(&plain, &[from], inside, |v| v == to).expect("strongly connected");
            for w in path.windows(2) {
                cycle.push((ids[w[0]].clone(), edge_between(w[0], w[1])));
            }
            to
        };
        for &(v, forced) in &waypoints[1..] {
            cur = visit(cur, v, &mut cycle);
            if let Some((e, w)) = forced {
                cycle.push((ids[v].clone(), e));
                cur = w;
            }
        }
        if cur != acc || cycle.is_empty() {
            if cur == acc {
                // acc must still lie on a nonempty cycle: leave through any internal edge.
                let &(e, w) = edges[acc].iter().find(|(_, w)| inside(*w)).expect("nontrivial SCC");
                cycle.push((ids[acc].clone(), e));
                cur = w;
            }
            visit(cur, acc, &mut cycle);
        }
        stats.millis = start.elapsed().as_millis();
        return (SearchOutcome::Found(Lasso { prefix, cycle, violation_point: None }), stats);
    }
    stats.millis = start.elapsed().as_millis();
    (SearchOutcome::Absent, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{ChannelDef, Component};
    use crate::ltl::{eval_word, parse_formula, word};

    fn ba(text: &str) -> BuchiAutomaton<Guard> {
        ltl_to_buchi(&parse_formula(text).unwrap())
    }

    #[test]
    fn always_p_is_single_state() {
        let a = ba("G p");
        assert_eq!(a.len(), 1);
        assert!(a.accepting[0]);
        assert_eq!(a.transitions, vec![(0, Guard { pos: vec!["p".into()], neg: vec![] }, 0)]);
    }

    #[test]
    fn eventually_p_language() {
        let a = ba("F p");
        assert!(a.accepts_word(&word(&[&[], &[]], &[&["p"], &[]])));
        assert!(!a.accepts_word(&word(&[&["q"]], &[&[]])));
        assert!(a.len() <= 3);
    }

    #[test]
    fn contradiction_is_empty() {
        let a = ba("p && !p");
        assert!(a.transitions.is_empty() || !a.accepts_word(&word(&[], &[&["p"]])));
        let g = ExplicitGraph {
            initial: a.initial.clone(),
            edges: (0..a.len()).map(|q| a.transitions.iter().filter(|t| t.0 == q).map(|t| t.2).collect()).collect(),
            accepting: a.accepting.clone(),
        };
        assert!(scc_emptiness_oracle(&g).is_none());
    }

    #[test]
    fn closure_bound_holds() {
        for text in ["G p", "F p", "p U q U r", "G (a -> F b)", "X (a U !b) && G F c"] {
            let f = parse_formula(text).unwrap();
            assert!(ba(text).len() <= 1 << closure_size(&f), "{text}");
        }
    }

    #[test]
    fn translation_agrees_on_small_words() {
        let formulas = ["p U q", "G F p", "F G p", "X !p", "G (p -> X q)", "!(p U q)"];
        let letters: [&[&str]; 4] = [&[], &["p"], &["q"], &["p", "q"]];
        for text in formulas {
            let f = parse_formula(text).unwrap();
            let a = ltl_to_buchi(&f);
            for x in letters {
                for y in letters {
                    for z in letters {
                        let w = word(&[x], &[y, z]);
                        assert_eq!(a.accepts_word(&w), eval_word(&f, &w, 0), "{text} on {w:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn process_mapping_examples() {
        let ch = ChannelDef::new("c", &["A", "B"], 1);
        let drop = crate::gadgets::build_drop(&ch, 1).unwrap();
        let b = process_to_ba(&drop.process, "done").unwrap();
        assert_eq!(b.len(), drop.process.states.len());
        let end = drop.end_state();
        assert_eq!(b.accepting.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i).collect::<Vec<_>>(), vec![end]);
        assert!(matches!(process_to_ba(&drop.process, "nope"), Err(BuchiError::UnknownProposition(_))));

        let single = BuchiAutomaton { states: vec!["a".into(), "b".into()], transitions: vec![], initial: vec![0], accepting: vec![false, true] };
        assert_eq!(ba_to_process(&single).states.len(), 2);
        let triple = BuchiAutomaton { states: vec!["a".into(), "b".into(), "c".into()], transitions: vec![], initial: vec![0, 1, 2], accepting: vec![false; 3] };
        let p = ba_to_process(&triple);
        assert_eq!(p.states.len(), 4);
        assert_eq!(p.transitions.iter().filter(|t| t.source == p.initial && t.action == Action::Internal).count(), 3);
        p.validate().unwrap();
    }

    #[test]
    fn oracle_examples() {
        let cyc = ExplicitGraph { initial: vec![0], edges: vec![vec![1], vec![2], vec![1]], accepting: vec![false, true, false] };
        assert!(scc_emptiness_oracle(&cyc).is_some());
        let dag = ExplicitGraph { initial: vec![0], edges: vec![vec![1, 2], vec![2], vec![]], accepting: vec![true, true, true] };
        assert!(scc_emptiness_oracle(&dag).is_none());
        let off = ExplicitGraph { initial: vec![0], edges: vec![vec![1], vec![2], vec![2]], accepting: vec![false, true, false] };
        assert!(scc_emptiness_oracle(&off).is_none());
        assert!(matches!(nested_dfs(&off, 100).0, SearchOutcome::Absent));
        assert!(matches!(nested_dfs(&cyc, 100).0, SearchOutcome::Found(_)));
    }

    #[test]
    fn single_process_lasso_for_always() {
        let mut labels = vec![BTreeSet::new()];
        labels[0].insert("p".to_string());
        let proc_ = ProcessDef::from_parts(
            "P",
            vec!["s".into(), "t".into()],
            0,
            vec![Transition { source: 0, action: Action::Internal, target: 1 }, Transition { source: 1, action: Action::Internal, target: 0 }],
            vec![labels[0].clone(), labels[0].clone()],
        );
        let sys = System::compose(vec![], vec![Component::base(proc_)]).unwrap();
        let a = ba("G p");
        let r = find_accepting_run(&sys, &a, SearchOptions::default()).unwrap();
        let SearchOutcome::Found(l) = r.outcome else { panic!("expected a run") };
        assert!(l.prefix.is_empty());
        assert_eq!(l.cycle.len(), 2);

        let empty = ba("p && !p");
        let r = find_accepting_run(&sys, &empty, SearchOptions::default()).unwrap();
        assert_eq!(r.outcome, SearchOutcome::Absent);
    }
}
