//! Drop, replay and reorder gadgets: finite processes attached to a victim
//! channel that inject at most `limit` faults.
//!
//! Every gadget state is enumerated explicitly, including states that are not
//! reachable from the initial one, so the state set has the closed-form size
//! given by the construction. Skip-tracking (`skip(c)` only fires when the
//! victim length changed since the previous skip) lives in the kernel, not in
//! the control states listed here.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Action, ChannelDef, Message, ProcessDef, Transition};

/// Proposition marking a gadget's `End` state.
pub const DONE: &str = "done";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GadgetKind {
    Drop,
    Replay,
    Reorder,
}

impl GadgetKind {
    pub const ALL: [GadgetKind; 3] = [GadgetKind::Drop, GadgetKind::Replay, GadgetKind::Reorder];

    pub fn name(self) -> &'static str {
        match self {
            GadgetKind::Drop => "drop",
            GadgetKind::Replay => "replay",
            GadgetKind::Reorder => "reorder",
        }
    }
}

impl fmt::Display for GadgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GadgetKind {
    type Err = GadgetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "drop" => Ok(GadgetKind::Drop),
            "replay" => Ok(GadgetKind::Replay),
            "reorder" => Ok(GadgetKind::Reorder),
            _ => Err(GadgetError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GadgetConfig {
    pub kind: GadgetKind,
    pub victim: String,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GadgetError {
    #[error("fault limit must be at least 1 (got {0})")]
    InvalidLimit(usize),
    #[error("unknown gadget kind {0:?}")]
    UnknownKind(String),
}

/// Structured view of one gadget control state. Memories hold indices into
/// the victim channel's domain.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GadgetState {
    Main { budget: usize },
    Init,
    Consume { budget: usize, memory: Vec<usize> },
    /// `budget` is `None` for the reorder gadget, whose replay phase has no counter.
    Replay { budget: Option<usize>, memory: Vec<usize> },
    End,
}

impl GadgetState {
    pub fn memory(&self) -> &[usize] {
        match self {
            GadgetState::Consume { memory, .. } | GadgetState::Replay { memory, .. } => memory,
            _ => &[],
        }
    }

    pub fn budget(&self) -> Option<usize> {
        match self {
            GadgetState::Main { budget } | GadgetState::Consume { budget, .. } => Some(*budget),
            GadgetState::Replay { budget, .. } => *budget,
            _ => None,
        }
    }

    fn name(&self, domain: &[Message]) -> String {
        let mem = |m: &[usize]| m.iter().map(|&i| domain[i].as_str()).collect::<Vec<_>>().join(",");
        match self {
            GadgetState::Main { budget } => format!("Main({budget})"),
            GadgetState::Init => "Init".into(),
            GadgetState::Consume { budget, memory } => format!("Consume({budget},[{}])", mem(memory)),
            GadgetState::Replay { budget: Some(n), memory } => format!("Replay({n},[{}])", mem(memory)),
            GadgetState::Replay { budget: None, memory } => format!("Replay([{}])", mem(memory)),
            GadgetState::End => "End".into(),
        }
    }
}

/// A constructed gadget: the process plus a structured view of its states
/// (`layout[i]` describes `process.states[i]`).
#[derive(Clone, Debug)]
pub struct Gadget {
    pub config: GadgetConfig,
    pub process: ProcessDef,
    pub layout: Vec<GadgetState>,
}

impl Gadget {
    pub fn end_state(&self) -> usize {
        self.layout.iter().position(|s| *s == GadgetState::End).expect("every gadget has End")
    }
}

/// `|Buf_ℓ(M)|`: number of sequences over `M` of length at most `limit`.
pub fn memory_count(domain_size: usize, limit: usize) -> usize {
    (0..=limit).map(|i| domain_size.pow(i as u32)).sum()
}

/// All sequences over `0..domain_size` of length at most `limit`, shortest first.
pub fn memories(domain_size: usize, limit: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..limit {
        let mut next = Vec::new();
        for prefix in &frontier {
            for m in 0..domain_size {
                let mut seq: Vec<usize> = prefix.clone();
                seq.push(m);
                next.push(seq);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// `b \ m`: removes the head-most occurrence of `m`.
fn remove_first(memory: &[usize], m: usize) -> Vec<usize> {
    let mut out = memory.to_vec();
    if let Some(pos) = out.iter().position(|&x| x == m) {
        out.remove(pos);
    }
    out
}

fn distinct(memory: &[usize]) -> Vec<usize> {
    let mut seen = Vec::new();
    for &m in memory {
        if !seen.contains(&m) {
            seen.push(m);
        }
    }
    seen
}

struct Builder<'a> {
    channel: &'a ChannelDef,
    layout: Vec<GadgetState>,
    transitions: Vec<Transition>,
    seen: HashSet<(usize, Action, usize)>,
}

impl<'a> Builder<'a> {
    fn new(channel: &'a ChannelDef, layout: Vec<GadgetState>) -> Self {
        Builder { channel, layout, transitions: Vec::new(), seen: HashSet::new() }
    }

    fn idx(&self, s: &GadgetState) -> usize {
        self.layout.iter().position(|x| x == s).expect("state enumerated")
    }

    fn msg(&self, m: usize) -> &str {
        self.channel.domain[m].as_str()
    }

    fn add(&mut self, from: &GadgetState, action: Action, to: &GadgetState) {
        let (s, t) = (self.idx(from), self.idx(to));
        if self.seen.insert((s, action.clone(), t)) {
            self.transitions.push(Transition { source: s, action, target: t });
        }
    }

    fn finish(self, config: GadgetConfig) -> Gadget {
        let domain = &self.channel.domain;
        let states: Vec<String> = self.layout.iter().map(|s| s.name(domain)).collect();
        let labels = self
            .layout
            .iter()
            .map(|s| if *s == GadgetState::End { BTreeSet::from([DONE.to_string()]) } else { BTreeSet::new() })
            .collect();
        let initial = match config.kind {
            GadgetKind::Drop => self.idx(&GadgetState::Main { budget: config.limit }),
            GadgetKind::Replay => self.idx(&GadgetState::Consume { budget: config.limit, memory: vec![] }),
            GadgetKind::Reorder => self.idx(&GadgetState::Init),
        };
        let id = format!("{}({})", config.kind, config.victim);
        let mut process = ProcessDef::from_parts(id, states, initial, self.transitions, labels);
        // Declared interfaces, independent of which transitions happen to exist.
        let (send, recv, peek) = channel_interface(self.channel);
        let skip = Action::skip(&self.channel.id);
        process.atomic_props = BTreeSet::from([DONE.to_string()]);
        process.inputs = match config.kind {
            GadgetKind::Drop | GadgetKind::Reorder => recv,
            GadgetKind::Replay => peek,
        };
        process.inputs.insert(skip);
        process.outputs = match config.kind {
            GadgetKind::Drop => BTreeSet::new(),
            GadgetKind::Replay | GadgetKind::Reorder => send,
        };
        Gadget { config, process, layout: self.layout }
    }
}

fn check_limit(limit: usize) -> Result<(), GadgetError> {
    if limit < 1 {
        Err(GadgetError::InvalidLimit(limit))
    } else {
        Ok(())
    }
}

/// Drop gadget: silently consumes up to `limit` messages from the channel.
pub fn build_drop(channel: &ChannelDef, limit: usize) -> Result<Gadget, GadgetError> {
    check_limit(limit)?;
    let mut layout: Vec<GadgetState> = (0..=limit).map(|budget| GadgetState::Main { budget }).collect();
    layout.push(GadgetState::End);
    let mut b = Builder::new(channel, layout);
    let c = channel.id.as_str();
    for n in (0..=limit).rev() {
        let here = GadgetState::Main { budget: n };
        if n > 0 {
            for m in 0..channel.domain.len() {
                b.add(&here, Action::recv(c, b.msg(m)), &GadgetState::Main { budget: n - 1 });
            }
        }
        b.add(&here, Action::skip(c), &here);
        b.add(&here, Action::Internal, &GadgetState::End);
    }
    b.add(&GadgetState::End, Action::Internal, &GadgetState::End);
    Ok(b.finish(GadgetConfig { kind: GadgetKind::Drop, victim: channel.id.clone(), limit }))
}

/// Replay gadget: copies messages off the channel head and later re-sends them.
pub fn build_replay(channel: &ChannelDef, limit: usize) -> Result<Gadget, GadgetError> {
    check_limit(limit)?;
    let mems = memories(channel.domain.len(), limit);
    let mut layout = Vec::new();
    for budget in (0..=limit).rev() {
        for memory in &mems {
            layout.push(GadgetState::Consume { budget, memory: memory.clone() });
        }
    }
    for budget in (0..=limit).rev() {
        for memory in &mems {
            layout.push(GadgetState::Replay { budget: Some(budget), memory: memory.clone() });
        }
    }
    layout.push(GadgetState::End);
    let mut b = Builder::new(channel, layout);
    let c = channel.id.as_str();
    let end = GadgetState::End;

    for n in (0..=limit).rev() {
        for mem in &mems {
            let here = GadgetState::Consume { budget: n, memory: mem.clone() };
            if mem.len() < limit {
                for m in 0..channel.domain.len() {
                    let mut grown = mem.clone();
                    grown.push(m);
                    if n > 1 {
                        b.add(&here, Action::peek(c, b.msg(m)), &GadgetState::Consume { budget: n - 1, memory: grown.clone() });
                    }
                    if n >= 1 {
                        b.add(&here, Action::peek(c, b.msg(m)), &GadgetState::Replay { budget: Some(limit), memory: grown });
                    }
                }
                if n == 0 {
                    b.add(&here, Action::Internal, &GadgetState::Replay { budget: Some(limit), memory: mem.clone() });
                }
            }
            b.add(&here, Action::skip(c), &here);
        }
    }

    for n in (0..=limit).rev() {
        for mem in &mems {
            let here = GadgetState::Replay { budget: Some(n), memory: mem.clone() };
            for m in distinct(mem) {
                let shrunk = remove_first(mem, m);
                // Replay decrements the budget, so it needs one left.
                if n >= 1 {
                    b.add(&here, Action::send(c, b.msg(m)), &GadgetState::Replay { budget: Some(n - 1), memory: shrunk.clone() });
                }
                b.add(&here, Action::send(c, b.msg(m)), &here);
                b.add(&here, Action::Internal, &GadgetState::Replay { budget: Some(n), memory: shrunk });
            }
            b.add(&here, Action::skip(c), &here);
            // Terminate; Empty-ε and Empty-ℓ coincide with it as transitions.
            b.add(&here, Action::Internal, &end);
        }
    }
    b.add(&end, Action::Internal, &end);
    Ok(b.finish(GadgetConfig { kind: GadgetKind::Replay, victim: channel.id.clone(), limit }))
}

/// Reorder gadget: destructively captures `limit` consecutive messages and
/// re-sends them in any order. It preempts other receivers on the channel.
pub fn build_reorder(channel: &ChannelDef, limit: usize) -> Result<Gadget, GadgetError> {
    check_limit(limit)?;
    let mems = memories(channel.domain.len(), limit);
    let mut layout = vec![GadgetState::Init];
    for budget in (0..=limit).rev() {
        for memory in &mems {
            layout.push(GadgetState::Consume { budget, memory: memory.clone() });
        }
    }
    for memory in &mems {
        layout.push(GadgetState::Replay { budget: None, memory: memory.clone() });
    }
    layout.push(GadgetState::End);
    let mut b = Builder::new(channel, layout);
    let c = channel.id.as_str();
    let end = GadgetState::End;

    b.add(&GadgetState::Init, Action::skip(c), &GadgetState::Init);
    b.add(&GadgetState::Init, Action::Internal, &GadgetState::Consume { budget: limit, memory: vec![] });
    for n in (0..=limit).rev() {
        for mem in &mems {
            if mem.len() >= limit {
                continue;
            }
            let here = GadgetState::Consume { budget: n, memory: mem.clone() };
            for m in 0..channel.domain.len() {
                let mut grown = mem.clone();
                grown.push(m);
                if n > 1 {
                    b.add(&here, Action::recv(c, b.msg(m)), &GadgetState::Consume { budget: n - 1, memory: grown });
                } else if n == 1 {
                    b.add(&here, Action::recv(c, b.msg(m)), &GadgetState::Replay { budget: None, memory: grown });
                }
            }
        }
    }
    for mem in &mems {
        let here = GadgetState::Replay { budget: None, memory: mem.clone() };
        for m in distinct(mem) {
            b.add(&here, Action::send(c, b.msg(m)), &GadgetState::Replay { budget: None, memory: remove_first(mem, m) });
        }
        if mem.is_empty() {
            b.add(&here, Action::Internal, &end);
        }
    }
    b.add(&end, Action::Internal, &end);
    Ok(b.finish(GadgetConfig { kind: GadgetKind::Reorder, victim: channel.id.clone(), limit }))
}

pub fn build(kind: GadgetKind, channel: &ChannelDef, limit: usize) -> Result<Gadget, GadgetError> {
    match kind {
        GadgetKind::Drop => build_drop(channel, limit),
        GadgetKind::Replay => build_replay(channel, limit),
        GadgetKind::Reorder => build_reorder(channel, limit),
    }
}

/// `(Send(c), Recv(c), Peek(c))`.
pub fn channel_interface(channel: &ChannelDef) -> (BTreeSet<Action>, BTreeSet<Action>, BTreeSet<Action>) {
    let c = channel.id.as_str();
    let each = |f: fn(&str, &str) -> Action| channel.domain.iter().map(|m| f(c, m.as_str())).collect();
    (each(Action::send), each(Action::recv), each(Action::peek))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chan(m: usize) -> ChannelDef {
        let names = ["SYN", "FIN", "ACK"];
        ChannelDef::new("c", &names[..m], 2)
    }

    #[test]
    fn drop_shape() {
        let g = build_drop(&chan(3), 1).unwrap();
        assert_eq!(g.process.states.len(), 3);
        let drops = g.process.transitions.iter().filter(|t| matches!(t.action, Action::Recv { .. })).count();
        assert_eq!(drops, 3);
        assert!(g.process.outputs.is_empty());
        assert_eq!(g.process.states[g.process.initial], "Main(1)");
        g.process.validate().unwrap();
    }

    #[test]
    fn replay_shape() {
        let g = build_replay(&chan(3), 1).unwrap();
        assert_eq!(memory_count(3, 1), 4);
        assert_eq!(g.process.states.len(), 17);
        assert_eq!(g.process.states[g.process.initial], "Consume(1,[])");
        g.process.validate().unwrap();
    }

    #[test]
    fn replay_budget_one_forces_phase_change() {
        let g = build_replay(&chan(3), 2).unwrap();
        let here = g.layout.iter().position(|s| *s == GadgetState::Consume { budget: 1, memory: vec![0] }).unwrap();
        for t in g.process.transitions.iter().filter(|t| t.source == here && matches!(t.action, Action::Peek { .. })) {
            assert!(matches!(g.layout[t.target], GadgetState::Replay { .. }));
        }
        let two = g.layout.iter().position(|s| *s == GadgetState::Consume { budget: 2, memory: vec![] }).unwrap();
        let peeks: Vec<_> = g
            .process
            .transitions
            .iter()
            .filter(|t| t.source == two && t.action == Action::peek("c", "SYN"))
            .map(|t| g.layout[t.target].clone())
            .collect();
        assert_eq!(peeks.len(), 2, "Observe and Observe-then-replay are both available");
    }

    #[test]
    fn replay_empty_memory_can_end() {
        let g = build_replay(&chan(3), 1).unwrap();
        let end = g.end_state();
        for (i, s) in g.layout.iter().enumerate() {
            if let GadgetState::Replay { memory, .. } = s {
                if memory.is_empty() {
                    assert!(g.process.transitions.iter().any(|t| t.source == i && t.target == end && t.action == Action::Internal));
                }
            }
        }
    }

    #[test]
    fn reorder_shape() {
        let g = build_reorder(&chan(3), 2).unwrap();
        assert_eq!(memory_count(3, 2), 13);
        assert_eq!(g.process.states.len(), 54);
        g.process.validate().unwrap();
        let empty = g.layout.iter().position(|s| *s == GadgetState::Replay { budget: None, memory: vec![] }).unwrap();
        let outs: Vec<_> = g.process.transitions.iter().filter(|t| t.source == empty).collect();
        assert_eq!(outs.len(), 1);
        assert_eq!(outs[0].target, g.end_state());
    }

    #[test]
    fn reorder_replays_either_order() {
        let g = build_reorder(&chan(3), 2).unwrap();
        let full = g.layout.iter().position(|s| *s == GadgetState::Replay { budget: None, memory: vec![0, 1] }).unwrap();
        let sends: BTreeSet<_> = g.process.transitions.iter().filter(|t| t.source == full).map(|t| t.action.clone()).collect();
        assert_eq!(sends, BTreeSet::from([Action::send("c", "SYN"), Action::send("c", "FIN")]));
    }

    #[test]
    fn zero_limit_rejected() {
        for kind in GadgetKind::ALL {
            assert_eq!(build(kind, &chan(2), 0).unwrap_err(), GadgetError::InvalidLimit(0));
        }
    }

    #[test]
    fn interface_sizes() {
        let (s, r, p) = channel_interface(&chan(3));
        assert_eq!((s.len(), r.len(), p.len()), (3, 3, 3));
        let (s, r, p) = channel_interface(&chan(1));
        assert_eq!((s.len(), r.len(), p.len()), (1, 1, 1));
    }

    #[test]
    fn gadget_actions_stay_inside_channel_interface() {
        let ch = chan(3);
        let (s, r, p) = channel_interface(&ch);
        for kind in GadgetKind::ALL {
            let g = build(kind, &ch, 2).unwrap();
            for a in g.process.inputs.iter().chain(&g.process.outputs) {
                assert!(s.contains(a) || r.contains(a) || p.contains(a) || *a == Action::skip("c"), "{a}");
            }
        }
    }

    #[test]
    fn budget_only_grows_on_phase_reset() {
        for kind in GadgetKind::ALL {
            let g = build(kind, &chan(3), 2).unwrap();
            for t in &g.process.transitions {
                let (from, to) = (&g.layout[t.source], &g.layout[t.target]);
                if *to == GadgetState::End {
                    continue;
                }
                let delta = to.memory().len() as isize - from.memory().len() as isize;
                assert!(delta.abs() <= 1);
                if let (Some(a), Some(b)) = (from.budget(), to.budget()) {
                    if b > a {
                        let reset = matches!(from, GadgetState::Consume { .. }) && matches!(to, GadgetState::Replay { .. });
                        assert!(reset && b == 2, "{kind}: {} -> {}", g.process.states[t.source], g.process.states[t.target]);
                    }
                }
            }
        }
    }
}
