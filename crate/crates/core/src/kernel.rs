//! Executable semantics for processes, FIFO channels and their asynchronous
//! composition.
//!
//! Channels are not processes here: a [`CompositeState`] carries one buffer per
//! declared channel and `c!m`, `c?m`, `c?<m>` are guarded local moves of the
//! acting process. Interaction between processes happens only through those
//! buffers.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A message value. Tuple-shaped messages such as `DATA(0,1)` are stored in
/// canonical form, so equality is componentwise.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Message(pub String);

impl Message {
    pub fn new(name: impl Into<String>) -> Self {
        Message(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Message {
    fn from(s: &str) -> Self {
        Message(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Send,
    Recv,
    Peek,
    Internal,
    Timeout,
    Skip,
}

/// Transition label. `Internal` is the silent action τ. `Timeout` is a silent
/// action that is only enabled when no other move of any process is.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Action {
    Send { channel: String, message: Message },
    Recv { channel: String, message: Message },
    Peek { channel: String, message: Message },
    Internal,
    Timeout,
    Skip { channel: String },
}

impl Action {
    pub fn send(channel: &str, message: &str) -> Self {
        Action::Send { channel: channel.into(), message: message.into() }
    }

    pub fn recv(channel: &str, message: &str) -> Self {
        Action::Recv { channel: channel.into(), message: message.into() }
    }

    pub fn peek(channel: &str, message: &str) -> Self {
        Action::Peek { channel: channel.into(), message: message.into() }
    }

    pub fn skip(channel: &str) -> Self {
        Action::Skip { channel: channel.into() }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Send { .. } => ActionKind::Send,
            Action::Recv { .. } => ActionKind::Recv,
            Action::Peek { .. } => ActionKind::Peek,
            Action::Internal => ActionKind::Internal,
            Action::Timeout => ActionKind::Timeout,
            Action::Skip { .. } => ActionKind::Skip,
        }
    }

    pub fn channel(&self) -> Option<&str> {
        match self {
            Action::Send { channel, .. }
            | Action::Recv { channel, .. }
            | Action::Peek { channel, .. }
            | Action::Skip { channel } => Some(channel),
            Action::Internal | Action::Timeout => None,
        }
    }

    pub fn message(&self) -> Option<&Message> {
        match self {
            Action::Send { message, .. }
            | Action::Recv { message, .. }
            | Action::Peek { message, .. } => Some(message),
            Action::Internal | Action::Timeout | Action::Skip { .. } => None,
        }
    }

    /// Output actions are sends; everything else except τ is an input.
    pub fn is_output(&self) -> bool {
        matches!(self, Action::Send { .. })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Send { channel, message } => write!(f, "{channel}!{message}"),
            Action::Recv { channel, message } => write!(f, "{channel}?{message}"),
            Action::Peek { channel, message } => write!(f, "{channel}?<{message}>"),
            Action::Internal => f.write_str("tau"),
            Action::Timeout => f.write_str("timeout"),
            Action::Skip { channel } => write!(f, "skip({channel})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub source: usize,
    pub action: Action,
    pub target: usize,
}

/// A labeled transition system with an input/output split on its actions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessDef {
    pub id: String,
    pub atomic_props: BTreeSet<String>,
    pub inputs: BTreeSet<Action>,
    pub outputs: BTreeSet<Action>,
    pub states: Vec<String>,
    pub initial: usize,
    pub transitions: Vec<Transition>,
    pub labels: Vec<BTreeSet<String>>,
}

impl ProcessDef {
    /// Builds a process whose interface is inferred from its transitions:
    /// sends are outputs, receives, peeks and skips are inputs, and the
    /// proposition set is the union of all labels.
    pub fn from_parts(
        id: impl Into<String>,
        states: Vec<String>,
        initial: usize,
        transitions: Vec<Transition>,
        labels: Vec<BTreeSet<String>>,
    ) -> Self {
        let mut inputs = BTreeSet::new();
        let mut outputs = BTreeSet::new();
        for t in &transitions {
            match t.action {
                Action::Internal | Action::Timeout => {}
                Action::Send { .. } => {
                    outputs.insert(t.action.clone());
                }
                _ => {
                    inputs.insert(t.action.clone());
                }
            }
        }
        let atomic_props = labels.iter().flatten().cloned().collect();
        ProcessDef {
            id: id.into(),
            atomic_props,
            inputs,
            outputs,
            states,
            initial,
            transitions,
            labels,
        }
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |reason: String| KernelError::InvalidProcess { process: self.id.clone(), reason };
        if let Some(a) = self.inputs.intersection(&self.outputs).next() {
            return Err(bad(format!("action {a} is both an input and an output")));
        }
        let silent = [Action::Internal, Action::Timeout];
        if silent.iter().any(|a| self.inputs.contains(a) || self.outputs.contains(a)) {
            return Err(bad("tau and timeout may not appear in the input or output set".into()));
        }
        if self.initial >= self.states.len() {
            return Err(bad("initial state out of range".into()));
        }
        if self.labels.len() != self.states.len() {
            return Err(bad("labeling is not total over states".into()));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(p) = l.iter().find(|p| !self.atomic_props.contains(*p)) {
                return Err(bad(format!("state {} labeled with undeclared proposition {p}", self.states[i])));
            }
        }
        for t in &self.transitions {
            if t.source >= self.states.len() || t.target >= self.states.len() {
                return Err(bad("transition endpoint out of range".into()));
            }
            let declared = match t.action {
                Action::Internal | Action::Timeout => true,
                _ => self.inputs.contains(&t.action) || self.outputs.contains(&t.action),
            };
            if !declared {
                return Err(bad(format!("action {} is not in I or O", t.action)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDef {
    pub id: String,
    pub domain: Vec<Message>,
    pub capacity: usize,
}

impl ChannelDef {
    pub fn new(id: impl Into<String>, domain: &[&str], capacity: usize) -> Self {
        ChannelDef {
            id: id.into(),
            domain: domain.iter().map(|m| Message::new(*m)).collect(),
            capacity,
        }
    }

    pub fn message_index(&self, m: &Message) -> Option<usize> {
        self.domain.iter().position(|d| d == m)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.domain.is_empty() {
            return Err(KernelError::InvalidChannel { channel: self.id.clone(), reason: "empty message domain".into() });
        }
        if self.capacity == 0 {
            return Err(KernelError::InvalidChannel { channel: self.id.clone(), reason: "capacity must be at least 1".into() });
        }
        if self.capacity > u8::MAX as usize || self.domain.len() > u16::MAX as usize {
            return Err(KernelError::InvalidChannel { channel: self.id.clone(), reason: "channel too large".into() });
        }
        let distinct: BTreeSet<_> = self.domain.iter().collect();
        if distinct.len() != self.domain.len() {
            return Err(KernelError::InvalidChannel { channel: self.id.clone(), reason: "duplicate message in domain".into() });
        }
        Ok(())
    }
}

/// FIFO contents of one channel, as indices into the channel's domain.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelBuffer {
    pub contents: Vec<u16>,
}

impl ChannelBuffer {
    pub fn len(&self) -> usize {
        self.contents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contents.is_empty()
    }

    pub fn head(&self) -> Option<u16> {
        self.contents.first().copied()
    }
}

/// Product state: one local state per process, one skip tracker per process
/// (the victim length observed at its last `skip`), and one buffer per channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompositeState {
    pub locals: Vec<u32>,
    pub trackers: Vec<u8>,
    pub buffers: Vec<ChannelBuffer>,
}

impl CompositeState {
    /// Canonical byte serialization. The arity of every section is fixed by
    /// the system, so only buffer lengths need to be written.
    pub fn encode(&self) -> Box<[u8]> {
        let mut out = Vec::with_capacity(self.locals.len() * 4 + self.trackers.len() + self.buffers.len() * 3);
        for l in &self.locals {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&self.trackers);
        for b in &self.buffers {
            out.push(b.contents.len() as u8);
            for m in &b.contents {
                out.extend_from_slice(&m.to_le_bytes());
            }
        }
        out.into_boxed_slice()
    }

    pub fn decode(bytes: &[u8], processes: usize, channels: usize) -> CompositeState {
        let mut pos = 0;
        let mut locals = Vec::with_capacity(processes);
        for _ in 0..processes {
            locals.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
        let trackers = bytes[pos..pos + processes].to_vec();
        pos += processes;
        let mut buffers = Vec::with_capacity(channels);
        for _ in 0..channels {
            let n = bytes[pos] as usize;
            pos += 1;
            let mut contents = Vec::with_capacity(n);
            for _ in 0..n {
                contents.push(u16::from_le_bytes([bytes[pos], bytes[pos + 1]]));
                pos += 2;
            }
            buffers.push(ChannelBuffer { contents });
        }
        CompositeState { locals, trackers, buffers }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("message {message} is not in the domain of {channel}")]
    UnknownMessage { channel: String, message: String },
    #[error("channel {0} is full")]
    BufferFull(String),
    #[error("channel {0} is empty")]
    Empty(String),
    #[error("head of {channel} is not {message}")]
    HeadMismatch { channel: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("process {process}: {reason}")]
    InvalidProcess { process: String, reason: String },
    #[error("channel {channel}: {reason}")]
    InvalidChannel { channel: String, reason: String },
    #[error("duplicate process id {0}")]
    DuplicateProcess(String),
    #[error("duplicate channel id {0}")]
    DuplicateChannel(String),
    #[error("process {process} uses undeclared channel {channel}")]
    UnknownChannel { process: String, channel: String },
    #[error("process {process}: message {message} is not in the domain of {channel}")]
    UnknownMessage { process: String, channel: String, message: String },
    #[error("processes {first} and {second} share output action {action}")]
    OutputOverlap { first: String, second: String, action: String },
    #[error("processes {first} and {second} share atomic proposition {prop}")]
    PropOverlap { first: String, second: String, prop: String },
    #[error("gadgets {first} and {second} share action {action}")]
    ActionOverlap { first: String, second: String, action: String },
    #[error("choice is not enabled in this state")]
    IllegalChoice,
}

/// How a process participates in the composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// A protocol process.
    Base,
    /// A channel fault gadget. A preemptive gadget with an enabled receive on
    /// a channel suppresses every non-gadget receive on that channel.
    Gadget { preemptive: bool },
}

/// A process together with its role in the composition.
#[derive(Clone, Debug)]
pub struct Component {
    pub def: ProcessDef,
    pub role: Role,
}

impl Component {
    pub fn base(def: ProcessDef) -> Self {
        Component { def, role: Role::Base }
    }
}

/// A process choosing one of its transitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Choice {
    pub process: usize,
    pub transition: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Send(usize, u16),
    Recv(usize, u16),
    Peek(usize, u16),
    Internal,
    Timeout,
    Skip(usize),
}

#[derive(Debug)]
struct Compiled {
    def: ProcessDef,
    role: Role,
    ops: Vec<Op>,
    outgoing: Vec<Vec<usize>>,
    /// States whose only outgoing moves are τ self-loops. Such a state is a
    /// terminated process: it offers no moves and the global stutter covers it.
    halted: Vec<bool>,
}

/// Evaluates one atomic proposition against composite states.
#[derive(Clone, Debug)]
pub enum AtomEval {
    Local { process: usize, holds: Vec<bool> },
    Empty { channel: usize },
    Length { channel: usize, len: usize },
    Never,
}

impl AtomEval {
    pub fn holds(&self, state: &CompositeState) -> bool {
        match self {
            AtomEval::Local { process, holds } => holds[state.locals[*process] as usize],
            AtomEval::Empty { channel } => state.buffers[*channel].is_empty(),
            AtomEval::Length { channel, len } => state.buffers[*channel].len() == *len,
            AtomEval::Never => false,
        }
    }
}

/// An immutable composed system: processes, channels and the composition
/// rules. Safe to share between threads.
#[derive(Debug)]
pub struct System {
    channels: Vec<ChannelDef>,
    channel_ids: HashMap<String, usize>,
    processes: Vec<Compiled>,
    has_preemption: bool,
}

impl System {
    /// Composes the given processes over the given channels.
    ///
    /// Base processes must have pairwise disjoint output sets, all processes
    /// must have pairwise disjoint propositions, and gadgets must have
    /// pairwise disjoint non-internal actions.
    pub fn compose(channels: Vec<ChannelDef>, components: Vec<Component>) -> Result<System, KernelError> {
        let mut channel_ids = HashMap::new();
        for (i, c) in channels.iter().enumerate() {
            c.validate()?;
            if channel_ids.insert(c.id.clone(), i).is_some() {
                return Err(KernelError::DuplicateChannel(c.id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &components {
            c.def.validate()?;
            if !seen.insert(c.def.id.clone()) {
                return Err(KernelError::DuplicateProcess(c.def.id.clone()));
            }
        }
        for (i, a) in components.iter().enumerate() {
            for b in &components[i + 1..] {
                if let Some(p) = a.def.atomic_props.intersection(&b.def.atomic_props).next() {
                    return Err(KernelError::PropOverlap { first: a.def.id.clone(), second: b.def.id.clone(), prop: p.clone() });
                }
                match (a.role, b.role) {
                    (Role::Base, Role::Base) => {
                        if let Some(x) = a.def.outputs.intersection(&b.def.outputs).next() {
                            return Err(KernelError::OutputOverlap {
                                first: a.def.id.clone(),
                                second: b.def.id.clone(),
                                action: x.to_string(),
                            });
                        }
                    }
                    (Role::Gadget { .. }, Role::Gadget { .. }) => {
                        let left: BTreeSet<_> = a.def.inputs.union(&a.def.outputs).collect();
                        let right: BTreeSet<_> = b.def.inputs.union(&b.def.outputs).collect();
                        if let Some(x) = left.intersection(&right).next() {
                            return Err(KernelError::ActionOverlap {
                                first: a.def.id.clone(),
                                second: b.def.id.clone(),
                                action: x.to_string(),
                            });
                        }
                    }
                    _ => {}
                }
            }
        }

        let mut processes = Vec::with_capacity(components.len());
        for comp in components {
            let def = comp.def;
            let mut ops = Vec::with_capacity(def.transitions.len());
            for t in &def.transitions {
                let lookup = |channel: &str| {
                    channel_ids.get(channel).copied().ok_or_else(|| KernelError::UnknownChannel {
                        process: def.id.clone(),
                        channel: channel.to_string(),
                    })
                };
                let msg = |c: usize, m: &Message| {
                    channels[c].message_index(m).map(|i| i as u16).ok_or_else(|| KernelError::UnknownMessage {
                        process: def.id.clone(),
                        channel: channels[c].id.clone(),
                        message: m.to_string(),
                    })
                };
                let op = match &t.action {
                    Action::Send { channel, message } => {
                        let c = lookup(channel)?;
                        Op::Send(c, msg(c, message)?)
                    }
                    Action::Recv { channel, message } => {
                        let c = lookup(channel)?;
                        Op::Recv(c, msg(c, message)?)
                    }
                    Action::Peek { channel, message } => {
                        let c = lookup(channel)?;
                        Op::Peek(c, msg(c, message)?)
                    }
                    Action::Internal => Op::Internal,
                    Action::Timeout => Op::Timeout,
                    Action::Skip { channel } => Op::Skip(lookup(channel)?),
                };
                ops.push(op);
            }
            let mut outgoing = vec![Vec::new(); def.states.len()];
            for (i, t) in def.transitions.iter().enumerate() {
                outgoing[t.source].push(i);
            }
            let halted = outgoing
                .iter()
                .enumerate()
                .map(|(s, outs)| {
                    !outs.is_empty()
                        && outs.iter().all(|&i| ops[i] == Op::Internal && def.transitions[i].target == s)
                })
                .collect();
            processes.push(Compiled { def, role: comp.role, ops, outgoing, halted });
        }
        let has_preemption = processes.iter().any(|p| p.role == Role::Gadget { preemptive: true });
        Ok(System { channels, channel_ids, processes, has_preemption })
    }

    pub fn channels(&self) -> &[ChannelDef] {
        &self.channels
    }

    pub fn channel_index(&self, id: &str) -> Option<usize> {
        self.channel_ids.get(id).copied()
    }

    pub fn process_count(&self) -> usize {
        self.processes.len()
    }

    pub fn process(&self, i: usize) -> &ProcessDef {
        &self.processes[i].def
    }

    pub fn role(&self, i: usize) -> Role {
        self.processes[i].role
    }

    pub fn process_index(&self, id: &str) -> Option<usize> {
        self.processes.iter().position(|p| p.def.id == id)
    }

    pub fn initial_state(&self) -> CompositeState {
        CompositeState {
            locals: self.processes.iter().map(|p| p.def.initial as u32).collect(),
            trackers: vec![0; self.processes.len()],
            buffers: vec![ChannelBuffer::default(); self.channels.len()],
        }
    }

    /// Decodes a state produced by [`CompositeState::encode`] for this system.
    pub fn decode(&self, bytes: &[u8]) -> CompositeState {
        CompositeState::decode(bytes, self.processes.len(), self.channels.len())
    }

    /// Buffer contents of a channel as message values.
    pub fn buffer_messages(&self, state: &CompositeState, channel: usize) -> Vec<&Message> {
        state.buffers[channel].contents.iter().map(|&m| &self.channels[channel].domain[m as usize]).collect()
    }

    fn resolve(&self, channel: &str, message: Option<&str>) -> Result<(usize, u16), ChannelError> {
        let c = self.channel_index(channel).ok_or_else(|| ChannelError::UnknownChannel(channel.to_string()))?;
        let m = match message {
            Some(m) => self.channels[c].message_index(&Message::new(m)).ok_or_else(|| ChannelError::UnknownMessage {
                channel: channel.to_string(),
                message: m.to_string(),
            })? as u16,
            None => 0,
        };
        Ok((c, m))
    }

    /// Appends `message` at the tail of `channel`.
    pub fn channel_send(&self, state: &CompositeState, channel: &str, message: &str) -> Result<CompositeState, ChannelError> {
        let (c, m) = self.resolve(channel, Some(message))?;
        if state.buffers[c].len() >= self.channels[c].capacity {
            return Err(ChannelError::BufferFull(channel.to_string()));
        }
        let mut next = state.clone();
        next.buffers[c].contents.push(m);
        Ok(next)
    }

    /// Removes `message` from the head of `channel`.
    pub fn channel_recv(&self, state: &CompositeState, channel: &str, message: &str) -> Result<CompositeState, ChannelError> {
        self.channel_peek(state, channel, message)?;
        let (c, _) = self.resolve(channel, None)?;
        let mut next = state.clone();
        next.buffers[c].contents.remove(0);
        Ok(next)
    }

    /// Reads `message` at the head of `channel` without removing it.
    pub fn channel_peek(&self, state: &CompositeState, channel: &str, message: &str) -> Result<CompositeState, ChannelError> {
        let (c, m) = self.resolve(channel, Some(message))?;
        match state.buffers[c].head() {
            None => Err(ChannelError::Empty(channel.to_string())),
            Some(h) if h != m => Err(ChannelError::HeadMismatch { channel: channel.to_string(), message: message.to_string() }),
            Some(_) => Ok(state.clone()),
        }
    }

    fn op_enabled(&self, state: &CompositeState, proc: usize, op: Op) -> bool {
        match op {
            Op::Internal | Op::Timeout => true,
            Op::Send(c, _) => state.buffers[c].len() < self.channels[c].capacity,
            Op::Recv(c, m) | Op::Peek(c, m) => state.buffers[c].head() == Some(m),
            Op::Skip(c) => state.buffers[c].len() != state.trackers[proc] as usize,
        }
    }

    fn preempted_channels(&self, state: &CompositeState) -> Vec<bool> {
        let mut blocked = vec![false; self.channels.len()];
        for (pi, p) in self.processes.iter().enumerate() {
            if p.role != (Role::Gadget { preemptive: true }) {
                continue;
            }
            let local = state.locals[pi] as usize;
            for &ti in &p.outgoing[local] {
                if let Op::Recv(c, _) = p.ops[ti] {
                    if self.op_enabled(state, pi, p.ops[ti]) {
                        blocked[c] = true;
                    }
                }
            }
        }
        blocked
    }

    /// All transitions enabled in `state`, ordered by process index and then
    /// by transition declaration order. Timeouts are enabled only when nothing
    /// else is. An empty result is a deadlock.
    pub fn enabled_transitions(&self, state: &CompositeState) -> Vec<Choice> {
        let blocked = if self.has_preemption { Some(self.preempted_channels(state)) } else { None };
        let mut out = Vec::new();
        let mut timeouts = Vec::new();
        for (pi, p) in self.processes.iter().enumerate() {
            let local = state.locals[pi] as usize;
            if p.halted[local] {
                continue;
            }
            for &ti in &p.outgoing[local] {
                let op = p.ops[ti];
                if !self.op_enabled(state, pi, op) {
                    continue;
                }
                if let (Some(blocked), Op::Recv(c, _), Role::Base) = (&blocked, op, p.role) {
                    if blocked[c] {
                        continue;
                    }
                }
                if op == Op::Timeout {
                    timeouts.push(Choice { process: pi, transition: ti });
                } else {
                    out.push(Choice { process: pi, transition: ti });
                }
            }
        }
        if out.is_empty() {
            timeouts
        } else {
            out
        }
    }

    fn apply(&self, state: &CompositeState, choice: Choice) -> CompositeState {
        let p = &self.processes[choice.process];
        let mut next = state.clone();
        match p.ops[choice.transition] {
            Op::Send(c, m) => next.buffers[c].contents.push(m),
            Op::Recv(c, _) => {
                next.buffers[c].contents.remove(0);
            }
            Op::Peek(..) | Op::Internal | Op::Timeout => {}
            Op::Skip(c) => next.trackers[choice.process] = state.buffers[c].len() as u8,
        }
        next.locals[choice.process] = p.def.transitions[choice.transition].target as u32;
        for (c, b) in next.buffers.iter().enumerate() {
            assert!(b.len() <= self.channels[c].capacity, "buffer of {} exceeds capacity", self.channels[c].id);
        }
        next
    }

    /// Deterministic successor for an enabled choice.
    pub fn step(&self, state: &CompositeState, choice: Choice) -> Result<CompositeState, KernelError> {
        if !self.enabled_transitions(state).contains(&choice) {
            return Err(KernelError::IllegalChoice);
        }
        Ok(self.apply(state, choice))
    }

    /// Successors including the implicit stutter (`None`) of a deadlocked state.
    pub fn successors(&self, state: &CompositeState) -> Vec<(Option<Choice>, CompositeState)> {
        let enabled = self.enabled_transitions(state);
        if enabled.is_empty() {
            return vec![(None, state.clone())];
        }
        enabled.into_iter().map(|c| (Some(c), self.apply(state, c))).collect()
    }

    /// The transition a choice refers to.
    pub fn transition(&self, choice: Choice) -> &Transition {
        &self.processes[choice.process].def.transitions[choice.transition]
    }

    /// Union of the process labels at their local states plus the derived
    /// channel propositions `empty(c)` and `len(c)==n`.
    pub fn composite_labels(&self, state: &CompositeState) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (pi, p) in self.processes.iter().enumerate() {
            out.extend(p.def.labels[state.locals[pi] as usize].iter().cloned());
        }
        for (c, ch) in self.channels.iter().enumerate() {
            let n = state.buffers[c].len();
            if n == 0 {
                out.insert(format!("empty({})", ch.id));
            }
            out.insert(format!("len({})=={}", ch.id, n));
        }
        out
    }

    /// Compiles an atomic proposition name into an evaluator. Unknown process
    /// propositions are never true; unknown channels are an error.
    pub fn atom(&self, name: &str) -> Result<AtomEval, ChannelError> {
        if let Some(inner) = name.strip_prefix("empty(").and_then(|s| s.strip_suffix(')')) {
            let c = self.channel_index(inner).ok_or_else(|| ChannelError::UnknownChannel(inner.to_string()))?;
            return Ok(AtomEval::Empty { channel: c });
        }
        if let Some(rest) = name.strip_prefix("len(") {
            if let Some((ch, n)) = rest.split_once(")==") {
                let c = self.channel_index(ch).ok_or_else(|| ChannelError::UnknownChannel(ch.to_string()))?;
                if let Ok(len) = n.parse() {
                    return Ok(AtomEval::Length { channel: c, len });
                }
            }
        }
        for (pi, p) in self.processes.iter().enumerate() {
            if p.def.atomic_props.contains(name) {
                let holds = p.def.labels.iter().map(|l| l.contains(name)).collect();
                return Ok(AtomEval::Local { process: pi, holds });
            }
        }
        Ok(AtomEval::Never)
    }

    /// Human-readable rendering of a state.
    pub fn describe(&self, state: &CompositeState) -> String {
        let mut parts = Vec::new();
        for (pi, p) in self.processes.iter().enumerate() {
            parts.push(format!("{}={}", p.def.id, p.def.states[state.locals[pi] as usize]));
        }
        for (c, ch) in self.channels.iter().enumerate() {
            let msgs: Vec<String> = self.buffer_messages(state, c).iter().map(|m| m.to_string()).collect();
            parts.push(format!("{}=[{}]", ch.id, msgs.join(",")));
        }
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<BTreeSet<String>> {
        vec![BTreeSet::new(); n]
    }

    fn t(source: usize, action: Action, target: usize) -> Transition {
        Transition { source, action, target }
    }

    fn one_channel(k: usize) -> ChannelDef {
        ChannelDef::new("c", &["SYN", "FIN", "ACK"], k)
    }

    fn sys_with(k: usize, procs: Vec<ProcessDef>) -> System {
        System::compose(vec![one_channel(k)], procs.into_iter().map(Component::base).collect()).unwrap()
    }

    fn idle() -> ProcessDef {
        ProcessDef::from_parts("idle", vec!["s".into()], 0, vec![], labels(1))
    }

    #[test]
    fn send_appends_at_tail_until_full() {
        let sys = sys_with(2, vec![idle()]);
        let s0 = sys.initial_state();
        let s1 = sys.channel_send(&s0, "c", "SYN").unwrap();
        assert_eq!(s1.buffers[0].contents, vec![0]);
        let s2 = sys.channel_send(&s1, "c", "ACK").unwrap();
        assert_eq!(s2.buffers[0].contents, vec![0, 2]);
        assert_eq!(sys.channel_send(&s2, "c", "FIN"), Err(ChannelError::BufferFull("c".into())));
        assert!(matches!(sys.channel_send(&s0, "c", "RST"), Err(ChannelError::UnknownMessage { .. })));
    }

    #[test]
    fn recv_and_peek_need_matching_head() {
        let sys = sys_with(2, vec![idle()]);
        let s0 = sys.initial_state();
        let s = sys.channel_send(&sys.channel_send(&s0, "c", "SYN").unwrap(), "c", "ACK").unwrap();
        let r = sys.channel_recv(&s, "c", "SYN").unwrap();
        assert_eq!(r.buffers[0].contents, vec![2]);
        assert!(matches!(sys.channel_recv(&s, "c", "ACK"), Err(ChannelError::HeadMismatch { .. })));
        assert_eq!(sys.channel_recv(&s0, "c", "SYN"), Err(ChannelError::Empty("c".into())));

        let f = sys.channel_send(&s0, "c", "FIN").unwrap();
        assert_eq!(sys.channel_peek(&f, "c", "FIN").unwrap(), f);
        assert!(sys.channel_peek(&f, "c", "SYN").is_err());
        assert!(sys.channel_peek(&s0, "c", "FIN").is_err());
    }

    #[test]
    fn internal_move_enabled_while_other_blocks() {
        let a = ProcessDef::from_parts("A", vec!["a0".into(), "a1".into()], 0, vec![t(0, Action::Internal, 1)], labels(2));
        let b = ProcessDef::from_parts("B", vec!["b0".into(), "b1".into()], 0, vec![t(0, Action::recv("c", "SYN"), 1)], labels(2));
        let sys = sys_with(1, vec![a, b]);
        let en = sys.enabled_transitions(&sys.initial_state());
        assert_eq!(en, vec![Choice { process: 0, transition: 0 }]);
    }

    #[test]
    fn full_channel_send_deadlocks_and_stutters() {
        let a = ProcessDef::from_parts("A", vec!["a0".into(), "a1".into()], 0, vec![t(0, Action::send("c", "SYN"), 1)], labels(2));
        let sys = sys_with(1, vec![a]);
        let full = sys.channel_send(&sys.initial_state(), "c", "FIN").unwrap();
        assert!(sys.enabled_transitions(&full).is_empty());
        assert_eq!(sys.successors(&full), vec![(None, full.clone())]);
    }

    #[test]
    fn timeout_only_when_nothing_else_moves() {
        let a = ProcessDef::from_parts("A", vec!["a0".into(), "a1".into()], 0, vec![t(0, Action::Timeout, 1)], labels(2));
        let b = ProcessDef::from_parts("B", vec!["b0".into(), "b1".into()], 0, vec![t(0, Action::recv("c", "SYN"), 1)], labels(2));
        let sys = sys_with(1, vec![a, b]);
        let s0 = sys.initial_state();
        assert_eq!(sys.enabled_transitions(&s0), vec![Choice { process: 0, transition: 0 }]);
        let s1 = sys.channel_send(&s0, "c", "SYN").unwrap();
        assert_eq!(sys.enabled_transitions(&s1), vec![Choice { process: 1, transition: 0 }]);
    }

    #[test]
    fn step_is_deterministic_and_checks_enabledness() {
        let a = ProcessDef::from_parts("A", vec!["a0".into(), "a1".into()], 0, vec![t(0, Action::Internal, 1)], labels(2));
        let sys = sys_with(1, vec![a]);
        let s0 = sys.initial_state();
        let c = Choice { process: 0, transition: 0 };
        let s1 = sys.step(&s0, c).unwrap();
        assert_eq!(s1, sys.step(&s0, c).unwrap());
        assert_eq!(s1.buffers, s0.buffers);
        assert_eq!(sys.step(&s1, c), Err(KernelError::IllegalChoice));
    }

    #[test]
    fn labels_union_and_channel_props() {
        let mut la = labels(1);
        la[0].insert("A.up".into());
        let mut lb = labels(1);
        lb[0].insert("B.up".into());
        let a = ProcessDef::from_parts("A", vec!["s".into()], 0, vec![], la);
        let b = ProcessDef::from_parts("B", vec!["s".into()], 0, vec![], lb);
        let sys = sys_with(1, vec![a, b]);
        let l = sys.composite_labels(&sys.initial_state());
        assert!(l.contains("A.up") && l.contains("B.up"));
        assert!(l.contains("empty(c)") && l.contains("len(c)==0"));
        let unlabeled = sys_with(1, vec![idle()]);
        let only_procs: Vec<_> = unlabeled
            .composite_labels(&unlabeled.initial_state())
            .into_iter()
            .filter(|p| !p.contains('('))
            .collect();
        assert!(only_procs.is_empty());
    }

    #[test]
    fn compose_rejects_overlaps() {
        let a = ProcessDef::from_parts("A", vec!["s".into()], 0, vec![t(0, Action::send("c", "SYN"), 0)], labels(1));
        let mut b = a.clone();
        b.id = "B".into();
        let err = System::compose(vec![one_channel(1)], vec![Component::base(a.clone()), Component::base(b)]).unwrap_err();
        assert!(matches!(err, KernelError::OutputOverlap { .. }));

        let mut la = labels(1);
        la[0].insert("p".into());
        let x = ProcessDef::from_parts("X", vec!["s".into()], 0, vec![], la.clone());
        let y = ProcessDef::from_parts("Y", vec!["s".into()], 0, vec![], la);
        let err = System::compose(vec![one_channel(1)], vec![Component::base(x), Component::base(y)]).unwrap_err();
        assert!(matches!(err, KernelError::PropOverlap { .. }));
    }

    #[test]
    fn process_validation() {
        let mut p = ProcessDef::from_parts("A", vec!["s".into()], 0, vec![t(0, Action::recv("c", "SYN"), 0)], labels(1));
        p.outputs.insert(Action::recv("c", "SYN"));
        assert!(p.validate().is_err());
        let q = ProcessDef::from_parts("A", vec!["s".into()], 3, vec![], labels(1));
        assert!(q.validate().is_err());
        let r = ProcessDef::from_parts("A", vec!["s".into()], 0, vec![], labels(0));
        assert!(r.validate().is_err());
    }

    #[test]
    fn tau_self_loop_only_state_is_halted() {
        let a = ProcessDef::from_parts("A", vec!["end".into()], 0, vec![t(0, Action::Internal, 0)], labels(1));
        let sys = sys_with(1, vec![a]);
        assert!(sys.enabled_transitions(&sys.initial_state()).is_empty());
    }

    #[test]
    fn encode_round_trip() {
        let sys = sys_with(2, vec![idle()]);
        let s = sys.channel_send(&sys.initial_state(), "c", "ACK").unwrap();
        assert_eq!(sys.decode(&s.encode()), s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::collections::VecDeque;

        proptest! {
            #[test]
            fn fifo_matches_reference_queue(script in prop::collection::vec((any::<bool>(), 0usize..3), 0..60)) {
                let sys = sys_with(3, vec![idle()]);
                let names = ["SYN", "FIN", "ACK"];
                let mut state = sys.initial_state();
                let mut reference = VecDeque::new();
                for (is_send, m) in script {
                    if is_send {
                        match sys.channel_send(&state, "c", names[m]) {
                            Ok(s) => { state = s; reference.push_back(m); }
                            Err(e) => prop_assert_eq!(e, ChannelError::BufferFull("c".into())),
                        }
                    } else if let Some(&h) = reference.front() {
                        state = sys.channel_recv(&state, "c", names[h]).unwrap();
                        reference.pop_front();
                    }
                    let got: Vec<usize> = state.buffers[0].contents.iter().map(|&x| x as usize).collect();
                    prop_assert_eq!(got, reference.iter().copied().collect::<Vec<_>>());
                }
            }

            #[test]
            fn peek_is_idempotent(msgs in prop::collection::vec(0usize..3, 1..3), probe in 0usize..3) {
                let sys = sys_with(3, vec![idle()]);
                let names = ["SYN", "FIN", "ACK"];
                let mut state = sys.initial_state();
                for m in &msgs {
                    state = sys.channel_send(&state, "c", names[*m]).unwrap();
                }
                if let Ok(once) = sys.channel_peek(&state, "c", names[probe]) {
                    prop_assert_eq!(&once, &state);
                    prop_assert_eq!(sys.channel_peek(&once, "c", names[probe]).unwrap(), once);
                }
            }
        }
    }
}
