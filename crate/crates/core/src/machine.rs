//! Turing machines and Post machines as data, their direct interpreters, and
//! the JSON machine DSL.
//!
//! Both machine kinds share one representation, [`Machine`], parameterised by
//! the head-move type: a TM moves its head `L`/`R`, a Post machine moves its
//! front head `S`/`R` (the rear head always advances and writes). Transition
//! tables are dense: `delta[state * |alphabet| + symbol]`.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blank cell, written `_` in documents.
pub const BLANK: &str = "_";
/// Left-end marker, written `>` in documents.
pub const START_MARK: &str = ">";
/// Queue padding symbol of adapted Post machines.
pub const PAD: &str = "#";
/// Answer cells enqueued by compiled Post machines right before halting.
pub const ANSWER_ZERO: &str = "=0";
pub const ANSWER_ONE: &str = "=1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub u16);

impl SymId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Maps a halting symbol to the decision it encodes.
///
/// Plain `0`/`1` count for hand-written machines; compiled machines use the
/// dedicated answer cells.
pub fn answer_bit(symbol: &str) -> Option<u8> {
    match symbol {
        "0" | ANSWER_ZERO => Some(0),
        "1" | ANSWER_ONE => Some(1),
        _ => None,
    }
}

pub trait HeadMove: Copy + Eq + fmt::Debug + Send + Sync + 'static {
    const KIND: &'static str;
    fn code(self) -> &'static str;
    fn from_code(code: &str) -> Option<Self>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TmMove {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PmMove {
    Stay,
    Right,
}

impl HeadMove for TmMove {
    const KIND: &'static str = "tm";

    fn code(self) -> &'static str {
        match self {
            TmMove::Left => "L",
            TmMove::Right => "R",
        }
    }

    fn from_code(code: &str) -> Option<Self> {
        match code {
            "L" => Some(TmMove::Left),
            "R" => Some(TmMove::Right),
            _ => None,
        }
    }
}

impl HeadMove for PmMove {
    const KIND: &'static str = "pm";

    fn code(self) -> &'static str {
        match self {
            PmMove::Stay => "S",
            PmMove::Right => "R",
        }
    }

    fn from_code(code: &str) -> Option<Self> {
        match code {
            "S" => Some(PmMove::Stay),
            "R" => Some(PmMove::Right),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rule<M> {
    pub next: StateId,
    pub write: SymId,
    pub mv: M,
}

/// A deterministic machine over a finite alphabet with a dense transition table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Machine<M> {
    symbols: Vec<String>,
    states: Vec<String>,
    start: StateId,
    halt: StateId,
    delta: Vec<Option<Rule<M>>>,
    /// Only meaningful for Post machines: both heads always move right.
    adapted: bool,
    sym_index: HashMap<String, SymId>,
    state_index: HashMap<String, StateId>,
}

pub type TmSpec = Machine<TmMove>;
pub type PmSpec = Machine<PmMove>;

/// Either kind of machine, as produced by [`parse_machine`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnyMachine {
    Tm(TmSpec),
    Pm(PmSpec),
}

impl<M: HeadMove> Machine<M> {
    pub fn builder(start: &str, halt: &str) -> MachineBuilder<M> {
        MachineBuilder::new(start, halt)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn halt(&self) -> StateId {
        self.halt
    }

    pub fn is_adapted(&self) -> bool {
        self.adapted
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn symbol(&self, id: SymId) -> &str {
        &self.symbols[id.index()]
    }

    pub fn state(&self, id: StateId) -> &str {
        &self.states[id.index()]
    }

    pub fn sym_id(&self, name: &str) -> Option<SymId> {
        self.sym_index.get(name).copied()
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.state_index.get(name).copied()
    }

    fn require_sym(&self, name: &str) -> Result<SymId> {
        self.sym_id(name)
            .ok_or_else(|| Error::Validation(format!("alphabet lacks symbol `{name}`")))
    }

    pub fn rule(&self, state: StateId, read: SymId) -> Option<&Rule<M>> {
        self.delta[state.index() * self.symbols.len() + read.index()].as_ref()
    }

    /// All rules in canonical (state, symbol) order.
    pub fn rules(&self) -> impl Iterator<Item = (StateId, SymId, &Rule<M>)> + '_ {
        let m = self.symbols.len();
        self.delta.iter().enumerate().filter_map(move |(k, r)| {
            r.as_ref()
                .map(|r| (StateId((k / m) as u16), SymId((k % m) as u16), r))
        })
    }

    fn validate_common(&self) -> Result<()> {
        if self.start == self.halt {
            return Err(Error::Validation("start and halt state coincide".into()));
        }
        self.require_sym("0")?;
        self.require_sym("1")?;
        for q in 0..self.states.len() {
            let q = StateId(q as u16);
            for s in 0..self.symbols.len() {
                let s = SymId(s as u16);
                match (q == self.halt, self.rule(q, s)) {
                    (true, Some(_)) => {
                        return Err(Error::Validation(format!(
                            "rule defined for halt state on `{}`",
                            self.symbol(s)
                        )))
                    }
                    (false, None) => {
                        return Err(Error::Validation(format!(
                            "delta not total: missing rule for ({}, {})",
                            self.state(q),
                            self.symbol(s)
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn render_rule(&self, q: StateId, s: SymId, r: &Rule<M>) -> String {
        let j = |x: &str| serde_json::to_string(x).expect("string serialization");
        format!(
            "{{\"state\": {}, \"read\": {}, \"next\": {}, \"write\": {}, \"move\": {}}}",
            j(self.state(q)),
            j(self.symbol(s)),
            j(self.state(r.next)),
            j(self.symbol(r.write)),
            j(r.mv.code())
        )
    }

    /// Canonical machine document: fixed field order, one rule per line in
    /// (state, symbol) order, trailing newline.
    pub fn to_json(&self) -> String {
        let list = |xs: &[String]| serde_json::to_string(xs).expect("string serialization");
        let j = |x: &str| serde_json::to_string(x).expect("string serialization");
        let mut out = String::from("{\n");
        out.push_str(&format!("  \"kind\": {},\n", j(M::KIND)));
        out.push_str(&format!("  \"alphabet\": {},\n", list(&self.symbols)));
        out.push_str(&format!("  \"states\": {},\n", list(&self.states)));
        out.push_str(&format!("  \"start\": {},\n", j(self.state(self.start))));
        out.push_str(&format!("  \"halt\": {},\n", j(self.state(self.halt))));
        if M::KIND == "pm" {
            out.push_str(&format!("  \"adapted\": {},\n", self.adapted));
        }
        out.push_str("  \"rules\": [\n");
        let rules: Vec<String> = self
            .rules()
            .map(|(q, s, r)| format!("    {}", self.render_rule(q, s, r)))
            .collect();
        out.push_str(&rules.join(",\n"));
        if !rules.is_empty() {
            out.push('\n');
        }
        out.push_str("  ]\n}\n");
        out
    }

    fn from_doc(doc: MachineDoc) -> Result<Self> {
        if doc.kind != M::KIND {
            return Err(Error::Parse(format!(
                "expected kind `{}`, found `{}`",
                M::KIND,
                doc.kind
            )));
        }
        let mut b = MachineBuilder::<M>::new(&doc.start, &doc.halt);
        for s in &doc.alphabet {
            if b.sym_index.contains_key(s) {
                return Err(Error::Parse(format!("duplicate symbol `{s}`")));
            }
            b.symbol(s);
        }
        for q in &doc.states {
            if b.state_index.contains_key(q) {
                return Err(Error::Parse(format!("duplicate state `{q}`")));
            }
            b.state(q);
        }
        if !doc.states.contains(&doc.start) || !doc.states.contains(&doc.halt) {
            return Err(Error::Validation(
                "start and halt must be listed among the states".into(),
            ));
        }
        if doc.adapted.is_some() && M::KIND != "pm" {
            return Err(Error::Parse(
                "`adapted` is only valid for pm documents".into(),
            ));
        }
        b.adapted(doc.adapted.unwrap_or(false));
        for r in &doc.rules {
            let mv = M::from_code(&r.mv)
                .ok_or_else(|| Error::Parse(format!("invalid move `{}`", r.mv)))?;
            for (what, name, known) in [
                ("state", &r.state, b.state_index.contains_key(&r.state)),
                ("state", &r.next, b.state_index.contains_key(&r.next)),
                ("symbol", &r.read, b.sym_index.contains_key(&r.read)),
                ("symbol", &r.write, b.sym_index.contains_key(&r.write)),
            ] {
                if !known {
                    return Err(Error::Parse(format!("undeclared {what} `{name}` in rule")));
                }
            }
            if b.has_rule(&r.state, &r.read) {
                return Err(Error::Parse(format!(
                    "duplicate rule for ({}, {})",
                    r.state, r.read
                )));
            }
            b.rule(&r.state, &r.read, &r.next, &r.write, mv);
        }
        Ok(b.build_unchecked())
    }

    pub fn from_json(text: &str) -> Result<Self>
    where
        Self: Validate,
    {
        let doc: MachineDoc = serde_json::from_str(text)?;
        let m = Self::from_doc(doc)?;
        m.validate()?;
        Ok(m)
    }
}

pub trait Validate {
    fn validate(&self) -> Result<()>;
}

impl Validate for TmSpec {
    /// Checks totality, the required symbols, and the left-end discipline:
    /// on `>` a rule must rewrite `>` and not move left, and no other rule may
    /// write `>`.
    fn validate(&self) -> Result<()> {
        self.validate_common()?;
        let start_mark = self.require_sym(START_MARK)?;
        self.require_sym(BLANK)?;
        for (q, s, r) in self.rules() {
            if s == start_mark {
                if r.mv == TmMove::Left {
                    return Err(Error::Validation(format!(
                        "left-move on `>` in state {}",
                        self.state(q)
                    )));
                }
                if r.write != start_mark {
                    return Err(Error::Validation(format!(
                        "rule ({}, >) overwrites the left-end marker",
                        self.state(q)
                    )));
                }
            } else if r.write == start_mark {
                return Err(Error::Validation(format!(
                    "rule ({}, {}) writes the left-end marker",
                    self.state(q),
                    self.symbol(s)
                )));
            }
        }
        Ok(())
    }
}

impl Validate for PmSpec {
    fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.adapted {
            self.require_sym(PAD)?;
            for (q, s, r) in self.rules() {
                if r.mv != PmMove::Right {
                    return Err(Error::Validation(format!(
                        "adapted machine has a Stay rule at ({}, {})",
                        self.state(q),
                        self.symbol(s)
                    )));
                }
                if r.next == self.start {
                    return Err(Error::Validation(format!(
                        "adapted machine re-enters the start state from ({}, {})",
                        self.state(q),
                        self.symbol(s)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Incremental construction of a [`Machine`] from names.
#[derive(Clone, Debug)]
pub struct MachineBuilder<M> {
    symbols: Vec<String>,
    states: Vec<String>,
    start: String,
    halt: String,
    adapted: bool,
    rules: Vec<(StateId, SymId, Rule<M>)>,
    sym_index: HashMap<String, SymId>,
    state_index: HashMap<String, StateId>,
}

impl<M: HeadMove> MachineBuilder<M> {
    pub fn new(start: &str, halt: &str) -> Self {
        MachineBuilder {
            symbols: Vec::new(),
            states: Vec::new(),
            start: start.to_string(),
            halt: halt.to_string(),
            adapted: false,
            rules: Vec::new(),
            sym_index: HashMap::new(),
            state_index: HashMap::new(),
        }
    }

    pub fn adapted(&mut self, adapted: bool) -> &mut Self {
        self.adapted = adapted;
        self
    }

    /// Declares a symbol (idempotent) and returns its id.
    pub fn symbol(&mut self, name: &str) -> SymId {
        if let Some(&id) = self.sym_index.get(name) {
            return id;
        }
        let id = SymId(self.symbols.len() as u16);
        self.symbols.push(name.to_string());
        self.sym_index.insert(name.to_string(), id);
        id
    }

    /// Declares a state (idempotent) and returns its id.
    pub fn state(&mut self, name: &str) -> StateId {
        if let Some(&id) = self.state_index.get(name) {
            return id;
        }
        let id = StateId(self.states.len() as u16);
        self.states.push(name.to_string());
        self.state_index.insert(name.to_string(), id);
        id
    }

    fn has_rule(&self, state: &str, read: &str) -> bool {
        let (Some(q), Some(s)) = (self.state_index.get(state), self.sym_index.get(read)) else {
            return false;
        };
        self.rules.iter().any(|(rq, rs, _)| rq == q && rs == s)
    }

    pub fn rule(&mut self, state: &str, read: &str, next: &str, write: &str, mv: M) -> &mut Self {
        let q = self.state(state);
        let s = self.symbol(read);
        let next = self.state(next);
        let write = self.symbol(write);
        self.rules.push((q, s, Rule { next, write, mv }));
        self
    }

    pub fn rule_ids(&mut self, q: StateId, s: SymId, rule: Rule<M>) -> &mut Self {
        self.rules.push((q, s, rule));
        self
    }

    fn build_unchecked(mut self) -> Machine<M> {
        let start = self.state(&self.start.clone());
        let halt = self.state(&self.halt.clone());
        let m = self.symbols.len();
        let mut delta = vec![None; self.states.len() * m];
        for (q, s, r) in self.rules {
            delta[q.index() * m + s.index()] = Some(r);
        }
        Machine {
            symbols: self.symbols,
            states: self.states,
            start,
            halt,
            delta,
            adapted: self.adapted,
            sym_index: self.sym_index,
            state_index: self.state_index,
        }
    }

    pub fn build(self) -> Result<Machine<M>>
    where
        Machine<M>: Validate,
    {
        let m = self.build_unchecked();
        m.validate()?;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MachineDoc {
    kind: String,
    alphabet: Vec<String>,
    states: Vec<String>,
    start: String,
    halt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adapted: Option<bool>,
    rules: Vec<RuleDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDoc {
    state: String,
    read: String,
    next: String,
    write: String,
    #[serde(rename = "move")]
    mv: String,
}

/// Parses a machine document of either kind and validates it.
pub fn parse_machine(text: &str) -> Result<AnyMachine> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let kind: Kind = serde_json::from_str(text)?;
    match kind.kind.as_str() {
        "tm" => Ok(AnyMachine::Tm(TmSpec::from_json(text)?)),
        "pm" => Ok(AnyMachine::Pm(PmSpec::from_json(text)?)),
        other => Err(Error::Parse(format!("unknown machine kind `{other}`"))),
    }
}

impl AnyMachine {
    pub fn to_json(&self) -> String {
        match self {
            AnyMachine::Tm(m) => m.to_json(),
            AnyMachine::Pm(m) => m.to_json(),
        }
    }
}

/// Explicit guards for runs that might not halt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub max_steps: u64,
    pub max_space: usize,
}

impl ResourceLimits {
    pub fn new(max_steps: u64, max_space: usize) -> Self {
        ResourceLimits {
            max_steps,
            max_space,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub time_steps: u64,
    pub space_cells: usize,
    pub halted: bool,
    pub output_bit: Option<u8>,
}

/// One step of a machine run, as written to JSONL trace files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub i: u64,
    pub state: String,
    pub read: String,
    pub write: String,
    #[serde(rename = "move")]
    pub mv: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub head: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub queue_front: Option<u64>,
}

pub(crate) fn check_bits(input: &str) -> Result<()> {
    match input.chars().find(|c| *c != '0' && *c != '1') {
        Some(c) => Err(Error::InvalidInput(format!(
            "input must be a bit string, found `{c}`"
        ))),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Turing machines

/// A TM configuration. The tape never stores trailing blanks, so two
/// configurations describing the same tape compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TmConfig {
    pub tape: Vec<SymId>,
    /// 1-based head position; cells past the end of `tape` are blank.
    pub head: usize,
    pub state: StateId,
}

impl TmConfig {
    pub fn render(&self, spec: &TmSpec) -> String {
        let tape: Vec<&str> = self.tape.iter().map(|&s| spec.symbol(s)).collect();
        format!(
            "[{}] head={} state={}",
            tape.join(" "),
            self.head,
            spec.state(self.state)
        )
    }
}

impl TmSpec {
    fn blank(&self) -> SymId {
        self.sym_id(BLANK).expect("validated TM has a blank")
    }

    /// `>` followed by the input, head on cell 1, start state.
    pub fn initial_config(&self, input: &str) -> Result<TmConfig> {
        check_bits(input)?;
        let mut tape = vec![self.sym_id(START_MARK).expect("validated TM has `>`")];
        for c in input.chars() {
            tape.push(
                self.sym_id(&c.to_string())
                    .expect("validated TM has 0 and 1"),
            );
        }
        Ok(TmConfig {
            tape,
            head: 1,
            state: self.start,
        })
    }

    pub fn read(&self, cfg: &TmConfig) -> SymId {
        cfg.tape
            .get(cfg.head - 1)
            .copied()
            .unwrap_or_else(|| self.blank())
    }

    fn step_in_place(&self, cfg: &mut TmConfig) -> Result<(SymId, Rule<TmMove>)> {
        if cfg.state == self.halt {
            return Err(Error::Precondition("step from the halt state".into()));
        }
        let read = self.read(cfg);
        let rule = *self
            .rule(cfg.state, read)
            .ok_or_else(|| Error::Validation("delta not total".into()))?;
        if rule.mv == TmMove::Left && cfg.head == 1 {
            return Err(Error::HeadUnderflow);
        }
        let blank = self.blank();
        let cell = cfg.head - 1;
        if cell < cfg.tape.len() {
            cfg.tape[cell] = rule.write;
        } else if rule.write != blank {
            cfg.tape.resize(cell, blank);
            cfg.tape.push(rule.write);
        }
        while cfg.tape.len() > 1 && cfg.tape.last() == Some(&blank) {
            cfg.tape.pop();
        }
        cfg.head = match rule.mv {
            TmMove::Left => cfg.head - 1,
            TmMove::Right => cfg.head + 1,
        };
        cfg.state = rule.next;
        Ok((read, rule))
    }

    /// The symbol under the head mapped to a decision bit.
    pub fn output_bit(&self, cfg: &TmConfig) -> Option<u8> {
        match self.symbol(self.read(cfg)) {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        }
    }
}

/// One TM step: rewrite the current cell, update the state, move the head.
pub fn tm_step(spec: &TmSpec, cfg: &TmConfig) -> Result<TmConfig> {
    let mut next = cfg.clone();
    spec.step_in_place(&mut next)?;
    Ok(next)
}

/// Runs a TM, calling `observe` after every step with the trace record and
/// the configuration reached.
pub fn tm_run_with(
    spec: &TmSpec,
    input: &str,
    limits: ResourceLimits,
    mut observe: impl FnMut(&TraceRecord, &TmConfig),
) -> Result<(RunStats, TmConfig)> {
    let mut cfg = spec.initial_config(input)?;
    let mut space = input.len() + 1;
    if space > limits.max_space {
        return Err(Error::SpaceLimitExceeded {
            limit: limits.max_space,
            reached: space,
        });
    }
    let mut steps = 0u64;
    while cfg.state != spec.halt {
        if steps >= limits.max_steps {
            return Err(Error::StepLimitExceeded(limits.max_steps));
        }
        let (state, head) = (cfg.state, cfg.head);
        let (read, rule) = spec.step_in_place(&mut cfg)?;
        steps += 1;
        if cfg.head > limits.max_space {
            return Err(Error::SpaceLimitExceeded {
                limit: limits.max_space,
                reached: cfg.head,
            });
        }
        space = space.max(cfg.head);
        let rec = TraceRecord {
            i: steps,
            state: spec.state(state).to_string(),
            read: spec.symbol(read).to_string(),
            write: spec.symbol(rule.write).to_string(),
            mv: rule.mv.code().to_string(),
            head: Some(head),
            queue_front: None,
        };
        observe(&rec, &cfg);
    }
    let stats = RunStats {
        time_steps: steps,
        space_cells: space,
        halted: true,
        output_bit: spec.output_bit(&cfg),
    };
    Ok((stats, cfg))
}

pub fn tm_run(spec: &TmSpec, input: &str, limits: ResourceLimits) -> Result<(RunStats, TmConfig)> {
    tm_run_with(spec, input, limits, |_, _| {})
}

/// Every configuration of a halting run, initial configuration first.
pub fn tm_configs(spec: &TmSpec, input: &str, limits: ResourceLimits) -> Result<Vec<TmConfig>> {
    let mut configs = vec![spec.initial_config(input)?];
    tm_run_with(spec, input, limits, |_, c| configs.push(c.clone()))?;
    Ok(configs)
}

// ---------------------------------------------------------------------------
// Post machines

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PmConfig {
    /// Front (oldest) first.
    pub queue: VecDeque<SymId>,
    pub state: StateId,
    pub steps: u64,
}

/// The sequence of enqueued symbols paired with the state current when each
/// was enqueued. The initial queue contents count as entries, in the start
/// state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionLog {
    pub entries: Vec<(SymId, StateId)>,
}

impl ExecutionLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl PmSpec {
    /// Input bits followed by pads up to `queue_size` cells.
    pub fn initial_config(&self, input: &str, queue_size: usize) -> Result<PmConfig> {
        check_bits(input)?;
        if input.len() > queue_size {
            return Err(Error::InputTooLong {
                len: input.len(),
                queue_size,
            });
        }
        let mut queue: VecDeque<SymId> = input
            .chars()
            .map(|c| {
                self.sym_id(&c.to_string())
                    .expect("validated PM has 0 and 1")
            })
            .collect();
        if queue.len() < queue_size {
            let pad = self.sym_id(PAD).ok_or_else(|| {
                Error::Validation("queue needs padding but the alphabet lacks `#`".into())
            })?;
            queue.resize(queue_size, pad);
        }
        Ok(PmConfig {
            queue,
            state: self.start,
            steps: 0,
        })
    }

    fn step_in_place(&self, cfg: &mut PmConfig) -> Result<(SymId, Rule<PmMove>)> {
        if cfg.state == self.halt {
            return Err(Error::Precondition("step from the halt state".into()));
        }
        let &front = cfg.queue.front().ok_or(Error::EmptyQueue)?;
        let rule = *self
            .rule(cfg.state, front)
            .ok_or_else(|| Error::Validation("delta not total".into()))?;
        if rule.mv == PmMove::Right {
            cfg.queue.pop_front();
        }
        cfg.queue.push_back(rule.write);
        cfg.state = rule.next;
        cfg.steps += 1;
        Ok((front, rule))
    }
}

/// One PM step: read the front, dequeue it on `Right`, enqueue the written
/// symbol, change state.
pub fn pm_step(spec: &PmSpec, cfg: &PmConfig) -> Result<PmConfig> {
    let mut next = cfg.clone();
    spec.step_in_place(&mut next)?;
    Ok(next)
}

/// Runs a Post machine from the padded input, calling `observe` after every
/// step with the trace record and the configuration reached.
pub fn pm_run_with(
    spec: &PmSpec,
    input: &str,
    queue_size: usize,
    limits: ResourceLimits,
    mut observe: impl FnMut(&TraceRecord, &PmConfig),
) -> Result<(RunStats, ExecutionLog)> {
    let mut cfg = spec.initial_config(input, queue_size)?;
    let mut log = ExecutionLog {
        entries: cfg.queue.iter().map(|&s| (s, spec.start)).collect(),
    };
    let mut space = cfg.queue.len();
    while cfg.state != spec.halt {
        if cfg.steps >= limits.max_steps {
            return Err(Error::StepLimitExceeded(limits.max_steps));
        }
        let state = cfg.state;
        let (read, rule) = spec.step_in_place(&mut cfg)?;
        space = space.max(cfg.queue.len());
        if space > limits.max_space {
            return Err(Error::SpaceLimitExceeded {
                limit: limits.max_space,
                reached: space,
            });
        }
        log.entries.push((rule.write, rule.next));
        let rec = TraceRecord {
            i: cfg.steps,
            state: spec.state(state).to_string(),
            read: spec.symbol(read).to_string(),
            write: spec.symbol(rule.write).to_string(),
            mv: rule.mv.code().to_string(),
            head: None,
            queue_front: Some(cfg.steps),
        };
        observe(&rec, &cfg);
    }
    let output_bit = log
        .entries
        .last()
        .and_then(|&(s, _)| answer_bit(spec.symbol(s)));
    let stats = RunStats {
        time_steps: cfg.steps,
        space_cells: space,
        halted: true,
        output_bit,
    };
    Ok((stats, log))
}

pub fn pm_run(
    spec: &PmSpec,
    input: &str,
    queue_size: usize,
    limits: ResourceLimits,
) -> Result<(RunStats, ExecutionLog)> {
    pm_run_with(spec, input, queue_size, limits, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> TmSpec {
        let mut b = TmSpec::builder("q0", "halt");
        for s in [START_MARK, BLANK, "0", "1"] {
            b.symbol(s);
        }
        b.rule("q0", ">", "halt", ">", TmMove::Right);
        for s in [BLANK, "0", "1"] {
            b.rule("q0", s, "halt", s, TmMove::Right);
        }
        b.build().unwrap()
    }

    /// Three-rule parity scanner with a two-step answer write-back.
    fn parity() -> TmSpec {
        let mut b = TmSpec::builder("start", "halt");
        for s in [START_MARK, BLANK, "0", "1"] {
            b.symbol(s);
        }
        b.state("even");
        b.state("odd");
        b.state("back");
        for s in [START_MARK, BLANK, "0", "1"] {
            let w = s;
            b.rule("start", s, "even", w, TmMove::Right);
            b.rule("back", s, "halt", w, TmMove::Right);
        }
        for (q, flip) in [("even", "odd"), ("odd", "even")] {
            b.rule(q, "0", q, "0", TmMove::Right);
            b.rule(q, "1", flip, "1", TmMove::Right);
            b.rule(q, ">", q, ">", TmMove::Right);
        }
        b.rule("even", BLANK, "back", "0", TmMove::Left);
        b.rule("odd", BLANK, "back", "1", TmMove::Left);
        b.build().unwrap()
    }

    fn limits() -> ResourceLimits {
        ResourceLimits::new(10_000, 100)
    }

    #[test]
    fn forced_first_move() {
        let spec = parity();
        let cfg = spec.initial_config("1").unwrap();
        let next = tm_step(&spec, &cfg).unwrap();
        assert_eq!(next.head, 2);
        assert_eq!(spec.state(next.state), "even");
        assert_eq!(next.tape, cfg.tape);
    }

    #[test]
    fn parity_flips_on_one() {
        let spec = parity();
        let c1 = tm_step(&spec, &spec.initial_config("1").unwrap()).unwrap();
        let c2 = tm_step(&spec, &c1).unwrap();
        assert_eq!(spec.state(c2.state), "odd");
        let c3 = tm_step(&spec, &c2).unwrap();
        // blank at cell 3 gets the answer, head steps back
        assert_eq!(spec.state(c3.state), "back");
        assert_eq!(spec.symbol(c3.tape[2]), "1");
        assert_eq!(c3.head, 2);
    }

    #[test]
    fn step_from_halt_is_rejected() {
        let spec = minimal();
        let mut cfg = spec.initial_config("").unwrap();
        cfg.state = spec.halt();
        assert!(matches!(tm_step(&spec, &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn head_underflow_on_unvalidated_machine() {
        let mut b = TmSpec::builder("q0", "halt");
        b.symbol(START_MARK);
        b.rule("q0", ">", "halt", ">", TmMove::Left);
        let spec = b.build_unchecked();
        let cfg = TmConfig {
            tape: vec![SymId(0)],
            head: 1,
            state: spec.start(),
        };
        assert_eq!(tm_step(&spec, &cfg), Err(Error::HeadUnderflow));
    }

    #[test]
    fn parity_runs() {
        let spec = parity();
        let (stats, cfg) = tm_run(&spec, "1011", limits()).unwrap();
        assert_eq!(stats.output_bit, Some(1));
        assert_eq!(stats.time_steps, 4 + 3);
        assert_eq!(stats.space_cells, 6);
        assert_eq!(cfg.head, 6);
        let (stats, _) = tm_run(&spec, "1001", limits()).unwrap();
        assert_eq!(stats.output_bit, Some(0));
    }

    #[test]
    fn minimal_machine_on_empty_input() {
        let (stats, cfg) = tm_run(&minimal(), "", limits()).unwrap();
        assert_eq!(stats.time_steps, 1);
        assert_eq!(cfg.head, 2);
        // blank under the head: no decision
        assert_eq!(stats.output_bit, None);
        assert_eq!(stats.space_cells, 2);
    }

    #[test]
    fn limits_are_enforced() {
        let spec = parity();
        assert_eq!(
            tm_run(&spec, "1011", ResourceLimits::new(3, 100)).unwrap_err(),
            Error::StepLimitExceeded(3)
        );
        assert!(matches!(
            tm_run(&spec, "1011", ResourceLimits::new(100, 5)),
            Err(Error::SpaceLimitExceeded { limit: 5, .. })
        ));
        assert!(matches!(
            tm_run(&spec, "10x", limits()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn minimal_document_parses() {
        let doc = r#"{"kind": "tm", "alphabet": [">", "_", "0", "1"],
            "states": ["q0", "halt"], "start": "q0", "halt": "halt",
            "rules": [
              {"state": "q0", "read": ">", "next": "halt", "write": ">", "move": "R"},
              {"state": "q0", "read": "_", "next": "halt", "write": "_", "move": "R"},
              {"state": "q0", "read": "0", "next": "halt", "write": "0", "move": "R"},
              {"state": "q0", "read": "1", "next": "halt", "write": "1", "move": "R"}]}"#;
        let AnyMachine::Tm(tm) = parse_machine(doc).unwrap() else {
            panic!("expected a TM")
        };
        assert_eq!(tm.num_states(), 2);
        assert_eq!(tm, minimal());
    }

    #[test]
    fn missing_rule_is_not_total() {
        let text = minimal().to_json().replace(
            "    {\"state\": \"q0\", \"read\": \"0\", \"next\": \"halt\", \"write\": \"0\", \"move\": \"R\"},\n",
            "",
        );
        match parse_machine(&text) {
            Err(Error::Validation(msg)) => assert!(msg.contains("delta not total"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn left_end_discipline() {
        let text = minimal().to_json().replace(
            "\"read\": \">\", \"next\": \"halt\", \"write\": \">\", \"move\": \"R\"",
            "\"read\": \">\", \"next\": \"halt\", \"write\": \">\", \"move\": \"L\"",
        );
        assert!(
            matches!(parse_machine(&text), Err(Error::Validation(m)) if m.contains("left-move"))
        );
        assert!(matches!(
            parse_machine("{\"kind\": \"tm\""),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn canonical_round_trip() {
        let spec = parity();
        let text = spec.to_json();
        let again = TmSpec::from_json(&text).unwrap();
        assert_eq!(again, spec);
        assert_eq!(again.to_json(), text);
    }

    fn swap_pm(adapted: bool) -> PmSpec {
        let mut b = PmSpec::builder("q", "halt");
        for s in ["a", "b", "c", "0", "1", PAD] {
            b.symbol(s);
        }
        b.state("q2");
        b.adapted(adapted);
        let mv = if adapted { PmMove::Right } else { PmMove::Stay };
        for s in ["a", "b", "c", "0", "1", PAD] {
            b.rule("q", s, "q2", "b", mv);
            b.rule("q2", s, "halt", s, PmMove::Right);
        }
        b.build().unwrap()
    }

    #[test]
    fn adapted_step_rotates() {
        let spec = swap_pm(true);
        let (a, b, c) = (
            spec.sym_id("a").unwrap(),
            spec.sym_id("b").unwrap(),
            spec.sym_id("c").unwrap(),
        );
        let cfg = PmConfig {
            queue: VecDeque::from(vec![a, c]),
            state: spec.start(),
            steps: 0,
        };
        let next = pm_step(&spec, &cfg).unwrap();
        assert_eq!(next.queue, VecDeque::from(vec![c, b]));
        assert_eq!(spec.state(next.state), "q2");
    }

    #[test]
    fn stay_step_grows_queue() {
        let spec = swap_pm(false);
        let (a, b, c) = (
            spec.sym_id("a").unwrap(),
            spec.sym_id("b").unwrap(),
            spec.sym_id("c").unwrap(),
        );
        let cfg = PmConfig {
            queue: VecDeque::from(vec![a, c]),
            state: spec.start(),
            steps: 0,
        };
        let next = pm_step(&spec, &cfg).unwrap();
        assert_eq!(next.queue, VecDeque::from(vec![a, c, b]));
        let empty = PmConfig {
            queue: VecDeque::new(),
            ..cfg
        };
        assert_eq!(pm_step(&spec, &empty), Err(Error::EmptyQueue));
    }

    #[test]
    fn pm_log_prefix_is_input_then_pads() {
        let spec = swap_pm(true);
        let (stats, log) = pm_run(&spec, "10", 4, limits()).unwrap();
        let names: Vec<(&str, &str)> = log
            .entries
            .iter()
            .map(|&(s, q)| (spec.symbol(s), spec.state(q)))
            .collect();
        assert_eq!(
            &names[..4],
            &[("1", "q"), ("0", "q"), ("#", "q"), ("#", "q")]
        );
        assert_eq!(stats.space_cells, 4);
        assert_eq!(stats.time_steps, 2);

        let (_, log) = pm_run(&spec, "10", 2, limits()).unwrap();
        assert_eq!(log.len(), 4);
        assert!(matches!(
            pm_run(&spec, "101", 2, limits()),
            Err(Error::InputTooLong {
                len: 3,
                queue_size: 2
            })
        ));
    }

    #[test]
    fn adapted_validation() {
        let mut b = PmSpec::builder("q", "halt");
        for s in ["0", "1", PAD] {
            b.symbol(s);
        }
        b.adapted(true);
        for s in ["0", "1", PAD] {
            b.rule("q", s, "q", s, PmMove::Right);
        }
        assert!(matches!(b.build(), Err(Error::Validation(m)) if m.contains("re-enters")));
    }
}
