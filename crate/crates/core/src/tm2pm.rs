//! Compiles a Turing machine into an adapted Post machine with a fixed-size
//! queue.
//!
//! The queue stores the TM tape cyclically. The compiled machine always keeps
//! one tape cell in a state-carried hold register, so the logical ring of
//! cells is `[held] ++ queue`, one cell longer than the queue. In the
//! canonical phase the held cell is the head cell and the queue runs from the
//! head's right neighbour around to its left neighbour.
//!
//! * Right move: enqueue the rewritten cell, hold the dequeued one. One step.
//! * Left move: enqueue the rewritten cell with an L-mark ("the head is my
//!   left neighbour"), then rotate in lag-one mode until the L-marked cell is
//!   dequeued; at that moment the register holds the new head cell, which is
//!   enqueued with an H-mark ("the head is me"). A second lag-one rotation
//!   stops when the H-marked cell comes back, leaving it in the register.
//!   `2P + 1` steps.
//!
//! The very first step inserts `>` at the rear while holding the first input
//! cell, which both builds the tape ring from the raw `input ++ #...` queue
//! and performs the TM's forced first move off `>`. Pads stand for blanks.
//! None of the rules depend on the queue size, so one compiled machine serves
//! every input length.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::machine::{
    PmConfig, PmMove, PmSpec, Rule, StateId, SymId, TmConfig, TmMove, TmSpec, ANSWER_ONE,
    ANSWER_ZERO, BLANK, PAD, START_MARK,
};

/// Extra physical queue cells beyond the declared TM space bound.
pub const QUEUE_SLACK: usize = 2;
/// `pm_steps <= STEP_BOUND_FACTOR * P * t + P`.
pub const STEP_BOUND_FACTOR: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFlag {
    Plain,
    /// Untouched padding; reads as a blank.
    Pad,
    /// L-mark: the head is this cell's left neighbour.
    HeadLeft,
    /// The head is this cell.
    HeadHere,
    /// Final answer cell.
    Answer,
}

/// A compiled-PM queue symbol: a TM tape symbol plus a flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QueueCell {
    pub base: SymId,
    pub flag: CellFlag,
}

/// What a compiled-PM state is doing. `tm_state` and `held` refer to the
/// source TM's ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Start,
    /// Canonical: `held` is the head cell.
    Head {
        tm_state: StateId,
        held: SymId,
    },
    SeekLeftMark {
        tm_state: StateId,
        held: SymId,
    },
    SeekHeadMark {
        tm_state: StateId,
        held: SymId,
    },
    Halt,
}

impl Phase {
    pub fn is_checkpoint(self) -> bool {
        matches!(self, Phase::Start | Phase::Head { .. })
    }

    fn name(self, tm: &TmSpec) -> String {
        match self {
            Phase::Start => "start".into(),
            Phase::Halt => "halt".into(),
            Phase::Head { tm_state, held } => {
                format!("head:{}:{}", tm.state(tm_state), tm.symbol(held))
            }
            Phase::SeekLeftMark { tm_state, held } => {
                format!("seekL:{}:{}", tm.state(tm_state), tm.symbol(held))
            }
            Phase::SeekHeadMark { tm_state, held } => {
                format!("seekH:{}:{}", tm.state(tm_state), tm.symbol(held))
            }
        }
    }
}

/// Phase tags for every compiled state plus the cell meaning of every PM
/// symbol; decodes checkpoint configurations back to TM configurations.
#[derive(Clone, Debug)]
pub struct CheckpointMap {
    phases: Vec<Phase>,
    cells: Vec<QueueCell>,
    tm_start: StateId,
    tm_blank: SymId,
    tm_start_mark: SymId,
}

impl CheckpointMap {
    pub fn phase(&self, state: StateId) -> Phase {
        self.phases[state.index()]
    }

    pub fn cell(&self, sym: SymId) -> QueueCell {
        self.cells[sym.index()]
    }

    pub fn is_checkpoint(&self, state: StateId) -> bool {
        self.phase(state).is_checkpoint()
    }

    fn tape_symbol(&self, sym: SymId) -> SymId {
        let cell = self.cell(sym);
        match cell.flag {
            CellFlag::Pad => self.tm_blank,
            _ => cell.base,
        }
    }

    /// Marked cells and answer cells currently in the queue.
    pub fn marker_census(&self, cfg: &PmConfig) -> MarkerCensus {
        let mut census = MarkerCensus::default();
        for &s in &cfg.queue {
            match self.cell(s).flag {
                CellFlag::HeadLeft | CellFlag::HeadHere => census.marks += 1,
                CellFlag::Answer => census.answers += 1,
                CellFlag::Plain | CellFlag::Pad => {}
            }
        }
        census
    }

    pub fn decode(&self, pm: &PmSpec, cfg: &PmConfig) -> Result<TmConfig> {
        let (tm_state, ring): (StateId, Vec<SymId>) = match self.phase(cfg.state) {
            Phase::Start => {
                let mut tape = vec![self.tm_start_mark];
                tape.extend(cfg.queue.iter().map(|&s| self.tape_symbol(s)));
                return Ok(trimmed(tape, 1, self.tm_start, self.tm_blank));
            }
            Phase::Head { tm_state, held } => {
                let mut ring = Vec::with_capacity(cfg.queue.len() + 1);
                ring.push(held);
                ring.extend(cfg.queue.iter().map(|&s| self.tape_symbol(s)));
                (tm_state, ring)
            }
            _ => return Err(Error::NotAtCheckpoint(pm.state(cfg.state).to_string())),
        };
        let k = ring
            .iter()
            .position(|&s| s == self.tm_start_mark)
            .ok_or_else(|| Error::Validation("queue holds no left-end marker".into()))?;
        let n = ring.len();
        let head = (n - k) % n + 1;
        let mut tape = ring[k..].to_vec();
        tape.extend_from_slice(&ring[..k]);
        Ok(trimmed(tape, head, tm_state, self.tm_blank))
    }
}

fn trimmed(mut tape: Vec<SymId>, head: usize, state: StateId, blank: SymId) -> TmConfig {
    while tape.len() > 1 && tape.last() == Some(&blank) {
        tape.pop();
    }
    TmConfig { tape, head, state }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MarkerCensus {
    pub marks: usize,
    pub answers: usize,
}

#[derive(Clone, Debug)]
pub struct CompileArtifact {
    pub tm: TmSpec,
    pub pm: PmSpec,
    /// Physical queue cells, `P = S + 2`.
    pub queue_size: usize,
    pub space_bound: usize,
    pub map: CheckpointMap,
    pub step_bound_factor: u64,
    /// `ceil(log2 |Q_PM|)`, the state width the transformer stage needs.
    pub state_bits: u32,
}

#[derive(Serialize)]
struct FlagEntry<'a> {
    base: &'a str,
    flag: CellFlag,
}

#[derive(Serialize)]
struct Metadata<'a> {
    queue_size: usize,
    space_bound: usize,
    checkpoint_states: Vec<&'a str>,
    flag_encoding: std::collections::BTreeMap<&'a str, FlagEntry<'a>>,
    step_bound_factor: u64,
    state_bits: u32,
}

impl CompileArtifact {
    pub fn decode_checkpoint(&self, cfg: &PmConfig) -> Result<TmConfig> {
        self.map.decode(&self.pm, cfg)
    }

    pub fn is_checkpoint(&self, state: StateId) -> bool {
        self.map.is_checkpoint(state)
    }

    /// The sidecar metadata document.
    pub fn metadata_json(&self) -> String {
        let checkpoint_states = (0..self.pm.num_states())
            .map(|q| StateId(q as u16))
            .filter(|&q| self.map.is_checkpoint(q))
            .map(|q| self.pm.state(q))
            .collect();
        let flag_encoding = (0..self.pm.num_symbols())
            .map(|s| {
                let s = SymId(s as u16);
                let cell = self.map.cell(s);
                (
                    self.pm.symbol(s),
                    FlagEntry {
                        base: self.tm.symbol(cell.base),
                        flag: cell.flag,
                    },
                )
            })
            .collect();
        let meta = Metadata {
            queue_size: self.queue_size,
            space_bound: self.space_bound,
            checkpoint_states,
            flag_encoding,
            step_bound_factor: self.step_bound_factor,
            state_bits: self.state_bits,
        };
        let mut out = serde_json::to_string_pretty(&meta).expect("metadata serialization");
        out.push('\n');
        out
    }
}

/// Physical queue size for a TM using `space` cells on inputs of length `n`.
pub fn plan_queue_size(_spec: &TmSpec, input_len: usize, space: usize) -> Result<usize> {
    if space < input_len + 1 {
        return Err(Error::Precondition(format!(
            "space {space} cannot hold `>` plus an input of length {input_len}"
        )));
    }
    Ok(space + QUEUE_SLACK)
}

pub(crate) fn bits_for(states: usize) -> u32 {
    let mut c = 1;
    while (1usize << c) < states {
        c += 1;
    }
    c
}

struct Alphabet {
    names: Vec<String>,
    cells: Vec<QueueCell>,
    index: HashMap<QueueCell, SymId>,
}

impl Alphabet {
    fn push(&mut self, name: String, cell: QueueCell) {
        self.index.insert(cell, SymId(self.names.len() as u16));
        self.names.push(name);
        self.cells.push(cell);
    }

    fn id(&self, base: SymId, flag: CellFlag) -> SymId {
        self.index[&QueueCell { base, flag }]
    }
}

/// Compiles `tm` for a declared space bound `space_bound` (cells, counting
/// `>`). The rules do not depend on the bound; it only fixes the queue size.
pub fn compile_tm_to_pm(tm: &TmSpec, space_bound: usize) -> Result<CompileArtifact> {
    use crate::machine::Validate;
    tm.validate()?;
    if space_bound < 2 {
        return Err(Error::Precondition("space bound must be at least 2".into()));
    }
    let blank = tm.sym_id(BLANK).expect("validated");
    let start_mark = tm.sym_id(START_MARK).expect("validated");
    let tm_syms: Vec<SymId> = (0..tm.num_symbols()).map(|s| SymId(s as u16)).collect();
    let zero = tm.sym_id("0").expect("validated");
    let one = tm.sym_id("1").expect("validated");

    let mut alpha = Alphabet {
        names: Vec::new(),
        cells: Vec::new(),
        index: HashMap::new(),
    };
    for &s in &tm_syms {
        alpha.push(
            tm.symbol(s).to_string(),
            QueueCell {
                base: s,
                flag: CellFlag::Plain,
            },
        );
    }
    alpha.push(
        PAD.to_string(),
        QueueCell {
            base: blank,
            flag: CellFlag::Pad,
        },
    );
    for &s in &tm_syms {
        alpha.push(
            format!("{}/L", tm.symbol(s)),
            QueueCell {
                base: s,
                flag: CellFlag::HeadLeft,
            },
        );
        alpha.push(
            format!("{}/H", tm.symbol(s)),
            QueueCell {
                base: s,
                flag: CellFlag::HeadHere,
            },
        );
    }
    alpha.push(
        ANSWER_ZERO.to_string(),
        QueueCell {
            base: zero,
            flag: CellFlag::Answer,
        },
    );
    alpha.push(
        ANSWER_ONE.to_string(),
        QueueCell {
            base: one,
            flag: CellFlag::Answer,
        },
    );
    let pad = alpha.id(blank, CellFlag::Pad);
    let plain = |s: SymId| alpha.id(s, CellFlag::Plain);

    // breadth-first over reachable phases; unreachable reads go to a trap that
    // halts with a pad (never an answer).
    let mut phases: Vec<Phase> = vec![Phase::Start, Phase::Halt];
    let mut phase_ids: HashMap<Phase, StateId> = HashMap::new();
    phase_ids.insert(Phase::Start, StateId(0));
    phase_ids.insert(Phase::Halt, StateId(1));
    let mut rules: Vec<(StateId, SymId, Phase, SymId)> = Vec::new();
    let trap = (Phase::Halt, pad);

    let mut cursor = 0;
    while cursor < phases.len() {
        let phase = phases[cursor];
        let state = StateId(cursor as u16);
        cursor += 1;
        if phase == Phase::Halt {
            continue;
        }
        for (k, &cell) in alpha.cells.iter().enumerate() {
            let read = SymId(k as u16);
            let tape_sym = match cell.flag {
                CellFlag::Plain => Some(cell.base),
                CellFlag::Pad => Some(blank),
                _ => None,
            };
            let (next, write) = match (phase, tape_sym) {
                (Phase::Start, Some(y)) => {
                    let r = tm.rule(tm.start(), start_mark).expect("validated");
                    (
                        Phase::Head {
                            tm_state: r.next,
                            held: y,
                        },
                        plain(start_mark),
                    )
                }
                (Phase::Head { tm_state, held }, _) if tm_state == tm.halt() => {
                    let write = if held == zero {
                        alpha.id(zero, CellFlag::Answer)
                    } else if held == one {
                        alpha.id(one, CellFlag::Answer)
                    } else {
                        plain(held)
                    };
                    (Phase::Halt, write)
                }
                (Phase::Head { tm_state, held }, Some(y)) => {
                    let r = tm.rule(tm_state, held).expect("validated");
                    match r.mv {
                        // stepping onto `>` from the right end: space bound overrun
                        TmMove::Right if y == start_mark => trap,
                        TmMove::Right => (
                            Phase::Head {
                                tm_state: r.next,
                                held: y,
                            },
                            plain(r.write),
                        ),
                        TmMove::Left => (
                            Phase::SeekLeftMark {
                                tm_state: r.next,
                                held: y,
                            },
                            alpha.id(r.write, CellFlag::HeadLeft),
                        ),
                    }
                }
                (Phase::SeekLeftMark { tm_state, held }, Some(y)) => {
                    (Phase::SeekLeftMark { tm_state, held: y }, plain(held))
                }
                (Phase::SeekLeftMark { tm_state, held }, None)
                    if cell.flag == CellFlag::HeadLeft =>
                {
                    (
                        Phase::SeekHeadMark {
                            tm_state,
                            held: cell.base,
                        },
                        alpha.id(held, CellFlag::HeadHere),
                    )
                }
                (Phase::SeekHeadMark { tm_state, held }, Some(y)) => {
                    (Phase::SeekHeadMark { tm_state, held: y }, plain(held))
                }
                (Phase::SeekHeadMark { tm_state, held }, None)
                    if cell.flag == CellFlag::HeadHere =>
                {
                    (
                        Phase::Head {
                            tm_state,
                            held: cell.base,
                        },
                        plain(held),
                    )
                }
                _ => trap,
            };
            phase_ids.entry(next).or_insert_with(|| {
                phases.push(next);
                StateId((phases.len() - 1) as u16)
            });
            rules.push((state, read, next, write));
        }
    }
    if phases.len() > u16::MAX as usize {
        return Err(Error::Validation(
            "compiled machine has too many states".into(),
        ));
    }

    let start_name = Phase::Start.name(tm);
    let halt_name = Phase::Halt.name(tm);
    let mut b = PmSpec::builder(&start_name, &halt_name);
    b.adapted(true);
    for name in &alpha.names {
        b.symbol(name);
    }
    for &phase in &phases {
        b.state(&phase.name(tm));
    }
    for (state, read, next, write) in rules {
        b.rule_ids(
            state,
            read,
            Rule {
                next: phase_ids[&next],
                write,
                mv: PmMove::Right,
            },
        );
    }
    let pm = b.build()?;
    let state_bits = bits_for(pm.num_states());
    Ok(CompileArtifact {
        tm: tm.clone(),
        pm,
        queue_size: space_bound + QUEUE_SLACK,
        space_bound,
        map: CheckpointMap {
            phases,
            cells: alpha.cells,
            tm_start: tm.start(),
            tm_blank: blank,
            tm_start_mark: start_mark,
        },
        step_bound_factor: STEP_BOUND_FACTOR,
        state_bits,
    })
}

/// `decode_checkpoint` as a free function over an artifact.
pub fn decode_checkpoint(artifact: &CompileArtifact, cfg: &PmConfig) -> Result<TmConfig> {
    artifact.decode_checkpoint(cfg)
}

/// Every checkpoint configuration of a PM run, decoded, in order.
pub fn checkpoint_trace(
    artifact: &CompileArtifact,
    input: &str,
    limits: crate::machine::ResourceLimits,
) -> Result<Vec<TmConfig>> {
    let initial = artifact.pm.initial_config(input, artifact.queue_size)?;
    let mut out = vec![artifact.decode_checkpoint(&initial)?];
    let mut failure = None;
    crate::machine::pm_run_with(
        &artifact.pm,
        input,
        artifact.queue_size,
        limits,
        |_, cfg| {
            if failure.is_none() && artifact.is_checkpoint(cfg.state) {
                match artifact.decode_checkpoint(cfg) {
                    Ok(c) => out.push(c),
                    Err(e) => failure = Some(e),
                }
            }
        },
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
