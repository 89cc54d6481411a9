//! Exact forward pass of a compiled transformer over a sliding window.
//!
//! Residuals are sparse integer vectors; attention weights are rationals, so
//! no step rounds. The window keeps at most `S` tokens together with their
//! cached embedding rows, which bounds memory independently of how long
//! generation runs.

use std::collections::VecDeque;

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{answer_bit, ResourceLimits};
use crate::pm2tf::{TfWeights, TokenId};
use crate::sparse::SparseVec;

/// Largest coordinate allowed in `h0`, the attention output and the
/// post-attention residual.
pub const ACTIVATION_CEILING: i64 = 3;

/// How the feed-forward block is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FfMode {
    /// Table lookup on the decoded residual.
    #[default]
    Dispatch,
    /// The synthesized ReLU network; the weights must carry one.
    Mlp,
}

/// Every intermediate of one forward pass, oldest window slot first.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationFrame {
    /// 1-based position of the current (newest) token.
    pub position: u64,
    pub h0: Vec<SparseVec<i64>>,
    pub scores: Vec<i64>,
    pub attention: Vec<Ratio<i64>>,
    /// Offset `i - j` of the attended token.
    pub attended_offset: usize,
    pub attended: SparseVec<Ratio<i64>>,
    pub h_mid: SparseVec<i64>,
    pub ff_out: SparseVec<i64>,
    pub h1: SparseVec<i64>,
    pub flag: i64,
    pub next: TokenId,
}

impl ActivationFrame {
    /// Whether attention put all its mass on a single slot.
    pub fn is_point_mass(&self) -> bool {
        self.attention.iter().filter(|p| !p.is_zero()).count() == 1
    }

    pub fn peak_activation(&self) -> i64 {
        let ints = self
            .h0
            .iter()
            .chain([&self.h_mid])
            .flat_map(|h| h.entries().iter().map(|e| e.1));
        let att = self
            .attended
            .entries()
            .iter()
            .map(|e| e.1.ceil().to_integer());
        ints.chain(att).max().unwrap_or(0)
    }

    fn nnz(&self) -> usize {
        self.h0.iter().map(SparseVec::nnz).sum::<usize>()
            + self.attended.nnz()
            + self.h_mid.nnz()
            + self.ff_out.nnz()
            + self.h1.nnz()
            + 2 * self.scores.len()
    }
}

/// Peak retained state during a generation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryMeter {
    pub peak_window_tokens: usize,
    pub window_capacity: usize,
    pub peak_frame_nnz: usize,
    pub peak_activation: i64,
    pub total_generated: u64,
}

impl MemoryMeter {
    /// Bytes held by the window plus the largest activation frame.
    pub fn peak_bytes(&self) -> usize {
        let slot = std::mem::size_of::<(TokenId, &SparseVec<i64>)>();
        let entry = std::mem::size_of::<(u32, Ratio<i64>)>();
        self.window_capacity * slot + self.peak_frame_nnz * entry
    }
}

/// One emitted token, as written to trace files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenRecord {
    pub i: u64,
    pub symbol: String,
    pub state: String,
    /// Absent for the fill token emitted on empty input.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flag_value: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attended_offset: Option<usize>,
}

/// Hardmax attention of the newest slot over `h0` (oldest first).
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub scores: Vec<i64>,
    pub weights: Vec<Ratio<i64>>,
    pub output: SparseVec<Ratio<i64>>,
}

/// Score of slot `j` is `<Q h0_j, K h0_i>` with `i` the newest slot; ties
/// share the mass equally.
pub fn attend(w: &TfWeights, h0: &[SparseVec<i64>]) -> Attention {
    assert!(!h0.is_empty(), "attention needs at least one slot");
    let key = w.key.apply(&h0[h0.len() - 1]);
    let scores: Vec<i64> = h0.iter().map(|h| w.query.apply(h).dot(&key)).collect();
    let best = *scores.iter().max().unwrap();
    let ties = scores.iter().filter(|&&s| s == best).count();
    let share = Ratio::new(1, ties as i64);
    let mut output = SparseVec::new();
    let weights = scores
        .iter()
        .zip(h0)
        .map(|(&s, h)| {
            if s != best {
                return Ratio::zero();
            }
            output = output.add(&w.value.apply(&h.map(Ratio::from_integer)).scale(share));
            share
        })
        .collect();
    Attention {
        scores,
        weights,
        output,
    }
}

/// Incremental decoder state: the window and the position counter.
pub struct GenState<'w> {
    weights: &'w TfWeights,
    window: VecDeque<(TokenId, &'w SparseVec<i64>)>,
    position: u64,
    mode: FfMode,
    meter: MemoryMeter,
    halted: bool,
}

impl<'w> GenState<'w> {
    pub fn new(weights: &'w TfWeights, mode: FfMode) -> Result<Self> {
        if mode == FfMode::Mlp && weights.mlp.is_none() {
            return Err(Error::Precondition(
                "weights carry no feed-forward network".into(),
            ));
        }
        let window = VecDeque::with_capacity(weights.window);
        let meter = MemoryMeter {
            window_capacity: window.capacity(),
            ..MemoryMeter::default()
        };
        Ok(GenState {
            weights,
            window,
            position: 0,
            mode,
            meter,
            halted: false,
        })
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn window_capacity(&self) -> usize {
        self.window.capacity()
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn meter(&self) -> MemoryMeter {
        self.meter
    }

    pub fn window_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.window.iter().map(|s| s.0)
    }

    /// Appends a token, evicting the oldest once the window is full.
    pub fn push(&mut self, t: TokenId) {
        if self.window.len() == self.weights.window {
            self.window.pop_front();
        }
        self.window.push_back((t, &self.weights.emb[t.index()]));
        self.position += 1;
        self.meter.peak_window_tokens = self.meter.peak_window_tokens.max(self.window.len());
        self.meter.window_capacity = self.meter.window_capacity.max(self.window.capacity());
    }

    /// Runs the forward pass at the current position without emitting.
    pub fn forward(&self) -> Result<ActivationFrame> {
        let w = self.weights;
        let l = &w.layout;
        let len = self.window.len();
        if len == 0 {
            return Err(Error::Precondition(
                "forward pass on an empty context".into(),
            ));
        }
        let h0 = self
            .window
            .iter()
            .enumerate()
            .map(|(k, (_, e))| Ok(e.add(&w.pos(len - 1 - k)?)))
            .collect::<Result<Vec<_>>>()?;
        let cur = &h0[len - 1];
        let Attention {
            scores,
            weights: attention,
            output: attended,
        } = attend(w, &h0);
        let attended_offset = len - 1 - attention.iter().position(|p| !p.is_zero()).unwrap_or(0);
        let mid = w
            .mix
            .apply(&attended)
            .add(&w.bias.map(Ratio::from_integer))
            .add(&cur.map(Ratio::from_integer));
        if let Some(&(i, v)) = mid.entries().iter().find(|e| !e.1.is_integer()) {
            return Err(Error::Activation(format!(
                "coordinate {i} = {v} is fractional"
            )));
        }
        if let Some(&(i, v)) = attended.entries().iter().find(|e| {
            !e.1.is_integer() || e.1.to_integer() < 0 || e.1.to_integer() > ACTIVATION_CEILING
        }) {
            return Err(Error::Activation(format!("a[{i}] = {v}")));
        }
        let h_mid = mid.map(|v| v.to_integer());
        for (name, h) in h0.iter().map(|h| ("h0", h)).chain([("h_mid", &h_mid)]) {
            if let Some(&(i, v)) = h
                .entries()
                .iter()
                .find(|e| e.1 < 0 || e.1 > ACTIVATION_CEILING)
            {
                return Err(Error::Activation(format!("{name}[{i}] = {v}")));
            }
        }
        let flag = h_mid.get(l.flag());
        let ff_out = match self.mode {
            FfMode::Dispatch => {
                let t = w.ff.lookup(l, &h_mid)?;
                SparseVec::from_pairs(vec![(l.logit(t), 1)])
            }
            FfMode::Mlp => {
                if flag != 2 && flag != 3 {
                    return Err(Error::FlagOutOfRange(flag));
                }
                w.mlp.as_ref().expect("checked in new").eval(&h_mid)
            }
        };
        let h1 = h_mid.add(&ff_out);
        let next = argmax(&w.out_proj(&h1), l.vocab)?;
        Ok(ActivationFrame {
            position: self.position,
            h0,
            scores,
            attention,
            attended_offset,
            attended,
            h_mid,
            ff_out,
            h1,
            flag,
            next,
        })
    }

    /// One decode step: forward pass, then append the emitted token.
    pub fn step(&mut self) -> Result<ActivationFrame> {
        if self.halted {
            return Err(Error::Precondition("decode step after halting".into()));
        }
        let frame = self.forward()?;
        self.meter.peak_frame_nnz = self.meter.peak_frame_nnz.max(frame.nnz());
        self.meter.peak_activation = self.meter.peak_activation.max(frame.peak_activation());
        self.emit(frame.next);
        Ok(frame)
    }

    /// Emits the fill token without a forward pass. Only meaningful on an
    /// empty context, where there is nothing to attend over.
    pub fn emit_fill(&mut self) -> Result<TokenId> {
        if self.position != 0 {
            return Err(Error::Precondition(
                "fill shortcut on a non-empty context".into(),
            ));
        }
        let t = self.weights.vocab.fill_token();
        self.emit(t);
        Ok(t)
    }

    fn emit(&mut self, t: TokenId) {
        self.meter.total_generated += 1;
        self.halted = self.weights.vocab.is_halting(t);
        self.push(t);
    }
}

/// Unique maximizer over all `vocab` logits, implicit zeros included.
fn argmax(logits: &SparseVec<i64>, vocab: usize) -> Result<TokenId> {
    let best = logits.entries().iter().map(|e| e.1).max().unwrap_or(0);
    let nonzero_hits = logits.entries().iter().filter(|e| e.1 == best).count();
    let zero_hits = if best == 0 { vocab - logits.nnz() } else { 0 };
    if best < 0 || nonzero_hits + zero_hits != 1 {
        return Err(Error::AmbiguousArgmax);
    }
    let hit = logits.entries().iter().find(|e| e.1 == best).map(|e| e.0);
    Ok(TokenId(hit.unwrap_or_else(|| {
        (0..vocab as u32).find(|&i| logits.get(i) == 0).unwrap()
    })))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    /// Tokens produced by the model (fill and transition tokens).
    pub generated: u64,
    /// Of those, tokens produced while the window was still filling.
    pub fill_tokens: u64,
    pub last: TokenId,
    pub last_symbol: String,
    pub answer: Option<u8>,
    pub meter: MemoryMeter,
}

/// Streams a generation to `observe` without storing it. Stops after the
/// first token whose state is the halt state.
pub fn generate_with(
    weights: &TfWeights,
    input: &str,
    limits: ResourceLimits,
    mode: FfMode,
    mut observe: impl FnMut(TokenId, &GenRecord, Option<&ActivationFrame>),
) -> Result<GenSummary> {
    let v = &weights.vocab;
    if input.len() > weights.window {
        return Err(Error::InputTooLong {
            len: input.len(),
            queue_size: weights.window,
        });
    }
    let mut g = GenState::new(weights, mode)?;
    for c in input.chars() {
        g.push(v.input_token(c)?);
    }
    let record = |t: TokenId, i: u64, frame: Option<&ActivationFrame>| GenRecord {
        i,
        symbol: v.symbol_name(t).to_string(),
        state: v.state_name(t).to_string(),
        flag_value: frame.map(|f| f.flag),
        attended_offset: frame.map(|f| f.attended_offset),
    };
    let mut generated = 0u64;
    let mut fill_tokens = 0u64;
    let mut last;
    if input.is_empty() {
        // nothing to attend over; the first token is always the fill token
        last = g.emit_fill()?;
        generated += 1;
        fill_tokens += 1;
        observe(last, &record(last, 1, None), None);
    } else {
        last = v.input_token(input.chars().last().unwrap())?;
    }
    while !v.is_halting(last) {
        if generated >= limits.max_steps {
            return Err(Error::StepLimitExceeded(limits.max_steps));
        }
        let frame = g.step()?;
        last = frame.next;
        generated += 1;
        if frame.flag == 2 {
            fill_tokens += 1;
        }
        observe(
            last,
            &record(last, g.position(), Some(&frame)),
            Some(&frame),
        );
    }
    let last_symbol = v.symbol_name(last).to_string();
    Ok(GenSummary {
        generated,
        fill_tokens,
        last,
        answer: answer_bit(&last_symbol),
        last_symbol,
        meter: g.meter(),
    })
}

/// A finished generation with its full context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    /// Input tokens followed by every generated token.
    pub context: Vec<TokenId>,
    pub records: Vec<GenRecord>,
    pub summary: GenSummary,
}

impl Generation {
    pub fn answer(&self) -> Result<u8> {
        self.summary
            .answer
            .ok_or_else(|| Error::NoAnswerSymbol(self.summary.last_symbol.clone()))
    }

    /// One JSON object per generated token.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn generate(weights: &TfWeights, input: &str, limits: ResourceLimits) -> Result<Generation> {
    generate_mode(weights, input, limits, FfMode::Dispatch)
}

pub fn generate_mode(
    weights: &TfWeights,
    input: &str,
    limits: ResourceLimits,
    mode: FfMode,
) -> Result<Generation> {
    let mut context = input
        .chars()
        .map(|c| weights.vocab.input_token(c))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let summary = generate_with(weights, input, limits, mode, |t, r, _| {
        context.push(t);
        records.push(r.clone());
    })?;
    Ok(Generation {
        context,
        records,
        summary,
    })
}
