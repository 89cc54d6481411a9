//! Post machine → one-layer, one-head hardmax transformer with integer
//! weights.
//!
//! Residual layout (0-based coordinates):
//!
//! | block | width | contents |
//! |-------|-------|----------|
//! | B0 | 1 | constant 1 |
//! | B1 | m | one-hot current symbol |
//! | B2 | c | state code, MSB first, start state = all zeros |
//! | B3 | m | symbol copied out of the attended token |
//! | B4 | 1 | flag: position marker, then marker sum after attention |
//! | B5 | \|V\| | logits |
//!
//! For a 3-symbol machine B0..B4 is exactly the `c + 8` wide residual of
//! the hand construction; see [`verify_paper_literal`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{PmMove, PmSpec, StateId, SymId, PAD};
use crate::sparse::{MatrixDoc, SparseMatrix, SparseVec};
use crate::tm2pm::bits_for;

/// Flag value injected at the current position.
pub const CURRENT_FLAG: i64 = 1;
/// Flag value injected at the oldest position of a full window.
pub const OLDEST_FLAG: i64 = 2;
/// Default hidden-unit budget for [`synthesize_ff_mlp`].
pub const DEFAULT_HIDDEN_CAP: usize = 1 << 20;

const WEIGHTS_FORMAT: &str = "tapeformer-weights/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Tokens are `(symbol, state)` pairs over the full product; the id is
/// `symbol * |Q| + state`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub symbols: Vec<String>,
    pub states: Vec<String>,
    pub start: StateId,
    pub halt: StateId,
    pub pad: SymId,
    pub state_bits: u32,
    /// Code of each state, indexed by state id.
    pub state_codes: Vec<u32>,
}

impl TokenVocab {
    fn for_pm(pm: &PmSpec) -> Result<Self> {
        let pad = pm
            .sym_id(PAD)
            .ok_or_else(|| Error::Validation("alphabet lacks the pad symbol `#`".into()))?;
        let start = pm.start();
        // start gets code 0; the others keep their relative order
        let state_codes = (0..pm.num_states())
            .map(|q| match q.cmp(&start.index()) {
                std::cmp::Ordering::Equal => 0,
                std::cmp::Ordering::Less => q as u32 + 1,
                std::cmp::Ordering::Greater => q as u32,
            })
            .collect();
        Ok(TokenVocab {
            symbols: pm.symbols().to_vec(),
            states: pm.states().to_vec(),
            start,
            halt: pm.halt(),
            pad,
            state_bits: bits_for(pm.num_states()),
            state_codes,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len() * self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, sym: SymId, state: StateId) -> TokenId {
        TokenId((sym.index() * self.states.len() + state.index()) as u32)
    }

    pub fn split(&self, t: TokenId) -> (SymId, StateId) {
        let n = self.states.len();
        (
            SymId((t.index() / n) as u16),
            StateId((t.index() % n) as u16),
        )
    }

    pub fn symbol_name(&self, t: TokenId) -> &str {
        &self.symbols[self.split(t).0.index()]
    }

    pub fn state_name(&self, t: TokenId) -> &str {
        &self.states[self.split(t).1.index()]
    }

    pub fn name(&self, t: TokenId) -> String {
        format!("({},{})", self.symbol_name(t), self.state_name(t))
    }

    pub fn is_halting(&self, t: TokenId) -> bool {
        self.split(t).1 == self.halt
    }

    pub fn code(&self, q: StateId) -> u32 {
        self.state_codes[q.index()]
    }

    /// Token for an input bit in the start state.
    pub fn input_token(&self, bit: char) -> Result<TokenId> {
        let s = self
            .symbols
            .iter()
            .position(|x| x.len() == 1 && x.starts_with(bit))
            .filter(|_| bit == '0' || bit == '1')
            .ok_or_else(|| Error::InvalidInput(format!("`{bit}` is not an input bit")))?;
        Ok(self.token(SymId(s as u16), self.start))
    }

    pub fn fill_token(&self) -> TokenId {
        self.token(self.pad, self.start)
    }
}

/// Coordinate plan of the residual stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub symbols: usize,
    pub state_bits: usize,
    pub vocab: usize,
}

impl LayoutPlan {
    pub fn new(symbols: usize, state_bits: usize, vocab: usize) -> Self {
        LayoutPlan {
            symbols,
            state_bits,
            vocab,
        }
    }

    pub fn constant(&self) -> u32 {
        0
    }

    pub fn symbol(&self, k: usize) -> u32 {
        (1 + k) as u32
    }

    pub fn state_bit(&self, b: usize) -> u32 {
        (1 + self.symbols + b) as u32
    }

    pub fn attended(&self, k: usize) -> u32 {
        (1 + self.symbols + self.state_bits + k) as u32
    }

    pub fn flag(&self) -> u32 {
        (1 + 2 * self.symbols + self.state_bits) as u32
    }

    pub fn logit(&self, t: TokenId) -> u32 {
        self.flag() + 1 + t.0
    }

    /// Width of B0..B4.
    pub fn core_dim(&self) -> usize {
        2 + 2 * self.symbols + self.state_bits
    }

    pub fn dim(&self) -> usize {
        self.core_dim() + self.vocab
    }
}

/// Positional encoding: nonzero only at the current and oldest offsets.
pub fn build_pos(layout: &LayoutPlan, window: usize, offset: usize) -> Result<SparseVec<i64>> {
    if offset >= window {
        return Err(Error::OffsetOutOfWindow { offset, window });
    }
    let flag = if offset == 0 {
        CURRENT_FLAG
    } else if offset == window - 1 {
        OLDEST_FLAG
    } else {
        return Ok(SparseVec::new());
    };
    Ok(SparseVec::from_pairs(vec![(layout.flag(), flag)]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRow {
    pub symbol: SymId,
    pub state: StateId,
    pub token: TokenId,
}

/// Feed-forward behaviour as a lookup table: flag 2 emits the fill token,
/// flag 3 emits `delta(attended symbol, current state)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FfDispatch {
    pub fill: TokenId,
    rows: Vec<DispatchRow>,
    /// `symbol * 2^c + code` to token.
    index: Vec<Option<TokenId>>,
}

impl FfDispatch {
    fn new(vocab: &TokenVocab, fill: TokenId, rows: Vec<DispatchRow>) -> Self {
        let mut index = vec![None; vocab.symbols.len() << vocab.state_bits];
        for r in &rows {
            index[(r.symbol.index() << vocab.state_bits) | vocab.code(r.state) as usize] =
                Some(r.token);
        }
        FfDispatch { fill, rows, index }
    }

    pub fn rows(&self) -> &[DispatchRow] {
        &self.rows
    }

    /// Decodes the post-attention residual and looks up the next token.
    pub fn lookup(&self, layout: &LayoutPlan, h: &SparseVec<i64>) -> Result<TokenId> {
        match h.get(layout.flag()) {
            2 => Ok(self.fill),
            3 => {
                let mut sym = None;
                for k in 0..layout.symbols {
                    match h.get(layout.attended(k)) {
                        0 => {}
                        1 if sym.is_none() => sym = Some(k),
                        v => {
                            return Err(Error::Activation(format!(
                                "attended-symbol block is not one-hot (coordinate {k} = {v})"
                            )))
                        }
                    }
                }
                let sym = sym
                    .ok_or_else(|| Error::Activation("attended-symbol block is all zero".into()))?;
                let mut code = 0usize;
                for b in 0..layout.state_bits {
                    let v = h.get(layout.state_bit(b));
                    if v != 0 && v != 1 {
                        return Err(Error::Activation(format!("state bit {b} = {v}")));
                    }
                    code = code << 1 | v as usize;
                }
                self.index[(sym << layout.state_bits) | code].ok_or_else(|| {
                    Error::MissingDispatch(format!("symbol #{sym}, state code {code}"))
                })
            }
            f => Err(Error::FlagOutOfRange(f)),
        }
    }
}

/// Two-layer ReLU network `W2 relu(W1 h + b1)` with integer weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReluNet {
    pub w1: SparseMatrix,
    pub b1: Vec<i64>,
    pub w2: SparseMatrix,
}

impl ReluNet {
    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn eval(&self, h: &SparseVec<i64>) -> SparseVec<i64> {
        let mut z = self.b1.clone();
        for &(r, v) in self.w1.apply(h).entries() {
            z[r as usize] += v;
        }
        let act = SparseVec::from_pairs(
            z.into_iter()
                .enumerate()
                .filter(|&(_, v)| v > 0)
                .map(|(j, v)| (j as u32, v))
                .collect(),
        );
        self.w2.apply(&act)
    }

    /// Input coordinates with at least one nonzero first-layer weight.
    pub fn read_columns(&self) -> Vec<u32> {
        let mut cols: Vec<u32> = self.w1.triplets().iter().map(|t| t.1).collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

/// Builds a ReLU network equal to `dispatch` on every flag-2/flag-3
/// residual with one-hot B3 and 0/1 state bits.
///
/// One unit `relu(3 - flag)` fires for the fill branch; each table row gets
/// a unit that reaches 1 only on its exact `(symbol, code, flag 3)` pattern.
pub fn synthesize_ff_mlp(
    layout: &LayoutPlan,
    vocab: &TokenVocab,
    dispatch: &FfDispatch,
    cap: usize,
) -> Result<ReluNet> {
    let needed = 1 + dispatch.rows.len();
    if needed > cap {
        return Err(Error::SynthesisOverflow { needed, cap });
    }
    let c = layout.state_bits;
    let mut w1 = vec![(0u32, layout.flag(), -1i64)];
    let mut b1 = vec![3i64];
    let mut w2 = vec![(layout.logit(dispatch.fill), 0u32, 1i64)];
    for (k, row) in dispatch.rows.iter().enumerate() {
        let unit = (k + 1) as u32;
        let code = vocab.code(row.state);
        w1.push((unit, layout.attended(row.symbol.index()), 1));
        w1.push((unit, layout.flag(), 1));
        for b in 0..c {
            let bit = code >> (c - 1 - b) & 1;
            w1.push((unit, layout.state_bit(b), if bit == 1 { 1 } else { -1 }));
        }
        b1.push(-(code.count_ones() as i64) - 3);
        w2.push((layout.logit(row.token), unit, 1));
    }
    Ok(ReluNet {
        w1: SparseMatrix::from_triplets(needed, layout.dim(), w1),
        b1,
        w2: SparseMatrix::from_triplets(layout.dim(), needed, w2),
    })
}

/// Every post-attention residual the feed-forward block can see: flag 2 or
/// 3, any attended symbol, any non-halting state. The current-symbol block
/// is set to the attended symbol; callers should check separately that the
/// network never reads B1.
pub fn ff_input_space(weights: &TfWeights) -> Vec<SparseVec<i64>> {
    let l = &weights.layout;
    let v = &weights.vocab;
    let mut out = Vec::new();
    for flag in [2i64, 3] {
        for s in 0..v.symbols.len() {
            for q in 0..v.states.len() {
                let q = StateId(q as u16);
                if q == v.halt {
                    continue;
                }
                let tok = v.token(SymId(s as u16), q);
                let mut h = weights.emb[tok.index()].clone();
                h = h.add(&SparseVec::from_pairs(vec![
                    (l.attended(s), 1),
                    (l.flag(), flag),
                ]));
                out.push(h);
            }
        }
    }
    out
}

/// A compiled transformer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TfWeights {
    pub layout: LayoutPlan,
    pub vocab: TokenVocab,
    /// Context window `S`; equals the queue size of the source machine.
    pub window: usize,
    /// Embedding row of every token.
    pub emb: Vec<SparseVec<i64>>,
    pub key: SparseMatrix,
    pub query: SparseMatrix,
    pub value: SparseMatrix,
    pub mix: SparseMatrix,
    pub bias: SparseVec<i64>,
    pub ff: FfDispatch,
    pub mlp: Option<ReluNet>,
}

fn embedding(layout: &LayoutPlan, vocab: &TokenVocab, t: TokenId) -> SparseVec<i64> {
    let (s, q) = vocab.split(t);
    let code = vocab.code(q);
    let c = layout.state_bits;
    let mut pairs = vec![(layout.constant(), 1), (layout.symbol(s.index()), 1)];
    for b in 0..c {
        if code >> (c - 1 - b) & 1 == 1 {
            pairs.push((layout.state_bit(b), 1));
        }
    }
    SparseVec::from_pairs(pairs)
}

/// Compiles an adapted PM into transformer weights with context window
/// `window` (the queue size the PM runs with).
pub fn compile_pm_to_tf(pm: &PmSpec, window: usize) -> Result<TfWeights> {
    if !pm.is_adapted() {
        return Err(Error::NotAdapted(
            "only machines that always dequeue and never re-enter start compile".into(),
        ));
    }
    if window < 2 {
        return Err(Error::Precondition(format!(
            "window must be at least 2, got {window}"
        )));
    }
    let vocab = TokenVocab::for_pm(pm)?;
    let m = vocab.symbols.len();
    let layout = LayoutPlan::new(m, vocab.state_bits as usize, vocab.len());
    let d = layout.dim();
    let emb = (0..vocab.len() as u32)
        .map(|t| embedding(&layout, &vocab, TokenId(t)))
        .collect();
    let f = layout.flag();
    let key = SparseMatrix::from_triplets(d, d, vec![(f, layout.constant(), 1)]);
    let query = SparseMatrix::from_triplets(d, d, vec![(f, f, 1)]);
    let mut v = vec![(f, f, 1)];
    for k in 0..m {
        v.push((layout.attended(k), layout.symbol(k), 1));
    }
    let value = SparseMatrix::from_triplets(d, d, v);
    let mut rows = Vec::new();
    for (q, s, rule) in pm.rules() {
        debug_assert_eq!(rule.mv, PmMove::Right);
        rows.push(DispatchRow {
            symbol: s,
            state: q,
            token: vocab.token(rule.write, rule.next),
        });
    }
    rows.sort_by_key(|r| (r.symbol, r.state));
    let ff = FfDispatch::new(&vocab, vocab.fill_token(), rows);
    Ok(TfWeights {
        layout,
        vocab,
        window,
        emb,
        key,
        query,
        value,
        mix: SparseMatrix::identity(d),
        bias: SparseVec::new(),
        ff,
        mlp: None,
    })
}

impl TfWeights {
    pub fn pos(&self, offset: usize) -> Result<SparseVec<i64>> {
        build_pos(&self.layout, self.window, offset)
    }

    /// Synthesizes and attaches the ReLU form of the feed-forward block.
    pub fn attach_mlp(&mut self, cap: usize) -> Result<()> {
        self.mlp = Some(synthesize_ff_mlp(&self.layout, &self.vocab, &self.ff, cap)?);
        Ok(())
    }

    /// The logit block of a residual.
    pub fn out_proj(&self, h: &SparseVec<i64>) -> SparseVec<i64> {
        let lo = self.layout.flag() + 1;
        h.slice(lo, lo + self.layout.vocab as u32)
    }

    /// Canonical JSON document. Two compilations of the same machine differ
    /// only in `pos.window`.
    pub fn to_json(&self) -> String {
        let doc = WeightsDoc {
            format: WEIGHTS_FORMAT.into(),
            layout: self.layout,
            vocab: self.vocab.clone(),
            pos: PosDoc {
                window: self.window,
                current_flag: CURRENT_FLAG,
                oldest_flag: OLDEST_FLAG,
            },
            emb: self.emb.clone(),
            key: self.key.to_doc(),
            query: self.query.to_doc(),
            value: self.value.to_doc(),
            mix: self.mix.to_doc(),
            bias: self.bias.clone(),
            ff: FfDoc {
                fill: self.ff.fill,
                table: self.ff.rows.clone(),
            },
            mlp: self.mlp.as_ref().map(|n| MlpDoc {
                w1: n.w1.to_doc(),
                b1: n.b1.clone(),
                w2: n.w2.to_doc(),
            }),
            out_proj: OutProjDoc {
                offset: self.layout.flag() + 1,
                width: self.layout.vocab,
            },
        };
        let mut s = serde_json::to_string(&doc).expect("weights serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: WeightsDoc = serde_json::from_str(text)?;
        if doc.format != WEIGHTS_FORMAT {
            return Err(Error::Parse(format!(
                "unknown weights format `{}`",
                doc.format
            )));
        }
        if doc.pos.current_flag != CURRENT_FLAG || doc.pos.oldest_flag != OLDEST_FLAG {
            return Err(Error::Validation("unsupported positional flags".into()));
        }
        let vocab = doc.vocab;
        let layout = doc.layout;
        if layout.vocab != vocab.len()
            || layout.symbols != vocab.symbols.len()
            || vocab.state_codes.len() != vocab.states.len()
            || doc.emb.len() != vocab.len()
            || doc.out_proj.offset != layout.flag() + 1
            || doc.out_proj.width != layout.vocab
            || doc.pos.window < 2
        {
            return Err(Error::Validation("weights document is inconsistent".into()));
        }
        let d = layout.dim();
        let mat = |m: MatrixDoc| {
            if m.rows != d
                || m.cols != d
                || m.entries
                    .iter()
                    .any(|e| e.0 as usize >= d || e.1 as usize >= d)
            {
                Err(Error::Validation(
                    "matrix shape does not match layout".into(),
                ))
            } else {
                Ok(SparseMatrix::from_doc(m))
            }
        };
        let (m, nq, nv) = (vocab.symbols.len(), vocab.states.len(), vocab.len());
        let in_range = doc.ff.fill.index() < nv
            && vocab.start.index() < nq
            && vocab.halt.index() < nq
            && vocab.pad.index() < m
            && vocab
                .state_codes
                .iter()
                .all(|&c| c >> vocab.state_bits == 0)
            && doc
                .ff
                .table
                .iter()
                .all(|r| r.symbol.index() < m && r.state.index() < nq && r.token.index() < nv)
            && doc
                .emb
                .iter()
                .all(|e| e.entries().iter().all(|&(i, _)| (i as usize) < d));
        if !in_range {
            return Err(Error::Validation(
                "weights document index out of range".into(),
            ));
        }
        let ff = FfDispatch::new(&vocab, doc.ff.fill, doc.ff.table);
        let mlp = match doc.mlp {
            Some(n) => Some(ReluNet {
                w1: SparseMatrix::from_doc(n.w1),
                b1: n.b1,
                w2: SparseMatrix::from_doc(n.w2),
            }),
            None => None,
        };
        Ok(TfWeights {
            layout,
            window: doc.pos.window,
            emb: doc.emb,
            key: mat(doc.key)?,
            query: mat(doc.query)?,
            value: mat(doc.value)?,
            mix: mat(doc.mix)?,
            bias: doc.bias,
            ff,
            mlp,
            vocab,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PosDoc {
    window: usize,
    current_flag: i64,
    oldest_flag: i64,
}

#[derive(Serialize, Deserialize)]
struct FfDoc {
    fill: TokenId,
    table: Vec<DispatchRow>,
}

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    w1: MatrixDoc,
    b1: Vec<i64>,
    w2: MatrixDoc,
}

#[derive(Serialize, Deserialize)]
struct OutProjDoc {
    offset: u32,
    width: usize,
}

#[derive(Serialize, Deserialize)]
struct WeightsDoc {
    format: String,
    layout: LayoutPlan,
    vocab: TokenVocab,
    pos: PosDoc,
    emb: Vec<SparseVec<i64>>,
    key: MatrixDoc,
    query: MatrixDoc,
    value: MatrixDoc,
    mix: MatrixDoc,
    bias: SparseVec<i64>,
    ff: FfDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mlp: Option<MlpDoc>,
    out_proj: OutProjDoc,
}

/// Result of one literal-conformance check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LiteralCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LiteralReport {
    pub checks: Vec<LiteralCheck>,
}

impl LiteralReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(LiteralCheck {
            name: name.into(),
            passed,
            detail,
        });
    }
}

fn one_based(entries: &[(u32, u32, i64)]) -> Vec<(u32, u32, i64)> {
    entries.iter().map(|&(r, c, v)| (r + 1, c + 1, v)).collect()
}

/// Checks a 3-symbol compilation entry by entry against the hand
/// construction over `{0, 1, #}`, in its 1-based `(row, col)` indexing with
/// `d = c + 8`.
pub fn verify_paper_literal(w: &TfWeights) -> Result<LiteralReport> {
    let v = &w.vocab;
    if v.symbols.len() != 3 {
        return Err(Error::Precondition(format!(
            "literal form needs exactly 3 symbols, machine has {}",
            v.symbols.len()
        )));
    }
    let c = w.layout.state_bits as u32;
    let d = c + 8;
    let mut r = LiteralReport::default();
    r.check(
        "layout",
        w.layout.core_dim() as u32 == d && w.layout.flag() + 1 == d,
        format!("core width {} vs c+8 = {d}", w.layout.core_dim()),
    );
    r.check(
        "alphabet-order",
        v.symbols == ["0", "1", PAD],
        format!("{:?}", v.symbols),
    );
    r.check(
        "start-code",
        v.code(v.start) == 0,
        format!("start state code {}", v.code(v.start)),
    );

    // emb(s, q) = (1, onehot(s), q, 0, 0, 0, 0)
    let mut emb_ok = true;
    let mut emb_detail = String::new();
    for t in 0..v.len() as u32 {
        let t = TokenId(t);
        let (s, q) = v.split(t);
        let code = v.code(q);
        let mut expect = vec![0i64; d as usize];
        expect[0] = 1;
        expect[1 + s.index()] = 1;
        for b in 0..c {
            expect[(4 + b) as usize] = (code >> (c - 1 - b) & 1) as i64;
        }
        let got = w.emb[t.index()].to_dense(w.layout.dim());
        if got[..d as usize] != expect[..] || got[d as usize..].iter().any(|&x| x != 0) {
            emb_ok = false;
            emb_detail = format!("{}: {:?} vs {:?}", v.name(t), &got[..d as usize], expect);
            break;
        }
    }
    r.check("emb", emb_ok, emb_detail);

    let mut pos_ok = true;
    for off in 0..w.window {
        let mut expect = vec![0i64; w.layout.dim()];
        if off == 0 {
            expect[(d - 1) as usize] = 1;
        } else if off == w.window - 1 {
            expect[(d - 1) as usize] = 2;
        }
        pos_ok &= w.pos(off)?.to_dense(w.layout.dim()) == expect;
    }
    r.check("pos", pos_ok, format!("offsets 0..{}", w.window));

    let k = one_based(w.key.triplets());
    r.check("K", k == [(d, 1, 1)], format!("{k:?}"));
    let q = one_based(w.query.triplets());
    r.check("Q", q == [(d, d, 1)], format!("{q:?}"));
    let mut vv = one_based(w.value.triplets());
    vv.sort_unstable();
    let mut ve = vec![(c + 5, 2, 1), (c + 6, 3, 1), (c + 7, 4, 1), (d, d, 1)];
    ve.sort_unstable();
    r.check("V", vv == ve, format!("{vv:?}"));
    r.check("W", w.mix.is_identity(), format!("{} entries", w.mix.nnz()));
    r.check("b", w.bias.nnz() == 0, format!("{} nonzeros", w.bias.nnz()));

    // FF(h) + h on h_{4:c+8} = (q, onehot(s), 3) and on flag 2
    let mut ff_ok = true;
    let mut ff_detail = String::new();
    for h in ff_input_space(w) {
        let flag = h.get(w.layout.flag());
        let expect = if flag == 2 {
            v.fill_token()
        } else {
            let s = (0..3).find(|&k| h.get(w.layout.attended(k)) == 1).unwrap();
            let mut code = 0;
            for b in 0..c as usize {
                code = code << 1 | h.get(w.layout.state_bit(b)) as u32;
            }
            let q = (0..v.states.len())
                .find(|&q| v.state_codes[q] == code)
                .unwrap();
            w.ff.rows
                .iter()
                .find(|row| row.symbol.index() == s && row.state.index() == q)
                .map(|row| row.token)
                .unwrap_or(TokenId(u32::MAX))
        };
        let got = w.ff.lookup(&w.layout, &h);
        if got != Ok(expect) {
            ff_ok = false;
            ff_detail = format!("flag {flag}: {got:?} vs {}", expect.0);
            break;
        }
    }
    r.check("FF", ff_ok, ff_detail);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::PmSpec;

    /// Three symbols, two states, `delta(start, s) = (halt, s, R)`.
    pub(crate) fn echo_pm() -> PmSpec {
        let mut b = PmSpec::builder("start", "halt");
        b.adapted(true);
        for s in ["0", "1", PAD] {
            b.symbol(s);
        }
        for s in ["0", "1", PAD] {
            b.rule("start", s, "halt", s, PmMove::Right);
        }
        b.build().unwrap()
    }

    #[test]
    fn echo_machine_is_literal() {
        let w = compile_pm_to_tf(&echo_pm(), 4).unwrap();
        assert_eq!(w.layout.state_bits, 1);
        assert_eq!(w.layout.core_dim(), 9);
        let report = verify_paper_literal(&w).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn embedding_rows_match_hand_values() {
        let w = compile_pm_to_tf(&echo_pm(), 4).unwrap();
        let v = &w.vocab;
        let start = v.start;
        let row = |s: &str| {
            let sym = SymId(v.symbols.iter().position(|x| x == s).unwrap() as u16);
            w.emb[v.token(sym, start).index()].to_dense(9)
        };
        assert_eq!(row("0"), [1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(row("1"), [1, 0, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(row(PAD), [1, 0, 0, 1, 0, 0, 0, 0, 0]);
        let halt = v.token(SymId(1), v.halt);
        assert_eq!(w.emb[halt.index()].to_dense(9), [1, 0, 1, 0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn pos_rejects_offsets_past_window() {
        let w = compile_pm_to_tf(&echo_pm(), 4).unwrap();
        assert_eq!(
            w.pos(4).unwrap_err(),
            Error::OffsetOutOfWindow {
                offset: 4,
                window: 4
            }
        );
        assert_eq!(w.pos(1).unwrap().nnz(), 0);
    }

    #[test]
    fn unadapted_machine_is_rejected() {
        let mut b = PmSpec::builder("start", "halt");
        for s in ["0", "1", PAD] {
            b.symbol(s);
        }
        for s in ["0", "1", PAD] {
            b.rule("start", s, "halt", s, PmMove::Stay);
        }
        let pm = b.build().unwrap();
        assert!(matches!(
            compile_pm_to_tf(&pm, 4),
            Err(Error::NotAdapted(_))
        ));
    }

    #[test]
    fn mlp_matches_dispatch_on_echo() {
        let mut w = compile_pm_to_tf(&echo_pm(), 4).unwrap();
        w.attach_mlp(DEFAULT_HIDDEN_CAP).unwrap();
        let net = w.mlp.as_ref().unwrap();
        for h in ff_input_space(&w) {
            let t = w.ff.lookup(&w.layout, &h).unwrap();
            let expect = SparseVec::from_pairs(vec![(w.layout.logit(t), 1)]);
            assert_eq!(net.eval(&h), expect);
        }
        assert!(matches!(
            synthesize_ff_mlp(&w.layout, &w.vocab, &w.ff, 2),
            Err(Error::SynthesisOverflow { needed: 4, cap: 2 })
        ));
    }

    #[test]
    fn weights_round_trip() {
        let mut w = compile_pm_to_tf(&echo_pm(), 5).unwrap();
        w.attach_mlp(DEFAULT_HIDDEN_CAP).unwrap();
        let text = w.to_json();
        let back = TfWeights::from_json(&text).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn corrupted_weights_are_rejected() {
        let w = compile_pm_to_tf(&echo_pm(), 5).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        v["ff"]["fill"] = 999.into();
        let text = serde_json::to_string(&v).unwrap();
        assert!(matches!(
            TfWeights::from_json(&text),
            Err(Error::Validation(_))
        ));
        assert!(matches!(TfWeights::from_json("{}"), Err(Error::Parse(_))));
    }

    #[test]
    fn flag_outside_two_and_three_is_an_error() {
        let w = compile_pm_to_tf(&echo_pm(), 4).unwrap();
        let h = SparseVec::from_pairs(vec![(w.layout.flag(), 1)]);
        assert_eq!(w.ff.lookup(&w.layout, &h), Err(Error::FlagOutOfRange(1)));
    }
}
