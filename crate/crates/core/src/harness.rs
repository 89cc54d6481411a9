//! Differential runs across the three backends, with resource-bound checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{inputs_up_to, CorpusEntry};
use crate::error::{Error, Result};
use crate::machine::{pm_run, tm_configs, tm_run, ResourceLimits};
use crate::pm2tf::{compile_pm_to_tf, TfWeights, TokenId};
use crate::runtime::{generate_with, FfMode, ACTIVATION_CEILING};
use crate::tm2pm::{checkpoint_trace, compile_tm_to_pm, CompileArtifact, STEP_BOUND_FACTOR};

/// Environment variable holding the worker count for suite fan-out.
pub const WORKERS_ENV: &str = "TAPEFORMER_WORKERS";

/// Where the space bound `s(n)` comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpaceMode {
    /// The entry's declared bound.
    #[default]
    Declared,
    /// The space the TM actually used on this input.
    Measured,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiffOptions {
    pub max_len: usize,
    pub space: SpaceMode,
    pub max_steps: u64,
    pub ff_mode: FfMode,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions {
            max_len: 10,
            space: SpaceMode::Declared,
            max_steps: 10_000_000,
            ff_mode: FfMode::Dispatch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One input's run through all three backends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub machine: String,
    pub input: String,
    pub verdict: Verdict,
    pub tm_output: Option<u8>,
    pub pm_output: Option<u8>,
    pub tf_output: Option<u8>,
    pub t: u64,
    pub s: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub pm_steps: u64,
    pub cot_tokens: u64,
    pub peak_activation: i64,
    pub peak_memory: usize,
    pub fill_tokens: u64,
    pub window_peak: usize,
    pub trace_equal: bool,
    pub checkpoints_equal: bool,
    pub point_mass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl DiffRow {
    /// One report line, without the trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("row serializes")
    }
}

/// Outcome of the resource-bound checks on a row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundVerdicts {
    /// `pm_steps <= 4 P t + P`.
    pub pm_steps: bool,
    /// `cot_tokens == pm_steps + fill`.
    pub cot_tokens: bool,
    /// Window never held more than `P` tokens.
    pub window: bool,
    pub activation: bool,
    /// `pm_steps / (P t)`, the measured constant.
    pub step_factor: f64,
}

impl BoundVerdicts {
    pub fn all(&self) -> bool {
        self.pm_steps && self.cot_tokens && self.window && self.activation
    }
}

pub fn check_bounds(row: &DiffRow) -> BoundVerdicts {
    let (p, t) = (row.p as u64, row.t);
    BoundVerdicts {
        pm_steps: row.pm_steps <= STEP_BOUND_FACTOR * p * t + p,
        cot_tokens: row.cot_tokens == row.pm_steps + row.fill_tokens,
        window: row.window_peak <= row.p,
        activation: (0..=ACTIVATION_CEILING).contains(&row.peak_activation),
        step_factor: if t == 0 {
            0.0
        } else {
            row.pm_steps as f64 / (p * t) as f64
        },
    }
}

/// A compiled machine at one space bound.
pub struct Pipeline {
    pub artifact: CompileArtifact,
    pub weights: TfWeights,
}

impl Pipeline {
    pub fn new(entry: &CorpusEntry, space: usize) -> Result<Self> {
        let artifact = compile_tm_to_pm(&entry.tm, space)?;
        let weights = compile_pm_to_tf(&artifact.pm, artifact.queue_size)?;
        Ok(Pipeline { artifact, weights })
    }

    pub fn with_mlp(mut self) -> Result<Self> {
        self.weights.attach_mlp(crate::pm2tf::DEFAULT_HIDDEN_CAP)?;
        Ok(self)
    }
}

fn blank_row(entry: &CorpusEntry, input: &str) -> DiffRow {
    DiffRow {
        machine: entry.name.to_string(),
        input: input.to_string(),
        verdict: Verdict::Fail,
        tm_output: None,
        pm_output: None,
        tf_output: None,
        t: 0,
        s: 0,
        p: 0,
        pm_steps: 0,
        cot_tokens: 0,
        peak_activation: 0,
        peak_memory: 0,
        fill_tokens: 0,
        window_peak: 0,
        trace_equal: false,
        checkpoints_equal: false,
        point_mass: false,
        failures: Vec::new(),
    }
}

/// Runs one input with a prepared pipeline, folding every backend error
/// into the row.
pub fn run_with_pipeline(
    entry: &CorpusEntry,
    pipe: &Pipeline,
    input: &str,
    opts: &DiffOptions,
) -> DiffRow {
    let mut row = blank_row(entry, input);
    if let Err(e) = fill_row(&mut row, entry, pipe, input, opts) {
        row.failures.push(e.to_string());
    }
    finish(&mut row, entry);
    row
}

fn fill_row(
    row: &mut DiffRow,
    entry: &CorpusEntry,
    pipe: &Pipeline,
    input: &str,
    opts: &DiffOptions,
) -> Result<()> {
    let art = &pipe.artifact;
    row.s = art.space_bound;
    row.p = art.queue_size;
    let limits = ResourceLimits::new(opts.max_steps, art.space_bound);
    let (tm_stats, _) = tm_run(&entry.tm, input, limits)?;
    row.t = tm_stats.time_steps;
    row.tm_output = tm_stats.output_bit;

    let pm_limits = ResourceLimits::new(opts.max_steps, art.queue_size + 1);
    let (pm_stats, log) = pm_run(&art.pm, input, art.queue_size, pm_limits)?;
    row.pm_steps = pm_stats.time_steps;
    row.pm_output = pm_stats.output_bit;

    row.checkpoints_equal =
        checkpoint_trace(art, input, pm_limits)? == tm_configs(&entry.tm, input, limits)?;

    let w = &pipe.weights;
    let expected: Vec<TokenId> = log
        .entries
        .iter()
        .map(|&(s, q)| w.vocab.token(s, q))
        .collect();
    let mut k = input.len();
    let mut trace_equal = true;
    let mut point_mass = true;
    let summary = generate_with(
        w,
        input,
        ResourceLimits::new(opts.max_steps, 0),
        opts.ff_mode,
        |t, _, frame| {
            trace_equal &= expected.get(k) == Some(&t);
            k += 1;
            if let Some(f) = frame {
                point_mass &= f.is_point_mass();
            }
        },
    )?;
    row.trace_equal = trace_equal && k == expected.len();
    row.point_mass = point_mass;
    row.tf_output = summary.answer;
    row.cot_tokens = summary.generated;
    row.fill_tokens = summary.fill_tokens;
    row.window_peak = summary.meter.peak_window_tokens;
    row.peak_activation = summary.meter.peak_activation;
    row.peak_memory = summary.meter.peak_bytes();
    Ok(())
}

fn finish(row: &mut DiffRow, entry: &CorpusEntry) {
    if !row.failures.is_empty() {
        return;
    }
    let oracle = (entry.oracle)(&row.input);
    if row.tm_output != row.pm_output || row.pm_output != row.tf_output {
        row.failures.push("backends disagree".into());
    }
    if row.tm_output != oracle {
        row.failures.push(format!("oracle expects {oracle:?}"));
    }
    for (ok, what) in [
        (row.trace_equal, "transformer trace differs from the PM log"),
        (
            row.checkpoints_equal,
            "checkpoint decode differs from the TM",
        ),
        (row.point_mass, "attention was not a point mass"),
    ] {
        if !ok {
            row.failures.push(what.into());
        }
    }
    let b = check_bounds(row);
    for (ok, what) in [
        (b.pm_steps, "PM step bound exceeded"),
        (b.cot_tokens, "CoT token count is not PM steps plus fill"),
        (b.window, "window exceeded P"),
        (b.activation, "activation outside 0..=3"),
    ] {
        if !ok {
            row.failures.push(what.into());
        }
    }
    if row.failures.is_empty() {
        row.verdict = Verdict::Pass;
    }
}

fn space_for(entry: &CorpusEntry, input: &str, opts: &DiffOptions) -> Result<usize> {
    match opts.space {
        SpaceMode::Declared => Ok((entry.space)(input.len())),
        SpaceMode::Measured => {
            let cap = (entry.space)(input.len()).max(input.len() + 1) * 4;
            let (stats, _) = tm_run(&entry.tm, input, ResourceLimits::new(opts.max_steps, cap))?;
            Ok(stats.space_cells.max(input.len() + 1))
        }
    }
}

fn build_pipeline(entry: &CorpusEntry, space: usize, opts: &DiffOptions) -> Result<Pipeline> {
    let p = Pipeline::new(entry, space)?;
    match opts.ff_mode {
        FfMode::Mlp => p.with_mlp(),
        FfMode::Dispatch => Ok(p),
    }
}

/// Compiles for this input's space bound and runs all three backends.
pub fn run_differential(entry: &CorpusEntry, input: &str, opts: &DiffOptions) -> DiffRow {
    let pipe = space_for(entry, input, opts).and_then(|s| build_pipeline(entry, s, opts));
    match pipe {
        Ok(p) => run_with_pipeline(entry, &p, input, opts),
        Err(e) => {
            let mut row = blank_row(entry, input);
            row.failures.push(e.to_string());
            row
        }
    }
}

/// All rows for one machine, in input order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffReport {
    pub machine: String,
    pub rows: Vec<DiffRow>,
}

impl DiffReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.verdict == Verdict::Pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DiffRow> {
        self.rows.iter().filter(|r| r.verdict == Verdict::Fail)
    }

    /// Largest measured `pm_steps / (P t)`.
    pub fn max_step_factor(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| check_bounds(r).step_factor)
            .fold(0.0, f64::max)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&r.to_json());
            out.push('\n');
        }
        out
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidInput(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Runs every input up to `opts.max_len` in parallel. Rows come back in
/// input order whatever the completion order.
pub fn run_suite(entry: &CorpusEntry, opts: &DiffOptions) -> Result<DiffReport> {
    let inputs = inputs_up_to(opts.max_len);
    let work = || -> Vec<DiffRow> {
        match opts.space {
            SpaceMode::Declared => {
                // one compilation per input length
                let pipes: Vec<Result<Pipeline>> = (0..=opts.max_len)
                    .into_par_iter()
                    .map(|n| build_pipeline(entry, (entry.space)(n), opts))
                    .collect();
                inputs
                    .par_iter()
                    .map(|x| match &pipes[x.len()] {
                        Ok(p) => run_with_pipeline(entry, p, x, opts),
                        Err(e) => {
                            let mut row = blank_row(entry, x);
                            row.failures.push(e.to_string());
                            row
                        }
                    })
                    .collect()
            }
            SpaceMode::Measured => inputs
                .par_iter()
                .map(|x| run_differential(entry, x, opts))
                .collect(),
        }
    };
    let rows = match workers_from_env()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Precondition(e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(DiffReport {
        machine: entry.name.to_string(),
        rows,
    })
}
