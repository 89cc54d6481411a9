//! Acceptance suite. Runs without the libtest harness so that the
//! per-criterion verdict lines always reach the console.

use std::process::ExitCode;
use std::time::Instant;

use tapeformer::corpus::{self, CorpusEntry};
use tapeformer::harness::{check_bounds, run_suite, DiffOptions, DiffReport};
use tapeformer::machine::{PmMove, PmSpec, SymId, PAD};
use tapeformer::pm2tf::{
    compile_pm_to_tf, ff_input_space, synthesize_ff_mlp, verify_paper_literal, TfWeights,
    DEFAULT_HIDDEN_CAP,
};
use tapeformer::runtime::{FfMode, GenState};
use tapeformer::sparse::SparseVec;
use tapeformer::tm2pm::compile_tm_to_pm;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn echo_pm() -> PmSpec {
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

fn literal_conformance() -> Outcome {
    let start = Instant::now();
    let w = compile_pm_to_tf(&echo_pm(), 8).map_err(|e| e.to_string())?;
    ensure(w.layout.state_bits == 1, "expected c = 1")?;
    let report = verify_paper_literal(&w).map_err(|e| e.to_string())?;
    for c in &report.checks {
        ensure(c.passed, format!("{}: {}", c.name, c.detail))?;
    }
    // the hand-written rows, spelled out
    let v = &w.vocab;
    for (s, row) in [
        ("0", [1, 1, 0, 0, 0, 0, 0, 0, 0]),
        ("1", [1, 0, 1, 0, 0, 0, 0, 0, 0]),
        (PAD, [1, 0, 0, 1, 0, 0, 0, 0, 0]),
    ] {
        let sym = SymId(v.symbols.iter().position(|x| x == s).unwrap() as u16);
        let got = w.emb[v.token(sym, v.start).index()].to_dense(9);
        ensure(got == row, format!("emb({s}, start) = {got:?}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 1.0, format!("took {elapsed:?}"))?;
    Ok(format!("{} checks, {elapsed:.2?}", report.checks.len()))
}

fn suite_reports() -> Result<Vec<DiffReport>, String> {
    corpus::corpus()
        .iter()
        .map(|e| run_suite(e, &DiffOptions::default()).map_err(|err| err.to_string()))
        .collect()
}

fn first_failure(
    reports: &[DiffReport],
    bad: impl Fn(&tapeformer::harness::DiffRow) -> bool,
) -> Option<&tapeformer::harness::DiffRow> {
    reports.iter().flat_map(|r| r.rows.iter()).find(|r| bad(r))
}

fn three_way(reports: &[DiffReport]) -> Outcome {
    let rows: usize = reports.iter().map(|r| r.rows.len()).sum();
    ensure(rows == 4 * 2047, format!("{rows} rows"))?;
    if let Some(r) = first_failure(reports, |r| {
        !(r.failures.is_empty() && r.tm_output == r.pm_output && r.pm_output == r.tf_output)
    }) {
        return Err(format!("{} {:?}: {:?}", r.machine, r.input, r.failures));
    }
    Ok(format!("{rows} runs agree"))
}

fn trace_equality(reports: &[DiffReport]) -> Outcome {
    if let Some(r) = first_failure(reports, |r| !r.trace_equal) {
        return Err(format!("{} {:?}", r.machine, r.input));
    }
    if let Some(r) = first_failure(reports, |r| r.fill_tokens != (r.p - r.input.len()) as u64) {
        return Err(format!(
            "{} {:?}: {} fill tokens",
            r.machine, r.input, r.fill_tokens
        ));
    }
    Ok("every token trace equals its PM log".into())
}

fn resource_bounds(reports: &[DiffReport]) -> Outcome {
    if let Some(r) = first_failure(reports, |r| {
        let b = check_bounds(r);
        !(b.pm_steps && b.cot_tokens && b.window)
    }) {
        return Err(format!(
            "{} {:?}: {:?}",
            r.machine,
            r.input,
            check_bounds(r)
        ));
    }
    let factors: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.3}", r.machine, r.max_step_factor()))
        .collect();
    Ok(format!("max pm_steps/(P t): {}", factors.join(", ")))
}

fn masked(w: &TfWeights) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
    v["pos"]["window"] = serde_json::Value::Null;
    serde_json::to_string(&v).unwrap()
}

fn constant_bit_size(reports: &[DiffReport]) -> Outcome {
    let art = compile_tm_to_pm(&corpus::parity(), 14).map_err(|e| e.to_string())?;
    let a = compile_pm_to_tf(&art.pm, 16).map_err(|e| e.to_string())?;
    let b = compile_pm_to_tf(&art.pm, 256).map_err(|e| e.to_string())?;
    ensure(a.to_json() != b.to_json(), "window is not stored")?;
    ensure(
        masked(&a) == masked(&b),
        "(a) payloads differ beyond the window",
    )?;
    let peak = reports
        .iter()
        .flat_map(|r| &r.rows)
        .map(|r| r.peak_activation)
        .max()
        .unwrap_or(0);
    if let Some(r) = first_failure(reports, |r| !(0..=3).contains(&r.peak_activation)) {
        return Err(format!(
            "(b) {} {:?}: {}",
            r.machine, r.input, r.peak_activation
        ));
    }
    if let Some(r) = first_failure(reports, |r| !r.point_mass) {
        return Err(format!("(c) {} {:?}", r.machine, r.input));
    }
    Ok(format!(
        "payload {} bytes at S=16 and S=256, peak activation {peak}, all point masses",
        masked(&a).len()
    ))
}

fn streaming_memory() -> Outcome {
    let art = compile_tm_to_pm(&corpus::bounce(), 62).map_err(|e| e.to_string())?;
    ensure(art.queue_size == 64, "window should be 64")?;
    let w = compile_pm_to_tf(&art.pm, art.queue_size).map_err(|e| e.to_string())?;
    let run = |tokens: u64| -> Result<(tapeformer::runtime::MemoryMeter, usize), String> {
        let mut g = GenState::new(&w, FfMode::Dispatch).map_err(|e| e.to_string())?;
        for c in "0110".chars() {
            g.push(w.vocab.input_token(c).map_err(|e| e.to_string())?);
        }
        for _ in 0..tokens {
            g.step().map_err(|e| e.to_string())?;
            if g.is_halted() {
                return Err("bounce machine halted".into());
            }
        }
        Ok((g.meter(), g.window_capacity()))
    };
    let (short, cap_short) = run(100)?;
    let (long, cap_long) = run(100_000)?;
    ensure(long.total_generated == 100_000, "long run was cut short")?;
    ensure(
        short.peak_window_tokens == long.peak_window_tokens,
        format!(
            "{} vs {}",
            short.peak_window_tokens, long.peak_window_tokens
        ),
    )?;
    ensure(long.peak_window_tokens <= 64, "window exceeded 64")?;
    ensure(cap_short == cap_long, "ring buffer reallocated")?;
    // frame size varies with which state codes occur, never with length
    let d = w.layout.core_dim();
    let frame_bound = 64 * (d + 2) + 4 * d;
    ensure(
        short.peak_frame_nnz <= frame_bound && long.peak_frame_nnz <= frame_bound,
        format!(
            "frame of {} entries exceeds {frame_bound}",
            long.peak_frame_nnz
        ),
    )?;
    Ok(format!(
        "peak {} tokens after 100 and after 100000, {} bytes",
        long.peak_window_tokens,
        long.peak_bytes()
    ))
}

fn ff_synthesis() -> Outcome {
    let mut checked = 0usize;
    let machines: Vec<CorpusEntry> = corpus::corpus();
    for e in &machines {
        let art = compile_tm_to_pm(&e.tm, 12).map_err(|err| err.to_string())?;
        let w = compile_pm_to_tf(&art.pm, art.queue_size).map_err(|err| err.to_string())?;
        let net = synthesize_ff_mlp(&w.layout, &w.vocab, &w.ff, DEFAULT_HIDDEN_CAP)
            .map_err(|err| err.to_string())?;
        // the network never reads B0, B1 or B5, so fixing B1 loses nothing
        let b1 = w.layout.symbol(0)..=w.layout.symbol(w.layout.symbols - 1);
        let ignored = |c: &u32| *c == w.layout.constant() || b1.contains(c) || *c > w.layout.flag();
        ensure(
            !net.read_columns().iter().any(ignored),
            format!("{}: network reads an ignored block", e.name),
        )?;
        for h in ff_input_space(&w) {
            let t = w.ff.lookup(&w.layout, &h).map_err(|err| err.to_string())?;
            let expect = SparseVec::from_pairs(vec![(w.layout.logit(t), 1)]);
            ensure(
                net.eval(&h) == expect,
                format!("{}: mismatch at {h:?}", e.name),
            )?;
            checked += 1;
        }
    }
    Ok(format!("{checked} inputs, zero mismatches"))
}

fn checkpoint_soundness(reports: &[DiffReport]) -> Outcome {
    if let Some(r) = first_failure(reports, |r| !r.checkpoints_equal) {
        return Err(format!("{} {:?}", r.machine, r.input));
    }
    Ok("decoded checkpoints equal the TM configurations".into())
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let reports = suite_reports();
    let suite_time = t0.elapsed();
    let with_reports = |f: fn(&[DiffReport]) -> Outcome| match &reports {
        Ok(r) => f(r),
        Err(e) => Err(format!("suite failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("1 literal conformance", literal_conformance()),
        (
            "2 three-way equivalence",
            with_reports(three_way).map(|m| format!("{m} in {suite_time:.1?}")),
        ),
        ("3 trace equality", with_reports(trace_equality)),
        ("4 resource bounds", with_reports(resource_bounds)),
        ("5 constant bit-size", with_reports(constant_bit_size)),
        ("6 streaming memory", streaming_memory()),
        ("7 feed-forward synthesis", ff_synthesis()),
        ("8 checkpoint soundness", with_reports(checkpoint_soundness)),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("criterion {name}: PASS ({msg})"),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL ({msg})")
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
