use proptest::prelude::*;

use tapeformer::corpus;
use tapeformer::machine::{
    pm_run, pm_step, tm_run, tm_run_with, PmMove, PmSpec, ResourceLimits, PAD,
};
use tapeformer::pm2tf::compile_pm_to_tf;
use tapeformer::runtime::{generate, FfMode, GenState};
use tapeformer::tm2pm::compile_tm_to_pm;

const SYMBOLS: [&str; 4] = ["0", "1", PAD, "x"];

/// Random adapted PM: `delta[q][s] = (next, write)` with `next` in
/// `1..=states`, where `states` means halt.
fn random_pm() -> impl Strategy<Value = PmSpec> {
    (2usize..5).prop_flat_map(|k| {
        prop::collection::vec((1..=k, 0..SYMBOLS.len()), k * SYMBOLS.len()).prop_map(move |d| {
            let name = |q: usize| {
                if q == 0 {
                    "s".to_string()
                } else if q == k {
                    "h".to_string()
                } else {
                    format!("q{q}")
                }
            };
            let mut b = PmSpec::builder("s", "h");
            b.adapted(true);
            for s in SYMBOLS {
                b.symbol(s);
            }
            for q in 0..k {
                for (si, s) in SYMBOLS.iter().enumerate() {
                    let (next, write) = d[q * SYMBOLS.len() + si];
                    b.rule(&name(q), s, &name(next), SYMBOLS[write], PmMove::Right);
                }
            }
            b.build().expect("random machine is well formed")
        })
    })
}

fn bits(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::bool::ANY, 0..=max)
        .prop_map(|v| v.into_iter().map(|b| if b { '1' } else { '0' }).collect())
}

/// Steps a PM by hand, returning the log and asserting constant queue length.
fn manual_log(pm: &PmSpec, input: &str, p: usize, steps: usize) -> Vec<(u16, u16)> {
    let mut cfg = pm.initial_config(input, p).unwrap();
    let mut log: Vec<(u16, u16)> = cfg.queue.iter().map(|s| (s.0, pm.start().0)).collect();
    for _ in 0..steps {
        if cfg.state == pm.halt() {
            break;
        }
        cfg = pm_step(pm, &cfg).unwrap();
        assert_eq!(cfg.queue.len(), p, "queue length changed");
        let back = *cfg.queue.back().unwrap();
        log.push((back.0, cfg.state.0));
    }
    log
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_recurrence_and_length(pm in random_pm(), x in bits(6), extra in 0usize..4) {
        let p = x.len().max(1) + extra;
        let log = manual_log(&pm, &x, p, 200);
        for i in p..log.len() {
            // 1-based: (s_{i+1}, q_{i+1}) = delta(s_{i-P+1}, q_i)
            let (s_old, _) = log[i - p];
            let (_, q) = log[i - 1];
            let rule = pm.rule(tapeformer::machine::StateId(q), tapeformer::machine::SymId(s_old)).unwrap();
            prop_assert_eq!(log[i], (rule.write.0, rule.next.0));
        }
    }

    #[test]
    fn pm_runs_are_deterministic(pm in random_pm(), x in bits(6)) {
        let limits = ResourceLimits::new(300, 100);
        let a = pm_run(&pm, &x, 8, limits);
        let b = pm_run(&pm, &x, 8, limits);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn random_pm_transformer_matches_log(pm in random_pm(), x in bits(5)) {
        let p = 6;
        let limits = ResourceLimits::new(300, 100);
        prop_assume!(pm_run(&pm, &x, p, limits).is_ok());
        let (stats, log) = pm_run(&pm, &x, p, limits).unwrap();
        let w = compile_pm_to_tf(&pm, p).unwrap();
        let g = generate(&w, &x, limits).unwrap();
        let expect: Vec<_> = log.entries.iter().map(|&(s, q)| w.vocab.token(s, q)).collect();
        prop_assert_eq!(g.context, expect);
        prop_assert_eq!(g.summary.answer, stats.output_bit);
    }

    #[test]
    fn tm_space_is_monotone_and_bounded(x in bits(12), m in 0usize..4) {
        let e = &corpus::corpus()[m];
        let limit = (e.space)(x.len());
        // the meter is the running maximum of the head, floored at n + 1
        let mut seen = x.len() + 1;
        let mut meter = Vec::new();
        let (stats, _) = tm_run_with(&e.tm, &x, ResourceLimits::new(1_000_000, limit), |_, cfg| {
            seen = seen.max(cfg.head);
            meter.push(seen);
        }).unwrap();
        prop_assert!(meter.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(stats.space_cells, seen);
        prop_assert!(stats.space_cells <= limit);
    }

    #[test]
    fn compiled_pm_marker_discipline(x in bits(12), m in 0usize..4) {
        let e = &corpus::corpus()[m];
        let art = compile_tm_to_pm(&e.tm, (e.space)(x.len())).unwrap();
        let mut cfg = art.pm.initial_config(&x, art.queue_size).unwrap();
        while cfg.state != art.pm.halt() {
            cfg = pm_step(&art.pm, &cfg).unwrap();
            prop_assert_eq!(cfg.queue.len(), art.queue_size);
            let c = art.map.marker_census(&cfg);
            prop_assert!(c.marks <= 1 && c.answers <= 1);
        }
        let (tm, _) = tm_run(&e.tm, &x, ResourceLimits::new(1_000_000, 100)).unwrap();
        prop_assert!(cfg.steps <= 4 * art.queue_size as u64 * tm.time_steps + art.queue_size as u64);
    }

    #[test]
    fn weights_differ_only_in_window(a in 2usize..300, b in 2usize..300, m in 0usize..4) {
        let e = &corpus::corpus()[m];
        let art = compile_tm_to_pm(&e.tm, 4).unwrap();
        let mask = |s: usize| {
            let mut v: serde_json::Value =
                serde_json::from_str(&compile_pm_to_tf(&art.pm, s).unwrap().to_json()).unwrap();
            v["pos"]["window"] = serde_json::Value::Null;
            serde_json::to_string(&v).unwrap()
        };
        prop_assert_eq!(mask(a), mask(b));
    }

    #[test]
    fn window_causality(x in bits(6), cut in 0usize..400) {
        // recomputing a step from only the last S tokens gives the same token
        let e = corpus::entry("palindrome").unwrap();
        let art = compile_tm_to_pm(&e.tm, (e.space)(x.len())).unwrap();
        let w = compile_pm_to_tf(&art.pm, art.queue_size).unwrap();
        let g = generate(&w, &x, ResourceLimits::new(1_000_000, 0)).unwrap();
        let i = x.len().max(1) + cut % (g.context.len() - x.len().max(1));
        let lo = i.saturating_sub(w.window);
        let mut fresh = GenState::new(&w, FfMode::Dispatch).unwrap();
        for &t in &g.context[lo..i] {
            fresh.push(t);
        }
        prop_assert_eq!(fresh.forward().unwrap().next, g.context[i]);
    }
}

#[test]
fn emb_rows_are_one_hot_and_dispatch_is_total() {
    for e in corpus::corpus() {
        let art = compile_tm_to_pm(&e.tm, 6).unwrap();
        let w = compile_pm_to_tf(&art.pm, art.queue_size).unwrap();
        let l = &w.layout;
        for row in &w.emb {
            assert_eq!(row.get(l.constant()), 1);
            let b1: i64 = (0..l.symbols).map(|k| row.get(l.symbol(k))).sum();
            assert_eq!(b1, 1);
            assert!((0..l.symbols).all(|k| row.get(l.attended(k)) == 0));
            assert_eq!(row.get(l.flag()), 0);
            assert!(row.entries().iter().all(|&(i, v)| i < l.flag() && v == 1));
        }
        let halt = w.vocab.halt;
        let non_halt = w.vocab.states.len() - 1;
        assert_eq!(w.ff.rows().len(), w.vocab.symbols.len() * non_halt);
        assert!(w.ff.rows().iter().all(|r| r.state != halt));
    }
}

#[test]
fn generation_input_of_length_s_minus_two() {
    // two input-free slots remain, so exactly P - n fill tokens precede the
    // first transition token
    let e = corpus::entry("parity").unwrap();
    let x = "1011";
    let art = compile_tm_to_pm(&e.tm, x.len() + 2).unwrap();
    let w = compile_pm_to_tf(&art.pm, art.queue_size).unwrap();
    let g = generate(&w, x, ResourceLimits::new(100_000, 0)).unwrap();
    let (_, log) = pm_run(
        &art.pm,
        x,
        art.queue_size,
        ResourceLimits::new(100_000, 100),
    )
    .unwrap();
    let fill = art.queue_size - x.len();
    assert_eq!(g.summary.fill_tokens as usize, fill);
    let pad = w.vocab.fill_token();
    assert!(g.context[x.len()..art.queue_size].iter().all(|&t| t == pad));
    assert_eq!(g.context.len(), log.len());
    assert_eq!(g.answer(), Ok(1));
    assert_eq!(w.vocab.symbol_name(*g.context.last().unwrap()), "=1");
}
