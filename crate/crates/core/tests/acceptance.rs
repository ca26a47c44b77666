//! Acceptance gate. Each criterion prints one PASS/FAIL line; the test fails
//! if any of them fails.
//!
//! Run with `cargo test -p vosagent-core --test acceptance`.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vosagent_core::engine::StepAction;
use vosagent_core::harness::{TAG_AUDIO, TAG_SHORT_EVENT};
use vosagent_core::scenario::{load_scenario, synthesize_narrative};
use vosagent_core::*;

// Tolerances and budgets.
const F_TOL: f64 = 1e-12;
const AGG_TOL: f64 = 1e-12;
const METRIC_PAIRS: usize = 500;
const METRIC_BUDGET: Duration = Duration::from_secs(30);
const E2E_BUDGET: Duration = Duration::from_secs(120);
const SUITE_SEED: u64 = 42;
const SUITE_SIZE: usize = 50;
const MIN_MEAN_JF: f64 = 0.99;
const MIN_SHORT_QUERIES: usize = 7;
const MIN_SHORT_GAP: f64 = 0.2;
const MAX_WHOLE_GAP: f64 = 0.05;
const FUZZ_CASES: usize = 10_000;
const SAMPLING_CASES: usize = 200;

struct Line {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn line(id: u8, name: &'static str, passed: bool, detail: impl Into<String>) -> Line {
    let l = Line {
        id,
        name,
        passed,
        detail: detail.into(),
    };
    // the handle, not println!, so the line shows without --nocapture
    let _ = writeln!(
        std::io::stdout().lock(),
        "criterion {}: {} {} ({})",
        l.id,
        if l.passed { "PASS" } else { "FAIL" },
        l.name,
        l.detail
    );
    l
}

// ---------------------------------------------------------------- oracles

fn brute_iou(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn brute_boundary(px: &[bool], w: i64, h: i64) -> Vec<(i64, i64)> {
    let at = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && px[(y * w + x) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if at(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| !at(x + dx, y + dy)) {
                out.push((x, y));
            }
        }
    }
    out
}

fn brute_f(a: &[bool], b: &[bool], w: u32, h: u32) -> f64 {
    let (wi, hi) = (i64::from(w), i64::from(h));
    let ba = brute_boundary(a, wi, hi);
    let bb = brute_boundary(b, wi, hi);
    match (ba.is_empty(), bb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let r = (0.008 * f64::from(w * w + h * h).sqrt()).ceil() as i64;
    let covered = |src: &[(i64, i64)], dst: &[(i64, i64)]| {
        let hits = src
            .iter()
            .filter(|&&(x, y)| dst.iter().any(|&(u, v)| (x - u).pow(2) + (y - v).pow(2) <= r * r))
            .count();
        hits as f64 / src.len() as f64
    };
    let p = covered(&ba, &bb);
    let rc = covered(&bb, &ba);
    if p + rc == 0.0 {
        0.0
    } else {
        2.0 * p * rc / (p + rc)
    }
}

fn random_pixels(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Vec<bool> {
    let n = (w * h) as usize;
    match rng.gen_range(0..4) {
        0 => vec![false; n],
        1 => {
            let p: f64 = rng.gen();
            (0..n).map(|_| rng.gen_bool(p)).collect()
        }
        _ => {
            let mut px = vec![false; n];
            for _ in 0..rng.gen_range(1..4) {
                let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
                let (x1, y1) = (rng.gen_range(x0..w), rng.gen_range(y0..h));
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        px[(y * w + x) as usize] = true;
                    }
                }
            }
            px
        }
    }
}

/// Index nearest to k(T-1)/(K-1), halves rounded up, by exhaustive search.
fn brute_samples(t: u32, k: u32) -> Vec<u32> {
    let mut out: Vec<u32> = (0..k)
        .map(|j| {
            let target = u64::from(j) * u64::from(t - 1);
            let den = u64::from(k - 1);
            (0..t)
                .min_by_key(|&i| {
                    let scaled = u64::from(i) * den;
                    // distance doubled so ties can prefer the larger index
                    (2 * scaled.abs_diff(target), u32::MAX - i)
                })
                .unwrap()
        })
        .collect();
    out.dedup();
    out
}

// ---------------------------------------------------------------- criteria

fn criterion_1() -> Line {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut j_bad = 0;
    let mut f_worst = 0.0f64;
    for _ in 0..METRIC_PAIRS {
        let (w, h) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let a = random_pixels(&mut rng, w, h);
        let b = if rng.gen_bool(0.2) { a.clone() } else { random_pixels(&mut rng, w, h) };
        let ma = BinaryMask::encode(w, h, &a).unwrap();
        let mb = BinaryMask::encode(w, h, &b).unwrap();
        if iou(&ma, &mb).unwrap() != brute_iou(&a, &b) {
            j_bad += 1;
        }
        f_worst = f_worst.max((boundary_f(&ma, &mb).unwrap() - brute_f(&a, &b, w, h)).abs());
    }
    let took = started.elapsed();
    line(
        1,
        "metric oracle equivalence",
        j_bad == 0 && f_worst <= F_TOL && took < METRIC_BUDGET,
        format!("{METRIC_PAIRS} pairs, J mismatches {j_bad}, max |dF| {f_worst:e}, {took:.1?}"),
    )
}

fn aggregates_consistent(r: &EvalReport) -> bool {
    let scored: Vec<&ReportRow> = r.rows.iter().filter(|x| !x.load_error).collect();
    let mean = scored.iter().map(|x| x.jf).sum::<f64>() / scored.len() as f64;
    let miou = scored.iter().map(|x| x.j).sum::<f64>() / scored.len() as f64;
    (r.aggregates.overall.mean_jf.unwrap() - mean).abs() <= AGG_TOL
        && (r.aggregates.overall.miou.unwrap() - miou).abs() <= AGG_TOL
}

fn criterion_2(report: &EvalReport, took: Duration) -> Line {
    let mean = report.aggregates.overall.mean_jf.unwrap_or(0.0);
    let fallbacks = report.rows.iter().filter(|r| r.fallback_used).count();
    line(
        2,
        "end-to-end oracle run",
        report.rows.len() >= SUITE_SIZE
            && report.error_rows() == 0
            && mean >= MIN_MEAN_JF
            && fallbacks == 0
            && aggregates_consistent(report)
            && took < E2E_BUDGET,
        format!(
            "{} rows, mean_jf {mean:.6}, fallback rows {fallbacks}, {took:.1?}",
            report.rows.len()
        ),
    )
}

fn criterion_3(agent: &EvalReport, baseline: &EvalReport, baseline_traces: &std::path::Path) -> Line {
    let cmp = compare_reports(agent, baseline).expect("same suite");
    let short = cmp.tag(TAG_SHORT_EVENT);
    let whole = cmp.tag("whole_video_instance");
    let short_n = short.map_or(0, |d| d.count);
    let short_gap = short.and_then(|d| d.delta).unwrap_or(f64::NEG_INFINITY);
    let whole_gap = whole.and_then(|d| d.delta).map_or(f64::INFINITY, f64::abs);
    let two_calls = baseline
        .rows
        .iter()
        .filter(|r| {
            let path = baseline_traces.join(format!("{}.jsonl", r.query_id));
            std::fs::File::open(path)
                .ok()
                .and_then(|f| read_trace(std::io::BufReader::new(f)).ok())
                .is_some_and(|t| t.tool_calls().count() == 2)
        })
        .count();
    line(
        3,
        "adaptive vs fixed pipeline",
        short_n >= MIN_SHORT_QUERIES
            && short_gap >= MIN_SHORT_GAP
            && whole_gap <= MAX_WHOLE_GAP
            && two_calls == baseline.rows.len(),
        format!(
            "short_event n={short_n} gap {short_gap:.4}; whole-video |gap| {whole_gap:.4}; \
             baseline traces with 2 tool calls {two_calls}/{}",
            baseline.rows.len()
        ),
    )
}

fn criterion_4(suite: &BenchmarkSuite) -> Line {
    let engine = EngineConfig::default();
    let looping = "Thought: I keep looking.\nAction: audio_classify()";
    let config = AgentConfig {
        backend: BackendConfig::Repeating {
            response: looping.into(),
        },
        ..AgentConfig::default()
    };
    let report = run_benchmark(suite, &config).unwrap();
    let rows_ok = report
        .rows
        .iter()
        .all(|r| r.fallback_used && r.steps == engine.max_steps && r.error.is_none());

    // masks straight from the engine
    let mut masks_ok = 0;
    let mut total = 0;
    for i in 0..suite.scenarios.len() {
        let s = Arc::new(load_scenario(suite.scenario_path(i)).unwrap());
        let narrative = synthesize_narrative(&s);
        for q in &s.queries {
            total += 1;
            let plan = RuleBasedPlanner.plan(q, &narrative).unwrap();
            let tools = standard_registry(Arc::clone(&s), NoiseConfig::default(), engine.tool_defaults);
            let mut gen = ScriptedGenerator::repeating(looping);
            let out = run_episode(&s, q, &plan, &mut gen, &tools, &engine).unwrap();
            if out.trace.fallback_used
                && out.trace.steps.len() == engine.max_steps
                && out.masks.len() == s.num_frames() as usize
            {
                masks_ok += 1;
            }
        }
    }
    line(
        4,
        "step-limit fallback",
        rows_ok && masks_ok == total,
        format!("{} rows all fallback with {} steps: {rows_ok}; masks {masks_ok}/{total}", report.rows.len(), engine.max_steps),
    )
}

fn criterion_5(suite: &BenchmarkSuite) -> Line {
    let traces = tempfile::tempdir().unwrap();
    let config = AgentConfig {
        noise: NoiseConfig {
            p_tool_fault: 1.0,
            fault_scope: FaultScope::FirstCallOnly,
            ..NoiseConfig::default()
        },
        trace_dir: Some(traces.path().to_path_buf()),
        ..AgentConfig::default()
    };
    let report = run_benchmark(suite, &config).unwrap();
    let mut recovered = 0;
    for row in &report.rows {
        let path = traces.path().join(format!("{}.jsonl", row.query_id));
        let Ok(file) = std::fs::File::open(&path) else { continue };
        let Ok(trace) = read_trace(std::io::BufReader::new(file)) else { continue };
        let ok = trace.steps.windows(2).any(|w| {
            let failed = w[0]
                .observation
                .as_deref()
                .is_some_and(|o| o.starts_with("ERROR BACKEND_FAILURE"));
            let same = match (&w[0].action, &w[1].action) {
                (StepAction::Call(a), StepAction::Call(b)) => a.tool == b.tool && a.args == b.args,
                _ => false,
            };
            let succeeded = w[1].observation.as_deref().is_some_and(|o| !o.starts_with("ERROR"));
            failed && same && succeeded
        });
        recovered += usize::from(ok);
    }
    let mean = report.aggregates.overall.mean_jf.unwrap_or(0.0);
    line(
        5,
        "error feedback loop",
        recovered == report.rows.len() && mean >= MIN_MEAN_JF,
        format!("{recovered}/{} episodes retried after BACKEND_FAILURE, mean_jf {mean:.6}", report.rows.len()),
    )
}

fn position_ok(text: &str, e: &ParseError) -> bool {
    if e.position > text.len() || !text.is_char_boundary(e.position) {
        return false;
    }
    let before = &text[..e.position];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().unwrap().chars().count() + 1;
    e.line == line && e.column == column
}

fn criterion_6(agent: &EvalReport) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seeds = [
        "Thought: look around\nAction: temporal_search_coarse(query=\"the dog running\", k=8)",
        "Thought: found it\nFinal Answer: {\"pivot_frame\": 3, \"object_id\": \"dog_1\"}",
        "Thought: ok\nAction: identify_instance(frames=[1, 2, 3], description=\"a red car\", category=\"car\")",
        "Thought: x\nAction: audio_classify()",
    ];
    // edits that always break the grammar
    let breakers: [fn(&str) -> String; 4] = [
        |s| s[..s.len() - 1].to_string(),
        |s| s.replacen("Thought:", "Thoght:", 1),
        |s| format!("{s}\nAction: audio_classify()"),
        |s| s.replacen("Action:", "Acton:", 1).replacen("Final Answer:", "Final Answr:", 1),
    ];
    let alphabet: Vec<char> = "Thought:Action Final Answer(){}[]=,\". \n\\0123456789abcxyzé_-".chars().collect();
    let mut crashes = 0;
    let mut unpositioned = 0;
    let mut accepted_broken = 0;
    for i in 0..FUZZ_CASES {
        let broken_by_construction = i % 4 == 0;
        let text = match i % 4 {
            0 => breakers[rng.gen_range(0..breakers.len())](seeds[rng.gen_range(0..seeds.len())]),
            1 => {
                let mut s: Vec<char> = seeds[rng.gen_range(0..seeds.len())].chars().collect();
                for _ in 0..rng.gen_range(1..4) {
                    let at = rng.gen_range(0..=s.len());
                    match rng.gen_range(0..3) {
                        0 if at < s.len() => {
                            s.remove(at);
                        }
                        1 if at < s.len() => s[at] = alphabet[rng.gen_range(0..alphabet.len())],
                        _ => s.insert(at, alphabet[rng.gen_range(0..alphabet.len())]),
                    }
                }
                s.into_iter().collect()
            }
            2 => (0..rng.gen_range(0..80)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect(),
            _ => {
                let bytes: Vec<u8> = (0..rng.gen_range(0..120)).map(|_| rng.gen()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
        };
        match catch_unwind(AssertUnwindSafe(|| parse_agent_text(&text))) {
            Err(_) => crashes += 1,
            Ok(Err(e)) => unpositioned += usize::from(!position_ok(&text, &e)),
            Ok(Ok(_)) => accepted_broken += usize::from(broken_by_construction),
        }
    }
    let policy_errors: usize = agent.rows.iter().map(|r| r.parse_errors).sum();
    line(
        6,
        "grammar robustness",
        crashes == 0 && unpositioned == 0 && accepted_broken == 0 && policy_errors == 0,
        format!(
            "{FUZZ_CASES} inputs, crashes {crashes}, unpositioned errors {unpositioned}, \
             broken inputs accepted {accepted_broken}, policy parse errors {policy_errors}"
        ),
    )
}

fn criterion_7(suite: &BenchmarkSuite, reference: &EvalReport) -> Line {
    let n = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let out = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (tag, threads) in [("p1", 1), ("pn", n)] {
        let config = AgentConfig {
            parallelism: Some(threads),
            ..AgentConfig::default()
        };
        let dir = out.path().join(tag);
        run_benchmark(suite, &config).unwrap().write(&dir).unwrap();
        bytes.push(std::fs::read(dir.join("report.json")).unwrap());
    }
    let same = bytes[0] == bytes[1] && bytes[0] == reference.to_json().into_bytes();
    line(
        7,
        "determinism across parallelism",
        same,
        format!("parallelism 1 vs {n}: report.json {} bytes, identical {same}", bytes[0].len()),
    )
}

fn criterion_8() -> Line {
    let fixed = coarse_sample_indices(100, 8).unwrap();
    let fixed_ok = fixed == [0, 14, 28, 42, 57, 71, 85, 99];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for _ in 0..SAMPLING_CASES {
        let t = rng.gen_range(2..=2000);
        let k = rng.gen_range(2..=t.min(64));
        let got = coarse_sample_indices(t, k).unwrap();
        let endpoints = got.first() == Some(&0) && got.last() == Some(&(t - 1));
        let increasing = got.windows(2).all(|w| w[0] < w[1]);
        if !endpoints || !increasing || got != brute_samples(t, k) {
            bad += 1;
        }
    }
    line(
        8,
        "coarse sampling formula",
        fixed_ok && bad == 0,
        format!("(100, 8) -> {fixed:?}; {SAMPLING_CASES} random (T, K) with {bad} failures"),
    )
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let suite = generate_suite(
        &SuiteParams {
            seed: SUITE_SEED,
            num_scenarios: SUITE_SIZE,
            ..SuiteParams::default()
        },
        dir.path(),
    )
    .unwrap();

    let mut lines = vec![criterion_1()];

    let started = Instant::now();
    let agent = run_benchmark(&suite, &AgentConfig::default()).unwrap();
    lines.push(criterion_2(&agent, started.elapsed()));

    let baseline_traces = tempfile::tempdir().unwrap();
    let baseline_config = AgentConfig {
        trace_dir: Some(baseline_traces.path().to_path_buf()),
        ..AgentConfig::default()
    };
    let baseline = run_baseline_fixed(&suite, &baseline_config).unwrap();
    lines.push(criterion_3(&agent, &baseline, baseline_traces.path()));
    lines.push(criterion_4(&suite));
    lines.push(criterion_5(&suite));
    lines.push(criterion_6(&agent));
    lines.push(criterion_7(&suite, &agent));
    lines.push(criterion_8());

    let audio = agent.tag(TAG_AUDIO).map_or(0, |a| a.count);
    let _ = writeln!(
        std::io::stdout().lock(),
        "suite {}: {} rows, {audio} audio queries",
        suite.suite_id,
        agent.rows.len()
    );
    let failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.passed)
        .map(|l| format!("{} ({})", l.id, l.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
