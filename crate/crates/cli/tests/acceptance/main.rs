//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the per-criterion lines always reach
//! stdout. Exits non-zero if any criterion fails.

mod chaos;
mod stub;

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use roundtable_core::backend::{
    count_tokens, Backend, Backends, HttpBackend, LlmBackendConfig, RetryPolicy, ScriptedProfile, TokenScheme,
};
use roundtable_core::decision::{majority_vote, PredictionBoard, TieRule};
use roundtable_core::engine::{run_discussion, EngineOptions, Roster};
use roundtable_core::metrics::{compute_ntar, compute_tar, RunRecord, TarParams};
use roundtable_core::strategy::{
    enumerate_valid_strategies, parse_strategy, validate_strategy, Governance, InteractionPattern, Participation,
    Strategy, StrategyConfig,
};
use roundtable_core::tasks::{generate_dei, generate_ses, GeneratorParams, TaskInstance};
use roundtable_core::transcript::{Addressees, Purpose, Termination, Transcript};

use chaos::{marker, plain_task, whitespace_oracle, Chaos, Recorder};

type Check = Result<String, String>;
/// Name, check, and wall-clock budget where one is set.
type Criterion = (&'static str, fn() -> Check, Option<Duration>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("NTAR reproduces the reference values", criterion_1, Some(Duration::from_secs(1))),
        ("strategy lattice has exactly nine members", criterion_2, Some(Duration::from_secs(1))),
        ("protocol invariants over seeded runs", criterion_3, Some(Duration::from_secs(60))),
        ("token conservation and whitespace counting", criterion_4, None),
        ("majority vote matches an exhaustive oracle", criterion_5, None),
        ("instructor strategies beat the simultaneous baseline on SES", criterion_6, Some(Duration::from_secs(60))),
        ("run is deterministic", criterion_7, None),
        ("HTTP wire format against a local stub", criterion_8, None),
    ];
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if elapsed > *b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (r, _) => r,
        };
        let line = match &result {
            Ok(detail) => format!("criterion {}: PASS {name} ({detail}; {elapsed:.2?})", i + 1),
            Err(reason) => {
                failed += 1;
                format!("criterion {}: FAIL {name}: {reason}", i + 1)
            }
        };
        let _ = writeln!(out, "{line}");
    }
    std::panic::set_hook(default_hook);
    let _ = writeln!(out, "acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

// ---------------------------------------------------------------------------
// 1. NTAR golden values (alpha = 1, beta = 4, accuracy in percentage points).

const PDDP: [(f64, f64, f64); 9] = [
    (50.7, 25663.0, 2184.0),
    (57.8, 6470.0, 854.0),
    (45.2, 9531.0, 1127.0),
    (46.2, 52400.0, 15568.0),
    (59.8, 15057.0, 3046.0),
    (46.7, 19673.0, 4100.0),
    (50.8, 348035.0, 58795.0),
    (46.2, 13119.0, 2412.0),
    (58.8, 4867.0, 841.0),
];
const PDDP_NTAR: [f64; 9] = [0.21, 0.82, 0.45, 0.06, 0.31, 0.18, 0.01, 0.28, 1.00];
const EBFC: [(f64, f64, f64); 9] = [
    (49.3, 28099.0, 1990.0),
    (70.4, 13361.0, 1155.0),
    (68.8, 15368.0, 1284.0),
    (81.4, 20074.0, 6780.0),
    (84.4, 14600.0, 3073.0),
    (77.9, 13125.0, 2901.0),
    (86.4, 30085.0, 6125.0),
    (86.9, 2111.0, 490.0),
    (85.4, 2859.0, 452.0),
];
const EBFC_NTAR: [f64; 9] = [0.06, 0.18, 0.16, 0.08, 0.15, 0.15, 0.07, 1.00, 0.86];

fn criterion_1() -> Check {
    let mut worst: f64 = 0.0;
    for (name, rows, golden) in [("PDDP", &PDDP, &PDDP_NTAR), ("EBFC", &EBFC, &EBFC_NTAR)] {
        let tars: BTreeMap<usize, f64> = rows
            .iter()
            .enumerate()
            .map(|(i, &(acc, inp, outp))| {
                Ok((i, compute_tar(acc, inp, outp, TarParams::default()).map_err(|e| e.to_string())?))
            })
            .collect::<Result<_, String>>()?;
        let ntar = compute_ntar(&tars).map_err(|e| e.to_string())?;
        // Hand-computed reference for the same inputs.
        let direct: Vec<f64> = rows.iter().map(|&(a, i, o)| a / (i + 4.0 * o)).collect();
        let max = direct.iter().copied().fold(f64::MIN, f64::max);
        for (i, g) in golden.iter().enumerate() {
            ensure!((ntar[&i] - direct[i] / max).abs() < 1e-12, "{name} row {i}: library and direct formula disagree");
            worst = worst.max((ntar[&i] - g).abs());
            // Exact agreement once rounded to the two reported decimals.
            ensure!(
                format!("{:.2}", ntar[&i]) == format!("{g:.2}"),
                "{name} row {i}: NTAR {:.4} vs reference {g:.2}",
                ntar[&i]
            );
        }
    }
    Ok(format!("18 values equal at 2 decimals, max unrounded gap {worst:.4}"))
}

// ---------------------------------------------------------------------------
// 2. Lattice.

const TABLE_ORDER: [&str; 9] = [
    "G1-P1-I1-C1",
    "G1-P1-I2-C1",
    "G1-P1-I3-C1",
    "G1-P1-I1-C2",
    "G1-P1-I2-C2",
    "G1-P1-I3-C2",
    "G1-P2-I4-C2",
    "G2-P3-I1-C3",
    "G2-P3-I2-C3",
];

fn criterion_2() -> Check {
    let mut valid = Vec::new();
    let mut total = 0;
    for g in 1..=2 {
        for p in 1..=3 {
            for i in 1..=4 {
                for c in 1..=3 {
                    total += 1;
                    let s = parse_strategy(&format!("G{g}-P{p}-I{i}-C{c}")).map_err(|e| e.to_string())?;
                    if validate_strategy(&s).is_ok() {
                        valid.push(s);
                    }
                }
            }
        }
    }
    ensure!(total == 72, "enumerated {total} quadruples");
    let table: Vec<Strategy> = TABLE_ORDER.iter().map(|s| parse_strategy(s).unwrap()).collect();
    let mut sorted_valid = valid.clone();
    sorted_valid.sort_by_key(|s| table.iter().position(|t| t == s));
    ensure!(sorted_valid == table, "valid set {:?}", valid.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let listed = enumerate_valid_strategies();
    ensure!(listed == table, "enumeration order {:?}", listed.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for s in &listed {
        ensure!(parse_strategy(&s.to_string()).as_ref() == Ok(s), "{s} does not round-trip");
    }
    Ok("72 quadruples, 9 valid, table order".into())
}

// ---------------------------------------------------------------------------
// 3. Protocol invariants.

/// Latest prediction per agent after the given rounds.
fn board_after(transcript: &Transcript, rounds: u32) -> HashMap<String, String> {
    let mut board = HashMap::new();
    for round in 1..=rounds {
        for m in transcript.round(round).iter().filter(|m| m.is_dialogue()) {
            if let Some(p) = &m.prediction {
                board.insert(m.speaker_id.clone(), p.clone());
            }
        }
    }
    board
}

/// Majority label with ties going to the label whose first supporter comes earliest.
fn oracle_vote(votes: &[Option<&str>]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in votes.iter().flatten() {
        *counts.entry(v).or_default() += 1;
    }
    let top = *counts.values().max()?;
    votes.iter().flatten().find(|v| counts[**v] == top).map(|v| v.to_string())
}

#[derive(Default)]
struct Coverage {
    runs: usize,
    consensus: usize,
    forced: usize,
    instructor: usize,
    private_messages: usize,
}

fn check_run(
    strategy: Strategy,
    n: usize,
    labels: usize,
    max_rounds: u32,
    seed: u64,
    cov: &mut Coverage,
) -> Result<(), String> {
    let task = plain_task(n, labels);
    let centralized = strategy.governance == Governance::Centralized;
    let roster = Roster::for_task(&task, "chaos", centralized.then_some("chaos"));
    let rec = Recorder::new(Arc::new(Chaos { seed }));
    let backends = Backends::new().bind("chaos", rec.clone());
    let config = StrategyConfig::new(strategy, max_rounds, seed).map_err(|e| e.to_string())?;
    let run = run_discussion(&task, config, &roster, &backends, &EngineOptions::default())
        .map_err(|e| format!("{strategy}: {e}"))?;
    let calls = rec.calls();
    let t = &run.transcript;
    let o = &run.outcome;
    let ids = roster.discussion_ids();
    let rounds = o.rounds_used;
    cov.runs += 1;

    // (a) round cap
    ensure!(rounds >= 1 && rounds <= max_rounds, "{strategy}: {rounds} rounds with cap {max_rounds}");
    ensure!(
        t.rounds().len() as u32 == rounds,
        "{strategy}: transcript has {} rounds, outcome {rounds}",
        t.rounds().len()
    );

    // (b) full participation: one discussion turn per agent per round
    if strategy.participation == Participation::Full {
        for r in 1..=rounds {
            let mut speakers: Vec<&str> =
                t.round(r).iter().filter(|m| m.is_dialogue()).map(|m| m.speaker_id.as_str()).collect();
            speakers.sort();
            let mut expected: Vec<&str> = ids.iter().map(String::as_str).collect();
            expected.sort();
            ensure!(speakers == expected, "{strategy} round {r}: speakers {speakers:?}");
        }
    }

    // (c) simultaneous views are pre-round snapshots
    if strategy.interaction == InteractionPattern::Simultaneous {
        for c in calls.iter().filter(|c| c.kind == roundtable_core::backend::TurnKind::Discussion) {
            ensure!(
                !c.history.contains(&format!("-r{};", c.round)),
                "{strategy}: {} saw a round {} turn",
                c.agent,
                c.round
            );
            if c.round > 1 && strategy.participation == Participation::Full && !centralized {
                for m in t.round(c.round - 1).iter().filter(|m| m.is_dialogue()) {
                    ensure!(
                        c.history.contains(&marker(&m.speaker_id, c.round - 1)),
                        "{strategy}: previous round missing"
                    );
                }
            }
        }
    }

    // (d) point-to-point content stays with its addressees
    if strategy.interaction == InteractionPattern::SelectivePointToPoint {
        for m in t.messages().filter(|m| m.is_dialogue()) {
            let Addressees::Subset(to) = &m.addressees else { continue };
            cov.private_messages += 1;
            let mark = marker(&m.speaker_id, m.round_index);
            for c in calls.iter().filter(|c| c.agent != m.speaker_id && !to.contains(&c.agent)) {
                ensure!(!c.history.contains(&mark), "{strategy}: {} saw {mark} addressed to {to:?}", c.agent);
            }
        }
    }

    // (e) termination follows governance
    let mut expected = None;
    if centralized {
        for r in 1..=rounds {
            let controls: Vec<&str> = t
                .round(r)
                .iter()
                .filter(|m| m.purpose == Purpose::InstructorControl)
                .map(|m| m.content.as_str())
                .collect();
            let plan = controls.first().ok_or(format!("{strategy} round {r}: no plan"))?;
            let mut planned: Vec<&str> = plan.trim_start_matches("SPEAKERS:").split(',').map(str::trim).collect();
            let mut spoke: Vec<&str> =
                t.round(r).iter().filter(|m| m.is_dialogue()).map(|m| m.speaker_id.as_str()).collect();
            // Simultaneous replies are merged in roster order; sequential ones follow the plan.
            if strategy.interaction == InteractionPattern::Simultaneous {
                planned.sort();
                spoke.sort();
            }
            ensure!(planned == spoke, "{strategy} round {r}: planned {planned:?}, spoke {spoke:?}");
            if let Some(label) = controls.iter().find_map(|c| c.strip_prefix("FINAL:")) {
                expected = Some((r, Termination::InstructorDecision, label.trim().to_string()));
                break;
            }
        }
    } else {
        let mut silent = 0;
        for r in 1..=rounds {
            let board = board_after(t, r);
            silent = if t.round(r).iter().any(|m| m.is_dialogue()) { 0 } else { silent + 1 };
            let unanimous = ids.iter().all(|id| board.get(id) == board.get(&ids[0])) && board.contains_key(&ids[0]);
            if unanimous {
                expected = Some((r, Termination::Consensus, board[&ids[0]].clone()));
                break;
            }
            if r == max_rounds || silent >= 2 {
                let votes: Vec<Option<&str>> = ids.iter().map(|id| board.get(id).map(String::as_str)).collect();
                let label = oracle_vote(&votes).ok_or("vote with no predictions")?;
                expected = Some((r, Termination::ForcedMajorityVote, label));
                break;
            }
        }
    }
    let actual = (rounds, o.termination, o.final_label.clone());
    ensure!(expected.as_ref() == Some(&actual), "{strategy}: outcome {actual:?}, expected {expected:?}");
    match o.termination {
        Termination::Consensus => cov.consensus += 1,
        Termination::ForcedMajorityVote => cov.forced += 1,
        Termination::InstructorDecision => cov.instructor += 1,
    }
    Ok(())
}

fn criterion_3() -> Check {
    let cov = RefCell::new(Coverage::default());
    let strategies = enumerate_valid_strategies();
    let result = runner(100).run(&(any::<u64>(), 2usize..=5, 2usize..=3, 1u32..=5), |(seed, n, labels, max_rounds)| {
        for &s in &strategies {
            check_run(s, n, labels, max_rounds, seed, &mut cov.borrow_mut()).map_err(TestCaseError::fail)?;
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let cov = cov.into_inner();
    ensure!(cov.runs >= 900, "only {} runs", cov.runs);
    ensure!(cov.consensus > 0 && cov.forced > 0 && cov.instructor > 0, "an outcome kind never occurred");
    ensure!(cov.private_messages > 0, "no point-to-point messages were sent");
    Ok(format!(
        "{} runs: {} consensus, {} forced votes, {} instructor decisions, {} private messages",
        cov.runs, cov.consensus, cov.forced, cov.instructor, cov.private_messages
    ))
}

// ---------------------------------------------------------------------------
// 4. Token conservation.

fn conserve(
    task: &TaskInstance,
    strategy: Strategy,
    seed: u64,
    inner: Arc<dyn Backend>,
    roster: &Roster,
) -> Result<(), String> {
    let rec = Recorder::new(inner);
    let backends = Backends::new().bind("b", rec.clone());
    let config = StrategyConfig::new(strategy, 4, seed).map_err(|e| e.to_string())?;
    let run = run_discussion(task, config, roster, &backends, &EngineOptions::default())
        .map_err(|e| format!("{strategy}: {e}"))?;
    let calls = rec.calls();
    let (want_in, want_out) =
        (calls.iter().map(|c| c.prompt_oracle).sum::<u64>(), calls.iter().map(|c| c.reply_oracle).sum::<u64>());
    let totals = run.transcript.token_totals();
    ensure!(
        (totals.input_tokens, totals.output_tokens) == (want_in, want_out),
        "{strategy}: transcript {}/{} vs oracle {want_in}/{want_out}",
        totals.input_tokens,
        totals.output_tokens
    );
    for m in run.transcript.messages() {
        ensure!(
            m.output_tokens == whitespace_oracle(&m.content),
            "{strategy}: message output count off: {:?}",
            m.content
        );
    }
    let doc = run.into_document(task, strategy.to_string(), seed);
    let record = RunRecord::from_document(&doc).map_err(|e| e.to_string())?;
    ensure!((record.input_tokens, record.output_tokens) == (want_in, want_out), "{strategy}: record totals differ");
    let mut tampered = doc.clone();
    tampered.totals.output_tokens += 1;
    ensure!(RunRecord::from_document(&tampered).is_err(), "{strategy}: tampered totals were accepted");
    Ok(())
}

fn criterion_4() -> Check {
    let strategies = enumerate_valid_strategies();
    let runs = Cell::new(0);
    let result = runner(100).run(&(any::<u64>(), 2usize..=6, any::<bool>()), |(seed, n, dei)| {
        let params = if dei { GeneratorParams::dei(1, seed) } else { GeneratorParams::ses(1, n, 1, seed) };
        let task = (if dei { generate_dei(&params) } else { generate_ses(&params) })
            .map_err(|e| TestCaseError::fail(e.to_string()))?
            .remove(0);
        for &s in &strategies {
            let instructor = (s.governance == Governance::Centralized).then_some("b");
            let roster = Roster::for_task(&task, "b", instructor);
            let scripted = Arc::new(ScriptedProfile::default().backend_for(&task, &roster, TokenScheme::Whitespace));
            conserve(&task, s, seed, scripted, &roster).map_err(TestCaseError::fail)?;
            let chaos_task = plain_task(n, 3);
            let chaos_roster = Roster::for_task(&chaos_task, "b", instructor);
            conserve(&chaos_task, s, seed, Arc::new(Chaos { seed }), &chaos_roster).map_err(TestCaseError::fail)?;
            runs.set(runs.get() + 2);
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let counting = runner(256).run(&"(\\PC|[ \t\n\r\u{a0}\u{2003}\u{3000}]){0,64}", |text| {
        prop_assert_eq!(count_tokens(&text, TokenScheme::Whitespace), Some(whitespace_oracle(&text)));
        Ok(())
    });
    counting.map_err(|e| e.to_string())?;
    Ok(format!("{} runs balanced against the oracle, 256 strings counted", runs.get()))
}

// ---------------------------------------------------------------------------
// 5. Majority vote.

fn criterion_5() -> Check {
    let mut cases = 0;
    for n_agents in 1..=4usize {
        for n_labels in 1..=3usize {
            let labels = &["x", "y", "z"][..n_labels];
            let roster: Vec<String> = (0..n_agents).map(|i| format!("a{i}")).collect();
            let combos = (n_labels + 1).pow(n_agents as u32);
            for code in 0..combos {
                let mut votes: Vec<Option<&str>> = Vec::new();
                let mut c = code;
                for _ in 0..n_agents {
                    let v = c % (n_labels + 1);
                    c /= n_labels + 1;
                    votes.push((v > 0).then(|| labels[v - 1]));
                }
                let mut board = PredictionBoard::new();
                for (id, v) in roster.iter().zip(&votes) {
                    if let Some(v) = v {
                        board.record(id, v, 1);
                    }
                }
                let got = majority_vote(&board, &roster, &TieRule::LowestRosterIndex).ok();
                let want = oracle_vote(&votes);
                ensure!(got == want, "votes {votes:?}: got {got:?}, oracle {want:?}");

                let order: Vec<String> = labels.iter().rev().map(|s| s.to_string()).collect();
                let got = majority_vote(&board, &roster, &TieRule::LabelOrder(order.clone())).ok();
                let want = oracle_label_order(&votes, &order);
                ensure!(got == want, "votes {votes:?} with order {order:?}: got {got:?}, oracle {want:?}");
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} vote profiles, both tie rules"))
}

fn oracle_label_order(votes: &[Option<&str>], order: &[String]) -> Option<String> {
    let count = |l: &str| votes.iter().filter(|v| **v == Some(l)).count();
    let top = order.iter().map(|l| count(l)).max()?;
    (top > 0).then(|| order.iter().find(|l| count(l) == top).cloned()).flatten()
}

// ---------------------------------------------------------------------------
// 6. SES: instructor-led strategies against the simultaneous baseline.

fn criterion_6() -> Check {
    let tasks = generate_ses(&GeneratorParams::ses(60, 6, 1, 2024)).map_err(|e| e.to_string())?;
    let profile = ScriptedProfile { stubbornness: 1, ..ScriptedProfile::default() };
    let score = |name: &str| -> Result<(f64, f64), String> {
        let strategy = parse_strategy(name).map_err(|e| e.to_string())?;
        let (mut correct, mut out_tokens) = (0usize, 0u64);
        for (i, task) in tasks.iter().enumerate() {
            let instructor = (strategy.governance == Governance::Centralized).then_some("b");
            let roster = Roster::for_task(task, "b", instructor);
            let backend = Arc::new(profile.backend_for(task, &roster, TokenScheme::Whitespace));
            let config = StrategyConfig::new(strategy, 10, i as u64).map_err(|e| e.to_string())?;
            let run =
                run_discussion(task, config, &roster, &Backends::new().bind("b", backend), &EngineOptions::default())
                    .map_err(|e| e.to_string())?;
            correct += usize::from(run.outcome.final_label == task.gold_label);
            out_tokens += run.transcript.token_totals().output_tokens;
        }
        Ok((100.0 * correct as f64 / tasks.len() as f64, out_tokens as f64 / tasks.len() as f64))
    };
    let (base_acc, base_out) = score("G1-P1-I1-C1")?;
    let mut detail = format!("G1-P1-I1-C1 acc {base_acc:.1} #O {base_out:.1}");
    for name in ["G2-P3-I1-C3", "G2-P3-I2-C3"] {
        let (acc, out) = score(name)?;
        ensure!(acc >= base_acc, "{name} accuracy {acc:.1} < {base_acc:.1}");
        ensure!(out < base_out, "{name} mean output tokens {out:.1} not below {base_out:.1}");
        detail.push_str(&format!("; {name} acc {acc:.1} #O {out:.1}"));
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 7. Determinism of `run`.

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn criterion_7() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("experiment.json");
    std::fs::write(
        &config,
        r#"{
            "strategies": "all",
            "baselines": ["Agent_all", "MV"],
            "tasks": {"generate": {"scenario": "SES", "n_tasks": 20, "n_segments": 5, "seed": 3}},
            "backends": {"discussion": {"type": "scripted", "volunteer": "on_change"}},
            "max_rounds": 6,
            "seed": 99
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "8")] {
        let out = dir.path().join(name);
        let args =
            ["roundtable", "run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs];
        let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
        let code = roundtable_cli::run_cli(args, &mut stdout, &mut stderr);
        ensure!(code == 0, "run exited {code}: {}", String::from_utf8_lossy(&stderr));
        trees.push(snapshot(&out));
    }
    ensure!(trees[0].len() == 20 * 11 + 1, "expected 221 files, found {}", trees[0].len());
    ensure!(trees[0] == trees[1], "outputs differ between runs");
    let (mut report, mut stderr) = (Vec::new(), Vec::new());
    let code = roundtable_cli::run_cli(
        ["roundtable", "report", dir.path().join("a").to_str().unwrap()],
        &mut report,
        &mut stderr,
    );
    ensure!(code == 0, "report exited {code}");
    ensure!(report == trees[0]["report.csv"], "report command output differs from run's report");
    Ok(format!("{} files byte-identical across --jobs 1 and 8; report round-trips", trees[0].len()))
}

// ---------------------------------------------------------------------------
// 8. HTTP backend wire format.

const KEY_ENV: &str = "ROUNDTABLE_ACCEPTANCE_KEY";
const KEY: &str = "sk-acceptance-secret-4242";

fn http_config(url: &str) -> LlmBackendConfig {
    LlmBackendConfig {
        api_key_env: KEY_ENV.into(),
        retry: RetryPolicy { attempts: 3, backoff_ms: vec![0] },
        timeout_secs: 10,
        ..LlmBackendConfig::new(url, "stub-model")
    }
}

fn criterion_8() -> Check {
    for var in ["HTTP_PROXY", "HTTPS_PROXY", "ALL_PROXY", "http_proxy", "https_proxy", "all_proxy"] {
        std::env::remove_var(var);
    }
    std::env::set_var(KEY_ENV, KEY);

    // A full discussion round trip through the stub.
    let stub = stub::Stub::start(vec![(200, stub::completion("I read it as B.\nPREDICTION: B", Some((17, 5))))]);
    let task = plain_task(2, 2);
    let roster = Roster::for_task(&task, "http", None);
    let backend = Arc::new(HttpBackend::new(http_config(&stub.url)).map_err(|e| e.to_string())?);
    let config = StrategyConfig::new(parse_strategy("G1-P1-I1-C1").unwrap(), 3, 0).map_err(|e| e.to_string())?;
    let run = run_discussion(&task, config, &roster, &Backends::new().bind("http", backend), &EngineOptions::default())
        .map_err(|e| e.to_string())?;
    ensure!(run.token_scheme == TokenScheme::ProviderReported, "scheme {:?}", run.token_scheme);
    ensure!(
        run.outcome.termination == Termination::Consensus && run.outcome.final_label == "B",
        "outcome {:?}",
        run.outcome
    );
    for m in run.transcript.messages() {
        ensure!((m.input_tokens, m.output_tokens) == (17, 5), "usage not taken from the response");
    }
    let requests = stub.requests();
    ensure!(requests.len() == 2, "{} requests for one round of two agents", requests.len());
    for r in &requests {
        ensure!(r.method == "POST" && r.path == "/v1/chat/completions", "request line {} {}", r.method, r.path);
        ensure!(r.headers.get("content-type").is_some_and(|v| v.starts_with("application/json")), "content type");
        ensure!(r.headers.get("authorization") == Some(&format!("Bearer {KEY}")), "authorization header");
        let body: serde_json::Value = serde_json::from_str(&r.body).map_err(|e| e.to_string())?;
        let keys: Vec<&str> = body.as_object().ok_or("body is not an object")?.keys().map(String::as_str).collect();
        ensure!(keys == ["max_tokens", "messages", "model", "temperature"], "body keys {keys:?}");
        ensure!(
            body["model"] == "stub-model" && body["temperature"] == 0.0 && body["max_tokens"] == 512,
            "body {body}"
        );
        let messages = body["messages"].as_array().ok_or("messages")?;
        ensure!(messages.len() == 1 && messages[0]["role"] == "user", "messages {messages:?}");
        ensure!(
            messages[0]["content"].as_str().is_some_and(|c| c.contains("Which label?")),
            "prompt lacks the question"
        );
    }

    // Transient failures are retried; the third attempt succeeds.
    let stub =
        stub::Stub::start(vec![(429, "{}".into()), (503, "{}".into()), (200, stub::completion("PREDICTION: A", None))]);
    let backend = HttpBackend::new(http_config(&stub.url)).map_err(|e| e.to_string())?;
    let (content, usage) = backend.complete("hello there").map_err(|e| e.to_string())?;
    ensure!(content == "PREDICTION: A" && usage.is_none(), "retry result {content:?} {usage:?}");
    ensure!(stub.requests().len() == 3, "{} attempts", stub.requests().len());

    // Client errors are fatal and the key never appears in the error.
    let stub = stub::Stub::start(vec![(401, format!("{{\"error\":\"bad key {KEY}\"}}"))]);
    let backend = HttpBackend::new(http_config(&stub.url)).map_err(|e| e.to_string())?;
    let err = backend.complete("hello").err().ok_or("401 was accepted")?;
    ensure!(err.attempts == 1 && stub.requests().len() == 1, "401 retried {} times", stub.requests().len());
    ensure!(!err.to_string().contains(KEY) && !format!("{err:?}").contains(KEY), "key leaked: {err}");

    // Exhausted retries report every attempt.
    let stub = stub::Stub::start(vec![(500, "{}".into())]);
    let backend = HttpBackend::new(http_config(&stub.url)).map_err(|e| e.to_string())?;
    let err = backend.complete("hello").err().ok_or("500 was accepted")?;
    ensure!(err.attempts == 3 && stub.requests().len() == 3, "attempts {}", err.attempts);

    // Malformed bodies are fatal.
    let stub = stub::Stub::start(vec![(200, "{\"choices\": 7}".into())]);
    let backend = HttpBackend::new(http_config(&stub.url)).map_err(|e| e.to_string())?;
    ensure!(backend.complete("hello").is_err() && stub.requests().len() == 1, "malformed body accepted or retried");

    // Without a usage block, counts fall back to the configured local scheme.
    let stub = stub::Stub::start(vec![(200, stub::completion("four words right here PREDICTION: A", None))]);
    let backend = Arc::new(HttpBackend::new(http_config(&stub.url)).map_err(|e| e.to_string())?);
    let config = StrategyConfig::new(parse_strategy("G1-P1-I1-C1").unwrap(), 1, 0).map_err(|e| e.to_string())?;
    let rec = Recorder::new(backend);
    let run =
        run_discussion(&task, config, &roster, &Backends::new().bind("http", rec.clone()), &EngineOptions::default())
            .map_err(|e| e.to_string())?;
    let want: (u64, u64) = rec.calls().iter().fold((0, 0), |(i, o), c| (i + c.prompt_oracle, o + c.reply_oracle));
    let totals = run.transcript.token_totals();
    ensure!((totals.input_tokens, totals.output_tokens) == want, "fallback counts {totals:?} vs {want:?}");

    Ok("request shape, usage, retries, fatal errors, key hygiene, fallback counts".into())
}
