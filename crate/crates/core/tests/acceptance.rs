//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::process::ExitCode;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use klafate::backend::bus::{event_topic, TOPIC_ASSESSMENT};
use klafate::backend::http::{router, AppState};
use klafate::backend::replay::UpdateReason;
use klafate::backend::run_loop::{run, Command, LoopConfig, Shared, SimSource};
use klafate::backend::session::{Input, Phase, Session, UserEvent};
use klafate::backend::store::{read_log, EventKind, EventStore};
use klafate::backend::{canonical_json, replay, restore, Bus, Engine, EngineConfig, SystemClock};
use klafate::bgsim::{product_times, Fault, Recipe, Scenario, Simulator};
use klafate::evidence::{approximation_factor, build_evidence, Frame};
use klafate::fmea::{load_workbook, Workbook};
use klafate::knowledge::{assess, Assessment, KnowledgeModel};
use klafate::kpi::{anova_one_way, f_survival, moving_average, production_rate, validate_rule, Horizon};
use klafate::ruledsl::{check_rule_set, eval_bool, parse_rule, Snapshot, ThresholdSet};
use klafate::weights::{user_rating_weight, workbook_panel, WeightTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn near(label: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    check((got - want).abs() <= tol, || format!("{label} = {got}, expected {want} ± {tol}"))
}

fn bgs() -> Workbook {
    load_workbook(fixture("bgs.fmea")).expect("fixture workbook loads")
}

fn air_valve_snapshot() -> Snapshot {
    let mut sim = Simulator::new(1, Recipe::np());
    sim.run_for_secs(60);
    sim.inject_fault(Fault::AirValveClosed);
    sim.run_for_secs(30);
    sim.snapshot()
}

fn worked_example() -> Outcome {
    let wb = bgs();
    let panel = workbook_panel(&wb).map_err(|e| e.to_string())?;
    let w_m: Vec<f64> = panel.members.iter().map(|m| m.w_m).collect();
    check(w_m.len() == 3, || format!("{} members", w_m.len()))?;
    for (got, want) in w_m.iter().zip([0.88, 0.75, 0.50]) {
        near("w_M", *got, want, 0.005)?;
    }
    near("w_P", panel.w_p, 0.71, 0.005)?;

    let mut weights = WeightTable::from_workbook(&wb).map_err(|e| e.to_string())?;
    let w_u = user_rating_weight(4).map_err(|e| e.to_string())?;
    let w_r = weights.resolve("LQ", 1.0, Some(w_u), 1).map_err(|e| e.to_string())?.w_r;
    near("w_R", w_r, 0.8367, 0.005)?;
    near("w_R oracle", w_r, (panel.w_p + 1.0 + 0.8) / 3.0, 1e-12)?;

    let k = approximation_factor(2).map_err(|e| e.to_string())?;
    check(k == 0.99, || format!("k(2) = {k}"))?;

    let model = KnowledgeModel::from_workbook(&wb).map_err(|e| e.to_string())?;
    let labels = model.frame().labels().to_vec();
    let current = weights.current(&labels).map_err(|e| e.to_string())?;
    let a = assess(&model, &wb, &current, &air_valve_snapshot(), wb.approximation_exponent())
        .map_err(|e| e.to_string())?;
    check(a.fm_id == "LQ", || format!("dispatched {}", a.fm_id))?;
    let (u, masses) = a.evidence.split_last().ok_or("no evidence")?;
    for (got, want) in masses.iter().zip([0.8316, 0.00355, 0.00355]) {
        near("mass", *got, want, 0.005)?;
    }
    near("U", *u, 0.1613, 0.005)?;
    // Direct recomputation: active k·w_R, others (1-k)/(n-1)·w_P, U the remainder.
    let spread = (1.0 - 0.99) / 2.0;
    let oracle = [0.99 * w_r, spread * panel.w_p, spread * panel.w_p];
    for (got, want) in masses.iter().zip(oracle) {
        near("mass oracle", *got, want, 1e-12)?;
    }
    near("U oracle", *u, 1.0 - oracle.iter().sum::<f64>(), 1e-12)?;
    Ok(format!(
        "w_M={w_m:?} w_P={:.2} w_R={w_r:.4} evidence=[{:.4}, {:.5}, {:.5}] U={u:.4}",
        panel.w_p, masses[0], masses[1], masses[2]
    ))
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let cases = 10_000;
    for case in 0..cases {
        let n = rng.random_range(1..=10);
        let frame = Frame::new((0..n).map(|i| format!("L{i}"))).map_err(|e| e.to_string())?;
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let active = format!("L{}", rng.random_range(0..n));
        let f = rng.random_range(1..=6);
        let ev = build_evidence(&frame, &active, &weights, f).map_err(|e| format!("case {case}: {e}"))?;
        let arr = ev.to_array();
        let total: f64 = arr.iter().sum();
        check((total - 1.0).abs() <= 1e-9, || format!("case {case}: sum {total}"))?;
        check(arr.iter().all(|x| (0.0..=1.0).contains(x)), || format!("case {case}: {arr:?}"))?;
    }
    Ok(format!("{cases} random cases conserve mass"))
}

fn dsl_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let thresholds = ThresholdSet::new();
    let total = 1_000;
    for i in 0..total {
        let depth = rng.random_range(1..=6);
        let t = random_expr(&mut rng, depth);
        let src = to_source(&t);
        let parsed = parse_rule(&src).map_err(|e| format!("#{i} `{src}`: {e}"))?;
        for a in assignments() {
            let got = eval_bool(&parsed, &realize(a), &thresholds).map_err(|e| format!("#{i} `{src}`: {e}"))?;
            check(got == truth(&t, a), || format!("#{i} `{src}` under {a:?}"))?;
        }
        let printed = parsed.to_string();
        let reparsed = parse_rule(&printed).map_err(|e| format!("#{i} reprint `{printed}`: {e}"))?;
        check(reparsed == parsed, || format!("#{i} round trip `{src}` -> `{printed}`"))?;
    }
    Ok(format!("{total} expressions agree on all 16 assignments and round-trip"))
}

fn exclusivity() -> Outcome {
    let wb = bgs();
    KnowledgeModel::from_workbook(&wb).map_err(|e| format!("fixture rejected: {e}"))?;
    let a = parse_rule("pump_on and not valve_open").map_err(|e| e.to_string())?;
    let b = parse_rule("pump_on or alarm").map_err(|e| e.to_string())?;
    let report = check_rule_set(&[a.clone(), b.clone()], &ThresholdSet::new()).map_err(|e| e.to_string())?;
    let w = report.report.witness.ok_or("overlapping pair accepted")?;
    let snap = Snapshot::from_pairs(
        w.assignment
            .iter()
            .map(|(k, v)| (k.as_str(), klafate::ruledsl::Value::Bool(*v))),
    )
    .map_err(|e| e.to_string())?;
    let t = ThresholdSet::new();
    let both = eval_bool(&a, &snap, &t).map_err(|e| e.to_string())? && eval_bool(&b, &snap, &t).map_err(|e| e.to_string())?;
    check(both, || format!("witness {:?} does not fire both rules", w.assignment))?;
    Ok(format!(
        "{} system FMs exclusive; overlap witness {:?}",
        wb.system_fms.len(),
        w.assignment
    ))
}

fn recipes() -> Outcome {
    let seed = 7;
    let secs = 1_800;
    let started = Instant::now();
    let trace = |r: Recipe| {
        let mut sim = Simulator::new(seed, r.clone());
        sim.set_recipe(r);
        sim.run_for_secs(secs);
        product_times(sim.trace())
    };
    let (np, x1, x2) = (trace(Recipe::np()), trace(Recipe::x1()), trace(Recipe::x2()));
    let wall = started.elapsed().as_secs_f64();
    let acceleration = 3.0 * secs as f64 / wall.max(1e-9);

    let np30 = count_rate(&np, 0, 1_800_000);
    near("NP 30-min", np30, 3.4, 0.1)?;
    let x1_30 = count_rate(&x1, 0, 1_800_000);
    near("X1 30-min", x1_30, 2.9, 0.1)?;
    let estimate = Recipe::x1().estimate.ok_or("X1 has no estimate")?;
    let v = validate_rule(&[x1_30], &[estimate], &[1.0], 1.0, Horizon::LongTerm).map_err(|e| e.to_string())?;
    near("K_V", v.k_v, 0.725, 0.03)?;
    near("K_V oracle", v.k_v, x1_30 / 4.0, 1e-12)?;
    check(!v.accepted, || "X1 accepted".into())?;

    let bins = minute_bins(&x2, 10);
    let ma5 = full_window_means(&bins, 5);
    let lib = moving_average(
        &production_rate(&x2, 0, 600_000, 60_000).map_err(|e| e.to_string())?,
        5,
    )
    .map_err(|e| e.to_string())?
    .values();
    for (got, want) in lib[4..].iter().zip(&ma5) {
        near("MA5 vs oracle", *got, *want, 1e-12)?;
    }
    check(ma5[0] >= 4.2, || format!("first X2 MA5 {} below 4.2", ma5[0]))?;
    let x2_30 = count_rate(&x2, 0, 1_800_000);
    check(x2_30 < 4.2 && x2_30 > np30, || format!("X2 30-min {x2_30} not in ({np30}, 4.2)"))?;
    check(wall < 30.0 && acceleration >= 60.0, || format!("{wall:.2} s wall, {acceleration:.0}x"))?;
    Ok(format!(
        "NP {np30:.3}, X1 {x1_30:.3} (K_V {:.3}, rejected), X2 MA5 {:.2} -> 30-min {x2_30:.3}; {acceleration:.0}x real time",
        v.k_v, ma5[0]
    ))
}

fn anova() -> Outcome {
    let groups: Vec<Vec<f64>> = [Recipe::np(), Recipe::x1(), Recipe::x2()]
        .into_iter()
        .map(|r| {
            let mut sim = Simulator::new(11, r.clone());
            sim.set_recipe(r);
            sim.run_for_secs(1_800);
            minute_bins(&product_times(sim.trace()), 30)
        })
        .collect();
    let res = anova_one_way(&groups).map_err(|e| e.to_string())?;
    check(res.rejects_null(0.05), || format!("p = {}", res.p_value))?;

    let fixtures: [Vec<Vec<f64>>; 5] = [
        vec![vec![1., 2., 3.], vec![2., 3., 4.], vec![10., 11., 12.]],
        vec![vec![4., 5., 6., 5.], vec![6., 7., 8., 7.]],
        vec![vec![23., 25., 21., 22.], vec![30., 28., 27., 29.], vec![18., 20., 19., 21.]],
        vec![vec![5.1, 4.9, 5.0, 5.2], vec![5.0, 5.1, 4.8, 5.3], vec![5.2, 5.0, 4.9, 5.1]],
        vec![vec![2., 4., 3., 5.], vec![3., 5., 4., 6.], vec![4., 6., 5., 7.], vec![1., 3., 2., 4.]],
    ];
    let mut worst: f64 = 0.0;
    for (i, g) in fixtures.iter().enumerate() {
        let got = anova_one_way(g).map_err(|e| format!("fixture {i}: {e}"))?;
        let (f, d1, d2) = f_statistic(g);
        near(&format!("fixture {i} F"), got.f_stat, f, 1e-9 * f.max(1.0))?;
        let p = f_tail_quadrature(f, d1, d2);
        near(&format!("fixture {i} p"), got.p_value, p, 1e-6)?;
        let direct = f_survival(f, d1, d2).map_err(|e| e.to_string())?;
        near(&format!("fixture {i} survival"), direct, p, 1e-6)?;
        worst = worst.max((got.p_value - p).abs());
    }
    Ok(format!(
        "recipes F = {:.2}, p = {:.3e}; 5 fixtures within {worst:.1e} of quadrature",
        res.f_stat, res.p_value
    ))
}

async fn post(app: &axum::Router, body: &str) -> Result<StatusCode, String> {
    let req = Request::post("/event")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    Ok(resp.status())
}

async fn session_run(log: std::path::PathBuf) -> Result<(Engine, Vec<Assessment>), String> {
    let bus = Bus::default();
    let engine = Engine::new(
        bgs(),
        EventStore::open(&log).map_err(|e| e.to_string())?,
        bus.clone(),
        Arc::new(SystemClock),
        EngineConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let scenario = Scenario::parse(
        "at 5 inject air_valve_closed\nat 20 clear air_valve_closed\n\
         at 30 inject air_valve_closed\nat 45 clear air_valve_closed\n\
         at 55 inject air_valve_closed\n",
    )
    .map_err(|e| e.to_string())?;
    let source = SimSource::new(Simulator::new(3, Recipe::np()), scenario);
    let shared = Arc::new(RwLock::new(Shared::default()));
    let (tx, rx) = tokio::sync::mpsc::channel(16);
    let app = router(AppState {
        commands: tx.clone(),
        bus: bus.clone(),
        shared: shared.clone(),
    });
    let config = LoopConfig {
        period: Duration::from_millis(5),
        ..LoopConfig::default()
    };
    let mut client = bus.subscribe();
    let handle = tokio::spawn(run(engine, source, config, rx, shared));
    let mut seen = Vec::new();
    while seen.len() < 3 {
        let msg = tokio::time::timeout(Duration::from_secs(10), client.recv())
            .await
            .map_err(|_| "no assessment within 10 s")?
            .map_err(|e| e.to_string())?;
        if msg.topic != TOPIC_ASSESSMENT {
            continue;
        }
        let a: Assessment = serde_json::from_str(&msg.payload).map_err(|e| e.to_string())?;
        bus.publish(&event_topic("ack"), "{}");
        // Wait for the engine to take the ack before the HTTP steps.
        loop {
            tokio::time::sleep(Duration::from_millis(2)).await;
            let phase = app_phase(&app).await?;
            if phase == "AWAIT_RESOLUTION" {
                break;
            }
        }
        check(post(&app, r#"{"kind":"solved"}"#).await? == StatusCode::OK, || "solved rejected".into())?;
        check(post(&app, r#"{"kind":"rating","stars":4}"#).await? == StatusCode::OK, || "rating rejected".into())?;
        seen.push(a);
    }
    check(post(&app, r#"{"kind":"rating","stars":4}"#).await? == StatusCode::CONFLICT, || "stray rating accepted".into())?;
    tx.send(Command::Shutdown).await.map_err(|e| e.to_string())?;
    let engine = handle.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    Ok((engine, seen))
}

async fn app_phase(app: &axum::Router) -> Result<String, String> {
    let resp = app
        .clone()
        .oneshot(Request::get("/health").body(Body::empty()).map_err(|e| e.to_string())?)
        .await
        .map_err(|e| e.to_string())?;
    let bytes = http_body_util::BodyExt::collect(resp.into_body())
        .await
        .map_err(|e| e.to_string())?
        .to_bytes();
    let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    Ok(v["phase"].as_str().unwrap_or_default().to_string())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("events.ndjson");
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let (engine, seen) = rt.block_on(session_run(log.clone()))?;

    let first = &seen[0];
    check(first.fm_id == "LQ", || format!("first assessment {}", first.fm_id))?;
    near("prior w_R", first.w_r.unwrap_or(f64::NAN), 0.71, 1e-12)?;
    let prior_u = 1.0 - 0.99 * 0.71 - 2.0 * 0.005 * 0.71;
    near("prior U", first.uncertainty.unwrap_or(f64::NAN), prior_u, 1e-12)?;
    near("second w_R", seen[1].w_r.unwrap_or(f64::NAN), 0.836_666_666_666_666_7, 1e-6)?;

    let w_r = engine.weights().get("LQ").ok_or("LQ missing")?.w_r;
    near("w_R", w_r, 0.8367, 1e-4)?;
    near("w_R", w_r, (0.71 + 1.0 + 0.8) / 3.0, 1e-6)?;

    let records = read_log(&log).map_err(|e| e.to_string())?;
    let persisted = records
        .iter()
        .filter(|r| r.kind == EventKind::WeightUpdate && r.payload["reason"] == serde_json::json!(UpdateReason::Resolution))
        .count();
    check(persisted == 3, || format!("{persisted} persisted resolutions"))?;
    let stars = records
        .iter()
        .filter(|r| r.kind == EventKind::Rating && r.payload["stars"] == 4)
        .count();
    check(stars == 3, || format!("{stars} rating records with 4 stars"))?;
    let replayed = replay(&records).map_err(|e| e.to_string())?;
    let live = canonical_json(engine.weights());
    check(canonical_json(&replayed.weights) == live, || "replay differs from live weights".into())?;
    let restored = restore(&records).map_err(|e| e.to_string())?.ok_or("nothing to restore")?;
    check(canonical_json(&restored) == live, || "restore differs from live weights".into())?;

    let median = engine
        .metrics()
        .report()
        .publish_to_ack
        .median_ms
        .ok_or("no publish-to-ack samples")?;
    check(median < 1_000.0, || format!("publish-to-ack median {median} ms"))?;
    Ok(format!(
        "3 episodes, w_R {w_r:.6}, replay byte-identical ({} bytes), publish-to-ack median {median} ms",
        live.len()
    ))
}

/// Independent legality table: the events each phase accepts.
fn accepts(phase: Phase, input: &Input) -> bool {
    let name = input.name();
    match phase {
        Phase::FirstRun => name == "prime",
        Phase::Monitor => name == "publish",
        Phase::AwaitAck => name == "ack",
        Phase::AwaitResolution => name == "next" || name == "solved",
        Phase::AwaitRating => name == "rating",
        Phase::AwaitReport => name == "report",
    }
}

fn state_machine() -> Outcome {
    let wb = bgs();
    let model = KnowledgeModel::from_workbook(&wb).map_err(|e| e.to_string())?;
    let weights = WeightTable::from_workbook(&wb)
        .and_then(|w| w.current(model.frame().labels()))
        .map_err(|e| e.to_string())?;
    let fault = assess(&model, &wb, &weights, &air_valve_snapshot(), 2).map_err(|e| e.to_string())?;
    let inputs = vec![
        Input::Prime,
        Input::Publish(Box::new(fault.clone())),
        Input::User(UserEvent::Ack),
        Input::User(UserEvent::Next),
        Input::User(UserEvent::Solved),
        Input::User(UserEvent::Rating { stars: Some(4) }),
        Input::User(UserEvent::Rating { stars: None }),
        Input::User(UserEvent::Report { text: "x".into() }),
    ];
    let mut illegal = 0;
    let mut legal = 0;
    for phase in Phase::ALL {
        let base = Session::reach(phase, &fault);
        check(base.phase() == phase, || format!("could not reach {phase}"))?;
        for input in &inputs {
            let mut s = base.clone();
            match s.handle(input.clone()) {
                Ok(t) => {
                    check(accepts(phase, input), || format!("{phase} accepted {}", input.name()))?;
                    check(t.from == phase && t.to == s.phase(), || "inconsistent transition".into())?;
                    legal += 1;
                }
                Err(_) => {
                    check(!accepts(phase, input), || format!("{phase} rejected {}", input.name()))?;
                    check(s == base, || format!("{phase} mutated on {}", input.name()))?;
                    illegal += 1;
                }
            }
        }
    }
    // Random walks over the reachable space.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut s = Session::new();
    for _ in 0..20_000 {
        let input = inputs[rng.random_range(0..inputs.len())].clone();
        let before = s.clone();
        if s.handle(input.clone()).is_err() {
            check(s == before, || format!("walk mutated on {}", input.name()))?;
        }
    }
    Ok(format!("{legal} legal and {illegal} illegal (phase, event) pairs; 20000-step walk safe"))
}

fn main() -> ExitCode {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("worked example", 1.0, worked_example),
        ("evidence conservation", 5.0, conservation),
        ("rule DSL oracle", 10.0, dsl_oracle),
        ("mutual exclusivity", 1.0, exclusivity),
        ("recipe validation", 30.0, recipes),
        ("ANOVA", 2.0, anova),
        ("end-to-end session", 20.0, end_to_end),
        ("state machine safety", 1.0, state_machine),
    ];
    let mut failed = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        let result = result.and_then(|d| {
            if secs <= budget {
                Ok(d)
            } else {
                Err(format!("{d}; took {secs:.2} s, budget {budget} s"))
            }
        });
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.2} s): {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2} s): {e}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
