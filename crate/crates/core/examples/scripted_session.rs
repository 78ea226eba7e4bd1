//! An operator session without the network: the engine consumes simulator
//! snapshots, publishes an assessment, and the operator walks it through
//! acknowledgement, resolution and rating. The event log is then replayed.

use std::sync::Arc;

use klafate::backend::{replay, Bus, Engine, EngineConfig, EventStore, ManualClock, UserEvent};
use klafate::bgsim::{Fault, Recipe, Simulator};
use klafate::fmea::load_workbook;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let wb = load_workbook(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bgs.fmea"))?;
    let clock = ManualClock::new(0);
    let bus = Bus::default();
    let mut statuses = bus.subscribe();
    let mut engine = Engine::new(wb, EventStore::in_memory(), bus, Arc::new(clock.clone()), EngineConfig::default())?;
    println!("start in {}", engine.phase());

    let mut sim = Simulator::new(3, Recipe::np());
    sim.run_for_secs(60);
    sim.inject_fault(Fault::VacuumPumpOff);

    let assessment = loop {
        sim.run_for_secs(1);
        clock.set(sim.clock_ms());
        if let Some(a) = engine.on_snapshot(&sim.snapshot())? {
            break a;
        }
    };
    println!(
        "published #{} {} at {} ms, U = {:.4}",
        assessment.seq,
        assessment.fm_id,
        engine.now_ms(),
        assessment.uncertainty.unwrap_or(1.0)
    );
    for (i, p) in assessment.pairs.iter().enumerate() {
        println!("  {}. {}", i + 1, p.recommendation);
    }

    clock.advance(4_000);
    let mut steps = vec![UserEvent::Ack];
    let solving = assessment.pairs.iter().position(|p| p.component_fm == "no_vacuum_pump").unwrap_or(0);
    steps.extend(std::iter::repeat_n(UserEvent::Next, solving));
    steps.push(UserEvent::Solved);
    steps.push(UserEvent::Rating { stars: Some(5) });
    for step in steps {
        let name = step.name();
        let t = engine.on_user_event(step)?;
        println!("{name:<7} {} -> {}", t.from, t.to);
        clock.advance(2_000);
    }

    sim.clear_fault(Fault::VacuumPumpOff);
    println!("LQ weight now {:.4}", engine.weights().get("LQ").unwrap().w_r);

    while let Ok(msg) = statuses.try_recv() {
        println!("bus {} {}", msg.topic, msg.payload);
    }

    println!("\nevent log:");
    for r in engine.store().records() {
        println!("  {:>3} {:>7} {:?}", r.seq, r.ts_ms, r.kind);
    }
    let replayed = replay(engine.store().records())?;
    println!("replay reproduces weights: {}", replayed.weights == *engine.weights());
    let m = engine.metrics().report();
    println!("publish-to-ack median {:?} ms", m.publish_to_ack.median_ms);
    Ok(())
}
