//! Driving the plant simulator through a fault script and watching which
//! rule fires each half minute.

use klafate::bgsim::{Recipe, Scenario, Simulator};
use klafate::fmea::load_workbook;
use klafate::knowledge::KnowledgeModel;
use klafate::ruledsl::Value;

const SCRIPT: &str = "
at 60 inject air_valve_closed
at 150 clear air_valve_closed
at 240 inject vacuum_pump_off
at 330 clear vacuum_pump_off
at 420 inject silo_empty
at 600 clear silo_empty
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let wb = load_workbook(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bgs.fmea"))?;
    let model = KnowledgeModel::from_workbook(&wb)?;
    let scenario = Scenario::parse(SCRIPT)?;
    let mut sim = Simulator::new(11, Recipe::np());

    let show = |v: Option<Value>| match v {
        Some(Value::Real(x)) => format!("{x:.2}"),
        Some(Value::Bool(b)) => b.to_string(),
        None => "-".into(),
    };
    println!("{:>5} {:>8} {:>9} {:>8} {:>6}  rule", "t[s]", "pressure", "vacuum[s]", "rate", "silo");
    let mut pending = scenario.commands.iter().peekable();
    for t in (30..=720).step_by(30) {
        while let Some((_, cmd)) = pending.next_if(|(at, _)| *at < t) {
            sim.enqueue(cmd.clone());
        }
        sim.run_for_secs(30);
        let snap = sim.snapshot();
        println!(
            "{t:>5} {:>8} {:>9} {:>8} {:>6}  {}",
            show(snap.get("actual_pressure")),
            show(snap.get("vacuum_time")),
            show(snap.get("production_rate")),
            show(snap.get("storage_filling_height_min_state")),
            model.dispatch(&snap)?
        );
    }
    let faults = sim.trace().iter().filter(|e| !matches!(e, klafate::bgsim::TraceEvent::Product { .. })).count();
    println!("\ntrace holds {} events, {faults} of them fault or recipe changes", sim.trace().len());
    Ok(())
}
