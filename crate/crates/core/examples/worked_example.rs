//! The air-valve walkthrough: panel weights, one four-star resolution and
//! the evidence array produced for the next low-quality detection.

use klafate::bgsim::{Fault, Recipe, Simulator};
use klafate::evidence::approximation_factor;
use klafate::fmea::load_workbook;
use klafate::knowledge::{assess, KnowledgeModel};
use klafate::weights::{user_rating_weight, workbook_panel, WeightTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let wb = load_workbook(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bgs.fmea"))?;

    let panel = workbook_panel(&wb)?;
    for m in &panel.members {
        println!("{:<10} w_EG={:.2} w_EM={:.2} w_KA={:.2} -> w_M={:.2}", m.name, m.w_eg, m.w_em, m.w_ka, m.w_m);
    }
    println!("panel w_P = {:.4}", panel.w_p);

    let mut weights = WeightTable::from_workbook(&wb)?;
    let lq = weights.resolve("LQ", 1.0, Some(user_rating_weight(4)?), 0)?;
    println!("LQ after a 4-star solve: w_R = {:.4} after {} resolution(s)", lq.w_r, lq.history.len());

    let mut sim = Simulator::new(1, Recipe::np());
    sim.run_for_secs(60);
    sim.inject_fault(Fault::AirValveClosed);
    sim.run_for_secs(30);

    let model = KnowledgeModel::from_workbook(&wb)?;
    let exponent = wb.approximation_exponent();
    println!("k = 1 - 10^-{exponent} = {}", approximation_factor(exponent)?);
    let current = weights.current(model.frame().labels())?;
    let a = assess(&model, &wb, &current, &sim.snapshot(), exponent)?;
    println!("dispatched {} ({})", a.fm_id, a.label);
    for (label, m) in a.frame.iter().zip(&a.evidence) {
        println!("  m({label}) = {m:.5}");
    }
    println!("  U = {:.4}", a.evidence.last().unwrap());
    for p in &a.pairs {
        println!("  - {}: {}", p.cause, p.recommendation);
    }
    Ok(())
}
