//! Loading an FMEA workbook, listing its knowledge tuples and saving a copy.

use klafate::fmea::{causes_and_recommendations, load_workbook, save_workbook};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bgs.fmea");
    let wb = load_workbook(dir)?;

    println!("frame: {:?}", wb.system_labels());
    for fm in &wb.system_fms {
        println!("\n[{}] {} / {}", fm.fm_id, fm.process, fm.label);
        println!("  rule: {}", fm.rule.source);
        if !fm.rule.defs.is_empty() {
            println!("  defs: {}", fm.rule.defs_text());
        }
        println!("  resolved: {}", fm.rule.expr);
        for c in wb.component_fms_of(&fm.fm_id) {
            println!("  - {} <- {}", c.tuple.fm_id, c.tuple.rule.expr);
        }
    }

    println!("\nthresholds by section:");
    for (name, t) in wb.settings.system.iter().chain(wb.settings.component.iter()) {
        println!("  {name} = {} {}", t.value, t.unit.as_deref().unwrap_or(""));
    }

    let pairs = causes_and_recommendations(&wb, "LQ", &["compressed_air_missing", "discharge_flap_stuck"])?;
    println!("\nLQ with two active component FMs:");
    for p in &pairs {
        println!("  {}: {}", p.cause, p.recommendation);
    }

    let out = std::env::temp_dir().join("klafate-workbook-copy.fmea");
    save_workbook(&wb, &out)?;
    let again = load_workbook(&out)?;
    println!("saved to {} (round trip equal: {})", out.display(), again == wb);
    Ok(())
}
