//! Parsing, type checking and evaluating rules, and catching two rules that
//! can fire together.

use klafate::ruledsl::{check_rule_set, eval_bool, parse_rule, typecheck, Kind, Scope, Snapshot, ThresholdSet, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut thresholds = ThresholdSet::new();
    thresholds.insert("LOWEST_PRESSURE", 5.0, Some("bar"))?;
    thresholds.insert("LOWEST_PRODUCTION_RATE", 1.7, Some("prod/min"))?;

    let rule = parse_rule("not actual_pressure >= LOWEST_PRESSURE or production_rate < LOWEST_PRODUCTION_RATE and running")?;
    println!("canonical: {rule}");

    let scope = Scope::new(
        [("actual_pressure", Kind::Real), ("production_rate", Kind::Real), ("running", Kind::Bool)],
        ["LOWEST_PRESSURE", "LOWEST_PRODUCTION_RATE"],
    );
    typecheck(&rule, &scope)?;

    for (pressure, rate) in [(6.0, 3.4), (4.2, 3.4), (6.0, 1.2)] {
        let snap = Snapshot::from_pairs([
            ("actual_pressure", Value::Real(pressure)),
            ("production_rate", Value::Real(rate)),
            ("running", Value::Bool(true)),
        ])?;
        println!("pressure={pressure} rate={rate} -> {}", eval_bool(&rule, &snap, &thresholds)?);
    }

    match parse_rule("actual_pressure >= and running") {
        Err(e) => println!("syntax error: {e}"),
        Ok(_) => unreachable!(),
    }
    if let Err(e) = typecheck(&parse_rule("running > 3")?, &scope) {
        println!("type error: {e}");
    }

    let rules = [
        parse_rule("production_rate < LOWEST_PRODUCTION_RATE")?,
        parse_rule("production_rate < 2.5 and actual_pressure >= LOWEST_PRESSURE")?,
        parse_rule("production_rate > 5")?,
    ];
    let checked = check_rule_set(&rules, &thresholds)?;
    println!("conditions: {:?}", checked.conditions);
    match checked.report.witness {
        Some(w) => println!("rules {} and {} overlap when {:?}", w.first, w.second, w.assignment),
        None => println!("mutually exclusive"),
    }
    Ok(())
}
