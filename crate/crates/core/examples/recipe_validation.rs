//! Comparing recipes by production rate: windowed KPI validation against the
//! recipe estimate and a one-way ANOVA over per-minute rates.

use klafate::bgsim::{run_recipe, Recipe};
use klafate::kpi::{anova_one_way, moving_average, production_rate, validate_rule, window_rate, Horizon};

const MINUTES: u64 = 30;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let end = MINUTES * 60_000;
    let mut groups = Vec::new();
    for recipe in [Recipe::np(), Recipe::x1(), Recipe::x2()] {
        let products = run_recipe(7, recipe.clone(), MINUTES * 60);
        let short = window_rate(&products, 0, 10 * 60_000)?;
        let long = window_rate(&products, 0, end)?;
        print!("{:<3} 10-min {short:.3}  30-min {long:.3}", recipe.label);
        if let Some(target) = recipe.estimate {
            let v = validate_rule(&[short], &[target], &[1.0], 0.9, Horizon::ShortTerm)?;
            print!("  target {target}  K_V {:.3}  accepted {}", v.k_v, v.accepted);
        }
        println!();

        let per_minute = production_rate(&products, 0, end, 60_000)?;
        let ma = moving_average(&per_minute, 5)?;
        let tail: Vec<String> = ma.values().iter().rev().take(3).map(|v| format!("{v:.2}")).collect();
        println!("    MA5 tail {}", tail.join(" "));
        groups.push(per_minute.values());
    }

    let r = anova_one_way(&groups)?;
    println!(
        "ANOVA F({}, {}) = {:.2}, p = {:.3e}, reject at 0.05: {}",
        r.df_between,
        r.df_within,
        r.f_stat,
        r.p_value,
        r.rejects_null(0.05)
    );
    Ok(())
}
