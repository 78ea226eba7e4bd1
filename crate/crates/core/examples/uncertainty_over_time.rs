//! How a rule's weight and the reported uncertainty move as operators solve,
//! rate and report on repeated detections.

use klafate::evidence::{build_evidence, Frame};
use klafate::fmea::load_workbook;
use klafate::weights::{user_rating_weight, WeightTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let wb = load_workbook(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bgs.fmea"))?;
    let frame = Frame::new(wb.system_labels())?;
    let mut weights = WeightTable::from_workbook(&wb)?;

    // (solved?, stars) per LQ episode; unsolved episodes end in a report.
    let episodes = [(true, Some(5)), (true, Some(4)), (false, None), (true, None), (true, Some(2)), (false, None), (true, Some(5))];

    println!("{:>3} {:<10} {:>6} {:>6} {:>7}", "#", "outcome", "w_R", "m(LQ)", "U");
    let show = |i: usize, what: &str, w: &WeightTable| -> Result<(), Box<dyn std::error::Error>> {
        let current = w.current(frame.labels())?;
        let mv = build_evidence(&frame, "LQ", &current, wb.approximation_exponent())?;
        println!("{i:>3} {what:<10} {:>6.3} {:>6.3} {:>7.4}", current[0], mv.mass_of("LQ")?, mv.uncertainty());
        Ok(())
    };
    show(0, "prior", &weights)?;
    for (i, (solved, stars)) in episodes.into_iter().enumerate() {
        let (w_k, w_u, what) = match (solved, stars) {
            (true, Some(s)) => (1.0, Some(user_rating_weight(s)?), format!("solved {s}*")),
            (true, None) => (1.0, None, "solved".to_string()),
            (false, _) => (0.0, None, "reported".to_string()),
        };
        weights.resolve("LQ", w_k, w_u, (i as u64 + 1) * 60_000)?;
        show(i + 1, &what, &weights)?;
    }
    let lq = weights.get("LQ").unwrap();
    println!("\nlast three rating criteria average {:.3}", lq.windowed_w_ra(3));
    Ok(())
}
