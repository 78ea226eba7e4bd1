//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use klafate::ruledsl::{Snapshot, Value};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Boolean expression over four conditions: two flags and two comparisons.
#[derive(Debug, Clone)]
pub enum TExpr {
    Cond(usize),
    Const(bool),
    Not(Box<TExpr>),
    And(Box<TExpr>, Box<TExpr>),
    Or(Box<TExpr>, Box<TExpr>),
    Same(Box<TExpr>, Box<TExpr>),
    Differ(Box<TExpr>, Box<TExpr>),
    Select(Box<TExpr>, Box<TExpr>, Box<TExpr>),
}

pub const CONDITIONS: usize = 4;

fn cond_text(i: usize) -> &'static str {
    ["c0", "c1", "level < 3", "pressure >= 5"][i]
}

pub fn random_expr(rng: &mut impl Rng, depth: u32) -> TExpr {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.9) {
            TExpr::Cond(rng.random_range(0..CONDITIONS))
        } else {
            TExpr::Const(rng.random())
        };
    }
    let choice = rng.random_range(0..6);
    let mut sub = || Box::new(random_expr(rng, depth - 1));
    match choice {
        0 => TExpr::Not(sub()),
        1 => TExpr::And(sub(), sub()),
        2 => TExpr::Or(sub(), sub()),
        3 => TExpr::Same(sub(), sub()),
        4 => TExpr::Differ(sub(), sub()),
        _ => TExpr::Select(sub(), sub(), sub()),
    }
}

/// Fully parenthesized source text.
pub fn to_source(e: &TExpr) -> String {
    match e {
        TExpr::Cond(i) => format!("({})", cond_text(*i)),
        TExpr::Const(b) => b.to_string(),
        TExpr::Not(a) => format!("(not {})", to_source(a)),
        TExpr::And(a, b) => format!("({} and {})", to_source(a), to_source(b)),
        TExpr::Or(a, b) => format!("({} or {})", to_source(a), to_source(b)),
        TExpr::Same(a, b) => format!("({} == {})", to_source(a), to_source(b)),
        TExpr::Differ(a, b) => format!("({} != {})", to_source(a), to_source(b)),
        TExpr::Select(v, c, o) => format!("({} if {} else {})", to_source(v), to_source(c), to_source(o)),
    }
}

pub fn truth(e: &TExpr, assignment: [bool; CONDITIONS]) -> bool {
    match e {
        TExpr::Cond(i) => assignment[*i],
        TExpr::Const(b) => *b,
        TExpr::Not(a) => !truth(a, assignment),
        TExpr::And(a, b) => truth(a, assignment) && truth(b, assignment),
        TExpr::Or(a, b) => truth(a, assignment) || truth(b, assignment),
        TExpr::Same(a, b) => truth(a, assignment) == truth(b, assignment),
        TExpr::Differ(a, b) => truth(a, assignment) != truth(b, assignment),
        TExpr::Select(v, c, o) => {
            if truth(c, assignment) {
                truth(v, assignment)
            } else {
                truth(o, assignment)
            }
        }
    }
}

/// A snapshot realizing the given truth values of the four conditions.
pub fn realize(assignment: [bool; CONDITIONS]) -> Snapshot {
    Snapshot::from_pairs([
        ("c0", Value::Bool(assignment[0])),
        ("c1", Value::Bool(assignment[1])),
        ("level", Value::Real(if assignment[2] { 2.0 } else { 4.0 })),
        ("pressure", Value::Real(if assignment[3] { 6.0 } else { 1.0 })),
    ])
    .unwrap()
}

pub fn assignments() -> impl Iterator<Item = [bool; CONDITIONS]> {
    (0..1u32 << CONDITIONS).map(|bits| std::array::from_fn(|i| bits >> i & 1 == 1))
}

/// Composite Simpson rule on [a, b] with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// P(X > f) for X ~ F(d1, d2) by direct quadrature of the density.
///
/// With x = (d2/d1)·tan²θ the F density times dx becomes
/// 2·sin^(d1-1)θ·cos^(d2-1)θ dθ up to the normalizing constant, which is
/// smooth on [0, π/2] for d1, d2 ≥ 1. The constant is integrated the same way.
pub fn f_tail_quadrature(f: f64, d1: f64, d2: f64) -> f64 {
    let g = |t: f64| 2.0 * t.sin().powf(d1 - 1.0) * t.cos().powf(d2 - 1.0);
    let theta = (f * d1 / d2).sqrt().atan();
    let n = 200_000;
    let total = simpson(g, 0.0, std::f64::consts::FRAC_PI_2, n);
    let tail = simpson(g, theta, std::f64::consts::FRAC_PI_2, n);
    tail / total
}

/// Textbook one-way F statistic.
pub fn f_statistic(groups: &[Vec<f64>]) -> (f64, f64, f64) {
    let k = groups.len() as f64;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let grand = all.iter().sum::<f64>() / n;
    let mean = |g: &Vec<f64>| g.iter().sum::<f64>() / g.len() as f64;
    let ssb: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    ((ssb / (k - 1.0)) / (ssw / (n - k)), k - 1.0, n - k)
}

/// Products completed in (from, to], per minute.
pub fn count_rate(products: &[u64], from_ms: u64, to_ms: u64) -> f64 {
    let n = products.iter().filter(|&&t| t > from_ms && t <= to_ms).count();
    n as f64 / ((to_ms - from_ms) as f64 / 60_000.0)
}

pub fn minute_bins(products: &[u64], minutes: u64) -> Vec<f64> {
    (0..minutes)
        .map(|m| count_rate(products, m * 60_000, (m + 1) * 60_000))
        .collect()
}

/// Trailing means over exactly `n` samples (full windows only).
pub fn full_window_means(xs: &[f64], n: usize) -> Vec<f64> {
    xs.windows(n).map(|w| w.iter().sum::<f64>() / n as f64).collect()
}
