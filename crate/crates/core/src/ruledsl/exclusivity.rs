use std::collections::BTreeMap;

use serde::Serialize;

use super::ast::{CmpOp, Expr, Ident};
use super::{eval_bool, DslError, Snapshot, ThresholdSet, Value, REAL_EQ_TOLERANCE};

/// Exhaustive enumeration bound (2^20 assignments).
pub const MAX_CONDITION_VARS: usize = 20;

/// Two rules that hold at the same time, with the assignment showing it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overlap {
    pub first: usize,
    pub second: usize,
    pub assignment: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusivityReport {
    pub exclusive: bool,
    pub assignments_checked: u64,
    pub witness: Option<Overlap>,
}

/// Checks that no assignment of the boolean `condition_vars` satisfies two
/// rules at once.
pub fn check_mutual_exclusivity(
    rules: &[Expr],
    condition_vars: &[String],
) -> Result<ExclusivityReport, DslError> {
    check_mutual_exclusivity_with(rules, condition_vars, |_| true)
}

/// As [`check_mutual_exclusivity`], skipping assignments for which
/// `feasible` returns false (e.g. `x < 1` and `x > 5` both true).
pub fn check_mutual_exclusivity_with(
    rules: &[Expr],
    condition_vars: &[String],
    feasible: impl Fn(&BTreeMap<String, bool>) -> bool,
) -> Result<ExclusivityReport, DslError> {
    if condition_vars.len() > MAX_CONDITION_VARS {
        return Err(DslError::Capacity {
            count: condition_vars.len(),
            limit: MAX_CONDITION_VARS,
        });
    }
    let empty = ThresholdSet::new();
    let total: u64 = 1 << condition_vars.len();
    let mut checked = 0u64;
    for bits in 0..total {
        let assignment: BTreeMap<String, bool> = condition_vars
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), bits & (1 << i) != 0))
            .collect();
        if !feasible(&assignment) {
            continue;
        }
        checked += 1;
        let snap = Snapshot::from_pairs(assignment.iter().map(|(k, v)| (k.clone(), Value::Bool(*v))))?;
        let mut first_true = None;
        for (i, rule) in rules.iter().enumerate() {
            if eval_bool(rule, &snap, &empty)? {
                if let Some(first) = first_true {
                    return Ok(ExclusivityReport {
                        exclusive: false,
                        assignments_checked: checked,
                        witness: Some(Overlap {
                            first,
                            second: i,
                            assignment,
                        }),
                    });
                }
                first_true = Some(i);
            }
        }
    }
    Ok(ExclusivityReport {
        exclusive: true,
        assignments_checked: checked,
        witness: None,
    })
}

/// Result of [`check_rule_set`]: the report plus the atomic conditions the
/// rules were abstracted over (witness keys are these texts).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleSetReport {
    pub report: ExclusivityReport,
    pub conditions: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Bound {
    value: f64,
    strict: bool,
}

#[derive(Debug, Clone, Copy)]
struct Constraint {
    var: usize,
    op: CmpOp,
    value: f64,
}

/// Checks a set of process rules for mutual exclusivity.
///
/// Every comparison and boolean variable becomes an independent boolean
/// condition. Assignments that are impossible for a real variable compared
/// against constants (say `rate < 1.7` and `rate > 5` both true) are skipped.
pub fn check_rule_set(rules: &[Expr], thresholds: &ThresholdSet) -> Result<RuleSetReport, DslError> {
    let mut atoms: Vec<String> = Vec::new();
    let mut constraints: BTreeMap<String, Constraint> = BTreeMap::new();
    let mut vars: Vec<String> = Vec::new();

    let mut abstracted = Vec::with_capacity(rules.len());
    for rule in rules {
        let out = rule.rewrite(&mut |node: &Expr| -> Result<Option<Expr>, DslError> {
            let atom = match node {
                Expr::Not(_) | Expr::And(..) | Expr::Or(..) | Expr::Bool(_) => return Ok(None),
                Expr::Compare { lhs, op, rhs } => {
                    // `flag == true` / `flag != false` collapse onto the flag itself
                    if let (Some(id), Expr::Bool(b)) = (lhs.ident(), &**rhs) {
                        if !thresholds.contains(&id.name) && matches!(op, CmpOp::Eq | CmpOp::Ne) {
                            let key = id.name.clone();
                            if !atoms.contains(&key) {
                                atoms.push(key.clone());
                            }
                            let positive = (*op == CmpOp::Eq) == *b;
                            let leaf = Expr::Ref(Ident::new(key));
                            return Ok(Some(if positive { leaf } else { Expr::not(leaf) }));
                        }
                    }
                    let key = node.to_string();
                    if let Some(c) = linear_constraint(lhs, *op, rhs, thresholds, &mut vars) {
                        constraints.insert(key.clone(), c);
                    }
                    key
                }
                other => other.to_string(),
            };
            if !atoms.contains(&atom) {
                atoms.push(atom.clone());
            }
            Ok(Some(Expr::Ref(Ident::new(atom))))
        })?;
        abstracted.push(out);
    }

    let report = check_mutual_exclusivity_with(&abstracted, &atoms, |assignment| {
        feasible(assignment, &constraints, vars.len())
    })?;
    Ok(RuleSetReport {
        report,
        conditions: atoms,
    })
}

fn constant(e: &Expr, thresholds: &ThresholdSet) -> Option<f64> {
    match e {
        Expr::Number(x) => Some(*x),
        Expr::Threshold(id) | Expr::Ref(id) => thresholds.value(&id.name),
        _ => None,
    }
}

fn linear_constraint(
    lhs: &Expr,
    op: CmpOp,
    rhs: &Expr,
    thresholds: &ThresholdSet,
    vars: &mut Vec<String>,
) -> Option<Constraint> {
    let mut var_index = |name: &str| match vars.iter().position(|v| v == name) {
        Some(i) => i,
        None => {
            vars.push(name.to_string());
            vars.len() - 1
        }
    };
    let is_var = |e: &Expr| matches!(e, Expr::Var(_) | Expr::Ref(_)) && constant(e, thresholds).is_none();
    if is_var(lhs) {
        let value = constant(rhs, thresholds)?;
        let var = var_index(&lhs.ident()?.name);
        return Some(Constraint { var, op, value });
    }
    if is_var(rhs) {
        let value = constant(lhs, thresholds)?;
        let flipped = match op {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        };
        let var = var_index(&rhs.ident()?.name);
        return Some(Constraint { var, op: flipped, value });
    }
    None
}

fn feasible(assignment: &BTreeMap<String, bool>, constraints: &BTreeMap<String, Constraint>, nvars: usize) -> bool {
    let mut lower: Vec<Option<Bound>> = vec![None; nvars];
    let mut upper: Vec<Option<Bound>> = vec![None; nvars];
    let mut equal: Vec<Option<f64>> = vec![None; nvars];
    let mut excluded: Vec<Vec<f64>> = vec![Vec::new(); nvars];

    for (key, c) in constraints {
        let holds = assignment.get(key).copied().unwrap_or(false);
        let op = if holds {
            c.op
        } else {
            match c.op {
                CmpOp::Lt => CmpOp::Ge,
                CmpOp::Le => CmpOp::Gt,
                CmpOp::Gt => CmpOp::Le,
                CmpOp::Ge => CmpOp::Lt,
                CmpOp::Eq => CmpOp::Ne,
                CmpOp::Ne => CmpOp::Eq,
            }
        };
        let v = c.value;
        let tighten_low = |b: &mut Option<Bound>, strict: bool| match b {
            Some(cur) if cur.value > v || (cur.value == v && cur.strict) => {}
            _ => *b = Some(Bound { value: v, strict }),
        };
        let tighten_high = |b: &mut Option<Bound>, strict: bool| match b {
            Some(cur) if cur.value < v || (cur.value == v && cur.strict) => {}
            _ => *b = Some(Bound { value: v, strict }),
        };
        match op {
            CmpOp::Gt => tighten_low(&mut lower[c.var], true),
            CmpOp::Ge => tighten_low(&mut lower[c.var], false),
            CmpOp::Lt => tighten_high(&mut upper[c.var], true),
            CmpOp::Le => tighten_high(&mut upper[c.var], false),
            CmpOp::Eq => match equal[c.var] {
                Some(e) if (e - v).abs() > REAL_EQ_TOLERANCE => return false,
                _ => equal[c.var] = Some(v),
            },
            CmpOp::Ne => excluded[c.var].push(v),
        }
    }

    (0..nvars).all(|i| {
        let above = |x: f64| lower[i].is_none_or(|b| if b.strict { x > b.value } else { x >= b.value });
        let below = |x: f64| upper[i].is_none_or(|b| if b.strict { x < b.value } else { x <= b.value });
        let allowed = |x: f64| !excluded[i].iter().any(|e| (e - x).abs() <= REAL_EQ_TOLERANCE);
        if let Some(e) = equal[i] {
            return above(e) && below(e) && allowed(e);
        }
        match (lower[i], upper[i]) {
            (Some(lo), Some(hi)) => {
                if lo.value < hi.value {
                    true
                } else if lo.value == hi.value {
                    !lo.strict && !hi.strict && allowed(lo.value)
                } else {
                    false
                }
            }
            _ => true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ruledsl::parse_rule;

    #[test]
    fn rule_set_with_correlated_comparisons() {
        let mut t = ThresholdSet::new();
        t.insert("LOW", 1.7, None).unwrap();
        t.insert("HIGH", 5.0, None).unwrap();
        let rules = [
            parse_rule("rate < LOW").unwrap(),
            parse_rule("rate > HIGH").unwrap(),
            parse_rule("LOW <= rate and rate <= HIGH").unwrap(),
        ];
        let r = check_rule_set(&rules, &t).unwrap();
        assert!(r.report.exclusive, "{r:?}");
        assert_eq!(r.conditions.len(), 4);

        let overlapping = [parse_rule("rate < HIGH").unwrap(), parse_rule("rate > LOW").unwrap()];
        let r = check_rule_set(&overlapping, &t).unwrap();
        assert!(!r.report.exclusive);
        let w = r.report.witness.unwrap();
        assert!(w.assignment["rate < HIGH"] && w.assignment["rate > LOW"]);
    }

    #[test]
    fn boolean_flag_comparisons_share_an_atom() {
        let rules = [
            parse_rule("motor_on == true").unwrap(),
            parse_rule("not motor_on").unwrap(),
            parse_rule("motor_on != true and x > 1").unwrap(),
        ];
        let r = check_rule_set(&rules, &ThresholdSet::new()).unwrap();
        assert!(!r.report.exclusive);
        let w = r.report.witness.unwrap();
        assert_eq!((w.first, w.second), (1, 2));
        assert_eq!(r.conditions, vec!["motor_on".to_string(), "x > 1".to_string()]);
    }

    #[test]
    fn equality_constraints() {
        let rules = [parse_rule("mode == 1").unwrap(), parse_rule("mode == 2").unwrap()];
        assert!(check_rule_set(&rules, &ThresholdSet::new()).unwrap().report.exclusive);
        let rules = [parse_rule("mode >= 1").unwrap(), parse_rule("mode <= 1").unwrap()];
        assert!(!check_rule_set(&rules, &ThresholdSet::new()).unwrap().report.exclusive);
        let rules = [parse_rule("mode > 1").unwrap(), parse_rule("mode <= 1").unwrap()];
        assert!(check_rule_set(&rules, &ThresholdSet::new()).unwrap().report.exclusive);
    }

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn complementary_rules_are_exclusive() {
        let rules = [parse_rule("C1").unwrap(), parse_rule("not C1").unwrap()];
        let r = check_mutual_exclusivity(&rules, &vars(&["C1"])).unwrap();
        assert!(r.exclusive);
        assert_eq!(r.assignments_checked, 2);
    }

    #[test]
    fn overlapping_rules_yield_witness() {
        let rules = [parse_rule("C1 or C2").unwrap(), parse_rule("C1 and C2").unwrap()];
        let r = check_mutual_exclusivity(&rules, &vars(&["C1", "C2"])).unwrap();
        assert!(!r.exclusive);
        let w = r.witness.unwrap();
        assert_eq!((w.first, w.second), (0, 1));
        assert!(w.assignment["C1"]);
        assert!(w.assignment["C2"]);
    }

    #[test]
    fn feasibility_filter_prunes_impossible_assignments() {
        let rules = [parse_rule("A").unwrap(), parse_rule("B").unwrap()];
        let r = check_mutual_exclusivity_with(&rules, &vars(&["A", "B"]), |a| !(a["A"] && a["B"])).unwrap();
        assert!(r.exclusive);
        assert_eq!(r.assignments_checked, 3);
    }

    #[test]
    fn capacity_limit() {
        let names: Vec<String> = (0..21).map(|i| format!("C{i}")).collect();
        assert!(matches!(
            check_mutual_exclusivity(&[], &names),
            Err(DslError::Capacity { count: 21, limit: 20 })
        ));
    }
}
