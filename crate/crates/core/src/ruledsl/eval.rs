use super::ast::{CmpOp, Expr};
use super::{DslError, Snapshot, ThresholdSet, Value};

/// Absolute tolerance for `==` / `!=` between reals.
pub const REAL_EQ_TOLERANCE: f64 = 1e-9;

/// Evaluates an expression with short-circuit `and`/`or`/`if`.
///
/// Unresolved references look in the snapshot first, then the thresholds.
/// A missing variable is reported only if evaluation actually reaches it.
pub fn eval(expr: &Expr, snapshot: &Snapshot, thresholds: &ThresholdSet) -> Result<Value, DslError> {
    Ok(match expr {
        Expr::Bool(b) => Value::Bool(*b),
        Expr::Number(x) => Value::Real(*x),
        Expr::Var(id) => snapshot
            .get(&id.name)
            .ok_or_else(|| DslError::MissingVariable(id.name.clone()))?,
        Expr::Threshold(id) => Value::Real(
            thresholds
                .value(&id.name)
                .ok_or_else(|| DslError::MissingThreshold(id.name.clone()))?,
        ),
        Expr::Ref(id) => match snapshot.get(&id.name) {
            Some(v) => v,
            None => thresholds
                .value(&id.name)
                .map(Value::Real)
                .ok_or_else(|| DslError::MissingVariable(id.name.clone()))?,
        },
        Expr::Not(e) => Value::Bool(!truth(e, snapshot, thresholds)?),
        Expr::And(a, b) => {
            Value::Bool(truth(a, snapshot, thresholds)? && truth(b, snapshot, thresholds)?)
        }
        Expr::Or(a, b) => {
            Value::Bool(truth(a, snapshot, thresholds)? || truth(b, snapshot, thresholds)?)
        }
        Expr::Compare { lhs, op, rhs } => {
            let l = eval(lhs, snapshot, thresholds)?;
            let r = eval(rhs, snapshot, thresholds)?;
            Value::Bool(compare(l, *op, r)?)
        }
        Expr::Select {
            value,
            cond,
            otherwise,
        } => {
            if truth(cond, snapshot, thresholds)? {
                eval(value, snapshot, thresholds)?
            } else {
                eval(otherwise, snapshot, thresholds)?
            }
        }
    })
}

fn truth(expr: &Expr, snapshot: &Snapshot, thresholds: &ThresholdSet) -> Result<bool, DslError> {
    match eval(expr, snapshot, thresholds)? {
        Value::Bool(b) => Ok(b),
        Value::Real(x) => Err(DslError::TypeMismatch(format!(
            "`{expr}` evaluated to the real {x} where a boolean was required"
        ))),
    }
}

fn compare(l: Value, op: CmpOp, r: Value) -> Result<bool, DslError> {
    match (l, r) {
        (Value::Real(a), Value::Real(b)) => Ok(match op {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => (a - b).abs() <= REAL_EQ_TOLERANCE,
            CmpOp::Ne => (a - b).abs() > REAL_EQ_TOLERANCE,
        }),
        (Value::Bool(a), Value::Bool(b)) => match op {
            CmpOp::Eq => Ok(a == b),
            CmpOp::Ne => Ok(a != b),
            _ => Err(DslError::TypeMismatch(format!(
                "`{}` is not defined on booleans",
                op.symbol()
            ))),
        },
        (l, r) => Err(DslError::TypeMismatch(format!(
            "cannot compare {} with {}",
            l.kind(),
            r.kind()
        ))),
    }
}

/// Evaluates a boolean rule.
pub fn eval_bool(expr: &Expr, snapshot: &Snapshot, thresholds: &ThresholdSet) -> Result<bool, DslError> {
    truth(expr, snapshot, thresholds)
}

/// Evaluates a real-valued criteria formula. The `-1` sentinel is returned as is.
pub fn eval_real(expr: &Expr, snapshot: &Snapshot, thresholds: &ThresholdSet) -> Result<f64, DslError> {
    match eval(expr, snapshot, thresholds)? {
        Value::Real(x) => Ok(x),
        Value::Bool(b) => Err(DslError::TypeMismatch(format!(
            "`{expr}` evaluated to the boolean {b} where a real was required"
        ))),
    }
}
