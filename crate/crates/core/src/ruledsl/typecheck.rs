use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::Expr;
use super::DslError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Bool,
    Real,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Kind::Bool => "boolean",
            Kind::Real => "real",
        })
    }
}

/// Names visible to a rule: typed process variables and real thresholds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scope {
    vars: BTreeMap<String, Kind>,
    thresholds: BTreeSet<String>,
}

impl Scope {
    pub fn new<V, T, S1, S2>(vars: V, thresholds: T) -> Self
    where
        V: IntoIterator<Item = (S1, Kind)>,
        T: IntoIterator<Item = S2>,
        S1: Into<String>,
        S2: Into<String>,
    {
        Self {
            vars: vars.into_iter().map(|(n, k)| (n.into(), k)).collect(),
            thresholds: thresholds.into_iter().map(Into::into).collect(),
        }
    }

    pub fn var_kind(&self, name: &str) -> Option<Kind> {
        self.vars.get(name).copied()
    }

    pub fn has_threshold(&self, name: &str) -> bool {
        self.thresholds.contains(name)
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: Kind) {
        self.vars.insert(name.into(), kind);
    }
}

/// An expression whose names are resolved and whose result kind is known.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedExpr {
    pub expr: Expr,
    pub kind: Kind,
}

/// Resolves every reference against `scope` and infers the result kind.
pub fn typecheck(expr: &Expr, scope: &Scope) -> Result<TypedExpr, DslError> {
    let (expr, kind) = check(expr, scope)?;
    Ok(TypedExpr { expr, kind })
}

fn want(kind: Kind, expected: Kind, what: &dyn Fn() -> String) -> Result<(), DslError> {
    if kind == expected {
        Ok(())
    } else {
        Err(DslError::TypeMismatch(format!(
            "{} must be {expected}, found {kind}",
            what()
        )))
    }
}

fn check(expr: &Expr, scope: &Scope) -> Result<(Expr, Kind), DslError> {
    Ok(match expr {
        Expr::Bool(b) => (Expr::Bool(*b), Kind::Bool),
        Expr::Number(x) => (Expr::Number(*x), Kind::Real),
        Expr::Ref(id) | Expr::Var(id) | Expr::Threshold(id) => {
            let var = scope.var_kind(&id.name);
            let thr = scope.has_threshold(&id.name);
            match (var, thr) {
                (Some(_), true) => {
                    return Err(DslError::AmbiguousName {
                        name: id.name.clone(),
                    })
                }
                (Some(kind), false) => (Expr::Var(id.clone()), kind),
                (None, true) => (Expr::Threshold(id.clone()), Kind::Real),
                (None, false) => {
                    return Err(DslError::UnresolvedName {
                        name: id.name.clone(),
                        pos: id.pos,
                    })
                }
            }
        }
        Expr::Not(e) => {
            let (e, k) = check(e, scope)?;
            want(k, Kind::Bool, &|| format!("operand of `not` ({e})"))?;
            (Expr::Not(Box::new(e)), Kind::Bool)
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            let (a, ka) = check(a, scope)?;
            let (b, kb) = check(b, scope)?;
            let op = if matches!(expr, Expr::And(..)) { "and" } else { "or" };
            want(ka, Kind::Bool, &|| format!("left operand of `{op}` ({a})"))?;
            want(kb, Kind::Bool, &|| format!("right operand of `{op}` ({b})"))?;
            let node = if op == "and" {
                Expr::And(Box::new(a), Box::new(b))
            } else {
                Expr::Or(Box::new(a), Box::new(b))
            };
            (node, Kind::Bool)
        }
        Expr::Compare { lhs, op, rhs } => {
            let (l, kl) = check(lhs, scope)?;
            let (r, kr) = check(rhs, scope)?;
            if op.is_ordering() {
                want(kl, Kind::Real, &|| format!("left side of `{}` ({l})", op.symbol()))?;
                want(kr, Kind::Real, &|| format!("right side of `{}` ({r})", op.symbol()))?;
            } else if kl != kr {
                return Err(DslError::TypeMismatch(format!(
                    "`{}` compares {kl} `{l}` with {kr} `{r}`",
                    op.symbol()
                )));
            }
            (Expr::compare(l, *op, r), Kind::Bool)
        }
        Expr::Select {
            value,
            cond,
            otherwise,
        } => {
            let (v, kv) = check(value, scope)?;
            let (c, kc) = check(cond, scope)?;
            let (o, ko) = check(otherwise, scope)?;
            want(kv, Kind::Real, &|| format!("selected value ({v})"))?;
            want(kc, Kind::Bool, &|| format!("selection condition ({c})"))?;
            want(ko, Kind::Real, &|| format!("else branch ({o})"))?;
            (Expr::select(v, c, o), Kind::Real)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ruledsl::parse_rule;

    fn scope() -> Scope {
        Scope::new(
            [("pressure", Kind::Real), ("motor_on", Kind::Bool)],
            ["LOWEST_PRESSURE", "HIGH"],
        )
    }

    #[test]
    fn boolean_comparison() {
        let t = typecheck(&parse_rule("pressure < LOWEST_PRESSURE").unwrap(), &scope()).unwrap();
        assert_eq!(t.kind, Kind::Bool);
        match t.expr {
            Expr::Compare { lhs, rhs, .. } => {
                assert!(matches!(*lhs, Expr::Var(_)));
                assert!(matches!(*rhs, Expr::Threshold(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unresolved_name_carries_position() {
        let err = typecheck(&parse_rule("pressure < UNDECLARED").unwrap(), &scope()).unwrap_err();
        match err {
            DslError::UnresolvedName { name, pos } => {
                assert_eq!(name, "UNDECLARED");
                assert_eq!(pos.unwrap().column, 12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn select_kinds() {
        let t = typecheck(&parse_rule("HIGH if motor_on else -1").unwrap(), &scope()).unwrap();
        assert_eq!(t.kind, Kind::Real);
        let err = typecheck(&parse_rule("motor_on if motor_on else 1").unwrap(), &scope());
        assert!(matches!(err, Err(DslError::TypeMismatch(_))));
        let err = typecheck(&parse_rule("1 if pressure else 2").unwrap(), &scope());
        assert!(matches!(err, Err(DslError::TypeMismatch(_))));
    }

    #[test]
    fn logical_operands_must_be_boolean() {
        assert!(typecheck(&parse_rule("pressure and motor_on").unwrap(), &scope()).is_err());
        assert!(typecheck(&parse_rule("not pressure").unwrap(), &scope()).is_err());
        assert!(typecheck(&parse_rule("motor_on < 1").unwrap(), &scope()).is_err());
        assert!(typecheck(&parse_rule("motor_on == 1").unwrap(), &scope()).is_err());
        assert_eq!(
            typecheck(&parse_rule("motor_on == false").unwrap(), &scope()).unwrap().kind,
            Kind::Bool
        );
    }

    #[test]
    fn ambiguous_names_are_rejected() {
        let s = Scope::new([("X", Kind::Real)], ["X"]);
        assert!(matches!(
            typecheck(&parse_rule("X > 1").unwrap(), &s),
            Err(DslError::AmbiguousName { .. })
        ));
    }
}
