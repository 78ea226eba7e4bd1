use std::fmt;

/// Line/column (1-based) of a token in rule source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// An identifier with the source position it was parsed from.
///
/// Equality and hashing look at the name only, so ASTs compare structurally
/// regardless of where they were parsed.
#[derive(Debug, Clone)]
pub struct Ident {
    pub name: String,
    pub pos: Option<Pos>,
}

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pos: None,
        }
    }

    pub(crate) fn at(name: impl Into<String>, pos: Pos) -> Self {
        Self {
            name: name.into(),
            pos: Some(pos),
        }
    }
}

impl PartialEq for Ident {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl Eq for Ident {}

impl std::hash::Hash for Ident {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.name.hash(state);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

/// Rule expression tree.
///
/// The parser emits [`Expr::Ref`] for every identifier; [`super::typecheck`]
/// resolves them into [`Expr::Var`] or [`Expr::Threshold`].
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Bool(bool),
    Number(f64),
    Ref(Ident),
    Var(Ident),
    Threshold(Ident),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Compare {
        lhs: Box<Expr>,
        op: CmpOp,
        rhs: Box<Expr>,
    },
    /// `value if cond else otherwise`
    Select {
        value: Box<Expr>,
        cond: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

impl Expr {
    pub fn name(name: &str) -> Expr {
        Expr::Ref(Ident::new(name))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }

    pub fn compare(lhs: Expr, op: CmpOp, rhs: Expr) -> Expr {
        Expr::Compare {
            lhs: Box::new(lhs),
            op,
            rhs: Box::new(rhs),
        }
    }

    pub fn select(value: Expr, cond: Expr, otherwise: Expr) -> Expr {
        Expr::Select {
            value: Box::new(value),
            cond: Box::new(cond),
            otherwise: Box::new(otherwise),
        }
    }

    /// Identifier of a reference node of any flavour.
    pub fn ident(&self) -> Option<&Ident> {
        match self {
            Expr::Ref(id) | Expr::Var(id) | Expr::Threshold(id) => Some(id),
            _ => None,
        }
    }

    /// Every identifier referenced by the expression, in first-use order.
    pub fn referenced_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Some(id) = e.ident() {
                if !out.contains(&id.name) {
                    out.push(id.name.clone());
                }
            }
        });
        out
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Not(e) => e.walk(f),
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Compare { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Select {
                value,
                cond,
                otherwise,
            } => {
                value.walk(f);
                cond.walk(f);
                otherwise.walk(f);
            }
            _ => {}
        }
    }

    /// Rebuilds the tree bottom-up, letting `f` replace any node.
    pub fn rewrite<E>(&self, f: &mut impl FnMut(&Expr) -> Result<Option<Expr>, E>) -> Result<Expr, E> {
        if let Some(replacement) = f(self)? {
            return Ok(replacement);
        }
        Ok(match self {
            Expr::Not(e) => Expr::Not(Box::new(e.rewrite(f)?)),
            Expr::And(a, b) => Expr::And(Box::new(a.rewrite(f)?), Box::new(b.rewrite(f)?)),
            Expr::Or(a, b) => Expr::Or(Box::new(a.rewrite(f)?), Box::new(b.rewrite(f)?)),
            Expr::Compare { lhs, op, rhs } => Expr::Compare {
                lhs: Box::new(lhs.rewrite(f)?),
                op: *op,
                rhs: Box::new(rhs.rewrite(f)?),
            },
            Expr::Select {
                value,
                cond,
                otherwise,
            } => Expr::Select {
                value: Box::new(value.rewrite(f)?),
                cond: Box::new(cond.rewrite(f)?),
                otherwise: Box::new(otherwise.rewrite(f)?),
            },
            leaf => leaf.clone(),
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Select { .. } => 0,
            Expr::Or(..) => 1,
            Expr::And(..) => 2,
            Expr::Not(..) => 3,
            Expr::Compare { .. } => 4,
            _ => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, min_prec: u8) -> fmt::Result {
    if child.precedence() < min_prec {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

/// Canonical text form. Re-parsing the output yields an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Number(x) => write!(f, "{x}"),
            Expr::Ref(id) | Expr::Var(id) | Expr::Threshold(id) => f.write_str(&id.name),
            Expr::Not(e) => {
                f.write_str("not ")?;
                write_child(f, e, 3)
            }
            Expr::And(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(" and ")?;
                write_child(f, b, 3)
            }
            Expr::Or(a, b) => {
                // and-groups inside an or are bracketed for readability
                if matches!(**a, Expr::And(..)) {
                    write!(f, "({a})")?;
                } else {
                    write_child(f, a, 1)?;
                }
                f.write_str(" or ")?;
                if matches!(**b, Expr::And(..)) {
                    write!(f, "({b})")
                } else {
                    write_child(f, b, 2)
                }
            }
            Expr::Compare { lhs, op, rhs } => {
                write_child(f, lhs, 5)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, rhs, 5)
            }
            Expr::Select {
                value,
                cond,
                otherwise,
            } => {
                write_child(f, value, 1)?;
                f.write_str(" if ")?;
                write_child(f, cond, 1)?;
                f.write_str(" else ")?;
                write_child(f, otherwise, 0)
            }
        }
    }
}
