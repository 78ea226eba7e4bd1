//! Recursive-descent parser for rule expressions.
//!
//! ```text
//! select     := or_expr ( "if" or_expr "else" select )?
//! or_expr    := and_expr ( "or" and_expr )*
//! and_expr   := not_expr ( "and" not_expr )*
//! not_expr   := "not" not_expr | comparison
//! comparison := primary ( cmp_op primary )?
//! primary    := NUMBER | "true" | "false" | IDENT | "(" select ")"
//! cmp_op     := "<" | "<=" | ">" | ">=" | "==" | "!="
//! ```

use super::ast::{CmpOp, Expr, Ident, Pos};
use super::DslError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    And,
    Or,
    Not,
    If,
    Else,
    True,
    False,
    Cmp(CmpOp),
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(name) => format!("identifier `{name}`"),
            Tok::Number(x) => format!("number `{x}`"),
            Tok::And => "`and`".into(),
            Tok::Or => "`or`".into(),
            Tok::Not => "`not`".into(),
            Tok::If => "`if`".into(),
            Tok::Else => "`else`".into(),
            Tok::True => "`true`".into(),
            Tok::False => "`false`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(text: &str) -> Result<Vec<(Tok, Pos)>, DslError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        let starts_number = c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
            || (c == '-'
                && chars
                    .get(i + 1)
                    .is_some_and(|d| d.is_ascii_digit() || *d == '.'));
        let tok = if starts_number {
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lexeme: String = chars[start..i].iter().collect();
            let value: f64 = lexeme.parse().map_err(|_| DslError::Syntax {
                pos,
                expected: vec!["number".into()],
                found: format!("`{lexeme}`"),
            })?;
            if !value.is_finite() {
                return Err(DslError::Syntax {
                    pos,
                    expected: vec!["finite number".into()],
                    found: format!("`{lexeme}`"),
                });
            }
            Tok::Number(value)
        } else if is_ident_start(c) {
            while i < chars.len() && is_ident_continue(chars[i]) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            match word.as_str() {
                "and" => Tok::And,
                "or" => Tok::Or,
                "not" => Tok::Not,
                "if" => Tok::If,
                "else" => Tok::Else,
                "true" => Tok::True,
                "false" => Tok::False,
                _ => Tok::Ident(word),
            }
        } else {
            let next = chars.get(i + 1).copied();
            let (tok, width) = match (c, next) {
                ('(', _) => (Some(Tok::LParen), 1),
                (')', _) => (Some(Tok::RParen), 1),
                ('<', Some('=')) => (Some(Tok::Cmp(CmpOp::Le)), 2),
                ('>', Some('=')) => (Some(Tok::Cmp(CmpOp::Ge)), 2),
                ('=', Some('=')) => (Some(Tok::Cmp(CmpOp::Eq)), 2),
                ('!', Some('=')) => (Some(Tok::Cmp(CmpOp::Ne)), 2),
                ('<', _) => (Some(Tok::Cmp(CmpOp::Lt)), 1),
                ('>', _) => (Some(Tok::Cmp(CmpOp::Gt)), 1),
                _ => (None, 1),
            };
            match tok {
                Some(tok) => {
                    i += width;
                    tok
                }
                None => {
                    // swallow the rest of an operator-looking run for the message
                    let mut j = i + 1;
                    while j < chars.len() && "=<>!&|+-*/%^~:".contains(chars[j]) {
                        j += 1;
                    }
                    return Err(DslError::UnknownOperator {
                        op: chars[i..j].iter().collect(),
                        pos,
                    });
                }
            }
        };
        col += i - start;
        out.push((tok, pos));
    }
    out.push((Tok::Eof, Pos { line, column: col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> DslError {
        DslError::Syntax {
            pos: self.pos(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, label: &str) -> Result<(), DslError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[label]))
        }
    }

    fn select(&mut self) -> Result<Expr, DslError> {
        let value = self.or_expr()?;
        if *self.peek() != Tok::If {
            return Ok(value);
        }
        self.bump();
        let cond = self.or_expr()?;
        self.expect(Tok::Else, "`else`")?;
        let otherwise = self.select()?;
        Ok(Expr::select(value, cond, otherwise))
    }

    fn or_expr(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.not_expr()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, DslError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Expr::not(self.not_expr()?));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, DslError> {
        let lhs = self.primary()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.primary()?;
            if let Tok::Cmp(_) = self.peek() {
                return Err(self.error(&["`and`", "`or`", "`if`", "`else`", "`)`", "end of input"]));
            }
            return Ok(Expr::compare(lhs, op, rhs));
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        match self.peek().clone() {
            Tok::Number(x) => {
                self.bump();
                Ok(Expr::Number(x))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::Bool(true))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::Bool(false))
            }
            Tok::Ident(name) => {
                let (_, pos) = self.bump();
                Ok(Expr::Ref(Ident::at(name, pos)))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.select()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(self.error(&["number", "identifier", "`true`", "`false`", "`not`", "`(`"])),
        }
    }
}

/// Parses rule text into an expression tree.
pub fn parse_rule(text: &str) -> Result<Expr, DslError> {
    if text.trim().is_empty() {
        return Err(DslError::Syntax {
            pos: Pos { line: 1, column: 1 },
            expected: vec!["expression".into()],
            found: "empty input".into(),
        });
    }
    let toks = tokenize(text)?;
    let mut parser = Parser { toks, at: 0 };
    let expr = parser.select()?;
    if *parser.peek() != Tok::Eof {
        return Err(parser.error(&["`and`", "`or`", "`if`", "comparison operator", "end of input"]));
    }
    Ok(expr)
}

/// True when `name` is a valid identifier that is not a keyword.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c))
        && chars.all(is_ident_continue)
        && !matches!(
            name,
            "and" | "or" | "not" | "if" | "else" | "true" | "false"
        )
}
