//! Kernel expressions as written in run configurations, e.g.
//! `"matern32 + periodic"` or `"rbf * (matern32 + bias)"`.
//!
//! Grammar: `expr := term ('+' term)*`, `term := atom ('*' atom)*`,
//! `atom := NAME | '(' expr ')'`.

use super::{KernelExpr, KernelKind, KernelParams, DEFAULT_PERIOD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Name(String),
    Plus,
    Star,
    Open,
    Close,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '+' => {
                chars.next();
                out.push(Token::Plus);
            }
            '*' => {
                chars.next();
                out.push(Token::Star);
            }
            '(' => {
                chars.next();
                out.push(Token::Open);
            }
            ')' => {
                chars.next();
                out.push(Token::Close);
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let mut name = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        name.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Token::Name(name));
            }
            other => {
                return Err(Error::domain(format!(
                    "unexpected character `{other}` in kernel expression `{text}`"
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
enum Ast {
    Leaf(KernelKind),
    Sum(Box<Ast>, Box<Ast>),
    Product(Box<Ast>, Box<Ast>),
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        while self.tokens.get(self.pos) == Some(&Token::Plus) {
            self.pos += 1;
            lhs = Ast::Sum(Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.atom()?;
        while self.tokens.get(self.pos) == Some(&Token::Star) {
            self.pos += 1;
            lhs = Ast::Product(Box::new(lhs), Box::new(self.atom()?));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Ast> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        match tok {
            Some(Token::Name(n)) => Ok(Ast::Leaf(n.parse()?)),
            Some(Token::Open) => {
                let inner = self.expr()?;
                if self.tokens.get(self.pos) != Some(&Token::Close) {
                    return Err(Error::domain(format!("unbalanced parentheses in `{}`", self.text)));
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => Err(Error::domain(format!("malformed kernel expression `{}`", self.text))),
        }
    }
}

fn count_kinds(ast: &Ast, out: &mut Vec<KernelKind>) {
    match ast {
        Ast::Leaf(k) => out.push(*k),
        Ast::Sum(l, r) | Ast::Product(l, r) => {
            count_kinds(l, out);
            count_kinds(r, out);
        }
    }
}

/// Parses a kernel expression acting on `dims`.
///
/// Leaves are named after `group`: a single leaf is named `group`, several
/// leaves are named `group_<kind>` (with a numeric suffix for repeats).
pub fn parse_kernel(text: &str, group: &str, dims: &[usize], period: f64) -> Result<KernelExpr> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(Error::domain(format!("empty kernel expression for `{group}`")));
    }
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        text,
    };
    let ast = parser.expr()?;
    if parser.pos != tokens.len() {
        return Err(Error::domain(format!("trailing input in kernel expression `{text}`")));
    }
    let mut kinds = Vec::new();
    count_kinds(&ast, &mut kinds);
    let single = kinds.len() == 1;
    let mut used: Vec<KernelKind> = Vec::new();
    let params = KernelParams {
        period: if period > 0.0 { period } else { DEFAULT_PERIOD },
        ..KernelParams::default()
    };
    build(&ast, group, dims, params, single, &mut used)
}

fn build(
    ast: &Ast,
    group: &str,
    dims: &[usize],
    params: KernelParams,
    single: bool,
    used: &mut Vec<KernelKind>,
) -> Result<KernelExpr> {
    match ast {
        Ast::Leaf(kind) => {
            let repeats = used.iter().filter(|k| *k == kind).count();
            used.push(*kind);
            let name = if single {
                group.to_string()
            } else if repeats == 0 {
                format!("{group}_{}", kind.label())
            } else {
                format!("{group}_{}{}", kind.label(), repeats + 1)
            };
            let dims = if *kind == KernelKind::Bias {
                Vec::new()
            } else {
                dims.to_vec()
            };
            KernelExpr::base(*kind, params, dims, &name)
        }
        Ast::Sum(l, r) => {
            Ok(build(l, group, dims, params, single, used)?.sum(build(r, group, dims, params, single, used)?))
        }
        Ast::Product(l, r) => {
            Ok(build(l, group, dims, params, single, used)?.product(build(r, group, dims, params, single, used)?))
        }
    }
}
