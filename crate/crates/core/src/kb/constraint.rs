//! Inter-parameter constraint predicates.
//!
//! Constraints are stored as data and evaluated by a small interpreter:
//! literals, parameter references, comparisons (`==`, `!=`, `<`, `<=`, `>`,
//! `>=`), `and` / `or` / `not`, and implication written either as
//! `if A then B` or in the Python-flavoured `if A: B` form. `is` / `is not`
//! read as equality, and a lone `=` in the consequent reads as `==`, so the
//! natural-language-ish form `if unit_forget_bias is True: bias_initializer = 'zeros'`
//! parses as well as the canonical one.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::literal::Literal;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected character {0:?} at offset {1}")]
    UnexpectedChar(char, usize),
    #[error("unterminated string literal")]
    UnterminatedString,
    #[error("expected {expected}, found {found}")]
    Expected { expected: &'static str, found: String },
    #[error("trailing input after predicate: {0}")]
    Trailing(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("parameter `{0}` is not bound")]
    Unbound(String),
    #[error("type mismatch: cannot apply `{op}` to {left} and {right}")]
    TypeMismatch { op: &'static str, left: &'static str, right: &'static str },
    #[error("expected a boolean condition, found {0}")]
    NotBoolean(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Lit(Literal),
    Param(String),
    Not(Box<Predicate>),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Cmp(CmpOp, Box<Predicate>, Box<Predicate>),
    Implies(Box<Predicate>, Box<Predicate>),
}

impl Predicate {
    pub fn parse(src: &str) -> Result<Predicate, ParseError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let expr = p.expr()?;
        if p.pos < p.tokens.len() {
            let rest: Vec<String> = p.tokens[p.pos..].iter().map(|t| t.to_string()).collect();
            return Err(ParseError::Trailing(rest.join(" ")));
        }
        Ok(expr)
    }

    /// Parameter names referenced anywhere in the predicate.
    pub fn referenced_params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut BTreeSet<String>) {
        match self {
            Predicate::Lit(_) => {}
            Predicate::Param(name) => {
                out.insert(name.clone());
            }
            Predicate::Not(a) => a.collect_params(out),
            Predicate::And(a, b) | Predicate::Or(a, b) | Predicate::Cmp(_, a, b) | Predicate::Implies(a, b) => {
                a.collect_params(out);
                b.collect_params(out);
            }
        }
    }

    pub fn evaluate(&self, bindings: &HashMap<String, Literal>) -> Result<bool, EvalError> {
        match self.eval(bindings)? {
            Value::Bool(b) => Ok(b),
            other => Err(EvalError::NotBoolean(other.type_name())),
        }
    }

    fn eval(&self, bindings: &HashMap<String, Literal>) -> Result<Value, EvalError> {
        Ok(match self {
            Predicate::Lit(l) => Value::from(l),
            Predicate::Param(name) => bindings
                .get(name)
                .map(Value::from)
                .ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Predicate::Not(a) => Value::Bool(!a.eval(bindings)?.truth()?),
            Predicate::And(a, b) => {
                let l = a.eval(bindings)?.truth()?;
                let r = b.eval(bindings)?.truth()?;
                Value::Bool(l && r)
            }
            Predicate::Or(a, b) => {
                let l = a.eval(bindings)?.truth()?;
                let r = b.eval(bindings)?.truth()?;
                Value::Bool(l || r)
            }
            Predicate::Implies(a, b) => {
                let antecedent = a.eval(bindings)?.truth()?;
                // The consequent is still evaluated so that unbound names surface
                // regardless of the antecedent.
                let consequent = b.eval(bindings)?.truth()?;
                Value::Bool(!antecedent || consequent)
            }
            Predicate::Cmp(op, a, b) => Value::Bool(compare(*op, &a.eval(bindings)?, &b.eval(bindings)?)?),
        })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Lit(l) => write!(f, "{l}"),
            Predicate::Param(p) => f.write_str(p),
            Predicate::Not(a) => write!(f, "not ({a})"),
            Predicate::And(a, b) => write!(f, "({a}) and ({b})"),
            Predicate::Or(a, b) => write!(f, "({a}) or ({b})"),
            Predicate::Cmp(op, a, b) => {
                write_operand(f, a)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, b)
            }
            Predicate::Implies(a, b) => write!(f, "if {a} then {b}"),
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, p: &Predicate) -> fmt::Result {
    match p {
        Predicate::Lit(_) | Predicate::Param(_) => write!(f, "{p}"),
        _ => write!(f, "({p})"),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    None,
    Bool(bool),
    Num(f64),
    Str(String),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::None => "None",
            Value::Bool(_) => "boolean",
            Value::Num(_) => "number",
            Value::Str(_) => "string",
        }
    }

    fn truth(&self) -> Result<bool, EvalError> {
        match self {
            Value::Bool(b) => Ok(*b),
            other => Err(EvalError::NotBoolean(other.type_name())),
        }
    }
}

impl From<&Literal> for Value {
    fn from(l: &Literal) -> Self {
        match l {
            Literal::None => Value::None,
            Literal::Bool(b) => Value::Bool(*b),
            Literal::Int(i) => Value::Num(*i as f64),
            Literal::Float(x) => Value::Num(*x),
            Literal::Str(s) => Value::Str(s.clone()),
        }
    }
}

fn compare(op: CmpOp, l: &Value, r: &Value) -> Result<bool, EvalError> {
    let mismatch = || EvalError::TypeMismatch { op: op.symbol(), left: l.type_name(), right: r.type_name() };
    match op {
        CmpOp::Eq | CmpOp::Ne => {
            let equal = match (l, r) {
                (Value::None, Value::None) => true,
                // Equality against None is defined for every type.
                (Value::None, _) | (_, Value::None) => false,
                (Value::Bool(a), Value::Bool(b)) => a == b,
                (Value::Num(a), Value::Num(b)) => a == b,
                (Value::Str(a), Value::Str(b)) => a == b,
                _ => return Err(mismatch()),
            };
            Ok(if op == CmpOp::Eq { equal } else { !equal })
        }
        _ => {
            let ord = match (l, r) {
                (Value::Num(a), Value::Num(b)) => a.partial_cmp(b),
                (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
                _ => return Err(mismatch()),
            };
            let Some(ord) = ord else { return Ok(false) };
            Ok(match op {
                CmpOp::Lt => ord.is_lt(),
                CmpOp::Le => ord.is_le(),
                CmpOp::Gt => ord.is_gt(),
                CmpOp::Ge => ord.is_ge(),
                CmpOp::Eq | CmpOp::Ne => unreachable!(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Lit(Literal),
    Op(CmpOp),
    LParen,
    RParen,
    Colon,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => f.write_str(s),
            Token::Lit(l) => write!(f, "{l}"),
            Token::Op(op) => f.write_str(op.symbol()),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
            Token::Colon => f.write_str(":"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() || c == '\\' => i += 1,
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ':' => {
                out.push(Token::Colon);
                i += 1;
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('=', _) => (CmpOp::Eq, 1),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => return Err(ParseError::UnexpectedChar(c, i)),
                };
                out.push(Token::Op(op));
                i += len;
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(ParseError::UnterminatedString),
                        Some('\\') => {
                            if let Some(n) = chars.get(j + 1) {
                                s.push(*n);
                            }
                            j += 2;
                        }
                        Some(ch) if *ch == quote => break,
                        Some(ch) => {
                            s.push(*ch);
                            j += 1;
                        }
                    }
                }
                out.push(Token::Lit(Literal::Str(s)));
                i = j + 1;
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                match crate::literal::parse_literal(&text) {
                    Some(l @ (Literal::Int(_) | Literal::Float(_))) => out.push(Token::Lit(l)),
                    _ => return Err(ParseError::UnexpectedChar(c, start)),
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push(match word.as_str() {
                    "True" | "true" => Token::Lit(Literal::Bool(true)),
                    "False" | "false" => Token::Lit(Literal::Bool(false)),
                    "None" | "none" | "null" => Token::Lit(Literal::None),
                    _ => Token::Ident(word),
                });
            }
            other => return Err(ParseError::UnexpectedChar(other, i)),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Ident(w)) if w == kw)
    }

    fn found(&self) -> String {
        self.peek().map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
    }

    fn expr(&mut self) -> Result<Predicate, ParseError> {
        if self.peek_keyword("if") {
            self.pos += 1;
            let antecedent = self.or_expr()?;
            match self.peek() {
                Some(Token::Colon) => self.pos += 1,
                Some(Token::Ident(w)) if w == "then" => self.pos += 1,
                _ => return Err(ParseError::Expected { expected: "`then` or `:`", found: self.found() }),
            }
            let consequent = self.expr()?;
            return Ok(Predicate::Implies(Box::new(antecedent), Box::new(consequent)));
        }
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Predicate, ParseError> {
        let mut left = self.and_expr()?;
        while self.peek_keyword("or") {
            self.pos += 1;
            let right = self.and_expr()?;
            left = Predicate::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Predicate, ParseError> {
        let mut left = self.not_expr()?;
        while self.peek_keyword("and") {
            self.pos += 1;
            let right = self.not_expr()?;
            left = Predicate::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Predicate, ParseError> {
        if self.peek_keyword("not") {
            self.pos += 1;
            return Ok(Predicate::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Predicate, ParseError> {
        let left = self.atom()?;
        let op = match self.peek() {
            Some(Token::Op(op)) => {
                let op = *op;
                self.pos += 1;
                op
            }
            Some(Token::Ident(w)) if w == "is" => {
                self.pos += 1;
                if self.peek_keyword("not") {
                    self.pos += 1;
                    CmpOp::Ne
                } else {
                    CmpOp::Eq
                }
            }
            _ => return Ok(left),
        };
        let right = self.atom()?;
        Ok(Predicate::Cmp(op, Box::new(left), Box::new(right)))
    }

    fn atom(&mut self) -> Result<Predicate, ParseError> {
        match self.peek().cloned() {
            Some(Token::Lit(l)) => {
                self.pos += 1;
                Ok(Predicate::Lit(l))
            }
            Some(Token::Ident(name)) if !matches!(name.as_str(), "if" | "then" | "and" | "or" | "not" | "is") => {
                self.pos += 1;
                Ok(Predicate::Param(name))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(ParseError::Expected { expected: "`)`", found: self.found() }),
                }
            }
            _ => Err(ParseError::Expected { expected: "a literal, parameter or `(`", found: self.found() }),
        }
    }
}
