//! Predicate expressions over typed models.
//!
//! Constraints and rule conditions arrive as strings in scenario files and
//! are interpreted against one or more views. The grammar is deliberately
//! small: boolean connectives, comparisons, arithmetic, attribute access on
//! a scope element (`self`) or a quantifier binding (`it`), set expressions
//! (linked elements and `elements(...)` queries), counting/aggregation, and
//! `exists`/`all` quantifiers.
//!
//! ```text
//! expr    := or
//! or      := and ("or" and)*
//! and     := not ("and" not)*
//! not     := "not" not | cmp
//! cmp     := add (("="|"=="|"!="|"<"|"<="|">"|">=") add)?
//! add     := mul (("+"|"-") mul)*
//! mul     := unary (("*"|"/") unary)*
//! unary   := "-" unary | primary
//! primary := number | 'string' | "true" | "false" | "(" expr ")"
//!          | "self" "." ident | "it" "." ident
//!          | "threshold" "(" 'name' ")"
//!          | "count" "(" set ")"
//!          | ("sum"|"max"|"min") "(" set "," 'attr' ")"
//!          | ("exists"|"all") "(" set "," expr ")"
//! set     := "self" "." ident | "it" "." ident
//!          | "elements" "(" 'type' ")" | "elements" "(" 'view' "," 'type' ")"
//! ```
//!
//! `self.x` / `it.x` read an attribute in scalar position and follow a
//! reference in set position; the parser decides by where the path occurs.
//! Evaluation is total and side-effect free: every failure (unknown
//! attribute, type mismatch, missing threshold) surfaces as an [`EvalError`]
//! for the caller to record — constraint evaluation treats an erroring
//! predicate as a violation rather than aborting analysis.

use std::collections::BTreeMap;
use std::fmt;

use crate::model::{AttrValue, ElementId, TypedModel};

/// Runtime value of an expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Num(n) => write!(f, "{n}"),
            Value::Str(s) => write!(f, "'{s}'"),
        }
    }
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggOp {
    Sum,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantOp {
    Exists,
    All,
}

/// Scope anchor of a path: the constraint's subject or a quantifier binding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Base {
    SelfEl,
    It,
}

/// Set-valued sub-expression.
#[derive(Debug, Clone, PartialEq)]
pub enum SetExpr {
    /// Elements linked from the anchor through a reference.
    Linked { base: Base, ref_name: String },
    /// All elements of a type, in the scope view (`view = None`) or a named
    /// one.
    Elements { view: Option<String>, type_name: String },
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    Attr { base: Base, attr: String },
    Threshold(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Count(SetExpr),
    Agg(AggOp, SetExpr, String),
    Quant(QuantOp, SetExpr, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("parse error at offset {at}: {message}")]
    Syntax { at: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("`self` is not bound in this context")]
    NoSelf,
    #[error("`it` is not bound in this context")]
    NoIt,
    #[error("element `{id}` has no attribute `{attr}`")]
    UnknownAttribute { id: ElementId, attr: String },
    #[error("no threshold named `{0}`")]
    UnknownThreshold(String),
    #[error("no view named `{0}` in scope")]
    UnknownView(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("aggregate over empty set has no value")]
    EmptyAggregate,
    #[error("division by zero")]
    DivisionByZero,
    #[error("element `{0}` vanished during evaluation")]
    MissingElement(ElementId),
}

/// Everything an expression may consult: the views by name, which view the
/// scope element lives in, and named numeric thresholds.
pub struct EvalCtx<'a> {
    pub views: BTreeMap<&'a str, &'a TypedModel>,
    pub scope_view: &'a str,
    pub thresholds: &'a BTreeMap<String, f64>,
}

impl<'a> EvalCtx<'a> {
    pub fn single(view_name: &'a str, model: &'a TypedModel, thresholds: &'a BTreeMap<String, f64>) -> Self {
        let mut views = BTreeMap::new();
        views.insert(view_name, model);
        Self {
            views,
            scope_view: view_name,
            thresholds,
        }
    }

    fn view(&self, name: &str) -> Result<&'a TypedModel, EvalError> {
        self.views
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::UnknownView(name.to_string()))
    }
}

/// An element address: the view it lives in plus its id.
type Anchor<'a> = (&'a str, ElementId);

struct Scope<'a> {
    self_el: Option<Anchor<'a>>,
    its: Vec<Anchor<'a>>,
}

impl Expr {
    /// Evaluate with `self` bound to `scope` (or unbound for rule conditions
    /// that quantify over whole views).
    pub fn eval(&self, ctx: &EvalCtx<'_>, scope: Option<&ElementId>) -> Result<Value, EvalError> {
        let mut s = Scope {
            self_el: scope.map(|id| (ctx.scope_view, id.clone())),
            its: Vec::new(),
        };
        self.eval_in(ctx, &mut s)
    }

    /// Convenience: evaluate and require a boolean.
    pub fn eval_bool(&self, ctx: &EvalCtx<'_>, scope: Option<&ElementId>) -> Result<bool, EvalError> {
        match self.eval(ctx, scope)? {
            Value::Bool(b) => Ok(b),
            other => Err(EvalError::TypeMismatch(format!(
                "expected a boolean result, got {other}"
            ))),
        }
    }

    fn eval_in<'a>(&self, ctx: &EvalCtx<'a>, scope: &mut Scope<'a>) -> Result<Value, EvalError> {
        match self {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Attr { base, attr } => {
                let (view, id) = resolve_base(*base, scope)?;
                let model = ctx.view(view)?;
                let el = model
                    .element(&id)
                    .ok_or_else(|| EvalError::MissingElement(id.clone()))?;
                let value = el.attr(attr).ok_or_else(|| EvalError::UnknownAttribute {
                    id: id.clone(),
                    attr: attr.clone(),
                })?;
                Ok(attr_to_value(value))
            }
            Expr::Threshold(name) => ctx
                .thresholds
                .get(name)
                .map(|v| Value::Num(*v))
                .ok_or_else(|| EvalError::UnknownThreshold(name.clone())),
            Expr::Not(inner) => match inner.eval_in(ctx, scope)? {
                Value::Bool(b) => Ok(Value::Bool(!b)),
                other => Err(EvalError::TypeMismatch(format!("`not` over {other}"))),
            },
            Expr::And(l, r) => match l.eval_in(ctx, scope)? {
                Value::Bool(false) => Ok(Value::Bool(false)),
                Value::Bool(true) => match r.eval_in(ctx, scope)? {
                    Value::Bool(b) => Ok(Value::Bool(b)),
                    other => Err(EvalError::TypeMismatch(format!("`and` over {other}"))),
                },
                other => Err(EvalError::TypeMismatch(format!("`and` over {other}"))),
            },
            Expr::Or(l, r) => match l.eval_in(ctx, scope)? {
                Value::Bool(true) => Ok(Value::Bool(true)),
                Value::Bool(false) => match r.eval_in(ctx, scope)? {
                    Value::Bool(b) => Ok(Value::Bool(b)),
                    other => Err(EvalError::TypeMismatch(format!("`or` over {other}"))),
                },
                other => Err(EvalError::TypeMismatch(format!("`or` over {other}"))),
            },
            Expr::Cmp(op, l, r) => {
                let lv = l.eval_in(ctx, scope)?;
                let rv = r.eval_in(ctx, scope)?;
                compare(*op, &lv, &rv).map(Value::Bool)
            }
            Expr::Arith(op, l, r) => {
                let lv = num(l.eval_in(ctx, scope)?)?;
                let rv = num(r.eval_in(ctx, scope)?)?;
                let out = match op {
                    ArithOp::Add => lv + rv,
                    ArithOp::Sub => lv - rv,
                    ArithOp::Mul => lv * rv,
                    ArithOp::Div => {
                        if rv == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        lv / rv
                    }
                };
                Ok(Value::Num(out))
            }
            Expr::Neg(inner) => Ok(Value::Num(-num(inner.eval_in(ctx, scope)?)?)),
            Expr::Count(set) => {
                let members = resolve_set(set, ctx, scope)?;
                Ok(Value::Num(members.len() as f64))
            }
            Expr::Agg(op, set, attr) => {
                let members = resolve_set(set, ctx, scope)?;
                let mut values = Vec::with_capacity(members.len());
                for (view, id) in &members {
                    let model = ctx.view(view)?;
                    let el = model
                        .element(id)
                        .ok_or_else(|| EvalError::MissingElement(id.clone()))?;
                    let v = el.attr(attr).ok_or_else(|| EvalError::UnknownAttribute {
                        id: id.clone(),
                        attr: attr.clone(),
                    })?;
                    values.push(num(attr_to_value(v))?);
                }
                let out = match op {
                    AggOp::Sum => values.iter().sum::<f64>(),
                    AggOp::Max => values
                        .iter()
                        .copied()
                        .fold(None::<f64>, |acc, v| Some(acc.map_or(v, |a| a.max(v))))
                        .ok_or(EvalError::EmptyAggregate)?,
                    AggOp::Min => values
                        .iter()
                        .copied()
                        .fold(None::<f64>, |acc, v| Some(acc.map_or(v, |a| a.min(v))))
                        .ok_or(EvalError::EmptyAggregate)?,
                };
                Ok(Value::Num(out))
            }
            Expr::Quant(op, set, pred) => {
                let members = resolve_set(set, ctx, scope)?;
                for member in members {
                    scope.its.push(member);
                    let held = pred.eval_in(ctx, scope);
                    scope.its.pop();
                    match (op, held?) {
                        (QuantOp::Exists, Value::Bool(true)) => return Ok(Value::Bool(true)),
                        (QuantOp::All, Value::Bool(false)) => return Ok(Value::Bool(false)),
                        (_, Value::Bool(_)) => {}
                        (_, other) => {
                            return Err(EvalError::TypeMismatch(format!(
                                "quantifier body returned {other}"
                            )))
                        }
                    }
                }
                Ok(Value::Bool(matches!(op, QuantOp::All)))
            }
        }
    }
}

fn resolve_base<'a>(base: Base, scope: &Scope<'a>) -> Result<Anchor<'a>, EvalError> {
    match base {
        Base::SelfEl => scope.self_el.clone().ok_or(EvalError::NoSelf),
        Base::It => scope.its.last().cloned().ok_or(EvalError::NoIt),
    }
}

fn resolve_set<'a>(
    set: &SetExpr,
    ctx: &EvalCtx<'a>,
    scope: &Scope<'a>,
) -> Result<Vec<Anchor<'a>>, EvalError> {
    match set {
        SetExpr::Linked { base, ref_name } => {
            let (view, id) = resolve_base(*base, scope)?;
            let model = ctx.view(view)?;
            let el = model
                .element(&id)
                .ok_or_else(|| EvalError::MissingElement(id.clone()))?;
            Ok(el
                .targets(ref_name)
                .iter()
                .map(|t| (view, t.clone()))
                .collect())
        }
        SetExpr::Elements { view, type_name } => {
            let view_name: &str = match view {
                Some(v) => ctx
                    .views
                    .keys()
                    .find(|k| **k == v.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::UnknownView(v.clone()))?,
                None => ctx.scope_view,
            };
            let model = ctx.view(view_name)?;
            Ok(model
                .elements_of_type(type_name)
                .map(|(id, _)| (view_name, id.clone()))
                .collect())
        }
    }
}

fn attr_to_value(v: &AttrValue) -> Value {
    match v {
        AttrValue::Bool(b) => Value::Bool(*b),
        AttrValue::Int(i) => Value::Num(*i as f64),
        AttrValue::Real(r) => Value::Num(*r),
        AttrValue::Str(s) => Value::Str(s.clone()),
    }
}

fn num(v: Value) -> Result<f64, EvalError> {
    match v {
        Value::Num(n) => Ok(n),
        other => Err(EvalError::TypeMismatch(format!("expected a number, got {other}"))),
    }
}

fn compare(op: CmpOp, l: &Value, r: &Value) -> Result<bool, EvalError> {
    match (l, r) {
        (Value::Num(a), Value::Num(b)) => Ok(match op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }),
        (Value::Str(a), Value::Str(b)) => match op {
            CmpOp::Eq => Ok(a == b),
            CmpOp::Ne => Ok(a != b),
            _ => Err(EvalError::TypeMismatch(
                "strings support only = and !=".to_string(),
            )),
        },
        (Value::Bool(a), Value::Bool(b)) => match op {
            CmpOp::Eq => Ok(a == b),
            CmpOp::Ne => Ok(a != b),
            _ => Err(EvalError::TypeMismatch(
                "booleans support only = and !=".to_string(),
            )),
        },
        (a, b) => Err(EvalError::TypeMismatch(format!(
            "cannot compare {a} with {b}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Sym(&'static str),
}

struct Lexer<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut out = Vec::new();
        while let Some(&(at, c)) = self.chars.get(self.pos) {
            if c.is_whitespace() {
                self.pos += 1;
                continue;
            }
            if c.is_ascii_digit() {
                while self
                    .chars
                    .get(self.pos)
                    .is_some_and(|(_, c)| c.is_ascii_digit() || *c == '.')
                {
                    self.pos += 1;
                }
                let end = self
                    .chars
                    .get(self.pos)
                    .map_or(self.src.len(), |(i, _)| *i);
                let text = &self.src[at..end];
                let n = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                    at,
                    message: format!("bad number `{text}`"),
                })?;
                out.push((at, Tok::Num(n)));
                continue;
            }
            if c.is_alphabetic() || c == '_' {
                while self
                    .chars
                    .get(self.pos)
                    .is_some_and(|(_, c)| c.is_alphanumeric() || *c == '_')
                {
                    self.pos += 1;
                }
                let end = self
                    .chars
                    .get(self.pos)
                    .map_or(self.src.len(), |(i, _)| *i);
                out.push((at, Tok::Ident(self.src[at..end].to_string())));
                continue;
            }
            if c == '\'' {
                self.pos += 1;
                let content_start = self
                    .chars
                    .get(self.pos)
                    .map_or(self.src.len(), |(i, _)| *i);
                while self.chars.get(self.pos).is_some_and(|(_, c)| *c != '\'') {
                    self.pos += 1;
                }
                let Some(&(close, _)) = self.chars.get(self.pos) else {
                    return Err(ParseError::Syntax {
                        at,
                        message: "unterminated string".to_string(),
                    });
                };
                self.pos += 1;
                out.push((at, Tok::Str(self.src[content_start..close].to_string())));
                continue;
            }
            let two: Option<&'static str> = match (c, self.chars.get(self.pos + 1).map(|(_, c)| *c)) {
                ('!', Some('=')) => Some("!="),
                ('<', Some('=')) => Some("<="),
                ('>', Some('=')) => Some(">="),
                ('=', Some('=')) => Some("=="),
                _ => None,
            };
            if let Some(sym) = two {
                out.push((at, Tok::Sym(sym)));
                self.pos += 2;
                continue;
            }
            let one: Option<&'static str> = match c {
                '(' => Some("("),
                ')' => Some(")"),
                ',' => Some(","),
                '.' => Some("."),
                '=' => Some("="),
                '<' => Some("<"),
                '>' => Some(">"),
                '+' => Some("+"),
                '-' => Some("-"),
                '*' => Some("*"),
                '/' => Some("/"),
                _ => None,
            };
            match one {
                Some(sym) => {
                    out.push((at, Tok::Sym(sym)));
                    self.pos += 1;
                }
                None => {
                    return Err(ParseError::Syntax {
                        at,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn at(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |(i, _)| *i)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Sym(s)) if *s == sym => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{sym}`"))),
        }
    }

    fn expect_str(&mut self) -> Result<String, ParseError> {
        match self.bump() {
            Some(Tok::Str(s)) => Ok(s),
            _ => Err(self.err("expected a 'string' literal".to_string())),
        }
    }

    fn err(&self, message: String) -> ParseError {
        ParseError::Syntax { at: self.at(), message }
    }

    fn ident_is(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w == word)
    }

    fn parse_or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_and()?;
        while self.ident_is("or") {
            self.pos += 1;
            let rhs = self.parse_and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_not()?;
        while self.ident_is("and") {
            self.pos += 1;
            let rhs = self.parse_not()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_not(&mut self) -> Result<Expr, ParseError> {
        if self.ident_is("not") {
            self.pos += 1;
            let inner = self.parse_not()?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.parse_add()?;
        let op = match self.peek() {
            Some(Tok::Sym("=")) | Some(Tok::Sym("==")) => Some(CmpOp::Eq),
            Some(Tok::Sym("!=")) => Some(CmpOp::Ne),
            Some(Tok::Sym("<")) => Some(CmpOp::Lt),
            Some(Tok::Sym("<=")) => Some(CmpOp::Le),
            Some(Tok::Sym(">")) => Some(CmpOp::Gt),
            Some(Tok::Sym(">=")) => Some(CmpOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let rhs = self.parse_add()?;
            return Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn parse_add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_mul()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("+")) => ArithOp::Add,
                Some(Tok::Sym("-")) => ArithOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_mul()?;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("*")) => ArithOp::Mul,
                Some(Tok::Sym("/")) => ArithOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Some(Tok::Sym("-"))) {
            self.pos += 1;
            let inner = self.parse_unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_primary()
    }

    fn parse_set(&mut self) -> Result<SetExpr, ParseError> {
        match self.bump() {
            Some(Tok::Ident(w)) if w == "self" || w == "it" => {
                let base = if w == "self" { Base::SelfEl } else { Base::It };
                self.expect_sym(".")?;
                match self.bump() {
                    Some(Tok::Ident(ref_name)) => Ok(SetExpr::Linked { base, ref_name }),
                    _ => Err(self.err("expected a reference name after `.`".to_string())),
                }
            }
            Some(Tok::Ident(w)) if w == "elements" => {
                self.expect_sym("(")?;
                let first = self.expect_str()?;
                let set = if matches!(self.peek(), Some(Tok::Sym(","))) {
                    self.pos += 1;
                    let type_name = self.expect_str()?;
                    SetExpr::Elements {
                        view: Some(first),
                        type_name,
                    }
                } else {
                    SetExpr::Elements {
                        view: None,
                        type_name: first,
                    }
                };
                self.expect_sym(")")?;
                Ok(set)
            }
            _ => Err(self.err(
                "expected a set: `self.ref`, `it.ref`, or `elements('Type')`".to_string(),
            )),
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Lit(Value::Num(n)))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Lit(Value::Str(s)))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let inner = self.parse_or()?;
                self.expect_sym(")")?;
                Ok(inner)
            }
            Some(Tok::Ident(w)) => match w.as_str() {
                "true" => {
                    self.pos += 1;
                    Ok(Expr::Lit(Value::Bool(true)))
                }
                "false" => {
                    self.pos += 1;
                    Ok(Expr::Lit(Value::Bool(false)))
                }
                "self" | "it" => {
                    self.pos += 1;
                    let base = if w == "self" { Base::SelfEl } else { Base::It };
                    self.expect_sym(".")?;
                    match self.bump() {
                        Some(Tok::Ident(attr)) => Ok(Expr::Attr { base, attr }),
                        _ => Err(self.err("expected an attribute name after `.`".to_string())),
                    }
                }
                "threshold" => {
                    self.pos += 1;
                    self.expect_sym("(")?;
                    let name = self.expect_str()?;
                    self.expect_sym(")")?;
                    Ok(Expr::Threshold(name))
                }
                "count" => {
                    self.pos += 1;
                    self.expect_sym("(")?;
                    let set = self.parse_set()?;
                    self.expect_sym(")")?;
                    Ok(Expr::Count(set))
                }
                "sum" | "max" | "min" => {
                    self.pos += 1;
                    let op = match w.as_str() {
                        "sum" => AggOp::Sum,
                        "max" => AggOp::Max,
                        _ => AggOp::Min,
                    };
                    self.expect_sym("(")?;
                    let set = self.parse_set()?;
                    self.expect_sym(",")?;
                    let attr = self.expect_str()?;
                    self.expect_sym(")")?;
                    Ok(Expr::Agg(op, set, attr))
                }
                "exists" | "all" => {
                    self.pos += 1;
                    let op = if w == "exists" { QuantOp::Exists } else { QuantOp::All };
                    self.expect_sym("(")?;
                    let set = self.parse_set()?;
                    self.expect_sym(",")?;
                    let pred = self.parse_or()?;
                    self.expect_sym(")")?;
                    Ok(Expr::Quant(op, set, Box::new(pred)))
                }
                other => Err(self.err(format!("unexpected word `{other}`"))),
            },
            _ => Err(self.err("unexpected end of expression".to_string())),
        }
    }
}

/// Parse an expression string into its tree.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::new(src).tokens()?;
    let mut parser = Parser {
        toks,
        pos: 0,
        len: src.len(),
    };
    let expr = parser.parse_or()?;
    if parser.peek().is_some() {
        return Err(parser.err("trailing input after expression".to_string()));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Element;

    fn fixture() -> (TypedModel, BTreeMap<String, f64>) {
        let model = TypedModel::new("perf")
            .with_element(
                "ct-app",
                Element::new("ComponentType")
                    .with_attr("name", "App")
                    .with_links("instances", ["c-1", "c-2"]),
            )
            .with_element(
                "c-1",
                Element::new("Component")
                    .with_attr("state", "running")
                    .with_attr("avgResponseTime", 0.25)
                    .with_attr("requestCount", 40i64),
            )
            .with_element(
                "c-2",
                Element::new("Component")
                    .with_attr("state", "failed")
                    .with_attr("avgResponseTime", 0.9)
                    .with_attr("requestCount", 2i64),
            );
        let mut thresholds = BTreeMap::new();
        thresholds.insert("maxAvgResponseTime".to_string(), 0.3);
        (model, thresholds)
    }

    #[test]
    fn precedence_binds_and_tighter_than_or() {
        let e = parse("true or false and false").unwrap();
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        assert!(e.eval_bool(&ctx, None).unwrap());
    }

    #[test]
    fn arithmetic_and_comparison() {
        let e = parse("2 + 3 * 4 = 14").unwrap();
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        assert!(e.eval_bool(&ctx, None).unwrap());
        let e2 = parse("(2 + 3) * 4 > 19.5").unwrap();
        assert!(e2.eval_bool(&ctx, None).unwrap());
    }

    #[test]
    fn self_attribute_and_threshold() {
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        let e = parse("self.avgResponseTime <= threshold('maxAvgResponseTime')").unwrap();
        assert!(e.eval_bool(&ctx, Some(&"c-1".into())).unwrap());
        assert!(!e.eval_bool(&ctx, Some(&"c-2".into())).unwrap());
    }

    #[test]
    fn count_over_linked_elements() {
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        let e = parse("count(self.instances) <= 1").unwrap();
        assert!(!e.eval_bool(&ctx, Some(&"ct-app".into())).unwrap());
    }

    #[test]
    fn quantifiers_bind_it() {
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        let exists = parse("exists(self.instances, it.state = 'failed')").unwrap();
        assert!(exists.eval_bool(&ctx, Some(&"ct-app".into())).unwrap());
        let all = parse("all(self.instances, it.state = 'running')").unwrap();
        assert!(!all.eval_bool(&ctx, Some(&"ct-app".into())).unwrap());
    }

    #[test]
    fn elements_query_and_aggregates() {
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        let e = parse("count(elements('Component')) = 2").unwrap();
        assert!(e.eval_bool(&ctx, None).unwrap());
        let s = parse("sum(elements('Component'), 'requestCount') = 42").unwrap();
        assert!(s.eval_bool(&ctx, None).unwrap());
        let mx = parse("max(elements('Component'), 'avgResponseTime') > 0.8").unwrap();
        assert!(mx.eval_bool(&ctx, None).unwrap());
    }

    #[test]
    fn cross_view_elements_query() {
        let (m, th) = fixture();
        let env = TypedModel::new("env").with_element(
            "load",
            Element::new("Load").with_attr("requestRate", 19.0),
        );
        let mut ctx = EvalCtx::single("perf", &m, &th);
        ctx.views.insert("environment", &env);
        let e = parse("exists(elements('environment','Load'), it.requestRate > 10)").unwrap();
        assert!(e.eval_bool(&ctx, None).unwrap());
    }

    #[test]
    fn errors_surface_instead_of_panicking() {
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        assert!(matches!(
            parse("self.nope > 1").unwrap().eval(&ctx, Some(&"c-1".into())),
            Err(EvalError::UnknownAttribute { .. })
        ));
        assert!(matches!(
            parse("threshold('missing') > 1").unwrap().eval(&ctx, None),
            Err(EvalError::UnknownThreshold(_))
        ));
        assert!(matches!(
            parse("self.state > 1").unwrap().eval(&ctx, Some(&"c-1".into())),
            Err(EvalError::TypeMismatch(_))
        ));
        assert!(matches!(
            parse("it.state = 'x'").unwrap().eval(&ctx, None),
            Err(EvalError::NoIt)
        ));
        assert!(matches!(
            parse("1 / 0 > 0").unwrap().eval(&ctx, None),
            Err(EvalError::DivisionByZero)
        ));
    }

    #[test]
    fn nested_quantifiers_shadow_it() {
        let m = TypedModel::new("g")
            .with_element("a", Element::new("N").with_attr("v", 1i64).with_links("next", ["b"]))
            .with_element("b", Element::new("N").with_attr("v", 2i64));
        let th = BTreeMap::new();
        let ctx = EvalCtx::single("g", &m, &th);
        let e = parse("exists(elements('N'), exists(it.next, it.v = 2))").unwrap();
        assert!(e.eval_bool(&ctx, None).unwrap());
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse("self.") {
            Err(ParseError::Syntax { .. }) => {}
            other => panic!("expected syntax error, got {other:?}"),
        }
        assert!(parse("1 + + 2").is_err());
        assert!(parse("'unterminated").is_err());
        assert!(parse("1 = 1 extra").is_err());
    }

    #[test]
    fn short_circuit_skips_rhs_errors() {
        let (m, th) = fixture();
        let ctx = EvalCtx::single("perf", &m, &th);
        // rhs would error on missing attribute; lhs decides first
        let e = parse("self.state = 'failed' and self.nope = 1").unwrap();
        assert!(!e.eval_bool(&ctx, Some(&"c-1".into())).unwrap());
        let o = parse("self.state = 'running' or self.nope = 1").unwrap();
        assert!(o.eval_bool(&ctx, Some(&"c-1".into())).unwrap());
    }
}
