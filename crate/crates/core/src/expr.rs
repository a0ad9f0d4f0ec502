//! Small arithmetic expression language used for model coefficients, costs
//! and test functions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' exponent)?
//! exponent:= ('-' | '+') exponent | power        (right associative)
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Two evaluators exist: [`Expr::eval`] walks the tree and is the reference;
//! [`Compiled`] is a folded postfix program used in hot loops. Both share the
//! same primitive operations so their results are bit-identical.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error in {op}: argument {arg}")]
pub struct DomainError {
    pub op: &'static str,
    pub arg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Parsed expression tree. Variables are resolved to slots in the variable
/// list the expression was parsed against.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var { slot: usize, name: String },
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[inline]
fn apply_bin(op: BinOp, a: f64, b: f64) -> Result<f64, DomainError> {
    match op {
        BinOp::Add => Ok(a + b),
        BinOp::Sub => Ok(a - b),
        BinOp::Mul => Ok(a * b),
        BinOp::Div => {
            if b == 0.0 {
                Err(DomainError { op: "division", arg: b })
            } else {
                Ok(a / b)
            }
        }
        BinOp::Pow => {
            let r = if b.fract() == 0.0 && b.abs() <= 64.0 { a.powi(b as i32) } else { a.powf(b) };
            if r.is_finite() || !a.is_finite() || !b.is_finite() {
                Ok(r)
            } else {
                Err(DomainError { op: "power", arg: a })
            }
        }
    }
}

#[inline]
fn apply_unary(f: Func, a: f64) -> Result<f64, DomainError> {
    match f {
        Func::Sin => Ok(a.sin()),
        Func::Cos => Ok(a.cos()),
        Func::Exp => Ok(a.exp()),
        Func::Log => {
            if a > 0.0 {
                Ok(a.ln())
            } else {
                Err(DomainError { op: "log", arg: a })
            }
        }
        Func::Sqrt => {
            if a >= 0.0 {
                Ok(a.sqrt())
            } else {
                Err(DomainError { op: "sqrt", arg: a })
            }
        }
        Func::Abs => Ok(a.abs()),
        Func::Tanh => Ok(a.tanh()),
        Func::Min | Func::Max => unreachable!("binary function applied as unary"),
    }
}

#[inline]
fn apply_binary_fn(f: Func, a: f64, b: f64) -> f64 {
    match f {
        Func::Min => a.min(b),
        Func::Max => a.max(b),
        _ => unreachable!("unary function applied as binary"),
    }
}

impl Expr {
    /// Tree-walking evaluation. `vars[slot]` supplies each variable.
    pub fn eval(&self, vars: &[f64]) -> Result<f64, DomainError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var { slot, .. } => Ok(vars[*slot]),
            Expr::Neg(e) => Ok(-e.eval(vars)?),
            Expr::Bin(op, a, b) => apply_bin(*op, a.eval(vars)?, b.eval(vars)?),
            Expr::Call(f, args) => {
                if f.arity() == 2 {
                    Ok(apply_binary_fn(*f, args[0].eval(vars)?, args[1].eval(vars)?))
                } else {
                    apply_unary(*f, args[0].eval(vars)?)
                }
            }
        }
    }

    /// Slots referenced anywhere in the tree.
    pub fn slots(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_slots(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_slots(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var { slot, .. } => out.push(*slot),
            Expr::Neg(e) => e.collect_slots(out),
            Expr::Bin(_, a, b) => {
                a.collect_slots(out);
                b.collect_slots(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_slots(out)),
        }
    }

    /// Fails with `UnknownVariable` if the expression uses a slot outside `allowed`.
    pub fn restrict_to(&self, allowed: &[usize]) -> Result<(), ParseError> {
        match self {
            Expr::Num(_) => Ok(()),
            Expr::Var { slot, name } => {
                if allowed.contains(slot) {
                    Ok(())
                } else {
                    Err(ParseError::UnknownVariable(name.clone()))
                }
            }
            Expr::Neg(e) => e.restrict_to(allowed),
            Expr::Bin(_, a, b) => {
                a.restrict_to(allowed)?;
                b.restrict_to(allowed)
            }
            Expr::Call(_, args) => args.iter().try_for_each(|a| a.restrict_to(allowed)),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.slots().is_empty()
    }

    pub fn compile(&self) -> Compiled {
        Compiled::new(self)
    }
}

/// Fully parenthesised printing: `parse(print(e))` rebuilds the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var { name, .. } => f.write_str(name),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| ParseError::Syntax { pos: start, message: format!("malformed number `{text}`") })?;
            out.push((start, Token::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Ident(src[start..i].to_string())));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                _ => return Err(ParseError::Syntax { pos: start, message: format!("unexpected character `{c}`") }),
            };
            out.push((start, tok));
            i += c.len_utf8();
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { pos: self.here(), message: message.into() })
    }

    fn expect(&mut self, tok: Token, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.exponent()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.exponent()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.exponent()
            }
            _ => self.power(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some((_, tok)) = self.tokens.get(self.pos).cloned() else {
            return self.syntax("unexpected end of input");
        };
        match tok {
            Token::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Token::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(e)
            }
            Token::Ident(name) => {
                self.pos += 1;
                if self.peek() == Some(&Token::LParen) {
                    let Some(func) = Func::from_name(&name) else {
                        self.pos -= 1;
                        return self.syntax(format!("unknown function `{name}`"));
                    };
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Token::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Token::RParen, "`)`")?;
                    if args.len() != func.arity() {
                        return self.syntax(format!(
                            "`{}` takes {} argument(s), got {}",
                            func.name(),
                            func.arity(),
                            args.len()
                        ));
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    match self.vars.iter().position(|v| *v == name) {
                        Some(slot) => Ok(Expr::Var { slot, name }),
                        None => Err(ParseError::UnknownVariable(name)),
                    }
                }
            }
            Token::Op(c) => self.syntax(format!("unexpected operator `{c}`")),
            Token::RParen => self.syntax("unexpected `)`"),
            Token::Comma => self.syntax("unexpected `,`"),
        }
    }
}

/// Parses `src`, resolving identifiers against `allowed_vars` (slot = index).
pub fn parse_expr(src: &str, allowed_vars: &[&str]) -> Result<Expr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::Syntax { pos: 0, message: "empty expression".into() });
    }
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0, end: src.len(), vars: allowed_vars };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return p.syntax("trailing input");
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Unary(Func),
    Binary(Func),
}

/// Postfix program with constant subtrees folded.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    ops: Vec<Op>,
    depth: usize,
}

const INLINE_STACK: usize = 32;

impl Compiled {
    pub fn new(expr: &Expr) -> Self {
        let mut ops = Vec::new();
        emit(expr, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Neg | Op::Unary(_) => {}
                Op::Bin(_) | Op::Binary(_) => depth -= 1,
            }
            max_depth = max_depth.max(depth);
        }
        Compiled { ops, depth: max_depth }
    }

    /// `Some(v)` when the whole expression folded to a constant.
    pub fn constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, vars: &[f64]) -> Result<f64, DomainError> {
        if let [Op::Const(v)] = self.ops.as_slice() {
            return Ok(*v);
        }
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            run(&self.ops, vars, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.depth];
            run(&self.ops, vars, &mut stack)
        }
    }
}

#[inline]
fn run(ops: &[Op], vars: &[f64], stack: &mut [f64]) -> Result<f64, DomainError> {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Const(v) => {
                stack[sp] = v;
                sp += 1;
            }
            Op::Load(s) => {
                stack[sp] = vars[s];
                sp += 1;
            }
            Op::Neg => stack[sp - 1] = -stack[sp - 1],
            Op::Bin(b) => {
                sp -= 1;
                stack[sp - 1] = apply_bin(b, stack[sp - 1], stack[sp])?;
            }
            Op::Unary(f) => stack[sp - 1] = apply_unary(f, stack[sp - 1])?,
            Op::Binary(f) => {
                sp -= 1;
                stack[sp - 1] = apply_binary_fn(f, stack[sp - 1], stack[sp]);
            }
        }
    }
    Ok(stack[0])
}

fn emit(expr: &Expr, ops: &mut Vec<Op>) {
    if expr.is_constant() {
        if let Ok(v) = expr.eval(&[]) {
            ops.push(Op::Const(v));
            return;
        }
    }
    match expr {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Var { slot, .. } => ops.push(Op::Load(*slot)),
        Expr::Neg(e) => {
            emit(e, ops);
            ops.push(Op::Neg);
        }
        Expr::Bin(op, a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(Op::Bin(*op));
        }
        Expr::Call(f, args) => {
            for a in args {
                emit(a, ops);
            }
            if f.arity() == 2 {
                ops.push(Op::Binary(*f));
            } else {
                ops.push(Op::Unary(*f));
            }
        }
    }
}
