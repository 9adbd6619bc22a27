//! Mini-language for coefficient expressions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := atom ('^' unary)?            right associative
//! atom    := number | 'pi' | var | func '(' args ')' | '(' expr ')'
//! var     := 'x1' | 'x2' | 'x3' | 't'
//! func    := sin | cos | exp | log | abs     (one argument)
//!          | min | max                       (two arguments)
//! ```
//!
//! Unary minus binds looser than `^`, so `-x1^2` is `-(x1^2)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function '{name}' takes {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("empty expression")]
    Empty,
    #[error("time variable 't' is not allowed in a spatial-only coefficient")]
    TimeInSpatialSlot,
    #[error("variable x{axis} is not available on a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "log" => Self::Log,
            "abs" => Self::Abs,
            "min" => Self::Min,
            "max" => Self::Max,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Self::Min | Self::Max => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Log => "log",
            Self::Abs => "abs",
            Self::Min => "min",
            Self::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// Spatial coordinate, 0-based axis.
    Var(usize),
    Time,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    pub fn eval(&self, x: &[f64; 3], t: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(k) => x[*k],
            Node::Time => t,
            Node::Neg(a) => -a.eval(x, t),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, t), b.eval(x, t));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Node::Call(func, args) => {
                let a = args[0].eval(x, t);
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval(x, t)),
                    Func::Max => a.max(args[1].eval(x, t)),
                }
            }
        }
    }

    fn visit(&self, out: &mut impl FnMut(&Node)) {
        out(self);
        match self {
            Node::Neg(a) => a.visit(out),
            Node::Bin(_, a, b) => {
                a.visit(out);
                b.visit(out);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.visit(out)),
            _ => {}
        }
    }
}

/// A parsed coefficient expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    source: String,
    root: Node,
}

impl CoefficientExpr {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        parse_expression(source)
    }

    /// Parse and reject any use of `t`.
    pub fn parse_spatial(source: &str) -> Result<Self, ExprError> {
        let expr = parse_expression(source)?;
        if expr.uses_time() {
            return Err(ExprError::TimeInSpatialSlot);
        }
        Ok(expr)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn eval(&self, x: &[f64; 3], t: f64) -> f64 {
        self.root.eval(x, t)
    }

    pub fn uses_time(&self) -> bool {
        let mut found = false;
        self.root.visit(&mut |n| found |= matches!(n, Node::Time));
        found
    }

    /// Highest spatial axis referenced (1-based), 0 if none.
    pub fn max_axis(&self) -> usize {
        let mut max = 0;
        self.root.visit(&mut |n| {
            if let Node::Var(k) = n {
                max = max.max(k + 1);
            }
        });
        max
    }

    /// Errors when the expression references a coordinate the grid lacks.
    pub fn check_dim(&self, dim: usize) -> Result<(), ExprError> {
        match self.max_axis() {
            axis if axis > dim => Err(ExprError::AxisOutOfRange { axis, dim }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let tok = lx.next_token()?;
            let done = tok.0 == Tok::End;
            out.push(tok);
            if done {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next_token(&mut self) -> Result<(Tok, usize), ExprError> {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        self.pos += c.len_utf8();
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            other => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character '{other}'"),
                })
            }
        };
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ExprError> {
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < bytes.len() && bytes[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < bytes.len() && (bytes[p] == b'+' || bytes[p] == b'-') {
                p += 1;
            }
            if p < bytes.len() && bytes[p].is_ascii_digit() {
                self.pos = p;
                digits(&mut self.pos);
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>().map(|v| (Tok::Num(v), start)).map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("malformed number '{text}'"),
        })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let tok = self.toks[self.at].0.clone();
        if tok != Tok::End {
            self.at += 1;
        }
        tok
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(name) => self.identifier(name, offset),
            Tok::End => Err(ExprError::Syntax {
                offset,
                message: "unexpected end of expression".into(),
            }),
            other => Err(ExprError::Syntax {
                offset,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn identifier(&mut self, name: String, offset: usize) -> Result<Node, ExprError> {
        match name.as_str() {
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            "x1" => return Ok(Node::Var(0)),
            "x2" => return Ok(Node::Var(1)),
            "x3" => return Ok(Node::Var(2)),
            "t" => return Ok(Node::Time),
            _ => {}
        }
        let Some(func) = Func::lookup(&name) else {
            return Err(ExprError::UnknownIdentifier { name, offset });
        };
        self.expect(Tok::LParen, "'(' after function name")?;
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen, "')'")?;
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                name: func.name().into(),
                expected: func.arity(),
                got: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }
}

/// Parses a coefficient expression.
pub fn parse_expression(source: &str) -> Result<CoefficientExpr, ExprError> {
    if source.trim().is_empty() {
        return Err(ExprError::Empty);
    }
    let toks = Lexer::tokenize(source)?;
    let mut parser = Parser { toks, at: 0 };
    let root = parser.expr()?;
    if *parser.peek() != Tok::End {
        return parser.error("unexpected trailing input");
    }
    Ok(CoefficientExpr { source: source.to_string(), root })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, x1: f64) -> f64 {
        parse_expression(src).unwrap().eval(&[x1, 0.0, 0.0], 0.0)
    }

    #[test]
    fn examples() {
        assert_eq!(at("2 + cos(2*pi*x1)", 0.0), 3.0);
        assert_eq!(at("exp(-(x1-0.5)^2)", 0.5), 1.0);
        assert_eq!(
            parse_expression("1 +"),
            Err(ExprError::Syntax { offset: 3, message: "unexpected end of expression".into() })
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(at("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(at("2 ^ 3 ^ 2", 0.0), 512.0);
        assert_eq!(at("-2^2", 0.0), -4.0);
        assert_eq!(at("(1 + 2) * 3", 0.0), 9.0);
        assert_eq!(at("8 / 4 / 2", 0.0), 1.0);
        assert_eq!(at("10 - 3 - 2", 0.0), 5.0);
        assert_eq!(at("2^-1", 0.0), 0.5);
        assert_eq!(at("1.5e2 + .5", 0.0), 150.5);
    }

    #[test]
    fn functions() {
        assert_eq!(at("min(3, x1)", 1.0), 1.0);
        assert_eq!(at("max(3, x1)", 1.0), 3.0);
        assert_eq!(at("abs(-x1)", 2.0), 2.0);
        assert!((at("log(exp(x1))", 0.7) - 0.7).abs() < 1e-15);
        assert!(matches!(parse_expression("min(1)"), Err(ExprError::Arity { .. })));
        assert!(matches!(parse_expression("sin(1, 2)"), Err(ExprError::Arity { .. })));
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_expression("1 + foo"),
            Err(ExprError::UnknownIdentifier { name: "foo".into(), offset: 4 })
        );
        assert_eq!(parse_expression("   "), Err(ExprError::Empty));
        assert!(matches!(parse_expression("(1 + 2"), Err(ExprError::Syntax { offset: 6, .. })));
        assert!(matches!(parse_expression("1 2"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expression("1 # 2"), Err(ExprError::Syntax { offset: 2, .. })));
        assert_eq!(CoefficientExpr::parse_spatial("1 + t"), Err(ExprError::TimeInSpatialSlot));
    }

    #[test]
    fn variables_and_time() {
        let e = parse_expression("x1 + 10*x2 + 100*x3 + 1000*t").unwrap();
        assert_eq!(e.eval(&[1.0, 2.0, 3.0], 4.0), 4321.0);
        assert!(e.uses_time());
        assert_eq!(e.max_axis(), 3);
        assert!(e.check_dim(2).is_err());
        assert!(e.check_dim(3).is_ok());
        assert_eq!(e.source(), "x1 + 10*x2 + 100*x3 + 1000*t");
    }
}
