use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
    Min,
    Max,
    Pow,
    Phi,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            "Phi" => Func::Phi,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
            Func::Phi => "Phi",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }
}

/// Syntax tree of a coefficient expression in the single variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" | "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` takes {expected} argument(s), got {found} (byte {offset})")]
    Arity {
        name: &'static str,
        expected: usize,
        found: usize,
        offset: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error in `{expr}` at x = {x}: {reason}")]
pub struct EvalError {
    pub expr: String,
    pub x: f64,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == b'.' {
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
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                expected: vec!["number"],
                found: format!("`{text}`"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if b"+-*/^(),".contains(&c) {
            out.push((Tok::Op(c as char), start));
            i += 1;
        } else {
            let ch = src[start..].chars().next().unwrap();
            return Err(ParseError::Syntax {
                offset: start,
                expected: vec!["number", "x", "function", "operator", "`(`", "`)`"],
                found: format!("`{ch}`"),
            });
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

const OPERAND: &[&str] = &["number", "x", "function", "`(`", "`-`"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn fail<T>(&self, expected: &[&'static str]) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            expected: expected.to_vec(),
            found: self.peek().describe(),
        })
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Op(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    // `^` binds tighter than unary minus on its left and is right-associative;
    // the exponent may itself carry a sign (2^-1).
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if name == "x" {
                    return Ok(Expr::Var);
                }
                let Some(f) = Func::lookup(&name) else {
                    return Err(ParseError::UnknownIdentifier { name, offset });
                };
                if !self.eat('(') {
                    return self.fail(&["`(`"]);
                }
                let mut args = vec![self.expr()?];
                while self.eat(',') {
                    args.push(self.expr()?);
                }
                if !self.eat(')') {
                    return self.fail(&["`,`", "`)`", "operator"]);
                }
                if args.len() != f.arity() {
                    return Err(ParseError::Arity {
                        name: f.name(),
                        expected: f.arity(),
                        found: args.len(),
                        offset,
                    });
                }
                Ok(Expr::Call(f, args))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.fail(&["`)`", "operator"]);
                }
                Ok(e)
            }
            _ => self.fail(OPERAND),
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail(&["operator", "end of input"]);
    }
    Ok(e)
}

/// Standard normal CDF.
pub fn normal_cdf(v: f64) -> f64 {
    0.5 * libm::erfc(-v / std::f64::consts::SQRT_2)
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn pow(a: f64, b: f64) -> Result<f64, &'static str> {
    if a == 0.0 && b < 0.0 {
        return Err("zero raised to a negative power");
    }
    if a < 0.0 && b.fract() != 0.0 {
        return Err("negative base with non-integer exponent");
    }
    Ok(a.powf(b))
}

impl Expr {
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let fail = |reason| EvalError {
            expr: self.to_string(),
            x,
            reason,
        };
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var => x,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(fail("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => pow(a, b).map_err(fail)?,
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(fail("log of a non-positive number"));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(fail("sqrt of a negative number"));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Sign => sign(a),
                    Func::Phi => normal_cdf(a),
                    Func::Min => a.min(args[1].eval(x)?),
                    Func::Max => a.max(args[1].eval(x)?),
                    Func::Pow => pow(a, args[1].eval(x)?).map_err(fail)?,
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fail("non-finite result"))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }
}

fn op_char(op: BinOp) -> char {
    match op {
        BinOp::Add => '+',
        BinOp::Sub => '-',
        BinOp::Mul => '*',
        BinOp::Div => '/',
        BinOp::Pow => '^',
    }
}

// Fully parenthesized so that printing and re-parsing preserves the tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var => f.write_str("x"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op_char(*op)),
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

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        parse_expr(s).unwrap().eval(x).unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("2*sqrt(x)", 4.0), 4.0);
        assert_eq!(ev("x^2", 3.0), 9.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("1 - 2 - 3", 0.0), -4.0);
        assert_eq!(ev("8 / 2 / 2", 0.0), 2.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("1+2*3", 0.0), 7.0);
        assert_eq!(ev("1.5e2 + 1E-1", 0.0), 150.1);
        assert_eq!(parse_expr("x").unwrap(), Expr::Var);
    }

    #[test]
    fn functions() {
        assert_eq!(ev("abs(x)", -2.0), 2.0);
        assert_eq!(ev("sign(x)", 0.0), 1.0);
        assert_eq!(ev("sign(x)", -1e-300), -1.0);
        assert_eq!(ev("min(x, 1)", 3.0), 1.0);
        assert_eq!(ev("max(1 - x, 0)", 3.0), 0.0);
        assert_eq!(ev("pow(x, 0.5)", 9.0), 3.0);
        assert!((ev("Phi(x)", 0.0) - 0.5).abs() < 1e-15);
        assert!((ev("Phi(1)", 0.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((ev("Phi(-8)", 0.0) - 6.220_960_574_271_785e-16).abs() < 1e-25);
    }

    #[test]
    fn domain_errors() {
        let e = parse_expr("1 + log(x)").unwrap().eval(-1.0).unwrap_err();
        assert_eq!(e.expr, "log(x)");
        assert_eq!(e.x, -1.0);
        for (s, x) in [("sqrt(x)", -1.0), ("1/x", 0.0), ("x^-1", 0.0), ("x^0.5", -2.0), ("exp(x)", 1e3)] {
            assert!(parse_expr(s).unwrap().eval(x).is_err(), "{s}");
        }
        assert_eq!(ev("x^2", -2.0), 4.0);
    }

    #[test]
    fn syntax_errors() {
        match parse_expr("2 * ").unwrap_err() {
            ParseError::Syntax { offset, expected, .. } => {
                assert_eq!(offset, 4);
                assert!(expected.contains(&"number"));
            }
            e => panic!("{e:?}"),
        }
        assert!(matches!(
            parse_expr("foo(x)"),
            Err(ParseError::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(parse_expr("min(x)"), Err(ParseError::Arity { .. })));
        assert!(matches!(parse_expr("(x"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expr("x y"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expr("x $"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(parse_expr("").is_err());
    }

    #[test]
    fn round_trip_corpus() {
        let corpus = [
            "x", "1", "-x", "x+1", "x-1", "x*2", "x/2", "x^2", "-x^2", "2^3^2", "(2^3)^2", "-(-x)",
            "1-2-3", "1-(2-3)", "8/2/2", "8/(2/2)", "2*x+3*x^2", "sqrt(x)", "2*sqrt(x)", "exp(-x)",
            "log(1+x)", "abs(x-1)", "sign(x)", "min(x,1)", "max(1-x,0)", "pow(x,1.5)", "Phi(x)",
            "2*Phi(1/(x*sqrt(1)))-1", "x^-0.5", "1-x^(-0.5)", "0.3*x", "x^2", "2*sqrt(x)",
            "exp(-2*x)*x", "-(x+1)*(x-1)", "max(min(x,2),-2)", "1e-3*x", "1.5e10+x", "x/(1+x^2)",
            "sqrt(abs(x))", "sign(x-0.5)*exp(-abs(x))", "-2^2", "(-2)^2", "x*-1", "1/-x", "x--x",
            "exp(log(x))", "Phi(-x)+Phi(x)", "pow(2,-x)", "((x))",
        ];
        assert_eq!(corpus.len(), 50);
        for s in corpus {
            let e = parse_expr(s).unwrap();
            let printed = e.to_string();
            assert_eq!(parse_expr(&printed).unwrap(), e, "{s} -> {printed}");
        }
    }

    #[test]
    fn eval_is_pure() {
        let e = parse_expr("exp(-x)*Phi(x)+sqrt(x)").unwrap();
        let a = e.eval(0.7312).unwrap();
        for _ in 0..10 {
            assert_eq!(e.eval(0.7312).unwrap().to_bits(), a.to_bits());
        }
    }
}
