//! Array-encoded expression trees for the genetic programming policies.
//! Nodes are stored in prefix order; evaluation is total over finite inputs
//! (protected division, bounded intermediates).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State feature index of a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateVar {
    Theta,
    ThetaDot,
    Rho,
    RhoDot,
}

impl StateVar {
    pub const ALL: [StateVar; 4] = [
        StateVar::Theta,
        StateVar::ThetaDot,
        StateVar::Rho,
        StateVar::RhoDot,
    ];

    pub fn index(self) -> usize {
        match self {
            StateVar::Theta => 0,
            StateVar::ThetaDot => 1,
            StateVar::Rho => 2,
            StateVar::RhoDot => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StateVar::Theta => "theta",
            StateVar::ThetaDot => "theta_dot",
            StateVar::Rho => "rho",
            StateVar::RhoDot => "rho_dot",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Const(f64),
    Var(StateVar),
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    /// Gaussian membership of the child value: exp(-(c - x)^2 / (2 w^2)).
    Gauss {
        center: f64,
        width: f64,
    },
}

impl Op {
    pub fn arity(&self) -> usize {
        match self {
            Op::Const(_) | Op::Var(_) => 0,
            Op::Tanh | Op::Gauss { .. } => 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
        }
    }
}

/// Denominator threshold of the protected division.
pub const DIV_EPS: f64 = 0.001;
/// Bound on intermediate values, keeping evaluation finite.
const VALUE_BOUND: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprTree {
    nodes: Vec<Op>,
}

impl ExprTree {
    pub fn new(nodes: Vec<Op>) -> Result<Self> {
        let t = Self { nodes };
        t.validate()?;
        Ok(t)
    }

    pub fn leaf(op: Op) -> Self {
        debug_assert_eq!(op.arity(), 0);
        Self { nodes: vec![op] }
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    pub fn complexity(&self) -> usize {
        self.nodes.len()
    }

    /// Arity consistency: the prefix encoding must consume exactly all nodes.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("empty expression tree".into()));
        }
        let end = self.subtree_end_checked(0)?;
        if end != self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "tree has {} trailing nodes",
                self.nodes.len() - end
            )));
        }
        Ok(())
    }

    fn subtree_end_checked(&self, start: usize) -> Result<usize> {
        let mut idx = start;
        let mut pending = 1usize;
        while pending > 0 {
            let op = self
                .nodes
                .get(idx)
                .ok_or_else(|| Error::InvalidArgument("truncated expression tree".into()))?;
            pending = pending - 1 + op.arity();
            idx += 1;
        }
        Ok(idx)
    }

    /// End index (exclusive) of the subtree rooted at `start`.
    pub fn subtree_end(&self, start: usize) -> usize {
        self.subtree_end_checked(start).expect("valid tree")
    }

    pub fn subtree(&self, start: usize) -> &[Op] {
        &self.nodes[start..self.subtree_end(start)]
    }

    /// Replace the subtree rooted at `start` with `replacement` nodes.
    pub fn with_replaced_subtree(&self, start: usize, replacement: &[Op]) -> Self {
        let end = self.subtree_end(start);
        let mut nodes = Vec::with_capacity(self.nodes.len() - (end - start) + replacement.len());
        nodes.extend_from_slice(&self.nodes[..start]);
        nodes.extend_from_slice(replacement);
        nodes.extend_from_slice(&self.nodes[end..]);
        Self { nodes }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Op], idx: usize) -> (usize, usize) {
            let op = &nodes[idx];
            let mut next = idx + 1;
            let mut max_child = 0;
            for _ in 0..op.arity() {
                let (d, n) = walk(nodes, next);
                max_child = max_child.max(d);
                next = n;
            }
            (max_child + 1, next)
        }
        walk(&self.nodes, 0).0
    }

    pub fn eval(&self, features: &[f64; 4]) -> f64 {
        fn walk(nodes: &[Op], idx: usize, x: &[f64; 4]) -> (f64, usize) {
            match nodes[idx] {
                Op::Const(c) => (c, idx + 1),
                Op::Var(v) => (x[v.index()], idx + 1),
                Op::Tanh => {
                    let (a, n) = walk(nodes, idx + 1, x);
                    (a.tanh(), n)
                }
                Op::Gauss { center, width } => {
                    let (a, n) = walk(nodes, idx + 1, x);
                    let w = width.abs().max(1e-3);
                    let d = center - a;
                    ((-d * d / (2.0 * w * w)).exp(), n)
                }
                Op::Add => {
                    let (a, n1) = walk(nodes, idx + 1, x);
                    let (b, n2) = walk(nodes, n1, x);
                    (bound(a + b), n2)
                }
                Op::Sub => {
                    let (a, n1) = walk(nodes, idx + 1, x);
                    let (b, n2) = walk(nodes, n1, x);
                    (bound(a - b), n2)
                }
                Op::Mul => {
                    let (a, n1) = walk(nodes, idx + 1, x);
                    let (b, n2) = walk(nodes, n1, x);
                    (bound(a * b), n2)
                }
                Op::Div => {
                    let (a, n1) = walk(nodes, idx + 1, x);
                    let (b, n2) = walk(nodes, n1, x);
                    let den = if b.abs() < DIV_EPS {
                        DIV_EPS * if b < 0.0 { -1.0 } else { 1.0 }
                    } else {
                        b
                    };
                    (bound(a / den), n2)
                }
            }
        }
        fn bound(v: f64) -> f64 {
            v.clamp(-VALUE_BOUND, VALUE_BOUND)
        }
        walk(&self.nodes, 0, features).0
    }

    /// Fully parenthesized infix rendering, the interpretability artifact.
    pub fn to_infix(&self) -> String {
        fn walk(nodes: &[Op], idx: usize, out: &mut String) -> usize {
            match nodes[idx] {
                Op::Const(c) => {
                    out.push_str(&format!("{c}"));
                    idx + 1
                }
                Op::Var(v) => {
                    out.push_str(v.name());
                    idx + 1
                }
                Op::Tanh => {
                    out.push_str("tanh(");
                    let n = walk(nodes, idx + 1, out);
                    out.push(')');
                    n
                }
                Op::Gauss { center, width } => {
                    out.push_str(&format!("gauss({center}, {width}, "));
                    let n = walk(nodes, idx + 1, out);
                    out.push(')');
                    n
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let sym = match nodes[idx] {
                        Op::Add => " + ",
                        Op::Sub => " - ",
                        Op::Mul => " * ",
                        _ => " / ",
                    };
                    out.push('(');
                    let n1 = walk(nodes, idx + 1, out);
                    out.push_str(sym);
                    let n2 = walk(nodes, n1, out);
                    out.push(')');
                    n2
                }
            }
        }
        let mut out = String::new();
        walk(&self.nodes, 0, &mut out);
        out
    }

    /// Parse the infix form back into a tree. Errors carry the byte offset.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser {
            text: text.as_bytes(),
            pos: 0,
        };
        let mut nodes = Vec::new();
        p.expr(&mut nodes)?;
        p.skip_ws();
        if p.pos != p.text.len() {
            return Err(p.err("unexpected trailing input"));
        }
        ExprTree::new(nodes)
    }
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self, out: &mut Vec<Op>) -> Result<()> {
        let mark = out.len();
        self.term(out)?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let op = Op::Add;
                    let mut rhs = Vec::new();
                    self.term(&mut rhs)?;
                    prepend_binary(out, mark, op, rhs);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let mut rhs = Vec::new();
                    self.term(&mut rhs)?;
                    prepend_binary(out, mark, Op::Sub, rhs);
                }
                _ => return Ok(()),
            }
        }
    }

    fn term(&mut self, out: &mut Vec<Op>) -> Result<()> {
        let mark = out.len();
        self.factor(out)?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let mut rhs = Vec::new();
                    self.factor(&mut rhs)?;
                    prepend_binary(out, mark, Op::Mul, rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let mut rhs = Vec::new();
                    self.factor(&mut rhs)?;
                    prepend_binary(out, mark, Op::Div, rhs);
                }
                _ => return Ok(()),
            }
        }
    }

    fn factor(&mut self, out: &mut Vec<Op>) -> Result<()> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.expr(out)?;
                self.expect(b')')
            }
            Some(c) if c == b'-' || c == b'.' || c.is_ascii_digit() => {
                let n = self.number()?;
                out.push(Op::Const(n));
                Ok(())
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let ident = self.ident();
                match ident.as_str() {
                    "tanh" => {
                        self.expect(b'(')?;
                        out.push(Op::Tanh);
                        self.expr(out)?;
                        self.expect(b')')
                    }
                    "gauss" => {
                        self.expect(b'(')?;
                        let center = self.number()?;
                        self.expect(b',')?;
                        let width = self.number()?;
                        self.expect(b',')?;
                        out.push(Op::Gauss { center, width });
                        self.expr(out)?;
                        self.expect(b')')
                    }
                    name => match StateVar::from_name(name) {
                        Some(v) => {
                            out.push(Op::Var(v));
                            Ok(())
                        }
                        None => Err(self.err(&format!("unknown identifier '{name}'"))),
                    },
                }
            }
            _ => Err(self.err("expected a number, variable, function or '('")),
        }
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len()
            && (self.text[self.pos].is_ascii_alphanumeric() || self.text[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.text[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        if self.text.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.pos < self.text.len()
            && (self.text[self.pos].is_ascii_digit()
                || matches!(self.text[self.pos], b'.' | b'e' | b'E')
                || (matches!(self.text[self.pos], b'+' | b'-')
                    && matches!(self.text[self.pos - 1], b'e' | b'E')))
        {
            self.pos += 1;
        }
        let slice = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
        slice.parse().map_err(|_| Error::Parse {
            offset: start,
            message: format!("invalid number '{slice}'"),
        })
    }
}

/// Turn out[mark..] (the lhs subtree) and rhs into `op lhs rhs` in place.
fn prepend_binary(out: &mut Vec<Op>, mark: usize, op: Op, rhs: Vec<Op>) {
    out.insert(mark, op);
    out.extend(rhs);
}
