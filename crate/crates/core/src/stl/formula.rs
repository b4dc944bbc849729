use std::fmt;

use crate::error::{Error, Result};

/// Default normalization scale for AGM margins (metres).
pub const DEFAULT_SCALE: f64 = 100.0;

/// Closed step interval `[lo, hi]`, relative to the evaluation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    lo: usize,
    hi: usize,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Parameter(format!("interval [{lo}, {hi}] has lo > hi")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    /// `channel >= bound`, margin `value - bound`.
    Geq,
    /// `channel <= bound`, margin `bound - value`.
    Leq,
}

/// Atomic proposition over one named channel. Positive margin means
/// satisfied.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub label: String,
    pub channel: String,
    pub cmp: Comparison,
    pub bound: f64,
    scale: f64,
}

impl Predicate {
    pub fn new(channel: &str, cmp: Comparison, bound: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!("predicate scale must be positive, got {scale}")));
        }
        if !bound.is_finite() {
            return Err(Error::Parameter(format!("predicate bound must be finite, got {bound}")));
        }
        let op = match cmp {
            Comparison::Geq => ">=",
            Comparison::Leq => "<=",
        };
        Ok(Self {
            label: format!("{channel} {op} {bound}"),
            channel: channel.to_string(),
            cmp,
            bound,
            scale,
        })
    }

    pub fn geq(channel: &str, bound: f64) -> Result<Self> {
        Self::new(channel, Comparison::Geq, bound, DEFAULT_SCALE)
    }

    pub fn leq(channel: &str, bound: f64) -> Result<Self> {
        Self::new(channel, Comparison::Leq, bound, DEFAULT_SCALE)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!("predicate scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn margin(&self, value: f64) -> f64 {
        match self.cmp {
            Comparison::Geq => value - self.bound,
            Comparison::Leq => self.bound - value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Pred(Predicate),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    /// Sugar for `not (not a and not b)`.
    Or(Box<Formula>, Box<Formula>),
    Always(Interval, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn pred(p: Predicate) -> Self {
        Formula::Pred(p)
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn always(i: Interval, f: Formula) -> Self {
        Formula::Always(i, Box::new(f))
    }

    pub fn eventually(i: Interval, f: Formula) -> Self {
        Formula::Eventually(i, Box::new(f))
    }

    pub fn until(i: Interval, a: Formula, b: Formula) -> Self {
        Formula::Until(i, Box::new(a), Box::new(b))
    }

    /// The braking safety property: `always [0, last] (dist >= min_gap)`.
    pub fn min_distance(channel: &str, min_gap: f64, last_step: usize) -> Result<Self> {
        Ok(Formula::always(
            Interval::new(0, last_step)?,
            Formula::pred(Predicate::geq(channel, min_gap)?),
        ))
    }

    /// Number of steps past the evaluation point the formula reads.
    pub fn lookahead(&self) -> usize {
        match self {
            Formula::True | Formula::Pred(_) => 0,
            Formula::Not(f) => f.lookahead(),
            Formula::And(a, b) | Formula::Or(a, b) => a.lookahead().max(b.lookahead()),
            Formula::Always(i, f) | Formula::Eventually(i, f) => i.hi + f.lookahead(),
            Formula::Until(i, a, b) => i.hi + a.lookahead().max(b.lookahead()),
        }
    }

    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Formula::True => {}
            Formula::Pred(p) => out.push(p),
            Formula::Not(f) | Formula::Always(_, f) | Formula::Eventually(_, f) => {
                f.collect_predicates(out)
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) => {
                a.collect_predicates(out);
                b.collect_predicates(out);
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::Pred(p) => {
                let op = match p.cmp {
                    Comparison::Geq => "geq",
                    Comparison::Leq => "leq",
                };
                if p.scale == DEFAULT_SCALE {
                    write!(f, "({op} {} {:?})", p.channel, p.bound)
                } else {
                    write!(f, "({op} {} {:?} {:?})", p.channel, p.bound, p.scale)
                }
            }
            Formula::Not(a) => write!(f, "(not {a})"),
            Formula::And(a, b) => write!(f, "(and {a} {b})"),
            Formula::Or(a, b) => write!(f, "(or {a} {b})"),
            Formula::Always(i, a) => write!(f, "(always {} {} {a})", i.lo, i.hi),
            Formula::Eventually(i, a) => write!(f, "(eventually {} {} {a})", i.lo, i.hi),
            Formula::Until(i, a, b) => write!(f, "(until {} {} {a} {b})", i.lo, i.hi),
        }
    }
}
