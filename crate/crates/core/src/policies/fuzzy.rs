//! Gaussian fuzzy rule policies: product-of-Gaussians memberships, a
//! normalized weighted-mean defuzzifier squashed by tanh.

use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::policies::{clamp_action, ACTION_LIMIT};

/// Floor applied to membership widths when decoding parameter vectors.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// IF s is m THEN o, with a product-of-Gaussians membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyRule {
    pub center: [f64; 4],
    pub width: [f64; 4],
    pub output: f64,
}

impl FuzzyRule {
    pub fn new(center: [f64; 4], width: [f64; 4], output: f64) -> Result<Self> {
        if width.iter().any(|w| *w <= 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "fuzzy rule widths must be positive and finite".into(),
            ));
        }
        Ok(Self {
            center,
            width,
            output,
        })
    }

    /// Membership degree in (0, 1].
    pub fn membership(&self, s: &State) -> f64 {
        self.log_membership(s).exp()
    }

    pub fn log_membership(&self, s: &State) -> f64 {
        let x = s.as_array();
        let mut acc = 0.0;
        for j in 0..4 {
            let d = self.center[j] - x[j];
            acc -= d * d / (2.0 * self.width[j] * self.width[j]);
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyPolicy {
    pub rules: Vec<FuzzyRule>,
    /// Slope of the tanh defuzzifier.
    pub alpha: f64,
}

impl FuzzyPolicy {
    pub fn new(rules: Vec<FuzzyRule>, alpha: f64) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::InvalidArgument("a fuzzy policy needs at least one rule".into()));
        }
        if !alpha.is_finite() {
            return Err(Error::NonFinite("fuzzy alpha"));
        }
        Ok(Self { rules, alpha })
    }

    /// Raw defuzzified output in (-1, 1).
    pub fn raw(&self, s: &State) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for r in &self.rules {
            let m = r.membership(s);
            num += m * r.output;
            den += m;
        }
        if den < f64::MIN_POSITIVE {
            // All memberships underflowed; fall back to the nearest rule in
            // log-membership terms.
            let best = self
                .rules
                .iter()
                .map(|r| (r.log_membership(s), r.output))
                .fold((f64::NEG_INFINITY, 0.0), |acc, cur| {
                    if cur.0 > acc.0 {
                        cur
                    } else {
                        acc
                    }
                });
            return (self.alpha * best.1).tanh();
        }
        (self.alpha * num / den).tanh()
    }

    pub fn eval(&self, s: &State) -> f64 {
        clamp_action(ACTION_LIMIT * self.raw(s))
    }

    /// Parameter-vector layout: per rule the four centers, four widths and
    /// the output, then the global slope. Length 9*C + 1.
    pub fn encode(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.rules.len() * 9 + 1);
        for r in &self.rules {
            x.extend_from_slice(&r.center);
            x.extend_from_slice(&r.width);
            x.push(r.output);
        }
        x.push(self.alpha);
        x
    }

    /// Inverse of `encode` for a given rule count; widths below the floor
    /// are clamped to it.
    pub fn decode(x: &[f64], rule_count: usize) -> Result<Self> {
        if rule_count == 0 {
            return Err(Error::InvalidArgument("rule count must be >= 1".into()));
        }
        let expected = rule_count * 9 + 1;
        if x.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: x.len(),
                context: "fuzzy parameter vector",
            });
        }
        let mut rules = Vec::with_capacity(rule_count);
        for i in 0..rule_count {
            let base = i * 9;
            let center = [x[base], x[base + 1], x[base + 2], x[base + 3]];
            let mut width = [x[base + 4], x[base + 5], x[base + 6], x[base + 7]];
            for w in width.iter_mut() {
                *w = w.max(SIGMA_FLOOR);
            }
            rules.push(FuzzyRule::new(center, width, x[base + 8])?);
        }
        FuzzyPolicy::new(rules, x[expected - 1])
    }

    pub fn describe(&self) -> String {
        let names = ["theta", "theta_dot", "rho", "rho_dot"];
        let mut out = String::new();
        for (i, r) in self.rules.iter().enumerate() {
            out.push_str(&format!("R{}: IF ", i + 1));
            for j in 0..4 {
                if j > 0 {
                    out.push_str(" AND ");
                }
                out.push_str(&format!(
                    "{} is Gauss(c={:.4}, sigma={:.4})",
                    names[j], r.center[j], r.width[j]
                ));
            }
            out.push_str(&format!(" THEN o = {:.4}\n", r.output));
        }
        out.push_str(&format!("defuzzifier: 10 * tanh({:.4} * weighted mean)", self.alpha));
        out
    }
}
