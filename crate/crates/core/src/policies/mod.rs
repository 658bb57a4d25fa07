//! Policy representations and their evaluation semantics.

mod fuzzy;
mod pid;
mod tree;

pub use fuzzy::{FuzzyPolicy, FuzzyRule, SIGMA_FLOOR};
pub use pid::{PidChannel, PidController, PidPolicy};
pub use tree::{ExprTree, Op, StateVar};

use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::neural::{Activation, Mlp};

/// Force bound shared by every policy representation.
pub const ACTION_LIMIT: f64 = 10.0;

pub fn clamp_action(a: f64) -> f64 {
    a.clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

/// A policy instance bound to one rollout. Stateless policies ignore the
/// mutability; the PID controller keeps error history between calls.
pub trait Controller {
    fn act(&mut self, s: &State) -> f64;
}

/// Adapter for closures, mostly in tests and exploration.
pub struct FnController<F: FnMut(&State) -> f64>(F);

impl<F: FnMut(&State) -> f64> FnController<F> {
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F: FnMut(&State) -> f64> Controller for FnController<F> {
    fn act(&mut self, s: &State) -> f64 {
        (self.0)(s)
    }
}

/// Linear state feedback, a = gains . (theta, theta_dot, rho, rho_dot),
/// clamped to the force range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub gains: [f64; 4],
}

impl LinearPolicy {
    pub fn new(gains: [f64; 4]) -> Self {
        Self { gains }
    }

    pub fn eval(&self, s: &State) -> f64 {
        let x = s.as_array();
        let raw: f64 = self.gains.iter().zip(&x).map(|(g, v)| g * v).sum();
        clamp_action(raw)
    }

    pub fn equation(&self) -> String {
        format!(
            "{}*theta + {}*theta_dot + {}*rho + {}*rho_dot",
            self.gains[0], self.gains[1], self.gains[2], self.gains[3]
        )
    }
}

/// Feed-forward policy body; raw output in (-1, 1) is scaled to the force
/// range at the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralPolicy {
    pub net: Mlp,
    pub output_scale: f64,
}

impl NeuralPolicy {
    /// The default PSONN body: 4-8-1, tanh throughout.
    pub fn psonn_topology(seed: u64) -> Result<Self> {
        let net = Mlp::init(&[4, 8, 1], &[Activation::Tanh, Activation::Tanh], seed)?;
        Ok(Self {
            net,
            output_scale: ACTION_LIMIT,
        })
    }

    pub fn eval(&self, s: &State) -> f64 {
        let y = self
            .net
            .forward(&s.as_array())
            .expect("policy net input width is 4");
        clamp_action(self.output_scale * y[0])
    }
}

/// Expression-tree policy; the tree's clamped evaluation times an output
/// gain (1 for algebraic trees, 10 for fuzzy trees with a tanh root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePolicy {
    pub tree: ExprTree,
    pub output_gain: f64,
}

impl TreePolicy {
    pub fn algebraic(tree: ExprTree) -> Self {
        Self {
            tree,
            output_gain: 1.0,
        }
    }

    pub fn fuzzy(tree: ExprTree) -> Self {
        Self {
            tree,
            output_gain: ACTION_LIMIT,
        }
    }

    pub fn eval(&self, s: &State) -> f64 {
        clamp_action(self.output_gain * self.tree.eval(&s.as_array()))
    }
}

/// Greedy policy over a learned Q-network with input (state, action) and a
/// finite action set. Ties prefer the smaller-magnitude action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyQPolicy {
    pub q_net: Mlp,
    pub actions: Vec<f64>,
}

impl GreedyQPolicy {
    pub fn new(q_net: Mlp, actions: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::EmptyData("action set"));
        }
        Ok(Self { q_net, actions })
    }

    pub fn q_value(&self, s: &State, a: f64) -> f64 {
        let x = s.as_array();
        let input = [x[0], x[1], x[2], x[3], a];
        self.q_net.forward(&input).expect("q net input width is 5")[0]
    }

    pub fn eval(&self, s: &State) -> f64 {
        let mut best = self.actions[0];
        let mut best_q = self.q_value(s, best);
        for &a in &self.actions[1..] {
            let q = self.q_value(s, a);
            if q > best_q || (q == best_q && a.abs() < best.abs()) {
                best = a;
                best_q = q;
            }
        }
        clamp_action(best)
    }
}

/// Sum type over every policy representation in the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Policy {
    Linear(LinearPolicy),
    Pid(PidPolicy),
    Fuzzy(FuzzyPolicy),
    Tree(TreePolicy),
    Neural(NeuralPolicy),
    GreedyQ(GreedyQPolicy),
}

impl Policy {
    pub fn kind(&self) -> &'static str {
        match self {
            Policy::Linear(_) => "linear",
            Policy::Pid(_) => "pid",
            Policy::Fuzzy(_) => "fuzzy",
            Policy::Tree(_) => "tree",
            Policy::Neural(_) => "neural",
            Policy::GreedyQ(_) => "greedy_q",
        }
    }

    /// Fresh controller for one rollout.
    pub fn controller(&self) -> Box<dyn Controller> {
        match self {
            Policy::Linear(p) => {
                let p = p.clone();
                Box::new(FnController::new(move |s: &State| p.eval(s)))
            }
            Policy::Pid(p) => Box::new(PidController::new(p.clone())),
            Policy::Fuzzy(p) => {
                let p = p.clone();
                Box::new(FnController::new(move |s: &State| p.eval(s)))
            }
            Policy::Tree(p) => {
                let p = p.clone();
                Box::new(FnController::new(move |s: &State| p.eval(s)))
            }
            Policy::Neural(p) => {
                let p = p.clone();
                Box::new(FnController::new(move |s: &State| p.eval(s)))
            }
            Policy::GreedyQ(p) => {
                let p = p.clone();
                Box::new(FnController::new(move |s: &State| p.eval(s)))
            }
        }
    }

    /// Human-readable form: infix equation for trees and linear gains,
    /// IF-THEN listing for fuzzy rule sets.
    pub fn describe(&self) -> String {
        match self {
            Policy::Linear(p) => p.equation(),
            Policy::Pid(p) => p.describe(),
            Policy::Fuzzy(p) => p.describe(),
            Policy::Tree(p) => p.tree.to_infix(),
            Policy::Neural(p) => format!(
                "neural policy {:?} (tanh, output x{})",
                p.net.layer_sizes, p.output_scale
            ),
            Policy::GreedyQ(p) => format!(
                "greedy policy over Q net {:?}, actions {:?}",
                p.q_net.layer_sizes, p.actions
            ),
        }
    }
}

/// Versioned JSON envelope for policy files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub version: u32,
    #[serde(flatten)]
    pub policy: Policy,
}

pub const POLICY_FILE_VERSION: u32 = 1;

pub fn serialize(p: &Policy) -> String {
    serde_json::to_string_pretty(&PolicyFile {
        version: POLICY_FILE_VERSION,
        policy: p.clone(),
    })
    .expect("policy serialization is infallible")
}

pub fn parse(text: &str) -> Result<Policy> {
    let file: PolicyFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    Ok(file.policy)
}

/// Evaluate a policy on the error state relative to a cart-position
/// setpoint, used for the setpoint-shift rollouts.
pub struct SetpointController<'a> {
    inner: Box<dyn Controller + 'a>,
    pub rho_setpoint: f64,
}

impl<'a> SetpointController<'a> {
    pub fn new(inner: Box<dyn Controller + 'a>, rho_setpoint: f64) -> Self {
        Self {
            inner,
            rho_setpoint,
        }
    }
}

impl Controller for SetpointController<'_> {
    fn act(&mut self, s: &State) -> f64 {
        let mut shifted = *s;
        shifted.rho -= self.rho_setpoint;
        self.inner.act(&shifted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_eval_matches_paper_examples() {
        let lqr = LinearPolicy::new([38.8, 10.1, 2.8, 3.9]);
        assert_abs_diff_eq!(
            lqr.eval(&State::new(0.1, 0.0, 0.0, 0.0)),
            3.88,
            epsilon = 1e-12
        );
        assert_eq!(lqr.eval(&State::zero()), 0.0);
        let gprl = LinearPolicy::new([6.98, 2.0, 1.0, 0.94]);
        // raw 10.92 clamps to the force limit
        assert_eq!(gprl.eval(&State::new(1.0, 1.0, 1.0, 1.0)), 10.0);
    }

    #[test]
    fn linear_equation_rendering() {
        let p = LinearPolicy::new([6.98, 2.0, 1.0, 0.94]);
        assert_eq!(p.equation(), "6.98*theta + 2*theta_dot + 1*rho + 0.94*rho_dot");
    }

    #[test]
    fn zero_neural_policy_outputs_zero() {
        let mut p = NeuralPolicy::psonn_topology(0).unwrap();
        let zeros = vec![0.0; p.net.num_params()];
        p.net.set_params(&zeros).unwrap();
        assert_eq!(p.eval(&State::new(0.3, -0.1, 0.4, 0.2)), 0.0);
    }

    #[test]
    fn policy_envelope_round_trip() {
        let p = Policy::Linear(LinearPolicy::new([1.0, 2.0, 3.0, 4.0]));
        let text = serialize(&p);
        assert!(text.contains("\"kind\""));
        assert_eq!(parse(&text).unwrap(), p);
    }

    #[test]
    fn malformed_policy_text_reports_position() {
        match parse("{\"version\": 1,") {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn setpoint_controller_shifts_rho() {
        let p = Policy::Linear(LinearPolicy::new([0.0, 0.0, 1.0, 0.0]));
        let mut c = SetpointController::new(p.controller(), 0.5);
        assert_abs_diff_eq!(c.act(&State::new(0.0, 0.0, 0.5, 0.0)), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.act(&State::new(0.0, 0.0, 1.5, 0.0)), 1.0, epsilon = 1e-15);
    }
}
