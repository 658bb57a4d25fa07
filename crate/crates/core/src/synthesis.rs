//! Per-method controller synthesis on top of the shared batch, world model
//! and evaluation protocol. The CLI and the comparison harness both go
//! through this layer.

use serde::{Deserialize, Serialize};

use crate::classical::{
    self, dare_residual, fit_linear_model, solve_dare, CriticalPoint, CriticalSearchConfig,
    LinearModel, Plant,
};
use crate::config::ExperimentConfig;
use crate::dynamics::{Batch, CartPole, Env, State};
use crate::error::{Error, Result};
use crate::gp::{self, FunctionSet, GpConfig, ParetoFront};
use crate::nfq::{self, NfqRun};
use crate::policies::{
    ExprTree, LinearPolicy, Op, PidChannel, PidController, PidPolicy, Policy, TreePolicy,
};
use crate::pso::{self, PsopController, SwarmConfig};
use crate::surrogate::{self, WorldModel};

/// The eight compared methods, in the paper-style table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lqr,
    Pid,
    Nfq,
    Psop,
    Psonn,
    Fpsrl,
    Gprl,
    Fgprl,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Lqr,
        Method::Pid,
        Method::Nfq,
        Method::Psop,
        Method::Psonn,
        Method::Fpsrl,
        Method::Gprl,
        Method::Fgprl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lqr => "lqr",
            Method::Pid => "pid",
            Method::Nfq => "nfq",
            Method::Psop => "psop",
            Method::Psonn => "psonn",
            Method::Fpsrl => "fpsrl",
            Method::Gprl => "gprl",
            Method::Fgprl => "fgprl",
        }
    }

    pub fn from_name(s: &str) -> Option<Method> {
        Method::ALL.iter().copied().find(|m| m.name() == s)
    }

    /// Deterministic methods produce one solution regardless of the run seed.
    pub fn deterministic(self) -> bool {
        matches!(self, Method::Lqr | Method::Pid)
    }
}

/// Stored parameters of the PSO-P planner; the "policy file" of a method
/// that re-plans at every step instead of fixing a policy body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsopSpec {
    pub horizon: usize,
    pub swarm_size: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl PsopSpec {
    pub fn swarm_config(&self) -> SwarmConfig {
        SwarmConfig {
            swarm_size: self.swarm_size,
            iterations: self.iterations,
            ..SwarmConfig::with_bounds(vec![(-10.0, 10.0); self.horizon], self.seed)
        }
    }

    pub fn controller<'a>(&self, model: &'a WorldModel) -> PsopController<'a> {
        PsopController::new(model, self.horizon, self.gamma, self.swarm_config())
    }
}

/// Everything a synthesis run may produce besides the policy itself.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    /// Closed-form policy, absent for the PSO-P planner.
    pub policy: Option<Policy>,
    pub psop: Option<PsopSpec>,
    pub front: Option<ParetoFront>,
    pub nfq: Option<NfqRun>,
    /// Human-readable synthesis report (gains, rules, equations).
    pub summary: String,
}

pub fn zero_policy() -> Policy {
    Policy::Linear(LinearPolicy::new([0.0; 4]))
}

// ---------------------------------------------------------------------------
// LQR

#[derive(Debug, Clone)]
pub struct LqrReport {
    pub policy: LinearPolicy,
    pub linear_model: LinearModel,
    pub dare_residual: f64,
}

pub fn synth_lqr(batch: &Batch, cfg: &ExperimentConfig) -> Result<LqrReport> {
    let lm = fit_linear_model(batch)?;
    let u = lm.u_matrix();
    let v = lm.v_matrix();
    let q = cfg.lqr.q_matrix();
    let r = nalgebra::DMatrix::from_element(1, 1, cfg.lqr.r);
    let (p, k) = solve_dare(&u, &v, &q, &r)?;
    let residual = dare_residual(&u, &v, &q, &r, &p);
    let policy = LinearPolicy::new([-k[(0, 0)], -k[(0, 1)], -k[(0, 2)], -k[(0, 3)]]);
    Ok(LqrReport {
        policy,
        linear_model: lm,
        dare_residual: residual,
    })
}

// ---------------------------------------------------------------------------
// PID (Ziegler-Nichols on the world model as plant)

/// The world model as a single-input plant regulating theta. The failure
/// flag is stripped every step: the tuning search needs the raw oscillation,
/// not the benchmark's absorbing failure semantics.
struct ThetaPlant<'a> {
    model: &'a WorldModel,
    start: State,
    s: State,
}

impl<'a> ThetaPlant<'a> {
    fn new(model: &'a WorldModel, start: State) -> Self {
        Self {
            model,
            start,
            s: start,
        }
    }
}

impl Plant for ThetaPlant<'_> {
    fn reset(&mut self) {
        self.s = self.start;
    }

    fn step(&mut self, control: f64) -> f64 {
        match self.model.env_step(&self.s, control.clamp(-10.0, 10.0)) {
            Ok((mut next, _)) => {
                next.failed = false;
                self.s = next;
                self.s.theta
            }
            Err(_) => f64::NAN,
        }
    }

    fn initial_output(&self) -> f64 {
        self.start.theta
    }
}

/// The world model with the already-tuned theta PID active; the external
/// control input is added to its output and the plant reports rho.
struct RhoPlant<'a> {
    model: &'a WorldModel,
    theta_pid: PidPolicy,
    ctrl: PidController,
    start: State,
    s: State,
}

impl<'a> RhoPlant<'a> {
    fn new(model: &'a WorldModel, theta_pid: PidPolicy, start: State) -> Self {
        let ctrl = PidController::new(theta_pid.clone());
        Self {
            model,
            theta_pid,
            ctrl,
            start,
            s: start,
        }
    }
}

impl Plant for RhoPlant<'_> {
    fn reset(&mut self) {
        self.ctrl = PidController::new(self.theta_pid.clone());
        self.s = self.start;
    }

    fn step(&mut self, control: f64) -> f64 {
        let stabilizer = self.ctrl.eval_errors(-self.s.theta, 0.0);
        let force = (stabilizer + control).clamp(-10.0, 10.0);
        match self.model.env_step(&self.s, force) {
            Ok((mut next, _)) => {
                next.failed = false;
                self.s = next;
                self.s.rho
            }
            Err(_) => f64::NAN,
        }
    }

    fn initial_output(&self) -> f64 {
        self.start.rho
    }
}

#[derive(Debug, Clone)]
pub struct PidReport {
    pub policy: PidPolicy,
    pub theta_critical: CriticalPoint,
    pub rho_critical: CriticalPoint,
}

pub fn synth_pid(model: &WorldModel, cfg: &ExperimentConfig) -> Result<PidReport> {
    let dt = cfg.cartpole.dt;
    let pid = &cfg.pid;

    let theta_search = CriticalSearchConfig {
        gain_lo: 0.0,
        gain_hi: pick_far(pid.theta_gain_range),
        ..CriticalSearchConfig::default()
    };
    let mut theta_plant = ThetaPlant::new(model, State::new(0.05, 0.0, 0.0, 0.0));
    let theta_cp = classical::find_critical(&mut theta_plant, &theta_search)?;
    let (kp, ki, kd) = classical::zn_gains(&theta_cp);
    let theta_channel = PidChannel {
        kp,
        ki,
        kd,
        window: pid.theta_window,
    };
    let theta_only = PidPolicy {
        theta: theta_channel.clone(),
        rho: PidChannel {
            kp: 0.0,
            ki: 0.0,
            kd: 0.0,
            window: pid.rho_window,
        },
        mix_theta: 1.0,
        mix_rho: 0.0,
        dt,
    };

    let rho_search = CriticalSearchConfig {
        gain_lo: 0.0,
        gain_hi: pick_far(pid.rho_gain_range),
        ..CriticalSearchConfig::default()
    };
    let mut rho_plant = RhoPlant::new(model, theta_only, State::new(0.0, 0.0, 0.3, 0.0));
    let rho_cp = classical::find_critical(&mut rho_plant, &rho_search)?;
    let (rkp, rki, rkd) = classical::zn_gains(&rho_cp);
    let policy = PidPolicy {
        theta: theta_channel,
        rho: PidChannel {
            kp: rkp,
            ki: rki,
            kd: rkd,
            window: pid.rho_window,
        },
        mix_theta: pid.mix_theta,
        mix_rho: pid.mix_rho,
        dt,
    };
    Ok(PidReport {
        policy,
        theta_critical: theta_cp,
        rho_critical: rho_cp,
    })
}

/// Signed bound of larger magnitude; the search walks outward from zero.
fn pick_far(range: (f64, f64)) -> f64 {
    if range.0.abs() > range.1.abs() {
        range.0
    } else {
        range.1
    }
}

// ---------------------------------------------------------------------------
// Population methods

/// Ensure the tree has a tanh defuzzification root, wrapping when needed.
pub fn fgprl_policy(tree: &ExprTree) -> TreePolicy {
    let has_tanh_root = matches!(tree.nodes().first(), Some(Op::Tanh));
    let tree = if has_tanh_root {
        tree.clone()
    } else {
        let mut nodes = Vec::with_capacity(tree.nodes().len() + 1);
        nodes.push(Op::Tanh);
        nodes.extend_from_slice(tree.nodes());
        ExprTree::new(nodes).expect("tanh wrap preserves arity")
    };
    TreePolicy::fuzzy(tree)
}

fn tree_objective<'a>(
    model: &'a WorldModel,
    states: &'a [State],
    t: usize,
    gamma: f64,
    fuzzy: bool,
) -> impl Fn(&ExprTree) -> f64 + 'a {
    move |tree: &ExprTree| {
        let policy = if fuzzy {
            Policy::Tree(fgprl_policy(tree))
        } else {
            Policy::Tree(TreePolicy::algebraic(tree.clone()))
        };
        surrogate::penalty(model, &policy, states, t, gamma).unwrap_or(f64::INFINITY)
    }
}

pub struct GpReport {
    pub policy: TreePolicy,
    pub model_penalty: f64,
    pub front: ParetoFront,
}

pub fn synth_gprl(
    model: &WorldModel,
    cfg: &ExperimentConfig,
    test_states: &[State],
    seed: u64,
    fuzzy: bool,
) -> Result<GpReport> {
    let set = if fuzzy {
        FunctionSet::Fuzzy
    } else {
        FunctionSet::Algebraic
    };
    let gp_cfg: GpConfig = cfg.gp.gp_config(set, seed);
    let objective = tree_objective(model, test_states, cfg.horizon, cfg.gamma, fuzzy);
    let result = gp::evolve(&objective, &gp_cfg)?;
    let policy = if fuzzy {
        fgprl_policy(&result.best)
    } else {
        TreePolicy::algebraic(result.best.clone())
    };
    Ok(GpReport {
        policy,
        model_penalty: result.best_score,
        front: result.front,
    })
}

// ---------------------------------------------------------------------------
// Dispatch

/// Run one synthesis. `seed` is the per-run stream seed; the batch and
/// model are shared across methods per the offline-batch protocol.
pub fn synthesize(
    method: Method,
    batch: &Batch,
    model: &WorldModel,
    cfg: &ExperimentConfig,
    test_states: &[State],
    seed: u64,
) -> Result<MethodOutput> {
    let t = cfg.horizon;
    let gamma = cfg.gamma;
    match method {
        Method::Lqr => {
            let r = synth_lqr(batch, cfg)?;
            let summary = format!(
                "lqr gains: a = {}\ndare residual: {:.3e}\nidentification residual: {:.3e}",
                r.policy.equation(),
                r.dare_residual,
                r.linear_model.residual
            );
            Ok(MethodOutput {
                policy: Some(Policy::Linear(r.policy)),
                psop: None,
                front: None,
                nfq: None,
                summary,
            })
        }
        Method::Pid => {
            let r = synth_pid(model, cfg)?;
            let summary = format!(
                "theta critical: k_C = {:.4}, p_C = {:.1} steps\nrho critical: k_C = {:.4}, p_C = {:.1} steps\n{}",
                r.theta_critical.k_c,
                r.theta_critical.p_c,
                r.rho_critical.k_c,
                r.rho_critical.p_c,
                r.policy.describe()
            );
            Ok(MethodOutput {
                policy: Some(Policy::Pid(r.policy)),
                psop: None,
                front: None,
                nfq: None,
                summary,
            })
        }
        Method::Nfq => {
            let nfq_cfg = cfg.nfq.nfq_config(gamma, seed);
            let scorer = |p: &crate::policies::GreedyQPolicy| {
                surrogate::penalty(model, &Policy::GreedyQ(p.clone()), test_states, t, gamma)
            };
            let run = nfq::fqi_run(batch, &nfq_cfg, Some(&scorer))?;
            let mut summary = String::from("nfq checkpoint penalties (model):\n");
            for c in &run.checkpoints {
                summary.push_str(&format!(
                    "  iteration {}: {:.4}{}\n",
                    c.iteration,
                    c.score.unwrap_or(f64::NAN),
                    if c.iteration == run.selected { "  <- selected" } else { "" }
                ));
            }
            let policy = run.policy(nfq::CheckpointProtocol::Selected).clone();
            Ok(MethodOutput {
                policy: Some(Policy::GreedyQ(policy)),
                psop: None,
                front: None,
                nfq: Some(run),
                summary,
            })
        }
        Method::Psop => {
            let spec = PsopSpec {
                horizon: cfg.psop.horizon,
                swarm_size: cfg.psop.swarm_size,
                iterations: cfg.psop.iterations,
                gamma,
                seed,
            };
            let summary = format!(
                "psop planner: horizon {}, swarm {}, iterations {}",
                spec.horizon, spec.swarm_size, spec.iterations
            );
            Ok(MethodOutput {
                policy: None,
                psop: Some(spec),
                front: None,
                nfq: None,
                summary,
            })
        }
        Method::Psonn => {
            let swarm = cfg.pso.swarm_config(Vec::new(), seed);
            let (policy, result) = pso::train_psonn(model, test_states, t, gamma, &swarm)?;
            let summary = format!(
                "psonn best model return: {:.4} (penalty {:.4})",
                result.best_score, -result.best_score
            );
            Ok(MethodOutput {
                policy: Some(Policy::Neural(policy)),
                psop: None,
                front: None,
                nfq: None,
                summary,
            })
        }
        Method::Fpsrl => {
            let swarm = SwarmConfig {
                swarm_size: cfg.fpsrl.swarm_size,
                iterations: cfg.fpsrl.iterations,
                ..SwarmConfig::with_bounds(vec![(-1.0, 1.0)], seed)
            };
            let (policy, result) =
                pso::train_fpsrl(model, cfg.fpsrl.rules, batch, test_states, t, gamma, &swarm)?;
            let summary = format!(
                "fpsrl best model penalty: {:.4}\n{}",
                -result.best_score,
                policy.describe()
            );
            Ok(MethodOutput {
                policy: Some(Policy::Fuzzy(policy)),
                psop: None,
                front: None,
                nfq: None,
                summary,
            })
        }
        Method::Gprl | Method::Fgprl => {
            let fuzzy = method == Method::Fgprl;
            let r = synth_gprl(model, cfg, test_states, seed, fuzzy)?;
            let summary = format!(
                "{} best model penalty: {:.4}\nequation: a = {}{}\nfront size: {}",
                method.name(),
                r.model_penalty,
                if fuzzy { "10 * " } else { "" },
                r.policy.tree.to_infix(),
                r.front.entries.len()
            );
            Ok(MethodOutput {
                policy: Some(Policy::Tree(r.policy)),
                psop: None,
                front: Some(r.front),
                nfq: None,
                summary,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Penalty of a synthesized output on either evaluator. PSO-P always plans
/// on the model, whichever environment it is scored on.
pub fn evaluate_output(
    output: &MethodOutput,
    model: &WorldModel,
    env: &dyn Env,
    test_states: &[State],
    t: usize,
    gamma: f64,
) -> Result<f64> {
    if let Some(policy) = &output.policy {
        return surrogate::penalty(env, policy, test_states, t, gamma);
    }
    let spec = output
        .psop
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("output carries neither policy nor planner".into()))?;
    psop_penalty(spec, model, env, test_states, t, gamma)
}

pub fn psop_penalty(
    spec: &PsopSpec,
    model: &WorldModel,
    env: &dyn Env,
    test_states: &[State],
    t: usize,
    gamma: f64,
) -> Result<f64> {
    if test_states.is_empty() {
        return Err(Error::EmptyData("test states"));
    }
    let mut total = 0.0;
    for s in test_states {
        let mut ctrl = spec.controller(model);
        total += surrogate::value_estimate(env, &mut ctrl, s, t, gamma)?;
    }
    Ok(-total / test_states.len() as f64)
}

/// True-dynamics environment matching the experiment config.
pub fn system_env(cfg: &ExperimentConfig) -> CartPole {
    CartPole {
        params: cfg.cartpole,
    }
}
