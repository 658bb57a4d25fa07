//! World model learned from the batch: four per-variable delta regressors
//! plus a one-hot reward classifier, model rollouts, average return and the
//! penalty metric.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Batch, Env, State};
use crate::error::{Error, Result};
use crate::neural::{self, Activation, Loss, Mlp, TrainConfig};
use crate::policies::Policy;

/// Reward class values in classifier output order.
pub const REWARD_CLASSES: [f64; 3] = [0.0, -0.1, -1.0];

pub fn reward_class_index(r: f64) -> usize {
    if r == 0.0 {
        0
    } else if r == -0.1 {
        1
    } else {
        2
    }
}

pub fn one_hot(r: f64) -> [f64; 3] {
    let mut v = [0.0; 3];
    v[reward_class_index(r)] = 1.0;
    v
}

/// Per-feature z-score statistics; zero-variance features fall back to an
/// identity scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for j in 0..dim {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < 1e-12 {
                    eprintln!("warning: zero-variance feature, using identity normalization");
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert_one(&self, j: usize, v: f64) -> f64 {
        v * self.std[j] + self.mean[j]
    }
}

pub const STATE_VAR_NAMES: [&str; 4] = ["theta", "theta_dot", "rho", "rho_dot"];

/// Learned environment model: next state via per-variable delta regression,
/// reward via the argmax of a 3-class softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub delta_nets: Vec<Mlp>,
    pub reward_net: Mlp,
    pub input_norm: Normalizer,
    pub delta_norm: Normalizer,
}

/// Hold-out quality numbers reported after fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelStats {
    pub delta_rmse: [f64; 4],
    pub reward_accuracy: f64,
    pub holdout_size: usize,
}

fn model_input(s: &State, force: f64) -> Vec<f64> {
    let mut v = s.as_array().to_vec();
    v.push(force);
    v
}

const DELTA_TOPOLOGY: [usize; 5] = [5, 10, 10, 10, 1];
const REWARD_TOPOLOGY: [usize; 5] = [5, 10, 10, 10, 3];

/// Fit the world model on the batch. The final 10% of the batch (before
/// shuffling) is held out for the reported statistics; normalization comes
/// from the batch only.
///
/// The delta regressors are trained on physical transitions only: rows that
/// enter the absorbing failure state have their velocities clamp-zeroed by
/// the environment, which would put a discontinuity into the regression
/// targets. Failure itself is learned by the reward classifier, whose
/// failure class makes model rollouts absorbing.
pub fn fit(batch: &Batch, cfg: &TrainConfig) -> Result<(WorldModel, ModelStats)> {
    if batch.transitions.is_empty() {
        return Err(Error::EmptyData("batch"));
    }
    let n = batch.transitions.len();
    let n_holdout = (n / 10).max(1).min(n - 1);
    let n_fit = n - n_holdout;

    let inputs_raw: Vec<Vec<f64>> = batch
        .transitions
        .iter()
        .map(|t| model_input(&t.s, t.a.0))
        .collect();
    let physical = |t: &crate::dynamics::Transition| !t.s.failed && !t.s_next.failed;
    let delta_rows: Vec<usize> = (0..n_fit)
        .filter(|&i| physical(&batch.transitions[i]))
        .collect();
    if delta_rows.is_empty() {
        return Err(Error::EmptyData("batch has no non-failure transitions"));
    }
    let deltas_raw: Vec<Vec<f64>> = delta_rows
        .iter()
        .map(|&i| {
            let t = &batch.transitions[i];
            let s = t.s.as_array();
            let sn = t.s_next.as_array();
            (0..4).map(|j| sn[j] - s[j]).collect()
        })
        .collect();
    let input_norm = Normalizer::fit(&inputs_raw[..n_fit]);
    let delta_norm = Normalizer::fit(&deltas_raw);
    let inputs: Vec<Vec<f64>> = inputs_raw.iter().map(|r| input_norm.apply(r)).collect();
    let delta_inputs: Vec<Vec<f64>> = delta_rows.iter().map(|&i| inputs[i].clone()).collect();

    let hidden = [
        Activation::Rectifier,
        Activation::Rectifier,
        Activation::Rectifier,
        Activation::Identity,
    ];
    let mut delta_nets = Vec::with_capacity(4);
    for j in 0..4 {
        let targets: Vec<Vec<f64>> = deltas_raw
            .iter()
            .map(|d| vec![(d[j] - delta_norm.mean[j]) / delta_norm.std[j]])
            .collect();
        let net = Mlp::init(&DELTA_TOPOLOGY, &hidden, cfg.seed.wrapping_add(j as u64))?;
        let (fit_net, _) = neural::train(&net, &delta_inputs, &targets, &TrainConfig {
            seed: cfg.seed.wrapping_add(100 + j as u64),
            ..cfg.clone()
        })?;
        delta_nets.push(fit_net);
    }

    let reward_targets: Vec<Vec<f64>> = batch
        .transitions
        .iter()
        .map(|t| one_hot(t.r).to_vec())
        .collect();
    let softmax_head = [
        Activation::Rectifier,
        Activation::Rectifier,
        Activation::Rectifier,
        Activation::Softmax,
    ];
    let rnet = Mlp::init(&REWARD_TOPOLOGY, &softmax_head, cfg.seed.wrapping_add(4))?;
    let (reward_net, _) = neural::train(
        &rnet,
        &inputs[..n_fit],
        &reward_targets[..n_fit],
        &TrainConfig {
            loss: Loss::CrossEntropy,
            seed: cfg.seed.wrapping_add(104),
            ..cfg.clone()
        },
    )?;

    let model = WorldModel {
        delta_nets,
        reward_net,
        input_norm,
        delta_norm,
    };

    // Hold-out statistics: delta RMSE over physical transitions (the clamped
    // failure rows are scored by the reward classifier instead), reward
    // accuracy over everything.
    let mut sq = [0.0; 4];
    let mut n_physical = 0usize;
    let mut correct = 0usize;
    for i in n_fit..n {
        let t = &batch.transitions[i];
        let (pred, r) = model.predict(&t.s, t.a.0)?;
        if physical(t) {
            let ps = pred.as_array();
            let ts = t.s_next.as_array();
            for j in 0..4 {
                let d = ps[j] - ts[j];
                sq[j] += d * d;
            }
            n_physical += 1;
        }
        if r == t.r {
            correct += 1;
        }
    }
    let mut delta_rmse = [0.0; 4];
    for j in 0..4 {
        delta_rmse[j] = (sq[j] / n_physical.max(1) as f64).sqrt();
    }
    let stats = ModelStats {
        delta_rmse,
        reward_accuracy: correct as f64 / n_holdout as f64,
        holdout_size: n_holdout,
    };
    Ok((model, stats))
}

impl WorldModel {
    /// Predicted successor and reward. A predicted failure class makes the
    /// model rollout absorbing, mirroring the true environment.
    pub fn predict(&self, s: &State, force: f64) -> Result<(State, f64)> {
        if !s.is_finite() || !force.is_finite() {
            return Err(Error::NonFinite("world model input"));
        }
        if s.failed {
            return Ok((*s, -1.0));
        }
        let x = self.input_norm.apply(&model_input(s, force));
        let cur = s.as_array();
        let mut next = [0.0; 4];
        for j in 0..4 {
            let out = self.delta_nets[j].forward(&x)?;
            next[j] = cur[j] + self.delta_norm.invert_one(j, out[0]);
        }
        let probs = self.reward_net.forward(&x)?;
        let class = argmax(&probs);
        let r = REWARD_CLASSES[class];
        let mut state = State::new(next[0], next[1], next[2], next[3]);
        if class == 2 {
            state.failed = true;
        }
        Ok((state, r))
    }
}

impl Env for WorldModel {
    fn env_step(&self, s: &State, force: f64) -> Result<(State, f64)> {
        self.predict(s, force)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Discounted return of a closed-loop rollout of length `t` on any
/// environment (model or true dynamics).
pub fn value_estimate(
    env: &dyn Env,
    ctrl: &mut dyn crate::policies::Controller,
    s0: &State,
    t: usize,
    gamma: f64,
) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if !(0.0 < gamma && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let mut s = *s0;
    let mut value = 0.0;
    let mut discount = 1.0;
    for k in 0..t {
        let a = ctrl.act(&s);
        if !a.is_finite() {
            return Err(Error::RolloutAborted(format!("non-finite policy output at step {k}")));
        }
        let (next, r) = env.env_step(&s, a)?;
        value += discount * r;
        discount *= gamma;
        s = next;
    }
    Ok(value)
}

/// Mean discounted return of the policy over the test states.
pub fn avg_return(
    env: &dyn Env,
    policy: &Policy,
    test_states: &[State],
    t: usize,
    gamma: f64,
) -> Result<f64> {
    if test_states.is_empty() {
        return Err(Error::EmptyData("test states"));
    }
    let mut total = 0.0;
    for s in test_states {
        let mut ctrl = policy.controller();
        total += value_estimate(env, &mut *ctrl, s, t, gamma)?;
    }
    Ok(total / test_states.len() as f64)
}

/// Negated average return; the comparison metric of the toolkit.
pub fn penalty(
    env: &dyn Env,
    policy: &Policy,
    test_states: &[State],
    t: usize,
    gamma: f64,
) -> Result<f64> {
    Ok(-avg_return(env, policy, test_states, t, gamma)?)
}

/// The shared deterministic 100-state evaluation set.
pub fn default_test_states() -> Vec<State> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7e57_57a7);
    (0..100)
        .map(|_| {
            State::new(
                rng.gen_range(-0.3..=0.3),
                rng.gen_range(-0.5..=0.5),
                rng.gen_range(-1.5..=1.5),
                rng.gen_range(-0.5..=0.5),
            )
        })
        .collect()
}
