//! Neural fitted Q iteration on the transition batch: each iteration
//! regresses a fresh Q network onto one-step Bellman targets built from the
//! previous iterate, with no bootstrapping through terminal transitions.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Batch, State};
use crate::error::{Error, Result};
use crate::neural::{self, Activation, Loss, Mlp, TrainConfig};
use crate::policies::GreedyQPolicy;

/// Discrete action set of the Q learner.
pub const NFQ_ACTIONS: [f64; 3] = [-10.0, 0.0, 10.0];
/// Q network shape: (state, action) in, scalar value out.
pub const Q_TOPOLOGY: [usize; 4] = [5, 20, 20, 1];

pub fn q_input(s: &State, a: f64) -> [f64; 5] {
    let x = s.as_array();
    [x[0], x[1], x[2], x[3], a]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NfqConfig {
    pub iterations: usize,
    pub gamma: f64,
    pub actions: Vec<f64>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for NfqConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            gamma: 0.97,
            actions: NFQ_ACTIONS.to_vec(),
            train: TrainConfig {
                epochs: 100,
                loss: Loss::SquaredError,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

/// One-step Bellman targets over the batch. `q = None` means the zero
/// initial iterate; transitions into failed states get no bootstrap term.
pub fn bellman_targets(batch: &Batch, q: Option<&GreedyQPolicy>, gamma: f64) -> Vec<f64> {
    batch
        .transitions
        .iter()
        .map(|t| {
            if t.s_next.failed {
                return t.r;
            }
            let bootstrap = match q {
                None => 0.0,
                Some(q) => q
                    .actions
                    .iter()
                    .map(|a| q.q_value(&t.s_next, *a))
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            t.r + gamma * bootstrap
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NfqCheckpoint {
    pub iteration: usize,
    pub policy: GreedyQPolicy,
    /// Model penalty of the greedy policy, when a scorer was supplied.
    pub score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NfqRun {
    pub checkpoints: Vec<NfqCheckpoint>,
    /// Index of the lowest-scoring checkpoint (equals `last` without a scorer).
    pub selected: usize,
    pub last: usize,
}

/// Checkpoint choice when turning a run into one policy: the final iterate,
/// or the iterate the model evaluation scored best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointProtocol {
    Last,
    Selected,
}

impl NfqRun {
    pub fn policy(&self, protocol: CheckpointProtocol) -> &GreedyQPolicy {
        let i = match protocol {
            CheckpointProtocol::Last => self.last,
            CheckpointProtocol::Selected => self.selected,
        };
        &self.checkpoints[i].policy
    }
}

/// Run fitted Q iteration; each iteration trains a freshly initialized
/// network. The optional scorer assigns each checkpoint a penalty (lower is
/// better) used by the `Selected` protocol.
pub fn fqi_run(
    batch: &Batch,
    cfg: &NfqConfig,
    scorer: Option<&dyn Fn(&GreedyQPolicy) -> Result<f64>>,
) -> Result<NfqRun> {
    if batch.transitions.is_empty() {
        return Err(Error::EmptyData("transition batch"));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("nfq needs at least one iteration".into()));
    }
    if !(0.0 < cfg.gamma && cfg.gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1), got {}",
            cfg.gamma
        )));
    }
    let inputs: Vec<Vec<f64>> = batch
        .transitions
        .iter()
        .map(|t| q_input(&t.s, t.a.0).to_vec())
        .collect();

    let activations = [Activation::Rectifier, Activation::Rectifier, Activation::Identity];
    let mut checkpoints: Vec<NfqCheckpoint> = Vec::with_capacity(cfg.iterations);
    let mut current: Option<GreedyQPolicy> = None;
    for k in 0..cfg.iterations {
        let targets: Vec<Vec<f64>> = bellman_targets(batch, current.as_ref(), cfg.gamma)
            .into_iter()
            .map(|t| vec![t])
            .collect();
        let init = Mlp::init(&Q_TOPOLOGY, &activations, cfg.seed.wrapping_add(k as u64))?;
        let train_cfg = TrainConfig {
            seed: cfg.train.seed.wrapping_add(k as u64),
            ..cfg.train.clone()
        };
        let (net, _) = neural::train(&init, &inputs, &targets, &train_cfg)?;
        let policy = GreedyQPolicy::new(net, cfg.actions.clone())?;
        let score = match scorer {
            Some(f) => Some(f(&policy)?),
            None => None,
        };
        checkpoints.push(NfqCheckpoint {
            iteration: k,
            policy: policy.clone(),
            score,
        });
        current = Some(policy);
    }

    let last = checkpoints.len() - 1;
    let mut selected = last;
    for (i, c) in checkpoints.iter().enumerate() {
        if let (Some(s), Some(best)) = (c.score, checkpoints[selected].score) {
            if s < best {
                selected = i;
            }
        }
    }
    Ok(NfqRun {
        checkpoints,
        selected,
        last,
    })
}

/// Dense Q table over indexed states and actions; an exact reference
/// implementation of the fitted Q update for small discrete problems.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub values: Vec<Vec<f64>>,
}

/// (state, action, next state, reward, terminal)
pub type DiscreteTransition = (usize, usize, usize, f64, bool);

impl TabularQ {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            values: vec![vec![0.0; n_actions]; n_states],
        }
    }

    pub fn max_q(&self, s: usize) -> f64 {
        self.values[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// One synchronous fitted Q sweep over the transition set.
    pub fn fqi_sweep(&self, transitions: &[DiscreteTransition], gamma: f64) -> Self {
        let mut next = self.clone();
        for &(s, a, s2, r, terminal) in transitions {
            next.values[s][a] = if terminal { r } else { r + gamma * self.max_q(s2) };
        }
        next
    }
}
