//! Particle swarm optimization core and its three consumers: the PSO-P
//! receding-horizon planner, PSONN neural-policy training and FPSRL fuzzy
//! policy training.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Batch, Env, State};
use crate::error::{Error, Result};
use crate::policies::{
    clamp_action, Controller, FuzzyPolicy, NeuralPolicy, Policy, ACTION_LIMIT,
};
use crate::surrogate::{self, WorldModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub swarm_size: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity clamp as a fraction of each dimension's box width.
    pub velocity_clamp: f64,
    pub bounds: Vec<(f64, f64)>,
    pub iterations: usize,
    pub seed: u64,
}

impl SwarmConfig {
    /// Constriction-equivalent defaults on a given box.
    pub fn with_bounds(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            swarm_size: 30,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            velocity_clamp: 0.2,
            bounds,
            iterations: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::InvalidArgument("swarm size must be >= 2".into()));
        }
        if self.bounds.iter().any(|(lo, hi)| lo >= hi) {
            return Err(Error::InvalidArgument(
                "each bound must satisfy lower < upper".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_score: f64,
    /// Global best score after each iteration (index 0 = initialization).
    pub history: Vec<f64>,
}

struct Particle {
    position: Vec<f64>,
    velocity: Vec<f64>,
    best_position: Vec<f64>,
    best_score: f64,
}

fn score_of(objective: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    let s = objective(x);
    if s.is_finite() {
        s
    } else {
        f64::NEG_INFINITY
    }
}

/// Global-best PSO maximizing the objective over the configured box.
/// `seed_positions` are clamped into the box and replace the random
/// initialization of the first particles.
pub fn optimize(
    objective: &dyn Fn(&[f64]) -> f64,
    cfg: &SwarmConfig,
    seed_positions: &[Vec<f64>],
) -> Result<PsoResult> {
    cfg.validate()?;
    let dim = cfg.bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vmax: Vec<f64> = cfg
        .bounds
        .iter()
        .map(|(lo, hi)| cfg.velocity_clamp * (hi - lo))
        .collect();

    let mut particles: Vec<Particle> = (0..cfg.swarm_size)
        .map(|i| {
            let position: Vec<f64> = if i < seed_positions.len() {
                seed_positions[i]
                    .iter()
                    .zip(&cfg.bounds)
                    .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                    .collect()
            } else {
                cfg.bounds
                    .iter()
                    .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
                    .collect()
            };
            let velocity = vmax.iter().map(|v| rng.gen_range(-v..=*v)).collect();
            Particle {
                position,
                velocity,
                best_position: Vec::new(),
                best_score: f64::NEG_INFINITY,
            }
        })
        .collect();

    let mut global_best = Vec::new();
    let mut global_score = f64::NEG_INFINITY;
    for p in particles.iter_mut() {
        let s = score_of(objective, &p.position);
        p.best_score = s;
        p.best_position = p.position.clone();
        if s > global_score {
            global_score = s;
            global_best = p.position.clone();
        }
    }
    let mut history = vec![global_score];

    for _ in 0..cfg.iterations {
        for p in particles.iter_mut() {
            for d in 0..dim {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let v = cfg.inertia * p.velocity[d]
                    + cfg.cognitive * r1 * (p.best_position[d] - p.position[d])
                    + cfg.social * r2 * (global_best[d] - p.position[d]);
                p.velocity[d] = v.clamp(-vmax[d], vmax[d]);
                let mut x = p.position[d] + p.velocity[d];
                let (lo, hi) = cfg.bounds[d];
                // reflecting boundary handling
                if x > hi {
                    x = hi - (x - hi);
                    p.velocity[d] = -p.velocity[d];
                }
                if x < lo {
                    x = lo + (lo - x);
                    p.velocity[d] = -p.velocity[d];
                }
                p.position[d] = x.clamp(lo, hi);
            }
            let s = score_of(objective, &p.position);
            if s > p.best_score {
                p.best_score = s;
                p.best_position = p.position.clone();
            }
            if s > global_score {
                global_score = s;
                global_best = p.position.clone();
            }
        }
        history.push(global_score);
    }

    Ok(PsoResult {
        best_position: global_best,
        best_score: global_score,
        history,
    })
}

/// Open-loop action-sequence planning on the world model: maximize the
/// discounted model return of the sequence from `s`.
pub fn plan(
    model: &WorldModel,
    s: &State,
    horizon: usize,
    gamma: f64,
    cfg: &SwarmConfig,
) -> Result<(Vec<f64>, f64)> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("planning horizon must be >= 1".into()));
    }
    let mut cfg = cfg.clone();
    cfg.bounds = vec![(-ACTION_LIMIT, ACTION_LIMIT); horizon];
    let objective = |x: &[f64]| sequence_return(model, s, x, gamma).unwrap_or(f64::NEG_INFINITY);
    let result = optimize(&objective, &cfg, &[vec![0.0; horizon]])?;
    Ok((result.best_position, result.best_score))
}

/// Discounted model return of a fixed action sequence.
pub fn sequence_return(model: &WorldModel, s0: &State, actions: &[f64], gamma: f64) -> Result<f64> {
    let mut s = *s0;
    let mut value = 0.0;
    let mut discount = 1.0;
    for a in actions {
        let (next, r) = model.env_step(&s, clamp_action(*a))?;
        value += discount * r;
        discount *= gamma;
        s = next;
    }
    Ok(value)
}

/// Receding-horizon controller: re-plan on the model each step and apply
/// only the first action of the best sequence.
pub struct PsopController<'a> {
    model: &'a WorldModel,
    horizon: usize,
    gamma: f64,
    cfg: SwarmConfig,
    step: u64,
}

impl<'a> PsopController<'a> {
    pub fn new(model: &'a WorldModel, horizon: usize, gamma: f64, cfg: SwarmConfig) -> Self {
        Self {
            model,
            horizon,
            gamma,
            cfg,
            step: 0,
        }
    }
}

impl Controller for PsopController<'_> {
    fn act(&mut self, s: &State) -> f64 {
        let mut cfg = self.cfg.clone();
        cfg.seed = self
            .cfg
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(self.step);
        self.step += 1;
        match plan(self.model, s, self.horizon, self.gamma, &cfg) {
            Ok((seq, _)) => seq[0],
            Err(_) => 0.0,
        }
    }
}

/// PSO over the flattened weights of the fixed-topology neural policy,
/// maximizing the average model return over the test states.
pub fn train_psonn(
    model: &WorldModel,
    test_states: &[State],
    horizon: usize,
    gamma: f64,
    cfg: &SwarmConfig,
) -> Result<(NeuralPolicy, PsoResult)> {
    let template = NeuralPolicy::psonn_topology(0)?;
    let dim = template.net.num_params();
    let mut cfg = cfg.clone();
    if cfg.bounds.len() != dim {
        cfg.bounds = vec![(-5.0, 5.0); dim];
    }
    let objective = |x: &[f64]| {
        let mut p = template.clone();
        if p.net.set_params(x).is_err() {
            return f64::NEG_INFINITY;
        }
        surrogate::avg_return(model, &Policy::Neural(p), test_states, horizon, gamma)
            .unwrap_or(f64::NEG_INFINITY)
    };
    // the zero weight vector is the do-nothing baseline
    let result = optimize(&objective, &cfg, &[vec![0.0; dim]])?;
    let mut policy = template;
    policy.net.set_params(&result.best_position)?;
    Ok((policy, result))
}

/// Default search box of the fuzzy parameter vector for a given rule count.
pub fn fpsrl_bounds(rule_count: usize) -> Vec<(f64, f64)> {
    let mut bounds = Vec::with_capacity(rule_count * 9 + 1);
    let center_bounds = [(-0.7, 0.7), (-3.0, 3.0), (-2.4, 2.4), (-3.0, 3.0)];
    for _ in 0..rule_count {
        bounds.extend_from_slice(&center_bounds);
        bounds.extend_from_slice(&[(1e-3, 10.0); 4]);
        bounds.push((-1.0, 1.0));
    }
    bounds.push((0.05, 10.0));
    bounds
}

/// PSO over the fuzzy parameter vector (dimension 9C + 1); rule centers are
/// initialized on batch states.
pub fn train_fpsrl(
    model: &WorldModel,
    rule_count: usize,
    batch: &Batch,
    test_states: &[State],
    horizon: usize,
    gamma: f64,
    cfg: &SwarmConfig,
) -> Result<(FuzzyPolicy, PsoResult)> {
    if rule_count == 0 {
        return Err(Error::InvalidArgument("rule count must be >= 1".into()));
    }
    let dim = rule_count * 9 + 1;
    let mut cfg = cfg.clone();
    if cfg.bounds.len() != dim {
        cfg.bounds = fpsrl_bounds(rule_count);
    }
    let objective = |x: &[f64]| match FuzzyPolicy::decode(x, rule_count) {
        Ok(p) => surrogate::avg_return(model, &Policy::Fuzzy(p), test_states, horizon, gamma)
            .unwrap_or(f64::NEG_INFINITY),
        Err(_) => f64::NEG_INFINITY,
    };
    // Seed positions: the do-nothing policy plus center placements sampled
    // from batch states.
    let mut seeds = vec![vec![0.0; dim]];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf52a);
    for _ in 0..(cfg.swarm_size / 2) {
        let mut x = Vec::with_capacity(dim);
        for _ in 0..rule_count {
            let t = &batch.transitions[rng.gen_range(0..batch.transitions.len())];
            x.extend_from_slice(&t.s.as_array());
            for _ in 0..4 {
                x.push(rng.gen_range(0.2..2.0));
            }
            x.push(rng.gen_range(-1.0..1.0));
        }
        x.push(rng.gen_range(0.5..3.0));
        seeds.push(x);
    }
    let result = optimize(&objective, &cfg, &seeds)?;
    let policy = FuzzyPolicy::decode(&result.best_position, rule_count)?;
    Ok((policy, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_maximization_reaches_origin() {
        let cfg = SwarmConfig {
            iterations: 200,
            ..SwarmConfig::with_bounds(vec![(-5.0, 5.0); 10], 3)
        };
        let obj = |x: &[f64]| -x.iter().map(|v| v * v).sum::<f64>();
        let r = optimize(&obj, &cfg, &[]).unwrap();
        assert!(r.best_score >= -1e-3, "best {}", r.best_score);
    }

    #[test]
    fn seeded_optimum_found_at_iteration_zero() {
        let cfg = SwarmConfig {
            iterations: 0,
            ..SwarmConfig::with_bounds(vec![(-1.0, 1.0)], 4)
        };
        let obj = |x: &[f64]| -(x[0] - 0.25).powi(2);
        let r = optimize(&obj, &cfg, &[vec![0.25]]).unwrap();
        assert_eq!(r.best_score, 0.0);
        assert_eq!(r.history.len(), 1);
    }

    #[test]
    fn determinism_and_monotone_history() {
        let cfg = SwarmConfig {
            iterations: 50,
            ..SwarmConfig::with_bounds(vec![(-2.0, 2.0); 3], 9)
        };
        let obj = |x: &[f64]| -(x[0] - 1.0).powi(2) - x[1].powi(2) - (x[2] + 0.5).powi(2);
        let a = optimize(&obj, &cfg, &[]).unwrap();
        let b = optimize(&obj, &cfg, &[]).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_position, b.best_position);
        for w in a.history.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn non_finite_objectives_are_skipped() {
        let cfg = SwarmConfig {
            iterations: 30,
            ..SwarmConfig::with_bounds(vec![(-1.0, 1.0)], 12)
        };
        let obj = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                -(x[0] - 0.5).powi(2)
            }
        };
        let r = optimize(&obj, &cfg, &[]).unwrap();
        assert!(r.best_score > -0.05);
    }

    #[test]
    fn positions_respect_bounds() {
        let cfg = SwarmConfig {
            iterations: 40,
            ..SwarmConfig::with_bounds(vec![(-0.3, 0.9); 4], 21)
        };
        let obj = |x: &[f64]| {
            for v in x {
                assert!((-0.3..=0.9).contains(v), "position {v} out of bounds");
            }
            x.iter().sum::<f64>()
        };
        let r = optimize(&obj, &cfg, &[]).unwrap();
        assert!(r.best_score <= 4.0 * 0.9 + 1e-12);
    }

    #[test]
    fn psonn_weight_dimension_matches_topology() {
        let p = NeuralPolicy::psonn_topology(0).unwrap();
        assert_eq!(p.net.num_params(), 4 * 8 + 8 + 8 + 1);
    }

    #[test]
    fn fpsrl_dimension_layout() {
        assert_eq!(fpsrl_bounds(2).len(), 19);
        assert_eq!(fpsrl_bounds(4).len(), 37);
    }
}
