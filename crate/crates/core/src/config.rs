//! Experiment configuration: one TOML file drives the whole pipeline, every
//! field has a default so an empty file is valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classical::LqrWeights;
use crate::dynamics::CartPoleParams;
use crate::error::{Error, Result};
use crate::gp::{FunctionSet, GpConfig};
use crate::neural::TrainConfig;
use crate::nfq::{NfqConfig, NFQ_ACTIONS};
use crate::pso::SwarmConfig;

fn default_gamma() -> f64 {
    0.97
}
fn default_horizon() -> usize {
    100
}
fn default_batch_size() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub gamma: f64,
    pub horizon: usize,
    pub batch_size: usize,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Optional CSV of evaluation start states; the built-in 100-state set
    /// is used when absent.
    pub test_states: Option<PathBuf>,
    pub cartpole: CartPoleParams,
    pub surrogate: TrainConfig,
    pub lqr: LqrWeights,
    pub pid: PidSection,
    pub pso: PsoSection,
    pub psop: PsopSection,
    pub fpsrl: FpsrlSection,
    pub gp: GpSection,
    pub nfq: NfqSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            horizon: default_horizon(),
            batch_size: default_batch_size(),
            seed: 0,
            test_states: None,
            cartpole: CartPoleParams::default(),
            surrogate: TrainConfig::default(),
            lqr: LqrWeights::default(),
            pid: PidSection::default(),
            pso: PsoSection::default(),
            psop: PsopSection::default(),
            fpsrl: FpsrlSection::default(),
            gp: GpSection::default(),
            nfq: NfqSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PidSection {
    pub theta_window: usize,
    pub rho_window: usize,
    pub mix_theta: f64,
    pub mix_rho: f64,
    /// Proportional-gain search interval of the theta channel (sign included).
    pub theta_gain_range: (f64, f64),
    pub rho_gain_range: (f64, f64),
}

impl Default for PidSection {
    fn default() -> Self {
        Self {
            theta_window: 40,
            rho_window: 28,
            mix_theta: 0.95,
            mix_rho: 0.05,
            theta_gain_range: (-80.0, -1.0),
            rho_gain_range: (-80.0, -1.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoSection {
    pub swarm_size: usize,
    pub iterations: usize,
}

impl Default for PsoSection {
    fn default() -> Self {
        Self {
            swarm_size: 30,
            iterations: 100,
        }
    }
}

impl PsoSection {
    pub fn swarm_config(&self, bounds: Vec<(f64, f64)>, seed: u64) -> SwarmConfig {
        SwarmConfig {
            swarm_size: self.swarm_size,
            iterations: self.iterations,
            ..SwarmConfig::with_bounds(bounds, seed)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PsopSection {
    /// Planning horizon of the receding-horizon controller.
    pub horizon: usize,
    pub swarm_size: usize,
    pub iterations: usize,
}

impl Default for PsopSection {
    fn default() -> Self {
        Self {
            horizon: 10,
            swarm_size: 20,
            iterations: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FpsrlSection {
    pub rules: usize,
    pub swarm_size: usize,
    pub iterations: usize,
}

impl Default for FpsrlSection {
    fn default() -> Self {
        Self {
            rules: 2,
            swarm_size: 50,
            iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GpSection {
    pub population: usize,
    pub generations: usize,
    pub max_depth: usize,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub const_range: (f64, f64),
}

impl Default for GpSection {
    fn default() -> Self {
        Self {
            population: 150,
            generations: 30,
            max_depth: 6,
            tournament_size: 4,
            crossover_prob: 0.9,
            mutation_prob: 0.2,
            const_range: (-10.0, 10.0),
        }
    }
}

impl GpSection {
    pub fn gp_config(&self, function_set: FunctionSet, seed: u64) -> GpConfig {
        GpConfig {
            population: self.population,
            generations: self.generations,
            max_depth: self.max_depth,
            tournament_size: self.tournament_size,
            crossover_prob: self.crossover_prob,
            mutation_prob: self.mutation_prob,
            const_range: self.const_range,
            function_set,
            patience: usize::MAX,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NfqSection {
    pub iterations: usize,
    pub epochs: usize,
}

impl Default for NfqSection {
    fn default() -> Self {
        Self {
            iterations: 15,
            epochs: 60,
        }
    }
}

impl NfqSection {
    pub fn nfq_config(&self, gamma: f64, seed: u64) -> NfqConfig {
        let base = NfqConfig::default();
        NfqConfig {
            iterations: self.iterations,
            gamma,
            actions: NFQ_ACTIONS.to_vec(),
            train: TrainConfig {
                epochs: self.epochs,
                seed,
                ..base.train
            },
            seed,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.cartpole.dt <= 0.0 {
            return Err(Error::Config("cartpole.dt must be positive".into()));
        }
        self.lqr
            .validate()
            .map_err(|e| Error::Config(format!("lqr: {e}")))?;
        Ok(())
    }
}

/// Seed streams of the pipeline stages, fanned out from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Model,
    Method(&'static str, u64),
}

/// SplitMix-style mixing so stage streams never collide for nearby seeds.
pub fn fan_out(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    match stage {
        Stage::Data => fan_out(master, 1),
        Stage::Model => fan_out(master, 2),
        Stage::Method(name, run) => {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
            fan_out(master, h ^ run.wrapping_add(3))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.gamma, 0.97);
        assert_eq!(cfg.horizon, 100);
        assert_eq!(cfg.batch_size, 10_000);
        assert_eq!(cfg.fpsrl.rules, 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_section_overrides() {
        let cfg: ExperimentConfig = toml::from_str(
            "gamma = 0.9\n[gp]\npopulation = 40\n[cartpole]\ndt = 0.05\n",
        )
        .unwrap();
        assert_eq!(cfg.gamma, 0.9);
        assert_eq!(cfg.gp.population, 40);
        assert_eq!(cfg.gp.generations, GpSection::default().generations);
        assert_eq!(cfg.cartpole.dt, 0.05);
        assert_eq!(cfg.cartpole.gravity, 9.8);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.gamma = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.horizon = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.gamma, cfg.gamma);
        assert_eq!(back.gp.population, cfg.gp.population);
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let a = stage_seed(7, Stage::Data);
        let b = stage_seed(7, Stage::Model);
        let c = stage_seed(7, Stage::Method("gprl", 0));
        let d = stage_seed(7, Stage::Method("gprl", 1));
        let e = stage_seed(7, Stage::Method("fgprl", 0));
        let all = [a, b, c, d, e];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_eq!(stage_seed(7, Stage::Data), a);
        assert_ne!(stage_seed(8, Stage::Data), a);
    }
}
