//! File formats of the pipeline artifacts: transition batches (CSV plus a
//! JSON sidecar), world-model bundles, test-state sets, trajectories and
//! Pareto fronts. All writes go through a temp file and an atomic rename.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, Batch, CartPoleParams, State, Transition};
use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::surrogate::{ModelStats, Normalizer, WorldModel};

pub const BATCH_HEADER: &str = "theta,theta_dot,rho,rho_dot,action,theta_next,theta_dot_next,rho_next,rho_dot_next,reward,failed_next";

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Generation metadata stored next to the batch CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSidecar {
    pub seed: u64,
    pub exploration: String,
    pub dt: f64,
    pub theta_limit: f64,
    pub rho_limit: f64,
    pub force_limit: f64,
    pub n: usize,
}

pub fn sidecar_path(batch_path: &Path) -> PathBuf {
    batch_path.with_extension("json")
}

pub fn write_batch(path: &Path, batch: &Batch, params: &CartPoleParams) -> Result<()> {
    let mut out = String::with_capacity(batch.transitions.len() * 64);
    out.push_str(BATCH_HEADER);
    out.push('\n');
    for t in &batch.transitions {
        let s = t.s.as_array();
        let n = t.s_next.as_array();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            s[0],
            s[1],
            s[2],
            s[3],
            t.a.0,
            n[0],
            n[1],
            n[2],
            n[3],
            t.r,
            u8::from(t.s_next.failed)
        ));
    }
    atomic_write(path, out.as_bytes())?;
    let sidecar = BatchSidecar {
        seed: batch.seed,
        exploration: batch.meta.clone(),
        dt: params.dt,
        theta_limit: params.theta_limit,
        rho_limit: params.rho_limit,
        force_limit: params.force_limit,
        n: batch.transitions.len(),
    };
    atomic_write(
        &sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    Ok(())
}

pub fn read_batch(path: &Path) -> Result<Batch> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut transitions = Vec::new();
    for record in rdr.records() {
        let rec = record?;
        if rec.len() != 11 {
            return Err(Error::Dimension {
                expected: 11,
                got: rec.len(),
                context: "batch CSV columns",
            });
        }
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse {
                offset: i,
                message: format!("invalid number '{}' in batch row", &rec[i]),
            })
        };
        let mut s_next = State::new(f(5)?, f(6)?, f(7)?, f(8)?);
        let failed: u8 = rec[10].parse().map_err(|_| Error::Parse {
            offset: 10,
            message: format!("invalid failed flag '{}'", &rec[10]),
        })?;
        s_next.failed = failed != 0;
        transitions.push(Transition {
            s: State::new(f(0)?, f(1)?, f(2)?, f(3)?),
            a: Action(f(4)?),
            s_next,
            r: f(9)?,
        });
    }
    if transitions.is_empty() {
        return Err(Error::EmptyData("batch CSV"));
    }
    let sidecar = sidecar_path(path);
    let (seed, meta) = if sidecar.exists() {
        let sc: BatchSidecar = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
        (sc.seed, sc.exploration)
    } else {
        (0, String::new())
    };
    Ok(Batch {
        transitions,
        seed,
        meta,
    })
}

const DELTA_FILES: [&str; 4] = [
    "delta_theta.json",
    "delta_theta_dot.json",
    "delta_rho.json",
    "delta_rho_dot.json",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NormBundle {
    input: Normalizer,
    delta: Normalizer,
}

/// Persist the model as a directory bundle: one JSON per network, the
/// normalization stats and the hold-out statistics.
pub fn write_world_model(dir: &Path, model: &WorldModel, stats: &ModelStats) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, net) in DELTA_FILES.iter().zip(&model.delta_nets) {
        atomic_write(&dir.join(name), serde_json::to_string_pretty(net)?.as_bytes())?;
    }
    atomic_write(
        &dir.join("reward.json"),
        serde_json::to_string_pretty(&model.reward_net)?.as_bytes(),
    )?;
    let norm = NormBundle {
        input: model.input_norm.clone(),
        delta: model.delta_norm.clone(),
    };
    atomic_write(
        &dir.join("normalization.json"),
        serde_json::to_string_pretty(&norm)?.as_bytes(),
    )?;
    atomic_write(
        &dir.join("stats.json"),
        serde_json::to_string_pretty(stats)?.as_bytes(),
    )?;
    Ok(())
}

pub fn read_world_model(dir: &Path) -> Result<(WorldModel, ModelStats)> {
    let read_net = |name: &str| -> Result<Mlp> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(name))?)?)
    };
    let mut delta_nets = Vec::with_capacity(4);
    for name in DELTA_FILES {
        delta_nets.push(read_net(name)?);
    }
    let reward_net = read_net("reward.json")?;
    let norm: NormBundle = serde_json::from_str(&fs::read_to_string(dir.join("normalization.json"))?)?;
    let stats: ModelStats = serde_json::from_str(&fs::read_to_string(dir.join("stats.json"))?)?;
    Ok((
        WorldModel {
            delta_nets,
            reward_net,
            input_norm: norm.input,
            delta_norm: norm.delta,
        },
        stats,
    ))
}

pub fn write_test_states(path: &Path, states: &[State]) -> Result<()> {
    let mut out = String::from("theta,theta_dot,rho,rho_dot\n");
    for s in states {
        let x = s.as_array();
        out.push_str(&format!("{},{},{},{}\n", x[0], x[1], x[2], x[3]));
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_test_states(path: &Path) -> Result<Vec<State>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut states = Vec::new();
    for record in rdr.records() {
        let rec = record?;
        if rec.len() != 4 {
            return Err(Error::Dimension {
                expected: 4,
                got: rec.len(),
                context: "test-state CSV columns",
            });
        }
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse {
                offset: i,
                message: format!("invalid number '{}' in test-state row", &rec[i]),
            })
        };
        states.push(State::new(f(0)?, f(1)?, f(2)?, f(3)?));
    }
    if states.is_empty() {
        return Err(Error::EmptyData("test-state CSV"));
    }
    Ok(states)
}

/// One row of a trajectory export.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub step: usize,
    pub state: State,
    pub action: f64,
    pub reward: f64,
    pub setpoint: f64,
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut out = String::from("step,theta,theta_dot,rho,rho_dot,action,reward,setpoint\n");
    for r in rows {
        let x = r.state.as_array();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, x[0], x[1], x[2], x[3], r.action, r.reward, r.setpoint
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// One exported Pareto-front row.
#[derive(Debug, Clone)]
pub struct FrontRow {
    pub complexity: usize,
    pub model_penalty: f64,
    pub system_penalty: f64,
    pub equation: String,
}

pub fn write_front(path: &Path, rows: &[FrontRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["complexity", "model_penalty", "system_penalty", "equation"])
        .map_err(Error::from)?;
    for r in rows {
        wtr.write_record([
            r.complexity.to_string(),
            r.model_penalty.to_string(),
            r.system_penalty.to_string(),
            r.equation.clone(),
        ])
        .map_err(Error::from)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    atomic_write(path, &bytes)
}

/// Optimization history export (iteration, best score).
pub fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("iteration,best_score\n");
    for (i, s) in history.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    atomic_write(path, out.as_bytes())
}
