//! Command-line harness: data generation, model training, per-method
//! synthesis, evaluation, the comparison table and trajectory export.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{stage_seed, ExperimentConfig, Stage};
use crate::dynamics::{gen_batch, Batch, State};
use crate::error::{Error, Result};
use crate::io;
use crate::nfq::CheckpointProtocol;
use crate::policies::{self, Policy, SetpointController};
use crate::surrogate::{self, WorldModel};
use crate::synthesis::{self, Method, MethodOutput, PsopSpec};

#[derive(Debug, Parser)]
#[command(name = "cpbrl", version, about = "Batch RL toolkit for cart-pole balancing")]
pub struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the exploration transition batch.
    GenData {
        /// Transition count override.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the neural world model from a batch.
    TrainModel {
        #[arg(long)]
        batch: PathBuf,
    },
    /// Synthesize one controller.
    Synthesize {
        #[arg(long)]
        method: String,
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a policy file on an evaluator.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        /// "model" or "system".
        #[arg(long)]
        evaluator: String,
        /// World-model bundle; required for the model evaluator and for
        /// PSO-P planning.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Synthesize and evaluate several methods, emitting the comparison table.
    Compare {
        /// Comma-separated method list; all eight when omitted.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Roll a policy out on the true dynamics and export the trajectory.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        /// Start state as "theta,theta_dot,rho,rho_dot".
        #[arg(long, default_value = "0,0,0,0")]
        start: String,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        /// Step at which the cart-position setpoint switches.
        #[arg(long)]
        setpoint_step: Option<usize>,
        /// Setpoint value after the switch.
        #[arg(long, default_value_t = 0.0)]
        setpoint: f64,
        /// World-model bundle, required for PSO-P policies.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// A parsed policy file: a closed-form policy or the PSO-P planner spec.
pub enum LoadedPolicy {
    Static(Policy),
    Psop(PsopSpec),
}

pub fn load_policy_file(path: &Path) -> Result<LoadedPolicy> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("kind").and_then(|k| k.as_str()) == Some("psop") {
        let payload = value
            .get("payload")
            .ok_or_else(|| Error::Config("psop policy file lacks a payload".into()))?;
        return Ok(LoadedPolicy::Psop(serde_json::from_value(payload.clone())?));
    }
    Ok(LoadedPolicy::Static(policies::parse(&text)?))
}

fn write_policy_file(path: &Path, output: &MethodOutput) -> Result<()> {
    let text = match (&output.policy, &output.psop) {
        (Some(p), _) => policies::serialize(p),
        (None, Some(spec)) => serde_json::to_string_pretty(&json!({
            "version": policies::POLICY_FILE_VERSION,
            "kind": "psop",
            "payload": spec,
        }))?,
        _ => return Err(Error::InvalidArgument("nothing to write".into())),
    };
    io::atomic_write(path, text.as_bytes())
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match cli_config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn test_states(cfg: &ExperimentConfig) -> Result<Vec<State>> {
    match &cfg.test_states {
        Some(p) => io::read_test_states(p),
        None => Ok(surrogate::default_test_states()),
    }
}

fn reward_histogram(batch: &Batch) -> [usize; 3] {
    let mut h = [0usize; 3];
    for t in &batch.transitions {
        h[surrogate::reward_class_index(t.r)] += 1;
    }
    h
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    policy_kind: String,
    evaluator: String,
    mean_penalty: f64,
    per_state: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub runs: usize,
    pub model_mean: f64,
    pub model_stderr: Option<f64>,
    pub system_mean: f64,
    pub system_stderr: Option<f64>,
    pub note: Option<String>,
}

fn mean_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn format_cell(mean: f64, stderr: Option<f64>) -> String {
    match stderr {
        Some(se) => format!("{mean:.2} +/- {se:.2}"),
        None => format!("{mean:.2}"),
    }
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<8} {:>16} {:>16}  {}\n", "method", "model", "system", "note"));
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:>16} {:>16}  {}\n",
            r.method,
            format_cell(r.model_mean, r.model_stderr),
            format_cell(r.system_mean, r.system_stderr),
            r.note.as_deref().unwrap_or("")
        ));
    }
    out
}

fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("method,runs,model_mean,model_stderr,system_mean,system_stderr,note\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.runs,
            r.model_mean,
            r.model_stderr.map(|v| v.to_string()).unwrap_or_default(),
            r.system_mean,
            r.system_stderr.map(|v| v.to_string()).unwrap_or_default(),
            r.note.as_deref().unwrap_or("")
        ));
    }
    out
}

fn front_rows(
    front: &crate::gp::ParetoFront,
    fuzzy: bool,
    model: &WorldModel,
    cfg: &ExperimentConfig,
    states: &[State],
) -> Result<Vec<io::FrontRow>> {
    let system = synthesis::system_env(cfg);
    let mut rows = Vec::with_capacity(front.entries.len());
    for e in &front.entries {
        let policy = if fuzzy {
            Policy::Tree(synthesis::fgprl_policy(&e.tree))
        } else {
            Policy::Tree(crate::policies::TreePolicy::algebraic(e.tree.clone()))
        };
        let system_penalty =
            surrogate::penalty(&system, &policy, states, cfg.horizon, cfg.gamma)?;
        let _ = model;
        rows.push(io::FrontRow {
            complexity: e.complexity,
            model_penalty: e.score,
            system_penalty,
            equation: policy.describe(),
        });
    }
    Ok(rows)
}

/// Execute one parsed invocation. Errors bubble up for exit-code mapping.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    let out_dir = &cli.out;
    std::fs::create_dir_all(out_dir)?;
    match cli.command {
        Command::GenData { n } => {
            let n = n.unwrap_or(cfg.batch_size);
            let cp = synthesis::system_env(&cfg);
            let batch = gen_batch(&cp, n, stage_seed(cfg.seed, Stage::Data))?;
            let path = out_dir.join("batch.csv");
            io::write_batch(&path, &batch, &cp.params)?;
            let h = reward_histogram(&batch);
            println!("wrote {} transitions to {}", n, path.display());
            println!("reward histogram: 0.0 x{}, -0.1 x{}, -1.0 x{}", h[0], h[1], h[2]);
            Ok(())
        }
        Command::TrainModel { batch } => {
            let bundle = out_dir.join("model");
            if bundle.join("stats.json").exists() && !cli.force {
                println!("model bundle {} exists, skipping (use --force to retrain)", bundle.display());
                return Ok(());
            }
            let batch = io::read_batch(&batch)?;
            let train_cfg = crate::neural::TrainConfig {
                seed: stage_seed(cfg.seed, Stage::Model),
                ..cfg.surrogate.clone()
            };
            let (model, stats) = surrogate::fit(&batch, &train_cfg)?;
            io::write_world_model(&bundle, &model, &stats)?;
            println!("wrote model bundle to {}", bundle.display());
            for (name, rmse) in surrogate::STATE_VAR_NAMES.iter().zip(stats.delta_rmse) {
                println!("holdout delta rmse {name}: {rmse:.6}");
            }
            println!(
                "holdout reward accuracy: {:.4} ({} samples)",
                stats.reward_accuracy, stats.holdout_size
            );
            Ok(())
        }
        Command::Synthesize { method, batch, model } => {
            let method = Method::from_name(&method)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{method}'")))?;
            let batch = io::read_batch(&batch)?;
            let (model, _) = io::read_world_model(&model)?;
            let states = test_states(&cfg)?;
            let seed = stage_seed(cfg.seed, Stage::Method(method.name(), 0));
            let output = synthesis::synthesize(method, &batch, &model, &cfg, &states, seed)?;
            println!("{}", output.summary);
            let path = out_dir.join(format!("policy_{}.json", method.name()));
            write_policy_file(&path, &output)?;
            println!("wrote {}", path.display());
            if let Some(front) = &output.front {
                let rows = front_rows(front, method == Method::Fgprl, &model, &cfg, &states)?;
                let front_path = out_dir.join(format!("front_{}.csv", method.name()));
                io::write_front(&front_path, &rows)?;
                println!("wrote {}", front_path.display());
            }
            if let Some(run) = &output.nfq {
                let dir = out_dir.join("nfq_checkpoints");
                std::fs::create_dir_all(&dir)?;
                let mut report = Vec::new();
                for c in &run.checkpoints {
                    let p = dir.join(format!("checkpoint_{:02}.json", c.iteration));
                    io::atomic_write(
                        &p,
                        policies::serialize(&Policy::GreedyQ(c.policy.clone())).as_bytes(),
                    )?;
                    report.push(json!({
                        "iteration": c.iteration,
                        "model_penalty": c.score,
                    }));
                }
                let selection = json!({
                    "checkpoints": report,
                    "selected": run.selected,
                    "last": run.last,
                });
                io::atomic_write(
                    &dir.join("selection.json"),
                    serde_json::to_string_pretty(&selection)?.as_bytes(),
                )?;
                println!(
                    "wrote {} checkpoints, selected iteration {} (protocol {:?})",
                    run.checkpoints.len(),
                    run.selected,
                    CheckpointProtocol::Selected
                );
            }
            Ok(())
        }
        Command::Evaluate { policy, evaluator, model } => {
            let loaded = load_policy_file(&policy)?;
            let states = test_states(&cfg)?;
            let needs_model =
                evaluator == "model" || matches!(loaded, LoadedPolicy::Psop(_));
            let world = match (&model, needs_model) {
                (Some(p), _) => Some(io::read_world_model(p)?.0),
                (None, true) => {
                    return Err(Error::InvalidArgument(
                        "--model is required for the model evaluator and for psop policies".into(),
                    ))
                }
                (None, false) => None,
            };
            let system = synthesis::system_env(&cfg);
            let env: &dyn crate::dynamics::Env = match evaluator.as_str() {
                "model" => world.as_ref().unwrap(),
                "system" => &system,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown evaluator '{other}' (expected model|system)"
                    )))
                }
            };
            let mut per_state = Vec::with_capacity(states.len());
            for s in &states {
                let v = match &loaded {
                    LoadedPolicy::Static(p) => {
                        let mut c = p.controller();
                        surrogate::value_estimate(env, &mut *c, s, cfg.horizon, cfg.gamma)?
                    }
                    LoadedPolicy::Psop(spec) => {
                        let mut c = spec.controller(world.as_ref().unwrap());
                        surrogate::value_estimate(env, &mut c, s, cfg.horizon, cfg.gamma)?
                    }
                };
                per_state.push(-v);
            }
            let mean = per_state.iter().sum::<f64>() / per_state.len() as f64;
            let report = EvaluateReport {
                policy_kind: match &loaded {
                    LoadedPolicy::Static(p) => p.kind().to_string(),
                    LoadedPolicy::Psop(_) => "psop".to_string(),
                },
                evaluator,
                mean_penalty: mean,
                per_state,
            };
            let path = out_dir.join("evaluation.json");
            io::atomic_write(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
            println!(
                "{} penalty on {}: {:.4} ({} states), report at {}",
                report.policy_kind,
                report.evaluator,
                mean,
                report.per_state.len(),
                path.display()
            );
            Ok(())
        }
        Command::Compare { methods, runs, batch, model } => {
            if runs == 0 {
                return Err(Error::InvalidArgument("runs must be >= 1".into()));
            }
            let methods: Vec<Method> = match methods {
                None => Method::ALL.to_vec(),
                Some(list) => list
                    .split(',')
                    .map(|s| {
                        Method::from_name(s.trim()).ok_or_else(|| {
                            Error::InvalidArgument(format!("unknown method '{s}'"))
                        })
                    })
                    .collect::<Result<_>>()?,
            };
            let batch = io::read_batch(&batch)?;
            let (world, _) = io::read_world_model(&model)?;
            let states = test_states(&cfg)?;
            let system = synthesis::system_env(&cfg);
            let mut rows = Vec::new();
            for m in methods {
                let n_runs = if m.deterministic() { 1 } else { runs };
                let mut model_pen = Vec::new();
                let mut system_pen = Vec::new();
                let mut note = None;
                for k in 0..n_runs {
                    let seed = stage_seed(cfg.seed, Stage::Method(m.name(), k as u64));
                    match synthesis::synthesize(m, &batch, &world, &cfg, &states, seed).and_then(
                        |out| {
                            let mp = synthesis::evaluate_output(
                                &out, &world, &world, &states, cfg.horizon, cfg.gamma,
                            )?;
                            let sp = synthesis::evaluate_output(
                                &out, &world, &system, &states, cfg.horizon, cfg.gamma,
                            )?;
                            Ok((mp, sp))
                        },
                    ) {
                        Ok((mp, sp)) => {
                            model_pen.push(mp);
                            system_pen.push(sp);
                        }
                        Err(e) => {
                            note = Some(format!("run {k} failed: {e}"));
                            break;
                        }
                    }
                }
                if m == Method::Psop && note.is_none() {
                    note = Some("plans on the model even for the system row".into());
                }
                if model_pen.is_empty() {
                    rows.push(ComparisonRow {
                        method: m.name().into(),
                        runs: 0,
                        model_mean: f64::NAN,
                        model_stderr: None,
                        system_mean: f64::NAN,
                        system_stderr: None,
                        note,
                    });
                    continue;
                }
                let (mm, ms) = mean_stderr(&model_pen);
                let (sm, ss) = mean_stderr(&system_pen);
                rows.push(ComparisonRow {
                    method: m.name().into(),
                    runs: model_pen.len(),
                    model_mean: mm,
                    model_stderr: ms,
                    system_mean: sm,
                    system_stderr: ss,
                    note,
                });
            }
            let text = comparison_text(&rows);
            print!("{text}");
            io::atomic_write(&out_dir.join("comparison.txt"), text.as_bytes())?;
            io::atomic_write(&out_dir.join("comparison.csv"), comparison_csv(&rows).as_bytes())?;
            println!("wrote {}", out_dir.join("comparison.csv").display());
            Ok(())
        }
        Command::Rollout {
            policy,
            start,
            steps,
            setpoint_step,
            setpoint,
            model,
        } => {
            if steps == 0 {
                return Err(Error::InvalidArgument("steps must be >= 1".into()));
            }
            let parts: Vec<&str> = start.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::InvalidArgument(format!(
                    "start state needs 4 comma-separated numbers, got '{start}'"
                )));
            }
            let mut vals = [0.0; 4];
            for (i, p) in parts.iter().enumerate() {
                vals[i] = p.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("invalid start component '{p}'"))
                })?;
            }
            let loaded = load_policy_file(&policy)?;
            let world = match (&model, &loaded) {
                (Some(p), _) => Some(io::read_world_model(p)?.0),
                (None, LoadedPolicy::Psop(_)) => {
                    return Err(Error::InvalidArgument(
                        "--model is required for psop policies".into(),
                    ))
                }
                (None, _) => None,
            };
            let inner: Box<dyn crate::policies::Controller + '_> = match &loaded {
                LoadedPolicy::Static(p) => p.controller(),
                LoadedPolicy::Psop(spec) => Box::new(spec.controller(world.as_ref().unwrap())),
            };
            let mut ctrl = SetpointController::new(inner, 0.0);
            let cp = synthesis::system_env(&cfg);
            let mut s = State::new(vals[0], vals[1], vals[2], vals[3]);
            let mut rows = Vec::with_capacity(steps);
            use crate::policies::Controller;
            for step in 0..steps {
                if let Some(at) = setpoint_step {
                    ctrl.rho_setpoint = if step >= at { setpoint } else { 0.0 };
                }
                let a = ctrl.act(&s);
                let (next, r) = crate::dynamics::Env::env_step(&cp, &s, a)?;
                rows.push(io::TrajectoryRow {
                    step,
                    state: s,
                    action: a.clamp(-10.0, 10.0),
                    reward: r,
                    setpoint: ctrl.rho_setpoint,
                });
                s = next;
            }
            let path = out_dir.join("trajectory.csv");
            io::write_trajectory(&path, &rows)?;
            println!("wrote {} steps to {}", steps, path.display());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_stderr_values() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        // sample variance 1, stderr 1/sqrt(3)
        assert!((s.unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let (m1, s1) = mean_stderr(&[4.0]);
        assert_eq!(m1, 4.0);
        assert!(s1.is_none());
    }

    #[test]
    fn comparison_text_layout() {
        let rows = vec![ComparisonRow {
            method: "lqr".into(),
            runs: 1,
            model_mean: 2.23,
            model_stderr: None,
            system_mean: 3.01,
            system_stderr: None,
            note: None,
        }];
        let text = comparison_text(&rows);
        assert!(text.contains("lqr"));
        assert!(text.contains("2.23"));
        assert!(text.contains("3.01"));
    }
}
