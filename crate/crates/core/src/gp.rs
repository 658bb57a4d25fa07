//! Genetic programming over expression trees: ramped initialization,
//! tournament selection, subtree crossover and mutation, elitism, plus a
//! complexity/penalty Pareto front over everything evaluated.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::{ExprTree, Op, StateVar};

/// Which function nodes the evolution may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionSet {
    /// +, -, *, /, tanh over variables and constants.
    Algebraic,
    /// The algebraic set plus Gaussian membership nodes.
    Fuzzy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub max_depth: usize,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub const_range: (f64, f64),
    pub function_set: FunctionSet,
    /// Stop early after this many generations without best-score improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 50,
            max_depth: 6,
            tournament_size: 4,
            crossover_prob: 0.9,
            mutation_prob: 0.2,
            const_range: (-10.0, 10.0),
            function_set: FunctionSet::Algebraic,
            patience: usize::MAX,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::InvalidArgument("population must be >= 2".into()));
        }
        if self.max_depth < 2 {
            return Err(Error::InvalidArgument("max depth must be >= 2".into()));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population {
            return Err(Error::InvalidArgument(
                "tournament size must lie in 1..=population".into(),
            ));
        }
        if self.const_range.0 >= self.const_range.1 {
            return Err(Error::InvalidArgument("constant range must be non-empty".into()));
        }
        Ok(())
    }

    fn random_terminal(&self, rng: &mut ChaCha8Rng) -> Op {
        if rng.gen_bool(0.5) {
            Op::Var(StateVar::ALL[rng.gen_range(0..4)])
        } else {
            Op::Const(rng.gen_range(self.const_range.0..=self.const_range.1))
        }
    }

    fn random_function(&self, rng: &mut ChaCha8Rng) -> Op {
        let n = match self.function_set {
            FunctionSet::Algebraic => 5,
            FunctionSet::Fuzzy => 6,
        };
        match rng.gen_range(0..n) {
            0 => Op::Add,
            1 => Op::Sub,
            2 => Op::Mul,
            3 => Op::Div,
            4 => Op::Tanh,
            _ => Op::Gauss {
                center: rng.gen_range(-2.0..=2.0),
                width: rng.gen_range(0.1..=2.0),
            },
        }
    }
}

/// Random tree of depth at most `depth`; `full` forces function nodes down
/// to the depth bound (the "full" half of ramped half-and-half).
pub fn random_tree(cfg: &GpConfig, rng: &mut ChaCha8Rng, depth: usize, full: bool) -> ExprTree {
    fn grow(cfg: &GpConfig, rng: &mut ChaCha8Rng, depth: usize, full: bool, out: &mut Vec<Op>) {
        if depth <= 1 || (!full && rng.gen_bool(0.3)) {
            out.push(cfg.random_terminal(rng));
            return;
        }
        let op = cfg.random_function(rng);
        let arity = op.arity();
        out.push(op);
        for _ in 0..arity {
            grow(cfg, rng, depth - 1, full, out);
        }
    }
    let mut nodes = Vec::new();
    grow(cfg, rng, depth.max(1), full, &mut nodes);
    ExprTree::new(nodes).expect("generated tree is arity consistent")
}

fn ramped_population(cfg: &GpConfig, rng: &mut ChaCha8Rng) -> Vec<ExprTree> {
    (0..cfg.population)
        .map(|i| {
            let depth = 2 + i % (cfg.max_depth - 1);
            random_tree(cfg, rng, depth, i % 2 == 0)
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Individual {
    tree: ExprTree,
    score: f64,
}

fn evaluate(objective: &dyn Fn(&ExprTree) -> f64, tree: &ExprTree) -> f64 {
    let s = objective(tree);
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Index of the tournament winner: lowest score, ties broken by lower
/// complexity, then by lower index.
fn tournament_select(pop: &[Individual], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..k {
        let i = rng.gen_range(0..pop.len());
        let challenger = (&pop[i].score, pop[i].tree.complexity(), i);
        let incumbent = (&pop[best].score, pop[best].tree.complexity(), best);
        if challenger < incumbent {
            best = i;
        }
    }
    best
}

/// Swap a random subtree of `a` with a random subtree of `b`. If the child
/// exceeds the depth bound it is replaced by a copy of `a`.
pub fn crossover(a: &ExprTree, b: &ExprTree, max_depth: usize, rng: &mut ChaCha8Rng) -> ExprTree {
    let pa = rng.gen_range(0..a.complexity());
    let pb = rng.gen_range(0..b.complexity());
    let child = a.with_replaced_subtree(pa, b.subtree(pb));
    if child.depth() > max_depth {
        a.clone()
    } else {
        child
    }
}

/// One of: replace a random subtree, jitter the numeric parameters of a
/// random node, or swap a random leaf for a fresh terminal.
pub fn mutate(cfg: &GpConfig, tree: &ExprTree, rng: &mut ChaCha8Rng) -> ExprTree {
    match rng.gen_range(0..3) {
        0 => {
            let p = rng.gen_range(0..tree.complexity());
            let replacement = random_tree(cfg, rng, 3, false);
            let child = tree.with_replaced_subtree(p, replacement.nodes());
            if child.depth() > cfg.max_depth {
                tree.clone()
            } else {
                child
            }
        }
        1 => {
            let mut nodes = tree.nodes().to_vec();
            let numeric: Vec<usize> = nodes
                .iter()
                .enumerate()
                .filter(|(_, op)| matches!(op, Op::Const(_) | Op::Gauss { .. }))
                .map(|(i, _)| i)
                .collect();
            if numeric.is_empty() {
                return mutate_leaf(cfg, tree, rng);
            }
            let i = numeric[rng.gen_range(0..numeric.len())];
            let scale = (cfg.const_range.1 - cfg.const_range.0) * 0.05;
            match &mut nodes[i] {
                Op::Const(c) => *c += rng.gen_range(-scale..=scale),
                Op::Gauss { center, width } => {
                    *center += rng.gen_range(-0.2..=0.2);
                    *width = (*width + rng.gen_range(-0.2..=0.2)).max(1e-3);
                }
                _ => unreachable!(),
            }
            ExprTree::new(nodes).expect("jitter keeps arity")
        }
        _ => mutate_leaf(cfg, tree, rng),
    }
}

fn mutate_leaf(cfg: &GpConfig, tree: &ExprTree, rng: &mut ChaCha8Rng) -> ExprTree {
    let leaves: Vec<usize> = tree
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, op)| op.arity() == 0)
        .map(|(i, _)| i)
        .collect();
    let i = leaves[rng.gen_range(0..leaves.len())];
    tree.with_replaced_subtree(i, &[cfg.random_terminal(rng)])
}

/// One entry of the complexity/score trade-off front.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontEntry {
    pub complexity: usize,
    pub score: f64,
    pub tree: ExprTree,
}

/// Pareto front minimizing (complexity, score); weakly dominated candidates
/// are rejected, newly dominated entries are dropped.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParetoFront {
    pub entries: Vec<FrontEntry>,
}

impl ParetoFront {
    pub fn insert(&mut self, tree: &ExprTree, score: f64) -> bool {
        if !score.is_finite() {
            return false;
        }
        let complexity = tree.complexity();
        let dominated = self
            .entries
            .iter()
            .any(|e| e.complexity <= complexity && e.score <= score);
        if dominated {
            return false;
        }
        self.entries
            .retain(|e| !(complexity <= e.complexity && score <= e.score));
        self.entries.push(FrontEntry {
            complexity,
            score,
            tree: tree.clone(),
        });
        self.entries.sort_by(|a, b| a.complexity.cmp(&b.complexity));
        true
    }
}

#[derive(Debug, Clone)]
pub struct GpResult {
    pub best: ExprTree,
    pub best_score: f64,
    pub front: ParetoFront,
    /// Best score after each generation (index 0 = initial population).
    pub history: Vec<f64>,
}

/// Evolve trees minimizing the objective. Elitism keeps the single best
/// individual each generation.
pub fn evolve(objective: &dyn Fn(&ExprTree) -> f64, cfg: &GpConfig) -> Result<GpResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut front = ParetoFront::default();
    let mut pop: Vec<Individual> = ramped_population(cfg, &mut rng)
        .into_iter()
        .map(|tree| {
            let score = evaluate(objective, &tree);
            front.insert(&tree, score);
            Individual { tree, score }
        })
        .collect();

    let best_of = |pop: &[Individual]| {
        let mut b = 0;
        for i in 1..pop.len() {
            if (pop[i].score, pop[i].tree.complexity()) < (pop[b].score, pop[b].tree.complexity())
            {
                b = i;
            }
        }
        b
    };

    let mut history = vec![pop[best_of(&pop)].score];
    let mut stall = 0usize;
    for _ in 0..cfg.generations {
        let elite = pop[best_of(&pop)].clone();
        let mut next = Vec::with_capacity(cfg.population);
        next.push(elite);
        while next.len() < cfg.population {
            let a = tournament_select(&pop, cfg.tournament_size, &mut rng);
            let mut child = if rng.gen_bool(cfg.crossover_prob) {
                let b = tournament_select(&pop, cfg.tournament_size, &mut rng);
                crossover(&pop[a].tree, &pop[b].tree, cfg.max_depth, &mut rng)
            } else {
                pop[a].tree.clone()
            };
            if rng.gen_bool(cfg.mutation_prob) {
                child = mutate(cfg, &child, &mut rng);
            }
            let score = evaluate(objective, &child);
            front.insert(&child, score);
            next.push(Individual { tree: child, score });
        }
        pop = next;
        let best = pop[best_of(&pop)].score;
        if best < *history.last().unwrap() {
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(best);
        if stall >= cfg.patience {
            break;
        }
    }

    let b = best_of(&pop);
    Ok(GpResult {
        best: pop[b].tree.clone(),
        best_score: pop[b].score,
        front,
        history,
    })
}
