//! UCT search over the priority tree of location vectors.
//!
//! Each round runs selection / expansion / simulation / backpropagation.
//! Rollouts complete a partial selection uniformly at random; the terminal
//! vector is scored by the full-horizon dispatch evaluation and the negated
//! objective is backpropagated along the visited path. Terminals whose
//! dispatch is certified infeasible are removed from the tree, with removal
//! cascading upward whenever a node runs out of live children. Interrupting
//! the loop at any round yields the best evaluated plan so far.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{CostCaps, DispatchError, DispatchModel};
use crate::ptree::{children, Budget, LocationVector, TreeError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("every terminal location vector is dispatch-infeasible")]
    NoFeasiblePlan,
    #[error(transparent)]
    Budget(#[from] TreeError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RewardNormalization {
    /// running min/max over observed per-round rewards
    RunningMinMax,
    /// operator-provided reward range
    FixedRange { min: f64, max: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// exploration rate; zero means pure exploitation
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    /// wall-clock budget in seconds; checked between rounds
    #[serde(default)]
    pub wall_clock_budget_s: Option<f64>,
    /// rounds the greedy visit path must stay unchanged to declare convergence
    #[serde(default = "default_window")]
    pub convergence_window: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_normalization")]
    pub reward_normalization: RewardNormalization,
}

fn default_rho() -> f64 {
    std::f64::consts::SQRT_2
}
fn default_rounds() -> usize {
    500
}
fn default_window() -> usize {
    20
}
fn default_normalization() -> RewardNormalization {
    RewardNormalization::RunningMinMax
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            max_rounds: default_rounds(),
            wall_clock_budget_s: None,
            convergence_window: default_window(),
            seed: 0,
            reward_normalization: default_normalization(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        if !(self.rho >= 0.0) {
            return Err(TreeError::InvalidBudget(format!("rho must be non-negative, got {}", self.rho)));
        }
        if self.max_rounds == 0 {
            return Err(TreeError::InvalidBudget("max_rounds must be at least 1".into()));
        }
        if self.convergence_window == 0 {
            return Err(TreeError::InvalidBudget("convergence_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Exploitation estimate plus exploration bonus of a child given its
/// parent's visit count. The estimate must already be normalized.
pub fn ucb_value(v_hat_norm: f64, parent_visits: u64, child_visits: u64, rho: f64) -> f64 {
    debug_assert!(parent_visits >= 1 && child_visits >= 1);
    v_hat_norm + rho * ((parent_visits as f64).ln() / child_visits as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub z: LocationVector,
    /// rank of the best-prioritized assigned bus; None at the root
    pub best_rank: Option<usize>,
    pub parent: Option<usize>,
    /// None until expanded; expanded terminals hold an empty list
    pub children: Option<Vec<usize>>,
    pub visits: u64,
    pub value: f64,
    pub removed: bool,
}

/// Append-only search tree; removal is a flag so statistics stay auditable.
#[derive(Clone, Debug)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn new_root(n: usize) -> Self {
        Self {
            nodes: vec![TreeNode {
                z: LocationVector::empty(n),
                best_rank: None,
                parent: None,
                children: None,
                visits: 0,
                value: 0.0,
                removed: false,
            }],
        }
    }

    pub fn add_child(&mut self, parent: usize, z: LocationVector, rank: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            z,
            best_rank: Some(rank),
            parent: Some(parent),
            children: None,
            visits: 0,
            value: 0.0,
            removed: false,
        });
        if let Some(kids) = self.nodes[parent].children.as_mut() {
            kids.push(id);
        } else {
            self.nodes[parent].children = Some(vec![id]);
        }
        id
    }

    /// Every node on the visited path gets the round reward; nodes off the
    /// path are untouched.
    pub fn backpropagate(&mut self, path: &[usize], reward: f64) {
        for &id in path {
            self.nodes[id].visits += 1;
            self.nodes[id].value += reward;
        }
    }

    /// Flag a node removed and cascade upward while a parent has no live
    /// children left. Returns true when the root itself was removed.
    pub fn remove_cascade(&mut self, mut id: usize) -> bool {
        loop {
            self.nodes[id].removed = true;
            match self.nodes[id].parent {
                None => return true,
                Some(parent) => {
                    let exhausted = self.nodes[parent]
                        .children
                        .as_ref()
                        .map(|kids| kids.iter().all(|&c| self.nodes[c].removed))
                        .unwrap_or(false);
                    if exhausted {
                        id = parent;
                    } else {
                        return false;
                    }
                }
            }
        }
    }

    /// Greedy descent by child visit count (ties to the lowest id); the
    /// convergence criterion watches this path.
    pub fn greedy_visit_path(&self) -> Vec<usize> {
        let mut path = vec![0usize];
        let mut cur = 0usize;
        loop {
            let Some(kids) = self.nodes[cur].children.as_ref() else { break };
            let mut best: Option<usize> = None;
            for &c in kids {
                if self.nodes[c].removed {
                    continue;
                }
                if best.map(|b| self.nodes[c].visits > self.nodes[b].visits).unwrap_or(true) {
                    best = Some(c);
                }
            }
            match best {
                Some(next) => {
                    path.push(next);
                    cur = next;
                }
                None => break,
            }
        }
        path
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| SnapshotNode {
                    id,
                    parent: n.parent,
                    selected: n.z.key(),
                    visits: n.visits,
                    value: n.value,
                    removed: n.removed,
                    children: n.children.clone().unwrap_or_default(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub selected: Vec<usize>,
    pub visits: u64,
    pub value: f64,
    pub removed: bool,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<SnapshotNode>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub z: LocationVector,
    pub objective: f64,
    pub best_objective: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub z_star: LocationVector,
    pub best_objective: f64,
    pub rounds_used: usize,
    pub converged: bool,
    pub trace: Vec<RoundRecord>,
    pub tree: TreeSnapshot,
    /// distinct dispatch evaluations actually solved
    pub evaluations: usize,
    /// terminals removed after certified infeasibility
    pub pruned: Vec<LocationVector>,
}

struct Engine<'a> {
    model: &'a DispatchModel,
    budget: &'a Budget,
    caps: &'a CostCaps,
    cfg: &'a SearchConfig,
    tree: Tree,
    rng: ChaCha8Rng,
    banned: HashSet<Vec<usize>>,
    dead_partial: HashSet<Vec<usize>>,
    cache: HashMap<Vec<usize>, f64>,
    reward_lo: f64,
    reward_hi: f64,
    evaluations: usize,
    pruned: Vec<LocationVector>,
}

impl<'a> Engine<'a> {
    fn new(model: &'a DispatchModel, budget: &'a Budget, caps: &'a CostCaps, cfg: &'a SearchConfig) -> Self {
        Self {
            model,
            budget,
            caps,
            cfg,
            tree: Tree::new_root(model.net.n()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            banned: HashSet::new(),
            dead_partial: HashSet::new(),
            cache: HashMap::new(),
            reward_lo: f64::INFINITY,
            reward_hi: f64::NEG_INFINITY,
            evaluations: 0,
            pruned: Vec::new(),
        }
    }

    fn observe_reward(&mut self, reward: f64) {
        self.reward_lo = self.reward_lo.min(reward);
        self.reward_hi = self.reward_hi.max(reward);
    }

    fn normalized_mean(&self, value: f64, visits: u64) -> f64 {
        let mean = value / visits as f64;
        let (lo, hi) = match self.cfg.reward_normalization {
            RewardNormalization::RunningMinMax => (self.reward_lo, self.reward_hi),
            RewardNormalization::FixedRange { min, max } => (min, max),
        };
        if !(hi > lo) {
            return 0.5;
        }
        ((mean - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    fn ucb(&self, child: usize, parent_visits: u64) -> f64 {
        let node = &self.tree.nodes[child];
        ucb_value(self.normalized_mean(node.value, node.visits), parent_visits, node.visits, self.cfg.rho)
    }

    /// Uniform random completion to a live terminal, backtracking out of
    /// subtrees whose terminals are all banned. `None` means the start state
    /// has no live completion left.
    fn rollout(&mut self, z: LocationVector, best_rank: Option<usize>) -> Option<LocationVector> {
        if self.dead_partial.contains(&z.key()) {
            return None;
        }
        let kids = children(&z, best_rank, self.budget);
        if kids.is_empty() {
            if self.banned.contains(&z.key()) {
                return None;
            }
            return Some(z);
        }
        let mut order: Vec<usize> = (0..kids.len()).collect();
        for i in (1..order.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for idx in order {
            let (rank, child) = kids[idx].clone();
            if let Some(term) = self.rollout(child, Some(rank)) {
                return Some(term);
            }
        }
        self.dead_partial.insert(z.key());
        None
    }

    /// Full-horizon evaluation, memoized per distinct terminal. `None` marks
    /// certified infeasibility.
    fn evaluate(&mut self, z: &LocationVector) -> Result<Option<f64>, SearchError> {
        let key = z.key();
        if let Some(&obj) = self.cache.get(&key) {
            return Ok(Some(obj));
        }
        let eval = self.model.evaluate_plan(z, self.caps)?;
        self.evaluations += 1;
        if eval.feasible {
            self.cache.insert(key, eval.total_emission);
            Ok(Some(eval.total_emission))
        } else {
            Ok(None)
        }
    }

    /// One complete search round; returns the evaluated terminal and its
    /// objective.
    fn round(&mut self) -> Result<(LocationVector, f64), SearchError> {
        'restart: loop {
            if self.tree.nodes[0].removed {
                return Err(SearchError::NoFeasiblePlan);
            }

            // selection: descend while the node is neither expandable nor a leaf
            let mut path = vec![0usize];
            let mut cur = 0usize;
            loop {
                if self.tree.nodes[cur].visits <= 1 {
                    break;
                }
                let Some(kids) = self.tree.nodes[cur].children.clone() else { break };
                if kids.is_empty() {
                    break;
                }
                let live: Vec<usize> =
                    kids.iter().copied().filter(|&c| !self.tree.nodes[c].removed).collect();
                if live.is_empty() {
                    self.tree.remove_cascade(cur);
                    continue 'restart;
                }
                let unvisited: Vec<usize> =
                    live.iter().copied().filter(|&c| self.tree.nodes[c].visits == 0).collect();
                let next = if !unvisited.is_empty() {
                    unvisited[self.rng.gen_range(0..unvisited.len())]
                } else {
                    let parent_visits = self.tree.nodes[cur].visits;
                    let mut best = live[0];
                    let mut best_val = f64::NEG_INFINITY;
                    for &c in &live {
                        let val = self.ucb(c, parent_visits);
                        if val > best_val {
                            best_val = val;
                            best = c;
                        }
                    }
                    best
                };
                path.push(next);
                cur = next;
            }

            // expansion: a once-visited node materializes all children, then
            // hands the round to a random child
            if self.tree.nodes[cur].visits == 1 && self.tree.nodes[cur].children.is_none() {
                let kids = children(&self.tree.nodes[cur].z, self.tree.nodes[cur].best_rank, self.budget);
                let ids: Vec<usize> = kids
                    .into_iter()
                    .map(|(rank, z)| self.tree.add_child(cur, z, rank))
                    .collect();
                if self.tree.nodes[cur].children.is_none() {
                    self.tree.nodes[cur].children = Some(Vec::new());
                }
                if !ids.is_empty() {
                    let pick = ids[self.rng.gen_range(0..ids.len())];
                    path.push(pick);
                    cur = pick;
                }
            }

            // simulation with infeasible-terminal pruning
            loop {
                let start_z = self.tree.nodes[cur].z.clone();
                let start_rank = self.tree.nodes[cur].best_rank;
                match self.rollout(start_z, start_rank) {
                    None => {
                        self.tree.remove_cascade(cur);
                        continue 'restart;
                    }
                    Some(term) => match self.evaluate(&term)? {
                        Some(objective) => {
                            let reward = -objective;
                            self.observe_reward(reward);
                            self.tree.backpropagate(&path, reward);
                            return Ok((term, objective));
                        }
                        None => {
                            self.banned.insert(term.key());
                            self.pruned.push(term.clone());
                            if self.tree.nodes[cur].z.key() == term.key() {
                                self.tree.remove_cascade(cur);
                                continue 'restart;
                            }
                            // sample another completion of the current node
                        }
                    },
                }
            }
        }
    }
}

/// Run the search to convergence or budget exhaustion.
pub fn search(
    model: &DispatchModel,
    budget: &Budget,
    caps: &CostCaps,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    budget.validate(model.net.n())?;
    cfg.validate()?;
    if caps.cap.len() != model.horizon() {
        return Err(SearchError::Dispatch(DispatchError::ModelMismatch(format!(
            "caps cover {} timesteps, scenario has {}",
            caps.cap.len(),
            model.horizon()
        ))));
    }

    let started = Instant::now();
    let mut engine = Engine::new(model, budget, caps, cfg);
    let mut best: Option<(LocationVector, f64)> = None;
    let mut trace: Vec<RoundRecord> = Vec::new();
    let mut prev_path: Option<Vec<usize>> = None;
    let mut streak = 0usize;
    let mut converged = false;
    let mut rounds_used = 0usize;

    for round in 1..=cfg.max_rounds {
        if round > 1 {
            if let Some(limit) = cfg.wall_clock_budget_s {
                if started.elapsed().as_secs_f64() >= limit {
                    break;
                }
            }
        }
        let (z, objective) = engine.round()?;
        rounds_used = round;
        let improved = best.as_ref().map(|(_, b)| objective < *b).unwrap_or(true);
        if improved {
            best = Some((z.clone(), objective));
        }
        let best_objective = best.as_ref().map(|(_, b)| *b).unwrap_or(objective);
        trace.push(RoundRecord {
            round,
            z,
            objective,
            best_objective,
            elapsed_s: started.elapsed().as_secs_f64(),
        });

        let path = engine.tree.greedy_visit_path();
        if prev_path.as_ref() == Some(&path) {
            streak += 1;
        } else {
            streak = 1;
            prev_path = Some(path);
        }
        if streak >= cfg.convergence_window {
            converged = true;
            break;
        }
    }

    let (z_star, best_objective) = best.ok_or(SearchError::NoFeasiblePlan)?;
    Ok(SearchOutcome {
        z_star,
        best_objective,
        rounds_used,
        converged,
        trace,
        tree: engine.tree.snapshot(),
        evaluations: engine.evaluations,
        pruned: engine.pruned,
    })
}
