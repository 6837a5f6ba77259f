//! Priority-ordered tree over location vectors.
//!
//! A bus may be appended to a partial selection only if it outranks every
//! bus already selected, so each feasible subset of buses appears on exactly
//! one root-to-node path (non-redundancy) and selections only grow along a
//! path (faithfulness). Terminal states for enumeration are the maximal
//! feasible subsets: no single further bus fits the cardinality and budget
//! limits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("location vectors have different lengths ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("enumeration would exceed the guard of {guard} leaves")]
    EnumerationTooLarge { guard: usize },
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
}

/// Guard on exhaustive enumeration, in leaves.
pub const ENUMERATION_GUARD: usize = 1_000_000;

/// Binary siting decision: which buses host shiftable-load capacity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationVector {
    /// 0/1 mask over buses
    pub z: Vec<bool>,
    /// chosen bus indices in assignment order
    pub selected: Vec<usize>,
}

impl LocationVector {
    pub fn empty(n: usize) -> Self {
        Self { z: vec![false; n], selected: Vec::new() }
    }

    pub fn from_buses(n: usize, buses: &[usize]) -> Self {
        let mut lv = Self::empty(n);
        for &b in buses {
            lv = lv.with_bus(b);
        }
        lv
    }

    pub fn with_bus(&self, bus: usize) -> Self {
        let mut next = self.clone();
        if !next.z[bus] {
            next.z[bus] = true;
            next.selected.push(bus);
        }
        next
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn count(&self) -> usize {
        self.selected.len()
    }

    pub fn cost(&self, alpha: &[f64]) -> f64 {
        self.selected.iter().map(|&b| alpha[b]).sum()
    }

    /// Canonical key: sorted selected indices.
    pub fn key(&self) -> Vec<usize> {
        let mut k = self.selected.clone();
        k.sort_unstable();
        k
    }
}

/// True iff `descendant - ancestor` is elementwise non-negative.
pub fn contains(ancestor: &LocationVector, descendant: &LocationVector) -> Result<bool, TreeError> {
    if ancestor.n() != descendant.n() {
        return Err(TreeError::DimensionMismatch(ancestor.n(), descendant.n()));
    }
    Ok(ancestor
        .z
        .iter()
        .zip(&descendant.z)
        .all(|(&a, &d)| !a || d))
}

/// Cardinality and investment limits plus the operator's priority order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Budget {
    /// maximum number of selected locations
    pub k: usize,
    /// maximum investment (sum of alpha over selected buses)
    pub b: f64,
    /// per-bus investment cost
    pub alpha: Vec<f64>,
    /// buses in descending priority; `priority[0]` outranks everything
    pub priority: Vec<usize>,
}

impl Budget {
    /// Cardinality-only budget with the default priority order
    /// (descending bus index).
    pub fn cardinality(n: usize, k: usize) -> Self {
        Self { k, b: f64::INFINITY, alpha: vec![0.0; n], priority: default_priority(n) }
    }

    pub fn validate(&self, n: usize) -> Result<(), TreeError> {
        if self.k == 0 {
            return Err(TreeError::InvalidBudget("K must be at least 1".into()));
        }
        if self.alpha.len() != n {
            return Err(TreeError::InvalidBudget(format!(
                "alpha has {} entries, expected {n}",
                self.alpha.len()
            )));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0)) {
            return Err(TreeError::InvalidBudget("alpha has a negative entry".into()));
        }
        if self.b.is_nan() {
            return Err(TreeError::InvalidBudget("budget B is NaN".into()));
        }
        if self.priority.len() != n {
            return Err(TreeError::InvalidBudget(format!(
                "priority has {} entries, expected {n}",
                self.priority.len()
            )));
        }
        let mut seen = vec![false; n];
        for &b in &self.priority {
            if b >= n || seen[b] {
                return Err(TreeError::InvalidBudget("priority is not a permutation of the buses".into()));
            }
            seen[b] = true;
        }
        Ok(())
    }

    /// rank_of[bus] = position in the priority list; smaller outranks.
    pub fn rank_of(&self) -> Vec<usize> {
        let mut rank = vec![0usize; self.priority.len()];
        for (r, &bus) in self.priority.iter().enumerate() {
            rank[bus] = r;
        }
        rank
    }

    pub fn feasible_add(&self, z: &LocationVector, bus: usize) -> bool {
        !z.z[bus] && z.count() < self.k && z.cost(&self.alpha) + self.alpha[bus] <= self.b
    }

    /// No single additional bus keeps the limits satisfiable.
    pub fn is_maximal(&self, z: &LocationVector) -> bool {
        (0..z.n()).all(|bus| !self.feasible_add(z, bus))
    }
}

pub fn default_priority(n: usize) -> Vec<usize> {
    (0..n).rev().collect()
}

/// One child per bus whose priority rank is strictly above the node's
/// best-ranked assignment, filtered by the limits. An empty result marks the
/// node as terminal for rollouts.
pub fn children(
    z: &LocationVector,
    best_rank: Option<usize>,
    budget: &Budget,
) -> Vec<(usize, LocationVector)> {
    let limit = best_rank.unwrap_or(budget.priority.len());
    let mut out = Vec::new();
    for rank in 0..limit {
        let bus = budget.priority[rank];
        if budget.feasible_add(z, bus) {
            out.push((rank, z.with_bus(bus)));
        }
    }
    out
}

fn walk_leaves(
    budget: &Budget,
    n: usize,
    mut on_leaf: impl FnMut(LocationVector) -> Result<(), TreeError>,
) -> Result<(), TreeError> {
    let mut stack: Vec<(LocationVector, Option<usize>)> = vec![(LocationVector::empty(n), None)];
    while let Some((z, best_rank)) = stack.pop() {
        if budget.is_maximal(&z) {
            on_leaf(z)?;
            continue;
        }
        // reverse so the lowest rank is explored first
        for (rank, child) in children(&z, best_rank, budget).into_iter().rev() {
            stack.push((child, Some(rank)));
        }
    }
    Ok(())
}

/// Leaf count with early abort once the guard is exceeded.
pub fn count_leaves(budget: &Budget, n: usize) -> Result<usize, TreeError> {
    budget.validate(n)?;
    let mut count = 0usize;
    walk_leaves(budget, n, |_| {
        count += 1;
        if count > ENUMERATION_GUARD {
            return Err(TreeError::EnumerationTooLarge { guard: ENUMERATION_GUARD });
        }
        Ok(())
    })?;
    Ok(count)
}

/// Every maximal feasible location vector, each exactly once, in
/// deterministic depth-first order.
pub fn enumerate_leaves(budget: &Budget, n: usize) -> Result<Vec<LocationVector>, TreeError> {
    let count = count_leaves(budget, n)?;
    let mut out = Vec::with_capacity(count);
    walk_leaves(budget, n, |z| {
        out.push(z);
        Ok(())
    })?;
    Ok(out)
}
