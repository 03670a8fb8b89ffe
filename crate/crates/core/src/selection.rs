//! Candidate selectors and the feedback constraint set.
//!
//! A constraint `(closer, farther)` records that `closer` is nearer the
//! (unknown) target than `farther`. An item satisfies it when it is strictly
//! nearer `closer` than `farther`; ties do not satisfy.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::gallery::{Gallery, Space};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub closer: usize,
    pub farther: usize,
    /// Feedback round that produced the constraint.
    pub iteration: usize,
}

/// Ordered, duplicate-free list of constraints.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Constraint>", into = "Vec<Constraint>")]
pub struct ConstraintSet {
    list: Vec<Constraint>,
    keys: HashSet<(usize, usize)>,
}

impl From<Vec<Constraint>> for ConstraintSet {
    fn from(value: Vec<Constraint>) -> Self {
        let mut set = ConstraintSet::default();
        for c in value {
            set.insert(c);
        }
        set
    }
}

impl From<ConstraintSet> for Vec<Constraint> {
    fn from(value: ConstraintSet) -> Self {
        value.list
    }
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `c` unless the same `(closer, farther)` pair is already present, or
    /// the pair is degenerate. Returns whether it was added.
    pub fn insert(&mut self, c: Constraint) -> bool {
        if c.closer == c.farther || !self.keys.insert((c.closer, c.farther)) {
            return false;
        }
        self.list.push(c);
        true
    }

    pub fn contains(&self, closer: usize, farther: usize) -> bool {
        self.keys.contains(&(closer, farther))
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.list.iter()
    }

    pub fn as_slice(&self) -> &[Constraint] {
        &self.list
    }
}

/// Records one feedback round: accepted candidates are closer to the target
/// than the old query, rejected ones farther. Returns the constraints that
/// were actually added.
pub fn update_constraints(
    constraints: &mut ConstraintSet,
    old_query: usize,
    presented: &[usize],
    accepted: &[usize],
    iteration: usize,
) -> Vec<Constraint> {
    let mut added = Vec::new();
    for &c in presented {
        let (closer, farther) = if accepted.contains(&c) {
            (c, old_query)
        } else {
            (old_query, c)
        };
        let constraint = Constraint {
            closer,
            farther,
            iteration,
        };
        if constraints.insert(constraint) {
            added.push(constraint);
        }
    }
    added
}

/// Fraction of constraints `item` satisfies (`unsatisfied = false`) or violates
/// (`unsatisfied = true`) under `distance`. With no constraints every item
/// satisfies everything vacuously: 1 for satisfied, 0 for unsatisfied.
pub fn constraint_score<D>(
    item: usize,
    unsatisfied: bool,
    constraints: &ConstraintSet,
    distance: D,
) -> f64
where
    D: Fn(usize, usize) -> f64,
{
    if constraints.is_empty() {
        return if unsatisfied { 0.0 } else { 1.0 };
    }
    let hits = constraints
        .iter()
        .filter(|c| (distance(item, c.closer) < distance(item, c.farther)) != unsatisfied)
        .count();
    hits as f64 / constraints.len() as f64
}

/// Output of a selector. `short` is set when fewer than `k` items were eligible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub items: Vec<usize>,
    pub short: bool,
}

/// Orders eligible positions by (most constraints satisfied, nearest the
/// query, lowest position) and keeps the first `k`. `satisfied = None` means
/// every item scores the same.
pub fn rank_candidates(
    excluded: &BTreeSet<usize>,
    k: usize,
    satisfied: Option<&[u32]>,
    distance_to_query: &[f64],
) -> Selection {
    let mut eligible: Vec<usize> = (0..distance_to_query.len())
        .filter(|i| !excluded.contains(i))
        .collect();
    let score = |i: usize| satisfied.map_or(0, |s| s[i]);
    eligible.sort_unstable_by(|&a, &b| {
        score(b)
            .cmp(&score(a))
            .then(distance_to_query[a].total_cmp(&distance_to_query[b]))
            .then(a.cmp(&b))
    });
    let short = eligible.len() < k;
    eligible.truncate(k);
    Selection {
        items: eligible,
        short,
    }
}

fn query_row(gallery: &Gallery, query: usize, space: Space) -> Vec<f64> {
    (0..gallery.len())
        .map(|j| gallery.distance(space, query, j))
        .collect()
}

/// The `k` nearest non-excluded items to `query` in `attribute`'s space.
pub fn nn_select(
    gallery: &Gallery,
    query: usize,
    attribute: usize,
    k: usize,
    excluded: &BTreeSet<usize>,
) -> Selection {
    let row = query_row(gallery, query, Space::Attribute(attribute));
    rank_candidates(excluded, k, None, &row)
}

/// Counts, for each gallery item, how many constraints it satisfies in `space`.
pub fn satisfied_counts(gallery: &Gallery, constraints: &ConstraintSet, space: Space) -> Vec<u32> {
    let mut counts = vec![0u32; gallery.len()];
    for c in constraints.iter() {
        for (i, count) in counts.iter_mut().enumerate() {
            if gallery.distance(space, i, c.closer) < gallery.distance(space, i, c.farther) {
                *count += 1;
            }
        }
    }
    counts
}

/// Feedback constraint satisfaction in `attribute`'s space: items satisfying
/// the most constraints first, ties broken by nearest-neighbour distance to
/// the query and then by position.
pub fn fcs_select(
    gallery: &Gallery,
    query: usize,
    attribute: usize,
    k: usize,
    excluded: &BTreeSet<usize>,
    constraints: &ConstraintSet,
) -> Selection {
    let space = Space::Attribute(attribute);
    let counts = satisfied_counts(gallery, constraints, space);
    let row = query_row(gallery, query, space);
    rank_candidates(excluded, k, Some(&counts), &row)
}

/// Per-space satisfied-constraint counts maintained incrementally as
/// constraints arrive. Spaces are indexed as in [`Gallery::distance_rows`].
#[derive(Clone, Debug, Default)]
pub struct SatisfactionIndex {
    counts: Vec<Vec<u32>>,
    total: usize,
}

impl SatisfactionIndex {
    pub fn new(n_spaces: usize, n_items: usize) -> Self {
        SatisfactionIndex {
            counts: vec![vec![0; n_items]; n_spaces],
            total: 0,
        }
    }

    /// Adds a constraint given the distance rows of its closer and farther items.
    pub fn add(&mut self, closer_rows: &[Vec<f64>], farther_rows: &[Vec<f64>]) {
        for ((counts, near), far) in self.counts.iter_mut().zip(closer_rows).zip(farther_rows) {
            for ((c, n), f) in counts.iter_mut().zip(near).zip(far) {
                if n < f {
                    *c += 1;
                }
            }
        }
        self.total += 1;
    }

    pub fn counts(&self, space_index: usize) -> &[u32] {
        &self.counts[space_index]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `S(item | l, F)` in the given space.
    pub fn score(&self, space_index: usize, item: usize, unsatisfied: bool) -> f64 {
        if self.total == 0 {
            return if unsatisfied { 0.0 } else { 1.0 };
        }
        let sat = self.counts[space_index][item] as f64 / self.total as f64;
        if unsatisfied {
            (self.total as f64 - self.counts[space_index][item] as f64) / self.total as f64
        } else {
            sat
        }
    }
}
