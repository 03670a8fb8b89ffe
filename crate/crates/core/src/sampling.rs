//! Training triplets and query/target pairs.
//!
//! Both samplers draw uniformly over the valid ordered tuples: a value `v` of
//! the attribute is chosen with probability proportional to the number of
//! valid tuples it induces, then the members are drawn uniformly.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::{Error, Result};

/// Anchor and positive share the value of `attribute`; the negative carries a
/// different value for it. Fields are dataset indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub attribute: usize,
}

/// A search episode: start at `query`, look for `target`. The two share their
/// value of `attribute`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTargetPair {
    pub query: usize,
    pub target: usize,
    pub attribute: usize,
}

/// Members of `pool` grouped by their value of `attribute`; unlabelled items are skipped.
fn groups(dataset: &Dataset, pool: &[usize], attribute: usize) -> Vec<Vec<usize>> {
    let n_values = dataset.schema().attribute(attribute).values.len();
    let mut groups = vec![Vec::new(); n_values];
    for &i in pool {
        if let Some(v) = dataset.item(i).labels[attribute] {
            groups[v].push(i);
        }
    }
    groups
}

fn check_attribute(dataset: &Dataset, attribute: usize) -> Result<()> {
    if attribute >= dataset.schema().len() {
        return Err(Error::NotFound {
            kind: "attribute",
            name: attribute.to_string(),
        });
    }
    Ok(())
}

pub fn sample_triplets(
    dataset: &Dataset,
    split: Option<Split>,
    attribute: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    check_attribute(dataset, attribute)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let name = &dataset.schema().attribute(attribute).name;
    let groups = groups(dataset, &dataset.indices(split), attribute);
    let labelled: usize = groups.iter().map(Vec::len).sum();
    let represented = groups.iter().filter(|g| !g.is_empty()).count();
    if represented < 2 {
        return Err(Error::Sampling(format!(
            "attribute `{name}` has {represented} represented value(s), need at least 2"
        )));
    }
    let weights: Vec<f64> = groups
        .iter()
        .map(|g| {
            let c = g.len() as f64;
            c * (c - 1.0) * (labelled as f64 - c)
        })
        .collect();
    let by_value = WeightedIndex::new(&weights).map_err(|_| {
        Error::Sampling(format!(
            "attribute `{name}` has no value shared by two items"
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = by_value.sample(&mut rng);
        let group = &groups[v];
        let a = rng.gen_range(0..group.len());
        let mut p = rng.gen_range(0..group.len() - 1);
        if p >= a {
            p += 1;
        }
        // Uniform over labelled items outside group v.
        let mut k = rng.gen_range(0..labelled - group.len());
        let negative = groups
            .iter()
            .enumerate()
            .filter(|(u, _)| *u != v)
            .find_map(|(_, g)| {
                if k < g.len() {
                    Some(g[k])
                } else {
                    k -= g.len();
                    None
                }
            })
            .expect("index within the complement of the anchor group");
        out.push(Triplet {
            anchor: group[a],
            positive: group[p],
            negative,
            attribute,
        });
    }
    Ok(out)
}

/// Samples `per_attribute_n` pairs for every attribute in schema order.
pub fn sample_query_target_pairs(
    dataset: &Dataset,
    split: Option<Split>,
    per_attribute_n: usize,
    seed: u64,
) -> Result<Vec<QueryTargetPair>> {
    if per_attribute_n == 0 {
        return Ok(Vec::new());
    }
    let pool = dataset.indices(split);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_attribute_n * dataset.schema().len());
    for attribute in 0..dataset.schema().len() {
        let groups = groups(dataset, &pool, attribute);
        let weights: Vec<f64> = groups
            .iter()
            .map(|g| {
                let c = g.len() as f64;
                c * (c - 1.0)
            })
            .collect();
        let by_value = WeightedIndex::new(&weights).map_err(|_| {
            Error::Sampling(format!(
                "no co-labelled pair for attribute `{}`",
                dataset.schema().attribute(attribute).name
            ))
        })?;
        for _ in 0..per_attribute_n {
            let group = &groups[by_value.sample(&mut rng)];
            let q = rng.gen_range(0..group.len());
            let mut t = rng.gen_range(0..group.len() - 1);
            if t >= q {
                t += 1;
            }
            out.push(QueryTargetPair {
                query: group[q],
                target: group[t],
                attribute,
            });
        }
    }
    Ok(out)
}

/// Checks the triplet invariants against the dataset labels.
pub fn triplet_is_valid(dataset: &Dataset, t: &Triplet) -> bool {
    if t.anchor == t.positive || t.anchor == t.negative || t.positive == t.negative {
        return false;
    }
    let label = |i: usize| {
        dataset
            .items()
            .get(i)
            .and_then(|item| item.labels.get(t.attribute).copied().flatten())
    };
    match (label(t.anchor), label(t.positive), label(t.negative)) {
        (Some(a), Some(p), Some(n)) => a == p && a != n,
        _ => false,
    }
}
