//! Expected error reduction re-ranking.
//!
//! The "model" of where the target lies is the constraint set: each pool item
//! satisfies some fraction `S` of it, and the model's uncertainty is the summed
//! binary entropy of those fractions over the candidate pool. `S` is measured
//! with the pooled distance, the same one that ranks the database. A candidate is
//! scored by the entropy expected after showing it, where the user's response
//! is predicted by a Platt-calibrated probability that the candidate shares the
//! attribute with a proxy target (the best-ranked item not yet shown).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::gallery::{Gallery, Space};
use crate::selection::{constraint_score, ConstraintSet};
use crate::{Error, Result};

/// `P(share | d) = 1 / (1 + exp(slope·d + intercept))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub slope: f64,
    pub intercept: f64,
}

impl Platt {
    /// Probability of `r = 1` (candidate accepted / shares the attribute).
    pub fn accept_probability(&self, distance: f64) -> f64 {
        let z = self.slope * distance + self.intercept;
        // Stable for large |z|.
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }

    pub fn response_probability(&self, accepted: bool, distance: f64) -> f64 {
        let p = self.accept_probability(distance);
        if accepted {
            p
        } else {
            1.0 - p
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattFit {
    pub platt: Platt,
    pub iterations: usize,
    pub converged: bool,
    /// The data were (close to) separable and the slope hit its cap.
    pub clamped: bool,
}

/// Largest slope magnitude, in units of the distance standard deviation.
const MAX_STANDARDIZED_SLOPE: f64 = 50.0;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 100;

fn log_likelihood(xs: &[f64], ys: &[bool], w: f64, c: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let z = w * x + c;
            // log sigmoid(z) = -softplus(-z), log(1 - sigmoid(z)) = -softplus(z)
            if y {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Maximum-likelihood logistic fit of `label` on `distance` by Newton's method
/// (iteratively reweighted least squares) with step halving.
///
/// `samples` are `(distance, shares_value)` pairs and must contain both labels.
pub fn platt_fit(samples: &[(f64, bool)]) -> Result<PlattFit> {
    let positives = samples.iter().filter(|s| s.1).count();
    if samples.len() < 2 || positives == 0 || positives == samples.len() {
        return Err(Error::Sampling(
            "Platt fit needs at least one positive and one negative sample".into(),
        ));
    }
    if samples.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::Sampling(
            "non-finite distance in Platt samples".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let base = positives as f64 / n;

    if sd == 0.0 || sd < 1e-12 * mean.abs().max(1.0) {
        // No spread in distance: the fit is the base rate.
        return Ok(PlattFit {
            platt: Platt {
                slope: 0.0,
                intercept: -(base / (1.0 - base)).ln(),
            },
            iterations: 0,
            converged: true,
            clamped: false,
        });
    }

    let xs: Vec<f64> = samples.iter().map(|s| (s.0 - mean) / sd).collect();
    let ys: Vec<bool> = samples.iter().map(|s| s.1).collect();
    // sigmoid(w x + c) models P(share).
    let mut w = 0.0;
    let mut c = (base / (1.0 - base)).ln();
    let mut ll = log_likelihood(&xs, &ys, w, c);
    let mut converged = false;
    let mut clamped = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let (mut gw, mut gc, mut hww, mut hwc, mut hcc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = sigmoid(w * x + c);
            let r = if y { 1.0 } else { 0.0 } - p;
            let s = p * (1.0 - p);
            gw += r * x;
            gc += r;
            hww += s * x * x;
            hwc += s * x;
            hcc += s;
        }
        if gw.abs().max(gc.abs()) / n < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let ridge = 1e-12 * n;
        let (a, b, d) = (hww + ridge, hwc, hcc + ridge);
        let det = a * d - b * b;
        let (dw, dc) = if det > 0.0 {
            ((d * gw - b * gc) / det, (a * gc - b * gw) / det)
        } else {
            (gw / a.max(1e-300), gc / d.max(1e-300))
        };
        let mut step = 1.0;
        loop {
            let (nw, nc) = (w + step * dw, c + step * dc);
            let nll = log_likelihood(&xs, &ys, nw, nc);
            if nll >= ll || step < 1e-10 {
                w = nw;
                c = nc;
                ll = nll;
                break;
            }
            step *= 0.5;
        }
        if w.abs() > MAX_STANDARDIZED_SLOPE {
            w = MAX_STANDARDIZED_SLOPE.copysign(w);
            c = refit_intercept(&xs, &ys, w, c);
            clamped = true;
            break;
        }
    }
    if clamped {
        warn!(
            slope = w / sd,
            "Platt fit data are separable; slope clamped"
        );
    }
    // P(share) = sigmoid(w (d - mean)/sd + c) = 1 / (1 + exp(slope d + intercept)).
    Ok(PlattFit {
        platt: Platt {
            slope: -w / sd,
            intercept: w * mean / sd - c,
        },
        iterations,
        converged,
        clamped,
    })
}

fn refit_intercept(xs: &[f64], ys: &[bool], w: f64, mut c: f64) -> f64 {
    for _ in 0..MAX_ITERATIONS {
        let (mut g, mut h) = (0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let p = sigmoid(w * x + c);
            g += if y { 1.0 } else { 0.0 } - p;
            h += p * (1.0 - p);
        }
        if g.abs() / xs.len() as f64 <= GRADIENT_TOLERANCE || h <= 0.0 {
            break;
        }
        c += g / h;
    }
    c
}

/// One calibration per attribute space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattSet {
    pub per_attribute: Vec<Platt>,
}

impl PlattSet {
    /// Fits every attribute on `pairs_per_attribute` random gallery pairs in
    /// which both items are labelled for it; the label is whether their
    /// values agree.
    pub fn fit(gallery: &Gallery, pairs_per_attribute: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut per_attribute = Vec::with_capacity(gallery.n_attributes());
        for a in 0..gallery.n_attributes() {
            let labelled: Vec<usize> = (0..gallery.len())
                .filter(|&i| gallery.labels(i)[a].is_some())
                .collect();
            if labelled.len() < 2 {
                return Err(Error::Sampling(format!(
                    "attribute {a} has fewer than two labelled gallery items"
                )));
            }
            let mut samples = Vec::with_capacity(pairs_per_attribute);
            while samples.len() < pairs_per_attribute {
                let i = labelled[rng.gen_range(0..labelled.len())];
                let j = labelled[rng.gen_range(0..labelled.len())];
                if i == j {
                    continue;
                }
                let share = gallery.labels(i)[a] == gallery.labels(j)[a];
                samples.push((gallery.distance(Space::Attribute(a), i, j), share));
            }
            per_attribute.push(platt_fit(&samples)?.platt);
        }
        Ok(PlattSet { per_attribute })
    }
}

/// `-p ln p - (1-p) ln(1-p)` with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// `H(F) = -Σ_o Σ_l S(o|l,F) ln S(o|l,F)` over the pool, evaluated directly
/// from [`constraint_score`].
pub fn model_entropy<D>(pool: &[usize], constraints: &ConstraintSet, distance: D) -> f64
where
    D: Fn(usize, usize) -> f64,
{
    let term = |s: f64| if s > 0.0 { -s * s.ln() } else { 0.0 };
    pool.iter()
        .map(|&o| {
            term(constraint_score(o, false, constraints, &distance))
                + term(constraint_score(o, true, constraints, &distance))
        })
        .sum()
}

/// Pool entropy from satisfied counts, after optionally adding one more
/// constraint `(closer, farther)`. `counts[k]` is how many of the `total`
/// existing constraints pool item `pool[k]` satisfies.
fn entropy_with(
    gallery: &Gallery,
    space: Space,
    pool: &[usize],
    counts: &[u32],
    total: usize,
    extra: Option<(usize, usize)>,
) -> f64 {
    let total_after = total + usize::from(extra.is_some());
    if total_after == 0 {
        return 0.0;
    }
    pool.iter()
        .zip(counts)
        .map(|(&o, &c)| {
            let hit = extra.is_some_and(|(x, y)| {
                gallery.distance(space, o, x) < gallery.distance(space, o, y)
            });
            let sat = (c + u32::from(hit)) as f64;
            let t = total_after as f64;
            let term = |s: f64| if s > 0.0 { -s * s.ln() } else { 0.0 };
            term(sat / t) + term((t - sat) / t)
        })
        .sum()
}

/// What EER needs to know about the session.
pub struct EerContext<'a> {
    pub gallery: &'a Gallery,
    pub query: usize,
    pub proxy_target: usize,
    pub constraints: &'a ConstraintSet,
    /// The whole candidate pool over which entropy is measured.
    pub pool: &'a [usize],
    /// Pooled-space satisfied counts of the pool items (aligned with `pool`).
    pub pool_counts: &'a [u32],
}

/// Expected post-feedback entropy of showing `candidate` for `attribute`:
/// `Σ_r σ(r | d_a(c, t*)) · H(F ∪ (q, c, r))`. Accepting adds `(c, q)`,
/// rejecting adds `(q, c)`; a constraint already in `F` leaves it unchanged.
/// The response probability uses the attribute's own space.
pub fn expected_entropy(
    ctx: &EerContext<'_>,
    platt: &Platt,
    attribute: usize,
    candidate: usize,
) -> f64 {
    let d = ctx
        .gallery
        .distance(Space::Attribute(attribute), candidate, ctx.proxy_target);
    let p_accept = platt.accept_probability(d);
    let total = ctx.constraints.len();
    let branch = |closer: usize, farther: usize| {
        let extra = (!ctx.constraints.contains(closer, farther) && closer != farther)
            .then_some((closer, farther));
        entropy_with(
            ctx.gallery,
            Space::Pooled,
            ctx.pool,
            ctx.pool_counts,
            total,
            extra,
        )
    };
    let accept = branch(candidate, ctx.query);
    let reject = branch(ctx.query, candidate);
    p_accept * accept + (1.0 - p_accept) * reject
}

/// Picks one candidate per attribute minimising expected entropy. Ties keep
/// the candidate listed first (the selector's order). Attributes with no
/// candidates yield `None`.
pub fn eer_rerank(
    ctx: &EerContext<'_>,
    platt: &PlattSet,
    candidates: &[Vec<usize>],
) -> Vec<Option<usize>> {
    candidates
        .iter()
        .enumerate()
        .map(|(a, list)| {
            let mut best: Option<(f64, usize)> = None;
            for &c in list {
                let score = expected_entropy(ctx, &platt.per_attribute[a], a, c);
                if best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, c));
                }
            }
            best.map(|(_, c)| c)
        })
        .collect()
}

/// First item of `ranking` that has not been shown yet.
pub fn proxy_target(
    ranking: impl IntoIterator<Item = usize>,
    shown: &BTreeSet<usize>,
) -> Result<usize> {
    ranking
        .into_iter()
        .find(|i| !shown.contains(i))
        .ok_or(Error::Empty("unpresented part of the database"))
}
