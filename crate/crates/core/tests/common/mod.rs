//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance run. Oracles are deliberately written the slow, obvious way.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use attrsearch_core::bench::{benchmark, BenchmarkReport, StrategySpec};
use attrsearch_core::dataset::{
    default_schema, generate_synthetic, Attribute, Dataset, Item, Schema, Split, SyntheticConfig,
};
use attrsearch_core::dqn::{
    huber_td_loss, state_dim, train_dqn, Dense, DqnConfig, DqnLog, QNetwork, Transition,
};
use attrsearch_core::eer::{model_entropy, PlattSet};
use attrsearch_core::embedding::{
    adaptive_margin, csn_loss, global_weight, masked_distance, satisfaction_rate, train,
    triplet_loss, EmbeddingConfig, EmbeddingModel, TrainingLog, Variant,
};
use attrsearch_core::gallery::Gallery;
use attrsearch_core::sampling::{sample_query_target_pairs, sample_triplets, Triplet};
use attrsearch_core::selection::{
    constraint_score, fcs_select, nn_select, Constraint, ConstraintSet,
};
use attrsearch_core::session::{Engine, SessionLog, Strategy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

// ---------------------------------------------------------------- oracles

pub fn oracle_masked_distance(gi: &[f64], gj: &[f64], m: &[f64], normalize: bool) -> f64 {
    let n = gi.len();
    let mut ui = vec![0.0; n];
    let mut uj = vec![0.0; n];
    for k in 0..n {
        ui[k] = gi[k] * m[k];
        uj[k] = gj[k] * m[k];
    }
    if normalize {
        let ni = ui.iter().fold(0.0f64, |acc, x| acc.hypot(*x));
        let nj = uj.iter().fold(0.0f64, |acc, x| acc.hypot(*x));
        if ni > 0.0 {
            ui.iter_mut().for_each(|x| *x /= ni);
        }
        if nj > 0.0 {
            uj.iter_mut().for_each(|x| *x /= nj);
        }
    }
    let mut acc = 0.0f64;
    for k in (0..n).rev() {
        acc = acc.hypot(ui[k] - uj[k]);
    }
    acc
}

pub fn oracle_triplet_loss(dp: f64, dn: f64, margin: f64) -> f64 {
    if margin + dp > dn {
        margin + dp - dn
    } else {
        0.0
    }
}

fn assignments(labels: &[Option<usize>]) -> HashSet<(usize, usize)> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(a, v)| v.map(|v| (a, v)))
        .collect()
}

pub fn oracle_global_weight(
    ax: &[Option<usize>],
    ay: &[Option<usize>],
    az: &[Option<usize>],
) -> f64 {
    let x = assignments(ax);
    let pos = x.intersection(&assignments(ay)).count() as f64;
    let neg = x.intersection(&assignments(az)).count() as f64;
    let w = (pos - neg) / ax.len() as f64;
    if w > 0.0 {
        w
    } else {
        0.0
    }
}

/// `S(item | l, F)` from an explicit distance matrix.
pub fn oracle_constraint_score(
    item: usize,
    unsatisfied: bool,
    pairs: &[(usize, usize)],
    d: &[Vec<f64>],
) -> f64 {
    if pairs.is_empty() {
        return if unsatisfied { 0.0 } else { 1.0 };
    }
    let mut satisfied = 0;
    for &(x, y) in pairs {
        if d[item][x] < d[item][y] {
            satisfied += 1;
        }
    }
    let count = if unsatisfied {
        pairs.len() - satisfied
    } else {
        satisfied
    };
    count as f64 / pairs.len() as f64
}

pub fn oracle_entropy(pool: &[usize], pairs: &[(usize, usize)], d: &[Vec<f64>]) -> f64 {
    let mut h = 0.0;
    for &o in pool {
        for l in [false, true] {
            let s = oracle_constraint_score(o, l, pairs, d);
            if s != 0.0 {
                h -= s * s.ln();
            }
        }
    }
    h
}

pub fn oracle_huber(delta: f64) -> f64 {
    if delta.abs() <= 1.0 {
        delta * delta / 2.0
    } else {
        delta.abs() - 0.5
    }
}

/// Forward pass with explicit loops; also returns the two hidden pre-activations.
pub fn oracle_forward(net: &QNetwork, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut act = x.to_vec();
    let mut pre_acts = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.outputs];
        for o in 0..layer.outputs {
            let mut z = layer.bias[o];
            for i in 0..layer.inputs {
                z += act[i] * layer.weights[i * layer.outputs + o];
            }
            out[o] = z;
        }
        if l < 2 {
            pre_acts.push(out.clone());
            act = out
                .into_iter()
                .map(|z| if z > 0.0 { z } else { 0.0 })
                .collect();
        } else {
            act = out;
        }
    }
    (act, pre_acts)
}

pub fn random_net(
    rng: &mut ChaCha8Rng,
    inputs: usize,
    hidden: [usize; 2],
    actions: usize,
) -> QNetwork {
    let dims = [inputs, hidden[0], hidden[1], actions];
    let layer = |rng: &mut ChaCha8Rng, l: usize| Dense {
        inputs: dims[l],
        outputs: dims[l + 1],
        weights: (0..dims[l] * dims[l + 1])
            .map(|_| normal(rng) * 0.7)
            .collect(),
        bias: (0..dims[l + 1]).map(|_| normal(rng) * 0.3).collect(),
    };
    QNetwork {
        layers: [layer(rng, 0), layer(rng, 1), layer(rng, 2)],
    }
}

pub fn random_transition(rng: &mut ChaCha8Rng, inputs: usize, actions: usize) -> Transition {
    let terminal = rng.gen_bool(0.3);
    let mut mask: Vec<bool> = (0..actions).map(|_| rng.gen_bool(0.7)).collect();
    let open = rng.gen_range(0..actions);
    mask[open] = true;
    Transition {
        state: normals(rng, inputs),
        action: rng.gen_range(0..actions),
        reward: rng.gen_range(-1.0..1.0),
        next_state: (!terminal).then(|| normals(rng, inputs)),
        next_action_mask: if terminal { vec![] } else { mask },
    }
}

/// Oracle TD loss: mean Huber of `Q(s,a) − (r + γ max_{unmasked} Q_t(s'))`.
pub fn oracle_td_loss(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[Transition],
    gamma: f64,
) -> (f64, Vec<f64>) {
    let mut deltas = Vec::new();
    for t in batch {
        let q = oracle_forward(net, &t.state).0[t.action];
        let mut y = t.reward;
        if let Some(next) = &t.next_state {
            let qn = oracle_forward(target, next).0;
            let best = qn
                .iter()
                .zip(&t.next_action_mask)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                y += gamma * best;
            }
        }
        deltas.push(q - y);
    }
    let loss = deltas.iter().map(|&d| oracle_huber(d)).sum::<f64>() / batch.len() as f64;
    (loss, deltas)
}

// ---------------------------------------------------------------- fixtures

/// Items with random features and random (possibly missing) labels.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    n_items: usize,
    dim: usize,
    values: &[usize],
    missing: f64,
) -> Dataset {
    let attrs = values
        .iter()
        .enumerate()
        .map(|(a, &v)| {
            Attribute::new(
                format!("a{a}"),
                (0..v).map(|k| format!("v{k}")).collect::<Vec<_>>(),
            )
        })
        .collect();
    let schema = Schema::new(attrs).unwrap();
    let items = (0..n_items)
        .map(|i| Item {
            id: format!("it{i:04}"),
            split: [Split::Train, Split::Val, Split::Test][i % 3],
            labels: {
                let mut l: Vec<Option<usize>> = values
                    .iter()
                    .map(|&v| (!rng.gen_bool(missing)).then(|| rng.gen_range(0..v)))
                    .collect();
                if l.iter().all(Option::is_none) {
                    l[0] = Some(rng.gen_range(0..values[0]));
                }
                l
            },
            features: normals(rng, dim),
        })
        .collect();
    Dataset::new(schema, dim, items).unwrap()
}

/// A gallery of random points in `n_attr` spaces of dimension `dim`.
pub fn random_gallery(rng: &mut ChaCha8Rng, n: usize, n_attr: usize, dim: usize) -> Gallery {
    let ids = (0..n).map(|i| format!("g{i:05}")).collect();
    let embeddings = (0..n_attr)
        .map(|_| (0..n).map(|_| normals(rng, dim)).collect())
        .collect();
    Gallery::from_embeddings(ids, vec![vec![Some(0); n_attr]; n], embeddings)
}

pub fn random_constraints(rng: &mut ChaCha8Rng, n_items: usize, count: usize) -> ConstraintSet {
    let mut set = ConstraintSet::new();
    while set.len() < count {
        let closer = rng.gen_range(0..n_items);
        let farther = rng.gen_range(0..n_items);
        set.insert(Constraint {
            closer,
            farther,
            iteration: 0,
        });
    }
    set
}

pub fn random_excluded(rng: &mut ChaCha8Rng, n: usize, count: usize) -> BTreeSet<usize> {
    (0..count).map(|_| rng.gen_range(0..n)).collect()
}

// ---------------------------------------------------------------- criteria

fn track(max_err: &mut f64, a: f64, b: f64) {
    *max_err = max_err.max((a - b).abs());
}

/// Every closed-form quantity against its oracle on `n` random inputs each.
/// Returns per-function (name, max abs error, tolerance).
pub fn arithmetic_oracle_errors(seed: u64, n: usize) -> Vec<(&'static str, f64, f64)> {
    let mut rng = rng(seed);
    let mut out = Vec::new();

    let mut err = 0.0;
    for i in 0..n {
        let dim = rng.gen_range(1..9);
        let gi = normals(&mut rng, dim);
        let gj = normals(&mut rng, dim);
        let m: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        let normalize = i % 2 == 0;
        track(
            &mut err,
            masked_distance(&gi, &gj, &m, normalize),
            oracle_masked_distance(&gi, &gj, &m, normalize),
        );
    }
    out.push(("masked_distance", err, 1e-9));

    let mut err = 0.0;
    for _ in 0..n {
        let (dp, dn, margin) = (
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..1.0),
        );
        track(
            &mut err,
            triplet_loss(dp, dn, margin),
            oracle_triplet_loss(dp, dn, margin),
        );
    }
    out.push(("triplet_loss", err, 1e-7));

    let labels = |rng: &mut ChaCha8Rng, e: usize| -> Vec<Option<usize>> {
        (0..e)
            .map(|_| (!rng.gen_bool(0.2)).then(|| rng.gen_range(0..3)))
            .collect()
    };
    let mut err_w = 0.0;
    let mut err_m = 0.0;
    for _ in 0..n {
        let e = rng.gen_range(1..9);
        let (ax, ay, az) = (
            labels(&mut rng, e),
            labels(&mut rng, e),
            labels(&mut rng, e),
        );
        let w = oracle_global_weight(&ax, &ay, &az);
        track(&mut err_w, global_weight(&ax, &ay, &az, e), w);
        let cfg = EmbeddingConfig {
            margin: rng.gen_range(0.0..1.0),
            eta: rng.gen_range(0.0..1.0),
            ..Default::default()
        };
        track(
            &mut err_m,
            adaptive_margin(&ax, &ay, &az, &cfg),
            cfg.margin + cfg.eta * w,
        );
    }
    out.push(("global_weight", err_w, 1e-9));
    out.push(("adaptive_margin", err_m, 1e-9));

    let mut err_s = 0.0;
    let mut err_h = 0.0;
    for _ in 0..n {
        let items = rng.gen_range(2..12);
        let pts: Vec<Vec<f64>> = (0..items).map(|_| normals(&mut rng, 2)).collect();
        // Quantise so exact ties occur.
        let d: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| {
                pts.iter()
                    .map(|q| (((p[0] - q[0]).abs() + (p[1] - q[1]).abs()) * 2.0).round())
                    .collect()
            })
            .collect();
        let n_f = rng.gen_range(0..6).min(items * items - items);
        let f = random_constraints(&mut rng, items, n_f);
        let pairs: Vec<(usize, usize)> = f.iter().map(|c| (c.closer, c.farther)).collect();
        let dist = |i: usize, j: usize| d[i][j];
        let item = rng.gen_range(0..items);
        for l in [false, true] {
            track(
                &mut err_s,
                constraint_score(item, l, &f, dist),
                oracle_constraint_score(item, l, &pairs, &d),
            );
        }
        let pool: Vec<usize> = (0..items).filter(|_| rng.gen_bool(0.6)).collect();
        track(
            &mut err_h,
            model_entropy(&pool, &f, dist),
            oracle_entropy(&pool, &pairs, &d),
        );
    }
    out.push(("constraint_score", err_s, 1e-9));
    out.push(("model_entropy", err_h, 1e-7));

    let mut err = 0.0;
    for _ in 0..n {
        let inputs = rng.gen_range(1..5);
        let actions = rng.gen_range(1..4);
        let net = random_net(&mut rng, inputs, [3, 3], actions);
        let target = random_net(&mut rng, inputs, [3, 3], actions);
        let batch: Vec<Transition> = (0..rng.gen_range(1..5))
            .map(|_| random_transition(&mut rng, inputs, actions))
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let gamma = rng.gen_range(0.0..1.0);
        track(
            &mut err,
            huber_td_loss(&net, &target, &refs, gamma).0,
            oracle_td_loss(&net, &target, &batch, gamma).0,
        );
    }
    out.push(("huber_td_loss", err, 1e-7));
    out
}

/// Relative error with the denominator floored at 1e-6, below which central
/// differences at step 1e-5 are dominated by rounding.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

const FD_STEP: f64 = 1e-5;
const KINK_GAP: f64 = 1e-3;

fn hinge_values(
    model: &EmbeddingModel,
    data: &Dataset,
    batch: &[Triplet],
    cfg: &EmbeddingConfig,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            let g = |i: usize| model.general(&data.item(i).features);
            let m = model.mask(t.attribute);
            let norm = model.constrained;
            let (x, y, z) = (g(t.anchor), g(t.positive), g(t.negative));
            let l = |i: usize| data.item(i).labels.as_slice();
            adaptive_margin(l(t.anchor), l(t.positive), l(t.negative), cfg)
                + masked_distance(&x, &y, &m, norm)
                - masked_distance(&x, &z, &m, norm)
        })
        .collect()
}

/// Finite-difference check of `csn_loss` on one random tiny instance.
/// Returns `None` when the instance sits too close to a kink.
pub fn csn_gradient_error(rng: &mut ChaCha8Rng, variant: Variant) -> Option<f64> {
    let data = random_dataset(rng, 10, 3, &[3, 2], 0.0);
    let mut batch = Vec::new();
    for a in 0..2 {
        batch.extend(sample_triplets(&data, None, a, 3, rng.gen()).ok()?);
    }
    let mut cfg = EmbeddingConfig::for_variant(variant);
    cfg.lambda1 = 0.05;
    cfg.lambda2 = 0.02;
    let mut model = EmbeddingModel::init(3, 4, 2, cfg.constrained, rng.gen());
    if cfg.constrained {
        model.mask_params.iter_mut().for_each(|p| *p = normal(rng));
    }
    if hinge_values(&model, &data, &batch, &cfg)
        .iter()
        .any(|h| h.abs() < KINK_GAP)
    {
        return None;
    }
    if !cfg.constrained && model.mask_params.iter().any(|m| m.abs() < KINK_GAP) {
        return None;
    }
    let (_, grads) = csn_loss(&model, &data, &batch, &cfg);
    let mut worst = 0.0f64;
    let blocks: [(fn(&mut EmbeddingModel) -> &mut Vec<f64>, &Vec<f64>); 3] = [
        (|m| &mut m.weights, &grads.weights),
        (|m| &mut m.bias, &grads.bias),
        (|m| &mut m.mask_params, &grads.mask_params),
    ];
    for (access, analytic) in blocks {
        for k in 0..analytic.len() {
            let mut plus = model.clone();
            access(&mut plus)[k] += FD_STEP;
            let mut minus = model.clone();
            access(&mut minus)[k] -= FD_STEP;
            let numeric = (csn_loss(&plus, &data, &batch, &cfg).0
                - csn_loss(&minus, &data, &batch, &cfg).0)
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k], numeric));
        }
    }
    Some(worst)
}

/// Finite-difference check of `huber_td_loss` with respect to the online network.
pub fn huber_gradient_error(rng: &mut ChaCha8Rng) -> Option<f64> {
    let (inputs, actions) = (4, 3);
    let net = random_net(rng, inputs, [5, 4], actions);
    let target = random_net(rng, inputs, [5, 4], actions);
    let batch: Vec<Transition> = (0..6)
        .map(|_| random_transition(rng, inputs, actions))
        .collect();
    let gamma = 0.9;
    let (_, deltas) = oracle_td_loss(&net, &target, &batch, gamma);
    if deltas.iter().any(|d| (d.abs() - 1.0).abs() < KINK_GAP) {
        return None;
    }
    for t in &batch {
        let (_, pre) = oracle_forward(&net, &t.state);
        if pre.iter().flatten().any(|z| z.abs() < KINK_GAP) {
            return None;
        }
    }
    let refs: Vec<&Transition> = batch.iter().collect();
    let (_, grads) = huber_td_loss(&net, &target, &refs, gamma);
    let loss = |n: &QNetwork| huber_td_loss(n, &target, &refs, gamma).0;
    let mut worst = 0.0f64;
    for l in 0..3 {
        for (is_bias, len) in [
            (false, net.layers[l].weights.len()),
            (true, net.layers[l].bias.len()),
        ] {
            for k in 0..len {
                let bump = |delta: f64| {
                    let mut n = net.clone();
                    if is_bias {
                        n.layers[l].bias[k] += delta;
                    } else {
                        n.layers[l].weights[k] += delta;
                    }
                    n
                };
                let numeric = (loss(&bump(FD_STEP)) - loss(&bump(-FD_STEP))) / (2.0 * FD_STEP);
                let analytic = if is_bias {
                    grads.layers[l].bias[k]
                } else {
                    grads.layers[l].weights[k]
                };
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    Some(worst)
}

/// Runs `check` until `count` instances away from kinks have been evaluated.
pub fn collect_instances(count: usize, mut check: impl FnMut() -> Option<f64>) -> (usize, f64) {
    let mut done = 0;
    let mut worst = 0.0f64;
    let mut attempts = 0;
    while done < count && attempts < count * 50 {
        attempts += 1;
        if let Some(e) = check() {
            done += 1;
            worst = worst.max(e);
        }
    }
    (done, worst)
}

/// `fcs_select` by brute force: (most satisfied, nearest, lowest position).
pub fn oracle_fcs(
    gallery: &Gallery,
    query: usize,
    attribute: usize,
    k: usize,
    excluded: &BTreeSet<usize>,
    f: &ConstraintSet,
) -> Vec<usize> {
    let d = |i: usize, j: usize| {
        let (a, b) = (
            gallery.embedding(attribute, i),
            gallery.embedding(attribute, j),
        );
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut keyed: Vec<(i64, f64, usize)> = (0..gallery.len())
        .filter(|i| !excluded.contains(i))
        .map(|i| {
            let sat = f
                .iter()
                .filter(|c| d(i, c.closer) < d(i, c.farther))
                .count() as i64;
            (-sat, d(query, i), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    keyed.into_iter().take(k).map(|x| x.2).collect()
}

pub struct SelectorReport {
    pub nn_agree: usize,
    pub nn_total: usize,
    pub oracle_agree: usize,
    pub oracle_total: usize,
}

pub fn selector_equivalences(
    seed: u64,
    nn_queries: usize,
    fixtures: usize,
    queries_per_fixture: usize,
) -> SelectorReport {
    let mut rng = rng(seed);
    let gallery = random_gallery(&mut rng, 300, 4, 6);
    let empty = ConstraintSet::new();
    let mut nn_agree = 0;
    for _ in 0..nn_queries {
        let q = rng.gen_range(0..gallery.len());
        let a = rng.gen_range(0..4);
        let n_ex = rng.gen_range(0..40);
        let mut excluded = random_excluded(&mut rng, gallery.len(), n_ex);
        excluded.insert(q);
        let k = rng.gen_range(1..9);
        if fcs_select(&gallery, q, a, k, &excluded, &empty)
            == nn_select(&gallery, q, a, k, &excluded)
        {
            nn_agree += 1;
        }
    }
    let mut oracle_agree = 0;
    for _ in 0..fixtures {
        let g = random_gallery(&mut rng, 200, 2, 3);
        for _ in 0..queries_per_fixture {
            let q = rng.gen_range(0..200);
            let n_f = rng.gen_range(0..25);
            let f = random_constraints(&mut rng, 200, n_f);
            let n_ex = rng.gen_range(0..30);
            let excluded = random_excluded(&mut rng, 200, n_ex);
            let a = rng.gen_range(0..2);
            let got = fcs_select(&g, q, a, 4, &excluded, &f).items;
            if got == oracle_fcs(&g, q, a, 4, &excluded, &f) {
                oracle_agree += 1;
            }
        }
    }
    SelectorReport {
        nn_agree,
        nn_total: nn_queries,
        oracle_agree,
        oracle_total: fixtures * queries_per_fixture,
    }
}

pub fn shuffled<T: Clone>(rng: &mut ChaCha8Rng, v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.shuffle(rng);
    v
}

// ---------------------------------------------------------------- pipeline

/// Desk-scale end-to-end configuration.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub data: SyntheticConfig,
    pub variant: Variant,
    pub epochs: usize,
    pub triplets_per_attribute: usize,
    pub val_triplets_per_attribute: usize,
    pub platt_pairs: usize,
    pub test_pairs_per_attribute: usize,
    pub train_pairs_per_attribute: usize,
    pub dqn: DqnConfig,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            data: SyntheticConfig::default(),
            variant: Variant::Global,
            epochs: 20,
            triplets_per_attribute: 5000,
            val_triplets_per_attribute: 1000,
            platt_pairs: 10_000,
            test_pairs_per_attribute: 125,
            train_pairs_per_attribute: 2000,
            dqn: DqnConfig::default(),
            max_steps: 50,
            seed: 0,
        }
    }
}

pub struct EmbeddingRun {
    pub dataset: Dataset,
    pub model: EmbeddingModel,
    pub config: EmbeddingConfig,
    pub log: TrainingLog,
    /// Satisfaction rate on held-out test-split triplets.
    pub test_rate: f64,
}

pub struct PipelineRun {
    pub embedding: EmbeddingRun,
    pub platt: PlattSet,
    pub dqn: QNetwork,
    pub dqn_log: DqnLog,
    pub report: BenchmarkReport,
    pub logs: Vec<Vec<SessionLog>>,
}

impl Pipeline {
    pub fn train_embedding(&self) -> EmbeddingRun {
        let dataset = generate_synthetic(&default_schema(), &self.data).expect("synthetic data");
        let n_attr = dataset.schema().len();
        let draw = |split, n, offset: u64| -> Vec<Triplet> {
            (0..n_attr)
                .flat_map(|a| {
                    sample_triplets(
                        &dataset,
                        Some(split),
                        a,
                        n,
                        self.seed * 1000 + offset + a as u64,
                    )
                    .expect("triplets")
                })
                .collect()
        };
        let tr = draw(Split::Train, self.triplets_per_attribute, 0);
        let va = draw(Split::Val, self.val_triplets_per_attribute, 100);
        let te = draw(Split::Test, self.val_triplets_per_attribute, 200);
        let mut config = EmbeddingConfig::for_variant(self.variant);
        config.epochs = self.epochs;
        config.seed = self.seed;
        let (model, log) = train(&dataset, &tr, &va, &config).expect("training");
        let test_rate = satisfaction_rate(&model, &dataset, &te).expect("test triplets");
        EmbeddingRun {
            dataset,
            model,
            config,
            log,
            test_rate,
        }
    }

    /// Trains everything and benchmarks NN, FCS, FCS+EER, FCS+DQN (untrained)
    /// and FCS+DQN (trained) on the test split.
    pub fn run(&self) -> PipelineRun {
        let embedding = self.train_embedding();
        let (ds, model) = (&embedding.dataset, &embedding.model);
        let train_g = Arc::new(Gallery::from_split(model, ds, Some(Split::Train)));
        let test_g = Arc::new(Gallery::from_split(model, ds, Some(Split::Test)));
        let platt = PlattSet::fit(&train_g, self.platt_pairs, self.seed + 7).expect("platt");
        let test_pairs = test_g
            .pair_positions(
                &sample_query_target_pairs(
                    ds,
                    Some(Split::Test),
                    self.test_pairs_per_attribute,
                    self.seed + 11,
                )
                .expect("pairs"),
            )
            .expect("test positions");
        let train_pairs = train_g
            .pair_positions(
                &sample_query_target_pairs(
                    ds,
                    Some(Split::Train),
                    self.train_pairs_per_attribute,
                    self.seed + 12,
                )
                .expect("pairs"),
            )
            .expect("train positions");
        let (dqn, dqn_log) = train_dqn(train_g.clone(), &train_pairs, &self.dqn).expect("dqn");
        let slots = self.dqn.candidates_per_attribute;
        let untrained = QNetwork::init(
            state_dim(slots, test_g.embedding_dim(), test_g.n_attributes()),
            self.dqn.hidden,
            slots,
            self.dqn.seed,
        );
        let base = Engine::new(test_g).with_platt(platt.clone());
        let e_untrained = base.clone().with_dqn(untrained);
        let e_trained = base.clone().with_dqn(dqn.clone());
        let spec = |label: &str, strategy, engine| StrategySpec {
            label: label.to_string(),
            strategy,
            engine,
        };
        let specs = [
            spec("NN", Strategy::Nn, &base),
            spec("FCS", Strategy::Fcs, &base),
            spec("FCS+EER", Strategy::Eer, &base),
            spec("FCS+DQN (untrained)", Strategy::Dqn, &e_untrained),
            spec("FCS+DQN", Strategy::Dqn, &e_trained),
        ];
        let (report, logs) =
            benchmark(&specs, &test_pairs, self.max_steps, self.seed).expect("benchmark");
        PipelineRun {
            embedding,
            platt,
            dqn,
            dqn_log,
            report,
            logs,
        }
    }
}

impl Pipeline {
    /// A few seconds end to end; for round-trip and determinism checks.
    pub fn small() -> Self {
        Pipeline {
            data: SyntheticConfig {
                n_items: 400,
                ..Default::default()
            },
            epochs: 3,
            triplets_per_attribute: 300,
            val_triplets_per_attribute: 100,
            platt_pairs: 500,
            test_pairs_per_attribute: 5,
            train_pairs_per_attribute: 50,
            dqn: DqnConfig {
                episodes: 6,
                batch_size: 32,
                replay_capacity: 500,
                target_sync_every: 20,
                ..Default::default()
            },
            max_steps: 20,
            ..Default::default()
        }
    }
}

/// Every artifact a run writes, serialized as it would be on disk.
pub fn artifacts(run: &PipelineRun) -> Vec<(String, String)> {
    use attrsearch_core::checkpoint::{DqnCheckpoint, EmbeddingCheckpoint, PlattCheckpoint};
    let e = &run.embedding;
    let schema = e.dataset.schema().clone();
    let mut out = vec![
        ("dataset".to_string(), e.dataset.to_text()),
        (
            "embedding".to_string(),
            json(&EmbeddingCheckpoint::new(
                schema.clone(),
                e.model.clone(),
                e.config.clone(),
                e.log.clone(),
                serde_json::Value::Null,
            )),
        ),
        (
            "platt".to_string(),
            json(&PlattCheckpoint::new(&schema, run.platt.clone(), 0, 0)),
        ),
        (
            "dqn".to_string(),
            json(&DqnCheckpoint::new(
                &schema,
                e.model.embedding_dim,
                run.dqn.clone(),
                Default::default(),
                run.dqn_log.clone(),
                serde_json::Value::Null,
            )),
        ),
        ("report".to_string(), json(&run.report)),
    ];
    for (s, logs) in run.logs.iter().enumerate() {
        out.push((
            format!("logs[{s}]"),
            logs.iter().map(SessionLog::to_jsonl).collect(),
        ));
    }
    out
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}
