//! The search loop: candidate pools, re-ranking, feedback, database ranking and
//! the simulated user.
//!
//! All item references inside a session are gallery positions. Logs carry ids.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dqn::{build_state, greedy_action, QNetwork};
use crate::eer::{eer_rerank, proxy_target, EerContext, PlattSet};
use crate::gallery::{DistanceCache, Gallery};
use crate::selection::{rank_candidates, update_constraints, ConstraintSet, SatisfactionIndex};
use crate::{Error, Result};

/// Candidates drawn per attribute before re-ranking.
pub const DEFAULT_CANDIDATES_PER_ATTRIBUTE: usize = 4;
pub const DEFAULT_MAX_STEPS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Nearest neighbours of the query per attribute.
    Nn,
    /// Feedback constraint satisfaction.
    Fcs,
    /// FCS pool re-ranked by expected error reduction.
    Eer,
    /// FCS pool re-ranked by the Q-network.
    Dqn,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Nn, Strategy::Fcs, Strategy::Eer, Strategy::Dqn];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Nn => "NN",
            Strategy::Fcs => "FCS",
            Strategy::Eer => "FCS+EER",
            Strategy::Dqn => "FCS+DQN",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Nn => "nn",
            Strategy::Fcs => "fcs",
            Strategy::Eer => "eer",
            Strategy::Dqn => "dqn",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(Strategy::Nn),
            "fcs" => Ok(Strategy::Fcs),
            "eer" | "fcs+eer" => Ok(Strategy::Eer),
            "dqn" | "fcs+dqn" => Ok(Strategy::Dqn),
            _ => Err(Error::Config(format!(
                "unknown strategy {s:?} (nn, fcs, eer, dqn)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Found,
    Exhausted,
    Capped,
}

/// Everything a session needs that is shared across sessions.
#[derive(Clone, Debug)]
pub struct Engine {
    pub gallery: Arc<Gallery>,
    pub platt: Option<PlattSet>,
    pub dqn: Option<QNetwork>,
    pub candidates_per_attribute: usize,
}

impl Engine {
    pub fn new(gallery: Arc<Gallery>) -> Self {
        Engine {
            gallery,
            platt: None,
            dqn: None,
            candidates_per_attribute: DEFAULT_CANDIDATES_PER_ATTRIBUTE,
        }
    }

    pub fn with_platt(mut self, platt: PlattSet) -> Self {
        self.platt = Some(platt);
        self
    }

    pub fn with_dqn(mut self, net: QNetwork) -> Self {
        self.dqn = Some(net);
        self
    }

    /// Whether `strategy` can run on this engine.
    pub fn supports(&self, strategy: Strategy) -> Result<()> {
        match strategy {
            Strategy::Eer if self.platt.is_none() => {
                Err(Error::Config("EER needs Platt calibration".into()))
            }
            Strategy::Dqn => {
                let net = self
                    .dqn
                    .as_ref()
                    .ok_or_else(|| Error::Config("DQN strategy needs a Q-network".into()))?;
                let expected = self.candidates_per_attribute * self.gallery.embedding_dim()
                    + self.gallery.n_attributes();
                if net.input_dim() != expected || net.actions() != self.candidates_per_attribute {
                    return Err(Error::Config(format!(
                        "Q-network shape {}→{} does not fit {} candidates of dimension {} over {} attributes",
                        net.input_dim(),
                        net.actions(),
                        self.candidates_per_attribute,
                        self.gallery.embedding_dim(),
                        self.gallery.n_attributes()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub initial_query: usize,
    pub query: usize,
    pub target: Option<usize>,
    pub constraints: ConstraintSet,
    /// Items shown so far, not counting the initial query.
    pub presented: BTreeSet<usize>,
    /// Queries in order, starting with the initial one.
    pub queries: Vec<usize>,
    pub step: usize,
    pub strategy: Strategy,
    pub status: Status,
    pub max_steps: usize,
}

impl SessionState {
    /// Items no selector may offer again.
    pub fn seen(&self) -> BTreeSet<usize> {
        let mut s = self.presented.clone();
        s.insert(self.initial_query);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shown {
    pub attribute: usize,
    pub item: usize,
}

/// One round of candidates awaiting feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Presentation {
    /// 1-based iteration this presentation belongs to.
    pub step: usize,
    /// Per attribute, the selector's candidates (disjoint across attributes).
    pub pool: Vec<Vec<usize>>,
    /// At most one per attribute, in attribute order.
    pub shown: Vec<Shown>,
}

impl Presentation {
    pub fn items(&self) -> Vec<usize> {
        self.shown.iter().map(|s| s.item).collect()
    }
}

/// A user's response to a presentation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    /// Candidates judged closer to the target than the current query.
    pub accepted: Vec<usize>,
    /// The accepted candidate that becomes the next query.
    pub chosen: Option<usize>,
    /// Live mode only: the chosen item is the user's target.
    #[serde(default)]
    pub found: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShownRecord {
    pub attribute: String,
    pub id: String,
}

/// One feedback round as written to a session log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub query: String,
    pub presented: Vec<ShownRecord>,
    pub accepted: Vec<String>,
    pub rejected: Vec<String>,
    pub chosen: Option<String>,
    /// `true` when the user declared the chosen item their target (live mode).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub declared_found: bool,
    pub constraints_added: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_rank: Option<usize>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub strategy: Strategy,
    pub max_steps: usize,
    pub candidates_per_attribute: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_target_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Header(SessionHeader),
    Step(StepRecord),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub steps: Vec<StepRecord>,
}

impl SessionLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&LogLine::Header(self.header.clone()))
            .expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(
                &serde_json::to_string(&LogLine::Step(s.clone())).expect("step serializes"),
            );
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line).map_err(|e| Error::parse(n + 1, e.to_string()))? {
                LogLine::Header(h) if header.is_none() => header = Some(h),
                LogLine::Header(_) => return Err(Error::parse(n + 1, "second header")),
                LogLine::Step(s) => steps.push(s),
            }
        }
        let header = header.ok_or(Error::Empty("session log header"))?;
        Ok(SessionLog { header, steps })
    }

    /// Steps the session took (its last recorded step number).
    pub fn steps_taken(&self) -> usize {
        self.steps.last().map_or(0, |s| s.step)
    }

    pub fn final_status(&self) -> Status {
        self.steps.last().map_or(Status::Active, |s| s.status)
    }

    pub fn rank_curve(&self) -> Option<Vec<usize>> {
        std::iter::once(self.header.initial_target_rank)
            .chain(self.steps.iter().map(|s| s.target_rank))
            .collect()
    }
}

/// A single search session. The state machine is:
/// `candidates` (idempotent until feedback) → `apply_feedback` → … until the
/// target is shown (`found`), the database runs out (`exhausted`) or
/// `max_steps` rounds have passed (`capped`).
#[derive(Clone, Debug)]
pub struct Session {
    state: SessionState,
    cache: DistanceCache,
    index: SatisfactionIndex,
    pending: Option<Presentation>,
}

impl Session {
    pub fn new(
        engine: &Engine,
        query: usize,
        target: Option<usize>,
        strategy: Strategy,
        max_steps: usize,
    ) -> Result<Self> {
        let n = engine.gallery.len();
        if query >= n || target.is_some_and(|t| t >= n) {
            return Err(Error::Config("query or target outside the gallery".into()));
        }
        if target == Some(query) {
            return Err(Error::Config("query and target are the same item".into()));
        }
        if max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        engine.supports(strategy)?;
        Ok(Session {
            state: SessionState {
                initial_query: query,
                query,
                target,
                constraints: ConstraintSet::new(),
                presented: BTreeSet::new(),
                queries: vec![query],
                step: 0,
                strategy,
                status: Status::Active,
                max_steps,
            },
            cache: DistanceCache::default(),
            index: SatisfactionIndex::new(engine.gallery.n_attributes() + 1, n),
            pending: None,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn is_active(&self) -> bool {
        self.state.status == Status::Active
    }

    pub fn pending(&self) -> Option<&Presentation> {
        self.pending.as_ref()
    }

    /// Satisfied-constraint counts per space (attribute spaces, then pooled).
    pub fn satisfaction(&self) -> &SatisfactionIndex {
        &self.index
    }

    fn require_active(&self) -> Result<()> {
        match self.state.status {
            Status::Active => Ok(()),
            s => Err(Error::Inactive(format!("session is {s:?}").to_lowercase())),
        }
    }

    /// Per-attribute candidate lists for the current query: nearest neighbours
    /// for the NN strategy, FCS otherwise. Attributes draft in turn, one item
    /// per turn, so lists are disjoint and every attribute gets an item while
    /// at least one per attribute remains. Everything already seen is excluded.
    pub fn pool(&mut self, engine: &Engine) -> Vec<Vec<usize>> {
        let gallery = &engine.gallery;
        let n_attr = gallery.n_attributes();
        let k = engine.candidates_per_attribute;
        let rows = self.cache.rows(gallery, self.state.query);
        let seen = self.state.seen();
        // Others take fewer than k·E items, so k·E ranked items always suffice.
        let ranked: Vec<Vec<usize>> = (0..n_attr)
            .map(|a| {
                let counts = (self.state.strategy != Strategy::Nn).then(|| self.index.counts(a));
                rank_candidates(&seen, k * n_attr, counts, &rows[a]).items
            })
            .collect();
        let mut taken = BTreeSet::new();
        let mut cursor = vec![0usize; n_attr];
        let mut pool = vec![Vec::with_capacity(k); n_attr];
        for _ in 0..k {
            for a in 0..n_attr {
                while let Some(&item) = ranked[a].get(cursor[a]) {
                    cursor[a] += 1;
                    if taken.insert(item) {
                        pool[a].push(item);
                        break;
                    }
                }
            }
        }
        pool
    }

    /// The current round's candidates, computing them on first call. Repeated
    /// calls return the same presentation until feedback is applied.
    pub fn candidates(&mut self, engine: &Engine) -> Result<&Presentation> {
        self.require_active()?;
        if self.pending.is_none() {
            let pool = self.pool(engine);
            let picks = self.pick(engine, &pool)?;
            self.present(pool, picks)?;
        }
        Ok(self.pending.as_ref().expect("presentation just set"))
    }

    fn pick(&mut self, engine: &Engine, pool: &[Vec<usize>]) -> Result<Vec<Option<usize>>> {
        match self.state.strategy {
            Strategy::Nn | Strategy::Fcs => Ok(pool.iter().map(|l| l.first().copied()).collect()),
            Strategy::Eer => {
                let platt = engine
                    .platt
                    .as_ref()
                    .ok_or_else(|| Error::Config("EER needs Platt calibration".into()))?;
                if pool.iter().all(Vec::is_empty) {
                    return Ok(vec![None; pool.len()]);
                }
                let proxy = self.proxy_target(engine)?;
                let flat: Vec<usize> = pool.concat();
                let pooled = self.index.counts(engine.gallery.n_attributes());
                let pool_counts: Vec<u32> = flat.iter().map(|&o| pooled[o]).collect();
                let ctx = EerContext {
                    gallery: &engine.gallery,
                    query: self.state.query,
                    proxy_target: proxy,
                    constraints: &self.state.constraints,
                    pool: &flat,
                    pool_counts: &pool_counts,
                };
                Ok(eer_rerank(&ctx, platt, pool))
            }
            Strategy::Dqn => {
                let net = engine
                    .dqn
                    .as_ref()
                    .ok_or_else(|| Error::Config("DQN strategy needs a Q-network".into()))?;
                let mut picks = Vec::with_capacity(pool.len());
                for (a, list) in pool.iter().enumerate() {
                    if list.is_empty() {
                        picks.push(None);
                        continue;
                    }
                    let state = build_state(
                        &engine.gallery,
                        a,
                        list,
                        self.state.query,
                        engine.candidates_per_attribute,
                    );
                    let action = greedy_action(net, &state)?;
                    picks.push(Some(list[action]));
                }
                Ok(picks)
            }
        }
    }

    /// Installs an explicit presentation: `picks[a]` must come from `pool[a]`.
    /// With nothing to pick the session becomes exhausted.
    pub fn present(
        &mut self,
        pool: Vec<Vec<usize>>,
        picks: Vec<Option<usize>>,
    ) -> Result<&Presentation> {
        self.require_active()?;
        if picks.len() != pool.len() {
            return Err(Error::Config("one pick per attribute required".into()));
        }
        let mut shown = Vec::new();
        for (a, (list, pick)) in pool.iter().zip(&picks).enumerate() {
            if let Some(item) = *pick {
                if !list.contains(&item) {
                    return Err(Error::Config(format!(
                        "pick {item} is not in attribute {a}'s pool"
                    )));
                }
                shown.push(Shown { attribute: a, item });
            }
        }
        if shown.is_empty() {
            self.state.status = Status::Exhausted;
            self.pending = None;
            return Err(Error::Inactive("session is exhausted".into()));
        }
        self.pending = Some(Presentation {
            step: self.state.step + 1,
            pool,
            shown,
        });
        Ok(self.pending.as_ref().expect("presentation just set"))
    }

    /// Items ordered by (most constraints satisfied in the pooled space,
    /// nearest the query in the pooled space, lowest position).
    pub fn rank_database(&mut self, engine: &Engine) -> Vec<usize> {
        let rows = self.cache.rows(&engine.gallery, self.state.query);
        let dist = &rows[engine.gallery.n_attributes()];
        let counts = self.index.counts(engine.gallery.n_attributes());
        let mut order: Vec<usize> = (0..engine.gallery.len()).collect();
        order.sort_unstable_by(|&a, &b| {
            counts[b]
                .cmp(&counts[a])
                .then(dist[a].total_cmp(&dist[b]))
                .then(a.cmp(&b))
        });
        order
    }

    /// 1-based position of `item` in [`Session::rank_database`].
    pub fn rank_of(&mut self, engine: &Engine, item: usize) -> usize {
        let rows = self.cache.rows(&engine.gallery, self.state.query);
        let dist = &rows[engine.gallery.n_attributes()];
        let counts = self.index.counts(engine.gallery.n_attributes());
        let before = |j: usize| {
            counts[j]
                .cmp(&counts[item])
                .reverse()
                .then(dist[j].total_cmp(&dist[item]))
                .then(j.cmp(&item))
                .is_lt()
        };
        1 + (0..engine.gallery.len()).filter(|&j| before(j)).count()
    }

    /// The target's rank; 1 once it has been found.
    pub fn target_rank(&mut self, engine: &Engine) -> Option<usize> {
        let target = self.state.target?;
        if self.state.status == Status::Found {
            return Some(1);
        }
        Some(self.rank_of(engine, target))
    }

    /// Best-ranked item not shown yet.
    pub fn proxy_target(&mut self, engine: &Engine) -> Result<usize> {
        let seen = self.state.seen();
        proxy_target(self.rank_database(engine), &seen)
    }

    /// The simulated user: a shown candidate is accepted when its pooled
    /// distance to the target is smaller than the query's; the closest accepted
    /// candidate is chosen.
    pub fn simulate_feedback(&mut self, engine: &Engine) -> Result<Feedback> {
        let target = self
            .state
            .target
            .ok_or_else(|| Error::Feedback("simulated feedback needs a known target".into()))?;
        let shown = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Feedback("no candidates outstanding".into()))?
            .items();
        let rows = self.cache.rows(&engine.gallery, target);
        let pooled = &rows[engine.gallery.n_attributes()];
        let bar = pooled[self.state.query];
        let accepted: Vec<usize> = shown.iter().copied().filter(|&c| pooled[c] < bar).collect();
        let mut chosen: Option<usize> = None;
        for &c in &accepted {
            if chosen.is_none_or(|b| pooled[c] < pooled[b]) {
                chosen = Some(c);
            }
        }
        Ok(Feedback {
            accepted,
            chosen,
            found: false,
        })
    }

    /// Applies a response to the outstanding presentation. The chosen item is
    /// counted as accepted; accepting without choosing is an error. On error
    /// the session is unchanged.
    pub fn apply_feedback(&mut self, engine: &Engine, feedback: &Feedback) -> Result<StepRecord> {
        self.require_active()?;
        let presentation = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Feedback("no candidates outstanding".into()))?;
        let shown = presentation.items();
        let mut accepted: Vec<usize> = Vec::new();
        for &a in &feedback.accepted {
            if !shown.contains(&a) {
                return Err(Error::Feedback(format!(
                    "item {} was not presented",
                    engine.gallery.id(a)
                )));
            }
            if accepted.contains(&a) {
                return Err(Error::Feedback(format!(
                    "item {} accepted twice",
                    engine.gallery.id(a)
                )));
            }
            accepted.push(a);
        }
        if let Some(c) = feedback.chosen {
            if !shown.contains(&c) {
                return Err(Error::Feedback(format!(
                    "item {} was not presented",
                    engine.gallery.id(c)
                )));
            }
            if !accepted.contains(&c) {
                accepted.push(c);
            }
        } else if !accepted.is_empty() {
            return Err(Error::Feedback(
                "accepted candidates need a chosen one".into(),
            ));
        }
        if feedback.found && feedback.chosen.is_none() {
            return Err(Error::Feedback("found needs a chosen item".into()));
        }

        let presentation = self.pending.take().expect("checked above");
        let old_query = self.state.query;
        self.state.step += 1;
        let added = update_constraints(
            &mut self.state.constraints,
            old_query,
            &shown,
            &accepted,
            self.state.step,
        );
        for c in &added {
            let near = self.cache.rows(&engine.gallery, c.closer);
            let far = self.cache.rows(&engine.gallery, c.farther);
            self.index.add(&near, &far);
        }
        self.state.presented.extend(shown.iter().copied());
        if let Some(c) = feedback.chosen {
            self.state.query = c;
            self.state.queries.push(c);
        }
        let found = match self.state.target {
            Some(t) => self.state.presented.contains(&t),
            None => feedback.found,
        };
        self.state.status = if found {
            Status::Found
        } else if self.state.step >= self.state.max_steps {
            Status::Capped
        } else {
            Status::Active
        };

        let g = &engine.gallery;
        let id = |i: usize| g.id(i).to_string();
        Ok(StepRecord {
            step: self.state.step,
            query: id(old_query),
            presented: presentation
                .shown
                .iter()
                .map(|s| ShownRecord {
                    attribute: g.attribute_name(s.attribute).to_string(),
                    id: id(s.item),
                })
                .collect(),
            accepted: accepted.iter().map(|&i| id(i)).collect(),
            rejected: shown
                .iter()
                .filter(|i| !accepted.contains(i))
                .map(|&i| id(i))
                .collect(),
            chosen: feedback.chosen.map(id),
            declared_found: self.state.target.is_none() && feedback.found,
            constraints_added: added.len(),
            target_rank: self.target_rank(engine),
            status: self.state.status,
        })
    }

    pub fn header(&mut self, engine: &Engine) -> SessionHeader {
        let g = &engine.gallery;
        SessionHeader {
            query: g.id(self.state.initial_query).to_string(),
            target: self.state.target.map(|t| g.id(t).to_string()),
            strategy: self.state.strategy,
            max_steps: self.state.max_steps,
            candidates_per_attribute: engine.candidates_per_attribute,
            initial_target_rank: if self.state.step == 0 {
                self.target_rank(engine)
            } else {
                None
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionOutcome {
    pub steps: usize,
    pub status: Status,
    /// Target rank before the first round and after each round.
    pub rank_curve: Vec<usize>,
    pub log: SessionLog,
}

/// Runs a simulated session to completion.
pub fn run_session(
    engine: &Engine,
    query: usize,
    target: usize,
    strategy: Strategy,
    max_steps: usize,
) -> Result<SessionOutcome> {
    let mut session = Session::new(engine, query, Some(target), strategy, max_steps)?;
    let header = session.header(engine);
    let mut rank_curve = vec![header.initial_target_rank.expect("target known")];
    let mut steps = Vec::new();
    while session.is_active() {
        match session.candidates(engine) {
            Ok(_) => {}
            Err(Error::Inactive(_)) => break,
            Err(e) => return Err(e),
        }
        let feedback = session.simulate_feedback(engine)?;
        let record = session.apply_feedback(engine, &feedback)?;
        rank_curve.push(record.target_rank.expect("target known"));
        steps.push(record);
    }
    Ok(SessionOutcome {
        steps: session.state().step,
        status: session.state().status,
        rank_curve,
        log: SessionLog { header, steps },
    })
}
