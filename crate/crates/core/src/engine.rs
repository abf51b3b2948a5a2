//! Query evaluation.
//!
//! Both evaluators walk the `Where` tree leaf by leaf. For each leaf the
//! candidate instances of both sides are retrieved in strict precedence:
//!
//! 1. instances that survived an earlier leaf of the same query (no fetch),
//! 2. targets of top-level links (only the linked evaluator has a store),
//! 3. the whole population of the type.
//!
//! Survivors flow forward through `And` and are merged after `Or`. Once the
//! tree has been walked, the answer is the best binding (one instance per
//! type) that satisfies the whole tree, re-checked against the network.
//!
//! [`evaluate_full`] is the optimal baseline: its answer comes from an
//! exhaustive enumeration over every instance. [`evaluate_linked`] searches
//! only the surviving candidate pools and falls back to a full evaluation
//! when a link-assisted attempt finds no answer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkstore::{build_path, Direction, LinkStore, PathKey, Polarity};
use crate::model::{
    Answer, CompareOp, Comparison, InstanceId, Logical, ModelError, Network, Query, SourceTypeId,
    WhereTree,
};

/// Surviving instances per source type, carried between leaves.
pub type Context = BTreeMap<SourceTypeId, BTreeSet<InstanceId>>;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    PreviousEval,
    Links,
    FullSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lhs,
    Rhs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafOrder {
    /// Left operand of every `And` first.
    #[default]
    Ltr,
    Rtl,
}

impl std::str::FromStr for LeafOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ltr" => Ok(LeafOrder::Ltr),
            "rtl" => Ok(LeafOrder::Rtl),
            other => Err(format!("unknown leaf order {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub direction: Direction,
    pub leaf_order: LeafOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub source_type: SourceTypeId,
    pub instances: BTreeSet<InstanceId>,
    pub provenance: Provenance,
}

/// Candidates for both sides of one leaf plus what retrieving them cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafCandidates {
    pub lhs: CandidateSet,
    pub rhs: CandidateSet,
    /// Instances fetched from the network.
    pub nodes: u64,
    /// `(origin, target)` link refs returned by the store.
    pub link_refs: Vec<(InstanceId, InstanceId)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LeafOutcome {
    /// Satisfying `(lhs, rhs)` pairs; empty for same-type leaves.
    pub pairs: Vec<(InstanceId, InstanceId)>,
    pub lhs_survivors: BTreeSet<InstanceId>,
    pub rhs_survivors: BTreeSet<InstanceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeafTrace {
    /// Position of the leaf in left-to-right order.
    pub leaf: usize,
    pub lhs: Provenance,
    pub rhs: Provenance,
    pub nodes: u64,
    pub pairs: Vec<(InstanceId, InstanceId)>,
}

/// A link that was used for a leaf but whose candidate matched nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct UnmatchedLink {
    pub leaf: usize,
    pub origin: InstanceId,
    pub target: InstanceId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalResult {
    pub answer: Answer,
    pub nodes_searched: u64,
    pub used_links: bool,
    pub fell_back_to_full: bool,
    /// Leaf traces of the evaluation that produced `answer`.
    pub leaves: Vec<LeafTrace>,
    pub unmatched_links: Vec<UnmatchedLink>,
}

fn sides(dir: Direction) -> (Side, Side) {
    match dir {
        Direction::Forwards => (Side::Lhs, Side::Rhs),
        Direction::Backwards => (Side::Rhs, Side::Lhs),
    }
}

fn side_type(leaf: &Comparison, side: Side) -> &SourceTypeId {
    match side {
        Side::Lhs => &leaf.lhs.source,
        Side::Rhs => &leaf.rhs.source,
    }
}

fn full_set(net: &Network, t: &SourceTypeId) -> BTreeSet<InstanceId> {
    net.instances_of(t).iter().copied().collect()
}

/// Retrieves candidates for both sides of `leaf`.
///
/// Links are stored from origin instances (the left side when forwards, the
/// right side when backwards). Without earlier survivors, the origin side is
/// the set of origins holding top-level links for this path, and the target
/// side is the union of those origins' link targets.
pub fn retrieve_leaf(
    net: &Network,
    store: Option<&LinkStore>,
    leaf: &Comparison,
    ctx: &Context,
    dir: Direction,
) -> LeafCandidates {
    if leaf.is_same_type() {
        let t = &leaf.lhs.source;
        let (instances, provenance, nodes) = match ctx.get(t) {
            Some(s) => (s.clone(), Provenance::PreviousEval, 0),
            None => {
                let all = full_set(net, t);
                let n = all.len() as u64;
                (all, Provenance::FullSearch, n)
            }
        };
        let set = CandidateSet {
            source_type: t.clone(),
            instances,
            provenance,
        };
        return LeafCandidates {
            lhs: set.clone(),
            rhs: set,
            nodes,
            link_refs: Vec::new(),
        };
    }

    let (origin_side, target_side) = sides(dir);
    let origin_type = side_type(leaf, origin_side);
    let target_type = side_type(leaf, target_side);
    let mut nodes = 0u64;

    let lookups =
        |origins: &mut dyn Iterator<Item = InstanceId>| -> Vec<(InstanceId, Vec<InstanceId>)> {
            let Some(store) = store else {
                return Vec::new();
            };
            origins
                .filter_map(|o| {
                    let key = origin_key(net, leaf, o, dir);
                    let targets = store.lookup(&key);
                    (!targets.is_empty()).then_some((o, targets))
                })
                .collect()
        };

    let (origins, origin_prov, linked) = match ctx.get(origin_type) {
        Some(s) => {
            let linked = if ctx.contains_key(target_type) {
                Vec::new()
            } else {
                lookups(&mut s.iter().copied())
            };
            (s.clone(), Provenance::PreviousEval, linked)
        }
        None => {
            let linked = lookups(&mut net.instances_of(origin_type).iter().copied());
            if linked.is_empty() {
                let all = full_set(net, origin_type);
                nodes += all.len() as u64;
                (all, Provenance::FullSearch, linked)
            } else {
                let set: BTreeSet<InstanceId> = linked.iter().map(|(o, _)| *o).collect();
                nodes += set.len() as u64;
                (set, Provenance::Links, linked)
            }
        }
    };

    let mut link_refs = Vec::new();
    let (targets, target_prov) = match ctx.get(target_type) {
        Some(s) => (s.clone(), Provenance::PreviousEval),
        None if !linked.is_empty() => {
            let mut set = BTreeSet::new();
            for (o, ts) in &linked {
                for t in ts {
                    set.insert(*t);
                    link_refs.push((*o, *t));
                }
            }
            nodes += set.len() as u64;
            (set, Provenance::Links)
        }
        None => {
            let all = full_set(net, target_type);
            nodes += all.len() as u64;
            (all, Provenance::FullSearch)
        }
    };
    // Origin-side link refs only count as used when their targets were fetched.
    if target_prov != Provenance::Links {
        link_refs.clear();
    }

    let origin_set = CandidateSet {
        source_type: origin_type.clone(),
        instances: origins,
        provenance: origin_prov,
    };
    let target_set = CandidateSet {
        source_type: target_type.clone(),
        instances: targets,
        provenance: target_prov,
    };
    let (lhs, rhs) = match origin_side {
        Side::Lhs => (origin_set, target_set),
        Side::Rhs => (target_set, origin_set),
    };
    LeafCandidates {
        lhs,
        rhs,
        nodes,
        link_refs,
    }
}

fn origin_key(net: &Network, leaf: &Comparison, origin: InstanceId, dir: Direction) -> PathKey {
    build_path(leaf, net.instance(origin), dir).expect("origin drawn from the origin type")
}

/// Candidates for one side of `leaf`; see [`retrieve_leaf`].
pub fn retrieve_candidates(
    net: &Network,
    store: Option<&LinkStore>,
    leaf: &Comparison,
    side: Side,
    ctx: &Context,
    dir: Direction,
) -> CandidateSet {
    let c = retrieve_leaf(net, store, leaf, ctx, dir);
    match side {
        Side::Lhs => c.lhs,
        Side::Rhs => c.rhs,
    }
}

/// Compares every candidate pair. A same-type leaf is a per-instance
/// predicate: it compares two values of one instance and never forms pairs.
pub fn evaluate_leaf(
    net: &Network,
    lhs: &CandidateSet,
    rhs: &CandidateSet,
    leaf: &Comparison,
) -> LeafOutcome {
    let lv = net.value_index(&leaf.lhs.value).expect("checked query");
    let rv = net.value_index(&leaf.rhs.value).expect("checked query");
    let mut out = LeafOutcome::default();
    if leaf.is_same_type() {
        for &i in lhs.instances.intersection(&rhs.instances) {
            if leaf.op.holds(net.value_at(i, lv), net.value_at(i, rv)) {
                out.lhs_survivors.insert(i);
                out.rhs_survivors.insert(i);
            }
        }
        return out;
    }
    for &l in &lhs.instances {
        let a = net.value_at(l, lv);
        for &r in &rhs.instances {
            if l != r && leaf.op.holds(a, net.value_at(r, rv)) {
                out.pairs.push((l, r));
                out.lhs_survivors.insert(l);
                out.rhs_survivors.insert(r);
            }
        }
    }
    out
}

/// Merges the survivor maps of two operands.
///
/// `And` intersects types present on both sides and passes the rest
/// through. `Or` unions types present on both sides; a type constrained on
/// only one side is unconstrained by the other and is dropped.
pub fn combine_clause(left: &Context, right: &Context, logical: Logical) -> Context {
    let mut out = Context::new();
    match logical {
        Logical::And => {
            for (t, l) in left {
                let set = match right.get(t) {
                    Some(r) => l.intersection(r).copied().collect(),
                    None => l.clone(),
                };
                out.insert(t.clone(), set);
            }
            for (t, r) in right {
                out.entry(t.clone()).or_insert_with(|| r.clone());
            }
        }
        Logical::Or => {
            for (t, l) in left {
                if let Some(r) = right.get(t) {
                    out.insert(t.clone(), l.union(r).copied().collect());
                }
            }
        }
    }
    out
}

struct Cascade<'a> {
    net: &'a Network,
    store: Option<&'a LinkStore>,
    opts: EvalOptions,
    nodes: u64,
    used_links: bool,
    traces: Vec<LeafTrace>,
    unmatched: Vec<UnmatchedLink>,
    fetched: BTreeMap<SourceTypeId, BTreeSet<InstanceId>>,
}

impl Cascade<'_> {
    fn eval(&mut self, node: &WhereTree, first_leaf: usize, ctx: Context) -> Context {
        match node {
            WhereTree::Leaf(c) => self.leaf(c, first_leaf, ctx),
            WhereTree::Node {
                left,
                logical,
                right,
            } => {
                let right_first = first_leaf + left.leaf_count();
                let ops = [(left.as_ref(), first_leaf), (right.as_ref(), right_first)];
                let [a, b] = match self.opts.leaf_order {
                    LeafOrder::Ltr => ops,
                    LeafOrder::Rtl => [ops[1], ops[0]],
                };
                match logical {
                    Logical::And => {
                        let after_a = self.eval(a.0, a.1, ctx);
                        let after_b = self.eval(b.0, b.1, after_a.clone());
                        combine_clause(&after_a, &after_b, Logical::And)
                    }
                    Logical::Or => {
                        let out_a = self.eval(a.0, a.1, ctx.clone());
                        let out_b = self.eval(b.0, b.1, ctx);
                        combine_clause(&out_a, &out_b, Logical::Or)
                    }
                }
            }
        }
    }

    fn leaf(&mut self, c: &Comparison, index: usize, mut ctx: Context) -> Context {
        let cands = retrieve_leaf(self.net, self.store, c, &ctx, self.opts.direction);
        let outcome = evaluate_leaf(self.net, &cands.lhs, &cands.rhs, c);
        self.nodes += cands.nodes;
        for set in [&cands.lhs, &cands.rhs] {
            if set.provenance != Provenance::PreviousEval {
                self.fetched
                    .entry(set.source_type.clone())
                    .or_default()
                    .extend(set.instances.iter().copied());
            }
            if set.provenance == Provenance::Links {
                self.used_links = true;
            }
        }
        self.note_unmatched(index, &cands, &outcome);
        self.traces.push(LeafTrace {
            leaf: index,
            lhs: cands.lhs.provenance,
            rhs: cands.rhs.provenance,
            nodes: cands.nodes,
            pairs: outcome.pairs.clone(),
        });
        ctx.insert(c.lhs.source.clone(), outcome.lhs_survivors);
        if !c.is_same_type() {
            ctx.insert(c.rhs.source.clone(), outcome.rhs_survivors);
        }
        ctx
    }

    fn note_unmatched(&mut self, index: usize, cands: &LeafCandidates, outcome: &LeafOutcome) {
        if cands.link_refs.is_empty() {
            return;
        }
        let (origin_side, _) = sides(self.opts.direction);
        let (origin_set, origin_survivors, target_survivors) = match origin_side {
            Side::Lhs => (&cands.lhs, &outcome.lhs_survivors, &outcome.rhs_survivors),
            Side::Rhs => (&cands.rhs, &outcome.rhs_survivors, &outcome.lhs_survivors),
        };
        let origin_linked = origin_set.provenance == Provenance::Links;
        let mut found = BTreeSet::new();
        for &(o, t) in &cands.link_refs {
            let dead_target = !target_survivors.contains(&t);
            let dead_origin = origin_linked && !origin_survivors.contains(&o);
            if dead_target || dead_origin {
                found.insert(UnmatchedLink {
                    leaf: index,
                    origin: o,
                    target: t,
                });
            }
        }
        self.unmatched.extend(found);
    }
}

struct CascadeRun {
    nodes: u64,
    used_links: bool,
    traces: Vec<LeafTrace>,
    unmatched: Vec<UnmatchedLink>,
    /// Candidate pool per relevant type, in network type order.
    pools: Vec<(SourceTypeId, Vec<InstanceId>)>,
}

/// Select types plus every type mentioned in the tree, in network order.
fn relevant_types(net: &Network, q: &Query) -> Vec<SourceTypeId> {
    let mut types: BTreeSet<(usize, SourceTypeId)> = BTreeSet::new();
    let leaf_types = q
        .where_tree()
        .leaves()
        .into_iter()
        .flat_map(|c| [&c.lhs.source, &c.rhs.source]);
    for t in q.select().iter().map(|a| &a.source).chain(leaf_types) {
        types.insert((net.type_index(t).expect("checked query"), t.clone()));
    }
    types.into_iter().map(|(_, t)| t).collect()
}

fn run_cascade(
    net: &Network,
    store: Option<&LinkStore>,
    q: &Query,
    opts: EvalOptions,
) -> CascadeRun {
    let mut c = Cascade {
        net,
        store,
        opts,
        nodes: 0,
        used_links: false,
        traces: Vec::new(),
        unmatched: Vec::new(),
        fetched: BTreeMap::new(),
    };
    let final_ctx = c.eval(q.where_tree(), 0, Context::new());
    let mut pools = Vec::new();
    for t in relevant_types(net, q) {
        let pool: Vec<InstanceId> = if let Some(s) = final_ctx.get(&t) {
            s.iter().copied().collect()
        } else if let Some(s) = c.fetched.get(&t) {
            s.iter().copied().collect()
        } else {
            // selected but never compared: fetch the whole type
            let all = net.instances_of(&t).to_vec();
            c.nodes += all.len() as u64;
            all
        };
        pools.push((t, pool));
    }
    c.traces.sort_by_key(|t| t.leaf);
    CascadeRun {
        nodes: c.nodes,
        used_links: c.used_links,
        traces: c.traces,
        unmatched: c.unmatched,
        pools,
    }
}

enum PlanTree {
    Leaf {
        lhs: (usize, usize),
        op: CompareOp,
        rhs: (usize, usize),
    },
    Node {
        left: Box<PlanTree>,
        and: bool,
        right: Box<PlanTree>,
    },
}

impl PlanTree {
    fn build(tree: &WhereTree, net: &Network, pos: &BTreeMap<&SourceTypeId, usize>) -> Self {
        match tree {
            WhereTree::Leaf(c) => PlanTree::Leaf {
                lhs: (
                    pos[&c.lhs.source],
                    net.value_index(&c.lhs.value).expect("checked query"),
                ),
                op: c.op,
                rhs: (
                    pos[&c.rhs.source],
                    net.value_index(&c.rhs.value).expect("checked query"),
                ),
            },
            WhereTree::Node {
                left,
                logical,
                right,
            } => PlanTree::Node {
                left: Box::new(Self::build(left, net, pos)),
                and: *logical == Logical::And,
                right: Box::new(Self::build(right, net, pos)),
            },
        }
    }

    fn holds(&self, net: &Network, binding: &[InstanceId]) -> bool {
        match self {
            PlanTree::Leaf { lhs, op, rhs } => op.holds(
                net.value_at(binding[lhs.0], lhs.1),
                net.value_at(binding[rhs.0], rhs.1),
            ),
            PlanTree::Node {
                left,
                and: true,
                right,
            } => left.holds(net, binding) && right.holds(net, binding),
            PlanTree::Node {
                left,
                and: false,
                right,
            } => left.holds(net, binding) || right.holds(net, binding),
        }
    }
}

/// Highest-valued binding over `pools` satisfying the tree; the first such
/// binding in lexicographic pool order wins ties.
fn best_binding(net: &Network, q: &Query, pools: &[(SourceTypeId, Vec<InstanceId>)]) -> Answer {
    if pools.iter().any(|(_, p)| p.is_empty()) {
        return Answer::unsatisfied();
    }
    let pos: BTreeMap<&SourceTypeId, usize> =
        pools.iter().enumerate().map(|(i, (t, _))| (t, i)).collect();
    let tree = PlanTree::build(q.where_tree(), net, &pos);
    let select: Vec<(usize, usize)> = q
        .select()
        .iter()
        .map(|a| {
            (
                pos[&a.source],
                net.value_index(&a.value).expect("checked query"),
            )
        })
        .collect();

    let mut cursor = vec![0usize; pools.len()];
    let mut binding: Vec<InstanceId> = pools.iter().map(|(_, p)| p[0]).collect();
    let mut best: Option<(i64, Vec<InstanceId>)> = None;
    loop {
        if tree.holds(net, &binding) {
            let value: i64 = select
                .iter()
                .map(|&(p, v)| net.value_at(binding[p], v))
                .sum();
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, binding.clone()));
            }
        }
        // odometer, last type fastest
        let mut k = pools.len();
        loop {
            if k == 0 {
                return match best {
                    None => Answer::unsatisfied(),
                    Some((value, b)) => Answer {
                        bindings: pools.iter().map(|(t, _)| t.clone()).zip(b).collect(),
                        value,
                        satisfied: true,
                    },
                };
            }
            k -= 1;
            cursor[k] += 1;
            if cursor[k] < pools[k].1.len() {
                binding[k] = pools[k].1[cursor[k]];
                break;
            }
            cursor[k] = 0;
            binding[k] = pools[k].1[0];
        }
    }
}

/// Optimal evaluation: exhaustive search over every instance of every
/// relevant type. Node counts follow the cascade with no links.
pub fn evaluate_full(
    net: &Network,
    q: &Query,
    opts: EvalOptions,
) -> Result<EvalResult, EngineError> {
    net.check_query(q)?;
    let run = run_cascade(net, None, q, opts);
    let everything: Vec<(SourceTypeId, Vec<InstanceId>)> = run
        .pools
        .iter()
        .map(|(t, _)| (t.clone(), net.instances_of(t).to_vec()))
        .collect();
    let answer = best_binding(net, q, &everything);
    Ok(EvalResult {
        answer,
        nodes_searched: run.nodes,
        used_links: false,
        fell_back_to_full: false,
        leaves: run.traces,
        unmatched_links: Vec::new(),
    })
}

/// Link-assisted evaluation with full-search fallback.
pub fn evaluate_linked(
    net: &Network,
    store: &LinkStore,
    q: &Query,
    opts: EvalOptions,
) -> Result<EvalResult, EngineError> {
    net.check_query(q)?;
    let run = run_cascade(net, Some(store), q, opts);
    let answer = best_binding(net, q, &run.pools);
    if !answer.satisfied && run.used_links {
        let full = evaluate_full(net, q, opts)?;
        return Ok(EvalResult {
            answer: full.answer,
            nodes_searched: run.nodes + full.nodes_searched,
            used_links: true,
            fell_back_to_full: true,
            leaves: full.leaves,
            unmatched_links: run.unmatched,
        });
    }
    Ok(EvalResult {
        answer,
        nodes_searched: run.nodes,
        used_links: run.used_links,
        fell_back_to_full: false,
        leaves: run.traces,
        unmatched_links: run.unmatched,
    })
}

/// Which satisfying pairs earn positive evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackScope {
    /// Pairs formed by the answer's own bindings, one per satisfied leaf.
    #[default]
    Answer,
    /// Every satisfying pair found while evaluating each leaf.
    AllPairs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FeedbackSummary {
    pub positive: u64,
    pub negative: u64,
    pub rejected: u64,
}

/// Feeds one evaluation back into the store.
pub fn feedback(
    store: &mut LinkStore,
    net: &Network,
    result: &EvalResult,
    q: &Query,
    dir: Direction,
    scope: FeedbackScope,
) -> FeedbackSummary {
    let leaves = q.where_tree().leaves();
    let mut summary = FeedbackSummary::default();
    let mut record =
        |store: &mut LinkStore, leaf: &Comparison, l: InstanceId, r: InstanceId, pol: Polarity| {
            let (origin, target) = match dir {
                Direction::Forwards => (l, r),
                Direction::Backwards => (r, l),
            };
            let key = origin_key(net, leaf, origin, dir);
            match store.record_evidence(&key, target, pol) {
                Ok(()) if pol == Polarity::Positive => summary.positive += 1,
                Ok(()) => summary.negative += 1,
                Err(_) => summary.rejected += 1,
            }
        };

    match scope {
        FeedbackScope::Answer if result.answer.satisfied => {
            let b = &result.answer.bindings;
            for leaf in leaves.iter().filter(|c| !c.is_same_type()) {
                let (l, r) = (b[&leaf.lhs.source], b[&leaf.rhs.source]);
                let lv = net.value(l, &leaf.lhs.value).expect("checked query");
                let rv = net.value(r, &leaf.rhs.value).expect("checked query");
                if leaf.op.holds(lv, rv) {
                    record(store, leaf, l, r, Polarity::Positive);
                }
            }
        }
        FeedbackScope::Answer => {}
        FeedbackScope::AllPairs => {
            for trace in &result.leaves {
                for &(l, r) in &trace.pairs {
                    record(store, leaves[trace.leaf], l, r, Polarity::Positive);
                }
            }
        }
    }

    for u in &result.unmatched_links {
        let leaf = leaves[u.leaf];
        let (l, r) = match dir {
            Direction::Forwards => (u.origin, u.target),
            Direction::Backwards => (u.target, u.origin),
        };
        record(store, leaf, l, r, Polarity::Negative);
    }
    summary
}

#[derive(Serialize)]
struct TraceLeaf {
    leaf: usize,
    lhs: Provenance,
    rhs: Provenance,
    nodes: u64,
    pairs: usize,
}

#[derive(Serialize)]
struct TraceLine {
    query: String,
    leaves: Vec<TraceLeaf>,
    nodes_searched: u64,
    used_links: bool,
    fell_back_to_full: bool,
    satisfied: bool,
    value: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimal_value: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimal_nodes: Option<u64>,
}

/// One JSON line describing an evaluation, for trace logs. `optimal` is the
/// paired full evaluation, when there is one.
pub fn trace_line(q: &Query, result: &EvalResult, optimal: Option<&EvalResult>) -> String {
    let line = TraceLine {
        query: q.render(),
        leaves: result
            .leaves
            .iter()
            .map(|t| TraceLeaf {
                leaf: t.leaf,
                lhs: t.lhs,
                rhs: t.rhs,
                nodes: t.nodes,
                pairs: t.pairs.len(),
            })
            .collect(),
        nodes_searched: result.nodes_searched,
        used_links: result.used_links,
        fell_back_to_full: result.fell_back_to_full,
        satisfied: result.answer.satisfied,
        value: result.answer.value,
        optimal_value: optimal.map(|o| o.answer.value),
        optimal_nodes: optimal.map(|o| o.nodes_searched),
    };
    serde_json::to_string(&line).expect("trace line serialises")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linkstore::StoreConfig;
    use crate::model::{parse_query, Attr};

    fn set(t: &str, ids: &[u32], provenance: Provenance) -> CandidateSet {
        CandidateSet {
            source_type: t.into(),
            instances: ids.iter().map(|&i| InstanceId(i)).collect(),
            provenance,
        }
    }

    fn ids(xs: &[u32]) -> BTreeSet<InstanceId> {
        xs.iter().map(|&i| InstanceId(i)).collect()
    }

    /// A: a1..a4 = ids 0..3, B: b1..b8 = ids 4..11.
    fn net() -> Network {
        Network::new(
            vec!["A".into(), "B".into()],
            vec!["Value1".into(), "Value2".into(), "Value3".into()],
            vec![
                vec![vec![4, 1, 9], vec![2, 8, 3], vec![5, 1, 2], vec![7, 7, 7]],
                (0..8).map(|k| vec![k, 4, k % 3]).collect(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_match_leaf() {
        let n = net();
        let leaf = Comparison::new(
            Attr::new("A", "Value1"),
            CompareOp::Eq,
            Attr::new("B", "Value2"),
        );
        let out = evaluate_leaf(
            &n,
            &set("A", &[0], Provenance::FullSearch),
            &set("B", &[4], Provenance::FullSearch),
            &leaf,
        );
        assert_eq!(out.pairs, vec![(InstanceId(0), InstanceId(4))]);
    }

    #[test]
    fn same_type_leaf_never_pairs() {
        let n = net();
        let leaf = Comparison::new(
            Attr::new("A", "Value2"),
            CompareOp::Gt,
            Attr::new("A", "Value3"),
        );
        let all = set("A", &[0, 1, 2, 3], Provenance::FullSearch);
        let out = evaluate_leaf(&n, &all, &all, &leaf);
        assert!(out.pairs.is_empty());
        assert_eq!(out.lhs_survivors, ids(&[1]));
    }

    #[test]
    fn combine_or_and() {
        let l: Context = [("B".into(), ids(&[1]))].into();
        let r: Context = [("B".into(), ids(&[2]))].into();
        assert_eq!(
            combine_clause(&l, &r, Logical::Or)[&SourceTypeId::new("B")],
            ids(&[1, 2])
        );
        let l: Context = [("B".into(), ids(&[1, 2])), ("A".into(), ids(&[7]))].into();
        let r: Context = [("B".into(), ids(&[2, 3]))].into();
        let and = combine_clause(&l, &r, Logical::And);
        assert_eq!(and[&SourceTypeId::new("B")], ids(&[2]));
        assert_eq!(and[&SourceTypeId::new("A")], ids(&[7]));
        assert!(!combine_clause(&l, &r, Logical::Or).contains_key(&SourceTypeId::new("A")));
    }

    #[test]
    fn previous_eval_wins_over_links() {
        let n = net();
        let leaf = Comparison::new(
            Attr::new("A", "Value1"),
            CompareOp::Eq,
            Attr::new("B", "Value2"),
        );
        let ctx: Context = [("B".into(), ids(&[5, 10]))].into();
        let c = retrieve_candidates(
            &n,
            Some(&LinkStore::default()),
            &leaf,
            Side::Rhs,
            &ctx,
            Direction::Forwards,
        );
        assert_eq!(c.instances, ids(&[5, 10]));
        assert_eq!(c.provenance, Provenance::PreviousEval);
    }

    #[test]
    fn cold_store_is_full_search() {
        let n = net();
        let leaf = Comparison::new(
            Attr::new("A", "Value1"),
            CompareOp::Eq,
            Attr::new("B", "Value2"),
        );
        let c = retrieve_leaf(
            &n,
            Some(&LinkStore::default()),
            &leaf,
            &Context::new(),
            Direction::Forwards,
        );
        assert_eq!(c.lhs.provenance, Provenance::FullSearch);
        assert_eq!(c.rhs.provenance, Provenance::FullSearch);
        assert_eq!(c.nodes, 12);
    }

    #[test]
    fn backwards_links_supply_lhs_candidates() {
        let n = net();
        let leaf = Comparison::new(
            Attr::new("A", "Value1"),
            CompareOp::Eq,
            Attr::new("B", "Value2"),
        );
        let mut store = LinkStore::new(StoreConfig::default());
        let b1 = InstanceId(4);
        let key = build_path(&leaf, n.instance(b1), Direction::Backwards).unwrap();
        for a in [2u32, 0] {
            for _ in 0..7 {
                store
                    .record_evidence(&key, InstanceId(a), Polarity::Positive)
                    .unwrap();
            }
        }
        let c = retrieve_leaf(
            &n,
            Some(&store),
            &leaf,
            &Context::new(),
            Direction::Backwards,
        );
        assert_eq!(c.lhs.instances, ids(&[0, 2]));
        assert_eq!(c.lhs.provenance, Provenance::Links);
        assert_eq!(c.rhs.instances, ids(&[4]));
        assert_eq!(c.rhs.provenance, Provenance::Links);
        assert_eq!(c.nodes, 3);
    }

    #[test]
    fn unsatisfiable_query() {
        let n = net();
        let q = parse_query(
            "Select A.Value1 From A, B Where (A.Value1 EQ B.Value1) And (A.Value1 GT B.Value1)",
        )
        .unwrap();
        let r = evaluate_full(&n, &q, EvalOptions::default()).unwrap();
        assert!(!r.answer.satisfied);
        assert_eq!(r.answer.value, 0);
    }

    #[test]
    fn one_instance_same_type_query() {
        let n = Network::new(
            vec!["A".into()],
            vec!["Value1".into(), "Value2".into()],
            vec![vec![vec![3, 3]]],
        )
        .unwrap();
        let q = parse_query("Select A.Value1 From A Where (A.Value1 EQ A.Value2)").unwrap();
        let r = evaluate_full(&n, &q, EvalOptions::default()).unwrap();
        assert!(r.answer.satisfied);
        assert_eq!(r.answer.bindings[&SourceTypeId::new("A")], InstanceId(0));
        assert_eq!(r.answer.value, 3);
    }

    #[test]
    fn feedback_records_answer_pair() {
        let n = net();
        let q = parse_query("Select A.Value3 From A, B Where (A.Value1 EQ B.Value2)").unwrap();
        let r = evaluate_full(&n, &q, EvalOptions::default()).unwrap();
        // only a1 has Value1 = 4 and every B has Value2 = 4; b1 wins the tie
        assert_eq!(r.answer.bindings[&SourceTypeId::new("A")], InstanceId(0));
        assert_eq!(r.answer.bindings[&SourceTypeId::new("B")], InstanceId(4));
        let mut store = LinkStore::default();
        let s = feedback(
            &mut store,
            &n,
            &r,
            &q,
            Direction::Forwards,
            FeedbackScope::Answer,
        );
        assert_eq!(
            s,
            FeedbackSummary {
                positive: 1,
                negative: 0,
                rejected: 0
            }
        );
        let key = build_path(
            q.where_tree().leaves()[0],
            n.instance(InstanceId(0)),
            Direction::Forwards,
        )
        .unwrap();
        assert_eq!(store.refs(&key).len(), 1);
        assert_eq!(store.refs(&key)[0].target, InstanceId(4));
    }

    #[test]
    fn feedback_all_pairs_scope() {
        let n = net();
        let q = parse_query("Select A.Value3 From A, B Where (A.Value1 EQ B.Value2)").unwrap();
        let r = evaluate_full(&n, &q, EvalOptions::default()).unwrap();
        let mut store = LinkStore::default();
        let s = feedback(
            &mut store,
            &n,
            &r,
            &q,
            Direction::Forwards,
            FeedbackScope::AllPairs,
        );
        assert_eq!(s.positive, 8);
        assert_eq!(store.stats().entries, 1);
    }

    #[test]
    fn unsatisfied_feedback_changes_nothing() {
        let n = net();
        let q = parse_query(
            "Select A.Value1 From A, B Where (A.Value1 EQ B.Value1) And (A.Value1 GT B.Value1)",
        )
        .unwrap();
        let r = evaluate_full(&n, &q, EvalOptions::default()).unwrap();
        let mut store = LinkStore::default();
        feedback(
            &mut store,
            &n,
            &r,
            &q,
            Direction::Forwards,
            FeedbackScope::Answer,
        );
        assert!(store.is_empty());
    }

    #[test]
    fn trace_line_is_json() {
        let n = net();
        let q = parse_query("Select A.Value3 From A, B Where (A.Value1 EQ B.Value2)").unwrap();
        let r = evaluate_full(&n, &q, EvalOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&trace_line(&q, &r, Some(&r))).unwrap();
        assert_eq!(v["nodes_searched"], 12);
        assert_eq!(v["leaves"][0]["lhs"], "FULL_SEARCH");
        assert_eq!(v["optimal_value"], 9);
        assert_eq!(v["optimal_nodes"], 12);
    }
}
