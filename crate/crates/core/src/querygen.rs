//! Seeded generation of networks and queries using banded type selection.
//!
//! A band set splits a type catalog into disjoint groups, each with a
//! percentage weight. Drawing a type first picks a band by weight and then a
//! member uniformly within it.

use std::collections::HashSet;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Attr, CompareOp, Comparison, Logical, ModelError, Network, Query, SourceTypeId, ValueTypeId,
    WhereTree,
};

/// Random stream used throughout: ChaCha with 8 rounds, seeded from a `u64`.
/// Its output is specified independently of platform and word size.
pub type SimRng = ChaCha8Rng;

/// Rng for one logical stream of a run. Distinct streams from one seed do not
/// overlap.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("band set is empty")]
    EmptyBands,
    #[error("invalid band set: {0}")]
    InvalidBands(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot satisfy generator constraint: {0}")]
    Impossible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band<T> {
    pub members: Vec<T>,
    /// Percentage weight in (0, 100].
    pub probability: u32,
}

impl<T> Band<T> {
    pub fn new(members: Vec<T>, probability: u32) -> Self {
        Self {
            members,
            probability,
        }
    }
}

/// Checks that the bands are non-empty, disjoint, weighted to 100 and,
/// when `universe` is given, cover it exactly.
pub fn validate_bands<T: Eq + Hash + std::fmt::Debug>(
    bands: &[Band<T>],
    universe: Option<&[T]>,
) -> Result<(), GenError> {
    if bands.is_empty() {
        return Err(GenError::EmptyBands);
    }
    let mut seen = HashSet::new();
    let mut total = 0u32;
    for b in bands {
        if b.members.is_empty() {
            return Err(GenError::InvalidBands("band with no members".into()));
        }
        if b.probability == 0 || b.probability > 100 {
            return Err(GenError::InvalidBands(format!(
                "probability {} out of (0, 100]",
                b.probability
            )));
        }
        total += b.probability;
        for m in &b.members {
            if !seen.insert(m) {
                return Err(GenError::InvalidBands(format!(
                    "{m:?} appears in two bands"
                )));
            }
        }
    }
    if total != 100 {
        return Err(GenError::InvalidBands(format!(
            "probabilities sum to {total}, not 100"
        )));
    }
    if let Some(universe) = universe {
        if universe.len() != seen.len() || universe.iter().any(|u| !seen.contains(u)) {
            return Err(GenError::InvalidBands(
                "bands do not partition the catalog".into(),
            ));
        }
    }
    Ok(())
}

/// Draws one member: a band by weight, then a member uniformly.
pub fn pick_banded<T: Clone>(bands: &[Band<T>], rng: &mut impl Rng) -> Result<T, GenError> {
    pick_banded_filtered(bands, rng, |_| true)
}

/// Like [`pick_banded`], restricted to members accepted by `allowed`. Bands
/// with no allowed member drop out and the remaining weights renormalise.
pub fn pick_banded_filtered<T: Clone>(
    bands: &[Band<T>],
    rng: &mut impl Rng,
    allowed: impl Fn(&T) -> bool,
) -> Result<T, GenError> {
    if bands.is_empty() {
        return Err(GenError::EmptyBands);
    }
    let live: Vec<(u32, Vec<&T>)> = bands
        .iter()
        .map(|b| {
            (
                b.probability,
                b.members.iter().filter(|m| allowed(m)).collect::<Vec<_>>(),
            )
        })
        .filter(|(p, m)| *p > 0 && !m.is_empty())
        .collect();
    let total: u32 = live.iter().map(|(p, _)| p).sum();
    if total == 0 {
        return Err(GenError::Impossible("no eligible band members".into()));
    }
    let mut roll = rng.random_range(0..total);
    for (p, members) in &live {
        if roll < *p {
            return Ok(members[rng.random_range(0..members.len())].clone());
        }
        roll -= p;
    }
    unreachable!("roll below total weight")
}

/// Name of the `i`-th source type: `A`..`Z`, then `AA`, `AB`, ...
pub fn source_type_name(i: usize) -> String {
    let mut n = i;
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

pub fn value_type_name(i: usize) -> String {
    format!("Value{}", i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub source_types: usize,
    pub instances_per_type: usize,
    pub value_types: usize,
    /// Inclusive range of instance values.
    pub value_range: (i64, i64),
    pub source_bands: Vec<Band<SourceTypeId>>,
    pub value_bands: Vec<Band<ValueTypeId>>,
}

impl NetworkConfig {
    /// Two-band config: the first `top_sources` source types and first
    /// `top_values` value types share `top_pct` percent.
    pub fn split(
        source_types: usize,
        instances_per_type: usize,
        value_types: usize,
        top_sources: usize,
        top_values: usize,
        top_pct: u32,
    ) -> Self {
        let sources = Self::source_catalog_for(source_types);
        let values = Self::value_catalog_for(value_types);
        Self {
            source_types,
            instances_per_type,
            value_types,
            value_range: (1, 10),
            source_bands: two_bands(&sources, top_sources, top_pct),
            value_bands: two_bands(&values, top_values, top_pct),
        }
    }

    fn source_catalog_for(n: usize) -> Vec<SourceTypeId> {
        (0..n)
            .map(|i| SourceTypeId::new(source_type_name(i)))
            .collect()
    }

    fn value_catalog_for(n: usize) -> Vec<ValueTypeId> {
        (0..n)
            .map(|i| ValueTypeId::new(value_type_name(i)))
            .collect()
    }

    pub fn source_catalog(&self) -> Vec<SourceTypeId> {
        Self::source_catalog_for(self.source_types)
    }

    pub fn value_catalog(&self) -> Vec<ValueTypeId> {
        Self::value_catalog_for(self.value_types)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.source_types == 0 || self.instances_per_type == 0 || self.value_types == 0 {
            return Err(GenError::InvalidConfig(
                "network counts must be at least 1".into(),
            ));
        }
        if self.value_range.0 > self.value_range.1 {
            return Err(GenError::InvalidConfig(format!(
                "empty value range [{}, {}]",
                self.value_range.0, self.value_range.1
            )));
        }
        validate_bands(&self.source_bands, Some(&self.source_catalog()))?;
        validate_bands(&self.value_bands, Some(&self.value_catalog()))?;
        Ok(())
    }
}

fn two_bands<T: Clone>(catalog: &[T], top: usize, top_pct: u32) -> Vec<Band<T>> {
    if top == 0 || top >= catalog.len() || top_pct >= 100 {
        return vec![Band::new(catalog.to_vec(), 100)];
    }
    vec![
        Band::new(catalog[..top].to_vec(), top_pct),
        Band::new(catalog[top..].to_vec(), 100 - top_pct),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub max_select: usize,
    pub max_from: usize,
    pub max_where_leaves: usize,
    pub operators: Vec<CompareOp>,
    /// Probability of `And` at an internal node.
    pub and_probability: f64,
    pub allow_same_type_comparison: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            max_select: 2,
            max_from: 3,
            max_where_leaves: 3,
            operators: vec![CompareOp::Eq],
            and_probability: 0.5,
            allow_same_type_comparison: true,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.max_select == 0 || self.max_from == 0 || self.max_where_leaves == 0 {
            return Err(GenError::InvalidConfig(
                "query maxima must be at least 1".into(),
            ));
        }
        if self.operators.is_empty() {
            return Err(GenError::InvalidConfig("operator set is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.and_probability) {
            return Err(GenError::InvalidConfig(
                "and_probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Builds a network with every value drawn uniformly from the configured
/// range, type by type and instance by instance.
pub fn generate_network(cfg: &NetworkConfig, rng: &mut impl Rng) -> Result<Network, GenError> {
    cfg.validate()?;
    let (lo, hi) = cfg.value_range;
    let rows = (0..cfg.source_types)
        .map(|_| {
            (0..cfg.instances_per_type)
                .map(|_| {
                    (0..cfg.value_types)
                        .map(|_| rng.random_range(lo..=hi))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(Network::new(
        cfg.source_catalog(),
        cfg.value_catalog(),
        rows,
    )?)
}

const MAX_REDRAWS: usize = 256;

pub fn generate_query(
    qcfg: &QueryConfig,
    ncfg: &NetworkConfig,
    rng: &mut impl Rng,
) -> Result<Query, GenError> {
    let from_size = rng.random_range(1..=qcfg.max_from);
    if from_size > ncfg.source_types {
        return Err(GenError::Impossible(format!(
            "from clause of {from_size} types but only {} exist",
            ncfg.source_types
        )));
    }
    let mut from: Vec<SourceTypeId> = Vec::with_capacity(from_size);
    for _ in 0..from_size {
        let t = pick_banded_filtered(&ncfg.source_bands, rng, |t| !from.contains(t))?;
        from.push(t);
    }
    let in_from = |t: &SourceTypeId| from.contains(t);

    let select_size = rng.random_range(1..=qcfg.max_select);
    let mut select = Vec::with_capacity(select_size);
    for _ in 0..select_size {
        let source = pick_banded_filtered(&ncfg.source_bands, rng, in_from)?;
        let value = pick_banded(&ncfg.value_bands, rng)?;
        select.push(Attr { source, value });
    }

    let leaves = rng.random_range(1..=qcfg.max_where_leaves);
    let tree = random_tree(leaves, qcfg, ncfg, &from, rng)?;
    Ok(Query::new(select, from, tree)?)
}

fn random_tree(
    leaves: usize,
    qcfg: &QueryConfig,
    ncfg: &NetworkConfig,
    from: &[SourceTypeId],
    rng: &mut impl Rng,
) -> Result<WhereTree, GenError> {
    if leaves == 1 {
        return random_leaf(qcfg, ncfg, from, rng).map(WhereTree::Leaf);
    }
    let left_size = rng.random_range(1..leaves);
    let logical = if rng.random_bool(qcfg.and_probability) {
        Logical::And
    } else {
        Logical::Or
    };
    let left = random_tree(left_size, qcfg, ncfg, from, rng)?;
    let right = random_tree(leaves - left_size, qcfg, ncfg, from, rng)?;
    Ok(WhereTree::node(left, logical, right))
}

fn random_leaf(
    qcfg: &QueryConfig,
    ncfg: &NetworkConfig,
    from: &[SourceTypeId],
    rng: &mut impl Rng,
) -> Result<Comparison, GenError> {
    let in_from = |t: &SourceTypeId| from.contains(t);
    for _ in 0..MAX_REDRAWS {
        let lhs_type = pick_banded_filtered(&ncfg.source_bands, rng, in_from)?;
        let rhs_type = pick_banded_filtered(&ncfg.source_bands, rng, in_from)?;
        if lhs_type == rhs_type && !qcfg.allow_same_type_comparison {
            continue;
        }
        let lhs = Attr {
            source: lhs_type,
            value: pick_banded(&ncfg.value_bands, rng)?,
        };
        let rhs = Attr {
            source: rhs_type,
            value: pick_banded(&ncfg.value_bands, rng)?,
        };
        if lhs == rhs {
            continue;
        }
        let op = qcfg.operators[rng.random_range(0..qcfg.operators.len())];
        return Ok(Comparison::new(lhs, op, rhs));
    }
    Err(GenError::Impossible(format!(
        "no valid comparison over from clause {:?}",
        from.iter().map(SourceTypeId::as_str).collect::<Vec<_>>()
    )))
}
