//! Three-level weighted link store.
//!
//! Links are keyed by a concept path: the origin instance, the origin's value
//! type, the target source type, the target's value type and the comparison
//! operator. Each key owns three capacity-bounded levels. New references
//! enter the bottom level; positive evidence raises a reference's weight and,
//! once the weight passes the promotion threshold, moves it up one level with
//! its weight reset. Negative evidence lowers the weight and, at the demotion
//! floor, moves it down (or drops it from the bottom level). Only top-level
//! references are returned by [`LinkStore::lookup`].

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CompareOp, Comparison, InstanceId, Network, SourceInstance, SourceTypeId, ValueTypeId,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PathKey {
    pub origin: InstanceId,
    pub origin_value: ValueTypeId,
    pub target_type: SourceTypeId,
    pub target_value: ValueTypeId,
    pub op: CompareOp,
}

/// Which side of a comparison owns the stored links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Links run from left-hand instances to right-hand instances.
    #[default]
    Forwards,
    Backwards,
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fwd" | "forwards" | "forward" => Ok(Direction::Forwards),
            "bwd" | "backwards" | "backward" => Ok(Direction::Backwards),
            other => Err(format!("unknown direction {other:?} (expected fwd or bwd)")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinkError {
    #[error("origin {origin} has type {actual}, expected {expected}")]
    OriginTypeMismatch {
        origin: InstanceId,
        expected: SourceTypeId,
        actual: SourceTypeId,
    },
    #[error("refusing to link instance {0} to itself")]
    SelfLink(InstanceId),
}

/// Path for links stored from `origin` under comparison `c`.
pub fn build_path(
    c: &Comparison,
    origin: &SourceInstance,
    dir: Direction,
) -> Result<PathKey, LinkError> {
    let (from, to) = match dir {
        Direction::Forwards => (&c.lhs, &c.rhs),
        Direction::Backwards => (&c.rhs, &c.lhs),
    };
    if origin.source_type != from.source {
        return Err(LinkError::OriginTypeMismatch {
            origin: origin.id,
            expected: from.source.clone(),
            actual: origin.source_type.clone(),
        });
    }
    Ok(PathKey {
        origin: origin.id,
        origin_value: from.value.clone(),
        target_type: to.source.clone(),
        target_value: to.value.clone(),
        op: c.op,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Level {
    Bottom = 1,
    Middle = 2,
    Top = 3,
}

impl Level {
    fn slot(self) -> usize {
        self as usize - 1
    }

    fn up(self) -> Option<Level> {
        match self {
            Level::Bottom => Some(Level::Middle),
            Level::Middle => Some(Level::Top),
            Level::Top => None,
        }
    }

    fn down(self) -> Option<Level> {
        match self {
            Level::Bottom => None,
            Level::Middle => Some(Level::Bottom),
            Level::Top => Some(Level::Middle),
        }
    }

    const ALL: [Level; 3] = [Level::Bottom, Level::Middle, Level::Top];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkRef {
    pub target: InstanceId,
    pub weight: u32,
    pub level: Level,
    /// Store clock value when the ref entered its current level.
    pub inserted_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub capacity_per_level: usize,
    pub promotion_threshold: u32,
    pub demotion_floor: u32,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            capacity_per_level: 50,
            promotion_threshold: 3,
            demotion_floor: 0,
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity_per_level == 0 {
            return Err("capacity_per_level must be at least 1".into());
        }
        if self.demotion_floor >= self.promotion_threshold {
            return Err("demotion_floor must be below promotion_threshold".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Entry {
    levels: [Vec<LinkRef>; 3],
}

impl Entry {
    fn find(&self, target: InstanceId) -> Option<(usize, usize)> {
        self.levels
            .iter()
            .enumerate()
            .find_map(|(l, refs)| refs.iter().position(|r| r.target == target).map(|i| (l, i)))
    }

    fn is_empty(&self) -> bool {
        self.levels.iter().all(Vec::is_empty)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub entries: usize,
    /// Ref counts for bottom, middle and top levels.
    pub level_counts: [usize; 3],
    pub evictions: u64,
    pub promotions: u64,
    pub demotions: u64,
    pub rejected_self_links: u64,
    /// Largest single-level size ever observed.
    pub peak_level_len: usize,
}

impl StoreStats {
    pub fn total_refs(&self) -> usize {
        self.level_counts.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct LinkStore {
    config: StoreConfig,
    entries: HashMap<PathKey, Entry>,
    clock: u64,
    evictions: u64,
    promotions: u64,
    demotions: u64,
    rejected_self_links: u64,
    peak_level_len: usize,
}

impl Default for LinkStore {
    fn default() -> Self {
        Self::new(StoreConfig::default())
    }
}

impl LinkStore {
    pub fn new(config: StoreConfig) -> Self {
        Self {
            config,
            entries: HashMap::new(),
            clock: 0,
            evictions: 0,
            promotions: 0,
            demotions: 0,
            rejected_self_links: 0,
            peak_level_len: 0,
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top-level targets, heaviest first, oldest first among equal weights.
    pub fn lookup(&self, path: &PathKey) -> Vec<InstanceId> {
        let Some(entry) = self.entries.get(path) else {
            return Vec::new();
        };
        let mut top: Vec<&LinkRef> = entry.levels[Level::Top.slot()].iter().collect();
        top.sort_by(|a, b| {
            b.weight
                .cmp(&a.weight)
                .then(a.inserted_at.cmp(&b.inserted_at))
        });
        top.into_iter().map(|r| r.target).collect()
    }

    pub fn has_top_level(&self, path: &PathKey) -> bool {
        self.entries
            .get(path)
            .is_some_and(|e| !e.levels[Level::Top.slot()].is_empty())
    }

    /// Every ref stored under `path`, across all levels.
    pub fn refs(&self, path: &PathKey) -> Vec<LinkRef> {
        self.entries
            .get(path)
            .map(|e| e.levels.iter().flatten().cloned().collect())
            .unwrap_or_default()
    }

    pub fn record_evidence(
        &mut self,
        path: &PathKey,
        target: InstanceId,
        polarity: Polarity,
    ) -> Result<(), LinkError> {
        if target == path.origin {
            self.rejected_self_links += 1;
            return Err(LinkError::SelfLink(target));
        }
        match polarity {
            Polarity::Positive => self.reinforce(path, target),
            Polarity::Negative => self.weaken(path, target),
        }
        Ok(())
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn reinforce(&mut self, path: &PathKey, target: InstanceId) {
        let threshold = self.config.promotion_threshold;
        let stamp = self.tick();
        let entry = self.entries.entry(path.clone()).or_default();
        match entry.find(target) {
            None => {
                let r = LinkRef {
                    target,
                    weight: 1,
                    level: Level::Bottom,
                    inserted_at: stamp,
                };
                self.place(path, r);
            }
            Some((slot, i)) => {
                let r = &mut entry.levels[slot][i];
                r.weight = r.weight.saturating_add(1);
                if r.weight > threshold {
                    if let Some(up) = r.level.up() {
                        let mut moved = entry.levels[slot].remove(i);
                        moved.level = up;
                        moved.weight = 1;
                        moved.inserted_at = stamp;
                        self.promotions += 1;
                        self.place(path, moved);
                    }
                }
            }
        }
    }

    fn weaken(&mut self, path: &PathKey, target: InstanceId) {
        let floor = self.config.demotion_floor;
        let threshold = self.config.promotion_threshold;
        let stamp = self.tick();
        let Some(entry) = self.entries.get_mut(path) else {
            return;
        };
        let Some((slot, i)) = entry.find(target) else {
            return;
        };
        let r = &mut entry.levels[slot][i];
        r.weight = r.weight.saturating_sub(1);
        if r.weight <= floor {
            let mut moved = entry.levels[slot].remove(i);
            self.demotions += 1;
            if let Some(down) = moved.level.down() {
                moved.level = down;
                moved.weight = threshold;
                moved.inserted_at = stamp;
                self.place(path, moved);
            }
        }
        if self.entries.get(path).is_some_and(Entry::is_empty) {
            self.entries.remove(path);
        }
    }

    /// Inserts into `r.level`, evicting the lightest (then oldest) ref when full.
    fn place(&mut self, path: &PathKey, r: LinkRef) {
        let cap = self.config.capacity_per_level;
        let entry = self
            .entries
            .get_mut(path)
            .expect("entry exists before placement");
        let level = &mut entry.levels[r.level.slot()];
        if level.len() >= cap {
            let victim = level
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.weight
                        .cmp(&b.weight)
                        .then(a.inserted_at.cmp(&b.inserted_at))
                })
                .map(|(i, _)| i)
                .expect("full level is non-empty");
            level.remove(victim);
            self.evictions += 1;
        }
        level.push(r);
        self.peak_level_len = self.peak_level_len.max(level.len());
    }

    pub fn stats(&self) -> StoreStats {
        let mut level_counts = [0usize; 3];
        for e in self.entries.values() {
            for (l, refs) in e.levels.iter().enumerate() {
                level_counts[l] += refs.len();
            }
        }
        StoreStats {
            entries: self.entries.len(),
            level_counts,
            evictions: self.evictions,
            promotions: self.promotions,
            demotions: self.demotions,
            rejected_self_links: self.rejected_self_links,
            peak_level_len: self.peak_level_len,
        }
    }

    /// Full structural check of every entry.
    pub fn check_invariants(&self) -> Result<(), String> {
        let cap = self.config.capacity_per_level;
        for (key, e) in &self.entries {
            let mut targets = std::collections::HashSet::new();
            for level in Level::ALL {
                let refs = &e.levels[level.slot()];
                if refs.len() > cap {
                    return Err(format!(
                        "{key:?} level {level:?} holds {} > {cap}",
                        refs.len()
                    ));
                }
                for r in refs {
                    if r.level != level {
                        return Err(format!("{key:?}: ref {} filed under wrong level", r.target));
                    }
                    if r.target == key.origin {
                        return Err(format!("{key:?}: self link"));
                    }
                    if !targets.insert(r.target) {
                        return Err(format!("{key:?}: target {} stored twice", r.target));
                    }
                    if r.weight <= self.config.demotion_floor {
                        return Err(format!("{key:?}: weight {} at or below floor", r.weight));
                    }
                    if level != Level::Top && r.weight > self.config.promotion_threshold {
                        return Err(format!(
                            "{key:?}: weight {} above threshold below top",
                            r.weight
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Line-oriented dump, one ref per line, sorted by path then level.
    ///
    /// Columns: origin, origin value, target type, target value, operator,
    /// target, level, weight.
    pub fn dump(&self, net: &Network) -> String {
        let mut keys: Vec<&PathKey> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::from(
            "# origin\torigin_value\ttarget_type\ttarget_value\top\ttarget\tlevel\tweight\n",
        );
        for key in keys {
            let e = &self.entries[key];
            for level in Level::ALL.iter().rev() {
                let mut refs: Vec<&LinkRef> = e.levels[level.slot()].iter().collect();
                refs.sort_by(|a, b| {
                    b.weight
                        .cmp(&a.weight)
                        .then(a.inserted_at.cmp(&b.inserted_at))
                });
                for r in refs {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        net.label(key.origin),
                        key.origin_value,
                        key.target_type,
                        key.target_value,
                        key.op,
                        net.label(r.target),
                        *level as u8,
                        r.weight
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Attr;

    fn key(origin: u32) -> PathKey {
        PathKey {
            origin: InstanceId(origin),
            origin_value: "Value1".into(),
            target_type: "B".into(),
            target_value: "Value2".into(),
            op: CompareOp::Eq,
        }
    }

    fn net() -> Network {
        Network::new(
            vec!["A".into(), "B".into()],
            vec!["Value1".into(), "Value2".into()],
            vec![vec![vec![1, 1]; 2], vec![vec![1, 1]; 60]],
        )
        .unwrap()
    }

    #[test]
    fn build_path_backwards_matches_worked_example() {
        let n = net();
        let c = Comparison::new(
            Attr::new("A", "Value1"),
            CompareOp::Gt,
            Attr::new("B", "Value2"),
        );
        let b1 = n.instance(InstanceId(2));
        let k = build_path(&c, b1, Direction::Backwards).unwrap();
        assert_eq!(k.origin, b1.id);
        assert_eq!(k.origin_value.as_str(), "Value2");
        assert_eq!(k.target_type.as_str(), "A");
        assert_eq!(k.target_value.as_str(), "Value1");
        assert_eq!(k.op, CompareOp::Gt);
    }

    #[test]
    fn build_path_forwards_and_type_mismatch() {
        let n = net();
        let c = Comparison::new(
            Attr::new("A", "Value1"),
            CompareOp::Eq,
            Attr::new("B", "Value2"),
        );
        let k = build_path(&c, n.instance(InstanceId(0)), Direction::Forwards).unwrap();
        assert_eq!(k, key(0));
        assert!(matches!(
            build_path(&c, n.instance(InstanceId(0)), Direction::Backwards),
            Err(LinkError::OriginTypeMismatch { .. })
        ));
    }

    #[test]
    fn lookup_empty_and_bottom_only() {
        let mut s = LinkStore::default();
        assert!(s.lookup(&key(0)).is_empty());
        s.record_evidence(&key(0), InstanceId(5), Polarity::Positive)
            .unwrap();
        assert!(s.lookup(&key(0)).is_empty());
    }

    #[test]
    fn promotion_trace_threshold_two() {
        let mut s = LinkStore::new(StoreConfig {
            promotion_threshold: 2,
            ..Default::default()
        });
        for _ in 0..3 {
            s.record_evidence(&key(0), InstanceId(5), Polarity::Positive)
                .unwrap();
        }
        let refs = s.refs(&key(0));
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].level, Level::Middle);
        assert_eq!(refs[0].weight, 1);
        assert_eq!(s.stats().level_counts, [0, 1, 0]);
    }

    #[test]
    fn default_constants_reach_top_after_seven() {
        let mut s = LinkStore::default();
        for i in 1..=7 {
            s.record_evidence(&key(0), InstanceId(5), Polarity::Positive)
                .unwrap();
            assert_eq!(s.lookup(&key(0)).is_empty(), i < 7, "after {i}");
        }
    }

    #[test]
    fn lookup_orders_by_weight_then_age() {
        let mut s = LinkStore::new(StoreConfig {
            promotion_threshold: 1,
            ..Default::default()
        });
        // threshold 1: insert, +1 promotes to middle, +1 stays (w=2>1 promotes to top)
        for (t, extra) in [(10u32, 4), (11, 6), (12, 4)] {
            for _ in 0..3 + extra {
                s.record_evidence(&key(0), InstanceId(t), Polarity::Positive)
                    .unwrap();
            }
        }
        // top weights: 10 -> 5, 11 -> 7, 12 -> 5 (12 promoted later than 10)
        assert_eq!(
            s.lookup(&key(0)),
            vec![InstanceId(11), InstanceId(10), InstanceId(12)]
        );
    }

    #[test]
    fn positive_then_negative_removes() {
        let mut s = LinkStore::default();
        s.record_evidence(&key(0), InstanceId(5), Polarity::Positive)
            .unwrap();
        s.record_evidence(&key(0), InstanceId(5), Polarity::Negative)
            .unwrap();
        assert!(s.refs(&key(0)).is_empty());
        assert_eq!(
            s.stats(),
            StoreStats {
                demotions: 1,
                peak_level_len: 1,
                ..Default::default()
            }
        );
    }

    #[test]
    fn demotion_resets_to_threshold() {
        let mut s = LinkStore::default();
        for _ in 0..4 {
            s.record_evidence(&key(0), InstanceId(5), Polarity::Positive)
                .unwrap();
        }
        assert_eq!(s.refs(&key(0))[0].level, Level::Middle);
        s.record_evidence(&key(0), InstanceId(5), Polarity::Negative)
            .unwrap();
        let r = &s.refs(&key(0))[0];
        assert_eq!((r.level, r.weight), (Level::Bottom, 3));
    }

    #[test]
    fn full_level_evicts_lightest_then_oldest() {
        let mut s = LinkStore::default();
        for t in 100..150 {
            s.record_evidence(&key(0), InstanceId(t), Polarity::Positive)
                .unwrap();
        }
        // everything at weight 1 except 100
        s.record_evidence(&key(0), InstanceId(100), Polarity::Positive)
            .unwrap();
        s.record_evidence(&key(0), InstanceId(200), Polarity::Positive)
            .unwrap();
        let targets: Vec<InstanceId> = s.refs(&key(0)).iter().map(|r| r.target).collect();
        assert_eq!(targets.len(), 50);
        assert!(targets.contains(&InstanceId(100)));
        assert!(
            !targets.contains(&InstanceId(101)),
            "oldest weight-1 ref evicted"
        );
        assert!(targets.contains(&InstanceId(200)));
        assert_eq!(s.stats().evictions, 1);
        s.check_invariants().unwrap();
    }

    #[test]
    fn self_link_rejected_and_counted() {
        let mut s = LinkStore::default();
        assert_eq!(
            s.record_evidence(&key(3), InstanceId(3), Polarity::Positive),
            Err(LinkError::SelfLink(InstanceId(3)))
        );
        assert_eq!(s.stats().rejected_self_links, 1);
        assert!(s.is_empty());
    }

    #[test]
    fn empty_stats() {
        assert_eq!(LinkStore::default().stats(), StoreStats::default());
    }

    #[test]
    fn negative_on_absent_is_noop() {
        let mut s = LinkStore::default();
        s.record_evidence(&key(0), InstanceId(9), Polarity::Negative)
            .unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn dump_format() {
        let n = net();
        let mut s = LinkStore::default();
        for _ in 0..7 {
            s.record_evidence(&key(0), InstanceId(3), Polarity::Positive)
                .unwrap();
        }
        s.record_evidence(&key(0), InstanceId(4), Polarity::Positive)
            .unwrap();
        let expected =
            "# origin\torigin_value\ttarget_type\ttarget_value\top\ttarget\tlevel\tweight\n\
                        A1\tValue1\tB\tValue2\tEQ\tB2\t3\t1\n\
                        A1\tValue1\tB\tValue2\tEQ\tB3\t1\t1\n";
        assert_eq!(s.dump(&n), expected);
    }
}
