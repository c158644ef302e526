//! Range-rule routing with atomically swappable policies.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::value::Value;

/// Half-open range `[lo, hi)` of routing values sent to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub lo: i64,
    pub hi: i64,
    pub target: usize,
}

/// Which routing value a key yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyMode {
    /// The first key component (strings are hashed).
    #[default]
    First,
    /// A stable hash of the whole key in `[0, HASH_SPACE)`.
    Hash,
}

pub const HASH_SPACE: i64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPolicy {
    pub version: u64,
    pub rules: Vec<Rule>,
    pub fallback: usize,
    #[serde(default)]
    pub key: KeyMode,
}

impl PartitionPolicy {
    /// A policy with no rules: everything goes to `fallback`.
    pub fn single(version: u64, fallback: usize) -> Self {
        PartitionPolicy { version, rules: Vec::new(), fallback, key: KeyMode::First }
    }

    /// Splits the hash space evenly over `targets` targets.
    pub fn hashed(version: u64, targets: usize) -> Self {
        let targets = targets.max(1) as i64;
        let rules = (0..targets)
            .map(|t| Rule { lo: HASH_SPACE * t / targets, hi: HASH_SPACE * (t + 1) / targets, target: t as usize })
            .collect();
        PartitionPolicy { version, rules, fallback: 0, key: KeyMode::Hash }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut sorted = self.rules.clone();
        sorted.sort_by_key(|r| r.lo);
        for r in &sorted {
            if r.lo >= r.hi {
                return Err(PolicyError::Invalid(format!("empty range [{}, {})", r.lo, r.hi)));
            }
        }
        for w in sorted.windows(2) {
            if w[1].lo < w[0].hi {
                return Err(PolicyError::Invalid(format!(
                    "ranges [{}, {}) and [{}, {}) overlap",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Ok(())
    }

    /// Target for `key`; total by construction.
    pub fn route(&self, key: &[Value]) -> usize {
        let Some(v) = routing_value(key, self.key) else {
            return self.fallback;
        };
        self.rules.iter().find(|r| r.lo <= v && v < r.hi).map_or(self.fallback, |r| r.target)
    }

    /// True when `key` matches no rule.
    pub fn falls_back(&self, key: &[Value]) -> bool {
        match routing_value(key, self.key) {
            Some(v) => !self.rules.iter().any(|r| r.lo <= v && v < r.hi),
            None => true,
        }
    }
}

pub fn route(key: &[Value], policy: &PartitionPolicy) -> usize {
    policy.route(key)
}

fn routing_value(key: &[Value], mode: KeyMode) -> Option<i64> {
    match mode {
        KeyMode::First => match key.first()? {
            Value::Null => None,
            Value::Int(v) | Value::Timestamp(v) => Some(*v),
            Value::Decimal(d) => Some(d.cents()),
            Value::Str(s) => Some((fnv1a(s.as_bytes(), FNV_OFFSET) % HASH_SPACE as u64) as i64),
        },
        KeyMode::Hash => Some((stable_hash(key) % HASH_SPACE as u64) as i64),
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Process-independent hash of a key tuple.
pub fn stable_hash(key: &[Value]) -> u64 {
    let mut h = FNV_OFFSET;
    for v in key {
        h = match v {
            Value::Null => fnv1a(&[0], h),
            Value::Int(i) => fnv1a(&i.to_le_bytes(), fnv1a(&[1], h)),
            Value::Decimal(d) => fnv1a(&d.cents().to_le_bytes(), fnv1a(&[2], h)),
            Value::Str(s) => fnv1a(s.as_bytes(), fnv1a(&[3], h)),
            Value::Timestamp(t) => fnv1a(&t.to_le_bytes(), fnv1a(&[4], h)),
        };
    }
    // Finalizer so that small integer keys spread over the whole space.
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// One level of the routing hierarchy. Reads are lock-free; updates are
/// serialized and replace the whole policy at once.
#[derive(Debug)]
pub struct Partitioner {
    policy: ArcSwap<PartitionPolicy>,
    update: Mutex<()>,
    fallback_hits: AtomicU64,
}

impl Partitioner {
    pub fn new(policy: PartitionPolicy) -> Result<Self, PolicyError> {
        policy.validate()?;
        Ok(Partitioner { policy: ArcSwap::from_pointee(policy), update: Mutex::new(()), fallback_hits: AtomicU64::new(0) })
    }

    pub fn policy(&self) -> Arc<PartitionPolicy> {
        self.policy.load_full()
    }

    pub fn version(&self) -> u64 {
        self.policy.load().version
    }

    pub fn route(&self, key: &[Value]) -> usize {
        let policy = self.policy.load();
        if policy.falls_back(key) {
            self.fallback_hits.fetch_add(1, Ordering::Relaxed);
        }
        policy.route(key)
    }

    pub fn fallback_hits(&self) -> u64 {
        self.fallback_hits.load(Ordering::Relaxed)
    }

    pub fn update_policy(&self, new: PartitionPolicy) -> Result<(), PolicyError> {
        let _guard = self.update.lock();
        let current = self.policy.load().version;
        if new.version <= current {
            return Err(PolicyError::StaleVersion { current, offered: new.version });
        }
        new.validate()?;
        self.policy.store(Arc::new(new));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_mergers() -> PartitionPolicy {
        PartitionPolicy {
            version: 1,
            rules: vec![Rule { lo: 1, hi: 11, target: 1 }, Rule { lo: 11, hi: 21, target: 2 }],
            fallback: 9,
            key: KeyMode::First,
        }
    }

    #[test]
    fn ranges_and_fallback() {
        let p = two_mergers();
        assert_eq!(route(&[Value::Int(5)], &p), 1);
        assert_eq!(route(&[Value::Int(10)], &p), 1);
        assert_eq!(route(&[Value::Int(11)], &p), 2);
        assert_eq!(route(&[Value::Int(999)], &p), 9);
        assert_eq!(route(&[Value::Int(5)], &PartitionPolicy::single(1, 3)), 3);
        assert_eq!(route(&[], &p), 9);
    }

    #[test]
    fn overlapping_rules_are_invalid() {
        let mut p = two_mergers();
        p.rules[1].lo = 10;
        assert!(p.validate().is_err());
    }

    #[test]
    fn stale_versions_are_rejected() {
        let part = Partitioner::new(two_mergers()).unwrap();
        let mut v2 = PartitionPolicy::single(2, 0);
        part.update_policy(v2.clone()).unwrap();
        assert_eq!(part.route(&[Value::Int(5)]), 0);
        v2.fallback = 4;
        assert_eq!(part.update_policy(v2), Err(PolicyError::StaleVersion { current: 2, offered: 2 }));
        assert_eq!(part.route(&[Value::Int(5)]), 0);
        assert_eq!(part.version(), 2);
    }

    #[test]
    fn hashed_policy_spreads_districts() {
        let p = PartitionPolicy::hashed(1, 4);
        p.validate().unwrap();
        let mut used = std::collections::BTreeSet::new();
        for w in 1..=2 {
            for d in 1..=10 {
                used.insert(p.route(&[Value::Int(w), Value::Int(d)]));
            }
        }
        assert_eq!(used.len(), 4);
    }

    proptest! {
        #[test]
        fn routing_is_total_and_deterministic(
            ranges in proptest::collection::vec((0i64..100, 1i64..20, 0usize..8), 0..6),
            fallback in 0usize..8,
            key in proptest::collection::vec(-50i64..200, 0..3),
        ) {
            // Build disjoint rules from sorted starting points.
            let mut rules = Vec::new();
            let mut next = i64::MIN;
            let mut sorted = ranges.clone();
            sorted.sort();
            for (lo, len, target) in sorted {
                let lo = lo.max(next);
                rules.push(Rule { lo, hi: lo + len, target });
                next = lo + len;
            }
            let policy = PartitionPolicy { version: 1, rules, fallback, key: KeyMode::First };
            prop_assert!(policy.validate().is_ok());
            let key: Vec<Value> = key.into_iter().map(Value::Int).collect();
            let t = policy.route(&key);
            prop_assert_eq!(t, policy.route(&key));
            let matched = policy.rules.iter().any(|r| r.target == t) || t == fallback;
            prop_assert!(matched);
        }
    }
}
