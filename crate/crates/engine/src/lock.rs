//! Row lock table. Locks are keyed by (table, primary key) and may be taken on
//! keys that do not exist yet, which is what protects point lookups from
//! phantom inserts.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use txmerge_core::Value;

pub type TxnId = u64;
pub type LockKey = (usize, Vec<Value>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockMode {
    Shared,
    Exclusive,
}

#[derive(Default)]
struct Entry {
    writer: Option<TxnId>,
    readers: Vec<TxnId>,
}

impl Entry {
    fn grantable(&self, txn: TxnId, mode: LockMode) -> bool {
        match mode {
            LockMode::Shared => self.writer.is_none_or(|w| w == txn),
            LockMode::Exclusive => {
                self.writer.is_none_or(|w| w == txn) && self.readers.iter().all(|&r| r == txn)
            }
        }
    }

    fn grant(&mut self, txn: TxnId, mode: LockMode) {
        match mode {
            LockMode::Shared => {
                if self.writer != Some(txn) && !self.readers.contains(&txn) {
                    self.readers.push(txn);
                }
            }
            LockMode::Exclusive => {
                self.writer = Some(txn);
                self.readers.retain(|&r| r != txn);
            }
        }
    }

    fn is_free(&self) -> bool {
        self.writer.is_none() && self.readers.is_empty()
    }
}

struct Shard {
    map: Mutex<HashMap<LockKey, Entry>>,
    cv: Condvar,
}

pub struct LockTable {
    shards: Vec<Shard>,
}

const SHARDS: usize = 64;

impl Default for LockTable {
    fn default() -> Self {
        LockTable {
            shards: (0..SHARDS).map(|_| Shard { map: Mutex::new(HashMap::new()), cv: Condvar::new() }).collect(),
        }
    }
}

/// Outcome of a successful acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Granted {
    pub waited: bool,
}

impl LockTable {
    fn shard(&self, key: &LockKey) -> &Shard {
        let mut h = DefaultHasher::new();
        key.hash(&mut h);
        &self.shards[(h.finish() as usize) % SHARDS]
    }

    /// Blocks until the lock is granted or `timeout` elapses (`None`).
    pub fn acquire(&self, txn: TxnId, key: &LockKey, mode: LockMode, timeout: Duration) -> Option<Granted> {
        let shard = self.shard(key);
        let mut map = shard.map.lock();
        let mut deadline: Option<Instant> = None;
        loop {
            if !map.contains_key(key) {
                map.insert(key.clone(), Entry::default());
            }
            let entry = map.get_mut(key).expect("entry present");
            if entry.grantable(txn, mode) {
                entry.grant(txn, mode);
                return Some(Granted { waited: deadline.is_some() });
            }
            let until = *deadline.get_or_insert_with(|| Instant::now() + timeout);
            if shard.cv.wait_until(&mut map, until).timed_out() {
                let entry = map.entry(key.clone()).or_default();
                if entry.grantable(txn, mode) {
                    entry.grant(txn, mode);
                    return Some(Granted { waited: true });
                }
                return None;
            }
        }
    }

    pub fn release<'a>(&self, txn: TxnId, keys: impl IntoIterator<Item = &'a LockKey>) {
        for key in keys {
            let shard = self.shard(key);
            let mut map = shard.map.lock();
            if let Some(entry) = map.get_mut(key) {
                if entry.writer == Some(txn) {
                    entry.writer = None;
                }
                entry.readers.retain(|&r| r != txn);
                if entry.is_free() {
                    map.remove(key);
                }
            }
            drop(map);
            shard.cv.notify_all();
        }
    }

    /// Number of keys with at least one holder (diagnostics and tests).
    pub fn held_keys(&self) -> usize {
        self.shards.iter().map(|s| s.map.lock().values().filter(|e| !e.is_free()).count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: i64) -> LockKey {
        (0, vec![Value::Int(v)])
    }

    #[test]
    fn shared_locks_coexist_and_block_writers() {
        let t = LockTable::default();
        let short = Duration::from_millis(20);
        assert!(t.acquire(1, &k(1), LockMode::Shared, short).is_some());
        assert!(t.acquire(2, &k(1), LockMode::Shared, short).is_some());
        assert!(t.acquire(3, &k(1), LockMode::Exclusive, short).is_none());
        t.release(1, [&k(1)]);
        t.release(2, [&k(1)]);
        assert!(t.acquire(3, &k(1), LockMode::Exclusive, short).is_some());
        assert_eq!(t.held_keys(), 1);
    }

    #[test]
    fn sole_reader_upgrades() {
        let t = LockTable::default();
        let short = Duration::from_millis(20);
        t.acquire(1, &k(1), LockMode::Shared, short).unwrap();
        assert!(t.acquire(1, &k(1), LockMode::Exclusive, short).is_some());
        assert!(t.acquire(2, &k(1), LockMode::Shared, short).is_none());
    }

    #[test]
    fn waiter_is_woken_on_release() {
        let t = std::sync::Arc::new(LockTable::default());
        t.acquire(1, &k(7), LockMode::Exclusive, Duration::from_millis(10)).unwrap();
        let t2 = t.clone();
        let h = std::thread::spawn(move || t2.acquire(2, &k(7), LockMode::Exclusive, Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(30));
        t.release(1, [&k(7)]);
        assert_eq!(h.join().unwrap(), Some(Granted { waited: true }));
    }
}
