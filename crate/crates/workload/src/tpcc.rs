//! The TPC-C subset used by the new-order and payment workloads, loaded at
//! desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use txmerge_core::{Decimal, Predicate, Schema, Value};
use txmerge_engine::{Engine, EngineConfig, EngineError};

pub const SCHEMA_JSON: &str = include_str!("../../../templates/tpcc_schema.json");

pub fn schema() -> Schema {
    Schema::from_json_str(SCHEMA_JSON).expect("bundled schema parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scale {
    pub warehouses: i64,
    pub districts: i64,
    pub customers: i64,
    pub items: i64,
    /// Fraction of customers with bad credit, in percent.
    pub bc_percent: u32,
}

impl Default for Scale {
    fn default() -> Self {
        Scale { warehouses: 2, districts: 10, customers: 30, items: 1000, bc_percent: 1 }
    }
}

impl Scale {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("warehouses", self.warehouses),
            ("districts", self.districts),
            ("customers", self.customers),
            ("items", self.items),
        ] {
            if v < 1 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.bc_percent > 100 {
            return Err("bc_percent must be at most 100".into());
        }
        Ok(())
    }
}

/// Every district starts with no orders, so its first order id is 1.
pub const FIRST_ORDER_ID: i64 = 1;

fn text(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Value {
    let n = rng.gen_range(min..=max);
    Value::Str((0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect())
}

fn cents(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Value {
    Value::Decimal(Decimal::from_cents(rng.gen_range(lo..=hi)))
}

const SYLLABLES: [&str; 10] = ["BAR", "OUGHT", "ABLE", "PRI", "PRES", "ESE", "ANTI", "CALLY", "ATION", "EING"];

/// TPC-C style last name from a number in 0..1000.
pub fn last_name(n: i64) -> String {
    let n = n.rem_euclid(1000) as usize;
    format!("{}{}{}", SYLLABLES[n / 100], SYLLABLES[(n / 10) % 10], SYLLABLES[n % 10])
}

/// Populates a fresh engine. The same scale and seed always produce the
/// same snapshot digest.
pub fn load(scale: Scale, seed: u64, config: EngineConfig) -> Result<Engine, EngineError> {
    scale.validate().map_err(EngineError::Schema)?;
    let engine = Engine::with_config(schema(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let int = Value::Int;

    let mut rows = Vec::new();
    for w in 1..=scale.warehouses {
        rows.push(vec![
            int(w),
            Value::str(format!("WH-{w}")),
            text(&mut rng, 10, 20),
            text(&mut rng, 10, 20),
            cents(&mut rng, 0, 20),
            Value::dec("300000.00"),
        ]);
    }
    engine.load("warehouse", rows)?;

    let mut rows = Vec::new();
    for w in 1..=scale.warehouses {
        for d in 1..=scale.districts {
            rows.push(vec![
                int(w),
                int(d),
                Value::str(format!("D-{w}-{d}")),
                text(&mut rng, 10, 20),
                text(&mut rng, 10, 20),
                cents(&mut rng, 0, 20),
                Value::dec("30000.00"),
                int(FIRST_ORDER_ID),
            ]);
        }
    }
    engine.load("district", rows)?;

    let mut rows = Vec::new();
    for w in 1..=scale.warehouses {
        for d in 1..=scale.districts {
            for c in 1..=scale.customers {
                let bad = rng.gen_range(0..100) < scale.bc_percent;
                rows.push(vec![
                    int(w),
                    int(d),
                    int(c),
                    text(&mut rng, 8, 16),
                    Value::str(last_name(c - 1)),
                    Value::str(if bad { "BC" } else { "GC" }),
                    cents(&mut rng, 0, 50),
                    Value::dec("-10.00"),
                    Value::dec("10.00"),
                    int(1),
                    text(&mut rng, 30, 50),
                ]);
            }
        }
    }
    engine.load("customer", rows)?;

    let mut rows = Vec::new();
    for i in 1..=scale.items {
        rows.push(vec![int(i), text(&mut rng, 14, 24), cents(&mut rng, 100, 10_000), text(&mut rng, 26, 50)]);
    }
    engine.load("item", rows)?;

    let mut rows = Vec::new();
    for w in 1..=scale.warehouses {
        for i in 1..=scale.items {
            rows.push(vec![
                int(w),
                int(i),
                int(rng.gen_range(10..=100)),
                int(0),
                int(0),
                int(0),
                Value::str(format!("dist-{w:04}-{i:06}-info-xx")),
                text(&mut rng, 26, 50),
            ]);
        }
    }
    engine.load("stock", rows)?;
    Ok(engine)
}

/// `a = x AND b = y ...`, or a bare equality for one pair.
pub fn key(pairs: &[(&str, Value)]) -> Predicate {
    let mut terms: Vec<Predicate> = pairs.iter().map(|(c, v)| Predicate::eq(*c, v.clone())).collect();
    if terms.len() == 1 {
        terms.pop().expect("one term")
    } else {
        Predicate::And(terms)
    }
}
