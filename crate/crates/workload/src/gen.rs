//! Seeded argument generators for the TPC-C and order-total workloads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use txmerge_core::Decimal;

use crate::neworder::{NewOrderArgs, OrderLine};
use crate::order_total::AddItemArgs;
use crate::payment::PaymentArgs;
use crate::tpcc::Scale;

/// Item popularity skew.
pub const ZIPF_THETA: f64 = 0.99;

pub struct TpccGen {
    scale: Scale,
    rng: ChaCha8Rng,
    items: Zipf<f64>,
    next_h_id: i64,
    clock: i64,
}

impl TpccGen {
    /// `h_id_base` separates history ids of generators that feed one database.
    pub fn new(scale: Scale, seed: u64, h_id_base: i64) -> Self {
        TpccGen {
            scale,
            rng: ChaCha8Rng::seed_from_u64(seed),
            items: Zipf::new(scale.items as u64, ZIPF_THETA).expect("items >= 1"),
            next_h_id: h_id_base,
            clock: 1_700_000_000_000,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn district(&mut self) -> (i64, i64) {
        (self.rng.gen_range(1..=self.scale.warehouses), self.rng.gen_range(1..=self.scale.districts))
    }

    fn other_warehouse(&mut self, w: i64) -> i64 {
        if self.scale.warehouses == 1 {
            return w;
        }
        let o = self.rng.gen_range(1..self.scale.warehouses);
        if o >= w {
            o + 1
        } else {
            o
        }
    }

    fn tick(&mut self) -> i64 {
        self.clock += 1;
        self.clock
    }

    fn item(&mut self) -> i64 {
        self.items.sample(&mut self.rng) as i64
    }

    /// 5-15 lines with Zipf-skewed items; 1% of lines come from another
    /// warehouse.
    pub fn neworder_at(&mut self, w_id: i64, d_id: i64) -> NewOrderArgs {
        let n = self.rng.gen_range(5..=15);
        let items = (0..n)
            .map(|_| {
                let supply_w_id = if self.rng.gen_range(0..100) == 0 { self.other_warehouse(w_id) } else { w_id };
                OrderLine { i_id: self.item(), supply_w_id, quantity: self.rng.gen_range(1..=10) }
            })
            .collect();
        NewOrderArgs { w_id, d_id, c_id: self.rng.gen_range(1..=self.scale.customers), entry_d: self.tick(), items }
    }

    pub fn neworder(&mut self) -> NewOrderArgs {
        let (w, d) = self.district();
        self.neworder_at(w, d)
    }

    /// 85% of payments are by a customer of the paying district, 15% by a
    /// customer of another warehouse.
    pub fn payment_at(&mut self, w_id: i64, d_id: i64) -> PaymentArgs {
        let (c_w_id, c_d_id) = if self.rng.gen_range(0..100) < 85 || self.scale.warehouses == 1 {
            (w_id, d_id)
        } else {
            (self.other_warehouse(w_id), self.rng.gen_range(1..=self.scale.districts))
        };
        let h_id = self.next_h_id;
        self.next_h_id += 1;
        PaymentArgs {
            w_id,
            d_id,
            c_w_id,
            c_d_id,
            c_id: self.rng.gen_range(1..=self.scale.customers),
            amount: Decimal::from_cents(self.rng.gen_range(100..=500_000)),
            h_id,
            h_date: self.tick(),
        }
    }

    pub fn payment(&mut self) -> PaymentArgs {
        let (w, d) = self.district();
        self.payment_at(w, d)
    }
}

/// Add-item arguments over `orders` orders; line numbers are unique per
/// generator, starting at `line_base`.
pub struct OrderGen {
    rng: ChaCha8Rng,
    orders: i64,
    next_line: i64,
    clock: i64,
}

impl OrderGen {
    pub fn new(orders: i64, seed: u64, line_base: i64) -> Self {
        OrderGen { rng: ChaCha8Rng::seed_from_u64(seed), orders, next_line: line_base, clock: 1_700_000_000_000 }
    }

    pub fn add_item_to(&mut self, order_id: i64) -> AddItemArgs {
        self.next_line += 1;
        self.clock += 1;
        AddItemArgs {
            order_id,
            line_no: self.next_line,
            variant_id: self.rng.gen_range(1..=500),
            quantity: self.rng.gen_range(1..=5),
            price: Decimal::from_cents(self.rng.gen_range(100..=20_000)),
            now: self.clock,
        }
    }

    pub fn add_item(&mut self) -> AddItemArgs {
        let o = self.rng.gen_range(1..=self.orders);
        self.add_item_to(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn items_are_skewed_and_in_range() {
        let mut g = TpccGen::new(Scale::default(), 3, 1);
        let mut ones = 0;
        let mut total = 0;
        for _ in 0..200 {
            for l in g.neworder().items {
                assert!((1..=1000).contains(&l.i_id));
                total += 1;
                ones += usize::from(l.i_id == 1);
            }
        }
        // Under uniform choice item 1 would get ~0.1% of lines.
        assert!(ones * 100 > total, "{ones}/{total}");
    }

    #[test]
    fn payments_have_unique_history_ids() {
        let mut g = TpccGen::new(Scale::default(), 3, 100);
        let ids: Vec<i64> = (0..50).map(|_| g.payment().h_id).collect();
        assert_eq!(ids, (100..150).collect::<Vec<_>>());
    }

    #[test]
    fn remote_payments_use_another_warehouse() {
        let mut g = TpccGen::new(Scale::default(), 5, 1);
        let remote = (0..1000).map(|_| g.payment_at(1, 1)).filter(|p| p.c_w_id != 1).count();
        assert!((80..=220).contains(&remote), "{remote}");
    }
}
