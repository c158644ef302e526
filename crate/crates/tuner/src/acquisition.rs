use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::gp::GprModel;
use crate::space::{Config, SearchSpace};

/// Exploration margin, in standardized target units.
pub const XI: f64 = 0.01;

/// Expected Improvement for maximization.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let imp = mu - best - xi;
    if sigma <= 1e-12 {
        return imp.max(0.0);
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let z = imp / sigma;
    (imp * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

impl GprModel {
    /// EI at `c` against incumbent throughput `best`.
    pub fn ei(&self, c: Config, best: f64) -> f64 {
        let (mu, var) = self.predict_standardized(c);
        expected_improvement(mu, var.sqrt(), self.standardize(best), XI)
    }
}

/// Grid configuration maximizing EI; ties go to the smallest (W, B).
pub fn next_config(model: &GprModel, space: &SearchSpace, best: f64) -> Config {
    let mut pick = Config::new(1, 1);
    let mut top = f64::NEG_INFINITY;
    for c in space.configs() {
        let ei = model.ei(c, best);
        if ei > top {
            top = ei;
            pick = c;
        }
    }
    pick
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_reduces_to_clipped_improvement() {
        assert_eq!(expected_improvement(1.0, 0.0, 2.0, XI), 0.0);
        assert!((expected_improvement(3.0, 0.0, 2.0, XI) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn ei_grows_with_sigma_at_fixed_mean() {
        let a = expected_improvement(0.0, 0.1, 0.5, XI);
        let b = expected_improvement(0.0, 1.0, 0.5, XI);
        assert!(b > a && a >= 0.0);
    }
}
