use std::time::Duration;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::acquisition::next_config;
use crate::gp::fit_or_constant;
use crate::space::{Config, Observation, SearchSpace};
use crate::TunerError;

/// Applies a configuration and reports throughput over a window.
pub trait Measurer {
    fn measure(&mut self, config: Config, window: Duration) -> Result<f64, TunerError>;
}

/// Seeded synthetic throughput surface: a Gaussian bump over a 20% floor,
/// plus additive Gaussian noise proportional to the peak.
#[derive(Debug, Clone)]
pub struct SyntheticSurface {
    pub space: SearchSpace,
    pub optimum: Config,
    pub peak: f64,
    pub noise_frac: f64,
    flat: bool,
    rng: ChaCha8Rng,
}

impl SyntheticSurface {
    pub fn unimodal(space: SearchSpace, optimum: Config, peak: f64, noise_frac: f64, seed: u64) -> Self {
        SyntheticSurface { space, optimum, peak, noise_frac, flat: false, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn flat(space: SearchSpace, value: f64) -> Self {
        SyntheticSurface {
            space,
            optimum: Config::new(1, 1),
            peak: value,
            noise_frac: 0.0,
            flat: true,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Noise-free value at `c`.
    pub fn true_value(&self, c: Config) -> f64 {
        if self.flat {
            return self.peak;
        }
        let sw = f64::from(self.space.w_max) / 4.0;
        let sb = f64::from(self.space.b_max) / 4.0;
        let dw = (f64::from(c.workers) - f64::from(self.optimum.workers)) / sw;
        let db = (f64::from(c.batch) - f64::from(self.optimum.batch)) / sb;
        self.peak * (0.2 + 0.8 * (-0.5 * (dw * dw + db * db)).exp())
    }

    /// Best configuration by exhaustive enumeration.
    pub fn grid_optimum(&self) -> (Config, f64) {
        self.space
            .configs()
            .map(|c| (c, self.true_value(c)))
            .fold((Config::new(1, 1), f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best })
    }
}

impl Measurer for SyntheticSurface {
    fn measure(&mut self, config: Config, _window: Duration) -> Result<f64, TunerError> {
        let v = self.true_value(config);
        if self.noise_frac == 0.0 {
            return Ok(v);
        }
        let noise = Normal::new(0.0, self.noise_frac * self.peak).expect("positive sigma");
        Ok((v + noise.sample(&mut self.rng)).max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TuneOptions {
    pub initial: usize,
    /// Maximum number of model-guided iterations.
    pub cap: usize,
    pub window: Duration,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { initial: 20, cap: 25, window: Duration::from_secs(30), seed: 0 }
    }
}

/// One measurement. Iteration 0 marks the random initial samples, which have
/// no prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub config: Config,
    pub throughput: f64,
    pub predicted_mean: Option<f64>,
    pub predicted_var: Option<f64>,
}

impl TraceRow {
    pub fn csv_header() -> &'static str {
        "iteration,W,B,throughput,predicted_mean,predicted_var"
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{},{}",
            self.iteration,
            self.config.workers,
            self.config.batch,
            self.throughput,
            opt(self.predicted_mean),
            opt(self.predicted_var)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    /// Highest measured configuration.
    pub best: Config,
    pub best_throughput: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The iteration cap ended the loop.
    pub capped: bool,
    pub trace: Vec<TraceRow>,
}

/// Random initial samples, then fit → Expected Improvement → measure until
/// the recommendation is unchanged and the predicted best moved by less than
/// 1% for two consecutive iterations, or the cap is reached. A flat
/// (degenerate) model stops after one iteration.
pub fn tune_loop(measurer: &mut dyn Measurer, space: &SearchSpace, opts: TuneOptions) -> Result<TuneResult, TunerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let grid: Vec<Config> = space.configs().collect();
    let starts: Vec<Config> = if grid.len() >= opts.initial {
        sample(&mut rng, grid.len(), opts.initial).into_iter().map(|i| grid[i]).collect()
    } else {
        (0..opts.initial).map(|_| grid[rng.gen_range(0..grid.len())]).collect()
    };
    let mut observations = Vec::new();
    let mut trace = Vec::new();
    let mut record = |obs: &mut Vec<Observation>, it: usize, c: Config, t: f64, pred: Option<(f64, f64)>| {
        obs.push(Observation { config: c, throughput: t, window: opts.window });
        trace.push(TraceRow {
            iteration: it,
            config: c,
            throughput: t,
            predicted_mean: pred.map(|p| p.0),
            predicted_var: pred.map(|p| p.1),
        });
    };
    for c in starts {
        let t = measurer.measure(c, opts.window)?;
        record(&mut observations, 0, c, t, None);
    }

    let mut prev: Option<(Config, f64)> = None;
    let mut streak = 0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.cap {
        iterations = it;
        let model = fit_or_constant(&observations, space);
        let incumbent = observations.iter().map(|o| o.throughput).fold(f64::NEG_INFINITY, f64::max);
        let rec = next_config(&model, space, incumbent);
        let predicted_best = grid.iter().map(|&c| model.predict(c).0).fold(f64::NEG_INFINITY, f64::max);
        let stable = prev.is_some_and(|(c, p)| c == rec && predicted_best - p < 0.01 * p.abs());
        streak = if stable { streak + 1 } else { 0 };
        let pred = model.predict(rec);
        let t = measurer.measure(rec, opts.window)?;
        record(&mut observations, it, rec, t, Some(pred));
        prev = Some((rec, predicted_best));
        if model.constant || streak >= 2 {
            converged = true;
            break;
        }
    }
    let best = observations
        .iter()
        .fold(None::<&Observation>, |b, o| match b {
            Some(b) if b.throughput >= o.throughput => Some(b),
            _ => Some(o),
        })
        .expect("at least one observation");
    Ok(TuneResult {
        best: best.config,
        best_throughput: best.throughput,
        iterations,
        converged,
        capped: !converged,
        trace,
    })
}
