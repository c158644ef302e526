use nalgebra::{DMatrix, DVector};

use crate::space::{Config, Observation, SearchSpace};
use crate::TunerError;

/// Kernel hyperparameters in standardized target units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// 8 length scales × 5 signal variances × 10 noise ratios = 400 cells.
pub fn hyper_grid() -> Vec<Hyper> {
    let mut out = Vec::with_capacity(400);
    for &length_scale in &logspace(0.1, 10.0, 8) {
        for &signal_var in &logspace(0.1, 10.0, 5) {
            for &ratio in &logspace(1e-4, 1.0, 10) {
                out.push(Hyper { length_scale, signal_var, noise_var: ratio * signal_var });
            }
        }
    }
    out
}

fn kernel(a: &[f64; 2], b: &[f64; 2], h: &Hyper) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    h.signal_var * (-d2 / (2.0 * h.length_scale * h.length_scale)).exp()
}

fn gram(x: &[[f64; 2]], h: &Hyper) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], h) + if i == j { h.noise_var } else { 0.0 })
}

struct Factor {
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    lml: f64,
}

fn factor(x: &[[f64; 2]], y: &DVector<f64>, h: &Hyper) -> Option<Factor> {
    let chol = gram(x, h).cholesky()?;
    let alpha = chol.solve(y);
    let l = chol.unpack();
    let log_det: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let n = y.len() as f64;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    Some(Factor { l, alpha, lml })
}

/// Log marginal likelihood of standardized targets `y` at inputs `x`.
pub fn log_marginal_likelihood(x: &[[f64; 2]], y: &[f64], h: &Hyper) -> Option<f64> {
    factor(x, &DVector::from_column_slice(y), h).map(|f| f.lml)
}

#[derive(Debug, Clone)]
pub struct GprModel {
    pub hyper: Hyper,
    pub space: SearchSpace,
    /// Scaled training inputs.
    pub x: Vec<[f64; 2]>,
    /// Standardized training targets.
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    pub lml: f64,
    /// Fitted on degenerate data: prior everywhere.
    pub constant: bool,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl GprModel {
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.y_scale + self.y_mean
    }

    /// Latent posterior mean and variance in standardized units.
    pub fn predict_standardized(&self, c: Config) -> (f64, f64) {
        if self.constant {
            return (0.0, self.hyper.signal_var);
        }
        let p = self.space.scale(c);
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, &p, &self.hyper)));
        let mean = k.dot(&self.alpha);
        let v = self.l.solve_lower_triangular(&k).expect("non-singular factor");
        let var = (self.hyper.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }

    /// Posterior mean and variance in throughput units.
    pub fn predict(&self, c: Config) -> (f64, f64) {
        let (m, v) = self.predict_standardized(c);
        (self.unstandardize(m), v * self.y_scale * self.y_scale)
    }
}

/// Fits hyperparameters by exhaustive log-marginal-likelihood search over
/// [`hyper_grid`]; ties keep the earlier cell.
pub fn fit(observations: &[Observation], space: &SearchSpace) -> Result<GprModel, TunerError> {
    let (x, y, y_mean, y_scale) = standardize(observations, space)?;
    let yv = DVector::from_column_slice(&y);
    let mut best: Option<(Hyper, Factor)> = None;
    for h in hyper_grid() {
        if let Some(f) = factor(&x, &yv, &h) {
            if best.as_ref().is_none_or(|(_, b)| f.lml > b.lml) {
                best = Some((h, f));
            }
        }
    }
    let (hyper, f) = best.ok_or_else(|| TunerError::DegenerateData("no positive-definite kernel on the grid".into()))?;
    Ok(GprModel { hyper, space: *space, x, y, y_mean, y_scale, lml: f.lml, constant: false, l: f.l, alpha: f.alpha })
}

type Standardized = (Vec<[f64; 2]>, Vec<f64>, f64, f64);

fn standardize(observations: &[Observation], space: &SearchSpace) -> Result<Standardized, TunerError> {
    if observations.len() < 2 {
        return Err(TunerError::DegenerateData(format!("{} observation(s)", observations.len())));
    }
    let raw: Vec<f64> = observations.iter().map(|o| o.throughput).collect();
    let n = raw.len() as f64;
    let y_mean = raw.iter().sum::<f64>() / n;
    let y_scale = (raw.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    if y_scale <= f64::EPSILON * y_mean.abs().max(1.0) {
        return Err(TunerError::DegenerateData("all targets are equal".into()));
    }
    let x: Vec<[f64; 2]> = observations.iter().map(|o| space.scale(o.config)).collect();
    let y: Vec<f64> = raw.iter().map(|v| (v - y_mean) / y_scale).collect();
    Ok((x, y, y_mean, y_scale))
}

/// Fits with fixed hyperparameters instead of the grid search.
pub fn fit_with_hyper(observations: &[Observation], space: &SearchSpace, hyper: Hyper) -> Result<GprModel, TunerError> {
    let (x, y, y_mean, y_scale) = standardize(observations, space)?;
    let f = factor(&x, &DVector::from_column_slice(&y), &hyper)
        .ok_or_else(|| TunerError::DegenerateData("kernel matrix is not positive definite".into()))?;
    Ok(GprModel { hyper, space: *space, x, y, y_mean, y_scale, lml: f.lml, constant: false, l: f.l, alpha: f.alpha })
}

/// [`fit`], falling back to a constant model with unit standardized prior
/// variance when the data are degenerate.
pub fn fit_or_constant(observations: &[Observation], space: &SearchSpace) -> GprModel {
    fit(observations, space).unwrap_or_else(|_| {
        let n = observations.len().max(1) as f64;
        let y_mean = observations.iter().map(|o| o.throughput).sum::<f64>() / n;
        GprModel {
            hyper: Hyper { length_scale: 1.0, signal_var: 1.0, noise_var: 1.0 },
            space: *space,
            x: Vec::new(),
            y: Vec::new(),
            y_mean,
            y_scale: y_mean.abs().max(1.0),
            lml: f64::NEG_INFINITY,
            constant: true,
            l: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn obs(w: u32, b: u32, t: f64) -> Observation {
        Observation { config: Config::new(w, b), throughput: t, window: Duration::from_secs(1) }
    }

    #[test]
    fn grid_has_400_positive_cells() {
        let g = hyper_grid();
        assert_eq!(g.len(), 400);
        assert!(g.iter().all(|h| h.length_scale > 0.0 && h.signal_var > 0.0 && h.noise_var > 0.0));
        assert!((g[0].length_scale - 0.1).abs() < 1e-12 && (g[399].length_scale - 10.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_or_flat_observations_are_degenerate() {
        let s = SearchSpace::new(4, 4).unwrap();
        assert!(matches!(fit(&[obs(1, 1, 5.0)], &s), Err(TunerError::DegenerateData(_))));
        assert!(matches!(fit(&[obs(1, 1, 5.0), obs(2, 2, 5.0)], &s), Err(TunerError::DegenerateData(_))));
        let m = fit_or_constant(&[obs(1, 1, 5.0), obs(2, 2, 5.0)], &s);
        assert!(m.constant);
        assert_eq!(m.predict(Config::new(3, 3)).0, 5.0);
    }

    #[test]
    fn repeated_config_mean_is_sample_mean() {
        let s = SearchSpace::new(4, 4).unwrap();
        let data: Vec<_> = [98.0, 101.0, 100.0, 103.0, 99.0].iter().map(|&t| obs(2, 2, t)).collect();
        let m = fit(&data, &s).unwrap();
        let (mean, _) = m.predict(Config::new(2, 2));
        assert!((mean - 100.2).abs() < 0.5, "{mean}");
    }
}
