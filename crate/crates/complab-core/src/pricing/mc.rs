//! Monte Carlo pricing: sub-path simulation from an arbitrary `(t, x)`,
//! with bump-and-reprice gradients under common random numbers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor_models::FactorModel;
use crate::pricing::{Asset, Gradient, Pricer};
use crate::rng::standard_normal;

/// Relative gradient-noise level above which an estimate is flagged.
const GRADIENT_NOISE_LIMIT: f64 = 0.10;

/// Monte Carlo backend settings.
#[derive(Debug, Clone)]
pub struct McSettings {
    pub n_samples: usize,
    /// Euler steps over the remaining horizon `[t, T_i]`.
    pub n_steps: usize,
    pub seed: u64,
    /// Relative finite-difference bump for gradients.
    pub bump_rel: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            n_steps: 64,
            seed: 777,
            bump_rel: 1e-4,
        }
    }
}

/// Simulate undiscounted terminal payoffs of `asset` starting from `(t, x)`.
///
/// Sample `i` uses the counter stream `(seed, i, step, dim)`, so repricing
/// with a bumped start point reuses exactly the same Gaussian draws.
fn sample_payoffs(
    model: &FactorModel,
    asset: &Asset,
    t: f64,
    x: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let dt = (asset.maturity - t) / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let payoffs: Vec<(f64, Vec<f64>)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut state = x.to_vec();
            for k in 0..n_steps {
                let tk = t + k as f64 * dt;
                let drift = model.drift(tk, &state);
                let diff = model.diffusion(tk, &state);
                let mut next = state.clone();
                for row in 0..d {
                    let mut v = state[row] + drift[row] * dt;
                    for col in 0..d {
                        v += diff[(row, col)] * standard_normal(seed, i as u64, k as u64, col) * sqrt_dt;
                    }
                    next[row] = v;
                }
                model.domain().clamp(&mut next);
                state = next;
            }
            (asset.value(&state), state)
        })
        .collect();
    for (i, (p, terminal)) in payoffs.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::Numerical(format!(
                "payoff evaluated non-finite on sample {i} at terminal point {terminal:?}"
            )));
        }
    }
    Ok(payoffs.into_iter().map(|(p, _)| p).collect())
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo price and standard error at `(t, x)`.
///
/// At `t = T_i` the estimate degenerates to the payoff itself with zero
/// standard error.
pub fn price_mc(
    model: &FactorModel,
    asset: &Asset,
    t: f64,
    x: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples < 100 {
        return Err(Error::Config("n_samples must be at least 100".into()));
    }
    if t > asset.maturity + 1e-12 {
        return Err(Error::Domain(format!(
            "t = {t} beyond asset maturity {}",
            asset.maturity
        )));
    }
    if asset.maturity - t < 1e-14 {
        let p = asset.value(x);
        if !p.is_finite() {
            return Err(Error::Numerical(format!(
                "payoff evaluated non-finite at terminal point {x:?}"
            )));
        }
        return Ok((p, 0.0));
    }
    let payoffs = sample_payoffs(model, asset, t, x, n_samples, n_steps, seed)?;
    let disc = (-model.rate() * (asset.maturity - t)).exp();
    let (mean, se) = mean_stderr(&payoffs);
    Ok((disc * mean, disc * se))
}

/// Monte Carlo pricing backend.
#[derive(Debug, Clone)]
pub struct McPricer {
    model: FactorModel,
    asset: Asset,
    settings: McSettings,
}

impl McPricer {
    pub fn new(model: FactorModel, asset: Asset, settings: McSettings) -> Self {
        Self {
            model,
            asset,
            settings,
        }
    }

    pub fn asset(&self) -> &Asset {
        &self.asset
    }

    /// Central-difference gradient with common random numbers and a
    /// caller-supplied bump. Returns per-component standard errors.
    pub fn gradient_with_bump(&self, t: f64, x: &[f64], bump_rel: f64) -> Result<Gradient> {
        let d = self.model.dim();
        let s = &self.settings;
        let mut values = vec![0.0; d];
        let mut stderr = vec![0.0; d];
        for j in 0..d {
            let h = bump_rel.max(bump_rel * x[j].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            if !self.model.domain().strictly_contains(&xp)
                || !self.model.domain().strictly_contains(&xm)
            {
                return Err(Error::Domain(format!(
                    "bump point along axis {j} leaves the model domain"
                )));
            }
            let up = sample_payoffs(&self.model, &self.asset, t, &xp, s.n_samples, s.n_steps, s.seed)?;
            let dn = sample_payoffs(&self.model, &self.asset, t, &xm, s.n_samples, s.n_steps, s.seed)?;
            let disc = (-self.model.rate() * (self.asset.maturity - t)).exp();
            let diffs: Vec<f64> = up
                .iter()
                .zip(&dn)
                .map(|(a, b)| disc * (a - b) / (2.0 * h))
                .collect();
            let (m, se) = mean_stderr(&diffs);
            values[j] = m;
            stderr[j] = se;
        }
        let gnorm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let enorm = stderr.iter().map(|v| v * v).sum::<f64>().sqrt();
        let flagged = gnorm > 0.0 && enorm > GRADIENT_NOISE_LIMIT * gnorm;
        Ok(Gradient {
            values,
            stderr: Some(stderr),
            flagged,
        })
    }
}

impl Pricer for McPricer {
    fn price(&self, t: f64, x: &[f64]) -> Result<f64> {
        let (p, _) = price_mc(
            &self.model,
            &self.asset,
            t,
            x,
            self.settings.n_samples,
            self.settings.n_steps,
            self.settings.seed,
        )?;
        Ok(p)
    }

    fn gradient(&self, t: f64, x: &[f64]) -> Result<Gradient> {
        self.gradient_with_bump(t, x, self.settings.bump_rel)
    }
}

impl McPricer {
    /// Price plus standard error (the trait surface drops the error bar).
    pub fn price_with_stderr(&self, t: f64, x: &[f64]) -> Result<(f64, f64)> {
        price_mc(
            &self.model,
            &self.asset,
            t,
            x,
            self.settings.n_samples,
            self.settings.n_steps,
            self.settings.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_models::{correlated_bm, gbm};
    use crate::pricing::Payoff;
    use nalgebra::DMatrix;

    #[test]
    fn square_payoff_matches_heat_kernel() {
        // E (x_1 + W_{T-t})^2 = x_1^2 + (T - t).
        let m = correlated_bm(DMatrix::identity(2, 2), vec![1.0, 2.0], 0.0, 1.0).unwrap();
        let asset = Asset::new(Payoff::SquareCoordinate { index: 0 }, 1.0).unwrap();
        let (p, se) = price_mc(&m, &asset, 0.5, &[1.0, 2.0], 40_000, 1, 13).unwrap();
        assert!((p - 1.5).abs() < 3.0 * se, "p = {p}, se = {se}");
    }

    #[test]
    fn gbm_call_matches_frozen_lognormal_value() {
        // ATM call, sigma = 0.2, T = 1, r = 0; lognormal value 7.9656.
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let asset = Asset::new(Payoff::StockCall { strike: 100.0 }, 1.0).unwrap();
        let x0 = m.x0().to_vec();
        let (p, se) = price_mc(&m, &asset, 0.0, &x0, 100_000, 1, 2).unwrap();
        assert!((p - 7.9656).abs() < 3.0 * se, "p = {p}, se = {se}");
    }

    #[test]
    fn degenerate_horizon_is_exact() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let asset = Asset::new(Payoff::StockCall { strike: 90.0 }, 1.0).unwrap();
        let (p, se) = price_mc(&m, &asset, 1.0, &[100.0f64.ln()], 1000, 8, 5).unwrap();
        assert!((p - 10.0).abs() < 1e-9);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn same_seed_is_deterministic() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let asset = Asset::new(Payoff::StockPut { strike: 100.0 }, 1.0).unwrap();
        let x0 = m.x0().to_vec();
        let a = price_mc(&m, &asset, 0.0, &x0, 5000, 16, 11).unwrap();
        let b = price_mc(&m, &asset, 0.0, &x0, 5000, 16, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crn_gradient_of_square_payoff() {
        // With common random numbers the bump difference of (x + W)^2 is
        // exactly 4 h (x + W), so the gradient estimate is 2 x + noise.
        let m = correlated_bm(DMatrix::identity(2, 2), vec![1.0, 2.0], 0.0, 1.0).unwrap();
        let asset = Asset::new(Payoff::SquareCoordinate { index: 0 }, 1.0).unwrap();
        let pricer = McPricer::new(
            m,
            asset,
            McSettings {
                n_samples: 20_000,
                n_steps: 1,
                seed: 4,
                bump_rel: 1e-4,
            },
        );
        let g = pricer.gradient(0.5, &[1.0, 2.0]).unwrap();
        let se = g.stderr.as_ref().unwrap();
        assert!((g.values[0] - 2.0).abs() < 3.0 * se[0].max(1e-6));
        assert!(g.values[1].abs() < 3.0 * se[1].max(1e-6));
        assert!(!g.flagged);
    }
}
