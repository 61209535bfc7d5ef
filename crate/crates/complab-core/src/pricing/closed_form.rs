//! Closed-form prices under constant-diffusion factor dynamics (r = 0).
//!
//! With zero drift and a constant matrix `sigma`, the factor process is a
//! correlated Brownian motion and the heat semigroup gives explicit prices:
//! squares become `x_i^2 + (sigma sigma^T)_{ii} (T - t)` and factor
//! calls/puts follow the Bachelier formula with variance
//! `(sigma sigma^T)_{11} (T - t)`.

use nalgebra::DMatrix;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::factor_models::FactorModel;
use crate::pricing::{Asset, Gradient, Payoff, Pricer};

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Bachelier call on a Gaussian underlier with mean distance `m = x - K`
/// and standard deviation `s`.
pub fn bachelier_call(m: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return m.max(0.0);
    }
    let d = m / s;
    m * norm_cdf(d) + s * norm_pdf(d)
}

/// Bachelier put via parity: `put = call - m`.
pub fn bachelier_put(m: f64, s: f64) -> f64 {
    bachelier_call(m, s) - m
}

/// Closed-form pricer for one factor payoff under constant `sigma`, r = 0.
#[derive(Debug, Clone)]
pub struct HeatClosedForm {
    payoff: Payoff,
    maturity: f64,
    dim: usize,
    /// `sigma sigma^T` of the constant diffusion.
    a: DMatrix<f64>,
}

impl HeatClosedForm {
    pub fn new(payoff: Payoff, sigma: &DMatrix<f64>, maturity: f64) -> Result<Self> {
        match payoff {
            Payoff::SquareCoordinate { index }
            | Payoff::FactorCall { index, .. }
            | Payoff::FactorPut { index, .. } => {
                if index >= sigma.nrows() {
                    return Err(Error::Config("payoff factor index out of range".into()));
                }
            }
            ref other => {
                return Err(Error::Config(format!(
                    "no constant-diffusion closed form for {other:?}"
                )))
            }
        }
        Ok(Self {
            payoff,
            maturity,
            dim: sigma.nrows(),
            a: sigma * sigma.transpose(),
        })
    }

    /// Build from a model, verifying constant diffusion and r = 0.
    pub fn for_model(model: &FactorModel, asset: &Asset) -> Result<Self> {
        if model.rate() != 0.0 {
            return Err(Error::Config("closed-form heat pricer requires r = 0".into()));
        }
        let x0 = model.x0().to_vec();
        let s0 = model.diffusion(0.0, &x0);
        // Spot-check constancy at a second point and time.
        let mut x1 = x0.clone();
        for v in &mut x1 {
            *v += 0.37;
        }
        let s1 = model.diffusion(0.5 * model.horizon(), &x1);
        if s0 != s1 {
            return Err(Error::Config(
                "closed-form heat pricer requires a constant diffusion matrix".into(),
            ));
        }
        Self::new(asset.payoff.clone(), &s0, asset.maturity)
    }

    fn check(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Config("state dimension mismatch".into()));
        }
        if t > self.maturity + 1e-12 {
            return Err(Error::Domain(format!(
                "t = {t} beyond asset maturity {}",
                self.maturity
            )));
        }
        Ok((self.maturity - t).max(0.0))
    }
}

impl Pricer for HeatClosedForm {
    fn price(&self, t: f64, x: &[f64]) -> Result<f64> {
        let tau = self.check(t, x)?;
        Ok(match self.payoff {
            Payoff::SquareCoordinate { index } => {
                x[index] * x[index] + self.a[(index, index)] * tau
            }
            Payoff::FactorCall { index, strike } => {
                bachelier_call(x[index] - strike, (self.a[(index, index)] * tau).sqrt())
            }
            Payoff::FactorPut { index, strike } => {
                bachelier_put(x[index] - strike, (self.a[(index, index)] * tau).sqrt())
            }
            _ => unreachable!("validated in constructor"),
        })
    }

    fn gradient(&self, t: f64, x: &[f64]) -> Result<Gradient> {
        let tau = self.check(t, x)?;
        let mut g = vec![0.0; self.dim];
        match self.payoff {
            Payoff::SquareCoordinate { index } => g[index] = 2.0 * x[index],
            Payoff::FactorCall { index, strike } => {
                let s = (self.a[(index, index)] * tau).sqrt();
                g[index] = if s > 0.0 {
                    norm_cdf((x[index] - strike) / s)
                } else if x[index] > strike {
                    1.0
                } else {
                    0.0
                };
            }
            Payoff::FactorPut { index, strike } => {
                let s = (self.a[(index, index)] * tau).sqrt();
                g[index] = if s > 0.0 {
                    norm_cdf((x[index] - strike) / s) - 1.0
                } else if x[index] < strike {
                    -1.0
                } else {
                    0.0
                };
            }
            _ => unreachable!(),
        }
        Ok(Gradient::exact(g))
    }
}

/// Price a supported factor payoff analytically (free-function form).
pub fn closed_form_heat(
    payoff: &Payoff,
    sigma: &DMatrix<f64>,
    t: f64,
    x: &[f64],
    maturity: f64,
) -> Result<f64> {
    HeatClosedForm::new(payoff.clone(), sigma, maturity)?.price(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_coordinate_values() {
        let id = DMatrix::identity(2, 2);
        let p = Payoff::SquareCoordinate { index: 0 };
        let v = closed_form_heat(&p, &id, 0.5, &[1.0, 2.0], 1.0).unwrap();
        assert!((v - 1.5).abs() < 1e-15);

        let p2 = Payoff::SquareCoordinate { index: 1 };
        let v2 = closed_form_heat(&p2, &id, 0.25, &[3.0, -1.0], 1.0).unwrap();
        assert!((v2 - 1.75).abs() < 1e-15);
    }

    #[test]
    fn atm_call_at_zero_strike_is_half_normal_mean() {
        let id = DMatrix::identity(2, 2);
        let p = Payoff::FactorCall { index: 0, strike: 0.0 };
        let v = closed_form_heat(&p, &id, 0.0, &[0.0, 0.0], 1.0).unwrap();
        let expect = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }

    #[test]
    fn degenerate_horizon_returns_payoff() {
        let id = DMatrix::identity(1, 1);
        let call = Payoff::FactorCall { index: 0, strike: 1.0 };
        let v = closed_form_heat(&call, &id, 1.0, &[3.0], 1.0).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn square_gradient_is_linear() {
        let id = DMatrix::identity(2, 2);
        let p = HeatClosedForm::new(Payoff::SquareCoordinate { index: 1 }, &id, 1.0).unwrap();
        let g = p.gradient(0.5, &[1.0, 2.0]).unwrap();
        assert_eq!(g.values, vec![0.0, 4.0]);
    }

    #[test]
    fn call_put_parity() {
        let id = DMatrix::identity(1, 1);
        for (x, k, t) in [(0.3, 0.0, 0.2), (-1.0, 0.5, 0.7), (2.0, 1.9, 0.0)] {
            let c = closed_form_heat(&Payoff::FactorCall { index: 0, strike: k }, &id, t, &[x], 1.0)
                .unwrap();
            let p = closed_form_heat(&Payoff::FactorPut { index: 0, strike: k }, &id, t, &[x], 1.0)
                .unwrap();
            assert!((c - p - (x - k)).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_payoff_is_rejected() {
        let id = DMatrix::identity(1, 1);
        assert!(HeatClosedForm::new(Payoff::StockCall { strike: 1.0 }, &id, 1.0).is_err());
    }
}
