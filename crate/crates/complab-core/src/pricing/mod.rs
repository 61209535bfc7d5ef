//! Asset payoffs and pricing backends.
//!
//! A pricing function `v_i(t, x)` is the discounted conditional expectation
//! of the payoff under the factor diffusion. Three interchangeable backends
//! compute it: Monte Carlo ([`mc`]), a backward Crank-Nicolson PDE solver
//! ([`pde`]) and closed forms for constant-diffusion factor payoffs
//! ([`closed_form`]). All backends also expose the spatial gradient, the
//! row material for the completeness Jacobian.
//!
//! Convention: for stock models, coordinate 1 (index 0) holds log price.

pub mod closed_form;
pub mod mc;
pub mod pde;

pub use closed_form::{closed_form_heat, HeatClosedForm};
pub use mc::{price_mc, McPricer, McSettings};
pub use pde::{solve_pde, DiscretizedGenerator, GridSpec, PricingSurface};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_models::FactorModel;

/// Coordinate that holds log stock price in stock models.
pub const STOCK_COORD: usize = 0;

/// Terminal payoff of a traded asset.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    /// `x_i^2` on the factor vector.
    SquareCoordinate { index: usize },
    /// `(x_i - K)^+` on the factor vector.
    FactorCall { index: usize, strike: f64 },
    /// `(K - x_i)^+` on the factor vector.
    FactorPut { index: usize, strike: f64 },
    /// The stock itself, `s = exp(x_1)`.
    Stock,
    /// `(s - K)^+`.
    StockCall { strike: f64 },
    /// `(K - s)^+`.
    StockPut { strike: f64 },
    /// `a + b s`.
    StockAffine { intercept: f64, slope: f64 },
    /// `log(s / s0) - offset`; the European leg of a variance swap carries
    /// `offset = r T`.
    LogContract { s0: f64, offset: f64 },
}

impl Payoff {
    /// Evaluate on a terminal factor vector.
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Payoff::SquareCoordinate { index } => x[index] * x[index],
            Payoff::FactorCall { index, strike } => (x[index] - strike).max(0.0),
            Payoff::FactorPut { index, strike } => (strike - x[index]).max(0.0),
            Payoff::Stock => x[STOCK_COORD].exp(),
            Payoff::StockCall { strike } => (x[STOCK_COORD].exp() - strike).max(0.0),
            Payoff::StockPut { strike } => (strike - x[STOCK_COORD].exp()).max(0.0),
            Payoff::StockAffine { intercept, slope } => intercept + slope * x[STOCK_COORD].exp(),
            Payoff::LogContract { s0, offset } => x[STOCK_COORD] - s0.ln() - offset,
        }
    }

    /// Whether the payoff is nonnegative by construction. Log contracts
    /// (and affine payoffs with negative coefficients) are not.
    pub fn is_nonnegative(&self) -> bool {
        match *self {
            Payoff::SquareCoordinate { .. }
            | Payoff::FactorCall { .. }
            | Payoff::FactorPut { .. }
            | Payoff::Stock
            | Payoff::StockCall { .. }
            | Payoff::StockPut { .. } => true,
            Payoff::StockAffine { intercept, slope } => intercept >= 0.0 && slope >= 0.0,
            Payoff::LogContract { .. } => false,
        }
    }

    /// Whether the payoff reads the stock price rather than raw factors.
    pub fn on_stock(&self) -> bool {
        matches!(
            self,
            Payoff::Stock
                | Payoff::StockCall { .. }
                | Payoff::StockPut { .. }
                | Payoff::StockAffine { .. }
                | Payoff::LogContract { .. }
        )
    }

    pub fn kind_tag(&self) -> &'static str {
        match self {
            Payoff::SquareCoordinate { .. }
            | Payoff::FactorCall { .. }
            | Payoff::FactorPut { .. } => "european_factor",
            Payoff::LogContract { .. } => "log_contract",
            _ => "european_stock",
        }
    }
}

/// A traded asset: payoff plus maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct Asset {
    pub payoff: Payoff,
    pub maturity: f64,
}

impl Asset {
    pub fn new(payoff: Payoff, maturity: f64) -> Result<Self> {
        if !(maturity > 0.0) || !maturity.is_finite() {
            return Err(Error::Config(format!("maturity must be positive, got {maturity}")));
        }
        Ok(Self { payoff, maturity })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.payoff.value(x)
    }
}

/// Asset configuration document, e.g.
/// `{"kind":"european_stock","payoff":"put","strike":100.0,"maturity":1.0}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AssetConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    /// 1-based factor index for `european_factor` payoffs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    /// Reference level for log contracts; defaults to the model spot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    pub maturity: f64,
}

impl AssetConfig {
    /// Resolve against a model (for the stock convention and rates).
    pub fn build(&self, model: &FactorModel) -> Result<Asset> {
        let strike = || {
            self.strike
                .ok_or_else(|| Error::Config(format!("asset kind {} needs a strike", self.kind)))
        };
        let needs_stock = |payoff: &Payoff| -> Result<()> {
            if payoff.on_stock() && model.stock_coordinate().is_none() {
                return Err(Error::Config(
                    "stock payoff requires a model with a designated stock coordinate".into(),
                ));
            }
            Ok(())
        };
        let payoff = match (self.kind.as_str(), self.payoff.as_deref()) {
            ("european_factor", Some("square")) => Payoff::SquareCoordinate {
                index: self.factor_index(model)?,
            },
            ("european_factor", Some("call")) => Payoff::FactorCall {
                index: self.factor_index(model)?,
                strike: strike()?,
            },
            ("european_factor", Some("put")) => Payoff::FactorPut {
                index: self.factor_index(model)?,
                strike: strike()?,
            },
            ("european_stock", Some("stock")) => Payoff::Stock,
            ("european_stock", Some("call")) => Payoff::StockCall { strike: strike()? },
            ("european_stock", Some("put")) => Payoff::StockPut { strike: strike()? },
            ("european_stock", Some("affine")) => Payoff::StockAffine {
                intercept: self.intercept.unwrap_or(0.0),
                slope: self.slope.unwrap_or(1.0),
            },
            ("log_contract", _) => {
                let s0 = match self.s0 {
                    Some(s) => s,
                    None => {
                        let coord = model.stock_coordinate().ok_or_else(|| {
                            Error::Config("log contract requires a stock model".into())
                        })?;
                        model.x0()[coord].exp()
                    }
                };
                Payoff::LogContract {
                    s0,
                    offset: model.rate() * self.maturity,
                }
            }
            (kind, payoff) => {
                return Err(Error::Config(format!(
                    "unsupported asset kind/payoff: {kind}/{payoff:?}"
                )))
            }
        };
        needs_stock(&payoff)?;
        if self.maturity < model.horizon() {
            return Err(Error::Config(format!(
                "asset maturity {} is below the analysis horizon {}",
                self.maturity,
                model.horizon()
            )));
        }
        Asset::new(payoff, self.maturity)
    }

    fn factor_index(&self, model: &FactorModel) -> Result<usize> {
        let one_based = self.index.unwrap_or(1);
        if one_based == 0 || one_based > model.dim() {
            return Err(Error::Config(format!(
                "factor index {one_based} out of range for d = {}",
                model.dim()
            )));
        }
        Ok(one_based - 1)
    }
}

/// Spatial gradient estimate with optional Monte Carlo error bars.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    /// Set when the estimate is too noisy to trust (MC backend only).
    pub flagged: bool,
}

impl Gradient {
    pub fn exact(values: Vec<f64>) -> Self {
        Self {
            values,
            stderr: None,
            flagged: false,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A pricing backend: the pricing function and its spatial gradient.
pub trait Pricer: Send + Sync {
    fn price(&self, t: f64, x: &[f64]) -> Result<f64>;
    fn gradient(&self, t: f64, x: &[f64]) -> Result<Gradient>;
}

/// Exact pricer for the stock itself: `v(t, x) = exp(x_1)`.
///
/// Discounted prices are martingales under the pricing measure, so the
/// stock's pricing function is the spot itself for any model.
#[derive(Debug, Clone)]
pub struct StockPricer {
    dim: usize,
}

impl StockPricer {
    pub fn new(model: &FactorModel) -> Result<Self> {
        if model.stock_coordinate().is_none() {
            return Err(Error::Config("model has no stock coordinate".into()));
        }
        Ok(Self { dim: model.dim() })
    }
}

impl Pricer for StockPricer {
    fn price(&self, _t: f64, x: &[f64]) -> Result<f64> {
        Ok(x[STOCK_COORD].exp())
    }

    fn gradient(&self, _t: f64, x: &[f64]) -> Result<Gradient> {
        let mut g = vec![0.0; self.dim];
        g[STOCK_COORD] = x[STOCK_COORD].exp();
        Ok(Gradient::exact(g))
    }
}

/// Exact pricer for affine stock payoffs `a + b s`:
/// `v(t, x) = a e^{-r (T - t)} + b exp(x_1)`.
#[derive(Debug, Clone)]
pub struct AffineStockPricer {
    intercept: f64,
    slope: f64,
    rate: f64,
    maturity: f64,
    dim: usize,
}

impl AffineStockPricer {
    pub fn new(model: &FactorModel, intercept: f64, slope: f64, maturity: f64) -> Result<Self> {
        if model.stock_coordinate().is_none() {
            return Err(Error::Config("model has no stock coordinate".into()));
        }
        Ok(Self {
            intercept,
            slope,
            rate: model.rate(),
            maturity,
            dim: model.dim(),
        })
    }
}

impl Pricer for AffineStockPricer {
    fn price(&self, t: f64, x: &[f64]) -> Result<f64> {
        let disc = (-self.rate * (self.maturity - t)).exp();
        Ok(self.intercept * disc + self.slope * x[STOCK_COORD].exp())
    }

    fn gradient(&self, _t: f64, x: &[f64]) -> Result<Gradient> {
        let mut g = vec![0.0; self.dim];
        g[STOCK_COORD] = self.slope * x[STOCK_COORD].exp();
        Ok(Gradient::exact(g))
    }
}

/// Fixed linear combination of pricers; prices a static portfolio claim.
pub struct LinearComboPricer {
    pub parts: Vec<(f64, Arc<dyn Pricer>)>,
}

impl Pricer for LinearComboPricer {
    fn price(&self, t: f64, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (w, p) in &self.parts {
            acc += w * p.price(t, x)?;
        }
        Ok(acc)
    }

    fn gradient(&self, t: f64, x: &[f64]) -> Result<Gradient> {
        let mut values: Option<Vec<f64>> = None;
        let mut flagged = false;
        for (w, p) in &self.parts {
            let g = p.gradient(t, x)?;
            flagged |= g.flagged;
            match &mut values {
                None => values = Some(g.values.iter().map(|v| w * v).collect()),
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g.values) {
                        *a += w * v;
                    }
                }
            }
        }
        Ok(Gradient {
            values: values.unwrap_or_default(),
            stderr: None,
            flagged,
        })
    }
}

/// Which backend to use when a pricer is built from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Pde,
    Mc,
    ClosedForm,
    /// Analytic where possible (stock, affine, constant-diffusion factor
    /// payoffs), PDE otherwise.
    Auto,
}

impl Default for BackendChoice {
    fn default() -> Self {
        BackendChoice::Auto
    }
}

/// Build a pricing backend for one asset.
pub fn make_pricer(
    model: &FactorModel,
    asset: &Asset,
    backend: BackendChoice,
    grid: Option<&GridSpec>,
    mc: &McSettings,
) -> Result<Arc<dyn Pricer>> {
    let analytic = |strict: bool| -> Result<Option<Arc<dyn Pricer>>> {
        match &asset.payoff {
            Payoff::Stock => Ok(Some(Arc::new(StockPricer::new(model)?))),
            Payoff::StockAffine { intercept, slope } => Ok(Some(Arc::new(
                AffineStockPricer::new(model, *intercept, *slope, asset.maturity)?,
            ))),
            Payoff::SquareCoordinate { .. }
            | Payoff::FactorCall { .. }
            | Payoff::FactorPut { .. } => match HeatClosedForm::for_model(model, asset) {
                Ok(p) => Ok(Some(Arc::new(p))),
                Err(e) if strict => Err(e),
                Err(_) => Ok(None),
            },
            _ if strict => Err(Error::Config(format!(
                "no closed form for payoff {:?}",
                asset.payoff
            ))),
            _ => Ok(None),
        }
    };
    match backend {
        BackendChoice::ClosedForm => Ok(analytic(true)?.expect("strict closed form")),
        BackendChoice::Mc => Ok(Arc::new(McPricer::new(model.clone(), asset.clone(), mc.clone()))),
        BackendChoice::Pde => {
            let grid = grid.ok_or_else(|| {
                Error::Config("pde backend requires a grid specification".into())
            })?;
            Ok(Arc::new(solve_pde(model, asset, grid)?))
        }
        BackendChoice::Auto => {
            if let Some(p) = analytic(false)? {
                return Ok(p);
            }
            let grid = grid.ok_or_else(|| {
                Error::Config("no closed form available and no grid specified".into())
            })?;
            Ok(Arc::new(solve_pde(model, asset, grid)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_models::gbm;

    #[test]
    fn payoff_values() {
        assert_eq!(Payoff::SquareCoordinate { index: 1 }.value(&[3.0, -2.0]), 4.0);
        assert_eq!(
            Payoff::FactorCall { index: 0, strike: 1.0 }.value(&[3.0, 0.0]),
            2.0
        );
        assert_eq!(
            Payoff::FactorPut { index: 0, strike: 1.0 }.value(&[3.0, 0.0]),
            0.0
        );
        let s = 100.0f64;
        let x = [s.ln()];
        assert!((Payoff::Stock.value(&x) - 100.0).abs() < 1e-12);
        assert!((Payoff::StockCall { strike: 90.0 }.value(&x) - 10.0).abs() < 1e-12);
        assert!((Payoff::StockPut { strike: 110.0 }.value(&x) - 10.0).abs() < 1e-12);
        let lc = Payoff::LogContract { s0: 100.0, offset: 0.0 };
        assert!(lc.value(&x).abs() < 1e-12);
        assert!(!lc.is_nonnegative());
    }

    #[test]
    fn asset_config_builds_put() {
        let model = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let json = r#"{"kind":"european_stock","payoff":"put","strike":100.0,"maturity":1.0}"#;
        let cfg: AssetConfig = serde_json::from_str(json).unwrap();
        let asset = cfg.build(&model).unwrap();
        assert_eq!(asset.payoff, Payoff::StockPut { strike: 100.0 });
    }

    #[test]
    fn asset_config_rejects_short_maturity() {
        let model = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let cfg = AssetConfig {
            kind: "european_stock".into(),
            payoff: Some("call".into()),
            strike: Some(100.0),
            index: None,
            intercept: None,
            slope: None,
            s0: None,
            maturity: 0.5,
        };
        assert!(cfg.build(&model).is_err());
    }

    #[test]
    fn stock_pricer_is_exact() {
        let model = gbm(100.0, 0.2, 0.05, 1.0).unwrap();
        let p = StockPricer::new(&model).unwrap();
        let x = [4.7f64];
        assert_eq!(p.price(0.3, &x).unwrap(), x[0].exp());
        assert_eq!(p.gradient(0.3, &x).unwrap().values, vec![x[0].exp()]);
    }

    #[test]
    fn affine_pricer_discounts_intercept() {
        let model = gbm(100.0, 0.2, 0.05, 1.0).unwrap();
        let p = AffineStockPricer::new(&model, 10.0, 2.0, 1.0).unwrap();
        let x = [100.0f64.ln()];
        let expect = 10.0 * (-0.05f64 * 0.5).exp() + 200.0;
        assert!((p.price(0.5, &x).unwrap() - expect).abs() < 1e-12);
    }
}
