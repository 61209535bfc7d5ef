//! Factor diffusion models.
//!
//! A market is spanned by a `d`-dimensional diffusion with drift `m(t, x)`
//! and diffusion matrix `sigma(t, x)`. The state space is an axis-aligned
//! box (bounds may be infinite). Built-in families:
//!
//! * `correlated_bm`: constant diffusion matrix, zero drift;
//! * `gbm`: geometric Brownian motion in log coordinates;
//! * `expou_sv`: stochastic volatility with `sigma = exp(y)` and an
//!   Ornstein-Uhlenbeck volatility factor, reduced to log-price coordinates.
//!
//! Full-rank diffusion (`sigma sigma^T` strictly positive definite) is an
//! assumption of the analysis; [`validate_ellipticity`] probes it
//! numerically on a grid or on simulated path points.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Axis-aligned box state space; bounds may be +-infinity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Config("domain bounds have mismatched lengths".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("domain box is empty or inverted".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Unbounded box in `d` dimensions.
    pub fn unbounded(d: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; d],
            upper: vec![f64::INFINITY; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| v >= l && v <= u)
    }

    pub fn strictly_contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| v > l && v < u)
    }

    /// Clamp `x` into the box in place; returns true if anything moved.
    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = v.clamp(*l, *u);
            if c != *v {
                *v = c;
                moved = true;
            }
        }
        moved
    }
}

/// The factor diffusion: coefficients, initial state, rate and horizon.
///
/// Values are immutable after construction and cheap to clone (coefficient
/// closures are shared). Coefficient functions must be pure; everything
/// downstream (bit-reproducible simulation, cached surfaces) relies on it.
#[derive(Clone)]
pub struct FactorModel {
    dim: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    rate: f64,
    x0: Vec<f64>,
    horizon: f64,
    domain: DomainBox,
    /// Coordinate holding log stock price, when the model has one.
    stock_coordinate: Option<usize>,
    family: String,
}

impl fmt::Debug for FactorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactorModel")
            .field("family", &self.family)
            .field("dim", &self.dim)
            .field("rate", &self.rate)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl FactorModel {
    pub fn new(
        dim: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
        rate: f64,
        x0: Vec<f64>,
        horizon: f64,
        domain: DomainBox,
        family: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("model dimension must be positive".into()));
        }
        if x0.len() != dim || domain.dim() != dim {
            return Err(Error::Config("x0/domain dimension mismatch".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Config(format!("rate must be nonnegative, got {rate}")));
        }
        if !domain.strictly_contains(&x0) {
            return Err(Error::Config("x0 must lie strictly inside the domain".into()));
        }
        let model = Self {
            dim,
            drift,
            diffusion,
            rate,
            x0,
            horizon,
            domain,
            stock_coordinate: None,
            family: family.into(),
        };
        // Coefficients must at least evaluate finite at the initial point.
        let (m, s) = model.eval_coefficients(0.0, &model.x0.clone())?;
        if m.iter().any(|v| !v.is_finite()) || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("coefficients are non-finite at (0, x0)".into()));
        }
        if s.nrows() != dim || s.ncols() != dim {
            return Err(Error::Config("diffusion must return a d x d matrix".into()));
        }
        Ok(model)
    }

    pub fn with_stock_coordinate(mut self, coord: usize) -> Self {
        self.stock_coordinate = Some(coord);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    /// Coordinate holding log stock price, if the model designates one.
    pub fn stock_coordinate(&self) -> Option<usize> {
        self.stock_coordinate
    }

    /// Drift and diffusion at `(t, x)`, with domain checking.
    pub fn eval_coefficients(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if x.len() != self.dim {
            return Err(Error::Config("state dimension mismatch".into()));
        }
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        if !self.domain.contains(x) {
            return Err(Error::Domain(format!("point {x:?} outside the model domain")));
        }
        Ok(((self.drift)(t, x), (self.diffusion)(t, x)))
    }

    /// Unchecked drift evaluation for hot loops.
    #[inline]
    pub fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.drift)(t, x)
    }

    /// Unchecked diffusion evaluation for hot loops.
    #[inline]
    pub fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.diffusion)(t, x)
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Result<Self> {
        if domain.dim() != self.dim {
            return Err(Error::Config("domain dimension mismatch".into()));
        }
        if !domain.strictly_contains(&self.x0) {
            return Err(Error::Config("x0 must lie strictly inside the domain".into()));
        }
        self.domain = domain;
        Ok(self)
    }
}

/// Two-factor stochastic volatility model in price coordinates.
///
/// Stock dynamics `dS = r S dt + sigma(t,S,Y) S dW1`, volatility factor
/// `dY = eta(t,S,Y) dt + gamma(t,S,Y) dWtilde` with correlation `rho`.
/// [`StochVolModel::log_factor_model`] performs the reduction to
/// `(log S, Y)` coordinates used by the rest of the crate.
pub struct StochVolModel {
    pub vol_of_stock: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub vol_drift: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub vol_vol: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub correlation: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub s0: f64,
    pub y0: f64,
    pub rate: f64,
    pub horizon: f64,
}

impl StochVolModel {
    /// Reduce to the log-coordinate factor model with
    /// `xi_1 = log S`, `xi_2 = Y` and diffusion rows
    /// `[sigma, 0]` and `[gamma rho, gamma sqrt(1 - rho^2)]`.
    pub fn log_factor_model(&self, family: impl Into<String>) -> Result<FactorModel> {
        if !(self.s0 > 0.0) {
            return Err(Error::Config(format!("s0 must be positive, got {}", self.s0)));
        }
        let rho0 = (self.correlation)(0.0, self.s0, self.y0);
        if !(rho0.abs() < 1.0) {
            return Err(Error::Config(format!("|rho| must be < 1, got {rho0}")));
        }
        let g0 = (self.vol_vol)(0.0, self.s0, self.y0);
        if !(g0 > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {g0}")));
        }

        let rate = self.rate;
        let vol = self.vol_of_stock.clone();
        let eta = self.vol_drift.clone();
        let drift: DriftFn = Arc::new(move |t, x| {
            let s = x[0].exp();
            let sig = vol(t, s, x[1]);
            vec![rate - 0.5 * sig * sig, eta(t, s, x[1])]
        });
        let vol = self.vol_of_stock.clone();
        let gam = self.vol_vol.clone();
        let cor = self.correlation.clone();
        let diffusion: DiffusionFn = Arc::new(move |t, x| {
            let s = x[0].exp();
            let sig = vol(t, s, x[1]);
            let g = gam(t, s, x[1]);
            let r = cor(t, s, x[1]);
            DMatrix::from_row_slice(2, 2, &[sig, 0.0, g * r, g * (1.0 - r * r).sqrt()])
        });
        let model = FactorModel::new(
            2,
            drift,
            diffusion,
            self.rate,
            vec![self.s0.ln(), self.y0],
            self.horizon,
            DomainBox::unbounded(2),
            family,
        )?;
        Ok(model.with_stock_coordinate(0))
    }
}

/// How to pick the `(t, x)` points at which a model check is evaluated.
#[derive(Debug, Clone)]
pub enum ProbePlan {
    /// Deterministic grid over a bounded sub-box crossed with uniform times.
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        per_axis: usize,
        times: usize,
    },
    /// Explicit list of points (e.g. sampled from simulated paths).
    Points(Vec<(f64, Vec<f64>)>),
}

impl ProbePlan {
    fn expand(&self, horizon: f64) -> Result<Vec<(f64, Vec<f64>)>> {
        match self {
            ProbePlan::Points(pts) => Ok(pts.clone()),
            ProbePlan::Grid {
                lower,
                upper,
                per_axis,
                times,
            } => {
                if lower.len() != upper.len() || *per_axis < 1 || *times < 1 {
                    return Err(Error::Config("invalid probe grid".into()));
                }
                if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Config("probe grid must be bounded".into()));
                }
                let d = lower.len();
                let n = per_axis.pow(d as u32);
                let mut points = Vec::with_capacity(n * times);
                for it in 0..*times {
                    // Probe times interior to (0, T).
                    let t = horizon * (it as f64 + 0.5) / *times as f64;
                    for flat in 0..n {
                        let mut x = vec![0.0; d];
                        let mut rem = flat;
                        for j in 0..d {
                            let i = rem % per_axis;
                            rem /= per_axis;
                            x[j] = if *per_axis == 1 {
                                0.5 * (lower[j] + upper[j])
                            } else {
                                lower[j]
                                    + (upper[j] - lower[j]) * i as f64 / (*per_axis as f64 - 1.0)
                            };
                        }
                        points.push((t, x));
                    }
                }
                Ok(points)
            }
        }
    }
}

/// Default floor on the eigenvalue ratio `lambda_min / lambda_max`.
pub const ELLIPTICITY_FLOOR: f64 = 1e-12;

/// Outcome of the numerical full-rank check of `sigma sigma^T`.
#[derive(Debug, Clone)]
pub struct ModelValidationReport {
    pub probed_points: Vec<(f64, Vec<f64>)>,
    /// Min over probes of `lambda_min / lambda_max` of `sigma sigma^T`.
    pub min_eigenvalue_ratio: f64,
    pub passed: bool,
    pub failures: Vec<(f64, Vec<f64>)>,
    pub floor: f64,
}

/// Probe `sigma sigma^T` for strict positive definiteness.
///
/// Failures are data in the report, not errors: a degenerate probe point is
/// exactly what the check exists to find.
pub fn validate_ellipticity(
    model: &FactorModel,
    probes: &ProbePlan,
    floor: f64,
) -> Result<ModelValidationReport> {
    let points = probes.expand(model.horizon())?;
    let mut min_ratio = f64::INFINITY;
    let mut failures = Vec::new();
    for (t, x) in &points {
        let ratio = match model.eval_coefficients(*t, x) {
            Ok((m, s)) if m.iter().all(|v| v.is_finite()) && s.iter().all(|v| v.is_finite()) => {
                let a = &s * s.transpose();
                eigenvalue_ratio(&a)
            }
            _ => f64::NAN,
        };
        if ratio.is_finite() {
            min_ratio = min_ratio.min(ratio);
        }
        if !(ratio > floor) {
            failures.push((*t, x.clone()));
        }
    }
    if !min_ratio.is_finite() {
        min_ratio = 0.0;
    }
    Ok(ModelValidationReport {
        probed_points: points,
        min_eigenvalue_ratio: min_ratio,
        passed: failures.is_empty(),
        failures,
        floor,
    })
}

/// `lambda_min / lambda_max` of a symmetric positive semidefinite matrix.
pub fn eigenvalue_ratio(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if hi <= 0.0 {
        return 0.0;
    }
    (lo / hi).max(0.0)
}

// ---------------------------------------------------------------------------
// Built-in families and JSON configuration
// ---------------------------------------------------------------------------

/// Model configuration document.
///
/// ```json
/// {"family": "expou_sv",
///  "params": {"s0": 100, "y0": -1.6094, "kappa": 1.0, "theta": -1.6094,
///             "gamma": 0.5, "rho": -0.5, "r": 0.0},
///  "horizon": 1.0}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub family: String,
    pub params: serde_json::Value,
    pub horizon: f64,
    /// Optional bounded state-space box (paths are clamped to it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainBox>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<FactorModel> {
        let model = make_builtin_model(&self.family, &self.params, self.horizon)?;
        match &self.domain {
            Some(b) => model.with_domain(b.clone()),
            None => Ok(model),
        }
    }
}

#[derive(Deserialize)]
struct CorrelatedBmParams {
    d: usize,
    sigma: Vec<Vec<f64>>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    r: f64,
}

#[derive(Deserialize)]
struct GbmParams {
    s0: f64,
    sigma: f64,
    #[serde(default)]
    r: f64,
}

#[derive(Deserialize)]
struct ExpOuSvParams {
    s0: f64,
    y0: f64,
    kappa: f64,
    theta: f64,
    gamma: f64,
    rho: f64,
    #[serde(default)]
    r: f64,
}

/// Construct one of the built-in model families from its parameter map.
pub fn make_builtin_model(
    name: &str,
    params: &serde_json::Value,
    horizon: f64,
) -> Result<FactorModel> {
    match name {
        "correlated_bm" => {
            let p: CorrelatedBmParams = parse_params(params)?;
            let flat: Vec<f64> = p.sigma.iter().flatten().copied().collect();
            if p.sigma.len() != p.d || flat.len() != p.d * p.d {
                return Err(Error::Config(format!("sigma must be {d} x {d}", d = p.d)));
            }
            let sigma = DMatrix::from_row_slice(p.d, p.d, &flat);
            let x0 = p.x0.unwrap_or_else(|| vec![0.0; p.d]);
            correlated_bm(sigma, x0, p.r, horizon)
        }
        "gbm" => {
            let p: GbmParams = parse_params(params)?;
            gbm(p.s0, p.sigma, p.r, horizon)
        }
        "expou_sv" => {
            let p: ExpOuSvParams = parse_params(params)?;
            expou_sv(p.s0, p.y0, p.kappa, p.theta, p.gamma, p.rho, p.r, horizon)
        }
        other => Err(Error::Config(format!("unknown model family '{other}'"))),
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(v: &serde_json::Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("bad model params: {e}")))
}

/// Correlated Brownian motion: zero drift, constant diffusion matrix.
pub fn correlated_bm(
    sigma: DMatrix<f64>,
    x0: Vec<f64>,
    rate: f64,
    horizon: f64,
) -> Result<FactorModel> {
    let d = sigma.nrows();
    if sigma.ncols() != d {
        return Err(Error::Config("sigma must be square".into()));
    }
    let a = &sigma * sigma.transpose();
    if eigenvalue_ratio(&a) <= ELLIPTICITY_FLOOR {
        return Err(Error::Config(
            "constant sigma is not positive definite (sigma sigma^T is rank deficient)".into(),
        ));
    }
    let diff = sigma.clone();
    FactorModel::new(
        d,
        Arc::new(move |_t, _x| vec![0.0; d]),
        Arc::new(move |_t, _x| diff.clone()),
        rate,
        x0,
        horizon,
        DomainBox::unbounded(d),
        "correlated_bm",
    )
}

/// Geometric Brownian motion in log coordinates: constant drift
/// `r - sigma^2 / 2` and constant scalar diffusion.
pub fn gbm(s0: f64, sigma: f64, rate: f64, horizon: f64) -> Result<FactorModel> {
    if !(s0 > 0.0) {
        return Err(Error::Config(format!("s0 must be positive, got {s0}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let mu = rate - 0.5 * sigma * sigma;
    let model = FactorModel::new(
        1,
        Arc::new(move |_t, _x| vec![mu]),
        Arc::new(move |_t, _x| DMatrix::from_element(1, 1, sigma)),
        rate,
        vec![s0.ln()],
        horizon,
        DomainBox::unbounded(1),
        "gbm",
    )?;
    Ok(model.with_stock_coordinate(0))
}

/// Exp-OU stochastic volatility: stock volatility `exp(y)` with
/// `dY = kappa (theta - Y) dt + gamma dWtilde`, reduced to log coordinates.
#[allow(clippy::too_many_arguments)]
pub fn expou_sv(
    s0: f64,
    y0: f64,
    kappa: f64,
    theta: f64,
    gamma: f64,
    rho: f64,
    rate: f64,
    horizon: f64,
) -> Result<FactorModel> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!("|rho| must be < 1, got {rho}")));
    }
    let sv = StochVolModel {
        vol_of_stock: Arc::new(move |_t, _s, y| y.exp()),
        vol_drift: Arc::new(move |_t, _s, y| kappa * (theta - y)),
        vol_vol: Arc::new(move |_t, _s, _y| gamma),
        correlation: Arc::new(move |_t, _s, _y| rho),
        s0,
        y0,
        rate,
        horizon,
    };
    sv.log_factor_model("expou_sv")
}
