//! Completeness analysis.
//!
//! The Jacobian `G(t, x)` stacks the spatial gradients of the `d` asset
//! pricing functions. The market is complete exactly when the factor paths
//! spend zero time in the singular set of `G`; with real-analytic pricing
//! functions this collapses to non-degeneracy at a single point. When every
//! probe is singular, an explicit claim orthogonal to all traded gains is
//! assembled from kernel vectors of `Gamma = G sigma sigma^T`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor_models::FactorModel;
use crate::path_engine::PathSet;
use crate::pricing::Pricer;

/// Default relative singularity tolerance on `sigma_min / sigma_max`.
pub const SINGULARITY_TOLERANCE: f64 = 1e-8;

/// Occupation fraction above which the pathwise verdict is
/// LIKELY_INCOMPLETE.
const INCOMPLETE_OCCUPATION: f64 = 0.5;

/// Cap on stored witness anchors (the full count is still reported).
const MAX_STORED_ANCHORS: usize = 256;

/// `G(t, x)` with its determinant and singular-value diagnostics.
#[derive(Debug, Clone)]
pub struct JacobianEvaluation {
    pub t: f64,
    pub x: Vec<f64>,
    pub g: DMatrix<f64>,
    pub det: f64,
    /// Descending singular values.
    pub singular_values: Vec<f64>,
    /// `sigma_min / sigma_max`; scale-free singularity measure.
    pub singularity_ratio: f64,
    pub is_singular: bool,
    pub tolerance: f64,
    /// Any row produced by a noisy (flagged) gradient estimate.
    pub flagged_gradient: bool,
}

/// Assemble `G` at `(t, x)` from one gradient backend per asset.
pub fn build_g(
    pricers: &[Arc<dyn Pricer>],
    t: f64,
    x: &[f64],
    tolerance: f64,
) -> Result<JacobianEvaluation> {
    let d = x.len();
    if pricers.len() != d {
        return Err(Error::Config(format!(
            "need exactly d = {d} assets, got {}",
            pricers.len()
        )));
    }
    let mut g = DMatrix::zeros(d, d);
    let mut flagged = false;
    for (i, pricer) in pricers.iter().enumerate() {
        let grad = pricer
            .gradient(t, x)
            .map_err(|e| Error::Numerical(format!("gradient of asset {} failed: {e}", i + 1)))?;
        flagged |= grad.flagged;
        for j in 0..d {
            g[(i, j)] = grad.values[j];
        }
    }
    Ok(evaluate_jacobian(t, x.to_vec(), g, tolerance, flagged))
}

/// Diagnostics for an already-assembled Jacobian matrix.
pub fn evaluate_jacobian(
    t: f64,
    x: Vec<f64>,
    g: DMatrix<f64>,
    tolerance: f64,
    flagged_gradient: bool,
) -> JacobianEvaluation {
    let det = g.determinant();
    let svd = g.clone().svd(false, false);
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let s_max = singular_values[0];
    let s_min = *singular_values.last().unwrap();
    let singularity_ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };
    JacobianEvaluation {
        t,
        x,
        g,
        det,
        singular_values,
        singularity_ratio,
        is_singular: singularity_ratio < tolerance,
        tolerance,
        flagged_gradient,
    }
}

/// Numerical rank at a relative tolerance.
pub fn numerical_rank(m: &DMatrix<f64>, tolerance: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let s_max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    if s_max <= 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s >= tolerance * s_max)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "COMPLETE")]
    Complete,
    #[serde(rename = "LIKELY_INCOMPLETE")]
    LikelyIncomplete,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictMethod {
    #[serde(rename = "pathwise_occupation")]
    PathwiseOccupation,
    #[serde(rename = "single_point_analytic")]
    SinglePointAnalytic,
}

/// A probed point with its singularity ratio.
#[derive(Debug, Clone, Serialize)]
pub struct PointEvidence {
    pub t: f64,
    pub x: Vec<f64>,
    pub singularity_ratio: f64,
}

/// Per-path occupation fractions of the singular set.
#[derive(Debug, Clone, Serialize)]
pub struct OccupationStats {
    pub fractions: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Ten uniform buckets over [0, 1]: (lower edge, count).
    pub histogram: Vec<(f64, usize)>,
}

impl OccupationStats {
    fn from_fractions(fractions: Vec<f64>) -> Self {
        let n = fractions.len().max(1) as f64;
        let mean = fractions.iter().sum::<f64>() / n;
        let max = fractions.iter().copied().fold(0.0f64, f64::max);
        let mut histogram: Vec<(f64, usize)> =
            (0..10).map(|i| (i as f64 / 10.0, 0)).collect();
        for &f in &fractions {
            let b = ((f * 10.0).floor() as usize).min(9);
            histogram[b].1 += 1;
        }
        Self {
            fractions,
            mean,
            max,
            histogram,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum VerdictEvidence {
    Occupation {
        stats: OccupationStats,
        /// Best (largest-ratio) probed point, recorded as the
        /// non-degeneracy witness when the verdict is COMPLETE.
        witness: Option<PointEvidence>,
    },
    SinglePoint {
        point: Option<PointEvidence>,
        explanation: String,
    },
}

/// A completeness verdict with the evidence that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct CompletenessVerdict {
    pub verdict: Verdict,
    pub method: VerdictMethod,
    pub evidence: VerdictEvidence,
    pub tolerance: f64,
}

/// Pathwise criterion: occupation of the singular set along simulated paths.
///
/// The verdict is COMPLETE only when no probed path point is singular (and
/// the best point doubles as a single-point witness); it is
/// LIKELY_INCOMPLETE when the mean occupation fraction exceeds 1/2, since a
/// sampled determinant can never certify `det G = 0` identically, and
/// INCONCLUSIVE otherwise, with the occupation histogram attached.
pub fn completeness_along_paths(
    model: &FactorModel,
    pricers: &[Arc<dyn Pricer>],
    paths: &PathSet,
    tolerance: f64,
) -> Result<CompletenessVerdict> {
    if paths.dim() != model.dim() {
        return Err(Error::Config("PathSet/model dimension mismatch".into()));
    }
    if pricers.len() != model.dim() {
        return Err(Error::Config(format!(
            "need exactly d = {} assets, got {}",
            model.dim(),
            pricers.len()
        )));
    }
    let horizon = paths.horizon();
    let dt = paths.dt();
    let per_path: Vec<(f64, f64, usize)> = (0..paths.n_paths())
        .into_par_iter()
        .map(|n| -> Result<(f64, f64, usize)> {
            let mut singular_time = 0.0;
            let mut best_ratio = f64::NEG_INFINITY;
            let mut best_step = 0usize;
            for k in 0..paths.n_steps() {
                let t = paths.times[k];
                let x = paths.state(n, k);
                let eval = build_g(pricers, t, x, tolerance)?;
                if eval.is_singular {
                    singular_time += dt;
                }
                if eval.singularity_ratio > best_ratio {
                    best_ratio = eval.singularity_ratio;
                    best_step = k;
                }
            }
            Ok((singular_time / horizon, best_ratio, best_step))
        })
        .collect::<Result<Vec<_>>>()?;

    let fractions: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let stats = OccupationStats::from_fractions(fractions);

    // Best probed point across all paths serves as the witness candidate.
    let (witness_path, &(_, best_ratio, best_step)) = per_path
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .unwrap();
    let witness = PointEvidence {
        t: paths.times[best_step],
        x: paths.state(witness_path, best_step).to_vec(),
        singularity_ratio: best_ratio,
    };

    let verdict = if stats.max == 0.0 && best_ratio >= tolerance {
        Verdict::Complete
    } else if stats.mean > INCOMPLETE_OCCUPATION {
        Verdict::LikelyIncomplete
    } else {
        Verdict::Inconclusive
    };
    Ok(CompletenessVerdict {
        verdict,
        method: VerdictMethod::PathwiseOccupation,
        evidence: VerdictEvidence::Occupation {
            stats,
            witness: Some(witness),
        },
        tolerance,
    })
}

/// Single-point criterion for real-analytic pricing functions.
///
/// Returns COMPLETE with the first probe whose singularity ratio clears the
/// tolerance. The analyticity hypothesis cannot be verified numerically, so
/// when the caller does not assume it the COMPLETE verdict is downgraded to
/// INCONCLUSIVE. All probes singular yields LIKELY_INCOMPLETE.
pub fn single_point_test(
    pricers: &[Arc<dyn Pricer>],
    probe_points: &[(f64, Vec<f64>)],
    analyticity_assumed: bool,
    tolerance: f64,
) -> Result<CompletenessVerdict> {
    if probe_points.is_empty() {
        return Err(Error::Config("single-point test needs at least one probe".into()));
    }
    let mut best: Option<PointEvidence> = None;
    for (t, x) in probe_points {
        let eval = build_g(pricers, *t, x, tolerance)?;
        let point = PointEvidence {
            t: *t,
            x: x.clone(),
            singularity_ratio: eval.singularity_ratio,
        };
        if !eval.is_singular {
            return Ok(if analyticity_assumed {
                CompletenessVerdict {
                    verdict: Verdict::Complete,
                    method: VerdictMethod::SinglePointAnalytic,
                    evidence: VerdictEvidence::SinglePoint {
                        point: Some(point),
                        explanation: "non-singular point found".into(),
                    },
                    tolerance,
                }
            } else {
                CompletenessVerdict {
                    verdict: Verdict::Inconclusive,
                    method: VerdictMethod::SinglePointAnalytic,
                    evidence: VerdictEvidence::SinglePoint {
                        point: Some(point),
                        explanation: "non-singular point found, but the single-point \
                                      criterion requires real-analytic pricing functions \
                                      and analyticity was not assumed"
                            .into(),
                    },
                    tolerance,
                }
            });
        }
        if best
            .as_ref()
            .map(|b| point.singularity_ratio > b.singularity_ratio)
            .unwrap_or(true)
        {
            best = Some(point);
        }
    }
    Ok(CompletenessVerdict {
        verdict: Verdict::LikelyIncomplete,
        method: VerdictMethod::SinglePointAnalytic,
        evidence: VerdictEvidence::SinglePoint {
            point: best,
            explanation: "every probe was singular; sampling cannot certify that the \
                          determinant vanishes identically"
                .into(),
        },
        tolerance,
    })
}

/// One singular path point with its normalized kernel vector.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessAnchor {
    pub t: f64,
    pub x: Vec<f64>,
    pub beta: Vec<f64>,
    /// `|Gamma beta| / (|Gamma| |beta|)` at the anchor.
    pub kernel_residual: f64,
    /// `|beta^T sigma|^2`, rescaled to 1 by construction.
    pub normalization: f64,
}

/// Monte Carlo covariance of the witness claim with one asset's gains.
#[derive(Debug, Clone, Serialize)]
pub struct AssetOrthogonality {
    pub covariance: f64,
    pub stderr: f64,
}

/// The orthogonal claim `H = sum beta^T sigma dW` over the singular set.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessClaim {
    /// Sample of anchors (capped); `n_singular_points` is the full count.
    pub anchors: Vec<WitnessAnchor>,
    pub n_singular_points: usize,
    pub n_paths_used: usize,
    /// Mean over paths of the time spent in the singular set.
    pub mean_occupation_time: f64,
    /// Realized claim per path.
    pub h_values: Vec<f64>,
    pub e_h_squared: f64,
    pub e_h_squared_stderr: f64,
    /// Covariance of H with each asset's discounted-gain integral.
    pub orthogonality: Vec<AssetOrthogonality>,
}

/// Kernel direction of `Gamma` scaled so that `|beta^T sigma|^2 = 1`, with
/// a deterministic sign (first non-negligible component positive).
fn kernel_vector(gamma: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Option<(Vec<f64>, f64)> {
    let d = gamma.nrows();
    let svd = gamma.clone().svd(false, true);
    let v_t = svd.v_t.as_ref()?;
    // Right singular vector of the smallest singular value.
    let mut min_idx = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s < svd.singular_values[min_idx] {
            min_idx = i;
        }
    }
    let s_max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let mut beta = DVector::from_iterator(d, v_t.row(min_idx).iter().copied());
    // Normalize |beta^T sigma| = 1.
    let q = sigma.transpose() * &beta;
    let qnorm = q.norm();
    if qnorm <= 0.0 {
        return None;
    }
    beta /= qnorm;
    // Deterministic sign fix.
    let scale = beta.amax();
    if let Some(first) = beta.iter().find(|v| v.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            beta = -beta;
        }
    }
    let residual = {
        let gb = gamma * &beta;
        let denom = s_max * beta.norm();
        if denom > 0.0 {
            gb.norm() / denom
        } else {
            0.0
        }
    };
    Some((beta.iter().copied().collect(), residual))
}

/// Construct the incompleteness witness along simulated paths.
///
/// At every singular path point the kernel vector of
/// `Gamma = G sigma sigma^T` is extracted, normalized and accumulated into
/// the claim `H`; alongside, each asset's discounted-gain integral is
/// accumulated over all steps so the orthogonality `E[H gain_i] = 0` can be
/// estimated with an error bar.
pub fn incompleteness_witness(
    model: &FactorModel,
    pricers: &[Arc<dyn Pricer>],
    paths: &PathSet,
    n_paths: usize,
    tolerance: f64,
) -> Result<WitnessClaim> {
    if paths.dim() != model.dim() {
        return Err(Error::Config("PathSet/model dimension mismatch".into()));
    }
    let d = model.dim();
    let n_used = n_paths.min(paths.n_paths());
    let dt = paths.dt();
    let rate = model.rate();

    struct PathOut {
        h: f64,
        gains: Vec<f64>,
        occupation: f64,
        anchors: Vec<WitnessAnchor>,
        n_singular: usize,
    }

    let outputs: Vec<PathOut> = (0..n_used)
        .into_par_iter()
        .map(|n| -> Result<PathOut> {
            let mut h = 0.0;
            let mut gains = vec![0.0; d];
            let mut occupation = 0.0;
            let mut anchors = Vec::new();
            let mut n_singular = 0usize;
            for k in 0..paths.n_steps() {
                let t = paths.times[k];
                let x = paths.state(n, k);
                let dw = paths.increment(n, k);
                let eval = build_g(pricers, t, x, tolerance)?;
                let sigma = model.diffusion(t, x);
                // Martingale increment sigma dW.
                let mut dm = vec![0.0; d];
                for i in 0..d {
                    for j in 0..d {
                        dm[i] += sigma[(i, j)] * dw[j];
                    }
                }
                let disc = (-rate * t).exp();
                for i in 0..d {
                    let mut row_dm = 0.0;
                    for j in 0..d {
                        row_dm += eval.g[(i, j)] * dm[j];
                    }
                    gains[i] += disc * row_dm;
                }
                if eval.is_singular {
                    let a = &sigma * sigma.transpose();
                    let gamma = &eval.g * a;
                    if let Some((beta, residual)) = kernel_vector(&gamma, &sigma) {
                        // dH = beta^T sigma dW.
                        let mut q = vec![0.0; d];
                        for j in 0..d {
                            for i in 0..d {
                                q[j] += beta[i] * sigma[(i, j)];
                            }
                        }
                        let norm_check: f64 = q.iter().map(|v| v * v).sum();
                        h += q.iter().zip(dw).map(|(a, b)| a * b).sum::<f64>();
                        occupation += dt;
                        n_singular += 1;
                        if anchors.len() < MAX_STORED_ANCHORS {
                            anchors.push(WitnessAnchor {
                                t,
                                x: x.to_vec(),
                                beta,
                                kernel_residual: residual,
                                normalization: norm_check,
                            });
                        }
                    }
                }
            }
            Ok(PathOut {
                h,
                gains,
                occupation,
                anchors,
                n_singular,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_singular_points: usize = outputs.iter().map(|o| o.n_singular).sum();
    if n_singular_points == 0 {
        return Err(Error::Numerical(
            "market appears complete; no witness exists (no singular points found)".into(),
        ));
    }

    let mut anchors = Vec::new();
    for o in &outputs {
        for a in &o.anchors {
            if anchors.len() >= MAX_STORED_ANCHORS {
                break;
            }
            anchors.push(a.clone());
        }
    }

    let h_values: Vec<f64> = outputs.iter().map(|o| o.h).collect();
    let mean_occupation_time =
        outputs.iter().map(|o| o.occupation).sum::<f64>() / n_used as f64;

    let h2: Vec<f64> = h_values.iter().map(|h| h * h).collect();
    let (e_h2, e_h2_se) = mean_and_stderr(&h2);

    let mut orthogonality = Vec::with_capacity(d);
    let h_mean = h_values.iter().sum::<f64>() / n_used as f64;
    for i in 0..d {
        let g_mean = outputs.iter().map(|o| o.gains[i]).sum::<f64>() / n_used as f64;
        let prods: Vec<f64> = outputs
            .iter()
            .map(|o| (o.h - h_mean) * (o.gains[i] - g_mean))
            .collect();
        let (cov, se) = mean_and_stderr(&prods);
        orthogonality.push(AssetOrthogonality {
            covariance: cov,
            stderr: se,
        });
    }

    Ok(WitnessClaim {
        anchors,
        n_singular_points,
        n_paths_used: n_used,
        mean_occupation_time,
        h_values,
        e_h_squared: e_h2,
        e_h_squared_stderr: e_h2_se,
        orthogonality,
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_models::{correlated_bm, expou_sv, gbm};
    use crate::path_engine::simulate_paths;
    use crate::pricing::{AffineStockPricer, HeatClosedForm, Payoff, StockPricer};
    use nalgebra::DMatrix;

    fn heat_pricers() -> Vec<Arc<dyn Pricer>> {
        let id = DMatrix::identity(2, 2);
        (0..2)
            .map(|i| {
                Arc::new(
                    HeatClosedForm::new(Payoff::SquareCoordinate { index: i }, &id, 1.0).unwrap(),
                ) as Arc<dyn Pricer>
            })
            .collect()
    }

    fn two_calls_pricers(sigma: &DMatrix<f64>) -> Vec<Arc<dyn Pricer>> {
        [90.0, 110.0]
            .iter()
            .map(|&strike| {
                Arc::new(
                    HeatClosedForm::new(Payoff::FactorCall { index: 0, strike }, sigma, 1.0)
                        .unwrap(),
                ) as Arc<dyn Pricer>
            })
            .collect()
    }

    #[test]
    fn heat_jacobian_is_diagonal() {
        let pricers = heat_pricers();
        let eval = build_g(&pricers, 0.5, &[1.0, 2.0], SINGULARITY_TOLERANCE).unwrap();
        assert!((eval.g[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((eval.g[(1, 1)] - 4.0).abs() < 1e-12);
        assert!(eval.g[(0, 1)].abs() < 1e-12);
        assert!((eval.det - 8.0).abs() < 1e-10);
        assert!(!eval.is_singular);
        // |det| = prod of singular values within relative 1e-8.
        let prod: f64 = eval.singular_values.iter().product();
        assert!((eval.det.abs() - prod).abs() <= 1e-8 * prod);
    }

    #[test]
    fn two_calls_determinant_vanishes() {
        let id = DMatrix::identity(2, 2);
        let pricers = two_calls_pricers(&id);
        for (t, x) in [(0.1, [95.0, 3.0]), (0.5, [100.0, -1.0]), (0.9, [104.0, 0.3])] {
            let eval = build_g(&pricers, t, &x, SINGULARITY_TOLERANCE).unwrap();
            assert!(eval.det.abs() < 1e-12);
            assert!(eval.is_singular);
        }
    }

    #[test]
    fn heat_market_is_complete_along_paths() {
        let m = correlated_bm(DMatrix::identity(2, 2), vec![1.0, 2.0], 0.0, 1.0).unwrap();
        let paths = simulate_paths(&m, 100, 64, 9).unwrap();
        let verdict =
            completeness_along_paths(&m, &heat_pricers(), &paths, SINGULARITY_TOLERANCE).unwrap();
        assert_eq!(verdict.verdict, Verdict::Complete);
        assert_eq!(verdict.method, VerdictMethod::PathwiseOccupation);
        match &verdict.evidence {
            VerdictEvidence::Occupation { stats, witness } => {
                assert_eq!(stats.max, 0.0);
                assert!(witness.as_ref().unwrap().singularity_ratio >= SINGULARITY_TOLERANCE);
            }
            _ => panic!("wrong evidence kind"),
        }
    }

    #[test]
    fn two_calls_market_is_likely_incomplete() {
        let m = correlated_bm(DMatrix::identity(2, 2), vec![100.0, 100.0], 0.0, 1.0).unwrap();
        let paths = simulate_paths(&m, 50, 32, 21).unwrap();
        let id = DMatrix::identity(2, 2);
        let verdict =
            completeness_along_paths(&m, &two_calls_pricers(&id), &paths, SINGULARITY_TOLERANCE)
                .unwrap();
        assert_eq!(verdict.verdict, Verdict::LikelyIncomplete);
        match &verdict.evidence {
            VerdictEvidence::Occupation { stats, .. } => assert!(stats.mean > 0.99),
            _ => panic!("wrong evidence kind"),
        }
    }

    #[test]
    fn one_factor_stock_market_is_complete() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let paths = simulate_paths(&m, 64, 32, 3).unwrap();
        let pricers: Vec<Arc<dyn Pricer>> = vec![Arc::new(StockPricer::new(&m).unwrap())];
        let verdict =
            completeness_along_paths(&m, &pricers, &paths, SINGULARITY_TOLERANCE).unwrap();
        assert_eq!(verdict.verdict, Verdict::Complete);
    }

    #[test]
    fn stock_plus_affine_is_likely_incomplete_under_sv() {
        let m = expou_sv(100.0, 0.2f64.ln(), 1.0, 0.2f64.ln(), 0.5, -0.5, 0.0, 1.0).unwrap();
        let pricers: Vec<Arc<dyn Pricer>> = vec![
            Arc::new(StockPricer::new(&m).unwrap()),
            Arc::new(AffineStockPricer::new(&m, 5.0, 2.0, 1.0).unwrap()),
        ];
        let paths = simulate_paths(&m, 50, 32, 4).unwrap();
        let verdict =
            completeness_along_paths(&m, &pricers, &paths, SINGULARITY_TOLERANCE).unwrap();
        assert_eq!(verdict.verdict, Verdict::LikelyIncomplete);
    }

    #[test]
    fn single_point_contract() {
        let pricers = heat_pricers();
        let good = vec![(0.5, vec![1.0, 2.0])];
        let v = single_point_test(&pricers, &good, true, SINGULARITY_TOLERANCE).unwrap();
        assert_eq!(v.verdict, Verdict::Complete);
        assert_eq!(v.method, VerdictMethod::SinglePointAnalytic);

        // Same inputs without the analyticity assumption.
        let v = single_point_test(&pricers, &good, false, SINGULARITY_TOLERANCE).unwrap();
        assert_eq!(v.verdict, Verdict::Inconclusive);

        // Probing only the singular cross x_1 x_2 = 0.
        let bad = vec![(0.5, vec![0.0, 2.0]), (0.5, vec![1.0, 0.0])];
        let v = single_point_test(&pricers, &bad, true, SINGULARITY_TOLERANCE).unwrap();
        assert_eq!(v.verdict, Verdict::LikelyIncomplete);

        assert!(single_point_test(&pricers, &[], true, SINGULARITY_TOLERANCE).is_err());
    }

    #[test]
    fn rank_drop_when_payoffs_depend_on_one_of_three_factors() {
        // Payoffs on d - 2 or fewer factors force singularity everywhere.
        let id3 = DMatrix::identity(3, 3);
        let pricers: Vec<Arc<dyn Pricer>> = [80.0, 100.0, 120.0]
            .iter()
            .map(|&strike| {
                Arc::new(
                    HeatClosedForm::new(Payoff::FactorCall { index: 0, strike }, &id3, 1.0)
                        .unwrap(),
                ) as Arc<dyn Pricer>
            })
            .collect();
        for x in [[100.0, 1.0, -2.0], [90.0, 0.0, 5.0]] {
            let eval = build_g(&pricers, 0.3, &x, SINGULARITY_TOLERANCE).unwrap();
            assert!(eval.is_singular);
            assert!(numerical_rank(&eval.g, SINGULARITY_TOLERANCE) <= 1);
        }
    }

    #[test]
    fn witness_for_two_calls_counterexample() {
        let m = correlated_bm(DMatrix::identity(2, 2), vec![100.0, 100.0], 0.0, 1.0).unwrap();
        let paths = simulate_paths(&m, 2000, 32, 33).unwrap();
        let id = DMatrix::identity(2, 2);
        let claim = incompleteness_witness(
            &m,
            &two_calls_pricers(&id),
            &paths,
            2000,
            SINGULARITY_TOLERANCE,
        )
        .unwrap();

        // With sigma = Id the kernel of Gamma is the second coordinate axis
        // and the sign fix makes beta = (0, 1).
        for a in &claim.anchors {
            assert!(a.beta[0].abs() < 1e-10, "beta {:?}", a.beta);
            assert!((a.beta[1] - 1.0).abs() < 1e-10, "beta {:?}", a.beta);
            assert!(a.kernel_residual <= 1e-10);
            assert!((a.normalization - 1.0).abs() < 1e-10);
        }
        // Every point is singular, so the occupation time is the horizon and
        // E[H^2] matches it within the Monte Carlo band.
        assert!((claim.mean_occupation_time - 1.0).abs() < 1e-12);
        assert!(
            (claim.e_h_squared - claim.mean_occupation_time).abs()
                <= 3.0 * claim.e_h_squared_stderr,
            "E[H^2] = {} +- {}",
            claim.e_h_squared,
            claim.e_h_squared_stderr
        );
        // Orthogonality to every traded gain.
        for (i, o) in claim.orthogonality.iter().enumerate() {
            assert!(
                o.covariance.abs() <= 3.0 * o.stderr,
                "asset {i}: cov {} +- {}",
                o.covariance,
                o.stderr
            );
        }
    }

    #[test]
    fn witness_errors_when_market_complete() {
        let m = correlated_bm(DMatrix::identity(2, 2), vec![1.0, 2.0], 0.0, 1.0).unwrap();
        let paths = simulate_paths(&m, 20, 16, 5).unwrap();
        let err = incompleteness_witness(&m, &heat_pricers(), &paths, 20, SINGULARITY_TOLERANCE)
            .unwrap_err();
        assert!(err.to_string().contains("no witness exists"), "{err}");
    }
}
