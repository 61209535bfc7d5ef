//! Path simulation: Euler-Maruyama trajectories of the factor process with
//! recorded Brownian increments.
//!
//! Increments are drawn from the counter-based generator keyed by
//! `(seed, path, step)`, so the same configuration produces bit-identical
//! paths for any number of worker threads. The increments are retained in
//! the [`PathSet`] because hedging backtests and witness construction
//! integrate against the same Brownian driver that moved the paths.

use rayon::prelude::*;
use std::io::Write;

use crate::error::{Error, Result};
use crate::factor_models::FactorModel;
use crate::rng::{standard_normal, CounterRng};

/// Fraction of clamped paths above which the whole set carries a warning.
pub const BOUNDARY_WARNING_FRACTION: f64 = 0.001;

/// Discretized trajectories with their driving Brownian increments.
#[derive(Debug, Clone)]
pub struct PathSet {
    /// Uniform grid `t_0 = 0 < ... < t_K = T`.
    pub times: Vec<f64>,
    dim: usize,
    n_paths: usize,
    n_steps: usize,
    /// Flat `[path][step][coord]` array of states, `(K + 1)` steps per path.
    states: Vec<f64>,
    /// Flat `[path][step][coord]` array of Brownian increments, `K` per path.
    increments: Vec<f64>,
    pub seed: u64,
    /// Paths that were clamped to the domain boundary at least once.
    pub clamped: Vec<bool>,
    /// Set when more than [`BOUNDARY_WARNING_FRACTION`] of paths clamped.
    pub boundary_warning: bool,
}

impl PathSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// State of path `n` after `k` steps (`k` in `0..=n_steps`).
    #[inline]
    pub fn state(&self, n: usize, k: usize) -> &[f64] {
        let base = (n * (self.n_steps + 1) + k) * self.dim;
        &self.states[base..base + self.dim]
    }

    /// Brownian increment of path `n` over step `k` (`k` in `0..n_steps`).
    #[inline]
    pub fn increment(&self, n: usize, k: usize) -> &[f64] {
        let base = (n * self.n_steps + k) * self.dim;
        &self.increments[base..base + self.dim]
    }

    pub fn states_raw(&self) -> &[f64] {
        &self.states
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    /// Sample `count` probe points `(t_k, xi_k)` from the stored paths.
    pub fn sample_probes(&self, count: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
        let mut rng = CounterRng::new(seed, 0x9e0b);
        (0..count)
            .map(|_| {
                let n = rng.index(self.n_paths);
                let k = rng.index(self.n_steps);
                (self.times[k], self.state(n, k).to_vec())
            })
            .collect()
    }

    /// Dump paths as CSV: `path,step,t,xi_1..xi_d[,dW_1..dW_d]`.
    pub fn write_csv<W: Write>(&self, mut w: W, with_increments: bool) -> Result<()> {
        let mut header = String::from("path,step,t");
        for j in 1..=self.dim {
            header.push_str(&format!(",xi_{j}"));
        }
        if with_increments {
            for j in 1..=self.dim {
                header.push_str(&format!(",dW_{j}"));
            }
        }
        writeln!(w, "{header}")?;
        for n in 0..self.n_paths {
            for k in 0..=self.n_steps {
                let mut line = format!("{n},{k},{}", self.times[k]);
                for v in self.state(n, k) {
                    line.push_str(&format!(",{v}"));
                }
                if with_increments {
                    if k < self.n_steps {
                        for v in self.increment(n, k) {
                            line.push_str(&format!(",{v}"));
                        }
                    } else {
                        for _ in 0..self.dim {
                            line.push_str(",");
                        }
                    }
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Simulate `n_paths` Euler-Maruyama trajectories on a uniform grid.
///
/// A step that leaves the domain box is clamped to the boundary and the
/// path is flagged; the set carries a warning when more than 0.1% of paths
/// were clamped. Output is bit-identical for a fixed
/// `(model, n_paths, n_steps, seed)` regardless of thread count.
pub fn simulate_paths(
    model: &FactorModel,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathSet> {
    if n_paths < 1 || n_steps < 1 {
        return Err(Error::Config("n_paths and n_steps must be >= 1".into()));
    }
    let d = model.dim();
    let horizon = model.horizon();
    let dt = horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();

    let mut states = vec![0.0; n_paths * (n_steps + 1) * d];
    let mut increments = vec![0.0; n_paths * n_steps * d];
    let mut clamped = vec![false; n_paths];

    let state_stride = (n_steps + 1) * d;
    let incr_stride = n_steps * d;

    states
        .par_chunks_mut(state_stride)
        .zip(increments.par_chunks_mut(incr_stride))
        .zip(clamped.par_iter_mut())
        .enumerate()
        .for_each(|(n, ((path_states, path_incr), flag))| {
            path_states[..d].copy_from_slice(model.x0());
            let mut x = model.x0().to_vec();
            for k in 0..n_steps {
                let t = times[k];
                let drift = model.drift(t, &x);
                let diff = model.diffusion(t, &x);
                let dw = &mut path_incr[k * d..(k + 1) * d];
                for (j, w) in dw.iter_mut().enumerate() {
                    *w = standard_normal(seed, n as u64, k as u64, j) * sqrt_dt;
                }
                for i in 0..d {
                    let mut v = x[i] + drift[i] * dt;
                    for j in 0..d {
                        v += diff[(i, j)] * dw[j];
                    }
                    x[i] = v;
                }
                if model.domain().clamp(&mut x) {
                    *flag = true;
                }
                path_states[(k + 1) * d..(k + 2) * d].copy_from_slice(&x);
            }
        });

    let n_clamped = clamped.iter().filter(|&&c| c).count();
    let boundary_warning = n_clamped as f64 > BOUNDARY_WARNING_FRACTION * n_paths as f64;

    Ok(PathSet {
        times,
        dim: d,
        n_paths,
        n_steps,
        states,
        increments,
        seed,
        clamped,
        boundary_warning,
    })
}

/// Per-path running sum of squared log-price increments.
#[derive(Debug, Clone)]
pub struct QuadraticVariationTrack {
    pub times: Vec<f64>,
    n_paths: usize,
    n_steps: usize,
    /// Flat `[path][step]` array, `(K + 1)` entries per path, zero at t = 0.
    values: Vec<f64>,
}

impl QuadraticVariationTrack {
    #[inline]
    pub fn value(&self, n: usize, k: usize) -> f64 {
        self.values[n * (self.n_steps + 1) + k]
    }

    pub fn terminal(&self, n: usize) -> f64 {
        self.value(n, self.n_steps)
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
}

/// Running realized quadratic variation of the coordinate holding log-price.
pub fn quadratic_variation(paths: &PathSet, price_index: usize) -> QuadraticVariationTrack {
    assert!(price_index < paths.dim(), "price coordinate out of range");
    let k_steps = paths.n_steps();
    let mut values = vec![0.0; paths.n_paths() * (k_steps + 1)];
    for n in 0..paths.n_paths() {
        let mut acc = 0.0;
        for k in 0..k_steps {
            let d = paths.state(n, k + 1)[price_index] - paths.state(n, k)[price_index];
            acc += d * d;
            values[n * (k_steps + 1) + k + 1] = acc;
        }
    }
    QuadraticVariationTrack {
        times: paths.times.clone(),
        n_paths: paths.n_paths(),
        n_steps: k_steps,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_models::{correlated_bm, gbm, DomainBox};
    use nalgebra::DMatrix;

    #[test]
    fn one_step_identity_is_x0_plus_increment() {
        let m = correlated_bm(DMatrix::identity(2, 2), vec![1.0, -2.0], 0.0, 1.0).unwrap();
        let p = simulate_paths(&m, 1, 1, 99).unwrap();
        let dw = p.increment(0, 0);
        let terminal = p.state(0, 1);
        assert_eq!(terminal[0], 1.0 + dw[0]);
        assert_eq!(terminal[1], -2.0 + dw[1]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let a = simulate_paths(&m, 64, 16, 7).unwrap();
        let b = simulate_paths(&m, 64, 16, 7).unwrap();
        assert_eq!(a.states_raw(), b.states_raw());
        let c = simulate_paths(&m, 64, 16, 8).unwrap();
        assert_ne!(a.states_raw(), c.states_raw());
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| simulate_paths(&m, 128, 8, 3).unwrap());
        let b = pool4.install(|| simulate_paths(&m, 128, 8, 3).unwrap());
        assert_eq!(a.states_raw(), b.states_raw());
    }

    #[test]
    fn euler_recursion_reconstructs_states() {
        let m = crate::factor_models::expou_sv(
            100.0,
            0.2f64.ln(),
            1.0,
            0.2f64.ln(),
            0.5,
            -0.5,
            0.0,
            1.0,
        )
        .unwrap();
        let p = simulate_paths(&m, 16, 32, 5).unwrap();
        let dt = p.dt();
        for n in 0..p.n_paths() {
            let mut x = m.x0().to_vec();
            for k in 0..p.n_steps() {
                let drift = m.drift(p.times[k], &x);
                let diff = m.diffusion(p.times[k], &x);
                let dw = p.increment(n, k);
                for i in 0..m.dim() {
                    let mut v = x[i] + drift[i] * dt;
                    for j in 0..m.dim() {
                        v += diff[(i, j)] * dw[j];
                    }
                    x[i] = v;
                }
                m.domain().clamp(&mut x);
                assert_eq!(x.as_slice(), p.state(n, k + 1), "path {n} step {k}");
            }
        }
    }

    #[test]
    fn gbm_terminal_mean_matches_gaussian_law() {
        // xi_T - xi_0 is exactly N(-0.02, 0.04) under the scheme.
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let n = 100_000usize;
        let p = simulate_paths(&m, n, 4, 2024).unwrap();
        let mean: f64 = (0..n)
            .map(|i| p.state(i, 4)[0] - p.state(i, 0)[0])
            .sum::<f64>()
            / n as f64;
        let band = 3.0 * 0.2 / (n as f64).sqrt();
        assert!(
            (mean + 0.02).abs() < band,
            "mean {mean} outside -0.02 +- {band}"
        );
    }

    #[test]
    fn clamping_flags_paths_and_sets_warning() {
        let m = gbm(100.0, 0.2, 0.0, 1.0)
            .unwrap()
            .with_domain(DomainBox::new(vec![100.0f64.ln() - 0.01], vec![100.0f64.ln() + 0.01]).unwrap())
            .unwrap();
        let p = simulate_paths(&m, 100, 16, 1).unwrap();
        assert!(p.clamped_count() > 0);
        assert!(p.boundary_warning);
        // Clamped states stay inside the box.
        for n in 0..p.n_paths() {
            for k in 0..=p.n_steps() {
                assert!(m.domain().contains(p.state(n, k)));
            }
        }
    }

    #[test]
    fn qv_of_constant_path_is_zero() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let mut p = simulate_paths(&m, 3, 8, 11).unwrap();
        // Degenerate analytic check: overwrite with zero increments.
        let x0 = m.x0()[0];
        p.states.iter_mut().for_each(|v| *v = x0);
        let track = quadratic_variation(&p, 0);
        for n in 0..3 {
            assert_eq!(track.terminal(n), 0.0);
            for k in 0..=8 {
                assert_eq!(track.value(n, k), 0.0);
            }
        }
    }

    #[test]
    fn qv_converges_to_sigma_squared_t() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let p = simulate_paths(&m, 10_000, 2000, 31).unwrap();
        let track = quadratic_variation(&p, 0);
        let mean: f64 =
            (0..p.n_paths()).map(|n| track.terminal(n)).sum::<f64>() / p.n_paths() as f64;
        assert!(
            (mean - 0.04).abs() < 0.0004,
            "mean terminal QV {mean} not within 1% of 0.04"
        );
        // Track is nondecreasing and zero at t = 0.
        for k in 1..=p.n_steps() {
            assert!(track.value(0, k) >= track.value(0, k - 1));
        }
        assert_eq!(track.value(0, 0), 0.0);
    }

    #[test]
    fn qv_bias_halves_with_step_size() {
        // E[QV_n] - sigma^2 T = mu^2 T dt exactly for the Gaussian scheme.
        // A strong drift makes the O(dt) bias dominate the sampling noise.
        let n_paths = 20_000usize;
        let mut biases = Vec::new();
        for n_steps in [50usize, 100, 200] {
            let m = gbm(100.0, 0.2, 2.0, 1.0).unwrap();
            let p = simulate_paths(&m, n_paths, n_steps, 17).unwrap();
            let track = quadratic_variation(&p, 0);
            let mean: f64 =
                (0..n_paths).map(|n| track.terminal(n)).sum::<f64>() / n_paths as f64;
            biases.push((mean - 0.04).abs());
        }
        for w in biases.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (1.7..2.3).contains(&ratio),
                "bias ratio {ratio} not close to 2 (biases {biases:?})"
            );
        }
    }

    #[test]
    fn csv_dump_has_expected_header() {
        let m = gbm(100.0, 0.2, 0.0, 1.0).unwrap();
        let p = simulate_paths(&m, 2, 2, 1).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "path,step,t,xi_1,dW_1");
        assert_eq!(lines.count(), 2 * 3);
    }
}
