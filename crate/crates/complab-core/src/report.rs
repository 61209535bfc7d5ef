//! Analysis configuration, pipeline execution and report emission.
//!
//! One `run` executes a single subcommand against a JSON configuration and
//! writes a machine-readable report set into an output directory:
//! `report.json` (config echo, timings, results), `results.json` (the same
//! results payload without timings, byte-reproducible), plus
//! subcommand-specific CSV tables. Writes are atomic (temp file + rename)
//! and `manifest.json` lists every emitted file with size and SHA-256.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::completeness::{
    completeness_along_paths, incompleteness_witness, single_point_test, CompletenessVerdict,
    PointEvidence, Verdict, VerdictEvidence, SINGULARITY_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::factor_models::{
    validate_ellipticity, FactorModel, ModelConfig, ProbePlan, ELLIPTICITY_FLOOR,
};
use crate::hedging::{
    replicate, replicate_sweep, varswap_accrued_leg, varswap_price, varswap_rank_check,
};
use crate::path_engine::{quadratic_variation, simulate_paths, PathSet};
use crate::pricing::{
    make_pricer, Asset, AssetConfig, BackendChoice, GridSpec, McPricer, McSettings, Payoff,
    Pricer,
};

/// Numerical thresholds used by a run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    /// Relative singularity tolerance on `sigma_min / sigma_max`.
    #[serde(default = "default_singularity")]
    pub singularity: f64,
    /// Eigenvalue-ratio floor for the full-rank diffusion check.
    #[serde(default = "default_ellipticity")]
    pub ellipticity_floor: f64,
}

fn default_singularity() -> f64 {
    SINGULARITY_TOLERANCE
}

fn default_ellipticity() -> f64 {
    ELLIPTICITY_FLOOR
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            singularity: SINGULARITY_TOLERANCE,
            ellipticity_floor: ELLIPTICITY_FLOOR,
        }
    }
}

/// Monte Carlo backend settings in configuration form.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McSpec {
    #[serde(default = "default_mc_samples")]
    pub samples: usize,
    #[serde(default = "default_mc_steps")]
    pub steps: usize,
}

fn default_mc_samples() -> usize {
    20_000
}

fn default_mc_steps() -> usize {
    64
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            samples: default_mc_samples(),
            steps: default_mc_steps(),
        }
    }
}

/// Probe-point selection for validation and single-point tests.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeSpec {
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        per_axis: usize,
        #[serde(default = "default_probe_times")]
        times: usize,
    },
    PathSample {
        count: usize,
    },
    Points {
        points: Vec<PointSpec>,
    },
}

fn default_probe_times() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointSpec {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Per-run knobs: simulation sizes, backend, grids, probes, claims.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeSpec>,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<AssetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rebalance_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_steps: Option<Vec<usize>>,
    /// The single-point criterion presumes real-analytic pricing functions;
    /// the artifact cannot verify that, so it is an explicit assumption.
    #[serde(default = "default_true")]
    pub analyticity_assumed: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_n_paths() -> usize {
    1000
}

fn default_n_steps() -> usize {
    100
}

fn default_true() -> bool {
    true
}

/// A full analysis configuration document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub assets: Vec<AssetConfig>,
    pub run: RunSpec,
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }
}

/// Pipeline subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Validate,
    Simulate,
    Price,
    Completeness,
    Witness,
    Hedge,
    Varswap,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::Simulate => "simulate",
            Subcommand::Price => "price",
            Subcommand::Completeness => "completeness",
            Subcommand::Witness => "witness",
            Subcommand::Hedge => "hedge",
            Subcommand::Varswap => "varswap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "validate" => Subcommand::Validate,
            "simulate" => Subcommand::Simulate,
            "price" => Subcommand::Price,
            "completeness" => Subcommand::Completeness,
            "witness" => Subcommand::Witness,
            "hedge" => Subcommand::Hedge,
            "varswap" => Subcommand::Varswap,
            other => return Err(Error::Config(format!("unknown subcommand '{other}'"))),
        })
    }

    fn needs_square_market(&self) -> bool {
        matches!(
            self,
            Subcommand::Completeness | Subcommand::Witness | Subcommand::Hedge
        )
    }
}

/// Command-line overrides for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub strict: bool,
    pub dump_paths: Option<PathBuf>,
    pub sweep_steps: Option<Vec<usize>>,
}

/// One emitted file.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
    /// Byte-reproducible under a fixed (config, seed, version).
    pub numeric: bool,
}

/// Everything a run produces, before hitting the filesystem.
#[derive(Debug)]
pub struct RunOutput {
    pub report: Value,
    pub results: Value,
    pub files: Vec<(String, Vec<u8>)>,
    pub exit_code: i32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Execute a subcommand against a parsed configuration.
///
/// Returns the full in-memory output set; `emit_report` persists it. The
/// exit code is 0 for success or 4 when `strict` is set and the verdict is
/// INCONCLUSIVE; hard failures surface as `Err`.
pub fn execute(
    subcommand: Subcommand,
    config: &AnalysisConfig,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let mut cfg = config.clone();
    if let Some(seed) = opts.seed {
        cfg.run.seed = Some(seed);
    }
    if let Some(sweep) = &opts.sweep_steps {
        cfg.run.sweep_steps = Some(sweep.clone());
    }
    let seed = cfg
        .run
        .seed
        .ok_or_else(|| Error::Config("a seed is required (config run.seed or --seed)".into()))?;

    let model = cfg.model.build()?;
    let assets: Vec<Asset> = cfg
        .assets
        .iter()
        .map(|a| a.build(&model))
        .collect::<Result<_>>()?;
    if subcommand.needs_square_market() && assets.len() != model.dim() {
        return Err(Error::Config(format!(
            "{} requires exactly d = {} assets, got {}",
            subcommand.name(),
            model.dim(),
            assets.len()
        )));
    }

    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut exit_code = 0;

    let results = match subcommand {
        Subcommand::Validate => run_validate(&cfg, &model, seed, &mut timings, &mut warnings)?,
        Subcommand::Simulate => run_simulate(
            &cfg, &model, seed, opts, &mut timings, &mut warnings, &mut files,
        )?,
        Subcommand::Price => run_price(
            &cfg, &model, &assets, seed, &mut timings, &mut warnings, &mut files,
        )?,
        Subcommand::Completeness => {
            let (value, verdict) = run_completeness(
                &cfg, &model, &assets, seed, &mut timings, &mut warnings, &mut files,
            )?;
            if opts.strict && verdict == Verdict::Inconclusive {
                exit_code = 4;
            }
            value
        }
        Subcommand::Witness => run_witness(
            &cfg, &model, &assets, seed, &mut timings, &mut warnings, &mut files,
        )?,
        Subcommand::Hedge => run_hedge(
            &cfg, &model, &assets, seed, &mut timings, &mut warnings, &mut files,
        )?,
        Subcommand::Varswap => run_varswap(
            &cfg, &model, &assets, seed, &mut timings, &mut warnings, &mut files,
        )?,
    };

    let config_echo = serde_json::to_value(&cfg)
        .map_err(|e| Error::Numerical(format!("config serialization failed: {e}")))?;
    let config_bytes = serde_json::to_vec(&config_echo).unwrap();
    let results_doc = json!({
        "artifact": "complab",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand.name(),
        "seed": seed,
        "config_sha256": sha256_hex(&config_bytes),
        "results": results,
        "warnings": warnings,
    });
    let report_doc = json!({
        "artifact": "complab",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand.name(),
        "seed": seed,
        "config": config_echo,
        "config_sha256": sha256_hex(&config_bytes),
        "timings_ms": timings,
        "results": results,
        "warnings": warnings,
    });

    files.insert(
        0,
        (
            "results.json".into(),
            serde_json::to_vec_pretty(&results_doc).unwrap(),
        ),
    );
    files.insert(
        0,
        (
            "report.json".into(),
            serde_json::to_vec_pretty(&report_doc).unwrap(),
        ),
    );

    Ok(RunOutput {
        report: report_doc,
        results: results_doc,
        files,
        exit_code,
    })
}

/// Write the output set atomically and return the manifest.
///
/// Every file goes through a temp name and a rename; `manifest.json` is
/// written last and lists name, byte size and SHA-256 of each file.
pub fn emit_report(files: &[(String, Vec<u8>)], dir: &Path) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let tmp = dir.join(format!(".tmp-{name}"));
        let dest = dir.join(name);
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &dest)?;
        manifest.push(ManifestEntry {
            name: name.clone(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
            numeric: name != "report.json",
        });
    }
    let manifest_bytes = serde_json::to_vec_pretty(&manifest).unwrap();
    let tmp = dir.join(".tmp-manifest.json");
    std::fs::write(&tmp, &manifest_bytes)?;
    std::fs::rename(tmp, dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Parse a config file, execute and persist. Returns the process exit code
/// and prints a JSON error object to stderr on failure.
pub fn run(
    subcommand: Subcommand,
    config_path: &Path,
    out_dir: &Path,
    opts: &RunOptions,
) -> i32 {
    match run_inner(subcommand, config_path, out_dir, opts) {
        Ok(code) => code,
        Err(e) => {
            let payload = json!({"error": {"kind": e.kind(), "message": e.to_string()}});
            eprintln!("{payload}");
            e.exit_code()
        }
    }
}

fn run_inner(
    subcommand: Subcommand,
    config_path: &Path,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<i32> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let config = AnalysisConfig::from_json(&text)?;
    let output = execute(subcommand, &config, opts)?;
    emit_report(&output.files, out_dir)?;
    Ok(output.exit_code)
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.insert(stage.into(), start.elapsed().as_secs_f64() * 1e3);
    out
}

fn simulate_stage(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    warnings: &mut Vec<String>,
) -> Result<PathSet> {
    let paths = timed(timings, "simulate", || {
        simulate_paths(model, cfg.run.n_paths, cfg.run.n_steps, seed)
    })?;
    if paths.boundary_warning {
        warnings.push(format!(
            "{} of {} paths were clamped at the domain boundary",
            paths.clamped_count(),
            paths.n_paths()
        ));
    }
    Ok(paths)
}

fn probe_points(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    paths: Option<&PathSet>,
    seed: u64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    match &cfg.run.probes {
        Some(ProbeSpec::Grid {
            lower,
            upper,
            per_axis,
            times,
        }) => ProbePlan::Grid {
            lower: lower.clone(),
            upper: upper.clone(),
            per_axis: *per_axis,
            times: *times,
        }
        .expand_for(model),
        Some(ProbeSpec::Points { points }) => {
            Ok(points.iter().map(|p| (p.t, p.x.clone())).collect())
        }
        Some(ProbeSpec::PathSample { count }) => {
            let paths = paths
                .ok_or_else(|| Error::Config("path_sample probes need simulated paths".into()))?;
            Ok(paths.sample_probes(*count, seed ^ 0x9e0b_5eed))
        }
        None => {
            // Default: the spot at mid-horizon plus a few path points.
            let mut pts = vec![(0.5 * model.horizon(), model.x0().to_vec())];
            if let Some(paths) = paths {
                pts.extend(paths.sample_probes(8, seed ^ 0x9e0b_5eed));
            }
            Ok(pts)
        }
    }
}

impl ProbePlan {
    fn expand_for(self, model: &FactorModel) -> Result<Vec<(f64, Vec<f64>)>> {
        // Reuse the validation expander through the public API.
        let report = validate_ellipticity(model, &self, f64::NEG_INFINITY)?;
        Ok(report.probed_points)
    }
}

fn build_pricers(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    assets: &[Asset],
    seed: u64,
) -> Result<Vec<Arc<dyn Pricer>>> {
    assets
        .iter()
        .enumerate()
        .map(|(i, asset)| {
            let mc = McSettings {
                n_samples: cfg.run.mc.samples,
                n_steps: cfg.run.mc.steps,
                seed: seed.wrapping_add(1000 * (i as u64 + 1)),
                bump_rel: 1e-4,
            };
            make_pricer(model, asset, cfg.run.backend, cfg.run.grid.as_ref(), &mc)
        })
        .collect()
}

fn point_evidence_json(point: &Option<PointEvidence>) -> Value {
    match point {
        Some(p) => json!({"t": p.t, "x": p.x, "singularity_ratio": p.singularity_ratio}),
        None => Value::Null,
    }
}

/// Flatten a verdict into the report schema:
/// `{"verdict": ..., "method": ..., "point": ..., "singularity_ratio": ...,
///   "tolerance": ...}` plus occupation statistics when present.
fn verdict_json(v: &CompletenessVerdict) -> Value {
    let mut doc = json!({
        "verdict": v.verdict,
        "method": v.method,
        "tolerance": v.tolerance,
    });
    let obj = doc.as_object_mut().unwrap();
    match &v.evidence {
        VerdictEvidence::SinglePoint { point, explanation } => {
            obj.insert("point".into(), point_evidence_json(point));
            obj.insert(
                "singularity_ratio".into(),
                point
                    .as_ref()
                    .map(|p| json!(p.singularity_ratio))
                    .unwrap_or(Value::Null),
            );
            obj.insert("explanation".into(), json!(explanation));
        }
        VerdictEvidence::Occupation { stats, witness } => {
            obj.insert("point".into(), point_evidence_json(witness));
            obj.insert(
                "singularity_ratio".into(),
                witness
                    .as_ref()
                    .map(|p| json!(p.singularity_ratio))
                    .unwrap_or(Value::Null),
            );
            obj.insert(
                "occupation".into(),
                json!({
                    "mean_fraction": stats.mean,
                    "max_fraction": stats.max,
                    "histogram": stats.histogram,
                }),
            );
        }
    }
    doc
}

fn run_validate(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    warnings: &mut Vec<String>,
) -> Result<Value> {
    // Default plan: a thousand points sampled from simulated paths.
    let paths;
    let points = match &cfg.run.probes {
        Some(_) => {
            paths = if matches!(cfg.run.probes, Some(ProbeSpec::PathSample { .. })) {
                Some(simulate_stage(cfg, model, seed, timings, warnings)?)
            } else {
                None
            };
            probe_points(cfg, model, paths.as_ref(), seed)?
        }
        None => {
            paths = Some(simulate_stage(cfg, model, seed, timings, warnings)?);
            paths.as_ref().unwrap().sample_probes(1000, seed ^ 0x9e0b_5eed)
        }
    };
    let floor = cfg.run.tolerances.ellipticity_floor;
    let report = timed(timings, "validate", || {
        validate_ellipticity(model, &ProbePlan::Points(points), floor)
    })?;
    if !report.passed {
        warnings.push(format!(
            "diffusion rank check failed at {} of {} probes",
            report.failures.len(),
            report.probed_points.len()
        ));
    }
    Ok(json!({
        "passed": report.passed,
        "min_eigenvalue_ratio": report.min_eigenvalue_ratio,
        "floor": report.floor,
        "n_probes": report.probed_points.len(),
        "n_failures": report.failures.len(),
        "failures": report.failures.iter().take(20).map(|(t, x)| json!({"t": t, "x": x})).collect::<Vec<_>>(),
    }))
}

fn run_simulate(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    seed: u64,
    opts: &RunOptions,
    timings: &mut BTreeMap<String, f64>,
    warnings: &mut Vec<String>,
    files: &mut Vec<(String, Vec<u8>)>,
) -> Result<Value> {
    let paths = simulate_stage(cfg, model, seed, timings, warnings)?;
    let d = model.dim();
    let n = paths.n_paths();
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for i in 0..n {
        let xt = paths.state(i, paths.n_steps());
        for j in 0..d {
            mean[j] += xt[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for i in 0..n {
        let xt = paths.state(i, paths.n_steps());
        for j in 0..d {
            var[j] += (xt[j] - mean[j]) * (xt[j] - mean[j]);
        }
    }
    for v in &mut var {
        *v /= (n - 1).max(1) as f64;
    }

    if let Some(dump) = &opts.dump_paths {
        let mut buf = Vec::new();
        paths.write_csv(&mut buf, true)?;
        let name = dump
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "paths.csv".into());
        files.push((name, buf));
    }

    Ok(json!({
        "n_paths": n,
        "n_steps": paths.n_steps(),
        "terminal_mean": mean,
        "terminal_variance": var,
        "clamped_paths": paths.clamped_count(),
        "boundary_warning": paths.boundary_warning,
    }))
}

fn run_price(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    assets: &[Asset],
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    _warnings: &mut Vec<String>,
    files: &mut Vec<(String, Vec<u8>)>,
) -> Result<Value> {
    if assets.is_empty() {
        return Err(Error::Config("price requires at least one asset".into()));
    }
    let x0 = model.x0().to_vec();
    let mut rows = Vec::new();
    let mut csv = String::from("asset,kind,backend,price,stderr\n");
    for (i, asset) in assets.iter().enumerate() {
        let mc = McSettings {
            n_samples: cfg.run.mc.samples,
            n_steps: cfg.run.mc.steps,
            seed: seed.wrapping_add(1000 * (i as u64 + 1)),
            bump_rel: 1e-4,
        };
        let (price, stderr, backend_tag) = timed(timings, &format!("price_asset_{}", i + 1), || {
            match cfg.run.backend {
                BackendChoice::Mc => {
                    let pricer = McPricer::new(model.clone(), asset.clone(), mc.clone());
                    pricer
                        .price_with_stderr(0.0, &x0)
                        .map(|(p, se)| (p, Some(se), "mc"))
                }
                choice => {
                    let pricer = make_pricer(model, asset, choice, cfg.run.grid.as_ref(), &mc)?;
                    pricer.price(0.0, &x0).map(|p| (p, None, "analytic_or_pde"))
                }
            }
        })?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            asset.payoff.kind_tag(),
            backend_tag,
            price,
            stderr.map(|s| s.to_string()).unwrap_or_default()
        ));
        rows.push(json!({
            "asset": i + 1,
            "kind": asset.payoff.kind_tag(),
            "backend": backend_tag,
            "price": price,
            "stderr": stderr,
        }));
    }
    files.push(("prices.csv".into(), csv.into_bytes()));
    Ok(json!({"point": {"t": 0.0, "x": x0}, "prices": rows}))
}

fn run_completeness(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    assets: &[Asset],
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    warnings: &mut Vec<String>,
    files: &mut Vec<(String, Vec<u8>)>,
) -> Result<(Value, Verdict)> {
    let tol = cfg.run.tolerances.singularity;
    let pricers = timed(timings, "build_pricers", || {
        build_pricers(cfg, model, assets, seed)
    })?;
    let paths = simulate_stage(cfg, model, seed, timings, warnings)?;

    let pathwise = timed(timings, "pathwise_occupation", || {
        completeness_along_paths(model, &pricers, &paths, tol)
    })?;
    let probes = probe_points(cfg, model, Some(&paths), seed)?;
    let single = timed(timings, "single_point", || {
        single_point_test(&pricers, &probes, cfg.run.analyticity_assumed, tol)
    })?;

    // The single-point certificate dominates when it is decisive COMPLETE;
    // otherwise the pathwise occupation verdict stands.
    let combined = if single.verdict == Verdict::Complete {
        single.clone()
    } else {
        pathwise.clone()
    };

    if let VerdictEvidence::Occupation { stats, .. } = &pathwise.evidence {
        let mut csv = String::from("path,occupation_fraction\n");
        for (i, f) in stats.fractions.iter().enumerate() {
            csv.push_str(&format!("{i},{f}\n"));
        }
        files.push(("occupation.csv".into(), csv.into_bytes()));
    }

    let verdict = combined.verdict;
    let mut doc = verdict_json(&combined);
    let obj = doc.as_object_mut().unwrap();
    obj.insert("pathwise".into(), verdict_json(&pathwise));
    obj.insert("single_point".into(), verdict_json(&single));
    Ok((doc, verdict))
}

fn run_witness(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    assets: &[Asset],
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    warnings: &mut Vec<String>,
    files: &mut Vec<(String, Vec<u8>)>,
) -> Result<Value> {
    let tol = cfg.run.tolerances.singularity;
    let pricers = timed(timings, "build_pricers", || {
        build_pricers(cfg, model, assets, seed)
    })?;
    let paths = simulate_stage(cfg, model, seed, timings, warnings)?;
    let claim = timed(timings, "witness", || {
        incompleteness_witness(model, &pricers, &paths, paths.n_paths(), tol)
    })?;

    let mut csv = String::from("path,h\n");
    for (i, h) in claim.h_values.iter().enumerate() {
        csv.push_str(&format!("{i},{h}\n"));
    }
    files.push(("witness_h.csv".into(), csv.into_bytes()));

    Ok(json!({
        "n_singular_points": claim.n_singular_points,
        "n_paths_used": claim.n_paths_used,
        "mean_occupation_time": claim.mean_occupation_time,
        "e_h_squared": claim.e_h_squared,
        "e_h_squared_stderr": claim.e_h_squared_stderr,
        "orthogonality": claim.orthogonality.iter().enumerate().map(|(i, o)| json!({
            "asset": i + 1,
            "covariance": o.covariance,
            "stderr": o.stderr,
        })).collect::<Vec<_>>(),
        "anchors_stored": claim.anchors.len(),
    }))
}

fn run_hedge(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    assets: &[Asset],
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    warnings: &mut Vec<String>,
    files: &mut Vec<(String, Vec<u8>)>,
) -> Result<Value> {
    let tol = cfg.run.tolerances.singularity;
    let claim_cfg = cfg
        .run
        .claim
        .as_ref()
        .ok_or_else(|| Error::Config("hedge requires run.claim".into()))?;
    let claim = claim_cfg.build(model)?;
    let pricers = timed(timings, "build_pricers", || {
        build_pricers(cfg, model, assets, seed)
    })?;
    let claim_mc = McSettings {
        n_samples: cfg.run.mc.samples,
        n_steps: cfg.run.mc.steps,
        seed: seed.wrapping_add(999_983),
        bump_rel: 1e-4,
    };
    let claim_pricer = timed(timings, "build_claim_pricer", || {
        make_pricer(model, &claim, cfg.run.backend, cfg.run.grid.as_ref(), &claim_mc)
    })?;
    let paths = simulate_stage(cfg, model, seed, timings, warnings)?;

    let mut doc = json!({});
    if let Some(sweep_steps) = &cfg.run.sweep_steps {
        let sweep = timed(timings, "hedge_sweep", || {
            replicate_sweep(
                model,
                &pricers,
                claim_pricer.as_ref(),
                &claim,
                &paths,
                sweep_steps,
                tol,
            )
        })?;
        let mut csv = String::from("rebalance_steps,rms_error,mean_error,max_abs_error,singular_events\n");
        for p in &sweep.points {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                p.rebalance_steps, p.rms_error, p.mean_error, p.max_abs_error, p.singular_events
            ));
        }
        files.push(("sweep_summary.csv".into(), csv.into_bytes()));
        doc = json!({
            "sweep": sweep.points,
            "loglog_slope": sweep.loglog_slope,
        });
        // Per-path errors at the finest frequency.
        let finest = *sweep_steps.iter().max().unwrap();
        let report = replicate(
            model,
            &pricers,
            claim_pricer.as_ref(),
            &claim,
            &paths,
            finest,
            tol,
        )?;
        push_hedge_csv(files, &report.terminal_errors, &report.singular_events);
        merge(&mut doc, hedge_summary_json(&report));
    } else {
        let rebalance = cfg.run.rebalance_steps.unwrap_or(cfg.run.n_steps);
        let report = timed(timings, "hedge", || {
            replicate(
                model,
                &pricers,
                claim_pricer.as_ref(),
                &claim,
                &paths,
                rebalance,
                tol,
            )
        })?;
        push_hedge_csv(files, &report.terminal_errors, &report.singular_events);
        doc = hedge_summary_json(&report);
    }
    Ok(doc)
}

fn push_hedge_csv(files: &mut Vec<(String, Vec<u8>)>, errors: &[f64], singular: &[u32]) {
    let mut csv = String::from("path,terminal_error,singular_events\n");
    for (i, (e, s)) in errors.iter().zip(singular).enumerate() {
        csv.push_str(&format!("{i},{e},{s}\n"));
    }
    files.push(("hedge_errors.csv".into(), csv.into_bytes()));
}

fn hedge_summary_json(report: &crate::hedging::HedgeReport) -> Value {
    json!({
        "rebalance_steps": report.rebalance_steps,
        "rebalance_dt": report.rebalance_dt,
        "claim_price0": report.claim_price0,
        "mean_error": report.mean_error,
        "rms_error": report.rms_error,
        "max_abs_error": report.max_abs_error,
        "singular_events": report.singular_events.iter().map(|&c| c as usize).sum::<usize>(),
        "near_singular_events": report.near_singular_events.iter().map(|&c| c as usize).sum::<usize>(),
    })
}

fn merge(into: &mut Value, from: Value) {
    if let (Some(a), Value::Object(b)) = (into.as_object_mut(), from) {
        for (k, v) in b {
            a.insert(k, v);
        }
    }
}

fn run_varswap(
    cfg: &AnalysisConfig,
    model: &FactorModel,
    assets: &[Asset],
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    warnings: &mut Vec<String>,
    files: &mut Vec<(String, Vec<u8>)>,
) -> Result<Value> {
    let coord = model
        .stock_coordinate()
        .ok_or_else(|| Error::Config("varswap requires a stock model".into()))?;
    let tol = cfg.run.tolerances.singularity;
    let maturity = model.horizon();
    let s0 = model.x0()[coord].exp();
    let log_asset = Asset::new(
        Payoff::LogContract {
            s0,
            offset: model.rate() * maturity,
        },
        maturity,
    )?;
    let mc = McSettings {
        n_samples: cfg.run.mc.samples,
        n_steps: cfg.run.mc.steps,
        seed: seed.wrapping_add(424_243),
        bump_rel: 1e-4,
    };
    let log_pricer = timed(timings, "log_contract_pricer", || {
        make_pricer(model, &log_asset, cfg.run.backend, cfg.run.grid.as_ref(), &mc)
    })?;

    let x0 = model.x0().to_vec();
    let v0 = varswap_price(log_pricer.as_ref(), model.rate(), maturity, 0.0, &x0, 0.0)?;

    // Pathwise terminal check against realized quadratic variation.
    let paths = simulate_stage(cfg, model, seed, timings, warnings)?;
    let track = quadratic_variation(&paths, coord);
    let band = 2.0 / (paths.n_steps() as f64).sqrt();
    let mut inside = 0usize;
    let mut csv = String::from("path,v_t,realized_qv\n");
    for n in 0..paths.n_paths() {
        let accrued = varswap_accrued_leg(model, &paths, n, paths.n_steps())?;
        let xt = paths.state(n, paths.n_steps());
        let vt = varswap_price(log_pricer.as_ref(), model.rate(), maturity, maturity, xt, accrued)?;
        let qv = track.terminal(n);
        if (vt - qv).abs() <= band * qv.abs().max(1e-12) {
            inside += 1;
        }
        csv.push_str(&format!("{n},{vt},{qv}\n"));
    }
    files.push(("varswap_paths.csv".into(), csv.into_bytes()));

    // Rank equivalence at the spot when the asset set has a log-contract
    // row in last position.
    let rank_check = if assets.len() == model.dim()
        && assets
            .last()
            .map(|a| matches!(a.payoff, Payoff::LogContract { .. }))
            .unwrap_or(false)
    {
        let pricers = build_pricers(cfg, model, assets, seed)?;
        let t_mid = 0.5 * maturity;
        let eval = crate::completeness::build_g(&pricers, t_mid, &x0, tol)?;
        let v1 = pricers[0].price(t_mid, &x0)?;
        let check = varswap_rank_check(&eval, v1, t_mid, maturity, model.rate(), tol)?;
        json!({
            "rank_before": check.rank_before,
            "rank_after": check.rank_after,
            "equal": check.equal,
        })
    } else {
        Value::Null
    };

    Ok(json!({
        "v0": v0,
        "maturity": maturity,
        "s0": s0,
        "pathwise": {
            "band_relative": band,
            "inside_band": inside,
            "n_paths": paths.n_paths(),
            "fraction_inside": inside as f64 / paths.n_paths() as f64,
        },
        "rank_check": rank_check,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat_config() -> AnalysisConfig {
        AnalysisConfig::from_json(
            r#"{
            "model": {"family": "correlated_bm",
                      "params": {"d": 2, "sigma": [[1.0, 0.0], [0.0, 1.0]], "x0": [1.0, 2.0]},
                      "horizon": 1.0},
            "assets": [
                {"kind": "european_factor", "payoff": "square", "index": 1, "maturity": 1.0},
                {"kind": "european_factor", "payoff": "square", "index": 2, "maturity": 1.0}
            ],
            "run": {"seed": 42, "n_paths": 50, "n_steps": 32}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_echo_round_trips() {
        let cfg = heat_config();
        let echo = serde_json::to_string(&cfg).unwrap();
        let back = AnalysisConfig::from_json(&echo).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn completeness_run_produces_verdict() {
        let cfg = heat_config();
        let out = execute(Subcommand::Completeness, &cfg, &RunOptions::default()).unwrap();
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.results["results"]["verdict"], "COMPLETE");
        assert!(out.files.iter().any(|(n, _)| n == "occupation.csv"));
    }

    #[test]
    fn seed_is_required() {
        let mut cfg = heat_config();
        cfg.run.seed = None;
        let err = execute(Subcommand::Simulate, &cfg, &RunOptions::default()).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn asset_count_must_match_dimension() {
        let mut cfg = heat_config();
        cfg.assets.pop();
        assert!(execute(Subcommand::Completeness, &cfg, &RunOptions::default()).is_err());
        // price works with a single asset though.
        assert!(execute(Subcommand::Price, &cfg, &RunOptions::default()).is_ok());
    }

    #[test]
    fn emit_writes_manifest_and_files() {
        let cfg = heat_config();
        let out = execute(Subcommand::Validate, &cfg, &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = emit_report(&out.files, dir.path()).unwrap();
        assert!(manifest.iter().any(|m| m.name == "report.json"));
        assert!(manifest.iter().any(|m| m.name == "results.json"));
        assert!(dir.path().join("manifest.json").exists());
        for entry in &manifest {
            let bytes = std::fs::read(dir.path().join(&entry.name)).unwrap();
            assert_eq!(bytes.len() as u64, entry.bytes);
            assert_eq!(sha256_hex(&bytes), entry.sha256);
        }
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let cfg = heat_config();
        let a = execute(Subcommand::Completeness, &cfg, &RunOptions::default()).unwrap();
        let b = execute(Subcommand::Completeness, &cfg, &RunOptions::default()).unwrap();
        for ((na, ba), (nb, bb)) in a.files.iter().zip(&b.files) {
            assert_eq!(na, nb);
            if na != "report.json" {
                assert_eq!(ba, bb, "file {na} differs between identical runs");
            }
        }
    }
}
