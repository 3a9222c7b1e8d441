//! Experiment orchestration: config parsing and validation, seed scheduling,
//! the named experiment runners, and table/manifest output.
//!
//! Every run is deterministic in (config, master_seed): all replica seeds are
//! derived by label and index, never from execution order, and parallel
//! results are canonically sorted before writing. Output tables are CSV with
//! a leading `# master_seed=...` comment, record streams are JSONL with a
//! header object, and each run writes a `manifest.json` echoing the config.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clt::{normality_diagnostic, pilot_velocity, quenched_variance_curve, TestFunctional};
use crate::env::{
    kappa, sample_dirichlet, t_gamma_sufficient, DirichletParams, EnvironmentKind, EnvironmentSpec,
    ProbVector, QuenchedEnvironment, StepSupport,
};
use crate::error::{Error, Result};
use crate::intersect::{qn_curve_from_profiles, qn_replicate_profiles};
use crate::joint::{difference_chain, joint_regeneration, JointRegenRecord};
use crate::regen::{blocks, detect_regenerations, tail_index, DirectionSpec};
use crate::rng;
use crate::stats::Running;
use crate::walk::{simulate, simulate_pair, PairMode};

/// Collision-resistant deterministic seed derivation; stable across versions.
pub fn derive_seeds(master_seed: u64, stream_label: &str, index: u64) -> u64 {
    rng::derive_seed(master_seed, stream_label, index)
}

/// The named experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RegenTail,
    JointRegen,
    QnCurve,
    QuenchedVariance,
    CltEndpoint,
    DirichletDiag,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RegenTail => "regen-tail",
            ExperimentKind::JointRegen => "joint-regen",
            ExperimentKind::QnCurve => "qn-curve",
            ExperimentKind::QuenchedVariance => "quenched-variance",
            ExperimentKind::CltEndpoint => "clt-endpoint",
            ExperimentKind::DirichletDiag => "dirichlet-diag",
        }
    }
}

/// Environment declaration as it appears in config files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Dirichlet {
        dimension: usize,
        alphas: Vec<f64>,
    },
    Deterministic {
        probs: Vec<f64>,
        #[serde(default)]
        dimension: Option<usize>,
        #[serde(default)]
        steps: Option<Vec<Vec<i64>>>,
    },
    FiniteMixture {
        components: Vec<MixtureComponent>,
        #[serde(default)]
        dimension: Option<usize>,
        #[serde(default)]
        steps: Option<Vec<Vec<i64>>>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub probs: Vec<f64>,
    pub weight: f64,
}

impl EnvironmentConfig {
    pub fn to_spec(&self) -> Result<EnvironmentSpec> {
        let field = "environment";
        match self {
            EnvironmentConfig::Dirichlet { dimension, alphas } => {
                let params = DirichletParams::new(*dimension, alphas.clone())
                    .map_err(|e| Error::config(field, e.to_string()))?;
                EnvironmentSpec::dirichlet(params).map_err(|e| Error::config(field, e.to_string()))
            }
            EnvironmentConfig::Deterministic {
                probs,
                dimension,
                steps,
            } => {
                let support = support_from(dimension, steps, probs.len(), field)?;
                let vector = ProbVector::new(probs.clone())
                    .map_err(|e| Error::config(field, e.to_string()))?;
                EnvironmentSpec::deterministic(vector, support)
                    .map_err(|e| Error::config(field, e.to_string()))
            }
            EnvironmentConfig::FiniteMixture {
                components,
                dimension,
                steps,
            } => {
                let len = components.first().map(|c| c.probs.len()).unwrap_or(0);
                let support = support_from(dimension, steps, len, field)?;
                let mut parts = Vec::with_capacity(components.len());
                for c in components {
                    let v = ProbVector::new(c.probs.clone())
                        .map_err(|e| Error::config(field, e.to_string()))?;
                    parts.push((v, c.weight));
                }
                EnvironmentSpec::new(EnvironmentKind::FiniteMixture(parts), support)
                    .map_err(|e| Error::config(field, e.to_string()))
            }
        }
    }
}

fn support_from(
    dimension: &Option<usize>,
    steps: &Option<Vec<Vec<i64>>>,
    n_probs: usize,
    field: &str,
) -> Result<StepSupport> {
    match (steps, dimension) {
        (Some(steps), _) => {
            StepSupport::new(steps.clone()).map_err(|e| Error::config(field, e.to_string()))
        }
        (None, Some(d)) => {
            let support = StepSupport::nearest_neighbour(*d);
            if support.len() != n_probs {
                return Err(Error::config(
                    field,
                    format!("{n_probs} probabilities do not fit 2*{d} nearest-neighbour steps"),
                ));
            }
            Ok(support)
        }
        (None, None) => Err(Error::config(
            field,
            "either `dimension` (nearest-neighbour) or explicit `steps` required",
        )),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    pub v_star: Vec<i64>,
    #[serde(default)]
    pub h: Option<i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRange {
    pub from: u32,
    pub to: u32,
}

/// Full experiment configuration. Experiment-specific fields are optional at
/// parse time and checked by `validate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub direction: Option<DirectionConfig>,
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub envs: Option<usize>,
    #[serde(default)]
    pub walks_per_env: Option<usize>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub stages: Option<StageRange>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub pair_mode: Option<PairMode>,
    #[serde(default)]
    pub start_separation: Option<i64>,
    #[serde(default)]
    pub confirm_margin: Option<i64>,
    #[serde(default)]
    pub k_top: Option<usize>,
    #[serde(default)]
    pub functional: Option<TestFunctional>,
    #[serde(default)]
    pub horizon_t: Option<usize>,
    #[serde(default)]
    pub pilot_walks: Option<usize>,
    #[serde(default)]
    pub pilot_horizon: Option<usize>,
    #[serde(default)]
    pub blocks_dump: Option<usize>,
    #[serde(default)]
    pub trajectory_dump: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn spec(&self) -> Result<EnvironmentSpec> {
        self.environment.to_spec()
    }

    pub fn direction(&self, spec: &EnvironmentSpec) -> Result<DirectionSpec> {
        match &self.direction {
            None => Ok(DirectionSpec::e1(spec.support().dim())),
            Some(cfg) => {
                let h = match cfg.h {
                    Some(h) => h,
                    None => {
                        let probe = DirectionSpec::new(cfg.v_star.clone(), 1)
                            .map_err(|e| Error::config("direction.v_star", e.to_string()))?;
                        crate::regen::level_gcd(spec.support(), &probe)
                    }
                };
                DirectionSpec::new(cfg.v_star.clone(), h)
                    .map_err(|e| Error::config("direction", e.to_string()))
            }
        }
    }

    pub fn confirm_margin(&self, spec: &EnvironmentSpec) -> i64 {
        self.confirm_margin
            .unwrap_or(10 * spec.support().radius_r0())
    }

    fn need<T: Copy>(&self, value: Option<T>, field: &str) -> Result<T> {
        value.ok_or_else(|| {
            Error::config(
                field,
                format!("required for experiment {}", self.kind().name()),
            )
        })
    }

    fn kind(&self) -> ExperimentKind {
        self.experiment.expect("kind resolved before validation")
    }

    /// Checks presence and ranges of the fields the chosen experiment uses.
    pub fn validate(&self) -> Result<()> {
        let kind = self
            .experiment
            .ok_or_else(|| Error::config("experiment", "missing experiment name"))?;
        let spec = self.spec()?;
        let dir = self.direction(&spec)?;
        if dir.v_star().len() != spec.support().dim() {
            return Err(Error::config("direction.v_star", "dimension mismatch"));
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::config("workers", "must be positive"));
            }
        }
        for (name, value) in [
            ("horizon", self.horizon),
            ("replicates", self.replicates),
            ("envs", self.envs),
            ("walks_per_env", self.walks_per_env),
            ("n", self.n),
        ] {
            if value == Some(0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        match kind {
            ExperimentKind::RegenTail => {
                let replicates = self.need(self.replicates, "replicates")?;
                self.need(self.horizon, "horizon")?;
                let k_top = self.k_top.unwrap_or_else(|| default_k_top(replicates));
                if k_top < 2 || k_top >= replicates {
                    return Err(Error::config("k_top", "must lie in [2, replicates)"));
                }
            }
            ExperimentKind::JointRegen => {
                self.need(self.replicates, "replicates")?;
                self.need(self.horizon, "horizon")?;
                if let Some(s) = self.start_separation {
                    if s < 0 {
                        return Err(Error::config("start_separation", "must be >= 0"));
                    }
                }
            }
            ExperimentKind::QnCurve => {
                let grid = self
                    .n_grid
                    .as_ref()
                    .ok_or_else(|| Error::config("n_grid", "required for qn-curve"))?;
                if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] == 0 {
                    return Err(Error::config(
                        "n_grid",
                        "must be strictly increasing and positive",
                    ));
                }
                self.need(self.replicates, "replicates")?;
            }
            ExperimentKind::QuenchedVariance => {
                let stages = self
                    .stages
                    .as_ref()
                    .ok_or_else(|| Error::config("stages", "required for quenched-variance"))?;
                if stages.from > stages.to {
                    return Err(Error::config("stages", "from must not exceed to"));
                }
                let b = self.b.unwrap_or(2.0);
                if !(1.0 < b && b <= 2.0) {
                    return Err(Error::config("b", "must lie in (1, 2]"));
                }
                if self.need(self.envs, "envs")? < 50 {
                    return Err(Error::config("envs", "need at least 50"));
                }
                if self.need(self.walks_per_env, "walks_per_env")? < 20 {
                    return Err(Error::config("walks_per_env", "need at least 20"));
                }
                if let Some(f) = &self.functional {
                    f.validate(spec.support().dim(), self.horizon_t.unwrap_or(1))
                        .map_err(|e| Error::config("functional", e.to_string()))?;
                }
            }
            ExperimentKind::CltEndpoint => {
                self.need(self.n, "n")?;
                if self.need(self.walks_per_env, "walks_per_env")? < 200 {
                    return Err(Error::config("walks_per_env", "need at least 200"));
                }
                self.need(self.envs, "envs")?;
            }
            ExperimentKind::DirichletDiag => {
                if !matches!(self.environment, EnvironmentConfig::Dirichlet { .. }) {
                    return Err(Error::config(
                        "environment",
                        "dirichlet-diag requires a dirichlet environment",
                    ));
                }
                self.need(self.replicates, "replicates")?;
            }
        }
        Ok(())
    }
}

fn default_k_top(samples: usize) -> usize {
    (samples / 100).clamp(2, 10_000)
}

/// Echo of a finished run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub experiment: String,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
    pub columns: BTreeMap<String, Vec<String>>,
    pub summary: serde_json::Value,
    pub config: ExperimentConfig,
}

fn effective_workers(config: &ExperimentConfig) -> usize {
    config.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

/// Runs the configured experiment, writing result files into the output
/// directory. Deterministic in (config, master_seed) regardless of workers.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let kind = config.kind();
    let out_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("rwre-out"));
    fs::create_dir_all(&out_dir)?;
    let workers = effective_workers(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    let started = Instant::now();
    let mut outputs = Vec::new();
    let mut columns = BTreeMap::new();
    let summary = pool.install(|| -> Result<serde_json::Value> {
        match kind {
            ExperimentKind::DirichletDiag => {
                run_dirichlet_diag(config, &out_dir, &mut outputs, &mut columns)
            }
            ExperimentKind::RegenTail => {
                run_regen_tail(config, &out_dir, &mut outputs, &mut columns)
            }
            ExperimentKind::JointRegen => {
                run_joint_regen(config, &out_dir, &mut outputs, &mut columns)
            }
            ExperimentKind::QnCurve => run_qn_curve(config, &out_dir, &mut outputs, &mut columns),
            ExperimentKind::QuenchedVariance => {
                run_quenched_variance(config, &out_dir, &mut outputs, &mut columns)
            }
            ExperimentKind::CltEndpoint => {
                run_clt_endpoint(config, &out_dir, &mut outputs, &mut columns)
            }
        }
    })?;
    let manifest = RunManifest {
        artifact: "rwre".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: kind.name().into(),
        master_seed: config.master_seed,
        workers,
        wall_time_secs: started.elapsed().as_secs_f64(),
        outputs,
        columns,
        summary,
        config: config.clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn write_csv(path: &Path, master_seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# master_seed={master_seed}\n"));
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn register(
    outputs: &mut Vec<String>,
    columns: &mut BTreeMap<String, Vec<String>>,
    name: &str,
    header: &[&str],
) {
    outputs.push(name.to_string());
    columns.insert(
        name.to_string(),
        header.iter().map(|c| c.to_string()).collect(),
    );
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "nan".into()
    }
}

// --- dirichlet-diag -------------------------------------------------------

fn run_dirichlet_diag(
    config: &ExperimentConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
    columns: &mut BTreeMap<String, Vec<String>>,
) -> Result<serde_json::Value> {
    let EnvironmentConfig::Dirichlet { dimension, alphas } = &config.environment else {
        unreachable!("validated");
    };
    let params = DirichletParams::new(*dimension, alphas.clone())
        .map_err(|e| Error::config("environment", e.to_string()))?;
    let replicates = config.replicates.expect("validated");
    let sum = params.sum();
    let k = params.alphas().len();
    // per-coordinate accumulators over replicated draws, parallel by chunk
    let chunks = 64usize;
    let per_chunk: Vec<Vec<Running>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream =
                crate::rng::Stream::new(derive_seeds(config.master_seed, "diag-draw", c as u64));
            let lo = replicates * c / chunks;
            let hi = replicates * (c + 1) / chunks;
            let mut acc = vec![Running::new(); k];
            for _ in lo..hi {
                let v = sample_dirichlet(&params, &mut stream).expect("valid weights");
                for (a, p) in acc.iter_mut().zip(v.probs()) {
                    a.push(*p);
                }
            }
            acc
        })
        .collect();
    let mut rows = Vec::new();
    for i in 0..k {
        let mut mean_acc = 0.0;
        let mut n_total = 0u64;
        let mut var_samples = Vec::new();
        for chunk in &per_chunk {
            mean_acc += chunk[i].mean() * chunk[i].n() as f64;
            n_total += chunk[i].n();
            var_samples.push(chunk[i].variance());
        }
        let mean = mean_acc / n_total as f64;
        let var = crate::stats::mean(&var_samples);
        let alpha = params.alphas()[i];
        let mean_theory = alpha / sum;
        let var_theory = alpha * (sum - alpha) / (sum * sum * (sum + 1.0));
        let se = (var / n_total as f64).sqrt();
        rows.push(vec![
            i.to_string(),
            fmt(alpha),
            fmt(mean),
            fmt(mean_theory),
            fmt(se),
            fmt(var),
            fmt(var_theory),
        ]);
    }
    let header = [
        "coordinate",
        "alpha",
        "mean",
        "mean_theory",
        "mean_std_error",
        "variance",
        "variance_theory",
    ];
    write_csv(
        &out_dir.join("dirichlet_diag.csv"),
        config.master_seed,
        &header,
        &rows,
    )?;
    register(outputs, columns, "dirichlet_diag.csv", &header);
    Ok(serde_json::json!({
        "kappa": kappa(&params),
        "t_gamma_sufficient": t_gamma_sufficient(&params),
        "draws": replicates,
    }))
}

// --- regen-tail -------------------------------------------------------------

fn run_regen_tail(
    config: &ExperimentConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
    columns: &mut BTreeMap<String, Vec<String>>,
) -> Result<serde_json::Value> {
    let spec = config.spec()?;
    let dir = config.direction(&spec)?;
    let margin = config.confirm_margin(&spec);
    let replicates = config.replicates.expect("validated");
    let horizon = config.horizon.expect("validated");
    let blocks_dump = config.blocks_dump.unwrap_or(0);
    let origin = vec![0i64; spec.support().dim()];

    struct TailOutcome {
        replicate: usize,
        env_seed: u64,
        walk_seed: u64,
        tau1: Option<(usize, i64)>,
        blocks_rows: Vec<Vec<String>>,
    }

    let results: Vec<TailOutcome> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let env_seed = derive_seeds(config.master_seed, "tail-env", r as u64);
            let walk_seed = derive_seeds(config.master_seed, "tail-walk", r as u64);
            let env = QuenchedEnvironment::new(env_seed, spec.clone());
            // escalate the horizon for the rare replicate whose first
            // regeneration is not confirmed in the base window
            let mut tau1 = None;
            let mut blocks_rows = Vec::new();
            for factor in [1usize, 8, 64] {
                let traj = simulate(&env, &origin, horizon * factor, walk_seed);
                let record = detect_regenerations(&traj, &dir, margin);
                if let (Some(&t), Some(&l)) = (record.times.first(), record.levels.first()) {
                    tau1 = Some((t, l));
                    if r < blocks_dump {
                        let summary = blocks(&record, &traj);
                        for (idx, ((dur, disp), sup)) in summary
                            .durations
                            .iter()
                            .zip(&summary.displacements)
                            .zip(&summary.sup_norms)
                            .enumerate()
                        {
                            let mut row = vec![r.to_string(), idx.to_string(), dur.to_string()];
                            row.extend(disp.iter().map(|c| c.to_string()));
                            row.push(sup.to_string());
                            row.push("false".into());
                            blocks_rows.push(row);
                        }
                    }
                    break;
                }
            }
            TailOutcome {
                replicate: r,
                env_seed,
                walk_seed,
                tau1,
                blocks_rows,
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let mut unresolved = 0u64;
    for out in &results {
        match out.tau1 {
            Some((t, l)) => {
                samples.push(t as f64);
                rows.push(vec![
                    out.replicate.to_string(),
                    out.env_seed.to_string(),
                    out.walk_seed.to_string(),
                    t.to_string(),
                    l.to_string(),
                ]);
            }
            None => unresolved += 1,
        }
    }
    let header = ["replicate", "env_seed", "walk_seed", "tau1", "level"];
    write_csv(
        &out_dir.join("tau_samples.csv"),
        config.master_seed,
        &header,
        &rows,
    )?;
    register(outputs, columns, "tau_samples.csv", &header);

    if blocks_dump > 0 {
        let dim = spec.support().dim();
        let mut header: Vec<String> =
            vec!["replicate".into(), "block_index".into(), "duration".into()];
        header.extend((0..dim).map(|c| format!("displacement_{c}")));
        header.push("sup_norm".into());
        header.push("censored".into());
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let block_rows: Vec<Vec<String>> = results
            .iter()
            .flat_map(|o| o.blocks_rows.iter().cloned())
            .collect();
        write_csv(
            &out_dir.join("blocks.csv"),
            config.master_seed,
            &header_refs,
            &block_rows,
        )?;
        register(outputs, columns, "blocks.csv", &header_refs);
    }

    let trajectory_dump = config.trajectory_dump.unwrap_or(0).min(replicates);
    if trajectory_dump > 0 {
        let mut jsonl = Vec::new();
        writeln!(
            &mut jsonl,
            "{}",
            serde_json::json!({"master_seed": config.master_seed, "trajectories": trajectory_dump})
        )?;
        for r in 0..trajectory_dump {
            let env_seed = derive_seeds(config.master_seed, "tail-env", r as u64);
            let walk_seed = derive_seeds(config.master_seed, "tail-walk", r as u64);
            let env = QuenchedEnvironment::new(env_seed, spec.clone());
            let traj = simulate(&env, &origin, horizon, walk_seed);
            writeln!(
                &mut jsonl,
                "{}",
                serde_json::json!({"replicate": r, "env_seed": env_seed, "walk_seed": walk_seed})
            )?;
            crate::walk::write_steps_jsonl(&traj, &mut jsonl)?;
        }
        fs::write(out_dir.join("trajectories.jsonl"), jsonl)?;
        outputs.push("trajectories.jsonl".into());
    }

    let k_top = config.k_top.unwrap_or_else(|| default_k_top(samples.len()));
    let hill = tail_index(&samples, k_top)?;
    let hill_json = serde_json::json!({
        "master_seed": config.master_seed,
        "tail_index": hill,
        "k_top": k_top,
        "n_samples": samples.len(),
        "n_unresolved": unresolved,
    });
    fs::write(
        out_dir.join("hill.json"),
        serde_json::to_string_pretty(&hill_json)?,
    )?;
    outputs.push("hill.json".into());
    Ok(hill_json)
}

// --- joint-regen ------------------------------------------------------------

fn run_joint_regen(
    config: &ExperimentConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
    columns: &mut BTreeMap<String, Vec<String>>,
) -> Result<serde_json::Value> {
    let spec = config.spec()?;
    let dir = config.direction(&spec)?;
    let margin = config.confirm_margin(&spec);
    let replicates = config.replicates.expect("validated");
    let horizon = config.horizon.expect("validated");
    let mode = config.pair_mode.unwrap_or(PairMode::SharedEnvironment);
    let separation = config.start_separation.unwrap_or(0);
    let dim = spec.support().dim();
    let origin = vec![0i64; dim];
    let mut start_b = vec![0i64; dim];
    if dim > 1 {
        start_b[1] = separation;
    }

    let records: Vec<(usize, u64, JointRegenRecord)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let env_seed = derive_seeds(config.master_seed, "joint-env", r as u64);
            let wa = derive_seeds(config.master_seed, "joint-walk-a", r as u64);
            let wb = derive_seeds(config.master_seed, "joint-walk-b", r as u64);
            let (a, b) = simulate_pair(
                env_seed,
                &spec,
                (&origin, &start_b),
                horizon,
                (wa, wb),
                mode,
            )
            .expect("distinct derived seeds");
            let record = joint_regeneration(&a, &b, &dir, margin).expect("common start level");
            (r, env_seed, record)
        })
        .collect();

    let mut jsonl = String::new();
    jsonl.push_str(&format!(
        "{}\n",
        serde_json::json!({"master_seed": config.master_seed, "records": records.len()})
    ));
    for (r, env_seed, record) in &records {
        let mut value = serde_json::to_value(record)?;
        let obj = value.as_object_mut().expect("record object");
        obj.insert("replicate".into(), serde_json::json!(r));
        obj.insert("env_seed".into(), serde_json::json!(env_seed));
        jsonl.push_str(&serde_json::to_string(&value)?);
        jsonl.push('\n');
    }
    fs::write(out_dir.join("joint_records.jsonl"), jsonl)?;
    outputs.push("joint_records.jsonl".into());

    let plain: Vec<JointRegenRecord> = records.iter().map(|(_, _, r)| r.clone()).collect();
    let stats = difference_chain(&plain, mode);

    let mut inc_header: Vec<String> = (0..dim).map(|c| format!("y_{c}")).collect();
    inc_header.push("count".into());
    let inc_header_refs: Vec<&str> = inc_header.iter().map(|s| s.as_str()).collect();
    let inc_rows: Vec<Vec<String>> = stats
        .increments
        .iter()
        .map(|(y, count)| {
            let mut row: Vec<String> = y.iter().map(|c| c.to_string()).collect();
            row.push(count.to_string());
            row
        })
        .collect();
    write_csv(
        &out_dir.join("increments.csv"),
        config.master_seed,
        &inc_header_refs,
        &inc_rows,
    )?;
    register(outputs, columns, "increments.csv", &inc_header_refs);

    let mut sym_header: Vec<String> = (0..dim).map(|c| format!("y_{c}")).collect();
    sym_header.extend(
        [
            "count_plus",
            "count_minus",
            "prob_plus",
            "prob_minus",
            "abs_diff",
            "std_error",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let sym_header_refs: Vec<&str> = sym_header.iter().map(|s| s.as_str()).collect();
    let sym_rows: Vec<Vec<String>> = stats
        .symmetry_rows(1)
        .iter()
        .map(|row| {
            let mut cells: Vec<String> = row.y.iter().map(|c| c.to_string()).collect();
            cells.push(row.count_plus.to_string());
            cells.push(row.count_minus.to_string());
            cells.push(fmt(row.prob_plus));
            cells.push(fmt(row.prob_minus));
            cells.push(fmt(row.abs_diff));
            cells.push(fmt(row.std_error));
            cells
        })
        .collect();
    write_csv(
        &out_dir.join("symmetry.csv"),
        config.master_seed,
        &sym_header_refs,
        &sym_rows,
    )?;
    register(outputs, columns, "symmetry.csv", &sym_header_refs);

    let confirmed_pairs: usize = plain.iter().map(|r| r.mu_pairs.len()).sum();
    Ok(serde_json::json!({
        "replicates": replicates,
        "pair_mode": mode,
        "confirmed_pairs": confirmed_pairs,
        "increments": stats.n_increments,
    }))
}

// --- qn-curve ---------------------------------------------------------------

fn run_qn_curve(
    config: &ExperimentConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
    columns: &mut BTreeMap<String, Vec<String>>,
) -> Result<serde_json::Value> {
    let spec = config.spec()?;
    let grid = config.n_grid.clone().expect("validated");
    let replicates = config.replicates.expect("validated");
    let mode = config.pair_mode.unwrap_or(PairMode::SharedEnvironment);
    let seed = derive_seeds(config.master_seed, "qn", 0);
    let profiles = qn_replicate_profiles(&spec, &grid, replicates, seed, mode)?;
    let curve = qn_curve_from_profiles(&grid, &profiles);

    let rep_header = [
        "replicate",
        "env_seed",
        "walk_seed_a",
        "walk_seed_b",
        "n",
        "qn",
    ];
    let rep_rows: Vec<Vec<String>> = profiles
        .iter()
        .flat_map(|p| {
            grid.iter().zip(&p.counts).map(|(n, q)| {
                vec![
                    p.replicate.to_string(),
                    p.env_seed.to_string(),
                    p.walk_seed_a.to_string(),
                    p.walk_seed_b.to_string(),
                    n.to_string(),
                    q.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        &out_dir.join("qn_replicates.csv"),
        config.master_seed,
        &rep_header,
        &rep_rows,
    )?;
    register(outputs, columns, "qn_replicates.csv", &rep_header);

    let header = ["n", "mean_qn", "std_error", "replicates"];
    let rows: Vec<Vec<String>> = curve
        .n_grid
        .iter()
        .zip(&curve.q_estimates)
        .map(|(n, est)| {
            vec![
                n.to_string(),
                fmt(est.value),
                fmt(est.std_error),
                est.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("qn_curve.csv"),
        config.master_seed,
        &header,
        &rows,
    )?;
    register(outputs, columns, "qn_curve.csv", &header);

    let summary = serde_json::json!({
        "master_seed": config.master_seed,
        "fitted_slope": curve.fitted_slope,
        "slope_std_error": curve.slope_std_error,
        "pair_mode": mode,
        "replicates": replicates,
    });
    fs::write(
        out_dir.join("qn_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    outputs.push("qn_summary.json".into());
    Ok(summary)
}

// --- quenched-variance --------------------------------------------------------

fn run_quenched_variance(
    config: &ExperimentConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
    columns: &mut BTreeMap<String, Vec<String>>,
) -> Result<serde_json::Value> {
    let spec = config.spec()?;
    let dir = config.direction(&spec)?;
    let margin = config.confirm_margin(&spec);
    let stages = config.stages.clone().expect("validated");
    let b = config.b.unwrap_or(2.0);
    let envs = config.envs.expect("validated");
    let walks_per_env = config.walks_per_env.expect("validated");
    let horizon_t = config.horizon_t.unwrap_or(1);
    let functional = config
        .functional
        .clone()
        .unwrap_or(TestFunctional::ClippedEndpoint {
            clip_bound: 2.0,
            coordinate: 0,
        });
    // plug-in velocity from a seed-disjoint pilot
    let pilot = pilot_velocity(
        &spec,
        &dir,
        config.pilot_walks.unwrap_or(64),
        config.pilot_horizon.unwrap_or(4096),
        margin,
        derive_seeds(config.master_seed, "qv-pilot", 0),
    )?;
    let rows_data = quenched_variance_curve(
        &spec,
        &functional,
        b,
        stages.from..=stages.to,
        envs,
        walks_per_env,
        &pilot.v,
        horizon_t,
        derive_seeds(config.master_seed, "qv", 0),
    )?;
    let header = [
        "n",
        "bn",
        "var_raw",
        "var_corrected",
        "bootstrap_se",
        "envs",
        "walks_per_env",
    ];
    let rows: Vec<Vec<String>> = rows_data
        .iter()
        .map(|s| {
            vec![
                s.stage.to_string(),
                s.bn.to_string(),
                fmt(s.var_raw),
                fmt(s.var_corrected),
                fmt(s.bootstrap_std_error),
                s.envs.to_string(),
                s.walks_per_env.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("quenched_variance.csv"),
        config.master_seed,
        &header,
        &rows,
    )?;
    register(outputs, columns, "quenched_variance.csv", &header);
    Ok(serde_json::json!({
        "velocity": pilot.v,
        "velocity_std_errors": pilot.std_errors,
        "pilot_blocks": pilot.n_blocks,
        "functional": functional,
        "b": b,
    }))
}

// --- clt-endpoint ---------------------------------------------------------

fn run_clt_endpoint(
    config: &ExperimentConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
    columns: &mut BTreeMap<String, Vec<String>>,
) -> Result<serde_json::Value> {
    let spec = config.spec()?;
    let dir = config.direction(&spec)?;
    let margin = config.confirm_margin(&spec);
    let n = config.n.expect("validated");
    let envs = config.envs.expect("validated");
    let walks = config.walks_per_env.expect("validated");
    let origin = vec![0i64; spec.support().dim()];
    let pilot = pilot_velocity(
        &spec,
        &dir,
        config.pilot_walks.unwrap_or(64),
        config.pilot_horizon.unwrap_or(4096),
        margin,
        derive_seeds(config.master_seed, "clt-pilot", 0),
    )?;
    let sqrt_n = (n as f64).sqrt();

    let mut rows = Vec::new();
    let mut passes = 0u32;
    for e in 0..envs {
        let env_seed = derive_seeds(config.master_seed, "clt-env", e as u64);
        let env = QuenchedEnvironment::new(env_seed, spec.clone());
        let samples: Vec<f64> = (0..walks)
            .into_par_iter()
            .map(|w| {
                let walk_seed = derive_seeds(env_seed, "clt-walk", w as u64);
                let traj = simulate(&env, &origin, n, walk_seed);
                let endpoint = traj.site(n);
                // first-coordinate fluctuation of the centered endpoint
                (endpoint[0] as f64 - n as f64 * pilot.v[0]) / sqrt_n
            })
            .collect();
        let report = normality_diagnostic(&samples)?;
        let pass = !report.degenerate
            && report.skewness.abs() < 5.0 * report.skew_std_error
            && report.excess_kurtosis.abs() < 5.0 * report.kurtosis_std_error;
        if pass {
            passes += 1;
        }
        rows.push(vec![
            e.to_string(),
            env_seed.to_string(),
            walks.to_string(),
            n.to_string(),
            fmt(report.skewness),
            fmt(report.skew_std_error),
            fmt(report.excess_kurtosis),
            fmt(report.kurtosis_std_error),
            fmt(report.ks_distance),
            pass.to_string(),
        ]);
    }
    let header = [
        "env_index",
        "env_seed",
        "walks",
        "n",
        "skewness",
        "skew_std_error",
        "excess_kurtosis",
        "kurtosis_std_error",
        "ks_distance",
        "pass",
    ];
    write_csv(
        &out_dir.join("clt_endpoint.csv"),
        config.master_seed,
        &header,
        &rows,
    )?;
    register(outputs, columns, "clt_endpoint.csv", &header);
    Ok(serde_json::json!({
        "velocity": pilot.v,
        "pilot_blocks": pilot.n_blocks,
        "environments": envs,
        "passes": passes,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: Some(kind),
            environment: EnvironmentConfig::Dirichlet {
                dimension: 2,
                alphas: vec![2.0, 0.5, 0.5, 0.5],
            },
            direction: None,
            master_seed: 99,
            workers: Some(1),
            output_dir: None,
            horizon: Some(256),
            replicates: Some(64),
            envs: Some(50),
            walks_per_env: Some(20),
            n_grid: Some(vec![8, 16, 32]),
            stages: Some(StageRange { from: 3, to: 4 }),
            b: Some(2.0),
            n: Some(128),
            pair_mode: None,
            start_separation: None,
            confirm_margin: Some(3),
            k_top: Some(8),
            functional: None,
            horizon_t: None,
            pilot_walks: Some(40),
            pilot_horizon: Some(1024),
            blocks_dump: None,
            trajectory_dump: None,
        }
    }

    #[test]
    fn seed_derivation_distinguishes_labels_and_indices() {
        assert_eq!(derive_seeds(1, "env", 0), derive_seeds(1, "env", 0));
        assert_ne!(derive_seeds(1, "env", 0), derive_seeds(1, "walk", 0));
        let mut seen = std::collections::HashSet::new();
        for i in 0..1_000_000u64 {
            assert!(seen.insert(derive_seeds(7, "collision-probe", i)));
        }
    }

    #[test]
    fn validation_reports_missing_fields_by_name() {
        let mut config = base_config(ExperimentKind::QnCurve);
        config.n_grid = None;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("n_grid"), "{err}");
    }

    #[test]
    fn validation_rejects_bad_grid() {
        let mut config = base_config(ExperimentKind::QnCurve);
        config.n_grid = Some(vec![8, 8, 16]);
        assert!(config.validate().is_err());
    }

    #[test]
    fn validation_rejects_non_dirichlet_diag() {
        let mut config = base_config(ExperimentKind::DirichletDiag);
        config.environment = EnvironmentConfig::Deterministic {
            probs: vec![1.0, 0.0, 0.0, 0.0],
            dimension: Some(2),
            steps: None,
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = base_config(ExperimentKind::QnCurve);
        let text = serde_json::to_string(&config).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.master_seed, 99);
        assert_eq!(back.experiment, Some(ExperimentKind::QnCurve));
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let text = r#"{"experiment":"qn-curve","environment":{"kind":"dirichlet","dimension":2,"alphas":[1,1,1,1]},"master_seed":1,"bogus":3}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn dirichlet_diag_writes_expected_summary() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = base_config(ExperimentKind::DirichletDiag);
        config.environment = EnvironmentConfig::Dirichlet {
            dimension: 2,
            alphas: vec![2.0, 1.0, 1.0, 1.0],
        };
        config.replicates = Some(20_000);
        config.output_dir = Some(tmp.path().to_path_buf());
        let manifest = run(&config).unwrap();
        assert_eq!(manifest.summary["kappa"], serde_json::json!(7.0));
        assert_eq!(
            manifest.summary["t_gamma_sufficient"],
            serde_json::json!(false)
        );
        assert!(tmp.path().join("dirichlet_diag.csv").exists());
        assert!(tmp.path().join("manifest.json").exists());
    }

    #[test]
    fn qn_curve_smoke_run_produces_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = base_config(ExperimentKind::QnCurve);
        config.n_grid = Some(vec![8, 16]);
        config.replicates = Some(5);
        config.output_dir = Some(tmp.path().to_path_buf());
        run(&config).unwrap();
        let text = fs::read_to_string(tmp.path().join("qn_curve.csv")).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2 + 2, "comment, header, two grid rows");
        assert!(rows[0].starts_with("# master_seed=99"));
    }

    #[test]
    fn reruns_are_byte_identical_across_worker_counts() {
        let mk = |workers: usize| {
            let tmp = tempfile::tempdir().unwrap();
            let mut config = base_config(ExperimentKind::JointRegen);
            config.replicates = Some(40);
            config.horizon = Some(200);
            config.workers = Some(workers);
            config.output_dir = Some(tmp.path().to_path_buf());
            run(&config).unwrap();
            let records = fs::read(tmp.path().join("joint_records.jsonl")).unwrap();
            let increments = fs::read(tmp.path().join("increments.csv")).unwrap();
            (records, increments)
        };
        let a = mk(1);
        let b = mk(1);
        let c = mk(2);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
