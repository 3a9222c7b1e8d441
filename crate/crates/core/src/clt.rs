//! Scaled-path machinery: centered diffusive rescaling, block estimators for
//! velocity and covariance, the environment-variance decay diagnostic along a
//! geometric stage sequence, and endpoint normality checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentSpec, QuenchedEnvironment};
use crate::error::{Error, Result};
use crate::regen::{blocks, detect_regenerations, BlockSummary, DirectionSpec};
use crate::rng::{derive_seed, Stream};
use crate::stats::{
    bootstrap_std_error, ks_distance_to_fitted_normal, mean, sample_variance,
    skewness_excess_kurtosis, symmetric_eigenvalues, Running,
};
use crate::walk::{simulate, Trajectory};

/// Polygonal interpolation of the centered, diffusively scaled walk: vertices
/// at t = k/n equal (X_k - k v) / sqrt(n) for k = 0..n*T.
#[derive(Clone, Debug)]
pub struct ScaledPath {
    n: usize,
    horizon_t: usize,
    dim: usize,
    /// Row k holds the vertex at time k/n.
    vertices: Vec<f64>,
}

impl ScaledPath {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon_t(&self) -> usize {
        self.horizon_t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len() / self.dim
    }

    pub fn vertex(&self, k: usize) -> &[f64] {
        &self.vertices[k * self.dim..(k + 1) * self.dim]
    }

    /// Piecewise-linear evaluation of one coordinate at time t in [0, T].
    pub fn value_at(&self, t: f64, coord: usize) -> f64 {
        let clamped = t.clamp(0.0, self.horizon_t as f64);
        let pos = clamped * self.n as f64;
        let k = (pos.floor() as usize).min(self.n_vertices() - 1);
        let frac = pos - k as f64;
        let a = self.vertex(k)[coord];
        if frac == 0.0 || k + 1 == self.n_vertices() {
            return a;
        }
        let b = self.vertex(k + 1)[coord];
        a + frac * (b - a)
    }

    /// Extremes of a polygonal path sit at vertices.
    pub fn coordinate_sup(&self, coord: usize) -> f64 {
        (0..self.n_vertices())
            .map(|k| self.vertex(k)[coord])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn endpoint(&self, coord: usize) -> f64 {
        self.vertex(self.n_vertices() - 1)[coord]
    }

    /// Assembles a path from raw vertices; used by the Lipschitz audit.
    pub fn from_vertices(
        n: usize,
        horizon_t: usize,
        dim: usize,
        vertices: Vec<f64>,
    ) -> Result<Self> {
        if vertices.len() != (n * horizon_t + 1) * dim {
            return Err(Error::InvalidInput("vertex count mismatch".into()));
        }
        Ok(ScaledPath {
            n,
            horizon_t,
            dim,
            vertices,
        })
    }
}

/// Builds the scaled path of a trajectory; needs n*T recorded steps.
pub fn scaled_path(
    traj: &Trajectory,
    n: usize,
    velocity: &[f64],
    horizon_t: usize,
) -> Result<ScaledPath> {
    if n == 0 || horizon_t == 0 {
        return Err(Error::InvalidInput("n and T must be positive".into()));
    }
    if velocity.len() != traj.dim() {
        return Err(Error::InvalidInput("velocity dimension mismatch".into()));
    }
    let need = n * horizon_t;
    if traj.len() < need {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} steps, the scaled path needs {need}",
            traj.len()
        )));
    }
    let dim = traj.dim();
    let scale = 1.0 / (n as f64).sqrt();
    let mut vertices = Vec::with_capacity((need + 1) * dim);
    for k in 0..=need {
        let site = traj.site(k);
        for c in 0..dim {
            vertices.push((site[c] as f64 - k as f64 * velocity[c]) * scale);
        }
    }
    Ok(ScaledPath {
        n,
        horizon_t,
        dim,
        vertices,
    })
}

/// Velocity from the renewal identity: mean block displacement over mean
/// block duration, with delta-method standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub v: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n_blocks: usize,
}

impl VelocityEstimate {
    /// Whether the directional speed is separated from zero: the lower
    /// two-sigma confidence bound of v . v_star must be positive. A nonzero
    /// velocity should only ever be asserted through this check.
    pub fn ballistic_in(&self, dir: &crate::regen::DirectionSpec) -> bool {
        let proj: f64 = self
            .v
            .iter()
            .zip(dir.v_star())
            .map(|(v, &c)| v * c as f64)
            .sum();
        let var: f64 = self
            .std_errors
            .iter()
            .zip(dir.v_star())
            .map(|(s, &c)| (s * c as f64).powi(2))
            .sum();
        proj - 2.0 * var.sqrt() > 0.0
    }
}

pub fn estimate_velocity(summary: &BlockSummary) -> Result<VelocityEstimate> {
    let n = summary.len();
    if n < 30 {
        return Err(Error::InvalidInput(format!(
            "need at least 30 confirmed blocks, got {n}"
        )));
    }
    let dim = summary.displacements[0].len();
    let durations: Vec<f64> = summary.durations.iter().map(|&d| d as f64).collect();
    let mean_dur = mean(&durations);
    let mut v = Vec::with_capacity(dim);
    let mut std_errors = Vec::with_capacity(dim);
    for c in 0..dim {
        let disp: Vec<f64> = summary.displacements.iter().map(|p| p[c] as f64).collect();
        let mean_disp = mean(&disp);
        let ratio = mean_disp / mean_dur;
        // delta method for a ratio of means
        let mut s_aa = 0.0;
        let mut s_ab = 0.0;
        let mut s_bb = 0.0;
        for (a, b) in disp.iter().zip(&durations) {
            s_aa += (a - mean_disp) * (a - mean_disp);
            s_ab += (a - mean_disp) * (b - mean_dur);
            s_bb += (b - mean_dur) * (b - mean_dur);
        }
        let denom = (n - 1) as f64;
        let var = (s_aa / denom - 2.0 * ratio * s_ab / denom + ratio * ratio * s_bb / denom)
            / (n as f64 * mean_dur * mean_dur);
        v.push(ratio);
        std_errors.push(var.max(0.0).sqrt());
    }
    Ok(VelocityEstimate {
        v,
        std_errors,
        n_blocks: n,
    })
}

/// Renewal-CLT covariance estimator with elementwise standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub matrix: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    pub n_blocks: usize,
}

/// Sigma = E[(Delta - dur v)(Delta - dur v)^T] / E[dur] over blocks.
/// Symmetric by construction; positive semidefiniteness is asserted.
pub fn annealed_covariance(summary: &BlockSummary, velocity: &[f64]) -> Result<CovarianceEstimate> {
    let n = summary.len();
    if n < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 confirmed blocks, got {n}"
        )));
    }
    let dim = velocity.len();
    let durations: Vec<f64> = summary.durations.iter().map(|&d| d as f64).collect();
    let mean_dur = mean(&durations);
    let mut acc = vec![vec![Running::new(); dim]; dim];
    for (disp, &dur) in summary.displacements.iter().zip(&durations) {
        let centered: Vec<f64> = (0..dim)
            .map(|c| disp[c] as f64 - dur * velocity[c])
            .collect();
        for i in 0..dim {
            for j in 0..dim {
                acc[i][j].push(centered[i] * centered[j]);
            }
        }
    }
    let matrix: Vec<Vec<f64>> = acc
        .iter()
        .map(|row| row.iter().map(|a| a.mean() / mean_dur).collect())
        .collect();
    let std_errors: Vec<Vec<f64>> = acc
        .iter()
        .map(|row| {
            row.iter()
                .map(|a| (a.variance() / n as f64).sqrt() / mean_dur)
                .collect()
        })
        .collect();
    let scale = matrix.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    let eig = symmetric_eigenvalues(&matrix);
    assert!(
        eig.iter().all(|&l| l >= -1e-10 * scale),
        "covariance estimator lost positive semidefiniteness: {eig:?}"
    );
    Ok(CovarianceEstimate {
        matrix,
        std_errors,
        n_blocks: n,
    })
}

/// Bounded 1-Lipschitz path functionals used by the variance diagnostic.
///
/// Each kind reads one coordinate of the scaled path and clips the result to
/// [-clip_bound, clip_bound], which preserves the Lipschitz constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunctional {
    ClippedCoordinateSup {
        clip_bound: f64,
        coordinate: usize,
    },
    ClippedEndpoint {
        clip_bound: f64,
        coordinate: usize,
    },
    ClippedCoordinateAt {
        clip_bound: f64,
        coordinate: usize,
        t: f64,
    },
}

impl TestFunctional {
    pub fn clip_bound(&self) -> f64 {
        match self {
            TestFunctional::ClippedCoordinateSup { clip_bound, .. }
            | TestFunctional::ClippedEndpoint { clip_bound, .. }
            | TestFunctional::ClippedCoordinateAt { clip_bound, .. } => *clip_bound,
        }
    }

    pub fn coordinate(&self) -> usize {
        match self {
            TestFunctional::ClippedCoordinateSup { coordinate, .. }
            | TestFunctional::ClippedEndpoint { coordinate, .. }
            | TestFunctional::ClippedCoordinateAt { coordinate, .. } => *coordinate,
        }
    }

    pub fn validate(&self, dim: usize, horizon_t: usize) -> Result<()> {
        if self.clip_bound() <= 0.0 || !self.clip_bound().is_finite() {
            return Err(Error::InvalidInput("clip bound must be positive".into()));
        }
        if self.coordinate() >= dim {
            return Err(Error::InvalidInput("coordinate out of range".into()));
        }
        if let TestFunctional::ClippedCoordinateAt { t, .. } = self {
            if !(0.0..=horizon_t as f64).contains(t) {
                return Err(Error::InvalidInput("evaluation time outside [0, T]".into()));
            }
        }
        Ok(())
    }

    pub fn apply(&self, path: &ScaledPath) -> f64 {
        let clip = self.clip_bound();
        let raw = match self {
            TestFunctional::ClippedCoordinateSup { coordinate, .. } => {
                path.coordinate_sup(*coordinate)
            }
            TestFunctional::ClippedEndpoint { coordinate, .. } => path.endpoint(*coordinate),
            TestFunctional::ClippedCoordinateAt { coordinate, t, .. } => {
                path.value_at(*t, *coordinate)
            }
        };
        raw.clamp(-clip, clip)
    }
}

/// Counts violations of |F(f) - F(g)| <= sup|f - g| + 1e-12 over random
/// polygonal path pairs. Zero for every shipped functional.
pub fn lipschitz_violations(
    functional: &TestFunctional,
    dim: usize,
    n: usize,
    horizon_t: usize,
    pairs: usize,
    stream: &mut Stream,
) -> usize {
    let vertex_count = (n * horizon_t + 1) * dim;
    let mut violations = 0;
    for _ in 0..pairs {
        let f_vertices: Vec<f64> = (0..vertex_count)
            .map(|_| 4.0 * stream.next_f64() - 2.0)
            .collect();
        let g_vertices: Vec<f64> = f_vertices
            .iter()
            .map(|v| v + (stream.next_f64() - 0.5) * stream.next_f64())
            .collect();
        let coord = functional.coordinate();
        let dist = f_vertices
            .chunks(dim)
            .zip(g_vertices.chunks(dim))
            .map(|(a, b)| (a[coord] - b[coord]).abs())
            .fold(0.0f64, f64::max);
        let f = ScaledPath::from_vertices(n, horizon_t, dim, f_vertices).expect("sized above");
        let g = ScaledPath::from_vertices(n, horizon_t, dim, g_vertices).expect("sized above");
        if (functional.apply(&f) - functional.apply(&g)).abs() > dist + 1e-12 {
            violations += 1;
        }
    }
    violations
}

/// One stage of the environment-variance decay diagnostic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuenchedVarianceStage {
    pub stage: u32,
    /// Process index at this stage: floor(b^stage).
    pub bn: usize,
    /// Raw between-environment variance of the quenched means.
    pub var_raw: f64,
    /// One-way ANOVA bias correction: between minus within/R, floored at 0.
    pub var_corrected: f64,
    pub bootstrap_std_error: f64,
    pub envs: usize,
    pub walks_per_env: usize,
}

/// Estimates Var over environments of the quenched mean of F along the stage
/// sequence floor(b^n), n in `stages`.
///
/// Within each environment the quenched mean is itself a Monte Carlo average
/// over `walks_per_env` walks, whose noise inflates the raw between-variance;
/// the standard one-way ANOVA correction removes that bias.
#[allow(clippy::too_many_arguments)]
pub fn quenched_variance_curve(
    spec: &EnvironmentSpec,
    functional: &TestFunctional,
    b: f64,
    stages: std::ops::RangeInclusive<u32>,
    envs: usize,
    walks_per_env: usize,
    velocity: &[f64],
    horizon_t: usize,
    seed: u64,
) -> Result<Vec<QuenchedVarianceStage>> {
    if !(1.0 < b && b <= 2.0) {
        return Err(Error::InvalidInput("b must lie in (1, 2]".into()));
    }
    if envs < 50 {
        return Err(Error::InvalidInput("need at least 50 environments".into()));
    }
    if walks_per_env < 20 {
        return Err(Error::InvalidInput(
            "need at least 20 walks per environment".into(),
        ));
    }
    let dim = spec.support().dim();
    functional.validate(dim, horizon_t)?;
    let mut audit_stream = Stream::new(derive_seed(seed, "lipschitz-audit", 0));
    if lipschitz_violations(functional, dim, 8, horizon_t, 1000, &mut audit_stream) > 0 {
        return Err(Error::InvalidInput(
            "functional failed the 1-Lipschitz audit".into(),
        ));
    }
    let origin = vec![0i64; dim];
    let mut out = Vec::new();
    for stage in stages {
        let bn = b.powi(stage as i32).floor() as usize;
        let steps = bn * horizon_t;
        let per_env: Vec<(f64, f64)> = (0..envs)
            .into_par_iter()
            .map(|e| {
                let env_master = derive_seed(seed, "qv-env", ((stage as u64) << 32) | e as u64);
                let env = QuenchedEnvironment::new(env_master, spec.clone());
                let mut acc = Running::new();
                for r in 0..walks_per_env {
                    let walk_seed = derive_seed(env_master, "qv-walk", r as u64);
                    let traj = simulate(&env, &origin, steps, walk_seed);
                    let path = scaled_path(&traj, bn, velocity, horizon_t)
                        .expect("simulated exactly bn*T steps");
                    acc.push(functional.apply(&path));
                }
                (acc.mean(), acc.variance())
            })
            .collect();
        let means: Vec<f64> = per_env.iter().map(|(m, _)| *m).collect();
        let withins: Vec<f64> = per_env.iter().map(|(_, v)| *v).collect();
        let corrected = |idx: &[usize]| -> f64 {
            let sel_means: Vec<f64> = idx.iter().map(|&i| means[i]).collect();
            let sel_within: Vec<f64> = idx.iter().map(|&i| withins[i]).collect();
            (sample_variance(&sel_means) - mean(&sel_within) / walks_per_env as f64).max(0.0)
        };
        let identity: Vec<usize> = (0..envs).collect();
        let var_raw = sample_variance(&means);
        let var_corrected = corrected(&identity);
        let mut boot_stream = Stream::new(derive_seed(seed, "qv-boot", stage as u64));
        let bootstrap_std_error = bootstrap_std_error(envs, 200, &mut boot_stream, corrected);
        out.push(QuenchedVarianceStage {
            stage,
            bn,
            var_raw,
            var_corrected,
            bootstrap_std_error,
            envs,
            walks_per_env,
        });
    }
    Ok(out)
}

/// Moment and distance diagnostics against a fitted normal law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalityReport {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub skew_std_error: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_std_error: f64,
    pub ks_distance: f64,
    pub degenerate: bool,
}

pub fn normality_diagnostic(samples: &[f64]) -> Result<NormalityReport> {
    let n = samples.len();
    if n < 200 {
        return Err(Error::InvalidInput(format!(
            "need at least 200 samples, got {n}"
        )));
    }
    let m = mean(samples);
    let sd = sample_variance(samples).sqrt();
    if sd == 0.0 {
        return Ok(NormalityReport {
            n,
            mean: m,
            std_dev: 0.0,
            skewness: 0.0,
            skew_std_error: 0.0,
            excess_kurtosis: 0.0,
            kurtosis_std_error: 0.0,
            ks_distance: 1.0,
            degenerate: true,
        });
    }
    let (skewness, excess_kurtosis) = skewness_excess_kurtosis(samples);
    Ok(NormalityReport {
        n,
        mean: m,
        std_dev: sd,
        skewness,
        skew_std_error: (6.0 / n as f64).sqrt(),
        excess_kurtosis,
        kurtosis_std_error: (24.0 / n as f64).sqrt(),
        ks_distance: ks_distance_to_fitted_normal(samples),
        degenerate: false,
    })
}

/// Pooled-block velocity from a pilot run: fresh environments, one walk each.
///
/// The pilot seeds live under their own label so downstream experiments never
/// reuse its randomness for centering and evaluation at once.
pub fn pilot_velocity(
    spec: &EnvironmentSpec,
    dir: &DirectionSpec,
    walks: usize,
    horizon: usize,
    confirm_margin: i64,
    seed: u64,
) -> Result<VelocityEstimate> {
    let origin = vec![0i64; spec.support().dim()];
    let summaries: Vec<BlockSummary> = (0..walks)
        .into_par_iter()
        .map(|w| {
            let env_seed = derive_seed(seed, "pilot-env", w as u64);
            let walk_seed = derive_seed(seed, "pilot-walk", w as u64);
            let env = QuenchedEnvironment::new(env_seed, spec.clone());
            let traj = simulate(&env, &origin, horizon, walk_seed);
            let rec = detect_regenerations(&traj, dir, confirm_margin);
            blocks(&rec, &traj)
        })
        .collect();
    let mut pooled = BlockSummary::default();
    for s in summaries {
        pooled.merge(s);
    }
    let estimate = estimate_velocity(&pooled)?;
    if !estimate.ballistic_in(dir) {
        return Err(Error::InvalidInput(format!(
            "pilot velocity {:?} is not separated from zero in the given \
             direction; centering would be meaningless",
            estimate.v
        )));
    }
    Ok(estimate)
}
