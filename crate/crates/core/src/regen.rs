//! Directional regeneration structure of a single walk.
//!
//! A time t regenerates in direction `v_star` when the level X_t . v_star
//! strictly exceeds every earlier level and is never undercut afterwards.
//! Detection runs the hitting-time / backtrack / running-sup iteration:
//! starting from the running sup M, the next candidate is the first entry
//! into level M + 1; a later backtrack below the candidate's level refutes it
//! and raises M, otherwise the candidate stands. On finite data "never
//! undercut afterwards" is undecidable, so a candidate is only confirmed once
//! the walk has also advanced `confirm_margin` further levels; the final
//! unconfirmed candidate is reported as a censored tail.

use serde::{Deserialize, Serialize};

use crate::env::{dot, point_sub, sup_norm, Point, StepSupport};
use crate::error::{Error, Result};
use crate::stats::{gcd, EstimateWithCi};
use crate::walk::Trajectory;

/// Direction of transience plus the level-lattice spacing h.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionSpec {
    v_star: Vec<i64>,
    h: i64,
}

impl DirectionSpec {
    pub fn new(v_star: Vec<i64>, h: i64) -> Result<Self> {
        if v_star.iter().all(|c| *c == 0) {
            return Err(Error::InvalidInput("direction must be nonzero".into()));
        }
        if h < 1 {
            return Err(Error::InvalidInput("level spacing h must be >= 1".into()));
        }
        Ok(DirectionSpec { v_star, h })
    }

    /// Default direction: first coordinate axis, h = 1.
    pub fn e1(dim: usize) -> Self {
        let mut v = vec![0i64; dim];
        v[0] = 1;
        DirectionSpec { v_star: v, h: 1 }
    }

    pub fn v_star(&self) -> &[i64] {
        &self.v_star
    }

    pub fn h(&self) -> i64 {
        self.h
    }

    pub fn level(&self, site: &[i64]) -> i64 {
        dot(site, &self.v_star)
    }
}

/// Level spacing from the one-step level increments of a support: the gcd of
/// the nonzero |z . v_star|. Defaults to 1 when every increment vanishes,
/// which only happens for directions orthogonal to the whole support.
pub fn level_gcd(support: &StepSupport, dir: &DirectionSpec) -> i64 {
    let mut g = 0;
    for z in support.steps() {
        g = gcd(g, dir.level(z));
    }
    if g == 0 {
        1
    } else {
        g
    }
}

/// Per-trajectory directional functionals: levels, running maxima, first
/// hitting times of half-spaces and the backtrack index.
#[derive(Clone, Debug)]
pub struct DirectionalScan {
    levels: Vec<i64>,
    running_max: Vec<i64>,
}

impl DirectionalScan {
    pub fn new(traj: &Trajectory, dir: &DirectionSpec) -> Self {
        let levels: Vec<i64> = traj.sites().map(|s| dir.level(s)).collect();
        let mut running_max = Vec::with_capacity(levels.len());
        let mut m = i64::MIN;
        for &l in &levels {
            m = m.max(l);
            running_max.push(m);
        }
        DirectionalScan {
            levels,
            running_max,
        }
    }

    pub fn levels(&self) -> &[i64] {
        &self.levels
    }

    pub fn running_max(&self) -> &[i64] {
        &self.running_max
    }

    /// First time the level reaches at least `u`; None is censored-at-horizon.
    pub fn first_hit(&self, u: i64) -> Option<usize> {
        let idx = self.running_max.partition_point(|&m| m < u);
        (idx < self.levels.len()).then_some(idx)
    }

    /// First time >= `from` whose level drops below the level at `from`
    /// (the backtrack index of the shifted walk); None is censored.
    pub fn backtrack_from(&self, from: usize) -> Option<usize> {
        let base = self.levels[from];
        self.levels[from..]
            .iter()
            .position(|&l| l < base)
            .map(|off| from + off)
    }
}

/// Levels, backtrack and first-hit structure of a trajectory.
pub fn directional_functionals(traj: &Trajectory, dir: &DirectionSpec) -> DirectionalScan {
    DirectionalScan::new(traj, dir)
}

/// Detected regeneration times with the censoring bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    /// Confirmed regeneration indices, strictly increasing.
    pub times: Vec<usize>,
    /// The level at each confirmed time, strictly increasing with gaps >= 1.
    pub levels: Vec<i64>,
    /// Simulation length used as the censoring cutoff.
    pub horizon: usize,
    /// True when a final candidate could not be confirmed within the horizon.
    pub censored_tail: bool,
}

/// Runs the candidate iteration on the full trajectory.
///
/// A candidate is confirmed when no later level in the data drops below the
/// candidate's level and the walk subsequently gains at least
/// `confirm_margin` levels. After a confirmation the construction restarts
/// from the confirmed time, which reproduces the shifted-walk composition of
/// later regeneration times exactly.
pub fn detect_regenerations(
    traj: &Trajectory,
    dir: &DirectionSpec,
    confirm_margin: i64,
) -> RegenerationRecord {
    let scan = DirectionalScan::new(traj, dir);
    let levels = scan.levels();
    let n = levels.len();
    let horizon = traj.len();
    // suffix minima / maxima make the never-undercut and margin checks O(1)
    let mut suffix_min = vec![0i64; n];
    let mut suffix_max = vec![0i64; n];
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for k in (0..n).rev() {
        lo = lo.min(levels[k]);
        hi = hi.max(levels[k]);
        suffix_min[k] = lo;
        suffix_max[k] = hi;
    }

    let mut times = Vec::new();
    let mut out_levels = Vec::new();
    let mut censored_tail = false;
    let mut sup = levels[0];
    // candidates are first entries into level sup + 1; exhausting them means
    // the walk never advanced past the sup, which leaves nothing to decide
    while let Some(s) = scan.first_hit(sup + 1) {
        if suffix_min[s] >= levels[s] {
            // never undercut within the data
            if suffix_max[s] >= levels[s] + confirm_margin {
                times.push(s);
                out_levels.push(levels[s]);
                sup = levels[s];
            } else {
                censored_tail = true;
                break;
            }
        } else {
            // refuted: raise the sup to everything seen up to the backtrack
            let r = scan
                .backtrack_from(s)
                .expect("suffix_min said a drop exists");
            sup = scan.running_max()[r];
        }
    }
    RegenerationRecord {
        times,
        levels: out_levels,
        horizon,
        censored_tail,
    }
}

/// Per-block statistics of a regeneration decomposition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    /// Durations of the inter-regeneration blocks [tau_k, tau_{k+1}].
    pub durations: Vec<u64>,
    /// Displacements over those blocks.
    pub displacements: Vec<Point>,
    /// sup-norm excursion within each block, relative to the block start.
    pub sup_norms: Vec<i64>,
    /// The initial segment [0, tau_1], kept apart from the stationary blocks.
    pub first_block: Option<(u64, Point, i64)>,
}

impl BlockSummary {
    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn merge(&mut self, other: BlockSummary) {
        self.durations.extend(other.durations);
        self.displacements.extend(other.displacements);
        self.sup_norms.extend(other.sup_norms);
        if self.first_block.is_none() {
            self.first_block = other.first_block;
        }
    }
}

fn segment_sup_norm(traj: &Trajectory, from: usize, to: usize) -> i64 {
    let base = traj.site(from);
    (from..=to)
        .map(|k| sup_norm(&point_sub(traj.site(k), base)))
        .max()
        .unwrap_or(0)
}

/// Splits a trajectory into regeneration blocks. Fewer than two confirmed
/// times yield an empty summary; the censored tail never contributes.
pub fn blocks(record: &RegenerationRecord, traj: &Trajectory) -> BlockSummary {
    let mut out = BlockSummary::default();
    if let Some(&t1) = record.times.first() {
        out.first_block = Some((
            t1 as u64,
            point_sub(traj.site(t1), traj.site(0)),
            segment_sup_norm(traj, 0, t1),
        ));
    }
    if record.times.len() < 2 {
        return out;
    }
    for w in record.times.windows(2) {
        let (a, b) = (w[0], w[1]);
        out.durations.push((b - a) as u64);
        out.displacements
            .push(point_sub(traj.site(b), traj.site(a)));
        out.sup_norms.push(segment_sup_norm(traj, a, b));
    }
    out
}

/// Hill estimator of the tail index from the top `k_top` order statistics.
///
/// Scale-invariant: only ratios of order statistics enter. The reported
/// standard error is the asymptotic index / sqrt(k_top).
pub fn tail_index(samples: &[f64], k_top: usize) -> Result<EstimateWithCi> {
    if samples.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::InvalidInput(
            "tail index needs strictly positive samples".into(),
        ));
    }
    if k_top < 2 || k_top >= samples.len() {
        return Err(Error::InvalidInput(format!(
            "k_top must lie in [2, {}), got {k_top}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite samples"));
    let threshold = sorted[k_top];
    if threshold <= 0.0 {
        return Err(Error::InvalidInput("degenerate order statistics".into()));
    }
    let mean_log: f64 = sorted[..k_top]
        .iter()
        .map(|x| (x / threshold).ln())
        .sum::<f64>()
        / k_top as f64;
    if mean_log <= 0.0 {
        return Err(Error::InvalidInput(
            "all top order statistics equal the threshold".into(),
        ));
    }
    let index = 1.0 / mean_log;
    Ok(EstimateWithCi {
        value: index,
        std_error: index / (k_top as f64).sqrt(),
        n: k_top as u64,
    })
}

/// One row of the stretched-exponential moment table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TGammaRow {
    pub c: f64,
    pub mean: f64,
    /// Share of the empirical sum carried by the single largest sample.
    pub max_term_share: f64,
    /// Flagged when one sample dominates the mean: evidence against a finite
    /// moment at this c.
    pub unstable: bool,
}

/// Empirical means of exp(c * sup^gamma) over a grid of c, with a stability
/// flag per row.
pub fn t_gamma_diagnostic(block_sup_norms: &[f64], gamma: f64, c_grid: &[f64]) -> Vec<TGammaRow> {
    assert!(!block_sup_norms.is_empty(), "need at least one sample");
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    let n = block_sup_norms.len() as f64;
    c_grid
        .iter()
        .map(|&c| {
            let mut sum = 0.0;
            let mut max_term: f64 = 0.0;
            for &s in block_sup_norms {
                let term = (c * s.powf(gamma)).exp();
                sum += term;
                max_term = max_term.max(term);
            }
            let share = if sum > 0.0 { max_term / sum } else { 1.0 };
            TGammaRow {
                c,
                mean: sum / n,
                max_term_share: share,
                unstable: share > 0.5,
            }
        })
        .collect()
}
