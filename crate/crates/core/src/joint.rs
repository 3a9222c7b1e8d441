//! Joint regeneration structure of a pair of walks.
//!
//! The construction runs in stages on the time-changed pair: re-clock the two
//! walks so that at each joint step only the directionally lagging walk moves
//! (ties move the first walk), watch for a backtrack below the current common
//! fresh level, and after a backtrack restart the search at the first common
//! fresh level above everything the backtracking walk had reached. A stage
//! with no backtrack at all is a joint regeneration: both walks freshly hit
//! the level and never drop below it again. The level where that happens is
//! the joint regeneration level, and mapping its fresh-hit times back to the
//! original clocks gives the joint regeneration time pair.
//!
//! An equivalent characterization intersects the two walks' individual
//! regeneration levels; [`joint_regeneration_oracle`] implements it
//! independently and the test suites hold the two constructions to exact
//! agreement on every confirmed entry.
//!
//! On finite data the "never drops below" clause is confirmed with the same
//! margin policy as single-walk detection; an unresolved stage censors the
//! record's tail and emits nothing for it.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{point_sub, EnvironmentSpec, Point, ProbVector, QuenchedEnvironment};
use crate::error::{Error, Result};
use crate::regen::{detect_regenerations, DirectionSpec};
use crate::rng::derive_seed;
use crate::stats::EstimateWithCi;
use crate::walk::{simulate, PairMode, Trajectory};

/// The pair re-clocked so that exactly one walk moves per joint step.
///
/// `x_index[k]` and `xtilde_index[k]` are the positions reached in the
/// original clocks after k joint steps; their sum is k, and composing a walk's
/// index map with its trajectory reproduces the walk's own site order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeChangedPair {
    pub x_index: Vec<usize>,
    pub xtilde_index: Vec<usize>,
}

impl TimeChangedPair {
    pub fn joint_steps(&self) -> usize {
        self.x_index.len() - 1
    }

    /// Site of the re-clocked first walk at joint step k.
    pub fn x_site<'t>(&self, walk: &'t Trajectory, k: usize) -> &'t [i64] {
        walk.site(self.x_index[k])
    }

    /// Site of the re-clocked second walk at joint step k.
    pub fn xtilde_site<'t>(&self, walk: &'t Trajectory, k: usize) -> &'t [i64] {
        walk.site(self.xtilde_index[k])
    }
}

/// Runs the lagging-walk re-clocking until either trajectory is exhausted.
/// The walks must start on a common level.
pub fn time_change(a: &Trajectory, b: &Trajectory, dir: &DirectionSpec) -> Result<TimeChangedPair> {
    let la: Vec<i64> = a.sites().map(|s| dir.level(s)).collect();
    let lb: Vec<i64> = b.sites().map(|s| dir.level(s)).collect();
    if la[0] != lb[0] {
        return Err(Error::InvalidInput(format!(
            "pair starts on different levels ({} and {})",
            la[0], lb[0]
        )));
    }
    let mut x_index = vec![0usize];
    let mut xtilde_index = vec![0usize];
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut max_a, mut max_b) = (la[0], lb[0]);
    loop {
        // the walk whose running max is smaller (first walk on ties) moves
        if max_a <= max_b {
            if ia + 1 >= la.len() {
                break;
            }
            ia += 1;
            max_a = max_a.max(la[ia]);
        } else {
            if ib + 1 >= lb.len() {
                break;
            }
            ib += 1;
            max_b = max_b.max(lb[ib]);
        }
        x_index.push(ia);
        xtilde_index.push(ib);
    }
    Ok(TimeChangedPair {
        x_index,
        xtilde_index,
    })
}

/// Joint regeneration record of one pair.
///
/// `mu_pairs` holds only confirmed joint regeneration times; `censored` marks
/// that the construction ended on a stage the horizon could not resolve, so
/// the tail beyond the last confirmed pair is unknown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointRegenRecord {
    /// Levels of the first cascade: the common start, every finite stage
    /// level, ending at the first joint regeneration level when confirmed.
    pub lambda_levels: Vec<i64>,
    /// First joint regeneration level, when the first cascade confirmed one.
    #[serde(rename = "Lambda")]
    pub lambda: Option<i64>,
    /// Confirmed joint regeneration time pairs in the original clocks.
    pub mu_pairs: Vec<(usize, usize)>,
    /// Differences (second walk site) - (first walk site) at each pair; all
    /// lie in the hyperplane orthogonal to the direction.
    #[serde(rename = "Y")]
    pub y_samples: Vec<Point>,
    pub censored: bool,
}

struct WalkScan {
    levels: Vec<i64>,
    suffix_min: Vec<i64>,
    suffix_max: Vec<i64>,
    /// Fresh levels in increasing order with their first-hit times: the walk
    /// enters [l, inf) for the first time and lands exactly on l.
    fresh: Vec<(i64, usize)>,
}

impl WalkScan {
    fn new(traj: &Trajectory, dir: &DirectionSpec) -> Self {
        let levels: Vec<i64> = traj.sites().map(|s| dir.level(s)).collect();
        let n = levels.len();
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
        let mut fresh = Vec::new();
        let mut run_max = i64::MIN;
        for (k, &l) in levels.iter().enumerate() {
            if l > run_max {
                fresh.push((l, k));
                run_max = l;
            }
        }
        WalkScan {
            levels,
            suffix_min,
            suffix_max,
            fresh,
        }
    }

    /// No later level undercuts `level` and the walk advances at least
    /// `margin` further levels: the finite-data regeneration confirmation.
    fn confirmed(&self, t: usize, level: i64, margin: i64) -> bool {
        self.suffix_min[t] >= level && self.suffix_max[t] >= level + margin
    }

    /// Whether any level at or after `t` drops below `level`.
    fn dips_below(&self, t: usize, level: i64) -> bool {
        self.suffix_min[t] < level
    }
}

/// Fresh levels shared by both walks, at or above `from`, as
/// (level, hit time in a, hit time in b), in increasing level order.
fn common_fresh_at_or_above<'a>(
    a: &'a WalkScan,
    b: &'a WalkScan,
    from: i64,
) -> impl Iterator<Item = (i64, usize, usize)> + 'a {
    let start_a = a.fresh.partition_point(|&(l, _)| l < from);
    let start_b = b.fresh.partition_point(|&(l, _)| l < from);
    let mut ia = start_a;
    let mut ib = start_b;
    std::iter::from_fn(move || {
        while ia < a.fresh.len() && ib < b.fresh.len() {
            let (la, ta) = a.fresh[ia];
            let (lb, tb) = b.fresh[ib];
            match la.cmp(&lb) {
                std::cmp::Ordering::Less => ia += 1,
                std::cmp::Ordering::Greater => ib += 1,
                std::cmp::Ordering::Equal => {
                    ia += 1;
                    ib += 1;
                    return Some((la, ta, tb));
                }
            }
        }
        None
    })
}

enum StageScan {
    /// A walk dropped below the stage level at some joint step; the next
    /// candidate level must clear everything that walk had reached.
    Backtrack { next_candidate_floor: i64 },
    /// The re-clocking ran out of data before any backtrack became visible.
    Stuck,
}

/// Re-clocks the pair from its stage start until the first visible backtrack
/// below `level`. Only called when some walk's remaining data dips below the
/// level, so the honest outcomes are a located backtrack or a stuck clock.
fn stage_time_change(
    a: &WalkScan,
    b: &WalkScan,
    ga: usize,
    gb: usize,
    level: i64,
    h: i64,
) -> StageScan {
    let la = &a.levels[ga..];
    let lb = &b.levels[gb..];
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut max_a, mut max_b) = (level, level);
    loop {
        if max_a <= max_b {
            if ia + 1 >= la.len() {
                return StageScan::Stuck;
            }
            ia += 1;
            if la[ia] < level {
                return StageScan::Backtrack {
                    next_candidate_floor: max_a + h,
                };
            }
            max_a = max_a.max(la[ia]);
        } else {
            if ib + 1 >= lb.len() {
                return StageScan::Stuck;
            }
            ib += 1;
            if lb[ib] < level {
                return StageScan::Backtrack {
                    next_candidate_floor: max_b + h,
                };
            }
            max_b = max_b.max(lb[ib]);
        }
    }
}

/// Stage-cascade construction of the joint regeneration times.
pub fn joint_regeneration(
    a: &Trajectory,
    b: &Trajectory,
    dir: &DirectionSpec,
    confirm_margin: i64,
) -> Result<JointRegenRecord> {
    let scan_a = WalkScan::new(a, dir);
    let scan_b = WalkScan::new(b, dir);
    if scan_a.levels[0] != scan_b.levels[0] {
        return Err(Error::InvalidInput(
            "pair must start on a common level".into(),
        ));
    }
    let h = dir.h();
    let mut record = JointRegenRecord {
        lambda_levels: vec![scan_a.levels[0]],
        lambda: None,
        mu_pairs: Vec::new(),
        y_samples: Vec::new(),
        censored: false,
    };
    let mut start_level = scan_a.levels[0];
    let mut first_cascade = true;
    'constructions: loop {
        // first candidate: the first common fresh level strictly above the start
        let mut candidate = common_fresh_at_or_above(&scan_a, &scan_b, start_level + h).next();
        loop {
            let Some((level, ta, tb)) = candidate else {
                record.censored = true;
                break 'constructions;
            };
            if first_cascade {
                record.lambda_levels.push(level);
            }
            let a_dips = scan_a.dips_below(ta, level);
            let b_dips = scan_b.dips_below(tb, level);
            if !a_dips && !b_dips {
                if scan_a.confirmed(ta, level, confirm_margin)
                    && scan_b.confirmed(tb, level, confirm_margin)
                {
                    // joint regeneration at this level
                    if first_cascade {
                        record.lambda = Some(level);
                        first_cascade = false;
                    }
                    record.mu_pairs.push((ta, tb));
                    record.y_samples.push(point_sub(b.site(tb), a.site(ta)));
                    start_level = level;
                    continue 'constructions;
                }
                record.censored = true;
                break 'constructions;
            }
            // some walk drops below the level later: locate the first joint
            // backtrack to learn where the next candidate can start
            match stage_time_change(&scan_a, &scan_b, ta, tb, level, h) {
                StageScan::Backtrack {
                    next_candidate_floor,
                } => {
                    candidate =
                        common_fresh_at_or_above(&scan_a, &scan_b, next_candidate_floor).next();
                }
                StageScan::Stuck => {
                    record.censored = true;
                    break 'constructions;
                }
            }
        }
    }
    Ok(record)
}

/// Independent characterization: intersect the walks' confirmed individual
/// regeneration levels, pairing times sequentially.
pub fn joint_regeneration_oracle(
    a: &Trajectory,
    b: &Trajectory,
    dir: &DirectionSpec,
    confirm_margin: i64,
) -> Result<JointRegenRecord> {
    let la = dir.level(a.site(0));
    let lb = dir.level(b.site(0));
    if la != lb {
        return Err(Error::InvalidInput(
            "pair must start on a common level".into(),
        ));
    }
    let rec_a = detect_regenerations(a, dir, confirm_margin);
    let rec_b = detect_regenerations(b, dir, confirm_margin);
    let mut record = JointRegenRecord {
        lambda_levels: Vec::new(),
        lambda: None,
        mu_pairs: Vec::new(),
        y_samples: Vec::new(),
        censored: rec_a.censored_tail || rec_b.censored_tail,
    };
    let (mut ia, mut ib) = (0usize, 0usize);
    while ia < rec_a.levels.len() && ib < rec_b.levels.len() {
        match rec_a.levels[ia].cmp(&rec_b.levels[ib]) {
            std::cmp::Ordering::Less => ia += 1,
            std::cmp::Ordering::Greater => ib += 1,
            std::cmp::Ordering::Equal => {
                let (ta, tb) = (rec_a.times[ia], rec_b.times[ib]);
                if record.lambda.is_none() {
                    record.lambda = Some(rec_a.levels[ia]);
                }
                record.mu_pairs.push((ta, tb));
                record.y_samples.push(point_sub(b.site(tb), a.site(ta)));
                ia += 1;
                ib += 1;
            }
        }
    }
    Ok(record)
}

/// Empirical one-step statistics of the difference chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DifferenceChainStats {
    pub mode: PairMode,
    /// Counts of consecutive (Y_i, Y_{i+1}) pairs.
    pub transitions: BTreeMap<(Point, Point), u64>,
    /// Pooled one-step increments Y_{i+1} - Y_i; for independent
    /// environments this estimates the symmetric walk's increment law.
    pub increments: BTreeMap<Point, u64>,
    pub n_increments: u64,
    pub n_records_used: u64,
}

/// One row of the increment-symmetry table: an increment vector paired with
/// its negation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub y: Point,
    pub count_plus: u64,
    pub count_minus: u64,
    pub prob_plus: f64,
    pub prob_minus: f64,
    pub abs_diff: f64,
    /// Null standard error of prob_plus - prob_minus.
    pub std_error: f64,
}

impl DifferenceChainStats {
    /// Symmetry comparison q(y) vs q(-y) over increments with at least
    /// `min_count` occurrences on the heavier side. The zero increment is its
    /// own negation and is skipped.
    pub fn symmetry_rows(&self, min_count: u64) -> Vec<SymmetryRow> {
        let n = self.n_increments as f64;
        let mut rows = Vec::new();
        if self.n_increments == 0 {
            return rows;
        }
        for (y, &c_plus) in &self.increments {
            let neg: Point = y.iter().map(|c| -c).collect();
            // visit each unordered pair once, from its lexicographically
            // smaller representative
            if *y >= neg {
                continue;
            }
            let c_minus = self.increments.get(&neg).copied().unwrap_or(0);
            if c_plus.max(c_minus) < min_count {
                continue;
            }
            let p = c_plus as f64 / n;
            let q = c_minus as f64 / n;
            rows.push(SymmetryRow {
                y: y.clone(),
                count_plus: c_plus,
                count_minus: c_minus,
                prob_plus: p,
                prob_minus: q,
                abs_diff: (p - q).abs(),
                std_error: ((p + q) / n).sqrt(),
            });
        }
        rows
    }
}

/// Aggregates transition and increment counts over the confirmed portions of
/// many records. Records contribute only their consecutive confirmed pairs;
/// censored tails were never emitted into `mu_pairs` in the first place.
pub fn difference_chain(records: &[JointRegenRecord], mode: PairMode) -> DifferenceChainStats {
    let mut stats = DifferenceChainStats {
        mode,
        transitions: BTreeMap::new(),
        increments: BTreeMap::new(),
        n_increments: 0,
        n_records_used: 0,
    };
    for record in records {
        if record.y_samples.len() < 2 {
            continue;
        }
        stats.n_records_used += 1;
        for w in record.y_samples.windows(2) {
            *stats
                .transitions
                .entry((w[0].clone(), w[1].clone()))
                .or_insert(0) += 1;
            let inc = point_sub(&w[1], &w[0]);
            *stats.increments.entry(inc).or_insert(0) += 1;
            stats.n_increments += 1;
        }
    }
    stats
}

fn hybrid_simulate(
    env_main: &QuenchedEnvironment,
    env_alt: &QuenchedEnvironment,
    alt_sites: &HashSet<Point>,
    start: &[i64],
    n_steps: usize,
    walk_seed: u64,
) -> Trajectory {
    // same stream and selection as walk::simulate, so a matched seed yields a
    // matched step sequence as long as the probabilities read agree
    let mut stream = crate::walk::walk_stream(walk_seed);
    let steps = env_main.support().steps();
    let mut cache: std::collections::HashMap<Point, ProbVector> = std::collections::HashMap::new();
    let mut sites = Vec::with_capacity(n_steps + 1);
    let mut current = start.to_vec();
    sites.push(current.clone());
    for _ in 0..n_steps {
        if !cache.contains_key(&current) {
            let v = if alt_sites.contains(&current) {
                env_alt.prob_at(&current)
            } else {
                env_main.prob_at(&current)
            };
            cache.insert(current.clone(), v);
        }
        let vector = cache.get(&current).expect("just inserted");
        let idx = crate::walk::select_step(vector, &mut stream);
        for (c, z) in current.iter_mut().zip(&steps[idx]) {
            *c += z;
        }
        sites.push(current.clone());
    }
    Trajectory::from_sites(sites, env_main.env_seed(), walk_seed).expect("nonempty")
}

/// Seed-matched probe of the coupling between the shared-environment chain
/// and the independent-environments chain.
///
/// For each replicate the first walk and the step randomness of the second
/// are held fixed; the second walk is run once against the shared
/// environment and once against an environment resampled on the first walk's
/// visited sites only. The fraction of replicates whose first difference
/// sample disagrees decays as the start separation grows.
pub fn coupling_disagreement_fraction(
    spec: &EnvironmentSpec,
    dir: &DirectionSpec,
    separation: i64,
    replicates: usize,
    horizon: usize,
    confirm_margin: i64,
    seed: u64,
) -> Result<EstimateWithCi> {
    let dim = spec.support().dim();
    if dim < 2 {
        return Err(Error::InvalidInput("need dimension at least 2".into()));
    }
    let origin = vec![0i64; dim];
    let mut start_b = vec![0i64; dim];
    start_b[1] = separation; // stays on the common starting level
    let outcomes: Vec<Option<bool>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let env_seed = derive_seed(seed, "couple-env", r as u64);
            let alt_seed = derive_seed(env_seed, "pair-env", 1);
            let wa = derive_seed(seed, "couple-walk-a", r as u64);
            let wb = derive_seed(seed, "couple-walk-b", r as u64);
            let env = QuenchedEnvironment::new(env_seed, spec.clone());
            let env_alt = QuenchedEnvironment::new(alt_seed, spec.clone());
            let a = simulate(&env, &origin, horizon, wa);
            let a_sites: HashSet<Point> = a.sites().map(|s| s.to_vec()).collect();
            let b_shared = simulate(&env, &start_b, horizon, wb);
            let b_resampled = hybrid_simulate(&env, &env_alt, &a_sites, &start_b, horizon, wb);
            let shared = joint_regeneration(&a, &b_shared, dir, confirm_margin).ok()?;
            let resampled = joint_regeneration(&a, &b_resampled, dir, confirm_margin).ok()?;
            match (shared.y_samples.first(), resampled.y_samples.first()) {
                (Some(y), Some(ybar)) => Some(y != ybar),
                _ => None,
            }
        })
        .collect();
    let decided: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.map(|differs| if differs { 1.0 } else { 0.0 }))
        .collect();
    if decided.is_empty() {
        return Err(Error::InvalidInput(
            "no replicate produced a comparable first sample".into(),
        ));
    }
    Ok(EstimateWithCi::from_samples(&decided))
}
