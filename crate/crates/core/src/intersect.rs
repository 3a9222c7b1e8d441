//! Site-intersection statistics of shared-environment walk pairs.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentSpec, Point};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::stats::{ols_slope, EstimateWithCi, SlopeFit};
use crate::walk::{simulate_pair, PairMode, Trajectory};

/// Number of distinct sites visited by both walks among their first `n`
/// positions (indices 0..n-1, starts included). Revisits never count twice.
pub fn count_intersections(a: &Trajectory, b: &Trajectory, n: usize) -> Result<u64> {
    if n == 0 {
        return Err(Error::InvalidInput("prefix length must be positive".into()));
    }
    if a.n_sites() < n || b.n_sites() < n {
        return Err(Error::InvalidInput(format!(
            "prefix length {n} exceeds a trajectory ({} and {} sites)",
            a.n_sites(),
            b.n_sites()
        )));
    }
    Ok(*intersection_profile(a, b, &[n])?
        .first()
        .expect("one grid point"))
}

/// Common-site counts at each prefix length of an increasing grid, in one
/// pass over the pair.
pub fn intersection_profile(a: &Trajectory, b: &Trajectory, n_grid: &[usize]) -> Result<Vec<u64>> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "grid must be strictly increasing".into(),
        ));
    }
    let n_max = *n_grid.last().unwrap();
    if n_grid[0] == 0 {
        return Err(Error::InvalidInput(
            "prefix lengths must be positive".into(),
        ));
    }
    if a.n_sites() < n_max || b.n_sites() < n_max {
        return Err(Error::InvalidInput(format!(
            "grid point {n_max} exceeds a trajectory"
        )));
    }
    let mut seen_a: HashSet<Point> = HashSet::new();
    let mut seen_b: HashSet<Point> = HashSet::new();
    let mut common: HashSet<Point> = HashSet::new();
    let mut out = Vec::with_capacity(n_grid.len());
    let mut grid_iter = n_grid.iter().peekable();
    for k in 0..n_max {
        let sa = a.site(k).to_vec();
        if seen_b.contains(&sa) {
            common.insert(sa.clone());
        }
        seen_a.insert(sa);
        let sb = b.site(k).to_vec();
        if seen_a.contains(&sb) {
            common.insert(sb.clone());
        }
        seen_b.insert(sb);
        if let Some(&&next) = grid_iter.peek() {
            if k + 1 == next {
                out.push(common.len() as u64);
                grid_iter.next();
            }
        }
    }
    Ok(out)
}

/// Estimated growth curve of the mean intersection count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntersectionCurve {
    pub n_grid: Vec<usize>,
    pub q_estimates: Vec<EstimateWithCi>,
    /// Least-squares slope of log mean vs log n over the upper half of the
    /// grid, with its standard error.
    pub fitted_slope: f64,
    pub slope_std_error: f64,
    pub replicates: usize,
}

/// Monte Carlo estimate of the intersection curve for pairs started at the
/// origin. `mode` selects the shared-environment law or the
/// independent-environments control. The slope fit needs at least 30
/// replicates to mean anything; smoke-scale runs go through
/// [`qn_curve_unchecked`].
pub fn qn_curve(
    spec: &EnvironmentSpec,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    mode: PairMode,
) -> Result<IntersectionCurve> {
    if replicates < 30 {
        return Err(Error::InvalidInput("need at least 30 replicates".into()));
    }
    qn_curve_unchecked(spec, n_grid, replicates, seed, mode)
}

/// One replicate's attributed intersection profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateProfile {
    pub replicate: usize,
    pub env_seed: u64,
    pub walk_seed_a: u64,
    pub walk_seed_b: u64,
    /// Common-site count at each grid prefix.
    pub counts: Vec<u64>,
}

/// Per-replicate profiles over the grid, seeds derived from `seed` by index.
pub fn qn_replicate_profiles(
    spec: &EnvironmentSpec,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    mode: PairMode,
) -> Result<Vec<ReplicateProfile>> {
    if replicates == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    let n_max = *n_grid
        .last()
        .ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    let origin = vec![0i64; spec.support().dim()];
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let env_seed = derive_seed(seed, "qn-env", r as u64);
            let wa = derive_seed(seed, "qn-walk-a", r as u64);
            let wb = derive_seed(seed, "qn-walk-b", r as u64);
            let (a, b) = simulate_pair(env_seed, spec, (&origin, &origin), n_max, (wa, wb), mode)?;
            let counts = intersection_profile(&a, &b, n_grid)?;
            Ok(ReplicateProfile {
                replicate: r,
                env_seed,
                walk_seed_a: wa,
                walk_seed_b: wb,
                counts,
            })
        })
        .collect()
}

/// Curve estimation without the replicate floor; the slope of a short grid
/// or a tiny run is reported as-is.
pub fn qn_curve_unchecked(
    spec: &EnvironmentSpec,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    mode: PairMode,
) -> Result<IntersectionCurve> {
    Ok(qn_curve_from_profiles(
        n_grid,
        &qn_replicate_profiles(spec, n_grid, replicates, seed, mode)?,
    ))
}

/// Aggregates already-simulated replicate profiles into a curve.
pub fn qn_curve_from_profiles(
    n_grid: &[usize],
    profiles: &[ReplicateProfile],
) -> IntersectionCurve {
    let replicates = profiles.len();
    let mut per_n: Vec<Vec<f64>> = vec![Vec::with_capacity(replicates); n_grid.len()];
    for profile in profiles {
        for (bucket, q) in per_n.iter_mut().zip(&profile.counts) {
            bucket.push(*q as f64);
        }
    }
    let q_estimates: Vec<EstimateWithCi> = per_n
        .iter()
        .map(|xs| EstimateWithCi::from_samples(xs))
        .collect();
    let fit = fit_upper_half(n_grid, &q_estimates);
    IntersectionCurve {
        n_grid: n_grid.to_vec(),
        q_estimates,
        fitted_slope: fit.slope,
        slope_std_error: fit.slope_std_error,
        replicates,
    }
}

fn fit_upper_half(n_grid: &[usize], estimates: &[EstimateWithCi]) -> SlopeFit {
    // suppress small-n transients but keep at least two points in the fit
    let from = (n_grid.len() / 2).min(n_grid.len().saturating_sub(2));
    let xs: Vec<f64> = n_grid[from..].iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = estimates[from..].iter().map(|e| e.value.ln()).collect();
    ols_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ProbVector, StepSupport};
    use crate::walk::Trajectory;

    fn traj(sites: Vec<Vec<i64>>) -> Trajectory {
        Trajectory::from_sites(sites, 0, 0).unwrap()
    }

    #[test]
    fn identical_paths_count_everything() {
        let a = traj((0..10).map(|k| vec![k, 0]).collect());
        assert_eq!(count_intersections(&a, &a.clone(), 10).unwrap(), 10);
    }

    #[test]
    fn divergent_rays_share_only_the_origin() {
        let a = traj((0..10).map(|k| vec![k, 0]).collect());
        let b = traj((0..10).map(|k| vec![0, k]).collect());
        assert_eq!(count_intersections(&a, &b, 10).unwrap(), 1);
    }

    #[test]
    fn revisits_do_not_inflate_the_count() {
        let a = traj(vec![vec![0, 0], vec![1, 0], vec![0, 0], vec![1, 0]]);
        let b = traj(vec![vec![0, 0], vec![1, 0], vec![2, 0], vec![3, 0]]);
        assert_eq!(count_intersections(&a, &b, 4).unwrap(), 2);
    }

    #[test]
    fn symmetric_in_the_pair() {
        let a = traj(vec![vec![0, 0], vec![1, 0], vec![1, 1], vec![1, 2]]);
        let b = traj(vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![2, 1]]);
        assert_eq!(
            count_intersections(&a, &b, 4).unwrap(),
            count_intersections(&b, &a, 4).unwrap()
        );
    }

    #[test]
    fn rejects_overlong_prefix() {
        let a = traj(vec![vec![0, 0], vec![1, 0]]);
        assert!(count_intersections(&a, &a.clone(), 3).is_err());
    }

    #[test]
    fn profile_matches_nested_loop_oracle() {
        use crate::rng::Stream;
        let mut stream = Stream::new(31);
        for _case in 0..50 {
            let len = 20 + (stream.next_u64() % 80) as usize;
            let mut mk = |seed_off: u64| {
                let mut s = Stream::new(stream.next_u64().wrapping_add(seed_off));
                let mut site = vec![0i64, 0];
                let mut sites = vec![site.clone()];
                for _ in 0..len {
                    let c = (s.next_u64() % 4) as usize;
                    match c {
                        0 => site[0] += 1,
                        1 => site[0] -= 1,
                        2 => site[1] += 1,
                        _ => site[1] -= 1,
                    }
                    sites.push(site.clone());
                }
                traj(sites)
            };
            let a = mk(1);
            let b = mk(2);
            for &n in &[1usize, len / 2 + 1, len + 1] {
                let fast = count_intersections(&a, &b, n).unwrap();
                // brute force: set intersection of the prefixes
                let sa: HashSet<Vec<i64>> = (0..n).map(|k| a.site(k).to_vec()).collect();
                let sb: HashSet<Vec<i64>> = (0..n).map(|k| b.site(k).to_vec()).collect();
                assert_eq!(fast, sa.intersection(&sb).count() as u64);
            }
        }
    }

    #[test]
    fn profile_is_nondecreasing_and_bounded() {
        use crate::env::DirichletParams;
        use crate::env::EnvironmentSpec;
        let spec =
            EnvironmentSpec::dirichlet(DirichletParams::new(2, vec![2.0, 0.5, 0.5, 0.5]).unwrap())
                .unwrap();
        let origin = vec![0i64, 0];
        let grid: Vec<usize> = vec![4, 8, 16, 32, 64];
        let (a, b) = simulate_pair(
            7,
            &spec,
            (&origin, &origin),
            64,
            (1, 2),
            PairMode::SharedEnvironment,
        )
        .unwrap();
        let profile = intersection_profile(&a, &b, &grid).unwrap();
        for w in profile.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for (q, n) in profile.iter().zip(&grid) {
            assert!(*q >= 1 && *q <= *n as u64);
        }
    }

    #[test]
    fn deterministic_environment_saturates_the_curve() {
        let support = StepSupport::nearest_neighbour(2);
        let mut probs = vec![0.0; 4];
        probs[0] = 1.0;
        let spec =
            EnvironmentSpec::deterministic(ProbVector::new(probs).unwrap(), support).unwrap();
        let grid = vec![8, 16, 32, 64];
        let curve = qn_curve(&spec, &grid, 40, 5, PairMode::SharedEnvironment).unwrap();
        for (est, n) in curve.q_estimates.iter().zip(&grid) {
            assert_eq!(est.value, *n as f64);
            assert_eq!(est.std_error, 0.0);
        }
        assert!((curve.fitted_slope - 1.0).abs() < 1e-9);
        assert!(curve.slope_std_error < 1e-9);
    }
}
