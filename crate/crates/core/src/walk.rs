//! Quenched random walks: a single walk in one environment, and pairs of
//! independent walks driven by a shared or by independent environments.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{point_add, Point, ProbVector, QuenchedEnvironment};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, mix2, Stream};

const WALK_DOMAIN: u64 = 0x77_61_6c_6b_5f_72_6e_67;

/// Finite lattice path with the seeds that produced it.
///
/// Sites are stored flat ((steps + 1) * dim coordinates); every increment
/// belongs to the generating step support by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    dim: usize,
    flat: Vec<i64>,
    env_seed: u64,
    walk_seed: u64,
}

impl Trajectory {
    pub fn from_sites(sites: Vec<Point>, env_seed: u64, walk_seed: u64) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidInput(
                "trajectory needs at least one site".into(),
            ));
        }
        let dim = sites[0].len();
        if sites.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidInput("inconsistent site dimension".into()));
        }
        let mut flat = Vec::with_capacity(sites.len() * dim);
        for s in &sites {
            flat.extend_from_slice(s);
        }
        Ok(Trajectory {
            dim,
            flat,
            env_seed,
            walk_seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps (sites minus one).
    pub fn len(&self) -> usize {
        self.n_sites() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_sites(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn site(&self, k: usize) -> &[i64] {
        &self.flat[k * self.dim..(k + 1) * self.dim]
    }

    pub fn start(&self) -> &[i64] {
        self.site(0)
    }

    pub fn sites(&self) -> impl Iterator<Item = &[i64]> {
        self.flat.chunks(self.dim)
    }

    pub fn env_seed(&self) -> u64 {
        self.env_seed
    }

    pub fn walk_seed(&self) -> u64 {
        self.walk_seed
    }
}

/// How the two walks of a pair share randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Both walks read the same environment realization.
    SharedEnvironment,
    /// The second walk lives in an independently seeded environment.
    IndependentEnvironments,
}

/// One step from `site`: a displacement drawn from the environment's vector
/// by inverse CDF over the fixed step ordering.
pub fn step(env: &QuenchedEnvironment, site: &[i64], stream: &mut Stream) -> Point {
    let vector = env.prob_at(site);
    let idx = select_step(&vector, stream);
    point_add(site, &env.support().steps()[idx])
}

#[inline]
pub(crate) fn select_step(vector: &ProbVector, stream: &mut Stream) -> usize {
    let u = stream.next_f64();
    let mut cum = 0.0;
    for (i, p) in vector.probs().iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    vector.len() - 1
}

/// Memo for site vectors; purity of the field makes the cache exact.
struct SiteCache<'a> {
    env: &'a QuenchedEnvironment,
    map: HashMap<Point, ProbVector>,
}

impl<'a> SiteCache<'a> {
    fn new(env: &'a QuenchedEnvironment) -> Self {
        SiteCache {
            env,
            map: HashMap::new(),
        }
    }

    fn get(&mut self, site: &[i64]) -> &ProbVector {
        if !self.map.contains_key(site) {
            let v = self.env.prob_at(site);
            self.map.insert(site.to_vec(), v);
        }
        self.map.get(site).expect("just inserted")
    }
}

pub(crate) fn walk_stream(walk_seed: u64) -> Stream {
    Stream::new(mix2(walk_seed, WALK_DOMAIN))
}

/// Simulates `n_steps` of the walk started at `start` in the given
/// environment. Fully reproducible from (env_seed, walk_seed, start, n_steps).
pub fn simulate(
    env: &QuenchedEnvironment,
    start: &[i64],
    n_steps: usize,
    walk_seed: u64,
) -> Trajectory {
    let dim = env.support().dim();
    assert_eq!(start.len(), dim, "start dimension mismatch");
    let mut stream = walk_stream(walk_seed);
    let mut cache = SiteCache::new(env);
    let steps = env.support().steps();
    let mut flat = Vec::with_capacity((n_steps + 1) * dim);
    flat.extend_from_slice(start);
    let mut current = start.to_vec();
    for _ in 0..n_steps {
        let idx = select_step(cache.get(&current), &mut stream);
        for (c, z) in current.iter_mut().zip(&steps[idx]) {
            *c += z;
        }
        flat.extend_from_slice(&current);
    }
    Trajectory {
        dim,
        flat,
        env_seed: env.env_seed(),
        walk_seed,
    }
}

/// Simulates a pair of walks with independent step randomness.
///
/// Identical walk seeds are rejected: they would silently couple the pair.
pub fn simulate_pair(
    env_seed: u64,
    spec: &crate::env::EnvironmentSpec,
    starts: (&[i64], &[i64]),
    n_steps: usize,
    walk_seeds: (u64, u64),
    mode: PairMode,
) -> Result<(Trajectory, Trajectory)> {
    if walk_seeds.0 == walk_seeds.1 {
        return Err(Error::InvalidInput(
            "walk seeds of a pair must be distinct".into(),
        ));
    }
    let env_a = QuenchedEnvironment::new(env_seed, spec.clone());
    let env_b = match mode {
        PairMode::SharedEnvironment => env_a.clone(),
        PairMode::IndependentEnvironments => {
            QuenchedEnvironment::new(derive_seed(env_seed, "pair-env", 1), spec.clone())
        }
    };
    let a = simulate(&env_a, starts.0, n_steps, walk_seeds.0);
    let b = simulate(&env_b, starts.1, n_steps, walk_seeds.1);
    Ok((a, b))
}

/// Dumps a trajectory as JSONL, one record per step: {"t": k, "x": [coords]}.
pub fn write_steps_jsonl<W: Write>(traj: &Trajectory, out: &mut W) -> Result<()> {
    for (t, site) in traj.sites().enumerate() {
        let record = serde_json::json!({ "t": t, "x": site });
        writeln!(out, "{record}")?;
    }
    Ok(())
}
