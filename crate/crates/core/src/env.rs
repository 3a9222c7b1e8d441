//! Random environments on the lattice.
//!
//! An environment assigns to every lattice site a probability vector over a
//! fixed step support; sites are independent and identically distributed. The
//! environment is never stored: [`QuenchedEnvironment::prob_at`] realizes the
//! vector at a site as a pure function of (environment seed, site), so any
//! number of walkers see the same environment without coordination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix2, mix64, Stream};

/// Lattice point with integer coordinates.
pub type Point = Vec<i64>;

pub fn sup_norm(p: &[i64]) -> i64 {
    p.iter().map(|c| c.abs()).max().unwrap_or(0)
}

pub fn point_sub(a: &[i64], b: &[i64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn point_add(a: &[i64], b: &[i64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const SITE_DOMAIN: u64 = 0x77_65_6e_76_5f_73_69_74; // domain tag for site streams
const MIXTURE_DOMAIN: u64 = 0x6d_69_78_5f_70_69_63;

/// Ordered list of admissible lattice steps.
///
/// The order is part of the contract: probability vectors are aligned with it
/// and stepping uses inverse-CDF selection over it, which keeps trajectories
/// bit-reproducible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSupport {
    steps: Vec<Point>,
    radius_r0: i64,
}

impl StepSupport {
    /// Validates distinctness, a finite positive radius and richness: the
    /// steps must not all lie on one line through the origin (which also
    /// rules out supports of the shape {0, z}).
    pub fn new(steps: Vec<Point>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidInput("step support is empty".into()));
        }
        let dim = steps[0].len();
        if dim == 0 || steps.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidInput(
                "steps must share a positive dimension".into(),
            ));
        }
        for i in 0..steps.len() {
            for j in (i + 1)..steps.len() {
                if steps[i] == steps[j] {
                    return Err(Error::InvalidInput(format!(
                        "duplicate step {:?}",
                        steps[i]
                    )));
                }
            }
        }
        let radius_r0 = steps.iter().map(|s| sup_norm(s)).max().unwrap();
        if radius_r0 < 1 {
            return Err(Error::InvalidInput(
                "support must contain a nonzero step".into(),
            ));
        }
        if !Self::spans_two_directions(&steps) {
            return Err(Error::InvalidInput(
                "steps are contained in a single line through the origin".into(),
            ));
        }
        Ok(StepSupport { steps, radius_r0 })
    }

    /// 2d nearest-neighbour steps ordered (e_1, ..., e_d, -e_1, ..., -e_d).
    pub fn nearest_neighbour(dim: usize) -> Self {
        let mut steps = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut e = vec![0i64; dim];
            e[i] = 1;
            steps.push(e);
        }
        for i in 0..dim {
            let mut e = vec![0i64; dim];
            e[i] = -1;
            steps.push(e);
        }
        StepSupport {
            steps,
            radius_r0: 1,
        }
    }

    fn spans_two_directions(steps: &[Point]) -> bool {
        let nonzero: Vec<&Point> = steps.iter().filter(|s| sup_norm(s) > 0).collect();
        let Some(first) = nonzero.first() else {
            return false;
        };
        nonzero.iter().any(|s| {
            // s parallel to first iff all 2x2 minors vanish
            let dim = s.len();
            (0..dim).any(|i| (i + 1..dim).any(|j| s[i] * first[j] != s[j] * first[i]))
        })
    }

    pub fn steps(&self) -> &[Point] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.steps[0].len()
    }

    pub fn radius_r0(&self) -> i64 {
        self.radius_r0
    }
}

/// Probability vector aligned with a step support.
///
/// Construction renormalizes sums within 1e-9 of one and rejects anything
/// further off; large defects are sampler bugs, not rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if raw.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "probability entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probability vector sums to {sum}, outside the 1e-9 tolerance"
            )));
        }
        let probs = raw.into_iter().map(|p| p / sum).collect();
        Ok(ProbVector { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Dirichlet weights over the 2d nearest-neighbour steps, in the order
/// (e_1, ..., e_d, -e_1, ..., -e_d): index i+d is the negation of index i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    dimension: usize,
    alphas: Vec<f64>,
}

impl DirichletParams {
    pub fn new(dimension: usize, alphas: Vec<f64>) -> Result<Self> {
        if dimension < 2 {
            return Err(Error::InvalidInput("dimension must be at least 2".into()));
        }
        if alphas.len() != 2 * dimension {
            return Err(Error::InvalidInput(format!(
                "expected {} weights, got {}",
                2 * dimension,
                alphas.len()
            )));
        }
        if alphas.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::InvalidInput(
                "all weights must be strictly positive".into(),
            ));
        }
        Ok(DirichletParams { dimension, alphas })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sum(&self) -> f64 {
        self.alphas.iter().sum()
    }
}

/// kappa = 2 * sum(alpha) - max_i (alpha_i + alpha_{i+d}).
///
/// Governs which polynomial moments of the first regeneration time are finite
/// for Dirichlet environments: the p-th moment is finite whenever kappa > p.
pub fn kappa(params: &DirichletParams) -> f64 {
    let d = params.dimension();
    let a = params.alphas();
    let max_pair = (0..d)
        .map(|i| a[i] + a[i + d])
        .fold(f64::NEG_INFINITY, f64::max);
    2.0 * params.sum() - max_pair
}

/// Sufficient ballisticity criterion: sum_i |alpha_i - alpha_{i+d}| > 1.
pub fn t_gamma_sufficient(params: &DirichletParams) -> bool {
    let d = params.dimension();
    let a = params.alphas();
    let asym: f64 = (0..d).map(|i| (a[i] - a[i + d]).abs()).sum();
    asym > 1.0
}

/// Draw from Dirichlet(alphas) by normalizing independent Gamma draws.
///
/// All-zero Gamma sums (possible underflow for tiny weights) are resampled;
/// one hundred consecutive failures signal a sampling error.
pub fn sample_dirichlet(params: &DirichletParams, stream: &mut Stream) -> Result<ProbVector> {
    let k = params.alphas().len();
    let mut draws = vec![0.0f64; k];
    for _attempt in 0..100 {
        let mut sum = 0.0;
        let mut ok = true;
        for (slot, &alpha) in draws.iter_mut().zip(params.alphas()) {
            let g = stream.gamma(alpha);
            if !g.is_finite() {
                ok = false;
                break;
            }
            *slot = g;
            sum += g;
        }
        if ok && sum > 0.0 && sum.is_finite() {
            return ProbVector::new(draws.iter().map(|g| g / sum).collect());
        }
    }
    Err(Error::Sampling(format!(
        "dirichlet draw failed after 100 attempts (alphas {:?})",
        params.alphas()
    )))
}

/// Site-vector law of an i.i.d. environment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum EnvironmentKind {
    /// Dirichlet(alphas) over the 2d nearest-neighbour steps.
    Dirichlet(DirichletParams),
    /// Finite mixture of fixed vectors with the given weights.
    FiniteMixture(Vec<(ProbVector, f64)>),
    /// The same fixed vector at every site.
    Deterministic(ProbVector),
}

/// Environment distribution together with its step support.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    kind: EnvironmentKind,
    support: StepSupport,
}

impl EnvironmentSpec {
    pub fn new(kind: EnvironmentKind, support: StepSupport) -> Result<Self> {
        match &kind {
            EnvironmentKind::Dirichlet(params) => {
                let nn = StepSupport::nearest_neighbour(params.dimension());
                if support != nn {
                    return Err(Error::InvalidInput(
                        "dirichlet environments require the nearest-neighbour support \
                         (e_1..e_d, -e_1..-e_d)"
                            .into(),
                    ));
                }
            }
            EnvironmentKind::FiniteMixture(components) => {
                if components.is_empty() {
                    return Err(Error::InvalidInput("mixture has no components".into()));
                }
                for (vector, weight) in components {
                    if vector.len() != support.len() {
                        return Err(Error::InvalidInput(
                            "mixture component not aligned with the step support".into(),
                        ));
                    }
                    if !weight.is_finite() || *weight < 0.0 {
                        return Err(Error::InvalidInput("mixture weight must be >= 0".into()));
                    }
                }
                let total: f64 = components.iter().map(|(_, w)| w).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "mixture weights sum to {total}, expected 1 within 1e-12"
                    )));
                }
            }
            EnvironmentKind::Deterministic(vector) => {
                if vector.len() != support.len() {
                    return Err(Error::InvalidInput(
                        "vector not aligned with the step support".into(),
                    ));
                }
            }
        }
        Ok(EnvironmentSpec { kind, support })
    }

    pub fn dirichlet(params: DirichletParams) -> Result<Self> {
        let support = StepSupport::nearest_neighbour(params.dimension());
        EnvironmentSpec::new(EnvironmentKind::Dirichlet(params), support)
    }

    pub fn deterministic(vector: ProbVector, support: StepSupport) -> Result<Self> {
        EnvironmentSpec::new(EnvironmentKind::Deterministic(vector), support)
    }

    pub fn kind(&self) -> &EnvironmentKind {
        &self.kind
    }

    pub fn support(&self) -> &StepSupport {
        &self.support
    }
}

/// One realized environment: a seed plus a distribution.
///
/// `prob_at` is pure in (seed, site) and order-independent, so clones and
/// concurrent readers agree everywhere without synchronization.
#[derive(Clone, Debug)]
pub struct QuenchedEnvironment {
    env_seed: u64,
    spec: EnvironmentSpec,
}

impl QuenchedEnvironment {
    pub fn new(env_seed: u64, spec: EnvironmentSpec) -> Self {
        QuenchedEnvironment { env_seed, spec }
    }

    pub fn env_seed(&self) -> u64 {
        self.env_seed
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn support(&self) -> &StepSupport {
        self.spec.support()
    }

    fn site_stream(&self, site: &[i64]) -> Stream {
        let mut h = mix2(self.env_seed, SITE_DOMAIN);
        for &c in site {
            h = mix64(h ^ (c as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        }
        Stream::new(h)
    }

    /// The step-probability vector the environment assigns to `site`.
    ///
    /// Panics only if the underlying Dirichlet sampler exhausts its retry
    /// budget, which requires pathological weights far outside the domain
    /// this crate targets.
    pub fn prob_at(&self, site: &[i64]) -> ProbVector {
        assert_eq!(
            site.len(),
            self.spec.support().dim(),
            "site dimension mismatch"
        );
        match self.spec.kind() {
            EnvironmentKind::Deterministic(vector) => vector.clone(),
            EnvironmentKind::Dirichlet(params) => {
                let mut stream = self.site_stream(site);
                sample_dirichlet(params, &mut stream).expect("dirichlet site draw")
            }
            EnvironmentKind::FiniteMixture(components) => {
                let mut stream = self.site_stream(site);
                stream.next_u64(); // keep the pick decoupled from the site key
                let u = Stream::new(mix2(stream.next_u64(), MIXTURE_DOMAIN)).next_f64();
                let mut cum = 0.0;
                for (vector, weight) in components {
                    cum += weight;
                    if u < cum {
                        return vector.clone();
                    }
                }
                components.last().expect("nonempty mixture").0.clone()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, Running};

    fn d2_params(alphas: [f64; 4]) -> DirichletParams {
        DirichletParams::new(2, alphas.to_vec()).unwrap()
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(&d2_params([2.0, 1.0, 1.0, 1.0])), 7.0);
        assert_eq!(kappa(&d2_params([1.0, 1.0, 1.0, 1.0])), 6.0);
        let k = kappa(&d2_params([1.5, 0.1, 0.3, 0.1]));
        assert!((k - 2.2).abs() < 1e-12);
    }

    #[test]
    fn ballisticity_criterion_values() {
        assert!(t_gamma_sufficient(&d2_params([2.0, 0.5, 0.5, 0.5])));
        assert!(!t_gamma_sufficient(&d2_params([1.0, 1.0, 1.0, 1.0])));
        assert!(t_gamma_sufficient(&d2_params([1.5, 0.1, 0.3, 0.1])));
        // boundary: sum of asymmetries exactly 1 is not enough
        assert!(!t_gamma_sufficient(&d2_params([2.0, 1.0, 1.0, 1.0])));
    }

    #[test]
    fn kappa_and_criterion_invariant_under_axis_swap() {
        // swapping alpha_i <-> alpha_{i+d} changes neither statistic
        let a = d2_params([1.7, 0.2, 0.4, 0.9]);
        let swapped = d2_params([0.4, 0.9, 1.7, 0.2]);
        assert!((kappa(&a) - kappa(&swapped)).abs() < 1e-12);
        assert_eq!(t_gamma_sufficient(&a), t_gamma_sufficient(&swapped));
    }

    #[test]
    fn dirichlet_draws_live_on_the_simplex() {
        let params = d2_params([2.0, 1.0, 1.0, 1.0]);
        let mut stream = Stream::new(9);
        for _ in 0..1000 {
            let v = sample_dirichlet(&params, &mut stream).unwrap();
            let sum: f64 = v.probs().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(v.probs().iter().all(|p| *p > 0.0 && *p < 1.0));
        }
    }

    #[test]
    fn dirichlet_symmetric_means() {
        let params = d2_params([1.0, 1.0, 1.0, 1.0]);
        let mut stream = Stream::new(100);
        let n = 100_000;
        let mut acc = vec![Running::new(); 4];
        for _ in 0..n {
            let v = sample_dirichlet(&params, &mut stream).unwrap();
            for (a, p) in acc.iter_mut().zip(v.probs()) {
                a.push(*p);
            }
        }
        for a in &acc {
            let se = (a.variance() / n as f64).sqrt();
            assert!((a.mean() - 0.25).abs() < 3.0 * se, "mean {}", a.mean());
        }
    }

    #[test]
    fn dirichlet_moments_match_closed_forms() {
        // Mean alpha_i / s and variance alpha_i (s - alpha_i) / (s^2 (s + 1)),
        // cross-checked against a plain gamma-normalization resampler on a
        // separate stream.
        let params = d2_params([2.0, 1.0, 1.0, 1.0]);
        let s = params.sum();
        let mut stream = Stream::new(101);
        let mut brute = Stream::new(202);
        let n = 100_000;
        let mut acc = [Running::new(); 4];
        let mut brute_acc = [Running::new(); 4];
        for _ in 0..n {
            let v = sample_dirichlet(&params, &mut stream).unwrap();
            for (a, p) in acc.iter_mut().zip(v.probs()) {
                a.push(*p);
            }
            let draws: Vec<f64> = params.alphas().iter().map(|&al| brute.gamma(al)).collect();
            let total: f64 = draws.iter().sum();
            for (a, g) in brute_acc.iter_mut().zip(&draws) {
                a.push(g / total);
            }
        }
        for (i, a) in acc.iter().enumerate() {
            let alpha = params.alphas()[i];
            let want_mean = alpha / s;
            let want_var = alpha * (s - alpha) / (s * s * (s + 1.0));
            let se = (a.variance() / n as f64).sqrt();
            assert!((a.mean() - want_mean).abs() < 3.0 * se);
            assert!((a.variance() - want_var).abs() < 5.0 * want_var / (n as f64).sqrt() * 3.0);
            let bse = (brute_acc[i].variance() / n as f64).sqrt();
            assert!((brute_acc[i].mean() - want_mean).abs() < 3.0 * bse);
        }
    }

    #[test]
    fn environment_queries_are_pure_and_order_independent() {
        let spec = EnvironmentSpec::dirichlet(d2_params([2.0, 1.0, 1.0, 1.0])).unwrap();
        let env = QuenchedEnvironment::new(77, spec.clone());
        let sites: Vec<Point> = (0..50).map(|k| vec![k % 7 - 3, k / 7]).collect();
        let forward: Vec<ProbVector> = sites.iter().map(|s| env.prob_at(s)).collect();
        let env_again = QuenchedEnvironment::new(77, spec);
        for (k, site) in sites.iter().enumerate().rev() {
            assert_eq!(env_again.prob_at(site), forward[k]);
        }
    }

    #[test]
    fn deterministic_spec_returns_its_vector_everywhere() {
        let support = StepSupport::nearest_neighbour(2);
        let p = ProbVector::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let spec = EnvironmentSpec::deterministic(p.clone(), support).unwrap();
        let env = QuenchedEnvironment::new(5, spec);
        for site in [vec![0, 0], vec![3, -9], vec![-100, 41]] {
            assert_eq!(env.prob_at(&site), p);
        }
    }

    #[test]
    fn different_seeds_give_uncorrelated_fields() {
        let spec = EnvironmentSpec::dirichlet(d2_params([1.0, 1.0, 1.0, 1.0])).unwrap();
        let a = QuenchedEnvironment::new(1, spec.clone());
        let b = QuenchedEnvironment::new(2, spec);
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|k| a.prob_at(&[k, 0]).probs()[0]).collect();
        let ys: Vec<f64> = (0..n).map(|k| b.prob_at(&[k, 0]).probs()[0]).collect();
        let mx = mean(&xs);
        let my = mean(&ys);
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            cov += (x - mx) * (y - my);
            vx += (x - mx) * (x - mx);
            vy += (y - my) * (y - my);
        }
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let support = StepSupport::nearest_neighbour(2);
        let p = ProbVector::new(vec![0.25; 4]).unwrap();
        let bad = EnvironmentSpec::new(
            EnvironmentKind::FiniteMixture(vec![(p.clone(), 0.6), (p, 0.5)]),
            support,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn prob_vector_rejects_large_defects_and_renormalizes_small_ones() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![0.5, -0.1, 0.6]).is_err());
        let nearly = ProbVector::new(vec![0.5 + 4e-10, 0.5]).unwrap();
        let sum: f64 = nearly.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn subnormal_weights_exhaust_the_sampler() {
        // every gamma draw underflows to zero, so the normalizing sum stays
        // zero and the retry budget runs out
        let params = DirichletParams::new(2, vec![5e-324; 4]).unwrap();
        let mut stream = Stream::new(1);
        match sample_dirichlet(&params, &mut stream) {
            Err(Error::Sampling(_)) => {}
            other => panic!("expected a sampling error, got {other:?}"),
        }
    }

    #[test]
    fn support_rejects_degenerate_sets() {
        assert!(StepSupport::new(vec![vec![1, 0], vec![2, 0], vec![-1, 0]]).is_err());
        assert!(StepSupport::new(vec![vec![0, 0], vec![1, 1]]).is_err());
        assert!(StepSupport::new(vec![vec![1, 0], vec![1, 0]]).is_err());
        assert!(StepSupport::new(vec![vec![1, 0], vec![0, 1]]).is_ok());
    }
}
