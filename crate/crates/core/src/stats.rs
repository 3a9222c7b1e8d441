//! Small statistical toolkit shared by the estimators and diagnostics.

use serde::{Deserialize, Serialize};

use crate::rng::Stream;

/// Monte Carlo point estimate with its standard error and replication count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCi {
    pub value: f64,
    pub std_error: f64,
    pub n: u64,
}

impl EstimateWithCi {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mut acc = Running::new();
        for &x in xs {
            acc.push(x);
        }
        EstimateWithCi {
            value: acc.mean(),
            std_error: if n > 1 {
                (acc.variance() / n as f64).sqrt()
            } else {
                0.0
            },
            n: n as u64,
        }
    }
}

/// Welford accumulator for mean and sample variance.
#[derive(Clone, Copy, Debug, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn new() -> Self {
        Running::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let mut acc = Running::new();
    for &x in xs {
        acc.push(x);
    }
    acc.variance()
}

/// Standardized third and fourth sample moments: (skewness, excess kurtosis).
pub fn skewness_excess_kurtosis(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in xs {
        let d = x - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return (0.0, 0.0);
    }
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Error function, Abramowitz-Stegun 7.1.26 (|error| < 1.5e-7).
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Kolmogorov-Smirnov distance between the sample and the normal law fitted
/// to its mean and standard deviation.
pub fn ks_distance_to_fitted_normal(xs: &[f64]) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    let sd = sample_variance(xs).sqrt();
    if sd == 0.0 || n == 0 {
        return 1.0;
    }
    let mut sorted: Vec<f64> = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf((x - m) / sd);
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        sup = sup.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    sup
}

/// Ordinary least squares fit y = intercept + slope * x.
#[derive(Clone, Copy, Debug)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

pub fn ols_slope(xs: &[f64], ys: &[f64]) -> SlopeFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - intercept - slope * x;
        rss += r * r;
    }
    let dof = (n - 2.0).max(1.0);
    SlopeFit {
        slope,
        intercept,
        slope_std_error: (rss / dof / sxx).sqrt(),
    }
}

/// Bootstrap standard error of a statistic of n exchangeable units.
///
/// `stat` receives a resampled multiset of unit indices.
pub fn bootstrap_std_error<F>(n: usize, resamples: usize, stream: &mut Stream, stat: F) -> f64
where
    F: Fn(&[usize]) -> f64,
{
    if n < 2 {
        return 0.0;
    }
    let mut acc = Running::new();
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for slot in idx.iter_mut() {
            *slot = stream.next_below(n as u64) as usize;
        }
        acc.push(stat(&idx));
    }
    acc.variance().sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigenvalues(matrix: &[Vec<f64>]) -> Vec<f64> {
    let d = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("non-finite eigenvalue"));
    eig
}

pub fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}
