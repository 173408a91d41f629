//! Squared maximum mean discrepancy with a Gaussian kernel.
//!
//! The training loop needs `∂ MMD² / ∂X` for the encoded batch. Since the
//! autodiff primitive set has no `exp`, the gradient is computed in closed
//! form here and injected into the tape as a linear term.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream_rng};

/// Rows of a row-major sample matrix.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Samples<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        debug_assert!(dim > 0 && data.len() % dim == 0);
        Self { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(x: Samples, y: Samples, bandwidth: f64) -> Result<()> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::DegenerateBatch { m: x.len(), n: y.len() });
    }
    if x.dim != y.dim {
        return Err(Error::shape("mmd2", format!("dimensions {} and {}", x.dim, y.dim)));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(())
}

fn mean_kernel(a: Samples, b: Samples, inv_two_h2: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            s += (-sq_dist(a.row(i), b.row(j)) * inv_two_h2).exp();
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) MMD² with `k(a, b) = exp(-|a - b|² / (2 h²))`.
pub fn mmd2(x: Samples, y: Samples, bandwidth: f64) -> Result<f64> {
    check(x, y, bandwidth)?;
    let c = 1.0 / (2.0 * bandwidth * bandwidth);
    let v = mean_kernel(x, x, c) + mean_kernel(y, y, c) - 2.0 * mean_kernel(x, y, c);
    Ok(v.max(0.0))
}

/// MMD² and its gradient with respect to the rows of `x`.
pub fn mmd2_with_grad(x: Samples, y: Samples, bandwidth: f64) -> Result<(f64, Vec<f64>)> {
    check(x, y, bandwidth)?;
    let (m, n, d) = (x.len(), y.len(), x.dim);
    let h2 = bandwidth * bandwidth;
    let c = 1.0 / (2.0 * h2);
    let mut grad = vec![0.0; m * d];
    let (mut kxx, mut kxy) = (0.0, 0.0);
    let wxx = 2.0 / (m * m) as f64;
    let wxy = 2.0 / (m * n) as f64;
    for a in 0..m {
        let xa = x.row(a);
        let ga = &mut grad[a * d..(a + 1) * d];
        for j in 0..m {
            let xj = x.row(j);
            let k = (-sq_dist(xa, xj) * c).exp();
            kxx += k;
            // d/dx_a of k(x_a, x_j) = -k (x_a - x_j) / h², counted for both
            // (a, j) and (j, a).
            for t in 0..d {
                ga[t] -= wxx * k * (xa[t] - xj[t]) / h2;
            }
        }
        for j in 0..n {
            let yj = y.row(j);
            let k = (-sq_dist(xa, yj) * c).exp();
            kxy += k;
            for t in 0..d {
                ga[t] += wxy * k * (xa[t] - yj[t]) / h2;
            }
        }
    }
    let value = kxx / (m * m) as f64 + mean_kernel(y, y, c) - 2.0 * kxy / (m * n) as f64;
    Ok((value.max(0.0), grad))
}

/// Median pairwise distance over the union of both sets, floored.
pub fn median_bandwidth(x: Samples, y: Samples, floor: f64) -> f64 {
    let all: Vec<&[f64]> = (0..x.len()).map(|i| x.row(i)).chain((0..y.len()).map(|i| y.row(i))).collect();
    let mut dists = Vec::with_capacity(all.len() * all.len().saturating_sub(1) / 2);
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            dists.push(sq_dist(all[i], all[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return floor;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    median.max(floor)
}

/// MMD² under the median-heuristic bandwidth, with the exact gradient with
/// respect to `x`. The bandwidth is the distance between one particular
/// pair of points, so its dependence on `x` is included through that pair.
pub fn mmd2_median_with_grad(x: Samples, y: Samples, floor: f64) -> Result<Mmd2Eval> {
    let m = x.len();
    let point = |i: usize| if i < m { x.row(i) } else { y.row(i - m) };
    let total = m + y.len();
    let mut pairs = Vec::with_capacity(total * total.saturating_sub(1) / 2);
    for i in 0..total {
        for j in i + 1..total {
            pairs.push((sq_dist(point(i), point(j)).sqrt(), i, j));
        }
    }
    let median = if pairs.is_empty() {
        None
    } else {
        let mid = pairs.len() / 2;
        let (_, med, _) = pairs.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        Some(*med)
    };
    let h = median.map_or(floor, |p| p.0.max(floor));
    let (value, mut grad) = mmd2_with_grad(x, y, h)?;

    if let Some((dist, p, q)) = median {
        if dist > floor && p < m {
            // dMMD/dh: each kernel term contributes k d² / h³.
            let d = x.dim;
            let c = 1.0 / (2.0 * h * h);
            let term = |a: Samples, b: Samples| {
                let mut s = 0.0;
                for i in 0..a.len() {
                    for j in 0..b.len() {
                        let d2 = sq_dist(a.row(i), b.row(j));
                        s += (-d2 * c).exp() * d2;
                    }
                }
                s / (a.len() * b.len()) as f64 / (h * h * h)
            };
            let dh = term(x, x) + term(y, y) - 2.0 * term(x, y);
            let (a, b) = (point(p), point(q));
            for t in 0..d {
                let u = dh * (a[t] - b[t]) / dist;
                grad[p * d + t] += u;
                if q < m {
                    grad[q * d + t] -= u;
                }
            }
        }
    }
    Ok(Mmd2Eval { value, grad, bandwidth: h })
}

#[derive(Clone, Debug)]
pub struct Mmd2Eval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub bandwidth: f64,
}

/// `q`-quantile of MMD² between two independent `N(0, I_dim)` sets of sizes
/// `m` and `n` under the median-heuristic bandwidth.
pub fn mmd_null_quantile(m: usize, n: usize, dim: usize, q: f64, resamples: usize, seed: u64) -> Result<f64> {
    let mut stats: Vec<f64> = (0..resamples)
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let a = normal_vec(&mut rng, m * dim);
            let b = normal_vec(&mut rng, n * dim);
            let (sa, sb) = (Samples::new(&a, dim), Samples::new(&b, dim));
            mmd2(sa, sb, median_bandwidth(sa, sb, 1e-3))
        })
        .collect::<Result<_>>()?;
    stats.sort_by(|a, b| a.total_cmp(b));
    let idx = ((q * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    Ok(stats[idx])
}

pub(crate) fn standard_normal_batch<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Vec<f64> {
    normal_vec(rng, rows * dim)
}
