//! Steady-state heat (Laplace equation) on rectangles.
//!
//! Five-point finite differences on the structured rectangle grid with
//! Dirichlet data on all four sides. The interior system is symmetric
//! positive definite and banded (half-bandwidth `nx - 2`), so a banded
//! Cholesky factorisation solves it directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_rectangle_mesh, Field, Mesh};

/// Residual tolerance of the discrete equations (row-scaled to unit diagonal).
pub const HEAT_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatProblemSpec {
    pub length: f64,
    pub width: f64,
    pub bc_top: f64,
    pub bc_right: f64,
}

impl HeatProblemSpec {
    /// `(l, w) ~ U([0.1, 1]^2)`, `(top, right) ~ U([0.1, 1] x [0, 1])`;
    /// bottom and left stay at zero.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            length: rng.random_range(0.1..=1.0),
            width: rng.random_range(0.1..=1.0),
            bc_top: rng.random_range(0.1..=1.0),
            bc_right: rng.random_range(0.0..=1.0),
        }
    }

    /// Boundary value at grid vertex `(i, j)`. Left and bottom sides win at
    /// the corners they touch; the top-right corner takes the top value.
    pub fn boundary_value(&self, i: usize, j: usize, nx: usize, ny: usize) -> f64 {
        if i == 0 || j == 0 {
            0.0
        } else if j == ny - 1 {
            self.bc_top
        } else if i == nx - 1 {
            self.bc_right
        } else {
            0.0
        }
    }
}

pub fn solve_heat(spec: &HeatProblemSpec, nx: usize, ny: usize) -> Result<(Mesh, Field)> {
    solve_laplace_dirichlet(spec.length, spec.width, nx, ny, |i, j, _, _| {
        spec.boundary_value(i, j, nx, ny)
    })
}

/// Solves `Δu = 0` on `[0, l] x [0, w]` with boundary data `g(i, j, x, y)`.
pub fn solve_laplace_dirichlet<G>(l: f64, w: f64, nx: usize, ny: usize, g: G) -> Result<(Mesh, Field)>
where
    G: Fn(usize, usize, f64, f64) -> f64,
{
    if nx < 3 || ny < 3 {
        return Err(Error::DegenerateDimension(format!("heat grid {nx} x {ny} needs >= 3 per side")));
    }
    let mesh = build_rectangle_mesh(l, w, nx, ny)?;
    let hx = l / (nx - 1) as f64;
    let hy = w / (ny - 1) as f64;
    // Row-scaled stencil: (2 + 2r) u_c - (u_e + u_w) - r (u_n + u_s) = 0.
    let r = (hx * hx) / (hy * hy);
    let diag = 2.0 + 2.0 * r;

    let mut u = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                let c = mesh.coord(j * nx + i);
                u[j * nx + i] = g(i, j, c[0], c[1]);
            }
        }
    }

    let mx = nx - 2;
    let my = ny - 2;
    let n = mx * my;
    let idx = |i: usize, j: usize| (j - 1) * mx + (i - 1);

    let mut rhs = vec![0.0; n];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let mut b = 0.0;
            if i == 1 {
                b += u[j * nx];
            }
            if i == nx - 2 {
                b += u[j * nx + nx - 1];
            }
            if j == 1 {
                b += r * u[i];
            }
            if j == ny - 2 {
                b += r * u[(ny - 1) * nx + i];
            }
            rhs[idx(i, j)] = b;
        }
    }

    let mut band = BandedSpd::new(n, mx);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = idx(i, j);
            band.set(k, k, diag);
            if i > 1 {
                band.set(k, k - 1, -1.0);
            }
            if j > 1 {
                band.set(k, k - mx, -r);
            }
        }
    }
    band.factor()?;
    let sol = band.solve(&rhs);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            u[j * nx + i] = sol[idx(i, j)];
        }
    }

    let scale = u.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut resid = 0.0f64;
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let c = j * nx + i;
            let lap = diag * u[c] - u[c - 1] - u[c + 1] - r * (u[c - nx] + u[c + nx]);
            resid = resid.max((lap / diag).abs());
        }
    }
    if !(resid <= HEAT_RESIDUAL_TOL * scale) {
        return Err(Error::Solver(format!("heat residual {resid:e} above tolerance")));
    }
    Ok((mesh, Field::unnamed(nx * ny, 1, u)?))
}

/// Symmetric positive-definite band matrix stored as lower diagonals,
/// factorised in place as `L Lᵀ`.
struct BandedSpd {
    n: usize,
    bw: usize,
    // data[i * (bw + 1) + (i - j)] = A[i][j] for i - bw <= j <= i
    data: Vec<f64>,
}

impl BandedSpd {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (i - j)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.at(i, j);
        self.data[k] = v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if i < j || i - j > self.bw {
            0.0
        } else {
            self.data[self.at(i, j)]
        }
    }

    fn factor(&mut self) -> Result<()> {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let jlo = lo.max(j.saturating_sub(self.bw));
                let mut s = self.get(i, j);
                for k in jlo..j {
                    s -= self.get(i, k) * self.get(j, k);
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Solver(format!("banded Cholesky pivot {s:e} at row {i}")));
                    }
                    self.set(i, i, s.sqrt());
                } else {
                    let d = self.get(j, j);
                    self.set(i, j, s / d);
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.get(i, k) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let hi = (i + self.bw).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.get(k, i) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine_top_error(n: usize) -> f64 {
        let (l, w) = (1.0, 1.0);
        let (mesh, field) = solve_laplace_dirichlet(l, w, n, n, |_, j, x, _| {
            if j == n - 1 {
                (PI * x / l).sin()
            } else {
                0.0
            }
        })
        .unwrap();
        (0..mesh.n_nodes())
            .map(|k| {
                let c = mesh.coord(k);
                let exact = (PI * c[0] / l).sin() * (PI * c[1] / l).sinh() / (PI * w / l).sinh();
                (field.get(k, 0) - exact).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_boundary_gives_zero() {
        let spec = HeatProblemSpec {
            length: 0.5,
            width: 0.3,
            bc_top: 0.0,
            bc_right: 0.0,
        };
        let (_, f) = solve_heat(&spec, 9, 7).unwrap();
        assert!(f.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn maximum_principle() {
        let spec = HeatProblemSpec {
            length: 0.8,
            width: 0.2,
            bc_top: 0.9,
            bc_right: 0.4,
        };
        let (_, f) = solve_heat(&spec, 17, 11).unwrap();
        assert!(f.values().iter().all(|&x| (0.0..=0.9).contains(&x)));
    }

    #[test]
    fn separation_of_variables_oracle() {
        assert!(sine_top_error(64) <= 1e-3);
    }

    #[test]
    fn second_order_convergence() {
        let errs: Vec<f64> = [17, 33, 65].iter().map(|&n| sine_top_error(n)).collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.8, "order {order} from {errs:?}");
        }
    }

    #[test]
    fn tiny_grid_rejected() {
        let spec = HeatProblemSpec {
            length: 1.0,
            width: 1.0,
            bc_top: 1.0,
            bc_right: 1.0,
        };
        assert!(solve_heat(&spec, 2, 5).is_err());
    }

    #[test]
    fn banded_solver_matches_dense() {
        // 1-D Poisson matrix, band 1.
        let n = 6;
        let mut b = BandedSpd::new(n, 1);
        for i in 0..n {
            b.set(i, i, 2.0);
            if i > 0 {
                b.set(i, i - 1, -1.0);
            }
        }
        b.factor().unwrap();
        let x = b.solve(&[1.0; 6]);
        // Exact: x_i = (i+1)(n-i)/2
        for (i, xi) in x.iter().enumerate() {
            let want = ((i + 1) * (n - i)) as f64 / 2.0;
            assert!((xi - want).abs() < 1e-12);
        }
    }
}
