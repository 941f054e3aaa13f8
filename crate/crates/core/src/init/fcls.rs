//! Fully constrained least squares: `min ‖x − M·a‖²` subject to `a ≥ 0`,
//! `Σa = 1`, solved per pixel with a primal active-set method that keeps the
//! sum constraint exact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{AbundanceField, EndmemberMatrix, HyperCube};
use crate::error::Result;

/// Reusable solver for one endmember matrix.
#[derive(Debug, Clone)]
pub struct SimplexLeastSquares {
    gram: DMatrix<f64>,
    mt: DMatrix<f64>,
}

impl SimplexLeastSquares {
    pub fn new(m: &EndmemberMatrix) -> Self {
        let mt = m.matrix().transpose();
        let mut gram = &mt * m.matrix();
        let r = gram.nrows();
        // Tiny ridge keeps the reduced KKT systems solvable when endmembers
        // are (nearly) collinear.
        let ridge = 1e-12 * gram.trace().max(f64::MIN_POSITIVE) / r as f64;
        for i in 0..r {
            gram[(i, i)] += ridge;
        }
        Self { gram, mt }
    }

    /// Minimizes `½aᵀHa − fᵀa` over the simplex where `H = MᵀM`, `f = Mᵀx`.
    pub fn solve(&self, x: &[f64]) -> DVector<f64> {
        let f = &self.mt * DVector::from_column_slice(x);
        solve_simplex_qp(&self.gram, &f)
    }
}

fn solve_reduced(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    free: &[usize],
) -> Option<(DVector<f64>, f64)> {
    let k = free.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = h[(i, j)];
        }
        kkt[(a, k)] = -1.0;
        kkt[(k, a)] = 1.0;
        rhs[a] = f[i];
    }
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    Some((sol.rows(0, k).into_owned(), sol[k]))
}

pub(crate) fn solve_simplex_qp(h: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let r = f.len();
    let mut a = DVector::from_element(r, 1.0 / r as f64);
    let mut free = vec![true; r];
    let scale = h.amax().max(f.amax()).max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;
    for _ in 0..(20 * r + 50) {
        let idx: Vec<usize> = (0..r).filter(|&i| free[i]).collect();
        let Some((z, nu)) = solve_reduced(h, f, &idx) else {
            break;
        };
        let blocking = idx
            .iter()
            .enumerate()
            .filter(|&(k, &i)| z[k] < 0.0 && a[i] - z[k] > 0.0)
            .map(|(k, &i)| (i, a[i] / (a[i] - z[k])))
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        match blocking {
            None => {
                for (k, &i) in idx.iter().enumerate() {
                    a[i] = z[k].max(0.0);
                }
                let grad = h * &a - f;
                let entering = (0..r)
                    .filter(|&i| !free[i])
                    .map(|i| (i, grad[i] - nu))
                    .filter(|&(_, lam)| lam < -tol)
                    .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
                match entering {
                    Some((i, _)) => free[i] = true,
                    None => break,
                }
            }
            Some((blocker, t)) => {
                for (k, &i) in idx.iter().enumerate() {
                    a[i] += t * (z[k] - a[i]);
                }
                a[blocker] = 0.0;
                free[blocker] = false;
                for &i in &idx {
                    if a[i] < 0.0 {
                        a[i] = 0.0;
                    }
                }
            }
        }
    }
    // Remove rounding drift from the sum constraint.
    let s = a.sum();
    if s > 0.0 {
        a /= s;
    }
    a
}

/// Column-wise minimizer of `½aᵀHa − fᵀa` over the simplex for every
/// column of `f` (`R×N`).
pub fn simplex_qp_columns(h: &DMatrix<f64>, f: &DMatrix<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..f.ncols())
        .into_par_iter()
        .map(|j| solve_simplex_qp(h, &f.column(j).into_owned()))
        .collect();
    DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| cols[j][i])
}

/// FCLS abundances (`R×N`) for the `B×N` data matrix `x`.
pub fn fcls(x: &DMatrix<f64>, m: &EndmemberMatrix) -> DMatrix<f64> {
    let solver = SimplexLeastSquares::new(m);
    let r = m.count();
    let cols: Vec<DVector<f64>> = (0..x.ncols())
        .into_par_iter()
        .map(|j| solver.solve(x.column(j).as_slice()))
        .collect();
    DMatrix::from_fn(r, x.ncols(), |i, j| cols[j][i])
}

pub fn fcls_field(cube: &HyperCube, m: &EndmemberMatrix) -> Result<AbundanceField> {
    if cube.bands() != m.bands() {
        return Err(crate::error::UnmixError::Shape(format!(
            "cube has {} bands, endmembers have {}",
            cube.bands(),
            m.bands()
        )));
    }
    AbundanceField::new(cube.height(), cube.width(), fcls(&cube.to_matrix(), m))
}
