//! Vertex component analysis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::EndmemberMatrix;
use crate::error::{Result, UnmixError};

/// Leading `d` eigenvectors (as columns, descending eigenvalue) and all
/// eigenvalues sorted descending.
fn leading_eigvecs(cov: DMatrix<f64>, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), d, |i, j| {
        eig.eigenvectors[(i, order[j])]
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (vecs, vals)
}

/// Index of the largest `|v|`, lowest index on ties.
fn argmax_abs(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x.abs() > best.1 {
            best = (i, x.abs());
        }
    }
    best.0
}

/// Extracts `count` endmembers from the `B×N` data matrix `x`.
///
/// The data are projected onto a `count`-dimensional subspace (projective
/// projection when the estimated SNR exceeds `15 + 10·log10(count)` dB,
/// affine otherwise), then pixels are picked one at a time as the extreme
/// projection onto a random direction orthogonal to the ones already chosen.
/// The returned columns are the selected pixels of `x`.
pub fn vca(x: &DMatrix<f64>, count: usize, seed: u64) -> Result<EndmemberMatrix> {
    let (b, n) = x.shape();
    if count == 0 || count > b.min(n) {
        return Err(UnmixError::InvalidParameter(format!(
            "endmember count {count} must be in 1..={}",
            b.min(n)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(UnmixError::InvalidParameter(
            "data contain non-finite values".into(),
        ));
    }
    let nf = n as f64;
    let corr = x * x.transpose() / nf;
    let (_, corr_vals) = leading_eigvecs(corr.clone(), 0);
    let top = corr_vals[0].max(0.0);
    let tol = top * 1e-10 * b as f64;
    let rank = corr_vals.iter().filter(|&&v| v > tol).count();
    if top == 0.0 || rank < count {
        return Err(UnmixError::Degenerate(format!(
            "data rank {rank} is below the requested {count} endmembers"
        )));
    }

    if count == 1 {
        let (u, _) = leading_eigvecs(corr, 1);
        let proj = u.column(0).transpose() * x;
        let idx = argmax_abs(proj.iter().copied());
        return EndmemberMatrix::new(x.columns(idx, 1).into_owned());
    }

    let mean: DVector<f64> = x.column_mean();
    let centered = DMatrix::from_fn(b, n, |i, j| x[(i, j)] - mean[i]);
    let (ud, _) = leading_eigvecs(&centered * centered.transpose() / nf, count);
    let xp = ud.transpose() * &centered;
    let p_y = x.norm_squared() / nf;
    let p_x = xp.norm_squared() / nf + mean.norm_squared();
    let snr = if p_y - p_x <= 0.0 {
        f64::INFINITY
    } else {
        let num = p_x - count as f64 / b as f64 * p_y;
        if num <= 0.0 {
            f64::NEG_INFINITY
        } else {
            10.0 * (num / (p_y - p_x)).log10()
        }
    };
    let snr_threshold = 15.0 + 10.0 * (count as f64).log10();

    let projected = if snr > snr_threshold {
        let (ud, _) = leading_eigvecs(corr, count);
        let xp = ud.transpose() * x;
        let u = xp.column_mean();
        let mut y = xp.clone();
        for (j, mut col) in y.column_iter_mut().enumerate() {
            let scale = u.dot(&xp.column(j));
            col /= scale;
        }
        y
    } else {
        let (ud, _) = leading_eigvecs(&centered * centered.transpose() / nf, count - 1);
        let xp = ud.transpose() * &centered;
        let c = xp.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut y = DMatrix::zeros(count, n);
        y.rows_mut(0, count - 1).copy_from(&xp);
        y.row_mut(count - 1).fill(c);
        y
    };
    if projected.iter().any(|v| !v.is_finite()) {
        return Err(UnmixError::Degenerate(
            "projected data are not finite".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = DMatrix::zeros(count, count);
    basis[(count - 1, 0)] = 1.0;
    let mut picked = Vec::with_capacity(count);
    for i in 0..count {
        let w = DVector::from_fn(count, |_, _| StandardNormal.sample(&mut rng));
        let pinv = basis
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| UnmixError::Degenerate(e.to_string()))?;
        let mut f = &w - &basis * (pinv * &w);
        let norm = f.norm();
        if norm == 0.0 {
            return Err(UnmixError::Degenerate(
                "no direction orthogonal to picked endmembers".into(),
            ));
        }
        f /= norm;
        let v = f.transpose() * &projected;
        let idx = argmax_abs(v.iter().copied());
        picked.push(idx);
        basis.set_column(i, &projected.column(idx));
    }
    let m = DMatrix::from_fn(b, count, |i, j| x[(i, picked[j])]);
    EndmemberMatrix::new(m)
}
