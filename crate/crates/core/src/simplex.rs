//! Euclidean projection onto the probability simplex.

use nalgebra::DMatrix;

/// Projects `v` onto `{a : a ≥ 0, Σa = 1}` in place (sort-and-threshold).
pub fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Projects every column of `m` onto the simplex.
pub fn project_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        project_simplex(col.as_mut_slice());
    }
}
