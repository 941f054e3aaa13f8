//! Unmixing quality metrics with endmember alignment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Result, UnmixError};

/// Spectral angle between two vectors, in degrees.
///
/// Zero vectors have no direction; the angle to anything is reported as 90°.
pub fn sad(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_eq!(y.len(), y_hat.len(), "sad operands differ in length");
    let na = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = y_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 90.0;
    }
    // 2·atan2(|â − b̂|, |â + b̂|) keeps full precision near 0° and 180°,
    // where acos of a rounded cosine does not.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let (u, v) = (a / na, b / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees()
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(UnmixError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean angle between corresponding columns.
pub fn msad(m: &DMatrix<f64>, m_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(m, m_hat, "msad")?;
    if m.ncols() == 0 {
        return Err(UnmixError::Shape("msad of empty matrix".into()));
    }
    let total: f64 = m
        .column_iter()
        .zip(m_hat.column_iter())
        .map(|(a, b)| sad(a.as_slice(), b.as_slice()))
        .sum();
    Ok(total / m.ncols() as f64)
}

fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<f64> {
    same_shape(a, b, what)?;
    if a.is_empty() {
        return Err(UnmixError::Shape(format!("{what} of empty matrix")));
    }
    Ok(((a - b).norm_squared() / a.len() as f64).sqrt())
}

/// `√(Σ‖a − â‖² / (N·R))` over R×N abundance matrices.
pub fn armse(a: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<f64> {
    rmse(a, a_hat, "armse")
}

/// `√(Σ‖m − m̂‖² / (B·R))` over B×R endmember matrices.
pub fn mrmse(m: &DMatrix<f64>, m_hat: &DMatrix<f64>) -> Result<f64> {
    rmse(m, m_hat, "mrmse")
}

/// `10·log10(max(X̂)² / MSE)` with a global MSE; `+∞` for an exact match.
pub fn psnr(x: &DMatrix<f64>, x_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(x, x_hat, "psnr")?;
    let peak = x_hat.max();
    if x_hat.iter().all(|&v| v == 0.0) {
        return Err(UnmixError::InvalidParameter(
            "psnr reconstruction is all zeros".into(),
        ));
    }
    let mse = (x - x_hat).norm_squared() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `assign` with `assign[row] = column`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    // Potentials formulation with 1-based sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn sad_cost(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    same_shape(est, truth, "align")?;
    let r = truth.ncols();
    Ok(DMatrix::from_fn(r, r, |i, j| {
        sad(truth.column(i).as_slice(), est.column(j).as_slice())
    }))
}

/// Matches estimated endmembers to true ones by minimum total SAD.
///
/// `perm[i]` is the estimated column aligned with true column `i`.
pub fn align(est_m: &DMatrix<f64>, true_m: &DMatrix<f64>) -> Result<Vec<usize>> {
    Ok(hungarian(&sad_cost(est_m, true_m)?))
}

/// Brute-force counterpart of [`align`] over all `R!` orderings.
pub fn align_exhaustive(est_m: &DMatrix<f64>, true_m: &DMatrix<f64>) -> Result<Vec<usize>> {
    let cost = sad_cost(est_m, true_m)?;
    let r = cost.nrows();
    if r > 9 {
        return Err(UnmixError::InvalidParameter(format!(
            "exhaustive alignment limited to R ≤ 9, got {r}"
        )));
    }
    let mut perm: Vec<usize> = (0..r).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        if c < best_cost {
            best_cost = c;
            best = p.to_vec();
        }
    });
    Ok(best)
}

fn permute(p: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Total SAD of an alignment.
pub fn alignment_cost(est_m: &DMatrix<f64>, true_m: &DMatrix<f64>, perm: &[usize]) -> Result<f64> {
    let cost = sad_cost(est_m, true_m)?;
    Ok(perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum())
}

/// Reorders endmember columns and abundance rows by `perm`.
pub fn apply_permutation(
    m: &DMatrix<f64>,
    a: &DMatrix<f64>,
    perm: &[usize],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m2 = DMatrix::from_fn(m.nrows(), perm.len(), |b, i| m[(b, perm[i])]);
    let a2 = DMatrix::from_fn(perm.len(), a.ncols(), |i, n| a[(perm[i], n)]);
    (m2, a2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub armse: f64,
    pub mrmse: f64,
    /// Mean per-pixel angle between `X` and `M̂Â`.
    pub sad_mean: f64,
    pub msad: f64,
    pub psnr: f64,
    pub permutation: Vec<usize>,
}

/// Aligns the estimate to the truth, then scores abundances, endmembers and
/// the reconstruction against the clean cube `x` (B×N).
pub fn evaluate(
    est_m: &DMatrix<f64>,
    est_a: &DMatrix<f64>,
    true_m: &DMatrix<f64>,
    true_a: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<EvalReport> {
    if est_m.ncols() != true_m.ncols() {
        return Err(UnmixError::Shape(format!(
            "endmember counts differ: estimate {} vs truth {}",
            est_m.ncols(),
            true_m.ncols()
        )));
    }
    let perm = align(est_m, true_m)?;
    let (m, a) = apply_permutation(est_m, est_a, &perm);
    let x_hat = &m * &a;
    same_shape(x, &x_hat, "reconstruction")?;
    let sad_mean = x
        .column_iter()
        .zip(x_hat.column_iter())
        .map(|(p, q)| sad(p.as_slice(), q.as_slice()))
        .sum::<f64>()
        / x.ncols() as f64;
    Ok(EvalReport {
        armse: armse(true_a, &a)?,
        mrmse: mrmse(true_m, &m)?,
        sad_mean,
        msad: msad(true_m, &m)?,
        psnr: psnr(x, &x_hat)?,
        permutation: perm,
    })
}

pub const REPORT_HEADER: &str = "label,snr_db,armse,mrmse,sad,msad,psnr,permutation";

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    /// One CSV row matching [`REPORT_HEADER`].
    pub fn csv_row(&self, label: &str, snr_db: Option<f64>) -> String {
        let snr = snr_db.map_or_else(|| "clean".to_string(), fmt_metric);
        let perm: Vec<String> = self.permutation.iter().map(|p| p.to_string()).collect();
        format!(
            "{label},{snr},{},{},{},{},{},{}",
            fmt_metric(self.armse),
            fmt_metric(self.mrmse),
            fmt_metric(self.sad_mean),
            fmt_metric(self.msad),
            fmt_metric(self.psnr),
            perm.join(" ")
        )
    }
}

/// Merges report rows into one grid per metric: methods down, SNR across.
pub fn merge_table(rows: &[String]) -> Result<String> {
    let metrics = ["armse", "mrmse", "sad", "msad", "psnr"];
    let mut snrs: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    let mut labels: Vec<String> = Vec::new();
    for row in rows {
        let f: Vec<&str> = row.trim().split(',').collect();
        if f.len() != 8 {
            return Err(UnmixError::InvalidParameter(format!(
                "malformed report row: {row}"
            )));
        }
        if f[0] == "label" {
            continue;
        }
        let (label, snr) = (f[0].to_string(), f[1].to_string());
        if !labels.contains(&label) {
            labels.push(label.clone());
        }
        if !snrs.contains(&snr) {
            snrs.push(snr.clone());
        }
        cells.insert(
            (label, snr),
            f[2..7].iter().map(|s| s.to_string()).collect(),
        );
    }
    snrs.sort_by(|a, b| {
        let key = |s: &str| s.parse::<f64>().unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    let mut out = String::new();
    for (mi, metric) in metrics.iter().enumerate() {
        let _ = writeln!(out, "{metric},{}", snrs.join(","));
        for label in &labels {
            let vals: Vec<&str> = snrs
                .iter()
                .map(|s| {
                    cells
                        .get(&(label.clone(), s.clone()))
                        .map_or("", |v| v[mi].as_str())
                })
                .collect();
            let _ = writeln!(out, "{label},{}", vals.join(","));
        }
        out.push('\n');
    }
    Ok(out)
}
