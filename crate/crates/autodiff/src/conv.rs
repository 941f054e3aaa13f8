//! Stride-1 "same" 2-D correlation with symmetric boundary extension.
//!
//! Channel mixing commutes with spatial shifts, so the forward pass stacks
//! every kernel tap into one GEMM against the input and then gathers the
//! shifted tap responses. Both backward products reuse the same layout.

use crate::gemm;

/// Folds an out-of-range coordinate back into `0..n` by mirroring about the
/// edges with the edge sample repeated (`-1 → 0`, `n → n-1`).
pub fn fold_symmetric(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Source pixel index for every output pixel, one table per kernel tap.
fn tap_tables(h: usize, w: usize, k: usize) -> Vec<Vec<usize>> {
    let c = (k / 2) as isize;
    let mut tables = Vec::with_capacity(k * k);
    for di in 0..k {
        for dj in 0..k {
            let rows: Vec<usize> = (0..h)
                .map(|i| fold_symmetric(i as isize + di as isize - c, h))
                .collect();
            let cols: Vec<usize> = (0..w)
                .map(|j| fold_symmetric(j as isize + dj as isize - c, w))
                .collect();
            let mut t = Vec::with_capacity(h * w);
            for &r in &rows {
                for &cc in &cols {
                    t.push(r * w + cc);
                }
            }
            tables.push(t);
        }
    }
    tables
}

/// Reorders a `[cout, cin, k, k]` kernel into a `(k²·cout) × cin` matrix with
/// rows grouped by tap.
fn stack_kernel(kernel: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let taps = k * k;
    let mut out = vec![0.0; taps * cout * cin];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..taps {
                out[(t * cout + co) * cin + ci] = kernel[(co * cin + ci) * taps + t];
            }
        }
    }
    out
}

pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

pub(crate) fn forward(input: &[f64], kernel: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let n = g.h * g.w;
    let taps = g.k * g.k;
    let stacked = stack_kernel(kernel, g.cout, g.cin, g.k);
    let mut responses = vec![0.0; taps * g.cout * n];
    gemm::matmul(&stacked, input, &mut responses, taps * g.cout, g.cin, n);
    let tables = tap_tables(g.h, g.w, g.k);
    let mut out = vec![0.0; g.cout * n];
    for (t, table) in tables.iter().enumerate() {
        for co in 0..g.cout {
            let src = &responses[(t * g.cout + co) * n..(t * g.cout + co + 1) * n];
            let dst = &mut out[co * n..(co + 1) * n];
            for (d, &p) in dst.iter_mut().zip(table) {
                *d += src[p];
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_kernel)`; either may be skipped.
pub(crate) fn backward(
    input: &[f64],
    kernel: &[f64],
    upstream: &[f64],
    g: &ConvGeometry,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let n = g.h * g.w;
    let taps = g.k * g.k;
    let tables = tap_tables(g.h, g.w, g.k);
    // Adjoint of each tap's gather: scatter-add upstream onto source pixels.
    let mut scattered = vec![0.0; taps * g.cout * n];
    for (t, table) in tables.iter().enumerate() {
        for co in 0..g.cout {
            let src = &upstream[co * n..(co + 1) * n];
            let dst = &mut scattered[(t * g.cout + co) * n..(t * g.cout + co + 1) * n];
            for (&u, &p) in src.iter().zip(table) {
                dst[p] += u;
            }
        }
    }
    let grad_input = want_input.then(|| {
        let stacked = stack_kernel(kernel, g.cout, g.cin, g.k);
        let mut gi = vec![0.0; g.cin * n];
        gemm::matmul_tn_acc(&stacked, &scattered, &mut gi, g.cin, taps * g.cout, n);
        gi
    });
    let grad_kernel = want_kernel.then(|| {
        let mut stacked_grad = vec![0.0; taps * g.cout * g.cin];
        gemm::matmul_nt_acc(
            &scattered,
            input,
            &mut stacked_grad,
            taps * g.cout,
            n,
            g.cin,
        );
        let mut gk = vec![0.0; g.cout * g.cin * taps];
        for co in 0..g.cout {
            for ci in 0..g.cin {
                for t in 0..taps {
                    gk[(co * g.cin + ci) * taps + t] = stacked_grad[(t * g.cout + co) * g.cin + ci];
                }
            }
        }
        gk
    });
    (grad_input, grad_kernel)
}
