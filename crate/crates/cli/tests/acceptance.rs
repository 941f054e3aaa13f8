//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! `cargo test --release -p unmix-cli --test acceptance`

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmix_autodiff::{grad_check, AutodiffError, GradCheckOptions, Graph, NodeId, Tensor};
use unmix_core::admm::{
    solve, step, update_a, update_m, update_v1, AdmmConfig, AdmmState, Projection,
};
use unmix_core::data::{add_noise, generate_synthetic, SynthSpec};
use unmix_core::denoise::DenoiserSpec;
use unmix_core::init::{initialize, vca, InitResult, SimplexLeastSquares};
use unmix_core::metrics::{
    align, align_exhaustive, alignment_cost, apply_permutation, armse, evaluate, msad, psnr, sad,
};
use unmix_core::net::{
    build_graph, dcl_attention, forward, init_params, tensor_from_matrix, train_with,
    AttentionMode, BlockParams, DclParams, NetConfig, NetHooks, NetInput, NetParams, NetState,
};
use unmix_core::{AbundanceField, EndmemberMatrix, HyperCube};

/// Tolerances and budgets, fixed here so every line of the report is
/// reproducible.
const CLOSED_FORM_TOL: f64 = 1e-10;
const CLOSED_FORM_SECS: f64 = 5.0;
const RED_TOL: f64 = 1e-8;
const RED_SWEEPS: usize = 50;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SECS: f64 = 120.0;
const FORWARD_PASSES: usize = 10_000;
const SIMPLEX_TOL: f64 = 1e-6;
const BLOCK_TOL: f64 = 1e-8;
const METRIC_TOL: f64 = 1e-10;
const VCA_MSAD: f64 = 1e-6;
const FCLS_FEAS: f64 = 1e-6;
const FCLS_GRID: f64 = 1e-4;
const NET_RATIO: f64 = 0.9;
const NET_ABS: f64 = 0.08;
const END_TO_END_SECS: f64 = 1800.0;
const ROBUSTNESS_EPOCHS: usize = 300;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

fn random_simplex(r: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(r, n, |_, _| -rng.gen_range(1e-3f64..1.0).ln());
    for mut c in a.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    a
}

fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Gauss-Jordan elimination with partial pivoting: `lhs · out = rhs`.
fn gauss_jordan(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lhs.nrows();
    let mut a = lhs.clone();
    let mut b = rhs.clone();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
            .unwrap();
        a.swap_rows(c, p);
        b.swap_rows(c, p);
        let d = a[(c, c)];
        a.row_mut(c).apply(|v| *v /= d);
        b.row_mut(c).apply(|v| *v /= d);
        for i in (0..n).filter(|&i| i != c) {
            let f = a[(i, c)];
            let ra = a.row(c).clone_owned() * f;
            let rb = b.row(c).clone_owned() * f;
            a.set_row(i, &(a.row(i) - ra));
            b.set_row(i, &(b.row(i) - rb));
        }
    }
    b
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Perturbed-truth scene: a mixed cube and an initialization near its factors.
fn scene(b: usize, r: usize, h: usize, w: usize, seed: u64) -> (HyperCube, InitResult) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random(b, r, 0.1, 1.0, &mut rng);
    let a = random_simplex(r, h * w, &mut rng);
    let x = &m * &a + random(b, h * w, -0.01, 0.01, &mut rng);
    let m0 = &m + random(b, r, 0.0, 0.05, &mut rng);
    let a0 = random_simplex(r, h * w, &mut rng) * 0.2 + &a * 0.8;
    (
        HyperCube::from_matrix(h, w, &x).unwrap(),
        InitResult {
            endmembers: EndmemberMatrix::new(m0).unwrap(),
            abundances: AbundanceField::new(h, w, a0).unwrap(),
        },
    )
}

fn randomize_dcl(p: &mut DclParams, scale: f64, rng: &mut ChaCha8Rng) {
    let tensors = p
        .kernels
        .iter_mut()
        .chain([&mut p.fc1_w, &mut p.fc1_b, &mut p.fc2_w, &mut p.fc2_b])
        .chain(p.head_w.iter_mut())
        .chain(p.head_b.iter_mut());
    for t in tensors {
        *t = random_tensor(t.shape(), scale, rng);
    }
}

fn dcl_constants(g: &mut Graph, p: &DclParams) -> Vec<NodeId> {
    p.kernels
        .iter()
        .chain([&p.fc1_w, &p.fc1_b, &p.fc2_w, &p.fc2_b])
        .chain(p.head_w.iter())
        .chain(p.head_b.iter())
        .map(|t| g.constant(t.clone()))
        .collect()
}

// 1 ------------------------------------------------------------------------

fn closed_form_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (b, r, n) = (
            rng.gen_range(1..=8),
            rng.gen_range(1..=4),
            rng.gen_range(1..=16),
        );
        let (alpha, beta) = (rng.gen_range(0.05..2.0), rng.gen_range(0.05..2.0));
        let x = random(b, n, -1.0, 1.0, &mut rng);
        let m = random(b, r, -1.0, 1.0, &mut rng);
        let a = random(r, n, -1.0, 1.0, &mut rng);
        let (v1, g1) = (
            random(r, n, -1.0, 1.0, &mut rng),
            random(r, n, -1.0, 1.0, &mut rng),
        );
        let (v2, g2) = (
            random(b, r, -1.0, 1.0, &mut rng),
            random(b, r, -1.0, 1.0, &mut rng),
        );

        let got = update_a(&x, &m, &v1, &g1, alpha).map_err(|e| e.to_string())?;
        let lhs = m.transpose() * &m + DMatrix::identity(r, r) * alpha;
        let rhs = m.transpose() * &x + (&v1 - &g1) * alpha;
        worst = worst.max(rel(&got, &gauss_jordan(&lhs, &rhs)));

        let got = update_m(&x, &a, &v2, &g2, beta).map_err(|e| e.to_string())?;
        let lhs = &a * a.transpose() + DMatrix::identity(r, r) * beta;
        let rhs = &x * a.transpose() + (&v2 - &g2) * beta;
        worst = worst.max(rel(&got, &gauss_jordan(&lhs, &rhs.transpose()).transpose()));
    }
    let secs = t.elapsed().as_secs_f64();
    let msg = format!("worst relative error {worst:.2e} over 100 instances in {secs:.2}s");
    if worst < CLOSED_FORM_TOL && secs < CLOSED_FORM_SECS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 2 ------------------------------------------------------------------------

fn red_fixed_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = 0.5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (h, w, r) = (
            rng.gen_range(2..8),
            rng.gen_range(2..8),
            rng.gen_range(1..5),
        );
        let (lambda, alpha) = (rng.gen_range(0.01..5.0), rng.gen_range(0.01..5.0));
        let field = |rng: &mut ChaCha8Rng| {
            AbundanceField::new(h, w, random(r, h * w, -1.0, 1.0, rng)).unwrap()
        };
        let (a, g1, prev) = (field(&mut rng), field(&mut rng), field(&mut rng));
        let fixed = (a.matrix() + g1.matrix()) * (alpha / (lambda * (1.0 - c) + alpha));
        let v = update_v1(
            &a,
            &g1,
            &prev,
            lambda,
            alpha,
            &DenoiserSpec::LinearScale { c },
            RED_SWEEPS,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((v.matrix() - &fixed).amax());
    }
    let msg = format!("max deviation {worst:.2e} after {RED_SWEEPS} sweeps on 50 instances");
    if worst < RED_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 3 ------------------------------------------------------------------------

fn readout(g: &mut Graph, x: NodeId) -> unmix_autodiff::Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let target = Tensor::new(shape, (0..n).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let t = g.constant(target);
    g.squared_error(x, t, 0.5)
}

type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> unmix_autodiff::Result<NodeId>>;

fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Builder)> {
    vec![
        (
            "add",
            vec![vec![2, 3], vec![2, 3]],
            Box::new(|g, p| {
                let y = g.add(p[0], p[1])?;
                readout(g, y)
            }),
        ),
        (
            "sub",
            vec![vec![2, 3], vec![2, 3]],
            Box::new(|g, p| {
                let y = g.sub(p[0], p[1])?;
                readout(g, y)
            }),
        ),
        (
            "mul (broadcast)",
            vec![vec![2, 3, 3], vec![3, 3]],
            Box::new(|g, p| {
                let y = g.mul(p[0], p[1])?;
                readout(g, y)
            }),
        ),
        (
            "scale",
            vec![vec![4]],
            Box::new(|g, p| {
                let y = g.scale(p[0], -1.3);
                readout(g, y)
            }),
        ),
        (
            "matmul",
            vec![vec![3, 4], vec![4, 2]],
            Box::new(|g, p| {
                let y = g.matmul(p[0], p[1])?;
                readout(g, y)
            }),
        ),
        (
            "relu",
            vec![vec![3, 3]],
            Box::new(|g, p| {
                let y = g.relu(p[0]);
                readout(g, y)
            }),
        ),
        (
            "softmax_channels",
            vec![vec![3, 2, 4]],
            Box::new(|g, p| {
                let y = g.softmax_channels(p[0])?;
                readout(g, y)
            }),
        ),
        (
            "softmaxpro",
            vec![vec![1, 1], vec![3, 3], vec![5, 5]],
            Box::new(|g, p| {
                let c: Vec<NodeId> = p
                    .iter()
                    .map(|&id| g.pad_center(id, 5))
                    .collect::<Result<_, _>>()?;
                let y = g.softmaxpro(&c, &[1, 3, 5])?;
                readout(g, y)
            }),
        ),
        (
            "select",
            vec![vec![3, 2, 2]],
            Box::new(|g, p| {
                let y = g.select(p[0], 1)?;
                readout(g, y)
            }),
        ),
        (
            "reshape",
            vec![vec![2, 6]],
            Box::new(|g, p| {
                let y = g.reshape(p[0], &[3, 4])?;
                readout(g, y)
            }),
        ),
        (
            "pad_center",
            vec![vec![3, 3]],
            Box::new(|g, p| {
                let y = g.pad_center(p[0], 5)?;
                readout(g, y)
            }),
        ),
        (
            "global_avg_pool",
            vec![vec![3, 4, 5]],
            Box::new(|g, p| {
                let y = g.global_avg_pool(p[0])?;
                readout(g, y)
            }),
        ),
        (
            "linear",
            vec![vec![5], vec![3, 5], vec![3]],
            Box::new(|g, p| {
                let y = g.linear(p[0], p[1], p[2])?;
                readout(g, y)
            }),
        ),
        (
            "conv2d 3x3",
            vec![vec![2, 6, 6], vec![3, 2, 3, 3]],
            Box::new(|g, p| {
                let y = g.conv2d(p[0], p[1])?;
                readout(g, y)
            }),
        ),
        (
            "conv2d 5x5",
            vec![vec![2, 4, 5], vec![2, 2, 5, 5]],
            Box::new(|g, p| {
                let y = g.conv2d(p[0], p[1])?;
                readout(g, y)
            }),
        ),
        (
            "squared_error",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|g, p| g.squared_error(p[0], p[1], 0.7)),
        ),
    ]
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = GradCheckOptions {
        tolerance: GRAD_TOL,
        ..GradCheckOptions::default()
    };
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for (name, shapes, build) in primitive_cases() {
        let params: Vec<(String, Tensor)> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("{name}.{i}"), random_tensor(s, 1.0, &mut rng)))
            .collect();
        let report =
            grad_check(&params, |g, ids| build(g, ids), &opts).map_err(|e| e.to_string())?;
        worst = worst.max(report.worst());
        if !report.passed() {
            failed.push(name);
        }
    }

    let (cube, init) = scene(6, 2, 8, 8, 9);
    let cfg = NetConfig {
        blocks: 1,
        beta_k: vec![1.0],
        denoiser: DenoiserSpec::Gaussian { sigma: 1.0 },
        ..NetConfig::default()
    };
    let mut net = init_params(&init, &cfg).map_err(|e| e.to_string())?;
    randomize_dcl(&mut net.blocks[0].w1, 0.3, &mut rng);
    randomize_dcl(&mut net.blocks[0].q1, 0.3, &mut rng);
    let input = NetInput::from_cube(&cube);
    let state = NetState::from_init(&init);
    let build = |g: &mut Graph, ids: &[NodeId]| {
        build_graph(g, ids, &input, &state, &cfg, &NetHooks::default())
            .map(|fg| fg.loss)
            .map_err(|e| AutodiffError::InvalidArgument {
                op: "block",
                reason: e.to_string(),
            })
    };
    let block_opts = GradCheckOptions {
        max_coords: 40,
        ..opts.clone()
    };
    let report = grad_check(&net.flatten(), build, &block_opts).map_err(|e| e.to_string())?;
    worst = worst.max(report.worst());
    if !report.passed() {
        failed.push("pnp-net block");
    }
    let secs = t.elapsed().as_secs_f64();
    let msg = format!(
        "worst relative error {worst:.2e} over 16 primitives and a full block in {secs:.1}s"
    );
    if failed.is_empty() && secs < GRAD_SECS {
        Ok(msg)
    } else {
        Err(format!("{msg}; failing: {failed:?}"))
    }
}

// 4 ------------------------------------------------------------------------

fn structural_invariants() -> Outcome {
    let mut worst_sum: f64 = 0.0;
    let mut worst_attention: f64 = 0.0;
    let mut min_v2 = f64::INFINITY;
    for seed in 0..FORWARD_PASSES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, r) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let (cube, init) = scene(b, r, h, w, seed);
        let k = rng.gen_range(1..3);
        let cfg = NetConfig {
            blocks: k,
            beta_k: NetConfig::default_beta_k(k),
            kernel_sizes: vec![1, 3],
            q1_kernel_sizes: vec![1, 3],
            denoiser: DenoiserSpec::Gaussian { sigma: 0.7 },
            ..NetConfig::default()
        };
        let mut params = init_params(&init, &cfg).map_err(|e| e.to_string())?;
        for bp in params.blocks.iter_mut() {
            randomize_dcl(&mut bp.w1, 2.0, &mut rng);
            randomize_dcl(&mut bp.q1, 2.0, &mut rng);
            bp.w2 = random_tensor(bp.w2.shape(), 2.0, &mut rng);
            bp.q2 = random_tensor(bp.q2.shape(), 2.0, &mut rng);
        }
        let input = NetInput::from_cube(&cube);
        let state = NetState::from_init(&init);
        let (out, _) = forward(&params, &input, &state, &cfg, &NetHooks::default())
            .map_err(|e| e.to_string())?;
        for (kb, o) in out.iter().enumerate() {
            for c in o.a.column_iter() {
                worst_sum = worst_sum.max((c.sum() - 1.0).abs());
            }
            min_v2 = min_v2.min(o.v2.min());

            // Attention of both dynamic convolutions on the inputs this block saw.
            let (v1_prev, g1_prev) = if kb == 0 {
                (&state.v1, &state.g1)
            } else {
                (&out[kb - 1].v1, &out[kb - 1].g1)
            };
            let bp = &params.blocks[kb];
            let mut g = Graph::new();
            let x = g.constant(input.x.clone());
            let q_in = g.constant(tensor_from_matrix(&(v1_prev - g1_prev), &[r, h, w]));
            for (node, p) in [(x, &bp.w1), (q_in, &bp.q1)] {
                let ids = dcl_constants(&mut g, p);
                let t = dcl_attention(&mut g, node, &ids, &p.sizes).map_err(|e| e.to_string())?;
                let v = g.value(t);
                let s = v.shape()[1] * v.shape()[2];
                for pos in 0..s {
                    let total: f64 = (0..p.sizes.len()).map(|l| v.data()[l * s + pos]).sum();
                    worst_attention = worst_attention.max((total - 1.0).abs());
                }
            }
        }
    }
    let msg = format!(
        "{FORWARD_PASSES} passes: max |Σa − 1| {worst_sum:.1e}, min V2 {min_v2:.3}, max |ΣT − 1| {worst_attention:.1e}"
    );
    if worst_sum < SIMPLEX_TOL && min_v2 >= 0.0 && worst_attention < SIMPLEX_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 5 ------------------------------------------------------------------------

fn block_vs_iteration(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, r) = (rng.gen_range(3..9), rng.gen_range(2..5));
    let (h, w) = (rng.gen_range(3..7), rng.gen_range(3..7));
    let (cube, init) = scene(b, r, h, w, seed);
    let denoiser = if seed % 2 == 0 {
        DenoiserSpec::Gaussian { sigma: 0.8 }
    } else {
        DenoiserSpec::default()
    };
    let cfg = NetConfig {
        blocks: 1,
        beta_k: vec![1.0],
        alpha: rng.gen_range(0.05..1.0),
        beta: rng.gen_range(0.05..1.0),
        denoiser: denoiser.clone(),
        ..NetConfig::default()
    };
    let admm = AdmmConfig {
        alpha: cfg.alpha,
        beta: cfg.beta,
        lambda: rng.gen_range(0.1..2.0),
        eta1: rng.gen_range(0.1..1.0),
        eta2: rng.gen_range(0.1..1.0),
        inner_v1: 1,
        projection: Projection::None,
        denoiser,
        ..AdmmConfig::default()
    };
    let x = cube.to_matrix();
    let mut st = AdmmState::from_init(&init);
    step(&x, &mut st, &admm).map_err(|e| e.to_string())?;

    let mut bp =
        BlockParams::from_closed_form(init.endmembers.matrix(), st.a.matrix(), &cfg, &mut rng)
            .map_err(|e| e.to_string())?;
    let total = admm.lambda + admm.alpha;
    bp.theta1 = Tensor::scalar(admm.lambda / total);
    bp.theta2 = Tensor::scalar(admm.alpha / total);
    bp.theta3 = Tensor::scalar(admm.eta1);
    bp.theta4 = Tensor::scalar(admm.eta2);
    let hooks = NetHooks {
        softmax: false,
        attention: AttentionMode::Bypass,
    };
    let (out, _) = forward(
        &NetParams { blocks: vec![bp] },
        &NetInput::from_cube(&cube),
        &NetState::from_init(&init),
        &cfg,
        &hooks,
    )
    .map_err(|e| e.to_string())?;
    let o = &out[0];
    Ok([
        (&o.a - st.a.matrix()).amax(),
        (&o.v1 - st.v1.matrix()).amax(),
        (&o.g1 - st.g1.matrix()).amax(),
        (&o.m - &st.m).amax(),
        (&o.v2 - &st.v2).amax(),
        (&o.g2 - &st.g2).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

fn block_equals_iteration() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..40 {
        worst = worst.max(block_vs_iteration(seed)?);
    }
    let msg = format!("max deviation {worst:.2e} over 40 instances");
    if worst < BLOCK_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 6 and 7 -------------------------------------------------------------------

struct Scene {
    clean: HyperCube,
    m: EndmemberMatrix,
    a: AbundanceField,
}

fn desk_scene() -> Result<Scene, String> {
    let (clean, m, a) = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
    Ok(Scene { clean, m, a })
}

fn score(s: &Scene, m: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64, String> {
    evaluate(m, a, s.m.matrix(), s.a.matrix(), &s.clean.to_matrix())
        .map(|r| r.armse)
        .map_err(|e| e.to_string())
}

fn desk_net_config(epochs: usize) -> NetConfig {
    NetConfig {
        epochs,
        denoiser: DenoiserSpec::Gaussian { sigma: 1.0 },
        ..NetConfig::default()
    }
}

fn train_net(
    s: &Scene,
    noisy: &HyperCube,
    init: &InitResult,
    epochs: usize,
) -> Result<(f64, usize), String> {
    let out = train_with(
        noisy,
        &desk_net_config(epochs),
        init,
        &NetHooks::default(),
        |_, _| {},
    )
    .map_err(|e| e.to_string())?;
    Ok((
        score(s, out.endmembers.matrix(), out.abundances.matrix())?,
        out.history.len(),
    ))
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let s = desk_scene()?;
    let noisy = add_noise(&s.clean, 20.0, 1).map_err(|e| e.to_string())?;
    let init = initialize(&noisy, 4, 0).map_err(|e| e.to_string())?;
    let baseline = score(&s, init.endmembers.matrix(), init.abundances.matrix())?;

    let admm = solve(&noisy, &AdmmConfig::default(), &init).map_err(|e| e.to_string())?;
    let admm_armse = score(&s, admm.endmembers.matrix(), admm.abundances.matrix())?;

    let (net_armse, epochs) = train_net(&s, &noisy, &init, 1000)?;
    let secs = t.elapsed().as_secs_f64();
    let bound = (NET_RATIO * admm_armse).min(NET_ABS);
    let msg = format!(
        "aRMSE fcls {baseline:.4}, pnp-admm(nlm) {admm_armse:.4}, pnp-net {net_armse:.4} after {epochs} epochs \
         (needs admm < fcls and net ≤ {bound:.4}); {secs:.0}s"
    );
    if admm_armse < baseline && net_armse <= bound && secs < END_TO_END_SECS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn noise_robustness() -> Outcome {
    let s = desk_scene()?;
    let mut results = Vec::new();
    for snr in [5.0, 10.0, 20.0, 30.0] {
        let noisy = add_noise(&s.clean, snr, 1).map_err(|e| e.to_string())?;
        let init = initialize(&noisy, 4, 0).map_err(|e| e.to_string())?;
        let (v, _) = train_net(&s, &noisy, &init, ROBUSTNESS_EPOCHS)?;
        results.push((snr, v));
    }
    let monotone = results.windows(2).all(|w| w[1].1 <= w[0].1);
    let msg = results
        .iter()
        .map(|(snr, v)| format!("{snr} dB {v:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    let msg = format!("pnp-net aRMSE ({ROBUSTNESS_EPOCHS} epochs): {msg}");
    if monotone {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 8 ------------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let mut errs: Vec<f64> = Vec::new();
    let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let b = DMatrix::from_column_slice(2, 1, &[0.9, 0.1]);
    errs.push((armse(&a, &b).map_err(|e| e.to_string())? - 0.1).abs());
    errs.push(sad(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]));
    errs.push((sad(&[1.0, 0.0], &[0.0, 1.0]) - 90.0).abs());
    errs.push((sad(&[1.0, 0.0], &[1.0, 1.0]) - 45.0).abs());
    let x_hat = DMatrix::from_row_slice(1, 4, &[1.0, 0.5, 0.2, 0.4]);
    let x = x_hat.map(|v| v + 0.1);
    errs.push((psnr(&x, &x_hat).map_err(|e| e.to_string())? - 20.0).abs());
    let worst_metric = errs.iter().copied().fold(0.0, f64::max);
    let exact_psnr = psnr(&x, &x).map_err(|e| e.to_string())? == f64::INFINITY;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for trial in 0..600 {
        let r = 1 + trial % 6;
        let truth = random(12, r, 0.0, 1.0, &mut rng);
        let est = random(12, r, 0.0, 1.0, &mut rng);
        let fast = align(&est, &truth).map_err(|e| e.to_string())?;
        let slow = align_exhaustive(&est, &truth).map_err(|e| e.to_string())?;
        let cf = alignment_cost(&est, &truth, &fast).map_err(|e| e.to_string())?;
        let cs = alignment_cost(&est, &truth, &slow).map_err(|e| e.to_string())?;
        if (cf - cs).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    let msg = format!(
        "hand values within {worst_metric:.1e}, exact psnr inf: {exact_psnr}, alignment mismatches {mismatches}/600"
    );
    if worst_metric < METRIC_TOL && exact_psnr && mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 9 ------------------------------------------------------------------------

fn vca_fcls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_msad: f64 = 0.0;
    for seed in 0..10 {
        let r = 2 + seed % 4;
        let m = random(30, r, 0.05, 1.0, &mut rng);
        let mut a =
            random_simplex(r, 300, &mut rng) * 0.8 + DMatrix::from_element(r, 300, 0.2 / r as f64);
        for j in 0..r {
            a.column_mut(j).fill(0.0);
            a[(j, j)] = 1.0;
        }
        let est = vca(&(&m * &a), r, seed as u64).map_err(|e| e.to_string())?;
        let perm = align(est.matrix(), &m).map_err(|e| e.to_string())?;
        let (aligned, _) = apply_permutation(est.matrix(), &a, &perm);
        worst_msad = worst_msad.max(msad(&m, &aligned).map_err(|e| e.to_string())?);
    }

    let mut worst_feas: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for trial in 0..6 {
        let m = random(4 + trial % 3, 3, 0.05, 1.0, &mut rng);
        let x = DVector::from_fn(m.nrows(), |_, _| rng.gen_range(0.0..1.2));
        let a =
            SimplexLeastSquares::new(&EndmemberMatrix::new(m.clone()).unwrap()).solve(x.as_slice());
        worst_feas = worst_feas.max((a.sum() - 1.0).abs()).max(-a.min());
        let obj = |p: &DVector<f64>| 0.5 * (&m * p - &x).norm_squared();
        let steps = 1000;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let p = DVector::from_vec(vec![i as f64, j as f64, (steps - i - j) as f64])
                    / steps as f64;
                best = best.min(obj(&p));
            }
        }
        worst_gap = worst_gap.max((obj(&a) - best).abs());
    }
    let msg = format!(
        "vca mSAD {worst_msad:.1e}, fcls feasibility {:.1e}, grid objective gap {worst_gap:.1e}",
        worst_feas.abs()
    );
    if worst_msad < VCA_MSAD && worst_feas < FCLS_FEAS && worst_gap < FCLS_GRID {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 10 -----------------------------------------------------------------------

fn unmix(args: &[&str], cwd: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_unmix"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn snapshot(root: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let scene = r#""data": {"synth": {"height": 12, "width": 12, "endmember_count": 3, "band_count": 30}, "snr_db": [10, 25]}"#;
    std::fs::write(
        dir.join("admm.json"),
        format!(r#"{{{scene}, "solver": {{"kind": "pnp-admm", "max_outer": 20}}, "denoiser": {{"kind": "nlm", "patch_radius": 1, "search_radius": 3, "h": 0.05}}}}"#),
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("net.json"),
        format!(r#"{{{scene}, "solver": {{"kind": "pnp-net", "blocks": 2, "beta_k": [0.1, 1.0], "epochs": 10}}, "denoiser": {{"kind": "gaussian", "sigma": 1.0}}}}"#),
    )
    .map_err(|e| e.to_string())?;
    for run in ["1", "2"] {
        let d = format!("run{run}");
        unmix(
            &[
                "synth",
                "--config",
                "admm.json",
                "--out",
                &format!("{d}/synth"),
                "--seed",
                "4",
            ],
            dir,
        )?;
        unmix(
            &[
                "unmix",
                "--config",
                "admm.json",
                "--out",
                &format!("{d}/admm"),
                "--seed",
                "4",
            ],
            dir,
        )?;
        unmix(
            &[
                "unmix",
                "--config",
                "net.json",
                "--out",
                &format!("{d}/net"),
                "--seed",
                "4",
            ],
            dir,
        )?;
        for (solver, snr) in [("admm", "10db"), ("net", "25db")] {
            let run_dir = format!("{d}/{solver}/snr_{snr}");
            unmix(
                &[
                    "eval",
                    "--est",
                    &run_dir,
                    "--truth",
                    &run_dir,
                    "--out",
                    &format!("{d}/{solver}_{snr}.csv"),
                ],
                dir,
            )?;
        }
        unmix(
            &[
                "eval",
                "--table",
                &format!("{d}/admm_10db.csv"),
                &format!("{d}/net_25db.csv"),
                "--out",
                &format!("{d}/table.csv"),
            ],
            dir,
        )?;
    }
    let (a, b) = (snapshot(&dir.join("run1")), snapshot(&dir.join("run2")));
    let msg = format!(
        "{} artifacts from synth, unmix (admm, net), eval and eval --table",
        a.len()
    );
    if a == b {
        Ok(format!("{msg} are bit-identical across reruns"))
    } else {
        let differing: Vec<_> = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.0.display().to_string())
            .collect();
        Err(format!("{msg}; differing: {differing:?}"))
    }
}

fn main() {
    // Cargo passes harness flags such as `--nocapture`; a name filter selects criteria.
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 10] = [
        ("1 closed-form oracle equivalence", closed_form_oracles),
        ("2 RED fixed-point oracle", red_fixed_point),
        ("3 gradient suite", gradient_suite),
        ("4 structural invariants", structural_invariants),
        ("5 block equals iteration", block_equals_iteration),
        ("6 desk-scale end-to-end", end_to_end),
        ("7 noise-robustness ordering", noise_robustness),
        ("8 metric oracles", metric_oracles),
        ("9 VCA/FCLS", vca_fcls),
        ("10 CLI determinism", cli_determinism),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let reason = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {reason}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("criterion {name}: PASS ({msg}) [{secs:.1}s]"),
            Err(msg) => {
                failures += 1;
                println!("criterion {name}: FAIL ({msg}) [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
