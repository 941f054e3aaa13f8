use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use unmix_core::admm::{self, solve_with};
use unmix_core::data::{
    add_noise, export_abundance_maps, generate_synthetic, load_abundance_raw, load_cube,
    load_endmembers_csv, save_abundance_raw, save_cube, save_endmembers_csv, save_gray_image,
    AbundanceField, EndmemberMatrix, HyperCube,
};
use unmix_core::init::initialize;
use unmix_core::metrics::{evaluate, merge_table, REPORT_HEADER};
use unmix_core::net::{self, save_checkpoint, train_with, Checkpoint, NetHooks, NetInput};

use crate::config::{snr_tag, RunConfig, SolverSection};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn noise_levels(cfg: &RunConfig) -> Vec<Option<f64>> {
    if cfg.data.snr_db.is_empty() {
        vec![None]
    } else {
        cfg.data.snr_db.iter().map(|&s| Some(s)).collect()
    }
}

fn noisy(clean: &HyperCube, snr: Option<f64>, seed: u64) -> Result<HyperCube, CliError> {
    Ok(match snr {
        None => clean.clone(),
        Some(s) => add_noise(clean, s, seed)?,
    })
}

pub fn synth(cfg: &RunConfig, verbose: bool) -> Result<(), CliError> {
    let out = cfg.out_dir();
    create_dir(out)?;
    let (clean, m, a) = generate_synthetic(&cfg.data.synth)?;
    save_cube(&clean, out.join("cube.hsc"))?;
    save_endmembers_csv(&m, out.join("truth_M.csv"))?;
    save_abundance_raw(&a, out.join("truth_A.raw"))?;
    export_abundance_maps(&a, out.join("truth_maps"))?;
    for snr in noise_levels(cfg).into_iter().flatten() {
        let path = out.join(format!("noisy_{}.hsc", snr_tag(Some(snr))));
        save_cube(&noisy(&clean, Some(snr), cfg.data.noise_seed)?, &path)?;
        if verbose {
            eprintln!("wrote {}", path.display());
        }
    }
    write(
        &out.join("run.json"),
        pretty(&json!({ "command": "synth", "config": recorded(cfg)? }))?,
    )
}

/// The resolved config without its output location, so identical runs into
/// different directories leave identical records.
fn recorded(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let mut c = cfg.clone();
    c.output.dir = None;
    serde_json::to_value(&c).map_err(|e| CliError::Io(e.to_string()))
}

fn pretty(v: &serde_json::Value) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))
}

pub fn unmix(cfg: &RunConfig, verbose: bool) -> Result<(), CliError> {
    let out = cfg.out_dir().to_path_buf();
    create_dir(&out)?;
    let levels = noise_levels(cfg);
    match &cfg.data.input {
        Some(path) => {
            let cube = load_cube(path)?;
            let r = cfg.init.endmember_count.ok_or_else(|| {
                CliError::Usage("init.endmember_count is required with data.input".into())
            })?;
            if levels.len() > 1 {
                return Err(CliError::Usage(
                    "a single input cube takes at most one snr".into(),
                ));
            }
            let cube = noisy(&cube, levels[0], cfg.data.noise_seed)?;
            run_one(cfg, &cube, r, levels[0], None, &out, verbose)
        }
        None => {
            let (clean, m, a) = generate_synthetic(&cfg.data.synth)?;
            let r = cfg.init.endmember_count.unwrap_or(m.count());
            let many = levels.len() > 1;
            for snr in levels {
                let dir = if many {
                    out.join(format!("snr_{}", snr_tag(snr)))
                } else {
                    out.clone()
                };
                create_dir(&dir)?;
                save_cube(&clean, dir.join("cube.hsc"))?;
                save_endmembers_csv(&m, dir.join("truth_M.csv"))?;
                save_abundance_raw(&a, dir.join("truth_A.raw"))?;
                let cube = noisy(&clean, snr, cfg.data.noise_seed)?;
                run_one(cfg, &cube, r, snr, Some(&clean), &dir, verbose)?;
            }
            Ok(())
        }
    }
}

/// Per-pixel RMS reconstruction error, also returned as a `[0, 1]`-scaled
/// field for the grayscale map.
fn error_map(x: &HyperCube, m: &EndmemberMatrix, a: &AbundanceField) -> (Vec<f64>, f64) {
    let xm = x.to_matrix();
    let diff = xm - m.matrix() * a.matrix();
    let b = diff.nrows() as f64;
    let err: Vec<f64> = diff
        .column_iter()
        .map(|c| (c.norm_squared() / b).sqrt())
        .collect();
    let peak = err.iter().copied().fold(0.0, f64::max);
    (err, peak)
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    cfg: &RunConfig,
    cube: &HyperCube,
    r: usize,
    snr: Option<f64>,
    clean: Option<&HyperCube>,
    dir: &Path,
    verbose: bool,
) -> Result<(), CliError> {
    if verbose {
        eprintln!(
            "{}: {}×{}×{} cube, R={r}, snr {}",
            cfg.solver.name(),
            cube.height(),
            cube.width(),
            cube.bands(),
            snr_tag(snr)
        );
    }
    if clean.is_some() {
        save_cube(cube, dir.join("noisy.hsc"))?;
    }
    let init = initialize(cube, r, cfg.init.seed)?;
    let summary;
    let (m, a) = match &cfg.solver {
        SolverSection::Admm(c) => {
            let outcome = solve_with(cube, c, &init, |rec| {
                if verbose && rec.iteration % 10 == 0 {
                    eprintln!(
                        "  iter {:4}  objective {:.6e}  primal {:.2e}",
                        rec.iteration,
                        rec.objective,
                        rec.primal_a.max(rec.primal_m)
                    );
                }
            })?;
            write(
                &dir.join("diagnostics.csv"),
                admm::history_csv(&outcome.state.history),
            )?;
            summary = json!({
                "converged": outcome.converged,
                "iterations": outcome.state.history.len(),
                "final_objective": outcome.state.history.last().map(|h| h.objective),
            });
            (outcome.endmembers, outcome.abundances)
        }
        SolverSection::Net(c) => {
            let outcome = train_with(cube, c, &init, &NetHooks::default(), |e, l| {
                if verbose && e % 50 == 0 {
                    eprintln!("  epoch {e:5}  loss {l:.6e}");
                }
            })?;
            write(&dir.join("history.csv"), net::history_csv(&outcome.history))?;
            save_checkpoint(
                &Checkpoint {
                    config: c.clone(),
                    params: outcome.params.clone(),
                    state: outcome.state.clone(),
                },
                dir.join("checkpoint.bin"),
            )?;
            let (outputs, _) = net::forward(
                &outcome.params,
                &NetInput::from_cube(cube),
                &outcome.state,
                c,
                &NetHooks::default(),
            )?;
            let x = cube.to_matrix();
            let mut diag = String::from("block,reconstruction_mse,simplex_violation,min_v2\n");
            for (k, o) in outputs.iter().enumerate() {
                let mse = (&x - &o.x_hat).norm_squared() / x.len() as f64;
                let viol =
                    o.a.column_iter()
                        .map(|col| (col.sum() - 1.0).abs())
                        .fold(0.0, f64::max);
                diag.push_str(&format!("{k},{mse:e},{viol:e},{:e}\n", o.v2.min()));
            }
            write(&dir.join("diagnostics.csv"), diag)?;
            summary = json!({
                "epochs": outcome.history.len(),
                "stopped_early": outcome.stopped_early,
                "final_loss": outcome.final_loss,
            });
            (outcome.endmembers, outcome.abundances)
        }
    };
    save_endmembers_csv(&m, dir.join("est_M.csv"))?;
    save_abundance_raw(&a, dir.join("est_A.raw"))?;
    export_abundance_maps(&a, dir.join("maps"))?;
    let (err, peak) = error_map(cube, &m, &a);
    let scaled: Vec<f64> = err
        .iter()
        .map(|e| if peak > 0.0 { e / peak } else { 0.0 })
        .collect();
    save_gray_image(&scaled, cube.height(), cube.width(), dir.join("error_map"))?;
    let record = RunRecord {
        command: "unmix".into(),
        solver: cfg.solver.name().into(),
        snr_db: snr.filter(|s| s.is_finite()),
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        endmembers: r,
        error_map_peak: peak,
        summary,
        config: recorded(cfg)?,
    };
    write(
        &dir.join("run.json"),
        serde_json::to_string_pretty(&record).map_err(|e| CliError::Io(e.to_string()))?,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    command: String,
    solver: String,
    snr_db: Option<f64>,
    height: usize,
    width: usize,
    bands: usize,
    endmembers: usize,
    error_map_peak: f64,
    summary: serde_json::Value,
    config: serde_json::Value,
}

fn read_record(dir: &Path) -> Option<RunRecord> {
    let text = fs::read_to_string(dir.join("run.json")).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn eval(
    est: &Path,
    truth: &Path,
    out: &Path,
    label: Option<String>,
    verbose: bool,
) -> Result<(), CliError> {
    let clean = load_cube(truth.join("cube.hsc"))?;
    let (h, w) = (clean.height(), clean.width());
    let true_m = load_endmembers_csv(truth.join("truth_M.csv"))?;
    let true_a = load_abundance_raw(truth.join("truth_A.raw"), h, w, true_m.count())?;
    let est_m = load_endmembers_csv(est.join("est_M.csv"))?;
    let est_a = load_abundance_raw(est.join("est_A.raw"), h, w, est_m.count())?;
    let record = read_record(est);
    // The clean scene is M·A by construction; rebuilding it from the stored
    // factors avoids comparing against a separately rounded cube.
    let reference = true_m.matrix() * true_a.matrix();
    let report = evaluate(
        est_m.matrix(),
        est_a.matrix(),
        true_m.matrix(),
        true_a.matrix(),
        &reference,
    )?;
    let label = label
        .or_else(|| record.as_ref().map(|r| r.solver.clone()))
        .unwrap_or_else(|| "estimate".into());
    let row = report.csv_row(&label, record.and_then(|r| r.snr_db));
    if verbose {
        eprintln!("{row}");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out, format!("{REPORT_HEADER}\n{row}\n"))
}

pub fn table(reports: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for p in reports {
        let text =
            fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        rows.extend(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string),
        );
    }
    let grid = merge_table(&rows)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out, grid)
}
