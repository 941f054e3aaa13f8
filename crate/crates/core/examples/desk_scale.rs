//! Desk-scale run: synthetic scene, noise, VCA+FCLS, PnP-ADMM and PnP-Net.
//!
//! `cargo run --release -p unmix-core --example desk_scale -- [snr_db] [epochs]`

use std::time::Instant;

use unmix_core::admm::{solve, AdmmConfig};
use unmix_core::data::{add_noise, generate_synthetic, SynthSpec};
use unmix_core::denoise::DenoiserSpec;
use unmix_core::init::initialize;
use unmix_core::metrics::evaluate;
use unmix_core::net::{train_with, NetConfig, NetHooks};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let snr: f64 = args.get(1).map_or(Ok(20.0), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(300), |s| s.parse())?;

    let (clean, m, a) = generate_synthetic(&SynthSpec::default())?;
    let noisy = add_noise(&clean, snr, 1)?;
    let x = clean.to_matrix();
    let init = initialize(&noisy, 4, 0)?;
    let base = evaluate(
        init.endmembers.matrix(),
        init.abundances.matrix(),
        m.matrix(),
        a.matrix(),
        &x,
    )?;
    println!("fcls    armse {:.5} msad {:.4}", base.armse, base.msad);

    let t = Instant::now();
    let admm = solve(&noisy, &AdmmConfig::default(), &init)?;
    let rep = evaluate(
        admm.endmembers.matrix(),
        admm.abundances.matrix(),
        m.matrix(),
        a.matrix(),
        &x,
    )?;
    println!(
        "admm    armse {:.5} msad {:.4} ({:.1?})",
        rep.armse,
        rep.msad,
        t.elapsed()
    );

    let cfg = NetConfig {
        epochs,
        denoiser: DenoiserSpec::Gaussian { sigma: 1.0 },
        ..NetConfig::default()
    };
    let t = Instant::now();
    let out = train_with(&noisy, &cfg, &init, &NetHooks::default(), |e, l| {
        if e % 50 == 0 {
            println!("  epoch {e:4} loss {l:.6e} ({:.1?})", t.elapsed());
        }
    })?;
    let rep = evaluate(
        out.endmembers.matrix(),
        out.abundances.matrix(),
        m.matrix(),
        a.matrix(),
        &x,
    )?;
    println!(
        "pnp-net armse {:.5} msad {:.4} psnr {:.2} ({:.1?})",
        rep.armse,
        rep.msad,
        rep.psnr,
        t.elapsed()
    );
    Ok(())
}
