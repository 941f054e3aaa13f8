use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AbundanceField, EndmemberMatrix, HyperCube};
use crate::denoise::gaussian_blur;
use crate::error::{Result, UnmixError};

const LIBRARY_CSV: &str = include_str!("../../assets/endmembers.csv");

/// Recipe for a synthetic scene: smooth random fields pushed through a
/// per-pixel softmax give the abundances, library spectra give endmembers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub endmember_count: usize,
    pub band_count: usize,
    /// Correlation length of the latent Gaussian fields, in pixels.
    pub smoothness: f64,
    /// Multiplier on the standardized fields before the softmax; larger
    /// values give purer pixels.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 100,
            width: 100,
            endmember_count: 4,
            band_count: 224,
            smoothness: 6.0,
            sharpness: 3.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(UnmixError::InvalidParameter(format!(
                "synthetic scene must be at least 8×8, got {}×{}",
                self.height, self.width
            )));
        }
        if self.endmember_count == 0 || self.endmember_count > self.band_count {
            return Err(UnmixError::InvalidParameter(format!(
                "endmember count {} must be in 1..={}",
                self.endmember_count, self.band_count
            )));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(UnmixError::InvalidParameter(
                "smoothness must be positive".into(),
            ));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(UnmixError::InvalidParameter(
                "sharpness must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn parse_library() -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = LIBRARY_CSV
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse().expect("bundled library is numeric"))
                .collect()
        })
        .collect();
    let r = rows[0].len();
    (0..r)
        .map(|c| rows.iter().map(|row| row[c]).collect())
        .collect()
}

/// Linear resampling of `src` onto `bands` evenly spaced positions.
fn resample(src: &[f64], bands: usize) -> Vec<f64> {
    if bands == 1 {
        return vec![src[src.len() / 2]];
    }
    let last = (src.len() - 1) as f64;
    (0..bands)
        .map(|b| {
            let x = b as f64 * last / (bands - 1) as f64;
            let i = (x.floor() as usize).min(src.len() - 2);
            let t = x - i as f64;
            src[i] * (1.0 - t) + src[i + 1] * t
        })
        .collect()
}

/// Smooth positive spectrum built from a baseline plus Gaussian bumps.
fn generated_spectrum(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.gen_range(0.05..0.3);
    let slope = rng.gen_range(-0.1..0.2);
    let bumps: Vec<(f64, f64, f64)> = (0..rng.gen_range(3..6))
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.03..0.2),
                rng.gen_range(-0.1..0.35),
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = if bands > 1 {
                b as f64 / (bands - 1) as f64
            } else {
                0.5
            };
            let v = base
                + slope * x
                + bumps
                    .iter()
                    .map(|&(c, w, a)| a * (-0.5 * ((x - c) / w).powi(2)).exp())
                    .sum::<f64>();
            v.max(0.01)
        })
        .collect()
}

/// `B×R` endmember spectra: the bundled four-material library (resampled)
/// when `R ≤ 4`, otherwise seeded smooth synthetic spectra.
pub fn library_spectra(count: usize, bands: usize, seed: u64) -> EndmemberMatrix {
    let lib = parse_library();
    let columns: Vec<Vec<f64>> = if count <= lib.len() {
        lib.iter().take(count).map(|s| resample(s, bands)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5bec);
        (0..count)
            .map(|_| generated_spectrum(bands, &mut rng))
            .collect()
    };
    let m = DMatrix::from_fn(bands, count, |b, r| columns[r][b]);
    EndmemberMatrix::new(m).expect("library spectra are finite")
}

/// Noiseless synthetic scene `(cube, endmembers, abundances)` with
/// `cube = M·A` and every abundance column on the simplex.
pub fn generate_synthetic(
    spec: &SynthSpec,
) -> Result<(HyperCube, EndmemberMatrix, AbundanceField)> {
    spec.validate()?;
    let (h, w, r) = (spec.height, spec.width, spec.endmember_count);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut logits = DMatrix::zeros(r, n);
    for ch in 0..r {
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let field = gaussian_blur(&noise, h, w, spec.smoothness);
        let mean = field.iter().sum::<f64>() / n as f64;
        let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt().max(f64::MIN_POSITIVE);
        for (p, v) in field.iter().enumerate() {
            logits[(ch, p)] = spec.sharpness * (v - mean) / sd;
        }
    }
    let mut abundances = DMatrix::zeros(r, n);
    for p in 0..n {
        let col = logits.column(p);
        let mx = col.max();
        let e: Vec<f64> = col.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        for ch in 0..r {
            abundances[(ch, p)] = e[ch] / s;
        }
    }

    let endmembers = library_spectra(r, spec.band_count, spec.seed);
    let x = endmembers.matrix() * &abundances;
    let cube = HyperCube::from_matrix(h, w, &x)?;
    Ok((cube, endmembers, AbundanceField::new(h, w, abundances)?))
}

/// Adds white Gaussian noise at the given SNR (dB), with noise variance
/// `mean(x²) / 10^(snr/10)`. An infinite SNR returns the input unchanged.
pub fn add_noise(cube: &HyperCube, snr_db: f64, seed: u64) -> Result<HyperCube> {
    if snr_db == f64::INFINITY {
        return Ok(cube.clone());
    }
    if !snr_db.is_finite() {
        return Err(UnmixError::InvalidParameter(format!(
            "snr must be finite or +inf, got {snr_db}"
        )));
    }
    let data = cube.data();
    let power = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| UnmixError::InvalidParameter(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = data.iter().map(|v| v + normal.sample(&mut rng)).collect();
    HyperCube::new(cube.height(), cube.width(), cube.bands(), noisy)
}
