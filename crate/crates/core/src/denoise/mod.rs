//! Plug-in denoisers `C(·)` applied independently to each abundance channel.

mod gaussian;
mod median;
mod nlm;

pub use gaussian::gaussian_blur;
pub use median::median_filter;
pub use nlm::nlm_filter;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::AbundanceField;
use crate::error::{Result, UnmixError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    Identity,
    /// Normalized Gaussian blur; `sigma` in pixels.
    Gaussian {
        sigma: f64,
    },
    /// Median over a `(2r+1)²` window.
    Median {
        radius: usize,
    },
    /// Non-local means with square patches and search windows.
    Nlm {
        patch_radius: usize,
        search_radius: usize,
        h: f64,
    },
    /// `C(v) = c·v`. Not a denoiser; its RED fixed points are analytic.
    LinearScale {
        c: f64,
    },
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self::Nlm {
            patch_radius: 1,
            search_radius: 5,
            h: 0.05,
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(UnmixError::InvalidParameter(format!(
                "denoiser {what} must be positive"
            )))
        };
        match *self {
            Self::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => bad("sigma"),
            Self::Median { radius: 0 } => bad("radius"),
            Self::Nlm {
                search_radius: 0, ..
            } => bad("search_radius"),
            Self::Nlm { h, .. } if !(h > 0.0 && h.is_finite()) => bad("h"),
            Self::LinearScale { c } if !c.is_finite() => Err(UnmixError::InvalidParameter(
                "linear_scale c must be finite".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Gaussian { .. } => "gaussian",
            Self::Median { .. } => "median",
            Self::Nlm { .. } => "nlm",
            Self::LinearScale { .. } => "linear_scale",
        }
    }

    fn apply_channel(&self, image: &[f64], height: usize, width: usize) -> Vec<f64> {
        match *self {
            Self::Identity => image.to_vec(),
            Self::Gaussian { sigma } => gaussian_blur(image, height, width, sigma),
            Self::Median { radius } => median_filter(image, height, width, radius),
            Self::Nlm {
                patch_radius,
                search_radius,
                h,
            } => nlm_filter(image, height, width, patch_radius, search_radius, h),
            Self::LinearScale { c } => image.iter().map(|v| c * v).collect(),
        }
    }
}

/// Applies `spec` to every channel of `field`.
pub fn denoise(field: &AbundanceField, spec: &DenoiserSpec) -> Result<AbundanceField> {
    spec.validate()?;
    if let DenoiserSpec::Identity = spec {
        return Ok(field.clone());
    }
    let (h, w) = (field.height(), field.width());
    let channels: Vec<Vec<f64>> = (0..field.count())
        .into_par_iter()
        .map(|r| spec.apply_channel(&field.channel(r), h, w))
        .collect();
    let flat: Vec<f64> = channels.into_iter().flatten().collect();
    AbundanceField::from_channels(h, w, field.count(), &flat)
}

/// `field − C(field)`.
pub fn residual(field: &AbundanceField, spec: &DenoiserSpec) -> Result<AbundanceField> {
    let d = denoise(field, spec)?;
    field.with_matrix(field.matrix() - d.matrix())
}
