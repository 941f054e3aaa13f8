use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unmix_core::admm::AdmmConfig;
use unmix_core::data::SynthSpec;
use unmix_core::denoise::DenoiserSpec;
use unmix_core::net::NetConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Scene recipe, used when `input` is absent.
    pub synth: SynthSpec,
    /// Existing `.hsc` cube to unmix instead of a synthetic scene.
    pub input: Option<PathBuf>,
    /// Noise levels in dB. Empty means the clean cube.
    pub snr_db: Vec<f64>,
    pub noise_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            input: None,
            snr_db: vec![20.0],
            noise_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub seed: u64,
    /// Defaults to the synthetic scene's endmember count.
    pub endmember_count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
pub enum SolverKind {
    #[serde(rename = "pnp-admm")]
    #[value(name = "pnp-admm")]
    Admm,
    #[serde(rename = "pnp-net")]
    #[value(name = "pnp-net")]
    Net,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SolverSection {
    #[serde(rename = "pnp-admm")]
    Admm(AdmmConfig),
    #[serde(rename = "pnp-net")]
    Net(NetConfig),
}

impl Default for SolverSection {
    fn default() -> Self {
        Self::Admm(AdmmConfig::default())
    }
}

impl SolverSection {
    pub fn kind(&self) -> SolverKind {
        match self {
            Self::Admm(_) => SolverKind::Admm,
            Self::Net(_) => SolverKind::Net,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Admm(_) => "pnp-admm",
            Self::Net(_) => "pnp-net",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub init: InitSection,
    pub solver: SolverSection,
    /// Overrides the solver's own denoiser when present.
    pub denoiser: Option<DenoiserSpec>,
    pub output: OutputSection,
}

/// Command-line overrides shared by `synth` and `unmix`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub snr: Option<Vec<f64>>,
    pub solver: Option<SolverKind>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies overrides, then pushes the denoiser section into the solver.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(out) = &o.out {
            self.output.dir = Some(out.clone());
        }
        if let Some(seed) = o.seed {
            self.data.synth.seed = seed;
            self.data.noise_seed = seed.wrapping_add(1);
            self.init.seed = seed;
            if let SolverSection::Net(n) = &mut self.solver {
                n.seed = seed;
            }
        }
        if let Some(snr) = &o.snr {
            self.data.snr_db = snr.clone();
        }
        if let Some(kind) = o.solver {
            if kind != self.solver.kind() {
                self.solver = match kind {
                    SolverKind::Admm => SolverSection::Admm(AdmmConfig::default()),
                    SolverKind::Net => SolverSection::Net(NetConfig {
                        seed: self.init.seed,
                        ..NetConfig::default()
                    }),
                };
            }
        }
        if let Some(d) = &self.denoiser {
            match &mut self.solver {
                SolverSection::Admm(c) => c.denoiser = d.clone(),
                SolverSection::Net(c) => c.denoiser = d.clone(),
            }
        }
        if self
            .data
            .snr_db
            .iter()
            .any(|s| s.is_nan() || *s == f64::NEG_INFINITY)
        {
            return Err(CliError::Usage("snr values must be numbers or inf".into()));
        }
        if self.output.dir.is_none() {
            return Err(CliError::Usage(
                "no output directory: pass --out or set output.dir".into(),
            ));
        }
        match &self.solver {
            SolverSection::Admm(c) => c.validate(),
            SolverSection::Net(c) => c.validate(),
        }
        .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(self)
    }

    pub fn out_dir(&self) -> &Path {
        self.output
            .dir
            .as_deref()
            .expect("resolved config has an output dir")
    }
}

/// Directory-friendly SNR tag: `20db`, `2.5db`, `clean`.
pub fn snr_tag(snr: Option<f64>) -> String {
    match snr {
        None => "clean".into(),
        Some(s) if s.is_infinite() => "clean".into(),
        Some(s) => format!("{s}db"),
    }
}
