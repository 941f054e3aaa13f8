//! Cubes, endmember matrices and abundance fields.
//!
//! Pixels are flattened row-major (`n = row·W + col`) everywhere; a cube's
//! matrix view is `B×N` and an abundance field's is `R×N`.

mod io;
mod synth;

pub use io::{
    export_abundance_maps, load_abundance_raw, load_cube, load_endmembers_csv, save_abundance_raw,
    save_cube, save_endmembers_csv, save_gray_image,
};
pub use synth::{add_noise, generate_synthetic, library_spectra, SynthSpec};

use nalgebra::DMatrix;

use crate::error::{Result, UnmixError};

/// `B`-band `H×W` image stored band-sequentially.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(UnmixError::InvalidParameter(format!(
                "cube dimensions must be positive, got {height}×{width}×{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(UnmixError::Shape(format!(
                "cube {height}×{width}×{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::InvalidParameter(
                "cube contains non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    /// Builds a cube from a `B×N` matrix (columns are pixel spectra).
    pub fn from_matrix(height: usize, width: usize, matrix: &DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() != height * width {
            return Err(UnmixError::Shape(format!(
                "matrix has {} columns, image has {} pixels",
                matrix.ncols(),
                height * width
            )));
        }
        // Column-major B×N storage transposed is row-major band-sequential.
        let data = matrix.transpose().as_slice().to_vec();
        Self::new(height, width, matrix.nrows(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Band-sequential samples.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.bands, self.pixels(), &self.data)
    }
}

/// `B×R` matrix of endmember spectra, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    matrix: DMatrix<f64>,
}

impl EndmemberMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(UnmixError::InvalidParameter(
                "endmember matrix must be non-empty".into(),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::InvalidParameter(
                "endmember matrix contains non-finite values".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn bands(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn count(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn is_nonnegative(&self) -> bool {
        self.matrix.iter().all(|&v| v >= 0.0)
    }
}

/// `R`-channel `H×W` field viewed as an `R×N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceField {
    height: usize,
    width: usize,
    matrix: DMatrix<f64>,
}

impl AbundanceField {
    pub fn new(height: usize, width: usize, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() != height * width || matrix.nrows() == 0 {
            return Err(UnmixError::Shape(format!(
                "abundance matrix {}×{} does not fit a {height}×{width} image",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self {
            height,
            width,
            matrix,
        })
    }

    /// Builds a field from channel-major data (`R` consecutive row-major images).
    pub fn from_channels(height: usize, width: usize, count: usize, data: &[f64]) -> Result<Self> {
        if data.len() != count * height * width {
            return Err(UnmixError::Shape(format!(
                "{count} channels of {height}×{width} need {} values, got {}",
                count * height * width,
                data.len()
            )));
        }
        Self::new(
            height,
            width,
            DMatrix::from_row_slice(count, height * width, data),
        )
    }

    pub fn zeros(height: usize, width: usize, count: usize) -> Self {
        Self {
            height,
            width,
            matrix: DMatrix::zeros(count, height * width),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Copy of channel `r` as a row-major image.
    pub fn channel(&self, r: usize) -> Vec<f64> {
        self.matrix.row(r).iter().copied().collect()
    }

    /// Channel-major copy of all samples.
    pub fn to_channels(&self) -> Vec<f64> {
        self.matrix.transpose().as_slice().to_vec()
    }

    /// Same geometry, new values.
    pub fn with_matrix(&self, matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(self.height, self.width, matrix)
    }

    /// Largest deviation from the abundance simplex: negative mass or
    /// column-sum error, whichever is worse.
    pub fn simplex_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for col in self.matrix.column_iter() {
            worst = worst.max((col.sum() - 1.0).abs());
            for &v in col.iter() {
                worst = worst.max(-v);
            }
        }
        worst
    }
}
