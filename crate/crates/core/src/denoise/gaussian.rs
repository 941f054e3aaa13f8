use unmix_autodiff::fold_symmetric;

fn kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of a row-major `height×width` image, kernel
/// radius `⌈3σ⌉`, symmetric boundary extension.
pub fn gaussian_blur(image: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let k = kernel_1d(sigma);
    let r = (k.len() / 2) as isize;
    let mut rows = vec![0.0; image.len()];
    for i in 0..height {
        let line = &image[i * width..(i + 1) * width];
        for j in 0..width {
            rows[i * width + j] = k
                .iter()
                .enumerate()
                .map(|(t, w)| w * line[fold_symmetric(j as isize + t as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; image.len()];
    for i in 0..height {
        for j in 0..width {
            out[i * width + j] = k
                .iter()
                .enumerate()
                .map(|(t, w)| {
                    w * rows[fold_symmetric(i as isize + t as isize - r, height) * width + j]
                })
                .sum();
        }
    }
    out
}
