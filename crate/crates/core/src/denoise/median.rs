use unmix_autodiff::fold_symmetric;

/// Median over a `(2·radius+1)²` window with symmetric boundary extension.
pub fn median_filter(image: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
    let mut out = vec![0.0; image.len()];
    for i in 0..height {
        for j in 0..width {
            window.clear();
            for di in -r..=r {
                let y = fold_symmetric(i as isize + di, height);
                for dj in -r..=r {
                    window.push(image[y * width + fold_symmetric(j as isize + dj, width)]);
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            out[i * width + j] = *m;
        }
    }
    out
}
