use unmix_autodiff::fold_symmetric;

/// Non-local means on a row-major image.
///
/// Each pixel becomes the weighted mean of pixels within `search_radius`,
/// weighted by `exp(−d²/h²)` where `d²` is the mean squared difference of the
/// `(2·patch_radius+1)²` patches around the two pixels. Patch distances for
/// one offset are computed for the whole image at once with a separable box
/// sum, so the cost is independent of the patch size.
pub fn nlm_filter(
    image: &[f64],
    height: usize,
    width: usize,
    patch_radius: usize,
    search_radius: usize,
    h: f64,
) -> Vec<f64> {
    let p = patch_radius as isize;
    let s = search_radius as isize;
    // Extended grid covering every patch center ± p.
    let eh = height + 2 * patch_radius;
    let ew = width + 2 * patch_radius;
    let at =
        |y: isize, x: isize| image[fold_symmetric(y, height) * width + fold_symmetric(x, width)];
    let ext: Vec<f64> = (0..eh as isize)
        .flat_map(|y| (0..ew as isize).map(move |x| (y - p, x - p)))
        .map(|(y, x)| at(y, x))
        .collect();
    let patch_area = ((2 * patch_radius + 1) * (2 * patch_radius + 1)) as f64;
    let inv_h2 = 1.0 / (h * h);

    let mut acc = vec![0.0; image.len()];
    let mut wsum = vec![0.0; image.len()];
    let mut diff = vec![0.0; eh * ew];
    let mut rowsum = vec![0.0; eh * width];
    for dy in -s..=s {
        for dx in -s..=s {
            for y in 0..eh {
                for x in 0..ew {
                    let shifted = at(y as isize - p + dy, x as isize - p + dx);
                    let d = ext[y * ew + x] - shifted;
                    diff[y * ew + x] = d * d;
                }
            }
            let win = 2 * patch_radius + 1;
            for y in 0..eh {
                let row = &diff[y * ew..(y + 1) * ew];
                let mut run: f64 = row[..win].iter().sum();
                rowsum[y * width] = run;
                for x in 1..width {
                    run += row[x + win - 1] - row[x - 1];
                    rowsum[y * width + x] = run;
                }
            }
            for x in 0..width {
                let mut run: f64 = (0..win).map(|y| rowsum[y * width + x]).sum();
                for y in 0..height {
                    if y > 0 {
                        run += rowsum[(y + win - 1) * width + x] - rowsum[(y - 1) * width + x];
                    }
                    let d2 = (run / patch_area).max(0.0);
                    let w = (-d2 * inv_h2).exp();
                    let v = at(y as isize + dy, x as isize + dx);
                    acc[y * width + x] += w * v;
                    wsum[y * width + x] += w;
                }
            }
        }
    }
    acc.iter().zip(&wsum).map(|(a, w)| a / w).collect()
}
