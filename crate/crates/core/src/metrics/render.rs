//! Render-statistics distance: Fréchet distance between Gaussian fits of
//! hand-crafted image features. A lightweight stand-in for learned
//! perceptual distances; values are not comparable to them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::evaluate::MaterialOutput;
use crate::image::ChannelImage;
use crate::schema::MaterialChannel;

use super::MetricError;

pub const HISTOGRAM_BINS: usize = 8;

fn luma_values(img: &ChannelImage) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.width * img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            out.push(img.luma(x, y) as f64);
        }
    }
    out
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn gradient_magnitude(img: &ChannelImage) -> f64 {
    let (w, h) = (img.width as isize, img.height as isize);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let l = |dx: isize, dy: isize| {
                let xx = (x + dx).rem_euclid(w) as usize;
                let yy = (y + dy).rem_euclid(h) as usize;
                img.luma(xx, yy) as f64
            };
            let gx = (l(1, 0) - l(-1, 0)) / 2.0;
            let gy = (l(0, 1) - l(0, -1)) / 2.0;
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    total / (w * h) as f64
}

/// Per channel: luma mean, variance and mean gradient magnitude; plus an
/// albedo luminance histogram and albedo RGB means.
pub fn render_features(out: &MaterialOutput) -> Vec<f64> {
    let mut f = Vec::with_capacity(5 * 3 + HISTOGRAM_BINS + 3);
    for ch in MaterialChannel::ALL {
        let img = out.get(ch);
        let (m, v) = mean_var(&luma_values(img));
        f.push(m);
        f.push(v);
        f.push(gradient_magnitude(img));
    }
    let albedo = out.albedo();
    let lum = luma_values(albedo);
    let mut hist = [0.0; HISTOGRAM_BINS];
    for l in &lum {
        hist[((l * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)] += 1.0;
    }
    f.extend(hist.iter().map(|h| h / lum.len() as f64));
    for c in 0..3 {
        f.push(albedo.mean(c));
    }
    f
}

fn gaussian_fit(features: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = features[0].len();
    let n = features.len() as f64;
    let mut mean = DVector::zeros(d);
    for row in features {
        mean += DVector::from_column_slice(row);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for row in features {
        let x = DVector::from_column_slice(row) - &mean;
        cov += &x * x.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature populations.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, generated: a.len(), reference: b.len() });
    }
    let (m1, s1) = gaussian_fit(a);
    let (m2, s2) = gaussian_fit(b);
    let diff = &m1 - &m2;
    let s1h = psd_sqrt(&s1);
    let cross = psd_sqrt(&(&s1h * &s2 * &s1h));
    let d = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

pub fn render_stat_distance(generated: &[MaterialOutput], reference: &[MaterialOutput]) -> Result<f64, MetricError> {
    let fa: Vec<Vec<f64>> = generated.iter().map(render_features).collect();
    let fb: Vec<Vec<f64>> = reference.iter().map(render_features).collect();
    frechet_distance(&fa, &fb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn population(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn identical_populations() {
        let p = population(1, 40, 5);
        assert!(frechet_distance(&p, &p).unwrap() < 1e-9);
    }

    #[test]
    fn mean_shift_gives_squared_shift() {
        let p = population(2, 50, 4);
        let delta = 0.7;
        let q: Vec<Vec<f64>> = p.iter().map(|r| {
            let mut r = r.clone();
            r[2] += delta;
            r
        }).collect();
        let d = frechet_distance(&p, &q).unwrap();
        assert!((d - delta * delta).abs() < 1e-8, "{d}");
    }

    #[test]
    fn symmetric() {
        let p = population(3, 30, 4);
        let q = population(4, 25, 4);
        let a = frechet_distance(&p, &q).unwrap();
        let b = frechet_distance(&q, &p).unwrap();
        assert!((a - b).abs() < 1e-8 * a.max(1.0));
    }

    #[test]
    fn needs_two_samples() {
        let p = population(5, 1, 3);
        assert!(frechet_distance(&p, &p).is_err());
    }
}
