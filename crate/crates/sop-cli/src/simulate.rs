//! Seeded simulation of the benchmark datasets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use std::io::Write;
use std::path::Path;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Centers of the three intensity peaks in [`poisson_peaks`].
pub const PEAK_CENTERS: [f64; 3] = [0.2, 0.5, 0.8];

/// Doppler-style curve: `sin(4/x) + 1.5` with Gaussian noise of sd 0.2,
/// design points uniform on (0, 1], returned sorted by x.
pub fn doppler(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let mut x: f64 = rng.gen_range(0.0..1.0);
            while x <= 1e-6 {
                x = rng.gen_range(0.0..1.0);
            }
            let noise: f64 = rng.sample(StandardNormal);
            (x, (4.0 / x).sin() + 1.5 + 0.2 * noise)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// The noiseless Doppler curve, for error measurement.
pub fn doppler_truth(x: f64) -> f64 {
    (4.0 / x).sin() + 1.5
}

/// Counts on a regular grid: flat baseline of about 20 events plus three
/// narrow Gaussian bumps on the log scale.
pub fn poisson_peaks(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let y = x
        .iter()
        .map(|&v| {
            let lambda = peaks_intensity(v);
            Poisson::new(lambda).unwrap().sample(&mut rng)
        })
        .collect();
    (x, y)
}

/// The true event intensity behind [`poisson_peaks`].
pub fn peaks_intensity(x: f64) -> f64 {
    let mut eta = 20.0f64.ln();
    for c in PEAK_CENTERS {
        eta += 1.6 * (-(x - c) * (x - c) / (2.0 * 0.03 * 0.03)).exp();
    }
    eta.exp()
}

/// Balanced panel: shared smooth curve plus per-subject smooth deviations
/// and a level shift, with observation noise of sd 0.1.
pub fn hierarchical(seed: u64, subjects: usize, points: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: Vec<f64> = (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect();
    let mut y = DMatrix::zeros(points, subjects);
    for j in 0..subjects {
        let a: f64 = 0.3 * rng.sample::<f64, _>(StandardNormal);
        let b: f64 = 0.3 * rng.sample::<f64, _>(StandardNormal);
        let c: f64 = 0.2 * rng.sample::<f64, _>(StandardNormal);
        for (i, &ti) in t.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            y[(i, j)] = 2.0 + (TAU * ti).sin()
                + a * (TAU * ti).cos()
                + b * (2.0 * TAU * ti).sin()
                + c
                + 0.1 * noise;
        }
    }
    (t, y)
}

pub fn write_xy_csv(path: &Path, x: &[f64], y: &[f64]) -> Result<(), String> {
    let mut out = String::from("x,y\n");
    for i in 0..x.len() {
        out.push_str(&format!("{},{}\n", x[i], y[i]));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn write_panel_csv(path: &Path, t: &[f64], y: &DMatrix<f64>) -> Result<(), String> {
    let mut out = String::from("t,y,subject\n");
    for j in 0..y.ncols() {
        for (i, &ti) in t.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", ti, y[(i, j)], j));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}
