use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::diffmath::Tensor;
use crate::error::{Result, WadgError};
use crate::seed::{self, Stream};

/// Generator settings, stored verbatim in dataset manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum GeneratorParams {
    RotatedMoons {
        angles: Vec<f64>,
        samples_per_domain: usize,
        noise_sd: f64,
    },
    ShiftedBlobs {
        domain_shifts: Vec<Vec<f64>>,
        num_classes: usize,
        samples_per_domain: usize,
        blob_sd: f64,
    },
}

impl GeneratorParams {
    pub fn benchmark_name(&self) -> &'static str {
        match self {
            GeneratorParams::RotatedMoons { .. } => "rotated-moons",
            GeneratorParams::ShiftedBlobs { .. } => "shifted-blobs",
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Vec<DomainDataset>> {
        match self {
            GeneratorParams::RotatedMoons {
                angles,
                samples_per_domain,
                noise_sd,
            } => gen_rotated_moons(angles, *samples_per_domain, *noise_sd, seed),
            GeneratorParams::ShiftedBlobs {
                domain_shifts,
                num_classes,
                samples_per_domain,
                blob_sd,
            } => gen_shifted_blobs(
                domain_shifts,
                *num_classes,
                *samples_per_domain,
                *blob_sd,
                seed,
            ),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            GeneratorParams::RotatedMoons { .. } => 2,
            GeneratorParams::ShiftedBlobs { num_classes, .. } => *num_classes,
        }
    }
}

/// `dom<angle>`, with integral angles printed without a fractional part.
pub fn moons_domain_id(angle: f64) -> String {
    if angle.fract() == 0.0 && angle.abs() < 1e15 {
        format!("dom{}", angle as i64)
    } else {
        format!("dom{angle}")
    }
}

// Centre of the two-moons point set; rotations are taken about it.
const MOONS_CENTER: (f64, f64) = (0.5, 0.25);

/// Two interleaved half circles, one domain per rotation angle (degrees).
///
/// Class 0 lies on `(cos t, sin t)` and class 1 on `(1 − cos t, 0.5 − sin t)`
/// for `t ~ U[0, π]`, plus isotropic Gaussian noise. Each domain is centred
/// on the origin and rotated counter-clockwise by its angle. Domain `k` draws
/// from its own stream of `seed`, so the same angle list and seed always give
/// the same data.
pub fn gen_rotated_moons(
    angles: &[f64],
    samples_per_domain: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if angles.len() < 3 {
        return Err(WadgError::Config(format!(
            "rotated moons need at least 3 domains, got {}",
            angles.len()
        )));
    }
    if !(noise_sd >= 0.0) || samples_per_domain < 2 {
        return Err(WadgError::Config(format!(
            "invalid moons settings: noise_sd {noise_sd}, samples {samples_per_domain}"
        )));
    }
    let noise = Normal::new(0.0, noise_sd).expect("validated");
    angles
        .iter()
        .enumerate()
        .map(|(k, &angle)| {
            let mut rng = seed::rng_indexed(seed, Stream::Data, k as u64);
            let (sin, cos) = angle.to_radians().sin_cos();
            let n0 = samples_per_domain.div_ceil(2);
            let mut data = Vec::with_capacity(samples_per_domain * 2);
            let mut labels = Vec::with_capacity(samples_per_domain);
            for r in 0..samples_per_domain {
                let class = usize::from(r >= n0);
                let t = rng.gen_range(0.0..std::f64::consts::PI);
                let (x, y) = if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let x = x + noise.sample(&mut rng) - MOONS_CENTER.0;
                let y = y + noise.sample(&mut rng) - MOONS_CENTER.1;
                data.push(cos * x - sin * y);
                data.push(sin * x + cos * y);
                labels.push(class);
            }
            DomainDataset::new(
                moons_domain_id(angle),
                Tensor::matrix(samples_per_domain, 2, data)?,
                labels,
            )
        })
        .collect()
}

/// Class centre `c` of the blobs benchmark: `3·(cos 2πc/K, sin 2πc/K, 0, …)`
/// (only the first coordinate for one-dimensional features).
pub fn blob_center(class: usize, num_classes: usize, dim: usize) -> Vec<f64> {
    let a = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
    let mut c = vec![0.0; dim];
    c[0] = 3.0 * a.cos();
    if dim > 1 {
        c[1] = 3.0 * a.sin();
    }
    c
}

/// Gaussian class blobs at fixed centres, each domain translated by its shift.
pub fn gen_shifted_blobs(
    domain_shifts: &[Vec<f64>],
    num_classes: usize,
    samples_per_domain: usize,
    blob_sd: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if num_classes < 2 {
        return Err(WadgError::Config("blobs need at least 2 classes".into()));
    }
    let dim = domain_shifts.first().map_or(0, Vec::len);
    if domain_shifts.is_empty() || dim == 0 || domain_shifts.iter().any(|s| s.len() != dim) {
        return Err(WadgError::Config(
            "domain shifts must be nonempty vectors of one common length".into(),
        ));
    }
    if !(blob_sd >= 0.0) || samples_per_domain < num_classes {
        return Err(WadgError::Config(format!(
            "invalid blob settings: sd {blob_sd}, samples {samples_per_domain}"
        )));
    }
    let noise = Normal::new(0.0, blob_sd).expect("validated");
    domain_shifts
        .iter()
        .enumerate()
        .map(|(k, shift)| {
            let mut rng = seed::rng_indexed(seed, Stream::Data, k as u64);
            let mut data = Vec::with_capacity(samples_per_domain * dim);
            let mut labels = Vec::with_capacity(samples_per_domain);
            for r in 0..samples_per_domain {
                let class = r % num_classes;
                let center = blob_center(class, num_classes, dim);
                for (c, s) in center.iter().zip(shift) {
                    data.push(c + s + noise.sample(&mut rng));
                }
                labels.push(class);
            }
            DomainDataset::new(
                format!("blob{k}"),
                Tensor::matrix(samples_per_domain, dim, data)?,
                labels,
            )
        })
        .collect()
}
