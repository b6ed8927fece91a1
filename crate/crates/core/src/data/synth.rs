//! Gaussian blob datasets shaped as 1×1×dim images.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Image, Origin, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// Class means drawn uniformly from `[0.2, 0.8]^dim`.
pub fn random_class_means(num_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, "class-means", &[]);
    (0..num_classes)
        .map(|_| (0..dim).map(|_| r.random_range(0.2..0.8)).collect())
        .collect()
}

fn blob(center: &[f64], sigma: f64, rng: &mut rng::Rng, normal: &Normal<f64>) -> Image {
    let data = center
        .iter()
        .map(|&m| m + sigma * normal.sample(rng))
        .collect();
    Image::from_clamped(1, 1, center.len(), data)
}

/// `per_class` samples around each of `class_means`, class-major, ids 0..N−1.
pub fn synth_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    class_means: &[Vec<f64>],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    if num_classes < 2 {
        return Err(Error::config("num_classes", "synthetic blobs need at least 2 classes"));
    }
    if !(noise_sigma > 0.0) {
        return Err(Error::config("noise_sigma", "must be > 0"));
    }
    if class_means.len() != num_classes || class_means.iter().any(|m| m.len() != dim) {
        return Err(Error::config(
            "class_means",
            format!("expected {num_classes} means of length {dim}"),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r = rng::stream(seed, "synth-blobs", &[]);
    let mut out = Vec::with_capacity(num_classes * per_class);
    for (label, mean) in class_means.iter().enumerate() {
        for _ in 0..per_class {
            out.push(Sample {
                id: out.len(),
                image: blob(mean, noise_sigma, &mut r, &normal),
                label: Some(label),
                origin: Origin::InDist,
            });
        }
    }
    Ok(out)
}

/// An unlabeled out-of-distribution cluster tagged `Ood(name)`.
pub fn synth_ood_blob(count: usize, center: &[f64], noise_sigma: f64, name: &str, seed: u64) -> Vec<Sample> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r = rng::stream(seed, "synth-ood", &[]);
    (0..count)
        .map(|id| Sample {
            id,
            image: blob(center, noise_sigma, &mut r, &normal),
            label: None,
            origin: Origin::Ood(name.to_string()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_labels() {
        let means = random_class_means(3, 4, 1);
        let s = synth_blobs(3, 4, 100, &means, 0.1, 9).unwrap();
        assert_eq!(s.len(), 300);
        for c in 0..3 {
            assert_eq!(s.iter().filter(|x| x.label == Some(c)).count(), 100);
        }
        assert!(s.iter().all(|x| x.image.pixels().iter().all(|p| (0.0..=1.0).contains(p))));
    }

    #[test]
    fn deterministic() {
        let means = random_class_means(2, 3, 5);
        assert_eq!(
            synth_blobs(2, 3, 10, &means, 0.2, 42).unwrap(),
            synth_blobs(2, 3, 10, &means, 0.2, 42).unwrap()
        );
    }

    #[test]
    fn vanishing_noise_gives_class_means() {
        let means = random_class_means(2, 5, 3);
        let s = synth_blobs(2, 5, 4, &means, 1e-300, 0).unwrap();
        for x in &s {
            let m = &means[x.label.unwrap()];
            for (p, q) in x.image.pixels().iter().zip(m) {
                assert!((p - q).abs() < 1e-200);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let means = random_class_means(1, 2, 0);
        assert!(synth_blobs(1, 2, 3, &means, 0.1, 0).is_err());
        let means = random_class_means(2, 2, 0);
        assert!(synth_blobs(2, 2, 3, &means, 0.0, 0).is_err());
    }
}
