//! Synthetic images with heterogeneous block sparsity: flat backgrounds with a
//! gentle gradient, and textured blocks built from a fixed set of 2D cosines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::BlockGeometry;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Tensor};
use crate::training::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub block: usize,
    /// Fraction of blocks left flat.
    pub sparse_fraction: f64,
    /// Number of cosine atoms per textured block and channel.
    pub atoms: usize,
    /// Standard deviation of the first atom's coefficient.
    pub amplitude: f64,
    /// Per-atom decay of the coefficient standard deviation.
    pub decay: f64,
    /// Peak-to-peak size of the global gradient.
    pub gradient: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 48,
            width: 48,
            block: 8,
            sparse_fraction: 0.5,
            atoms: 6,
            amplitude: 0.2,
            decay: 0.85,
            gradient: 0.1,
        }
    }
}

/// An image and which of its blocks (row-major) carry texture.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub image: ImageTensor,
    pub textured: Vec<bool>,
}

/// Frequency pairs `(u, v)` of the texture atoms: mid/high frequencies in
/// order of increasing `u + v`, then `u`.
pub fn texture_frequencies(block: usize, count: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (1..block)
        .flat_map(|u| (1..block).map(move |v| (u, v)))
        .filter(|&(u, v)| u + v >= 3)
        .collect();
    pairs.sort_by_key(|&(u, v)| (u + v, u));
    pairs.truncate(count);
    pairs
}

fn cosine(block: usize, u: usize, p: usize) -> f64 {
    (std::f64::consts::PI * (2 * p + 1) as f64 * u as f64 / (2 * block) as f64).cos()
}

/// One synthetic image. Exactly `round((1 - sparse_fraction)·num_blocks)`
/// blocks are textured, picked uniformly at random.
pub fn generate_image<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SynthImage> {
    let geom = BlockGeometry::new(cfg.height, cfg.width, cfg.block)?;
    if !(0.0..=1.0).contains(&cfg.sparse_fraction) {
        return Err(Error::invalid(format!(
            "sparse fraction {} outside [0, 1]",
            cfg.sparse_fraction
        )));
    }
    let freqs = texture_frequencies(cfg.block, cfg.atoms);
    let nblocks = geom.num_blocks();
    let n_tex = ((1.0 - cfg.sparse_fraction) * nblocks as f64).round() as usize;
    let mut order: Vec<usize> = (0..nblocks).collect();
    order.shuffle(rng);
    let mut textured = vec![false; nblocks];
    for &k in &order[..n_tex] {
        textured[k] = true;
    }

    let (h, w, b) = (cfg.height, cfg.width, cfg.block);
    let background: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.3..0.7));
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos() * cfg.gradient, angle.sin() * cfg.gradient);
    let mut data = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let ramp = gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = background[c] + ramp;
            }
        }
    }

    for (k, _) in textured.iter().enumerate().filter(|(_, &t)| t) {
        let (bi, bj) = (k / geom.cols(), k % geom.cols());
        for c in 0..3 {
            let coefs: Vec<f64> = (0..freqs.len())
                .map(|a| {
                    let std = cfg.amplitude * cfg.decay.powi(a as i32);
                    Normal::new(0.0, std).expect("finite std").sample(rng)
                })
                .collect();
            for p in 0..b {
                for q in 0..b {
                    let v: f64 = freqs
                        .iter()
                        .zip(&coefs)
                        .map(|(&(u, v), &a)| a * cosine(b, u, p) * cosine(b, v, q))
                        .sum();
                    data[((bi * b + p) * w + bj * b + q) * 3 + c] += v;
                }
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(SynthImage {
        image: Tensor::from_vec(&[h, w, 3], data)?,
        textured,
    })
}

/// `count` images from one seeded stream.
pub fn generate(cfg: &SynthConfig, count: usize, seed: u64) -> Result<Vec<SynthImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_image(cfg, &mut rng)).collect()
}

/// Train/validation/test split drawn from independent streams of `seed`.
pub fn dataset(
    cfg: &SynthConfig,
    train: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> Result<Dataset> {
    let images = |n, s: u64| -> Result<Vec<ImageTensor>> {
        Ok(generate(cfg, n, seed.wrapping_mul(3).wrapping_add(s))?
            .into_iter()
            .map(|s| s.image)
            .collect())
    };
    Ok(Dataset {
        train: images(train, 0)?,
        val: images(val, 1)?,
        test: images(test, 2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textured_count_is_exact() {
        let cfg = SynthConfig::default();
        let imgs = generate(&cfg, 3, 1).unwrap();
        for s in &imgs {
            assert_eq!(s.textured.iter().filter(|&&t| t).count(), 18);
            assert_eq!(s.image.shape(), &[48, 48, 3]);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn frequencies_skip_low_band() {
        let f = texture_frequencies(8, 6);
        assert_eq!(f.len(), 6);
        assert!(f.iter().all(|&(u, v)| u >= 1 && v >= 1 && u + v >= 3));
    }

    #[test]
    fn flat_blocks_vary_only_by_gradient() {
        let cfg = SynthConfig {
            sparse_fraction: 1.0,
            ..SynthConfig::default()
        };
        let s = &generate(&cfg, 1, 4).unwrap()[0];
        let d = s.image.data();
        let (lo, hi) = d
            .iter()
            .step_by(3)
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi - lo <= std::f64::consts::SQRT_2 * cfg.gradient + 1e-12);
    }

    #[test]
    fn same_seed_same_images() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg, 2, 9).unwrap(), generate(&cfg, 2, 9).unwrap());
    }
}
