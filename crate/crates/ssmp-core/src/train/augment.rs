//! Image and feature perturbations for consistency training.
//!
//! Weak: horizontal flip and a small pad-and-crop jitter. Strong: weak
//! first, then brightness/contrast jitter, channel-mean mixing, and one
//! cutout square. Feature: dropout masking or bounded uniform noise on the
//! image feature row, the variant drawn once per batch. Every draw is
//! seeded by the caller.

use crate::img::Image;
use crate::nn::Tensor;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct AugmentationSpec {
    pub flip_p: f64,
    pub max_pad_crop: usize,
    pub brightness: f64,
    pub contrast: f64,
    pub grayscale_p: f64,
    pub cutout: usize,
    pub feature_dropout_p: f64,
    pub feature_noise_amp: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            flip_p: 0.5,
            max_pad_crop: 4,
            brightness: 0.2,
            contrast: 0.2,
            grayscale_p: 0.2,
            cutout: 16,
            feature_dropout_p: 0.5,
            feature_noise_amp: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturePerturbKind {
    Dropout,
    UniformNoise,
}

impl AugmentationSpec {
    pub fn weak(&self, image: &Image, rng: &mut ChaCha12Rng) -> Image {
        let mut out = image.clone();
        if rng.random_range(0.0..1.0) < self.flip_p {
            out = hflip(&out);
        }
        let pad = self.max_pad_crop.min(image.width / 4);
        if pad > 0 {
            let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
            let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
            out = shift(&out, dx, dy);
        }
        out
    }

    /// Strong augmentation applies the weak transform first, so the weak
    /// perturbation family is contained in the strong one.
    pub fn strong(&self, image: &Image, rng: &mut ChaCha12Rng) -> Image {
        let weak = self.weak(image, rng);
        self.strong_extras(&weak, rng)
    }

    /// The photometric-plus-cutout tail of the strong augmentation, applied
    /// on top of an already weakly-augmented image. Consistency branches
    /// share one weak (geometric) draw per sample: a flipped view belongs
    /// to a mirrored shape, so geometry must agree across branches for
    /// their pseudo-label target to be the same.
    pub fn strong_extras(&self, weakly_augmented: &Image, rng: &mut ChaCha12Rng) -> Image {
        let mut out = weakly_augmented.clone();
        let gain = 1.0 + rng.random_range(-self.contrast..self.contrast);
        let shift_v = rng.random_range(-self.brightness..self.brightness);
        for v in &mut out.data {
            *v = (0.5 + gain * (*v - 0.5) + shift_v).clamp(0.0, 1.0);
        }
        if out.channels > 1 && rng.random_range(0.0..1.0) < self.grayscale_p {
            out = channel_mean(&out);
        } else if out.channels == 1 {
            // grayscale mixing is the identity on single-channel renders;
            // consume the draw to keep the stream layout stable.
            let _ = rng.random_range(0.0..1.0);
        }
        let c = self.cutout.min(out.width / 2).max(1);
        let x0 = rng.random_range(0..out.width.saturating_sub(c).max(1));
        let y0 = rng.random_range(0..out.height.saturating_sub(c).max(1));
        for ch in 0..out.channels {
            for y in y0..(y0 + c).min(out.height) {
                for x in x0..(x0 + c).min(out.width) {
                    out.set(ch, y, x, 0.0);
                }
            }
        }
        out.quantize();
        out
    }

    /// Draws which feature perturbation a batch uses.
    pub fn draw_feature_kind(&self, rng: &mut ChaCha12Rng) -> FeaturePerturbKind {
        if rng.random_range(0..2u8) == 0 {
            FeaturePerturbKind::Dropout
        } else {
            FeaturePerturbKind::UniformNoise
        }
    }

    /// Builds the perturbation of a `1 x D` feature row as (mask, offset):
    /// the perturbed feature is `feat * mask + offset`. Returning the pair
    /// keeps the perturbation differentiable through elementwise ops.
    pub fn feature_perturbation(
        &self,
        feature: &Tensor,
        kind: FeaturePerturbKind,
        rng: &mut ChaCha12Rng,
    ) -> (Tensor, Tensor) {
        let d = feature.len();
        match kind {
            FeaturePerturbKind::Dropout => {
                let mask = Tensor::from_vec(
                    feature.shape(),
                    (0..d)
                        .map(|_| {
                            if rng.random_range(0.0..1.0) < self.feature_dropout_p {
                                0.0
                            } else {
                                1.0
                            }
                        })
                        .collect(),
                );
                (mask, Tensor::zeros(feature.shape()))
            }
            FeaturePerturbKind::UniformNoise => {
                let mean = feature.data().iter().sum::<f64>() / d as f64;
                let var = feature
                    .data()
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / d as f64;
                let std = var.sqrt();
                let amp = self.feature_noise_amp * std;
                let offset = Tensor::from_vec(
                    feature.shape(),
                    (0..d)
                        .map(|_| {
                            if amp > 0.0 {
                                rng.random_range(-amp..amp)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
                (Tensor::filled(feature.shape(), 1.0), offset)
            }
        }
    }
}

fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(c, y, x, img.at(c, y, img.width - 1 - x));
            }
        }
    }
    out
}

/// Zero-padded translation: pad-and-crop collapses to a shift.
fn shift(img: &Image, dx: isize, dy: isize) -> Image {
    let mut out = Image::zeros(img.height, img.width, img.channels);
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                let sx = x as isize - dx;
                let sy = y as isize - dy;
                if sx >= 0 && sx < img.width as isize && sy >= 0 && sy < img.height as isize {
                    out.set(c, y, x, img.at(c, sy as usize, sx as usize));
                }
            }
        }
    }
    out
}

fn channel_mean(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let mean: f64 =
                (0..img.channels).map(|c| img.at(c, y, x)).sum::<f64>() / img.channels as f64;
            for c in 0..img.channels {
                out.set(c, y, x, mean);
            }
        }
    }
    out
}
