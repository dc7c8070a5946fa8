use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Photometric and geometric jitter applied to training frames.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Range of the crop area as a fraction of the frame, within (0, 1].
    pub crop_scale: (f32, f32),
    pub noise_std: f32,
    /// Additive brightness offset drawn from `±brightness`.
    pub brightness: f32,
    /// Multiplicative contrast factor range around the frame mean.
    pub contrast: (f32, f32),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale: (0.5, 1.0),
            noise_std: 0.05,
            brightness: 0.2,
            contrast: (0.7, 1.3),
        }
    }
}

impl AugmentConfig {
    /// No-op configuration.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            noise_std: 0.0,
            brightness: 0.0,
            contrast: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop scale range must lie in (0, 1], got ({lo}, {hi})"
            )));
        }
        if !(self.noise_std >= 0.0) || !(self.brightness >= 0.0) {
            return Err(Error::Config("noise_std and brightness must be nonnegative".into()));
        }
        let (clo, chi) = self.contrast;
        if !(clo > 0.0 && clo <= chi) {
            return Err(Error::Config(format!("bad contrast range ({clo}, {chi})")));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Random resized crop (bilinear, back to full size), brightness/contrast
/// jitter and clipped Gaussian noise. Deterministic given `seed`.
pub fn augment(frame: &[f32], height: usize, width: usize, cfg: &AugmentConfig, seed: u64) -> Vec<f32> {
    let mut rng = stream(seed, &[]);
    let area = uniform(&mut rng, cfg.crop_scale);
    let side = area.sqrt();
    let (ch, cw) = (side * height as f32, side * width as f32);
    let y0 = uniform(&mut rng, (0.0, height as f32 - ch));
    let x0 = uniform(&mut rng, (0.0, width as f32 - cw));

    let mut out = vec![0.0f32; height * width];
    for r in 0..height {
        let sy = (y0 + (r as f32 + 0.5) * ch / height as f32 - 0.5).clamp(0.0, (height - 1) as f32);
        let r0 = sy.floor() as usize;
        let r1 = (r0 + 1).min(height - 1);
        let fy = sy - r0 as f32;
        for c in 0..width {
            let sx = (x0 + (c as f32 + 0.5) * cw / width as f32 - 0.5).clamp(0.0, (width - 1) as f32);
            let c0 = sx.floor() as usize;
            let c1 = (c0 + 1).min(width - 1);
            let fx = sx - c0 as f32;
            let top = frame[r0 * width + c0] * (1.0 - fx) + frame[r0 * width + c1] * fx;
            let bot = frame[r1 * width + c0] * (1.0 - fx) + frame[r1 * width + c1] * fx;
            out[r * width + c] = top * (1.0 - fy) + bot * fy;
        }
    }

    let contrast = uniform(&mut rng, cfg.contrast);
    let shift = uniform(&mut rng, (-cfg.brightness, cfg.brightness));
    if contrast != 1.0 || shift != 0.0 {
        let mean = out.iter().sum::<f32>() / out.len() as f32;
        for v in out.iter_mut() {
            *v = (*v - mean) * contrast + mean + shift;
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("valid std");
        for v in out.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in out.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> Vec<f32> {
        (0..16 * 16).map(|i| ((i * 7919) % 97) as f32 / 96.0).collect()
    }

    #[test]
    fn zero_strength_is_identity() {
        let f = frame();
        let out = augment(&f, 16, 16, &AugmentConfig::identity(), 3);
        for (a, b) in f.iter().zip(&out) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn outputs_stay_in_range_and_depend_on_seed() {
        let f = frame();
        let cfg = AugmentConfig {
            noise_std: 0.3,
            brightness: 0.5,
            ..AugmentConfig::default()
        };
        let a = augment(&f, 16, 16, &cfg, 1);
        let b = augment(&f, 16, 16, &cfg, 2);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        let diff: f32 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f32>() / a.len() as f32;
        assert!(diff > 0.0);
        assert_eq!(a, augment(&f, 16, 16, &cfg, 1));
    }

    #[test]
    fn validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            crop_scale: (0.0, 1.0),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            noise_std: -1.0,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
