//! Seeded synthetic rain: anti-aliased bright streaks added to a clean image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImagePair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainConfig {
    pub streak_count: usize,
    /// Nominal length in pixels; each streak is scaled by a factor in `[0.75, 1.25]`.
    pub streak_length: f64,
    pub streak_width: f64,
    /// Degrees from vertical, in `[-45, 45]`.
    pub angle: f64,
    /// Additive brightness at full coverage, in `[0, 1]`.
    pub intensity: f64,
    pub seed: u64,
}

impl Default for RainConfig {
    fn default() -> Self {
        Self {
            streak_count: 30,
            streak_length: 12.0,
            streak_width: 1.0,
            angle: 0.0,
            intensity: 0.4,
            seed: 0,
        }
    }
}

impl RainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.intensity) || !(-45.0..=45.0).contains(&self.angle) {
            return Err(Error::InvalidConfig(format!(
                "rain intensity must lie in [0, 1] and angle in [-45, 45], got {} and {}",
                self.intensity, self.angle
            )));
        }
        if !(self.streak_length >= 0.0 && self.streak_width > 0.0) {
            return Err(Error::InvalidConfig("streak length/width must be positive".into()));
        }
        Ok(())
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Streak coverage in `[0, 1]` per pixel (max over overlapping streaks).
pub fn rain_coverage(height: usize, width: usize, cfg: &RainConfig) -> Vec<f64> {
    let mut cov = vec![0.0; height * width];
    if height == 0 || width == 0 {
        return cov;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta = cfg.angle.to_radians();
    let dir = (theta.cos(), theta.sin());
    let half_w = cfg.streak_width / 2.0;
    for _ in 0..cfg.streak_count {
        let cr = rng.gen_range(0.0..height as f64);
        let cc = rng.gen_range(0.0..width as f64);
        let len = cfg.streak_length * rng.gen_range(0.75..=1.25);
        let a = (cr - dir.0 * len / 2.0, cc - dir.1 * len / 2.0);
        let b = (cr + dir.0 * len / 2.0, cc + dir.1 * len / 2.0);
        let reach = half_w + 1.0;
        let r0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
        let r1 = ((a.0.max(b.0) + reach).ceil().max(0.0) as usize).min(height - 1);
        let c0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
        let c1 = ((a.1.max(b.1) + reach).ceil().max(0.0) as usize).min(width - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d = segment_distance((r as f64, c as f64), a, b);
                let k = (half_w + 0.5 - d).clamp(0.0, 1.0);
                let slot = &mut cov[r * width + c];
                if k > *slot {
                    *slot = k;
                }
            }
        }
    }
    cov
}

fn add_rain(clean: &Tensor, cov: &[f64], intensity: f64) -> Tensor {
    let mut rainy = clean.clone();
    for c in 0..rainy.channels() {
        for (v, k) in rainy.channel_mut(c).iter_mut().zip(cov) {
            *v = (*v + intensity * k).min(1.0);
        }
    }
    rainy
}

pub fn synthesize_rain(clean: &Tensor, cfg: &RainConfig) -> ImagePair {
    let cov = rain_coverage(clean.height(), clean.width(), cfg);
    ImagePair {
        rainy: add_rain(clean, &cov, cfg.intensity),
        clean: clean.clone(),
        id: format!("rain-{}", cfg.seed),
    }
}

/// Rain on the left half (`col < width / 2`) only.
pub fn synthesize_half_degraded(clean: &Tensor, cfg: &RainConfig) -> ImagePair {
    let (h, w) = (clean.height(), clean.width());
    let mut cov = rain_coverage(h, w, cfg);
    for r in 0..h {
        for c in w / 2..w {
            cov[r * w + c] = 0.0;
        }
    }
    ImagePair {
        rainy: add_rain(clean, &cov, cfg.intensity),
        clean: clean.clone(),
        id: format!("half-rain-{}", cfg.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{ssim, LossConfig};

    fn gray(h: usize, w: usize) -> Tensor {
        Tensor::filled(1, h, w, 0.5)
    }

    #[test]
    fn no_streaks_or_no_intensity_is_identity() {
        let img = gray(32, 32);
        let cfg = RainConfig { streak_count: 0, ..Default::default() };
        assert_eq!(synthesize_rain(&img, &cfg).rainy, img);
        assert_eq!(synthesize_half_degraded(&img, &cfg).rainy, img);
        let cfg = RainConfig { intensity: 0.0, ..Default::default() };
        assert_eq!(synthesize_rain(&img, &cfg).rainy, img);
    }

    #[test]
    fn rain_is_additive_and_bounded() {
        let clean = Tensor::new(1, 40, 40, (0..1600).map(|i| (i % 97) as f64 / 96.0).collect()).unwrap();
        for angle in [-30.0, 0.0, 20.0] {
            let cfg = RainConfig { streak_count: 60, angle, intensity: 0.7, seed: 3, ..Default::default() };
            let pair = synthesize_rain(&clean, &cfg);
            for (r, c) in pair.rainy.data().iter().zip(clean.data()) {
                assert!(r >= c && *r <= 1.0);
            }
            assert_ne!(pair.rainy, clean);
        }
    }

    #[test]
    fn heavy_rain_lowers_ssim() {
        let clean = gray(64, 64);
        let cfg = RainConfig { streak_count: 50, intensity: 0.5, seed: 9, ..Default::default() };
        let pair = synthesize_rain(&clean, &cfg);
        let s = ssim(&pair.rainy, &clean, &LossConfig::default()).unwrap();
        assert!(s < 0.95, "{s}");
    }

    #[test]
    fn half_degraded_leaves_right_half() {
        let clean = Tensor::new(1, 32, 32, (0..1024).map(|i| (i % 13) as f64 / 20.0).collect()).unwrap();
        let cfg = RainConfig { streak_count: 80, intensity: 0.5, seed: 4, ..Default::default() };
        let pair = synthesize_half_degraded(&clean, &cfg);
        let right_rainy = pair.rainy.crop(0, 16, 32, 16);
        let right_clean = clean.crop(0, 16, 32, 16);
        assert_eq!(right_rainy, right_clean);
        let lc = LossConfig::default();
        let left = ssim(&pair.rainy.crop(0, 0, 32, 16), &clean.crop(0, 0, 32, 16), &lc).unwrap();
        let right = ssim(&right_rainy, &right_clean, &lc).unwrap();
        assert_eq!(right, 1.0);
        assert!(left < right);
    }

    #[test]
    fn deterministic_per_seed() {
        let clean = gray(24, 24);
        let cfg = RainConfig { seed: 77, ..Default::default() };
        assert_eq!(synthesize_rain(&clean, &cfg).rainy, synthesize_rain(&clean, &cfg).rainy);
        let other = RainConfig { seed: 78, ..cfg };
        assert_ne!(synthesize_rain(&clean, &cfg).rainy, synthesize_rain(&clean, &other).rainy);
    }

    #[test]
    fn config_validation() {
        assert!(RainConfig::default().validate().is_ok());
        assert!(RainConfig { angle: 60.0, ..Default::default() }.validate().is_err());
        assert!(RainConfig { intensity: 1.5, ..Default::default() }.validate().is_err());
    }
}
