//! Seeded synthetic datasets of procedural scenes with additive rain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{procedural_scene, synthesize_half_degraded, synthesize_rain, ImagePair, RainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Streak parameters; `seed` is replaced per image.
    pub rain: RainConfig,
    /// Each image draws its angle uniformly from `rain.angle +- angle_spread`.
    pub angle_spread: f64,
    /// Rain on the left half only.
    pub half: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 10,
            size: 64,
            seed: 0,
            rain: RainConfig::default(),
            angle_spread: 0.0,
            half: false,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::InvalidConfig(format!("image size must be at least 2, got {}", self.size)));
        }
        if self.angle_spread.is_nan() || self.angle_spread < 0.0 {
            return Err(Error::InvalidConfig("angle spread must be non-negative".into()));
        }
        self.rain.validate()
    }

    /// Rain settings used for image `index`.
    pub fn rain_for(&self, index: usize) -> RainConfig {
        let mut rng = self.rng(index);
        let _ = procedural_scene(self.size, self.size, &mut rng);
        self.draw_rain(&mut rng)
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64))
    }

    fn draw_rain(&self, rng: &mut ChaCha8Rng) -> RainConfig {
        let angle = if self.angle_spread > 0.0 {
            rng.gen_range(self.rain.angle - self.angle_spread..=self.rain.angle + self.angle_spread)
        } else {
            self.rain.angle
        };
        RainConfig {
            angle: angle.clamp(-45.0, 45.0),
            seed: rng.gen(),
            ..self.rain
        }
    }

    /// Generates image `index`; ids are `synth_XXXX`.
    pub fn pair(&self, index: usize) -> ImagePair {
        let mut rng = self.rng(index);
        let clean = procedural_scene(self.size, self.size, &mut rng);
        let rain = self.draw_rain(&mut rng);
        let mut pair = if self.half {
            synthesize_half_degraded(&clean, &rain)
        } else {
            synthesize_rain(&clean, &rain)
        };
        pair.id = format!("synth_{index:04}");
        pair
    }

    pub fn generate(&self) -> Result<Vec<ImagePair>> {
        self.validate()?;
        Ok((0..self.count).map(|i| self.pair(i)).collect())
    }
}
