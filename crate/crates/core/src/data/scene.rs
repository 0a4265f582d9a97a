//! Procedural clean images: a linear ramp background with rectangles and
//! gaussian blobs. Levels stay within `[0.05, 0.75]` to leave headroom for
//! additive rain.

use rand::Rng;

use crate::tensor::Tensor;

pub fn procedural_scene<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Tensor {
    let (h, w) = (height as f64, width as f64);
    let base = rng.gen_range(0.15..0.45);
    let tilt_r = rng.gen_range(-0.2..0.2);
    let tilt_c = rng.gen_range(-0.2..0.2);
    let mut img = Tensor::zeros(1, height, width);
    for r in 0..height {
        for c in 0..width {
            let v = base + tilt_r * (r as f64 / h - 0.5) + tilt_c * (c as f64 / w - 0.5);
            img.set(0, r, c, v);
        }
    }

    let rects = rng.gen_range(2..=4);
    for _ in 0..rects {
        let rh = rng.gen_range(h * 0.15..h * 0.5);
        let rw = rng.gen_range(w * 0.15..w * 0.5);
        let r0 = rng.gen_range(0.0..h - rh);
        let c0 = rng.gen_range(0.0..w - rw);
        let level = rng.gen_range(0.1..0.7);
        for r in r0.ceil() as usize..(r0 + rh) as usize {
            for c in c0.ceil() as usize..(c0 + rw) as usize {
                img.set(0, r, c, level);
            }
        }
    }

    let blobs = rng.gen_range(1..=3);
    for _ in 0..blobs {
        let cr = rng.gen_range(0.0..h);
        let cc = rng.gen_range(0.0..w);
        let sigma = rng.gen_range(0.05..0.15) * h.min(w);
        let amp = rng.gen_range(-0.2..0.2);
        for r in 0..height {
            for c in 0..width {
                let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                let v = img.get(0, r, c) + amp * (-d2 / (2.0 * sigma * sigma)).exp();
                img.set(0, r, c, v);
            }
        }
    }

    img.map(|v| v.clamp(0.05, 0.75))
}
