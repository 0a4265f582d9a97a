use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source coordinate for output index `i` under corner-aligned sampling.
#[inline]
fn source_coord(i: usize, in_len: usize, out_len: usize) -> f64 {
    if out_len == 1 {
        (in_len - 1) as f64 / 2.0
    } else {
        i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    }
}

/// Bilinear resize with corner-aligned sampling (output corners land exactly on
/// input corners). Applied per channel.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig(format!("resize target {out_h}x{out_w} has a zero dimension")));
    }
    let (h, w) = (img.height(), img.width());
    if h == 0 || w == 0 {
        return Err(Error::Empty);
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let mut out = Tensor::zeros(img.channels(), out_h, out_w);
    for c in 0..img.channels() {
        let src = img.channel(c);
        let dst = out.channel_mut(c);
        for r in 0..out_h {
            let sr = source_coord(r, h, out_h);
            let r0 = (sr.floor() as usize).min(h - 1);
            let r1 = (r0 + 1).min(h - 1);
            let fr = sr - r0 as f64;
            for q in 0..out_w {
                let sc = source_coord(q, w, out_w);
                let c0 = (sc.floor() as usize).min(w - 1);
                let c1 = (c0 + 1).min(w - 1);
                let fc = sc - c0 as f64;
                let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
                let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
                dst[r * out_w + q] = top * (1.0 - fr) + bot * fr;
            }
        }
    }
    Ok(out)
}
