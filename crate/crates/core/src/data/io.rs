//! PGM (P5) and PNG input, PGM output, and the pair manifest format.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

impl Gray8 {
    /// Clamps to `[0, 1]` and rounds `v * 255` half-up. Only channel 0 is used.
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            width: t.width(),
            height: t.height(),
            pixels: t.channel(0).iter().map(|&v| quantize(v)).collect(),
        }
    }

    /// Min-max normalizes every channel independently and tiles them side by side.
    pub fn from_tensor_normalized(t: &Tensor) -> Self {
        let (h, w, c) = (t.height(), t.width(), t.channels());
        let total_w = w * c;
        let mut pixels = vec![0u8; h * total_w];
        for ch in 0..c {
            let plane = t.channel(ch);
            let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..h {
                for col in 0..w {
                    let v = plane[r * w + col];
                    let n = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    pixels[r * total_w + ch * w + col] = quantize(n);
                }
            }
        }
        Self {
            width: total_w,
            height: h,
            pixels,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            1,
            self.height,
            self.width,
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
        .expect("consistent raster")
    }
}

/// `P5\n<w> <h>\n255\n` followed by raw bytes.
pub fn encode_pgm(img: &Gray8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Gray8, String> {
    let mut pos = 0;
    let mut next_token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token()?;
    if magic != "P5" {
        return Err(format!("unsupported PGM magic {magic:?}"));
    }
    let parse = |s: String| s.parse::<usize>().map_err(|_| format!("bad PGM header field {s:?}"));
    let width = parse(next_token()?)?;
    let height = parse(next_token()?)?;
    let maxval = parse(next_token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(format!("PGM raster truncated: need {n} bytes, have {}", bytes.len().saturating_sub(pos)));
    }
    let raw = &bytes[pos..pos + n];
    let pixels = if maxval == 255 {
        raw.to_vec()
    } else {
        raw.iter()
            .map(|&v| quantize(v.min(maxval as u8) as f64 / maxval as f64))
            .collect()
    };
    Ok(Gray8 { width, height, pixels })
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Gray8) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn save_pgm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_pgm(path, &Gray8::from_tensor(t))
}

const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads an 8-bit PGM or PNG as a single-channel tensor in `[0, 1]`.
///
/// Color PNGs are reduced by luma `0.299 R + 0.587 G + 0.114 B`.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes)
            .map(|g| g.to_tensor())
            .map_err(|m| Error::image(path, m));
    }
    if bytes.starts_with(PNG_SIGNATURE) {
        return decode_png(&bytes).map_err(|m| Error::image(path, m));
    }
    Err(Error::image(path, "unsupported image format (expected PGM P5 or PNG)"))
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    use image::DynamicImage;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
            })
            .collect(),
    };
    Tensor::new(1, h, w, data).map_err(|e| e.to_string())
}

/// One line per pair: `rainy_path<TAB>clean_path`. Relative paths resolve
/// against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(rainy), Some(clean), None) => pairs.push((base.join(rainy), base.join(clean))),
            _ => {
                return Err(Error::image(
                    path,
                    format!("line {}: expected rainy_path<TAB>clean_path", lineno + 1),
                ))
            }
        }
    }
    Ok(pairs)
}

pub fn write_manifest(path: impl AsRef<Path>, pairs: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (rainy, clean) in pairs {
        text.push_str(rainy);
        text.push('\t');
        text.push_str(clean);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_is_bit_exact() {
        let img = Gray8 {
            width: 3,
            height: 2,
            pixels: vec![0, 1, 2, 253, 254, 255],
        };
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn quantization_rounds_half_up() {
        let t = Tensor::from_rows(&[[0.0, 1.0, 0.5, 2.0, -1.0, 127.5 / 255.0]]);
        assert_eq!(Gray8::from_tensor(&t).pixels, vec![0, 255, 128, 255, 0, 128]);
    }

    #[test]
    fn decode_with_comments_and_maxval() {
        let mut bytes = b"P5\n# made by hand\n2 1\n15\n".to_vec();
        bytes.extend_from_slice(&[0, 15]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels, vec![0, 255]);
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00").is_err());
    }

    #[test]
    fn load_pgm_png_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let black = dir.path().join("black.pgm");
        write_pgm(&black, &Gray8 { width: 4, height: 4, pixels: vec![0; 16] }).unwrap();
        assert_eq!(load_grayscale(&black).unwrap(), Tensor::zeros(1, 4, 4));

        let white = dir.path().join("white.pgm");
        write_pgm(&white, &Gray8 { width: 1, height: 1, pixels: vec![255] }).unwrap();
        assert_eq!(load_grayscale(&white).unwrap().data(), &[1.0]);

        let red = dir.path().join("red.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0])).save(&red).unwrap();
        let t = load_grayscale(&red).unwrap();
        assert!(t.data().iter().all(|&v| (v - 0.299).abs() < 1e-12));

        let gray = dir.path().join("gray.png");
        image::GrayImage::from_pixel(3, 2, image::Luma([51])).save(&gray).unwrap();
        let t = load_grayscale(&gray).unwrap();
        assert_eq!(t.shape(), (1, 2, 3));
        assert!(t.data().iter().all(|&v| v == 0.2));

        let junk = dir.path().join("junk.bin");
        fs::write(&junk, b"hello").unwrap();
        let err = load_grayscale(&junk).unwrap_err().to_string();
        assert!(err.contains("junk.bin"), "{err}");
        assert!(load_grayscale(dir.path().join("missing.pgm")).is_err());
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.tsv");
        write_manifest(&m, &[("r0.pgm".into(), "c0.pgm".into()), ("r1.pgm".into(), "c1.pgm".into())]).unwrap();
        let pairs = read_manifest(&m).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].0, dir.path().join("r1.pgm"));
        fs::write(&m, "only-one-column\n").unwrap();
        assert!(read_manifest(&m).is_err());
    }
}
