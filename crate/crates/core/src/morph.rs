//! Gray-scale dilation and erosion with trainable structuring elements.
//!
//! Both operators cover the same spatial window around an output pixel: for an
//! `a x b` element the window spans rows `x - (a-1)/2 ..= x + a/2` (columns
//! likewise), matching the anchor of the even-sized convolutions in
//! [`crate::convnet`]. Dilation indexes the element reflected
//! (`I(x - i + a/2) + W(i)`), erosion directly (`I(x + i - (a-1)/2) - W(i)`), so
//! `erode(I, W) == -dilate(-I, reflect(W))` holds exactly for every size.
//!
//! Positions outside the image never take part in the max/min. Ties go to the
//! lowest `(i, j)` and the backward pass routes each output pixel's gradient to
//! that single winner.

use serde::{Deserialize, Serialize};

use crate::data::io::Gray8;
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphKind {
    Dilation,
    Erosion,
}

impl MorphKind {
    pub fn complement(self) -> Self {
        match self {
            MorphKind::Dilation => MorphKind::Erosion,
            MorphKind::Erosion => MorphKind::Dilation,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MorphKind::Dilation => "dilation",
            MorphKind::Erosion => "erosion",
        }
    }
}

/// A trainable `rows x cols` structuring element.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuringElement {
    rows: usize,
    cols: usize,
    pub param: Param,
}

impl StructuringElement {
    pub fn new(rows: usize, cols: usize, weights: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("structuring element must be at least 1x1".into()));
        }
        if weights.len() != rows * cols {
            return Err(Error::DataLength {
                len: weights.len(),
                shape: (1, rows, cols),
            });
        }
        Ok(Self {
            rows,
            cols,
            param: Param::new(weights),
        })
    }

    /// Flat element of constant height `value`.
    pub fn flat(rows: usize, cols: usize, value: f32) -> Self {
        Self::new(rows.max(1), cols.max(1), vec![value; rows.max(1) * cols.max(1)])
            .expect("valid flat element")
    }

    /// The 1x1 zero element: identity for both operators.
    pub fn identity() -> Self {
        Self::flat(1, 1, 0.0)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.param.value[i * self.cols + j] as f64
    }

    pub fn weights(&self) -> &[f32] {
        &self.param.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.param.grad
    }

    /// 180 degree rotation of the grid. Gradient and moments are reset.
    pub fn reflect(&self) -> Self {
        let w: Vec<f32> = self.param.value.iter().rev().copied().collect();
        Self::new(self.rows, self.cols, w).expect("same shape")
    }

    fn top(&self) -> usize {
        (self.rows - 1) / 2
    }

    fn left(&self) -> usize {
        (self.cols - 1) / 2
    }
}

/// Forward state needed to route gradients through one dilation or erosion.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphTape {
    pub kind: MorphKind,
    pub height: usize,
    pub width: usize,
    pub se_rows: usize,
    pub se_cols: usize,
    /// Winning flat element index `i * se_cols + j` per output pixel.
    pub arg_index: Vec<u32>,
}

impl MorphTape {
    /// Input pixel `(row, col)` read by the winner at output `(x, y)`.
    #[inline]
    pub fn source(&self, x: usize, y: usize) -> (usize, usize) {
        let idx = self.arg_index[x * self.width + y] as usize;
        let (i, j) = (idx / self.se_cols, idx % self.se_cols);
        match self.kind {
            MorphKind::Dilation => (x + self.se_rows / 2 - i, y + self.se_cols / 2 - j),
            MorphKind::Erosion => (x + i - (self.se_rows - 1) / 2, y + j - (self.se_cols - 1) / 2),
        }
    }
}

fn check_input(input: &Tensor, se: &StructuringElement) -> Result<()> {
    if input.channels() != 1 {
        return Err(Error::NotSingleChannel(input.channels()));
    }
    let (h, w) = (input.height(), input.width());
    if h == 0 || w == 0 {
        return Err(Error::Empty);
    }
    if se.rows > 2 * h + 1 || se.cols > 2 * w + 1 {
        return Err(Error::SeTooLarge {
            se_rows: se.rows,
            se_cols: se.cols,
            height: h,
            width: w,
        });
    }
    Ok(())
}

fn morph_forward(input: &Tensor, se: &StructuringElement, kind: MorphKind) -> Result<(Tensor, MorphTape)> {
    check_input(input, se)?;
    let (h, w) = (input.height(), input.width());
    let (a, b) = (se.rows, se.cols);
    let (top, left) = (se.top() as isize, se.left() as isize);
    let (bottom, right) = ((a / 2) as isize, (b / 2) as isize);
    let src = input.data();
    let weights: Vec<f64> = se.param.value.iter().map(|&v| v as f64).collect();

    let mut out = vec![0.0; h * w];
    let mut arg = vec![0u32; h * w];

    for x in 0..h as isize {
        for y in 0..w as isize {
            let mut best = match kind {
                MorphKind::Dilation => f64::NEG_INFINITY,
                MorphKind::Erosion => f64::INFINITY,
            };
            let mut best_idx = u32::MAX;
            for i in 0..a as isize {
                let r = match kind {
                    MorphKind::Dilation => x + bottom - i,
                    MorphKind::Erosion => x + i - top,
                };
                if r < 0 || r >= h as isize {
                    continue;
                }
                let row = &src[r as usize * w..(r as usize + 1) * w];
                for j in 0..b as isize {
                    let c = match kind {
                        MorphKind::Dilation => y + right - j,
                        MorphKind::Erosion => y + j - left,
                    };
                    if c < 0 || c >= w as isize {
                        continue;
                    }
                    let k = (i * b as isize + j) as usize;
                    match kind {
                        MorphKind::Dilation => {
                            let v = row[c as usize] + weights[k];
                            if v > best {
                                best = v;
                                best_idx = k as u32;
                            }
                        }
                        MorphKind::Erosion => {
                            let v = row[c as usize] - weights[k];
                            if v < best {
                                best = v;
                                best_idx = k as u32;
                            }
                        }
                    }
                }
            }
            debug_assert!(best_idx != u32::MAX, "window always contains the pixel itself");
            let p = x as usize * w + y as usize;
            out[p] = best;
            arg[p] = best_idx;
        }
    }

    let tape = MorphTape {
        kind,
        height: h,
        width: w,
        se_rows: a,
        se_cols: b,
        arg_index: arg,
    };
    Ok((Tensor::new(1, h, w, out)?, tape))
}

/// Gray-scale dilation: `max_{i,j} I(x - i + a/2, y - j + b/2) + W(i, j)`.
pub fn dilate(input: &Tensor, se: &StructuringElement) -> Result<(Tensor, MorphTape)> {
    morph_forward(input, se, MorphKind::Dilation)
}

/// Gray-scale erosion: `min_{i,j} I(x + i - (a-1)/2, y + j - (b-1)/2) - W(i, j)`.
pub fn erode(input: &Tensor, se: &StructuringElement) -> Result<(Tensor, MorphTape)> {
    morph_forward(input, se, MorphKind::Erosion)
}

pub fn apply(input: &Tensor, se: &StructuringElement, kind: MorphKind) -> Result<(Tensor, MorphTape)> {
    morph_forward(input, se, kind)
}

/// Routes `upstream` through the recorded winners.
///
/// Accumulates into `se.param.grad` (`+=` for dilation, `-=` for erosion) and
/// returns the gradient with respect to the forward input.
pub fn morph_backward(tape: &MorphTape, se: &mut StructuringElement, upstream: &Tensor) -> Result<Tensor> {
    if upstream.shape() != (1, tape.height, tape.width) {
        return Err(Error::TapeMismatch(format!(
            "upstream gradient {:?} vs forward output {:?}",
            upstream.shape(),
            (1, tape.height, tape.width)
        )));
    }
    if (se.rows, se.cols) != (tape.se_rows, tape.se_cols) {
        return Err(Error::TapeMismatch(format!(
            "structuring element {}x{} vs recorded {}x{}",
            se.rows, se.cols, tape.se_rows, tape.se_cols
        )));
    }
    let w = tape.width;
    let up = upstream.data();
    let mut input_grad = vec![0.0; tape.height * w];
    let sign = match tape.kind {
        MorphKind::Dilation => 1.0,
        MorphKind::Erosion => -1.0,
    };
    for x in 0..tape.height {
        for y in 0..w {
            let g = up[x * w + y];
            if g == 0.0 {
                continue;
            }
            let (r, c) = tape.source(x, y);
            input_grad[r * w + c] += g;
            se.param.grad[tape.arg_index[x * w + y] as usize] += sign * g;
        }
    }
    Tensor::new(1, tape.height, w, input_grad)
}

/// Applies one structuring element per output channel.
///
/// A single input channel is broadcast to every element; otherwise element `k`
/// acts on channel `k` and the channel counts must agree.
pub fn multichannel_layer(
    input: &Tensor,
    ses: &[StructuringElement],
    kind: MorphKind,
) -> Result<(Tensor, Vec<MorphTape>)> {
    let c_in = input.channels();
    let c_out = ses.len();
    if c_out == 0 || (c_in != 1 && c_in != c_out) {
        return Err(Error::ChannelMismatch {
            expected: c_out,
            actual: c_in,
        });
    }
    let mut maps = Vec::with_capacity(c_out);
    let mut tapes = Vec::with_capacity(c_out);
    for (k, se) in ses.iter().enumerate() {
        let src = input.channel_tensor(if c_in == 1 { 0 } else { k });
        let (out, tape) = apply(&src, se, kind)?;
        maps.push(out);
        tapes.push(tape);
    }
    Ok((Tensor::stack(&maps)?, tapes))
}

/// Backward of [`multichannel_layer`]; broadcast inputs receive the sum over
/// output channels.
pub fn multichannel_backward(
    tapes: &[MorphTape],
    ses: &mut [StructuringElement],
    upstream: &Tensor,
    in_channels: usize,
) -> Result<Tensor> {
    if tapes.len() != ses.len() || upstream.channels() != ses.len() {
        return Err(Error::TapeMismatch(format!(
            "{} tapes, {} elements, {} gradient channels",
            tapes.len(),
            ses.len(),
            upstream.channels()
        )));
    }
    let (h, w) = (upstream.height(), upstream.width());
    let mut grad = Tensor::zeros(in_channels, h, w);
    for (k, (tape, se)) in tapes.iter().zip(ses.iter_mut()).enumerate() {
        let g = morph_backward(tape, se, &upstream.channel_tensor(k))?;
        let dst = grad.channel_mut(if in_channels == 1 { 0 } else { k });
        for (d, s) in dst.iter_mut().zip(g.data()) {
            *d += *s;
        }
    }
    Ok(grad)
}

/// Min-max normalized 8-bit rendering of an element; a constant element
/// renders as uniform 128.
pub fn export_se_image(se: &StructuringElement) -> Gray8 {
    let w = se.weights();
    let lo = w.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = w.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let pixels = w
        .iter()
        .map(|&v| {
            if hi > lo {
                let t = (v as f64 - lo) / (hi - lo);
                (t * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect();
    Gray8 {
        width: se.cols,
        height: se.rows,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        Tensor::new(1, h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn random_se(rng: &mut ChaCha8Rng, a: usize, b: usize) -> StructuringElement {
        StructuringElement::new(a, b, (0..a * b).map(|_| rng.gen_range(-0.5f32..0.5)).collect()).unwrap()
    }

    /// Straight-line dilation/erosion over an explicit window, for comparison.
    fn brute(input: &Tensor, se: &StructuringElement, kind: MorphKind) -> Tensor {
        let (h, w) = (input.height() as isize, input.width() as isize);
        let (a, b) = (se.rows() as isize, se.cols() as isize);
        let mut out = Tensor::zeros(1, h as usize, w as usize);
        for x in 0..h {
            for y in 0..w {
                let mut vals = Vec::new();
                for i in 0..a {
                    for j in 0..b {
                        let (r, c) = match kind {
                            MorphKind::Dilation => (x - i + a / 2, y - j + b / 2),
                            MorphKind::Erosion => (x + i - (a - 1) / 2, y + j - (b - 1) / 2),
                        };
                        if r >= 0 && r < h && c >= 0 && c < w {
                            let v = input.get(0, r as usize, c as usize);
                            let wt = se.weight(i as usize, j as usize);
                            vals.push(match kind {
                                MorphKind::Dilation => v + wt,
                                MorphKind::Erosion => v - wt,
                            });
                        }
                    }
                }
                let v = match kind {
                    MorphKind::Dilation => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    MorphKind::Erosion => vals.iter().copied().fold(f64::INFINITY, f64::min),
                };
                out.set(0, x as usize, y as usize, v);
            }
        }
        out
    }

    #[test]
    fn identity_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 5, 7);
        assert_eq!(dilate(&img, &StructuringElement::identity()).unwrap().0, img);
        assert_eq!(erode(&img, &StructuringElement::identity()).unwrap().0, img);
        let shifted = dilate(&img, &StructuringElement::flat(1, 1, 0.25)).unwrap().0;
        assert_eq!(shifted, img.add_scalar(0.25f32 as f64));
    }

    #[test]
    fn spike_dilation_and_pit_erosion() {
        let spike = Tensor::from_rows(&[[0.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 0.0]]);
        let se = StructuringElement::flat(3, 3, 0.0);
        assert_eq!(dilate(&spike, &se).unwrap().0, Tensor::filled(1, 3, 3, 5.0));
        let pit = Tensor::from_rows(&[[9.0, 9.0, 9.0], [9.0, 2.0, 9.0], [9.0, 9.0, 9.0]]);
        assert_eq!(erode(&pit, &se).unwrap().0, Tensor::filled(1, 3, 3, 2.0));
    }

    #[test]
    fn matches_brute_force_including_even_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(a, b) in &[(1, 1), (2, 3), (3, 3), (4, 4), (5, 2), (8, 8)] {
            let img = random_image(&mut rng, 9, 11);
            let se = random_se(&mut rng, a, b);
            for kind in [MorphKind::Dilation, MorphKind::Erosion] {
                assert_eq!(apply(&img, &se, kind).unwrap().0, brute(&img, &se, kind), "{a}x{b} {kind:?}");
            }
        }
    }

    #[test]
    fn duality_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(a, b) in &[(3, 3), (4, 4), (2, 5)] {
            let img = random_image(&mut rng, 5, 5);
            let se = random_se(&mut rng, a, b);
            let e = erode(&img, &se).unwrap().0;
            let d = dilate(&img.neg(), &se.reflect()).unwrap().0.neg();
            assert_eq!(e, d);
        }
    }

    #[test]
    fn tape_reconstructs_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 6, 6);
        let se = random_se(&mut rng, 4, 3);
        for kind in [MorphKind::Dilation, MorphKind::Erosion] {
            let (out, tape) = apply(&img, &se, kind).unwrap();
            for x in 0..6 {
                for y in 0..6 {
                    let idx = tape.arg_index[x * 6 + y] as usize;
                    assert!(idx < 12);
                    let (r, c) = tape.source(x, y);
                    let wt = se.weights()[idx] as f64;
                    let v = match kind {
                        MorphKind::Dilation => img.get(0, r, c) + wt,
                        MorphKind::Erosion => img.get(0, r, c) - wt,
                    };
                    assert_eq!(v, out.get(0, x, y));
                }
            }
        }
    }

    #[test]
    fn ties_break_to_lowest_offset() {
        let img = Tensor::filled(1, 3, 3, 1.0);
        let (_, tape) = dilate(&img, &StructuringElement::flat(3, 3, 0.0)).unwrap();
        // Center pixel: every offset is valid, (0, 0) wins.
        assert_eq!(tape.arg_index[4], 0);
        // Bottom-right corner: offsets with i == 0 or j == 0 read row/col 3, out of bounds.
        assert_eq!(tape.arg_index[8], 4);
    }

    #[test]
    fn identity_backward_routes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 4, 5);
        let up = random_image(&mut rng, 4, 5);
        for kind in [MorphKind::Dilation, MorphKind::Erosion] {
            let mut se = StructuringElement::identity();
            let (_, tape) = apply(&img, &se, kind).unwrap();
            let g = morph_backward(&tape, &mut se, &up).unwrap();
            assert_eq!(g, up);
        }
    }

    #[test]
    fn spike_backward_hand_trace() {
        let spike = Tensor::from_rows(&[[0.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 0.0]]);
        let mut se = StructuringElement::flat(3, 3, 0.0);
        let (_, tape) = dilate(&spike, &se).unwrap();
        let up = Tensor::new(1, 3, 3, (1..=9).map(|v| v as f64).collect()).unwrap();
        let g = morph_backward(&tape, &mut se, &up).unwrap();
        // All gradient lands on the spike.
        let mut expected = Tensor::zeros(1, 3, 3);
        expected.set(0, 1, 1, 45.0);
        assert_eq!(g, expected);
        assert_eq!(g.sum(), up.sum());
        // Output (x, y) reads the spike through offset (x, y).
        for x in 0..3 {
            for y in 0..3 {
                let idx = x * 3 + y;
                assert_eq!(se.grad()[idx], up.get(0, x, y));
            }
        }
        assert_eq!(se.grad().iter().sum::<f64>(), 45.0);
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let img = Tensor::zeros(1, 3, 3);
        let mut se = StructuringElement::flat(3, 3, 0.0);
        let (_, tape) = dilate(&img, &se).unwrap();
        assert!(morph_backward(&tape, &mut se, &Tensor::zeros(1, 3, 4)).is_err());
        let mut other = StructuringElement::flat(2, 2, 0.0);
        assert!(morph_backward(&tape, &mut other, &Tensor::zeros(1, 3, 3)).is_err());
    }

    #[test]
    fn se_too_large_rejected() {
        let img = Tensor::zeros(1, 2, 2);
        assert!(matches!(
            dilate(&img, &StructuringElement::flat(6, 1, 0.0)),
            Err(Error::SeTooLarge { .. })
        ));
        assert!(dilate(&img, &StructuringElement::flat(5, 5, 0.0)).is_ok());
        assert!(matches!(
            dilate(&Tensor::zeros(2, 2, 2), &StructuringElement::identity()),
            Err(Error::NotSingleChannel(2))
        ));
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 6, 6);
        let up = random_image(&mut rng, 6, 6);
        let h = 1e-4;
        for kind in [MorphKind::Dilation, MorphKind::Erosion] {
            let mut se = random_se(&mut rng, 3, 3);
            let (_, tape) = apply(&img, &se, kind).unwrap();
            morph_backward(&tape, &mut se, &up).unwrap();
            for k in 0..9 {
                let objective = |delta: f32| {
                    let mut s = se.clone();
                    s.param.value[k] += delta;
                    let actual = s.param.value[k] as f64 - se.param.value[k] as f64;
                    let out = apply(&img, &s, kind).unwrap().0;
                    (out.elementwise_mul(&up).unwrap().sum(), actual)
                };
                let (fp, dp) = objective(h);
                let (fm, dm) = objective(-h);
                let fd = (fp - fm) / (dp - dm);
                let an = se.grad()[k];
                let denom = an.abs().max(fd.abs()).max(1e-8);
                assert!((an - fd).abs() / denom < 1e-4, "{kind:?} k={k}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn multichannel_broadcast_and_channelwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_image(&mut rng, 6, 6);
        let ses: Vec<_> = (0..4).map(|_| random_se(&mut rng, 3, 3)).collect();
        let (out, tapes) = multichannel_layer(&img, &ses, MorphKind::Dilation).unwrap();
        assert_eq!(out.channels(), 4);
        assert_eq!(tapes.len(), 4);
        for (k, se) in ses.iter().enumerate() {
            assert_eq!(out.channel_tensor(k), dilate(&img, se).unwrap().0);
        }

        let ids = vec![StructuringElement::identity(); 4];
        assert_eq!(multichannel_layer(&out, &ids, MorphKind::Erosion).unwrap().0, out);

        let flats: Vec<_> = (0..4).map(|k| StructuringElement::flat(3, 3, k as f32 * 0.1)).collect();
        let (o2, _) = multichannel_layer(&out, &flats, MorphKind::Dilation).unwrap();
        for (k, se) in flats.iter().enumerate() {
            assert_eq!(o2.channel_tensor(k), brute(&out.channel_tensor(k), se, MorphKind::Dilation));
        }

        let three = Tensor::zeros(3, 6, 6);
        assert!(matches!(
            multichannel_layer(&three, &ses, MorphKind::Dilation),
            Err(Error::ChannelMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn broadcast_backward_sums_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = random_image(&mut rng, 5, 5);
        let mut ses = vec![StructuringElement::identity(); 3];
        let (_, tapes) = multichannel_layer(&img, &ses, MorphKind::Dilation).unwrap();
        let up = Tensor::filled(3, 5, 5, 1.0);
        let g = multichannel_backward(&tapes, &mut ses, &up, 1).unwrap();
        assert_eq!(g, Tensor::filled(1, 5, 5, 3.0));
    }

    #[test]
    fn export_normalization() {
        let img = export_se_image(&StructuringElement::new(1, 2, vec![-1.0, 1.0]).unwrap());
        assert_eq!(img.pixels, vec![0, 255]);
        let img = export_se_image(&StructuringElement::flat(2, 2, 0.3));
        assert_eq!(img.pixels, vec![128; 4]);
        let img = export_se_image(&StructuringElement::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap());
        assert_eq!(img.pixels, vec![0, 128, 255]);
        assert_eq!((img.width, img.height), (3, 1));
    }
}
