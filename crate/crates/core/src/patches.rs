//! Patch extraction, the pre-processing chain (center-weighting mask and
//! Laplacian sharpening), border mirroring and over-exposure augmentation.

use crate::error::Error;
use crate::imageio::GrayImage;
use crate::linalg::DenseMatrix;
use crate::scalar::{real, Real};
use crate::Result;

/// Where a patch came from and, for training data, its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchMeta {
    pub row: usize,
    pub col: usize,
    pub class: Option<usize>,
}

/// A set of vectorized square patches.
///
/// Logically a `dim x count` matrix whose columns are patches; the backing
/// storage is sample-major (one contiguous row per patch) because every hot
/// loop walks whole samples. [`PatchSet::data`] materializes the column view.
#[derive(Debug, Clone)]
pub struct PatchSet<T> {
    dim: usize,
    samples: DenseMatrix<T>,
    meta: Vec<PatchMeta>,
}

impl<T: Real> PatchSet<T> {
    pub fn from_samples(dim: usize, samples: DenseMatrix<T>, meta: Vec<PatchMeta>) -> Self {
        assert_eq!(samples.cols(), dim);
        assert_eq!(samples.rows(), meta.len());
        Self { dim, samples, meta }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.meta.len()
    }

    /// Patch `i` as a contiguous slice.
    #[inline]
    pub fn sample(&self, i: usize) -> &[T] {
        self.samples.row(i)
    }

    pub fn meta(&self) -> &[PatchMeta] {
        &self.meta
    }

    /// The `dim x count` column-per-patch matrix.
    pub fn data(&self) -> DenseMatrix<T> {
        self.samples.transposed()
    }

    /// Sample-major view (`count x dim`, one row per patch).
    pub fn samples(&self) -> &DenseMatrix<T> {
        &self.samples
    }

    pub fn set_class(&mut self, class: usize) {
        for m in &mut self.meta {
            m.class = Some(class);
        }
    }

    /// New set holding the selected patches, in `indices` order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut samples = DenseMatrix::zeros(indices.len(), self.dim);
        let mut meta = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            samples.row_mut(r).copy_from_slice(self.sample(i));
            meta.push(self.meta[i]);
        }
        Self {
            dim: self.dim,
            samples,
            meta,
        }
    }

    /// Concatenates two sets of equal patch dimension.
    pub fn concat(mut self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let total = self.count() + other.count();
        let mut samples = DenseMatrix::zeros(total, self.dim);
        for i in 0..self.count() {
            samples.row_mut(i).copy_from_slice(self.sample(i));
        }
        for i in 0..other.count() {
            samples
                .row_mut(self.count() + i)
                .copy_from_slice(other.sample(i));
        }
        self.meta.extend_from_slice(&other.meta);
        Self {
            dim: self.dim,
            samples,
            meta: self.meta,
        }
    }
}

/// All fully contained `side x side` windows at the given stride, each
/// vectorized column-major into a patch. Window count per axis is
/// `(len - side) / stride + 1`.
pub fn extract_patches<T: Real>(
    img: &GrayImage,
    side: usize,
    stride: usize,
) -> Result<PatchSet<T>> {
    if side == 0 || side > img.height() || side > img.width() {
        return Err(Error::Degenerate(format!(
            "patch side {side} does not fit a {}x{} image",
            img.height(),
            img.width()
        )));
    }
    if stride == 0 {
        return Err(Error::Contract("stride must be >= 1".into()));
    }
    let nr = (img.height() - side) / stride + 1;
    let nc = (img.width() - side) / stride + 1;
    let dim = side * side;
    let mut samples = DenseMatrix::zeros(nr * nc, dim);
    let mut meta = Vec::with_capacity(nr * nc);
    let mut idx = 0;
    for wr in 0..nr {
        for wc in 0..nc {
            let (r0, c0) = (wr * stride, wc * stride);
            let out = samples.row_mut(idx);
            for pc in 0..side {
                for pr in 0..side {
                    out[pc * side + pr] = real((img.get(r0 + pr, c0 + pc)) as f64);
                }
            }
            meta.push(PatchMeta {
                row: r0,
                col: c0,
                class: None,
            });
            idx += 1;
        }
    }
    Ok(PatchSet::from_samples(dim, samples, meta))
}

/// Center-weighting mask: `exp(-((r-r0)^2 + (c-c0)^2) / (2 sigma^2))` around
/// the continuous center `(side-1)/2`, renormalized so the central pixel(s)
/// have weight exactly 1.
pub fn gaussian_mask<T: Real>(side: usize, sigma: f64) -> DenseMatrix<T> {
    assert!(side >= 1 && sigma > 0.0);
    let c0 = (side as f64 - 1.0) / 2.0;
    let mut w = vec![0.0f64; side * side];
    let mut max = f64::NEG_INFINITY;
    for r in 0..side {
        for c in 0..side {
            let d2 = (r as f64 - c0).powi(2) + (c as f64 - c0).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            w[r * side + c] = v;
            max = max.max(v);
        }
    }
    let mut m = DenseMatrix::zeros(side, side);
    for r in 0..side {
        for c in 0..side {
            m.set(r, c, real(w[r * side + c] / max));
        }
    }
    m
}

/// `patch - Laplacian(patch)` using the 4-neighbor 3x3 kernel with replicate
/// padding at the patch border. The patch is column-major vectorized.
pub fn sharpen<T: Real>(patch: &[T], side: usize) -> Vec<T> {
    assert_eq!(patch.len(), side * side);
    let at = |r: isize, c: isize| -> T {
        let r = r.clamp(0, side as isize - 1) as usize;
        let c = c.clamp(0, side as isize - 1) as usize;
        patch[c * side + r]
    };
    let four: T = real(4.0);
    let mut out = vec![T::zero(); side * side];
    for c in 0..side as isize {
        for r in 0..side as isize {
            let lap = at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1)
                - four * at(r, c);
            out[c as usize * side + r as usize] = at(r, c) - lap;
        }
    }
    out
}

/// Applies the mask (element-wise) then sharpens a single patch.
pub fn preprocess_patch<T: Real>(patch: &[T], mask: &DenseMatrix<T>) -> Vec<T> {
    let side = mask.rows();
    assert_eq!(mask.cols(), side);
    assert_eq!(patch.len(), side * side);
    let mut masked = vec![T::zero(); patch.len()];
    for c in 0..side {
        for r in 0..side {
            masked[c * side + r] = patch[c * side + r] * mask.get(r, c);
        }
    }
    sharpen(&masked, side)
}

/// Mask-then-sharpen over every patch in the set.
pub fn preprocess<T: Real>(set: &PatchSet<T>, mask: &DenseMatrix<T>) -> PatchSet<T> {
    let side = mask.rows();
    assert_eq!(side * side, set.dim(), "mask side does not match patch side");
    let mut samples = DenseMatrix::zeros(set.count(), set.dim());
    for i in 0..set.count() {
        let p = preprocess_patch(set.sample(i), mask);
        samples.row_mut(i).copy_from_slice(&p);
    }
    PatchSet::from_samples(set.dim(), samples, set.meta().to_vec())
}

/// Symmetric (edge-inclusive) reflection index: `-1 -> 0`, `-2 -> 1`,
/// `len -> len-1`, `len+1 -> len-2`.
fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let r = if i < 0 {
        -i - 1
    } else if i >= len {
        2 * len - 1 - i
    } else {
        i
    };
    r as usize
}

/// Pads the image by edge-inclusive mirror reflection. Each pad amount must
/// be smaller than the corresponding image dimension.
pub fn mirror_pad(
    img: &GrayImage,
    top: usize,
    left: usize,
    bottom: usize,
    right: usize,
) -> Result<GrayImage> {
    if top >= img.height() || bottom >= img.height() || left >= img.width() || right >= img.width()
    {
        return Err(Error::Degenerate(format!(
            "pad ({top},{left},{bottom},{right}) too large for {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let (h, w) = (img.height() + top + bottom, img.width() + left + right);
    let mut out = GrayImage::filled(h, w, 0);
    for r in 0..h {
        let sr = reflect(r as isize - top as isize, img.height());
        for c in 0..w {
            let sc = reflect(c as isize - left as isize, img.width());
            out.set(r, c, img.get(sr, sc));
        }
    }
    Ok(out)
}

/// Brightness-shifted, contrast-stretched copy of the image:
/// shift all pixels by `delta`, then stretch `[min(I), max(I)+delta]` to
/// `[0, 255]` with round-half-away-from-zero. Fails when the stretch range is
/// empty (`delta == 0` on a constant image).
pub fn overexpose(img: &GrayImage, delta: u32) -> Result<GrayImage> {
    let max_i = *img.pixels().iter().max().unwrap() as f64;
    let min_i = *img.pixels().iter().min().unwrap() as f64;
    let big = max_i + delta as f64;
    if big == min_i {
        return Err(Error::Degenerate(
            "over-exposure of a constant image with zero offset".into(),
        ));
    }
    let mut out = Vec::with_capacity(img.pixels().len());
    for &p in img.pixels() {
        let tmp = p as f64 + delta as f64;
        let v = (255.0 * (tmp - min_i) / (big - min_i)).round();
        out.push(v.clamp(0.0, 255.0) as u8);
    }
    GrayImage::new(img.height(), img.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img_from(rows: &[&[u8]]) -> GrayImage {
        let h = rows.len();
        let w = rows[0].len();
        let mut v = Vec::new();
        for r in rows {
            v.extend_from_slice(r);
        }
        GrayImage::new(h, w, v).unwrap()
    }

    #[test]
    fn patch_count_256() {
        let img = GrayImage::filled(256, 256, 7);
        let p: PatchSet<f64> = extract_patches(&img, 8, 1).unwrap();
        assert_eq!(p.count(), 62001);
        assert_eq!(p.dim(), 64);
    }

    #[test]
    fn single_window_is_the_image() {
        let pixels: Vec<u8> = (0..64).collect();
        let img = GrayImage::new(8, 8, pixels).unwrap();
        let p: PatchSet<f64> = extract_patches(&img, 8, 1).unwrap();
        assert_eq!(p.count(), 1);
        // Column-major vectorization within the patch.
        for pc in 0..8 {
            for pr in 0..8 {
                assert_eq!(p.sample(0)[pc * 8 + pr], img.get(pr, pc) as f64);
            }
        }
    }

    #[test]
    fn nine_by_nine_gives_four() {
        let pixels: Vec<u8> = (0..81).collect();
        let img = GrayImage::new(9, 9, pixels).unwrap();
        let p: PatchSet<f64> = extract_patches(&img, 8, 1).unwrap();
        assert_eq!(p.count(), 4);
        // Top-left patch covers rows 0..8 x cols 0..8.
        for pc in 0..8 {
            for pr in 0..8 {
                assert_eq!(p.sample(0)[pc * 8 + pr], img.get(pr, pc) as f64);
            }
        }
        assert_eq!(p.meta()[3], PatchMeta { row: 1, col: 1, class: None });
    }

    #[test]
    fn side_too_large_errors() {
        let img = GrayImage::filled(4, 4, 0);
        assert!(matches!(
            extract_patches::<f64>(&img, 8, 1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn mask_center_and_corner() {
        let m: DenseMatrix<f64> = gaussian_mask(8, 4.0);
        for (r, c) in [(3, 3), (3, 4), (4, 3), (4, 4)] {
            assert!((m.get(r, c) - 1.0).abs() <= 1e-12);
        }
        // exp(-(3.5^2+3.5^2)/32) / exp(-(0.5^2+0.5^2)/32) = exp(-24/32)
        assert!((m.get(0, 0) - (-24.0f64 / 32.0).exp()).abs() <= 1e-12);
        let single: DenseMatrix<f64> = gaussian_mask(1, 3.0);
        assert_eq!(single.get(0, 0), 1.0);
    }

    #[test]
    fn mask_dihedral_symmetry() {
        let side = 8;
        let m: DenseMatrix<f64> = gaussian_mask(side, 4.0);
        for r in 0..side {
            for c in 0..side {
                let v = m.get(r, c);
                assert_eq!(v, m.get(c, r));
                assert_eq!(v, m.get(side - 1 - r, c));
                assert_eq!(v, m.get(r, side - 1 - c));
            }
        }
    }

    #[test]
    fn sharpen_constant_unchanged() {
        let p = vec![3.25f64; 36];
        assert_eq!(sharpen(&p, 6), p);
    }

    #[test]
    fn sharpen_ramp_interior_unchanged() {
        let side = 6;
        let mut p = vec![0.0f64; side * side];
        for c in 0..side {
            for r in 0..side {
                p[c * side + r] = c as f64;
            }
        }
        let s = sharpen(&p, side);
        for c in 1..side - 1 {
            for r in 0..side {
                assert!((s[c * side + r] - p[c * side + r]).abs() <= 1e-12);
            }
        }
    }

    /// Direct 2-D convolution oracle for the sharpening step.
    fn sharpen_oracle(p: &[f64], side: usize) -> Vec<f64> {
        let kernel = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
        let get = |r: isize, c: isize| {
            let r = r.clamp(0, side as isize - 1) as usize;
            let c = c.clamp(0, side as isize - 1) as usize;
            p[c * side + r]
        };
        let mut out = vec![0.0; side * side];
        for c in 0..side as isize {
            for r in 0..side as isize {
                let mut lap = 0.0;
                for (di, krow) in kernel.iter().enumerate() {
                    for (dj, &k) in krow.iter().enumerate() {
                        lap += k * get(r + di as isize - 1, c + dj as isize - 1);
                    }
                }
                out[c as usize * side + r as usize] = get(r, c) - lap;
            }
        }
        out
    }

    #[test]
    fn sharpen_impulse_matches_convolution_oracle() {
        let mut p = vec![0.0f64; 9];
        p[1 * 3 + 1] = 1.0;
        let got = sharpen(&p, 3);
        let want = sharpen_oracle(&p, 3);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn preprocess_composes_the_two_steps() {
        let mut rng = crate::rng::rng_from(9);
        use rand::Rng;
        let side = 8;
        let img = GrayImage::new(
            side,
            side,
            (0..side * side).map(|_| rng.gen::<u8>()).collect(),
        )
        .unwrap();
        let set: PatchSet<f64> = extract_patches(&img, side, 1).unwrap();
        let mask = gaussian_mask(side, 4.0);
        let out = preprocess(&set, &mask);
        let mut masked = vec![0.0; side * side];
        for c in 0..side {
            for r in 0..side {
                masked[c * side + r] = set.sample(0)[c * side + r] * mask.get(r, c);
            }
        }
        let want = sharpen_oracle(&masked, side);
        for (g, w) in out.sample(0).iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-10);
        }
    }

    #[test]
    fn preprocess_identity_cases() {
        let ones: DenseMatrix<f64> = {
            let mut m = DenseMatrix::zeros(4, 4);
            for r in 0..4 {
                for c in 0..4 {
                    m.set(r, c, 1.0);
                }
            }
            m
        };
        let img = GrayImage::filled(4, 4, 9);
        let set: PatchSet<f64> = extract_patches(&img, 4, 1).unwrap();
        let out = preprocess(&set, &ones);
        assert_eq!(out.sample(0), set.sample(0));

        let zero = GrayImage::filled(4, 4, 0);
        let zset: PatchSet<f64> = extract_patches(&zero, 4, 1).unwrap();
        let zout = preprocess(&zset, &gaussian_mask(4, 4.0));
        assert!(zout.sample(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mirror_pad_row_example() {
        let img = img_from(&[&[10, 20, 30]]);
        let out = mirror_pad(&img, 0, 2, 0, 0).unwrap();
        assert_eq!(out.pixels(), &[20, 10, 10, 20, 30]);
    }

    #[test]
    fn mirror_pad_zero_is_identity() {
        let img = img_from(&[&[1, 2], &[3, 4]]);
        assert_eq!(mirror_pad(&img, 0, 0, 0, 0).unwrap(), img);
    }

    #[test]
    fn mirror_pad_matches_index_oracle() {
        let img = img_from(&[&[1, 2, 3], &[4, 5, 6], &[7, 8, 9]]);
        let out = mirror_pad(&img, 3, 3, 4, 4).unwrap();
        assert_eq!(out.height(), 10);
        assert_eq!(out.width(), 10);
        // Per-axis reflection-index oracle.
        let reflect_oracle = |i: isize, len: isize| -> usize {
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i - 1;
                } else if i >= len {
                    i = 2 * len - 1 - i;
                } else {
                    return i as usize;
                }
            }
        };
        for r in 0..10isize {
            for c in 0..10isize {
                let sr = reflect_oracle(r - 3, 3);
                let sc = reflect_oracle(c - 3, 3);
                assert_eq!(out.get(r as usize, c as usize), img.get(sr, sc));
            }
        }
    }

    #[test]
    fn mirror_pad_too_large_errors() {
        let img = img_from(&[&[1, 2], &[3, 4]]);
        assert!(matches!(
            mirror_pad(&img, 2, 0, 0, 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn overexpose_worked_example() {
        let img = img_from(&[&[0, 100]]);
        let out = overexpose(&img, 100).unwrap();
        assert_eq!(out.pixels(), &[128, 255]);
    }

    #[test]
    fn overexpose_zero_delta_full_range_identity() {
        let img = img_from(&[&[0, 17, 255]]);
        let out = overexpose(&img, 0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn overexpose_constant_zero_delta_errors() {
        let img = GrayImage::filled(2, 2, 9);
        assert!(matches!(overexpose(&img, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn overexpose_matches_per_pixel_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from(13);
        let pixels: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
        let img = GrayImage::new(8, 8, pixels).unwrap();
        let delta = 300u32;
        let out = overexpose(&img, delta).unwrap();
        let m = *img.pixels().iter().min().unwrap() as f64;
        let big = *img.pixels().iter().max().unwrap() as f64 + delta as f64;
        for (o, &p) in out.pixels().iter().zip(img.pixels()) {
            let tmp = p as f64 + delta as f64;
            let want = (255.0 * (tmp - m) / (big - m)).round();
            assert_eq!(*o as f64, want);
        }
    }

    proptest! {
        #[test]
        fn patch_count_formula(h in 1usize..40, w in 1usize..40, side in 1usize..12, stride in 1usize..5) {
            prop_assume!(side <= h && side <= w);
            let img = GrayImage::filled(h, w, 1);
            let p: PatchSet<f64> = extract_patches(&img, side, stride).unwrap();
            prop_assert_eq!(p.count(), ((h - side) / stride + 1) * ((w - side) / stride + 1));
        }

        #[test]
        fn sharpen_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..500) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from(seed);
            let side = 5;
            let p: Vec<f64> = (0..side * side).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let q: Vec<f64> = (0..side * side).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let mix: Vec<f64> = p.iter().zip(&q).map(|(x, y)| a * x + b * y).collect();
            let lhs = sharpen(&mix, side);
            let sp = sharpen(&p, side);
            let sq = sharpen(&q, side);
            for i in 0..side * side {
                prop_assert!((lhs[i] - (a * sp[i] + b * sq[i])).abs() <= 1e-10);
            }
        }

        #[test]
        fn overexpose_attains_255(seed in 0u64..500, delta in 0u32..900) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from(seed);
            let pixels: Vec<u8> = (0..16).map(|_| rng.gen()).collect();
            prop_assume!(pixels.iter().max() != pixels.iter().min() || delta > 0);
            let img = GrayImage::new(4, 4, pixels.clone()).unwrap();
            let out = overexpose(&img, delta).unwrap();
            let argmax = pixels.iter().enumerate().max_by_key(|(_, &v)| v).unwrap().0;
            prop_assert_eq!(out.pixels()[argmax], 255);
            prop_assert_eq!(*out.pixels().iter().max().unwrap(), 255);
        }

        #[test]
        fn mirror_pad_preserves_interior(top in 0usize..3, left in 0usize..3, bottom in 0usize..3, right in 0usize..3) {
            let img = img_from(&[&[1, 2, 3, 4], &[5, 6, 7, 8], &[9, 10, 11, 12]]);
            let out = mirror_pad(&img, top, left, bottom, right).unwrap();
            for r in 0..3 {
                for c in 0..4 {
                    prop_assert_eq!(out.get(r + top, c + left), img.get(r, c));
                }
            }
        }
    }
}
