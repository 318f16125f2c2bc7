//! Forward pass of the six-parameter Laplacian pyramid denoiser.
//!
//! The pyramid is undecimated: every level keeps the input resolution, so
//! `bp_1 + bp_2 + bp_3 + lp_3` telescopes back to the input exactly (up to
//! rounding). Each level blurs with a unit-sum Gaussian, subtracts to get
//! the band-pass image, and the bands are soft-thresholded before being
//! added back onto the residual low-pass image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Number of pyramid levels.
pub const LEVELS: usize = 3;

pub const SIGMA_MIN: f64 = 0.1;
pub const SIGMA_MAX: f64 = 10.0;
/// Threshold ceiling for intensities normalized to [0, 1].
pub const EPS_MAX: f64 = 1.0;
/// Threshold ceiling when intensities are kept in raw detector units.
pub const EPS_MAX_UNNORMALIZED: f64 = 100.0;

/// Box constraints on the trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub eps_max: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            sigma_min: SIGMA_MIN,
            sigma_max: SIGMA_MAX,
            eps_max: EPS_MAX,
        }
    }
}

impl ParamBounds {
    /// Bounds for unnormalized intensities (ε ceiling of 100).
    pub fn unnormalized() -> Self {
        Self {
            eps_max: EPS_MAX_UNNORMALIZED,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_min >= SIGMA_MIN
            && self.sigma_max <= SIGMA_MAX
            && self.sigma_min <= self.sigma_max
            && self.eps_max >= 0.0
            && self.eps_max.is_finite();
        if !ok {
            return Err(Error::ParamRange(format!(
                "bounds must satisfy {SIGMA_MIN} <= sigma_min <= sigma_max <= {SIGMA_MAX} \
                 and eps_max >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, params: &PyramidParams) -> bool {
        params
            .sigmas
            .iter()
            .all(|s| (self.sigma_min..=self.sigma_max).contains(s))
            && params.epsilons.iter().all(|e| (0.0..=self.eps_max).contains(e))
    }
}

/// The six trainable parameters: one blur width and one threshold per level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidParams {
    pub sigmas: [f64; LEVELS],
    pub epsilons: [f64; LEVELS],
}

impl PyramidParams {
    pub const LEN: usize = 2 * LEVELS;

    pub fn new(sigmas: [f64; LEVELS], epsilons: [f64; LEVELS]) -> Self {
        Self { sigmas, epsilons }
    }

    /// Flattened as `[σ1, σ2, σ3, ε1, ε2, ε3]`.
    pub fn to_array(&self) -> [f64; Self::LEN] {
        let mut out = [0.0; Self::LEN];
        out[..LEVELS].copy_from_slice(&self.sigmas);
        out[LEVELS..].copy_from_slice(&self.epsilons);
        out
    }

    pub fn from_array(values: [f64; Self::LEN]) -> Self {
        let mut p = Self::new([0.0; LEVELS], [0.0; LEVELS]);
        p.sigmas.copy_from_slice(&values[..LEVELS]);
        p.epsilons.copy_from_slice(&values[LEVELS..]);
        p
    }

    /// Checks what the forward pass needs: σ inside the kernel range and
    /// finite, non-negative thresholds.
    pub fn validate(&self) -> Result<()> {
        for (n, &s) in self.sigmas.iter().enumerate() {
            check_sigma(s).map_err(|_| {
                Error::ParamRange(format!(
                    "sigma{} = {s} outside [{SIGMA_MIN}, {SIGMA_MAX}]",
                    n + 1
                ))
            })?;
        }
        for (n, &e) in self.epsilons.iter().enumerate() {
            if !e.is_finite() || e < 0.0 {
                return Err(Error::ParamRange(format!(
                    "eps{} = {e} must be finite and >= 0",
                    n + 1
                )));
            }
        }
        Ok(())
    }

    pub fn validate_within(&self, bounds: &ParamBounds) -> Result<()> {
        self.validate()?;
        if !bounds.contains(self) {
            return Err(Error::ParamRange(format!(
                "parameters {self:?} outside bounds {bounds:?}"
            )));
        }
        Ok(())
    }
}

/// Structural pyramid settings. Only the three-level undecimated variant is
/// supported; the fields exist so configuration files can state it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub levels: usize,
    pub downsample: u32,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            levels: LEVELS,
            downsample: 1,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels != LEVELS {
            return Err(Error::Input(format!(
                "only {LEVELS}-level pyramids are supported, got {}",
                self.levels
            )));
        }
        if self.downsample != 1 {
            return Err(Error::Input(format!(
                "decimated pyramids are not supported (downsample factor {})",
                self.downsample
            )));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(SIGMA_MIN..=SIGMA_MAX).contains(&sigma) {
        return Err(Error::ParamRange(format!(
            "sigma {sigma} outside [{SIGMA_MIN}, {SIGMA_MAX}]"
        )));
    }
    Ok(())
}

/// Truncation radius `max(1, ceil(3σ))`.
pub fn kernel_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

/// Unnormalized Gaussian weights `exp(-x²/2σ²)` at integer offsets.
pub(crate) fn gaussian_weights(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|x| {
            let x = x as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Sampled, unit-sum 1D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

pub fn make_kernel(sigma: f64) -> Result<GaussianKernel> {
    check_sigma(sigma)?;
    let radius = kernel_radius(sigma);
    let weights = gaussian_weights(sigma, radius);
    let total: f64 = weights.iter().sum();
    let taps = weights.into_iter().map(|u| u / total).collect();
    Ok(GaussianKernel {
        sigma,
        radius,
        taps,
    })
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Horizontal 1D filter with replicated borders:
/// `out[y][x] = Σ_i taps[i] · in[y][clamp(x + i - r)]`.
pub(crate) fn filter_rows(img: &Image, taps: &[f64]) -> Image {
    let (w, h) = img.dims();
    let r = (taps.len() / 2) as isize;
    let src = img.pixels();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * row[clamp_index(x as isize + i as isize - r, w)];
            }
            *d = acc;
        }
    }
    Image::from_raw(w, h, out)
}

/// Vertical counterpart of [`filter_rows`].
pub(crate) fn filter_cols(img: &Image, taps: &[f64]) -> Image {
    let (w, h) = img.dims();
    let r = (taps.len() / 2) as isize;
    let src = img.pixels();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (i, &t) in taps.iter().enumerate() {
            let sy = clamp_index(y as isize + i as isize - r, h);
            let row = &src[sy * w..(sy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(row) {
                *d += t * s;
            }
        }
    }
    Image::from_raw(w, h, out)
}

/// Exact adjoint of [`filter_rows`]: each output gradient is scattered back
/// to the (clamped) source pixels, so border pixels collect the weight of
/// every replicated tap.
pub(crate) fn filter_rows_adjoint(grad: &Image, taps: &[f64]) -> Image {
    let (w, h) = grad.dims();
    let r = (taps.len() / 2) as isize;
    let src = grad.pixels();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let g = &src[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &gx) in g.iter().enumerate() {
            for (i, &t) in taps.iter().enumerate() {
                dst[clamp_index(x as isize + i as isize - r, w)] += t * gx;
            }
        }
    }
    Image::from_raw(w, h, out)
}

/// Exact adjoint of [`filter_cols`].
pub(crate) fn filter_cols_adjoint(grad: &Image, taps: &[f64]) -> Image {
    let (w, h) = grad.dims();
    let r = (taps.len() / 2) as isize;
    let src = grad.pixels();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let g = &src[y * w..(y + 1) * w];
        for (i, &t) in taps.iter().enumerate() {
            let dy = clamp_index(y as isize + i as isize - r, h);
            let dst = &mut out[dy * w..(dy + 1) * w];
            for (d, &gx) in dst.iter_mut().zip(g) {
                *d += t * gx;
            }
        }
    }
    Image::from_raw(w, h, out)
}

/// 2D Gaussian blur as a horizontal then a vertical pass, edge-replicated.
pub fn convolve_separable(img: &Image, kernel: &GaussianKernel) -> Image {
    filter_cols(&filter_rows(img, &kernel.taps), &kernel.taps)
}

/// Transpose of [`convolve_separable`] as a linear map on pixel vectors.
pub fn convolve_separable_adjoint(grad: &Image, kernel: &GaussianKernel) -> Image {
    filter_rows_adjoint(&filter_cols_adjoint(grad, &kernel.taps), &kernel.taps)
}

/// Band-pass layers plus the residual low-pass image, all at input size.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidDecomposition {
    pub bandpass: [Image; LEVELS],
    pub residual_lowpass: Image,
}

impl PyramidDecomposition {
    pub fn dims(&self) -> (usize, usize) {
        self.residual_lowpass.dims()
    }

    /// Sums the bands and residual back into an image.
    pub fn reconstruct(&self) -> Image {
        recombine(&self.bandpass, &self.residual_lowpass)
    }
}

/// One level of the pyramid: `(lowpass, bandpass)` of `input`.
pub(crate) fn split_level(input: &Image, kernel: &GaussianKernel) -> (Image, Image) {
    let lowpass = convolve_separable(input, kernel);
    let bandpass = input.zip_map(&lowpass, |a, b| a - b);
    (lowpass, bandpass)
}

pub fn decompose(img: &Image, sigmas: [f64; LEVELS]) -> Result<PyramidDecomposition> {
    let kernels = sigmas
        .iter()
        .map(|&s| make_kernel(s))
        .collect::<Result<Vec<_>>>()?;
    let mut current = img.clone();
    let mut bands = Vec::with_capacity(LEVELS);
    for kernel in &kernels {
        let (lowpass, bandpass) = split_level(&current, kernel);
        bands.push(bandpass);
        current = lowpass;
    }
    let bandpass: [Image; LEVELS] = bands
        .try_into()
        .unwrap_or_else(|_| unreachable!("exactly LEVELS bands"));
    Ok(PyramidDecomposition {
        bandpass,
        residual_lowpass: current,
    })
}

/// Shrinkage operator: `sign(x)(|x| - ε)` when `|x| >= ε`, else 0.
#[inline]
pub fn soft_threshold(x: f64, epsilon: f64) -> f64 {
    if x.abs() >= epsilon {
        x.signum() * (x.abs() - epsilon)
    } else {
        0.0
    }
}

pub fn soft_threshold_image(band: &Image, epsilon: f64) -> Image {
    band.map(|x| soft_threshold(x, epsilon))
}

/// Adds the bands onto the residual in level order. Shared by the forward
/// pass and the tape so both produce bitwise-identical outputs.
pub(crate) fn recombine(bands: &[Image], residual: &Image) -> Image {
    let mut out = residual.pixels().to_vec();
    for band in bands {
        for (o, b) in out.iter_mut().zip(band.pixels()) {
            *o += b;
        }
    }
    Image::from_raw(residual.width(), residual.height(), out)
}

/// Full network: decompose, soft-threshold each band, recombine.
pub fn denoise(img: &Image, params: &PyramidParams) -> Result<Image> {
    params.validate()?;
    let decomposition = decompose(img, params.sigmas)?;
    let thresholded: Vec<Image> = decomposition
        .bandpass
        .iter()
        .zip(params.epsilons)
        .map(|(band, eps)| soft_threshold_image(band, eps))
        .collect();
    Ok(recombine(&thresholded, &decomposition.residual_lowpass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_image;
    use proptest::prelude::*;

    /// Direct 2D convolution with replicated borders, written without the
    /// separable passes.
    fn brute_force_conv(img: &Image, taps: &[f64]) -> Image {
        let (w, h) = img.dims();
        let r = (taps.len() / 2) as isize;
        Image::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for (j, &ty) in taps.iter().enumerate() {
                for (i, &tx) in taps.iter().enumerate() {
                    let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += tx * ty * img.get(sx, sy);
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn kernel_sigma_one() {
        let k = make_kernel(1.0).unwrap();
        assert_eq!(k.radius(), 3);
        let taps = k.taps();
        assert_eq!(taps.len(), 7);
        for i in 0..3 {
            assert_eq!(taps[3 - i], taps[3 + i]);
        }
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // 1 / (1 + 2e^{-1/2} + 2e^{-2} + 2e^{-9/2}), 30-digit reference
        assert!((taps[3] - 0.399_050_279_652_454_9).abs() < 1e-15);
        assert!(taps.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn kernel_tiny_sigma_is_nearly_delta() {
        let k = make_kernel(0.1).unwrap();
        assert_eq!(k.radius(), 1);
        assert!((k.taps()[1] - 1.0).abs() < 1e-10);
        assert!(k.taps()[0] > 0.0);
    }

    #[test]
    fn kernel_rejects_out_of_range_sigma() {
        assert!(matches!(make_kernel(0.05), Err(Error::ParamRange(_))));
        assert!(matches!(make_kernel(10.5), Err(Error::ParamRange(_))));
        assert!(matches!(make_kernel(f64::NAN), Err(Error::ParamRange(_))));
    }

    #[test]
    fn constant_image_is_preserved_by_blur() {
        let img = Image::filled(9, 5, 0.37).unwrap();
        for sigma in [0.1, 1.0, 4.0, 10.0] {
            let out = convolve_separable(&img, &make_kernel(sigma).unwrap());
            assert!(out.max_abs_diff(&img).unwrap() < 1e-15);
        }
    }

    #[test]
    fn impulse_response_is_outer_product() {
        let k = make_kernel(1.0).unwrap();
        let mut px = vec![0.0; 15 * 15];
        px[7 * 15 + 7] = 1.0;
        let out = convolve_separable(&Image::new(15, 15, px).unwrap(), &k);
        let t = k.taps();
        for y in 0..15 {
            for x in 0..15 {
                let (dx, dy) = (x as isize - 7, y as isize - 7);
                let expect = if dx.abs() <= 3 && dy.abs() <= 3 {
                    t[(dx + 3) as usize] * t[(dy + 3) as usize]
                } else {
                    0.0
                };
                assert!((out.get(x, y) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn separable_matches_brute_force() {
        let img = random_image(8, 8, 42);
        for sigma in [0.5, 1.0, 2.5] {
            let k = make_kernel(sigma).unwrap();
            let fast = convolve_separable(&img, &k);
            let slow = brute_force_conv(&img, k.taps());
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
        }
    }

    #[test]
    fn adjoint_dot_product_identity() {
        for (seed, sigma) in [(1u64, 0.5), (2, 1.0), (3, 3.0)] {
            let k = make_kernel(sigma).unwrap();
            let v = random_image(16, 16, seed);
            let w = random_image(16, 16, seed + 100);
            let lhs = convolve_separable(&v, &k).dot(&w).unwrap();
            let rhs = v.dot(&convolve_separable_adjoint(&w, &k)).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn constant_image_has_empty_bands() {
        let img = Image::filled(10, 10, 0.8).unwrap();
        let d = decompose(&img, [1.0, 2.0, 4.0]).unwrap();
        // exact up to the rounding of Σ taps
        for band in &d.bandpass {
            assert!(band.pixels().iter().all(|&b| b.abs() < 1e-15));
        }
        assert!(d.residual_lowpass.max_abs_diff(&img).unwrap() < 1e-15);
    }

    #[test]
    fn impulse_lowpass_is_triple_convolution() {
        let mut px = vec![0.0; 21 * 21];
        px[10 * 21 + 10] = 1.0;
        let img = Image::new(21, 21, px).unwrap();
        let d = decompose(&img, [1.0, 1.0, 1.0]).unwrap();
        let t = make_kernel(1.0).unwrap();
        let mut expect = img.clone();
        for _ in 0..3 {
            expect = brute_force_conv(&expect, t.taps());
        }
        assert!(d.residual_lowpass.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn soft_threshold_table() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        assert_eq!(soft_threshold(1.0, 2.0), 0.0);
        for x in [-3.5, -1e-9, 0.0, 2.25, 1e6] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn zero_thresholds_reproduce_input() {
        let img = random_image(16, 16, 9);
        let p = PyramidParams::new([1.0, 2.0, 3.0], [0.0; 3]);
        assert!(denoise(&img, &p).unwrap().max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn saturated_thresholds_return_lowpass() {
        let img = random_image(16, 16, 4);
        let sigmas = [1.0, 2.0, 3.0];
        let d = decompose(&img, sigmas).unwrap();
        let eps: Vec<f64> = d
            .bandpass
            .iter()
            .map(|b| b.pixels().iter().fold(0.0_f64, |m, v| m.max(v.abs())) + 1e-9)
            .collect();
        let p = PyramidParams::new(sigmas, [eps[0], eps[1], eps[2]]);
        let out = denoise(&img, &p).unwrap();
        assert!(out.max_abs_diff(&d.residual_lowpass).unwrap() < 1e-15);
    }

    /// Straight-line reference: nested loops over the formulas, no shared
    /// helpers from this module.
    fn reference_denoise(img: &Image, sigmas: [f64; 3], eps: [f64; 3]) -> Vec<f64> {
        let (w, h) = img.dims();
        let mut input: Vec<f64> = img.pixels().to_vec();
        let mut out = vec![0.0; w * h];
        for n in 0..3 {
            let s = sigmas[n];
            let r = ((3.0 * s).ceil() as isize).max(1);
            let mut g: Vec<f64> = (-r..=r)
                .map(|x| (-((x * x) as f64) / (2.0 * s * s)).exp())
                .collect();
            let z: f64 = g.iter().sum();
            g.iter_mut().for_each(|v| *v /= z);
            let mut tmp = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    for (i, gv) in g.iter().enumerate() {
                        let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1);
                        tmp[y * w + x] += gv * input[y * w + sx as usize];
                    }
                }
            }
            let mut lp = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    for (i, gv) in g.iter().enumerate() {
                        let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1);
                        lp[y * w + x] += gv * tmp[sy as usize * w + x];
                    }
                }
            }
            for k in 0..w * h {
                let bp = input[k] - lp[k];
                out[k] += if bp.abs() >= eps[n] {
                    bp.signum() * (bp.abs() - eps[n])
                } else {
                    0.0
                };
            }
            input = lp;
        }
        for k in 0..w * h {
            out[k] += input[k];
        }
        out
    }

    #[test]
    fn denoise_matches_reference_script() {
        let img = random_image(16, 16, 2024);
        let sigmas = [1.0, 2.0, 3.0];
        let eps = [0.01, 0.02, 0.03];
        let out = denoise(&img, &PyramidParams::new(sigmas, eps)).unwrap();
        let expect = reference_denoise(&img, sigmas, eps);
        let err = out
            .pixels()
            .iter()
            .zip(&expect)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "max error {err}");
    }

    #[test]
    fn denoise_validates_params() {
        let img = random_image(4, 4, 0);
        let bad = PyramidParams::new([1.0, 0.0, 1.0], [0.0; 3]);
        assert!(matches!(denoise(&img, &bad), Err(Error::ParamRange(_))));
        let bad = PyramidParams::new([1.0; 3], [0.0, -0.1, 0.0]);
        assert!(matches!(denoise(&img, &bad), Err(Error::ParamRange(_))));
    }

    #[test]
    fn pyramid_config_rejects_decimation() {
        assert!(PyramidConfig::default().validate().is_ok());
        let k2 = PyramidConfig {
            downsample: 2,
            ..Default::default()
        };
        assert!(k2.validate().is_err());
    }

    #[test]
    fn translation_equivariance_away_from_borders() {
        let (w, h) = (40, 40);
        let base = random_image(w + 1, h, 77);
        let a = Image::from_fn(w, h, |x, y| base.get(x, y)).unwrap();
        let b = Image::from_fn(w, h, |x, y| base.get(x + 1, y)).unwrap();
        let p = PyramidParams::new([0.5, 1.0, 1.5], [0.01, 0.02, 0.03]);
        let (oa, ob) = (denoise(&a, &p).unwrap(), denoise(&b, &p).unwrap());
        let margin: usize = p.sigmas.iter().map(|&s| kernel_radius(s)).sum();
        for y in margin..h - margin {
            for x in margin + 1..w - margin {
                assert!((oa.get(x, y) - ob.get(x - 1, y)).abs() < 1e-12);
            }
        }
    }

    fn sigma_strategy() -> impl Strategy<Value = f64> {
        SIGMA_MIN..=SIGMA_MAX
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reconstruction_identity(
            w in 1usize..24, h in 1usize..24, seed in any::<u64>(),
            s1 in sigma_strategy(), s2 in sigma_strategy(), s3 in sigma_strategy(),
        ) {
            let img = random_image(w, h, seed);
            let d = decompose(&img, [s1, s2, s3]).unwrap();
            prop_assert!(d.reconstruct().max_abs_diff(&img).unwrap() < 1e-12);
        }

        #[test]
        fn soft_threshold_is_odd_and_monotone_in_eps(
            x in -10.0f64..10.0, e1 in 0.0f64..5.0, de in 0.0f64..5.0,
        ) {
            prop_assert_eq!(soft_threshold(-x, e1), -soft_threshold(x, e1));
            prop_assert!(soft_threshold(x, e1 + de).abs() <= soft_threshold(x, e1).abs());
        }

        #[test]
        fn band_energy_non_increasing_in_eps(seed in any::<u64>(), scale in 1.0f64..4.0) {
            let img = random_image(12, 12, seed);
            let d = decompose(&img, [0.8, 1.6, 3.2]).unwrap();
            for (band, eps) in d.bandpass.iter().zip([0.01, 0.02, 0.04]) {
                let energy = |e: f64| -> f64 {
                    soft_threshold_image(band, e).pixels().iter().map(|v| v.abs()).sum()
                };
                prop_assert!(energy(eps * scale) <= energy(eps));
            }
        }

        #[test]
        fn blur_preserves_constants(c in -2.0f64..2.0, sigma in sigma_strategy()) {
            let img = Image::filled(7, 11, c).unwrap();
            let out = convolve_separable(&img, &make_kernel(sigma).unwrap());
            prop_assert!(out.max_abs_diff(&img).unwrap() < 1e-14);
        }
    }
}
