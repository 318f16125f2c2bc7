//! Reverse-mode gradients of a scalar loss through [`denoise`] with respect
//! to the six pyramid parameters.
//!
//! The graph is fixed, so backprop is written out by hand:
//!
//! ```text
//! I_1 = img
//! lp_n = G(σ_n) * I_n        bp_n = I_n - lp_n        t_n = soft(bp_n, ε_n)
//! I_{n+1} = lp_n
//! out = t_1 + t_2 + t_3 + lp_3
//! ```
//!
//! The kernel radius `max(1, ceil(3σ))` is treated as constant while
//! differentiating, so the loss is piecewise smooth in σ.
//!
//! [`denoise`]: crate::pyramid::denoise

use std::ops::{Add, Mul};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pyramid::{
    self, filter_cols, filter_cols_adjoint, filter_rows, filter_rows_adjoint, gaussian_weights,
    kernel_radius, make_kernel, recombine, soft_threshold_image, GaussianKernel, PyramidParams,
    LEVELS,
};

/// ∂L/∂φ, laid out like [`PyramidParams`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradientVector {
    pub d_sigmas: [f64; LEVELS],
    pub d_epsilons: [f64; LEVELS],
}

impl GradientVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; PyramidParams::LEN] {
        PyramidParams::new(self.d_sigmas, self.d_epsilons).to_array()
    }

    pub fn from_array(values: [f64; PyramidParams::LEN]) -> Self {
        let p = PyramidParams::from_array(values);
        Self {
            d_sigmas: p.sigmas,
            d_epsilons: p.epsilons,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}

impl Add for GradientVector {
    type Output = GradientVector;

    fn add(self, rhs: Self) -> Self {
        let (a, b) = (self.to_array(), rhs.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] + b[i]))
    }
}

impl Mul<f64> for GradientVector {
    type Output = GradientVector;

    fn mul(self, rhs: f64) -> Self {
        Self::from_array(self.to_array().map(|g| g * rhs))
    }
}

/// Derivative of the unit-sum kernel taps with respect to σ at fixed radius.
///
/// With `u_i = exp(-x_i²/2σ²)` and `taps_i = u_i / Σu`:
/// `d taps_i/dσ = (u_i' Σu - u_i Σu') / (Σu)²`, `u_i' = u_i x_i² / σ³`.
pub fn kernel_sigma_derivative(sigma: f64) -> Result<Vec<f64>> {
    // reuse the kernel's range check
    make_kernel(sigma)?;
    let radius = kernel_radius(sigma);
    let u = gaussian_weights(sigma, radius);
    let r = radius as isize;
    let du: Vec<f64> = u
        .iter()
        .zip(-r..=r)
        .map(|(&ui, x)| ui * (x * x) as f64 / sigma.powi(3))
        .collect();
    let sum_u: f64 = u.iter().sum();
    let sum_du: f64 = du.iter().sum();
    Ok(u.iter()
        .zip(&du)
        .map(|(&ui, &dui)| (dui * sum_u - ui * sum_du) / (sum_u * sum_u))
        .collect())
}

/// Subgradients of `soft(x, ε)` as `(∂/∂x, ∂/∂ε)`. Zero at the kink `|x| == ε`.
#[inline]
pub fn soft_threshold_subgradients(x: f64, epsilon: f64) -> (f64, f64) {
    if x.abs() > epsilon {
        (1.0, -x.signum())
    } else {
        (0.0, 0.0)
    }
}

/// Intermediates of one pyramid level.
#[derive(Debug, Clone)]
pub struct LevelTape {
    pub input: Image,
    /// Horizontal pass only, `H_σ(input)`.
    pub row_filtered: Image,
    pub lowpass: Image,
    pub bandpass: Image,
    pub thresholded: Image,
    pub kernel: GaussianKernel,
    pub kernel_derivative: Vec<f64>,
    pub epsilon: f64,
}

/// Everything backprop needs from one forward pass of one (image, φ) pair.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub levels: Vec<LevelTape>,
    pub params: PyramidParams,
}

impl ForwardTape {
    pub fn dims(&self) -> (usize, usize) {
        self.levels[0].input.dims()
    }

    pub fn residual_lowpass(&self) -> &Image {
        &self.levels[LEVELS - 1].lowpass
    }

    /// Smallest distance between any band coefficient and its threshold.
    /// Finite-difference checks need this to be comfortably positive.
    pub fn kink_margin(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| {
                l.bandpass
                    .pixels()
                    .iter()
                    .map(move |b| (b.abs() - l.epsilon).abs())
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs the forward pass and records every intermediate.
pub fn forward_tape(img: &Image, params: &PyramidParams) -> Result<(Image, ForwardTape)> {
    params.validate()?;
    let mut levels = Vec::with_capacity(LEVELS);
    let mut input = img.clone();
    for n in 0..LEVELS {
        let kernel = make_kernel(params.sigmas[n])?;
        let kernel_derivative = kernel_sigma_derivative(params.sigmas[n])?;
        let row_filtered = filter_rows(&input, kernel.taps());
        let lowpass = filter_cols(&row_filtered, kernel.taps());
        let bandpass = input.zip_map(&lowpass, |a, b| a - b);
        let thresholded = soft_threshold_image(&bandpass, params.epsilons[n]);
        let next = lowpass.clone();
        levels.push(LevelTape {
            input,
            row_filtered,
            lowpass,
            bandpass,
            thresholded,
            kernel,
            kernel_derivative,
            epsilon: params.epsilons[n],
        });
        input = next;
    }
    let bands: Vec<Image> = levels.iter().map(|l| l.thresholded.clone()).collect();
    let output = recombine(&bands, &levels[LEVELS - 1].lowpass);
    Ok((
        output,
        ForwardTape {
            levels,
            params: *params,
        },
    ))
}

/// Pulls `d_output = ∂L/∂out` back to `∂L/∂φ`.
pub fn backprop(tape: &ForwardTape, d_output: &Image) -> Result<GradientVector> {
    if d_output.dims() != tape.dims() {
        return Err(Error::Shape {
            expected: tape.dims(),
            actual: d_output.dims(),
        });
    }
    let mut grad = GradientVector::zero();
    // gradient w.r.t. I_{n+1} == lp_n; starts as ∂L/∂lp_3 from the final sum
    let mut d_next = d_output.clone();
    for n in (0..LEVELS).rev() {
        let level = &tape.levels[n];
        let (w, h) = level.input.dims();

        // t_n = soft(bp_n, ε_n), ∂L/∂t_n == d_output
        let mut d_band = vec![0.0; w * h];
        let mut d_eps = 0.0;
        for ((db, &b), &g) in d_band
            .iter_mut()
            .zip(level.bandpass.pixels())
            .zip(d_output.pixels())
        {
            let (dx, de) = soft_threshold_subgradients(b, level.epsilon);
            *db = g * dx;
            d_eps += g * de;
        }
        grad.d_epsilons[n] = d_eps;
        let d_band = Image::from_raw(w, h, d_band);

        // bp_n = I_n - lp_n, and lp_n also feeds the next level
        let d_lowpass = d_next.zip_map(&d_band, |a, b| a - b);

        // lp_n = V_σ(H_σ(I_n)); ∂/∂σ touches both passes
        let dk = &level.kernel_derivative;
        let taps = level.kernel.taps();
        let via_cols = filter_cols(&level.row_filtered, dk).dot(&d_lowpass)?;
        let d_row_filtered = filter_cols_adjoint(&d_lowpass, taps);
        let via_rows = filter_rows(&level.input, dk).dot(&d_row_filtered)?;
        grad.d_sigmas[n] = via_cols + via_rows;

        let d_input = filter_rows_adjoint(&d_row_filtered, taps);
        d_next = d_input.zip_map(&d_band, |a, b| a + b);
    }
    Ok(grad)
}

/// Mean squared error to `target` and its exact gradient with respect to φ.
pub fn mse_gradient(
    img: &Image,
    params: &PyramidParams,
    target: &Image,
) -> Result<(f64, GradientVector)> {
    img.ensure_same_dims(target)?;
    let (out, tape) = forward_tape(img, params)?;
    let n = out.len() as f64;
    let loss = crate::image::sum_squared_diff(&out, target)?;
    let d_out = out.zip_map(target, |o, t| 2.0 * (o - t) / n);
    Ok((loss, backprop(&tape, &d_out)?))
}

/// Central differences `(L(φ + h e_i) - L(φ - h e_i)) / 2h` per component.
pub fn finite_diff_gradient(
    img: &Image,
    params: &PyramidParams,
    loss: impl Fn(&Image) -> f64,
    h: f64,
) -> Result<GradientVector> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::ParamRange(format!("step h must be > 0, got {h}")));
    }
    let base = params.to_array();
    let mut out = [0.0; PyramidParams::LEN];
    for (i, g) in out.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus[i] += h;
        minus[i] -= h;
        let (pp, pm) = (
            PyramidParams::from_array(plus),
            PyramidParams::from_array(minus),
        );
        pp.validate()?;
        pm.validate()?;
        let lp = loss(&pyramid::denoise(img, &pp)?);
        let lm = loss(&pyramid::denoise(img, &pm)?);
        *g = (lp - lm) / (2.0 * h);
    }
    Ok(GradientVector::from_array(out))
}

/// Relative error used for gradient checks: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of comparing backprop against central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub analytic: GradientVector,
    pub numeric: GradientVector,
    pub relative_errors: [f64; PyramidParams::LEN],
    pub kink_margin: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().fold(0.0_f64, |m, &e| m.max(e))
    }
}

/// Denominator floor for [`relative_error`] in gradient checks.
pub const GRADCHECK_FLOOR: f64 = 1e-8;

/// Compares backprop and finite differences for an MSE loss against `target`.
pub fn gradient_check(
    img: &Image,
    params: &PyramidParams,
    target: &Image,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = mse_gradient(img, params, target)?;
    let (_, tape) = forward_tape(img, params)?;
    let numeric = finite_diff_gradient(
        img,
        params,
        |out| crate::image::sum_squared_diff(out, target).unwrap_or(f64::NAN),
        h,
    )?;
    let (a, b) = (analytic.to_array(), numeric.to_array());
    Ok(GradCheckReport {
        analytic,
        numeric,
        relative_errors: std::array::from_fn(|i| relative_error(a[i], b[i], GRADCHECK_FLOOR)),
        kink_margin: tape.kink_margin(),
    })
}

/// Random image, target and φ for a finite-difference check, with every
/// band coefficient at least `margin` from its threshold and σ ± h inside
/// one kernel radius.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub image: Image,
    pub target: Image,
    pub params: PyramidParams,
    pub margin: f64,
}

impl GradCheckCase {
    pub fn sample(size: usize, seed: u64, margin: f64, h: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = |rng: &mut ChaCha8Rng| {
            Image::new(size, size, (0..size * size).map(|_| rng.random::<f64>()).collect())
                .expect("finite pixels")
        };
        let image = noise(&mut rng);
        let target = noise(&mut rng);
        loop {
            let sigmas: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..4.0));
            if sigmas
                .iter()
                .any(|&s| kernel_radius(s - h) != kernel_radius(s + h))
            {
                continue;
            }
            let eps: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.15));
            let params = PyramidParams::new(sigmas, eps);
            let (_, tape) = forward_tape(&image, &params).expect("valid params");
            let m = tape.kink_margin();
            if m > margin {
                return Self {
                    image,
                    target,
                    params,
                    margin: m,
                };
            }
        }
    }
}
