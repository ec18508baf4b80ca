//! Linear quantization math and the FIX / MAX / SAWB / PACT boundary strategies.
//!
//! Codes are unsigned and fit in a byte (`2 <= bits <= 8`). Asymmetric
//! parameters use `code = clamp(round(x / s + z), 0, 2^b - 1)` and
//! `x_q = s * (code - z)`. Symmetric parameters use the signed range
//! `[-(2^(b-1) - 1), 2^(b-1) - 1]` stored with an offset of `2^(b-1)`, so the
//! all-zero code is never produced and negation stays closed.
//!
//! Rounding is half-away-from-zero (`f64::round`) everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the boundary of constant tensors so the scale never vanishes.
pub const MIN_BOUND: f64 = 1e-8;

/// Number of geometric candidates scanned by the SAWB grid oracle.
pub const SAWB_GRID_POINTS: usize = 400;

/// Smallest candidate of the SAWB grid, relative to `max |x|`.
const SAWB_GRID_FLOOR: f64 = 1e-3;

/// Scale, zero point and clipping range of one quantized tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u32,
    pub lower: f64,
    pub upper: f64,
    pub symmetric: bool,
    pub scale: f64,
    pub zero_point: f64,
}

impl QuantParams {
    /// Symmetric parameters with boundary `±alpha`.
    pub fn symmetric(bits: u32, alpha: f64) -> Result<Self> {
        check_bits(bits)?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParams(format!(
                "symmetric boundary must be finite and positive, got {alpha}"
            )));
        }
        let q = max_signed(bits) as f64;
        Ok(Self {
            bits,
            lower: -alpha,
            upper: alpha,
            symmetric: true,
            scale: alpha / q,
            zero_point: 0.0,
        })
    }

    /// Asymmetric parameters over `[lower, upper]` with a real-valued zero point.
    pub fn asymmetric(bits: u32, lower: f64, upper: f64) -> Result<Self> {
        check_bits(bits)?;
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidParams(format!(
                "asymmetric boundaries must be finite with lower < upper, got [{lower}, {upper}]"
            )));
        }
        let scale = (upper - lower) / max_code(bits) as f64;
        Ok(Self {
            bits,
            lower,
            upper,
            symmetric: false,
            scale,
            zero_point: -lower / scale,
        })
    }

    /// Parameters usable by the integer kernels: the zero point is rounded to
    /// the nearest integer and the range is shifted to keep the scale.
    pub fn to_kernel(&self) -> Self {
        if self.symmetric || self.has_integer_zero_point() {
            return *self;
        }
        let z = self.zero_point.round();
        let lower = -z * self.scale;
        Self {
            lower,
            upper: lower + max_code(self.bits) as f64 * self.scale,
            zero_point: z,
            ..*self
        }
    }

    pub fn has_integer_zero_point(&self) -> bool {
        self.zero_point.fract() == 0.0
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        let finite = [self.lower, self.upper, self.scale, self.zero_point]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lower >= self.upper || self.scale <= 0.0 {
            return Err(Error::InvalidParams(format!("{self:?}")));
        }
        if self.symmetric && (self.lower != -self.upper || self.zero_point != 0.0) {
            return Err(Error::InvalidParams(
                "symmetric params need lower = -upper and zero_point = 0".into(),
            ));
        }
        Ok(())
    }

    /// Inclusive range of valid codes.
    pub fn code_range(&self) -> (u32, u32) {
        if self.symmetric {
            (1, max_code(self.bits))
        } else {
            (0, max_code(self.bits))
        }
    }

    /// The (possibly fractional) code that represents real zero.
    pub fn code_zero(&self) -> f64 {
        if self.symmetric {
            (1u32 << (self.bits - 1)) as f64
        } else {
            self.zero_point
        }
    }

    #[inline]
    pub fn quantize_value(&self, x: f64) -> u32 {
        let (lo, hi) = self.code_range();
        if self.symmetric {
            let q = max_signed(self.bits) as f64;
            let v = (x / self.scale).round().clamp(-q, q);
            (v + self.code_zero()) as u32
        } else {
            (x / self.scale + self.zero_point)
                .round()
                .clamp(lo as f64, hi as f64) as u32
        }
    }

    #[inline]
    pub fn dequantize_code(&self, code: u32) -> f64 {
        self.scale * (code as f64 - self.code_zero())
    }

    #[inline]
    fn fake_value(&self, x: f64) -> f64 {
        self.dequantize_code(self.quantize_value(x))
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if (2..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::UnsupportedBits {
            bits,
            what: "linear quantization",
        })
    }
}

#[inline]
fn max_code(bits: u32) -> u32 {
    (1u32 << bits) - 1
}

#[inline]
fn max_signed(bits: u32) -> u32 {
    (1u32 << (bits - 1)) - 1
}

fn check_finite(name: &str, x: &[f32]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            tensor: name.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

/// Maps a real tensor to integer codes.
pub fn quantize_int(x: &[f32], p: &QuantParams) -> Result<Vec<u8>> {
    quantize_int_named("input", x, p)
}

/// As [`quantize_int`], naming the tensor in non-finite errors.
pub fn quantize_int_named(name: &str, x: &[f32], p: &QuantParams) -> Result<Vec<u8>> {
    check_finite(name, x)?;
    Ok(x.iter().map(|&v| p.quantize_value(v as f64) as u8).collect())
}

/// Maps integer codes back to reals: `s * (code - z)`.
pub fn dequantize(codes: &[u8], p: &QuantParams) -> Result<Vec<f32>> {
    let (lo, hi) = p.code_range();
    codes
        .iter()
        .enumerate()
        .map(|(index, &c)| {
            let code = c as u32;
            if code < lo || code > hi {
                Err(Error::CodeOutOfRange {
                    index,
                    code,
                    min: lo,
                    max: hi,
                })
            } else {
                Ok(p.dequantize_code(code) as f32)
            }
        })
        .collect()
}

/// Quantize-then-dequantize in real arithmetic.
pub fn fake_quantize(x: &[f32], p: &QuantParams) -> Result<Vec<f32>> {
    check_finite("input", x)?;
    Ok(x.iter().map(|&v| p.fake_value(v as f64) as f32).collect())
}

/// Straight-through gradients of [`fake_quantize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SteGradients {
    pub grad_x: Vec<f32>,
    pub grad_lower: f64,
    pub grad_upper: f64,
}

/// Straight-through estimator with PACT-style boundary gradients.
///
/// Inside `[lower, upper]` the upstream gradient passes to `x` unchanged.
/// Saturated elements contribute their upstream gradient to the boundary they
/// are clamped to.
pub fn ste_gradients(x: &[f32], p: &QuantParams, upstream: &[f32]) -> Result<SteGradients> {
    if x.len() != upstream.len() {
        return Err(Error::ShapeMismatch(format!(
            "x has {} elements, upstream has {}",
            x.len(),
            upstream.len()
        )));
    }
    let mut grad_x = Vec::with_capacity(x.len());
    let (mut grad_lower, mut grad_upper) = (0.0, 0.0);
    for (&xi, &gi) in x.iter().zip(upstream) {
        let v = xi as f64;
        if v > p.upper {
            grad_upper += gi as f64;
            grad_x.push(0.0);
        } else if v < p.lower {
            grad_lower += gi as f64;
            grad_x.push(0.0);
        } else {
            grad_x.push(gi);
        }
    }
    Ok(SteGradients {
        grad_x,
        grad_lower,
        grad_upper,
    })
}

/// Clipping/rounding split of the fake-quantization mean squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDecomposition {
    pub clipping_mse: f64,
    pub rounding_mse: f64,
    pub total_mse: f64,
}

pub fn error_decomposition(x: &[f32], p: &QuantParams) -> Result<ErrorDecomposition> {
    if x.is_empty() {
        return Err(Error::EmptyTensor("error decomposition"));
    }
    check_finite("input", x)?;
    let (mut clip, mut round) = (0.0, 0.0);
    for &xi in x {
        let v = xi as f64;
        let e = v - p.fake_value(v);
        if v < p.lower || v > p.upper {
            clip += e * e;
        } else {
            round += e * e;
        }
    }
    let n = x.len() as f64;
    let (clipping_mse, rounding_mse) = (clip / n, round / n);
    Ok(ErrorDecomposition {
        clipping_mse,
        rounding_mse,
        total_mse: clipping_mse + rounding_mse,
    })
}

fn fq_mse(x: &[f32], p: &QuantParams) -> f64 {
    let sum: f64 = x
        .iter()
        .map(|&xi| {
            let v = xi as f64;
            let e = v - p.fake_value(v);
            e * e
        })
        .sum();
    sum / x.len() as f64
}

fn extremes(x: &[f32], what: &'static str) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::EmptyTensor(what));
    }
    check_finite("input", x)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in x {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    Ok((lo, hi))
}

/// MAX quantizer: boundaries at the tensor extremes.
pub fn bounds_max(x: &[f32], bits: u32, symmetric: bool) -> Result<QuantParams> {
    let (lo, hi) = extremes(x, "MAX bounds")?;
    if symmetric {
        QuantParams::symmetric(bits, lo.abs().max(hi.abs()).max(MIN_BOUND))
    } else if hi - lo < MIN_BOUND {
        // constant tensor: keep zero inside the range
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        QuantParams::asymmetric(bits, lo, hi.max(lo + MIN_BOUND))
    } else {
        QuantParams::asymmetric(bits, lo, hi)
    }
}

/// Closed-form SAWB coefficients `(c1, c2)` per bit-width:
/// `alpha = c1 * sqrt(E[x^2]) + c2 * E[|x|]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SawbCoefficients {
    pub bits2: (f64, f64),
    pub bits4: (f64, f64),
    pub bits8: (f64, f64),
}

impl Default for SawbCoefficients {
    fn default() -> Self {
        Self {
            bits2: (3.212, -2.178),
            bits4: (12.68, -12.80),
            bits8: (31.76, -35.04),
        }
    }
}

impl SawbCoefficients {
    pub fn for_bits(&self, bits: u32) -> Result<(f64, f64)> {
        match bits {
            2 => Ok(self.bits2),
            4 => Ok(self.bits4),
            8 => Ok(self.bits8),
            _ => Err(Error::UnsupportedBits { bits, what: "SAWB" }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SawbMode {
    /// Scan a geometric grid of boundaries and keep the MSE minimizer.
    OracleGrid,
    /// Moment-based approximation of the MSE-optimal boundary.
    ClosedForm(SawbCoefficients),
}

impl SawbMode {
    pub fn closed_form() -> Self {
        SawbMode::ClosedForm(SawbCoefficients::default())
    }
}

/// SAWB quantizer: symmetric boundary approximating the MSE-optimal one.
pub fn bounds_sawb(x: &[f32], bits: u32, mode: SawbMode) -> Result<QuantParams> {
    if !matches!(bits, 2 | 4 | 8) {
        return Err(Error::UnsupportedBits { bits, what: "SAWB" });
    }
    let (lo, hi) = extremes(x, "SAWB bounds")?;
    if hi - lo == 0.0 {
        return Err(Error::ConstantTensor("SAWB bounds"));
    }
    let max_abs = lo.abs().max(hi.abs());
    match mode {
        SawbMode::OracleGrid => {
            let mut best: Option<(f64, QuantParams)> = None;
            for alpha in sawb_grid(max_abs) {
                let p = QuantParams::symmetric(bits, alpha)?;
                let mse = fq_mse(x, &p);
                // `<=` prefers the larger boundary on exact ties
                if best.as_ref().is_none_or(|(m, _)| mse <= *m) {
                    best = Some((mse, p));
                }
            }
            Ok(best.expect("grid is non-empty").1)
        }
        SawbMode::ClosedForm(coeffs) => {
            let (c1, c2) = coeffs.for_bits(bits)?;
            let n = x.len() as f64;
            let mean_sq = x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
            let mean_abs = x.iter().map(|&v| (v as f64).abs()).sum::<f64>() / n;
            let alpha = c1 * mean_sq.sqrt() + c2 * mean_abs;
            QuantParams::symmetric(bits, alpha.max(MIN_BOUND))
        }
    }
}

/// Geometric candidate boundaries in `(0, max_abs]`, ending exactly at `max_abs`.
pub fn sawb_grid(max_abs: f64) -> impl Iterator<Item = f64> {
    let n = SAWB_GRID_POINTS;
    let ratio = SAWB_GRID_FLOOR.powf(1.0 / (n - 1) as f64);
    (0..n).map(move |i| {
        if i == 0 {
            max_abs
        } else {
            max_abs * ratio.powi(i as i32)
        }
    })
}

/// Outcome of boundary calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PactCalibration {
    pub params: QuantParams,
    pub initial_mse: f64,
    pub final_mse: f64,
    /// MSE before each step, plus the MSE after the last one.
    pub trajectory: Vec<f64>,
}

/// Learns asymmetric boundaries by gradient descent on the quantization MSE.
///
/// Starts from MAX bounds. Saturated elements push the boundary they are
/// clamped to (the PACT term); interior elements contribute through the
/// dependence of the scale on the boundaries. Returns the lowest-MSE bounds
/// visited, so `final_mse <= initial_mse`.
pub fn calibrate_pact(x: &[f32], bits: u32, steps: usize, lr: f64) -> Result<PactCalibration> {
    if steps == 0 {
        return Err(Error::Precondition("calibration needs steps >= 1".into()));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Precondition(format!("learning rate must be positive, got {lr}")));
    }
    let init = bounds_max(x, bits, false)?;
    let (mut lo, mut hi) = (init.lower, init.upper);
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut best = (f64::INFINITY, init);

    for _ in 0..steps {
        let p = QuantParams::asymmetric(bits, lo, hi)
            .map_err(|_| Error::Diverged { trajectory: trajectory.clone() })?;
        let (mse, d_lo, d_hi) = mse_boundary_gradient(x, &p);
        trajectory.push(mse);
        if mse < best.0 {
            best = (mse, p);
        }
        if mse > 10.0 * trajectory[0] || !mse.is_finite() {
            return Err(Error::Diverged { trajectory });
        }
        lo -= lr * d_lo;
        hi -= lr * d_hi;
    }
    if let Ok(p) = QuantParams::asymmetric(bits, lo, hi) {
        let mse = fq_mse(x, &p);
        trajectory.push(mse);
        if mse < best.0 {
            best = (mse, p);
        }
    }
    Ok(PactCalibration {
        params: best.1,
        initial_mse: trajectory[0],
        final_mse: best.0,
        trajectory,
    })
}

/// MSE and its gradient w.r.t. `(lower, upper)`, holding rounding decisions fixed.
fn mse_boundary_gradient(x: &[f32], p: &QuantParams) -> (f64, f64, f64) {
    let n_codes = max_code(p.bits) as f64;
    let (mut sum, mut d_lo, mut d_hi) = (0.0, 0.0, 0.0);
    for &xi in x {
        let v = xi as f64;
        let code = p.quantize_value(v);
        let out = p.dequantize_code(code);
        let e = out - v;
        sum += e * e;
        // out = lower + code * (upper - lower) / n_codes
        let k = code as f64 / n_codes;
        let (g_lo, g_hi) = if v > p.upper {
            (0.0, 1.0)
        } else if v < p.lower {
            (1.0, 0.0)
        } else {
            (1.0 - k, k)
        };
        d_lo += e * g_lo;
        d_hi += e * g_hi;
    }
    let n = x.len() as f64;
    (sum / n, 2.0 * d_lo / n, 2.0 * d_hi / n)
}

/// Boundary strategy of a quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    Fix,
    Max,
    Sawb,
    Pact,
}

impl QuantizerKind {
    pub fn name(self) -> &'static str {
        match self {
            QuantizerKind::Fix => "FIX",
            QuantizerKind::Max => "MAX",
            QuantizerKind::Sawb => "SAWB",
            QuantizerKind::Pact => "PACT",
        }
    }
}

/// Quantizer assignment for one tensor role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    pub kind: QuantizerKind,
    pub bits: u32,
    pub symmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_bounds: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learned_bounds: Option<[f64; 2]>,
}

impl QuantizerSpec {
    pub fn fix(bits: u32, lower: f64, upper: f64) -> Self {
        Self {
            kind: QuantizerKind::Fix,
            bits,
            symmetric: lower == -upper,
            fixed_bounds: Some([lower, upper]),
            learned_bounds: None,
        }
    }

    pub fn max(bits: u32, symmetric: bool) -> Self {
        Self {
            kind: QuantizerKind::Max,
            bits,
            symmetric,
            fixed_bounds: None,
            learned_bounds: None,
        }
    }

    pub fn sawb(bits: u32) -> Self {
        Self {
            kind: QuantizerKind::Sawb,
            bits,
            symmetric: true,
            fixed_bounds: None,
            learned_bounds: None,
        }
    }

    pub fn pact(bits: u32) -> Self {
        Self {
            kind: QuantizerKind::Pact,
            bits,
            symmetric: false,
            fixed_bounds: None,
            learned_bounds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        match self.kind {
            QuantizerKind::Fix => {
                let [lo, hi] = self.fixed_bounds.ok_or_else(|| {
                    Error::InvalidParams("FIX quantizer requires fixed_bounds".into())
                })?;
                if self.symmetric && lo != -hi {
                    return Err(Error::InvalidParams(format!(
                        "symmetric FIX bounds must be ±alpha, got [{lo}, {hi}]"
                    )));
                }
                self.fixed_params().map(|_| ())
            }
            QuantizerKind::Sawb if !self.symmetric => Err(Error::InvalidParams(
                "SAWB is a symmetric quantizer".into(),
            )),
            QuantizerKind::Sawb if !matches!(self.bits, 2 | 4 | 8) => {
                Err(Error::UnsupportedBits {
                    bits: self.bits,
                    what: "SAWB",
                })
            }
            _ => Ok(()),
        }
    }

    /// Whether boundaries come from data (calibration tensors or weights).
    pub fn is_data_dependent(&self) -> bool {
        match self.kind {
            QuantizerKind::Fix => false,
            QuantizerKind::Pact => self.learned_bounds.is_none(),
            QuantizerKind::Max | QuantizerKind::Sawb => true,
        }
    }

    /// Parameters known without looking at data (FIX, or PACT with learned bounds).
    pub fn fixed_params(&self) -> Result<QuantParams> {
        let bounds = match self.kind {
            QuantizerKind::Fix => self.fixed_bounds,
            QuantizerKind::Pact => self.learned_bounds,
            _ => None,
        };
        let [lo, hi] = bounds.ok_or_else(|| {
            Error::InvalidParams(format!("{} quantizer has no preset bounds", self.kind.name()))
        })?;
        if self.symmetric {
            QuantParams::symmetric(self.bits, hi)
        } else {
            QuantParams::asymmetric(self.bits, lo, hi)
        }
    }

    /// Derives parameters for a weight tensor.
    pub fn weight_params(&self, w: &[f32]) -> Result<QuantParams> {
        match self.kind {
            QuantizerKind::Sawb => bounds_sawb(w, self.bits, SawbMode::OracleGrid)
                .or_else(|e| match e {
                    Error::ConstantTensor(_) => bounds_max(w, self.bits, true),
                    e => Err(e),
                }),
            QuantizerKind::Max => bounds_max(w, self.bits, self.symmetric),
            QuantizerKind::Fix | QuantizerKind::Pact => self.fixed_params(),
        }
    }
}
