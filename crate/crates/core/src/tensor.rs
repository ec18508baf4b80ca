//! Bit-packed integer tensors and integer matrix-vector kernels.
//!
//! Payload layout: row-major, codes packed little-end-first inside each byte
//! (for 4-bit codes the low nibble holds the even element). Two-bit codes pack
//! four per byte the same way. Trailing pad bits are zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{quantize_int, QuantParams};

/// Dense real tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl FloatTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {numel} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "float tensor".into(),
                index,
            });
        }
        Ok(Self { shape, values })
    }

    pub fn vector(values: Vec<f32>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Integer-coded tensor with per-tensor quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    shape: Vec<usize>,
    bits: u32,
    codes: Vec<u8>,
    params: QuantParams,
}

/// Number of payload bytes for `numel` codes at `bits` each.
pub fn packed_len(numel: usize, bits: u32) -> usize {
    (numel * bits as usize).div_ceil(8)
}

fn check_storage_bits(bits: u32) -> Result<()> {
    match bits {
        2 | 4 | 8 => Ok(()),
        _ => Err(Error::UnsupportedBits {
            bits,
            what: "packed storage",
        }),
    }
}

/// Packs integer codes.
pub fn pack(codes: &[u8], shape: Vec<usize>, params: QuantParams) -> Result<PackedTensor> {
    let bits = params.bits;
    check_storage_bits(bits)?;
    let numel: usize = shape.iter().product();
    if numel != codes.len() {
        return Err(Error::ShapeMismatch(format!(
            "shape {shape:?} holds {numel} codes, got {}",
            codes.len()
        )));
    }
    let (lo, hi) = params.code_range();
    if let Some(index) = codes
        .iter()
        .position(|&c| (c as u32) < lo || (c as u32) > hi)
    {
        return Err(Error::CodeOutOfRange {
            index,
            code: codes[index] as u32,
            min: lo,
            max: hi,
        });
    }
    let per_byte = (8 / bits) as usize;
    let mut payload = vec![0u8; packed_len(numel, bits)];
    for (i, &c) in codes.iter().enumerate() {
        let shift = (i % per_byte) as u32 * bits;
        payload[i / per_byte] |= c << shift;
    }
    Ok(PackedTensor {
        shape,
        bits,
        codes: payload,
        params,
    })
}

/// Unpacks every code of a packed tensor.
pub fn unpack(t: &PackedTensor) -> Vec<u8> {
    (0..t.numel()).map(|i| t.code(i)).collect()
}

impl PackedTensor {
    /// Rebuilds a tensor from a raw payload, validating length, padding and codes.
    pub fn from_payload(shape: Vec<usize>, params: QuantParams, payload: Vec<u8>) -> Result<Self> {
        check_storage_bits(params.bits)?;
        params.validate()?;
        let numel: usize = shape.iter().product();
        let expected = packed_len(numel, params.bits);
        if payload.len() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "packed payload of {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let t = Self {
            shape,
            bits: params.bits,
            codes: payload,
            params,
        };
        let used_bits = numel * t.bits as usize;
        if !used_bits.is_multiple_of(8) {
            let last = t.codes[expected - 1];
            if last >> (used_bits % 8) != 0 {
                return Err(Error::CorruptCheckpoint("non-zero pad bits".into()));
            }
        }
        let (lo, hi) = params.code_range();
        for i in 0..numel {
            let c = t.code(i) as u32;
            if c < lo || c > hi {
                return Err(Error::CodeOutOfRange {
                    index: i,
                    code: c,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(t)
    }

    /// Quantizes a real tensor and packs it.
    pub fn quantize(x: &[f32], shape: Vec<usize>, params: QuantParams) -> Result<Self> {
        let codes = quantize_int(x, &params)?;
        pack(&codes, shape, params)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn params(&self) -> &QuantParams {
        &self.params
    }

    pub fn payload(&self) -> &[u8] {
        &self.codes
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    #[inline]
    pub fn code(&self, i: usize) -> u8 {
        let per_byte = (8 / self.bits) as usize;
        let shift = (i % per_byte) as u32 * self.bits;
        let mask = ((1u16 << self.bits) - 1) as u8;
        (self.codes[i / per_byte] >> shift) & mask
    }

    /// Codes shifted so that real zero maps to integer zero (`code - z`).
    /// Requires an integral zero point.
    pub fn centered(&self) -> Result<Vec<i32>> {
        let z = self.params.code_zero();
        if z.fract() != 0.0 {
            return Err(Error::InvalidParams(format!(
                "integer kernels need an integral zero point, got {z}"
            )));
        }
        let z = z as i32;
        Ok((0..self.numel()).map(|i| self.code(i) as i32 - z).collect())
    }

    /// Real values represented by the codes.
    pub fn dequantize(&self) -> Vec<f32> {
        (0..self.numel())
            .map(|i| self.params.dequantize_code(self.code(i) as u32) as f32)
            .collect()
    }
}

/// Worst-case accumulator check: `bits_w + bits_x + ceil(log2 k) <= 31`.
pub fn check_accumulator_headroom(bits_w: u32, bits_x: u32, k: usize) -> Result<()> {
    let log_k = if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    };
    let needed = bits_w + bits_x + log_k;
    if needed > 31 {
        Err(Error::AccumulatorOverflow {
            bits_w,
            bits_x,
            k,
            needed,
        })
    } else {
        Ok(())
    }
}

/// Output scaling of [`qgemv`]. Only real-valued output is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutScaleMode {
    #[default]
    FloatOut,
}

/// Signed weight matrix unpacked once for repeated integer products.
#[derive(Debug, Clone)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
    scale: f64,
    bits: u32,
}

impl IntMatrix {
    pub fn from_packed(w: &PackedTensor) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "weight must be 2-D, got {:?}",
                w.shape()
            )));
        }
        if !w.params().symmetric {
            return Err(Error::InvalidParams(
                "integer kernels take symmetric weights (zero point 0)".into(),
            ));
        }
        let values = w.centered()?.into_iter().map(|v| v as i8).collect();
        Ok(Self {
            rows: w.shape()[0],
            cols: w.shape()[1],
            values,
            scale: w.params().scale,
            bits: w.bits(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `out[i] = s_w * sum_seg s_seg * sum_k w[i, off + k] * (x_seg[k] - z_seg) + bias[i]`.
    ///
    /// Each segment is a slice of the input vector with its own parameters.
    pub fn gemv_segments(&self, segments: &[&PackedTensor], bias: Option<&[f32]>) -> Result<Vec<f32>> {
        let total: usize = segments.iter().map(|s| s.numel()).sum();
        if total != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "weight has {} columns, input has {total} elements",
                self.cols
            )));
        }
        if let Some(b) = bias {
            if b.len() != self.rows {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} elements, expected {}",
                    b.len(),
                    self.rows
                )));
            }
        }
        let mut centered = Vec::with_capacity(segments.len());
        for seg in segments {
            check_accumulator_headroom(self.bits, seg.bits(), self.cols)?;
            centered.push((seg.centered()?, self.scale * seg.params().scale));
        }
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = &self.values[i * self.cols..(i + 1) * self.cols];
            let mut acc_real = 0.0f64;
            let mut off = 0;
            for (xs, s) in &centered {
                let acc: i32 = row[off..off + xs.len()]
                    .iter()
                    .zip(xs)
                    .map(|(&w, &x)| w as i32 * x)
                    .sum();
                acc_real += s * acc as f64;
                off += xs.len();
            }
            let b = bias.map_or(0.0, |b| b[i] as f64);
            out.push((acc_real + b) as f32);
        }
        Ok(out)
    }
}

/// Integer matrix-vector product with real output.
pub fn qgemv(w: &PackedTensor, x: &PackedTensor, bias: &FloatTensor) -> Result<FloatTensor> {
    qgemv_mode(w, x, bias, OutScaleMode::FloatOut)
}

pub fn qgemv_mode(
    w: &PackedTensor,
    x: &PackedTensor,
    bias: &FloatTensor,
    _mode: OutScaleMode,
) -> Result<FloatTensor> {
    let m = IntMatrix::from_packed(w)?;
    if x.numel() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "inner dimensions differ: {} vs {}",
            m.cols(),
            x.numel()
        )));
    }
    check_accumulator_headroom(m.bits(), x.bits(), m.cols())?;
    let out = m.gemv_segments(&[x], Some(&bias.values))?;
    FloatTensor::vector(out)
}

/// Batched [`qgemv`]: one output row per input column, shape `[n, rows]`.
pub fn qgemm(w: &PackedTensor, xs: &[PackedTensor], bias: &FloatTensor) -> Result<FloatTensor> {
    let m = IntMatrix::from_packed(w)?;
    let mut values = Vec::with_capacity(xs.len() * m.rows());
    for x in xs {
        if x.numel() != m.cols() {
            return Err(Error::ShapeMismatch(format!(
                "inner dimensions differ: {} vs {}",
                m.cols(),
                x.numel()
            )));
        }
        values.extend(m.gemv_segments(&[x], Some(&bias.values))?);
    }
    FloatTensor::new(vec![xs.len(), m.rows()], values)
}

/// Batched product over real columns, each quantized with `x_params` first.
pub fn qgemm_float(
    w: &PackedTensor,
    xs: &FloatTensor,
    x_params: &QuantParams,
    bias: &FloatTensor,
) -> Result<FloatTensor> {
    if xs.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "batch must be [n, k], got {:?}",
            xs.shape
        )));
    }
    let k = xs.shape[1];
    let params = x_params.to_kernel();
    let cols = xs
        .values
        .chunks(k.max(1))
        .take(xs.shape[0])
        .map(|c| PackedTensor::quantize(c, vec![k], params))
        .collect::<Result<Vec<_>>>()?;
    qgemm(w, &cols, bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asym4() -> QuantParams {
        QuantParams::asymmetric(4, 0.0, 15.0).unwrap()
    }

    #[test]
    fn pack_low_nibble_first() {
        let t = pack(&[1, 2], vec![2], asym4()).unwrap();
        assert_eq!(t.payload(), &[0x21]);
        assert_eq!(unpack(&t), vec![1, 2]);
    }

    #[test]
    fn pack_edge_cases() {
        let empty = pack(&[], vec![0], asym4()).unwrap();
        assert!(empty.payload().is_empty());
        let odd = pack(&[15, 3, 7], vec![3], asym4()).unwrap();
        assert_eq!(odd.payload(), &[0x3F, 0x07]);
        assert_eq!(unpack(&odd), vec![15, 3, 7]);
        assert!(matches!(
            pack(&[16], vec![1], asym4()),
            Err(Error::CodeOutOfRange { .. })
        ));
        let two = QuantParams::asymmetric(2, 0.0, 3.0).unwrap();
        let t = pack(&[1, 2, 3, 0, 1], vec![5], two).unwrap();
        assert_eq!(t.payload(), &[0b00_11_10_01, 0b01]);
    }

    #[test]
    fn from_payload_rejects_dirty_padding() {
        let err = PackedTensor::from_payload(vec![1], asym4(), vec![0xF1]).unwrap_err();
        assert!(matches!(err, Error::CorruptCheckpoint(_)));
        assert!(PackedTensor::from_payload(vec![3], asym4(), vec![0x21]).is_err());
    }

    #[test]
    fn qgemv_hand_case() {
        let w_params = QuantParams::symmetric(4, 3.5).unwrap(); // s = 0.5
        let w = PackedTensor::quantize(&[0.5, 1.0], vec![1, 2], w_params).unwrap();
        let x_params = QuantParams::asymmetric(4, 0.0, 3.75).unwrap(); // s = 0.25
        let x = pack(&[2, 4], vec![2], x_params).unwrap();
        let out = qgemv(&w, &x, &FloatTensor::vector(vec![0.0]).unwrap()).unwrap();
        assert_eq!(out.values, vec![1.25]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let w_params = QuantParams::symmetric(4, 1.0).unwrap();
        let w = PackedTensor::quantize(&[0.0; 6], vec![2, 3], w_params).unwrap();
        let x = PackedTensor::quantize(&[0.3, -0.2, 0.9], vec![3], w_params).unwrap();
        let bias = FloatTensor::vector(vec![0.125, -3.0]).unwrap();
        assert_eq!(qgemv(&w, &x, &bias).unwrap().values, vec![0.125, -3.0]);
    }

    #[test]
    fn headroom_check() {
        assert!(check_accumulator_headroom(8, 8, 2048).is_ok());
        assert!(check_accumulator_headroom(8, 8, 1 << 15).is_ok());
        assert!(matches!(
            check_accumulator_headroom(8, 8, (1 << 15) + 1),
            Err(Error::AccumulatorOverflow { needed: 32, .. })
        ));
    }

    #[test]
    fn qgemv_rejects_bad_operands() {
        let a = QuantParams::asymmetric(4, -1.0, 1.0).unwrap();
        let w = PackedTensor::quantize(&[0.1, 0.2], vec![1, 2], a).unwrap();
        let x = PackedTensor::quantize(&[0.1, 0.2], vec![2], a.to_kernel()).unwrap();
        let bias = FloatTensor::vector(vec![0.0]).unwrap();
        assert!(qgemv(&w, &x, &bias).is_err());
        let s = QuantParams::symmetric(4, 1.0).unwrap();
        let w = PackedTensor::quantize(&[0.1, 0.2], vec![1, 2], s).unwrap();
        let x3 = PackedTensor::quantize(&[0.1, 0.2, 0.3], vec![3], s).unwrap();
        assert!(matches!(qgemv(&w, &x3, &bias), Err(Error::ShapeMismatch(_))));
        let xr = PackedTensor::quantize(&[0.1, 0.2], vec![2], a).unwrap();
        if !a.has_integer_zero_point() {
            assert!(qgemv(&w, &xr, &bias).is_err());
        }
    }

    #[test]
    fn qgemm_batch_cases() {
        let s = QuantParams::symmetric(4, 1.0).unwrap();
        let w = PackedTensor::quantize(&[0.5, -0.25, 1.0, 0.75], vec![2, 2], s).unwrap();
        let bias = FloatTensor::vector(vec![0.1, 0.2]).unwrap();
        let x = PackedTensor::quantize(&[0.3, -0.6], vec![2], s).unwrap();
        let single = qgemv(&w, &x, &bias).unwrap();
        let batch = qgemm(&w, std::slice::from_ref(&x), &bias).unwrap();
        assert_eq!(batch.values, single.values);
        let empty = qgemm(&w, &[], &bias).unwrap();
        assert_eq!(empty.shape, vec![0, 2]);
        assert!(empty.values.is_empty());
    }
}
