//! Grid quantization and d-dimensional space-filling-curve codecs.
//!
//! Two curves are provided. The Morton (Z-order) code interleaves coordinate
//! bits with dimension 0 in the least-significant position of every d-bit
//! group. The Hilbert code uses Skilling's transpose formulation: coordinates
//! are converted in place to the "transposed" Hilbert index with a Gray-code
//! pass, and the transposed bits are then interleaved with dimension 0 in the
//! most-significant position of every group. For d = 2, b = 1 the resulting
//! cell order is (0,0), (0,1), (1,1), (1,0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total code width available to a curve index.
pub const MAX_CODE_BITS: u32 = 128;
/// Coordinates are stored as `u64`, so a single dimension carries at most 64 bits.
pub const MAX_BITS_PER_DIM: u32 = 64;
/// Bits per dimension used when a caller does not pick one.
pub const DEFAULT_BITS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curve {
    Hilbert,
    #[serde(alias = "morton", alias = "z-order")]
    Zorder,
}

impl std::str::FromStr for Curve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hilbert" => Ok(Curve::Hilbert),
            "zorder" | "z-order" | "morton" => Ok(Curve::Zorder),
            other => Err(Error::input(format!("unknown curve `{other}`"))),
        }
    }
}

/// Affine mapping from a real box onto the integer grid `[0, 2^bits)^dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerConfig {
    dims: usize,
    bits: u32,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl QuantizerConfig {
    pub fn new(bits: u32, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let dims = lo.len();
        if dims == 0 {
            return Err(Error::input("quantizer needs at least one dimension"));
        }
        if hi.len() != dims {
            return Err(Error::input(format!(
                "bound length mismatch: lo has {dims}, hi has {}",
                hi.len()
            )));
        }
        if bits == 0 || bits > MAX_BITS_PER_DIM {
            return Err(Error::input(format!(
                "bits per dimension must be in 1..={MAX_BITS_PER_DIM}, got {bits}"
            )));
        }
        if dims as u64 * bits as u64 > MAX_CODE_BITS as u64 {
            return Err(Error::input(format!(
                "bit budget exceeded: {dims} dims x {bits} bits > {MAX_CODE_BITS}"
            )));
        }
        for (j, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || h < l {
                return Err(Error::input(format!(
                    "dimension {j}: bounds [{l}, {h}] are not a finite non-empty interval"
                )));
            }
        }
        Ok(Self { dims, bits, lo, hi })
    }

    /// Unit box `[0, 1]^dims`.
    pub fn unit(dims: usize, bits: u32) -> Result<Self> {
        Self::new(bits, vec![0.0; dims], vec![1.0; dims])
    }

    /// Bounds taken from the per-dimension min/max of `rows`.
    pub fn fit<'a, I>(dims: usize, bits: u32, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut lo = vec![f64::INFINITY; dims];
        let mut hi = vec![f64::NEG_INFINITY; dims];
        let mut any = false;
        for row in rows {
            any = true;
            for (j, &v) in row.iter().enumerate().take(dims) {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        if !any {
            return Err(Error::input("cannot fit quantizer bounds to zero rows"));
        }
        Self::new(bits, lo, hi)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn code_bits(&self) -> u32 {
        self.dims as u32 * self.bits
    }

    fn max_coord(&self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    fn check_code(&self, code: SfcCode) -> Result<()> {
        let width = self.code_bits();
        if width < 128 && code.0 >> width != 0 {
            return Err(Error::input(format!(
                "code {} does not fit in {width} bits",
                code.0
            )));
        }
        Ok(())
    }

    fn check_point(&self, p: &GridPoint) -> Result<()> {
        if p.0.len() != self.dims {
            return Err(Error::input(format!(
                "grid point has {} coords, expected {}",
                p.0.len(),
                self.dims
            )));
        }
        let max = self.max_coord();
        if let Some(c) = p.0.iter().find(|&&c| c > max) {
            return Err(Error::input(format!(
                "coordinate {c} exceeds {} bits",
                self.bits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPoint(pub Vec<u64>);

impl GridPoint {
    pub fn coords(&self) -> &[u64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SfcCode(pub u128);

/// Round-half-up affine quantization, clamped to the grid. Degenerate
/// (zero-width) dimensions map to 0.
pub fn quantize(point: &[f64], cfg: &QuantizerConfig) -> Result<GridPoint> {
    if point.len() != cfg.dims {
        return Err(Error::input(format!(
            "point has {} features, quantizer expects {}",
            point.len(),
            cfg.dims
        )));
    }
    let max = cfg.max_coord();
    let scale = max as f64;
    let coords = point
        .iter()
        .zip(cfg.lo.iter().zip(&cfg.hi))
        .map(|(&x, (&lo, &hi))| {
            if !x.is_finite() {
                return Err(Error::input(format!("non-finite coordinate {x}")));
            }
            if hi == lo {
                return Ok(0);
            }
            let scaled = ((x - lo) / (hi - lo) * scale + 0.5).floor();
            Ok(if scaled <= 0.0 {
                0
            } else if scaled >= scale {
                max
            } else {
                scaled as u64
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridPoint(coords))
}

pub fn morton_encode(p: &GridPoint, cfg: &QuantizerConfig) -> Result<SfcCode> {
    cfg.check_point(p)?;
    let d = cfg.dims;
    let mut code = 0u128;
    for k in 0..cfg.bits as usize {
        for (j, &c) in p.0.iter().enumerate() {
            code |= (((c >> k) & 1) as u128) << (k * d + j);
        }
    }
    Ok(SfcCode(code))
}

pub fn morton_decode(code: SfcCode, cfg: &QuantizerConfig) -> Result<GridPoint> {
    cfg.check_code(code)?;
    let d = cfg.dims;
    let mut coords = vec![0u64; d];
    for k in 0..cfg.bits as usize {
        for (j, c) in coords.iter_mut().enumerate() {
            *c |= (((code.0 >> (k * d + j)) & 1) as u64) << k;
        }
    }
    Ok(GridPoint(coords))
}

pub fn hilbert_encode(p: &GridPoint, cfg: &QuantizerConfig) -> Result<SfcCode> {
    cfg.check_point(p)?;
    let mut x = p.0.clone();
    axes_to_transpose(&mut x, cfg.bits);
    Ok(SfcCode(interleave_msb_first(&x, cfg.bits)))
}

pub fn hilbert_decode(code: SfcCode, cfg: &QuantizerConfig) -> Result<GridPoint> {
    cfg.check_code(code)?;
    let mut x = deinterleave_msb_first(code.0, cfg.dims, cfg.bits);
    transpose_to_axes(&mut x, cfg.bits);
    Ok(GridPoint(x))
}

/// Encode with whichever curve is requested.
pub fn encode(curve: Curve, p: &GridPoint, cfg: &QuantizerConfig) -> Result<SfcCode> {
    match curve {
        Curve::Hilbert => hilbert_encode(p, cfg),
        Curve::Zorder => morton_encode(p, cfg),
    }
}

pub fn decode(curve: Curve, code: SfcCode, cfg: &QuantizerConfig) -> Result<GridPoint> {
    match curve {
        Curve::Hilbert => hilbert_decode(code, cfg),
        Curve::Zorder => morton_decode(code, cfg),
    }
}

// Skilling, "Programming the Hilbert curve" (AIP Conf. Proc. 707, 2004).
fn axes_to_transpose(x: &mut [u64], bits: u32) {
    let n = x.len();
    // Inverse undo.
    for q_bit in (1..bits).rev() {
        let q = 1u64 << q_bit;
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
    }
    // Gray encode.
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0u64;
    for q_bit in (1..bits).rev() {
        let q = 1u64 << q_bit;
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
}

fn transpose_to_axes(x: &mut [u64], bits: u32) {
    let n = x.len();
    // Gray decode.
    let t = x[n - 1] >> 1;
    for i in (1..n).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    // Undo excess work.
    for q_bit in 1..bits {
        let q = 1u64 << q_bit;
        let p = q - 1;
        for i in (0..n).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
    }
}

fn interleave_msb_first(x: &[u64], bits: u32) -> u128 {
    let mut h = 0u128;
    for k in (0..bits).rev() {
        for &v in x {
            h = (h << 1) | ((v >> k) & 1) as u128;
        }
    }
    h
}

fn deinterleave_msb_first(mut h: u128, dims: usize, bits: u32) -> Vec<u64> {
    let mut x = vec![0u64; dims];
    for k in 0..bits {
        for v in x.iter_mut().rev() {
            *v |= ((h & 1) as u64) << k;
            h >>= 1;
        }
    }
    x
}
