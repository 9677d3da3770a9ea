//! Sobol' base-2 digital nets with digital (XOR) shifts.
//!
//! Points are generated in Gray-code order as 52-bit integers, so that a
//! digital shift is an exact integer XOR and the conversion to `[0, 1)` is a
//! single multiplication by `2^-52`. The first `2^m` points of the sequence
//! form a `(t, m, s)`-net; smaller power-of-two prefixes of one base net are
//! therefore themselves nets, which the multilevel estimator relies on.
//!
//! Direction numbers follow the Joe–Kuo text layout
//!
//! ```text
//! d  s  a  m_1 m_2 ... m_s
//! ```
//!
//! where line `d` describes dimension `d` through a primitive polynomial of
//! degree `s` with interior coefficients `a`, and initial odd integers `m_i <
//! 2^i`. Dimension 1 is the van der Corput sequence and needs no line. A
//! table for the first 13 dimensions is embedded; larger tables can be parsed
//! from the standard file.

use crate::{Error, Result};
use rand::Rng;

/// Number of fractional bits in generated points.
pub const BITS: u32 = 52;
const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;
/// Maximum supported `log2` of the net size.
pub const MAX_LOG2_POINTS: u32 = 32;

/// Embedded Joe–Kuo direction numbers for dimensions 2 to 13.
const EMBEDDED: &str = "\
d s a m_i
2 1 0 1
3 2 1 1 3
4 3 1 1 3 1
5 3 2 1 1 1
6 4 1 1 1 3 3
7 4 4 1 3 5 13
8 5 2 1 1 5 5 17
9 5 4 1 1 5 5 5
10 5 7 1 1 7 11 19
11 5 11 1 1 5 1 1
12 5 13 1 1 1 3 11
13 5 14 1 3 5 5 31
";

/// One row of a direction-number table.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Row {
    s: u32,
    a: u32,
    m: Vec<u32>,
}

/// A parsed direction-number table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionNumbers {
    rows: Vec<Row>,
}

impl DirectionNumbers {
    /// The embedded table (13 dimensions).
    pub fn embedded() -> Self {
        Self::parse(EMBEDDED).expect("embedded direction numbers are well formed")
    }

    /// Parses a table in the Joe–Kuo layout. A non-numeric first line is a header.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0].parse::<u64>().is_err() {
                if rows.is_empty() && lineno == 0 {
                    continue;
                }
                return Err(Error::DirectionNumbers {
                    line: lineno + 1,
                    message: format!("unexpected token {:?}", fields[0]),
                });
            }
            let nums: std::result::Result<Vec<u64>, _> = fields.iter().map(|f| f.parse::<u64>()).collect();
            let nums = nums.map_err(|e| Error::DirectionNumbers {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            if nums.len() < 3 {
                return Err(Error::DirectionNumbers {
                    line: lineno + 1,
                    message: "expected at least d, s, a".into(),
                });
            }
            let d = nums[0] as usize;
            if d != rows.len() + 2 {
                return Err(Error::DirectionNumbers {
                    line: lineno + 1,
                    message: format!("expected dimension {}, found {d}", rows.len() + 2),
                });
            }
            let s = nums[1] as u32;
            let a = nums[2] as u32;
            let m: Vec<u32> = nums[3..].iter().map(|&v| v as u32).collect();
            if s == 0 || m.len() != s as usize {
                return Err(Error::DirectionNumbers {
                    line: lineno + 1,
                    message: format!("degree {s} needs {s} initial numbers, found {}", m.len()),
                });
            }
            for (i, &mi) in m.iter().enumerate() {
                if mi % 2 == 0 || u64::from(mi) >= 1u64 << (i + 1) {
                    return Err(Error::DirectionNumbers {
                        line: lineno + 1,
                        message: format!("m_{} = {mi} must be odd and below 2^{}", i + 1, i + 1),
                    });
                }
            }
            rows.push(Row { s, a, m });
        }
        Ok(Self { rows })
    }

    /// Number of dimensions covered (including the van der Corput dimension).
    pub fn max_dim(&self) -> usize {
        self.rows.len() + 1
    }

    /// 52-bit direction integers `V_1..V_32` of dimension `dim` (0-based).
    fn directions(&self, dim: usize) -> [u64; MAX_LOG2_POINTS as usize] {
        let n = MAX_LOG2_POINTS as usize;
        let mut v = [0u64; MAX_LOG2_POINTS as usize];
        if dim == 0 {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = 1u64 << (BITS - 1 - i as u32);
            }
            return v;
        }
        let row = &self.rows[dim - 1];
        let s = row.s as usize;
        for i in 0..s.min(n) {
            v[i] = u64::from(row.m[i]) << (BITS - 1 - i as u32);
        }
        for i in s..n {
            let mut x = v[i - s] ^ (v[i - s] >> s);
            for k in 1..s {
                if (row.a >> (s - 1 - k)) & 1 == 1 {
                    x ^= v[i - k];
                }
            }
            v[i] = x;
        }
        v
    }
}

/// An unshifted Sobol' net of `n = 2^m` points in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SobolNet {
    dim: usize,
    n: usize,
    bits: Vec<u64>,
}

impl SobolNet {
    /// Net from the embedded direction numbers.
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        Self::with_directions(dim, n, &DirectionNumbers::embedded())
    }

    /// Net from an explicit direction-number table.
    pub fn with_directions(dim: usize, n: usize, table: &DirectionNumbers) -> Result<Self> {
        if dim == 0 || dim > table.max_dim() {
            return Err(Error::DimensionUnsupported {
                dim,
                available: table.max_dim(),
            });
        }
        if !n.is_power_of_two() || n > 1usize << MAX_LOG2_POINTS {
            return Err(Error::InvalidDesign(format!(
                "net size {n} must be a power of two not exceeding 2^{MAX_LOG2_POINTS}"
            )));
        }
        let dirs: Vec<_> = (0..dim).map(|j| table.directions(j)).collect();
        let mut bits = vec![0u64; n * dim];
        let mut cur = vec![0u64; dim];
        for i in 1..n {
            let c = (i - 1).trailing_ones() as usize;
            for j in 0..dim {
                cur[j] ^= dirs[j][c];
            }
            bits[i * dim..(i + 1) * dim].copy_from_slice(&cur);
        }
        Ok(Self { dim, n, bits })
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.n
    }

    /// Whether the net is empty (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Integer coordinates of point `i`.
    #[inline]
    pub fn point_bits(&self, i: usize) -> &[u64] {
        &self.bits[i * self.dim..(i + 1) * self.dim]
    }

    /// Point `i` after the digital shift `shift`, written to `out`.
    #[inline]
    pub fn shifted_point(&self, i: usize, shift: &DigitalShift, out: &mut [f64]) {
        for ((o, &b), &s) in out.iter_mut().zip(self.point_bits(i)).zip(&shift.0) {
            *o = (b ^ s) as f64 * SCALE;
        }
    }

    /// Unshifted point `i` in `[0, 1)^dim`.
    pub fn point(&self, i: usize, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(self.point_bits(i)) {
            *o = b as f64 * SCALE;
        }
    }
}

/// A digital shift: one random 52-bit integer per coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitalShift(pub Vec<u64>);

impl DigitalShift {
    /// Uniformly random shift.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.random::<u64>() >> (64 - BITS)).collect())
    }

    /// The zero shift.
    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    /// Composition `self ⊕ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect())
    }
}
