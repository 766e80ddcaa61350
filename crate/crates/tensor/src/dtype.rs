//! Scalar element types.
//!
//! The whole stack is generic over [`Element`] so the same code runs in
//! f64 (tests, gradient oracles) and f32 (training throughput). The
//! precision is picked once per run and never mixed.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Runtime tag for the scalar type of a run or checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar type usable as tensor element.
pub trait Element:
    Float + AddAssign + SubAssign + MulAssign + Debug + Display + Default + Send + Sync + 'static
{
    const DTYPE: DType;
    const BYTE_WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Append the little-endian byte encoding to `buf`.
    fn write_le(self, buf: &mut Vec<u8>);
    /// Decode from exactly `BYTE_WIDTH` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    const BYTE_WIDTH: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    const BYTE_WIDTH: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}
