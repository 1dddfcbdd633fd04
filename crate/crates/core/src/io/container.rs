use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, VideoTensor};

pub const MAGIC: &[u8; 4] = b"DCVT";
pub const VERSION: u16 = 1;

/// An n-dimensional `f32` array as stored on disk: `MAGIC`, `u16` version,
/// `u16` rank, `rank × u32` dims, then the row-major payload. Everything is
/// little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Container {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!("{} values for dims {dims:?}", data.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) || dims.len() > u16::MAX as usize {
            return Err(Error::Format("dims exceed the header range".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_video(v: &VideoTensor) -> Self {
        let d = v.dims();
        Self {
            dims: vec![d.frames, d.channels, d.height, d.width],
            data: v.as_slice().to_vec(),
        }
    }

    /// Rank-4 `frames × channels × height × width` only.
    pub fn into_video(self) -> Result<VideoTensor> {
        match self.dims[..] {
            [f, c, h, w] => VideoTensor::new(Dims::new(f, c, h, w), self.data),
            _ => Err(Error::Format(format!(
                "expected a rank-4 video tensor, got rank {}",
                self.dims.len()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Format(format!("tensor container: {m}"));
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let header = 8 + 4 * rank;
        if bytes.len() < header {
            return Err(fail("truncated header"));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| fail("dims overflow"))?;
        if bytes.len() - header != count * 4 {
            return Err(fail(&format!(
                "payload has {} bytes, dims {dims:?} need {}",
                bytes.len() - header,
                count * 4
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    super::write_atomic(path, &c.to_bytes())
}

pub fn read_container(path: &Path) -> Result<Container> {
    Container::from_bytes(&super::read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let c = Container::new(vec![2, 1], vec![1.0, -0.5]).unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"DCVT");
        assert_eq!(&b[4..8], &[1, 0, 2, 0]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn rejects_corrupt_input() {
        let b = Container::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        assert!(Container::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut v2 = b;
        v2[4] = 2;
        assert!(Container::from_bytes(&v2).is_err());
        assert!(Container::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Container::new(vec![3], vec![0.0; 3]).unwrap().into_video().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_is_byte_exact(dims in prop::collection::vec(1usize..5, 0..5), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503) & 0x7f7f_ffff))
                .collect();
            let c = Container::new(dims, data).unwrap();
            let bytes = c.to_bytes();
            let back = Container::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, c);
        }
    }
}
