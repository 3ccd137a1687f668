//! PCT1 tensor files.
//!
//! Layout (little-endian): `b"PCT1"`, `u32` rank, `rank × u32` dims,
//! `u8` dtype (0 = f32, 1 = u8), then the row-major payload.
//! Several tensors may be concatenated in one stream.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PCT1";

#[derive(Debug, Clone, PartialEq)]
pub enum PctData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PctTensor {
    pub dims: Vec<u32>,
    pub data: PctData,
}

impl PctTensor {
    pub fn f32(dims: &[usize], values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let data: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
        Self::checked(dims, PctData::F32(data))
    }

    pub fn u8(dims: &[usize], values: Vec<u8>) -> Result<Self> {
        Self::checked(dims, PctData::U8(values))
    }

    fn checked(dims: &[usize], data: PctData) -> Result<Self> {
        let n: usize = dims.iter().product();
        let len = match &data {
            PctData::F32(v) => v.len(),
            PctData::U8(v) => v.len(),
        };
        if n != len {
            return Err(Error::Shape(format!("dims {dims:?} hold {n} values, got {len}")));
        }
        let dims = dims
            .iter()
            .map(|&d| u32::try_from(d).map_err(|_| Error::Shape(format!("dim {d} too large"))))
            .collect::<Result<_>>()?;
        Ok(Self { dims, data })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            PctData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            PctData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        match &self.data {
            PctData::F32(v) => {
                w.write_all(&[0])?;
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            PctData::U8(v) => {
                w.write_all(&[1])?;
                w.write_all(v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Read one tensor; `Ok(None)` at a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>> {
        let mut magic = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            let n = r.read(&mut magic[got..])?;
            if n == 0 {
                if got == 0 {
                    return Ok(None);
                }
                return Err(Error::Schema("truncated PCT1 header".into()));
            }
            got += n;
        }
        if &magic != MAGIC {
            return Err(Error::Schema(format!("bad PCT1 magic {magic:?}")));
        }
        let rank = read_u32(r)? as usize;
        if rank > 16 {
            return Err(Error::Schema(format!("implausible PCT1 rank {rank}")));
        }
        let dims = (0..rank).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let data = match code[0] {
            0 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                PctData::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            }
            1 => {
                let mut buf = vec![0u8; n];
                r.read_exact(&mut buf)?;
                PctData::U8(buf)
            }
            c => return Err(Error::Schema(format!("unknown PCT1 dtype {c}"))),
        };
        Ok(Some(Self { dims, data }))
    }

    pub fn read_all(bytes: &[u8]) -> Result<Vec<Self>> {
        let mut cursor = bytes;
        let mut out = Vec::new();
        while let Some(t) = Self::read_from(&mut cursor)? {
            out.push(t);
        }
        Ok(out)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = PctTensor::u8(&[2, 1], vec![7, 9]).unwrap();
        assert_eq!(t.to_bytes(), vec![b'P', b'C', b'T', b'1', 2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 7, 9]);
        let f = PctTensor::f32(&[1], [1.0]).unwrap();
        assert_eq!(&f.to_bytes()[12..], &[0, 0x00, 0x00, 0x80, 0x3f]);
    }

    #[test]
    fn rejects_bad_magic_and_shape() {
        assert!(PctTensor::read_all(b"PCT2\0\0\0\0\0").is_err());
        assert!(PctTensor::u8(&[3], vec![1]).is_err());
        assert!(PctTensor::read_all(b"PC").is_err());
    }

    proptest! {
        #[test]
        fn concatenated_streams_read_back(
            a in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..20),
            b in proptest::collection::vec(any::<u8>(), 1..20),
        ) {
            let ta = PctTensor::f32(&[a.len()], a.iter().map(|&v| v as f64)).unwrap();
            let tb = PctTensor::u8(&[1, b.len()], b.clone()).unwrap();
            let mut bytes = ta.to_bytes();
            bytes.extend(tb.to_bytes());
            prop_assert_eq!(PctTensor::read_all(&bytes).unwrap(), vec![ta, tb]);
        }
    }
}
