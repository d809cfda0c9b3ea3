//! Raw tensor files: `EYT1`, u32 rank, u32 dims, then row-major signed 8b values.
//! Integers are little-endian.

use std::io::{self, Read, Write};

pub const MAGIC: &[u8; 4] = b"EYT1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub values: Vec<i32>,
}

#[derive(Debug, thiserror::Error)]
pub enum TensorFileError {
    #[error("bad magic, expected EYT1")]
    Magic,
    #[error("tensor has {got} values, dims imply {want}")]
    Size { got: usize, want: usize },
    #[error("value {value} at index {index} is not signed 8b")]
    Range { index: usize, value: i32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, values: Vec<i32>) -> Result<Self, TensorFileError> {
        let want: usize = dims.iter().product();
        if want != values.len() {
            return Err(TensorFileError::Size {
                got: values.len(),
                want,
            });
        }
        Ok(RawTensor { dims, values })
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), TensorFileError> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(self.values.len());
        for (index, &value) in self.values.iter().enumerate() {
            let b = i8::try_from(value).map_err(|_| TensorFileError::Range { index, value })?;
            bytes.push(b as u8);
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorFileError> {
        let mut v = Vec::new();
        self.write_to(&mut v)?;
        Ok(v)
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, TensorFileError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorFileError::Magic);
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            input.read_exact(&mut word)?;
            dims.push(u32::from_le_bytes(word) as usize);
        }
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n];
        input.read_exact(&mut bytes)?;
        let values = bytes.into_iter().map(|b| b as i8 as i32).collect();
        Ok(RawTensor { dims, values })
    }
}
