//! Flat binary tensor files.
//!
//! Layout: `b"PTNS"`, version `u16`, rank `u16`, `rank` dimensions as `u64`,
//! then the values as little-endian `f64` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Result, Tensor, TensorError};

pub const PTNS_MAGIC: &[u8; 4] = b"PTNS";
pub const PTNS_VERSION: u16 = 1;

pub fn write_ptns<W: Write>(tensor: &Tensor, mut out: W) -> Result<()> {
    out.write_all(PTNS_MAGIC)?;
    out.write_all(&PTNS_VERSION.to_le_bytes())?;
    let rank = u16::try_from(tensor.rank())
        .map_err(|_| TensorError::Format(format!("rank {} too large", tensor.rank())))?;
    out.write_all(&rank.to_le_bytes())?;
    for &d in tensor.shape() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in tensor.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ptns<R: Read>(mut input: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != PTNS_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 2];
    read_exact(&mut input, &mut word, "version")?;
    let version = u16::from_le_bytes(word);
    if version != PTNS_VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    read_exact(&mut input, &mut word, "rank")?;
    let rank = u16::from_le_bytes(word) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut quad = [0u8; 8];
    for _ in 0..rank {
        read_exact(&mut input, &mut quad, "dimension")?;
        let d = u64::from_le_bytes(quad);
        shape.push(usize::try_from(d).map_err(|_| TensorError::Format(format!("dimension {d} too large")))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::Format("element count overflows".into()))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(TensorError::Format(format!(
            "expected {} data bytes, found {}",
            n * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Format(format!("truncated before {what}")),
        _ => TensorError::Io(e),
    })
}

pub fn write_ptns_file(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_ptns(tensor, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_ptns_file(path: impl AsRef<Path>) -> Result<Tensor> {
    read_ptns(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_ptns(&t, &mut buf).unwrap();
        let mut expected = b"PTNS".to_vec();
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(read_ptns(&buf[..]).unwrap(), t);
    }

    #[test]
    fn truncated_and_corrupt_inputs_fail() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_ptns(&t, &mut buf).unwrap();
        assert!(matches!(read_ptns(&buf[..buf.len() - 1]), Err(TensorError::Format(_))));
        assert!(matches!(read_ptns(&buf[..6]), Err(TensorError::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_ptns(&bad[..]), Err(TensorError::Format(_))));
    }
}
