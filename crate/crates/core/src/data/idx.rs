//! IDX container reader (the MNIST distribution format).
//!
//! Big-endian header: a 4-byte magic (`0x00000803` for 3-D u8 image
//! stacks, `0x00000801` for 1-D u8 label vectors) followed by one `u32`
//! extent per dimension, then the payload. Gzip-compressed files are
//! detected by their magic bytes and inflated transparently.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{ensure, Error, Result};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `n × rows × cols`, scaled to `[0, 1]`.
    Images(Tensor),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("IDX header truncated at byte {at}")))
}

pub fn load_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        return load_idx(&raw);
    }
    let magic = read_u32(bytes, 0)?;
    let ndim = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(Error::Format(format!("unsupported IDX magic {other:#010x}"))),
    };
    let dims = (0..ndim)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let n: usize = dims.iter().product();
    ensure!(
        bytes.len() == start + n,
        Format,
        "IDX payload has {} bytes, header {:?} needs {}",
        bytes.len() - start,
        dims,
        n
    );
    let payload = &bytes[start..];
    Ok(match magic {
        IMAGES_MAGIC => IdxData::Images(Tensor::from_vec(
            dims,
            payload.iter().map(|&b| b as f64 / 255.0).collect(),
        )?),
        _ => IdxData::Labels(payload.to_vec()),
    })
}

pub fn load_idx_file(path: &Path) -> Result<IdxData> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    load_idx(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn reads_image_stack() {
        let mut b = header(IMAGES_MAGIC, &[2, 28, 28]);
        b.extend((0..1568).map(|i| (i % 256) as u8));
        let IdxData::Images(t) = load_idx(&b).unwrap() else {
            panic!("expected images")
        };
        assert_eq!(t.shape(), &[2, 28, 28]);
        assert_eq!(t.data()[255], 1.0);
        assert_eq!(t.data()[256], 0.0);
    }

    #[test]
    fn zero_payload_and_labels() {
        let mut b = header(IMAGES_MAGIC, &[1, 2, 2]);
        b.extend([0u8; 4]);
        assert_eq!(
            load_idx(&b).unwrap(),
            IdxData::Images(Tensor::zeros(vec![1, 2, 2]))
        );
        let mut l = header(LABELS_MAGIC, &[3]);
        l.extend([7u8, 0, 9]);
        assert_eq!(load_idx(&l).unwrap(), IdxData::Labels(vec![7, 0, 9]));
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let mut b = header(IMAGES_MAGIC, &[2, 28, 28]);
        b.extend(vec![0u8; 1567]);
        assert!(matches!(load_idx(&b), Err(Error::Format(_))));
        assert!(matches!(load_idx(&[0, 0, 8, 3, 0]), Err(Error::Format(_))));
        let b = header(0x0000_0802, &[1]);
        assert!(matches!(load_idx(&b), Err(Error::Format(_))));
    }

    #[test]
    fn gzip_is_transparent() {
        let mut raw = header(LABELS_MAGIC, &[2]);
        raw.extend([4u8, 2]);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(load_idx(&gz).unwrap(), IdxData::Labels(vec![4, 2]));
    }
}
