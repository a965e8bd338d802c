//! IDX container format: a 4-byte big-endian magic (`00 00 08 <rank>`),
//! one big-endian `u32` per dimension, then the row-major `u8` payload.

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("size overflow: dimensions {0:?} do not fit in memory")]
    SizeOverflow(Vec<u32>),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Option<Self> {
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?;
        (len == data.len() && matches!(dims.len(), 1 | 3)).then_some(Self { dims, data })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    let word = |at: usize| -> Result<u32, IdxError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(IdxError::Truncated { expected: at + 4, actual: bytes.len() })
    };
    let magic = word(0)?;
    let rank = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => return Err(IdxError::BadMagic(other)),
    };
    let raw: Vec<u32> = (0..rank).map(|d| word(4 + 4 * d)).collect::<Result<_, _>>()?;
    let header = 4 + 4 * rank;
    let len = raw
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d as usize))
        .and_then(|n| n.checked_add(header).map(|_| n))
        .ok_or_else(|| IdxError::SizeOverflow(raw.clone()))?;
    let end = header + len;
    if bytes.len() < end {
        return Err(IdxError::Truncated { expected: end, actual: bytes.len() });
    }
    if bytes.len() > end {
        return Err(IdxError::TrailingBytes(bytes.len() - end));
    }
    Ok(IdxTensor { dims: raw.iter().map(|&d| d as usize).collect(), data: bytes[header..].to_vec() })
}

pub fn serialize_idx(tensor: &IdxTensor) -> Vec<u8> {
    let magic = if tensor.rank() == 1 { MAGIC_LABELS } else { MAGIC_IMAGES };
    let mut out = Vec::with_capacity(4 + 4 * tensor.rank() + tensor.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn labels_example() {
        let t = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 7, 2]).unwrap();
        assert_eq!(t.dims, vec![2]);
        assert_eq!(t.data, vec![7, 2]);
    }

    #[test]
    fn image_example() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0x00, 0xFF, 0x80, 0x01];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![1, 2, 2]);
        assert_eq!(t.data, vec![0, 255, 128, 1]);
    }

    #[test]
    fn distinct_errors() {
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 2]), Err(IdxError::Truncated { expected: 11, actual: 10 }));
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0]), Err(IdxError::Truncated { expected: 8, actual: 6 }));
        assert_eq!(parse_idx(&[0, 0, 9, 1, 0, 0, 0, 0]), Err(IdxError::BadMagic(0x0000_0901)));
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 4, 4]), Err(IdxError::TrailingBytes(1)));
    }

    #[test]
    fn overflow_is_reported_on_64_bit() {
        // 2^32-1 cubed exceeds u64
        let huge = [0, 0, 8, 3, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF];
        assert!(matches!(parse_idx(&huge), Err(IdxError::SizeOverflow(_))));
    }

    proptest! {
        #[test]
        fn round_trip(n in 0usize..6, h in 0usize..5, w in 0usize..5, seed in any::<u64>(), labels in any::<bool>()) {
            let dims = if labels { vec![n * h] } else { vec![n, h, w] };
            let len: usize = dims.iter().product();
            let data: Vec<u8> = (0..len).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let t = IdxTensor::new(dims, data).unwrap();
            prop_assert_eq!(parse_idx(&serialize_idx(&t)).unwrap(), t);
        }

        #[test]
        fn every_strict_prefix_is_truncated(cut in 0usize..19) {
            let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 1];
            let truncated = matches!(parse_idx(&bytes[..cut]), Err(IdxError::Truncated { .. }));
            prop_assert!(truncated);
        }
    }
}
