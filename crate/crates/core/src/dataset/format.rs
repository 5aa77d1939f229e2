//! Binary tensor file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size        field
//! 0       8           magic  b"CSITNSR\0"
//! 8       4   u32     version (1)
//! 12      4   u32     rank R
//! 16      8R  u64[R]  dims
//! ..      8   u64     label count M (0 or dims[0])
//! ..      5M          M × { u32 label, u8 split }   split: 0 train, 1 test, 255 unassigned
//! ..      4P  f32[P]  payload, P = product(dims), row-major
//! ```
//!
//! The file must end exactly after the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DatasetError, Result};

pub const MAGIC: &[u8; 8] = b"CSITNSR\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelEntry {
    pub label: u32,
    pub split: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub labels: Vec<LabelEntry>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn unlabeled(dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self { dims, labels: Vec::new(), data }
    }
}

pub fn encode(t: &TensorFile) -> Result<Vec<u8>> {
    let n: usize = t.dims.iter().product();
    if n != t.data.len() {
        return Err(DatasetError::Format(format!("dims {:?} need {n} values, have {}", t.dims, t.data.len())));
    }
    if !t.labels.is_empty() && t.labels.len() != t.dims.first().copied().unwrap_or(0) {
        return Err(DatasetError::Format(format!(
            "label table has {} entries for leading dim {:?}",
            t.labels.len(),
            t.dims.first()
        )));
    }
    let mut out = Vec::with_capacity(32 + 8 * t.dims.len() + 5 * t.labels.len() + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(t.labels.len() as u64).to_le_bytes());
    for e in &t.labels {
        out.extend_from_slice(&e.label.to_le_bytes());
        out.push(e.split);
    }
    for &x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            DatasetError::Format(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<TensorFile> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(DatasetError::Format("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(DatasetError::Format(format!("unsupported version {version}")));
    }
    let rank = r.u32("rank")? as usize;
    if rank > 16 {
        return Err(DatasetError::Format(format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(usize::try_from(r.u64("dims")?).map_err(|_| DatasetError::Format("dimension overflow".into()))?);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| DatasetError::Format(format!("dims {dims:?} overflow")))?;
    let n_labels = r.u64("label count")? as usize;
    if n_labels != 0 && Some(n_labels) != dims.first().copied() {
        return Err(DatasetError::Format(format!("label count {n_labels} does not match dims {dims:?}")));
    }
    let table = r.take(n_labels.checked_mul(5).unwrap_or(usize::MAX), "label table")?;
    let labels = table
        .chunks_exact(5)
        .map(|c| LabelEntry { label: u32::from_le_bytes(c[..4].try_into().expect("4 bytes")), split: c[4] })
        .collect();
    let payload = r.take(n.checked_mul(4).unwrap_or(usize::MAX), "payload")?;
    if r.pos != buf.len() {
        return Err(DatasetError::Format(format!("{} trailing bytes after payload", buf.len() - r.pos)));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(TensorFile { dims, labels, data })
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_tensor_file(path: &Path, t: &TensorFile) -> Result<()> {
    write_atomic(path, &encode(t)?)
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = TensorFile { dims: vec![2, 1], labels: vec![LabelEntry { label: 3, split: 1 }, LabelEntry { label: 0, split: 0 }], data: vec![1.0, -2.5] };
        let b = encode(&t).unwrap();
        assert_eq!(&b[..8], b"CSITNSR\0");
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..24], &2u64.to_le_bytes());
        assert_eq!(&b[24..32], &1u64.to_le_bytes());
        assert_eq!(&b[32..40], &2u64.to_le_bytes());
        assert_eq!(&b[40..45], &[3, 0, 0, 0, 1]);
        assert_eq!(&b[50..54], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 58);
    }

    #[test]
    fn corrupt_magic_and_truncation_are_format_errors() {
        let t = TensorFile::unlabeled(vec![16, 90, 100], vec![0.5; 16 * 90 * 100]);
        let mut b = encode(&t).unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(DatasetError::Format(_))));
        b.truncate(b.len() - 4);
        assert!(matches!(decode(&b), Err(DatasetError::Format(_))));
        let mut extra = encode(&t).unwrap();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(DatasetError::Format(_))));
        assert!(matches!(decode(&[]), Err(DatasetError::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
            labeled in any::<bool>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff)).collect();
            let labels = if labeled {
                (0..dims[0]).map(|i| LabelEntry { label: i as u32 * 7, split: (i % 2) as u8 }).collect()
            } else {
                Vec::new()
            };
            let t = TensorFile { dims, labels, data };
            let back = decode(&encode(&t).unwrap()).unwrap();
            prop_assert_eq!(back.dims, t.dims);
            prop_assert_eq!(back.labels, t.labels);
            prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
