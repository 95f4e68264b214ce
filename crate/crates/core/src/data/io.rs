//! Embedding and label file formats.
//!
//! Embedding file, all little-endian:
//!
//! | offset | size | field                   |
//! |--------|------|-------------------------|
//! | 0      | 4    | magic `b"UFDE"`         |
//! | 4      | 4    | format version, `u32` 1 |
//! | 8      | 8    | row count, `u64`        |
//! | 16     | 4    | dimension, `u32`        |
//! | 20     | 8·r·d| `f64` payload, row-major|
//!
//! Label file: one decimal class index per line, each line `\n`-terminated.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::nn::Matrix;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UFDE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Serialises `m` in the embedding format.
pub fn encode_embeddings(m: &Matrix) -> Result<Vec<u8>> {
    let dim = u32::try_from(m.cols())
        .map_err(|_| Error::InvalidArgument(format!("dimension {} does not fit in u32", m.cols())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + m.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses one embedding block from the front of `bytes`, returning the matrix
/// and the number of bytes consumed. `origin` only labels errors.
pub fn decode_embeddings_prefix(bytes: &[u8], origin: &Path) -> Result<(Matrix, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            origin,
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::format(origin, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let dim = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    let payload = rows
        .checked_mul(u64::from(dim))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| {
            Error::format(
                origin,
                format!("{rows} x {dim} payload overflows the address space"),
            )
        })?;
    let end = HEADER_LEN
        .checked_add(payload)
        .ok_or_else(|| Error::format(origin, "payload size overflow"))?;
    if bytes.len() < end {
        return Err(Error::format(
            origin,
            format!(
                "truncated payload: {} bytes present, {end} needed for {rows} x {dim}",
                bytes.len()
            ),
        ));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            origin,
            format!("non-finite value at flat index {i}"),
        ));
    }
    let m = Matrix::from_vec(rows as usize, dim as usize, data)?;
    Ok((m, end))
}

/// Parses a complete embedding file image; trailing bytes are an error.
pub fn decode_embeddings(bytes: &[u8], origin: &Path) -> Result<Matrix> {
    let (m, used) = decode_embeddings_prefix(bytes, origin)?;
    if used != bytes.len() {
        return Err(Error::format(
            origin,
            format!("{} trailing bytes after payload", bytes.len() - used),
        ));
    }
    Ok(m)
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, path)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(labels.len() * 2);
    for l in labels {
        writeln!(out, "{l}").expect("writing to a Vec cannot fail");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a label file, checking every value against `classes` when given.
pub fn read_labels(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, classes, path)
}

pub fn parse_labels(text: &str, classes: Option<usize>, origin: &Path) -> Result<Vec<usize>> {
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::format(origin, "last line is not newline-terminated"));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let value: usize = line
            .trim_end_matches('\r')
            .parse()
            .map_err(|_| Error::format(origin, format!("line {}: {line:?} is not a class index", i + 1)))?;
        if let Some(c) = classes {
            if value >= c {
                return Err(Error::format(
                    origin,
                    format!("line {}: label {value} out of range for {c} classes", i + 1),
                ));
            }
        }
        out.push(value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;
    use proptest::prelude::*;

    #[test]
    fn empty_file_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ufde");
        write_embeddings(&p, &Matrix::zeros(0, 4)).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 20);
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back.shape(), (0, 4));
    }

    #[test]
    fn header_layout() {
        let m = Matrix::from_rows(&[[1.5, -2.0, 0.0]]).unwrap();
        let bytes = encode_embeddings(&m).unwrap();
        assert_eq!(&bytes[0..4], b"UFDE");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[3, 0, 0, 0]);
        assert_eq!(&bytes[20..28], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 3 * 8);
    }

    #[test]
    fn round_trip_random_7x5() {
        let mut rng = Rng::new(1);
        let mut m = Matrix::zeros(7, 5);
        m.data_mut().iter_mut().for_each(|v| *v = rng.normal() * 1e3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.ufde");
        write_embeddings(&p, &m).unwrap();
        let back = read_embeddings(&p).unwrap();
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.shape(), (7, 5));
    }

    #[test]
    fn truncation_and_corruption_are_errors() {
        let m = Matrix::filled(2, 2, 1.0);
        let bytes = encode_embeddings(&m).unwrap();
        let origin = Path::new("mem");
        let err = decode_embeddings(&bytes[..bytes.len() - 1], origin).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
        assert!(decode_embeddings(&bytes[..10], origin).is_err());

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_embeddings(&bad_magic, origin)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(decode_embeddings(&bad_version, origin)
            .unwrap_err()
            .to_string()
            .contains("version"));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(decode_embeddings(&trailing, origin).is_err());

        let mut huge = bytes.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_embeddings(&huge, origin)
            .unwrap_err()
            .to_string()
            .contains("overflow"));

        let mut nan = bytes;
        nan[20..28].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_embeddings(&nan, origin).is_err());
    }

    #[test]
    fn label_parsing() {
        let o = Path::new("mem");
        assert_eq!(parse_labels("0\n1\n1\n", Some(2), o).unwrap(), vec![0, 1, 1]);
        assert_eq!(parse_labels("", Some(2), o).unwrap(), Vec::<usize>::new());
        assert!(parse_labels("0\n2\n", Some(2), o).is_err());
        assert!(parse_labels("0\n1", Some(2), o).is_err());
        assert!(parse_labels("0\n-1\n", None, o).is_err());
        assert!(parse_labels("a\n", None, o).is_err());
    }

    proptest! {
        #[test]
        fn embeddings_round_trip_bit_exact(
            rows in 0usize..6,
            cols in 0usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = Rng::new(seed);
            let mut m = Matrix::zeros(rows, cols);
            m.data_mut().iter_mut().for_each(|v| *v = rng.normal() * 10f64.powi(rng.below(20) as i32 - 10));
            let bytes = encode_embeddings(&m).unwrap();
            prop_assert_eq!(bytes.len(), 20 + rows * cols * 8);
            let back = decode_embeddings(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.data().iter().zip(m.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn labels_round_trip(labels in proptest::collection::vec(0usize..5, 0..40)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("l.txt");
            write_labels(&p, &labels).unwrap();
            prop_assert_eq!(read_labels(&p, Some(5)).unwrap(), labels);
        }
    }
}
