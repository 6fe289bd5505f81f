//! CIEM binary embedding files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CIEM" | u8 version = 1 | u32 dim | u64 count
//! count x ( u16 id_len | id bytes (UTF-8) | dim x f32 )
//! ```

use std::collections::HashSet;
use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::types::{EmbeddingRecord, EmbeddingSet};

pub const MAGIC: [u8; 4] = *b"CIEM";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 8;

/// Writes `records` as a CIEM stream and returns the number of bytes written.
pub fn write_embeddings<W: Write>(dim: usize, records: &[EmbeddingRecord], mut sink: W) -> Result<u64> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::DimensionMismatch {
        expected: u32::MAX as usize,
        actual: dim,
    })?;
    let mut seen = HashSet::with_capacity(records.len());
    for rec in records {
        if rec.image_id.is_empty() {
            return Err(Error::EmptyId);
        }
        if rec.image_id.len() > u16::MAX as usize {
            return Err(Error::IdTooLong(rec.image_id.clone()));
        }
        if rec.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: rec.vector.len(),
            });
        }
        if !rec.vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of `{}`", rec.image_id)));
        }
        if !seen.insert(rec.image_id.as_str()) {
            return Err(Error::DuplicateId(rec.image_id.clone()));
        }
    }

    let mut written = 0u64;
    let mut put = |bytes: &[u8]| -> io::Result<()> {
        sink.write_all(bytes)?;
        written += bytes.len() as u64;
        Ok(())
    };
    put(&MAGIC)?;
    put(&[VERSION])?;
    put(&dim32.to_le_bytes())?;
    put(&(records.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(dim * 4);
    for rec in records {
        put(&(rec.image_id.len() as u16).to_le_bytes())?;
        put(rec.image_id.as_bytes())?;
        buf.clear();
        for v in &rec.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&buf)?;
    }
    sink.flush()?;
    Ok(written)
}

pub fn write_embedding_set<W: Write>(set: &EmbeddingSet, sink: W) -> Result<u64> {
    write_embeddings(set.dim(), set.records(), sink)
}

fn read_exact_or<R: Read>(source: &mut R, buf: &mut [u8], what: impl FnOnce() -> String) -> Result<()> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated(what()),
        _ => Error::Io(e),
    })
}

/// Reads a complete CIEM stream. Trailing bytes after the last record are
/// an error.
pub fn read_embeddings<R: Read>(mut source: R) -> Result<EmbeddingSet> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or(&mut source, &mut header, || "header".into())?;
    let magic: [u8; 4] = header[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(Error::UnsupportedVersion(header[4]));
    }
    let dim = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(header[9..17].try_into().expect("8 bytes"));

    let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
    let mut len_buf = [0u8; 2];
    let vector_len = dim as u64 * 4;
    let mut floats = Vec::new();
    for i in 0..count {
        read_exact_or(&mut source, &mut len_buf, || format!("record {i}"))?;
        let mut id = vec![0u8; u16::from_le_bytes(len_buf) as usize];
        read_exact_or(&mut source, &mut id, || format!("record {i}"))?;
        // grows with the data, so a corrupt dimension cannot force a huge allocation
        floats.clear();
        (&mut source).take(vector_len).read_to_end(&mut floats)?;
        if (floats.len() as u64) < vector_len {
            return Err(Error::Truncated(format!("record {i}")));
        }
        let image_id = String::from_utf8(id).map_err(|_| Error::InvalidUtf8(i))?;
        let vector: Vec<f32> = floats
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("record {i}")));
        }
        records.push(EmbeddingRecord { image_id, vector });
    }
    let mut probe = [0u8; 1];
    match source.read(&mut probe)? {
        0 => {}
        _ => return Err(Error::TrailingData),
    }
    EmbeddingSet::new(dim, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, v: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord::new(id, v.to_vec()).unwrap()
    }

    fn encode(dim: usize, records: &[EmbeddingRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        let n = write_embeddings(dim, records, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        buf
    }

    #[test]
    fn single_record_layout() {
        let bytes = encode(2, &[rec("a", &[0.0, 1.0])]);
        // 17-byte header, then 2 (id length) + 1 (id) + 8 (two floats)
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..4], b"CIEM");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..17], &1u64.to_le_bytes());
        assert_eq!(&bytes[17..19], &1u16.to_le_bytes());
        assert_eq!(bytes[19], b'a');
        assert_eq!(&bytes[20..24], &0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &1f32.to_le_bytes());
    }

    #[test]
    fn empty_file_keeps_dimension() {
        let bytes = encode(7, &[]);
        assert_eq!(bytes.len(), HEADER_LEN);
        let set = read_embeddings(&bytes[..]).unwrap();
        assert_eq!((set.dim(), set.len()), (7, 0));
    }

    #[test]
    fn writer_rejects_bad_records() {
        let mut sink = Vec::new();
        let dup = [rec("a", &[1.0]), rec("a", &[2.0])];
        assert!(matches!(
            write_embeddings(1, &dup, &mut sink),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            write_embeddings(2, &[rec("a", &[1.0])], &mut sink),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reader_errors() {
        let good = encode(3, &[rec("x", &[1.0, 2.0, 3.0]), rec("yy", &[4.0, 5.0, 6.0])]);
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_embeddings(&bad[..]), Err(Error::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(read_embeddings(&bad[..]), Err(Error::UnsupportedVersion(2))));
        // cut inside the second record's vector
        let cut = &good[..good.len() - 5];
        match read_embeddings(cut) {
            Err(Error::Truncated(what)) => assert_eq!(what, "record 1"),
            other => panic!("{other:?}"),
        }
        let mut nan = good.clone();
        let at = HEADER_LEN + 2 + 1;
        nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_embeddings(&nan[..]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn every_header_byte_mutation_is_rejected() {
        let good = encode(3, &[rec("x", &[1.0, 2.0, 3.0]), rec("yy", &[4.0, 5.0, 6.0])]);
        for pos in 0..HEADER_LEN {
            for delta in [1u8, 0x80, 0xff] {
                let mut bad = good.clone();
                bad[pos] = bad[pos].wrapping_add(delta);
                assert!(read_embeddings(&bad[..]).is_err(), "byte {pos} + {delta} accepted");
            }
        }
    }

    fn arb_records() -> impl Strategy<Value = (usize, Vec<EmbeddingRecord>)> {
        (0usize..6).prop_flat_map(|dim| {
            let vec = prop::collection::vec(-1e6f32..1e6f32, dim);
            prop::collection::btree_map("[a-z0-9_/.é]{1,12}", vec, 0..20).prop_map(move |m| {
                let recs = m
                    .into_iter()
                    .map(|(id, v)| EmbeddingRecord {
                        image_id: id,
                        vector: v,
                    })
                    .collect();
                (dim, recs)
            })
        })
    }

    proptest! {
        #[test]
        fn read_inverts_write((dim, records) in arb_records()) {
            let bytes = encode(dim, &records);
            let set = read_embeddings(&bytes[..]).unwrap();
            prop_assert_eq!(set.dim(), dim);
            prop_assert_eq!(set.records(), &records[..]);
        }
    }
}
