//! CSV inputs: the likes relation and per-image attribute labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::types::LikesIndex;

pub const LIKES_HEADER: &str = "user_id,image_id";
pub const ATTRIBUTES_HEADER: &str = "image_id,attribute,value";

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(source)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &'static str) -> Result<()> {
    let headers = rdr.headers().map_err(|_| Error::MissingHeader(expected))?;
    let found: Vec<&str> = headers.iter().collect();
    let want: Vec<&str> = expected.split(',').collect();
    if found != want {
        return Err(Error::MissingHeader(expected));
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads a `user_id,image_id` CSV. Repeated rows collapse.
pub fn read_likes<R: Read>(source: R) -> Result<LikesIndex> {
    let mut rdr = reader(source);
    check_header(&mut rdr, LIKES_HEADER)?;
    let mut pairs = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let (user, image) = (&row[0], &row[1]);
        if user.is_empty() || image.is_empty() {
            return Err(Error::EmptyField(line_of(&row)));
        }
        pairs.push((user.to_owned(), image.to_owned()));
    }
    if pairs.is_empty() {
        return Err(Error::NoRows);
    }
    LikesIndex::from_pairs(pairs)
}

/// Writes likes sorted by user then image, LF line endings.
pub fn write_likes<W: Write>(likes: &LikesIndex, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(LIKES_HEADER.split(','))?;
    for (user, images) in likes.iter() {
        for image in images {
            w.write_record([user, image.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Labels and numeric scores attached to one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageAttributes {
    pub labels: BTreeSet<String>,
    pub numeric: BTreeMap<String, f64>,
}

pub type AttributeMap = BTreeMap<String, ImageAttributes>;

/// Reads an `image_id,attribute,value` CSV. An empty value marks a
/// categorical label; anything else must parse as a finite number.
pub fn read_attributes<R: Read>(source: R) -> Result<AttributeMap> {
    let mut rdr = reader(source);
    check_header(&mut rdr, ATTRIBUTES_HEADER)?;
    let mut out = AttributeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = line_of(&row);
        let (image, attribute, value) = (&row[0], &row[1], &row[2]);
        if image.is_empty() || attribute.is_empty() {
            return Err(Error::EmptyField(line));
        }
        let entry = out.entry(image.to_owned()).or_default();
        if value.is_empty() {
            entry.labels.insert(attribute.to_owned());
        } else {
            let parsed: f64 = value
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::MalformedNumber {
                    value: value.to_owned(),
                    line,
                })?;
            entry.numeric.insert(attribute.to_owned(), parsed);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likes_basic() {
        let likes = read_likes("user_id,image_id\nu1,a\nu1,b\nu2,a\n".as_bytes()).unwrap();
        assert_eq!(likes.total_users(), 2);
        assert_eq!(likes.liked_by("u1").unwrap().iter().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(likes.liked_by("u2").unwrap().iter().collect::<Vec<_>>(), ["a"]);
    }

    #[test]
    fn likes_deduplicate() {
        let likes = read_likes("user_id,image_id\nu1,a\nu1,a\n".as_bytes()).unwrap();
        assert_eq!(likes.pair_count(), 1);
    }

    #[test]
    fn likes_errors() {
        assert!(matches!(
            read_likes("user_id,image_id\n".as_bytes()),
            Err(Error::NoRows)
        ));
        assert!(matches!(read_likes("".as_bytes()), Err(Error::MissingHeader(_))));
        assert!(matches!(
            read_likes("u1,a\nu2,b\n".as_bytes()),
            Err(Error::MissingHeader(_))
        ));
        assert!(matches!(
            read_likes("user_id,image_id\nu1,\n".as_bytes()),
            Err(Error::EmptyField(2))
        ));
        assert!(read_likes("user_id,image_id\nu1\n".as_bytes()).is_err());
    }

    #[test]
    fn likes_write_read_roundtrip() {
        let likes = LikesIndex::from_pairs([("u2", "b"), ("u1", "a"), ("u1", "c")]).unwrap();
        let mut buf = Vec::new();
        write_likes(&likes, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "user_id,image_id\nu1,a\nu1,c\nu2,b\n"
        );
        assert_eq!(read_likes(&buf[..]).unwrap(), likes);
    }

    #[test]
    fn attributes_mixed_rows() {
        let csv = "image_id,attribute,value\nimg1,HDR,\nimg1,aesthetic,55.49\nimg1,HDR,\n";
        let attrs = read_attributes(csv.as_bytes()).unwrap();
        let img = &attrs["img1"];
        assert_eq!(img.labels.iter().collect::<Vec<_>>(), ["HDR"]);
        assert_eq!(img.numeric["aesthetic"], 55.49);
    }

    #[test]
    fn attributes_malformed_number() {
        let csv = "image_id,attribute,value\nimg1,aesthetic,abc\n";
        match read_attributes(csv.as_bytes()) {
            Err(Error::MalformedNumber { value, line }) => {
                assert_eq!(value, "abc");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
        let csv = "image_id,attribute,value\nimg1,aesthetic,inf\n";
        assert!(read_attributes(csv.as_bytes()).is_err());
    }
}
