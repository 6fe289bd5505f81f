//! Write embeddings as CIEM and likes as CSV, then read both back.

use common_interest::io::{read_embeddings, read_likes, write_embeddings, write_likes};
use common_interest::types::{EmbeddingRecord, LikesIndex};

fn main() -> common_interest::error::Result<()> {
    let records = vec![
        EmbeddingRecord::new("beach.jpg", vec![0.5, -1.25, 3.0])?,
        EmbeddingRecord::new("cat.png", vec![1.0, 0.0, -0.125])?,
    ];
    let mut ciem = Vec::new();
    let n = write_embeddings(3, &records, &mut ciem)?;
    println!("CIEM: {n} bytes, header {:?}", &ciem[..4]);
    let back = read_embeddings(&ciem[..])?;
    for r in back.records() {
        println!("  {} {:?}", r.image_id, r.vector);
    }

    let likes = LikesIndex::from_pairs([("u1", "beach.jpg"), ("u2", "beach.jpg"), ("u2", "cat.png")])?;
    let mut csv = Vec::new();
    write_likes(&likes, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    assert_eq!(read_likes(&csv[..])?, likes);
    Ok(())
}
