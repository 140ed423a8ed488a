//! Text embedding files: a `dim,count` header line, then one record per
//! line, `sequence,frame,det_index,v1,...,vD`. `det_index` is the 0-based
//! position of the detection within its frame in the detection file.

use std::fmt::Write as _;
use std::path::Path;

use sinkmot_core::embeddings::{AppearanceEmbedding, EmbeddingSource, EmbeddingTable};

use crate::error::{read_text, write_text, DataError, ParseError};

pub fn parse_embeddings_str(text: &str) -> Result<EmbeddingTable, ParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((h, header)) = lines.next() else {
        return Err(ParseError::new(1, "missing `dim,count` header"));
    };
    let head: Vec<&str> = header.split(',').map(str::trim).collect();
    let parse_usize = |s: &str, what: &str| s.parse::<usize>().map_err(|_| ParseError::new(h + 1, format!("{what}: not a count: {s:?}")));
    if head.len() != 2 {
        return Err(ParseError::new(h + 1, "header must be `dim,count`"));
    }
    let dim = parse_usize(head[0], "dim")?;
    let count = parse_usize(head[1], "count")?;
    if dim == 0 {
        return Err(ParseError::new(h + 1, "dim must be positive"));
    }

    let mut table = EmbeddingTable::new(dim);
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != dim + 3 {
            return Err(ParseError::new(n, format!("expected {} fields, found {}", dim + 3, f.len())));
        }
        if f[0].is_empty() {
            return Err(ParseError::new(n, "empty sequence name"));
        }
        let frame: u32 = f[1].parse().map_err(|_| ParseError::new(n, format!("frame: not an index: {:?}", f[1])))?;
        let det: usize = f[2].parse().map_err(|_| ParseError::new(n, format!("det_index: not an index: {:?}", f[2])))?;
        let values = f[3..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| ParseError::new(n, format!("not a number: {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let emb = AppearanceEmbedding::new(values).map_err(|e| ParseError::new(n, e))?;
        table.insert(f[0], frame, det, emb).map_err(|e| ParseError::new(n, e))?;
    }
    if table.len() != count {
        return Err(ParseError::new(h + 1, format!("header announces {count} records, file has {}", table.len())));
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, DataError> {
    parse_embeddings_str(&read_text(path)?).map_err(|e| DataError::parse(path, e))
}

/// Records in key order; values use the shortest decimal that reads back
/// to the same `f64`.
pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = format!("{},{}\n", table.dim(), table.len());
    for ((seq, frame, det), emb) in table.iter() {
        assert!(!seq.contains(',') && !seq.contains('\n'), "sequence names cannot contain commas or newlines");
        write!(out, "{seq},{frame},{det}").expect("writing to a String");
        for v in emb.as_slice() {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<(), DataError> {
    write_text(path, &format_embeddings(table))
}
