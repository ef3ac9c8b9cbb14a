//! Versioned binary model container and a text export for inspection.
//!
//! Layout (all integers little-endian): a `LXLD` magic and format version,
//! the dimensions (dim, bins, communities, vocabulary size), the vocabulary
//! with total and per-bin counts, the community labels, the dense base and
//! output tables, and the two sparse residual tables keyed by
//! (term, bin[, community]) in sorted key order.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::corpus::Vocabulary;

use super::{EmbeddingError, EmbeddingModel, ParamTable, SparseTable};

const MAGIC: &[u8; 4] = b"LXLD";
const VERSION: u32 = 1;

fn w_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn w_row<W: Write>(w: &mut W, row: &[f64]) -> std::io::Result<()> {
    for &x in row {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn r_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn r_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn r_str<R: Read>(r: &mut R) -> Result<String, EmbeddingError> {
    let len = r_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| EmbeddingError::Format(e.to_string()))
}

fn r_row<R: Read>(r: &mut R, out: &mut [f64]) -> std::io::Result<()> {
    let mut buf = [0u8; 8];
    for slot in out {
        r.read_exact(&mut buf)?;
        *slot = f64::from_le_bytes(buf);
    }
    Ok(())
}

fn write_table<W: Write>(w: &mut W, table: &ParamTable, dim: usize) -> std::io::Result<()> {
    let mut buf = vec![0.0; dim];
    for row in 0..table.rows() {
        table.read_row(row, &mut buf);
        w_row(w, &buf)?;
    }
    Ok(())
}

pub fn write_model<W: Write>(model: &EmbeddingModel, mut w: W) -> Result<(), EmbeddingError> {
    w.write_all(MAGIC)?;
    w_u32(&mut w, VERSION)?;
    w_u32(&mut w, model.dim as u32)?;
    w_u32(&mut w, model.bins as u32)?;
    w_u32(&mut w, model.communities.len() as u32)?;
    w_u64(&mut w, model.vocab.len() as u64)?;

    for v in 0..model.vocab.len() as u32 {
        w_str(&mut w, model.vocab.term(v))?;
        w_u64(&mut w, model.vocab.total_count(v))?;
        for bin in 0..model.bins {
            w_u64(&mut w, model.vocab.bin_count(v, bin))?;
        }
    }
    for label in &model.communities {
        w_str(&mut w, label)?;
    }

    write_table(&mut w, &model.base, model.dim)?;
    write_table(&mut w, &model.output, model.dim)?;

    let mut buf = vec![0.0; model.dim];
    w_u64(&mut w, model.temporal.len() as u64)?;
    for (i, &(term, bin)) in model.temporal.keys().iter().enumerate() {
        w_u32(&mut w, term)?;
        w_u32(&mut w, bin as u32)?;
        model.temporal.data.read_row(i, &mut buf);
        w_row(&mut w, &buf)?;
    }
    w_u64(&mut w, model.community.len() as u64)?;
    for (i, &(term, bin, comm)) in model.community.keys().iter().enumerate() {
        w_u32(&mut w, term)?;
        w_u32(&mut w, bin as u32)?;
        w_u32(&mut w, comm as u32)?;
        model.community.data.read_row(i, &mut buf);
        w_row(&mut w, &buf)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<EmbeddingModel, EmbeddingError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EmbeddingError::Format("bad magic".to_string()));
    }
    let version = r_u32(&mut r)?;
    if version != VERSION {
        return Err(EmbeddingError::Format(format!("unsupported version {version}")));
    }
    let dim = r_u32(&mut r)? as usize;
    let bins = r_u32(&mut r)? as usize;
    let n_comms = r_u32(&mut r)? as usize;
    let n_terms = r_u64(&mut r)? as usize;

    let mut terms = Vec::with_capacity(n_terms);
    let mut totals = Vec::with_capacity(n_terms);
    let mut bin_counts = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        terms.push(r_str(&mut r)?);
        totals.push(r_u64(&mut r)?);
        let mut per_bin = Vec::with_capacity(bins);
        for _ in 0..bins {
            per_bin.push(r_u64(&mut r)?);
        }
        bin_counts.push(per_bin);
    }
    let vocab = Vocabulary::from_parts(terms, totals, bin_counts);

    let mut communities = Vec::with_capacity(n_comms);
    for _ in 0..n_comms {
        communities.push(r_str(&mut r)?);
    }

    let read_table = |r: &mut R, rows: usize| -> Result<ParamTable, EmbeddingError> {
        let table = ParamTable::zeros(rows, dim);
        let mut buf = vec![0.0; dim];
        for row in 0..rows {
            r_row(r, &mut buf)?;
            table.write_row(row, &buf);
        }
        Ok(table)
    };
    let base = read_table(&mut r, n_terms)?;
    let output = read_table(&mut r, n_terms)?;

    let n_temporal = r_u64(&mut r)? as usize;
    let mut temporal_keys = Vec::with_capacity(n_temporal);
    let mut temporal_rows = Vec::with_capacity(n_temporal);
    let mut buf = vec![0.0; dim];
    for _ in 0..n_temporal {
        let term = r_u32(&mut r)?;
        let bin = r_u32(&mut r)? as u16;
        r_row(&mut r, &mut buf)?;
        temporal_keys.push((term, bin));
        temporal_rows.push(buf.clone());
    }
    let temporal = rebuild_sparse(temporal_keys, temporal_rows, dim)?;

    let n_community = r_u64(&mut r)? as usize;
    let mut community_keys = Vec::with_capacity(n_community);
    let mut community_rows = Vec::with_capacity(n_community);
    for _ in 0..n_community {
        let term = r_u32(&mut r)?;
        let bin = r_u32(&mut r)? as u16;
        let comm = r_u32(&mut r)? as u16;
        r_row(&mut r, &mut buf)?;
        community_keys.push((term, bin, comm));
        community_rows.push(buf.clone());
    }
    let community = rebuild_sparse(community_keys, community_rows, dim)?;

    let community_index: HashMap<String, u16> =
        communities.iter().enumerate().map(|(i, l)| (l.clone(), i as u16)).collect();
    Ok(EmbeddingModel {
        vocab,
        communities,
        community_index,
        bins,
        dim,
        base,
        output,
        temporal,
        community,
    })
}

fn rebuild_sparse<K: Copy + Ord + std::hash::Hash>(
    keys: Vec<K>,
    rows: Vec<Vec<f64>>,
    dim: usize,
) -> Result<SparseTable<K>, EmbeddingError> {
    let table = SparseTable::new(keys.clone(), dim);
    if table.len() != keys.len() {
        return Err(EmbeddingError::Format("duplicate residual keys".to_string()));
    }
    for (key, row) in keys.iter().zip(rows) {
        let idx = table.row_of(key).expect("key just inserted");
        table.data.write_row(idx, &row);
    }
    Ok(table)
}

/// Human-readable dump: base vectors per term, then residual entries.
pub fn write_text_export<W: Write>(model: &EmbeddingModel, mut w: W) -> Result<(), EmbeddingError> {
    writeln!(
        w,
        "# dim={} bins={} communities={} vocab={}",
        model.dim,
        model.bins,
        model.communities.len(),
        model.vocab.len()
    )?;
    let fmt = |row: &[f64]| row.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
    writeln!(w, "# base")?;
    for v in 0..model.vocab.len() as u32 {
        writeln!(w, "{}\t{}", model.vocab.term(v), fmt(&model.base.row_vec(v as usize)))?;
    }
    writeln!(w, "# temporal term bin vector")?;
    for (i, &(term, bin)) in model.temporal.keys().iter().enumerate() {
        writeln!(w, "{}\t{}\t{}", model.vocab.term(term), bin, fmt(&model.temporal.data.row_vec(i)))?;
    }
    writeln!(w, "# community term bin community vector")?;
    for (i, &(term, bin, comm)) in model.community.keys().iter().enumerate() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            model.vocab.term(term),
            bin,
            model.communities[comm as usize],
            fmt(&model.community.data.row_vec(i))
        )?;
    }
    Ok(())
}
