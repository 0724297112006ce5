use std::io::{Read, Write};

use super::{len_u32, AttributeLabels, ByteReader, ByteWriter, EmbeddingSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDBS";
const VERSION: u32 = 1;
const WHAT: &str = "embedding file";

/// Layout: magic `NDBS`, u32 version, u32 N, u32 d, u32 attribute count;
/// per attribute (u32 name length, UTF-8 name, u32 m, N×u32 labels);
/// u32 task flag (0 or 1) followed by N×u32 task labels when set;
/// then the N·d float32 row-major payload.
pub fn write_embedding_set<W: Write>(set: &EmbeddingSet, out: W) -> Result<()> {
    let mut w = ByteWriter::new(out, WHAT);
    w.raw(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(len_u32(set.n(), WHAT)?)?;
    w.u32(len_u32(set.d(), WHAT)?)?;
    w.u32(len_u32(set.attributes().len(), WHAT)?)?;
    for attr in set.attributes() {
        w.string(&attr.name)?;
        w.u32(len_u32(attr.classes, WHAT)?)?;
        for &l in &attr.labels {
            w.u32(l)?;
        }
    }
    match set.task_labels() {
        Some(task) => {
            w.u32(1)?;
            for &t in task {
                w.u32(t)?;
            }
        }
        None => w.u32(0)?,
    }
    for &v in set.data() {
        w.f32(v)?;
    }
    Ok(())
}

pub fn read_embedding_set<R: Read>(input: R) -> Result<EmbeddingSet> {
    let mut r = ByteReader::new(input, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let n_attr = r.u32()? as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(WHAT, format!("header declares N={n}, d={d}")));
    }
    let mut attributes = Vec::with_capacity(n_attr.min(64));
    for _ in 0..n_attr {
        let name = r.string()?;
        let classes = r.u32()? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u32()?);
        }
        attributes.push(AttributeLabels { name, classes, labels });
    }
    let task_labels = match r.u32()? {
        0 => None,
        1 => {
            let mut t = Vec::with_capacity(n);
            for _ in 0..n {
                t.push(r.u32()?);
            }
            Some(t)
        }
        other => return Err(Error::format(WHAT, format!("bad task-label flag {other}"))),
    };
    let mut data = Vec::with_capacity(n * d);
    for k in 0..n * d {
        let v = r.f32().map_err(|_| Error::Dimension {
            expected: n * d,
            actual: k,
            context: "payload shorter than header N·d",
        })?;
        data.push(v);
    }
    r.finish()
        .map_err(|_| Error::format(WHAT, "payload longer than header N·d"))?;
    EmbeddingSet::new(n, d, data, attributes, task_labels)
}
