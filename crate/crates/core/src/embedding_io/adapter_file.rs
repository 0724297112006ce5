use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{len_u32, load_projector, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::gated_adapter::AdapterParams;
use crate::linalg;

const MAGIC: &[u8; 4] = b"NDAD";
const VERSION: u32 = 1;
const WHAT: &str = "adapter file";

/// Pointer to a frozen projector file and the checksum of its matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectorRef {
    /// As written; relative paths resolve against the adapter file's directory.
    pub path: String,
    pub checksum: [u8; 32],
}

impl ProjectorRef {
    pub fn new(path: impl Into<String>, matrix: &DMatrix<f64>) -> Self {
        ProjectorRef {
            path: path.into(),
            checksum: linalg::checksum(matrix),
        }
    }
}

/// Layout: magic `NDAD`, u32 version, u32 d, u32 K, u32 r, then float64
/// row-major G1 (K×d), each g_k (d), each U_k (d×r), each V_k (r×d), O (d×d);
/// then K projector references as (u32 length, UTF-8 path, 32-byte SHA-256).
pub fn write_adapter<W: Write>(params: &AdapterParams, refs: &[ProjectorRef], out: W) -> Result<()> {
    params.validate()?;
    if refs.len() != params.k() {
        return Err(Error::Dimension {
            expected: params.k(),
            actual: refs.len(),
            context: "projector references",
        });
    }
    for (k, (r, p)) in refs.iter().zip(&params.projectors).enumerate() {
        if r.checksum != linalg::checksum(p) {
            return Err(Error::Invariant(format!(
                "projector reference {k} ({}) does not match its matrix",
                r.path
            )));
        }
    }
    let mut w = ByteWriter::new(out, WHAT);
    w.raw(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(len_u32(params.d(), WHAT)?)?;
    w.u32(len_u32(params.k(), WHAT)?)?;
    w.u32(len_u32(params.rank(), WHAT)?)?;
    w.f64_matrix(&params.g1)?;
    for g in &params.gates {
        w.f64_matrix(&DMatrix::from_row_slice(1, g.len(), g.as_slice()))?;
    }
    for u in &params.u {
        w.f64_matrix(u)?;
    }
    for v in &params.v {
        w.f64_matrix(v)?;
    }
    w.f64_matrix(&params.o)?;
    for r in refs {
        w.string(&r.path)?;
        w.raw(&r.checksum)?;
    }
    Ok(())
}

/// Reads an adapter, obtaining each projector through `resolve` and checking
/// it against the stored checksum.
pub fn read_adapter<R: Read>(
    input: R,
    mut resolve: impl FnMut(&ProjectorRef) -> Result<DMatrix<f64>>,
) -> Result<(AdapterParams, Vec<ProjectorRef>)> {
    let mut r = ByteReader::new(input, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let rank = r.u32()? as usize;
    if d == 0 || k == 0 || rank == 0 || d > 1 << 15 || k > 1 << 10 || rank > d.max(1 << 10) {
        return Err(Error::format(WHAT, format!("implausible shape d={d} K={k} r={rank}")));
    }
    let g1 = r.f64_matrix(k, d)?;
    let mut gates = Vec::with_capacity(k);
    for _ in 0..k {
        gates.push(DVector::from_iterator(d, r.f64_matrix(1, d)?.iter().cloned()));
    }
    let mut u = Vec::with_capacity(k);
    for _ in 0..k {
        u.push(r.f64_matrix(d, rank)?);
    }
    let mut v = Vec::with_capacity(k);
    for _ in 0..k {
        v.push(r.f64_matrix(rank, d)?);
    }
    let o = r.f64_matrix(d, d)?;
    let mut refs = Vec::with_capacity(k);
    for _ in 0..k {
        let path = r.string()?;
        let checksum = r.bytes::<32>()?;
        refs.push(ProjectorRef { path, checksum });
    }
    r.finish()?;
    let mut projectors = Vec::with_capacity(k);
    for pref in &refs {
        let m = resolve(pref)?;
        if linalg::checksum(&m) != pref.checksum {
            return Err(Error::Invariant(format!(
                "checksum mismatch for projector {}",
                pref.path
            )));
        }
        projectors.push(m);
    }
    let params = AdapterParams {
        g1,
        gates,
        u,
        v,
        o,
        projectors,
    };
    params.validate()?;
    Ok((params, refs))
}

pub fn save_adapter(params: &AdapterParams, refs: &[ProjectorRef], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_adapter(params, refs, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads an adapter and the projector files it references.
pub fn load_adapter(path: &Path) -> Result<(AdapterParams, Vec<ProjectorRef>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_adapter(
        BufReader::new(file),
        |r| Ok(load_projector(&base.join(&r.path))?.matrix),
    )
}
