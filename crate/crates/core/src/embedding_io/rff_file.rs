use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{len_u32, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::kernel_lift::{sample_rff, RffSpec};

const MAGIC: &[u8; 4] = b"NDRF";
const VERSION: u32 = 1;
const WHAT: &str = "RFF spec file";

/// Layout: magic `NDRF`, u32 version, u32 d, u32 D, f64 sigma, f64 eta,
/// u64 seed. Frequencies and phases are regenerated from the seed.
pub fn write_rff_spec<W: Write>(spec: &RffSpec, out: W) -> Result<()> {
    let mut w = ByteWriter::new(out, WHAT);
    w.raw(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(len_u32(spec.d(), WHAT)?)?;
    w.u32(len_u32(spec.dim(), WHAT)?)?;
    w.f64(spec.sigma())?;
    w.f64(spec.eta())?;
    w.u64(spec.seed())
}

pub fn read_rff_spec<R: Read>(input: R) -> Result<RffSpec> {
    let mut r = ByteReader::new(input, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let d = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let sigma = r.f64()?;
    let eta = r.f64()?;
    let seed = r.u64()?;
    r.finish()?;
    sample_rff(d, dim, sigma, eta, seed)
}

pub fn save_rff_spec(spec: &RffSpec, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_rff_spec(spec, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_rff_spec(path: &Path) -> Result<RffSpec> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rff_spec(BufReader::new(file))
}
