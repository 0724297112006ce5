use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{len_u32, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg;

const MAGIC: &[u8; 4] = b"NDPJ";
const VERSION: u32 = 1;
const WHAT: &str = "projector file";

/// Tolerance on `max |P − Pᵀ|` enforced on save and load.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;
/// Target bound on `max |P·P − P|`; violations are reported, not rejected.
pub const IDEMPOTENCE_TOLERANCE: f64 = 1e-6;

/// A fitted per-attribute backbone projector with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorRecord {
    pub attribute: String,
    /// `d×d` backbone block of the lifted null-space projector.
    pub matrix: DMatrix<f64>,
    /// Probe directions accumulated into the stack.
    pub probe_count: usize,
    /// Held-out leakage gap measured at fit time.
    pub achieved_gap: f64,
    pub rff_spec_id: String,
    /// Refinement rounds used.
    pub refinements: usize,
    /// False when the refinement cap was hit with the gap still above threshold.
    pub converged: bool,
}

impl ProjectorRecord {
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn asymmetry(&self) -> f64 {
        linalg::asymmetry(&self.matrix)
    }

    pub fn idempotence_defect(&self) -> f64 {
        linalg::idempotence_defect(&self.matrix)
    }

    /// True when `‖P² − P‖_max` is within [`IDEMPOTENCE_TOLERANCE`].
    pub fn is_idempotent(&self) -> bool {
        self.idempotence_defect() <= IDEMPOTENCE_TOLERANCE
    }

    /// Hard invariants: square, finite, symmetric.
    pub fn validate(&self) -> Result<()> {
        if self.matrix.nrows() != self.matrix.ncols() || self.matrix.nrows() == 0 {
            return Err(Error::Invariant(format!(
                "projector `{}` is {}x{}",
                self.attribute,
                self.matrix.nrows(),
                self.matrix.ncols()
            )));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "projector `{}` has non-finite entries",
                self.attribute
            )));
        }
        let asym = self.asymmetry();
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::Invariant(format!(
                "projector `{}` asymmetry {asym:.3e} exceeds {SYMMETRY_TOLERANCE:e}",
                self.attribute
            )));
        }
        Ok(())
    }
}

/// Layout: magic `NDPJ`, u32 version, u32 d, u32 T, f64 achieved gap,
/// d×d float64 row-major; then u32 refinements, u8 converged flag,
/// attribute name and RFF spec id as (u32 length, UTF-8) strings.
pub fn write_projector<W: Write>(rec: &ProjectorRecord, out: W) -> Result<()> {
    rec.validate()?;
    let mut w = ByteWriter::new(out, WHAT);
    w.raw(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(len_u32(rec.d(), WHAT)?)?;
    w.u32(len_u32(rec.probe_count, WHAT)?)?;
    w.f64(rec.achieved_gap)?;
    w.f64_matrix(&rec.matrix)?;
    w.u32(len_u32(rec.refinements, WHAT)?)?;
    w.u8(rec.converged as u8)?;
    w.string(&rec.attribute)?;
    w.string(&rec.rff_spec_id)
}

pub fn read_projector<R: Read>(input: R) -> Result<ProjectorRecord> {
    let mut r = ByteReader::new(input, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let d = r.u32()? as usize;
    if d == 0 || d > 1 << 15 {
        return Err(Error::format(WHAT, format!("implausible dimension {d}")));
    }
    let probe_count = r.u32()? as usize;
    let achieved_gap = r.f64()?;
    let matrix = r.f64_matrix(d, d)?;
    let refinements = r.u32()? as usize;
    let converged = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::format(WHAT, format!("bad converged flag {other}"))),
    };
    let attribute = r.string()?;
    let rff_spec_id = r.string()?;
    r.finish()?;
    let rec = ProjectorRecord {
        attribute,
        matrix,
        probe_count,
        achieved_gap,
        rff_spec_id,
        refinements,
        converged,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn save_projector(rec: &ProjectorRecord, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_projector(rec, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_projector(path: &Path) -> Result<ProjectorRecord> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_projector(BufReader::new(file))
}
