//! Little-endian binary containers for snapshots (`KPSS`) and models (`KPDM`).
//!
//! Snapshot layout:
//!
//! ```text
//! "KPSS" | u32 version | u32 flags | u64 n_vertices | u64 frames | f64 h
//! frames x 6n f64                    lifted states
//! 3n f64                             rest positions      (flags bit 0)
//! (frames - 1) x 6n f64              lifted forcing       (flags bit 1)
//! ```
//!
//! Model layout:
//!
//! ```text
//! "KPDM" | u32 version | u64 n_vertices | u64 rank | f64 h
//! 6n x r f64 Re(Phi), 6n x r f64 Im(Phi)    row-major
//! r f64 Re(Lambda), r f64 Im(Lambda)
//! 6n x r f64 U_r                            row-major
//! r x r f64 Re(phi), r x r f64 Im(phi)      row-major
//! ```

use std::fs;
use std::path::Path;

use faer::{c64, Mat, MatRef};

use crate::dmd::{KoopmanModel, SnapshotSet};
use crate::error::{Error, Result};
use crate::statespace::LiftedState;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"KPSS";
pub const MODEL_MAGIC: &[u8; 4] = b"KPDM";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_REST: u32 = 1;
const FLAG_FORCES: u32 = 2;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: impl IntoIterator<Item = f64>) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated file: need {n} bytes at offset {}, have {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn version(r: &mut Reader<'_>) -> Result<()> {
    let v = r.u32()?;
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {v}")));
    }
    Ok(())
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
}

pub fn encode_snapshots(snaps: &SnapshotSet) -> Vec<u8> {
    let n = snaps.n_vertices();
    let mut flags = 0;
    if snaps.rest_positions().is_some() {
        flags |= FLAG_REST;
    }
    if snaps.forces().is_some() {
        flags |= FLAG_FORCES;
    }
    let mut w = Writer(Vec::with_capacity(32 + snaps.len() * 48 * n));
    w.0.extend_from_slice(SNAPSHOT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(flags);
    w.u64(n as u64);
    w.u64(snaps.len() as u64);
    w.f64s([snaps.h()]);
    for s in snaps.states() {
        w.f64s(s.as_slice().iter().copied());
    }
    if let Some(rest) = snaps.rest_positions() {
        w.f64s(rest.iter().copied());
    }
    if let Some(forces) = snaps.forces() {
        for f in forces {
            w.f64s(f.iter().copied());
        }
    }
    w.0
}

pub fn decode_snapshots(buf: &[u8]) -> Result<SnapshotSet> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(SNAPSHOT_MAGIC)?;
    version(&mut r)?;
    let flags = r.u32()?;
    if flags & !(FLAG_REST | FLAG_FORCES) != 0 {
        return Err(Error::Format(format!("unknown snapshot flags {flags:#x}")));
    }
    let n = to_usize(r.u64()?, "vertex count")?;
    let frames = to_usize(r.u64()?, "frame count")?;
    let h = r.f64()?;
    if n == 0 {
        return Err(Error::Format("vertex count must be positive".into()));
    }
    let d = 6 * n;
    let mut states = Vec::with_capacity(frames.min(buf.len() / (8 * d) + 1));
    for _ in 0..frames {
        states.push(LiftedState::from_vec(r.f64s(d)?)?);
    }
    let mut snaps = SnapshotSet::new(states, h)?;
    if flags & FLAG_REST != 0 {
        snaps = snaps.with_rest_positions(r.f64s(3 * n)?)?;
    }
    if flags & FLAG_FORCES != 0 {
        let forces = (0..frames.saturating_sub(1)).map(|_| r.f64s(d)).collect::<Result<Vec<_>>>()?;
        snaps = snaps.with_forces(forces)?;
    }
    r.finish()?;
    Ok(snaps)
}

pub fn write_snapshots(path: &Path, snaps: &SnapshotSet) -> Result<()> {
    fs::write(path, encode_snapshots(snaps))?;
    Ok(())
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotSet> {
    decode_snapshots(&fs::read(path)?)
}

fn row_major<T: Copy>(m: MatRef<'_, T>) -> impl Iterator<Item = T> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

pub fn encode_model(model: &KoopmanModel) -> Vec<u8> {
    let (d, r) = (model.state_dim(), model.rank());
    let mut w = Writer(Vec::with_capacity(32 + 8 * (5 * d * r + 2 * r + 2 * r * r)));
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64((d / 6) as u64);
    w.u64(r as u64);
    w.f64s([model.h()]);
    w.f64s(row_major(model.modes()).map(|z| z.re));
    w.f64s(row_major(model.modes()).map(|z| z.im));
    w.f64s(model.eigenvalues().iter().map(|z| z.re));
    w.f64s(model.eigenvalues().iter().map(|z| z.im));
    w.f64s(row_major(model.left_basis()));
    w.f64s(row_major(model.reduced_eigvecs()).map(|z| z.re));
    w.f64s(row_major(model.reduced_eigvecs()).map(|z| z.im));
    w.0
}

pub fn decode_model(buf: &[u8]) -> Result<KoopmanModel> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    version(&mut r)?;
    let n = to_usize(r.u64()?, "vertex count")?;
    let rank = to_usize(r.u64()?, "rank")?;
    let h = r.f64()?;
    let d = n.checked_mul(6).ok_or_else(|| Error::Format("vertex count too large".into()))?;
    let dr = d.checked_mul(rank).ok_or_else(|| Error::Format("model too large".into()))?;
    let complex = |re: Vec<f64>, im: Vec<f64>, rows: usize, cols: usize| {
        Mat::from_fn(rows, cols, |i, j| c64::new(re[i * cols + j], im[i * cols + j]))
    };
    let (phi_re, phi_im) = (r.f64s(dr)?, r.f64s(dr)?);
    let (lam_re, lam_im) = (r.f64s(rank)?, r.f64s(rank)?);
    let basis = r.f64s(dr)?;
    let (ev_re, ev_im) = (r.f64s(rank * rank)?, r.f64s(rank * rank)?);
    r.finish()?;
    let modes = complex(phi_re, phi_im, d, rank);
    let eigenvalues = lam_re.into_iter().zip(lam_im).map(|(a, b)| c64::new(a, b)).collect();
    let left_basis = Mat::from_fn(d, rank, |i, j| basis[i * rank + j]);
    let reduced = complex(ev_re, ev_im, rank, rank);
    KoopmanModel::from_parts(modes, eigenvalues, h, left_basis, reduced)
}

pub fn write_model(path: &Path, model: &KoopmanModel) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<KoopmanModel> {
    decode_model(&fs::read(path)?)
}
