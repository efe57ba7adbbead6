//! Binary grid files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `MSGRID\0\n` | 8 bytes |
//! | format version | u32 |
//! | 4 × (min, max, count) | f64, f64, u64 |
//! | gate count, phase target (0, +1, −1) | u32, i8 |
//! | η, t_g, ramp time | f64 × 3 |
//! | n_max, loops, initial Fock level | u64, u32, u64 |
//! | integrator step (0 = default) | f64 |
//! | model digest | u64 |
//! | node count | u64 |
//! | (p_gg, p_one, p_ee) per node | f64 × 3 |
//! | checksum of everything above | u64 |

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{GridAxis, GridSpec, GridTable};
use crate::physics::{MeasurementSetting, ModelConfig, OutcomeDistribution, PhaseTarget};
use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"MSGRID\0\n";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    let h = Sha256::digest(bytes);
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

pub(crate) fn encode_payload(table: &GridTable) -> Vec<u8> {
    let spec = &table.spec;
    let mut b = Vec::with_capacity(160 + 24 * table.values.len());
    b.extend_from_slice(&MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for a in &spec.axes {
        b.extend_from_slice(&a.min.to_le_bytes());
        b.extend_from_slice(&a.max.to_le_bytes());
        b.extend_from_slice(&(a.count as u64).to_le_bytes());
    }
    b.extend_from_slice(&spec.setting.n_gates.to_le_bytes());
    let code: i8 = match spec.setting.phase_target {
        PhaseTarget::Zero => 0,
        PhaseTarget::PlusQuarter => 1,
        PhaseTarget::MinusQuarter => -1,
    };
    b.extend_from_slice(&code.to_le_bytes());
    let m = &spec.model;
    b.extend_from_slice(&m.eta.to_le_bytes());
    b.extend_from_slice(&m.gate_time.to_le_bytes());
    b.extend_from_slice(&m.ramp_time.to_le_bytes());
    b.extend_from_slice(&(m.n_max as u64).to_le_bytes());
    b.extend_from_slice(&m.loops.to_le_bytes());
    b.extend_from_slice(&(m.initial_fock as u64).to_le_bytes());
    b.extend_from_slice(&m.integrator_step.unwrap_or(0.0).to_le_bytes());
    b.extend_from_slice(&m.digest().to_le_bytes());
    b.extend_from_slice(&(table.values.len() as u64).to_le_bytes());
    for v in &table.values {
        for p in v.to_array() {
            b.extend_from_slice(&p.to_le_bytes());
        }
    }
    b
}

/// Write `table` to `path`, replacing any existing file.
pub fn save_grid(table: &GridTable, path: &Path) -> Result<()> {
    if table.values.len() != table.spec.node_count() {
        return Err(Error::InvalidParameter(format!(
            "table holds {} values for {} nodes",
            table.values.len(),
            table.spec.node_count()
        )));
    }
    let mut bytes = encode_payload(table);
    let sum = checksum(&bytes);
    bytes.extend_from_slice(&sum.to_le_bytes());
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(Error::CorruptGridFile("file truncated".into()));
        }
        let out = self.buf[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn i8(&mut self) -> Result<i8> {
        Ok(i8::from_le_bytes(self.take()?))
    }
}

/// Read a grid written by [`save_grid`].
pub fn load_grid(path: &Path) -> Result<GridTable> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<GridTable> {
    if bytes.len() < MAGIC.len() + 4 || bytes[..8] != MAGIC {
        return Err(Error::UnsupportedGridFile("bad magic bytes".into()));
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedGridFile(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    if bytes.len() < 8 + 12 {
        return Err(Error::CorruptGridFile("file truncated".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    if checksum(body) != stored {
        return Err(Error::CorruptGridFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let mut axes = [GridAxis::new(0.0, 0.0, 0); 4];
    for a in &mut axes {
        let min = r.f64()?;
        let max = r.f64()?;
        let count = r.u64()? as usize;
        *a = GridAxis::new(min, max, count);
    }
    let n_gates = r.u32()?;
    let phase_target = match r.i8()? {
        0 => PhaseTarget::Zero,
        1 => PhaseTarget::PlusQuarter,
        -1 => PhaseTarget::MinusQuarter,
        c => return Err(Error::CorruptGridFile(format!("phase target code {c}"))),
    };
    let eta = r.f64()?;
    let gate_time = r.f64()?;
    let ramp_time = r.f64()?;
    let n_max = r.u64()? as usize;
    let loops = r.u32()?;
    let initial_fock = r.u64()? as usize;
    let step = r.f64()?;
    let model = ModelConfig {
        eta,
        gate_time,
        ramp_time,
        n_max,
        loops,
        initial_fock,
        integrator_step: (step != 0.0).then_some(step),
    };
    let digest = r.u64()?;
    if digest != model.digest() {
        return Err(Error::CorruptGridFile("model digest does not match model fields".into()));
    }
    let spec = GridSpec {
        axes,
        setting: MeasurementSetting::new(n_gates, phase_target),
        model,
    };
    spec.validate()
        .map_err(|e| Error::CorruptGridFile(format!("invalid spec: {e}")))?;
    let count = r.u64()? as usize;
    if count != spec.node_count() {
        return Err(Error::CorruptGridFile(format!(
            "{count} values for {} nodes",
            spec.node_count()
        )));
    }
    if body.len() - r.pos != 24 * count {
        return Err(Error::CorruptGridFile("payload length mismatch".into()));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(OutcomeDistribution::new(r.f64()?, r.f64()?, r.f64()?));
    }
    Ok(GridTable { spec, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::tiny_spec;

    fn sample() -> GridTable {
        let spec = tiny_spec(MeasurementSetting::new(3, PhaseTarget::MinusQuarter));
        let values = (0..spec.node_count())
            .map(|i| {
                let x = (i as f64 * 0.37).sin().abs() * 0.9;
                OutcomeDistribution::new(x, 0.05, 0.95 - x)
            })
            .collect();
        GridTable { spec, values }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        let t = sample();
        save_grid(&t, &path).unwrap();
        let back = load_grid(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.checksum(), t.checksum());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        save_grid(&sample(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [20, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load_grid(&path), Err(Error::CorruptGridFile(_))), "cut {cut}");
        }
    }

    #[test]
    fn flipped_value_bit_is_corrupt() {
        let t = sample();
        let mut bytes = encode_payload(&t);
        let sum = checksum(&bytes);
        bytes.extend_from_slice(&sum.to_le_bytes());
        let k = bytes.len() - 40;
        bytes[k] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::CorruptGridFile(_))));
    }

    #[test]
    fn version_bump_is_unsupported() {
        let t = sample();
        let mut bytes = encode_payload(&t);
        bytes[8] += 1;
        let sum = checksum(&bytes);
        bytes.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedGridFile(_))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedGridFile(_))));
    }
}
