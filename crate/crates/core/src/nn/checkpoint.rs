//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CFNETv01"
//! count   u32      number of blocks
//! block*  name_len u16, name bytes (UTF-8),
//!         rows u32, cols u32,
//!         rows*cols f64 values, row-major
//! ```
//!
//! Values are stored as 64-bit floats regardless of the build's scalar
//! type; a single-precision build round-trips bit-exactly because every
//! f32 is representable as an f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::Real;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CFNETv01";

pub fn save_blocks(path: &Path, blocks: &[(String, Array2<Real>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(blocks.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, values) in blocks {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
        w.write_all(&(values.nrows() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(values.ncols() as u32).to_le_bytes()).map_err(io_err)?;
        for &v in values.iter() {
            w.write_all(&(v as f64).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_blocks(path: &Path) -> Result<Vec<(String, Array2<Real>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let count = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
    let mut blocks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u16(&mut r).ok_or_else(|| bad("truncated block name"))?;
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|_| bad("truncated block name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("block name is not UTF-8"))?;
        let rows = read_u32(&mut r).ok_or_else(|| bad("truncated block shape"))? as usize;
        let cols = read_u32(&mut r).ok_or_else(|| bad("truncated block shape"))? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf).map_err(|_| bad("truncated block values"))?;
            values.push(f64::from_le_bytes(buf) as Real);
        }
        let arr = Array2::from_shape_vec((rows, cols), values)
            .map_err(|_| bad("inconsistent block shape"))?;
        blocks.push((name, arr));
    }
    Ok(blocks)
}

fn read_u16(r: &mut impl Read) -> Option<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).ok()?;
    Some(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ActorNetwork, ParamSet};
    use ndarray::array;

    #[test]
    fn blocks_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let blocks = vec![
            ("a.w".to_string(), array![[1.5, -2.25], [0.1, 1e-30]]),
            ("b".to_string(), Array2::zeros((0, 3))),
            ("c.long_name.with.dots".to_string(), array![[std::f64::consts::PI]]),
        ];
        save_blocks(&path, &blocks).unwrap();
        let loaded = load_blocks(&path).unwrap();
        assert_eq!(blocks.len(), loaded.len());
        for ((n0, v0), (n1, v1)) in blocks.iter().zip(&loaded) {
            assert_eq!(n0, n1);
            assert_eq!(v0.dim(), v1.dim());
            for (a, b) in v0.iter().zip(v1.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn network_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actor.ckpt");
        let mut actor = ActorNetwork::new(12, &mut crate::rng::stream(3, "ckpt", 0));
        save_blocks(&path, &actor.to_blocks("actor.")).unwrap();

        let blocks = load_blocks(&path).unwrap();
        let restored = ActorNetwork::from_blocks("actor.", &blocks).unwrap();

        let layout = crate::world::Layout::four_way();
        let scene = vec![
            crate::world::Vehicle::on_path(
                &layout,
                crate::world::VehicleId(0),
                crate::world::VehicleKind::Av,
                crate::world::PathId {
                    approach: crate::world::Approach::West,
                    turn: crate::world::Turn::Straight,
                },
                120.0,
                9.0,
            ),
            crate::world::Vehicle::on_path(
                &layout,
                crate::world::VehicleId(1),
                crate::world::VehicleKind::Av,
                crate::world::PathId {
                    approach: crate::world::Approach::North,
                    turn: crate::world::Turn::Left,
                },
                110.0,
                7.0,
            ),
        ];
        let g = crate::graph::build_graph(&scene, &layout);
        let (a, b) = (actor.act(&g), restored.act(&g));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits(), "restored network must act identically");
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxx").unwrap();
        let err = load_blocks(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_blocks(Path::new("/nonexistent/net.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let blocks = vec![("w".to_string(), array![[1.0, 2.0, 3.0]])];
        save_blocks(&path, &blocks).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        let err = load_blocks(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
