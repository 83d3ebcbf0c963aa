//! Versioned little-endian binary persistence for `SemanticMap`.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        5 bytes  b"SLMAP"
//! version      u16      currently 1
//! utm_to_map   3 × f64  x, y, theta
//! resolution   f64      sign-raster meters/pixel
//! description  u32 len + UTF-8 bytes
//! lanes        u32 polyline count, then per polyline:
//!                u32 vertex count, then vertices as (f64 x, f64 y)
//! signs        origin (f64 x, f64 y), u32 width, u32 height,
//!                u32 cell count, then cells as (u32 row, u32 col, f64 value)
//! ```
//!
//! Serialization is canonical (cells kept sorted, no padding), so
//! save → load → save reproduces identical bytes.

use super::{LaneGraph, MapFrame, SemanticMap, SignMap, SparseCell, SparseRaster};
use crate::pose::{Point2, Pose2};
use byteorder::{LittleEndian, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 5] = b"SLMAP";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum MapIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: expected \"SLMAP\", got {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported map format version {found} (supported: {supported}) at byte 5")]
    Version { found: u16, supported: u16 },
    #[error("truncated or corrupt map file at byte {offset}: {what}")]
    Parse { offset: u64, what: String },
    #[error("trailing garbage after map payload at byte {offset}")]
    TrailingBytes { offset: u64 },
}

/// Reader wrapper that tracks the absolute byte offset for error reporting.
struct TrackedReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> TrackedReader<R> {
    fn new(inner: R) -> Self {
        TrackedReader { inner, offset: 0 }
    }

    fn fail(&self, what: impl Into<String>) -> MapIoError {
        MapIoError::Parse {
            offset: self.offset,
            what: what.into(),
        }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<(), MapIoError> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| MapIoError::Parse {
            offset: at,
            what: format!("expected {} ({} bytes)", what, buf.len()),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u16(&mut self, what: &str) -> Result<u16, MapIoError> {
        let mut b = [0u8; 2];
        self.read_exact_at(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self, what: &str) -> Result<u32, MapIoError> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_f64(&mut self, what: &str) -> Result<f64, MapIoError> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }
}

/// Serialize a map to any writer; returns the number of bytes written.
pub fn write_map<W: Write>(mut w: W, m: &SemanticMap) -> Result<u64, MapIoError> {
    let mut n: u64 = 0;
    w.write_all(MAGIC)?;
    n += MAGIC.len() as u64;
    w.write_u16::<LittleEndian>(VERSION)?;
    n += 2;
    for v in [
        m.frame.utm_to_map.x,
        m.frame.utm_to_map.y,
        m.frame.utm_to_map.theta,
        m.signs.resolution,
    ] {
        w.write_f64::<LittleEndian>(v)?;
        n += 8;
    }
    let desc = m.frame.description.as_bytes();
    w.write_u32::<LittleEndian>(desc.len() as u32)?;
    w.write_all(desc)?;
    n += 4 + desc.len() as u64;

    w.write_u32::<LittleEndian>(m.lanes.boundaries.len() as u32)?;
    n += 4;
    for poly in &m.lanes.boundaries {
        w.write_u32::<LittleEndian>(poly.len() as u32)?;
        n += 4;
        for p in poly {
            w.write_f64::<LittleEndian>(p.x)?;
            w.write_f64::<LittleEndian>(p.y)?;
            n += 16;
        }
    }

    let sr = &m.signs.raster;
    w.write_f64::<LittleEndian>(sr.origin.x)?;
    w.write_f64::<LittleEndian>(sr.origin.y)?;
    w.write_u32::<LittleEndian>(sr.width as u32)?;
    w.write_u32::<LittleEndian>(sr.height as u32)?;
    w.write_u32::<LittleEndian>(sr.cells.len() as u32)?;
    n += 16 + 12;
    for cell in &sr.cells {
        w.write_u32::<LittleEndian>(cell.row)?;
        w.write_u32::<LittleEndian>(cell.col)?;
        w.write_f64::<LittleEndian>(cell.value)?;
        n += 16;
    }
    w.flush()?;
    Ok(n)
}

/// Deserialize a map from any reader, rejecting version mismatches,
/// truncation, and trailing bytes.
pub fn read_map<R: Read>(r: R) -> Result<SemanticMap, MapIoError> {
    let mut r = TrackedReader::new(r);
    let mut magic = [0u8; 5];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(MapIoError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = r.read_u16("version")?;
    if version != VERSION {
        return Err(MapIoError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let x = r.read_f64("frame x")?;
    let y = r.read_f64("frame y")?;
    let theta = r.read_f64("frame theta")?;
    let resolution = r.read_f64("resolution")?;
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(r.fail(format!("resolution must be positive, got {resolution}")));
    }

    let desc_len = r.read_u32("description length")? as usize;
    let mut desc = vec![0u8; desc_len];
    r.read_exact_at(&mut desc, "description")?;
    let description =
        String::from_utf8(desc).map_err(|_| r.fail("description is not valid UTF-8"))?;

    let n_polys = r.read_u32("polyline count")? as usize;
    let mut boundaries = Vec::with_capacity(n_polys.min(1 << 20));
    for i in 0..n_polys {
        let n_verts = r.read_u32("vertex count")? as usize;
        if n_verts < 2 {
            return Err(r.fail(format!("polyline {i} has {n_verts} vertices; need at least 2")));
        }
        let mut poly = Vec::with_capacity(n_verts.min(1 << 22));
        for _ in 0..n_verts {
            let px = r.read_f64("vertex x")?;
            let py = r.read_f64("vertex y")?;
            poly.push(Point2::new(px, py));
        }
        boundaries.push(poly);
    }

    let ox = r.read_f64("sign origin x")?;
    let oy = r.read_f64("sign origin y")?;
    let width = r.read_u32("sign width")? as usize;
    let height = r.read_u32("sign height")? as usize;
    let n_cells = r.read_u32("sign cell count")? as usize;
    let mut cells: Vec<SparseCell> = Vec::with_capacity(n_cells.min(1 << 22));
    for i in 0..n_cells {
        let row = r.read_u32("cell row")?;
        let col = r.read_u32("cell col")?;
        let value = r.read_f64("cell value")?;
        if row as usize >= height || col as usize >= width {
            return Err(r.fail(format!(
                "sign cell {i} at ({row},{col}) outside {height}x{width} grid"
            )));
        }
        if let Some(prev) = cells.last() {
            if (row, col) <= (prev.row, prev.col) {
                return Err(r.fail(format!("sign cell {i} breaks (row,col) sort order")));
            }
        }
        cells.push(SparseCell { row, col, value });
    }

    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(MapIoError::TrailingBytes { offset: r.offset }),
        Err(e) => return Err(MapIoError::Io(e)),
    }

    Ok(SemanticMap {
        lanes: LaneGraph { boundaries },
        signs: SignMap {
            raster: SparseRaster {
                origin: Point2::new(ox, oy),
                resolution,
                width,
                height,
                cells,
            },
            resolution,
        },
        frame: MapFrame {
            utm_to_map: Pose2 { x, y, theta },
            description,
        },
    })
}

pub fn save_map(path: &Path, m: &SemanticMap) -> Result<u64, MapIoError> {
    let f = File::create(path)?;
    write_map(BufWriter::new(f), m)
}

pub fn load_map(path: &Path) -> Result<SemanticMap, MapIoError> {
    let f = File::open(path)?;
    read_map(BufReader::new(f))
}

/// Exact byte length `write_map` would produce, without writing.
pub fn serialized_size(m: &SemanticMap) -> u64 {
    let mut n = 5 + 2 + 4 * 8; // magic, version, frame pose + resolution
    n += 4 + m.frame.description.len() as u64;
    n += 4;
    for poly in &m.lanes.boundaries {
        n += 4 + 16 * poly.len() as u64;
    }
    n += 16 + 12 + 16 * m.signs.raster.cells.len() as u64;
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::rasterize_signs;
    use crate::raster::Rect;

    fn sample_map() -> SemanticMap {
        SemanticMap {
            lanes: LaneGraph::new(vec![
                vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.5)],
                vec![
                    Point2::new(0.0, 3.7),
                    Point2::new(5.0, 3.8),
                    Point2::new(10.0, 4.2),
                ],
            ])
            .unwrap(),
            signs: rasterize_signs(
                &[
                    (Point2::new(2.0, -2.0), 0.95),
                    (Point2::new(8.0, 6.0), 0.7),
                ],
                &Rect::new(-1.0, -3.0, 11.0, 7.0),
                0.05,
                0.5,
            )
            .unwrap(),
            frame: MapFrame {
                utm_to_map: Pose2::new(123.45, -678.9, 0.35),
                description: "unit-test map".to_string(),
            },
        }
    }

    #[test]
    fn save_load_round_trip_is_lossless() {
        let m = sample_map();
        let mut buf = Vec::new();
        let n = write_map(&mut buf, &m).unwrap();
        assert_eq!(n, buf.len() as u64);
        assert_eq!(n, serialized_size(&m));
        let back = read_map(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn serialization_is_byte_stable() {
        let m = sample_map();
        let mut a = Vec::new();
        write_map(&mut a, &m).unwrap();
        let back = read_map(a.as_slice()).unwrap();
        let mut b = Vec::new();
        write_map(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = read_map(&b"NOTMAP----------"[..]).unwrap_err();
        assert!(matches!(err, MapIoError::BadMagic { .. }));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let m = sample_map();
        let mut buf = Vec::new();
        write_map(&mut buf, &m).unwrap();
        buf[5] = 99; // bump version field
        let err = read_map(buf.as_slice()).unwrap_err();
        match err {
            MapIoError::Version { found, supported } => {
                assert_eq!(found, 99);
                assert_eq!(supported, VERSION);
            }
            other => panic!("expected version error, got {other}"),
        }
    }

    #[test]
    fn truncation_reports_byte_offset() {
        let m = sample_map();
        let mut buf = Vec::new();
        write_map(&mut buf, &m).unwrap();
        let cut = buf.len() - 5;
        let err = read_map(&buf[..cut]).unwrap_err();
        match err {
            MapIoError::Parse { offset, .. } => {
                assert!(offset <= cut as u64);
                assert!(offset > 0);
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let m = sample_map();
        let mut buf = Vec::new();
        write_map(&mut buf, &m).unwrap();
        buf.push(0);
        let err = read_map(buf.as_slice()).unwrap_err();
        assert!(matches!(err, MapIoError::TrailingBytes { .. }));
    }

    #[test]
    fn file_round_trip_via_tempdir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.slmap");
        let m = sample_map();
        save_map(&path, &m).unwrap();
        let back = load_map(&path).unwrap();
        assert_eq!(back, m);
    }
}
