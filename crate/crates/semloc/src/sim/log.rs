//! Length-prefixed binary sensor logs: lossless round-tripping of
//! observation frames with a versioned header, a streaming reader for logs
//! too large to hold in memory, and a line-delimited JSON summary export
//! for eyeballing runs.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Serialize;
use thiserror::Error;

use crate::filter::MotionIncrement;
use crate::observe::GpsFix;
use crate::pose::{Point2, Pose2};
use crate::raster::Raster;
use crate::sim::ObservationFrame;
use nalgebra::Matrix3;

const LOG_MAGIC: &[u8; 8] = b"SLOCLOG\0";
const LOG_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a sensor log (bad magic)")]
    BadMagic,
    #[error("unsupported log version {0}")]
    BadVersion(u16),
    #[error("log truncated inside frame {frame}")]
    Truncated { frame: usize },
    #[error("frame {frame} is malformed: {reason}")]
    Malformed { frame: usize, reason: String },
}

/// Writes frames to a binary log at `path`, one length-prefixed record per
/// frame after the header.
pub fn record<'a, I>(frames: I, path: &Path) -> Result<usize, LogError>
where
    I: IntoIterator<Item = &'a ObservationFrame>,
{
    let mut w = LogWriter::create(path)?;
    for frame in frames {
        w.append(frame)?;
    }
    w.finish()
}

/// Incremental log writer for streams too large to hold in memory: writes
/// the header on creation, one record per `append`, and reports the frame
/// count on `finish`.
pub struct LogWriter {
    writer: BufWriter<File>,
    body: Vec<u8>,
    count: usize,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        let mut writer = BufWriter::new(File::create(path)?);
        writer.write_all(LOG_MAGIC)?;
        writer.write_u16::<LittleEndian>(LOG_VERSION)?;
        Ok(LogWriter {
            writer,
            body: Vec::new(),
            count: 0,
        })
    }

    pub fn append(&mut self, frame: &ObservationFrame) -> Result<(), LogError> {
        self.body.clear();
        encode_frame(&mut self.body, frame)?;
        self.writer.write_u32::<LittleEndian>(self.body.len() as u32)?;
        self.writer.write_all(&self.body)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize, LogError> {
        self.writer.flush()?;
        Ok(self.count)
    }
}

/// Reads every frame of a log into memory. Prefer `LogReader` when the log
/// may not fit.
pub fn replay(path: &Path) -> Result<Vec<ObservationFrame>, LogError> {
    LogReader::open(path)?.collect()
}

/// Streaming reader over a binary sensor log.
pub struct LogReader {
    reader: BufReader<File>,
    frame: usize,
}

impl LogReader {
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic).map_err(|_| LogError::BadMagic)?;
        if &magic != LOG_MAGIC {
            return Err(LogError::BadMagic);
        }
        let version = reader.read_u16::<LittleEndian>().map_err(|_| LogError::BadMagic)?;
        if version != LOG_VERSION {
            return Err(LogError::BadVersion(version));
        }
        Ok(LogReader { reader, frame: 0 })
    }

    fn read_frame(&mut self) -> Result<Option<ObservationFrame>, LogError> {
        let len = match self.reader.read_u32::<LittleEndian>() {
            Ok(len) => len as usize,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let mut body = vec![0u8; len];
        self.reader
            .read_exact(&mut body)
            .map_err(|_| LogError::Truncated { frame: self.frame })?;
        let frame = decode_frame(&body, self.frame)?;
        self.frame += 1;
        Ok(Some(frame))
    }
}

impl Iterator for LogReader {
    type Item = Result<ObservationFrame, LogError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_frame().transpose()
    }
}

fn encode_frame(out: &mut Vec<u8>, f: &ObservationFrame) -> Result<(), LogError> {
    out.write_f64::<LittleEndian>(f.timestamp)?;
    out.write_f64::<LittleEndian>(f.motion.delta.x)?;
    out.write_f64::<LittleEndian>(f.motion.delta.y)?;
    out.write_f64::<LittleEndian>(f.motion.delta.theta)?;
    for r in 0..3 {
        for c in 0..3 {
            out.write_f64::<LittleEndian>(f.motion.covariance[(r, c)])?;
        }
    }
    match &f.gps {
        Some(fix) => {
            out.write_u8(1)?;
            out.write_f64::<LittleEndian>(fix.position.x)?;
            out.write_f64::<LittleEndian>(fix.position.y)?;
            out.write_f64::<LittleEndian>(fix.timestamp)?;
        }
        None => out.write_u8(0)?,
    }
    encode_raster(out, &f.lane_obs)?;
    encode_raster(out, &f.sign_obs)?;
    Ok(())
}

fn encode_raster(out: &mut Vec<u8>, r: &Raster) -> Result<(), LogError> {
    out.write_f64::<LittleEndian>(r.origin.x)?;
    out.write_f64::<LittleEndian>(r.origin.y)?;
    out.write_f64::<LittleEndian>(r.resolution)?;
    out.write_u32::<LittleEndian>(r.width as u32)?;
    out.write_u32::<LittleEndian>(r.height as u32)?;
    for v in &r.values {
        out.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn decode_frame(body: &[u8], frame: usize) -> Result<ObservationFrame, LogError> {
    let mut cur = io::Cursor::new(body);
    let trunc = |_: io::Error| LogError::Truncated { frame };
    let timestamp = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let dx = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let dy = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let dth = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let mut cov = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            cov[(r, c)] = cur.read_f64::<LittleEndian>().map_err(trunc)?;
        }
    }
    let gps = match cur.read_u8().map_err(trunc)? {
        0 => None,
        1 => {
            let x = cur.read_f64::<LittleEndian>().map_err(trunc)?;
            let y = cur.read_f64::<LittleEndian>().map_err(trunc)?;
            let ts = cur.read_f64::<LittleEndian>().map_err(trunc)?;
            Some(GpsFix {
                position: Point2::new(x, y),
                timestamp: ts,
            })
        }
        other => {
            return Err(LogError::Malformed {
                frame,
                reason: format!("gps flag {other}"),
            })
        }
    };
    let lane_obs = decode_raster(&mut cur, frame)?;
    let sign_obs = decode_raster(&mut cur, frame)?;
    Ok(ObservationFrame {
        timestamp,
        motion: MotionIncrement {
            delta: Pose2::new(dx, dy, dth),
            covariance: cov,
        },
        gps,
        lane_obs,
        sign_obs,
    })
}

fn decode_raster(cur: &mut io::Cursor<&[u8]>, frame: usize) -> Result<Raster, LogError> {
    let trunc = |_: io::Error| LogError::Truncated { frame };
    let ox = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let oy = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let resolution = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let width = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let height = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let count = width.checked_mul(height).ok_or(LogError::Malformed {
        frame,
        reason: "raster dimensions overflow".into(),
    })?;
    let mut values = vec![0.0f64; count];
    for v in &mut values {
        *v = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    }
    Ok(Raster {
        origin: Point2::new(ox, oy),
        resolution,
        width,
        height,
        values,
    })
}

#[derive(Serialize)]
struct FrameSummary {
    frame: usize,
    timestamp: f64,
    delta: [f64; 3],
    gps: Option<[f64; 2]>,
    lane_cells: usize,
    lane_nonzero: usize,
    sign_nonzero: usize,
}

/// Writes a line-delimited JSON summary of a binary log: per-frame motion,
/// GPS, and raster occupancy. A debugging aid, not a lossless export.
pub fn export_text(log_path: &Path, out_path: &Path) -> Result<usize, LogError> {
    let mut out = BufWriter::new(File::create(out_path)?);
    let mut count = 0usize;
    for (i, frame) in LogReader::open(log_path)?.enumerate() {
        let f = frame?;
        let summary = FrameSummary {
            frame: i,
            timestamp: f.timestamp,
            delta: [f.motion.delta.x, f.motion.delta.y, f.motion.delta.theta],
            gps: f.gps.as_ref().map(|g| [g.position.x, g.position.y]),
            lane_cells: f.lane_obs.values.len(),
            lane_nonzero: f.lane_obs.count_nonzero(),
            sign_nonzero: f.sign_obs.count_nonzero(),
        };
        serde_json::to_writer(&mut out, &summary).map_err(|e| {
            LogError::Malformed {
                frame: i,
                reason: e.to_string(),
            }
        })?;
        out.write_all(b"\n")?;
        count += 1;
    }
    out.flush()?;
    Ok(count)
}
