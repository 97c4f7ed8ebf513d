//! Frame-stack files, CSV tables and atomic writes.
//!
//! Frame stacks (`.nvlf`) start with the magic `NVLF`, then little-endian
//! `version: u16, width: u16, height: u16, n_frames: u32, f_mod: f64,
//! n_cyc: u32`, followed by each frame's I plane and Q plane as row-major
//! `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::lockin::LockInFrame;

pub const MAGIC: &[u8; 4] = b"NVLF";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStackHeader {
    pub width: u16,
    pub height: u16,
    pub n_frames: u32,
    pub f_mod: f64,
    pub n_cyc: u32,
}

impl FrameStackHeader {
    pub fn frame_duration(&self) -> f64 {
        self.n_cyc as f64 / self.f_mod
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(e).context(format!("writing {}", path.display())))
}

pub fn encode_frames(header: &FrameStackHeader, frames: &[LockInFrame]) -> Result<Vec<u8>> {
    if frames.len() != header.n_frames as usize {
        return Err(Error::Input(format!(
            "header announces {} frames, {} given",
            header.n_frames,
            frames.len()
        )));
    }
    let plane = header.width as usize * header.height as usize;
    let mut buf = Vec::with_capacity(HEADER_LEN + frames.len() * plane * 16);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&header.width.to_le_bytes());
    buf.extend_from_slice(&header.height.to_le_bytes());
    buf.extend_from_slice(&header.n_frames.to_le_bytes());
    buf.extend_from_slice(&header.f_mod.to_le_bytes());
    buf.extend_from_slice(&header.n_cyc.to_le_bytes());
    let dim = (header.height as usize, header.width as usize);
    for f in frames {
        if f.i_plane.dim() != dim || f.q_plane.dim() != dim {
            return Err(Error::Input(format!(
                "frame {} has shape {:?}, header says {dim:?}",
                f.frame_index,
                f.i_plane.dim()
            )));
        }
        for plane in [&f.i_plane, &f.q_plane] {
            for v in plane.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn write_frames(path: &Path, header: &FrameStackHeader, frames: &[LockInFrame]) -> Result<()> {
    write_atomic(path, &encode_frames(header, frames)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice has length N"))
    }
}

pub fn decode_frames(bytes: &[u8]) -> Result<(FrameStackHeader, Vec<LockInFrame>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if &c.take::<4>()? != MAGIC {
        return Err(Error::Format("missing NVLF magic".into()));
    }
    let version = u16::from_le_bytes(c.take()?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header = FrameStackHeader {
        width: u16::from_le_bytes(c.take()?),
        height: u16::from_le_bytes(c.take()?),
        n_frames: u32::from_le_bytes(c.take()?),
        f_mod: f64::from_le_bytes(c.take()?),
        n_cyc: u32::from_le_bytes(c.take()?),
    };
    let (h, w) = (header.height as usize, header.width as usize);
    let expected = HEADER_LEN + header.n_frames as usize * h * w * 16;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {} frames of {w}x{h}, found {}",
            header.n_frames,
            bytes.len()
        )));
    }
    let duration = header.frame_duration();
    let mut frames = Vec::with_capacity(header.n_frames as usize);
    for k in 0..header.n_frames as usize {
        let mut plane = || -> Result<Array2<f64>> {
            let mut data = Vec::with_capacity(h * w);
            for _ in 0..h * w {
                data.push(f64::from_le_bytes(c.take()?));
            }
            Ok(Array2::from_shape_vec((h, w), data).expect("length matches shape"))
        };
        let i_plane = plane()?;
        let q_plane = plane()?;
        frames.push(LockInFrame {
            i_plane,
            q_plane,
            frame_index: k,
            timestamp: k as f64 * duration,
        });
    }
    Ok((header, frames))
}

pub fn read_frames(path: &Path) -> Result<(FrameStackHeader, Vec<LockInFrame>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    decode_frames(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
}

/// Formats with 17 significant digits so values survive a text round trip.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Builds a CSV table in memory.
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(csv_error)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        self.writer
            .write_record(values.iter().map(|v| fmt_num(*v)))
            .map_err(csv_error)
    }

    /// Row whose leading columns are integers (pixel indices, bin numbers).
    pub fn indexed_row(&mut self, index: &[usize], values: &[f64]) -> Result<()> {
        let fields = index
            .iter()
            .map(|i| i.to_string())
            .chain(values.iter().map(|v| fmt_num(*v)));
        self.writer.write_record(fields).map_err(csv_error)
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        self.writer
            .into_inner()
            .map_err(|e| Error::Input(format!("flushing CSV: {e}")))
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes()?)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Input(format!("CSV: {e}"))
}

/// Reads a numeric table; a first row that does not parse is taken as a
/// header. Each row must have `columns` fields.
pub fn read_numeric_csv(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() == columns => rows.push(v),
            Ok(v) => {
                return Err(Error::Input(format!(
                    "{} line {}: expected {columns} columns, found {}",
                    path.display(),
                    k + 1,
                    v.len()
                )))
            }
            Err(_) if k == 0 => continue,
            Err(e) => {
                return Err(Error::Input(format!("{} line {}: {e}", path.display(), k + 1)));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize, w: usize, h: usize) -> Vec<LockInFrame> {
        (0..n)
            .map(|k| LockInFrame {
                i_plane: Array2::from_shape_fn((h, w), |(y, x)| (k * 100 + y * w + x) as f64 * 0.1 - 3.3),
                q_plane: Array2::from_shape_fn((h, w), |(y, x)| f64::from_bits((k + y + x) as u64 * 0x1234_5678_9ABC)),
                frame_index: k,
                timestamp: k as f64 * 8.8e-3,
            })
            .collect()
    }

    #[test]
    fn frame_stack_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nvlf");
        let fs_ = frames(3, 4, 2);
        let header = FrameStackHeader { width: 4, height: 2, n_frames: 3, f_mod: 2.5e3, n_cyc: 22 };
        write_frames(&path, &header, &fs_).unwrap();
        let (h2, back) = read_frames(&path).unwrap();
        assert_eq!(h2, header);
        for (a, b) in fs_.iter().zip(&back) {
            assert!(a.i_plane.iter().zip(&b.i_plane).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.q_plane.iter().zip(&b.q_plane).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(a.frame_index, b.frame_index);
            assert!((a.timestamp - b.timestamp).abs() < 1e-15);
        }
    }

    #[test]
    fn header_layout() {
        let header = FrameStackHeader { width: 1, height: 1, n_frames: 1, f_mod: 10e3, n_cyc: 4 };
        let bytes = encode_frames(&header, &frames(1, 1, 1)).unwrap();
        assert_eq!(&bytes[..4], b"NVLF");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(f64::from_le_bytes(bytes[14..22].try_into().unwrap()), 10e3);
        assert_eq!(bytes.len(), HEADER_LEN + 16);
    }

    #[test]
    fn corrupt_stacks_are_rejected() {
        let header = FrameStackHeader { width: 2, height: 2, n_frames: 2, f_mod: 1.0, n_cyc: 1 };
        let bytes = encode_frames(&header, &frames(2, 2, 2)).unwrap();
        assert!(matches!(decode_frames(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frames(&bad), Err(Error::Format(_))));
        assert!(encode_frames(&header, &frames(1, 2, 2)).is_err());
    }

    #[test]
    fn csv_numbers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let vals = [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324];
        let mut t = CsvTable::new(&["a", "b", "c", "d"]).unwrap();
        t.row(&vals).unwrap();
        t.write_to(&path).unwrap();
        let rows = read_numeric_csv(&path, 4).unwrap();
        assert_eq!(rows, vec![vals.to_vec()]);
        assert_eq!(fmt_num(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
