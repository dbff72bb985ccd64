use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};

const FRAME_MAGIC: &[u8; 4] = b"RFRM";
pub const CSV_HEADER: &str = "x,y,z,rcs,rrv";

/// One radar return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    /// meters, sensor frame
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// radar cross section, dBsm
    pub rcs: f64,
    /// radial relative velocity, m/s (negative = closing)
    pub rrv: f64,
}

impl RadarPoint {
    pub fn xyz(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.rcs, self.rrv]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// A timestamped radar scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub id: u64,
    pub points: Vec<RadarPoint>,
    /// Absolute sensor pose, when ground truth is known.
    pub gt_pose: Option<Pose>,
}

impl Frame {
    pub fn new(id: u64, points: Vec<RadarPoint>) -> Self {
        Frame {
            id,
            points,
            gt_pose: None,
        }
    }

    pub fn xyz(&self) -> Vec<Vec3> {
        self.points.iter().map(RadarPoint::xyz).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{}", p.x, p.y, p.z, p.rcs, p.rrv)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(id: u64, r: R, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_owned(),
            line,
            msg,
        };
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == CSV_HEADER => {}
            Some((_, Ok(h))) => return Err(perr(1, format!("expected header `{CSV_HEADER}`, got `{h}`"))),
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(perr(1, "missing header".into())),
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(i + 1, e.to_string()))?;
            if vals.len() != 5 {
                return Err(perr(i + 1, format!("expected 5 fields, got {}", vals.len())));
            }
            let p = RadarPoint {
                x: vals[0],
                y: vals[1],
                z: vals[2],
                rcs: vals[3],
                rrv: vals[4],
            };
            if !p.is_finite() {
                return Err(perr(i + 1, "non-finite value".into()));
            }
            points.push(p);
        }
        Ok(Frame::new(id, points))
    }

    /// Binary layout: `RFRM`, u32 count, then `count x 5` little-endian f32.
    pub fn write_bin<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FRAME_MAGIC)?;
        w.write_all(&(self.points.len() as u32).to_le_bytes())?;
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.rcs, p.rrv] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_bin<R: Read>(id: u64, mut r: R, path: &Path) -> Result<Self> {
        let perr = |msg: String| Error::Parse {
            path: path.to_owned(),
            line: 0,
            msg,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| perr(format!("header: {e}")))?;
        if &magic != FRAME_MAGIC {
            return Err(perr(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)
            .map_err(|e| perr(format!("count: {e}")))?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut points = Vec::with_capacity(count);
        for i in 0..count {
            let mut v = [0f64; 5];
            for slot in v.iter_mut() {
                r.read_exact(&mut b4)
                    .map_err(|e| perr(format!("point {i}: {e}")))?;
                *slot = f32::from_le_bytes(b4) as f64;
            }
            let p = RadarPoint {
                x: v[0],
                y: v[1],
                z: v[2],
                rcs: v[3],
                rrv: v[4],
            };
            if !p.is_finite() {
                return Err(perr(format!("point {i}: non-finite value")));
            }
            points.push(p);
        }
        Ok(Frame::new(id, points))
    }

    /// Reads a frame, choosing the format from the extension (`.csv` or `.bin`).
    pub fn load(id: u64, path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let r = std::io::BufReader::new(f);
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Frame::read_bin(id, r, path),
            _ => Frame::read_csv(id, r, path),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => self.write_bin(&mut w)?,
            _ => self.write_csv(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(id: u64) -> Frame {
        let points = (0..7)
            .map(|i| {
                let f = i as f64;
                RadarPoint {
                    x: 1.0 / (f + 3.0),
                    y: -f * 0.1,
                    z: 1e-7 * f,
                    rcs: 12.345 - f,
                    rrv: -3.0 + f / 7.0,
                }
            })
            .collect();
        Frame::new(id, points)
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let f = fixture(4);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = Frame::read_csv(4, &buf[..], Path::new("m.csv")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn csv_and_binary_agree_on_f32_values() {
        let mut f = fixture(1);
        for p in &mut f.points {
            p.x = p.x as f32 as f64;
            p.y = p.y as f32 as f64;
            p.z = p.z as f32 as f64;
            p.rcs = p.rcs as f32 as f64;
            p.rrv = p.rrv as f32 as f64;
        }
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        let mut bin = Vec::new();
        f.write_bin(&mut bin).unwrap();
        assert_eq!(bin.len(), 8 + 7 * 20);
        let a = Frame::read_csv(1, &csv[..], Path::new("a.csv")).unwrap();
        let b = Frame::read_bin(1, &bin[..], Path::new("a.bin")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_rows_report_file_and_line() {
        let text = "x,y,z,rcs,rrv\n1,2,3,4,5\n1,2,3,4\n";
        let err = Frame::read_csv(0, text.as_bytes(), Path::new("f.csv")).unwrap_err();
        assert_eq!(err.to_string(), "f.csv:3: expected 5 fields, got 4");
        let text = "x,y,z,rcs,rrv\n1,2,nope,4,5\n";
        let err = Frame::read_csv(0, text.as_bytes(), Path::new("f.csv")).unwrap_err();
        assert!(err.to_string().starts_with("f.csv:2:"));
        let err = Frame::read_bin(0, &b"RFRX\0\0\0\0"[..], Path::new("f.bin")).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }
}
