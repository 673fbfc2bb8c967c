//! Multi-sensor recordings and their on-disk formats.
//!
//! The binary format is `NRC1`, a `u32` sensor count, a `u64` sample count,
//! an `f64` sampling rate, then `f32` little-endian samples in sensor-major
//! order. All header fields are little-endian. A CSV form with an
//! `# fs=<rate>` comment line and one column per sensor exists for small
//! fixtures.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NRC1";

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralRecording {
    pub subject: String,
    pub sensors: Vec<String>,
    /// Sensors × samples.
    pub data: Array2<f64>,
    pub fs: f64,
}

fn default_sensor_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

impl NeuralRecording {
    pub fn new(subject: impl Into<String>, data: Array2<f64>, fs: f64) -> Result<Self> {
        let sensors = default_sensor_names(data.nrows());
        Self::with_sensors(subject, sensors, data, fs)
    }

    pub fn with_sensors(
        subject: impl Into<String>,
        sensors: Vec<String>,
        data: Array2<f64>,
        fs: f64,
    ) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "recording needs at least one sensor".into(),
            ));
        }
        if sensors.len() != data.nrows() {
            return Err(Error::Shape(format!(
                "{} sensor names for {} sensors",
                sensors.len(),
                data.nrows()
            )));
        }
        if let Some(((s, t), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at sensor {s}, sample {t}"
            )));
        }
        Ok(Self {
            subject: subject.into(),
            sensors,
            data,
            fs,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn write_nrc<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(MAGIC)?;
        w.write_all(&(self.n_sensors() as u32).to_le_bytes())?;
        w.write_all(&(self.n_samples() as u64).to_le_bytes())?;
        w.write_all(&self.fs.to_le_bytes())?;
        for v in self.data.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_nrc<R: Read>(r: R, subject: &str, source: &str) -> Result<Self> {
        let mut r = BufReader::new(r);
        let bad = |m: String| Error::load(source, m);
        let mut header = [0u8; 24];
        r.read_exact(&mut header)
            .map_err(|e| bad(format!("truncated header: {e}")))?;
        if &header[..4] != MAGIC {
            return Err(bad("missing NRC1 magic".into()));
        }
        let s = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let t = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
        let fs = f64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
        let n = s
            .checked_mul(t)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad(format!("header sizes overflow: {s} × {t}")))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(|e| bad(e.to_string()))?;
        if body.len() != n {
            return Err(bad(format!(
                "expected {n} data bytes for {s} × {t} samples, found {}",
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let data = Array2::from_shape_vec((s, t), values).map_err(|e| bad(e.to_string()))?;
        Self::new(subject, data, fs).map_err(|e| bad(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let io = |e: std::io::Error| Error::Numerical(e.to_string());
        writeln!(w, "# fs={}", self.fs).map_err(io)?;
        writeln!(w, "{}", self.sensors.join(",")).map_err(io)?;
        for t in 0..self.n_samples() {
            let row: Vec<String> = self
                .data
                .column(t)
                .iter()
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv<R: Read>(r: R, subject: &str, source: &str) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let mut next = || -> Result<Option<(usize, String)>> {
            match lines.next() {
                None => Ok(None),
                Some((i, l)) => l
                    .map(|l| Some((i + 1, l)))
                    .map_err(|e| Error::load(source, e.to_string())),
            }
        };
        let (_, first) = next()?.ok_or_else(|| Error::load(source, "empty recording file"))?;
        let fs: f64 = first
            .strip_prefix("# fs=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::load(format!("{source}:1"), "expected '# fs=<rate>'"))?;
        let (_, header) = next()?.ok_or_else(|| Error::load(source, "missing sensor header"))?;
        let sensors: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut values = Vec::new();
        let mut n = 0usize;
        while let Some((line_no, line)) = next()? {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<&str> = line.split(',').collect();
            if row.len() != sensors.len() {
                return Err(Error::load(
                    format!("{source}:{line_no}"),
                    format!("expected {} values, found {}", sensors.len(), row.len()),
                ));
            }
            for v in row {
                values.push(v.trim().parse::<f64>().map_err(|e| {
                    Error::load(format!("{source}:{line_no}"), format!("{v:?}: {e}"))
                })?);
            }
            n += 1;
        }
        let data = Array2::from_shape_vec((n, sensors.len()), values)
            .map_err(|e| Error::load(source, e.to_string()))?
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
        Self::with_sensors(subject, sensors, data, fs)
            .map_err(|e| Error::load(source, e.to_string()))
    }

    /// Loads either format; `.csv` files are read as CSV, everything else as NRC1.
    /// The subject id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let subject = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("subject");
        let source = path.display().to_string();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            Self::read_csv(file, subject, &source)
        } else {
            Self::read_nrc(file, subject, &source)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            self.write_csv(file)
        } else {
            self.write_nrc(file).map_err(|e| Error::io(path, e))
        }
    }
}
