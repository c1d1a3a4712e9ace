//! Series datasets, CSV ingestion, windowing, splitting and normalization.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Driving series plus a target series of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub names: Vec<String>,
    pub target_name: String,
    /// One vector of length `L` per driving series.
    pub driving: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl SeriesDataset {
    pub fn new(
        names: Vec<String>,
        target_name: String,
        driving: Vec<Vec<f64>>,
        target: Vec<f64>,
    ) -> Result<Self> {
        if names.len() != driving.len() {
            return Err(Error::Data(format!(
                "{} names for {} driving series",
                names.len(),
                driving.len()
            )));
        }
        if let Some(bad) = driving.iter().position(|d| d.len() != target.len()) {
            return Err(Error::Data(format!(
                "driving series {} has {} rows, target has {}",
                names[bad],
                driving[bad].len(),
                target.len()
            )));
        }
        Ok(SeriesDataset {
            names,
            target_name,
            driving,
            target,
        })
    }

    /// Number of time steps `L`.
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Number of driving series `n`.
    pub fn drivers(&self) -> usize {
        self.driving.len()
    }

    /// Rows `range` of every series.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SeriesDataset {
        SeriesDataset {
            names: self.names.clone(),
            target_name: self.target_name.clone(),
            driving: self
                .driving
                .iter()
                .map(|d| d[range.clone()].to_vec())
                .collect(),
            target: self.target[range].to_vec(),
        }
    }

    /// Stride-1 windows of length `window`: window `j` covers rows
    /// `j..j + window`, its label is the target at the last of those rows.
    /// Produces exactly `L - window` windows.
    pub fn windows(&self, window: usize) -> Result<Batch> {
        let (l, n) = (self.len(), self.drivers());
        if window < 2 || l < window + 1 {
            return Err(Error::Data(format!(
                "{l} rows cannot hold windows of length {window} (need at least {})",
                window + 1
            )));
        }
        let count = l - window;
        let mut x = Vec::with_capacity(count * window * n);
        let mut y = Vec::with_capacity(count * window);
        for j in 0..count {
            for t in j..j + window {
                x.extend(self.driving.iter().map(|d| d[t]));
                y.push(self.target[t]);
            }
        }
        Batch::new(x, y, count, window, n)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<&str> = self
            .names
            .iter()
            .map(String::as_str)
            .chain([self.target_name.as_str()])
            .collect();
        out.write_record(&header).map_err(csv_io)?;
        for t in 0..self.len() {
            let row: Vec<String> = self
                .driving
                .iter()
                .map(|d| d[t])
                .chain([self.target[t]])
                .map(|v| format!("{v:?}"))
                .collect();
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// Reads a headed numeric CSV; `target` names the target column and every
/// other column becomes a driving series, in file order.
pub fn load_csv(path: &Path, target: &str) -> Result<SeriesDataset> {
    read_csv(std::fs::File::open(path)?, target)
}

pub fn read_csv<R: Read>(input: R, target: &str) -> Result<SeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv {
            row: 0,
            column: String::new(),
            msg: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_col = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Csv {
            row: 0,
            column: target.to_string(),
            msg: format!("target column not found in header {header:?}"),
        })?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Csv {
            row,
            column: String::new(),
            msg: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Csv {
                row,
                column: String::new(),
                msg: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            let value = if field.is_empty() {
                Err("empty cell".to_string())
            } else {
                field
                    .parse::<f64>()
                    .map_err(|_| format!("cannot parse `{field}` as a number"))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(format!("non-finite value `{field}`"))
                        }
                    })
            };
            columns[c].push(value.map_err(|msg| Error::Csv {
                row,
                column: header[c].clone(),
                msg,
            })?);
        }
    }
    let target_values = columns.remove(target_col);
    let mut names = header;
    let target_name = names.remove(target_col);
    SeriesDataset::new(names, target_name, columns, target_values)
}

/// Chronological split at `floor(fraction * L)`.
pub fn split_train_test(
    ds: &SeriesDataset,
    fraction: f64,
    window: usize,
) -> Result<(SeriesDataset, SeriesDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(
            "split",
            format!("fraction must be in (0, 1), got {fraction}"),
        ));
    }
    let l = ds.len();
    let cut = (fraction * l as f64).floor() as usize;
    if cut < window + 1 || l - cut < window + 1 {
        return Err(Error::invalid(
            "split",
            format!(
                "splitting {l} rows at {cut} leaves fewer than {} rows on one side",
                window + 1
            ),
        ));
    }
    Ok((ds.slice(0..cut), ds.slice(cut..l)))
}

/// Fixed-length windows stored as `x: [N, T, n]`, `y: [N, T]`; the last
/// target of each window is its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    x: Vec<f64>,
    y: Vec<f64>,
    windows: usize,
    window: usize,
    drivers: usize,
}

impl Batch {
    pub fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        windows: usize,
        window: usize,
        drivers: usize,
    ) -> Result<Self> {
        if x.len() != windows * window * drivers || y.len() != windows * window {
            return Err(Error::ShapeMismatch {
                op: "batch",
                lhs: vec![x.len(), y.len()],
                rhs: vec![windows * window * drivers, windows * window],
            });
        }
        Ok(Batch {
            x,
            y,
            windows,
            window,
            drivers,
        })
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    /// Driving values at step `t` of every window, `[N, n]`.
    pub fn x_step(&self, t: usize) -> Vec<f64> {
        let (w, n) = (self.window, self.drivers);
        (0..self.windows)
            .flat_map(|i| self.x[(i * w + t) * n..(i * w + t + 1) * n].iter().copied())
            .collect()
    }

    /// Target at step `t` of every window.
    pub fn y_step(&self, t: usize) -> Vec<f64> {
        (0..self.windows)
            .map(|i| self.y[i * self.window + t])
            .collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.y_step(self.window - 1)
    }

    /// Every driving series over the window, `[N * n, T]` with row
    /// `i * n + k` holding series `k` of window `i`.
    pub fn series_rows(&self) -> Vec<f64> {
        let (w, n) = (self.window, self.drivers);
        let mut out = Vec::with_capacity(self.x.len());
        for i in 0..self.windows {
            for k in 0..n {
                out.extend((0..w).map(|t| self.x[(i * w + t) * n + k]));
            }
        }
        out
    }

    /// Windows `index`, in that order.
    pub fn select(&self, index: &[usize]) -> Batch {
        let (w, n) = (self.window, self.drivers);
        let mut x = Vec::with_capacity(index.len() * w * n);
        let mut y = Vec::with_capacity(index.len() * w);
        for &i in index {
            x.extend_from_slice(&self.x[i * w * n..(i + 1) * w * n]);
            y.extend_from_slice(&self.y[i * w..(i + 1) * w]);
        }
        Batch {
            x,
            y,
            windows: index.len(),
            window: w,
            drivers: n,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Zscore,
    Minmax,
    None,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(Normalization::Zscore),
            "minmax" => Ok(Normalization::Minmax),
            "none" => Ok(Normalization::None),
            _ => Err(Error::invalid(
                "normalization",
                format!("unknown mode `{s}` (expected zscore, minmax or none)"),
            )),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Zscore => "zscore",
            Normalization::Minmax => "minmax",
            Normalization::None => "none",
        })
    }
}

/// `normalized = (raw - shift) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        shift: 0.0,
        scale: 1.0,
    };

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.scale + self.shift
    }
}

/// Per-column statistics fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mode: Normalization,
    pub drivers: Vec<Affine>,
    pub target: Affine,
    pub warnings: Vec<String>,
}

impl Scaler {
    pub fn fit(train: &SeriesDataset, mode: Normalization) -> Scaler {
        let mut warnings = Vec::new();
        let mut fit_col = |name: &str, v: &[f64]| fit_column(name, v, mode, &mut warnings);
        let drivers = train
            .names
            .iter()
            .zip(&train.driving)
            .map(|(n, d)| fit_col(n, d))
            .collect();
        let target = fit_col(&train.target_name, &train.target);
        for w in &warnings {
            log::warn!("{w}");
        }
        Scaler {
            mode,
            drivers,
            target,
            warnings,
        }
    }

    pub fn apply(&self, ds: &SeriesDataset) -> Result<SeriesDataset> {
        if ds.drivers() != self.drivers.len() {
            return Err(Error::Data(format!(
                "scaler fitted on {} driving series, dataset has {}",
                self.drivers.len(),
                ds.drivers()
            )));
        }
        let driving = ds
            .driving
            .iter()
            .zip(&self.drivers)
            .map(|(d, a)| d.iter().map(|v| a.forward(*v)).collect())
            .collect();
        let target = ds.target.iter().map(|v| self.target.forward(*v)).collect();
        SeriesDataset::new(ds.names.clone(), ds.target_name.clone(), driving, target)
    }

    pub fn invert(&self, ds: &SeriesDataset) -> Result<SeriesDataset> {
        let driving = ds
            .driving
            .iter()
            .zip(&self.drivers)
            .map(|(d, a)| d.iter().map(|v| a.inverse(*v)).collect())
            .collect();
        let target = ds.target.iter().map(|v| self.target.inverse(*v)).collect();
        SeriesDataset::new(ds.names.clone(), ds.target_name.clone(), driving, target)
    }
}

fn fit_column(name: &str, v: &[f64], mode: Normalization, warnings: &mut Vec<String>) -> Affine {
    match mode {
        Normalization::None => Affine::IDENTITY,
        Normalization::Zscore => {
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 0.0 {
                Affine {
                    shift: mean,
                    scale: std,
                }
            } else {
                warnings.push(format!("column {name} has zero variance; using scale 1"));
                Affine {
                    shift: mean,
                    scale: 1.0,
                }
            }
        }
        Normalization::Minmax => {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                Affine {
                    shift: lo,
                    scale: hi - lo,
                }
            } else {
                warnings.push(format!("column {name} is constant; using scale 1"));
                Affine {
                    shift: if lo.is_finite() { lo } else { 0.0 },
                    scale: 1.0,
                }
            }
        }
    }
}

/// Fits on `train` only and applies to both sides.
pub fn normalize(
    train: &SeriesDataset,
    test: &SeriesDataset,
    mode: Normalization,
) -> Result<(SeriesDataset, SeriesDataset, Scaler)> {
    let scaler = Scaler::fit(train, mode);
    Ok((scaler.apply(train)?, scaler.apply(test)?, scaler))
}
