use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One scan: an `n×L` ROI time-series matrix with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSample<T> {
    pub scan_id: String,
    pub subject_id: String,
    pub label: usize,
    pub series: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRecord {
    pub id: String,
    pub subject: String,
    /// Class name; must appear in the manifest's class list.
    pub label: String,
    /// Series file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub n_rois: usize,
    pub series_len: usize,
    pub scans: Vec<ScanRecord>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Accept unequal series lengths by truncating every scan to the shortest.
    pub truncate_to_min: bool,
}

/// Samples in ascending `scan_id` order, with the effective series length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    pub samples: Vec<ScanSample<T>>,
    pub series_len: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn inputs(&self) -> Vec<Tensor<T>> {
        self.samples.iter().map(|s| s.series.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Reads a series file: one comma-separated row per ROI, one column per time point.
pub fn read_series<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let rows = read_numeric_rows(path, false)?;
    let width = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().position(|r| r.len() != width) {
        return Err(Error::Format(format!(
            "{}: row {} has {} values, row 1 has {width}",
            path.display(),
            r + 1,
            rows[r].len()
        )));
    }
    let data = rows.into_iter().flatten().map(T::of).collect::<Vec<_>>();
    Tensor::new(vec![data.len().checked_div(width).unwrap_or(0), width], data)
}

/// Writes a series file with 17 significant digits per value.
pub fn write_series<T: Scalar>(series: &Tensor<T>, path: &Path) -> Result<()> {
    let (n, _) = series.dims2()?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for i in 0..n {
        w.write_record(series.row(i).iter().map(|v| format!("{:.16e}", v.as_f64())))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}

/// Parses every record of a comma-separated numeric file, skipping the header if asked.
pub(crate) fn read_numeric_rows(path: &Path, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<f64>().map_err(|e| {
                    Error::Format(format!("{}: record {}: bad number `{cell}`: {e}", path.display(), r + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Loads and validates every scan referenced by the manifest at `manifest_path`.
///
/// Errors name the offending scan id. Samples are returned sorted by scan id.
pub fn load_dataset<T: Scalar>(manifest_path: &Path, options: LoadOptions) -> Result<Dataset<T>> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.scans.len());
    for rec in &manifest.scans {
        let label = manifest.class_index(&rec.label).ok_or_else(|| {
            Error::load(
                &rec.id,
                format!("unknown label `{}` (classes {:?})", rec.label, manifest.classes),
            )
        })?;
        let path = base.join(&rec.path);
        let series: Tensor<T> = read_series(&path).map_err(|e| Error::load(&rec.id, e.to_string()))?;
        let (n, len) = series.dims2()?;
        if n != manifest.n_rois {
            return Err(Error::load(
                &rec.id,
                format!("{n} ROI rows, manifest says n_rois = {}", manifest.n_rois),
            ));
        }
        if len != manifest.series_len && !options.truncate_to_min {
            return Err(Error::load(
                &rec.id,
                format!("{len} time points, manifest says series_len = {}", manifest.series_len),
            ));
        }
        if !series.is_finite() {
            return Err(Error::load(&rec.id, "series contains NaN or infinite values"));
        }
        samples.push(ScanSample {
            scan_id: rec.id.clone(),
            subject_id: rec.subject.clone(),
            label,
            series,
        });
    }
    samples.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    if let Some(w) = samples.windows(2).find(|w| w[0].scan_id == w[1].scan_id) {
        return Err(Error::load(&w[0].scan_id, "duplicate scan id"));
    }
    let series_len = if options.truncate_to_min {
        let shortest = samples.iter().map(|s| s.series.shape()[1]).min().unwrap_or(manifest.series_len);
        for s in &mut samples {
            s.series = truncate(&s.series, shortest)?;
        }
        shortest
    } else {
        manifest.series_len
    };
    Ok(Dataset {
        manifest,
        samples,
        series_len,
    })
}

fn truncate<T: Scalar>(x: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    let (n, _) = x.dims2()?;
    let data = (0..n).flat_map(|i| x.row(i)[..len].iter().copied()).collect();
    Tensor::new(vec![n, len], data)
}

/// Writes series files under `dir/series/` and the manifest at `dir/manifest.json`.
pub fn save_dataset<T: Scalar>(dir: &Path, classes: &[String], samples: &[ScanSample<T>]) -> Result<PathBuf> {
    let series_dir = dir.join("series");
    fs::create_dir_all(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
    let (n_rois, series_len) = match samples.first() {
        Some(s) => s.series.dims2()?,
        None => (0, 0),
    };
    let mut scans = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = PathBuf::from("series").join(format!("{}.csv", s.scan_id));
        write_series(&s.series, &dir.join(&rel))?;
        scans.push(ScanRecord {
            id: s.scan_id.clone(),
            subject: s.subject_id.clone(),
            label: classes
                .get(s.label)
                .cloned()
                .ok_or_else(|| Error::Contract(format!("label {} has no class name", s.label)))?,
            path: rel,
        });
    }
    let manifest = DatasetManifest {
        classes: classes.to_vec(),
        n_rois,
        series_len,
        scans,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}
