//! On-disk dataset layout.
//!
//! ```text
//! <root>/meta.csv             sample_id,subject_id,label,n_frames,fps,ps_rate,onset_s,offset_s
//! <root>/<sample_id>/colour.ten   [F,3,H,W]
//! <root>/<sample_id>/depth.ten    [F,1,H,W]
//! <root>/<sample_id>/ps.csv       t,eda,ecg,ppg
//! ```
//!
//! Floats are written in shortest round-trip form so save then load is
//! bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use psme_core::data::{Dataset, FrameStack, MeSample, PreparedSample, SignalClip};
use psme_core::signal::SegmentConfig;

use crate::{tenfile, IoError};

pub const META_FILE: &str = "meta.csv";
pub const META_HEADER: [&str; 8] = ["sample_id", "subject_id", "label", "n_frames", "fps", "ps_rate", "onset_s", "offset_s"];
pub const PS_HEADER: [&str; 4] = ["t", "eda", "ecg", "ppg"];

/// One row of `meta.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaRow {
    pub sample_id: String,
    pub subject_id: String,
    pub label: usize,
    pub n_frames: usize,
    pub fps: f64,
    pub ps_rate: f64,
    pub onset_s: f64,
    pub offset_s: f64,
}

impl MetaRow {
    pub fn of(s: &MeSample) -> Self {
        MetaRow {
            sample_id: s.sample_id.clone(),
            subject_id: s.subject_id.clone(),
            label: s.label,
            n_frames: s.frames.frames(),
            fps: s.fps,
            ps_rate: s.signals.sample_rate,
            onset_s: s.onset_s,
            offset_s: s.offset_s,
        }
    }

    fn record(&self) -> [String; 8] {
        [
            self.sample_id.clone(),
            self.subject_id.clone(),
            self.label.to_string(),
            self.n_frames.to_string(),
            self.fps.to_string(),
            self.ps_rate.to_string(),
            self.onset_s.to_string(),
            self.offset_s.to_string(),
        ]
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IoError::io(path, io),
        kind => IoError::Csv {
            path: path.to_path_buf(),
            line,
            msg: format!("{:?}", kind),
        },
    }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let found = rdr.headers().map_err(|e| csv_err(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(IoError::Csv {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("header is `{}`, expected `{}`", found.iter().collect::<Vec<_>>().join(","), header.join(",")),
        });
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, IoError> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let raw = rec.get(i).ok_or_else(|| IoError::Csv {
        path: path.to_path_buf(),
        line,
        msg: format!("missing column `{}`", name),
    })?;
    raw.trim().parse().map_err(|_| IoError::Csv {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse `{}` as {}", raw, name),
    })
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_meta(root: &Path, rows: &[MetaRow]) -> Result<(), IoError> {
    write_csv(&root.join(META_FILE), &META_HEADER, rows.iter().map(|r| r.record().to_vec()))
}

pub fn read_meta(root: &Path) -> Result<Vec<MetaRow>, IoError> {
    let path = root.join(META_FILE);
    let mut rdr = open_csv(&path, &META_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        rows.push(MetaRow {
            sample_id: field(&path, &rec, 0, "sample_id")?,
            subject_id: field(&path, &rec, 1, "subject_id")?,
            label: field(&path, &rec, 2, "label")?,
            n_frames: field(&path, &rec, 3, "n_frames")?,
            fps: field(&path, &rec, 4, "fps")?,
            ps_rate: field(&path, &rec, 5, "ps_rate")?,
            onset_s: field(&path, &rec, 6, "onset_s")?,
            offset_s: field(&path, &rec, 7, "offset_s")?,
        });
    }
    Ok(rows)
}

pub fn write_signals(path: &Path, clip: &SignalClip) -> Result<(), IoError> {
    let t: Vec<f64> = (0..clip.len()).map(|i| i as f64 / clip.sample_rate).collect();
    write_signal_table(path, &t, &clip.channels)
}

/// Reads the `t` column and the three channels of a signal CSV as stored.
pub fn read_signal_table(path: &Path) -> Result<(Vec<f64>, [Vec<f64>; 3]), IoError> {
    let mut rdr = open_csv(path, &PS_HEADER)?;
    let mut t = Vec::new();
    let mut ch: [Vec<f64>; 3] = Default::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        t.push(field(path, &rec, 0, "t")?);
        for (c, name) in PS_HEADER[1..].iter().enumerate() {
            ch[c].push(field(path, &rec, c + 1, name)?);
        }
    }
    Ok((t, ch))
}

/// Reads a signal CSV. The clock comes from `rate`, not the `t` column.
pub fn read_signals(path: &Path, rate: f64) -> Result<SignalClip, IoError> {
    let (_, ch) = read_signal_table(path)?;
    SignalClip::new(rate, ch).map_err(|e| IoError::Mismatch {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_signal_table(path: &Path, t: &[f64], ch: &[Vec<f64>; 3]) -> Result<(), IoError> {
    let rows = (0..t.len()).map(|i| vec![t[i].to_string(), ch[0][i].to_string(), ch[1][i].to_string(), ch[2][i].to_string()]);
    write_csv(path, &PS_HEADER, rows)
}

pub fn sample_dir(root: &Path, sample_id: &str) -> PathBuf {
    root.join(sample_id)
}

/// Writes the sample's directory under `root` and returns its meta row.
pub fn save_sample(root: &Path, s: &MeSample) -> Result<MetaRow, IoError> {
    let dir = sample_dir(root, &s.sample_id);
    fs::create_dir_all(&dir).map_err(|e| IoError::io(&dir, e))?;
    tenfile::write(&dir.join("colour.ten"), s.frames.colour())?;
    tenfile::write(&dir.join("depth.ten"), s.frames.depth())?;
    write_signals(&dir.join("ps.csv"), &s.signals)?;
    Ok(MetaRow::of(s))
}

pub fn load_sample(root: &Path, row: &MetaRow) -> Result<MeSample, IoError> {
    let dir = sample_dir(root, &row.sample_id);
    let colour = tenfile::read(&dir.join("colour.ten"))?;
    let depth = tenfile::read(&dir.join("depth.ten"))?;
    if colour.shape().first() != Some(&row.n_frames) {
        return Err(IoError::Mismatch {
            path: dir.join("colour.ten"),
            msg: format!("shape {:?} but meta.csv says {} frames", colour.shape(), row.n_frames),
        });
    }
    let frames = FrameStack::new(colour, depth).map_err(|e| IoError::Mismatch {
        path: dir.clone(),
        msg: e.to_string(),
    })?;
    let signals = read_signals(&dir.join("ps.csv"), row.ps_rate)?;
    Ok(MeSample {
        sample_id: row.sample_id.clone(),
        subject_id: row.subject_id.clone(),
        label: row.label,
        fps: row.fps,
        frames,
        signals,
        onset_s: row.onset_s,
        offset_s: row.offset_s,
    })
}

pub fn save_dataset(root: &Path, samples: &[MeSample]) -> Result<(), IoError> {
    fs::create_dir_all(root).map_err(|e| IoError::io(root, e))?;
    let rows = samples.iter().map(|s| save_sample(root, s)).collect::<Result<Vec<_>, _>>()?;
    write_meta(root, &rows)
}

pub fn load_samples(root: &Path) -> Result<Vec<MeSample>, IoError> {
    read_meta(root)?.iter().map(|r| load_sample(root, r)).collect()
}

/// Segments every sample's signals. The class count is `1 + max label`
/// unless given.
pub fn prepare(samples: &[MeSample], seg: &SegmentConfig, num_classes: Option<usize>) -> Result<Dataset, IoError> {
    let prepared = samples
        .iter()
        .map(|s| PreparedSample::from_sample(s, seg))
        .collect::<Result<Vec<_>, _>>()?;
    let classes = num_classes.unwrap_or_else(|| samples.iter().map(|s| s.label + 1).max().unwrap_or(0));
    Ok(Dataset::new(prepared, classes)?)
}

pub fn load_dataset(root: &Path, seg: &SegmentConfig, num_classes: Option<usize>) -> Result<Dataset, IoError> {
    prepare(&load_samples(root)?, seg, num_classes)
}
