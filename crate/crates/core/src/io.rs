//! Delimited-text session files.
//!
//! Floats are written with the shortest representation that round-trips.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kinlab::{ActionLabel, KinematicTrack, LabelSeries};
use crate::synthgen::{EegRecording, ManoeuvreSchedule, Segment};

pub const KINEMATICS_FILE: &str = "kinematics.csv";
pub const EEG_FILE: &str = "eeg.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const LABELS_FILE: &str = "labels.csv";

const KINEMATICS_HEADER: [&str; 5] = ["t", "vx", "vy", "psi", "psi_dot"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::file(path, e))
}

fn headers(r: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    Ok(r.headers()
        .map_err(|e| Error::file(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

fn parse_f64(field: &str, path: &Path, row: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::file(path, format!("row {row}: `{field}` is not a number")))
}

/// Reads all rows as floats, checking the column count.
fn float_rows(r: &mut csv::Reader<File>, path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::file(path, e))?;
            if rec.len() != width {
                return Err(Error::file(path, format!("row {} has {} fields, expected {width}", i + 1, rec.len())));
            }
            rec.iter().map(|f| parse_f64(f, path, i + 1)).collect()
        })
        .collect()
}

fn write_line(w: &mut impl Write, path: &Path, fields: impl IntoIterator<Item = String>) -> Result<()> {
    let line = fields.into_iter().collect::<Vec<_>>().join(",");
    writeln!(w, "{line}").map_err(|e| Error::file(path, e))
}

pub fn write_kinematics(path: &Path, track: &KinematicTrack) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, KINEMATICS_HEADER.iter().map(|s| s.to_string()))?;
    for i in 0..track.len() {
        write_line(
            &mut w,
            path,
            [track.timestamps[i], track.vx[i], track.vy[i], track.psi[i], track.psi_dot[i]].map(|x| x.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_kinematics(path: &Path) -> Result<KinematicTrack> {
    let mut r = reader(path)?;
    let h = headers(&mut r, path)?;
    if h != KINEMATICS_HEADER {
        return Err(Error::file(path, format!("expected header {}", KINEMATICS_HEADER.join(","))));
    }
    let rows = float_rows(&mut r, path, 5)?;
    let col = |k: usize| rows.iter().map(|row| row[k]).collect::<Vec<_>>();
    KinematicTrack::new(col(0), col(1), col(2), col(3), col(4))
}

pub fn write_eeg(path: &Path, eeg: &EegRecording) -> Result<()> {
    let mut w = create(path)?;
    write_line(
        &mut w,
        path,
        std::iter::once("t".to_string()).chain(eeg.channel_names.iter().cloned()),
    )?;
    for (i, t) in eeg.timestamps.iter().enumerate() {
        write_line(
            &mut w,
            path,
            std::iter::once(t.to_string()).chain(eeg.data.iter().map(|row| row[i].to_string())),
        )?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

/// Reads an EEG file; the sampling rate is inferred from the timestamps.
pub fn read_eeg(path: &Path) -> Result<EegRecording> {
    let mut r = reader(path)?;
    let h = headers(&mut r, path)?;
    if h.first().map(String::as_str) != Some("t") || h.len() < 2 {
        return Err(Error::file(path, "expected header t,<channel>,..."));
    }
    let rows = float_rows(&mut r, path, h.len())?;
    if rows.len() < 2 {
        return Err(Error::file(path, "need at least two samples"));
    }
    let timestamps: Vec<f64> = rows.iter().map(|row| row[0]).collect();
    let data = (1..h.len()).map(|k| rows.iter().map(|row| row[k]).collect()).collect();
    let span = timestamps[timestamps.len() - 1] - timestamps[0];
    let fs = ((timestamps.len() - 1) as f64 / span * 1e6).round() / 1e6;
    EegRecording::new(timestamps, data, h[1..].to_vec(), fs)
}

pub fn write_schedule(path: &Path, schedule: &ManoeuvreSchedule) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, ["action", "start", "end"].map(String::from))?;
    for s in &schedule.segments {
        write_line(&mut w, path, [s.action.to_string(), s.start.to_string(), s.end.to_string()])?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_schedule(path: &Path) -> Result<ManoeuvreSchedule> {
    let mut r = reader(path)?;
    if headers(&mut r, path)? != ["action", "start", "end"] {
        return Err(Error::file(path, "expected header action,start,end"));
    }
    let mut segments = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::file(path, e))?;
        if rec.len() != 3 {
            return Err(Error::file(path, format!("row {} has {} fields, expected 3", i + 1, rec.len())));
        }
        let action: ActionLabel = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::file(path, format!("row {}: unknown action `{}`", i + 1, &rec[0])))?;
        segments.push(Segment {
            action,
            start: parse_f64(&rec[1], path, i + 1)?,
            end: parse_f64(&rec[2], path, i + 1)?,
        });
    }
    let session_duration = segments.last().map_or(0.0, |s| s.end);
    let schedule = ManoeuvreSchedule {
        segments,
        session_duration,
    };
    schedule.validate()?;
    Ok(schedule)
}

pub fn write_labels(path: &Path, labels: &LabelSeries) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, ["t", "label"].map(String::from))?;
    for (t, l) in labels.timestamps.iter().zip(&labels.labels) {
        write_line(&mut w, path, [t.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelSeries> {
    let mut r = reader(path)?;
    if headers(&mut r, path)? != ["t", "label"] {
        return Err(Error::file(path, "expected header t,label"));
    }
    let mut out = LabelSeries {
        timestamps: Vec::new(),
        labels: Vec::new(),
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::file(path, e))?;
        if rec.len() != 2 {
            return Err(Error::file(path, format!("row {} has {} fields, expected 2", i + 1, rec.len())));
        }
        out.timestamps.push(parse_f64(&rec[0], path, i + 1)?);
        out.labels.push(
            rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::file(path, format!("row {}: unknown label `{}`", i + 1, &rec[1])))?,
        );
    }
    Ok(out)
}

/// Paths of one exported session inside a directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionFiles {
    pub kinematics: PathBuf,
    pub eeg: PathBuf,
    pub schedule: PathBuf,
}

impl SessionFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SessionFiles {
            kinematics: dir.join(KINEMATICS_FILE),
            eeg: dir.join(EEG_FILE),
            schedule: dir.join(SCHEDULE_FILE),
        }
    }
}

/// Writes kinematics, EEG and schedule files into an existing directory.
pub fn export_session(
    schedule: &ManoeuvreSchedule,
    track: &KinematicTrack,
    eeg: &EegRecording,
    dir: &Path,
) -> Result<SessionFiles> {
    if !dir.is_dir() {
        return Err(Error::file(dir, "directory does not exist"));
    }
    let t_kin = track.timestamps.last().copied().unwrap_or(0.0);
    let t_eeg = eeg.timestamps.last().copied().unwrap_or(0.0);
    if (t_kin - schedule.session_duration).abs() > 1.0 || (t_eeg - schedule.session_duration).abs() > 1.0 {
        return Err(Error::InvalidInput(format!(
            "track ends at {t_kin} s and EEG at {t_eeg} s for a {} s schedule",
            schedule.session_duration
        )));
    }
    let files = SessionFiles::in_dir(dir);
    write_schedule(&files.schedule, schedule)?;
    write_kinematics(&files.kinematics, track)?;
    write_eeg(&files.eeg, eeg)?;
    Ok(files)
}
