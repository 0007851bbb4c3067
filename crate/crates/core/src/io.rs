//! CSV readers and writers for recordings, subjects and feature tables.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::FEATURE_NAMES;
use crate::model::{Label, PenSample, Sex, Stroke, SubjectRecord, TaskFeatures, TaskRecording, Work};

pub const RECORDING_HEADER: [&str; 8] = [
    "subject_id",
    "task_id",
    "stroke_index",
    "t",
    "x",
    "y",
    "pressure",
    "on_paper",
];
pub const SUBJECT_HEADER: [&str; 6] = ["subject_id", "label", "sex", "age", "work", "education"];

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    subject_id: String,
    task_id: usize,
    stroke_index: usize,
    t: f64,
    x: f64,
    y: f64,
    pressure: f64,
    on_paper: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubjectRow {
    subject_id: String,
    label: u8,
    sex: Sex,
    age: f64,
    work: Work,
    education: f64,
}

fn parse_err(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

fn record_line(e: &csv::Error) -> usize {
    e.position().map(|p| p.line() as usize).unwrap_or(0)
}

pub fn write_recordings<W: Write>(w: W, recs: &[TaskRecording]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for rec in recs {
        for stroke in &rec.strokes {
            for s in &stroke.samples {
                wtr.serialize(SampleRow {
                    subject_id: rec.subject_id.clone(),
                    task_id: rec.task_id,
                    stroke_index: stroke.index,
                    t: s.t,
                    x: s.x,
                    y: s.y,
                    pressure: s.pressure,
                    on_paper: s.on_paper as u8,
                })?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads recordings; consecutive rows sharing (subject, task) form one
/// recording and consecutive rows sharing a stroke index form one stroke.
pub fn read_recordings<R: Read>(r: R) -> Result<Vec<TaskRecording>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(rdr.headers()?, &RECORDING_HEADER)?;
    let mut out: Vec<TaskRecording> = Vec::new();
    for row in rdr.deserialize::<SampleRow>() {
        let row = row.map_err(|e| parse_err(record_line(&e), &e))?;
        let sample = PenSample {
            t: row.t,
            x: row.x,
            y: row.y,
            pressure: row.pressure,
            on_paper: match row.on_paper {
                0 => false,
                1 => true,
                v => return Err(parse_err(0, format!("on_paper must be 0 or 1, got {v}"))),
            },
        };
        let same_rec = out
            .last()
            .map(|r| r.subject_id == row.subject_id && r.task_id == row.task_id)
            .unwrap_or(false);
        if !same_rec {
            out.push(TaskRecording {
                subject_id: row.subject_id.clone(),
                task_id: row.task_id,
                strokes: Vec::new(),
            });
        }
        let rec = out.last_mut().expect("pushed above");
        match rec.strokes.last_mut() {
            Some(s) if s.index == row.stroke_index => s.samples.push(sample),
            _ => rec.strokes.push(Stroke::new(row.stroke_index, vec![sample])),
        }
    }
    Ok(out)
}

pub fn write_subjects<W: Write>(w: W, subjects: &[SubjectRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in subjects {
        wtr.serialize(SubjectRow {
            subject_id: s.subject_id.clone(),
            label: s.label as u8,
            sex: s.sex,
            age: s.age,
            work: s.work,
            education: s.education,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_subjects<R: Read>(r: R) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(rdr.headers()?, &SUBJECT_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<SubjectRow>() {
        let row = row.map_err(|e| parse_err(record_line(&e), &e))?;
        let label = match row.label {
            0 => Label::Hc,
            1 => Label::Ad,
            v => return Err(parse_err(0, format!("label must be 0 or 1, got {v}"))),
        };
        out.push(SubjectRecord {
            subject_id: row.subject_id,
            label,
            sex: row.sex,
            age: row.age,
            work: row.work,
            education: row.education,
        });
    }
    Ok(out)
}

pub fn feature_header() -> Vec<String> {
    let mut h = vec![
        "subject_id".to_string(),
        "task_id".to_string(),
        "stroke_index".to_string(),
    ];
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    h
}

pub fn write_features<W: Write>(w: W, tables: &[TaskFeatures]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(feature_header())?;
    for t in tables {
        for (i, row) in t.rows.iter().enumerate() {
            let mut rec = vec![t.subject_id.clone(), t.task_id.to_string(), (i + 1).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<Vec<TaskFeatures>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let expected = feature_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(parse_err(1, "feature header does not match the canonical feature list"));
    }
    let mut out: Vec<TaskFeatures> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(record_line(&e), &e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let subject = rec.get(0).unwrap_or_default().to_string();
        let task: usize = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e| parse_err(line, e))?;
        let values = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(line, e)))
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line, "non-finite feature value"));
        }
        match out.last_mut() {
            Some(t) if t.subject_id == subject && t.task_id == task => t.rows.push(values),
            _ => out.push(TaskFeatures {
                subject_id: subject,
                task_id: task,
                rows: vec![values],
            }),
        }
    }
    Ok(out)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a != *b) {
        return Err(parse_err(
            1,
            format!("expected header {:?}, found {:?}", expected, found.iter().collect::<Vec<_>>()),
        ));
    }
    Ok(())
}
