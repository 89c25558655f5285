//! Line-delimited JSON frame streams.
//!
//! The first line is a header `{"format":"bimanual-frames","version":1,"fps":..}`;
//! every following non-blank line is one [`FrameRecord`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::AtomicFile;
use crate::geometry::Aabb;
use crate::tracking::Detection;
use crate::vocab::{ActionLabel, ObjectClass};

pub const FRAME_FORMAT: &str = "bimanual-frames";
pub const FRAME_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameFileHeader {
    pub format: String,
    pub version: u32,
    pub fps: f64,
}

impl FrameFileHeader {
    pub fn new(fps: f64) -> Self {
        FrameFileHeader { format: FRAME_FORMAT.into(), version: FRAME_FORMAT_VERSION, fps }
    }
}

/// One frame of detections with the per-hand ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub recording: String,
    pub subject: u32,
    pub task: String,
    pub repetition: u32,
    pub frame: usize,
    pub timestamp: f64,
    pub detections: Vec<Detection>,
    pub right: ActionLabel,
    pub left: ActionLabel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    class: String,
    #[serde(rename = "box")]
    bbox: Aabb,
    confidence: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    recording: String,
    subject: u32,
    task: String,
    repetition: u32,
    frame: usize,
    timestamp: f64,
    detections: Vec<RawDetection>,
    right: String,
    left: String,
}

impl RawFrame {
    fn resolve(self) -> Result<FrameRecord> {
        let detections = self
            .detections
            .into_iter()
            .map(|d| {
                let det = Detection { class: d.class.parse::<ObjectClass>()?, bbox: d.bbox, confidence: d.confidence };
                det.validate()?;
                Ok(det)
            })
            .collect::<Result<Vec<_>>>()?;
        if !self.timestamp.is_finite() {
            return Err(Error::Schema("timestamp is not finite".into()));
        }
        Ok(FrameRecord {
            recording: self.recording,
            subject: self.subject,
            task: self.task,
            repetition: self.repetition,
            frame: self.frame,
            timestamp: self.timestamp,
            detections,
            right: self.right.parse()?,
            left: self.left.parse()?,
        })
    }
}

/// Streaming reader; holds only the current line in memory.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    header: Option<FrameFileHeader>,
    // Last (frame, timestamp) per recording, for the contiguity checks.
    last: HashMap<String, (usize, f64)>,
    failed: bool,
}

impl<R: BufRead> FrameReader<R> {
    /// Read the header. An empty input yields an empty stream.
    pub fn new(r: R) -> Result<Self> {
        let mut reader = FrameReader { lines: r.lines(), line: 0, header: None, last: HashMap::new(), failed: false };
        if let Some(text) = reader.next_line()? {
            let h: FrameFileHeader = serde_json::from_str(&text)
                .map_err(|e| Error::Malformed { line: reader.line, message: format!("header: {e}") })?;
            if h.format != FRAME_FORMAT || h.version != FRAME_FORMAT_VERSION {
                return Err(Error::Schema(format!("unsupported frame file {} v{}", h.format, h.version)));
            }
            if !(h.fps.is_finite() && h.fps > 0.0) {
                return Err(Error::Malformed { line: reader.line, message: format!("fps {} must be > 0", h.fps) });
            }
            reader.header = Some(h);
        }
        Ok(reader)
    }

    pub fn header(&self) -> Option<&FrameFileHeader> {
        self.header.as_ref()
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        for text in self.lines.by_ref() {
            self.line += 1;
            let text = text.map_err(|e| Error::Malformed { line: self.line, message: e.to_string() })?;
            if !text.trim().is_empty() {
                return Ok(Some(text));
            }
        }
        Ok(None)
    }

    fn parse(&mut self, text: &str) -> Result<FrameRecord> {
        let at = self.line;
        let raw: RawFrame =
            serde_json::from_str(text).map_err(|e| Error::Malformed { line: at, message: e.to_string() })?;
        let rec = raw.resolve().map_err(|e| e.at_line(at))?;
        let expected = self.last.get(&rec.recording).map_or(0, |&(f, _)| f + 1);
        if rec.frame != expected {
            return Err(Error::Malformed {
                line: at,
                message: format!("recording {} frame {} but expected {}", rec.recording, rec.frame, expected),
            });
        }
        if let Some(&(_, t)) = self.last.get(&rec.recording) {
            if rec.timestamp < t {
                return Err(Error::Malformed { line: at, message: "timestamps decrease".into() });
            }
        }
        self.last.insert(rec.recording.clone(), (rec.frame, rec.timestamp));
        Ok(rec)
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.header.is_none() {
            return None;
        }
        let item = match self.next_line() {
            Ok(Some(text)) => self.parse(&text),
            Ok(None) => return None,
            Err(e) => Err(e),
        };
        self.failed = item.is_err();
        Some(item)
    }
}

pub fn load_frames(path: &Path) -> Result<FrameReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    FrameReader::new(BufReader::new(file))
}

pub fn write_frames<'a, W: Write>(
    mut w: W,
    fps: f64,
    records: impl IntoIterator<Item = &'a FrameRecord>,
) -> std::io::Result<()> {
    writeln!(w, "{}", serde_json::to_string(&FrameFileHeader::new(fps)).expect("header serializes"))?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    w.flush()
}

/// Atomically write a frame file.
pub fn save_frames<'a>(path: &Path, fps: f64, records: impl IntoIterator<Item = &'a FrameRecord>) -> Result<()> {
    let mut f = AtomicFile::create(path)?;
    write_frames(f.writer(), fps, records).map_err(|e| f.err(e))?;
    f.commit()
}

/// A whole recording held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub fps: f64,
    pub frames: Vec<FrameRecord>,
}

impl Recording {
    pub fn id(&self) -> &str {
        self.frames.first().map_or("", |f| f.recording.as_str())
    }

    pub fn subject(&self) -> u32 {
        self.frames.first().map_or(0, |f| f.subject)
    }

    pub fn task(&self) -> &str {
        self.frames.first().map_or("", |f| f.task.as_str())
    }

    pub fn repetition(&self) -> u32 {
        self.frames.first().map_or(0, |f| f.repetition)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_frames(path, self.fps, &self.frames)
    }

    /// Load a file holding exactly one recording.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = load_frames(path)?;
        let fps = reader.header().map_or(0.0, |h| h.fps);
        let frames = reader.collect::<Result<Vec<_>>>()?;
        if let Some(first) = frames.first() {
            if let Some(other) = frames.iter().find(|f| f.recording != first.recording) {
                return Err(Error::Schema(format!(
                    "{} holds recordings {} and {}",
                    path.display(),
                    first.recording,
                    other.recording
                )));
            }
        }
        Ok(Recording { fps, frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(frame: usize) -> FrameRecord {
        FrameRecord {
            recording: "r".into(),
            subject: 1,
            task: "pour".into(),
            repetition: 0,
            frame,
            timestamp: frame as f64 / 15.0,
            detections: vec![Detection {
                class: ObjectClass::Cup,
                bbox: Aabb::new([0.1, 0.2, 0.3], [1.0 / 3.0, 5.0, 6.0]).unwrap(),
                confidence: 0.75,
            }],
            right: ActionLabel::Pour,
            left: ActionLabel::Hold,
        }
    }

    fn read(text: &str) -> Result<Vec<FrameRecord>> {
        FrameReader::new(text.as_bytes())?.collect()
    }

    #[test]
    fn round_trip_is_lossless() {
        let recs: Vec<_> = (0..3).map(record).collect();
        let mut buf = Vec::new();
        write_frames(&mut buf, 15.0, &recs).unwrap();
        let back = read(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn empty_file_is_an_empty_stream() {
        assert!(read("").unwrap().is_empty());
    }

    #[test]
    fn unknown_action_is_named_with_its_line() {
        let mut buf = Vec::new();
        write_frames(&mut buf, 15.0, &[record(0)]).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"pour\",\"detections\"", "\"pour\",\"detections\"");
        let text = text.replace("\"right\":\"pour\"", "\"right\":\"jump\"");
        match read(&text) {
            Err(Error::UnknownToken { token, line, .. }) => {
                assert_eq!(token, "jump");
                assert_eq!(line, Some(2));
            }
            other => panic!("{other:?}"),
        }
        let text = text.replace("\"jump\"", "\"pour\"").replace("\"class\":\"cup\"", "\"class\":\"spoon\"");
        assert!(matches!(read(&text), Err(Error::UnknownToken { ref token, .. }) if token == "spoon"));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let header = serde_json::to_string(&FrameFileHeader::new(15.0)).unwrap();
        let good = serde_json::to_string(&record(0)).unwrap();
        let text = format!("{header}\n{good}\n{{not json\n");
        assert!(matches!(read(&text), Err(Error::Malformed { line: 3, .. })));
        let gap = serde_json::to_string(&record(2)).unwrap();
        assert!(matches!(read(&format!("{header}\n{good}\n{gap}\n")), Err(Error::Malformed { line: 3, .. })));
        let inverted = good.replace("\"min\":[0.1", "\"min\":[9.0");
        assert!(matches!(read(&format!("{header}\n{inverted}\n")), Err(Error::Malformed { line: 2, .. })));
        assert!(matches!(read("{\"format\":\"other\",\"version\":1,\"fps\":15}\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let rec = Recording { fps: 15.0, frames: (0..4).map(record).collect() };
        rec.save(&path).unwrap();
        assert_eq!(Recording::load(&path).unwrap(), rec);
        assert!(matches!(Recording::load(&dir.path().join("nope")), Err(Error::MissingFile(_))));
    }
}
