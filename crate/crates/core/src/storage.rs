//! Append-only JSON-lines persistence.
//!
//! Layout: `data_dir/{participant_id}/{events,tickets,annotations,surveys}.log`
//! plus `profile.json`. Each line is `{seq, entity_id, version, record}`.
//! A torn or corrupt tail is dropped on open, so any prefix of a log loads.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{ParticipantId, PhysiologicalEvent, StressAnnotation, WeeklySurvey};
use crate::error::{CoreError, Result};
use crate::events::PromptTicket;
use crate::viz::sha256_hex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLine<T> {
    pub seq: u64,
    pub entity_id: String,
    pub version: u32,
    pub record: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Events,
    Tickets,
    Annotations,
    Surveys,
}

impl LogKind {
    pub const ALL: [LogKind; 4] = [LogKind::Events, LogKind::Tickets, LogKind::Annotations, LogKind::Surveys];

    pub fn file_name(self) -> &'static str {
        match self {
            LogKind::Events => "events.log",
            LogKind::Tickets => "tickets.log",
            LogKind::Annotations => "annotations.log",
            LogKind::Surveys => "surveys.log",
        }
    }
}

/// One append-only log file.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: File,
    fsync: bool,
    last_seq: u64,
    index: HashMap<(String, u32), u64>,
}

/// Valid lines from the start of `bytes`, and the byte length they cover.
fn parse_prefix(bytes: &[u8]) -> (Vec<LogLine<serde_json::Value>>, usize) {
    let mut lines = Vec::new();
    let mut good = 0;
    let mut last_seq = 0;
    let mut pos = 0;
    while pos < bytes.len() {
        let Some(nl) = bytes[pos..].iter().position(|b| *b == b'\n') else { break };
        let raw = &bytes[pos..pos + nl];
        match serde_json::from_slice::<LogLine<serde_json::Value>>(raw) {
            Ok(line) if line.seq > last_seq => {
                last_seq = line.seq;
                lines.push(line);
                pos += nl + 1;
                good = pos;
            }
            _ => break,
        }
    }
    (lines, good)
}

impl RecordLog {
    /// Opens (creating if needed) and returns the recovered records. Any
    /// unreadable tail is truncated away so later appends stay well-formed.
    pub fn open(path: &Path, fsync: bool) -> Result<(Self, Vec<LogLine<serde_json::Value>>)> {
        let bytes = if path.exists() { fs::read(path)? } else { Vec::new() };
        let (lines, good) = parse_prefix(&bytes);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if good < bytes.len() {
            file.set_len(good as u64)?;
        }
        let index = lines.iter().map(|l| ((l.entity_id.clone(), l.version), l.seq)).collect();
        let last_seq = lines.last().map_or(0, |l| l.seq);
        Ok((Self { path: path.to_path_buf(), file, fsync, last_seq, index }, lines))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Appends unless `(entity_id, version)` is already present, in which case
    /// the existing sequence number is returned.
    pub fn append<T: Serialize>(&mut self, entity_id: &str, version: u32, record: &T) -> Result<u64> {
        if let Some(seq) = self.index.get(&(entity_id.to_string(), version)) {
            return Ok(*seq);
        }
        let seq = self.last_seq + 1;
        let line = LogLine { seq, entity_id: entity_id.to_string(), version, record };
        let mut buf = serde_json::to_vec(&line)?;
        buf.push(b'\n');
        self.file.write_all(&buf)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        self.last_seq = seq;
        self.index.insert((entity_id.to_string(), version), seq);
        Ok(seq)
    }

    /// Rewrites the log keeping only the newest line per entity, preserving
    /// sequence numbers.
    pub fn compact(&mut self) -> Result<()> {
        let bytes = fs::read(&self.path)?;
        let (lines, _) = parse_prefix(&bytes);
        let mut latest: BTreeMap<String, LogLine<serde_json::Value>> = BTreeMap::new();
        for l in lines {
            latest.insert(l.entity_id.clone(), l);
        }
        let mut keep: Vec<_> = latest.into_values().collect();
        keep.sort_by_key(|l| l.seq);
        let tmp = self.path.with_extension("log.tmp");
        {
            let mut out = File::create(&tmp)?;
            for l in &keep {
                let mut buf = serde_json::to_vec(l)?;
                buf.push(b'\n');
                out.write_all(&buf)?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        self.index = keep.iter().map(|l| ((l.entity_id.clone(), l.version), l.seq)).collect();
        Ok(())
    }
}

fn decode<T: DeserializeOwned>(lines: Vec<LogLine<serde_json::Value>>) -> Result<Vec<LogLine<T>>> {
    lines
        .into_iter()
        .map(|l| {
            Ok(LogLine { seq: l.seq, entity_id: l.entity_id, version: l.version, record: serde_json::from_value(l.record)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub participant_id: ParticipantId,
    pub enrollment_day: NaiveDate,
    pub tz_offset_min: i32,
}

/// Everything recovered from one participant's logs, in sequence order.
#[derive(Debug, Clone, Default)]
pub struct Recovered {
    pub events: Vec<PhysiologicalEvent>,
    pub tickets: Vec<PromptTicket>,
    pub annotations: Vec<StressAnnotation>,
    pub surveys: Vec<WeeklySurvey>,
    pub horizons: BTreeMap<LogKind, u64>,
}

impl Recovered {
    /// Hash of the last-writer-wins state; independent of how many
    /// intermediate versions the logs contain.
    pub fn state_hash(&self) -> String {
        fn latest<T: Clone>(items: &[T], key: impl Fn(&T) -> String) -> BTreeMap<String, T> {
            items.iter().map(|i| (key(i), i.clone())).collect()
        }
        let doc = serde_json::json!({
            "events": latest(&self.events, |e| e.event_id.0.clone()),
            "tickets": latest(&self.tickets, |t| t.event_id.0.clone()),
            "annotations": latest(&self.annotations, |a| a.event_id.0.clone()),
            "surveys": latest(&self.surveys, |s| s.week_index.to_string()),
        });
        sha256_hex(doc.to_string().as_bytes())
    }
}

/// Writer for one participant directory.
#[derive(Debug)]
pub struct ParticipantLog {
    dir: PathBuf,
    logs: BTreeMap<LogKind, RecordLog>,
}

impl ParticipantLog {
    pub fn open(dir: &Path, fsync: bool) -> Result<(Self, Recovered)> {
        fs::create_dir_all(dir)?;
        let mut logs = BTreeMap::new();
        let mut rec = Recovered::default();
        for kind in LogKind::ALL {
            let (log, lines) = RecordLog::open(&dir.join(kind.file_name()), fsync)?;
            rec.horizons.insert(kind, log.last_seq());
            match kind {
                LogKind::Events => rec.events = decode(lines)?.into_iter().map(|l| l.record).collect(),
                LogKind::Tickets => rec.tickets = decode(lines)?.into_iter().map(|l| l.record).collect(),
                LogKind::Annotations => rec.annotations = decode(lines)?.into_iter().map(|l| l.record).collect(),
                LogKind::Surveys => rec.surveys = decode(lines)?.into_iter().map(|l| l.record).collect(),
            }
            logs.insert(kind, log);
        }
        Ok((Self { dir: dir.to_path_buf(), logs }, rec))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append<T: Serialize>(&mut self, kind: LogKind, entity_id: &str, version: u32, record: &T) -> Result<u64> {
        self.logs.get_mut(&kind).expect("all kinds opened").append(entity_id, version, record)
    }

    pub fn horizons(&self) -> BTreeMap<LogKind, u64> {
        self.logs.iter().map(|(k, l)| (*k, l.last_seq())).collect()
    }

    pub fn compact(&mut self) -> Result<()> {
        self.logs.values_mut().try_for_each(RecordLog::compact)
    }
}

pub fn write_profile(dir: &Path, profile: &Profile) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join("profile.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(profile)?)?;
    fs::rename(tmp, dir.join("profile.json"))?;
    Ok(())
}

pub fn read_profile(dir: &Path) -> Result<Profile> {
    let bytes = fs::read(dir.join("profile.json"))
        .map_err(|e| CoreError::Storage(format!("{}: {e}", dir.join("profile.json").display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Participant directories (those holding a profile) under `data_dir`.
pub fn participant_dirs(data_dir: &Path) -> Result<Vec<PathBuf>> {
    if !data_dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(data_dir)? {
        let p = entry?.path();
        if p.join("profile.json").is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads line-delimited records, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CoreError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
