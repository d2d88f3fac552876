//! Session logs on disk.
//!
//! A log is JSON lines: a header, then tick and event records, then an end
//! record. Each record goes out in a single `write` of the whole line, so a
//! killed process leaves at most one torn line, always the last. Summaries
//! are written beside the logs through a temp file and a rename.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crowdnav_core::metrics::{
    aggregate, CohortRates, CohortReport, EndReason, EventRecord, LogHeader, LogRecord, MetricsSummary, SessionEvent,
    SessionOutcome, Summarizer, TickRecord,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_EXT: &str = "jsonl";
pub const SUMMARY_EXT: &str = "json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn summaries(&self) -> PathBuf {
        self.root.join("summaries")
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.logs().join(format!("{session_id}.{LOG_EXT}"))
    }

    pub fn summary_path(&self, session_id: &str) -> PathBuf {
        self.summaries().join(format!("{session_id}.{SUMMARY_EXT}"))
    }

    pub fn create(&self) -> io::Result<()> {
        fs::create_dir_all(self.logs())?;
        fs::create_dir_all(self.summaries())
    }
}

/// Writer for one session's log. Write failures do not stop the session:
/// the sink turns degraded, keeps trying, and the end record says so.
#[derive(Debug)]
pub struct LogSink {
    file: File,
    path: PathBuf,
    decimation: u64,
    degraded: bool,
    summary: Summarizer,
    line: Vec<u8>,
}

impl LogSink {
    /// Creates the file, refusing to overwrite, and writes the header.
    pub fn create(path: impl Into<PathBuf>, header: LogHeader) -> io::Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        let mut sink = Self {
            file,
            path,
            decimation: u64::from(header.decimation.max(1)),
            degraded: false,
            summary: Summarizer::default(),
            line: Vec::with_capacity(4096),
        };
        sink.put(&LogRecord::Header(header))?;
        Ok(sink)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    /// Logs the tick if it falls on the decimation grid.
    pub fn tick(&mut self, record: TickRecord) {
        if record.tick.is_multiple_of(self.decimation) {
            self.record(&LogRecord::Tick(record));
        }
    }

    pub fn event(&mut self, tick: u64, t: f64, event: SessionEvent) {
        self.record(&LogRecord::Event(EventRecord { tick, t, event }));
    }

    /// Writes the end record and returns the summary of everything logged.
    pub fn finish(mut self, reason: EndReason, tick: u64, t: f64) -> MetricsSummary {
        let end = LogRecord::End(SessionOutcome {
            reason,
            tick,
            t,
            degraded: self.degraded,
        });
        self.record(&end);
        if self.file.sync_data().is_err() {
            self.degraded = true;
        }
        let mut summary = self.summary.finish(0);
        summary.partial |= self.degraded;
        summary
    }

    fn record(&mut self, record: &LogRecord) {
        if self.put(record).is_err() {
            self.degraded = true;
        }
    }

    fn put(&mut self, record: &LogRecord) -> io::Result<()> {
        self.summary.push(record);
        self.line.clear();
        serde_json::to_writer(&mut self.line, record)?;
        self.line.push(b'\n');
        self.file.write_all(&self.line)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<LogRecord>,
    /// Complete lines that failed to parse.
    pub corrupt: u64,
    /// The file ended inside a line, which was dropped.
    pub torn_tail: bool,
}

impl ParsedLog {
    pub fn summarize(&self) -> MetricsSummary {
        let mut s = Summarizer::default();
        for r in &self.records {
            s.push(r);
        }
        s.finish(self.corrupt)
    }
}

pub fn parse_log(bytes: &[u8]) -> ParsedLog {
    let mut out = ParsedLog::default();
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    // split leaves an empty final piece after a trailing newline
    if let Some(last) = lines.pop() {
        out.torn_tail = !last.is_empty();
    }
    for line in lines {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<LogRecord>(line) {
            Ok(r) => out.records.push(r),
            Err(_) => out.corrupt += 1,
        }
    }
    out
}

pub fn read_log(path: &Path) -> io::Result<ParsedLog> {
    Ok(parse_log(&fs::read(path)?))
}

/// Writes `value` as pretty JSON so readers never see a half-written file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.sync_data()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_summary(layout: &DataLayout, summary: &MetricsSummary) -> io::Result<PathBuf> {
    let path = layout.summary_path(&summary.session_id);
    write_json_atomic(&path, summary)?;
    Ok(path)
}

fn stems(dir: &Path, ext: &str) -> io::Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e),
    };
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_owned());
            }
        }
    }
    Ok(out)
}

/// Summarizes every log that has no summary yet, such as those left by a
/// crash. Returns the recovered summaries.
pub fn recover_dir(layout: &DataLayout) -> io::Result<Vec<MetricsSummary>> {
    layout.create()?;
    let logs = stems(&layout.logs(), LOG_EXT)?;
    let done = stems(&layout.summaries(), SUMMARY_EXT)?;
    let mut out = Vec::new();
    for id in logs.difference(&done) {
        let parsed = read_log(&layout.log_path(id))?;
        let mut summary = parsed.summarize();
        if summary.session_id.is_empty() {
            // header lost; the file name is the only id left
            summary.session_id = id.clone();
        }
        summary.partial = true;
        write_summary(layout, &summary)?;
        out.push(summary);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

/// Reads every summary in `dir`, in file name order.
pub fn load_summaries(dir: &Path) -> Result<Vec<MetricsSummary>, LoadError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| LoadError::Io { path, source }
    };
    let mut out = Vec::new();
    for stem in stems(dir, SUMMARY_EXT).map_err(io_err(dir))? {
        let path = dir.join(format!("{stem}.{SUMMARY_EXT}"));
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let s = serde_json::from_slice(&bytes).map_err(|source| LoadError::Parse { path: path.clone(), source })?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Aggregate(#[from] crowdnav_core::metrics::AggregateError),
}

pub fn aggregate_dir(dir: &Path) -> Result<CohortReport, ReportError> {
    Ok(aggregate(&load_summaries(dir)?)?)
}

/// Report written next to the text table by `aggregate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub report: CohortReport,
}

fn rates_row(name: &str, r: &CohortRates) -> String {
    let cell = |rate: crowdnav_core::metrics::Rate| format!("{:>4}/{:<4} {:>6.2}%", rate.num, rate.den, rate.percent());
    format!(
        "{name:<22} {:>5}  {}  {}  {}  {}  {}  {}",
        r.sessions,
        cell(r.timeout),
        cell(r.no_movement),
        cell(r.intimate),
        cell(r.personal),
        cell(r.robot_found),
        cell(r.partial),
    )
}

pub fn render_report(report: &CohortReport) -> String {
    let mut out = format!(
        "{:<22} {:>5}  {:^19}  {:^19}  {:^19}  {:^19}  {:^19}  {:^19}\n",
        "cohort", "n", "timeout", "no movement", "intimate", "personal", "robot found", "partial"
    );
    out += &rates_row("all", &report.overall);
    out.push('\n');
    for (k, r) in &report.by_environment {
        out += &rates_row(&format!("env:{k}"), r);
        out.push('\n');
    }
    for (k, r) in &report.by_scenario {
        out += &rates_row(&format!("scenario:{k}"), r);
        out.push('\n');
    }
    out
}
