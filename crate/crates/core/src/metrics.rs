//! Episode records, rolling-window metrics, and their on-disk logs.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated or collected episode. Field order is the JSONL key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    #[serde(rename = "d")]
    pub return_day: usize,
    #[serde(rename = "R")]
    pub retention: f64,
    pub clicks: usize,
    pub long_views: usize,
    pub likes: usize,
    pub steps: usize,
    pub mean_r: f64,
    pub seed: u64,
    pub policy_tag: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub return_time: f64,
    pub retention: f64,
    pub click_rate: f64,
    pub long_view_rate: f64,
    pub like_rate: f64,
}

#[derive(Clone, Debug)]
pub struct MetricWindow {
    capacity: usize,
    records: VecDeque<EpisodeRecord>,
}

impl MetricWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("metric window must be positive".into()));
        }
        Ok(MetricWindow {
            capacity,
            records: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, record: EpisodeRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.records.iter()
    }
}

/// Means of `d` and `R`; behavior rates are positives per impression
/// (`steps · K`).
pub fn compute_metrics<'a, I>(records: I, slate_size: usize) -> Result<Metrics>
where
    I: IntoIterator<Item = &'a EpisodeRecord>,
{
    let mut n = 0usize;
    let (mut d, mut r) = (0.0, 0.0);
    let (mut clicks, mut views, mut likes, mut impressions) = (0usize, 0usize, 0usize, 0usize);
    for rec in records {
        n += 1;
        d += rec.return_day as f64;
        r += rec.retention;
        clicks += rec.clicks;
        views += rec.long_views;
        likes += rec.likes;
        impressions += rec.steps * slate_size;
    }
    if n == 0 {
        return Err(Error::NotReady("no episodes to summarise".into()));
    }
    let rate = |c: usize| if impressions == 0 { 0.0 } else { c as f64 / impressions as f64 };
    Ok(Metrics {
        return_time: d / n as f64,
        retention: r / n as f64,
        click_rate: rate(clicks),
        long_view_rate: rate(views),
        like_rate: rate(likes),
    })
}

impl MetricWindow {
    pub fn metrics(&self, slate_size: usize) -> Result<Metrics> {
        compute_metrics(self.records.iter(), slate_size)
    }
}

pub const METRICS_HEADER: &str = "episode,return_time,retention,click_rate,long_view_rate,like_rate,db_loss";

/// Line-buffered writer that flushes after every record.
#[derive(Debug)]
struct LineWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LineWriter {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(LineWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Metrics CSV: header on creation, one row per evaluation point.
#[derive(Debug)]
pub struct MetricsCsv(LineWriter);

impl MetricsCsv {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = LineWriter::open(path, false)?;
        w.line(METRICS_HEADER)?;
        Ok(MetricsCsv(w))
    }

    /// `db_loss` is left empty when no training step has run.
    pub fn row(&mut self, episode: u64, m: &Metrics, db_loss: Option<f64>) -> Result<()> {
        let loss = db_loss.map(|l| l.to_string()).unwrap_or_default();
        self.0.line(&format!(
            "{episode},{},{},{},{},{},{loss}",
            m.return_time, m.retention, m.click_rate, m.long_view_rate, m.like_rate
        ))
    }
}

/// JSONL run log, one object per line.
#[derive(Debug)]
pub struct RunLog(LineWriter);

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(RunLog(LineWriter::open(path, false)?))
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.0.line(&record_line(record)?)
    }
}

pub fn record_line(record: &EpisodeRecord) -> Result<String> {
    serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))
}

/// Appends one record to `path`, creating it if needed.
pub fn append_run_log(path: &Path, record: &EpisodeRecord) -> Result<()> {
    LineWriter::open(path, true)?.line(&record_line(record)?)
}
