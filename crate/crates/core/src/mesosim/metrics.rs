//! Event log and trip metrics.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::netmodel::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogKind {
    Enter,
    Queue,
    Depart,
    Pass,
    Exit,
    Decision,
    Sample,
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub kind: LogKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
    /// Lane id 1..=12.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub horizon: f64,
    pub signalized: Vec<NodeId>,
    pub records: Vec<LogRecord>,
}

impl EventLog {
    /// JSON Lines: a header object followed by one record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = serde_json::json!({ "horizon": self.horizon, "signalized": self.signalized });
        writeln!(out, "{header}")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<EventLog> {
        #[derive(Deserialize)]
        struct Header {
            horizon: f64,
            signalized: Vec<NodeId>,
        }
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "empty event log"))??;
        let header: Header = serde_json::from_str(&first)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(EventLog { horizon: header.horizon, signalized: header.signalized, records })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    /// Mean queue per signalized intersection at `t`.
    pub aql: f64,
    /// Mean accumulated waiting time of vehicles in the network at `t`.
    pub awt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean waiting time over completed trips, seconds.
    pub awt: f64,
    /// Mean travel time over completed trips, seconds.
    pub att: f64,
    /// Mean queue length per signalized intersection per sample.
    pub aql: f64,
    pub completed: usize,
    pub entered: usize,
    pub time_series: Vec<SamplePoint>,
    /// Per completed trip, in vehicle id order.
    pub wait_times: Vec<f64>,
}

impl MetricsReport {
    /// `t,aql,awt` rows.
    pub fn write_time_series_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,aql,awt")?;
        for s in &self.time_series {
            writeln!(out, "{},{},{}", fmt_g6(s.t), fmt_g6(s.aql), fmt_g6(s.awt))?;
        }
        Ok(())
    }
}

/// Six significant digits, trailing zeros trimmed, like C's `%.6g`.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let mant = trim_zeros(mant.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Default)]
struct Trace {
    entry: Option<f64>,
    exit: Option<f64>,
    wait: f64,
    queued_since: Option<f64>,
}

/// Recompute the trip metrics from a raw event log alone.
pub fn compute_metrics(log: &EventLog) -> Result<MetricsReport, SimError> {
    let mut trips: BTreeMap<u32, Trace> = BTreeMap::new();
    let mut queues: BTreeMap<u32, u64> = BTreeMap::new();
    let signalized: Vec<u32> = log.signalized.iter().map(|&n| n as u32).collect();
    let mut entered = 0usize;
    let mut in_network = 0usize;
    let mut queued_total = 0usize;
    let mut wait_in_network = 0.0f64;
    let mut queued_since_sum = 0.0f64;
    let mut sample_total = 0u64;
    let mut time_series = Vec::new();

    let missing = |what: &str, r: &LogRecord| SimError::InvalidFlow(format!("log record at t={} lacks {what}", r.t));
    for r in &log.records {
        match r.kind {
            LogKind::Enter => {
                let v = r.vehicle.ok_or_else(|| missing("vehicle", r))?;
                trips.entry(v).or_default().entry = Some(r.t);
                entered += 1;
                in_network += 1;
            }
            LogKind::Queue => {
                let v = r.vehicle.ok_or_else(|| missing("vehicle", r))?;
                let n = r.node.ok_or_else(|| missing("node", r))?;
                trips.entry(v).or_default().queued_since = Some(r.t);
                *queues.entry(n).or_default() += 1;
                queued_total += 1;
                queued_since_sum += r.t;
            }
            LogKind::Depart => {
                let v = r.vehicle.ok_or_else(|| missing("vehicle", r))?;
                let n = r.node.ok_or_else(|| missing("node", r))?;
                let tr = trips.entry(v).or_default();
                let since = tr.queued_since.take().ok_or_else(|| missing("matching queue record", r))?;
                let waited = r.t - since;
                tr.wait += waited;
                wait_in_network += waited;
                queued_since_sum -= since;
                queued_total -= 1;
                *queues.entry(n).or_default() -= 1;
            }
            LogKind::Exit => {
                let v = r.vehicle.ok_or_else(|| missing("vehicle", r))?;
                let tr = trips.entry(v).or_default();
                tr.exit = Some(r.t);
                wait_in_network -= tr.wait;
                in_network -= 1;
            }
            LogKind::Sample => {
                let total: u64 = signalized.iter().map(|n| queues.get(n).copied().unwrap_or(0)).sum();
                sample_total += total;
                let awt = if in_network == 0 {
                    0.0
                } else {
                    let w = wait_in_network + queued_total as f64 * r.t - queued_since_sum;
                    (w / in_network as f64).max(0.0)
                };
                let aql = if signalized.is_empty() { 0.0 } else { total as f64 / signalized.len() as f64 };
                time_series.push(SamplePoint { t: r.t, aql, awt });
            }
            LogKind::Pass | LogKind::Decision => {}
        }
    }

    let done: Vec<&Trace> = trips.values().filter(|t| t.exit.is_some()).collect();
    if done.is_empty() {
        return Err(SimError::EmptyTripSet);
    }
    let n = done.len() as f64;
    let awt = done.iter().map(|t| t.wait).sum::<f64>() / n;
    let mut att_sum = 0.0;
    for t in &done {
        let entry = t.entry.ok_or_else(|| SimError::InvalidFlow("exit without entry".into()))?;
        att_sum += t.exit.unwrap() - entry;
    }
    let k = time_series.len() as u64;
    let denom = signalized.len() as u64 * k;
    let aql = if denom == 0 { 0.0 } else { sample_total as f64 / denom as f64 };
    Ok(MetricsReport {
        awt,
        att: att_sum / n,
        aql,
        completed: done.len(),
        entered,
        time_series,
        wait_times: done.iter().map(|t| t.wait).collect(),
    })
}
