//! Run traces: one JSON object per line, preceded by a versioned header.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricCounters;
use crate::types::CandidateId;

pub const TRACE_SCHEMA: &str = "polca-trace";
pub const TRACE_VERSION: u32 = 1;

/// Header field holding the wall-clock creation time. It is the only field
/// that differs between two replays of the same run.
pub const TIMESTAMP_FIELD: &str = "timestamp_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub timestamp_ms: u64,
    pub run_id: String,
    /// The effective configuration of the run.
    pub config: serde_json::Value,
}

impl TraceHeader {
    pub fn new(run_id: impl Into<String>, config: serde_json::Value) -> Self {
        let timestamp_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            schema: TRACE_SCHEMA.to_string(),
            version: TRACE_VERSION,
            timestamp_ms,
            run_id: run_id.into(),
            config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Candidates selected from memory.
    Explore,
    /// Freshly admitted proposals.
    New,
}

/// Serializes infinite priorities as the strings `"inf"` / `"-inf"`.
mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRecord {
    pub candidate_id: CandidateId,
    #[serde(with = "extended_f64")]
    pub priority: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub phase: Phase,
    /// 1-based index of the evaluate call this rollout belongs to.
    pub eval_step: u64,
    /// Position of the task within the iteration's batch.
    pub slot: usize,
    pub candidate_id: CandidateId,
    pub task_id: String,
    pub output: String,
    pub reward: f64,
    pub feedback: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub proposal_step: u64,
    pub parent_id: CandidateId,
    pub candidate_id: Option<CandidateId>,
    pub payload: Option<String>,
    pub error: Option<String>,
}

impl ProposalRecord {
    pub fn ok(&self) -> bool {
        self.candidate_id.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecisionRecord {
    pub candidate_id: CandidateId,
    pub accepted: bool,
    /// Distance to the nearest member at decision time; absent when the
    /// population was empty.
    pub min_distance: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryUpdateRecord {
    pub candidate_id: CandidateId,
    /// True for the event that adds the candidate to memory.
    pub inserted: bool,
    #[serde(default)]
    pub parent_id: Option<CandidateId>,
    /// Carried on insertion only.
    #[serde(default)]
    pub payload: Option<String>,
    pub sample_count: u64,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEndRecord {
    pub counters: MetricCounters,
    pub best_candidate_id: CandidateId,
    pub best_mean: f64,
    pub best_payload: String,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    IterationStart {
        batch: Vec<String>,
        selected: Vec<SelectedRecord>,
        counters: MetricCounters,
    },
    Evaluation(EvaluationRecord),
    Proposal(ProposalRecord),
    FilterDecision(FilterDecisionRecord),
    MemoryUpdate(MemoryUpdateRecord),
    Summary {
        text: String,
        error: Option<String>,
    },
    RunEnd(RunEndRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub iteration: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Destination for events as the engine produces them.
pub trait TraceSink {
    fn record(&mut self, event: &TraceEvent) -> Result<()>;
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, event: &TraceEvent) -> Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

/// Drops every event.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _event: &TraceEvent) -> Result<()> {
        Ok(())
    }
}

/// Streams JSONL to a writer, flushing after every line so an aborted run
/// leaves a readable prefix behind.
pub struct JsonlSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(mut writer: W, header: &TraceHeader) -> Result<Self> {
        write_line(&mut writer, header)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn record(&mut self, event: &TraceEvent) -> Result<()> {
        write_line(&mut self.writer, event)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes a header line followed by one line per event.
pub fn emit_trace<W: Write>(header: &TraceHeader, events: &[TraceEvent], mut sink: W) -> Result<()> {
    let mut last = None;
    write_line(&mut sink, header)?;
    for event in events {
        if last.is_some_and(|s| event.seq <= s) {
            return Err(Error::Trace(format!("event seq {} is out of order", event.seq)));
        }
        last = Some(event.seq);
        write_line(&mut sink, event)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(reader: R) -> Result<(TraceHeader, Vec<TraceEvent>)> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Trace("empty trace".into()))??;
    let header: TraceHeader = serde_json::from_str(&first)?;
    if header.schema != TRACE_SCHEMA {
        return Err(Error::Trace(format!("unexpected schema {:?}", header.schema)));
    }
    if header.version != TRACE_VERSION {
        return Err(Error::Trace(format!("unsupported trace version {}", header.version)));
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: TraceEvent = serde_json::from_str(&line)
            .map_err(|e| Error::Trace(format!("line {}: {e}", i + 2)))?;
        events.push(event);
    }
    Ok((header, events))
}

/// Compares two JSONL traces byte for byte, ignoring the header timestamp.
pub fn traces_equivalent(a: &str, b: &str) -> Result<bool> {
    fn split(text: &str) -> Result<(serde_json::Value, &str)> {
        let (head, rest) = text.split_once('\n').unwrap_or((text, ""));
        let mut header: serde_json::Value = serde_json::from_str(head)?;
        if let Some(obj) = header.as_object_mut() {
            obj.remove(TIMESTAMP_FIELD);
        }
        Ok((header, rest))
    }
    let (ha, ra) = split(a)?;
    let (hb, rb) = split(b)?;
    Ok(ha == hb && ra == rb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_events() -> Vec<TraceEvent> {
        vec![
            TraceEvent {
                seq: 0,
                iteration: 1,
                body: EventBody::IterationStart {
                    batch: vec!["t0".into(), "t0".into()],
                    selected: vec![SelectedRecord {
                        candidate_id: CandidateId(0),
                        priority: f64::INFINITY,
                    }],
                    counters: MetricCounters::default(),
                },
            },
            TraceEvent {
                seq: 1,
                iteration: 1,
                body: EventBody::Evaluation(EvaluationRecord {
                    phase: Phase::Explore,
                    eval_step: 1,
                    slot: 0,
                    candidate_id: CandidateId(0),
                    task_id: "t0".into(),
                    output: "y".into(),
                    reward: 0.25,
                    feedback: "ok".into(),
                    failed: false,
                }),
            },
            TraceEvent {
                seq: 2,
                iteration: 1,
                body: EventBody::Summary {
                    text: "s".into(),
                    error: None,
                },
            },
        ]
    }

    #[test]
    fn header_plus_one_line_per_event() {
        let header = TraceHeader::new("r", serde_json::json!({"k": 5}));
        let mut buf = Vec::new();
        emit_trace(&header, &sample_events(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.ends_with('\n'));
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["version"], TRACE_VERSION);
        assert_eq!(first["schema"], TRACE_SCHEMA);
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(second["kind"], "iteration_start");
        assert_eq!(second["payload"]["selected"][0]["priority"], "inf");
    }

    #[test]
    fn round_trip() {
        let header = TraceHeader::new("r", serde_json::Value::Null);
        let mut buf = Vec::new();
        emit_trace(&header, &sample_events(), &mut buf).unwrap();
        let (h, events) = read_trace(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(events, sample_events());
    }

    #[test]
    fn out_of_order_events_rejected() {
        let mut events = sample_events();
        events[2].seq = 1;
        let header = TraceHeader::new("r", serde_json::Value::Null);
        assert!(emit_trace(&header, &events, Vec::new()).is_err());
    }

    #[test]
    fn streaming_sink_matches_batch_emit() {
        let header = TraceHeader::new("r", serde_json::Value::Null);
        let mut sink = JsonlSink::new(Vec::new(), &header).unwrap();
        for e in sample_events() {
            sink.record(&e).unwrap();
        }
        let mut batch = Vec::new();
        emit_trace(&header, &sample_events(), &mut batch).unwrap();
        assert_eq!(sink.into_inner(), batch);
    }

    #[test]
    fn timestamp_ignored_in_comparison() {
        let mut h1 = TraceHeader::new("r", serde_json::Value::Null);
        let mut h2 = h1.clone();
        h1.timestamp_ms = 1;
        h2.timestamp_ms = 2;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        emit_trace(&h1, &sample_events(), &mut a).unwrap();
        emit_trace(&h2, &sample_events(), &mut b).unwrap();
        let (a, b) = (String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap());
        assert_ne!(a, b);
        assert!(traces_equivalent(&a, &b).unwrap());
        let c = b.replace("0.25", "0.5");
        assert!(!traces_equivalent(&a, &c).unwrap());
    }

    #[test]
    fn wrong_version_rejected() {
        let mut header = TraceHeader::new("r", serde_json::Value::Null);
        header.version = 99;
        let mut buf = Vec::new();
        emit_trace(&header, &[], &mut buf).unwrap();
        assert!(read_trace(buf.as_slice()).is_err());
        assert!(read_trace(&b""[..]).is_err());
    }
}
