use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::json;

use crate::error::UnknownFormat;

use super::SimResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    /// Chrome/Perfetto trace-event JSON, one lane per device.
    TraceEvent,
}

impl FromStr for TraceFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "trace-event" => Ok(TraceFormat::TraceEvent),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

pub fn export_trace(result: &SimResult, format: TraceFormat) -> Vec<u8> {
    match format {
        TraceFormat::Csv => {
            let mut out = String::from("device,kind,token,round,start_s,duration_s\n");
            for e in &result.events {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{:.9},{:.9}",
                    result.device_ids[e.device],
                    e.kind,
                    e.token,
                    e.round,
                    e.start,
                    e.duration
                );
            }
            out.into_bytes()
        }
        TraceFormat::TraceEvent => {
            let records: Vec<serde_json::Value> = result
                .events
                .iter()
                .map(|e| {
                    json!({
                        "name": e.kind.tag(),
                        "ph": "X",
                        "pid": e.device,
                        "tid": 0,
                        "ts": e.start * 1e6,
                        "dur": e.duration * 1e6,
                        "args": {
                            "device": result.device_ids[e.device],
                            "token": e.token,
                            "round": e.round,
                            "layer": e.layer,
                        },
                    })
                })
                .collect();
            let doc = json!({ "traceEvents": records, "displayTimeUnit": "ms" });
            let mut bytes = serde_json::to_vec_pretty(&doc).expect("json values serialize");
            bytes.push(b'\n');
            bytes
        }
    }
}
