//! Ingestion of the line-delimited score wire format.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ScoreRecord, SpanRole};

/// Logprobs below this (including `-inf`) are clamped here at ingestion.
pub const DEFAULT_LOGPROB_FLOOR: f64 = -1e4;

/// Logarithm base a scorer reports in; converted to natural log on ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    fn to_natural(self, x: f64) -> f64 {
        match self {
            LogBase::E => x,
            LogBase::Two => x * std::f64::consts::LN_2,
            LogBase::Ten => x * std::f64::consts::LN_10,
        }
    }
}

/// A record refused at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based line in a file, or 0-based position in a response.
    pub position: usize,
    pub instance_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ingest {
    pub floor: f64,
    pub log_base: LogBase,
}

impl Default for Ingest {
    fn default() -> Self {
        Self {
            floor: DEFAULT_LOGPROB_FLOOR,
            log_base: LogBase::E,
        }
    }
}

/// Outcome of ingesting a stream of records.
#[derive(Debug, Default)]
pub struct Ingested {
    pub records: Vec<ScoreRecord>,
    pub rejected: Vec<Rejection>,
    pub clamped: usize,
}

fn parse_logprob(v: &Value) -> Result<f64, String> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| format!("unrepresentable number {n}")),
        Value::Null => Ok(f64::NEG_INFINITY),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "nan" => Ok(f64::NAN),
            other => other.parse().map_err(|_| format!("bad logprob {s:?}")),
        },
        other => Err(format!("bad logprob {other}")),
    }
}

impl Ingest {
    /// Converts one JSON value into a validated record, normalising units
    /// and clamping `-inf`. `clamped` counts clamped tokens.
    pub fn record_from_value(
        &self,
        mut v: Value,
        clamped: &mut usize,
    ) -> Result<ScoreRecord, String> {
        let tokens = v
            .get_mut("tokens")
            .and_then(Value::as_array_mut)
            .ok_or("missing tokens array")?;
        let mut local_clamped = 0;
        for tok in tokens.iter_mut() {
            let raw = tok.get("logprob").ok_or("token without logprob")?;
            let lp = parse_logprob(raw)?;
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(format!("non-finite logprob {lp}"));
            }
            let mut lp = self.log_base.to_natural(lp);
            if lp < self.floor {
                lp = self.floor;
                local_clamped += 1;
            }
            tok["logprob"] = serde_json::json!(lp);
        }
        let record: ScoreRecord = serde_json::from_value(v).map_err(|e| e.to_string())?;
        if !record
            .tokens
            .iter()
            .any(|t| t.span_role == SpanRole::Answer)
        {
            return Err("no answer-role token".into());
        }
        *clamped += local_clamped;
        Ok(record)
    }

    /// Reads line-delimited records; malformed lines are rejected one by
    /// one, I/O errors abort.
    pub fn read_jsonl(&self, reader: impl BufRead) -> std::io::Result<Ingested> {
        let mut out = Ingested::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = match serde_json::from_str(&line) {
                Ok(v) => v,
                Err(e) => {
                    out.rejected.push(Rejection {
                        position: n + 1,
                        instance_id: None,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            self.push_value(value, n + 1, &mut out);
        }
        if out.clamped > 0 {
            log::warn!(
                "clamped {} non-finite logprob(s) to {}",
                out.clamped,
                self.floor
            );
        }
        Ok(out)
    }

    pub(crate) fn push_value(&self, value: Value, position: usize, out: &mut Ingested) {
        let instance_id = value
            .get("instance_id")
            .and_then(Value::as_str)
            .map(str::to_string);
        match self.record_from_value(value, &mut out.clamped) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejected.push(Rejection {
                position,
                instance_id,
                reason,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"instance_id":"a","template_index":0,"injection_id":null,"candidate_index":1,"tokens":[{"token_text":"A","logprob":-1.5,"span_role":"subject"},{"token_text":"B","logprob":"-inf","span_role":"answer"}],"scorer_id":"m","scoring_mode":"causal_sum"}"#;

    #[test]
    fn clamps_negative_infinity() {
        let got = Ingest::default().read_jsonl(LINE.as_bytes()).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.clamped, 1);
        assert_eq!(got.records[0].tokens[1].logprob, DEFAULT_LOGPROB_FLOOR);
    }

    #[test]
    fn converts_log_base() {
        let ingest = Ingest {
            log_base: LogBase::Two,
            ..Default::default()
        };
        let got = ingest.read_jsonl(LINE.as_bytes()).unwrap();
        let lp = got.records[0].tokens[0].logprob;
        assert!((lp - (-1.5 * std::f64::consts::LN_2)).abs() < 1e-15);
    }

    #[test]
    fn rejects_line_by_line() {
        let body = format!(
            "{LINE}\n{{broken\n{}\n{}\n",
            LINE.replace("\"answer\"", "\"subject\""),
            LINE.replace("\"-inf\"", "\"nan\"")
        );
        let got = Ingest::default().read_jsonl(body.as_bytes()).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.rejected.len(), 3);
        assert_eq!(got.rejected[0].position, 2);
        assert_eq!(got.rejected[1].instance_id.as_deref(), Some("a"));
    }

    #[test]
    fn shortest_round_trip_floats() {
        let got = Ingest::default().read_jsonl(LINE.as_bytes()).unwrap();
        let mut rec = got.records[0].clone();
        rec.tokens[0].logprob = 0.1 + 0.2;
        let s = serde_json::to_string(&rec).unwrap();
        assert!(s.contains("0.30000000000000004"));
        let back: ScoreRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rec);
    }
}
