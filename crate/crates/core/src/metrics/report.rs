use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Neumaier-compensated sum; insensitive to summation order far below 1e-12 for report sizes.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    if values.iter().any(|v| !v.is_finite()) {
        // Compensation terms turn infinities into NaN; the plain sum is exact here.
        return values.iter().sum();
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Writes non-finite values as `null` and reads `null` back as `+∞`.
mod snr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub stft_d: f64,
    pub env_d: f64,
    pub mag_d: f64,
    pub phs_d: f64,
    pub wav_d: f64,
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub clips: usize,
    pub stft_d: f64,
    pub env_d: f64,
    pub mag_d: f64,
    pub phs_d: f64,
    pub wav_d: f64,
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
}

impl Aggregate {
    pub fn of(clips: &[ClipMetrics]) -> Self {
        let col = |f: fn(&ClipMetrics) -> f64| compensated_mean(&clips.iter().map(f).collect::<Vec<_>>());
        Self {
            clips: clips.len(),
            stft_d: col(|c| c.stft_d),
            env_d: col(|c| c.env_d),
            mag_d: col(|c| c.mag_d),
            phs_d: col(|c| c.phs_d),
            wav_d: col(|c| c.wav_d),
            snr_db: col(|c| c.snr_db),
        }
    }
}

/// Evaluation output: run configuration, one row per clip and the column means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub config: serde_json::Value,
    pub per_clip: Vec<ClipMetrics>,
    pub aggregate: Aggregate,
}

/// Formulas behind each column, embedded in every report's `config`.
pub fn metric_definitions() -> serde_json::Value {
    serde_json::json!({
        "stft_d": "(||L_hat - L||_F + ||R_hat - R||_F) / frames, complex STFT bins",
        "env_d": "sum over channels of ||env(pred) - env(gt)||_2 / samples, env = |analytic signal|",
        "mag_d": "(|| |L_hat| - |L| ||_F + || |R_hat| - |R| ||_F) / frames",
        "phs_d": "mean over bins of |wrap(arg D_hat - arg D)|, D = STFT(L) - STFT(R)",
        "wav_d": "1000 * ||w_hat - w||_2 / samples, both channels jointly",
        "snr_db": "10 log10(sum gt^2 / sum (gt - pred)^2); null when the prediction is exact",
    })
}

impl MetricReport {
    /// Builds a report; `config` is extended with the metric definitions.
    pub fn new(config: serde_json::Value, per_clip: Vec<ClipMetrics>) -> Self {
        let config = match config {
            serde_json::Value::Object(mut map) => {
                map.insert("metric_definitions".into(), metric_definitions());
                serde_json::Value::Object(map)
            }
            other => serde_json::json!({"run": other, "metric_definitions": metric_definitions()}),
        };
        let aggregate = Aggregate::of(&per_clip);
        Self {
            config,
            per_clip,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("clip_id,stft_d,env_d,mag_d,phs_d,wav_d,snr_db\n");
        for c in &self.per_clip {
            let id = if c.clip_id.contains([',', '"', '\n']) {
                format!("\"{}\"", c.clip_id.replace('"', "\"\""))
            } else {
                c.clip_id.clone()
            };
            let snr = if c.snr_db.is_finite() {
                c.snr_db.to_string()
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{id},{},{},{},{},{},{snr}",
                c.stft_d, c.env_d, c.mag_d, c.phs_d, c.wav_d
            );
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` next to each other.
    pub fn write(&self, json_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))?;
        let csv_path = json_path.with_extension("csv");
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(id: &str, snr: f64) -> ClipMetrics {
        ClipMetrics {
            clip_id: id.into(),
            stft_d: 1.5,
            env_d: 0.25,
            mag_d: 1.0,
            phs_d: 0.5,
            wav_d: 2.0,
            snr_db: snr,
        }
    }

    #[test]
    fn perfect_snr_serializes_as_null_and_round_trips() {
        let report = MetricReport::new(serde_json::json!({"seed": 7}), vec![row("a", f64::INFINITY), row("b", 3.0)]);
        let text = report.to_json();
        assert!(text.contains("\"snr_db\": null"));
        let back = MetricReport::from_json(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.aggregate.snr_db, f64::INFINITY);
        assert!(report.config.get("metric_definitions").is_some());
    }

    #[test]
    fn csv_mirrors_rows() {
        let report = MetricReport::new(serde_json::json!({}), vec![row("x,1", 2.5), row("y", f64::INFINITY)]);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "\"x,1\",1.5,0.25,1,0.5,2,2.5");
        assert!(lines[2].ends_with(','));
    }

    #[test]
    fn aggregate_is_the_mean() {
        let mut b = row("b", 1.0);
        b.stft_d = 2.5;
        let agg = Aggregate::of(&[row("a", 3.0), b]);
        assert_eq!(agg.stft_d, 2.0);
        assert_eq!(agg.snr_db, 2.0);
        assert_eq!(agg.clips, 2);
    }

    proptest! {
        #[test]
        fn summation_order_does_not_matter(mut v in prop::collection::vec(-1e6f64..1e6, 1..200), seed in any::<u64>()) {
            let a = compensated_sum(v.iter().copied());
            // deterministic shuffle
            let mut s = seed;
            for i in (1..v.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = compensated_sum(v.iter().copied());
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
