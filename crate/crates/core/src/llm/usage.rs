use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

/// Resource usage of one model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub model: String,
    pub effort: String,
    pub seconds: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub cost_usd: f64,
    /// The provider returned no usage block; token counts and cost are zero.
    #[serde(default)]
    pub usage_missing: bool,
}

impl UsageRecord {
    pub fn new(
        model: impl Into<String>,
        effort: impl Into<String>,
        seconds: f64,
        prompt_tokens: u64,
        completion_tokens: u64,
        prices: Prices,
    ) -> Self {
        Self {
            model: model.into(),
            effort: effort.into(),
            seconds,
            prompt_tokens,
            completion_tokens,
            total_tokens: prompt_tokens + completion_tokens,
            cost_usd: prices.cost(prompt_tokens, completion_tokens),
            usage_missing: false,
        }
    }
}

/// USD per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prices {
    pub prompt_per_million: f64,
    pub completion_per_million: f64,
}

impl Prices {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        (prompt_tokens as f64 * self.prompt_per_million + completion_tokens as f64 * self.completion_per_million)
            / 1_000_000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub model: String,
    pub effort: String,
    pub responses: usize,
    /// Mean seconds per response.
    pub time: f64,
    /// Mean total tokens per response.
    pub tokens: f64,
    /// Mean cost scaled to `batch` responses.
    pub cost_per_batch: f64,
    pub batch: u32,
}

/// Means per `(model, effort)`, cost scaled to `batch` responses. Groups are
/// sorted by model then effort.
pub fn usage_summary(records: &[UsageRecord], batch: u32) -> Vec<UsageSummary> {
    let mut groups: BTreeMap<(&str, &str), Vec<&UsageRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.model, &r.effort)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((model, effort), rs)| {
            let n = rs.len() as f64;
            UsageSummary {
                model: model.to_string(),
                effort: effort.to_string(),
                responses: rs.len(),
                time: rs.iter().map(|r| r.seconds).sum::<f64>() / n,
                tokens: rs.iter().map(|r| r.total_tokens as f64).sum::<f64>() / n,
                cost_per_batch: rs.iter().map(|r| r.cost_usd).sum::<f64>() / n * f64::from(batch),
                batch,
            }
        })
        .collect()
}

/// Per-response CSV: `model,effort,seconds,prompt_tokens,completion_tokens,cost_usd`.
pub fn write_usage_csv<W: Write>(records: &[UsageRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "effort",
        "seconds",
        "prompt_tokens",
        "completion_tokens",
        "cost_usd",
    ])?;
    for r in records {
        w.write_record([
            r.model.clone(),
            r.effort.clone(),
            r.seconds.to_string(),
            r.prompt_tokens.to_string(),
            r.completion_tokens.to_string(),
            r.cost_usd.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary CSV: `model,effort,responses,time,tokens,cost_per_<batch>`.
pub fn write_summary_csv<W: Write>(rows: &[UsageSummary], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let batch = rows.first().map_or(1000, |r| r.batch);
    w.write_record([
        "model".to_string(),
        "effort".to_string(),
        "responses".to_string(),
        "time".to_string(),
        "tokens".to_string(),
        format!("cost_per_{batch}"),
    ])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.effort.clone(),
            r.responses.to_string(),
            format!("{:.1}", r.time),
            format!("{:.0}", r.tokens),
            format!("{:.2}", r.cost_per_batch),
        ])?;
    }
    w.flush()?;
    Ok(())
}
