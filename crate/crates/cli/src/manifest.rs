use serde::Serialize;
use serde_json::Value;

/// Provenance attached to every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub rng: String,
    /// RFC 3339. Taken from `SOURCE_DATE_EPOCH` when set so that reruns can
    /// be byte-identical.
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, parameters: Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            parameters,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng: ssl_nmar::simulate::RNG_ID.to_string(),
            timestamp: timestamp(),
        }
    }
}

fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    fixed
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
