//! Remote judge client: OpenAI-compatible chat-completions over HTTP with
//! retries, and the label parser for the judge's free-text reply.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::metrics::{JudgeConfig, JudgeMode, MetricsError, Verdict, VerdictLabel};

/// Find the verdict label in a free-text judge reply.
///
/// The scan is case-insensitive and picks the label whose first occurrence
/// comes earliest. A "safe" occurrence that is the tail of "unsafe" does not
/// count as Safe.
pub fn parse_verdict_label(raw: &str) -> Result<VerdictLabel, MetricsError> {
    let lower = raw.to_lowercase();
    let bytes = lower.as_bytes();
    let mut best: Option<(usize, VerdictLabel)> = None;
    let mut consider = |pos: Option<usize>, label: VerdictLabel| {
        if let Some(p) = pos {
            if best.is_none_or(|(bp, _)| p < bp) {
                best = Some((p, label));
            }
        }
    };
    consider(lower.find("unsafe"), VerdictLabel::Unsafe);
    consider(lower.find("controversial"), VerdictLabel::Controversial);
    // earliest "safe" not preceded by "un"
    let mut from = 0;
    while let Some(rel) = lower[from..].find("safe") {
        let p = from + rel;
        if p < 2 || &bytes[p - 2..p] != b"un" {
            consider(Some(p), VerdictLabel::Safe);
            break;
        }
        from = p + 4;
    }
    best.map(|(_, label)| label)
        .ok_or_else(|| MetricsError::JudgeParseError {
            raw: raw.to_string(),
        })
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

/// Ask the remote judge to classify one (prompt, response) pair.
///
/// Sends the configured instruction with `{prompt}`/`{response}` substituted
/// to the chat-completions endpoint, with up to `max_retries` retries on
/// transport errors, HTTP 429, and HTTP 5xx, sleeping
/// `retry_backoff_ms * 2^attempt` between attempts.
pub fn judge_remote(
    prompt: &str,
    response: &str,
    config: &JudgeConfig,
) -> Result<Verdict, MetricsError> {
    config.validate()?;
    if config.mode != JudgeMode::Remote {
        return Err(MetricsError::BadJudgeConfig(
            "judge_remote called with a non-remote config".into(),
        ));
    }
    let url = config.endpoint_url.as_deref().expect("validated above");
    let instruction = config
        .instruction_template
        .replace("{prompt}", prompt)
        .replace("{response}", response);
    let body = json!({
        "model": config.judge_model_name,
        "messages": [{"role": "user", "content": instruction}],
        "temperature": 0,
    });
    let api_key = config
        .api_key_env_var
        .as_deref()
        .and_then(|var| std::env::var(var).ok())
        .filter(|v| !v.is_empty());

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(config.request_timeout_ms))
        .build()
        .map_err(|e| MetricsError::JudgeUnavailable {
            attempts: 0,
            last_error: e.to_string(),
        })?;

    let attempts = config.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = config.retry_backoff_ms << (attempt - 1);
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let mut request = client.post(url).json(&body);
        if let Some(key) = &api_key {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let parsed: ChatResponse =
                        resp.json().map_err(|e| MetricsError::JudgeParseError {
                            raw: format!("malformed chat-completion body: {e}"),
                        })?;
                    let content = parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .ok_or_else(|| MetricsError::JudgeParseError {
                            raw: "chat-completion reply with no choices".into(),
                        })?;
                    let label = parse_verdict_label(&content)?;
                    return Ok(Verdict::new(label, config.judge_model_name.clone(), content));
                }
                last_error = format!("HTTP {status}");
                let transient = status.as_u16() == 429 || status.is_server_error();
                if !transient {
                    break;
                }
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(MetricsError::JudgeUnavailable {
        attempts,
        last_error,
    })
}
