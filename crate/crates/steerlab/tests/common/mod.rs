//! Shared helpers for integration tests: an independent full-recompute
//! forward reference in f64, and a scriptable local chat-completions server.
//!
//! The forward reference deliberately reimplements the model math with plain
//! loops and no caching, so agreement with the incremental engine is evidence
//! rather than tautology.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use steerlab::model::{
    ActivationKind, ModelConfig, NormKind, PositionKind, TensorArchive,
};

// ----------------------------------------------------------------------------
// naive forward reference

pub struct NaiveOut {
    /// Logits at every position, `[seq][vocab]`.
    pub logits: Vec<Vec<f64>>,
    /// Post-block residual state at every position, `[seq][layer][d_model]`.
    pub hiddens: Vec<Vec<Vec<f64>>>,
}

struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn fetch(weights: &TensorArchive, name: &str) -> Mat {
    let t = weights.get(name).unwrap_or_else(|e| panic!("{name}: {e}"));
    let (rows, cols) = match t.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => panic!("{name}: unexpected rank {other:?}"),
    };
    Mat {
        rows,
        cols,
        data: t.data().iter().map(|&v| v as f64).collect(),
    }
}

fn try_fetch(weights: &TensorArchive, name: &str) -> Option<Mat> {
    weights.get(name).ok().map(|_| fetch(weights, name))
}

/// x[k] times W[k, n].
fn vm(x: &[f64], w: &Mat) -> Vec<f64> {
    assert_eq!(x.len(), w.rows);
    let mut out = vec![0.0; w.cols];
    for (k, &xv) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(k)) {
            *o += xv * wv;
        }
    }
    out
}

fn norm64(x: &[f64], kind: NormKind, gain: &[f64], bias: Option<&[f64]>, eps: f64) -> Vec<f64> {
    match kind {
        NormKind::Rms => {
            let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
        }
        NormKind::Layer => {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            let bias = bias.expect("layer norm has a bias");
            x.iter()
                .zip(gain.iter().zip(bias))
                .map(|(v, (g, b))| (v - mean) * inv * g + b)
                .collect()
        }
    }
}

fn rope64(x: &mut [f64], position: usize, theta: f64) {
    let d = x.len();
    for i in (0..d).step_by(2) {
        let freq = theta.powf(-(i as f64) / d as f64);
        let angle = position as f64 * freq;
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (x[i], x[i + 1]);
        x[i] = a * cos - b * sin;
        x[i + 1] = a * sin + b * cos;
    }
}

fn softmax64(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

fn silu64(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn gelu64(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Full-sequence forward pass with no cache: every position recomputes
/// attention over the whole prefix.
pub fn naive_forward(config: &ModelConfig, weights: &TensorArchive, ids: &[u32]) -> NaiveOut {
    let hd = config.head_dim();
    let group = config.group_size();
    let eps = config.eps as f64;
    let theta = config.rope_theta as f64;

    let embed = fetch(weights, "embed.weight");
    let pos_embed = try_fetch(weights, "pos.weight");
    let lm_head = try_fetch(weights, "lm_head.weight");

    struct Layer {
        attn_norm_w: Mat,
        attn_norm_b: Option<Mat>,
        wq: Mat,
        wk: Mat,
        wv: Mat,
        wo: Mat,
        q_norm: Option<Mat>,
        k_norm: Option<Mat>,
        ffn_norm_w: Mat,
        ffn_norm_b: Option<Mat>,
        w_gate: Option<Mat>,
        w_up: Mat,
        w_down: Mat,
    }
    let layers: Vec<Layer> = (0..config.n_layers)
        .map(|i| Layer {
            attn_norm_w: fetch(weights, &format!("layers.{i}.attn_norm.weight")),
            attn_norm_b: try_fetch(weights, &format!("layers.{i}.attn_norm.bias")),
            wq: fetch(weights, &format!("layers.{i}.attn.wq")),
            wk: fetch(weights, &format!("layers.{i}.attn.wk")),
            wv: fetch(weights, &format!("layers.{i}.attn.wv")),
            wo: fetch(weights, &format!("layers.{i}.attn.wo")),
            q_norm: try_fetch(weights, &format!("layers.{i}.attn.q_norm.weight")),
            k_norm: try_fetch(weights, &format!("layers.{i}.attn.k_norm.weight")),
            ffn_norm_w: fetch(weights, &format!("layers.{i}.ffn_norm.weight")),
            ffn_norm_b: try_fetch(weights, &format!("layers.{i}.ffn_norm.bias")),
            w_gate: try_fetch(weights, &format!("layers.{i}.ffn.w_gate")),
            w_up: fetch(weights, &format!("layers.{i}.ffn.w_up")),
            w_down: fetch(weights, &format!("layers.{i}.ffn.w_down")),
        })
        .collect();
    let final_norm_w = fetch(weights, "final_norm.weight");
    let final_norm_b = try_fetch(weights, "final_norm.bias");

    // per-layer keys/values for all positions: [layer][pos][kv_dim]
    let mut keys: Vec<Vec<Vec<f64>>> = vec![Vec::new(); config.n_layers];
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); config.n_layers];
    let mut out = NaiveOut {
        logits: Vec::new(),
        hiddens: Vec::new(),
    };

    for (pos, &id) in ids.iter().enumerate() {
        let mut x: Vec<f64> = embed.row(id as usize).to_vec();
        if let Some(p) = &pos_embed {
            for (a, &b) in x.iter_mut().zip(p.row(pos)) {
                *a += b;
            }
        }
        let mut per_layer = Vec::with_capacity(config.n_layers);
        for (l, layer) in layers.iter().enumerate() {
            let normed = norm64(
                &x,
                config.norm_type,
                layer.attn_norm_w.row(0),
                layer.attn_norm_b.as_ref().map(|b| b.row(0)),
                eps,
            );
            let mut q = vm(&normed, &layer.wq);
            let mut k = vm(&normed, &layer.wk);
            let v = vm(&normed, &layer.wv);
            if let Some(gain) = &layer.q_norm {
                for h in q.chunks_exact_mut(hd) {
                    let normed = norm64(h, NormKind::Rms, gain.row(0), None, eps);
                    h.copy_from_slice(&normed);
                }
            }
            if let Some(gain) = &layer.k_norm {
                for h in k.chunks_exact_mut(hd) {
                    let normed = norm64(h, NormKind::Rms, gain.row(0), None, eps);
                    h.copy_from_slice(&normed);
                }
            }
            if config.pos_type == PositionKind::Rotary {
                for h in q.chunks_exact_mut(hd) {
                    rope64(h, pos, theta);
                }
                for h in k.chunks_exact_mut(hd) {
                    rope64(h, pos, theta);
                }
            }
            keys[l].push(k);
            values[l].push(v);

            let mut attn = vec![0.0; config.n_heads * hd];
            for h in 0..config.n_heads {
                let q_h = &q[h * hd..(h + 1) * hd];
                let kv_h = h / group;
                let mut scores: Vec<f64> = (0..=pos)
                    .map(|t| {
                        let k_t = &keys[l][t][kv_h * hd..(kv_h + 1) * hd];
                        q_h.iter().zip(k_t).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                softmax64(&mut scores);
                for (t, &w) in scores.iter().enumerate() {
                    let v_t = &values[l][t][kv_h * hd..(kv_h + 1) * hd];
                    for (o, &vv) in attn[h * hd..(h + 1) * hd].iter_mut().zip(v_t) {
                        *o += w * vv;
                    }
                }
            }
            let attn_out = vm(&attn, &layer.wo);
            for (a, b) in x.iter_mut().zip(&attn_out) {
                *a += b;
            }

            let normed = norm64(
                &x,
                config.norm_type,
                layer.ffn_norm_w.row(0),
                layer.ffn_norm_b.as_ref().map(|b| b.row(0)),
                eps,
            );
            let up = vm(&normed, &layer.w_up);
            let inner: Vec<f64> = match (&layer.w_gate, config.activation) {
                (Some(w_gate), ActivationKind::Silu) => {
                    let gate = vm(&normed, w_gate);
                    gate.iter().zip(&up).map(|(g, u)| silu64(*g) * u).collect()
                }
                (None, ActivationKind::Gelu) => up.iter().map(|&u| gelu64(u)).collect(),
                other => panic!("unexpected gate/activation combination {:?}", other.1),
            };
            let ffn_out = vm(&inner, &layer.w_down);
            for (a, b) in x.iter_mut().zip(&ffn_out) {
                *a += b;
            }
            per_layer.push(x.clone());
        }

        let normed = norm64(
            &x,
            config.norm_type,
            final_norm_w.row(0),
            final_norm_b.as_ref().map(|b| b.row(0)),
            eps,
        );
        let logits = match &lm_head {
            Some(w) => vm(&normed, w),
            // tied embeddings: logit[v] = <normed, embed[v]>
            None => (0..config.vocab_size)
                .map(|vtok| {
                    normed
                        .iter()
                        .zip(embed.row(vtok))
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect(),
        };
        out.logits.push(logits);
        out.hiddens.push(per_layer);
    }
    out
}

// ----------------------------------------------------------------------------
// scriptable chat-completions server

/// One scripted reply of the mock judge endpoint, consumed per request.
#[derive(Clone)]
pub enum JudgeScript {
    /// 200 with a well-formed chat-completion body carrying this content.
    Content(String),
    /// A bare HTTP status with an empty JSON body.
    Status(u16),
    /// 200 with a body that is not valid JSON.
    MalformedBody,
}

pub struct MockJudge {
    pub url: String,
    hits: Arc<AtomicUsize>,
    /// Full text of each request received, for header/body assertions.
    requests: Arc<std::sync::Mutex<Vec<String>>>,
}

impl MockJudge {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().unwrap().clone()
    }
}

/// Start a local HTTP server that answers one request per script entry, then
/// exits. The listener thread is detached; it ends when the script runs out.
pub fn spawn_judge(script: Vec<JudgeScript>) -> MockJudge {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock judge");
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let requests = Arc::new(std::sync::Mutex::new(Vec::new()));
    let thread_hits = Arc::clone(&hits);
    let thread_requests = Arc::clone(&requests);
    std::thread::spawn(move || {
        for reply in script {
            let (stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            thread_hits.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream);
            let mut request = String::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                if let Some(v) = line
                    .to_ascii_lowercase()
                    .strip_prefix("content-length:")
                    .map(str::trim)
                {
                    content_length = v.parse().unwrap_or(0);
                }
                let done = line == "\r\n" || line == "\n";
                request.push_str(&line);
                if done {
                    break;
                }
            }
            let mut body = vec![0u8; content_length];
            if content_length > 0 {
                let _ = reader.read_exact(&mut body);
            }
            request.push_str(&String::from_utf8_lossy(&body));
            thread_requests.lock().unwrap().push(request);

            let (status_line, body) = match &reply {
                JudgeScript::Content(content) => (
                    "HTTP/1.1 200 OK".to_string(),
                    serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": content}}]
                    })
                    .to_string(),
                ),
                JudgeScript::Status(code) => {
                    (format!("HTTP/1.1 {code} Injected"), "{}".to_string())
                }
                JudgeScript::MalformedBody => {
                    ("HTTP/1.1 200 OK".to_string(), "{not json at all".to_string())
                }
            };
            let response = format!(
                "{status_line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let mut stream = reader.into_inner();
            let _ = stream.write_all(response.as_bytes());
            let _ = stream.flush();
        }
    });
    MockJudge {
        url,
        hits,
        requests,
    }
}

// ----------------------------------------------------------------------------
// assertion helpers

pub fn assert_close_abs(got: f32, want: f64, tol: f64, what: &str) {
    assert!(
        (got as f64 - want).abs() <= tol,
        "{what}: got {got}, want {want} (|diff| {} > {tol})",
        (got as f64 - want).abs()
    );
}

pub fn max_abs_diff(got: &[f32], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g as f64 - w).abs())
        .fold(0.0, f64::max)
}
