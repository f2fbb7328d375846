#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use rand::Rng;
use serde_json::{json, Value};

use rumorpipe::embeddings::{EmbeddingStore, FakeEmbedder};
use rumorpipe::preprocess::normalize_and_tokenize;
use rumorpipe::thread_model::{parse_dataset, Dataset, Split, Stance, Veracity};

pub fn dataset_from_values(records: &[Value], split: Split) -> Dataset {
    let text: Vec<String> = records.iter().map(|r| r.to_string()).collect();
    parse_dataset(text.join("\n").as_bytes(), split).expect("synthetic dataset").0
}

pub fn write_jsonl(path: &std::path::Path, records: &[Value]) {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

pub fn fake_store(dataset: &Dataset, seed: u64, layers: usize, dim: usize) -> EmbeddingStore {
    let seqs: Vec<(String, _)> = dataset
        .posts()
        .map(|p| (p.id.clone(), normalize_and_tokenize(&p.raw_text)))
        .collect();
    FakeEmbedder::new(seed, layers, dim)
        .build_store(seqs.iter().map(|(id, s)| (id.as_str(), s)))
        .unwrap()
}

const CUES: [[&str; 2]; 4] = [["agreed", "confirmed"], ["fake", "hoax"], ["source", "proof"], ["lol", "whatever"]];

/// Threads of one source plus replies. Every post carries two cue words for
/// its stance class at fixed leading positions, then a unique filler word.
pub fn separable_stance_records(threads: usize, replies: usize) -> Vec<Value> {
    let mut out = Vec::new();
    let mut n = 0usize;
    for t in 0..threads {
        for r in 0..=replies {
            let class = (r + t) % 4;
            let [a, b] = CUES[class];
            let id = format!("t{t}p{r}");
            let parent = if r == 0 {
                Value::Null
            } else if r == 1 {
                json!(format!("t{t}p0"))
            } else {
                json!(format!("t{t}p{}", r - 1))
            };
            out.push(json!({
                "id": id,
                "thread_id": format!("t{t}"),
                "parent_id": parent,
                "platform": if t % 2 == 0 { "twitter" } else { "reddit" },
                "topic": format!("topic{}", t % 3),
                "text": format!("{a} {b} filler{n}"),
                "user_verified": t % 3 == 0,
                "follower_count": 10 * t as u64 + r as u64,
                "following_count": 5 + r as u64,
                "sdqc_label": Stance::ALL[class].as_str(),
                "veracity_label": if r == 0 { json!(Veracity::ALL[t % 3].as_str()) } else { Value::Null },
            }));
            n += 1;
        }
    }
    for rec in &mut out {
        if rec["veracity_label"].is_null() {
            rec.as_object_mut().unwrap().remove("veracity_label");
        }
        if rec["platform"] == "reddit" {
            rec.as_object_mut().unwrap().remove("topic");
        }
    }
    out
}

/// Random Twitter topics and Reddit threads with varied sizes.
pub fn random_grouped_records<R: Rng>(rng: &mut R) -> Vec<Value> {
    let mut out = Vec::new();
    let topics = rng.gen_range(10..40);
    let reddit = rng.gen_range(10..40);
    let mut t = 0usize;
    let push_thread = |out: &mut Vec<Value>, topic: Option<String>, size: usize, t: usize| {
        for r in 0..size {
            let mut rec = json!({
                "id": format!("t{t}p{r}"),
                "thread_id": format!("t{t}"),
                "parent_id": if r == 0 { Value::Null } else { json!(format!("t{t}p0")) },
                "platform": if topic.is_some() { "twitter" } else { "reddit" },
                "text": "x",
            });
            if let Some(tp) = &topic {
                rec["topic"] = json!(tp);
            }
            out.push(rec);
        }
    };
    for topic in 0..topics {
        for _ in 0..rng.gen_range(1..=6) {
            let size = rng.gen_range(2..=12);
            push_thread(&mut out, Some(format!("topic{topic}")), size, t);
            t += 1;
        }
    }
    for _ in 0..reddit {
        let size = rng.gen_range(1..=10);
        push_thread(&mut out, None, size, t);
        t += 1;
    }
    out
}

/// ‖a − b‖ / max(‖a‖, ‖b‖); 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `loss` with respect to every entry of the slice
/// selected by `entry`, perturbing in place.
pub fn central_differences<M>(
    model: &mut M,
    len: usize,
    entry: impl Fn(&mut M, usize) -> &mut f64,
    mut loss: impl FnMut(&mut M) -> f64,
) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let orig = *entry(model, i);
            *entry(model, i) = orig + FD_STEP;
            let up = loss(model);
            *entry(model, i) = orig - FD_STEP;
            let down = loss(model);
            *entry(model, i) = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Runs the built binary with logging silenced.
pub fn rumorpipe<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_rumorpipe"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn rumorpipe")
}
