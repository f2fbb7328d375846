//! Criterion checks shared by the integration tests and the acceptance runner.
//! Each returns a short detail line on success and the failure reason otherwise.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rumorpipe::embeddings::{mix_layers, EmbeddingMix, EmbeddingStore, LayeredTokenEmbeddings, STORE_MAGIC, STORE_VERSION};
use rumorpipe::eval::{f1_scores, grouped_kfold, rmse, ConfusionMatrix};
use rumorpipe::features::{AUX_A_DIM, AUX_B_DIM};
use rumorpipe::models::{ConfigA, ConfigB, StanceClassifier, StanceModel, VeracityClassifier, VeracityModel};
use rumorpipe::nn::Tensor;
use rumorpipe::preprocess::normalize_and_tokenize;
use rumorpipe::thread_model::{Platform, Split};

use super::gradcheck::{
    layer_checks, stance_model_checks, veracity_model_checks, LAYER_TOLERANCE, MODEL_TOLERANCE,
};
use super::{dataset_from_values, fake_store, random_grouped_records, separable_stance_records};

pub type Outcome = Result<String, String>;

fn worst(checks: &[(String, f64)]) -> (String, f64) {
    checks
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, c| if c.1.is_nan() || c.1 > acc.1 { c } else { acc })
}

pub fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let layers = layer_checks();
    let mut model = stance_model_checks(1);
    model.extend(stance_model_checks(2));
    model.extend(veracity_model_checks());
    let elapsed = start.elapsed().as_secs_f64();
    let (ln, le) = worst(&layers);
    let (mn, me) = worst(&model);
    if le.is_nan() || le > LAYER_TOLERANCE {
        return Err(format!("layer check {ln}: relative error {le:.2e} > {LAYER_TOLERANCE:e}"));
    }
    if me.is_nan() || me > MODEL_TOLERANCE {
        return Err(format!("end-to-end check {mn}: relative error {me:.2e} > {MODEL_TOLERANCE:e}"));
    }
    if elapsed >= 60.0 {
        return Err(format!("took {elapsed:.1}s"));
    }
    Ok(format!(
        "{} layer checks (worst {le:.1e}), {} end-to-end checks (worst {me:.1e}), {elapsed:.2}s",
        layers.len(),
        model.len()
    ))
}

/// Training accuracy of the stance model on 32 separable posts.
pub fn stance_convergence(epochs: usize) -> Result<f64, String> {
    let data = dataset_from_values(&separable_stance_records(8, 3), Split::Train);
    assert_eq!(data.num_posts(), 32);
    let store = fake_store(&data, 3, 3, 16);
    let mix = EmbeddingMix::uniform(3);
    let config = ConfigA {
        epochs,
        ..ConfigA::default()
    };
    let (clf, _) = StanceClassifier::train(&data, &store, &mix, &config, 42).map_err(|e| e.to_string())?;
    let preds = clf.predict(&data, &store).map_err(|e| e.to_string())?;
    let correct = data
        .posts()
        .zip(&preds)
        .filter(|(p, pr)| p.sdqc_label.map(|s| s.index()) == Some(pr.class_index()))
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Stance estimates that reveal each thread's veracity through its mean
/// support, deny and query probabilities.
pub fn veracity_cue_estimates(records: &[serde_json::Value]) -> HashMap<String, [f64; 4]> {
    let data = dataset_from_values(records, Split::Train);
    let mut out = HashMap::new();
    for t in &data.threads {
        let class = t.veracity_label.map(|v| v.index()).unwrap_or(0);
        let mut p = [0.1; 4];
        p[class] = 0.7;
        for post in t.posts() {
            out.insert(post.id.clone(), p);
        }
    }
    out
}

/// Training accuracy of the veracity model on 8 threads.
pub fn veracity_convergence(epochs: usize) -> Result<f64, String> {
    let records = separable_stance_records(8, 3);
    let data = dataset_from_values(&records, Split::Train);
    assert_eq!(data.threads.len(), 8);
    let estimates = veracity_cue_estimates(&records);
    let config = ConfigB {
        epochs,
        ..ConfigB::default()
    };
    let (clf, _) = VeracityClassifier::train(&data, &estimates, &config, 7).map_err(|e| e.to_string())?;
    let preds = clf.predict(&data, &estimates).map_err(|e| e.to_string())?;
    let correct = data
        .threads
        .iter()
        .zip(&preds)
        .filter(|(t, pr)| t.veracity_label.map(|v| v.index()) == Some(pr.class_index()))
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

pub fn convergence() -> Outcome {
    let start = Instant::now();
    let a = stance_convergence(200)?;
    let b = veracity_convergence(500)?;
    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!("stance train accuracy {:.1}%, veracity {:.1}%, {elapsed:.1}s", a * 100.0, b * 100.0);
    if a >= 0.95 && b == 1.0 && elapsed < 120.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn shape_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = StanceModel::<f32>::new(&ConfigA::default(), 1024, AUX_A_DIM, &mut rng).map_err(|e| e.to_string())?;
    let b = VeracityModel::<f32>::new(&ConfigB::default(), AUX_B_DIM, &mut rng).map_err(|e| e.to_string())?;
    if a.dense_input_dim() != 139 {
        return Err(format!("stance dense input {}", a.dense_input_dim()));
    }
    if b.input_dim() != 15 {
        return Err(format!("veracity input {}", b.input_dim()));
    }
    let records = separable_stance_records(3, 2);
    let data = dataset_from_values(&records, Split::Train);
    let estimates = veracity_cue_estimates(&records);
    let config = ConfigB {
        epochs: 1,
        ..ConfigB::default()
    };
    let (clf, _) = VeracityClassifier::train(&data, &estimates, &config, 0).map_err(|e| e.to_string())?;
    if clf.model.input_dim() != 15 {
        return Err(format!("veracity features built with width {}", clf.model.input_dim()));
    }
    let mut b = b;
    let wrong = Tensor::<f32>::zeros(&[2, 14]);
    if b.forward(&wrong, false, &mut rng).is_ok() {
        return Err("veracity model accepted 14 features".into());
    }
    Ok("stance dense input 139 = 128 pooled + 11 aux; veracity input 15".into())
}

/// Per-class F1 recomputed from raw pairs, without a confusion matrix.
pub fn brute_force_f1(k: usize, gold: &[usize], pred: &[usize]) -> (Vec<f64>, f64) {
    let per: Vec<f64> = (0..k)
        .map(|c| {
            let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
            let fp = gold.iter().zip(pred).filter(|(g, p)| **g != c && **p == c).count() as f64;
            let fnn = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p != c).count() as f64;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    let macro_f1 = per.iter().sum::<f64>() / k as f64;
    (per, macro_f1)
}

pub fn random_labeling<R: Rng>(rng: &mut R) -> (usize, Vec<usize>, Vec<usize>) {
    let k = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=60);
    let skew = rng.gen_range(0.0..1.0);
    let draw = |rng: &mut R| {
        if rng.gen_bool(skew) {
            0
        } else {
            rng.gen_range(0..k)
        }
    };
    let gold = (0..n).map(|_| draw(rng)).collect();
    let pred = (0..n).map(|_| draw(rng)).collect();
    (k, gold, pred)
}

pub fn f1_oracle(samples: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..samples {
        let (k, gold, pred) = random_labeling(&mut rng);
        let cm = ConfusionMatrix::from_pairs(k, &gold, &pred).map_err(|e| e.to_string())?;
        let got = f1_scores(&cm);
        let (per, macro_f1) = brute_force_f1(k, &gold, &pred);
        if got.per_class != per || got.macro_f1 != macro_f1 {
            return Err(format!("sample {i}: {:?} vs oracle {per:?}", got.per_class));
        }
    }
    Ok(format!("{samples} random labelings agree exactly"))
}

pub fn rmse_examples() -> Outcome {
    type Case<'a> = (&'a [usize], &'a [f64], &'a [usize], f64);
    let cases: [Case; 3] = [
        (&[0, 1, 2], &[1.0, 1.0, 1.0], &[0, 1, 2], 0.0),
        (&[0, 1, 2], &[1.0, 1.0, 1.0], &[1, 2, 0], 1.0),
        (&[0, 1], &[0.8, 0.6], &[0, 0], ((0.2f64.powi(2) + 0.6f64.powi(2)) / 2.0).sqrt()),
    ];
    for (i, (pred, conf, gold, want)) in cases.iter().enumerate() {
        let got = rmse(pred, conf, gold).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-9 {
            return Err(format!("example {i}: {got} != {want}"));
        }
    }
    if rmse(&[0], &[1.0], &[0, 1]).is_ok() {
        return Err("count mismatch accepted".into());
    }
    Ok("0.0, 1.0 and 0.4472 reproduced".into())
}

pub fn metric_oracle() -> Outcome {
    let f1 = f1_oracle(1000, 2024)?;
    let r = rmse_examples()?;
    Ok(format!("{f1}; rmse {r}"))
}

pub fn preprocessing_golden() -> Outcome {
    let toks = |s: &str| normalize_and_tokenize(s).tokens;
    let cases: [(&str, Vec<&str>); 5] = [
        ("heeeeey", vec!["heeey"]),
        ("#Ebola", vec!["ebola"]),
        ("@FutbolLife", vec![]),
        ("@user thanks #Ebola heeeeey", vec!["thanks", "ebola", "heeey"]),
        ("see http://t.co/abc now", vec!["see", "now"]),
    ];
    for (input, want) in &cases {
        let got = toks(input);
        if got != *want {
            return Err(format!("{input:?} -> {got:?}, want {want:?}"));
        }
    }
    let long: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let seq = normalize_and_tokenize(&long.join(" "));
    let want: Vec<String> = long[..32].to_vec();
    if seq.tokens != want || !seq.truncated {
        return Err(format!("40 words -> {} tokens", seq.len()));
    }
    Ok(format!("{} examples plus 32-token truncation", cases.len()))
}

/// Per dataset: fold spread (max − min posts over mean fold size) and the
/// largest group over the mean fold size. Errors on any leakage.
pub fn cv_integrity(datasets: usize, k: usize, seed: u64) -> Result<Vec<(f64, f64)>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(datasets);
    for i in 0..datasets {
        let data = dataset_from_values(&random_grouped_records(&mut rng), Split::Train);
        let a = grouped_kfold(&data, k, rng.gen()).map_err(|e| e.to_string())?;
        let mut group_fold: BTreeMap<String, usize> = BTreeMap::new();
        let mut group_size: BTreeMap<String, usize> = BTreeMap::new();
        for t in &data.threads {
            let f = a.fold_of(t.id()).ok_or_else(|| format!("dataset {i}: thread {} unassigned", t.id()))?;
            if f >= k {
                return Err(format!("dataset {i}: fold {f} out of range"));
            }
            let key = match t.platform() {
                Platform::Twitter => format!("topic {}", t.topic().ok_or("twitter thread without topic")?),
                Platform::Reddit => format!("reddit thread {}", t.id()),
            };
            *group_size.entry(key.clone()).or_default() += t.len();
            if *group_fold.entry(key.clone()).or_insert(f) != f {
                return Err(format!("dataset {i}: {key} spans two folds"));
            }
        }
        if a.folds.len() != data.threads.len() {
            return Err(format!("dataset {i}: assignment covers {} of {} threads", a.folds.len(), data.threads.len()));
        }
        let mut covered = 0;
        for f in 0..k {
            let (train, test) = a.split(&data, f);
            covered += test.threads.len();
            if train.threads.iter().any(|t| test.thread(t.id()).is_some()) {
                return Err(format!("dataset {i}: fold {f} train and test overlap"));
            }
            let test_topics: Vec<_> = test.threads.iter().filter_map(|t| t.topic()).collect();
            if train
                .threads
                .iter()
                .any(|t| t.platform() == Platform::Twitter && t.topic().is_some_and(|tp| test_topics.contains(&tp)))
            {
                return Err(format!("dataset {i}: fold {f} topic leaks into training"));
            }
        }
        if covered != data.threads.len() {
            return Err(format!("dataset {i}: test folds cover {covered} of {} threads", data.threads.len()));
        }
        let sizes = a.fold_sizes(&data);
        let mean = sizes.iter().sum::<usize>() as f64 / k as f64;
        let spread = (sizes.iter().max().unwrap_or(&0) - sizes.iter().min().unwrap_or(&0)) as f64;
        let largest = group_size.values().copied().max().unwrap_or(0) as f64;
        out.push((spread / mean, largest / mean));
    }
    Ok(out)
}

pub const CV_FOLDS: usize = 5;
pub const CV_MAX_IMBALANCE: f64 = 0.2;

pub fn cv_integrity_criterion() -> Outcome {
    let gated = cv_integrity(100, CV_FOLDS, 7)?;
    let worst = gated.iter().map(|r| r.0).fold(0.0, f64::max);
    let ten = cv_integrity(100, 10, 7)?;
    let over: Vec<_> = ten.iter().filter(|r| r.0 > CV_MAX_IMBALANCE).collect();
    let unattainable = over.iter().filter(|r| r.1 > 1.0 + CV_MAX_IMBALANCE).count();
    let detail = format!(
        "100 datasets, no leakage; {CV_FOLDS} folds: worst imbalance {:.1}% of mean fold size; \
         10 folds: {} datasets above {:.0}% ({unattainable} with one group larger than {:.0}% of a mean fold)",
        worst * 100.0,
        over.len(),
        CV_MAX_IMBALANCE * 100.0,
        (1.0 + CV_MAX_IMBALANCE) * 100.0
    );
    if worst <= CV_MAX_IMBALANCE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn random_store(posts: usize, dim: usize, layers: usize, seed: u64) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new(dim, layers);
    for i in 0..posts {
        let t = rng.gen_range(1..=32);
        let values = (0..layers * t * dim)
            .map(|_| match rng.gen_range(0..10) {
                0 => f32::from_bits(rng.gen_range(1..0x0080_0000)) * if rng.gen() { 1.0 } else { -1.0 },
                1 => -0.0,
                _ => rng.gen_range(-1e4f32..1e4),
            })
            .collect();
        let id = if i % 7 == 0 { format!("пост-{i}") } else { format!("{}", 10u64.pow(17) + i as u64) };
        store.insert(LayeredTokenEmbeddings::new(id, layers, t, dim, values).unwrap()).unwrap();
    }
    store
}

fn bitwise_equal(a: &EmbeddingStore, b: &EmbeddingStore) -> bool {
    a.dim() == b.dim()
        && a.layers() == b.layers()
        && a.len() == b.len()
        && a.iter().zip(b.iter()).all(|(x, y)| {
            x.post_id == y.post_id
                && x.tokens() == y.tokens()
                && x.values().iter().map(|v| v.to_bits()).eq(y.values().iter().map(|v| v.to_bits()))
        })
}

/// Corruptions of a valid store's bytes that loading must reject.
pub fn malformed_variants(valid: &[u8]) -> Vec<(&'static str, Vec<u8>)> {
    let mut out = Vec::new();
    let mut v = valid.to_vec();
    v[0] = b'X';
    out.push(("bad magic", v));
    let mut v = valid.to_vec();
    v[4..6].copy_from_slice(&(STORE_VERSION + 1).to_le_bytes());
    out.push(("unknown version", v));
    let mut v = valid.to_vec();
    v[6..10].copy_from_slice(&0u32.to_le_bytes());
    out.push(("zero dimension", v));
    let mut v = valid.to_vec();
    v[10..14].copy_from_slice(&0u32.to_le_bytes());
    out.push(("zero layers", v));
    let mut v = valid.to_vec();
    let count = u64::from_le_bytes(v[14..22].try_into().unwrap());
    v[14..22].copy_from_slice(&(count + 1).to_le_bytes());
    out.push(("count too large", v));
    out.push(("truncated header", valid[..10].to_vec()));
    out.push(("truncated body", valid[..valid.len() - 3].to_vec()));
    let mut v = valid.to_vec();
    v.push(0);
    out.push(("trailing byte", v));
    out.push(("empty file", Vec::new()));
    out
}

pub fn store_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("store.bin");
    let store = random_store(1000, 16, 3, 99);
    store.save(&path).map_err(|e| e.to_string())?;
    let back = EmbeddingStore::load(&path).map_err(|e| e.to_string())?;
    if !bitwise_equal(&store, &back) {
        return Err("loaded store differs".into());
    }
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    if &bytes[..4] != STORE_MAGIC {
        return Err("missing magic".into());
    }
    let mut resaved = Vec::new();
    back.write_to(&mut resaved).map_err(|e| e.to_string())?;
    if resaved != bytes {
        return Err("re-serialized bytes differ".into());
    }
    let variants = malformed_variants(&bytes);
    for (name, v) in &variants {
        if EmbeddingStore::read_from(v.as_slice()).is_ok() {
            return Err(format!("{name} accepted"));
        }
    }
    Ok(format!("1000 posts, D=16, 3 layers bitwise exact; {} malformed files rejected", variants.len()))
}

/// Writes a store byte by byte from the format description, independently of
/// the library writer, as an external exporter would.
pub fn exporter_bytes(dim: usize, layers: usize, posts: &[(String, Vec<Vec<Vec<f32>>>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"CLRE");
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(layers as u32).to_le_bytes());
    out.extend_from_slice(&(posts.len() as u64).to_le_bytes());
    for (id, per_layer) in posts {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&(per_layer[0].len() as u16).to_le_bytes());
        for layer in per_layer {
            for token in layer {
                for v in token {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn exporter_interface() -> Outcome {
    let records = separable_stance_records(25, 3);
    let data = dataset_from_values(&records, Split::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (dim, layers) = (8, 3);
    let posts: Vec<(String, Vec<Vec<Vec<f32>>>)> = data
        .posts()
        .map(|p| {
            let t = normalize_and_tokenize(&p.raw_text).model_tokens().len();
            let per_layer = (0..layers)
                .map(|_| (0..t).map(|_| (0..dim).map(|_| rng.gen_range(-2.0f32..2.0)).collect()).collect())
                .collect();
            (p.id.clone(), per_layer)
        })
        .collect();
    if posts.len() != 100 {
        return Err(format!("sample has {} posts", posts.len()));
    }
    let bytes = exporter_bytes(dim, layers, &posts);
    let store = EmbeddingStore::read_from(bytes.as_slice()).map_err(|e| e.to_string())?;
    for (id, per_layer) in &posts {
        let e = store.get(id).map_err(|e| e.to_string())?;
        let mixed = mix_layers::<f32>(e, &EmbeddingMix::selector(0, layers)).map_err(|e| e.to_string())?;
        let want: Vec<f32> = per_layer[0].iter().flatten().copied().collect();
        if mixed.data() != want.as_slice() {
            return Err(format!("post {id}: selector mix does not recover layer 0"));
        }
    }
    let empty = exporter_bytes(dim, layers, &[]);
    let store = EmbeddingStore::read_from(empty.as_slice()).map_err(|e| e.to_string())?;
    if !store.is_empty() {
        return Err("empty export not empty".into());
    }
    Ok("100-post externally written store loads; selector mix recovers layer 0 exactly".into())
}


/// Writes the synthetic dataset and a fake store into `dir`.
pub fn cli_fixture(dir: &std::path::Path) -> Result<(), String> {
    super::write_jsonl(&dir.join("data.jsonl"), &separable_stance_records(30, 4));
    let out = super::rumorpipe(&[
        "embed-fake".as_ref(),
        "--data".as_ref(),
        dir.join("data.jsonl").as_os_str(),
        "--out".as_ref(),
        dir.join("store.bin").as_os_str(),
        "--dim".as_ref(),
        "16".as_ref(),
    ]);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("embed-fake failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

pub fn cv_report_bytes(dir: &std::path::Path, out_name: &str) -> Result<Vec<u8>, String> {
    let out_dir = dir.join(out_name);
    let out = super::rumorpipe(&[
        "cv".as_ref(),
        "--task".as_ref(),
        "a".as_ref(),
        "--repeats".as_ref(),
        "2".as_ref(),
        "--seed".as_ref(),
        "42".as_ref(),
        "--data".as_ref(),
        dir.join("data.jsonl").as_os_str(),
        "--store".as_ref(),
        dir.join("store.bin").as_os_str(),
        "--out".as_ref(),
        out_dir.as_os_str(),
    ]);
    if !out.status.success() {
        return Err(format!("cv failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    std::fs::read(out_dir.join("report.json")).map_err(|e| e.to_string())
}

pub fn cv_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_fixture(dir.path())?;
    let first = cv_report_bytes(dir.path(), "run1")?;
    let second = cv_report_bytes(dir.path(), "run2")?;
    if first == second {
        Ok(format!("two runs wrote identical report.json ({} bytes)", first.len()))
    } else {
        Err("report.json differs between runs".into())
    }
}
