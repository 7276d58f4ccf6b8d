//! Shared test support: independent brute-force metric oracles, pipeline
//! config builders over the bundled fixtures, and a byte-level work-dir
//! comparator. The oracles enumerate n-grams with plain vectors and use the
//! full-matrix LCS so they share no code path with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qadistill::gateway::BackendConfig;
use qadistill::pipeline::{ModelEndpoint, PipelineConfig, PipelinePaths};

pub fn testdata_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata")
}

fn endpoint(name: &str, model: &str, temperature: f64, backend: BackendConfig) -> ModelEndpoint {
    ModelEndpoint {
        name: Some(name.into()),
        model_name: model.into(),
        temperature,
        max_tokens: 1024,
        backend,
    }
}

fn base_config(work_dir: &Path) -> PipelineConfig {
    let data = testdata_dir();
    PipelineConfig {
        global_rng_seed: 42,
        paths: PipelinePaths {
            textbook: data.join("textbook.txt"),
            seed_pool: data.join("seed_pool.jsonl"),
            work_dir: work_dir.to_path_buf(),
            initial_prompts: Some(data.join("initial_prompts.txt")),
            validation_set: Some(data.join("validation_set.jsonl")),
            test_set: Some(data.join("test_set.jsonl")),
            answer_template: None,
        },
        teachers: vec![
            endpoint(
                "sim-teacher-a",
                "course-sim-a",
                0.7,
                BackendConfig::scripted(),
            ),
            endpoint(
                "sim-teacher-b",
                "course-sim-b",
                0.7,
                BackendConfig::scripted(),
            ),
        ],
        answer: endpoint("sim-answer", "course-sim-a", 0.3, BackendConfig::scripted()),
        meta: None,
        judge: qadistill::pipeline::JudgeSection {
            model_name: "course-sim-judge".into(),
            temperature: 0.0,
            parse_retries: 2,
            max_tokens: 1024,
            length_unit: Default::default(),
            backend: BackendConfig::scripted(),
        },
        split: Default::default(),
        gen: Default::default(),
        optimizer: Default::default(),
        metrics: Default::default(),
        export: Default::default(),
    }
}

/// The bundled miniature pipeline against scripted simulator backends.
pub fn sim_pipeline_config(work_dir: &Path) -> PipelineConfig {
    let mut config = base_config(work_dir);
    config.apply_seed_fanout();
    config
}

/// The same pipeline resolved purely from replay fixtures recorded under
/// `fixtures_base` (a previous run's cache tree).
pub fn replay_pipeline_config(work_dir: &Path, fixtures_base: &Path) -> PipelineConfig {
    let mut config = base_config(work_dir);
    let cache = fixtures_base.join("cache");
    config.teachers[0].backend = BackendConfig::replay(cache.join("sim-teacher-a"));
    config.teachers[1].backend = BackendConfig::replay(cache.join("sim-teacher-b"));
    config.answer.backend = BackendConfig::replay(cache.join("sim-answer"));
    config.judge.backend = BackendConfig::replay(cache.join("judge-course-sim-judge"));
    config.apply_seed_fanout();
    config
}

/// Relative path -> content digest for every file under `dir`.
pub fn dir_digest_map(dir: &Path) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.unwrap();
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(dir)
                .unwrap()
                .to_string_lossy()
                .replace('\\', "/");
            let bytes = std::fs::read(entry.path()).unwrap();
            map.insert(rel, qadistill::util::sha256_hex(&bytes));
        }
    }
    map
}

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for start in 0..=(tokens.len() - n) {
        out.push(tokens[start..start + n].to_vec());
    }
    out
}

fn count_of(haystack: &[Vec<String>], needle: &[String]) -> usize {
    haystack.iter().filter(|g| g.as_slice() == needle).count()
}

/// Clipped match count between candidate and reference n-grams, scanning
/// lists instead of hashing.
fn clipped(cand: &[Vec<String>], refs: &[Vec<String>]) -> usize {
    let mut matched = 0;
    let mut counted: Vec<&[String]> = Vec::new();
    for gram in cand {
        if counted.contains(&gram.as_slice()) {
            continue;
        }
        counted.push(gram);
        matched += count_of(cand, gram).min(count_of(refs, gram));
    }
    matched
}

/// Corpus BLEU by direct enumeration: pooled clipped counts per order,
/// geometric mean via an explicit product, brevity penalty min(1, e^(1-r/c)).
/// Orders impossible on both sides are skipped; any other zero-match order
/// gives 0.
pub fn oracle_bleu(candidates: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> f64 {
    let cand_len: usize = candidates.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    if cand_len == 0 {
        return 0.0;
    }
    let mut precisions = Vec::new();
    for n in 1..=max_n {
        let mut matched = 0;
        let mut cand_total = 0;
        let mut ref_total = 0;
        for (cand, reference) in candidates.iter().zip(references) {
            let cg = grams(cand, n);
            let rg = grams(reference, n);
            matched += clipped(&cg, &rg);
            cand_total += cg.len();
            ref_total += rg.len();
        }
        if cand_total == 0 && ref_total == 0 {
            continue;
        }
        if matched == 0 || cand_total == 0 {
            return 0.0;
        }
        precisions.push(matched as f64 / cand_total as f64);
    }
    if precisions.is_empty() {
        return 0.0;
    }
    let product: f64 = precisions.iter().product();
    let geometric = product.powf(1.0 / precisions.len() as f64);
    let brevity = (1.0 - ref_len as f64 / cand_len as f64).exp().min(1.0);
    brevity * geometric
}

/// Sentence GLEU by enumeration over pooled orders 1..4.
pub fn oracle_gleu(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut matched = 0;
    let mut cand_total = 0;
    let mut ref_total = 0;
    for n in 1..=4 {
        let cg = grams(candidate, n);
        let rg = grams(reference, n);
        matched += clipped(&cg, &rg);
        cand_total += cg.len();
        ref_total += rg.len();
    }
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    (matched as f64 / cand_total as f64).min(matched as f64 / ref_total as f64)
}

/// ROUGE-N (precision, recall, f1) by enumeration.
pub fn oracle_rouge_n(candidate: &[String], reference: &[String], n: usize) -> (f64, f64, f64) {
    let cg = grams(candidate, n);
    let rg = grams(reference, n);
    if cg.is_empty() || rg.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let matched = clipped(&cg, &rg) as f64;
    let precision = matched / cg.len() as f64;
    let recall = matched / rg.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// ROUGE-L via the full-matrix LCS dynamic program.
pub fn oracle_rouge_l(candidate: &[String], reference: &[String]) -> (f64, f64, f64) {
    if candidate.is_empty() || reference.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let rows = candidate.len() + 1;
    let cols = reference.len() + 1;
    let mut table = vec![vec![0usize; cols]; rows];
    for i in 1..rows {
        for j in 1..cols {
            table[i][j] = if candidate[i - 1] == reference[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    let lcs = table[rows - 1][cols - 1] as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Character 3-gram Jaccard by list scanning, for dedup verification.
pub fn oracle_trigram_jaccard(a: &str, b: &str) -> f64 {
    fn trigram_set(s: &str) -> Vec<String> {
        let chars: Vec<char> = s.chars().collect();
        if chars.is_empty() {
            return Vec::new();
        }
        if chars.len() < 3 {
            return vec![s.to_string()];
        }
        let mut out: Vec<String> = Vec::new();
        for start in 0..=(chars.len() - 3) {
            let gram: String = chars[start..start + 3].iter().collect();
            if !out.contains(&gram) {
                out.push(gram);
            }
        }
        out
    }
    let ga = trigram_set(a);
    let gb = trigram_set(b);
    if ga.is_empty() && gb.is_empty() {
        return 1.0;
    }
    let intersection = ga.iter().filter(|g| gb.contains(*g)).count();
    intersection as f64 / (ga.len() + gb.len() - intersection) as f64
}
