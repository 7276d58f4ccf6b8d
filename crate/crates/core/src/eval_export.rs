//! Benchmark reports over a held-out test set (n-gram metrics plus judge
//! scores with the length penalty) and the final training-file export.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::answer_gen::QAPair;
use crate::gateway::Gateway;
use crate::jsonl::JsonlError;
use crate::judge::{judge_answer, JudgeConfig, JudgeError};
use crate::prompt_opt::length_penalty;
use crate::text_metrics::{metric_row_with, tokenize, MetricOptions, MetricRow, MetricsError};
use crate::util::{rng_stream, sha256_hex, text_char_len};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("duplicate question id {0}")]
    DuplicateQuestionId(String),
    #[error("split ratio {0} outside (0, 1]")]
    BadSplitRatio(f64),
    #[error("model {model}: {failed} of {total} judge calls failed, over the 20% budget")]
    FailureBudget {
        model: String,
        failed: usize,
        total: usize,
    },
    #[error("model {model} has no answered items")]
    NoAnswers { model: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One benchmark item: a question, its human reference, and each model's
/// answer (`null` marks an explicit failure for that model).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestItem {
    pub id: String,
    pub question: String,
    pub human_reference: String,
    pub model_outputs: BTreeMap<String, Option<String>>,
}

/// Per-model metric row in the shape the report tables use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub metrics: MetricRow,
    pub judge_mean: f64,
    pub length_penalty_mean: f64,
    pub comprehensive_mean: f64,
    pub item_count: usize,
}

/// Benchmark every model found in the test set: corpus n-gram metrics over
/// answered items, judge scores over the same answers, and the
/// length-penalized comprehensive mean. A model whose judge failures exceed
/// 20% of its answered items aborts the run.
pub fn run_benchmark(
    test_set: &[TestItem],
    judge_cfg: &JudgeConfig,
    judge_gateway: &Gateway,
    alpha: f64,
    metric_options: &MetricOptions,
) -> Result<Vec<EvalReport>, EvalError> {
    if test_set.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut models: Vec<String> = test_set
        .iter()
        .flat_map(|item| item.model_outputs.keys().cloned())
        .collect();
    models.sort();
    models.dedup();

    let mut reports = Vec::with_capacity(models.len());
    for model in models {
        let answered: Vec<(&TestItem, &str)> = test_set
            .iter()
            .filter_map(|item| {
                item.model_outputs
                    .get(&model)
                    .and_then(|o| o.as_deref())
                    .map(|answer| (item, answer))
            })
            .collect();
        if answered.is_empty() {
            return Err(EvalError::NoAnswers { model });
        }

        let candidates: Vec<_> = answered.iter().map(|(_, a)| tokenize(a)).collect();
        let references: Vec<_> = answered
            .iter()
            .map(|(item, _)| tokenize(&item.human_reference))
            .collect();
        let metrics = metric_row_with(&candidates, &references, metric_options)?;

        let mut judge_sum = 0.0;
        let mut penalty_sum = 0.0;
        let mut comprehensive_sum = 0.0;
        let mut scored = 0usize;
        let mut failed = 0usize;
        for (item, answer) in &answered {
            let qa = QAPair {
                question_id: format!("{model}/{}", item.id),
                question: item.question.clone(),
                answer: answer.to_string(),
                reference_paragraph_id: None,
                prompt_id: "benchmark".into(),
                model: model.clone(),
                answer_char_count: text_char_len(answer),
            };
            match judge_answer(&qa, &item.human_reference, judge_cfg, judge_gateway) {
                Ok(verdict) => {
                    let judge_score = f64::from(verdict.overall);
                    let penalty = length_penalty(
                        verdict.response_char_count,
                        verdict.reference_char_count,
                        alpha,
                    );
                    judge_sum += judge_score;
                    penalty_sum += penalty;
                    comprehensive_sum += judge_score - penalty;
                    scored += 1;
                }
                Err(JudgeError::Gateway(e)) => return Err(JudgeError::Gateway(e).into()),
                Err(e) => {
                    log::warn!("judge failed for {model}/{}: {e}", item.id);
                    failed += 1;
                }
            }
        }
        if failed * 5 > answered.len() || scored == 0 {
            return Err(EvalError::FailureBudget {
                model,
                failed,
                total: answered.len(),
            });
        }

        let count = scored as f64;
        reports.push(EvalReport {
            model_name: model,
            metrics,
            judge_mean: judge_sum / count,
            length_penalty_mean: penalty_sum / count,
            comprehensive_mean: comprehensive_sum / count,
            item_count: scored,
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

const HEADERS: [&str; 12] = [
    "Model",
    "BLEU-1",
    "BLEU-2",
    "BLEU-3",
    "BLEU-4",
    "GLEU",
    "ROUGE-1",
    "ROUGE-2",
    "ROUGE-L",
    "Comprehensive Score",
    "LLM-as-Judge",
    "Length Penalty",
];

/// Row cells shared by both output formats: three decimals for n-gram
/// metrics, two for judge-derived values.
fn row_cells(report: &EvalReport) -> Vec<String> {
    let m = &report.metrics;
    vec![
        report.model_name.clone(),
        format!("{:.3}", m.bleu_1),
        format!("{:.3}", m.bleu_2),
        format!("{:.3}", m.bleu_3),
        format!("{:.3}", m.bleu_4),
        format!("{:.3}", m.gleu),
        format!("{:.3}", m.rouge_1),
        format!("{:.3}", m.rouge_2),
        format!("{:.3}", m.rouge_l),
        format!("{:.2}", report.comprehensive_mean),
        format!("{:.2}", report.judge_mean),
        format!("{:.2}", report.length_penalty_mean),
    ]
}

/// Render reports with a deterministic column order: the n-gram columns
/// first, then the judge-derived columns.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!("| {} |\n", HEADERS.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(HEADERS.len())));
            for report in reports {
                out.push_str(&format!("| {} |\n", row_cells(report).join(" | ")));
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = String::new();
            out.push_str(&HEADERS.join(","));
            out.push('\n');
            for report in reports {
                out.push_str(&row_cells(report).join(","));
                out.push('\n');
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    /// Role-tagged message list per line, the common fine-tuning shape.
    Conversation,
    /// `{"instruction": ..., "output": ...}` per line.
    Instruction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportManifest {
    pub record_count: usize,
    pub split_counts: BTreeMap<String, usize>,
    pub content_digest: String,
    pub source_prompt_id: String,
    /// Free metadata, e.g. the fine-tuning hyperparameters downstream
    /// trainers should use.
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

fn render_pair(pair: &QAPair, format: ExportFormat) -> String {
    let value = match format {
        ExportFormat::Conversation => json!({
            "messages": [
                {"role": "user", "content": pair.question},
                {"role": "assistant", "content": pair.answer},
            ]
        }),
        ExportFormat::Instruction => json!({
            "instruction": pair.question,
            "output": pair.answer,
        }),
    };
    value.to_string()
}

/// Write the train/validation files in a seeded shuffle order and return
/// the manifest. Re-running with the same inputs and seed reproduces the
/// files and digest byte for byte.
pub fn export_training(
    pairs: &[QAPair],
    split_ratio: f64,
    rng_seed: u64,
    format: ExportFormat,
    train_path: &Path,
    val_path: &Path,
    notes: BTreeMap<String, serde_json::Value>,
) -> Result<ExportManifest, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if !(split_ratio > 0.0 && split_ratio <= 1.0) {
        return Err(EvalError::BadSplitRatio(split_ratio));
    }
    let mut seen = std::collections::HashSet::new();
    for pair in pairs {
        if !seen.insert(&pair.question_id) {
            return Err(EvalError::DuplicateQuestionId(pair.question_id.clone()));
        }
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = rng_stream(rng_seed, "export/shuffle");
    order.shuffle(&mut rng);

    let train_count = ((pairs.len() as f64 * split_ratio).round() as usize).min(pairs.len());
    let render = |indices: &[usize]| -> String {
        let mut body = String::new();
        for &i in indices {
            body.push_str(&render_pair(&pairs[i], format));
            body.push('\n');
        }
        body
    };
    let train_body = render(&order[..train_count]);
    let val_body = render(&order[train_count..]);

    for (path, body) in [(train_path, &train_body), (val_path, &val_body)] {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, body)?;
    }

    let mut digest_input = train_body.into_bytes();
    digest_input.extend_from_slice(val_body.as_bytes());

    Ok(ExportManifest {
        record_count: pairs.len(),
        split_counts: BTreeMap::from([
            ("train".to_string(), train_count),
            ("val".to_string(), pairs.len() - train_count),
        ]),
        content_digest: sha256_hex(&digest_input),
        source_prompt_id: pairs[0].prompt_id.clone(),
        notes,
    })
}
