//! Discrete prompt optimization: score candidate system prompts on a
//! validation set with the length-penalized comprehensive score, keep the
//! top five, and breed the next generation through reflection on judge
//! feedback plus pattern-driven resampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer_gen::QAPair;
use crate::gateway::{ChatMessage, Gateway, GatewayError, ModelParams};
use crate::judge::{judge_answer, JudgeConfig, JudgeError, JudgeVerdict};
use crate::prompt_text as pt;
use crate::question_gen::match_list_item;
use crate::util::{rng_stream, stable_id, text_char_len};

#[derive(Debug, Error)]
pub enum PromptOptError {
    #[error("pool of {found} is smaller than k = {needed}")]
    PoolTooSmall { needed: usize, found: usize },
    #[error("initial pool has {found} prompts, config expects {expected}")]
    BadInitialPool { expected: usize, found: usize },
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("candidate {prompt_id} failed on {failed} of {total} items")]
    CandidateFailed {
        prompt_id: String,
        failed: usize,
        total: usize,
    },
    #[error("no prompt could be parsed from the model output")]
    EmptyParse,
    #[error("no feedback verdicts available for {0}")]
    NoFeedback(String),
    #[error("iteration {0} produced no scoreable candidate")]
    GenerationFailed(u32),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lineage {
    Initial,
    Reflected,
    Resampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: String,
    pub text: String,
    pub generation: u32,
    pub lineage: Lineage,
    #[serde(default)]
    pub parent_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerItemScore {
    pub qa_id: String,
    pub judge_score: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Validation-set score decomposition for one candidate prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt_id: String,
    pub per_item: Vec<PerItemScore>,
    pub judge_mean: f64,
    pub penalty_mean: f64,
    pub comprehensive: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_feedback_samples")]
    pub feedback_samples: usize,
    #[serde(default = "default_initial_pool_size")]
    pub initial_pool_size: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_iterations() -> u32 {
    3
}
fn default_top_k() -> usize {
    5
}
fn default_feedback_samples() -> usize {
    5
}
fn default_initial_pool_size() -> usize {
    10
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            iterations: default_iterations(),
            top_k: default_top_k(),
            feedback_samples: default_feedback_samples(),
            initial_pool_size: default_initial_pool_size(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationItem {
    pub qa_id: String,
    pub question: String,
    pub human_reference: String,
    /// Whitespace-normalized character count of the reference.
    pub reference_char_count: usize,
}

impl ValidationItem {
    pub fn new(
        qa_id: impl Into<String>,
        question: impl Into<String>,
        reference: impl Into<String>,
    ) -> Self {
        let human_reference = reference.into();
        Self {
            qa_id: qa_id.into(),
            question: question.into(),
            reference_char_count: text_char_len(&human_reference),
            human_reference,
        }
    }
}

/// Penalty applied only when the response exceeds the reference length:
/// zero then, otherwise `alpha * (l_res / l_ref - 1)`.
pub fn length_penalty(response_len: usize, reference_len: usize, alpha: f64) -> f64 {
    debug_assert!(reference_len >= 1);
    if response_len <= reference_len {
        0.0
    } else {
        alpha * (response_len as f64 / reference_len as f64 - 1.0)
    }
}

/// Judge score minus the length penalty. No clamping: verbose answers can
/// drive the value below the judge scale.
pub fn comprehensive_score(
    judge_score: f64,
    response_len: usize,
    reference_len: usize,
    alpha: f64,
) -> f64 {
    judge_score - length_penalty(response_len, reference_len, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: PromptCandidate,
    pub score: PromptScore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSnapshot {
    pub generation: u32,
    pub entries: Vec<ScoredCandidate>,
}

/// Gateways and decoding parameters for the three roles the optimizer
/// exercises: answering, judging, and prompt rewriting.
pub struct OptimizerBackends<'a> {
    pub answer_params: &'a ModelParams,
    pub answer_gateway: &'a Gateway,
    pub judge_cfg: &'a JudgeConfig,
    pub judge_gateway: &'a Gateway,
    pub meta_params: &'a ModelParams,
    pub meta_gateway: &'a Gateway,
}

/// Descending score, ties broken by shorter prompt text, then id. Total
/// and permutation-stable, so shuffled input never changes the selection.
fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    b.score
        .comprehensive
        .total_cmp(&a.score.comprehensive)
        .then_with(|| {
            a.candidate
                .text
                .chars()
                .count()
                .cmp(&b.candidate.text.chars().count())
        })
        .then_with(|| a.candidate.id.cmp(&b.candidate.id))
}

/// The top `k` scored candidates in descending comprehensive order.
pub fn select_top(
    pool: &[ScoredCandidate],
    k: usize,
) -> Result<Vec<ScoredCandidate>, PromptOptError> {
    if pool.len() < k {
        return Err(PromptOptError::PoolTooSmall {
            needed: k,
            found: pool.len(),
        });
    }
    let mut sorted: Vec<ScoredCandidate> = pool.to_vec();
    sorted.sort_by(rank_order);
    sorted.truncate(k);
    Ok(sorted)
}

/// Score one candidate on the validation set: answer every item with the
/// candidate as system prompt, judge against the human reference, apply the
/// length penalty, and average. Items that fail answering or judging are
/// excluded and counted; more than 20% failures fails the candidate.
pub fn score_candidate(
    candidate: &PromptCandidate,
    valset: &[ValidationItem],
    backends: &OptimizerBackends,
    alpha: f64,
) -> Result<(PromptScore, Vec<JudgeVerdict>), PromptOptError> {
    if valset.is_empty() {
        return Err(PromptOptError::EmptyValidationSet);
    }

    let requests: Vec<_> = valset
        .iter()
        .map(|item| {
            backends.answer_params.request(vec![
                ChatMessage::system(candidate.text.clone()),
                ChatMessage::user(item.question.clone()),
            ])
        })
        .collect();
    let responses = backends.answer_gateway.complete_batch(&requests);

    let mut per_item = Vec::new();
    let mut verdicts = Vec::new();
    let mut failed = 0usize;

    for (item, response) in valset.iter().zip(responses) {
        let answer = match response {
            Ok(r) if !r.content.trim().is_empty() => r.content,
            Ok(_) | Err(_) => {
                failed += 1;
                continue;
            }
        };
        let qa = QAPair {
            question_id: item.qa_id.clone(),
            question: item.question.clone(),
            answer_char_count: text_char_len(&answer),
            answer,
            reference_paragraph_id: None,
            prompt_id: candidate.id.clone(),
            model: backends.answer_params.model_name.clone(),
        };
        let verdict = match judge_answer(
            &qa,
            &item.human_reference,
            backends.judge_cfg,
            backends.judge_gateway,
        ) {
            Ok(v) => v,
            Err(JudgeError::Gateway(e)) => return Err(e.into()),
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        let judge_score = f64::from(verdict.overall);
        let penalty = length_penalty(
            verdict.response_char_count,
            verdict.reference_char_count,
            alpha,
        );
        per_item.push(PerItemScore {
            qa_id: item.qa_id.clone(),
            judge_score,
            penalty,
            score: judge_score - penalty,
        });
        verdicts.push(verdict);
    }

    if failed * 5 > valset.len() {
        return Err(PromptOptError::CandidateFailed {
            prompt_id: candidate.id.clone(),
            failed,
            total: valset.len(),
        });
    }

    let count = per_item.len() as f64;
    let score = PromptScore {
        prompt_id: candidate.id.clone(),
        judge_mean: per_item.iter().map(|i| i.judge_score).sum::<f64>() / count,
        penalty_mean: per_item.iter().map(|i| i.penalty).sum::<f64>() / count,
        comprehensive: per_item.iter().map(|i| i.score).sum::<f64>() / count,
        per_item,
    };
    Ok((score, verdicts))
}

fn extract_prompt_block(output: &str) -> Result<String, PromptOptError> {
    let extracted = output
        .split_once(pt::PROMPT_OPEN)
        .and_then(|(_, rest)| rest.split_once(pt::PROMPT_CLOSE))
        .map(|(inner, _)| inner.trim().to_string())
        .unwrap_or_else(|| output.trim().to_string());
    if extracted.is_empty() {
        return Err(PromptOptError::EmptyParse);
    }
    Ok(extracted)
}

/// Sample up to `feedback_samples` judge rationales for the candidate,
/// ask the model to diagnose weaknesses, and return the single improved
/// prompt as a reflected child.
pub fn reflect(
    candidate: &PromptCandidate,
    score: &PromptScore,
    verdicts: &[JudgeVerdict],
    feedback_samples: usize,
    rng: &mut ChaCha12Rng,
    meta_params: &ModelParams,
    meta_gateway: &Gateway,
) -> Result<PromptCandidate, PromptOptError> {
    if verdicts.is_empty() {
        return Err(PromptOptError::NoFeedback(candidate.id.clone()));
    }
    let take = feedback_samples.min(verdicts.len());
    let picked = sample_indices(rng, verdicts.len(), take);

    let mut user = String::new();
    user.push_str(pt::REFLECT_TASK_LINE);
    user.push_str("\n\nCurrent prompt (validation score ");
    user.push_str(&format!("{:.2}", score.comprehensive));
    user.push_str("):\n");
    user.push_str(pt::PROMPT_OPEN);
    user.push('\n');
    user.push_str(&candidate.text);
    user.push('\n');
    user.push_str(pt::PROMPT_CLOSE);
    user.push_str("\n\n");
    user.push_str(pt::REFLECT_FEEDBACK_HEADER);
    user.push('\n');
    for (i, index) in picked.iter().enumerate() {
        user.push_str(&format!("{}. {}\n", i + 1, verdicts[index].rationale_text));
    }
    user.push('\n');
    user.push_str(pt::REFLECT_INSTRUCTION);

    let request = meta_params.request(vec![ChatMessage::user(user)]);
    let response = meta_gateway.complete(&request)?;
    let text = extract_prompt_block(&response.content)?;

    let generation = candidate.generation + 1;
    Ok(PromptCandidate {
        id: stable_id(
            "p",
            &["reflect", &candidate.id, &generation.to_string(), &text],
        ),
        text,
        generation,
        lineage: Lineage::Reflected,
        parent_ids: vec![candidate.id.clone()],
    })
}

fn parse_numbered_blocks(output: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for line in output.lines() {
        if let Some(rest) = match_list_item(line) {
            items.push(rest);
        } else if let Some(current) = items.last_mut() {
            let continuation = line.trim();
            if !continuation.is_empty() {
                current.push(' ');
                current.push_str(continuation);
            }
        }
    }
    items
}

/// Show the top prompts with their scores in descending order and ask for
/// `n_out` fresh prompts exploiting the observed patterns. A short parse
/// keeps whatever came back and logs the shortfall.
pub fn resample(
    top: &[ScoredCandidate],
    n_out: usize,
    meta_params: &ModelParams,
    meta_gateway: &Gateway,
) -> Result<Vec<PromptCandidate>, PromptOptError> {
    if top.is_empty() {
        return Err(PromptOptError::PoolTooSmall {
            needed: 1,
            found: 0,
        });
    }

    let mut user = String::new();
    user.push_str(pt::RESAMPLE_TASK_LINE);
    user.push_str("\n\n");
    user.push_str(pt::RESAMPLE_SCORES_HEADER);
    user.push('\n');
    for (i, entry) in top.iter().enumerate() {
        user.push_str(&format!(
            "{}. (score {:.2}) {}\n",
            i + 1,
            entry.score.comprehensive,
            entry.candidate.text
        ));
    }
    user.push('\n');
    user.push_str(&pt::numbered_list_instruction(
        n_out,
        "answering prompts that keep the high-scoring patterns while staying concise",
    ));

    let request = meta_params.request(vec![ChatMessage::user(user)]);
    let response = meta_gateway.complete(&request)?;
    let texts = parse_numbered_blocks(&response.content);
    if texts.is_empty() {
        return Err(PromptOptError::EmptyParse);
    }
    if texts.len() < n_out {
        log::warn!(
            "resample returned {} of {} requested prompts",
            texts.len(),
            n_out
        );
    }

    let generation = top
        .iter()
        .map(|e| e.candidate.generation)
        .max()
        .unwrap_or(0)
        + 1;
    let parent_ids: Vec<String> = top.iter().map(|e| e.candidate.id.clone()).collect();
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| PromptCandidate {
            id: stable_id(
                "p",
                &["resample", &generation.to_string(), &i.to_string(), &text],
            ),
            text,
            generation,
            lineage: Lineage::Resampled,
            parent_ids: parent_ids.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    completed_iterations: u32,
    pool: Vec<ScoredCandidate>,
    history: Vec<GenerationSnapshot>,
    verdicts: BTreeMap<String, Vec<JudgeVerdict>>,
    scored: BTreeMap<String, ScoredCandidate>,
}

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub best: PromptCandidate,
    pub best_score: PromptScore,
    pub history: Vec<GenerationSnapshot>,
}

struct OptimizerState {
    pool: Vec<ScoredCandidate>,
    history: Vec<GenerationSnapshot>,
    verdicts: BTreeMap<String, Vec<JudgeVerdict>>,
    scored: BTreeMap<String, ScoredCandidate>,
    completed_iterations: u32,
}

impl OptimizerState {
    /// Score candidates, reusing cached scores: a surviving candidate is
    /// never re-judged. Unscoreable candidates are logged and skipped.
    fn score_all(
        &mut self,
        candidates: &[PromptCandidate],
        valset: &[ValidationItem],
        backends: &OptimizerBackends,
        alpha: f64,
    ) -> Result<Vec<ScoredCandidate>, PromptOptError> {
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for candidate in candidates {
            if !seen.insert(candidate.id.clone()) {
                continue;
            }
            if let Some(existing) = self.scored.get(&candidate.id) {
                out.push(existing.clone());
                continue;
            }
            match score_candidate(candidate, valset, backends, alpha) {
                Ok((score, verdicts)) => {
                    let entry = ScoredCandidate {
                        candidate: candidate.clone(),
                        score,
                    };
                    self.scored.insert(candidate.id.clone(), entry.clone());
                    self.verdicts.insert(candidate.id.clone(), verdicts);
                    out.push(entry);
                }
                Err(PromptOptError::Gateway(e)) => return Err(e.into()),
                Err(e) => log::warn!("candidate {} not scoreable: {e}", candidate.id),
            }
        }
        Ok(out)
    }

    fn save(&self, path: &Path) -> Result<(), PromptOptError> {
        let checkpoint = Checkpoint {
            completed_iterations: self.completed_iterations,
            pool: self.pool.clone(),
            history: self.history.clone(),
            verdicts: self.verdicts.clone(),
            scored: self.scored.clone(),
        };
        let body = serde_json::to_string_pretty(&checkpoint)
            .map_err(|e| PromptOptError::Checkpoint(e.to_string()))?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| PromptOptError::Checkpoint(e.to_string()))?;
        }
        std::fs::write(path, body).map_err(|e| PromptOptError::Checkpoint(e.to_string()))
    }

    fn load(path: &Path) -> Result<Option<Self>, PromptOptError> {
        let bytes = match std::fs::read(path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(PromptOptError::Checkpoint(e.to_string())),
        };
        let checkpoint: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| PromptOptError::Checkpoint(e.to_string()))?;
        Ok(Some(Self {
            pool: checkpoint.pool,
            history: checkpoint.history,
            verdicts: checkpoint.verdicts,
            scored: checkpoint.scored,
            completed_iterations: checkpoint.completed_iterations,
        }))
    }
}

/// Run the optimization loop: score the initial pool, then for each
/// iteration keep the top five, breed five reflected and five resampled
/// children, score them, and carry survivors forward. Returns the best
/// candidate ever scored plus the per-generation history.
///
/// With a `checkpoint` path, state is saved after every generation and an
/// interrupted run resumes from the last completed one.
pub fn optimize(
    initial: &[PromptCandidate],
    valset: &[ValidationItem],
    cfg: &OptimizerConfig,
    backends: &OptimizerBackends,
    checkpoint: Option<&Path>,
) -> Result<OptimizeOutcome, PromptOptError> {
    if initial.len() != cfg.initial_pool_size {
        return Err(PromptOptError::BadInitialPool {
            expected: cfg.initial_pool_size,
            found: initial.len(),
        });
    }
    if valset.is_empty() {
        return Err(PromptOptError::EmptyValidationSet);
    }

    let mut state = match checkpoint.map(OptimizerState::load).transpose()?.flatten() {
        Some(state) => {
            log::info!(
                "resuming optimization after {} completed iterations",
                state.completed_iterations
            );
            state
        }
        None => {
            let mut state = OptimizerState {
                pool: Vec::new(),
                history: Vec::new(),
                verdicts: BTreeMap::new(),
                scored: BTreeMap::new(),
                completed_iterations: 0,
            };
            let scored = state.score_all(initial, valset, backends, cfg.alpha)?;
            if scored.is_empty() {
                return Err(PromptOptError::GenerationFailed(0));
            }
            state.pool = scored.clone();
            state.history.push(GenerationSnapshot {
                generation: 0,
                entries: scored,
            });
            if let Some(path) = checkpoint {
                state.save(path)?;
            }
            state
        }
    };

    for iteration in (state.completed_iterations + 1)..=cfg.iterations {
        let k = cfg.top_k.min(state.pool.len());
        let top = select_top(&state.pool, k)?;

        let mut children: Vec<PromptCandidate> = Vec::new();
        for entry in &top {
            let mut rng = rng_stream(
                cfg.rng_seed,
                &format!("reflect/gen{iteration}/{}", entry.candidate.id),
            );
            let feedback = state
                .verdicts
                .get(&entry.candidate.id)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            match reflect(
                &entry.candidate,
                &entry.score,
                feedback,
                cfg.feedback_samples,
                &mut rng,
                backends.meta_params,
                backends.meta_gateway,
            ) {
                Ok(child) => children.push(child),
                Err(PromptOptError::Gateway(e)) => return Err(e.into()),
                Err(e) => log::warn!("reflection of {} failed: {e}", entry.candidate.id),
            }
        }
        match resample(&top, top.len(), backends.meta_params, backends.meta_gateway) {
            Ok(batch) => children.extend(batch),
            Err(PromptOptError::Gateway(e)) => return Err(e.into()),
            Err(e) => log::warn!("resampling failed at iteration {iteration}: {e}"),
        }

        let scored_children = state.score_all(&children, valset, backends, cfg.alpha)?;
        if scored_children.is_empty() {
            return Err(PromptOptError::GenerationFailed(iteration));
        }

        // Survivor carry-over: previous top-k stays in the pool alongside
        // the new children, deduplicated by id.
        let mut next_pool = top;
        let mut ids: std::collections::HashSet<String> =
            next_pool.iter().map(|e| e.candidate.id.clone()).collect();
        for entry in scored_children {
            if ids.insert(entry.candidate.id.clone()) {
                next_pool.push(entry);
            }
        }
        state.pool = next_pool;
        state.history.push(GenerationSnapshot {
            generation: iteration,
            entries: state.pool.clone(),
        });
        state.completed_iterations = iteration;
        if let Some(path) = checkpoint {
            state.save(path)?;
        }
    }

    let best = state
        .scored
        .values()
        .max_by(|a, b| rank_order(b, a))
        .expect("at least one scored candidate");
    Ok(OptimizeOutcome {
        best: best.candidate.clone(),
        best_score: best.score.clone(),
        history: state.history,
    })
}

/// Parse an initial-prompts file: plain text blocks separated by blank
/// lines, one candidate per block.
pub fn load_initial_prompts(path: &Path) -> Result<Vec<PromptCandidate>, PromptOptError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| PromptOptError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut prompts = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let flush = |block: &mut Vec<&str>, prompts: &mut Vec<PromptCandidate>| {
        if block.is_empty() {
            return;
        }
        let text = block.join("\n");
        let index = prompts.len();
        prompts.push(PromptCandidate {
            id: stable_id("p", &["initial", &index.to_string(), &text]),
            text,
            generation: 0,
            lineage: Lineage::Initial,
            parent_ids: Vec::new(),
        });
        block.clear();
    };
    for line in raw.lines() {
        if line.trim().is_empty() {
            flush(&mut block, &mut prompts);
        } else {
            block.push(line.trim_end());
        }
    }
    flush(&mut block, &mut prompts);
    if prompts.is_empty() {
        return Err(PromptOptError::EmptyParse);
    }
    Ok(prompts)
}
