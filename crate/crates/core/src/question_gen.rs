//! Question construction: paragraph-grounded generation with mixed in-context
//! examples, iterative sampling of new questions from earlier rounds, and
//! cross-model merge with exact plus 3-gram-Jaccard deduplication.

use std::collections::HashSet;
use std::sync::LazyLock;

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha12Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, ModelParams};
use crate::ingest::{SeedQuestion, TextbookParagraph};
use crate::prompt_text as pt;
use crate::util::{rng_stream, stable_id};

#[derive(Debug, Error)]
pub enum QuestionGenError {
    #[error("no questions could be parsed from the model output")]
    EmptyParse,
    #[error("pool too small: need {needed}, found {found}")]
    InsufficientPool { needed: usize, found: usize },
    #[error("bad in-context example mix: {0}")]
    BadExamples(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionOrigin {
    Paragraph,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    pub origin: QuestionOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_paragraph_id: Option<String>,
    pub generator_model: String,
    pub round: u32,
}

/// Knobs for question generation. The 6/2/3 example counts and the two
/// sampling rounds are the published recipe; they stay configurable but a
/// deviation is flagged at config validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenPlan {
    /// Nominal question count per sampling call. Paragraph-grounded calls
    /// derive their own target from paragraph length instead.
    #[serde(default = "default_per_paragraph_target")]
    pub per_paragraph_target: usize,
    #[serde(default = "default_seed_count")]
    pub in_context_seed_count: usize,
    #[serde(default = "default_generated_count")]
    pub in_context_generated_count: usize,
    #[serde(default = "default_style_count")]
    pub style_example_count: usize,
    #[serde(default = "default_content_count")]
    pub content_example_count: usize,
    #[serde(default = "default_sampling_rounds")]
    pub sampling_rounds: u32,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_per_paragraph_target() -> usize {
    10
}
fn default_seed_count() -> usize {
    6
}
fn default_generated_count() -> usize {
    2
}
fn default_style_count() -> usize {
    3
}
fn default_content_count() -> usize {
    6
}
fn default_sampling_rounds() -> u32 {
    2
}

impl Default for GenPlan {
    fn default() -> Self {
        Self {
            per_paragraph_target: default_per_paragraph_target(),
            in_context_seed_count: default_seed_count(),
            in_context_generated_count: default_generated_count(),
            style_example_count: default_style_count(),
            content_example_count: default_content_count(),
            sampling_rounds: default_sampling_rounds(),
            rng_seed: 0,
        }
    }
}

impl GenPlan {
    pub fn example_total(&self) -> usize {
        self.in_context_seed_count + self.in_context_generated_count
    }
}

/// How many questions to request for a paragraph: one per 100 characters,
/// clamped to 5..=15, deliberately more than a short paragraph strictly
/// supports.
pub fn paragraph_target_count(char_count: usize) -> usize {
    char_count.div_ceil(100).clamp(5, 15)
}

/// Build the paragraph-grounded generation request. Callers supply exactly
/// `seed + generated = 8` examples, topping up with seeds when fewer than
/// two generated questions exist yet.
pub fn assemble_paragraph_prompt(
    paragraph: &TextbookParagraph,
    seed_examples: &[SeedQuestion],
    generated_examples: &[QuestionRecord],
    target_count: usize,
    params: &ModelParams,
) -> Result<ChatRequest, QuestionGenError> {
    if generated_examples.len() > 2 {
        return Err(QuestionGenError::BadExamples(format!(
            "{} generated examples, at most 2 allowed",
            generated_examples.len()
        )));
    }
    let mut examples: Vec<&str> = seed_examples.iter().map(|s| s.text.as_str()).collect();
    examples.extend(generated_examples.iter().map(|q| q.text.as_str()));
    if examples.len() != 8 {
        return Err(QuestionGenError::BadExamples(format!(
            "expected 8 in-context examples, got {}",
            examples.len()
        )));
    }

    let mut user = String::new();
    user.push_str(pt::QGEN_TASK_LINE);
    user.push_str("\n\n");
    user.push_str(pt::PASSAGE_HEADER);
    user.push('\n');
    user.push_str(&paragraph.text);
    user.push_str("\n\n");
    user.push_str(pt::EXAMPLES_HEADER);
    user.push('\n');
    for (i, example) in examples.iter().enumerate() {
        user.push_str(&format!("{}. {example}\n", i + 1));
    }
    user.push('\n');
    user.push_str(&pt::numbered_list_instruction(
        target_count,
        "questions about the knowledge points in the passage",
    ));

    Ok(params.request(vec![
        ChatMessage::system(pt::QGEN_SYSTEM),
        ChatMessage::user(user),
    ]))
}

/// Build the self-instruct-style sampling request: content examples steer
/// what to ask about, style examples from the seed pool vary the form.
pub fn assemble_sampling_prompt(
    content_examples: &[&QuestionRecord],
    style_examples: &[&SeedQuestion],
    target_count: usize,
    params: &ModelParams,
) -> ChatRequest {
    let mut user = String::new();
    user.push_str(pt::QSAMPLE_TASK_LINE);
    user.push_str("\n\n");
    user.push_str(pt::CONTENT_EXAMPLES_HEADER);
    user.push('\n');
    for (i, example) in content_examples.iter().enumerate() {
        user.push_str(&format!("{}. {}\n", i + 1, example.text));
    }
    user.push('\n');
    user.push_str(pt::STYLE_EXAMPLES_HEADER);
    user.push('\n');
    for (i, example) in style_examples.iter().enumerate() {
        user.push_str(&format!("{}. {}\n", i + 1, example.text));
    }
    user.push('\n');
    user.push_str(&pt::numbered_list_instruction(
        target_count,
        "questions on related content",
    ));

    params.request(vec![
        ChatMessage::system(pt::QGEN_SYSTEM),
        ChatMessage::user(user),
    ])
}

static LIST_ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\(?\d+\)?[.)、]?|[-•*])\s*(\S.*?)\s*$").unwrap());

/// The item text if the line carries a numbered or bulleted list marker.
pub(crate) fn match_list_item(line: &str) -> Option<String> {
    LIST_ITEM
        .captures(line)
        .map(|captures| captures[1].to_string())
}

/// Extract list items from numbered ("1." / "1、" / "(1)") or bulleted
/// ("-", "•", "*") lines, in order.
pub fn parse_question_list(llm_output: &str) -> Result<Vec<String>, QuestionGenError> {
    let questions: Vec<String> = llm_output.lines().filter_map(match_list_item).collect();
    if questions.is_empty() {
        return Err(QuestionGenError::EmptyParse);
    }
    Ok(questions)
}

fn complete_and_parse(
    gateway: &Gateway,
    request: &ChatRequest,
) -> Result<Vec<String>, QuestionGenError> {
    let response = gateway.complete(request)?;
    match parse_question_list(&response.content) {
        Ok(questions) => Ok(questions),
        Err(QuestionGenError::EmptyParse) => {
            // One re-prompt with the bad reply in context and a stricter
            // format reminder; a fresh request so caching cannot replay the
            // same failure.
            let mut retry = request.clone();
            retry
                .messages
                .push(ChatMessage::assistant(response.content));
            retry
                .messages
                .push(ChatMessage::user(pt::REPROMPT_REMINDER));
            let second = gateway.complete(&retry)?;
            parse_question_list(&second.content)
        }
        Err(other) => Err(other),
    }
}

fn pick<'a, T>(rng: &mut ChaCha12Rng, pool: &'a [T], count: usize) -> Vec<&'a T> {
    sample_indices(rng, pool.len(), count.min(pool.len()))
        .iter()
        .map(|i| &pool[i])
        .collect()
}

/// Generate round-0 questions for one paragraph. Examples are sampled from
/// the plan's RNG stream for this paragraph, so parallel execution over
/// paragraphs cannot perturb sampling.
pub fn generate_for_paragraph(
    paragraph: &TextbookParagraph,
    seed_pool: &[SeedQuestion],
    generated_pool: &[QuestionRecord],
    plan: &GenPlan,
    params: &ModelParams,
    gateway: &Gateway,
) -> Result<Vec<QuestionRecord>, QuestionGenError> {
    let total = plan.example_total();
    if seed_pool.len() < total {
        return Err(QuestionGenError::InsufficientPool {
            needed: total,
            found: seed_pool.len(),
        });
    }
    let mut rng = rng_stream(plan.rng_seed, &format!("paragraph/{}", paragraph.id));

    let generated = pick(&mut rng, generated_pool, plan.in_context_generated_count);
    let seed_count = total - generated.len();
    let seeds = pick(&mut rng, seed_pool, seed_count);

    let seed_refs: Vec<SeedQuestion> = seeds.into_iter().cloned().collect();
    let generated_refs: Vec<QuestionRecord> = generated.into_iter().cloned().collect();

    let target_count = paragraph_target_count(paragraph.char_count);
    let request =
        assemble_paragraph_prompt(paragraph, &seed_refs, &generated_refs, target_count, params)?;
    let questions = complete_and_parse(gateway, &request)?;

    Ok(questions
        .into_iter()
        .map(|text| QuestionRecord {
            id: stable_id("q", &[&params.model_name, &paragraph.id, "0", &text]),
            text,
            origin: QuestionOrigin::Paragraph,
            source_paragraph_id: Some(paragraph.id.clone()),
            generator_model: params.model_name.clone(),
            round: 0,
        })
        .collect())
}

/// One sampling call: draw content examples from the previous round and
/// style examples from the seed pool, then ask for new questions.
/// `call_index` separates RNG streams when a round issues several calls.
pub fn sample_new_questions(
    previous_round: &[QuestionRecord],
    seed_pool: &[SeedQuestion],
    plan: &GenPlan,
    call_index: u32,
    params: &ModelParams,
    gateway: &Gateway,
) -> Result<Vec<QuestionRecord>, QuestionGenError> {
    if previous_round.len() < plan.content_example_count {
        return Err(QuestionGenError::InsufficientPool {
            needed: plan.content_example_count,
            found: previous_round.len(),
        });
    }
    if seed_pool.len() < plan.style_example_count {
        return Err(QuestionGenError::InsufficientPool {
            needed: plan.style_example_count,
            found: seed_pool.len(),
        });
    }
    let round = previous_round.iter().map(|q| q.round).max().unwrap_or(0) + 1;
    let mut rng = rng_stream(
        plan.rng_seed,
        &format!("sample/{}/round{round}/call{call_index}", params.model_name),
    );

    let content = pick(&mut rng, previous_round, plan.content_example_count);
    let style = pick(&mut rng, seed_pool, plan.style_example_count);

    let request = assemble_sampling_prompt(&content, &style, plan.per_paragraph_target, params);
    let questions = complete_and_parse(gateway, &request)?;

    Ok(questions
        .into_iter()
        .map(|text| QuestionRecord {
            id: stable_id(
                "q",
                &[
                    &params.model_name,
                    "sampled",
                    &round.to_string(),
                    &call_index.to_string(),
                    &text,
                ],
            ),
            text,
            origin: QuestionOrigin::Sampled,
            source_paragraph_id: None,
            generator_model: params.model_name.clone(),
            round,
        })
        .collect())
}

// --- deduplication ---------------------------------------------------------

const TERMINAL_PUNCT: &str = "?!.。？！…;；:：,，、\"'”’»)）]】";

/// Normalized comparison form: trimmed, whitespace-collapsed, terminal
/// punctuation stripped, case-folded.
pub fn normalize_question(text: &str) -> String {
    let mut normalized = crate::util::normalize_whitespace(text);
    while normalized
        .chars()
        .last()
        .is_some_and(|c| TERMINAL_PUNCT.contains(c))
    {
        normalized.pop();
    }
    normalized.trim_end().to_lowercase()
}

/// Character 3-gram set of a normalized text. Texts shorter than three
/// characters contribute themselves as a single shingle.
pub fn char_trigrams(text: &str) -> HashSet<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return HashSet::new();
    }
    if chars.len() < 3 {
        return HashSet::from([text.to_string()]);
    }
    chars
        .windows(3)
        .map(|w| w.iter().collect::<String>())
        .collect()
}

pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupDrop {
    pub dropped_id: String,
    pub kept_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub kept: Vec<QuestionRecord>,
    pub dropped: Vec<DedupDrop>,
}

/// Remove normalized-exact duplicates, then near-duplicates whose character
/// 3-gram Jaccard similarity with an earlier-kept question reaches the
/// threshold. Earlier means lower round, then input order. `None` disables
/// the fuzzy pass.
pub fn dedup(questions: &[QuestionRecord], jaccard_threshold: Option<f64>) -> DedupOutcome {
    let mut order: Vec<usize> = (0..questions.len()).collect();
    order.sort_by_key(|&i| (questions[i].round, i));

    struct Kept {
        index: usize,
        normalized: String,
        trigrams: HashSet<String>,
    }

    let mut kept: Vec<Kept> = Vec::new();
    let mut dropped = Vec::new();

    'candidates: for &index in &order {
        let normalized = normalize_question(&questions[index].text);
        for prior in &kept {
            if prior.normalized == normalized {
                dropped.push(DedupDrop {
                    dropped_id: questions[index].id.clone(),
                    kept_id: questions[prior.index].id.clone(),
                    similarity: 1.0,
                });
                continue 'candidates;
            }
        }
        let trigrams = char_trigrams(&normalized);
        if let Some(threshold) = jaccard_threshold {
            let mut best: Option<(usize, f64)> = None;
            for prior in &kept {
                let similarity = jaccard(&prior.trigrams, &trigrams);
                if similarity >= threshold && best.is_none_or(|(_, s)| similarity > s) {
                    best = Some((prior.index, similarity));
                }
            }
            if let Some((kept_index, similarity)) = best {
                dropped.push(DedupDrop {
                    dropped_id: questions[index].id.clone(),
                    kept_id: questions[kept_index].id.clone(),
                    similarity,
                });
                continue 'candidates;
            }
        }
        kept.push(Kept {
            index,
            normalized,
            trigrams,
        });
    }

    let mut kept_indices: Vec<usize> = kept.iter().map(|k| k.index).collect();
    kept_indices.sort_unstable();
    DedupOutcome {
        kept: kept_indices.iter().map(|&i| questions[i].clone()).collect(),
        dropped,
    }
}

/// Concatenate per-teacher-model question lists (stable by model name, then
/// record order) and deduplicate across the union.
pub fn merge_models(
    mut lists: Vec<(String, Vec<QuestionRecord>)>,
    jaccard_threshold: Option<f64>,
) -> DedupOutcome {
    lists.sort_by(|a, b| a.0.cmp(&b.0));
    let merged: Vec<QuestionRecord> = lists.into_iter().flat_map(|(_, list)| list).collect();
    dedup(&merged, jaccard_threshold)
}
