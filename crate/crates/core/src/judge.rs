//! Judge module: four-dimension chain-of-thought grading of a candidate
//! answer against a human reference, with a strict parse contract
//! (labeled score lines plus a final `Overall: [[n]]`).

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer_gen::QAPair;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::prompt_text as pt;
use crate::util::text_char_len;

pub const DIMENSIONS: [&str; 4] = [
    "Factual Accuracy",
    "User Satisfaction",
    "Clarity",
    "Condensability",
];

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("verdict parse error: {0}")]
    Parse(String),
    #[error("score {score} for {field} outside 1..=10")]
    Range { field: String, score: i64 },
    #[error("judge failed after {attempts} attempts")]
    JudgeFailed { attempts: u32 },
    #[error("reference text is empty")]
    EmptyReference,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Parsed judge output for one (question, reference, candidate) triple.
/// `response_char_count` / `reference_char_count` feed the length penalty;
/// they hold whitespace-normalized character counts unless the judge config
/// switches the length unit to tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub qa_id: String,
    pub factual_accuracy: u8,
    pub user_satisfaction: u8,
    pub clarity: u8,
    pub condensability: u8,
    /// The judge's own holistic 1-10 integer, not an average of dimensions.
    pub overall: u8,
    pub rationale_text: String,
    pub response_char_count: usize,
    pub reference_char_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub judge_model: String,
    /// Zero by default so verdicts are stable across reruns and cache hits.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_parse_retries")]
    pub parse_retries: u32,
    #[serde(default = "default_judge_max_tokens")]
    pub max_tokens: u32,
    /// Unit for the l_res / l_ref fields feeding the length penalty.
    #[serde(default)]
    pub length_unit: LengthUnit,
}

/// How response and reference lengths are measured. Characters sidestep
/// tokenizer ambiguity for CJK text and are the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Chars,
    Tokens,
}

impl LengthUnit {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthUnit::Chars => text_char_len(text),
            LengthUnit::Tokens => crate::text_metrics::tokenize(text).len(),
        }
    }
}

fn default_parse_retries() -> u32 {
    2
}

fn default_judge_max_tokens() -> u32 {
    1024
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            judge_model: "judge".into(),
            temperature: 0.0,
            parse_retries: default_parse_retries(),
            max_tokens: default_judge_max_tokens(),
            length_unit: LengthUnit::Chars,
        }
    }
}

/// Build the grading request. Each dimension is named exactly once, the
/// judge must reason before scoring, and the reply must end with the
/// bracketed overall marker.
pub fn assemble_judge_prompt(
    question: &str,
    human_reference: &str,
    candidate_answer: &str,
    cfg: &JudgeConfig,
) -> ChatRequest {
    let user = format!(
        "{task}\n\n\
         {qh}\n{question}\n\n\
         {rh}\n{reference}\n\n\
         {ch}\n{candidate}\n\n\
         Evaluate four dimensions, reasoning step by step about each before scoring it:\n\
         1. {d0} — is the information correct and consistent with the reference?\n\
         2. {d1} — does it address what was asked as well as the reference does?\n\
         3. {d2} — is it well organized and easy to follow?\n\
         4. {d3} — is it succinct, with no filler or redundancy?\n\n\
         After your reasoning, print each dimension's integer score from 1 to 10 on its \
         own line in the form \"<dimension name>: <score>\", in the order listed, then \
         finish with a final line exactly in the form:\nOverall: [[n]]",
        task = pt::JUDGE_TASK_LINE,
        qh = pt::JUDGE_QUESTION_HEADER,
        rh = pt::JUDGE_REFERENCE_HEADER,
        ch = pt::JUDGE_CANDIDATE_HEADER,
        question = question,
        reference = human_reference,
        candidate = candidate_answer,
        d0 = DIMENSIONS[0],
        d1 = DIMENSIONS[1],
        d2 = DIMENSIONS[2],
        d3 = DIMENSIONS[3],
    );
    ChatRequest {
        model_name: cfg.judge_model.clone(),
        messages: vec![
            ChatMessage::system(pt::JUDGE_SYSTEM),
            ChatMessage::user(user),
        ],
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        rng_seed: None,
    }
}

static DIMENSION_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    DIMENSIONS
        .iter()
        .map(|name| {
            let escaped = name.replace(' ', r"\s+");
            Regex::new(&format!(r"(?mi)\b{escaped}\b\s*[:：]\s*(-?\d+)")).unwrap()
        })
        .collect()
});

static OVERALL_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\[\s*(-?\d+)\s*\]\]").unwrap());

fn checked_score(field: &str, raw: &str) -> Result<u8, JudgeError> {
    let score: i64 = raw
        .parse()
        .map_err(|_| JudgeError::Parse(format!("bad number for {field}")))?;
    if !(1..=10).contains(&score) {
        return Err(JudgeError::Range {
            field: field.to_string(),
            score,
        });
    }
    Ok(score as u8)
}

/// Extract the four labeled dimension scores and the bracketed overall.
/// Length fields come from the shared character-count definition.
pub fn parse_verdict(
    judge_output: &str,
    qa: &QAPair,
    reference: &str,
) -> Result<JudgeVerdict, JudgeError> {
    let mut scores = [0u8; 4];
    for (i, (name, pattern)) in DIMENSIONS.iter().zip(DIMENSION_PATTERNS.iter()).enumerate() {
        let captures = pattern
            .captures(judge_output)
            .ok_or_else(|| JudgeError::Parse(format!("missing score line for {name}")))?;
        scores[i] = checked_score(name, &captures[1])?;
    }
    let overall_raw = OVERALL_PATTERN
        .captures_iter(judge_output)
        .last()
        .ok_or_else(|| JudgeError::Parse("missing Overall: [[n]] marker".into()))?;
    let overall = checked_score("Overall", &overall_raw[1])?;

    Ok(JudgeVerdict {
        qa_id: qa.question_id.clone(),
        factual_accuracy: scores[0],
        user_satisfaction: scores[1],
        clarity: scores[2],
        condensability: scores[3],
        overall,
        rationale_text: judge_output.to_string(),
        response_char_count: qa.answer_char_count,
        reference_char_count: text_char_len(reference),
    })
}

/// Render a verdict in the canonical output format. Simulated judges emit
/// this shape, and `parse_verdict` recovers all five scores from it.
pub fn render_verdict_text(
    rationale: &str,
    factual_accuracy: u8,
    user_satisfaction: u8,
    clarity: u8,
    condensability: u8,
    overall: u8,
) -> String {
    format!(
        "{rationale}\n{}: {factual_accuracy}\n{}: {user_satisfaction}\n{}: {clarity}\n{}: {condensability}\nOverall: [[{overall}]]",
        DIMENSIONS[0], DIMENSIONS[1], DIMENSIONS[2], DIMENSIONS[3],
    )
}

/// Call the judge model; on a parse or range failure, re-prompt with a
/// stricter format reminder up to `parse_retries` times.
pub fn judge_answer(
    qa: &QAPair,
    reference: &str,
    cfg: &JudgeConfig,
    gateway: &Gateway,
) -> Result<JudgeVerdict, JudgeError> {
    if reference.trim().is_empty() {
        return Err(JudgeError::EmptyReference);
    }
    let mut request = assemble_judge_prompt(&qa.question, reference, &qa.answer, cfg);
    for attempt in 0..=cfg.parse_retries {
        let response = gateway.complete(&request)?;
        match parse_verdict(&response.content, qa, reference) {
            Ok(mut verdict) => {
                if cfg.length_unit != LengthUnit::Chars {
                    verdict.response_char_count = cfg.length_unit.measure(&qa.answer);
                    verdict.reference_char_count = cfg.length_unit.measure(reference).max(1);
                }
                return Ok(verdict);
            }
            Err(JudgeError::Parse(detail)) | Err(JudgeError::Range { field: detail, .. }) => {
                log::debug!("judge parse failure on attempt {}: {detail}", attempt + 1);
                // Distinct retry request so a cached or deterministic judge
                // cannot replay the same malformed reply.
                request
                    .messages
                    .push(ChatMessage::assistant(response.content));
                request.messages.push(ChatMessage::user(format!(
                    "{} (attempt {})",
                    pt::JUDGE_FORMAT_REMINDER,
                    attempt + 2
                )));
            }
            Err(other) => return Err(other),
        }
    }
    Err(JudgeError::JudgeFailed {
        attempts: cfg.parse_retries + 1,
    })
}
