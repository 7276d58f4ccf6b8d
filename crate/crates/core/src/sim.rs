//! Deterministic course-teacher and judge simulators built on the scripted
//! backend. Every reply is a pure function of the request, so full pipeline
//! runs are reproducible byte-for-byte and replay fixtures can be
//! regenerated at will. The simulated judge rewards answers that carry the
//! quality markers a system prompt can elicit, which gives the prompt
//! optimizer a real signal to climb.

use std::sync::LazyLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::gateway::{BackendReply, ChatRequest, InvokeError, Role, ScriptedBackend};
use crate::judge::render_verdict_text;
use crate::prompt_text as pt;

/// Prompt trigger words and the answer marker each one elicits. The judge
/// counts markers; prompts that name more triggers score higher.
pub const TRAITS: [(&str, &str); 6] = [
    ("accurate", "The key facts are stated precisely."),
    ("clear", "Each step is explained in plain language."),
    (
        "structured",
        "The points are presented in a deliberate order.",
    ),
    ("complete", "All parts of the question are addressed."),
    ("grounded", "Claims are tied back to the source material."),
    ("expert", "Standard terminology of the field is used."),
];

/// Any of these in a system prompt suppresses the filler the simulator
/// otherwise appends, shortening answers.
pub const BREVITY_WORDS: [&str; 4] = ["concise", "brief", "succinct", "short"];

const PADDING_SENTENCE: &str = "Additional background is restated here at length, revisiting \
related ideas in considerably more words than the question strictly requires.";

fn hash64(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn content_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for raw in text.split(|c: char| !c.is_alphanumeric()) {
        let word = raw.to_lowercase();
        if word.chars().count() >= 4 && !words.contains(&word) {
            words.push(word);
        }
    }
    if words.is_empty() {
        words.push("topic".to_string());
    }
    words
}

static EXACT_COUNT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"exactly (\d+)").unwrap());

fn requested_count(user: &str) -> usize {
    EXACT_COUNT
        .captures(user)
        .and_then(|c| c[1].parse().ok())
        .unwrap_or(5)
}

fn section<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let (_, rest) = text.split_once(start)?;
    match rest.split_once(end) {
        Some((inner, _)) => Some(inner),
        None => Some(rest),
    }
}

const QUESTION_FORMS: [(&str, &str); 5] = [
    ("What is the role of ", " in "),
    ("How does ", " affect "),
    ("Why does ", " matter for "),
    ("Compare ", " with "),
    ("What changes in ", " when we vary "),
];

fn question_list(source_text: &str, salt: &str, count: usize) -> String {
    let words = content_words(source_text);
    let base = hash64(&format!("{salt}\x1f{source_text}")) as usize;
    let mut lines = Vec::with_capacity(count);
    for i in 0..count {
        let (head, middle) = QUESTION_FORMS[(base + i) % QUESTION_FORMS.len()];
        let a = &words[(base + 3 * i) % words.len()];
        let b = &words[(base + 5 * i + 1) % words.len()];
        lines.push(format!("{}. {head}{a}{middle}{b}?", i + 1));
    }
    lines.join("\n")
}

fn simulate_question_generation(request: &ChatRequest, user: &str) -> String {
    let passage = section(user, pt::PASSAGE_HEADER, pt::EXAMPLES_HEADER).unwrap_or(user);
    question_list(passage, &request.model_name, requested_count(user))
}

fn simulate_question_sampling(request: &ChatRequest, user: &str) -> String {
    let content =
        section(user, pt::CONTENT_EXAMPLES_HEADER, pt::STYLE_EXAMPLES_HEADER).unwrap_or(user);
    question_list(
        content,
        &format!("sampled/{}", request.model_name),
        requested_count(user),
    )
}

fn first_system(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .find(|m| m.role == Role::System)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

fn simulate_answer(request: &ChatRequest, user: &str) -> String {
    let system = first_system(request).to_lowercase();
    let question = user
        .split_once(pt::REFERENCE_INSTRUCTION)
        .map(|(_, rest)| rest)
        .unwrap_or(user)
        .trim();
    let words = content_words(question);
    let topic = &words[0];

    let mut answer = format!(
        "Concerning {topic}: the definition from the course material settles this directly."
    );
    for (trigger, marker) in TRAITS {
        if system.contains(trigger) {
            answer.push(' ');
            answer.push_str(marker);
        }
    }
    if user.contains(pt::REFERENCE_OPEN) {
        answer.push_str(" The cited passage supports this reading.");
    }
    let concise = BREVITY_WORDS.iter().any(|w| system.contains(w));
    if !concise {
        for _ in 0..3 {
            answer.push(' ');
            answer.push_str(PADDING_SENTENCE);
        }
    }
    answer
}

fn simulate_judge(user: &str) -> String {
    let candidate = section(user, pt::JUDGE_CANDIDATE_HEADER, "\n\nEvaluate").unwrap_or(user);
    let markers = TRAITS
        .iter()
        .filter(|(_, marker)| candidate.contains(marker))
        .count() as u8;
    let padding = candidate.matches(PADDING_SENTENCE).count() as u8;

    let overall = (4 + markers).min(10);
    let factual = (4 + markers).min(10);
    let satisfaction = (3 + markers).min(10);
    let clarity = (5 + markers / 2).min(10);
    let condensability = 9u8.saturating_sub(2 * padding).max(1);

    let missing: Vec<&str> = TRAITS
        .iter()
        .filter(|(_, marker)| !candidate.contains(marker))
        .map(|(trigger, _)| *trigger)
        .collect();
    let rationale = if missing.is_empty() {
        format!(
            "All {} quality signals are present in the answer.",
            TRAITS.len()
        )
    } else {
        format!(
            "Found {markers} of {} quality signals; the answer is not {} enough.",
            TRAITS.len(),
            missing.join(", not ")
        )
    };
    render_verdict_text(
        &rationale,
        factual,
        satisfaction,
        clarity,
        condensability,
        overall,
    )
}

fn simulate_reflection(user: &str) -> String {
    let current = section(user, pt::PROMPT_OPEN, pt::PROMPT_CLOSE)
        .unwrap_or("You are a subject expert.")
        .trim();
    let lower = current.to_lowercase();
    let mut improved = current.to_string();
    if !BREVITY_WORDS.iter().any(|w| lower.contains(w)) {
        improved.push_str(" Keep every answer concise.");
    } else if let Some((trigger, _)) = TRAITS.iter().find(|(t, _)| !lower.contains(t)) {
        improved.push_str(&format!(" Be {trigger}."));
    }
    format!(
        "The feedback points to missing quality signals.\n{}\n{improved}\n{}",
        pt::PROMPT_OPEN,
        pt::PROMPT_CLOSE
    )
}

static SCORED_PROMPT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\d+\.\s*\(score [-0-9.]+\)\s*(.+)$").unwrap());

fn simulate_resampling(user: &str) -> String {
    let mut observed: Vec<&str> = Vec::new();
    let mut listed = String::new();
    for captures in SCORED_PROMPT_LINE.captures_iter(user) {
        let text = captures.get(1).unwrap().as_str();
        listed.push_str(text);
        listed.push('\n');
        for (trigger, _) in TRAITS {
            let lower = text.to_lowercase();
            if lower.contains(trigger) && !observed.contains(&trigger) {
                observed.push(trigger);
            }
        }
    }
    if observed.is_empty() {
        observed.push("accurate");
    }
    let count = requested_count(user);
    let base = hash64(&listed) as usize;
    let mut lines = Vec::with_capacity(count);
    for i in 0..count {
        // Rotate through growing trigger subsets so children vary.
        let take = 1 + (base + i) % observed.len().max(1);
        let chosen: Vec<&str> = (0..take)
            .map(|j| observed[(base + i + j) % observed.len()])
            .collect();
        lines.push(format!(
            "{}. You are a methodical course expert. Be {}. Keep answers concise.",
            i + 1,
            chosen.join(" and ")
        ));
    }
    lines.join("\n")
}

fn route(request: &ChatRequest, _seen: u32) -> Result<BackendReply, InvokeError> {
    let user = request
        .messages
        .iter()
        .filter(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");

    let content = if user.contains(pt::QGEN_TASK_LINE) {
        simulate_question_generation(request, &user)
    } else if user.contains(pt::QSAMPLE_TASK_LINE) {
        simulate_question_sampling(request, &user)
    } else if user.contains(pt::JUDGE_TASK_LINE) {
        simulate_judge(&user)
    } else if user.contains(pt::REFLECT_TASK_LINE) {
        simulate_reflection(&user)
    } else if user.contains(pt::RESAMPLE_TASK_LINE) {
        simulate_resampling(&user)
    } else {
        simulate_answer(request, &user)
    };
    Ok(BackendReply::stop(request, content))
}

/// The standard simulator suite behind `BackendConfig { kind: scripted }`.
pub fn course_sim() -> ScriptedBackend {
    ScriptedBackend::new(route)
}
