//! Answer generation: role-play system prompt, optional grounding of
//! paragraph-derived questions in their source text, skip-and-log failures.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, ModelParams};
use crate::ingest::TextbookParagraph;
use crate::prompt_text as pt;
use crate::question_gen::{QuestionOrigin, QuestionRecord};
use crate::util::text_char_len;

#[derive(Debug, Error)]
pub enum AnswerGenError {
    #[error("question {question_id} references unknown paragraph {paragraph_id}")]
    DanglingReference {
        question_id: String,
        paragraph_id: String,
    },
    #[error("template file {0} is malformed: {1}")]
    BadTemplate(String, String),
    #[error("model returned an empty answer")]
    EmptyAnswer,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A system prompt for answering, with an id that travels into every QA
/// pair it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPromptTemplate {
    pub id: String,
    pub system_text: String,
    pub include_reference_block: bool,
}

impl AnswerPromptTemplate {
    /// Template files: a small `key: value` header, a `---` separator, then
    /// the system text verbatim.
    pub fn load(path: &Path) -> Result<Self, AnswerGenError> {
        let raw = std::fs::read_to_string(path)?;
        let display = path.display().to_string();
        let (header, body) = raw.split_once("\n---\n").ok_or_else(|| {
            AnswerGenError::BadTemplate(display.clone(), "missing --- separator".into())
        })?;
        let mut id = None;
        let mut include_reference_block = true;
        for line in header.lines() {
            let Some((key, value)) = line.split_once(':') else {
                continue;
            };
            match key.trim() {
                "id" => id = Some(value.trim().to_string()),
                "include_reference_block" => {
                    include_reference_block = value.trim().parse().map_err(|_| {
                        AnswerGenError::BadTemplate(display.clone(), "bad boolean".into())
                    })?;
                }
                _ => {}
            }
        }
        let system_text = body.trim_end_matches('\n').to_string();
        if system_text.trim().is_empty() {
            return Err(AnswerGenError::BadTemplate(
                display,
                "empty system text".into(),
            ));
        }
        Ok(Self {
            id: id.ok_or_else(|| AnswerGenError::BadTemplate(display, "missing id".into()))?,
            system_text,
            include_reference_block,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AnswerGenError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let body = format!(
            "id: {}\ninclude_reference_block: {}\n---\n{}\n",
            self.id, self.include_reference_block, self.system_text
        );
        std::fs::write(path, body)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub question_id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_paragraph_id: Option<String>,
    pub prompt_id: String,
    pub model: String,
    /// Whitespace-normalized character count; the same length definition
    /// the judge and length penalty use.
    pub answer_char_count: usize,
}

/// System message is the template text verbatim; the user message is the
/// question, preceded by the delimiter-wrapped source paragraph when
/// grounding applies.
pub fn assemble_answer_prompt(
    template: &AnswerPromptTemplate,
    question: &QuestionRecord,
    reference: Option<&TextbookParagraph>,
    params: &ModelParams,
) -> ChatRequest {
    let mut user = String::new();
    if let Some(paragraph) = reference.filter(|_| template.include_reference_block) {
        user.push_str(pt::REFERENCE_OPEN);
        user.push('\n');
        user.push_str(&paragraph.text);
        user.push('\n');
        user.push_str(pt::REFERENCE_CLOSE);
        user.push('\n');
        user.push_str(pt::REFERENCE_INSTRUCTION);
        user.push_str("\n\n");
    }
    user.push_str(&question.text);

    params.request(vec![
        ChatMessage::system(template.system_text.clone()),
        ChatMessage::user(user),
    ])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerFailure {
    pub question_id: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct AnswerBatch {
    pub pairs: Vec<QAPair>,
    pub failures: Vec<AnswerFailure>,
}

/// Answer every question, grounding paragraph questions via the index.
/// Failures are logged per item and skipped; the batch never aborts.
pub fn generate_answers(
    questions: &[QuestionRecord],
    template: &AnswerPromptTemplate,
    paragraph_index: &HashMap<String, TextbookParagraph>,
    params: &ModelParams,
    gateway: &Gateway,
) -> AnswerBatch {
    let mut batch = AnswerBatch::default();
    let mut requests = Vec::with_capacity(questions.len());
    let mut slots: Vec<Option<usize>> = Vec::with_capacity(questions.len());

    for question in questions {
        let reference = match (&question.origin, &question.source_paragraph_id) {
            (QuestionOrigin::Paragraph, Some(paragraph_id)) => {
                match paragraph_index.get(paragraph_id) {
                    Some(paragraph) => Some(paragraph),
                    None => {
                        batch.failures.push(AnswerFailure {
                            question_id: question.id.clone(),
                            error: AnswerGenError::DanglingReference {
                                question_id: question.id.clone(),
                                paragraph_id: paragraph_id.clone(),
                            }
                            .to_string(),
                        });
                        slots.push(None);
                        continue;
                    }
                }
            }
            _ => None,
        };
        slots.push(Some(requests.len()));
        requests.push(assemble_answer_prompt(
            template, question, reference, params,
        ));
    }

    let responses = gateway.complete_batch(&requests);

    for (question, slot) in questions.iter().zip(&slots) {
        let Some(index) = slot else { continue };
        match &responses[*index] {
            Ok(response) if !response.content.trim().is_empty() => {
                let answer = response.content.clone();
                batch.pairs.push(QAPair {
                    question_id: question.id.clone(),
                    question: question.text.clone(),
                    answer_char_count: text_char_len(&answer),
                    answer,
                    reference_paragraph_id: question
                        .source_paragraph_id
                        .clone()
                        .filter(|_| template.include_reference_block),
                    prompt_id: template.id.clone(),
                    model: params.model_name.clone(),
                });
            }
            Ok(_) => batch.failures.push(AnswerFailure {
                question_id: question.id.clone(),
                error: AnswerGenError::EmptyAnswer.to_string(),
            }),
            Err(error) => batch.failures.push(AnswerFailure {
                question_id: question.id.clone(),
                error: error.to_string(),
            }),
        }
    }

    if !batch.failures.is_empty() {
        log::warn!(
            "answer generation: {} of {} questions failed",
            batch.failures.len(),
            questions.len()
        );
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendConfig, ScriptedBackend};
    use std::sync::Arc;

    fn template() -> AnswerPromptTemplate {
        AnswerPromptTemplate {
            id: "tmpl-1".into(),
            system_text: "You are a patient course tutor.".into(),
            include_reference_block: true,
        }
    }

    fn params() -> ModelParams {
        ModelParams {
            model_name: "answerer".into(),
            temperature: 0.3,
            max_tokens: 256,
            rng_seed: None,
        }
    }

    fn paragraph(id: &str) -> TextbookParagraph {
        TextbookParagraph {
            id: id.into(),
            source_doc: "doc".into(),
            chapter: None,
            ordinal: 0,
            text: "Quantization maps a continuous amplitude to discrete levels.".into(),
            char_count: 60,
        }
    }

    fn question(id: &str, origin: QuestionOrigin, paragraph_id: Option<&str>) -> QuestionRecord {
        QuestionRecord {
            id: id.into(),
            text: "What is quantization?".into(),
            origin,
            source_paragraph_id: paragraph_id.map(String::from),
            generator_model: "teacher".into(),
            round: 0,
        }
    }

    #[test]
    fn grounded_prompt_wraps_reference() {
        let q = question("q1", QuestionOrigin::Paragraph, Some("p1"));
        let p = paragraph("p1");
        let request = assemble_answer_prompt(&template(), &q, Some(&p), &params());
        assert_eq!(
            request.messages[0].content,
            "You are a patient course tutor."
        );
        let user = &request.messages[1].content;
        assert!(user.starts_with(pt::REFERENCE_OPEN));
        assert!(user.contains(&p.text));
        assert!(user.contains(pt::REFERENCE_CLOSE));
        assert!(user.ends_with("What is quantization?"));
    }

    #[test]
    fn sampled_prompt_has_no_reference_block() {
        let q = question("q1", QuestionOrigin::Sampled, None);
        let request = assemble_answer_prompt(&template(), &q, None, &params());
        assert_eq!(request.messages[1].content, "What is quantization?");
    }

    #[test]
    fn optimized_role_prompt_passes_through_verbatim() {
        // An optimized role-play prompt, CJK included, lands in the system
        // message untouched.
        let optimized = AnswerPromptTemplate {
            id: "opt-best".into(),
            system_text: "你是一位通信课程的辅导专家。回答准确、简洁，不写多余的话。".into(),
            include_reference_block: true,
        };
        let q = question("q1", QuestionOrigin::Sampled, None);
        let request = assemble_answer_prompt(&optimized, &q, None, &params());
        assert_eq!(request.messages[0].content, optimized.system_text);
    }

    #[test]
    fn answers_carry_prompt_id_and_char_count() {
        let backend = Arc::new(ScriptedBackend::constant("A mapping to discrete levels."));
        let gateway = Gateway::from_parts(backend, &BackendConfig::scripted());
        let index = HashMap::from([("p1".to_string(), paragraph("p1"))]);
        let questions = vec![
            question("q1", QuestionOrigin::Paragraph, Some("p1")),
            question("q2", QuestionOrigin::Sampled, None),
            question("q3", QuestionOrigin::Paragraph, Some("p-missing")),
        ];
        let batch = generate_answers(&questions, &template(), &index, &params(), &gateway);
        assert_eq!(batch.pairs.len(), 2);
        assert_eq!(batch.failures.len(), 1);
        assert_eq!(batch.failures[0].question_id, "q3");
        assert!(batch.failures[0].error.contains("unknown paragraph"));
        for pair in &batch.pairs {
            assert_eq!(pair.prompt_id, "tmpl-1");
            assert_eq!(pair.answer_char_count, text_char_len(&pair.answer));
        }
        assert_eq!(batch.pairs[0].reference_paragraph_id.as_deref(), Some("p1"));
        assert!(batch.pairs[1].reference_paragraph_id.is_none());
    }

    #[test]
    fn template_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tmpl.txt");
        let original = template();
        original.save(&path).unwrap();
        let loaded = AnswerPromptTemplate::load(&path).unwrap();
        assert_eq!(loaded, original);
    }
}
