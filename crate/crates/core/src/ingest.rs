//! Textbook and seed-pool ingestion: normalize raw course text into
//! paragraphs sized for question grounding, and load the human seed pool.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::util::stable_id;

/// Seed questions sampled without replacement: 6 in-context + 3 style
/// examples per prompt, so a pool must hold at least 9 distinct entries.
pub const MIN_SEED_POOL: usize = 9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("seed pool too small: {found} entries, need at least {MIN_SEED_POOL}")]
    PoolTooSmall { found: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("record {0} has empty text")]
    EmptyText(String),
    #[error("split policy invalid: {0}")]
    BadPolicy(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// A splitting-policy-normalized chunk of source text; the unit every
/// paragraph-grounded question points back to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextbookParagraph {
    pub id: String,
    pub source_doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chapter: Option<String>,
    pub ordinal: u32,
    pub text: String,
    pub char_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedQuestion {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPolicy {
    #[serde(default = "default_min_chars")]
    pub min_chars: usize,
    #[serde(default = "default_max_chars")]
    pub max_chars: usize,
    /// Characters that may end a sentence; long blocks are cut after one.
    #[serde(default = "default_terminators")]
    pub sentence_terminators: String,
    /// Single-line blocks matching this pattern label subsequent paragraphs
    /// with a chapter and are excluded from paragraph content.
    #[serde(default = "default_chapter_pattern")]
    pub chapter_heading_pattern: Option<String>,
}

fn default_min_chars() -> usize {
    200
}

fn default_max_chars() -> usize {
    1200
}

fn default_terminators() -> String {
    "。！？.!?;；".to_string()
}

fn default_chapter_pattern() -> Option<String> {
    Some(r"^(?:Chapter|第)\s*\S+.{0,80}$".to_string())
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            min_chars: default_min_chars(),
            max_chars: default_max_chars(),
            sentence_terminators: default_terminators(),
            chapter_heading_pattern: default_chapter_pattern(),
        }
    }
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.min_chars == 0 || self.min_chars >= self.max_chars {
            return Err(IngestError::BadPolicy(format!(
                "min_chars {} must be positive and below max_chars {}",
                self.min_chars, self.max_chars
            )));
        }
        if let Some(pattern) = &self.chapter_heading_pattern {
            Regex::new(pattern)
                .map_err(|e| IngestError::BadPolicy(format!("chapter pattern: {e}")))?;
        }
        Ok(())
    }
}

/// Raw text blocks separated by blank lines, with the chapter label active
/// when the block started.
fn blank_line_blocks(document: &str, heading: Option<&Regex>) -> Vec<(Option<String>, String)> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut chapter: Option<String> = None;

    let flush = |lines: &mut Vec<&str>,
                 chapter: &Option<String>,
                 blocks: &mut Vec<(Option<String>, String)>| {
        if !lines.is_empty() {
            blocks.push((chapter.clone(), lines.join("\n")));
            lines.clear();
        }
    };

    for raw_line in document.lines() {
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut current, &chapter, &mut blocks);
            continue;
        }
        if current.is_empty() {
            if let Some(pattern) = heading {
                if pattern.is_match(line.trim()) {
                    chapter = Some(line.trim().to_string());
                    continue;
                }
            }
        }
        current.push(line);
    }
    flush(&mut current, &chapter, &mut blocks);
    blocks
}

/// Cut `chars` after the last sentence terminator positioned in
/// `[min_chars, max_chars]`; fall back to a hard cut at `max_chars` so the
/// head never comes out short.
fn cut_point(chars: &[char], policy: &SplitPolicy) -> usize {
    let limit = policy.max_chars.min(chars.len());
    let floor = policy.min_chars.min(limit);
    let mut cut = limit;
    for idx in (floor..=limit).rev() {
        if idx == 0 {
            break;
        }
        if policy.sentence_terminators.contains(chars[idx - 1]) {
            cut = idx;
            break;
        }
    }
    cut
}

/// Split a document into paragraphs: blank-line blocks, short blocks merged
/// forward, long blocks cut at sentence terminators. Only the final
/// remainder may come out below `min_chars`.
pub fn split_paragraphs(
    document_text: &str,
    source_doc: &str,
    policy: &SplitPolicy,
) -> Result<Vec<TextbookParagraph>, IngestError> {
    policy.validate()?;
    if document_text.trim().is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    let heading = policy
        .chapter_heading_pattern
        .as_deref()
        .map(Regex::new)
        .transpose()
        .map_err(|e| IngestError::BadPolicy(format!("chapter pattern: {e}")))?;

    let blocks = blank_line_blocks(document_text, heading.as_ref());
    if blocks.is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    let mut paragraphs = Vec::new();
    let mut acc = String::new();
    let mut acc_chapter: Option<String> = None;

    let emit = |text: String, chapter: Option<String>, paragraphs: &mut Vec<TextbookParagraph>| {
        let ordinal = paragraphs.len() as u32;
        let prefix: String = text.chars().take(64).collect();
        let id = stable_id("par", &[source_doc, &ordinal.to_string(), &prefix]);
        let char_count = text.chars().count();
        paragraphs.push(TextbookParagraph {
            id,
            source_doc: source_doc.to_string(),
            chapter,
            ordinal,
            text,
            char_count,
        });
    };

    for (chapter, block) in blocks {
        if acc.is_empty() {
            acc = block;
            acc_chapter = chapter;
        } else {
            acc.push('\n');
            acc.push_str(&block);
        }

        while acc.chars().count() > policy.max_chars {
            let chars: Vec<char> = acc.chars().collect();
            let cut = cut_point(&chars, policy);
            let head: String = chars[..cut].iter().collect();
            let rest: String = chars[cut..].iter().collect();
            emit(head, acc_chapter.clone(), &mut paragraphs);
            acc = rest;
        }
        if !acc.is_empty() && acc.chars().count() >= policy.min_chars {
            emit(
                std::mem::take(&mut acc),
                acc_chapter.take(),
                &mut paragraphs,
            );
        }
    }
    if !acc.is_empty() {
        // Tail remainder: the one paragraph allowed below min_chars.
        emit(acc, acc_chapter, &mut paragraphs);
    }
    Ok(paragraphs)
}

#[derive(Debug, Deserialize)]
struct SeedRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

/// Load the human seed pool from a JSONL file. Records without an explicit
/// id get a stable positional one.
pub fn load_seed_pool(path: &Path) -> Result<Vec<SeedQuestion>, IngestError> {
    let records: Vec<SeedRecord> = jsonl::read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut pool = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        if record.text.trim().is_empty() {
            return Err(IngestError::EmptyText(format!("seed line {}", index + 1)));
        }
        let id = record.id.unwrap_or_else(|| format!("seed-{:04}", index));
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId(id));
        }
        pool.push(SeedQuestion {
            id,
            text: record.text,
        });
    }
    if pool.len() < MIN_SEED_POOL {
        return Err(IngestError::PoolTooSmall { found: pool.len() });
    }
    Ok(pool)
}
