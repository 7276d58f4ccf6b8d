//! Prompt template text used by the generation, judging, and optimization
//! modules. Kept in one place so the scripted simulators can route requests
//! on the same constants the builders use, and so prompt wording changes are
//! reviewable as ordinary diffs.

/// Bump when any template wording changes; recorded in run journals.
pub const PROMPT_ASSET_VERSION: &str = "1";

// --- question generation -------------------------------------------------

pub const QGEN_SYSTEM: &str =
    "You are a course content designer who writes exam-quality study questions.";

pub const QGEN_TASK_LINE: &str =
    "Write study questions that probe the knowledge points in the passage below.";

pub const QSAMPLE_TASK_LINE: &str =
    "Generate new study questions related in content to the examples below.";

pub const EXAMPLES_HEADER: &str =
    "Example questions (for style and variety only; do not repeat them):";

pub const CONTENT_EXAMPLES_HEADER: &str = "Content examples:";

pub const STYLE_EXAMPLES_HEADER: &str = "Style examples (for question form only):";

pub const PASSAGE_HEADER: &str = "Passage:";

pub fn numbered_list_instruction(count: usize, what: &str) -> String {
    format!(
        "Write exactly {count} new {what}. Present them as a numbered list, \
         one per line, with no other text."
    )
}

pub const REPROMPT_REMINDER: &str =
    "Your previous reply could not be parsed. Reply again with only a numbered list, \
     one item per line, and nothing else.";

// --- answer generation ---------------------------------------------------

pub const REFERENCE_OPEN: &str = "<reference>";
pub const REFERENCE_CLOSE: &str = "</reference>";

pub const REFERENCE_INSTRUCTION: &str =
    "Consult the reference above when answering, but answer in your own words; \
     do not copy it.";

// --- judging --------------------------------------------------------------

pub const JUDGE_SYSTEM: &str = "You are an impartial grader for course question answering.";

pub const JUDGE_TASK_LINE: &str = "Grade the candidate answer against the human reference answer.";

pub const JUDGE_QUESTION_HEADER: &str = "Question:";
pub const JUDGE_REFERENCE_HEADER: &str = "Reference answer:";
pub const JUDGE_CANDIDATE_HEADER: &str = "Candidate answer:";

pub const JUDGE_FORMAT_REMINDER: &str =
    "Your previous reply could not be parsed. Repeat the evaluation, and this time \
     end with the four labeled score lines followed by the final line exactly in the \
     form Overall: [[n]].";

// --- prompt optimization ---------------------------------------------------

pub const PROMPT_OPEN: &str = "<prompt>";
pub const PROMPT_CLOSE: &str = "</prompt>";

pub const REFLECT_TASK_LINE: &str =
    "Improve the following answering prompt using the evaluation feedback.";

pub const REFLECT_FEEDBACK_HEADER: &str = "Feedback from graded answers:";

pub const REFLECT_INSTRUCTION: &str =
    "Diagnose the prompt's weaknesses based on the feedback, then write one improved \
     prompt. Output the improved prompt between <prompt> and </prompt> tags.";

pub const RESAMPLE_TASK_LINE: &str =
    "Study the scored answering prompts below and write new ones that keep what works.";

pub const RESAMPLE_SCORES_HEADER: &str = "Scored prompts (best first):";
