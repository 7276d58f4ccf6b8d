//! Stage runner: each stage reads its declared inputs from the work
//! directory, writes its declared outputs, and appends a deterministic
//! journal line. Dry runs report the planned request count and touch
//! nothing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::answer_gen::{generate_answers, AnswerGenError, AnswerPromptTemplate};
use crate::eval_export::{
    export_training, render_report, run_benchmark, EvalError, ReportFormat, TestItem,
};
use crate::gateway::GatewayError;
use crate::ingest::{
    load_seed_pool, split_paragraphs, IngestError, SeedQuestion, TextbookParagraph,
};
use crate::jsonl::{self, JsonlError};
use crate::judge::{judge_answer, JudgeError};
use crate::prompt_opt::{
    load_initial_prompts, optimize, OptimizerBackends, PromptOptError, ScoredCandidate,
    ValidationItem,
};
use crate::question_gen::{
    generate_for_paragraph, merge_models, sample_new_questions, QuestionGenError, QuestionRecord,
};
use crate::util::sha256_hex;

use super::config::PipelineConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} needs {path}; run the earlier stages first")]
    MissingInput { stage: Stage, path: PathBuf },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    QuestionGen(#[from] QuestionGenError),
    #[error(transparent)]
    AnswerGen(#[from] AnswerGenError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    PromptOpt(#[from] PromptOptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    GenQuestions,
    SampleQuestions,
    GenAnswers,
    OptimizePrompt,
    Judge,
    Evaluate,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::GenQuestions,
        Stage::SampleQuestions,
        Stage::GenAnswers,
        Stage::OptimizePrompt,
        Stage::Judge,
        Stage::Evaluate,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::GenQuestions => "gen-questions",
            Stage::SampleQuestions => "sample-questions",
            Stage::GenAnswers => "gen-answers",
            Stage::OptimizePrompt => "optimize-prompt",
            Stage::Judge => "judge",
            Stage::Evaluate => "evaluate",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// What a stage run did (or, for dry runs, would do).
#[derive(Debug)]
pub struct StageReport {
    pub stage: Stage,
    pub planned_requests: u64,
    pub dry_run: bool,
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
}

/// Work-directory layout: stage-named subfolders plus the run journal.
struct Layout {
    work: PathBuf,
}

impl Layout {
    fn new(work: &Path) -> Self {
        Self {
            work: work.to_path_buf(),
        }
    }

    fn paragraphs(&self) -> PathBuf {
        self.work.join("ingest/paragraphs.jsonl")
    }
    fn seeds(&self) -> PathBuf {
        self.work.join("ingest/seed_pool.jsonl")
    }
    fn round_file(&self, label: &str, round: u32) -> PathBuf {
        self.work
            .join(format!("questions/round{round}_{label}.jsonl"))
    }
    fn questions(&self) -> PathBuf {
        self.work.join("questions/questions.jsonl")
    }
    fn dedup_audit(&self) -> PathBuf {
        self.work.join("questions/dedup_audit.jsonl")
    }
    fn gen_failures(&self) -> PathBuf {
        self.work.join("questions/failures.jsonl")
    }
    fn qa_pairs(&self) -> PathBuf {
        self.work.join("answers/qa_pairs.jsonl")
    }
    fn answer_failures(&self) -> PathBuf {
        self.work.join("answers/failures.jsonl")
    }
    fn history(&self) -> PathBuf {
        self.work.join("optimize/history.jsonl")
    }
    fn best_prompt(&self) -> PathBuf {
        self.work.join("optimize/best_prompt.txt")
    }
    fn checkpoint(&self) -> PathBuf {
        self.work.join("optimize/checkpoint.json")
    }
    fn verdicts(&self) -> PathBuf {
        self.work.join("judge/verdicts.jsonl")
    }
    fn reports(&self) -> PathBuf {
        self.work.join("evaluate/reports.jsonl")
    }
    fn report_md(&self) -> PathBuf {
        self.work.join("evaluate/report.md")
    }
    fn report_csv(&self) -> PathBuf {
        self.work.join("evaluate/report.csv")
    }
    fn train(&self) -> PathBuf {
        self.work.join("export/train.jsonl")
    }
    fn val(&self) -> PathBuf {
        self.work.join("export/val.jsonl")
    }
    fn manifest(&self) -> PathBuf {
        self.work.join("export/manifest.json")
    }
    fn journal(&self) -> PathBuf {
        self.work.join("journal.jsonl")
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.work)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

fn require(stage: Stage, path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingInput { stage, path })
    }
}

fn require_config_path(
    stage: Stage,
    path: &Option<PathBuf>,
    key: &str,
) -> Result<PathBuf, PipelineError> {
    match path {
        Some(p) if p.exists() => Ok(p.clone()),
        Some(p) => Err(PipelineError::MissingInput {
            stage,
            path: p.clone(),
        }),
        None => Err(PipelineError::MissingInput {
            stage,
            path: PathBuf::from(format!("<paths.{key} not set in config>")),
        }),
    }
}

/// Journal entries are deterministic: ordering comes from the sequence
/// number, provenance from content digests, never from wall-clock time.
fn append_journal(
    layout: &Layout,
    stage: Stage,
    status: &str,
    planned: u64,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), PipelineError> {
    let journal = layout.journal();
    let seq = if journal.exists() {
        std::fs::read_to_string(&journal)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .count()
    } else {
        0
    };
    let digest_map = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>, PipelineError> {
        let mut map = BTreeMap::new();
        for path in paths {
            if path.is_file() {
                map.insert(layout.relative(path), sha256_hex(&std::fs::read(path)?));
            }
        }
        Ok(map)
    };
    let line = json!({
        "seq": seq,
        "stage": stage.name(),
        "status": status,
        "planned_requests": planned,
        "prompt_assets": crate::prompt_text::PROMPT_ASSET_VERSION,
        "inputs": digest_map(inputs)?,
        "outputs": digest_map(outputs)?,
    });
    if let Some(parent) = journal.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut body = if journal.exists() {
        std::fs::read_to_string(&journal)?
    } else {
        String::new()
    };
    body.push_str(&line.to_string());
    body.push('\n');
    std::fs::write(&journal, body)?;
    Ok(())
}

fn read_questions_rounds(
    layout: &Layout,
    label: &str,
    upto_round: u32,
) -> Result<Vec<QuestionRecord>, PipelineError> {
    let mut records = Vec::new();
    for round in 0..=upto_round {
        let path = layout.round_file(label, round);
        if path.exists() {
            records.extend(jsonl::read_jsonl::<QuestionRecord>(&path)?);
        }
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct GenFailure {
    paragraph_id: String,
    error: String,
}

#[derive(Serialize)]
struct HistoryRow<'a> {
    generation: u32,
    #[serde(flatten)]
    entry: &'a ScoredCandidate,
}

#[derive(Serialize)]
struct VerdictRow {
    model: String,
    #[serde(flatten)]
    verdict: crate::judge::JudgeVerdict,
}

#[derive(Deserialize)]
struct ValidationRow {
    qa_id: String,
    question: String,
    human_reference: String,
}

const DEFAULT_ANSWER_SYSTEM: &str = "You are a knowledgeable course tutor. Answer the \
student's question accurately and clearly, grounded in the course material.";

fn default_template() -> AnswerPromptTemplate {
    AnswerPromptTemplate {
        id: "base-role".into(),
        system_text: DEFAULT_ANSWER_SYSTEM.into(),
        include_reference_block: true,
    }
}

/// Answering template preference order: optimized prompt from the work dir,
/// then the configured fallback file, then the built-in role prompt.
fn answer_template(
    config: &PipelineConfig,
    layout: &Layout,
) -> Result<AnswerPromptTemplate, PipelineError> {
    let optimized = layout.best_prompt();
    if optimized.exists() {
        return Ok(AnswerPromptTemplate::load(&optimized)?);
    }
    if let Some(path) = &config.paths.answer_template {
        return Ok(AnswerPromptTemplate::load(path)?);
    }
    Ok(default_template())
}

fn load_validation_set(path: &Path) -> Result<Vec<ValidationItem>, PipelineError> {
    let rows: Vec<ValidationRow> = jsonl::read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|r| ValidationItem::new(r.qa_id, r.question, r.human_reference))
        .collect())
}

/// Run one stage. `dry_run` prints plans without side effects; `resume`
/// skips a stage whose outputs already exist.
pub fn run_stage(
    stage: Stage,
    config: &PipelineConfig,
    dry_run: bool,
    resume: bool,
) -> Result<StageReport, PipelineError> {
    let layout = Layout::new(&config.paths.work_dir);
    let runner: StageRunner = match stage {
        Stage::Ingest => stage_ingest,
        Stage::GenQuestions => stage_gen_questions,
        Stage::SampleQuestions => stage_sample_questions,
        Stage::GenAnswers => stage_gen_answers,
        Stage::OptimizePrompt => stage_optimize_prompt,
        Stage::Judge => stage_judge,
        Stage::Evaluate => stage_evaluate,
        Stage::Export => stage_export,
    };

    if !dry_run && resume {
        let (_, _, outputs) = runner(config, &layout, true)?;
        if !outputs.is_empty() && outputs.iter().all(|p| p.exists()) {
            log::info!("stage {stage}: outputs exist, skipping (resume)");
            append_journal(&layout, stage, "skipped", 0, &[], &outputs)?;
            return Ok(StageReport {
                stage,
                planned_requests: 0,
                dry_run: false,
                skipped: true,
                outputs,
            });
        }
    }

    let (planned, inputs, outputs) = runner(config, &layout, dry_run)?;
    if !dry_run {
        append_journal(&layout, stage, "ok", planned, &inputs, &outputs)?;
    }
    Ok(StageReport {
        stage,
        planned_requests: planned,
        dry_run,
        skipped: false,
        outputs,
    })
}

type StageOutcome = (u64, Vec<PathBuf>, Vec<PathBuf>);

type StageRunner = fn(&PipelineConfig, &Layout, bool) -> Result<StageOutcome, PipelineError>;

/// The textbook path names either one plain-text file or a directory of
/// `.txt` files ingested in name order, each as its own source document.
fn textbook_documents(path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut documents: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    documents.sort();
    if documents.is_empty() {
        return Err(IngestError::EmptyDocument.into());
    }
    Ok(documents)
}

fn stage_ingest(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let documents = textbook_documents(&config.paths.textbook)?;
    let mut inputs: Vec<PathBuf> = documents.clone();
    inputs.push(config.paths.seed_pool.clone());
    let outputs = vec![layout.paragraphs(), layout.seeds()];
    if dry_run {
        return Ok((0, inputs, outputs));
    }

    let mut paragraphs = Vec::new();
    for document in &documents {
        let text = std::fs::read_to_string(document)?;
        let source_doc = document
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "textbook".into());
        paragraphs.extend(split_paragraphs(&text, &source_doc, &config.split)?);
    }
    jsonl::write_jsonl(&layout.paragraphs(), &paragraphs)?;

    let seeds = load_seed_pool(&config.paths.seed_pool)?;
    jsonl::write_jsonl(&layout.seeds(), &seeds)?;

    log::info!(
        "ingest: {} paragraphs, {} seed questions",
        paragraphs.len(),
        seeds.len()
    );
    Ok((0, inputs, outputs))
}

fn stage_gen_questions(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let stage = Stage::GenQuestions;
    let paragraphs_path = require(stage, layout.paragraphs())?;
    let seeds_path = require(stage, layout.seeds())?;
    let paragraphs: Vec<TextbookParagraph> = jsonl::read_jsonl(&paragraphs_path)?;
    let seeds: Vec<SeedQuestion> = jsonl::read_jsonl(&seeds_path)?;

    let planned = (config.teachers.len() * paragraphs.len()) as u64;
    let inputs = vec![paragraphs_path, seeds_path];
    let mut outputs: Vec<PathBuf> = config
        .teachers
        .iter()
        .map(|t| layout.round_file(t.label(), 0))
        .collect();
    outputs.push(layout.gen_failures());
    if dry_run {
        return Ok((planned, inputs, outputs));
    }

    let plan = config.gen.plan.clone();
    let mut failures: Vec<GenFailure> = Vec::new();
    for teacher in &config.teachers {
        let gateway = teacher.gateway(&config.paths.work_dir)?;
        let params = teacher.params();
        let mut generated: Vec<QuestionRecord> = Vec::new();
        // Sequential over paragraphs: earlier outputs feed the 2-generated
        // in-context slots of later prompts.
        for paragraph in &paragraphs {
            match generate_for_paragraph(paragraph, &seeds, &generated, &plan, &params, &gateway) {
                Ok(records) => generated.extend(records),
                Err(e) => {
                    log::warn!(
                        "gen-questions: paragraph {} via {}: {e}",
                        paragraph.id,
                        teacher.label()
                    );
                    failures.push(GenFailure {
                        paragraph_id: paragraph.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        jsonl::write_jsonl(&layout.round_file(teacher.label(), 0), &generated)?;
        log::info!(
            "gen-questions: {} questions from {}",
            generated.len(),
            teacher.label()
        );
    }
    jsonl::write_jsonl(&layout.gen_failures(), &failures)?;
    Ok((planned, inputs, outputs))
}

fn stage_sample_questions(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let stage = Stage::SampleQuestions;
    let seeds_path = require(stage, layout.seeds())?;
    let paragraphs_path = require(stage, layout.paragraphs())?;
    let mut inputs = vec![seeds_path.clone(), paragraphs_path.clone()];
    for teacher in &config.teachers {
        inputs.push(require(stage, layout.round_file(teacher.label(), 0))?);
    }

    let plan = config.gen.plan.clone();
    let rounds = plan.sampling_rounds;
    let calls = config.gen.sampling_calls_per_round;
    let planned = (config.teachers.len() as u32 * rounds * calls) as u64;

    let mut outputs = Vec::new();
    for teacher in &config.teachers {
        for round in 1..=rounds {
            outputs.push(layout.round_file(teacher.label(), round));
        }
    }
    outputs.push(layout.questions());
    outputs.push(layout.dedup_audit());
    if dry_run {
        return Ok((planned, inputs, outputs));
    }

    let seeds: Vec<SeedQuestion> = jsonl::read_jsonl(&seeds_path)?;
    for teacher in &config.teachers {
        let gateway = teacher.gateway(&config.paths.work_dir)?;
        let params = teacher.params();
        for round in 1..=rounds {
            let previous: Vec<QuestionRecord> =
                jsonl::read_jsonl(&layout.round_file(teacher.label(), round - 1))?;
            let mut round_records = Vec::new();
            for call in 0..calls {
                match sample_new_questions(&previous, &seeds, &plan, call, &params, &gateway) {
                    Ok(records) => round_records.extend(records),
                    Err(e) => {
                        log::warn!(
                            "sample-questions: round {round} call {call} via {}: {e}",
                            teacher.label()
                        );
                    }
                }
            }
            jsonl::write_jsonl(&layout.round_file(teacher.label(), round), &round_records)?;
        }
    }

    // Merge all rounds across teachers and deduplicate.
    let mut lists = Vec::new();
    for teacher in &config.teachers {
        lists.push((
            teacher.label().to_string(),
            read_questions_rounds(layout, teacher.label(), rounds)?,
        ));
    }
    let outcome = merge_models(lists, config.gen.dedup_threshold());
    jsonl::write_jsonl(&layout.questions(), &outcome.kept)?;
    jsonl::write_jsonl(&layout.dedup_audit(), &outcome.dropped)?;

    // Comprehensiveness check: a paragraph whose round-0 questions all got
    // deduplicated away joins the failure log.
    let paragraphs: Vec<TextbookParagraph> = jsonl::read_jsonl(&paragraphs_path)?;
    let covered: std::collections::HashSet<&str> = outcome
        .kept
        .iter()
        .filter_map(|q| q.source_paragraph_id.as_deref())
        .collect();
    let mut failures: Vec<GenFailure> = if layout.gen_failures().exists() {
        jsonl::read_jsonl(&layout.gen_failures())?
    } else {
        Vec::new()
    };
    for paragraph in &paragraphs {
        let logged = failures.iter().any(|f| f.paragraph_id == paragraph.id);
        if !covered.contains(paragraph.id.as_str()) && !logged {
            failures.push(GenFailure {
                paragraph_id: paragraph.id.clone(),
                error: "all round-0 questions removed by dedup".into(),
            });
        }
    }
    jsonl::write_jsonl(&layout.gen_failures(), &failures)?;

    log::info!(
        "sample-questions: {} kept, {} dropped by dedup",
        outcome.kept.len(),
        outcome.dropped.len()
    );
    Ok((planned, inputs, outputs))
}

fn stage_gen_answers(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let stage = Stage::GenAnswers;
    let questions_path = require(stage, layout.questions())?;
    let paragraphs_path = require(stage, layout.paragraphs())?;
    let questions: Vec<QuestionRecord> = jsonl::read_jsonl(&questions_path)?;

    let planned = questions.len() as u64;
    let inputs = vec![questions_path, paragraphs_path.clone()];
    let outputs = vec![layout.qa_pairs(), layout.answer_failures()];
    if dry_run {
        return Ok((planned, inputs, outputs));
    }

    let paragraphs: Vec<TextbookParagraph> = jsonl::read_jsonl(&paragraphs_path)?;
    let index: std::collections::HashMap<String, TextbookParagraph> =
        paragraphs.into_iter().map(|p| (p.id.clone(), p)).collect();

    let template = answer_template(config, layout)?;
    let gateway = config.answer.gateway(&config.paths.work_dir)?;
    let batch = generate_answers(
        &questions,
        &template,
        &index,
        &config.answer.params(),
        &gateway,
    );

    jsonl::write_jsonl(&layout.qa_pairs(), &batch.pairs)?;
    jsonl::write_jsonl(&layout.answer_failures(), &batch.failures)?;
    log::info!(
        "gen-answers: {} answered, {} failed, prompt {}",
        batch.pairs.len(),
        batch.failures.len(),
        template.id
    );
    Ok((planned, inputs, outputs))
}

fn stage_optimize_prompt(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let stage = Stage::OptimizePrompt;
    let prompts_path =
        require_config_path(stage, &config.paths.initial_prompts, "initial_prompts")?;
    let valset_path = require_config_path(stage, &config.paths.validation_set, "validation_set")?;

    let initial = load_initial_prompts(&prompts_path)?;
    let valset = load_validation_set(&valset_path)?;
    let opt = &config.optimizer;
    // Per candidate-item pair: one answer call and one judge call; each
    // iteration adds top_k reflections and one resample call.
    let score_cost = |candidates: u64| candidates * valset.len() as u64 * 2;
    let planned = score_cost(opt.initial_pool_size as u64)
        + u64::from(opt.iterations) * (opt.top_k as u64 + 1 + score_cost(2 * opt.top_k as u64));

    let inputs = vec![prompts_path, valset_path];
    let outputs = vec![layout.history(), layout.best_prompt()];
    if dry_run {
        return Ok((planned, inputs, outputs));
    }

    let answer_gateway = config.answer.gateway(&config.paths.work_dir)?;
    let judge_gateway = config.judge.gateway(&config.paths.work_dir)?;
    let meta = config.meta_endpoint();
    let meta_gateway = meta.gateway(&config.paths.work_dir)?;
    let judge_cfg = config.judge.judge_cfg();
    let answer_params = config.answer.params();
    let meta_params = meta.params();
    let backends = OptimizerBackends {
        answer_params: &answer_params,
        answer_gateway: &answer_gateway,
        judge_cfg: &judge_cfg,
        judge_gateway: &judge_gateway,
        meta_params: &meta_params,
        meta_gateway: &meta_gateway,
    };

    let outcome = optimize(
        &initial,
        &valset,
        opt,
        &backends,
        Some(&layout.checkpoint()),
    )?;

    let mut rows = String::new();
    for snapshot in &outcome.history {
        for entry in &snapshot.entries {
            let row = HistoryRow {
                generation: snapshot.generation,
                entry,
            };
            rows.push_str(&serde_json::to_string(&row).expect("history row serializes"));
            rows.push('\n');
        }
    }
    jsonl::write_text(&layout.history(), &rows)?;

    let best_template = AnswerPromptTemplate {
        id: outcome.best.id.clone(),
        system_text: outcome.best.text.clone(),
        include_reference_block: true,
    };
    best_template.save(&layout.best_prompt())?;
    log::info!(
        "optimize-prompt: best {} scoring {:.2}",
        outcome.best.id,
        outcome.best_score.comprehensive
    );
    Ok((planned, inputs, outputs))
}

fn stage_judge(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let stage = Stage::Judge;
    let test_path = require_config_path(stage, &config.paths.test_set, "test_set")?;
    let test_set: Vec<TestItem> = jsonl::read_jsonl(&test_path)?;
    let planned: u64 = test_set
        .iter()
        .map(|item| item.model_outputs.values().filter(|o| o.is_some()).count() as u64)
        .sum();

    let inputs = vec![test_path];
    let outputs = vec![layout.verdicts()];
    if dry_run {
        return Ok((planned, inputs, outputs));
    }

    let gateway = config.judge.gateway(&config.paths.work_dir)?;
    let judge_cfg = config.judge.judge_cfg();
    let mut rows = Vec::new();
    for item in &test_set {
        for (model, output) in &item.model_outputs {
            let Some(answer) = output else { continue };
            let qa = crate::answer_gen::QAPair {
                question_id: format!("{model}/{}", item.id),
                question: item.question.clone(),
                answer: answer.clone(),
                reference_paragraph_id: None,
                prompt_id: "benchmark".into(),
                model: model.clone(),
                answer_char_count: crate::util::text_char_len(answer),
            };
            match judge_answer(&qa, &item.human_reference, &judge_cfg, &gateway) {
                Ok(verdict) => rows.push(VerdictRow {
                    model: model.clone(),
                    verdict,
                }),
                Err(e) => log::warn!("judge: {model}/{}: {e}", item.id),
            }
        }
    }
    jsonl::write_jsonl(&layout.verdicts(), &rows)?;
    log::info!("judge: {} verdicts", rows.len());
    Ok((planned, inputs, outputs))
}

fn stage_evaluate(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let stage = Stage::Evaluate;
    let test_path = require_config_path(stage, &config.paths.test_set, "test_set")?;
    let test_set: Vec<TestItem> = jsonl::read_jsonl(&test_path)?;
    let planned: u64 = test_set
        .iter()
        .map(|item| item.model_outputs.values().filter(|o| o.is_some()).count() as u64)
        .sum();

    let inputs = vec![test_path];
    let outputs = vec![layout.reports(), layout.report_md(), layout.report_csv()];
    if dry_run {
        return Ok((planned, inputs, outputs));
    }

    let gateway = config.judge.gateway(&config.paths.work_dir)?;
    let reports = run_benchmark(
        &test_set,
        &config.judge.judge_cfg(),
        &gateway,
        config.optimizer.alpha,
        &config.metrics,
    )?;
    jsonl::write_jsonl(&layout.reports(), &reports)?;
    jsonl::write_text(
        &layout.report_md(),
        &render_report(&reports, ReportFormat::Markdown),
    )?;
    jsonl::write_text(
        &layout.report_csv(),
        &render_report(&reports, ReportFormat::Csv),
    )?;
    log::info!("evaluate: {} model rows", reports.len());
    Ok((planned, inputs, outputs))
}

fn stage_export(
    config: &PipelineConfig,
    layout: &Layout,
    dry_run: bool,
) -> Result<StageOutcome, PipelineError> {
    let stage = Stage::Export;
    let pairs_path = require(stage, layout.qa_pairs())?;
    let inputs = vec![pairs_path.clone()];
    let outputs = vec![layout.train(), layout.val(), layout.manifest()];
    if dry_run {
        return Ok((0, inputs, outputs));
    }

    let pairs: Vec<crate::answer_gen::QAPair> = jsonl::read_jsonl(&pairs_path)?;
    let manifest = export_training(
        &pairs,
        config.export.split_ratio,
        config.sub_seed("export"),
        config.export.format,
        &layout.train(),
        &layout.val(),
        config.export.notes.clone(),
    )?;
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    jsonl::write_text(&layout.manifest(), &format!("{body}\n"))?;
    log::info!(
        "export: {} records, digest {}",
        manifest.record_count,
        &manifest.content_digest[..12]
    );
    Ok((0, inputs, outputs))
}
