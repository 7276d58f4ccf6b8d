//! Declarative pipeline configuration. One TOML file names the backends,
//! paths, and stage parameters; validation fills published defaults and
//! reports every violation at once, flagging deviations from the standard
//! recipe as warnings rather than errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval_export::ExportFormat;
use crate::gateway::{BackendConfig, BackendKind, Gateway, GatewayError, ModelParams};
use crate::ingest::SplitPolicy;
use crate::judge::{JudgeConfig, LengthUnit};
use crate::prompt_opt::OptimizerConfig;
use crate::question_gen::GenPlan;
use crate::util::rng_stream;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("cannot read config {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("cannot parse config {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// A non-fatal deviation from the published recipe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigWarning(pub String);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelinePaths {
    pub textbook: PathBuf,
    pub seed_pool: PathBuf,
    pub work_dir: PathBuf,
    #[serde(default)]
    pub initial_prompts: Option<PathBuf>,
    #[serde(default)]
    pub validation_set: Option<PathBuf>,
    #[serde(default)]
    pub test_set: Option<PathBuf>,
    /// Fallback answering template when no optimized prompt exists yet.
    #[serde(default)]
    pub answer_template: Option<PathBuf>,
}

/// One model behind one backend, with its decoding defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEndpoint {
    /// Label for cache directories and logs; defaults to the model name.
    #[serde(default)]
    pub name: Option<String>,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    pub backend: BackendConfig,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    1024
}

impl ModelEndpoint {
    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.model_name)
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            rng_seed: None,
        }
    }

    /// Gateway with its response cache under `work_dir/cache/<label>`.
    pub fn gateway(&self, work_dir: &Path) -> Result<Gateway, GatewayError> {
        Gateway::new(&self.backend)?.with_cache_dir(work_dir.join("cache").join(self.label()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeSection {
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_parse_retries")]
    pub parse_retries: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub length_unit: LengthUnit,
    pub backend: BackendConfig,
}

fn default_parse_retries() -> u32 {
    2
}

impl JudgeSection {
    pub fn judge_cfg(&self) -> JudgeConfig {
        JudgeConfig {
            judge_model: self.model_name.clone(),
            temperature: self.temperature,
            parse_retries: self.parse_retries,
            max_tokens: self.max_tokens,
            length_unit: self.length_unit,
        }
    }

    pub fn gateway(&self, work_dir: &Path) -> Result<Gateway, GatewayError> {
        Gateway::new(&self.backend)?.with_cache_dir(
            work_dir
                .join("cache")
                .join(format!("judge-{}", self.model_name)),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSection {
    #[serde(flatten)]
    pub plan: GenPlan,
    #[serde(default = "default_jaccard")]
    pub jaccard_threshold: f64,
    #[serde(default = "default_true")]
    pub fuzzy_dedup: bool,
    #[serde(default = "default_one")]
    pub sampling_calls_per_round: u32,
}

fn default_jaccard() -> f64 {
    0.8
}
fn default_true() -> bool {
    true
}
fn default_one() -> u32 {
    1
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            plan: GenPlan::default(),
            jaccard_threshold: default_jaccard(),
            fuzzy_dedup: true,
            sampling_calls_per_round: 1,
        }
    }
}

impl GenSection {
    pub fn dedup_threshold(&self) -> Option<f64> {
        self.fuzzy_dedup.then_some(self.jaccard_threshold)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportSection {
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default = "default_export_format")]
    pub format: ExportFormat,
    /// Manifest metadata for downstream trainers; defaults record the
    /// standard adapter fine-tuning hyperparameters.
    #[serde(default = "default_notes")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

fn default_split_ratio() -> f64 {
    0.9
}

fn default_export_format() -> ExportFormat {
    ExportFormat::Conversation
}

fn default_notes() -> BTreeMap<String, serde_json::Value> {
    BTreeMap::from([
        ("finetune_method".into(), "lora".into()),
        ("lora_rank".into(), 64.into()),
        ("lora_alpha".into(), 128.into()),
        ("learning_rate".into(), 1e-4.into()),
        ("batch_size".into(), 32.into()),
        ("max_context_length".into(), 2048.into()),
    ])
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            split_ratio: default_split_ratio(),
            format: default_export_format(),
            notes: default_notes(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub global_rng_seed: u64,
    pub paths: PipelinePaths,
    pub teachers: Vec<ModelEndpoint>,
    pub answer: ModelEndpoint,
    /// Endpoint for prompt reflection and resampling; the answer endpoint
    /// doubles as it when absent.
    #[serde(default)]
    pub meta: Option<ModelEndpoint>,
    pub judge: JudgeSection,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub metrics: crate::text_metrics::MetricOptions,
    #[serde(default)]
    pub export: ExportSection,
}

fn default_seed() -> u64 {
    42
}

impl PipelineConfig {
    pub fn meta_endpoint(&self) -> &ModelEndpoint {
        self.meta.as_ref().unwrap_or(&self.answer)
    }

    /// Fan the global seed out into a per-module sub-seed by stable label.
    pub fn sub_seed(&self, label: &str) -> u64 {
        use rand::RngCore;
        rng_stream(self.global_rng_seed, label).next_u64()
    }

    /// Derive the per-module RNG seeds from the global seed. One knob
    /// controls all randomness; `validate_config` calls this after checks.
    pub fn apply_seed_fanout(&mut self) {
        self.gen.plan.rng_seed = self.sub_seed("gen");
        self.optimizer.rng_seed = self.sub_seed("optimizer");
    }
}

fn check_backend(label: &str, backend: &BackendConfig, problems: &mut Vec<String>) {
    if let Err(e) = backend.validate() {
        problems.push(format!("{label}: {e}"));
    }
    if backend.kind == BackendKind::Http && backend.credential_env_var.is_none() {
        log::warn!("{label}: http backend without credential_env_var");
    }
}

fn check_path(label: &str, path: &Path, problems: &mut Vec<String>) {
    if !path.exists() {
        problems.push(format!("{label}: path {} does not exist", path.display()));
    }
}

/// Parse and validate a config file. Returns the config with seeds fanned
/// out, plus warnings for any deviation from the published constants.
pub fn validate_config(
    config_path: &Path,
) -> Result<(PipelineConfig, Vec<ConfigWarning>), ValidationError> {
    let raw = std::fs::read_to_string(config_path).map_err(|e| ValidationError::Io {
        path: config_path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut config: PipelineConfig = toml::from_str(&raw).map_err(|e| ValidationError::Parse {
        path: config_path.display().to_string(),
        detail: e.to_string(),
    })?;

    // Paths inside the config resolve relative to the config file.
    let base = config_path.parent().unwrap_or(Path::new("."));
    let anchor = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&p);
        }
    };
    anchor(&mut config.paths.textbook);
    anchor(&mut config.paths.seed_pool);
    anchor(&mut config.paths.work_dir);
    for p in [
        &mut config.paths.initial_prompts,
        &mut config.paths.validation_set,
        &mut config.paths.test_set,
        &mut config.paths.answer_template,
    ]
    .into_iter()
    .flatten()
    {
        anchor(p);
    }

    let mut problems = Vec::new();
    let mut warnings = Vec::new();

    check_path("paths.textbook", &config.paths.textbook, &mut problems);
    check_path("paths.seed_pool", &config.paths.seed_pool, &mut problems);
    for (label, path) in [
        ("paths.initial_prompts", &config.paths.initial_prompts),
        ("paths.validation_set", &config.paths.validation_set),
        ("paths.test_set", &config.paths.test_set),
        ("paths.answer_template", &config.paths.answer_template),
    ] {
        if let Some(path) = path {
            check_path(label, path, &mut problems);
        }
    }

    if config.teachers.is_empty() {
        problems.push("teachers: at least one teacher endpoint is required".into());
    }
    {
        let mut labels: Vec<&str> = config.teachers.iter().map(|t| t.label()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != config.teachers.len() {
            problems.push("teachers: endpoint labels must be unique".into());
        }
    }
    for teacher in &config.teachers {
        check_backend(
            &format!("teachers.{}", teacher.label()),
            &teacher.backend,
            &mut problems,
        );
    }
    check_backend("answer", &config.answer.backend, &mut problems);
    check_backend("judge", &config.judge.backend, &mut problems);
    if let Some(meta) = &config.meta {
        check_backend("meta", &meta.backend, &mut problems);
    }

    if let Err(e) = config.split.validate() {
        problems.push(e.to_string());
    }

    let opt = &config.optimizer;
    if opt.top_k == 0 {
        problems.push("optimizer.top_k must be >= 1".into());
    }
    if opt.initial_pool_size == 0 {
        problems.push("optimizer.initial_pool_size must be >= 1".into());
    }
    if opt.top_k > opt.initial_pool_size {
        problems.push(format!(
            "optimizer.top_k {} exceeds initial_pool_size {}",
            opt.top_k, opt.initial_pool_size
        ));
    }
    if opt.alpha.is_nan() || opt.alpha < 0.0 {
        problems.push(format!("optimizer.alpha {} must be >= 0", opt.alpha));
    }

    let plan = &config.gen.plan;
    if plan.per_paragraph_target == 0 {
        problems.push("gen.per_paragraph_target must be >= 1".into());
    }
    if plan.content_example_count == 0 {
        problems.push("gen.content_example_count must be >= 1".into());
    }
    if config.gen.sampling_calls_per_round == 0 {
        problems.push("gen.sampling_calls_per_round must be >= 1".into());
    }
    if !(config.gen.jaccard_threshold > 0.0 && config.gen.jaccard_threshold <= 1.0) {
        problems.push(format!(
            "gen.jaccard_threshold {} outside (0, 1]",
            config.gen.jaccard_threshold
        ));
    }
    if !(config.export.split_ratio > 0.0 && config.export.split_ratio <= 1.0) {
        problems.push(format!(
            "export.split_ratio {} outside (0, 1]",
            config.export.split_ratio
        ));
    }

    // Deviations from the published recipe are allowed but flagged.
    let mut deviation = |what: &str, got: String, expected: &str| {
        warnings.push(ConfigWarning(format!(
            "{what} = {got} deviates from the standard recipe value {expected}"
        )));
    };
    if plan.in_context_seed_count != 6 {
        deviation(
            "gen.in_context_seed_count",
            plan.in_context_seed_count.to_string(),
            "6",
        );
    }
    if plan.in_context_generated_count != 2 {
        deviation(
            "gen.in_context_generated_count",
            plan.in_context_generated_count.to_string(),
            "2",
        );
    }
    if plan.style_example_count != 3 {
        deviation(
            "gen.style_example_count",
            plan.style_example_count.to_string(),
            "3",
        );
    }
    if plan.sampling_rounds != 2 {
        deviation("gen.sampling_rounds", plan.sampling_rounds.to_string(), "2");
    }
    if (opt.alpha - 0.5).abs() > f64::EPSILON {
        deviation("optimizer.alpha", opt.alpha.to_string(), "0.5");
    }
    if opt.iterations != 3 {
        deviation("optimizer.iterations", opt.iterations.to_string(), "3");
    }
    if opt.top_k != 5 {
        deviation("optimizer.top_k", opt.top_k.to_string(), "5");
    }
    if opt.feedback_samples != 5 {
        deviation(
            "optimizer.feedback_samples",
            opt.feedback_samples.to_string(),
            "5",
        );
    }
    if opt.initial_pool_size != 10 {
        deviation(
            "optimizer.initial_pool_size",
            opt.initial_pool_size.to_string(),
            "10",
        );
    }

    if !problems.is_empty() {
        return Err(ValidationError::Invalid(problems));
    }

    config.apply_seed_fanout();

    Ok((config, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_config(dir: &Path) -> PathBuf {
        std::fs::write(dir.join("textbook.txt"), "Some course text here.").unwrap();
        let seeds: Vec<String> = (0..10)
            .map(|i| format!("{{\"id\":\"s{i}\",\"text\":\"Seed {i}?\"}}"))
            .collect();
        std::fs::write(dir.join("seeds.jsonl"), seeds.join("\n")).unwrap();

        let path = dir.join("pipeline.toml");
        let mut file = std::fs::File::create(&path).unwrap();
        write!(
            file,
            r#"
[paths]
textbook = "textbook.txt"
seed_pool = "seeds.jsonl"
work_dir = "work"

[[teachers]]
model_name = "sim-a"
[teachers.backend]
kind = "scripted"

[answer]
model_name = "sim-a"
[answer.backend]
kind = "scripted"

[judge]
model_name = "sim-judge"
[judge.backend]
kind = "scripted"
"#
        )
        .unwrap();
        path
    }

    #[test]
    fn minimal_config_gets_published_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal_config(dir.path());
        let (config, warnings) = validate_config(&path).unwrap();
        assert_eq!(config.optimizer.alpha, 0.5);
        assert_eq!(config.optimizer.iterations, 3);
        assert_eq!(config.optimizer.top_k, 5);
        assert_eq!(config.optimizer.feedback_samples, 5);
        assert_eq!(config.optimizer.initial_pool_size, 10);
        assert_eq!(config.gen.plan.in_context_seed_count, 6);
        assert_eq!(config.gen.plan.in_context_generated_count, 2);
        assert_eq!(config.gen.plan.style_example_count, 3);
        assert_eq!(config.gen.plan.sampling_rounds, 2);
        assert_eq!(config.global_rng_seed, 42);
        assert!(warnings.is_empty());
        // Sub-seeds are fanned out, not zero defaults.
        assert_ne!(config.gen.plan.rng_seed, config.optimizer.rng_seed);
    }

    #[test]
    fn zero_top_k_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal_config(dir.path());
        let mut raw = std::fs::read_to_string(&path).unwrap();
        raw.push_str("\n[optimizer]\ntop_k = 0\n");
        std::fs::write(&path, raw).unwrap();
        match validate_config(&path) {
            Err(ValidationError::Invalid(problems)) => {
                assert!(problems.iter().any(|p| p.contains("top_k")));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn recipe_deviation_is_a_warning_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal_config(dir.path());
        let mut raw = std::fs::read_to_string(&path).unwrap();
        raw.push_str("\n[gen]\nin_context_seed_count = 4\n");
        std::fs::write(&path, raw).unwrap();
        let (config, warnings) = validate_config(&path).unwrap();
        assert_eq!(config.gen.plan.in_context_seed_count, 4);
        assert!(warnings
            .iter()
            .any(|w| w.0.contains("in_context_seed_count")));
    }

    #[test]
    fn missing_paths_are_collected_together() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal_config(dir.path());
        std::fs::remove_file(dir.path().join("textbook.txt")).unwrap();
        std::fs::remove_file(dir.path().join("seeds.jsonl")).unwrap();
        match validate_config(&path) {
            Err(ValidationError::Invalid(problems)) => {
                assert!(problems.len() >= 2, "{problems:?}");
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }
}
