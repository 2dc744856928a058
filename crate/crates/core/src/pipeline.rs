//! Stage orchestration over the source × strategy experiment matrix.
//!
//! A run lives in `output/run-<digest>`, where the digest covers the whole
//! configuration except the output directory. Each stage writes its
//! artifacts, digests them and records a marker in `manifest.json`. A stage
//! whose marker still verifies is skipped on the next invocation.

use crate::corpus::{load_corpus, Corpus, CorpusError, CorpusFormat, Source, TestCase, TestFile};
use crate::metrics::{build_report, CoverageSummary, QualityReport};
use crate::modelgw::{extract_test_code, BackendMode, FinishReason, Gateway, GatewayError};
use crate::optimizer::{
    candidates_from, measure_coverage, optimize_from, place, CaseProbe, CoverageSnapshot, Optimization, SandboxProbe,
    Verdict,
};
use crate::promptkit::{build_bundle, GenerationParams, PromptBundle, PromptOptions};
use crate::repairer::{apply_repairs, repair_stats, RepairContext, RepairLog, RepairStats, SandboxCheck};
use crate::retrieval::{Retriever, SelectionStrategy, StrategyKind};
use crate::validator::{Coverage, Outcome, Phase, Sandbox, ValidationReport, Validator};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;
use thiserror::Error;

/// Version stamped on manifests and stage reports.
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Requests in flight at once against a live backend.
const GENERATION_CONCURRENCY: usize = 4;
const HTTP_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` needs completed `{missing}` artifacts; run that stage first")]
    Ordering { stage: Stage, missing: Stage },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("model backend: {0}")]
    Gateway(#[from] GatewayError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cannot diff reports: {0}")]
    Diff(String),
}

impl PipelineError {
    /// Problems with the inputs rather than with a cell.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Ordering { .. }
                | PipelineError::Corpus(_)
                | PipelineError::Gateway(_)
                | PipelineError::Diff(_)
        )
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Select,
    Prompt,
    Generate,
    Validate,
    Repair,
    Optimize,
    Report,
}

impl Stage {
    /// Pipeline order.
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Select,
        Stage::Prompt,
        Stage::Generate,
        Stage::Validate,
        Stage::Repair,
        Stage::Optimize,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Select => "select",
            Stage::Prompt => "prompt",
            Stage::Generate => "generate",
            Stage::Validate => "validate",
            Stage::Repair => "repair",
            Stage::Optimize => "optimize",
            Stage::Report => "report",
        }
    }

    /// Stages that must have completed before this one.
    pub fn predecessors(self) -> &'static [Stage] {
        let i = Stage::ALL.iter().position(|s| *s == self).expect("listed");
        &Stage::ALL[..i]
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Everything that determines a run's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub corpus_format: CorpusFormat,
    pub sources: Vec<Source>,
    pub strategies: Vec<StrategyKind>,
    pub n_examples: usize,
    pub backend: BackendMode,
    /// Replay cache; `<output>/replay-cache.jsonl` when unset.
    pub cache: Option<PathBuf>,
    pub timeout_per_case_secs: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub max_repair_passes: usize,
    pub params: GenerationParams,
    pub include_preambles: bool,
}

impl RunConfig {
    /// Defaults: every source and strategy, five examples, replay mode,
    /// two-minute case timeout.
    pub fn new(corpus: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            corpus_format: CorpusFormat::CanonicalJsonl,
            sources: Source::ALL.to_vec(),
            strategies: StrategyKind::ALL.to_vec(),
            n_examples: 5,
            backend: BackendMode::Replay,
            cache: None,
            timeout_per_case_secs: 120.0,
            seed: 0,
            output: output.into(),
            max_repair_passes: crate::repairer::DEFAULT_MAX_PASSES,
            params: GenerationParams::default(),
            include_preambles: true,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.n_examples < 1 {
            return bad("n_examples must be at least 1".into());
        }
        if self.sources.is_empty() {
            return bad("at least one source is required".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.sources.iter().collect::<BTreeSet<_>>().len() != self.sources.len() {
            return bad("a source is listed twice".into());
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            return bad("a strategy is listed twice".into());
        }
        if !(self.timeout_per_case_secs > 0.0 && self.timeout_per_case_secs.is_finite()) {
            return bad("timeout_per_case must be a positive number of seconds".into());
        }
        if self.corpus.as_os_str().is_empty() {
            return bad("corpus path is empty".into());
        }
        self.params.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// The configuration as JSON without the output directory.
    pub fn identity(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output");
        v
    }

    /// SHA-256 of [`RunConfig::identity`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.identity().to_string().as_bytes()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(format!("run-{}", &self.digest()[..16]))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache
            .clone()
            .unwrap_or_else(|| self.output.join("replay-cache.jsonl"))
    }

    pub fn timeout_per_case(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_per_case_secs)
    }

    /// Cells in matrix order: sources outer, strategies inner.
    pub fn cells(&self) -> Vec<Cell> {
        self.sources
            .iter()
            .flat_map(|&source| self.strategies.iter().map(move |&strategy| Cell { source, strategy }))
            .collect()
    }
}

/// One (source, strategy) pair of the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub source: Source,
    pub strategy: StrategyKind,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}__{}", self.source, self.strategy)
    }

    pub fn dir(&self) -> String {
        format!("cells/{}", self.name())
    }
}

/// Digests of the artifacts a completed stage produced, keyed by path
/// relative to the run directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMarker {
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantine {
    pub stage: Stage,
    pub reason: String,
}

/// A problem a stage could not process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemFailure {
    pub problem_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub source: Source,
    pub strategy: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quarantine: Option<Quarantine>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<Stage, Vec<ProblemFailure>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_digest: String,
    pub config: Value,
    pub stages: BTreeMap<Stage, StageMarker>,
    pub cells: BTreeMap<String, CellRecord>,
}

impl RunManifest {
    fn fresh(config: &RunConfig) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            config_digest: config.digest(),
            config: config.identity(),
            stages: BTreeMap::new(),
            cells: config
                .cells()
                .into_iter()
                .map(|c| {
                    (
                        c.name(),
                        CellRecord {
                            source: c.source,
                            strategy: c.strategy,
                            quarantine: None,
                            failures: BTreeMap::new(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }

    pub fn quarantined(&self) -> impl Iterator<Item = (&String, &Quarantine)> {
        self.cells
            .iter()
            .filter_map(|(k, c)| c.quarantine.as_ref().map(|q| (k, q)))
    }

    pub fn failure_count(&self) -> usize {
        self.cells
            .values()
            .flat_map(|c| c.failures.values())
            .map(Vec::len)
            .sum()
    }

    /// Any quarantined cell or per-problem failure.
    pub fn has_failures(&self) -> bool {
        self.quarantined().next().is_some() || self.failure_count() > 0
    }

    /// Whether `stage` has a marker whose artifacts all match their digests.
    pub fn verifies(&self, run_dir: &Path, stage: Stage) -> bool {
        self.stages.get(&stage).is_some_and(|m| {
            m.artifacts
                .iter()
                .all(|(rel, digest)| fs::read(run_dir.join(rel)).is_ok_and(|b| file_digest(&b) == *digest))
        })
    }
}

fn file_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Examples chosen for one target problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub problem_id: String,
    pub examples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PromptBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<String>,
}

/// Extracted model output for one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub problem_id: String,
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub problem_id: String,
    pub text: String,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub problem_id: String,
    pub text: String,
    pub log: RepairLog,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub problem_id: String,
    /// The repaired file split into cases and rendered as one suite.
    pub generated_text: String,
    /// Coverage of that suite on its own.
    pub generated: CoverageSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize_error: Option<String>,
    pub optimization: Optimization,
}

/// Execution outcome tallies over a set of candidate files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub files: usize,
    pub syntax_ok: usize,
    pub compile_ok: usize,
    pub no_executable_code: usize,
    pub cases: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub timeouts: usize,
    pub syntax_pct: f64,
    pub compile_pct: f64,
    pub pass_pct: f64,
}

impl ValidationSummary {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a ValidationReport>) -> Self {
        let mut s = ValidationSummary::default();
        for r in reports {
            s.files += 1;
            s.syntax_ok += usize::from(r.syntax_ok());
            s.compile_ok += usize::from(r.compile_ok());
            s.no_executable_code += usize::from(r.no_executable_code);
            for c in r.cases() {
                s.cases += 1;
                match c.outcome {
                    Outcome::Pass => s.passed += 1,
                    Outcome::Fail => s.failed += 1,
                    Outcome::Error => s.errors += 1,
                    Outcome::Timeout => s.timeouts += 1,
                }
            }
        }
        s.syntax_pct = pct(s.syntax_ok, s.files);
        s.compile_pct = pct(s.compile_ok, s.files);
        s.pass_pct = pct(s.passed, s.cases);
        s
    }
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationComparison {
    pub original: ValidationSummary,
    pub repaired: ValidationSummary,
}

/// Verdict accounting plus the coverage change optimization bought.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub candidates: usize,
    pub kept: usize,
    pub removed: usize,
    pub skipped: usize,
    pub faulty: usize,
    pub kept_pct: f64,
    pub removed_pct: f64,
    pub skipped_pct: f64,
    pub faulty_pct: f64,
    pub line_delta: f64,
    pub branch_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStage {
    Initial,
    Generated,
    Optimized,
}

impl ReportStage {
    pub const ALL: [ReportStage; 3] = [ReportStage::Initial, ReportStage::Generated, ReportStage::Optimized];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportStage::Initial => "initial",
            ReportStage::Generated => "generated",
            ReportStage::Optimized => "optimized",
        }
    }
}

/// Quality of one cell's suites at one point of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub schema_version: u32,
    pub stage: ReportStage,
    pub source: Source,
    pub strategy: StrategyKind,
    pub problems: usize,
    pub quality: QualityReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<RepairStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSummary>,
}

impl StageReport {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}

/// Relative path of a cell's report for `stage`.
pub fn report_path(cell: &Cell, stage: ReportStage) -> String {
    format!("{}/reports/{}.json", cell.dir(), stage.as_str())
}

/// Writes `bytes` through a temporary sibling so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("artifact serializes") + "\n")
        .collect()
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1)))
        .collect()
}

/// Artifacts written by one cell for one stage, plus the problems it
/// could not process.
#[derive(Default)]
struct CellOutput {
    artifacts: Vec<String>,
    failures: Vec<ProblemFailure>,
}

/// Drives stages for one configuration.
pub struct Pipeline {
    config: RunConfig,
    run_dir: PathBuf,
    manifest: RunManifest,
    gateway: Option<Gateway>,
    validator: Option<Validator>,
    corpus: Option<Corpus>,
    force: bool,
    executed: Vec<Stage>,
    skipped: Vec<Stage>,
}

impl Pipeline {
    /// Validates `config` and picks up an existing manifest for it.
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let run_dir = config.run_dir();
        let path = run_dir.join(MANIFEST_FILE);
        let manifest = match RunManifest::load(&path) {
            Ok(m) if m.config_digest == config.digest() && m.schema_version == SCHEMA_VERSION => m,
            _ => RunManifest::fresh(&config),
        };
        Ok(Pipeline {
            config,
            run_dir,
            manifest,
            gateway: None,
            validator: None,
            corpus: None,
            force: false,
            executed: Vec::new(),
            skipped: Vec::new(),
        })
    }

    /// Uses `gateway` instead of one built from the configured mode.
    pub fn with_gateway(mut self, gateway: Gateway) -> Self {
        self.gateway = Some(gateway);
        self
    }

    pub fn with_validator(mut self, validator: Validator) -> Self {
        self.validator = Some(validator);
        self
    }

    /// Recompute requested stages even when their markers verify.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Stages recomputed by the calls to [`Pipeline::run`] so far.
    pub fn executed(&self) -> &[Stage] {
        &self.executed
    }

    /// Stages skipped because their markers verified.
    pub fn skipped(&self) -> &[Stage] {
        &self.skipped
    }

    /// Runs the requested stages in pipeline order.
    pub fn run(&mut self, stages: &[Stage]) -> Result<RunManifest, PipelineError> {
        let wanted: BTreeSet<Stage> = stages.iter().copied().collect();
        if wanted.is_empty() {
            return Err(PipelineError::Config("no stages requested".into()));
        }
        for &stage in &wanted {
            self.check_order(stage, &wanted)?;
        }
        fs::create_dir_all(&self.run_dir).map_err(|e| io_err(&self.run_dir, e))?;
        for &stage in &wanted {
            if !self.force && self.manifest.verifies(&self.run_dir, stage) {
                self.skipped.push(stage);
                continue;
            }
            self.check_order(stage, &BTreeSet::new())?;
            self.invalidate_from(stage);
            self.save_manifest()?;
            let artifacts = self.execute(stage)?;
            let mut marker = StageMarker::default();
            for rel in artifacts {
                let path = self.run_dir.join(&rel);
                let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
                marker.artifacts.insert(rel, file_digest(&bytes));
            }
            self.manifest.stages.insert(stage, marker);
            self.save_manifest()?;
            self.executed.push(stage);
        }
        Ok(self.manifest.clone())
    }

    /// The nearest predecessor of `stage` that is neither requested nor
    /// complete is an ordering error.
    fn check_order(&self, stage: Stage, requested: &BTreeSet<Stage>) -> Result<(), PipelineError> {
        for &prev in stage.predecessors().iter().rev() {
            if !requested.contains(&prev) && !self.manifest.verifies(&self.run_dir, prev) {
                return Err(PipelineError::Ordering { stage, missing: prev });
            }
        }
        Ok(())
    }

    /// Drops the markers, quarantines and failures of `stage` and every
    /// later stage, whose inputs are about to change.
    fn invalidate_from(&mut self, stage: Stage) {
        self.manifest.stages.retain(|s, _| *s < stage);
        for cell in self.manifest.cells.values_mut() {
            if cell.quarantine.as_ref().is_some_and(|q| q.stage >= stage) {
                cell.quarantine = None;
            }
            cell.failures.retain(|s, _| *s < stage);
        }
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        write_atomic(
            &self.run_dir.join(MANIFEST_FILE),
            to_json_pretty(&self.manifest).as_bytes(),
        )
    }

    fn write(&self, rel: &str, text: &str) -> Result<(), PipelineError> {
        write_atomic(&self.run_dir.join(rel), text.as_bytes())
    }

    fn execute(&mut self, stage: Stage) -> Result<Vec<String>, PipelineError> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Generate => {
                self.ensure_gateway()?;
                self.per_cell(stage)
            }
            Stage::Report => {
                let mut artifacts = self.per_cell(stage)?;
                artifacts.push(self.write_run_ledger()?);
                Ok(artifacts)
            }
            _ => self.per_cell(stage),
        }
    }

    fn ingest(&mut self) -> Result<Vec<String>, PipelineError> {
        let corpus = load_corpus(&self.config.corpus, self.config.corpus_format)?;
        self.write("corpus.jsonl", &corpus.emit())?;
        self.write("rejects.jsonl", &to_jsonl(corpus.rejects()))?;
        self.corpus = Some(corpus);
        Ok(vec!["corpus.jsonl".into(), "rejects.jsonl".into()])
    }

    fn load_corpus(&mut self) -> Result<(), PipelineError> {
        if self.corpus.is_none() {
            let path = self.run_dir.join("corpus.jsonl");
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            self.corpus = Some(Corpus::from_canonical_str(&text)?);
        }
        Ok(())
    }

    fn ensure_gateway(&mut self) -> Result<(), PipelineError> {
        if self.gateway.is_none() {
            self.gateway = Some(Gateway::from_mode(
                self.config.backend,
                &self.config.cache_path(),
                HTTP_TIMEOUT,
            )?);
        }
        Ok(())
    }

    fn per_cell(&mut self, stage: Stage) -> Result<Vec<String>, PipelineError> {
        self.load_corpus()?;
        if self.validator.is_none() && matches!(stage, Stage::Validate | Stage::Repair | Stage::Optimize) {
            self.validator = Some(Validator::default());
        }
        let retriever = match stage {
            Stage::Select => Some(
                Retriever::new(self.corpus.as_ref().expect("loaded"))
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
            ),
            _ => None,
        };
        let mut artifacts = Vec::new();
        for cell in self.config.cells() {
            let name = cell.name();
            if self.manifest.cells[&name].quarantine.is_some() {
                continue;
            }
            let ctx = StageCtx {
                config: &self.config,
                run_dir: &self.run_dir,
                corpus: self.corpus.as_ref().expect("loaded"),
                gateway: self.gateway.as_ref(),
                validator: self.validator.as_ref(),
                retriever: retriever.as_ref(),
                cell,
            };
            let result = match stage {
                Stage::Select => ctx.select(),
                Stage::Prompt => ctx.prompt(),
                Stage::Generate => ctx.generate(),
                Stage::Validate => ctx.validate(),
                Stage::Repair => ctx.repair(),
                Stage::Optimize => ctx.optimize(),
                Stage::Report => ctx.report(),
                Stage::Ingest => unreachable!("ingest is not per cell"),
            };
            let record = self.manifest.cells.get_mut(&name).expect("cell listed");
            match result {
                Ok(out) => {
                    artifacts.extend(out.artifacts);
                    if !out.failures.is_empty() {
                        record.failures.insert(stage, out.failures);
                    }
                }
                Err(reason) => record.quarantine = Some(Quarantine { stage, reason }),
            }
        }
        Ok(artifacts)
    }

    /// One row per cell and report stage, or a quarantine row.
    fn write_run_ledger(&self) -> Result<String, PipelineError> {
        let mut out = String::from(
            "cell\tstage\tproblems\ttests\tline_pct\tbranch_pct\tcyclomatic\tcognitive\tavg_smells\tavg_debt_minutes\tstatus\n",
        );
        for cell in self.config.cells() {
            let name = cell.name();
            if let Some(q) = &self.manifest.cells[&name].quarantine {
                out.push_str(&format!(
                    "{name}\t-\t-\t-\t-\t-\t-\t-\t-\t-\tquarantined at {}: {}\n",
                    q.stage,
                    one_line(&q.reason)
                ));
                continue;
            }
            for stage in ReportStage::ALL {
                let r = StageReport::load(&self.run_dir.join(report_path(&cell, stage)))?;
                let q = &r.quality;
                out.push_str(&format!(
                    "{name}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{}\t{}\t{:.2}\t{:.2}\tok\n",
                    stage.as_str(),
                    r.problems,
                    q.total_tests,
                    q.line_pct,
                    q.branch_pct,
                    q.cyclomatic_total,
                    q.cognitive_total,
                    q.avg_smells,
                    q.avg_debt_minutes
                ));
            }
        }
        self.write("ledger.tsv", &out)?;
        Ok("ledger.tsv".into())
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Everything one cell's stage needs, borrowed from the pipeline.
struct StageCtx<'a> {
    config: &'a RunConfig,
    run_dir: &'a Path,
    corpus: &'a Corpus,
    gateway: Option<&'a Gateway>,
    validator: Option<&'a Validator>,
    retriever: Option<&'a Retriever<'a>>,
    cell: Cell,
}

impl StageCtx<'_> {
    fn rel(&self, file: &str) -> String {
        format!("{}/{file}", self.cell.dir())
    }

    fn read<T: DeserializeOwned>(&self, file: &str) -> Result<Vec<T>, String> {
        read_jsonl(&self.run_dir.join(self.rel(file)))
    }

    fn write(&self, file: &str, text: &str, out: &mut CellOutput) -> Result<(), String> {
        let rel = self.rel(file);
        write_atomic(&self.run_dir.join(&rel), text.as_bytes()).map_err(|e| e.to_string())?;
        out.artifacts.push(rel);
        Ok(())
    }

    fn validator(&self) -> &Validator {
        self.validator.expect("validator prepared")
    }

    fn sandbox(&self, problem_id: &str) -> Result<Sandbox, String> {
        let problem = self
            .corpus
            .problem(problem_id)
            .ok_or_else(|| format!("problem {problem_id} is not in the corpus"))?;
        Sandbox::create(problem, self.config.timeout_per_case()).map_err(|e| e.to_string())
    }

    fn select(&self) -> Result<CellOutput, String> {
        let source = self.cell.source;
        if !self.corpus.has_source(source) {
            return Err(format!("corpus has no {source} tests"));
        }
        let retriever = self.retriever.expect("retriever prepared");
        let strategy = SelectionStrategy::with_run_seed(self.cell.strategy, self.config.seed);
        let records: Vec<SelectionRecord> = self
            .corpus
            .problems()
            .map(
                |p| match retriever.select(&strategy, p, source, self.config.n_examples) {
                    Ok(cases) => SelectionRecord {
                        problem_id: p.id.clone(),
                        examples: cases.into_iter().map(|c| c.id).collect(),
                        skip: None,
                    },
                    Err(e) => SelectionRecord {
                        problem_id: p.id.clone(),
                        examples: Vec::new(),
                        skip: Some(e.to_string()),
                    },
                },
            )
            .collect();
        let mut out = CellOutput::default();
        self.write("selection.jsonl", &to_jsonl(&records), &mut out)?;
        Ok(out)
    }

    fn prompt(&self) -> Result<CellOutput, String> {
        let by_id: BTreeMap<&str, &TestCase> = self
            .corpus
            .test_files()
            .flat_map(|f| f.cases.iter())
            .map(|c| (c.id.as_str(), c))
            .collect();
        let strategy = SelectionStrategy::with_run_seed(self.cell.strategy, self.config.seed);
        let options = PromptOptions {
            include_preambles: self.config.include_preambles,
        };
        let mut records = Vec::new();
        for sel in self.read::<SelectionRecord>("selection.jsonl")? {
            let mut record = PromptRecord {
                problem_id: sel.problem_id.clone(),
                bundle: None,
                skip: sel.skip.clone(),
            };
            if record.skip.is_none() {
                let problem = self
                    .corpus
                    .problem(&sel.problem_id)
                    .ok_or_else(|| format!("selection names unknown problem {}", sel.problem_id))?;
                let cases: Vec<TestCase> = sel
                    .examples
                    .iter()
                    .map(|id| {
                        by_id
                            .get(id.as_str())
                            .map(|c| (*c).clone())
                            .ok_or_else(|| format!("unknown example case {id}"))
                    })
                    .collect::<Result<_, _>>()?;
                match build_bundle(
                    self.corpus,
                    problem,
                    &strategy,
                    self.cell.source,
                    &cases,
                    &self.config.params,
                    options,
                ) {
                    Ok(b) => record.bundle = Some(b),
                    Err(e) => record.skip = Some(e.to_string()),
                }
            }
            records.push(record);
        }
        let mut out = CellOutput::default();
        self.write("prompts.jsonl", &to_jsonl(&records), &mut out)?;
        Ok(out)
    }

    fn generate(&self) -> Result<CellOutput, String> {
        let bundles: Vec<PromptBundle> = self
            .read::<PromptRecord>("prompts.jsonl")?
            .into_iter()
            .filter_map(|r| r.bundle)
            .collect();
        let gateway = self.gateway.expect("gateway prepared");
        let mut out = CellOutput::default();
        let mut records = Vec::new();
        for (bundle, result) in bundles
            .iter()
            .zip(gateway.generate_all(&bundles, GENERATION_CONCURRENCY))
        {
            let mut record = GenerationRecord {
                problem_id: bundle.problem_id.clone(),
                prompt_digest: bundle.digest.clone(),
                finish_reason: None,
                truncated: false,
                text: None,
                error: None,
            };
            match result {
                Ok(response) => {
                    record.finish_reason = Some(response.finish_reason);
                    if response.finish_reason == FinishReason::Error {
                        record.error = Some(format!("backend refused the prompt: {}", one_line(&response.raw_text)));
                    } else {
                        let extraction = extract_test_code(&response);
                        record.truncated = extraction.truncated;
                        record.text = Some(extraction.candidates.join("\n\n"));
                    }
                }
                Err(e) => {
                    record.error = Some(e.to_string());
                    out.failures.push(ProblemFailure {
                        problem_id: bundle.problem_id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
            records.push(record);
        }
        self.write("generations.jsonl", &to_jsonl(&records), &mut out)?;
        Ok(out)
    }

    fn validate(&self) -> Result<CellOutput, String> {
        let mut out = CellOutput::default();
        let mut records = Vec::new();
        for generation in self.read::<GenerationRecord>("generations.jsonl")? {
            let Some(text) = generation.text else { continue };
            let sandbox = self.sandbox(&generation.problem_id)?;
            match self
                .validator()
                .validate(&sandbox, &text, Phase::Original, generation.truncated)
            {
                Ok(report) => records.push(ValidationRecord {
                    problem_id: generation.problem_id,
                    text,
                    report,
                }),
                Err(e) => out.failures.push(ProblemFailure {
                    problem_id: generation.problem_id,
                    reason: e.to_string(),
                }),
            }
        }
        self.write("validation.jsonl", &to_jsonl(&records), &mut out)?;
        Ok(out)
    }

    fn repair(&self) -> Result<CellOutput, String> {
        let mut out = CellOutput::default();
        let mut records = Vec::new();
        for v in self.read::<ValidationRecord>("validation.jsonl")? {
            let problem = self
                .corpus
                .problem(&v.problem_id)
                .ok_or_else(|| format!("problem {} is not in the corpus", v.problem_id))?;
            let sandbox = self.sandbox(&v.problem_id)?;
            let check = SandboxCheck {
                validator: self.validator(),
                sandbox: &sandbox,
            };
            let ctx = RepairContext::for_problem(problem);
            match apply_repairs(&v.text, &v.report, &ctx, &check, self.config.max_repair_passes) {
                Ok(mut repaired) => {
                    repaired.log.source = Some(self.cell.source);
                    repaired.report.phase = Phase::Repaired;
                    records.push(RepairRecord {
                        problem_id: v.problem_id,
                        text: repaired.text,
                        log: repaired.log,
                        report: repaired.report,
                    });
                }
                Err(e) => out.failures.push(ProblemFailure {
                    problem_id: v.problem_id,
                    reason: e.to_string(),
                }),
            }
        }
        self.write("repairs.jsonl", &to_jsonl(&records), &mut out)?;
        Ok(out)
    }

    fn optimize(&self) -> Result<CellOutput, String> {
        let mut out = CellOutput::default();
        let mut records = Vec::new();
        let mut ledger = String::from("problem_id\tcase_id\tverdict\tdelta_lines\tdelta_branch_arms\tadmitted_as\n");
        for r in self.read::<RepairRecord>("repairs.jsonl")? {
            match self.optimize_one(&r) {
                Ok((record, suite)) => {
                    for d in &record.optimization.decisions {
                        ledger.push_str(&format!(
                            "{}\t{}\t{}\t{}\t{}\t{}\n",
                            record.problem_id,
                            d.case_id,
                            d.verdict,
                            d.delta_lines,
                            d.delta_branch_arms,
                            d.admitted_as.as_deref().unwrap_or("-")
                        ));
                    }
                    self.write(
                        &format!("suites/{}.py", file_stem(&record.problem_id)),
                        &suite.render(),
                        &mut out,
                    )?;
                    records.push(record);
                }
                Err(reason) => out.failures.push(ProblemFailure {
                    problem_id: r.problem_id.clone(),
                    reason,
                }),
            }
        }
        self.write("optimization.jsonl", &to_jsonl(&records), &mut out)?;
        self.write("decisions.tsv", &ledger, &mut out)?;
        Ok(out)
    }

    fn optimize_one(&self, r: &RepairRecord) -> Result<(OptimizationRecord, TestFile), String> {
        let source = self.cell.source;
        let initial = self
            .corpus
            .tests(&r.problem_id, source)
            .cloned()
            .unwrap_or_else(|| TestFile::from_cases(&r.problem_id, source, "", Vec::new()));
        let (candidates, normalize_error) = if r.text.trim().is_empty() {
            (Vec::new(), None)
        } else {
            match candidates_from(&r.problem_id, source, &r.text) {
                Ok(c) => (c, None),
                Err(e) => (Vec::new(), Some(e.to_string())),
            }
        };
        let sandbox = self.sandbox(&r.problem_id)?;
        let mut probe = SandboxProbe {
            validator: self.validator(),
            sandbox: &sandbox,
        };
        let err = |e: crate::optimizer::OptimizerError| e.to_string();
        let universe: Coverage = probe.universe().map_err(err)?;
        let mut generated_suite = TestFile::from_cases(&r.problem_id, source, "", Vec::new());
        for candidate in &candidates {
            if let Ok((file, _)) = place(&generated_suite, candidate) {
                generated_suite = file;
            }
        }
        let generated = measure_coverage(&mut probe, &[&generated_suite], &universe).map_err(err)?;
        let before = measure_coverage(&mut probe, &[&initial], &universe).map_err(err)?;
        let mut optimization = optimize_from(&mut probe, &initial, before, &universe, &candidates).map_err(err)?;
        let suite = optimization.suite.take().expect("optimizer returns its suite");
        Ok((
            OptimizationRecord {
                problem_id: r.problem_id.clone(),
                generated_text: generated_suite.render(),
                generated,
                normalize_error,
                optimization,
            },
            suite,
        ))
    }

    fn report(&self) -> Result<CellOutput, String> {
        let source = self.cell.source;
        let optimized: Vec<OptimizationRecord> = self.read("optimization.jsonl")?;
        let repairs: Vec<RepairRecord> = self.read("repairs.jsonl")?;
        let validations: Vec<ValidationRecord> = self.read("validation.jsonl")?;
        let parse =
            |pid: &str, text: &str| TestFile::parse(pid, source, text).map_err(|d| format!("{pid}: {}", d.message));

        let initial: Vec<TestFile> = optimized
            .iter()
            .filter_map(|o| self.corpus.tests(&o.problem_id, source).cloned())
            .collect();
        let generated: Vec<TestFile> = optimized
            .iter()
            .map(|o| parse(&o.problem_id, &o.generated_text))
            .collect::<Result<_, _>>()?;
        let final_suites: Vec<TestFile> = optimized
            .iter()
            .map(|o| {
                let path = self
                    .run_dir
                    .join(self.rel(&format!("suites/{}.py", file_stem(&o.problem_id))));
                let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                parse(&o.problem_id, &text)
            })
            .collect::<Result<_, _>>()?;

        let before = CoverageSummary::from_snapshots(optimized.iter().map(|o| &o.optimization.before));
        let after = CoverageSummary::from_snapshots(optimized.iter().map(|o| &o.optimization.after));
        let gen_cov = CoverageSummary::from_snapshots(optimized.iter().map(|o| &o.generated));

        let mut summary = OptimizationSummary::default();
        for o in &optimized {
            let opt = &o.optimization;
            summary.candidates += opt.decisions.len();
            summary.kept += opt.count(Verdict::Kept);
            summary.removed += opt.count(Verdict::Removed);
            summary.skipped += opt.count(Verdict::Skipped);
            summary.faulty += opt.count(Verdict::Faulty);
        }
        summary.kept_pct = pct(summary.kept, summary.candidates);
        summary.removed_pct = pct(summary.removed, summary.candidates);
        summary.skipped_pct = pct(summary.skipped, summary.candidates);
        summary.faulty_pct = pct(summary.faulty, summary.candidates);
        summary.line_delta = round_delta(after.line_pct - before.line_pct);
        summary.branch_delta = round_delta(after.branch_pct - before.branch_pct);

        let validation = ValidationComparison {
            original: ValidationSummary::from_reports(validations.iter().map(|v| &v.report)),
            repaired: ValidationSummary::from_reports(repairs.iter().map(|r| &r.report)),
        };
        let logs: Vec<RepairLog> = repairs.into_iter().map(|r| r.log).collect();

        let mut out = CellOutput::default();
        for (stage, files, coverage) in [
            (ReportStage::Initial, &initial, before),
            (ReportStage::Generated, &generated, gen_cov),
            (ReportStage::Optimized, &final_suites, after),
        ] {
            let refs: Vec<&TestFile> = files.iter().collect();
            let quality = build_report(&format!("{}/{}", self.cell.name(), stage.as_str()), &refs, coverage)
                .map_err(|e| e.to_string())?;
            let report = StageReport {
                schema_version: SCHEMA_VERSION,
                stage,
                source,
                strategy: self.cell.strategy,
                problems: optimized.len(),
                quality,
                validation: (stage == ReportStage::Generated).then(|| validation.clone()),
                repair: (stage == ReportStage::Generated).then(|| repair_stats(&logs)),
                optimization: (stage == ReportStage::Optimized).then(|| summary.clone()),
            };
            let rel = report_path(&self.cell, stage);
            write_atomic(&self.run_dir.join(&rel), to_json_pretty(&report).as_bytes()).map_err(|e| e.to_string())?;
            out.artifacts.push(rel);
        }
        Ok(out)
    }
}

/// A problem id made safe for a file name.
fn file_stem(problem_id: &str) -> String {
    problem_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs `stages` for `config` with the configured backend.
pub fn run(config: RunConfig, stages: &[Stage]) -> Result<RunManifest, PipelineError> {
    Pipeline::new(config)?.run(stages)
}

/// Differences are reported to nine decimals so that percentages quoted to
/// one or two decimals subtract exactly.
pub fn round_delta(d: f64) -> f64 {
    let r = (d * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// One metric in two reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: f64,
    pub b: f64,
    /// `b - a`, rounded by [`round_delta`].
    pub delta: f64,
}

/// Per-metric change between two reports of the same schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub schema_version: u32,
    pub metrics: BTreeMap<String, MetricDelta>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
}

impl ReportDelta {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|m| m.delta)
    }

    pub fn is_zero(&self) -> bool {
        self.metrics.values().all(|m| m.delta == 0.0) && self.only_in_a.is_empty() && self.only_in_b.is_empty()
    }
}

impl fmt::Display for ReportDelta {
    /// `metric  a -> b  (+d)` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, m) in &self.metrics {
            writeln!(f, "{k}\t{} -> {}\t({:+})", m.a, m.b, m.delta)?;
        }
        for k in &self.only_in_a {
            writeln!(f, "{k}\tonly in a")?;
        }
        for k in &self.only_in_b {
            writeln!(f, "{k}\tonly in b")?;
        }
        Ok(())
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, f64>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                out.insert(prefix.to_string(), x);
            }
        }
        _ => {}
    }
}

fn schema_of(v: &Value) -> Option<u32> {
    v.get("schema_version").and_then(Value::as_u64).map(|n| n as u32)
}

/// Per-metric deltas between two parsed reports. Every numeric leaf
/// outside arrays counts as a metric, keyed by its dotted path.
pub fn diff_values(a: &Value, b: &Value) -> Result<ReportDelta, PipelineError> {
    let (sa, sb) = (schema_of(a), schema_of(b));
    let schema_version = match (sa, sb) {
        (Some(x), Some(y)) if x == y => x,
        _ => {
            return Err(PipelineError::Diff(format!(
                "schema versions differ ({} vs {})",
                sa.map_or("none".into(), |x| x.to_string()),
                sb.map_or("none".into(), |x| x.to_string())
            )))
        }
    };
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    flatten("", a, &mut fa);
    flatten("", b, &mut fb);
    fa.remove("schema_version");
    fb.remove("schema_version");
    let mut delta = ReportDelta {
        schema_version,
        metrics: BTreeMap::new(),
        only_in_a: fa.keys().filter(|k| !fb.contains_key(*k)).cloned().collect(),
        only_in_b: fb.keys().filter(|k| !fa.contains_key(*k)).cloned().collect(),
    };
    for (k, &x) in &fa {
        if let Some(&y) = fb.get(k) {
            delta.metrics.insert(
                k.clone(),
                MetricDelta {
                    a: x,
                    b: y,
                    delta: round_delta(y - x),
                },
            );
        }
    }
    Ok(delta)
}

/// [`diff_values`] over two report files.
pub fn diff_reports(a: &Path, b: &Path) -> Result<ReportDelta, PipelineError> {
    let load = |p: &Path| -> Result<Value, PipelineError> {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Diff(format!("{}: {e}", p.display())))
    };
    diff_values(&load(a)?, &load(b)?)
}
