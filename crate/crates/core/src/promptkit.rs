//! Few-shot prompt construction.

use crate::corpus::{render_parts, Corpus, Problem, Source, TestCase};
use crate::retrieval::{RetrievalError, Retriever, SelectionStrategy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CUT_MARKER: &str = "# CLASS UNDER TEST:";
pub const EXAMPLES_MARKER: &str = "# EXAMPLES:";

const SYSTEM_PROMPT: &str = "You are an expert in Python test generation using pytest. \
Your goal is to generate new high-quality unit tests for a given Python class. \
You will be provided with the class definition and your output should be a list of new unit tests. \
The prompt will include EXAMPLES of similar test cases to help you generate well-structured test cases. \
Make sure to keep the tests maintainable and easy to understand, while aiming for high code coverage. \
The output should only include the test classes.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("few-shot prompting needs at least one example")]
    NoExamples,
    #[error("{0} contains a prompt marker line and would make the prompt ambiguous")]
    MarkerCollision(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model_id: "gpt-4o".into(),
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), PromptError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(PromptError::InvalidParams(
                "temperature must be a finite number >= 0".into(),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(PromptError::InvalidParams("max_output_tokens must be > 0".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(PromptError::InvalidParams("model_id is empty".into()));
        }
        Ok(())
    }
}

/// How example blocks are rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Prefix each example with its file's import preamble.
    pub include_preambles: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            include_preambles: true,
        }
    }
}

/// Everything needed to issue and later audit one generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub digest: String,
    pub problem_id: String,
    pub strategy: SelectionStrategy,
    pub source: Source,
    pub system_text: String,
    pub user_text: String,
    pub examples: Vec<String>,
    pub params: GenerationParams,
}

impl PromptBundle {
    /// Recomputes the digest from the content fields.
    pub fn expected_digest(&self) -> String {
        prompt_digest(&self.system_text, &self.user_text, &self.params)
    }
}

/// SHA-256 over canonical JSON of the prompt texts and parameters.
pub fn prompt_digest(system: &str, user: &str, params: &GenerationParams) -> String {
    #[derive(Serialize)]
    struct Keyed<'a> {
        params: &'a GenerationParams,
        system: &'a str,
        user: &'a str,
    }
    let json = serde_json::to_vec(&Keyed { params, system, user }).expect("serializable");
    hex::encode(Sha256::digest(json))
}

pub fn build_system_prompt() -> String {
    SYSTEM_PROMPT.to_string()
}

/// One rendered example: an optional preamble followed by the case body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleBlock<'a> {
    pub preamble: &'a str,
    pub case: &'a TestCase,
}

/// User prompt from bare example bodies.
pub fn build_user_prompt(problem: &Problem, examples: &[TestCase]) -> Result<String, PromptError> {
    let blocks: Vec<ExampleBlock> = examples
        .iter()
        .map(|case| ExampleBlock { preamble: "", case })
        .collect();
    build_user_prompt_with(problem, &blocks)
}

fn has_marker(text: &str) -> bool {
    text.lines()
        .any(|l| l.trim_start().starts_with(CUT_MARKER) || l.trim_start().starts_with(EXAMPLES_MARKER))
}

/// User prompt with example blocks numbered `# EXAMPLE k` and separated by
/// blank lines.
pub fn build_user_prompt_with(problem: &Problem, examples: &[ExampleBlock]) -> Result<String, PromptError> {
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    if has_marker(&problem.solution_source) || has_marker(&problem.class_name) {
        return Err(PromptError::MarkerCollision(format!("solution of {}", problem.id)));
    }
    let mut text = format!("{CUT_MARKER} {}\n{}", problem.class_name, problem.solution_source);
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push('\n');
    text.push_str(EXAMPLES_MARKER);
    text.push('\n');
    let mut rendered = Vec::with_capacity(examples.len());
    for (k, ex) in examples.iter().enumerate() {
        let block = render_parts(ex.preamble, [ex.case.body.as_str()]);
        if has_marker(&block) {
            return Err(PromptError::MarkerCollision(format!("example {}", ex.case.id)));
        }
        rendered.push(format!("# EXAMPLE {}\n{}", k + 1, block.trim_end()));
    }
    text.push_str(&rendered.join("\n\n"));
    text.push('\n');
    Ok(text)
}

/// A problem for which no prompt could be planned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSkip {
    pub problem_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub bundles: Vec<PromptBundle>,
    pub skips: Vec<PlanSkip>,
}

/// Builds one bundle per problem (ascending id) from examples chosen by
/// `strategy`. Selection or rendering failures become skips.
pub fn plan_batch(
    retriever: &Retriever,
    strategy: &SelectionStrategy,
    source: Source,
    n: usize,
    params: &GenerationParams,
    options: PromptOptions,
) -> BatchPlan {
    let corpus = retriever.corpus();
    let system = build_system_prompt();
    let mut plan = BatchPlan::default();
    for problem in corpus.problems() {
        let result = retriever
            .select(strategy, problem, source, n)
            .map_err(|e| e.to_string())
            .and_then(|cases| {
                bundle_with(corpus, problem, strategy, source, &cases, &system, params, options)
                    .map_err(|e| e.to_string())
            });
        match result {
            Ok(bundle) => plan.bundles.push(bundle),
            Err(reason) => plan.skips.push(PlanSkip {
                problem_id: problem.id.clone(),
                reason,
            }),
        }
    }
    plan
}

/// [`plan_batch`] fitting a fresh retriever over `corpus`.
pub fn plan_batch_for(
    corpus: &Corpus,
    strategy: &SelectionStrategy,
    source: Source,
    n: usize,
    params: &GenerationParams,
    options: PromptOptions,
) -> Result<BatchPlan, RetrievalError> {
    Ok(plan_batch(
        &Retriever::new(corpus)?,
        strategy,
        source,
        n,
        params,
        options,
    ))
}

/// One bundle for `problem` from already selected example cases.
pub fn build_bundle(
    corpus: &Corpus,
    problem: &Problem,
    strategy: &SelectionStrategy,
    source: Source,
    cases: &[TestCase],
    params: &GenerationParams,
    options: PromptOptions,
) -> Result<PromptBundle, PromptError> {
    bundle_with(
        corpus,
        problem,
        strategy,
        source,
        cases,
        &build_system_prompt(),
        params,
        options,
    )
}

#[allow(clippy::too_many_arguments)]
fn bundle_with(
    corpus: &Corpus,
    problem: &Problem,
    strategy: &SelectionStrategy,
    source: Source,
    cases: &[TestCase],
    system: &str,
    params: &GenerationParams,
    options: PromptOptions,
) -> Result<PromptBundle, PromptError> {
    params.validate()?;
    let blocks: Vec<ExampleBlock> = cases
        .iter()
        .map(|case| ExampleBlock {
            preamble: if options.include_preambles {
                corpus
                    .tests(&case.problem_id, case.source)
                    .map_or("", |f| f.preamble.as_str())
            } else {
                ""
            },
            case,
        })
        .collect();
    let user = build_user_prompt_with(problem, &blocks)?;
    Ok(PromptBundle {
        digest: prompt_digest(system, &user, params),
        problem_id: problem.id.clone(),
        strategy: *strategy,
        source,
        system_text: system.to_string(),
        user_text: user,
        examples: cases.iter().map(|c| c.id.clone()).collect(),
        params: params.clone(),
    })
}
