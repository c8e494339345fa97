//! Benchmark files: root nodes, operation pairs and shared test inputs.
//!
//! An evaluator model writes each root from a task meta-prompt. Programming
//! roots come with 20 argument lists and must run cleanly on all of them
//! before they are accepted. Files are YAML with top-level keys `task`,
//! `evaluator`, `pairs` and `roots`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{CaseStatus, ExecHarness, HarnessError};
use crate::gateway::{extract_content, has_main_def, without_fences, ChatModel};
use crate::par;
use crate::tree::{OperationPair, TaskKind, TestInput};

/// Test inputs attached to every programming root.
pub const PROGRAMMING_INPUTS: usize = 20;
/// Generation attempts per root before giving up.
pub const MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot access {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid benchmark at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("benchmark generation failed for {} root(s):\n{}", failures.len(), failures.join("\n"))]
    Generation { failures: Vec<String> },
    #[error("refusing to merge benchmarks from evaluators {0:?} and {1:?}")]
    EvaluatorMismatch(String, String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> BenchError {
    BenchError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

/// Task description handed to the evaluator model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPrompt {
    pub task_kind: TaskKind,
    pub text: String,
}

const TRANSLATION_META: &str = "Write a 400 word, complicated English paragraph that might appear on a news website. \
Please do this in a function way, e.g. provide a function called \"main\" that returns the content as a string.";

const PROGRAMMING_META: &str = "Write a LeetCode-Hard style problem. The problem must be super hard, even a graduate student \
in computer science will struggle to solve it. Do not attempt to generate long, nested dicts. But it will require a \
very long and complicated solution. The execution time should be very short. However, it does not need to be super \
long. It can be shorter, but it must be really hard. Please do this in a functional way, e.g., provide a function \
called \"main\" that returns the intended answer.";

impl MetaPrompt {
    pub fn for_task(task_kind: TaskKind) -> Self {
        let text = match task_kind {
            TaskKind::Translation => TRANSLATION_META,
            TaskKind::Programming => PROGRAMMING_META,
        };
        MetaPrompt {
            task_kind,
            text: text.to_string(),
        }
    }

    /// The meta-prompt plus the YAML answer format this tool parses.
    pub fn full_text(&self) -> String {
        let format = match self.task_kind {
            TaskKind::Translation => "Answer with YAML only, using a single key `code` whose value is a block \
scalar holding the complete Python source."
                .to_string(),
            TaskKind::Programming => format!(
                "Answer with YAML only, using the keys `problem` (the statement), `code` (a block scalar with the \
complete Python solution defining main) and `inputs` (a list of exactly {PROGRAMMING_INPUTS} entries, each a list \
of the positional arguments for one call of main). Every call must finish well within 2 seconds."
            ),
        };
        format!("{}\n\n{format}", self.text)
    }
}

/// One root of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub code: String,
    #[serde(default)]
    pub inputs: Vec<TestInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkFile {
    pub task: TaskKind,
    pub evaluator: String,
    pub pairs: Vec<OperationPair>,
    pub roots: Vec<RootSpec>,
}

impl BenchmarkFile {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.evaluator.trim().is_empty() {
            return Err(schema("evaluator", "must not be empty"));
        }
        if self.pairs.is_empty() {
            return Err(schema("pairs", "at least one operation pair is required"));
        }
        let mut labels = HashSet::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if p.forward_prompt.trim().is_empty() {
                return Err(schema(format!("pairs[{i}].forward"), "must not be empty"));
            }
            if p.inverse_prompt.trim().is_empty() {
                return Err(schema(format!("pairs[{i}].inverse"), "must not be empty"));
            }
            if !labels.insert(p.label.as_str()) {
                return Err(schema(format!("pairs[{i}].label"), format!("duplicate label {:?}", p.label)));
            }
        }
        if self.roots.is_empty() {
            return Err(schema("roots", "at least one root is required"));
        }
        let mut seen = HashSet::new();
        for (i, root) in self.roots.iter().enumerate() {
            if root.code.trim().is_empty() {
                return Err(schema(format!("roots[{i}].code"), "must not be empty"));
            }
            if !seen.insert(root.code.as_str()) {
                return Err(schema(format!("roots[{i}].code"), "duplicates an earlier root"));
            }
            match self.task {
                TaskKind::Translation if !root.inputs.is_empty() => {
                    return Err(schema(format!("roots[{i}].inputs"), "translation roots take no inputs"));
                }
                TaskKind::Programming if root.inputs.len() != PROGRAMMING_INPUTS => {
                    return Err(schema(
                        format!("roots[{i}].inputs"),
                        format!("expected {PROGRAMMING_INPUTS} inputs, found {}", root.inputs.len()),
                    ));
                }
                TaskKind::Programming if !has_main_def(&root.code) => {
                    return Err(schema(format!("roots[{i}].code"), "programming roots must define main"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Appends `other`'s roots; both files must share evaluator, task and pairs.
    pub fn merge(&mut self, other: BenchmarkFile) -> Result<(), BenchError> {
        if self.evaluator != other.evaluator {
            return Err(BenchError::EvaluatorMismatch(self.evaluator.clone(), other.evaluator));
        }
        if self.task != other.task {
            return Err(BenchError::Config(format!(
                "cannot merge a {} benchmark into a {} benchmark",
                other.task, self.task
            )));
        }
        if self.pairs != other.pairs {
            return Err(BenchError::Config("benchmarks use different operation pairs".into()));
        }
        let mut merged = self.clone();
        merged.roots.extend(other.roots);
        merged.validate()?;
        *self = merged;
        Ok(())
    }
}

pub fn to_yaml(bench: &BenchmarkFile) -> String {
    serde_yaml::to_string(bench).expect("benchmark files always serialize")
}

/// Parses and validates; errors name the offending field path.
pub fn from_yaml(text: &str) -> Result<BenchmarkFile, BenchError> {
    let de = serde_yaml::Deserializer::from_str(text);
    let bench: BenchmarkFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        schema(if field == "." { "<document>".to_string() } else { field }, e.into_inner().to_string())
    })?;
    bench.validate()?;
    Ok(bench)
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), BenchError> {
    let io = |e: std::io::Error| BenchError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn save_benchmark(bench: &BenchmarkFile, path: &Path) -> Result<(), BenchError> {
    bench.validate()?;
    write_atomic(path, &to_yaml(bench))
}

pub fn load_benchmark(path: &Path) -> Result<BenchmarkFile, BenchError> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    from_yaml(&text)
}

/// Translation round trips through French, Spanish and German; programming
/// rewrites that should preserve behaviour.
pub fn default_operation_pairs(task_kind: TaskKind) -> Vec<OperationPair> {
    match task_kind {
        TaskKind::Translation => [("fr", "French"), ("es", "Spanish"), ("de", "German")]
            .into_iter()
            .map(|(code, name)| translation_pair("en", "English", code, name))
            .collect(),
        TaskKind::Programming => {
            let keep = "Keep the function called \"main\" with the same parameters and the same return value for every input. \
Return the complete Python source in one code block.";
            vec![
                OperationPair::new(
                    "iterative→recursive→iterative",
                    format!("Rewrite the following Python program so that its loops become recursive functions. {keep}"),
                    format!("Rewrite the following Python program so that its recursion becomes iterative loops. {keep}"),
                ),
                OperationPair::new(
                    "add-logging→remove-logging",
                    format!("Add logging functionality to the following Python program: log the key intermediate values with print calls to standard error. {keep}"),
                    format!("Remove all logging and print statements from the following Python program. {keep}"),
                ),
                OperationPair::new(
                    "extract-helpers→inline-helpers",
                    format!("Refactor the following Python program by extracting its logical steps into separate helper functions. {keep}"),
                    format!("Inline every helper function of the following Python program into main, leaving a single function. {keep}"),
                ),
            ]
        }
    }
}

/// Round trip `source → target → source`, labelled `src→tgt→src`.
pub fn translation_pair(src_code: &str, src_name: &str, tgt_code: &str, tgt_name: &str) -> OperationPair {
    let keep = "If the content is a Python function, translate only the text it returns and keep the code itself unchanged. \
Output only the result.";
    OperationPair::new(
        format!("{src_code}→{tgt_code}→{src_code}"),
        format!("Translate the following content from {src_name} into {tgt_name}. {keep}"),
        format!("Translate the following content from {tgt_name} into {src_name}. {keep}"),
    )
}

/// Single-pair setup for WMT language pairs (out-degree 1).
pub fn wmt_pairs(src_code: &str, src_name: &str, tgt_code: &str, tgt_name: &str) -> Vec<OperationPair> {
    vec![translation_pair(src_code, src_name, tgt_code, tgt_name)]
}

#[derive(Debug, Deserialize)]
struct GeneratedRoot {
    #[serde(default)]
    problem: Option<String>,
    code: String,
    #[serde(default)]
    inputs: Option<Vec<TestInput>>,
}

/// Parses one evaluator answer into a root candidate.
pub fn parse_generated_root(raw: &str, task_kind: TaskKind) -> Result<RootSpec, String> {
    let body = without_fences(&raw.replace("\r\n", "\n"));
    let parsed = serde_yaml::from_str::<GeneratedRoot>(&body);
    let (problem, code, inputs) = match (parsed, task_kind) {
        (Ok(g), _) => (g.problem, g.code, g.inputs.unwrap_or_default()),
        // a bare function is acceptable when no inputs are needed
        (Err(_), TaskKind::Translation) if has_main_def(&body) => (None, body, Vec::new()),
        (Err(e), _) => return Err(format!("answer is not the requested YAML: {e}")),
    };
    let code = extract_content(&code, TaskKind::Programming).map_err(|e| e.to_string())?;
    let root = RootSpec { problem, code, inputs };
    match task_kind {
        TaskKind::Translation if !root.inputs.is_empty() => Err("translation roots take no inputs".into()),
        TaskKind::Programming if root.inputs.len() != PROGRAMMING_INPUTS => Err(format!(
            "expected {PROGRAMMING_INPUTS} inputs, found {}",
            root.inputs.len()
        )),
        _ => Ok(root),
    }
}

/// Executes a root on its inputs; every case must succeed.
pub fn smoke_check_root(root: &RootSpec, task_kind: TaskKind, harness: &ExecHarness) -> Result<(), String> {
    let transcript = harness
        .execute(&root.code, &root.inputs, task_kind)
        .map_err(|e| e.to_string())?;
    for (i, case) in transcript.per_case.iter().enumerate() {
        match case.status {
            CaseStatus::Ok => {}
            CaseStatus::Timeout => return Err(format!("input {i} timed out")),
            CaseStatus::Error => {
                return Err(format!(
                    "input {i} failed: {}",
                    case.detail.as_deref().unwrap_or("error")
                ))
            }
        }
    }
    if task_kind == TaskKind::Translation && transcript.concatenated().trim().is_empty() {
        return Err("main returned an empty paragraph".into());
    }
    Ok(())
}

/// Re-runs the smoke check on every root of a loaded benchmark.
pub fn smoke_check(bench: &BenchmarkFile, harness: &ExecHarness) -> Result<(), BenchError> {
    let results = par::map(&bench.roots, |r| smoke_check_root(r, bench.task, harness));
    let failures: Vec<String> = results
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.err().map(|e| format!("root {i}: {e}")))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(BenchError::Generation { failures })
    }
}

fn generate_one(
    meta: &MetaPrompt,
    index: usize,
    m: usize,
    chat: &dyn ChatModel,
    harness: &ExecHarness,
    attempts: std::ops::Range<usize>,
) -> Result<RootSpec, Vec<String>> {
    let system = "You write evaluation material. Follow the requested answer format exactly.";
    let mut errors = Vec::new();
    for attempt in attempts {
        // distinct prompts keep seeded evaluators from repeating themselves
        let user = format!(
            "{}

This is item {} of {m} (attempt {attempt}); make it different from the others.",
            meta.full_text(),
            index + 1
        );
        let result = chat
            .chat(system, &user)
            .map_err(|e| e.to_string())
            .and_then(|raw| parse_generated_root(&raw, meta.task_kind))
            .and_then(|root| smoke_check_root(&root, meta.task_kind, harness).map(|_| root));
        match result {
            Ok(root) => return Ok(root),
            Err(e) => {
                log::warn!("root {index} attempt {attempt}: {e}");
                errors.push(format!("root {index} attempt {attempt}: {e}"));
            }
        }
    }
    Err(errors)
}

/// Asks the evaluator for `m` distinct roots that pass the smoke check.
pub fn generate_roots(
    meta: &MetaPrompt,
    m: usize,
    chat: &dyn ChatModel,
    harness: &ExecHarness,
) -> Result<Vec<RootSpec>, BenchError> {
    if m == 0 {
        return Err(BenchError::Config("the number of roots must be at least 1".into()));
    }
    let first = par::map_range(m, |i| generate_one(meta, i, m, chat, harness, 1..MAX_ATTEMPTS + 1));
    let mut roots = Vec::with_capacity(m);
    let mut failures = Vec::new();
    let mut seen = HashSet::new();
    for (i, result) in first.into_iter().enumerate() {
        let mut result = result;
        // duplicates get the same bounded budget of fresh attempts
        let mut retries = 0;
        loop {
            match result {
                Ok(root) if seen.contains(&root.code) => {
                    if retries == MAX_ATTEMPTS {
                        failures.push(format!("root {i}: evaluator kept repeating an earlier root"));
                        break;
                    }
                    retries += 1;
                    let attempt = MAX_ATTEMPTS + retries;
                    result = generate_one(meta, i, m, chat, harness, attempt..attempt + 1);
                }
                Ok(root) => {
                    seen.insert(root.code.clone());
                    roots.push(root);
                    break;
                }
                Err(errors) => {
                    failures.extend(errors);
                    break;
                }
            }
        }
    }
    if failures.is_empty() {
        Ok(roots)
    } else {
        Err(BenchError::Generation { failures })
    }
}
