//! Similarity metrics and the path, tree and forest consistency scores.
//!
//! `C(P)` compares the transcripts of a path's first and last node, `C_n(T)`
//! averages `C(P)` over the tree's paths of length `n`, and `C_n(F)` averages
//! `C_n(T)` over the forest. Scores are fractions in `[0, 1]`; reports show
//! them as percentages with one decimal.

pub mod bleu;
pub mod correlation;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{ExecHarness, ExecTranscript, HarnessError};
use crate::gateway::{Embedder, EmbeddingVector, GatewayError};
use crate::par;
use crate::tree::{enumerate_paths, Anchor, Forest, Node, Path, TaskKind, Tree, TreeError};

pub use bleu::bleu;
pub use correlation::{pearson, spearman, CorrelationReport};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("nodes {0} and {1} were executed on different inputs")]
    InputMismatch(String, String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{metric} scoring needs an embedder")]
    MissingEmbedder { metric: MetricKind },
    #[error("no values to aggregate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Embedding,
    Bleu,
    Levenshtein,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Embedding, MetricKind::Bleu, MetricKind::Levenshtein];
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Embedding => "embedding",
            MetricKind::Bleu => "bleu",
            MetricKind::Levenshtein => "levenshtein",
        })
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embedding" | "emb" => Ok(MetricKind::Embedding),
            "bleu" => Ok(MetricKind::Bleu),
            "levenshtein" | "lev" => Ok(MetricKind::Levenshtein),
            other => Err(format!("unknown metric {other:?} (expected embedding, bleu or levenshtein)")),
        }
    }
}

/// A metric plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimilarityMetric {
    pub kind: MetricKind,
    /// BLEU only: average both directions instead of earlier-as-reference.
    #[serde(default)]
    pub symmetric_bleu: bool,
}

impl SimilarityMetric {
    pub fn new(kind: MetricKind) -> Self {
        SimilarityMetric {
            kind,
            symmetric_bleu: false,
        }
    }
}

impl From<MetricKind> for SimilarityMetric {
    fn from(kind: MetricKind) -> Self {
        SimilarityMetric::new(kind)
    }
}

/// Cosine similarity clamped to `[0, 1]`; a zero vector scores 0.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ScoreError> {
    if a.dim() != b.dim() {
        return Err(ScoreError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm_squared(), b.norm_squared());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    // sqrt(x * x) == |x| exactly, so identical vectors give exactly 1
    Ok((dot / (na * nb).sqrt()).clamp(0.0, 1.0))
}

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// `1 - distance / max(len)`; two empty strings score 1.
pub fn levenshtein_ratio(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// Metric applied to two transcripts; `earlier` is the BLEU reference.
pub fn text_similarity(
    metric: SimilarityMetric,
    earlier: &str,
    later: &str,
    embedder: Option<&dyn Embedder>,
) -> Result<f64, MetricFailure> {
    match metric.kind {
        MetricKind::Bleu if metric.symmetric_bleu => Ok((bleu(later, earlier) + bleu(earlier, later)) / 2.0),
        MetricKind::Bleu => Ok(bleu(later, earlier)),
        MetricKind::Levenshtein => Ok(levenshtein_ratio(earlier, later)),
        MetricKind::Embedding => {
            let embedder = embedder.ok_or(MetricFailure::NoEmbedder)?;
            let a = embedder.embed(earlier).map_err(MetricFailure::Gateway)?;
            let b = embedder.embed(later).map_err(MetricFailure::Gateway)?;
            cosine_similarity(&a, &b).map_err(|e| MetricFailure::Other(e.to_string()))
        }
    }
}

#[derive(Debug)]
pub enum MetricFailure {
    NoEmbedder,
    Gateway(GatewayError),
    Other(String),
}

/// A metric failure that was scored as 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreDiagnostic {
    pub earlier: String,
    pub later: String,
    pub message: String,
}

/// Executes nodes (memoised per content and inputs) and scores them.
pub struct Scorer<'a> {
    harness: &'a ExecHarness,
    embedder: Option<&'a dyn Embedder>,
    transcripts: Mutex<HashMap<(String, String), Arc<ExecTranscript>>>,
    diagnostics: Mutex<Vec<ScoreDiagnostic>>,
}

impl<'a> Scorer<'a> {
    pub fn new(harness: &'a ExecHarness, embedder: Option<&'a dyn Embedder>) -> Self {
        Scorer {
            harness,
            embedder,
            transcripts: Mutex::new(HashMap::new()),
            diagnostics: Mutex::new(Vec::new()),
        }
    }

    pub fn take_diagnostics(&self) -> Vec<ScoreDiagnostic> {
        std::mem::take(&mut *self.diagnostics.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn transcript(&self, node: &Node, task_kind: TaskKind) -> Result<Arc<ExecTranscript>, ScoreError> {
        let key = (
            node.content.clone(),
            serde_json::to_string(&node.inputs).expect("inputs are json values"),
        );
        if let Some(t) = self.transcripts.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(self.harness.execute(&node.content, &node.inputs, task_kind)?);
        self.transcripts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, t.clone());
        Ok(t)
    }

    /// Similarity of two nodes' transcripts; `earlier` is the reference side.
    pub fn node_pair_similarity(
        &self,
        earlier: &Node,
        later: &Node,
        task_kind: TaskKind,
        metric: SimilarityMetric,
    ) -> Result<f64, ScoreError> {
        if earlier.inputs != later.inputs {
            return Err(ScoreError::InputMismatch(earlier.id.clone(), later.id.clone()));
        }
        if metric.kind == MetricKind::Embedding && self.embedder.is_none() {
            return Err(ScoreError::MissingEmbedder { metric: metric.kind });
        }
        let a = self.transcript(earlier, task_kind)?;
        let b = self.transcript(later, task_kind)?;
        match text_similarity(metric, &a.concatenated(), &b.concatenated(), self.embedder) {
            Ok(v) => Ok(v),
            Err(failure) => {
                let message = match failure {
                    MetricFailure::NoEmbedder => "no embedder".to_string(),
                    MetricFailure::Gateway(e) => e.to_string(),
                    MetricFailure::Other(m) => m,
                };
                log::warn!("scoring {} vs {} failed, using 0: {message}", earlier.id, later.id);
                self.diagnostics
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .push(ScoreDiagnostic {
                        earlier: earlier.id.clone(),
                        later: later.id.clone(),
                        message,
                    });
                Ok(0.0)
            }
        }
    }

    fn node<'t>(tree: &'t Tree, id: &str) -> Result<&'t Node, ScoreError> {
        tree.node(id).ok_or_else(|| ScoreError::UnknownNode(id.to_string()))
    }

    /// `C(P)`: similarity between the first and last node of the path.
    pub fn path_consistency(&self, tree: &Tree, path: &Path, metric: SimilarityMetric) -> Result<f64, ScoreError> {
        let first = Self::node(tree, path.first())?;
        let last = Self::node(tree, path.last())?;
        self.node_pair_similarity(first, last, tree.task_kind, metric)
    }

    /// `C_n(T)`: mean of `C(P)` over the tree's paths of length `n`.
    pub fn tree_consistency(
        &self,
        tree: &Tree,
        n: usize,
        anchor: Anchor,
        metric: SimilarityMetric,
    ) -> Result<f64, ScoreError> {
        let paths = enumerate_paths(tree, n, anchor)?;
        let scores = par::try_map(&paths, |p| self.path_consistency(tree, p, metric))?;
        mean(&scores)
    }

    /// `[C_1(T), ..., C_{n_max}(T)]`.
    pub fn tree_scores(
        &self,
        tree: &Tree,
        n_max: usize,
        anchor: Anchor,
        metric: SimilarityMetric,
    ) -> Result<Vec<f64>, ScoreError> {
        (1..=n_max)
            .map(|n| self.tree_consistency(tree, n, anchor, metric))
            .collect()
    }

    /// `C_n(F)`: mean of `C_n(T)` over the forest.
    pub fn forest_consistency(
        &self,
        forest: &Forest,
        n: usize,
        anchor: Anchor,
        metric: SimilarityMetric,
    ) -> Result<f64, ScoreError> {
        let per_tree = par::try_map(forest.trees(), |t| self.tree_consistency(t, n, anchor, metric))?;
        forest_score(&per_tree)
    }

    /// Per-tree score rows (tree × n) for one forest.
    pub fn forest_table(
        &self,
        forest: &Forest,
        n_max: usize,
        anchor: Anchor,
        metric: SimilarityMetric,
    ) -> Result<RunScores, ScoreError> {
        let per_tree = par::try_map(forest.trees(), |t| self.tree_scores(t, n_max, anchor, metric))?;
        RunScores::from_per_tree(per_tree)
    }

    /// Every node with its similarity to the root, in breadth-first order.
    pub fn dump_tree(&self, tree: &Tree, metric: SimilarityMetric) -> Result<Vec<NodeRecord>, ScoreError> {
        let root = tree.root();
        par::try_map(tree.nodes(), |node| {
            Ok(NodeRecord {
                id: node.id.clone(),
                level: node.depth,
                content: node.content.clone(),
                similarity_to_root: self.node_pair_similarity(root, node, tree.task_kind, metric)?,
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub level: usize,
    pub content: String,
    pub similarity_to_root: f64,
}

impl fmt::Display for NodeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Node {} (Level {}, similarity to root {:.4})",
            self.id, self.level, self.similarity_to_root
        )?;
        write!(f, "{}", self.content)
    }
}

pub fn mean(values: &[f64]) -> Result<f64, ScoreError> {
    if values.is_empty() {
        return Err(ScoreError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Forest score from per-tree scores: their arithmetic mean.
pub fn forest_score(tree_scores: &[f64]) -> Result<f64, ScoreError> {
    mean(tree_scores)
}

/// Mean and sample standard deviation over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStat {
    pub mean: f64,
    pub std: f64,
}

impl RunStat {
    /// Percent cell with one decimal, e.g. `98.0±0.0`.
    pub fn percent_cell(&self) -> String {
        format!("{:.1}±{:.1}", self.mean * 100.0, self.std * 100.0)
    }
}

/// Sample standard deviation uses `R - 1`; a single run has std 0.
pub fn aggregate_runs(values: &[f64]) -> Result<RunStat, ScoreError> {
    let m = mean(values)?;
    if values.len() == 1 {
        return Ok(RunStat { mean: m, std: 0.0 });
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(RunStat {
        mean: m,
        std: (ss / (values.len() - 1) as f64).sqrt(),
    })
}

/// Scores of one run: rows are trees, columns are `n = 1..n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub per_tree: Vec<Vec<f64>>,
    pub forest: Vec<f64>,
}

impl RunScores {
    pub fn from_per_tree(per_tree: Vec<Vec<f64>>) -> Result<Self, ScoreError> {
        let n_max = per_tree.first().map(Vec::len).ok_or(ScoreError::Empty)?;
        let forest = (0..n_max)
            .map(|j| forest_score(&per_tree.iter().map(|row| row[j]).collect::<Vec<_>>()))
            .collect::<Result<_, _>>()?;
        Ok(RunScores { per_tree, forest })
    }
}

/// One metric's scores over `R` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: SimilarityMetric,
    pub runs: Vec<RunScores>,
    /// `C_n(F)` aggregated over runs, one entry per `n`.
    pub forest: Vec<RunStat>,
}

impl MetricReport {
    pub fn new(metric: SimilarityMetric, runs: Vec<RunScores>) -> Result<Self, ScoreError> {
        let n_max = runs.first().map(|r| r.forest.len()).ok_or(ScoreError::Empty)?;
        let forest = (0..n_max)
            .map(|j| aggregate_runs(&runs.iter().map(|r| r.forest[j]).collect::<Vec<_>>()))
            .collect::<Result<_, _>>()?;
        Ok(MetricReport { metric, runs, forest })
    }
}

/// Everything `score` produces for one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub label: String,
    pub task_kind: TaskKind,
    pub anchor: Anchor,
    pub n_max: usize,
    pub metrics: Vec<MetricReport>,
}

impl ScoreReport {
    pub fn metric(&self, kind: MetricKind) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.metric.kind == kind)
    }

    /// Aligned text table, one row per metric and one column per `n`.
    pub fn render_table(&self) -> String {
        let header: Vec<String> = (1..=self.n_max).map(|n| format!("C{n}")).collect();
        let rows: Vec<(String, Vec<String>)> = self
            .metrics
            .iter()
            .map(|m| {
                let name = if m.metric.symmetric_bleu {
                    format!("{} (sym)", m.metric.kind)
                } else {
                    m.metric.kind.to_string()
                };
                (name, m.forest.iter().map(RunStat::percent_cell).collect())
            })
            .collect();
        let first_width = rows
            .iter()
            .map(|(n, _)| n.chars().count())
            .chain([self.label.chars().count(), 6])
            .max()
            .unwrap_or(6);
        let cell_width = rows
            .iter()
            .flat_map(|(_, cells)| cells.iter().map(|c| c.chars().count()))
            .chain(header.iter().map(String::len))
            .max()
            .unwrap_or(3);
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let mut out = format!("{} | {} anchor, {} runs\n", self.label, self.anchor_name(), self.run_count());
        out.push_str(&pad("metric", first_width));
        for h in &header {
            out.push_str(" | ");
            out.push_str(&pad(h, cell_width));
        }
        out.push('\n');
        out.push_str(&"-".repeat(first_width + header.len() * (cell_width + 3)));
        out.push('\n');
        for (name, cells) in rows {
            out.push_str(&pad(&name, first_width));
            for c in cells {
                out.push_str(" | ");
                out.push_str(&pad(&c, cell_width));
            }
            out.push('\n');
        }
        out
    }

    fn anchor_name(&self) -> &'static str {
        match self.anchor {
            Anchor::RootOnly => "root",
            Anchor::AllChains => "all-chains",
        }
    }

    fn run_count(&self) -> usize {
        self.metrics.first().map(|m| m.runs.len()).unwrap_or(0)
    }
}
