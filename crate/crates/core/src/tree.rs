//! Self-consistency trees: data model, generation and path enumeration.
//!
//! A tree is grown level by level. Every node at depth `d - 1` receives one
//! child per operation pair, whose content is the parent's content pushed
//! through the pair's forward prompt and then its inverse prompt. Test inputs
//! are inherited unchanged, so every node in a tree is executed against the
//! same inputs as the root.
//!
//! Node ids spell the pair indices along the path from the root (`"2-0-1"`),
//! which makes a build replayable and independent of completion order.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::transform::Transformer;

/// Id of the root node of every tree.
pub const ROOT_ID: &str = "root";

/// One test case: the ordered argument literals passed to `main`.
pub type TestInput = Vec<serde_json::Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Translation,
    Programming,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Translation => f.write_str("translation"),
            TaskKind::Programming => f.write_str("programming"),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "translation" => Ok(TaskKind::Translation),
            "programming" => Ok(TaskKind::Programming),
            other => Err(format!("unknown task kind {other:?}")),
        }
    }
}

/// Which paths enter the tree-level average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Only paths that start at the root.
    #[default]
    RootOnly,
    /// Every descendant chain of the requested length, from any depth.
    AllChains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub depth: usize,
    pub content: String,
    pub inputs: Vec<TestInput>,
}

impl Node {
    pub fn root(content: impl Into<String>, inputs: Vec<TestInput>) -> Self {
        Node {
            id: ROOT_ID.to_string(),
            depth: 0,
            content: content.into(),
            inputs,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.content == crate::SENTINEL
    }
}

/// A forward prompt and the prompt meant to undo it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationPair {
    pub label: String,
    #[serde(rename = "forward")]
    pub forward_prompt: String,
    #[serde(rename = "inverse")]
    pub inverse_prompt: String,
}

impl OperationPair {
    pub fn new(
        label: impl Into<String>,
        forward: impl Into<String>,
        inverse: impl Into<String>,
    ) -> Self {
        OperationPair {
            label: label.into(),
            forward_prompt: forward.into(),
            inverse_prompt: inverse.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub parent: String,
    pub child: String,
    pub pair_index: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("path length {n} out of range 1..={depth_limit}")]
    PathLength { n: usize, depth_limit: usize },
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("tree invariant violated: {0}")]
    Invariant(String),
}

/// Id of the `pair_index`-th child of `parent_id`.
pub fn child_id(parent_id: &str, pair_index: usize) -> String {
    if parent_id == ROOT_ID {
        pair_index.to_string()
    } else {
        format!("{parent_id}-{pair_index}")
    }
}

/// Id of the parent of `id`, or `None` for the root.
pub fn parent_id(id: &str) -> Option<String> {
    if id == ROOT_ID {
        return None;
    }
    match id.rfind('-') {
        Some(pos) => Some(id[..pos].to_string()),
        None => Some(ROOT_ID.to_string()),
    }
}

/// Number of nodes in a complete `branching`-ary tree of height `depth_limit`.
pub fn expected_node_count(branching: usize, depth_limit: usize) -> usize {
    (0..=depth_limit).map(|d| branching.pow(d as u32)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub task_kind: TaskKind,
    pub pairs: Vec<OperationPair>,
    pub depth_limit: usize,
    pub branching: usize,
    /// Breadth-first order; `nodes[0]` is the root.
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
}

impl Tree {
    fn from_parts(
        task_kind: TaskKind,
        pairs: Vec<OperationPair>,
        depth_limit: usize,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
    ) -> Result<Self, TreeError> {
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect::<HashMap<_, _>>();
        if index.len() != nodes.len() {
            return Err(TreeError::Invariant("duplicate node ids".into()));
        }
        let tree = Tree {
            task_kind,
            branching: pairs.len(),
            pairs,
            depth_limit,
            nodes,
            edges,
            index,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn nodes_at_depth(&self, depth: usize) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.depth == depth)
    }

    /// Checks every structural invariant of a complete tree.
    pub fn validate(&self) -> Result<(), TreeError> {
        let k = self.branching;
        let d = self.depth_limit;
        if k == 0 || d == 0 {
            return Err(TreeError::Invariant(format!(
                "branching {k} and depth limit {d} must both be positive"
            )));
        }
        let expected = expected_node_count(k, d);
        if self.nodes.len() != expected {
            return Err(TreeError::Invariant(format!(
                "expected {expected} nodes, found {}",
                self.nodes.len()
            )));
        }
        if self.edges.len() != expected - 1 {
            return Err(TreeError::Invariant(format!(
                "expected {} edges, found {}",
                expected - 1,
                self.edges.len()
            )));
        }
        let root = &self.nodes[0];
        if root.id != ROOT_ID || root.depth != 0 {
            return Err(TreeError::Invariant("first node must be the root".into()));
        }
        for node in &self.nodes {
            if node.inputs != root.inputs {
                return Err(TreeError::Invariant(format!(
                    "node {} does not share the root's inputs",
                    node.id
                )));
            }
            let depth = if node.id == ROOT_ID {
                0
            } else {
                node.id.split('-').count()
            };
            if node.depth != depth || node.depth > d {
                return Err(TreeError::Invariant(format!(
                    "node {} has depth {} but its id implies {depth}",
                    node.id, node.depth
                )));
            }
        }
        let mut child_seen = HashMap::new();
        for edge in &self.edges {
            let parent = self.node(&edge.parent).ok_or_else(|| {
                TreeError::Invariant(format!("edge parent {} missing", edge.parent))
            })?;
            let child = self.node(&edge.child).ok_or_else(|| {
                TreeError::Invariant(format!("edge child {} missing", edge.child))
            })?;
            if edge.pair_index >= k || child.id != child_id(&parent.id, edge.pair_index) {
                return Err(TreeError::Invariant(format!(
                    "edge {} -> {} does not match pair index {}",
                    edge.parent, edge.child, edge.pair_index
                )));
            }
            if child.depth != parent.depth + 1 {
                return Err(TreeError::Invariant(format!(
                    "edge {} -> {} skips a level",
                    edge.parent, edge.child
                )));
            }
            if child_seen.insert(child.id.as_str(), ()).is_some() {
                return Err(TreeError::Invariant(format!(
                    "node {} has more than one parent",
                    child.id
                )));
            }
        }
        Ok(())
    }
}

/// Grows a complete tree of height `depth_limit` from `root`, one child per pair.
///
/// Frontier nodes of a level are expanded concurrently. The result depends
/// only on the root, the pairs and the transformer's answers, never on the
/// order in which those answers arrive.
pub fn build_tree(
    root: Node,
    pairs: &[OperationPair],
    depth_limit: usize,
    task_kind: TaskKind,
    transformer: &dyn Transformer,
) -> Result<Tree, TreeError> {
    if depth_limit < 1 {
        return Err(TreeError::Config("depth limit must be at least 1".into()));
    }
    if pairs.is_empty() {
        return Err(TreeError::Config("at least one operation pair is required".into()));
    }
    for pair in pairs {
        if pair.forward_prompt.trim().is_empty() || pair.inverse_prompt.trim().is_empty() {
            return Err(TreeError::Config(format!(
                "operation pair {:?} has an empty prompt",
                pair.label
            )));
        }
    }
    let k = pairs.len();
    let root = Node {
        id: ROOT_ID.to_string(),
        depth: 0,
        ..root
    };
    let mut nodes = Vec::with_capacity(expected_node_count(k, depth_limit));
    let mut edges = Vec::with_capacity(nodes.capacity().saturating_sub(1));
    nodes.push(root);
    let mut frontier = 0..1;

    for depth in 1..=depth_limit {
        let work: Vec<(usize, usize)> = frontier
            .clone()
            .flat_map(|parent| (0..k).map(move |pair| (parent, pair)))
            .collect();
        let contents = {
            let level = &nodes;
            par::map(&work, |&(parent, pair)| {
                transformer.apply_pair(&level[parent].content, &pairs[pair])
            })
        };
        let start = nodes.len();
        for ((parent, pair), content) in work.into_iter().zip(contents) {
            let parent_node = &nodes[parent];
            let id = child_id(&parent_node.id, pair);
            edges.push(Edge {
                parent: parent_node.id.clone(),
                child: id.clone(),
                pair_index: pair,
            });
            let inputs = parent_node.inputs.clone();
            nodes.push(Node {
                id,
                depth,
                content,
                inputs,
            });
        }
        frontier = start..nodes.len();
    }

    Tree::from_parts(task_kind, pairs.to_vec(), depth_limit, nodes, edges)
}

/// A chain of nodes joined by edges; `length` counts edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub node_ids: Vec<String>,
    pub length: usize,
}

impl Path {
    pub fn first(&self) -> &str {
        &self.node_ids[0]
    }

    pub fn last(&self) -> &str {
        &self.node_ids[self.node_ids.len() - 1]
    }
}

fn ancestors_path(tree: &Tree, leaf: &Node, n: usize) -> Path {
    let mut ids = Vec::with_capacity(n + 1);
    let mut current = Some(leaf.id.clone());
    for _ in 0..=n {
        let id = current.expect("ancestor chain shorter than the node depth");
        current = parent_id(&id);
        ids.push(id);
    }
    ids.reverse();
    debug_assert!(tree.node(&ids[0]).is_some());
    Path {
        node_ids: ids,
        length: n,
    }
}

/// All paths of exactly `n` edges, ordered by start node then leaf id order.
pub fn enumerate_paths(tree: &Tree, n: usize, anchor: Anchor) -> Result<Vec<Path>, TreeError> {
    if n < 1 || n > tree.depth_limit {
        return Err(TreeError::PathLength {
            n,
            depth_limit: tree.depth_limit,
        });
    }
    let paths = match anchor {
        Anchor::RootOnly => tree
            .nodes_at_depth(n)
            .map(|leaf| ancestors_path(tree, leaf, n))
            .collect(),
        Anchor::AllChains => {
            let mut out = Vec::new();
            for start_depth in 0..=(tree.depth_limit - n) {
                for end in tree.nodes_at_depth(start_depth + n) {
                    out.push(ancestors_path(tree, end, n));
                }
            }
            // group by start node, breadth-first order of the start
            out.sort_by_key(|p| (tree.index[p.first()], tree.index[p.last()]));
            out
        }
    };
    Ok(paths)
}

/// Persistence document for one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub task_kind: TaskKind,
    pub branching: usize,
    pub depth_limit: usize,
    pub pairs: Vec<OperationPair>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl From<&Tree> for TreeDocument {
    fn from(tree: &Tree) -> Self {
        TreeDocument {
            task_kind: tree.task_kind,
            branching: tree.branching,
            depth_limit: tree.depth_limit,
            pairs: tree.pairs.clone(),
            nodes: tree.nodes.clone(),
            edges: tree.edges.clone(),
        }
    }
}

impl TryFrom<TreeDocument> for Tree {
    type Error = TreeError;

    fn try_from(doc: TreeDocument) -> Result<Self, Self::Error> {
        if doc.branching != doc.pairs.len() {
            return Err(TreeError::Parse {
                field: "branching".into(),
                message: format!(
                    "branching {} does not match {} pairs",
                    doc.branching,
                    doc.pairs.len()
                ),
            });
        }
        let mut nodes = doc.nodes;
        let root_pos = nodes.iter().position(|n| n.id == ROOT_ID).ok_or_else(|| {
            TreeError::Parse {
                field: "nodes".into(),
                message: "missing root node (id \"root\")".into(),
            }
        })?;
        nodes.swap(0, root_pos);
        nodes[1..].sort_by_key(|n| (n.depth, id_key(&n.id)));
        Tree::from_parts(doc.task_kind, doc.pairs, doc.depth_limit, nodes, doc.edges)
    }
}

fn id_key(id: &str) -> Vec<usize> {
    id.split('-').map(|p| p.parse().unwrap_or(usize::MAX)).collect()
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, TreeError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        TreeError::Parse {
            field,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn serialize_tree(tree: &Tree) -> String {
    serde_json::to_string_pretty(&TreeDocument::from(tree)).expect("tree documents always serialize")
}

pub fn deserialize_tree(text: &str) -> Result<Tree, TreeError> {
    let doc: TreeDocument = parse_json(text)?;
    Tree::try_from(doc)
}

/// Trees sharing one shape, each grown from a distinct root.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub task_kind: TaskKind,
    trees: Vec<Tree>,
}

impl Forest {
    pub fn new(task_kind: TaskKind, trees: Vec<Tree>) -> Result<Self, TreeError> {
        let first = trees
            .first()
            .ok_or_else(|| TreeError::Config("a forest needs at least one tree".into()))?;
        for (i, tree) in trees.iter().enumerate() {
            if tree.depth_limit != first.depth_limit || tree.branching != first.branching {
                return Err(TreeError::Invariant(format!(
                    "tree {i} has shape (k={}, D={}) but tree 0 has (k={}, D={})",
                    tree.branching, tree.depth_limit, first.branching, first.depth_limit
                )));
            }
            if tree.task_kind != task_kind {
                return Err(TreeError::Invariant(format!("tree {i} has task kind {}", tree.task_kind)));
            }
            if let Some(j) = trees[..i].iter().position(|t| t.root() == tree.root()) {
                return Err(TreeError::Invariant(format!("trees {j} and {i} share a root")));
            }
        }
        Ok(Forest { task_kind, trees })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn depth_limit(&self) -> usize {
        self.trees[0].depth_limit
    }
}

/// Persistence document for a forest: one file per evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestDocument {
    pub task_kind: TaskKind,
    pub trees: Vec<TreeDocument>,
}

pub fn serialize_forest(forest: &Forest) -> String {
    let doc = ForestDocument {
        task_kind: forest.task_kind,
        trees: forest.trees.iter().map(TreeDocument::from).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("forest documents always serialize")
}

pub fn deserialize_forest(text: &str) -> Result<Forest, TreeError> {
    let doc: ForestDocument = parse_json(text)?;
    let trees = doc
        .trees
        .into_iter()
        .map(Tree::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    Forest::new(doc.task_kind, trees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{MockChannel, MockTransformer};
    use serde_json::json;

    fn pairs(k: usize) -> Vec<OperationPair> {
        (0..k)
            .map(|i| OperationPair::new(format!("p{i}"), format!("fwd {i}"), format!("inv {i}")))
            .collect()
    }

    fn identity_tree(k: usize, d: usize) -> Tree {
        let root = Node::root("a b c d", vec![vec![json!(1), json!(2)]]);
        build_tree(root, &pairs(k), d, TaskKind::Programming, &MockTransformer::uniform(MockChannel::Identity)).unwrap()
    }

    #[test]
    fn identity_build_has_closed_form_shape() {
        let tree = identity_tree(3, 3);
        assert_eq!(tree.nodes().len(), 40);
        assert_eq!(tree.edges().len(), 39);
        assert!(tree.nodes().iter().all(|n| n.content == "a b c d"));
        assert!(tree.node("2-0-1").is_some());
        assert_eq!(tree.node("2-0-1").unwrap().depth, 3);
    }

    #[test]
    fn single_pair_chain() {
        let tree = identity_tree(1, 12);
        assert_eq!(tree.nodes().len(), 13);
        let paths = enumerate_paths(&tree, 12, Anchor::RootOnly).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].node_ids.len(), 13);
        assert_eq!(paths[0].last(), "0-0-0-0-0-0-0-0-0-0-0-0");
    }

    #[test]
    fn word_drop_depth_two() {
        let root = Node::root("one two three four five six", vec![]);
        let tree = build_tree(
            root,
            &pairs(2),
            2,
            TaskKind::Translation,
            &MockTransformer::uniform(MockChannel::DropLastWords(1)),
        )
        .unwrap();
        assert_eq!(tree.nodes().len(), 7);
        for node in tree.nodes_at_depth(2) {
            assert_eq!(node.content, "one two three four");
        }
    }

    #[test]
    fn config_errors() {
        let root = Node::root("x", vec![]);
        let t = MockTransformer::uniform(MockChannel::Identity);
        assert!(matches!(
            build_tree(root.clone(), &pairs(2), 0, TaskKind::Translation, &t),
            Err(TreeError::Config(_))
        ));
        assert!(matches!(
            build_tree(root, &[], 2, TaskKind::Translation, &t),
            Err(TreeError::Config(_))
        ));
    }

    #[test]
    fn path_counts() {
        let tree = identity_tree(3, 3);
        assert_eq!(enumerate_paths(&tree, 3, Anchor::RootOnly).unwrap().len(), 27);
        assert_eq!(enumerate_paths(&tree, 2, Anchor::AllChains).unwrap().len(), 36);
        assert!(matches!(
            enumerate_paths(&tree, 4, Anchor::RootOnly),
            Err(TreeError::PathLength { .. })
        ));
        assert!(enumerate_paths(&tree, 0, Anchor::AllChains).is_err());
    }

    #[test]
    fn paths_follow_edges() {
        let tree = identity_tree(2, 4);
        let edges: std::collections::HashSet<(String, String)> = tree
            .edges()
            .iter()
            .map(|e| (e.parent.clone(), e.child.clone()))
            .collect();
        for n in 1..=4 {
            for anchor in [Anchor::RootOnly, Anchor::AllChains] {
                for p in enumerate_paths(&tree, n, anchor).unwrap() {
                    assert_eq!(p.node_ids.len(), n + 1);
                    for w in p.node_ids.windows(2) {
                        assert!(edges.contains(&(w[0].clone(), w[1].clone())));
                    }
                }
            }
        }
    }

    #[test]
    fn exhaustive_path_count_closed_forms() {
        for k in 1..=3usize {
            for d in 1..=4usize {
                let tree = identity_tree(k, d);
                for n in 1..=d {
                    let root_only = enumerate_paths(&tree, n, Anchor::RootOnly).unwrap().len();
                    assert_eq!(root_only, k.pow(n as u32));
                    let all = enumerate_paths(&tree, n, Anchor::AllChains).unwrap().len();
                    let expected: usize = (0..=d - n).map(|s| k.pow((s + n) as u32)).sum();
                    assert_eq!(all, expected, "k={k} d={d} n={n}");
                }
            }
        }
    }

    #[test]
    fn id_helpers() {
        assert_eq!(child_id(ROOT_ID, 2), "2");
        assert_eq!(child_id("2", 0), "2-0");
        assert_eq!(parent_id("2-0-1").as_deref(), Some("2-0"));
        assert_eq!(parent_id("2").as_deref(), Some(ROOT_ID));
        assert_eq!(parent_id(ROOT_ID), None);
    }

    #[test]
    fn document_round_trip() {
        let tree = identity_tree(2, 3);
        let text = serialize_tree(&tree);
        assert_eq!(deserialize_tree(&text).unwrap(), tree);
    }

    #[test]
    fn document_without_root_is_rejected() {
        let tree = identity_tree(2, 1);
        let mut doc = TreeDocument::from(&tree);
        doc.nodes.retain(|n| n.id != ROOT_ID);
        let text = serde_json::to_string(&doc).unwrap();
        match deserialize_tree(&text) {
            Err(TreeError::Parse { field, .. }) => assert_eq!(field, "nodes"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_fields_are_named() {
        let tree = identity_tree(1, 1);
        let mut value = serde_json::to_value(TreeDocument::from(&tree)).unwrap();
        value["extra"] = json!(1);
        let err = deserialize_tree(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");

        let mut value = serde_json::to_value(TreeDocument::from(&tree)).unwrap();
        value["nodes"][1].as_object_mut().unwrap().remove("content");
        match deserialize_tree(&value.to_string()).unwrap_err() {
            TreeError::Parse { field, message } => {
                assert_eq!(field, "nodes[1]");
                assert!(message.contains("content"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tampered_document_fails_validation() {
        let tree = identity_tree(2, 2);
        let mut doc = TreeDocument::from(&tree);
        doc.nodes[3].inputs = vec![];
        let text = serde_json::to_string(&doc).unwrap();
        assert!(matches!(deserialize_tree(&text), Err(TreeError::Invariant(_))));
    }

    #[test]
    fn forest_rejects_shared_roots_and_mixed_shapes() {
        let a = identity_tree(2, 2);
        assert!(Forest::new(TaskKind::Programming, vec![a.clone(), a.clone()]).is_err());
        let b = identity_tree(3, 2);
        assert!(Forest::new(TaskKind::Programming, vec![a.clone(), b]).is_err());
        assert!(Forest::new(TaskKind::Programming, vec![]).is_err());
        let forest = Forest::new(TaskKind::Programming, vec![a]).unwrap();
        let text = serialize_forest(&forest);
        assert_eq!(deserialize_forest(&text).unwrap(), forest);
    }
}
