//! Causal DAGs, single-world intervention graphs (SWIGs) and d-separation.
//!
//! A [`SwigGraph`] is an ordinary [`CausalGraph`] whose intervened nodes have
//! been split into a random half (keeping the incoming edges) and a fixed
//! half (taking the outgoing edges). Fixed halves are constants: they never
//! transmit dependence, so d-separation treats them as permanently blocking.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("graph contains a directed cycle through `{0}`")]
    Cycle(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("self loop on `{0}`")]
    SelfLoop(String),
    #[error("node `{0}` appears in more than one query set")]
    OverlappingSets(String),
    #[error("cannot condition on latent node `{0}`")]
    LatentConditioning(String),
    #[error("fixed-node label `{0}` collides with an existing node name")]
    LabelCollision(String),
    #[error("malformed query `{0}`; expected `A,B|Z`")]
    MalformedQuery(String),
    #[error("malformed graph file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Observed,
    Latent,
    /// Fixed half of an intervened node in a SWIG.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

/// An edge that exists in the DAG but is absent in any SWIG whose
/// intervention sets `node` to `value`. Used for mechanisms that are
/// replaced by the intervention, such as `U -> A` once treatment is
/// randomized in the trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEdge {
    pub edge: (String, String),
    pub absent_under: Assignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub node: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    context_edges: Vec<ContextEdge>,
    topo: Vec<usize>,
}

impl CausalGraph {
    /// Builds a graph from `(name, latent)` nodes and `(parent, child)` edges.
    pub fn new<N, E>(nodes: N, edges: E) -> Result<Self, GraphError>
    where
        N: IntoIterator<Item = (String, bool)>,
        E: IntoIterator<Item = (String, String)>,
    {
        let nodes = nodes
            .into_iter()
            .map(|(name, latent)| Node {
                name,
                kind: if latent { NodeKind::Latent } else { NodeKind::Observed },
            })
            .collect();
        Self::from_parts(nodes, edges, Vec::new())
    }

    fn from_parts<E>(
        nodes: Vec<Node>,
        edges: E,
        context_edges: Vec<ContextEdge>,
    ) -> Result<Self, GraphError>
    where
        E: IntoIterator<Item = (String, String)>,
    {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.name.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.name.clone()));
            }
        }
        let mut parents = vec![Vec::new(); nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        for (p, c) in edges {
            let pi = *index.get(&p).ok_or_else(|| GraphError::UnknownNode(p.clone()))?;
            let ci = *index.get(&c).ok_or_else(|| GraphError::UnknownNode(c.clone()))?;
            if pi == ci {
                return Err(GraphError::SelfLoop(p));
            }
            if children[pi].contains(&ci) {
                return Err(GraphError::DuplicateEdge(p, c));
            }
            children[pi].push(ci);
            parents[ci].push(pi);
        }
        for ce in &context_edges {
            let (p, c) = &ce.edge;
            let pi = *index.get(p).ok_or_else(|| GraphError::UnknownNode(p.clone()))?;
            let ci = *index.get(c).ok_or_else(|| GraphError::UnknownNode(c.clone()))?;
            if !children[pi].contains(&ci) {
                return Err(GraphError::File(format!(
                    "context edge {p} -> {c} is not an edge of the graph"
                )));
            }
            if !index.contains_key(&ce.absent_under.node) {
                return Err(GraphError::UnknownNode(ce.absent_under.node.clone()));
            }
        }
        let topo = topological_order(&nodes, &parents, &children)?;
        Ok(Self { nodes, index, parents, children, context_edges, topo })
    }

    /// Marks the existing edge `parent -> child` as absent under `node = value`.
    pub fn with_context_edge(
        mut self,
        parent: &str,
        child: &str,
        node: &str,
        value: &str,
    ) -> Result<Self, GraphError> {
        self.context_edges.push(ContextEdge {
            edge: (parent.to_owned(), child.to_owned()),
            absent_under: Assignment { node: node.to_owned(), value: value.to_owned() },
        });
        let edges: Vec<(String, String)> = self.edge_names().collect();
        Self::from_parts(self.nodes, edges, self.context_edges)
    }

    /// The same graph with one edge deleted.
    pub fn without_edge(&self, parent: &str, child: &str) -> Result<Self, GraphError> {
        let p = self.node_index(parent)?;
        let c = self.node_index(child)?;
        if !self.children[p].contains(&c) {
            return Err(GraphError::File(format!("no edge {parent} -> {child}")));
        }
        let edges = self.edge_names().filter(|(a, b)| !(a == parent && b == child));
        let ctx = self
            .context_edges
            .iter()
            .filter(|ce| !(ce.edge.0 == parent && ce.edge.1 == child))
            .cloned()
            .collect();
        Self::from_parts(self.nodes.clone(), edges.collect::<Vec<_>>(), ctx)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn node_index(&self, name: &str) -> Result<usize, GraphError> {
        self.index.get(name).copied().ok_or_else(|| GraphError::UnknownNode(name.to_owned()))
    }

    pub fn kind(&self, name: &str) -> Option<NodeKind> {
        self.index.get(name).map(|&i| self.nodes[i].kind)
    }

    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children_of(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn context_edges(&self) -> &[ContextEdge] {
        &self.context_edges
    }

    /// Node indices in a deterministic topological order (ties broken by
    /// insertion order).
    pub fn topological(&self) -> &[usize] {
        &self.topo
    }

    pub fn has_edge(&self, parent: &str, child: &str) -> bool {
        match (self.index.get(parent), self.index.get(child)) {
            (Some(&p), Some(&c)) => self.children[p].contains(&c),
            _ => false,
        }
    }

    /// Edges as `(parent, child)` names, ordered by parent then insertion.
    pub fn edge_names(&self) -> impl Iterator<Item = (String, String)> + '_ {
        self.children.iter().enumerate().flat_map(move |(p, cs)| {
            cs.iter().map(move |&c| (self.nodes[p].name.clone(), self.nodes[c].name.clone()))
        })
    }

    /// d-separation of `set_a` and `set_b` given `given`, refusing to
    /// condition on latent nodes.
    pub fn d_separated(
        &self,
        set_a: &[&str],
        set_b: &[&str],
        given: &[&str],
    ) -> Result<bool, GraphError> {
        self.d_separated_with(set_a, set_b, given, true)
    }

    /// d-separation with an explicit choice on whether conditioning on
    /// latent nodes is an error.
    pub fn d_separated_with(
        &self,
        set_a: &[&str],
        set_b: &[&str],
        given: &[&str],
        observed_conditioning_only: bool,
    ) -> Result<bool, GraphError> {
        let a = self.resolve(set_a)?;
        let b = self.resolve(set_b)?;
        let z = self.resolve(given)?;
        let mut seen = BTreeSet::new();
        for &i in a.iter().chain(&b).chain(&z) {
            if !seen.insert(i) {
                return Err(GraphError::OverlappingSets(self.nodes[i].name.clone()));
            }
        }
        if observed_conditioning_only {
            if let Some(&i) = z.iter().find(|&&i| self.nodes[i].kind == NodeKind::Latent) {
                return Err(GraphError::LatentConditioning(self.nodes[i].name.clone()));
            }
        }
        let reach = self.reachable(&a, &z);
        Ok(b.iter().all(|&j| !reach[j]))
    }

    fn resolve(&self, names: &[&str]) -> Result<Vec<usize>, GraphError> {
        names.iter().map(|n| self.node_index(n)).collect()
    }

    /// Nodes with an active trail from `sources` given `z` (reachability
    /// form of the Bayes-ball algorithm). Fixed nodes never pass a trail on.
    fn reachable(&self, sources: &[usize], z: &[usize]) -> Vec<bool> {
        let n = self.nodes.len();
        let mut in_z = vec![false; n];
        for &i in z {
            in_z[i] = true;
        }
        // Ancestors of Z, Z included: colliders in this set are open.
        let mut anc_z = in_z.clone();
        let mut stack: Vec<usize> = z.to_vec();
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if !anc_z[p] {
                    anc_z[p] = true;
                    stack.push(p);
                }
            }
        }
        let blocks = |v: usize| in_z[v] || self.nodes[v].kind == NodeKind::Fixed;

        // Direction flag: true = trail arrived from a child (moving up).
        let mut visited = vec![[false; 2]; n];
        let mut reach = vec![false; n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if self.nodes[s].kind != NodeKind::Fixed {
                queue.push_back((s, true));
            }
        }
        while let Some((v, up)) = queue.pop_front() {
            if visited[v][up as usize] {
                continue;
            }
            visited[v][up as usize] = true;
            if !in_z[v] && self.nodes[v].kind != NodeKind::Fixed {
                reach[v] = true;
            }
            if up {
                if !blocks(v) {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                    queue.extend(self.children[v].iter().map(|&c| (c, false)));
                }
            } else {
                if !blocks(v) {
                    queue.extend(self.children[v].iter().map(|&c| (c, false)));
                }
                if anc_z[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                }
            }
        }
        for &s in sources {
            reach[s] = false;
        }
        reach
    }

    /// Parses the JSON graph description
    /// `{"nodes":[{"name":"U","latent":true},...],"edges":[["S","Y"],...]}`.
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| GraphError::File(e.to_string()))?;
        file.into_graph()
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeEntry { name: n.name.clone(), latent: n.kind == NodeKind::Latent })
                .collect(),
            edges: self.edge_names().map(|(a, b)| [a, b]).collect(),
            context_edges: self.context_edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }
}

fn topological_order(
    nodes: &[Node],
    parents: &[Vec<usize>],
    children: &[Vec<usize>],
) -> Result<Vec<usize>, GraphError> {
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: VecDeque<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(v) = ready.pop_front() {
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push_back(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
        return Err(GraphError::Cycle(nodes[stuck].name.clone()));
    }
    Ok(order)
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeEntry {
    name: String,
    #[serde(default)]
    latent: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<NodeEntry>,
    #[serde(default)]
    edges: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    context_edges: Vec<ContextEdge>,
}

impl GraphFile {
    fn into_graph(self) -> Result<CausalGraph, GraphError> {
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| Node {
                name: n.name,
                kind: if n.latent { NodeKind::Latent } else { NodeKind::Observed },
            })
            .collect();
        let edges: Vec<_> = self.edges.into_iter().map(|[a, b]| (a, b)).collect();
        CausalGraph::from_parts(nodes, edges, self.context_edges)
    }
}

/// A d-separation query `A,B|Z` in the CLI syntax: comma-separated node
/// lists, the first list against the second, given the list after `|`.
/// Lists are separated by `;` when a side holds several nodes:
/// `Y;W,A|X;S` reads as `{Y,W} vs {A} given {X,S}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub set_a: Vec<String>,
    pub set_b: Vec<String>,
    pub given: Vec<String>,
}

impl Query {
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let bad = || GraphError::MalformedQuery(text.to_owned());
        let (pair, given) = match text.split_once('|') {
            Some((p, g)) => (p, g),
            None => (text, ""),
        };
        let (a, b) = pair.split_once(',').ok_or_else(bad)?;
        let list = |s: &str| -> Vec<String> {
            s.split(';').map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned).collect()
        };
        let q = Self { set_a: list(a), set_b: list(b), given: list(given) };
        if q.set_a.is_empty() || q.set_b.is_empty() {
            return Err(bad());
        }
        Ok(q)
    }

    pub fn evaluate(&self, g: &CausalGraph) -> Result<bool, GraphError> {
        fn refs(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        g.d_separated(&refs(&self.set_a), &refs(&self.set_b), &refs(&self.given))
    }
}

/// Node name to fixed value label, e.g. `S -> "s=1"`, `A -> "a"`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSet {
    pub assignments: BTreeMap<String, String>,
}

impl InterventionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, node: &str, value: &str) -> Self {
        self.assignments.insert(node.to_owned(), value.to_owned());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwigGraph {
    graph: CausalGraph,
    interventions: InterventionSet,
    /// Original node name for every SWIG node (fixed halves map to the
    /// intervened node).
    base: Vec<String>,
}

impl SwigGraph {
    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn interventions(&self) -> &InterventionSet {
        &self.interventions
    }

    pub fn base_name(&self, label: &str) -> Option<&str> {
        self.graph.index.get(label).map(|&i| self.base[i].as_str())
    }

    /// Label of the random half (or untouched copy) of an original node.
    pub fn label_of(&self, original: &str) -> Option<&str> {
        self.graph
            .nodes
            .iter()
            .zip(&self.base)
            .find(|(n, b)| b.as_str() == original && n.kind != NodeKind::Fixed)
            .map(|(n, _)| n.name.as_str())
    }

    pub fn d_separated(
        &self,
        set_a: &[&str],
        set_b: &[&str],
        given: &[&str],
    ) -> Result<bool, GraphError> {
        self.graph.d_separated(set_a, set_b, given)
    }
}

/// Splits every intervened node into a random half (incoming edges) and a
/// fixed half named by its value label (outgoing edges), drops context
/// edges switched off by the intervention, and relabels every random node
/// with the value labels of the fixed nodes among its ancestors, ordered
/// by the topological position of the intervened nodes.
pub fn swig_transform(g: &CausalGraph, iv: &InterventionSet) -> Result<SwigGraph, GraphError> {
    let mut order_of = vec![usize::MAX; g.len()];
    for (pos, &v) in g.topo.iter().enumerate() {
        order_of[v] = pos;
    }
    let mut intervened: Vec<(usize, String)> = Vec::new();
    for (node, value) in &iv.assignments {
        intervened.push((g.node_index(node)?, value.clone()));
    }
    intervened.sort_by_key(|(i, _)| order_of[*i]);
    let fixed_of: HashMap<usize, usize> =
        intervened.iter().enumerate().map(|(k, (i, _))| (*i, k)).collect();

    let dropped: BTreeSet<(usize, usize)> = g
        .context_edges
        .iter()
        .filter(|ce| {
            iv.assignments.get(&ce.absent_under.node) == Some(&ce.absent_under.value)
        })
        .map(|ce| (g.index[&ce.edge.0], g.index[&ce.edge.1]))
        .collect();

    // Working indices: originals keep 0..n, fixed halves follow.
    let n = g.len();
    let total = n + intervened.len();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for p in 0..n {
        for &c in &g.children[p] {
            if dropped.contains(&(p, c)) {
                continue;
            }
            let src = fixed_of.get(&p).map_or(p, |&k| n + k);
            edges.push((src, c));
        }
    }

    // Fixed ancestors of each node, as positions in `intervened`.
    let mut children = vec![Vec::new(); total];
    for &(p, c) in &edges {
        children[p].push(c);
    }
    let mut tags: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); total];
    for k in 0..intervened.len() {
        let mut stack = vec![n + k];
        let mut seen = vec![false; total];
        while let Some(v) = stack.pop() {
            for &c in &children[v] {
                if !seen[c] {
                    seen[c] = true;
                    tags[c].insert(k);
                    stack.push(c);
                }
            }
        }
    }

    let mut nodes = Vec::with_capacity(total);
    let mut base = Vec::with_capacity(total);
    for (i, node) in g.nodes.iter().enumerate() {
        let name = if tags[i].is_empty() {
            node.name.clone()
        } else {
            let sup: Vec<&str> = tags[i].iter().map(|&k| intervened[k].1.as_str()).collect();
            format!("{}^{{{}}}", node.name, sup.join(","))
        };
        nodes.push(Node { name, kind: node.kind });
        base.push(node.name.clone());
    }
    for (i, value) in &intervened {
        if nodes.iter().any(|n| &n.name == value) {
            return Err(GraphError::LabelCollision(value.clone()));
        }
        nodes.push(Node { name: value.clone(), kind: NodeKind::Fixed });
        base.push(g.nodes[*i].name.clone());
    }
    let names: Vec<String> = nodes.iter().map(|n| n.name.clone()).collect();
    let named_edges: Vec<(String, String)> =
        edges.iter().map(|&(p, c)| (names[p].clone(), names[c].clone())).collect();
    let graph = CausalGraph::from_parts(nodes, named_edges, Vec::new())?;
    Ok(SwigGraph { graph, interventions: iv.clone(), base })
}

/// The DAG with trial participation `S`, treatment `A`, outcome `Y`,
/// baseline covariates `X` and latent `U`, plus the three SWIGs derived
/// from it.
#[derive(Debug, Clone)]
pub struct CanonicalGraphs {
    pub dag: CausalGraph,
    /// Intervention on treatment only (`A -> a`).
    pub treatment: SwigGraph,
    /// Joint intervention `S -> s=0`, `A -> a`.
    pub usual_care: SwigGraph,
    /// Joint intervention `S -> s=1`, `A -> a`.
    pub trial: SwigGraph,
}

impl CanonicalGraphs {
    /// Graph by id: 1 is the DAG, 2 the treatment SWIG, 3 the usual-care
    /// SWIG, 4 the trial SWIG.
    pub fn figure(&self, id: u8) -> Option<&CausalGraph> {
        match id {
            1 => Some(&self.dag),
            2 => Some(self.treatment.graph()),
            3 => Some(self.usual_care.graph()),
            4 => Some(self.trial.graph()),
            _ => None,
        }
    }

    pub fn as_map(&self) -> BTreeMap<u8, &CausalGraph> {
        (1..=4).filter_map(|i| self.figure(i).map(|g| (i, g))).collect()
    }

    /// The SWIG with id 2, 3 or 4.
    pub fn swig(&self, id: u8) -> Option<&SwigGraph> {
        match id {
            2 => Some(&self.treatment),
            3 => Some(&self.usual_care),
            4 => Some(&self.trial),
            _ => None,
        }
    }
}

/// The trial-engagement DAG. Treatment in the trial is randomized, so the
/// `U -> A` edge is switched off under `S = s=1`.
pub fn engagement_dag() -> CausalGraph {
    let node = |n: &str, latent| (n.to_owned(), latent);
    let edge = |a: &str, b: &str| (a.to_owned(), b.to_owned());
    CausalGraph::new(
        [node("X", false), node("U", true), node("S", false), node("A", false), node("Y", false)],
        [
            edge("X", "S"),
            edge("X", "A"),
            edge("X", "Y"),
            edge("S", "A"),
            edge("S", "Y"),
            edge("A", "Y"),
            edge("U", "A"),
            edge("U", "Y"),
        ],
    )
    .and_then(|g| g.with_context_edge("U", "A", "S", "s=1"))
    .expect("canonical DAG is well formed")
}

pub fn build_canonical_graphs() -> CanonicalGraphs {
    canonical_graphs_from(&engagement_dag()).expect("canonical DAG has S and A")
}

/// Derives the three SWIGs from any DAG containing `S` and `A`.
pub fn canonical_graphs_from(dag: &CausalGraph) -> Result<CanonicalGraphs, GraphError> {
    Ok(CanonicalGraphs {
        dag: dag.clone(),
        treatment: swig_transform(dag, &InterventionSet::new().set("A", "a"))?,
        usual_care: swig_transform(dag, &InterventionSet::new().set("S", "s=0").set("A", "a"))?,
        trial: swig_transform(dag, &InterventionSet::new().set("S", "s=1").set("A", "a"))?,
    })
}

/// A (non-)independence statement between the random halves of original
/// nodes in one SWIG. Nodes are named by their original names and resolved
/// to the SWIG's counterfactual labels, so a mutated DAG that changes the
/// labels (say, by removing `S -> Y`) still evaluates the same statements.
#[derive(Debug, Clone, Serialize)]
pub struct Claim {
    pub figure: u8,
    pub left: &'static str,
    pub right: &'static str,
    pub given: &'static [&'static str],
    pub expected: bool,
}

impl Claim {
    fn resolve<'g>(&self, g: &'g SwigGraph) -> Result<(&'g str, &'g str, Vec<&'g str>), GraphError> {
        let label = |n: &str| g.label_of(n).ok_or_else(|| GraphError::UnknownNode(n.to_owned()));
        let given = self.given.iter().map(|n| label(n)).collect::<Result<_, _>>()?;
        Ok((label(self.left)?, label(self.right)?, given))
    }

    /// The statement with this SWIG's labels, e.g. `Y^{a} _||_ A | X`.
    pub fn statement_in(&self, g: &SwigGraph) -> String {
        match self.resolve(g) {
            Ok((l, r, given)) => format!("{l} _||_ {r} | {}", given.join(",")),
            Err(_) => format!("{} _||_ {} | {}", self.left, self.right, self.given.join(",")),
        }
    }
}

/// The (non-)independencies read off the three SWIGs: id 2 intervenes
/// on `A`, id 3 on `S=0, A`, id 4 on `S=1, A`.
pub const CLAIMS: [Claim; 7] = [
    Claim { figure: 2, left: "Y", right: "A", given: &["X"], expected: false },
    Claim { figure: 2, left: "Y", right: "A", given: &["X", "S"], expected: false },
    Claim { figure: 3, left: "Y", right: "S", given: &["X"], expected: true },
    Claim { figure: 3, left: "Y", right: "A", given: &["X"], expected: false },
    Claim { figure: 3, left: "Y", right: "A", given: &["X", "S"], expected: false },
    Claim { figure: 4, left: "Y", right: "A", given: &["X", "S"], expected: true },
    Claim { figure: 4, left: "Y", right: "S", given: &["X"], expected: true },
];

#[derive(Debug, Clone, Serialize)]
pub struct ClaimResult {
    pub figure: u8,
    pub statement: String,
    pub expected: bool,
    pub observed: Option<bool>,
    pub matches: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClaimsReport {
    pub claims: Vec<ClaimResult>,
}

impl ClaimsReport {
    pub fn all_match(&self) -> bool {
        self.claims.iter().all(|c| c.matches)
    }

    pub fn divergent(&self) -> impl Iterator<Item = &ClaimResult> {
        self.claims.iter().filter(|c| !c.matches)
    }
}

pub fn verify_independence_claims() -> ClaimsReport {
    verify_claims_on(&build_canonical_graphs())
}

/// Evaluates the fixed claim list on SWIGs derived from an arbitrary DAG;
/// divergences from the expected truth values are reported, not raised.
pub fn verify_claims_on(graphs: &CanonicalGraphs) -> ClaimsReport {
    let claims = CLAIMS
        .iter()
        .map(|c| {
            let g = graphs.swig(c.figure).expect("claims reference SWIG ids 2-4");
            let res = c.resolve(g).and_then(|(l, r, given)| g.d_separated(&[l], &[r], &given));
            let (observed, error) = match res {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ClaimResult {
                figure: c.figure,
                statement: c.statement_in(g),
                expected: c.expected,
                observed,
                matches: observed == Some(c.expected),
                error,
            }
        })
        .collect();
    ClaimsReport { claims }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dag_has_engagement_edge() {
        let g = build_canonical_graphs();
        assert!(g.dag.has_edge("S", "Y"));
        assert_eq!(g.dag.kind("U"), Some(NodeKind::Latent));
        assert_eq!(g.dag.edge_names().count(), 8);
    }

    #[test]
    fn treatment_swig_splits_only_treatment() {
        let g = build_canonical_graphs();
        let f2 = g.treatment.graph();
        assert_eq!(f2.kind("S"), Some(NodeKind::Observed));
        assert_eq!(f2.kind("a"), Some(NodeKind::Fixed));
        assert!(f2.has_edge("a", "Y^{a}"));
        assert!(f2.has_edge("U", "A"));
        assert!(f2.has_edge("S", "Y^{a}"));
        // random half keeps parents, loses children
        assert!(f2.children_of(f2.node_index("A").unwrap()).is_empty());
    }

    #[test]
    fn usual_care_swig_keeps_confounding_edge() {
        let g = build_canonical_graphs();
        let f3 = g.usual_care.graph();
        assert!(f3.has_edge("U", "A^{s=0}"));
        assert!(f3.has_edge("U", "Y^{s=0,a}"));
        assert!(f3.has_edge("s=0", "A^{s=0}"));
        assert!(f3.has_edge("s=0", "Y^{s=0,a}"));
        assert!(f3.contains("S"));
    }

    #[test]
    fn trial_swig_drops_confounding_of_trial_treatment() {
        let g = build_canonical_graphs();
        let f4 = g.trial.graph();
        assert!(!f4.has_edge("U", "A^{s=1}"));
        assert!(f4.has_edge("X", "A^{s=1}"));
        assert!(f4.has_edge("s=1", "A^{s=1}"));
        assert!(f4.has_edge("a", "Y^{s=1,a}"));
        assert_eq!(g.trial.base_name("Y^{s=1,a}"), Some("Y"));
        assert_eq!(g.trial.label_of("A"), Some("A^{s=1}"));
    }

    #[test]
    fn empty_intervention_is_identity() {
        let dag = engagement_dag();
        let sw = swig_transform(&dag, &InterventionSet::new()).unwrap();
        assert_eq!(sw.graph().nodes(), dag.nodes());
        assert_eq!(
            sw.graph().edge_names().collect::<Vec<_>>(),
            dag.edge_names().collect::<Vec<_>>()
        );
    }

    #[test]
    fn unknown_intervention_node_is_rejected() {
        let err = swig_transform(&engagement_dag(), &InterventionSet::new().set("Z", "z"));
        assert_eq!(err.unwrap_err(), GraphError::UnknownNode("Z".into()));
    }

    #[test]
    fn canonical_d_separation_examples() {
        let g = build_canonical_graphs();
        assert!(!g.treatment.d_separated(&["Y^{a}"], &["A"], &["X"]).unwrap());
        assert!(g.trial.d_separated(&["Y^{s=1,a}"], &["S"], &["X"]).unwrap());
        assert!(g.usual_care.d_separated(&["Y^{s=0,a}"], &["S"], &["X"]).unwrap());
    }

    #[test]
    fn all_seven_claims_hold() {
        let r = verify_independence_claims();
        assert_eq!(r.claims.len(), 7);
        assert!(r.all_match(), "{:?}", r.divergent().collect::<Vec<_>>());
    }

    #[test]
    fn removing_unmeasured_confounding_flags_divergence() {
        let dag = engagement_dag().without_edge("U", "Y").unwrap();
        let r = verify_claims_on(&canonical_graphs_from(&dag).unwrap());
        // A <- S -> Y^{a} stays open given X alone; conditioning on S as well
        // leaves no open path.
        assert_eq!(r.claims[0].observed, Some(false));
        assert_eq!(r.claims[1].observed, Some(true));
        assert!(!r.claims[1].matches);
        assert!(!r.all_match());
    }

    #[test]
    fn removing_engagement_edge_keeps_claims() {
        let dag = engagement_dag().without_edge("S", "Y").unwrap();
        let r = verify_claims_on(&canonical_graphs_from(&dag).unwrap());
        assert!(r.all_match(), "{:?}", r.divergent().collect::<Vec<_>>());
    }

    #[test]
    fn overlapping_and_latent_sets_are_errors() {
        let g = engagement_dag();
        assert_eq!(
            g.d_separated(&["Y"], &["A"], &["Y"]).unwrap_err(),
            GraphError::OverlappingSets("Y".into())
        );
        assert_eq!(
            g.d_separated(&["Y"], &["A"], &["U"]).unwrap_err(),
            GraphError::LatentConditioning("U".into())
        );
        // the latent node is fine when validation is off
        assert!(g.d_separated_with(&["S"], &["U"], &["X"], false).unwrap());
    }

    #[test]
    fn cycles_and_bad_edges_are_rejected() {
        let n = |s: &str| (s.to_owned(), false);
        let e = |a: &str, b: &str| (a.to_owned(), b.to_owned());
        assert!(matches!(
            CausalGraph::new([n("A"), n("B")], [e("A", "B"), e("B", "A")]),
            Err(GraphError::Cycle(_))
        ));
        assert!(matches!(
            CausalGraph::new([n("A")], [e("A", "Q")]),
            Err(GraphError::UnknownNode(_))
        ));
        assert!(matches!(
            CausalGraph::new([n("A"), n("A")], []),
            Err(GraphError::DuplicateNode(_))
        ));
    }

    #[test]
    fn json_round_trip_and_queries() {
        let text = r#"{"nodes":[{"name":"U","latent":true},{"name":"A"},{"name":"Y"}],
                       "edges":[["U","A"],["U","Y"],["A","Y"]]}"#;
        let g = CausalGraph::from_json(text).unwrap();
        let back = CausalGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
        let q = Query::parse("A,Y|").unwrap();
        assert!(!q.evaluate(&g).unwrap());
        assert!(Query::parse("A|Y").is_err());
        let q = Query::parse("S;Y,A|X;U").unwrap();
        assert_eq!(q.set_a, vec!["S", "Y"]);
        assert_eq!(q.given, vec!["X", "U"]);
    }

    #[test]
    fn fixed_nodes_never_open_paths() {
        // a is a fixed parent of both Y1 and Y2; as a constant it cannot
        // make them dependent.
        let dag = {
            let n = |s: &str| (s.to_owned(), false);
            let e = |a: &str, b: &str| (a.to_owned(), b.to_owned());
            CausalGraph::new([n("A"), n("Y1"), n("Y2")], [e("A", "Y1"), e("A", "Y2")]).unwrap()
        };
        assert!(!dag.d_separated(&["Y1"], &["Y2"], &[]).unwrap());
        let sw = swig_transform(&dag, &InterventionSet::new().set("A", "a")).unwrap();
        assert!(sw.d_separated(&["Y1^{a}"], &["Y2^{a}"], &[]).unwrap());
    }
}
