//! Vascular graph model: labeled tree graphs of arterial segments.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::PermutationMatrix;

/// Default per-node feature dimension.
pub const DEFAULT_FEATURE_DIM: usize = 121;

/// The five coarse classes of left coronary artery segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseLabel {
    LMA,
    LAD,
    LCX,
    D,
    OM,
}

impl CoarseLabel {
    pub const ALL: [CoarseLabel; 5] = [
        CoarseLabel::LMA,
        CoarseLabel::LAD,
        CoarseLabel::LCX,
        CoarseLabel::D,
        CoarseLabel::OM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoarseLabel::LMA => "LMA",
            CoarseLabel::LAD => "LAD",
            CoarseLabel::LCX => "LCX",
            CoarseLabel::D => "D",
            CoarseLabel::OM => "OM",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoarseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoarseLabel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown artery class {s:?}")))
    }
}

/// Fine label: coarse class plus an optional 1-based sub-segment index
/// (e.g. LAD segment 2, diagonal branch 1). LMA is never subdivided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArteryLabel {
    pub coarse: CoarseLabel,
    #[serde(default)]
    pub sub: Option<u32>,
}

impl ArteryLabel {
    pub fn new(coarse: CoarseLabel, sub: Option<u32>) -> Result<Self> {
        let label = ArteryLabel { coarse, sub };
        label.validate()?;
        Ok(label)
    }

    pub fn coarse(coarse: CoarseLabel) -> Self {
        ArteryLabel { coarse, sub: None }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.coarse, self.sub) {
            (CoarseLabel::LMA, Some(_)) => {
                Err(Error::validation("LMA label must not carry a sub-index"))
            }
            (_, Some(0)) => Err(Error::validation("label sub-index must be >= 1")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ArteryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sub {
            Some(k) => write!(f, "{}{}", self.coarse, k),
            None => write!(f, "{}", self.coarse),
        }
    }
}

/// Drops the sub-segment index.
pub fn regroup(label: ArteryLabel) -> CoarseLabel {
    label.coarse
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimaryAngle {
    LAO,
    RAO,
    AP,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SecondaryAngle {
    CRA,
    CAU,
}

/// Projection view of the angiogram a graph was extracted from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewAngle {
    pub first: PrimaryAngle,
    pub second: SecondaryAngle,
}

impl ViewAngle {
    pub const fn new(first: PrimaryAngle, second: SecondaryAngle) -> Self {
        ViewAngle { first, second }
    }
}

impl fmt::Display for ViewAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?}", self.first, self.second)
    }
}

/// One arterial segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArteryNode {
    pub id: usize,
    pub features: Vec<f64>,
    #[serde(default)]
    pub label: Option<ArteryLabel>,
    #[serde(default)]
    pub centerline: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub diameters: Option<Vec<f64>>,
}

/// On-disk layout of a graph file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    id: String,
    view: ViewAngle,
    nodes: Vec<ArteryNode>,
    edges: Vec<[usize; 2]>,
}

/// Undirected tree of arterial segments. Node ids are dense `0..n` and
/// index `nodes()`; edges are stored as sorted `(min, max)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct VascularGraph {
    id: String,
    view: ViewAngle,
    nodes: Vec<ArteryNode>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl VascularGraph {
    /// Validates and builds a graph. Nodes may arrive in any order; they
    /// are sorted by id.
    pub fn new(
        id: impl Into<String>,
        view: ViewAngle,
        mut nodes: Vec<ArteryNode>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::validation("graph has no nodes"));
        }
        nodes.sort_by_key(|v| v.id);
        for (k, node) in nodes.iter().enumerate() {
            if node.id != k {
                return Err(Error::validation(format!(
                    "node ids must be unique and dense 0..{n}; found id {} at position {k}",
                    node.id
                )));
            }
        }
        let d_in = nodes[0].features.len();
        for node in &nodes {
            if node.features.len() != d_in {
                return Err(Error::validation(format!(
                    "node {} has {} features, expected {d_in}",
                    node.id,
                    node.features.len()
                )));
            }
            if node.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "node {} has a non-finite feature",
                    node.id
                )));
            }
            if let Some(label) = &node.label {
                label.validate()?;
            }
            if let Some(c) = &node.centerline {
                if c.len() < 2 {
                    return Err(Error::validation(format!(
                        "node {} centerline has fewer than 2 points",
                        node.id
                    )));
                }
                if c.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "node {} centerline has a non-finite coordinate",
                        node.id
                    )));
                }
            }
            if let Some(d) = &node.diameters {
                if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::validation(format!(
                        "node {} diameters must be positive and finite",
                        node.id
                    )));
                }
            }
        }

        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::validation(format!(
                    "edge ({a},{b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::validation(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation(format!(
                "duplicate edge ({},{})",
                w[0].0, w[0].1
            )));
        }
        if canon.len() != n - 1 {
            return Err(Error::validation(format!(
                "a tree with {n} nodes needs {} edges, found {}",
                n - 1,
                canon.len()
            )));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &canon {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let graph = VascularGraph {
            id: id.into(),
            view,
            nodes,
            edges: canon,
            neighbors,
        };
        if graph.bfs_order().len() != n {
            return Err(Error::validation("graph is not connected"));
        }
        Ok(graph)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn view(&self) -> ViewAngle {
        self.view
    }

    pub fn nodes(&self) -> &[ArteryNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &ArteryNode {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes[0].features.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Breadth-first visiting order from node 0.
    pub fn bfs_order(&self) -> Vec<usize> {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &j in &self.neighbors[i] {
                if !std::mem::replace(&mut seen[j], true) {
                    queue.push_back(j);
                }
            }
        }
        order
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn check_feature_dim(&self, d_in: usize) -> Result<()> {
        if self.feature_dim() != d_in {
            return Err(Error::validation(format!(
                "graph {} has {} features per node, expected {d_in}",
                self.id,
                self.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.nodes.iter().all(|v| v.label.is_some())
    }

    /// Fine labels of every node, or an error naming the first unlabeled node.
    pub fn labels(&self) -> Result<Vec<ArteryLabel>> {
        self.nodes
            .iter()
            .map(|v| {
                v.label.ok_or_else(|| {
                    Error::validation(format!("graph {} node {} is unlabeled", self.id, v.id))
                })
            })
            .collect()
    }

    pub fn coarse_labels(&self) -> Result<Vec<CoarseLabel>> {
        Ok(self.labels()?.into_iter().map(regroup).collect())
    }

    /// Rejects graphs whose fine labels are missing or repeated; such
    /// graphs cannot define a ground-truth correspondence.
    pub fn check_unique_labels(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (i, label) in self.labels()?.into_iter().enumerate() {
            if let Some(j) = seen.insert(label, i) {
                return Err(Error::validation(format!(
                    "graph {} repeats fine label {label} on nodes {j} and {i}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> VascularGraph {
        let mut g = self.clone();
        for v in &mut g.nodes {
            v.label = None;
        }
        g
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s)?;
        VascularGraph::new(
            file.id,
            file.view,
            file.nodes,
            file.edges.into_iter().map(|[a, b]| (a, b)).collect(),
        )
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            id: self.id.clone(),
            view: self.view,
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
        };
        serde_json::to_string(&file).expect("graph serialization is infallible")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json_string()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Reads and validates a graph file.
pub fn load_graph(path: impl AsRef<Path>) -> Result<VascularGraph> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    VascularGraph::from_json_str(&text)
}

/// Correspondence implied by identical fine labels: `(i, j)` is set iff
/// node `i` of `a` and node `j` of `b` carry the same label.
pub fn ground_truth_permutation(a: &VascularGraph, b: &VascularGraph) -> Result<PermutationMatrix> {
    a.check_unique_labels()?;
    b.check_unique_labels()?;
    if a.n() != b.n() {
        return Err(Error::validation(format!(
            "graphs {} and {} differ in size ({} vs {})",
            a.id,
            b.id,
            a.n(),
            b.n()
        )));
    }
    let index_b: BTreeMap<ArteryLabel, usize> = b
        .labels()?
        .into_iter()
        .enumerate()
        .map(|(j, l)| (l, j))
        .collect();
    let assignment = a
        .labels()?
        .into_iter()
        .map(|l| {
            index_b.get(&l).copied().ok_or_else(|| {
                Error::validation(format!(
                    "label {l} of graph {} has no counterpart in graph {}",
                    a.id, b.id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PermutationMatrix::new(assignment)
}

/// `m ≥ 2` graphs sharing a view angle and a node count.
#[derive(Clone, Debug)]
pub struct GraphSet {
    graphs: Vec<VascularGraph>,
}

impl GraphSet {
    pub fn new(graphs: Vec<VascularGraph>) -> Result<Self> {
        if graphs.len() < 2 {
            return Err(Error::validation("a graph set needs at least two graphs"));
        }
        let (view, n) = (graphs[0].view(), graphs[0].n());
        for g in &graphs[1..] {
            if g.view() != view {
                return Err(Error::validation(format!(
                    "graph {} has view {}, expected {view}",
                    g.id(),
                    g.view()
                )));
            }
            if g.n() != n {
                return Err(Error::validation(format!(
                    "graph {} has {} nodes, expected {n}",
                    g.id(),
                    g.n()
                )));
            }
        }
        Ok(GraphSet { graphs })
    }

    pub fn graphs(&self) -> &[VascularGraph] {
        &self.graphs
    }

    pub fn m(&self) -> usize {
        self.graphs.len()
    }

    pub fn n(&self) -> usize {
        self.graphs[0].n()
    }

    pub fn into_graphs(self) -> Vec<VascularGraph> {
        self.graphs
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn node(id: usize, coarse: CoarseLabel, sub: Option<u32>, f: f64) -> ArteryNode {
        ArteryNode {
            id,
            features: vec![f, -f],
            label: Some(ArteryLabel { coarse, sub }),
            centerline: None,
            diameters: None,
        }
    }

    const VIEW: ViewAngle = ViewAngle::new(PrimaryAngle::RAO, SecondaryAngle::CAU);

    /// LMA–LAD1–LAD2, LMA–LCX1, LCX1–OM1.
    pub(crate) fn lca_fixture() -> VascularGraph {
        use CoarseLabel::*;
        VascularGraph::new(
            "lca5",
            VIEW,
            vec![
                node(0, LMA, None, 0.0),
                node(1, LAD, Some(1), 1.0),
                node(2, LAD, Some(2), 2.0),
                node(3, LCX, Some(1), 3.0),
                node(4, OM, Some(1), 4.0),
            ],
            vec![(0, 1), (1, 2), (0, 3), (3, 4)],
        )
        .unwrap()
    }

    /// Renumbers nodes so that old node `i` becomes `perm[i]`.
    pub(crate) fn relabel(g: &VascularGraph, perm: &[usize]) -> VascularGraph {
        let nodes = g
            .nodes()
            .iter()
            .map(|v| ArteryNode {
                id: perm[v.id],
                ..v.clone()
            })
            .collect();
        let edges = g.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        VascularGraph::new(g.id(), g.view(), nodes, edges).unwrap()
    }

    #[test]
    fn minimal_graph() {
        let g = VascularGraph::from_json_str(
            r#"{"id":"one","view":{"first":"AP","second":"CRA"},
                "nodes":[{"id":0,"features":[0.5],"label":null,"centerline":null,"diameters":null}],
                "edges":[]}"#,
        )
        .unwrap();
        assert_eq!(g.n(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn five_node_fixture() {
        let g = lca_fixture();
        assert_eq!((g.n(), g.edges().len()), (5, 4));
        let back = VascularGraph::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn validation_errors_name_the_invariant() {
        let g = lca_fixture();
        let mut nodes = g.nodes().to_vec();
        let err = VascularGraph::new("x", VIEW, nodes.clone(), vec![(0, 1), (1, 2), (0, 3), (3, 3)])
            .unwrap_err();
        assert!(err.to_string().contains("self-loop"), "{err}");

        let err = VascularGraph::new("x", VIEW, nodes.clone(), vec![(0, 1), (1, 2), (0, 3), (2, 0)])
            .unwrap_err();
        assert!(err.to_string().contains("not connected"), "{err}");

        let err = VascularGraph::new("x", VIEW, nodes.clone(), vec![(0, 1), (1, 0), (0, 3), (3, 4)])
            .unwrap_err();
        assert!(err.to_string().contains("duplicate edge"), "{err}");

        let err = VascularGraph::new("x", VIEW, nodes.clone(), vec![(0, 1), (1, 2), (0, 3)])
            .unwrap_err();
        assert!(err.to_string().contains("needs 4 edges"), "{err}");

        nodes[2].features.push(1.0);
        let err = VascularGraph::new("x", VIEW, nodes, g.edges().to_vec()).unwrap_err();
        assert!(err.to_string().contains("features"), "{err}");

        let err = VascularGraph::from_json_str("{\"id\": 3}").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn label_invariants() {
        assert!(ArteryLabel::new(CoarseLabel::LMA, Some(1)).is_err());
        assert!(ArteryLabel::new(CoarseLabel::LAD, Some(0)).is_err());
        let bad = lca_fixture()
            .to_json_string()
            .replace(r#""coarse":"LMA","sub":null"#, r#""coarse":"LMA","sub":2"#);
        assert!(VascularGraph::from_json_str(&bad).is_err());
    }

    #[test]
    fn regroup_drops_sub_index() {
        use CoarseLabel::*;
        assert_eq!(regroup(ArteryLabel { coarse: LAD, sub: Some(3) }), LAD);
        assert_eq!(regroup(ArteryLabel::coarse(LMA)), LMA);
        assert_eq!(regroup(ArteryLabel { coarse: OM, sub: Some(2) }), OM);
    }

    #[test]
    fn ground_truth_identity_and_swap() {
        let g = lca_fixture();
        assert!(ground_truth_permutation(&g, &g).unwrap().is_identity());
        let swapped = relabel(&g, &[1, 0, 2, 3, 4]);
        assert_eq!(
            ground_truth_permutation(&g, &swapped).unwrap().assignment(),
            &[1, 0, 2, 3, 4]
        );
    }

    #[test]
    fn ground_truth_matches_brute_force_label_comparison() {
        let g = lca_fixture();
        let a = relabel(&g, &[3, 0, 4, 1, 2]);
        let b = relabel(&g, &[2, 4, 1, 0, 3]);
        let p = ground_truth_permutation(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let same = a.node(i).label == b.node(j).label;
                assert_eq!(p.apply(i) == j, same);
            }
        }
    }

    #[test]
    fn ground_truth_rejects_duplicates_and_mismatches() {
        let g = lca_fixture();
        let mut nodes = g.nodes().to_vec();
        nodes[2].label = nodes[1].label;
        let dup = VascularGraph::new("dup", VIEW, nodes.clone(), g.edges().to_vec()).unwrap();
        assert!(ground_truth_permutation(&g, &dup).is_err());
        nodes[2].label = Some(ArteryLabel { coarse: CoarseLabel::D, sub: Some(1) });
        let other = VascularGraph::new("other", VIEW, nodes, g.edges().to_vec()).unwrap();
        assert!(ground_truth_permutation(&g, &other).is_err());
        assert!(ground_truth_permutation(&g, &g.without_labels()).is_err());
    }

    #[test]
    fn graph_set_requires_shared_view_and_size() {
        let g = lca_fixture();
        assert!(GraphSet::new(vec![g.clone()]).is_err());
        let mut other = g.clone();
        other.view = ViewAngle::new(PrimaryAngle::AP, SecondaryAngle::CRA);
        assert!(GraphSet::new(vec![g.clone(), other]).is_err());
        assert_eq!(GraphSet::new(vec![g.clone(), g]).unwrap().m(), 2);
    }

    fn shuffled(n: usize) -> impl Strategy<Value = Vec<usize>> {
        Just((0..n).collect::<Vec<_>>()).prop_shuffle()
    }

    proptest! {
        #[test]
        fn ground_truth_composes(p in shuffled(5), q in shuffled(5), r in shuffled(5)) {
            let g = lca_fixture();
            let (a, b, c) = (relabel(&g, &p), relabel(&g, &q), relabel(&g, &r));
            let ab = ground_truth_permutation(&a, &b).unwrap();
            let bc = ground_truth_permutation(&b, &c).unwrap();
            prop_assert_eq!(ab.then(&bc), ground_truth_permutation(&a, &c).unwrap());
            prop_assert_eq!(a.bfs_order().len(), 5);
        }

        #[test]
        fn json_round_trip_is_bit_exact(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 10)) {
            let g = lca_fixture();
            let nodes = g.nodes().iter().map(|v| ArteryNode {
                features: values[2 * v.id..2 * v.id + 2].to_vec(),
                ..v.clone()
            }).collect();
            let g = VascularGraph::new("rt", VIEW, nodes, g.edges().to_vec()).unwrap();
            let back = VascularGraph::from_json_str(&g.to_json_string()).unwrap();
            for (a, b) in g.nodes().iter().zip(back.nodes()) {
                for (x, y) in a.features.iter().zip(&b.features) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
