//! Node tree, its validation, and the summing matrix mapping bottom-level
//! series onto every node.
//!
//! Nodes are stored internal-first in level-major order (root, then level 2
//! left to right, ...) followed by the leaves in level-major order. For a
//! tree whose leaves all sit on the deepest level this is plain level-major
//! order; for ragged trees it keeps the leaf rows of `S` contiguous at the
//! bottom so they form an identity block.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: String,
    /// 1-based depth; the root is level 1.
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl NodeRecord {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchySpec {
    nodes: Vec<NodeRecord>,
    levels: usize,
    n_bottom: usize,
    index: HashMap<String, usize>,
}

/// One parent together with its direct children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtree {
    pub parent: usize,
    pub parent_level: usize,
    pub children: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HierarchyDoc {
    nodes: Vec<NodeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    parent: Option<String>,
}

impl HierarchySpec {
    /// Parses the JSON definition `{"nodes": [{"id": .., "parent": ..}, ...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: HierarchyDoc = serde_json::from_str(text)?;
        Self::from_edges(doc.nodes.into_iter().map(|n| (n.id, n.parent)))
    }

    /// Builds a hierarchy from `(id, parent id)` pairs in declaration order.
    pub fn from_edges<I, S>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Option<S>)>,
        S: Into<String>,
    {
        let decl: Vec<(String, Option<String>)> =
            edges.into_iter().map(|(id, p)| (id.into(), p.map(Into::into))).collect();
        if decl.is_empty() {
            return Err(Error::Hierarchy("no nodes given".into()));
        }

        let mut pos: HashMap<&str, usize> = HashMap::with_capacity(decl.len());
        for (k, (id, _)) in decl.iter().enumerate() {
            if pos.insert(id.as_str(), k).is_some() {
                return Err(Error::Hierarchy(format!("duplicate node id '{id}'")));
            }
        }

        let mut roots = Vec::new();
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); decl.len()];
        for (k, (id, parent)) in decl.iter().enumerate() {
            match parent {
                None => roots.push(k),
                Some(p) => {
                    let &pk = pos.get(p.as_str()).ok_or_else(|| {
                        Error::Hierarchy(format!("node '{id}' references unknown parent '{p}'"))
                    })?;
                    if pk == k {
                        return Err(Error::Hierarchy(format!("cycle detected at node '{id}'")));
                    }
                    kids[pk].push(k);
                }
            }
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => {
                return Err(Error::Hierarchy(format!(
                    "cycle detected at node '{}' (no root)",
                    decl[0].0
                )))
            }
            many => {
                let names: Vec<&str> = many.iter().map(|&k| decl[k].0.as_str()).collect();
                return Err(Error::Hierarchy(format!("multiple roots: {}", names.join(", "))));
            }
        };

        // breadth-first from the root; anything unreached sits on a cycle
        let mut order = Vec::with_capacity(decl.len());
        let mut depth = vec![0usize; decl.len()];
        let mut queue = VecDeque::from([root]);
        depth[root] = 1;
        while let Some(k) = queue.pop_front() {
            order.push(k);
            for &c in &kids[k] {
                depth[c] = depth[k] + 1;
                queue.push_back(c);
            }
        }
        if order.len() != decl.len() {
            let mut seen = vec![false; decl.len()];
            for &k in &order {
                seen[k] = true;
            }
            let culprit = (0..decl.len()).find(|&k| !seen[k]).expect("unreached node");
            return Err(Error::Hierarchy(format!("cycle detected at node '{}'", decl[culprit].0)));
        }

        let (internal, leaves): (Vec<usize>, Vec<usize>) =
            order.into_iter().partition(|&k| !kids[k].is_empty());
        let n_bottom = leaves.len();
        let final_order: Vec<usize> = internal.into_iter().chain(leaves).collect();
        let mut new_index = vec![0usize; decl.len()];
        for (new, &old) in final_order.iter().enumerate() {
            new_index[old] = new;
        }

        let mut nodes: Vec<NodeRecord> = final_order
            .iter()
            .map(|&old| NodeRecord {
                id: decl[old].0.clone(),
                level: depth[old],
                parent: decl[old].1.as_ref().map(|p| new_index[pos[p.as_str()]]),
                children: kids[old].iter().map(|&c| new_index[c]).collect(),
            })
            .collect();
        nodes.shrink_to_fit();
        let levels = nodes.iter().map(|n| n.level).max().unwrap_or(1);
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        Ok(Self { nodes, levels, n_bottom, index })
    }

    pub fn to_json(&self) -> String {
        let doc = HierarchyDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc { id: n.id.clone(), parent: n.parent.map(|p| self.nodes[p].id.clone()) })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeRecord {
        &self.nodes[i]
    }

    /// Number of levels `K`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Total node count `m`.
    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    /// Bottom-level (leaf) count `m_K`.
    pub fn m_bottom(&self) -> usize {
        self.n_bottom
    }

    /// Row index of the first leaf; leaves occupy `bottom_offset()..m()`.
    pub fn bottom_offset(&self) -> usize {
        self.m() - self.n_bottom
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.id.as_str())
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn summing_matrix<T: Real>(&self) -> SummingMatrix<T> {
        SummingMatrix::build(self)
    }

    /// One entry per internal node, in node order.
    pub fn subtrees(&self) -> Vec<Subtree> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.is_leaf())
            .map(|(i, n)| Subtree { parent: i, parent_level: n.level, children: n.children.clone() })
            .collect()
    }
}

pub fn parse_hierarchy(text: &str) -> Result<HierarchySpec> {
    HierarchySpec::from_json(text)
}

pub fn build_summing_matrix<T: Real>(h: &HierarchySpec) -> SummingMatrix<T> {
    SummingMatrix::build(h)
}

pub fn enumerate_subtrees(h: &HierarchySpec) -> Vec<Subtree> {
    h.subtrees()
}

/// The 0/1 aggregation matrix `S` (m × m_K).
#[derive(Debug, Clone, PartialEq)]
pub struct SummingMatrix<T> {
    matrix: Matrix<T>,
}

impl<T: Real> SummingMatrix<T> {
    pub fn build(h: &HierarchySpec) -> Self {
        let offset = h.bottom_offset();
        let mut matrix = Matrix::zeros(h.m(), h.m_bottom());
        for col in 0..h.m_bottom() {
            let mut node = Some(offset + col);
            while let Some(i) = node {
                matrix[(i, col)] = T::one();
                node = h.node(i).parent;
            }
        }
        Self { matrix }
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn m_bottom(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    /// `S · bottom`.
    pub fn aggregate(&self, bottom: &[T]) -> Result<Vec<T>> {
        self.matrix.matvec(bottom)
    }
}
