//! The known covariance shape `Q` of base-forecast deviations.
//!
//! `Q` is either diagonal, holding each node's holdout MSE, or block
//! diagonal, where every kept parent/child subtree additionally gets
//! parent-child covariances equal to the child's share of its sibling
//! group's MSE times the parent's MSE. Subtrees are kept on alternating
//! levels so kept blocks never share a node.
//!
//! A kept block with parent MSE `g_p` and children MSEs `g_c` summing to `G`
//! is positive definite exactly when `G > g_p` (its Schur complement is
//! `g_p - g_p² / G`). When that fails the off-diagonals are halved until
//! every block factorizes.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use crate::linalg::{Cholesky, Matrix};
use crate::panel::AccuracyVector;
use crate::scalar::Real;

pub const MAX_SHRINK_HALVINGS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QStructure {
    Diagonal,
    BlockDiagonal,
}

/// Which parent levels keep their subtree covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(level: usize) -> Self {
        if level % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    /// Keeps the subtrees whose parents sit just above the leaves.
    pub fn deepest(h: &HierarchySpec) -> Self {
        Self::of(h.levels().saturating_sub(1).max(1))
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(Parity::Even),
            "odd" => Ok(Parity::Odd),
            other => Err(Error::Parse(format!("parity must be 'even' or 'odd', got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Block<T> {
    nodes: Vec<usize>,
    chol: Cholesky<T>,
}

#[derive(Debug, Clone)]
pub struct CovarianceQ<T> {
    structure: QStructure,
    diag: Vec<T>,
    offdiag: BTreeMap<(usize, usize), T>,
    zeroed_levels: BTreeSet<usize>,
    shrink: T,
    blocks: Vec<Block<T>>,
}

impl<T: Real> CovarianceQ<T> {
    pub fn structure(&self) -> QStructure {
        self.structure
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    /// Parent-child covariances keyed by `(parent, child)`.
    pub fn offdiag(&self) -> &BTreeMap<(usize, usize), T> {
        &self.offdiag
    }

    /// Parent levels whose subtrees were zeroed.
    pub fn zeroed_levels(&self) -> &BTreeSet<usize> {
        &self.zeroed_levels
    }

    /// Factor applied to the off-diagonals to restore positive definiteness
    /// (1 when no repair was needed).
    pub fn shrink_factor(&self) -> T {
        self.shrink
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i == j {
            return self.diag[i];
        }
        self.offdiag
            .get(&(i, j))
            .or_else(|| self.offdiag.get(&(j, i)))
            .copied()
            .unwrap_or_else(T::zero)
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut q = Matrix::from_diagonal(&self.diag);
        for (&(p, c), &v) in &self.offdiag {
            q[(p, c)] = v;
            q[(c, p)] = v;
        }
        q
    }

    /// `Q · v`.
    pub fn multiply(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.dim() {
            return Err(Error::dim(self.dim(), v.len()));
        }
        let mut out: Vec<T> = self.diag.iter().zip(v).map(|(&d, &x)| d * x).collect();
        for (&(p, c), &q) in &self.offdiag {
            out[p] += q * v[c];
            out[c] += q * v[p];
        }
        Ok(out)
    }

    /// `Q⁻¹ · b`, exploiting the diagonal or block structure.
    pub fn solve_vec(&self, b: &[T]) -> Result<Vec<T>> {
        if b.len() != self.dim() {
            return Err(Error::dim(self.dim(), b.len()));
        }
        let mut x: Vec<T> = b.iter().zip(&self.diag).map(|(&v, &d)| v / d).collect();
        for block in &self.blocks {
            let mut local: Vec<T> = block.nodes.iter().map(|&i| b[i]).collect();
            block.chol.solve_in_place(&mut local);
            for (&i, v) in block.nodes.iter().zip(local) {
                x[i] = v;
            }
        }
        Ok(x)
    }

    fn factorize(&mut self) -> Result<()> {
        let mut blocks = Vec::new();
        let mut parents: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(p, c) in self.offdiag.keys() {
            parents.entry(p).or_default().push(c);
        }
        for (p, children) in parents {
            let nodes: Vec<usize> = std::iter::once(p).chain(children).collect();
            let mut local = Matrix::zeros(nodes.len(), nodes.len());
            for (a, &i) in nodes.iter().enumerate() {
                for (b, &j) in nodes.iter().enumerate() {
                    local[(a, b)] = self.get(i, j);
                }
            }
            blocks.push(Block { chol: Cholesky::new(&local)?, nodes });
        }
        self.blocks = blocks;
        Ok(())
    }
}

/// Diagonal `Q` from floored holdout MSEs.
pub fn build_q_diagonal<T: Real>(gamma: &AccuracyVector<T>) -> CovarianceQ<T> {
    CovarianceQ {
        structure: QStructure::Diagonal,
        diag: gamma.floored(),
        offdiag: BTreeMap::new(),
        zeroed_levels: BTreeSet::new(),
        shrink: T::one(),
        blocks: Vec::new(),
    }
}

/// Block-diagonal `Q`: subtrees whose parent level has `keep` parity get
/// parent-child covariances, all others are zeroed.
pub fn build_q_block<T: Real>(gamma: &AccuracyVector<T>, h: &HierarchySpec, keep: Parity) -> Result<CovarianceQ<T>> {
    if gamma.len() != h.m() {
        return Err(Error::dim(h.m(), gamma.len()));
    }
    if h.levels() < 2 {
        return Err(Error::Invalid("block-diagonal Q needs at least two levels".into()));
    }
    let diag = gamma.floored();
    let mut offdiag = BTreeMap::new();
    let mut zeroed_levels = BTreeSet::new();
    for sub in h.subtrees() {
        if Parity::of(sub.parent_level) != keep {
            zeroed_levels.insert(sub.parent_level);
            continue;
        }
        let total: T = sub.children.iter().map(|&c| diag[c]).sum();
        for &c in &sub.children {
            offdiag.insert((sub.parent, c), diag[c] / total * diag[sub.parent]);
        }
    }

    let original = offdiag.clone();
    let mut q = CovarianceQ {
        structure: QStructure::BlockDiagonal,
        diag,
        offdiag,
        zeroed_levels,
        shrink: T::one(),
        blocks: Vec::new(),
    };
    let half = T::lit(0.5);
    for step in 0..=MAX_SHRINK_HALVINGS {
        match q.factorize() {
            Ok(()) => {
                if step > 0 {
                    log::warn!(
                        "block Q was not positive definite; off-diagonals shrunk by {} ({step} halvings)",
                        q.shrink
                    );
                }
                return Ok(q);
            }
            Err(_) if step < MAX_SHRINK_HALVINGS => {
                q.shrink *= half;
                for (key, v) in q.offdiag.iter_mut() {
                    *v = original[key] * q.shrink;
                }
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// `Q⁻¹ · B`.
pub fn solve_q<T: Real>(q: &CovarianceQ<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if b.nrows() != q.dim() {
        return Err(Error::dim(q.dim(), b.nrows()));
    }
    let mut out = Matrix::zeros(b.nrows(), b.ncols());
    for j in 0..b.ncols() {
        for (i, v) in q.solve_vec(&b.column(j))?.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}
