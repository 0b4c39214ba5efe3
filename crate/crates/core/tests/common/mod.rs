#![allow(dead_code)]

use hiercast_core::HierarchySpec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn figure_one() -> HierarchySpec {
    hiercast_core::simlab::reference_hierarchy()
}

/// Random tree with 2..=4 levels and 2..=4 children per internal node.
/// Below level 2 a node stops branching with probability 1/4, so some trees are ragged.
pub fn random_tree<R: Rng>(rng: &mut R) -> HierarchySpec {
    let levels = rng.random_range(2..=4);
    let mut edges = vec![("n0".to_string(), None)];
    let mut frontier = vec!["n0".to_string()];
    let mut next_id = 1;
    for level in 2..=levels {
        let mut new = Vec::new();
        for parent in &frontier {
            if level > 2 && rng.random::<f64>() < 0.25 {
                continue;
            }
            for _ in 0..rng.random_range(2..=4) {
                let id = format!("n{next_id}");
                next_id += 1;
                edges.push((id.clone(), Some(parent.clone())));
                new.push(id);
            }
        }
        if new.is_empty() {
            break;
        }
        frontier = new;
    }
    HierarchySpec::from_edges(edges.iter().map(|(c, p)| (c.as_str(), p.as_deref()))).unwrap()
}

pub fn uniform_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

pub fn to_dense(m: &hiercast_core::Matrix<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.nrows(), m.ncols(), m.as_slice())
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
