//! Random graphs and the boolean adjacency-power reference for K-hop
//! closures.

use std::collections::BTreeSet;

use dhmp::mesh::Edge;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sorted, bi-directed edge list with a self-loop on every node.
pub fn random_graph(seed: u64, max_nodes: usize) -> (usize, Vec<Edge>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes);
    let p = rng.gen_range(0.0..0.25);
    let mut set = BTreeSet::new();
    for i in 0..n {
        set.insert((i, i));
        for j in i + 1..n {
            if rng.gen_bool(p) {
                set.insert((i, j));
                set.insert((j, i));
            }
        }
    }
    (n, set.into_iter().collect())
}

/// Pairs connected by a walk of at most `k` edges: nonzero entries of
/// `(A + I)^k` evaluated in boolean arithmetic.
pub fn adjacency_power_closure(n: usize, edges: &[Edge], k: usize) -> Vec<Edge> {
    let mut a = vec![vec![false; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(i, j) in edges {
        a[i][j] = true;
    }
    let mut power = a.clone();
    for _ in 1..k {
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for m in 0..n {
                if power[i][m] {
                    for j in 0..n {
                        next[i][j] |= a[m][j];
                    }
                }
            }
        }
        power = next;
    }
    let mut out = Vec::new();
    for (i, row) in power.iter().enumerate() {
        for (j, &hit) in row.iter().enumerate() {
            if hit {
                out.push((i, j));
            }
        }
    }
    out
}

/// Checks the structural invariants of an edge list: sorted, unique, every
/// edge has its reverse, and every node has a self-loop.
pub fn structural_violation(n: usize, edges: &[Edge]) -> Option<String> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Some("edges are not strictly sorted".into());
    }
    let set: BTreeSet<Edge> = edges.iter().copied().collect();
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| !set.contains(&(j, i))) {
        return Some(format!("edge ({i}, {j}) has no reverse"));
    }
    if let Some(i) = (0..n).find(|&i| !set.contains(&(i, i))) {
        return Some(format!("node {i} has no self-loop"));
    }
    None
}
