//! Connectivity helpers over undirected edge lists.

use std::collections::VecDeque;

use petgraph::graph::UnGraph;

use crate::error::{Error, Result};

pub use petgraph::unionfind::UnionFind;

/// Sizes of the connected components, largest first.
pub fn component_sizes(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut uf = UnionFind::new(n);
    for (i, j) in pairs {
        uf.union(i, j);
    }
    let mut counts = vec![0usize; n];
    for v in 0..n {
        counts[uf.find_mut(v)] += 1;
    }
    let mut sizes: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

pub fn require_connected(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
    let sizes = component_sizes(n, pairs);
    if sizes.len() > 1 {
        Err(Error::Disconnected { sizes })
    } else {
        Ok(())
    }
}

/// Indices of the edges whose removal disconnects the graph, ascending.
pub fn bridges(n: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut g = UnGraph::<(), usize, usize>::with_capacity(n, pairs.len());
    for _ in 0..n {
        g.add_node(());
    }
    for (k, &(i, j)) in pairs.iter().enumerate() {
        g.add_edge(i.into(), j.into(), k);
    }
    let mut out: Vec<usize> = petgraph::algo::bridges(&g).map(|e| *e.weight()).collect();
    out.sort_unstable();
    out
}

/// Breadth-first spanning tree from `root`. Returns `(parent, edge index)`
/// for every non-root vertex in visiting order.
pub fn bfs_tree(n: usize, pairs: &[(usize, usize)], root: usize) -> Vec<(usize, usize, usize)> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        adj[i].push((j, k));
        adj[j].push((i, k));
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n.saturating_sub(1));
    let mut queue = VecDeque::new();
    visited[root] = true;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        for &(w, k) in &adj[v] {
            if !visited[w] {
                visited[w] = true;
                order.push((v, w, k));
                queue.push_back(w);
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_of_forest() {
        assert_eq!(component_sizes(5, [(0, 1), (3, 4)]), vec![2, 2, 1]);
        assert!(require_connected(3, [(0, 1), (1, 2)]).is_ok());
    }

    #[test]
    fn bridges_of_triangle_with_tail() {
        let pairs = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)];
        assert_eq!(bridges(6, &pairs), vec![3, 4]);
        assert!(bridges(3, &pairs[..3]).is_empty());
    }

    #[test]
    fn bfs_tree_spans() {
        let pairs = [(0, 1), (1, 2), (0, 2), (2, 3)];
        let tree = bfs_tree(4, &pairs, 0);
        assert_eq!(tree.len(), 3);
        assert_eq!(tree[0], (0, 1, 0));
        assert_eq!(tree[1], (0, 2, 2));
        assert_eq!(tree[2], (2, 3, 3));
    }
}
