//! Ordered areal graphs and the graph-derived objects the precision models need.
//!
//! The region ordering is the declaration order of the input and is frozen
//! thereafter; every downstream object (directed neighbor sets, DAGAR
//! coefficients) is defined relative to that ordering.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An ordered region set with a symmetric neighbor relation.
#[derive(Debug, Clone)]
pub struct ArealGraph {
    labels: Vec<String>,
    /// Unordered edges stored as (min, max), 0-based.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor list per region.
    neighbors: Vec<Vec<usize>>,
}

impl ArealGraph {
    /// Builds a graph from labels and 0-based edge pairs, validating the
    /// no-self-loop / no-duplicate invariants.
    pub fn new(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(Error::validation("empty graph: no regions declared"));
        }
        let mut seen = HashSet::new();
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= k || b >= k {
                return Err(Error::validation(format!(
                    "edge ({a}, {b}) references a region outside [0, {k})"
                )));
            }
            if a == b {
                return Err(Error::validation(format!(
                    "self-loop on region '{}'",
                    labels[a]
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::validation(format!(
                    "duplicate edge ({}, {})",
                    labels[e.0], labels[e.1]
                )));
            }
            canon.push(e);
        }
        let mut neighbors = vec![Vec::new(); k];
        for &(a, b) in &canon {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(ArealGraph {
            labels,
            edges: canon,
            neighbors,
        })
    }

    /// Parses the adjacency file format: a `regions:` header line followed by
    /// one `<labelA>,<labelB>` edge per line. `#` starts a comment.
    pub fn from_adjacency_str(text: &str) -> Result<Self> {
        let mut labels: Option<Vec<String>> = None;
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if labels.is_none() {
                let rest = line.strip_prefix("regions:").ok_or(Error::Parse {
                    line: lineno + 1,
                    msg: "expected `regions: <label1>,<label2>,...` header".into(),
                })?;
                let names: Vec<String> =
                    rest.split(',').map(|s| s.trim().to_string()).collect();
                if names.iter().any(|n| n.is_empty()) {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "empty region label".into(),
                    });
                }
                for (i, name) in names.iter().enumerate() {
                    if index.insert(name.clone(), i).is_some() {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            msg: format!("duplicate region label '{name}'"),
                        });
                    }
                }
                labels = Some(names);
                continue;
            }
            let mut parts = line.split(',');
            let (a, b) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => (a.trim(), b.trim()),
                _ => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: format!("expected `<labelA>,<labelB>`, got '{line}'"),
                    })
                }
            };
            let ia = *index.get(a).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("unknown region label '{a}'"),
            })?;
            let ib = *index.get(b).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("unknown region label '{b}'"),
            })?;
            edges.push((ia, ib));
        }
        let labels = labels.ok_or(Error::Parse {
            line: 0,
            msg: "missing `regions:` header".into(),
        })?;
        ArealGraph::new(labels, &edges)
    }

    pub fn from_adjacency_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_adjacency_str(&text)
    }

    /// Rook-adjacency lattice with row-major ordering.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation("grid dimensions must be positive"));
        }
        let labels = (0..rows * cols).map(|i| format!("g{i}")).collect();
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        ArealGraph::new(labels, &edges)
    }

    /// Returns a copy with the given 0-based regions removed; edges incident
    /// to them are dropped and the remaining regions keep their relative order.
    pub fn without_regions(&self, drop: &[usize]) -> Result<Self> {
        let dropset: HashSet<usize> = drop.iter().copied().collect();
        let mut remap = vec![usize::MAX; self.k()];
        let mut labels = Vec::new();
        for (i, label) in self.labels.iter().enumerate() {
            if !dropset.contains(&i) {
                remap[i] = labels.len();
                labels.push(label.clone());
            }
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|(a, b)| !dropset.contains(a) && !dropset.contains(b))
            .map(|&(a, b)| (remap[a], remap[b]))
            .collect();
        ArealGraph::new(labels, &edges)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted undirected neighbors of region `j`.
    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    pub fn is_connected(&self) -> bool {
        let k = self.k();
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(j) = stack.pop() {
            for &n in &self.neighbors[j] {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == k
    }

    /// Dense binary adjacency matrix M.
    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut m = DMatrix::zeros(k, k);
        for &(a, b) in &self.edges {
            m[(a, b)] = 1.0;
            m[(b, a)] = 1.0;
        }
        m
    }

    /// y = M x using the neighbor lists.
    pub fn adjacency_matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.k());
        debug_assert_eq!(out.len(), self.k());
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.neighbors[j].iter().map(|&n| x[n]).sum();
        }
    }
}

/// For each region `j`, the earlier-ordered neighbors `N(j) = {j' < j : j' ~ j}`.
#[derive(Debug, Clone)]
pub struct DirectedNeighborSets {
    sets: Vec<Vec<usize>>,
}

impl DirectedNeighborSets {
    pub fn from_graph(g: &ArealGraph) -> Self {
        let sets = (0..g.k())
            .map(|j| {
                g.neighbors(j)
                    .iter()
                    .copied()
                    .filter(|&n| n < j)
                    .collect()
            })
            .collect();
        DirectedNeighborSets { sets }
    }

    pub fn k(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, j: usize) -> &[usize] {
        &self.sets[j]
    }

    /// n_{<j}
    pub fn n_before(&self, j: usize) -> usize {
        self.sets[j].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_from_file() {
        let g = ArealGraph::from_adjacency_str("regions: A,B,C\nA,B\nB,C\n").unwrap();
        assert_eq!(g.k(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn self_loop_rejected() {
        let err = ArealGraph::from_adjacency_str("regions: A,B\nA,A\n").unwrap_err();
        assert!(err.to_string().contains("self-loop"));
    }

    #[test]
    fn duplicate_edge_rejected() {
        let err = ArealGraph::from_adjacency_str("regions: A,B\nA,B\nB,A\n").unwrap_err();
        assert!(err.to_string().contains("duplicate edge"));
    }

    #[test]
    fn unknown_label_rejected() {
        let err = ArealGraph::from_adjacency_str("regions: A,B\nA,C\n").unwrap_err();
        assert!(err.to_string().contains("unknown region label"));
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(ArealGraph::new(vec![], &[]).is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let g =
            ArealGraph::from_adjacency_str("# map\nregions: A,B # two regions\n\nA,B\n").unwrap();
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn directed_sets_path() {
        let g = ArealGraph::grid(1, 3).unwrap();
        let ns = DirectedNeighborSets::from_graph(&g);
        assert_eq!(ns.set(0), &[] as &[usize]);
        assert_eq!(ns.set(1), &[0]);
        assert_eq!(ns.set(2), &[1]);
    }

    #[test]
    fn directed_sets_four_cycle() {
        let labels = (0..4).map(|i| i.to_string()).collect();
        let g = ArealGraph::new(labels, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let ns = DirectedNeighborSets::from_graph(&g);
        assert_eq!(ns.set(3), &[0, 2]);
        assert_eq!(ns.n_before(3), 2);
    }

    #[test]
    fn single_vertex() {
        let g = ArealGraph::new(vec!["A".into()], &[]).unwrap();
        let ns = DirectedNeighborSets::from_graph(&g);
        assert_eq!(ns.set(0), &[] as &[usize]);
    }

    #[test]
    fn grid_counts() {
        let g = ArealGraph::grid(2, 2).unwrap();
        assert_eq!(g.k(), 4);
        assert_eq!(g.n_edges(), 4);
        let g = ArealGraph::grid(7, 7).unwrap();
        assert_eq!(g.k(), 49);
        assert_eq!(g.n_edges(), 84);
        let g = ArealGraph::grid(1, 3).unwrap();
        assert_eq!(g.n_edges(), 2);
    }

    #[test]
    fn zero_dimension_grid() {
        assert!(ArealGraph::grid(0, 3).is_err());
    }

    #[test]
    fn edge_count_matches_directed_sets() {
        let g = ArealGraph::grid(4, 5).unwrap();
        let ns = DirectedNeighborSets::from_graph(&g);
        let total: usize = (0..g.k()).map(|j| ns.n_before(j)).sum();
        assert_eq!(total, g.n_edges());
    }

    #[test]
    fn adjacency_rebuild_from_directed_sets() {
        let g = ArealGraph::grid(3, 4).unwrap();
        let ns = DirectedNeighborSets::from_graph(&g);
        let k = g.k();
        let mut m = DMatrix::zeros(k, k);
        for j in 0..k {
            for &jp in ns.set(j) {
                m[(j, jp)] = 1.0;
                m[(jp, j)] = 1.0;
            }
        }
        assert_eq!(m, g.adjacency_dense());
    }

    #[test]
    fn adjacency_matvec_matches_dense() {
        let g = ArealGraph::grid(3, 3).unwrap();
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let mut out = vec![0.0; 9];
        g.adjacency_matvec(&x, &mut out);
        let dense = g.adjacency_dense() * nalgebra::DVector::from_column_slice(&x);
        for j in 0..9 {
            assert!((out[j] - dense[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn without_regions_drops_corner() {
        let g = ArealGraph::grid(7, 7).unwrap().without_regions(&[48]).unwrap();
        assert_eq!(g.k(), 48);
        assert_eq!(g.n_edges(), 82);
        assert!(g.is_connected());
    }
}
