//! Node-disjoint edge selection for one limb type.
//!
//! Rows are parent candidates, columns child candidates. Only edges with
//! positive weight can be selected.

use std::collections::BTreeMap;

/// Largest side handled by exhaustive search in [`exact_matching`].
pub const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
    /// Segment length, used only to break greedy ties.
    pub length: f64,
}

pub fn matching_weight(edges: &[WeightedEdge], selected: &[usize]) -> f64 {
    selected.iter().map(|&e| edges[e].weight).sum()
}

/// Checks that no two selected edges share a row or a column.
pub fn is_matching(edges: &[WeightedEdge], selected: &[usize]) -> bool {
    let mut rows = std::collections::HashSet::new();
    let mut cols = std::collections::HashSet::new();
    selected
        .iter()
        .all(|&e| rows.insert(edges[e].row) && cols.insert(edges[e].col))
}

/// Accepts edges by descending weight, shorter segment first on ties.
pub fn greedy_matching(edges: &[WeightedEdge]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..edges.len()).filter(|&e| edges[e].weight > 0.0).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&edges[a], &edges[b]);
        eb.weight
            .total_cmp(&ea.weight)
            .then(ea.length.total_cmp(&eb.length))
            .then((ea.row, ea.col).cmp(&(eb.row, eb.col)))
    });
    let mut used_rows = std::collections::HashSet::new();
    let mut used_cols = std::collections::HashSet::new();
    let mut picked = Vec::new();
    for e in order {
        let edge = &edges[e];
        if !used_rows.contains(&edge.row) && !used_cols.contains(&edge.col) {
            used_rows.insert(edge.row);
            used_cols.insert(edge.col);
            picked.push(e);
        }
    }
    picked.sort_unstable();
    picked
}

/// Dense relabeling of the rows and columns touched by positive edges.
struct Dense {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// `best[r][c]` = index of the heaviest edge between dense row `r` and column `c`.
    best: Vec<Vec<Option<usize>>>,
}

impl Dense {
    fn new(edges: &[WeightedEdge]) -> Self {
        let mut row_ids = BTreeMap::new();
        let mut col_ids = BTreeMap::new();
        for e in edges.iter().filter(|e| e.weight > 0.0) {
            row_ids.entry(e.row).or_insert(());
            col_ids.entry(e.col).or_insert(());
        }
        let rows: Vec<usize> = row_ids.into_keys().collect();
        let cols: Vec<usize> = col_ids.into_keys().collect();
        let mut best = vec![vec![None; cols.len()]; rows.len()];
        for (k, e) in edges.iter().enumerate().filter(|(_, e)| e.weight > 0.0) {
            let r = rows.binary_search(&e.row).unwrap();
            let c = cols.binary_search(&e.col).unwrap();
            let slot: &mut Option<usize> = &mut best[r][c];
            if slot.map_or(true, |s| edges[s].weight < e.weight) {
                *slot = Some(k);
            }
        }
        Self { rows, cols, best }
    }
}

/// Maximum-weight matching.
///
/// Exhaustive search when both sides have at most [`EXHAUSTIVE_LIMIT`] nodes,
/// Kuhn–Munkres otherwise.
pub fn exact_matching(edges: &[WeightedEdge]) -> Vec<usize> {
    let dense = Dense::new(edges);
    if dense.rows.len() <= EXHAUSTIVE_LIMIT && dense.cols.len() <= EXHAUSTIVE_LIMIT {
        exhaustive(edges, &dense)
    } else {
        log::warn!(
            "exact matching on {}x{} candidates exceeds the exhaustive limit; using Kuhn-Munkres",
            dense.rows.len(),
            dense.cols.len()
        );
        kuhn_munkres(edges, &dense)
    }
}

/// Kuhn–Munkres maximum-weight matching regardless of size.
pub fn hungarian_matching(edges: &[WeightedEdge]) -> Vec<usize> {
    kuhn_munkres(edges, &Dense::new(edges))
}

fn exhaustive(edges: &[WeightedEdge], dense: &Dense) -> Vec<usize> {
    let (nr, nc) = (dense.rows.len(), dense.cols.len());
    let states = 1usize << nc;
    // value[r][mask]: best weight using rows r.. with columns in `mask` taken.
    let mut value = vec![vec![0f64; states]; nr + 1];
    let mut choice = vec![vec![None; states]; nr];
    for r in (0..nr).rev() {
        for mask in 0..states {
            let mut best = value[r + 1][mask];
            let mut pick = None;
            for c in 0..nc {
                if mask & (1 << c) != 0 {
                    continue;
                }
                if let Some(e) = dense.best[r][c] {
                    let v = edges[e].weight + value[r + 1][mask | (1 << c)];
                    if v > best {
                        best = v;
                        pick = Some(c);
                    }
                }
            }
            value[r][mask] = best;
            choice[r][mask] = pick;
        }
    }
    let mut picked = Vec::new();
    let mut mask = 0usize;
    for r in 0..nr {
        if let Some(c) = choice[r][mask] {
            picked.push(dense.best[r][c].unwrap());
            mask |= 1 << c;
        }
    }
    picked.sort_unstable();
    picked
}

fn kuhn_munkres(edges: &[WeightedEdge], dense: &Dense) -> Vec<usize> {
    let n = dense.rows.len().max(dense.cols.len());
    if n == 0 {
        return Vec::new();
    }
    let weight = |r: usize, c: usize| -> f64 {
        if r < dense.rows.len() && c < dense.cols.len() {
            dense.best[r][c].map_or(0.0, |e| edges[e].weight)
        } else {
            0.0
        }
    };
    let top = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| weight(r, c))
        .fold(0.0, f64::max);
    let cost = |r: usize, c: usize| top - weight(r, c);

    // Potentials formulation with 1-based sentinel column 0.
    let mut u = vec![0f64; n + 1];
    let mut v = vec![0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let cur = cost(r0 - 1, c - 1) - u[r0] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut picked: Vec<usize> = (1..=n)
        .filter_map(|c| {
            let r = owner[c];
            if r == 0 || r > dense.rows.len() || c > dense.cols.len() {
                return None;
            }
            dense.best[r - 1][c - 1]
        })
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges_from(matrix: &[&[f64]]) -> Vec<WeightedEdge> {
        let mut out = Vec::new();
        for (r, row) in matrix.iter().enumerate() {
            for (c, &w) in row.iter().enumerate() {
                out.push(WeightedEdge {
                    row: r,
                    col: c,
                    weight: w,
                    length: 1.0,
                });
            }
        }
        out
    }

    #[test]
    fn diagonal_preferred() {
        let edges = edges_from(&[&[10.0, 1.0], &[1.0, 10.0]]);
        for picked in [
            greedy_matching(&edges),
            exact_matching(&edges),
            hungarian_matching(&edges),
        ] {
            assert_eq!(picked, vec![0, 3]);
            assert_eq!(matching_weight(&edges, &picked), 20.0);
        }
    }

    #[test]
    fn shared_child_keeps_heavier() {
        let edges = vec![
            WeightedEdge { row: 0, col: 0, weight: 9.0, length: 5.0 },
            WeightedEdge { row: 1, col: 0, weight: 7.0, length: 1.0 },
        ];
        assert_eq!(greedy_matching(&edges), vec![0]);
        assert_eq!(exact_matching(&edges), vec![0]);
    }

    #[test]
    fn greedy_tie_prefers_shorter() {
        let edges = vec![
            WeightedEdge { row: 0, col: 0, weight: 8.0, length: 30.0 },
            WeightedEdge { row: 1, col: 0, weight: 8.0, length: 10.0 },
        ];
        assert_eq!(greedy_matching(&edges), vec![1]);
    }

    #[test]
    fn greedy_can_be_suboptimal() {
        let edges = edges_from(&[&[10.0, 9.0], &[9.0, 0.0]]);
        let g = greedy_matching(&edges);
        let e = exact_matching(&edges);
        assert_eq!(matching_weight(&edges, &g), 10.0);
        assert_eq!(matching_weight(&edges, &e), 18.0);
        assert!(is_matching(&edges, &e));
    }

    #[test]
    fn zero_weights_never_selected() {
        let edges = edges_from(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert!(greedy_matching(&edges).is_empty());
        assert!(exact_matching(&edges).is_empty());
        assert!(hungarian_matching(&edges).is_empty());
    }

    #[test]
    fn large_instances_use_kuhn_munkres() {
        let n = 12;
        let mut edges = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let w = if (r + 5) % n == c { 10.0 } else { ((r * 7 + c * 3) % 5) as f64 };
                edges.push(WeightedEdge { row: r, col: c, weight: w, length: 1.0 });
            }
        }
        let picked = exact_matching(&edges);
        assert!(is_matching(&edges, &picked));
        assert_eq!(matching_weight(&edges, &picked), 10.0 * n as f64);
    }
}
