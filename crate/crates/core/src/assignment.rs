//! Rectangular linear assignment with infeasible entries.
//!
//! Shortest-augmenting-path Hungarian method (O(n² m)). Infeasible entries
//! (`None`, or non-finite costs) are never matched; among matchings that use
//! only feasible entries the solver returns one with the largest number of
//! pairs and, among those, the smallest total cost.

/// Cost matrix with a feasibility mask, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Option<f64>>,
}

impl CostMatrix {
    /// All entries infeasible.
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![None; rows * cols] }
    }

    /// Fully feasible matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged cost matrix");
            for (j, &c) in row.iter().enumerate() {
                m.set(i, j, Some(c));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.data[i * self.cols + j]
    }

    /// Sets an entry; non-finite costs are stored as infeasible.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, cost: Option<f64>) {
        self.data[i * self.cols + j] = cost.filter(|c| c.is_finite());
    }

    pub fn is_feasible(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_some()
    }
}

/// One-to-one matching as sorted `(row, col)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == row).map(|(_, c)| *c)
    }
}

/// Minimum-cost matching over the feasible entries of `cost`.
///
/// Deterministic: rows are inserted in index order and ties between
/// candidate columns go to the lowest index.
pub fn solve_assignment(cost: &CostMatrix) -> Matching {
    let (n, m) = (cost.rows, cost.cols);
    let mut min_c = f64::INFINITY;
    let mut max_c = f64::NEG_INFINITY;
    for c in cost.data.iter().flatten() {
        min_c = min_c.min(*c);
        max_c = max_c.max(*c);
    }
    if !min_c.is_finite() {
        return Matching::default();
    }

    // Shift to non-negative costs and price infeasible entries above any
    // matching that avoids them, so cardinality is maximised first.
    let span = max_c - min_c;
    let big = (span + 1.0) * (n.min(m) as f64 + 1.0);
    let transposed = n > m;
    let (rn, cm) = if transposed { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| -> f64 {
        let v = if transposed { cost.get(j, i) } else { cost.get(i, j) };
        v.map_or(big, |c| c - min_c)
    };

    let assign = hungarian(rn, cm, at);

    let mut pairs = Vec::with_capacity(rn);
    let mut total = 0.0;
    for (i, &j) in assign.iter().enumerate() {
        let (r, c) = if transposed { (j, i) } else { (i, j) };
        if let Some(v) = cost.get(r, c) {
            pairs.push((r, c));
            total += v;
        }
    }
    pairs.sort_unstable();
    Matching { pairs, total_cost: total }
}

/// Dense Hungarian for `n <= m`; returns the column assigned to each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based potentials/links with column 0 as the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}
