//! One-to-one matching of reported points to ground truth within a radius.
//!
//! The matching is optimal: it maximises the number of pairs and, among
//! maximum matchings, minimises the summed distance. Points only interact
//! through edges of length <= epsilon, so each connected component of that
//! graph is solved separately with a Hungarian assignment.

use serde::{Deserialize, Serialize};

/// Default match radius in level-0 pixels (7.5 µm at 0.25 µm/px).
pub const DEFAULT_EPSILON: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Offset into the report points.
    pub report: usize,
    /// Offset into the ground-truth points.
    pub gt: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchPair>,
}

impl MatchResult {
    /// `tp / (tp + fp)`, 0 with no reports.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 0 with no ground truth.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.dist).sum()
    }
}

pub(crate) fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Matches `reports` to `gt` within `epsilon` (which must be positive).
pub fn match_points(reports: &[(f64, f64)], gt: &[(f64, f64)], epsilon: f64) -> MatchResult {
    assert!(epsilon > 0.0, "match radius must be positive");
    let (nr, ng) = (reports.len(), gt.len());
    // Candidate edges via a uniform bucket grid of cell size epsilon.
    let key = |p: (f64, f64)| ((p.0 / epsilon).floor() as i64, (p.1 / epsilon).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (j, &g) in gt.iter().enumerate() {
        buckets.entry(key(g)).or_default().push(j);
    }
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (i, &r) in reports.iter().enumerate() {
        let (kx, ky) = key(r);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(js) = buckets.get(&(kx + dx, ky + dy)) {
                    for &j in js {
                        let d = ((r.0 - gt[j].0).powi(2) + (r.1 - gt[j].1).powi(2)).sqrt();
                        if d <= epsilon {
                            edges.push((i, j, d));
                        }
                    }
                }
            }
        }
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    // Union-find over reports [0, nr) and gt [nr, nr + ng).
    let mut parent: Vec<usize> = (0..nr + ng).collect();
    for &(i, j, _) in &edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, nr + j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut comps: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = std::collections::BTreeMap::new();
    for &(i, j, _) in &edges {
        let root = find(&mut parent, i);
        let c = comps.entry(root).or_default();
        if !c.0.contains(&i) {
            c.0.push(i);
        }
        if !c.1.contains(&j) {
            c.1.push(j);
        }
    }

    let mut pairs = Vec::new();
    for (_, (mut rs, mut gs)) in comps {
        rs.sort_unstable();
        gs.sort_unstable();
        let n = rs.len().max(gs.len());
        let big = 2.0 * epsilon * n as f64 + 1.0;
        let mut cost = vec![vec![big; n]; n];
        let mut real = vec![vec![None; n]; n];
        for &(i, j, d) in &edges {
            if let (Ok(a), Ok(b)) = (rs.binary_search(&i), gs.binary_search(&j)) {
                cost[a][b] = d;
                real[a][b] = Some(d);
            }
        }
        for (a, b) in hungarian(&cost).into_iter().enumerate() {
            if let Some(d) = real[a][b] {
                pairs.push(MatchPair { report: rs[a], gt: gs[b], dist: d });
            }
        }
    }
    pairs.sort_by_key(|p| (p.report, p.gt));
    let tp = pairs.len();
    MatchResult { tp, fp: nr - tp, fn_: ng - tp, pairs }
}

/// Minimum-cost perfect assignment on a square matrix; returns the column of each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}
