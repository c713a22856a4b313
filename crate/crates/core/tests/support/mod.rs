//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use engage_core::data::{CompositeDataset, CompositeRow, DesignTag};
use engage_core::scm::ScmSpec;
use engage_core::CausalGraph;
use rand::Rng;

/// Adjacency matrix of a DAG on `n` nodes: `adj[p][c]` for `p -> c`.
pub type Adj = Vec<Vec<bool>>;

pub fn node_name(i: usize) -> String {
    format!("v{i}")
}

/// Graph whose edges are the set bits of `mask` over the upper-triangular
/// pairs `(i, j), i < j`, in row-major order.
pub fn upper_triangular(n: usize, mask: u64) -> Adj {
    let mut adj = vec![vec![false; n]; n];
    let mut bit = 0;
    for i in 0..n {
        for j in i + 1..n {
            adj[i][j] = mask >> bit & 1 == 1;
            bit += 1;
        }
    }
    adj
}

pub fn to_graph(adj: &Adj) -> CausalGraph {
    let n = adj.len();
    let edges = (0..n)
        .flat_map(|p| (0..n).filter(move |&c| adj[p][c]).map(move |c| (node_name(p), node_name(c))));
    CausalGraph::new((0..n).map(|i| (node_name(i), false)), edges).expect("valid DAG")
}

fn descendants(adj: &Adj, v: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![v];
    seen[v] = true;
    while let Some(u) = stack.pop() {
        for c in 0..adj.len() {
            if adj[u][c] && !seen[c] {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    seen
}

/// d-separation by enumerating every simple path of the skeleton between
/// `a` and `b` and applying the blocking rules to each interior node.
pub fn dsep_by_paths(adj: &Adj, a: &[usize], b: &[usize], z: &[usize]) -> bool {
    let n = adj.len();
    let in_z: Vec<bool> = (0..n).map(|v| z.contains(&v)).collect();
    let desc: Vec<Vec<bool>> = (0..n).map(|v| descendants(adj, v)).collect();
    let collider_open = |m: usize| (0..n).any(|d| desc[m][d] && in_z[d]);
    let linked = |p: usize, q: usize| adj[p][q] || adj[q][p];

    fn walk(
        path: &mut Vec<usize>,
        target: &[usize],
        adj: &Adj,
        open_at: &dyn Fn(usize, usize, usize) -> bool,
        linked: &dyn Fn(usize, usize) -> bool,
    ) -> bool {
        let last = *path.last().unwrap();
        if path.len() > 1 && target.contains(&last) {
            return true;
        }
        for next in 0..adj.len() {
            if path.contains(&next) || !linked(last, next) {
                continue;
            }
            if path.len() >= 2 && !open_at(path[path.len() - 2], last, next) {
                continue;
            }
            path.push(next);
            if walk(path, target, adj, open_at, linked) {
                return true;
            }
            path.pop();
        }
        false
    }

    let open_at = |p: usize, m: usize, q: usize| {
        let collider = adj[p][m] && adj[q][m];
        if collider {
            in_z[m] || collider_open(m)
        } else {
            !in_z[m]
        }
    };
    !a.iter().any(|&s| walk(&mut vec![s], b, adj, &open_at, &linked))
}

/// Seeded random dataset with `k` covariate cells, every `(x, a)` trial
/// cell nonempty and at least one non-participant row per cell.
pub fn random_dataset<R: Rng>(r: &mut R) -> CompositeDataset {
    let k = r.gen_range(1..=4);
    let mut rows = Vec::new();
    let mut id = 0u64;
    let mut next = || {
        id += 1;
        id
    };
    for x in 0..k {
        let xv = vec![x as f64];
        for a in [0u8, 1] {
            let p: f64 = r.gen();
            for _ in 0..r.gen_range(1..=6) {
                rows.push(CompositeRow::trial(next(), xv.clone(), a, u8::from(r.gen::<f64>() < p)));
            }
        }
        for _ in 0..r.gen_range(1..=6) {
            rows.push(CompositeRow::target(next(), xv.clone()));
        }
    }
    CompositeDataset::new(rows, DesignTag::Nested).expect("valid dataset")
}

/// `Σ_x f(x) (Δ1(x) - Δ0(x))` summed straight from the mean table.
pub fn interaction_offset(spec: &ScmSpec) -> f64 {
    let mut total = 0.0;
    for (x, point) in spec.x_support.iter().enumerate() {
        for u in 0..2 {
            let pu = if u == 1 { spec.u_given_x[x] } else { 1.0 - spec.u_given_x[x] };
            let m = &spec.mean_table[x];
            let d1 = m[1][1][u] - m[1][0][u];
            let d0 = m[0][1][u] - m[0][0][u];
            total += point.prob * pu * (d1 - d0);
        }
    }
    total
}

/// The six-row dataset D6: trial contrasts 1 at x=0 and 0 at x=1, one
/// non-participant per cell.
pub fn d6() -> CompositeDataset {
    CompositeDataset::new(
        vec![
            CompositeRow::trial(1, vec![0.0], 1, 1),
            CompositeRow::trial(2, vec![0.0], 0, 0),
            CompositeRow::trial(3, vec![1.0], 1, 1),
            CompositeRow::trial(4, vec![1.0], 0, 1),
            CompositeRow::target(5, vec![0.0]),
            CompositeRow::target(6, vec![1.0]),
        ],
        DesignTag::Nested,
    )
    .unwrap()
}

/// Relative-scale hand example: q0 = 0.2 / 0.4 on control-flagged rows,
/// trial risk ratio 2 in both cells, X uniform over all rows.
pub fn relative_scale_example() -> CompositeDataset {
    let mut rows = Vec::new();
    let mut id = 0u64;
    let mut push = |r: CompositeRow| {
        id += 1;
        rows.push(CompositeRow { id, ..r });
    };
    for (x, g1, g0, q) in [(0.0, 4, 2, 1), (1.0, 2, 1, 2)] {
        for k in 0..5 {
            push(CompositeRow::trial(0, vec![x], 1, u8::from(k < g1)));
            push(CompositeRow::trial(0, vec![x], 0, u8::from(k < g0)));
            push(CompositeRow::control(0, vec![x], u8::from(k < q)));
        }
    }
    CompositeDataset::new(rows, DesignTag::Nested).unwrap()
}
