//! HDBSCAN over a precomputed distance matrix.
//!
//! Pipeline: core distances, mutual reachability, Prim's minimum spanning
//! tree, a single-linkage hierarchy (edges of equal weight merge in one
//! multi-way step), the condensed cluster tree, and excess-of-mass selection.
//!
//! The root is a selectable cluster, so a single dense majority can be found.
//! A root has no finite birth level, so when it is selected a point belongs to
//! it only if it leaves the root at a distance no larger than
//! `root_persistence_ratio` times the distance at which the root dissolves.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::DistanceMatrix;

/// Zero distances sit at density `ZERO_DISTANCE_LAMBDA_FACTOR / m`, where `m`
/// is the smallest positive mutual-reachability distance.
const ZERO_DISTANCE_LAMBDA_FACTOR: f64 = 1e6;

pub const DEFAULT_MIN_SAMPLES: usize = 5;
pub const DEFAULT_ROOT_PERSISTENCE_RATIO: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub root_persistence_ratio: f64,
}

impl HdbscanParams {
    pub fn new(min_cluster_size: usize, min_samples: usize) -> Self {
        Self { min_cluster_size, min_samples, root_persistence_ratio: DEFAULT_ROOT_PERSISTENCE_RATIO }
    }
}

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClusterResult {
    /// Cluster id per point, or [`NOISE`].
    pub labels: Vec<i64>,
    pub cluster_sizes: BTreeMap<usize, usize>,
}

impl ClusterResult {
    fn all_noise(n: usize) -> Self {
        Self { labels: vec![NOISE; n], cluster_sizes: BTreeMap::new() }
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == cluster as i64).map(|(i, _)| i).collect()
    }
}

/// Distance from each point to its `min_samples`-th nearest other point
/// (`min_samples = 0` gives zero, `1` the nearest-neighbour distance).
/// Values past `n - 1` clamp to the farthest point.
pub fn core_distances(d: &DistanceMatrix, min_samples: usize) -> Vec<f64> {
    let n = d.n();
    (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d.get(i, j)).collect();
            if others.is_empty() || min_samples == 0 {
                return 0.0;
            }
            others.sort_by(f64::total_cmp);
            others[min_samples.min(others.len()) - 1]
        })
        .collect()
}

/// `max(core_a, core_b, d(a, b))` off the diagonal, zero on it.
pub fn mutual_reachability(d: &DistanceMatrix, min_samples: usize) -> DistanceMatrix {
    let core = core_distances(d, min_samples);
    DistanceMatrix::from_fn(d.n(), |i, j| d.get(i, j).max(core[i]).max(core[j]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    a: usize,
    b: usize,
    weight: f64,
}

/// Prim's algorithm on a dense matrix; ties resolve to the lowest vertex index.
fn minimum_spanning_tree(mr: &DistanceMatrix) -> Vec<Edge> {
    let n = mr.n();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for v in 0..n {
            if !in_tree[v] {
                let w = mr.get(current, v);
                if w < best[v] {
                    best[v] = w;
                    parent[v] = current;
                }
            }
        }
        let mut next = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (next == usize::MAX || best[v] < best[next]) {
                next = v;
            }
        }
        in_tree[next] = true;
        let (a, b) = (parent[next].min(next), parent[next].max(next));
        edges.push(Edge { a, b, weight: best[next] });
        current = next;
    }
    edges.sort_by(|x, y| x.weight.total_cmp(&y.weight).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Node of the single-linkage hierarchy. Leaves are `0..n`.
#[derive(Debug, Clone)]
struct Merge {
    children: Vec<usize>,
    distance: f64,
    size: usize,
}

struct Hierarchy {
    n: usize,
    merges: Vec<Merge>,
}

impl Hierarchy {
    fn size(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.merges[node - self.n].size
        }
    }

    fn root(&self) -> usize {
        if self.merges.is_empty() {
            0
        } else {
            self.n + self.merges.len() - 1
        }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                stack.extend(self.merges[x - self.n].children.iter().copied());
            }
        }
    }
}

fn single_linkage(n: usize, edges: &[Edge]) -> Hierarchy {
    let mut uf = UnionFind::new(n);
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size_of: Vec<usize> = vec![1; n];
    let mut merges: Vec<Merge> = Vec::new();
    let mut i = 0;
    while i < edges.len() {
        let w = edges[i].weight;
        let mut j = i;
        while j < edges.len() && edges[j].weight == w {
            j += 1;
        }
        // Snapshot the components touched by this weight level, then merge.
        let mut touched: Vec<usize> = Vec::new();
        for e in &edges[i..j] {
            for v in [e.a, e.b] {
                let r = uf.find(v);
                if !touched.contains(&r) {
                    touched.push(r);
                }
            }
        }
        let before: Vec<(usize, usize, usize)> = touched.iter().map(|&r| (r, node_of[r], size_of[r])).collect();
        for e in &edges[i..j] {
            uf.union(e.a, e.b);
        }
        let mut groups: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for &(rep, node, size) in &before {
            groups.entry(uf.find(rep)).or_default().push((node, size));
        }
        for (root, parts) in groups {
            if parts.len() < 2 {
                continue;
            }
            let mut children: Vec<usize> = parts.iter().map(|p| p.0).collect();
            children.sort_unstable();
            let size = parts.iter().map(|p| p.1).sum();
            merges.push(Merge { children, distance: w, size });
            node_of[root] = n + merges.len() - 1;
            size_of[root] = size;
        }
        i = j;
    }
    Hierarchy { n, merges }
}

#[derive(Debug, Clone)]
struct CondensedCluster {
    parent: Option<usize>,
    birth: f64,
    /// `(point, lambda)` for points leaving this cluster directly.
    fallen: Vec<(usize, f64)>,
    /// `(cluster id, lambda, size)` for child clusters.
    children: Vec<(usize, f64, usize)>,
}

impl CondensedCluster {
    fn stability(&self) -> f64 {
        let mut s = 0.0;
        for &(_, lambda) in &self.fallen {
            s += lambda - self.birth;
        }
        for &(_, lambda, size) in &self.children {
            s += (lambda - self.birth) * size as f64;
        }
        s
    }
}

fn condense(h: &Hierarchy, min_cluster_size: usize, lambda_of: impl Fn(f64) -> f64) -> Vec<CondensedCluster> {
    let mut clusters = vec![CondensedCluster { parent: None, birth: 0.0, fallen: Vec::new(), children: Vec::new() }];
    // (hierarchy node, owning condensed cluster)
    let mut stack = vec![(h.root(), 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        if node < h.n {
            // Only reachable when a single point is itself a cluster.
            let birth = clusters[cluster].birth;
            clusters[cluster].fallen.push((node, birth));
            continue;
        }
        let merge = &h.merges[node - h.n];
        let lambda = lambda_of(merge.distance);
        let big: Vec<usize> = merge.children.iter().copied().filter(|&c| h.size(c) >= min_cluster_size).collect();
        for &child in &merge.children {
            if h.size(child) >= min_cluster_size {
                continue;
            }
            let mut pts = Vec::new();
            h.leaves(child, &mut pts);
            pts.sort_unstable();
            clusters[cluster].fallen.extend(pts.into_iter().map(|p| (p, lambda)));
        }
        match big.len() {
            0 => {}
            1 => stack.push((big[0], cluster)),
            _ => {
                // Children pushed in reverse so ids follow child order.
                let mut created = Vec::new();
                for &child in &big {
                    let id = clusters.len();
                    clusters.push(CondensedCluster {
                        parent: Some(cluster),
                        birth: lambda,
                        fallen: Vec::new(),
                        children: Vec::new(),
                    });
                    clusters[cluster].children.push((id, lambda, h.size(child)));
                    created.push((child, id));
                }
                for item in created.into_iter().rev() {
                    stack.push(item);
                }
            }
        }
    }
    clusters
}

/// Excess-of-mass selection. Ties keep the parent.
fn select_clusters(clusters: &[CondensedCluster]) -> Vec<bool> {
    let m = clusters.len();
    let mut selected = vec![false; m];
    let mut carried = vec![0.0; m];
    for c in (0..m).rev() {
        let own = clusters[c].stability();
        if clusters[c].children.is_empty() {
            selected[c] = true;
            carried[c] = own;
            continue;
        }
        let sub: f64 = clusters[c].children.iter().map(|&(id, _, _)| carried[id]).sum();
        if sub > own {
            carried[c] = sub;
        } else {
            selected[c] = true;
            carried[c] = own;
            let mut stack: Vec<usize> = clusters[c].children.iter().map(|x| x.0).collect();
            while let Some(d) = stack.pop() {
                selected[d] = false;
                stack.extend(clusters[d].children.iter().map(|x| x.0));
            }
        }
    }
    selected
}

fn subtree_points(clusters: &[CondensedCluster], c: usize, out: &mut Vec<(usize, f64)>) {
    out.extend(clusters[c].fallen.iter().copied());
    for &(child, lambda, _) in &clusters[c].children {
        let mut pts = Vec::new();
        subtree_points(clusters, child, &mut pts);
        out.extend(pts.into_iter().map(|(p, _)| (p, lambda)));
    }
}

/// HDBSCAN with default root persistence ratio.
pub fn hdbscan(d: &DistanceMatrix, min_cluster_size: usize, min_samples: usize) -> ClusterResult {
    hdbscan_with(d, &HdbscanParams::new(min_cluster_size, min_samples))
}

pub fn hdbscan_with(d: &DistanceMatrix, params: &HdbscanParams) -> ClusterResult {
    let n = d.n();
    let mcs = params.min_cluster_size.max(2);
    if n == 0 {
        return ClusterResult::all_noise(0);
    }
    if n < mcs {
        return ClusterResult::all_noise(n);
    }
    let mr = mutual_reachability(d, params.min_samples);
    let edges = minimum_spanning_tree(&mr);
    let min_positive =
        (0..n).flat_map(|i| mr.row(i).iter().copied()).filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min);
    let lambda_cap = if min_positive.is_finite() { ZERO_DISTANCE_LAMBDA_FACTOR / min_positive } else { 1.0 };
    let lambda_of = |dist: f64| if dist > 0.0 { 1.0 / dist } else { lambda_cap };

    let hierarchy = single_linkage(n, &edges);
    let clusters = condense(&hierarchy, mcs, lambda_of);
    let selected = select_clusters(&clusters);

    let mut labels = vec![NOISE; n];
    let mut sizes = BTreeMap::new();
    let mut next_id = 0usize;
    for (c, _) in selected.iter().enumerate().filter(|(_, &s)| s) {
        let mut pts = Vec::new();
        subtree_points(&clusters, c, &mut pts);
        let members: Vec<usize> = if clusters[c].parent.is_none() {
            let death = pts.iter().map(|p| p.1).fold(0.0, f64::max);
            let threshold = death / params.root_persistence_ratio;
            pts.iter().filter(|p| p.1 >= threshold).map(|p| p.0).collect()
        } else {
            pts.iter().map(|p| p.0).collect()
        };
        if members.is_empty() {
            continue;
        }
        for &p in &members {
            labels[p] = next_id as i64;
        }
        sizes.insert(next_id, members.len());
        next_id += 1;
    }
    ClusterResult { labels, cluster_sizes: sizes }
}

/// Members of the biggest cluster (ties: lower id); empty if everything is noise.
pub fn largest_cluster(result: &ClusterResult) -> Vec<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (&id, &size) in &result.cluster_sizes {
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    best.map_or_else(Vec::new, |(id, _)| result.members(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line3() -> DistanceMatrix {
        DistanceMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn core_distance_counts_other_points() {
        assert_eq!(core_distances(&line3(), 0), vec![0.0, 0.0, 0.0]);
        assert_eq!(core_distances(&line3(), 1), vec![1.0, 1.0, 1.0]);
        assert_eq!(core_distances(&line3(), 2), vec![2.0, 1.0, 2.0]);
        assert_eq!(core_distances(&line3(), 9), vec![2.0, 1.0, 2.0]);
    }

    #[test]
    fn mutual_reachability_cases() {
        let mr = mutual_reachability(&line3(), 2);
        assert_eq!(mr.get(0, 2), 2.0);
        assert_eq!(mr.get(0, 1), 2.0);
        assert_eq!(mutual_reachability(&line3(), 0), line3());
        assert_eq!(mutual_reachability(&line3(), 1), line3());
        let mr3 = mutual_reachability(&line3(), 3);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(mr3.get(i, j), mr3.get(j, i));
            }
        }
        assert_eq!(mr3.get(0, 1), 2.0);
    }

    /// Points on a line: `a` blob members at 0.0.., `b` at offset.
    fn blobs(sizes: &[usize], gap: f64) -> DistanceMatrix {
        let mut pos = Vec::new();
        for (b, &s) in sizes.iter().enumerate() {
            for i in 0..s {
                pos.push(b as f64 * gap + i as f64 * 0.1 / s as f64);
            }
        }
        DistanceMatrix::from_fn(pos.len(), |i, j| (pos[i] - pos[j]).abs())
    }

    #[test]
    fn two_blobs() {
        let r = hdbscan(&blobs(&[8, 12], 1.2), 5, 5);
        assert_eq!(r.n_clusters(), 2);
        let mut sizes: Vec<_> = r.cluster_sizes.values().copied().collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![8, 12]);
        assert_eq!(largest_cluster(&r), (8..20).collect::<Vec<_>>());
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let r = hdbscan(&DistanceMatrix::zeros(6), 3, 2);
        assert_eq!(r.labels, vec![0; 6]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut pos: Vec<f64> = (0..10).map(|i| (i % 2) as f64 * 0.01).collect();
        pos.push(10.0);
        let d = DistanceMatrix::from_fn(pos.len(), |i, j| (pos[i] - pos[j]).abs());
        let r = hdbscan(&d, 5, 5);
        assert_eq!(r.labels[10], NOISE);
        assert!(r.labels[..10].iter().all(|&l| l == 0));
    }

    #[test]
    fn too_few_points_is_all_noise() {
        let r = hdbscan(&line3(), 5, 2);
        assert_eq!(r.labels, vec![NOISE; 3]);
        assert!(largest_cluster(&r).is_empty());
    }

    #[test]
    fn largest_cluster_tie_prefers_lower_id() {
        let mut sizes = BTreeMap::new();
        sizes.insert(0, 2);
        sizes.insert(1, 2);
        let r = ClusterResult { labels: vec![1, 1, 0, 0], cluster_sizes: sizes };
        assert_eq!(largest_cluster(&r), vec![2, 3]);
    }

    #[test]
    fn multiway_tie_merge() {
        // Three equidistant pairs merge at the same level.
        let pos: [f64; 6] = [0.0, 0.01, 5.0, 5.01, 10.0, 10.01];
        let d = DistanceMatrix::from_fn(6, |i, j| {
            let x = (pos[i] - pos[j]).abs();
            if x > 1.0 {
                5.0
            } else {
                x
            }
        });
        let h = single_linkage(6, &minimum_spanning_tree(&d));
        let root = &h.merges[h.root() - 6];
        assert_eq!(root.children.len(), 3);
        assert_eq!(root.size, 6);
    }
}
