//! HDBSCAN by level sets.
//!
//! Instead of a spanning tree and a merge hierarchy, every density level is
//! visited from the top: at each distinct mutual-reachability value `w` the
//! live points of a cluster are split into connected components of the graph
//! with edges strictly shorter than `w`. Components smaller than the minimum
//! cluster size fall out; two or more large ones become child clusters.
//! Selection is excess of mass with the root selectable; when the root wins,
//! only the points still present when it dissolves are members.

/// Density assigned to zero distances, as a multiple of `1 / smallest positive distance`.
pub const ZERO_DISTANCE_FACTOR: f64 = 1e6;

/// Distance to the `k`-th nearest other point (`k = 0` gives zero, `k`
/// beyond the available points clamps to the farthest).
pub fn core_distances(d: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = d.len();
    (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i][j]).collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if k == 0 || others.is_empty() {
                0.0
            } else {
                others[k.min(others.len()) - 1]
            }
        })
        .collect()
}

pub fn mutual_reachability(d: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let core = core_distances(d, k);
    let n = d.len();
    (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { d[i][j].max(core[i]).max(core[j]) }).collect()).collect()
}

struct Node {
    birth: f64,
    /// `(point, lambda)` for every point that leaves this node directly,
    /// including points handed to children (at the split level).
    exits: Vec<(usize, f64)>,
    children: Vec<Node>,
    size: usize,
}

impl Node {
    fn stability(&self) -> f64 {
        let fallen: f64 = self
            .exits
            .iter()
            .filter(|(p, _)| !self.children.iter().any(|c| c.contains(*p)))
            .map(|&(_, l)| l - self.birth)
            .sum();
        let kids: f64 = self.children.iter().map(|c| (c.birth - self.birth) * c.size as f64).sum();
        fallen + kids
    }

    fn contains(&self, p: usize) -> bool {
        self.exits.iter().any(|&(q, _)| q == p)
    }

    fn points(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.exits.iter().map(|e| e.0).collect();
        v.sort_unstable();
        v
    }
}

fn components(live: &[usize], connected: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; live.len()];
    let mut out = Vec::new();
    for start in 0..live.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![live[start]];
        let mut frontier = vec![start];
        while let Some(a) = frontier.pop() {
            for b in 0..live.len() {
                if !seen[b] && connected(live[a], live[b]) {
                    seen[b] = true;
                    comp.push(live[b]);
                    frontier.push(b);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn grow(
    points: Vec<usize>,
    birth: f64,
    mr: &[Vec<f64>],
    levels: &[f64],
    mcs: usize,
    lambda: &dyn Fn(f64) -> f64,
) -> Node {
    let mut node = Node { birth, exits: Vec::new(), children: Vec::new(), size: points.len() };
    let mut live = points;
    for &w in levels {
        let comps = components(&live, |a, b| mr[a][b] < w);
        if comps.len() == 1 {
            continue;
        }
        let l = lambda(w);
        let (big, small): (Vec<_>, Vec<_>) = comps.into_iter().partition(|c| c.len() >= mcs);
        for c in &small {
            node.exits.extend(c.iter().map(|&p| (p, l)));
        }
        match big.len() {
            0 => return node,
            1 => live = big.into_iter().next().unwrap(),
            _ => {
                for c in big {
                    node.exits.extend(c.iter().map(|&p| (p, l)));
                    node.children.push(grow(c, l, mr, levels, mcs, lambda));
                }
                return node;
            }
        }
    }
    unreachable!("below the smallest level every point is isolated")
}

/// `(total stability carried, selected nodes)`.
fn select(node: &Node) -> (f64, Vec<&Node>) {
    let own = node.stability();
    if node.children.is_empty() {
        return (own, vec![node]);
    }
    let mut sub = 0.0;
    let mut picked = Vec::new();
    for c in &node.children {
        let (s, p) = select(c);
        sub += s;
        picked.extend(p);
    }
    if sub > own {
        (sub, picked)
    } else {
        (own, vec![node])
    }
}

fn subtree_points(node: &Node) -> Vec<usize> {
    node.points()
}

/// Clusters as sorted member lists, ordered by their smallest member.
/// Points in no list are noise.
pub fn hdbscan(d: &[Vec<f64>], min_cluster_size: usize, min_samples: usize) -> Vec<Vec<usize>> {
    let n = d.len();
    let mcs = min_cluster_size.max(2);
    if n < mcs {
        return Vec::new();
    }
    let mr = mutual_reachability(d, min_samples);
    let mut levels: Vec<f64> = Vec::new();
    for (i, row) in mr.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j {
                levels.push(v);
            }
        }
    }
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();
    let smallest_positive = levels.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let cap = if smallest_positive.is_finite() { ZERO_DISTANCE_FACTOR / smallest_positive } else { 1.0 };
    let lambda = move |w: f64| if w > 0.0 { 1.0 / w } else { cap };
    // One level below everything so the last split always happens.
    levels.push(f64::NEG_INFINITY);

    let root = grow((0..n).collect(), 0.0, &mr, &levels, mcs, &lambda);
    let (_, selected) = select(&root);
    let mut clusters: Vec<Vec<usize>> = selected
        .into_iter()
        .map(|c| {
            if std::ptr::eq(c, &root) {
                let last = root.exits.iter().map(|e| e.1).fold(0.0, f64::max);
                let mut v: Vec<usize> = root.exits.iter().filter(|e| e.1 >= last).map(|e| e.0).collect();
                v.sort_unstable();
                v
            } else {
                subtree_points(c)
            }
        })
        .filter(|c| !c.is_empty())
        .collect();
    clusters.sort();
    clusters
}
