//! Exact nearest-neighbor index over a point cloud.
//!
//! A plain kd-tree with median splits. Queries return the point at exactly
//! minimal Euclidean distance; ties are broken by the lowest point index so
//! results are deterministic. The tree is immutable after construction and
//! safe to share across threads.

/// Acceleration structure for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
    root: usize,
}

#[derive(Debug, Clone)]
struct Node {
    /// Index into the original point list.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

const NO_NODE: usize = usize::MAX;

impl SpatialIndex {
    /// Builds an index over `points`. Panics on an empty slice; callers
    /// validate cloud non-emptiness before construction.
    pub fn build(points: &[[f64; 3]]) -> Self {
        assert!(!points.is_empty(), "SpatialIndex over empty point set");
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_recursive(points, &mut order, 0, &mut nodes);
        SpatialIndex {
            points: points.to_vec(),
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns `(index, distance)` of the nearest point to `query`.
    /// Exact: equal distances resolve to the lowest index.
    pub fn nearest(&self, query: &[f64; 3]) -> (usize, f64) {
        let mut best = Best {
            idx: usize::MAX,
            d2: f64::INFINITY,
        };
        self.search(self.root, query, &mut best);
        (best.idx, best.d2.sqrt())
    }

    /// Indices of the `k` nearest points to `query`, closest first; ties by
    /// lowest index. `k` is clamped to the number of indexed points.
    pub fn nearest_k(&self, query: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search_k(self.root, query, k, &mut heap);
        heap.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        heap.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn search(&self, node_idx: usize, query: &[f64; 3], best: &mut Best) {
        if node_idx == NO_NODE {
            return;
        }
        let node = &self.nodes[node_idx];
        let p = &self.points[node.point];
        let d2 = dist2(p, query);
        if d2 < best.d2 || (d2 == best.d2 && node.point < best.idx) {
            best.idx = node.point;
            best.d2 = d2;
        }
        let delta = query[node.axis] - p[node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, query, best);
        }
        // The far side may still hold an equal-distance point with a lower
        // index, so descend on <= rather than strict <.
        if let Some(f) = far {
            if delta * delta <= best.d2 {
                self.search(f, query, best);
            }
        }
    }

    fn search_k(&self, node_idx: usize, query: &[f64; 3], k: usize, heap: &mut Vec<(f64, usize)>) {
        if node_idx == NO_NODE {
            return;
        }
        let node = &self.nodes[node_idx];
        let p = &self.points[node.point];
        let d2 = dist2(p, query);
        push_candidate(heap, k, d2, node.point);
        let delta = query[node.axis] - p[node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search_k(n, query, k, heap);
        }
        if let Some(f) = far {
            let bound = current_bound(heap, k);
            if delta * delta <= bound {
                self.search_k(f, query, k, heap);
            }
        }
    }
}

struct Best {
    idx: usize,
    d2: f64,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn push_candidate(heap: &mut Vec<(f64, usize)>, k: usize, d2: f64, idx: usize) {
    heap.push((d2, idx));
    heap.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    heap.truncate(k);
}

fn current_bound(heap: &[(f64, usize)], k: usize) -> f64 {
    if heap.len() < k {
        f64::INFINITY
    } else {
        heap.last().map(|&(d2, _)| d2).unwrap_or(f64::INFINITY)
    }
}

fn build_recursive(
    points: &[[f64; 3]],
    order: &mut [usize],
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    if order.is_empty() {
        return NO_NODE;
    }
    let axis = depth % 3;
    // Sort by (coordinate, index) for a deterministic tree shape.
    order.sort_by(|&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    let point = order[mid];
    let slot = nodes.len();
    nodes.push(Node {
        point,
        axis,
        left: None,
        right: None,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_recursive(points, lo, depth + 1, nodes);
    let right = build_recursive(points, hi, depth + 1, nodes);
    nodes[slot].left = (left != NO_NODE).then_some(left);
    nodes[slot].right = (right != NO_NODE).then_some(right);
    slot
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn brute_nearest(points: &[[f64; 3]], q: &[f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = dist2(p, q);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..200);
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            let index = SpatialIndex::build(&pts);
            for _ in 0..20 {
                let q = [
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                ];
                let (bi, bd) = brute_nearest(&pts, &q);
                let (ki, kd) = index.nearest(&q);
                assert_eq!(bi, ki);
                assert_eq!(bd.to_bits(), kd.to_bits());
            }
        }
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        // Two points equidistant from the query.
        let pts = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 5.0, 0.0]];
        let index = SpatialIndex::build(&pts);
        let (i, d) = index.nearest(&[0.0, 0.0, 0.0]);
        assert_eq!(i, 0);
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nearest_k_is_sorted_and_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let index = SpatialIndex::build(&pts);
        let q = [0.1, -0.2, 0.3];
        let got = index.nearest_k(&q, 8);
        assert_eq!(got.len(), 8);
        let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (dist2(p, &q), i)).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (slot, &(i, d)) in got.iter().enumerate() {
            assert_eq!(all[slot].1, i);
            assert!((all[slot].0.sqrt() - d).abs() < 1e-15);
        }
    }
}
