//! Static kd-tree with exact nearest-neighbour queries.
//!
//! Ties on distance resolve to the smallest point index, so results agree
//! with a brute-force scan over the same array.

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // Implicit balanced tree over a permutation of point indices.
    order: Vec<u32>,
    split_axis: Vec<u8>,
}

const LEAF: usize = 8;

#[derive(Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: u32,
}

impl Cand {
    #[inline]
    fn better(&self, other: &Cand) -> bool {
        self.d2 < other.d2 || (self.d2 == other.d2 && self.idx < other.idx)
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut split_axis = vec![0u8; n];
        build(points, &mut order, &mut split_axis);
        Self { points: points.to_vec(), order, split_axis }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Index and squared distance of the nearest point to `q`.
    pub fn nearest(&self, q: &[f64; 3]) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest() on an empty tree");
        let mut best = [Cand { d2: f64::INFINITY, idx: u32::MAX }];
        self.search(q, 0, self.order.len(), &mut best);
        (best[0].idx as usize, best[0].d2)
    }

    /// The `k` nearest points sorted by (distance, index).
    pub fn knn(&self, q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut best = vec![Cand { d2: f64::INFINITY, idx: u32::MAX }; k];
        self.search(q, 0, self.order.len(), &mut best);
        best.into_iter().map(|c| (c.idx as usize, c.d2)).collect()
    }

    // `best` is kept sorted, worst candidate last.
    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, best: &mut [Cand]) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let c = Cand { d2: dist2(q, &self.points[i as usize]), idx: i };
                insert(best, c);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot_idx = self.order[mid];
        let pivot = &self.points[pivot_idx as usize];
        let axis = self.split_axis[mid] as usize;
        insert(best, Cand { d2: dist2(q, pivot), idx: pivot_idx });
        let diff = q[axis] - pivot[axis];
        let (first, second) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, first.0, first.1, best);
        // `<=` keeps equal-distance candidates with smaller indices reachable.
        if diff * diff <= best[best.len() - 1].d2 {
            self.search(q, second.0, second.1, best);
        }
    }
}

fn insert(best: &mut [Cand], c: Cand) {
    let last = best.len() - 1;
    if !c.better(&best[last]) {
        return;
    }
    let mut pos = last;
    while pos > 0 && c.better(&best[pos - 1]) {
        best[pos] = best[pos - 1];
        pos -= 1;
    }
    best[pos] = c;
}

fn build(points: &[[f64; 3]], order: &mut [u32], axes: &mut [u8]) {
    let n = order.len();
    if n <= LEAF {
        return;
    }
    // Split on the axis of largest spread.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build(points, left, left_axes);
    build(points, &mut rest[1..], &mut rest_axes[1..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(pts: &[[f64; 3]], q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> =
            pts.iter().enumerate().map(|(i, p)| (i, dist2(q, p))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Integer grid points produce many exact ties.
        let pts: Vec<[f64; 3]> = (0..600)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(0..12) as f64))
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..300 {
            let q = [0; 3].map(|_: i32| rng.random_range(-1..13) as f64);
            assert_eq!(tree.knn(&q, 9), brute_knn(&pts, &q, 9));
            let (i, d) = tree.nearest(&q);
            assert_eq!((i, d), brute_knn(&pts, &q, 1)[0]);
        }
    }
}
