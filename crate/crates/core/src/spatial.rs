//! Exact nearest-neighbour queries over 3D point sets.

use nalgebra::Vector3;

/// Squared Euclidean distance. Every distance in the crate goes through this
/// function so indexed and exhaustive queries agree bit for bit.
#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    squared_distance(a, b).sqrt()
}

pub fn to_array(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Static balanced k-d tree stored implicitly: the node of the index range
/// `[lo, hi)` is the point at its midpoint, split on `axes[mid]`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    axes: Vec<u8>,
    original: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    /// Index into the original point list.
    pub index: usize,
    pub distance: f64,
}

impl KdTree {
    /// Builds the tree. Returns `None` for an empty point set.
    pub fn build(points: &[[f64; 3]]) -> Option<KdTree> {
        if points.is_empty() {
            return None;
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_range(points, &mut order, &mut axes, 0);
        Some(KdTree {
            points: order.iter().map(|&i| points[i]).collect(),
            axes,
            original: order,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest stored point.
    pub fn nearest(&self, query: &[f64; 3]) -> Nearest {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(query, 0, self.points.len(), &mut best, None);
        Nearest {
            index: self.original[best.0],
            distance: best.1.sqrt(),
        }
    }

    pub fn nearest_distance(&self, query: &[f64; 3]) -> f64 {
        self.nearest(query).distance
    }

    /// Largest distance from any stored point to its nearest other point.
    pub fn max_spacing(&self) -> f64 {
        (0..self.points.len())
            .filter_map(|i| {
                let mut best = (usize::MAX, f64::INFINITY);
                self.search(&self.points[i], 0, self.points.len(), &mut best, Some(i));
                (best.0 != usize::MAX).then(|| best.1.sqrt())
            })
            .fold(0.0, f64::max)
    }

    fn search(
        &self,
        q: &[f64; 3],
        lo: usize,
        hi: usize,
        best: &mut (usize, f64),
        skip: Option<usize>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        if skip != Some(mid) {
            let d = squared_distance(q, p);
            if d < best.1 {
                *best = (mid, d);
            }
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best, skip);
        // Any point beyond the plane is at least |diff| away in floating point
        // too, because subtraction and the sum of squares are monotone.
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best, skip);
        }
    }
}

fn build_range(points: &[[f64; 3]], order: &mut [usize], axes: &mut [u8], depth: usize) {
    if order.is_empty() {
        return;
    }
    // Split along the axis of largest extent; falls back to depth cycling
    // for degenerate ranges.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let mut axis = depth % 3;
    let mut extent = hi[axis] - lo[axis];
    for (a, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
        if h - l > extent {
            axis = a;
            extent = h - l;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build_range(points, left, left_axes, depth + 1);
    build_range(points, &mut rest[1..], &mut rest_axes[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[[f64; 3]], q: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        for p in points {
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            let dz = q[2] - p[2];
            best = best.min(dx * dx + dy * dy + dz * dz);
        }
        best.sqrt()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1)])
            .collect()
    }

    #[test]
    fn empty_set_has_no_tree() {
        assert!(KdTree::build(&[]).is_none());
    }

    #[test]
    fn matches_linear_scan_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points = random_points(&mut rng, 2000);
        let tree = KdTree::build(&points).unwrap();
        for _ in 0..1000 {
            let q = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5)];
            assert_eq!(tree.nearest_distance(&q), brute_force(&points, &q));
        }
    }

    #[test]
    fn duplicates_and_self_queries() {
        let points = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let tree = KdTree::build(&points).unwrap();
        assert_eq!(tree.nearest_distance(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(tree.max_spacing(), 1.0);
    }

    #[test]
    fn max_spacing_on_a_lattice() {
        let points: Vec<[f64; 3]> = (0..10)
            .flat_map(|i| (0..10).map(move |j| [i as f64 * 0.5, j as f64 * 0.5, 0.0]))
            .collect();
        let tree = KdTree::build(&points).unwrap();
        assert_eq!(tree.max_spacing(), 0.5);
    }
}
