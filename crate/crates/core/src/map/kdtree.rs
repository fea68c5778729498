//! Static 2D KD-tree with exact radius queries.

/// Balanced tree stored implicitly: the median of each slice is the node,
/// left and right halves are its subtrees.
#[derive(Debug, Clone, Default)]
pub struct KdTree2<T> {
    points: Vec<([f64; 2], T)>,
}

impl<T: Copy + Ord> KdTree2<T> {
    pub fn build(mut points: Vec<([f64; 2], T)>) -> Self {
        // sort by payload first so construction is independent of input order
        points.sort_by(|a, b| a.1.cmp(&b.1));
        build_rec(&mut points, 0);
        KdTree2 { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Payloads of all points with Euclidean distance `<= radius` to `center`.
    pub fn within_radius(&self, center: [f64; 2], radius: f64) -> Vec<T> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        query_rec(&self.points, 0, center, r2, &mut out);
        out
    }

    pub fn items(&self) -> impl Iterator<Item = &([f64; 2], T)> {
        self.points.iter()
    }
}

fn build_rec<T: Copy + Ord>(pts: &mut [([f64; 2], T)], depth: usize) {
    if pts.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| {
        a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1))
    });
    let (left, right) = pts.split_at_mut(mid);
    build_rec(left, depth + 1);
    build_rec(&mut right[1..], depth + 1);
}

#[inline]
pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn query_rec<T: Copy>(pts: &[([f64; 2], T)], depth: usize, c: [f64; 2], r2: f64, out: &mut Vec<T>) {
    if pts.is_empty() {
        return;
    }
    let axis = depth % 2;
    let mid = pts.len() / 2;
    let (p, payload) = pts[mid];
    if dist2(p, c) <= r2 {
        out.push(payload);
    }
    let diff = c[axis] - p[axis];
    let (near, far) = if diff < 0.0 {
        (&pts[..mid], &pts[mid + 1..])
    } else {
        (&pts[mid + 1..], &pts[..mid])
    };
    query_rec(near, depth + 1, c, r2, out);
    // every point on the far side is at least |diff| away along this axis
    if diff * diff <= r2 {
        query_rec(far, depth + 1, c, r2, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_tree_returns_nothing() {
        let t: KdTree2<u32> = KdTree2::build(vec![]);
        assert!(t.within_radius([0.0, 0.0], 10.0).is_empty());
    }

    #[test]
    fn matches_linear_scan_with_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<([f64; 2], u32)> = (0..500)
            .map(|i| {
                // coarse lattice forces coordinate ties
                let x = rng.random_range(-20i32..20) as f64 * 0.5;
                let y = rng.random_range(-20i32..20) as f64 * 0.5;
                ([x, y], i)
            })
            .collect();
        let tree = KdTree2::build(pts.clone());
        for _ in 0..200 {
            let c = [rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)];
            let r = rng.random_range(0.0..6.0);
            let mut got = tree.within_radius(c, r);
            got.sort();
            let mut want: Vec<u32> = pts
                .iter()
                .filter(|(p, _)| dist2(*p, c) <= r * r)
                .map(|(_, i)| *i)
                .collect();
            want.sort();
            assert_eq!(got, want);
        }
    }
}
