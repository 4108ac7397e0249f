//! Landmark ⇄ heatmap codec.
//!
//! A variable number of point landmarks is represented as a single
//! foreground channel: each landmark contributes a peak-normalized Gaussian
//! and overlapping contributions combine by maximum, so every peak keeps
//! height 1 no matter how crowded the frame is. Decoding thresholds the
//! channel, splits it into 8-connected regions, and returns one centroid
//! per region, which is how a network output turns back into detections
//! without knowing the landmark count in advance.

/// Image-space location in pixels. `x` grows rightward, `y` downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ordered collection of landmark points for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new() -> Self {
        LandmarkSet { points: Vec::new() }
    }

    pub fn push(&mut self, p: Point) {
        self.points.push(p);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point> {
        self.points.iter()
    }
}

impl From<Vec<Point>> for LandmarkSet {
    fn from(points: Vec<Point>) -> Self {
        LandmarkSet { points }
    }
}

impl FromIterator<Point> for LandmarkSet {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        LandmarkSet {
            points: iter.into_iter().collect(),
        }
    }
}

/// Single-channel float image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Heatmap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Wraps existing row-major data. Panics if the length disagrees with
    /// the dimensions.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "heatmap data length {} does not match {width}x{height}",
            data.len()
        );
        Heatmap {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Renders landmarks as max-combined Gaussians of spread `sigma`,
    /// truncated to zero beyond 4σ from every landmark. A landmark on an
    /// integer pixel produces an exact 1.0 at that pixel.
    pub fn encode(landmarks: &LandmarkSet, width: usize, height: usize, sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive, got {sigma}");
        let mut map = Heatmap::zeros(width, height);
        let radius = 4.0 * sigma;
        let r2 = radius * radius;
        let inv = 1.0 / (2.0 * sigma * sigma);
        for p in landmarks.iter() {
            // Only the clipped bounding box of the truncation disc is touched.
            let x0 = ((p.x - radius).floor().max(0.0)) as usize;
            let y0 = ((p.y - radius).floor().max(0.0)) as usize;
            let x1 = (p.x + radius).ceil().min(width as f64 - 1.0);
            let y1 = (p.y + radius).ceil().min(height as f64 - 1.0);
            if x1 < 0.0 || y1 < 0.0 || x0 >= width || y0 >= height {
                continue;
            }
            let (x1, y1) = (x1 as usize, y1 as usize);
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let dx = px as f64 - p.x;
                    let dy = py as f64 - p.y;
                    let d2 = dx * dx + dy * dy;
                    if d2 > r2 {
                        continue;
                    }
                    let v = (-d2 * inv).exp();
                    let cell = &mut map.data[py * width + px];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
        map
    }

    /// Complement channel: exactly 1 − v per pixel, so foreground and
    /// background always sum to one.
    pub fn background(&self) -> Self {
        Heatmap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Number of pixels at or above `threshold`.
    pub fn foreground_count(&self, threshold: f64) -> usize {
        self.data.iter().filter(|&&v| v >= threshold).count()
    }

    /// Thresholds at `threshold` (inclusive), splits the mask into
    /// 8-connected regions, and returns the unweighted centroid of each.
    /// Regions are ordered by their first pixel in row-major scan order.
    pub fn decode(&self, threshold: f64) -> LandmarkSet {
        let (w, h) = (self.width, self.height);
        let mask: Vec<bool> = self.data.iter().map(|&v| v >= threshold).collect();
        let mut seen = vec![false; mask.len()];
        let mut out = LandmarkSet::new();
        let mut stack = Vec::new();
        for start in 0..mask.len() {
            if !mask[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut sx, mut sy, mut count) = (0.0f64, 0.0f64, 0usize);
            while let Some(idx) = stack.pop() {
                let (x, y) = (idx % w, idx / w);
                sx += x as f64;
                sy += y as f64;
                count += 1;
                let ys = y.saturating_sub(1)..=(y + 1).min(h - 1);
                for ny in ys {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let nidx = ny * w + nx;
                        if mask[nidx] && !seen[nidx] {
                            seen[nidx] = true;
                            stack.push(nidx);
                        }
                    }
                }
            }
            out.push(Point::new(sx / count as f64, sy / count as f64));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_known_values_sigma_one() {
        let set: LandmarkSet = vec![Point::new(10.0, 10.0)].into();
        let map = Heatmap::encode(&set, 32, 32, 1.0);
        assert_eq!(map.get(10, 10), 1.0);
        // One pixel away: e^(-1/2); diagonal: e^(-1).
        assert!((map.get(11, 10) - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert!((map.get(10, 9) - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert!((map.get(11, 11) - 0.367_879_441_171_442_33).abs() < 1e-12);
    }

    #[test]
    fn encode_truncates_beyond_four_sigma() {
        let set: LandmarkSet = vec![Point::new(16.0, 16.0)].into();
        let map = Heatmap::encode(&set, 33, 33, 1.0);
        // Distance 5 > 4σ: exactly zero, not just small.
        assert_eq!(map.get(21, 16), 0.0);
        assert_eq!(map.get(16, 21), 0.0);
        // Distance 4 is still inside the disc.
        assert!(map.get(20, 16) > 0.0);
    }

    #[test]
    fn encode_max_combination_between_close_peaks() {
        let set: LandmarkSet = vec![Point::new(10.0, 10.0), Point::new(11.0, 10.0)].into();
        let map = Heatmap::encode(&set, 32, 32, 1.0);
        assert_eq!(map.get(10, 10), 1.0);
        assert_eq!(map.get(11, 10), 1.0);
        // Both peaks survive at height 1; a sum rule would exceed 1 here.
        let all_bounded = map.data().iter().all(|&v| v <= 1.0);
        assert!(all_bounded);
    }

    #[test]
    fn encode_midpoint_takes_the_larger_gaussian() {
        // Landmarks at x=10 and x=11; pixel column 10 and 11 are 0.5 from
        // the midpoint. A landmark at 10.5 would give both columns
        // e^(-0.125) if decoded from either side; here each column is the
        // max of 1.0 (own peak) and e^(-0.5) (neighbor peak).
        let set: LandmarkSet = vec![Point::new(10.5, 10.0)].into();
        let map = Heatmap::encode(&set, 32, 32, 1.0);
        let expect = (-0.125f64).exp();
        assert!((map.get(10, 10) - expect).abs() < 1e-12);
        assert!((map.get(11, 10) - expect).abs() < 1e-12);
        assert!((expect - 0.882_496_902_584_595_3).abs() < 1e-12);
    }

    #[test]
    fn encode_off_canvas_landmark_is_clipped_not_fatal() {
        let set: LandmarkSet = vec![Point::new(-10.0, -10.0), Point::new(2.0, 2.0)].into();
        let map = Heatmap::encode(&set, 16, 16, 1.0);
        assert_eq!(map.get(2, 2), 1.0);
        assert_eq!(map.get(15, 15), 0.0);
    }

    #[test]
    fn background_is_exact_complement() {
        let set: LandmarkSet = vec![Point::new(5.0, 5.0), Point::new(12.0, 3.0)].into();
        let map = Heatmap::encode(&set, 20, 20, 1.0);
        let bg = map.background();
        for (f, b) in map.data().iter().zip(bg.data().iter()) {
            assert_eq!(f + b, 1.0);
        }
    }

    #[test]
    fn decode_single_peak_centroid() {
        let set: LandmarkSet = vec![Point::new(10.0, 12.0)].into();
        let map = Heatmap::encode(&set, 32, 32, 1.0);
        let decoded = map.decode(0.5);
        assert_eq!(decoded.len(), 1);
        let p = decoded.points()[0];
        assert!((p.x - 10.0).abs() < 1e-9);
        assert!((p.y - 12.0).abs() < 1e-9);
    }

    #[test]
    fn decode_empty_below_threshold() {
        let map = Heatmap::zeros(16, 16);
        assert!(map.decode(0.5).is_empty());
        assert_eq!(map.decode(0.0).len(), 1, "threshold 0 merges the whole frame");
    }

    #[test]
    fn decode_diagonal_pixels_are_one_region() {
        // 8-connectivity joins diagonal neighbors; 4-connectivity would
        // report two regions here.
        let mut map = Heatmap::zeros(8, 8);
        map.data[2 * 8 + 2] = 1.0;
        map.data[3 * 8 + 3] = 1.0;
        let decoded = map.decode(0.5);
        assert_eq!(decoded.len(), 1);
        assert_eq!(decoded.points()[0], Point::new(2.5, 2.5));
    }

    #[test]
    fn decode_well_separated_peaks_round_trip() {
        let truth: LandmarkSet = vec![
            Point::new(8.0, 8.0),
            Point::new(24.0, 9.0),
            Point::new(16.0, 24.0),
        ]
        .into();
        let map = Heatmap::encode(&truth, 40, 40, 1.0);
        let decoded = map.decode(0.5);
        assert_eq!(decoded.len(), truth.len());
        for t in truth.iter() {
            let nearest = decoded
                .iter()
                .map(|d| d.distance(t))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 0.5, "peak at ({}, {}) off by {nearest}", t.x, t.y);
        }
    }

    /// Region counter with a different algorithm (union-find) to check the
    /// BFS in `decode` against.
    fn union_find_regions(mask: &[bool], w: usize, h: usize) -> usize {
        let mut parent: Vec<usize> = (0..mask.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !mask[i] {
                    continue;
                }
                for (dx, dy) in [(1i64, 0i64), (-1, 1), (0, 1), (1, 1)] {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        (0..mask.len())
            .filter(|&i| mask[i] && find(&mut parent, i) == i)
            .count()
    }

    #[test]
    fn decode_region_count_matches_union_find_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let (w, h) = (rng.gen_range(4..20), rng.gen_range(4..20));
            let density = rng.gen_range(0.1..0.6);
            let data: Vec<f64> = (0..w * h)
                .map(|_| if rng.gen::<f64>() < density { 1.0 } else { 0.0 })
                .collect();
            let mask: Vec<bool> = data.iter().map(|&v| v >= 0.5).collect();
            let map = Heatmap::from_vec(w, h, data);
            let got = map.decode(0.5).len();
            let want = union_find_regions(&mask, w, h);
            assert_eq!(got, want, "trial {trial}: {w}x{h} grid");
        }
    }

    proptest! {
        #[test]
        fn round_trip_recovers_separated_landmarks(
            seed in 0u64..1000,
            n in 1usize..6,
        ) {
            // Rejection-sample points with ≥8 px separation and ≥4 px margin.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (64usize, 48usize);
            let mut pts: Vec<Point> = Vec::new();
            let mut attempts = 0;
            while pts.len() < n && attempts < 500 {
                attempts += 1;
                let c = Point::new(
                    rng.gen_range(4.0..(w as f64 - 4.0)),
                    rng.gen_range(4.0..(h as f64 - 4.0)),
                );
                if pts.iter().all(|p| p.distance(&c) >= 8.0) {
                    pts.push(c);
                }
            }
            let truth: LandmarkSet = pts.into();
            let map = Heatmap::encode(&truth, w, h, 1.0);
            let decoded = map.decode(0.5);
            prop_assert_eq!(decoded.len(), truth.len());
            for t in truth.iter() {
                let nearest = decoded
                    .iter()
                    .map(|d| d.distance(t))
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(nearest <= 0.5);
            }
        }

        #[test]
        fn encode_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point> = (0..5)
                .map(|_| Point::new(rng.gen_range(0.0..32.0), rng.gen_range(0.0..24.0)))
                .collect();
            let mut reversed = pts.clone();
            reversed.reverse();
            let a = Heatmap::encode(&pts.into(), 32, 24, 1.0);
            let b = Heatmap::encode(&reversed.into(), 32, 24, 1.0);
            prop_assert_eq!(a.data(), b.data());
        }

        #[test]
        fn threshold_raises_monotonically_shrink_foreground(
            seed in 0u64..500,
            t1 in 0.05f64..0.95,
            t2 in 0.05f64..0.95,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point> = (0..4)
                .map(|_| Point::new(rng.gen_range(0.0..32.0), rng.gen_range(0.0..24.0)))
                .collect();
            let map = Heatmap::encode(&pts.into(), 32, 24, 1.0);
            prop_assert!(map.foreground_count(hi) <= map.foreground_count(lo));
        }
    }
}
