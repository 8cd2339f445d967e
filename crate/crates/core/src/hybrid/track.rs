//! Closed racetracks: a centerline polyline with a constant half-width.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackId {
    Track1,
    Track2,
}

impl TrackId {
    pub fn build(self) -> Track {
        match self {
            TrackId::Track1 => Track::track1(),
            TrackId::Track2 => Track::track2(),
        }
    }

    /// Episode cap used by the evaluation protocol on this layout.
    pub fn episode_steps(self) -> usize {
        match self {
            TrackId::Track1 => 250,
            TrackId::Track2 => 400,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the closest centerline point, in `[0, length)`.
    pub s: f64,
    /// Signed offset from the centerline, positive to the left.
    pub lateral: f64,
    pub segment: usize,
}

#[derive(Clone, Debug)]
pub struct Track {
    pub id: TrackId,
    points: Vec<[f64; 2]>,
    cum: Vec<f64>,
    pub length: f64,
    pub half_width: f64,
    pub n_regions: usize,
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r += TAU;
    }
    r
}

struct Turtle {
    pts: Vec<[f64; 2]>,
    x: f64,
    y: f64,
    heading: f64,
}

impl Turtle {
    fn straight(&mut self, len: f64) {
        let n = len.ceil() as usize;
        let ds = len / n as f64;
        for _ in 0..n {
            self.x += ds * self.heading.cos();
            self.y += ds * self.heading.sin();
            self.pts.push([self.x, self.y]);
        }
    }

    /// Left turn by `angle` around a circle of `radius`.
    fn left(&mut self, radius: f64, angle: f64) {
        let n = (radius * angle).ceil() as usize;
        let da = angle / n as f64;
        let cx = self.x - radius * self.heading.sin();
        let cy = self.y + radius * self.heading.cos();
        for _ in 0..n {
            self.heading += da;
            self.x = cx + radius * self.heading.sin();
            self.y = cy - radius * self.heading.cos();
            self.pts.push([self.x, self.y]);
        }
    }
}

impl Track {
    fn from_points(id: TrackId, mut points: Vec<[f64; 2]>, half_width: f64, n_regions: usize) -> Self {
        // Drop a duplicated closing point; the loop closes implicitly.
        if let (Some(first), Some(last)) = (points.first().copied(), points.last().copied()) {
            if (first[0] - last[0]).hypot(first[1] - last[1]) < 1e-6 {
                points.pop();
            }
        }
        let n = points.len();
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let a = points[i];
            let b = points[(i + 1) % n];
            cum.push(cum[i] + (b[0] - a[0]).hypot(b[1] - a[1]));
        }
        let length = cum[n];
        Self {
            id,
            points,
            cum,
            length,
            half_width,
            n_regions,
        }
    }

    /// Rounded rectangle, counter-clockwise: 30 m and 10 m straights joined
    /// by four 10 m-radius corners. Six friction regions.
    pub fn track1() -> Self {
        let mut t = Turtle {
            pts: vec![[0.0, 0.0]],
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        for _ in 0..2 {
            t.straight(30.0);
            t.left(10.0, PI / 2.0);
            t.straight(10.0);
            t.left(10.0, PI / 2.0);
        }
        Self::from_points(TrackId::Track1, t.pts, 4.0, 6)
    }

    /// Longer irregular loop `r(φ) = 42 + 9 sin 2φ + 5 cos(3φ + 0.5)` with
    /// both left- and right-curving sections. Eight friction regions.
    pub fn track2() -> Self {
        let n = 640;
        let pts = (0..n)
            .map(|i| {
                let phi = TAU * i as f64 / n as f64;
                let r = 42.0 + 9.0 * (2.0 * phi).sin() + 5.0 * (3.0 * phi + 0.5).cos();
                [r * phi.cos(), r * phi.sin()]
            })
            .collect();
        Self::from_points(TrackId::Track2, pts, 4.0, 8)
    }

    pub fn segments(&self) -> usize {
        self.points.len()
    }

    fn seg(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        let n = self.points.len();
        (self.points[i % n], self.points[(i + 1) % n])
    }

    fn project_segment(&self, i: usize, x: f64, y: f64) -> (f64, Projection) {
        let (a, b) = self.seg(i);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0);
        let (px, py) = (a[0] + t * dx, a[1] + t * dy);
        let d2 = (x - px).powi(2) + (y - py).powi(2);
        let cross = dx * (y - a[1]) - dy * (x - a[0]);
        let lateral = d2.sqrt() * if cross >= 0.0 { 1.0 } else { -1.0 };
        let s = (self.cum[i] + t * len2.sqrt()).rem_euclid(self.length);
        (
            d2,
            Projection {
                s,
                lateral,
                segment: i,
            },
        )
    }

    /// Closest centerline point over the whole loop.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best = self.project_segment(0, x, y);
        for i in 1..self.points.len() {
            let c = self.project_segment(i, x, y);
            if c.0 < best.0 {
                best = c;
            }
        }
        best.1
    }

    /// Closest point among segments within `window` of `hint`.
    pub fn project_near(&self, x: f64, y: f64, hint: usize, window: usize) -> Projection {
        let n = self.points.len();
        let mut best: Option<(f64, Projection)> = None;
        for k in 0..=2 * window {
            let i = (hint + n + k - window) % n;
            let c = self.project_segment(i, x, y);
            if best.is_none_or(|b| c.0 < b.0) {
                best = Some(c);
            }
        }
        best.expect("non-empty window").1
    }

    fn segment_at(&self, s: f64) -> usize {
        let s = s.rem_euclid(self.length);
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).expect("finite arc length")) {
            Ok(i) => i.min(self.points.len() - 1),
            Err(i) => (i - 1).min(self.points.len() - 1),
        }
    }

    /// Direction of travel of the centerline at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let (a, b) = self.seg(self.segment_at(s));
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.rem_euclid(self.length);
        let i = self.segment_at(s);
        let (a, b) = self.seg(i);
        let seg_len = self.cum[i + 1] - self.cum[i];
        let t = ((s - self.cum[i]) / seg_len).clamp(0.0, 1.0);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn arc_fraction(&self, s: f64) -> f64 {
        (s.rem_euclid(self.length) / self.length).min(1.0)
    }

    /// Axis-aligned box containing the track with `margin` to spare.
    pub fn bounds(&self, margin: f64) -> [f64; 4] {
        let mut b = [f64::MAX, f64::MIN, f64::MAX, f64::MIN];
        for p in &self.points {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].max(p[0]);
            b[2] = b[2].min(p[1]);
            b[3] = b[3].max(p[1]);
        }
        [b[0] - margin, b[1] + margin, b[2] - margin, b[3] + margin]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track1_closes_with_expected_length() {
        let t = Track::track1();
        let expect = 2.0 * 30.0 + 2.0 * 10.0 + TAU * 10.0;
        // Chords under-estimate the arcs slightly.
        assert!((t.length - expect).abs() < 0.1, "{}", t.length);
        let last = t.points.last().unwrap();
        assert!(last[0].hypot(last[1]) < 1.01);
    }

    #[test]
    fn track2_is_longer_and_gently_curved() {
        let t1 = Track::track1();
        let t2 = Track::track2();
        assert!(t2.length > 1.5 * t1.length);
        // Minimum turning radius from consecutive headings.
        let n = t2.segments();
        let mut min_r = f64::MAX;
        for i in 0..n {
            let h0 = t2.heading_at(t2.cum[i] + 1e-9);
            let h1 = t2.heading_at(t2.cum[(i + 1) % n] + 1e-9);
            let ds = t2.cum[i + 1] - t2.cum[i];
            let k = wrap_angle(h1 - h0).abs() / ds;
            if k > 0.0 {
                min_r = min_r.min(1.0 / k);
            }
        }
        assert!(min_r > 7.0, "tightest radius {min_r}");
    }

    #[test]
    fn projection_of_centerline_points() {
        let t = Track::track1();
        for s in [0.0, 12.3, 47.0, 80.5, 120.0] {
            let p = t.point_at(s);
            let pr = t.project(p[0], p[1]);
            assert!((pr.s - s).abs() < 1e-6, "{s} -> {}", pr.s);
            assert!(pr.lateral.abs() < 1e-9);
        }
        // On the first straight (heading +x) a point above is to the left.
        let pr = t.project(10.0, 2.0);
        assert!((pr.lateral - 2.0).abs() < 1e-9);
        let pr = t.project(10.0, -3.0);
        assert!((pr.lateral + 3.0).abs() < 1e-9);
    }

    #[test]
    fn local_projection_agrees_with_global() {
        let t = Track::track2();
        for s in [1.0, 100.0, 200.0, t.length - 0.5] {
            let p = t.point_at(s);
            let g = t.project(p[0] + 0.5, p[1] - 0.3);
            let l = t.project_near(p[0] + 0.5, p[1] - 0.3, g.segment + 3, 10);
            assert_eq!(g, l);
        }
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, 0.0, PI, 7.0] {
            let w = wrap_angle(a);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            assert!(((a - w) / TAU - ((a - w) / TAU).round()).abs() < 1e-9);
        }
    }
}
