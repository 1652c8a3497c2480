use crate::numerics::RngStream;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentLabel {
    Straight,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteConfig {
    pub turns: usize,
    pub first_straight: f64,
    pub straight_min: f64,
    pub straight_max: f64,
    pub turn_radius: f64,
    pub spacing: f64,
    /// Straight run appended past the goal so look-ahead never falls off.
    pub tail: f64,
}

impl Default for RouteConfig {
    fn default() -> Self {
        RouteConfig {
            turns: 2,
            first_straight: 20.0,
            straight_min: 12.0,
            straight_max: 25.0,
            turn_radius: 12.0,
            spacing: 0.5,
            tail: 40.0,
        }
    }
}

/// A polyline route. `labels[i]` describes the segment from point `i` to
/// `i + 1`; `length` is the arc length up to the goal, which lies before
/// the tail.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<SegmentLabel>,
    pub arc: Vec<f64>,
    pub length: f64,
    /// `(start_s, end_s, label)` for each turn.
    pub turns: Vec<(f64, f64, SegmentLabel)>,
}

/// Closest-point query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub segment: usize,
    /// Signed lateral offset, positive to the left of the route.
    pub cte: f64,
    pub heading: f64,
}

impl Route {
    pub fn generate(cfg: &RouteConfig, rng: &mut RngStream) -> Self {
        let mut b = Builder::new(cfg.spacing);
        b.straight(cfg.first_straight);
        for _ in 0..cfg.turns {
            let label = if rng.uniform() < 0.5 { SegmentLabel::Left } else { SegmentLabel::Right };
            b.arc(cfg.turn_radius, label);
            b.straight(rng.uniform_range(cfg.straight_min, cfg.straight_max));
        }
        let goal = b.s;
        b.straight(cfg.tail);
        b.finish(goal)
    }

    /// A single straight of the given length (plus tail).
    pub fn straight(length: f64, tail: f64, spacing: f64) -> Self {
        let mut b = Builder::new(spacing);
        b.straight(length);
        b.straight(tail);
        b.finish(length)
    }

    pub fn total_arc(&self) -> f64 {
        *self.arc.last().expect("route has points")
    }

    fn segment_at(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.total_arc());
        match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Point and tangent heading at arc length `s` (clamped to the route).
    pub fn pose_at(&self, s: f64) -> ([f64; 2], f64) {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.arc[i + 1] - self.arc[i];
        let t = ((s - self.arc[i]) / seg).clamp(0.0, 1.0);
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], heading)
    }

    pub fn label_at(&self, s: f64) -> SegmentLabel {
        self.labels[self.segment_at(s)]
    }

    /// Signed curvature at `s`: `±1/R` on arcs, zero on straights.
    pub fn curvature_at(&self, s: f64, radius: f64) -> f64 {
        match self.label_at(s) {
            SegmentLabel::Straight => 0.0,
            SegmentLabel::Left => 1.0 / radius,
            SegmentLabel::Right => -1.0 / radius,
        }
    }

    /// Closest point among segments whose arc range intersects
    /// `[s_lo, s_hi]`; the window keeps the projection from jumping onto a
    /// later part of a route that passes nearby.
    pub fn project_window(&self, p: [f64; 2], s_lo: f64, s_hi: f64) -> Projection {
        let first = self.segment_at(s_lo);
        let last = self.segment_at(s_hi);
        let mut best: Option<(f64, Projection)> = None;
        for i in first..=last {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
            let d2 = (p[0] - qx).powi(2) + (p[1] - qy).powi(2);
            if best.as_ref().is_none_or(|(bd, _)| d2 < *bd) {
                let cross = dx * (p[1] - a[1]) - dy * (p[0] - a[0]);
                let len = len2.sqrt();
                best = Some((
                    d2,
                    Projection {
                        s: self.arc[i] + t * len,
                        segment: i,
                        cte: cross / len,
                        heading: dy.atan2(dx),
                    },
                ));
            }
        }
        best.expect("window covers at least one segment").1
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        self.project_window(p, 0.0, self.total_arc())
    }

    /// Index range of points with arc length in `[s_lo, s_hi]`.
    pub fn point_range(&self, s_lo: f64, s_hi: f64) -> std::ops::Range<usize> {
        let lo = self.segment_at(s_lo);
        let hi = (self.segment_at(s_hi) + 2).min(self.points.len());
        lo..hi
    }
}

struct Builder {
    spacing: f64,
    points: Vec<[f64; 2]>,
    labels: Vec<SegmentLabel>,
    arc: Vec<f64>,
    turns: Vec<(f64, f64, SegmentLabel)>,
    heading: f64,
    s: f64,
}

impl Builder {
    fn new(spacing: f64) -> Self {
        Builder {
            spacing,
            points: vec![[0.0, 0.0]],
            labels: Vec::new(),
            arc: vec![0.0],
            turns: Vec::new(),
            heading: 0.0,
            s: 0.0,
        }
    }

    fn push(&mut self, p: [f64; 2], label: SegmentLabel) {
        let last = *self.points.last().expect("builder starts with a point");
        self.s += (p[0] - last[0]).hypot(p[1] - last[1]);
        self.points.push(p);
        self.labels.push(label);
        self.arc.push(self.s);
    }

    fn straight(&mut self, length: f64) {
        let n = (length / self.spacing).ceil().max(1.0) as usize;
        let step = length / n as f64;
        let start = *self.points.last().expect("builder starts with a point");
        let (c, s) = (self.heading.cos(), self.heading.sin());
        for k in 1..=n {
            let d = step * k as f64;
            self.push([start[0] + d * c, start[1] + d * s], SegmentLabel::Straight);
        }
    }

    fn arc(&mut self, radius: f64, label: SegmentLabel) {
        let sign = if label == SegmentLabel::Left { 1.0 } else { -1.0 };
        let start = *self.points.last().expect("builder starts with a point");
        let h0 = self.heading;
        // centre of the turning circle
        let cx = start[0] - sign * radius * h0.sin();
        let cy = start[1] + sign * radius * h0.cos();
        let n = (radius * FRAC_PI_2 / self.spacing).ceil().max(1.0) as usize;
        let s0 = self.s;
        for k in 1..=n {
            let h = h0 + sign * FRAC_PI_2 * k as f64 / n as f64;
            self.push([cx + sign * radius * h.sin(), cy - sign * radius * h.cos()], label);
        }
        self.heading = h0 + sign * FRAC_PI_2;
        self.turns.push((s0, self.s, label));
    }

    fn finish(self, goal: f64) -> Route {
        Route {
            points: self.points,
            labels: self.labels,
            arc: self.arc,
            length: goal,
            turns: self.turns,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consecutive_points_are_distinct() {
        let r = Route::generate(&RouteConfig::default(), &mut RngStream::new(5, 0));
        assert!(r.points.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(r.labels.len(), r.points.len() - 1);
        assert_eq!(r.turns.len(), 2);
        assert!(r.length < r.total_arc());
    }

    #[test]
    fn arc_ends_perpendicular() {
        let mut b = Builder::new(0.5);
        b.arc(10.0, SegmentLabel::Left);
        let end = *b.points.last().unwrap();
        assert!((end[0] - 10.0).abs() < 1e-9 && (end[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn projection_sign_is_left_positive() {
        let r = Route::straight(50.0, 10.0, 0.5);
        let p = r.project([10.0, 1.5]);
        assert!((p.cte - 1.5).abs() < 1e-12);
        assert!((p.s - 10.0).abs() < 1e-12);
        assert!((r.project([10.0, -2.0]).cte + 2.0).abs() < 1e-12);
    }
}
