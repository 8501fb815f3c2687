//! Convex piecewise-linear functions on a closed interval, stored as a start
//! point plus slope-sorted segments. Infimal convolution of two such
//! functions is a merge of their segment lists.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvexPwl {
    start: f64,
    start_value: f64,
    /// `(length, slope)`, slopes non-decreasing.
    segments: Vec<(f64, f64)>,
}

impl ConvexPwl {
    pub fn new(start: f64, start_value: f64, segments: Vec<(f64, f64)>) -> Self {
        debug_assert!(segments.windows(2).all(|w| w[0].1 <= w[1].1));
        debug_assert!(segments.iter().all(|s| s.0 >= 0.0));
        ConvexPwl {
            start,
            start_value,
            segments,
        }
    }

    /// Zero on `[lo, hi]`.
    pub fn zero_on(lo: f64, hi: f64) -> Self {
        ConvexPwl::new(lo, 0.0, vec![(hi - lo, 0.0)])
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.segments.iter().map(|s| s.0).sum::<f64>()
    }

    #[cfg(test)]
    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    /// Breakpoints including both domain ends.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        let mut x = self.start;
        std::iter::once(x).chain(self.segments.iter().map(move |(len, _)| {
            x += len;
            x
        }))
    }

    /// Value at `x`, clamping `x` into the domain.
    pub fn eval(&self, x: f64) -> f64 {
        let mut pos = self.start;
        let mut value = self.start_value;
        if x <= pos {
            return value;
        }
        for &(len, slope) in &self.segments {
            if x <= pos + len {
                return value + (x - pos) * slope;
            }
            pos += len;
            value += len * slope;
        }
        value
    }

    /// Values at ascending points in a single sweep.
    pub fn eval_sorted(&self, xs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(xs.len());
        let mut seg = 0;
        let mut pos = self.start;
        let mut value = self.start_value;
        for &x in xs {
            while seg < self.segments.len() && x > pos + self.segments[seg].0 {
                let (len, slope) = self.segments[seg];
                pos += len;
                value += len * slope;
                seg += 1;
            }
            let v = match self.segments.get(seg) {
                Some(&(_, slope)) if x > pos => value + (x - pos) * slope,
                _ => value,
            };
            out.push(v);
        }
        out
    }

    /// `x ↦ f(-x)`.
    pub fn reflect(&self) -> ConvexPwl {
        let end = self.end();
        let end_value = self.eval(end);
        ConvexPwl {
            start: -end,
            start_value: end_value,
            segments: self.segments.iter().rev().map(|&(len, s)| (len, -s)).collect(),
        }
    }

    /// `(f □ g)(x) = min_y f(x - y) + g(y)`.
    pub fn inf_convolve(&self, other: &ConvexPwl) -> ConvexPwl {
        let mut segments: Vec<(f64, f64)> = Vec::with_capacity(self.segments.len() + other.segments.len());
        let (mut i, mut j) = (0, 0);
        while i < self.segments.len() || j < other.segments.len() {
            let take_self = match (self.segments.get(i), other.segments.get(j)) {
                (Some(a), Some(b)) => a.1 <= b.1,
                (Some(_), None) => true,
                _ => false,
            };
            let seg = if take_self {
                i += 1;
                self.segments[i - 1]
            } else {
                j += 1;
                other.segments[j - 1]
            };
            match segments.last_mut() {
                Some(last) if last.1 == seg.1 => last.0 += seg.0,
                _ => segments.push(seg),
            }
        }
        ConvexPwl {
            start: self.start + other.start,
            start_value: self.start_value + other.start_value,
            segments,
        }
    }

    /// Restriction to `[lo, hi]`; `None` if the intersection is empty.
    pub fn restrict(&self, lo: f64, hi: f64) -> Option<ConvexPwl> {
        let end = self.end();
        let lo = lo.max(self.start);
        let hi = hi.min(end);
        if lo > hi + 1e-12 {
            return None;
        }
        let hi = hi.max(lo);
        let mut segments = Vec::new();
        let mut pos = self.start;
        let mut value = self.start_value;
        let mut start_value = None;
        for &(len, slope) in &self.segments {
            let seg_end = pos + len;
            if start_value.is_none() && lo <= seg_end {
                start_value = Some(value + (lo - pos).max(0.0) * slope);
            }
            let a = pos.max(lo);
            let b = seg_end.min(hi);
            if b > a {
                segments.push((b - a, slope));
            }
            pos = seg_end;
            value += len * slope;
            if pos >= hi {
                break;
            }
        }
        Some(ConvexPwl {
            start: lo,
            start_value: start_value.unwrap_or(value),
            segments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_inf_conv(f: &ConvexPwl, g: &ConvexPwl, x: f64) -> f64 {
        let n = 20_000;
        let (lo, hi) = (g.start(), g.end());
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .filter(|y| x - y >= f.start() - 1e-12 && x - y <= f.end() + 1e-12)
            .map(|y| f.eval(x - y) + g.eval(y))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn eval_and_breakpoints() {
        let f = ConvexPwl::new(-1.0, 2.0, vec![(1.0, -2.0), (2.0, 1.0)]);
        assert_eq!(f.eval(-1.0), 2.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(2.0), 2.0);
        assert_eq!(f.eval(5.0), 2.0);
        assert_eq!(f.breakpoints().collect::<Vec<_>>(), vec![-1.0, 0.0, 2.0]);
        assert_eq!(
            f.eval_sorted(&[-1.0, -0.5, 0.0, 1.0, 2.0]),
            vec![2.0, 1.0, 0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn reflect_mirrors() {
        let f = ConvexPwl::new(-1.0, 2.0, vec![(1.0, -2.0), (2.0, 1.0)]);
        let r = f.reflect();
        for x in [-2.0, -1.0, 0.0, 0.5, 1.0] {
            assert!((r.eval(x) - f.eval(-x)).abs() < 1e-12);
        }
    }

    #[test]
    fn inf_convolution_matches_brute_force() {
        let f = ConvexPwl::new(-2.0, 1.0, vec![(1.5, -0.7), (0.5, 0.1), (1.0, 0.4)]);
        let g = ConvexPwl::new(0.0, 0.3, vec![(2.0, -0.2), (1.0, 0.0), (3.0, 0.5)]);
        let h = f.inf_convolve(&g);
        assert!((h.start() - (-2.0)).abs() < 1e-12);
        assert!((h.end() - 7.0).abs() < 1e-12);
        for i in 0..=36 {
            let x = -2.0 + 9.0 * i as f64 / 36.0;
            assert!((h.eval(x) - brute_inf_conv(&f, &g, x)).abs() < 1e-3, "x={x}");
        }
    }

    #[test]
    fn restrict_keeps_values() {
        let f = ConvexPwl::new(-2.0, 1.0, vec![(1.5, -0.7), (0.5, 0.1), (1.0, 0.4)]);
        let r = f.restrict(-1.0, 0.7).unwrap();
        assert_eq!(r.start(), -1.0);
        assert!((r.end() - 0.7).abs() < 1e-12);
        for x in [-1.0, -0.5, 0.0, 0.3, 0.7] {
            assert!((r.eval(x) - f.eval(x)).abs() < 1e-12);
        }
        assert!(f.restrict(2.0, 3.0).is_none());
        let whole = f.restrict(-10.0, 10.0).unwrap();
        assert_eq!(whole.segments().len(), f.segments().len());
        assert!((whole.end() - f.end()).abs() < 1e-12);
    }
}
