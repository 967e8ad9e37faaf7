//! Quadrature on uncut cells and faces (tensor Gauss) and on cut cells: a
//! height-function rule for the volume `T ∩ Ω` and an angular rule for the
//! boundary arc `Γ ∩ T`.
//!
//! The cut-cell rules are specialized to the circle. Along the height
//! direction the inner bounds are known in closed form, so the inner Gauss
//! rule is exact for polynomials; the outer direction is split at every point
//! where a bound switches between a box edge and the arc, and integrated with
//! a Gauss rule sized from the distance to the nearest vertical tangent.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{CellBounds, CellKind, Circle, LevelMesh};

/// Maximal recursive bisection depth for cut cells.
pub const MAX_DEPTH: usize = 8;

/// Points, weights and (for boundary rules) unit outward normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub normals: Option<Vec<[f64; 2]>>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    fn extend(&mut self, other: QuadRule) {
        self.points.extend(other.points);
        self.weights.extend(other.weights);
    }

    /// Writes `x,y,w,nx,ny` rows; normals are zero for volume rules.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,w,nx,ny")?;
        for (q, (x, w)) in self.points.iter().zip(&self.weights).enumerate() {
            let n = self.normals.as_ref().map_or([0.0, 0.0], |n| n[q]);
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                x[0], x[1], w, n[0], n[1]
            )?;
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor Gauss rule with `n_1d` points per direction on a rectangle.
pub fn tensor_gauss(cell: &CellBounds, n_1d: usize) -> QuadRule {
    let (x, w) = gauss_legendre(n_1d);
    let dx = cell.upper[0] - cell.lower[0];
    let dy = cell.upper[1] - cell.lower[1];
    let mut rule = QuadRule::default();
    for (qy, wy) in x.iter().zip(&w) {
        for (qx, wx) in x.iter().zip(&w) {
            rule.points
                .push([cell.lower[0] + qx * dx, cell.lower[1] + qy * dy]);
            rule.weights.push(wx * wy * dx * dy);
        }
    }
    rule
}

/// Gauss rule with `n_1d` points on the segment from `a` to `b`.
pub fn face_rule(a: [f64; 2], b: [f64; 2], n_1d: usize) -> QuadRule {
    let (x, w) = gauss_legendre(n_1d);
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    QuadRule {
        points: x
            .iter()
            .map(|t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
            .collect(),
        weights: w.iter().map(|w| w * len).collect(),
        normals: None,
    }
}

/// Angular intervals `[t0, t1]` (radians, `t0 < t1`, possibly beyond `2π`) of
/// the circle that lie inside `cell`. Tangential contacts yield no interval.
pub fn arc_intervals(cell: &CellBounds, circle: &Circle) -> Vec<(f64, f64)> {
    let c = circle.center;
    let r = circle.radius;
    let mut angles = Vec::with_capacity(8);
    for (lo, hi, along_x) in [
        (cell.lower[0], cell.upper[0], true),
        (cell.lower[1], cell.upper[1], false),
    ] {
        for line in [lo, hi] {
            let s = (line - if along_x { c[0] } else { c[1] }) / r;
            if s.abs() < 1.0 {
                if along_x {
                    let t = s.acos();
                    angles.push(t);
                    angles.push(2.0 * PI - t);
                } else {
                    let t = s.asin();
                    angles.push(t.rem_euclid(2.0 * PI));
                    angles.push(PI - t);
                }
            }
        }
    }
    let inside = |t: f64| {
        let p = [c[0] + r * t.cos(), c[1] + r * t.sin()];
        p[0] > cell.lower[0] && p[0] < cell.upper[0] && p[1] > cell.lower[1] && p[1] < cell.upper[1]
    };
    if angles.is_empty() {
        return if inside(0.0) {
            vec![(0.0, 2.0 * PI)]
        } else {
            Vec::new()
        };
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let m = angles.len();
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for k in 0..m {
        let t0 = angles[k];
        let t1 = if k + 1 < m {
            angles[k + 1]
        } else {
            angles[0] + 2.0 * PI
        };
        if t1 - t0 <= 1e-15 || !inside(0.5 * (t0 + t1)) {
            continue;
        }
        match intervals.last_mut() {
            Some(last) if (last.1 - t0).abs() < 1e-15 => last.1 = t1,
            _ => intervals.push((t0, t1)),
        }
    }
    // merge across the 0 / 2π seam
    if intervals.len() >= 2 {
        let last = *intervals.last().unwrap();
        if (last.1 - (intervals[0].0 + 2.0 * PI)).abs() < 1e-15 {
            let first = intervals.remove(0);
            intervals.last_mut().unwrap().1 = first.1 + 2.0 * PI;
        }
    }
    intervals
}

/// Line rule on `Γ ∩ cell`: `n_1d + 2` Gauss points per angular interval,
/// weights in arc length, radial outward normals.
pub fn cut_surface_rule(cell: &CellBounds, circle: &Circle, n_1d: usize) -> QuadRule {
    let (x, w) = gauss_legendre(n_1d + 2);
    let mut rule = QuadRule {
        normals: Some(Vec::new()),
        ..Default::default()
    };
    for (t0, t1) in arc_intervals(cell, circle) {
        for (s, ws) in x.iter().zip(&w) {
            let t = t0 + s * (t1 - t0);
            let n = [t.cos(), t.sin()];
            rule.points.push([
                circle.center[0] + circle.radius * n[0],
                circle.center[1] + circle.radius * n[1],
            ]);
            rule.weights.push(ws * (t1 - t0) * circle.radius);
            rule.normals.as_mut().unwrap().push(n);
        }
    }
    rule
}

/// Volume rule on `cell ∩ disc`, exact in the height direction for polynomials
/// of degree `2 n_1d - 1`.
pub fn cut_volume_rule(cell: &CellBounds, circle: &Circle, n_1d: usize) -> Result<QuadRule> {
    let mut rule = QuadRule::default();
    volume_recursive(cell, circle, n_1d, 0, &mut rule)?;
    Ok(rule)
}

fn volume_recursive(
    cell: &CellBounds,
    circle: &Circle,
    n_1d: usize,
    depth: usize,
    rule: &mut QuadRule,
) -> Result<()> {
    match circle.classify(cell) {
        CellKind::Outside => return Ok(()),
        CellKind::Inside => {
            rule.extend(tensor_gauss(cell, n_1d));
            return Ok(());
        }
        CellKind::Cut => {}
    }
    let arcs = arc_intervals(cell, circle);
    // quality of a height direction: distance of the arc to the nearest tangent
    // parallel to the height direction, relative to the outer extent
    let quality = |height_is_y: bool| {
        let mut max_outer = 0.0f64;
        for &(t0, t1) in &arcs {
            max_outer = max_outer.max(max_abs_trig(t0, t1, height_is_y));
        }
        let extent = if height_is_y {
            cell.upper[0] - cell.lower[0]
        } else {
            cell.upper[1] - cell.lower[1]
        };
        circle.radius * (1.0 - max_outer) / extent
    };
    let (qy, qx) = (quality(true), quality(false));
    let (height_is_y, q) = if qy >= qx { (true, qy) } else { (false, qx) };
    if q < 0.5 {
        if depth >= MAX_DEPTH {
            return Err(Error::QuadratureDepth(MAX_DEPTH));
        }
        for sub in cell.bisect() {
            volume_recursive(&sub, circle, n_1d, depth + 1, rule)?;
        }
        return Ok(());
    }
    height_function_rule(cell, circle, n_1d, height_is_y, q, rule);
    Ok(())
}

/// Maximum of `|cos t|` (outer = x, height = y) or `|sin t|` over `[t0, t1]`.
fn max_abs_trig(t0: f64, t1: f64, cosine: bool) -> f64 {
    let f = |t: f64| if cosine { t.cos().abs() } else { t.sin().abs() };
    let mut m = f(t0).max(f(t1));
    // extrema of |cos| at k π, of |sin| at π/2 + k π
    let offset = if cosine { 0.0 } else { 0.5 * PI };
    let k0 = ((t0 - offset) / PI).ceil() as i64;
    let k1 = ((t1 - offset) / PI).floor() as i64;
    if k1 >= k0 {
        m = 1.0;
    }
    m
}

fn height_function_rule(
    cell: &CellBounds,
    circle: &Circle,
    n_1d: usize,
    height_is_y: bool,
    quality: f64,
    rule: &mut QuadRule,
) {
    // work in (outer, height) coordinates
    let (o, hgt) = if height_is_y { (0, 1) } else { (1, 0) };
    let (o_lo, o_hi) = (cell.lower[o], cell.upper[o]);
    let (h_lo, h_hi) = (cell.lower[hgt], cell.upper[hgt]);
    let (co, ch) = (circle.center[o], circle.center[hgt]);
    let r = circle.radius;

    let mut breaks = vec![o_lo, o_hi, co - r, co + r];
    for line in [h_lo, h_hi] {
        let d = r * r - (line - ch) * (line - ch);
        if d > 0.0 {
            let s = d.sqrt();
            breaks.push(co - s);
            breaks.push(co + s);
        }
    }
    breaks.retain(|&b| b >= o_lo && b <= o_hi);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + a.abs()));

    // Bernstein-ellipse estimate for the sqrt singularity at distance
    // quality * extent from the outer interval
    let a = 1.0 + 2.0 * quality;
    let rho = a + (a * a - 1.0).sqrt();
    let m_sing = (14.0 * std::f64::consts::LN_10 / (2.0 * rho.ln())).ceil() as usize;
    let m = m_sing.clamp(n_1d + 2, 24);
    let (xo, wo) = gauss_legendre(m);
    let (xi, wi) = gauss_legendre(n_1d);

    for seg in breaks.windows(2) {
        let (a0, a1) = (seg[0], seg[1]);
        if a1 - a0 <= 0.0 {
            continue;
        }
        for (so, swo) in xo.iter().zip(&wo) {
            let t = a0 + so * (a1 - a0);
            let s = (r * r - (t - co) * (t - co)).max(0.0).sqrt();
            let lo = h_lo.max(ch - s);
            let hi = h_hi.min(ch + s);
            if hi <= lo {
                continue;
            }
            for (si, swi) in xi.iter().zip(&wi) {
                let u = lo + si * (hi - lo);
                let mut p = [0.0; 2];
                p[o] = t;
                p[hgt] = u;
                rule.points.push(p);
                rule.weights.push(swo * (a1 - a0) * swi * (hi - lo));
            }
        }
    }
}

/// Per-cell volume rule on any active cell of a circle level: tensor Gauss on
/// inside cells, the height-function rule on cut cells.
pub fn active_cell_rule(
    mesh: &LevelMesh,
    cell: usize,
    kind: CellKind,
    circle: Option<&Circle>,
    n_1d: usize,
) -> Result<QuadRule> {
    let (i, j) = mesh.cell_ij(cell);
    let bounds = mesh.cell_bounds(i, j);
    match (kind, circle) {
        (CellKind::Cut, Some(c)) => cut_volume_rule(&bounds, c, n_1d),
        (CellKind::Outside, _) => Ok(QuadRule::default()),
        _ => Ok(tensor_gauss(&bounds, n_1d)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_circle() -> Circle {
        Circle::new([0.0, 0.0], 1.0)
    }

    #[test]
    fn gauss_rules_integrate_monomials() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            for k in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
            assert!(w.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn midpoint_rule() {
        let r = tensor_gauss(&CellBounds::new([0.0, 0.0], [1.0, 1.0]), 1);
        assert_eq!(r.points, vec![[0.5, 0.5]]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn tensor_gauss_exactness() {
        let r = tensor_gauss(&CellBounds::new([0.0, 0.0], [1.0, 1.0]), 3);
        let v = r.integrate(|x| x[0].powi(5) * x[1].powi(5));
        assert!((v - 1.0 / 36.0).abs() < 1e-15);
        let cell = CellBounds::new([0.3, -0.2], [0.55, 0.05]);
        assert!((tensor_gauss(&cell, 4).weight_sum() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn face_rule_two_points() {
        let h = 0.25;
        let r = face_rule([1.0, 0.0], [1.0, h], 2);
        assert!((r.weights[0] - h / 2.0).abs() < 1e-16 && (r.weights[1] - h / 2.0).abs() < 1e-16);
        let s = (1.0 / 3.0f64).sqrt();
        assert!((r.points[0][1] - h * (1.0 - s) / 2.0).abs() < 1e-15);
        let cubic = r.integrate(|x| 1.0 + x[1] - 3.0 * x[1].powi(3));
        let exact = h + h * h / 2.0 - 0.75 * h.powi(4);
        assert!((cubic - exact).abs() < 1e-15);
    }

    #[test]
    fn circular_segment_area() {
        let cell = CellBounds::new([0.5, -0.5], [1.5, 0.5]);
        let rule = cut_volume_rule(&cell, &unit_circle(), 2).unwrap();
        // ∫_{-1/2}^{1/2} (sqrt(1 - y²) - 1/2) dy
        let prim = |y: f64| 0.5 * (y * (1.0 - y * y).sqrt() + y.asin());
        let exact = prim(0.5) - prim(-0.5) - 0.5;
        assert!(
            (rule.weight_sum() - exact).abs() < 1e-12,
            "{} vs {exact}",
            rule.weight_sum()
        );
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        assert!(rule.points.iter().all(|&p| cell.contains(p, 1e-14)));
    }

    #[test]
    fn quarter_circle_arc() {
        let cell = CellBounds::new([0.0, 0.0], [1.0, 1.0]);
        let rule = cut_surface_rule(&cell, &unit_circle(), 2);
        assert!((rule.weight_sum() - PI / 2.0).abs() < 1e-14);
        let vol = cut_volume_rule(&cell, &unit_circle(), 2).unwrap();
        assert!((vol.weight_sum() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn tangential_touch_gives_empty_arc() {
        let cell = CellBounds::new([1.0, -0.5], [2.0, 0.5]);
        assert!(cut_surface_rule(&cell, &unit_circle(), 3).is_empty());
    }

    #[test]
    fn surface_points_on_circle_with_outward_normals() {
        let c = Circle::new([0.1, -0.05], 0.8);
        let cell = CellBounds::new([0.7, 0.0], [0.95, 0.25]);
        let rule = cut_surface_rule(&cell, &c, 3);
        assert!(!rule.is_empty());
        let normals = rule.normals.as_ref().unwrap();
        for (x, n) in rule.points.iter().zip(normals) {
            assert!(c.evaluate(*x).abs() <= 1e-12 * 0.25);
            assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-15);
            let ahead = [x[0] + 1e-6 * n[0], x[1] + 1e-6 * n[1]];
            assert!(c.evaluate(ahead) > c.evaluate(*x));
            assert!(cell.contains(*x, 1e-14));
        }
    }

    #[test]
    fn arc_crossing_seam_is_one_interval() {
        let cell = CellBounds::new([0.9, -0.1], [1.1, 0.1]);
        let arcs = arc_intervals(&cell, &unit_circle());
        assert_eq!(arcs.len(), 1);
        let len = arcs[0].1 - arcs[0].0;
        assert!((len - 2.0 * (0.1f64).asin()).abs() < 1e-14);
    }

    #[test]
    fn coarse_cell_needs_bisection_but_succeeds() {
        let cell = CellBounds::new([0.0, 0.0], [1.21, 1.21]);
        let rule = cut_volume_rule(&cell, &unit_circle(), 2).unwrap();
        assert!((rule.weight_sum() - PI / 4.0).abs() < 1e-11);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let rule = cut_surface_rule(&CellBounds::new([0.0, 0.0], [1.0, 1.0]), &unit_circle(), 1);
        let mut buf = Vec::new();
        rule.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), rule.len() + 1);
        assert!(text.starts_with("x,y,w,nx,ny"));
    }
}
