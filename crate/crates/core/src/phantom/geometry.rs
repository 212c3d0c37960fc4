//! Planar geometry on `[f64; 2]` points: segment intersection, polygon
//! tests and hulls.

pub type P2 = [f64; 2];

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Sign of the turn `a -> b -> c`: positive counterclockwise.
pub fn orient(a: P2, b: P2, c: P2) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn on_segment(p: P2, a: P2, b: P2) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test, endpoints and collinear overlap included.
pub fn segments_intersect(a: P2, b: P2, c: P2, d: P2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// Parameter `t` in `[0, 1]` along `a -> b` of the first point shared with
/// segment `c -> d`, if any.
pub fn first_contact(a: P2, b: P2, c: P2, d: P2) -> Option<f64> {
    if !segments_intersect(a, b, c, d) {
        return None;
    }
    let r = sub(b, a);
    let s = sub(d, c);
    let denom = cross(r, s);
    if denom != 0.0 {
        let t = cross(sub(c, a), s) / denom;
        return Some(t.clamp(0.0, 1.0));
    }
    // Collinear overlap: earliest of the overlap endpoints along a -> b.
    let rr = dot(r, r);
    if rr == 0.0 {
        return Some(0.0);
    }
    let tc = dot(sub(c, a), r) / rr;
    let td = dot(sub(d, a), r) / rr;
    let lo = tc.min(td).max(0.0);
    Some(lo.min(1.0))
}

/// Point on `a -> b` at parameter `t`.
pub fn lerp(a: P2, b: P2, t: f64) -> P2 {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Iterates the closed polygon's edges.
pub fn edges(poly: &[P2]) -> impl Iterator<Item = (P2, P2)> + '_ {
    (0..poly.len()).map(move |i| (poly[i], poly[(i + 1) % poly.len()]))
}

/// Whether `p` lies on the boundary of `poly`.
pub fn on_boundary(p: P2, poly: &[P2]) -> bool {
    edges(poly).any(|(a, b)| orient(a, b, p) == 0.0 && on_segment(p, a, b))
}

/// Even-odd point-in-polygon test; boundary points count as inside.
pub fn point_in_polygon(p: P2, poly: &[P2]) -> bool {
    if on_boundary(p, poly) {
        return true;
    }
    let mut inside = false;
    for (a, b) in edges(poly) {
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// True if no two non-adjacent edges touch and no adjacent edges overlap.
pub fn is_simple(poly: &[P2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Shared vertex only: reject folding back along the previous edge.
                let shared = if j == i + 1 { b } else { a };
                let (other_i, other_j) = if j == i + 1 { (a, d) } else { (b, c) };
                if orient(other_i, shared, other_j) == 0.0 && dot(sub(other_i, shared), sub(other_j, shared)) > 0.0 {
                    return false;
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Shoelace area, positive for counterclockwise polygons.
pub fn signed_area(poly: &[P2]) -> f64 {
    0.5 * edges(poly).map(|(a, b)| cross(a, b)).sum::<f64>()
}

fn sorted_unique(points: &[P2]) -> Vec<P2> {
    let mut pts: Vec<P2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    pts
}

/// Counterclockwise convex hull (monotone chain) without collinear points.
pub fn convex_hull(points: &[P2]) -> Vec<P2> {
    let pts = sorted_unique(points);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<P2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &P2>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Concave hull by k-nearest-neighbour boundary walking: starting from the
/// lowest point, repeatedly step to the neighbour (among the `k` nearest)
/// that turns furthest right without crossing the boundary so far. `k`
/// grows until the walk closes around every point; the convex hull is the
/// fallback. Returns a counterclockwise polygon.
pub fn concave_hull(points: &[P2], k: usize) -> Vec<P2> {
    let pts = sorted_unique(points);
    if pts.len() < 4 {
        return convex_hull(&pts);
    }
    let convex = convex_hull(&pts);
    if convex.len() < 3 {
        return convex;
    }
    for k in k.max(3)..pts.len() {
        if let Some(h) = knn_walk(&pts, k) {
            return h;
        }
    }
    convex
}

fn knn_walk(pts: &[P2], k: usize) -> Option<Vec<P2>> {
    let first = *pts.iter().min_by(|a, b| a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0])))?;
    let mut remaining: Vec<P2> = pts.iter().copied().filter(|p| *p != first).collect();
    let mut hull = vec![first];
    let mut current = first;
    let mut back = [-1.0, 0.0];
    let mut step = 0usize;
    loop {
        if step == 3 {
            remaining.push(first);
        }
        if remaining.is_empty() {
            return None;
        }
        let mut near = remaining.clone();
        near.sort_by(|a, b| dot(sub(*a, current), sub(*a, current)).total_cmp(&dot(sub(*b, current), sub(*b, current))));
        near.truncate(k);
        // Clockwise angle from the backward direction, largest first.
        let cw = |p: &P2| {
            let d = sub(*p, current);
            let a = -(cross(back, d)).atan2(dot(back, d));
            if a < 0.0 {
                a + std::f64::consts::TAU
            } else {
                a
            }
        };
        near.sort_by(|a, b| cw(b).total_cmp(&cw(a)));
        let next = near.into_iter().find(|&cand| {
            let closing = cand == first;
            let last = hull.len().saturating_sub(1);
            (0..last).all(|i| {
                if i + 1 == last || (closing && i == 0) {
                    return true;
                }
                !segments_intersect(current, cand, hull[i], hull[i + 1])
            })
        })?;
        if next == first {
            break;
        }
        back = sub(current, next);
        current = next;
        hull.push(next);
        remaining.retain(|p| *p != next);
        step += 1;
    }
    if hull.len() < 3 || !pts.iter().all(|p| point_in_polygon(*p, &hull)) {
        return None;
    }
    if signed_area(&hull) < 0.0 {
        hull.reverse();
    }
    Some(hull)
}
