use crate::pmf::OrientedBox;

type Pt = (f64, f64);

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Signed shoelace area; positive for counter-clockwise vertices.
pub fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a.0 * b.1 - b.0 * a.1;
    }
    0.5 * s
}

fn line_hit(p: Pt, q: Pt, a: Pt, b: Pt) -> Pt {
    let (dp, dq) = (cross(a, b, p), cross(a, b, q));
    let t = dp / (dp - dq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Intersection of two convex polygons given counter-clockwise.
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (pin, qin) = (cross(a, b, p) >= 0.0, cross(a, b, q) >= 0.0);
            if pin {
                out.push(p);
                if !qin {
                    out.push(line_hit(p, q, a, b));
                }
            } else if qin {
                out.push(line_hit(p, q, a, b));
            }
        }
    }
    out
}

/// Intersection over union of two oriented rectangles; 0 when the union
/// has no area.
pub fn overlap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if !(aa > 0.0) || !(ab > 0.0) {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners())).abs();
    let union = aa + ab - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit(cx: f64, cy: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, 0.5, 0.5, 0.0)
    }

    #[test]
    fn identical_and_disjoint() {
        let b = OrientedBox::new(3.0, 4.0, 5.0, 2.0, 0.7);
        assert_relative_eq!(overlap(&b, &b), 1.0, epsilon = 1e-12);
        assert_eq!(overlap(&unit(0.0, 0.0), &unit(5.0, 0.0)), 0.0);
    }

    #[test]
    fn half_shift_is_one_third() {
        assert_relative_eq!(overlap(&unit(0.0, 0.0), &unit(0.5, 0.0)), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_area_boxes() {
        let p = OrientedBox::point(1.0, 1.0);
        assert_eq!(overlap(&p, &p), 0.0);
        assert_eq!(overlap(&p, &unit(1.0, 1.0)), 0.0);
    }

    #[test]
    fn rotated_square_inside_circle_of_other() {
        // a square rotated 45° about a shared center: intersection is a
        // regular octagon of area 2(√2 − 1)·side² for unit side
        let a = unit(0.0, 0.0);
        let b = OrientedBox::new(0.0, 0.0, 0.5, 0.5, PI / 4.0);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert_relative_eq!(overlap(&a, &b), inter / (2.0 - inter), epsilon = 1e-12);
    }
}
