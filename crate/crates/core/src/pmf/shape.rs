use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::grid::{normalize_owned, Grid2D, Pmf2D};

/// An oriented rectangle in pixel units.
///
/// `cx` is the column coordinate and `cy` the row coordinate; `angle` is the
/// inclination of the long axis measured from the column (x) axis toward the
/// row (y) axis, in `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub angle: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, half_len: f64, half_wid: f64, angle: f64) -> Self {
        let (half_len, half_wid, angle) = if half_wid > half_len {
            (half_wid, half_len, angle + PI / 2.0)
        } else {
            (half_len, half_wid, angle)
        };
        OrientedBox {
            cx,
            cy,
            half_len,
            half_wid,
            angle: wrap_angle(angle),
        }
    }

    pub fn point(cx: f64, cy: f64) -> Self {
        OrientedBox {
            cx,
            cy,
            half_len: 0.0,
            half_wid: 0.0,
            angle: 0.0,
        }
    }

    /// Rectangle area, `4 · half_len · half_wid`.
    pub fn area(&self) -> f64 {
        4.0 * self.half_len * self.half_wid
    }

    /// Area of the inscribed ellipse, `π · half_len · half_wid`.
    pub fn ellipse_area(&self) -> f64 {
        PI * self.half_len * self.half_wid
    }

    /// Corners in counter-clockwise order (in a y-up frame).
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.angle.sin_cos();
        let (ux, uy) = (c * self.half_len, s * self.half_len);
        let (vx, vy) = (-s * self.half_wid, c * self.half_wid);
        [
            (self.cx - ux - vx, self.cy - uy - vy),
            (self.cx + ux - vx, self.cy + uy - vy),
            (self.cx + ux + vx, self.cy + uy + vy),
            (self.cx - ux + vx, self.cy - uy + vy),
        ]
    }

    /// Inclination folded to `[0, π/2]`, i.e. the unsigned angle between the
    /// long axis and the x axis.
    pub fn abs_inclination(&self) -> f64 {
        if self.angle > PI / 2.0 {
            PI - self.angle
        } else {
            self.angle
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.cx, self.cy, self.half_len, self.half_wid, self.angle]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// Axis-aligned Gaussian mass on a `rows`×`cols` grid, truncated at the grid
/// edge and renormalized. `center` is `(row, col)` and may be fractional.
///
/// When the spread is too small for any cell to carry mass (σ → 0) the
/// result is a delta at the nearest in-grid cell.
pub fn gaussian_pmf(rows: usize, cols: usize, sigma: (f64, f64), center: (f64, f64)) -> Pmf2D {
    assert!(sigma.0 > 0.0 && sigma.1 > 0.0, "gaussian sigma must be positive");
    let row_w: Vec<f64> = (0..rows)
        .map(|r| {
            let d = (r as f64 - center.0) / sigma.0;
            (-0.5 * d * d).exp()
        })
        .collect();
    let col_w: Vec<f64> = (0..cols)
        .map(|c| {
            let d = (c as f64 - center.1) / sigma.1;
            (-0.5 * d * d).exp()
        })
        .collect();
    let g = Grid2D::from_fn(rows, cols, |r, c| row_w[r] * col_w[c]);
    normalize_owned(g).unwrap_or_else(|_| {
        let r = center.0.round().clamp(0.0, (rows - 1) as f64) as usize;
        let c = center.1.round().clamp(0.0, (cols - 1) as f64) as usize;
        Pmf2D::delta(rows, cols, r, c)
    })
}

/// Index `(row, col)` of the first maximum in row-major order.
pub fn argmax(p: &Grid2D) -> (usize, usize) {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in p.values().iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    (best / p.cols(), best % p.cols())
}

/// Delta mass at the first row-major maximum of `p`.
pub fn argmax_delta(p: &Pmf2D) -> Pmf2D {
    let (r, c) = argmax(p);
    Pmf2D::delta(p.rows(), p.cols(), r, c)
}

/// `Σ p²`: one for a delta, `1/n` for a uniform mass over `n` cells.
pub fn energy(p: &Pmf2D) -> f64 {
    p.values().iter().map(|v| v * v).sum()
}

/// First and second moments of a mass, treating every cell as a unit
/// square of uniform density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
    /// True when the whole mass sits in one cell.
    pub point_mass: bool,
}

pub fn moments(p: &Grid2D) -> Moments {
    let total = p.sum();
    let (mut mx, mut my) = (0.0, 0.0);
    for r in 0..p.rows() {
        for (c, &v) in p.row(r).iter().enumerate() {
            mx += v * c as f64;
            my += v * r as f64;
        }
    }
    mx /= total;
    my /= total;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for r in 0..p.rows() {
        let dy = r as f64 - my;
        for (c, &v) in p.row(r).iter().enumerate() {
            let dx = c as f64 - mx;
            sxx += v * dx * dx;
            syy += v * dy * dy;
            sxy += v * dx * dy;
        }
    }
    sxx /= total;
    syy /= total;
    sxy /= total;
    let point_mass = p.count_nonzero() <= 1;
    // within-cell spread of a unit square
    let cell = 1.0 / 12.0;
    Moments {
        mean_x: mx,
        mean_y: my,
        var_x: sxx + cell,
        var_y: syy + cell,
        cov_xy: sxy,
        point_mass,
    }
}

impl Moments {
    /// Oriented box whose half-extents are `scale` standard deviations along
    /// the principal axes.
    pub fn to_box(&self, scale: f64) -> OrientedBox {
        if self.point_mass {
            return OrientedBox::point(self.mean_x, self.mean_y);
        }
        let (a, b, c) = (self.var_x, self.cov_xy, self.var_y);
        let tr = 0.5 * (a + c);
        let det_term = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let l1 = tr + det_term;
        let l2 = (tr - det_term).max(0.0);
        let angle = if det_term <= 1e-12 * tr.abs().max(1e-300) {
            0.0
        } else {
            0.5 * (2.0 * b).atan2(a - c)
        };
        OrientedBox::new(
            self.mean_x,
            self.mean_y,
            scale * l1.sqrt(),
            scale * l2.sqrt(),
            angle,
        )
    }
}

/// Second-order moment ellipse of a mass with 2σ half-extents.
///
/// A point mass yields a zero-extent box at its cell.
pub fn moment_ellipse(img: &Pmf2D) -> OrientedBox {
    moments(img).to_box(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_sigma_to_zero_is_delta() {
        let p = gaussian_pmf(9, 9, (1e-9, 1e-9), (4.0, 6.0));
        assert_eq!(p.get(4, 6), 1.0);
        let p = gaussian_pmf(9, 9, (1e-9, 1e-9), (4.4, 5.6));
        assert_eq!(p.get(4, 6), 1.0);
    }

    #[test]
    fn gaussian_rotation_symmetry() {
        let p = gaussian_pmf(7, 7, (1.0, 1.0), (3.0, 3.0));
        for r in 0..7 {
            for c in 0..7 {
                // 90° rotation maps (r, c) -> (c, 6 - r)
                assert_relative_eq!(p.get(r, c), p.get(c, 6 - r), max_relative = 1e-12);
            }
        }
        assert_relative_eq!(p.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn argmax_tie_break_row_major() {
        let u = Pmf2D::uniform(2, 2);
        assert_eq!(argmax_delta(&u).get(0, 0), 1.0);
        let p = Pmf2D::try_from_grid(Grid2D::from_vec(2, 2, vec![0.1, 0.9, 0.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(argmax(&argmax_delta(&p)), (0, 1));
        let g = gaussian_pmf(11, 11, (1.5, 2.0), (5.0, 5.0));
        assert_eq!(argmax(&argmax_delta(&g)), (5, 5));
    }

    #[test]
    fn energy_extremes() {
        assert_eq!(energy(&Pmf2D::delta(4, 4, 1, 1)), 1.0);
        assert_relative_eq!(energy(&Pmf2D::uniform(5, 4)), 1.0 / 20.0, epsilon = 1e-15);
    }

    #[test]
    fn ellipse_of_delta_is_a_point() {
        let b = moment_ellipse(&Pmf2D::delta(10, 10, 4, 7));
        assert_eq!((b.cx, b.cy), (7.0, 4.0));
        assert_eq!((b.half_len, b.half_wid), (0.0, 0.0));
    }

    #[test]
    fn box_normalizes_axes() {
        let b = OrientedBox::new(0.0, 0.0, 1.0, 3.0, 0.0);
        assert_eq!(b.half_len, 3.0);
        assert_relative_eq!(b.angle, PI / 2.0);
        let b = OrientedBox::new(0.0, 0.0, 3.0, 1.0, -0.25);
        assert_relative_eq!(b.angle, PI - 0.25);
        assert_relative_eq!(b.abs_inclination(), 0.25);
    }
}
