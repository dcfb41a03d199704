use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::pmf::Field;

/// Square crop of side `size` centered on `(cx, cy)` (column, row) in grid
/// pixels, displaced by Gaussian jitter of `jitter_sigma` per axis and
/// masked to a disc of `mask_radius`. The jittered center is clamped to the
/// frame; pixels falling outside the frame read as zero.
pub fn extract_patch<R: Rng + ?Sized>(
    frame: &Field,
    center: (f64, f64),
    size: usize,
    mask_radius: f64,
    jitter_sigma: f64,
    rng: &mut R,
) -> Field {
    let (mut cx, mut cy) = center;
    if jitter_sigma > 0.0 {
        let n = Normal::new(0.0, jitter_sigma).expect("finite jitter");
        cx += n.sample(rng);
        cy += n.sample(rng);
    }
    crop_patch(frame, (cx, cy), size, mask_radius)
}

/// The unjittered crop used online; the center is rounded and clamped.
pub fn crop_patch(frame: &Field, center: (f64, f64), size: usize, mask_radius: f64) -> Field {
    let (cx, cy) = center;
    let cx = cx.round().clamp(0.0, frame.cols().saturating_sub(1) as f64) as isize;
    let cy = cy.round().clamp(0.0, frame.rows().saturating_sub(1) as f64) as isize;
    let h = (size / 2) as isize;
    let r2 = mask_radius * mask_radius;
    Field::from_fn(size, size, |i, j| {
        let (di, dj) = (i as isize - h, j as isize - h);
        if (di * di + dj * dj) as f64 > r2 {
            0.0
        } else {
            frame.get_or_zero(cy + di, cx + dj)
        }
    })
}
