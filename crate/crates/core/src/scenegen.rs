//! Deterministic synthetic scenes with ground truth.
//!
//! Three object classes are drawn with distinct silhouettes and textures:
//! a disc (person), a rounded rectangle (car) and a disc over a bar
//! (cyclist). Static clutter reuses the same silhouettes and textures in
//! mismatched combinations so that neither cue alone identifies a class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::SceneError;
use crate::eval::GroundTruthRecord;
use crate::features::Frame;
use crate::pmf::{Moments, OrientedBox};

/// Object classes known to the recognizer. `Clutter` labels anything that
/// is not one of the object classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Person,
    Cyclist,
    Clutter,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::Person,
        ObjectClass::Cyclist,
        ObjectClass::Clutter,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Person => "Person",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::Clutter => "Clutter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Silhouettes available to objects and clutter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Silhouette {
    Disc,
    RoundedRect,
    DiscBar,
    /// Thin upright bar, used for occluders.
    Pole,
}

/// Surface patterns in object-local coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    /// Horizontal bright stripes.
    Stripes,
    /// Dark checkerboard.
    Checker,
    /// Bright diagonal stripes.
    Diagonal,
    Plain,
}

impl Silhouette {
    pub fn of(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Person => Silhouette::Disc,
            ObjectClass::Car => Silhouette::RoundedRect,
            ObjectClass::Cyclist => Silhouette::DiscBar,
            ObjectClass::Clutter => Silhouette::Pole,
        }
    }

    /// Whether the local point `(x, y)` (object axes, y down) lies inside a
    /// silhouette of nominal size `s`.
    fn contains(self, x: f64, y: f64, s: f64) -> bool {
        match self {
            Silhouette::Disc => x * x + y * y <= s * s,
            Silhouette::RoundedRect => {
                let (a, b) = (s, 0.55 * s);
                let r = 0.3 * b;
                let (qx, qy) = (x.abs() - (a - r), y.abs() - (b - r));
                if qx <= 0.0 || qy <= 0.0 {
                    x.abs() <= a && y.abs() <= b
                } else {
                    qx * qx + qy * qy <= r * r
                }
            }
            Silhouette::DiscBar => {
                let r = 0.75 * s;
                let (dx, dy) = (x, y + 0.25 * s);
                let head = dx * dx + dy * dy <= r * r;
                let bar = x.abs() <= 0.9 * s && (y - 0.35 * s).abs() <= 0.3 * s;
                head || bar
            }
            Silhouette::Pole => x.abs() <= 0.2 * s && y.abs() <= 2.0 * s,
        }
    }

    /// Radius of a circle enclosing the silhouette.
    fn reach(self, s: f64) -> f64 {
        match self {
            Silhouette::Disc => s,
            Silhouette::RoundedRect => (1.0 + 0.55f64.powi(2)).sqrt() * s,
            Silhouette::DiscBar => 1.2 * s,
            Silhouette::Pole => 2.01 * s,
        }
    }
}

impl Texture {
    pub fn of(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Person => Texture::Stripes,
            ObjectClass::Car => Texture::Checker,
            ObjectClass::Cyclist => Texture::Diagonal,
            ObjectClass::Clutter => Texture::Plain,
        }
    }

    fn value(self, x: f64, y: f64) -> f64 {
        match self {
            Texture::Stripes => {
                if (y / 3.0).floor().rem_euclid(2.0) == 0.0 {
                    225.0
                } else {
                    165.0
                }
            }
            Texture::Checker => {
                let k = (x / 5.0).floor() + (y / 5.0).floor();
                if k.rem_euclid(2.0) == 0.0 {
                    30.0
                } else {
                    95.0
                }
            }
            Texture::Diagonal => {
                if ((x + y) / 4.0).floor().rem_euclid(2.0) == 0.0 {
                    240.0
                } else {
                    140.0
                }
            }
            Texture::Plain => 200.0,
        }
    }
}

fn default_true() -> bool {
    true
}

/// A moving (or stationary) object with ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    /// Nominal size in px: disc radius, half-length of a car, and so on.
    pub size: f64,
    /// Center at frame 0 as `[x, y]` (column, row).
    pub start: [f64; 2],
    /// Displacement per frame as `[dx, dy]`.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Long-axis orientation in radians.
    #[serde(default)]
    pub angle: f64,
    /// Overrides the class texture.
    #[serde(default)]
    pub texture: Option<Texture>,
    /// First and one-past-last frame in which the object exists.
    #[serde(default)]
    pub frames: Option<[usize; 2]>,
}

/// A static distractor without ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterSpec {
    pub silhouette: Silhouette,
    pub texture: Texture,
    pub size: f64,
    pub center: [f64; 2],
    #[serde(default)]
    pub angle: f64,
    /// Drawn after the objects, so it hides them.
    #[serde(default)]
    pub on_top: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    #[serde(default = "default_background")]
    pub background: f64,
    /// Amplitude of the static background texture.
    #[serde(default = "default_background_texture")]
    pub background_texture: f64,
    /// Per-frame additive Gaussian noise.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub clutter: Vec<ClutterSpec>,
    /// Reject objects that leave the frame; when false they are clipped.
    #[serde(default = "default_true")]
    pub strict_bounds: bool,
}

fn default_background() -> f64 {
    110.0
}
fn default_background_texture() -> f64 {
    8.0
}
fn default_noise() -> f64 {
    3.0
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::InvalidSpec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene spec serializes")
    }
}

/// Supersampling factor per axis for coverage.
const SUPERSAMPLE: usize = 4;

struct Stamp {
    silhouette: Silhouette,
    texture: Texture,
    size: f64,
    center: (f64, f64),
    angle: f64,
}

impl Stamp {
    fn paint(&self, img: &mut [f64], width: usize, height: usize) {
        let reach = self.silhouette.reach(self.size) + 1.0;
        let (cx, cy) = self.center;
        let c0 = ((cx - reach).floor().max(0.0)) as usize;
        let c1 = ((cx + reach).ceil() as usize + 1).min(width);
        let r0 = ((cy - reach).floor().max(0.0)) as usize;
        let r1 = ((cy + reach).ceil() as usize + 1).min(height);
        let (sn, cs) = self.angle.sin_cos();
        let n = SUPERSAMPLE;
        let step = 1.0 / n as f64;
        for r in r0..r1 {
            for c in c0..c1 {
                let mut inside = 0usize;
                let mut tex = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        // pixel (r, c) covers [c-0.5, c+0.5] × [r-0.5, r+0.5]
                        let px = c as f64 - 0.5 + (j as f64 + 0.5) * step - cx;
                        let py = r as f64 - 0.5 + (i as f64 + 0.5) * step - cy;
                        let (lx, ly) = (cs * px + sn * py, -sn * px + cs * py);
                        if self.silhouette.contains(lx, ly, self.size) {
                            inside += 1;
                            tex += self.texture.value(lx + 64.0, ly + 64.0);
                        }
                    }
                }
                if inside > 0 {
                    let a = inside as f64 / (n * n) as f64;
                    let i = r * width + c;
                    img[i] = (1.0 - a) * img[i] + tex / (n * n) as f64;
                }
            }
        }
    }
}

/// Second moments of a silhouette in its own axes, from a fine sampling.
fn silhouette_moments(s: Silhouette, size: f64) -> Moments {
    let reach = s.reach(size);
    let n = 512usize;
    let step = 2.0 * reach / n as f64;
    let (mut m, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let y = -reach + (i as f64 + 0.5) * step;
        for j in 0..n {
            let x = -reach + (j as f64 + 0.5) * step;
            if s.contains(x, y, size) {
                m += 1.0;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
        }
    }
    let (mx, my) = (sx / m, sy / m);
    Moments {
        mean_x: mx,
        mean_y: my,
        var_x: sxx / m - mx * mx,
        var_y: syy / m - my * my,
        cov_xy: sxy / m - mx * my,
        point_mass: false,
    }
}

/// Ground-truth box of a silhouette centered at `(cx, cy)` and rotated by
/// `angle`: the 2σ moment ellipse of its area.
pub fn silhouette_box(s: Silhouette, size: f64, center: (f64, f64), angle: f64) -> OrientedBox {
    let m = silhouette_moments(s, size);
    let (sn, cs) = angle.sin_cos();
    // rotate local moments into image axes (x right, y down)
    let (a, b, c) = (m.var_x, m.cov_xy, m.var_y);
    let var_x = cs * cs * a - 2.0 * sn * cs * b + sn * sn * c;
    let var_y = sn * sn * a + 2.0 * sn * cs * b + cs * cs * c;
    let cov = sn * cs * (a - c) + (cs * cs - sn * sn) * b;
    let mean_x = center.0 + cs * m.mean_x - sn * m.mean_y;
    let mean_y = center.1 + sn * m.mean_x + cs * m.mean_y;
    Moments {
        mean_x,
        mean_y,
        var_x,
        var_y,
        cov_xy: cov,
        point_mass: false,
    }
    .to_box(2.0)
}

/// A generated scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub frames: Vec<Frame>,
    pub ground_truth: Vec<GroundTruthRecord>,
}

fn object_center(o: &ObjectSpec, t: usize) -> (f64, f64) {
    (
        o.start[0] + t as f64 * o.velocity[0],
        o.start[1] + t as f64 * o.velocity[1],
    )
}

fn alive(o: &ObjectSpec, t: usize) -> bool {
    o.frames.map_or(true, |[a, b]| t >= a && t < b)
}

fn validate(spec: &SceneSpec) -> Result<(), SceneError> {
    if spec.width == 0 || spec.height == 0 {
        return Err(SceneError::InvalidSpec("frame dimensions must be positive".into()));
    }
    for (i, o) in spec.objects.iter().enumerate() {
        if !(o.size > 0.0) {
            return Err(SceneError::InvalidSpec(format!("object {i} has non-positive size")));
        }
        if o.class == ObjectClass::Clutter {
            return Err(SceneError::InvalidSpec(format!("object {i} cannot have class clutter")));
        }
        if !spec.strict_bounds {
            continue;
        }
        let reach = Silhouette::of(o.class).reach(o.size);
        for t in (0..spec.n_frames).filter(|&t| alive(o, t)) {
            let (x, y) = object_center(o, t);
            if x - reach < -0.5
                || y - reach < -0.5
                || x + reach > spec.width as f64 - 0.5
                || y + reach > spec.height as f64 - 0.5
            {
                return Err(SceneError::ObjectOutOfFrame { index: i, frame: t });
            }
        }
    }
    Ok(())
}

/// Static background: base level plus smoothed seeded speckle.
fn background(spec: &SceneSpec) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    let raw: Vec<f64> = (0..w * h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let rad = 2isize;
    let mut out = vec![0.0; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut s = 0.0;
            let mut n = 0.0f64;
            for dr in -rad..=rad {
                for dc in -rad..=rad {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                        s += raw[rr as usize * w + cc as usize];
                        n += 1.0;
                    }
                }
            }
            // the box average of unit noise has sd 1/sqrt(n)
            out[r as usize * w + c as usize] = spec.background + spec.background_texture * s / n.sqrt();
        }
    }
    out
}

/// Renders every frame and the ground truth of every live object.
pub fn generate(spec: &SceneSpec) -> Result<Scene, SceneError> {
    validate(spec)?;
    let (w, h) = (spec.width, spec.height);
    let mut base = background(spec);
    for cl in spec.clutter.iter().filter(|c| !c.on_top) {
        stamp_clutter(cl).paint(&mut base, w, h);
    }
    let boxes: Vec<OrientedBox> = spec
        .objects
        .iter()
        .map(|o| silhouette_box(Silhouette::of(o.class), o.size, (0.0, 0.0), o.angle))
        .collect();
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut gt = Vec::new();
    for t in 0..spec.n_frames {
        let mut img = base.clone();
        for (id, o) in spec.objects.iter().enumerate().filter(|(_, o)| alive(o, t)) {
            let center = object_center(o, t);
            Stamp {
                silhouette: Silhouette::of(o.class),
                texture: o.texture.unwrap_or(Texture::of(o.class)),
                size: o.size,
                center,
                angle: o.angle,
            }
            .paint(&mut img, w, h);
            let b = boxes[id];
            gt.push(GroundTruthRecord {
                frame: t,
                object_id: id,
                class: o.class,
                bbox: OrientedBox {
                    cx: b.cx + center.0,
                    cy: b.cy + center.1,
                    ..b
                },
            });
        }
        for cl in spec.clutter.iter().filter(|c| c.on_top) {
            stamp_clutter(cl).paint(&mut img, w, h);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(t as u64);
        let data = img
            .iter()
            .map(|&v| {
                let n: f64 = rng.sample(StandardNormal);
                (v + spec.noise_sigma * n).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        frames.push(Frame::gray(w, h, data));
    }
    Ok(Scene {
        frames,
        ground_truth: gt,
    })
}

fn stamp_clutter(cl: &ClutterSpec) -> Stamp {
    Stamp {
        silhouette: cl.silhouette,
        texture: cl.texture,
        size: cl.size,
        center: (cl.center[0], cl.center[1]),
        angle: cl.angle,
    }
}

/// Area of a silhouette, by the same fine sampling used for its moments.
pub fn silhouette_area(s: Silhouette, size: f64) -> f64 {
    let reach = s.reach(size);
    let n = 512usize;
    let step = 2.0 * reach / n as f64;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (-reach + (j as f64 + 0.5) * step, -reach + (i as f64 + 0.5) * step);
            if s.contains(x, y, size) {
                count += 1;
            }
        }
    }
    count as f64 * step * step
}
