//! Glue between the tracker and the classifiers: training patch sampling,
//! per-filter samples and online labeling.

use rand::Rng;

use crate::cactus::TrackFrameOutput;
use crate::classify::{argmax_lowest, crop_patch, extract_patch, Ensemble, ScnnConfig, ScnnModel, SefSample};
use crate::eval::GroundTruthRecord;
use crate::features::Frame;
use crate::pipeline::{downscale_point, TrackError, TrackedFrame, Tracker};
use crate::pmf::{Field, OrientedBox};
use crate::scenegen::ObjectClass;
use crate::sef::SefState;

/// A patch request: frame index, center in input pixels, class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSpec {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub label: ObjectClass,
}

fn near_box(b: &OrientedBox, x: f64, y: f64, clearance: f64) -> bool {
    let (s, c) = b.angle.sin_cos();
    let (dx, dy) = (x - b.cx, y - b.cy);
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    u.abs() <= b.half_len + clearance && v.abs() <= b.half_wid + clearance
}

/// `per_class` requests for every object class present in `gts` (drawn
/// with replacement from its records) and as many Clutter requests at
/// random positions at least `clearance` input pixels outside every
/// ground-truth box of that frame.
pub fn balanced_patch_specs<R: Rng + ?Sized>(
    gts: &[GroundTruthRecord],
    n_frames: usize,
    size: (usize, usize),
    per_class: usize,
    clearance: f64,
    rng: &mut R,
) -> Vec<PatchSpec> {
    let mut out = Vec::new();
    for class in ObjectClass::ALL.into_iter().filter(|&c| c != ObjectClass::Clutter) {
        let pool: Vec<&GroundTruthRecord> = gts.iter().filter(|g| g.class == class && g.frame < n_frames).collect();
        if pool.is_empty() {
            continue;
        }
        for _ in 0..per_class {
            let g = pool[rng.gen_range(0..pool.len())];
            out.push(PatchSpec {
                frame: g.frame,
                cx: g.bbox.cx,
                cy: g.bbox.cy,
                label: class,
            });
        }
    }
    if n_frames == 0 {
        return out;
    }
    let mut placed = 0;
    let mut attempts = 0;
    while placed < per_class && attempts < 1000 * per_class.max(1) {
        attempts += 1;
        let frame = rng.gen_range(0..n_frames);
        let x = rng.gen_range(0.0..size.0 as f64);
        let y = rng.gen_range(0.0..size.1 as f64);
        if gts.iter().any(|g| g.frame == frame && near_box(&g.bbox, x, y, clearance)) {
            continue;
        }
        out.push(PatchSpec {
            frame,
            cx: x,
            cy: y,
            label: ObjectClass::Clutter,
        });
        placed += 1;
    }
    out
}

/// Jittered, masked patches from preprocessed frames (indexed by frame).
pub fn extract_training_patches<R: Rng + ?Sized>(
    frames: &[Field],
    specs: &[PatchSpec],
    cfg: &ScnnConfig,
    downsample: usize,
    rng: &mut R,
) -> (Vec<Field>, Vec<usize>) {
    specs
        .iter()
        .map(|s| {
            let (x, y) = downscale_point(s.cx, s.cy, downsample);
            let p = extract_patch(&frames[s.frame], (x, y), cfg.patch_size, cfg.mask_radius, cfg.jitter_sigma, rng);
            (p, s.label.id())
        })
        .unzip()
}

/// Scores the patch under every filter's box and gathers its state.
pub fn sef_samples(tracked: &TrackedFrame, states: &[SefState], scnn: &ScnnModel, downsample: usize) -> Vec<SefSample> {
    let grid = &tracked.preprocessed.gray;
    let cfg = &scnn.config;
    let patches: Vec<Field> = tracked
        .outputs
        .iter()
        .map(|o| {
            let c = downscale_point(o.bbox.cx, o.bbox.cy, downsample);
            crop_patch(grid, c, cfg.patch_size, cfg.mask_radius)
        })
        .collect();
    let scores = scnn.scores_batch(&patches);
    tracked
        .outputs
        .iter()
        .zip(scores)
        .map(|(o, scores)| SefSample {
            frame: o.frame,
            sef_id: o.sef_id,
            bbox: o.bbox,
            energy: o.energy,
            scores,
            shape: states[o.sef_id].s_s.values().to_vec(),
        })
        .collect()
}

/// Class of an output index; indices past the named classes are Clutter.
pub fn class_of(id: usize) -> ObjectClass {
    ObjectClass::from_id(id).unwrap_or(ObjectClass::Clutter)
}

/// The S-CNN decision alone.
pub fn label_scnn(sample: &SefSample) -> ObjectClass {
    class_of(argmax_lowest(&sample.scores))
}

pub fn label_ensemble(sample: &SefSample, ensemble: &Ensemble) -> ObjectClass {
    class_of(ensemble.predict(&sample.scores, &sample.bbox, sample.energy, &sample.shape).0)
}

/// Tracks and labels every filter, frame by frame.
pub struct Recognizer {
    pub tracker: Tracker,
    pub scnn: ScnnModel,
    pub ensemble: Option<Ensemble>,
}

impl Recognizer {
    /// Every filter's output for the frame with its class.
    pub fn push(&mut self, frame: &Frame) -> Result<Vec<(TrackFrameOutput, ObjectClass)>, TrackError> {
        let tracked = self.tracker.push(frame)?;
        let states = self.tracker.cactus().expect("tracker initialized by push").states();
        let samples = sef_samples(&tracked, states, &self.scnn, self.tracker.downsample());
        let labels: Vec<ObjectClass> = match &self.ensemble {
            Some(e) => e.predict_batch(&samples).into_iter().map(|(c, _)| class_of(c)).collect(),
            None => samples.iter().map(label_scnn).collect(),
        };
        Ok(tracked.outputs.into_iter().zip(labels).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt(frame: usize, id: usize, class: ObjectClass, x: f64) -> GroundTruthRecord {
        GroundTruthRecord {
            frame,
            object_id: id,
            class,
            bbox: OrientedBox::new(x, 50.0, 20.0, 10.0, 0.0),
        }
    }

    #[test]
    fn specs_are_balanced_and_clear() {
        let gts: Vec<GroundTruthRecord> = (0..5)
            .flat_map(|f| [gt(f, 0, ObjectClass::Car, 40.0), gt(f, 1, ObjectClass::Person, 140.0)])
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs = balanced_patch_specs(&gts, 5, (200, 100), 25, 10.0, &mut rng);
        let count = |c| specs.iter().filter(|s| s.label == c).count();
        assert_eq!(count(ObjectClass::Car), 25);
        assert_eq!(count(ObjectClass::Person), 25);
        assert_eq!(count(ObjectClass::Cyclist), 0);
        assert_eq!(count(ObjectClass::Clutter), 25);
        for s in specs.iter().filter(|s| s.label == ObjectClass::Clutter) {
            assert!(gts.iter().filter(|g| g.frame == s.frame).all(|g| !near_box(&g.bbox, s.cx, s.cy, 10.0)));
        }
    }

    #[test]
    fn extra_outputs_are_clutter() {
        assert_eq!(class_of(1), ObjectClass::Person);
        assert_eq!(class_of(5), ObjectClass::Clutter);
    }
}
