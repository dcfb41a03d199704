//! Detection scoring: oriented-box overlap, optimal frame-wise matching and
//! the normalized thresholded detection accuracy.

mod munkres;
mod overlap;

use std::collections::BTreeMap;
use std::fmt::Write as _;

pub use munkres::{max_weight_matching, munkres};
pub use overlap::{clip_convex, overlap, polygon_area};

use crate::error::EvalError;
use crate::pmf::OrientedBox;
use crate::scenegen::ObjectClass;

/// Default overlap threshold for a detection to count.
pub const T_D: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthRecord {
    pub frame: usize,
    pub object_id: usize,
    pub class: ObjectClass,
    pub bbox: OrientedBox,
}

/// A labeled tracker output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub sef_id: usize,
    pub bbox: OrientedBox,
    pub label: ObjectClass,
}

/// Outcome of matching one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt index, detection index, overlap)` for accepted pairs.
    pub pairs: Vec<(usize, usize, f64)>,
    pub counts: FrameCounts,
}

/// Ground truth, miss and false-alarm counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FrameCounts {
    pub gt: usize,
    pub fn_: usize,
    pub fp: usize,
}

impl std::ops::AddAssign for FrameCounts {
    fn add_assign(&mut self, o: Self) {
        self.gt += o.gt;
        self.fn_ += o.fn_;
        self.fp += o.fp;
    }
}

impl FrameCounts {
    pub fn nmotda(&self) -> Result<f64, EvalError> {
        nmotda(std::slice::from_ref(self))
    }
}

/// Maximum-total-overlap one-to-one assignment; assigned pairs below `t_d`
/// are then dropped and count as a miss and a false alarm.
pub fn match_frame(gts: &[OrientedBox], dets: &[OrientedBox], t_d: f64) -> FrameMatch {
    let w: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| dets.iter().map(|d| overlap(g, d)).collect())
        .collect();
    let pairs: Vec<(usize, usize, f64)> = max_weight_matching(&w, dets.len())
        .into_iter()
        .map(|(g, d)| (g, d, w[g][d]))
        .filter(|&(_, _, o)| o >= t_d)
        .collect();
    FrameMatch {
        counts: FrameCounts {
            gt: gts.len(),
            fn_: gts.len() - pairs.len(),
            fp: dets.len() - pairs.len(),
        },
        pairs,
    }
}

/// `1 − (ΣFN + ΣFP) / ΣGT` over a sequence.
pub fn nmotda(counts: &[FrameCounts]) -> Result<f64, EvalError> {
    let mut total = FrameCounts::default();
    for c in counts {
        total += *c;
    }
    if total.gt == 0 {
        return Err(EvalError::ZeroGt);
    }
    Ok(1.0 - (total.fn_ + total.fp) as f64 / total.gt as f64)
}

/// Ground-truth-weighted mean of per-sequence scores `(nmotda, gt)`.
pub fn wnmotda(per_seq: &[(f64, usize)]) -> Result<f64, EvalError> {
    if per_seq.is_empty() {
        return Err(EvalError::NoSequences);
    }
    let w: usize = per_seq.iter().map(|s| s.1).sum();
    if w == 0 {
        return Err(EvalError::ZeroGt);
    }
    Ok(per_seq.iter().map(|&(s, g)| s * g as f64).sum::<f64>() / w as f64)
}

/// One-to-one mapping of trackers to objects maximizing the overlap summed
/// over the whole sequence. Only pairs with positive total overlap map.
pub fn sequence_assignment(tracks: &[Detection], gts: &[GroundTruthRecord]) -> BTreeMap<usize, usize> {
    let sef_ids: Vec<usize> = dedup_sorted(tracks.iter().map(|t| t.sef_id));
    let obj_ids: Vec<usize> = dedup_sorted(gts.iter().map(|g| g.object_id));
    let sef_ix: BTreeMap<usize, usize> = sef_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let obj_ix: BTreeMap<usize, usize> = obj_ids.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    let mut acc = vec![vec![0.0; obj_ids.len()]; sef_ids.len()];
    let gt_by_frame = group_by_frame(gts.iter().map(|g| (g.frame, g)));
    for t in tracks {
        if let Some(frame_gts) = gt_by_frame.get(&t.frame) {
            for g in frame_gts {
                acc[sef_ix[&t.sef_id]][obj_ix[&g.object_id]] += overlap(&t.bbox, &g.bbox);
            }
        }
    }
    max_weight_matching(&acc, obj_ids.len())
        .into_iter()
        .map(|(s, o)| (sef_ids[s], obj_ids[o]))
        .collect()
}

fn dedup_sorted(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn group_by_frame<T>(it: impl Iterator<Item = (usize, T)>) -> BTreeMap<usize, Vec<T>> {
    let mut m: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for (f, x) in it {
        m.entry(f).or_default().push(x);
    }
    m
}

/// The object classes that are scored.
pub const SCORED_CLASSES: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Person, ObjectClass::Cyclist];

/// Per-class and class-agnostic counts for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceReport {
    pub name: String,
    pub per_class: BTreeMap<ObjectClass, FrameCounts>,
    /// Counts with class labels ignored.
    pub average: FrameCounts,
}

/// Scores one sequence. Detections labeled `Clutter` are discarded first;
/// each class matches its own ground truth against detections carrying its
/// label, and the average matches everything regardless of label.
pub fn evaluate_sequence(
    name: &str,
    dets: &[Detection],
    gts: &[GroundTruthRecord],
    t_d: f64,
) -> SequenceReport {
    let dets: Vec<&Detection> = dets.iter().filter(|d| d.label != ObjectClass::Clutter).collect();
    let det_frames = group_by_frame(dets.iter().map(|d| (d.frame, *d)));
    let gt_frames = group_by_frame(gts.iter().map(|g| (g.frame, g)));
    let frames: Vec<usize> = dedup_sorted(det_frames.keys().chain(gt_frames.keys()).copied());
    let mut per_class: BTreeMap<ObjectClass, FrameCounts> =
        SCORED_CLASSES.iter().map(|&c| (c, FrameCounts::default())).collect();
    let mut average = FrameCounts::default();
    let empty_d = Vec::new();
    let empty_g = Vec::new();
    for f in frames {
        let fd = det_frames.get(&f).unwrap_or(&empty_d);
        let fg = gt_frames.get(&f).unwrap_or(&empty_g);
        for &class in &SCORED_CLASSES {
            let g: Vec<OrientedBox> = fg.iter().filter(|g| g.class == class).map(|g| g.bbox).collect();
            let d: Vec<OrientedBox> = fd.iter().filter(|d| d.label == class).map(|d| d.bbox).collect();
            *per_class.get_mut(&class).unwrap() += match_frame(&g, &d, t_d).counts;
        }
        let g: Vec<OrientedBox> = fg.iter().map(|g| g.bbox).collect();
        let d: Vec<OrientedBox> = fd.iter().map(|d| d.bbox).collect();
        average += match_frame(&g, &d, t_d).counts;
    }
    SequenceReport {
        name: name.to_string(),
        per_class,
        average,
    }
}

/// Scores across sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub sequences: Vec<SequenceReport>,
}

impl EvalReport {
    /// Weighted score of one class across sequences where it is present;
    /// `None` for the label-agnostic average.
    pub fn wnmotda(&self, class: Option<ObjectClass>) -> Result<f64, EvalError> {
        let per: Vec<(f64, usize)> = self
            .sequences
            .iter()
            .map(|s| match class {
                Some(c) => s.per_class[&c],
                None => s.average,
            })
            .filter_map(|c| c.nmotda().ok().map(|v| (v, c.gt)))
            .collect();
        wnmotda(&per)
    }

    /// One row per sequence and class: `sequence,class,gt,fn,fp,nmotda`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,class,gt,fn,fp,nmotda\n");
        for s in &self.sequences {
            let rows = s
                .per_class
                .iter()
                .map(|(c, n)| (c.name(), *n))
                .chain(std::iter::once(("Average", s.average)));
            for (name, c) in rows {
                let score = c.nmotda().map(|v| format!("{v:.6}")).unwrap_or_default();
                writeln!(out, "{},{},{},{},{},{}", s.name, name, c.gt, c.fn_, c.fp, score).unwrap();
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<16} {:<8} {:>8} {:>8} {:>8} {:>9}", "sequence", "class", "GT", "FN", "FP", "NMOTDA").unwrap();
        for s in &self.sequences {
            let rows = s
                .per_class
                .iter()
                .map(|(c, n)| (c.name(), *n))
                .chain(std::iter::once(("Average", s.average)));
            for (name, c) in rows {
                let score = c.nmotda().map(|v| format!("{v:.4}")).unwrap_or_else(|_| "-".into());
                writeln!(out, "{:<16} {:<8} {:>8} {:>8} {:>8} {:>9}", s.name, name, c.gt, c.fn_, c.fp, score).unwrap();
            }
        }
        let classes = SCORED_CLASSES.iter().map(|&c| (c.name(), Some(c)));
        for (name, c) in classes.chain(std::iter::once(("Average", None))) {
            let score = self.wnmotda(c).map(|v| format!("{v:.4}")).unwrap_or_else(|_| "-".into());
            writeln!(out, "WNMOTDA {name:<8} {score}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sq(cx: f64) -> OrientedBox {
        OrientedBox::new(cx, 0.0, 0.5, 0.5, 0.0)
    }

    #[test]
    fn frame_matching_thresholds() {
        // overlap 1/3 passes T_d = 0.2
        let m = match_frame(&[sq(0.0)], &[sq(0.5)], T_D);
        assert_eq!(m.counts, FrameCounts { gt: 1, fn_: 0, fp: 0 });
        // overlap 0.1/1.9 ≈ 0.053 fails
        let m = match_frame(&[sq(0.0)], &[sq(0.9)], T_D);
        assert_eq!(m.counts, FrameCounts { gt: 1, fn_: 1, fp: 1 });
    }

    #[test]
    fn nmotda_arithmetic() {
        let c = FrameCounts { gt: 871, fn_: 41, fp: 0 };
        assert_eq!(format!("{:.6}", c.nmotda().unwrap()), "0.952928");
        assert_eq!(FrameCounts { gt: 5, fn_: 0, fp: 0 }.nmotda().unwrap(), 1.0);
        assert_eq!(FrameCounts::default().nmotda(), Err(EvalError::ZeroGt));
    }

    #[test]
    fn wnmotda_examples() {
        assert_eq!(wnmotda(&[(0.7, 10)]).unwrap(), 0.7);
        assert_eq!(wnmotda(&[(0.0, 4), (1.0, 4)]).unwrap(), 0.5);
        assert_relative_eq!(wnmotda(&[(0.9, 1), (0.6, 2), (0.3, 3)]).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(wnmotda(&[]), Err(EvalError::NoSequences));
    }

    #[test]
    fn sequence_assignment_cases() {
        let gt = |f, id| GroundTruthRecord {
            frame: f,
            object_id: id,
            class: ObjectClass::Car,
            bbox: sq(10.0 * id as f64),
        };
        let det = |f, sef, cx| Detection {
            frame: f,
            sef_id: sef,
            bbox: sq(cx),
            label: ObjectClass::Car,
        };
        let gts = vec![gt(0, 0), gt(1, 0)];
        let tracks = vec![det(0, 3, 0.0), det(1, 3, 0.0), det(0, 5, 50.0)];
        let m = sequence_assignment(&tracks, &gts);
        assert_eq!(m.get(&3), Some(&0));
        assert_eq!(m.get(&5), None);
    }

    #[test]
    fn clutter_labels_are_ignored() {
        let gts = vec![GroundTruthRecord {
            frame: 0,
            object_id: 0,
            class: ObjectClass::Person,
            bbox: sq(0.0),
        }];
        let dets = vec![
            Detection { frame: 0, sef_id: 0, bbox: sq(0.0), label: ObjectClass::Person },
            Detection { frame: 0, sef_id: 1, bbox: sq(9.0), label: ObjectClass::Clutter },
            Detection { frame: 0, sef_id: 2, bbox: sq(20.0), label: ObjectClass::Car },
        ];
        let r = evaluate_sequence("s", &dets, &gts, T_D);
        assert_eq!(r.per_class[&ObjectClass::Person], FrameCounts { gt: 1, fn_: 0, fp: 0 });
        assert_eq!(r.per_class[&ObjectClass::Car], FrameCounts { gt: 0, fn_: 0, fp: 1 });
        assert_eq!(r.average, FrameCounts { gt: 1, fn_: 0, fp: 1 });
    }
}
