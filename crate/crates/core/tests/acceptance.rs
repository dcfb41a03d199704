//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 3 5`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cactus::cactus::{association_masses, attention_masks, Cactus, CactusConfig};
use cactus::classify::{
    assemble_slfn_features, build_slfn_training_set, expand_pairs, Ensemble, FeatNorm, ScnnConfig, ScnnModel,
    SefSample, SlfnConfig,
};
use cactus::eval::{
    evaluate_sequence, match_frame, max_weight_matching, munkres, overlap, Detection, FrameCounts, GroundTruthRecord,
    T_D,
};
use cactus::features::{preprocess, FeatureStack, FilterBank, MhiParams, PreprocessParams};
use cactus::pipeline::{downscale_point, Tracker};
use cactus::pmf::{argmax, gaussian_pmf, ConvPolicy, Grid2D, OrientedBox, Pmf2D};
use cactus::recognition::{
    balanced_patch_specs, class_of, extract_training_patches, label_scnn, sef_samples,
};
use cactus::scenegen::{generate, ClutterSpec, ObjectClass, ObjectSpec, Scene, SceneSpec, Silhouette, Texture};
use cactus::sef::{match_and_gate, new_sef, smooth_shape, vigilance, SefParams, SefPriors, SefUpdate, ShapeMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail, notes: Vec::new() }
    }

    fn note(mut self, n: String) -> Self {
        self.notes.push(n);
        self
    }
}

type Check = fn() -> Outcome;

fn main() {
    // panics inside a check are reported on its line
    std::panic::set_hook(Box::new(|_| {}));
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let checks: [(&str, Check); 11] = [
        ("kernel oracle", kernel_oracle),
        ("pmf conservation", pmf_conservation),
        ("single-target lock", single_target_lock),
        ("competition", competition),
        ("occlusion", occlusion),
        ("metric arithmetic", metric_arithmetic),
        ("s-cnn accuracy", scnn_accuracy),
        ("ensemble lift", ensemble_lift),
        ("feature expansion", feature_expansion),
        ("vigilance gate", vigilance_gate),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Outcome::new(false, format!("panicked: {}", panic_text(&e))));
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {n:>2} {name}: {} ({:.1?})", out.detail, t0.elapsed());
        for note in &out.notes {
            println!("        {note}");
        }
        if !out.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn within(limit: Duration, t0: Instant) -> bool {
    t0.elapsed() < limit
}

// ---------------------------------------------------------------------------
// 1

fn random_grid(rng: &mut ChaCha8Rng, max: usize) -> Grid2D {
    let (r, c) = (rng.gen_range(1..=max), rng.gen_range(1..=max));
    Grid2D::from_vec(r, c, (0..r * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn max_abs_diff(a: &Grid2D, b: &Grid2D) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn kernel_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (direct, spectral) = (ConvPolicy::direct(), ConvPolicy::spectral());
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let a = random_grid(&mut rng, 64);
        let b = random_grid(&mut rng, 64);
        worst = worst.max(max_abs_diff(&direct.convolve(&a, &b), &spectral.convolve(&a, &b)));
        worst = worst.max(max_abs_diff(&direct.cross_correlate(&a, &b), &spectral.cross_correlate(&a, &b)));
    }
    let secs = t0.elapsed();
    Outcome::new(
        worst <= 1e-10 && within(Duration::from_secs(10), t0),
        format!("200 grid pairs, max |direct - spectral| = {worst:.2e}, {secs:.1?} (limits 1e-10, 10 s)"),
    )
}

// ---------------------------------------------------------------------------
// 2

fn pmf_conservation() -> Outcome {
    let t0 = Instant::now();
    let dims = (128, 128);
    let n_maps = 25;
    let cfg = CactusConfig { k: 8, grid: None, ..Default::default() };
    let mut cactus = Cactus::new(cfg, dims, n_maps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mass_err, mut share_err) = (0.0f64, 0.0f64);
    let unit = |p: &Pmf2D| (p.sum() - 1.0).abs();
    for _ in 0..1000 {
        let maps = (0..n_maps)
            .map(|_| Grid2D::from_fn(dims.0, dims.1, |_, _| rng.gen::<f64>()))
            .collect();
        let stack = FeatureStack::new(maps);
        let preds = cactus.predict_all();
        for shares in [
            attention_masks(&preds.iter().map(|p| &p.i_p).collect::<Vec<_>>()),
            association_masses(&preds.iter().map(|p| &p.x_p).collect::<Vec<_>>()),
        ] {
            for i in 0..dims.0 * dims.1 {
                let total: f64 = shares.iter().map(|s| s.values()[i]).sum();
                share_err = share_err.max((total - 1.0).abs());
            }
        }
        for p in &preds {
            mass_err = [&p.v_p, &p.x_p, &p.s_p, &p.i_p].into_iter().map(unit).fold(mass_err, f64::max);
        }
        cactus.update_all(&stack, &preds);
        for s in cactus.states() {
            mass_err = [&s.x_s, &s.v_s, &s.s_s, &s.i_s].into_iter().map(unit).fold(mass_err, f64::max);
            for f in &s.f_s {
                mass_err = mass_err.max((f.bins().iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let secs = t0.elapsed();
    Outcome::new(
        mass_err <= 1e-9 && share_err <= 1e-9 && within(Duration::from_secs(120), t0),
        format!(
            "1000 frames, K = 8, 128x128: max |mass - 1| = {mass_err:.2e}, max |sum beta - 1|, |sum C - 1| = {share_err:.2e}, {secs:.1?} (limits 1e-9, 2 min)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3, 4, 5

fn object(class: ObjectClass, size: f64, start: [f64; 2], velocity: [f64; 2], angle: f64) -> ObjectSpec {
    ObjectSpec { class, size, start, velocity, angle, texture: None, frames: None }
}

fn scene_640(n_frames: usize, objects: Vec<ObjectSpec>, clutter: Vec<ClutterSpec>) -> Scene {
    let spec = SceneSpec {
        width: 640,
        height: 480,
        n_frames,
        background: 110.0,
        background_texture: 8.0,
        noise_sigma: 3.0,
        seed: 5,
        objects,
        clutter,
        strict_bounds: true,
    };
    generate(&spec).unwrap()
}

fn tracker(k: usize) -> Tracker {
    let cfg = CactusConfig { k, grid: None, ..Default::default() };
    Tracker::new(cfg, FilterBank::gabor(16), PreprocessParams::default(), MhiParams::default())
}

/// Per frame and filter, the distance on the tracker grid between the
/// filter's position maximum and the truth of `object`.
fn argmax_errors(scene: &Scene, k: usize, object: usize) -> Vec<Vec<f64>> {
    let mut tr = tracker(k);
    scene
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            tr.push(f).unwrap();
            let g = scene.ground_truth.iter().find(|g| g.frame == t && g.object_id == object).unwrap();
            let (tx, ty) = downscale_point(g.bbox.cx, g.bbox.cy, tr.downsample());
            tr.cactus()
                .unwrap()
                .states()
                .iter()
                .map(|s| {
                    let (r, c) = argmax(&s.x_s);
                    (r as f64 - ty).hypot(c as f64 - tx)
                })
                .collect()
        })
        .collect()
}

fn nearest(errs: &[f64]) -> usize {
    (0..errs.len()).min_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap()
}

/// Fraction of frames after burn-in in which the filter nearest at the end
/// of burn-in is within 2 px, and its worst error.
fn lock_rate(velocity: [f64; 2], burn_in: usize) -> (usize, usize, usize, f64) {
    let scene = scene_640(120, vec![object(ObjectClass::Person, 50.0, [161.0, 121.0], velocity, 0.0)], vec![]);
    let errs = argmax_errors(&scene, 4, 0);
    let sef = nearest(&errs[burn_in]);
    let after = &errs[burn_in..];
    let hits = after.iter().filter(|e| e[sef] <= 2.0).count();
    let worst = after.iter().map(|e| e[sef]).fold(0.0, f64::max);
    (sef, hits, after.len(), worst)
}

fn single_target_lock() -> Outcome {
    let (sef, hits, n, worst) = lock_rate([1.6, 0.0], 30);
    let frac = hits as f64 / n as f64;
    let (_, d_hits, d_n, d_worst) = lock_rate([1.5, 0.8], 30);
    Outcome::new(
        frac >= 0.95,
        format!(
            "striped disc at 1.6 px/frame: filter {sef} within 2 px in {hits}/{n} frames after burn-in ({:.1}%, need 95%), worst {worst:.2} px",
            100.0 * frac
        ),
    )
    .note(format!(
        "moving diagonally across its stripes (1.5, 0.8) px/frame the same disc is within 2 px in {d_hits}/{d_n} frames, worst {d_worst:.2} px (not part of the criterion)"
    ))
    .note("distances on the tracker grid (input downsampled by 2)".into())
}

fn competition() -> Outcome {
    let burn_in = 30;
    let scene = scene_640(
        100,
        vec![
            object(ObjectClass::Person, 50.0, [241.0, 121.0], [0.8, 0.3], 0.0),
            object(ObjectClass::Person, 50.0, [401.0, 361.0], [-0.6, -0.2], 0.0),
        ],
        vec![],
    );
    let mut tr = tracker(8);
    let (mut good, mut total) = (0, 0);
    let mut owners: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut shared = 0;
    for (t, f) in scene.frames.iter().enumerate() {
        let out = tr.push(f).unwrap().outputs;
        if t < burn_in {
            continue;
        }
        total += 1;
        let gts: Vec<OrientedBox> = (0..2)
            .map(|o| scene.ground_truth.iter().find(|g| g.frame == t && g.object_id == o).unwrap().bbox)
            .collect();
        let dets: Vec<OrientedBox> = out.iter().map(|o| o.bbox).collect();
        let m = match_frame(&gts, &dets, 0.0);
        let strong: Vec<_> = m.pairs.iter().filter(|p| p.2 > 0.5).collect();
        if strong.len() == 2 {
            good += 1;
        }
        for p in &strong {
            owners[p.0].push(p.1);
        }
        shared += dets.iter().filter(|d| gts.iter().all(|g| overlap(g, d) > 0.5)).count();
    }
    let crossed = owners[0].iter().any(|s| owners[1].contains(s));
    let frac = good as f64 / total as f64;
    let mut ids: Vec<Vec<usize>> = owners.iter().map(|o| o.clone()).collect();
    for v in &mut ids {
        v.sort_unstable();
        v.dedup();
    }
    Outcome::new(
        frac >= 0.9 && !crossed && shared == 0,
        format!(
            "both objects matched with overlap > 0.5 in {good}/{total} frames ({:.1}%, need 90%); filters {:?} / {:?}; shared boxes {shared}",
            100.0 * frac,
            ids[0],
            ids[1]
        ),
    )
}

fn crossing_error(on_top: bool) -> (f64, usize) {
    let pole = ClutterSpec {
        silhouette: Silhouette::Pole,
        texture: Texture::Plain,
        size: 30.0,
        center: [321.0, 121.0],
        angle: 0.0,
        on_top,
    };
    let (x0, vx, size) = (161.0, 1.6, 50.0);
    let scene = scene_640(200, vec![object(ObjectClass::Person, size, [x0, 121.0], [vx, 0.0], 0.0)], vec![pole.clone()]);
    let errs = argmax_errors(&scene, 4, 0);
    // frames in which the object and the distractor are closer than their
    // combined extents
    let reach = size + pole.size;
    let window: Vec<usize> = (0..scene.frames.len())
        .filter(|&t| (x0 + vx * t as f64 - pole.center[0]).abs() <= reach)
        .collect();
    let sef = nearest(&errs[window[0]]);
    let worst = window.iter().map(|&t| errs[t][sef]).fold(0.0, f64::max);
    (worst, window.len())
}

fn occlusion() -> Outcome {
    let (worst, frames) = crossing_error(false);
    let (hidden, _) = crossing_error(true);
    Outcome::new(
        worst <= 3.0,
        format!("object passing a static pole: max error {worst:.2} px over {frames} crossing frames (limit 3 px)"),
    )
    .note(format!("with the pole drawn over the object the max error is {hidden:.2} px (not part of the criterion)"))
    .note("distances on the tracker grid for the filter holding the object when the crossing starts".into())
}

// ---------------------------------------------------------------------------
// 6

fn inside(b: &OrientedBox, x: f64, y: f64) -> bool {
    let (s, c) = b.angle.sin_cos();
    let (dx, dy) = (x - b.cx, y - b.cy);
    (dx * c + dy * s).abs() <= b.half_len && (-dx * s + dy * c).abs() <= b.half_wid
}

/// IoU by counting points of a regular lattice.
fn lattice_overlap(a: &OrientedBox, b: &OrientedBox, n: usize) -> f64 {
    let r = a.half_len.max(b.half_len) * 1.5;
    let (lo_x, hi_x) = (a.cx.min(b.cx) - r, a.cx.max(b.cx) + r);
    let (lo_y, hi_y) = (a.cy.min(b.cy) - r, a.cy.max(b.cy) + r);
    let (mut both, mut any) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let x = lo_x + (hi_x - lo_x) * (i as f64 + 0.5) / n as f64;
            let y = lo_y + (hi_y - lo_y) * (j as f64 + 0.5) / n as f64;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            both += (ia && ib) as usize;
            any += (ia || ib) as usize;
        }
    }
    if any == 0 {
        0.0
    } else {
        both as f64 / any as f64
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox {
    let (a, b) = (rng.gen_range(2.0..12.0), rng.gen_range(2.0..12.0));
    OrientedBox::new(
        rng.gen_range(0.0..20.0),
        rng.gen_range(0.0..20.0),
        f64::max(a, b),
        f64::min(a, b),
        rng.gen_range(0.0..std::f64::consts::PI),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Largest total weight of a one-to-one matching, by enumeration.
fn best_matching(w: &[Vec<f64>], cols: usize) -> f64 {
    let n = w.len().max(cols);
    permutations(n)
        .iter()
        .map(|p| {
            (0..w.len())
                .filter(|&r| p[r] < cols)
                .map(|r| w[r][p[r]])
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn metric_arithmetic() -> Outcome {
    let seq = FrameCounts { gt: 871, fn_: 41, fp: 0 }.nmotda().unwrap();
    let seq_ok = format!("{seq:.6}") == "0.952928";
    let total = FrameCounts { gt: 10452, fn_: 923, fp: 1970 }.nmotda().unwrap();
    let total_ok = (total - 0.723211).abs() <= 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut iou_err = 0.0f64;
    for _ in 0..40 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        iou_err = iou_err.max((overlap(&a, &b) - lattice_overlap(&a, &b, 400)).abs());
    }
    // axis-aligned pairs have a closed form
    let mut aligned_err = 0.0f64;
    for _ in 0..200 {
        let mut a = random_box(&mut rng);
        let mut b = random_box(&mut rng);
        a.angle = 0.0;
        b.angle = 0.0;
        let ix = ((a.cx + a.half_len).min(b.cx + b.half_len) - (a.cx - a.half_len).max(b.cx - b.half_len)).max(0.0);
        let iy = ((a.cy + a.half_wid).min(b.cy + b.half_wid) - (a.cy - a.half_wid).max(b.cy - b.half_wid)).max(0.0);
        let inter = ix * iy;
        let union = 4.0 * (a.half_len * a.half_wid + b.half_len * b.half_wid) - inter;
        aligned_err = aligned_err.max((overlap(&a, &b) - inter / union).abs());
    }

    let mut assign_err = 0.0f64;
    let mut cases = 0;
    for rows in 1..=5 {
        for cols in 1..=5 {
            for _ in 0..20 {
                let gts: Vec<OrientedBox> = (0..rows).map(|_| random_box(&mut rng)).collect();
                let dets: Vec<OrientedBox> = (0..cols).map(|_| random_box(&mut rng)).collect();
                let w: Vec<Vec<f64>> = gts.iter().map(|g| dets.iter().map(|d| overlap(g, d)).collect()).collect();
                let got: f64 = match_frame(&gts, &dets, 0.0).pairs.iter().map(|p| p.2).sum();
                let via_weights: f64 = max_weight_matching(&w, cols).iter().map(|&(r, c)| w[r][c]).sum();
                let want = best_matching(&w, cols);
                assign_err = assign_err.max((got - want).abs()).max((via_weights - want).abs());
                if rows == cols {
                    let cost: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
                    let p = munkres(&cost);
                    let total: f64 = (0..rows).map(|r| cost[r][p[r]]).sum();
                    let best = permutations(rows)
                        .iter()
                        .map(|q| (0..rows).map(|r| cost[r][q[r]]).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    assign_err = assign_err.max((total - best).abs());
                }
                cases += 1;
            }
        }
    }

    let ok = seq_ok && total_ok && iou_err <= 5e-3 && aligned_err <= 1e-12 && assign_err <= 1e-9;
    Outcome::new(
        ok,
        format!(
            "nmotda(871, 41, 0) = {seq:.6}; nmotda(10452, 923, 1970) = {total:.6} (1 - 2893/10452 = 0.723211); IoU vs lattice {iou_err:.1e}, vs closed form {aligned_err:.1e}; assignment vs enumeration {assign_err:.1e} over {cases} cases"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7, 8

fn street(seed: u64, n_frames: usize, mirrored: bool) -> Scene {
    let objects = if mirrored {
        vec![
            object(ObjectClass::Car, 44.0, [380.0, 270.0], [-2.5, -1.0], 2.8),
            object(ObjectClass::Person, 36.0, [100.0, 100.0], [2.0, 1.5], 0.0),
            object(ObjectClass::Cyclist, 34.0, [390.0, 80.0], [-3.0, 0.5], 0.0),
        ]
    } else {
        vec![
            object(ObjectClass::Car, 44.0, [90.0, 80.0], [2.5, 1.0], 0.3),
            object(ObjectClass::Person, 36.0, [400.0, 100.0], [-2.0, 1.5], 0.0),
            object(ObjectClass::Cyclist, 34.0, [100.0, 280.0], [3.0, -0.5], 0.0),
        ]
    };
    let spec = SceneSpec {
        width: 480,
        height: 360,
        n_frames,
        background: 110.0,
        background_texture: 8.0,
        noise_sigma: 3.0,
        seed,
        objects,
        clutter: vec![ClutterSpec {
            silhouette: Silhouette::Pole,
            texture: Texture::Plain,
            size: 30.0,
            center: [240.0, 180.0],
            angle: 0.0,
            on_top: false,
        }],
        strict_bounds: true,
    };
    generate(&spec).unwrap()
}

fn patches(scene: &Scene, per_class: usize, cfg: &ScnnConfig, rng: &mut ChaCha8Rng) -> (Vec<cactus::pmf::Field>, Vec<usize>) {
    let pp = PreprocessParams::default();
    let frames: Vec<_> = scene.frames.iter().map(|f| preprocess(f, &pp).unwrap().gray).collect();
    let (w, h) = (scene.frames[0].width, scene.frames[0].height);
    let specs = balanced_patch_specs(&scene.ground_truth, frames.len(), (w, h), per_class, 30.0, rng);
    extract_training_patches(&frames, &specs, cfg, pp.downsample, rng)
}

fn scnn_accuracy() -> Outcome {
    let t0 = Instant::now();
    let cfg = ScnnConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (train_x, train_y) = patches(&street(1, 60, false), 500, &cfg, &mut rng);
    let mut model = ScnnModel::new(cfg.clone(), FilterBank::gabor(16), 7);
    let train = model.fit(&train_x, &train_y).unwrap();
    let secs = t0.elapsed();
    let (test_x, test_y) = patches(&street(2, 60, false), 100, &cfg, &mut rng);
    let held = model.accuracy(&test_x, &test_y);
    let (mirror_x, mirror_y) = patches(&street(2, 60, true), 100, &cfg, &mut rng);
    let mirrored = model.accuracy(&mirror_x, &mirror_y);
    Outcome::new(
        train >= 0.95 && held >= 0.85 && secs < Duration::from_secs(300),
        format!(
            "{} training patches: train {:.2}%, held-out {:.2}% on {} patches from another scene, training {secs:.1?} (need 95%, 85%, 5 min)",
            train_x.len(),
            100.0 * train,
            100.0 * held,
            test_x.len()
        ),
    )
    .note(format!(
        "held-out scene with mirrored trajectories and car orientation: {:.2}% (not part of the criterion)",
        100.0 * mirrored
    ))
}

fn track_samples(scene: &Scene, k: usize, scnn: &ScnnModel, burn_in: usize) -> Vec<SefSample> {
    let mut tr = tracker(k);
    let mut out = Vec::new();
    for f in &scene.frames {
        let t = tr.push(f).unwrap();
        out.extend(sef_samples(&t, tr.cactus().unwrap().states(), scnn, tr.downsample()));
    }
    out.retain(|s| s.frame >= burn_in);
    out
}

fn score(samples: &[SefSample], labels: &[ObjectClass], gts: &[GroundTruthRecord]) -> FrameCounts {
    let dets: Vec<Detection> = samples
        .iter()
        .zip(labels)
        .map(|(s, &label)| Detection { frame: s.frame, sef_id: s.sef_id, bbox: s.bbox, label })
        .collect();
    evaluate_sequence("test", &dets, gts, T_D).average
}

fn ensemble_lift() -> Outcome {
    let (k, n_frames, burn_in) = (12, 80, 10);
    let train = street(1, n_frames, false);
    let test = street(2, n_frames, true);
    let cfg = ScnnConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = patches(&train, 500, &cfg, &mut rng);
    let mut scnn = ScnnModel::new(cfg, FilterBank::gabor(16), 7);
    scnn.fit(&x, &y).unwrap();

    let set = build_slfn_training_set(track_samples(&train, k, &scnn, burn_in), &train.ground_truth, 6, &mut rng);
    let ensemble = Ensemble::train(&set, 4, &SlfnConfig::default(), 11).unwrap();

    let samples = track_samples(&test, k, &scnn, burn_in);
    let gts: Vec<GroundTruthRecord> = test.ground_truth.iter().filter(|g| g.frame >= burn_in).copied().collect();
    let alone: Vec<ObjectClass> = samples.iter().map(label_scnn).collect();
    let with: Vec<ObjectClass> = ensemble.predict_batch(&samples).into_iter().map(|(c, _)| class_of(c)).collect();
    let (a, b) = (score(&samples, &alone, &gts), score(&samples, &with, &gts));
    let (na, nb) = (a.nmotda().unwrap(), b.nmotda().unwrap());
    let fn_change = if a.fn_ == 0 {
        if b.fn_ == 0 { 0.0 } else { f64::INFINITY }
    } else {
        (b.fn_ as f64 - a.fn_ as f64).abs() / a.fn_ as f64
    };
    Outcome::new(
        nb - na >= 0.2 && b.fp < a.fp && fn_change < 0.1,
        format!(
            "K = {k}, 3 objects: average NMOTDA {na:.3} -> {nb:.3} (lift {:.3}, need 0.2); FP {} -> {}; FN {} -> {}",
            nb - na,
            a.fp,
            b.fp,
            a.fn_,
            b.fn_
        ),
    )
}

// ---------------------------------------------------------------------------
// 9, 10

fn feature_expansion() -> Outcome {
    let base: Vec<f64> = (1..=10).map(|v| v as f64).collect();
    let n = expand_pairs(&base).len();
    // six class scores plus the four state features
    let scores = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let assembled = assemble_slfn_features(&scores, &OrientedBox::new(5.0, 5.0, 4.0, 2.0, 0.3), 0.5, &FeatNorm::identity(10)).len();
    Outcome::new(n == 65 && assembled == 65, format!("d = 10 gives {n} expanded inputs, {assembled} via the SLFN input path (need 65)"))
}

fn vigilance_gate() -> Outcome {
    let params = SefParams::default();
    let priors = std::sync::Arc::new(SefPriors::new(&params));
    let dims = (96, 96);
    let mut sef = new_sef(&params, priors, dims, (48, 48), 2.0, 1);
    let policy = ConvPolicy::default();
    let pred = sef.predict(&policy).unwrap();
    // a fused map with mass in two small blocks off the predicted shape's center
    let i_m = Grid2D::from_fn(dims.0, dims.1, |r, c| {
        let near = |a: usize, b: usize| r.abs_diff(a) <= 1 && c.abs_diff(b) <= 1;
        if near(48 - 14, 48 - 14) || near(48 + 14, 48 + 14) {
            1.0
        } else {
            0.0
        }
    });
    let c = Grid2D::filled(dims.0, dims.1, 1.0);
    let SefUpdate::Updated(m) = sef.update(&pred, &i_m, &c, ShapeMeasure::Argmax, &policy) else {
        return Outcome::new(false, "filter reseeded instead of updating".into());
    };
    let through_update = m.rho > 0.0 && m.rho < params.lambda && m.alpha == 0.0 && bit_identical(&sef.s_s, &pred.s_p);

    // the same gate on a directly constructed measurement
    let s_p = gaussian_pmf(71, 71, (6.0, 6.0), (35.0, 35.0));
    let s_m = gaussian_pmf(71, 71, (6.0, 6.0), (35.0, 50.0));
    let (rho, alpha) = match_and_gate(&s_m, &s_p, params.lambda);
    let direct = rho > 0.0 && rho < params.lambda && alpha == vigilance(rho, params.lambda) && bit_identical(&smooth_shape(&s_m, &s_p, alpha), &s_p);
    Outcome::new(
        through_update && direct,
        format!(
            "rho = {:.3} in a filter update and {rho:.3} for a constructed shape (lambda {}): posterior shape bit-identical to prediction in both",
            m.rho, params.lambda
        ),
    )
}

fn bit_identical(a: &Pmf2D, b: &Pmf2D) -> bool {
    a.dims() == b.dims() && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
}

// ---------------------------------------------------------------------------
// 11

const DET_SCENE: &str = r#"
width = 240
height = 180
n_frames = 30
seed = 3

[[objects]]
class = "car"
size = 22.0
start = [50.0, 40.0]
velocity = [2.0, 1.0]
angle = 0.4

[[objects]]
class = "person"
size = 18.0
start = [190.0, 60.0]
velocity = [-1.5, 1.0]

[[objects]]
class = "cyclist"
size = 17.0
start = [60.0, 140.0]
velocity = [2.0, -0.5]

[[clutter]]
silhouette = "pole"
texture = "plain"
size = 15.0
center = [120.0, 90.0]
"#;

const DET_CONFIG: &str = r#"
seed = 21

[tracker]
k = 6
grid = [3, 2]

[scnn]
hidden = 400

[slfn]
state_hidden = 24
shape_hidden = 200

[training]
patches_per_class = 40
"#;

fn cli_run(dir: &Path, workers: usize) -> Vec<(String, Vec<u8>)> {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_cactus"))
            .current_dir(dir)
            .args(["--config", "run.toml", "--workers", &workers.to_string()])
            .args(args)
            .env_remove("CACTUS_SEED")
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--spec", "scene.toml", "--out", "seq"]);
    run(&["track", "--frames", "seq/frames", "--out", "tracks.csv", "--shapes", "shapes.bin"]);
    run(&["train-scnn", "--frames", "seq/frames", "--gt", "seq/gt.csv", "--manifest-out", "patches.csv", "--out", "scnn.bin"]);
    run(&["train-slfn", "--frames", "seq/frames", "--tracks", "tracks.csv", "--shapes", "shapes.bin", "--gt", "seq/gt.csv", "--scnn", "scnn.bin", "--out", "ens.bin"]);
    run(&["recognize", "--frames", "seq/frames", "--scnn", "scnn.bin", "--ensemble", "ens.bin", "--out", "labeled.csv"]);
    run(&["evaluate", "--tracks", "labeled.csv", "--gt", "seq/gt.csv", "--out", "report.csv"]);
    ["seq/gt.csv", "tracks.csv", "patches.csv", "labeled.csv", "report.csv", "shapes.bin", "scnn.bin", "ens.bin"]
        .iter()
        .map(|f| (f.to_string(), fs::read(dir.join(f)).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let runs: Vec<Vec<(String, Vec<u8>)>> = [1, 2, 1]
        .iter()
        .map(|&w| {
            let tmp = tempfile::tempdir().unwrap();
            fs::write(tmp.path().join("scene.toml"), DET_SCENE).unwrap();
            fs::write(tmp.path().join("run.toml"), DET_CONFIG).unwrap();
            let out = cli_run(tmp.path(), w);
            // absolute frame paths in the manifest differ between runs
            out.into_iter()
                .map(|(name, bytes)| {
                    if name == "patches.csv" {
                        let text = String::from_utf8(bytes).unwrap();
                        let root = fs::canonicalize(tmp.path()).unwrap().display().to_string();
                        (name, text.replace(&root, "").into_bytes())
                    } else {
                        (name, bytes)
                    }
                })
                .collect()
        })
        .collect();
    let differing: Vec<&str> = runs[0]
        .iter()
        .enumerate()
        .filter(|(i, (_, bytes))| runs[1..].iter().any(|r| &r[*i].1 != bytes))
        .map(|(_, (name, _))| name.as_str())
        .collect();
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    Outcome::new(
        differing.is_empty(),
        format!("synth/track/train/recognize/evaluate with 1, 2 and 1 workers: {} files compared, differing {differing:?}", names.len()),
    )
}
