//! On-disk formats: track, labeled-track and ground-truth CSVs, patch
//! manifests, posterior-shape sidecars and PNG frame directories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::cactus::TrackFrameOutput;
use crate::error::FormatError;
use crate::eval::{Detection, GroundTruthRecord};
use crate::features::Frame;
use crate::pmf::OrientedBox;
use crate::scenegen::ObjectClass;

const BOX_COLS: [&str; 5] = ["cx", "cy", "half_len", "half_wid", "angle"];
pub const GT_HEADER: [&str; 8] = ["frame", "object_id", "class", "cx", "cy", "half_len", "half_wid", "angle"];
pub const MANIFEST_HEADER: [&str; 4] = ["frame_path", "cx", "cy", "label"];

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn box_fields(b: &OrientedBox) -> [String; 5] {
    [f6(b.cx), f6(b.cy), f6(b.half_len), f6(b.half_wid), f6(b.angle)]
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, FormatError> {
    let f = File::create(path).map_err(|e| FormatError::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(f))
}

fn csv_err(path: &Path, e: csv::Error) -> FormatError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FormatError::io(path, io),
        other => FormatError::parse(path, line, format!("{other:?}")),
    }
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), FormatError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Reads a CSV whose header starts with `expected`; yields `(line, record)`.
fn read_rows(path: &Path, expected: &[&str]) -> Result<(Vec<String>, Vec<(usize, csv::StringRecord)>), FormatError> {
    let f = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(BufReader::new(f));
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(FormatError::Header {
            path: path.to_path_buf(),
            msg: format!("expected columns starting {}", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(FormatError::parse(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec));
    }
    Ok((header, rows))
}

struct Fields<'a> {
    path: &'a Path,
    line: usize,
    rec: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn num<T: std::str::FromStr>(&self, i: usize, name: &str) -> Result<T, FormatError> {
        self.rec[i]
            .trim()
            .parse()
            .map_err(|_| FormatError::parse(self.path, self.line, format!("bad {name} '{}'", &self.rec[i])))
    }

    fn class(&self, i: usize) -> Result<ObjectClass, FormatError> {
        ObjectClass::parse(&self.rec[i])
            .ok_or_else(|| FormatError::parse(self.path, self.line, format!("unknown class '{}'", &self.rec[i])))
    }

    fn bbox(&self, start: usize) -> Result<OrientedBox, FormatError> {
        let v: Vec<f64> = (0..5)
            .map(|k| self.num(start + k, BOX_COLS[k]))
            .collect::<Result<_, _>>()?;
        Ok(OrientedBox {
            cx: v[0],
            cy: v[1],
            half_len: v[2],
            half_wid: v[3],
            angle: v[4],
        })
    }
}

fn track_header(n_select: usize) -> Vec<String> {
    let mut h: Vec<String> = ["frame", "sef_id"].iter().map(|s| s.to_string()).collect();
    h.extend(BOX_COLS.iter().map(|s| s.to_string()));
    h.extend(["energy".to_string(), "rho".to_string()]);
    h.extend((1..=n_select).map(|i| format!("f{i}")));
    h
}

/// `frame,sef_id,cx,cy,half_len,half_wid,angle,energy,rho,f1..fN`; missing
/// feature ids are left empty.
pub fn write_tracks(path: &Path, rows: &[TrackFrameOutput], n_select: usize) -> Result<(), FormatError> {
    write_rows(
        path,
        &track_header(n_select),
        rows.iter().map(|o| {
            let mut r = vec![o.frame.to_string(), o.sef_id.to_string()];
            r.extend(box_fields(&o.bbox));
            r.extend([f6(o.energy), f6(o.rho)]);
            r.extend((0..n_select).map(|i| o.selected.get(i).map_or(String::new(), |v| v.to_string())));
            r
        }),
    )
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackFrameOutput>, FormatError> {
    let expected: Vec<String> = track_header(0);
    let expected: Vec<&str> = expected.iter().map(|s| s.as_str()).collect();
    let (_, rows) = read_rows(path, &expected)?;
    rows.iter()
        .map(|(line, rec)| {
            let f = Fields { path, line: *line, rec };
            let selected = (9..rec.len())
                .filter(|&i| !rec[i].trim().is_empty())
                .map(|i| f.num(i, "feature id"))
                .collect::<Result<_, _>>()?;
            Ok(TrackFrameOutput {
                frame: f.num(0, "frame")?,
                sef_id: f.num(1, "sef_id")?,
                bbox: f.bbox(2)?,
                energy: f.num(7, "energy")?,
                rho: f.num(8, "rho")?,
                selected,
            })
        })
        .collect()
}

/// A classified tracker output.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrack {
    pub track: TrackFrameOutput,
    pub label: ObjectClass,
}

impl LabeledTrack {
    pub fn detection(&self) -> Detection {
        Detection {
            frame: self.track.frame,
            sef_id: self.track.sef_id,
            bbox: self.track.bbox,
            label: self.label,
        }
    }
}

/// Track CSV columns up to `rho`, then `label`.
pub fn write_labeled_tracks(path: &Path, rows: &[LabeledTrack]) -> Result<(), FormatError> {
    let mut header = track_header(0);
    header.push("label".into());
    write_rows(
        path,
        &header,
        rows.iter().map(|l| {
            let o = &l.track;
            let mut r = vec![o.frame.to_string(), o.sef_id.to_string()];
            r.extend(box_fields(&o.bbox));
            r.extend([f6(o.energy), f6(o.rho), l.label.name().to_string()]);
            r
        }),
    )
}

pub fn read_labeled_tracks(path: &Path) -> Result<Vec<LabeledTrack>, FormatError> {
    let mut expected = track_header(0);
    expected.push("label".into());
    let expected: Vec<&str> = expected.iter().map(|s| s.as_str()).collect();
    let (_, rows) = read_rows(path, &expected)?;
    rows.iter()
        .map(|(line, rec)| {
            let f = Fields { path, line: *line, rec };
            Ok(LabeledTrack {
                track: TrackFrameOutput {
                    frame: f.num(0, "frame")?,
                    sef_id: f.num(1, "sef_id")?,
                    bbox: f.bbox(2)?,
                    energy: f.num(7, "energy")?,
                    rho: f.num(8, "rho")?,
                    selected: Vec::new(),
                },
                label: f.class(9)?,
            })
        })
        .collect()
}

pub fn write_ground_truth(path: &Path, gts: &[GroundTruthRecord]) -> Result<(), FormatError> {
    let header: Vec<String> = GT_HEADER.iter().map(|s| s.to_string()).collect();
    write_rows(
        path,
        &header,
        gts.iter().map(|g| {
            let mut r = vec![g.frame.to_string(), g.object_id.to_string(), g.class.name().to_string()];
            r.extend(box_fields(&g.bbox));
            r
        }),
    )
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>, FormatError> {
    let (_, rows) = read_rows(path, &GT_HEADER)?;
    rows.iter()
        .map(|(line, rec)| {
            let f = Fields { path, line: *line, rec };
            Ok(GroundTruthRecord {
                frame: f.num(0, "frame")?,
                object_id: f.num(1, "object_id")?,
                class: f.class(2)?,
                bbox: f.bbox(3)?,
            })
        })
        .collect()
}

/// One training patch: a frame file, a center in input pixels and a class.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub frame_path: PathBuf,
    pub cx: f64,
    pub cy: f64,
    pub label: ObjectClass,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), FormatError> {
    let header: Vec<String> = MANIFEST_HEADER.iter().map(|s| s.to_string()).collect();
    write_rows(
        path,
        &header,
        entries.iter().map(|e| {
            vec![
                e.frame_path.to_string_lossy().into_owned(),
                f6(e.cx),
                f6(e.cy),
                e.label.name().to_string(),
            ]
        }),
    )
}

/// Relative frame paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, FormatError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let (_, rows) = read_rows(path, &MANIFEST_HEADER)?;
    rows.iter()
        .map(|(line, rec)| {
            let f = Fields { path, line: *line, rec };
            let p = PathBuf::from(rec[0].trim());
            Ok(ManifestEntry {
                frame_path: if p.is_absolute() { p } else { base.join(p) },
                cx: f.num(1, "cx")?,
                cy: f.num(2, "cy")?,
                label: f.class(3)?,
            })
        })
        .collect()
}

const SHAPE_MAGIC: &[u8; 4] = b"CCTS";

/// Posterior shapes keyed by `(frame, sef_id)`, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRecord {
    pub frame: usize,
    pub sef_id: usize,
    pub values: Vec<f32>,
}

/// Streams shape records to disk; the record count is patched in on
/// [`ShapeWriter::finish`].
pub struct ShapeWriter {
    path: PathBuf,
    w: BufWriter<File>,
    side: usize,
    count: u64,
}

impl ShapeWriter {
    pub fn create(path: &Path, side: usize) -> Result<Self, FormatError> {
        let io = |e| FormatError::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(SHAPE_MAGIC).map_err(io)?;
        w.write_u32::<LE>(1).map_err(io)?;
        w.write_u32::<LE>(side as u32).map_err(io)?;
        w.write_u64::<LE>(0).map_err(io)?;
        Ok(ShapeWriter {
            path: path.to_path_buf(),
            w,
            side,
            count: 0,
        })
    }

    pub fn push(&mut self, frame: usize, sef_id: usize, values: &[f64]) -> Result<(), FormatError> {
        assert_eq!(values.len(), self.side * self.side, "shape record of the wrong size");
        let mut body = || -> std::io::Result<()> {
            self.w.write_u64::<LE>(frame as u64)?;
            self.w.write_u64::<LE>(sef_id as u64)?;
            values.iter().try_for_each(|v| self.w.write_f32::<LE>(*v as f32))
        };
        body().map_err(|e| FormatError::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), FormatError> {
        let path = self.path.clone();
        let mut body = || -> std::io::Result<()> {
            self.w.seek(SeekFrom::Start(12))?;
            self.w.write_u64::<LE>(self.count)?;
            self.w.flush()
        };
        body().map_err(|e| FormatError::io(&path, e))
    }
}

pub fn write_shapes(path: &Path, side: usize, rows: &[ShapeRecord]) -> Result<(), FormatError> {
    let mut w = ShapeWriter::create(path, side)?;
    for r in rows {
        let v: Vec<f64> = r.values.iter().map(|&x| x as f64).collect();
        w.push(r.frame, r.sef_id, &v)?;
    }
    w.finish()
}

pub fn read_shapes(path: &Path) -> Result<(usize, Vec<ShapeRecord>), FormatError> {
    let io = |e| FormatError::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    let version = r.read_u32::<LE>().map_err(io)?;
    if &magic != SHAPE_MAGIC || version != 1 {
        return Err(FormatError::Header {
            path: path.to_path_buf(),
            msg: "not a version 1 shape file".into(),
        });
    }
    let side = r.read_u32::<LE>().map_err(io)? as usize;
    let n = r.read_u64::<LE>().map_err(io)? as usize;
    let mut rows = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let frame = r.read_u64::<LE>().map_err(io)? as usize;
        let sef_id = r.read_u64::<LE>().map_err(io)? as usize;
        let mut values = vec![0f32; side * side];
        r.read_f32_into::<LE>(&mut values).map_err(io)?;
        rows.push(ShapeRecord { frame, sef_id, values });
    }
    Ok((side, rows))
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<(), FormatError> {
    let color = if frame.channels >= 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer(path, &frame.data, frame.width as u32, frame.height as u32, color).map_err(|e| FormatError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Writes `frame_000000.png`, `frame_000001.png`, … into `dir`.
pub fn write_frames(dir: &Path, frames: &[Frame]) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .try_for_each(|(i, f)| write_frame(&dir.join(frame_file_name(i)), f))
}

pub fn read_frame(path: &Path) -> Result<Frame, FormatError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => FormatError::io(path, io),
        other => FormatError::Image {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match img {
        image::DynamicImage::ImageLuma8(g) => Frame::gray(w, h, g.into_raw()),
        other => Frame::rgb(w, h, other.into_rgb8().into_raw()),
    })
}

/// PNG files of a directory in name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, FormatError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| FormatError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// RGB copy of `frame` with each box outline drawn in its color.
pub fn overlay_boxes(frame: &Frame, boxes: &[(OrientedBox, [u8; 3])]) -> Frame {
    let (w, h) = (frame.width, frame.height);
    let mut data = Vec::with_capacity(3 * w * h);
    for i in 0..w * h {
        if frame.channels >= 3 {
            data.extend_from_slice(&frame.data[3 * i..3 * i + 3]);
        } else {
            data.extend([frame.data[i]; 3]);
        }
    }
    for (b, color) in boxes {
        let corners = b.corners();
        for k in 0..4 {
            let (x0, y0) = corners[k];
            let (x1, y1) = corners[(k + 1) % 4];
            let steps = (2.0 * (x1 - x0).abs().max((y1 - y0).abs())).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = ((x0 + t * (x1 - x0)).round(), (y0 + t * (y1 - y0)).round());
                if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                    let i = 3 * (y as usize * w + x as usize);
                    data[i..i + 3].copy_from_slice(color);
                }
            }
        }
    }
    Frame::rgb(w, h, data)
}
