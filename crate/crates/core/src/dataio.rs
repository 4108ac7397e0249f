//! Annotation parsing, stereo-frame splitting, dataset manifests, image
//! loading, and surgery-level cross-validation folds.
//!
//! Annotations use the labelme JSON layout so files written by the original
//! tool load unchanged. A stereo frame arrives stacked top-down (left view
//! on top); corresponding suture points in both views are joined by a line
//! shape, while points visible in only one view are point shapes. Fold
//! construction partitions surgeries, never frames, so no patient's data
//! ever straddles a train/validation boundary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::heatmap::{LandmarkSet, Point};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("annotation parse error: {0}")]
    Json(String),
    #[error("shape {index} ({label:?}): {message}")]
    Shape {
        index: usize,
        label: String,
        message: String,
    },
    #[error("frame {frame_id}, shape {index}: line must cross the stereo midline, got y = {y0} and {y1} (height {height})")]
    LineWithinOneHalf {
        frame_id: String,
        index: usize,
        y0: f64,
        y1: f64,
        height: usize,
    },
    #[error("stereo frame height {0} is odd and cannot be split")]
    OddHeight(usize),
    #[error("annotation declares {ann_w}x{ann_h} but image is {img_w}x{img_h}")]
    SizeMismatch {
        ann_w: usize,
        ann_h: usize,
        img_w: usize,
        img_h: usize,
    },
    #[error("cross-validation needs 2 <= k <= #surgeries, got k = {k} with {surgeries} surgeries")]
    FoldCount { k: usize, surgeries: usize },
    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),
}

// ---------------------------------------------------------------------------
// Images

/// RGB image as three channel planes of f64 in [0, 1], row-major per plane.
/// The plane layout matches the NCHW tensors the network consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PlaneImage {
    pub fn new(width: usize, height: usize) -> Self {
        PlaneImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Planes concatenated: R, then G, then B.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, channel: usize, x: usize, y: usize, v: f64) {
        self.data[(channel * self.height + y) * self.width + x] = v;
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = PlaneImage::new(w, h);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, x as usize, y as usize, px.0[c] as f64 / 255.0);
            }
        }
        out
    }

    /// Quantizes back to 8-bit with clamping and round-to-nearest.
    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = self.get(c, x as usize, y as usize).clamp(0.0, 1.0);
                px[c] = (v * 255.0).round() as u8;
            }
            image::Rgb(px)
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, DataError> {
        let img = image::open(path).map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DataError> {
        self.to_rgb8().save(path).map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Bilinear sample at a fractional position; outside the frame reads 0.
    pub fn sample_bilinear(&self, channel: usize, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (px, py) = (x0 + dx, y0 + dy);
                if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
                    continue; // zero fill
                }
                acc += wx * wy * self.get(channel, px as usize, py as usize);
            }
        }
        acc
    }

    /// Stretch-resize with bilinear interpolation (pixel-center mapping).
    pub fn resize_bilinear(&self, new_width: usize, new_height: usize) -> Self {
        if new_width == self.width && new_height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let mut out = PlaneImage::new(new_width, new_height);
        for c in 0..3 {
            for oy in 0..new_height {
                let src_y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, self.height as f64 - 1.0);
                for ox in 0..new_width {
                    let src_x =
                        ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, self.width as f64 - 1.0);
                    out.set(c, ox, oy, self.sample_bilinear(c, src_x, src_y));
                }
            }
        }
        out
    }

    /// Rows `y0..y1` as an image of the same width.
    pub fn crop_rows(&self, y0: usize, y1: usize) -> Self {
        assert!(y0 < y1 && y1 <= self.height);
        let mut out = PlaneImage::new(self.width, y1 - y0);
        for c in 0..3 {
            for (oy, y) in (y0..y1).enumerate() {
                for x in 0..self.width {
                    out.set(c, x, oy, self.get(c, x, y));
                }
            }
        }
        out
    }
}

/// Landmark coordinates under the same stretch a resize applies to pixels.
pub fn scale_landmarks(set: &LandmarkSet, sx: f64, sy: f64) -> LandmarkSet {
    set.iter().map(|p| Point::new(p.x * sx, p.y * sy)).collect()
}

// ---------------------------------------------------------------------------
// Annotations

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Line,
    Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub label: String,
    pub kind: ShapeKind,
    pub points: Vec<Point>,
}

/// Parsed annotation document: usable shapes plus warnings for shapes that
/// were skipped rather than rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub image_path: String,
    pub image_width: usize,
    pub image_height: usize,
    pub shapes: Vec<Shape>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    shapes: Vec<RawShape>,
    #[serde(rename = "imagePath", default)]
    image_path: String,
    #[serde(rename = "imageHeight")]
    image_height: usize,
    #[serde(rename = "imageWidth")]
    image_width: usize,
}

#[derive(Deserialize)]
struct RawShape {
    #[serde(default)]
    label: String,
    points: Vec<[f64; 2]>,
    shape_type: String,
}

/// Parses a labelme JSON document. Line and point shapes become usable
/// shapes; any other `shape_type` is skipped with a warning. Structural
/// problems (bad JSON, missing size fields, wrong point counts,
/// out-of-bounds coordinates) are errors.
pub fn parse_annotation(text: &str) -> Result<AnnotationFile, DataError> {
    let raw: RawAnnotation =
        serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
    let (w, h) = (raw.image_width as f64, raw.image_height as f64);
    let mut shapes = Vec::new();
    let mut warnings = Vec::new();
    for (index, s) in raw.shapes.into_iter().enumerate() {
        let kind = match s.shape_type.as_str() {
            "line" => ShapeKind::Line,
            "point" => ShapeKind::Point,
            other => {
                warnings.push(format!(
                    "shape {index} ({:?}): unsupported shape_type {other:?}, skipped",
                    s.label
                ));
                continue;
            }
        };
        let expected = match kind {
            ShapeKind::Line => 2,
            ShapeKind::Point => 1,
        };
        if s.points.len() != expected {
            return Err(DataError::Shape {
                index,
                label: s.label,
                message: format!(
                    "{} needs exactly {expected} point(s), got {}",
                    s.shape_type,
                    s.points.len()
                ),
            });
        }
        for &[x, y] in &s.points {
            // Half-pixel slack: annotation tools occasionally emit W or H
            // exactly on the far edge.
            if x < -0.5 || y < -0.5 || x > w + 0.5 || y > h + 0.5 {
                return Err(DataError::Shape {
                    index,
                    label: s.label,
                    message: format!("point ({x}, {y}) outside {w}x{h} image"),
                });
            }
        }
        shapes.push(Shape {
            label: s.label,
            kind,
            points: s.points.iter().map(|&[x, y]| Point::new(x, y)).collect(),
        });
    }
    Ok(AnnotationFile {
        image_path: raw.image_path,
        image_width: raw.image_width,
        image_height: raw.image_height,
        shapes,
        warnings,
    })
}

/// Serializes back to labelme JSON. Parsing the output reproduces the
/// input annotation (warnings excluded, since skipped shapes are gone).
pub fn write_annotation(file: &AnnotationFile) -> String {
    let shapes: Vec<serde_json::Value> = file
        .shapes
        .iter()
        .map(|s| {
            serde_json::json!({
                "label": s.label,
                "points": s.points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
                "group_id": null,
                "shape_type": match s.kind {
                    ShapeKind::Line => "line",
                    ShapeKind::Point => "point",
                },
                "flags": {},
            })
        })
        .collect();
    let doc = serde_json::json!({
        "version": "5.2.1",
        "flags": {},
        "shapes": shapes,
        "imagePath": file.image_path,
        "imageData": null,
        "imageHeight": file.image_height,
        "imageWidth": file.image_width,
    });
    serde_json::to_string_pretty(&doc).expect("annotation serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Stereo splitting

/// Splits a top-down stereo frame into (left, right) halves with re-based
/// landmark sets. Lines contribute one landmark per half (endpoints sorted
/// by y, so annotation order does not matter); points go to the half that
/// contains them. Row `height/2` is the first row of the bottom half.
pub fn split_stereo(
    image: &PlaneImage,
    ann: &AnnotationFile,
    frame_id: &str,
) -> Result<((PlaneImage, LandmarkSet), (PlaneImage, LandmarkSet)), DataError> {
    let h = image.height();
    if h % 2 != 0 {
        return Err(DataError::OddHeight(h));
    }
    if ann.image_width != image.width() || ann.image_height != h {
        return Err(DataError::SizeMismatch {
            ann_w: ann.image_width,
            ann_h: ann.image_height,
            img_w: image.width(),
            img_h: h,
        });
    }
    let half = h / 2;
    let mut left = LandmarkSet::new();
    let mut right = LandmarkSet::new();
    for (index, shape) in ann.shapes.iter().enumerate() {
        match shape.kind {
            ShapeKind::Line => {
                let (mut a, mut b) = (shape.points[0], shape.points[1]);
                if a.y > b.y {
                    std::mem::swap(&mut a, &mut b);
                }
                let a_top = a.y < half as f64;
                let b_bottom = b.y >= half as f64;
                if !a_top || !b_bottom {
                    return Err(DataError::LineWithinOneHalf {
                        frame_id: frame_id.to_string(),
                        index,
                        y0: a.y,
                        y1: b.y,
                        height: h,
                    });
                }
                left.push(a);
                right.push(Point::new(b.x, b.y - half as f64));
            }
            ShapeKind::Point => {
                let p = shape.points[0];
                if p.y < half as f64 {
                    left.push(p);
                } else {
                    right.push(Point::new(p.x, p.y - half as f64));
                }
            }
        }
    }
    let left_img = image.crop_rows(0, half);
    let right_img = image.crop_rows(half, h);
    Ok(((left_img, left), (right_img, right)))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Intraop,
    Simulator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UsageTag {
    Cv,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Frame image path, relative to the manifest file's directory.
    pub frame: String,
    /// Annotation path, same base.
    pub annotation: String,
    pub surgery_id: String,
    pub domain: DomainTag,
    pub usage: UsageTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest { entries, root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Loads and validates: every referenced file must exist, surgery ids
    /// must be non-empty.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DataError::Json(e.to_string()))?;
        manifest.root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        for entry in &manifest.entries {
            if entry.surgery_id.is_empty() {
                return Err(DataError::Json(format!(
                    "entry {:?} has an empty surgery id",
                    entry.frame
                )));
            }
            for rel in [&entry.frame, &entry.annotation] {
                let full = manifest.root.join(rel);
                if !full.exists() {
                    return Err(DataError::MissingFile(full));
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        fs::write(path, text).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn frame_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.frame)
    }

    pub fn annotation_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.annotation)
    }

    /// Unique surgery ids in first-appearance order.
    pub fn surgeries(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in &self.entries {
            if seen.insert(e.surgery_id.clone()) {
                out.push(e.surgery_id.clone());
            }
        }
        out
    }

    pub fn entries_for_surgeries<'a>(
        &'a self,
        surgeries: &'a [String],
    ) -> impl Iterator<Item = &'a ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| surgeries.contains(&e.surgery_id))
    }

    /// Reads one entry's image and annotation, recording both paths.
    pub fn load_entry(
        &self,
        entry: &ManifestEntry,
        log: &AccessLog,
    ) -> Result<(PlaneImage, AnnotationFile), DataError> {
        let frame_path = self.frame_path(entry);
        let ann_path = self.annotation_path(entry);
        log.record(&frame_path);
        log.record(&ann_path);
        let image = PlaneImage::load_png(&frame_path)?;
        let text = fs::read_to_string(&ann_path).map_err(|e| DataError::Io {
            path: ann_path.clone(),
            source: e,
        })?;
        let ann = parse_annotation(&text)?;
        Ok((image, ann))
    }
}

/// Shared record of every file a loader touched. Cheap to clone; clones
/// share the same log, which is what lets a test hand one to the trainer
/// and inspect it afterwards.
#[derive(Debug, Clone, Default)]
pub struct AccessLog {
    inner: Arc<Mutex<Vec<PathBuf>>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, path: &Path) {
        self.inner.lock().unwrap().push(path.to_path_buf());
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.inner.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.inner.lock().unwrap().clear();
    }
}

// ---------------------------------------------------------------------------
// Cross-validation folds

/// One cross-validation fold at surgery granularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_surgeries: Vec<String>,
    pub validation_surgeries: Vec<String>,
}

/// Random k-fold partition of the manifest's surgeries. Every surgery lands
/// in exactly one validation group; group sizes differ by at most one.
pub fn make_folds(
    manifest: &DatasetManifest,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Fold>, DataError> {
    let mut surgeries = manifest.surgeries();
    if k < 2 || k > surgeries.len() {
        return Err(DataError::FoldCount {
            k,
            surgeries: surgeries.len(),
        });
    }
    surgeries.shuffle(rng);
    let n = surgeries.len();
    let base = n / k;
    let extra = n % k; // first `extra` groups take one more surgery
    let mut folds = Vec::with_capacity(k);
    let mut offset = 0;
    for gi in 0..k {
        let size = base + usize::from(gi < extra);
        let validation: Vec<String> = surgeries[offset..offset + size].to_vec();
        let train: Vec<String> = surgeries
            .iter()
            .filter(|s| !validation.contains(s))
            .cloned()
            .collect();
        folds.push(Fold {
            train_surgeries: train,
            validation_surgeries: validation,
        });
        offset += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stereo_doc(shapes: &str) -> String {
        format!(
            r#"{{
  "version": "5.2.1",
  "flags": {{}},
  "shapes": [{shapes}],
  "imagePath": "frame.png",
  "imageData": null,
  "imageHeight": 576,
  "imageWidth": 512
}}"#
        )
    }

    const LINE_SHAPE: &str = r#"{"label": "suture", "points": [[100.0, 50.0], [110.0, 340.0]], "group_id": null, "shape_type": "line", "flags": {}}"#;
    const POINT_SHAPE: &str = r#"{"label": "suture", "points": [[30.0, 400.0]], "group_id": null, "shape_type": "point", "flags": {}}"#;
    const POLYGON_SHAPE: &str = r#"{"label": "tool", "points": [[1.0, 1.0], [2.0, 1.0], [2.0, 2.0]], "group_id": null, "shape_type": "polygon", "flags": {}}"#;

    #[test]
    fn parse_line_point_and_polygon() {
        let doc = stereo_doc(&format!("{LINE_SHAPE}, {POINT_SHAPE}, {POLYGON_SHAPE}"));
        let ann = parse_annotation(&doc).unwrap();
        assert_eq!(ann.image_width, 512);
        assert_eq!(ann.image_height, 576);
        assert_eq!(ann.shapes.len(), 2);
        assert_eq!(ann.warnings.len(), 1);
        assert!(ann.warnings[0].contains("polygon"));
        assert_eq!(ann.shapes[0].kind, ShapeKind::Line);
        // Endpoint order preserved at parse time.
        assert_eq!(ann.shapes[0].points[0], Point::new(100.0, 50.0));
        assert_eq!(ann.shapes[0].points[1], Point::new(110.0, 340.0));
        assert_eq!(ann.shapes[1].kind, ShapeKind::Point);
    }

    #[test]
    fn parse_rejects_malformed_json_with_location() {
        let err = parse_annotation("{\"shapes\": [}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line") || msg.contains("column"), "{msg}");
    }

    #[test]
    fn parse_rejects_missing_size_fields() {
        assert!(parse_annotation(r#"{"shapes": []}"#).is_err());
    }

    #[test]
    fn parse_rejects_wrong_point_counts() {
        let bad_line = r#"{"label": "s", "points": [[1.0, 1.0]], "shape_type": "line"}"#;
        assert!(parse_annotation(&stereo_doc(bad_line)).is_err());
        let bad_point =
            r#"{"label": "s", "points": [[1.0, 1.0], [2.0, 2.0]], "shape_type": "point"}"#;
        assert!(parse_annotation(&stereo_doc(bad_point)).is_err());
    }

    #[test]
    fn parse_rejects_out_of_bounds_coordinates() {
        let oob = r#"{"label": "s", "points": [[600.0, 10.0]], "shape_type": "point"}"#;
        let err = parse_annotation(&stereo_doc(oob)).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }

    #[test]
    fn annotation_round_trip_fixpoint() {
        let doc = stereo_doc(&format!("{LINE_SHAPE}, {POINT_SHAPE}"));
        let first = parse_annotation(&doc).unwrap();
        let rewritten = write_annotation(&first);
        let second = parse_annotation(&rewritten).unwrap();
        assert_eq!(first, second);
        // Fixpoint: serialize(parse(serialize(x))) == serialize(x).
        assert_eq!(rewritten, write_annotation(&second));
    }

    fn gradient_frame(w: usize, h: usize) -> PlaneImage {
        let mut img = PlaneImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(0, x, y, (x % 256) as f64 / 255.0);
                img.set(1, x, y, (y % 256) as f64 / 255.0);
                img.set(2, x, y, ((x + y) % 256) as f64 / 255.0);
            }
        }
        img
    }

    #[test]
    fn split_stereo_rebases_bottom_half() {
        let doc = stereo_doc(&format!("{LINE_SHAPE}, {POINT_SHAPE}"));
        let ann = parse_annotation(&doc).unwrap();
        let img = gradient_frame(512, 576);
        let ((left_img, left), (right_img, right)) = split_stereo(&img, &ann, "f0").unwrap();
        assert_eq!(left_img.height(), 288);
        assert_eq!(right_img.height(), 288);
        assert_eq!(left.points(), &[Point::new(100.0, 50.0)]);
        // 340 - 288 = 52 for the line's bottom end; 400 - 288 = 112 for the point.
        assert_eq!(
            right.points(),
            &[Point::new(110.0, 52.0), Point::new(30.0, 112.0)]
        );
        // Pixel content: row 288 of the frame is row 0 of the right half.
        assert_eq!(right_img.get(1, 7, 0), img.get(1, 7, 288));
        assert_eq!(left_img.get(0, 9, 3), img.get(0, 9, 3));
    }

    #[test]
    fn split_stereo_sorts_bottom_first_lines() {
        let swapped = r#"{"label": "s", "points": [[110.0, 340.0], [100.0, 50.0]], "shape_type": "line"}"#;
        let ann = parse_annotation(&stereo_doc(swapped)).unwrap();
        let img = PlaneImage::new(512, 576);
        let ((_, left), (_, right)) = split_stereo(&img, &ann, "f0").unwrap();
        assert_eq!(left.points(), &[Point::new(100.0, 50.0)]);
        assert_eq!(right.points(), &[Point::new(110.0, 52.0)]);
    }

    #[test]
    fn split_stereo_rejects_single_half_line() {
        let bad = r#"{"label": "s", "points": [[10.0, 20.0], [30.0, 40.0]], "shape_type": "line"}"#;
        let ann = parse_annotation(&stereo_doc(bad)).unwrap();
        let img = PlaneImage::new(512, 576);
        let err = split_stereo(&img, &ann, "frame_17").unwrap_err();
        assert!(err.to_string().contains("frame_17"), "{err}");
    }

    #[test]
    fn split_stereo_rejects_odd_height_and_size_mismatch() {
        let ann = parse_annotation(&stereo_doc("")).unwrap();
        assert!(matches!(
            split_stereo(&PlaneImage::new(512, 575), &ann, "f"),
            Err(DataError::OddHeight(575))
        ));
        assert!(matches!(
            split_stereo(&PlaneImage::new(100, 100), &ann, "f"),
            Err(DataError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn split_stereo_conserves_landmark_count() {
        // 14 lines and 1 point in the bottom half: left gets 14, right 15.
        let mut shapes: Vec<String> = (0..14)
            .map(|i| {
                let x = 10.0 + i as f64 * 20.0;
                format!(
                    r#"{{"label": "s", "points": [[{x}, 100.0], [{x}, 400.0]], "shape_type": "line"}}"#
                )
            })
            .collect();
        shapes.push(r#"{"label": "s", "points": [[250.0, 500.0]], "shape_type": "point"}"#.into());
        let ann = parse_annotation(&stereo_doc(&shapes.join(", "))).unwrap();
        let img = PlaneImage::new(512, 576);
        let ((_, left), (_, right)) = split_stereo(&img, &ann, "f").unwrap();
        assert_eq!(left.len(), 14);
        assert_eq!(right.len(), 15);
        assert_eq!(left.len() + right.len(), 2 * 14 + 1);
    }

    #[test]
    fn midline_point_goes_to_bottom_half() {
        let mid = r#"{"label": "s", "points": [[10.0, 288.0]], "shape_type": "point"}"#;
        let ann = parse_annotation(&stereo_doc(mid)).unwrap();
        let ((_, left), (_, right)) =
            split_stereo(&PlaneImage::new(512, 576), &ann, "f").unwrap();
        assert!(left.is_empty());
        assert_eq!(right.points(), &[Point::new(10.0, 0.0)]);
    }

    #[test]
    fn png_round_trip_preserves_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient_frame(64, 32);
        let path = dir.path().join("frame.png");
        img.save_png(&path).unwrap();
        let back = PlaneImage::load_png(&path).unwrap();
        assert_eq!(img, back, "8-bit grid values survive the round trip");
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = gradient_frame(32, 16);
        assert_eq!(img.resize_bilinear(32, 16), img);
        let mut flat = PlaneImage::new(10, 8);
        flat.data_mut().fill(0.25);
        let resized = flat.resize_bilinear(23, 5);
        assert!(resized.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn resize_preserves_horizontal_ramp() {
        // A linear ramp stays monotone under bilinear stretching.
        let mut img = PlaneImage::new(64, 8);
        for y in 0..8 {
            for x in 0..64 {
                img.set(0, x, y, x as f64 / 63.0);
            }
        }
        let out = img.resize_bilinear(32, 8);
        for x in 1..32 {
            assert!(out.get(0, x, 4) > out.get(0, x - 1, 4));
        }
    }

    #[test]
    fn landmark_scaling_is_literal() {
        let set: LandmarkSet = vec![Point::new(100.0, 50.0)].into();
        let scaled = scale_landmarks(&set, 0.5, 2.0);
        assert_eq!(scaled.points(), &[Point::new(50.0, 100.0)]);
    }

    fn toy_manifest(n_surgeries: usize) -> DatasetManifest {
        let entries = (0..n_surgeries)
            .flat_map(|s| {
                (0..3).map(move |f| ManifestEntry {
                    frame: format!("s{s}/f{f}.png"),
                    annotation: format!("s{s}/f{f}.json"),
                    surgery_id: format!("s{s}"),
                    domain: DomainTag::Simulator,
                    usage: UsageTag::Cv,
                })
            })
            .collect();
        DatasetManifest::new(PathBuf::from("/nonexistent"), entries)
    }

    #[test]
    fn folds_partition_surgeries_disjointly() {
        let manifest = toy_manifest(10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let folds = make_folds(&manifest, 5, &mut rng).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all_validation: Vec<String> = Vec::new();
        for fold in &folds {
            assert_eq!(fold.validation_surgeries.len(), 2);
            assert_eq!(fold.train_surgeries.len(), 8);
            for s in &fold.validation_surgeries {
                assert!(!fold.train_surgeries.contains(s), "leaked surgery {s}");
            }
            all_validation.extend(fold.validation_surgeries.clone());
        }
        all_validation.sort();
        let mut expect = manifest.surgeries();
        expect.sort();
        assert_eq!(all_validation, expect, "each surgery validates exactly once");
    }

    #[test]
    fn folds_leave_one_out_and_uneven_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loo = make_folds(&toy_manifest(5), 5, &mut rng).unwrap();
        assert!(loo.iter().all(|f| f.validation_surgeries.len() == 1));

        let uneven = make_folds(&toy_manifest(7), 3, &mut rng).unwrap();
        let mut sizes: Vec<usize> = uneven.iter().map(|f| f.validation_surgeries.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn folds_reject_bad_k() {
        let manifest = toy_manifest(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(make_folds(&manifest, 1, &mut rng).is_err());
        assert!(make_folds(&manifest, 6, &mut rng).is_err());
    }

    #[test]
    fn folds_deterministic_per_seed() {
        let manifest = toy_manifest(9);
        let a = make_folds(&manifest, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = make_folds(&manifest, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let c = make_folds(&manifest, 3, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c, "different seed should reshuffle 9 surgeries");
    }

    #[test]
    fn manifest_save_load_and_missing_file_check() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("s0")).unwrap();
        let img = PlaneImage::new(8, 8);
        img.save_png(&dir.path().join("s0/f0.png")).unwrap();
        let ann = AnnotationFile {
            image_path: "f0.png".into(),
            image_width: 8,
            image_height: 8,
            shapes: vec![],
            warnings: vec![],
        };
        fs::write(dir.path().join("s0/f0.json"), write_annotation(&ann)).unwrap();

        let manifest = DatasetManifest::new(
            dir.path().to_path_buf(),
            vec![ManifestEntry {
                frame: "s0/f0.png".into(),
                annotation: "s0/f0.json".into(),
                surgery_id: "s0".into(),
                domain: DomainTag::Intraop,
                usage: UsageTag::Cv,
            }],
        );
        let mpath = dir.path().join("manifest.json");
        manifest.save(&mpath).unwrap();
        let loaded = DatasetManifest::load(&mpath).unwrap();
        assert_eq!(loaded.entries, manifest.entries);
        assert_eq!(loaded.root(), dir.path());

        // A manifest pointing at a nonexistent annotation must not load.
        let broken = DatasetManifest::new(
            dir.path().to_path_buf(),
            vec![ManifestEntry {
                frame: "s0/f0.png".into(),
                annotation: "s0/missing.json".into(),
                surgery_id: "s0".into(),
                domain: DomainTag::Intraop,
                usage: UsageTag::Cv,
            }],
        );
        let bpath = dir.path().join("broken.json");
        broken.save(&bpath).unwrap();
        assert!(matches!(
            DatasetManifest::load(&bpath),
            Err(DataError::MissingFile(_))
        ));
    }

    #[test]
    fn load_entry_records_accesses() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient_frame(16, 16);
        img.save_png(&dir.path().join("f.png")).unwrap();
        let ann = AnnotationFile {
            image_path: "f.png".into(),
            image_width: 16,
            image_height: 16,
            shapes: vec![],
            warnings: vec![],
        };
        fs::write(dir.path().join("f.json"), write_annotation(&ann)).unwrap();
        let manifest = DatasetManifest::new(
            dir.path().to_path_buf(),
            vec![ManifestEntry {
                frame: "f.png".into(),
                annotation: "f.json".into(),
                surgery_id: "s".into(),
                domain: DomainTag::Simulator,
                usage: UsageTag::Cv,
            }],
        );
        let log = AccessLog::new();
        let shared_view = log.clone();
        let (loaded_img, loaded_ann) = manifest.load_entry(&manifest.entries[0], &log).unwrap();
        assert_eq!(loaded_img, img);
        assert_eq!(loaded_ann.image_width, 16);
        let paths = shared_view.paths();
        assert_eq!(paths.len(), 2, "clone shares the same log storage");
        assert!(paths[0].ends_with("f.png"));
        assert!(paths[1].ends_with("f.json"));
    }
}
