//! Deterministic synthetic suture-phantom frames.
//!
//! A frame is a vignetted tissue-colored background with low-frequency
//! value noise, a lighter annulus band, and suture dots (Gaussian profile
//! with a short strand tail) placed around that ring at known positions.
//! Distractors (bright specular ellipses and tool-edge strokes) emulate
//! the false-positive sources a detector meets in real footage. Every
//! pixel is a pure function of (seed, frame index) plus the surgery style,
//! so datasets regenerate byte-identically.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::hsv_to_rgb;
use crate::dataio::{
    write_annotation, AnnotationFile, DataError, DatasetManifest, DomainTag, ManifestEntry,
    PlaneImage, Shape, ShapeKind, UsageTag,
};
use crate::heatmap::{LandmarkSet, Point};
use crate::seeds::derive_seed;

const SEED_FRAME: u64 = 101;
const SEED_STYLE: u64 = 102;
const SEED_HUE_OFFSET: u64 = 103;

/// Landmarks stay this far from every frame edge.
const PLACEMENT_MARGIN: f64 = 8.0;
/// Placement attempts per requested suture before giving up.
const ATTEMPTS_PER_SUTURE: usize = 120;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid phantom config: {0}")]
    Config(String),
    #[error(
        "frame {frame_index}: placed only {placed} of {requested} sutures \
         under the separation constraint"
    )]
    Placement {
        frame_index: u64,
        requested: usize,
        placed: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Green,
    White,
    /// A fair coin per suture between green and white.
    Mixed,
}

/// Generation parameters. The separation floor of 10 px keeps decoded
/// detections unambiguous under the default 6 px match radius
/// (2·radius − 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    pub sutures_min: usize,
    pub sutures_max: usize,
    pub min_separation: f64,
    pub color_mode: ColorMode,
    pub distractors: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            width: 512,
            height: 288,
            sutures_min: 8,
            sutures_max: 16,
            min_separation: 10.0,
            color_mode: ColorMode::Green,
            distractors: 6,
            noise_level: 0.02,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 32 || self.height < 32 {
            return Err(SynthError::Config(format!(
                "frame {}x{} is too small (minimum 32x32)",
                self.width, self.height
            )));
        }
        if self.sutures_min > self.sutures_max {
            return Err(SynthError::Config(format!(
                "suture range {}..{} is inverted",
                self.sutures_min, self.sutures_max
            )));
        }
        let floor = 2.0 * crate::eval::DEFAULT_MATCH_RADIUS - 2.0;
        if self.min_separation < floor {
            return Err(SynthError::Config(format!(
                "min_separation {} is below {floor} (2·match radius − 2); \
                 closer landmarks make evaluation ambiguous",
                self.min_separation
            )));
        }
        if !(self.noise_level >= 0.0) {
            return Err(SynthError::Config(format!(
                "noise_level must be non-negative, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// Appearance parameters held constant across one surgery's frames, so
/// folds split by surgery see a genuine domain shift.
#[derive(Debug, Clone, PartialEq)]
pub struct SurgeryStyle {
    pub base_rgb: [f64; 3],
    pub annulus_rgb: [f64; 3],
    /// Radial brightness falloff strength.
    pub vignette: f64,
    /// Lighting center offset as a fraction of the half-frame.
    pub center_bias: (f64, f64),
    pub light: f64,
    pub noise_gain: f64,
}

impl SurgeryStyle {
    /// Style for one surgery index. Background hues advance by the golden
    /// ratio per surgery, which spreads any number of surgeries evenly
    /// around the hue circle; the remaining parameters come from a
    /// style-specific rng stream.
    pub fn derive(seed: u64, surgery_index: usize) -> SurgeryStyle {
        let offset = derive_seed(seed, SEED_HUE_OFFSET, 0) as f64 / u64::MAX as f64;
        let hue = (offset + 0.618_033_988_749_895 * surgery_index as f64).fract();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_STYLE, surgery_index as u64));
        let sat = 0.22 + 0.18 * rng.gen::<f64>();
        let val = 0.40 + 0.20 * rng.gen::<f64>();
        let (r, g, b) = hsv_to_rgb(hue, sat, val);
        let (ar, ag, ab) = hsv_to_rgb(
            (hue + 0.03).fract(),
            sat * 0.75,
            (val * 1.25).clamp(0.0, 1.0),
        );
        SurgeryStyle {
            base_rgb: [r, g, b],
            annulus_rgb: [ar, ag, ab],
            vignette: 0.25 + 0.30 * rng.gen::<f64>(),
            center_bias: (
                0.12 * (2.0 * rng.gen::<f64>() - 1.0),
                0.12 * (2.0 * rng.gen::<f64>() - 1.0),
            ),
            light: 0.90 + 0.20 * rng.gen::<f64>(),
            noise_gain: 0.60 + 0.80 * rng.gen::<f64>(),
        }
    }
}

/// One generated frame with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomFrame {
    pub image: PlaneImage,
    pub landmarks: LandmarkSet,
    pub annotation: AnnotationFile,
}

/// Generates one frame under the config's own default style.
pub fn generate_frame(config: &PhantomConfig, frame_index: u64) -> Result<PhantomFrame, SynthError> {
    generate_frame_styled(config, &SurgeryStyle::derive(config.seed, 0), frame_index)
}

/// Generates one frame with an explicit surgery style. Deterministic in
/// (config, style, frame_index).
pub fn generate_frame_styled(
    config: &PhantomConfig,
    style: &SurgeryStyle,
    frame_index: u64,
) -> Result<PhantomFrame, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_FRAME, frame_index));
    let (w, h) = (config.width, config.height);
    let (wf, hf) = (w as f64, h as f64);

    let count = rng.gen_range(config.sutures_min..=config.sutures_max);

    // Annulus geometry: style bias plus a small per-frame wobble stands in
    // for viewpoint changes.
    let cx = wf * 0.5 * (1.0 + style.center_bias.0) + wf * 0.02 * (2.0 * rng.gen::<f64>() - 1.0);
    let cy = hf * 0.5 * (1.0 + style.center_bias.1) + hf * 0.02 * (2.0 * rng.gen::<f64>() - 1.0);
    let axis_a = 0.32 * wf;
    let axis_b = 0.30 * hf;

    // Rejection-sampled ring placement under the separation constraint.
    let mut landmarks: Vec<Point> = Vec::with_capacity(count);
    let budget = ATTEMPTS_PER_SUTURE * count;
    let mut attempts = 0;
    while landmarks.len() < count && attempts < budget {
        attempts += 1;
        let theta = TAU * rng.gen::<f64>();
        let radial = 1.0 + 0.12 * (2.0 * rng.gen::<f64>() - 1.0);
        let x = cx + axis_a * radial * theta.cos();
        let y = cy + axis_b * radial * theta.sin();
        if x < PLACEMENT_MARGIN
            || x > wf - 1.0 - PLACEMENT_MARGIN
            || y < PLACEMENT_MARGIN
            || y > hf - 1.0 - PLACEMENT_MARGIN
        {
            continue;
        }
        let p = Point::new(x, y);
        if landmarks
            .iter()
            .all(|q| p.distance(q) >= config.min_separation)
        {
            landmarks.push(p);
        }
    }
    if landmarks.len() < count {
        return Err(SynthError::Placement {
            frame_index,
            requested: count,
            placed: landmarks.len(),
        });
    }

    // Per-suture appearance, drawn in placement order.
    struct SutureLook {
        sigma: f64,
        alpha: f64,
        rgb: [f64; 3],
        tail_angle: f64,
        tail_len: f64,
        tail_sigma: f64,
        tail_alpha: f64,
    }
    let looks: Vec<SutureLook> = landmarks
        .iter()
        .map(|p| {
            let green = match config.color_mode {
                ColorMode::Green => true,
                ColorMode::White => false,
                ColorMode::Mixed => rng.gen::<f64>() < 0.5,
            };
            let rgb = if green {
                let (r, g, b) = hsv_to_rgb(
                    0.30 + 0.10 * rng.gen::<f64>(),
                    0.70 + 0.25 * rng.gen::<f64>(),
                    0.75 + 0.20 * rng.gen::<f64>(),
                );
                [r, g, b]
            } else {
                let v = 0.88 + 0.12 * rng.gen::<f64>();
                let tint = 0.97 + 0.03 * rng.gen::<f64>();
                [v, v * tint, v * tint]
            };
            let outward = (p.y - cy).atan2(p.x - cx) + 0.5 * (2.0 * rng.gen::<f64>() - 1.0);
            let alpha = 0.80 + 0.15 * rng.gen::<f64>();
            SutureLook {
                sigma: 1.5 + rng.gen::<f64>(),
                alpha,
                rgb,
                tail_angle: outward,
                tail_len: 4.0 + 6.0 * rng.gen::<f64>(),
                tail_sigma: 0.8 + 0.5 * rng.gen::<f64>(),
                tail_alpha: alpha * (0.5 + 0.2 * rng.gen::<f64>()),
            }
        })
        .collect();

    // Low-frequency value noise: a coarse grid interpolated across the
    // frame.
    const GRID_W: usize = 6;
    const GRID_H: usize = 4;
    let grid: Vec<f64> = (0..GRID_W * GRID_H)
        .map(|_| 2.0 * rng.gen::<f64>() - 1.0)
        .collect();
    let grid_sample = |x: f64, y: f64| -> f64 {
        let gx = (x / (wf - 1.0)) * (GRID_W - 1) as f64;
        let gy = (y / (hf - 1.0)) * (GRID_H - 1) as f64;
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(GRID_W - 1), (y0 + 1).min(GRID_H - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let top = grid[y0 * GRID_W + x0] * (1.0 - fx) + grid[y0 * GRID_W + x1] * fx;
        let bottom = grid[y1 * GRID_W + x0] * (1.0 - fx) + grid[y1 * GRID_W + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    };

    // Background: vignetted base color, noise-modulated, with a soft
    // lighter band along the annulus.
    let mut image = PlaneImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let rx = (xf - cx) / (wf * 0.5);
            let ry = (yf - cy) / (hf * 0.5);
            let shade = style.light * (1.0 - style.vignette * (rx * rx + ry * ry).min(1.0));
            let tone = 1.0 + 0.12 * style.noise_gain * grid_sample(xf, yf);
            let rho = (((xf - cx) / axis_a).powi(2) + ((yf - cy) / axis_b).powi(2)).sqrt();
            let band = 0.5 * (-((rho - 1.0) / 0.13).powi(2)).exp();
            for c in 0..3 {
                let base = style.base_rgb[c] * shade * tone;
                let v = base + (style.annulus_rgb[c] * shade - base) * band;
                image.set(c, x, y, v.clamp(0.0, 1.0));
            }
        }
    }

    // Strand tails under their dots, then the dots themselves.
    for (p, look) in landmarks.iter().zip(&looks) {
        let tip = Point::new(
            p.x + look.tail_len * look.tail_angle.cos(),
            p.y + look.tail_len * look.tail_angle.sin(),
        );
        draw_segment(&mut image, *p, tip, look.tail_sigma, look.rgb, look.tail_alpha);
    }
    for (p, look) in landmarks.iter().zip(&looks) {
        draw_dot(&mut image, p.x, p.y, look.sigma, look.rgb, look.alpha);
    }

    // Distractors keep clear of the landmarks so ground truth stays exact;
    // a crowded spot is skipped rather than failing the frame.
    for d in 0..config.distractors {
        let mut pos = None;
        for _ in 0..20 {
            let x = 2.0 + (wf - 4.0) * rng.gen::<f64>();
            let y = 2.0 + (hf - 4.0) * rng.gen::<f64>();
            let p = Point::new(x, y);
            if landmarks
                .iter()
                .all(|q| p.distance(q) >= config.min_separation)
            {
                pos = Some(p);
                break;
            }
        }
        let Some(p) = pos else { continue };
        if d % 2 == 0 {
            let ax = 2.0 + 3.0 * rng.gen::<f64>();
            let ay = 1.0 + 2.0 * rng.gen::<f64>();
            let angle = TAU * rng.gen::<f64>();
            let alpha = 0.85 + 0.13 * rng.gen::<f64>();
            draw_ellipse(&mut image, p.x, p.y, ax, ay, angle, [0.97, 0.97, 0.95], alpha);
        } else {
            let toward = (cy - p.y).atan2(cx - p.x) + 0.4 * (2.0 * rng.gen::<f64>() - 1.0);
            let len = (0.15 + 0.20 * rng.gen::<f64>()) * wf.min(hf);
            let tip = Point::new(p.x + len * toward.cos(), p.y + len * toward.sin());
            let sigma = 0.8 + 0.7 * rng.gen::<f64>();
            let alpha = 0.60 + 0.25 * rng.gen::<f64>();
            draw_segment(&mut image, p, tip, sigma, [0.75, 0.78, 0.82], alpha);
        }
    }

    // Fine per-pixel noise, one luminance draw per pixel.
    if config.noise_level > 0.0 {
        let amp = config.noise_level * style.noise_gain;
        for y in 0..h {
            for x in 0..w {
                let n = amp * (2.0 * rng.gen::<f64>() - 1.0);
                for c in 0..3 {
                    image.set(c, x, y, (image.get(c, x, y) + n).clamp(0.0, 1.0));
                }
            }
        }
    }

    let landmarks = LandmarkSet::from(landmarks);
    let annotation = AnnotationFile {
        image_path: format!("frame_{frame_index:04}.png"),
        image_width: w,
        image_height: h,
        shapes: landmarks
            .iter()
            .map(|p| Shape {
                label: "suture".to_string(),
                kind: ShapeKind::Point,
                points: vec![*p],
            })
            .collect(),
        warnings: Vec::new(),
    };
    Ok(PhantomFrame {
        image,
        landmarks,
        annotation,
    })
}

/// Alpha-blends toward `rgb` with a Gaussian falloff around a point.
fn draw_dot(image: &mut PlaneImage, cx: f64, cy: f64, sigma: f64, rgb: [f64; 3], alpha: f64) {
    let r = 4.0 * sigma;
    let (w, h) = (image.width(), image.height());
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w.saturating_sub(1));
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h.saturating_sub(1));
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if d2 > r * r {
                continue;
            }
            let a = alpha * (-d2 * inv).exp();
            blend(image, x, y, rgb, a);
        }
    }
}

/// Same falloff measured from a segment instead of a point.
fn draw_segment(image: &mut PlaneImage, p0: Point, p1: Point, sigma: f64, rgb: [f64; 3], alpha: f64) {
    let r = 4.0 * sigma;
    let (w, h) = (image.width(), image.height());
    let x0 = (p0.x.min(p1.x) - r).floor().max(0.0) as usize;
    let x1 = ((p0.x.max(p1.x) + r).ceil() as usize).min(w.saturating_sub(1));
    let y0 = (p0.y.min(p1.y) - r).floor().max(0.0) as usize;
    let y1 = ((p0.y.max(p1.y) + r).ceil() as usize).min(h.saturating_sub(1));
    let (dx, dy) = (p1.x - p0.x, p1.y - p0.y);
    let len2 = dx * dx + dy * dy;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - p0.x, y as f64 - p0.y);
            let t = if len2 == 0.0 {
                0.0
            } else {
                ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
            };
            let d2 = (px - t * dx).powi(2) + (py - t * dy).powi(2);
            if d2 > r * r {
                continue;
            }
            let a = alpha * (-d2 * inv).exp();
            blend(image, x, y, rgb, a);
        }
    }
}

/// Soft rotated ellipse highlight.
fn draw_ellipse(
    image: &mut PlaneImage,
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    angle: f64,
    rgb: [f64; 3],
    alpha: f64,
) {
    let r = 2.5 * ax.max(ay);
    let (w, h) = (image.width(), image.height());
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w.saturating_sub(1));
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h.saturating_sub(1));
    let (cos_a, sin_a) = (angle.cos(), angle.sin());
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = (dx * cos_a + dy * sin_a) / ax;
            let v = (-dx * sin_a + dy * cos_a) / ay;
            let rho2 = u * u + v * v;
            if rho2 > 9.0 {
                continue;
            }
            let a = alpha * (-2.0 * rho2).exp();
            blend(image, x, y, rgb, a);
        }
    }
}

fn blend(image: &mut PlaneImage, x: usize, y: usize, rgb: [f64; 3], alpha: f64) {
    for c in 0..3 {
        let old = image.get(c, x, y);
        image.set(c, x, y, old + (rgb[c] - old) * alpha);
    }
}

/// Generates `surgeries`×`frames_per_surgery` frames on disk with one
/// style per surgery, and writes `manifest.json` tying them together.
/// Returns the saved manifest.
pub fn generate_dataset(
    config: &PhantomConfig,
    out_dir: &Path,
    surgeries: usize,
    frames_per_surgery: usize,
) -> Result<DatasetManifest, SynthError> {
    config.validate()?;
    let mut entries = Vec::with_capacity(surgeries * frames_per_surgery);
    for s in 0..surgeries {
        let style = SurgeryStyle::derive(config.seed, s);
        let surgery_id = format!("surgery_{s:02}");
        let sdir = out_dir.join(&surgery_id);
        fs::create_dir_all(&sdir).map_err(|source| SynthError::Io {
            path: sdir.clone(),
            source,
        })?;
        for f in 0..frames_per_surgery {
            let frame_index = (s * frames_per_surgery + f) as u64;
            let mut frame = generate_frame_styled(config, &style, frame_index)?;
            let frame_rel = format!("{surgery_id}/frame_{f:03}.png");
            let ann_rel = format!("{surgery_id}/frame_{f:03}.json");
            frame.annotation.image_path = format!("frame_{f:03}.png");
            frame.image.save_png(&out_dir.join(&frame_rel))?;
            let ann_path = out_dir.join(&ann_rel);
            fs::write(&ann_path, write_annotation(&frame.annotation)).map_err(|source| {
                SynthError::Io {
                    path: ann_path.clone(),
                    source,
                }
            })?;
            entries.push(ManifestEntry {
                frame: frame_rel,
                annotation: ann_rel,
                surgery_id: surgery_id.clone(),
                domain: DomainTag::Simulator,
                usage: UsageTag::Cv,
            });
        }
    }
    let manifest = DatasetManifest::new(out_dir.to_path_buf(), entries);
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::rgb_to_hsv;
    use crate::dataio::parse_annotation;

    fn small_config() -> PhantomConfig {
        PhantomConfig {
            width: 128,
            height: 96,
            sutures_min: 5,
            sutures_max: 9,
            seed: 4,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn fixed_count_and_separation_hold() {
        let config = PhantomConfig {
            sutures_min: 12,
            sutures_max: 12,
            ..PhantomConfig::default()
        };
        for index in 0..5 {
            let frame = generate_frame(&config, index).unwrap();
            assert_eq!(frame.landmarks.len(), 12);
            let pts = frame.landmarks.points();
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let d = pts[i].distance(&pts[j]);
                    assert!(d >= 10.0, "frame {index}: landmarks {i},{j} at {d}");
                }
            }
        }
    }

    #[test]
    fn same_seed_and_index_reproduce_identically() {
        let config = small_config();
        let a = generate_frame(&config, 7).unwrap();
        let b = generate_frame(&config, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_frame(&config, 8).unwrap();
        assert_ne!(a.landmarks, c.landmarks);
    }

    #[test]
    fn zero_sutures_is_a_valid_frame() {
        let config = PhantomConfig {
            sutures_min: 0,
            sutures_max: 0,
            ..small_config()
        };
        let frame = generate_frame(&config, 0).unwrap();
        assert!(frame.landmarks.is_empty());
        assert!(frame.annotation.shapes.is_empty());
        assert_eq!(frame.image.width(), 128);
    }

    #[test]
    fn impossible_placement_is_rejected() {
        // A 40×40 ring cannot hold 16 points that are 10 px apart.
        let config = PhantomConfig {
            width: 40,
            height: 40,
            sutures_min: 16,
            sutures_max: 16,
            ..PhantomConfig::default()
        };
        match generate_frame(&config, 0) {
            Err(SynthError::Placement {
                requested, placed, ..
            }) => {
                assert_eq!(requested, 16);
                assert!(placed < 16);
            }
            other => panic!("expected placement failure, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_ambiguous_separation() {
        let config = PhantomConfig {
            min_separation: 6.0,
            ..PhantomConfig::default()
        };
        assert!(matches!(
            generate_frame(&config, 0),
            Err(SynthError::Config(_))
        ));
        let inverted = PhantomConfig {
            sutures_min: 9,
            sutures_max: 3,
            ..PhantomConfig::default()
        };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn annotation_reparses_to_exact_landmarks() {
        let frame = generate_frame(&small_config(), 3).unwrap();
        let parsed = parse_annotation(&write_annotation(&frame.annotation)).unwrap();
        assert!(parsed.warnings.is_empty());
        let points: Vec<Point> = parsed.shapes.iter().map(|s| s.points[0]).collect();
        assert_eq!(points.len(), frame.landmarks.len());
        for (a, b) in points.iter().zip(frame.landmarks.iter()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits(), "x must survive the text round trip");
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn dots_are_brighter_than_their_surroundings() {
        let frame = generate_frame(&small_config(), 1).unwrap();
        for p in frame.landmarks.iter() {
            let (x, y) = (p.x.round() as usize, p.y.round() as usize);
            let g_dot = frame.image.get(1, x, y);
            // Compare against a patch 6 px away (outside the dot core).
            let far = frame.image.get(1, (x + 6).min(127), y);
            assert!(
                g_dot > far,
                "green suture core at ({x},{y}) should outshine its surroundings"
            );
        }
    }

    #[test]
    fn dataset_writes_manifest_and_frames() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config();
        let manifest = generate_dataset(&config, dir.path(), 3, 2).unwrap();
        assert_eq!(manifest.entries.len(), 6);
        assert_eq!(manifest.surgeries().len(), 3);
        // Loading re-validates that every referenced file exists.
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.entries, manifest.entries);
        for entry in &loaded.entries {
            assert_eq!(entry.domain, DomainTag::Simulator);
            assert_eq!(entry.usage, UsageTag::Cv);
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let config = small_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_dataset(&config, dir_a.path(), 2, 2).unwrap();
        generate_dataset(&config, dir_b.path(), 2, 2).unwrap();
        let mut files: Vec<PathBuf> = Vec::new();
        for entry in walk(dir_a.path()) {
            files.push(entry);
        }
        assert!(files.len() >= 9, "expected 4 frames + 4 annotations + manifest");
        for a_path in files {
            let rel = a_path.strip_prefix(dir_a.path()).unwrap();
            let b_path = dir_b.path().join(rel);
            let a_bytes = std::fs::read(&a_path).unwrap();
            let b_bytes = std::fs::read(&b_path).unwrap();
            assert_eq!(a_bytes, b_bytes, "{rel:?} differs between regenerations");
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
        out.sort();
        out
    }

    /// Mean hue over the frame border, where the background dominates.
    fn border_hue(image: &PlaneImage) -> f64 {
        let (w, h) = (image.width(), image.height());
        let (mut sx, mut sy) = (0.0, 0.0);
        for x in 0..w {
            for &y in &[0usize, h - 1] {
                let (hh, _, _) = rgb_to_hsv(image.get(0, x, y), image.get(1, x, y), image.get(2, x, y));
                let a = hh * TAU;
                sx += a.cos();
                sy += a.sin();
            }
        }
        (sy.atan2(sx) / TAU).rem_euclid(1.0)
    }

    fn circular_distance(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(1.0);
        d.min(1.0 - d)
    }

    #[test]
    fn surgeries_have_distinct_styles_but_frames_within_agree() {
        let config = small_config();
        let s0 = SurgeryStyle::derive(config.seed, 0);
        let s1 = SurgeryStyle::derive(config.seed, 1);
        assert_eq!(s0, SurgeryStyle::derive(config.seed, 0), "style is a pure function");

        let f0a = generate_frame_styled(&config, &s0, 0).unwrap();
        let f0b = generate_frame_styled(&config, &s0, 1).unwrap();
        let f1a = generate_frame_styled(&config, &s1, 2).unwrap();

        let within = circular_distance(border_hue(&f0a.image), border_hue(&f0b.image));
        let across = circular_distance(border_hue(&f0a.image), border_hue(&f1a.image));
        // Golden-ratio hue spacing puts adjacent surgeries ~0.38 of the
        // hue circle apart; frames of one surgery share their base color.
        assert!(within < 0.05, "within-surgery hue drift {within}");
        assert!(across > 0.10, "across-surgery hue distance {across}");
    }

    #[test]
    fn config_serde_round_trip_with_defaults() {
        let config = PhantomConfig {
            color_mode: ColorMode::Mixed,
            seed: 9,
            ..PhantomConfig::default()
        };
        let json = serde_json::to_string(&config).unwrap();
        let back: PhantomConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        let sparse: PhantomConfig = serde_json::from_str(r#"{"width": 256, "height": 144}"#).unwrap();
        assert_eq!(sparse.width, 256);
        assert_eq!(sparse.sutures_max, 16);
    }
}
