use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use sutura::dataio::{parse_annotation, PlaneImage, ShapeKind};
use sutura::eval::{match_landmarks, DEFAULT_MATCH_RADIUS};
use sutura::train::{predict_heatmap, Checkpoint};
use sutura::{Heatmap, LandmarkSet, Point};

use super::{runtime, CliError};

const COLOR_TRUE_POSITIVE: [f64; 3] = [0.0, 1.0, 0.0];
const COLOR_FALSE_POSITIVE: [f64; 3] = [1.0, 0.0, 0.0];
const COLOR_FALSE_NEGATIVE: [f64; 3] = [1.0, 0.55, 0.0];

#[derive(Args)]
pub struct DecodeArgs {
    /// Input frame PNG; runs the checkpoint's model on it.
    #[arg(long, value_name = "F", requires = "checkpoint", conflicts_with = "heatmap")]
    pub image: Option<PathBuf>,

    /// Checkpoint file for --image mode.
    #[arg(long, value_name = "F", conflicts_with = "heatmap")]
    pub checkpoint: Option<PathBuf>,

    /// Precomputed foreground heatmap PNG (red channel is the score);
    /// skips the model entirely.
    #[arg(long, value_name = "F")]
    pub heatmap: Option<PathBuf>,

    /// Binarization threshold in [0, 1].
    #[arg(long, value_name = "T", default_value_t = 0.5)]
    pub threshold: f64,

    /// Detected points output: one `x,y` line per landmark.
    #[arg(long, value_name = "F")]
    pub out: PathBuf,

    /// labelme annotation with ground-truth points; enables TP/FP/FN
    /// coloring in the overlay.
    #[arg(long, value_name = "F")]
    pub truth: Option<PathBuf>,

    /// Optional overlay PNG marking detections on the input.
    #[arg(long, value_name = "F")]
    pub overlay: Option<PathBuf>,
}

pub fn run(args: &DecodeArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CliError::Usage(format!(
            "--threshold must lie in [0, 1], got {}",
            args.threshold
        )));
    }

    // Base image and score map, either straight from a heatmap file or
    // through the model.
    let (map, base) = match (&args.heatmap, &args.image) {
        (Some(path), None) => {
            let img = PlaneImage::load_png(path)?;
            let (w, h) = (img.width(), img.height());
            let map = Heatmap::from_vec(w, h, img.data()[..w * h].to_vec());
            (map, img)
        }
        (None, Some(path)) => {
            let ckpt_path = args.checkpoint.as_ref().expect("clap enforces the pair");
            let checkpoint = Checkpoint::load(ckpt_path)?;
            let model = checkpoint.restore_model()?;
            let img = PlaneImage::load_png(path)?;
            let (ew, eh) = (
                checkpoint.meta.unet.input_width,
                checkpoint.meta.unet.input_height,
            );
            if img.width() != ew || img.height() != eh {
                return Err(CliError::Usage(format!(
                    "image is {}x{} but the checkpoint expects {ew}x{eh}",
                    img.width(),
                    img.height()
                )));
            }
            let map = predict_heatmap(&model, &img)?;
            (map, img)
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one input is required: --heatmap F, or --image F with --checkpoint F"
                    .into(),
            ));
        }
    };

    let detections = map.decode(args.threshold);
    let mut text = String::new();
    for p in detections.iter() {
        writeln!(text, "{},{}", p.x, p.y).expect("string formatting");
    }
    fs::write(&args.out, text).map_err(|e| runtime(args.out.display(), e))?;

    if let Some(overlay_path) = &args.overlay {
        let truth = args.truth.as_deref().map(load_truth).transpose()?;
        write_overlay(overlay_path, base, &detections, truth.as_ref())?;
    }
    println!("{}", args.out.display());
    Ok(())
}

fn load_truth(path: &Path) -> Result<LandmarkSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| runtime(path.display(), e))?;
    let file = parse_annotation(&text)?;
    Ok(file
        .shapes
        .iter()
        .filter(|s| s.kind == ShapeKind::Point)
        .map(|s| s.points[0])
        .collect())
}

/// Detections ring-marked on the input. With ground truth, matched
/// detections are green, spurious ones red, and missed annotations orange;
/// without it every detection is green.
fn write_overlay(
    path: &Path,
    mut base: PlaneImage,
    detections: &LandmarkSet,
    truth: Option<&LandmarkSet>,
) -> Result<(), CliError> {
    match truth {
        None => {
            for p in detections.iter() {
                draw_ring(&mut base, p, COLOR_TRUE_POSITIVE);
            }
        }
        Some(gt) => {
            let result = match_landmarks(detections, gt, DEFAULT_MATCH_RADIUS);
            for pair in &result.pairs {
                draw_ring(&mut base, &detections.points()[pair.pred], COLOR_TRUE_POSITIVE);
            }
            for &i in &result.unmatched_pred {
                draw_ring(&mut base, &detections.points()[i], COLOR_FALSE_POSITIVE);
            }
            for &i in &result.unmatched_gt {
                draw_ring(&mut base, &gt.points()[i], COLOR_FALSE_NEGATIVE);
            }
        }
    }
    base.save_png(path)?;
    Ok(())
}

fn draw_ring(image: &mut PlaneImage, center: &Point, rgb: [f64; 3]) {
    const INNER: f64 = 3.0;
    const OUTER: f64 = 4.6;
    let (w, h) = (image.width() as f64, image.height() as f64);
    let x0 = (center.x - OUTER).floor().max(0.0) as usize;
    let x1 = ((center.x + OUTER).ceil()).min(w - 1.0) as usize;
    let y0 = (center.y - OUTER).floor().max(0.0) as usize;
    let y1 = ((center.y + OUTER).ceil()).min(h - 1.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2)).sqrt();
            if (INNER..=OUTER).contains(&d) {
                for c in 0..3 {
                    image.set(c, x, y, rgb[c]);
                }
            }
        }
    }
}
