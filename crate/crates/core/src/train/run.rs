//! The training loop itself: sample preparation, epoch iteration and
//! cross-validation orchestration.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment;
use crate::dataio::{
    scale_landmarks, split_stereo, AccessLog, DatasetManifest, Fold, ManifestEntry, PlaneImage,
    ShapeKind, UsageTag,
};
use crate::eval::{self, Counts, CurvePoint};
use crate::heatmap::{Heatmap, LandmarkSet};
use crate::tensor::Tensor;
use crate::unet::UNetModel;

use super::{
    derive_seed, loss, loss_value, Adam, Checkpoint, EpochRow, PlateauSchedule, RunRecord,
    TrainConfig, TrainError, SEED_AUGMENT, SEED_DROPOUT, SEED_FOLD_RUN, SEED_FOLD_SPLIT,
    SEED_MODEL, SEED_SHUFFLE,
};

/// One network-ready frame: image and landmarks at the network input size.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: PlaneImage,
    pub landmarks: LandmarkSet,
}

/// Assembled inputs for one fold of training.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldData {
    pub fold_id: usize,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub train_surgeries: Vec<String>,
    pub validation_surgeries: Vec<String>,
}

/// Loads manifest entries into network-ready samples. Stereo frames (any
/// line annotation present) are split into their top and bottom subimages
/// first; every image is then resized to `width`×`height` with landmarks
/// scaled accordingly. File reads go through `log`.
pub fn load_samples(
    manifest: &DatasetManifest,
    entries: &[&ManifestEntry],
    width: usize,
    height: usize,
    log: &AccessLog,
) -> Result<Vec<Sample>, TrainError> {
    let mut out = Vec::new();
    for entry in entries {
        let (image, ann) = manifest.load_entry(entry, log)?;
        let is_stereo = ann.shapes.iter().any(|s| s.kind == ShapeKind::Line);
        let halves: Vec<(String, PlaneImage, LandmarkSet)> = if is_stereo {
            let ((top_img, top_lms), (bottom_img, bottom_lms)) =
                split_stereo(&image, &ann, &entry.frame)?;
            vec![
                (format!("{}#top", entry.frame), top_img, top_lms),
                (format!("{}#bottom", entry.frame), bottom_img, bottom_lms),
            ]
        } else {
            let lms: LandmarkSet = ann
                .shapes
                .iter()
                .filter(|s| s.kind == ShapeKind::Point)
                .map(|s| s.points[0])
                .collect();
            vec![(entry.frame.clone(), image, lms)]
        };
        for (id, img, lms) in halves {
            let sx = width as f64 / img.width() as f64;
            let sy = height as f64 / img.height() as f64;
            out.push(Sample {
                id,
                image: img.resize_bilinear(width, height),
                landmarks: scale_landmarks(&lms, sx, sy),
            });
        }
    }
    Ok(out)
}

/// Stacks image/landmark pairs into the network input tensor and the
/// two-channel target tensor (foreground heatmap, exact complement).
fn assemble(
    pairs: &[(&PlaneImage, &LandmarkSet)],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<(Tensor, Tensor), TrainError> {
    let plane = width * height;
    let mut batch = Vec::with_capacity(pairs.len() * 3 * plane);
    let mut target = Vec::with_capacity(pairs.len() * 2 * plane);
    for (image, landmarks) in pairs {
        if image.width() != width || image.height() != height {
            return Err(TrainError::Config(format!(
                "sample is {}x{}, network expects {width}x{height}",
                image.width(),
                image.height()
            )));
        }
        batch.extend_from_slice(image.data());
        let fg = Heatmap::encode(landmarks, width, height, sigma);
        target.extend_from_slice(fg.data());
        target.extend_from_slice(fg.background().data());
    }
    let n = pairs.len();
    Ok((
        Tensor::from_vec(&[n, 3, height, width], batch),
        Tensor::from_vec(&[n, 2, height, width], target),
    ))
}

/// Mean loss over the validation set in inference mode: running batchnorm
/// statistics, no dropout, no augmentation.
fn validation_loss(
    model: &UNetModel,
    samples: &[Sample],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64, TrainError> {
    let (w, h) = (config.unet.input_width, config.unet.input_height);
    let mut sum = 0.0;
    let mut seen = 0usize;
    for (batch_idx, chunk) in samples.chunks(config.batch_size).enumerate() {
        let pairs: Vec<(&PlaneImage, &LandmarkSet)> =
            chunk.iter().map(|s| (&s.image, &s.landmarks)).collect();
        let (batch, target) = assemble(&pairs, w, h, config.sigma)?;
        let out = model.infer(&batch)?;
        let value = loss_value(&out, &target)?;
        if !value.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: batch_idx,
            });
        }
        sum += value * chunk.len() as f64;
        seen += chunk.len();
    }
    Ok(sum / seen as f64)
}

/// Trains one model on one fold. Every epoch shuffles the training frames
/// with an epoch-indexed rng, augments them, and steps the optimizer per
/// batch; validation runs without augmentation or dropout. The returned
/// checkpoint is the epoch with the lowest validation loss (first on
/// ties), never past epoch 200.
pub fn train_fold(
    data: &FoldData,
    config: &TrainConfig,
) -> Result<(Checkpoint, RunRecord), TrainError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if data.validation.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let (w, h) = (config.unet.input_width, config.unet.input_height);

    let mut model = UNetModel::build(
        config.unet.clone(),
        &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_MODEL, 0)),
    )?;
    let mut adam = Adam::new(config.initial_lr);
    let mut schedule = PlateauSchedule::from_config(config);

    let mut rows: Vec<EpochRow> = Vec::with_capacity(config.epochs_max);
    let mut best: Option<(f64, usize, Checkpoint)> = None;

    for epoch in 0..config.epochs_max {
        let lr = schedule.lr();
        adam.set_lr(lr);

        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            SEED_SHUFFLE,
            epoch as u64,
        )));
        let mut aug_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_AUGMENT, epoch as u64));
        let mut drop_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_DROPOUT, epoch as u64));

        let mut train_sum = 0.0;
        let mut train_seen = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let augmented: Vec<(PlaneImage, LandmarkSet)> = chunk
                .iter()
                .map(|&i| {
                    let s = &data.train[i];
                    augment::augment(&s.image, &s.landmarks, &config.augment, &mut aug_rng)
                })
                .collect();
            let pairs: Vec<(&PlaneImage, &LandmarkSet)> =
                augmented.iter().map(|(i, l)| (i, l)).collect();
            let (batch, target) = assemble(&pairs, w, h, config.sigma)?;

            let mut pass = model.forward_train(&batch, &mut drop_rng)?;
            let t = pass.graph.leaf(target);
            let l = loss(&mut pass.graph, pass.output, t)?;
            let value = pass.graph.value(l).item();
            if !value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            pass.graph.backward(l)?;
            let grads: Vec<(String, Vec<f64>)> = pass
                .param_ids
                .iter()
                .map(|(name, id)| {
                    (
                        name.clone(),
                        pass.graph
                            .grad(*id)
                            .expect("every parameter leaf receives a gradient")
                            .to_vec(),
                    )
                })
                .collect();
            drop(pass);
            adam.step(model.named_parameters_mut(), &grads)?;

            train_sum += value * chunk.len() as f64;
            train_seen += chunk.len();
        }
        let train_loss = train_sum / train_seen as f64;
        let val_loss = validation_loss(&model, &data.validation, config, epoch)?;

        rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved && epoch < super::REPORT_EPOCH_LIMIT {
            best = Some((
                val_loss,
                epoch,
                Checkpoint::capture(
                    &model,
                    &adam,
                    data.fold_id,
                    epoch,
                    val_loss,
                    data.train_surgeries.clone(),
                    data.validation_surgeries.clone(),
                ),
            ));
        }
        schedule.observe(val_loss);
    }

    let (_, best_epoch, checkpoint) = best.expect("at least one epoch ran");
    Ok((
        checkpoint,
        RunRecord {
            fold_id: data.fold_id,
            rows,
            best_epoch,
        },
    ))
}

/// Runs a trained model on one image and returns the foreground heatmap.
pub fn predict_heatmap(model: &UNetModel, image: &PlaneImage) -> Result<Heatmap, TrainError> {
    let (w, h) = (image.width(), image.height());
    let batch = Tensor::from_vec(&[1, 3, h, w], image.data().to_vec());
    let out = model.infer(&batch)?;
    Ok(Heatmap::from_vec(w, h, out.data()[..w * h].to_vec()))
}

/// One fold's artifacts from a cross-validation run.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: Fold,
    pub checkpoint: Checkpoint,
    pub record: RunRecord,
    /// Counts per sweep threshold on this fold's validation frames.
    pub curve_counts: Vec<Counts>,
    /// Files read while loading the validation set, for leakage auditing.
    pub eval_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldOutcome>,
    /// Threshold sweep aggregated across folds.
    pub curve: Vec<CurvePoint>,
}

/// k-fold cross validation: surgery-level folds, one model per fold from a
/// fold-derived seed, each fold evaluated on its own validation frames
/// across the decode-threshold sweep. Only entries tagged for
/// cross-validation participate; the test split never enters.
pub fn run_cv(
    manifest: &DatasetManifest,
    k: usize,
    config: &TrainConfig,
) -> Result<CvResult, TrainError> {
    config.validate()?;
    let folds = crate::dataio::make_folds(
        manifest,
        k,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_FOLD_SPLIT, 0)),
    )?;
    let (w, h) = (config.unet.input_width, config.unet.input_height);

    let mut outcomes = Vec::with_capacity(folds.len());
    for (i, fold) in folds.into_iter().enumerate() {
        let cv_only = |e: &&ManifestEntry| e.usage == UsageTag::Cv;
        let train_entries: Vec<&ManifestEntry> = manifest
            .entries_for_surgeries(&fold.train_surgeries)
            .filter(cv_only)
            .collect();
        let val_entries: Vec<&ManifestEntry> = manifest
            .entries_for_surgeries(&fold.validation_surgeries)
            .filter(cv_only)
            .collect();

        let train_log = AccessLog::new();
        let val_log = AccessLog::new();
        let data = FoldData {
            fold_id: i,
            train: load_samples(manifest, &train_entries, w, h, &train_log)?,
            validation: load_samples(manifest, &val_entries, w, h, &val_log)?,
            train_surgeries: fold.train_surgeries.clone(),
            validation_surgeries: fold.validation_surgeries.clone(),
        };

        let fold_config = TrainConfig {
            seed: derive_seed(config.seed, SEED_FOLD_RUN, i as u64),
            ..config.clone()
        };
        let (checkpoint, record) = train_fold(&data, &fold_config)?;

        let best_model = checkpoint.restore_model()?;
        let mut frames: Vec<(Heatmap, LandmarkSet)> = Vec::with_capacity(data.validation.len());
        for sample in &data.validation {
            let map = predict_heatmap(&best_model, &sample.image)?;
            frames.push((map, sample.landmarks.clone()));
        }
        let curve_counts = eval::fold_curve(&frames, config.match_radius);

        outcomes.push(FoldOutcome {
            fold,
            checkpoint,
            record,
            curve_counts,
            eval_paths: val_log.paths(),
        });
    }

    let per_fold: Vec<Vec<Counts>> = outcomes.iter().map(|o| o.curve_counts.clone()).collect();
    let curve = eval::aggregate_folds(&per_fold)?;
    Ok(CvResult {
        folds: outcomes,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentConfig;
    use crate::dataio::{write_annotation, AnnotationFile, DomainTag, Shape};
    use crate::heatmap::Point;
    use crate::unet::UNetConfig;
    use rand::Rng;

    /// A frame whose image literally contains its own label: channel 0 is
    /// the foreground heatmap, channel 1 its complement. The network only
    /// has to learn a near-identity map, so a few epochs memorize it.
    fn self_labeled_sample(id: &str, width: usize, height: usize, points: &[(f64, f64)]) -> Sample {
        let landmarks: LandmarkSet = points.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let fg = Heatmap::encode(&landmarks, width, height, 1.5);
        let mut image = PlaneImage::new(width, height);
        let plane = width * height;
        image.data_mut()[..plane].copy_from_slice(fg.data());
        for (i, v) in fg.background().data().iter().enumerate() {
            image.data_mut()[plane + i] = *v;
        }
        for i in 0..plane {
            image.data_mut()[2 * plane + i] = 0.5;
        }
        Sample {
            id: id.to_string(),
            image,
            landmarks,
        }
    }

    fn tiny_unet(width: usize, height: usize) -> UNetConfig {
        UNetConfig {
            depth: 1,
            base_filters: 2,
            in_channels: 3,
            out_channels: 2,
            input_width: width,
            input_height: height,
            dropout_schedule: vec![0.3],
        }
    }

    fn tiny_fold_data() -> FoldData {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut frames = Vec::new();
        for i in 0..6 {
            let points: Vec<(f64, f64)> = (0..3)
                .map(|_| (rng.gen_range(3.0..13.0), rng.gen_range(3.0..13.0)))
                .collect();
            frames.push(self_labeled_sample(&format!("f{i}"), 16, 16, &points));
        }
        let validation = frames.split_off(4);
        FoldData {
            fold_id: 0,
            train: frames,
            validation,
            train_surgeries: vec!["a".into(), "b".into()],
            validation_surgeries: vec!["c".into()],
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs_max: 3,
            batch_size: 2,
            seed: 9,
            sigma: 1.5,
            augment: AugmentConfig {
                apply_probability: 0.0,
                ..AugmentConfig::default()
            },
            unet: tiny_unet(16, 16),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn assemble_stacks_images_and_complementary_targets() {
        let a = self_labeled_sample("a", 8, 8, &[(3.0, 3.0)]);
        let b = self_labeled_sample("b", 8, 8, &[(5.0, 2.0), (2.0, 5.0)]);
        let pairs = vec![(&a.image, &a.landmarks), (&b.image, &b.landmarks)];
        let (batch, target) = assemble(&pairs, 8, 8, 1.0).unwrap();
        assert_eq!(batch.shape(), &[2, 3, 8, 8]);
        assert_eq!(target.shape(), &[2, 2, 8, 8]);
        // Each sample's background channel is the exact complement.
        for s in 0..2 {
            let base = s * 128;
            for i in 0..64 {
                let fg = target.data()[base + i];
                let bg = target.data()[base + 64 + i];
                assert_eq!(fg + bg, 1.0);
            }
        }
        // Batch carries the raw image planes.
        assert_eq!(&batch.data()[..192], a.image.data());
    }

    #[test]
    fn assemble_rejects_wrong_size() {
        let a = self_labeled_sample("a", 8, 8, &[]);
        let pairs = vec![(&a.image, &a.landmarks)];
        assert!(assemble(&pairs, 16, 16, 1.0).is_err());
    }

    #[test]
    fn train_fold_runs_records_and_checkpoints() {
        let data = tiny_fold_data();
        let config = tiny_config();
        let (ckpt, record) = train_fold(&data, &config).unwrap();

        assert_eq!(record.rows.len(), 3);
        assert_eq!(record.fold_id, 0);
        assert_eq!(record.best_epoch, RunRecord::compute_best_epoch(&record.rows));
        for row in &record.rows {
            assert!(row.train_loss.is_finite() && row.val_loss.is_finite());
            assert_eq!(row.lr, 1e-3, "no plateau this short");
        }
        assert_eq!(ckpt.meta.epoch, record.best_epoch);
        assert_eq!(
            ckpt.meta.validation_loss.to_bits(),
            record.rows[record.best_epoch].val_loss.to_bits()
        );
        for row in &record.rows {
            assert!(ckpt.meta.validation_loss <= row.val_loss);
        }
        assert_eq!(ckpt.meta.validation_surgeries, vec!["c".to_string()]);
        assert_eq!(ckpt.meta.unet, config.unet);
    }

    #[test]
    fn same_seed_reruns_are_bit_identical() {
        let data = tiny_fold_data();
        let config = tiny_config();
        let (ckpt_a, rec_a) = train_fold(&data, &config).unwrap();
        let (ckpt_b, rec_b) = train_fold(&data, &config).unwrap();
        assert_eq!(rec_a, rec_b);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        ckpt_a.write_to(&mut bytes_a).unwrap();
        ckpt_b.write_to(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);

        let different = TrainConfig {
            seed: 10,
            ..config
        };
        let (_, rec_c) = train_fold(&data, &different).unwrap();
        assert_ne!(rec_a.rows, rec_c.rows);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let data = tiny_fold_data();
        let config = tiny_config();
        let no_train = FoldData {
            train: Vec::new(),
            ..data.clone()
        };
        assert!(matches!(
            train_fold(&no_train, &config),
            Err(TrainError::EmptySet("training"))
        ));
        let no_val = FoldData {
            validation: Vec::new(),
            ..data
        };
        assert!(matches!(
            train_fold(&no_val, &config),
            Err(TrainError::EmptySet("validation"))
        ));
    }

    #[test]
    fn overfits_eight_frames_to_deeply_negative_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut train = Vec::new();
        for i in 0..8 {
            let points: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.gen_range(4.0..28.0), rng.gen_range(4.0..28.0)))
                .collect();
            train.push(self_labeled_sample(&format!("m{i}"), 32, 32, &points));
        }
        let validation = vec![train[0].clone(), train[1].clone()];
        let data = FoldData {
            fold_id: 0,
            train,
            validation,
            train_surgeries: vec!["a".into()],
            validation_surgeries: vec!["a".into()],
        };
        let config = TrainConfig {
            epochs_max: 50,
            batch_size: 2,
            initial_lr: 1e-2,
            seed: 3,
            sigma: 1.5,
            augment: AugmentConfig {
                apply_probability: 0.0,
                ..AugmentConfig::default()
            },
            unet: UNetConfig {
                depth: 2,
                base_filters: 8,
                in_channels: 3,
                out_channels: 2,
                input_width: 32,
                input_height: 32,
                dropout_schedule: vec![0.3, 0.3],
            },
            ..TrainConfig::default()
        };
        let (_, record) = train_fold(&data, &config).unwrap();
        let final_loss = record.rows.last().unwrap().train_loss;
        assert!(
            final_loss < -0.5,
            "memorization failed: final train loss {final_loss}"
        );
    }

    /// Writes a small synthetic dataset: `surgeries`×`frames` self-labeled
    /// monocular frames with point annotations and a manifest.
    fn write_dataset(dir: &std::path::Path, surgeries: usize, frames: usize) -> DatasetManifest {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut entries = Vec::new();
        for s in 0..surgeries {
            let sdir = dir.join(format!("s{s}"));
            std::fs::create_dir_all(&sdir).unwrap();
            for f in 0..frames {
                let points: Vec<(f64, f64)> = (0..3)
                    .map(|_| (rng.gen_range(3.0..13.0), rng.gen_range(3.0..13.0)))
                    .collect();
                let sample = self_labeled_sample("x", 16, 16, &points);
                let frame_rel = format!("s{s}/f{f}.png");
                let ann_rel = format!("s{s}/f{f}.json");
                sample.image.save_png(&dir.join(&frame_rel)).unwrap();
                let ann = AnnotationFile {
                    image_path: format!("f{f}.png"),
                    image_width: 16,
                    image_height: 16,
                    shapes: sample
                        .landmarks
                        .iter()
                        .map(|p| Shape {
                            label: "suture".into(),
                            kind: ShapeKind::Point,
                            points: vec![*p],
                        })
                        .collect(),
                    warnings: Vec::new(),
                };
                std::fs::write(dir.join(&ann_rel), write_annotation(&ann)).unwrap();
                entries.push(ManifestEntry {
                    frame: frame_rel,
                    annotation: ann_rel,
                    surgery_id: format!("s{s}"),
                    domain: DomainTag::Simulator,
                    usage: UsageTag::Cv,
                });
            }
        }
        let manifest = DatasetManifest::new(dir.to_path_buf(), entries);
        manifest.save(&dir.join("manifest.json")).unwrap();
        DatasetManifest::load(&dir.join("manifest.json")).unwrap()
    }

    #[test]
    fn load_samples_scales_landmarks_with_resize() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), 1, 1);
        let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
        let log = AccessLog::new();
        // Double the resolution: landmarks must scale by 2 in both axes.
        let samples = load_samples(&manifest, &entries, 32, 32, &log).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].image.width(), 32);
        let originals = load_samples(&manifest, &entries, 16, 16, &log).unwrap();
        for (a, b) in samples[0]
            .landmarks
            .iter()
            .zip(originals[0].landmarks.iter())
        {
            assert!((a.x - 2.0 * b.x).abs() < 1e-12);
            assert!((a.y - 2.0 * b.y).abs() < 1e-12);
        }
        // Both loads recorded image and annotation reads.
        assert_eq!(log.paths().len(), 4);
    }

    #[test]
    fn load_samples_splits_stereo_frames() {
        let dir = tempfile::tempdir().unwrap();
        let image = PlaneImage::new(8, 8);
        image.save_png(&dir.path().join("st.png")).unwrap();
        let ann = AnnotationFile {
            image_path: "st.png".into(),
            image_width: 8,
            image_height: 8,
            shapes: vec![Shape {
                label: "suture".into(),
                kind: ShapeKind::Line,
                points: vec![Point::new(3.0, 1.0), Point::new(3.0, 6.0)],
            }],
            warnings: Vec::new(),
        };
        std::fs::write(dir.path().join("st.json"), write_annotation(&ann)).unwrap();
        let manifest = DatasetManifest::new(
            dir.path().to_path_buf(),
            vec![ManifestEntry {
                frame: "st.png".into(),
                annotation: "st.json".into(),
                surgery_id: "s".into(),
                domain: DomainTag::Intraop,
                usage: UsageTag::Cv,
            }],
        );
        let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
        let samples = load_samples(&manifest, &entries, 8, 4, &log_new()).unwrap();
        assert_eq!(samples.len(), 2);
        assert!(samples[0].id.ends_with("#top"));
        assert!(samples[1].id.ends_with("#bottom"));
        // Top half keeps (3,1); bottom half gets (3, 6−4=2); both halves
        // are 8×4 already so no rescale happens.
        assert_eq!(samples[0].landmarks.points(), &[Point::new(3.0, 1.0)]);
        assert_eq!(samples[1].landmarks.points(), &[Point::new(3.0, 2.0)]);
    }

    fn log_new() -> AccessLog {
        AccessLog::new()
    }

    #[test]
    fn cross_validation_trains_disjoint_folds_without_leakage() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), 4, 2);
        let config = TrainConfig {
            epochs_max: 2,
            batch_size: 2,
            seed: 5,
            sigma: 1.5,
            augment: AugmentConfig {
                apply_probability: 0.0,
                ..AugmentConfig::default()
            },
            unet: tiny_unet(16, 16),
            ..TrainConfig::default()
        };
        let result = run_cv(&manifest, 2, &config).unwrap();
        assert_eq!(result.folds.len(), 2);
        assert_eq!(result.curve.len(), 20);

        // Validation surgeries partition the dataset across folds.
        let mut all_val: Vec<String> = result
            .folds
            .iter()
            .flat_map(|o| o.fold.validation_surgeries.clone())
            .collect();
        all_val.sort();
        assert_eq!(all_val, vec!["s0", "s1", "s2", "s3"]);

        for outcome in &result.folds {
            assert_eq!(outcome.curve_counts.len(), 20);
            assert_eq!(outcome.record.rows.len(), 2);
            // Leakage audit: every file read for evaluation lives under a
            // validation surgery's directory.
            assert!(!outcome.eval_paths.is_empty());
            for path in &outcome.eval_paths {
                let surgery_dir = path
                    .parent()
                    .and_then(|p| p.file_name())
                    .unwrap()
                    .to_string_lossy()
                    .to_string();
                assert!(
                    outcome.fold.validation_surgeries.contains(&surgery_dir),
                    "{path:?} read during eval but {surgery_dir} is a training surgery"
                );
            }
        }

        // Same seed, same result.
        let again = run_cv(&manifest, 2, &config).unwrap();
        for (a, b) in result.folds.iter().zip(again.folds.iter()) {
            assert_eq!(a.record, b.record);
            assert_eq!(a.curve_counts, b.curve_counts);
        }
    }
}
