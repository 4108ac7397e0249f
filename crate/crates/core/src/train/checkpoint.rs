//! Versioned binary snapshots of a model plus its optimizer state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic (8 bytes) | version u32 | meta_len u64 | meta JSON |
//! tensor_count u32 | records...
//! record: name_len u32 | name utf-8 | dtype u8 (1 = f64) | rank u8 |
//!         extents u64 × rank | payload f64 × prod(extents)
//! ```
//!
//! Records hold the trainable parameters under their model names, the
//! batchnorm running statistics, and the Adam moments under `adam.m.*` /
//! `adam.v.*`. Restoring a model and rerunning a forward pass reproduces
//! the pre-save output bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::unet::{UNetConfig, UNetModel};

use super::{Adam, TrainError};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SUTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// Everything about a run that is not a tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub unet: UNetConfig,
    pub epoch: usize,
    pub validation_loss: f64,
    pub fold_id: usize,
    pub train_surgeries: Vec<String>,
    pub validation_surgeries: Vec<String>,
    pub adam_step: u64,
    pub adam_lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    /// Snapshot a model and optimizer mid-run.
    pub fn capture(
        model: &UNetModel,
        adam: &Adam,
        fold_id: usize,
        epoch: usize,
        validation_loss: f64,
        train_surgeries: Vec<String>,
        validation_surgeries: Vec<String>,
    ) -> Self {
        let mut tensors = Vec::new();
        for (name, t) in model.named_parameters() {
            tensors.push(TensorRecord {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            });
        }
        for (name, values) in model.named_buffers() {
            tensors.push(TensorRecord {
                name,
                shape: vec![values.len()],
                data: values,
            });
        }
        for (name, m, v) in adam.export_state() {
            tensors.push(TensorRecord {
                name: format!("adam.m.{name}"),
                shape: vec![m.len()],
                data: m,
            });
            tensors.push(TensorRecord {
                name: format!("adam.v.{name}"),
                shape: vec![v.len()],
                data: v,
            });
        }
        Checkpoint {
            meta: CheckpointMeta {
                unet: model.config().clone(),
                epoch,
                validation_loss,
                fold_id,
                train_surgeries,
                validation_surgeries,
                adam_step: adam.step_count(),
                adam_lr: adam.lr(),
            },
            tensors,
        }
    }

    fn record(&self, name: &str) -> Result<&TensorRecord, TrainError> {
        self.tensors
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| TrainError::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// Rebuild the model with parameters and running statistics exactly as
    /// captured.
    pub fn restore_model(&self) -> Result<UNetModel, TrainError> {
        // Freshly initialized weights are overwritten wholesale below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = UNetModel::build(self.meta.unet.clone(), &mut rng)?;
        for (name, tensor) in model.named_parameters_mut() {
            let rec = self
                .tensors
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| TrainError::Checkpoint(format!("missing tensor {name:?}")))?;
            if rec.shape != tensor.shape() {
                return Err(TrainError::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, model expects {:?}",
                    rec.shape,
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(&rec.data);
        }
        let buffer_names: Vec<String> =
            model.named_buffers().into_iter().map(|(n, _)| n).collect();
        for name in buffer_names {
            let rec = self.record(&name)?;
            model
                .set_buffer(&name, &rec.data)
                .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        }
        Ok(model)
    }

    /// Rebuild the optimizer with its moments, step count and rate.
    pub fn restore_optimizer(&self) -> Result<Adam, TrainError> {
        let mut entries = Vec::new();
        for rec in &self.tensors {
            if let Some(param) = rec.name.strip_prefix("adam.m.") {
                let v = self.record(&format!("adam.v.{param}"))?;
                entries.push((param.to_string(), rec.data.clone(), v.data.clone()));
            }
        }
        Ok(Adam::import_state(
            self.meta.adam_lr,
            self.meta.adam_step,
            entries,
        ))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for rec in &self.tensors {
            w.write_all(&(rec.name.len() as u32).to_le_bytes())?;
            w.write_all(rec.name.as_bytes())?;
            w.write_all(&[DTYPE_F64, rec.shape.len() as u8])?;
            for &e in &rec.shape {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for &x in &rec.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Checkpoint, TrainError> {
        let bad = |msg: String| TrainError::Checkpoint(msg);
        let io = |e: std::io::Error| TrainError::Checkpoint(format!("truncated file: {e}"));

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let meta_len = read_u64(&mut r).map_err(io)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes).map_err(io)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| bad(format!("bad metadata block: {e}")))?;

        let count = read_u32(&mut r).map_err(io)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r).map_err(io)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(io)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| bad("tensor name is not utf-8".into()))?;
            let mut head = [0u8; 2];
            r.read_exact(&mut head).map_err(io)?;
            if head[0] != DTYPE_F64 {
                return Err(bad(format!("tensor {name:?}: unknown dtype {}", head[0])));
            }
            let rank = head[1] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r).map_err(io)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(io)?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push(TensorRecord { name, shape, data });
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let file = File::create(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        w.flush().map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TrainError> {
        let file = File::open(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(BufReader::new(file))
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn trained_like_state() -> (UNetModel, Adam, Tensor) {
        let config = UNetConfig {
            depth: 1,
            base_filters: 2,
            in_channels: 3,
            out_channels: 2,
            input_width: 16,
            input_height: 16,
            dropout_schedule: vec![0.3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model = UNetModel::build(config, &mut rng).unwrap();
        let batch = Tensor::randn(&[1, 3, 16, 16], 1.0, &mut rng);
        // A couple of real optimizer steps so moments and running stats
        // are nontrivial.
        let mut adam = Adam::new(1e-3);
        for _ in 0..2 {
            let target = Tensor::from_vec(
                &[1, 2, 16, 16],
                (0..512).map(|_| rng.gen::<f64>()).collect(),
            );
            let mut mask_rng = ChaCha8Rng::seed_from_u64(5);
            let mut pass = model.forward_train(&batch, &mut mask_rng).unwrap();
            let t = pass.graph.leaf(target);
            let l = super::super::loss(&mut pass.graph, pass.output, t).unwrap();
            pass.graph.backward(l).unwrap();
            let grads: Vec<(String, Vec<f64>)> = pass
                .param_ids
                .iter()
                .map(|(n, id)| (n.clone(), pass.graph.grad(*id).unwrap().to_vec()))
                .collect();
            drop(pass);
            adam.step(model.named_parameters_mut(), &grads).unwrap();
        }
        (model, adam, batch)
    }

    fn capture_of(model: &UNetModel, adam: &Adam) -> Checkpoint {
        Checkpoint::capture(
            model,
            adam,
            2,
            14,
            -0.73,
            vec!["s1".into(), "s2".into()],
            vec!["s3".into()],
        )
    }

    #[test]
    fn round_trip_reproduces_forward_bit_exactly() {
        let (model, adam, batch) = trained_like_state();
        let before = model.infer(&batch).unwrap();

        let ckpt = capture_of(&model, &adam);
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let loaded = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(loaded, ckpt);

        let restored = loaded.restore_model().unwrap();
        let after = restored.infer(&batch).unwrap();
        assert_eq!(before.data().len(), after.data().len());
        for (a, b) in before.data().iter().zip(after.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let opt = loaded.restore_optimizer().unwrap();
        assert_eq!(opt, adam);
    }

    #[test]
    fn save_and_load_via_file() {
        let (model, adam, _) = trained_like_state();
        let ckpt = capture_of(&model, &adam);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fold2.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(loaded.meta.fold_id, 2);
        assert_eq!(loaded.meta.validation_surgeries, vec!["s3".to_string()]);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let (model, adam, _) = trained_like_state();
        let ckpt = capture_of(&model, &adam);
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        let err = Checkpoint::read_from(&wrong_magic[..]).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let mut wrong_version = bytes.clone();
        wrong_version[8] = 99;
        let err = Checkpoint::read_from(&wrong_version[..]).unwrap_err();
        assert!(err.to_string().contains("unsupported"), "{err}");

        let truncated = &bytes[..bytes.len() / 2];
        assert!(Checkpoint::read_from(truncated).is_err());
    }

    #[test]
    fn missing_tensor_fails_restore() {
        let (model, adam, _) = trained_like_state();
        let mut ckpt = capture_of(&model, &adam);
        ckpt.tensors.retain(|r| r.name != "enc0.conv1.weight");
        let err = ckpt.restore_model().unwrap_err();
        assert!(err.to_string().contains("enc0.conv1.weight"), "{err}");
    }
}
