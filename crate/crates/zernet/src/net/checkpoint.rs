//! Versioned binary checkpoints: architecture descriptor, flat parameters,
//! Adam moments, and the target standardization constants.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

use super::{TrainState, ZerNetModel};

const MAGIC: &[u8; 8] = b"ZNCKPT\0\0";
const VERSION: u32 = 1;

/// Serialized training snapshot. Targets are standardized before training;
/// `target_mean`/`target_std` undo that at prediction time.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    pub epoch: u64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Checkpoint {
    pub fn from_model(model: &ZerNetModel, state: &TrainState, epoch: u64, target_mean: f64, target_std: f64) -> Self {
        Checkpoint {
            descriptor: model.descriptor(),
            params: model.params.clone(),
            adam_m: state.m.clone(),
            adam_v: state.v.clone(),
            step: state.step,
            epoch,
            target_mean,
            target_std,
        }
    }

    /// Refuse to load into a model built for a different architecture.
    pub fn ensure_matches(&self, model: &ZerNetModel) -> Result<()> {
        let expected = model.descriptor();
        if self.descriptor != expected || self.params.len() != model.param_count() {
            return Err(Error::CheckpointMismatch {
                expected,
                found: self.descriptor.clone(),
            });
        }
        Ok(())
    }

    /// Load parameters and optimizer moments into a matching model and state.
    pub fn restore(&self, model: &mut ZerNetModel, state: &mut TrainState) -> Result<()> {
        self.ensure_matches(model)?;
        if state.m.len() != self.adam_m.len() {
            return Err(Error::CheckpointMismatch {
                expected: format!("{} optimizer moments", state.m.len()),
                found: format!("{}", self.adam_m.len()),
            });
        }
        model.params.copy_from_slice(&self.params);
        state.m.copy_from_slice(&self.adam_m);
        state.v.copy_from_slice(&self.adam_v);
        state.step = self.step;
        Ok(())
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let err = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(err)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(err)?;
    let desc = ckpt.descriptor.as_bytes();
    w.write_u64::<LittleEndian>(desc.len() as u64).map_err(err)?;
    w.write_all(desc).map_err(err)?;
    w.write_u64::<LittleEndian>(ckpt.params.len() as u64).map_err(err)?;
    for vec in [&ckpt.params, &ckpt.adam_m, &ckpt.adam_v] {
        if vec.len() != ckpt.params.len() {
            return Err(Error::LengthMismatch {
                expected: ckpt.params.len(),
                got: vec.len(),
                context: "checkpoint moments".into(),
            });
        }
        for &v in vec.iter() {
            w.write_f64::<LittleEndian>(v).map_err(err)?;
        }
    }
    w.write_u64::<LittleEndian>(ckpt.step).map_err(err)?;
    w.write_u64::<LittleEndian>(ckpt.epoch).map_err(err)?;
    w.write_f64::<LittleEndian>(ckpt.target_mean).map_err(err)?;
    w.write_f64::<LittleEndian>(ckpt.target_std).map_err(err)?;
    w.flush().map_err(err)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let err = |e| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(err)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "not a checkpoint file".into(),
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(err)?;
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let desc_len = r.read_u64::<LittleEndian>().map_err(err)? as usize;
    let mut desc = vec![0u8; desc_len];
    r.read_exact(&mut desc).map_err(err)?;
    let descriptor = String::from_utf8(desc).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "descriptor is not UTF-8".into(),
    })?;
    let count = r.read_u64::<LittleEndian>().map_err(err)? as usize;
    let read_vec = |r: &mut BufReader<File>| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(r.read_f64::<LittleEndian>().map_err(err)?);
        }
        Ok(out)
    };
    let params = read_vec(&mut r)?;
    let adam_m = read_vec(&mut r)?;
    let adam_v = read_vec(&mut r)?;
    let step = r.read_u64::<LittleEndian>().map_err(err)?;
    let epoch = r.read_u64::<LittleEndian>().map_err(err)?;
    let target_mean = r.read_f64::<LittleEndian>().map_err(err)?;
    let target_std = r.read_f64::<LittleEndian>().map_err(err)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(err)? != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "trailing bytes after checkpoint".into(),
        });
    }
    Ok(Checkpoint {
        descriptor,
        params,
        adam_m,
        adam_v,
        step,
        epoch,
        target_mean,
        target_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn small_model() -> ZerNetModel {
        let config = NetConfig {
            max_order: 3,
            rotations: 4,
            conv_filters: [2, 3, 4],
            linear_width: 5,
            linear_relu: true,
        };
        let mut model = ZerNetModel::new(config).unwrap();
        model.init_params(99);
        model
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_identical() {
        let model = small_model();
        let mut state = TrainState::with_defaults(model.param_count());
        let mut params = model.params.clone();
        let grads: Vec<f64> = (0..params.len()).map(|i| (i as f64).sin()).collect();
        state.adam_step(&mut params, &grads).unwrap();

        let ckpt = Checkpoint {
            descriptor: model.descriptor(),
            params,
            adam_m: state.m.clone(),
            adam_v: state.v.clone(),
            step: state.step,
            epoch: 7,
            target_mean: 0.35,
            target_std: 1.2,
        };
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        write_checkpoint(&a, &ckpt).unwrap();
        write_checkpoint(&b, &ckpt).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let back = read_checkpoint(&a).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn restore_rejects_architecture_drift() {
        let model = small_model();
        let state = TrainState::with_defaults(model.param_count());
        let ckpt = Checkpoint::from_model(&model, &state, 0, 0.0, 1.0);

        let other_config = NetConfig {
            max_order: 3,
            rotations: 4,
            conv_filters: [2, 3, 5],
            linear_width: 5,
            linear_relu: true,
        };
        let mut other = ZerNetModel::new(other_config).unwrap();
        let mut other_state = TrainState::with_defaults(other.param_count());
        let res = ckpt.restore(&mut other, &mut other_state);
        match res {
            Err(Error::CheckpointMismatch { expected, found }) => {
                assert_ne!(expected, found);
            }
            other => panic!("expected a checkpoint mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let model = small_model();
        let state = TrainState::with_defaults(model.param_count());
        let ckpt = Checkpoint::from_model(&model, &state, 0, 0.0, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &ckpt).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(read_checkpoint(&path).is_err());

        let mut extended = bytes;
        extended.push(0);
        std::fs::write(&path, &extended).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
