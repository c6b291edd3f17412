//! Versioned binary checkpoints.
//!
//! A checkpoint stores the architecture (as JSON), the iteration counter,
//! every parameter and batch-norm buffer by name, and optionally the trainer
//! state (optimizer moments plus the two rng stream positions) needed for
//! bit-exact resumption. Tensor data is written as little-endian f64
//! regardless of the model's scalar type, so save -> load -> save is
//! byte-stable for both f32 and f64 models.

use super::{build_model, ArchitectureConfig, ModelBundle};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::scalar::Scalar;
use ndarray::{ArrayD, Dimension, IxDyn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ZSDACKP1";
const VERSION: u32 = 1;

/// Captured ChaCha stream position; enough to restore the generator exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Optimizer and rng state stored alongside the model.
#[derive(Debug, Clone)]
pub struct TrainerState<F: Scalar> {
    pub adam: Adam<F>,
    pub data_rng: RngState,
    pub mixup_rng: RngState,
}

/// A loaded checkpoint.
pub struct Checkpoint<F: Scalar> {
    pub model: ModelBundle<F>,
    pub iteration: u64,
    pub trainer: Option<TrainerState<F>>,
}

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_named_tensor<F: Scalar>(w: &mut impl Write, name: &str, t: &ArrayD<F>) -> Result<()> {
    let nb = name.as_bytes();
    if nb.len() > u16::MAX as usize {
        return Err(Error::Checkpoint(format!("tensor name too long: {name}")));
    }
    w.write_all(&(nb.len() as u16).to_le_bytes())?;
    w.write_all(nb)?;
    w.write_all(&[t.ndim() as u8])?;
    for d in t.shape() {
        w_u32(w, *d as u32)?;
    }
    for v in t.iter() {
        w_f64(w, Scalar::to_f64(*v))?;
    }
    Ok(())
}

fn read_named_tensor<F: Scalar>(r: &mut impl Read) -> Result<(String, ArrayD<F>)> {
    let mut lb = [0u8; 2];
    r.read_exact(&mut lb)?;
    let mut nb = vec![0u8; u16::from_le_bytes(lb) as usize];
    r.read_exact(&mut nb)?;
    let name = String::from_utf8(nb).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
    let mut nd = [0u8; 1];
    r.read_exact(&mut nd)?;
    let mut shape = Vec::with_capacity(nd[0] as usize);
    for _ in 0..nd[0] {
        shape.push(r_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(F::from_f64(r_f64(r)?));
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
        .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
    Ok((name, arr))
}

fn write_rng(w: &mut impl Write, s: &RngState) -> Result<()> {
    w.write_all(&s.seed)?;
    w_u64(w, s.stream)?;
    w.write_all(&s.word_pos.to_le_bytes())?;
    Ok(())
}

fn read_rng(r: &mut impl Read) -> Result<RngState> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let stream = r_u64(r)?;
    let mut wp = [0u8; 16];
    r.read_exact(&mut wp)?;
    Ok(RngState {
        seed,
        stream,
        word_pos: u128::from_le_bytes(wp),
    })
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    model: &ModelBundle<F>,
    iteration: u64,
    trainer: Option<&TrainerState<F>>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w_u32(&mut w, VERSION)?;
    w.write_all(&[std::mem::size_of::<F>() as u8])?;
    let arch = serde_json::to_vec(&model.arch)
        .map_err(|e| Error::Checkpoint(format!("arch serialization: {e}")))?;
    w_u32(&mut w, arch.len() as u32)?;
    w.write_all(&arch)?;
    w_u64(&mut w, iteration)?;

    let params = model.params();
    w_u32(&mut w, params.len() as u32)?;
    for p in &params {
        write_named_tensor(&mut w, &p.name, &p.value)?;
    }
    let buffers = model.buffers();
    w_u32(&mut w, buffers.len() as u32)?;
    for (name, b) in &buffers {
        write_named_tensor(&mut w, name, &(*b).clone().into_dyn())?;
    }

    match trainer {
        None => w.write_all(&[0u8])?,
        Some(t) => {
            w.write_all(&[1u8])?;
            w_u64(&mut w, t.adam.t)?;
            w_f64(&mut w, t.adam.beta1)?;
            w_f64(&mut w, t.adam.beta2)?;
            w_f64(&mut w, t.adam.eps)?;
            if t.adam.m.len() != params.len() {
                return Err(Error::Checkpoint(
                    "optimizer moment count does not match parameter count".into(),
                ));
            }
            for m in &t.adam.m {
                for v in m.iter() {
                    w_f64(&mut w, Scalar::to_f64(*v))?;
                }
            }
            for m in &t.adam.v {
                for v in m.iter() {
                    w_f64(&mut w, Scalar::to_f64(*v))?;
                }
            }
            write_rng(&mut w, &t.data_rng)?;
            write_rng(&mut w, &t.mixup_rng)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut width = [0u8; 1];
    r.read_exact(&mut width)?;
    if width[0] as usize != std::mem::size_of::<F>() {
        return Err(Error::Checkpoint(format!(
            "checkpoint was written with {}-byte scalars, loading as {}-byte",
            width[0],
            std::mem::size_of::<F>()
        )));
    }
    let arch_len = r_u32(&mut r)? as usize;
    let mut arch_bytes = vec![0u8; arch_len];
    r.read_exact(&mut arch_bytes)?;
    let arch: ArchitectureConfig = serde_json::from_slice(&arch_bytes)
        .map_err(|e| Error::Checkpoint(format!("arch deserialization: {e}")))?;
    let iteration = r_u64(&mut r)?;

    let mut model = build_model::<F>(&arch, 0)?;

    let n_params = r_u32(&mut r)? as usize;
    {
        let mut params = model.params_mut();
        if n_params != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {n_params} parameters, model has {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let (name, value) = read_named_tensor::<F>(&mut r)?;
            if name != p.name {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch: checkpoint {name}, model {}",
                    p.name
                )));
            }
            if value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!("parameter {name}: shape mismatch")));
            }
            p.value = value;
        }
    }
    let n_buffers = r_u32(&mut r)? as usize;
    {
        let mut buffers = model.buffers_mut();
        if n_buffers != buffers.len() {
            return Err(Error::Checkpoint("buffer count mismatch".into()));
        }
        for (name, buf) in buffers.iter_mut() {
            let (got, value) = read_named_tensor::<F>(&mut r)?;
            if &got != name {
                return Err(Error::Checkpoint(format!(
                    "buffer order mismatch: checkpoint {got}, model {name}"
                )));
            }
            let value = value
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|_| Error::Checkpoint(format!("buffer {got} must be 1-d")))?;
            **buf = value;
        }
    }

    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let trainer = if flag[0] == 1 {
        let t = r_u64(&mut r)?;
        let beta1 = r_f64(&mut r)?;
        let beta2 = r_f64(&mut r)?;
        let eps = r_f64(&mut r)?;
        let shapes: Vec<_> = model.params().iter().map(|p| p.value.raw_dim()).collect();
        let read_moments = |r: &mut BufReader<std::fs::File>| -> Result<Vec<ArrayD<F>>> {
            let mut out = Vec::with_capacity(shapes.len());
            for dim in &shapes {
                let n = dim.size();
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    data.push(F::from_f64(r_f64(r)?));
                }
                out.push(
                    ArrayD::from_shape_vec(dim.clone(), data)
                        .map_err(|e| Error::Checkpoint(e.to_string()))?,
                );
            }
            Ok(out)
        };
        let m = read_moments(&mut r)?;
        let v = read_moments(&mut r)?;
        let adam = Adam {
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        };
        let data_rng = read_rng(&mut r)?;
        let mixup_rng = read_rng(&mut r)?;
        Some(TrainerState {
            adam,
            data_rng,
            mixup_rng,
        })
    } else {
        None
    };

    Ok(Checkpoint {
        model,
        iteration,
        trainer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureConfig, Backbone};

    fn tiny_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            backbone: Backbone::SmallCnn,
            conv_channels_g: vec![2, 2, 3],
            conv_channels_branch: vec![3, 3, 4],
            embedding_dims: (4, 4),
            input_shape: (8, 8, 3),
            head_class_counts: (2, 2),
        }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let dir = std::env::temp_dir().join(format!("zsda_ckpt_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let model = build_model::<f32>(&tiny_arch(), 42).unwrap();
        let params: Vec<&crate::nn::Param<f32>> = model.params();
        let adam = Adam::new(&params);
        let mk_rng = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            r.set_stream(3);
            RngState::capture(&r)
        };
        let trainer = TrainerState {
            adam,
            data_rng: mk_rng(1),
            mixup_rng: mk_rng(2),
        };
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");
        save_checkpoint(&p1, &model, 17, Some(&trainer)).unwrap();
        let loaded = load_checkpoint::<f32>(&p1).unwrap();
        assert_eq!(loaded.iteration, 17);
        save_checkpoint(
            &p2,
            &loaded.model,
            loaded.iteration,
            loaded.trainer.as_ref(),
        )
        .unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "save -> load -> save must be byte-stable");

        // parameters survive exactly
        for (a, b) in model.params().iter().zip(loaded.model.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        // rng state restores to an identical generator
        let r = loaded.trainer.unwrap().data_rng.restore();
        assert_eq!(RngState::capture(&r), mk_rng(1));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn rejects_wrong_scalar_width() {
        let dir = std::env::temp_dir().join(format!("zsda_ckpt_w_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let model = build_model::<f32>(&tiny_arch(), 0).unwrap();
        let p = dir.join("m.ckpt");
        save_checkpoint(&p, &model, 0, None).unwrap();
        assert!(load_checkpoint::<f64>(&p).is_err());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
