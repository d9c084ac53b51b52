//! Checkpoint container: a little-endian binary file holding named parameter
//! tensors plus enough header to refuse foreign files. Values are stored as
//! f32; save → load → save reproduces the file byte for byte.

use std::io::Write as _;
use std::path::Path;

use crate::autodiff::{Parameter, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config_hash: u64,
    pub seed: u64,
    /// Which pipeline stage wrote the file ("fusion", "graph.l2", ...).
    pub stage: String,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_checkpoint(meta: &CheckpointMeta, params: &[&Parameter<f64>]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&meta.config_hash.to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&(meta.stage.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.stage.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Write atomically: a temp file in the target directory, then a rename, so
/// a concurrent reader never observes a half-written checkpoint.
pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    params: &[&Parameter<f64>],
) -> Result<()> {
    let bytes = encode_checkpoint(meta, params)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("non-UTF-8 name".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, Vec<(String, Tensor<f64>)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta = CheckpointMeta {
        config_hash: r.u64()?,
        seed: r.u64()?,
        stage: r.string()?,
    };
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            numel = numel.checked_mul(d).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("dimension overflow in `{name}`"))
            })?;
            shape.push(d);
        }
        let raw = r.take(numel * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        params.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((meta, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<(String, Tensor<f64>)>)> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_checkpoint(&bytes)
}

/// Restore a model in place. Every stored tensor must match a parameter by
/// name and shape, one to one; `expected_hash` guards against resuming under
/// a different configuration.
pub fn load_checkpoint_into(
    path: &Path,
    expected_hash: Option<u64>,
    params: &mut [&mut Parameter<f64>],
) -> Result<CheckpointMeta> {
    let (meta, stored) = load_checkpoint(path)?;
    if let Some(expected) = expected_hash {
        if meta.config_hash != expected {
            return Err(Error::CheckpointHash {
                found: meta.config_hash,
                expected,
            });
        }
    }
    let mut by_name: std::collections::BTreeMap<String, Tensor<f64>> = stored.into_iter().collect();
    for p in params.iter_mut() {
        let t = by_name.remove(&p.name).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("missing parameter `{}`", p.name))
        })?;
        if t.shape() != p.tensor.shape() {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter `{}` has shape {:?}, model expects {:?}",
                p.name,
                t.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor = t;
    }
    if let Some(name) = by_name.keys().next() {
        return Err(Error::CorruptCheckpoint(format!(
            "file carries parameter `{name}` the model does not have"
        )));
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Initializer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_params(seed: u64) -> Vec<Parameter<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        vec![
            Parameter::new("m.w", &[3, 4], Initializer::HeUniform { fan_in: 4 }, &mut rng),
            Parameter::new("m.b", &[3], Initializer::Zeros, &mut rng),
            Parameter::new("m.deep.k", &[2, 2, 1, 2], Initializer::HeUniform { fan_in: 4 }, &mut rng),
        ]
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            config_hash: 0xfeed_beef_dead_cafe,
            seed: 42,
            stage: "fusion".into(),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let params = sample_params(1);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        save_checkpoint(&a, &meta(), &refs).unwrap();

        let mut reloaded = sample_params(2); // different values, same shapes
        {
            let mut muts: Vec<&mut Parameter<f64>> = reloaded.iter_mut().collect();
            let m = load_checkpoint_into(&a, Some(meta().config_hash), &mut muts).unwrap();
            assert_eq!(m, meta());
        }
        let refs2: Vec<&Parameter<f64>> = reloaded.iter().collect();
        save_checkpoint(&b, &meta(), &refs2).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn reload_restores_stored_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.ckpt");
        let params = sample_params(3);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        save_checkpoint(&path, &meta(), &refs).unwrap();
        let (_, stored) = load_checkpoint(&path).unwrap();
        for (p, (name, t)) in params.iter().zip(&stored) {
            assert_eq!(&p.name, name);
            // f32 narrowing happens on save; reload must agree with it bit-wise
            for (a, b) in p.tensor.data().iter().zip(t.data()) {
                assert_eq!(*a as f32, *b as f32);
                assert_eq!(*b, (*a as f32) as f64);
            }
        }
    }

    #[test]
    fn version_mismatch_detected() {
        let params = sample_params(1);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        let mut bytes = encode_checkpoint(&meta(), &refs).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        match decode_checkpoint(&bytes).unwrap_err() {
            Error::CheckpointVersion { found, expected } => {
                assert_eq!(found, 99);
                assert_eq!(expected, CHECKPOINT_VERSION);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hash_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.ckpt");
        let params = sample_params(1);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        save_checkpoint(&path, &meta(), &refs).unwrap();
        let mut other = sample_params(1);
        let mut muts: Vec<&mut Parameter<f64>> = other.iter_mut().collect();
        match load_checkpoint_into(&path, Some(123), &mut muts).unwrap_err() {
            Error::CheckpointHash { found, expected } => {
                assert_eq!(found, meta().config_hash);
                assert_eq!(expected, 123);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_anywhere_is_corrupt() {
        let params = sample_params(1);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        let bytes = encode_checkpoint(&meta(), &refs).unwrap();
        // every strict prefix must fail cleanly, never panic
        for cut in [0, 3, 4, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::CorruptCheckpoint(_)),
                "cut={cut} gave {err:?}"
            );
        }
    }

    #[test]
    fn trailing_garbage_is_corrupt() {
        let params = sample_params(1);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        let mut bytes = encode_checkpoint(&meta(), &refs).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_checkpoint(&bytes).unwrap_err(),
            Error::CorruptCheckpoint(_)
        ));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let params = sample_params(1);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        let mut bytes = encode_checkpoint(&meta(), &refs).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes).unwrap_err(),
            Error::CorruptCheckpoint(_)
        ));
    }

    #[test]
    fn name_and_shape_mismatches_rejected_on_restore() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let params = sample_params(1);
        let refs: Vec<&Parameter<f64>> = params.iter().collect();
        save_checkpoint(&path, &meta(), &refs).unwrap();

        // wrong name
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut renamed = vec![Parameter::<f64>::new(
            "m.w2",
            &[3, 4],
            Initializer::Zeros,
            &mut rng,
        )];
        let mut muts: Vec<&mut Parameter<f64>> = renamed.iter_mut().collect();
        assert!(load_checkpoint_into(&path, None, &mut muts).is_err());

        // wrong shape
        let mut reshaped = sample_params(1);
        reshaped[0].tensor = Tensor::zeros(&[4, 3]);
        let mut muts: Vec<&mut Parameter<f64>> = reshaped.iter_mut().collect();
        assert!(load_checkpoint_into(&path, None, &mut muts).is_err());

        // model missing one of the stored params
        let mut short = sample_params(1);
        short.pop();
        let mut muts: Vec<&mut Parameter<f64>> = short.iter_mut().collect();
        assert!(load_checkpoint_into(&path, None, &mut muts).is_err());
    }
}
