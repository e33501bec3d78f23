//! Named parameter store, per-forward tape binding, and the checkpoint file
//! format: a versioned header, a JSON metadata string, then each parameter as
//! (name, shape, raw little-endian f64 data).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, TapeId};
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PLABNN01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the parameter set (index into gradient vectors).
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Default, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter `{name}`"
        );
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), self.names.len() - 1);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_by_name(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name).map(|&i| &self.tensors[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn save(&self, path: &Path, meta: &str) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &d in &tensor.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &tensor.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(ParamSet, String)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cur = 0usize;
        let origin = path.display().to_string();
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(Error::Parse {
                    path: origin.clone(),
                    detail: "truncated checkpoint".into(),
                });
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        if take(&mut cur, 8)? != MAGIC {
            return Err(Error::Parse {
                path: origin.clone(),
                detail: "bad magic (not a checkpoint, or unsupported version)".into(),
            });
        }
        let u32_at = |cur: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cur, 4)?.try_into().unwrap()))
        };
        let meta_len = u32_at(&mut cur)? as usize;
        let meta = String::from_utf8(take(&mut cur, meta_len)?.to_vec()).map_err(|e| {
            Error::Parse {
                path: origin.clone(),
                detail: format!("metadata is not utf-8: {e}"),
            }
        })?;
        let count = u32_at(&mut cur)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = u32_at(&mut cur)? as usize;
            let name = String::from_utf8(take(&mut cur, name_len)?.to_vec()).map_err(|e| {
                Error::Parse {
                    path: origin.clone(),
                    detail: format!("parameter name is not utf-8: {e}"),
                }
            })?;
            let ndim = u32_at(&mut cur)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()));
            }
            set.add(&name, Tensor::new(shape, data));
        }
        Ok((set, meta))
    }
}

/// One forward pass: a fresh tape plus lazily created parameter leaves, so
/// gradients can be collected per parameter afterwards.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ParamSet,
    bound: Vec<Option<TapeId>>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Session {
            tape: Tape::new(),
            bound: vec![None; params.len()],
            params,
        }
    }

    /// Tape leaf for a parameter (created on first use).
    pub fn p(&mut self, id: ParamId) -> TapeId {
        if let Some(t) = self.bound[id.0] {
            return t;
        }
        let leaf = self.tape.leaf(self.params.get(id).clone());
        self.bound[id.0] = Some(leaf);
        leaf
    }

    /// Gradients of a scalar root with respect to every parameter, indexed
    /// like the parameter set. Unused parameters yield `None`.
    pub fn param_grads(&self, root: TapeId) -> Vec<Option<Tensor>> {
        let grads = self.tape.backward(root);
        self.bound
            .iter()
            .map(|slot| slot.and_then(|id| grads[id.0].clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = Rng::new(3);
        let mut set = ParamSet::new();
        set.add("enc.w", Tensor::xavier(4, 8, &mut rng));
        set.add("enc.b", Tensor::vector(&[0.1, -0.2, 0.3]));
        let dir = std::env::temp_dir().join(format!("planlab-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.ckpt");
        set.save(&path, r#"{"kind":"test"}"#).unwrap();
        let (loaded, meta) = ParamSet::load(&path).unwrap();
        assert_eq!(meta, r#"{"kind":"test"}"#);
        assert_eq!(loaded.len(), 2);
        for (a, b) in set.tensors().zip(loaded.tensors()) {
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.data, b.data);
        }
        // Truncation is a parse error.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(ParamSet::load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn session_binds_each_parameter_once() {
        let mut set = ParamSet::new();
        let w = set.add("w", Tensor::scalar(2.0));
        let mut sess = Session::new(&set);
        let a = sess.p(w);
        let b = sess.p(w);
        assert_eq!(a, b);
        assert_eq!(sess.tape.len(), 1);
    }
}
