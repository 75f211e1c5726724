//! Named parameter storage, graph binding and the checkpoint file format.
//!
//! Checkpoint layout: a UTF-8 manifest
//!
//! ```text
//! volperc-checkpoint 1
//! params <count>
//! <name> <d0>x<d1>x...
//! end
//! ```
//!
//! followed immediately by every tensor's elements as little-endian `f32`,
//! in manifest order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::tensor::{Init, Scalar, Tensor};

const MAGIC: &str = "volperc-checkpoint 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

/// Graph nodes for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bindings(Vec<NodeId>);

impl Bindings {
    /// Bindings over caller-created nodes, one per parameter in store order.
    pub fn from_nodes(nodes: Vec<NodeId>) -> Self {
        Bindings(nodes)
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.0[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Empty store whose random initializers draw from `seed`.
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("parameter name {name:?} must be non-empty without whitespace")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::create(shape, Init::Zeros)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::create(shape, Init::Constant(value))?)
    }

    /// Uniform in `[-bound, bound)`, seeded from the store's stream.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let seed = self.rng.gen();
        self.add(name, Tensor::create(shape, Init::Uniform { seed, lo: -bound, hi: bound })?)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let seed = self.rng.gen();
        self.add(name, Tensor::create(shape, Init::Normal { seed, mean: 0.0, std })?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count over all parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Registers every parameter as a gradient leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bindings {
        Bindings(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Registers every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bindings {
        Bindings(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    /// Per-parameter gradients in store order; parameters the loss never
    /// touched get zeros.
    pub fn collect_grads(&self, bindings: &Bindings, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.tensors
            .iter()
            .zip(bindings.nodes())
            .map(|(t, &n)| {
                grads
                    .take(n)
                    .unwrap_or_else(|| Tensor::from_parts(t.shape().to_vec(), vec![T::zero(); t.len()]))
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
            rng: self.rng.clone(),
        }
    }

    /// Replaces values with `other`'s; names and shapes must match exactly.
    pub fn load_from(&mut self, other: &ParamStore<f32>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Format("checkpoint parameter names do not match the model".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::Format(format!(
                    "checkpoint shape {:?} does not match model shape {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.cast();
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let mut manifest = format!("{MAGIC}\nparams {}\n", self.len());
        for (name, t) in self.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let dims = if dims.is_empty() { "scalar".to_string() } else { dims.join("x") };
            manifest.push_str(&format!("{name} {dims}\n"));
        }
        manifest.push_str("end\n");
        w.write_all(manifest.as_bytes())?;
        let mut buf = Vec::with_capacity(self.num_elements() * 4);
        for t in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Format("unexpected end of checkpoint manifest".into()));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

impl ParamStore<f32> {
    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        if read_line(&mut r)? != MAGIC {
            return Err(Error::Format("not a volperc checkpoint".into()));
        }
        let count: usize = read_line(&mut r)?
            .strip_prefix("params ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Format("bad params line".into()))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let line = read_line(&mut r)?;
            let (name, dims) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("bad manifest line {line:?}")))?;
            let shape: Vec<usize> = if dims == "scalar" {
                Vec::new()
            } else {
                dims.split('x')
                    .map(|d| d.parse().map_err(|_| Error::Format(format!("bad extent in {line:?}"))))
                    .collect::<Result<_>>()?
            };
            entries.push((name.to_string(), shape));
        }
        if read_line(&mut r)? != "end" {
            return Err(Error::Format("manifest not terminated by 'end'".into()));
        }
        let mut store = ParamStore::new(0);
        for (name, shape) in entries {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Format(format!("truncated data for {name}")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.add(&name, Tensor::from_vec(&shape, data)?)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint data".into()));
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }
}
