//! Parameter storage, convolution layers, and initialization.

use sha2::{Digest, Sha256};

use crate::rng::Stream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::{scalar, Scalar};

/// Index into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors plus their gradient accumulators. Parameter order
/// is creation order and is part of the deterministic contract: seeds and
/// checkpoints both key off the names.
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    grads: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), grads: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter {name}");
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.to_string());
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.grads[id.0]
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Tensor<S>) {
        let t = &mut self.grads[id.0];
        assert_eq!(t.shape(), g.shape(), "gradient shape mismatch for {}", self.names[id.0]);
        for (d, s) in t.data_mut().iter_mut().zip(g.data()) {
            *d += *s;
        }
    }

    pub fn zero_grads(&mut self, ids: &[ParamId]) {
        for &id in ids {
            for v in self.grads[id.0].data_mut() {
                *v = S::zero();
            }
        }
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        (0..self.names.len()).map(ParamId).collect()
    }

    /// Ids of every parameter whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        (0..self.names.len()).filter(|&i| self.names[i].starts_with(prefix)).map(ParamId).collect()
    }

    /// SHA-256 over the names, shapes and values of a parameter group;
    /// detects any byte-level drift of the group.
    pub fn group_hash(&self, ids: &[ParamId]) -> String {
        let mut hasher = Sha256::new();
        for &id in ids {
            hasher.update(self.names[id.0].as_bytes());
            hasher.update([0u8]);
            for &d in self.values[id.0].shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in self.values[id.0].data() {
                hasher.update(v.to_f64().expect("finite parameter").to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// (name, tensor) pairs in creation order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }
}

/// Snapshots a parameter group as f32 tensors in store order, ready for a
/// checkpoint.
pub fn collect_values<S: Scalar>(
    store: &ParamStore<S>,
    ids: &[ParamId],
) -> Vec<(String, Tensor<f32>)> {
    ids.iter().map(|&id| (store.name(id).to_string(), store.value(id).cast::<f32>())).collect()
}

/// Writes checkpoint tensors into existing parameters by name. Every tensor
/// must match a registered parameter in name and shape.
pub fn load_values<S: Scalar>(
    store: &mut ParamStore<S>,
    tensors: &[(String, Tensor<f32>)],
) -> crate::Result<()> {
    for (name, t) in tensors {
        let id = store
            .find(name)
            .ok_or_else(|| crate::HyldaError::Config(format!("checkpoint tensor '{name}' has no matching parameter")))?;
        if store.value(id).shape() != t.shape() {
            return Err(crate::HyldaError::Shape(format!(
                "checkpoint tensor '{name}' shape {:?} vs parameter {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t.cast::<S>();
    }
    Ok(())
}

/// 2D convolution layer: 3x3 or 1x1 kernels, optional stride.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Registers weight and bias initialized uniformly in
    /// `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut Stream,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let bound = (1.0 / fan_in as f64).sqrt();
        let wdata: Vec<S> =
            (0..out_ch * in_ch * k * k).map(|_| scalar(rng.uniform_in(-bound, bound))).collect();
        let bdata: Vec<S> = (0..out_ch).map(|_| scalar(rng.uniform_in(-bound, bound))).collect();
        let weight = store.add(
            &format!("{name}.weight"),
            Tensor::from_vec(&[out_ch, in_ch, k, k], wdata).expect("weight shape"),
        );
        let bias =
            store.add(&format!("{name}.bias"), Tensor::from_vec(&[out_ch], bdata).expect("bias shape"));
        Conv2d { weight, bias, stride, pad }
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, input: NodeId) -> NodeId {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(input, w, b, self.stride, self.pad)
    }
}
