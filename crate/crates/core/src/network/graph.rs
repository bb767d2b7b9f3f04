//! Acyclic layer graph with a recorded forward tape and reverse-mode
//! backward over it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{self, ParamGrad};
use crate::tensor::{Array3, MaskedMap};

use super::params::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    SiConv,
    SiMaxpool,
    SiUpsample,
    SiAverage,
    SiConcatConv,
    ReluMasked,
}

impl LayerKind {
    pub fn arity(self) -> usize {
        match self {
            LayerKind::SiAverage | LayerKind::SiConcatConv => 2,
            _ => 1,
        }
    }

    pub fn is_parameterized(self) -> bool {
        matches!(self, LayerKind::SiConv | LayerKind::SiConcatConv)
    }
}

/// A reference to a graph input or an earlier node's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Input(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub param: Option<String>,
    pub inputs: Vec<NodeRef>,
}

/// A validated sequence of layers. Node `i` may only consume graph inputs or
/// nodes `< i`; the last node is the output.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<LayerSpec>,
    n_inputs: usize,
}

impl Graph {
    pub fn new(n_inputs: usize) -> Self {
        Self {
            nodes: Vec::new(),
            n_inputs,
        }
    }

    pub fn nodes(&self) -> &[LayerSpec] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a layer after checking arity, parameter naming and ordering.
    pub fn push(&mut self, spec: LayerSpec) -> Result<NodeRef> {
        let id = self.nodes.len();
        if spec.inputs.len() != spec.kind.arity() {
            return Err(Error::Config(format!(
                "{:?} takes {} inputs, got {}",
                spec.kind,
                spec.kind.arity(),
                spec.inputs.len()
            )));
        }
        if spec.kind.is_parameterized() != spec.param.is_some() {
            return Err(Error::Config(format!(
                "{:?} node {id} has a mismatched parameter name",
                spec.kind
            )));
        }
        for r in &spec.inputs {
            match *r {
                NodeRef::Input(i) if i >= self.n_inputs => {
                    return Err(Error::Config(format!("node {id} reads missing input {i}")))
                }
                NodeRef::Node(j) if j >= id => {
                    return Err(Error::Config(format!("node {id} reads later node {j}")))
                }
                _ => {}
            }
        }
        self.nodes.push(spec);
        Ok(NodeRef::Node(id))
    }

    pub fn conv(&mut self, param: &str, input: NodeRef) -> Result<NodeRef> {
        self.push(LayerSpec {
            kind: LayerKind::SiConv,
            param: Some(param.to_string()),
            inputs: vec![input],
        })
    }

    pub fn relu(&mut self, input: NodeRef) -> Result<NodeRef> {
        self.unary(LayerKind::ReluMasked, input)
    }

    pub fn pool(&mut self, input: NodeRef) -> Result<NodeRef> {
        self.unary(LayerKind::SiMaxpool, input)
    }

    pub fn upsample(&mut self, input: NodeRef) -> Result<NodeRef> {
        self.unary(LayerKind::SiUpsample, input)
    }

    pub fn average(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.push(LayerSpec {
            kind: LayerKind::SiAverage,
            param: None,
            inputs: vec![a, b],
        })
    }

    pub fn concat_conv(&mut self, param: &str, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.push(LayerSpec {
            kind: LayerKind::SiConcatConv,
            param: Some(param.to_string()),
            inputs: vec![a, b],
        })
    }

    fn unary(&mut self, kind: LayerKind, input: NodeRef) -> Result<NodeRef> {
        self.push(LayerSpec {
            kind,
            param: None,
            inputs: vec![input],
        })
    }

    /// Runs every node in order, recording inputs and outputs.
    pub fn forward(&self, inputs: &[MaskedMap], store: &ParamStore) -> Result<ForwardTape> {
        if inputs.len() != self.n_inputs {
            return Err(Error::Config(format!(
                "graph takes {} inputs, got {}",
                self.n_inputs,
                inputs.len()
            )));
        }
        let inputs: Vec<Arc<MaskedMap>> = inputs.iter().cloned().map(Arc::new).collect();
        let mut records: Vec<TapeRecord> = Vec::with_capacity(self.nodes.len());
        for (id, spec) in self.nodes.iter().enumerate() {
            let args: Vec<Arc<MaskedMap>> = spec
                .inputs
                .iter()
                .map(|r| match *r {
                    NodeRef::Input(i) => inputs[i].clone(),
                    NodeRef::Node(j) => records[j].output.clone(),
                })
                .collect();
            let out = match spec.kind {
                LayerKind::SiConv => ops::si_conv_forward(&args[0], &store.conv_kernel(param(spec))?)?,
                LayerKind::SiMaxpool => ops::si_maxpool(&args[0], 2)?,
                LayerKind::SiUpsample => ops::si_upsample_forward(&args[0])?,
                LayerKind::SiAverage => ops::si_average(&args[0], &args[1])?,
                LayerKind::SiConcatConv => {
                    let ak = store.adaptive_kernel(param(spec), args[0].channels())?;
                    ops::si_concat_conv_forward(&args[0], &args[1], &ak)?
                }
                LayerKind::ReluMasked => ops::relu_masked(&args[0])?,
            };
            records.push(TapeRecord {
                node: id,
                inputs: args,
                output: Arc::new(out),
            });
        }
        Ok(ForwardTape { inputs, records })
    }

    /// Reverse traversal of `tape`. `d_output` is the gradient w.r.t. the
    /// last node's features. Returns parameter gradients and the gradients
    /// w.r.t. each graph input.
    pub fn backward(&self, tape: &ForwardTape, d_output: &Array3, store: &ParamStore) -> Result<(Gradients, Vec<Array3>)> {
        self.validate_tape(tape)?;
        let n = self.nodes.len();
        let mut node_grads: Vec<Option<Array3>> = vec![None; n];
        let mut input_grads: Vec<Array3> = tape
            .inputs
            .iter()
            .map(|p| Array3::zeros(p.channels(), p.height(), p.width()))
            .collect();
        let last = tape.records.last().ok_or_else(|| Error::Tape("empty tape".into()))?;
        last.output.features().check_same_shape(d_output, "output gradient")?;
        node_grads[n - 1] = Some(d_output.clone());

        let mut grads = Gradients::new();
        for id in (0..n).rev() {
            let Some(g) = node_grads[id].take() else { continue };
            let spec = &self.nodes[id];
            let rec = &tape.records[id];
            let args = &rec.inputs;
            let og = match spec.kind {
                LayerKind::SiConv => ops::si_conv_backward(&args[0], &store.conv_kernel(param(spec))?, &g)?,
                LayerKind::SiMaxpool => ops::si_maxpool_backward(&args[0], &g)?,
                LayerKind::SiUpsample => ops::si_upsample_backward(&args[0], &g)?,
                LayerKind::SiAverage => ops::si_average_backward(&args[0], &args[1], &g)?,
                LayerKind::SiConcatConv => {
                    let ak = store.adaptive_kernel(param(spec), args[0].channels())?;
                    ops::si_concat_conv_backward(&args[0], &args[1], &ak, &g)?
                }
                LayerKind::ReluMasked => ops::relu_masked_backward(&args[0], &g)?,
            };
            match og.params {
                Some(ParamGrad::Conv(k)) => {
                    let name = param(spec);
                    grads.add(&format!("{name}.weight"), k.weights());
                    grads.add(&format!("{name}.bias"), k.bias());
                }
                Some(ParamGrad::Adaptive(k)) => {
                    let name = param(spec);
                    for (i, s) in k.sets().iter().enumerate() {
                        grads.add(&format!("{name}.k{}", i + 1), s);
                    }
                    grads.add(&format!("{name}.bias"), k.bias());
                }
                None => {}
            }
            for (r, d) in spec.inputs.iter().zip(og.inputs) {
                match *r {
                    NodeRef::Input(i) => input_grads[i].add_assign(&d)?,
                    NodeRef::Node(j) => match &mut node_grads[j] {
                        Some(acc) => acc.add_assign(&d)?,
                        slot @ None => *slot = Some(d),
                    },
                }
            }
        }
        Ok((grads, input_grads))
    }

    fn validate_tape(&self, tape: &ForwardTape) -> Result<()> {
        if tape.records.len() != self.nodes.len() {
            return Err(Error::Tape(format!(
                "tape holds {} records for {} nodes",
                tape.records.len(),
                self.nodes.len()
            )));
        }
        if tape.inputs.len() != self.n_inputs {
            return Err(Error::Tape(format!(
                "tape holds {} inputs, graph takes {}",
                tape.inputs.len(),
                self.n_inputs
            )));
        }
        for (i, (rec, spec)) in tape.records.iter().zip(&self.nodes).enumerate() {
            if rec.node != i || rec.inputs.len() != spec.inputs.len() {
                return Err(Error::Tape(format!("record {i} does not match node {}", rec.node)));
            }
        }
        Ok(())
    }
}

fn param(spec: &LayerSpec) -> &str {
    spec.param.as_deref().expect("validated on push")
}

#[derive(Debug, Clone)]
pub struct TapeRecord {
    pub node: usize,
    pub inputs: Vec<Arc<MaskedMap>>,
    pub output: Arc<MaskedMap>,
}

/// Everything one forward pass computed, in execution order.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub inputs: Vec<Arc<MaskedMap>>,
    pub records: Vec<TapeRecord>,
}

impl ForwardTape {
    pub fn output(&self) -> Option<&MaskedMap> {
        self.records.last().map(|r| r.output.as_ref())
    }

    /// Drops record `i`, for exercising tape validation.
    pub fn remove_record(&mut self, i: usize) {
        self.records.remove(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{canonicalize, Mask2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_forward_references_and_bad_params() {
        let mut g = Graph::new(1);
        assert!(g.relu(NodeRef::Node(0)).is_err());
        assert!(g.relu(NodeRef::Input(1)).is_err());
        assert!(g
            .push(LayerSpec {
                kind: LayerKind::SiConv,
                param: None,
                inputs: vec![NodeRef::Input(0)],
            })
            .is_err());
        assert!(g
            .push(LayerSpec {
                kind: LayerKind::ReluMasked,
                param: Some("x".into()),
                inputs: vec![NodeRef::Input(0)],
            })
            .is_err());
        assert!(g
            .push(LayerSpec {
                kind: LayerKind::SiAverage,
                param: None,
                inputs: vec![NodeRef::Input(0)],
            })
            .is_err());
    }

    #[test]
    fn multi_consumer_gradients_sum() {
        // out = avg(relu(x), relu(x)) feeds relu twice from one node
        let mut g = Graph::new(1);
        let r = g.relu(NodeRef::Input(0)).unwrap();
        g.average(r, r).unwrap();
        let x = canonicalize(Array3::filled(1, 1, 2, 3.0), Mask2::ones(1, 2)).unwrap();
        let store = ParamStore::new();
        let tape = g.forward(&[x], &store).unwrap();
        let (_, dx) = g.backward(&tape, &Array3::filled(1, 1, 2, 1.0), &store).unwrap();
        // each branch receives 1/(2+ε), summed back to ≈ 1
        for v in dx[0].data() {
            assert!((v - 2.0 / (2.0 + crate::EPS)).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_record_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.init_conv(&mut rng, "c", 2, 1, 1).unwrap();
        let mut g = Graph::new(1);
        let c = g.conv("c", NodeRef::Input(0)).unwrap();
        g.relu(c).unwrap();
        let x = canonicalize(Array3::filled(1, 4, 4, 1.0), Mask2::ones(4, 4)).unwrap();
        let mut tape = g.forward(&[x], &store).unwrap();
        tape.remove_record(0);
        let err = g.backward(&tape, &Array3::zeros(2, 4, 4), &store).unwrap_err();
        assert!(matches!(err, Error::Tape(_)));
    }

    #[test]
    fn concat_conv_node_fuses_guidance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.init_adaptive(&mut rng, "fuse", 3, 2, 4).unwrap();
        let mut g = Graph::new(2);
        g.concat_conv("fuse", NodeRef::Input(0), NodeRef::Input(1)).unwrap();
        let depth = crate::oracle::random_map(&mut rng, 2, 4, 4, 0.5);
        let guide = crate::oracle::random_map(&mut rng, 4, 4, 4, 1.0);
        let tape = g.forward(&[depth.clone(), guide.clone()], &store).unwrap();
        let out = tape.output().unwrap();
        assert_eq!(out.channels(), 3);
        assert_eq!(out.mask().count(), 16);
        let (grads, dins) = g.backward(&tape, &Array3::filled(3, 4, 4, 1.0), &store).unwrap();
        assert!(grads.get("fuse.k1").is_some() && grads.get("fuse.k3").is_some());
        assert_eq!(dins[1].shape(), (4, 4, 4));
    }
}
