//! ReLU MLP classifiers: definition, initialization, forward pass and
//! checkpoint I/O.
//!
//! Models are fully described by an [`MlpSpec`] (input width, hidden widths,
//! class count) plus a [`Parameters`] bundle of weight/bias tensors named
//! `w0, b0, w1, b1, ...`. The forward pass is expressed on the autodiff
//! [`Graph`], so gradients with respect to inputs (for attacks) and with
//! respect to parameters (for training) come from the same code path; the
//! pure [`forward_logits`] convenience just builds a throwaway graph, which
//! keeps batched and per-example evaluation bit-identical.
//!
//! Checkpoints use a little-endian binary layout with an eight-byte magic
//! `BATCKPT1`, a format version, the architecture, epoch and seed, then each
//! tensor as (name, rank, extents, raw f64 payload). Floats round-trip
//! bit-exactly.

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::prng::{stream, Prng};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 8] = b"BATCKPT1";
const CHECKPOINT_VERSION: u32 = 1;

/// Architecture of a ReLU MLP classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    /// Number of input features.
    pub input_dim: usize,
    /// Hidden layer widths; may be empty for a single affine layer.
    pub hidden: Vec<usize>,
    /// Number of output classes; at least 2.
    pub num_classes: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Result<MlpSpec> {
        let spec = MlpSpec {
            input_dim,
            hidden,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid!("input_dim must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(invalid!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if let Some(w) = self.hidden.iter().find(|&&w| w == 0) {
            return Err(invalid!("hidden width {w} must be at least 1"));
        }
        Ok(())
    }

    /// (fan_in, fan_out) for each affine layer, in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.num_classes));
        dims
    }
}

/// Named weight/bias tensors of an MLP, ordered `w0, b0, w1, b1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    entries: Vec<(String, Tensor)>,
}

impl Parameters {
    /// Wraps pre-built tensors, checking they chain into a valid MLP for
    /// `spec`.
    pub fn from_entries(spec: &MlpSpec, entries: Vec<(String, Tensor)>) -> Result<Parameters> {
        let dims = spec.layer_dims();
        if entries.len() != dims.len() * 2 {
            return Err(invalid!(
                "expected {} tensors for {} layers, got {}",
                dims.len() * 2,
                dims.len(),
                entries.len()
            ));
        }
        for (layer, (fan_in, fan_out)) in dims.iter().enumerate() {
            let (wname, w) = &entries[2 * layer];
            let (bname, b) = &entries[2 * layer + 1];
            if wname != &format!("w{layer}") || bname != &format!("b{layer}") {
                return Err(invalid!(
                    "layer {layer} tensors must be named w{layer}/b{layer}, got {wname}/{bname}"
                ));
            }
            if w.shape() != [*fan_in, *fan_out] {
                return Err(invalid!(
                    "w{layer} has shape {:?}, expected [{fan_in}, {fan_out}]",
                    w.shape()
                ));
            }
            if b.shape() != [*fan_out] {
                return Err(invalid!(
                    "b{layer} has shape {:?}, expected [{fan_out}]",
                    b.shape()
                ));
            }
        }
        Ok(Parameters { entries })
    }

    /// All-zero parameters: logits are identically zero, probabilities
    /// uniform. Useful as the "untrained" reference model.
    pub fn zeros(spec: &MlpSpec) -> Parameters {
        let mut entries = Vec::new();
        for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            entries.push((format!("w{layer}"), Tensor::zeros(vec![fan_in, fan_out])));
            entries.push((format!("b{layer}"), Tensor::zeros(vec![fan_out])));
        }
        Parameters { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers every tensor as a graph leaf, in parameter order.
    pub fn register(&self, graph: &mut Graph) -> Vec<NodeId> {
        self.entries
            .iter()
            .map(|(_, t)| graph.leaf(t.clone()))
            .collect()
    }
}

/// Glorot-uniform initialization: weights drawn from
/// U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))), biases zero.
///
/// Deterministic: the draw order is fixed and keyed only by `seed`.
pub fn init_parameters(spec: &MlpSpec, seed: u64) -> Result<Parameters> {
    spec.validate()?;
    let mut rng = Prng::new(seed, &[stream::INIT]);
    let mut entries = Vec::new();
    for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.uniform_in(-limit, limit))
            .collect();
        entries.push((
            format!("w{layer}"),
            Tensor::from_parts(vec![fan_in, fan_out], data),
        ));
        entries.push((format!("b{layer}"), Tensor::zeros(vec![fan_out])));
    }
    Ok(Parameters { entries })
}

/// Builds the MLP forward pass on `graph` from already-registered parameter
/// leaves, returning the logits node.
///
/// `x` must be a `[batch, input_dim]` node. Affine layers alternate with
/// ReLU; the final layer has no activation.
pub fn forward_graph(graph: &mut Graph, param_ids: &[NodeId], x: NodeId) -> Result<NodeId> {
    if param_ids.is_empty() || param_ids.len() % 2 != 0 {
        return Err(invalid!(
            "parameter ids must come in (weight, bias) pairs, got {}",
            param_ids.len()
        ));
    }
    let layers = param_ids.len() / 2;
    let mut h = x;
    for layer in 0..layers {
        let w = param_ids[2 * layer];
        let b = param_ids[2 * layer + 1];
        let z = graph.matmul(h, w)?;
        let z = graph.add(z, b)?;
        h = if layer + 1 < layers { graph.relu(z)? } else { z };
    }
    Ok(h)
}

/// Logits for a `[batch, input_dim]` feature matrix.
pub fn forward_logits(params: &Parameters, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(invalid!(
            "forward_logits wants [batch, features] input, got shape {:?}",
            x.shape()
        ));
    }
    let mut graph = Graph::new();
    let ids = params.register(&mut graph);
    let xid = graph.leaf(x.clone());
    let out = forward_graph(&mut graph, &ids, xid)?;
    Ok(graph.value(out).clone())
}

/// Predicted class per row: argmax of the logits, ties to the smallest index.
pub fn predict_class(params: &Parameters, x: &Tensor) -> Result<Vec<usize>> {
    let logits = forward_logits(params, x)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A trained (or in-progress) model snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub params: Parameters,
    /// Last completed training epoch (0 for a fresh model).
    pub epoch: u32,
    /// Seed of the run that produced this snapshot; together with `epoch`
    /// this fully determines the counter-derived random streams on resume.
    pub rng_seed: u64,
}

/// Serializes a checkpoint to `path`. The layout round-trips bit-exactly.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;

    w.write_u32::<LittleEndian>(checkpoint.spec.input_dim as u32)?;
    w.write_u32::<LittleEndian>(checkpoint.spec.hidden.len() as u32)?;
    for &h in &checkpoint.spec.hidden {
        w.write_u32::<LittleEndian>(h as u32)?;
    }
    w.write_u32::<LittleEndian>(checkpoint.spec.num_classes as u32)?;
    w.write_u32::<LittleEndian>(checkpoint.epoch)?;
    w.write_u64::<LittleEndian>(checkpoint.rng_seed)?;

    w.write_u32::<LittleEndian>(checkpoint.params.entries.len() as u32)?;
    for (name, tensor) in &checkpoint.params.entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(tensor.rank() as u32)?;
        for &extent in tensor.shape() {
            w.write_u32::<LittleEndian>(extent as u32)?;
        }
        for &v in tensor.data() {
            w.write_u64::<LittleEndian>(v.to_bits())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
///
/// Wrong magic bytes, an unsupported version and truncation each produce a
/// distinct [`Error::Format`] message.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| truncated("magic", e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| truncated("version", e))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }

    let input_dim = r
        .read_u32::<LittleEndian>()
        .map_err(|e| truncated("input_dim", e))? as usize;
    let hidden_len = r
        .read_u32::<LittleEndian>()
        .map_err(|e| truncated("hidden count", e))? as usize;
    let mut hidden = Vec::with_capacity(hidden_len);
    for _ in 0..hidden_len {
        hidden.push(
            r.read_u32::<LittleEndian>()
                .map_err(|e| truncated("hidden width", e))? as usize,
        );
    }
    let num_classes = r
        .read_u32::<LittleEndian>()
        .map_err(|e| truncated("num_classes", e))? as usize;
    let epoch = r
        .read_u32::<LittleEndian>()
        .map_err(|e| truncated("epoch", e))?;
    let rng_seed = r
        .read_u64::<LittleEndian>()
        .map_err(|e| truncated("rng seed", e))?;
    let spec = MlpSpec::new(input_dim, hidden, num_classes)
        .map_err(|e| Error::Format(format!("checkpoint carries an invalid architecture: {e}")))?;

    let tensor_count = r
        .read_u32::<LittleEndian>()
        .map_err(|e| truncated("tensor count", e))? as usize;
    let mut entries = Vec::with_capacity(tensor_count);
    for t in 0..tensor_count {
        let name_len = r
            .read_u32::<LittleEndian>()
            .map_err(|e| truncated("tensor name length", e))? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|e| truncated("tensor name", e))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("tensor {t} name is not valid utf-8")))?;
        let rank = r
            .read_u32::<LittleEndian>()
            .map_err(|e| truncated("tensor rank", e))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|e| truncated("tensor extent", e))? as usize,
            );
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_bits(
                r.read_u64::<LittleEndian>()
                    .map_err(|e| truncated("tensor payload", e))?,
            ));
        }
        entries.push((name, Tensor::from_parts(shape, data)));
    }
    let params = Parameters::from_entries(&spec, entries)
        .map_err(|e| Error::Format(format!("checkpoint tensors do not match architecture: {e}")))?;

    Ok(Checkpoint {
        spec,
        params,
        epoch,
        rng_seed,
    })
}

fn truncated(section: &str, err: std::io::Error) -> Error {
    if err.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format(format!("checkpoint truncated while reading {section}"))
    } else {
        Error::Io(err)
    }
}
