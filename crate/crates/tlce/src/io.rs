//! Binary file formats: the TLCD dataset container and the TLCE checkpoint
//! container for network parameters and the explicit memory.
//!
//! All integers are little-endian u32 unless noted; all reals are
//! little-endian IEEE-754 f64. Every format round-trips bit-exactly.
//!
//! Dataset (`TLCD`): magic, version, class count, then per class:
//! class id, train count, test count, feature dim, train vectors, test
//! vectors.
//!
//! Checkpoint (`TLCE`): magic, version, kind (1 = parameters, 2 = memory).
//! Parameters: architecture spec, head kind (u8) and class count, then each
//! tensor as (rank, dims, data). Memory: entry count, then per entry class
//! id, session id, and both prototype vectors, each with its length.

use crate::data::{ClassData, LabeledDataset};
use crate::error::{Error, Result};
use crate::memory::{ExplicitMemory, MemoryEntry};
use crate::model::{ArchitectureSpec, Head, LinearLayer, NetworkParams};
use crate::tensor::Tensor;
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 4] = b"TLCD";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TLCE";
pub const FORMAT_VERSION: u32 = 1;

const KIND_PARAMS: u32 = 1;
const KIND_MEMORY: u32 = 2;

/// What a serialized file contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Dataset,
    Params,
    Memory,
}

/// Identifies a file from its header without parsing the payload.
pub fn identify(bytes: &[u8]) -> Result<FileKind> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic == DATASET_MAGIC {
        return Ok(FileKind::Dataset);
    }
    if magic != CHECKPOINT_MAGIC {
        return Err(r.err_at(0, "unrecognized magic bytes"));
    }
    let _version = r.u32()?;
    match r.u32()? {
        KIND_PARAMS => Ok(FileKind::Params),
        KIND_MEMORY => Ok(FileKind::Memory),
        k => Err(r.err(format!("unknown checkpoint kind {k}"))),
    }
}

// ── Byte plumbing ─────────────────────────────────────────────────────

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, off: 0 }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        self.err_at(self.off, reason)
    }

    fn err_at(&self, off: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: off as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .off
            .checked_add(n)
            .ok_or_else(|| self.err("implausible size"))?;
        if end > self.buf.len() {
            return Err(self.err(format!(
                "truncated: wanted {n} bytes, {} remain",
                self.buf.len() - self.off
            )));
        }
        let out = &self.buf[self.off..end];
        self.off = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let n = count
            .checked_mul(8)
            .ok_or_else(|| self.err("implausible element count"))?;
        let bytes = self.take(n)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(self.err_at(0, "wrong magic bytes"));
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let at = self.off;
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(self.err_at(at, format!("unsupported format version {v}")));
        }
        Ok(())
    }

    fn expect_end(&self) -> Result<()> {
        if self.off != self.buf.len() {
            return Err(self.err(format!(
                "trailing data: {} unread bytes",
                self.buf.len() - self.off
            )));
        }
        Ok(())
    }
}

// ── Dataset (TLCD) ────────────────────────────────────────────────────

pub fn dataset_to_bytes(data: &LabeledDataset) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(DATASET_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(data.classes.len() as u32);
    for class in &data.classes {
        w.u32(class.class_id);
        w.u32(class.train.len() as u32);
        w.u32(class.test.len() as u32);
        w.u32(data.feature_dim as u32);
        for s in &class.train {
            w.f64s(s);
        }
        for s in &class.test {
            w.f64s(s);
        }
    }
    w.buf
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(DATASET_MAGIC)?;
    r.expect_version()?;
    let class_count = r.usize32()?;
    let mut classes = Vec::with_capacity(class_count.min(1 << 16));
    let mut feature_dim = 0usize;
    for i in 0..class_count {
        let class_id = r.u32()?;
        let train_count = r.usize32()?;
        let test_count = r.usize32()?;
        let dim_at = r.off;
        let dim = r.usize32()?;
        if dim == 0 {
            return Err(r.err_at(dim_at, "zero feature dimension"));
        }
        if i == 0 {
            feature_dim = dim;
        } else if dim != feature_dim {
            return Err(r.err_at(
                dim_at,
                format!("class {class_id} has dim {dim}, dataset has {feature_dim}"),
            ));
        }
        let mut read_split = |count: usize| -> Result<Vec<Vec<f64>>> {
            (0..count).map(|_| r.f64s(dim)).collect()
        };
        let train = read_split(train_count)?;
        let test = read_split(test_count)?;
        classes.push(ClassData {
            class_id,
            train,
            test,
        });
    }
    r.expect_end()?;
    let data = LabeledDataset {
        feature_dim,
        classes,
    };
    data.validate()
        .map_err(|e| Error::Format {
            offset: bytes.len() as u64,
            reason: e.to_string(),
        })?;
    Ok(data)
}

pub fn save_dataset(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(data))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}

// ── Parameter checkpoint (TLCE kind 1) ────────────────────────────────

fn write_tensor(w: &mut ByteWriter, t: &Tensor) {
    w.u32(t.rank() as u32);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    w.f64s(t.data());
}

fn read_tensor(r: &mut ByteReader) -> Result<Tensor> {
    let rank_at = r.off;
    let rank = r.usize32()?;
    if rank > crate::tensor::MAX_RANK {
        return Err(r.err_at(rank_at, format!("tensor rank {rank} too large")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let at = r.off;
        let d = r.usize32()?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| r.err_at(at, "tensor dimensions overflow"))?;
        shape.push(d);
    }
    let data = r.f64s(numel)?;
    Tensor::new(shape, data).map_err(|e| r.err(e.to_string()))
}

pub fn params_to_bytes(params: &NetworkParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(KIND_PARAMS);
    w.u32(params.arch.input_dim as u32);
    w.u32(params.arch.hidden_layers.len() as u32);
    for &h in &params.arch.hidden_layers {
        w.u32(h as u32);
    }
    w.u32(params.arch.feature_dim as u32);
    w.u32(params.arch.embedding_dim as u32);
    match &params.head {
        None => w.u8(0),
        Some(Head::PlainCe { weight, .. }) => {
            w.u8(1);
            w.u32(weight.shape()[0] as u32);
        }
        Some(Head::Cosine { weight }) => {
            w.u8(2);
            w.u32(weight.shape()[0] as u32);
        }
    }
    let tensors = params.param_tensors();
    w.u32(tensors.len() as u32);
    for t in tensors {
        write_tensor(&mut w, t);
    }
    w.buf
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<NetworkParams> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    r.expect_version()?;
    let kind_at = r.off;
    let kind = r.u32()?;
    if kind != KIND_PARAMS {
        return Err(r.err_at(kind_at, "not a parameter checkpoint"));
    }
    let input_dim = r.usize32()?;
    let hidden_count = r.usize32()?;
    if hidden_count > 1 << 16 {
        return Err(r.err("implausible hidden layer count"));
    }
    let hidden_layers: Vec<usize> = (0..hidden_count)
        .map(|_| r.usize32())
        .collect::<Result<_>>()?;
    let feature_dim = r.usize32()?;
    let embedding_dim = r.usize32()?;
    let arch = ArchitectureSpec {
        input_dim,
        hidden_layers,
        feature_dim,
        embedding_dim,
    };
    let head_kind = r.u8()?;
    let head_classes = match head_kind {
        0 => 0,
        1 | 2 => r.usize32()?,
        k => return Err(r.err(format!("unknown head kind {k}"))),
    };

    let tensor_count = r.usize32()?;
    let backbone_layers = arch.backbone_dims().len();
    let expected = backbone_layers * 2
        + 2
        + match head_kind {
            1 => 2,
            2 => 1,
            _ => 0,
        };
    if tensor_count != expected {
        return Err(r.err(format!(
            "checkpoint holds {tensor_count} tensors, architecture wants {expected}"
        )));
    }
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        tensors.push(read_tensor(&mut r)?);
    }
    r.expect_end()?;

    let mut iter = tensors.into_iter();
    let mut next_layer = || -> LinearLayer {
        let weight = iter.next().expect("count checked");
        let bias = iter.next().expect("count checked");
        LinearLayer { weight, bias }
    };
    let backbone: Vec<LinearLayer> = (0..backbone_layers).map(|_| next_layer()).collect();
    let projection = next_layer();
    let head = match head_kind {
        1 => {
            let layer = next_layer();
            Some(Head::PlainCe {
                weight: layer.weight,
                bias: layer.bias,
            })
        }
        2 => Some(Head::Cosine {
            weight: iter.next().expect("count checked"),
        }),
        _ => None,
    };
    let params = NetworkParams {
        arch,
        backbone,
        projection,
        head,
    };
    params.validate().map_err(|e| Error::Format {
        offset: bytes.len() as u64,
        reason: e.to_string(),
    })?;
    if let Some(classes) = params.num_classes() {
        if classes != head_classes {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                reason: format!(
                    "head declares {head_classes} classes but holds {classes}"
                ),
            });
        }
    }
    Ok(params)
}

pub fn save_params(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, params_to_bytes(params))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams> {
    params_from_bytes(&std::fs::read(path)?)
}

// ── Memory checkpoint (TLCE kind 2) ───────────────────────────────────

pub fn memory_to_bytes(em: &ExplicitMemory) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(KIND_MEMORY);
    w.u32(em.len() as u32);
    for e in em.entries() {
        w.buf.extend_from_slice(&e.to_bytes());
    }
    w.buf
}

pub fn memory_from_bytes(bytes: &[u8]) -> Result<ExplicitMemory> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    r.expect_version()?;
    let kind_at = r.off;
    let kind = r.u32()?;
    if kind != KIND_MEMORY {
        return Err(r.err_at(kind_at, "not a memory checkpoint"));
    }
    let count = r.usize32()?;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let class_id = r.u32()?;
        let session_introduced = r.u32()?;
        let rhd_len = r.usize32()?;
        let proto_rhd = r.f64s(rhd_len)?;
        let tkn_len = r.usize32()?;
        let proto_tkn = r.f64s(tkn_len)?;
        if rhd_len == 0 || tkn_len == 0 {
            return Err(r.err("empty prototype vector"));
        }
        entries.push(MemoryEntry {
            class_id,
            session_introduced,
            proto_rhd: Tensor::from_vec(proto_rhd),
            proto_tkn: Tensor::from_vec(proto_tkn),
        });
    }
    r.expect_end()?;
    ExplicitMemory::from_entries(entries).map_err(|e| Error::Format {
        offset: bytes.len() as u64,
        reason: e.to_string(),
    })
}

pub fn save_memory(em: &ExplicitMemory, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, memory_to_bytes(em))?;
    Ok(())
}

pub fn load_memory(path: impl AsRef<Path>) -> Result<ExplicitMemory> {
    memory_from_bytes(&std::fs::read(path)?)
}
