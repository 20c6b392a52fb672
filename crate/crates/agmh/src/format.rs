//! Little-endian binary files for features, codes and checkpoints.
//!
//! Every file starts with an 8-byte magic and a `u32` version.
//!
//! ```text
//! AGMHFEAT  version  N:u64  C:u32 H:u32 W:u32
//!           N × { id:u64  label:u32  split:u8  C·H·W × f64 }
//! AGMHCODE  version  nbits:u32  count:u64
//!           count × { id:u64  label:u32  ceil(nbits/64) × u64 }
//! AGMHMODL  version  config block  tensors
//! ```
//!
//! Split bytes are 0 for query and 1 for retrieval. Code bit `j` lives in word
//! `j / 64` at position `j % 64` and is set for a `+1` coordinate.
//!
//! The checkpoint config block is
//!
//! ```text
//! in_channels descriptors channels memory_units memory_slots bits : u32
//! alpha beta lr lr_drop_factor                                    : f64
//! outer_iterations epochs_per_iteration batch_size
//!   query_sample_size lr_drop_at                                  : u32
//! seed                                                            : u64
//! adl siea adl_denominator                                        : u8
//! ```
//!
//! with `adl_denominator` 0 for `paper` and 1 for `pairs`. It is followed by
//! every head tensor, descriptor by descriptor, each in the order transform_in
//! (w, b), transform_out (w, b), query_proj (w, b), mem_keys, interact,
//! mem_value, align (w, b); then the hash weight `l × kC'` and the center
//! `kC'`. Tensors are raw row-major `f64` with shapes implied by the config.

use std::fs;
use std::path::Path;

use agmh_core::head::HeadShape;
use agmh_core::retrieval::words_for;
use agmh_core::{
    AdlDenominator, AgmhModel, AttributeHeadParams, CodeDatabase, FeatureSet, HashModel, PackedCode, Rng, Split,
    Tensor, TrainConfig,
};

use crate::error::{Error, Result};

pub const FEATURES_MAGIC: &[u8; 8] = b"AGMHFEAT";
pub const CODES_MAGIC: &[u8; 8] = b"AGMHCODE";
pub const MODEL_MAGIC: &[u8; 8] = b"AGMHMODL";
pub const VERSION: u32 = 1;

/// Malformed file content, located by byte offset.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("format error at byte {offset}: {message}")]
pub struct FormatError {
    pub offset: u64,
    pub message: String,
}

/// A trained model with the configuration it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: AgmhModel,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn fail<T>(&self, offset: usize, message: impl Into<String>) -> std::result::Result<T, FormatError> {
        Err(FormatError {
            offset: offset as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => self.fail(
                self.pos,
                format!("truncated: {what} needs {n} bytes, {} left", self.bytes.len() - self.pos),
            ),
        }
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> std::result::Result<Vec<f64>, FormatError> {
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: &[u8; 8]) -> std::result::Result<(), FormatError> {
        let found = self.take(8, "magic")?;
        if found != magic {
            return self.fail(0, format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(found), String::from_utf8_lossy(magic)));
        }
        let at = self.pos;
        let version = self.u32("version")?;
        if version != VERSION {
            return self.fail(at, format!("unsupported version {version}, expected {VERSION}"));
        }
        Ok(())
    }

    fn finish(&self) -> std::result::Result<(), FormatError> {
        if self.pos != self.bytes.len() {
            return self.fail(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }

    /// A positive `u32` extent.
    fn extent(&mut self, what: &str) -> std::result::Result<usize, FormatError> {
        let at = self.pos;
        match self.u32(what)? {
            0 => self.fail(at, format!("{what} must be positive")),
            v => Ok(v as usize),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("extent fits in u32").to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_features(set: &FeatureSet) -> Vec<u8> {
    let item = set.channels * set.height * set.width;
    let mut out = Vec::with_capacity(32 + set.len() * (13 + 8 * item));
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for extent in [set.channels, set.height, set.width] {
        put_u32(&mut out, extent);
    }
    for i in 0..set.len() {
        out.extend_from_slice(&set.ids[i].to_le_bytes());
        out.extend_from_slice(&set.labels[i].to_le_bytes());
        out.push(set.splits[i].to_byte());
        put_f64s(&mut out, set.features[i].data());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<FeatureSet, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(FEATURES_MAGIC)?;
    let n = r.u64("item count")?;
    let (c, h, w) = (r.extent("C")?, r.extent("H")?, r.extent("W")?);
    let mut set = FeatureSet::new(c, h, w);
    for _ in 0..n {
        let at = r.pos;
        let id = r.u64("id")?;
        let label = r.u32("label")?;
        let split_at = r.pos;
        let split = match Split::from_byte(r.u8("split")?) {
            Some(s) => s,
            None => return r.fail(split_at, "split byte must be 0 (query) or 1 (retrieval)"),
        };
        let data = r.f64s(c * h * w, "features")?;
        let tensor = Tensor::new(&[c, h, w], data).expect("extent product matches");
        if let Err(e) = set.push(id, label, split, tensor) {
            return r.fail(at, e.to_string());
        }
    }
    r.finish()?;
    Ok(set)
}

pub fn encode_codes(db: &CodeDatabase) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&db.nbits().to_le_bytes());
    out.extend_from_slice(&(db.len() as u64).to_le_bytes());
    for ((code, id), label) in db.codes().iter().zip(db.ids()).zip(db.labels()) {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&label.to_le_bytes());
        for w in code.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

pub fn decode_codes(bytes: &[u8]) -> std::result::Result<CodeDatabase, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(CODES_MAGIC)?;
    let nbits = r.extent("nbits")? as u32;
    let count = r.u64("count")?;
    let words = words_for(nbits);
    let mut db = CodeDatabase::new(nbits);
    for _ in 0..count {
        let id = r.u64("id")?;
        let label = r.u32("label")?;
        let at = r.pos;
        let packed: Vec<u64> = (0..words).map(|_| r.u64("code word")).collect::<std::result::Result<_, _>>()?;
        let code = match PackedCode::from_words(packed, nbits) {
            Ok(c) => c,
            Err(e) => return r.fail(at, e.to_string()),
        };
        db.push(id, label, code).expect("uniform nbits");
    }
    r.finish()?;
    Ok(db)
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let (c, m) = (&ckpt.config, &ckpt.model);
    let shape = m.head.shape;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [shape.in_channels, shape.descriptors, shape.channels, shape.memory_units, shape.memory_slots, m.bits()] {
        put_u32(&mut out, v);
    }
    put_f64s(&mut out, &[c.alpha, c.beta, c.lr, c.lr_drop_factor]);
    for v in [c.outer_iterations, c.epochs_per_iteration, c.batch_size, c.query_sample_size, c.lr_drop_at] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    let denominator = match c.adl_denominator {
        AdlDenominator::Paper => 0,
        AdlDenominator::Pairs => 1,
    };
    out.extend_from_slice(&[u8::from(c.adl), u8::from(c.siea), denominator]);
    for d in &m.head.descriptors {
        for t in d.tensors() {
            put_f64s(&mut out, t.data());
        }
    }
    put_f64s(&mut out, m.hash.weight.data());
    put_f64s(&mut out, m.center.data());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(MODEL_MAGIC)?;
    let block = r.pos;
    let shape = HeadShape {
        in_channels: r.extent("in_channels")?,
        descriptors: r.extent("descriptors")?,
        channels: r.extent("channels")?,
        memory_units: r.extent("memory_units")?,
        memory_slots: r.extent("memory_slots")?,
    };
    let bits = r.extent("bits")?;
    let (alpha, beta, lr, lr_drop_factor) = (r.f64("alpha")?, r.f64("beta")?, r.f64("lr")?, r.f64("lr_drop_factor")?);
    let outer_iterations = r.u32("outer_iterations")? as usize;
    let epochs_per_iteration = r.u32("epochs_per_iteration")? as usize;
    let batch_size = r.u32("batch_size")? as usize;
    let query_sample_size = r.u32("query_sample_size")? as usize;
    let lr_drop_at = r.u32("lr_drop_at")? as usize;
    let seed = r.u64("seed")?;
    let flag = |r: &mut Reader, what: &str| -> std::result::Result<bool, FormatError> {
        let at = r.pos;
        match r.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => r.fail(at, format!("{what} flag must be 0 or 1, found {v}")),
        }
    };
    let adl = flag(&mut r, "adl")?;
    let siea = flag(&mut r, "siea")?;
    let at = r.pos;
    let adl_denominator = match r.u8("adl_denominator")? {
        0 => AdlDenominator::Paper,
        1 => AdlDenominator::Pairs,
        v => return r.fail(at, format!("adl_denominator must be 0 or 1, found {v}")),
    };
    if let Err(e) = shape.validate() {
        return r.fail(block, e.to_string());
    }
    let config = TrainConfig {
        descriptors: shape.descriptors,
        channels: shape.channels,
        memory_units: shape.memory_units,
        memory_slots: shape.memory_slots,
        bits,
        alpha,
        beta,
        outer_iterations,
        epochs_per_iteration,
        batch_size,
        query_sample_size,
        lr,
        lr_drop_at,
        lr_drop_factor,
        seed,
        adl,
        siea,
        adl_denominator,
    };

    let shapes = shape.descriptor_tensor_shapes();
    let mut head = AttributeHeadParams::init(shape, &mut Rng::new(0)).expect("validated shape");
    for d in &mut head.descriptors {
        for (t, s) in d.tensors_mut().into_iter().zip(&shapes) {
            let n = s.iter().product();
            *t = Tensor::new(s, r.f64s(n, "head tensor")?).expect("extent product matches");
        }
    }
    let len = shape.pooled_len();
    let weight = Tensor::new(&[bits, len], r.f64s(bits * len, "hash weight")?).expect("extent product matches");
    let center = Tensor::from_vec(r.f64s(len, "center")?);
    r.finish()?;
    let model = AgmhModel {
        head,
        hash: HashModel::new(weight).expect("positive extents"),
        center,
    };
    if let Err(e) = model.validate() {
        return r.fail(block, e.to_string());
    }
    Ok(Checkpoint { config, model })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Usage(format!("input file not found: {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decoded<T>(path: &Path, r: std::result::Result<T, FormatError>) -> Result<T> {
    r.map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_features(path: &Path, set: &FeatureSet) -> Result<()> {
    write_file(path, &encode_features(set))
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    decoded(path, decode_features(&read_file(path)?))
}

pub fn save_codes(path: &Path, db: &CodeDatabase) -> Result<()> {
    write_file(path, &encode_codes(db))
}

pub fn load_codes(path: &Path) -> Result<CodeDatabase> {
    decoded(path, decode_codes(&read_file(path)?))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decoded(path, decode_checkpoint(&read_file(path)?))
}
