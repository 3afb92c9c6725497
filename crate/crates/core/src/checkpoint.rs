//! Versioned binary container for networks, trainer state and datasets.
//!
//! All integers and floats are little endian. Layout:
//!
//! ```text
//! header   "FGANCKPT" | u32 version (=1) | u8 scalar width (4 or 8) | u8 kind
//! payload  kind-specific, see below
//! trailer  u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Kinds: 1 network, 2 trainer, 3 dataset.
//!
//! ```text
//! network    u32 n_layers | f64 clamp_eps | per layer:
//!              u32 fan_in | u32 fan_out | u8 activation | f64 activation param
//!              | f64 dropout | fan_in·fan_out weights (row-major) | fan_out biases
//! optimizer  u8 kind (0 adam, 1 sgd) | u64 t | f64 lr0 | f64 decay
//!              adam only: f64 beta1 | f64 beta2 | f64 eps | m params | v params
//!            (m and v use the parameter order of the network layout)
//! rng        u64 seed | 4×u64 state | u8 has_spare | f64 spare
//! trainer    u32 len | config JSON | generator network | discriminator network
//!              | generator optimizer | discriminator optimizer | rng
//!              | u64 epoch | u64 step | u32 n_history | per record:
//!              u64 epoch | f64 gen_loss | f64 disc_loss | f64 lr_g | f64 lr_d
//! dataset    u32 len | name UTF-8 | u32 rows | u32 cols | rows·cols values
//!              | u8 has_labels | rows × u8 label (0 normal, 1 anomalous)
//! ```
//!
//! Activation codes: 0 relu, 1 leaky_relu, 2 tanh, 3 sigmoid, 4 linear.
//! Scalar-typed values (weights, biases, moments, dataset features) use the
//! width from the header; everything else is f64. Files are written to a
//! temporary sibling and renamed into place.

use std::path::Path;

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};
use crate::neural::{Activation, DenseLayer, LayerGrads, Mlp, ParamGrads};
use crate::optim::{AdamState, Optimizer, SgdState};
use crate::scalar::Scalar;
use crate::trainer::{EpochRecord, FganConfig, TrainerState};

pub const MAGIC: &[u8; 8] = b"FGANCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Network = 1,
    Trainer = 2,
    Dataset = 3,
}

impl Kind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Kind::Network),
            2 => Ok(Kind::Trainer),
            3 => Ok(Kind::Dataset),
            other => Err(Error::Checkpoint(format!("unknown payload kind {other}"))),
        }
    }
}

/// Header fields of a checkpoint file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub scalar_bytes: u8,
    pub kind: Kind,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new<T: Scalar>(kind: Kind) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u8(T::BYTES);
        w.u8(kind as u8);
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::invalid(format!("length {n} exceeds the u32 field")))?;
        self.u32(n);
        Ok(())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.len(b.len())?;
        self.buf.extend_from_slice(b);
        Ok(())
    }
    fn scalars<T: Scalar>(&mut self, vs: &[T]) {
        for &v in vs {
            v.write_le(&mut self.buf);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated payload at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn scalars<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let w = T::BYTES as usize;
        let total = n
            .checked_mul(w)
            .ok_or_else(|| Error::Checkpoint("scalar count overflows".into()))?;
        let raw = self.take(total)?;
        Ok(raw.chunks_exact(w).map(T::read_le).collect())
    }
    fn done(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("{} trailing bytes after payload", self.buf.len() - self.pos)))
        }
    }
}

/// Validates magic, checksum and version; returns the header and a reader
/// positioned at the payload (checksum excluded).
fn open(bytes: &[u8]) -> Result<(Header, Reader<'_>)> {
    let min = MAGIC.len() + 4 + 2 + 4;
    if bytes.len() < min {
        return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch (truncated or corrupt)".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Incompatible(format!("format version {version}, expected {VERSION}")));
    }
    let scalar_bytes = r.u8()?;
    let kind = Kind::from_u8(r.u8()?)?;
    Ok((
        Header {
            version,
            scalar_bytes,
            kind,
        },
        r,
    ))
}

fn open_expect<T: Scalar>(bytes: &[u8], kind: Kind) -> Result<Reader<'_>> {
    let (h, r) = open(bytes)?;
    if h.kind != kind {
        return Err(Error::Incompatible(format!("expected a {kind:?} checkpoint, found {:?}", h.kind)));
    }
    if h.scalar_bytes != T::BYTES {
        return Err(Error::Incompatible(format!(
            "checkpoint stores {}-byte scalars, reader uses {}-byte",
            h.scalar_bytes,
            T::BYTES
        )));
    }
    Ok(r)
}

/// Reads only the header (after verifying the checksum).
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    open(bytes).map(|(h, _)| h)
}

fn put_network<T: Scalar>(w: &mut Writer, net: &Mlp<T>) -> Result<()> {
    w.len(net.layers().len())?;
    w.f64(net.clamp_eps());
    for l in net.layers() {
        w.len(l.fan_in())?;
        w.len(l.fan_out())?;
        let (code, param) = l.activation.code();
        w.u8(code);
        w.f64(param);
        w.f64(l.dropout);
        w.scalars(l.weights.as_slice());
        w.scalars(&l.bias);
    }
    Ok(())
}

fn get_network<T: Scalar>(r: &mut Reader) -> Result<Mlp<T>> {
    let n = r.len()?;
    let clamp_eps = r.f64()?;
    let mut layers = Vec::new();
    for _ in 0..n {
        let fan_in = r.len()?;
        let fan_out = r.len()?;
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::Checkpoint("zero-width layer".into()));
        }
        let code = r.u8()?;
        let param = r.f64()?;
        let activation = Activation::from_code(code, param)?;
        let dropout = r.f64()?;
        let count = fan_in
            .checked_mul(fan_out)
            .ok_or_else(|| Error::Checkpoint("layer size overflows".into()))?;
        let weights = Matrix::from_vec(fan_in, fan_out, r.scalars(count)?)?;
        let bias = r.scalars(fan_out)?;
        layers.push(DenseLayer {
            weights,
            bias,
            activation,
            dropout,
        });
    }
    Mlp::new(layers, clamp_eps).map_err(|e| Error::Checkpoint(format!("invalid network: {e}")))
}

fn put_grads<T: Scalar>(w: &mut Writer, g: &ParamGrads<T>) {
    for l in &g.layers {
        w.scalars(l.weights.as_slice());
        w.scalars(&l.bias);
    }
}

fn get_grads<T: Scalar>(r: &mut Reader, like: &Mlp<T>) -> Result<ParamGrads<T>> {
    let mut layers = Vec::new();
    for l in like.layers() {
        let weights = Matrix::from_vec(l.fan_in(), l.fan_out(), r.scalars(l.fan_in() * l.fan_out())?)?;
        let bias = r.scalars(l.fan_out())?;
        layers.push(LayerGrads { weights, bias });
    }
    Ok(ParamGrads { layers })
}

fn put_optimizer<T: Scalar>(w: &mut Writer, opt: &Optimizer<T>) {
    match opt {
        Optimizer::Adam(s) => {
            w.u8(0);
            w.u64(s.t);
            w.f64(s.lr0);
            w.f64(s.decay);
            w.f64(s.beta1);
            w.f64(s.beta2);
            w.f64(s.eps);
            put_grads(w, &s.m);
            put_grads(w, &s.v);
        }
        Optimizer::Sgd(s) => {
            w.u8(1);
            w.u64(s.t);
            w.f64(s.lr0);
            w.f64(s.decay);
        }
    }
}

fn get_optimizer<T: Scalar>(r: &mut Reader, net: &Mlp<T>) -> Result<Optimizer<T>> {
    let kind = r.u8()?;
    let t = r.u64()?;
    let lr0 = r.f64()?;
    let decay = r.f64()?;
    match kind {
        0 => {
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let eps = r.f64()?;
            let m = get_grads(r, net)?;
            let v = get_grads(r, net)?;
            Ok(Optimizer::Adam(AdamState {
                m,
                v,
                t,
                lr0,
                beta1,
                beta2,
                decay,
                eps,
            }))
        }
        1 => Ok(Optimizer::Sgd(SgdState { lr0, decay, t })),
        other => Err(Error::Checkpoint(format!("unknown optimizer code {other}"))),
    }
}

fn put_rng(w: &mut Writer, rng: &RngState) {
    let (seed, s, spare) = rng.to_parts();
    w.u64(seed);
    for word in s {
        w.u64(word);
    }
    w.u8(spare.is_some() as u8);
    w.f64(spare.unwrap_or(0.0));
}

fn get_rng(r: &mut Reader) -> Result<RngState> {
    let seed = r.u64()?;
    let mut s = [0u64; 4];
    for word in &mut s {
        *word = r.u64()?;
    }
    let has_spare = r.u8()?;
    let spare = r.f64()?;
    let spare = match has_spare {
        0 => None,
        1 => Some(spare),
        other => return Err(Error::Checkpoint(format!("bad spare flag {other}"))),
    };
    Ok(RngState::from_parts(seed, s, spare))
}

pub fn encode_network<T: Scalar>(net: &Mlp<T>) -> Result<Vec<u8>> {
    let mut w = Writer::new::<T>(Kind::Network);
    put_network(&mut w, net)?;
    Ok(w.finish())
}

pub fn decode_network<T: Scalar>(bytes: &[u8]) -> Result<Mlp<T>> {
    let mut r = open_expect::<T>(bytes, Kind::Network)?;
    let net = get_network(&mut r)?;
    r.done()?;
    Ok(net)
}

/// Trainer state together with the configuration that produced it.
pub fn encode_trainer<T: Scalar>(state: &TrainerState<T>, config: &FganConfig) -> Result<Vec<u8>> {
    let mut w = Writer::new::<T>(Kind::Trainer);
    let json = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    w.bytes(&json)?;
    put_network(&mut w, &state.generator)?;
    put_network(&mut w, &state.discriminator)?;
    put_optimizer(&mut w, &state.gen_opt);
    put_optimizer(&mut w, &state.disc_opt);
    put_rng(&mut w, &state.rng);
    w.u64(state.epoch);
    w.u64(state.step);
    w.len(state.history.len())?;
    for h in &state.history {
        w.u64(h.epoch);
        w.f64(h.gen_loss);
        w.f64(h.disc_loss);
        w.f64(h.lr_g);
        w.f64(h.lr_d);
    }
    Ok(w.finish())
}

pub fn decode_trainer<T: Scalar>(bytes: &[u8]) -> Result<(TrainerState<T>, FganConfig)> {
    let mut r = open_expect::<T>(bytes, Kind::Trainer)?;
    let config: FganConfig =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let generator = get_network(&mut r)?;
    let discriminator = get_network(&mut r)?;
    let gen_opt = get_optimizer(&mut r, &generator)?;
    let disc_opt = get_optimizer(&mut r, &discriminator)?;
    let rng = get_rng(&mut r)?;
    let epoch = r.u64()?;
    let step = r.u64()?;
    let n = r.len()?;
    let mut history = Vec::new();
    for _ in 0..n {
        history.push(EpochRecord {
            epoch: r.u64()?,
            gen_loss: r.f64()?,
            disc_loss: r.f64()?,
            lr_g: r.f64()?,
            lr_d: r.f64()?,
        });
    }
    r.done()?;
    if generator.output_dim() != discriminator.input_dim() || discriminator.output_dim() != 1 {
        return Err(Error::Checkpoint("generator and discriminator widths disagree".into()));
    }
    Ok((
        TrainerState {
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            rng,
            epoch,
            step,
            history,
        },
        config,
    ))
}

pub fn encode_dataset<T: Scalar>(data: &Dataset<T>) -> Result<Vec<u8>> {
    let mut w = Writer::new::<T>(Kind::Dataset);
    w.bytes(data.name.as_bytes())?;
    w.len(data.features.rows())?;
    w.len(data.features.cols())?;
    w.scalars(data.features.as_slice());
    match &data.labels {
        Some(labels) => {
            w.u8(1);
            for l in labels {
                w.u8(matches!(l, Label::Anomalous) as u8);
            }
        }
        None => w.u8(0),
    }
    Ok(w.finish())
}

pub fn decode_dataset<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    let mut r = open_expect::<T>(bytes, Kind::Dataset)?;
    let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("dataset name is not UTF-8".into()))?;
    let rows = r.len()?;
    let cols = r.len()?;
    let features = Matrix::from_vec(rows, cols, r.scalars(rows * cols)?)?;
    let labels = match r.u8()? {
        0 => None,
        1 => Some(
            (0..rows)
                .map(|_| match r.u8()? {
                    0 => Ok(Label::Normal),
                    1 => Ok(Label::Anomalous),
                    other => Err(Error::Checkpoint(format!("bad label byte {other}"))),
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        other => return Err(Error::Checkpoint(format!("bad label flag {other}"))),
    };
    r.done()?;
    Dataset::new(name, features, labels)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_network<T: Scalar>(net: &Mlp<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_network(net)?)
}

pub fn load_network<T: Scalar>(path: &Path) -> Result<Mlp<T>> {
    decode_network(&read_file(path)?)
}

pub fn snapshot<T: Scalar>(state: &TrainerState<T>, config: &FganConfig, path: &Path) -> Result<()> {
    write_atomic(path, &encode_trainer(state, config)?)
}

pub fn restore<T: Scalar>(path: &Path) -> Result<(TrainerState<T>, FganConfig)> {
    decode_trainer(&read_file(path)?)
}

pub fn save_dataset<T: Scalar>(data: &Dataset<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(data)?)
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    decode_dataset(&read_file(path)?)
}
