//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "TMPCKPT" | format version u32 | config hash str | master seed u64
//! meta count u32  | (key str, value i64)*
//! section count u32
//! per section: name str | kind u8 | payload
//!   kind 1 net:    activation u8, layer count u32, layer sizes u32*,
//!                  param count u64, params f64* (per layer: row-major
//!                  weights then biases)
//!   kind 2 vector: length u64, values f64*
//!   kind 3 adam:   lr f64, beta1 f64, beta2 f64, eps f64, step u64,
//!                  length u64, m f64*, v f64*
//! ```
//!
//! Strings are a u32 length followed by UTF-8 bytes. Parameters round-trip
//! through `f64::to_le_bytes`, so save/load is bit-exact.
//!
//! A deployment export is a reduced file (magic "TMPDEPLOY") holding only the
//! actor network, its log-std vector, and the frame-layout metadata needed to
//! drive it — no critic, auxiliary head, discriminator, or optimizer state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Activation, AdamOptimizer, MlpNet};
use crate::error::{Error, Result};

pub const CKPT_MAGIC: &[u8] = b"TMPCKPT";
pub const DEPLOY_MAGIC: &[u8] = b"TMPDEPLOY";
pub const FORMAT_VERSION: u32 = 1;

const KIND_NET: u8 = 1;
const KIND_VECTOR: u8 = 2;
const KIND_ADAM: u8 = 3;

enum Payload {
    Net {
        activation: Activation,
        layer_sizes: Vec<usize>,
        params: Vec<f64>,
    },
    Vector(Vec<f64>),
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

/// In-memory checkpoint: named sections plus run provenance (config hash and
/// master seed), written to disk in the binary layout above.
pub struct Checkpoint {
    pub config_hash: String,
    pub master_seed: u64,
    meta: BTreeMap<String, i64>,
    sections: Vec<(String, Payload)>,
}

impl Checkpoint {
    pub fn new(config_hash: &str, master_seed: u64) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            master_seed,
            meta: BTreeMap::new(),
            sections: Vec::new(),
        }
    }

    /// Records an integer fact about the run (dimensions, iteration count).
    pub fn set_meta(&mut self, key: &str, value: i64) {
        self.meta.insert(key.to_string(), value);
    }

    pub fn meta(&self, key: &str) -> Option<i64> {
        self.meta.get(key).copied()
    }

    pub fn add_net(&mut self, name: &str, net: &MlpNet) {
        self.sections.push((
            name.to_string(),
            Payload::Net {
                activation: net.activation(),
                layer_sizes: net.layer_sizes().to_vec(),
                params: net.flat_params(),
            },
        ));
    }

    pub fn add_vector(&mut self, name: &str, values: &[f64]) {
        self.sections
            .push((name.to_string(), Payload::Vector(values.to_vec())));
    }

    pub fn add_adam(&mut self, name: &str, opt: &AdamOptimizer) {
        let (lr, beta1, beta2, eps, step, m, v) = opt.state();
        self.sections.push((
            name.to_string(),
            Payload::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m: m.to_vec(),
                v: v.to_vec(),
            },
        ));
    }

    fn find(&self, name: &str) -> Result<&Payload> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Checkpoint(format!("missing section '{name}'")))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    pub fn section_names(&self) -> Vec<&str> {
        self.sections.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Reconstructs a stored network.
    pub fn net(&self, name: &str) -> Result<MlpNet> {
        match self.find(name)? {
            Payload::Net {
                activation,
                layer_sizes,
                params,
            } => {
                let mut net = MlpNet::new(layer_sizes, *activation)?;
                net.set_flat_params(params)?;
                Ok(net)
            }
            _ => Err(Error::Checkpoint(format!("section '{name}' is not a net"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        match self.find(name)? {
            Payload::Vector(v) => Ok(v.clone()),
            _ => Err(Error::Checkpoint(format!(
                "section '{name}' is not a vector"
            ))),
        }
    }

    pub fn adam(&self, name: &str) -> Result<AdamOptimizer> {
        match self.find(name)? {
            Payload::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => AdamOptimizer::from_state(*lr, *beta1, *beta2, *eps, *step, m.clone(), v.clone()),
            _ => Err(Error::Checkpoint(format!("section '{name}' is not adam"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        write_u32(&mut buf, FORMAT_VERSION);
        write_str(&mut buf, &self.config_hash);
        write_u64(&mut buf, self.master_seed);
        write_u32(&mut buf, self.meta.len() as u32);
        for (k, v) in &self.meta {
            write_str(&mut buf, k);
            buf.extend_from_slice(&v.to_le_bytes());
        }
        write_u32(&mut buf, self.sections.len() as u32);
        for (name, payload) in &self.sections {
            write_str(&mut buf, name);
            match payload {
                Payload::Net {
                    activation,
                    layer_sizes,
                    params,
                } => {
                    buf.push(KIND_NET);
                    buf.push(activation.tag());
                    write_u32(&mut buf, layer_sizes.len() as u32);
                    for &s in layer_sizes {
                        write_u32(&mut buf, s as u32);
                    }
                    write_u64(&mut buf, params.len() as u64);
                    write_f64s(&mut buf, params);
                }
                Payload::Vector(values) => {
                    buf.push(KIND_VECTOR);
                    write_u64(&mut buf, values.len() as u64);
                    write_f64s(&mut buf, values);
                }
                Payload::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    step,
                    m,
                    v,
                } => {
                    buf.push(KIND_ADAM);
                    write_f64(&mut buf, *lr);
                    write_f64(&mut buf, *beta1);
                    write_f64(&mut buf, *beta2);
                    write_f64(&mut buf, *eps);
                    write_u64(&mut buf, *step);
                    write_u64(&mut buf, m.len() as u64);
                    write_f64s(&mut buf, m);
                    write_f64s(&mut buf, v);
                }
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = fs::read(path)?;
        let mut r = Reader::new(&data);
        let magic = r.bytes(CKPT_MAGIC.len())?;
        if magic != CKPT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic in {}: not a checkpoint file",
                path.display()
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let config_hash = r.string()?;
        let master_seed = r.u64()?;
        let mut meta = BTreeMap::new();
        let n_meta = r.u32()?;
        for _ in 0..n_meta {
            let key = r.string()?;
            let value = i64::from_le_bytes(r.bytes(8)?.try_into().unwrap());
            meta.insert(key, value);
        }
        let n_sections = r.u32()?;
        let mut sections = Vec::with_capacity(n_sections as usize);
        for _ in 0..n_sections {
            let name = r.string()?;
            let kind = r.u8()?;
            let payload = match kind {
                KIND_NET => {
                    let activation = Activation::from_tag(r.u8()?)?;
                    let n_sizes = r.u32()? as usize;
                    let mut layer_sizes = Vec::with_capacity(n_sizes);
                    for _ in 0..n_sizes {
                        layer_sizes.push(r.u32()? as usize);
                    }
                    let n_params = r.u64()? as usize;
                    let params = r.f64s(n_params)?;
                    Payload::Net {
                        activation,
                        layer_sizes,
                        params,
                    }
                }
                KIND_VECTOR => {
                    let len = r.u64()? as usize;
                    Payload::Vector(r.f64s(len)?)
                }
                KIND_ADAM => {
                    let lr = r.f64()?;
                    let beta1 = r.f64()?;
                    let beta2 = r.f64()?;
                    let eps = r.f64()?;
                    let step = r.u64()?;
                    let len = r.u64()? as usize;
                    let m = r.f64s(len)?;
                    let v = r.f64s(len)?;
                    Payload::Adam {
                        lr,
                        beta1,
                        beta2,
                        eps,
                        step,
                        m,
                        v,
                    }
                }
                other => {
                    return Err(Error::Checkpoint(format!("unknown section kind {other}")))
                }
            };
            sections.push((name, payload));
        }
        Ok(Self {
            config_hash,
            master_seed,
            meta,
            sections,
        })
    }
}

/// Actor-only policy restored from a deployment export: stacked observations
/// in, mean action out. Carries no critic, auxiliary, or optimizer state.
pub struct DeployPolicy {
    pub net: MlpNet,
    pub log_std: Vec<f64>,
    pub config_hash: String,
    meta: BTreeMap<String, i64>,
}

impl DeployPolicy {
    /// Deterministic action: the mean of the policy distribution.
    pub fn act(&self, stacked_obs: &[f64]) -> Result<Vec<f64>> {
        self.net.infer(stacked_obs)
    }

    pub fn meta(&self, key: &str) -> Option<i64> {
        self.meta.get(key).copied()
    }
}

/// Writes a deployment export containing only what inference needs.
pub fn save_deploy(
    path: &Path,
    net: &MlpNet,
    log_std: &[f64],
    config_hash: &str,
    meta: &[(&str, i64)],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DEPLOY_MAGIC);
    write_u32(&mut buf, FORMAT_VERSION);
    write_str(&mut buf, config_hash);
    write_u32(&mut buf, meta.len() as u32);
    for (k, v) in meta {
        write_str(&mut buf, k);
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(net.activation().tag());
    write_u32(&mut buf, net.layer_sizes().len() as u32);
    for &s in net.layer_sizes() {
        write_u32(&mut buf, s as u32);
    }
    let params = net.flat_params();
    write_u64(&mut buf, params.len() as u64);
    write_f64s(&mut buf, &params);
    write_u64(&mut buf, log_std.len() as u64);
    write_f64s(&mut buf, log_std);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_deploy(path: &Path) -> Result<DeployPolicy> {
    let data = fs::read(path)?;
    let mut r = Reader::new(&data);
    let magic = r.bytes(DEPLOY_MAGIC.len())?;
    if magic != DEPLOY_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic in {}: not a deployment export",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let config_hash = r.string()?;
    let mut meta = BTreeMap::new();
    let n_meta = r.u32()?;
    for _ in 0..n_meta {
        let key = r.string()?;
        let value = i64::from_le_bytes(r.bytes(8)?.try_into().unwrap());
        meta.insert(key, value);
    }
    let activation = Activation::from_tag(r.u8()?)?;
    let n_sizes = r.u32()? as usize;
    let mut layer_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        layer_sizes.push(r.u32()? as usize);
    }
    let n_params = r.u64()? as usize;
    let params = r.f64s(n_params)?;
    let n_log_std = r.u64()? as usize;
    let log_std = r.f64s(n_log_std)?;
    let mut net = MlpNet::new(&layer_sizes, activation)?;
    net.set_flat_params(&params)?;
    Ok(DeployPolicy {
        net,
        log_std,
        config_hash,
        meta,
    })
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        write_f64(buf, *v);
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    write_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in string field".into()))
    }
}
