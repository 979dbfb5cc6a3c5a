//! Named parameter tensors and their packed weight file.
//!
//! Weight file layout (little-endian): magic `LFTW`, `u32` entry count, then
//! per entry `u32` name length, UTF-8 name, `u32` rank, `u32` extents and a
//! `u64` element offset into the payload; the payload follows as `f64`
//! values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LFTW";

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    /// Uniform Xavier with the given fans.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, init: ParamInit) -> Self {
        ParamSpec { name, shape, init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn layer_norm(prefix: &str, c: usize, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec::new(format!("{prefix}.gamma"), vec![c], ParamInit::Ones));
    out.push(ParamSpec::new(format!("{prefix}.beta"), vec![c], ParamInit::Zeros));
}

fn linear(prefix: &str, d_in: usize, d_out: usize, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec::new(
        format!("{prefix}.weight"),
        vec![d_in, d_out],
        ParamInit::Xavier { fan_in: d_in, fan_out: d_out },
    ));
    out.push(ParamSpec::new(format!("{prefix}.bias"), vec![d_out], ParamInit::Zeros));
}

fn conv(prefix: &str, ci: usize, co: usize, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec::new(
        format!("{prefix}.weight"),
        vec![co, ci, 3, 3],
        ParamInit::Xavier { fan_in: ci * 9, fan_out: co * 9 },
    ));
    out.push(ParamSpec::new(format!("{prefix}.bias"), vec![co], ParamInit::Zeros));
}

/// LN, MHSA and FFN parameters shared by both block kinds.
fn transformer(prefix: &str, cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let (c, h, dh) = (cfg.channels, cfg.heads, cfg.head_dim());
    layer_norm(&format!("{prefix}.ln_qk"), c, out);
    for w in ["wq", "wk", "wv"] {
        out.push(ParamSpec::new(
            format!("{prefix}.attn.{w}"),
            vec![h, dh, dh],
            ParamInit::Xavier { fan_in: dh, fan_out: dh },
        ));
    }
    out.push(ParamSpec::new(format!("{prefix}.attn.wo"), vec![c, c], ParamInit::Xavier { fan_in: c, fan_out: c }));
    layer_norm(&format!("{prefix}.ln_ffn"), c, out);
    linear(&format!("{prefix}.ffn.fc1"), c, c * cfg.mlp_ratio, out);
    linear(&format!("{prefix}.ffn.fc2"), c * cfg.mlp_ratio, c, out);
}

/// Every parameter the network reads, in a fixed order. Disabled blocks
/// contribute nothing.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mut out = Vec::new();
    conv("init.conv0", 1, c, &mut out);
    conv("init.conv1", c, c, &mut out);
    for i in 0..cfg.n_pairs {
        if cfg.use_ang_transformer {
            transformer(&format!("block{i}.ang"), cfg, &mut out);
        }
        if cfg.use_spa_transformer {
            linear(&format!("block{i}.spa.embed"), 9 * c, c, &mut out);
            transformer(&format!("block{i}.spa"), cfg, &mut out);
        }
    }
    conv("head.conv_up", c, c * cfg.scale * cfg.scale, &mut out);
    conv("head.conv_out", c, 1, &mut out);
    out
}

/// Closed-form parameter count.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let (c, r, s) = (cfg.channels, cfg.mlp_ratio, cfg.scale);
    let conv = |ci: usize, co: usize| co * ci * 9 + co;
    let ln = 2 * c;
    let attn = 3 * c * cfg.head_dim() + c * c;
    let ffn = (c * r * c + r * c) + (r * c * c + c);
    let block = ln + attn + ln + ffn;
    let mut pair = 0;
    if cfg.use_ang_transformer {
        pair += block;
    }
    if cfg.use_spa_transformer {
        pair += 9 * c * c + c + block;
    }
    conv(1, c) + conv(c, c) + cfg.n_pairs * pair + conv(c, c * s * s) + conv(c, 1)
}

/// Named weights of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new(tensors: BTreeMap<String, Tensor>) -> Self {
        ModelParams { tensors }
    }

    /// Every parameter of `cfg` filled with `value` (biases and LN included).
    pub fn filled(cfg: &ModelConfig, value: f64) -> Result<Self> {
        let tensors = param_specs(cfg)
            .into_iter()
            .map(|s| Tensor::full(&s.shape, value).map(|t| (s.name, t)))
            .collect::<Result<_>>()?;
        Ok(ModelParams { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks names and shapes against `cfg` and that all weights are finite.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for s in &specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter `{}` has shape {:?}, config expects {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            if !t.all_finite() {
                return Err(Error::numeric(format!("parameter `{}` is not finite", s.name)));
            }
        }
        if specs.len() != self.tensors.len() {
            let known: std::collections::HashSet<_> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra: Vec<_> = self.names().filter(|n| !known.contains(n.as_str())).cloned().collect();
            return Err(Error::config(format!("parameters not used by this config: {}", extra.join(", "))));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            buf.extend_from_slice(&offset.to_le_bytes());
            offset += t.len() as u64;
        }
        for t in self.tensors.values() {
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::format("bad magic at offset 0: expected \"LFTW\""));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(format!("parameter name at offset {at} is not UTF-8")))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            entries.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let total = payload.len() / 8;
        if !payload.len().is_multiple_of(8) {
            return Err(Error::format(format!("payload at offset {} is not a whole number of f64", r.pos)));
        }
        let mut tensors = BTreeMap::new();
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            if offset + n > total {
                return Err(Error::format(format!(
                    "parameter `{name}` runs past the payload end (offset {offset}, {n} values, {total} available)"
                )));
            }
            let data = payload[offset * 8..(offset + n) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::format(format!("parameter `{name}`: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::format(format!("duplicate parameter `{name}`")));
            }
        }
        Ok(ModelParams { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelParams::decode(&fs::read(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!("header truncated at offset {}", self.bytes.len())));
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
}

/// Graph handles for one forward pass: trainable leaves or constants.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn trainable(params: &ModelParams) -> Self {
        ParamVars { vars: params.iter().map(|(k, t)| (k.clone(), Var::leaf(t.clone()))).collect() }
    }

    pub fn constant(params: &ModelParams) -> Self {
        ParamVars { vars: params.iter().map(|(k, t)| (k.clone(), Var::constant(t.clone()))).collect() }
    }

    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        ParamVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars.get(name).ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Accumulated gradients, zeros for parameters the loss did not reach.
    pub fn grads(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = match v.grad() {
                    Some(g) => g,
                    None => Tensor::zeros(v.shape())?,
                };
                Ok((k.clone(), g))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_specs() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig::tiny(2),
            ModelConfig::tiny(3).with_switches(false, true, false, true),
            ModelConfig { scale: 4, n_pairs: 3, ..ModelConfig::tiny(5) },
        ] {
            let n: usize = param_specs(&cfg).iter().map(ParamSpec::numel).sum();
            assert_eq!(n, count_params(&cfg));
            assert_eq!(ModelParams::filled(&cfg, 0.0).unwrap().num_scalars(), n);
        }
    }

    #[test]
    fn encode_decode() {
        let cfg = ModelConfig::tiny(2);
        let mut p = ModelParams::filled(&cfg, 0.25).unwrap();
        p.get_mut("head.conv_out.bias").unwrap().data_mut()[0] = -1.0e-300;
        let q = ModelParams::decode(&p.encode()).unwrap();
        assert_eq!(p, q);
        q.check(&cfg).unwrap();
        let mut bytes = p.encode();
        bytes.truncate(bytes.len() - 3);
        assert!(ModelParams::decode(&bytes).is_err());
        bytes[0] = b'X';
        assert!(ModelParams::decode(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn check_reports_mismatch() {
        let p = ModelParams::filled(&ModelConfig::tiny(2), 0.0).unwrap();
        let other = ModelConfig::tiny(2).with_switches(false, true, true, true);
        assert!(p.check(&other).unwrap_err().to_string().contains("not used"));
        assert!(p.check(&ModelConfig { scale: 4, ..ModelConfig::tiny(2) }).is_err());
    }
}
