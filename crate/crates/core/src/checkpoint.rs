//! Parameter checkpoints.
//!
//! Layout: the magic line `DIBCKPT1\n`, the header length as a little-endian
//! u64, a TOML header, then every tensor as little-endian f64 values. The
//! header carries free-form metadata, each network's family spec, and a
//! layer index of names, shapes and offsets (counted in values, not bytes).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DibError, Result};
use crate::models::{Classifier, Encoder, EncoderConfig, FamilySpec, Linear, Mlp, Network};
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"DIBCKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub spec: FamilySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub meta: BTreeMap<String, String>,
    pub networks: Vec<NetworkEntry>,
}

/// A named set of networks with their flat parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub payload: Vec<f64>,
}

fn mlp_tensors(m: &Mlp) -> Vec<(String, &Tensor)> {
    m.layers
        .iter()
        .enumerate()
        .flat_map(|(k, l)| [(format!("{k}.weight"), &l.weight), (format!("{k}.bias"), &l.bias)])
        .collect()
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.header.meta.insert(key.to_string(), value.to_string());
    }

    fn push_tensors(&mut self, name: &str, spec: &FamilySpec, encoder: Option<EncoderConfig>, tensors: Vec<(String, &Tensor)>) {
        let mut layers = vec![];
        for (lname, t) in tensors {
            layers.push(LayerEntry { name: lname, shape: t.shape().to_vec(), offset: self.payload.len() });
            self.payload.extend_from_slice(t.data());
        }
        self.header.networks.push(NetworkEntry { name: name.to_string(), spec: spec.clone(), encoder, layers });
    }

    pub fn add_encoder(&mut self, name: &str, e: &Encoder) {
        self.push_tensors(name, &e.spec, Some(e.config()), mlp_tensors(&e.net));
    }

    pub fn add_classifier(&mut self, name: &str, c: &Classifier) {
        match &c.net {
            Network::Mlp(m) => self.push_tensors(name, &c.spec, None, mlp_tensors(m)),
            Network::Tabular(t) => {
                let rows: Vec<Vec<f64>> = t.rows.clone();
                let table = Tensor::from_rows(&rows);
                self.push_tensors(name, &c.spec, None, vec![("table".into(), &table)]);
            }
        }
    }

    fn entry(&self, name: &str) -> Result<&NetworkEntry> {
        self.header
            .networks
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| DibError::Config(format!("checkpoint has no network named {name:?}")))
    }

    fn tensor(&self, layer: &LayerEntry) -> Result<Tensor> {
        let n: usize = layer.shape.iter().product();
        let end = layer.offset + n;
        if end > self.payload.len() {
            return Err(DibError::Config(format!("layer {} runs past the payload", layer.name)));
        }
        Tensor::new(layer.shape.clone(), self.payload[layer.offset..end].to_vec())
    }

    fn mlp(&self, entry: &NetworkEntry) -> Result<Mlp> {
        let sizes = entry.spec.layer_sizes();
        if entry.layers.len() != 2 * (sizes.len() - 1) {
            return Err(DibError::Config(format!("network {} has {} tensors for {} layers", entry.name, entry.layers.len(), sizes.len() - 1)));
        }
        let mut layers = vec![];
        for (k, pair) in entry.layers.chunks(2).enumerate() {
            let weight = self.tensor(&pair[0])?;
            let bias = self.tensor(&pair[1])?;
            if weight.shape() != [sizes[k], sizes[k + 1]] || bias.shape() != [sizes[k + 1]] {
                return Err(DibError::Config(format!("layer {k} of {} disagrees with its spec", entry.name)));
            }
            layers.push(Linear { weight, bias });
        }
        Ok(Mlp { layers, dropout_rate: entry.spec.dropout_rate })
    }

    pub fn encoder(&self, name: &str) -> Result<Encoder> {
        let entry = self.entry(name)?;
        let cfg = entry.encoder.clone().ok_or_else(|| DibError::Config(format!("{name} is not an encoder")))?;
        Ok(Encoder {
            spec: entry.spec.clone(),
            net: self.mlp(entry)?,
            z_dim: cfg.z_dim,
            normalize: cfg.normalize,
            stochastic: cfg.stochastic,
            n_eval_samples: cfg.n_eval_samples,
        })
    }

    pub fn classifier(&self, name: &str) -> Result<Classifier> {
        let entry = self.entry(name)?;
        let net = match entry.spec.kind {
            crate::models::FamilyKind::Mlp => Network::Mlp(self.mlp(entry)?),
            crate::models::FamilyKind::Tabular => {
                let t = self.tensor(&entry.layers[0])?;
                Network::Tabular(crate::models::Table { rows: (0..t.rows()).map(|r| t.row(r).to_vec()).collect() })
            }
        };
        Ok(Classifier { spec: entry.spec.clone(), net, rng_seed: 0 })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = toml::to_string(&self.header).map_err(|e| DibError::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + 8 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| DibError::Config(format!("malformed checkpoint: {m}"));
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let hlen = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let rest = &rest[8..];
        if rest.len() < hlen || (rest.len() - hlen) % 8 != 0 {
            return Err(bad("truncated body"));
        }
        let text = std::str::from_utf8(&rest[..hlen]).map_err(|_| bad("header is not UTF-8"))?;
        let header: Header = toml::from_str(text).map_err(|e| DibError::Config(e.to_string()))?;
        let payload = rest[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { header, payload })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_classifier, EncoderConfig};

    #[test]
    fn roundtrip_is_exact() {
        let mut cfg = EncoderConfig::new(5, 2);
        cfg.hidden_widths = vec![7, 3];
        let e = Encoder::init(&cfg, 3).unwrap();
        let c = init_classifier(&FamilySpec::mlp(2, &[4], 3), 9).unwrap();
        let t = init_classifier(&FamilySpec::tabular(4, 2, 0.25), 0).unwrap();
        let mut ck = Checkpoint::new();
        ck.set_meta("seed", 3);
        ck.add_encoder("encoder", &e);
        ck.add_classifier("head", &c);
        ck.add_classifier("table", &t);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encoder("encoder").unwrap(), e);
        assert_eq!(back.classifier("head").unwrap().net, c.net);
        assert_eq!(back.classifier("table").unwrap().net, t.net);
        assert!(back.encoder("head").is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
