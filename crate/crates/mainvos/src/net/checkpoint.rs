//! Binary checkpoint container for network and optimizer state.
//!
//! Layout: the ASCII magic `MVCP`, a `u32` format version, a `u64` header
//! length, a JSON header (architecture config, tensor directory, free-form
//! metadata), then every tensor's `f32` data little-endian, packed in
//! directory order. Loading is strict: bad magic, unknown header fields,
//! overlapping or out-of-bounds directory entries, and trailing bytes are
//! all errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{MainNetwork, NetworkConfig};

const MAGIC: &[u8; 4] = b"MVCP";
const VERSION: u32 = 1;

/// One named tensor: shape plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

/// A deserialized checkpoint: everything needed to rebuild a network and
/// resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Network state: parameters and batch-norm running statistics.
    pub tensors: BTreeMap<String, Tensor>,
    /// Auxiliary state (optimizer moments etc.), kept separate so a
    /// network can load without it.
    pub extra: BTreeMap<String, Tensor>,
    /// Free-form metadata (iteration counter, schedule position, ...).
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in floats.
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: NetworkConfig,
    entries: Vec<DirEntry>,
    extra_entries: Vec<DirEntry>,
    meta: serde_json::Value,
}

impl Checkpoint {
    /// Snapshot a network's full state.
    pub fn from_network(net: &MainNetwork, meta: serde_json::Value) -> Self {
        let tensors = net
            .state_entries()
            .into_iter()
            .map(|(name, shape, data)| (name, Tensor::new(shape, data)))
            .collect();
        Checkpoint { config: net.cfg.clone(), tensors, extra: BTreeMap::new(), meta }
    }

    /// Rebuild the network this checkpoint describes.
    pub fn build_network(&self) -> Result<MainNetwork> {
        let mut net = MainNetwork::new(self.config.clone(), 0)?;
        let map: BTreeMap<String, (Vec<usize>, Vec<f32>)> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), (t.shape.clone(), t.data.clone())))
            .collect();
        net.load_state(&map)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload_len = 0u64;
        let directory = |map: &BTreeMap<String, Tensor>, cursor: &mut u64| -> Vec<DirEntry> {
            map.iter()
                .map(|(name, t)| {
                    let entry = DirEntry {
                        name: name.clone(),
                        shape: t.shape.clone(),
                        offset: *cursor,
                        len: t.data.len() as u64,
                    };
                    *cursor += t.data.len() as u64;
                    entry
                })
                .collect()
        };
        let entries = directory(&self.tensors, &mut payload_len);
        let extra_entries = directory(&self.extra, &mut payload_len);
        let header = Header {
            config: self.config.clone(),
            entries,
            extra_entries,
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::runtime("checkpoint save", format!("header encode: {e}")))?;

        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&header_bytes).map_err(io_err)?;
        for map in [&self.tensors, &self.extra] {
            for t in map.values() {
                let mut buf = Vec::with_capacity(t.data.len() * 4);
                for v in &t.data {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::format(path, "not a checkpoint file (bad magic)"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(io_err)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let mut dword = [0u8; 8];
        r.read_exact(&mut dword).map_err(io_err)?;
        let header_len = u64::from_le_bytes(dword) as usize;
        if header_len > 1 << 26 {
            return Err(Error::format(path, "checkpoint header is implausibly large"));
        }
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes).map_err(io_err)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::format(path, format!("invalid checkpoint header: {e}")))?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(io_err)?;
        if payload.len() % 4 != 0 {
            return Err(Error::format(path, "payload is not a whole number of floats"));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let mut cursor = 0u64;
        let mut take = |entries: &[DirEntry]| -> Result<BTreeMap<String, Tensor>> {
            let mut out = BTreeMap::new();
            for e in entries {
                if e.offset != cursor {
                    return Err(Error::format(
                        path,
                        format!("tensor '{}' is not packed contiguously", e.name),
                    ));
                }
                let count: usize = e.shape.iter().product();
                if count as u64 != e.len {
                    return Err(Error::format(
                        path,
                        format!("tensor '{}' shape does not match its length", e.name),
                    ));
                }
                let end = e.offset + e.len;
                if end as usize > floats.len() {
                    return Err(Error::format(
                        path,
                        format!("tensor '{}' runs past the end of the file", e.name),
                    ));
                }
                let data = floats[e.offset as usize..end as usize].to_vec();
                if out.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)).is_some() {
                    return Err(Error::format(path, format!("duplicate tensor '{}'", e.name)));
                }
                cursor = end;
            }
            Ok(out)
        };
        let tensors = take(&header.entries)?;
        let extra = take(&header.extra_entries)?;
        if cursor as usize != floats.len() {
            return Err(Error::format(path, "trailing bytes after the last tensor"));
        }

        Ok(Checkpoint { config: header.config, tensors, extra, meta: header.meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::cue_input_channels;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    fn tiny_net(seed: u64) -> MainNetwork {
        let cfg = NetworkConfig {
            input_channels: cue_input_channels(2),
            capacity: 2,
            stage_channels: [4, 4, 8, 8],
            fpn_width: 4,
            dilation_set: [1, 2, 3],
            separable: true,
        };
        MainNetwork::new(cfg, seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        let net = tiny_net(77);
        let mut ckpt = Checkpoint::from_network(&net, json!({"iteration": 123}));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ckpt.extra.insert(
            "adam.m.head.w".into(),
            Tensor::new(vec![8], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        );
        ckpt.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.config, ckpt.config);
        assert_eq!(loaded.meta, ckpt.meta);
        assert_eq!(loaded.extra, ckpt.extra);
        assert_eq!(loaded.tensors.len(), ckpt.tensors.len());
        for (name, t) in &ckpt.tensors {
            let l = &loaded.tensors[name];
            assert_eq!(l.shape, t.shape, "{name}");
            // Bit-exact comparison, not approximate.
            let a: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = l.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn rebuilt_network_reproduces_outputs_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = tiny_net(5);
        Checkpoint::from_network(&net, json!({})).save(&path).unwrap();
        let rebuilt = Checkpoint::load(&path).unwrap().build_network().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array4::from_shape_fn((1, cue_input_channels(2), 32, 32), |_| {
            rng.gen_range(-1.0f32..1.0)
        });
        assert_eq!(net.forward_eval(&x), rebuilt.forward_eval(&x));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOPE....rest").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        Checkpoint::from_network(&tiny_net(9), json!({})).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        Checkpoint::from_network(&tiny_net(9), json!({})).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn missing_tensor_fails_network_construction() {
        let net = tiny_net(4);
        let mut ckpt = Checkpoint::from_network(&net, json!({}));
        let key = ckpt.tensors.keys().next().unwrap().clone();
        ckpt.tensors.remove(&key);
        let err = ckpt.build_network().unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn shape_mismatch_fails_network_construction() {
        let net = tiny_net(4);
        let mut ckpt = Checkpoint::from_network(&net, json!({}));
        let t = ckpt.tensors.get_mut("head.b").unwrap();
        t.shape = vec![t.data.len() + 1];
        t.data.push(0.0);
        assert!(ckpt.build_network().is_err());
    }
}
