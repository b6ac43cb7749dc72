//! `GNN1` checkpoints: magic, u32 LE header length, JSON header, then little-endian f32
//! blobs in declaration order (parameters and batch-norm running statistics).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TemplateSet;
use crate::dsp::RSA_FRAMES;
use crate::nn::{LayerSpec, Model, Tensor};
use crate::{Error, GestureClass, Result, NUM_CLASSES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GNN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Model,
    Template,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: Kind,
    architecture: String,
    class_names: Vec<String>,
    #[serde(default)]
    input_shape: Vec<usize>,
    #[serde(default)]
    layers: Vec<LayerSpec>,
    /// Shape of every stored blob, in order.
    tensors: Vec<Vec<usize>>,
}

/// A trained classifier of either kind.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Network(Model<f32>),
    Template(TemplateSet),
}

impl Checkpoint {
    pub fn architecture(&self) -> &str {
        match self {
            Checkpoint::Network(m) => m.architecture(),
            Checkpoint::Template(_) => "template",
        }
    }
}

fn class_names() -> Vec<String> {
    GestureClass::ALL.iter().map(|g| g.name().to_string()).collect()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut blobs: Vec<Vec<f32>> = Vec::new();
    let mut shapes = Vec::new();
    let header = match ckpt {
        Checkpoint::Network(model) => {
            let mut m = model.clone();
            m.visit_state(&mut |t| {
                shapes.push(t.shape().to_vec());
                blobs.push(t.data().to_vec());
            });
            Header {
                kind: Kind::Model,
                architecture: model.architecture().to_string(),
                class_names: class_names(),
                input_shape: model.input_shape().to_vec(),
                layers: model.specs(),
                tensors: shapes,
            }
        }
        Checkpoint::Template(set) => {
            for p in set.profiles.iter().flatten() {
                shapes.push(vec![p.len()]);
                blobs.push(p.clone());
            }
            Header {
                kind: Kind::Template,
                architecture: "template".into(),
                class_names: class_names(),
                input_shape: Vec::new(),
                layers: Vec::new(),
                tensors: shapes,
            }
        }
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * blobs.iter().map(Vec::len).sum::<usize>());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in blobs.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], file: &Path) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(file, 0, "bad magic, expected GNN1"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = 8usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(file, 4, format!("header length {len} exceeds file size")))?;
    let header: Header =
        serde_json::from_slice(&bytes[8..body]).map_err(|e| Error::format(file, 8, format!("bad header: {e}")))?;
    if header.class_names != class_names() {
        return Err(Error::format(file, 8, format!("unexpected class names {:?}", header.class_names)));
    }
    let expected: usize = header.tensors.iter().map(|s| s.iter().product::<usize>()).sum();
    if bytes.len() - body != 4 * expected {
        return Err(Error::format(
            file,
            body as u64,
            format!("expected {} bytes of tensor data, found {}", 4 * expected, bytes.len() - body),
        ));
    }
    let mut values = bytes[body..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut blobs = header.tensors.iter().map(|shape| {
        let n: usize = shape.iter().product();
        (shape.clone(), values.by_ref().take(n).collect::<Vec<f32>>())
    });

    match header.kind {
        Kind::Model => {
            let mut model = Model::<f32>::from_specs(
                header.architecture,
                &header.input_shape,
                &header.layers,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .map_err(|e| Error::format(file, 8, format!("inconsistent architecture: {e}")))?;
            if model.num_classes() != NUM_CLASSES {
                return Err(Error::format(file, 8, "model must have 4 outputs"));
            }
            let mut mismatch = None;
            let mut count = 0;
            model.visit_state(&mut |t: &mut Tensor<f32>| {
                count += 1;
                match blobs.next() {
                    Some((shape, data)) if shape == t.shape() => t.data_mut().copy_from_slice(&data),
                    other => {
                        mismatch.get_or_insert(format!("tensor {count}: stored {:?}, model needs {:?}", other.map(|o| o.0), t.shape()));
                    }
                }
            });
            if blobs.next().is_some() {
                mismatch.get_or_insert("more tensors stored than the model has".into());
            }
            if let Some(m) = mismatch {
                return Err(Error::format(file, 8, m));
            }
            Ok(Checkpoint::Network(model))
        }
        Kind::Template => {
            let all: Vec<Vec<f32>> = blobs.map(|(_, d)| d).collect();
            if all.len() != 3 * NUM_CLASSES || all.iter().any(|p| p.len() != RSA_FRAMES) {
                return Err(Error::format(file, 8, "template checkpoint needs 12 profiles of 128 values"));
            }
            let profiles = all
                .chunks_exact(3)
                .map(|c| [c[0].clone(), c[1].clone(), c[2].clone()])
                .collect();
            let set = TemplateSet::new(profiles).map_err(|e| Error::format(file, body as u64, e.to_string()))?;
            Ok(Checkpoint::Template(set))
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_resnet20, build_vgg10};

    fn state(m: &Model<f32>) -> Vec<u32> {
        let mut out = Vec::new();
        m.clone().visit_state(&mut |t| out.extend(t.data().iter().map(|v| v.to_bits())));
        out
    }

    #[test]
    fn networks_round_trip_bit_exact() {
        for mut m in [build_vgg10::<f32>(4), build_resnet20::<f32>(4)] {
            // make the running statistics non-trivial
            m.visit_state(&mut |t| {
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v += (i % 7) as f32 * 0.125;
                }
            });
            let bytes = encode_checkpoint(&Checkpoint::Network(m.clone()));
            let Checkpoint::Network(back) = decode_checkpoint(&bytes, Path::new("m.gnn")).unwrap() else {
                panic!("wrong kind");
            };
            assert_eq!(back.architecture(), m.architecture());
            assert_eq!(state(&back), state(&m));
            assert_eq!(encode_checkpoint(&Checkpoint::Network(back)), bytes);
        }
    }

    #[test]
    fn template_round_trip() {
        let profiles = (0..4)
            .map(|k| [vec![0.1 * k as f32; 128], vec![0.5; 128], vec![0.25; 128]])
            .collect();
        let set = TemplateSet::new(profiles).unwrap();
        let bytes = encode_checkpoint(&Checkpoint::Template(set.clone()));
        let Checkpoint::Template(back) = decode_checkpoint(&bytes, Path::new("t.gnn")).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(back, set);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = encode_checkpoint(&Checkpoint::Network(build_resnet20::<f32>(0)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, Path::new("x")), Err(Error::Format { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(truncated, Path::new("x")), Err(Error::Format { .. })));
        let mut header_len = bytes.clone();
        header_len[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_checkpoint(&header_len, Path::new("x")), Err(Error::Format { offset: 4, .. })));
    }
}
