//! The two CNN classifiers, the DTW template baseline and the `GNN1` checkpoint container.

mod checkpoint;
mod template;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{RSA_CHANNELS, RSA_FRAMES, RSA_RANGE_BINS};
use crate::nn::{LayerSpec, Model, Padding, Scalar};
use crate::{Error, Result, NUM_CLASSES};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
};
pub use template::{dtw_distance, fit_templates, rsa_profiles, template_classify, TemplateSet, DTW_STEP_PENALTY};

/// Per-sample classifier input, `(time, range, channel)`.
pub const INPUT_SHAPE: [usize; 3] = [RSA_FRAMES, RSA_RANGE_BINS, RSA_CHANNELS];

/// Trainable scalars in [`build_vgg10`].
pub const VGG10_PARAMS: usize = 2_391_956;
/// Trainable scalars in [`build_resnet20`].
pub const RESNET20_PARAMS: usize = 272_084;

const VGG_WIDTHS: [usize; 4] = [16, 32, 64, 128];
const VGG_HIDDEN: usize = 256;
const RESNET_WIDTHS: [usize; 3] = [16, 32, 64];
const RESNET_BLOCKS_PER_STAGE: usize = 3;
/// The stem halves the 128x128 input so the stages run at 64/32/16 pixels.
const RESNET_STEM_STRIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Vgg10,
    Resnet20,
    Template,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Vgg10, Architecture::Resnet20, Architecture::Template];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vgg10 => "vgg10",
            Architecture::Resnet20 => "resnet20",
            Architecture::Template => "template",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown architecture '{s}' (expected vgg10, resnet20 or template)")))
    }
}

fn conv3(c_in: usize, c_out: usize, stride: usize, bias: bool) -> LayerSpec {
    LayerSpec::Conv2d {
        kernel: 3,
        c_in,
        c_out,
        stride,
        padding: Padding::Same,
        bias,
    }
}

/// Four `{conv3x3, conv3x3, maxpool}` blocks of 16/32/64/128 channels, then dense 256 and dense 4.
pub fn vgg10_specs() -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut c_in = RSA_CHANNELS;
    for c in VGG_WIDTHS {
        specs.extend([
            conv3(c_in, c, 1, true),
            LayerSpec::Relu,
            conv3(c, c, 1, true),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
        ]);
        c_in = c;
    }
    let side = RSA_FRAMES >> VGG_WIDTHS.len();
    specs.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense {
            d_in: side * side * c_in,
            d_out: VGG_HIDDEN,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            d_in: VGG_HIDDEN,
            d_out: NUM_CLASSES,
        },
    ]);
    specs
}

/// Stride-2 3x3 stem, three stages of three residual blocks (16/32/64 channels, stride 2
/// entering stages 2 and 3), global average pooling and a dense classifier.
pub fn resnet20_specs() -> Vec<LayerSpec> {
    let stem = RESNET_WIDTHS[0];
    let mut specs = vec![
        conv3(RSA_CHANNELS, stem, RESNET_STEM_STRIDE, false),
        LayerSpec::BatchNorm {
            channels: stem,
            momentum: 0.1,
            eps: 1e-5,
        },
        LayerSpec::Relu,
    ];
    let mut c_in = stem;
    for (stage, c) in RESNET_WIDTHS.into_iter().enumerate() {
        for block in 0..RESNET_BLOCKS_PER_STAGE {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            specs.push(LayerSpec::Residual { c_in, c_out: c, stride });
            c_in = c;
        }
    }
    specs.extend([
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense {
            d_in: c_in,
            d_out: NUM_CLASSES,
        },
    ]);
    specs
}

pub fn build_vgg10<T: Scalar>(seed: u64) -> Model<T> {
    Model::from_specs("vgg10", &INPUT_SHAPE, &vgg10_specs(), &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("static architecture is consistent")
}

pub fn build_resnet20<T: Scalar>(seed: u64) -> Model<T> {
    Model::from_specs("resnet20", &INPUT_SHAPE, &resnet20_specs(), &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("static architecture is consistent")
}

/// Builds a freshly initialised network; the template baseline is not a network.
pub fn build_network<T: Scalar>(arch: Architecture, seed: u64) -> Result<Model<T>> {
    match arch {
        Architecture::Vgg10 => Ok(build_vgg10(seed)),
        Architecture::Resnet20 => Ok(build_resnet20(seed)),
        Architecture::Template => Err(Error::invalid("the template baseline is not a network")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn conv_params(k: usize, c_in: usize, c_out: usize, bias: bool) -> usize {
        k * k * c_in * c_out + if bias { c_out } else { 0 }
    }

    #[test]
    fn vgg10_matches_documented_count() {
        let m = build_vgg10::<f32>(0);
        assert_eq!(m.weight_layer_count(), 10);
        let convs: usize = [(3, 16), (16, 16), (16, 32), (32, 32), (32, 64), (64, 64), (64, 128), (128, 128)]
            .iter()
            .map(|&(i, o)| conv_params(3, i, o, true))
            .sum();
        let expected = convs + 8 * 8 * 128 * 256 + 256 + 256 * 4 + 4;
        assert_eq!(expected, VGG10_PARAMS);
        assert_eq!(m.param_count(), VGG10_PARAMS);
        let mut counted = 0;
        m.clone().visit_params(&mut |p| counted += p.value.len());
        assert_eq!(counted, VGG10_PARAMS);
    }

    #[test]
    fn resnet20_matches_documented_count() {
        let m = build_resnet20::<f32>(0);
        assert_eq!(m.weight_layer_count(), 20);
        let bn = |c: usize| 2 * c;
        let block = |i: usize, o: usize| {
            let proj = if i != o { conv_params(1, i, o, false) + bn(o) } else { 0 };
            conv_params(3, i, o, false) + bn(o) + conv_params(3, o, o, false) + bn(o) + proj
        };
        let expected = conv_params(3, 3, 16, false)
            + bn(16)
            + 3 * block(16, 16)
            + block(16, 32)
            + 2 * block(32, 32)
            + block(32, 64)
            + 2 * block(64, 64)
            + 64 * 4
            + 4;
        assert_eq!(expected, RESNET20_PARAMS);
        assert_eq!(m.param_count(), RESNET20_PARAMS);
        let mut counted = 0;
        m.clone().visit_params(&mut |p| counted += p.value.len());
        assert_eq!(counted, RESNET20_PARAMS);
    }

    #[test]
    fn resnet_stages_reduce_four_times_before_pooling() {
        let m = build_resnet20::<f32>(0);
        let shapes = m.layer_shapes();
        let stem_out = &shapes[2];
        let before_pool = &shapes[shapes.len() - 3];
        assert_eq!(stem_out, &vec![64, 64, 16]);
        assert_eq!(before_pool, &vec![16, 16, 64]);
    }

    #[test]
    fn zero_input_runs_through_both() {
        let x = Tensor::<f32>::zeros(&[1, 128, 128, 3]);
        for m in [build_vgg10::<f32>(1), build_resnet20::<f32>(1)] {
            let p = m.predict_proba(&x).unwrap();
            assert_eq!(p[0].len(), 4);
            assert!((p[0].iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("lstm".parse::<Architecture>().is_err());
    }
}
