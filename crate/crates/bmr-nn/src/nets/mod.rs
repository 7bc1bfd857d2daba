//! Architecture catalog and the deterministic forward pass producing
//! categorical logits.
//!
//! Every layer's parameters live in one matrix of extents
//! `K_l × (K_{l−1} + 1)` with the bias folded in as the last column, for
//! dense and convolutional layers alike (a conv row is a flattened kernel
//! plus bias). That uniform shape is what lets pruning treat bias entries as
//! ordinary weight sites.

mod checkpoint;

pub use checkpoint::{
    arch_hash, load_checkpoint, save_checkpoint, Checkpoint, CheckpointPayload, MethodTag,
};

use crate::stats::{standard_normal, RngStream};
use crate::tensor::{Activation, Tensor, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Network architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkArch {
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
        activation: Activation,
    },
    /// LeNet-5: two valid 5×5 convolutions each followed by 2×2 average
    /// pooling, then the 120-feature stage as a full connection (its output
    /// map would be 1×1), then dense layers of `linear_width` and `classes`.
    LeNet5 {
        in_channels: usize,
        input_hw: (usize, usize),
        conv_features: [usize; 3],
        linear_width: usize,
        classes: usize,
        activation: Activation,
    },
}

/// One layer's role in the forward recursion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid 5×5 convolution; weight matrix `[out_ch × (in_ch·25 + 1)]`.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        pool_after: bool,
    },
    /// Dense affine; weight matrix `[out_dim × (in_dim + 1)]`.
    Dense { in_dim: usize, out_dim: usize },
}

impl LayerSpec {
    /// Extents of the layer's weight matrix.
    pub fn weight_shape(&self) -> [usize; 2] {
        match self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kh,
                kw,
                ..
            } => [*out_ch, in_ch * kh * kw + 1],
            LayerSpec::Dense { in_dim, out_dim } => [*out_dim, in_dim + 1],
        }
    }
}

pub const LENET_KERNEL: usize = 5;

impl NetworkArch {
    /// Desk-scale default MLP: 2×128 Swish.
    pub fn mlp_default(input_dim: usize, classes: usize) -> Self {
        NetworkArch::Mlp {
            input_dim,
            hidden: vec![128, 128],
            classes,
            activation: Activation::Swish,
        }
    }

    /// The paper-scale MLP: five hidden layers of 400, Swish.
    pub fn mlp_paper(input_dim: usize, classes: usize) -> Self {
        NetworkArch::Mlp {
            input_dim,
            hidden: vec![400; 5],
            classes,
            activation: Activation::Swish,
        }
    }

    /// LeNet-5 at FashionMNIST scale: (6, 16, 120) features, 84-wide linear,
    /// tanh.
    pub fn lenet5_fashion(classes: usize) -> Self {
        NetworkArch::LeNet5 {
            in_channels: 1,
            input_hw: (28, 28),
            conv_features: [6, 16, 120],
            linear_width: 84,
            classes,
            activation: Activation::Tanh,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            NetworkArch::Mlp { classes, .. } | NetworkArch::LeNet5 { classes, .. } => *classes,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            NetworkArch::Mlp { activation, .. } | NetworkArch::LeNet5 { activation, .. } => {
                *activation
            }
        }
    }

    /// Number of input features (channels × height × width for images).
    pub fn input_len(&self) -> usize {
        match self {
            NetworkArch::Mlp { input_dim, .. } => *input_dim,
            NetworkArch::LeNet5 {
                in_channels,
                input_hw,
                ..
            } => in_channels * input_hw.0 * input_hw.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |why: String| Error::Config(why);
        match self {
            NetworkArch::Mlp {
                input_dim,
                hidden,
                classes,
                ..
            } => {
                if *input_dim == 0 {
                    return Err(cfg("mlp input_dim must be positive".into()));
                }
                if hidden.is_empty() {
                    return Err(cfg("mlp needs at least one hidden layer (depth ≥ 2)".into()));
                }
                if hidden.iter().any(|&w| w == 0) {
                    return Err(cfg(format!("mlp hidden widths must be positive: {hidden:?}")));
                }
                if *classes < 2 {
                    return Err(cfg(format!("class count must be ≥ 2, got {classes}")));
                }
            }
            NetworkArch::LeNet5 {
                in_channels,
                input_hw,
                conv_features,
                linear_width,
                classes,
                ..
            } => {
                if *in_channels == 0 || *linear_width == 0 || conv_features.iter().any(|&f| f == 0)
                {
                    return Err(cfg("lenet5 extents must be positive".into()));
                }
                if *classes < 2 {
                    return Err(cfg(format!("class count must be ≥ 2, got {classes}")));
                }
                let (mut h, mut w) = *input_hw;
                for stage in 0..2 {
                    if h < LENET_KERNEL || w < LENET_KERNEL {
                        return Err(cfg(format!(
                            "lenet5 stage {stage}: map {h}x{w} smaller than {LENET_KERNEL}x{LENET_KERNEL} kernel"
                        )));
                    }
                    h -= LENET_KERNEL - 1;
                    w -= LENET_KERNEL - 1;
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(cfg(format!(
                            "lenet5 stage {stage}: map {h}x{w} not poolable by 2x2"
                        )));
                    }
                    h /= 2;
                    w /= 2;
                }
            }
        }
        Ok(())
    }

    /// Layer-by-layer shapes of the forward recursion.
    pub fn layers(&self) -> Vec<LayerSpec> {
        match self {
            NetworkArch::Mlp {
                input_dim,
                hidden,
                classes,
                ..
            } => {
                let mut specs = Vec::with_capacity(hidden.len() + 1);
                let mut prev = *input_dim;
                for &width in hidden {
                    specs.push(LayerSpec::Dense {
                        in_dim: prev,
                        out_dim: width,
                    });
                    prev = width;
                }
                specs.push(LayerSpec::Dense {
                    in_dim: prev,
                    out_dim: *classes,
                });
                specs
            }
            NetworkArch::LeNet5 {
                in_channels,
                input_hw,
                conv_features,
                linear_width,
                classes,
                ..
            } => {
                let (mut h, mut w) = *input_hw;
                let mut specs = Vec::with_capacity(5);
                let mut prev_ch = *in_channels;
                for &out_ch in &conv_features[..2] {
                    specs.push(LayerSpec::Conv {
                        in_ch: prev_ch,
                        out_ch,
                        kh: LENET_KERNEL,
                        kw: LENET_KERNEL,
                        pool_after: true,
                    });
                    h = (h - LENET_KERNEL + 1) / 2;
                    w = (w - LENET_KERNEL + 1) / 2;
                    prev_ch = out_ch;
                }
                specs.push(LayerSpec::Dense {
                    in_dim: prev_ch * h * w,
                    out_dim: conv_features[2],
                });
                specs.push(LayerSpec::Dense {
                    in_dim: conv_features[2],
                    out_dim: *linear_width,
                });
                specs.push(LayerSpec::Dense {
                    in_dim: *linear_width,
                    out_dim: *classes,
                });
                specs
            }
        }
    }

    /// Total number of weight sites (bias columns included).
    pub fn site_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| {
                let [r, c] = l.weight_shape();
                r * c
            })
            .sum()
    }
}

/// Realized weight tensors, one matrix per layer, bias folded as the last
/// column.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub layers: Vec<Tensor>,
}

impl NetworkWeights {
    pub fn zeros(arch: &NetworkArch) -> Self {
        Self {
            layers: arch
                .layers()
                .iter()
                .map(|l| Tensor::zeros(&l.weight_shape()))
                .collect(),
        }
    }

    pub fn matches(&self, arch: &NetworkArch) -> bool {
        let specs = arch.layers();
        specs.len() == self.layers.len()
            && specs
                .iter()
                .zip(self.layers.iter())
                .all(|(s, t)| t.shape() == s.weight_shape())
    }
}

/// Standardized initialization: every site (bias column included) drawn
/// `N(0,1)`, one derived stream per layer.
pub fn init_weights(arch: &NetworkArch, rng: &RngStream) -> NetworkWeights {
    let layers = arch
        .layers()
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let mut stream = rng.derive(rng.stream_id() + l as u64);
            let [r, c] = spec.weight_shape();
            let data = (0..r * c).map(|_| standard_normal(&mut stream)).collect();
            Tensor::from_vec(&[r, c], data).expect("sized to shape")
        })
        .collect();
    NetworkWeights { layers }
}

fn check_input(op: &'static str, arch: &NetworkArch, x: &Tensor) -> Result<usize> {
    if x.ndim() < 2 {
        return Err(Error::BadShape {
            op,
            shape: x.shape().to_vec(),
            why: "expected a batch as the leading dimension".into(),
        });
    }
    let per_example: usize = x.shape()[1..].iter().product();
    if per_example != arch.input_len() {
        return Err(Error::BadShape {
            op,
            shape: x.shape().to_vec(),
            why: format!("input wants {} features per example", arch.input_len()),
        });
    }
    Ok(x.shape()[0])
}

/// Deterministic forward pass: `x[batch × input] → logits[batch × classes]`.
///
/// Intermediate layers apply the architecture's activation; the last layer is
/// affine with no activation.
pub fn forward(arch: &NetworkArch, weights: &NetworkWeights, x: &Tensor) -> Result<Tensor> {
    let batch = check_input("forward", arch, x)?;
    if !weights.matches(arch) {
        return Err(Error::BadShape {
            op: "forward",
            shape: weights.layers.first().map(|t| t.shape().to_vec()).unwrap_or_default(),
            why: "weights do not match architecture".into(),
        });
    }
    let act = arch.activation();
    let specs = arch.layers();
    let mut h = match arch {
        NetworkArch::Mlp { .. } => x.reshaped(&[batch, arch.input_len()])?,
        NetworkArch::LeNet5 {
            in_channels,
            input_hw,
            ..
        } => x.reshaped(&[batch, *in_channels, input_hw.0, input_hw.1])?,
    };
    for (i, (spec, w)) in specs.iter().zip(weights.layers.iter()).enumerate() {
        let last = i + 1 == specs.len();
        match spec {
            LayerSpec::Conv {
                kh, kw, pool_after, ..
            } => {
                let mut out = crate::tensor::conv2d_mat_value(&h, w, *kh, *kw)?;
                out = act.apply(&out);
                if *pool_after {
                    out = crate::tensor::avgpool2(&out)?;
                }
                h = out;
            }
            LayerSpec::Dense { in_dim, .. } => {
                if h.ndim() != 2 {
                    h = h.reshaped(&[batch, *in_dim])?;
                }
                let ext = append_ones_col_value(&h);
                let mut out = crate::tensor::matmul_nt(&ext, w)?;
                if !last {
                    out = act.apply(&out);
                }
                h = out;
            }
        }
    }
    Ok(h)
}

/// Forward pass over tape nodes, for training. `weight_vars` must follow
/// [`NetworkArch::layers`] order. `dropout_masks`, when given, multiply the
/// extended inputs of each dense layer (MAP-style train-time dropout).
pub fn forward_on_tape(
    arch: &NetworkArch,
    weight_vars: &[Var],
    x: &Var,
    dropout_masks: Option<&[Tensor]>,
) -> Result<Var> {
    let specs = arch.layers();
    if weight_vars.len() != specs.len() {
        return Err(Error::BadShape {
            op: "forward_on_tape",
            shape: vec![weight_vars.len()],
            why: format!("need {} weight tensors", specs.len()),
        });
    }
    let act = arch.activation();
    let batch = x.shape()[0];
    let mut h = match arch {
        NetworkArch::Mlp { .. } => x.reshape(&[batch, arch.input_len()])?,
        NetworkArch::LeNet5 {
            in_channels,
            input_hw,
            ..
        } => x.reshape(&[batch, *in_channels, input_hw.0, input_hw.1])?,
    };
    let mut dense_idx = 0usize;
    for (i, (spec, w)) in specs.iter().zip(weight_vars.iter()).enumerate() {
        let last = i + 1 == specs.len();
        match spec {
            LayerSpec::Conv {
                kh, kw, pool_after, ..
            } => {
                let mut out = h.conv2d_mat(w, *kh, *kw)?.activation(act)?;
                if *pool_after {
                    out = out.avgpool2()?;
                }
                h = out;
            }
            LayerSpec::Dense { in_dim, .. } => {
                if h.shape().len() != 2 {
                    h = h.reshape(&[batch, *in_dim])?;
                }
                let mut ext = h.append_ones_col()?;
                if let Some(masks) = dropout_masks {
                    ext = ext.mul_const(&masks[dense_idx])?;
                }
                dense_idx += 1;
                let out = ext.matmul_nt(w)?;
                h = if last { out } else { out.activation(act)? };
            }
        }
    }
    Ok(h)
}

pub(crate) fn append_ones_col_value(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut data = vec![0.0; r * (c + 1)];
    for i in 0..r {
        data[i * (c + 1)..i * (c + 1) + c].copy_from_slice(&t.data()[i * c..(i + 1) * c]);
        data[i * (c + 1) + c] = 1.0;
    }
    Tensor::from_vec(&[r, c + 1], data).expect("sized to shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sigmoid;

    #[test]
    fn zero_weights_give_zero_logits() {
        let arch = NetworkArch::mlp_default(4, 3);
        let w = NetworkWeights::zeros(&arch);
        let x = Tensor::filled(&[2, 4], 0.7);
        let logits = forward(&arch, &w, &x).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lenet_zero_weights_zero_logits() {
        let arch = NetworkArch::lenet5_fashion(10);
        arch.validate().unwrap();
        let w = NetworkWeights::zeros(&arch);
        let x = Tensor::zeros(&[1, 1, 28, 28]);
        let logits = forward(&arch, &w, &x).unwrap();
        assert_eq!(logits.shape(), &[1, 10]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lenet_dimension_flow() {
        let arch = NetworkArch::lenet5_fashion(10);
        let specs = arch.layers();
        assert_eq!(specs.len(), 5);
        // 28→24→12→8→4, so the fc stage sees 16·4·4 = 256 inputs
        assert_eq!(
            specs[2],
            LayerSpec::Dense {
                in_dim: 256,
                out_dim: 120
            }
        );
        assert_eq!(specs[0].weight_shape(), [6, 26]);
        assert_eq!(specs[1].weight_shape(), [16, 6 * 25 + 1]);
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        // pencil route: one hidden unit, swish, then a 2-class affine head
        let arch = NetworkArch::Mlp {
            input_dim: 2,
            hidden: vec![1],
            classes: 2,
            activation: Activation::Swish,
        };
        let w1 = Tensor::from_vec(&[1, 3], vec![0.5, -0.25, 0.1]).unwrap();
        let w2 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, -1.0, 0.5]).unwrap();
        let weights = NetworkWeights {
            layers: vec![w1, w2],
        };
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let logits = forward(&arch, &weights, &x).unwrap();

        let pre = 0.5 * 1.0 + (-0.25) * 1.0 + 0.1;
        let h = pre * sigmoid(pre);
        let expect = [h * 1.0 + 0.0, h * (-1.0) + 0.5];
        assert!((logits.data()[0] - expect[0]).abs() < 1e-15);
        assert!((logits.data()[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn forward_is_pure() {
        let arch = NetworkArch::mlp_default(6, 4);
        let rng = RngStream::new(5, 100);
        let w = init_weights(&arch, &rng);
        let x = Tensor::from_vec(&[3, 6], (0..18).map(|i| i as f64 / 18.0).collect()).unwrap();
        let a = forward(&arch, &w, &x).unwrap();
        let b = forward(&arch, &w, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_consistency() {
        let arch = NetworkArch::mlp_default(5, 3);
        let rng = RngStream::new(11, 100);
        let w = init_weights(&arch, &rng);
        let data: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let x = Tensor::from_vec(&[4, 5], data.clone()).unwrap();
        let stacked = forward(&arch, &w, &x).unwrap();
        for r in 0..4 {
            let row = Tensor::from_vec(&[1, 5], data[r * 5..(r + 1) * 5].to_vec()).unwrap();
            let single = forward(&arch, &w, &row).unwrap();
            for c in 0..3 {
                assert!((stacked.at2(r, c) - single.at2(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_reproducible_and_per_layer_streams_differ() {
        let arch = NetworkArch::mlp_default(8, 3);
        let rng = RngStream::new(3, 100);
        let a = init_weights(&arch, &rng);
        let b = init_weights(&arch, &rng);
        assert_eq!(a, b);
        assert_ne!(a.layers[0].data()[0], a.layers[1].data()[0]);
    }

    #[test]
    fn init_site_variance_near_one() {
        let arch = NetworkArch::Mlp {
            input_dim: 400,
            hidden: vec![400],
            classes: 10,
            activation: Activation::Swish,
        };
        let rng = RngStream::new(123, 100);
        let w = init_weights(&arch, &rng);
        let layer = &w.layers[0]; // 400×401
        let n = layer.len() as f64;
        let mean: f64 = layer.data().iter().sum::<f64>() / n;
        let var: f64 = layer.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.02, "site variance {var}");
    }

    #[test]
    fn hidden_permutation_leaves_logits_unchanged() {
        let arch = NetworkArch::Mlp {
            input_dim: 3,
            hidden: vec![4],
            classes: 2,
            activation: Activation::Swish,
        };
        let rng = RngStream::new(21, 100);
        let w = init_weights(&arch, &rng);
        let x = Tensor::from_vec(&[2, 3], vec![0.1, -0.4, 0.9, 1.0, 0.0, -1.0]).unwrap();
        let base = forward(&arch, &w, &x).unwrap();

        // swap hidden units 1 and 3: rows of W1, columns of W2
        let perm = [0usize, 3, 2, 1];
        let mut w1 = Tensor::zeros(&[4, 4]);
        let mut w2 = Tensor::zeros(&[2, 5]);
        for i in 0..4 {
            for j in 0..4 {
                w1.set2(i, j, w.layers[0].at2(perm[i], j));
            }
        }
        for i in 0..2 {
            for j in 0..4 {
                w2.set2(i, j, w.layers[1].at2(i, perm[j]));
            }
            w2.set2(i, 4, w.layers[1].at2(i, 4));
        }
        let permuted = NetworkWeights {
            layers: vec![w1, w2],
        };
        let out = forward(&arch, &permuted, &x).unwrap();
        for (a, b) in base.data().iter().zip(out.data().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn arch_validation_rejects_degenerates() {
        assert!(NetworkArch::Mlp {
            input_dim: 4,
            hidden: vec![],
            classes: 2,
            activation: Activation::Swish
        }
        .validate()
        .is_err());
        assert!(NetworkArch::Mlp {
            input_dim: 4,
            hidden: vec![8],
            classes: 1,
            activation: Activation::Swish
        }
        .validate()
        .is_err());
    }
}
