use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BN_MOMENTUM: f32 = 0.1;
pub const DEFAULT_BN_EPS: f32 = 1e-5;

/// Layer kinds the core can run forward and backward.
///
/// 2D layers operate on per-sample shapes `(C, H, W)`, 3D layers on
/// `(C, D, H, W)`. Pooling, batch norm and ReLU accept either.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerKind {
    Conv2D {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        bias: bool,
    },
    Conv3D {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
    },
    BatchNorm {
        channels: usize,
        momentum: f32,
        eps: f32,
    },
    ReLU,
    /// Spatial max pooling over (H, W); applied per depth slice for 3D input.
    MaxPool {
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    GlobalAvgPool,
    /// Dense layer over the flattened sample.
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    /// conv3x3(stride) - BN - ReLU - conv3x3 - BN, plus a skip path that is
    /// the identity or a strided 1x1 projection + BN, then ReLU.
    ResidualBlock2D {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    /// 3x3x3 variant; `stride` is (temporal, spatial).
    ResidualBlock3D {
        in_channels: usize,
        out_channels: usize,
        stride: [usize; 2],
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2D { .. } => "Conv2D",
            LayerKind::Conv3D { .. } => "Conv3D",
            LayerKind::BatchNorm { .. } => "BatchNorm",
            LayerKind::ReLU => "ReLU",
            LayerKind::MaxPool { .. } => "MaxPool",
            LayerKind::GlobalAvgPool => "GlobalAvgPool",
            LayerKind::FullyConnected { .. } => "FullyConnected",
            LayerKind::ResidualBlock2D { .. } => "ResidualBlock2D",
            LayerKind::ResidualBlock3D { .. } => "ResidualBlock3D",
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerKind::Conv2D {
            in_channels,
            out_channels,
            kernel: [kernel; 2],
            stride: [stride; 2],
            padding: [kernel / 2; 2],
            bias: false,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerKind::BatchNorm {
            channels,
            momentum: DEFAULT_BN_MOMENTUM,
            eps: DEFAULT_BN_EPS,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let positive = |xs: &[usize], what: &str| {
            if xs.contains(&0) {
                Err(format!("{what} must be positive, got {xs:?}"))
            } else {
                Ok(())
            }
        };
        match self {
            LayerKind::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                positive(&[*in_channels, *out_channels], "channel counts")?;
                positive(kernel, "kernel extents")?;
                positive(stride, "strides")
            }
            LayerKind::Conv3D {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                positive(&[*in_channels, *out_channels], "channel counts")?;
                positive(kernel, "kernel extents")?;
                positive(stride, "strides")
            }
            LayerKind::BatchNorm {
                channels,
                momentum,
                eps,
            } => {
                positive(&[*channels], "channels")?;
                if !(*momentum > 0.0 && *momentum < 1.0) {
                    return Err(format!("momentum must be in (0, 1), got {momentum}"));
                }
                if eps.is_nan() || *eps <= 0.0 {
                    return Err(format!("eps must be positive, got {eps}"));
                }
                Ok(())
            }
            LayerKind::MaxPool { kernel, stride } => {
                positive(kernel, "kernel extents")?;
                positive(stride, "strides")
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => positive(&[*in_features, *out_features], "feature counts"),
            LayerKind::ResidualBlock2D {
                in_channels,
                out_channels,
                stride,
            } => positive(&[*in_channels, *out_channels, *stride], "block extents"),
            LayerKind::ResidualBlock3D {
                in_channels,
                out_channels,
                stride,
            } => {
                positive(&[*in_channels, *out_channels], "channel counts")?;
                positive(stride, "strides")
            }
            LayerKind::ReLU | LayerKind::GlobalAvgPool => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        self.validate()?;
        match self {
            LayerKind::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                expect_rank(input, 3)?;
                expect_channels(input, *in_channels)?;
                let h = conv_extent(input[1], kernel[0], stride[0], padding[0])?;
                let w = conv_extent(input[2], kernel[1], stride[1], padding[1])?;
                Ok(vec![*out_channels, h, w])
            }
            LayerKind::Conv3D {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                expect_rank(input, 4)?;
                expect_channels(input, *in_channels)?;
                let d = conv_extent(input[1], kernel[0], stride[0], padding[0])?;
                let h = conv_extent(input[2], kernel[1], stride[1], padding[1])?;
                let w = conv_extent(input[3], kernel[2], stride[2], padding[2])?;
                Ok(vec![*out_channels, d, h, w])
            }
            LayerKind::BatchNorm { channels, .. } => {
                expect_channels(input, *channels)?;
                Ok(input.to_vec())
            }
            LayerKind::ReLU => Ok(input.to_vec()),
            LayerKind::MaxPool { kernel, stride } => {
                if input.len() != 3 && input.len() != 4 {
                    return Err(format!("expected (C, H, W) or (C, D, H, W), got {input:?}"));
                }
                let r = input.len();
                let h = conv_extent(input[r - 2], kernel[0], stride[0], 0)?;
                let w = conv_extent(input[r - 1], kernel[1], stride[1], 0)?;
                let mut out = input.to_vec();
                out[r - 2] = h;
                out[r - 1] = w;
                Ok(out)
            }
            LayerKind::GlobalAvgPool => {
                if input.len() < 2 {
                    return Err(format!("expected spatial input, got {input:?}"));
                }
                Ok(vec![input[0]])
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                let flat: usize = input.iter().product();
                if flat != *in_features {
                    return Err(format!(
                        "expected {in_features} input features, got {flat} from {input:?}"
                    ));
                }
                Ok(vec![*out_features])
            }
            LayerKind::ResidualBlock2D {
                in_channels,
                out_channels,
                stride,
            } => {
                expect_rank(input, 3)?;
                expect_channels(input, *in_channels)?;
                let h = conv_extent(input[1], 3, *stride, 1)?;
                let w = conv_extent(input[2], 3, *stride, 1)?;
                Ok(vec![*out_channels, h, w])
            }
            LayerKind::ResidualBlock3D {
                in_channels,
                out_channels,
                stride,
            } => {
                expect_rank(input, 4)?;
                expect_channels(input, *in_channels)?;
                let d = conv_extent(input[1], 3, stride[0], 1)?;
                let h = conv_extent(input[2], 3, stride[1], 1)?;
                let w = conv_extent(input[3], 3, stride[1], 1)?;
                Ok(vec![*out_channels, d, h, w])
            }
        }
    }
}

fn expect_rank(input: &[usize], rank: usize) -> Result<(), String> {
    if input.len() != rank {
        return Err(format!(
            "expected a rank-{rank} sample, got shape {input:?}"
        ));
    }
    Ok(())
}

fn expect_channels(input: &[usize], channels: usize) -> Result<(), String> {
    if input.first() != Some(&channels) {
        return Err(format!(
            "expected {channels} channels, got shape {input:?}"
        ));
    }
    Ok(())
}

fn conv_extent(n: usize, k: usize, s: usize, p: usize) -> Result<usize, String> {
    if n + 2 * p < k {
        return Err(format!(
            "extent {n} with padding {p} is smaller than kernel {k}"
        ));
    }
    Ok((n + 2 * p - k) / s + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub trainable: bool,
}

impl From<LayerKind> for LayerSpec {
    fn from(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            trainable: true,
        }
    }
}

/// Architecture manifest: ordered layers, per-sample input shape, and the
/// number of output classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, input_shape: Vec<usize>, num_classes: usize) -> Self {
        NetworkSpec {
            layers,
            input_shape,
            num_classes,
        }
    }

    /// Per-sample shapes after every layer (index 0 is the input). Fails on
    /// the first layer that cannot accept its predecessor's output and
    /// returns nothing partial.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "input shape must have positive extents, got {:?}",
                self.input_shape
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Shape("num_classes must be positive".into()));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .kind
                .output_shape(shapes.last().expect("nonempty"))
                .map_err(|message| Error::Composition {
                    layer: i,
                    kind: layer.kind.name().to_string(),
                    message,
                })?;
            shapes.push(next);
        }
        let out = shapes.last().expect("nonempty");
        if out != &[self.num_classes] {
            return Err(Error::Composition {
                layer: self.layers.len().saturating_sub(1),
                kind: self
                    .layers
                    .last()
                    .map(|l| l.kind.name())
                    .unwrap_or("input")
                    .to_string(),
                message: format!(
                    "network emits {out:?}, expected {} logits",
                    self.num_classes
                ),
            });
        }
        Ok(shapes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_error_names_first_bad_layer() {
        let spec = NetworkSpec::new(
            vec![
                LayerKind::conv2d(3, 8, 3, 1).into(),
                LayerKind::batch_norm(4).into(),
                LayerKind::conv2d(3, 8, 3, 1).into(),
            ],
            vec![3, 8, 8],
            2,
        );
        match spec.infer_shapes() {
            Err(Error::Composition { layer, kind, .. }) => {
                assert_eq!(layer, 1);
                assert_eq!(kind, "BatchNorm");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn final_layer_must_emit_class_logits() {
        let spec = NetworkSpec::new(
            vec![
                LayerKind::GlobalAvgPool.into(),
                LayerKind::FullyConnected {
                    in_features: 3,
                    out_features: 4,
                }
                .into(),
            ],
            vec![3, 4, 4],
            2,
        );
        assert!(matches!(
            spec.infer_shapes(),
            Err(Error::Composition { layer: 1, .. })
        ));
    }

    #[test]
    fn conv_extents() {
        let k = LayerKind::conv2d(3, 16, 3, 2);
        assert_eq!(k.output_shape(&[3, 64, 64]).unwrap(), vec![16, 32, 32]);
        let k3 = LayerKind::ResidualBlock3D {
            in_channels: 16,
            out_channels: 32,
            stride: [2, 2],
        };
        assert_eq!(k3.output_shape(&[16, 12, 56, 56]).unwrap(), vec![32, 6, 28, 28]);
        assert!(LayerKind::conv2d(3, 0, 3, 1).output_shape(&[3, 8, 8]).is_err());
    }

    #[test]
    fn manifest_serializes_with_kind_tag() {
        let spec: LayerSpec = LayerKind::batch_norm(4).into();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"BatchNorm\""));
        let back: LayerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
