//! Residual network family.
//!
//! The default "lite" member is a 3x3 stem (16 channels, stride 1), three
//! stages of two residual blocks at 16/32/64 channels with stride-2
//! downsampling between stages, global average pooling, and a dense head.

use super::spec::{LayerKind, LayerSpec, NetworkSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ResNetConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// 3x3 stride-2 max pool after the stem (2D only).
    pub stem_pool: bool,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
}

impl ResNetConfig {
    pub fn lite() -> Self {
        ResNetConfig {
            stem_channels: 16,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: false,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![2, 2, 2],
        }
    }

    /// The 18-layer layout: 7x7/2 stem, max pool, four stages of two blocks.
    pub fn resnet18() -> Self {
        ResNetConfig {
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stage_widths: vec![64, 128, 256, 512],
            blocks_per_stage: vec![2, 2, 2, 2],
        }
    }
}

/// 2D residual classifier over `(in_channels, height, width)` inputs.
pub fn resnet_2d(cfg: &ResNetConfig, in_channels: usize, hw: (usize, usize), num_classes: usize) -> NetworkSpec {
    let mut layers: Vec<LayerSpec> = vec![
        LayerKind::conv2d(in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride).into(),
        LayerKind::batch_norm(cfg.stem_channels).into(),
        LayerKind::ReLU.into(),
    ];
    if cfg.stem_pool {
        layers.push(
            LayerKind::MaxPool {
                kernel: [3, 3],
                stride: [2, 2],
            }
            .into(),
        );
    }
    let mut channels = cfg.stem_channels;
    for (stage, (&width, &blocks)) in cfg.stage_widths.iter().zip(&cfg.blocks_per_stage).enumerate() {
        for b in 0..blocks {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            layers.push(
                LayerKind::ResidualBlock2D {
                    in_channels: channels,
                    out_channels: width,
                    stride,
                }
                .into(),
            );
            channels = width;
        }
    }
    layers.push(LayerKind::GlobalAvgPool.into());
    layers.push(
        LayerKind::FullyConnected {
            in_features: channels,
            out_features: num_classes,
        }
        .into(),
    );
    NetworkSpec::new(layers, vec![in_channels, hw.0, hw.1], num_classes)
}

/// 3D residual classifier over `(in_channels, frames, height, width)`
/// volumes. Temporal stride is 1 in the first stage and 2 afterwards.
pub fn resnet_3d(
    cfg: &ResNetConfig,
    in_channels: usize,
    frames: usize,
    hw: (usize, usize),
    num_classes: usize,
) -> NetworkSpec {
    let k = cfg.stem_kernel;
    let mut layers: Vec<LayerSpec> = vec![
        LayerKind::Conv3D {
            in_channels,
            out_channels: cfg.stem_channels,
            kernel: [3, k, k],
            stride: [1, cfg.stem_stride, cfg.stem_stride],
            padding: [1, k / 2, k / 2],
            bias: false,
        }
        .into(),
        LayerKind::batch_norm(cfg.stem_channels).into(),
        LayerKind::ReLU.into(),
    ];
    let mut channels = cfg.stem_channels;
    for (stage, (&width, &blocks)) in cfg.stage_widths.iter().zip(&cfg.blocks_per_stage).enumerate() {
        for b in 0..blocks {
            let s = if stage > 0 && b == 0 { 2 } else { 1 };
            layers.push(
                LayerKind::ResidualBlock3D {
                    in_channels: channels,
                    out_channels: width,
                    stride: [s, s],
                }
                .into(),
            );
            channels = width;
        }
    }
    layers.push(LayerKind::GlobalAvgPool.into());
    layers.push(
        LayerKind::FullyConnected {
            in_features: channels,
            out_features: num_classes,
        }
        .into(),
    );
    NetworkSpec::new(layers, vec![in_channels, frames, hw.0, hw.1], num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lite_shapes() {
        let spec = resnet_2d(&ResNetConfig::lite(), 3, (64, 64), 2);
        let shapes = spec.infer_shapes().unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![2]);
        assert!(shapes.contains(&vec![64, 16, 16]));
    }

    #[test]
    fn resnet18_manifest_is_expressible() {
        let spec = resnet_2d(&ResNetConfig::resnet18(), 3, (224, 224), 1000);
        let shapes = spec.infer_shapes().unwrap();
        assert!(shapes.contains(&vec![512, 7, 7]));
    }

    #[test]
    fn three_d_temporal_downsampling() {
        let spec = resnet_3d(&ResNetConfig::lite(), 3, 16, (32, 32), 2);
        let shapes = spec.infer_shapes().unwrap();
        assert!(shapes.contains(&vec![64, 4, 8, 8]));
    }
}
