//! Per-frame convolutional feature extractors: the three custom stacks and
//! the VGG19 shape, truncated before any dense layers.

use rand_chacha::ChaCha8Rng;

use super::init::he_uniform;
use super::BackboneKind;
use crate::error::{Error, Result};
use crate::tensor::{Padding, Parameter, Scalar, Tape, Tensor, ValueId};

const POOL_WINDOW: usize = 2;
const POOL_STRIDE: usize = 2;

/// One entry of the flattened conv/pool layer list. The freeze boundary and
/// the paper-style "12th layer" count both index into this list.
pub enum BackboneLayer<E> {
    Conv {
        kernel: Parameter<E>,
        bias: Parameter<E>,
    },
    Pool,
}

pub struct Backbone<E> {
    layers: Vec<BackboneLayer<E>>,
    out_side: usize,
    out_channels: usize,
}

pub struct BackboneBinding {
    leaves: Vec<Option<(ValueId, ValueId)>>,
}

/// (convs per block, width) for each block of a backbone kind.
fn block_plan(kind: BackboneKind) -> Vec<(usize, usize, bool)> {
    match kind {
        // Custom stacks: one 3x3 conv per block, widths doubling from 16,
        // capped at 256. conv8 pools only on even blocks so eight blocks
        // still fit the default 112px frame.
        BackboneKind::Conv3 | BackboneKind::Conv5 | BackboneKind::Conv8 => {
            let blocks = match kind {
                BackboneKind::Conv3 => 3,
                BackboneKind::Conv5 => 5,
                _ => 8,
            };
            let pool_even_only = matches!(kind, BackboneKind::Conv8);
            (0..blocks)
                .map(|i| {
                    let width = (16usize << i).min(256);
                    let pool = !pool_even_only || (i + 1) % 2 == 0;
                    (1, width, pool)
                })
                .collect()
        }
        BackboneKind::Vgg19 => vec![
            (2, 64, true),
            (2, 128, true),
            (4, 256, true),
            (4, 512, true),
            (4, 512, true),
        ],
    }
}

/// Flattened conv/pool layer count for a backbone kind.
pub fn layer_count(kind: BackboneKind) -> usize {
    block_plan(kind)
        .iter()
        .map(|(convs, _, pool)| convs + usize::from(*pool))
        .sum()
}

/// Default freeze boundary: VGG19 re-trains from the start of block 4
/// (the 12th flattened layer); the custom stacks train end to end.
pub fn default_freeze_boundary(kind: BackboneKind) -> usize {
    match kind {
        BackboneKind::Vgg19 => 11,
        _ => 0,
    }
}

impl<E: Scalar> Backbone<E> {
    pub fn build(
        kind: BackboneKind,
        in_channels: usize,
        frame_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut channels = in_channels;
        let mut side = frame_size;
        for (block, (convs, width, pool)) in block_plan(kind).into_iter().enumerate() {
            for conv in 0..convs {
                let idx = layers.len();
                let kernel = he_uniform(
                    rng,
                    &[width, channels, 3, 3],
                    channels * 9,
                    format!("backbone.{idx}.kernel"),
                );
                let bias = Parameter::new(format!("backbone.{idx}.bias"), Tensor::zeros(&[width]));
                layers.push(BackboneLayer::Conv { kernel, bias });
                channels = width;
                let _ = conv;
            }
            if pool {
                if side < POOL_WINDOW {
                    return Err(Error::InvalidShape {
                        op: "build_backbone",
                        shape: vec![in_channels, frame_size, frame_size],
                        reason: format!(
                            "spatial extent reaches zero at block {} ({kind:?} needs a larger frame)",
                            block + 1
                        ),
                    });
                }
                layers.push(BackboneLayer::Pool);
                side = (side - POOL_WINDOW) / POOL_STRIDE + 1;
            }
        }
        Ok(Backbone {
            layers,
            out_side: side,
            out_channels: channels,
        })
    }

    pub fn layer_len(&self) -> usize {
        self.layers.len()
    }

    pub fn out_side(&self) -> usize {
        self.out_side
    }

    /// Flattened per-frame feature dimension.
    pub fn feature_dim(&self) -> usize {
        self.out_channels * self.out_side * self.out_side
    }

    /// Freeze every layer before `boundary`; layers from `boundary` on train.
    pub fn freeze_prefix(&mut self, boundary: usize) -> Result<()> {
        if boundary > self.layers.len() {
            return Err(Error::BoundaryOutOfRange {
                boundary,
                count: self.layers.len(),
            });
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let BackboneLayer::Conv { kernel, bias } = layer {
                kernel.set_trainable(i >= boundary);
                bias.set_trainable(i >= boundary);
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<E>) -> BackboneBinding {
        let leaves = self
            .layers
            .iter()
            .map(|layer| match layer {
                BackboneLayer::Conv { kernel, bias } => {
                    Some((tape.param(kernel), tape.param(bias)))
                }
                BackboneLayer::Pool => None,
            })
            .collect();
        BackboneBinding { leaves }
    }

    /// One frame `[C,S,S]` through the stack to a flat `[D]` feature vector.
    pub fn forward_frame(
        &self,
        tape: &mut Tape<E>,
        binding: &BackboneBinding,
        frame: ValueId,
    ) -> Result<ValueId> {
        let mut x = frame;
        for (layer, leaf) in self.layers.iter().zip(&binding.leaves) {
            x = match layer {
                BackboneLayer::Conv { .. } => {
                    let (kernel, bias) = leaf.expect("conv layer has leaves");
                    let y = tape.conv2d(x, kernel, bias, 1, Padding::Same)?;
                    tape.relu(y)?
                }
                BackboneLayer::Pool => tape.maxpool2d(x, POOL_WINDOW, POOL_STRIDE)?,
            };
        }
        tape.reshape(x, vec![self.feature_dim()])
    }

    pub fn params(&self) -> Vec<&Parameter<E>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                BackboneLayer::Conv { kernel, bias } => vec![kernel, bias],
                BackboneLayer::Pool => vec![],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<E>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                BackboneLayer::Conv { kernel, bias } => vec![kernel, bias],
                BackboneLayer::Pool => vec![],
            })
            .collect()
    }

    pub fn leaf_ids(&self, binding: &BackboneBinding) -> Vec<ValueId> {
        binding
            .leaves
            .iter()
            .flatten()
            .flat_map(|(k, b)| [*k, *b])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chacha;

    fn side_after(kind: BackboneKind, frame: usize) -> Result<usize> {
        Backbone::<f32>::build(kind, 3, frame, &mut chacha(0)).map(|b| b.out_side())
    }

    #[test]
    fn conv3_at_112_gives_side_14() {
        assert_eq!(side_after(BackboneKind::Conv3, 112).unwrap(), 14);
    }

    #[test]
    fn vgg19_at_112_gives_side_3() {
        // 112 -> 56 -> 28 -> 14 -> 7 -> 3, floor at each pooling
        assert_eq!(side_after(BackboneKind::Vgg19, 112).unwrap(), 3);
    }

    #[test]
    fn conv8_pools_on_even_blocks_only() {
        // 4 poolings instead of 8: 112 -> 56 -> 28 -> 14 -> 7
        assert_eq!(side_after(BackboneKind::Conv8, 112).unwrap(), 7);
    }

    #[test]
    fn eight_halvings_would_reach_zero() {
        // A frame that cannot survive the conv8 pooling schedule errors out.
        assert!(side_after(BackboneKind::Conv8, 8).is_err());
    }

    #[test]
    fn layer_counts() {
        assert_eq!(layer_count(BackboneKind::Conv3), 6);
        assert_eq!(layer_count(BackboneKind::Conv5), 10);
        assert_eq!(layer_count(BackboneKind::Conv8), 12);
        assert_eq!(layer_count(BackboneKind::Vgg19), 21);
        // Block 4 of VGG19 starts right after 2+2+4 convs and 3 pools.
        assert_eq!(default_freeze_boundary(BackboneKind::Vgg19), 11);
    }

    #[test]
    fn freeze_prefix_boundaries() {
        let mut b = Backbone::<f32>::build(BackboneKind::Conv3, 3, 16, &mut chacha(1)).unwrap();
        b.freeze_prefix(0).unwrap();
        assert!(b.params().iter().all(|p| p.trainable()));
        let count = b.layer_len();
        b.freeze_prefix(count).unwrap();
        assert!(b.params().iter().all(|p| !p.trainable()));
        assert!(b.freeze_prefix(count + 1).is_err());
    }
}
