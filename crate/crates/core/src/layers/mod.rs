//! The classifier architecture: a shared per-frame convolutional backbone
//! applied time-distributed over the sequence, a gated recurrent cell over
//! the resulting feature series, and a dense head ending in one sigmoid unit.

mod backbone;
mod head;
mod init;
mod recurrent;

pub use backbone::{default_freeze_boundary, layer_count, Backbone, BackboneBinding};
pub use head::{ClassifyHead, HeadBinding};
pub use recurrent::{CellState, GruBinding, GruCell, LstmBinding, LstmCell};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor, ValueId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Conv3,
    Conv5,
    Conv8,
    Vgg19,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [
        BackboneKind::Conv3,
        BackboneKind::Conv5,
        BackboneKind::Conv8,
        BackboneKind::Vgg19,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub const ALL: [CellKind; 2] = [CellKind::Gru, CellKind::Lstm];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Cce,
}

/// One dense layer of the prediction head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadLayerSpec {
    pub width: usize,
    #[serde(default)]
    pub dropout: f64,
}

/// Full architecture description. Serialized as-is into checkpoints and
/// accepted (partially) from `--config` JSON files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub cell: CellKind,
    pub hidden_size: usize,
    /// Dense widths and dropout rates used when `with_pred_head` is set.
    pub head: Vec<HeadLayerSpec>,
    pub with_pred_head: bool,
    pub seq_len: usize,
    pub frame_size: usize,
    pub channels: usize,
    /// First trainable backbone layer; `None` uses the backbone default
    /// (block 4 for VGG19, everything trainable for the custom stacks).
    pub freeze_boundary: Option<usize>,
    pub lr: f64,
    pub batch: usize,
    pub loss: LossKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneKind::Vgg19,
            cell: CellKind::Gru,
            hidden_size: 64,
            head: vec![
                HeadLayerSpec { width: 64, dropout: 0.3 },
                HeadLayerSpec { width: 16, dropout: 0.0 },
            ],
            with_pred_head: true,
            seq_len: 30,
            frame_size: 112,
            channels: 3,
            freeze_boundary: None,
            lr: 0.001,
            batch: 16,
            loss: LossKind::Bce,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::InvalidArgument(format!("config: {what}")));
        if self.seq_len < 1 {
            return fail("seq_len must be >= 1");
        }
        if self.frame_size < 8 {
            return fail("frame_size must be >= 8");
        }
        if self.channels < 1 {
            return fail("channels must be >= 1");
        }
        if self.batch < 1 {
            return fail("batch must be >= 1");
        }
        if self.hidden_size < 1 {
            return fail("hidden_size must be >= 1");
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return fail("lr must be finite and >= 0");
        }
        if let Some(b) = self.freeze_boundary {
            let count = layer_count(self.backbone);
            if b > count {
                return Err(Error::BoundaryOutOfRange { boundary: b, count });
            }
        }
        for layer in &self.head {
            if layer.width == 0 {
                return fail("head widths must be >= 1");
            }
            if !(0.0..1.0).contains(&layer.dropout) {
                return fail("head dropout must lie in [0, 1)");
            }
        }
        Ok(())
    }

    /// Head layers actually built: empty unless the pred head is enabled.
    pub fn effective_head(&self) -> &[HeadLayerSpec] {
        if self.with_pred_head {
            &self.head
        } else {
            &[]
        }
    }

    /// Short stable key used in report tables and file names.
    pub fn describe(&self) -> String {
        format!(
            "{:?}+{:?}{}",
            self.backbone,
            self.cell,
            if self.with_pred_head { "+pred" } else { "" }
        )
        .to_lowercase()
    }
}

/// Whether a forward pass samples dropout masks.
pub enum ForwardMode {
    Train { dropout_seed: u64 },
    Eval,
}

enum RecurrentCell<E> {
    Gru(GruCell<E>),
    Lstm(LstmCell<E>),
}

enum CellBinding {
    Gru(GruBinding),
    Lstm(LstmBinding),
}

/// Tape leaf ids of every bound parameter, ordered like
/// [`SequenceClassifier::params`].
pub struct ModelBinding {
    backbone: BackboneBinding,
    cell: CellBinding,
    head: HeadBinding,
}

pub struct SequenceClassifier<E = f32> {
    cfg: ModelConfig,
    backbone: Backbone<E>,
    cell: RecurrentCell<E>,
    head: ClassifyHead<E>,
}

impl<E: Scalar> SequenceClassifier<E> {
    /// Build with seeded initialization and the configured freeze boundary.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::chacha(rng::mix_tag(seed, "init"));
        let mut backbone = Backbone::build(cfg.backbone, cfg.channels, cfg.frame_size, &mut r)?;
        let feat = backbone.feature_dim();
        let cell = match cfg.cell {
            CellKind::Gru => RecurrentCell::Gru(GruCell::new(feat, cfg.hidden_size, &mut r)),
            CellKind::Lstm => RecurrentCell::Lstm(LstmCell::new(feat, cfg.hidden_size, &mut r)),
        };
        let head = ClassifyHead::new(cfg.hidden_size, cfg.effective_head(), &mut r);
        let boundary = cfg
            .freeze_boundary
            .unwrap_or_else(|| default_freeze_boundary(cfg.backbone));
        backbone.freeze_prefix(boundary)?;
        Ok(SequenceClassifier {
            cfg: cfg.clone(),
            backbone,
            cell,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    /// Re-freeze the backbone prefix at a new boundary.
    pub fn freeze_prefix(&mut self, boundary: usize) -> Result<()> {
        self.backbone.freeze_prefix(boundary)
    }

    pub fn bind(&self, tape: &mut Tape<E>) -> ModelBinding {
        ModelBinding {
            backbone: self.backbone.bind(tape),
            cell: match &self.cell {
                RecurrentCell::Gru(c) => CellBinding::Gru(c.bind(tape)),
                RecurrentCell::Lstm(c) => CellBinding::Lstm(c.bind(tape)),
            },
            head: self.head.bind(tape),
        }
    }

    /// Apply the shared backbone to each frame of `seq [L,C,S,S]` and stack
    /// the per-frame feature vectors into `[L, D]`. All frames bind the same
    /// weight leaves, so backbone gradients sum over time.
    pub fn time_distributed(
        &self,
        tape: &mut Tape<E>,
        binding: &ModelBinding,
        seq: &Tensor<E>,
    ) -> Result<ValueId> {
        let want = [
            self.cfg.seq_len,
            self.cfg.channels,
            self.cfg.frame_size,
            self.cfg.frame_size,
        ];
        if seq.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "time_distributed",
                lhs: seq.shape().to_vec(),
                rhs: want.to_vec(),
            });
        }
        let frame_len = self.cfg.channels * self.cfg.frame_size * self.cfg.frame_size;
        let mut rows = Vec::with_capacity(self.cfg.seq_len);
        for t in 0..self.cfg.seq_len {
            let frame = Tensor::new(
                vec![self.cfg.channels, self.cfg.frame_size, self.cfg.frame_size],
                seq.data()[t * frame_len..(t + 1) * frame_len].to_vec(),
            )?;
            let f = tape.leaf(frame);
            rows.push(self.backbone.forward_frame(tape, &binding.backbone, f)?);
        }
        tape.stack_rows(&rows)
    }

    /// Full forward pass to the scalar probability node.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<E>,
        seq: &Tensor<E>,
        mode: &ForwardMode,
    ) -> Result<(ValueId, ModelBinding)> {
        let binding = self.bind(tape);
        let feats = self.time_distributed(tape, &binding, seq)?;
        let mut h = tape.leaf(Tensor::zeros(&[self.cfg.hidden_size]));
        let mut c = match self.cell {
            RecurrentCell::Lstm(_) => Some(tape.leaf(Tensor::zeros(&[self.cfg.hidden_size]))),
            RecurrentCell::Gru(_) => None,
        };
        for t in 0..self.cfg.seq_len {
            let x = tape.slice_row(feats, t)?;
            match (&self.cell, &binding.cell) {
                (RecurrentCell::Gru(cell), CellBinding::Gru(b)) => {
                    h = cell.step_on_tape(tape, b, x, h)?;
                }
                (RecurrentCell::Lstm(cell), CellBinding::Lstm(b)) => {
                    let (h2, c2) =
                        cell.step_on_tape(tape, b, x, h, c.expect("lstm state present"))?;
                    h = h2;
                    c = Some(c2);
                }
                _ => unreachable!("cell binding matches cell kind"),
            }
        }
        let p = self.head.forward(tape, &binding.head, h, mode)?;
        Ok((p, binding))
    }

    /// Eval-mode probability for one sequence.
    pub fn predict(&self, seq: &Tensor<E>) -> Result<E> {
        let mut tape = Tape::new();
        let (p, _) = self.forward_on_tape(&mut tape, seq, &ForwardMode::Eval)?;
        tape.value(p).item()
    }

    /// Parameters in a stable order (backbone, cell, head) used everywhere:
    /// gradient accumulation, SGD, checkpoints.
    pub fn params(&self) -> Vec<&Parameter<E>> {
        let mut v = self.backbone.params();
        v.extend(match &self.cell {
            RecurrentCell::Gru(c) => c.params(),
            RecurrentCell::Lstm(c) => c.params(),
        });
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<E>> {
        let mut v = self.backbone.params_mut();
        v.extend(match &mut self.cell {
            RecurrentCell::Gru(c) => c.params_mut(),
            RecurrentCell::Lstm(c) => c.params_mut(),
        });
        v.extend(self.head.params_mut());
        v
    }

    fn leaf_ids(&self, binding: &ModelBinding) -> Vec<ValueId> {
        let mut v = self.backbone.leaf_ids(&binding.backbone);
        v.extend(match (&self.cell, &binding.cell) {
            (RecurrentCell::Gru(c), CellBinding::Gru(b)) => c.leaf_ids(b),
            (RecurrentCell::Lstm(c), CellBinding::Lstm(b)) => c.leaf_ids(b),
            _ => unreachable!(),
        });
        v.extend(self.head.leaf_ids(&binding.head));
        v
    }

    /// After `tape.backward`, fold the tape gradients of every bound
    /// parameter into the parameters' accumulators.
    pub fn accumulate_grads(&mut self, tape: &Tape<E>, binding: &ModelBinding) -> Result<()> {
        let leaves = self.leaf_ids(binding);
        for (param, leaf) in self.params_mut().into_iter().zip(leaves) {
            if let Some(g) = tape.grad(leaf) {
                param.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sgd_step;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            backbone: BackboneKind::Conv3,
            cell: CellKind::Gru,
            hidden_size: 4,
            seq_len: 3,
            frame_size: 8,
            batch: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn identical_frames_give_identical_feature_rows() {
        let model = SequenceClassifier::<f64>::new(&tiny_cfg(), 7).unwrap();
        let frame = Tensor::from_fn(&[3, 8, 8], |i| (i % 13) as f64 / 13.0);
        let mut seq_data = Vec::new();
        for _ in 0..3 {
            seq_data.extend_from_slice(frame.data());
        }
        let seq = Tensor::new(vec![3, 3, 8, 8], seq_data).unwrap();
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let feats = model.time_distributed(&mut tape, &binding, &seq).unwrap();
        let d = model.feature_dim();
        let data = tape.value(feats).data();
        assert_eq!(tape.shape(feats), &[3, d]);
        assert_eq!(&data[..d], &data[d..2 * d]);
        assert_eq!(&data[..d], &data[2 * d..]);
    }

    #[test]
    fn single_frame_sequence_equals_direct_backbone() {
        let mut cfg = tiny_cfg();
        cfg.seq_len = 1;
        let model = SequenceClassifier::<f64>::new(&cfg, 3).unwrap();
        let frame = Tensor::from_fn(&[3, 8, 8], |i| ((i * 31) % 17) as f64 / 17.0);
        let seq = frame.reshaped(vec![1, 3, 8, 8]).unwrap();

        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let feats = model.time_distributed(&mut tape, &binding, &seq).unwrap();
        let row = tape.value(feats).data().to_vec();

        let mut tape2 = Tape::new();
        let binding2 = model.bind(&mut tape2);
        let f = tape2.leaf(frame);
        let direct = model
            .backbone
            .forward_frame(&mut tape2, &binding2.backbone, f)
            .unwrap();
        assert_eq!(row, tape2.value(direct).data());
    }

    #[test]
    fn permuting_frames_permutes_feature_rows() {
        let model = SequenceClassifier::<f64>::new(&tiny_cfg(), 11).unwrap();
        let frames: Vec<Tensor<f64>> = (0..3)
            .map(|t| Tensor::from_fn(&[3, 8, 8], |i| ((i + t * 41) % 23) as f64 / 23.0))
            .collect();
        let build = |order: &[usize]| {
            let mut data = Vec::new();
            for &t in order {
                data.extend_from_slice(frames[t].data());
            }
            Tensor::new(vec![3, 3, 8, 8], data).unwrap()
        };
        let rows_of = |seq: &Tensor<f64>| {
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let feats = model.time_distributed(&mut tape, &binding, seq).unwrap();
            let d = model.feature_dim();
            (0..3)
                .map(|t| tape.value(feats).data()[t * d..(t + 1) * d].to_vec())
                .collect::<Vec<_>>()
        };
        let fwd = rows_of(&build(&[0, 1, 2]));
        let rev = rows_of(&build(&[2, 0, 1]));
        assert_eq!(fwd[2], rev[0]);
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[2]);
    }

    #[test]
    fn wrong_frame_count_is_rejected() {
        let model = SequenceClassifier::<f64>::new(&tiny_cfg(), 0).unwrap();
        let seq = Tensor::zeros(&[4, 3, 8, 8]);
        assert!(matches!(
            model.predict(&seq),
            Err(Error::ShapeMismatch { op: "time_distributed", .. })
        ));
    }

    #[test]
    fn shared_kernel_grad_is_sum_of_per_frame_grads() {
        let mut model = SequenceClassifier::<f64>::new(&tiny_cfg(), 5).unwrap();
        let seq = Tensor::from_fn(&[3, 3, 8, 8], |i| ((i * 7) % 29) as f64 / 29.0);

        // Gradient of sum(features) with all frames on one tape.
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let feats = model.time_distributed(&mut tape, &binding, &seq).unwrap();
        let loss = tape.sum(feats).unwrap();
        tape.backward(loss).unwrap();
        model.accumulate_grads(&tape, &binding).unwrap();
        let combined = model.params()[0].grad().clone();

        // Same quantity, one frame at a time, summed outside the tape.
        for p in model.params_mut() {
            p.zero_grad();
        }
        let frame_len = 3 * 8 * 8;
        for t in 0..3 {
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let frame = Tensor::new(
                vec![3, 8, 8],
                seq.data()[t * frame_len..(t + 1) * frame_len].to_vec(),
            )
            .unwrap();
            let f = tape.leaf(frame);
            let out = model
                .backbone
                .forward_frame(&mut tape, &binding.backbone, f)
                .unwrap();
            let loss = tape.sum(out).unwrap();
            tape.backward(loss).unwrap();
            model.accumulate_grads(&tape, &binding).unwrap();
        }
        let summed = model.params()[0].grad();
        for (a, b) in combined.data().iter().zip(summed.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn vgg19_default_freeze_leaves_blocks_4_and_5_trainable() {
        let cfg = ModelConfig {
            frame_size: 32,
            seq_len: 1,
            hidden_size: 2,
            ..ModelConfig::default()
        };
        let mut model = SequenceClassifier::<f32>::new(&cfg, 1).unwrap();
        let frozen: Vec<bool> = model
            .backbone
            .params()
            .iter()
            .map(|p| !p.trainable())
            .collect();
        // 8 convs in blocks 1-3 (16 params) frozen, 8 convs after trainable.
        assert_eq!(frozen.len(), 32);
        assert!(frozen[..16].iter().all(|&f| f));
        assert!(frozen[16..].iter().all(|&f| !f));

        // One backward pass: frozen params keep exactly zero accumulated grad.
        let seq = Tensor::from_fn(&[1, 3, 32, 32], |i| (i % 7) as f32 / 7.0);
        let mut tape = Tape::new();
        let (p, binding) = model
            .forward_on_tape(&mut tape, &seq, &ForwardMode::Eval)
            .unwrap();
        let loss = tape.bce_loss(p, 1.0).unwrap();
        tape.backward(loss).unwrap();
        model.accumulate_grads(&tape, &binding).unwrap();
        let params = model.backbone.params();
        assert!(params[..16]
            .iter()
            .all(|p| p.grad().data().iter().all(|&g| g == 0.0)));
        assert!(params[16..]
            .iter()
            .any(|p| p.grad().data().iter().any(|&g| g != 0.0)));
    }

    #[test]
    fn train_step_changes_predictions_toward_target() {
        let mut model = SequenceClassifier::<f32>::new(&tiny_cfg(), 21).unwrap();
        let seq = Tensor::from_fn(&[3, 3, 8, 8], |i| ((i * 3) % 11) as f32 / 11.0);
        let before = model.predict(&seq).unwrap();
        for step in 0..10 {
            let mut tape = Tape::new();
            let (p, binding) = model
                .forward_on_tape(&mut tape, &seq, &ForwardMode::Train { dropout_seed: step })
                .unwrap();
            let loss = tape.bce_loss(p, 1.0).unwrap();
            tape.backward(loss).unwrap();
            model.accumulate_grads(&tape, &binding).unwrap();
            sgd_step(model.params_mut(), 0.5).unwrap();
        }
        let after = model.predict(&seq).unwrap();
        assert!(after > before, "{before} -> {after}");
    }
}
