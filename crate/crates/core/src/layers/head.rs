//! Classifier head: optional dense+dropout stack, then a single sigmoid unit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::init::{glorot_uniform, he_uniform};
use super::{ForwardMode, HeadLayerSpec};
use crate::error::Result;
use crate::rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor, ValueId};

pub struct Dense<E> {
    w: Parameter<E>,
    b: Parameter<E>,
}

pub struct DenseBinding {
    w: ValueId,
    b: ValueId,
}

impl<E: Scalar> Dense<E> {
    fn new(name: &str, input: usize, output: usize, relu_fan: bool, r: &mut ChaCha8Rng) -> Self {
        let w = if relu_fan {
            he_uniform(r, &[output, input], input, format!("{name}.w"))
        } else {
            glorot_uniform(r, &[output, input], input, output, format!("{name}.w"))
        };
        Dense {
            w,
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[output])),
        }
    }

    fn bind(&self, tape: &mut Tape<E>) -> DenseBinding {
        DenseBinding {
            w: tape.param(&self.w),
            b: tape.param(&self.b),
        }
    }

    fn forward(&self, tape: &mut Tape<E>, bind: &DenseBinding, x: ValueId) -> Result<ValueId> {
        let y = tape.matvec(bind.w, x)?;
        tape.add(y, bind.b)
    }
}

/// Dense widths with dropout rates, closed by `dense(1) -> sigmoid`. The
/// sigmoid output is clamped into `[1e-7, 1 - 1e-7]` so the reported
/// probability is always strictly inside (0, 1).
pub struct ClassifyHead<E> {
    layers: Vec<(Dense<E>, f64)>,
    out: Dense<E>,
}

pub struct HeadBinding {
    layers: Vec<DenseBinding>,
    out: DenseBinding,
}

impl<E: Scalar> ClassifyHead<E> {
    pub fn new(input: usize, spec: &[HeadLayerSpec], r: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut dim = input;
        for (i, layer) in spec.iter().enumerate() {
            layers.push((
                Dense::new(&format!("head.{i}"), dim, layer.width, true, r),
                layer.dropout,
            ));
            dim = layer.width;
        }
        let out = Dense::new("head.out", dim, 1, false, r);
        ClassifyHead { layers, out }
    }

    pub fn bind(&self, tape: &mut Tape<E>) -> HeadBinding {
        HeadBinding {
            layers: self.layers.iter().map(|(d, _)| d.bind(tape)).collect(),
            out: self.out.bind(tape),
        }
    }

    /// `h_final -> [dense -> relu -> dropout]* -> dense(1) -> sigmoid`.
    ///
    /// Dropout is inverted (mask values 0 or 1/(1-rate)) and only sampled in
    /// train mode; in eval mode the layer is the identity.
    pub fn forward(
        &self,
        tape: &mut Tape<E>,
        bind: &HeadBinding,
        h: ValueId,
        mode: &ForwardMode,
    ) -> Result<ValueId> {
        let mut x = h;
        for (i, ((dense, rate), db)) in self.layers.iter().zip(&bind.layers).enumerate() {
            x = dense.forward(tape, db, x)?;
            x = tape.relu(x)?;
            if let ForwardMode::Train { dropout_seed } = mode {
                if *rate > 0.0 {
                    let mask = dropout_mask(
                        tape.shape(x),
                        *rate,
                        rng::mix(&[*dropout_seed, i as u64]),
                    );
                    let m = tape.leaf(mask);
                    x = tape.mul(x, m)?;
                }
            }
        }
        let logit = self.out.forward(tape, &bind.out, x)?;
        let p = tape.sigmoid(logit)?;
        tape.clamp_unit(p)
    }

    pub fn params(&self) -> Vec<&Parameter<E>> {
        let mut v: Vec<&Parameter<E>> = self
            .layers
            .iter()
            .flat_map(|(d, _)| [&d.w, &d.b])
            .collect();
        v.push(&self.out.w);
        v.push(&self.out.b);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<E>> {
        let mut v: Vec<&mut Parameter<E>> = self
            .layers
            .iter_mut()
            .flat_map(|(d, _)| [&mut d.w, &mut d.b])
            .collect();
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }

    pub fn leaf_ids(&self, bind: &HeadBinding) -> Vec<ValueId> {
        let mut v: Vec<ValueId> = bind.layers.iter().flat_map(|d| [d.w, d.b]).collect();
        v.push(bind.out.w);
        v.push(bind.out.b);
        v
    }
}

fn dropout_mask<E: Scalar>(shape: &[usize], rate: f64, seed: u64) -> Tensor<E> {
    let mut r = rng::chacha(seed);
    let keep = E::of(1.0 / (1.0 - rate));
    Tensor::from_fn(shape, |_| {
        if r.gen::<f64>() < rate {
            E::zero()
        } else {
            keep
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chacha;

    fn run(head: &ClassifyHead<f64>, h: &Tensor<f64>, mode: ForwardMode) -> f64 {
        let mut tape = Tape::new();
        let bind = head.bind(&mut tape);
        let hid = tape.leaf(h.clone());
        let p = head.forward(&mut tape, &bind, hid, &mode).unwrap();
        tape.value(p).data()[0]
    }

    #[test]
    fn zero_weights_give_half() {
        let spec = vec![HeadLayerSpec { width: 8, dropout: 0.3 }];
        let mut head = ClassifyHead::<f64>::new(4, &spec, &mut chacha(0));
        for p in head.params_mut() {
            let shape = p.value().shape().to_vec();
            p.set_value(Tensor::zeros(&shape)).unwrap();
        }
        let h = Tensor::from_fn(&[4], |i| i as f64);
        assert_eq!(run(&head, &h, ForwardMode::Eval), 0.5);
    }

    #[test]
    fn eval_mode_is_deterministic_identity_on_dropout() {
        let spec = vec![
            HeadLayerSpec { width: 6, dropout: 0.5 },
            HeadLayerSpec { width: 3, dropout: 0.5 },
        ];
        let head = ClassifyHead::<f64>::new(5, &spec, &mut chacha(3));
        let h = Tensor::from_fn(&[5], |i| (i as f64) * 0.3 - 0.7);
        let a = run(&head, &h, ForwardMode::Eval);
        let b = run(&head, &h, ForwardMode::Eval);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn train_mode_dropout_is_seed_deterministic() {
        let spec = vec![HeadLayerSpec { width: 16, dropout: 0.5 }];
        let head = ClassifyHead::<f64>::new(4, &spec, &mut chacha(4));
        let h = Tensor::from_fn(&[4], |i| i as f64 + 1.0);
        let a = run(&head, &h, ForwardMode::Train { dropout_seed: 11 });
        let b = run(&head, &h, ForwardMode::Train { dropout_seed: 11 });
        let c = run(&head, &h, ForwardMode::Train { dropout_seed: 12 });
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a.to_bits(), c.to_bits(), "different seed, different mask");
    }

    #[test]
    fn output_is_strictly_inside_unit_interval() {
        let spec = vec![
            HeadLayerSpec { width: 64, dropout: 0.3 },
            HeadLayerSpec { width: 16, dropout: 0.0 },
        ];
        for seed in 0..20 {
            let head = ClassifyHead::<f64>::new(32, &spec, &mut chacha(seed));
            let mut r = chacha(seed ^ 0xABCD);
            for _ in 0..50 {
                let h = Tensor::from_fn(&[32], |_| r.gen_range(-100.0..100.0));
                let p = run(&head, &h, ForwardMode::Eval);
                assert!(p > 0.0 && p < 1.0, "p = {p}");
            }
        }
    }
}
