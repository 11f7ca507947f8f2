//! Bilinear resize with half-pixel centers and edge clamping. Aspect ratio is
//! not preserved: frames stretch straight to the target square.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn resize_frame(frame: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    resize(frame, side, side)
}

pub fn resize(frame: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let shape = frame.shape();
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            op: "resize",
            shape: shape.to_vec(),
            reason: "expected [C,H,W]".into(),
        });
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize: target side must be >= 1".into()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h == out_h && w == out_w {
        return Ok(frame.clone());
    }
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut data = vec![0f32; c * out_h * out_w];
    let src = frame.data();
    for oy in 0..out_h {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        let y0 = sy.floor();
        let ty = (sy - y0) as f32;
        let y0c = (y0.max(0.0) as usize).min(h - 1);
        let y1c = ((y0 + 1.0).max(0.0) as usize).min(h - 1);
        for ox in 0..out_w {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            let x0 = sx.floor();
            let tx = (sx - x0) as f32;
            let x0c = (x0.max(0.0) as usize).min(w - 1);
            let x1c = ((x0 + 1.0).max(0.0) as usize).min(w - 1);
            for ch in 0..c {
                let base = ch * h * w;
                let a = src[base + y0c * w + x0c];
                let b = src[base + y0c * w + x1c];
                let d = src[base + y1c * w + x0c];
                let e = src[base + y1c * w + x1c];
                let top = a + (b - a) * tx;
                let bot = d + (e - d) * tx;
                data[ch * out_h * out_w + oy * out_w + ox] = top + (bot - top) * ty;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame_stays_constant() {
        let f = Tensor::filled(&[3, 5, 9], 0.42);
        let out = resize_frame(&f, 7).unwrap();
        assert_eq!(out.shape(), &[3, 7, 7]);
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn same_size_is_identity() {
        let f = Tensor::from_fn(&[3, 6, 6], |i| (i % 11) as f32 / 11.0);
        let out = resize_frame(&f, 6).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn known_gradient_downsample() {
        // 4x4 ramp image, one channel replicated to 3. With half-pixel
        // mapping each 2x2 output pixel is the mean of a 2x2 input block.
        let f = Tensor::from_fn(&[3, 4, 4], |i| (i % 16) as f32);
        let out = resize_frame(&f, 2).unwrap();
        let expect = [
            (0.0 + 1.0 + 4.0 + 5.0) / 4.0,
            (2.0 + 3.0 + 6.0 + 7.0) / 4.0,
            (8.0 + 9.0 + 12.0 + 13.0) / 4.0,
            (10.0 + 11.0 + 14.0 + 15.0) / 4.0,
        ];
        for ch in 0..3 {
            for (i, e) in expect.iter().enumerate() {
                assert!((out.data()[ch * 4 + i] - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn output_stays_in_unit_range() {
        let f = Tensor::from_fn(&[3, 9, 5], |i| ((i * 7919) % 256) as f32 / 255.0);
        for side in [1, 2, 3, 8, 17] {
            let out = resize_frame(&f, side).unwrap();
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_side_is_rejected() {
        let f = Tensor::zeros(&[3, 2, 2]);
        assert!(resize_frame(&f, 0).is_err());
    }
}
