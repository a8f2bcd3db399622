//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use d2s_core::nn::ConvParams;
use d2s_core::{Rng, Tensor};

/// Direct six-loop cross-correlation with zero padding, in f64.
pub fn naive_conv(x: &Tensor<f64>, p: &ConvParams<f64>) -> Vec<f64> {
    let [n, cin, h, w] = x.shape().0;
    let [cout, _, k, _] = p.weight.shape().0;
    let (s, pad) = (p.stride, p.pad);
    let ho = (h + 2 * pad - k) / s + 1;
    let wo = (w + 2 * pad - k) / s + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = p.bias[o];
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * s + ky) as isize - pad as isize;
                                let ix = (xo * s + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += p.weight.get(o, i, ky, kx) * x.get(b, i, iy as usize, ix as usize);
                            }
                        }
                    }
                    out[((b * cout + o) * ho + y) * wo + xo] = acc;
                }
            }
        }
    }
    out
}

/// A random convolution problem: input, parameters.
pub fn random_conv_case(rng: &mut Rng) -> (Tensor<f64>, ConvParams<f64>) {
    let k = if rng.bernoulli(0.5) { 3 } else { 1 };
    let cin = rng.int_inclusive(1, 5);
    let cout = rng.int_inclusive(1, 5);
    let stride = rng.int_inclusive(1, 2);
    let pad = rng.int_inclusive(0, if k == 3 { 2 } else { 1 });
    let h = rng.int_inclusive(k.max(1), 9);
    let w = rng.int_inclusive(k.max(1), 9);
    let n = rng.int_inclusive(1, 3);
    let mut r = |len: usize| (0..len).map(|_| rng.range(-1.0, 1.0)).collect::<Vec<f64>>();
    let x = Tensor::from_vec([n, cin, h, w], r(n * cin * h * w)).unwrap();
    let weight = Tensor::from_vec([cout, cin, k, k], r(cout * cin * k * k)).unwrap();
    let bias = r(cout);
    (x, ConvParams::new(weight, bias, stride, pad).unwrap())
}

/// (tp, fp, fn, tn) by visiting every pixel coordinate.
pub fn brute_force_counts(pred: &Tensor<f32>, gt: &Tensor<f32>) -> (u64, u64, u64, u64) {
    let [n, c, h, w] = pred.shape().0;
    let mut t = (0, 0, 0, 0);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    match (pred.get(b, ch, y, x) == 1.0, gt.get(b, ch, y, x) == 1.0) {
                        (true, true) => t.0 += 1,
                        (true, false) => t.1 += 1,
                        (false, true) => t.2 += 1,
                        (false, false) => t.3 += 1,
                    }
                }
            }
        }
    }
    t
}

pub fn random_mask(shape: [usize; 4], p: f64, rng: &mut Rng) -> Tensor<f32> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.bernoulli(p) as u8 as f32).collect()).unwrap()
}

/// Per-layer MAC table of the full-size VGG-D2S at 1×3×64×64, written out
/// by hand: `K²·Cin·Cout·H·W` per conv, `2·C·H·W` per batch norm.
pub const VGG_D2S_64_MACS: &[(&str, u64)] = &[
    ("enc1.conv1", 9 * 3 * 16 * 64 * 64),
    ("enc1.bn1", 2 * 16 * 64 * 64),
    ("enc1.conv2", 9 * 16 * 16 * 64 * 64),
    ("enc1.bn2", 2 * 16 * 64 * 64),
    ("enc2.conv1", 9 * 16 * 32 * 32 * 32),
    ("enc2.bn1", 2 * 32 * 32 * 32),
    ("enc2.conv2", 9 * 32 * 32 * 32 * 32),
    ("enc2.bn2", 2 * 32 * 32 * 32),
    ("enc3.conv1", 9 * 32 * 64 * 16 * 16),
    ("enc3.bn1", 2 * 64 * 16 * 16),
    ("enc3.conv2", 9 * 64 * 64 * 16 * 16),
    ("enc3.bn2", 2 * 64 * 16 * 16),
    ("head.conv1x1", 64 * 128 * 8 * 8),
    ("head.conv", 9 * 2 * 2 * 64 * 64),
];
