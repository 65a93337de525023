//! Oracles and finite-difference harnesses shared by the integration tests.
#![allow(dead_code)]

use jnd::autodiff::GradCheck;
use jnd::autodiff::{Tape, Var};
use jnd::regularizers::{br_penalty, l2_distance_sq, tv_penalty, MAX_INTENSITY};
use jnd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

/// Direct cross-correlation, one output element at a time.
pub fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; f * oh * ow];
    for o in 0..f {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b.data()[o];
                for ch in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            let y = (i * stride + u) as isize - pad as isize;
                            let xx = (j * stride + v) as isize - pad as isize;
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                acc += x.data()[ch * h * w + y as usize * w + xx as usize]
                                    * k.data()[((o * c + ch) * kh + u) * kw + v];
                            }
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    Tensor::new(vec![f, oh, ow], out).unwrap()
}

/// Reduces `out` to a scalar with fixed random weights so every output
/// element carries a distinct gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(uniform(&shape, -1.0, 1.0, seed));
    let prod = tape.mul(out, r).unwrap();
    tape.sum(prod)
}

/// Evaluates `build` on a fresh tape with `x` as the only leaf and
/// returns the value and the gradient with respect to `x`.
pub fn scalar_fn(build: impl Fn(&mut Tape<f64>, Var) -> Var) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
    move |x: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = build(&mut tape, v);
        let value = tape.value(y).item();
        (value, tape.backward(y).unwrap().take(v))
    }
}

/// `(name, max relative error, coordinates checked)` for every primitive.
pub fn primitive_checks() -> Vec<(&'static str, f64, usize)> {
    let gc = GradCheck { step: 1e-4, samples: 120, seed: 11 };
    let mut out = Vec::new();

    let x = uniform(&[3, 10, 10], -1.0, 1.0, 1);
    let k = uniform(&[4, 3, 3, 3], -0.5, 0.5, 2);
    let b = uniform(&[4], -0.5, 0.5, 3);
    let (kc, bc, xc) = (k.clone(), b.clone(), x.clone());
    out.push(("conv2d/input", gc.max_relative_error(scalar_fn(move |t, v| {
        let (kk, bb) = (t.constant(kc.clone()), t.constant(bc.clone()));
        let y = t.conv2d(v, kk, bb, 2, 1).unwrap();
        project(t, y, 4)
    }), &x), gc.samples));
    let (bc, xc2) = (b.clone(), xc.clone());
    out.push(("conv2d/kernel", gc.max_relative_error(scalar_fn(move |t, v| {
        let (xx, bb) = (t.constant(xc2.clone()), t.constant(bc.clone()));
        let y = t.conv2d(xx, v, bb, 2, 1).unwrap();
        project(t, y, 4)
    }), &k), gc.samples));
    let kc = k.clone();
    out.push(("conv2d/bias", gc.max_relative_error(scalar_fn(move |t, v| {
        let (xx, kk) = (t.constant(xc.clone()), t.constant(kc.clone()));
        let y = t.conv2d(xx, kk, v, 2, 1).unwrap();
        project(t, y, 4)
    }), &b), gc.samples));

    let xin = uniform(&[2, 3, 5], -1.0, 1.0, 5);
    let w = uniform(&[7, 30], -0.5, 0.5, 6);
    let bias = uniform(&[7], -0.5, 0.5, 7);
    let (wc, bc) = (w.clone(), bias.clone());
    out.push(("dense/input", gc.max_relative_error(scalar_fn(move |t, v| {
        let (ww, bb) = (t.constant(wc.clone()), t.constant(bc.clone()));
        let y = t.dense(v, ww, bb).unwrap();
        project(t, y, 8)
    }), &xin), gc.samples));
    let (xc, bc) = (xin.clone(), bias.clone());
    out.push(("dense/weights", gc.max_relative_error(scalar_fn(move |t, v| {
        let (xx, bb) = (t.constant(xc.clone()), t.constant(bc.clone()));
        let y = t.dense(xx, v, bb).unwrap();
        project(t, y, 8)
    }), &w), gc.samples));
    let (xc, wc) = (xin.clone(), w.clone());
    out.push(("dense/bias", gc.max_relative_error(scalar_fn(move |t, v| {
        let (xx, ww) = (t.constant(xc.clone()), t.constant(wc.clone()));
        let y = t.dense(xx, ww, v).unwrap();
        project(t, y, 8)
    }), &bias), gc.samples));

    let z = uniform(&[200], -2.0, 2.0, 9);
    let away = {
        let z = z.clone();
        move |i: usize| z.data()[i].abs() > 10.0 * gc.step
    };
    out.push(("relu", gc.max_relative_error_where(scalar_fn(|t, v| {
        let y = t.relu(v);
        project(t, y, 10)
    }), &z, away), gc.samples));
    out.push(("sigmoid", gc.max_relative_error(scalar_fn(|t, v| {
        let y = t.sigmoid(v);
        project(t, y, 10)
    }), &z), gc.samples));

    let other = uniform(&[200], -2.0, 2.0, 12);
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        let o = other.clone();
        out.push((name, gc.max_relative_error(scalar_fn(move |t, v| {
            let c = t.constant(o.clone());
            let y = match op {
                0 => t.add(v, c),
                1 => t.sub(c, v),
                _ => t.mul(v, c),
            }
            .unwrap();
            // squaring keeps the gradient input-dependent
            let sq = t.mul(y, y).unwrap();
            project(t, sq, 13)
        }), &z), gc.samples));
    }
    out.push(("scale", gc.max_relative_error(scalar_fn(|t, v| {
        let y = t.scale(v, -2.5);
        let sq = t.mul(y, y).unwrap();
        project(t, sq, 14)
    }), &z), gc.samples));
    out.push(("sum", gc.max_relative_error(scalar_fn(|t, v| {
        let sq = t.mul(v, v).unwrap();
        t.sum(sq)
    }), &z), gc.samples));
    out.push(("mean", gc.max_relative_error(scalar_fn(|t, v| {
        let sq = t.mul(v, v).unwrap();
        t.mean(sq)
    }), &z), gc.samples));

    let logits = uniform(&[10], -3.0, 3.0, 15);
    out.push(("softmax_cross_entropy", gc.max_relative_error(scalar_fn(|t, v| {
        t.softmax_cross_entropy(v, 3).unwrap()
    }), &logits), gc.samples));
    out.push(("complement_cross_entropy", gc.max_relative_error(scalar_fn(|t, v| {
        t.complement_cross_entropy(v, 3).unwrap()
    }), &logits), gc.samples));
    out
}

/// `(name, max relative error, coordinates checked)` for each regularizer,
/// on a 3×16×16 image that straddles the valid range.
pub fn regularizer_checks() -> Vec<(&'static str, f64, usize)> {
    let gc = GradCheck { step: 1e-3, samples: 150, seed: 21 };
    let x = uniform(&[3, 16, 16], -60.0, 315.0, 22);
    let x0 = uniform(&[3, 16, 16], 0.0, 255.0, 23);
    let hi = MAX_INTENSITY;
    let off_kinks = {
        let x = x.clone();
        move |i: usize| {
            let v = x.data()[i];
            v.abs() > 1.0 && (v - hi).abs() > 1.0
        }
    };
    let l2 = move |t: &Tensor<f64>| {
        let p = l2_distance_sq(t, &x0).unwrap();
        (p.value, p.grad)
    };
    let br = |t: &Tensor<f64>| {
        let p = br_penalty(t);
        (p.value, p.grad)
    };
    let tv = |t: &Tensor<f64>| {
        let p = tv_penalty(t).unwrap();
        (p.value, p.grad)
    };
    vec![
        ("l2_distance", gc.max_relative_error(l2, &x), gc.samples),
        ("bounded_range", gc.max_relative_error_where(br, &x, off_kinks), gc.samples),
        ("total_variation", gc.max_relative_error(tv, &x), gc.samples),
    ]
}

// ---- 64-bit metric oracles ----

fn channel(t: &Tensor, c: usize) -> (usize, usize, Vec<Vec<f64>>) {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let rows = (0..h)
        .map(|y| (0..w).map(|x| t.data()[c * h * w + y * w + x] as f64).collect())
        .collect();
    (h, w, rows)
}

pub fn psnr_oracle(a: &Tensor, b: &Tensor, peak: f64) -> f64 {
    let n = a.len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n;
    20.0 * peak.log10() - 10.0 * mse.log10()
}

/// Sliding-window UIQI with unbiased window statistics.
pub fn uiqi_oracle(a: &Tensor, b: &Tensor, win: usize) -> f64 {
    let channels = a.shape()[0];
    let mut total = 0.0;
    for c in 0..channels {
        let (h, w, ra) = channel(a, c);
        let (_, _, rb) = channel(b, c);
        let mut qs = Vec::new();
        for i in 0..=h - win {
            for j in 0..=w - win {
                let xs: Vec<f64> = (i..i + win).flat_map(|y| ra[y][j..j + win].to_vec()).collect();
                let ys: Vec<f64> = (i..i + win).flat_map(|y| rb[y][j..j + win].to_vec()).collect();
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (n - 1.0);
                let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (n - 1.0);
                let cxy = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (n - 1.0);
                let (d1, d2) = (vx + vy, mx * mx + my * my);
                qs.push(if d1 * d2 != 0.0 {
                    4.0 * cxy * mx * my / (d1 * d2)
                } else if d1 == 0.0 && d2 != 0.0 {
                    2.0 * mx * my / d2
                } else if d2 == 0.0 && d1 != 0.0 {
                    2.0 * cxy / d1
                } else {
                    1.0
                });
            }
        }
        total += qs.iter().sum::<f64>() / qs.len() as f64;
    }
    total / channels as f64
}

/// Laplacian high-pass via an explicitly zero-padded copy, then one-pass
/// Pearson correlation over every channel.
pub fn scc_oracle(a: &Tensor, b: &Tensor) -> f64 {
    const K: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];
    let filter = |t: &Tensor| {
        let mut out = Vec::new();
        for c in 0..t.shape()[0] {
            let (h, w, rows) = channel(t, c);
            let mut padded = vec![vec![0.0; w + 2]; h + 2];
            for y in 0..h {
                padded[y + 1][1..=w].copy_from_slice(&rows[y]);
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (u, row) in K.iter().enumerate() {
                        for (v, k) in row.iter().enumerate() {
                            acc += k * padded[y + u][x + v];
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    };
    let (fa, fb) = (filter(a), filter(b));
    let n = fa.len() as f64;
    let (sx, sy) = (fa.iter().sum::<f64>(), fb.iter().sum::<f64>());
    let sxx = fa.iter().map(|v| v * v).sum::<f64>();
    let syy = fb.iter().map(|v| v * v).sum::<f64>();
    let sxy = fa.iter().zip(&fb).map(|(p, q)| p * q).sum::<f64>();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn gaussian_2d(n: usize) -> Vec<Vec<f64>> {
    let sigma = n as f64 / 5.0;
    let half = (n as f64 - 1.0) / 2.0;
    let mut k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (y, x) = (i as f64 - half, j as f64 - half);
                    (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        })
        .collect();
    let s: f64 = k.iter().flatten().sum();
    k.iter_mut().flatten().for_each(|v| *v /= s);
    k
}

fn filter_valid_2d(img: &[Vec<f64>], k: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = k.len();
    let (h, w) = (img.len(), img[0].len());
    (0..=h - n)
        .map(|y| {
            (0..=w - n)
                .map(|x| (0..n).map(|u| (0..n).map(|v| k[u][v] * img[y + u][x + v]).sum::<f64>()).sum())
                .collect()
        })
        .collect()
}

/// Pixel-domain VIF with direct 2-D Gaussian windows (4 scales, σn² = 2).
pub fn vif_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let sigma_nsq = 2.0;
    let eps = 1e-10;
    let mut total = 0.0;
    for c in 0..a.shape()[0] {
        let (_, _, mut r) = channel(a, c);
        let (_, _, mut d) = channel(b, c);
        let (mut num, mut den) = (0.0, 0.0);
        for scale in 1..=4u32 {
            let n = 2usize.pow(4 - scale + 1) + 1;
            let win = gaussian_2d(n);
            if scale > 1 {
                let down = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                    m.iter().step_by(2).map(|row| row.iter().step_by(2).copied().collect()).collect()
                };
                r = down(filter_valid_2d(&r, &win));
                d = down(filter_valid_2d(&d, &win));
            }
            let sq = |m: &[Vec<f64>], o: &[Vec<f64>]| -> Vec<Vec<f64>> {
                m.iter().zip(o).map(|(p, q)| p.iter().zip(q).map(|(x, y)| x * y).collect()).collect()
            };
            let mu1 = filter_valid_2d(&r, &win);
            let mu2 = filter_valid_2d(&d, &win);
            let e11 = filter_valid_2d(&sq(&r, &r), &win);
            let e22 = filter_valid_2d(&sq(&d, &d), &win);
            let e12 = filter_valid_2d(&sq(&r, &d), &win);
            for y in 0..mu1.len() {
                for x in 0..mu1[0].len() {
                    let mut s1 = (e11[y][x] - mu1[y][x] * mu1[y][x]).max(0.0);
                    let s2 = (e22[y][x] - mu2[y][x] * mu2[y][x]).max(0.0);
                    let s12 = e12[y][x] - mu1[y][x] * mu2[y][x];
                    let mut g = s12 / (s1 + eps);
                    let mut sv = s2 - g * s12;
                    if s1 < eps {
                        g = 0.0;
                        sv = s2;
                        s1 = 0.0;
                    }
                    if s2 < eps {
                        g = 0.0;
                        sv = 0.0;
                    }
                    if g < 0.0 {
                        sv = s2;
                        g = 0.0;
                    }
                    if sv <= eps {
                        sv = eps;
                    }
                    num += (1.0 + g * g * s1 / (sv + sigma_nsq)).log10();
                    den += (1.0 + s1 / sigma_nsq).log10();
                }
            }
        }
        total += num / den;
    }
    total / a.shape()[0] as f64
}

/// Seed-fixed (reference, distorted) pair: uniform reference, distorted by
/// noise of seed-dependent amplitude plus a small shift, not clamped.
pub fn metric_pair(seed: u64, size: usize) -> (Tensor, Tensor) {
    let mut r = rng(1000 + seed);
    let channels = if seed.is_multiple_of(2) { 1 } else { 3 };
    let shape = vec![channels, size, size];
    let a = Tensor::from_fn(shape.clone(), |_| r.random_range(0.0..255.0f32));
    let amp = r.random_range(2.0..60.0f32);
    let shift = r.random_range(-10.0..10.0f32);
    let b = Tensor::from_fn(shape, |i| a.data()[i] + shift + amp * r.random_range(-1.0..1.0f32));
    (a, b)
}

/// Worst oracle disagreements over 20 pairs: `[psnr (relative), uiqi, scc, vif]`.
pub fn metric_oracle_errors() -> [f64; 4] {
    use jnd::metrics::{psnr, scc, uiqi, vif};
    let mut worst = [0.0f64; 4];
    for seed in 0..20 {
        let (a, b) = metric_pair(seed, 16);
        let p = psnr(&a, &b, 255.0).unwrap();
        let po = psnr_oracle(&a, &b, 255.0);
        worst[0] = worst[0].max((p - po).abs() / po.abs());
        worst[1] = worst[1].max((uiqi(&a, &b, 8).unwrap() - uiqi_oracle(&a, &b, 8)).abs());
        worst[2] = worst[2].max((scc(&a, &b).unwrap() - scc_oracle(&a, &b)).abs());
        let (a, b) = metric_pair(seed, 64);
        worst[3] = worst[3].max((vif(&a, &b).unwrap() - vif_oracle(&a, &b)).abs());
    }
    worst
}

// ---- trained-model helpers ----

pub fn mnist_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// A small classifier that trains in a few seconds: good enough to attack,
/// not to report accuracy on.
pub fn quick_classifier() -> (jnd::models::ClassifierModel, jnd::data::LabeledImageSet) {
    let all = jnd::data::load_mnist_dir(mnist_dir()).expect("MNIST under data/mnist");
    let cfg = jnd::models::TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let model = jnd::models::train_classifier(&all.slice(0, 2000), &cfg).unwrap();
    (model, all.slice(9000, 1000))
}

/// Finite-difference check of the complete regularized attack cost through
/// `model`, at `image` plus noise so that some pixels leave the valid range.
/// Coordinates within one unit of a bounded-range kink are not sampled.
pub fn full_cost_check(model: &jnd::models::ClassifierModel, image: &Tensor, label: usize, seed: u64) -> (f64, usize) {
    use jnd::attack::{total_cost, ClassifierLoss, ClassifierObjective};
    use jnd::regularizers::RegularizerWeights;
    let objective = ClassifierObjective::new(model, label, ClassifierLoss::ComplementCrossEntropy).unwrap();
    let x0: Tensor<f64> = image.cast();
    let noise = uniform(x0.shape(), -30.0, 30.0, seed);
    let x = Tensor::new(
        x0.shape().to_vec(),
        x0.data().iter().zip(noise.data()).map(|(a, n)| a + n).collect(),
    )
    .unwrap();
    // larger than the defaults so every term is visible in the gradient
    let weights = RegularizerWeights {
        lambda_l2: 1e-3,
        w_br: 0.05,
        w_tv: 0.05,
    };
    let f = |t: &Tensor<f64>| {
        let e = total_cost(&objective, t, &x0, &weights).unwrap();
        (e.cost, e.gradient)
    };
    let admit = {
        let x = x.clone();
        move |i: usize| {
            let v = x.data()[i];
            v.abs() > 1.0 && (v - MAX_INTENSITY).abs() > 1.0
        }
    };
    let gc = GradCheck { step: 1e-3, samples: 120, seed };
    (gc.max_relative_error_where(f, &x, admit), gc.samples)
}
