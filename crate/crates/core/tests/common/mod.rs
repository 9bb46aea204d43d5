#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srn::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(
        dims.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Naive direct convolution, independent of the library kernels.
pub fn naive_conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = input.nchw().unwrap();
    let [o, _, kh, kw] = kernel.nchw().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let x = |b: usize, ch: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            input.data()[((b * c + ch) * h + y as usize) * w + xx as usize]
        }
    };
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                acc += x(b, ic, iy, ix)
                                    * kernel.data()[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

/// Direct scatter form of a transposed convolution with one shared kernel.
pub fn naive_deconv(input: &Tensor, kernel: &[f64], k: usize, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = input.nchw().unwrap();
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (w - 1) * stride + k - 2 * pad;
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        for iy in 0..h {
            for ix in 0..w {
                for ky in 0..k {
                    for kx in 0..k {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        let ox = (ix * stride + kx) as isize - pad as isize;
                        if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                            out[p * oh * ow + oy as usize * ow + ox as usize] +=
                                input.data()[p * h * w + iy * w + ix] * kernel[ky * k + kx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

/// Central finite difference of `f` with respect to every element of `x`.
pub fn finite_diff(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|a - n| / max(|a|, |n|)`, with differences below `abs_floor`
/// treated as exact (round-off of the finite-difference quotient).
pub fn grad_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

pub fn max_grad_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| grad_error(a, n, abs_floor))
        .fold(0.0, f64::max)
}

use srn::image::{BinaryMap, ResponseMap};
use srn::model::{ModelConfig, ParamStore, RuOrder, StageSpec};
use srn::synth::{gen_sample, Background, Geometry, SceneSpec, Shape, SymmetrySample};

/// Three small stages, enough to exercise every code path quickly.
pub fn small_model(order: RuOrder) -> ModelConfig {
    ModelConfig {
        stages: vec![
            StageSpec {
                convs: 2,
                channels: 4,
            },
            StageSpec {
                convs: 2,
                channels: 6,
            },
            StageSpec {
                convs: 2,
                channels: 8,
            },
        ],
        ru_order: order,
        ..ModelConfig::default()
    }
}

/// Overwrites every learnable tensor with uniform noise in `[-scale, scale]`,
/// leaving RU gates near one so the chain stays well conditioned.
pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let names: Vec<String> = store.learnable_names().map(str::to_string).collect();
    for name in names {
        let t = store.get_mut(&name).unwrap();
        let gate = name.ends_with(".w_r") || name.ends_with(".w_s");
        for v in t.data_mut() {
            *v = if gate {
                rng.gen_range(0.5..1.5)
            } else {
                rng.gen_range(-scale..scale)
            };
        }
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> BinaryMap {
    BinaryMap::from_data(w, h, (0..w * h).map(|_| rng.gen_bool(p)).collect()).unwrap()
}

pub fn capsule_spec(a: (f64, f64), b: (f64, f64), radius: f64) -> SceneSpec {
    SceneSpec {
        width: 64,
        height: 64,
        shapes: vec![Shape {
            geometry: Geometry::Capsule { a, b, radius },
            intensity: 0.85,
        }],
        background: Background::Flat(0.2),
        occlusion: None,
        noise_seed: 1,
        noise_std: 0.02,
    }
}

pub fn capsule_sample() -> SymmetrySample {
    gen_sample(&capsule_spec((22.0, 30.0), (42.0, 36.0), 5.0)).unwrap()
}

/// Per-pixel balanced cross-entropy written directly from the definition.
pub fn bce_oracle(logits: &[f64], labels: &[bool], pos_w: f64, neg_w: f64) -> f64 {
    let mut total = 0.0;
    for (&x, &y) in logits.iter().zip(labels) {
        let p = 1.0 / (1.0 + (-x).exp());
        total += if y {
            -pos_w * p.ln()
        } else {
            -neg_w * (1.0 - p).ln()
        };
    }
    total
}

/// Maximum bipartite matching between positives within `tol` (augmenting paths).
pub fn max_matching(pred: &BinaryMap, gt: &BinaryMap, tol: f64) -> usize {
    let ps: Vec<(usize, usize)> = pred.positives().collect();
    let gs: Vec<(usize, usize)> = gt.positives().collect();
    let adj: Vec<Vec<usize>> = ps
        .iter()
        .map(|&(px, py)| {
            (0..gs.len())
                .filter(|&j| {
                    let dx = px as f64 - gs[j].0 as f64;
                    let dy = py as f64 - gs[j].1 as f64;
                    (dx * dx + dy * dy).sqrt() <= tol
                })
                .collect()
        })
        .collect();
    fn augment(
        u: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].map_or(true, |o| augment(o, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; gs.len()];
    (0..ps.len())
        .filter(|&u| augment(u, &adj, &mut vec![false; gs.len()], &mut owner))
        .count()
}

/// Box-blurred uniform noise rescaled to `[0, 1]`.
pub fn smoothed_map(rng: &mut ChaCha8Rng, w: usize, h: usize, passes: usize) -> ResponseMap {
    let mut v: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
    for _ in 0..passes {
        let src = v.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (xx, yy) = (x as isize + dx, y as isize + dy);
                        if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                            acc += src[yy as usize * w + xx as usize];
                            n += 1.0;
                        }
                    }
                }
                v[y * w + x] = acc / n;
            }
        }
    }
    let lo = v.iter().copied().fold(f64::MAX, f64::min);
    let hi = v.iter().copied().fold(f64::MIN, f64::max);
    ResponseMap::new(w, h, v.iter().map(|x| (x - lo) / (hi - lo)).collect()).unwrap()
}

/// A `w x h` map with a flat band of `thickness` rows (or columns) at `at`.
pub fn ridge(w: usize, h: usize, at: usize, thickness: usize, horizontal: bool) -> ResponseMap {
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let c = if horizontal { y } else { x };
            if c >= at && c < at + thickness {
                data[y * w + x] = 0.8;
            }
        }
    }
    ResponseMap::new(w, h, data).unwrap()
}
