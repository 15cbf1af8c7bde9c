#![allow(dead_code)]

use afmnet::autodiff::{Graph, Var};
use afmnet::gradcheck::{check_gradients, GradCheckOptions};
use afmnet::tensor::kernels::interp::InterpMode;
use afmnet::tensor::kernels::scan::ScanImpl;
use afmnet::{Result, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

pub struct Gen(pub ChaCha8Rng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.0.gen_range(lo..=hi)
    }

    pub fn shape(&mut self, ranges: &[(usize, usize)]) -> Vec<usize> {
        ranges.iter().map(|&(lo, hi)| self.dim(lo, hi)).collect()
    }

    pub fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| self.0.gen_range(lo..hi))
    }

    pub fn normal(&mut self, shape: &[usize]) -> Tensor<f64> {
        self.uniform(shape, -1.0, 1.0)
    }

    /// Values bounded away from zero, for kinked functions.
    pub fn off_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| {
            let m = self.0.gen_range(0.1..1.0);
            if self.0.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    /// Pairwise distinct values spaced 0.05 apart, for max-type reductions.
    pub fn distinct(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
        v.shuffle(&mut self.0);
        Tensor::new(shape.to_vec(), v).unwrap()
    }
}

fn case(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        inputs,
        build: Box::new(build),
    }
}

fn binary(r: &mut Gen, positive_rhs: bool) -> Vec<Tensor<f64>> {
    let (a, b, c) = (r.dim(1, 3), r.dim(1, 4), r.dim(1, 5));
    let rhs_shape = match r.dim(0, 2) {
        0 => vec![a, b, c],
        1 => vec![b, 1],
        _ => vec![1, c],
    };
    let rhs = if positive_rhs {
        r.uniform(&rhs_shape, 0.5, 1.5)
    } else {
        r.normal(&rhs_shape)
    };
    vec![r.normal(&[a, b, c]), rhs]
}

fn small_shape(r: &mut Gen) -> Vec<usize> {
    (0..r.dim(1, 4)).map(|_| r.dim(1, 4)).collect()
}

fn unary(r: &mut Gen, f: fn(&mut Graph<f64>, Var) -> Var) -> Case {
    let s = small_shape(r);
    case(vec![r.normal(&s)], move |g, v| Ok(f(g, v[0])))
}

fn scan_case(r: &mut Gen, imp: ScanImpl) -> Case {
    let (n, l, d, s) = (r.dim(1, 2), r.dim(1, 9), r.dim(1, 4), r.dim(1, 4));
    let inputs = vec![
        r.normal(&[n, l, d]),
        r.uniform(&[n, l, d], 0.05, 1.0),
        r.uniform(&[d, s], -2.0, -0.1),
        r.normal(&[n, l, s]),
        r.normal(&[n, l, s]),
    ];
    case(inputs, move |g, v| g.selective_scan(v[0], v[1], v[2], v[3], v[4], imp))
}

fn interp_case(r: &mut Gen, mode: InterpMode) -> Case {
    let (n, c, h, w) = (r.dim(1, 2), r.dim(1, 2), r.dim(1, 6), r.dim(1, 6));
    let target = (r.dim(1, 9), r.dim(1, 9));
    case(vec![r.normal(&[n, c, h, w])], move |g, v| {
        g.interpolate(v[0], target, mode)
    })
}

pub type CaseGen = fn(u64) -> Case;

/// Every differentiable graph operation, each with a seeded random instance generator.
pub fn op_catalog() -> Vec<(&'static str, CaseGen)> {
    vec![
        ("add", |s| {
            case(binary(&mut Gen::new(s), false), |g, v| g.add(v[0], v[1]))
        }),
        ("sub", |s| {
            case(binary(&mut Gen::new(s), false), |g, v| g.sub(v[0], v[1]))
        }),
        ("mul", |s| {
            case(binary(&mut Gen::new(s), false), |g, v| g.mul(v[0], v[1]))
        }),
        ("div", |s| {
            case(binary(&mut Gen::new(s), true), |g, v| g.div(v[0], v[1]))
        }),
        ("scale", |s| {
            let mut r = Gen::new(s);
            let c = r.0.gen_range(-2.0..2.0);
            let sh = small_shape(&mut r);
            case(vec![r.normal(&sh)], move |g, v| Ok(g.scale(v[0], c)))
        }),
        ("neg", |s| unary(&mut Gen::new(s), |g, x| g.neg(x))),
        ("add_scalar", |s| {
            let mut r = Gen::new(s);
            let c = r.0.gen_range(-2.0..2.0);
            let sh = small_shape(&mut r);
            case(vec![r.normal(&sh)], move |g, v| Ok(g.add_scalar(v[0], c)))
        }),
        ("exp", |s| unary(&mut Gen::new(s), |g, x| g.exp(x))),
        ("log", |s| {
            let mut r = Gen::new(s);
            let sh = small_shape(&mut r);
            case(vec![r.uniform(&sh, 0.2, 3.0)], |g, v| Ok(g.log(v[0])))
        }),
        ("sigmoid", |s| unary(&mut Gen::new(s), |g, x| g.sigmoid(x))),
        ("relu", |s| {
            let mut r = Gen::new(s);
            let sh = small_shape(&mut r);
            case(vec![r.off_zero(&sh)], |g, v| Ok(g.relu(v[0])))
        }),
        ("softplus", |s| unary(&mut Gen::new(s), |g, x| g.softplus(x))),
        ("silu", |s| unary(&mut Gen::new(s), |g, x| g.silu(x))),
        ("sum_axes", |s| {
            let mut r = Gen::new(s);
            let keep = r.0.gen_bool(0.5);
            let axes = if r.0.gen_bool(0.5) { vec![1] } else { vec![0, 2] };
            let x = {
                let sh = r.shape(&[(1, 3), (1, 3), (1, 3)]);
                r.normal(&sh)
            };
            case(vec![x], move |g, v| g.sum_axes(v[0], &axes, keep))
        }),
        ("mean_axes", |s| {
            let mut r = Gen::new(s);
            let keep = r.0.gen_bool(0.5);
            let axes = if r.0.gen_bool(0.5) { vec![2, 3] } else { vec![1] };
            let x = {
                let sh = r.shape(&[(1, 2), (1, 3), (1, 3), (1, 3)]);
                r.normal(&sh)
            };
            case(vec![x], move |g, v| g.mean_axes(v[0], &axes, keep))
        }),
        ("sum_all", |s| unary(&mut Gen::new(s), |g, x| g.sum_all(x))),
        ("mean_all", |s| unary(&mut Gen::new(s), |g, x| g.mean_all(x))),
        ("max_along", |s| {
            let mut r = Gen::new(s);
            let axis = r.dim(0, 2);
            let x = {
                let sh = r.shape(&[(1, 3), (1, 4), (1, 4)]);
                r.distinct(&sh)
            };
            case(vec![x], move |g, v| g.max_along(v[0], axis))
        }),
        ("concat", |s| {
            let mut r = Gen::new(s);
            let axis = r.dim(0, 2);
            let base = [r.dim(1, 3), r.dim(1, 3), r.dim(1, 3)];
            let parts = (0..3)
                .map(|_| {
                    let mut sh = base;
                    sh[axis] = r.dim(1, 3);
                    r.normal(&sh)
                })
                .collect();
            case(parts, move |g, v| g.concat(v, axis))
        }),
        ("slice", |s| {
            let mut r = Gen::new(s);
            let sh = [r.dim(2, 4), r.dim(2, 5)];
            let axis = r.dim(0, 1);
            let start = r.dim(0, sh[axis] - 1);
            let len = r.dim(1, sh[axis] - start);
            case(vec![r.normal(&sh)], move |g, v| g.slice(v[0], axis, start, len))
        }),
        ("reshape", |s| {
            let mut r = Gen::new(s);
            let (a, b, c) = (r.dim(1, 3), r.dim(1, 3), r.dim(1, 3));
            case(vec![r.normal(&[a, b, c])], move |g, v| g.reshape(v[0], &[b, a * c]))
        }),
        ("permute", |s| {
            let mut r = Gen::new(s);
            let mut perm = vec![0, 1, 2, 3];
            perm.shuffle(&mut r.0);
            let x = {
                let sh = r.shape(&[(1, 3), (1, 3), (1, 3), (1, 3)]);
                r.normal(&sh)
            };
            case(vec![x], move |g, v| g.permute(v[0], &perm))
        }),
        ("index_select", |s| {
            let mut r = Gen::new(s);
            let len = r.dim(1, 5);
            let index: Vec<usize> = (0..r.dim(1, 7)).map(|_| r.dim(0, len - 1)).collect();
            let (a, b) = (r.dim(1, 3), r.dim(1, 3));
            let x = r.normal(&[a, len, b]);
            case(vec![x], move |g, v| g.index_select(v[0], 1, &index))
        }),
        ("index_add", |s| {
            let mut r = Gen::new(s);
            let size = r.dim(1, 5);
            let index: Vec<usize> = (0..r.dim(1, 7)).map(|_| r.dim(0, size - 1)).collect();
            let cols = r.dim(1, 4);
            let x = r.normal(&[index.len(), cols]);
            case(vec![x], move |g, v| g.index_add(v[0], 0, &index, size))
        }),
        ("matmul", |s| {
            let mut r = Gen::new(s);
            let (m, k, n) = (r.dim(1, 6), r.dim(1, 6), r.dim(1, 6));
            case(vec![r.normal(&[m, k]), r.normal(&[k, n])], |g, v| g.matmul(v[0], v[1]))
        }),
        ("conv2d", |s| {
            let mut r = Gen::new(s);
            let (stride, pad, dil) = (r.dim(1, 2), r.dim(0, 2), r.dim(1, 2));
            let k = [1, 3][r.dim(0, 1)];
            let size = dil * (k - 1) + r.dim(1, 5);
            let (n, cin, cout) = (r.dim(1, 2), r.dim(1, 3), r.dim(1, 3));
            let x = r.normal(&[n, cin, size, size + 1]);
            let w = r.normal(&[cout, cin, k, k]);
            case(vec![x, w], move |g, v| g.conv2d(v[0], v[1], stride, pad, dil))
        }),
        ("depthwise_conv1d", |s| {
            let mut r = Gen::new(s);
            let (n, l, e, k) = (r.dim(1, 2), r.dim(1, 7), r.dim(1, 4), r.dim(1, 4));
            case(vec![r.normal(&[n, l, e]), r.normal(&[e, k])], |g, v| {
                g.depthwise_conv1d(v[0], v[1])
            })
        }),
        ("max_pool2d", |s| {
            let mut r = Gen::new(s);
            let (k, stride) = (r.dim(2, 3), r.dim(1, 2));
            let pad = r.dim(0, k / 2);
            let x = {
                let sh = r.shape(&[(1, 2), (1, 2), (k, 7), (k, 7)]);
                r.distinct(&sh)
            };
            case(vec![x], move |g, v| g.max_pool2d(v[0], k, stride, pad))
        }),
        ("batch_norm_train", |s| {
            let mut r = Gen::new(s);
            let c = r.dim(1, 3);
            let (n, h, w) = (r.dim(2, 3), r.dim(1, 3), r.dim(1, 3));
            let x = r.normal(&[n, c, h, w]);
            let inputs = vec![x, r.uniform(&[c], 0.5, 1.5), r.normal(&[c])];
            case(inputs, |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0))
        }),
        ("batch_norm_eval", |s| {
            let mut r = Gen::new(s);
            let c = r.dim(1, 3);
            let mean: Vec<f64> = r.normal(&[c]).into_data();
            let var: Vec<f64> = r.uniform(&[c], 0.5, 2.0).into_data();
            let (n, h, w) = (r.dim(1, 3), r.dim(1, 3), r.dim(1, 3));
            let x = r.normal(&[n, c, h, w]);
            let inputs = vec![x, r.uniform(&[c], 0.5, 1.5), r.normal(&[c])];
            case(inputs, move |g, v| {
                g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)
            })
        }),
        ("layer_norm", |s| {
            let mut r = Gen::new(s);
            let d = r.dim(2, 6);
            let (n, l) = (r.dim(1, 2), r.dim(1, 3));
            let inputs = vec![r.normal(&[n, l, d]), r.uniform(&[d], 0.5, 1.5), r.normal(&[d])];
            case(inputs, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))
        }),
        ("softmax", |s| {
            let mut r = Gen::new(s);
            let axis = r.dim(0, 2);
            let x = {
                let sh = r.shape(&[(1, 3), (1, 4), (1, 4)]);
                r.uniform(&sh, -3.0, 3.0)
            };
            case(vec![x], move |g, v| g.softmax(v[0], axis))
        }),
        ("log_softmax", |s| {
            let mut r = Gen::new(s);
            let axis = r.dim(0, 1);
            let x = {
                let sh = r.shape(&[(1, 4), (1, 5)]);
                r.uniform(&sh, -3.0, 3.0)
            };
            case(vec![x], move |g, v| g.log_softmax(v[0], axis))
        }),
        ("interpolate_bilinear", |s| {
            interp_case(&mut Gen::new(s), InterpMode::Bilinear)
        }),
        ("interpolate_nearest", |s| {
            interp_case(&mut Gen::new(s), InterpMode::Nearest)
        }),
        ("selective_scan_sequential", |s| {
            scan_case(&mut Gen::new(s), ScanImpl::Sequential)
        }),
        ("selective_scan_associative", |s| {
            scan_case(&mut Gen::new(s), ScanImpl::Associative)
        }),
        ("linear", |s| {
            let mut r = Gen::new(s);
            let (i, o) = (r.dim(1, 5), r.dim(1, 5));
            let (n, l) = (r.dim(1, 2), r.dim(1, 3));
            let inputs = vec![r.normal(&[n, l, i]), r.normal(&[i, o]), r.normal(&[o])];
            case(inputs, |g, v| g.linear(v[0], v[1], Some(v[2])))
        }),
    ]
}

/// Worst relative error of `op` over `instances` random cases.
pub fn op_worst_error(generate: CaseGen, instances: usize) -> f64 {
    let opts = GradCheckOptions::default();
    (0..instances as u64)
        .map(|seed| {
            let c = generate(seed);
            let errs = check_gradients(&c.inputs, &opts, c.build).expect("gradient check runs");
            errs.into_iter().fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
