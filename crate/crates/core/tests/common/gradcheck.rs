//! Analytic backward passes against central differences of the f64 oracles.
//! Inputs keep clear of ReLU and max-pool kinks, so a step of 1e-3 never
//! crosses one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{self, widen, ConvCfg};
use hwprune::adversarial::loss_input_grad;
use hwprune::model::{Architecture, Dims, LayerGrad, LayerParams, LayerSpec, ModelGraph, PoolSpec};
use hwprune::tensor::{
    batchnorm_bwd, batchnorm_fwd, conv2d_bwd, conv2d_fwd, fc_bwd, fc_fwd, maxpool_bwd, maxpool_fwd, softmax_xent,
    BnMode, BnParams, Tensor,
};

pub const STEP: f64 = 1e-3;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn tensor(shape: &[usize], v: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Worst relative error seen per checked quantity.
#[derive(Debug, Default)]
pub struct Report {
    pub entries: Vec<(String, f64)>,
}

impl Report {
    fn record(&mut self, name: &str, err: f64) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some((_, e)) => *e = e.max(err),
            None => self.entries.push((name.to_string(), err)),
        }
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

fn check_conv(rng: &mut ChaCha8Rng, rep: &mut Report) {
    let k = rng.gen_range(1..=3);
    let c = ConvCfg {
        c_in: rng.gen_range(1..=3),
        h: rng.gen_range(k.max(3)..=6),
        w: rng.gen_range(k.max(3)..=6),
        c_out: rng.gen_range(1..=3),
        k,
        s: rng.gen_range(1..=2),
        p: rng.gen_range(0..k),
    };
    let (oh, ow) = c.out();
    let x = uniform(rng, c.c_in * c.h * c.w, -1.0, 1.0);
    let w = uniform(rng, c.c_out * c.c_in * k * k, -1.0, 1.0);
    let b = uniform(rng, c.c_out, -1.0, 1.0);
    let r = uniform(rng, c.c_out * oh * ow, -1.0, 1.0);
    let xt = tensor(&[c.c_in, c.h, c.w], x.clone());
    let wt = tensor(&[c.c_out, c.c_in, k, k], w.clone());
    let out = conv2d_fwd(&xt, &wt, Some(&tensor(&[c.c_out], b.clone())), c.s, c.p).unwrap();
    assert_eq!(out.shape(), [c.c_out, oh, ow]);
    let g = conv2d_bwd(&xt, &wt, c.s, c.p, &tensor(&[c.c_out, oh, ow], r.clone())).unwrap();
    let (xd, wd, bd, rd) = (widen(&x), widen(&w), widen(&b), widen(&r));
    let n = oracle::fd_grad(&xd, STEP, |v| oracle::dot(&oracle::conv(v, &wd, &bd, &c), &rd));
    rep.record("conv2d input", oracle::rel_err(g.input.data(), &n));
    let n = oracle::fd_grad(&wd, STEP, |v| oracle::dot(&oracle::conv(&xd, v, &bd, &c), &rd));
    rep.record("conv2d weight", oracle::rel_err(g.weight.data(), &n));
    let n = oracle::fd_grad(&bd, STEP, |v| oracle::dot(&oracle::conv(&xd, &wd, v, &c), &rd));
    rep.record("conv2d bias", oracle::rel_err(g.bias.data(), &n));
}

fn check_fc(rng: &mut ChaCha8Rng, rep: &mut Report) {
    let (n_in, n_out) = (rng.gen_range(2..=8), rng.gen_range(1..=4));
    let x = uniform(rng, n_in, -1.0, 1.0);
    let w = uniform(rng, n_out * n_in, -1.0, 1.0);
    let b = uniform(rng, n_out, -1.0, 1.0);
    let r = uniform(rng, n_out, -1.0, 1.0);
    let xt = tensor(&[n_in], x.clone());
    let wt = tensor(&[n_out, n_in], w.clone());
    fc_fwd(&xt, &wt, Some(&tensor(&[n_out], b.clone()))).unwrap();
    let g = fc_bwd(&xt, &wt, &tensor(&[n_out], r.clone())).unwrap();
    let (xd, wd, bd, rd) = (widen(&x), widen(&w), widen(&b), widen(&r));
    let n = oracle::fd_grad(&xd, STEP, |v| oracle::dot(&oracle::fc(v, &wd, &bd), &rd));
    rep.record("fc input", oracle::rel_err(g.input.data(), &n));
    let n = oracle::fd_grad(&wd, STEP, |v| oracle::dot(&oracle::fc(&xd, v, &bd), &rd));
    rep.record("fc weight", oracle::rel_err(g.weight.data(), &n));
    let n = oracle::fd_grad(&bd, STEP, |v| oracle::dot(&oracle::fc(&xd, &wd, v), &rd));
    rep.record("fc bias", oracle::rel_err(g.bias.data(), &n));
}

fn check_bn(rng: &mut ChaCha8Rng, rep: &mut Report) {
    let (batch, c, h, w) = (rng.gen_range(2..=4), rng.gen_range(1..=3), rng.gen_range(2..=3), rng.gen_range(2..=3));
    let plane = h * w;
    let mut p = BnParams::identity(c);
    p.gamma = uniform(rng, c, 0.5, 1.5);
    p.beta = uniform(rng, c, -0.5, 0.5);
    p.running_mean = uniform(rng, c, -0.5, 0.5);
    p.running_var = uniform(rng, c, 0.5, 2.0);
    let xs: Vec<Vec<f32>> = (0..batch).map(|_| uniform(rng, c * plane, -1.0, 1.0)).collect();
    let rs: Vec<Vec<f32>> = (0..batch).map(|_| uniform(rng, c * plane, -1.0, 1.0)).collect();
    let xt: Vec<Tensor> = xs.iter().map(|x| tensor(&[c, h, w], x.clone())).collect();
    let rt: Vec<Tensor> = rs.iter().map(|r| tensor(&[c, h, w], r.clone())).collect();
    let (gd, bd) = (widen(&p.gamma), widen(&p.beta));
    let eps = p.eps as f64;
    let flat_x: Vec<f64> = xs.iter().flat_map(|x| widen(x)).collect();
    let flat_r: Vec<f64> = rs.iter().flat_map(|r| widen(r)).collect();
    let split = |v: &[f64]| v.chunks(c * plane).map(|s| s.to_vec()).collect::<Vec<_>>();
    let flat = |v: Vec<Vec<f64>>| v.into_iter().flatten().collect::<Vec<_>>();

    for mode in [BnMode::Train, BnMode::Eval] {
        let (_, cache) = batchnorm_fwd(&xt, &p, mode).unwrap();
        let g = batchnorm_bwd(&cache, &p, &rt).unwrap();
        let analytic_x: Vec<f32> = g.inputs.iter().flat_map(|t| t.data().to_vec()).collect();
        let fwd = |x: &[f64], gamma: &[f64], beta: &[f64]| -> f64 {
            let out = match mode {
                BnMode::Train => flat(oracle::bn_train(&split(x), gamma, beta, eps)),
                BnMode::Eval => {
                    let (m, v) = (widen(&p.running_mean), widen(&p.running_var));
                    split(x).iter().flat_map(|s| oracle::bn_eval(s, gamma, beta, &m, &v, eps)).collect()
                }
            };
            oracle::dot(&out, &flat_r)
        };
        let tag = if mode == BnMode::Train { "batchnorm(train)" } else { "batchnorm(eval)" };
        let n = oracle::fd_grad(&flat_x, STEP, |v| fwd(v, &gd, &bd));
        rep.record(&format!("{tag} input"), oracle::rel_err(&analytic_x, &n));
        let n = oracle::fd_grad(&gd, STEP, |v| fwd(&flat_x, v, &bd));
        rep.record(&format!("{tag} gamma"), oracle::rel_err(&g.gamma, &n));
        let n = oracle::fd_grad(&bd, STEP, |v| fwd(&flat_x, &gd, v));
        rep.record(&format!("{tag} beta"), oracle::rel_err(&g.beta, &n));
    }
}

/// Distinct values 0.01 apart, so no window has a near-tie.
fn spread(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.01 - n as f32 * 0.005).collect();
    v.shuffle(rng);
    v
}

fn check_pool(rng: &mut ChaCha8Rng, rep: &mut Report) {
    let k = rng.gen_range(2..=3);
    let (c, h, w, s, p) = (rng.gen_range(1..=2), rng.gen_range(3..=6), rng.gen_range(3..=6), rng.gen_range(1..=2), rng.gen_range(0..k));
    let x = spread(rng, c * h * w);
    let (oh, ow) = (oracle::out_dim(h, k, s, p), oracle::out_dim(w, k, s, p));
    let r = uniform(rng, c * oh * ow, -1.0, 1.0);
    let (_, arg) = maxpool_fwd(&tensor(&[c, h, w], x.clone()), k, s, p).unwrap();
    let g = maxpool_bwd(&[c, h, w], &arg, &tensor(&[c, oh, ow], r.clone())).unwrap();
    let rd = widen(&r);
    let n = oracle::fd_grad(&widen(&x), STEP, |v| oracle::dot(&oracle::maxpool(v, c, h, w, k, s, p).0, &rd));
    rep.record("maxpool input", oracle::rel_err(g.data(), &n));
}

fn check_xent(rng: &mut ChaCha8Rng, rep: &mut Report) {
    let n = rng.gen_range(2..=6);
    let z = uniform(rng, n, -3.0, 3.0);
    let label = rng.gen_range(0..n);
    let (loss, g) = softmax_xent(&tensor(&[n], z.clone()), label).unwrap();
    let zd = widen(&z);
    rep.record("softmax_xent loss", ((loss as f64 - oracle::xent(&zd, label)) / oracle::xent(&zd, label)).abs());
    let num = oracle::fd_grad(&zd, STEP, |v| oracle::xent(v, label));
    rep.record("softmax_xent logits", oracle::rel_err(g.data(), &num));
}

/// Eval-mode f64 forward of a conv/bn/relu/pool/flatten/fc chain; also
/// returns the ReLU sign pattern and pool winners.
struct ModelOracle<'a> {
    g: &'a ModelGraph,
}

impl ModelOracle<'_> {
    fn params(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.g.params()[i] {
            LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => (
                widen(weight.data()),
                bias.as_ref().map_or(vec![0.0; weight.shape()[0]], |b| widen(b.data())),
            ),
            _ => unreachable!(),
        }
    }

    fn loss(&self, x: &[f64], label: usize, over: Option<(usize, &[f64])>) -> (f64, Vec<usize>) {
        let shapes = self.g.shapes();
        let mut cur = x.to_vec();
        let mut pattern = Vec::new();
        for (i, l) in self.g.layers().iter().enumerate() {
            let d = shapes[i].input;
            cur = match l {
                LayerSpec::Conv(c) => {
                    let (mut w, b) = self.params(i);
                    if let Some((j, v)) = over.filter(|(j, _)| *j == i) {
                        let _ = j;
                        w = v.to_vec();
                    }
                    let cfg = ConvCfg { c_in: d.c, h: d.h, w: d.w, c_out: c.out, k: c.k, s: c.stride, p: c.pad };
                    oracle::conv(&cur, &w, &b, &cfg)
                }
                LayerSpec::Fc(_) => {
                    let (mut w, b) = self.params(i);
                    if let Some((_, v)) = over.filter(|(j, _)| *j == i) {
                        w = v.to_vec();
                    }
                    oracle::fc(&cur, &w, &b)
                }
                LayerSpec::BatchNorm => {
                    let LayerParams::BatchNorm(bn) = &self.g.params()[i] else { unreachable!() };
                    oracle::bn_eval(
                        &cur,
                        &widen(&bn.gamma),
                        &widen(&bn.beta),
                        &widen(&bn.running_mean),
                        &widen(&bn.running_var),
                        bn.eps as f64,
                    )
                }
                LayerSpec::Relu => {
                    pattern.extend(cur.iter().map(|v| (*v > 0.0) as usize));
                    oracle::relu(&cur)
                }
                LayerSpec::MaxPool(PoolSpec { k, stride, pad }) => {
                    let (y, arg) = oracle::maxpool(&cur, d.c, d.h, d.w, *k, *stride, *pad);
                    pattern.extend(arg);
                    y
                }
                LayerSpec::Flatten => cur,
            };
        }
        (oracle::xent(&cur, label), pattern)
    }
}

/// FD on coordinates whose ±h perturbation keeps the activation pattern;
/// returns (analytic, numeric) restricted to those coordinates.
fn smooth_fd(x: &[f64], analytic: &[f32], f: impl Fn(&[f64]) -> (f64, Vec<usize>)) -> (Vec<f32>, Vec<f64>) {
    let mut p = x.to_vec();
    let base = f(x).1;
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for i in 0..x.len() {
        p[i] = x[i] + STEP;
        let (up, pu) = f(&p);
        p[i] = x[i] - STEP;
        let (down, pd) = f(&p);
        p[i] = x[i];
        if pu == base && pd == base {
            a.push(analytic[i]);
            n.push((up - down) / (2.0 * STEP));
        }
    }
    (a, n)
}

fn check_model(rng: &mut ChaCha8Rng, rep: &mut Report) {
    let side = rng.gen_range(6..=8);
    let c_in = rng.gen_range(1..=2);
    let arch = Architecture::new(
        Dims::new(c_in, side, side),
        3,
        vec![
            LayerSpec::conv(rng.gen_range(2..=3), 3, 1, rng.gen_range(0..=1)),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::maxpool(2, 2),
            LayerSpec::Flatten,
            LayerSpec::fc(3),
        ],
    )
    .unwrap();
    let mut g = ModelGraph::init("grad", arch, rng.gen()).unwrap();
    for p in g.params_mut() {
        if let LayerParams::BatchNorm(bn) = p {
            let c = bn.channels();
            bn.gamma = uniform(rng, c, 0.5, 1.5);
            bn.beta = uniform(rng, c, -0.2, 0.2);
            bn.running_mean = uniform(rng, c, -0.2, 0.2);
            bn.running_var = uniform(rng, c, 0.5, 2.0);
        }
    }
    let x = uniform(rng, c_in * side * side, 0.0, 1.0);
    let label = rng.gen_range(0..3);
    let xt = tensor(&[c_in, side, side], x.clone());
    let orc = ModelOracle { g: &g };

    let (_, gin) = loss_input_grad(&g, &xt, label).unwrap();
    let (a, n) = smooth_fd(&widen(&x), gin.data(), |v| orc.loss(v, label, None));
    rep.record("model input", oracle::rel_err(&a, &n));

    let (logits, cache) = g.forward(&xt).unwrap();
    let (_, gl) = softmax_xent(&logits, label).unwrap();
    let back = g.backward(&cache, &[gl]).unwrap();
    let xd = widen(&x);
    for (i, lg) in back.params.iter().enumerate() {
        let (name, analytic) = match lg {
            LayerGrad::Conv { weight, .. } => ("model conv weight", weight),
            LayerGrad::Fc { weight, .. } => ("model fc weight", weight),
            _ => continue,
        };
        let (w, _) = orc.params(i);
        let (a, n) = smooth_fd(&w, analytic.data(), |v| orc.loss(&xd, label, Some((i, v))));
        rep.record(name, oracle::rel_err(&a, &n));
    }
}

/// Runs every check on `configs` random configurations.
pub fn run_suite(configs: usize, seed: u64) -> Report {
    let mut rep = Report::default();
    for i in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        check_conv(&mut rng, &mut rep);
        check_fc(&mut rng, &mut rep);
        check_bn(&mut rng, &mut rep);
        check_pool(&mut rng, &mut rep);
        check_xent(&mut rng, &mut rep);
        check_model(&mut rng, &mut rep);
    }
    rep
}
