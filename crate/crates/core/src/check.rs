//! Named self-checks: gradient checks, structural inverses, oracle
//! comparisons, residual identities, metric closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attribution::{lam_with, Region};
use crate::blocks::{AttentionCache, Estm, LocalStage, Lrcab, LrcabVariant, Mssa};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::metrics::{psnr, ssim, SsimMode};
use crate::network::EstnWeights;
use crate::params::{Init, ParamBuilder, ParamStore};
use crate::reference::{self, Map};
use crate::tensor::gradcheck::finite_diff_check;
use crate::tensor::{Padding, Tape, Tensor, Var};

pub const GRAD_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 10;
pub const INVERSE_SHAPES: usize = 100;
const FD_EPS: f64 = 1e-6;
/// Step and absolute floor for parameter entries. Some gradients are zero
/// exactly (a key bias shifts every score in a row equally), where central
/// differences only see rounding noise near 1e-10.
const PARAM_FD_EPS: f64 = 1e-5;
const PARAM_GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<(bool, String)>;

struct Check {
    name: String,
    run: Box<dyn Fn() -> Outcome + Send + Sync>,
}

type Prim = Box<dyn for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>> + Send + Sync>;

fn prim<F>(f: F) -> Prim
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>> + Send + Sync + 'static,
{
    Box::new(f)
}

/// Deterministic filler in `[-0.5, 0.5)` used for constants and readouts.
fn pattern(shape: Vec<usize>, salt: usize) -> Tensor<f64> {
    Tensor::from_fn(shape, move |i| ((i * 7919 + salt * 104_729) % 997) as f64 / 997.0 - 0.5)
}

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn constant<'t>(like: Var<'t, f64>, shape: Vec<usize>, salt: usize) -> Var<'t, f64> {
    like.tape().constant(pattern(shape, salt))
}

/// Primitive name, input shape, and the map from input to output.
fn primitives() -> Vec<(&'static str, Vec<usize>, Prim)> {
    let x3 = vec![2, 5, 6];
    vec![
        ("relu", x3.clone(), prim(|v| v.relu())),
        ("gelu", x3.clone(), prim(|v| v.gelu())),
        ("sigmoid", x3.clone(), prim(|v| v.sigmoid())),
        ("abs", x3.clone(), prim(|v| v.abs())),
        ("scale", x3.clone(), prim(|v| v.scale(1.7))),
        ("add_scalar", x3.clone(), prim(|v| v.add_scalar(0.3))),
        ("add", x3.clone(), prim(|v| v.add(constant(v, vec![2, 5, 6], 1)))),
        ("sub_left", x3.clone(), prim(|v| v.sub(constant(v, vec![2, 5, 6], 1)))),
        ("sub_right", x3.clone(), prim(|v| constant(v, vec![2, 5, 6], 1).sub(v))),
        ("mul", x3.clone(), prim(|v| v.mul(constant(v, vec![2, 5, 6], 2)))),
        ("mul_self", x3.clone(), prim(|v| v.mul(v))),
        ("mul_channel_input", x3.clone(), prim(|v| v.mul_channel(constant(v, vec![2, 1, 1], 3)))),
        ("mul_channel_gate", vec![2, 1, 1], prim(|v| constant(v, vec![2, 5, 6], 3).mul_channel(v))),
        ("sum", x3.clone(), prim(|v| v.sum())),
        ("mean", x3.clone(), prim(|v| v.mean())),
        ("reshape", x3.clone(), prim(|v| v.reshape(vec![10, 6]))),
        ("permute", x3.clone(), prim(|v| v.permute(&[1, 2, 0]))),
        ("transpose_last2", x3.clone(), prim(|v| v.transpose_last2())),
        ("narrow", x3.clone(), prim(|v| v.narrow(2, 1, 3))),
        ("concat", x3.clone(), prim(|v| Var::concat(&[v, constant(v, vec![1, 5, 6], 4), v], 0))),
        ("pad2d_zero", x3.clone(), prim(|v| v.pad2d([1, 0, 2, 1], Padding::Zero))),
        ("pad2d_reflect", x3.clone(), prim(|v| v.pad2d([3, 1, 2, 4], Padding::Reflect))),
        ("crop2d", x3.clone(), prim(|v| v.crop2d(1, 2, 3, 4))),
        ("pad_reflect", x3.clone(), prim(|v| Ok(v.pad_reflect((4, 4))?.0))),
        ("crop", x3.clone(), prim(|v| {
            let (p, rec) = v.pad_reflect((3, 4))?;
            p.scale(2.0)?.crop(&rec)
        })),
        ("cyclic_shift", x3.clone(), prim(|v| v.cyclic_shift(2, -1))),
        ("grid_partition", vec![4, 6, 2], prim(|v| v.grid_partition((2, 3)))),
        ("grid_merge", vec![4, 6, 2], prim(|v| v.grid_merge((2, 3), (4, 6)))),
        ("pixel_shuffle", vec![8, 3, 4], prim(|v| v.pixel_shuffle(2))),
        ("conv2d_input_zero", x3.clone(), prim(|v| v.conv2d(constant(v, vec![3, 2, 3, 3], 5), Some(constant(v, vec![3], 6)), Padding::Zero))),
        ("conv2d_input_valid", x3.clone(), prim(|v| v.conv2d(constant(v, vec![3, 2, 3, 3], 5), None, Padding::Valid))),
        ("conv2d_input_reflect", x3.clone(), prim(|v| v.conv2d(constant(v, vec![3, 2, 3, 3], 5), None, Padding::Reflect))),
        ("conv2d_kernel", vec![3, 2, 3, 3], prim(|v| constant(v, vec![2, 5, 6], 7).conv2d(v, None, Padding::Zero))),
        ("conv2d_bias", vec![3], prim(|v| {
            constant(v, vec![2, 5, 6], 7).conv2d(constant(v, vec![3, 2, 1, 1], 8), Some(v), Padding::Zero)
        })),
        ("depthwise_input", x3.clone(), prim(|v| v.depthwise_conv2d(constant(v, vec![2, 3, 3], 9), Padding::Zero))),
        ("depthwise_kernel", vec![2, 3, 3], prim(|v| constant(v, vec![2, 5, 6], 9).depthwise_conv2d(v, Padding::Zero))),
        ("global_avg_pool", x3.clone(), prim(|v| v.global_avg_pool())),
        ("layer_norm_input", vec![4, 3, 5], prim(|v| v.layer_norm(0, constant(v, vec![4], 10), constant(v, vec![4], 11), 1e-5))),
        ("layer_norm_axis2", x3.clone(), prim(|v| v.layer_norm(2, constant(v, vec![6], 10), constant(v, vec![6], 11), 1e-5))),
        ("layer_norm_gamma", vec![6], prim(|v| constant(v, vec![2, 5, 6], 12).layer_norm(2, v, constant(v, vec![6], 11), 1e-5))),
        ("layer_norm_beta", vec![6], prim(|v| constant(v, vec![2, 5, 6], 12).layer_norm(2, constant(v, vec![6], 10), v, 1e-5))),
        ("softmax_rows", x3.clone(), prim(|v| v.softmax_rows())),
        ("matmul_left", vec![2, 3, 4], prim(|v| v.matmul(constant(v, vec![2, 4, 5], 13)))),
        ("matmul_right", vec![2, 4, 5], prim(|v| constant(v, vec![2, 3, 4], 13).matmul(v))),
        ("dense_input", x3.clone(), prim(|v| v.dense(1, constant(v, vec![3, 5], 14), Some(constant(v, vec![3], 15))))),
        ("dense_weights", vec![3, 5], prim(|v| constant(v, vec![2, 5, 6], 16).dense(1, v, None))),
        ("dense_bias", vec![4], prim(|v| constant(v, vec![2, 5, 6], 16).dense(2, constant(v, vec![4, 6], 17), Some(v)))),
    ]
}

/// `sum(f(x) * r)` for a fixed pattern `r`, so every output element carries
/// a distinct weight.
fn weighted_readout<'t>(y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let r = y.tape().constant(pattern(y.shape(), 99));
    y.mul(r)?.sum()
}

fn grad_check_prim(f: &Prim, shape: &[usize]) -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(shape.to_vec(), &mut rng);
        worst = worst.max(finite_diff_check(|v| weighted_readout(f(v)?), &x, FD_EPS)?);
    }
    Ok((worst < GRAD_TOL, format!("max rel err {worst:.2e} over {GRAD_SEEDS} seeds")))
}

fn tiny_grad_config() -> ModelConfig {
    ModelConfig::tiny(6, 1, 2)
}

/// Input gradient of the tiny model on an 8x8 input.
fn grad_check_network_input() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_SEEDS {
        let model = EstnWeights::<f64>::build(&tiny_grad_config(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = Tensor::from_fn(vec![3, 8, 8], |_| rng.gen_range(0.0..1.0));
        let err = finite_diff_check(
            |v| {
                let p = model.params.bind(v.tape(), false);
                weighted_readout(model.forward(&p, v)?)
            },
            &x,
            FD_EPS,
        )?;
        worst = worst.max(err);
    }
    Ok((worst < GRAD_TOL, format!("max rel err {worst:.2e} over {GRAD_SEEDS} seeds")))
}

/// Parameter gradients of the tiny model, one random element per tensor.
fn grad_check_network_params() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..GRAD_SEEDS {
        let model = EstnWeights::<f64>::build(&tiny_grad_config(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let x = Tensor::from_fn(vec![3, 8, 8], |_| rng.gen_range(0.0..1.0));
        let eval = |store: &ParamStore<f64>| -> Result<f64> {
            let tape = Tape::new();
            let p = store.bind(&tape, false);
            Ok(weighted_readout(model.layout.forward(&p, tape.constant(x.clone()))?)?.value().item())
        };
        let tape = Tape::new();
        let p = model.params.bind(&tape, true);
        let out = weighted_readout(model.forward(&p, tape.constant(x.clone()))?)?;
        tape.backward(out)?;
        let grads = p.grads();
        for (k, id) in model.params.ids().enumerate() {
            let i = rng.gen_range(0..model.params.get(id).len());
            let mut plus = model.params.clone();
            plus.get_mut(id).data_mut()[i] += PARAM_FD_EPS;
            let mut minus = model.params.clone();
            minus.get_mut(id).data_mut()[i] -= PARAM_FD_EPS;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * PARAM_FD_EPS);
            let a = grads[k].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(PARAM_GRAD_FLOOR));
            checked += 1;
        }
    }
    Ok((worst < GRAD_TOL, format!("max rel err {worst:.2e} over {checked} parameter entries")))
}

fn inverse_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..INVERSE_SHAPES {
        let (wh, ww) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let (h, w, c) = (wh * rng.gen_range(1..5), ww * rng.gen_range(1..5), rng.gen_range(1..5));
        let x = random(vec![h, w, c], &mut rng);
        let tape = Tape::new();
        let y = tape.constant(x.clone()).grid_partition((wh, ww))?.grid_merge((wh, ww), (h, w))?.value();
        if !y.bit_eq(&x) {
            return Ok((false, format!("mismatch at {h}x{w}x{c}, window {wh}x{ww}")));
        }
    }
    Ok((true, format!("{INVERSE_SHAPES} shapes")))
}

fn inverse_pad_crop() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..INVERSE_SHAPES {
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(2..12), rng.gen_range(2..12));
        let m = (rng.gen_range(1..9), rng.gen_range(1..9));
        let x = random(vec![c, h, w], &mut rng);
        let tape = Tape::new();
        let (p, rec) = tape.constant(x.clone()).pad_reflect(m)?;
        let ps = p.shape();
        if ps[1] % m.0 != 0 || ps[2] % m.1 != 0 || !p.crop(&rec)?.value().bit_eq(&x) {
            return Ok((false, format!("{c}x{h}x{w} to multiple {m:?}")));
        }
    }
    Ok((true, format!("{INVERSE_SHAPES} shapes")))
}

fn inverse_shift() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..INVERSE_SHAPES {
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(1..10), rng.gen_range(1..10));
        let (dy, dx) = (rng.gen_range(-12..13), rng.gen_range(-12..13));
        let x = random(vec![c, h, w], &mut rng);
        let tape = Tape::new();
        let y = tape.constant(x.clone()).cyclic_shift(dy, dx)?.cyclic_shift(-dy, -dx)?.value();
        if !y.bit_eq(&x) {
            return Ok((false, format!("{c}x{h}x{w} shift ({dy},{dx})")));
        }
    }
    Ok((true, format!("{INVERSE_SHAPES} shapes")))
}

fn inverse_pixel_shuffle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..INVERSE_SHAPES {
        let (c, a) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let x = Tensor::from_fn(vec![c * a * a, h, w], |i| i as f64);
        let tape = Tape::new();
        let y = tape.constant(x.clone()).pixel_shuffle(a)?.value();
        let mut seen: Vec<f64> = y.data().to_vec();
        seen.sort_by(f64::total_cmp);
        let mut ok = seen == x.data() && y.shape() == [c, a * h, a * w];
        let (ch, yy, xx) = (rng.gen_range(0..c), rng.gen_range(0..h), rng.gen_range(0..w));
        let (dy, dx) = (rng.gen_range(0..a), rng.gen_range(0..a));
        ok &= y.at(&[ch, a * yy + dy, a * xx + dx]) == x.at(&[ch * a * a + dy * a + dx, yy, xx]);
        if !ok {
            return Ok((false, format!("{}x{h}x{w} at scale {a}", c * a * a)));
        }
    }
    Ok((true, format!("{INVERSE_SHAPES} shapes")))
}

/// Max abs difference relative to the largest oracle magnitude.
fn relative_gap(got: &Tensor<f64>, want: &Tensor<f64>) -> f64 {
    if got.shape() != want.shape() {
        return f64::INFINITY;
    }
    let peak = want.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.max_abs_diff(want) / peak
}

fn oracle_outcome(worst: f64, cases: usize) -> Outcome {
    Ok((worst < ORACLE_TOL, format!("max rel gap {worst:.2e} over {cases} cases")))
}

/// Attention toy cases: channel count, windows, spatial sizes (some not
/// multiples of the windows).
fn attention_cases() -> Vec<(usize, Vec<(usize, usize)>, (usize, usize))> {
    vec![
        (2, vec![(2, 2)], (4, 4)),
        (4, vec![(2, 2), (4, 4)], (5, 7)),
        (6, vec![(2, 2), (3, 3), (4, 4)], (9, 6)),
        (3, vec![(3, 2)], (7, 5)),
    ]
}

fn attention_oracle(shifted: bool, share: bool) -> Outcome {
    let mut worst: f64 = 0.0;
    let cases = attention_cases();
    for (seed, (c, windows, (h, w))) in cases.iter().enumerate() {
        let mut store = ParamStore::<f64>::new();
        let (plain, sw) = {
            let mut b = ParamBuilder::new(&mut store, seed as u64, Init::FanIn);
            let plain = b.scope("w", |b| Mssa::build(b, *c, windows, true));
            let sw = b.scope("sw", |b| Mssa::build(b, *c, windows, !share));
            (plain, sw)
        };
        let x = pattern(vec![*c, *h, *w], seed + 20).map(|v| v * 3.0);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let mut cache = AttentionCache::new(windows.len());
        let y_plain = plain.forward(&p, tape.constant(x.clone()), &mut cache)?.value();
        let (ref_plain, probs) = reference::mssa(&store, &plain, &Map::from_tensor(&x));
        let (got, want) = if shifted {
            let y = sw.forward_shifted(&p, tape.constant(x.clone()), &cache, share)?.value();
            let shared = share.then_some(&probs[..]);
            (y, reference::sw_mssa(&store, &sw, &Map::from_tensor(&x), shared).to_tensor())
        } else {
            (y_plain, ref_plain.to_tensor())
        };
        worst = worst.max(relative_gap(&got, &want));
    }
    oracle_outcome(worst, cases.len())
}

fn attention_rows_sum_to_one() -> Outcome {
    let mut store = ParamStore::<f64>::new();
    let m = Mssa::build(&mut ParamBuilder::new(&mut store, 3, Init::FanIn), 4, &[(2, 2), (4, 4)], true);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let mut cache = AttentionCache::new(2);
    m.forward(&p, tape.constant(pattern(vec![4, 6, 5], 30)), &mut cache)?;
    let mut worst: f64 = 0.0;
    for s in 0..2 {
        let probs = cache.get(s).expect("filled by forward").probs.value();
        let n = *probs.shape().last().unwrap();
        for row in probs.data().chunks(n) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok((worst < 1e-12, format!("max |row sum - 1| {worst:.2e}")))
}

fn estm_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for share in [true, false] {
        for bsgm in [true, false] {
            for (h, w) in [(8, 8), (7, 10)] {
                let mut cfg = ModelConfig::tiny(6, 1, 1);
                cfg.share_scores = share;
                cfg.bsgm_enabled = bsgm;
                let mut store = ParamStore::<f64>::new();
                let m = Estm::build(&mut ParamBuilder::new(&mut store, cases as u64, Init::FanIn), &cfg);
                let x = pattern(vec![6, h, w], cases + 40);
                let tape = Tape::new();
                let p = store.bind(&tape, false);
                let got = m.forward(&p, tape.constant(x.clone()))?.value();
                let want = reference::estm(&store, &m, &Map::from_tensor(&x)).to_tensor();
                worst = worst.max(relative_gap(&got, &want));
                cases += 1;
            }
        }
    }
    oracle_outcome(worst, cases)
}

fn network_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let sizes = [(6, 7), (8, 8)];
    for (i, &(h, w)) in sizes.iter().enumerate() {
        let model = EstnWeights::<f64>::build(&ModelConfig::tiny(6, 2, 2), i as u64)?;
        let lr = pattern(vec![3, h, w], 50 + i).map(|v| v + 0.5);
        let got = model.infer(&lr)?;
        worst = worst.max(relative_gap(&got, &reference::network(&model, &lr)));
    }
    oracle_outcome(worst, sizes.len())
}

fn residual_local_stage() -> Outcome {
    let mut store = ParamStore::<f32>::new();
    let m = LocalStage::build(&mut ParamBuilder::new(&mut store, 0, Init::Zeros), 12);
    let x = Tensor::from_fn(vec![12, 7, 9], |i| (i as f32 * 0.61).sin() * 4.0);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let ok = m.forward(&p, tape.constant(x.clone()))?.value().bit_eq(&x);
    Ok((ok, "zero weights, 12x7x9".into()))
}

fn residual_lrcab() -> Outcome {
    for variant in LrcabVariant::ALL {
        let mut store = ParamStore::<f32>::new();
        let m = Lrcab::build(&mut ParamBuilder::new(&mut store, 0, Init::Zeros), 12, 2, variant);
        let x = Tensor::from_fn(vec![12, 7, 9], |i| (i as f32 * 0.61).cos() * 4.0);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        if !m.forward(&p, tape.constant(x.clone()))?.value().bit_eq(&x) {
            return Ok((false, format!("variant {variant}")));
        }
    }
    Ok((true, "zero weights, all variants".into()))
}

fn gray(v: f64) -> Tensor<f64> {
    Tensor::full(vec![3, 16, 16], v)
}

fn metrics_psnr() -> Outcome {
    let full = psnr(&gray(0.0), &gray(255.0), 0)?;
    let one = psnr(&gray(100.0), &gray(101.0), 0)?;
    let expect_one = 20.0 * 255f64.log10();
    let ok = full.abs() < 1e-3 && (one - expect_one).abs() < 1e-3 && (one - 48.13).abs() < 5e-3;
    Ok((ok, format!("uniform 255: {full:.6} dB, uniform 1: {one:.6} dB")))
}

fn metrics_ssim() -> Outcome {
    let x = pattern(vec![3, 24, 20], 60).map(|v| (v + 0.5) * 255.0);
    let y = pattern(vec![3, 24, 20], 61).map(|v| (v + 0.5) * 255.0);
    let mut ok = true;
    for mode in [SsimMode::Global, SsimMode::Windowed] {
        ok &= ssim(&x, &x, 0, mode)? == 1.0;
        ok &= ssim(&x, &y, 0, mode)? == ssim(&y, &x, 0, mode)?;
    }
    Ok((ok, "identity exact, symmetric, both modes".into()))
}

fn lam_identity() -> Outcome {
    let lr = pattern(vec![3, 8, 8], 70).map(|v| v + 0.5).cast::<f32>();
    let map = lam_with(
        &|x: Var<'_, f64>| x.mul(x),
        &lr,
        Region { x: 2, y: 3, w: 3, h: 2 },
        50,
        1.5,
    )?;
    let r = map.completeness_residual();
    Ok((r < 1e-3, format!("completeness residual {r:.2e} on a squaring map")))
}

fn catalogue() -> Vec<Check> {
    let mut checks: Vec<Check> = Vec::new();
    let mut add = |name: &str, run: Box<dyn Fn() -> Outcome + Send + Sync>| {
        checks.push(Check { name: name.to_string(), run })
    };
    for (name, shape, f) in primitives() {
        add(&format!("grad.{name}"), Box::new(move || grad_check_prim(&f, &shape)));
    }
    add("grad.network_input", Box::new(grad_check_network_input));
    add("grad.network_params", Box::new(grad_check_network_params));
    add("inverse.grid", Box::new(inverse_grid));
    add("inverse.pad_crop", Box::new(inverse_pad_crop));
    add("inverse.cyclic_shift", Box::new(inverse_shift));
    add("inverse.pixel_shuffle", Box::new(inverse_pixel_shuffle));
    add("attention.w_mssa_oracle", Box::new(|| attention_oracle(false, false)));
    add("attention.sw_mssa_oracle", Box::new(|| attention_oracle(true, false)));
    add("attention.sw_mssa_shared_oracle", Box::new(|| attention_oracle(true, true)));
    add("attention.rows_sum_to_one", Box::new(attention_rows_sum_to_one));
    add("oracle.estm", Box::new(estm_oracle));
    add("oracle.network", Box::new(network_oracle));
    add("residual.local_stage", Box::new(residual_local_stage));
    add("residual.lrcab", Box::new(residual_lrcab));
    add("metrics.psnr_closed_form", Box::new(metrics_psnr));
    add("metrics.ssim_identity_symmetry", Box::new(metrics_ssim));
    add("lam.completeness", Box::new(lam_identity));
    checks
}

/// Names of every check, in run order.
pub fn check_names() -> Vec<String> {
    catalogue().into_iter().map(|c| c.name).collect()
}

/// Runs every check whose name contains `filter` (all when `None`).
pub fn run_checks(filter: Option<&str>) -> Vec<CheckResult> {
    let selected: Vec<Check> = catalogue()
        .into_iter()
        .filter(|c| filter.map_or(true, |f| c.name.contains(f)))
        .collect();
    selected
        .par_iter()
        .map(|c| {
            let (passed, detail) = match (c.run)() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult { name: c.name.clone(), passed, detail }
        })
        .collect()
}
