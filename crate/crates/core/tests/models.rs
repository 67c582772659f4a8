use estn::attribution::{lam, lam_with, render_heatmap, Region};
use estn::blocks::{AttentionCache, Bsgm, LrcabVariant, Mssa};
use estn::check::run_checks;
use estn::config::ModelConfig;
use estn::network::{estimate_flops, param_breakdown, EstnWeights};
use estn::params::{Init, ParamBuilder, ParamStore};
use estn::reference;
use estn::tensor::{Tape, Tensor, Var};

fn image(h: usize, w: usize, salt: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![3, h, w], |i| (((i + salt) * 2654435761) % 1000) as f64 / 1000.0)
}

fn rel_gap(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let peak = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.max_abs_diff(b) / peak
}

#[test]
fn builtin_oracle_checks_pass() {
    for r in run_checks(Some("oracle")) {
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn network_matches_loop_oracle_across_ablations() {
    let mut seed = 0;
    for variant in LrcabVariant::ALL {
        for (share, bsgm) in [(true, true), (false, false)] {
            let mut cfg = ModelConfig::tiny(6, 2, 3);
            cfg.lrcab_variant = variant;
            cfg.share_scores = share;
            cfg.bsgm_enabled = bsgm;
            let model = EstnWeights::<f64>::build(&cfg, seed).unwrap();
            let lr = image(5, 9, seed as usize);
            let got = model.infer(&lr).unwrap();
            assert_eq!(got.shape(), &[3, 15, 27]);
            assert!(rel_gap(&got, &reference::network(&model, &lr)) < 1e-10, "{cfg:?}");
            seed += 1;
        }
    }
}

#[test]
fn bsgm_tiles_independently() {
    let mut store = ParamStore::<f64>::new();
    let m = Bsgm::build(&mut ParamBuilder::new(&mut store, 4, Init::FanIn), 6, (4, 4), 64);
    let x = Tensor::from_fn(vec![6, 128, 64], |i| ((i * 48271) % 1013) as f64 / 1013.0 - 0.5);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let xv = tape.constant(x);
    let whole = m.forward(&p, xv).unwrap().value();
    let top = m.forward(&p, xv.narrow(1, 0, 64).unwrap()).unwrap();
    let bottom = m.forward(&p, xv.narrow(1, 64, 64).unwrap()).unwrap();
    let joined = Var::concat(&[top, bottom], 1).unwrap().value();
    assert!(whole.max_abs_diff(&joined) < 1e-12);
}

#[test]
fn bsgm_matches_loop_oracle_with_padding() {
    let mut store = ParamStore::<f64>::new();
    let m = Bsgm::build(&mut ParamBuilder::new(&mut store, 9, Init::FanIn), 4, (2, 2), 8);
    let x = Tensor::from_fn(vec![4, 11, 6], |i| ((i * 7) % 13) as f64 * 0.1);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let got = m.forward(&p, tape.constant(x.clone())).unwrap().value();
    let want = reference::bsgm(&store, &m, &reference::Map::from_tensor(&x)).to_tensor();
    assert!(rel_gap(&got, &want) < 1e-12);
}

#[test]
fn full_window_shift_is_a_roll_with_uniform_scores() {
    // Zero query weights make every probability uniform, so attention over a
    // window covering the map returns the global mean with or without shift.
    let mut store = ParamStore::<f64>::new();
    let m = Mssa::build(&mut ParamBuilder::new(&mut store, 2, Init::FanIn), 2, &[(4, 4)], true);
    for id in [m.scales[0].q.unwrap().weight, m.scales[0].q.unwrap().bias] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let x = tape.constant(Tensor::from_fn(vec![2, 4, 4], |i| (i as f64 * 0.3).sin()));
    let mut cache = AttentionCache::new(1);
    let plain = m.forward(&p, x, &mut cache).unwrap().value();
    let shifted = m.forward_shifted(&p, x, &cache, false).unwrap().value();
    assert!(plain.max_abs_diff(&shifted) < 1e-12);
    for c in 0..2 {
        let plane = &plain.data()[c * 16..(c + 1) * 16];
        assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-12));
    }
}

#[test]
fn upsampler_delta_between_scales() {
    let mut a2 = ModelConfig::default();
    a2.scale = 2;
    let a4 = ModelConfig::default();
    let total = |c: &ModelConfig| -> usize { param_breakdown(c).iter().map(|p| p.1).sum() };
    // Tail conv C -> 3a^2 with 3x3 kernels and biases.
    let tail = |a: usize| 3 * a * a * 60 * 9 + 3 * a * a;
    assert_eq!(total(&a4) - total(&a2), tail(4) - tail(2));
    assert_eq!(tail(4) - tail(2), 19_476);
}

#[test]
fn flop_parts_are_positive_and_tail_matches_hand_count() {
    let cfg = ModelConfig::default();
    let r = estimate_flops(&cfg, (1280, 720));
    assert_eq!(r.lr_size, (320, 180));
    assert!(r.parts.iter().all(|(_, v)| *v > 0.0));
    let tail = r.parts.iter().find(|p| p.0 == "tail").unwrap().1;
    assert_eq!(tail, 2.0 * (48 * 60 * 9) as f64 * 320.0 * 180.0);
}

#[test]
fn lam_on_identity_is_masked_difference() {
    let lr = image(6, 6, 3).cast::<f32>();
    let region = Region { x: 4, y: 1, w: 1, h: 1 };
    let map = lam_with(&|x: Var<'_, f64>| Ok(x), &lr, region, 7, 1.0).unwrap();
    let nonzero: Vec<usize> = (0..36).filter(|&i| map.values.data()[i] != 0.0).collect();
    assert!(nonzero.iter().all(|&i| i == 6 + 4));
}

#[test]
fn lam_on_tiny_model_completes_and_writes() {
    let model = EstnWeights::<f64>::build(&ModelConfig::tiny(6, 1, 2), 3).unwrap();
    let lr = image(8, 8, 1).cast::<f32>();
    let region = Region { x: 4, y: 4, w: 6, h: 6 };
    let map = lam(&model, &lr, region, 50, 2.0).unwrap();
    assert!(map.completeness_residual() < 0.05, "{}", map.completeness_residual());
    let zero = lam(&model, &lr, region, 5, 0.0).unwrap();
    assert!(zero.values.data().iter().all(|&v| v == 0.0));
    assert_eq!(zero.completeness_residual(), 0.0);
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("lam.png");
    let csv = render_heatmap(&map, &png).unwrap();
    assert!(png.exists());
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(lam(&model, &lr, Region { x: 10, y: 0, w: 7, h: 1 }, 5, 2.0).is_err());
}

#[test]
fn lam_completeness_improves_with_steps() {
    let steps = [2usize, 8, 50];
    let mut mean = vec![0.0; steps.len()];
    for seed in 0..5 {
        let model = EstnWeights::<f64>::build(&ModelConfig::tiny(6, 1, 2), 100 + seed).unwrap();
        let lr = image(8, 8, seed as usize * 17).cast::<f32>();
        let region = Region { x: 2, y: 2, w: 8, h: 8 };
        for (k, &m) in steps.iter().enumerate() {
            mean[k] += lam(&model, &lr, region, m, 2.0).unwrap().completeness_residual() / 5.0;
        }
    }
    assert!(mean.windows(2).all(|w| w[1] <= w[0]), "{mean:?}");
}
