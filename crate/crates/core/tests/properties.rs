use estn::attribution::Region;
use estn::config::ModelConfig;
use estn::imaging::{bicubic_resize, gaussian_blur};
use estn::metrics::{psnr, rgb_to_y, ssim, SsimMode};
use estn::tensor::{Padding, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, move |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_round_trip(wh in 1usize..5, ww in 1usize..5, nh in 1usize..4, nw in 1usize..4, c in 1usize..4, seed: u64) {
        let (h, w) = (wh * nh, ww * nw);
        let x = tensor(vec![h, w, c], seed);
        let tape = Tape::new();
        let parts = tape.constant(x.clone()).grid_partition((wh, ww)).unwrap();
        prop_assert_eq!(parts.shape(), vec![nh * nw, wh * ww, c]);
        prop_assert!(parts.grid_merge((wh, ww), (h, w)).unwrap().value().bit_eq(&x));
    }

    #[test]
    fn reflect_pad_then_crop(h in 2usize..12, w in 2usize..12, mh in 1usize..9, mw in 1usize..9, seed: u64) {
        let x = tensor(vec![2, h, w], seed);
        let tape = Tape::new();
        let (p, rec) = tape.constant(x.clone()).pad_reflect((mh, mw)).unwrap();
        let s = p.shape();
        prop_assert_eq!(s[1] % mh, 0);
        prop_assert_eq!(s[2] % mw, 0);
        prop_assert!(s[1] < h + mh && s[2] < w + mw);
        prop_assert!(p.crop(&rec).unwrap().value().bit_eq(&x));
    }

    #[test]
    fn cyclic_shift_inverse(h in 1usize..9, w in 1usize..9, dy in -20isize..20, dx in -20isize..20, seed: u64) {
        let x = tensor(vec![3, h, w], seed);
        let tape = Tape::new();
        let y = tape.constant(x.clone()).cyclic_shift(dy, dx).unwrap();
        let back = y.cyclic_shift(-dy, -dx).unwrap().value();
        prop_assert!(back.bit_eq(&x));
        let yv = y.value();
        let (sy, sx) = ((0 - dy).rem_euclid(h as isize) as usize, (0 - dx).rem_euclid(w as isize) as usize);
        prop_assert_eq!(yv.at(&[1, 0, 0]), x.at(&[1, sy, sx]));
    }

    #[test]
    fn pixel_shuffle_is_permutation(c in 1usize..4, a in 1usize..5, h in 1usize..6, w in 1usize..6) {
        let x = Tensor::from_fn(vec![c * a * a, h, w], |i| i as f64);
        let tape = Tape::new();
        let y = tape.constant(x.clone()).pixel_shuffle(a).unwrap().value();
        let mut v = y.data().to_vec();
        v.sort_by(f64::total_cmp);
        prop_assert_eq!(&v[..], x.data());
    }

    #[test]
    fn reflect_pad2d_mirrors(h in 3usize..8, w in 3usize..8, seed: u64) {
        let x = tensor(vec![1, h, w], seed);
        let tape = Tape::new();
        let y = tape.constant(x.clone()).pad2d([1, 1, 1, 1], Padding::Reflect).unwrap().value();
        prop_assert_eq!(y.at(&[0, 0, 1]), x.at(&[0, 1, 0]));
        prop_assert_eq!(y.at(&[0, h + 1, w]), x.at(&[0, h - 2, w - 1]));
    }

    #[test]
    fn luma_is_linear(alpha in 0.0f64..3.0, seed: u64) {
        let x = tensor(vec![3, 4, 5], seed);
        let a = rgb_to_y(&x.map(|v| v * alpha)).unwrap();
        let b = rgb_to_y(&x).unwrap().map(|v| v * alpha);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn ssim_symmetric_and_bounded(seed_a: u64, seed_b: u64) {
        let x = tensor(vec![3, 16, 14], seed_a).map(|v| (v + 0.5) * 255.0);
        let y = tensor(vec![3, 16, 14], seed_b).map(|v| (v + 0.5) * 255.0);
        for mode in [SsimMode::Global, SsimMode::Windowed] {
            let s = ssim(&x, &y, 1, mode).unwrap();
            prop_assert_eq!(s, ssim(&y, &x, 1, mode).unwrap());
            prop_assert!(s <= 1.0 + 1e-12 && s >= -1.0 - 1e-12);
            prop_assert_eq!(ssim(&x, &x, 1, mode).unwrap(), 1.0);
        }
    }

    #[test]
    fn psnr_drops_with_noise(seed: u64, a in 0.5f64..10.0, extra in 0.5f64..10.0) {
        let x = tensor(vec![3, 10, 10], seed).map(|v| (v + 0.5) * 200.0 + 20.0);
        let noise = tensor(vec![3, 10, 10], seed ^ 0xabcdef);
        let noisy = |amp: f64| Tensor::new(
            vec![3, 10, 10],
            x.data().iter().zip(noise.data()).map(|(v, n)| v + amp * n).collect(),
        ).unwrap();
        let p1 = psnr(&noisy(a), &x, 0).unwrap();
        let p2 = psnr(&noisy(a + extra), &x, 0).unwrap();
        prop_assert!(p2 < p1);
    }

    #[test]
    fn config_text_round_trip(c_mul in 1usize..6, blocks in 1usize..5, scale in 1usize..5, share: bool, bsgm: bool) {
        let mut cfg = ModelConfig::tiny(6 * c_mul, blocks, scale);
        cfg.share_scores = share;
        cfg.bsgm_enabled = bsgm;
        prop_assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn region_round_trip(x in 0usize..500, y in 0usize..500, w in 1usize..500, h in 1usize..500) {
        let r = Region { x, y, w, h };
        prop_assert_eq!(r.to_string().parse::<Region>().unwrap(), r);
    }

    #[test]
    fn resampling_preserves_constants(h in 4usize..12, w in 4usize..12, v in 0.0f32..1.0, s in 1usize..5) {
        let img = Tensor::full(vec![3, h, w], v);
        for out in [bicubic_resize(&img, s as f64).unwrap(), bicubic_resize(&img, 1.0 / s as f64).unwrap(), gaussian_blur(&img, 1.3).unwrap()] {
            prop_assert!(out.data().iter().all(|&o| (o - v).abs() < 1e-5));
        }
    }
}
