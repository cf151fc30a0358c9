use cfmw_core::ssm::{
    apply_kernel, discretize, kernel, scan, scan_counted, selective_scan, selective_scan_backward,
    selective_scan_counted, ss2d, ContinuousSsm, DiscreteSsm, SelectiveSsmParams, Ss2dParams,
};
use cfmw_core::{SeededRng, Tensor};
use proptest::prelude::*;

fn random_discrete(rng: &mut SeededRng, n: usize) -> DiscreteSsm {
    let m = ContinuousSsm::random(n, rng).unwrap();
    discretize(&m, 0.01 + rng.uniform()).unwrap()
}

/// Direct evaluation of the convolution sum with explicit powers.
fn naive_kernel_output(m: &DiscreteSsm, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            (0..=t)
                .map(|j| {
                    let tap: f64 = (0..m.state_size()).map(|i| m.c()[i] * m.a_bar()[i].powi(j as i32) * m.b_bar()[i]).sum();
                    tap * x[t - j]
                })
                .sum()
        })
        .collect()
}

#[test]
fn scan_matches_kernel_convolution() {
    let mut rng = SeededRng::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = 1 + rng.below(8) as usize;
        let l = 1 + rng.below(64) as usize;
        let m = random_discrete(&mut rng, n);
        let x: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let y = scan(&m, &x).unwrap();
        let yk = apply_kernel(&x, &kernel(&m, l).unwrap()).unwrap();
        for (a, b) in y.iter().zip(&yk) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-10, "max deviation {worst}");
}

#[test]
fn kernel_matches_explicit_powers() {
    let mut rng = SeededRng::new(7);
    for _ in 0..20 {
        let m = random_discrete(&mut rng, 4);
        let x: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let expect = naive_kernel_output(&m, &x);
        let got = apply_kernel(&x, &kernel(&m, 16).unwrap()).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zoh_first_order_limit() {
    let mut rng = SeededRng::new(11);
    for _ in 0..100 {
        let m = ContinuousSsm::random(1 + rng.below(8) as usize, &mut rng).unwrap();
        for delta in [1e-3, 1e-4, 1e-5] {
            let d = discretize(&m, delta).unwrap();
            for i in 0..m.state_size() {
                let (a, b) = (m.a()[i], m.b()[i]);
                let da = delta * a;
                assert!((d.a_bar()[i] - (1.0 + da)).abs() <= 2.0 * da * da);
                assert!((d.b_bar()[i] - delta * b).abs() <= (da * delta * b).abs());
            }
        }
    }
}

#[test]
fn scan_op_count_is_exact() {
    let mut rng = SeededRng::new(3);
    let m = random_discrete(&mut rng, 5);
    let (_, macs) = scan_counted(&m, &[1.0; 17]).unwrap();
    assert_eq!(macs, 3 * 17 * 5);
    let p = SelectiveSsmParams::random(3, 4, &mut rng).unwrap();
    let (_, macs) = selective_scan_counted(&Tensor::zeros(&[9, 3]).unwrap(), &p).unwrap();
    assert_eq!(macs, 9 * (3 * 3 + 7 * 4 * 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scan_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, l in 1usize..40) {
        let mut rng = SeededRng::new(seed);
        let m = random_discrete(&mut rng, 4);
        let x1: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let x2: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + beta * b).collect();
        let (y1, y2, y) = (scan(&m, &x1).unwrap(), scan(&m, &x2).unwrap(), scan(&m, &mix).unwrap());
        for t in 0..l {
            prop_assert!((y[t] - (alpha * y1[t] + beta * y2[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_is_causal(seed in any::<u64>(), l in 2usize..40, bump in -5.0f64..5.0) {
        let mut rng = SeededRng::new(seed);
        let m = random_discrete(&mut rng, 3);
        let x: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let t = 1 + rng.below(l as u64 - 1) as usize;
        let mut x2 = x.clone();
        x2[t] += bump;
        let (y, y2) = (scan(&m, &x).unwrap(), scan(&m, &x2).unwrap());
        prop_assert_eq!(&y[..t], &y2[..t]);
    }

    #[test]
    fn selective_scan_is_causal(seed in any::<u64>(), l in 2usize..12) {
        let mut rng = SeededRng::new(seed);
        let p = SelectiveSsmParams::random(2, 3, &mut rng).unwrap();
        let x = Tensor::randn(&[l, 2], &mut rng).unwrap();
        let t = 1 + rng.below(l as u64 - 1) as usize;
        let mut raw = x.data().to_vec();
        raw[t * 2] += 1.0;
        let y = selective_scan(&x, &p).unwrap();
        let y2 = selective_scan(&Tensor::new(vec![l, 2], raw).unwrap(), &p).unwrap();
        prop_assert_eq!(&y.data()[..t * 2], &y2.data()[..t * 2]);
    }
}

#[test]
fn frozen_selective_reduces_to_scan() {
    let mut rng = SeededRng::new(99);
    for _ in 0..50 {
        let n = 1 + rng.below(6) as usize;
        let d = 1 + rng.below(3) as usize;
        let l = 1 + rng.below(32) as usize;
        let m = ContinuousSsm::random(n, &mut rng).unwrap();
        let z = rng.normal();
        let delta = if z > 30.0 { z } else { z.exp().ln_1p() };
        let dm = discretize(&m, delta).unwrap();
        let p = SelectiveSsmParams::frozen(d, m.a(), m.b(), m.c(), z).unwrap();
        let x = Tensor::randn(&[l, d], &mut rng).unwrap();
        let y = selective_scan(&x, &p).unwrap();
        for ch in 0..d {
            let col: Vec<f64> = (0..l).map(|t| x.at(&[t, ch])).collect();
            let ys = scan(&dm, &col).unwrap();
            for t in 0..l {
                assert!((y.at(&[t, ch]) - ys[t]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn selective_gradient_matches_finite_differences() {
    let mut rng = SeededRng::new(5);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let n = 1 + rng.below(4) as usize;
        let d = 1 + rng.below(2) as usize;
        let l = 1 + rng.below(8) as usize;
        let p = SelectiveSsmParams::random(d, n, &mut rng).unwrap();
        let x = Tensor::randn(&[l, d], &mut rng).unwrap();
        let grad = selective_scan_backward(&x, &p, &Tensor::full(&[l, d], 1.0).unwrap()).unwrap();
        let f = |v: &[f64]| selective_scan(&Tensor::new(vec![l, d], v.to_vec()).unwrap(), &p).unwrap().sum();
        let h = 1e-5;
        for k in 0..l * d {
            let mut up = x.data().to_vec();
            let mut dn = x.data().to_vec();
            up[k] += h;
            dn[k] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let rel = (grad.data()[k] - fd).abs() / fd.abs().max(grad.data()[k].abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn ss2d_transpose_symmetry() {
    let mut rng = SeededRng::new(13);
    let p = Ss2dParams::random(2, 3, &mut rng).unwrap();
    let f = Tensor::from_fn(&[3, 3, 2], |k| 0.1 * k as f64 - 0.7).unwrap();
    let y = ss2d(&f, &p).unwrap();
    let transpose = |t: &Tensor| {
        let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        Tensor::from_fn(&[w, h, c], |k| {
            let (j, i, ch) = (k / (h * c), (k / c) % h, k % c);
            t.at(&[i, j, ch])
        })
        .unwrap()
    };
    let yt = ss2d(&transpose(&f), &p.transposed()).unwrap();
    assert!(yt.max_abs_diff(&transpose(&y)).unwrap() < 1e-12);

    let rect = Tensor::randn(&[2, 4, 2], &mut rng).unwrap();
    let yr = ss2d(&transpose(&rect), &p.transposed()).unwrap();
    assert!(yr.max_abs_diff(&transpose(&ss2d(&rect, &p).unwrap())).unwrap() < 1e-12);
}
