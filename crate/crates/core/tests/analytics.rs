use cgce::seeds::rng_from;
use cgce::simulation::quadrature::integrate_piecewise;
use cgce::{irwin_hall_pdf, kernel_function};
use rand::Rng;

fn moment(d: usize, k: i32) -> f64 {
    integrate_piecewise(|x| x.powi(k) * kernel_function(d, x), -12.0, 12.0, &[0.0]).unwrap()
}

#[test]
fn kernels_integrate_to_one() {
    for d in [1, 4, 9] {
        assert!((moment(d, 0) - 1.0).abs() < 1e-6, "d = {d}: {}", moment(d, 0));
    }
}

#[test]
fn higher_order_kernels_have_vanishing_moments() {
    for d in [4, 9] {
        for k in [1, 2] {
            assert!(moment(d, k).abs() < 1e-6, "d = {d}, k = {k}: {}", moment(d, k));
        }
    }
    assert!(moment(4, 4).abs() < 1e-6);
    assert!(moment(9, 4).abs() < 1e-5);
    assert!(moment(9, 6).abs() < 1e-5);
    assert!(moment(9, 8).abs() < 1e-4);
    // The first nonvanishing moments: 120 / 8 and 362880 / 384.
    assert!((moment(4, 6) - 15.0).abs() < 1e-6);
    assert!((moment(9, 10) - 945.0).abs() < 1e-4);
}

#[test]
fn irwin_hall_is_a_density() {
    for d in 1..=9u32 {
        let breaks: Vec<f64> = (1..d).map(f64::from).collect();
        let total = integrate_piecewise(|u| irwin_hall_pdf(d, u), 0.0, f64::from(d), &breaks).unwrap();
        assert!((total - 1.0).abs() < 1e-6, "d = {d}: {total}");
    }
}

#[test]
fn irwin_hall_small_cases() {
    assert_eq!(irwin_hall_pdf(1, 0.5), 1.0);
    assert!((irwin_hall_pdf(2, 0.5) - 0.5).abs() < 1e-15);
    assert!((irwin_hall_pdf(2, 1.0) - 1.0).abs() < 1e-15);
    assert_eq!(irwin_hall_pdf(3, -0.1), 0.0);
    assert_eq!(irwin_hall_pdf(3, 3.1), 0.0);
}

#[test]
fn irwin_hall_matches_histogram() {
    const DRAWS: usize = 1_000_000;
    const BINS: usize = 80;
    let d = 4u32;
    let width = f64::from(d) / BINS as f64;
    let mut counts = vec![0usize; BINS];
    let mut rng = rng_from(2024);
    for _ in 0..DRAWS {
        let u: f64 = (0..d).map(|_| rng.gen::<f64>()).sum();
        counts[((u / width) as usize).min(BINS - 1)] += 1;
    }
    let worst = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let lo = b as f64 * width;
            let exact = integrate_piecewise(|u| irwin_hall_pdf(d, u), lo, lo + width, &[1.0, 2.0, 3.0]).unwrap() / width;
            (c as f64 / (DRAWS as f64 * width) - exact).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 0.01, "sup deviation {worst}");
}

#[test]
fn irwin_hall_is_symmetric_and_stable_for_nine() {
    for u in [0.3, 1.7, 3.2, 4.4] {
        let a = irwin_hall_pdf(9, u);
        let b = irwin_hall_pdf(9, 9.0 - u);
        assert!((a - b).abs() < 1e-12 * a, "{u}: {a} vs {b}");
        assert!(a > 0.0);
    }
    // Near the upper end the naive alternating sum loses every digit.
    let tail = irwin_hall_pdf(9, 8.999);
    let exact = 0.001f64.powi(8) / 40320.0;
    assert!((tail / exact - 1.0).abs() < 1e-9, "{tail} vs {exact}");
}
