use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, SQRT_2};

use qpm_oracle::{dense_fft_spectrum, trapezoid_fourier, uniform_grating_amplitude, werner_correlation};

// 40 periods of 10 µm at 50 % duty: walls every 5 µm, on FFT cell edges.
fn walls() -> Vec<f64> {
    (0..80).map(|j| 5.0 * j as f64).collect()
}

#[test]
fn three_grating_transforms_agree() {
    let b = walls();
    let fft = dense_fft_spectrum(&b, 1.0, 400.0, 0.05, 1.5);
    for (&k, &g) in fft.k.iter().zip(&fft.amplitude).skip(1) {
        let closed = uniform_grating_amplitude(10.0, 0.5, 40, k);
        let trap = trapezoid_fourier(&b, 1.0, 400.0, k, 0.01);
        assert!((g - closed).norm() < 1e-9, "K = {k}: fft {g} vs closed {closed}");
        assert!((trap - closed).norm() < 1e-5, "K = {k}: trapezoid {trap} vs closed {closed}");
    }
}

#[test]
fn first_order_peak_has_the_square_wave_amplitude() {
    let k = 2.0 * std::f64::consts::PI / 10.0;
    let g = uniform_grating_amplitude(10.0, 0.5, 40, k);
    assert!((g.norm() - 2.0 / std::f64::consts::PI).abs() < 1e-12);
}

#[test]
fn pure_state_reaches_the_tsirelson_bound() {
    let (a, b) = ([FRAC_PI_4, 0.0], [3.0 * FRAC_PI_8, FRAC_PI_8]);
    let e = |i: usize, j: usize| werner_correlation(1.0, 0.0, a[i], b[j]);
    let s = e(0, 0) + e(0, 1) + e(1, 0) - e(1, 1);
    assert!((s.abs() - 2.0 * SQRT_2).abs() < 1e-12, "S = {s}");
}
