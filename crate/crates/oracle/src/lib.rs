//! Reference computations that share no code path with `qpm-core`.
//!
//! Every function here works on raw slices and closed-form expressions so it
//! can be used to cross-check the production implementations: dense FFTs of a
//! sampled sign function, brute-force quadrature, the Dirichlet-kernel form
//! of a uniform grating, and an explicit two-qubit density-matrix Born rule.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// sinc(x) = sin(x)/x with sinc(0) = 1.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn sign_of_domain(start_sign: f64, j: usize) -> f64 {
    if j % 2 == 0 {
        start_sign
    } else {
        -start_sign
    }
}

/// (1/L)∫ g(z) e^{-iKz} dz by the composite trapezoid rule applied domain by
/// domain, with sub-steps no larger than `max_step_um`.
pub fn trapezoid_fourier(boundaries: &[f64], start_sign: f64, length: f64, k: f64, max_step_um: f64) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for (j, &a) in boundaries.iter().enumerate() {
        let b = boundaries.get(j + 1).copied().unwrap_or(length);
        let n = ((b - a) / max_step_um).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let f = |z: f64| Complex64::from_polar(1.0, -k * z);
        let mut acc = 0.5 * (f(a) + f(b));
        for i in 1..n {
            acc += f(a + h * i as f64);
        }
        total += sign_of_domain(start_sign, j) * acc * h;
    }
    total / length
}

/// Fourier amplitude of a grating sampled on a uniform grid and transformed
/// with a dense FFT.
pub struct DenseFftSpectrum {
    /// Spatial frequency of each bin, rad/µm.
    pub k: Vec<f64>,
    /// Normalized amplitude (1/L)∫ g e^{-iKz} at each bin.
    pub amplitude: Vec<Complex64>,
    pub bin_width: f64,
}

/// Samples g(z) on cells of width `dz_um` (cell value = exact average of g
/// over the cell), FFTs the samples and applies the cell-shape factor, so the
/// result equals the integral exactly whenever all walls fall on cell edges.
///
/// Only bins with K ≤ `k_max` are returned.
pub fn dense_fft_spectrum(boundaries: &[f64], start_sign: f64, length: f64, dz_um: f64, k_max: f64) -> DenseFftSpectrum {
    let n = (length / dz_um).round() as usize;
    let dz = length / n as f64;
    let mut cells = vec![Complex64::new(0.0, 0.0); n];
    // Accumulate each domain's coverage of every cell it touches.
    for (j, &a) in boundaries.iter().enumerate() {
        let b = boundaries.get(j + 1).copied().unwrap_or(length);
        let s = sign_of_domain(start_sign, j);
        let first = ((a / dz).floor() as usize).min(n - 1);
        let last = (((b / dz).ceil() as usize).max(first + 1)).min(n);
        for (c, cell) in cells.iter_mut().enumerate().take(last).skip(first) {
            let lo = (c as f64 * dz).max(a);
            let hi = ((c + 1) as f64 * dz).min(b);
            if hi > lo {
                cell.re += s * (hi - lo) / dz;
            }
        }
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    fft.process(&mut cells);
    let bin_width = 2.0 * PI / length;
    let bins = ((k_max / bin_width).floor() as usize + 1).min(n);
    let mut k = Vec::with_capacity(bins);
    let mut amplitude = Vec::with_capacity(bins);
    for (m, value) in cells.iter().take(bins).enumerate() {
        let km = bin_width * m as f64;
        // cell c covers [c·dz, (c+1)·dz]: ∫ e^{-iKz} = dz·e^{-iK(c+½)dz}·sinc(K dz/2)
        let shape = Complex64::from_polar(dz * sinc(0.5 * km * dz), -0.5 * km * dz);
        k.push(km);
        amplitude.push(value * shape / length);
    }
    DenseFftSpectrum {
        k,
        amplitude,
        bin_width,
    }
}

/// Exact G(K) of `periods` identical periods of length `period` starting at
/// z = 0, each positive for `duty·period`, written as single-period transform
/// times the Dirichlet kernel. Total length is `periods·period`.
pub fn uniform_grating_amplitude(period: f64, duty: f64, periods: usize, k: f64) -> Complex64 {
    let length = period * periods as f64;
    if k.abs() < 1e-14 {
        return Complex64::new((2.0 * duty - 1.0) * period * periods as f64 / length, 0.0);
    }
    let i = Complex64::i();
    let w = duty * period;
    // one period: ∫₀^w e^{-iKz} − ∫_w^Λ e^{-iKz}
    let e0 = Complex64::new(1.0, 0.0);
    let ew = Complex64::from_polar(1.0, -k * w);
    let el = Complex64::from_polar(1.0, -k * period);
    let single = ((e0 - ew) - (ew - el)) / (i * k);
    let x = 0.5 * k * period;
    let n = periods as f64;
    // at x = mπ every term of Σ e^{-2ijx} is one
    let dirichlet = if x.sin().abs() < 1e-12 {
        Complex64::new(n, 0.0)
    } else {
        Complex64::from_polar((n * x).sin() / x.sin(), -(n - 1.0) * x)
    };
    single * dirichlet / length
}

/// Coincidence probability on analyzers at linear-polarization angles `a`,
/// `b` for the Werner mixture V·|ψ⟩⟨ψ| + (1−V)·I/4 with
/// |ψ⟩ = (|HV⟩ + e^{iφ}|VH⟩)/√2, computed as Tr(ρ Π) over explicit 4×4
/// matrices.
pub fn werner_coincidence(visibility: f64, phi: f64, a: f64, b: f64) -> f64 {
    // basis order |HH⟩, |HV⟩, |VH⟩, |VV⟩
    let s = 1.0 / 2f64.sqrt();
    let psi = [
        Complex64::new(0.0, 0.0),
        Complex64::new(s, 0.0),
        Complex64::from_polar(s, phi),
        Complex64::new(0.0, 0.0),
    ];
    let mut rho = [[Complex64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            rho[r][c] = visibility * psi[r] * psi[c].conj();
            if r == c {
                rho[r][c] += (1.0 - visibility) / 4.0;
            }
        }
    }
    let pa = [a.cos(), a.sin()];
    let pb = [b.cos(), b.sin()];
    let proj = [pa[0] * pb[0], pa[0] * pb[1], pa[1] * pb[0], pa[1] * pb[1]];
    let mut p = Complex64::new(0.0, 0.0);
    for r in 0..4 {
        for c in 0..4 {
            p += proj[r] * rho[r][c] * proj[c];
        }
    }
    p.re
}

/// Correlation E(a, b) from the four Werner-state PBS pairing probabilities.
pub fn werner_correlation(visibility: f64, phi: f64, a: f64, b: f64) -> f64 {
    let h = 0.5 * PI;
    werner_coincidence(visibility, phi, a, b) + werner_coincidence(visibility, phi, a + h, b + h)
        - werner_coincidence(visibility, phi, a, b + h)
        - werner_coincidence(visibility, phi, a + h, b)
}

/// Half-maximum full width of a sampled curve around its global maximum using
/// linear interpolation; `None` if a crossing lies outside the samples.
pub fn fwhm(x: &[f64], y: &[f64]) -> Option<f64> {
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    let half = 0.5 * ymax;
    let mut i = imax;
    while i > 0 && y[i - 1] >= half {
        i -= 1;
    }
    if i == 0 {
        return None;
    }
    let left = x[i - 1] + (half - y[i - 1]) / (y[i] - y[i - 1]) * (x[i] - x[i - 1]);
    let mut j = imax;
    while j + 1 < y.len() && y[j + 1] >= half {
        j += 1;
    }
    if j + 1 == y.len() {
        return None;
    }
    let right = x[j] + (half - y[j]) / (y[j + 1] - y[j]) * (x[j + 1] - x[j]);
    Some(right - left)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_wave_first_harmonic() {
        let g = uniform_grating_amplitude(10.0, 0.5, 100, 2.0 * PI / 10.0);
        assert_relative_eq!(g.norm(), 2.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn fft_matches_dirichlet_form_on_grid() {
        let period = 8.0;
        let boundaries: Vec<f64> = (0..40).map(|i| 4.0 * i as f64).collect();
        let spec = dense_fft_spectrum(&boundaries, 1.0, 160.0, 0.01, 2.0);
        for (k, a) in spec.k.iter().zip(&spec.amplitude) {
            let exact = uniform_grating_amplitude(period, 0.5, 20, *k);
            assert!((a - exact).norm() < 1e-10, "k={k}: {a} vs {exact}");
        }
    }

    #[test]
    fn trapezoid_converges() {
        let boundaries = [0.0, 3.0, 7.5];
        let coarse = trapezoid_fourier(&boundaries, 1.0, 10.0, 0.9, 0.1);
        let fine = trapezoid_fourier(&boundaries, 1.0, 10.0, 0.9, 1e-3);
        let exact = {
            let i = Complex64::i();
            let e = |z: f64| Complex64::from_polar(1.0, -0.9 * z);
            ((e(0.0) - e(3.0)) - (e(3.0) - e(7.5)) + (e(7.5) - e(10.0))) / (i * 0.9 * 10.0)
        };
        assert!((fine - exact).norm() < 1e-7);
        assert!((coarse - exact).norm() > (fine - exact).norm());
    }

    #[test]
    fn werner_state_limits() {
        assert!(werner_coincidence(1.0, 0.0, 0.0, 0.0).abs() < 1e-15);
        assert_relative_eq!(werner_coincidence(1.0, 0.0, PI / 4.0, PI / 4.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(werner_coincidence(0.0, 0.3, 0.2, 1.1), 0.25, epsilon = 1e-15);
        assert_relative_eq!(werner_correlation(1.0, 0.0, 0.0, 0.0), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn fwhm_of_triangle() {
        let x: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|&v| (1.0 - (v - 1.0).abs()).max(0.0)).collect();
        assert_relative_eq!(fwhm(&x, &y).unwrap(), 1.0, epsilon = 1e-9);
    }
}
