//! Periodic FFT helpers: 3-d transforms and the diagonalized 7-point Laplacian.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse 3-d transforms on an `n0 × n1 × n2` array (x fastest).
pub struct Fft3 {
    n: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(n: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = [planner.plan_fft_forward(n[0]), planner.plan_fft_forward(n[1]), planner.plan_fft_forward(n[2])];
        let inverse = [planner.plan_fft_inverse(n[0]), planner.plan_fft_inverse(n[1]), planner.plan_fft_inverse(n[2])];
        Fft3 { n, forward, inverse }
    }

    fn apply(&self, plans: &[Arc<dyn Fft<f64>>; 3], data: &mut [Complex<f64>]) {
        let [n0, n1, n2] = self.n;
        assert_eq!(data.len(), n0 * n1 * n2);
        plans[0].process(data);
        let mut line = vec![Complex::default(); n1.max(n2)];
        for k in 0..n2 {
            for i in 0..n0 {
                for j in 0..n1 {
                    line[j] = data[i + n0 * (j + n1 * k)];
                }
                plans[1].process(&mut line[..n1]);
                for j in 0..n1 {
                    data[i + n0 * (j + n1 * k)] = line[j];
                }
            }
        }
        for j in 0..n1 {
            for i in 0..n0 {
                for k in 0..n2 {
                    line[k] = data[i + n0 * (j + n1 * k)];
                }
                plans[2].process(&mut line[..n2]);
                for k in 0..n2 {
                    data[i + n0 * (j + n1 * k)] = line[k];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex<f64>]) {
        self.apply(&self.forward, data);
    }

    /// Normalized inverse.
    pub fn inverse(&self, data: &mut [Complex<f64>]) {
        self.apply(&self.inverse, data);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }
}

/// Eigenvalues of the periodic 7-point Laplacian, indexed like the grid.
pub fn laplacian_symbol(n: [usize; 3], h: f64) -> Vec<f64> {
    let axis = |m: usize| -> Vec<f64> {
        (0..m).map(|k| (2.0 * (std::f64::consts::TAU * k as f64 / m as f64).cos() - 2.0) / (h * h)).collect()
    };
    let (s0, s1, s2) = (axis(n[0]), axis(n[1]), axis(n[2]));
    let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
    for c in &s2 {
        for b in &s1 {
            for a in &s0 {
                out.push(a + b + c);
            }
        }
    }
    out
}

/// Solves `Δ_h u = rhs − mean(rhs)` on the periodic grid, returning the solution
/// whose average is `mean`.
pub fn solve_periodic_poisson(n: [usize; 3], h: f64, rhs: &[f64], mean: f64) -> Vec<f64> {
    let fft = Fft3::new(n);
    let mut data: Vec<Complex<f64>> = rhs.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut data);
    let symbol = laplacian_symbol(n, h);
    for (z, &s) in data.iter_mut().zip(&symbol) {
        *z = if s == 0.0 { Complex::default() } else { *z / s };
    }
    fft.inverse(&mut data);
    data.iter().map(|z| z.re + mean).collect()
}

/// Angular wavenumbers `2πk/L` in FFT order. The Nyquist mode of an even
/// length gets 0, so spectral derivatives of real data stay real.
pub fn wavenumbers(n: usize, period: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = if k < n.div_ceil(2) { k as isize } else { k as isize - n as isize };
            if n % 2 == 0 && k == n / 2 {
                0.0
            } else {
                std::f64::consts::TAU * s as f64 / period
            }
        })
        .collect()
}

/// A real periodic field held by its Fourier coefficients, for exact
/// trigonometric evaluation between grid nodes.
pub struct Spectrum {
    n: [usize; 3],
    period: f64,
    origin: [f64; 3],
    coeffs: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn from_values(n: [usize; 3], period: f64, origin: [f64; 3], values: &[f64]) -> Self {
        let mut coeffs: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        Fft3::new(n).forward(&mut coeffs);
        let total = coeffs.len() as f64;
        coeffs.iter_mut().for_each(|c| *c /= total);
        Spectrum { n, period, origin, coeffs }
    }

    /// Value and gradient at an arbitrary point.
    pub fn eval_with_gradient(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let ks: Vec<Vec<f64>> = (0..3).map(|a| wavenumbers(self.n[a], self.period)).collect();
        let full: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                let n = self.n[a];
                (0..n)
                    .map(|k| {
                        let s = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                        std::f64::consts::TAU * s / self.period
                    })
                    .collect()
            })
            .collect();
        let d = [x[0] - self.origin[0], x[1] - self.origin[1], x[2] - self.origin[2]];
        let phase: Vec<Vec<Complex<f64>>> =
            (0..3).map(|a| full[a].iter().map(|&k| Complex::from_polar(1.0, k * d[a])).collect()).collect();
        let mut val = 0.0;
        let mut grad = [0.0; 3];
        let [n0, n1, n2] = self.n;
        for k2 in 0..n2 {
            for k1 in 0..n1 {
                let p12 = phase[1][k1] * phase[2][k2];
                for k0 in 0..n0 {
                    let c = self.coeffs[k0 + n0 * (k1 + n1 * k2)];
                    let e = c * phase[0][k0] * p12;
                    // Nyquist modes contribute a cosine to the value; their
                    // derivative is dropped like on the grid.
                    val += e.re;
                    let kv = [ks[0][k0], ks[1][k1], ks[2][k2]];
                    for a in 0..3 {
                        grad[a] -= kv[a] * e.im;
                    }
                }
            }
        }
        (val, grad)
    }
}

fn symbol_vec(n: [usize; 3], period: f64) -> Vec<[f64; 3]> {
    let (k0, k1, k2) = (wavenumbers(n[0], period), wavenumbers(n[1], period), wavenumbers(n[2], period));
    let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
    for c in &k2 {
        for b in &k1 {
            for a in &k0 {
                out.push([*a, *b, *c]);
            }
        }
    }
    out
}

/// Solves the continuum equation `Δu = rhs − mean(rhs)` with exact Fourier
/// symbols; the result has zero mean.
pub fn solve_continuum_poisson(n: [usize; 3], period: f64, rhs: &[f64]) -> Vec<f64> {
    let fft = Fft3::new(n);
    let mut data: Vec<Complex<f64>> = rhs.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut data);
    let tau = std::f64::consts::TAU;
    let full = |m: usize, k: usize| {
        let s = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
        tau * s / period
    };
    for k2 in 0..n[2] {
        for k1 in 0..n[1] {
            for k0 in 0..n[0] {
                let i = k0 + n[0] * (k1 + n[1] * k2);
                let q = full(n[0], k0).powi(2) + full(n[1], k1).powi(2) + full(n[2], k2).powi(2);
                data[i] = if q == 0.0 { Complex::default() } else { -data[i] / q };
            }
        }
    }
    fft.inverse(&mut data);
    data.iter().map(|z| z.re).collect()
}

/// Spectral gradient of a real periodic field.
pub fn spectral_gradient(n: [usize; 3], period: f64, u: &[f64]) -> Vec<[f64; 3]> {
    let fft = Fft3::new(n);
    let mut data: Vec<Complex<f64>> = u.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut data);
    let ks = symbol_vec(n, period);
    let mut out = vec![[0.0; 3]; u.len()];
    for a in 0..3 {
        let mut d: Vec<Complex<f64>> = data.iter().zip(&ks).map(|(z, k)| z * Complex::new(0.0, k[a])).collect();
        fft.inverse(&mut d);
        for (o, z) in out.iter_mut().zip(&d) {
            o[a] = z.re;
        }
    }
    out
}

/// Coulomb-gauge vector potential: `curl a` equals the divergence-free,
/// mean-free part of `b`.
pub fn inverse_curl(n: [usize; 3], period: f64, b: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let fft = Fft3::new(n);
    let comps: Vec<Vec<Complex<f64>>> = (0..3)
        .map(|a| {
            let mut d: Vec<Complex<f64>> = b.iter().map(|v| Complex::new(v[a], 0.0)).collect();
            fft.forward(&mut d);
            d
        })
        .collect();
    let ks = symbol_vec(n, period);
    let mut out = vec![[0.0; 3]; b.len()];
    for a in 0..3 {
        let (p, q) = ((a + 1) % 3, (a + 2) % 3);
        let mut d: Vec<Complex<f64>> = (0..b.len())
            .map(|i| {
                let k = ks[i];
                let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                if k2 == 0.0 {
                    Complex::default()
                } else {
                    // (i k × b̂)_a / |k|²
                    Complex::new(0.0, 1.0) * (comps[q][i] * k[p] - comps[p][i] * k[q]) / k2
                }
            })
            .collect();
        fft.inverse(&mut d);
        for (o, z) in out.iter_mut().zip(&d) {
            o[a] = z.re;
        }
    }
    out
}

/// Applies the periodic 7-point Laplacian directly.
pub fn apply_periodic_laplacian(n: [usize; 3], h: f64, u: &[f64]) -> Vec<f64> {
    let idx = |i: usize, j: usize, k: usize| i + n[0] * (j + n[1] * k);
    let mut out = vec![0.0; u.len()];
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let c = u[idx(i, j, k)];
                let s = u[idx((i + 1) % n[0], j, k)]
                    + u[idx((i + n[0] - 1) % n[0], j, k)]
                    + u[idx(i, (j + 1) % n[1], k)]
                    + u[idx(i, (j + n[1] - 1) % n[1], k)]
                    + u[idx(i, j, (k + 1) % n[2])]
                    + u[idx(i, j, (k + n[2] - 1) % n[2])];
                out[idx(i, j, k)] = (s - 6.0 * c) / (h * h);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let n = [4, 6, 5];
        let fft = Fft3::new(n);
        let orig: Vec<Complex<f64>> = (0..120).map(|i| Complex::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut d = orig.clone();
        fft.forward(&mut d);
        fft.inverse(&mut d);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn trigonometric_evaluation_and_inverse_curl() {
        let n = [16, 16, 16];
        let l = 2.0;
        let tau = std::f64::consts::TAU;
        let f = |x: [f64; 3]| (tau * x[0] / l).sin() * (tau * 2.0 * x[2] / l).cos();
        let vals: Vec<f64> = (0..4096)
            .map(|i| f([(i % 16) as f64 * l / 16.0, ((i / 16) % 16) as f64 * l / 16.0, (i / 256) as f64 * l / 16.0]))
            .collect();
        let s = Spectrum::from_values(n, l, [0.0; 3], &vals);
        let x = [0.3, 1.1, 0.77];
        let (v, g) = s.eval_with_gradient(x);
        assert!((v - f(x)).abs() < 1e-12);
        let gx = tau / l * (tau * x[0] / l).cos() * (tau * 2.0 * x[2] / l).cos();
        assert!((g[0] - gx).abs() < 1e-11 && g[1].abs() < 1e-11);
        // b = curl of a known field (sin(2πy/L), 0, 0) → (0, 0, −(2π/L) cos(2πy/L)).
        let b: Vec<[f64; 3]> = (0..4096)
            .map(|i| {
                let y = ((i / 16) % 16) as f64 * l / 16.0;
                [0.0, 0.0, -tau / l * (tau * y / l).cos()]
            })
            .collect();
        let a = inverse_curl(n, l, &b);
        for i in 0..4096 {
            let y = ((i / 16) % 16) as f64 * l / 16.0;
            assert!((a[i][0] - (tau * y / l).sin()).abs() < 1e-12);
        }
        let lap = solve_continuum_poisson(n, l, &vals);
        assert!((lap[5] + vals[5] / (tau / l).powi(2) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_solution_satisfies_stencil() {
        let n = [8, 8, 8];
        let h = 0.25;
        let rhs: Vec<f64> = (0..512).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let avg = rhs.iter().sum::<f64>() / 512.0;
        let u = solve_periodic_poisson(n, h, &rhs, 2.0);
        let lap = apply_periodic_laplacian(n, h, &u);
        for (l, r) in lap.iter().zip(&rhs) {
            assert!((l - (r - avg)).abs() < 1e-10);
        }
        assert!((u.iter().sum::<f64>() / 512.0 - 2.0).abs() < 1e-12);
    }
}
