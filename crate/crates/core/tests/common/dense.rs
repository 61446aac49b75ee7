//! Brute-force references built from explicit Kronecker products and index
//! loops. Slow, and independent of the strided kernels they check.

#![allow(dead_code)]

use mffilter_core::kernel::InteractionKernel;
use mffilter_core::quantum::{ComplexMatrix, I};
use num_complex::Complex64;
use rand::Rng;

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (n, m) = (a.dim(), b.dim());
    let mut out = ComplexMatrix::zeros(n * m);
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[(i * m + k, j * m + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// I (x) .. op (at slot) .. (x) I with slot 0 leftmost.
pub fn embed_local(op: &ComplexMatrix, slot: usize, n: usize, d: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::identity(1);
    for s in 0..n {
        let f = if s == slot { op.clone() } else { ComplexMatrix::identity(d) };
        out = kron(&out, &f);
    }
    out
}

fn digits(mut idx: usize, n: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for s in (0..n).rev() {
        out[s] = idx % d;
        idx /= d;
    }
    out
}

/// <a| O_{first,second} |b> = O[(a_f a_s), (b_f b_s)] prod_{other} delta.
pub fn embed_pair(op: &ComplexMatrix, first: usize, second: usize, n: usize, d: usize) -> ComplexMatrix {
    let dim = d.pow(n as u32);
    let mut out = ComplexMatrix::zeros(dim);
    for r in 0..dim {
        let a = digits(r, n, d);
        for c in 0..dim {
            let b = digits(c, n, d);
            if (0..n).any(|s| s != first && s != second && a[s] != b[s]) {
                continue;
            }
            out[(r, c)] = op[(a[first] * d + a[second], b[first] * d + b[second])];
        }
    }
    out
}

fn mul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    let mut out = ComplexMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                out[(i, j)] += a[(i, k)] * b[(k, j)];
            }
        }
    }
    out
}

fn dagger(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    let mut out = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = a[(j, i)].conj();
        }
    }
    out
}

fn trace(a: &ComplexMatrix) -> Complex64 {
    (0..a.dim()).map(|i| a[(i, i)]).sum()
}

fn add_scaled(out: &mut ComplexMatrix, a: Complex64, x: &ComplexMatrix) {
    let n = out.dim();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] += a * x[(i, j)];
        }
    }
}

/// rho^j(a, b) = tr(rho (I (x) |b><a| (x) I)).
pub fn marginal(rho: &ComplexMatrix, keep: usize, n: usize, d: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(d);
    for a in 0..d {
        for b in 0..d {
            let mut e = ComplexMatrix::zeros(d);
            e[(b, a)] = Complex64::new(1.0, 0.0);
            out[(a, b)] = trace(&mul(rho, &embed_local(&e, keep, n, d)));
        }
    }
    out
}

/// Drift and diffusions of the n-particle filter with
/// H = sum_j (H_j + u_j Hhat_j) + sum_{i<j} A_ij / n.
pub fn nparticle_coefficients(
    h: &ComplexMatrix,
    hhat: &ComplexMatrix,
    l: &ComplexMatrix,
    eta: f64,
    pair: Option<&ComplexMatrix>,
    controls: &[f64],
    rho: &ComplexMatrix,
    n: usize,
) -> (ComplexMatrix, Vec<ComplexMatrix>) {
    let d = h.dim();
    let dim = rho.dim();
    let one = Complex64::new(1.0, 0.0);
    let mut total = ComplexMatrix::zeros(dim);
    for j in 0..n {
        let mut local = h.clone();
        add_scaled(&mut local, Complex64::new(controls[j], 0.0), hhat);
        add_scaled(&mut total, one, &embed_local(&local, j, n, d));
    }
    if let Some(a) = pair {
        for i in 0..n {
            for j in i + 1..n {
                add_scaled(&mut total, Complex64::new(1.0 / n as f64, 0.0), &embed_pair(a, i, j, n, d));
            }
        }
    }
    let mut drift = ComplexMatrix::zeros(dim);
    add_scaled(&mut drift, -I, &mul(&total, rho));
    add_scaled(&mut drift, I, &mul(rho, &total));
    let mut diffusions = Vec::new();
    for j in 0..n {
        let lj = embed_local(l, j, n, d);
        let ljd = dagger(&lj);
        let ldl = mul(&ljd, &lj);
        add_scaled(&mut drift, one, &mul(&mul(&lj, rho), &ljd));
        add_scaled(&mut drift, Complex64::new(-0.5, 0.0), &mul(&ldl, rho));
        add_scaled(&mut drift, Complex64::new(-0.5, 0.0), &mul(rho, &ldl));
        let mut g = mul(&lj, rho);
        add_scaled(&mut g, one, &mul(rho, &ljd));
        let s = trace(&mul(&lj, rho)) + trace(&mul(&ljd, rho));
        add_scaled(&mut g, -s, rho);
        let mut scaled = ComplexMatrix::zeros(dim);
        add_scaled(&mut scaled, Complex64::new(eta.sqrt(), 0.0), &g);
        diffusions.push(scaled);
    }
    (drift, diffusions)
}

pub fn random_complex<R: Rng>(d: usize, rng: &mut R) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    m
}

pub fn random_hermitian<R: Rng>(d: usize, rng: &mut R) -> ComplexMatrix {
    let m = random_complex(d, rng);
    let mut h = ComplexMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
        }
    }
    h
}

/// Real kernel invariant under the pair swap (l,l';k,k') -> (l',l;k',k) and
/// under (l,l';k,k') -> (k,k';l,l'), so its operator is also Hermitian.
pub fn random_kernel<R: Rng>(d: usize, rng: &mut R) -> InteractionKernel {
    let idx = |l: usize, lp: usize, k: usize, kp: usize| ((l * d + lp) * d + k) * d + kp;
    let raw: Vec<f64> = (0..d.pow(4)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut values = vec![Complex64::new(0.0, 0.0); d.pow(4)];
    for l in 0..d {
        for lp in 0..d {
            for k in 0..d {
                for kp in 0..d {
                    let v = raw[idx(l, lp, k, kp)] + raw[idx(lp, l, kp, k)] + raw[idx(k, kp, l, lp)] + raw[idx(kp, k, lp, l)];
                    values[idx(l, lp, k, kp)] = Complex64::new(v / 4.0, 0.0);
                }
            }
        }
    }
    InteractionKernel::validate(d, values).expect("symmetrized kernel is valid")
}

pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn frob_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}
