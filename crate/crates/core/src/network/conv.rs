//! Single-channel same-size cross-correlation with zero padding.
//!
//! `out[i,j] = Σ_{u,v} k[u,v] · x[i + u - ph, j + v - pw]` with
//! `ph = (kh - 1) / 2`, `pw = (kw - 1) / 2`. Small kernels use the direct
//! sum; large ones go through a zero-padded circular convolution of size
//! `P ≥ rows + kh - 1`, `Q ≥ cols + kw - 1`, large enough that no lag wraps.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Kernels with at most this many taps use the direct sum.
const DIRECT_MAX_TAPS: usize = 64;

pub(crate) fn correlate_same(
    x: &[f64],
    rows: usize,
    cols: usize,
    k: &[f64],
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    if kh * kw <= DIRECT_MAX_TAPS {
        direct_forward(x, rows, cols, k, kh, kw)
    } else {
        Spectral::new(rows, cols, kh, kw).forward(x, k)
    }
}

/// Returns `(input gradient, kernel gradient)` for the output cotangent `g`.
pub(crate) fn correlate_same_backward(
    x: &[f64],
    g: &[f64],
    rows: usize,
    cols: usize,
    k: &[f64],
    kh: usize,
    kw: usize,
) -> (Vec<f64>, Vec<f64>) {
    if kh * kw <= DIRECT_MAX_TAPS {
        direct_backward(x, g, rows, cols, k, kh, kw)
    } else {
        Spectral::new(rows, cols, kh, kw).backward(x, g, k)
    }
}

fn direct_forward(
    x: &[f64],
    rows: usize,
    cols: usize,
    k: &[f64],
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for u in 0..kh {
                let Some(p) = (i + u).checked_sub(ph).filter(|&p| p < rows) else {
                    continue;
                };
                for v in 0..kw {
                    if let Some(q) = (j + v).checked_sub(pw).filter(|&q| q < cols) {
                        acc += k[u * kw + v] * x[p * cols + q];
                    }
                }
            }
            out[i * cols + j] = acc;
        }
    }
    out
}

fn direct_backward(
    x: &[f64],
    g: &[f64],
    rows: usize,
    cols: usize,
    k: &[f64],
    kh: usize,
    kw: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut gx = vec![0.0; rows * cols];
    let mut gk = vec![0.0; kh * kw];
    for i in 0..rows {
        for j in 0..cols {
            let go = g[i * cols + j];
            if go == 0.0 {
                continue;
            }
            for u in 0..kh {
                let Some(p) = (i + u).checked_sub(ph).filter(|&p| p < rows) else {
                    continue;
                };
                for v in 0..kw {
                    if let Some(q) = (j + v).checked_sub(pw).filter(|&q| q < cols) {
                        gx[p * cols + q] += go * k[u * kw + v];
                        gk[u * kw + v] += go * x[p * cols + q];
                    }
                }
            }
        }
    }
    (gx, gk)
}

struct Plans {
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

type PlanCache = (FftPlanner<f64>, HashMap<(usize, usize), Arc<Plans>>);

thread_local! {
    static PLANS: RefCell<PlanCache> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plans(p: usize, q: usize) -> Arc<Plans> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((p, q))
            .or_insert_with(|| {
                Arc::new(Plans {
                    row_fwd: planner.plan_fft_forward(q),
                    row_inv: planner.plan_fft_inverse(q),
                    col_fwd: planner.plan_fft_forward(p),
                    col_inv: planner.plan_fft_inverse(p),
                })
            })
            .clone()
    })
}

/// Smallest integer `>= n` whose only prime factors are 2, 3, 5 and 7.
fn smooth_size(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut r = m;
            for f in [2, 3, 5, 7] {
                while r % f == 0 {
                    r /= f;
                }
            }
            r == 1
        })
        .expect("smooth numbers are unbounded")
}

struct Spectral {
    rows: usize,
    cols: usize,
    kh: usize,
    kw: usize,
    p: usize,
    q: usize,
    plans: Arc<Plans>,
}

impl Spectral {
    fn new(rows: usize, cols: usize, kh: usize, kw: usize) -> Self {
        let p = smooth_size(rows + kh - 1);
        let q = smooth_size(cols + kw - 1);
        Self {
            rows,
            cols,
            kh,
            kw,
            p,
            q,
            plans: plans(p, q),
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (p, q) = (self.p, self.q);
        let (row, col) = if inverse {
            (&self.plans.row_inv, &self.plans.col_inv)
        } else {
            (&self.plans.row_fwd, &self.plans.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex64::default(); p];
        for j in 0..q {
            for i in 0..p {
                column[i] = buf[i * q + j];
            }
            col.process(&mut column);
            for i in 0..p {
                buf[i * q + j] = column[i];
            }
        }
        if inverse {
            let scale = 1.0 / (p * q) as f64;
            buf.iter_mut().for_each(|z| *z *= scale);
        }
    }

    /// Image embedded at the origin of the padded domain.
    fn embed(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.p * self.q];
        for i in 0..self.rows {
            for j in 0..self.cols {
                buf[i * self.q + j] = Complex64::new(x[i * self.cols + j], 0.0);
            }
        }
        self.transform(&mut buf, false);
        buf
    }

    /// Kernel flipped about its anchor: `kc[(ph - u) mod P, (pw - v) mod Q] = k[u, v]`.
    fn embed_kernel(&self, k: &[f64]) -> Vec<Complex64> {
        let (ph, pw) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let mut buf = vec![Complex64::default(); self.p * self.q];
        for u in 0..self.kh {
            let r = (ph + self.p - u) % self.p;
            for v in 0..self.kw {
                let c = (pw + self.q - v) % self.q;
                buf[r * self.q + c] = Complex64::new(k[u * self.kw + v], 0.0);
            }
        }
        self.transform(&mut buf, false);
        buf
    }

    fn crop(&self, buf: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[i * self.cols + j] = buf[i * self.q + j].re;
            }
        }
        out
    }

    fn forward(&self, x: &[f64], k: &[f64]) -> Vec<f64> {
        let fx = self.embed(x);
        let fk = self.embed_kernel(k);
        let mut prod: Vec<Complex64> = fx.iter().zip(&fk).map(|(a, b)| a * b).collect();
        self.transform(&mut prod, true);
        self.crop(&prod)
    }

    fn backward(&self, x: &[f64], g: &[f64], k: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fg = self.embed(g);
        let fk = self.embed_kernel(k);
        let fx = self.embed(x);

        let mut gx: Vec<Complex64> = fg.iter().zip(&fk).map(|(a, b)| a * b.conj()).collect();
        self.transform(&mut gx, true);

        // Lag s = u - ph of the correlation Σ_i g[i] x[i + s].
        let mut lags: Vec<Complex64> = fg.iter().zip(&fx).map(|(a, b)| a.conj() * b).collect();
        self.transform(&mut lags, true);
        let (ph, pw) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let mut gk = vec![0.0; self.kh * self.kw];
        for u in 0..self.kh {
            let r = (u + self.p - ph) % self.p;
            for v in 0..self.kw {
                let c = (v + self.q - pw) % self.q;
                gk[u * self.kw + v] = lags[r * self.q + c].re;
            }
        }
        (self.crop(&gx), gk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn random(n: usize, rng: &mut SeededRng) -> Vec<f64> {
        (0..n).map(|_| rng.normal(0.0, 1.0)).collect()
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(199), 200);
        assert_eq!(smooth_size(97), 98);
        assert_eq!(smooth_size(11), 12);
        assert_eq!(smooth_size(1), 1);
    }

    #[test]
    fn spectral_matches_direct() {
        let mut rng = SeededRng::new(9);
        for &(rows, cols, kh, kw) in &[
            (10, 10, 10, 10),
            (7, 12, 9, 4),
            (6, 5, 13, 11),
            (9, 9, 2, 9),
            (1, 8, 1, 8),
        ] {
            let x = random(rows * cols, &mut rng);
            let g = random(rows * cols, &mut rng);
            let k = random(kh * kw, &mut rng);
            let spec = Spectral::new(rows, cols, kh, kw);
            let a = spec.forward(&x, &k);
            let b = direct_forward(&x, rows, cols, &k, kh, kw);
            for (u, v) in a.iter().zip(&b) {
                assert!(
                    (u - v).abs() < 1e-10,
                    "{rows}x{cols} k{kh}x{kw}: {u} vs {v}"
                );
            }
            let (ga, ka) = spec.backward(&x, &g, &k);
            let (gb, kb) = direct_backward(&x, &g, rows, cols, &k, kh, kw);
            for (u, v) in ga.iter().zip(&gb).chain(ka.iter().zip(&kb)) {
                assert!(
                    (u - v).abs() < 1e-10,
                    "{rows}x{cols} k{kh}x{kw}: {u} vs {v}"
                );
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <g, conv(x)> = <conv_backward_x(g), x> = <conv_backward_k(g), k>.
        let mut rng = SeededRng::new(10);
        let (rows, cols, kh, kw) = (8, 6, 5, 3);
        let x = random(rows * cols, &mut rng);
        let g = random(rows * cols, &mut rng);
        let k = random(kh * kw, &mut rng);
        let y = direct_forward(&x, rows, cols, &k, kh, kw);
        let (gx, gk) = direct_backward(&x, &g, rows, cols, &k, kh, kw);
        let lhs: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum();
        let via_x: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_k: f64 = gk.iter().zip(&k).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_k).abs() < 1e-10);
    }
}
