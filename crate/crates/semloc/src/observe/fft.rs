//! 2-D FFT plumbing for frequency-domain cross-correlation: plan caching,
//! fast transform sizes, and a batched correlator that reuses the reference
//! spectrum and packs pairs of real inputs into single complex transforms.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Smallest size ≥ n whose prime factors are all in {2, 3, 5}.
pub fn next_fast_size(n: usize) -> usize {
    fn is_fast(mut n: usize) -> bool {
        for f in [2, 3, 5] {
            while n % f == 0 {
                n /= f;
            }
        }
        n == 1
    }
    let mut m = n.max(1);
    while !is_fast(m) {
        m += 1;
    }
    m
}

/// Cache-blocked transpose of a row-major rows×cols buffer into dst
/// (cols×rows, row-major).
fn transpose(src: &[Complex<f64>], dst: &mut [Complex<f64>], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        let r_end = (r0 + B).min(rows);
        for c0 in (0..cols).step_by(B) {
            let c_end = (c0 + B).min(cols);
            for r in r0..r_end {
                for c in c0..c_end {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// In-place unnormalized 2-D FFT of a row-major h×w complex buffer
/// (row transforms, transpose, column transforms, transpose back).
pub fn fft2d(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w);
    if h == 0 || w == 0 {
        return;
    }
    let row_plan = plan(w, inverse);
    let mut scratch = vec![Complex::new(0.0, 0.0); row_plan.get_inplace_scratch_len()];
    for r in 0..h {
        row_plan.process_with_scratch(&mut data[r * w..(r + 1) * w], &mut scratch);
    }
    let col_plan = plan(h, inverse);
    let mut t = vec![Complex::new(0.0, 0.0); h * w];
    transpose(data, &mut t, h, w);
    scratch.resize(col_plan.get_inplace_scratch_len(), Complex::new(0.0, 0.0));
    for c in 0..w {
        col_plan.process_with_scratch(&mut t[c * h..(c + 1) * h], &mut scratch);
    }
    transpose(&t, data, w, h);
}

/// Forward spectrum of a real row-major image zero-padded to ph×pw.
fn padded_spectrum(img: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<Complex<f64>> {
    let mut z = vec![Complex::new(0.0, 0.0); ph * pw];
    for r in 0..h {
        for c in 0..w {
            z[r * pw + c].re = img[r * w + c];
        }
    }
    fft2d(&mut z, ph, pw, false);
    z
}

/// Forward spectra of two equally-shaped real images computed with a single
/// complex FFT (a packed in the real part, b in the imaginary part), split
/// by Hermitian symmetry.
fn padded_spectrum_pair(
    (a, ha, wa): (&[f64], usize, usize),
    (b, hb, wb): (&[f64], usize, usize),
    ph: usize,
    pw: usize,
) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
    let mut z = vec![Complex::new(0.0, 0.0); ph * pw];
    for r in 0..ha {
        let src = r * wa;
        let dst = r * pw;
        for c in 0..wa {
            z[dst + c].re = a[src + c];
        }
    }
    for r in 0..hb {
        let src = r * wb;
        let dst = r * pw;
        for c in 0..wb {
            z[dst + c].im = b[src + c];
        }
    }
    fft2d(&mut z, ph, pw, false);
    let mut fa = vec![Complex::new(0.0, 0.0); ph * pw];
    let mut fb = vec![Complex::new(0.0, 0.0); ph * pw];
    for r in 0..ph {
        let rn = (ph - r) % ph;
        for c in 0..pw {
            let cn = (pw - c) % pw;
            let z1 = z[r * pw + c];
            let z2 = z[rn * pw + cn].conj();
            fa[r * pw + c] = (z1 + z2) * 0.5;
            // (z1 − z2) / (2i) = −i/2 · (z1 − z2)
            let d = z1 - z2;
            fb[r * pw + c] = Complex::new(d.im * 0.5, -d.re * 0.5);
        }
    }
    (fa, fb)
}

/// Linear cross-correlation scores of several observations against one
/// reference, all in the frequency domain:
///
/// ```text
/// score_k(i, j) = Σ_{r,c} obs_k[r, c] · reference[r + i, c + j]
/// ```
///
/// for i in 0..lat_lags, j in 0..lon_lags, requiring reference dims =
/// obs dims + lags − 1. Zero-padding to fast sizes ≥ the reference keeps
/// every returned lag free of circular wrap-around. Observations are
/// transformed in packed pairs; with an odd count the leftover observation
/// packs with the reference, so no forward transform runs half empty.
/// Returns one row-major lat_lags×lon_lags score array per obs.
pub fn correlate_batch_fft(
    obs: &[&[f64]],
    obs_h: usize,
    obs_w: usize,
    reference: &[f64],
    lat_lags: usize,
    lon_lags: usize,
) -> Vec<Vec<f64>> {
    let ref_h = obs_h + lat_lags - 1;
    let ref_w = obs_w + lon_lags - 1;
    assert_eq!(reference.len(), ref_h * ref_w);
    let ph = next_fast_size(ref_h);
    let pw = next_fast_size(ref_w);
    let n = (ph * pw) as f64;

    // Forward spectra: pair up observations; an odd tail rides in the
    // reference's imaginary slot.
    let odd_tail = obs.len() % 2 == 1;
    let (f_ref, f_tail) = if odd_tail {
        let (fr, ft) = padded_spectrum_pair(
            (reference, ref_h, ref_w),
            (obs[obs.len() - 1], obs_h, obs_w),
            ph,
            pw,
        );
        (fr, Some(ft))
    } else {
        (padded_spectrum(reference, ref_h, ref_w, ph, pw), None)
    };
    let mut spectra: Vec<(Vec<Complex<f64>>, Option<Vec<Complex<f64>>>)> = Vec::new();
    let mut idx = 0;
    while idx + 1 < obs.len() {
        let (fa, fb) = padded_spectrum_pair(
            (obs[idx], obs_h, obs_w),
            (obs[idx + 1], obs_h, obs_w),
            ph,
            pw,
        );
        spectra.push((fa, Some(fb)));
        idx += 2;
    }
    if let Some(ft) = f_tail {
        spectra.push((ft, None));
    }

    // Product spectra conj(F_obs)·F_ref, inverse-transformed in pairs: the
    // packed inverse carries one correlation in its real part and the other
    // in its imaginary part (both correlations are real arrays).
    let mut out = Vec::with_capacity(obs.len());
    let extract = |prod: &[Complex<f64>], take_im: bool| {
        let mut scores = vec![0.0; lat_lags * lon_lags];
        for i in 0..lat_lags {
            for j in 0..lon_lags {
                let z = prod[i * pw + j];
                scores[i * lon_lags + j] = if take_im { z.im } else { z.re } / n;
            }
        }
        scores
    };
    for (fa, fb) in &spectra {
        let mut prod = vec![Complex::new(0.0, 0.0); ph * pw];
        if let Some(fb) = fb {
            for k in 0..ph * pw {
                let pa = fa[k].conj() * f_ref[k];
                let pb = fb[k].conj() * f_ref[k];
                prod[k] = Complex::new(pa.re - pb.im, pa.im + pb.re);
            }
        } else {
            for k in 0..ph * pw {
                prod[k] = fa[k].conj() * f_ref[k];
            }
        }
        fft2d(&mut prod, ph, pw, true);
        out.push(extract(&prod, false));
        if fb.is_some() {
            out.push(extract(&prod, true));
        }
    }
    out
}
