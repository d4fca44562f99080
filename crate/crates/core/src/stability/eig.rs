//! Dense real eigensolver: balancing, elimination to upper Hessenberg form,
//! then Francis double-shift QR iterations with deflation. Eigenvalues only;
//! complex conjugate pairs come out exactly paired.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::Error;
use crate::Result;

const MAX_SWEEPS_PER_EIGENVALUE: usize = 40;

/// All eigenvalues of a real dense matrix, sorted by ascending real part
/// (ties by imaginary part).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m: Vec<f64> = a.iter().cloned().collect(); // column-major
    // Work row-major internally.
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] = m[j * n + i];
        }
    }
    m.clear();
    balance(&mut h, n);
    hessenberg(&mut h, n);
    let mut vals = hqr(&mut h, n)?;
    vals.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap()
            .then(x.im.partial_cmp(&y.im).unwrap())
    });
    Ok(vals)
}

/// Iterative diagonal scaling by radix powers so row and column norms match.
fn balance(a: &mut [f64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    loop {
        let mut last = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                let mut c2 = c;
                while c2 < g {
                    f *= RADIX;
                    c2 *= sqrdx;
                }
                g = r * RADIX;
                while c2 > g {
                    f /= RADIX;
                    c2 /= sqrdx;
                }
                if (c2 + r) / f < 0.95 * s {
                    last = false;
                    let ginv = 1.0 / f;
                    for j in 0..n {
                        a[i * n + j] *= ginv;
                    }
                    for j in 0..n {
                        a[j * n + i] *= f;
                    }
                }
            }
        }
        if last {
            break;
        }
    }
}

/// Reduction to upper Hessenberg form by stabilized elementary similarity
/// transformations.
fn hessenberg(a: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    for m in 1..n - 1 {
        let mut x = 0.0f64;
        let mut piv = m;
        for i in m..n {
            if a[i * n + m - 1].abs() > x.abs() {
                x = a[i * n + m - 1];
                piv = i;
            }
        }
        if piv != m {
            for j in m - 1..n {
                a.swap(piv * n + j, m * n + j);
            }
            for j in 0..n {
                a.swap(j * n + piv, j * n + m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i * n + m - 1];
                if y != 0.0 {
                    y /= x;
                    for j in m - 1..n {
                        a[i * n + j] -= y * a[m * n + j];
                    }
                    for j in 0..n {
                        a[j * n + m] += y * a[j * n + i];
                    }
                }
            }
        }
    }
    // Clear the numerically irrelevant lower triangle.
    for i in 2..n {
        for j in 0..i - 1 {
            a[i * n + j] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hqr(a: &mut [f64], n: usize) -> Result<Vec<Complex64>> {
    let at = |a: &[f64], i: usize, j: usize| a[i * n + j];
    let eps = f64::EPSILON;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += at(a, i, j).abs();
        }
    }
    if anorm == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let mut vals: Vec<Complex64> = Vec::with_capacity(n);
    let mut t = 0.0;
    let mut nn = n as isize - 1;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // Find the smallest l with a negligible subdiagonal below it.
            let mut l = nn;
            while l >= 1 {
                let s = at(a, (l - 1) as usize, (l - 1) as usize).abs()
                    + at(a, l as usize, l as usize).abs();
                let s = if s == 0.0 { anorm } else { s };
                if at(a, l as usize, (l - 1) as usize).abs() <= eps * s {
                    a[l as usize * n + (l - 1) as usize] = 0.0;
                    break;
                }
                l -= 1;
            }
            let x = at(a, nn as usize, nn as usize);
            if l == nn {
                vals.push(Complex64::new(x + t, 0.0));
                nn -= 1;
                break;
            }
            let y = at(a, (nn - 1) as usize, (nn - 1) as usize);
            let w = at(a, nn as usize, (nn - 1) as usize) * at(a, (nn - 1) as usize, nn as usize);
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    let r1 = x + z;
                    let r2 = if z != 0.0 { x - w / z } else { x + z };
                    vals.push(Complex64::new(r1, 0.0));
                    vals.push(Complex64::new(r2, 0.0));
                } else {
                    vals.push(Complex64::new(x + p, z));
                    vals.push(Complex64::new(x + p, -z));
                }
                nn -= 2;
                break;
            }
            if its == MAX_SWEEPS_PER_EIGENVALUE {
                return Err(Error::EigenNonConvergence(nn as usize));
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                t += x;
                for i in 0..=nn as usize {
                    a[i * n + i] -= x;
                }
                let s = at(a, nn as usize, (nn - 1) as usize).abs()
                    + at(a, (nn - 1) as usize, (nn - 2) as usize).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            // Look for two consecutive small subdiagonal elements.
            let mut m = nn - 2;
            let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
            while m >= l {
                let z = at(a, m as usize, m as usize);
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / at(a, (m + 1) as usize, m as usize)
                    + at(a, m as usize, (m + 1) as usize);
                q = at(a, (m + 1) as usize, (m + 1) as usize) - z - rr - ss;
                r = at(a, (m + 2) as usize, (m + 1) as usize);
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u =
                    at(a, m as usize, (m - 1) as usize).abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (at(a, (m - 1) as usize, (m - 1) as usize).abs()
                        + z.abs()
                        + at(a, (m + 1) as usize, (m + 1) as usize).abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[i as usize * n + (i - 2) as usize] = 0.0;
                if i > m + 2 {
                    a[i as usize * n + (i - 3) as usize] = 0.0;
                }
            }
            // Double QR step over rows l..nn, columns m..nn.
            for k in m..=nn - 1 {
                if k != m {
                    p = at(a, k as usize, (k - 1) as usize);
                    q = at(a, (k + 1) as usize, (k - 1) as usize);
                    r = if k != nn - 1 {
                        at(a, (k + 2) as usize, (k - 1) as usize)
                    } else {
                        0.0
                    };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[k as usize * n + (k - 1) as usize] =
                            -at(a, k as usize, (k - 1) as usize);
                    }
                } else {
                    a[k as usize * n + (k - 1) as usize] = -s * x;
                }
                p += s;
                let x2 = p / s;
                let y2 = q / s;
                let z2 = r / s;
                q /= p;
                r /= p;
                for j in k as usize..n.min((nn + 1) as usize) {
                    let mut pp =
                        at(a, k as usize, j) + q * at(a, (k + 1) as usize, j);
                    if k != nn - 1 {
                        pp += r * at(a, (k + 2) as usize, j);
                        a[(k + 2) as usize * n + j] -= pp * z2;
                    }
                    a[(k + 1) as usize * n + j] -= pp * y2;
                    a[k as usize * n + j] -= pp * x2;
                }
                let mmin = nn.min(k + 3) as usize;
                for i in l as usize..=mmin {
                    let mut pp = x2 * at(a, i, k as usize) + y2 * at(a, i, (k + 1) as usize);
                    if k != nn - 1 {
                        pp += z2 * at(a, i, (k + 2) as usize);
                        a[i * n + (k + 2) as usize] -= pp * r;
                    }
                    a[i * n + (k + 1) as usize] -= pp * q;
                    a[i * n + k as usize] -= pp;
                }
            }
        }
    }
    Ok(vals)
}
