//! Eigenvalues of real nonsymmetric matrices.
//!
//! Small and medium matrices go through balancing, reduction to upper
//! Hessenberg form by stabilized elementary similarity transforms, and the
//! Francis double-shift QR iteration. Larger matrices, where only the
//! dominant magnitude is needed, use an explicitly restarted Arnoldi process
//! whose projected Hessenberg matrix is handed back to the same QR routine.

#![allow(clippy::needless_range_loop)]

use num_complex::Complex64;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Above this dimension [`spectral_radius`] switches to the Krylov path.
pub const DENSE_EIGEN_MAX_DIM: usize = 512;

/// Sweeps allowed per deflation are `QR_SWEEP_FACTOR * max(10, active size)`.
const QR_SWEEP_FACTOR: usize = 30;
const KRYLOV_DIM: usize = 40;
const DEFAULT_RESTARTS: usize = 400;

/// All eigenvalues of a square matrix, unordered.
pub fn eigenvalues(m: &DenseMatrix) -> Result<Vec<Complex64>> {
    check_square_finite(m)?;
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (mut values, keep) = isolate(m);
    let n = keep.len();
    if n == 0 {
        return Ok(values);
    }
    // 1-based working copy; row/column 0 unused.
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for (i, &r) in keep.iter().enumerate() {
        for (j, &c) in keep.iter().enumerate() {
            a[i + 1][j + 1] = m[(r, c)];
        }
    }
    balance(&mut a, n);
    to_hessenberg(&mut a, n);
    values.extend(hessenberg_qr(&mut a, n)?);
    Ok(values)
}

/// Peels off indices whose row or column is zero off the diagonal within the
/// still-active set. Each such index contributes its diagonal entry as an
/// eigenvalue exactly (a symmetric permutation makes the matrix block
/// triangular). Returns those eigenvalues and the surviving indices.
///
/// Sparse structured matrices, such as Kronecker squares of companion-type
/// blocks, carry large nilpotent parts that this removes before QR sees them.
fn isolate(m: &DenseMatrix) -> (Vec<Complex64>, Vec<usize>) {
    let n = m.rows();
    let mut active = vec![true; n];
    // off-diagonal nonzero counts restricted to the active set
    let mut row_nz = vec![0usize; n];
    let mut col_nz = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                row_nz[i] += 1;
                col_nz[j] += 1;
            }
        }
    }
    let mut values = Vec::new();
    let mut stack: Vec<usize> = (0..n).filter(|&i| row_nz[i] == 0 || col_nz[i] == 0).collect();
    while let Some(k) = stack.pop() {
        if !active[k] {
            continue;
        }
        active[k] = false;
        values.push(Complex64::new(m[(k, k)], 0.0));
        for j in 0..n {
            if j == k || !active[j] {
                continue;
            }
            if m[(k, j)] != 0.0 {
                col_nz[j] -= 1;
                if col_nz[j] == 0 {
                    stack.push(j);
                }
            }
            if m[(j, k)] != 0.0 {
                row_nz[j] -= 1;
                if row_nz[j] == 0 {
                    stack.push(j);
                }
            }
        }
    }
    (values, (0..n).filter(|&i| active[i]).collect())
}

/// Spectral radius `max |λ|` of a square matrix.
///
/// `tol` is the relative accuracy requested from the Krylov path; the dense
/// path is accurate to working precision regardless.
pub fn spectral_radius(m: &DenseMatrix, tol: f64) -> Result<f64> {
    spectral_radius_with_budget(m, tol, DEFAULT_RESTARTS)
}

pub fn spectral_radius_with_budget(m: &DenseMatrix, tol: f64, max_restarts: usize) -> Result<f64> {
    check_square_finite(m)?;
    if m.rows() <= DENSE_EIGEN_MAX_DIM {
        Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
    } else {
        arnoldi_radius(m, tol, max_restarts)
    }
}

fn check_square_finite(m: &DenseMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Diagonal similarity scaling by powers of two so rows and columns have
/// comparable norms.
fn balance(a: &mut [Vec<f64>], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 1..=n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 1..=n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut().skip(1).take(n) {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

/// Gaussian elimination with pivoting down to upper Hessenberg form.
fn to_hessenberg(a: &mut [Vec<f64>], n: usize) {
    for m in 2..n {
        let mut x: f64 = 0.0;
        let mut piv = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..=n {
                let tmp = a[piv][j];
                a[piv][j] = a[m][j];
                a[m][j] = tmp;
            }
            for row in a.iter_mut().skip(1).take(n) {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut().skip(1).take(n) {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 3..=n {
        for j in 1..(i - 1) {
            a[i][j] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
fn hessenberg_qr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<Complex64>> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize;
    let mut t = 0.0;
    let mut total_sweeps = 0usize;
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
            } else {
                let mut y = a[nu - 1][nu - 1];
                let mut w = a[nu][nu - 1] * a[nu - 1][nu];
                if l == nu - 1 {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        let z = p + sign(z, p);
                        wr[nu - 1] = x + z;
                        wr[nu] = x + z;
                        if z != 0.0 {
                            wr[nu] = x - w / z;
                        }
                        wi[nu - 1] = 0.0;
                        wi[nu] = 0.0;
                    } else {
                        wr[nu - 1] = x + p;
                        wr[nu] = x + p;
                        wi[nu - 1] = -z;
                        wi[nu] = z;
                    }
                    nn -= 2;
                } else {
                    if its == QR_SWEEP_FACTOR * (nu - l + 1).max(10) {
                        return Err(Error::NoConvergence {
                            iterations: total_sweeps,
                        });
                    }
                    if its > 0 && its.is_multiple_of(10) {
                        // exceptional shift
                        t += x;
                        for i in 1..=nu {
                            a[i][i] -= x;
                        }
                        let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total_sweeps += 1;

                    let mut m = nu - 2;
                    let (mut p, mut q, mut r);
                    loop {
                        let z = a[m][m];
                        let r0 = x - z;
                        let s0 = y - z;
                        p = (r0 * s0 - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r0 - s0;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nu {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    for k in m..nu {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nu - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nu {
                                let mut pp = a[k][j] + q * a[k + 1][j];
                                if k != nu - 1 {
                                    pp += r * a[k + 2][j];
                                    a[k + 2][j] -= pp * z;
                                }
                                a[k + 1][j] -= pp * y;
                                a[k][j] -= pp * x;
                            }
                            let mmin = nu.min(k + 3);
                            for row in a.iter_mut().take(mmin + 1).skip(l) {
                                let mut pp = x * row[k] + y * row[k + 1];
                                if k != nu - 1 {
                                    pp += z * row[k + 2];
                                    row[k + 2] -= pp * r;
                                }
                                row[k + 1] -= pp * q;
                                row[k] -= pp;
                            }
                        }
                    }
                }
            }
            if (l as isize) >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Deterministic start vector with strictly positive entries.
fn start_vector(n: usize) -> Vec<f64> {
    let mut s: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            0.5 + (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

fn arnoldi_radius(m: &DenseMatrix, tol: f64, max_restarts: usize) -> Result<f64> {
    let n = m.rows();
    let k = KRYLOV_DIM.min(n);
    let mut v = start_vector(n);
    let mut previous: Option<f64> = None;
    let mut steady = 0;
    let mut w = vec![0.0; n];

    for _ in 0..max_restarts {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
        basis.push(v.clone());
        let mut h = DenseMatrix::zeros(k + 1, k);
        let mut dim = k;
        let mut exhausted = false;
        let mut hmax: f64 = 0.0;

        for j in 0..k {
            m.matvec_into(&basis[j], &mut w);
            // classical Gram-Schmidt, applied twice
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(&w, b);
                    h[(i, j)] += c;
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nw = norm(&w);
            h[(j + 1, j)] = nw;
            for i in 0..=j + 1 {
                hmax = hmax.max(h[(i, j)].abs());
            }
            if nw <= 1e-13 * hmax.max(f64::MIN_POSITIVE) {
                dim = j + 1;
                exhausted = true;
                break;
            }
            basis.push(w.iter().map(|x| x / nw).collect());
        }

        let hk = h.block(0, 0, dim, dim);
        let ritz = eigenvalues(&hk)?;
        let theta = ritz
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or_default();
        let radius = theta.norm();
        if exhausted || radius == 0.0 {
            return Ok(radius);
        }

        let y = ritz_vector(&hk, theta);
        let residual = h[(dim, dim - 1)] * y[dim - 1].norm();
        if residual <= tol * radius {
            return Ok(radius);
        }
        if let Some(prev) = previous {
            if (radius - prev).abs() <= 1e-3 * tol * radius {
                steady += 1;
                if steady >= 3 {
                    return Ok(radius);
                }
            } else {
                steady = 0;
            }
        }
        previous = Some(radius);

        v = vec![0.0; n];
        for (b, yi) in basis.iter().zip(&y) {
            let c = yi.re + yi.im;
            v.iter_mut().zip(b).for_each(|(x, bb)| *x += c * bb);
        }
        let nv = norm(&v);
        if nv == 0.0 || !nv.is_finite() {
            v = start_vector(n);
        } else {
            v.iter_mut().for_each(|x| *x /= nv);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_restarts * k,
    })
}

/// Unit eigenvector of a small Hessenberg matrix for eigenvalue `theta`,
/// via two steps of shifted inverse iteration.
fn ritz_vector(h: &DenseMatrix, theta: Complex64) -> Vec<Complex64> {
    let n = h.rows();
    let shift = theta + Complex64::new(1e-10 * theta.norm().max(1e-300), 0.0);
    let mut a: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = Complex64::new(h[(i, j)], 0.0);
                    if i == j {
                        v - shift
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    // LU with partial pivoting, in place
    let mut perm: Vec<usize> = (0..n).collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| a[x][c].norm().total_cmp(&a[y][c].norm()))
            .unwrap();
        a.swap(c, p);
        perm.swap(c, p);
        if a[c][c].norm() == 0.0 {
            a[c][c] = Complex64::new(1e-300, 0.0);
        }
        for r in (c + 1)..n {
            let f = a[r][c] / a[c][c];
            a[r][c] = f;
            for j in (c + 1)..n {
                let t = a[c][j];
                a[r][j] -= f * t;
            }
        }
    }
    let mut x = vec![Complex64::new(1.0, 0.0); n];
    for _ in 0..2 {
        let mut b: Vec<Complex64> = perm.iter().map(|&p| x[p]).collect();
        for r in 0..n {
            for c in 0..r {
                let t = a[r][c] * b[c];
                b[r] -= t;
            }
        }
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                let t = a[r][c] * b[c];
                b[r] -= t;
            }
            b[r] /= a[r][r];
        }
        let nb = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        x = b.into_iter().map(|z| z / nb).collect();
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_moduli(m: &DenseMatrix) -> Vec<f64> {
        let mut v: Vec<f64> = eigenvalues(m).unwrap().iter().map(|z| z.norm()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn diagonal_spectrum() {
        let m = DenseMatrix::from_diag(&[0.5, -0.9]);
        assert!((spectral_radius(&m, 1e-9).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rotation_has_unit_radius() {
        let th: f64 = 0.7;
        let m = DenseMatrix::from_rows(&[[th.cos(), -th.sin()], [th.sin(), th.cos()]]);
        assert!((spectral_radius(&m, 1e-9).unwrap() - 1.0).abs() < 1e-14);
        let ev = eigenvalues(&m).unwrap();
        assert!(ev.iter().all(|z| (z.im.abs() - th.sin()).abs() < 1e-14));
    }

    #[test]
    fn companion_matrix_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let m = DenseMatrix::from_rows(&[[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let v = sorted_moduli(&m);
        for (a, b) in v.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_triangular_is_isolated_exactly() {
        // upper triangular with a 2x2 rotation block left in the middle, then
        // scrambled by a symmetric permutation
        let n = 40;
        let mut t = DenseMatrix::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = if i % 3 == 0 { 0.0 } else { 0.01 * i as f64 };
            for j in (i + 1)..n {
                t[(i, j)] = ((i * 7 + j * 13) % 11) as f64 - 5.0;
            }
        }
        t[(20, 20)] = 0.0;
        t[(21, 21)] = 0.0;
        t[(21, 20)] = -2.0;
        t[(20, 21)] = 2.0;
        let perm: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(perm[i], perm[j])] = t[(i, j)];
            }
        }
        let (iso, keep) = isolate(&m);
        assert_eq!(iso.len(), n - 2);
        assert_eq!(keep.len(), 2);
        let rho = spectral_radius(&m, 1e-12).unwrap();
        assert!((rho - 2.0).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn zero_and_empty() {
        assert_eq!(spectral_radius(&DenseMatrix::zeros(3, 3), 1e-9).unwrap(), 0.0);
        assert_eq!(spectral_radius(&DenseMatrix::zeros(0, 0), 1e-9).unwrap(), 0.0);
        assert_eq!(spectral_radius(&DenseMatrix::zeros(700, 700), 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn rejects_rectangular() {
        assert!(matches!(
            spectral_radius(&DenseMatrix::zeros(2, 3), 1e-9),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn krylov_path_matches_block_structure() {
        // block diagonal of 2x2 rotations scaled to distinct radii, plus a
        // dominant rotation pair; the dominant eigenvalues are complex.
        let n = 600;
        let mut m = DenseMatrix::zeros(n, n);
        for b in 0..n / 2 {
            let r = if b == 17 {
                0.97
            } else {
                0.3 + 0.6 * (b as f64 / n as f64)
            };
            let th = 0.1 + b as f64 * 0.01;
            m[(2 * b, 2 * b)] = r * th.cos();
            m[(2 * b, 2 * b + 1)] = -r * th.sin();
            m[(2 * b + 1, 2 * b)] = r * th.sin();
            m[(2 * b + 1, 2 * b + 1)] = r * th.cos();
        }
        let rho = spectral_radius(&m, 1e-10).unwrap();
        assert!((rho - 0.97).abs() < 1e-9, "{rho}");
    }

    #[test]
    fn krylov_path_on_dense_nonnormal_matrix() {
        // upper-triangular part fixes the spectrum to the diagonal
        let n = 520;
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 0.2 + 0.7 * (i as f64) / (n as f64);
            for j in (i + 1)..n.min(i + 4) {
                m[(i, j)] = 0.05;
            }
        }
        m[(n - 1, n - 1)] = 0.95;
        let rho = spectral_radius(&m, 1e-10).unwrap();
        assert!((rho - 0.95).abs() < 1e-8, "{rho}");
    }
}
