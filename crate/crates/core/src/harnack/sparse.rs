//! Compressed sparse rows, a banded LU with partial pivoting and ILU(0)-
//! preconditioned BiCGSTAB.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Rows given as `(column, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == i).map_or(0.0, |e| e.1)
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            *out = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for (c, _) in self.row(i) {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }
}

/// Banded LU factorisation with partial pivoting, column-major band storage
/// with `kl` extra super-diagonals for pivoting fill.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    pub fn storage(n: usize, kl: usize, ku: usize) -> usize {
        n * (2 * kl + ku + 1)
    }

    pub fn flops(n: usize, kl: usize, ku: usize) -> f64 {
        n as f64 * kl as f64 * (kl + ku) as f64 * 2.0
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let kv = kl + ku;
        let ld = 2 * kl + ku + 1;
        let mut ab = vec![0.0; n * ld];
        for i in 0..n {
            for (c, v) in a.row(i) {
                ab[c * ld + kv + i - c] = v;
            }
        }
        let mut ipiv = vec![0; n];
        let mut ju = 0;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld + kv;
            let mut jp = 0;
            let mut best = ab[col].abs();
            for p in 1..=km {
                let v = ab[col + p].abs();
                if v > best {
                    best = v;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::Structural(format!("singular matrix at column {j}")));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ld + kv + j - c;
                    ab.swap(base, base + jp);
                }
            }
            if km > 0 {
                let piv = ab[col];
                for p in 1..=km {
                    ab[col + p] /= piv;
                }
                for c in j + 1..=ju {
                    let base = c * ld + kv + j - c;
                    let u = ab[base];
                    if u != 0.0 {
                        for p in 1..=km {
                            ab[base + p] -= ab[col + p] * u;
                        }
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, ld, ab, ipiv })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ld) = (self.n, self.kl, self.ld);
        let kv = kl + self.ku;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let col = j * ld + kv;
            let bj = b[j];
            for q in 1..=km {
                b[j + q] -= self.ab[col + q] * bj;
            }
        }
        for j in (0..n).rev() {
            let col = j * ld + kv;
            b[j] /= self.ab[col];
            let bj = b[j];
            let top = j.saturating_sub(kv);
            for i in top..j {
                b[i] -= self.ab[col + i - j] * bj;
            }
        }
    }
}

/// Incomplete LU with the sparsity of `a`; unit lower factor implied.
pub struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag_pos = vec![usize::MAX; n];
        for (i, slot) in diag_pos.iter_mut().enumerate() {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    *slot = k;
                }
            }
            if *slot == usize::MAX {
                return Err(Error::Structural(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..end {
                let c = lu.cols[k];
                if c >= i {
                    break;
                }
                let factor = lu.vals[k] / lu.vals[diag_pos[c]];
                lu.vals[k] = factor;
                for kk in diag_pos[c] + 1..lu.row_ptr[c + 1] {
                    let p = pos[lu.cols[kk]];
                    if p != usize::MAX {
                        lu.vals[p] -= factor * lu.vals[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
            if lu.vals[diag_pos[i]] == 0.0 {
                return Err(Error::Structural(format!("zero pivot in ILU(0) at row {i}")));
            }
        }
        Ok(Self { lu, diag_pos })
    }

    pub fn apply(&self, r: &[f64], out: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = r[i];
            for k in lu.row_ptr[i]..self.diag_pos[i] {
                s -= lu.vals[k] * out[lu.cols[k]];
            }
            out[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = out[i];
            for k in self.diag_pos[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * out[lu.cols[k]];
            }
            out[i] = s / lu.vals[self.diag_pos[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, Serialize)]
pub struct IterativeStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Right-preconditioned BiCGSTAB, stopping on the max-norm residual.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<IterativeStats> {
    let n = a.n;
    let pre = Ilu0::new(a)?;
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut trace = vec![max_abs(&r)];
    if trace[0] <= tol {
        return Ok(IterativeStats {
            iterations: 0,
            residual: trace[0],
        });
    }
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 || omega == 0.0 {
            // breakdown: restart the shadow residual
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.fill(0.0);
            p.fill(0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut y);
        a.mul_vec_into(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if max_abs(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            let res = true_residual(a, b, x);
            trace.push(res);
            if res <= tol {
                return Ok(IterativeStats {
                    iterations: it,
                    residual: res,
                });
            }
            r = residual_vec(a, b, x);
            continue;
        }
        pre.apply(&s, &mut z);
        a.mul_vec_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = max_abs(&r);
        trace.push(res);
        if !res.is_finite() {
            break;
        }
        if res <= tol {
            let res = true_residual(a, b, x);
            if res <= tol {
                return Ok(IterativeStats {
                    iterations: it,
                    residual: res,
                });
            }
            r = residual_vec(a, b, x);
        }
    }
    let residual = *trace.last().unwrap();
    let keep = trace.len().saturating_sub(64);
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
        trace: trace.split_off(keep),
    })
}

fn residual_vec(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = a.mul_vec(x);
    for i in 0..r.len() {
        r[i] = b[i] - r[i];
    }
    r
}

pub fn true_residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> f64 {
    max_abs(&residual_vec(a, b, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(kl);
                let hi = (i + ku).min(n - 1);
                (lo..=hi)
                    .filter_map(|c| {
                        if c == i {
                            Some((c, 0.5 + rng.random::<f64>()))
                        } else if rng.random::<f64>() < 0.5 {
                            Some((c, rng.random::<f64>() - 0.5))
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn banded_lu_solves_nonsymmetric_systems() {
        for (n, kl, ku, seed) in [(50, 3, 5, 1), (200, 11, 2, 2), (7, 6, 6, 3)] {
            let a = random_banded(n, kl, ku, seed);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut b = a.mul_vec(&x);
            BandedLu::factor(&a).unwrap().solve(&mut b);
            let err = b.iter().zip(&x).fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn bicgstab_matches_direct() {
        let n = 400;
        // diagonally dominant convection-diffusion-like matrix
        let rows = (0..n)
            .map(|i| {
                let mut row = vec![(i, 4.0)];
                for (off, v) in [(1isize, -1.3), (-1, -0.7), (20, -1.1), (-20, -0.9)] {
                    let c = i as isize + off;
                    if (0..n as isize).contains(&c) {
                        row.push((c as usize, v));
                    }
                }
                row
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut direct = b.clone();
        BandedLu::factor(&a).unwrap().solve(&mut direct);
        let mut x = vec![0.0; n];
        let stats = bicgstab(&a, &b, &mut x, 1e-12, 500).unwrap();
        assert!(stats.residual <= 1e-12);
        let err = x.iter().zip(&direct).fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
        assert!(err < 1e-10);
    }

    #[test]
    fn singular_matrix_reported() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        assert!(BandedLu::factor(&a).is_err());
    }
}
