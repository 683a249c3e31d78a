//! Small dense-matrix helpers for separable per-axis operators.

use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[cfg(test)]
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.at(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// The first `n` rows.
    pub fn top_rows(&self, n: usize) -> Mat {
        assert!(n <= self.rows);
        Mat { rows: n, cols: self.cols, data: self.data[..n * self.cols].to_vec() }
    }

}

/// Nonzero `(coefficient, offset)` pairs of each row of `m`, with offsets
/// in units of `run`. Rows are optionally split by column parity.
fn row_terms(m: &Mat, run: usize, parity: Option<usize>) -> Vec<Vec<(f64, usize)>> {
    (0..m.rows)
        .map(|r| {
            (0..m.cols)
                .filter(|&k| parity.is_none_or(|p| k % 2 == p))
                .filter_map(|k| {
                    let a = m.at(r, k);
                    (a != 0.0).then_some((a, k * run))
                })
                .collect()
        })
        .collect()
}

/// `dst += Σ a · src[off..off + dst.len()]` over `terms`, four taps per
/// pass over `dst` to cut load/store traffic.
#[inline]
fn accumulate(dst: &mut [f64], src: &[f64], terms: &[(f64, usize)]) {
    let n = dst.len();
    let mut quads = terms.chunks_exact(4);
    for q in &mut quads {
        let (a0, a1, a2, a3) = (q[0].0, q[1].0, q[2].0, q[3].0);
        let s0 = &src[q[0].1..q[0].1 + n];
        let s1 = &src[q[1].1..q[1].1 + n];
        let s2 = &src[q[2].1..q[2].1 + n];
        let s3 = &src[q[3].1..q[3].1 + n];
        for ((((d, x0), x1), x2), x3) in dst.iter_mut().zip(s0).zip(s1).zip(s2).zip(s3) {
            *d += a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
        }
    }
    for &(a, off) in quads.remainder() {
        dst.iter_mut().zip(&src[off..off + n]).for_each(|(d, x)| *d += a * x);
    }
}

/// Computes `left · X · rightᵀ` independently for every channel of a
/// channel-last `h × w × c` buffer. `left` is `h' × h`, `right` is `w' × w`;
/// the result is `h' × w' × c`, channel-last.
pub(crate) fn separable_apply(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    left: &Mat,
    right: &Mat,
    exec: Exec,
) -> Vec<f64> {
    assert_eq!(x.len(), h * w * c);
    assert_eq!(left.cols, h);
    assert_eq!(right.cols, w);
    let (ho, wo) = (left.rows, right.rows);
    let row = w * c;
    let left_terms = row_terms(left, row, None);
    let right_terms = row_terms(right, c, None);

    let mut tmp = vec![0.0; ho * row];
    exec.for_each_chunk(&mut tmp, row, |io, dst| accumulate(dst, x, &left_terms[io]));

    let mut out = vec![0.0; ho * wo * c];
    exec.for_each_chunk(&mut out, wo * c, |io, dst| {
        let src = &tmp[io * row..(io + 1) * row];
        for (cell, terms) in dst.chunks_exact_mut(c).zip(&right_terms) {
            accumulate(cell, src, terms);
        }
    });
    out
}

/// Clears `buf` and zero-fills it to `len`, reusing its allocation.
pub(crate) fn reset(buf: &mut Vec<f64>, len: usize) {
    buf.clear();
    buf.resize(len, 0.0);
}

/// Sequential [`separable_apply`] writing into reusable buffers.
pub(crate) fn separable_into(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    left: &Mat,
    right: &Mat,
    tmp: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    assert_eq!(x.len(), h * w * c);
    assert_eq!(left.cols, h);
    assert_eq!(right.cols, w);
    let (ho, wo) = (left.rows, right.rows);
    let row = w * c;
    reset(tmp, ho * row);
    for (dst, terms) in tmp.chunks_exact_mut(row).zip(row_terms(left, row, None)) {
        accumulate(dst, x, &terms);
    }
    reset(out, ho * wo * c);
    let right_terms = row_terms(right, c, None);
    for (src, dst) in tmp.chunks_exact(row).zip(out.chunks_exact_mut(wo * c)) {
        for (cell, terms) in dst.chunks_exact_mut(c).zip(&right_terms) {
            accumulate(cell, src, terms);
        }
    }
}

/// Zeroes entries below `tol` in magnitude so the kernels can skip them.
pub(crate) fn sparsify(mut m: Mat, tol: f64) -> Mat {
    m.data.iter_mut().filter(|v| v.abs() < tol).for_each(|v| *v = 0.0);
    m
}

/// True when row `rows−1−r` equals row `r` with odd columns negated, which
/// holds for every truncated inverse DCT.
pub(crate) fn has_mirror_parity(m: &Mat, tol: f64) -> bool {
    (0..m.rows).all(|r| {
        (0..m.cols).all(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            (m.at(m.rows - 1 - r, k) - sign * m.at(r, k)).abs() <= tol
        })
    })
}

/// Even/odd term lists for the first half (rounded up) of a mirrored
/// operator's rows.
struct MirrorTerms {
    even: Vec<Vec<(f64, usize)>>,
    odd: Vec<Vec<(f64, usize)>>,
}

impl MirrorTerms {
    fn new(m: &Mat, run: usize) -> Self {
        let half = m.rows.div_ceil(2);
        let mut even = row_terms(m, run, Some(0));
        let mut odd = row_terms(m, run, Some(1));
        even.truncate(half);
        odd.truncate(half);
        Self { even, odd }
    }

    /// Writes output runs `r` and `rows−1−r` of `dst` from `src`.
    fn emit(&self, dst: &mut [f64], run: usize, src: &[f64], scratch: &mut [f64]) {
        let rows = dst.len() / run;
        let (e, o) = scratch.split_at_mut(run);
        for r in 0..self.even.len() {
            e.fill(0.0);
            o.fill(0.0);
            accumulate(e, src, &self.even[r]);
            accumulate(o, src, &self.odd[r]);
            let mirror = rows - 1 - r;
            let (head, tail) = dst.split_at_mut(mirror * run);
            tail[..run].iter_mut().zip(e.iter().zip(o.iter())).for_each(|(t, (a, b))| *t = a - b);
            if mirror != r {
                let top = &mut head[r * run..(r + 1) * run];
                top.iter_mut().zip(e.iter().zip(o.iter())).for_each(|(t, (a, b))| *t = a + b);
            } else {
                // the centre row of an odd-length output has no odd part
                tail[..run].iter_mut().zip(e.iter()).for_each(|(t, a)| *t = *a);
            }
        }
    }
}

/// [`separable_into`] for operators with [`has_mirror_parity`]: each pass
/// computes output `r` and its mirror from one set of even/odd partial sums,
/// halving the multiplies.
pub(crate) fn separable_mirrored_into(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    left: &Mat,
    right: &Mat,
    tmp: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    assert_eq!(x.len(), h * w * c);
    assert_eq!(left.cols, h);
    assert_eq!(right.cols, w);
    let (ho, wo) = (left.rows, right.rows);
    let row = w * c;
    reset(tmp, ho * row);
    reset(scratch, 2 * row);
    MirrorTerms::new(left, row).emit(tmp, row, x, scratch);

    reset(out, ho * wo * c);
    let right_terms = MirrorTerms::new(right, c);
    for (src, dst) in tmp.chunks_exact(row).zip(out.chunks_exact_mut(wo * c)) {
        right_terms.emit(dst, c, src, &mut scratch[..2 * c]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], (h, w, c): (usize, usize, usize), l: &Mat, r: &Mat) -> Vec<f64> {
        let (ho, wo) = (l.rows, r.rows);
        let mut out = vec![0.0; ho * wo * c];
        for io in 0..ho {
            for jo in 0..wo {
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..h {
                        for j in 0..w {
                            s += l.at(io, i) * x[(i * w + j) * c + ch] * r.at(jo, j);
                        }
                    }
                    out[(io * wo + jo) * c + ch] = s;
                }
            }
        }
        out
    }

    #[test]
    fn separable_matches_quadruple_loop() {
        let (h, w, c) = (3, 4, 2);
        let x: Vec<f64> = (0..h * w * c).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut l = Mat::zeros(5, h);
        let mut r = Mat::zeros(2, w);
        l.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).cos());
        r.data.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 / (1.0 + i as f64));
        let want = naive(&x, (h, w, c), &l, &r);
        for exec in [Exec::Sequential, Exec::Parallel] {
            let got = separable_apply(&x, (h, w, c), &l, &r, exec);
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn matmul_identity() {
        let mut m = Mat::zeros(2, 3);
        m.data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(Mat::identity(2).matmul(&m), m);
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn mirrored_kernel_matches_general_kernel() {
        for (h, w, ho, wo, c) in [(1, 1, 1, 1, 1), (3, 4, 6, 8, 2), (4, 5, 7, 5, 3), (16, 16, 32, 32, 5)] {
            let l = crate::spectral::dct_matrix(ho).top_rows(h).transpose();
            let r = crate::spectral::dct_matrix(wo).top_rows(w).transpose();
            assert!(has_mirror_parity(&l, 1e-12) && has_mirror_parity(&r, 1e-12));
            let x: Vec<f64> = (0..h * w * c).map(|i| (i as f64 * 0.43).sin()).collect();
            let want = separable_apply(&x, (h, w, c), &l, &r, Exec::Sequential);
            let (mut tmp, mut scratch, mut got) = (Vec::new(), Vec::new(), Vec::new());
            separable_mirrored_into(&x, (h, w, c), &l, &r, &mut tmp, &mut scratch, &mut got);
            let mut plain = Vec::new();
            separable_into(&x, (h, w, c), &l, &r, &mut tmp, &mut plain);
            assert_eq!(plain, want);
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert!(!has_mirror_parity(&crate::spectral::dct_matrix(4), 1e-12));
    }
}
