//! Interpolation footprints shared by the forward and transposed operators,
//! so that each pair touches exactly the same samples with the same weights.

use crate::scalar::Real;

/// Up to four `(row, col, weight)` taps of a bilinear sample. Taps falling
/// outside the grid are dropped, which treats the image as zero outside.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bilinear {
    pub taps: [(usize, usize, f64); 4],
    pub len: usize,
}

impl Bilinear {
    #[inline]
    pub fn new(r: f64, c: f64, rows: usize, cols: usize) -> Option<Self> {
        if !(r > -1.0 && c > -1.0 && r < rows as f64 && c < cols as f64) {
            return None;
        }
        let r0 = r.floor();
        let c0 = c.floor();
        let fr = r - r0;
        let fc = c - c0;
        let (r0, c0) = (r0 as isize, c0 as isize);
        let mut out = Bilinear::default();
        for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
            let rr = r0 + dr;
            if rr < 0 || rr >= rows as isize || wr == 0.0 {
                continue;
            }
            for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                let cc = c0 + dc;
                if cc < 0 || cc >= cols as isize || wc == 0.0 {
                    continue;
                }
                out.taps[out.len] = (rr as usize, cc as usize, wr * wc);
                out.len += 1;
            }
        }
        Some(out)
    }

    #[inline]
    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize, f64)> {
        self.taps[..self.len].iter()
    }
}

/// Trilinear sample of a `(z, y, x)` array at fractional index `(k, j, i)`,
/// zero outside the grid.
#[inline]
pub fn trilinear<T: Real>(data: &[T], dims: (usize, usize, usize), k: f64, j: f64, i: f64) -> f64 {
    let (nz, ny, nx) = dims;
    if !(k > -1.0 && j > -1.0 && i > -1.0 && k < nz as f64 && j < ny as f64 && i < nx as f64) {
        return 0.0;
    }
    let (k0, j0, i0) = (k.floor(), j.floor(), i.floor());
    let (fk, fj, fi) = (k - k0, j - j0, i - i0);
    let (k0, j0, i0) = (k0 as isize, j0 as isize, i0 as isize);
    let mut acc = 0.0;
    for (dk, wk) in [(0, 1.0 - fk), (1, fk)] {
        let kk = k0 + dk;
        if kk < 0 || kk >= nz as isize {
            continue;
        }
        for (dj, wj) in [(0, 1.0 - fj), (1, fj)] {
            let jj = j0 + dj;
            if jj < 0 || jj >= ny as isize {
                continue;
            }
            let row = (kk as usize * ny + jj as usize) * nx;
            for (di, wi) in [(0, 1.0 - fi), (1, fi)] {
                let ii = i0 + di;
                if ii < 0 || ii >= nx as isize {
                    continue;
                }
                acc += wk * wj * wi * data[row + ii as usize].f64();
            }
        }
    }
    acc
}

/// Parameter interval `[t0, t1]` over which `p0 + t·dp` stays inside the open
/// box `(-1, n)` along every axis, or `None` if the line misses it.
#[inline]
pub fn clip_to_box(p0: &[f64], dp: &[f64], n: &[usize], mut t0: f64, mut t1: f64) -> Option<(f64, f64)> {
    for ((&p, &d), &len) in p0.iter().zip(dp).zip(n) {
        let (lo, hi) = (-1.0, len as f64);
        if d.abs() < 1e-300 {
            if !(p > lo && p < hi) {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo - p) / d, (hi - p) / d);
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t1 > t0).then_some((t0, t1))
}
