//! Numeric kernels behind the graph operations.

/// `c = a · b (+ c when accumulate)`, where `a` is `m × k` and `b` is `k × n`.
/// Transposed operands are expressed through strides, so no copies are made.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    // a stored as m×k (row stride k) or, transposed, as k×m (row stride m).
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices are exactly m·k, k·n and m·n long (checked above in
    // debug builds, guaranteed by every caller), and the strides describe
    // in-bounds row-major or transposed views of them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every linear index of `out`, the linear index into a tensor of shape
/// `input` broadcast to `out`.
pub(crate) fn broadcast_index(out: &[usize], input: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    let in_n: usize = input.iter().product();
    if out == input {
        return (0..n).collect();
    }
    // Trailing-suffix broadcast (bias rows and the like) is a plain modulo.
    if input.len() <= out.len() && out[out.len() - input.len()..] == *input {
        return (0..n).map(|i| i % in_n.max(1)).collect();
    }
    let rank = out.len();
    let offset = rank - input.len();
    let mut in_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..input.len()).rev() {
        in_strides[d + offset] = if input[d] == 1 { 0 } else { stride };
        stride *= input[d];
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for d in (0..rank).rev() {
            idx[d] += 1;
            cur += in_strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= in_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// Geometry of a 2-D convolution over `[n, in_h, in_w, c]` inputs with a
/// `kh × kw` window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    pub fn positions(&self) -> usize {
        self.n * self.out_h * self.out_w
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (h, w, c) = (self.in_h as isize, self.in_w as isize, self.c);
        let patch = self.patch_len();
        for b in 0..self.n {
            for oi in 0..self.out_h {
                for oj in 0..self.out_w {
                    let row = ((b * self.out_h + oi) * self.out_w + oj) * patch;
                    for ki in 0..self.kh {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii >= h {
                            continue;
                        }
                        for kj in 0..self.kw {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if jj < 0 || jj >= w {
                                continue;
                            }
                            let src = ((b * self.in_h + ii as usize) * self.in_w + jj as usize) * c;
                            let dst = row + (ki * self.kw + kj) * c;
                            f(src, dst);
                        }
                    }
                }
            }
        }
    }

    /// Unfold input patches into a `positions × patch_len` matrix.
    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let c = self.c;
        let mut cols = vec![0.0; self.positions() * self.patch_len()];
        self.for_each_tap(|src, dst| cols[dst..dst + c].copy_from_slice(&x[src..src + c]));
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add patch rows back.
    pub fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let c = self.c;
        self.for_each_tap(|src, dst| {
            for (a, b) in x[src..src + c].iter_mut().zip(&cols[dst..dst + c]) {
                *a += b;
            }
        });
    }
}
