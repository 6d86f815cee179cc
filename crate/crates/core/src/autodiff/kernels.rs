//! Raw slice kernels behind the tape ops: im2col convolution and pooling.
//!
//! Convolutions are lowered to a matrix product so the inner loop runs in
//! `matrixmultiply::dgemm`.

/// Row-major matrix product `c = alpha * a * b + beta * c` where `a` is
/// `m x k` and `b` is `k x n`. `a_t` / `b_t` read the operand transposed
/// from its stored layout (stored as `k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides can reach
    // lies inside the respective slice.
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

/// Geometry of a stride-1 square-kernel convolution over one image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Unfolds `image` (`C x H x W`) into `cols` (`C*k*k x H'*W'`).
pub(crate) fn im2col(image: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let out_len = g.out_len();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * out_len..(row + 1) * out_len];
                for oi in 0..g.out_height {
                    let ii = (oi + ki) as isize - g.padding as isize;
                    let line = &mut dst[oi * g.out_width..(oi + 1) * g.out_width];
                    if ii < 0 || ii >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for (oj, slot) in line.iter_mut().enumerate() {
                        let jj = (oj + kj) as isize - g.padding as isize;
                        *slot = if jj < 0 || jj >= g.width as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back and accumulates into `image`.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry, image: &mut [f64]) {
    let out_len = g.out_len();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * out_len..(row + 1) * out_len];
                for oi in 0..g.out_height {
                    let ii = (oi + ki) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    let line = &src[oi * g.out_width..(oi + 1) * g.out_width];
                    for (oj, v) in line.iter().enumerate() {
                        let jj = (oj + kj) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.width as isize {
                            dst[jj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping `size x size` max pooling over `planes` planes of `h x w`.
/// Returns pooled values and, per output, the flat input index of the
/// winner. Ties go to the lowest flat index.
pub(crate) fn maxpool(
    input: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best_idx = base + oi * size * w + oj * size;
                let mut best = input[best_idx];
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (oi * size + di) * w + oj * size + dj;
                        // Row-major scan with strict comparison keeps the
                        // lowest flat index on ties.
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}
