//! Raw loops behind the graph operations.

use super::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Some(Self { c, h, w, kh, kw, stride, pad, ho, wo })
    }

    pub fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    pub fn in_pixels(&self) -> usize {
        self.h * self.w
    }

    /// Images per im2col chunk, bounding the column buffer to ~`budget` values.
    pub fn chunk(&self, n: usize, budget: usize) -> usize {
        let per = (self.ckk() * self.out_pixels()).max(1);
        (budget / per).clamp(1, n.max(1))
    }

    /// Input coordinate for output index `o` and kernel offset `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let v = (o * self.stride + k) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < limit).then_some(v as usize)
    }
}

/// Fills `cols` (`[ckk, nb * P]`) from images `x` (`[nb, c, h, w]`).
pub(crate) fn im2col<T: Float>(x: &[T], nb: usize, g: &ConvGeom, cols: &mut [T]) {
    let p = g.out_pixels();
    let width = nb * p;
    let hw = g.in_pixels();
    debug_assert_eq!(cols.len(), g.ckk() * width);
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let out = &mut cols[row * width..(row + 1) * width];
                for n in 0..nb {
                    let img = &x[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                    for oh in 0..g.ho {
                        let dst = &mut out[n * p + oh * g.wo..n * p + (oh + 1) * g.wo];
                        match g.src(oh, ki, g.h) {
                            None => dst.fill(T::zero()),
                            Some(ih) => {
                                let line = &img[ih * g.w..(ih + 1) * g.w];
                                for (ow, d) in dst.iter_mut().enumerate() {
                                    *d = match g.src(ow, kj, g.w) {
                                        Some(iw) => line[iw],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates column gradients back into image gradients.
pub(crate) fn col2im<T: Float>(cols: &[T], nb: usize, g: &ConvGeom, dx: &mut [T]) {
    let p = g.out_pixels();
    let width = nb * p;
    let hw = g.in_pixels();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * width..(row + 1) * width];
                for n in 0..nb {
                    let img = &mut dx[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                    for oh in 0..g.ho {
                        let Some(ih) = g.src(oh, ki, g.h) else { continue };
                        let s = &src[n * p + oh * g.wo..n * p + (oh + 1) * g.wo];
                        let line = &mut img[ih * g.w..(ih + 1) * g.w];
                        for (ow, &v) in s.iter().enumerate() {
                            if let Some(iw) = g.src(ow, kj, g.w) {
                                line[iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Returns the permuted shape and data (`out.shape[i] = shape[perm[i]]`).
pub(crate) fn permute<T: Float>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    if n == 0 {
        return (out_shape, out);
    }
    // Innermost output axis is copied in a tight loop.
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut base = 0usize;
    loop {
        for k in 0..inner {
            out.push(data[base + k * inner_stride]);
        }
        // Advance the outer multi-index.
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return (out_shape, out);
            }
            axis -= 1;
            idx[axis] += 1;
            base += src_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= src_strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Float>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Float>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let shape = [2, 3, 4];
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let (s, out) = permute(&data, &shape, &[2, 0, 1]);
        assert_eq!(s, vec![4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(out[(a * 2 + b) * 3 + c], data[(b * 3 + c) * 4 + a]);
                }
            }
        }
        let (back_shape, back) = permute(&out, &s, &inverse_perm(&[2, 0, 1]));
        assert_eq!(back_shape, shape.to_vec());
        assert_eq!(back, data);
    }

    #[test]
    fn im2col_identity_kernel() {
        let g = ConvGeom::new(1, 3, 3, 1, 1, 1, 0).unwrap();
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let mut cols = vec![0.0; 9];
        im2col(&x, 1, &g, &mut cols);
        assert_eq!(cols, x);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
