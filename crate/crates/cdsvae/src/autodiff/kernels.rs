//! Forward kernels shared by the f32 tape and the f64 replay path.
//!
//! Keeping one generic implementation guarantees that the replay used by the
//! finite-difference checker computes exactly the same function the tape
//! recorded, just at higher precision.

/// Minimal float abstraction so kernels can run at f32 (training) or f64
/// (finite-difference evaluation).
pub trait Real: Copy + PartialOrd {
    const ZERO: Self;
    const ONE: Self;
    fn from_f32(v: f32) -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn recip(self) -> Self;
    fn max(self, o: Self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline(always)]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline(always)]
            fn add(self, o: Self) -> Self {
                self + o
            }
            #[inline(always)]
            fn sub(self, o: Self) -> Self {
                self - o
            }
            #[inline(always)]
            fn mul(self, o: Self) -> Self {
                self * o
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn recip(self) -> Self {
                1.0 / self
            }
            #[inline(always)]
            fn max(self, o: Self) -> Self {
                if self > o {
                    self
                } else {
                    o
                }
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// out[m,n] = a[m,k] * b[k,n], row major.
pub fn matmul<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for v in out.iter_mut() {
        *v = T::ZERO;
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row.iter()) {
                *o = o.add(a_ip.mul(b_pj));
            }
        }
    }
}

pub fn transpose<T: Real>(x: &[T], out: &mut [T], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
}

pub fn map<T: Real>(x: &[T], out: &mut [T], f: impl Fn(T) -> T) {
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = f(v);
    }
}

pub fn zip<T: Real>(a: &[T], b: &[T], out: &mut [T], f: impl Fn(T, T) -> T) {
    for ((o, &x), &y) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
        *o = f(x, y);
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    // 1 / (1 + exp(-x)), stable for both tails.
    if v >= T::ZERO {
        T::ONE.add(v.mul(T::from_f32(-1.0)).exp()).recip()
    } else {
        let e = v.exp();
        e.mul(T::ONE.add(e).recip())
    }
}

pub fn sum<T: Real>(x: &[T]) -> T {
    let mut acc = T::ZERO;
    for &v in x {
        acc = acc.add(v);
    }
    acc
}

/// Sums a [rows, cols] matrix along the given axis (0 or 1).
pub fn sum_axis<T: Real>(x: &[T], out: &mut [T], rows: usize, cols: usize, axis: usize) {
    for v in out.iter_mut() {
        *v = T::ZERO;
    }
    if axis == 0 {
        for i in 0..rows {
            let row = &x[i * cols..(i + 1) * cols];
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = o.add(v);
            }
        }
    } else {
        for i in 0..rows {
            out[i] = sum(&x[i * cols..(i + 1) * cols]);
        }
    }
}

/// Row-wise log(sum(exp(x))), stabilized by the row max.
pub fn logsumexp_rows<T: Real>(x: &[T], out: &mut [T], rows: usize, cols: usize) {
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let mut m = row[0];
        for &v in row.iter() {
            m = m.max(v);
        }
        let mut acc = T::ZERO;
        for &v in row.iter() {
            acc = acc.add(v.sub(m).exp());
        }
        out[i] = m.add(acc.ln());
    }
}

/// Copies a slab along `axis` out of an N-d row-major tensor.
pub fn slice_axis<T: Real>(
    x: &[T],
    out: &mut [T],
    dims: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let axis_len = dims[axis];
    for o in 0..outer {
        let src = (o * axis_len + start) * inner;
        let dst = o * len * inner;
        out[dst..dst + len * inner].copy_from_slice(&x[src..src + len * inner]);
    }
}
