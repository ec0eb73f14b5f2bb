//! Dense building blocks with hand-written backward passes.

use std::cell::Cell;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Resets the per-thread multiply-accumulate counter.
pub fn reset_macs() {
    MACS.with(|m| m.set(0));
}

pub fn macs() -> u64 {
    MACS.with(|m| m.get())
}

/// Counted matrix product.
pub fn mm<F: NdFloat>(a: &ArrayView2<F>, b: &ArrayView2<F>) -> Array2<F> {
    MACS.with(|m| m.set(m.get() + (a.nrows() * a.ncols() * b.ncols()) as u64));
    a.dot(b)
}

pub fn cast<F: NdFloat>(x: f64) -> F {
    num_traits::cast(x).expect("representable constant")
}

pub fn gaussian<F: NdFloat>(rng: &mut impl Rng, shape: (usize, usize), std: f64) -> Array2<F> {
    Array2::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        cast(z * std)
    })
}

/// `y = x W + b`, with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: NdFloat> Linear<F> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }

    pub fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        Linear { w: gaussian(rng, (fan_in, fan_out), gain / (fan_in as f64).sqrt()), b: Array1::zeros(fan_out) }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        mm(x, &self.w.view()) + &self.b
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<F>, dy: &ArrayView2<F>, g: &mut Linear<F>) -> Array2<F> {
        g.w += &x.t().dot(dy);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

pub struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

impl<F: NdFloat> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm { gamma: Array1::zeros(dim), beta: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> (Array2<F>, LnCache<F>) {
        let d: F = cast(x.ncols() as f64);
        let eps: F = cast(LN_EPS);
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().fold(F::zero(), |a, &v| a + v * v) / d;
            *r = F::one() / (var + eps).sqrt();
            let rs = *r;
            row.mapv_inplace(|v| v * rs);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, c: &LnCache<F>, dy: &ArrayView2<F>, g: &mut LayerNorm<F>) -> Array2<F> {
        g.gamma += &(dy * &c.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let d: F = cast(dy.ncols() as f64);
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &rs) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.rstd) {
            let sum = row.sum();
            let dot = row.iter().zip(xh).fold(F::zero(), |a, (&u, &v)| a + u * v);
            Zip::from(&mut row).and(&xh).for_each(|v, &x| {
                *v = rs / d * (d * *v - sum - x * dot);
            });
        }
        dx
    }
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_B: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<F: NdFloat>(x: &Array2<F>) -> Array2<F> {
    let (a, b, half): (F, F, F) = (cast(GELU_A), cast(GELU_B), cast(0.5));
    x.mapv(|v| half * v * (F::one() + (a * (v + b * v * v * v)).tanh()))
}

pub fn gelu_backward<F: NdFloat>(x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let (a, b, half, three): (F, F, F, F) = (cast(GELU_A), cast(GELU_B), cast(0.5), cast(3.0));
    let mut out = dy.clone();
    Zip::from(&mut out).and(x).for_each(|d, &v| {
        let t = (a * (v + b * v * v * v)).tanh();
        let dt = (F::one() - t * t) * a * (F::one() + three * b * v * v);
        *d *= half * (F::one() + t) + half * v * dt;
    });
    out
}

/// Row-wise softmax in place.
fn softmax_rows<F: NdFloat>(s: &mut Array2<F>) {
    for mut row in s.rows_mut() {
        let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

/// Multi-head scaled dot-product attention. Returns the concatenated head
/// outputs and the per-head attention probabilities.
pub fn attention<F: NdFloat>(q: &Array2<F>, k: &Array2<F>, v: &Array2<F>, heads: usize) -> (Array2<F>, Vec<Array2<F>>) {
    let c = q.ncols();
    let dh = c / heads;
    let scale: F = cast(1.0 / (dh as f64).sqrt());
    let mut out = Array2::zeros((q.nrows(), c));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = mm(&q.slice(cols), &k.slice(cols).t());
        sc.mapv_inplace(|x| x * scale);
        softmax_rows(&mut sc);
        out.slice_mut(cols).assign(&mm(&sc.view(), &v.slice(cols)));
        probs.push(sc);
    }
    (out, probs)
}

/// Gradients of [`attention`] with respect to `q`, `k`, `v`.
pub fn attention_backward<F: NdFloat>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    probs: &[Array2<F>],
    d_out: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let heads = probs.len();
    let dh = q.ncols() / heads;
    let scale: F = cast(1.0 / (dh as f64).sqrt());
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout = d_out.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&dout));
        let mut ds = dout.dot(&v.slice(cols).t());
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot = drow.iter().zip(prow).fold(F::zero(), |a, (&x, &y)| a + x * y);
            Zip::from(&mut drow).and(&prow).for_each(|d, &pp| *d = pp * (*d - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}
