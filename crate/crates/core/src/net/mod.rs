//! Pose-update network: a learned latent array cross-attends to the encoded
//! input rows, followed by self-attention, in blocks that reuse one set of
//! layer weights. Four linear heads read the mean-pooled latents.

pub mod flops;
pub mod lamb;
pub mod layers;

use ndarray::{Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, NdFloat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ENCODED_WIDTH;
use crate::seed;
use layers::{attention, attention_backward, cast, gaussian, gelu, gelu_backward, LayerNorm, Linear, LnCache};

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub n_latent: usize,
    pub c_latent: usize,
    pub n_blocks: usize,
    pub self_per_block: usize,
    pub heads: usize,
    pub c_input: usize,
    /// feed-forward hidden width as a multiple of `c_latent`
    pub mlp_ratio: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            n_latent: 128,
            c_latent: 256,
            n_blocks: 3,
            self_per_block: 2,
            heads: 8,
            c_input: ENCODED_WIDTH,
            mlp_ratio: 2,
        }
    }
}

impl ArchConfig {
    pub fn small() -> Self {
        ArchConfig { n_latent: 64, c_latent: 128, ..ArchConfig::default() }
    }

    pub fn tiny() -> Self {
        ArchConfig { n_latent: 8, c_latent: 16, heads: 2, ..ArchConfig::default() }
    }

    pub fn hidden(&self) -> usize {
        self.mlp_ratio * self.c_latent
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.c_latent.is_multiple_of(self.heads) {
            return Err(Error::Config("c_latent must be divisible by heads".into()));
        }
        if self.n_blocks == 0 || self.n_latent == 0 || self.c_input == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (l, c, ci, h) = (self.n_latent, self.c_latent, self.c_input, self.hidden());
        let mlp = 2 * c + (c * h + h) + (h * c + c);
        let cross = 2 * c + 2 * (c * c + c) + 2 * (ci * c + c) + mlp;
        let selfl = 2 * c + 4 * (c * c + c) + mlp;
        l * c + 2 * ci + cross + self.self_per_block * selfl + 2 * c + N_OUT * c + N_OUT
    }
}

/// Head outputs: dt (3), dq (4), ds (3), classification logit (1).
pub const N_OUT: usize = 11;

/// Raw network outputs. `dq` is not yet normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawOutput<F> {
    pub dt: [F; 3],
    pub dq: [F; 4],
    pub ds: [F; 3],
    pub logit: F,
}

impl<F: NdFloat> RawOutput<F> {
    fn from_head(y: &[F]) -> Self {
        RawOutput {
            dt: [y[0], y[1], y[2]],
            // zero head output means "no rotation change"
            dq: [y[3] + F::one(), y[4], y[5], y[6]],
            ds: [y[7], y[8], y[9]],
            logit: y[10],
        }
    }

    pub fn to_array(&self) -> [F; N_OUT] {
        let mut a = [F::zero(); N_OUT];
        a[..3].copy_from_slice(&self.dt);
        a[3..7].copy_from_slice(&self.dq);
        a[7..10].copy_from_slice(&self.ds);
        a[10] = self.logit;
        a
    }

    pub fn confidence(&self) -> F {
        F::one() / (F::one() + (-self.logit).exp())
    }
}

/// Attention layer with a pre-norm feed-forward sublayer. In the cross layer
/// `wk`/`wv` map from the input width.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnLayer<F> {
    pub ln: LayerNorm<F>,
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    pub ln_mlp: LayerNorm<F>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

impl<F: NdFloat> AttnLayer<F> {
    fn zeros(c: usize, c_kv: usize, h: usize) -> Self {
        AttnLayer {
            ln: LayerNorm::zeros(c),
            wq: Linear::zeros(c, c),
            wk: Linear::zeros(c_kv, c),
            wv: Linear::zeros(c_kv, c),
            wo: Linear::zeros(c, c),
            ln_mlp: LayerNorm::zeros(c),
            fc1: Linear::zeros(c, h),
            fc2: Linear::zeros(h, c),
        }
    }

    fn init(rng: &mut impl rand::Rng, c: usize, c_kv: usize, h: usize) -> Self {
        AttnLayer {
            ln: LayerNorm::new(c),
            wq: Linear::init(rng, c, c, 1.0),
            wk: Linear::init(rng, c_kv, c, 1.0),
            wv: Linear::init(rng, c_kv, c, 1.0),
            wo: Linear::init(rng, c, c, 1.0),
            ln_mlp: LayerNorm::new(c),
            fc1: Linear::init(rng, c, h, 1.0),
            fc2: Linear::init(rng, h, c, 1.0),
        }
    }

    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        let lin = |n: &str, l: &'a Linear<F>, out: &mut Vec<(String, ArrayViewD<'a, F>)>| {
            out.push((format!("{p}.{n}.w"), l.w.view().into_dyn()));
            out.push((format!("{p}.{n}.b"), l.b.view().into_dyn()));
        };
        out.push((format!("{p}.ln.gamma"), self.ln.gamma.view().into_dyn()));
        out.push((format!("{p}.ln.beta"), self.ln.beta.view().into_dyn()));
        lin("wq", &self.wq, out);
        lin("wk", &self.wk, out);
        lin("wv", &self.wv, out);
        lin("wo", &self.wo, out);
        out.push((format!("{p}.ln_mlp.gamma"), self.ln_mlp.gamma.view().into_dyn()));
        out.push((format!("{p}.ln_mlp.beta"), self.ln_mlp.beta.view().into_dyn()));
        lin("fc1", &self.fc1, out);
        lin("fc2", &self.fc2, out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, F>>) {
        out.push(self.ln.gamma.view_mut().into_dyn());
        out.push(self.ln.beta.view_mut().into_dyn());
        for l in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo] {
            out.push(l.w.view_mut().into_dyn());
            out.push(l.b.view_mut().into_dyn());
        }
        out.push(self.ln_mlp.gamma.view_mut().into_dyn());
        out.push(self.ln_mlp.beta.view_mut().into_dyn());
        for l in [&mut self.fc1, &mut self.fc2] {
            out.push(l.w.view_mut().into_dyn());
            out.push(l.b.view_mut().into_dyn());
        }
    }
}

/// All learnable parameters. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub cfg: ArchConfig,
    pub latent: Array2<F>,
    pub input_ln: LayerNorm<F>,
    pub cross: AttnLayer<F>,
    pub selfs: Vec<AttnLayer<F>>,
    pub final_ln: LayerNorm<F>,
    pub head: Linear<F>,
}

/// Standard deviation of the learned latent array at initialization.
pub const LATENT_INIT_STD: f64 = 0.02;
/// Gain of the head weights relative to the fan-in scaled default.
pub const HEAD_INIT_GAIN: f64 = 0.1;

impl<F: NdFloat> Params<F> {
    pub fn zeros(cfg: &ArchConfig) -> Self {
        let (c, h) = (cfg.c_latent, cfg.hidden());
        Params {
            cfg: *cfg,
            latent: Array2::zeros((cfg.n_latent, c)),
            input_ln: LayerNorm::zeros(cfg.c_input),
            cross: AttnLayer::zeros(c, cfg.c_input, h),
            selfs: (0..cfg.self_per_block).map(|_| AttnLayer::zeros(c, c, h)).collect(),
            final_ln: LayerNorm::zeros(c),
            head: Linear::zeros(c, N_OUT),
        }
    }

    /// Deterministic initialization: fan-in scaled Gaussian weights, zero
    /// biases, unit norm gains, small Gaussian latents.
    pub fn init(cfg: &ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed, &[0x9a7a]);
        let (c, h) = (cfg.c_latent, cfg.hidden());
        Ok(Params {
            cfg: *cfg,
            latent: gaussian(&mut rng, (cfg.n_latent, c), LATENT_INIT_STD),
            input_ln: LayerNorm::new(cfg.c_input),
            cross: AttnLayer::init(&mut rng, c, cfg.c_input, h),
            selfs: (0..cfg.self_per_block).map(|_| AttnLayer::init(&mut rng, c, c, h)).collect(),
            final_ln: LayerNorm::new(c),
            head: Linear::init(&mut rng, c, N_OUT, HEAD_INIT_GAIN),
        })
    }

    /// Named views of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = vec![("latent".to_string(), self.latent.view().into_dyn())];
        out.push(("input_ln.gamma".into(), self.input_ln.gamma.view().into_dyn()));
        out.push(("input_ln.beta".into(), self.input_ln.beta.view().into_dyn()));
        self.cross.collect("cross", &mut out);
        for (i, l) in self.selfs.iter().enumerate() {
            l.collect(&format!("self{i}"), &mut out);
        }
        out.push(("final_ln.gamma".into(), self.final_ln.gamma.view().into_dyn()));
        out.push(("final_ln.beta".into(), self.final_ln.beta.view().into_dyn()));
        out.push(("head.w".into(), self.head.w.view().into_dyn()));
        out.push(("head.b".into(), self.head.b.view().into_dyn()));
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = vec![self.latent.view_mut().into_dyn()];
        out.push(self.input_ln.gamma.view_mut().into_dyn());
        out.push(self.input_ln.beta.view_mut().into_dyn());
        self.cross.collect_mut(&mut out);
        for l in &mut self.selfs {
            l.collect_mut(&mut out);
        }
        out.push(self.final_ln.gamma.view_mut().into_dyn());
        out.push(self.final_ln.beta.view_mut().into_dyn());
        out.push(self.head.w.view_mut().into_dyn());
        out.push(self.head.b.view_mut().into_dyn());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Converts to another float type.
    pub fn cast<G: NdFloat>(&self) -> Params<G> {
        let mut out = Params::<G>::zeros(&self.cfg);
        for (mut d, (_, s)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            d.zip_mut_with(&s, |a, &b| *a = cast(num_traits::cast::<F, f64>(b).expect("finite")));
        }
        out
    }

    pub fn add_assign(&mut self, other: &Params<F>) {
        for (mut d, (_, s)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            d += &s;
        }
    }

    pub fn scale(&mut self, k: F) {
        for mut d in self.tensors_mut() {
            d.mapv_inplace(|v| v * k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

struct LayerCache<F> {
    ln: LnCache<F>,
    zn: Array2<F>,
    q: Array2<F>,
    /// self-attention keys/values (cross layers use the shared input ones)
    kv: Option<(Array2<F>, Array2<F>)>,
    probs: Vec<Array2<F>>,
    o: Array2<F>,
    ln_mlp: LnCache<F>,
    y: Array2<F>,
    h: Array2<F>,
    g: Array2<F>,
}

/// Intermediate values needed by [`backward`].
pub struct Cache<F> {
    input_ln: LnCache<F>,
    xn: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// in execution order: per block, one cross layer then the self layers
    layers: Vec<LayerCache<F>>,
    final_ln: LnCache<F>,
    pooled: Array2<F>,
}

fn layer_forward<F: NdFloat>(
    p: &AttnLayer<F>,
    z: Array2<F>,
    shared_kv: Option<(&Array2<F>, &Array2<F>)>,
    heads: usize,
) -> (Array2<F>, LayerCache<F>) {
    let (zn, ln) = p.ln.forward(&z.view());
    let q = p.wq.forward(&zn.view());
    let kv = match shared_kv {
        Some(_) => None,
        None => Some((p.wk.forward(&zn.view()), p.wv.forward(&zn.view()))),
    };
    let (k, v) = match (&kv, shared_kv) {
        (Some((k, v)), _) => (k, v),
        (None, Some(kv)) => kv,
        (None, None) => unreachable!(),
    };
    let (o, probs) = attention(&q, k, v, heads);
    let z1 = &z + &p.wo.forward(&o.view());
    let (y, ln_mlp) = p.ln_mlp.forward(&z1.view());
    let h = p.fc1.forward(&y.view());
    let g = gelu(&h);
    let z2 = &z1 + &p.fc2.forward(&g.view());
    let cache = LayerCache { ln, zn, q, kv, probs, o, ln_mlp, y, h, g };
    (z2, cache)
}

/// Gradients of the shared cross-attention keys and values.
type KvGrads<F> = Option<(Array2<F>, Array2<F>)>;

/// Backward through one layer. Returns `dL/dz_in`; for cross layers also
/// the gradients of the shared keys and values.
fn layer_backward<F: NdFloat>(
    p: &AttnLayer<F>,
    c: &LayerCache<F>,
    shared_kv: Option<(&Array2<F>, &Array2<F>)>,
    dz2: Array2<F>,
    g: &mut AttnLayer<F>,
) -> (Array2<F>, KvGrads<F>) {
    let dg = p.fc2.backward(&c.g.view(), &dz2.view(), &mut g.fc2);
    let dh = gelu_backward(&c.h, &dg);
    let dy = p.fc1.backward(&c.y.view(), &dh.view(), &mut g.fc1);
    let dz1 = dz2 + p.ln_mlp.backward(&c.ln_mlp, &dy.view(), &mut g.ln_mlp);
    let d_o = p.wo.backward(&c.o.view(), &dz1.view(), &mut g.wo);
    let (k, v) = match (&c.kv, shared_kv) {
        (Some((k, v)), _) => (k, v),
        (None, Some(kv)) => kv,
        (None, None) => unreachable!(),
    };
    let (dq, dk, dv) = attention_backward(&c.q, k, v, &c.probs, &d_o);
    let mut dzn = p.wq.backward(&c.zn.view(), &dq.view(), &mut g.wq);
    let shared_grads = if c.kv.is_some() {
        dzn += &p.wk.backward(&c.zn.view(), &dk.view(), &mut g.wk);
        dzn += &p.wv.backward(&c.zn.view(), &dv.view(), &mut g.wv);
        None
    } else {
        Some((dk, dv))
    };
    let dz = dz1 + p.ln.backward(&c.ln, &dzn.view(), &mut g.ln);
    (dz, shared_grads)
}

/// Forward pass over encoded rows (`n x c_input`).
pub fn forward<F: NdFloat>(p: &Params<F>, x: &ArrayView2<F>) -> Result<(RawOutput<F>, Cache<F>)> {
    run(p, x, true).map(|(o, c)| (o, c.expect("cache requested")))
}

/// Inference only; per-layer activations are dropped as soon as possible.
pub fn predict<F: NdFloat>(p: &Params<F>, x: &ArrayView2<F>) -> Result<RawOutput<F>> {
    run(p, x, false).map(|(o, _)| o)
}

fn run<F: NdFloat>(p: &Params<F>, x: &ArrayView2<F>, keep: bool) -> Result<(RawOutput<F>, Option<Cache<F>>)> {
    let cfg = &p.cfg;
    if x.ncols() != cfg.c_input {
        return Err(Error::WidthMismatch { expected: cfg.c_input, got: x.ncols() });
    }
    let (xn, input_ln) = p.input_ln.forward(x);
    // the cross layer's weights are shared by all blocks, so its keys and
    // values are the same in every block
    let k = p.cross.wk.forward(&xn.view());
    let v = p.cross.wv.forward(&xn.view());
    let mut z = p.latent.clone();
    let mut layers = Vec::with_capacity(cfg.n_blocks * (1 + cfg.self_per_block));
    for _ in 0..cfg.n_blocks {
        let (z2, c) = layer_forward(&p.cross, z, Some((&k, &v)), cfg.heads);
        z = z2;
        if keep {
            layers.push(c);
        }
        for sl in &p.selfs {
            let (z2, c) = layer_forward(sl, z, None, cfg.heads);
            z = z2;
            if keep {
                layers.push(c);
            }
        }
    }
    let (zf, final_ln) = p.final_ln.forward(&z.view());
    let inv_l: F = cast(1.0 / cfg.n_latent as f64);
    let pooled = (zf.sum_axis(Axis(0)) * inv_l).insert_axis(Axis(0));
    let y = p.head.forward(&pooled.view());
    let out = RawOutput::from_head(y.as_slice().expect("contiguous head output"));
    let cache = keep.then_some(Cache { input_ln, xn, k, v, layers, final_ln, pooled });
    Ok((out, cache))
}

/// Reverse pass given `dL/d(raw outputs)`; returns parameter gradients.
pub fn backward<F: NdFloat>(p: &Params<F>, cache: &Cache<F>, d_out: &[F; N_OUT]) -> Params<F> {
    let cfg = &p.cfg;
    let mut g = Params::zeros(cfg);
    let dy = Array2::from_shape_vec((1, N_OUT), d_out.to_vec()).expect("head shape");
    let dpooled = p.head.backward(&cache.pooled.view(), &dy.view(), &mut g.head);
    let l: F = cast(cfg.n_latent as f64);
    let dzf = Array2::from_shape_fn((cfg.n_latent, cfg.c_latent), |(_, j)| dpooled[[0, j]] / l);
    let mut dz = p.final_ln.backward(&cache.final_ln, &dzf.view(), &mut g.final_ln);
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    let per_block = 1 + cfg.self_per_block;
    for (i, c) in cache.layers.iter().enumerate().rev() {
        let j = i % per_block;
        if j == 0 {
            let (d, kv) = layer_backward(&p.cross, c, Some((&cache.k, &cache.v)), dz, &mut g.cross);
            let (a, b) = kv.expect("cross layer returns key/value gradients");
            dk += &a;
            dv += &b;
            dz = d;
        } else {
            dz = layer_backward(&p.selfs[j - 1], c, None, dz, &mut g.selfs[j - 1]).0;
        }
    }
    g.latent += &dz;
    let mut dxn = p.cross.wk.backward(&cache.xn.view(), &dk.view(), &mut g.cross.wk);
    dxn += &p.cross.wv.backward(&cache.xn.view(), &dv.view(), &mut g.cross.wv);
    // the input gradient itself is not needed
    let _ = p.input_ln.backward(&cache.input_ln, &dxn.view(), &mut g.input_ln);
    g
}

/// Loss and gradient for one example.
pub fn grad<F: NdFloat>(
    p: &Params<F>,
    x: &ArrayView2<F>,
    targets: &crate::train::Targets,
    weights: &crate::train::LossWeights,
) -> Result<(crate::train::LossTerms, Params<F>)> {
    let (out, cache) = forward(p, x)?;
    let (terms, d_out) = crate::train::loss(&out, targets, weights)?;
    Ok((terms, backward(p, &cache, &d_out)))
}

#[cfg(test)]
mod tests;
