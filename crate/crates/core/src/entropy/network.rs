//! Forward and backward passes of the context encoder and the heads.
//!
//! Encoder layer (pre-norm): `x += MHA(LN1(x))`, `x += W2·gelu(W1·LN2(x))`,
//! followed by a final layer norm producing the contexts. Attention has no
//! mask: every row of a batch attends to every other row, and no row's
//! context depends on the batch residuals, so a batch decodes in one pass.
//!
//! Gradients are derived by hand. Reductions run in a fixed order, so a
//! given input and parameter set always produce the same bits.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{Block, Head, Params};
use super::{Real, SYMBOL_OFFSET};
use crate::dald::BatchFeatures;

pub const LN_EPS: f64 = 1e-5;

struct NormCache<R> {
    xhat: Array2<R>,
    inv_std: Array1<R>,
}

fn layer_norm<R: Real>(x: &Array2<R>, g: &Array1<R>, b: &Array1<R>) -> (Array2<R>, NormCache<R>) {
    let (n, d) = x.dim();
    let mut xhat = Array2::<R>::zeros((n, d));
    let mut inv_std = Array1::<R>::zeros(n);
    let dd = R::of(d as f64);
    for i in 0..n {
        let row = x.row(i);
        let mut mean = R::zero();
        for &v in row.iter() {
            mean += v;
        }
        mean /= dd;
        let mut var = R::zero();
        for &v in row.iter() {
            var += (v - mean) * (v - mean);
        }
        var /= dd;
        let is = R::one() / (var + R::of(LN_EPS)).sqrt();
        inv_std[i] = is;
        for (o, &v) in xhat.row_mut(i).iter_mut().zip(row.iter()) {
            *o = (v - mean) * is;
        }
    }
    let mut y = xhat.clone();
    Zip::from(y.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row).and(g).and(b).for_each(|y, &g, &b| *y = *y * g + b);
    });
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward<R: Real>(
    dy: &Array2<R>,
    cache: &NormCache<R>,
    g: &Array1<R>,
    dg: &mut Array1<R>,
    db: &mut Array1<R>,
) -> Array2<R> {
    let (n, d) = dy.dim();
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dd = R::of(d as f64);
    let mut dx = Array2::<R>::zeros((n, d));
    for i in 0..n {
        let xh = cache.xhat.row(i);
        let mut dxh = vec![R::zero(); d];
        let (mut m1, mut m2) = (R::zero(), R::zero());
        for j in 0..d {
            dxh[j] = dy[[i, j]] * g[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
        }
        m1 /= dd;
        m2 /= dd;
        let is = cache.inv_std[i];
        for j in 0..d {
            dx[[i, j]] = is * (dxh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<R: Real>(x: R) -> R {
    let u = R::of(GELU_C) * (x + R::of(GELU_A) * x * x * x);
    R::of(0.5) * x * (R::one() + u.tanh())
}

#[inline]
fn gelu_grad<R: Real>(x: R) -> R {
    let u = R::of(GELU_C) * (x + R::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = R::of(GELU_C) * (R::one() + R::of(3.0 * GELU_A) * x * x);
    R::of(0.5) * (R::one() + t) + R::of(0.5) * x * (R::one() - t * t) * du
}

fn affine<R: Real>(x: &ArrayView2<R>, w: &Array2<R>, b: &Array1<R>) -> Array2<R> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Row-wise softmax in place.
fn softmax_rows<R: Real>(z: &mut Array2<R>) {
    for mut row in z.rows_mut() {
        let mut m = R::neg_infinity();
        for &v in row.iter() {
            m = m.max(v);
        }
        let mut sum = R::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        let inv = R::one() / sum;
        row.mapv_inplace(|v| v * inv);
    }
}

struct BlockCache<R> {
    ln1: NormCache<R>,
    h1: Array2<R>,
    q: Array2<R>,
    k: Array2<R>,
    v: Array2<R>,
    probs: Vec<Array2<R>>,
    attn: Array2<R>,
    ln2: NormCache<R>,
    h2: Array2<R>,
    f1: Array2<R>,
    gf: Array2<R>,
}

fn block_forward<R: Real>(x: &mut Array2<R>, b: &Block<R>, heads: usize, cache: bool) -> Option<BlockCache<R>> {
    let (n, d) = x.dim();
    let dh = d / heads;
    let scale = R::of(1.0 / (dh as f64).sqrt());
    let (h1, ln1) = layer_norm(x, &b.ln1_g, &b.ln1_b);
    let q = affine(&h1.view(), &b.wq, &b.bq);
    let k = affine(&h1.view(), &b.wk, &b.bk);
    let v = affine(&h1.view(), &b.wv, &b.bv);
    let mut attn = Array2::<R>::zeros((n, d));
    let mut probs = Vec::with_capacity(if cache { heads } else { 0 });
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        p.mapv_inplace(|v| v * scale);
        softmax_rows(&mut p);
        attn.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        if cache {
            probs.push(p);
        }
    }
    *x += &attn.dot(&b.wo);
    *x += &b.bo;
    let (h2, ln2) = layer_norm(x, &b.ln2_g, &b.ln2_b);
    let f1 = affine(&h2.view(), &b.w1, &b.b1);
    let gf = f1.mapv(gelu);
    *x += &affine(&gf.view(), &b.w2, &b.b2);
    cache.then(|| BlockCache {
        ln1,
        h1,
        q,
        k,
        v,
        probs,
        attn,
        ln2,
        h2,
        f1,
        gf,
    })
}

fn block_backward<R: Real>(dx: &mut Array2<R>, b: &Block<R>, c: &BlockCache<R>, gb: &mut Block<R>, heads: usize) {
    let d = dx.ncols();
    let dh = d / heads;
    let scale = R::of(1.0 / (dh as f64).sqrt());

    // Feed-forward branch.
    gb.w2 += &c.gf.t().dot(dx);
    gb.b2 += &dx.sum_axis(Axis(0));
    let mut df1 = dx.dot(&b.w2.t());
    Zip::from(&mut df1).and(&c.f1).for_each(|g, &f| *g *= gelu_grad(f));
    gb.w1 += &c.h2.t().dot(&df1);
    gb.b1 += &df1.sum_axis(Axis(0));
    let dh2 = df1.dot(&b.w1.t());
    *dx += &layer_norm_backward(&dh2, &c.ln2, &b.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);

    // Attention branch.
    gb.wo += &c.attn.t().dot(dx);
    gb.bo += &dx.sum_axis(Axis(0));
    let da = dx.dot(&b.wo.t());
    let n = dx.nrows();
    let mut dq = Array2::<R>::zeros((n, d));
    let mut dk = Array2::<R>::zeros((n, d));
    let mut dv = Array2::<R>::zeros((n, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &c.probs[h];
        let dout = da.slice(cols);
        let dp = dout.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dout));
        let mut ds = Array2::<R>::zeros((n, n));
        for i in 0..n {
            let mut dot = R::zero();
            for j in 0..n {
                dot += dp[[i, j]] * p[[i, j]];
            }
            for j in 0..n {
                ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
            }
        }
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let h1t = c.h1.t();
    gb.wq += &h1t.dot(&dq);
    gb.bq += &dq.sum_axis(Axis(0));
    gb.wk += &h1t.dot(&dk);
    gb.bk += &dk.sum_axis(Axis(0));
    gb.wv += &h1t.dot(&dv);
    gb.bv += &dv.sum_axis(Axis(0));
    let mut dh1 = dq.dot(&b.wq.t());
    dh1 += &dk.dot(&b.wk.t());
    dh1 += &dv.dot(&b.wv.t());
    *dx += &layer_norm_backward(&dh1, &c.ln1, &b.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
}

/// Contexts `C_1..C_N` for a batch of descriptors (`N × d`).
pub fn contexts<R: Real>(p: &Params<R>, g: &Array2<R>) -> Array2<R> {
    assert_eq!(g.ncols(), p.config.dim(), "descriptor dimension mismatch");
    let mut x = g.clone();
    for b in &p.blocks {
        block_forward(&mut x, b, p.config.heads, false);
    }
    layer_norm(&x, &p.lnf_g, &p.lnf_b).0
}

/// Head input `[C, r_0/255, .., r_{c-1}/255]` from the contexts and the
/// (clamped) residuals of earlier channels.
pub fn head_input<R: Real>(c: &Array2<R>, previous: &[&[i32]]) -> Array2<R> {
    let (n, d) = c.dim();
    let mut z = Array2::<R>::zeros((n, d + previous.len()));
    z.slice_mut(s![.., ..d]).assign(c);
    for (j, r) in previous.iter().enumerate() {
        for i in 0..n {
            z[[i, d + j]] = R::of(f64::from(r[i]) / 255.0);
        }
    }
    z
}

fn head_logits<R: Real>(h: &Head<R>, z: &Array2<R>) -> (Array2<R>, Array2<R>, Array2<R>) {
    let pre = affine(&z.view(), &h.w1, &h.b1);
    let act = pre.mapv(gelu);
    let logits = affine(&act.view(), &h.w2, &h.b2);
    (pre, act, logits)
}

/// 511-way distributions of channel `channel` for every row.
pub fn head_probs<R: Real>(p: &Params<R>, channel: usize, z: &Array2<R>) -> Array2<R> {
    let mut logits = head_logits(&p.heads[channel], z).2;
    softmax_rows(&mut logits);
    logits
}

/// Training example: descriptor inputs plus per-channel targets. Targets
/// are residuals clamped to `[-255, 255]`; `mask` drops padding and
/// clamped chroma overflows from the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub features: BatchFeatures,
    pub targets: Vec<Vec<i32>>,
    pub mask: Vec<Vec<bool>>,
}

impl TrainingBatch {
    fn weight_count(&self) -> usize {
        self.features.real
    }
}

fn log_softmax_row<R: Real>(row: ndarray::ArrayView1<R>, target: usize) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in row.iter() {
        m = m.max(v.f64());
    }
    let mut sum = 0.0;
    for &v in row.iter() {
        sum += (v.f64() - m).exp();
    }
    row[target].f64() - m - sum.ln()
}

fn clamp_symbol(r: i32) -> usize {
    (r.clamp(-SYMBOL_OFFSET, SYMBOL_OFFSET) + SYMBOL_OFFSET) as usize
}

/// Cross-entropy in bits per real point, `-(1/N')·Σ log2 q`, summed over
/// channels. Defined as 0 when the batch has no real points.
pub fn batch_loss<R: Real>(p: &Params<R>, batch: &TrainingBatch) -> f64 {
    let n_real = batch.weight_count();
    if n_real == 0 {
        log::warn!("loss of a batch without real points");
        return 0.0;
    }
    let g = p.emb.assemble(&batch.features);
    let c = contexts(p, &g);
    let mut total = 0.0;
    for ch in 0..p.heads.len() {
        let prev: Vec<&[i32]> = batch.targets[..ch].iter().map(Vec::as_slice).collect();
        let z = head_input(&c, &prev);
        let logits = head_logits(&p.heads[ch], &z).2;
        for i in 0..batch.features.rows {
            if batch.mask[ch][i] {
                total -= log_softmax_row(logits.row(i), clamp_symbol(batch.targets[ch][i]));
            }
        }
    }
    total / (n_real as f64 * std::f64::consts::LN_2)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad<R: Real>(p: &Params<R>, batch: &TrainingBatch) -> (f64, Params<R>) {
    let mut grad = p.zeros_like();
    let n_real = batch.weight_count();
    if n_real == 0 {
        log::warn!("loss of a batch without real points");
        return (0.0, grad);
    }
    let heads = p.config.heads;
    let g = p.emb.assemble(&batch.features);
    let mut x = g;
    let caches: Vec<BlockCache<R>> = p
        .blocks
        .iter()
        .map(|b| block_forward(&mut x, b, heads, true).expect("cache requested"))
        .collect();
    let (c, lnf) = layer_norm(&x, &p.lnf_g, &p.lnf_b);
    let d = c.ncols();
    let norm = 1.0 / (n_real as f64 * std::f64::consts::LN_2);
    let mut total = 0.0;
    let mut dc = Array2::<R>::zeros(c.dim());
    for ch in 0..p.heads.len() {
        let head = &p.heads[ch];
        let prev: Vec<&[i32]> = batch.targets[..ch].iter().map(Vec::as_slice).collect();
        let z = head_input(&c, &prev);
        let (pre, act, logits) = head_logits(head, &z);
        let mut dlogits = Array2::<R>::zeros(logits.dim());
        for i in 0..batch.features.rows {
            if !batch.mask[ch][i] {
                continue;
            }
            let t = clamp_symbol(batch.targets[ch][i]);
            total -= log_softmax_row(logits.row(i), t);
            let mut row = logits.row(i).to_owned();
            let mut m = R::neg_infinity();
            for &v in row.iter() {
                m = m.max(v);
            }
            let mut sum = R::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            let w = R::of(norm);
            for (j, (dz, &e)) in dlogits.row_mut(i).iter_mut().zip(row.iter()).enumerate() {
                let onehot = if j == t { R::one() } else { R::zero() };
                *dz = (e / sum - onehot) * w;
            }
        }
        let gh = &mut grad.heads[ch];
        gh.w2 += &act.t().dot(&dlogits);
        gh.b2 += &dlogits.sum_axis(Axis(0));
        let mut dpre = dlogits.dot(&head.w2.t());
        Zip::from(&mut dpre).and(&pre).for_each(|g, &x| *g *= gelu_grad(x));
        gh.w1 += &z.t().dot(&dpre);
        gh.b1 += &dpre.sum_axis(Axis(0));
        let dz = dpre.dot(&head.w1.t());
        dc += &dz.slice(s![.., ..d]);
    }
    let mut dx = layer_norm_backward(&dc, &lnf, &p.lnf_g, &mut grad.lnf_g, &mut grad.lnf_b);
    for (l, cache) in caches.iter().enumerate().rev() {
        block_backward(&mut dx, &p.blocks[l], cache, &mut grad.blocks[l], heads);
    }
    grad.emb.accumulate_grad(&batch.features, dx.view());
    (total * norm, grad)
}

/// Random well-formed batch for `config`, used by unit tests.
#[cfg(test)]
pub(crate) fn random_batch(cfg: &super::ModelConfig, rows: usize, real: usize, seed: u64) -> TrainingBatch {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.dald.k;
    let kinds = cfg.channel_kinds();
    let labels = cfg.dald.label_count();
    let features = BatchFeatures {
        rows,
        real,
        k,
        positions: (0..rows).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
        labels: (0..rows * k).map(|_| rng.random_range(0..labels) as u16).collect(),
        predictions: kinds.iter().map(|_| vec![0; rows]).collect(),
        center_attr: kinds.iter().map(|c| (0..rows).map(|_| rng.random_range(0..c.attr_rows()) as u16).collect()).collect(),
        neighbor_attr: kinds
            .iter()
            .map(|c| (0..rows * k).map(|_| rng.random_range(0..c.attr_rows()) as u16).collect())
            .collect(),
        neighbor_rel: kinds
            .iter()
            .map(|c| (0..rows * k).map(|_| rng.random_range(0..c.rel_rows()) as u16).collect())
            .collect(),
    };
    let targets = kinds.iter().map(|_| (0..rows).map(|_| rng.random_range(-20..=20)).collect()).collect();
    let mask = kinds.iter().map(|_| (0..rows).map(|i| i < real).collect()).collect();
    TrainingBatch { features, targets, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dald::DaldConfig;
    use crate::entropy::ModelConfig;
    use crate::io::AttributeMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn micro(mode: AttributeMode) -> ModelConfig {
        let dald = DaldConfig { k: 2, label_dim: 1, attr_dim: 1, rel_dim: 0, ..DaldConfig::desk() };
        ModelConfig { heads: 2, ff_dim: 16, head_hidden: 8, ..ModelConfig::new(dald, mode) }
    }

    #[test]
    fn single_row_contexts_are_finite() {
        let p = Params::<f32>::init(&micro(AttributeMode::Single), 0).unwrap();
        let g = Array2::from_shape_fn((1, 8), |(_, j)| j as f32 * 0.1);
        let c = contexts(&p, &g);
        assert_eq!(c.dim(), (1, 8));
        assert!(c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weights_give_identical_rows() {
        let p = Params::<f32>::zeros(&micro(AttributeMode::Single));
        let g = Array2::from_elem((5, 8), 0.25f32);
        let c = contexts(&p, &g);
        for i in 1..5 {
            assert_eq!(c.row(i), c.row(0));
        }
    }

    #[test]
    fn probabilities_are_normalized() {
        let p = Params::<f32>::init(&micro(AttributeMode::Rgb), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0f32..1.0));
        let c = contexts(&p, &g);
        let ry = vec![3, -4, 0, 255, -255, 7];
        let z = head_input(&c, &[&ry]);
        let q = head_probs(&p, 1, &z);
        for row in q.rows() {
            let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0));
            assert_eq!(row.len(), 511);
        }
    }

    #[test]
    fn uniform_head_costs_log2_511() {
        let cfg = micro(AttributeMode::Single);
        let p = Params::<f64>::zeros(&cfg);
        let features = BatchFeatures {
            rows: 2,
            real: 2,
            k: 2,
            positions: vec![[0.0; 3]; 2],
            labels: vec![0; 4],
            predictions: vec![vec![0; 2]],
            center_attr: vec![vec![0; 2]],
            neighbor_attr: vec![vec![0; 4]],
            neighbor_rel: vec![vec![0; 4]],
        };
        let batch = TrainingBatch { features, targets: vec![vec![0, 17]], mask: vec![vec![true, true]] };
        assert!((batch_loss(&p, &batch) - 511f64.log2()).abs() < 1e-9);
        let none = TrainingBatch { mask: vec![vec![false, false]], ..batch.clone() };
        let (l, _) = loss_and_grad(&p, &none);
        assert!((batch_loss(&p, &none) - 0.0).abs() < 1e-12 && l == 0.0);
    }

    /// Central differences on every parameter, in f64.
    fn check_gradient(cfg: &ModelConfig, seed: u64) {
        let p = Params::<f64>::init(cfg, seed).unwrap();
        let mut batch = random_batch(cfg, 5, 4, seed + 1);
        if batch.mask.len() > 1 {
            batch.mask[1][2] = false;
        }
        let (loss, grad) = loss_and_grad(&p, &batch);
        assert!((loss - batch_loss(&p, &batch)).abs() < 1e-12);
        let h = 1e-5;
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        let mut worst = 0.0f64;
        let mut q = p.clone();
        for (ti, a) in analytic.iter().enumerate() {
            for i in 0..a.len() {
                let orig = q.tensors_mut()[ti][i];
                q.tensors_mut()[ti][i] = orig + h;
                let up = batch_loss(&q, &batch);
                q.tensors_mut()[ti][i] = orig - h;
                let down = batch_loss(&q, &batch);
                q.tensors_mut()[ti][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let err = (a[i] - numeric).abs() / (a[i].abs().max(numeric.abs()).max(1e-3));
                worst = worst.max(err);
                assert!(err < 1e-4, "tensor {ti} index {i}: analytic {} numeric {numeric}", a[i]);
            }
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences_rgb() {
        check_gradient(&micro(AttributeMode::Rgb), 21);
    }

    #[test]
    fn gradient_matches_finite_differences_single_without_labels() {
        let dald = DaldConfig { k: 2, label_dim: 0, attr_dim: 1, rel_dim: 1, ..DaldConfig::desk() };
        let cfg = ModelConfig { heads: 2, ff_dim: 16, head_hidden: 8, ..ModelConfig::new(dald, AttributeMode::Single) };
        check_gradient(&cfg, 4);
    }

    #[test]
    fn padding_rows_do_not_change_loss_normalization() {
        let cfg = micro(AttributeMode::Single);
        let p = Params::<f64>::init(&cfg, 2).unwrap();
        let batch = random_batch(&cfg, 6, 6, 9);
        let mut masked = batch.clone();
        masked.mask[0][5] = false;
        masked.features.real = 5;
        let g = p.emb.assemble(&batch.features);
        let c = contexts(&p, &g);
        let q = head_probs(&p, 0, &head_input(&c, &[]));
        let bits: Vec<f64> = (0..6).map(|i| -q[[i, clamp_symbol(batch.targets[0][i])]].log2()).collect();
        assert!((batch_loss(&p, &batch) - bits.iter().sum::<f64>() / 6.0).abs() < 1e-9);
        assert!((batch_loss(&p, &masked) - bits[..5].iter().sum::<f64>() / 5.0).abs() < 1e-9);
    }

    #[test]
    fn certain_prediction_costs_nothing() {
        let cfg = micro(AttributeMode::Single);
        let mut p = Params::<f64>::zeros(&cfg);
        let batch = random_batch(&cfg, 4, 4, 3);
        let mut batch = batch;
        batch.targets[0] = vec![-7; 4];
        p.heads[0].b2[clamp_symbol(-7)] = 200.0;
        assert!(batch_loss(&p, &batch) < 1e-12);
        let (_, grad) = loss_and_grad(&p, &batch);
        assert!(grad.tensors().iter().all(|t| t.iter().all(|g| g.abs() < 1e-12)));
    }

    #[test]
    fn one_training_step_lowers_the_loss() {
        let cfg = micro(AttributeMode::Rgb);
        let mut p = Params::<f32>::init(&cfg, 8).unwrap();
        let batch = random_batch(&cfg, 8, 8, 12);
        let before = batch_loss(&p, &batch);
        let (_, g) = loss_and_grad(&p, &batch);
        for (w, d) in p.tensors_mut().into_iter().zip(g.tensors()) {
            w.iter_mut().zip(d).for_each(|(w, d)| *w -= 1e-2 * d);
        }
        assert!(batch_loss(&p, &batch) < before);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        /// Permuting descriptor rows permutes contexts and distributions.
        #[test]
        fn rows_are_permutation_equivariant(seed in 0u64..1000, rows in 1usize..12) {
            let cfg = micro(AttributeMode::Rgb);
            let p = Params::<f32>::init(&cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Array2::from_shape_fn((rows, 8), |_| rng.random_range(-2.0f32..2.0));
            let mut perm: Vec<usize> = (0..rows).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let gp = g.select(ndarray::Axis(0), &perm);
            let (c, cp) = (contexts(&p, &g), contexts(&p, &gp));
            let prev: Vec<i32> = (0..rows).map(|_| rng.random_range(-255..=255)).collect();
            let prev_p: Vec<i32> = perm.iter().map(|&i| prev[i]).collect();
            let q = head_probs(&p, 1, &head_input(&c, &[&prev]));
            let qp = head_probs(&p, 1, &head_input(&cp, &[&prev_p]));
            for (j, &i) in perm.iter().enumerate() {
                for (a, b) in c.row(i).iter().zip(cp.row(j)) {
                    proptest::prop_assert!((a - b).abs() <= 1e-5);
                }
                for (a, b) in q.row(i).iter().zip(qp.row(j)) {
                    proptest::prop_assert!((a - b).abs() <= 1e-5);
                }
            }
        }
    }
}
