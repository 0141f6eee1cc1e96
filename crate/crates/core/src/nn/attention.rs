//! One multi-head self-attention block (QKV projections, per-head scaled
//! dot-product softmax, output projection, residual add, no layer norm).
//!
//! Only the last position's output is needed downstream, so the cached
//! paths compute attention for the final query alone.

use rand::Rng;

use super::params::ParamSet;
use super::tensor::{dot, Tensor2D};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub model_dim: usize,
    pub num_heads: usize,
}

impl AttentionSpec {
    pub fn new(model_dim: usize, num_heads: usize) -> Result<Self> {
        if model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0 {
            return Err(Error::Argument(format!(
                "model_dim {model_dim} must be a positive multiple of num_heads {num_heads}"
            )));
        }
        Ok(AttentionSpec {
            model_dim,
            num_heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    spec: AttentionSpec,
    prefix: String,
}

/// Cache for [`Attention::encode`].
#[derive(Clone, Debug)]
pub struct AttentionCache {
    seq: Vec<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    ctx: Vec<f64>,
}

/// Cache for [`Attention::encode_projected`].
#[derive(Clone, Debug)]
pub struct ProjectedCache {
    raw: Vec<Vec<f64>>,
    last: Vec<f64>,
    q: Vec<f64>,
    u: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    raw_mean: Vec<Vec<f64>>,
    hidden_mean: Vec<Vec<f64>>,
    ctx: Vec<f64>,
}

/// Names of the affine map applied to raw sequence entries before the block.
#[derive(Clone, Debug)]
pub struct Projection {
    pub weight: String,
    pub bias: String,
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in s.iter_mut() {
        *v /= total;
    }
}

/// `ds_j = p_j (dp_j − Σ_k p_k dp_k)`.
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let mean = dot(p, dp);
    p.iter().zip(dp).map(|(pj, dj)| pj * (dj - mean)).collect()
}

impl Attention {
    pub fn new(prefix: impl Into<String>, spec: AttentionSpec) -> Self {
        Attention {
            spec,
            prefix: prefix.into(),
        }
    }

    pub fn spec(&self) -> AttentionSpec {
        self.spec
    }

    fn name(&self, which: &str) -> String {
        format!("{}.{which}", self.prefix)
    }

    pub fn param_names(&self) -> Vec<String> {
        ["wq", "wk", "wv", "wo"].iter().map(|w| self.name(w)).collect()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        let d = self.spec.model_dim;
        for n in self.param_names() {
            params.insert_glorot(n, d, d, rng)?;
        }
        Ok(())
    }

    fn weights<'a>(&self, params: &'a ParamSet) -> Result<[&'a Tensor2D; 4]> {
        let d = self.spec.model_dim;
        let mut out = Vec::with_capacity(4);
        for n in self.param_names() {
            let t = params.value(&n)?;
            if t.shape() != (d, d) {
                return Err(Error::Dimension(format!("{n} has shape {:?}", t.shape())));
            }
            out.push(t);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }

    fn check_seq(&self, seq: &[Vec<f64>]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Argument("attention over an empty sequence".into()));
        }
        if let Some(bad) = seq.iter().find(|x| x.len() != self.spec.model_dim) {
            return Err(Error::Dimension(format!(
                "sequence entry of length {} != model_dim {}",
                bad.len(),
                self.spec.model_dim
            )));
        }
        Ok(())
    }

    /// Output of the block at every position (no cache).
    pub fn forward_all(&self, params: &ParamSet, seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_seq(seq)?;
        let [wq, wk, wv, wo] = self.weights(params)?;
        let k: Vec<Vec<f64>> = seq.iter().map(|x| wk.matvec(x)).collect();
        let v: Vec<Vec<f64>> = seq.iter().map(|x| wv.matvec(x)).collect();
        Ok(seq
            .iter()
            .map(|x| {
                let q = wq.matvec(x);
                let (ctx, _) = self.attend(&q, &k, &v);
                let mut out = wo.matvec(&ctx);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += xi;
                }
                out
            })
            .collect())
    }

    fn attend(&self, q: &[f64], k: &[Vec<f64>], v: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let dh = self.spec.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = vec![0.0; self.spec.model_dim];
        let mut probs = Vec::with_capacity(self.spec.num_heads);
        for h in 0..self.spec.num_heads {
            let r = h * dh..(h + 1) * dh;
            let mut s: Vec<f64> = k
                .iter()
                .map(|kj| dot(&q[r.clone()], &kj[r.clone()]) * scale)
                .collect();
            softmax_in_place(&mut s);
            for (pj, vj) in s.iter().zip(v) {
                for i in r.clone() {
                    ctx[i] += pj * vj[i];
                }
            }
            probs.push(s);
        }
        (ctx, probs)
    }

    /// Output at the last position of `seq`.
    pub fn encode(&self, params: &ParamSet, seq: &[Vec<f64>]) -> Result<(Vec<f64>, AttentionCache)> {
        self.check_seq(seq)?;
        let [wq, wk, wv, wo] = self.weights(params)?;
        let last = seq.last().unwrap();
        let q = wq.matvec(last);
        let k: Vec<Vec<f64>> = seq.iter().map(|x| wk.matvec(x)).collect();
        let v: Vec<Vec<f64>> = seq.iter().map(|x| wv.matvec(x)).collect();
        let (ctx, probs) = self.attend(&q, &k, &v);
        let mut out = wo.matvec(&ctx);
        for (o, xi) in out.iter_mut().zip(last) {
            *o += xi;
        }
        let cache = AttentionCache {
            seq: seq.to_vec(),
            q,
            k,
            v,
            probs,
            ctx,
        };
        Ok((out, cache))
    }

    /// Accumulates weight gradients and returns `∂L/∂x_j` for every position.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &AttentionCache,
        upstream: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let d = self.spec.model_dim;
        if upstream.len() != d || cache.ctx.len() != d {
            return Err(Error::Usage(format!(
                "{}: upstream length {} vs model_dim {d}",
                self.prefix,
                upstream.len()
            )));
        }
        let dh = self.spec.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let n = cache.seq.len();
        let mut dx = vec![vec![0.0; d]; n];
        dx[n - 1].copy_from_slice(upstream);

        let wo = params.get_mut(&self.name("wo"))?;
        wo.grad.add_outer(upstream, &cache.ctx, 1.0);
        let dctx = wo.value.matvec_t(upstream);

        let mut dq = vec![0.0; d];
        let mut dk = vec![vec![0.0; d]; n];
        let mut dv = vec![vec![0.0; d]; n];
        for h in 0..self.spec.num_heads {
            let r = h * dh..(h + 1) * dh;
            let p = &cache.probs[h];
            let dp: Vec<f64> = cache
                .v
                .iter()
                .map(|vj| dot(&dctx[r.clone()], &vj[r.clone()]))
                .collect();
            let ds = softmax_backward(p, &dp);
            for j in 0..n {
                for i in r.clone() {
                    dv[j][i] += p[j] * dctx[i];
                    dq[i] += ds[j] * scale * cache.k[j][i];
                    dk[j][i] += ds[j] * scale * cache.q[i];
                }
            }
        }

        let last = &cache.seq[n - 1];
        let wq = params.get_mut(&self.name("wq"))?;
        wq.grad.add_outer(&dq, last, 1.0);
        let g = wq.value.matvec_t(&dq);
        for (a, b) in dx[n - 1].iter_mut().zip(&g) {
            *a += b;
        }
        for (which, dproj) in [("wk", &dk), ("wv", &dv)] {
            let w = params.get_mut(&self.name(which))?;
            for j in 0..n {
                w.grad.add_outer(&dproj[j], &cache.seq[j], 1.0);
                let g = w.value.matvec_t(&dproj[j]);
                for (a, b) in dx[j].iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        Ok(dx)
    }

    /// Same result as [`Attention::encode`] applied to `x_j = W_p e_j + b_p`,
    /// without materialising the projected keys and values.
    ///
    /// With a single final query the per-head score is
    /// `(W_pᵀ W_kᵀ q)·e_j` up to a position-independent shift, and the
    /// attended value is `W_v (W_p ē + b_p)` with `ē = Σ_j p_j e_j`.
    pub fn encode_projected(
        &self,
        params: &ParamSet,
        proj: &Projection,
        raw: &[Vec<f64>],
    ) -> Result<(Vec<f64>, ProjectedCache)> {
        if raw.is_empty() {
            return Err(Error::Argument("attention over an empty sequence".into()));
        }
        let d = self.spec.model_dim;
        let wp = params.value(&proj.weight)?;
        let bp = params.value(&proj.bias)?;
        let din = wp.cols();
        if wp.rows() != d || bp.shape() != (d, 1) {
            return Err(Error::Dimension(format!(
                "projection {:?}/{:?} does not map into model_dim {d}",
                wp.shape(),
                bp.shape()
            )));
        }
        if let Some(bad) = raw.iter().find(|e| e.len() != din) {
            return Err(Error::Dimension(format!(
                "raw entry length {} != projection input {din}",
                bad.len()
            )));
        }
        let [wq, wk, wv, wo] = self.weights(params)?;
        let dh = self.spec.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let e_last = raw.last().unwrap();
        let mut last = wp.matvec(e_last);
        for (a, b) in last.iter_mut().zip(bp.data()) {
            *a += b;
        }
        let q = wq.matvec(&last);

        let mut u = Vec::with_capacity(self.spec.num_heads);
        let mut probs = Vec::with_capacity(self.spec.num_heads);
        let mut raw_mean = Vec::with_capacity(self.spec.num_heads);
        let mut hidden_mean = Vec::with_capacity(self.spec.num_heads);
        let mut ctx = vec![0.0; d];
        for h in 0..self.spec.num_heads {
            let r = h * dh..(h + 1) * dh;
            let mut uh = vec![0.0; d];
            for i in r.clone() {
                super::tensor::axpy(&mut uh, q[i], wk.row(i));
            }
            let w = wp.matvec_t(&uh);
            let mut s: Vec<f64> = raw.iter().map(|e| dot(&w, e) * scale).collect();
            softmax_in_place(&mut s);
            let mut ebar = vec![0.0; din];
            for (pj, e) in s.iter().zip(raw) {
                super::tensor::axpy(&mut ebar, *pj, e);
            }
            let mut hbar = wp.matvec(&ebar);
            for (a, b) in hbar.iter_mut().zip(bp.data()) {
                *a += b;
            }
            for i in r {
                ctx[i] = dot(wv.row(i), &hbar);
            }
            u.push(uh);
            probs.push(s);
            raw_mean.push(ebar);
            hidden_mean.push(hbar);
        }
        let mut out = wo.matvec(&ctx);
        for (o, xi) in out.iter_mut().zip(&last) {
            *o += xi;
        }
        let cache = ProjectedCache {
            raw: raw.to_vec(),
            last,
            q,
            u,
            probs,
            raw_mean,
            hidden_mean,
            ctx,
        };
        Ok((out, cache))
    }

    /// Backward pass of [`Attention::encode_projected`]; gradients reach the
    /// block weights and the projection, not the raw entries.
    pub fn backward_projected(
        &self,
        params: &mut ParamSet,
        proj: &Projection,
        cache: &ProjectedCache,
        upstream: &[f64],
    ) -> Result<()> {
        let d = self.spec.model_dim;
        if upstream.len() != d || cache.ctx.len() != d {
            return Err(Error::Usage(format!(
                "{}: upstream length {} vs model_dim {d}",
                self.prefix,
                upstream.len()
            )));
        }
        let dh = self.spec.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let wo = params.get_mut(&self.name("wo"))?;
        wo.grad.add_outer(upstream, &cache.ctx, 1.0);
        let dctx = wo.value.matvec_t(upstream);
        let mut dlast = upstream.to_vec();

        let mut dq = vec![0.0; d];
        for h in 0..self.spec.num_heads {
            let r = h * dh..(h + 1) * dh;
            let wv = params.get_mut(&self.name("wv"))?;
            let mut dhbar = vec![0.0; d];
            for i in r.clone() {
                wv.grad
                    .row_mut(i)
                    .iter_mut()
                    .zip(&cache.hidden_mean[h])
                    .for_each(|(g, hb)| *g += dctx[i] * hb);
                super::tensor::axpy(&mut dhbar, dctx[i], wv.value.row(i));
            }

            let wp = params.get_mut(&proj.weight)?;
            wp.grad.add_outer(&dhbar, &cache.raw_mean[h], 1.0);
            let debar = wp.value.matvec_t(&dhbar);
            let p = &cache.probs[h];
            let dp: Vec<f64> = cache.raw.iter().map(|e| dot(&debar, e)).collect();
            let ds = softmax_backward(p, &dp);
            let mut dw = vec![0.0; debar.len()];
            for (dsj, e) in ds.iter().zip(&cache.raw) {
                super::tensor::axpy(&mut dw, dsj * scale, e);
            }
            let du = wp.value.matvec(&dw);
            wp.grad.add_outer(&cache.u[h], &dw, 1.0);
            let bp = params.get_mut(&proj.bias)?;
            for (g, v) in bp.grad.data_mut().iter_mut().zip(&dhbar) {
                *g += v;
            }

            let wk = params.get_mut(&self.name("wk"))?;
            for i in r {
                wk.grad
                    .row_mut(i)
                    .iter_mut()
                    .zip(&du)
                    .for_each(|(g, v)| *g += cache.q[i] * v);
                dq[i] = dot(wk.value.row(i), &du);
            }
        }

        let wq = params.get_mut(&self.name("wq"))?;
        wq.grad.add_outer(&dq, &cache.last, 1.0);
        let g = wq.value.matvec_t(&dq);
        for (a, b) in dlast.iter_mut().zip(&g) {
            *a += b;
        }
        let e_last = cache.raw.last().unwrap();
        params.get_mut(&proj.weight)?.grad.add_outer(&dlast, e_last, 1.0);
        let bp = params.get_mut(&proj.bias)?;
        for (g, v) in bp.grad.data_mut().iter_mut().zip(&dlast) {
            *g += v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn setup(d: usize, heads: usize, seed: u64) -> (Attention, ParamSet, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let att = Attention::new("att", AttentionSpec::new(d, heads).unwrap());
        let mut p = ParamSet::new();
        att.init_params(&mut p, &mut rng).unwrap();
        (att, p, rng)
    }

    #[test]
    fn spec_requires_divisibility() {
        assert!(AttentionSpec::new(32, 5).is_err());
        assert_eq!(AttentionSpec::new(32, 4).unwrap().head_dim(), 8);
    }

    #[test]
    fn singleton_sequence_is_residual_plus_value_path() {
        let (att, p, mut rng) = setup(8, 2, 1);
        let x = randn(&mut rng, 8);
        let (out, _) = att.encode(&p, &[x.clone()]).unwrap();
        let v = p.value("att.wv").unwrap().matvec(&x);
        let o = p.value("att.wo").unwrap().matvec(&v);
        for i in 0..8 {
            assert!((out[i] - (x[i] + o[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_tokens_give_identical_outputs() {
        let (att, p, mut rng) = setup(8, 4, 2);
        let x = randn(&mut rng, 8);
        let outs = att.forward_all(&p, &[x.clone(), x]).unwrap();
        assert_eq!(outs[0], outs[1]);
    }

    #[test]
    fn table_sized_block_output_length() {
        let (att, p, mut rng) = setup(32, 4, 3);
        let seq: Vec<_> = (0..5).map(|_| randn(&mut rng, 32)).collect();
        assert_eq!(att.encode(&p, &seq).unwrap().0.len(), 32);
    }

    #[test]
    fn encode_matches_last_of_forward_all_and_is_bit_stable() {
        let (att, p, mut rng) = setup(12, 3, 4);
        let seq: Vec<_> = (0..6).map(|_| randn(&mut rng, 12)).collect();
        let (a, _) = att.encode(&p, &seq).unwrap();
        let (b, _) = att.encode(&p, &seq).unwrap();
        assert_eq!(a, b);
        let all = att.forward_all(&p, &seq).unwrap();
        for (x, y) in a.iter().zip(all.last().unwrap()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let (att, p, _) = setup(8, 2, 5);
        assert!(att.encode(&p, &[]).is_err());
    }

    fn add_projection(p: &mut ParamSet, d: usize, din: usize, rng: &mut ChaCha8Rng) -> Projection {
        p.insert_glorot("proj.w", d, din, rng).unwrap();
        p.insert("proj.b", Tensor2D::column(&randn(rng, d))).unwrap();
        Projection {
            weight: "proj.w".into(),
            bias: "proj.b".into(),
        }
    }

    fn project(p: &ParamSet, proj: &Projection, raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let w = p.value(&proj.weight).unwrap();
        let b = p.value(&proj.bias).unwrap();
        raw.iter()
            .map(|e| {
                let mut x = w.matvec(e);
                x.iter_mut().zip(b.data()).for_each(|(a, c)| *a += c);
                x
            })
            .collect()
    }

    #[test]
    fn projected_path_matches_explicit_projection() {
        let (att, mut p, mut rng) = setup(16, 4, 6);
        let proj = add_projection(&mut p, 16, 5, &mut rng);
        let raw: Vec<_> = (0..7).map(|_| randn(&mut rng, 5)).collect();
        let up = randn(&mut rng, 16);

        let (fused, fcache) = att.encode_projected(&p, &proj, &raw).unwrap();
        let mut pf = p.clone();
        att.backward_projected(&mut pf, &proj, &fcache, &up).unwrap();

        let seq = project(&p, &proj, &raw);
        let (explicit, ecache) = att.encode(&p, &seq).unwrap();
        let mut pe = p.clone();
        let dx = att.backward(&mut pe, &ecache, &up).unwrap();
        // chain the explicit input gradients through the projection
        for (g, e) in dx.iter().zip(&raw) {
            pe.get_mut("proj.w").unwrap().grad.add_outer(g, e, 1.0);
            let b = pe.get_mut("proj.b").unwrap();
            b.grad.data_mut().iter_mut().zip(g).for_each(|(a, c)| *a += c);
        }

        for (a, b) in fused.iter().zip(&explicit) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        for (name, param) in pf.iter() {
            let other = pe.grad(name).unwrap();
            for (a, b) in param.grad.data().iter().zip(other.data()) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{name}: {a} vs {b}");
            }
        }
    }
}
