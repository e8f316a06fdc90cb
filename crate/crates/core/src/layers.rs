//! Neural layers of the convolution and classification blocks.
//!
//! Each layer ships a forward and a matching backward so the whole network
//! can be trained by hand-chained backpropagation. Public functions use the
//! per-sample shape convention of the architecture table ((channels, 1, len)
//! stage tensors); the `batched` module holds the (batch, channels, len)
//! kernels the model trains with.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two-element probability vector; index 0 is the negative class, index 1
/// the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbPair {
    pub p: [f64; 2],
}

impl ProbPair {
    pub fn new(p: [f64; 2]) -> Self {
        Self { p }
    }

    pub fn negative(&self) -> f64 {
        self.p[0]
    }

    pub fn positive(&self) -> f64 {
        self.p[1]
    }
}

/// Numerically stable softmax (max subtraction before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Full-channel-span depthwise convolution: each of the `F` kernels spans the
/// whole channel axis and collapses it, leaving the time axis untouched.
///
/// `input` is (1, D, L), `weights` is (F, D, 1), output is (F, 1, L).
pub fn depthwise_conv2d(input: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (d, l) = match input.shape() {
        [1, d, l] => (*d, *l),
        s => {
            return Err(Error::Shape(format!(
                "depthwise input must be (1, D, L), got {s:?}"
            )))
        }
    };
    let f = match weights.shape() {
        [f, wd, 1] if *wd == d => *f,
        s => {
            return Err(Error::Shape(format!(
                "depthwise weights must be (F, {d}, 1), got {s:?}"
            )))
        }
    };
    let x = input.clone().reshaped(vec![1, d, l])?;
    let out = batched::depthwise_fwd(&x, weights)?;
    out.reshaped(vec![f, 1, l])
}

/// Separable convolution: zero-pad the time axis by ((K-1)/2, K/2), apply one
/// K-tap kernel per channel, then mix channels with a pointwise (F, F) map.
///
/// `input` is (F, 1, L), `depth_weights` (F, 1, K), `point_weights` (F, F);
/// output keeps the input shape.
pub fn separable_conv2d(
    input: &Tensor,
    depth_weights: &Tensor,
    point_weights: &Tensor,
) -> Result<Tensor> {
    let (f, l) = match input.shape() {
        [f, 1, l] => (*f, *l),
        s => {
            return Err(Error::Shape(format!(
                "separable input must be (F, 1, L), got {s:?}"
            )))
        }
    };
    let x = input.clone().reshaped(vec![1, f, l])?;
    let (out, _) = batched::sepconv_fwd(&x, depth_weights, point_weights)?;
    out.reshaped(vec![f, 1, l])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::filled(vec![channels], 1.0),
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over a (batch, channels, len) tensor.
///
/// Train mode normalizes with batch statistics and folds them into the
/// running estimates with momentum 0.1; eval mode normalizes with the stored
/// running statistics.
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BatchNormState,
    mode: BnMode,
) -> Result<Tensor> {
    let (out, _, update) = batched::batchnorm_fwd(input, gamma, beta, state, mode)?;
    if let Some((mean, var)) = update {
        state.running_mean = mean;
        state.running_var = var;
    }
    Ok(out)
}

/// Exponential linear unit with alpha = 1.
pub fn elu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| elu_scalar(x)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

#[inline]
fn elu_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Non-overlapping average pooling along the last axis; the remainder of a
/// division that does not tile is dropped.
pub fn avg_pool2d(input: &Tensor, pool: usize) -> Result<Tensor> {
    if pool == 0 {
        return Err(Error::Shape("pool size must be >= 1".into()));
    }
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "avg_pool2d expects rank 3, got {shape:?}"
        )));
    }
    let l = shape[2];
    if l < pool {
        return Err(Error::Shape(format!(
            "avg_pool2d: length {l} shorter than pool {pool} (empty output)"
        )));
    }
    batched::avgpool_fwd(input, pool)
}

/// Fully connected layer into a two-class softmax.
pub fn linear_softmax(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<ProbPair> {
    let logits = linear_logits(input, weights, bias)?;
    if logits.len() != 2 {
        return Err(Error::Shape(format!(
            "classifier expects 2 classes, got {}",
            logits.len()
        )));
    }
    let p = softmax(logits.data());
    Ok(ProbPair::new([p[0], p[1]]))
}

/// Affine map z = Wx + b for a single flattened sample.
pub fn linear_logits(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.len();
    let (c, k) = match weights.shape() {
        [c, k] => (*c, *k),
        s => {
            return Err(Error::Shape(format!(
                "linear weights must be rank 2, got {s:?}"
            )))
        }
    };
    if k != n || bias.len() != c {
        return Err(Error::Shape(format!(
            "linear shapes: input {n}, weights ({c}, {k}), bias {}",
            bias.len()
        )));
    }
    let mut z = vec![0.0; c];
    for (ci, zc) in z.iter_mut().enumerate() {
        let row = &weights.data()[ci * k..(ci + 1) * k];
        *zc = bias.data()[ci]
            + row
                .iter()
                .zip(input.data())
                .map(|(w, x)| w * x)
                .sum::<f64>();
    }
    Tensor::new(vec![c], z)
}

/// Cross-entropy of a two-class logit pair against the given label, in the
/// log-sum-exp form: L = -z[y] + log(sum_j exp(z[j])).
pub fn cross_entropy_loss(logits: &Tensor, given_label: u8) -> f64 {
    let z = logits.data();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[given_label as usize]
}

/// Gradient of [`cross_entropy_loss`] with respect to the logits:
/// softmax(z) - onehot(y).
pub fn cross_entropy_grad(logits: &Tensor, given_label: u8) -> Tensor {
    let mut g = softmax(logits.data());
    g[given_label as usize] -= 1.0;
    Tensor::new(vec![logits.len()], g).expect("shape known")
}

/// Batched (batch, channels, len) kernels with explicit backward passes.
pub(crate) mod batched {
    use super::*;

    fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
        match t.shape() {
            [a, b, c] => Ok((*a, *b, *c)),
            s => Err(Error::Shape(format!("{what} must be rank 3, got {s:?}"))),
        }
    }

    /// (N, D, L) x (F, D, 1) -> (N, F, L)
    pub fn depthwise_fwd(x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let (n, d, l) = dims3(x, "depthwise input")?;
        let (f, wd, wk) = dims3(w, "depthwise weights")?;
        if wd != d || wk != 1 {
            return Err(Error::Shape(format!(
                "depthwise weights (F, D, 1) = ({f}, {wd}, {wk}) incompatible with D = {d}"
            )));
        }
        let mut out = Tensor::zeros(vec![n, f, l]);
        let od = out.data_mut();
        for ni in 0..n {
            for fi in 0..f {
                for di in 0..d {
                    let wv = w.data()[fi * d + di];
                    if wv == 0.0 {
                        continue;
                    }
                    let xrow = &x.data()[(ni * d + di) * l..(ni * d + di + 1) * l];
                    let orow = &mut od[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                    for t in 0..l {
                        orow[t] += wv * xrow[t];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn depthwise_bwd(x: &Tensor, w: &Tensor, gout: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, d, l) = dims3(x, "depthwise input")?;
        let (f, _, _) = dims3(w, "depthwise weights")?;
        let mut gx = Tensor::zeros(vec![n, d, l]);
        let mut gw = Tensor::zeros(vec![f, d, 1]);
        {
            let gxd = gx.data_mut();
            for ni in 0..n {
                for fi in 0..f {
                    let grow = &gout.data()[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                    for di in 0..d {
                        let wv = w.data()[fi * d + di];
                        let xoff = (ni * d + di) * l;
                        for t in 0..l {
                            gxd[xoff + t] += wv * grow[t];
                        }
                    }
                }
            }
        }
        {
            let gwd = gw.data_mut();
            for ni in 0..n {
                for fi in 0..f {
                    let grow = &gout.data()[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                    for di in 0..d {
                        let xrow = &x.data()[(ni * d + di) * l..(ni * d + di + 1) * l];
                        let mut acc = 0.0;
                        for t in 0..l {
                            acc += xrow[t] * grow[t];
                        }
                        gwd[fi * d + di] += acc;
                    }
                }
            }
        }
        Ok((gx, gw))
    }

    pub struct SepConvCache {
        pub padded: Tensor,
        pub mid: Tensor,
        pub pad_left: usize,
    }

    /// Zero-pad + per-channel K-tap depthwise stage + pointwise (F, F) mix.
    /// (N, F, L) -> (N, F, L).
    pub fn sepconv_fwd(x: &Tensor, wd: &Tensor, wp: &Tensor) -> Result<(Tensor, SepConvCache)> {
        let (n, f, l) = dims3(x, "separable input")?;
        let (fd, one, k) = dims3(wd, "separable depth weights")?;
        if fd != f || one != 1 {
            return Err(Error::Shape(format!(
                "separable depth weights must be ({f}, 1, K), got ({fd}, {one}, {k})"
            )));
        }
        match wp.shape() {
            [a, b] if *a == f && *b == f => {}
            s => {
                return Err(Error::Shape(format!(
                    "separable point weights must be square ({f}, {f}), got {s:?}"
                )))
            }
        }
        let pad_left = (k - 1) / 2;
        let pad_right = k / 2;
        let lp = l + pad_left + pad_right;
        let mut padded = Tensor::zeros(vec![n, f, lp]);
        {
            let pd = padded.data_mut();
            for ni in 0..n {
                for fi in 0..f {
                    let src = &x.data()[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                    let dst = &mut pd[(ni * f + fi) * lp..(ni * f + fi + 1) * lp];
                    dst[pad_left..pad_left + l].copy_from_slice(src);
                }
            }
        }
        let mut mid = Tensor::zeros(vec![n, f, l]);
        {
            let md = mid.data_mut();
            for ni in 0..n {
                for fi in 0..f {
                    let taps = &wd.data()[fi * k..(fi + 1) * k];
                    let prow = &padded.data()[(ni * f + fi) * lp..(ni * f + fi + 1) * lp];
                    let mrow = &mut md[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                    for t in 0..l {
                        let mut acc = 0.0;
                        for (ki, tap) in taps.iter().enumerate() {
                            acc += tap * prow[t + ki];
                        }
                        mrow[t] = acc;
                    }
                }
            }
        }
        let mut out = Tensor::zeros(vec![n, f, l]);
        {
            let od = out.data_mut();
            for ni in 0..n {
                for gi in 0..f {
                    let orow = &mut od[(ni * f + gi) * l..(ni * f + gi + 1) * l];
                    for fi in 0..f {
                        let wv = wp.data()[gi * f + fi];
                        if wv == 0.0 {
                            continue;
                        }
                        let mrow = &mid.data()[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                        for t in 0..l {
                            orow[t] += wv * mrow[t];
                        }
                    }
                }
            }
        }
        Ok((
            out,
            SepConvCache {
                padded,
                mid,
                pad_left,
            },
        ))
    }

    pub fn sepconv_bwd(
        cache: &SepConvCache,
        wd: &Tensor,
        wp: &Tensor,
        gout: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let (n, f, l) = dims3(gout, "separable gout")?;
        let k = wd.shape()[2];
        let lp = cache.padded.shape()[2];
        let mut gmid = Tensor::zeros(vec![n, f, l]);
        let mut gwp = Tensor::zeros(vec![f, f]);
        {
            let gmd = gmid.data_mut();
            let gwpd = gwp.data_mut();
            for ni in 0..n {
                for gi in 0..f {
                    let grow = &gout.data()[(ni * f + gi) * l..(ni * f + gi + 1) * l];
                    for fi in 0..f {
                        let wv = wp.data()[gi * f + fi];
                        let mrow = &cache.mid.data()[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                        let gm = &mut gmd[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                        let mut acc = 0.0;
                        for t in 0..l {
                            gm[t] += wv * grow[t];
                            acc += mrow[t] * grow[t];
                        }
                        gwpd[gi * f + fi] += acc;
                    }
                }
            }
        }
        let mut gpad = Tensor::zeros(vec![n, f, lp]);
        let mut gwd = Tensor::zeros(vec![f, 1, k]);
        {
            let gpd = gpad.data_mut();
            let gwdd = gwd.data_mut();
            for ni in 0..n {
                for fi in 0..f {
                    let taps = &wd.data()[fi * k..(fi + 1) * k];
                    let prow = &cache.padded.data()[(ni * f + fi) * lp..(ni * f + fi + 1) * lp];
                    let gm = &gmid.data()[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                    let gp = &mut gpd[(ni * f + fi) * lp..(ni * f + fi + 1) * lp];
                    for t in 0..l {
                        let g = gm[t];
                        if g == 0.0 {
                            continue;
                        }
                        for ki in 0..k {
                            gp[t + ki] += taps[ki] * g;
                            gwdd[fi * k + ki] += prow[t + ki] * g;
                        }
                    }
                }
            }
        }
        let mut gx = Tensor::zeros(vec![n, f, l]);
        {
            let gxd = gx.data_mut();
            for ni in 0..n {
                for fi in 0..f {
                    let gp = &gpad.data()[(ni * f + fi) * lp..(ni * f + fi + 1) * lp];
                    let dst = &mut gxd[(ni * f + fi) * l..(ni * f + fi + 1) * l];
                    dst.copy_from_slice(&gp[cache.pad_left..cache.pad_left + l]);
                }
            }
        }
        Ok((gx, gwd, gwp))
    }

    pub struct BnCache {
        pub x_hat: Tensor,
        pub inv_std: Vec<f64>,
        pub group: usize,
    }

    type BnUpdate = Option<(Tensor, Tensor)>;

    /// Returns (output, cache-for-backward, running-stat update).
    /// The update is only produced in train mode and is left to the caller to
    /// commit, so repeated evaluations (finite differencing) stay pure.
    pub fn batchnorm_fwd(
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        state: &BatchNormState,
        mode: BnMode,
    ) -> Result<(Tensor, BnCache, BnUpdate)> {
        let (n, c, l) = dims3(x, "batch_norm input")?;
        if gamma.len() != c || beta.len() != c || state.running_mean.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm channel mismatch: input C = {c}, gamma {}, beta {}, state {}",
                gamma.len(),
                beta.len(),
                state.running_mean.len()
            )));
        }
        let group = n * l;
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut sum = 0.0;
                    for ni in 0..n {
                        let row = &x.data()[(ni * c + ci) * l..(ni * c + ci + 1) * l];
                        sum += row.iter().sum::<f64>();
                    }
                    let m = sum / group as f64;
                    let mut sq = 0.0;
                    for ni in 0..n {
                        let row = &x.data()[(ni * c + ci) * l..(ni * c + ci + 1) * l];
                        sq += row.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    mean[ci] = m;
                    var[ci] = sq / group as f64;
                }
                (mean, var)
            }
            BnMode::Eval => (
                state.running_mean.data().to_vec(),
                state.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = Tensor::zeros(vec![n, c, l]);
        let mut out = Tensor::zeros(vec![n, c, l]);
        {
            let xh = x_hat.data_mut();
            let od = out.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let off = (ni * c + ci) * l;
                    let g = gamma.data()[ci];
                    let b = beta.data()[ci];
                    for t in 0..l {
                        let h = (x.data()[off + t] - mean[ci]) * inv_std[ci];
                        xh[off + t] = h;
                        od[off + t] = g * h + b;
                    }
                }
            }
        }
        let update = match mode {
            BnMode::Train => {
                let mut rm = state.running_mean.data().to_vec();
                let mut rv = state.running_var.data().to_vec();
                for ci in 0..c {
                    rm[ci] = (1.0 - BN_MOMENTUM) * rm[ci] + BN_MOMENTUM * mean[ci];
                    rv[ci] = (1.0 - BN_MOMENTUM) * rv[ci] + BN_MOMENTUM * var[ci];
                }
                Some((Tensor::from_vec(rm), Tensor::from_vec(rv)))
            }
            BnMode::Eval => None,
        };
        Ok((
            out,
            BnCache {
                x_hat,
                inv_std,
                group,
            },
            update,
        ))
    }

    /// Backward through train-mode batch statistics.
    pub fn batchnorm_bwd(
        cache: &BnCache,
        gamma: &Tensor,
        gout: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let (n, c, l) = dims3(gout, "batch_norm gout")?;
        let m = cache.group as f64;
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        let mut sum_dxhat = vec![0.0; c];
        let mut sum_dxhat_xhat = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * l;
                let g = gamma.data()[ci];
                for t in 0..l {
                    let go = gout.data()[off + t];
                    let xh = cache.x_hat.data()[off + t];
                    ggamma[ci] += go * xh;
                    gbeta[ci] += go;
                    let dxh = go * g;
                    sum_dxhat[ci] += dxh;
                    sum_dxhat_xhat[ci] += dxh * xh;
                }
            }
        }
        let mut gx = Tensor::zeros(vec![n, c, l]);
        {
            let gxd = gx.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let off = (ni * c + ci) * l;
                    let g = gamma.data()[ci];
                    let is = cache.inv_std[ci];
                    for t in 0..l {
                        let dxh = gout.data()[off + t] * g;
                        let xh = cache.x_hat.data()[off + t];
                        gxd[off + t] =
                            (is / m) * (m * dxh - sum_dxhat[ci] - xh * sum_dxhat_xhat[ci]);
                    }
                }
            }
        }
        Ok((gx, Tensor::from_vec(ggamma), Tensor::from_vec(gbeta)))
    }

    /// Eval-mode backward: statistics are constants, so the chain is affine.
    pub fn batchnorm_bwd_eval(
        cache: &BnCache,
        gamma: &Tensor,
        gout: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let (n, c, l) = dims3(gout, "batch_norm gout")?;
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        let mut gx = Tensor::zeros(vec![n, c, l]);
        let gxd = gx.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * l;
                let g = gamma.data()[ci];
                let is = cache.inv_std[ci];
                for t in 0..l {
                    let go = gout.data()[off + t];
                    let xh = cache.x_hat.data()[off + t];
                    ggamma[ci] += go * xh;
                    gbeta[ci] += go;
                    gxd[off + t] = go * g * is;
                }
            }
        }
        Ok((gx, Tensor::from_vec(ggamma), Tensor::from_vec(gbeta)))
    }

    pub fn elu_fwd(x: &Tensor) -> Tensor {
        super::elu(x)
    }

    pub fn elu_bwd(x: &Tensor, gout: &Tensor) -> Tensor {
        let data = x
            .data()
            .iter()
            .zip(gout.data())
            .map(|(&xi, &g)| if xi >= 0.0 { g } else { g * xi.exp() })
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn avgpool_fwd(x: &Tensor, pool: usize) -> Result<Tensor> {
        let (n, c, l) = dims3(x, "avg_pool input")?;
        let lo = l / pool;
        if lo == 0 {
            return Err(Error::Shape(format!(
                "avg_pool: length {l} shorter than pool {pool} (empty output)"
            )));
        }
        let mut out = Tensor::zeros(vec![n, c, lo]);
        let od = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let row = &x.data()[(ni * c + ci) * l..(ni * c + ci + 1) * l];
                let orow = &mut od[(ni * c + ci) * lo..(ni * c + ci + 1) * lo];
                for (t, o) in orow.iter_mut().enumerate() {
                    *o = row[t * pool..(t + 1) * pool].iter().sum::<f64>() / pool as f64;
                }
            }
        }
        Ok(out)
    }

    pub fn avgpool_bwd(input_len: usize, pool: usize, gout: &Tensor) -> Result<Tensor> {
        let (n, c, lo) = dims3(gout, "avg_pool gout")?;
        let mut gx = Tensor::zeros(vec![n, c, input_len]);
        let gxd = gx.data_mut();
        let scale = 1.0 / pool as f64;
        for ni in 0..n {
            for ci in 0..c {
                let grow = &gout.data()[(ni * c + ci) * lo..(ni * c + ci + 1) * lo];
                let xrow = &mut gxd[(ni * c + ci) * input_len..(ni * c + ci + 1) * input_len];
                for t in 0..lo {
                    let g = grow[t] * scale;
                    for k in 0..pool {
                        xrow[t * pool + k] = g;
                    }
                }
            }
        }
        Ok(gx)
    }

    /// (N, K) x (C, K)^T + b -> (N, C)
    pub fn linear_fwd(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (n, k) = match x.shape() {
            [n, k] => (*n, *k),
            s => {
                return Err(Error::Shape(format!(
                    "linear input must be rank 2, got {s:?}"
                )))
            }
        };
        let (c, wk) = match w.shape() {
            [c, wk] => (*c, *wk),
            s => {
                return Err(Error::Shape(format!(
                    "linear weights must be rank 2, got {s:?}"
                )))
            }
        };
        if wk != k || b.len() != c {
            return Err(Error::Shape(format!(
                "linear shapes: input (., {k}), weights ({c}, {wk}), bias {}",
                b.len()
            )));
        }
        let mut out = Tensor::zeros(vec![n, c]);
        let od = out.data_mut();
        for ni in 0..n {
            let xrow = &x.data()[ni * k..(ni + 1) * k];
            for ci in 0..c {
                let wrow = &w.data()[ci * k..(ci + 1) * k];
                od[ni * c + ci] =
                    b.data()[ci] + wrow.iter().zip(xrow).map(|(wv, xv)| wv * xv).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn linear_bwd(x: &Tensor, w: &Tensor, gout: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (n, k) = (x.shape()[0], x.shape()[1]);
        let c = w.shape()[0];
        let mut gx = Tensor::zeros(vec![n, k]);
        let mut gw = Tensor::zeros(vec![c, k]);
        let mut gb = Tensor::zeros(vec![c]);
        {
            let gxd = gx.data_mut();
            let gwd = gw.data_mut();
            let gbd = gb.data_mut();
            for ni in 0..n {
                let xrow = &x.data()[ni * k..(ni + 1) * k];
                for ci in 0..c {
                    let g = gout.data()[ni * c + ci];
                    gbd[ci] += g;
                    let wrow = &w.data()[ci * k..(ci + 1) * k];
                    for ki in 0..k {
                        gxd[ni * k + ki] += wrow[ki] * g;
                        gwd[ci * k + ki] += xrow[ki] * g;
                    }
                }
            }
        }
        Ok((gx, gw, gb))
    }

    /// Mean cross entropy over the batch plus the logit gradient.
    pub fn softmax_ce(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
        let (n, c) = match logits.shape() {
            [n, c] => (*n, *c),
            s => return Err(Error::Shape(format!("logits must be rank 2, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for batch of {n}",
                labels.len()
            )));
        }
        let mut loss = 0.0;
        let mut grad = Tensor::zeros(vec![n, c]);
        let gd = grad.data_mut();
        for ni in 0..n {
            let row = &logits.data()[ni * c..(ni + 1) * c];
            let p = softmax(row);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[labels[ni] as usize];
            for ci in 0..c {
                let onehot = if ci == labels[ni] as usize { 1.0 } else { 0.0 };
                gd[ni * c + ci] = (p[ci] - onehot) / n as f64;
            }
        }
        Ok((loss / n as f64, grad))
    }
}
