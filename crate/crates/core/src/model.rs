//! The full network: per-channel encoder stacks feeding a depthwise +
//! separable convolution block and a two-class softmax head.
//!
//! Training is full-batch Adam on the cross-entropy loss with hand-chained
//! backpropagation through every stage, encoder weights included. Batch-norm
//! running statistics accumulate during supervised training only and drive
//! eval-mode inference.

use crate::dbn::{self, DbnStack, RbmLayer};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckReport};
use crate::layers::{batched, BatchNormState, ProbPair};
use crate::params::{adam_step, AdamState, ParamId, ParamSet};
use crate::ppg::{FeatureMatrix, FEATURE_NAMES};
use crate::rng::{uniform, SeededRng};
use crate::tensor::Tensor;

pub const DEFAULT_FILTERS: usize = 16;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_MAX_EPOCHS: usize = 100;
/// First pooling width (fixed by the architecture).
pub const POOL1: usize = 4;
/// Convergence: stop when the epoch-mean loss improves by less than this for
/// `CONVERGENCE_PATIENCE` consecutive epochs.
pub const CONVERGENCE_DELTA: f64 = 1e-5;
pub const CONVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Feature channels (rows of the input matrix).
    pub dm: usize,
    /// Window count (columns of the input matrix).
    pub t: usize,
    /// First and second encoder widths.
    pub h1: usize,
    pub h2: usize,
    /// Convolution filters.
    pub filters: usize,
    /// Second pooling width, min(h2/4, 8).
    pub pool2: usize,
    /// Output classes.
    pub classes: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Optional sigmoid activation inside the encoder stacks (off: the
    /// encoder is linear, exactly as the update equations are written).
    pub dbn_sigmoid: bool,
}

impl HyperParams {
    /// Hyperparameters for an input of `dm` channels by `t` points. Encoder
    /// widths follow the 70 -> 50 -> 25 ratio of the reference input,
    /// clamped to [8, 50].
    pub fn for_input(dm: usize, t: usize) -> Result<Self> {
        let h1 = ((t as f64 * 5.0 / 7.0).round() as usize).clamp(8, 50);
        let h2 = h1 / 2;
        let hp = Self {
            dm,
            t,
            h1,
            h2,
            filters: DEFAULT_FILTERS,
            pool2: (h2 / POOL1).min(8),
            classes: 2,
            lr: DEFAULT_LR,
            max_epochs: DEFAULT_MAX_EPOCHS,
            dbn_sigmoid: false,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// The pulse-wave configuration: 38 features over 70 windows.
    pub fn ppg() -> Self {
        Self::for_input(38, 70).expect("reference configuration is valid")
    }

    /// Re-derives pool2 after overriding h2.
    pub fn with_widths(mut self, h1: usize, h2: usize) -> Result<Self> {
        self.h1 = h1;
        self.h2 = h2;
        self.pool2 = (h2 / POOL1).min(8);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dm == 0 {
            problems.push("dm must be >= 1".to_string());
        }
        if self.t == 0 {
            problems.push("t must be >= 1".to_string());
        }
        if self.h1 == 0 || self.h2 == 0 {
            problems.push(format!(
                "encoder widths h1 {} h2 {} must be >= 1",
                self.h1, self.h2
            ));
        }
        if self.h2 / POOL1 == 0 {
            problems.push(format!("h2 {} too small for pooling by {POOL1}", self.h2));
        }
        if self.pool2 == 0 {
            problems.push("pool2 must be >= 1".to_string());
        }
        if self.filters == 0 {
            problems.push("filters must be >= 1".to_string());
        }
        if self.classes != 2 {
            problems.push(format!(
                "classes {} unsupported (binary only)",
                self.classes
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Length after the first pooling.
    pub fn len_pool1(&self) -> usize {
        self.h2 / POOL1
    }

    /// Length after the second pooling.
    pub fn len_pool2(&self) -> usize {
        self.len_pool1() / self.pool2
    }

    pub fn flatten_dim(&self) -> usize {
        self.filters * self.len_pool2()
    }

    /// Per-stage output shapes in the per-sample convention.
    pub fn stage_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("input", vec![1, self.dm, self.t]),
            ("encoded", vec![self.dm, self.h2]),
            ("depthwise", vec![self.filters, 1, self.h2]),
            ("pool1", vec![self.filters, 1, self.len_pool1()]),
            ("separable", vec![self.filters, 1, self.len_pool1()]),
            ("pool2", vec![self.filters, 1, self.len_pool2()]),
            ("flatten", vec![self.flatten_dim()]),
            ("logits", vec![self.classes]),
        ]
    }
}

/// Parameter handles of one encoder stack.
#[derive(Debug, Clone, Copy)]
pub struct StackIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub bs1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub bs2: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModelIds {
    pub stacks: Vec<StackIds>,
    pub depthwise: ParamId,
    pub bn1_gamma: ParamId,
    pub bn1_beta: ParamId,
    pub sep_depth: ParamId,
    pub sep_point: ParamId,
    pub bn2_gamma: ParamId,
    pub bn2_beta: ParamId,
    pub linear_w: ParamId,
    pub linear_b: ParamId,
}

/// Every trainable tensor of the network plus batch-norm running state.
#[derive(Debug, Clone)]
pub struct TnanetParams {
    pub hp: HyperParams,
    pub set: ParamSet,
    pub ids: ModelIds,
    pub bn1: BatchNormState,
    pub bn2: BatchNormState,
}

fn uniform_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let scale = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| uniform(rng, -scale, scale)).collect())
        .expect("consistent shape")
}

impl TnanetParams {
    /// Random initialization: weights uniform in +-sqrt(1/fan_in), biases
    /// zero, batch-norm scale one / shift zero.
    pub fn init(hp: HyperParams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = crate::rng::seeded_rng(seed);
        let mut set = ParamSet::new();
        let mut stacks = Vec::with_capacity(hp.dm);
        for c in 0..hp.dm {
            let w1 = set.insert(
                format!("dbn{c}.rbm1.w"),
                uniform_tensor(vec![hp.h1, hp.t], hp.t, &mut rng),
            )?;
            let b1 = set.insert(format!("dbn{c}.rbm1.b"), Tensor::zeros(vec![hp.h1]))?;
            let bs1 = set.insert(format!("dbn{c}.rbm1.b_star"), Tensor::zeros(vec![hp.t]))?;
            let w2 = set.insert(
                format!("dbn{c}.rbm2.w"),
                uniform_tensor(vec![hp.h2, hp.h1], hp.h1, &mut rng),
            )?;
            let b2 = set.insert(format!("dbn{c}.rbm2.b"), Tensor::zeros(vec![hp.h2]))?;
            let bs2 = set.insert(format!("dbn{c}.rbm2.b_star"), Tensor::zeros(vec![hp.h1]))?;
            stacks.push(StackIds {
                w1,
                b1,
                bs1,
                w2,
                b2,
                bs2,
            });
        }
        let depthwise = set.insert(
            "conv.depthwise",
            uniform_tensor(vec![hp.filters, hp.dm, 1], hp.dm, &mut rng),
        )?;
        let bn1_gamma = set.insert("bn1.gamma", Tensor::filled(vec![hp.filters], 1.0))?;
        let bn1_beta = set.insert("bn1.beta", Tensor::zeros(vec![hp.filters]))?;
        let sep_depth = set.insert(
            "conv.sep_depth",
            uniform_tensor(vec![hp.filters, 1, hp.filters], hp.filters, &mut rng),
        )?;
        let sep_point = set.insert(
            "conv.sep_point",
            uniform_tensor(vec![hp.filters, hp.filters], hp.filters, &mut rng),
        )?;
        let bn2_gamma = set.insert("bn2.gamma", Tensor::filled(vec![hp.filters], 1.0))?;
        let bn2_beta = set.insert("bn2.beta", Tensor::zeros(vec![hp.filters]))?;
        let linear_w = set.insert(
            "cls.w",
            uniform_tensor(
                vec![hp.classes, hp.flatten_dim()],
                hp.flatten_dim(),
                &mut rng,
            ),
        )?;
        let linear_b = set.insert("cls.b", Tensor::zeros(vec![hp.classes]))?;
        Ok(Self {
            hp,
            set,
            ids: ModelIds {
                stacks,
                depthwise,
                bn1_gamma,
                bn1_beta,
                sep_depth,
                sep_point,
                bn2_gamma,
                bn2_beta,
                linear_w,
                linear_b,
            },
            bn1: BatchNormState::new(hp.filters),
            bn2: BatchNormState::new(hp.filters),
        })
    }

    /// Clones one encoder stack out of the parameter set.
    pub fn stack(&self, c: usize) -> DbnStack {
        let ids = &self.ids.stacks[c];
        DbnStack {
            layers: [
                RbmLayer {
                    w: self.set.value(ids.w1).clone(),
                    b: self.set.value(ids.b1).clone(),
                    b_star: self.set.value(ids.bs1).clone(),
                },
                RbmLayer {
                    w: self.set.value(ids.w2).clone(),
                    b: self.set.value(ids.b2).clone(),
                    b_star: self.set.value(ids.bs2).clone(),
                },
            ],
            channel_index: c,
        }
    }

    pub fn store_stack(&mut self, c: usize, stack: &DbnStack) {
        let ids = self.ids.stacks[c];
        *self.set.value_mut(ids.w1) = stack.layers[0].w.clone();
        *self.set.value_mut(ids.b1) = stack.layers[0].b.clone();
        *self.set.value_mut(ids.bs1) = stack.layers[0].b_star.clone();
        *self.set.value_mut(ids.w2) = stack.layers[1].w.clone();
        *self.set.value_mut(ids.b2) = stack.layers[1].b.clone();
        *self.set.value_mut(ids.bs2) = stack.layers[1].b_star.clone();
    }
}

fn check_input(hp: &HyperParams, m: &FeatureMatrix) -> Result<()> {
    if m.dm() != hp.dm || m.t() != hp.t {
        return Err(Error::Shape(format!(
            "input stage: matrix ({}, {}) does not match configuration ({}, {})",
            m.dm(),
            m.t(),
            hp.dm,
            hp.t
        )));
    }
    Ok(())
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
    /// Post-activation hidden vectors of the first encoder layer, (N, D, H1).
    h1: Tensor,
    /// Encoder output (N, D, H2).
    enc: Tensor,
    z1_bn: batched::BnCache,
    /// Output of the first batch norm (elu input), (N, F, H2).
    a1: Tensor,
    sep: batched::SepConvCache,
    z2_bn: batched::BnCache,
    /// Output of the second batch norm (elu input), (N, F, len_pool1).
    a2: Tensor,
    /// Flattened features entering the classifier, (N, flat).
    flat: Tensor,
    logits: Tensor,
    batch_stats: bool,
}

fn encode_batch(
    hp: &HyperParams,
    ids: &ModelIds,
    set: &ParamSet,
    mats: &[&FeatureMatrix],
) -> Result<(Tensor, Tensor)> {
    let n = mats.len();
    let mut h1_all = Tensor::zeros(vec![n, hp.dm, hp.h1]);
    let mut enc = Tensor::zeros(vec![n, hp.dm, hp.h2]);
    for (ni, m) in mats.iter().enumerate() {
        check_input(hp, m)?;
        for (c, sid) in ids.stacks.iter().enumerate() {
            let mut h1 = dbn::affine(set.value(sid.w1), set.value(sid.b1), m.row(c));
            if hp.dbn_sigmoid {
                h1.iter_mut().for_each(|x| *x = dbn::sigmoid(*x));
            }
            let mut h2 = dbn::affine(set.value(sid.w2), set.value(sid.b2), &h1);
            if hp.dbn_sigmoid {
                h2.iter_mut().for_each(|x| *x = dbn::sigmoid(*x));
            }
            let off1 = (ni * hp.dm + c) * hp.h1;
            h1_all.data_mut()[off1..off1 + hp.h1].copy_from_slice(&h1);
            let off2 = (ni * hp.dm + c) * hp.h2;
            enc.data_mut()[off2..off2 + hp.h2].copy_from_slice(&h2);
        }
    }
    Ok((h1_all, enc))
}

type BnUpdates = (Option<(Tensor, Tensor)>, Option<(Tensor, Tensor)>);

/// Forward over a batch. With `batch_stats` the batch-norm layers normalize
/// by batch statistics (training semantics) and propose running-stat
/// updates; otherwise they read the stored running statistics.
fn forward_core(
    hp: &HyperParams,
    ids: &ModelIds,
    bn1: &BatchNormState,
    bn2: &BatchNormState,
    set: &ParamSet,
    mats: &[&FeatureMatrix],
    batch_stats: bool,
) -> Result<(ForwardCache, BnUpdates)> {
    if mats.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let mode = if batch_stats {
        crate::layers::BnMode::Train
    } else {
        crate::layers::BnMode::Eval
    };
    let (h1, enc) = encode_batch(hp, ids, set, mats)?;
    let z1 = batched::depthwise_fwd(&enc, set.value(ids.depthwise))
        .map_err(|e| Error::Shape(format!("depthwise stage: {e}")))?;
    let (a1, z1_bn, up1) = batched::batchnorm_fwd(
        &z1,
        set.value(ids.bn1_gamma),
        set.value(ids.bn1_beta),
        bn1,
        mode,
    )
    .map_err(|e| Error::Shape(format!("first batch-norm stage: {e}")))?;
    let e1 = batched::elu_fwd(&a1);
    let p1 = batched::avgpool_fwd(&e1, POOL1)
        .map_err(|e| Error::Shape(format!("first pooling stage: {e}")))?;
    let (z2, sep) = batched::sepconv_fwd(&p1, set.value(ids.sep_depth), set.value(ids.sep_point))
        .map_err(|e| Error::Shape(format!("separable stage: {e}")))?;
    let (a2, z2_bn, up2) = batched::batchnorm_fwd(
        &z2,
        set.value(ids.bn2_gamma),
        set.value(ids.bn2_beta),
        bn2,
        mode,
    )
    .map_err(|e| Error::Shape(format!("second batch-norm stage: {e}")))?;
    let e2 = batched::elu_fwd(&a2);
    let p2 = batched::avgpool_fwd(&e2, hp.pool2)
        .map_err(|e| Error::Shape(format!("second pooling stage: {e}")))?;
    let n = mats.len();
    let flat = p2
        .reshaped(vec![n, hp.flatten_dim()])
        .map_err(|e| Error::Shape(format!("flatten stage: {e}")))?;
    let logits = batched::linear_fwd(&flat, set.value(ids.linear_w), set.value(ids.linear_b))
        .map_err(|e| Error::Shape(format!("classifier stage: {e}")))?;
    debug_assert!(logits.all_finite(), "non-finite logits");
    Ok((
        ForwardCache {
            h1,
            enc,
            z1_bn,
            a1,
            sep,
            z2_bn,
            a2,
            flat,
            logits,
            batch_stats,
        },
        (up1, up2),
    ))
}

/// Mean loss over the batch plus gradient accumulation into `set`.
fn loss_and_grads_core(
    hp: &HyperParams,
    ids: &ModelIds,
    bn1: &BatchNormState,
    bn2: &BatchNormState,
    set: &mut ParamSet,
    mats: &[&FeatureMatrix],
    labels: &[u8],
) -> Result<(f64, BnUpdates)> {
    let (cache, updates) = forward_core(hp, ids, bn1, bn2, set, mats, true)?;
    let (loss, gz) = batched::softmax_ce(&cache.logits, labels)?;
    let (gflat, gw_lin, gb_lin) = batched::linear_bwd(&cache.flat, set.value(ids.linear_w), &gz)?;
    let n = mats.len();
    let gp2 = gflat.reshaped(vec![n, hp.filters, hp.len_pool2()])?;
    let ge2 = batched::avgpool_bwd(hp.len_pool1(), hp.pool2, &gp2)?;
    let ga2 = batched::elu_bwd(&cache.a2, &ge2);
    let (gz2, gg2, gb2) = if cache.batch_stats {
        batched::batchnorm_bwd(&cache.z2_bn, set.value(ids.bn2_gamma), &ga2)?
    } else {
        batched::batchnorm_bwd_eval(&cache.z2_bn, set.value(ids.bn2_gamma), &ga2)?
    };
    let (gp1, gw_sepd, gw_sepp) = batched::sepconv_bwd(
        &cache.sep,
        set.value(ids.sep_depth),
        set.value(ids.sep_point),
        &gz2,
    )?;
    let ge1 = batched::avgpool_bwd(hp.h2, POOL1, &gp1)?;
    let ga1 = batched::elu_bwd(&cache.a1, &ge1);
    let (gz1, gg1, gb1) = if cache.batch_stats {
        batched::batchnorm_bwd(&cache.z1_bn, set.value(ids.bn1_gamma), &ga1)?
    } else {
        batched::batchnorm_bwd_eval(&cache.z1_bn, set.value(ids.bn1_gamma), &ga1)?
    };
    let (genc, gw_dw) = batched::depthwise_bwd(&cache.enc, set.value(ids.depthwise), &gz1)?;

    // Encoder backward, channel by channel.
    for (c, sid) in ids.stacks.iter().enumerate() {
        let mut gw1 = Tensor::zeros(vec![hp.h1, hp.t]);
        let mut gb1v = Tensor::zeros(vec![hp.h1]);
        let mut gw2 = Tensor::zeros(vec![hp.h2, hp.h1]);
        let mut gb2v = Tensor::zeros(vec![hp.h2]);
        for (ni, m) in mats.iter().enumerate() {
            let off2 = (ni * hp.dm + c) * hp.h2;
            let off1 = (ni * hp.dm + c) * hp.h1;
            let h1 = &cache.h1.data()[off1..off1 + hp.h1];
            let enc = &cache.enc.data()[off2..off2 + hp.h2];
            let mut gh2: Vec<f64> = genc.data()[off2..off2 + hp.h2].to_vec();
            if hp.dbn_sigmoid {
                for (g, &y) in gh2.iter_mut().zip(enc) {
                    *g *= y * (1.0 - y);
                }
            }
            let w2 = set.value(sid.w2);
            for k in 0..hp.h2 {
                let g = gh2[k];
                if g == 0.0 {
                    continue;
                }
                gb2v.data_mut()[k] += g;
                let row = &mut gw2.data_mut()[k * hp.h1..(k + 1) * hp.h1];
                for (j, hv) in h1.iter().enumerate() {
                    row[j] += g * hv;
                }
            }
            let mut gh1 = vec![0.0; hp.h1];
            for k in 0..hp.h2 {
                let g = gh2[k];
                if g == 0.0 {
                    continue;
                }
                let row = &w2.data()[k * hp.h1..(k + 1) * hp.h1];
                for (j, wv) in row.iter().enumerate() {
                    gh1[j] += wv * g;
                }
            }
            if hp.dbn_sigmoid {
                for (g, &y) in gh1.iter_mut().zip(h1) {
                    *g *= y * (1.0 - y);
                }
            }
            let v = m.row(c);
            for k in 0..hp.h1 {
                let g = gh1[k];
                if g == 0.0 {
                    continue;
                }
                gb1v.data_mut()[k] += g;
                let row = &mut gw1.data_mut()[k * hp.t..(k + 1) * hp.t];
                for (j, xv) in v.iter().enumerate() {
                    row[j] += g * xv;
                }
            }
        }
        set.add_grad(sid.w1, &gw1);
        set.add_grad(sid.b1, &gb1v);
        set.add_grad(sid.w2, &gw2);
        set.add_grad(sid.b2, &gb2v);
    }
    set.add_grad(ids.depthwise, &gw_dw);
    set.add_grad(ids.bn1_gamma, &gg1);
    set.add_grad(ids.bn1_beta, &gb1);
    set.add_grad(ids.sep_depth, &gw_sepd);
    set.add_grad(ids.sep_point, &gw_sepp);
    set.add_grad(ids.bn2_gamma, &gg2);
    set.add_grad(ids.bn2_beta, &gb2);
    set.add_grad(ids.linear_w, &gw_lin);
    set.add_grad(ids.linear_b, &gb_lin);
    Ok((loss, updates))
}

/// Forward pass of one sample. Train mode uses per-batch statistics (here
/// the single sample) and folds them into the running estimates; eval mode
/// normalizes with the stored running statistics and leaves them untouched.
pub fn forward(
    params: &mut TnanetParams,
    matrix: &FeatureMatrix,
    train_mode: bool,
) -> Result<(Tensor, ProbPair)> {
    let (cache, updates) = forward_core(
        &params.hp,
        &params.ids,
        &params.bn1,
        &params.bn2,
        &params.set,
        &[matrix],
        train_mode,
    )?;
    if train_mode {
        commit_bn(params, updates);
    }
    let logits = Tensor::from_vec(cache.logits.data().to_vec());
    let p = crate::layers::softmax(logits.data());
    Ok((logits, ProbPair::new([p[0], p[1]])))
}

/// Eval-mode forward of one sample; immutable and reusable across threads.
pub fn predict(params: &TnanetParams, matrix: &FeatureMatrix) -> Result<(Tensor, ProbPair)> {
    let (cache, _) = forward_core(
        &params.hp,
        &params.ids,
        &params.bn1,
        &params.bn2,
        &params.set,
        &[matrix],
        false,
    )?;
    let logits = Tensor::from_vec(cache.logits.data().to_vec());
    let p = crate::layers::softmax(logits.data());
    Ok((logits, ProbPair::new([p[0], p[1]])))
}

/// Label rule: negative wins ties.
pub fn predict_label(p: &ProbPair) -> u8 {
    if p.p[0] >= p.p[1] {
        0
    } else {
        1
    }
}

fn commit_bn(params: &mut TnanetParams, updates: BnUpdates) {
    if let Some((m, v)) = updates.0 {
        params.bn1.running_mean = m;
        params.bn1.running_var = v;
    }
    if let Some((m, v)) = updates.1 {
        params.bn2.running_mean = m;
        params.bn2.running_var = v;
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub losses: Vec<f64>,
}

/// Full-batch supervised training with the convergence rule: stop at
/// `max_epochs` or once the mean loss improves by less than 1e-5 for 10
/// consecutive epochs.
pub fn supervised_train(
    params: &mut TnanetParams,
    train_set: &[(&FeatureMatrix, u8)],
) -> Result<TrainSummary> {
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mats: Vec<&FeatureMatrix> = train_set.iter().map(|(m, _)| *m).collect();
    let labels: Vec<u8> = train_set.iter().map(|(_, y)| *y).collect();
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Training("labels must be 0 or 1".into()));
    }
    let mut adam = AdamState::new(params.hp.lr);
    let mut losses = Vec::with_capacity(params.hp.max_epochs);
    let mut streak = 0usize;
    for epoch in 0..params.hp.max_epochs {
        params.set.zero_grads();
        let hp = params.hp;
        let (loss, updates) = loss_and_grads_core(
            &hp,
            &params.ids.clone(),
            &params.bn1.clone(),
            &params.bn2.clone(),
            &mut params.set,
            &mats,
            &labels,
        )?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {loss} at epoch {epoch} (batch of {}, lr {})",
                mats.len(),
                hp.lr
            )));
        }
        commit_bn(params, updates);
        adam_step(&mut params.set, &mut adam);
        if let Some(&prev) = losses.last() {
            if prev - loss < CONVERGENCE_DELTA {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        losses.push(loss);
        if streak >= CONVERGENCE_PATIENCE {
            break;
        }
    }
    Ok(TrainSummary {
        epochs_run: losses.len(),
        losses,
    })
}

/// Self-supervised pre-training of the encoder stacks on the given matrices
/// (no labels enter this API).
pub fn self_supervised_train(
    params: &mut TnanetParams,
    mats: &[&FeatureMatrix],
    rng: &mut SeededRng,
) -> Result<()> {
    if mats.is_empty() {
        return Err(Error::Training("self-supervised set is empty".into()));
    }
    for m in mats {
        check_input(&params.hp, m)?;
    }
    let use_sigmoid = params.hp.dbn_sigmoid;
    let lr = params.hp.lr;
    for c in 0..params.hp.dm {
        let mut stack = params.stack(c);
        let data: Vec<Vec<f64>> = mats.iter().map(|m| m.row(c).to_vec()).collect();
        dbn::train_rbm(
            &mut stack.layers[0],
            &data,
            dbn::SELF_SUPERVISED_EPOCHS,
            lr,
            use_sigmoid,
            rng,
        )?;
        let hidden: Vec<Vec<f64>> = data
            .iter()
            .map(|v| {
                let mut h = dbn::affine(&stack.layers[0].w, &stack.layers[0].b, v);
                if use_sigmoid {
                    h.iter_mut().for_each(|x| *x = dbn::sigmoid(*x));
                }
                h
            })
            .collect();
        dbn::train_rbm(
            &mut stack.layers[1],
            &hidden,
            dbn::SELF_SUPERVISED_EPOCHS,
            lr,
            use_sigmoid,
            rng,
        )?;
        params.store_stack(c, &stack);
    }
    Ok(())
}

/// Feature ranking from the depthwise weights: score d is the mean absolute
/// weight over filters, descending, ties by feature index.
pub fn feature_importance(params: &TnanetParams) -> Vec<(String, f64)> {
    let hp = &params.hp;
    let w = params.set.value(params.ids.depthwise);
    let mut scored: Vec<(usize, f64)> = (0..hp.dm)
        .map(|d| {
            let sum: f64 = (0..hp.filters).map(|f| w.data()[f * hp.dm + d].abs()).sum();
            (d, sum / hp.filters as f64)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite scores")
            .then(a.0.cmp(&b.0))
    });
    scored
        .into_iter()
        .map(|(d, s)| {
            let name = if hp.dm == FEATURE_NAMES.len() {
                FEATURE_NAMES[d].to_string()
            } else {
                format!("ch{d}")
            };
            (name, s)
        })
        .collect()
}

/// Verifies the full model's analytic gradients against central finite
/// differences on one (sample, label) pair.
pub fn gradient_check_model(
    params: &mut TnanetParams,
    matrix: &FeatureMatrix,
    label: u8,
    rng: &mut SeededRng,
) -> Result<GradCheckReport> {
    let hp = params.hp;
    let ids = params.ids.clone();
    let bn1 = params.bn1.clone();
    let bn2 = params.bn2.clone();
    gradcheck::gradient_check(
        &mut params.set,
        |set| {
            loss_and_grads_core(&hp, &ids, &bn1, &bn2, set, &[matrix], &[label])
                .map(|(loss, _)| loss)
        },
        |set| {
            let (cache, _) = forward_core(&hp, &ids, &bn1, &bn2, set, &[matrix], true)?;
            let (loss, _) = batched::softmax_ce(&cache.logits, &[label])?;
            Ok(loss)
        },
        rng,
    )
}

/// Batched eval-mode logits for a set of samples (used by the pipeline).
pub fn predict_batch(params: &TnanetParams, mats: &[&FeatureMatrix]) -> Result<Vec<ProbPair>> {
    let (cache, _) = forward_core(
        &params.hp,
        &params.ids,
        &params.bn1,
        &params.bn2,
        &params.set,
        mats,
        false,
    )?;
    let n = mats.len();
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let row = &cache.logits.data()[ni * 2..(ni + 1) * 2];
        let p = crate::layers::softmax(row);
        out.push(ProbPair::new([p[0], p[1]]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn constant_matrix(hp: &HyperParams, fill: impl Fn(usize, usize) -> f64) -> FeatureMatrix {
        let mut data = vec![0.0; hp.dm * hp.t];
        for d in 0..hp.dm {
            for t in 0..hp.t {
                data[d * hp.t + t] = fill(d, t);
            }
        }
        FeatureMatrix::from_channels(Tensor::new(vec![hp.dm, hp.t], data).unwrap()).unwrap()
    }

    #[test]
    fn reference_hyperparams() {
        let hp = HyperParams::ppg();
        assert_eq!((hp.dm, hp.t, hp.h1, hp.h2), (38, 70, 50, 25));
        assert_eq!(hp.pool2, 6);
        assert_eq!(hp.len_pool1(), 6);
        assert_eq!(hp.len_pool2(), 1);
        assert_eq!(hp.flatten_dim(), 16);
    }

    #[test]
    fn stage_shapes_reference() {
        let hp = HyperParams::ppg();
        let shapes = hp.stage_shapes();
        let get = |name: &str| {
            shapes
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, s)| s.clone())
                .unwrap()
        };
        assert_eq!(get("encoded"), vec![38, 25]);
        assert_eq!(get("depthwise"), vec![16, 1, 25]);
        assert_eq!(get("pool1"), vec![16, 1, 6]);
        assert_eq!(get("separable"), vec![16, 1, 6]);
        assert_eq!(get("pool2"), vec![16, 1, 1]);
        assert_eq!(get("flatten"), vec![16]);
        assert_eq!(get("logits"), vec![2]);
    }

    #[test]
    fn forward_probabilities_sum_to_one_and_repeat() {
        let hp = HyperParams::for_input(4, 14).unwrap();
        let params = TnanetParams::init(hp, 99).unwrap();
        let m = constant_matrix(&hp, |d, t| ((d * 7 + t) % 5) as f64 / 5.0);
        let (_, p1) = predict(&params, &m).unwrap();
        let (_, p2) = predict(&params, &m).unwrap();
        assert!((p1.p[0] + p1.p[1] - 1.0).abs() < 1e-9);
        assert_eq!(p1.p, p2.p, "eval forward must be bitwise deterministic");
    }

    #[test]
    fn predict_label_tie_rule() {
        assert_eq!(predict_label(&ProbPair::new([0.5, 0.5])), 0);
        assert_eq!(predict_label(&ProbPair::new([0.3, 0.7])), 1);
        assert_eq!(predict_label(&ProbPair::new([0.9, 0.1])), 0);
    }

    #[test]
    fn toy_training_reaches_full_accuracy() {
        let hp = HyperParams::for_input(2, 14).unwrap();
        let mut params = TnanetParams::init(hp, 7).unwrap();
        // Two clearly separated patterns per class.
        let neg1 = constant_matrix(
            &hp,
            |d, t| if d == 0 { 0.9 } else { 0.1 * (t as f64 / 14.0) },
        );
        let neg2 = constant_matrix(&hp, |d, t| {
            if d == 0 {
                0.8
            } else {
                0.15 * (t as f64 / 14.0)
            }
        });
        let pos1 = constant_matrix(
            &hp,
            |d, t| if d == 1 { 0.9 } else { 0.1 * (t as f64 / 14.0) },
        );
        let pos2 = constant_matrix(&hp, |d, t| {
            if d == 1 {
                0.8
            } else {
                0.15 * (t as f64 / 14.0)
            }
        });
        let train: Vec<(&FeatureMatrix, u8)> = vec![(&neg1, 0), (&neg2, 0), (&pos1, 1), (&pos2, 1)];
        let summary = supervised_train(&mut params, &train).unwrap();
        assert!(summary.epochs_run <= 100);
        let mut correct = 0;
        for (m, y) in &train {
            let (_, p) = predict(&params, m).unwrap();
            if predict_label(&p) == *y {
                correct += 1;
            }
        }
        assert_eq!(correct, 4, "losses: {:?}", summary.losses.last());
    }

    #[test]
    fn loss_trend_decreases_over_seeds() {
        let hp = HyperParams::for_input(3, 14).unwrap();
        let mut first = 0.0;
        let mut last = 0.0;
        for seed in 0..10u64 {
            let mut rng = seeded_rng(seed);
            let mut params = TnanetParams::init(hp, seed).unwrap();
            let mats: Vec<FeatureMatrix> = (0..6)
                .map(|i| {
                    let jitter = crate::rng::uniform(&mut rng, -0.1, 0.1);
                    constant_matrix(&hp, |d, t| {
                        0.5 + 0.4 * ((d + t + i) as f64 * 0.7 + jitter).sin()
                    })
                })
                .collect();
            let train: Vec<(&FeatureMatrix, u8)> = mats
                .iter()
                .enumerate()
                .map(|(i, m)| (m, (i % 2) as u8))
                .collect();
            let summary = supervised_train(&mut params, &train).unwrap();
            first += summary.losses[0];
            last += summary.losses.last().unwrap();
        }
        assert!(last < first, "final mean {last} vs initial mean {first}");
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let hp = HyperParams::for_input(2, 14).unwrap();
        let mut params = TnanetParams::init(hp, 1).unwrap();
        assert!(supervised_train(&mut params, &[]).is_err());
    }

    #[test]
    fn feature_importance_ranking() {
        let hp = HyperParams::for_input(4, 14).unwrap();
        let mut params = TnanetParams::init(hp, 5).unwrap();
        // All-ones weights: every score 1, ranking falls back to feature order.
        params.set.value_mut(params.ids.depthwise).fill(1.0);
        let ranked = feature_importance(&params);
        assert_eq!(ranked.len(), 4);
        let names: Vec<&str> = ranked.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["ch0", "ch1", "ch2", "ch3"]);
        assert!(ranked.iter().all(|(_, s)| (*s - 1.0).abs() < 1e-12));

        // Make channel 3 dominant.
        {
            let w = params.set.value_mut(params.ids.depthwise);
            for f in 0..hp.filters {
                w.data_mut()[f * hp.dm + 3] = 10.0;
            }
        }
        let ranked = feature_importance(&params);
        assert_eq!(ranked[0].0, "ch3");
        assert!((ranked[0].1 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ppg_names_used_for_38_channels() {
        let hp = HyperParams::ppg();
        let params = TnanetParams::init(hp, 2).unwrap();
        let ranked = feature_importance(&params);
        assert_eq!(ranked.len(), 38);
        assert!(ranked.iter().any(|(n, _)| n == "SDNN"));
    }

    #[test]
    fn full_model_gradient_check() {
        let hp = HyperParams::for_input(3, 14).unwrap();
        let mut params = TnanetParams::init(hp, 11).unwrap();
        let mut rng = seeded_rng(42);
        let m = constant_matrix(&hp, |d, t| {
            0.5 + 0.45 * ((d as f64 * 1.3 + t as f64 * 0.7).sin())
        });
        let report = gradient_check_model(&mut params, &m, 1, &mut rng).unwrap();
        assert!(
            report.passes(),
            "max rel err {} at {} [{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_coord
        );
    }

    #[test]
    fn gradient_check_zero_input_no_nan() {
        let hp = HyperParams::for_input(2, 14).unwrap();
        let mut params = TnanetParams::init(hp, 3).unwrap();
        let mut rng = seeded_rng(8);
        let m = constant_matrix(&hp, |_, _| 0.0);
        let report = gradient_check_model(&mut params, &m, 0, &mut rng).unwrap();
        assert!(report.max_rel_err.is_finite());
        assert!(report.passes(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn deterministic_training_same_seed() {
        let hp = HyperParams::for_input(2, 14).unwrap();
        let make = || {
            let mut params = TnanetParams::init(hp, 21).unwrap();
            let a = constant_matrix(&hp, |d, t| (d as f64 + t as f64) / 20.0);
            let b = constant_matrix(&hp, |d, t| (d as f64 * 2.0 + t as f64) / 30.0);
            let train: Vec<(&FeatureMatrix, u8)> = vec![(&a, 0), (&b, 1)];
            supervised_train(&mut params, &train).unwrap();
            let probe = constant_matrix(&hp, |d, t| (d as f64 - t as f64) / 25.0);
            predict(&params, &probe).unwrap().1
        };
        let p1 = make();
        let p2 = make();
        assert_eq!(p1.p, p2.p);
    }

    #[test]
    fn shape_violation_names_stage() {
        let hp = HyperParams::for_input(3, 14).unwrap();
        let params = TnanetParams::init(hp, 1).unwrap();
        let wrong = FeatureMatrix::from_channels(Tensor::zeros(vec![4, 14])).unwrap();
        let err = predict(&params, &wrong).unwrap_err().to_string();
        assert!(err.contains("input stage"), "{err}");
    }
}
