//! Per-channel stacked encoder and its self-supervised pre-training.
//!
//! Every feature channel owns an independent two-layer stack. A layer maps
//! forward with h = Wv + b and reconstructs with v' = W^T h + b_star (the
//! transpose standing in for the inverse of a non-square W, tied-weight
//! style). Pre-training runs plain gradient descent on the L1 reconstruction
//! loss, per sample, three epochs per layer, bottom layer first.

use crate::error::{Error, Result};
use crate::params::{adam_step, AdamState, ParamSet};
use crate::ppg::FeatureMatrix;
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

pub const SELF_SUPERVISED_EPOCHS: usize = 3;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// h = Wv + b for W of shape (out, in).
pub fn affine(w: &Tensor, b: &Tensor, v: &[f64]) -> Vec<f64> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(v.len(), in_dim);
    debug_assert_eq!(b.len(), out_dim);
    let mut h = b.data().to_vec();
    for (k, hk) in h.iter_mut().enumerate() {
        let row = &w.data()[k * in_dim..(k + 1) * in_dim];
        *hk += row.iter().zip(v).map(|(wv, xv)| wv * xv).sum::<f64>();
    }
    h
}

/// v' = W^T h + b_star for W of shape (out, in).
pub fn affine_transposed(w: &Tensor, b_star: &Tensor, h: &[f64]) -> Vec<f64> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(h.len(), out_dim);
    debug_assert_eq!(b_star.len(), in_dim);
    let mut v = b_star.data().to_vec();
    for k in 0..out_dim {
        let hk = h[k];
        if hk == 0.0 {
            continue;
        }
        let row = &w.data()[k * in_dim..(k + 1) * in_dim];
        for (j, wv) in row.iter().enumerate() {
            v[j] += wv * hk;
        }
    }
    v
}

/// One encoder layer: forward weights plus forward/backward biases.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub b_star: Tensor,
}

impl RbmLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            w: Tensor::zeros(vec![out_dim, in_dim]),
            b: Tensor::zeros(vec![out_dim]),
            b_star: Tensor::zeros(vec![in_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "rbm forward: input {} != in dim {}",
                v.len(),
                self.in_dim()
            )));
        }
        Ok(affine(&self.w, &self.b, v))
    }

    pub fn reconstruct(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "rbm reconstruct: input {} != out dim {}",
                h.len(),
                self.out_dim()
            )));
        }
        Ok(affine_transposed(&self.w, &self.b_star, h))
    }
}

/// L1 reconstruction loss between an input and its round trip.
pub fn reconstruction_loss(v: &[f64], v_next: &[f64]) -> Result<f64> {
    if v.len() != v_next.len() {
        return Err(Error::Shape(format!(
            "reconstruction loss over unequal lengths {} vs {}",
            v.len(),
            v_next.len()
        )));
    }
    Ok(v.iter().zip(v_next).map(|(a, b)| (a - b).abs()).sum())
}

/// Loss and gradients of one forward+reconstruct round trip.
///
/// With h = s(Wv + b) and v' = s(W^T h + b_star) (s = identity unless the
/// sigmoid variant is enabled), L = |v - v'|_1.
pub fn reconstruction_grads(
    w: &Tensor,
    b: &Tensor,
    b_star: &Tensor,
    v: &[f64],
    use_sigmoid: bool,
) -> (f64, Tensor, Tensor, Tensor) {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let h_pre = affine(w, b, v);
    let h: Vec<f64> = if use_sigmoid {
        h_pre.iter().map(|&x| sigmoid(x)).collect()
    } else {
        h_pre.clone()
    };
    let v_pre = affine_transposed(w, b_star, &h);
    let v_next: Vec<f64> = if use_sigmoid {
        v_pre.iter().map(|&x| sigmoid(x)).collect()
    } else {
        v_pre.clone()
    };
    let mut loss = 0.0;
    // dL/d v_pre
    let mut g_vpre = vec![0.0; in_dim];
    for j in 0..in_dim {
        let r = v_next[j] - v[j];
        loss += r.abs();
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        g_vpre[j] = if use_sigmoid {
            sign * v_next[j] * (1.0 - v_next[j])
        } else {
            sign
        };
    }
    // dL/dh then dL/d h_pre
    let mut g_h = vec![0.0; out_dim];
    for k in 0..out_dim {
        let row = &w.data()[k * in_dim..(k + 1) * in_dim];
        g_h[k] = row.iter().zip(&g_vpre).map(|(wv, g)| wv * g).sum();
    }
    let g_hpre: Vec<f64> = if use_sigmoid {
        g_h.iter()
            .zip(&h)
            .map(|(g, hk)| g * hk * (1.0 - hk))
            .collect()
    } else {
        g_h
    };
    // dW has two paths: the transposed reconstruction map and the forward map.
    let mut gw = Tensor::zeros(vec![out_dim, in_dim]);
    {
        let gwd = gw.data_mut();
        for k in 0..out_dim {
            for j in 0..in_dim {
                gwd[k * in_dim + j] = h[k] * g_vpre[j] + g_hpre[k] * v[j];
            }
        }
    }
    (loss, gw, Tensor::from_vec(g_hpre), Tensor::from_vec(g_vpre))
}

/// Trains one layer on its inputs: per-sample Adam steps on the L1
/// reconstruction loss, `epochs` passes with the sample order reshuffled each
/// epoch. Returns the per-epoch mean losses.
pub fn train_rbm(
    layer: &mut RbmLayer,
    data: &[Vec<f64>],
    epochs: usize,
    lr: f64,
    use_sigmoid: bool,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Training("rbm training set is empty".into()));
    }
    let mut set = ParamSet::new();
    let w_id = set.insert("w", layer.w.clone())?;
    let b_id = set.insert("b", layer.b.clone())?;
    let bs_id = set.insert("b_star", layer.b_star.clone())?;
    let mut adam = AdamState::new(lr);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for &idx in &order {
            let (loss, gw, gb, gbs) = reconstruction_grads(
                set.value(w_id),
                set.value(b_id),
                set.value(bs_id),
                &data[idx],
                use_sigmoid,
            );
            total += loss;
            set.add_grad(w_id, &gw);
            set.add_grad(b_id, &gb);
            set.add_grad(bs_id, &gbs);
            adam_step(&mut set, &mut adam);
        }
        epoch_losses.push(total / data.len() as f64);
    }
    layer.w = set.value(w_id).clone();
    layer.b = set.value(b_id).clone();
    layer.b_star = set.value(bs_id).clone();
    Ok(epoch_losses)
}

/// A two-layer stack bound to one feature channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnStack {
    pub layers: [RbmLayer; 2],
    pub channel_index: usize,
}

impl DbnStack {
    pub fn encode(&self, v: &[f64], use_sigmoid: bool) -> Result<Vec<f64>> {
        let mut h = self.layers[0].forward(v)?;
        if use_sigmoid {
            h.iter_mut().for_each(|x| *x = sigmoid(*x));
        }
        let mut out = self.layers[1].forward(&h)?;
        if use_sigmoid {
            out.iter_mut().for_each(|x| *x = sigmoid(*x));
        }
        Ok(out)
    }
}

/// Layer-wise self-supervised pre-training of every stack.
///
/// `data[c][s]` is channel c's vector of sample s. The API takes no labels;
/// the first layer trains on the raw channel vectors, the second on the
/// first's outputs.
pub fn self_supervised_train(
    stacks: &mut [DbnStack],
    data: &[Vec<Vec<f64>>],
    epochs: usize,
    lr: f64,
    use_sigmoid: bool,
    rng: &mut SeededRng,
) -> Result<()> {
    if stacks.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} stacks for {} data channels",
            stacks.len(),
            data.len()
        )));
    }
    for (stack, channel_data) in stacks.iter_mut().zip(data) {
        train_rbm(
            &mut stack.layers[0],
            channel_data,
            epochs,
            lr,
            use_sigmoid,
            rng,
        )?;
        let hidden: Vec<Vec<f64>> = channel_data
            .iter()
            .map(|v| {
                let mut h = affine(&stack.layers[0].w, &stack.layers[0].b, v);
                if use_sigmoid {
                    h.iter_mut().for_each(|x| *x = sigmoid(*x));
                }
                h
            })
            .collect();
        train_rbm(&mut stack.layers[1], &hidden, epochs, lr, use_sigmoid, rng)?;
    }
    Ok(())
}

/// Encodes a feature matrix row by row: output row i is stack i applied to
/// feature row i, concatenated into a (D, H2) tensor.
pub fn dbn_encode(
    stacks: &[DbnStack],
    matrix: &FeatureMatrix,
    use_sigmoid: bool,
) -> Result<Tensor> {
    if stacks.len() != matrix.dm() {
        return Err(Error::Shape(format!(
            "{} stacks for {} feature rows",
            stacks.len(),
            matrix.dm()
        )));
    }
    let h2 = stacks
        .first()
        .map(|s| s.layers[1].out_dim())
        .ok_or_else(|| Error::Shape("no stacks".into()))?;
    let mut out = Tensor::zeros(vec![stacks.len(), h2]);
    for (i, stack) in stacks.iter().enumerate() {
        let enc = stack.encode(matrix.row(i), use_sigmoid)?;
        out.data_mut()[i * h2..(i + 1) * h2].copy_from_slice(&enc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, uniform};

    fn random_layer(out_dim: usize, in_dim: usize, rng: &mut SeededRng) -> RbmLayer {
        let scale = (1.0 / in_dim as f64).sqrt();
        let w = Tensor::new(
            vec![out_dim, in_dim],
            (0..out_dim * in_dim)
                .map(|_| uniform(rng, -scale, scale))
                .collect(),
        )
        .unwrap();
        RbmLayer {
            w,
            b: Tensor::zeros(vec![out_dim]),
            b_star: Tensor::zeros(vec![in_dim]),
        }
    }

    #[test]
    fn forward_cases() {
        // Zero weights and bias give the zero vector.
        let layer = RbmLayer::zeros(2, 3);
        assert_eq!(layer.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);

        // Identity weights pass the input through.
        let mut layer = RbmLayer::zeros(2, 2);
        layer.w.data_mut()[0] = 1.0;
        layer.w.data_mut()[3] = 1.0;
        assert_eq!(layer.forward(&[0.5, -2.0]).unwrap(), vec![0.5, -2.0]);

        // Hand matvec: W = [[1,2],[3,4]], b = [1,1], v = [1,1] -> [4, 8].
        let layer = RbmLayer {
            w: Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            b: Tensor::from_vec(vec![1.0, 1.0]),
            b_star: Tensor::zeros(vec![2]),
        };
        assert_eq!(layer.forward(&[1.0, 1.0]).unwrap(), vec![4.0, 8.0]);

        assert!(layer.forward(&[1.0]).is_err());
    }

    #[test]
    fn reconstruct_cases() {
        let layer = RbmLayer::zeros(2, 3);
        assert_eq!(layer.reconstruct(&[0.0, 0.0]).unwrap(), vec![0.0; 3]);

        // W^T h by hand: W (2x3) = [[1,0,1],[0,2,1]], h = [1,1]
        // -> W^T h = [1, 2, 2].
        let layer = RbmLayer {
            w: Tensor::new(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 2.0, 1.0]).unwrap(),
            b: Tensor::zeros(vec![2]),
            b_star: Tensor::zeros(vec![3]),
        };
        assert_eq!(layer.reconstruct(&[1.0, 1.0]).unwrap(), vec![1.0, 2.0, 2.0]);
        assert!(layer.reconstruct(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn orthonormal_square_w_round_trips() {
        // Rotation matrix: W^T = W^-1, so reconstruct(forward(v)) = v.
        let theta: f64 = 0.7;
        let layer = RbmLayer {
            w: Tensor::new(
                vec![2, 2],
                vec![theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
            )
            .unwrap(),
            b: Tensor::zeros(vec![2]),
            b_star: Tensor::zeros(vec![2]),
        };
        let v = [0.3, -1.7];
        let h = layer.forward(&v).unwrap();
        let back = layer.reconstruct(&h).unwrap();
        for (x, y) in v.iter().zip(&back) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn reconstruction_loss_cases() {
        assert_eq!(reconstruction_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), 3.0);
        assert!(reconstruction_loss(&[1.0], &[1.0, 2.0]).is_err());

        let mut rng = seeded_rng(21);
        let a: Vec<f64> = (0..40).map(|_| uniform(&mut rng, -5.0, 5.0)).collect();
        let b: Vec<f64> = (0..40).map(|_| uniform(&mut rng, -5.0, 5.0)).collect();
        let brute: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), brute);
    }

    #[test]
    fn reconstruction_grads_match_finite_differences() {
        let mut rng = seeded_rng(8);
        for &use_sigmoid in &[false, true] {
            let layer = random_layer(4, 6, &mut rng);
            let v: Vec<f64> = (0..6).map(|_| uniform(&mut rng, 0.1, 0.9)).collect();
            let (_, gw, gb, gbs) =
                reconstruction_grads(&layer.w, &layer.b, &layer.b_star, &v, use_sigmoid);
            let h = 1e-6;
            let loss_at = |w: &Tensor, b: &Tensor, bs: &Tensor| {
                reconstruction_grads(w, b, bs, &v, use_sigmoid).0
            };
            // Probe a few coordinates of each tensor.
            for idx in [0usize, 7, 13, 23] {
                let mut wp = layer.w.clone();
                wp.data_mut()[idx] += h;
                let mut wm = layer.w.clone();
                wm.data_mut()[idx] -= h;
                let fd = (loss_at(&wp, &layer.b, &layer.b_star)
                    - loss_at(&wm, &layer.b, &layer.b_star))
                    / (2.0 * h);
                assert!(
                    (fd - gw.data()[idx]).abs() < 1e-5,
                    "w[{idx}]: fd {fd} analytic {} (sigmoid {use_sigmoid})",
                    gw.data()[idx]
                );
            }
            for idx in [0usize, 3] {
                let mut bp = layer.b.clone();
                bp.data_mut()[idx] += h;
                let mut bm = layer.b.clone();
                bm.data_mut()[idx] -= h;
                let fd = (loss_at(&layer.w, &bp, &layer.b_star)
                    - loss_at(&layer.w, &bm, &layer.b_star))
                    / (2.0 * h);
                assert!((fd - gb.data()[idx]).abs() < 1e-5);
            }
            for idx in [0usize, 5] {
                let mut bp = layer.b_star.clone();
                bp.data_mut()[idx] += h;
                let mut bm = layer.b_star.clone();
                bm.data_mut()[idx] -= h;
                let fd = (loss_at(&layer.w, &layer.b, &bp) - loss_at(&layer.w, &layer.b, &bm))
                    / (2.0 * h);
                assert!((fd - gbs.data()[idx]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn training_reduces_reconstruction_loss_on_average() {
        // Averaged over 10 seeds, the epoch-3 mean loss does not exceed the
        // epoch-1 mean loss on random data.
        let mut first_sum = 0.0;
        let mut last_sum = 0.0;
        for seed in 0..10u64 {
            let mut rng = seeded_rng(seed);
            let mut layer = random_layer(5, 8, &mut rng);
            let data: Vec<Vec<f64>> = (0..12)
                .map(|_| (0..8).map(|_| uniform(&mut rng, 0.0, 1.0)).collect())
                .collect();
            let losses = train_rbm(&mut layer, &data, 3, 0.001, false, &mut rng).unwrap();
            first_sum += losses[0];
            last_sum += losses[2];
        }
        assert!(
            last_sum <= first_sum,
            "epoch-3 mean {last_sum} vs epoch-1 mean {first_sum}"
        );
    }

    #[test]
    fn zero_variance_channel_trains_without_nan() {
        let mut rng = seeded_rng(2);
        let mut layer = random_layer(3, 4, &mut rng);
        let data: Vec<Vec<f64>> = (0..6).map(|_| vec![0.5; 4]).collect();
        let losses = train_rbm(&mut layer, &data, 3, 0.001, false, &mut rng).unwrap();
        assert!(losses.iter().all(|l| l.is_finite()));
        assert!(layer.w.all_finite() && layer.b.all_finite() && layer.b_star.all_finite());
    }

    #[test]
    fn encode_shapes_and_zero_case() {
        use crate::ppg::FeatureMatrix;
        let dm = 4;
        let t = 6;
        let stacks: Vec<DbnStack> = (0..dm)
            .map(|c| DbnStack {
                layers: [RbmLayer::zeros(5, t), RbmLayer::zeros(2, 5)],
                channel_index: c,
            })
            .collect();
        let m = FeatureMatrix::from_channels(Tensor::filled(vec![dm, t], 0.3)).unwrap();
        let out = dbn_encode(&stacks, &m, false).unwrap();
        assert_eq!(out.shape(), &[dm, 2]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_hand_chain() {
        use crate::ppg::FeatureMatrix;
        // 2 -> 2 -> 1 chain with hand-set weights on one channel:
        // h1 = [[1,1],[0,2]] v + [0.5, -0.5]; out = [[2, 1]] h1 + [0.25].
        let stack = DbnStack {
            layers: [
                RbmLayer {
                    w: Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 2.0]).unwrap(),
                    b: Tensor::from_vec(vec![0.5, -0.5]),
                    b_star: Tensor::zeros(vec![2]),
                },
                RbmLayer {
                    w: Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap(),
                    b: Tensor::from_vec(vec![0.25]),
                    b_star: Tensor::zeros(vec![2]),
                },
            ],
            channel_index: 0,
        };
        let m =
            FeatureMatrix::from_channels(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        // h1 = [1 + 2 + 0.5, 4 - 0.5] = [3.5, 3.5]; out = 7 + 3.5 + 0.25.
        let out = dbn_encode(&[stack], &m, false).unwrap();
        assert_eq!(out.data(), &[10.75]);
    }

    #[test]
    fn encode_is_linear_with_zero_biases() {
        use crate::ppg::FeatureMatrix;
        let mut rng = seeded_rng(13);
        let t = 7;
        let stacks: Vec<DbnStack> = (0..3)
            .map(|c| {
                let mut l1 = random_layer(5, t, &mut rng);
                let mut l2 = random_layer(2, 5, &mut rng);
                l1.b.fill(0.0);
                l2.b.fill(0.0);
                DbnStack {
                    layers: [l1, l2],
                    channel_index: c,
                }
            })
            .collect();
        let vals: Vec<f64> = (0..3 * t).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let m =
            FeatureMatrix::from_channels(Tensor::new(vec![3, t], vals.clone()).unwrap()).unwrap();
        let scaled = FeatureMatrix::from_channels(
            Tensor::new(vec![3, t], vals.iter().map(|v| 2.5 * v).collect()).unwrap(),
        )
        .unwrap();
        let e1 = dbn_encode(&stacks, &m, false).unwrap();
        let e2 = dbn_encode(&stacks, &scaled, false).unwrap();
        for (a, b) in e1.data().iter().zip(e2.data()) {
            assert!((2.5 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn stacks_only_touch_their_own_channel() {
        use crate::ppg::FeatureMatrix;
        let mut rng = seeded_rng(31);
        let t = 6;
        let stacks: Vec<DbnStack> = (0..3)
            .map(|c| DbnStack {
                layers: [random_layer(4, t, &mut rng), random_layer(2, 4, &mut rng)],
                channel_index: c,
            })
            .collect();
        let vals: Vec<f64> = (0..3 * t).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
        let mut perturbed = vals.clone();
        for v in &mut perturbed[t..2 * t] {
            *v += 0.37;
        }
        let base = dbn_encode(
            &stacks,
            &FeatureMatrix::from_channels(Tensor::new(vec![3, t], vals).unwrap()).unwrap(),
            false,
        )
        .unwrap();
        let moved = dbn_encode(
            &stacks,
            &FeatureMatrix::from_channels(Tensor::new(vec![3, t], perturbed).unwrap()).unwrap(),
            false,
        )
        .unwrap();
        let h2 = 2;
        for c in 0..3 {
            let changed =
                (0..h2).any(|j| (base.data()[c * h2 + j] - moved.data()[c * h2 + j]).abs() > 1e-12);
            assert_eq!(changed, c == 1, "channel {c}");
        }
    }
}
