use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};

use super::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, im2col, to_channels_last,
};
use super::lstm::{lstm_gates_backward, lstm_hidden_backprop, lstm_input_projection, lstm_step, lstm_step_projected, LstmCache, LstmWeights, Memory};
use super::params::{Op, PolicyParams};
use super::HeadKind;
use crate::{Error, Result};

/// Network outputs, one row per input row.
///
/// For Q networks `logits` and `value` both hold the `(N, A)` action values.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub value: Array2<f64>,
    /// Memory after the last step (recurrent networks only).
    pub memory: Option<Memory>,
}

impl ForwardOutput {
    pub fn is_finite(&self) -> bool {
        self.logits.iter().chain(self.value.iter()).all(|v| v.is_finite())
            && self.memory.as_ref().is_none_or(Memory::is_finite)
    }
}

/// Unroll description for recurrent training passes. Input rows are
/// time-major: row `t * batch + b` is step `t` of sequence `b`.
#[derive(Debug, Clone, Copy)]
pub struct Recurrence<'a> {
    /// Memory entering step 0, `(batch, hidden)`.
    pub memory: &'a Memory,
    /// `resets[t * batch + b]` zeroes the memory of sequence `b` before step `t`.
    pub resets: &'a [bool],
    pub steps: usize,
}

enum OpCache {
    Nothing,
    Input(Array2<f64>),
    Cols(Array2<f64>),
    Output(Array2<f64>),
}

/// Intermediate activations recorded by [`forward_train`].
pub struct Tape {
    ops: Vec<OpCache>,
    lstm: Vec<LstmCache>,
    resets: Vec<bool>,
    batch: usize,
    /// LSTM input rows (recurrent networks only).
    lstm_in: Option<Array2<f64>>,
    latent: Array2<f64>,
}

fn check_obs(params: &PolicyParams, obs: &ArrayView2<f64>) -> Result<()> {
    let len = params.spec().obs_len();
    if obs.ncols() != len {
        return Err(Error::shape(&[obs.nrows(), len], &[obs.nrows(), obs.ncols()]));
    }
    Ok(())
}

fn encode(params: &PolicyParams, obs: ArrayView2<f64>, mut tape: Option<&mut Vec<OpCache>>) -> Array2<f64> {
    let n = obs.nrows();
    let mut a = obs.to_owned();
    for op in &params.layout.encoder {
        let cache = match *op {
            Op::ToChannelsLast { channels, len } => {
                a = to_channels_last(a.view(), channels, len);
                OpCache::Nothing
            }
            Op::Conv { w, b, in_ch, out_len, .. } => {
                let cols = im2col(a.view(), in_ch, out_len);
                a = conv_forward(&cols, params.view2(w), params.view1(b), n, out_len);
                OpCache::Cols(cols)
            }
            Op::Dense { w, b } => {
                let y = dense_forward(a.view(), params.view2(w), params.view1(b));
                OpCache::Input(std::mem::replace(&mut a, y))
            }
            Op::Relu => {
                a.mapv_inplace(|v| v.max(0.0));
                if tape.is_some() {
                    OpCache::Output(a.clone())
                } else {
                    OpCache::Nothing
                }
            }
        };
        if let Some(t) = tape.as_deref_mut() {
            t.push(cache);
        }
    }
    a
}

fn heads(params: &PolicyParams, latent: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let l = &params.layout;
    let value = dense_forward(latent, params.view2(l.critic.0), params.view1(l.critic.1));
    let logits = match l.actor {
        Some((w, b)) => dense_forward(latent, params.view2(w), params.view1(b)),
        None => value.clone(),
    };
    (logits, value)
}

fn lstm_weights(params: &PolicyParams) -> Option<LstmWeights<'_>> {
    params.layout.lstm.as_ref().map(|idx| LstmWeights {
        wx: params.view2(idx.wx),
        wh: params.view2(idx.wh),
        b: params.view1(idx.b),
    })
}

/// Inference pass. `memory` must be given exactly for recurrent networks and
/// has one row per observation row; the updated memory is returned rather
/// than written back.
pub fn forward(params: &PolicyParams, obs: ArrayView2<f64>, memory: Option<&Memory>) -> Result<ForwardOutput> {
    check_obs(params, &obs)?;
    let enc = encode(params, obs, None);
    match (lstm_weights(params), memory) {
        (None, None) => {
            let (logits, value) = heads(params, enc.view());
            Ok(ForwardOutput { logits, value, memory: None })
        }
        (Some(w), Some(mem)) => {
            if mem.batch() != obs.nrows() || mem.hidden() != params.layout.latent {
                return Err(Error::shape(
                    &[obs.nrows(), params.layout.latent],
                    &[mem.batch(), mem.hidden()],
                ));
            }
            let (next, _) = lstm_step(enc.view(), mem, &w);
            let (logits, value) = heads(params, next.h.view());
            Ok(ForwardOutput { logits, value, memory: Some(next) })
        }
        (Some(_), None) => Err(Error::Argument("recurrent network needs a memory".into())),
        (None, Some(_)) => Err(Error::Argument("feedforward network takes no memory".into())),
    }
}

/// Training pass that records a [`Tape`] for [`backward`].
pub fn forward_train(
    params: &PolicyParams,
    obs: ArrayView2<f64>,
    rec: Option<Recurrence>,
) -> Result<(ForwardOutput, Tape)> {
    check_obs(params, &obs)?;
    let n = obs.nrows();
    let mut ops = Vec::new();
    let enc = encode(params, obs, Some(&mut ops));
    let (latent, lstm, resets, batch, memory, lstm_in) = match (lstm_weights(params), rec) {
        (None, None) => (enc, Vec::new(), Vec::new(), n, None, None),
        (Some(w), Some(rec)) => {
            let steps = rec.steps;
            let batch = rec.memory.batch();
            if steps == 0 || steps * batch != n || rec.resets.len() != n {
                return Err(Error::Argument(format!(
                    "recurrent unroll of {steps} steps x {batch} sequences does not match {n} rows and {} reset flags",
                    rec.resets.len()
                )));
            }
            let mut mem = rec.memory.clone();
            let mut latent = Array2::zeros((n, params.layout.latent));
            let mut caches = Vec::with_capacity(steps);
            // input projections of every step in one product
            let zx = lstm_input_projection(enc.view(), &w);
            for t in 0..steps {
                let rows = t * batch..(t + 1) * batch;
                mem.reset_rows(&rec.resets[rows.clone()]);
                let (next, cache) = lstm_step_projected(zx.slice(s![rows.clone(), ..]).to_owned(), &mem, &w);
                latent.slice_mut(s![rows, ..]).assign(&next.h);
                caches.push(cache);
                mem = next;
            }
            (latent, caches, rec.resets.to_vec(), batch, Some(mem), Some(enc))
        }
        (Some(_), None) => return Err(Error::Argument("recurrent network needs a recurrence".into())),
        (None, Some(_)) => return Err(Error::Argument("feedforward network takes no recurrence".into())),
    };
    let (logits, value) = heads(params, latent.view());
    let tape = Tape {
        ops,
        lstm,
        resets,
        batch,
        lstm_in,
        latent,
    };
    Ok((ForwardOutput { logits, value, memory }, tape))
}

/// Gradient of `sum(d_logits * logits) + sum(d_value * value)` with respect
/// to every parameter, laid out like the parameter store. For Q networks the
/// two output gradients add, since both outputs are the same head.
pub fn backward(
    params: &PolicyParams,
    tape: &Tape,
    d_logits: ArrayView2<f64>,
    d_value: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let l = &params.layout;
    let n = tape.latent.nrows();
    let n_val = if params.spec().head == HeadKind::QValues { params.spec().n_actions } else { 1 };
    if d_logits.dim() != (n, params.spec().n_actions) {
        return Err(Error::shape(&[n, params.spec().n_actions], &[d_logits.nrows(), d_logits.ncols()]));
    }
    if d_value.dim() != (n, n_val) {
        return Err(Error::shape(&[n, n_val], &[d_value.nrows(), d_value.ncols()]));
    }
    let mut grads = vec![0.0; params.len()];

    let (cw, cb) = l.critic;
    let d_critic = match l.actor {
        Some(_) => d_value.to_owned(),
        None => &d_value + &d_logits,
    };
    let mut d_latent = {
        let (mut gw, mut gb) = params.grad_views(&mut grads, cw, cb);
        dense_backward(tape.latent.view(), params.view2(cw), d_critic.view(), &mut gw, &mut gb, true)
            .expect("requested")
    };
    if let Some((aw, ab)) = l.actor {
        let (mut gw, mut gb) = params.grad_views(&mut grads, aw, ab);
        d_latent += &dense_backward(tape.latent.view(), params.view2(aw), d_logits, &mut gw, &mut gb, true)
            .expect("requested");
    }

    let mut d_enc = match (&l.lstm, lstm_weights(params)) {
        (Some(idx), Some(w)) => {
            let batch = tape.batch;
            let hidden = l.latent;
            let x = tape.lstm_in.as_ref().expect("recurrent tape");
            // Only the recurrent path runs step by step; weight gradients and
            // the input gradient are single products over all steps.
            let mut dz_all = Array2::zeros((n, 4 * hidden));
            let mut h_prev_all = Array2::zeros((n, hidden));
            let mut dh_next = Array2::<f64>::zeros((batch, hidden));
            let mut dc_next = Array2::<f64>::zeros((batch, hidden));
            for t in (0..tape.lstm.len()).rev() {
                let rows = t * batch..(t + 1) * batch;
                let dh = &d_latent.slice(s![rows.clone(), ..]) + &dh_next;
                let (dz, mut dc_prev) = lstm_gates_backward(&tape.lstm[t], dh.view(), dc_next.view());
                let mut dh_prev = lstm_hidden_backprop(&dz, &w);
                for (b, &reset) in tape.resets[rows.clone()].iter().enumerate() {
                    if reset {
                        dh_prev.row_mut(b).fill(0.0);
                        dc_prev.row_mut(b).fill(0.0);
                    }
                }
                dz_all.slice_mut(s![rows.clone(), ..]).assign(&dz);
                h_prev_all.slice_mut(s![rows, ..]).assign(tape.lstm[t].h_prev());
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            let (mut gwx, mut gwh, mut gb) = params.lstm_grad_views(&mut grads, idx);
            general_mat_mul(1.0, &dz_all.t(), x, 1.0, &mut gwx);
            general_mat_mul(1.0, &dz_all.t(), &h_prev_all, 1.0, &mut gwh);
            gb += &dz_all.sum_axis(ndarray::Axis(0));
            let d_enc = dz_all.dot(&w.wx);
            d_enc
        }
        _ => d_latent,
    };

    let first_param = l
        .encoder
        .iter()
        .position(|op| matches!(op, Op::Conv { .. } | Op::Dense { .. }))
        .unwrap_or(0);
    for (i, (op, cache)) in l.encoder.iter().zip(&tape.ops).enumerate().rev() {
        let need_dx = i > first_param;
        match (op, cache) {
            (Op::Relu, OpCache::Output(y)) => {
                ndarray::Zip::from(&mut d_enc).and(y).for_each(|d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            (Op::Dense { w, b }, OpCache::Input(x)) => {
                let (mut gw, mut gb) = params.grad_views(&mut grads, *w, *b);
                let dx = dense_backward(x.view(), params.view2(*w), d_enc.view(), &mut gw, &mut gb, need_dx);
                match dx {
                    Some(dx) => d_enc = dx,
                    None => break,
                }
            }
            (Op::Conv { w, b, in_ch, in_len, out_len, .. }, OpCache::Cols(cols)) => {
                let (mut gw, mut gb) = params.grad_views(&mut grads, *w, *b);
                let dx = conv_backward(
                    cols,
                    params.view2(*w),
                    d_enc.view(),
                    &mut gw,
                    &mut gb,
                    *in_ch,
                    *in_len,
                    *out_len,
                    need_dx,
                );
                match dx {
                    Some(dx) => d_enc = dx,
                    None => break,
                }
            }
            (Op::ToChannelsLast { .. }, _) => break,
            _ => unreachable!("tape does not match the encoder"),
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Arch, NetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_obs(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, len), |_| rng.random_range(-1.0..1.0))
    }

    /// Loss `sum(a * logits) + sum(b * value)` with fixed random weights.
    fn check_arch(arch: Arch, obs_shape: &[usize], head: HeadKind, rec_steps: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = NetSpec::new(arch, obs_shape, 6, head);
        let mut params = PolicyParams::init(spec.clone(), &mut rng).unwrap();
        // Non-zero biases so every path carries signal.
        for v in params.as_mut_slice().iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let batch = 2;
        let n = batch * rec_steps.max(1);
        let obs = random_obs(&mut rng, n, spec.obs_len());
        let n_val = if head == HeadKind::QValues { 6 } else { 1 };
        let a = Array2::from_shape_fn((n, 6), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((n, n_val), |_| rng.random_range(-1.0..1.0));
        let mem = Memory {
            h: Array2::from_shape_fn((batch, 512), |_| rng.random_range(-0.5..0.5)),
            c: Array2::from_shape_fn((batch, 512), |_| rng.random_range(-0.5..0.5)),
        };
        let mut resets = vec![false; n];
        if rec_steps > 3 {
            resets[3 * batch + 1] = true;
        }
        let run = |p: &PolicyParams| {
            let rec = arch.is_recurrent().then_some(Recurrence { memory: &mem, resets: &resets, steps: rec_steps });
            let (out, tape) = forward_train(p, obs.view(), rec).unwrap();
            let loss = (&out.logits * &a).sum() + (&out.value * &b).sum();
            (loss, tape)
        };
        let (_, tape) = run(&params);
        let grads = backward(&params, &tape, a.view(), b.view()).unwrap();
        let check = grad_check(|p| run(p).0, &params, &grads, 60, &mut rng);
        assert!(check.max_rel_error < 1e-4, "{arch:?}: {check:?}");
    }

    #[test]
    fn gradients_ff_stats() {
        check_arch(Arch::FfStats, &[2, 4, 3], HeadKind::ActorCritic, 0);
        check_arch(Arch::FfStats, &[2, 4, 3], HeadKind::QValues, 0);
    }

    #[test]
    fn gradients_ff_raw() {
        check_arch(Arch::FfRaw, &[8, 1024], HeadKind::ActorCritic, 0);
    }

    #[test]
    fn gradients_recurrent_eight_steps() {
        check_arch(Arch::RecurrentRaw, &[8, 1024], HeadKind::ActorCritic, 8);
    }

    #[test]
    fn forward_is_deterministic_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = NetSpec::new(Arch::FfStats, &[2, 4, 3], 6, HeadKind::ActorCritic);
        let p = PolicyParams::init(spec, &mut rng).unwrap();
        let x = random_obs(&mut rng, 3, 24);
        assert_eq!(forward(&p, x.view(), None).unwrap(), forward(&p, x.view(), None).unwrap());
        assert!(forward(&p, random_obs(&mut rng, 1, 23).view(), None).is_err());
        assert!(forward(&p, x.view(), Some(&Memory::zeros(3, 512))).is_err());
    }

    #[test]
    fn recurrent_zero_input_is_finite_and_remembers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = NetSpec::new(Arch::RecurrentRaw, &[8, 1024], 6, HeadKind::ActorCritic);
        let p = PolicyParams::init(spec, &mut rng).unwrap();
        let zero = Array2::zeros((1, 8192));
        let out = forward(&p, zero.view(), Some(&Memory::zeros(1, 512))).unwrap();
        assert!(out.is_finite());
        assert!(forward(&p, zero.view(), None).is_err());

        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut p = PolicyParams::init(p.spec().clone(), &mut rng).unwrap();
            for v in p.as_mut_slice().iter_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
            let x = random_obs(&mut rng, 1, 8192);
            let o1 = forward(&p, x.view(), Some(&Memory::zeros(1, 512))).unwrap();
            let o2 = forward(&p, x.view(), o1.memory.as_ref()).unwrap();
            let diff = (&o1.logits - &o2.logits)
                .iter()
                .chain((&o1.value - &o2.value).iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff > 1e-8, "no memory effect: {diff}");
        }
    }

    #[test]
    fn scaling_actor_head_scales_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = NetSpec::new(Arch::FfStats, &[2, 4, 3], 6, HeadKind::ActorCritic);
        let mut p = PolicyParams::init(spec, &mut rng).unwrap();
        for v in p.as_mut_slice().iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let x = random_obs(&mut rng, 4, 24);
        let before = forward(&p, x.view(), None).unwrap();
        let r = p.block_range(crate::nn::BlockKind::ActorHead);
        for v in &mut p.as_mut_slice()[r] {
            *v *= 3.0;
        }
        let after = forward(&p, x.view(), None).unwrap();
        for (a, b) in after.logits.iter().zip(before.logits.iter()) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
        let argmax = |o: &ForwardOutput, i: usize| {
            let row = o.logits.row(i);
            (0..6).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
        };
        for i in 0..4 {
            assert_eq!(argmax(&before, i), argmax(&after, i));
        }
        assert_eq!(before.value, after.value);
    }
}
