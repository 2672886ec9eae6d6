use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::orthogonal;
use super::{
    Arch, HeadKind, NetSpec, CONV_CHANNELS, CONV_KERNEL, CONV_STRIDE, FF_LATENT, LSTM_HIDDEN, LSTM_INPUT,
    STATS_HIDDEN,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Encoder,
    Lstm,
    ActorHead,
    CriticHead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub block: BlockKind,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    /// `(C, L)` channel-major rows to `(L, C)` channels-last rows.
    ToChannelsLast { channels: usize, len: usize },
    Conv {
        w: usize,
        b: usize,
        in_ch: usize,
        out_ch: usize,
        in_len: usize,
        out_len: usize,
    },
    Dense { w: usize, b: usize },
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmIdx {
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub encoder: Vec<Op>,
    pub lstm: Option<LstmIdx>,
    pub actor: Option<(usize, usize)>,
    pub critic: (usize, usize),
    pub latent: usize,
    pub total: usize,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, block: BlockKind, shape: Vec<usize>) -> usize {
        let info = TensorInfo {
            name,
            block,
            shape,
            offset: self.total,
        };
        self.total += info.len();
        self.tensors.push(info);
        self.tensors.len() - 1
    }

    fn dense(&mut self, name: &str, block: BlockKind, n_in: usize, n_out: usize) -> (usize, usize) {
        let w = self.add(format!("{name}.weight"), block, vec![n_out, n_in]);
        let b = self.add(format!("{name}.bias"), block, vec![n_out]);
        (w, b)
    }
}

impl Layout {
    pub fn new(spec: &NetSpec) -> Result<Self> {
        if spec.n_actions == 0 {
            return Err(Error::Argument("network needs at least one action".into()));
        }
        let mut bld = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let mut encoder = Vec::new();
        let enc = BlockKind::Encoder;
        let latent_in = match spec.arch {
            Arch::FfStats => {
                let (w, b) = bld.dense("enc.fc1", enc, spec.obs_len(), STATS_HIDDEN);
                encoder.extend([Op::Dense { w, b }, Op::Relu]);
                let (w, b) = bld.dense("enc.fc2", enc, STATS_HIDDEN, FF_LATENT);
                encoder.extend([Op::Dense { w, b }, Op::Relu]);
                FF_LATENT
            }
            Arch::FfRaw | Arch::RecurrentRaw => {
                let [channels, len] = spec.obs_shape[..] else {
                    return Err(Error::Argument(format!(
                        "raw architectures take (channels, samples) observations, got {:?}",
                        spec.obs_shape
                    )));
                };
                encoder.push(Op::ToChannelsLast { channels, len });
                let (mut in_ch, mut in_len) = (channels, len);
                for (i, &out_ch) in CONV_CHANNELS.iter().enumerate() {
                    if in_len < CONV_KERNEL {
                        return Err(Error::Argument(format!("input length {len} too short for the conv stack")));
                    }
                    let out_len = (in_len - CONV_KERNEL) / CONV_STRIDE + 1;
                    let w = bld.add(format!("enc.conv{}.weight", i + 1), enc, vec![out_ch, CONV_KERNEL * in_ch]);
                    let b = bld.add(format!("enc.conv{}.bias", i + 1), enc, vec![out_ch]);
                    encoder.extend([
                        Op::Conv {
                            w,
                            b,
                            in_ch,
                            out_ch,
                            in_len,
                            out_len,
                        },
                        Op::Relu,
                    ]);
                    in_ch = out_ch;
                    in_len = out_len;
                }
                let width = if spec.arch == Arch::FfRaw { FF_LATENT } else { LSTM_INPUT };
                let (w, b) = bld.dense("enc.fc", enc, in_ch * in_len, width);
                encoder.extend([Op::Dense { w, b }, Op::Relu]);
                width
            }
        };
        let (lstm, latent) = if spec.arch.is_recurrent() {
            let blk = BlockKind::Lstm;
            let wx = bld.add("lstm.weight_ih".into(), blk, vec![4 * LSTM_HIDDEN, latent_in]);
            let wh = bld.add("lstm.weight_hh".into(), blk, vec![4 * LSTM_HIDDEN, LSTM_HIDDEN]);
            let b = bld.add("lstm.bias".into(), blk, vec![4 * LSTM_HIDDEN]);
            (Some(LstmIdx { wx, wh, b }), LSTM_HIDDEN)
        } else {
            (None, latent_in)
        };
        let (actor, critic) = match spec.head {
            HeadKind::ActorCritic => (
                Some(bld.dense("actor", BlockKind::ActorHead, latent, spec.n_actions)),
                bld.dense("critic", BlockKind::CriticHead, latent, 1),
            ),
            HeadKind::QValues => (None, bld.dense("q", BlockKind::CriticHead, latent, spec.n_actions)),
        };
        Ok(Self {
            tensors: bld.tensors,
            encoder,
            lstm,
            actor,
            critic,
            latent,
            total: bld.total,
        })
    }
}

/// Flat parameter vector partitioned into named tensors and blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    spec: NetSpec,
    pub(crate) layout: Layout,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        let layout = Layout::new(&spec)?;
        let data = vec![0.0; layout.total];
        Ok(Self { spec, layout, data })
    }

    pub fn from_data(spec: NetSpec, data: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&spec)?;
        if data.len() != layout.total {
            return Err(Error::shape(&[layout.total], &[data.len()]));
        }
        Ok(Self { spec, layout, data })
    }

    /// Orthogonal weights (gain sqrt 2 hidden, 0.01 actor, 1 critic/LSTM) and
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        for i in 0..p.layout.tensors.len() {
            let t = &p.layout.tensors[i];
            if t.shape.len() != 2 {
                continue;
            }
            let gain = match t.block {
                BlockKind::Encoder => std::f64::consts::SQRT_2,
                BlockKind::Lstm => 1.0,
                BlockKind::ActorHead => 0.01,
                BlockKind::CriticHead => 1.0,
            };
            let (rows, cols) = (t.shape[0], t.shape[1]);
            let range = t.range();
            let w = orthogonal(rows, cols, gain, rng);
            p.data[range].copy_from_slice(&w);
        }
        Ok(p)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.layout.tensors
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flat index range of a block; empty if the architecture lacks it.
    pub fn block_range(&self, block: BlockKind) -> Range<usize> {
        let mut it = self.layout.tensors.iter().filter(|t| t.block == block);
        match it.next() {
            None => 0..0,
            Some(first) => {
                let end = it.last().unwrap_or(first).range().end;
                first.offset..end
            }
        }
    }

    pub fn block(&self, block: BlockKind) -> &[f64] {
        &self.data[self.block_range(block)]
    }

    pub(crate) fn view1(&self, idx: usize) -> ArrayView1<'_, f64> {
        let t = &self.layout.tensors[idx];
        ArrayView1::from(&self.data[t.range()])
    }

    pub(crate) fn view2(&self, idx: usize) -> ArrayView2<'_, f64> {
        let t = &self.layout.tensors[idx];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &self.data[t.range()]).expect("layout shape")
    }

    pub(crate) fn grad_views<'g>(&self, grads: &'g mut [f64], w: usize, b: usize) -> (ArrayViewMut2<'g, f64>, ArrayViewMut1<'g, f64>) {
        let tw = &self.layout.tensors[w];
        let tb = &self.layout.tensors[b];
        debug_assert_eq!(tw.range().end, tb.offset);
        let (wpart, rest) = grads[tw.offset..].split_at_mut(tw.len());
        let gw = ArrayViewMut2::from_shape((tw.shape[0], tw.shape[1]), wpart).expect("layout shape");
        let gb = ArrayViewMut1::from(&mut rest[..tb.len()]);
        (gw, gb)
    }

    /// Gradient views of the three contiguous LSTM tensors `wx`, `wh`, `b`.
    pub(crate) fn lstm_grad_views<'g>(
        &self,
        grads: &'g mut [f64],
        idx: &LstmIdx,
    ) -> (ArrayViewMut2<'g, f64>, ArrayViewMut2<'g, f64>, ArrayViewMut1<'g, f64>) {
        let t = &self.layout.tensors;
        let (twx, twh, tb) = (&t[idx.wx], &t[idx.wh], &t[idx.b]);
        debug_assert_eq!(twx.range().end, twh.offset);
        debug_assert_eq!(twh.range().end, tb.offset);
        let (gwx, rest) = grads[twx.offset..].split_at_mut(twx.len());
        let (gwh, rest) = rest.split_at_mut(twh.len());
        (
            ArrayViewMut2::from_shape((twx.shape[0], twx.shape[1]), gwx).expect("layout shape"),
            ArrayViewMut2::from_shape((twh.shape[0], twh.shape[1]), gwh).expect("layout shape"),
            ArrayViewMut1::from(&mut rest[..tb.len()]),
        )
    }

    /// Copies the tensors of `block` from `other`.
    pub fn copy_block_from(&mut self, other: &PolicyParams, block: BlockKind) -> Result<()> {
        if other.spec != self.spec {
            return Err(Error::Argument("parameter specs differ".into()));
        }
        let r = self.block_range(block);
        self.data[r.clone()].copy_from_slice(&other.data[r]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn raw_spec(arch: Arch) -> NetSpec {
        NetSpec::new(arch, &[8, 1024], 6, HeadKind::ActorCritic)
    }

    #[test]
    fn conv_stack_shapes() {
        let l = Layout::new(&raw_spec(Arch::FfRaw)).unwrap();
        let lens: Vec<usize> = l
            .encoder
            .iter()
            .filter_map(|op| match op {
                Op::Conv { out_len, .. } => Some(*out_len),
                _ => None,
            })
            .collect();
        assert_eq!(lens, vec![255, 62, 14]);
        assert_eq!(l.latent, 256);
        let r = Layout::new(&raw_spec(Arch::RecurrentRaw)).unwrap();
        assert_eq!(r.latent, 512);
    }

    #[test]
    fn same_shapes_different_values_across_seeds() {
        let a = PolicyParams::init(raw_spec(Arch::FfRaw), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = PolicyParams::init(raw_spec(Arch::FfRaw), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.len(), b.len());
        assert_eq!(a.tensors(), b.tensors());
        assert_ne!(a.as_slice(), b.as_slice());
        let c = PolicyParams::init(raw_spec(Arch::FfRaw), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn blocks_partition_the_store() {
        let p = PolicyParams::zeros(raw_spec(Arch::RecurrentRaw)).unwrap();
        let mut total = 0;
        let mut prev_end = 0;
        for b in [BlockKind::Encoder, BlockKind::Lstm, BlockKind::ActorHead, BlockKind::CriticHead] {
            let r = p.block_range(b);
            assert_eq!(r.start, prev_end);
            prev_end = r.end;
            total += r.len();
        }
        assert_eq!(total, p.len());
        let q = PolicyParams::zeros(NetSpec::new(Arch::FfStats, &[2, 4, 3], 6, HeadKind::QValues)).unwrap();
        assert!(q.block_range(BlockKind::ActorHead).is_empty());
        assert!(q.block_range(BlockKind::Lstm).is_empty());
    }

    #[test]
    fn biases_zero_after_init() {
        let p = PolicyParams::init(raw_spec(Arch::RecurrentRaw), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in p.tensors().iter().filter(|t| t.shape.len() == 1) {
            assert!(p.as_slice()[t.range()].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn deep_copy_is_independent() {
        let p = PolicyParams::init(raw_spec(Arch::FfRaw), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut q = p.clone();
        q.as_mut_slice()[0] += 1.0;
        assert_ne!(p.as_slice()[0], q.as_slice()[0]);
    }
}
