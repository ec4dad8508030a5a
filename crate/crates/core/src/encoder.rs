//! Jump conditions from prefix self-attention.
//!
//! Event `i` is described on the cascade side by `x_i = z(t_i) + E_c(u_i)` and
//! on the global side by `E_g(u_i)`. For every prefix `0..=i` a single-head
//! scaled dot-product attention summarizes the prefix at its newest position;
//! the two summaries are concatenated into the jump condition `s_i`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamBuilder};

/// Trigonometric encoding of a timestamp into `[-1, 1]^m` (1-indexed `j`:
/// odd entries `cos(t / 10000^((j-1)/m))`, even entries `sin(t / 10000^(j/m))`).
pub fn temporal_encode(t: f64, m: usize) -> Vec<f64> {
    assert!(m >= 2 && m.is_multiple_of(2), "temporal encoding width must be even and at least 2, got {m}");
    (1..=m)
        .map(|j| {
            if j % 2 == 1 {
                (t / 10000f64.powf((j - 1) as f64 / m as f64)).cos()
            } else {
                (t / 10000f64.powf(j as f64 / m as f64)).sin()
            }
        })
        .collect()
}

/// Single-head attention with a position-wise feed-forward layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub feed_forward: Linear,
    pub in_dim: usize,
    pub width: usize,
}

impl AttentionParams {
    pub fn new(builder: &mut ParamBuilder<'_>, name: &str, in_dim: usize, width: usize) -> Self {
        AttentionParams {
            query: builder.linear(&format!("{name}.query"), width, in_dim, false, 1.0),
            key: builder.linear(&format!("{name}.key"), width, in_dim, false, 1.0),
            value: builder.linear(&format!("{name}.value"), width, in_dim, false, 1.0),
            feed_forward: builder.linear(&format!("{name}.ff"), width, width, true, 1.0),
            in_dim,
            width,
        }
    }

    fn summarize(&self, tape: &mut Tape, params: &[Var], query: Var, keys: &[Var], values: &[Var]) -> Var {
        let scale = 1.0 / (self.width as f64).sqrt();
        let scores: Vec<Var> = keys
            .iter()
            .map(|&k| {
                let d = tape.dot(query, k);
                tape.scale(d, scale)
            })
            .collect();
        let scores = tape.concat(&scores);
        let weights = tape.softmax(scores);
        let attended = tape.weighted_sum(weights, values);
        let ff = self.feed_forward.forward(tape, params, attended);
        tape.tanh(ff)
    }
}

/// Attention over a whole sequence, returning the representation at its
/// final position.
pub fn self_attention(tape: &mut Tape, params: &[Var], attn: &AttentionParams, inputs: &[Var]) -> Var {
    assert!(!inputs.is_empty(), "attention over an empty sequence");
    let keys: Vec<Var> = inputs.iter().map(|&x| attn.key.forward(tape, params, x)).collect();
    let values: Vec<Var> = inputs.iter().map(|&x| attn.value.forward(tape, params, x)).collect();
    let q = attn.query.forward(tape, params, *inputs.last().expect("non-empty"));
    attn.summarize(tape, params, q, &keys, &values)
}

/// Incremental prefix attention with cached keys and values. Each `push`
/// returns the summary of the sequence so far, identical to recomputing
/// [`self_attention`] on that prefix.
pub struct PrefixAttention<'p> {
    attn: &'p AttentionParams,
    keys: Vec<Var>,
    values: Vec<Var>,
}

impl<'p> PrefixAttention<'p> {
    pub fn new(attn: &'p AttentionParams) -> Self {
        PrefixAttention { attn, keys: Vec::new(), values: Vec::new() }
    }

    pub fn push(&mut self, tape: &mut Tape, params: &[Var], x: Var) -> Var {
        self.keys.push(self.attn.key.forward(tape, params, x));
        self.values.push(self.attn.value.forward(tape, params, x));
        let q = self.attn.query.forward(tape, params, x);
        self.attn.summarize(tape, params, q, &self.keys, &self.values)
    }
}

/// Per-event inputs of one cascade: times plus cascade- and global-side
/// embeddings, index 0 being the root post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub times: Vec<f64>,
    pub cascade_embeds: Vec<Vec<f64>>,
    pub global_embeds: Vec<Vec<f64>>,
}

impl EventSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Looks up `cascade_keys` and `global_keys` (one per event) in the two
    /// tables. Any absent key is a hard error naming the node.
    pub fn from_tables(
        times: Vec<f64>,
        cascade_keys: &[String],
        global_keys: &[String],
        cascade_table: &EmbeddingTable,
        global_table: &EmbeddingTable,
    ) -> Result<Self> {
        let cascade_embeds = cascade_keys
            .iter()
            .map(|k| cascade_table.require(k).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        let global_embeds = global_keys
            .iter()
            .map(|k| global_table.require(k).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        let seq = EventSequence { times, cascade_embeds, global_embeds };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 {
            return Err(Error::Empty("event sequence".into()));
        }
        if self.cascade_embeds.len() != n || self.global_embeds.len() != n {
            return Err(Error::Embedding(format!(
                "sequence has {n} events but {} cascade and {} global embeddings",
                self.cascade_embeds.len(),
                self.global_embeds.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Embedding("event times are not sorted".into()));
        }
        Ok(())
    }
}

/// The two attention stacks feeding the jump conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub cascade: AttentionParams,
    pub global: AttentionParams,
}

impl EncoderParams {
    pub fn new(builder: &mut ParamBuilder<'_>, cascade_dim: usize, global_dim: usize, width: usize) -> Self {
        EncoderParams {
            cascade: AttentionParams::new(builder, "attn_cascade", cascade_dim, width),
            global: AttentionParams::new(builder, "attn_global", global_dim, width),
        }
    }

    /// Width of each jump condition `s_i`.
    pub fn output_dim(&self) -> usize {
        self.cascade.width + self.global.width
    }
}

/// One jump-condition node per event, `s_i = [s_ci, s_gi]`.
pub fn encode_jump_conditions(
    tape: &mut Tape,
    params: &[Var],
    enc: &EncoderParams,
    seq: &EventSequence,
) -> Result<Vec<Var>> {
    seq.validate()?;
    let m = enc.cascade.in_dim;
    let mut cascade_side = PrefixAttention::new(&enc.cascade);
    let mut global_side = PrefixAttention::new(&enc.global);
    let mut jumps = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        let ec = &seq.cascade_embeds[i];
        let eg = &seq.global_embeds[i];
        if ec.len() != m || eg.len() != enc.global.in_dim {
            return Err(Error::Embedding(format!(
                "event {i}: embedding widths ({}, {}) differ from encoder inputs ({m}, {})",
                ec.len(),
                eg.len(),
                enc.global.in_dim
            )));
        }
        let x: Vec<f64> = temporal_encode(seq.times[i], m).iter().zip(ec).map(|(z, e)| z + e).collect();
        let x = tape.constant(&x);
        let g = tape.constant(eg);
        let sc = cascade_side.push(tape, params, x);
        let sg = global_side.push(tape, params, g);
        jumps.push(tape.concat(&[sc, sg]));
    }
    Ok(jumps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(in_dim: usize, width: usize) -> (Vec<crate::nn::Tensor>, AttentionParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = ParamBuilder::new(&mut rng);
        let a = AttentionParams::new(&mut b, "a", in_dim, width);
        // nonzero biases exercise the feed-forward path
        let mut tensors = b.tensors;
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        for t in tensors.iter_mut().filter(|t| t.name.ends_with("bias")) {
            t.data.iter_mut().for_each(|v| *v = r2.random_range(-0.5..0.5));
        }
        (tensors, a)
    }

    fn matvec(w: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let cols = x.len();
        (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum()).collect()
    }

    /// Straight-line dense evaluation of attention at the final position.
    fn dense_oracle(tensors: &[crate::nn::Tensor], inputs: &[Vec<f64>], width: usize) -> Vec<f64> {
        let get = |n: &str| &tensors.iter().find(|t| t.name == n).unwrap().data;
        let (wq, wk, wv) = (get("a.query.weight"), get("a.key.weight"), get("a.value.weight"));
        let (wf, bf) = (get("a.ff.weight"), get("a.ff.bias"));
        let q = matvec(wq, inputs.last().unwrap(), width);
        let scores: Vec<f64> = inputs
            .iter()
            .map(|x| {
                let k = matvec(wk, x, width);
                q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (width as f64).sqrt()
            })
            .collect();
        let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
        let mut att = vec![0.0; width];
        for (x, s) in inputs.iter().zip(&scores) {
            let v = matvec(wv, x, width);
            let w = (s - mx).exp() / z;
            for (a, b) in att.iter_mut().zip(&v) {
                *a += w * b;
            }
        }
        matvec(wf, &att, width).iter().zip(bf).map(|(a, b)| (a + b).tanh()).collect()
    }

    #[test]
    fn temporal_encoding_values() {
        assert_eq!(temporal_encode(0.0, 4), vec![1.0, 0.0, 1.0, 0.0]);
        let z = temporal_encode(10000.0, 2);
        assert!((z[0] - 10000f64.cos()).abs() < 1e-15);
        assert!((z[1] - 1f64.sin()).abs() < 1e-15);
        for t in [0.0, 1.3, 77.7, 1e6] {
            assert!(temporal_encode(t, 16).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn single_input_is_feed_forward_of_value() {
        let (tensors, a) = setup(3, 4);
        let mut tape = Tape::new();
        let p = bind(&mut tape, &tensors);
        let x = tape.constant(&[0.3, -0.2, 0.9]);
        let s = self_attention(&mut tape, &p, &a, &[x]);
        let v = a.value.forward(&mut tape, &p, x);
        let ff = a.feed_forward.forward(&mut tape, &p, v);
        let expect = tape.tanh(ff);
        assert_eq!(tape.value(s), tape.value(expect));
    }

    #[test]
    fn identical_inputs_match_single_input() {
        let (tensors, a) = setup(3, 4);
        let mut tape = Tape::new();
        let p = bind(&mut tape, &tensors);
        let x = tape.constant(&[0.5, 0.1, -0.7]);
        let one = self_attention(&mut tape, &p, &a, &[x]);
        let many = self_attention(&mut tape, &p, &a, &[x, x, x, x]);
        for (u, v) in tape.value(one).iter().zip(tape.value(many)) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_dense_oracle() {
        let (tensors, a) = setup(5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut tape = Tape::new();
        let p = bind(&mut tape, &tensors);
        let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x)).collect();
        let s = self_attention(&mut tape, &p, &a, &xs);
        let oracle = dense_oracle(&tensors, &inputs, 5);
        for (u, v) in tape.value(s).iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    fn sequence(n: usize, seed: u64) -> EventSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        let times = (0..n)
            .map(|i| {
                if i > 0 {
                    t += rng.random_range(0.0..0.5);
                }
                t
            })
            .collect();
        EventSequence {
            times,
            cascade_embeds: (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            global_embeds: (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        }
    }

    fn encoder() -> (Vec<crate::nn::Tensor>, EncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ParamBuilder::new(&mut rng);
        let e = EncoderParams::new(&mut b, 4, 3, 5);
        (b.tensors, e)
    }

    #[test]
    fn root_only_gives_one_jump() {
        let (tensors, enc) = encoder();
        let mut tape = Tape::new();
        let p = bind(&mut tape, &tensors);
        let j = encode_jump_conditions(&mut tape, &p, &enc, &sequence(1, 2)).unwrap();
        assert_eq!(j.len(), 1);
        assert_eq!(tape.value(j[0]).len(), enc.output_dim());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn incremental_matches_per_prefix_recomputation() {
        let (tensors, enc) = encoder();
        let seq = sequence(5, 8);
        let mut tape = Tape::new();
        let p = bind(&mut tape, &tensors);
        let jumps = encode_jump_conditions(&mut tape, &p, &enc, &seq).unwrap();
        assert_eq!(jumps.len(), 5);
        for i in 0..5 {
            let xs: Vec<Var> = (0..=i)
                .map(|j| {
                    let z = temporal_encode(seq.times[j], 4);
                    let x: Vec<f64> = z.iter().zip(&seq.cascade_embeds[j]).map(|(a, b)| a + b).collect();
                    tape.constant(&x)
                })
                .collect();
            let gs: Vec<Var> = (0..=i).map(|j| tape.constant(&seq.global_embeds[j])).collect();
            let sc = self_attention(&mut tape, &p, &enc.cascade, &xs);
            let sg = self_attention(&mut tape, &p, &enc.global, &gs);
            let full: Vec<f64> = tape.value(sc).iter().chain(tape.value(sg)).copied().collect();
            for (u, v) in tape.value(jumps[i]).iter().zip(&full) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jumps_are_causal() {
        let (tensors, enc) = encoder();
        let seq = sequence(5, 8);
        let mut altered = seq.clone();
        altered.cascade_embeds[3] = vec![9.0; 4];
        altered.global_embeds[4] = vec![-9.0; 3];
        altered.times[4] += 1.0;
        let run = |s: &EventSequence| {
            let mut tape = Tape::new();
            let p = bind(&mut tape, &tensors);
            let j = encode_jump_conditions(&mut tape, &p, &enc, s).unwrap();
            j.iter().map(|v| tape.value(*v).to_vec()).collect::<Vec<_>>()
        };
        let (a, b) = (run(&seq), run(&altered));
        for i in 0..3 {
            assert_eq!(a[i], b[i], "prefix {i}");
        }
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn missing_embedding_names_node() {
        let mut c = EmbeddingTable::new(2);
        c.insert("a#0", vec![0.0, 0.0]).unwrap();
        let g = EmbeddingTable::new(2);
        let err = EventSequence::from_tables(
            vec![0.0],
            &["a#0".to_string()],
            &["ghost".to_string()],
            &c,
            &g,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }
}
