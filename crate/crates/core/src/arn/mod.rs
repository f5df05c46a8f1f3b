//! The attentive recurrent enhancement network: a linear frame encoder,
//! a stack of blocks (BLSTM, unmasked multi-head self-attention, feedforward,
//! each with layer normalization), a linear decoder, and overlap-add
//! synthesis back to the waveform.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::autodiff::{ParamSet, Tape, TensorId};
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArnConfig {
    /// Analysis frame length in samples.
    pub frame_len: usize,
    /// Frame shift in samples.
    pub hop: usize,
    /// Latent width N; the BLSTM runs N/2 per direction.
    pub latent: usize,
    pub num_blocks: usize,
    pub heads: usize,
    /// Hidden width of the feedforward sublayer as a multiple of N.
    pub ffn_expansion: usize,
    /// Dropout probability inside the feedforward sublayer.
    pub dropout_p: f64,
}

impl Default for ArnConfig {
    fn default() -> Self {
        // 16 ms frames with a 2 ms shift at 16 kHz.
        ArnConfig {
            frame_len: 256,
            hop: 32,
            latent: 1024,
            num_blocks: 4,
            heads: 8,
            ffn_expansion: 4,
            dropout_p: 0.05,
        }
    }
}

impl ArnConfig {
    /// Tiny configuration for gradient checks and overfit tests.
    pub fn toy() -> Self {
        ArnConfig {
            frame_len: 16,
            hop: 4,
            latent: 16,
            num_blocks: 2,
            heads: 2,
            ffn_expansion: 4,
            dropout_p: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config(format!(
                "invalid framing: frame_len {} hop {}",
                self.frame_len, self.hop
            )));
        }
        if self.latent == 0 || self.latent % 2 != 0 {
            return Err(Error::Config(format!(
                "latent width {} must be even",
                self.latent
            )));
        }
        if self.heads == 0 || self.latent % self.heads != 0 {
            return Err(Error::Config(format!(
                "latent width {} must be divisible by {} heads",
                self.latent, self.heads
            )));
        }
        if self.num_blocks == 0 || self.ffn_expansion == 0 {
            return Err(Error::Config("zero-sized block stack".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        self.latent / 2
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
}

/// Initialize all learnable arrays: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// forget-gate bias raised by one, layer-norm gain one and bias zero.
pub fn init_params(cfg: &ArnConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.latent;
    let h = cfg.hidden();
    let l = cfg.frame_len;
    let mut params = ParamSet::new();

    params.push_matrix("encoder.weight", uniform_matrix(&mut rng, l, n, l));
    params.push_vector("encoder.bias", uniform_matrix(&mut rng, 1, n, l));

    for b in 0..cfg.num_blocks {
        for dir in ["fw", "bw"] {
            let prefix = format!("block{b}.lstm.{dir}");
            params.push_matrix(format!("{prefix}.w_x"), uniform_matrix(&mut rng, n, 4 * h, n));
            params.push_matrix(format!("{prefix}.w_h"), uniform_matrix(&mut rng, h, 4 * h, h));
            let mut bias = uniform_matrix(&mut rng, 1, 4 * h, h);
            for c in h..2 * h {
                bias[[0, c]] += 1.0;
            }
            params.push_vector(format!("{prefix}.bias"), bias);
        }
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            params.push_matrix(
                format!("block{b}.attn.{w}"),
                uniform_matrix(&mut rng, n, n, n),
            );
        }
        params.push_vector(format!("block{b}.norm_attn.gain"), Array2::ones((1, n)));
        params.push_vector(format!("block{b}.norm_attn.bias"), Array2::zeros((1, n)));
        let e = cfg.ffn_expansion * n;
        params.push_matrix(format!("block{b}.ffn.w1"), uniform_matrix(&mut rng, n, e, n));
        params.push_matrix(format!("block{b}.ffn.w2"), uniform_matrix(&mut rng, e, n, e));
        params.push_vector(format!("block{b}.norm_ffn.gain"), Array2::ones((1, n)));
        params.push_vector(format!("block{b}.norm_ffn.bias"), Array2::zeros((1, n)));
    }

    params.push_matrix("decoder.weight", uniform_matrix(&mut rng, n, l, n));
    params.push_vector("decoder.bias", uniform_matrix(&mut rng, 1, l, n));
    params
}

/// Parameter leaves bound onto a tape, aligned index-for-index with the
/// originating [`ParamSet`].
pub struct BoundParams {
    ids: Vec<TensorId>,
}

impl BoundParams {
    pub fn id(&self, params: &ParamSet, name: &str) -> TensorId {
        self.ids[params
            .index_of(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Copy every parameter onto the tape, as differentiable leaves when
/// `trainable` and as constants otherwise.
pub fn bind_params(tape: &mut Tape, params: &ParamSet, trainable: bool) -> BoundParams {
    let ids = params
        .iter()
        .map(|e| {
            if trainable {
                tape.param(e.values.clone())
            } else {
                tape.constant(e.values.clone())
            }
        })
        .collect();
    BoundParams { ids }
}

/// Standard LSTM sweep over the frame axis in one direction.
/// `xw` is the precomputed `x . w_x` (T x 4h); gate layout is `[i f g o]`.
fn lstm_direction(
    tape: &mut Tape,
    xw: TensorId,
    w_h: TensorId,
    bias: TensorId,
    hidden: usize,
    reverse: bool,
) -> Vec<TensorId> {
    let (num_frames, _) = tape.shape(xw);
    let mut h_prev = tape.constant(Array2::zeros((1, hidden)));
    let mut c_prev = tape.constant(Array2::zeros((1, hidden)));
    let mut outputs = vec![h_prev; num_frames];

    let order: Vec<usize> = if reverse {
        (0..num_frames).rev().collect()
    } else {
        (0..num_frames).collect()
    };
    for t in order {
        let x_t = tape.slice_rows(xw, t, 1);
        let rec = tape.matmul(h_prev, w_h);
        let pre0 = tape.add(x_t, rec);
        let pre = tape.add(pre0, bias);
        let i_gate = tape.slice_cols(pre, 0, hidden);
        let i_gate = tape.sigmoid(i_gate);
        let f_gate = tape.slice_cols(pre, hidden, hidden);
        let f_gate = tape.sigmoid(f_gate);
        let g_gate = tape.slice_cols(pre, 2 * hidden, hidden);
        let g_gate = tape.tanh(g_gate);
        let o_gate = tape.slice_cols(pre, 3 * hidden, hidden);
        let o_gate = tape.sigmoid(o_gate);
        let keep = tape.mul(f_gate, c_prev);
        let write = tape.mul(i_gate, g_gate);
        let c_t = tape.add(keep, write);
        let c_act = tape.tanh(c_t);
        let h_t = tape.mul(o_gate, c_act);
        outputs[t] = h_t;
        h_prev = h_t;
        c_prev = c_t;
    }
    outputs
}

/// Bidirectional LSTM over frames: N/2 hidden units per direction, outputs
/// concatenated to width N.
pub fn bilstm_forward(
    tape: &mut Tape,
    x: TensorId,
    params: &ParamSet,
    bound: &BoundParams,
    block: usize,
    cfg: &ArnConfig,
) -> TensorId {
    let h = cfg.hidden();
    let fw_wx = bound.id(params, &format!("block{block}.lstm.fw.w_x"));
    let fw_wh = bound.id(params, &format!("block{block}.lstm.fw.w_h"));
    let fw_b = bound.id(params, &format!("block{block}.lstm.fw.bias"));
    let bw_wx = bound.id(params, &format!("block{block}.lstm.bw.w_x"));
    let bw_wh = bound.id(params, &format!("block{block}.lstm.bw.w_h"));
    let bw_b = bound.id(params, &format!("block{block}.lstm.bw.bias"));

    let xw_f = tape.matmul(x, fw_wx);
    let xw_b = tape.matmul(x, bw_wx);
    let fw_rows = lstm_direction(tape, xw_f, fw_wh, fw_b, h, false);
    let bw_rows = lstm_direction(tape, xw_b, bw_wh, bw_b, h, true);
    let fw = tape.concat_rows(&fw_rows);
    let bw = tape.concat_rows(&bw_rows);
    tape.concat_cols(&[fw, bw])
}

/// Unmasked scaled dot-product multi-head self-attention (no positional
/// encoding; order information comes from the BLSTM upstream).
fn multi_head_attention(
    tape: &mut Tape,
    z: TensorId,
    params: &ParamSet,
    bound: &BoundParams,
    block: usize,
    cfg: &ArnConfig,
) -> TensorId {
    let n = cfg.latent;
    let dh = n / cfg.heads;
    let w_q = bound.id(params, &format!("block{block}.attn.w_q"));
    let w_k = bound.id(params, &format!("block{block}.attn.w_k"));
    let w_v = bound.id(params, &format!("block{block}.attn.w_v"));
    let w_o = bound.id(params, &format!("block{block}.attn.w_o"));

    let q = tape.matmul(z, w_q);
    let k = tape.matmul(z, w_k);
    let v = tape.matmul(z, w_v);

    let mut head_outputs = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let q_h = tape.slice_cols(q, head * dh, dh);
        let k_h = tape.slice_cols(k, head * dh, dh);
        let v_h = tape.slice_cols(v, head * dh, dh);
        let k_t = tape.transpose(k_h);
        let scores = tape.matmul(q_h, k_t);
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        head_outputs.push(tape.matmul(attn, v_h));
    }
    let merged = tape.concat_cols(&head_outputs);
    tape.matmul(merged, w_o)
}

/// One block: BLSTM, then pre-norm residual attention and feedforward
/// sublayers. The BLSTM itself carries no residual.
pub fn arn_block(
    tape: &mut Tape,
    x: TensorId,
    params: &ParamSet,
    bound: &BoundParams,
    block: usize,
    cfg: &ArnConfig,
    train: bool,
) -> TensorId {
    let h = bilstm_forward(tape, x, params, bound, block, cfg);

    let g1 = bound.id(params, &format!("block{block}.norm_attn.gain"));
    let b1 = bound.id(params, &format!("block{block}.norm_attn.bias"));
    let ln1 = tape.layer_norm(h, g1, b1);
    let attn = multi_head_attention(tape, ln1, params, bound, block, cfg);
    let a = tape.add(h, attn);

    let g2 = bound.id(params, &format!("block{block}.norm_ffn.gain"));
    let b2 = bound.id(params, &format!("block{block}.norm_ffn.bias"));
    let ln2 = tape.layer_norm(a, g2, b2);
    let w1 = bound.id(params, &format!("block{block}.ffn.w1"));
    let w2 = bound.id(params, &format!("block{block}.ffn.w2"));
    let pre = tape.matmul(ln2, w1);
    let act = tape.tanh(pre);
    let dropped = tape.dropout(act, cfg.dropout_p, train);
    let ffn = tape.matmul(dropped, w2);
    tape.add(a, ffn)
}

/// Build the full enhancement graph for one utterance; returns the 1 x M
/// enhanced-signal node. Output length equals input length exactly.
pub fn arn_forward_on_tape(
    tape: &mut Tape,
    noisy: &[f64],
    params: &ParamSet,
    bound: &BoundParams,
    cfg: &ArnConfig,
    train: bool,
) -> Result<TensorId> {
    if noisy.len() < cfg.frame_len {
        return Err(Error::TooShort(format!(
            "input of {} samples is shorter than one {}-sample frame",
            noisy.len(),
            cfg.frame_len
        )));
    }
    let orig_len = noisy.len();
    let signal = tape.constant_row(noisy);
    let frames = tape.signal_to_frames(signal, cfg.frame_len, cfg.hop);
    let num_frames = tape.shape(frames).0;

    let enc_w = bound.id(params, "encoder.weight");
    let enc_b = bound.id(params, "encoder.bias");
    let projected = tape.matmul(frames, enc_w);
    let enc_bias = tape.broadcast_rows(enc_b, num_frames);
    let mut x = tape.add(projected, enc_bias);

    for block in 0..cfg.num_blocks {
        x = arn_block(tape, x, params, bound, block, cfg, train);
    }

    let dec_w = bound.id(params, "decoder.weight");
    let dec_b = bound.id(params, "decoder.bias");
    let decoded = tape.matmul(x, dec_w);
    let dec_bias = tape.broadcast_rows(dec_b, num_frames);
    let out_frames = tape.add(decoded, dec_bias);
    Ok(tape.frames_to_signal(out_frames, cfg.hop, orig_len))
}

/// Enhance one utterance in evaluation mode (dropout off, deterministic).
pub fn enhance(noisy: &AudioBuffer, params: &ParamSet, cfg: &ArnConfig) -> Result<AudioBuffer> {
    let mut tape = Tape::new(0);
    let bound = bind_params(&mut tape, params, false);
    let out = arn_forward_on_tape(&mut tape, &noisy.samples, params, &bound, cfg, false)?;
    if let Some(fault) = tape.fault() {
        return Err(Error::NonFiniteForward(fault.to_string()));
    }
    let samples = tape.value(out).row(0).to_vec();
    Ok(AudioBuffer::new(samples, noisy.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg() -> ArnConfig {
        ArnConfig {
            dropout_p: 0.0,
            ..ArnConfig::toy()
        }
    }

    fn test_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.max(1);
        (0..len)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                ((state as f64 / u64::MAX as f64) * 2.0 - 1.0) * 0.5
            })
            .collect()
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = toy_cfg();
        assert_eq!(init_params(&cfg, 42), init_params(&cfg, 42));
        assert_ne!(init_params(&cfg, 42), init_params(&cfg, 43));
    }

    #[test]
    fn layer_norm_gains_start_at_one() {
        let params = init_params(&toy_cfg(), 1);
        for entry in params.iter() {
            if entry.name.contains("norm") && entry.name.ends_with("gain") {
                assert!(entry.values.iter().all(|&v| v == 1.0), "{}", entry.name);
            }
            if entry.name.contains("norm") && entry.name.ends_with("bias") {
                assert!(entry.values.iter().all(|&v| v == 0.0), "{}", entry.name);
            }
        }
    }

    #[test]
    fn encoder_weights_within_fan_in_bound() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 3);
        let bound = 1.0 / (cfg.frame_len as f64).sqrt();
        let w = &params.get("encoder.weight").unwrap().values;
        assert!(w.iter().all(|v| v.abs() <= bound));
        // And it actually explores the range.
        assert!(w.iter().any(|v| v.abs() > bound * 0.5));
    }

    #[test]
    fn forget_gate_bias_is_shifted() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 5);
        let h = cfg.latent / 2;
        let bias = &params.get("block0.lstm.fw.bias").unwrap().values;
        let bound = 1.0 / (h as f64).sqrt();
        for c in 0..4 * h {
            let v = bias[[0, c]];
            if (h..2 * h).contains(&c) {
                assert!(v >= 1.0 - bound && v <= 1.0 + bound);
            } else {
                assert!(v.abs() <= bound);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(toy_cfg().validate().is_ok());
        let mut bad = toy_cfg();
        bad.latent = 15; // odd
        assert!(bad.validate().is_err());
        let mut bad = toy_cfg();
        bad.heads = 3; // 16 % 3 != 0
        assert!(bad.validate().is_err());
        let mut bad = toy_cfg();
        bad.hop = 32; // > frame_len
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_lstm_params_give_zero_output() {
        let cfg = toy_cfg();
        let mut params = init_params(&cfg, 7);
        for entry in params.iter_mut() {
            if entry.name.starts_with("block0.lstm") {
                entry.values.fill(0.0);
            }
        }
        let mut tape = Tape::new(0);
        let bound = bind_params(&mut tape, &params, false);
        let x = tape.constant(Array2::from_shape_fn((5, cfg.latent), |(r, c)| {
            ((r * 7 + c) as f64 * 0.13).sin()
        }));
        let out = bilstm_forward(&mut tape, x, &params, &bound, 0, &cfg);
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_bilstm_matches_hand_unrolled_cell() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 11);
        let h = cfg.latent / 2;
        let x_row = Array2::from_shape_fn((1, cfg.latent), |(_, c)| (c as f64 * 0.31).cos() * 0.4);

        let mut tape = Tape::new(0);
        let bound = bind_params(&mut tape, &params, false);
        let x = tape.constant(x_row.clone());
        let out = bilstm_forward(&mut tape, x, &params, &bound, 0, &cfg);
        let got = tape.value(out).clone();

        // Hand-unrolled single step per direction: h = o * tanh(i * g).
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        for (dir, offset) in [("fw", 0usize), ("bw", h)] {
            let w_x = &params.get(&format!("block0.lstm.{dir}.w_x")).unwrap().values;
            let bias = &params.get(&format!("block0.lstm.{dir}.bias")).unwrap().values;
            let pre = x_row.dot(w_x) + bias;
            for j in 0..h {
                let i_g = sigmoid(pre[[0, j]]);
                let g_g = pre[[0, 2 * h + j]].tanh();
                let o_g = sigmoid(pre[[0, 3 * h + j]]);
                let c = i_g * g_g;
                let expect = o_g * c.tanh();
                let err = (got[[0, offset + j]] - expect).abs();
                assert!(err < 1e-12, "{dir} unit {j}: err {err}");
            }
        }
    }

    #[test]
    fn bilstm_time_reversal_symmetry() {
        // Reversing the input and swapping direction parameters reverses the
        // output sequence, with the forward/backward halves exchanged.
        let cfg = toy_cfg();
        let params = init_params(&cfg, 13);
        let mut swapped = params.clone();
        for entry in swapped.iter_mut() {
            if entry.name.contains(".lstm.fw.") {
                let twin = entry.name.replace(".lstm.fw.", ".lstm.bw.");
                entry.values = params.get(&twin).unwrap().values.clone();
            } else if entry.name.contains(".lstm.bw.") {
                let twin = entry.name.replace(".lstm.bw.", ".lstm.fw.");
                entry.values = params.get(&twin).unwrap().values.clone();
            }
        }

        let t_len = 3;
        let x = Array2::from_shape_fn((t_len, cfg.latent), |(r, c)| {
            ((r * 17 + c * 3) as f64 * 0.21).sin() * 0.6
        });
        let x_rev = Array2::from_shape_fn((t_len, cfg.latent), |(r, c)| x[[t_len - 1 - r, c]]);

        let mut tape = Tape::new(0);
        let bound = bind_params(&mut tape, &params, false);
        let xid = tape.constant(x);
        let fwd = bilstm_forward(&mut tape, xid, &params, &bound, 0, &cfg);
        let y = tape.value(fwd).clone();

        let mut tape2 = Tape::new(0);
        let bound2 = bind_params(&mut tape2, &swapped, false);
        let xid2 = tape2.constant(x_rev);
        let rev = bilstm_forward(&mut tape2, xid2, &swapped, &bound2, 0, &cfg);
        let y_rev = tape2.value(rev).clone();

        let h = cfg.latent / 2;
        for t in 0..t_len {
            for j in 0..h {
                let a = y[[t, j]];
                let b = y_rev[[t_len - 1 - t, h + j]];
                assert!((a - b).abs() < 1e-12, "fw({t},{j}): {a} vs {b}");
                let c = y[[t, h + j]];
                let d = y_rev[[t_len - 1 - t, j]];
                assert!((c - d).abs() < 1e-12, "bw({t},{j}): {c} vs {d}");
            }
        }
    }

    #[test]
    fn single_frame_attention_collapses_to_value_path() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 17);
        let x_row = Array2::from_shape_fn((1, cfg.latent), |(_, c)| (c as f64 * 0.47).sin());

        let mut tape = Tape::new(0);
        let bound = bind_params(&mut tape, &params, false);
        let x = tape.constant(x_row.clone());
        let out = arn_block(&mut tape, x, &params, &bound, 0, &cfg, false);
        let got = tape.value(out).clone();

        // Rebuild by hand: h from the bilstm, then a = h + LN(h) Wv Wo, then
        // the ffn sublayer on top.
        let mut t2 = Tape::new(0);
        let bound2 = bind_params(&mut t2, &params, false);
        let x2 = t2.constant(x_row);
        let h = bilstm_forward(&mut t2, x2, &params, &bound2, 0, &cfg);
        let g1 = bound2.id(&params, "block0.norm_attn.gain");
        let b1 = bound2.id(&params, "block0.norm_attn.bias");
        let ln1 = t2.layer_norm(h, g1, b1);
        let w_v = bound2.id(&params, "block0.attn.w_v");
        let w_o = bound2.id(&params, "block0.attn.w_o");
        let v = t2.matmul(ln1, w_v);
        let vo = t2.matmul(v, w_o);
        let a = t2.add(h, vo);
        let g2 = bound2.id(&params, "block0.norm_ffn.gain");
        let b2 = bound2.id(&params, "block0.norm_ffn.bias");
        let ln2 = t2.layer_norm(a, g2, b2);
        let w1 = bound2.id(&params, "block0.ffn.w1");
        let w2 = bound2.id(&params, "block0.ffn.w2");
        let pre = t2.matmul(ln2, w1);
        let act = t2.tanh(pre);
        let ffn = t2.matmul(act, w2);
        let expect = t2.add(a, ffn);
        let want = t2.value(expect);

        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 19);
        let mut tape = Tape::new(0);
        let bound = bind_params(&mut tape, &params, false);
        let z = tape.constant(Array2::from_shape_fn((6, cfg.latent), |(r, c)| {
            ((r * 5 + c) as f64 * 0.7).sin()
        }));
        let w_q = bound.id(&params, "block0.attn.w_q");
        let w_k = bound.id(&params, "block0.attn.w_k");
        let q = tape.matmul(z, w_q);
        let k = tape.matmul(z, w_k);
        let dh = cfg.latent / cfg.heads;
        for head in 0..cfg.heads {
            let q_h = tape.slice_cols(q, head * dh, dh);
            let k_h = tape.slice_cols(k, head * dh, dh);
            let k_t = tape.transpose(k_h);
            let scores = tape.matmul(q_h, k_t);
            let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scaled);
            for row in tape.value(attn).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_sublayer_is_permutation_equivariant() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 23);
        let t_len = 4;
        let perm = [2usize, 0, 3, 1];
        let x = Array2::from_shape_fn((t_len, cfg.latent), |(r, c)| {
            ((r * 11 + c * 2) as f64 * 0.37).sin()
        });
        let x_perm = Array2::from_shape_fn((t_len, cfg.latent), |(r, c)| x[[perm[r], c]]);

        let run = |input: Array2<f64>| -> Array2<f64> {
            let mut tape = Tape::new(0);
            let bound = bind_params(&mut tape, &params, false);
            let xid = tape.constant(input);
            let g1 = bound.id(&params, "block0.norm_attn.gain");
            let b1 = bound.id(&params, "block0.norm_attn.bias");
            let ln = tape.layer_norm(xid, g1, b1);
            let attn = multi_head_attention(&mut tape, ln, &params, &bound, 0, &cfg);
            let out = tape.add(xid, attn);
            tape.value(out).clone()
        };

        let y = run(x);
        let y_perm = run(x_perm);
        for r in 0..t_len {
            for c in 0..cfg.latent {
                assert!((y_perm[[r, c]] - y[[perm[r], c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_length_matches_input_length() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 29);
        for len in [16, 17, 2000] {
            let noisy = AudioBuffer::new(test_signal(len, len as u64), 16000);
            let out = enhance(&noisy, &params, &cfg).unwrap();
            assert_eq!(out.len(), len);
        }
    }

    #[test]
    fn input_shorter_than_frame_rejected() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 29);
        let noisy = AudioBuffer::new(vec![0.1; 15], 16000);
        assert!(matches!(enhance(&noisy, &params, &cfg), Err(Error::TooShort(_))));
    }

    #[test]
    fn eval_mode_is_bitwise_deterministic() {
        let mut cfg = ArnConfig::toy();
        cfg.dropout_p = 0.5; // must be inert in eval mode
        let params = init_params(&cfg, 31);
        let noisy = AudioBuffer::new(test_signal(400, 9), 16000);
        let a = enhance(&noisy, &params, &cfg).unwrap();
        let b = enhance(&noisy, &params, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn zero_decoder_gives_zero_output() {
        let cfg = toy_cfg();
        let mut params = init_params(&cfg, 37);
        params.get("decoder.weight").unwrap();
        for entry in params.iter_mut() {
            if entry.name.starts_with("decoder.") {
                entry.values.fill(0.0);
            }
        }
        let noisy = AudioBuffer::new(test_signal(300, 4), 16000);
        let out = enhance(&noisy, &params, &cfg).unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
    }
}
