//! Causal scaled dot-product self-attention over a session's item embeddings.
//!
//! Logits are `(V Wq)(V Wk)^T / sqrt(d)` plus a causal mask; row p may attend
//! to positions q <= p only, so the weight matrix is lower-triangular and
//! every position attends at least to itself.

use std::io::{self, Write};

use thiserror::Error;

use crate::numkernel::{Tape, Var};

#[derive(Debug, Error)]
pub enum SsaError {
    #[error("attention matrices must share one size, got {0} vs {1}")]
    MixedSessionLengths(usize, usize),
    #[error("no attention matrices to average")]
    EmptyExport,
}

/// Query/key/value projections for one term type (long or short).
#[derive(Debug, Clone, Copy)]
pub struct SsaVars {
    pub w_que: Var,
    pub w_key: Var,
    pub w_val: Var,
}

pub struct SsaOutput {
    /// T x d attended embeddings.
    pub z: Var,
    /// T x T row-stochastic weights, zero above the diagonal.
    pub beta: Var,
}

/// Additive causal mask: entry (p, q) is 0 iff q <= p, else -inf.
pub fn causal_mask(t: usize) -> Vec<f64> {
    let mut mask = vec![f64::NEG_INFINITY; t * t];
    for p in 0..t {
        for q in 0..=p {
            mask[p * t + q] = 0.0;
        }
    }
    mask
}

pub fn ssa_forward(tape: &mut Tape, params: &SsaVars, v_seq: Var) -> SsaOutput {
    let shape = tape.shape(v_seq);
    let (t, d) = (shape[0], shape[1]);
    assert!(t >= 1, "session must have at least one position");
    let q = tape.matmul(v_seq, params.w_que);
    let k = tape.matmul(v_seq, params.w_key);
    let v = tape.matmul(v_seq, params.w_val);
    let k_t = tape.transpose(k);
    let scores = tape.matmul(q, k_t);
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let beta = tape.softmax_masked(scaled, &causal_mask(t));
    let z = tape.matmul(beta, v);
    SsaOutput { z, beta }
}

/// Element-wise mean of attention matrices collected from sessions of equal
/// length.
pub fn mean_attention(betas: &[Vec<f64>], t: usize) -> Result<Vec<f64>, SsaError> {
    if betas.is_empty() {
        return Err(SsaError::EmptyExport);
    }
    let want = t * t;
    let mut mean = vec![0.0; want];
    for beta in betas {
        if beta.len() != want {
            return Err(SsaError::MixedSessionLengths(beta.len(), want));
        }
        for (m, b) in mean.iter_mut().zip(beta) {
            *m += b;
        }
    }
    for m in &mut mean {
        *m /= betas.len() as f64;
    }
    Ok(mean)
}

/// Plain-text matrix: one row per line, space-separated decimals.
pub fn write_matrix<W: Write>(out: &mut W, t: usize, data: &[f64]) -> io::Result<()> {
    assert_eq!(data.len(), t * t);
    for row in data.chunks(t) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.8}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Tensor;

    fn identity(d: usize) -> Tensor {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Tensor::from_vec(vec![d, d], data)
    }

    fn leaf_params(tape: &mut Tape, wq: Tensor, wk: Tensor, wv: Tensor) -> SsaVars {
        SsaVars {
            w_que: tape.leaf("w_que", &wq),
            w_key: tape.leaf("w_key", &wk),
            w_val: tape.leaf("w_val", &wv),
        }
    }

    #[test]
    fn single_position_is_value_projection() {
        let d = 3;
        let mut tape = Tape::new();
        let wv = Tensor::from_vec(
            vec![d, d],
            vec![0.5, 0.1, -0.2, 0.3, 0.9, 0.0, -0.4, 0.2, 0.7],
        );
        let params = leaf_params(&mut tape, identity(d), identity(d), wv.clone());
        let v_seq = tape.constant(vec![1, d], vec![1.0, -2.0, 0.5]);
        let out = ssa_forward(&mut tape, &params, v_seq);
        let expected = {
            let mut tape2 = Tape::new();
            let v = tape2.constant(vec![1, d], vec![1.0, -2.0, 0.5]);
            let w = tape2.constant(vec![d, d], wv.data().to_vec());
            let r = tape2.matmul(v, w);
            tape2.value(r).to_vec()
        };
        for (a, b) in tape.value(out.z).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(tape.value(out.beta), &[1.0]);
    }

    #[test]
    fn beta_is_lower_triangular_and_row_stochastic() {
        let d = 4;
        let t = 3;
        let mut tape = Tape::new();
        let params = leaf_params(&mut tape, identity(d), identity(d), identity(d));
        let data: Vec<f64> = (0..t * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let v_seq = tape.constant(vec![t, d], data);
        let out = ssa_forward(&mut tape, &params, v_seq);
        let beta = tape.value(out.beta);
        assert!((beta[0] - 1.0).abs() < 1e-12);
        assert_eq!(beta[1], 0.0);
        assert_eq!(beta[2], 0.0);
        assert_eq!(beta[5], 0.0);
        for p in 0..t {
            let row_sum: f64 = beta[p * t..(p + 1) * t].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_positions_attend_uniformly() {
        let d = 2;
        let t = 4;
        let mut tape = Tape::new();
        let params = leaf_params(&mut tape, identity(d), identity(d), identity(d));
        let v_seq = tape.constant(vec![t, d], vec![0.3, -0.8].repeat(t));
        let out = ssa_forward(&mut tape, &params, v_seq);
        let beta = tape.value(out.beta);
        for p in 0..t {
            for q in 0..=p {
                let expect = 1.0 / (p + 1) as f64;
                assert!((beta[p * t + q] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_are_scaled_by_sqrt_d() {
        // T=2, d=2 (sqrt irrational): hand computation with identity
        // projections. Row 1 logits are v1.v0 / sqrt(2) and v1.v1 / sqrt(2).
        let d = 2;
        let mut tape = Tape::new();
        let params = leaf_params(&mut tape, identity(d), identity(d), identity(d));
        let v0 = [1.0, 2.0];
        let v1 = [-0.5, 1.5];
        let v_seq = tape.constant(vec![2, d], vec![v0[0], v0[1], v1[0], v1[1]]);
        let out = ssa_forward(&mut tape, &params, v_seq);
        let beta = tape.value(out.beta);
        let s = (2.0f64).sqrt();
        let e10 = ((v1[0] * v0[0] + v1[1] * v0[1]) / s).exp();
        let e11 = ((v1[0] * v1[0] + v1[1] * v1[1]) / s).exp();
        let expect = e10 / (e10 + e11);
        assert!((beta[2] - expect).abs() < 1e-12);
    }

    #[test]
    fn perturbation_respects_causality() {
        let d = 3;
        let t = 5;
        let wq = Tensor::from_vec(vec![d, d], (0..9).map(|i| (i as f64 * 0.21).cos()).collect());
        let wk = Tensor::from_vec(vec![d, d], (0..9).map(|i| (i as f64 * 0.13).sin()).collect());
        let wv = Tensor::from_vec(vec![d, d], (0..9).map(|i| 0.1 + 0.05 * i as f64).collect());
        let base: Vec<f64> = (0..t * d).map(|i| (i as f64 * 0.7).sin()).collect();

        let run = |data: Vec<f64>| {
            let mut tape = Tape::new();
            let params = leaf_params(&mut tape, wq.clone(), wk.clone(), wv.clone());
            let v_seq = tape.constant(vec![t, d], data);
            let out = ssa_forward(&mut tape, &params, v_seq);
            tape.value(out.z).to_vec()
        };
        let z0 = run(base.clone());
        let perturb_at = 2;
        let mut data = base.clone();
        data[perturb_at * d] += 0.5;
        let z1 = run(data);
        for p in 0..t {
            let changed = z0[p * d..(p + 1) * d]
                .iter()
                .zip(&z1[p * d..(p + 1) * d])
                .any(|(a, b)| (a - b).abs() > 1e-12);
            if p < perturb_at {
                assert!(!changed, "upstream position {p} changed");
            } else {
                assert!(changed, "downstream position {p} unaffected");
            }
        }
    }

    #[test]
    fn mean_attention_export() {
        let t = 2;
        let single = vec![vec![1.0, 0.0, 0.25, 0.75]];
        let mean = mean_attention(&single, t).unwrap();
        assert_eq!(mean, single[0]);

        let pair = vec![vec![1.0, 0.0, 0.25, 0.75], vec![1.0, 0.0, 0.75, 0.25]];
        let mean = mean_attention(&pair, t).unwrap();
        assert_eq!(mean, vec![1.0, 0.0, 0.5, 0.5]);
        assert_eq!(mean[1], 0.0, "masked entries stay exactly zero");
        for p in 0..t {
            let row: f64 = mean[p * t..(p + 1) * t].iter().sum();
            assert!((row - 1.0).abs() < 1e-6);
        }

        assert!(mean_attention(&[], t).is_err());
        assert!(mean_attention(&[vec![1.0]], 2).is_err());
    }

    #[test]
    fn matrix_writer_formats_rows() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, 2, &[1.0, 0.0, 0.5, 0.5]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("1.0"));
    }
}
