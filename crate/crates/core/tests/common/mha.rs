//! Independent attention oracle.

use tsvt::nn::MultiHeadAttention;
use tsvt::tensor::ParamStore;
use tsvt::Tensor;

/// Naive `a·b` accumulating in ascending inner index.
pub fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Independent multi-head attention: each head computed on its own, then
/// concatenated and projected.
pub fn mha_oracle(x: &Tensor, mha: &MultiHeadAttention, store: &ParamStore) -> Vec<f64> {
    let (l, d) = (x.shape()[0], x.shape()[1]);
    let dk = mha.head_dim;
    let h = mha.num_heads();
    let mut concat = vec![0.0; l * h * dk];
    for (hi, head) in mha.heads.iter().enumerate() {
        let q = mm(x.data(), store.get(head.query).data(), l, d, dk);
        let k = mm(x.data(), store.get(head.key).data(), l, d, dk);
        let v = mm(x.data(), store.get(head.value).data(), l, d, dk);
        let scale = 1.0 / (dk as f64).sqrt();
        for i in 0..l {
            let scores: Vec<f64> = (0..l)
                .map(|j| {
                    let mut acc = 0.0;
                    for c in 0..dk {
                        acc += q[i * dk + c] * k[j * dk + c];
                    }
                    acc * scale
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let mut z = 0.0;
            for v in &e {
                z += v;
            }
            let w: Vec<f64> = e.iter().map(|v| v / z).collect();
            for c in 0..dk {
                let mut acc = 0.0;
                for j in 0..l {
                    acc += w[j] * v[j * dk + c];
                }
                concat[i * h * dk + hi * dk + c] = acc;
            }
        }
    }
    mm(&concat, store.get(mha.output).data(), l, h * dk, d)
}
