//! Plain nested-loop reference implementations shared by the integration
//! tests. Nothing here touches the tape.

#![allow(dead_code)]

use acit_core::{Rng, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn rand_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.normal()).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor<f64> {
    let rows = m.len();
    let cols = m[0].len();
    Tensor::new(vec![rows, cols], m.iter().flatten().copied().collect()).unwrap()
}

pub fn from_tensor(t: &Tensor<f64>) -> Mat {
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn softmax_row(r: &[f64]) -> Vec<f64> {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn sdpa_weights(q: &Mat, k: &Mat) -> Mat {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            softmax_row(&logits)
        })
        .collect()
}

pub fn sdpa(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    matmul(&sdpa_weights(q, k), v)
}

fn cols(m: &Mat, start: usize, len: usize) -> Mat {
    m.iter().map(|r| r[start..start + len].to_vec()).collect()
}

/// Heads are contiguous column blocks of the projections.
pub fn mha(xq: &Mat, xkv: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, wo: Option<&Mat>, heads: usize) -> Mat {
    let q = matmul(xq, wq);
    let k = matmul(xkv, wk);
    let v = matmul(xkv, wv);
    let dh = q[0].len() / heads;
    let mut out: Mat = vec![Vec::new(); q.len()];
    for h in 0..heads {
        let o = sdpa(&cols(&q, h * dh, dh), &cols(&k, h * dh, dh), &cols(&v, h * dh, dh));
        for (row, part) in out.iter_mut().zip(o) {
            row.extend(part);
        }
    }
    match wo {
        Some(w) => matmul(&out, w),
        None => out,
    }
}

pub fn layer_norm(x: &Mat, g: &[f64], b: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + eps).sqrt() * g[i] + b[i])
                .collect()
        })
        .collect()
}

pub fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    matmul(x, w)
        .into_iter()
        .map(|r| r.iter().zip(b).map(|(a, c)| a + c).collect())
        .collect()
}

pub fn relu(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub struct LayerWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub g1: Vec<f64>,
    pub b1n: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub g2: Vec<f64>,
    pub b2n: Vec<f64>,
}

/// Post-norm encoder layer with a ReLU feed-forward network.
pub fn encoder_layer(x: &Mat, w: &LayerWeights, heads: usize, eps: f64) -> Mat {
    let a = mha(x, x, &w.wq, &w.wk, &w.wv, Some(&w.wo), heads);
    let x1 = layer_norm(&add(x, &a), &w.g1, &w.b1n, eps);
    let f = affine(&relu(&affine(&x1, &w.w1, &w.b1)), &w.w2, &w.b2);
    layer_norm(&add(&x1, &f), &w.g2, &w.b2n, eps)
}

/// `alpha[i][j] = exp(q_i . k_j / sqrt(d)) / sum_k exp(q_i . k_k / sqrt(d))`.
pub fn intermodal_weights(q: &[Vec<f64>; 3], k: &[Vec<f64>; 3]) -> [[f64; 3]; 3] {
    let d = q[0].len() as f64;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        let e: Vec<f64> = (0..3)
            .map(|j| (q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).exp())
            .collect();
        let s: f64 = e.iter().sum();
        for j in 0..3 {
            out[i][j] = e[j] / s;
        }
    }
    out
}

fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    (0..w[0].len()).map(|j| x.iter().zip(w).map(|(a, r)| a * r[j]).sum()).collect()
}

/// `f~_i = sum_j alpha_ij V_j` with per-modality projections.
pub fn refine_step(f: &[Vec<f64>; 3], wq: &[Mat; 3], wk: &[Mat; 3], wv: &[Mat; 3]) -> [Vec<f64>; 3] {
    let q: [Vec<f64>; 3] = std::array::from_fn(|i| vecmat(&f[i], &wq[i]));
    let k: [Vec<f64>; 3] = std::array::from_fn(|i| vecmat(&f[i], &wk[i]));
    let v: [Vec<f64>; 3] = std::array::from_fn(|i| vecmat(&f[i], &wv[i]));
    let a = intermodal_weights(&q, &k);
    std::array::from_fn(|i| {
        (0..v[0].len())
            .map(|c| (0..3).map(|j| a[i][j] * v[j][c]).sum())
            .collect()
    })
}

/// `-w [y ln s + (1 - y) ln(1 - s)]`, `s = sigmoid(z)`.
pub fn naive_bce(z: f64, y: f64, w: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    -w * (y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

/// `P(score_pos > score_neg) + P(tie) / 2` over all pairs.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if a > b {
                    num += 1.0;
                } else if a == b {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}
