//! Straight-line reference implementations used to check fabric output.
//!
//! Nothing here calls into `fabric` or `compiler`. Sums start from their
//! first term (not from zero) and add terms in the given order, which is
//! what a reduction SiteO does, so results can be compared bit for bit.
//! Convolution is cross-correlation: the kernel is not flipped.

mod tensor;

pub use tensor::{BitPattern, ShapeError, Tensor};

use num_traits::Float;

/// Order in which the inner-dimension terms of a dot product are summed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ReductionOrder {
    #[default]
    Ascending,
    /// `order[i]` is the inner index added at step `i`.
    Permutation(Vec<usize>),
}

impl ReductionOrder {
    pub fn indices(&self, n: usize) -> Result<Vec<usize>, ShapeError> {
        match self {
            ReductionOrder::Ascending => Ok((0..n).collect()),
            ReductionOrder::Permutation(p) => {
                let mut seen = vec![false; n];
                if p.len() != n || p.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                    return Err(ShapeError::Mismatch(format!("{p:?} is not a permutation of 0..{n}")));
                }
                Ok(p.clone())
            }
        }
    }
}

fn ordered_sum<T: Float>(terms: impl Iterator<Item = T>) -> T {
    let mut acc: Option<T> = None;
    for v in terms {
        acc = Some(match acc {
            None => v,
            Some(a) => a + v,
        });
    }
    acc.unwrap_or_else(T::zero)
}

fn larger<T: Float>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

/// `A (N x M) * B (M x P)`.
pub fn matmul_ref<T: Float>(a: &Tensor<T>, b: &Tensor<T>, order: &ReductionOrder) -> Result<Tensor<T>, ShapeError> {
    let (&[n, m], &[m2, p]) = (a.dims(), b.dims()) else {
        return Err(ShapeError::Mismatch("matmul needs two matrices".into()));
    };
    if m != m2 {
        return Err(ShapeError::Mismatch(format!("inner dims differ: {m} vs {m2}")));
    }
    let ks = order.indices(m)?;
    Ok(Tensor::from_fn(&[n, p], |ij| {
        ordered_sum(ks.iter().map(|&k| a.get(&[ij[0], k]) * b.get(&[k, ij[1]])))
    }))
}

pub fn conv_output_len(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize, ShapeError> {
    let span = input + 2 * pad;
    if k == 0 || stride == 0 || span < k || !(span - k).is_multiple_of(stride) {
        return Err(ShapeError::Mismatch(format!(
            "input {input}, kernel {k}, stride {stride}, pad {pad} do not tile"
        )));
    }
    Ok((span - k) / stride + 1)
}

/// Multi-channel convolution. `image` is `[C][H][W]`, `filters` is
/// `[F][C][K][K]`, the result is `[F][OH][OW]`. Each window sums its
/// `C*K*K` products channel-major then row-major, padding included.
pub fn conv3d_ref<T: Float>(
    image: &Tensor<T>,
    filters: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, ShapeError> {
    let (&[c, h, w], &[f, fc, k, k2]) = (image.dims(), filters.dims()) else {
        return Err(ShapeError::Mismatch("conv3d needs [C,H,W] and [F,C,K,K]".into()));
    };
    if c != fc || k != k2 {
        return Err(ShapeError::Mismatch(format!("image has {c} channels, filters {fc}x{k}x{k2}")));
    }
    let oh = conv_output_len(h, k, stride, pad)?;
    let ow = conv_output_len(w, k, stride, pad)?;
    let pixel = |ch: usize, y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            T::zero()
        } else {
            image.get(&[ch, y as usize, x as usize])
        }
    };
    Ok(Tensor::from_fn(&[f, oh, ow], |o| {
        let (fi, oy, ox) = (o[0], o[1], o[2]);
        let top = (oy * stride) as isize - pad as isize;
        let left = (ox * stride) as isize - pad as isize;
        let mut terms = Vec::with_capacity(c * k * k);
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let x = pixel(ch, top + ky as isize, left + kx as isize);
                    terms.push(filters.get(&[fi, ch, ky, kx]) * x);
                }
            }
        }
        ordered_sum(terms.into_iter())
    }))
}

/// Single-channel convolution: `image` is `[H][W]`, `filters` `[F][K][K]`.
pub fn conv2d_ref<T: Float>(
    image: &Tensor<T>,
    filters: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, ShapeError> {
    let (&[h, w], &[f, k, k2]) = (image.dims(), filters.dims()) else {
        return Err(ShapeError::Mismatch("conv2d needs [H,W] and [F,K,K]".into()));
    };
    let image = image.clone().reshape(&[1, h, w])?;
    let filters = filters.clone().reshape(&[f, 1, k, k2])?;
    conv3d_ref(&image, &filters, stride, pad)
}

/// Max pooling over `[C][H][W]`. Windows are scanned row-major and the
/// first element seeds the running max.
pub fn maxpool_ref<T: Float>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>, ShapeError> {
    let &[c, h, w] = x.dims() else {
        return Err(ShapeError::Mismatch("maxpool needs [C,H,W]".into()));
    };
    let oh = conv_output_len(h, k, stride, 0)?;
    let ow = conv_output_len(w, k, stride, 0)?;
    Ok(Tensor::from_fn(&[c, oh, ow], |o| {
        let mut best: Option<T> = None;
        for dy in 0..k {
            for dx in 0..k {
                let v = x.get(&[o[0], o[1] * stride + dy, o[2] * stride + dx]);
                best = Some(best.map_or(v, |b| larger(b, v)));
            }
        }
        best.expect("non-empty window")
    }))
}

/// `v` if `v > 0`, else `+0.0`.
pub fn relu_ref<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `[out][in]`.
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    pub relu: bool,
}

/// `bias[o] + sum_i w[o][i] * x[i]`, summed from the bias in ascending `i`.
pub fn dense_ref<T: Float>(x: &[T], layer: &DenseLayer<T>) -> Result<Vec<T>, ShapeError> {
    let &[out, inp] = layer.weights.dims() else {
        return Err(ShapeError::Mismatch("dense weights must be [out, in]".into()));
    };
    if inp != x.len() || layer.bias.len() != out {
        return Err(ShapeError::Mismatch(format!(
            "dense layer {out}x{inp} with {} inputs and {} biases",
            x.len(),
            layer.bias.len()
        )));
    }
    Ok((0..out)
        .map(|o| {
            let v = ordered_sum(
                std::iter::once(layer.bias[o]).chain((0..inp).map(|i| layer.weights.get(&[o, i]) * x[i])),
            );
            if layer.relu && !(v > T::zero()) {
                T::zero()
            } else {
                v
            }
        })
        .collect())
}

/// Softmax evaluated in `f64` and rounded to `T`.
pub fn softmax_ref<T: Float>(x: &[T]) -> Vec<T> {
    let xs: Vec<f64> = x.iter().map(|v| v.to_f64().expect("finite cast")).collect();
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|v| (v - hi).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| T::from(e / total).expect("float cast")).collect()
}

/// Conv -> optional RELU -> optional max pool -> dense stack -> softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnWeights<T> {
    /// `[F][C][K][K]`.
    pub filters: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub relu: bool,
    /// `(window, stride)`.
    pub pool: Option<(usize, usize)>,
    pub dense: Vec<DenseLayer<T>>,
    pub softmax: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnOutput<T> {
    /// Output of the convolution block, `[F][OH][OW]`.
    pub features: Tensor<T>,
    /// Output of the last dense layer (the features flattened when there
    /// are no dense layers).
    pub scores: Vec<T>,
    /// Softmax of `scores`, or `scores` itself when softmax is off.
    pub probabilities: Vec<T>,
}

pub fn conv_block_ref<T: Float>(net: &CnnWeights<T>, image: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let mut x = conv3d_ref(image, &net.filters, net.stride, net.pad)?;
    if net.relu {
        x = relu_ref(&x);
    }
    if let Some((k, s)) = net.pool {
        x = maxpool_ref(&x, k, s)?;
    }
    Ok(x)
}

/// Dense stack and softmax applied to flattened conv features.
pub fn classifier_ref<T: Float>(net: &CnnWeights<T>, features: &[T]) -> Result<(Vec<T>, Vec<T>), ShapeError> {
    let mut scores = features.to_vec();
    for layer in &net.dense {
        scores = dense_ref(&scores, layer)?;
    }
    let probabilities = if net.softmax { softmax_ref(&scores) } else { scores.clone() };
    Ok((scores, probabilities))
}

pub fn cnn_forward_ref<T: Float>(net: &CnnWeights<T>, image: &Tensor<T>) -> Result<CnnOutput<T>, ShapeError> {
    let features = conv_block_ref(net, image)?;
    let (scores, probabilities) = classifier_ref(net, features.data())?;
    Ok(CnnOutput { features, scores, probabilities })
}
