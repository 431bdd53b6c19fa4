use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};
use super::CnnError;

/// Forward-pass mode; dropout is only active in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradients of a conv or dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<F> {
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
}

fn conv_dims<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias_len: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize), CnnError> {
    let [n, h, w, cin] = input.shape();
    let [k, k2, kin, f] = kernels.shape();
    if k != k2 {
        return Err(CnnError::Shape(format!("kernel must be square, got {k}x{k2}")));
    }
    if kin != cin {
        return Err(CnnError::Shape(format!("input has {cin} channels, kernel expects {kin}")));
    }
    if bias_len != f {
        return Err(CnnError::Shape(format!("{f} filters but {bias_len} biases")));
    }
    if k == 0 || k > h || k > w {
        return Err(CnnError::Shape(format!("kernel {k}x{k} larger than input {h}x{w}")));
    }
    Ok((n, h, w, cin, k, f, h - k + 1))
}

/// Valid cross-correlation, stride 1. Kernels are laid out
/// `(k, k, in_channels, filters)`.
pub fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &[F],
) -> Result<Tensor<F>, CnnError> {
    let (n, h, w, cin, k, f, oh) = conv_dims(input, kernels, bias.len())?;
    let ow = w - k + 1;
    let src = input.data();
    let wt = kernels.data();
    let mut out = vec![F::zero(); n * oh * ow * f];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * f;
                let acc = &mut out[o..o + f];
                acc.copy_from_slice(bias);
                for ky in 0..k {
                    let row = ((b * h + oy + ky) * w + ox) * cin;
                    let wrow = ky * k * cin * f;
                    // consecutive kx share a contiguous run of input values
                    let inputs = &src[row..row + k * cin];
                    let weights = &wt[wrow..wrow + k * cin * f];
                    for (v, wv) in inputs.iter().zip(weights.chunks_exact(f)) {
                        for (a, &wj) in acc.iter_mut().zip(wv) {
                            *a += *v * wj;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec([n, oh, ow, f], out)
}

/// Returns `(input_grad, kernel_grad, bias_grad)`.
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    upstream: &Tensor<F>,
) -> Result<(Tensor<F>, ParamGrads<F>), CnnError> {
    let (grads, input_grad) = conv2d_backward_impl(input, kernels, upstream, true)?;
    Ok((input_grad.expect("requested"), grads))
}

pub(crate) fn conv2d_backward_impl<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    upstream: &Tensor<F>,
    want_input: bool,
) -> Result<(ParamGrads<F>, Option<Tensor<F>>), CnnError> {
    let f_expected = kernels.shape()[3];
    let (n, h, w, cin, k, f, oh) = conv_dims(input, kernels, f_expected)?;
    let ow = w - k + 1;
    if upstream.shape() != [n, oh, ow, f] {
        return Err(CnnError::Shape(format!(
            "upstream {:?} does not match conv output {:?}",
            upstream.shape(),
            [n, oh, ow, f]
        )));
    }
    let src = input.data();
    let wt = kernels.data();
    let g = upstream.data();
    let mut kgrad = vec![F::zero(); wt.len()];
    let mut bgrad = vec![F::zero(); f];
    let mut igrad = if want_input { vec![F::zero(); src.len()] } else { Vec::new() };
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * f;
                let gv = &g[o..o + f];
                for (bg, &gj) in bgrad.iter_mut().zip(gv) {
                    *bg += gj;
                }
                for ky in 0..k {
                    let row = ((b * h + oy + ky) * w + ox) * cin;
                    let wrow = ky * k * cin * f;
                    let inputs = &src[row..row + k * cin];
                    let kg = &mut kgrad[wrow..wrow + k * cin * f];
                    for (v, kgv) in inputs.iter().zip(kg.chunks_exact_mut(f)) {
                        for (a, &gj) in kgv.iter_mut().zip(gv) {
                            *a += *v * gj;
                        }
                    }
                    if want_input {
                        let weights = &wt[wrow..wrow + k * cin * f];
                        let ig = &mut igrad[row..row + k * cin];
                        for (iv, wv) in ig.iter_mut().zip(weights.chunks_exact(f)) {
                            let mut s = F::zero();
                            for (&wj, &gj) in wv.iter().zip(gv) {
                                s += wj * gj;
                            }
                            *iv += s;
                        }
                    }
                }
            }
        }
    }
    let grads = ParamGrads { weights: Tensor::from_vec(kernels.shape(), kgrad)?, bias: bgrad };
    let input_grad = if want_input { Some(Tensor::from_vec(input.shape(), igrad)?) } else { None };
    Ok((grads, input_grad))
}

/// 2x2 max pooling, stride 2. The second value holds, per output element,
/// the flat input index of the chosen maximum (first in row-major order on
/// ties).
pub fn maxpool_forward<F: Scalar>(input: &Tensor<F>) -> Result<(Tensor<F>, Vec<usize>), CnnError> {
    let [n, h, w, c] = input.shape();
    if h < 2 || w < 2 {
        return Err(CnnError::Shape(format!("pooling needs at least 2x2 input, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_i = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = src[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::from_vec([n, oh, ow, c], out)?, argmax))
}

pub fn maxpool_backward<F: Scalar>(
    argmax: &[usize],
    upstream: &Tensor<F>,
    input_shape: [usize; 4],
) -> Result<Tensor<F>, CnnError> {
    if argmax.len() != upstream.len() {
        return Err(CnnError::Shape(format!(
            "{} argmax entries for {} upstream values",
            argmax.len(),
            upstream.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let dst = grad.data_mut();
    for (&i, &g) in argmax.iter().zip(upstream.data()) {
        if i >= dst.len() {
            return Err(CnnError::Shape(format!("argmax index {i} out of range")));
        }
        dst[i] += g;
    }
    Ok(grad)
}

pub fn relu_forward<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    let data = input.data().iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Gradient of ReLU: upstream where the forward input was positive.
pub fn relu_backward<F: Scalar>(input: &Tensor<F>, upstream: &Tensor<F>) -> Result<Tensor<F>, CnnError> {
    if input.shape() != upstream.shape() {
        return Err(CnnError::Shape("relu upstream shape mismatch".into()));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// `y = x W + b` for each batch row. Weights are `(1, 1, in, out)`.
pub fn dense_forward<F: Scalar>(input: &Tensor<F>, weights: &Tensor<F>, bias: &[F]) -> Result<Tensor<F>, CnnError> {
    let n = input.batch();
    let d = input.item_len();
    let [_, _, wd, u] = weights.shape();
    if wd != d || bias.len() != u {
        return Err(CnnError::Shape(format!(
            "dense layer {wd}->{u} with {} biases applied to {d} features",
            bias.len()
        )));
    }
    let wt = weights.data();
    let mut out = vec![F::zero(); n * u];
    for b in 0..n {
        let acc = &mut out[b * u..(b + 1) * u];
        acc.copy_from_slice(bias);
        for (&x, wrow) in input.row(b).iter().zip(wt.chunks_exact(u)) {
            for (a, &wj) in acc.iter_mut().zip(wrow) {
                *a += x * wj;
            }
        }
    }
    Tensor::matrix(n, u, out)
}

pub fn dense_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    upstream: &Tensor<F>,
) -> Result<(Tensor<F>, ParamGrads<F>), CnnError> {
    let n = input.batch();
    let d = input.item_len();
    let [_, _, wd, u] = weights.shape();
    if wd != d || upstream.batch() != n || upstream.item_len() != u {
        return Err(CnnError::Shape("dense upstream shape mismatch".into()));
    }
    let wt = weights.data();
    let mut wgrad = vec![F::zero(); wt.len()];
    let mut bgrad = vec![F::zero(); u];
    let mut igrad = vec![F::zero(); n * d];
    for b in 0..n {
        let g = upstream.row(b);
        for (bg, &gj) in bgrad.iter_mut().zip(g) {
            *bg += gj;
        }
        let x = input.row(b);
        let ig = &mut igrad[b * d..(b + 1) * d];
        for i in 0..d {
            let wrow = &wt[i * u..(i + 1) * u];
            let wg = &mut wgrad[i * u..(i + 1) * u];
            let mut s = F::zero();
            for j in 0..u {
                wg[j] += x[i] * g[j];
                s += wrow[j] * g[j];
            }
            ig[i] = s;
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), igrad)?,
        ParamGrads { weights: Tensor::from_vec(weights.shape(), wgrad)?, bias: bgrad },
    ))
}

/// Row-wise softmax with max subtraction.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>, CnnError> {
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(CnnError::NonFinite { layer: None, context: "softmax input".into() });
    }
    let n = logits.batch();
    let u = logits.item_len();
    let mut out = Vec::with_capacity(n * u);
    for b in 0..n {
        let row = logits.row(b);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum = exps.iter().copied().fold(F::zero(), |a, v| a + v);
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::from_vec(logits.shape(), out)
}

fn check_one_hot<F: Scalar>(probs: &Tensor<F>, labels: &Tensor<F>) -> Result<(), CnnError> {
    if probs.batch() != labels.batch() || probs.item_len() != labels.item_len() {
        return Err(CnnError::Shape(format!(
            "probabilities {:?} vs labels {:?}",
            probs.shape(),
            labels.shape()
        )));
    }
    for b in 0..labels.batch() {
        let row = labels.row(b);
        let ones = row.iter().filter(|v| **v == F::one()).count();
        let zeros = row.iter().filter(|v| **v == F::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(CnnError::Label(format!("row {b} is not one-hot")));
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class, probabilities clamped
/// to `[1e-12, 1]`.
pub fn cross_entropy<F: Scalar>(probs: &Tensor<F>, labels: &Tensor<F>) -> Result<F, CnnError> {
    check_one_hot(probs, labels)?;
    let n = probs.batch();
    if n == 0 {
        return Ok(F::zero());
    }
    let floor = F::from_f64_lossy(1e-12);
    let mut total = F::zero();
    for b in 0..n {
        for (&p, &y) in probs.row(b).iter().zip(labels.row(b)) {
            if y == F::one() {
                total += -(p.max(floor).min(F::one())).ln();
            }
        }
    }
    Ok(total / F::from_usize(n).expect("batch size"))
}

/// Gradient of `cross_entropy(softmax(z))` with respect to the logits:
/// `(p - y) / n`.
pub fn softmax_cross_entropy_grad<F: Scalar>(probs: &Tensor<F>, labels: &Tensor<F>) -> Result<Tensor<F>, CnnError> {
    check_one_hot(probs, labels)?;
    let n = F::from_usize(probs.batch().max(1)).expect("batch size");
    let data = probs.data().iter().zip(labels.data()).map(|(&p, &y)| (p - y) / n).collect();
    Tensor::from_vec(probs.shape(), data)
}

/// Inverted dropout. Returns the output and, in training mode with a
/// positive rate, the per-unit scale (0 or `1 / (1 - rate)`) needed for
/// the backward pass.
pub fn dropout<F: Scalar>(
    input: &Tensor<F>,
    rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<F>, Option<Vec<F>>), CnnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(CnnError::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<F> = (0..input.len())
        .map(|_| if rng.random::<f64>() >= rate { keep } else { F::zero() })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<F: Scalar>(mask: Option<&[F]>, upstream: &Tensor<F>) -> Tensor<F> {
    match mask {
        None => upstream.clone(),
        Some(m) => {
            let data = upstream.data().iter().zip(m).map(|(&g, &s)| g * s).collect();
            Tensor::from_vec(upstream.shape(), data).expect("same shape")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn conv_oracle(input: &Tensor<f64>, kernels: &Tensor<f64>, bias: &[f64]) -> Vec<f64> {
        let [n, h, w, cin] = input.shape();
        let [k, _, _, f] = kernels.shape();
        let mut out = Vec::new();
        for b in 0..n {
            for y in 0..h - k + 1 {
                for x in 0..w - k + 1 {
                    for j in 0..f {
                        let mut s = bias[j];
                        for ky in 0..k {
                            for kx in 0..k {
                                for c in 0..cin {
                                    s += input.at(b, y + ky, x + kx, c) * kernels.at(ky, kx, c, j);
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    /// Central differences of `loss` over every entry of `x`.
    fn numeric_grad(x: &mut Tensor<f64>, loss: &dyn Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let orig = x.data()[i];
                x.data_mut()[i] = orig + h;
                let up = loss(x);
                x.data_mut()[i] = orig - h;
                let down = loss(x);
                x.data_mut()[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Weighted sum so every output element gets a distinct upstream value.
    fn probe(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_shapes_and_constant_input() {
        let input = Tensor::<f32>::zeros([2, 64, 64, 1]);
        let kernels = Tensor::<f32>::zeros([3, 3, 1, 8]);
        let out = conv2d_forward(&input, &kernels, &[0.0; 8]).unwrap();
        assert_eq!(out.shape(), [2, 62, 62, 8]);

        let v = 1.75;
        let input = Tensor::from_fn([1, 5, 5, 1], |_| v);
        let ones = Tensor::from_fn([3, 3, 1, 1], |_| 1.0);
        let out = conv2d_forward(&input, &ones, &[0.0]).unwrap();
        assert!(out.data().iter().all(|&o| o == 9.0 * v));
    }

    #[test]
    fn conv_rejects_oversized_kernel_and_channel_mismatch() {
        let input = Tensor::<f64>::zeros([1, 2, 2, 1]);
        assert!(conv2d_forward(&input, &Tensor::zeros([3, 3, 1, 1]), &[0.0]).is_err());
        assert!(conv2d_forward(&input, &Tensor::zeros([1, 1, 2, 1]), &[0.0]).is_err());
    }

    #[test]
    fn conv_matches_direct_summation() {
        let input = lcg_tensor([2, 5, 5, 2], 1);
        let kernels = lcg_tensor([3, 3, 2, 3], 2);
        let bias = [0.1, -0.2, 0.3];
        let out = conv2d_forward(&input, &kernels, &bias).unwrap();
        for (a, b) in out.data().iter().zip(conv_oracle(&input, &kernels, &bias)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_zero_upstream_and_bias_sum() {
        let input = lcg_tensor([2, 5, 5, 1], 3);
        let kernels = lcg_tensor([3, 3, 1, 2], 4);
        let (ig, pg) = conv2d_backward(&input, &kernels, &Tensor::zeros([2, 3, 3, 2])).unwrap();
        assert!(ig.data().iter().chain(pg.weights.data()).chain(&pg.bias).all(|v| *v == 0.0));

        let up = lcg_tensor([2, 3, 3, 2], 5);
        let (_, pg) = conv2d_backward(&input, &kernels, &up).unwrap();
        for j in 0..2 {
            let s: f64 = up.data().iter().skip(j).step_by(2).sum();
            assert!((pg.bias[j] - s).abs() < 1e-12);
        }
        assert!(conv2d_backward(&input, &kernels, &Tensor::zeros([2, 3, 3, 1])).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut input = lcg_tensor([2, 5, 5, 2], 6);
        let mut kernels = lcg_tensor([3, 3, 2, 2], 7);
        let mut bias = Tensor::from_vec([1, 1, 1, 2], vec![0.05, -0.1]).unwrap();
        let up = lcg_tensor([2, 3, 3, 2], 8);
        let (ig, pg) = conv2d_backward(&input, &kernels, &up).unwrap();

        let (k0, b0) = (kernels.clone(), bias.clone());
        let num_in = numeric_grad(&mut input, &|x| probe(&conv2d_forward(x, &k0, b0.data()).unwrap(), &up));
        let i0 = input.clone();
        let num_k = numeric_grad(&mut kernels, &|k| probe(&conv2d_forward(&i0, k, b0.data()).unwrap(), &up));
        let num_b = numeric_grad(&mut bias, &|b| probe(&conv2d_forward(&i0, &k0, b.data()).unwrap(), &up));

        let pairs = ig.data().iter().zip(&num_in).chain(pg.weights.data().iter().zip(&num_k)).chain(pg.bias.iter().zip(&num_b));
        for (a, n) in pairs {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn maxpool_basics() {
        let t = Tensor::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, arg) = maxpool_forward(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        assert!(maxpool_forward(&Tensor::<f64>::zeros([1, 1, 4, 1])).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first_element() {
        let t = Tensor::from_fn([1, 4, 4, 1], |_| 2.0f64);
        let (out, arg) = maxpool_forward(&t).unwrap();
        let g = maxpool_backward(&arg, &Tensor::from_fn(out.shape(), |_| 1.0), t.shape()).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expected = if y % 2 == 0 && x % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(g.at(0, y, x, 0), expected);
            }
        }
    }

    #[test]
    fn maxpool_matches_nested_loop_oracle() {
        let t = lcg_tensor([2, 6, 7, 3], 9);
        let (out, _) = maxpool_forward(&t).unwrap();
        assert_eq!(out.shape(), [2, 3, 3, 3]);
        for b in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    for c in 0..3 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(t.at(b, 2 * y + dy, 2 * x + dx, c));
                            }
                        }
                        assert!((out.at(b, y, x, c) - m).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut t = lcg_tensor([1, 6, 6, 2], 10);
        let (out, arg) = maxpool_forward(&t).unwrap();
        let up = lcg_tensor(out.shape(), 11);
        let g = maxpool_backward(&arg, &up, t.shape()).unwrap();
        let num = numeric_grad(&mut t, &|x| probe(&maxpool_forward(x).unwrap().0, &up));
        for (a, n) in g.data().iter().zip(&num) {
            assert!((a - n).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_values_and_gradient() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::from_fn([1, 2, 2, 1], |i| -1.0 - i as f64);
        assert!(relu_forward(&neg).data().iter().all(|v| *v == 0.0));
        let g = relu_backward(&neg, &Tensor::from_fn(neg.shape(), |_| 1.0)).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));

        // keep samples away from the kink
        let mut x = Tensor::from_fn([1, 1, 1, 20], |i| if i % 2 == 0 { 0.1 + i as f64 * 0.05 } else { -0.1 - i as f64 * 0.05 });
        let up = lcg_tensor(x.shape(), 12);
        let g = relu_backward(&x, &up).unwrap();
        let num = numeric_grad(&mut x, &|x| probe(&relu_forward(x), &up));
        for (a, n) in g.data().iter().zip(&num) {
            assert!(rel_err(*a, *n) < 1e-6);
        }
    }

    #[test]
    fn dense_identity_zero_and_oracle() {
        let x = lcg_tensor([3, 1, 1, 4], 13);
        let eye = Tensor::from_fn([1, 1, 4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(dense_forward(&x, &eye, &[0.0; 4]).unwrap().data(), x.data());
        let b = [0.5, -1.0, 2.0];
        let out = dense_forward(&x, &Tensor::zeros([1, 1, 4, 3]), &b).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), &b);
        }
        let w = lcg_tensor([1, 1, 4, 3], 14);
        let out = dense_forward(&x, &w, &b).unwrap();
        for r in 0..3 {
            for j in 0..3 {
                let s: f64 = b[j] + (0..4).map(|i| x.row(r)[i] * w.data()[i * 3 + j]).sum::<f64>();
                assert!((out.row(r)[j] - s).abs() < 1e-12);
            }
        }
        assert!(dense_forward(&x, &Tensor::zeros([1, 1, 5, 3]), &b).is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut x = lcg_tensor([3, 1, 1, 4], 15);
        let mut w = lcg_tensor([1, 1, 4, 3], 16);
        let mut b = Tensor::from_vec([1, 1, 1, 3], vec![0.1, 0.2, -0.3]).unwrap();
        let up = lcg_tensor([3, 1, 1, 3], 17);
        let (ig, pg) = dense_backward(&x, &w, &up).unwrap();
        let (w0, b0) = (w.clone(), b.clone());
        let num_x = numeric_grad(&mut x, &|x| probe(&dense_forward(x, &w0, b0.data()).unwrap(), &up));
        let x0 = x.clone();
        let num_w = numeric_grad(&mut w, &|w| probe(&dense_forward(&x0, w, b0.data()).unwrap(), &up));
        let num_b = numeric_grad(&mut b, &|b| probe(&dense_forward(&x0, &w0, b.data()).unwrap(), &up));
        let pairs = ig.data().iter().zip(&num_x).chain(pg.weights.data().iter().zip(&num_w)).chain(pg.bias.iter().zip(&num_b));
        for (a, n) in pairs {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn softmax_properties() {
        let p = softmax(&Tensor::matrix(1, 2, vec![0.0f64, 0.0]).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax(&Tensor::matrix(1, 2, vec![1000.0f64, 0.0]).unwrap()).unwrap();
        assert_eq!(p.data()[0], 1.0);
        assert!(p.data()[1] >= 0.0 && p.data()[1] < 1e-300);

        let z = lcg_tensor([50, 1, 1, 2], 18);
        let p = softmax(&z).unwrap();
        for r in 0..50 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted = Tensor::from_fn(z.shape(), |i| z.data()[i] + 37.5);
        for (a, b) in softmax(&shifted).unwrap().data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(softmax(&Tensor::matrix(1, 2, vec![f64::NAN, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let y = Tensor::matrix(1, 2, vec![0.0f64, 1.0]).unwrap();
        let perfect = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(cross_entropy(&perfect, &y).unwrap() < 1e-9);
        let uniform = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        assert!((cross_entropy(&uniform, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let bad = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(matches!(cross_entropy(&uniform, &bad), Err(CnnError::Label(_))));
        // clamped, so a confident miss stays finite
        let wrong = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(cross_entropy(&wrong, &y).unwrap().is_finite());
    }

    #[test]
    fn softmax_cross_entropy_gradient_matches_finite_differences() {
        let mut z = lcg_tensor([4, 1, 1, 2], 19);
        let y = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let g = softmax_cross_entropy_grad(&softmax(&z).unwrap(), &y).unwrap();
        let num = numeric_grad(&mut z, &|z| cross_entropy(&softmax(z).unwrap(), &y).unwrap());
        for (a, n) in g.data().iter().zip(&num) {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn dropout_modes() {
        let x = lcg_tensor([2, 3, 3, 2], 20);
        assert_eq!(dropout(&x, 0.7, Mode::Eval, 1).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Train, 1).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, 1).is_err());
        let a = dropout(&x, 0.5, Mode::Train, 9).unwrap();
        let b = dropout(&x, 0.5, Mode::Train, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, dropout(&x, 0.5, Mode::Train, 10).unwrap().0);
    }

    #[test]
    fn dropout_preserves_expected_value() {
        let x = Tensor::from_fn([1, 1, 1, 1_000_000], |i| 1.0 + (i % 7) as f64 * 0.1);
        let mean_in = x.data().iter().sum::<f64>() / x.len() as f64;
        let (y, mask) = dropout(&x, 0.5, Mode::Train, 42).unwrap();
        let mean_out = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean_out - mean_in).abs() / mean_in < 0.02);
        let mask = mask.unwrap();
        assert!(mask.iter().all(|m| *m == 0.0 || *m == 2.0));
        let g = dropout_backward(Some(&mask), &Tensor::from_fn(x.shape(), |_| 1.0));
        assert_eq!(g.data(), mask.as_slice());
    }
}
