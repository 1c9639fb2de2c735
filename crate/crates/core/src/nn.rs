//! Layer and loss builders over the autodiff graph.
//!
//! These are thin, stateless constructors: they validate shapes against the
//! layer specs and append the corresponding graph nodes. Parameters are
//! created by the caller (the model owns them between batches).

use crate::autodiff::gradcheck::{relative_error, CaseResult, GradcheckReport};
use crate::autodiff::{Bindings, Graph, GraphError, NodeId};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Shape carrier for one 1D convolution layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dSpec {
    /// floor((len + 2·padding − kernel) / stride) + 1, or None when the
    /// kernel does not fit.
    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        let padded = input_len + 2 * self.padding;
        if padded < self.kernel_size || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel_size) / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.out_channels, self.in_channels, self.kernel_size]
    }
}

/// Gradient reversal layer parameter. λ > 0 gives adversarial (DANN)
/// behavior, λ < 0 a plain scaled pass-through (the MTL reading).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrlSpec {
    pub lambda: f64,
}

/// Cross-correlation of `input` [batch, in_ch, len] with `weights`
/// [out_ch, in_ch, k] plus `bias` [out_ch], zero-padded per the spec.
pub fn conv1d(
    g: &mut Graph,
    input: NodeId,
    weights: NodeId,
    bias: NodeId,
    spec: &Conv1dSpec,
) -> Result<NodeId, GraphError> {
    let x = g.shape_of(input).to_vec();
    if x.len() != 3 || x[1] != spec.in_channels {
        return Err(GraphError::ShapeMismatch(format!(
            "conv1d: input node {input} has shape {x:?}, spec expects in_channels {}",
            spec.in_channels
        )));
    }
    let expect_w = spec.weight_shape();
    if g.shape_of(weights) != expect_w {
        return Err(GraphError::ShapeMismatch(format!(
            "conv1d: weights node {weights} has shape {:?}, spec expects {:?}",
            g.shape_of(weights),
            expect_w
        )));
    }
    if g.shape_of(bias) != [spec.out_channels] {
        return Err(GraphError::ShapeMismatch(format!(
            "conv1d: bias node {bias} has shape {:?}, spec expects [{}]",
            g.shape_of(bias),
            spec.out_channels
        )));
    }
    if spec.output_len(x[2]).is_none() {
        return Err(GraphError::ShapeMismatch(format!(
            "conv1d: kernel {} does not fit input length {} with padding {}",
            spec.kernel_size, x[2], spec.padding
        )));
    }
    g.conv1d(input, weights, bias, spec.stride, spec.padding)
}

/// Max over sliding windows along time; gradient goes to the first maximal
/// index of each window.
pub fn maxpool1d(
    g: &mut Graph,
    input: NodeId,
    window: usize,
    stride: usize,
) -> Result<NodeId, GraphError> {
    g.maxpool1d(input, window, stride)
}

/// Affine map [batch, d_in] × [d_in, d_out] + bias. The bias broadcast is
/// lowered to a ones-column matmul because the graph deliberately has no
/// implicit broadcasting.
pub fn dense(
    g: &mut Graph,
    input: NodeId,
    weights: NodeId,
    bias: NodeId,
) -> Result<NodeId, GraphError> {
    let x = g.shape_of(input).to_vec();
    let w = g.shape_of(weights).to_vec();
    let b = g.shape_of(bias).to_vec();
    if x.len() != 2 || w.len() != 2 || b.len() != 1 || x[1] != w[0] || w[1] != b[0] {
        return Err(GraphError::ShapeMismatch(format!(
            "dense: input node {input} {x:?}, weights node {weights} {w:?}, bias node {bias} {b:?}"
        )));
    }
    let (batch, d_out) = (x[0], w[1]);
    let xw = g.matmul(input, weights)?;
    let bias_row = g.reshape(bias, &[1, d_out])?;
    let ones = g.constant(Tensor::full(&[batch, 1], 1.0));
    let tiled = g.matmul(ones, bias_row)?;
    g.add(xw, tiled)
}

/// Identity forward; backward multiplies the incoming gradient by −λ.
pub fn grl(g: &mut Graph, input: NodeId, spec: &GrlSpec) -> NodeId {
    g.grl(input, spec.lambda)
}

/// Mean over the batch of −log softmax(logits)[label].
pub fn softmax_cross_entropy(
    g: &mut Graph,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId, GraphError> {
    g.softmax_xent(logits, labels.to_vec())
}

/// Two-class cross-entropy on domain logits; 0 is the healthy (source)
/// domain, 1 the dysarthric (target) domain.
pub fn domain_cross_entropy(
    g: &mut Graph,
    logits: NodeId,
    domains: &[usize],
) -> Result<NodeId, GraphError> {
    g.binary_xent(logits, domains.to_vec())
}

/// Finite-difference check of every layer builder, mirroring the op-level
/// suite in [`crate::autodiff::gradcheck`]. The grl builder is checked at
/// λ = −1 for the same reason as there.
pub fn layer_gradcheck(seeds: u64, epsilon: f64, threshold: f64) -> GradcheckReport {
    let start = std::time::Instant::now();
    let mut cases = Vec::new();
    for &layer in &["conv1d-layer", "maxpool1d-layer", "dense-layer", "grl-layer", "softmax-loss", "domain-loss"] {
        for seed in 0..seeds {
            let mut rng = SplitMix64::new(crate::rng::derive_seed(seed, &[layer.len() as u64, 77]));
            let mut g = Graph::new();
            let loss = build_layer_case(layer, &mut g, &mut rng);
            g.forward(&Bindings::new()).expect("layer forward");
            let analytic = g.backward(loss).expect("layer backward");
            let mut max_rel_err: f64 = 0.0;
            for &param in g.parameter_ids().to_vec().iter() {
                let fd = g
                    .finite_difference_gradient(loss, param, epsilon, &Bindings::new())
                    .expect("layer finite differences");
                for (a, b) in analytic[&param].data().iter().zip(fd.data()) {
                    max_rel_err = max_rel_err.max(relative_error(*a, *b));
                }
            }
            cases.push(CaseResult { op: layer, seed, max_rel_err });
        }
    }
    GradcheckReport { epsilon, threshold, elapsed_secs: start.elapsed().as_secs_f64(), cases }
}

fn build_layer_case(layer: &str, g: &mut Graph, rng: &mut SplitMix64) -> NodeId {
    let rand = |g: &mut Graph, rng: &mut SplitMix64, shape: &[usize]| {
        let n: usize = shape.iter().product();
        g.parameter(Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()))
    };
    let reduce = |g: &mut Graph, node: NodeId| {
        let n: usize = g.shape_of(node).iter().product();
        let flat = g.reshape(node, &[n]).unwrap();
        g.mean(flat).unwrap()
    };
    match layer {
        "conv1d-layer" => {
            let spec = Conv1dSpec { in_channels: 2, out_channels: 3, kernel_size: 3, stride: 2, padding: 1 };
            let x = rand(g, rng, &[2, 2, 9]);
            let w = rand(g, rng, &[3, 2, 3]);
            let b = rand(g, rng, &[3]);
            let c = conv1d(g, x, w, b, &spec).unwrap();
            let s = g.sigmoid(c);
            reduce(g, s)
        }
        "maxpool1d-layer" => {
            let x = rand(g, rng, &[2, 2, 8]);
            let p = maxpool1d(g, x, 2, 2).unwrap();
            reduce(g, p)
        }
        "dense-layer" => {
            let x = rand(g, rng, &[3, 4]);
            let w = rand(g, rng, &[4, 5]);
            let b = rand(g, rng, &[5]);
            let d = dense(g, x, w, b).unwrap();
            reduce(g, d)
        }
        "grl-layer" => {
            let x = rand(g, rng, &[2, 5]);
            let r = grl(g, x, &GrlSpec { lambda: -1.0 });
            let s = g.sigmoid(r);
            reduce(g, s)
        }
        "softmax-loss" => {
            let logits = rand(g, rng, &[4, 10]);
            let labels: Vec<usize> = (0..4).map(|_| rng.below(10)).collect();
            softmax_cross_entropy(g, logits, &labels).unwrap()
        }
        "domain-loss" => {
            let logits = rand(g, rng, &[6, 2]);
            let domains: Vec<usize> = (0..6).map(|_| rng.below(2)).collect();
            domain_cross_entropy(g, logits, &domains).unwrap()
        }
        other => panic!("unknown layer case {other}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(g: &mut Graph, shape: &[usize], data: &[f64]) -> NodeId {
        g.parameter(Tensor::from_vec(shape, data.to_vec()))
    }

    /// Brute-force cross-correlation used as the independent conv oracle.
    fn conv_oracle(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        batch: usize,
        in_ch: usize,
        len: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let out_len = (len + 2 * padding - k) / stride + 1;
        let mut out = vec![0.0; batch * out_ch * out_len];
        for b in 0..batch {
            for co in 0..out_ch {
                for t in 0..out_len {
                    let mut acc = bias[co];
                    for ci in 0..in_ch {
                        for j in 0..k {
                            let pos = t * stride + j;
                            if pos >= padding && pos - padding < len {
                                acc += w[(co * in_ch + ci) * k + j]
                                    * x[(b * in_ch + ci) * len + (pos - padding)];
                            }
                        }
                    }
                    out[(b * out_ch + co) * out_len + t] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_hand_example() {
        // [1,2,3,4] ⊛ [1,0,−1], stride 1, no padding, zero bias → [−2,−2]
        let mut g = Graph::new();
        let x = param(&mut g, &[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let w = param(&mut g, &[1, 1, 3], &[1.0, 0.0, -1.0]);
        let b = param(&mut g, &[1], &[0.0]);
        let spec = Conv1dSpec { in_channels: 1, out_channels: 1, kernel_size: 3, stride: 1, padding: 0 };
        conv1d(&mut g, x, w, b, &spec).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert_eq!(out.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let x = param(&mut g, &[1, 1, 5], &[0.5, -1.0, 2.0, 0.0, 3.0]);
        let w = param(&mut g, &[1, 1, 1], &[1.0]);
        let b = param(&mut g, &[1], &[0.0]);
        let spec = Conv1dSpec { in_channels: 1, out_channels: 1, kernel_size: 1, stride: 1, padding: 0 };
        conv1d(&mut g, x, w, b, &spec).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert_eq!(out.data(), &[0.5, -1.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn conv_output_length_formula() {
        let spec = Conv1dSpec { in_channels: 1, out_channels: 1, kernel_size: 64, stride: 4, padding: 0 };
        assert_eq!(spec.output_len(24000), Some(5985));
        let tight = Conv1dSpec { in_channels: 1, out_channels: 1, kernel_size: 8, stride: 2, padding: 0 };
        assert_eq!(tight.output_len(8), Some(1));
        assert_eq!(tight.output_len(7), None);
    }

    #[test]
    fn conv_matches_brute_force_oracle() {
        let mut rng = SplitMix64::new(99);
        for case in 0..20 {
            let batch = 1 + rng.below(2);
            let in_ch = 1 + rng.below(3);
            let out_ch = 1 + rng.below(3);
            let len = 4 + rng.below(13); // ≤ 16
            let k = 1 + rng.below(3.min(len));
            let stride = 1 + rng.below(2);
            let padding = rng.below(2);
            let spec = Conv1dSpec { in_channels: in_ch, out_channels: out_ch, kernel_size: k, stride, padding };
            if spec.output_len(len).is_none() {
                continue;
            }
            let xv: Vec<f64> = (0..batch * in_ch * len).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let wv: Vec<f64> = (0..out_ch * in_ch * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let bv: Vec<f64> = (0..out_ch).map(|_| rng.uniform(-1.0, 1.0)).collect();

            let mut g = Graph::new();
            let x = param(&mut g, &[batch, in_ch, len], &xv);
            let w = param(&mut g, &[out_ch, in_ch, k], &wv);
            let b = param(&mut g, &[out_ch], &bv);
            conv1d(&mut g, x, w, b, &spec).unwrap();
            let got = g.forward(&Bindings::new()).unwrap();
            let want = conv_oracle(&xv, &wv, &bv, batch, in_ch, len, out_ch, k, stride, padding);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::new();
        let x = param(&mut g, &[1, 1, 4], &[1.0, 3.0, 2.0, 5.0]);
        maxpool1d(&mut g, x, 2, 2).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);

        let mut g = Graph::new();
        let x = param(&mut g, &[1, 1, 6], &[0.7; 6]);
        maxpool1d(&mut g, x, 3, 1).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn maxpool_tie_routes_gradient_to_first_index() {
        let mut g = Graph::new();
        let x = param(&mut g, &[1, 1, 2], &[2.0, 2.0]);
        let p = maxpool1d(&mut g, x, 2, 1).unwrap();
        let m = g.reshape(p, &[1]).unwrap();
        let loss = g.mean(m).unwrap();
        g.forward(&Bindings::new()).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[&x].data(), &[1.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_oversized_window() {
        let mut g = Graph::new();
        let x = param(&mut g, &[1, 1, 3], &[0.0; 3]);
        assert!(maxpool1d(&mut g, x, 4, 1).is_err());
    }

    #[test]
    fn dense_examples() {
        // identity weights, zero bias
        let mut g = Graph::new();
        let x = param(&mut g, &[1, 2], &[0.4, -0.9]);
        let w = param(&mut g, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = param(&mut g, &[2], &[0.0, 0.0]);
        dense(&mut g, x, w, b).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert_eq!(out.data(), &[0.4, -0.9]);

        // zero weights: every row equals the bias
        let mut g = Graph::new();
        let x = param(&mut g, &[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = param(&mut g, &[2, 2], &[0.0; 4]);
        let b = param(&mut g, &[2], &[0.25, -0.5]);
        dense(&mut g, x, w, b).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert_eq!(out.data(), &[0.25, -0.5, 0.25, -0.5, 0.25, -0.5]);

        // [1,2] · [[1],[1]] + [0.5] = [3.5]
        let mut g = Graph::new();
        let x = param(&mut g, &[1, 2], &[1.0, 2.0]);
        let w = param(&mut g, &[2, 1], &[1.0, 1.0]);
        let b = param(&mut g, &[1], &[0.5]);
        dense(&mut g, x, w, b).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert_eq!(out.data(), &[3.5]);
    }

    #[test]
    fn grl_forward_identity_any_lambda() {
        for lambda in [1.5, -0.5, 0.0, 7.25] {
            let mut g = Graph::new();
            let x = param(&mut g, &[2], &[0.3, -0.7]);
            grl(&mut g, x, &GrlSpec { lambda });
            let out = g.forward(&Bindings::new()).unwrap();
            assert_eq!(out.data(), &[0.3, -0.7]);
        }
    }

    #[test]
    fn grl_backward_scales_by_minus_lambda() {
        // incoming gradient [1, −2]; λ=1.5 → [−1.5, 3.0]; λ=−0.5 → [0.5, −1.0]
        for (lambda, want) in [(1.5, [-1.5, 3.0]), (-0.5, [0.5, -1.0])] {
            let mut g = Graph::new();
            let x = param(&mut g, &[2], &[0.3, -0.7]);
            let r = grl(&mut g, x, &GrlSpec { lambda });
            let c = g.constant(Tensor::from_vec(&[2], vec![2.0, -4.0]));
            let prod = g.mul(r, c).unwrap();
            let loss = g.mean(prod).unwrap();
            g.forward(&Bindings::new()).unwrap();
            let grads = g.backward(loss).unwrap();
            assert_eq!(g.grad_of(r).unwrap().data(), &[1.0, -2.0]);
            assert_eq!(grads[&x].data(), &want);
        }
    }

    #[test]
    fn softmax_examples() {
        // ten equal logits → ln 10 regardless of label
        let mut g = Graph::new();
        let logits = param(&mut g, &[1, 10], &[0.2; 10]);
        softmax_cross_entropy(&mut g, logits, &[3]).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!((out.item() - 10.0_f64.ln()).abs() < 1e-12);

        // saturated one-hot ×1000 → ≈ 0
        let mut g = Graph::new();
        let mut data = vec![0.0; 10];
        data[4] = 1000.0;
        let logits = param(&mut g, &[1, 10], &data);
        softmax_cross_entropy(&mut g, logits, &[4]).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!(out.item().abs() < 1e-12);
        assert!(out.item() >= 0.0);

        // [1, 0], label 0 → ln(1 + e⁻¹)
        let mut g = Graph::new();
        let logits = param(&mut g, &[1, 2], &[1.0, 0.0]);
        softmax_cross_entropy(&mut g, logits, &[0]).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!((out.item() - 0.313_261_687_5).abs() < 1e-9, "{}", out.item());
    }

    #[test]
    fn softmax_label_out_of_range() {
        let mut g = Graph::new();
        let logits = param(&mut g, &[1, 10], &[0.0; 10]);
        let err = softmax_cross_entropy(&mut g, logits, &[10]).unwrap_err();
        assert!(matches!(err, GraphError::LabelOutOfRange { label: 10, classes: 10, .. }));
    }

    #[test]
    fn domain_loss_examples() {
        let mut g = Graph::new();
        let logits = param(&mut g, &[1, 2], &[0.1, 0.1]);
        domain_cross_entropy(&mut g, logits, &[1]).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!((out.item() - 2.0_f64.ln()).abs() < 1e-12);

        // confident correct separation → ≈ 0
        let mut g = Graph::new();
        let logits = param(&mut g, &[2, 2], &[50.0, -50.0, -50.0, 50.0]);
        domain_cross_entropy(&mut g, logits, &[0, 1]).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!(out.item() < 1e-12);

        // [0.5, −0.5], domain 1 → 1 + ln(1 + e⁻¹)
        let mut g = Graph::new();
        let logits = param(&mut g, &[1, 2], &[0.5, -0.5]);
        domain_cross_entropy(&mut g, logits, &[1]).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!((out.item() - 1.313_261_687_5).abs() < 1e-9, "{}", out.item());
    }

    #[test]
    fn softmax_loss_is_nonnegative() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..50 {
            let mut g = Graph::new();
            let data: Vec<f64> = (0..3 * 7).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let logits = param(&mut g, &[3, 7], &data);
            let labels: Vec<usize> = (0..3).map(|_| rng.below(7)).collect();
            softmax_cross_entropy(&mut g, logits, &labels).unwrap();
            let out = g.forward(&Bindings::new()).unwrap();
            assert!(out.item() >= 0.0);
        }
    }

    #[test]
    fn layer_gradcheck_passes() {
        let report = layer_gradcheck(5, 1e-5, 1e-4);
        assert!(report.passed(), "\n{report}");
    }
}
