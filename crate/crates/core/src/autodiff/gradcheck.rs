//! Finite-difference verification of every graph op.
//!
//! For each op kind the suite builds a small random graph, reduces it to a
//! scalar, and compares [`Graph::backward`] against
//! [`Graph::finite_difference_gradient`] for every parameter in the graph.
//! The comparison metric is |a−b| / max(1, |a|, |b|).
//!
//! The gradient reversal op is checked at λ = −1, the one value at which
//! its backward pass agrees with the true derivative of its (identity)
//! forward pass; its sign algebra for other λ is pinned down exactly by the
//! dedicated GRL tests.

use std::fmt;
use std::time::Instant;

use super::{Bindings, Graph, NodeId};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 5;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub op: &'static str,
    pub seed: u64,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub epsilon: f64,
    pub threshold: f64,
    pub elapsed_secs: f64,
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.threshold
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ops: Vec<&'static str> = self.cases.iter().map(|c| c.op).collect();
        ops.dedup();
        for op in ops {
            let worst = self
                .cases
                .iter()
                .filter(|c| c.op == op)
                .map(|c| c.max_rel_err)
                .fold(0.0, f64::max);
            writeln!(f, "{op:<16} max rel err {worst:.3e}")?;
        }
        write!(
            f,
            "{} ({} cases, eps {:.0e}, threshold {:.0e}, {:.2}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases.len(),
            self.epsilon,
            self.threshold,
            self.elapsed_secs
        )
    }
}

fn rand_tensor(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
}

/// Like `rand_tensor` but keeps entries away from zero so finite differences
/// do not straddle the relu/maxpool kinks.
fn rand_tensor_offset(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += if *v >= 0.0 { 0.1 } else { -0.1 };
        }
    }
    t
}

struct Case {
    graph: Graph,
    loss: NodeId,
    bindings: Bindings,
}

/// Flattens to rank 1 and means to a scalar, exercising reshape + mean as
/// the standard reduction tail.
fn reduce_to_scalar(g: &mut Graph, node: NodeId) -> NodeId {
    let n = g.shape_of(node).iter().product::<usize>();
    let flat = g.reshape(node, &[n]).expect("flat reshape");
    g.mean(flat).expect("mean to scalar")
}

fn build_case(op: &'static str, rng: &mut SplitMix64) -> Case {
    let mut g = Graph::new();
    let mut bindings = Bindings::new();
    let loss = match op {
        // `parameter` and `input` are leaves: checked by passing one of each
        // through an elementwise sum.
        "input/parameter" => {
            let p = g.parameter(rand_tensor(rng, &[3, 4]));
            let x = g.input(&[3, 4]);
            bindings.insert(x, rand_tensor(rng, &[3, 4]));
            let s = g.add(p, x).unwrap();
            reduce_to_scalar(&mut g, s)
        }
        "add" => {
            let a = g.parameter(rand_tensor(rng, &[2, 5]));
            let b = g.parameter(rand_tensor(rng, &[2, 5]));
            let s = g.add(a, b).unwrap();
            reduce_to_scalar(&mut g, s)
        }
        "mul" => {
            let a = g.parameter(rand_tensor(rng, &[4, 3]));
            let b = g.parameter(rand_tensor(rng, &[4, 3]));
            let m = g.mul(a, b).unwrap();
            reduce_to_scalar(&mut g, m)
        }
        "matmul" => {
            let a = g.parameter(rand_tensor(rng, &[3, 4]));
            let b = g.parameter(rand_tensor(rng, &[4, 2]));
            let m = g.matmul(a, b).unwrap();
            reduce_to_scalar(&mut g, m)
        }
        "conv1d" => {
            let x = g.parameter(rand_tensor(rng, &[2, 3, 8]));
            let w = g.parameter(rand_tensor(rng, &[2, 3, 3]));
            let b = g.parameter(rand_tensor(rng, &[2]));
            let c = g.conv1d(x, w, b, 2, 1).unwrap();
            reduce_to_scalar(&mut g, c)
        }
        "maxpool1d" => {
            let x = g.parameter(rand_tensor_offset(rng, &[2, 2, 8]));
            let p = g.maxpool1d(x, 3, 2).unwrap();
            reduce_to_scalar(&mut g, p)
        }
        "relu" => {
            let x = g.parameter(rand_tensor_offset(rng, &[3, 5]));
            let r = g.relu(x);
            reduce_to_scalar(&mut g, r)
        }
        "sigmoid" => {
            let x = g.parameter(rand_tensor(rng, &[3, 5]));
            let s = g.sigmoid(x);
            reduce_to_scalar(&mut g, s)
        }
        "softmax-xent" => {
            let logits = g.parameter(rand_tensor(rng, &[4, 6]));
            let labels: Vec<usize> = (0..4).map(|_| rng.below(6)).collect();
            g.softmax_xent(logits, labels).unwrap()
        }
        "binary-xent" => {
            let logits = g.parameter(rand_tensor(rng, &[5, 2]));
            let domains: Vec<usize> = (0..5).map(|_| rng.below(2)).collect();
            g.binary_xent(logits, domains).unwrap()
        }
        "grl" => {
            let x = g.parameter(rand_tensor(rng, &[2, 6]));
            let r = g.grl(x, -1.0);
            reduce_to_scalar(&mut g, r)
        }
        "reshape" => {
            let x = g.parameter(rand_tensor(rng, &[2, 6]));
            let r = g.reshape(x, &[3, 4]).unwrap();
            reduce_to_scalar(&mut g, r)
        }
        "mean" => {
            let x = g.parameter(rand_tensor(rng, &[3, 5]));
            let m = g.mean(x).unwrap(); // [3]
            g.mean(m).unwrap()
        }
        "scale" => {
            let x = g.parameter(rand_tensor(rng, &[4, 4]));
            let s = g.scale(x, 1.7);
            reduce_to_scalar(&mut g, s)
        }
        other => panic!("unknown gradcheck case {other}"),
    };
    Case { graph: g, loss, bindings }
}

const OPS: &[&str] = &[
    "input/parameter",
    "add",
    "mul",
    "matmul",
    "conv1d",
    "maxpool1d",
    "relu",
    "sigmoid",
    "softmax-xent",
    "binary-xent",
    "grl",
    "reshape",
    "mean",
    "scale",
];

pub fn run_suite(seeds: u64, epsilon: f64, threshold: f64) -> GradcheckReport {
    let start = Instant::now();
    let mut cases = Vec::new();
    for &op in OPS {
        for seed in 0..seeds {
            let mut rng = SplitMix64::new(crate::rng::derive_seed(seed, &[op.len() as u64]));
            let Case { mut graph, loss, bindings } = build_case(op, &mut rng);
            graph.forward(&bindings).expect("gradcheck forward");
            let analytic = graph.backward(loss).expect("gradcheck backward");
            let mut max_rel_err: f64 = 0.0;
            for &param in graph.parameter_ids().to_vec().iter() {
                let fd = graph
                    .finite_difference_gradient(loss, param, epsilon, &bindings)
                    .expect("finite differences");
                for (a, b) in analytic[&param].data().iter().zip(fd.data()) {
                    max_rel_err = max_rel_err.max(relative_error(*a, *b));
                }
            }
            cases.push(CaseResult { op, seed, max_rel_err });
        }
    }
    GradcheckReport { epsilon, threshold, elapsed_secs: start.elapsed().as_secs_f64(), cases }
}

pub fn run_default_suite() -> GradcheckReport {
    run_suite(DEFAULT_SEEDS, DEFAULT_EPSILON, DEFAULT_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_default_suite();
        assert!(report.passed(), "\n{report}");
    }

    #[test]
    fn relative_error_uses_unit_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-6, 0.0) - 1e-6).abs() < 1e-18);
        assert!((relative_error(200.0, 100.0) - 0.5).abs() < 1e-12);
    }
}
