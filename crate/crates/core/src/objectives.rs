//! Binary logistic regression with the nonconvex penalty `lambda * sum_j theta_j^2 / (1 + theta_j^2)`.
//!
//! Losses are the negative log-likelihood, so `F(theta) >= 0`. Gradients are reduced
//! sequentially in index order, which keeps every run bitwise reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    /// Always 0 or 1.
    pub label: u8,
}

impl Example {
    pub fn new(features: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return invalid(format!("label must be 0 or 1, got {label}"));
        }
        Ok(Self { features, label })
    }

    fn target(&self) -> f64 {
        f64::from(self.label)
    }
}

/// A non-empty collection of examples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, dim: usize) -> Result<Self> {
        if examples.is_empty() {
            return invalid("dataset must contain at least one example");
        }
        if let Some((i, ex)) = examples.iter().enumerate().find(|(_, ex)| ex.features.len() != dim) {
            return invalid(format!(
                "example {i} has {} features, expected {dim}",
                ex.features.len()
            ));
        }
        if let Some(i) = examples.iter().position(|ex| ex.label > 1) {
            return invalid(format!("example {i} has a non-binary label"));
        }
        Ok(Self { examples, dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    /// New dataset holding the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("index {i} out of range for {} examples", self.len()));
        }
        Self::new(indices.iter().map(|&i| self.examples[i].clone()).collect(), self.dim)
    }

    /// Fraction of examples with label 1.
    pub fn positive_rate(&self) -> f64 {
        self.examples.iter().filter(|ex| ex.label == 1).count() as f64 / self.len() as f64
    }

    /// Divide every feature vector by the largest example norm and return that norm.
    pub fn scale_to_unit_max_norm(&mut self) -> f64 {
        let max = self.examples.iter().map(|ex| norm(&ex.features)).fold(0.0, f64::max);
        self.divide_features(max);
        max
    }

    /// Divide every feature by `divisor` (no-op unless it is positive).
    pub fn divide_features(&mut self, divisor: f64) {
        if divisor > 0.0 {
            for ex in &mut self.examples {
                ex.features.iter_mut().for_each(|x| *x /= divisor);
            }
        }
    }
}

/// Dense parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Loss configuration used by every optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub lambda: f64,
    pub clip_threshold: f64,
    /// Lipschitz bound used for noise calibration. Equal to `clip_threshold`.
    pub lipschitz_g: f64,
    pub smoothness_l: f64,
}

impl Objective {
    pub fn new(lambda: f64, clip_threshold: f64, smoothness_l: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return invalid(format!("lambda must be finite and >= 0, got {lambda}"));
        }
        if !(clip_threshold > 0.0) {
            return invalid(format!("clip threshold must be > 0, got {clip_threshold}"));
        }
        if !(smoothness_l > 0.0) || !smoothness_l.is_finite() {
            return invalid(format!("smoothness L must be finite and > 0, got {smoothness_l}"));
        }
        Ok(Self {
            lambda,
            clip_threshold,
            lipschitz_g: clip_threshold,
            smoothness_l,
        })
    }

    /// Objective with `L` taken from [`smoothness_bound`].
    pub fn for_data(data: &Dataset, lambda: f64, clip_threshold: f64) -> Result<Self> {
        Self::new(lambda, clip_threshold, smoothness_bound(data, lambda))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(theta: &ModelParams, dim: usize) -> Result<()> {
    if theta.dim() != dim {
        return invalid(format!(
            "parameter dimension {} != feature dimension {dim}",
            theta.dim()
        ));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return invalid(format!("lambda must be >= 0, got {lambda}"));
    }
    Ok(())
}

fn nll(margin: f64, target: f64) -> f64 {
    let p = sigmoid(margin).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// `lambda * sum_j theta_j^2 / (1 + theta_j^2)`.
pub fn regularizer(theta: &ModelParams, lambda: f64) -> f64 {
    lambda * theta.0.iter().map(|t| t * t / (1.0 + t * t)).sum::<f64>()
}

/// Mean negative log-likelihood plus the nonconvex penalty.
pub fn loss_value(theta: &ModelParams, data: &Dataset, lambda: f64) -> Result<f64> {
    check_dim(theta, data.dim())?;
    check_lambda(lambda)?;
    let total: f64 = data
        .examples()
        .iter()
        .map(|ex| nll(dot(&theta.0, &ex.features), ex.target()))
        .sum();
    Ok(total / data.len() as f64 + regularizer(theta, lambda))
}

/// Loss of a single component `f_i`, penalty included.
pub fn example_loss(theta: &ModelParams, ex: &Example, lambda: f64) -> Result<f64> {
    check_dim(theta, ex.features.len())?;
    check_lambda(lambda)?;
    Ok(nll(dot(&theta.0, &ex.features), ex.target()) + regularizer(theta, lambda))
}

fn write_example_grad(theta: &[f64], ex: &Example, lambda: f64, out: &mut [f64]) {
    let residual = sigmoid(dot(theta, &ex.features)) - ex.target();
    for ((o, &x), &t) in out.iter_mut().zip(&ex.features).zip(theta) {
        let s = 1.0 + t * t;
        *o = residual * x + lambda * 2.0 * t / (s * s);
    }
}

/// Gradient of `f_i`: `(phi(x^T theta) - y) x + lambda * (2 theta_j / (1 + theta_j^2)^2)_j`.
pub fn example_grad(theta: &ModelParams, ex: &Example, lambda: f64) -> Result<Vec<f64>> {
    check_dim(theta, ex.features.len())?;
    check_lambda(lambda)?;
    let mut out = vec![0.0; theta.dim()];
    write_example_grad(&theta.0, ex, lambda, &mut out);
    Ok(out)
}

fn clip_in_place(g: &mut [f64], c: f64) {
    let n = norm(g);
    if n <= c {
        return;
    }
    let mut scale = c / n;
    loop {
        g.iter_mut().for_each(|x| *x *= scale);
        if norm(g) <= c {
            return;
        }
        // Rounding pushed the norm a few ulps past c; shave and retry.
        scale = 1.0 - f64::EPSILON;
    }
}

/// Rescale `g` onto the ball of radius `c` when it lies outside.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    out
}

/// Scratch space for accumulating clipped per-example gradients without allocating.
pub(crate) struct GradAccumulator {
    scratch: Vec<f64>,
}

impl GradAccumulator {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            scratch: vec![0.0; dim],
        }
    }

    /// `acc += weight * clip(grad f_i(theta), C)`.
    pub(crate) fn add_clipped(&mut self, theta: &[f64], ex: &Example, obj: &Objective, weight: f64, acc: &mut [f64]) {
        write_example_grad(theta, ex, obj.lambda, &mut self.scratch);
        clip_in_place(&mut self.scratch, obj.clip_threshold);
        for (a, g) in acc.iter_mut().zip(&self.scratch) {
            *a += weight * g;
        }
    }

    /// `acc += weight * grad f_i(theta)` without clipping.
    pub(crate) fn add_raw(&mut self, theta: &[f64], ex: &Example, lambda: f64, weight: f64, acc: &mut [f64]) {
        write_example_grad(theta, ex, lambda, &mut self.scratch);
        for (a, g) in acc.iter_mut().zip(&self.scratch) {
            *a += weight * g;
        }
    }
}

/// Mean of clipped per-example gradients over `indices`.
pub fn batch_clipped_grad(theta: &ModelParams, data: &Dataset, indices: &[usize], obj: &Objective) -> Result<Vec<f64>> {
    check_dim(theta, data.dim())?;
    if indices.is_empty() {
        return invalid("index set must be nonempty");
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= data.len()) {
        return invalid(format!("index {i} out of range for {} examples", data.len()));
    }
    let mut acc = vec![0.0; data.dim()];
    let mut grads = GradAccumulator::new(data.dim());
    let w = 1.0 / indices.len() as f64;
    for &i in indices {
        grads.add_clipped(&theta.0, data.get(i), obj, w, &mut acc);
    }
    Ok(acc)
}

/// Mean of clipped per-example gradients over the whole dataset.
pub fn full_clipped_grad(theta: &ModelParams, data: &Dataset, obj: &Objective) -> Result<Vec<f64>> {
    check_dim(theta, data.dim())?;
    let mut acc = vec![0.0; data.dim()];
    let mut grads = GradAccumulator::new(data.dim());
    let w = 1.0 / data.len() as f64;
    for ex in data.examples() {
        grads.add_clipped(&theta.0, ex, obj, w, &mut acc);
    }
    Ok(acc)
}

/// Exact gradient of [`loss_value`] (no clipping). Used for non-private diagnostics.
pub fn full_gradient(theta: &ModelParams, data: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    check_dim(theta, data.dim())?;
    check_lambda(lambda)?;
    let mut acc = vec![0.0; data.dim()];
    let mut grads = GradAccumulator::new(data.dim());
    let w = 1.0 / data.len() as f64;
    for ex in data.examples() {
        grads.add_raw(&theta.0, ex, lambda, w, &mut acc);
    }
    Ok(acc)
}

/// Default gradient-Lipschitz constant: `0.25 * max_i |x_i|^2 + 2 lambda`.
///
/// The first term bounds the curvature of the logistic loss, the second the largest
/// curvature of the penalty (attained at `theta_j = 0`).
pub fn smoothness_bound(data: &Dataset, lambda: f64) -> f64 {
    let max_sq = data
        .examples()
        .iter()
        .map(|ex| dot(&ex.features, &ex.features))
        .fold(0.0, f64::max);
    let l = 0.25 * max_sq + 2.0 * lambda;
    if l > 0.0 {
        l
    } else {
        f64::MIN_POSITIVE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(x: &[f64], y: u8) -> Example {
        Example::new(x.to_vec(), y).unwrap()
    }

    fn central_diff(f: impl Fn(&ModelParams) -> f64, theta: &ModelParams, h: f64) -> Vec<f64> {
        (0..theta.dim())
            .map(|j| {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p.0[j] += h;
                m.0[j] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn loss_at_zero_is_log_two() {
        let data = Dataset::new(vec![ex(&[1.0, 2.0], 1), ex(&[-3.0, 0.5], 0)], 2).unwrap();
        let v = loss_value(&ModelParams::zeros(2), &data, 0.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        // The penalty vanishes at zero.
        let v1 = loss_value(&ModelParams::zeros(2), &data, 1.0).unwrap();
        assert_eq!(v, v1);
    }

    #[test]
    fn penalty_saturates_at_dimension() {
        let t = ModelParams(vec![1e8; 3]);
        assert!((regularizer(&t, 1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_example_loss() {
        let data = Dataset::new(vec![ex(&[1.0], 1)], 1).unwrap();
        let v = loss_value(&ModelParams(vec![2.0]), &data, 0.0).unwrap();
        // -ln(1 / (1 + e^-2)) = ln(1 + e^-2)
        let oracle = (-2.0f64).exp().ln_1p();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn extreme_margins_stay_finite() {
        let data = Dataset::new(vec![ex(&[1.0], 0)], 1).unwrap();
        let v = loss_value(&ModelParams(vec![1e6]), &data, 0.0).unwrap();
        assert!(v.is_finite());
        assert!((v - (-(PROB_FLOOR).ln())).abs() < 1e-3);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let data = Dataset::new(vec![ex(&[1.0], 0)], 1).unwrap();
        assert!(matches!(
            loss_value(&ModelParams::zeros(2), &data, 0.0),
            Err(crate::Error::InvalidInput(_))
        ));
        assert!(example_grad(&ModelParams::zeros(2), data.get(0), 0.0).is_err());
        assert!(Dataset::new(vec![ex(&[1.0], 0), ex(&[1.0, 2.0], 1)], 1).is_err());
        assert!(Example::new(vec![1.0], 2).is_err());
    }

    #[test]
    fn grad_at_zero() {
        let g = example_grad(&ModelParams::zeros(2), &ex(&[1.0, 0.0], 1), 0.0).unwrap();
        assert_eq!(g, vec![-0.5, 0.0]);
        let g = example_grad(&ModelParams::zeros(2), &ex(&[0.3, -2.0], 0), 0.7).unwrap();
        let g0 = example_grad(&ModelParams::zeros(2), &ex(&[0.3, -2.0], 0), 0.0).unwrap();
        assert_eq!(g, g0);
    }

    #[test]
    fn penalty_gradient_matches_finite_difference() {
        let e = ex(&[0.0], 0);
        let theta = ModelParams(vec![1.0]);
        let g = example_grad(&theta, &e, 0.001).unwrap();
        assert!((g[0] - 0.0005).abs() < 1e-15);
        let fd = central_diff(|t| example_loss(t, &e, 0.001).unwrap(), &theta, 1e-6);
        assert!(((fd[0] - g[0]) / g[0]).abs() < 1e-6);
    }

    #[test]
    fn clip_examples() {
        let c = clip(&[3.0, 4.0], 2.0);
        assert!((c[0] - 1.2).abs() < 1e-15 && (c[1] - 1.6).abs() < 1e-15);
        assert_eq!(clip(&[0.1, 0.0], 2.0), vec![0.1, 0.0]);
        assert_eq!(clip(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn batch_grad_edge_cases() {
        let data = Dataset::new(vec![ex(&[1.0, 2.0], 1), ex(&[-1.0, -2.0], 1), ex(&[4.0, 0.0], 0)], 2).unwrap();
        let obj = Objective::new(0.0, 1.0, 1.0).unwrap();
        let theta = ModelParams(vec![0.2, -0.1]);
        assert!(batch_clipped_grad(&theta, &data, &[], &obj).is_err());
        assert!(batch_clipped_grad(&theta, &data, &[3], &obj).is_err());
        let single = batch_clipped_grad(&theta, &data, &[2], &obj).unwrap();
        let direct = clip(&example_grad(&theta, data.get(2), 0.0).unwrap(), 1.0);
        assert_eq!(single, direct);

        // At theta = 0 with equal labels, x and -x give opposite gradients.
        let wide = Objective::new(0.0, 100.0, 1.0).unwrap();
        let g = batch_clipped_grad(&ModelParams::zeros(2), &data, &[0, 1], &wide).unwrap();
        assert!(norm(&g) < 1e-15);
    }

    #[test]
    fn full_batch_without_clipping_is_the_loss_gradient() {
        let data = Dataset::new(
            vec![
                ex(&[1.0, 2.0, -0.5], 1),
                ex(&[-1.5, 0.3, 0.8], 0),
                ex(&[0.2, 0.0, 1.1], 1),
                ex(&[2.0, -1.0, 0.0], 0),
            ],
            3,
        )
        .unwrap();
        let lambda = 0.05;
        let obj = Objective::new(lambda, f64::INFINITY, 1.0).unwrap();
        let theta = ModelParams(vec![0.4, -0.7, 1.3]);
        let all: Vec<usize> = (0..data.len()).collect();
        let g = batch_clipped_grad(&theta, &data, &all, &obj).unwrap();
        let fd = central_diff(|t| loss_value(t, &data, lambda).unwrap(), &theta, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() / b.abs().max(1e-3) < 1e-5, "{a} vs {b}");
        }
        let exact = full_gradient(&theta, &data, lambda).unwrap();
        for (a, b) in g.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothness_examples() {
        let unit = Dataset::new(vec![ex(&[1.0, 0.0], 0), ex(&[0.6, 0.8], 1)], 2).unwrap();
        assert!((smoothness_bound(&unit, 0.0) - 0.25).abs() < 1e-15);
        assert!((smoothness_bound(&unit, 0.001) - 0.252).abs() < 1e-15);
        let wide = Dataset::new(vec![ex(&[2.0, 0.0], 0), ex(&[0.0, 1.0], 1)], 2).unwrap();
        assert!((smoothness_bound(&wide, 0.0) - 1.0).abs() < 1e-15);
    }

    fn vec_strategy(d: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-r..r, d)
    }

    proptest! {
        #[test]
        fn clip_is_bounded_and_parallel(g in vec_strategy(6, 1e3), c in 1e-3f64..10.0) {
            let out = clip(&g, c);
            let n = norm(&out);
            prop_assert!(n <= c);
            if norm(&g) <= c {
                prop_assert_eq!(&out, &g);
            } else {
                let ratio = n / norm(&g);
                for (o, x) in out.iter().zip(&g) {
                    prop_assert!((o - ratio * x).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
        }

        #[test]
        fn example_grad_matches_finite_difference(
            theta in vec_strategy(4, 2.0),
            x in vec_strategy(4, 2.0),
            y in 0u8..2,
            lambda in 0.0f64..1.0,
        ) {
            let e = ex(&x, y);
            let t = ModelParams(theta);
            let g = example_grad(&t, &e, lambda).unwrap();
            let fd = central_diff(|p| example_loss(p, &e, lambda).unwrap(), &t, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-2), "{} vs {}", a, b);
            }
        }

        #[test]
        fn regularizer_in_range(theta in vec_strategy(5, 1e4), lambda in 0.0f64..10.0) {
            let r = regularizer(&ModelParams(theta), lambda);
            prop_assert!(r >= 0.0 && r <= lambda * 5.0 + 1e-12);
        }
    }
}
