//! Numeric kernel: flat-parameter softmax classifiers (multinomial logistic
//! regression and a one-hidden-layer ReLU MLP) with manual backpropagation.
//!
//! Everything here is a pure function of its explicit inputs. All arithmetic
//! is f64; the distance-gap metric and FedEraser's norm-preserving
//! calibration depend on reproducible sums.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    LogReg,
    Mlp { hidden: usize },
}

/// Shape descriptor for a model; the unit all `ParamVector`s are checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::input("input_dim must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::input("num_classes must be at least 2"));
        }
        if let Arch::Mlp { hidden } = arch {
            if hidden == 0 {
                return Err(Error::input("hidden width must be positive"));
            }
        }
        Ok(ModelSpec {
            arch,
            input_dim,
            num_classes,
        })
    }

    pub fn param_count(&self) -> usize {
        let d = self.input_dim;
        let k = self.num_classes;
        match self.arch {
            Arch::LogReg => d * k + k,
            Arch::Mlp { hidden: h } => d * h + h + h * k + k,
        }
    }

    pub fn hidden(&self) -> usize {
        match self.arch {
            Arch::LogReg => 0,
            Arch::Mlp { hidden } => hidden,
        }
    }
}

/// Flat f64 parameter vector tied to a `ModelSpec`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub spec: ModelSpec,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::input(format!(
                "param vector length {} does not match spec param count {}",
                values.len(),
                spec.param_count()
            )));
        }
        Ok(ParamVector { spec, values })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        ParamVector {
            spec,
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_same_spec(&self, other: &ParamVector) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::input("param vectors have different model specs"));
        }
        Ok(())
    }

    /// self + alpha * other, elementwise.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_spec(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector {
            spec: self.spec,
            values,
        })
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_spec(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ParamVector {
            spec: self.spec,
            values,
        })
    }

    pub fn l2_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_spec(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// A mini-batch or full dataset view fed to the numeric kernel.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::input("feature rows and label count differ"));
        }
        if labels.is_empty() {
            return Err(Error::input("batch must contain at least one sample"));
        }
        Ok(Batch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

struct LogRegView<'a> {
    w: ArrayView2<'a, f64>,
    b: &'a [f64],
}

struct MlpView<'a> {
    w1: ArrayView2<'a, f64>,
    b1: &'a [f64],
    w2: ArrayView2<'a, f64>,
    b2: &'a [f64],
}

fn logreg_view(p: &ParamVector) -> LogRegView<'_> {
    let d = p.spec.input_dim;
    let k = p.spec.num_classes;
    LogRegView {
        w: ArrayView2::from_shape((d, k), &p.values[..d * k]).unwrap(),
        b: &p.values[d * k..],
    }
}

fn mlp_view(p: &ParamVector) -> MlpView<'_> {
    let d = p.spec.input_dim;
    let k = p.spec.num_classes;
    let h = p.spec.hidden();
    let (w1, rest) = p.values.split_at(d * h);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h * k);
    MlpView {
        w1: ArrayView2::from_shape((d, h), w1).unwrap(),
        b1,
        w2: ArrayView2::from_shape((h, k), w2).unwrap(),
        b2,
    }
}

/// Glorot-uniform weight init, zero biases. Deterministic given (spec, seed).
pub fn init_params(spec: ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng::rng_from(rng::mix(&[seed, 0x1417]));
    let mut values = vec![0.0; spec.param_count()];
    let d = spec.input_dim;
    let k = spec.num_classes;

    let mut fill_layer = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in slice.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    };

    match spec.arch {
        Arch::LogReg => {
            fill_layer(&mut values[..d * k], d, k);
        }
        Arch::Mlp { hidden: h } => {
            let (w1, rest) = values.split_at_mut(d * h);
            fill_layer(w1, d, h);
            let (_b1, rest) = rest.split_at_mut(h);
            let (w2, _b2) = rest.split_at_mut(h * k);
            fill_layer(w2, h, k);
        }
    }
    ParamVector { spec, values }
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    logits
}

fn add_bias(logits: &mut Array2<f64>, bias: &[f64]) {
    for mut row in logits.rows_mut() {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn check_input_dim(params: &ParamVector, features: &ArrayView2<'_, f64>) -> Result<()> {
    if features.ncols() != params.spec.input_dim {
        return Err(Error::input(format!(
            "feature dim {} does not match model input_dim {}",
            features.ncols(),
            params.spec.input_dim
        )));
    }
    Ok(())
}

/// Class-probability matrix for a feature matrix, one row per sample.
pub fn forward(params: &ParamVector, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_input_dim(params, &features)?;
    let logits = match params.spec.arch {
        Arch::LogReg => {
            let v = logreg_view(params);
            let mut logits = features.dot(&v.w);
            add_bias(&mut logits, v.b);
            logits
        }
        Arch::Mlp { .. } => {
            let v = mlp_view(params);
            let mut pre = features.dot(&v.w1);
            add_bias(&mut pre, v.b1);
            pre.mapv_inplace(|x| x.max(0.0));
            let mut logits = pre.dot(&v.w2);
            add_bias(&mut logits, v.b2);
            logits
        }
    };
    Ok(softmax_rows(logits))
}

fn mean_cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut loss = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        loss -= row[label].clamp(PROB_FLOOR, 1.0).ln();
    }
    loss / labels.len() as f64
}

/// Per-sample cross-entropy losses; used by the MIA and marker metrics.
pub fn per_sample_losses(params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    let probs = forward(params, batch.features.view())?;
    Ok(probs
        .rows()
        .into_iter()
        .zip(&batch.labels)
        .map(|(row, &label)| -row[label].clamp(PROB_FLOOR, 1.0).ln())
        .collect())
}

/// Mean cross-entropy loss and its gradient over the batch.
pub fn loss_and_grad(params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::input("loss_and_grad requires a nonempty batch"));
    }
    let features = batch.features.view();
    check_input_dim(params, &features)?;
    let n = batch.len() as f64;
    let k = params.spec.num_classes;
    for &label in &batch.labels {
        if label >= k {
            return Err(Error::input(format!("label {label} out of range for {k} classes")));
        }
    }

    let mut grad = ParamVector::zeros(params.spec);
    let loss;
    match params.spec.arch {
        Arch::LogReg => {
            let v = logreg_view(params);
            let mut logits = features.dot(&v.w);
            add_bias(&mut logits, v.b);
            let probs = softmax_rows(logits);
            loss = mean_cross_entropy(&probs, &batch.labels);

            // dL/dlogits = (P - Y) / n
            let mut dlogits = probs;
            for (mut row, &label) in dlogits.rows_mut().into_iter().zip(&batch.labels) {
                row[label] -= 1.0;
                row.mapv_inplace(|x| x / n);
            }
            let d = params.spec.input_dim;
            let gw = features.t().dot(&dlogits);
            let gb = dlogits.sum_axis(Axis(0));
            grad.values[..d * k].copy_from_slice(gw.as_slice().unwrap());
            grad.values[d * k..].copy_from_slice(gb.as_slice().unwrap());
        }
        Arch::Mlp { hidden: h } => {
            let v = mlp_view(params);
            let mut pre = features.dot(&v.w1);
            add_bias(&mut pre, v.b1);
            let hidden = pre.mapv(|x| x.max(0.0));
            let mut logits = hidden.dot(&v.w2);
            add_bias(&mut logits, v.b2);
            let probs = softmax_rows(logits);
            loss = mean_cross_entropy(&probs, &batch.labels);

            let mut dlogits = probs;
            for (mut row, &label) in dlogits.rows_mut().into_iter().zip(&batch.labels) {
                row[label] -= 1.0;
                row.mapv_inplace(|x| x / n);
            }
            let gw2 = hidden.t().dot(&dlogits);
            let gb2 = dlogits.sum_axis(Axis(0));
            let mut dhidden = dlogits.dot(&v.w2.t());
            // ReLU gate on the pre-activation
            ndarray::Zip::from(&mut dhidden).and(&pre).for_each(|dh, &p| {
                if p <= 0.0 {
                    *dh = 0.0;
                }
            });
            let gw1 = features.t().dot(&dhidden);
            let gb1 = dhidden.sum_axis(Axis(0));

            let d = params.spec.input_dim;
            let (s_w1, rest) = grad.values.split_at_mut(d * h);
            let (s_b1, rest) = rest.split_at_mut(h);
            let (s_w2, s_b2) = rest.split_at_mut(h * k);
            s_w1.copy_from_slice(gw1.as_slice().unwrap());
            s_b1.copy_from_slice(gb1.as_slice().unwrap());
            s_w2.copy_from_slice(gw2.as_slice().unwrap());
            s_b2.copy_from_slice(gb2.as_slice().unwrap());
        }
    }
    Ok((loss, grad))
}

fn gather_batch(data: &Batch, indices: &[usize]) -> Batch {
    let d = data.features.ncols();
    let mut features = Array2::zeros((indices.len(), d));
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &idx) in indices.iter().enumerate() {
        features.row_mut(row).assign(&data.features.row(idx));
        labels.push(data.labels[idx]);
    }
    Batch { features, labels }
}

/// One epoch of seeded-shuffle mini-batch SGD. The last partial batch is kept.
pub fn sgd_epoch(
    params: &ParamVector,
    data: &Batch,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ParamVector> {
    if lr < 0.0 {
        return Err(Error::input("learning rate must be non-negative"));
    }
    if batch_size == 0 {
        return Err(Error::input("batch_size must be positive"));
    }
    if data.is_empty() {
        return Err(Error::input("sgd_epoch requires a nonempty batch"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::rng_from(seed));

    let mut current = params.clone();
    for chunk in order.chunks(batch_size) {
        let mini = gather_batch(data, chunk);
        let (_, grad) = loss_and_grad(&current, &mini)?;
        current.axpy(-lr, &grad);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn logreg_spec(d: usize, k: usize) -> ModelSpec {
        ModelSpec::new(Arch::LogReg, d, k).unwrap()
    }

    fn mlp_spec(d: usize, h: usize, k: usize) -> ModelSpec {
        ModelSpec::new(Arch::Mlp { hidden: h }, d, k).unwrap()
    }

    #[test]
    fn param_counts_match_architecture() {
        assert_eq!(logreg_spec(784, 10).param_count(), 7850);
        assert_eq!(mlp_spec(784, 64, 10).param_count(), 50890);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = mlp_spec(784, 64, 10);
        let a = init_params(spec, 1);
        let b = init_params(spec, 1);
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, init_params(spec, 2).values);
        assert_eq!(a.len(), 50890);

        let d = 784;
        let h = 64;
        assert!(a.values[d * h..d * h + h].iter().all(|&v| v == 0.0));
        let limit = (6.0 / (784 + 64) as f64).sqrt();
        assert!(a.values[..d * h].iter().all(|&v| v.abs() < limit && v != 0.0));
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let spec = logreg_spec(4, 5);
        let params = ParamVector::zeros(spec);
        let x = array![[0.3, 0.1, 0.9, 0.5], [0.0, 0.0, 0.0, 0.0]];
        let probs = forward(&params, x.view()).unwrap();
        for row in probs.rows() {
            for &p in row {
                assert_abs_diff_eq!(p, 0.2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn softmax_of_known_logits() {
        // logits (1,2,3) via a logreg with one active input and matching weights
        let spec = logreg_spec(1, 3);
        let params = ParamVector::new(spec, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let probs = forward(&params, array![[1.0]].view()).unwrap();
        assert_abs_diff_eq!(probs[[0, 0]], 0.0900, epsilon = 1e-4);
        assert_abs_diff_eq!(probs[[0, 1]], 0.2447, epsilon = 1e-4);
        assert_abs_diff_eq!(probs[[0, 2]], 0.6652, epsilon = 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let spec = mlp_spec(6, 8, 4);
        let params = init_params(spec, 9);
        let mut rng = rng::rng_from(5);
        let x = Array2::from_shape_fn((20, 6), |_| rng.gen_range(0.0..1.0));
        let probs = forward(&params, x.view()).unwrap();
        for row in probs.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
        }
        // shifting all logits by a constant leaves softmax fixed; exercised
        // through biases on a logreg
        let spec = logreg_spec(2, 3);
        let base = ParamVector::new(spec, vec![0.5, -1.0, 0.2, 0.1, 0.4, -0.3, 0.0, 0.0, 0.0])
            .unwrap();
        let mut shifted = base.clone();
        for b in &mut shifted.values[6..] {
            *b += 17.0;
        }
        let x = array![[0.2, 0.9]];
        let pa = forward(&base, x.view()).unwrap();
        let pb = forward(&shifted, x.view()).unwrap();
        for (a, b) in pa.iter().zip(pb.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let params = ParamVector::zeros(logreg_spec(4, 3));
        let x = array![[1.0, 2.0]];
        assert!(matches!(forward(&params, x.view()), Err(Error::Input(_))));
    }

    #[test]
    fn known_cross_entropy_value() {
        // two classes with probs (0.25, 0.75), true label 0 -> loss = ln 4
        let spec = logreg_spec(1, 2);
        let w = (3.0f64).ln(); // logits (0, ln3) -> softmax (0.25, 0.75)
        let params = ParamVector::new(spec, vec![0.0, w, 0.0, 0.0]).unwrap();
        let batch = Batch::new(array![[1.0]], vec![0]).unwrap();
        let (loss, _) = loss_and_grad(&params, &batch).unwrap();
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_predictor_loss_is_ln_k() {
        let spec = mlp_spec(3, 4, 7);
        let params = ParamVector::zeros(spec);
        let batch = Batch::new(array![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]], vec![2, 5]).unwrap();
        let (loss, _) = loss_and_grad(&params, &batch).unwrap();
        assert_abs_diff_eq!(loss, 7.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(Batch::new(Array2::zeros((0, 3)), vec![]).is_err());
    }

    fn finite_diff_grad(params: &ParamVector, batch: &Batch, eps: f64) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values[i] += eps;
            let mut minus = params.clone();
            minus.values[i] -= eps;
            let (lp, _) = loss_and_grad(&plus, batch).unwrap();
            let (lm, _) = loss_and_grad(&minus, batch).unwrap();
            grad[i] = (lp - lm) / (2.0 * eps);
        }
        grad
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (case, spec) in [
            logreg_spec(6, 3),
            mlp_spec(5, 7, 4),
            mlp_spec(3, 2, 2),
        ]
        .into_iter()
        .enumerate()
        {
            let params = init_params(spec, 100 + case as u64);
            let mut rng = rng::rng_from(200 + case as u64);
            let x = Array2::from_shape_fn((5, spec.input_dim), |_| rng.gen_range(0.0..1.0));
            let labels = (0..5).map(|_| rng.gen_range(0..spec.num_classes)).collect();
            let batch = Batch::new(x, labels).unwrap();

            let (_, analytic) = loss_and_grad(&params, &batch).unwrap();
            let numeric = finite_diff_grad(&params, &batch, 1e-5);
            for (a, n) in analytic.values.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-6);
                assert!(
                    ((a - n) / denom).abs() < 1e-4,
                    "case {case}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let spec = mlp_spec(4, 3, 3);
        let params = init_params(spec, 11);
        let mut rng = rng::rng_from(12);
        let x = Array2::from_shape_fn((10, 4), |_| rng.gen_range(0.0..1.0));
        let batch = Batch::new(x, (0..10).map(|i| i % 3).collect()).unwrap();
        let out = sgd_epoch(&params, &batch, 0.0, 4, 99).unwrap();
        assert_eq!(out.values, params.values);
    }

    #[test]
    fn single_sample_step_is_one_gradient_step() {
        let spec = logreg_spec(3, 2);
        let params = init_params(spec, 21);
        let batch = Batch::new(array![[0.2, 0.5, 0.8]], vec![1]).unwrap();
        let (_, grad) = loss_and_grad(&params, &batch).unwrap();
        let lr = 0.3;
        let stepped = sgd_epoch(&params, &batch, lr, 1, 7).unwrap();
        for ((s, p), g) in stepped.values.iter().zip(&params.values).zip(&grad.values) {
            assert_abs_diff_eq!(*s, p - lr * g, epsilon = 1e-12);
        }
    }

    #[test]
    fn sgd_is_deterministic_in_seed() {
        let spec = mlp_spec(5, 4, 3);
        let params = init_params(spec, 31);
        let mut rng = rng::rng_from(32);
        let x = Array2::from_shape_fn((23, 5), |_| rng.gen_range(0.0..1.0));
        let batch = Batch::new(x, (0..23).map(|i| i % 3).collect()).unwrap();
        let a = sgd_epoch(&params, &batch, 0.1, 4, 55).unwrap();
        let b = sgd_epoch(&params, &batch, 0.1, 4, 55).unwrap();
        let c = sgd_epoch(&params, &batch, 0.1, 4, 56).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }
}
