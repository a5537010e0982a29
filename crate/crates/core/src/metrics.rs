//! Evaluation suite: alignment metrics (test accuracy, ℓ2 distance gap),
//! marking metrics (backdoor success, loss-threshold membership inference,
//! watermark retention, erroneous/forgettable-memory markers), and
//! efficiency reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Dataset, WatermarkSet};
use crate::error::{Error, Result};
use crate::models::{forward, per_sample_losses, ParamVector};
use crate::unlearn::UnlearnOutcome;

/// Named metric values for one (method, dataset) cell of a benchmark table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub values: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(method: impl Into<String>, dataset: impl Into<String>) -> Self {
        MetricReport {
            method: method.into(),
            dataset: dataset.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    /// Erroneous memory: majority class among the highest-loss samples.
    Em,
    /// Forgettable memory: samples with the largest loss variance over rounds.
    Fm,
}

/// A marker sample set used to probe residual memorization.
#[derive(Debug, Clone)]
pub struct MarkerSet {
    pub kind: MarkerKind,
    pub samples: Dataset,
    /// Majority class of the EM construction; unset for FM.
    pub marker_label: Option<usize>,
}

/// Percentage of argmax-correct predictions; ties break to the lowest class.
pub fn test_accuracy(params: &ParamVector, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::input("test_accuracy requires a nonempty dataset"));
    }
    let probs = forward(params, test.features.view())?;
    let mut correct = 0usize;
    for (row, &label) in probs.rows().into_iter().zip(&test.labels) {
        let mut best = 0usize;
        let mut best_p = row[0];
        for (idx, &p) in row.iter().enumerate().skip(1) {
            if p > best_p {
                best = idx;
                best_p = p;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64 * 100.0)
}

/// Accuracy restricted to samples of one class; None when the class is absent.
pub fn class_accuracy(params: &ParamVector, test: &Dataset, class: usize) -> Result<Option<f64>> {
    let indices: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] == class).collect();
    if indices.is_empty() {
        return Ok(None);
    }
    test_accuracy(params, &test.subset(&indices)).map(Some)
}

/// Accuracy over all samples NOT of the given class.
pub fn rest_accuracy(params: &ParamVector, test: &Dataset, class: usize) -> Result<f64> {
    let indices: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] != class).collect();
    if indices.is_empty() {
        return Err(Error::input("no samples outside the target class"));
    }
    test_accuracy(params, &test.subset(&indices))
}

/// ℓ2 distance between a model and the retrained reference.
pub fn distance_gap(params: &ParamVector, reference: &ParamVector) -> Result<f64> {
    params.l2_distance(reference)
}

/// Fraction of triggered test samples classified as the attack target, ×100.
pub fn backdoor_success_rate(
    params: &ParamVector,
    triggered_test: &Dataset,
    target_label: usize,
) -> Result<f64> {
    if triggered_test.is_empty() {
        return Err(Error::input("triggered test set is empty"));
    }
    let probs = forward(params, triggered_test.features.view())?;
    let mut hits = 0usize;
    for row in probs.rows() {
        let mut best = 0usize;
        let mut best_p = row[0];
        for (idx, &p) in row.iter().enumerate().skip(1) {
            if p > best_p {
                best = idx;
                best_p = p;
            }
        }
        if best == target_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / triggered_test.len() as f64 * 100.0)
}

/// Best balanced accuracy of the loss-threshold membership attack, ×100.
/// A sample is called a member when its loss is at or below the threshold;
/// the sweep covers every distinct loss plus the call-nothing threshold.
pub fn mia_attack_accuracy(
    params: &ParamVector,
    members: &Dataset,
    nonmembers: &Dataset,
) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::input("mia requires nonempty member and nonmember sets"));
    }
    let m = members.len().min(nonmembers.len());
    let member_set = members.subset(&(0..m).collect::<Vec<_>>());
    let nonmember_set = nonmembers.subset(&(0..m).collect::<Vec<_>>());
    let member_losses = per_sample_losses(params, &member_set.to_batch()?)?;
    let nonmember_losses = per_sample_losses(params, &nonmember_set.to_batch()?)?;
    Ok(best_balanced_accuracy(&member_losses, &nonmember_losses) * 100.0)
}

/// Shared by the metric above and its brute-force oracle tests.
pub fn best_balanced_accuracy(member_losses: &[f64], nonmember_losses: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = member_losses
        .iter()
        .chain(nonmember_losses)
        .copied()
        .collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let m = member_losses.len() as f64;
    let n = nonmember_losses.len() as f64;
    let mut best: f64 = 0.5; // call-nothing threshold: TPR 0, TNR 1
    for &t in &thresholds {
        let tpr = member_losses.iter().filter(|&&l| l <= t).count() as f64 / m;
        let tnr = nonmember_losses.iter().filter(|&&l| l > t).count() as f64 / n;
        best = best.max(0.5 * (tpr + tnr));
    }
    best
}

/// Accuracy on the implanted watermark samples against their random labels.
pub fn watermark_retention(params: &ParamVector, wm: &WatermarkSet) -> Result<f64> {
    if wm.data.is_empty() {
        return Err(Error::input("watermark set is empty"));
    }
    test_accuracy(params, &wm.data)
}

/// Ranks a client's samples by end-of-training loss, takes the top_k, and
/// keeps those belonging to the majority true label (ties to the lowest).
pub fn build_em_markers(
    params_end: &ParamVector,
    client: &ClientDataset,
    top_k: usize,
) -> Result<MarkerSet> {
    if top_k == 0 {
        return Err(Error::input("top_k must be positive"));
    }
    if top_k > client.data.len() {
        return Err(Error::input("top_k exceeds the client's sample count"));
    }
    let losses = per_sample_losses(params_end, &client.data.to_batch()?)?;
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| {
        losses[b]
            .partial_cmp(&losses[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let top: Vec<usize> = order.into_iter().take(top_k).collect();

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &idx in &top {
        *counts.entry(client.data.labels[idx]).or_insert(0) += 1;
    }
    // BTreeMap iteration is label-ascending, so strict > keeps the lowest on ties
    let (marker_label, _) = counts
        .iter()
        .fold((usize::MAX, 0usize), |(best_l, best_c), (&l, &c)| {
            if c > best_c {
                (l, c)
            } else {
                (best_l, best_c)
            }
        });
    let kept: Vec<usize> = top
        .into_iter()
        .filter(|&i| client.data.labels[i] == marker_label)
        .collect();
    Ok(MarkerSet {
        kind: MarkerKind::Em,
        samples: client.data.subset(&kept),
        marker_label: Some(marker_label),
    })
}

/// Mean cross-entropy loss on a marker set; higher means more forgotten.
pub fn marker_loss(params: &ParamVector, markers: &MarkerSet) -> Result<f64> {
    if markers.samples.is_empty() {
        return Err(Error::input("marker set is empty"));
    }
    let losses = per_sample_losses(params, &markers.samples.to_batch()?)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn em_score(params: &ParamVector, markers: &MarkerSet) -> Result<f64> {
    marker_loss(params, markers)
}

/// Builds the FM marker set from per-round loss traces: the top_k samples by
/// population variance of loss across recorded rounds, ties by sample index.
pub fn build_fm_markers(
    loss_traces: &[Vec<f64>],
    client: &ClientDataset,
    top_k: usize,
) -> Result<MarkerSet> {
    if loss_traces.len() < 2 {
        return Err(Error::input("fm markers need at least 2 recorded rounds"));
    }
    if top_k == 0 || top_k > client.data.len() {
        return Err(Error::input("top_k out of range"));
    }
    let n = client.data.len();
    if loss_traces.iter().any(|round| round.len() != n) {
        return Err(Error::input("loss trace width does not match the client"));
    }
    let rounds = loss_traces.len() as f64;
    let variances: Vec<f64> = (0..n)
        .map(|i| {
            let mean = loss_traces.iter().map(|r| r[i]).sum::<f64>() / rounds;
            loss_traces
                .iter()
                .map(|r| (r[i] - mean) * (r[i] - mean))
                .sum::<f64>()
                / rounds
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        variances[b]
            .partial_cmp(&variances[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let top: Vec<usize> = order.into_iter().take(top_k).collect();
    Ok(MarkerSet {
        kind: MarkerKind::Fm,
        samples: client.data.subset(&top),
        marker_label: None,
    })
}

/// Copies an outcome's cost accounting into a report.
pub fn efficiency_report(outcome: &UnlearnOutcome, report: &mut MetricReport) {
    report.set("wall_time", outcome.ledger.wall_time);
    report.set("rounds", outcome.rounds_used as f64);
    report.set("upload_bytes", outcome.ledger.upload_bytes as f64);
    report.set("download_bytes", outcome.ledger.download_bytes as f64);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, Tag};
    use crate::models::{init_params, Arch, ModelSpec, ParamVector};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn uniform_model(dim: usize, k: usize) -> ParamVector {
        ParamVector::zeros(ModelSpec::new(Arch::LogReg, dim, k).unwrap())
    }

    #[test]
    fn accuracy_tie_breaks_to_lowest_class() {
        // balanced 10-class set under a uniform predictor: only class 0 counts
        let data = synth_blobs(10, 12, 7, 0.1, 3).unwrap();
        let acc = test_accuracy(&uniform_model(12, 10), &data).unwrap();
        assert_abs_diff_eq!(acc, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_gap_identities() {
        let spec = ModelSpec::new(Arch::LogReg, 1, 2).unwrap();
        let a = ParamVector::new(spec, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let zero = ParamVector::zeros(spec);
        assert_eq!(distance_gap(&a, &a).unwrap(), 0.0);
        assert_eq!(distance_gap(&a, &zero).unwrap(), 5.0);
        assert_eq!(
            distance_gap(&a, &zero).unwrap(),
            distance_gap(&zero, &a).unwrap()
        );
    }

    #[test]
    fn mia_on_identical_sets_is_exactly_fifty() {
        let data = synth_blobs(3, 6, 10, 0.1, 7).unwrap();
        let params = init_params(ModelSpec::new(Arch::LogReg, 6, 3).unwrap(), 1);
        let acc = mia_attack_accuracy(&params, &data, &data).unwrap();
        assert_eq!(acc, 50.0);
    }

    #[test]
    fn mia_on_separable_losses_is_hundred() {
        assert_eq!(
            best_balanced_accuracy(&[0.0, 0.01, 0.02], &[2.0, 2.3, 2.5]),
            1.0
        );
    }

    /// Brute-force oracle: tries every split point of the sorted loss union.
    fn brute_force_bacc(members: &[f64], nonmembers: &[f64]) -> f64 {
        let mut all: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut candidates = vec![f64::NEG_INFINITY];
        candidates.extend(all.iter().copied());
        candidates.push(f64::INFINITY);
        let mut best: f64 = 0.0;
        for &t in &candidates {
            let tpr = members.iter().filter(|&&l| l <= t).count() as f64 / members.len() as f64;
            let tnr =
                nonmembers.iter().filter(|&&l| l > t).count() as f64 / nonmembers.len() as f64;
            best = best.max(0.5 * (tpr + tnr));
        }
        best
    }

    #[test]
    fn threshold_sweep_matches_brute_force_partitions() {
        let mut rng = crate::rng::rng_from(31);
        use rand::Rng;
        for _ in 0..200 {
            let m = rng.gen_range(1..=10);
            let n = rng.gen_range(1..=10);
            let members: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
            let nonmembers: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let fast = best_balanced_accuracy(&members, &nonmembers);
            let slow = brute_force_bacc(&members, &nonmembers);
            assert_eq!(fast, slow, "m={members:?} n={nonmembers:?}");
        }
    }

    #[test]
    fn em_markers_pick_highest_loss_majority() {
        // craft a client where the model is confidently wrong on 5 samples
        let dim = 4;
        let k = 3;
        let spec = ModelSpec::new(Arch::LogReg, dim, k).unwrap();
        // weights strongly map feature j to class j%k
        let mut values = vec![0.0; spec.param_count()];
        for j in 0..dim {
            values[j * k + j % k] = 10.0;
        }
        let params = ParamVector::new(spec, values).unwrap();

        let n = 12;
        let mut features = Array2::zeros((n, dim));
        let mut labels = Vec::new();
        for i in 0..n {
            features[[i, 0]] = 1.0; // model predicts class 0 for everyone
            labels.push(if i < 5 {
                // high-loss group: labels 1,1,1,2,2
                if i < 3 {
                    1
                } else {
                    2
                }
            } else {
                0
            });
        }
        let client = ClientDataset {
            client_id: 0,
            data: Dataset::new(features, labels, vec![Tag::Clean; n]).unwrap(),
        };
        let markers = build_em_markers(&params, &client, 5).unwrap();
        assert_eq!(markers.marker_label, Some(1));
        assert_eq!(markers.samples.len(), 3);
        assert!(markers.samples.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn em_score_of_uniform_predictor_is_ln_k() {
        let data = synth_blobs(5, 8, 4, 0.1, 9).unwrap();
        let client = ClientDataset {
            client_id: 0,
            data,
        };
        let trained = init_params(ModelSpec::new(Arch::LogReg, 8, 5).unwrap(), 3);
        let markers = build_em_markers(&trained, &client, 6).unwrap();
        let uniform = uniform_model(8, 5);
        assert_abs_diff_eq!(
            em_score(&uniform, &markers).unwrap(),
            5.0f64.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn fm_markers_use_population_variance_with_index_ties() {
        let data = synth_blobs(2, 4, 5, 0.1, 11).unwrap();
        let client = ClientDataset {
            client_id: 0,
            data,
        };
        let n = client.data.len();
        // constant traces: all variances zero, selection falls back to index order
        let traces = vec![vec![1.0; n], vec![1.0; n]];
        let markers = build_fm_markers(&traces, &client, 3).unwrap();
        assert_eq!(markers.samples.len(), 3);
        assert_eq!(markers.samples.features.row(0), client.data.features.row(0));

        // trace (0,2) has population variance 1; make sample 7 dominate
        let mut traces = vec![vec![0.0; n], vec![0.0; n]];
        traces[0][7] = 0.0;
        traces[1][7] = 2.0;
        let markers = build_fm_markers(&traces, &client, 1).unwrap();
        assert_eq!(markers.samples.features.row(0), client.data.features.row(7));

        assert!(build_fm_markers(&traces[..1], &client, 1).is_err());
    }

    #[test]
    fn percentage_metrics_stay_in_range() {
        let data = synth_blobs(4, 6, 20, 0.2, 13).unwrap();
        let params = init_params(ModelSpec::new(Arch::Mlp { hidden: 5 }, 6, 4).unwrap(), 17);
        let acc = test_accuracy(&params, &data).unwrap();
        assert!((0.0..=100.0).contains(&acc));
        let mia = mia_attack_accuracy(&params, &data, &data).unwrap();
        assert!((0.0..=100.0).contains(&mia));
    }
}
