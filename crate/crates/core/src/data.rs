//! Dataset handling: synthetic generation, client partitioning,
//! backdoor/watermark injection, and forget-set resolution.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::rng;

/// Per-sample provenance tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    Clean,
    Backdoor,
    Watermark,
}

/// Features in [0,1], class labels, and provenance tags as parallel arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub tags: Vec<Tag>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, tags: Vec<Tag>) -> Result<Self> {
        if features.nrows() != labels.len() || labels.len() != tags.len() {
            return Err(Error::input("features, labels, and tags must be parallel"));
        }
        Ok(Dataset {
            features,
            labels,
            tags,
        })
    }

    pub fn clean(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let tags = vec![Tag::Clean; labels.len()];
        Dataset::new(features, labels, tags)
    }

    pub fn empty(dim: usize) -> Self {
        Dataset {
            features: Array2::zeros((0, dim)),
            labels: Vec::new(),
            tags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Array2::zeros((indices.len(), self.dim()));
        let mut labels = Vec::with_capacity(indices.len());
        let mut tags = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            features.row_mut(row).assign(&self.features.row(idx));
            labels.push(self.labels[idx]);
            tags.push(self.tags[idx]);
        }
        Dataset {
            features,
            labels,
            tags,
        }
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let dim = parts
            .iter()
            .find(|p| !p.is_empty())
            .map(|p| p.dim())
            .or_else(|| parts.first().map(|p| p.dim()))
            .ok_or_else(|| Error::input("concat requires at least one dataset"))?;
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut features = Array2::zeros((total, dim));
        let mut labels = Vec::with_capacity(total);
        let mut tags = Vec::with_capacity(total);
        let mut row = 0;
        for part in parts {
            for i in 0..part.len() {
                features.row_mut(row).assign(&part.features.row(i));
                labels.push(part.labels[i]);
                tags.push(part.tags[i]);
                row += 1;
            }
        }
        Dataset::new(features, labels, tags)
    }

    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone())
    }
}

/// One client's shard of the federation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub data: Dataset,
}

/// Backdoor trigger: fixed pixels forced to a value, label forced to a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub pixel_indices: Vec<usize>,
    pub trigger_value: f64,
    pub target_label: usize,
}

impl TriggerSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.pixel_indices.is_empty() {
            return Err(Error::input("trigger needs at least one pixel index"));
        }
        if let Some(&bad) = self.pixel_indices.iter().find(|&&i| i >= dim) {
            return Err(Error::input(format!(
                "trigger pixel index {bad} out of range for dim {dim}"
            )));
        }
        if !(0.0..=1.0).contains(&self.trigger_value) {
            return Err(Error::input("trigger_value must lie in [0,1]"));
        }
        Ok(())
    }
}

/// What to unlearn: a whole client, a class, or specific samples of a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForgetSpec {
    Client(usize),
    Class(usize),
    Samples { client_id: usize, indices: Vec<usize> },
}

/// The clean (unreplicated) watermark samples kept aside for retention checks.
#[derive(Debug, Clone)]
pub struct WatermarkSet {
    pub data: Dataset,
}

/// Gaussian blobs: class `c` has mean 0.8·e_c, samples clipped to [0,1].
pub fn synth_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::input("synth_blobs requires at least 2 classes"));
    }
    if dim < num_classes {
        return Err(Error::input("synth_blobs requires dim >= num_classes"));
    }
    if per_class == 0 {
        return Err(Error::input("per_class must be positive"));
    }
    if spread < 0.0 {
        return Err(Error::input("spread must be non-negative"));
    }
    let n = num_classes * per_class;
    let mut rng = rng::rng_from(rng::mix(&[seed, 0xb10b5]));
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    for class in 0..num_classes {
        for sample in 0..per_class {
            let row = class * per_class + sample;
            for col in 0..dim {
                let mean = if col == class { 0.8 } else { 0.0 };
                let v: f64 = mean + spread * normal.sample(&mut rng);
                features[[row, col]] = v.clamp(0.0, 1.0);
            }
            labels.push(class);
            let _ = sample;
        }
    }
    Dataset::clean(features, labels)
}

/// Client partition scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Iid,
    Dirichlet { alpha: f64 },
}

/// Splits a dataset into disjoint client shards covering every sample.
pub fn partition(
    data: &Dataset,
    n_clients: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if n_clients < 2 {
        return Err(Error::input("partition requires at least 2 clients"));
    }
    if n_clients > data.len() {
        return Err(Error::input("more clients than samples"));
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    match scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng::rng_from(rng::mix(&[seed, 0x11d])));
            for (i, idx) in order.into_iter().enumerate() {
                shards[i % n_clients].push(idx);
            }
        }
        PartitionScheme::Dirichlet { alpha } => {
            if alpha <= 0.0 {
                return Err(Error::input("dirichlet alpha must be positive"));
            }
            let mut rng = rng::rng_from(rng::mix(&[seed, 0xd1c1]));
            let gamma = Gamma::new(alpha, 1.0)
                .map_err(|_| Error::input("dirichlet alpha must be positive"))?;
            let max_label = data.labels.iter().copied().max().unwrap_or(0);
            for class in 0..=max_label {
                let mut class_indices: Vec<usize> = (0..data.len())
                    .filter(|&i| data.labels[i] == class)
                    .collect();
                if class_indices.is_empty() {
                    continue;
                }
                class_indices.shuffle(&mut rng);
                let mut draws: Vec<f64> =
                    (0..n_clients).map(|_| gamma.sample(&mut rng).max(1e-300)).collect();
                let total: f64 = draws.iter().sum();
                for d in &mut draws {
                    *d /= total;
                }
                // cumulative split keeps counts summing exactly to the class size
                let n = class_indices.len();
                let mut start = 0usize;
                let mut cum = 0.0;
                for (client, &p) in draws.iter().enumerate() {
                    cum += p;
                    let end = if client + 1 == n_clients {
                        n
                    } else {
                        (cum * n as f64).round() as usize
                    };
                    let end = end.clamp(start, n);
                    shards[client].extend_from_slice(&class_indices[start..end]);
                    start = end;
                }
            }
        }
    }
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.sort_unstable();
            ClientDataset {
                client_id,
                data: data.subset(&indices),
            }
        })
        .collect())
}

/// Poisons a seeded-random ⌈fraction·n⌉ subset of the client's samples.
pub fn inject_backdoor(
    client: &ClientDataset,
    trig: &TriggerSpec,
    fraction: f64,
    seed: u64,
) -> Result<ClientDataset> {
    if client.data.is_empty() {
        return Err(Error::input("cannot poison an empty client"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input("poison fraction must lie in (0,1]"));
    }
    trig.validate(client.data.dim())?;
    let n = client.data.len();
    let count = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_from(rng::mix(&[seed, 0xbd00])));
    let mut out = client.clone();
    for &idx in order.iter().take(count) {
        for &pixel in &trig.pixel_indices {
            out.data.features[[idx, pixel]] = trig.trigger_value;
        }
        out.data.labels[idx] = trig.target_label;
        out.data.tags[idx] = Tag::Backdoor;
    }
    Ok(out)
}

/// Applies the trigger to every test sample, keeping ground-truth labels and
/// dropping samples whose true label already equals the trigger target.
pub fn make_triggered_testset(test: &Dataset, trig: &TriggerSpec) -> Result<Dataset> {
    if !test.is_empty() {
        trig.validate(test.dim())?;
    }
    let keep: Vec<usize> = (0..test.len())
        .filter(|&i| test.labels[i] != trig.target_label)
        .collect();
    let mut out = test.subset(&keep);
    for i in 0..out.len() {
        for &pixel in &trig.pixel_indices {
            out.features[[i, pixel]] = trig.trigger_value;
        }
    }
    Ok(out)
}

/// Appends `wm_size` uniform-noise samples with random labels, each replicated
/// `replicas` times, and returns the clean watermark set for later checks.
pub fn inject_watermark(
    client: &ClientDataset,
    wm_size: usize,
    replicas: usize,
    num_classes: usize,
    seed: u64,
) -> Result<(ClientDataset, WatermarkSet)> {
    if wm_size == 0 {
        return Err(Error::input("wm_size must be at least 1"));
    }
    if replicas == 0 {
        return Err(Error::input("watermark replicas must be at least 1"));
    }
    let dim = client.data.dim();
    let mut rng = rng::rng_from(rng::mix(&[seed, 0x3a7e4]));
    let mut wm_features = Array2::zeros((wm_size, dim));
    let mut wm_labels = Vec::with_capacity(wm_size);
    for i in 0..wm_size {
        for j in 0..dim {
            wm_features[[i, j]] = rng.gen_range(0.0..1.0);
        }
        wm_labels.push(rng.gen_range(0..num_classes));
    }
    let wm = Dataset::new(wm_features, wm_labels, vec![Tag::Watermark; wm_size])?;

    let replicated_indices: Vec<usize> = (0..wm_size)
        .flat_map(|i| std::iter::repeat(i).take(replicas))
        .collect();
    let replicated = wm.subset(&replicated_indices);
    let data = Dataset::concat(&[&client.data, &replicated])?;
    Ok((
        ClientDataset {
            client_id: client.client_id,
            data,
        },
        WatermarkSet { data: wm },
    ))
}

/// Splits the federation into the forget set and the retained clients.
pub fn resolve_forget(
    clients: &[ClientDataset],
    spec: &ForgetSpec,
) -> Result<(Dataset, Vec<ClientDataset>)> {
    match spec {
        ForgetSpec::Client(id) => {
            let target = clients
                .iter()
                .find(|c| c.client_id == *id)
                .ok_or_else(|| Error::input(format!("unknown client {id}")))?;
            if target.data.is_empty() {
                return Err(Error::input("forget set is empty"));
            }
            let retain = clients
                .iter()
                .filter(|c| c.client_id != *id)
                .cloned()
                .collect();
            Ok((target.data.clone(), retain))
        }
        ForgetSpec::Class(label) => {
            let mut forget_parts = Vec::new();
            let mut retain = Vec::with_capacity(clients.len());
            for client in clients {
                let (class_idx, rest_idx): (Vec<usize>, Vec<usize>) =
                    (0..client.data.len()).partition(|&i| client.data.labels[i] == *label);
                if !class_idx.is_empty() {
                    forget_parts.push(client.data.subset(&class_idx));
                }
                retain.push(ClientDataset {
                    client_id: client.client_id,
                    data: client.data.subset(&rest_idx),
                });
            }
            if forget_parts.is_empty() {
                return Err(Error::input(format!("class {label} absent from federation")));
            }
            let refs: Vec<&Dataset> = forget_parts.iter().collect();
            Ok((Dataset::concat(&refs)?, retain))
        }
        ForgetSpec::Samples { client_id, indices } => {
            let target = clients
                .iter()
                .find(|c| c.client_id == *client_id)
                .ok_or_else(|| Error::input(format!("unknown client {client_id}")))?;
            if indices.is_empty() {
                return Err(Error::input("forget set is empty"));
            }
            if let Some(&bad) = indices.iter().find(|&&i| i >= target.data.len()) {
                return Err(Error::input(format!(
                    "sample index {bad} out of range for client {client_id}"
                )));
            }
            let index_set: std::collections::HashSet<usize> = indices.iter().copied().collect();
            let kept: Vec<usize> = (0..target.data.len())
                .filter(|i| !index_set.contains(i))
                .collect();
            let forget = target.data.subset(indices);
            let mut retain = Vec::with_capacity(clients.len());
            for client in clients {
                if client.client_id == *client_id {
                    retain.push(ClientDataset {
                        client_id: client.client_id,
                        data: target.data.subset(&kept),
                    });
                } else {
                    retain.push(client.clone());
                }
            }
            Ok((forget, retain))
        }
    }
}
