//! Federated training engine: seeded client selection, local SGD rounds,
//! sample-weighted aggregation, communication accounting, and the per-round
//! history required by replay-based unlearning.
//!
//! Client updates within a round may run on the rayon pool (feature
//! `parallel`); results are bit-identical to the sequential path because the
//! update list keeps client order and aggregation always sums in fixed
//! client_id order.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::models::{sgd_epoch, ModelSpec, ParamVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub model: ModelSpec,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub history_interval: usize,
    pub client_fraction: f64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::input("local_epochs must be at least 1"));
        }
        if self.lr <= 0.0 {
            return Err(Error::input("lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be positive"));
        }
        if self.history_interval == 0 {
            return Err(Error::input("history_interval must be at least 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::input("client_fraction must lie in (0,1]"));
        }
        Ok(())
    }

    /// Stable fingerprint stored in history files so a replay can detect
    /// that it was recorded under a different configuration.
    pub fn fingerprint(&self) -> u64 {
        let (tag, hidden) = match self.model.arch {
            crate::models::Arch::LogReg => (0u64, 0u64),
            crate::models::Arch::Mlp { hidden } => (1u64, hidden as u64),
        };
        rng::mix(&[
            tag,
            hidden,
            self.model.input_dim as u64,
            self.model.num_classes as u64,
            self.rounds as u64,
            self.local_epochs as u64,
            self.lr.to_bits(),
            self.batch_size as u64,
            self.seed,
            self.history_interval as u64,
            self.client_fraction.to_bits(),
        ])
    }
}

/// One client's contribution to a recorded round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub sample_count: usize,
    pub delta: ParamVector,
}

/// Snapshot of one recorded round: the global model entering the round and
/// every participating client's delta.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round_index: usize,
    pub global_before: ParamVector,
    pub updates: Vec<ClientUpdate>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HistoryStore {
    pub fingerprint: u64,
    pub records: Vec<RoundRecord>,
}

/// Communication and time accounting for one training or unlearning run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommLedger {
    pub rounds_executed: usize,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub wall_time: f64,
}

impl CommLedger {
    /// Adds one round with the given participant count.
    pub fn add_round(&mut self, participants: usize, param_count: usize) {
        self.rounds_executed += 1;
        let bytes = (participants * param_count * 8) as u64;
        self.upload_bytes += bytes;
        self.download_bytes += bytes;
    }

    pub fn merge(&mut self, other: &CommLedger) {
        self.rounds_executed += other.rounds_executed;
        self.upload_bytes += other.upload_bytes;
        self.download_bytes += other.download_bytes;
        self.wall_time += other.wall_time;
    }
}

/// Whether per-client work inside a round runs on the rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecMode {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        ExecMode::Parallel
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        ExecMode::Sequential
    }
}

fn map_ordered<T, F>(items: &[T], mode: ExecMode, f: F) -> Result<Vec<(usize, ParamVector, usize)>>
where
    T: Sync,
    F: Fn(&T) -> Result<(usize, ParamVector, usize)> + Sync,
{
    match mode {
        ExecMode::Sequential => items.iter().map(&f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(&f).collect()
        }
    }
}

/// Local training for one client at one round: `local_epochs` SGD epochs from
/// the global model under a per-(client, round) derived seed. Returns None
/// for an empty client (skip signal, not an error).
pub fn local_update(
    global: &ParamVector,
    client: &ClientDataset,
    cfg: &FederationConfig,
    round: usize,
) -> Result<Option<(ParamVector, usize)>> {
    local_update_seeded(global, client, cfg, cfg.local_epochs, |epoch| {
        rng::mix(&[
            rng::client_round_seed(cfg.seed, client.client_id as u64, round as u64),
            epoch as u64,
        ])
    })
}

/// Shared worker for training and calibration passes; the caller chooses the
/// epoch count and the seed schedule.
pub fn local_update_seeded(
    global: &ParamVector,
    client: &ClientDataset,
    cfg: &FederationConfig,
    epochs: usize,
    epoch_seed: impl Fn(usize) -> u64,
) -> Result<Option<(ParamVector, usize)>> {
    if client.data.is_empty() {
        return Ok(None);
    }
    let batch = client.data.to_batch()?;
    let mut local = global.clone();
    for epoch in 0..epochs {
        local = sgd_epoch(&local, &batch, cfg.lr, cfg.batch_size, epoch_seed(epoch))?;
    }
    let delta = local.sub(global)?;
    Ok(Some((delta, client.data.len())))
}

/// Sample-count-weighted mean of client deltas, summed in the order given.
/// Callers keep that order fixed by client_id.
pub fn fedavg_aggregate(updates: &[(ParamVector, usize)]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::input("fedavg_aggregate requires at least one update"));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::input("fedavg_aggregate requires positive total weight"));
    }
    let spec = updates[0].0.spec;
    let mut out = ParamVector::zeros(spec);
    for (delta, count) in updates {
        out.check_same_spec(delta)?;
        out.axpy(*count as f64 / total as f64, delta);
    }
    Ok(out)
}

/// Output of a full federated run.
pub struct RunOutput {
    pub params: ParamVector,
    pub history: HistoryStore,
    pub ledger: CommLedger,
}

pub fn run_rounds(
    init: &ParamVector,
    clients: &[ClientDataset],
    cfg: &FederationConfig,
) -> Result<RunOutput> {
    run_rounds_with(init, clients, cfg, ExecMode::default())
}

/// As `run_rounds`, with the execution mode pinned; both modes produce
/// bit-identical output.
pub fn run_rounds_with(
    init: &ParamVector,
    clients: &[ClientDataset],
    cfg: &FederationConfig,
    mode: ExecMode,
) -> Result<RunOutput> {
    cfg.validate()?;
    if clients.iter().all(|c| c.data.is_empty()) {
        return Err(Error::input("all clients are empty"));
    }
    let start = Instant::now();
    let mut global = init.clone();
    let mut history = HistoryStore {
        fingerprint: cfg.fingerprint(),
        records: Vec::new(),
    };
    let mut ledger = CommLedger::default();

    for round in 0..cfg.rounds {
        let selected = select_clients(clients, cfg, round);
        let results = map_ordered(&selected, mode, |client| {
            let (delta, count) = local_update(&global, client, cfg, round)?
                .expect("selected clients are nonempty");
            Ok((client.client_id, delta, count))
        })?;

        let weighted: Vec<(ParamVector, usize)> = results
            .iter()
            .map(|(_, delta, count)| (delta.clone(), *count))
            .collect();
        let aggregate = fedavg_aggregate(&weighted)?;

        if round % cfg.history_interval == 0 {
            history.records.push(RoundRecord {
                round_index: round,
                global_before: global.clone(),
                updates: results
                    .into_iter()
                    .map(|(client_id, delta, sample_count)| ClientUpdate {
                        client_id,
                        sample_count,
                        delta,
                    })
                    .collect(),
            });
        }
        global = global.add(&aggregate)?;
        if !global.all_finite() {
            return Err(Error::input(format!(
                "parameters diverged at round {round}; lower the learning rate"
            )));
        }
        ledger.add_round(selected.len(), cfg.model.param_count());
    }
    ledger.wall_time = start.elapsed().as_secs_f64();
    Ok(RunOutput {
        params: global,
        history,
        ledger,
    })
}

/// Seeded choice of ⌈fraction·n⌉ nonempty clients, returned in client_id order.
fn select_clients<'a>(
    clients: &'a [ClientDataset],
    cfg: &FederationConfig,
    round: usize,
) -> Vec<&'a ClientDataset> {
    let nonempty: Vec<&ClientDataset> =
        clients.iter().filter(|c| !c.data.is_empty()).collect();
    let count = ((cfg.client_fraction * nonempty.len() as f64).ceil() as usize)
        .clamp(1, nonempty.len());
    let mut order: Vec<usize> = (0..nonempty.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng::rng_from(rng::selection_seed(cfg.seed, round as u64)));
    let mut chosen: Vec<&ClientDataset> =
        order.into_iter().take(count).map(|i| nonempty[i]).collect();
    chosen.sort_by_key(|c| c.client_id);
    chosen
}
