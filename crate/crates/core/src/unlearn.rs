//! The five benchmarked unlearning methods: retraining from scratch,
//! fine-tuning, continue-to-train, norm-preserving historical replay
//! (FedEraser-style), and projected gradient ascent, plus the class-level
//! composition and a method dispatcher.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{resolve_forget, ClientDataset, Dataset, ForgetSpec};
use crate::error::{Error, Result};
use crate::fedsim::{
    fedavg_aggregate, local_update_seeded, run_rounds_with, CommLedger, ExecMode,
    FederationConfig, HistoryStore,
};
use crate::models::{init_params, loss_and_grad, Batch, ParamVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnlearnMethod {
    Retrain,
    FineTune,
    ContinueToTrain,
    FedEraser,
    Pga,
}

impl UnlearnMethod {
    pub fn name(&self) -> &'static str {
        match self {
            UnlearnMethod::Retrain => "retrain",
            UnlearnMethod::FineTune => "fine_tune",
            UnlearnMethod::ContinueToTrain => "c2t",
            UnlearnMethod::FedEraser => "federaser",
            UnlearnMethod::Pga => "pga",
        }
    }
}

/// An unlearned model plus what it cost to produce.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub params: ParamVector,
    pub method: UnlearnMethod,
    pub ledger: CommLedger,
    pub rounds_used: usize,
}

/// Continue-training variant: fine-tune runs at lr/10 with one local epoch,
/// C2T keeps the original hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinueMode {
    FineTune,
    C2T,
}

/// Post-training rounds for the continue-training baselines.
pub const DEFAULT_CONTINUE_ROUNDS: usize = 5;
/// FedEraser calibration epochs; deliberately fewer than training epochs.
pub const DEFAULT_CAL_EPOCHS: usize = 1;
/// PGA step budget.
pub const DEFAULT_PGA_MAX_STEPS: usize = 200;
/// PGA ascent rate as a fraction of the training rate. Full-rate ascent
/// overshoots the stop loss in a handful of steps and takes the clean test
/// accuracy down with it; a small rate stops close to the target loss.
pub const PGA_LR_DIVISOR: f64 = 50.0;
/// PGA switches to seeded mini-batches above this forget-set size.
pub const PGA_FULL_BATCH_LIMIT: usize = 1024;
pub const PGA_MINI_BATCH: usize = 256;

/// Trains a fresh model on the retained clients only; the reference θ* for
/// every alignment metric.
pub fn retrain(
    retain: &[ClientDataset],
    cfg: &FederationConfig,
    mode: ExecMode,
) -> Result<UnlearnOutcome> {
    let start = Instant::now();
    let init = init_params(cfg.model, cfg.seed);
    let out = run_rounds_with(&init, retain, cfg, mode)?;
    let mut ledger = out.ledger;
    ledger.wall_time = start.elapsed().as_secs_f64();
    Ok(UnlearnOutcome {
        params: out.params,
        method: UnlearnMethod::Retrain,
        rounds_used: ledger.rounds_executed,
        ledger,
    })
}

/// Continues training from the current global model on the retained clients.
pub fn continue_training(
    global: &ParamVector,
    retain: &[ClientDataset],
    cfg: &FederationConfig,
    mode: ContinueMode,
    rounds: usize,
    exec: ExecMode,
) -> Result<UnlearnOutcome> {
    let start = Instant::now();
    let (method, mut sub_cfg) = match mode {
        ContinueMode::FineTune => {
            let mut c = *cfg;
            c.lr = cfg.lr / 10.0;
            c.local_epochs = 1;
            (UnlearnMethod::FineTune, c)
        }
        ContinueMode::C2T => (UnlearnMethod::ContinueToTrain, *cfg),
    };
    sub_cfg.rounds = rounds;
    sub_cfg.seed = rng::mix(&[cfg.seed, 0xc047]);
    if rounds == 0 {
        return Ok(UnlearnOutcome {
            params: global.clone(),
            method,
            ledger: CommLedger::default(),
            rounds_used: 0,
        });
    }
    let out = run_rounds_with(global, retain, &sub_cfg, exec)?;
    let mut ledger = out.ledger;
    ledger.wall_time = start.elapsed().as_secs_f64();
    Ok(UnlearnOutcome {
        params: out.params,
        method,
        rounds_used: ledger.rounds_executed,
        ledger,
    })
}

/// Replays recorded rounds without the forgotten client. At each recorded
/// round the retained clients run a short calibration pass from the replayed
/// model; the calibrated step keeps its own direction but inherits the norm
/// of the stored retained aggregate.
pub fn federaser_unlearn(
    history: &HistoryStore,
    retain: &[ClientDataset],
    forget_client: usize,
    cal_epochs: usize,
    cfg: &FederationConfig,
    exec: ExecMode,
) -> Result<UnlearnOutcome> {
    if history.records.is_empty() {
        return Err(Error::input("history store has no recorded rounds"));
    }
    if cal_epochs == 0 {
        return Err(Error::input("cal_epochs must be at least 1"));
    }
    let seen = history
        .records
        .iter()
        .any(|r| r.updates.iter().any(|u| u.client_id == forget_client));
    if !seen {
        return Err(Error::input(format!(
            "client {forget_client} never appears in the recorded history"
        )));
    }

    let start = Instant::now();
    let mut ledger = CommLedger::default();
    let mut replayed = history.records[0].global_before.clone();

    for record in &history.records {
        // stored retained aggregate, summed in place to avoid delta clones
        let retained: Vec<&crate::fedsim::ClientUpdate> = record
            .updates
            .iter()
            .filter(|u| u.client_id != forget_client)
            .collect();
        if retained.is_empty() {
            continue;
        }
        let total: usize = retained.iter().map(|u| u.sample_count).sum();
        if total == 0 {
            return Err(Error::input("recorded round has zero retained weight"));
        }
        let mut old_step = ParamVector::zeros(cfg.model);
        for u in &retained {
            old_step.axpy(u.sample_count as f64 / total as f64, &u.delta);
        }

        // calibration pass: retained participants of this round, brief
        // local training from the replayed model
        let participants: Vec<&ClientDataset> = record
            .updates
            .iter()
            .filter(|u| u.client_id != forget_client)
            .filter_map(|u| retain.iter().find(|c| c.client_id == u.client_id))
            .filter(|c| !c.data.is_empty())
            .collect();
        if participants.is_empty() {
            return Err(Error::input(
                "no retained client data available for calibration",
            ));
        }
        let round = record.round_index as u64;
        let seed = cfg.seed;
        let calibrated: Vec<(ParamVector, usize)> = {
            let worker = |client: &&ClientDataset| -> Result<(ParamVector, usize)> {
                let (delta, n) = local_update_seeded(&replayed, client, cfg, cal_epochs, |e| {
                    rng::mix(&[
                        rng::calibration_seed(seed, client.client_id as u64, round),
                        e as u64,
                    ])
                })?
                .expect("participants are nonempty");
                Ok((delta, n))
            };
            match exec {
                ExecMode::Sequential => {
                    participants.iter().map(worker).collect::<Result<Vec<_>>>()?
                }
                #[cfg(feature = "parallel")]
                ExecMode::Parallel => {
                    use rayon::prelude::*;
                    participants
                        .par_iter()
                        .map(worker)
                        .collect::<Result<Vec<_>>>()?
                }
            }
        };
        let cal_step = fedavg_aggregate(&calibrated)?;

        let old_norm = old_step.norm();
        let cal_norm = cal_step.norm();
        let step = if cal_norm < 1e-12 {
            old_step
        } else {
            let mut s = cal_step;
            s.scale(old_norm / cal_norm);
            s
        };
        replayed = replayed.add(&step)?;
        ledger.add_round(participants.len(), cfg.model.param_count());
    }
    ledger.wall_time = start.elapsed().as_secs_f64();
    Ok(UnlearnOutcome {
        params: replayed,
        method: UnlearnMethod::FedEraser,
        rounds_used: ledger.rounds_executed,
        ledger,
    })
}

/// Hyperparameters for projected gradient ascent on the forget loss.
#[derive(Debug, Clone, Copy)]
pub struct PgaSettings {
    pub radius: f64,
    pub lr: f64,
    pub max_steps: usize,
    pub stop_loss: f64,
    pub seed: u64,
}

impl PgaSettings {
    /// Ball radius half the global norm, a small ascent rate, stop once the
    /// forget loss passes the uniform-predictor loss by 1.
    pub fn defaults(global: &ParamVector, cfg: &FederationConfig) -> Self {
        PgaSettings {
            radius: 0.5 * global.norm(),
            lr: cfg.lr / PGA_LR_DIVISOR,
            max_steps: DEFAULT_PGA_MAX_STEPS,
            stop_loss: (cfg.model.num_classes as f64).ln() + 1.0,
            seed: rng::mix(&[cfg.seed, 0x96a]),
        }
    }
}

fn project_to_ball(params: &mut ParamVector, reference: &ParamVector, radius: f64) {
    let diff = params.sub(reference).expect("same spec");
    let dist = diff.norm();
    if dist > radius {
        let mut projected = reference.clone();
        projected.axpy(radius / dist, &diff);
        *params = projected;
    }
}

/// Gradient ascent on the forget-set loss, constrained to an ℓ2 ball around
/// the reference model.
pub fn pga_unlearn(
    global: &ParamVector,
    forget: &Dataset,
    reference: &ParamVector,
    settings: &PgaSettings,
) -> Result<UnlearnOutcome> {
    if forget.is_empty() {
        return Err(Error::input("pga requires a nonempty forget set"));
    }
    if settings.radius <= 0.0 {
        return Err(Error::input("pga radius must be positive"));
    }
    global.check_same_spec(reference)?;
    let start = Instant::now();
    let full = forget.to_batch()?;
    let mut rng = rng::rng_from(settings.seed);
    let mut params = global.clone();
    let mut steps = 0;

    for _ in 0..settings.max_steps {
        let (mean_loss, _) = loss_and_grad(&params, &full)?;
        if mean_loss >= settings.stop_loss {
            break;
        }
        let batch = if forget.len() <= PGA_FULL_BATCH_LIMIT {
            full.clone()
        } else {
            use rand::seq::index::sample;
            let picks = sample(&mut rng, forget.len(), PGA_MINI_BATCH).into_vec();
            let subset = forget.subset(&picks);
            Batch::new(subset.features, subset.labels)?
        };
        let (_, grad) = loss_and_grad(&params, &batch)?;
        params.axpy(settings.lr, &grad);
        project_to_ball(&mut params, reference, settings.radius);
        steps += 1;
    }

    let ledger = CommLedger {
        rounds_executed: 0,
        upload_bytes: 0,
        download_bytes: 0,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(UnlearnOutcome {
        params,
        method: UnlearnMethod::Pga,
        ledger,
        rounds_used: steps,
    })
}

/// Class-level unlearning: gradient ascent on the class samples, then a
/// fine-tuning pass on the class-free retained clients.
pub fn class_unlearn(
    global: &ParamVector,
    clients: &[ClientDataset],
    class_label: usize,
    cfg: &FederationConfig,
    exec: ExecMode,
) -> Result<UnlearnOutcome> {
    let (forget, retain) = resolve_forget(clients, &ForgetSpec::Class(class_label))?;
    // Erasing a whole class needs a deeper ascent than client-level scrubbing:
    // at the default stop loss a few percent of the class survives fine-tuning.
    let mut settings = PgaSettings::defaults(global, cfg);
    settings.stop_loss += 1.0;
    settings.max_steps *= 2;
    let ascent = pga_unlearn(global, &forget, global, &settings)?;
    let tuned = continue_training(
        &ascent.params,
        &retain,
        cfg,
        ContinueMode::FineTune,
        DEFAULT_CONTINUE_ROUNDS,
        exec,
    )?;
    let mut ledger = ascent.ledger;
    ledger.merge(&tuned.ledger);
    Ok(UnlearnOutcome {
        params: tuned.params,
        method: UnlearnMethod::Pga,
        rounds_used: ascent.rounds_used + tuned.rounds_used,
        ledger,
    })
}

/// Everything a dispatcher needs about a trained federation.
pub struct FederationState<'a> {
    pub global: &'a ParamVector,
    pub clients: &'a [ClientDataset],
    pub history: &'a HistoryStore,
    pub cfg: &'a FederationConfig,
}

/// Routes a method/forget-spec pair to the right algorithm.
pub fn dispatch(
    method: UnlearnMethod,
    state: &FederationState<'_>,
    spec: &ForgetSpec,
    exec: ExecMode,
) -> Result<UnlearnOutcome> {
    let (forget, retain) = resolve_forget(state.clients, spec)?;
    match method {
        UnlearnMethod::Retrain => retrain(&retain, state.cfg, exec),
        UnlearnMethod::FineTune => continue_training(
            state.global,
            &retain,
            state.cfg,
            ContinueMode::FineTune,
            DEFAULT_CONTINUE_ROUNDS,
            exec,
        ),
        UnlearnMethod::ContinueToTrain => continue_training(
            state.global,
            &retain,
            state.cfg,
            ContinueMode::C2T,
            DEFAULT_CONTINUE_ROUNDS,
            exec,
        ),
        UnlearnMethod::FedEraser => match spec {
            ForgetSpec::Client(id) => federaser_unlearn(
                state.history,
                &retain,
                *id,
                DEFAULT_CAL_EPOCHS,
                state.cfg,
                exec,
            ),
            other => Err(Error::Capability(format!(
                "FedEraser requires a client-level forget spec, got {other:?}"
            ))),
        },
        UnlearnMethod::Pga => {
            let settings = PgaSettings::defaults(state.global, state.cfg);
            pga_unlearn(state.global, &forget, state.global, &settings)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, synth_blobs, PartitionScheme};
    use crate::fedsim::run_rounds;
    use crate::models::{Arch, ModelSpec};

    fn setup() -> (Vec<ClientDataset>, FederationConfig) {
        let data = synth_blobs(4, 8, 60, 0.06, 3).unwrap();
        let clients = partition(&data, 4, PartitionScheme::Iid, 3).unwrap();
        let model = ModelSpec::new(Arch::Mlp { hidden: 8 }, 8, 4).unwrap();
        let cfg = FederationConfig {
            model,
            rounds: 8,
            local_epochs: 2,
            lr: 0.3,
            batch_size: 16,
            seed: 11,
            history_interval: 1,
            client_fraction: 1.0,
        };
        (clients, cfg)
    }

    fn trained(clients: &[ClientDataset], cfg: &FederationConfig) -> crate::fedsim::RunOutput {
        run_rounds(&init_params(cfg.model, cfg.seed), clients, cfg).unwrap()
    }

    #[test]
    fn retrain_never_reads_the_forget_client() {
        let (mut clients, cfg) = setup();
        let (_, retain) = resolve_forget(&clients, &ForgetSpec::Client(1)).unwrap();
        let a = retrain(&retain, &cfg, ExecMode::Sequential).unwrap();

        // scramble the forgotten client's data; the retrain must not move
        for v in clients[1].data.features.iter_mut() {
            *v = 1.0 - *v;
        }
        let (_, retain2) = resolve_forget(&clients, &ForgetSpec::Client(1)).unwrap();
        let b = retrain(&retain2, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(a.params.values, b.params.values);
    }

    #[test]
    fn retrain_on_all_clients_equals_original_training() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let re = retrain(&clients, &cfg, ExecMode::default()).unwrap();
        assert_eq!(re.params.values, original.params.values);
    }

    #[test]
    fn continue_training_zero_rounds_is_identity() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let out = continue_training(
            &original.params,
            &clients,
            &cfg,
            ContinueMode::FineTune,
            0,
            ExecMode::default(),
        )
        .unwrap();
        assert_eq!(out.params.values, original.params.values);
        assert_eq!(out.rounds_used, 0);
    }

    #[test]
    fn continue_training_rounds_accounting() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let (_, retain) = resolve_forget(&clients, &ForgetSpec::Client(0)).unwrap();
        for mode in [ContinueMode::FineTune, ContinueMode::C2T] {
            let out =
                continue_training(&original.params, &retain, &cfg, mode, 5, ExecMode::default())
                    .unwrap();
            assert_eq!(out.rounds_used, 5);
            assert_eq!(
                out.ledger.upload_bytes,
                (5 * retain.len() * cfg.model.param_count() * 8) as u64
            );
        }
    }

    #[test]
    fn federaser_preserves_per_round_step_norms() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let (_, retain) = resolve_forget(&clients, &ForgetSpec::Client(2)).unwrap();

        // walk the replay manually to compare step norms round by round
        let mut replayed = original.history.records[0].global_before.clone();
        for record in &original.history.records {
            let stored: Vec<(ParamVector, usize)> = record
                .updates
                .iter()
                .filter(|u| u.client_id != 2)
                .map(|u| (u.delta.clone(), u.sample_count))
                .collect();
            let old_step = fedavg_aggregate(&stored).unwrap();

            let participants: Vec<&ClientDataset> = record
                .updates
                .iter()
                .filter(|u| u.client_id != 2)
                .filter_map(|u| retain.iter().find(|c| c.client_id == u.client_id))
                .collect();
            let calibrated: Vec<(ParamVector, usize)> = participants
                .iter()
                .map(|client| {
                    local_update_seeded(&replayed, client, &cfg, 1, |e| {
                        rng::mix(&[
                            rng::calibration_seed(
                                cfg.seed,
                                client.client_id as u64,
                                record.round_index as u64,
                            ),
                            e as u64,
                        ])
                    })
                    .unwrap()
                    .unwrap()
                })
                .collect();
            let cal_step = fedavg_aggregate(&calibrated).unwrap();
            let mut step = cal_step;
            step.scale(old_step.norm() / step.norm());
            let rel = (step.norm() - old_step.norm()).abs() / old_step.norm();
            assert!(rel < 1e-9, "norm drift {rel}");
            replayed = replayed.add(&step).unwrap();
        }

        let out =
            federaser_unlearn(&original.history, &retain, 2, 1, &cfg, ExecMode::Sequential)
                .unwrap();
        assert_eq!(out.params.values, replayed.values);
        assert_eq!(out.rounds_used, original.history.records.len());
    }

    #[test]
    fn federaser_rejects_unknown_client_and_empty_history() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let (_, retain) = resolve_forget(&clients, &ForgetSpec::Client(0)).unwrap();
        assert!(federaser_unlearn(
            &original.history,
            &retain,
            42,
            1,
            &cfg,
            ExecMode::Sequential
        )
        .is_err());
        let empty = HistoryStore::default();
        assert!(
            federaser_unlearn(&empty, &retain, 0, 1, &cfg, ExecMode::Sequential).is_err()
        );
    }

    #[test]
    fn pga_respects_the_projection_bound() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let (forget, _) = resolve_forget(&clients, &ForgetSpec::Client(0)).unwrap();
        let settings = PgaSettings {
            radius: 0.05 * original.params.norm(),
            lr: cfg.lr,
            max_steps: 30,
            stop_loss: f64::INFINITY,
            seed: 5,
        };
        let out = pga_unlearn(&original.params, &forget, &original.params, &settings).unwrap();
        let dist = out.params.l2_distance(&original.params).unwrap();
        assert!(dist <= settings.radius * (1.0 + 1e-9));
    }

    #[test]
    fn pga_zero_steps_is_identity() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let (forget, _) = resolve_forget(&clients, &ForgetSpec::Client(0)).unwrap();
        let settings = PgaSettings {
            max_steps: 0,
            ..PgaSettings::defaults(&original.params, &cfg)
        };
        let out = pga_unlearn(&original.params, &forget, &original.params, &settings).unwrap();
        assert_eq!(out.params.values, original.params.values);
        assert_eq!(out.rounds_used, 0);
    }

    #[test]
    fn pga_ascent_does_not_decrease_forget_loss() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let (forget, _) = resolve_forget(&clients, &ForgetSpec::Client(3)).unwrap();
        let batch = forget.to_batch().unwrap();
        let (before, _) = loss_and_grad(&original.params, &batch).unwrap();
        let settings = PgaSettings {
            max_steps: 1,
            stop_loss: f64::INFINITY,
            ..PgaSettings::defaults(&original.params, &cfg)
        };
        let out = pga_unlearn(&original.params, &forget, &original.params, &settings).unwrap();
        assert_eq!(out.rounds_used, 1);
        let (after, _) = loss_and_grad(&out.params, &batch).unwrap();
        assert!(
            after >= before,
            "single full-batch ascent step must not lower the loss ({before} -> {after})"
        );
    }

    #[test]
    fn dispatch_enforces_method_capabilities() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let state = FederationState {
            global: &original.params,
            clients: &clients,
            history: &original.history,
            cfg: &cfg,
        };
        let err = dispatch(
            UnlearnMethod::FedEraser,
            &state,
            &ForgetSpec::Class(3),
            ExecMode::Sequential,
        );
        assert!(matches!(err, Err(Error::Capability(_))));

        let out = dispatch(
            UnlearnMethod::Retrain,
            &state,
            &ForgetSpec::Client(2),
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(out.method, UnlearnMethod::Retrain);

        let out = dispatch(
            UnlearnMethod::Pga,
            &state,
            &ForgetSpec::Samples {
                client_id: 1,
                indices: (0..10).collect(),
            },
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(out.method, UnlearnMethod::Pga);
    }

    #[test]
    fn class_unlearn_fine_tunes_without_the_class() {
        let (clients, cfg) = setup();
        let original = trained(&clients, &cfg);
        let out = class_unlearn(&original.params, &clients, 2, &cfg, ExecMode::default()).unwrap();
        assert!(out.params.all_finite());
        assert!(out.rounds_used >= DEFAULT_CONTINUE_ROUNDS);
    }
}
