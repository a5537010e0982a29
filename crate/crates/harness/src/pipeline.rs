//! Benchmark pipelines: data preparation with marker/attack injection,
//! federated training, method dispatch, metric evaluation, and report
//! emission.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use fedunlearn_core::data::{
    inject_backdoor, inject_watermark, make_triggered_testset, partition, resolve_forget,
    synth_blobs, ClientDataset, Dataset, ForgetSpec, TriggerSpec, WatermarkSet,
};
use fedunlearn_core::fedsim::{run_rounds_with, ExecMode, FederationConfig, HistoryStore};
use fedunlearn_core::idx::{load_idx, save_idx};
use fedunlearn_core::metrics::{
    backdoor_success_rate, build_em_markers, build_fm_markers, class_accuracy, distance_gap,
    efficiency_report, em_score, marker_loss, mia_attack_accuracy, rest_accuracy, test_accuracy,
    watermark_retention, MarkerSet, MetricReport,
};
use fedunlearn_core::models::{init_params, per_sample_losses, ParamVector};
use fedunlearn_core::rng;
use fedunlearn_core::unlearn::{
    class_unlearn, dispatch, FederationState, UnlearnMethod, UnlearnOutcome,
};

use crate::config::{DatasetSource, ExperimentConfig, ForgetSection};
use crate::error::{CliError, CliResult};

pub const MODEL_FILE: &str = "model.fupv";
pub const HISTORY_FILE: &str = "history.fuhs";
pub const TRACES_FILE: &str = "traces.csv";

/// Everything shared by the benchmark pipelines after data preparation.
pub struct PreparedExperiment {
    pub clients: Vec<ClientDataset>,
    pub test: Dataset,
    pub num_classes: usize,
    pub fed_cfg: FederationConfig,
    pub trigger: TriggerSpec,
    pub watermark: Option<WatermarkSet>,
    pub forget_spec: ForgetSpec,
}

/// A trained federation plus the derived evaluation artifacts.
pub struct TrainedExperiment {
    pub prep: PreparedExperiment,
    pub global: ParamVector,
    pub history: HistoryStore,
    pub train_wall_time: f64,
    pub train_rounds: usize,
    pub train_upload_bytes: u64,
    pub train_download_bytes: u64,
    /// Per-recorded-round, per-sample losses on the forget set.
    pub traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableMetadata {
    pub config_hash: u64,
    pub timestamp: u64,
    pub dataset: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkTable {
    pub columns: Vec<String>,
    pub rows: Vec<MetricReport>,
    pub metadata: TableMetadata,
}

pub fn exec_mode() -> ExecMode {
    ExecMode::default()
}

fn dataset_name(cfg: &ExperimentConfig) -> String {
    match &cfg.dataset {
        DatasetSource::Synthetic { classes, dim, .. } => format!("synthetic-{classes}c-{dim}d"),
        DatasetSource::Idx { train_images, .. } => train_images
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
    }
}

/// Loads or generates the train/test pair and the class count.
pub fn load_datasets(cfg: &ExperimentConfig) -> CliResult<(Dataset, Dataset, usize)> {
    match &cfg.dataset {
        DatasetSource::Synthetic {
            classes,
            dim,
            per_class,
            spread,
            test_per_class,
        } => {
            let train = synth_blobs(*classes, *dim, *per_class, *spread, cfg.seed)?;
            let test = synth_blobs(
                *classes,
                *dim,
                *test_per_class,
                *spread,
                rng::mix(&[cfg.seed, 0x7e57]),
            )?;
            Ok((train, test, *classes))
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            let max_label = train
                .labels
                .iter()
                .chain(&test.labels)
                .copied()
                .max()
                .ok_or_else(|| CliError::Data("dataset is empty".into()))?;
            Ok((train, test, (max_label + 1).max(2)))
        }
    }
}

/// Partitions the data and injects the backdoor and watermark into the
/// forget client (client-level runs) or poisons toward the forgotten class
/// (class-level runs).
pub fn prepare(cfg: &ExperimentConfig) -> CliResult<PreparedExperiment> {
    let (train, test, num_classes) = load_datasets(cfg)?;
    let dim = train.dim();
    let model = cfg.model_spec(dim, num_classes)?;
    let fed_cfg = cfg.federation_config(model);
    fed_cfg.validate()?;
    let mut clients = partition(
        &train,
        cfg.federation.clients,
        cfg.partition.scheme(),
        cfg.seed,
    )?;

    let forget_spec = cfg.forget.to_spec();
    let mut trigger = cfg.attack.trigger_for_dim(dim);
    let mut watermark = None;

    match &forget_spec {
        ForgetSpec::Client(id) | ForgetSpec::Samples { client_id: id, .. } => {
            let pos = clients
                .iter()
                .position(|c| c.client_id == *id)
                .ok_or_else(|| CliError::Config(format!("forget.client_id: no client {id}")))?;
            let poisoned = inject_backdoor(
                &clients[pos],
                &trigger,
                cfg.attack.poison_fraction,
                rng::mix(&[cfg.seed, 0xa11ac]),
            )?;
            let (marked, wm) = inject_watermark(
                &poisoned,
                cfg.attack.watermark_size,
                cfg.attack.watermark_replicas,
                num_classes,
                rng::mix(&[cfg.seed, 0x3a7e4]),
            )?;
            clients[pos] = marked;
            watermark = Some(wm);
        }
        ForgetSpec::Class(label) => {
            // poison toward the forgotten class so the backdoor metric tracks
            // how much of that class's influence survives unlearning
            trigger.target_label = *label;
            let poisoned = inject_backdoor(
                &clients[0],
                &trigger,
                cfg.attack.poison_fraction,
                rng::mix(&[cfg.seed, 0xa11ac]),
            )?;
            clients[0] = poisoned;
        }
    }

    Ok(PreparedExperiment {
        clients,
        test,
        num_classes,
        fed_cfg,
        trigger,
        watermark,
        forget_spec,
    })
}

/// Runs federated training and derives the loss traces for FM markers.
pub fn train(cfg: &ExperimentConfig) -> CliResult<TrainedExperiment> {
    let prep = prepare(cfg)?;
    let init = init_params(prep.fed_cfg.model, prep.fed_cfg.seed);
    let out = run_rounds_with(&init, &prep.clients, &prep.fed_cfg, exec_mode())?;

    let (forget, _) = resolve_forget(&prep.clients, &prep.forget_spec)?;
    let forget_batch = forget.to_batch()?;
    let mut traces = Vec::with_capacity(out.history.records.len() + 1);
    for record in &out.history.records {
        traces.push(per_sample_losses(&record.global_before, &forget_batch)?);
    }
    traces.push(per_sample_losses(&out.params, &forget_batch)?);

    Ok(TrainedExperiment {
        prep,
        global: out.params,
        history: out.history,
        train_wall_time: out.ledger.wall_time,
        train_rounds: out.ledger.rounds_executed,
        train_upload_bytes: out.ledger.upload_bytes,
        train_download_bytes: out.ledger.download_bytes,
        traces,
    })
}

struct EvalContext<'a> {
    prep: &'a PreparedExperiment,
    forget: &'a Dataset,
    triggered_test: &'a Dataset,
    em_markers: &'a MarkerSet,
    fm_markers: Option<&'a MarkerSet>,
    retrain_params: &'a ParamVector,
}

fn client_level_row(
    name: &str,
    params: &ParamVector,
    ctx: &EvalContext<'_>,
    dataset: &str,
) -> CliResult<MetricReport> {
    let mut row = MetricReport::new(name, dataset);
    row.set("distance_gap", distance_gap(params, ctx.retrain_params)?);
    row.set("test_accuracy", test_accuracy(params, &ctx.prep.test)?);
    row.set(
        "ba",
        backdoor_success_rate(params, ctx.triggered_test, ctx.prep.trigger.target_label)?,
    );
    row.set(
        "mia",
        mia_attack_accuracy(params, ctx.forget, &ctx.prep.test)?,
    );
    if let Some(wm) = &ctx.prep.watermark {
        row.set("watermark", watermark_retention(params, wm)?);
    }
    row.set("em", em_score(params, ctx.em_markers)?);
    if let Some(fm) = ctx.fm_markers {
        row.set("fm", marker_loss(params, fm)?);
    }
    Ok(row)
}

pub const CLIENT_COLUMNS: &[&str] = &[
    "distance_gap",
    "test_accuracy",
    "ba",
    "mia",
    "watermark",
    "em",
    "fm",
    "wall_time",
    "rounds",
    "upload_bytes",
    "download_bytes",
];

pub const CLASS_COLUMNS: &[&str] = &[
    "distance_gap",
    "test_accuracy",
    "target_acc",
    "rest_acc",
    "ba",
    "mia",
    "em",
    "wall_time",
    "rounds",
    "upload_bytes",
    "download_bytes",
];

fn timestamp_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs a method with the dispatch call timed; the spec's wall_time excludes
/// metric evaluation.
fn timed_dispatch(
    method: UnlearnMethod,
    state: &FederationState<'_>,
    spec: &ForgetSpec,
) -> CliResult<UnlearnOutcome> {
    let start = Instant::now();
    let mut outcome = dispatch(method, state, spec, exec_mode())?;
    outcome.ledger.wall_time = start.elapsed().as_secs_f64();
    Ok(outcome)
}

/// The client-level benchmark of unlearning methods: trains once, unlearns
/// with every requested method, and evaluates the full metric family.
pub fn run_client_level_benchmark(cfg: &ExperimentConfig) -> CliResult<BenchmarkTable> {
    let forget_client = match &cfg.forget {
        ForgetSection::Client { client_id } => *client_id,
        other => {
            return Err(CliError::Config(format!(
                "forget: client-level benchmark requires type \"client\", got {other:?}"
            )))
        }
    };
    let trained = train(cfg)?;
    let prep = &trained.prep;
    let dataset = dataset_name(cfg);

    let forget_client_data = prep
        .clients
        .iter()
        .find(|c| c.client_id == forget_client)
        .expect("validated in prepare")
        .clone();
    let (forget, _) = resolve_forget(&prep.clients, &prep.forget_spec)?;
    let triggered_test = make_triggered_testset(&prep.test, &prep.trigger)?;
    let em_markers = build_em_markers(
        &trained.global,
        &forget_client_data,
        cfg.attack.marker_top_k.min(forget_client_data.data.len()),
    )?;
    let fm_markers = build_fm_markers(
        &trained.traces,
        &forget_client_data,
        cfg.attack.marker_top_k.min(forget_client_data.data.len()),
    )?;

    // retrain is the reference for every alignment metric; run it first
    let mut methods = cfg.parsed_methods();
    if !methods.contains(&UnlearnMethod::Retrain) {
        methods.insert(0, UnlearnMethod::Retrain);
    }
    let state = FederationState {
        global: &trained.global,
        clients: &prep.clients,
        history: &trained.history,
        cfg: &prep.fed_cfg,
    };
    let retrain_outcome = timed_dispatch(UnlearnMethod::Retrain, &state, &prep.forget_spec)?;

    let ctx = EvalContext {
        prep,
        forget: &forget,
        triggered_test: &triggered_test,
        em_markers: &em_markers,
        fm_markers: Some(&fm_markers),
        retrain_params: &retrain_outcome.params,
    };

    let mut rows = Vec::new();
    let mut original = client_level_row("original", &trained.global, &ctx, &dataset)?;
    original.set("wall_time", trained.train_wall_time);
    original.set("rounds", trained.train_rounds as f64);
    original.set("upload_bytes", trained.train_upload_bytes as f64);
    original.set("download_bytes", trained.train_download_bytes as f64);
    rows.push(original);

    for method in methods {
        let outcome = if method == UnlearnMethod::Retrain {
            retrain_outcome.clone()
        } else {
            timed_dispatch(method, &state, &prep.forget_spec)?
        };
        let mut row = client_level_row(method.name(), &outcome.params, &ctx, &dataset)?;
        efficiency_report(&outcome, &mut row);
        rows.push(row);
    }

    Ok(BenchmarkTable {
        columns: CLIENT_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        metadata: TableMetadata {
            config_hash: cfg.config_hash(),
            timestamp: timestamp_now(),
            dataset,
        },
    })
}

/// The class-level benchmark: retrain vs the ascent+fine-tune composition,
/// reporting target-class and rest-class accuracy separately.
pub fn run_class_level_benchmark(cfg: &ExperimentConfig) -> CliResult<BenchmarkTable> {
    let class_label = match &cfg.forget {
        ForgetSection::Class { label } => *label,
        other => {
            return Err(CliError::Config(format!(
                "forget: class-level benchmark requires type \"class\", got {other:?}"
            )))
        }
    };
    let trained = train(cfg)?;
    let prep = &trained.prep;
    let dataset = dataset_name(cfg);

    let (forget, _) = resolve_forget(&prep.clients, &prep.forget_spec)?;
    let triggered_test = make_triggered_testset(&prep.test, &prep.trigger)?;
    // EM markers over the forgotten class's samples
    let forget_pseudo_client = ClientDataset {
        client_id: usize::MAX,
        data: forget.clone(),
    };
    let em_markers = build_em_markers(
        &trained.global,
        &forget_pseudo_client,
        cfg.attack.marker_top_k.min(forget.len()),
    )?;
    // members: forgotten-class training samples; nonmembers: same class, test
    let class_test_idx: Vec<usize> = (0..prep.test.len())
        .filter(|&i| prep.test.labels[i] == class_label)
        .collect();
    let class_test = prep.test.subset(&class_test_idx);

    let state = FederationState {
        global: &trained.global,
        clients: &prep.clients,
        history: &trained.history,
        cfg: &prep.fed_cfg,
    };
    let retrain_outcome = timed_dispatch(UnlearnMethod::Retrain, &state, &prep.forget_spec)?;
    let start = Instant::now();
    let mut unlearn_outcome = class_unlearn(
        &trained.global,
        &prep.clients,
        class_label,
        &prep.fed_cfg,
        exec_mode(),
    )?;
    unlearn_outcome.ledger.wall_time = start.elapsed().as_secs_f64();

    let mut rows = Vec::new();
    let class_row = |name: &str, params: &ParamVector| -> CliResult<MetricReport> {
        let mut row = MetricReport::new(name, dataset.clone());
        row.set("distance_gap", distance_gap(params, &retrain_outcome.params)?);
        row.set("test_accuracy", test_accuracy(params, &prep.test)?);
        row.set(
            "target_acc",
            class_accuracy(params, &prep.test, class_label)?.unwrap_or(0.0),
        );
        row.set("rest_acc", rest_accuracy(params, &prep.test, class_label)?);
        row.set(
            "ba",
            backdoor_success_rate(params, &triggered_test, class_label)?,
        );
        row.set("mia", mia_attack_accuracy(params, &forget, &class_test)?);
        row.set("em", em_score(params, &em_markers)?);
        Ok(row)
    };

    let mut original = class_row("original", &trained.global)?;
    original.set("wall_time", trained.train_wall_time);
    original.set("rounds", trained.train_rounds as f64);
    original.set("upload_bytes", trained.train_upload_bytes as f64);
    original.set("download_bytes", trained.train_download_bytes as f64);
    rows.push(original);

    let mut retrain_row = class_row("retrain", &retrain_outcome.params)?;
    efficiency_report(&retrain_outcome, &mut retrain_row);
    rows.push(retrain_row);

    let mut unlearn_row = class_row("class_unlearn", &unlearn_outcome.params)?;
    efficiency_report(&unlearn_outcome, &mut unlearn_row);
    rows.push(unlearn_row);

    Ok(BenchmarkTable {
        columns: CLASS_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        metadata: TableMetadata {
            config_hash: cfg.config_hash(),
            timestamp: timestamp_now(),
            dataset,
        },
    })
}

/// Writes results.csv, results.json, and config_echo.json; creates the
/// directory when missing. CSV values use 4 decimal places.
pub fn emit_report(
    table: &BenchmarkTable,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;

    let mut csv = String::from("method");
    for col in &table.columns {
        csv.push(',');
        csv.push_str(col);
    }
    csv.push('\n');
    for row in &table.rows {
        csv.push_str(&row.method);
        for col in &table.columns {
            csv.push(',');
            match row.get(col) {
                Some(v) => csv.push_str(&format!("{v:.4}")),
                None => csv.push_str("na"),
            }
        }
        csv.push('\n');
    }
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, csv)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", csv_path.display())))?;

    let json_path = dir.join("results.json");
    let json = serde_json::to_string_pretty(table).expect("table serializes");
    std::fs::write(&json_path, json)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", json_path.display())))?;

    let echo_path = dir.join("config_echo.json");
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(&echo_path, echo)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", echo_path.display())))?;
    Ok(())
}

/// `gen-data`: writes a synthetic dataset pair as IDX files.
pub fn generate_data(
    out_dir: &Path,
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    test_per_class: usize,
    seed: u64,
) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let train = synth_blobs(classes, dim, per_class, spread, seed)?;
    let test = synth_blobs(classes, dim, test_per_class, spread, rng::mix(&[seed, 0x7e57]))?;
    save_idx(
        &train,
        &out_dir.join("train-images.idx"),
        &out_dir.join("train-labels.idx"),
    )?;
    save_idx(
        &test,
        &out_dir.join("test-images.idx"),
        &out_dir.join("test-labels.idx"),
    )?;
    Ok(())
}

/// `train`: trains and persists model, history, and loss traces.
pub fn train_and_save(cfg: &ExperimentConfig) -> CliResult<()> {
    let trained = train(cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    fedunlearn_core::params_io::save_params(&dir.join(MODEL_FILE), &trained.global)?;
    fedunlearn_core::history_io::save_history(&dir.join(HISTORY_FILE), &trained.history)?;

    let mut csv = String::from("round,sample,loss\n");
    for (round, losses) in trained.traces.iter().enumerate() {
        for (sample, loss) in losses.iter().enumerate() {
            csv.push_str(&format!("{round},{sample},{loss:.17e}\n"));
        }
    }
    let traces_path = dir.join(TRACES_FILE);
    std::fs::write(&traces_path, csv)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", traces_path.display())))?;
    Ok(())
}

/// `unlearn`: runs one method against the saved training state.
pub fn unlearn_from_saved(cfg: &ExperimentConfig, method: UnlearnMethod) -> CliResult<()> {
    let prep = prepare(cfg)?;
    let global = fedunlearn_core::params_io::load_params(&cfg.output_dir.join(MODEL_FILE))?;
    let history = fedunlearn_core::history_io::load_history(&cfg.output_dir.join(HISTORY_FILE))?;
    let state = FederationState {
        global: &global,
        clients: &prep.clients,
        history: &history,
        cfg: &prep.fed_cfg,
    };
    let outcome = timed_dispatch(method, &state, &prep.forget_spec)?;
    let out_path = cfg
        .output_dir
        .join(format!("unlearned_{}.fupv", method.name()));
    fedunlearn_core::params_io::save_params(&out_path, &outcome.params)?;
    println!(
        "{} rounds={} wall_time={:.3}s upload_bytes={} -> {}",
        method.name(),
        outcome.rounds_used,
        outcome.ledger.wall_time,
        outcome.ledger.upload_bytes,
        out_path.display()
    );
    Ok(())
}

/// `evaluate`: metric report for one saved model against a reference.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model_path: &Path,
    reference_path: &Path,
) -> CliResult<MetricReport> {
    let prep = prepare(cfg)?;
    let params = fedunlearn_core::params_io::load_params(model_path)?;
    let reference = fedunlearn_core::params_io::load_params(reference_path)?;
    let (forget, _) = resolve_forget(&prep.clients, &prep.forget_spec)?;
    let triggered_test = make_triggered_testset(&prep.test, &prep.trigger)?;

    let mut row = MetricReport::new(
        model_path.to_string_lossy().into_owned(),
        dataset_name(cfg),
    );
    row.set("distance_gap", distance_gap(&params, &reference)?);
    row.set("test_accuracy", test_accuracy(&params, &prep.test)?);
    row.set(
        "ba",
        backdoor_success_rate(&params, &triggered_test, prep.trigger.target_label)?,
    );
    row.set("mia", mia_attack_accuracy(&params, &forget, &prep.test)?);
    if let Some(wm) = &prep.watermark {
        row.set("watermark", watermark_retention(&params, wm)?);
    }
    // EM markers come from the saved original model when available
    let saved_model = cfg.output_dir.join(MODEL_FILE);
    if saved_model.exists() {
        if let ForgetSpec::Client(id) = prep.forget_spec {
            let original = fedunlearn_core::params_io::load_params(&saved_model)?;
            let client = prep
                .clients
                .iter()
                .find(|c| c.client_id == id)
                .expect("validated in prepare");
            let markers = build_em_markers(
                &original,
                client,
                cfg.attack.marker_top_k.min(client.data.len()),
            )?;
            row.set("em", em_score(&params, &markers)?);
        }
    }
    Ok(row)
}
