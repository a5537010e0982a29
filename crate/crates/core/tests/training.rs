//! Training-quality oracles on synthetic blobs: centralized training is the
//! reference, and the federated IID run must stay close to it.

use fedunlearn_core::data::{partition, synth_blobs, PartitionScheme};
use fedunlearn_core::fedsim::{run_rounds, FederationConfig};
use fedunlearn_core::metrics::test_accuracy;
use fedunlearn_core::models::{init_params, sgd_epoch, Arch, ModelSpec};

#[test]
fn logreg_separates_blobs_centrally() {
    let train = synth_blobs(4, 16, 100, 0.05, 1).unwrap();
    let holdout = synth_blobs(4, 16, 25, 0.05, 2).unwrap();
    let spec = ModelSpec::new(Arch::LogReg, 16, 4).unwrap();
    let mut params = init_params(spec, 1);
    let batch = train.to_batch().unwrap();
    for epoch in 0..20 {
        params = sgd_epoch(&params, &batch, 0.5, 32, 1000 + epoch).unwrap();
    }
    let acc = test_accuracy(&params, &holdout).unwrap();
    assert!(acc >= 98.0, "centralized logreg accuracy {acc}");
}

#[test]
fn federated_iid_matches_centralized_within_three_points() {
    let train = synth_blobs(4, 16, 100, 0.05, 1).unwrap();
    let holdout = synth_blobs(4, 16, 25, 0.05, 2).unwrap();
    let spec = ModelSpec::new(Arch::Mlp { hidden: 16 }, 16, 4).unwrap();

    // centralized oracle under the same budget: 20 passes over the data
    let mut central = init_params(spec, 42);
    let batch = train.to_batch().unwrap();
    for epoch in 0..20 {
        central = sgd_epoch(&central, &batch, 0.5, 32, 2000 + epoch).unwrap();
    }
    let central_acc = test_accuracy(&central, &holdout).unwrap();

    let clients = partition(&train, 10, PartitionScheme::Iid, 42).unwrap();
    let cfg = FederationConfig {
        model: spec,
        rounds: 20,
        local_epochs: 1,
        lr: 0.5,
        batch_size: 32,
        seed: 42,
        history_interval: 1,
        client_fraction: 1.0,
    };
    let out = run_rounds(&init_params(spec, cfg.seed), &clients, &cfg).unwrap();
    let fed_acc = test_accuracy(&out.params, &holdout).unwrap();

    assert!(fed_acc >= 95.0, "federated accuracy {fed_acc}");
    assert!(
        fed_acc >= central_acc - 3.0,
        "federated {fed_acc} vs centralized {central_acc}"
    );
}
