//! End-to-end trainer behavior on small synthetic datasets.

use micro_core::dataset::{
    generate_synthetic, make_warm_split, SplitIndex, SplitMode, SplitSpec, SynthSpec,
};
use micro_core::model::trainer::{checkpoint_embeddings, train};
use micro_core::model::{Backbone, ModelParams, TrainerConfig};
use micro_core::eval::evaluate;
use micro_core::dataset::SplitTag;

fn synth_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        users: 60,
        items: 40,
        modalities: vec![("visual".into(), 16), ("textual".into(), 12)],
        rank: 6,
        noise: 0.1,
        saturation: 3.0,
        clusters: 8,
        exposure_skew: 1.0,
        interactions_per_user: (10, 16),
        seed,
    }
}

fn split_index(seed: u64) -> (SplitIndex, Vec<micro_core::dataset::ModalityFeatures<f64>>) {
    let (table, features) = generate_synthetic::<f64>(&synth_spec(seed)).unwrap();
    let spec = SplitSpec {
        seed,
        ..SplitSpec::default()
    };
    let (split, _) = make_warm_split(&table, &spec).unwrap();
    (SplitIndex::build(&split), features)
}

fn fast_config(seed: u64) -> TrainerConfig {
    TrainerConfig {
        embedding_dim: 16,
        knn_k: 5,
        batch_size: 256,
        max_epochs: 25,
        patience: 25,
        backbone: Backbone::Mf,
        seed,
        ..TrainerConfig::default()
    }
}

#[test]
fn training_improves_over_random_init() {
    let (index, features) = split_index(3);
    let config = fast_config(3);

    // Validation recall of the untouched random initialization.
    let init_params =
        ModelParams::<f64>::init(&config, index.n_users, index.n_items, &features).unwrap();
    let (u0, i0) = checkpoint_embeddings(&config, &init_params, &features, &index, None).unwrap();
    let before = evaluate(&u0, &i0, &index, SplitTag::Valid, SplitMode::Warm, 20);

    let outcome = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    assert!(outcome.abort.is_none());
    assert!(
        outcome.best_valid_recall > before.recall,
        "trained {} vs random-init {}",
        outcome.best_valid_recall,
        before.recall
    );
    // Loss trajectory comes down.
    let first = outcome.epoch_losses.first().unwrap().total;
    let last = outcome.epoch_losses.last().unwrap().total;
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn same_seed_is_bit_identical() {
    let (index, features) = split_index(5);
    let config = fast_config(5);
    let a = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    let b = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.best_valid_recall, b.best_valid_recall);
    assert_eq!(a.best_params.user_embedding, b.best_params.user_embedding);
    assert_eq!(a.best_params.item_embedding, b.best_params.item_embedding);
    let totals_a: Vec<f64> = a.epoch_losses.iter().map(|r| r.total).collect();
    let totals_b: Vec<f64> = b.epoch_losses.iter().map(|r| r.total).collect();
    assert_eq!(totals_a, totals_b);
}

#[test]
fn no_contrast_flag_equals_beta_zero_bitwise() {
    let (index, features) = split_index(7);
    let mut with_flag = fast_config(7);
    with_flag.max_epochs = 6;
    with_flag.no_contrast = true;
    let mut with_beta_zero = fast_config(7);
    with_beta_zero.max_epochs = 6;
    with_beta_zero.beta = 0.0;

    let a = train(&with_flag, &index, &features, SplitMode::Warm, None, "h").unwrap();
    let b = train(&with_beta_zero, &index, &features, SplitMode::Warm, None, "h").unwrap();
    let totals_a: Vec<f64> = a.epoch_losses.iter().map(|r| r.total).collect();
    let totals_b: Vec<f64> = b.epoch_losses.iter().map(|r| r.total).collect();
    assert_eq!(totals_a, totals_b);
    assert_eq!(a.best_params.item_embedding, b.best_params.item_embedding);
}

#[test]
fn patience_triggers_early_stop() {
    let (index, features) = split_index(9);
    let mut config = fast_config(9);
    // A learning rate too small to move the ranking; the first epoch
    // records the best value and the counter runs out.
    config.learning_rate = 1e-12;
    config.max_epochs = 50;
    config.patience = 3;
    let outcome = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    assert_eq!(outcome.epochs_run, 1 + config.patience);
    assert_eq!(outcome.best_epoch, 0);
}

#[test]
fn per_epoch_selection_cadence_runs() {
    let (index, features) = split_index(11);
    let mut config = fast_config(11);
    config.max_epochs = 4;
    config.refresh_selection_per_epoch = true;
    let outcome = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    assert!(outcome.abort.is_none());
    assert_eq!(outcome.epoch_losses.len(), 4);
}

#[test]
fn lightgcn_backbone_trains() {
    let (index, features) = split_index(13);
    let mut config = fast_config(13);
    config.backbone = Backbone::Lightgcn;
    config.max_epochs = 6;
    let outcome = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    assert!(outcome.abort.is_none());
    let first = outcome.epoch_losses.first().unwrap().total;
    let last = outcome.epoch_losses.last().unwrap().total;
    assert!(last < first);
}

#[test]
fn modality_subset_restricts_the_model() {
    let (index, features) = split_index(15);
    let mut config = fast_config(15);
    config.max_epochs = 2;
    config.modalities = vec!["textual".into()];
    let outcome = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    assert_eq!(outcome.best_params.transforms.len(), 1);
    assert_eq!(outcome.best_params.transforms[0].modality, "textual");

    config.modalities = vec!["missing".into()];
    assert!(train(&config, &index, &features, SplitMode::Warm, None, "h").is_err());
}

#[test]
fn records_cover_epochs_plus_final() {
    let (index, features) = split_index(17);
    let mut config = fast_config(17);
    config.max_epochs = 3;
    let outcome = train(&config, &index, &features, SplitMode::Warm, None, "h").unwrap();
    assert_eq!(outcome.records.len(), 4);
    let json = serde_json::to_string(&outcome.records.last().unwrap()).unwrap();
    assert!(json.contains("\"final\""), "{json}");
}
