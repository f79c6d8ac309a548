//! Command implementations.

use crate::config::ExperimentConfig;
use micro_core::dataset::io::{load_features, load_interactions, write_atomic, write_interactions, write_manifest, write_mfv};
use micro_core::dataset::{
    generate_synthetic, make_cold_split, make_warm_split, split_report, InteractionTable,
    ModalityFeatures, SplitIndex, SplitMode, SplitTag,
};
use micro_core::error::{Error, Result};
use micro_core::eval::{
    evaluate, pilot_cointeraction_similarity, pilot_similar_purchase_proportion, EpochTag,
    MetricRecord,
};
use micro_core::model::checkpoint::{check_compatibility, load_checkpoint, save_checkpoint, BestMetric, Checkpoint, DatasetMeta};
use micro_core::model::trainer::{checkpoint_embeddings, train, TrainOutcome};
use micro_core::Scalar;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Loads interactions and feature matrices per the dataset config.
pub fn load_dataset<T: Scalar>(
    config: &ExperimentConfig,
) -> Result<(InteractionTable, Vec<ModalityFeatures<T>>)> {
    let interactions_path = config
        .dataset
        .interactions
        .as_ref()
        .ok_or_else(|| Error::Config("dataset.interactions is required".into()))?;
    if !config.dataset.features.is_empty() && config.dataset.manifest.is_none() {
        return Err(Error::Config(
            "dataset.manifest is required when feature files are given (feature rows \
             must align with item ids)"
                .into(),
        ));
    }
    let table = load_interactions(interactions_path, config.dataset.manifest.as_deref())?;
    let mut features = Vec::new();
    for (name, path) in &config.dataset.features {
        let f: ModalityFeatures<T> = load_features(path, name)?;
        f.validate(table.n_items)?;
        features.push(f);
    }
    Ok((table, features))
}

/// Applies the configured split; returns the retagged table, the cold
/// item set (empty for warm), and the short-user count.
pub fn apply_split(
    config: &ExperimentConfig,
    table: &InteractionTable,
) -> Result<(InteractionTable, Vec<usize>, usize)> {
    match config.split.mode {
        SplitMode::Warm => {
            let (split, short) = make_warm_split(table, &config.split)?;
            Ok((split, Vec::new(), short))
        }
        SplitMode::Cold => {
            let (split, cold) = make_cold_split(table, &config.split)?;
            Ok((split, cold, 0))
        }
    }
}

fn ensure_out_dir(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out)
        .map_err(|e| Error::io(config.out.display().to_string(), e))
}

fn write_metrics_log(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Config(format!("log encode: {e}")))?,
        );
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())
}

fn dataset_meta<T: Scalar>(
    table: &InteractionTable,
    features: &[ModalityFeatures<T>],
) -> DatasetMeta {
    DatasetMeta {
        n_users: table.n_users,
        n_items: table.n_items,
        modalities: features
            .iter()
            .map(|f| (f.name.clone(), f.matrix.cols()))
            .collect(),
    }
}

/// Shared train-and-persist path used by `train` and each sweep run.
/// Writes the resolved config, split report, metric log, and best
/// checkpoint into the output directory, then surfaces any numerical
/// abort (the checkpoint already holds the last good state).
pub fn run_training<T: Scalar>(config: &ExperimentConfig) -> Result<TrainOutcome<T>> {
    ensure_out_dir(config)?;
    let (table, features) = load_dataset::<T>(config)?;
    let (split, cold, short_users) = apply_split(config, &table)?;
    let index = SplitIndex::build(&split);

    write_atomic(
        &config.out.join("config.resolved.cfg"),
        config.to_canonical_text().as_bytes(),
    )?;
    let report = split_report(&split, &config.split, &cold, short_users);
    write_atomic(
        &config.out.join("split.json"),
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("split encode: {e}")))?
            .as_bytes(),
    )?;

    let outcome = train::<T>(
        &config.trainer,
        &index,
        &features,
        config.split.mode,
        config.cache_dir.as_deref(),
        &config.hash(),
    )?;

    save_checkpoint(
        &config.out.join("checkpoint.mck"),
        &Checkpoint {
            params: outcome.best_params.clone(),
            adam: outcome.best_adam.clone(),
            trainer: config.trainer.clone(),
            dataset: dataset_meta(&table, &features),
            best: BestMetric {
                epoch: outcome.best_epoch,
                valid_recall: outcome.best_valid_recall,
            },
        },
    )?;
    write_metrics_log(&config.out.join("metrics.jsonl"), &outcome.records)?;

    if let Some(abort) = &outcome.abort {
        return Err(Error::NanLoss {
            epoch: abort.epoch,
            batch: abort.batch,
        });
    }
    Ok(outcome)
}

pub fn cmd_train<T: Scalar>(config: &ExperimentConfig) -> Result<()> {
    let outcome = run_training::<T>(config)?;
    eprintln!(
        "trained {} epochs; best valid recall@20 {:.6} at epoch {}; artifacts in {}",
        outcome.epochs_run,
        outcome.best_valid_recall,
        outcome.best_epoch,
        config.out.display()
    );
    Ok(())
}

pub fn cmd_evaluate<T: Scalar>(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    protocol: Option<SplitMode>,
    ks: &[usize],
) -> Result<()> {
    let checkpoint = load_checkpoint::<T>(checkpoint_path)?;
    let mut eval_config = config.clone();
    if let Some(mode) = protocol {
        eval_config.split.mode = mode;
    }
    let (table, features) = load_dataset::<T>(&eval_config)?;
    check_compatibility(&checkpoint.dataset, table.n_users, table.n_items)?;
    let (split, _, _) = apply_split(&eval_config, &table)?;
    let index = SplitIndex::build(&split);

    // The checkpoint's own trainer config drives the model rebuild
    // (graph k, lambda, modality subset); the eval config only selects
    // data, split, and cutoffs.
    let (users, items) = checkpoint_embeddings(
        &checkpoint.trainer,
        &checkpoint.params,
        &features,
        &index,
        eval_config.cache_dir.as_deref(),
    )?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for &k in ks {
        let report = evaluate(&users, &items, &index, SplitTag::Test, eval_config.split.mode, k);
        let record = MetricRecord::from_report(
            &report,
            EpochTag::final_tag(),
            &eval_config.hash(),
            eval_config.seed,
        );
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Config(format!("record encode: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io("stdout", e))?;
    }
    Ok(())
}

/// One sweep point: the axis value and the config it induces.
fn sweep_run_config(
    base: &ExperimentConfig,
    axis: &str,
    value: &str,
) -> Result<ExperimentConfig> {
    let mut config = base.clone();
    config.out = base.out.join(format!("sweep_{axis}_{value}"));
    // The summary header reports @20 metrics.
    config.trainer.eval_k = 20;
    match axis {
        "k" => {
            config.trainer.knn_k = value
                .parse()
                .map_err(|_| Error::Config(format!("bad k value `{value}`")))?;
        }
        "lambda" => {
            config.trainer.lambda = value
                .parse()
                .map_err(|_| Error::Config(format!("bad lambda value `{value}`")))?;
        }
        "beta" => {
            config.trainer.beta = value
                .parse()
                .map_err(|_| Error::Config(format!("bad beta value `{value}`")))?;
        }
        "L" => {
            config.trainer.layers = value
                .parse()
                .map_err(|_| Error::Config(format!("bad L value `{value}`")))?;
        }
        "modality" => {
            config.trainer.modalities = match value {
                "both" => Vec::new(),
                name => vec![name.to_string()],
            };
        }
        other => return Err(Error::Config(format!("unknown sweep axis `{other}`"))),
    }
    Ok(config)
}

pub fn cmd_sweep<T: Scalar>(
    config: &ExperimentConfig,
    axis: &str,
    values: &[String],
    parallel: usize,
) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep requires at least one value".into()));
    }
    ensure_out_dir(config)?;
    let runs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| sweep_run_config(config, axis, v))
        .collect::<Result<_>>()?;

    let results: Vec<Result<TrainOutcome<T>>> = if parallel <= 1 {
        runs.iter().map(|c| run_training::<T>(c)).collect()
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in runs.chunks(parallel) {
                let spawned: Vec<_> = chunk
                    .iter()
                    .map(|c| scope.spawn(move || run_training::<T>(c)))
                    .collect();
                for h in spawned {
                    handles.push(h.join().expect("sweep worker panicked"));
                }
            }
            handles
        })
    };

    let mut csv = String::from("axis,value,recall@20,precision@20,ndcg@20\n");
    for (value, result) in values.iter().zip(results) {
        let outcome = result?;
        let m = &outcome.final_test;
        csv.push_str(&format!(
            "{axis},{value},{:.6},{:.6},{:.6}\n",
            m.recall, m.precision, m.ndcg
        ));
    }
    let path = config.out.join(format!("sweep_{axis}.csv"));
    write_atomic(&path, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct PilotOutput {
    cointeraction: Vec<micro_core::eval::CointeractionStat>,
    similar_purchase: Vec<micro_core::eval::SimilarPurchaseStat>,
    /// Per modality: does the co-interacted mean exceed the all-pairs
    /// mean?
    co_interacted_exceeds_all_pairs: Vec<(String, bool)>,
}

pub fn cmd_pilot<T: Scalar>(config: &ExperimentConfig, k_list: &[usize]) -> Result<()> {
    let (table, features) = load_dataset::<T>(config)?;
    if features.is_empty() {
        return Err(Error::Config("pilot statistics need at least one feature matrix".into()));
    }
    let ks: Vec<usize> = if k_list.is_empty() {
        [5usize, 10, 15, 20]
            .into_iter()
            .filter(|&k| k < table.n_items)
            .collect()
    } else {
        k_list.to_vec()
    };
    let cointeraction = pilot_cointeraction_similarity(&features, &table)?;
    let similar_purchase = pilot_similar_purchase_proportion(&features, &table, &ks)?;
    let flags = cointeraction
        .iter()
        .map(|s| {
            (
                s.modality.clone(),
                s.co_interacted_mean.map(|c| c > s.all_pairs_mean).unwrap_or(false),
            )
        })
        .collect();
    let output = PilotOutput {
        cointeraction,
        similar_purchase,
        co_interacted_exceeds_all_pairs: flags,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&output)
            .map_err(|e| Error::Config(format!("pilot encode: {e}")))?
    );
    Ok(())
}

pub fn cmd_synth(config: &ExperimentConfig) -> Result<()> {
    ensure_out_dir(config)?;
    let (table, features) = generate_synthetic::<f64>(&config.synth)?;
    let interactions_path = config.out.join("interactions.tsv");
    let manifest_path = config.out.join("items.manifest");
    write_interactions(&interactions_path, &table)?;
    write_manifest(&manifest_path, &table.item_ids)?;
    let mut feature_lines = Vec::new();
    for f in &features {
        let path = config.out.join(format!("{}.mfv", f.name));
        write_mfv(&path, &f.matrix)?;
        feature_lines.push(format!("dataset.feature.{} = {}", f.name, path.display()));
    }
    // Ready-to-use dataset stanza for train/pilot configs.
    let snippet = format!(
        "dataset.interactions = {}\ndataset.manifest = {}\n{}\n",
        interactions_path.display(),
        manifest_path.display(),
        feature_lines.join("\n")
    );
    write_atomic(&config.out.join("dataset.cfg"), snippet.as_bytes())?;
    eprintln!(
        "wrote {} interactions for {} users x {} items into {}",
        table.interactions.len(),
        table.n_users,
        table.n_items,
        config.out.display()
    );
    Ok(())
}
