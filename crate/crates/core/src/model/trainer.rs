//! Training loop: sample triples, rebuild learned graphs, propagate,
//! fuse, optimize, validate, early-stop.

use crate::dataset::{ModalityFeatures, SplitIndex, SplitMode, SplitTag, TripleSampler};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EpochTag, MetricRecord, MetricReport};
use crate::graph::{initial_graph_cached, select_topk_edges, transform_features};
use crate::model::backbone::BipartiteAdj;
use crate::model::forward::{build_training_step, ForwardInputs};
use crate::model::loss::LossReport;
use crate::model::{Backbone, ModelParams, TrainerConfig};
use crate::numerics::{AdamConfig, AdamState, CsrStructure, DenseMatrix, SparseMatrix, Tape};
use crate::rng::derive_rng;
use crate::scalar::Scalar;
use std::path::Path;
use std::sync::Arc;

/// Where and why a run stopped early on a numerical problem; the
/// last-good state is what [`TrainOutcome`] carries.
#[derive(Clone, Debug)]
pub struct AbortInfo {
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

pub struct TrainOutcome<T> {
    pub best_params: ModelParams<T>,
    pub best_adam: AdamState<T>,
    pub best_epoch: usize,
    pub best_valid_recall: f64,
    pub epochs_run: usize,
    /// Mean loss report per epoch.
    pub epoch_losses: Vec<LossReport>,
    /// Per-epoch validation records plus the final test record.
    pub records: Vec<MetricRecord>,
    pub final_test: MetricReport,
    pub abort: Option<AbortInfo>,
    /// Zero-norm transformed rows dropped across all steps.
    pub dropped_rows: usize,
}

/// Selects and orders the feature matrices per the config subset.
pub fn select_features<'a, T: Scalar>(
    config: &TrainerConfig,
    features: &'a [ModalityFeatures<T>],
) -> Result<Vec<&'a ModalityFeatures<T>>> {
    if config.modalities.is_empty() {
        return Ok(features.iter().collect());
    }
    config
        .modalities
        .iter()
        .map(|name| {
            features
                .iter()
                .find(|f| &f.name == name)
                .ok_or_else(|| Error::Config(format!("modality `{name}` has no feature matrix")))
        })
        .collect()
}

pub fn train<T: Scalar>(
    config: &TrainerConfig,
    index: &SplitIndex,
    features: &[ModalityFeatures<T>],
    protocol: SplitMode,
    cache_dir: Option<&Path>,
    config_hash: &str,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let selected = select_features(config, features)?;
    for f in &selected {
        f.validate(index.n_items)?;
    }
    let owned: Vec<ModalityFeatures<T>> = selected.into_iter().cloned().collect();

    let initial_graphs: Vec<SparseMatrix<T>> = if config.uses_graphs() {
        owned
            .iter()
            .map(|f| initial_graph_cached(&f.matrix, config.knn_k, config.keep_self_loops, cache_dir))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let bipartite = match config.backbone {
        Backbone::Lightgcn => Some(BipartiteAdj::build(index)?),
        Backbone::Mf => None,
    };

    let mut params = ModelParams::init(config, index.n_users, index.n_items, &owned)?;
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.l2,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_config, &params.tensors());
    let mut sampler = TripleSampler::new(index, derive_rng(config.seed, "sampler"))?;
    let n_batches = index.train.len().div_ceil(config.batch_size);

    let mut best_params = params.clone();
    let mut best_adam = adam.clone();
    let mut best_epoch = 0usize;
    let mut best_recall = f64::NEG_INFINITY;
    let mut non_improving = 0usize;
    let mut epoch_losses = Vec::new();
    let mut records = Vec::new();
    let mut abort = None;
    let mut dropped_rows = 0usize;
    let mut epochs_run = 0usize;

    'epochs: for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        let selection = if config.refresh_selection_per_epoch && config.uses_graphs() {
            Some(epoch_selection(config, &params, &owned)?)
        } else {
            None
        };

        let mut step_reports: Vec<LossReport> = Vec::with_capacity(n_batches);
        for batch_no in 0..n_batches {
            let batch = sampler.sample(config.batch_size);
            let step = run_step(
                config,
                &mut params,
                &mut adam,
                &owned,
                &initial_graphs,
                bipartite.as_ref(),
                selection.as_deref(),
                &batch,
            );
            match step {
                Ok((report, dropped)) => {
                    dropped_rows += dropped;
                    step_reports.push(report);
                }
                Err(e) if e.exit_code() == 4 => {
                    abort = Some(AbortInfo {
                        epoch,
                        batch: batch_no,
                        message: e.to_string(),
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        epoch_losses.push(mean_report(&step_reports, config.effective_beta()));

        let report = validation_report(config, &params, &owned, &initial_graphs, bipartite.as_ref(), index, protocol)?;
        records.push(MetricRecord::from_report(
            &report,
            EpochTag::Index(epoch),
            config_hash,
            config.seed,
        ));

        if report.recall > best_recall {
            best_recall = report.recall;
            best_epoch = epoch;
            best_params = params.clone();
            best_adam = adam.clone();
            non_improving = 0;
        } else {
            non_improving += 1;
            if non_improving >= config.patience {
                break;
            }
        }
    }

    // Final test metrics from the best checkpoint.
    let final_test = {
        let inputs = eval_inputs(config, &best_params, &owned, &initial_graphs, bipartite.as_ref());
        let (users, items) = crate::model::forward::inference_embeddings(&inputs)?;
        evaluate(&users, &items, index, SplitTag::Test, protocol, config.eval_k)
    };
    records.push(MetricRecord::from_report(
        &final_test,
        EpochTag::final_tag(),
        config_hash,
        config.seed,
    ));

    Ok(TrainOutcome {
        best_params,
        best_adam,
        best_epoch,
        best_valid_recall: best_recall.max(0.0),
        epochs_run,
        epoch_losses,
        records,
        final_test,
        abort,
        dropped_rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_step<T: Scalar>(
    config: &TrainerConfig,
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    features: &[ModalityFeatures<T>],
    initial_graphs: &[SparseMatrix<T>],
    bipartite: Option<&BipartiteAdj<T>>,
    selection: Option<&[Arc<CsrStructure>]>,
    batch: &crate::dataset::TripleBatch,
) -> Result<(LossReport, usize)> {
    let mut tape = Tape::new();
    let inputs = ForwardInputs {
        params,
        features,
        initial_graphs,
        bipartite,
        config,
        selection_override: selection,
    };
    let step = build_training_step(&mut tape, &inputs, batch)?;
    let total = tape.scalar(step.total);
    if !total.is_finite() {
        return Err(Error::NonFinite { context: "training loss" });
    }
    let bpr = tape.scalar(step.bpr).into_f64();
    let contrastive = step
        .contrastive
        .map(|c| tape.scalar(c).into_f64())
        .unwrap_or(0.0);

    let grads_out = tape.backward(step.total)?;
    let mut grads = Vec::with_capacity(step.forward.params.len());
    let mut grad_norms = Vec::with_capacity(step.forward.params.len());
    for (name, node) in &step.forward.params {
        let value = tape.value(*node);
        let g = grads_out.get_or_zeros(*node, value.rows(), value.cols());
        grad_norms.push((name.clone(), g.frobenius_norm().into_f64()));
        grads.push(g);
    }
    let dropped = step.forward.dropped_rows;
    drop(tape);

    let mut named = params.tensors_mut();
    adam.step(&mut named, &grads)?;

    let beta = config.effective_beta();
    Ok((
        LossReport {
            bpr,
            contrastive,
            total: total.into_f64(),
            beta,
            grad_norms,
        },
        dropped,
    ))
}

fn epoch_selection<T: Scalar>(
    config: &TrainerConfig,
    params: &ModelParams<T>,
    features: &[ModalityFeatures<T>],
) -> Result<Vec<Arc<CsrStructure>>> {
    features
        .iter()
        .zip(params.transforms.iter())
        .map(|(f, t)| {
            let mut tape = Tape::new();
            let feats = tape.leaf(f.matrix.clone());
            let w = tape.leaf(t.weight.clone());
            let b = tape.leaf(t.bias.clone());
            let transformed = transform_features(&mut tape, feats, w, b)?;
            let (entries, _) = select_topk_edges(
                tape.value(transformed),
                config.knn_k,
                config.keep_self_loops,
                true,
            )?;
            let n = f.matrix.rows();
            let mut indptr = vec![0usize];
            let mut indices = Vec::new();
            for row in &entries {
                indices.extend(row.iter().map(|&(c, _)| c));
                indptr.push(indices.len());
            }
            Ok(Arc::new(CsrStructure::new(n, n, indptr, indices)?))
        })
        .collect()
}

fn eval_inputs<'a, T: Scalar>(
    config: &'a TrainerConfig,
    params: &'a ModelParams<T>,
    features: &'a [ModalityFeatures<T>],
    initial_graphs: &'a [SparseMatrix<T>],
    bipartite: Option<&'a BipartiteAdj<T>>,
) -> ForwardInputs<'a, T> {
    ForwardInputs {
        params,
        features,
        initial_graphs,
        bipartite,
        config,
        selection_override: None,
    }
}

fn validation_report<T: Scalar>(
    config: &TrainerConfig,
    params: &ModelParams<T>,
    features: &[ModalityFeatures<T>],
    initial_graphs: &[SparseMatrix<T>],
    bipartite: Option<&BipartiteAdj<T>>,
    index: &SplitIndex,
    protocol: SplitMode,
) -> Result<MetricReport> {
    let inputs = eval_inputs(config, params, features, initial_graphs, bipartite);
    let (users, items) = crate::model::forward::inference_embeddings(&inputs)?;
    Ok(evaluate(&users, &items, index, SplitTag::Valid, protocol, 20))
}

fn mean_report(reports: &[LossReport], beta: f64) -> LossReport {
    if reports.is_empty() {
        return LossReport {
            bpr: 0.0,
            contrastive: 0.0,
            total: 0.0,
            beta,
            grad_norms: Vec::new(),
        };
    }
    let n = reports.len() as f64;
    let mut grad_norms: Vec<(String, f64)> = reports[0]
        .grad_norms
        .iter()
        .map(|(name, _)| (name.clone(), 0.0))
        .collect();
    for r in reports {
        for (acc, (_, v)) in grad_norms.iter_mut().zip(r.grad_norms.iter()) {
            acc.1 += v / n;
        }
    }
    LossReport {
        bpr: reports.iter().map(|r| r.bpr).sum::<f64>() / n,
        contrastive: reports.iter().map(|r| r.contrastive).sum::<f64>() / n,
        total: reports.iter().map(|r| r.total).sum::<f64>() / n,
        beta,
        grad_norms,
    }
}

/// Rebuilds evaluation-time embeddings for a stored checkpoint.
pub fn checkpoint_embeddings<T: Scalar>(
    config: &TrainerConfig,
    params: &ModelParams<T>,
    features: &[ModalityFeatures<T>],
    index: &SplitIndex,
    cache_dir: Option<&Path>,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let selected = select_features(config, features)?;
    let owned: Vec<ModalityFeatures<T>> = selected.into_iter().cloned().collect();
    let initial_graphs: Vec<SparseMatrix<T>> = if config.uses_graphs() {
        owned
            .iter()
            .map(|f| initial_graph_cached(&f.matrix, config.knn_k, config.keep_self_loops, cache_dir))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let bipartite = match config.backbone {
        Backbone::Lightgcn => Some(BipartiteAdj::build(index)?),
        Backbone::Mf => None,
    };
    let inputs = eval_inputs(config, params, &owned, &initial_graphs, bipartite.as_ref());
    crate::model::forward::inference_embeddings(&inputs)
}
