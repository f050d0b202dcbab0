//! Executes a configured experiment: loads or generates data, repeats
//! training from fresh initializations, and writes per-repeat logs plus a
//! summary CSV.
//!
//! Modes:
//!
//! * batch — full-data EM iterations (exact M-steps where the family has
//!   them, otherwise online steps at a huge learning rate, which coincide
//!   with batch EM to numerical precision);
//! * online — mini-batch online EM under the decay schedule;
//! * distributed — mixtures only: workers train on disjoint shards and are
//!   merged every sync period by entropic combining or simple averaging.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use online_em::combiner::{combine_mixtures, combine_simple_average, WeightedModels};
use online_em::dirichlet::{CountVector, DirichletModel};
use online_em::hmm::HmmModel;
use online_em::kalman::KalmanModel;
use online_em::mixture::MixtureModel;
use online_em::model_io::ModelFile;
use online_em::schedule::{
    run_online, DecaySchedule, DirichletLearner, KalmanLearner, OnlineLearner, TrainLog,
    TrainRecord,
};

use crate::config::{AlphaRule, CombineStrategy, DataSource, ExperimentConfig, Family, Mode};
use crate::data::{read_dataset, Dataset};
use crate::synth::{self, rng_for, streams};
use crate::{HarnessError, Result};

/// Output locations and the per-repeat final negative log-likelihoods.
#[derive(Debug)]
pub struct RunArtifacts {
    pub log_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub final_nlls: Vec<f64>,
}

/// Training data plus the optional holdout and truth model.
struct Prepared {
    truth: Option<ModelFile>,
    train: Dataset,
    holdout: Option<Dataset>,
}

fn prepare_data(config: &ExperimentConfig) -> Result<Prepared> {
    match config.data.source {
        DataSource::Synthetic => {
            let (truth, train, holdout) = synth::generate(config)?;
            Ok(Prepared {
                truth: Some(truth),
                train,
                holdout,
            })
        }
        DataSource::Csv => {
            let mut train = read_dataset(Path::new(&config.data.path), config.family)?;
            let holdout = if config.data.holdout > 0 {
                Some(train.split_tail(config.data.holdout)?)
            } else {
                None
            };
            Ok(Prepared {
                truth: None,
                train,
                holdout,
            })
        }
    }
}

/// Clones `items` into shuffled mini-batches of `size` (last batch may be
/// short).
fn make_batches<T: Clone>(items: &[T], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let mut indices: Vec<usize> = (0..items.len()).collect();
    indices.shuffle(rng);
    indices
        .chunks(size)
        .map(|chunk| chunk.iter().map(|&i| items[i].clone()).collect())
        .collect()
}

fn observations(dataset: &Dataset) -> Result<&Vec<DVector<f64>>> {
    match dataset {
        Dataset::Observations(v) => Ok(v),
        _ => Err(HarnessError::config("expected observation data")),
    }
}

fn sequences(dataset: &Dataset) -> Result<&Vec<Vec<DVector<f64>>>> {
    match dataset {
        Dataset::Sequences(v) => Ok(v),
        _ => Err(HarnessError::config("expected sequence data")),
    }
}

fn documents(dataset: &Dataset) -> Result<&Vec<CountVector>> {
    match dataset {
        Dataset::Counts(v) => Ok(v),
        _ => Err(HarnessError::config("expected count data")),
    }
}

/// Shared shape of one repeat's result before it is written out.
struct RepeatOutcome {
    csv: String,
    final_nll: f64,
}

/// Batch EM iterations logged in the train-log schema.  `eta` records what
/// drove the step: infinity for an exact M-step, the actual rate for the
/// large-rate online step standing in for one.
fn batch_loop<M>(
    mut model: M,
    iterations: usize,
    eta_label: f64,
    step: impl Fn(&M) -> online_em::Result<M>,
    nll_train: impl Fn(&M) -> online_em::Result<f64>,
    nll_holdout: Option<impl Fn(&M) -> online_em::Result<f64>>,
) -> Result<(M, TrainLog)> {
    let mut log = TrainLog::new();
    for t in 1..=iterations {
        let pre = nll_train(&model)?;
        model = step(&model)?;
        let post = nll_train(&model)?;
        let holdout = match &nll_holdout {
            Some(f) => Some(f(&model)?),
            None => None,
        };
        log.push(TrainRecord {
            t,
            eta: eta_label,
            nll_batch_pre: pre,
            nll_batch_post: post,
            nll_holdout: holdout,
            ms: 0.0,
        })?;
    }
    Ok((model, log))
}

/// Online epochs over shuffled mini-batches, iteration numbers continuing
/// across epochs.
fn online_loop<L: OnlineLearner>(
    learner: &mut L,
    batches: &[L::Batch],
    holdout: Option<&L::Batch>,
    schedule: &DecaySchedule,
    config: &ExperimentConfig,
) -> Result<TrainLog> {
    let mut log = TrainLog::new();
    for epoch in 0..config.epochs {
        let part = run_online(
            learner,
            batches,
            schedule,
            epoch * batches.len() + 1,
            holdout,
            config.online.holdout_every,
            config.online.timing,
        )?;
        log.append(part)?;
    }
    Ok(log)
}

/// The learning rate that stands in for a batch M-step where no exact one
/// exists.
const BATCH_LIMIT_ETA: f64 = 1e12;

fn run_repeat(
    config: &ExperimentConfig,
    prepared: &Prepared,
    repeat: usize,
    threads: usize,
) -> Result<RepeatOutcome> {
    let mut init_rng = rng_for(config.seed, streams::INIT_BASE + repeat as u64);
    let mut train_rng = rng_for(config.seed, streams::TRAIN_BASE + repeat as u64);
    let schedule = config.decay_schedule()?;

    match config.family {
        Family::Mixture => {
            let train = observations(&prepared.train)?;
            let holdout = prepared
                .holdout
                .as_ref()
                .map(|d| observations(d).cloned())
                .transpose()?;
            let mut model = synth::init_mixture(config, &prepared.train, &mut init_rng)?;
            let log = match config.mode {
                Mode::Batch => {
                    let (final_model, log) = batch_loop(
                        model,
                        config.batch.iterations,
                        f64::INFINITY,
                        |m| m.batch_em_step(train),
                        |m| m.nll(train),
                        holdout.as_ref().map(|h| move |m: &MixtureModel| m.nll(h)),
                    )?;
                    model = final_model;
                    log
                }
                Mode::Online => {
                    let batches = make_batches(train, config.minibatch, &mut train_rng);
                    let log =
                        online_loop(&mut model, &batches, holdout.as_ref(), &schedule, config)?;
                    log
                }
                Mode::Distributed => {
                    return run_distributed_repeat(config, prepared, repeat, threads);
                }
            };
            let final_nll = match &holdout {
                Some(h) => model.nll(h)?,
                None => model.nll(train)?,
            };
            Ok(RepeatOutcome {
                csv: log.to_csv(),
                final_nll,
            })
        }
        Family::Hmm => {
            let train = sequences(&prepared.train)?;
            let holdout = prepared
                .holdout
                .as_ref()
                .map(|d| sequences(d).cloned())
                .transpose()?;
            let mut model = synth::init_hmm(config, &prepared.train, &mut init_rng)?;
            let log = match config.mode {
                Mode::Batch => {
                    let (final_model, log) = batch_loop(
                        model,
                        config.batch.iterations,
                        BATCH_LIMIT_ETA,
                        |m| m.online_em_step(train, BATCH_LIMIT_ETA),
                        |m| m.nll(train),
                        holdout.as_ref().map(|h| move |m: &HmmModel| m.nll(h)),
                    )?;
                    model = final_model;
                    log
                }
                Mode::Online => {
                    let batches = make_batches(train, config.minibatch, &mut train_rng);
                    online_loop(&mut model, &batches, holdout.as_ref(), &schedule, config)?
                }
                Mode::Distributed => unreachable!("validated: distributed is mixture-only"),
            };
            let final_nll = match &holdout {
                Some(h) => model.nll(h)?,
                None => model.nll(train)?,
            };
            Ok(RepeatOutcome {
                csv: log.to_csv(),
                final_nll,
            })
        }
        Family::Kalman => {
            let train = sequences(&prepared.train)?;
            let holdout = prepared
                .holdout
                .as_ref()
                .map(|d| sequences(d).cloned())
                .transpose()?;
            let truth = prepared.truth.as_ref().map(|t| t.as_kalman()).transpose()?;
            let model = synth::init_kalman(config, truth.as_ref(), &mut init_rng)?;
            let mask = synth::kalman_mask(truth.as_ref());
            let mut learner = KalmanLearner { model, mask };
            let log = match config.mode {
                Mode::Batch => {
                    let mask = learner.mask;
                    let (final_model, log) = batch_loop(
                        learner.model,
                        config.batch.iterations,
                        BATCH_LIMIT_ETA,
                        |m| m.online_em_step(train, BATCH_LIMIT_ETA, &mask),
                        |m| m.nll(train),
                        holdout.as_ref().map(|h| move |m: &KalmanModel| m.nll(h)),
                    )?;
                    learner.model = final_model;
                    log
                }
                Mode::Online => {
                    let batches = make_batches(train, config.minibatch, &mut train_rng);
                    online_loop(&mut learner, &batches, holdout.as_ref(), &schedule, config)?
                }
                Mode::Distributed => unreachable!("validated: distributed is mixture-only"),
            };
            let final_nll = match &holdout {
                Some(h) => learner.model.nll(h)?,
                None => learner.model.nll(train)?,
            };
            Ok(RepeatOutcome {
                csv: log.to_csv(),
                final_nll,
            })
        }
        Family::Dirichlet => {
            let train = documents(&prepared.train)?;
            let holdout = prepared
                .holdout
                .as_ref()
                .map(|d| documents(d).cloned())
                .transpose()?;
            let model = synth::init_dirichlet(config, &mut init_rng)?;
            let mut learner = DirichletLearner {
                model,
                pseudo_count: config.online.pseudo_count,
                pseudo_words: None,
                rng: rng_for(config.seed, streams::TRAIN_BASE + repeat as u64 + 500),
            };
            let log = match config.mode {
                Mode::Batch => {
                    let (final_model, log) = batch_loop(
                        learner.model,
                        config.batch.iterations,
                        f64::INFINITY,
                        |m| m.batch_em_step(train),
                        |m| m.nll(train),
                        holdout.as_ref().map(|h| move |m: &DirichletModel| m.nll(h)),
                    )?;
                    learner.model = final_model;
                    log
                }
                Mode::Online => {
                    let batches = make_batches(train, config.minibatch, &mut train_rng);
                    online_loop(&mut learner, &batches, holdout.as_ref(), &schedule, config)?
                }
                Mode::Distributed => unreachable!("validated: distributed is mixture-only"),
            };
            let final_nll = match &holdout {
                Some(h) => learner.model.nll(h)?,
                None => learner.model.nll(train)?,
            };
            Ok(RepeatOutcome {
                csv: log.to_csv(),
                final_nll,
            })
        }
    }
}

/// Runs one round's workers, each from the current combined model over its
/// own batches, and returns the models in worker-index order.  With more
/// than one thread the workers run concurrently; the result is the same
/// either way because each worker's step sequence is deterministic and the
/// models are collected by index, not completion order.
fn run_round_workers(
    combined: &MixtureModel,
    round_batches: &[Vec<Vec<DVector<f64>>>],
    schedule: &DecaySchedule,
    start_t: usize,
    threads: usize,
) -> Result<Vec<MixtureModel>> {
    let work = |batches: &Vec<Vec<DVector<f64>>>| -> Result<MixtureModel> {
        let mut model = combined.clone();
        run_online(&mut model, batches, schedule, start_t, None, 0, false)?;
        Ok(model)
    };
    if threads <= 1 {
        return round_batches.iter().map(work).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = round_batches
            .iter()
            .map(|batches| scope.spawn(move || work(batches)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// One distributed repeat: equal shards, synchronized rounds, a combine
/// after every round, one pass over the data.  The per-round CSV carries a
/// `method` column so entropic and simple runs can be plotted together.
fn run_distributed_repeat(
    config: &ExperimentConfig,
    prepared: &Prepared,
    repeat: usize,
    threads: usize,
) -> Result<RepeatOutcome> {
    let mut init_rng = rng_for(config.seed, streams::INIT_BASE + repeat as u64);
    let mut train_rng = rng_for(config.seed, streams::TRAIN_BASE + repeat as u64);
    let schedule = config.decay_schedule()?;
    let dist = &config.distributed;

    let train = observations(&prepared.train)?;
    let holdout = prepared
        .holdout
        .as_ref()
        .map(|d| observations(d).cloned())
        .transpose()?;

    // Equal contiguous shards after one deterministic shuffle; the
    // remainder observations are dropped so every worker sees the same
    // amount of data.
    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut train_rng);
    let shard_len = train.len() / dist.workers;
    if shard_len == 0 {
        return Err(HarnessError::config(format!(
            "{} observations cannot feed {} workers",
            train.len(),
            dist.workers
        )));
    }
    let shards: Vec<Vec<DVector<f64>>> = (0..dist.workers)
        .map(|w| {
            indices[w * shard_len..(w + 1) * shard_len]
                .iter()
                .map(|&i| train[i].clone())
                .collect()
        })
        .collect();

    // Every machine starts from the same initialization.
    let mut combined = synth::init_mixture(config, &prepared.train, &mut init_rng)?;
    let rounds = shard_len.div_ceil(dist.sync_period);
    let mut csv = String::from("round,t,method,nll\n");
    let mut steps_done = 0usize;

    for round in 0..rounds {
        let lo = round * dist.sync_period;
        let hi = ((round + 1) * dist.sync_period).min(shard_len);

        let mut round_batches: Vec<Vec<Vec<DVector<f64>>>> = Vec::with_capacity(dist.workers);
        for shard in &shards {
            let slice = &shard[lo..hi];
            round_batches.push(slice.chunks(config.minibatch).map(|c| c.to_vec()).collect());
        }
        let steps_this_round = round_batches[0].len();

        let worker_models = run_round_workers(
            &combined,
            &round_batches,
            &schedule,
            steps_done + 1,
            threads,
        )?;
        steps_done += steps_this_round;

        let alphas: Vec<f64> = match dist.alpha_rule {
            AlphaRule::ShardSize => vec![(hi - lo) as f64; dist.workers],
            AlphaRule::Uniform => vec![1.0; dist.workers],
        };
        let weighted = WeightedModels::new(&worker_models, &alphas)?;
        combined = match dist.strategy {
            CombineStrategy::Entropic => combine_mixtures(&weighted)?,
            CombineStrategy::Simple => combine_simple_average(&weighted)?,
        };

        let nll = match &holdout {
            Some(h) => combined.nll(h)?,
            None => combined.nll(train)?,
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            round + 1,
            steps_done,
            dist.strategy.name(),
            nll
        ));
    }

    let final_nll = match &holdout {
        Some(h) => combined.nll(h)?,
        None => combined.nll(train)?,
    };
    Ok(RepeatOutcome { csv, final_nll })
}

/// Runs all repeats of the configured experiment into `out_dir`.
/// `threads` only affects distributed mode, and only its wall-clock time.
pub fn run(config: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<RunArtifacts> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::io(format!("creating {}: {e}", out_dir.display())))?;
    let prepared = prepare_data(config)?;

    let mut log_paths = Vec::with_capacity(config.repeats);
    let mut final_nlls = Vec::with_capacity(config.repeats);
    for repeat in 0..config.repeats {
        let outcome = run_repeat(config, &prepared, repeat, threads)?;
        let name = match config.mode {
            Mode::Distributed => format!("rounds_r{repeat:02}.csv"),
            _ => format!("train_r{repeat:02}.csv"),
        };
        let path = out_dir.join(name);
        std::fs::write(&path, &outcome.csv)
            .map_err(|e| HarnessError::io(format!("writing {}: {e}", path.display())))?;
        log_paths.push(path);
        final_nlls.push(outcome.final_nll);
    }

    let mean = final_nlls.iter().sum::<f64>() / final_nlls.len() as f64;
    let min = final_nlls.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = final_nlls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let summary = format!(
        "repeats,final_nll_mean,final_nll_min,final_nll_max\n{},{mean},{min},{max}\n",
        config.repeats
    );
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary)
        .map_err(|e| HarnessError::io(format!("writing {}: {e}", summary_path.display())))?;

    Ok(RunArtifacts {
        log_paths,
        summary_path,
        final_nlls,
    })
}

/// Writes the synthetic dataset and ground-truth model for a config.
pub fn generate_files(config: &ExperimentConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if config.data.source != DataSource::Synthetic {
        return Err(HarnessError::config(
            "generate needs data.source = \"synthetic\"",
        ));
    }
    config.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::io(format!("creating {}: {e}", out_dir.display())))?;
    let (truth, train, _) = synth::generate(config)?;
    let data_path = out_dir.join("dataset.csv");
    crate::data::write_dataset(&data_path, &train)?;
    let truth_path = out_dir.join("truth.json");
    let json = serde_json::to_string_pretty(&truth)
        .map_err(|e| HarnessError::io(format!("encoding truth model: {e}")))?;
    std::fs::write(&truth_path, json)
        .map_err(|e| HarnessError::io(format!("writing {}: {e}", truth_path.display())))?;
    Ok((data_path, truth_path))
}
