//! Synthetic ground-truth models, datasets sampled from them, and the
//! far-from-truth initializations training starts from.  Everything is a
//! pure function of the configuration and an explicit RNG, so a config
//! plus seed pins the whole experiment.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use online_em::dirichlet::DirichletModel;
use online_em::expfam::{ExpFamSpec, ExpectationParams};
use online_em::hmm::HmmModel;
use online_em::kalman::{KalmanModel, UpdateMask};
use online_em::mixture::MixtureModel;
use online_em::model_io::ModelFile;

use crate::config::{Emission, ExperimentConfig, Family};
use crate::data::Dataset;
use crate::{HarnessError, Result};

use rand::SeedableRng;

/// Derives a stream-specific RNG from the master seed, keeping the truth
/// model, the dataset, the holdout, and each repeat's initialization on
/// independent streams.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids for [`rng_for`].
pub mod streams {
    pub const TRUTH: u64 = 1;
    pub const DATA: u64 = 2;
    pub const HOLDOUT: u64 = 3;
    /// Repeat `r` initializes from stream `INIT_BASE + r`.
    pub const INIT_BASE: u64 = 1000;
    /// Repeat `r`'s training-time randomness (shuffling, pseudo-samples).
    pub const TRAIN_BASE: u64 = 2000;
}

fn emission_spec(emission: Emission, dim: usize) -> Result<ExpFamSpec> {
    Ok(match emission {
        Emission::Gaussian => ExpFamSpec::gaussian(dim)?,
        Emission::Poisson => ExpFamSpec::poisson(),
    })
}

fn standard_vector<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(
        dim,
        (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
    )
}

/// A well-conditioned random SPD matrix: `0.3 I + W Wᵀ / dim`.
fn random_spd<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let w = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    DMatrix::identity(dim, dim) * 0.3 + (&w * w.transpose()) / dim as f64
}

fn random_simplex<R: Rng + ?Sized>(dim: usize, floor: f64, rng: &mut R) -> DVector<f64> {
    let mut v = DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(floor..1.0)));
    let total = v.sum();
    v /= total;
    v
}

fn random_emissions<R: Rng + ?Sized>(
    spec: &ExpFamSpec,
    count: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Vec<ExpectationParams>> {
    let mut components = Vec::with_capacity(count);
    for _ in 0..count {
        match spec {
            ExpFamSpec::Gaussian { dim } => {
                let mean = standard_vector(*dim, separation, rng);
                let cov = random_spd(*dim, rng);
                components.push(spec.gaussian_from_mean_cov(&mean, &cov)?);
            }
            ExpFamSpec::Poisson => {
                let rate = rng.random_range(0.5..4.0) * separation;
                components.push(ExpectationParams(DVector::from_element(1, rate)));
            }
        }
    }
    Ok(components)
}

/// Random mixture with components separated enough to be identifiable.
pub fn mixture_truth<R: Rng + ?Sized>(
    k: usize,
    dim: usize,
    emission: Emission,
    rng: &mut R,
) -> Result<MixtureModel> {
    let spec = emission_spec(emission, dim)?;
    let weights = random_simplex(k, 0.2, rng);
    let components = random_emissions(&spec, k, 2.5, rng)?;
    Ok(MixtureModel::new(spec, weights, components)?)
}

/// Random absorbing HMM: every transient row keeps some self/cross mass
/// and between 5% and 15% absorption probability, which guarantees
/// absorption is reachable from every state.
pub fn hmm_truth<R: Rng + ?Sized>(
    transient: usize,
    dim: usize,
    emission: Emission,
    rng: &mut R,
) -> Result<HmmModel> {
    let k = transient + 1;
    let spec = emission_spec(emission, dim)?;
    let mut initial = DVector::zeros(k);
    let start = random_simplex(transient, 0.15, rng);
    initial.rows_mut(0, transient).copy_from(&start);

    let mut transitions = DMatrix::zeros(k, k);
    for h in 0..transient {
        let absorb = rng.random_range(0.05..0.15);
        let across = random_simplex(transient, 0.1, rng) * (1.0 - absorb);
        for j in 0..transient {
            transitions[(h, j)] = across[j];
        }
        transitions[(h, transient)] = absorb;
    }
    transitions[(transient, transient)] = 1.0;

    let emissions = random_emissions(&spec, transient, 2.5, rng)?;
    Ok(HmmModel::new(
        spec,
        initial,
        transitions,
        emissions,
        transient,
    )?)
}

/// Random stable state-space model: the spectral radius of the dynamics is
/// scaled to 0.9 so sampled sequences stay bounded at any length.
pub fn kalman_truth<R: Rng + ?Sized>(
    hidden_dim: usize,
    obs_dim: usize,
    rng: &mut R,
) -> Result<KalmanModel> {
    let mut a = DMatrix::from_fn(hidden_dim, hidden_dim, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    // Crude spectral-radius estimate by power iteration, then rescale.
    let mut x = DVector::from_element(hidden_dim, 1.0).normalize();
    for _ in 0..100 {
        x = (&a * x).normalize();
    }
    let rho = (&a * &x).norm();
    a *= 0.9 / rho.max(1e-6);

    let c = DMatrix::from_fn(obs_dim, hidden_dim, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    }) / (hidden_dim as f64).sqrt();
    Ok(KalmanModel::new(
        standard_vector(hidden_dim, 1.0, rng),
        random_spd(hidden_dim, rng),
        a,
        c,
        random_spd(hidden_dim, rng) * 0.3,
        random_spd(obs_dim, rng) * 0.5,
    )?)
}

/// Random Dirichlet parameters spread over [0.2, 2.0].
pub fn dirichlet_truth<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DirichletModel> {
    let alpha = DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(0.2..2.0)));
    Ok(DirichletModel::new(alpha)?)
}

/// Builds the configured family's ground-truth model from the master seed.
pub fn make_truth(config: &ExperimentConfig) -> Result<ModelFile> {
    let mut rng = rng_for(config.seed, streams::TRUTH);
    let shape = &config.shape;
    Ok(match config.family {
        Family::Mixture => ModelFile::from_mixture(&mixture_truth(
            shape.k,
            shape.dim,
            shape.emission,
            &mut rng,
        )?),
        Family::Hmm => ModelFile::from_hmm(&hmm_truth(
            shape.transient,
            shape.dim,
            shape.emission,
            &mut rng,
        )?),
        Family::Kalman => {
            ModelFile::from_kalman(&kalman_truth(shape.hidden_dim, shape.obs_dim, &mut rng)?)
        }
        Family::Dirichlet => ModelFile::from_dirichlet(&dirichlet_truth(shape.dim, &mut rng)?),
    })
}

/// Samples `count` items from a truth model in the family's layout.
pub fn sample_dataset(
    config: &ExperimentConfig,
    truth: &ModelFile,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    Ok(match config.family {
        Family::Mixture => Dataset::Observations(truth.as_mixture()?.sample(count, rng)?),
        Family::Hmm => Dataset::Sequences(truth.as_hmm()?.sample_sequences(
            count,
            rng,
            config.data.max_len,
        )?),
        Family::Kalman => Dataset::Sequences(truth.as_kalman()?.sample_sequences(
            count,
            config.shape.t_len,
            rng,
        )?),
        Family::Dirichlet => Dataset::Counts(truth.as_dirichlet()?.sample_documents(
            count,
            config.data.words_per_doc,
            rng,
        )?),
    })
}

/// Truth model, training data, and optional holdout for a synthetic config.
pub fn generate(config: &ExperimentConfig) -> Result<(ModelFile, Dataset, Option<Dataset>)> {
    let truth = make_truth(config)?;
    let mut data_rng = rng_for(config.seed, streams::DATA);
    let train = sample_dataset(config, &truth, config.data.count, &mut data_rng)?;
    let holdout = if config.data.holdout > 0 {
        let mut holdout_rng = rng_for(config.seed, streams::HOLDOUT);
        Some(sample_dataset(
            config,
            &truth,
            config.data.holdout,
            &mut holdout_rng,
        )?)
    } else {
        None
    };
    Ok((truth, train, holdout))
}

/// Initialization for a mixture repeat: data moments plus seeded noise.
pub fn init_mixture(
    config: &ExperimentConfig,
    train: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<MixtureModel> {
    let observations = match train {
        Dataset::Observations(v) => v,
        _ => {
            return Err(HarnessError::config(
                "mixture training needs observation data",
            ))
        }
    };
    let spec = emission_spec(config.shape.emission, config.shape.dim)?;
    Ok(MixtureModel::init_from_data(
        spec,
        config.shape.k,
        observations,
        rng,
    )?)
}

/// Initialization for an HMM repeat: uniform start over transient states,
/// uniform rows with 10% absorption, emissions from pooled data moments
/// perturbed per state.
pub fn init_hmm(
    config: &ExperimentConfig,
    train: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<HmmModel> {
    let sequences = match train {
        Dataset::Sequences(v) => v,
        _ => return Err(HarnessError::config("hmm training needs sequence data")),
    };
    let transient = config.shape.transient;
    let k = transient + 1;
    let spec = emission_spec(config.shape.emission, config.shape.dim)?;

    let mut initial = DVector::zeros(k);
    for h in 0..transient {
        initial[h] = 1.0 / transient as f64;
    }
    let mut transitions = DMatrix::zeros(k, k);
    let absorb = 0.1;
    for h in 0..transient {
        for j in 0..transient {
            transitions[(h, j)] = (1.0 - absorb) / transient as f64;
        }
        transitions[(h, transient)] = absorb;
    }
    transitions[(transient, transient)] = 1.0;

    let pooled: Vec<DVector<f64>> = sequences.iter().flatten().cloned().collect();
    let moments = MixtureModel::init_from_data(spec.clone(), transient, &pooled, rng)?;
    let emissions = moments.components().to_vec();
    Ok(HmmModel::new(
        spec,
        initial,
        transitions,
        emissions,
        transient,
    )?)
}

/// Initialization for a Kalman repeat.  Noise covariances start at the
/// truth (the known-noise experiment) when a truth file is given,
/// otherwise at identity; the remaining parameters start generic: damped
/// identity dynamics, random observation map, zero initial mean.
pub fn init_kalman(
    config: &ExperimentConfig,
    truth: Option<&KalmanModel>,
    rng: &mut ChaCha8Rng,
) -> Result<KalmanModel> {
    let n = config.shape.hidden_dim;
    let d = config.shape.obs_dim;
    let (qn, rn) = match truth {
        Some(model) => (model.qn().clone(), model.rn().clone()),
        None => (DMatrix::identity(n, n), DMatrix::identity(d, d)),
    };
    let c = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal)) / (n as f64).sqrt();
    Ok(KalmanModel::new(
        DVector::zeros(n),
        DMatrix::identity(n, n),
        DMatrix::identity(n, n) * 0.5,
        c,
        qn,
        rn,
    )?)
}

/// The known-noise update mask when the truth is available, the full mask
/// otherwise.
pub fn kalman_mask(truth: Option<&KalmanModel>) -> UpdateMask {
    match truth {
        Some(_) => UpdateMask::known_noise(),
        None => UpdateMask::all(),
    }
}

/// Initialization for a Dirichlet repeat: the uniform parameter vector,
/// jittered so repeats differ.
pub fn init_dirichlet(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<DirichletModel> {
    let alpha = DVector::from_iterator(
        config.shape.dim,
        (0..config.shape.dim).map(|_| rng.random_range(0.5..1.5)),
    );
    Ok(DirichletModel::new(alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;

    fn base_config(family: Family) -> ExperimentConfig {
        let text = format!("family = \"{}\"\nmode = \"online\"\n", family.name());
        let mut config = ExperimentConfig::from_toml_str(&text).unwrap();
        config.data.count = 30;
        config.seed = 5;
        if family == Family::Dirichlet {
            config.shape.dim = 4;
        }
        config
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        for family in [
            Family::Mixture,
            Family::Hmm,
            Family::Kalman,
            Family::Dirichlet,
        ] {
            let config = base_config(family);
            let (truth_a, train_a, _) = generate(&config).unwrap();
            let (truth_b, train_b, _) = generate(&config).unwrap();
            assert_eq!(truth_a, truth_b);
            assert_eq!(train_a, train_b);

            let mut other = config.clone();
            other.seed = 6;
            let (_, train_c, _) = generate(&other).unwrap();
            assert_ne!(train_a, train_c, "{family:?} data ignores the seed");
        }
    }

    #[test]
    fn generated_shapes_match_the_config() {
        let mut config = base_config(Family::Hmm);
        config.shape.transient = 3;
        config.shape.dim = 4;
        let (truth, train, _) = generate(&config).unwrap();
        let hmm = truth.as_hmm().unwrap();
        assert_eq!(hmm.state_count(), 4);
        assert_eq!(hmm.transient_count(), 3);
        assert_eq!(train.len(), 30);
        assert_eq!(train.dim(), 4);

        let mut config = base_config(Family::Kalman);
        config.shape.hidden_dim = 5;
        config.shape.obs_dim = 10;
        config.shape.t_len = 7;
        let (truth, train, _) = generate(&config).unwrap();
        let model = truth.as_kalman().unwrap();
        assert_eq!(model.state_dim(), 5);
        assert_eq!(model.obs_dim(), 10);
        match &train {
            Dataset::Sequences(seqs) => assert!(seqs.iter().all(|s| s.len() == 7)),
            _ => panic!("wrong layout"),
        }
        assert_eq!(train.dim(), 10);
    }

    #[test]
    fn holdout_is_generated_when_requested() {
        let mut config = base_config(Family::Dirichlet);
        config.data.holdout = 12;
        let (_, train, holdout) = generate(&config).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(holdout.unwrap().len(), 12);
        let _ = Mode::Online;
    }

    #[test]
    fn initializations_differ_between_repeats_but_are_reproducible() {
        let config = base_config(Family::Mixture);
        let (_, train, _) = generate(&config).unwrap();
        let init =
            |stream: u64| init_mixture(&config, &train, &mut rng_for(config.seed, stream)).unwrap();
        let a = init(streams::INIT_BASE);
        let b = init(streams::INIT_BASE);
        let c = init(streams::INIT_BASE + 1);
        assert_eq!(a.components()[0].0, b.components()[0].0);
        assert_ne!(a.components()[0].0, c.components()[0].0);
    }
}
