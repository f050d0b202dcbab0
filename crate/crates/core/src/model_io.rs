//! Serde-friendly snapshots of every model family.
//!
//! The snapshot types hold plain vectors (matrices flattened row-major) so
//! they serialize cleanly to JSON or TOML.  Deserialized snapshots go back
//! through the models' validating constructors, so a hand-edited or
//! corrupted file is rejected with the same errors as any other invalid
//! parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dirichlet::DirichletModel;
use crate::error::{EmError, Result};
use crate::expfam::{ExpFamSpec, ExpectationParams};
use crate::hmm::HmmModel;
use crate::kalman::KalmanModel;
use crate::mixture::MixtureModel;

/// Emission/observation family of a mixture or HMM snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FamilyData {
    Gaussian { dim: usize },
    Poisson,
}

impl FamilyData {
    fn to_spec(&self) -> Result<ExpFamSpec> {
        match self {
            FamilyData::Gaussian { dim } => ExpFamSpec::gaussian(*dim),
            FamilyData::Poisson => Ok(ExpFamSpec::poisson()),
        }
    }

    fn from_spec(spec: &ExpFamSpec) -> Self {
        match spec {
            ExpFamSpec::Gaussian { dim } => FamilyData::Gaussian { dim: *dim },
            ExpFamSpec::Poisson => FamilyData::Poisson,
        }
    }
}

/// A dense matrix flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixData {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(EmError::invalid_argument(format!(
                "matrix data holds {} entries for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Snapshot of a [`MixtureModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureData {
    pub family: FamilyData,
    pub weights: Vec<f64>,
    /// Per-component expectation parameters (Gaussian: mean followed by the
    /// row-major second-moment matrix; Poisson: the rate).
    pub components: Vec<Vec<f64>>,
}

impl MixtureData {
    pub fn from_model(model: &MixtureModel) -> Self {
        MixtureData {
            family: FamilyData::from_spec(model.spec()),
            weights: model.weights().iter().cloned().collect(),
            components: model
                .components()
                .iter()
                .map(|mu| mu.0.iter().cloned().collect())
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<MixtureModel> {
        MixtureModel::new(
            self.family.to_spec()?,
            DVector::from_column_slice(&self.weights),
            self.components
                .iter()
                .map(|c| ExpectationParams(DVector::from_column_slice(c)))
                .collect(),
        )
    }
}

/// Snapshot of an [`HmmModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmData {
    pub family: FamilyData,
    pub initial: Vec<f64>,
    pub transitions: MatrixData,
    /// Expectation parameters of the transient states' emissions.
    pub emissions: Vec<Vec<f64>>,
    pub transient_count: usize,
}

impl HmmData {
    pub fn from_model(model: &HmmModel) -> Self {
        HmmData {
            family: FamilyData::from_spec(model.spec()),
            initial: model.initial().iter().cloned().collect(),
            transitions: MatrixData::from_matrix(model.transitions()),
            emissions: model
                .emissions()
                .iter()
                .map(|mu| mu.0.iter().cloned().collect())
                .collect(),
            transient_count: model.transient_count(),
        }
    }

    pub fn to_model(&self) -> Result<HmmModel> {
        HmmModel::new(
            self.family.to_spec()?,
            DVector::from_column_slice(&self.initial),
            self.transitions.to_matrix()?,
            self.emissions
                .iter()
                .map(|c| ExpectationParams(DVector::from_column_slice(c)))
                .collect(),
            self.transient_count,
        )
    }
}

/// Snapshot of a [`KalmanModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanData {
    pub pi1: Vec<f64>,
    pub v: MatrixData,
    pub a: MatrixData,
    pub c: MatrixData,
    pub qn: MatrixData,
    pub rn: MatrixData,
}

impl KalmanData {
    pub fn from_model(model: &KalmanModel) -> Self {
        KalmanData {
            pi1: model.pi1().iter().cloned().collect(),
            v: MatrixData::from_matrix(model.v()),
            a: MatrixData::from_matrix(model.a()),
            c: MatrixData::from_matrix(model.c()),
            qn: MatrixData::from_matrix(model.qn()),
            rn: MatrixData::from_matrix(model.rn()),
        }
    }

    pub fn to_model(&self) -> Result<KalmanModel> {
        KalmanModel::new(
            DVector::from_column_slice(&self.pi1),
            self.v.to_matrix()?,
            self.a.to_matrix()?,
            self.c.to_matrix()?,
            self.qn.to_matrix()?,
            self.rn.to_matrix()?,
        )
    }
}

/// Snapshot of a [`DirichletModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletData {
    pub alpha: Vec<f64>,
}

impl DirichletData {
    pub fn from_model(model: &DirichletModel) -> Self {
        DirichletData {
            alpha: model.alpha().iter().cloned().collect(),
        }
    }

    pub fn to_model(&self) -> Result<DirichletModel> {
        DirichletModel::new(DVector::from_column_slice(&self.alpha))
    }
}

/// A model of any family, tagged by `kind` for dispatch in files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Mixture(MixtureData),
    Hmm(HmmData),
    Kalman(KalmanData),
    Dirichlet(DirichletData),
}

impl ModelFile {
    pub fn from_mixture(model: &MixtureModel) -> Self {
        ModelFile::Mixture(MixtureData::from_model(model))
    }

    pub fn from_hmm(model: &HmmModel) -> Self {
        ModelFile::Hmm(HmmData::from_model(model))
    }

    pub fn from_kalman(model: &KalmanModel) -> Self {
        ModelFile::Kalman(KalmanData::from_model(model))
    }

    pub fn from_dirichlet(model: &DirichletModel) -> Self {
        ModelFile::Dirichlet(DirichletData::from_model(model))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Mixture(_) => "mixture",
            ModelFile::Hmm(_) => "hmm",
            ModelFile::Kalman(_) => "kalman",
            ModelFile::Dirichlet(_) => "dirichlet",
        }
    }

    pub fn as_mixture(&self) -> Result<MixtureModel> {
        match self {
            ModelFile::Mixture(data) => data.to_model(),
            other => Err(wrong_kind("mixture", other)),
        }
    }

    pub fn as_hmm(&self) -> Result<HmmModel> {
        match self {
            ModelFile::Hmm(data) => data.to_model(),
            other => Err(wrong_kind("hmm", other)),
        }
    }

    pub fn as_kalman(&self) -> Result<KalmanModel> {
        match self {
            ModelFile::Kalman(data) => data.to_model(),
            other => Err(wrong_kind("kalman", other)),
        }
    }

    pub fn as_dirichlet(&self) -> Result<DirichletModel> {
        match self {
            ModelFile::Dirichlet(data) => data.to_model(),
            other => Err(wrong_kind("dirichlet", other)),
        }
    }
}

fn wrong_kind(wanted: &str, got: &ModelFile) -> EmError {
    EmError::invalid_argument(format!("expected a {wanted} model, found {}", got.kind()))
}
