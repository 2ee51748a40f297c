//! A trained student or baseline behind one interface, with JSON persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::LogRegModel;
use crate::dataset::Matrix;
use crate::error::{Error, Result};
use crate::gbdt::BoostedModel;
use crate::mlp::MlpModel;
use crate::teacher::ProbabilisticPredictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentKind {
    Gbdt,
    Mlp,
    Logreg,
}

impl std::str::FromStr for StudentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbdt" => Ok(Self::Gbdt),
            "mlp" => Ok(Self::Mlp),
            "logreg" => Ok(Self::Logreg),
            other => Err(Error::Config(format!("unknown student kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gbdt(BoostedModel),
    Mlp(MlpModel),
    LogReg(LogRegModel),
}

impl Model {
    pub fn kind(&self) -> StudentKind {
        match self {
            Self::Gbdt(_) => StudentKind::Gbdt,
            Self::Mlp(_) => StudentKind::Mlp,
            Self::LogReg(_) => StudentKind::Logreg,
        }
    }

    pub fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Gbdt(m) => m.predict_proba(rows),
            Self::Mlp(m) => m.predict_proba(rows),
            Self::LogReg(m) => m.predict_proba(rows),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Self::Gbdt(m) => m.to_json(),
            Self::Mlp(m) => m.to_json(),
            Self::LogReg(m) => m.to_json(),
        }
    }

    /// Size in bytes of the serialized model, as written by [`Model::save`].
    pub fn serialized_bytes(&self) -> Result<usize> {
        Ok(self.to_json()?.len())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
        }
        let header: Header = serde_json::from_str(text)?;
        match header.format.as_str() {
            crate::gbdt::FORMAT => Ok(Self::Gbdt(BoostedModel::from_json(text)?)),
            crate::mlp::FORMAT => Ok(Self::Mlp(MlpModel::from_json(text)?)),
            crate::baselines::FORMAT => Ok(Self::LogReg(LogRegModel::from_json(text)?)),
            other => Err(Error::Model(format!("unknown model format {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl ProbabilisticPredictor for Model {
    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        Model::predict_proba(self, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::gbdt::{fit_hard, GbdtConfig};

    #[test]
    fn save_load_dispatches_on_format() {
        let ds = synth_generate(&SynthConfig { n: 100, d: 3, ..Default::default() }).unwrap();
        let m = Model::Gbdt(fit_hard(&ds, &GbdtConfig { n_trees: 5, ..Default::default() }).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, m.serialized_bytes().unwrap());
        let back = Model::load(&path).unwrap();
        assert_eq!(back.kind(), StudentKind::Gbdt);
        assert_eq!(back.predict_proba(&ds.features).unwrap(), m.predict_proba(&ds.features).unwrap());
        assert!(matches!(Model::load(&dir.path().join("none.json")), Err(Error::MissingArtifact(_))));
        assert!(Model::from_json(r#"{"format":"other"}"#).is_err());
    }
}
