//! JSON result document written by `test` and read back by `plot`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SurvivalDataset;
use crate::estimate::{EqType, EstMethod};
use crate::gof::{GofTestResult, Process, TestType};

/// Marker identifying a result document.
pub const RESULT_CLASS: [&str; 2] = ["afttest", "htest"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("Must be afttest class")]
    NotAResult,
    #[error("result document is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A stored process: an `n × n` matrix (rows are anchors, columns are time
/// points) or an `n`-vector over anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProcessArray {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

impl ProcessArray {
    pub fn from_process(p: &Process) -> Self {
        if p.cols == 1 {
            ProcessArray::Vector(p.values.clone())
        } else {
            ProcessArray::Matrix(p.values.chunks(p.cols).map(<[f64]>::to_vec).collect())
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ProcessArray::Matrix(m) => (m.len(), m.first().map_or(0, Vec::len)),
            ProcessArray::Vector(v) => (v.len(), 1),
        }
    }

    pub fn is_rectangular(&self) -> bool {
        match self {
            ProcessArray::Matrix(m) => m.iter().all(|r| r.len() == m[0].len()),
            ProcessArray::Vector(_) => true,
        }
    }

    /// Row `j` of a matrix; for a vector, the whole vector.
    pub fn row(&self, j: usize) -> &[f64] {
        match self {
            ProcessArray::Matrix(m) => &m[j],
            ProcessArray::Vector(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBlock {
    pub time: Vec<f64>,
    pub delta: Vec<u8>,
    pub covariates: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl DataBlock {
    pub fn from_dataset(d: &SurvivalDataset) -> Self {
        DataBlock {
            time: d.time().to_vec(),
            delta: d.status().iter().map(|&s| u8::from(s)).collect(),
            covariates: (0..d.n()).map(|i| d.row(i).to_vec()).collect(),
            names: d.names().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub class: Vec<String>,
    pub beta: Vec<f64>,
    pub p_value: f64,
    pub p_std_value: f64,
    #[serde(rename = "SE_process")]
    pub se_process: ProcessArray,
    pub obs_process: ProcessArray,
    pub apprx_process: Vec<ProcessArray>,
    pub obs_std_process: ProcessArray,
    pub apprx_std_process: Vec<ProcessArray>,
    pub npath: usize,
    pub npath_effective: usize,
    pub npathsave: usize,
    #[serde(rename = "testType")]
    pub test_type: TestType,
    #[serde(rename = "estMethod")]
    pub est_method: EstMethod,
    #[serde(rename = "eqType")]
    pub eq_type: Option<EqType>,
    /// Tested covariate name (functional form test only).
    #[serde(rename = "covTested")]
    pub cov_tested: Option<String>,
    pub seed: u64,
    pub data: DataBlock,
    pub version: String,
    pub call: String,
}

impl ResultDocument {
    pub fn new(r: &GofTestResult, d: &SurvivalDataset, call: impl Into<String>) -> Self {
        ResultDocument {
            class: RESULT_CLASS.iter().map(|s| s.to_string()).collect(),
            beta: r.fit.beta_original.clone(),
            p_value: r.p_value,
            p_std_value: r.p_std_value,
            se_process: ProcessArray::from_process(&r.se_process),
            obs_process: ProcessArray::from_process(&r.obs_process),
            apprx_process: r.apprx_process.iter().map(ProcessArray::from_process).collect(),
            obs_std_process: ProcessArray::from_process(&r.obs_std_process),
            apprx_std_process: r.apprx_std_process.iter().map(ProcessArray::from_process).collect(),
            npath: r.npath,
            npath_effective: r.npath_effective,
            npathsave: r.npathsave,
            test_type: r.test_type,
            est_method: r.fit.est_method,
            eq_type: r.fit.eq_type,
            cov_tested: r.cov_tested.map(|q| d.names()[q - 1].clone()),
            seed: r.seed,
            data: DataBlock::from_dataset(d),
            version: env!("CARGO_PKG_VERSION").to_string(),
            call: call.into(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result document serializes");
        s.push('\n');
        s
    }

    /// Parses a result document. Anything that is not one, including
    /// unparseable JSON, yields [`ReportError::NotAResult`].
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|_| ReportError::NotAResult)?;
        let is_result = value
            .get("class")
            .and_then(|c| c.as_array())
            .is_some_and(|c| c.iter().any(|v| v.as_str() == Some(RESULT_CLASS[0])));
        if !is_result {
            return Err(ReportError::NotAResult);
        }
        let doc: ResultDocument = serde_json::from_value(value).map_err(|e| ReportError::Malformed(e.to_string()))?;
        doc.check_shapes()?;
        Ok(doc)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self, ReportError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_shapes(&self) -> Result<(), ReportError> {
        let n = self.data.time.len();
        let want = match self.test_type {
            TestType::Omnibus => (n, n),
            _ => (n, 1),
        };
        let all = [&self.se_process, &self.obs_process, &self.obs_std_process]
            .into_iter()
            .chain(&self.apprx_process)
            .chain(&self.apprx_std_process);
        for a in all {
            if !a.is_rectangular() || a.shape() != want {
                return Err(ReportError::Malformed(format!("process has shape {:?}, expected {:?}", a.shape(), want)));
            }
        }
        if self.apprx_process.len() != self.apprx_std_process.len() {
            return Err(ReportError::Malformed("raw and standardized path counts differ".into()));
        }
        Ok(())
    }
}
