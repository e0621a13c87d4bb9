use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A requested correlation between a task label and a binary attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub task: String,
    pub attribute: String,
    pub target_phi: f64,
    pub size_budget: usize,
    pub prevalence_target: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.05
}

impl CorrelationSpec {
    pub fn new(
        task: &str,
        attribute: &str,
        target_phi: f64,
        size_budget: usize,
        prevalence_target: f64,
    ) -> Self {
        Self {
            task: task.into(),
            attribute: attribute.into(),
            target_phi,
            size_budget,
            prevalence_target,
            tolerance: default_tolerance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.target_phi) {
            return Err(Error::Config(format!(
                "target_phi {} outside [-1, 1]",
                self.target_phi
            )));
        }
        if self.size_budget < 4 {
            return Err(Error::Config("size_budget must be at least 4".into()));
        }
        if !(self.prevalence_target > 0.0 && self.prevalence_target < 1.0) {
            return Err(Error::Config("prevalence_target must lie in (0, 1)".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_bounds() {
        assert!(CorrelationSpec::new("y", "b", 1.0, 4, 0.5)
            .validate()
            .is_ok());
        assert!(CorrelationSpec::new("y", "b", 1.1, 4, 0.5)
            .validate()
            .is_err());
        assert!(CorrelationSpec::new("y", "b", 0.0, 3, 0.5)
            .validate()
            .is_err());
        assert!(CorrelationSpec::new("y", "b", 0.0, 10, 1.0)
            .validate()
            .is_err());
    }

    #[test]
    fn tolerance_defaults_when_absent() {
        let spec: CorrelationSpec = serde_json::from_str(
            r#"{"task":"y","attribute":"b","target_phi":0.2,"size_budget":10,"prevalence_target":0.5}"#,
        )
        .unwrap();
        assert_eq!(spec.tolerance, 0.05);
    }
}
