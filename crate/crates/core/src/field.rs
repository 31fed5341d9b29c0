use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// External field `h`: one value for every site, or one value per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExternalField {
    Uniform(f64),
    PerSite(Vec<f64>),
}

impl Default for ExternalField {
    fn default() -> Self {
        ExternalField::Uniform(0.0)
    }
}

impl From<f64> for ExternalField {
    fn from(h: f64) -> Self {
        ExternalField::Uniform(h)
    }
}

impl From<Vec<f64>> for ExternalField {
    fn from(h: Vec<f64>) -> Self {
        ExternalField::PerSite(h)
    }
}

impl ExternalField {
    /// Broadcasts to `n` sites, checking length and finiteness.
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        let values = match self {
            ExternalField::Uniform(h) => vec![*h; n],
            ExternalField::PerSite(h) => {
                if h.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: h.len(),
                    });
                }
                h.clone()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("external field must be finite".into()));
        }
        Ok(values)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ExternalField::Uniform(h) => *h == 0.0,
            ExternalField::PerSite(h) => h.iter().all(|&v| v == 0.0),
        }
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse temperature must be finite and nonnegative, got {beta}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_broadcasts() {
        assert_eq!(ExternalField::Uniform(0.3).resolve(3).unwrap(), vec![0.3; 3]);
    }

    #[test]
    fn per_site_length_is_checked() {
        let h = ExternalField::PerSite(vec![0.1, 0.2]);
        assert!(h.resolve(2).is_ok());
        assert!(matches!(h.resolve(3), Err(Error::DimensionMismatch { .. })));
        assert!(ExternalField::Uniform(f64::NAN).resolve(1).is_err());
    }

    #[test]
    fn beta_must_be_nonnegative() {
        assert!(check_beta(0.0).is_ok());
        assert!(check_beta(-0.1).is_err());
        assert!(check_beta(f64::INFINITY).is_err());
    }
}
