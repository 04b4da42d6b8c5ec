//! Agreement between two raters' binary labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub cohen_kappa: f64,
    pub krippendorff_alpha: Option<f64>,
    pub percent_agreement: f64,
    #[serde(default)]
    pub degenerate: Vec<String>,
}

fn check(a: &[bool], b: &[bool]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("agreement", "length", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument(
            "agreement needs at least one item".into(),
        ));
    }
    Ok(())
}

pub fn percent_agreement(a: &[bool], b: &[bool]) -> Result<f64> {
    check(a, b)?;
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Expected agreement is 1, so kappa is undefined and reported as 1.
    pub degenerate: bool,
}

/// Cohen's kappa with expected agreement from the product of marginals.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<Kappa> {
    check(a, b)?;
    let n = a.len() as f64;
    let po = percent_agreement(a, b)?;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if pe == 1.0 {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (po - pe) / (1.0 - pe),
        degenerate: false,
    })
}

/// Krippendorff's alpha for two raters, nominal distance, no missing values.
///
/// From the coincidence matrix, `α = 1 − (n − 1)·Σ_{c≠k} o_ck / Σ_{c≠k} n_c·n_k`
/// where `n` counts pairable values (twice the item count).
pub fn krippendorff_alpha_binary(a: &[bool], b: &[bool]) -> Result<f64> {
    check(a, b)?;
    let disagreements = a.iter().zip(b).filter(|(x, y)| x != y).count() as u64;
    let n = 2 * a.len() as u64;
    let n1 = (a.iter().filter(|&&x| x).count() + b.iter().filter(|&&x| x).count()) as u64;
    let n0 = n - n1;
    // off-diagonal sums: o_01 + o_10 = 2d, n_0·n_1 + n_1·n_0 = 2·n0·n1
    let expected = n0 * n1;
    if expected == 0 {
        return Err(Error::InvalidArgument(
            "zero expected disagreement: all values are identical".into(),
        ));
    }
    Ok(1.0 - ((n - 1) * disagreements) as f64 / expected as f64)
}

pub fn agreement_report(a: &[bool], b: &[bool]) -> Result<AgreementReport> {
    let kappa = cohen_kappa(a, b)?;
    let alpha = krippendorff_alpha_binary(a, b).ok();
    let mut degenerate = Vec::new();
    if kappa.degenerate {
        degenerate.push("cohen_kappa".to_string());
    }
    if alpha.is_none() {
        degenerate.push("krippendorff_alpha".to_string());
    }
    Ok(AgreementReport {
        n: a.len(),
        cohen_kappa: kappa.value,
        krippendorff_alpha: alpha,
        percent_agreement: percent_agreement(a, b)?,
        degenerate,
    })
}
