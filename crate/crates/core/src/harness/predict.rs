//! Case table mapping system and observable parameters to the predicted
//! stable index and scaling exponent.

use std::fmt;

use serde::Serialize;

use crate::harness::HarnessError;
use crate::observables::{CuspIntegrals, ObservableSpec, PhasePoint, PhaseSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseId {
    /// Billiard, pole off the cusps, `1/α > γ`.
    Main1a,
    /// Billiard, pole off the cusps, `1/α < γ`, some `I_{φ̃,i} ≠ 0`.
    Main1b,
    /// Billiard, observable vanishing near every cusp with an induced law of index `α`, `1/α < γ`.
    Main2,
    /// LSV, pole in `(0, 1]`, `1/α > γ`.
    IntermA,
    /// LSV, pole in `(0, 1]`, `1/α < γ`, `φ(0) ≠ μ(φ)`.
    IntermB,
    /// LSV, pole in `(0, 1]`, `1/α < γ`, `φ(0) = μ(φ)`.
    IntermC,
    /// LSV, pole at the indifferent fixed point.
    CuspCombined,
    /// Billiard, `1/α < γ`, every `I_{φ̃,i}` vanishes: no first-order prediction.
    #[serde(rename = "degenerate_I_zero")]
    DegenerateIZero,
}

impl CaseId {
    pub const ALL: [CaseId; 8] = [
        CaseId::Main1a,
        CaseId::Main1b,
        CaseId::Main2,
        CaseId::IntermA,
        CaseId::IntermB,
        CaseId::IntermC,
        CaseId::CuspCombined,
        CaseId::DegenerateIZero,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::Main1a => "main1a",
            CaseId::Main1b => "main1b",
            CaseId::Main2 => "main2",
            CaseId::IntermA => "interm_a",
            CaseId::IntermB => "interm_b",
            CaseId::IntermC => "interm_c",
            CaseId::CuspCombined => "cusp_combined",
            CaseId::DegenerateIZero => "degenerate_I_zero",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Predicted limit. `stable_index * scaling_exponent == 1` whenever both are
/// present; both are absent for [`CaseId::DegenerateIZero`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictedLaw {
    pub case_id: CaseId,
    pub stable_index: Option<f64>,
    pub scaling_exponent: Option<f64>,
    pub notes: String,
}

impl PredictedLaw {
    fn with_index(case_id: CaseId, index: f64, notes: impl Into<String>) -> Self {
        Self {
            case_id,
            stable_index: Some(index),
            scaling_exponent: Some(1.0 / index),
            notes: notes.into(),
        }
    }

    fn with_exponent(case_id: CaseId, exponent: f64, notes: impl Into<String>) -> Self {
        Self {
            case_id,
            stable_index: Some(1.0 / exponent),
            scaling_exponent: Some(exponent),
            notes: notes.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemParams {
    Lsv { gamma: f64 },
    /// `cusp_positions` are the arclength coordinates of the cusp tips.
    Billiard { gamma_max: f64, perimeter: f64, cusp_positions: Vec<f64> },
}

impl SystemParams {
    pub fn gamma(&self) -> f64 {
        match self {
            SystemParams::Lsv { gamma } => *gamma,
            SystemParams::Billiard { gamma_max, .. } => *gamma_max,
        }
    }
}

/// Evidence that decides the sub-case when `1/α < γ`.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseReport {
    /// `φ(0) - μ(φ)` with its Monte Carlo standard error; balanced when the
    /// gap lies within `z` standard errors.
    LsvGap { gap: f64, stderr: f64, z: f64 },
    /// Cusp integrals over the cusps of maximal flatness. `vanishes_near_cusps`
    /// declares an observable identically zero in a neighbourhood of every cusp
    /// whose induced version has a stable law of index `α`.
    Billiard { integrals: Vec<CuspIntegrals>, vanishes_near_cusps: bool },
}

impl CaseReport {
    fn lsv_balanced(&self) -> Option<bool> {
        match self {
            CaseReport::LsvGap { gap, stderr, z } => Some(gap.abs() <= z * stderr),
            _ => None,
        }
    }
}

/// `1/α = γ` up to rounding: the case split excludes equality.
fn on_boundary(alpha: f64, gamma: f64) -> bool {
    (1.0 / alpha - gamma).abs() <= 1e-12
}

/// Relative cutoff below which an integral counts as zero.
const ZERO_INTEGRAL_SCALE: f64 = 1.0;

fn coefficient_scale(observable: &ObservableSpec<f64>) -> f64 {
    observable.poles().iter().map(|p| p.coefficient.abs()).sum()
}

/// Every case whose hypotheses hold. On the declared domain exactly one
/// case matches; [`predict_limit_law`] relies on that.
pub fn matching_cases(
    system: &SystemParams,
    observable: &ObservableSpec<f64>,
    report: Option<&CaseReport>,
) -> Result<Vec<CaseId>, HarnessError> {
    let alpha = observable.alpha();
    let gamma = system.gamma();
    if !(alpha > 0.0 && alpha < 2.0) || alpha == 1.0 {
        return Err(HarnessError::Refused(format!("alpha = {alpha} is outside (0,1) ∪ (1,2)")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(HarnessError::Refused(format!("gamma = {gamma} is outside (0,1)")));
    }
    let noah = 1.0 / alpha > gamma;
    let mut cases = Vec::new();
    match (system, observable.space()) {
        (SystemParams::Lsv { .. }, PhaseSpace::Interval) => {
            let at_zero = observable.poles().iter().any(|p| p.location == PhasePoint::Interval(0.0));
            if at_zero {
                if observable.poles().len() > 1 {
                    return Err(HarnessError::Refused("a pole at 0 must be the only pole".into()));
                }
                cases.push(CaseId::CuspCombined);
                return Ok(cases);
            }
            if on_boundary(alpha, gamma) {
                return Err(HarnessError::Refused("boundary 1/alpha = gamma is not covered".into()));
            }
            if noah {
                cases.push(CaseId::IntermA);
            }
            if !noah {
                let balanced = report
                    .and_then(CaseReport::lsv_balanced)
                    .ok_or_else(|| HarnessError::MissingReport("phi(0) - mu(phi) gap".into()))?;
                if !balanced {
                    cases.push(CaseId::IntermB);
                }
                if balanced {
                    cases.push(CaseId::IntermC);
                }
            }
        }
        (SystemParams::Billiard { perimeter, cusp_positions, .. }, PhaseSpace::Billiard { .. }) => {
            for p in observable.poles() {
                let PhasePoint::Collision { r, .. } = p.location else { continue };
                let on_cusp = cusp_positions.iter().any(|&c| {
                    let d = (r - c).rem_euclid(*perimeter);
                    d.min(perimeter - d) < 1e-12
                });
                if on_cusp {
                    return Err(HarnessError::Refused(
                        "a pole at a cusp point has no known limit law".into(),
                    ));
                }
            }
            if on_boundary(alpha, gamma) {
                return Err(HarnessError::Refused("boundary 1/alpha = gamma is not covered".into()));
            }
            if noah {
                cases.push(CaseId::Main1a);
            } else {
                let Some(CaseReport::Billiard { integrals, vanishes_near_cusps }) = report else {
                    return Err(HarnessError::MissingReport("cusp integrals".into()));
                };
                let scale = coefficient_scale(observable) * ZERO_INTEGRAL_SCALE;
                let any_nonzero = integrals.iter().any(|i| !i.is_zero(scale));
                if any_nonzero {
                    cases.push(CaseId::Main1b);
                }
                if !any_nonzero && *vanishes_near_cusps {
                    cases.push(CaseId::Main2);
                }
                if !any_nonzero && !*vanishes_near_cusps {
                    cases.push(CaseId::DegenerateIZero);
                }
            }
        }
        _ => return Err(HarnessError::Refused("observable and system live on different spaces".into())),
    }
    Ok(cases)
}

pub fn predict_limit_law(
    system: &SystemParams,
    observable: &ObservableSpec<f64>,
    report: Option<&CaseReport>,
) -> Result<PredictedLaw, HarnessError> {
    let cases = matching_cases(system, observable, report)?;
    let [case] = cases[..] else {
        return Err(HarnessError::Internal(format!("case table matched {cases:?}")));
    };
    let alpha = observable.alpha();
    let gamma = system.gamma();
    Ok(match case {
        CaseId::Main1a | CaseId::IntermA => {
            PredictedLaw::with_index(case, alpha, "heavy tail dominates: 1/alpha > gamma")
        }
        CaseId::Main1b | CaseId::IntermB => PredictedLaw::with_exponent(
            case,
            gamma,
            "slow mixing dominates; reported exponent is the scaling n^gamma, stable index 1/gamma",
        ),
        CaseId::IntermC => PredictedLaw::with_index(
            case,
            alpha,
            "phi(0) = mu(phi) removes the first-order cusp contribution",
        ),
        CaseId::Main2 => PredictedLaw::with_index(case, alpha, "induced stable law of index alpha lifts"),
        CaseId::CuspCombined => PredictedLaw::with_exponent(
            case,
            1.0 / alpha + gamma,
            "pole at the indifferent fixed point: exponents add",
        ),
        CaseId::DegenerateIZero => PredictedLaw {
            case_id: case,
            stable_index: None,
            scaling_exponent: None,
            notes: format!("all cusp integrals vanish; only Var(S_n) = o(n^(2 gamma - eps)), 2 gamma = {}", 2.0 * gamma),
        },
    })
}
