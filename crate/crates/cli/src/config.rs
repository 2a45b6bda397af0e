use serde::{Deserialize, Serialize};

use solenoid_core::currents::{ImmersionDescriptor, PairOptions};
use solenoid_core::dynamics::UlamOptions;
use solenoid_core::forms::FormDescriptor;
use solenoid_core::smeasure::SolenoidMeasureDescriptor;
use solenoid_core::solenoid::SolenoidDescriptor;
use solenoid_core::transversal::{MeasureDescriptor, RawTransversalMeasure, TransversalPoint, TransversalSpace};

/// One run's configuration. Every default is filled in by [`Config::resolve`]
/// so the echoed copy in `report.json` is complete.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solenoid: Option<SolenoidDescriptor>,
    /// Transversal measure; defaults to Lebesgue, Haar or unit weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solenoid_measure: Option<SolenoidMeasureDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub immersion: Option<ImmersionDescriptor>,
    #[serde(default)]
    pub forms: Vec<FormDescriptor>,
    #[serde(default)]
    pub random_forms: RandomForms,
    #[serde(default = "default_tol")]
    pub invariance_tol: f64,
    #[serde(default)]
    pub ulam: UlamOptions,
    #[serde(default)]
    pub quadrature: PairOptions,
    #[serde(default)]
    pub minimality: Minimality,
    #[serde(default)]
    pub dualform: DualFormConfig,
    #[serde(default)]
    pub selfint: SelfIntConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asymptotic: Option<AsymptoticConfig>,
}

fn default_tol() -> f64 {
    1e-9
}

/// Seeded test forms appended to `forms`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomForms {
    pub count: usize,
    pub degree: usize,
    pub terms: usize,
    pub cap: i64,
}

impl Default for RandomForms {
    fn default() -> Self {
        Self {
            count: 0,
            degree: 1,
            terms: 3,
            cap: 4,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Minimality {
    pub samples: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualFormConfig {
    pub r: f64,
    #[serde(rename = "G")]
    pub g: usize,
    /// Compare grid pairings with current pairings on the built-in test forms.
    pub check: bool,
}

impl Default for DualFormConfig {
    fn default() -> Self {
        Self {
            r: 0.02,
            g: 256,
            check: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Refinement {
    #[serde(rename = "G")]
    pub g: usize,
    pub r: f64,
    pub r_prime: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfIntConfig {
    pub refinements: Vec<Refinement>,
    pub reject_atoms: bool,
    pub flowbox_depths: Vec<u32>,
}

impl Default for SelfIntConfig {
    fn default() -> Self {
        Self {
            refinements: vec![
                Refinement {
                    g: 256,
                    r: 0.02,
                    r_prime: 0.015,
                },
                Refinement {
                    g: 512,
                    r: 0.01,
                    r_prime: 0.0075,
                },
            ],
            reject_atoms: false,
            flowbox_depths: (1..=8).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticConfig {
    pub x0: TransversalPoint,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    1e4
}

impl Config {
    pub fn empty() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }

    /// Fills in defaults that depend on the transversal.
    pub fn resolve(&mut self, space: Option<&TransversalSpace>) {
        let Some(space) = space else { return };
        if self.measure.is_none() {
            self.measure = Some(match space {
                TransversalSpace::Circle => RawTransversalMeasure::lebesgue().descriptor(),
                TransversalSpace::Cantor { .. } => RawTransversalMeasure::haar(space).descriptor(),
                TransversalSpace::Finite { points } => MeasureDescriptor::Weights {
                    weights: vec![1.0; points.len()],
                },
            });
        }
        let (n, eps) = match space {
            TransversalSpace::Circle => (10_000, 0.01),
            TransversalSpace::Cantor { p, depth } => {
                let n = (*p as usize).pow(*depth);
                (n, 1.0 / n as f64)
            }
            TransversalSpace::Finite { points } => (points.len(), 1e-3),
        };
        self.minimality.samples.get_or_insert(8);
        self.minimality.n.get_or_insert(n);
        self.minimality.eps.get_or_insert(eps);
    }
}
