//! Built-in closed-loop scenarios on the two-link planar arm.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{run_closed_loop, ControllerMode, LoopSetup, SimSettings, SimTrace};
use crate::barrier::{BarrierConfig, ConstraintSpec};
use crate::classk::ClassKFn;
use crate::controller::{ComputedTorque, MarginPolicy, SineReference};
use crate::dynamics::{DynamicsTerms, EllipsePlaneMap, MassMode, Planar2Dof, SystemModel, TransformedSystem};
use crate::error::{Error, Result};
use crate::synthesis::{synthesize_parameters, SamplingConstants, SelectionPolicy, SynthesisReport};

pub const SCENARIO_IDS: [&str; 3] = ["s1-continuous", "s1-sampled", "s2-nonlinear"];

/// Position constraints expressed through `q = c(x)` on the arm's joint angles `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub map: EllipsePlaneMap,
    /// Native box searched for configurations mapping into the constrained box.
    pub native_lo: Vec<f64>,
    pub native_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arm: Planar2Dof,
    pub transform: Option<TransformConfig>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ScenarioModel> {
        self.arm.validate()?;
        Ok(match &self.transform {
            None => ScenarioModel::Planar(self.arm.clone()),
            Some(t) => {
                if t.native_lo.len() != 2 || t.native_hi.len() != 2 {
                    return Err(Error::Config("native box must have 2 coordinates".into()));
                }
                ScenarioModel::Transformed(TransformedSystem::new(
                    self.arm.clone(),
                    t.map.clone(),
                    t.native_lo.clone(),
                    t.native_hi.clone(),
                ))
            }
        })
    }
}

/// The arm, either constrained in joint space or through a coordinate map.
#[derive(Debug, Clone)]
pub enum ScenarioModel {
    Planar(Planar2Dof),
    Transformed(TransformedSystem<Planar2Dof, EllipsePlaneMap>),
}

impl ScenarioModel {
    pub fn arm(&self) -> &Planar2Dof {
        match self {
            ScenarioModel::Planar(a) => a,
            ScenarioModel::Transformed(t) => &t.base,
        }
    }

    fn inner(&self) -> &dyn SystemModel {
        match self {
            ScenarioModel::Planar(a) => a,
            ScenarioModel::Transformed(t) => t,
        }
    }
}

impl SystemModel for ScenarioModel {
    fn dof(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn terms(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<DynamicsTerms> {
        self.inner().terms(x, xv)
    }

    fn constraint_state(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.inner().constraint_state(x, xv)
    }

    fn native_velocity(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner().native_velocity(x, v)
    }

    fn native_acceleration(&self, x: &DVector<f64>, xv: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner().native_acceleration(x, xv, u)
    }

    fn configurations(&self, lo: &[f64], hi: &[f64], per_axis: usize) -> Result<Vec<DVector<f64>>> {
        self.inner().configurations(lo, hi, per_axis)
    }
}

/// A complete run configuration: model, constraints, design inputs, reference and loop timing.
/// `x0`, `xv0` are joint angles and rates of the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub model: ModelConfig,
    pub spec: ConstraintSpec,
    pub alpha: ClassKFn,
    pub beta: ClassKFn,
    pub delta0: f64,
    pub eta0: f64,
    #[serde(default)]
    pub policy: SelectionPolicy,
    pub reference: SineReference,
    pub settings: SimSettings,
    pub x0: Vec<f64>,
    pub xv0: Vec<f64>,
}

impl Scenario {
    pub fn nominal(&self) -> ComputedTorque {
        ComputedTorque { arm: self.model.arm.clone(), reference: self.reference.clone() }
    }

    pub fn synthesize(&self) -> Result<SynthesisReport> {
        let model = self.model.build()?;
        let mut policy = self.policy.clone();
        if policy.sampling_period.is_none() && self.settings.mode == ControllerMode::ZcbfSampled {
            policy.sampling_period = Some(self.settings.period);
        }
        synthesize_parameters(&model, &self.spec, self.alpha, self.beta, self.delta0, self.eta0, &policy)
    }

    /// Runs the closed loop with `settings` (the scenario's own by default).
    pub fn simulate(
        &self,
        cfg: Option<&BarrierConfig>,
        sampling: Option<&SamplingConstants>,
        settings: Option<&SimSettings>,
    ) -> Result<SimTrace> {
        let model = self.model.build()?;
        let nominal = self.nominal();
        let setup = LoopSetup {
            scenario: &self.id,
            model: &model,
            spec: &self.spec,
            cfg,
            sampling,
            nominal: &nominal,
            perturbation: None,
            seed: 0,
        };
        let x0 = DVector::from_column_slice(&self.x0);
        let xv0 = DVector::from_column_slice(&self.xv0);
        run_closed_loop(&setup, settings.unwrap_or(&self.settings), &x0, &xv0)
    }
}

fn scenario1(id: &str, delta0: f64, eta0: f64, mode: ControllerMode) -> Scenario {
    Scenario {
        id: id.into(),
        model: ModelConfig { arm: Planar2Dof::default().with_mass_mode(MassMode::UniformRod), transform: None },
        spec: ConstraintSpec {
            q_min: vec![-PI / 2.0, PI / 2.0],
            q_max: vec![PI / 2.0, 5.0 * PI / 6.0],
            v_max: vec![1.5, 1.5],
            u_max: vec![18.0, 10.0],
        },
        alpha: ClassKFn::Arctangent,
        beta: ClassKFn::Cubic,
        delta0,
        eta0,
        policy: SelectionPolicy::default(),
        reference: SineReference {
            amplitude: vec![3.4708, 2.6236],
            frequency: vec![1.3, 1.3],
            phase: vec![],
            offset: vec![0.0, 2.0944],
        },
        settings: SimSettings { mode, period: 0.001, duration: 20.0, substeps: 10, margin: MarginPolicy::EtaBar },
        x0: vec![0.0, 2.0944],
        xv0: vec![0.0, 0.0],
    }
}

/// Looks up a built-in scenario. The two-link arm uses uniform-rod links. Scenario 2 uses
/// `P = I`, `r1 = (4.1, 2.0)`, `r2 = (0.1, 1.0)`, which maps the figure-eight reference into
/// the constrained box.
pub fn scenario(id: &str) -> Result<Scenario> {
    match id {
        "s1-continuous" => Ok(scenario1(id, 0.1, 0.0, ControllerMode::ZcbfContinuous)),
        "s1-sampled" => Ok(scenario1(id, 0.01, 7.0, ControllerMode::ZcbfSampled)),
        "s2-nonlinear" => {
            let mut s = scenario1(id, 0.01, 7.32, ControllerMode::ZcbfSampled);
            s.model.transform = Some(TransformConfig {
                map: EllipsePlaneMap { p: [[1.0, 0.0], [0.0, 1.0]], r1: [4.1, 2.0], r2: [0.1, 1.0] },
                native_lo: vec![0.0, 1.0],
                native_hi: vec![2.0, 3.0],
            });
            s.spec = ConstraintSpec {
                q_min: vec![8.0, 1.7],
                q_max: vec![12.0, 2.5],
                v_max: vec![1.5, 1.5],
                u_max: vec![18.0, 10.0],
            };
            s.reference = SineReference {
                amplitude: vec![0.5, 0.5],
                frequency: vec![0.5, 1.0],
                phase: vec![],
                offset: vec![0.8, 2.0],
            };
            s.x0 = vec![0.8, 2.0];
            Ok(s)
        }
        other => Err(Error::Config(format!("unknown scenario '{other}' (known: {})", SCENARIO_IDS.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_values() {
        for id in SCENARIO_IDS {
            let s = scenario(id).unwrap();
            assert_eq!(s.spec.u_max, vec![18.0, 10.0]);
            assert_eq!(s.settings.period, 0.001);
            s.spec.validate().unwrap();
            let model = s.model.build().unwrap();
            let (q, _) = model
                .constraint_state(&DVector::from_column_slice(&s.x0), &DVector::from_column_slice(&s.xv0))
                .unwrap();
            for i in 0..2 {
                assert!(q[i] > s.spec.q_min[i] && q[i] < s.spec.q_max[i], "{id}");
            }
        }
        assert!(scenario("s3").is_err());
        let s = scenario("s1-sampled").unwrap();
        assert_eq!(s.spec.q_max, vec![PI / 2.0, 5.0 * PI / 6.0]);
    }

    #[test]
    fn scenario2_reference_crosses_the_box() {
        let s = scenario("s2-nonlinear").unwrap();
        let model = s.model.build().unwrap();
        let (centre, _) = model.constraint_state(&DVector::from_vec(vec![0.8, 2.0]), &DVector::zeros(2)).unwrap();
        assert!((centre[0] - 9.89).abs() < 1e-12 && (centre[1] - 2.08).abs() < 1e-12);
        // The nominal figure-eight leaves the constrained box, so the filter has work to do.
        let outside = (0..400).any(|k| {
            let (r, rd, _) = s.reference.eval(k as f64 * 0.05);
            let (q, _) = model.constraint_state(&r, &rd).unwrap();
            (0..2).any(|i| q[i] < s.spec.q_min[i] || q[i] > s.spec.q_max[i])
        });
        assert!(outside);
    }
}
