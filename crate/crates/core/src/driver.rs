//! Longitudinal driver model: acceleration from an MLP or the IDM fallback,
//! and the gap-acceptance cascade with priority overrides.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{
    observe_gap, route_positions, EnvObservation, GapObservation, VehicleId, VehicleState, LEAD_RANGE, VEHICLE_LENGTH,
};
use crate::map::LaneMap;
use crate::prediction::PriorityAssignmentSet;

pub const ACCEL_MIN: f64 = -6.0;
pub const ACCEL_MAX: f64 = 3.0;
pub const LEAKY_SLOPE: f64 = 0.01;
/// Margin between the other vehicle's arrival and our clearing time.
pub const GAP_TIME_MARGIN: f64 = 2.0;
/// Lower bound on the speed used to estimate zone clearing times.
pub const MIN_CLEARING_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub time_headway: f64,
    pub min_gap: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            time_headway: 1.5,
            min_gap: 2.0,
            a_max: 2.5,
            b_comf: 3.0,
            exponent: 4.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("input has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
    #[error("weight file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("weight file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }
}

/// Dense layer; `weights` is row-major with one row per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Two hidden layers plus a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters {
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl MlpParameters {
    pub const HIDDEN: usize = 16;

    /// All-zero weights with the given output bias.
    pub fn constant(activation: Activation, input_dim: usize, output: &[f64]) -> Self {
        let layer = |rows: usize, cols: usize| DenseLayer {
            weights: vec![vec![0.0; cols]; rows],
            bias: vec![0.0; rows],
        };
        let mut out = layer(output.len(), Self::HIDDEN);
        out.bias = output.to_vec();
        Self {
            activation,
            input_dim,
            output_dim: output.len(),
            layers: vec![layer(Self::HIDDEN, input_dim), layer(Self::HIDDEN, Self::HIDDEN), out],
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.layers.len() != 3 {
            return Err(MlpError::Shape {
                layer: self.layers.len(),
                reason: "expected two hidden layers and an output layer".into(),
            });
        }
        let mut cols = self.input_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.bias.len() {
                return Err(MlpError::Shape {
                    layer: k,
                    reason: format!("{} rows but {} biases", layer.weights.len(), layer.bias.len()),
                });
            }
            if let Some(row) = layer.weights.iter().find(|r| r.len() != cols) {
                return Err(MlpError::Shape {
                    layer: k,
                    reason: format!("row of length {} where {} expected", row.len(), cols),
                });
            }
            if layer.weights.iter().flatten().chain(&layer.bias).any(|x| !x.is_finite()) {
                return Err(MlpError::NonFinite(k));
            }
            cols = layer.bias.len();
        }
        if cols != self.output_dim {
            return Err(MlpError::Shape {
                layer: 2,
                reason: format!("output width {} but output_dim {}", cols, self.output_dim),
            });
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, MlpError> {
        let p: MlpParameters = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlpError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameters serialize")
    }
}

pub fn mlp_forward(params: &MlpParameters, input: &[f64]) -> Result<Vec<f64>, MlpError> {
    if input.len() != params.input_dim {
        return Err(MlpError::DimensionMismatch {
            expected: params.input_dim,
            got: input.len(),
        });
    }
    let last = params.layers.len() - 1;
    let mut x = input.to_vec();
    for (k, layer) in params.layers.iter().enumerate() {
        x = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| {
                let z = row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + b;
                if k == last {
                    z
                } else {
                    params.activation.apply(z)
                }
            })
            .collect();
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum AccelModel {
    #[default]
    Analytic,
    Mlp(Arc<MlpParameters>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum GapModel {
    #[default]
    Analytic,
    Mlp(Arc<MlpParameters>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriverModel {
    pub accel: AccelModel,
    pub gap: GapModel,
    pub idm: IdmParams,
}

impl DriverModel {
    pub fn with_mlp(acc: MlpParameters, gap: Option<MlpParameters>) -> Result<Self, MlpError> {
        if acc.input_dim != EnvObservation::DIM + 1 || acc.output_dim != 1 {
            return Err(MlpError::DimensionMismatch {
                expected: EnvObservation::DIM + 1,
                got: acc.input_dim,
            });
        }
        let gap = match gap {
            Some(g) if g.input_dim != GapObservation::DIM || g.output_dim != 1 => {
                return Err(MlpError::DimensionMismatch {
                    expected: GapObservation::DIM,
                    got: g.input_dim,
                })
            }
            Some(g) => GapModel::Mlp(Arc::new(g)),
            None => GapModel::Analytic,
        };
        Ok(Self {
            accel: AccelModel::Mlp(Arc::new(acc)),
            gap,
            idm: IdmParams::default(),
        })
    }
}

/// IDM acceleration behind an obstacle `gap` metres ahead moving at `v_obs`.
/// `gap = None` gives the free-road term only.
pub fn idm(p: &IdmParams, v: f64, v0: f64, gap: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / v0.max(0.1)).powf(p.exponent);
    let interaction = match gap {
        None => 0.0,
        Some((g, _)) if g <= 0.0 => return ACCEL_MIN,
        Some((g, v_obs)) => {
            let s_star = p.min_gap + (v * p.time_headway + v * (v - v_obs) / (2.0 * (p.a_max * p.b_comf).sqrt())).max(0.0);
            (s_star / g).powi(2)
        }
    };
    p.a_max * (free - interaction)
}

pub fn clamp_accel(a: f64) -> f64 {
    a.clamp(ACCEL_MIN, ACCEL_MAX)
}

/// Longitudinal acceleration for one vehicle. `delta = 0` makes the stop line
/// a stationary obstacle for the analytic model.
pub fn acceleration(obs: &EnvObservation, delta: u8, model: &DriverModel) -> f64 {
    match &model.accel {
        AccelModel::Mlp(params) => {
            let mut input = obs.features().to_vec();
            input.push(delta as f64);
            clamp_accel(mlp_forward(params, &input).expect("validated dimensions")[0])
        }
        AccelModel::Analytic => {
            let lead = (obs.d_lead < LEAD_RANGE).then(|| (obs.d_lead - VEHICLE_LENGTH, obs.v_lead));
            let mut a = idm(&model.idm, obs.v, obs.v_max, lead);
            if delta == 0 {
                a = a.min(idm(&model.idm, obs.v, obs.v_max, Some((obs.d_stop, 0.0))));
            }
            clamp_accel(a)
        }
    }
}

/// Inputs of the analytic gap model besides the observation itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapGeometry {
    /// Distance of ν_i's front to the far end of the shared zone.
    pub dist_i_to_exit: f64,
    /// Distance of ν_j's front to the start of the shared zone.
    pub dist_j_to_entry: f64,
    pub v_max_j: f64,
}

/// Time to cover `dist` starting at `v`, accelerating at `a` up to `v_max`.
pub fn arrival_time(dist: f64, v: f64, a: f64, v_max: f64) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    let v = v.min(v_max);
    let d_acc = (v_max * v_max - v * v) / (2.0 * a);
    if dist <= d_acc {
        ((v * v + 2.0 * a * dist).sqrt() - v) / a
    } else {
        (v_max - v) / a + (dist - d_acc) / v_max
    }
}

pub fn analytic_gap_accept(obs: &GapObservation, geo: &GapGeometry, idm: &IdmParams) -> bool {
    let t_j = arrival_time(geo.dist_j_to_entry, obs.v_j, idm.a_max, geo.v_max_j);
    let t_clear = (geo.dist_i_to_exit + VEHICLE_LENGTH) / obs.v_i.max(MIN_CLEARING_SPEED);
    t_j > t_clear + GAP_TIME_MARGIN
}

pub fn gap_accept(obs: &GapObservation, geo: &GapGeometry, model: &DriverModel) -> bool {
    match &model.gap {
        GapModel::Analytic => analytic_gap_accept(obs, geo, &model.idm),
        GapModel::Mlp(p) => mlp_forward(p, &obs.features()).expect("validated dimensions")[0] > 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapCase {
    AssignedPriority,
    AssignedYield,
    RightOfWay,
    ModelAccept,
    ModelReject,
}

impl GapCase {
    pub fn delta(self) -> u8 {
        match self {
            GapCase::AssignedPriority | GapCase::RightOfWay | GapCase::ModelAccept => 1,
            GapCase::AssignedYield | GapCase::ModelReject => 0,
        }
    }
}

/// The case cascade for one ordered pair; `accept` is only evaluated when the
/// earlier cases do not decide.
pub fn pair_case(prioritized: bool, yielding: bool, right_of_way: bool, accept: impl FnOnce() -> bool) -> GapCase {
    if prioritized {
        GapCase::AssignedPriority
    } else if yielding {
        GapCase::AssignedYield
    } else if right_of_way {
        GapCase::RightOfWay
    } else if accept() {
        GapCase::ModelAccept
    } else {
        GapCase::ModelReject
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDecision {
    pub pairs: Vec<(VehicleId, GapCase)>,
    pub delta: u8,
}

impl GapDecision {
    pub fn from_pairs(pairs: Vec<(VehicleId, GapCase)>) -> Self {
        let delta = pairs.iter().map(|(_, c)| c.delta()).min().unwrap_or(1).min(1);
        Self { pairs, delta }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("both orderings of ({0}, {1}) are assigned")]
    InconsistentAssignment(VehicleId, VehicleId),
    #[error(transparent)]
    Env(#[from] crate::environment::EnvError),
}

/// Gap decision of `vi` against every vehicle in `conflicts`, evaluated from
/// the environment-model view (worst-case routes for HDVs).
pub fn gap_decision(
    vi: &VehicleState,
    conflicts: &[&VehicleState],
    p: &PriorityAssignmentSet,
    map: &LaneMap,
    model: &DriverModel,
) -> Result<GapDecision, DecisionError> {
    let ri = route_positions(vi, map)?;
    let mut pairs = Vec::with_capacity(conflicts.len());
    for vj in conflicts {
        if p.contains(vi.id, vj.id) && p.contains(vj.id, vi.id) {
            return Err(DecisionError::InconsistentAssignment(vi.id, vj.id));
        }
        let rj = route_positions(vj, map)?;
        let combos: Vec<_> = ri
            .iter()
            .flat_map(|a| rj.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| map.routes_conflict(a.0, b.0))
            .collect();
        if combos.is_empty() {
            continue;
        }
        let row = combos.iter().all(|(a, b)| map.has_right_of_way(a.0, b.0));
        let case = pair_case(p.contains(vi.id, vj.id), p.contains(vj.id, vi.id), row, || {
            let Ok(obs) = observe_gap(vi, vj, map) else {
                return false;
            };
            combos.iter().all(|&((ra, sa), (rb, sb))| {
                map.route_zones(ra, rb).iter().all(|z| {
                    let geo = GapGeometry {
                        dist_i_to_exit: z.exit_a - sa,
                        dist_j_to_entry: z.entry_b - sb,
                        v_max_j: map.speed_limit_at(rb, sb),
                    };
                    gap_accept(&obs, &geo, model)
                })
            })
        });
        pairs.push((vj.id, case));
    }
    Ok(GapDecision::from_pairs(pairs))
}
