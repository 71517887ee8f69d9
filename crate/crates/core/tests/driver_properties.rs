mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coop_maneuver::driver::{
    acceleration, gap_decision, mlp_forward, Activation, DecisionError, DenseLayer, DriverModel, GapCase,
    MlpParameters, ACCEL_MAX, ACCEL_MIN,
};
use coop_maneuver::environment::{observation_on_route, EnvObservation, VehicleId, VehicleState, LEAD_RANGE};
use coop_maneuver::map::{build_lehr_junction, LaneMap, RouteId};
use coop_maneuver::prediction::PriorityAssignmentSet;

fn junction() -> &'static LaneMap {
    static MAP: OnceLock<LaneMap> = OnceLock::new();
    MAP.get_or_init(build_lehr_junction)
}

fn random_params(rng: &mut ChaCha8Rng, input_dim: usize, output_dim: usize) -> MlpParameters {
    let h = MlpParameters::HIDDEN;
    let mut layer = |rows: usize, cols: usize| DenseLayer {
        weights: (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect(),
        bias: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let layers = vec![layer(h, input_dim), layer(h, h), layer(output_dim, h)];
    MlpParameters {
        activation: if rng.gen_bool(0.5) { Activation::Tanh } else { Activation::LeakyRelu },
        input_dim,
        output_dim,
        layers,
    }
}

#[test]
fn forward_pass_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let input_dim = rng.gen_range(1..14);
        let output_dim = rng.gen_range(1..4);
        let p = random_params(&mut rng, input_dim, output_dim);
        p.validate().unwrap();
        let x: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let got = mlp_forward(&p, &x).unwrap();
        let want = common::mlp_oracle(&p, &x);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
        }
    }
}

fn obs_strategy() -> impl Strategy<Value = EnvObservation> {
    (
        -30.0f64..150.0,
        0.0f64..15.0,
        1.0f64..14.0,
        prop::array::uniform6(-3.1f64..3.1),
        0.0f64..=LEAD_RANGE,
        0.0f64..15.0,
    )
        .prop_map(|(d_stop, v, v_max, delta_psi, d_lead, v_lead)| EnvObservation {
            d_stop,
            v,
            v_max,
            delta_psi,
            d_lead,
            v_lead,
        })
}

proptest! {
    #[test]
    fn acceleration_is_clamped(obs in obs_strategy(), delta in 0u8..=1, seed in any::<u64>()) {
        let analytic = DriverModel::default();
        let a = acceleration(&obs, delta, &analytic);
        prop_assert!((ACCEL_MIN..=ACCEL_MAX).contains(&a));
        prop_assert_eq!(a, acceleration(&obs, delta, &analytic));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_params(&mut rng, 12, 1);
        // large output weights push the raw output outside the clamp bounds
        for w in &mut p.layers[2].weights[0] {
            *w *= 20.0;
        }
        let learned = DriverModel::with_mlp(p, None).unwrap();
        let b = acceleration(&obs, delta, &learned);
        prop_assert!((ACCEL_MIN..=ACCEL_MAX).contains(&b));
    }

    /// Closed-loop approach with delta = 0 from any state that can stop
    /// comfortably: the vehicle comes to rest short of the stop line.
    #[test]
    fn yielding_vehicle_stops_before_the_line(d0 in 10.0f64..80.0, v0 in 0.5f64..11.11) {
        prop_assume!(v0 * v0 / 6.0 < d0);
        let map = junction();
        let route = map.route_ids().find(|&r| map.route(r).id == "W-N").unwrap();
        let entry = map.route(route).entry_s();
        let model = DriverModel::default();
        let (mut s, mut v) = (entry - d0, v0);
        let dt = 0.05;
        for _ in 0..4000 {
            let obs = observation_on_route(map, route, s, v, None);
            let a = acceleration(&obs, 0, &model);
            let nv = (v + a * dt).max(0.0);
            prop_assert!(nv >= 0.0);
            s += 0.5 * (v + nv) * dt;
            v = nv;
            if v < 0.1 {
                break;
            }
        }
        prop_assert!(v < 0.1, "still moving at {v}");
        prop_assert!(entry - s >= 0.5, "stopped {} m before the line", entry - s);
    }
}

/// Conflicting CAV pairs with positions before their stop lines.
fn conflicting_pair() -> impl Strategy<Value = (RouteId, RouteId, f64, f64, f64, f64)> {
    let map = junction();
    let pairs: Vec<(RouteId, RouteId)> = map
        .route_ids()
        .flat_map(|a| map.route_ids().map(move |b| (a, b)))
        .filter(|&(a, b)| map.routes_conflict(a, b))
        .collect();
    (prop::sample::select(pairs), 0.0f64..110.0, 0.0f64..110.0, 0.0f64..11.0, 0.0f64..11.0)
        .prop_map(|((a, b), sa, sb, va, vb)| (a, b, sa, sb, va, vb))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Assigned priorities decide the pair regardless of right of way and
    /// of what the gap model would say.
    #[test]
    fn assignments_override_everything((ra, rb, sa, sb, va, vb) in conflicting_pair(), hdv_j in any::<bool>()) {
        let map = junction();
        let model = DriverModel::default();
        let vi = VehicleState::on_route(map, VehicleId(1), ra, sa, va, true);
        let vj = VehicleState::on_route(map, VehicleId(2), rb, sb, vb, !hdv_j);
        let first = PriorityAssignmentSet::from_pairs([(vi.id, vj.id)]).unwrap();
        let d = gap_decision(&vi, &[&vj], &first, map, &model).unwrap();
        prop_assert_eq!(d.pairs.clone(), vec![(vj.id, GapCase::AssignedPriority)]);
        prop_assert_eq!(d.delta, 1);
        let d = gap_decision(&vj, &[&vi], &first, map, &model).unwrap();
        prop_assert_eq!(d.pairs.clone(), vec![(vi.id, GapCase::AssignedYield)]);
        prop_assert_eq!(d.delta, 0);

        let none = PriorityAssignmentSet::new();
        let d = gap_decision(&vi, &[&vj], &none, map, &model).unwrap();
        let case = d.pairs[0].1;
        if hdv_j {
            // worst-case routes of the HDV may include ones vi must yield to
            prop_assert!(case != GapCase::AssignedPriority && case != GapCase::AssignedYield);
        } else if map.has_right_of_way(ra, rb) {
            prop_assert_eq!(case, GapCase::RightOfWay);
        } else {
            prop_assert!(case == GapCase::ModelAccept || case == GapCase::ModelReject);
        }
        prop_assert_eq!(d.clone(), gap_decision(&vi, &[&vj], &none, map, &model).unwrap());
    }

    #[test]
    fn aggregated_delta_is_the_minimum((ra, rb, sa, sb, va, vb) in conflicting_pair(), rc in 0usize..6, sc in 0.0f64..110.0) {
        let map = junction();
        let model = DriverModel::default();
        let vi = VehicleState::on_route(map, VehicleId(1), ra, sa, va, true);
        let vj = VehicleState::on_route(map, VehicleId(2), rb, sb, vb, true);
        let vk = VehicleState::on_route(map, VehicleId(3), RouteId(rc), sc, 6.0, true);
        let none = PriorityAssignmentSet::new();
        let d = gap_decision(&vi, &[&vj, &vk], &none, map, &model).unwrap();
        let min = d.pairs.iter().map(|(_, c)| c.delta()).min().unwrap_or(1);
        prop_assert_eq!(d.delta, min.min(1));
    }
}

#[test]
fn both_orderings_are_rejected() {
    let map = junction();
    let pair = map
        .route_ids()
        .flat_map(|a| map.route_ids().map(move |b| (a, b)))
        .find(|&(a, b)| map.routes_conflict(a, b))
        .unwrap();
    let vi = VehicleState::on_route(map, VehicleId(1), pair.0, 100.0, 5.0, true);
    let vj = VehicleState::on_route(map, VehicleId(2), pair.1, 100.0, 5.0, true);
    // the set type itself refuses the second ordering
    let mut p = PriorityAssignmentSet::from_pairs([(vi.id, vj.id)]).unwrap();
    assert!(p.insert(vj.id, vi.id).is_err());
    let d = gap_decision(&vi, &[&vj], &p, map, &DriverModel::default());
    assert!(!matches!(d, Err(DecisionError::InconsistentAssignment(..))));
}
