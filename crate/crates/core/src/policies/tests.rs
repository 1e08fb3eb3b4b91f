use super::*;
use crate::mesosim::{GroupObservation, SimParams, Trip};
use crate::netmodel::{build_grid_network, GreenDuration, IntersectionTopology, LaneGroup, PhaseAction, PhaseLogic, SignalTiming};
use proptest::prelude::*;

const CAP: u32 = 62;

/// Observation with every existing group at the given halted/present counts
/// (indexed by lane id - 1) on a three-lane road.
fn fixture(topology: IntersectionTopology, halted: [u32; 12], present: [u32; 12]) -> IntersectionObservation {
    let mut groups: [Option<GroupObservation>; 12] = Default::default();
    for (k, slot) in groups.iter_mut().enumerate() {
        let g = LaneGroup::from_lane_id(k as u8 + 1);
        if topology.has_group(g) {
            *slot = Some(GroupObservation { halted: halted[k], present: present[k].max(halted[k]), lanes: 1, lane_capacity: CAP });
        }
    }
    IntersectionObservation {
        node: 0,
        time: 100.0,
        topology,
        groups,
        current_phase: Some(PhaseAction::new(PhaseLogic::NsS, GreenDuration::Short)),
        in_clearance: false,
        next_decision: 105.0,
    }
}

fn empty(topology: IntersectionTopology) -> IntersectionObservation {
    fixture(topology, [0; 12], [0; 12])
}

#[test]
fn local_state_of_empty_cross() {
    let s = local_state(&empty(IntersectionTopology::Cross4));
    assert_eq!(s.len(), 17);
    let mut expect = [0.0; 17];
    expect[0] = 1.0;
    expect[16] = 1.0;
    assert_eq!(s, expect);
}

#[test]
fn clearance_zeroes_phase() {
    let mut o = empty(IntersectionTopology::Cross4);
    o.in_clearance = true;
    assert_eq!(phase_one_hot(&o), [0.0; 8]);
}

#[test]
fn t_variant_normalizes_by_fewer_lanes() {
    // Six halted on the south right-turn lane (lane id 7) in both layouts.
    let mut h = [0; 12];
    h[6] = 6;
    let cross = queue_block(&fixture(IntersectionTopology::Cross4, h, [0; 12]));
    let t = queue_block(&fixture(IntersectionTopology::TNorthBlocked, h, [0; 12]));
    // Cross4: north and south right+through lanes; T: only the south right lane.
    assert_eq!(cross[0], 6.0 / (4.0 * CAP as f64));
    assert_eq!(t[0], 6.0 / CAP as f64);
    assert!(t[0] > cross[0]);
}

#[test]
fn local_reward_fixture() {
    let h = [1; 12];
    let r = local_reward(&fixture(IntersectionTopology::Cross4, h, [0; 12]));
    assert_eq!(r, -12.0 / (12.0 * CAP as f64));
    let r2 = local_reward(&fixture(IntersectionTopology::Cross4, [2; 12], [0; 12]));
    assert_eq!(r2, 2.0 * r);
    assert_eq!(local_reward(&empty(IntersectionTopology::TEastBlocked)), 0.0);
}

#[test]
fn regionwide_shares_and_spillback() {
    let members: Vec<IntersectionObservation> = (0..3).map(|_| fixture(IntersectionTopology::Cross4, [16; 12], [16; 12])).collect();
    let refs: Vec<&IntersectionObservation> = members.iter().collect();
    let s = RegionSummary::from_members(&refs, 0.0);
    assert_eq!(s.phase_share, [1.0, 0.0, 0.0, 0.0]);
    assert_eq!(s.spillback, 1.0);
    assert_eq!(s.switching, 0.0);
}

#[test]
fn regionwide_mean_queue_is_member_average() {
    let mut a = [0; 12];
    a[1] = 10;
    let mut b = [0; 12];
    b[4] = 20;
    let mut c = [0; 12];
    c[2] = 5;
    let obs = [
        fixture(IntersectionTopology::Cross4, a, [0; 12]),
        fixture(IntersectionTopology::TWestBlocked, b, [0; 12]),
        fixture(IntersectionTopology::Cross4, c, [0; 12]),
    ];
    let refs: Vec<&IntersectionObservation> = obs.iter().collect();
    let s = RegionSummary::from_members(&refs, 0.0);
    let blocks: Vec<[f64; 4]> = obs.iter().map(queue_block).collect();
    for k in 0..4 {
        let hand = (blocks[0][k] + blocks[1][k] + blocks[2][k]) / 3.0;
        assert!((s.mean_queue[k] - hand).abs() < 1e-15);
    }
    let state = regionwide_state(&s, [1.0, 0.0, 0.0, 1.0]);
    assert_eq!(state.len(), 14);
    assert_eq!(&state[10..], &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn regionwide_reward_fixture() {
    let mut e = [Ema::new(0.9); 3];
    let terms = SmoothedTerms {
        queue_mean: 0.1,
        spillback: e[0].update(0.5),
        switching: e[1].update(0.25),
        exchange: e[2].update(2.0),
    };
    assert_eq!(regionwide_reward(&terms, [1.0, 1.0, 1.0]), -0.1 - 0.5 - 0.25 + 2.0);
    assert_eq!(regionwide_reward(&terms, [0.0; 3]), -0.1);
    let zero = SmoothedTerms { queue_mean: 0.0, spillback: 0.0, switching: 0.0, exchange: 0.0 };
    assert_eq!(regionwide_reward(&zero, [1.0, 2.0, 3.0]), 0.0);
}

#[test]
fn ema_smoothing() {
    let mut e = Ema::new(0.9);
    assert_eq!(e.update(10.0), 10.0);
    assert!((e.update(0.0) - 9.0).abs() < 1e-12);
}

#[test]
fn onehop_layout() {
    let own = fixture(IntersectionTopology::Cross4, [3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0], [7, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    let nb = fixture(IntersectionTopology::TWestBlocked, [2; 12], [2; 12]);
    let s = onehop_state(&own, [None, Some(&nb), None, None]);
    assert_eq!(s.len(), 74);
    let nonzero_slots: Vec<usize> =
        (0..4).filter(|k| s[k * ONEHOP_SLOT_WIDTH..(k + 1) * ONEHOP_SLOT_WIDTH].iter().any(|&x| x != 0.0)).collect();
    assert_eq!(nonzero_slots, vec![1]);
    assert_eq!(s[ONEHOP_SLOT_WIDTH + PHASE_WIDTH], 5.0 / 18.0);
    assert_eq!(&s[72..], &[4.0, 0.0]);
}

#[test]
fn onehop_reward_composes_local_rewards() {
    assert_eq!(onehop_reward([None; 4]), 0.0);
    let a = fixture(IntersectionTopology::Cross4, [1; 12], [0; 12]);
    let b = fixture(IntersectionTopology::TSouthBlocked, [4; 12], [0; 12]);
    let r = onehop_reward([Some(&a), None, Some(&b), None]);
    assert_eq!(r, local_reward(&a) + local_reward(&b));
}

#[test]
fn composite_weights() {
    let w = RewardWeights { rho_loc: 1.0, rho_reg: 0.0, ema_factor: 0.9 };
    assert_eq!(composite_reward(-2.0, -5.0, &w), -2.0);
    let oh = baseline_variants(ModelTag::Onehop).weights;
    assert_eq!((oh.rho_loc, oh.rho_reg), (0.7, 0.3));
    let rw = baseline_variants(ModelTag::Regionwide).weights;
    assert_eq!((rw.rho_loc, rw.rho_reg), (0.5, 0.5));
}

#[test]
fn variant_widths() {
    assert_eq!(baseline_variants(ModelTag::PartiallySemictde).state_width(), 17);
    assert_eq!(baseline_variants(ModelTag::FullyDecentralized).state_width(), 17);
    assert_eq!(baseline_variants(ModelTag::Regionwide).state_width(), 31);
    assert_eq!(baseline_variants(ModelTag::Onehop).regional.width(), 74);
    assert_eq!(baseline_variants(ModelTag::FullyDecentralized).sharing, Sharing::PerIntersection);
    assert!(ModelTag::parse("actuated").is_err());
    for tag in [ModelTag::FullyDecentralized, ModelTag::PartiallySemictde, ModelTag::Regionwide, ModelTag::Onehop] {
        assert_eq!(ModelTag::parse(tag.name()).unwrap(), tag);
    }
}

#[test]
fn boundary_indicators_on_small_grid() {
    let net = build_grid_network(2, 2, 100.0, 3, &[true; 4], SignalTiming::default()).unwrap();
    let p = RegionPartition::new(&net, vec![vec![0, 1], vec![2, 3]]).unwrap();
    // Node 0 (north-west): north boundary leg, east neighbor 1 in region, south neighbor 2 outside.
    assert_eq!(boundary_indicators(&net, &p, 0), [1.0, 0.0, 1.0, 0.0]);
    assert_eq!(region_neighbors(&net, &p, 0), [None, Some(1), None, None]);
}

fn grid() -> RoadNetwork {
    build_grid_network(2, 2, 139.0, 3, &[true; 4], SignalTiming::default()).unwrap()
}

/// Green lengths chosen by the actuated controller at node 0.
fn actuated_greens(net: &RoadNetwork, trips: Vec<Trip>, horizon: f64) -> Vec<(PhaseLogic, f64, f64)> {
    let mut sim = Simulation::new(net, trips, SimParams { horizon, ..SimParams::default() }).unwrap();
    run_controller(&mut sim, &mut ActuatedController::new(net, ActuatedParams::default())).unwrap();
    // Merge consecutive extensions of the same logic into one green.
    let mut out: Vec<(PhaseLogic, f64, f64)> = Vec::new();
    for d in sim.decisions().iter().filter(|d| d.node == 0) {
        match out.last_mut() {
            Some(last) if last.0 == d.logic && d.clearance == 0.0 => last.2 += d.green,
            _ => out.push((d.logic, d.time + d.clearance, d.green)),
        }
    }
    out
}

#[test]
fn actuated_empty_network_round_robin_at_min_green() {
    let net = grid();
    let greens = actuated_greens(&net, vec![], 200.0);
    let logics: Vec<PhaseLogic> = net.intersections[0].admissible.logics().collect();
    for (k, g) in greens.iter().enumerate().take(greens.len() - 1) {
        assert_eq!(g.0, logics[k % logics.len()]);
        assert_eq!(g.2, 5.0);
    }
}

#[test]
fn actuated_holds_to_max_under_continuous_arrivals() {
    let net = grid();
    let logics: Vec<PhaseLogic> = net.intersections[0].admissible.logics().collect();
    // Vehicles entering node 0 from its boundary leg every second, turning
    // so that the first logic serves them.
    let b = net.boundaries.iter().position(|b| b.node == 0).unwrap();
    let entry = net.boundaries[b].entry;
    let dest = (0..net.boundaries.len())
        .find(|&d| {
            d != b && {
                let r = net.shortest_route(b, d).unwrap();
                logics[0].serves(net.turn_group(entry, r[1]).unwrap())
            }
        })
        .unwrap();
    let route = net.shortest_route(b, dest).unwrap();
    let trips = (0..300).map(|k| Trip { entry_time: k as f64, origin: b, destination: dest, route: route.clone() }).collect();
    let greens = actuated_greens(&net, trips, 300.0);
    assert_eq!(greens[0].0, logics[0]);
    assert_eq!(greens[0].2, 5.0, "first green precedes any arrival");
    let held = greens.iter().find(|g| g.0 == logics[0] && g.1 > 20.0).unwrap();
    assert_eq!(held.2, 45.0);
}

#[test]
fn actuated_gaps_out_after_last_arrival() {
    // Short approaches: two seconds of travel.
    let net = build_grid_network(2, 2, 27.8, 3, &[true; 4], SignalTiming::default()).unwrap();
    let logics: Vec<PhaseLogic> = net.intersections[0].admissible.logics().collect();
    let b = net.boundaries.iter().position(|b| b.node == 0).unwrap();
    let entry = net.boundaries[b].entry;
    let dest = (0..net.boundaries.len())
        .find(|&d| d != b && logics[0].serves(net.turn_group(entry, net.shortest_route(b, d).unwrap()[1]).unwrap()))
        .unwrap();
    let route = net.shortest_route(b, dest).unwrap();
    // One vehicle reaching the stop line at t = 4, during the first 5 s green.
    let trips = vec![Trip { entry_time: 2.0, origin: b, destination: dest, route }];
    let greens = actuated_greens(&net, trips, 60.0);
    assert_eq!(greens[0].0, logics[0]);
    assert_eq!(greens[0].2, 5.0 + 3.0);
    assert_eq!(greens[1].0, logics[1]);
}

fn any_topology() -> impl Strategy<Value = IntersectionTopology> {
    prop::sample::select(IntersectionTopology::ALL.to_vec())
}

proptest! {
    #[test]
    fn feature_invariants(
        topos in prop::collection::vec(any_topology(), 1..5),
        halted in prop::collection::vec(prop::array::uniform12(0u32..62), 5),
        extra in prop::collection::vec(prop::array::uniform12(0u32..10), 5),
        clearance in prop::collection::vec(any::<bool>(), 5),
    ) {
        let obs: Vec<IntersectionObservation> = topos
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let present: [u32; 12] = std::array::from_fn(|g| halted[k][g] + extra[k][g]);
                let mut o = fixture(t, halted[k], present);
                o.in_clearance = clearance[k];
                o
            })
            .collect();
        for o in &obs {
            let s = local_state(o);
            prop_assert_eq!(s.len(), LOCAL_WIDTH);
            prop_assert!(s.iter().all(|&x| x >= 0.0));
            prop_assert!(local_reward(o) <= 0.0);
            prop_assert!(advancing_counts(o).iter().all(|&x| x >= 0.0));
        }
        let refs: Vec<&IntersectionObservation> = obs.iter().collect();
        let s = RegionSummary::from_members(&refs, 0.0);
        let share: f64 = s.phase_share.iter().sum();
        if clearance[..obs.len()].iter().any(|&c| c) {
            prop_assert!(share <= 1.0 + 1e-12);
        } else {
            prop_assert!((share - 1.0).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&s.spillback));
        prop_assert!((0.0..=1.0).contains(&s.switching));
        let nb: [Option<&IntersectionObservation>; 4] = std::array::from_fn(|k| obs.get(k));
        prop_assert!(onehop_reward(nb) <= 0.0);
    }
}
