use super::*;
use crate::model::canonicalize;

fn st(x: &[f64]) -> OpinionState {
    OpinionState::unweighted(x.to_vec()).unwrap()
}

fn both() -> [SimOptions; 2] {
    [
        SimOptions::default(),
        SimOptions { integrator: Integrator::ExactExpm, ..SimOptions::default() },
    ]
}

#[test]
fn derivative_examples() {
    let s = st(&[0.2, 0.8]);
    let d = derivative(&s, &build_graph(&s)).unwrap();
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] + 0.6).abs() < 1e-15);
    let s = st(&[0.0, 2.0]);
    assert_eq!(derivative(&s, &build_graph(&s)).unwrap(), vec![0.0, 0.0]);
    let s = st(&[0.0, 0.9, 1.8]);
    let d = derivative(&s, &build_graph(&s)).unwrap();
    assert!((d[0] - 0.9).abs() < 1e-15 && d[1].abs() < 1e-15 && (d[2] + 0.9).abs() < 1e-15);
    assert!(derivative(&s, &InteractionGraph::from_edges(2, &[]).unwrap()).is_err());
}

#[test]
fn two_agent_segment_matches_closed_form() {
    for opts in both() {
        let s = st(&[0.0, 0.5]);
        let (out, ev) = integrate_segment(&s, &build_graph(&s), 1.0, &opts).unwrap();
        assert!(ev.is_none());
        let gap = out.opinions[1] - out.opinions[0];
        assert!((gap - 0.5 * (-2.0f64).exp()).abs() < 1e-9, "{:?}: {gap}", opts.integrator);
        assert_eq!(out.time, 1.0);
    }
}

#[test]
fn three_agent_connect_event() {
    for opts in both() {
        let s = st(&[0.0, 0.9, 1.8]);
        let (out, ev) = integrate_segment(&s, &build_graph(&s), 5.0, &opts).unwrap();
        let ev = ev.expect("the outer pair must connect");
        assert_eq!(ev.pair, (0, 2));
        assert_eq!(ev.kind, EventKind::Connect);
        let gap = out.opinions[2] - out.opinions[0];
        assert!((gap - 1.0).abs() <= 1e-10);
        assert!(gap < 1.0);
        // x_2 − x_0 = 1.8 e^{−t}
        assert!((ev.time - 1.8f64.ln()).abs() < 1e-9, "{:?}: {}", opts.integrator, ev.time);
    }
}

#[test]
fn equilibrium_segment_is_static() {
    for opts in both() {
        let s = st(&[0.0, 1.5]);
        let (out, ev) = integrate_segment(&s, &build_graph(&s), 100.0, &opts).unwrap();
        assert!(ev.is_none());
        assert_eq!(out.opinions, s.opinions);
        assert!(integrate_segment(&s, &build_graph(&s), 0.0, &opts).is_err());
    }
}

fn rel_velocity(s: &OpinionState, g: &InteractionGraph, i: usize, j: usize) -> f64 {
    let d = derivative(s, g).unwrap();
    d[j] - d[i]
}

#[test]
fn disconnect_adds_both_weights_to_relative_velocity() {
    // outer agents pull the boundary pair apart
    let s = OpinionState::new(vec![-0.9, 0.0, 1.0, 1.9], vec![2.0, 1.0, 1.0, 2.0], 0.0).unwrap();
    let g0 = InteractionGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let ev = TransitionEvent { time: 0.0, pair: (1, 2), kind: EventKind::Disconnect, boundary_gap: 0.0 };
    let g1 = apply_transition(&s, &g0, &ev, &SimOptions::default()).unwrap();
    assert!(!g1.contains(1, 2));
    let before = rel_velocity(&s, &g0, 1, 2);
    let after = rel_velocity(&s, &g1, 1, 2);
    assert!((before - 1.6).abs() < 1e-12);
    assert!((after - (before + 2.0)).abs() < 1e-12);
    assert!(after > 0.0);
}

#[test]
fn degenerate_boundary_is_refused() {
    // weights chosen so that both boundary agents are at rest
    let s = OpinionState::new(vec![-0.9, 0.0, 1.0, 1.9], vec![10.0 / 9.0, 1.0, 1.0, 10.0 / 9.0], 0.0).unwrap();
    let g0 = InteractionGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    assert!(rel_velocity(&s, &g0, 1, 2).abs() < 1e-15);
    let ev = TransitionEvent { time: 0.0, pair: (1, 2), kind: EventKind::Disconnect, boundary_gap: 0.0 };
    let err = apply_transition(&s, &g0, &ev, &SimOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ProblematicBoundary { i: 1, j: 2, .. }), "{err:?}");
}

#[test]
fn second_boundary_pair_is_reported() {
    let s = st(&[0.0, 1.0, 2.0]);
    let g0 = InteractionGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let ev = TransitionEvent { time: 0.0, pair: (0, 1), kind: EventKind::Disconnect, boundary_gap: 0.0 };
    let err = apply_transition(&s, &g0, &ev, &SimOptions::default()).unwrap_err();
    assert!(matches!(err, Error::SimultaneousEvents { count: 2, .. }), "{err:?}");
}

#[test]
fn transition_kind_must_match_graph() {
    let s = st(&[0.0, 1.0]);
    let g0 = InteractionGraph::from_edges(2, &[]).unwrap();
    let ev = TransitionEvent { time: 0.0, pair: (0, 1), kind: EventKind::Disconnect, boundary_gap: 0.0 };
    assert!(apply_transition(&s, &g0, &ev, &SimOptions::default()).is_err());
}

#[test]
fn merge_examples() {
    let opts = SimOptions::default();
    let m = merge_coincident(&st(&[1.0, 1.0 + 1e-12]), &opts);
    assert_eq!(m.weights, vec![2.0]);
    assert!((m.opinions[0] - (1.0 + 5e-13)).abs() < 1e-15);
    let s = st(&[0.0, 1.0, 2.0]);
    assert_eq!(merge_coincident(&s, &opts), s);
    let s = OpinionState::new(vec![0.0, 1e-9, 5.0], vec![1.0, 3.0, 1.0], 0.0).unwrap();
    let m = merge_coincident(&s, &opts);
    assert_eq!(m.weights, vec![4.0, 1.0]);
    assert!((m.opinions[0] - 7.5e-10).abs() < 1e-22);
    assert_eq!(m.opinions[1], 5.0);
}

#[test]
fn simulate_two_agents_to_consensus() {
    for opts in both() {
        let t = simulate(&st(&[-0.25, 0.25]), &opts).unwrap();
        assert!(t.converged);
        assert!(t.events.is_empty());
        assert!(t.terminal.opinions.iter().all(|x| x.abs() < 1e-8));
        // merged once 0.5 e^{-2t} fell below the merge tolerance
        let t_merge = (0.5f64 / 1e-8).ln() / 2.0;
        assert!(t.terminal.time <= t_merge + 0.11, "{}", t.terminal.time);
        assert!(t.samples.windows(2).all(|p| p[0].time < p[1].time));
    }
}

#[test]
fn simulate_equilibrium_is_immediate() {
    let s = st(&[0.0, 1.5]);
    let t = simulate(&s, &SimOptions::default()).unwrap();
    assert!(t.converged);
    assert!(t.events.is_empty());
    assert_eq!(t.terminal, s);
}

#[test]
fn pair_at_unit_distance_is_rejected() {
    let err = simulate(&st(&[0.0, 1.0]), &SimOptions::default()).unwrap_err();
    assert_eq!(err, Error::NonGenericInitial(0, 1));
}

#[test]
fn three_agents_merge_after_connect() {
    for opts in both() {
        let t = simulate(&st(&[0.0, 0.9, 1.8]), &opts).unwrap();
        assert!(t.converged);
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.events[0].kind, EventKind::Connect);
        assert!(t.terminal.opinions.iter().all(|x| (x - 0.9).abs() < 1e-8));
    }
}

#[test]
fn zeno_guard_trips() {
    let opts = SimOptions { max_transitions_per_unit_time: 1, ..SimOptions::default() };
    let s = st(&[0.0, 0.6, 1.2, 1.8, 2.4, 3.0]);
    let unguarded = simulate(&s, &SimOptions::default()).unwrap();
    assert!(unguarded.events.len() >= 2);
    assert!(matches!(simulate(&s, &opts), Err(Error::ZenoGuardTripped { .. })));
}

#[test]
fn perturbing_agent_setup() {
    let eq = OpinionState::new(vec![0.0, 1.5], vec![1.0, 1.0], 0.0).unwrap();
    let s = add_perturbing_agent(&eq, 0.01, 0.75).unwrap();
    assert_eq!(s.opinions, vec![0.0, 0.75, 1.5]);
    assert_eq!(s.weights, vec![1.0, 0.01, 1.0]);
    assert!(add_perturbing_agent(&eq, 0.0, 0.3).is_err());
    assert!(add_perturbing_agent(&st(&[0.0, 0.5]), 0.01, 0.3).is_err());
}

#[test]
fn perturber_at_center_merges_unstable_pair() {
    let eq = OpinionState::new(vec![0.0, 1.5], vec![1.0, 1.0], 0.0).unwrap();
    let s = add_perturbing_agent(&eq, 0.01, 0.75).unwrap();
    let t = simulate(&s, &SimOptions { sample_interval: 1.0, ..SimOptions::default() }).unwrap();
    assert!(t.converged);
    assert!(t.terminal.opinions.iter().all(|x| (x - 0.75).abs() < 1e-7));
}

#[test]
fn perturber_beyond_reach_joins_one_cluster() {
    let eq = OpinionState::new(vec![0.0, 2.5], vec![1.0, 1.0], 0.0).unwrap();
    // 1.25 is out of reach of both: a perturber there never moves
    let s = add_perturbing_agent(&eq, 0.01, 1.25).unwrap();
    let t = simulate(&s, &SimOptions::default()).unwrap();
    assert_eq!(t.terminal.opinions, s.opinions);
    let s = add_perturbing_agent(&eq, 0.01, 0.9).unwrap();
    let t = simulate(&s, &SimOptions::default()).unwrap();
    assert!(t.converged);
    let a = t.terminal.opinions[0];
    assert!((a - 0.009 / 1.01).abs() < 1e-8);
    assert_eq!(t.terminal.opinions[2], 2.5);
}

#[test]
fn jitter_is_seeded_and_small() {
    let s = st(&[0.0, 0.5, 3.0]);
    let a = jitter(&s, 1e-12, 5).unwrap();
    let b = jitter(&s, 1e-12, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.opinions.iter().zip(&s.opinions).all(|(p, q)| (p - q).abs() <= 3e-12));
}

#[test]
fn explicit_sample_times_are_honoured() {
    let opts = SimOptions { sample_interval: 10.0, sample_times: vec![0.05, 0.2, 30.0], ..SimOptions::default() };
    let t = simulate(&st(&[0.0, 0.5]), &opts).unwrap();
    let times: Vec<f64> = t.samples.iter().map(|s| s.time).collect();
    assert_eq!(&times[..3], &[0.0, 0.05, 0.2]);
    assert!(times.contains(&30.0));
    let g = t.samples[2].opinions[1] - t.samples[2].opinions[0];
    assert!((g - 0.5 * (-0.4f64).exp()).abs() < 1e-9);
}

#[test]
fn integrators_agree_on_random_instances() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for trial in 0..30 {
        let n = rng.gen_range(2..=50);
        let span = rng.gen_range(1.0..8.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..span)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let s = canonicalize(&raw, Some(&w)).unwrap();
        let [rk, ex] = both();
        let a = simulate(&s, &rk).unwrap();
        let b = simulate(&s, &ex).unwrap();
        assert!(a.converged && b.converged);
        for (p, q) in a.terminal.opinions.iter().zip(&b.terminal.opinions) {
            assert!((p - q).abs() < 1e-6, "trial {trial}: {p} vs {q}");
        }
    }
}

#[test]
fn exact_integrator_refuses_large_systems() {
    let s = st(&(0..600).map(|i| i as f64 * 0.0123).collect::<Vec<_>>());
    let opts = SimOptions { integrator: Integrator::ExactExpm, ..SimOptions::default() };
    let r = simulate(&s, &opts);
    assert!(matches!(r, Err(Error::InvalidArgument(_))), "{:?}", r.map(|t| t.converged));
}
