use lanesim::demand::{Trip, VehicleType};
use lanesim::engine::{prepare, run, EngineError, Mode, SimConfig, Simulation, TripRecord};
use lanesim::network::{parse_network, NodeId};
use lanesim::partitioning::{PartitionAssignment, PartitionMethod};
use lanesim::scenario::{generate_grid_scenario, GridSpec};

/// Free-road IDM from standstill integrated at `h`; time to cover `len`.
fn free_road_time(len: f64, v0: f64, a: f64, delta: f64, h: f64) -> f64 {
    let (mut t, mut x, mut v) = (0.0, 0.0, 0.0f64);
    while x < len {
        let acc = a * (1.0 - (v / v0).powf(delta));
        x += v * h + 0.5 * acc * h * h;
        v += acc * h;
        t += h;
    }
    t
}

#[test]
fn single_vehicle_matches_fine_integration() {
    let net = parse_network("node,0,0,0,0\nnode,1,100,0,0\nedge,0,0,1,100,1,10\n").unwrap();
    let trip = Trip { id: 1, origin: NodeId(0), destination: NodeId(1), depart_s: 0.0, vehicle_type: VehicleType::Car };
    let cfg = SimConfig { end_s: 60.0, check_invariants: true, ..Default::default() };
    let (records, _) = run(&cfg, &net, &[trip]).unwrap();
    let tt = records[0].travel_time_s.unwrap();
    let oracle = free_road_time(100.0, 10.0, cfg.car.a, cfg.car.delta, cfg.dt / 100.0);
    assert!(tt >= 10.0, "faster than free flow: {tt}");
    assert!((tt - oracle).abs() <= cfg.dt + 1e-9, "engine {tt} vs oracle {oracle}");
    assert_eq!(records[0].distance_m, 100.0);
}

fn manhattan(a: NodeId, b: NodeId, cols: u32) -> f64 {
    let (ra, ca) = (a.0 / cols, a.0 % cols);
    let (rb, cb) = (b.0 / cols, b.0 % cols);
    100.0 * (ra.abs_diff(rb) + ca.abs_diff(cb)) as f64
}

#[test]
fn every_trip_recorded_once_with_shortest_distance() {
    let s = generate_grid_scenario(5, 5, 100, 11).unwrap();
    let cfg = SimConfig { end_s: 5400.0, check_invariants: true, ..Default::default() };
    let (records, m) = run(&cfg, &s.net, &s.trips).unwrap();
    assert_eq!(records.len(), 100);
    assert_eq!(m.finished, 100);
    for (r, t) in records.iter().zip(&s.trips) {
        assert_eq!(r.trip, t.id);
        assert!(r.complete);
        assert_eq!(r.distance_m, manhattan(t.origin, t.destination, 5));
        let (e, a) = (r.enter_network_s.unwrap(), r.arrive_s.unwrap());
        assert!(a >= e && e >= r.depart_s);
        assert_eq!(r.edge_entries.len() as f64, r.distance_m / 100.0);
    }
}

fn busy_scenario() -> lanesim::scenario::Scenario {
    let spec = GridSpec { window_s: 600.0, ..GridSpec::new(4, 4, 1500, 3) };
    lanesim::scenario::generate(&spec).unwrap()
}

#[test]
fn strict_records_independent_of_shards_and_method() {
    let s = busy_scenario();
    let base = SimConfig { end_s: 900.0, check_invariants: true, ..Default::default() };
    let (want, _) = run(&base, &s.net, &s.trips).unwrap();
    assert!(want.iter().filter(|r| r.complete).count() > 1000);
    for method in [PartitionMethod::Balanced, PartitionMethod::Unbalanced, PartitionMethod::Random] {
        for k in [2, 4] {
            let cfg = SimConfig { shards: k, method, ..base.clone() };
            let (got, m) = run(&cfg, &s.net, &s.trips).unwrap();
            assert!(m.ghost_edges > 0);
            assert!(got == want, "{method} k={k} diverged");
        }
    }
}

#[test]
fn strict_records_independent_of_worker_count() {
    let s = busy_scenario();
    let base = SimConfig { end_s: 600.0, shards: 2, ..Default::default() };
    let (a, _) = run(&SimConfig { workers: Some(1), ..base.clone() }, &s.net, &s.trips).unwrap();
    let (b, _) = run(&SimConfig { workers: Some(4), ..base }, &s.net, &s.trips).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fast_mode_keeps_invariants() {
    let s = busy_scenario();
    let cfg = SimConfig { end_s: 900.0, shards: 4, mode: Mode::Fast, check_invariants: true, ..Default::default() };
    let (records, _) = run(&cfg, &s.net, &s.trips).unwrap();
    assert_eq!(records.len(), s.trips.len());
}

fn sim_parts(s: &lanesim::scenario::Scenario, cfg: &SimConfig) -> (Vec<Trip>, Vec<lanesim::demand::Route>, PartitionAssignment) {
    let (trips, routes, _) = prepare(&s.net, &s.trips);
    let a = lanesim::engine::partition_for(cfg, &s.net, &trips, &routes).unwrap();
    (trips, routes, a)
}

#[test]
fn checkpoint_mid_run_resumes_identically() {
    let s = busy_scenario();
    let cfg = SimConfig { end_s: 700.0, shards: 2, ..Default::default() };
    let (trips, routes, a) = sim_parts(&s, &cfg);

    let mut whole = Simulation::new(cfg.clone(), &s.net, trips.clone(), routes.clone(), a.clone(), 0).unwrap();
    let (want, _) = whole.run_to_end().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = Simulation::new(cfg.clone(), &s.net, trips.clone(), routes.clone(), a, 0).unwrap();
    let mut got: Vec<TripRecord> = Vec::new();
    for _ in 0..400 {
        got.extend(first.step().unwrap());
    }
    first.checkpoint(&path).unwrap();
    drop(first);
    let mut resumed = Simulation::restore(&path, &s.net, trips, routes).unwrap();
    assert_eq!(resumed.step_index(), 400);
    resumed.check_invariants().unwrap();
    let (rest, _) = resumed.run_to_end().unwrap();
    got.extend(rest);
    got.sort_by_key(|r| r.trip);
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g, w);
    }
}

#[test]
fn checkpoint_at_start_and_damage() {
    let s = busy_scenario();
    let cfg = SimConfig { end_s: 100.0, ..Default::default() };
    let (trips, routes, a) = sim_parts(&s, &cfg);
    let sim = Simulation::new(cfg, &s.net, trips.clone(), routes.clone(), a, 0).unwrap();
    let bytes = sim.checkpoint_bytes();
    let back = Simulation::restore_bytes(&bytes, &s.net, trips.clone(), routes.clone()).unwrap();
    assert_eq!(back.checkpoint_bytes(), bytes);
    assert_eq!(back.step_index(), 0);

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0xff;
    assert!(matches!(
        Simulation::restore_bytes(&bad, &s.net, trips.clone(), routes.clone()),
        Err(EngineError::Checkpoint(_))
    ));
    assert!(matches!(
        Simulation::restore_bytes(&bytes[..bytes.len() - 10], &s.net, trips.clone(), routes.clone()),
        Err(EngineError::Checkpoint(_))
    ));
    let other = generate_grid_scenario(4, 4, 10, 99).unwrap();
    let (t2, r2, _) = prepare(&other.net, &other.trips);
    assert!(Simulation::restore_bytes(&bytes, &s.net, t2, r2).is_err());
}

#[test]
fn zero_trips_leave_maps_free() {
    let s = generate_grid_scenario(3, 4, 0, 0).unwrap();
    let cfg = SimConfig { end_s: 20.0, shards: 2, check_invariants: true, ..Default::default() };
    let (trips, routes, a) = sim_parts(&s, &cfg);
    let mut sim = Simulation::new(cfg, &s.net, trips, routes, a, 0).unwrap();
    while !sim.is_done() {
        assert!(sim.step().unwrap().is_empty());
        assert!(sim.shards().iter().all(|sh| sh.map.occupied_count() == 0));
    }
}
