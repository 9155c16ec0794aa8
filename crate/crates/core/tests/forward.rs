use sourcenet_core::forward::{
    half_duration, load_velocity_model, simulate_event, travel_time, EventGeom, Phase, SimConfig, StationGeom,
    VelocityModel,
};
use sourcenet_core::mtmath::{mw_to_m0, sdr_to_mt, DoubleCouple, MomentTensor};

const KM_PER_DEG: f64 = 6371.0 * std::f64::consts::PI / 180.0;

fn two_layer() -> VelocityModel {
    load_velocity_model("two", "10 6.0 3.5 2.7\n0 8.0 4.5 3.3").unwrap()
}

/// Minimizes a 1-D function over `[0, hi]` on a uniform grid.
fn grid_min(hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    (0..=n)
        .map(|i| f(hi * i as f64 / n as f64))
        .fold(f64::INFINITY, f64::min)
}

/// Fermat first arrival for a source in the top layer of a layer-over-
/// half-space model: the straight direct ray, or the path that runs down to
/// the interface, along it at the lower speed, and back up. The head path
/// separates into a down-leg and an up-leg offset, each found by grid search.
fn fermat_first_arrival(h: f64, v1: f64, v2: f64, depth: f64, dist: f64) -> f64 {
    let direct = dist.hypot(depth) / v1;
    let n = 100_000;
    let down = grid_min(dist, n, |a| a.hypot(h - depth) / v1 - a / v2);
    let up = grid_min(dist, n, |c| c.hypot(h) / v1 - c / v2);
    // Valid only when the two legs fit inside the epicentral distance.
    let a_opt = (h - depth) * v1 / (v2 * v2 - v1 * v1).sqrt();
    let c_opt = h * v1 / (v2 * v2 - v1 * v1).sqrt();
    let head = if a_opt + c_opt <= dist {
        dist / v2 + down + up
    } else {
        f64::INFINITY
    };
    direct.min(head)
}

#[test]
fn two_layer_first_arrivals_match_fermat_oracle() {
    let m = two_layer();
    for (phase, v1, v2) in [(Phase::P, 6.0, 8.0), (Phase::S, 3.5, 4.5)] {
        for depth in [2.0, 5.0, 8.0] {
            for dist in [0.5, 5.0, 20.0, 35.0, 60.0, 100.0] {
                let got = travel_time(&m, depth, dist, phase).unwrap().time;
                let want = fermat_first_arrival(10.0, v1, v2, depth, dist);
                assert!(
                    (got - want).abs() < 1e-3,
                    "{phase:?} depth {depth} dist {dist}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn first_arrival_time_is_monotonic_in_distance() {
    let m = two_layer();
    for phase in [Phase::P, Phase::S] {
        let mut prev = 0.0;
        for i in 0..=400 {
            let t = travel_time(&m, 12.0, i as f64 * 0.5, phase).unwrap().time;
            assert!(t >= prev - 1e-12);
            prev = t;
        }
    }
}

fn event(depth: f64) -> EventGeom {
    EventGeom {
        lat: 0.0,
        lon: 0.0,
        depth,
        origin_time: 2.0,
    }
}

/// A station at `dist` km and azimuth `az` from (0, 0).
fn station(dist: f64, az: f64) -> StationGeom {
    let (s, c) = az.to_radians().sin_cos();
    StationGeom {
        name: format!("S{dist:.0}_{az:.0}"),
        lat: dist * c / KM_PER_DEG,
        lon: dist * s / KM_PER_DEG,
    }
}

fn strike_slip(mw: f64) -> MomentTensor {
    sdr_to_mt(&DoubleCouple::new(0.0, 90.0, 0.0, mw_to_m0(mw)))
}

fn fine() -> SimConfig {
    SimConfig {
        rate: 200.0,
        duration: 60.0,
    }
}

fn p_peak(mt: &MomentTensor, depth: f64, st: &StationGeom, model: &VelocityModel) -> f64 {
    let sim = simulate_event(mt, &event(depth), std::slice::from_ref(st), model, &fine()).unwrap();
    let tr = &sim.event.stations[0].1;
    tr.peak_between(tr.p_pick - 1.0, tr.p_pick + 2.0)
}

#[test]
fn p_amplitude_falls_as_one_over_distance() {
    let m = VelocityModel::half_space("h", 6.0, 3.5, 2.7).unwrap();
    let mt = strike_slip(3.0);
    for az in [20.0, 45.0, 200.0] {
        let near = p_peak(&mt, 10.0, &station(40.0, az), &m);
        let far = p_peak(&mt, 20.0, &station(80.0, az), &m);
        assert!(near > 0.0);
        assert!((near / far - 2.0).abs() < 0.02, "az {az}: ratio {}", near / far);
    }
}

#[test]
fn nodal_plane_station_sees_almost_no_p() {
    let m = VelocityModel::half_space("h", 6.0, 3.5, 2.7).unwrap();
    let mt = strike_slip(3.0);
    let lobe = p_peak(&mt, 10.0, &station(30.0, 45.0), &m);
    for az in [0.0, 90.0, 180.0, 270.0] {
        let nodal = p_peak(&mt, 10.0, &station(30.0, az), &m);
        assert!(nodal < 0.01 * lobe, "az {az}: {nodal} vs {lobe}");
    }
}

#[test]
fn traces_are_linear_in_moment_at_fixed_pulse_width() {
    // Below Mw ~1.4 the half-duration sits on its lower clip, so only the
    // amplitude changes with moment.
    let stations: Vec<StationGeom> = [(15.0, 10.0), (40.0, 130.0), (70.0, 250.0)]
        .iter()
        .map(|&(d, a)| station(d, a))
        .collect();
    let base = sdr_to_mt(&DoubleCouple::new(33.0, 60.0, -70.0, mw_to_m0(0.5)));
    let a = simulate_event(&base, &event(8.0), &stations, &two_layer(), &SimConfig::default()).unwrap();
    let b = simulate_event(
        &base.scaled(3.0),
        &event(8.0),
        &stations,
        &two_layer(),
        &SimConfig::default(),
    )
    .unwrap();
    for ((_, ta), (_, tb)) in a.event.stations.iter().zip(&b.event.stations) {
        let peak = ta.peak();
        assert!(peak > 0.0);
        for (ca, cb) in ta.data.iter().zip(&tb.data) {
            for (x, y) in ca.iter().zip(cb) {
                assert!((3.0 * x - y).abs() <= 1e-9 * peak);
            }
        }
    }
}

#[test]
fn picks_follow_travel_times_and_onsets() {
    let model = two_layer();
    let ev = event(7.0);
    let stations: Vec<StationGeom> = (0..12)
        .map(|i| station(30.0 + 7.0 * i as f64, 30.0 * i as f64 + 7.0))
        .collect();
    let mt = sdr_to_mt(&DoubleCouple::new(120.0, 35.0, 80.0, mw_to_m0(3.5)));
    let cfg = SimConfig::default();
    let sim = simulate_event(&mt, &ev, &stations, &model, &cfg).unwrap();
    assert_eq!(sim.event.stations.len(), stations.len());
    for (st, tr) in &sim.event.stations {
        let (dist, _) = sourcenet_core::forward::geo_to_local(&ev, st);
        let tp = travel_time(&model, ev.depth, dist, Phase::P).unwrap().time;
        let ts = travel_time(&model, ev.depth, dist, Phase::S).unwrap().time;
        assert_eq!(tr.p_pick, ev.origin_time + tp);
        assert_eq!(tr.s_pick, ev.origin_time + ts);
        assert!(tr.s_pick > tr.p_pick);
        // The wavelet is centered τ after the pick: its first lobe peaks at
        // pick + τ/2 and its support starts 2τ before the pick.
        let tau = half_duration(sim.event.label.mw);
        let before = tr.peak_between(0.0, tr.p_pick - 2.0 * tau - 1.0 / cfg.rate);
        let p_phase = tr.peak_between(tr.p_pick, tr.s_pick - 2.0 * tau);
        assert!(p_phase > 0.0);
        assert!(before <= 1e-3 * p_phase, "{}: {before} vs {p_phase}", st.name);
        let lobe = tr.peak_between(tr.p_pick, tr.p_pick + tau);
        assert!(lobe >= 0.9 * p_phase, "{}: first lobe {lobe} vs {p_phase}", st.name);
    }
    let again = simulate_event(&mt, &ev, &stations, &model, &cfg).unwrap();
    assert_eq!(again, sim);
}
