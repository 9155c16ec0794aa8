mod common;

use common::{dataset, dc_label, rng, tiny};
use sourcenet_core::features::NormStats;
use sourcenet_core::mtmath::{label_to_mt, SourceLabel};
use sourcenet_nn::model::init_params;
use sourcenet_train::evalx::metrics::EventRow;
use sourcenet_train::evalx::{
    azimuth_profile, evaluate, gradcam, kagan_between, latents_csv, metrics_csv, parse_metrics_csv, render_gradcam,
    render_report, AttentionSource, CamTarget, MetricsReport, ReportInput,
};
use sourcenet_train::Model;

fn model(seed: u64) -> Model {
    let config = tiny();
    Model {
        params: init_params(&config, seed).unwrap(),
        config,
        norm: NormStats::identity(),
    }
}

fn row(id: usize, truth: [f32; 6], pred: [f32; 6]) -> EventRow {
    EventRow {
        id: format!("e{id}"),
        n_stations: 6,
        truth,
        pred,
        kagan: kagan_between(&truth, &pred),
    }
}

#[test]
fn perfect_predictions_score_zero() {
    let mut r = rng(1);
    let rows: Vec<_> = (0..50)
        .map(|i| {
            let l = dc_label(&mut r);
            row(i, l, l)
        })
        .collect();
    let m = MetricsReport::from_pairs(rows);
    assert!(m.kagan_mean < 1e-3, "{}", m.kagan_mean);
    assert_eq!(m.mw_mae, 0.0);
    assert_eq!(m.dev_mae_mean, 0.0);
    assert_eq!(m.kagan_hist[0], 50);
}

#[test]
fn fixed_guess_against_random_mechanisms() {
    // Uniformly random double couples sit 75.15° on average from any fixed one.
    let mut r = rng(2);
    let guess = dc_label(&mut r);
    let rows: Vec<_> = (0..2000).map(|i| row(i, dc_label(&mut r), guess)).collect();
    let m = MetricsReport::from_pairs(rows);
    assert!((m.kagan_mean - 75.15).abs() < 2.0, "{}", m.kagan_mean);
    assert!(m.rows.iter().all(|r| r.kagan <= 120.0 + 1e-9));
    assert_eq!(m.kagan_hist.iter().sum::<usize>(), 2000);
}

#[test]
fn labels_round_trip_through_tensors() {
    let mut r = rng(3);
    for _ in 0..100 {
        let l = dc_label(&mut r);
        let mt = label_to_mt(&SourceLabel::from_array(&l.map(f64::from))).unwrap();
        assert!(mt.trace().abs() < 1e-6 * mt.frobenius());
    }
}

#[test]
fn evaluation_csv_round_trips_and_latents_have_one_row_per_event() {
    let recs = dataset(4, 12);
    let refs: Vec<_> = recs.iter().collect();
    let m = model(4);
    let (report, preds) = evaluate(&m, &refs).unwrap();
    assert_eq!(report.n, 12);
    let back = parse_metrics_csv(&metrics_csv(&report)).unwrap();
    assert_eq!(back.n, report.n);
    assert!((back.kagan_mean - report.kagan_mean).abs() < 1e-9);
    let lat = latents_csv(&refs, &preds);
    let lines: Vec<&str> = lat.lines().collect();
    assert_eq!(lines.len(), 13);
    let cols = m.config.d_model + 3;
    assert!(lines.iter().all(|l| l.split(',').count() == cols));
}

#[test]
fn uniform_pooling_gives_a_flat_profile() {
    let recs = dataset(5, 30);
    let refs: Vec<_> = recs.iter().collect();
    let mut m = model(5);
    let i = m.params.index("pool.w.w").unwrap();
    m.params.tensors[i].data.iter_mut().for_each(|v| *v = 0.0);
    let (_, preds) = evaluate(&m, &refs).unwrap();
    let prof = azimuth_profile(&refs, &preds, AttentionSource::Pooling).unwrap();
    for b in &prof.bins {
        if let Some(v) = b.mean {
            assert!((v - 1.0).abs() < 1e-6, "bin {}: {v}", b.start_deg);
        }
    }
    assert_eq!(
        prof.bins.iter().map(|b| b.count).sum::<usize>(),
        recs.iter().map(|r| r.stations.len()).sum::<usize>()
    );
    let sa = azimuth_profile(&refs, &preds, AttentionSource::SelfAttention).unwrap();
    // Each station's received attention sums to the number of queries.
    let total: f64 = sa.bins.iter().filter_map(|b| b.mean.map(|m| m * b.count as f64)).sum();
    assert!((total - prof.bins.iter().map(|b| b.count).sum::<usize>() as f64).abs() < 1e-3);
}

#[test]
fn gradcam_is_normalized_and_blank_windows_are_zero() {
    let mut recs = dataset(6, 1);
    let m = model(6);
    let t = recs[0].window;
    recs[0].stations[1].s_win.iter_mut().for_each(|v| *v = 0.0);
    for target in [CamTarget::Mw, CamTarget::Dev(0), CamTarget::Dev(4)] {
        for st in 0..recs[0].stations.len() {
            let cam = gradcam(&m, &recs[0], st, target).unwrap();
            assert_eq!((cam.p.len(), cam.s.len()), (t, t));
            assert!(cam.p.iter().chain(&cam.s).all(|v| (0.0..=1.0).contains(v)));
            if st == 1 {
                assert!(cam.s.iter().all(|v| *v == 0.0));
            }
        }
    }
    assert!(gradcam(&m, &recs[0], 99, CamTarget::Mw).is_err());
    assert!(gradcam(&m, &recs[0], 0, CamTarget::Dev(6)).is_err());
}

#[test]
fn svgs_are_well_formed() {
    let recs = dataset(7, 10);
    let refs: Vec<_> = recs.iter().collect();
    let m = model(7);
    let (report, preds) = evaluate(&m, &refs).unwrap();
    let prof = azimuth_profile(&refs, &preds, AttentionSource::Pooling).unwrap();
    let pairs = report.rows.iter().map(|r| (r.id.clone(), r.truth, r.pred)).collect();
    let full = render_report(&ReportInput {
        title: "a <b> & c".into(),
        metrics: Some(&report),
        profile: Some(&prof),
        pairs,
    });
    let empty = render_report(&ReportInput {
        title: "empty".into(),
        metrics: None,
        profile: None,
        pairs: Vec::new(),
    });
    let cam = gradcam(&m, &recs[0], 0, CamTarget::Mw).unwrap();
    let st = &recs[0].stations[0];
    let g = render_gradcam("cam", &cam, &st.p_win, &st.s_win);
    for svg in [&full, &empty, &g] {
        let doc = roxmltree::Document::parse(svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    assert!(empty.contains("no data"));
    assert!(full.contains("a &lt;b&gt; &amp; c"));
}
