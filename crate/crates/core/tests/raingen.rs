use evderain_core::curves::{serialize, ScanMode};
use evderain_core::events::{build_cloud, flatten, Event, Label, Polarity, WindowSpec};
use evderain_core::loss_metrics::{label_spectrum, run_lengths};
use evderain_core::raingen::{generate, knn_label, Background, KnnRadius, RainParams, SceneParams};

fn rain(intensity: f64, seed: u64) -> RainParams {
    RainParams {
        intensity,
        seed,
        ..RainParams::default()
    }
}

fn serialized_labels(events: &[Event]) -> Vec<u8> {
    let spec = WindowSpec {
        sensor_width: 64,
        sensor_height: 48,
        window_duration: 0.1,
        num_windows: 5,
    };
    let cloud = build_cloud(events, &spec).unwrap();
    let pts = flatten(&cloud);
    let s = serialize(&cloud, ScanMode::Zorder, 10).unwrap();
    s.order.iter().map(|&i| pts[i].label.unwrap().class()).collect()
}

#[test]
fn fixed_seed_is_reproducible() {
    let scene = SceneParams::default();
    assert_eq!(generate(&scene, &rain(50.0, 9)).unwrap(), generate(&scene, &rain(50.0, 9)).unwrap());
    assert_ne!(generate(&scene, &rain(50.0, 9)).unwrap(), generate(&scene, &rain(50.0, 10)).unwrap());
}

#[test]
fn tallies_match_labels() {
    for bg in [Background::StaticEdges, Background::MovingBar] {
        let scene = SceneParams {
            background: bg,
            ..SceneParams::default()
        };
        let g = generate(&scene, &rain(80.0, 1)).unwrap();
        let r = g.events.iter().filter(|e| e.label == Some(Label::Rain)).count();
        let b = g.events.iter().filter(|e| e.label == Some(Label::Background)).count();
        assert_eq!((r, b), (g.rain_events, g.background_events));
        assert_eq!(r + b, g.events.len());
        assert!(g.events.windows(2).all(|w| w[0].t <= w[1].t));
    }
}

#[test]
fn rain_count_is_monotone_in_intensity() {
    let scene = SceneParams::default();
    for seed in 0..5 {
        let mut prev = 0;
        for i in [0.0, 5.0, 20.0, 50.0, 100.0, 200.0] {
            let n = generate(&scene, &rain(i, seed)).unwrap().rain_events;
            assert!(n >= prev, "seed {seed} intensity {i}: {n} < {prev}");
            prev = n;
        }
    }
}

#[test]
fn heavy_rain_has_longer_runs_and_lower_peak() {
    let scene = SceneParams::default();
    let (mut light_runs, mut heavy_runs) = (Vec::new(), Vec::new());
    let (mut light_peak, mut heavy_peak) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let light = generate(&scene, &rain(5.0, seed)).unwrap();
        let heavy = generate(&scene, &rain(200.0, seed)).unwrap();
        assert!(heavy.rain_events > light.rain_events);
        for (g, runs, peaks) in [(&light, &mut light_runs, &mut light_peak), (&heavy, &mut heavy_runs, &mut heavy_peak)] {
            let labels = serialized_labels(&g.events);
            for (len, count) in run_lengths(&labels) {
                runs.extend(std::iter::repeat(len).take(count));
            }
            peaks.extend(label_spectrum(&labels, 64).unwrap().peak_frequency);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let mut lr: Vec<f64> = light_runs.iter().map(|&l| l as f64).collect();
    let mut hr: Vec<f64> = heavy_runs.iter().map(|&l| l as f64).collect();
    assert!(median(&mut hr) > median(&mut lr));
    assert!(median(&mut heavy_peak) < median(&mut light_peak));
}

#[test]
fn loaded_background_is_relabeled() {
    let mut events = vec![Event::new(1, 2, 10, Polarity::Negative).with_label(Label::Rain)];
    events.push(Event::new(1, 2, 900_000, Polarity::Negative));
    let scene = SceneParams {
        background: Background::Events(events),
        ..SceneParams::default()
    };
    let g = generate(&scene, &rain(0.0, 0)).unwrap();
    assert_eq!(g.events.len(), 1);
    assert_eq!(g.events[0].label, Some(Label::Background));
}

fn clean_grid() -> Vec<Event> {
    let mut out = Vec::new();
    for t in (0..50_000).step_by(1000) {
        for y in (0..40).step_by(10) {
            for x in (0..60).step_by(10) {
                out.push(Event::new(x, y, t, Polarity::Positive));
            }
        }
    }
    out
}

#[test]
fn identical_streams_are_all_background() {
    let clean = clean_grid();
    let out = knn_label(&clean, &clean, 1, KnnRadius::default()).unwrap();
    assert!(!out.empty_clean);
    assert!(out.events.iter().all(|e| e.label == Some(Label::Background)));
}

#[test]
fn planted_streaks_are_recovered_exactly() {
    let clean = clean_grid();
    let mut rainy: Vec<(Event, u8)> = clean.iter().map(|&e| (e, 0)).collect();
    // streak pixels sit at offset (5, 5) from the grid, 7 px from any clean pixel
    for s in 0..30u64 {
        let e = Event::new(5 + 10 * (s as u32 % 5), 5 + 10 * (s as u32 % 3), 300 + s * 1500, Polarity::Positive);
        rainy.push((e, 1));
    }
    rainy.sort_by_key(|(e, _)| e.t);
    let events: Vec<Event> = rainy.iter().map(|p| p.0).collect();
    let out = knn_label(&events, &clean, 2, KnnRadius::default()).unwrap();
    let got: Vec<u8> = out.events.iter().map(|e| e.label.unwrap().class()).collect();
    let want: Vec<u8> = rainy.iter().map(|p| p.1).collect();
    assert_eq!(got, want);
    // the clean stream is untouched and the geometry is preserved
    assert_eq!(clean, clean_grid());
    assert!(out.events.iter().zip(&events).all(|(a, b)| (a.x, a.y, a.t, a.p) == (b.x, b.y, b.t, b.p)));
}

#[test]
fn labels_are_invariant_under_time_shift() {
    let g = generate(&SceneParams::default(), &rain(50.0, 4)).unwrap();
    let clean: Vec<Event> = g.events.iter().filter(|e| e.label == Some(Label::Background)).cloned().collect();
    let shift = |v: &[Event]| -> Vec<Event> { v.iter().map(|e| Event { t: e.t + 7_777_777, ..*e }).collect() };
    let a = knn_label(&g.events, &clean, 2, KnnRadius::default()).unwrap();
    let b = knn_label(&shift(&g.events), &shift(&clean), 2, KnnRadius::default()).unwrap();
    let la: Vec<_> = a.events.iter().map(|e| e.label).collect();
    let lb: Vec<_> = b.events.iter().map(|e| e.label).collect();
    assert_eq!(la, lb);
}
