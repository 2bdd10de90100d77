use evderain_core::baselines::{density_filter, ts_filter, FilterConfig};
use evderain_core::events::{Event, Polarity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stream(seed: u64, n: usize) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..200_000)).collect();
    ts.sort();
    ts.into_iter()
        .map(|t| Event::new(rng.gen_range(0..12), rng.gen_range(0..10), t, Polarity::Positive))
        .collect()
}

/// Brute force: for every neighbour pixel, the latest earlier event there.
fn ts_oracle(events: &[Event], cfg: &FilterConfig) -> Vec<u8> {
    (0..events.len())
        .map(|i| {
            let e = events[i];
            let mut support = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx, dy) == (0, 0) {
                        continue;
                    }
                    let last = events[..i]
                        .iter()
                        .filter(|o| o.x as i64 == e.x as i64 + dx && o.y as i64 == e.y as i64 + dy)
                        .map(|o| o.t)
                        .max();
                    if let Some(t) = last {
                        support += (-((e.t - t) as f64) / cfg.tau).exp();
                    }
                }
            }
            (support <= cfg.ts_threshold) as u8
        })
        .collect()
}

fn density_oracle(events: &[Event], cfg: &FilterConfig) -> Vec<u8> {
    let r = cfg.radius as i64;
    events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let n = events
                .iter()
                .enumerate()
                .filter(|&(j, o)| {
                    j != i
                        && (o.x as i64 - e.x as i64).abs() <= r
                        && (o.y as i64 - e.y as i64).abs() <= r
                        && o.t.abs_diff(e.t) <= cfg.window
                })
                .count();
            (n < cfg.min_support) as u8
        })
        .collect()
}

#[test]
fn filters_match_brute_force() {
    for seed in 0..6 {
        let events = random_stream(seed, 600);
        for cfg in [
            FilterConfig::default(),
            FilterConfig {
                tau: 3_000.0,
                ts_threshold: 0.05,
                radius: 2,
                window: 20_000,
                min_support: 4,
            },
        ] {
            assert_eq!(ts_filter(&events, &cfg).unwrap(), ts_oracle(&events, &cfg));
            assert_eq!(density_filter(&events, &cfg).unwrap(), density_oracle(&events, &cfg));
        }
    }
}

#[test]
fn time_surface_filter_is_causal() {
    let events = random_stream(9, 400);
    let cfg = FilterConfig::default();
    let full = ts_filter(&events, &cfg).unwrap();
    let prefix = ts_filter(&events[..250], &cfg).unwrap();
    assert_eq!(&full[..250], &prefix[..]);
}

#[test]
fn outputs_are_binary_and_cover_input() {
    let events = random_stream(3, 300);
    for out in [
        ts_filter(&events, &FilterConfig::default()).unwrap(),
        density_filter(&events, &FilterConfig::default()).unwrap(),
    ] {
        assert_eq!(out.len(), events.len());
        assert!(out.iter().all(|&p| p <= 1));
    }
    assert!(ts_filter(&[], &FilterConfig::default()).unwrap().is_empty());
}
