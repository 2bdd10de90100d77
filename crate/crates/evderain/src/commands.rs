//! The work behind each subcommand, callable without going through argv.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use evderain_core::baselines::{density_filter, ts_filter, FilterConfig};
use evderain_core::curves::{serialize, ScanMode};
use evderain_core::events::{build_cloud, Event, EventCloud4D, WindowSpec};
use evderain_core::loss_metrics::{label_spectrum, Confusion, EvalReport, LabelSpectrum};
use evderain_core::model::{plan, CloudPlan, ModelParams, NetworkConfig};
use evderain_core::raingen::{generate as generate_scene, knn_label, KnnRadius, RainParams};
use evderain_core::ssm::{scan_blocked, selective_scan, ScanParams};
use evderain_core::train::{predict, StepStats, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{load_event_file, load_predictions, save_events, save_predictions, Format};

pub const CHECKPOINT_FILE: &str = "checkpoint.evck";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.json";

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    match paths.into_iter().find(|p| !p.is_file()) {
        Some(p) => Err(Error::MissingFile(p.clone())),
        None => Ok(()),
    }
}

/// Splits a sorted stream into consecutive clouds of `spec.num_windows`
/// windows, each starting at the first event the previous one did not
/// cover. Returns the index of each cloud's first event with the cloud.
pub fn stream_clouds(events: &[Event], spec: &WindowSpec) -> evderain_core::Result<Vec<(usize, EventCloud4D)>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < events.len() {
        let cloud = build_cloud(&events[start..], spec)?;
        let taken = cloud.num_events();
        out.push((start, cloud));
        start += taken;
    }
    Ok(out)
}

fn load_clouds(path: &Path, cfg: &RunConfig) -> Result<(Vec<Event>, Vec<(usize, EventCloud4D)>)> {
    let file = load_event_file(path, Format::from_path(path))?;
    let spec = cfg.window_spec(file.sensor);
    let clouds = stream_clouds(&file.events, &spec).map_err(|e| Error::core(path.display().to_string(), e))?;
    Ok((file.events, clouds))
}

fn plans_for(paths: &[PathBuf], cfg: &RunConfig, net: &NetworkConfig) -> Result<Vec<CloudPlan>> {
    let mut plans = Vec::new();
    for path in paths {
        let (events, clouds) = load_clouds(path, cfg)?;
        if events.iter().any(|e| e.label.is_none()) {
            return Err(Error::core(
                path.display().to_string(),
                evderain_core::Error::InvalidArgument("file has unlabeled events".into()),
            ));
        }
        for (_, c) in clouds {
            plans.push(plan(&c, net).map_err(|e| Error::core(path.display().to_string(), e))?);
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedFile {
    pub file: String,
    pub seed: u64,
    pub events: usize,
    pub rain_events: usize,
    pub rain_fraction: f64,
}

/// Writes `cfg.generate.sequences` labeled sequences named `seq_NNN`,
/// sequence `i` seeded with `cfg.seed + i`. With `pairs`, the unlabeled
/// rainy stream and the clean stream are written alongside as
/// `seq_NNN.rainy` and `seq_NNN.clean`.
pub fn generate(cfg: &RunConfig, out: &Path, pairs: bool) -> Result<Vec<GeneratedFile>> {
    ensure_dir(out)?;
    let g = &cfg.generate;
    let sensor = (g.scene.sensor_width, g.scene.sensor_height);
    let ext = g.format.extension();
    let mut written = Vec::new();
    for i in 0..g.sequences {
        let seed = cfg.seed.wrapping_add(i as u64);
        let rain = RainParams { seed, ..g.rain.clone() };
        let gen = generate_scene(&g.scene, &rain).map_err(|e| Error::core("generate", e))?;
        let name = format!("seq_{i:03}.{ext}");
        save_events(&out.join(&name), &gen.events, g.format, sensor)?;
        if pairs {
            let strip = |ev: &[Event]| -> Vec<Event> { ev.iter().map(|e| Event { label: None, ..*e }).collect() };
            save_events(&out.join(format!("seq_{i:03}.rainy.{ext}")), &strip(&gen.events), g.format, sensor)?;
            let clean: Vec<Event> = gen
                .events
                .iter()
                .filter(|e| e.label.is_some_and(|l| l.class() == 0))
                .copied()
                .collect();
            save_events(&out.join(format!("seq_{i:03}.clean.{ext}")), &strip(&clean), g.format, sensor)?;
        }
        written.push(GeneratedFile {
            file: name,
            seed,
            events: gen.events.len(),
            rain_events: gen.rain_events,
            rain_fraction: gen.rain_fraction(),
        });
    }
    write_json(&out.join("generate.json"), &written)?;
    Ok(written)
}

pub struct Labeled {
    pub path: PathBuf,
    pub events: usize,
    pub rain: usize,
    pub empty_clean: bool,
}

/// Labels a rainy recording against its clean counterpart and writes
/// `<rainy stem>.labeled.<ext>` in the rainy file's format.
pub fn label(rainy: &Path, clean: &Path, k: usize, radius: KnnRadius, out: &Path) -> Result<Labeled> {
    require_files([&rainy.to_path_buf(), &clean.to_path_buf()])?;
    ensure_dir(out)?;
    let format = Format::from_path(rainy);
    let r = load_event_file(rainy, format)?;
    let c = load_event_file(clean, Format::from_path(clean))?;
    let labeled = knn_label(&r.events, &c.events, k, radius).map_err(|e| Error::core("label", e))?;
    let sensor = r.sensor.or(c.sensor).unwrap_or_else(|| {
        let w = r.events.iter().map(|e| e.x + 1).max().unwrap_or(1);
        let h = r.events.iter().map(|e| e.y + 1).max().unwrap_or(1);
        (w, h)
    });
    let path = out.join(format!("{}.labeled.{}", stem(rainy), format.extension()));
    save_events(&path, &labeled.events, format, sensor)?;
    Ok(Labeled {
        path,
        events: labeled.events.len(),
        rain: labeled.events.iter().filter(|e| e.label.is_some_and(|l| l.class() == 1)).count(),
        empty_clean: labeled.empty_clean,
    })
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine<'a> {
    Step {
        step: u64,
        epoch: u64,
        lr: f64,
        ce: f64,
        fft: Option<f64>,
        total: f64,
        wall_time: f64,
    },
    Val {
        epoch: u64,
        step: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        report: Option<EvalReport>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<&'a str>,
    },
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub total_steps: u64,
    pub history: Vec<StepStats>,
}

/// Trains on `cfg.paths.train`, appending to `train_log.jsonl` under `out`
/// and saving `checkpoint.evck` (under `paths.checkpoint_dir` if set,
/// otherwise `out`) after every epoch and when stopping. `resume` continues
/// a previous run from its stored state; `stop_after` ends the run once
/// that many updates exist in total.
pub fn train(cfg: &RunConfig, out: &Path, resume: Option<Checkpoint>, stop_after: Option<u64>) -> Result<TrainSummary> {
    require_files(cfg.paths.train.iter().chain(&cfg.paths.val))?;
    if cfg.paths.train.is_empty() {
        return Err(Error::Usage("no training files (set paths.train or pass --train)".into()));
    }
    ensure_dir(out)?;
    let ck_dir = cfg.paths.checkpoint_dir.clone().unwrap_or_else(|| out.to_path_buf());
    ensure_dir(&ck_dir)?;
    let ck_path = ck_dir.join(CHECKPOINT_FILE);

    let mut trainer = match resume {
        Some(ck) => ck.into_trainer()?,
        None => Trainer::new(cfg.network.clone(), cfg.loss, cfg.optim.clone(), cfg.seed)
            .map_err(|e| Error::core("train", e))?,
    };
    let net = trainer.net.clone();
    let data = plans_for(&cfg.paths.train, cfg, &net)?;
    let val = plans_for(&cfg.paths.val, cfg, &net)?;

    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut emit = |line: &LogLine| -> Result<()> {
        let text = serde_json::to_string(line).expect("log line serializes");
        writeln!(log, "{text}").map_err(|e| Error::io(&log_path, e))
    };

    let total = trainer.total_steps(data.len());
    let until = stop_after.unwrap_or(total).min(total);
    let spe = trainer.optim.steps_per_epoch(data.len());
    let started = Instant::now();
    let mut history = Vec::new();
    while trainer.adam.step < until {
        let idx = trainer.batch_for_step(trainer.adam.step, data.len());
        let batch: Vec<&CloudPlan> = idx.iter().map(|&i| &data[i]).collect();
        let stats = trainer.step_on(&batch, total).map_err(|e| Error::core("train", e))?;
        emit(&LogLine::Step {
            step: stats.step,
            epoch: (stats.step - 1) / spe,
            lr: stats.lr,
            ce: stats.ce,
            fft: stats.fft,
            total: stats.total,
            wall_time: started.elapsed().as_secs_f64(),
        })?;
        history.push(stats);
        if stats.step % spe == 0 {
            let epoch = stats.step / spe - 1;
            if !val.is_empty() {
                let mut conf = Confusion::default();
                for p in &val {
                    let pred = predict(&net, &trainer.params, p).map_err(|e| Error::core("validate", e))?;
                    let labels = p.labels.as_deref().unwrap_or_default();
                    conf = conf.merge(Confusion::count(&pred, labels).map_err(|e| Error::core("validate", e))?);
                }
                let line = match EvalReport::from_confusion(conf) {
                    Ok(r) => LogLine::Val {
                        epoch,
                        step: stats.step,
                        report: Some(r),
                        error: None,
                    },
                    Err(_) => LogLine::Val {
                        epoch,
                        step: stats.step,
                        report: None,
                        error: Some("metric undefined: validation set lacks a class"),
                    },
                };
                emit(&line)?;
            }
            Checkpoint::from_trainer(&trainer).save(&ck_path)?;
        }
    }
    Checkpoint::from_trainer(&trainer).save(&ck_path)?;
    Ok(TrainSummary {
        checkpoint: ck_path,
        steps: trainer.adam.step,
        total_steps: total,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Model,
    Ts,
    Density,
}

/// Per-event predictions for a whole stream with a trained network.
pub fn predict_stream(
    events: &[Event],
    spec: &WindowSpec,
    net: &NetworkConfig,
    params: &ModelParams,
) -> evderain_core::Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len());
    for (_, cloud) in stream_clouds(events, spec)? {
        out.extend(predict(net, params, &plan(&cloud, net)?)?);
    }
    Ok(out)
}

/// Writes `<stem>.pred.csv` under `out` for every input.
pub fn infer(
    inputs: &[PathBuf],
    method: Method,
    model: Option<(&NetworkConfig, &ModelParams)>,
    cfg: &RunConfig,
    filters: &FilterConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    require_files(inputs)?;
    ensure_dir(out)?;
    let mut written = Vec::new();
    for path in inputs {
        let file = load_event_file(path, Format::from_path(path))?;
        let ctx = |e| Error::core(path.display().to_string(), e);
        let preds = if file.events.is_empty() {
            Vec::new()
        } else {
            match method {
                Method::Model => {
                    let (net, params) =
                        model.ok_or_else(|| Error::Usage("--method model needs --checkpoint".into()))?;
                    predict_stream(&file.events, &cfg.window_spec(file.sensor), net, params).map_err(ctx)?
                }
                Method::Ts => ts_filter(&file.events, filters).map_err(ctx)?,
                Method::Density => density_filter(&file.events, filters).map_err(ctx)?,
            }
        };
        let dest = out.join(format!("{}.pred.csv", stem(path)));
        save_predictions(&dest, &preds)?;
        written.push(dest);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileCounts {
    pub file: String,
    #[serde(flatten)]
    pub counts: Confusion,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportFile {
    pub pb: u64,
    pub tb: u64,
    pub pr: u64,
    pub tr: u64,
    pub sr: Option<f64>,
    pub nr: Option<f64>,
    pub da: Option<f64>,
    pub files: Vec<FileCounts>,
}

/// Pools the confusion counts of every (prediction, label) file pair in
/// the given order and writes `report.json`. When one class is absent the
/// defined subset is still written before the error is returned.
pub fn eval(predictions: &[PathBuf], labels: &[PathBuf], out: &Path) -> Result<EvalReport> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Usage(format!(
            "need matching non-empty lists of prediction and label files, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    require_files(predictions.iter().chain(labels))?;
    ensure_dir(out)?;
    let mut total = Confusion::default();
    let mut files = Vec::new();
    for (pp, lp) in predictions.iter().zip(labels) {
        let preds = load_predictions(pp)?;
        let events = load_event_file(lp, Format::from_path(lp))?.events;
        let truth: Option<Vec<u8>> = events.iter().map(|e| e.label.map(|l| l.class())).collect();
        let truth = truth.ok_or_else(|| {
            Error::core(
                lp.display().to_string(),
                evderain_core::Error::InvalidArgument("label file has unlabeled events".into()),
            )
        })?;
        let c = Confusion::count(&preds, &truth).map_err(|e| Error::core(pp.display().to_string(), e))?;
        files.push(FileCounts {
            file: file_name(lp),
            counts: c,
        });
        total = total.merge(c);
    }
    let result = EvalReport::from_confusion(total);
    let (sr, nr, da) = match &result {
        Ok(r) => (Some(r.sr), Some(r.nr), Some(r.da)),
        Err(evderain_core::Error::UndefinedMetric(p)) => (p.sr, p.nr, None),
        Err(_) => (None, None, None),
    };
    write_json(
        &out.join(REPORT_FILE),
        &ReportFile {
            pb: total.pb,
            tb: total.tb,
            pr: total.pr,
            tr: total.tr,
            sr,
            nr,
            da,
            files,
        },
    )?;
    result.map_err(|e| Error::core("eval", e))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub events: usize,
    pub rain_events: usize,
    pub order: String,
    pub peak_frequency: Option<f64>,
    pub median_run_length: Option<f64>,
    pub mean_run_length: Option<f64>,
}

/// Binary labels of a labeled file, in time order or, with `scan`, in the
/// serialized order of each cloud.
pub fn label_sequence(path: &Path, cfg: &RunConfig, scan: Option<ScanMode>) -> Result<Vec<u8>> {
    let (events, clouds) = load_clouds(path, cfg)?;
    let class = |e: &Event| e.label.map(|l| l.class());
    let missing = || {
        Error::core(
            path.display().to_string(),
            evderain_core::Error::InvalidArgument("file has unlabeled events".into()),
        )
    };
    match scan {
        None => events.iter().map(class).collect::<Option<Vec<u8>>>().ok_or_else(missing),
        Some(mode) => {
            let mut out = Vec::with_capacity(events.len());
            for (start, cloud) in clouds {
                let s = serialize(&cloud, mode, cfg.network.grid_bits)
                    .map_err(|e| Error::core(path.display().to_string(), e))?;
                for &i in &s.order {
                    out.push(class(&events[start + i]).ok_or_else(missing)?);
                }
            }
            Ok(out)
        }
    }
}

/// Writes `spectrum.csv`, `runs.csv` and `spectrum.json` under `out`.
pub fn spectrum(input: &Path, bins: usize, scan: Option<ScanMode>, cfg: &RunConfig, out: &Path) -> Result<LabelSpectrum> {
    require_files([&input.to_path_buf()])?;
    ensure_dir(out)?;
    let labels = label_sequence(input, cfg, scan)?;
    let spec = label_spectrum(&labels, bins).map_err(|e| Error::core(input.display().to_string(), e))?;

    let path = out.join("spectrum.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    let csv_io = |p: &Path, e: csv::Error| Error::io(p, e.into());
    w.write_record(["bin_hz_normalized", "power"]).map_err(|e| csv_io(&path, e))?;
    for (f, p) in &spec.bins {
        w.serialize((f, p)).map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("runs.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    w.write_record(["run_length", "count"]).map_err(|e| csv_io(&path, e))?;
    for r in &spec.run_lengths {
        w.serialize(r).map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_json(
        &out.join("spectrum.json"),
        &SpectrumSummary {
            events: labels.len(),
            rain_events: labels.iter().filter(|&&l| l == 1).count(),
            order: scan.map_or_else(|| "time".into(), |m| m.name().into()),
            peak_frequency: spec.peak_frequency,
            median_run_length: spec.median_run_length(),
            mean_run_length: spec.mean_run_length(),
        },
    )?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kernel {
    Reference,
    Blocked,
}

/// Random but well-conditioned scan inputs of the given size.
pub fn bench_inputs(len: usize, channels: usize, state_dim: usize, seed: u64) -> (Vec<f64>, ScanParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    let x = draw(channels * len, -1.0, 1.0);
    let p = ScanParams {
        channels,
        state_dim,
        len,
        delta: draw(channels * len, 1e-3, 0.1),
        a: draw(channels * state_dim, -2.0, -0.1),
        b: draw(state_dim * len, -1.0, 1.0),
        c: draw(state_dim * len, -1.0, 1.0),
        d: draw(channels, -1.0, 1.0),
    };
    (x, p)
}

/// Median wall time in seconds of `repeats` scans of length `len`.
pub fn time_scan(len: usize, channels: usize, state_dim: usize, kernel: Kernel, repeats: usize) -> Result<f64> {
    let (x, p) = bench_inputs(len, channels, state_dim, len as u64);
    let run = || match kernel {
        Kernel::Reference => selective_scan(&x, &p),
        Kernel::Blocked => scan_blocked(&x, &p, 64),
    }
    .map_err(|e| Error::core("bench-scan", e));
    // untimed warm-up so first-touch page faults stay out of the samples
    std::hint::black_box(run()?);
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let y = run()?;
        times.push(t0.elapsed().as_secs_f64());
        std::hint::black_box(y);
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    })
}

/// Writes `bench.csv` with one `(length, seconds)` row per length.
pub fn bench_scan(
    lengths: &[usize],
    channels: usize,
    state_dim: usize,
    kernel: Kernel,
    repeats: usize,
    out: &Path,
) -> Result<Vec<(usize, f64)>> {
    ensure_dir(out)?;
    let rows: Vec<(usize, f64)> = lengths
        .iter()
        .map(|&l| time_scan(l, channels, state_dim, kernel, repeats).map(|s| (l, s)))
        .collect::<Result<_>>()?;
    let path = out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    w.write_record(["length", "seconds"]).map_err(|e| Error::io(&path, e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::io(&path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
