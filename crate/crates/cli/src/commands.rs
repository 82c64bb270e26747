use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

use firecast_core::cube::{generate_synthetic_cube, read_cube, SyntheticConfig, TARGET_NAME};
use firecast_core::experiment::{
    evaluate_baseline, evaluate_model, prepare_cube, run_experiment, CheckpointInfo, ExperimentSpec,
};
use firecast_core::metrics::{append_reports, pivot_by_radius, read_reports, write_radius_table, EvalReport};
use firecast_core::sampling::{PreparedCube, Split, SplitSpec};
use firecast_core::training::{write_log_csv, TrainConfig};
use firecast_core::{Datacube, Error, Model, ModelConfig, ModelKind, SampleSpec};

use crate::map::write_map;
use crate::{AblateArgs, CubeArgs, EvalArgs, GenArgs, MapArgs, RunOptions, TrainArgs};

const BEST_CHECKPOINT: &str = "checkpoint.bin";
const FINAL_CHECKPOINT: &str = "final.bin";
const TRAIN_LOG: &str = "train_log.csv";
const EXPERIMENT_FILE: &str = "experiment.json";
const RESULTS_FILE: &str = "results.csv";
const TABLE_FILE: &str = "table.csv";

/// 1 for invalid configuration, 3 for numerical failure, 2 for anything data-related.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 1,
        Some(Error::Numerical(_)) => 3,
        _ => 2,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn default_k(radius: usize) -> usize {
    let side = 2 * radius + 1;
    (side * side).min(9)
}

fn load_split(cube: &Datacube, path: Option<&PathBuf>) -> Result<SplitSpec> {
    let split = match path {
        Some(p) => read_json::<SplitSpec>(p)?,
        None => SplitSpec::default_for(&cube.header)?,
    };
    split.validate()?;
    Ok(split)
}

pub fn gen_synthetic(args: &GenArgs) -> Result<()> {
    let config: SyntheticConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    let syn = generate_synthetic_cube(&config, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    syn.write(&args.out)?;
    let cube = &syn.cube;
    let h = &cube.header;
    let (fires, land_steps) = fire_counts(cube)?;
    println!("cells: {} x {} ({} land)", h.lat_len, h.lon_len, cube.land_cells());
    println!("years: {} ({} steps)", config.years, h.time_len);
    println!("fire rate: {:.6} ({fires} of {land_steps} land cell-steps)", fires as f64 / land_steps.max(1) as f64);
    Ok(())
}

/// Burned land cell-steps and total land cell-steps.
pub fn fire_counts(cube: &Datacube) -> Result<(usize, usize)> {
    let labels = firecast_core::cube::binarize_target(cube, TARGET_NAME)?;
    let h = &cube.header;
    let mut fires = 0;
    let mut total = 0;
    for t in 0..h.time_len {
        for lat in 0..h.lat_len {
            for lon in 0..h.lon_len {
                if cube.is_land(lat, lon) {
                    total += 1;
                    fires += labels[h.index(t, lat, lon)] as usize;
                }
            }
        }
    }
    Ok((fires, total))
}

pub fn cube_info(args: &CubeArgs) -> Result<()> {
    let cube = read_cube(&args.cube)?;
    let h = &cube.header;
    let (y0, y1) = h.year_range();
    println!("grid: {} lat x {} lon, {} land cells", h.lat_len, h.lon_len, cube.land_cells());
    println!("time: {} steps, {} per year, {y0}..={y1} starting at period {}", h.time_len, h.steps_per_year, h.t0_step);
    println!("longitude wraps: {}", h.wraps_longitude());
    println!("variable,fill_policy,finite,mean");
    for (v, data) in h.variables.iter().zip(&cube.data) {
        let finite: Vec<f64> = data.iter().filter(|x| x.is_finite()).map(|&x| x as f64).collect();
        let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
        println!("{},{:?},{},{mean}", v.name, v.fill_policy, finite.len());
    }
    if h.variable_index(TARGET_NAME).is_some() {
        let (fires, total) = fire_counts(&cube)?;
        println!("fire rate: {:.6}", fires as f64 / total.max(1) as f64);
    }
    Ok(())
}

fn train_config(run: &RunOptions, seed: u64) -> Result<TrainConfig> {
    let mut config: TrainConfig = match &run.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = run.epochs {
        config = config.with_epochs(e);
    }
    config.seed = seed;
    if run.max_samples_per_epoch.is_some() {
        config.max_samples_per_epoch = run.max_samples_per_epoch;
    }
    if run.max_val_samples.is_some() {
        config.max_val_samples = run.max_val_samples;
    }
    config.validate()?;
    Ok(config)
}

fn model_config(run: &RunOptions, kind: ModelKind) -> Result<ModelConfig> {
    let config = match &run.model_config {
        Some(p) => read_json::<ModelConfig>(p)?,
        None => ModelConfig::default_for(kind),
    };
    if config.kind() != kind {
        return Err(Error::Config(format!("model config is for {}, not {kind}", config.kind())).into());
    }
    Ok(config)
}

fn train_one(cube: &PreparedCube, spec: &ExperimentSpec, out: &Path) -> Result<Model> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(EXPERIMENT_FILE), spec)?;
    let trained = run_experiment(cube, spec)?;
    let info = serde_json::to_value(trained.info(cube, spec))?;
    trained.best.save(&out.join(BEST_CHECKPOINT), &info)?;
    trained.last.save(&out.join(FINAL_CHECKPOINT), &info)?;
    write_log_csv(&out.join(TRAIN_LOG), &trained.outcome.log)?;
    Ok(trained.best)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let sample = SampleSpec::new(args.ts, args.horizon, args.radius, args.k.unwrap_or(default_k(args.radius)))?;
    let train = train_config(&args.run, args.seed)?;
    let model = model_config(&args.run, args.model)?;
    let cube = read_cube(&args.cube)?;
    let split = load_split(&cube, args.run.split_config.as_ref())?;
    let spec = ExperimentSpec { model, sample, split: split.clone(), train };
    // Reject invalid model/geometry combinations before touching the data.
    Model::new(spec.model.clone(), spec.sample, 1, 0)?;
    let prepared = prepare_cube(&cube, &split)?;
    train_one(&prepared, &spec, &args.out)?;
    let log = fs::read_to_string(args.out.join(TRAIN_LOG))?;
    print!("{log}");
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointInfo)> {
    let (model, extra) = Model::load(path)?;
    let info: CheckpointInfo = serde_json::from_value(extra)
        .map_err(|e| Error::Data(format!("checkpoint {} lacks run metadata: {e}", path.display())))?;
    Ok((model, info))
}

fn prepared_for(cube: &Datacube, info: &CheckpointInfo) -> Result<PreparedCube> {
    Ok(PreparedCube::new(cube, &info.stats, &info.drivers, &info.target)?)
}

pub fn evaluate(args: &EvalArgs) -> Result<()> {
    let cube = read_cube(&args.cube)?;
    let report = match (&args.checkpoint, args.baseline) {
        (Some(path), _) => {
            let (model, info) = load_checkpoint(path)?;
            let split = match &args.split_config {
                Some(p) => read_json(p)?,
                None => info.experiment.split.clone(),
            };
            let prepared = prepared_for(&cube, &info)?;
            let mut rep = evaluate_model(&model, &prepared, &split, args.split, args.max_samples, args.seed)?;
            rep.seed = info.experiment.train.seed;
            rep
        }
        (None, Some(baseline)) => {
            let spec = SampleSpec::new(args.ts, args.horizon, args.radius, args.k.unwrap_or(default_k(args.radius)))?;
            let split = load_split(&cube, args.split_config.as_ref())?;
            let prepared = prepare_cube(&cube, &split)?;
            evaluate_baseline(baseline, &prepared, &spec, &split, args.split, args.max_samples, args.seed)?
        }
        (None, None) => bail!(Error::Config("pass --checkpoint or --baseline".into())),
    };
    append_reports(&args.out, std::slice::from_ref(&report))?;
    println!(
        "{},{},{},{},{},{},{},{},{},{}",
        report.model,
        report.ts,
        report.h,
        report.r,
        report.k,
        report.split,
        report.auprc,
        report.n_pos,
        report.n_neg,
        report.seed
    );
    Ok(())
}

type RunKey = (String, usize, usize, usize, usize, u64);

fn key_of(r: &EvalReport) -> RunKey {
    (r.model.clone(), r.ts, r.h, r.r, r.k, r.seed)
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let cube = read_cube(&args.cube)?;
    let split = load_split(&cube, args.run.split_config.as_ref())?;
    let train = train_config(&args.run, args.seed)?;
    let mut runs = Vec::new();
    let mut seen = HashSet::new();
    for &kind in &args.model {
        let config =
            model_config(&args.run, kind).or_else(|_| Ok::<_, anyhow::Error>(ModelConfig::default_for(kind)))?;
        for &ts in &args.ts {
            for &h in &args.horizon {
                for &r in &args.radius {
                    // The GRU sees a single cell, so the radius axis collapses for it.
                    let r = if kind == ModelKind::Gru { 0 } else { r };
                    let sample = SampleSpec::new(ts, h, r, args.k.unwrap_or(default_k(r)).min((2 * r + 1).pow(2)))?;
                    if seen.insert((kind, sample)) {
                        runs.push(ExperimentSpec {
                            model: config.clone(),
                            sample,
                            split: split.clone(),
                            train: train.clone(),
                        });
                    }
                }
            }
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let results = args.out.join(RESULTS_FILE);
    let done: HashSet<RunKey> = if results.exists() {
        read_reports(&results)?.iter().filter(|r| r.auprc.is_finite()).map(key_of).collect()
    } else {
        HashSet::new()
    };
    let pending: Vec<&ExperimentSpec> = runs
        .iter()
        .filter(|s| {
            let probe = EvalReport::failed(s.model.kind().as_str(), &s.sample, "test", s.train.seed);
            !done.contains(&key_of(&probe))
        })
        .collect();
    println!("{} runs, {} already complete", runs.len(), runs.len() - pending.len());

    let prepared = prepare_cube(&cube, &split)?;
    let next = AtomicUsize::new(0);
    let sink = Mutex::new(());
    std::thread::scope(|scope| {
        for _ in 0..args.workers.max(1).min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = pending.get(i) else { break };
                let s = spec.sample;
                let name = format!("{}_ts{}_h{}_r{}_k{}", spec.model.kind(), s.ts, s.h, s.r, s.k);
                let row = train_one(&prepared, spec, &args.out.join("runs").join(&name))
                    .and_then(|model| {
                        Ok(evaluate_model(
                            &model,
                            &prepared,
                            &spec.split,
                            Split::Test,
                            args.max_eval_samples,
                            spec.train.seed,
                        )?)
                    })
                    .unwrap_or_else(|e| {
                        eprintln!("run {name} failed: {e:#}");
                        EvalReport::failed(spec.model.kind().as_str(), &s, "test", spec.train.seed)
                    });
                let _guard = sink.lock().unwrap_or_else(|p| p.into_inner());
                if let Err(e) = append_reports(&results, std::slice::from_ref(&row)) {
                    eprintln!("cannot append to {}: {e}", results.display());
                }
                println!("{name}: auprc {}", row.auprc);
            });
        }
    });

    let table = pivot_by_radius(&read_reports(&results)?);
    write_radius_table(&args.out.join(TABLE_FILE), &table)?;
    Ok(())
}

pub fn predict_map(args: &MapArgs) -> Result<()> {
    let cube = read_cube(&args.cube)?;
    let (model, info) = load_checkpoint(&args.checkpoint)?;
    let prepared = prepared_for(&cube, &info)?;
    write_map(&model, &prepared, args.t_idx, &args.out)
}
