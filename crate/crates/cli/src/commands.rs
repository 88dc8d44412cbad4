use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cqdd::actuator::{virtual_backdrive_experiment, virtual_backlash_experiment, ActuatorConfig, PdGains};
use cqdd::dataset::{build_dataset, window, Dataset, InputMode, Split, WindowSet};
use cqdd::eval::{evaluate, latency_bench, predict_series, reports_csv, reports_table, EvalReport};
use cqdd::geometry::{generate_profile, GearParams};
use cqdd::kv::KvMap;
use cqdd::models::{Checkpoint, Preset};
use cqdd::pendulum::{run_constant_speed, run_scenario_with, sample_scenarios, RigParams, ScenarioRanges, SAMPLE_RATE};
use cqdd::spectral::ripple_analysis;
use cqdd::train::{train, TrainConfig};

use crate::error::Failure;
use crate::manifest::{write_checked, RunManifest};
use crate::opts::subset;

type Result<T> = std::result::Result<T, Failure>;

/// Resolved `--out`, recorded back into the config so the manifest shows it.
fn out_path(config: &mut KvMap, default: String) -> PathBuf {
    let out = config.get("out").map_or(default, str::to_string);
    config.set("out", &out);
    PathBuf::from(out)
}

fn finish(manifest: &RunManifest, out: &Path) -> Result<()> {
    let path = manifest.write(out)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

pub fn profile(mut config: KvMap) -> Result<()> {
    let g = GearParams {
        pitch_radius: config.require("pitch_radius")?,
        eccentricity: config.require("eccentricity")?,
        outer_pin_diameter: config.require("outer_pin_diameter")?,
        output_pin_diameter: config.require("output_pin_diameter")?,
        num_teeth: config.require("teeth")?,
        num_outer_pins: config.require("pins")?,
        output_pin_circle_radius: config.require("output_pin_circle_radius")?,
        num_output_pins: config.require("output_pins")?,
    };
    g.validate()?;
    for w in g.warnings() {
        eprintln!("warning: {w}");
    }
    let format: String = config.require("format")?;
    let poly = generate_profile(&g, config.require("samples")?)?;
    let text = match format.as_str() {
        "csv" => poly.to_csv(),
        "svg" => poly.to_svg(),
        other => return Err(Failure::usage(format!("unknown format `{other}` (csv or svg)"))),
    };
    let out = out_path(&mut config, format!("profile.{format}"));
    write_checked(&out, text.as_bytes())?;
    println!(
        "lobes {}  ratio {}  counterbalance disks {}  points {}",
        poly.lobe_count(),
        g.transmission_ratio(),
        g.counter_disks()?,
        poly.points.len()
    );
    let mut m = RunManifest::new("profile", config, None);
    m.artifact("profile", &out);
    finish(&m, &out)
}

fn actuator_from(config: &KvMap) -> Result<(ActuatorConfig, PdGains)> {
    let actuator = ActuatorConfig::from_kv(&subset(config, ActuatorConfig::KEYS))?;
    let gains = PdGains::new(config.require("kp")?, config.require("kd")?)?;
    Ok((actuator, gains))
}

fn rig_from(config: &KvMap) -> Result<RigParams> {
    Ok(RigParams {
        bar_inertia: config.require("bar_inertia")?,
        wall_stiffness: config.require("wall_stiffness")?,
        wall_damping: config.require("wall_damping")?,
        gravity: config.require("gravity")?,
        accel_noise_std: config.require("accel_noise_std")?,
        accel_filter_hz: config.require("accel_filter_hz")?,
        internal_rate: config.require("internal_rate")?,
        scenario_duration: config.require("duration")?,
        wall_angle: config.require("wall_angle")?,
    })
}

fn ranges_from(config: &KvMap) -> Result<ScenarioRanges> {
    let pair = |name: &str| -> Result<(f64, f64)> {
        let lo: f64 = config.require(&format!("{name}_min"))?;
        let hi: f64 = config.require(&format!("{name}_max"))?;
        if !(lo <= hi) {
            return Err(Failure::usage(format!("{name}: min {lo} exceeds max {hi}")));
        }
        Ok((lo, hi))
    };
    let masses: String = config.require("pendulum_masses")?;
    let masses: Vec<f64> = masses
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::usage(format!("pendulum_masses: cannot parse `{masses}`")))?;
    let pendulum_masses: [f64; 2] = masses
        .try_into()
        .map_err(|_| Failure::usage("pendulum_masses needs exactly two values"))?;
    Ok(ScenarioRanges {
        ref_frequency: pair("ref_frequency")?,
        ref_amplitude: pair("ref_amplitude")?,
        initial_position: pair("initial_position")?,
        pendulum_masses,
        mass_location: pair("mass_location")?,
    })
}

pub fn gen_data(mut config: KvMap) -> Result<()> {
    let n: usize = config.require("scenarios")?;
    if n == 0 {
        return Err(Failure::usage("--scenarios must be at least 1"));
    }
    let seed: u64 = config.require("seed")?;
    let fractions = [
        config.require("train_fraction")?,
        config.require("validation_fraction")?,
        config.require("test_fraction")?,
    ];
    let ranges = ranges_from(&config)?;
    let rig = rig_from(&config)?;
    let (actuator, gains) = actuator_from(&config)?;
    let out = out_path(&mut config, "data".into());

    let scenarios = sample_scenarios(n, seed, &ranges, &rig);
    let mut trajectories = Vec::with_capacity(n);
    for s in &scenarios {
        trajectories.push(run_scenario_with(s, &actuator, &gains, &rig)?);
    }
    let dataset = build_dataset(trajectories, fractions, seed)?;

    // generator settings travel with the data
    let mut extra = config.clone();
    for key in ["out", "manifest", "seed"] {
        extra = without(&extra, key);
    }
    for (i, s) in scenarios.iter().enumerate() {
        extra.set(
            &format!("scenario_{i:03}"),
            format!(
                "ref_frequency={} ref_amplitude={} initial_position={} pendulum_mass={} mass_location={} noise_seed={}",
                s.ref_frequency, s.ref_amplitude, s.initial_position, s.pendulum_mass, s.mass_location, s.seed
            ),
        );
    }
    dataset.save(&out, &extra)?;
    let (reloaded, _) = Dataset::load(&out)?;
    if reloaded != dataset {
        return Err(Failure::runtime(format!(
            "{}: dataset does not read back identically",
            out.display()
        )));
    }
    println!(
        "{} trajectories ({} train, {} validation, {} test), torque std {:.3} Nm",
        n,
        dataset.count(Split::Train),
        dataset.count(Split::Validation),
        dataset.count(Split::Test),
        dataset.normalization.torque.std
    );
    let mut m = RunManifest::new("gen-data", config, Some(seed));
    m.artifact("dataset", &out);
    finish(&m, &out)
}

fn without(map: &KvMap, key: &str) -> KvMap {
    let mut out = KvMap::new();
    for k in map.keys().filter(|k| *k != key) {
        out.set(k, map.get(k).unwrap_or_default());
    }
    out
}

fn load_dataset(config: &KvMap) -> Result<(Dataset, KvMap)> {
    let dir: String = config.require("data")?;
    Ok(Dataset::load(Path::new(&dir))?)
}

pub fn train_cmd(mut config: KvMap) -> Result<()> {
    let preset: Preset = config.require::<String>("preset")?.parse()?;
    let mut train_config = TrainConfig::default();
    train_config.apply_kv(&subset(&config, &TrainConfig::KEYS))?;
    let (dataset, _) = load_dataset(&config)?;
    let spec = preset.spec();
    let train_set = window(&dataset, spec.history, spec.input_mode(), Split::Train)?;
    let validation = window(&dataset, spec.history, spec.input_mode(), Split::Validation)?;
    let out = out_path(&mut config, format!("{}.ckpt", preset.name()));

    eprintln!(
        "training {} on {} windows, validating on {}",
        preset,
        train_set.len(),
        validation.len()
    );
    let outcome = train(preset.name(), spec, &train_set, &validation, &train_config)?;
    let bytes = outcome.checkpoint.to_bytes();
    write_checked(&out, &bytes)?;
    Checkpoint::load(&out)?;

    let mut history = String::from("epoch,train_loss,val_loss,best_val_loss,lr\n");
    for r in &outcome.history {
        let _ = writeln!(
            history,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.best_val_loss, r.lr
        );
    }
    let history_path = PathBuf::from(format!("{}.history.csv", out.display()));
    write_checked(&history_path, history.as_bytes())?;

    let meta = &outcome.checkpoint.meta;
    println!(
        "{}: {} epochs, best epoch {}, validation loss {:.6} (normalised)",
        preset, meta.epochs, meta.best_epoch, meta.val_loss
    );
    let mut m = RunManifest::new("train", config, Some(train_config.seed));
    m.artifact("checkpoint", &out);
    m.artifact("history", &history_path);
    finish(&m, &out)
}

fn checkpoints(config: &KvMap) -> Result<Vec<Checkpoint>> {
    let list: String = config.require("checkpoint")?;
    list.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| Checkpoint::load(Path::new(p)).map_err(Failure::from))
        .collect()
}

/// Windows of the requested split built with the checkpoint's normalisation.
fn windows_for(checkpoint: &Checkpoint, dataset: &Dataset, config: &KvMap) -> Result<WindowSet> {
    let split: Split = config.require::<String>("split")?.parse()?;
    let spec = checkpoint.model.spec();
    let mode = match config.require::<String>("input_mode")?.as_str() {
        "auto" => spec.input_mode(),
        "pv" => InputMode::Pv,
        "pva" => InputMode::Pva,
        other => return Err(Failure::usage(format!("unknown input mode `{other}`"))),
    };
    let trajectories: Vec<_> = dataset.split_trajectories(split).collect();
    Ok(WindowSet::new(
        &trajectories,
        &checkpoint.normalization,
        spec.history,
        mode,
    )?)
}

fn cap(config: &KvMap, key: &str) -> Result<Option<usize>> {
    match config.get(key) {
        None | Some("none") => Ok(None),
        Some(_) => Ok(Some(config.require(key)?)),
    }
}

pub fn eval_cmd(mut config: KvMap) -> Result<()> {
    let ckpts = checkpoints(&config)?;
    let (dataset, data_manifest) = load_dataset(&config)?;
    let max_windows = cap(&config, "max_windows")?;
    let ripple: bool = config.require("ripple")?;
    let out = out_path(&mut config, "eval.csv".into());

    let ripple_run = if ripple {
        let (actuator, gains) = actuator_from(&data_manifest)?;
        let rig = rig_from(&data_manifest)?;
        Some(run_constant_speed(
            &actuator,
            &gains,
            &rig,
            config.require("ripple_mass")?,
            config.require("ripple_location")?,
            0.0,
            config.require("ripple_speed")?,
            config.require("ripple_duration")?,
            dataset.seed,
        )?)
    } else {
        None
    };

    let mut reports = Vec::with_capacity(ckpts.len());
    for c in &ckpts {
        let windows = windows_for(c, &dataset, &config)?;
        let mut report = evaluate(c, &windows, max_windows)?;
        if let Some(run) = &ripple_run {
            let (pred, truth) = predict_series(c, run)?;
            report.ripple = Some(ripple_analysis(&pred, &truth, SAMPLE_RATE)?);
        }
        reports.push(report);
    }
    emit(reports, config, &out, "eval")
}

pub fn bench(mut config: KvMap) -> Result<()> {
    let ckpts = checkpoints(&config)?;
    let (dataset, _) = load_dataset(&config)?;
    let samples: usize = config.require("samples")?;
    let out = out_path(&mut config, "bench.csv".into());
    let mut reports = Vec::with_capacity(ckpts.len());
    for c in &ckpts {
        let windows = windows_for(c, &dataset, &config)?;
        let latency = latency_bench(c, &windows, samples)?;
        let mut report = evaluate(c, &windows, Some(samples))?;
        report.latency = Some(latency);
        reports.push(report);
    }
    emit(reports, config, &out, "bench")
}

fn emit(reports: Vec<EvalReport>, config: KvMap, out: &Path, command: &str) -> Result<()> {
    write_checked(out, reports_csv(&reports).as_bytes())?;
    print!("{}", reports_table(&reports));
    let mut m = RunManifest::new(command, config, None);
    m.artifact("report", out);
    finish(&m, out)
}

pub fn backdrive(mut config: KvMap) -> Result<()> {
    let (actuator, _) = actuator_from(&config)?;
    let out = out_path(&mut config, "backdrive.txt".into());
    let (static_nm, dynamic_nm) = virtual_backdrive_experiment(&actuator)?;
    println!("static backdrive torque  {static_nm:.3} Nm");
    println!("dynamic backdrive torque {dynamic_nm:.3} Nm");
    let mut result = KvMap::new();
    result.set("static_nm", static_nm);
    result.set("dynamic_nm", dynamic_nm);
    result.set("test_speed_rad_s", cqdd::actuator::BACKDRIVE_TEST_SPEED);
    write_checked(&out, result.to_string().as_bytes())?;
    let mut m = RunManifest::new("backdrive", config, None);
    m.artifact("result", &out);
    finish(&m, &out)
}

pub fn backlash(mut config: KvMap) -> Result<()> {
    let (actuator, _) = actuator_from(&config)?;
    let locations: usize = config.require("locations")?;
    let out = out_path(&mut config, "backlash.txt".into());
    let (mean, half_range) = virtual_backlash_experiment(&actuator, locations)?;
    println!("backlash {mean:.3} ± {half_range:.3} arcmin over {locations} locations");
    let mut result = KvMap::new();
    result.set("mean_arcmin", mean);
    result.set("half_range_arcmin", half_range);
    result.set("locations", locations);
    write_checked(&out, result.to_string().as_bytes())?;
    let mut m = RunManifest::new("backlash", config, None);
    m.artifact("result", &out);
    finish(&m, &out)
}
