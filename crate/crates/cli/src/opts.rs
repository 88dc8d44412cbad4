//! Option tables and their resolution: built-in defaults, then the config
//! file, then command-line flags.
//!
//! Every option is addressed by a snake_case key. The same key names the
//! long flag (in kebab-case), the config-file entry and the manifest entry.

use std::fs;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use cqdd::actuator::{ActuatorConfig, PdGains};
use cqdd::geometry::GearParams;
use cqdd::kv::KvMap;
use cqdd::pendulum::{RigParams, ScenarioRanges};
use cqdd::train::TrainConfig;

use crate::error::Failure;

#[derive(Debug, Clone)]
pub enum Kind {
    /// always has a value
    Default(String),
    Required,
    Optional,
    Flag,
}

#[derive(Debug, Clone)]
pub struct Opt {
    pub key: &'static str,
    pub help: &'static str,
    pub kind: Kind,
    pub aliases: &'static [&'static str],
    pub short: Option<char>,
}

fn opt(key: &'static str, help: &'static str, kind: Kind) -> Opt {
    Opt {
        key,
        help,
        kind,
        aliases: &[],
        short: None,
    }
}

fn with_default(key: &'static str, help: &'static str, value: impl ToString) -> Opt {
    opt(key, help, Kind::Default(value.to_string()))
}

impl Opt {
    fn alias(mut self, aliases: &'static [&'static str]) -> Self {
        self.aliases = aliases;
        self
    }

    fn short(mut self, c: char) -> Self {
        self.short = Some(c);
        self
    }

    fn arg(&self) -> Arg {
        let help = match &self.kind {
            Kind::Default(d) => format!("{} [default: {d}]", self.help),
            Kind::Required => format!("{} [required]", self.help),
            _ => self.help.to_string(),
        };
        let mut arg = Arg::new(self.key).long(kebab(self.key)).help(help);
        for a in self.aliases {
            arg = arg.visible_alias(*a);
        }
        if let Some(c) = self.short {
            arg = arg.short(c);
        }
        match self.kind {
            Kind::Flag => arg.action(ArgAction::SetTrue),
            _ => arg.num_args(1).value_name("VALUE"),
        }
    }

    fn matches_name(&self, name: &str) -> bool {
        self.key == name || self.aliases.iter().any(|a| snake(a) == name)
    }
}

fn kebab(key: &str) -> String {
    key.replace('_', "-")
}

fn snake(key: &str) -> String {
    key.replace('-', "_")
}

fn gear_opts() -> Vec<Opt> {
    let g = GearParams::default();
    vec![
        with_default("pitch_radius", "pitch radius of the outer pins, mm", g.pitch_radius).alias(&["zr"]),
        with_default("eccentricity", "cam eccentricity, mm", g.eccentricity).alias(&["ze"]),
        with_default(
            "outer_pin_diameter",
            "outer (ring) pin diameter, mm",
            g.outer_pin_diameter,
        )
        .alias(&["zp"]),
        with_default("output_pin_diameter", "output pin diameter, mm", g.output_pin_diameter).alias(&["zo"]),
        with_default("teeth", "lobes on the cycloid disk", g.num_teeth).alias(&["znt"]),
        with_default("pins", "outer ring pins", g.num_outer_pins).alias(&["znp"]),
        with_default(
            "output_pin_circle_radius",
            "radius of the output pin circle, mm",
            g.output_pin_circle_radius,
        ),
        with_default("output_pins", "number of output pins", g.num_output_pins),
    ]
}

fn actuator_opts() -> Vec<Opt> {
    let helps = [
        "gear ratio",
        "rotor inertia reflected to the output, kg m^2",
        "output-side inertia before the load, kg m^2",
        "ripple amplitude at full load, Nm",
        "ripple cycles per output revolution",
        "ripple phase, rad",
        "load at which ripple saturates, Nm",
        "backlash dead band, arcmin",
        "breakaway friction at the output, Nm",
        "sliding friction at the output, Nm",
        "viscous friction, Nm s/rad",
        "motor torque limit at the output, Nm",
        "velocity below which the drivetrain can stick, rad/s",
    ];
    let defaults = ActuatorConfig::default().to_kv();
    let mut out: Vec<Opt> = ActuatorConfig::KEYS
        .iter()
        .zip(helps)
        .map(|(k, h)| opt(k, h, Kind::Default(short_float(defaults.get(k).unwrap_or_default()))))
        .collect();
    let g = PdGains::default();
    out.push(with_default("kp", "position gain, Nm/rad", g.kp));
    out.push(with_default("kd", "velocity gain, Nm s/rad", g.kd));
    out
}

fn rig_opts() -> Vec<Opt> {
    let r = RigParams::default();
    vec![
        with_default("bar_inertia", "pendulum bar inertia, kg m^2", r.bar_inertia),
        with_default("wall_stiffness", "wall stiffness, Nm/rad", r.wall_stiffness),
        with_default("wall_damping", "wall damping, Nm s/rad", r.wall_damping),
        with_default("gravity", "gravitational acceleration, m/s^2", r.gravity),
        with_default(
            "accel_noise_std",
            "acceleration measurement noise, rad/s^2",
            r.accel_noise_std,
        ),
        with_default("accel_filter_hz", "acceleration low-pass cutoff, Hz", r.accel_filter_hz),
        with_default("internal_rate", "physics rate, Hz", r.internal_rate),
        with_default("duration", "seconds per scenario", r.scenario_duration),
        with_default("wall_angle", "wall position, rad from hanging", r.wall_angle),
    ]
}

fn range_opts() -> Vec<Opt> {
    let s = ScenarioRanges::default();
    let masses = s.pendulum_masses.map(|m| m.to_string()).join(",");
    vec![
        with_default("ref_frequency_min", "reference frequency range, Hz", s.ref_frequency.0),
        with_default("ref_frequency_max", "", s.ref_frequency.1),
        with_default("ref_amplitude_min", "reference amplitude range, rad", s.ref_amplitude.0),
        with_default("ref_amplitude_max", "", s.ref_amplitude.1),
        with_default(
            "initial_position_min",
            "initial position range, rad",
            s.initial_position.0,
        ),
        with_default("initial_position_max", "", s.initial_position.1),
        with_default("mass_location_min", "mass location range, m", s.mass_location.0),
        with_default("mass_location_max", "", s.mass_location.1),
        with_default("pendulum_masses", "the two pendulum masses, kg", masses),
    ]
}

fn train_opts() -> Vec<Opt> {
    let defaults = TrainConfig::default().to_kv();
    let helps = [
        "windows per mini-batch",
        "maximum epochs",
        "seed for initialisation and shuffling",
        "epochs without validation improvement before stopping",
        "global gradient-norm clip",
        "cap on mini-batches per epoch, or none",
        "cap on validation windows, or none",
        "initial learning rate",
        "peak learning rate",
        "fraction of steps spent warming up",
        "final learning rate as a fraction of the initial one",
    ];
    TrainConfig::KEYS
        .iter()
        .zip(helps)
        .map(|(k, h)| opt(k, h, Kind::Default(short_float(defaults.get(k).unwrap_or_default()))))
        .collect()
}

/// `1.5000000000000000e0` reads poorly in help and manifests.
fn short_float(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if s.contains('e') => v.to_string(),
        _ => s.to_string(),
    }
}

fn out_opt(help: &'static str) -> Opt {
    opt("out", help, Kind::Optional).short('o')
}

/// Option table for each subcommand.
pub fn table(command: &str) -> Vec<Opt> {
    let mut opts = match command {
        "profile" => {
            let mut v = gear_opts();
            v.push(with_default("samples", "points along the profile", 2000));
            v.push(with_default("format", "csv or svg", "csv"));
            v.push(out_opt("output file [default: profile.<format>]"));
            v
        }
        "gen-data" => {
            let mut v = vec![
                with_default("scenarios", "number of pendulum scenarios", 100).short('n'),
                with_default("seed", "seed for scenarios, noise and the split", 0),
                with_default("train_fraction", "share of trajectories for training", 0.7),
                with_default("validation_fraction", "share for validation", 0.15),
                with_default("test_fraction", "share for testing", 0.15),
            ];
            v.extend(range_opts());
            v.extend(rig_opts());
            v.extend(actuator_opts());
            v.push(out_opt("dataset directory [default: data]"));
            v
        }
        "train" => {
            let mut v = vec![
                opt("preset", "pva-gru, pv-gru, mlp-tuned or mlp-baseline", Kind::Required),
                opt("data", "dataset directory", Kind::Required),
            ];
            v.extend(train_opts());
            v.push(out_opt("checkpoint file [default: <preset>.ckpt]"));
            v
        }
        "eval" | "bench" => {
            let mut v = vec![
                opt("checkpoint", "checkpoint file(s), comma separated", Kind::Required),
                opt("data", "dataset directory", Kind::Required),
                with_default("split", "train, validation or test", "test"),
                with_default("input_mode", "auto (from the checkpoint), pv or pva", "auto"),
            ];
            if command == "eval" {
                v.push(with_default("max_windows", "cap on evaluated windows, or none", "none"));
                v.push(opt("ripple", "also run the constant-speed ripple analysis", Kind::Flag));
                v.push(with_default(
                    "ripple_speed",
                    "output speed of the ripple run, rad/s",
                    1.0807,
                ));
                v.push(with_default("ripple_duration", "length of the ripple run, s", 20.0));
                v.push(with_default("ripple_mass", "pendulum mass of the ripple run, kg", 1.14));
                v.push(with_default(
                    "ripple_location",
                    "mass location of the ripple run, m",
                    0.5,
                ));
                v.push(out_opt("report CSV [default: eval.csv]"));
            } else {
                v.push(with_default("samples", "timed single-window passes", 16000));
                v.push(out_opt("report CSV [default: bench.csv]"));
            }
            v
        }
        "backdrive" => {
            let mut v = actuator_opts();
            v.push(out_opt("result file [default: backdrive.txt]"));
            v
        }
        "backlash" => {
            let mut v = actuator_opts();
            v.push(with_default("locations", "output angles to measure at", 6));
            v.push(out_opt("result file [default: backlash.txt]"));
            v
        }
        _ => Vec::new(),
    };
    opts.push(opt(
        "manifest",
        "run manifest path [default: <out>.manifest.txt]",
        Kind::Optional,
    ));
    opts
}

pub const SUBCOMMANDS: [(&str, &str); 7] = [
    ("profile", "Cycloid disk profile as CSV or SVG"),
    ("gen-data", "Simulate pendulum scenarios into a dataset directory"),
    ("train", "Train a preset on a dataset"),
    ("eval", "Error statistics of checkpoints on a dataset split"),
    ("bench", "Single-window inference latency"),
    ("backdrive", "Virtual backdrive experiment"),
    ("backlash", "Virtual backlash experiment"),
];

pub fn cli() -> Command {
    let mut cmd = Command::new("cqdd")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Cycloidal QDD actuator simulation and learned torque estimation")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .help("flat key = value file supplying any option; flags override it"),
        );
        for o in table(name) {
            sub = sub.arg(o.arg());
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Keys a manifest carries that are not options; ignored when a manifest is
/// fed back in as a config file.
fn is_meta(key: &str) -> bool {
    key.starts_with("run.") || key.starts_with("artifact.")
}

/// Defaults, overlaid by the config file, overlaid by explicit flags.
pub fn resolve(command: &str, matches: &ArgMatches) -> Result<KvMap, Failure> {
    let opts = table(command);
    let mut map = KvMap::new();
    for o in &opts {
        match &o.kind {
            Kind::Default(d) => map.set(o.key, d),
            Kind::Flag => map.set(o.key, false),
            _ => {}
        }
    }
    if let Some(path) = matches.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{path}: {e}")))?;
        let file = KvMap::parse(&text).map_err(|e| Failure::usage(format!("{path}: {e}")))?;
        for key in file.keys() {
            let name = snake(key);
            if is_meta(&name) {
                continue;
            }
            let o = opts
                .iter()
                .find(|o| o.matches_name(&name))
                .ok_or_else(|| Failure::usage(format!("{path}: `{key}` is not an option of `{command}`")))?;
            map.set(o.key, file.get(key).unwrap_or_default());
        }
    }
    for o in &opts {
        if matches.value_source(o.key) != Some(ValueSource::CommandLine) {
            continue;
        }
        match o.kind {
            Kind::Flag => map.set(o.key, true),
            _ => {
                if let Some(v) = matches.get_one::<String>(o.key) {
                    map.set(o.key, v);
                }
            }
        }
    }
    for o in &opts {
        if matches!(o.kind, Kind::Required) && map.get(o.key).is_none() {
            return Err(Failure::usage(format!(
                "missing --{} (flag or config entry)",
                kebab(o.key)
            )));
        }
    }
    Ok(map)
}

/// The entries of `map` whose keys are in `keys`.
pub fn subset(map: &KvMap, keys: &[&str]) -> KvMap {
    let mut out = KvMap::new();
    for k in keys {
        if let Some(v) = map.get(k) {
            out.set(k, v);
        }
    }
    out
}
