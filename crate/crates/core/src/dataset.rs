//! Trajectory datasets: trajectory-level splits, z-score normalisation fitted
//! on the training split, and sliding input windows.
//!
//! Model inputs are the position error `q_e = q_ref − q`, the velocity and,
//! for [`InputMode::Pva`], the logged acceleration. The target is the
//! transmitted torque at the last step of each window.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::kv::{KvError, KvMap};
use crate::pendulum::{PendulumError, Trajectory};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FORMAT_TAG: &str = "cqdd-dataset-1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 3 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("split leaves the training set empty")]
    EmptyTrain,
    #[error("channel `{0}` is constant over the training split")]
    ConstantChannel(&'static str),
    #[error("trajectory {index} has {len} samples, shorter than history {history}")]
    TooShort { index: usize, len: usize, history: usize },
    #[error("history must be at least 1")]
    ZeroHistory,
    #[error("no trajectories in the {0} split")]
    EmptySplit(Split),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Trajectory(#[from] PendulumError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    /// Population mean and standard deviation (two-pass).
    fn fit(name: &'static str, values: impl Iterator<Item = f64> + Clone) -> Result<Self, DatasetError> {
        let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        let mean = sum / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(DatasetError::ConstantChannel(name));
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub position_error: ChannelStats,
    pub velocity: ChannelStats,
    pub acceleration: ChannelStats,
    pub torque: ChannelStats,
}

impl Normalization {
    pub const CHANNEL_NAMES: [&'static str; 4] = ["q_e", "qd", "qdd", "tau"];

    pub fn fit<'a>(trajectories: impl Iterator<Item = &'a Trajectory> + Clone) -> Result<Self, DatasetError> {
        let records = trajectories.flat_map(|t| t.records.iter());
        Ok(Self {
            position_error: ChannelStats::fit("q_e", records.clone().map(|r| r.q_ref - r.q))?,
            velocity: ChannelStats::fit("qd", records.clone().map(|r| r.qd))?,
            acceleration: ChannelStats::fit("qdd", records.clone().map(|r| r.qdd))?,
            torque: ChannelStats::fit("tau", records.map(|r| r.tau))?,
        })
    }

    pub fn channels(&self) -> [ChannelStats; 4] {
        [self.position_error, self.velocity, self.acceleration, self.torque]
    }

    pub fn from_channels(c: [ChannelStats; 4]) -> Self {
        Self {
            position_error: c[0],
            velocity: c[1],
            acceleration: c[2],
            torque: c[3],
        }
    }

    pub fn write_kv(&self, map: &mut KvMap) {
        for (name, stats) in Self::CHANNEL_NAMES.iter().zip(self.channels()) {
            map.set_f64(&format!("norm.{name}.mean"), stats.mean);
            map.set_f64(&format!("norm.{name}.std"), stats.std);
        }
    }

    pub fn read_kv(map: &KvMap) -> Result<Self, DatasetError> {
        let mut c = [ChannelStats { mean: 0.0, std: 1.0 }; 4];
        for (slot, name) in c.iter_mut().zip(Self::CHANNEL_NAMES) {
            slot.mean = map.require(&format!("norm.{name}.mean"))?;
            slot.std = map.require(&format!("norm.{name}.std"))?;
        }
        Ok(Self::from_channels(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub normalization: Normalization,
    pub split: Vec<Split>,
    pub seed: u64,
}

/// Assigns whole trajectories to train/validation/test and fits the
/// normalisation on the training trajectories only.
pub fn build_dataset(trajectories: Vec<Trajectory>, fractions: [f64; 3], seed: u64) -> Result<Dataset, DatasetError> {
    let n = trajectories.len();
    if n < 3 {
        return Err(DatasetError::TooFewTrajectories(n));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(fractions));
    }
    let count = |f: f64| {
        let c = (f * n as f64).round() as usize;
        if f > 0.0 {
            c.max(1)
        } else {
            c
        }
    };
    let n_val = count(fractions[1]);
    let n_test = count(fractions[2]);
    if n_val + n_test >= n {
        return Err(DatasetError::EmptyTrain);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::fork(seed, "split"));
    let mut split = vec![Split::Train; n];
    for &i in &order[..n_val] {
        split[i] = Split::Validation;
    }
    for &i in &order[n_val..n_val + n_test] {
        split[i] = Split::Test;
    }
    for t in &trajectories {
        t.validate()?;
    }
    let normalization = Normalization::fit(
        trajectories
            .iter()
            .zip(&split)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(t, _)| t),
    )?;
    Ok(Dataset {
        trajectories,
        normalization,
        split,
        seed,
    })
}

impl Dataset {
    pub fn split_trajectories(&self, which: Split) -> impl Iterator<Item = &Trajectory> {
        self.trajectories
            .iter()
            .zip(&self.split)
            .filter(move |(_, s)| **s == which)
            .map(|(t, _)| t)
    }

    pub fn count(&self, which: Split) -> usize {
        self.split.iter().filter(|s| **s == which).count()
    }

    /// Writes `trajectories/traj_NNN.csv` and a manifest. `extra` entries
    /// (scenario parameters, generator settings) are appended to the manifest.
    pub fn save(&self, dir: &Path, extra: &KvMap) -> Result<(), DatasetError> {
        let traj_dir = dir.join("trajectories");
        fs::create_dir_all(&traj_dir).map_err(io_err(&traj_dir))?;
        for (i, t) in self.trajectories.iter().enumerate() {
            let path = traj_dir.join(trajectory_file(i));
            fs::write(&path, t.to_csv()).map_err(io_err(&path))?;
        }
        let mut map = KvMap::new();
        map.set("format", FORMAT_TAG);
        map.set("seed", self.seed);
        map.set("num_trajectories", self.trajectories.len());
        map.set(
            "split",
            self.split.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        self.normalization.write_kv(&mut map);
        map.merge(extra);
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, map.to_string()).map_err(io_err(&path))?;
        Ok(())
    }

    /// Loads a dataset directory; returns the full manifest alongside.
    pub fn load(dir: &Path) -> Result<(Self, KvMap), DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let map = KvMap::parse(&text)?;
        let format: String = map.require("format")?;
        if format != FORMAT_TAG {
            return Err(DatasetError::Manifest(format!("unsupported format `{format}`")));
        }
        let n: usize = map.require("num_trajectories")?;
        let split_text: String = map.require("split")?;
        let split = split_text
            .split(',')
            .map(Split::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        if split.len() != n {
            return Err(DatasetError::Manifest(format!(
                "split lists {} entries for {n} trajectories",
                split.len()
            )));
        }
        let mut trajectories = Vec::with_capacity(n);
        for i in 0..n {
            let p = dir.join("trajectories").join(trajectory_file(i));
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            trajectories.push(Trajectory::from_csv(&text)?);
        }
        let dataset = Dataset {
            trajectories,
            normalization: Normalization::read_kv(&map)?,
            split,
            seed: map.require("seed")?,
        };
        Ok((dataset, map))
    }
}

fn trajectory_file(i: usize) -> String {
    format!("traj_{i:03}.csv")
}

/// Which joint-state channels a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// position error, velocity
    Pv,
    /// position error, velocity, acceleration
    Pva,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Pv => 2,
            InputMode::Pva => 3,
        }
    }

    pub fn from_channels(c: usize) -> Option<Self> {
        match c {
            2 => Some(InputMode::Pv),
            3 => Some(InputMode::Pva),
            _ => None,
        }
    }
}

struct Series {
    /// channel-major, normalised
    inputs: Vec<Vec<f64>>,
    target: Vec<f64>,
}

/// Sliding windows over a set of trajectories, materialised on demand.
pub struct WindowSet {
    mode: InputMode,
    history: usize,
    normalization: Normalization,
    series: Vec<Series>,
    /// (series, index of the window's last sample)
    index: Vec<(usize, usize)>,
}

impl WindowSet {
    pub fn new(
        trajectories: &[&Trajectory],
        normalization: &Normalization,
        history: usize,
        mode: InputMode,
    ) -> Result<Self, DatasetError> {
        if history == 0 {
            return Err(DatasetError::ZeroHistory);
        }
        let mut series = Vec::with_capacity(trajectories.len());
        let mut index = Vec::new();
        let n = normalization;
        for (i, t) in trajectories.iter().enumerate() {
            if t.len() < history {
                return Err(DatasetError::TooShort {
                    index: i,
                    len: t.len(),
                    history,
                });
            }
            let r = &t.records;
            let mut inputs = vec![
                r.iter()
                    .map(|r| n.position_error.normalize(r.q_ref - r.q))
                    .collect::<Vec<_>>(),
                r.iter().map(|r| n.velocity.normalize(r.qd)).collect(),
            ];
            if mode == InputMode::Pva {
                inputs.push(r.iter().map(|r| n.acceleration.normalize(r.qdd)).collect());
            }
            let target = r.iter().map(|r| n.torque.normalize(r.tau)).collect();
            index.extend((history - 1..t.len()).map(|end| (i, end)));
            series.push(Series { inputs, target });
        }
        Ok(Self {
            mode,
            history,
            normalization: *normalization,
            series,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Window `i` as a channels × history matrix, row-major.
    pub fn input(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.channels() * self.history];
        self.write_input(i, &mut out);
        out
    }

    pub fn write_input(&self, i: usize, out: &mut [f64]) {
        let (s, end) = self.index[i];
        let start = end + 1 - self.history;
        for (c, channel) in self.series[s].inputs.iter().enumerate() {
            out[c * self.history..(c + 1) * self.history].copy_from_slice(&channel[start..=end]);
        }
    }

    /// Normalised torque at the window's last step.
    pub fn target(&self, i: usize) -> f64 {
        let (s, end) = self.index[i];
        self.series[s].target[end]
    }

    /// Writes time step `t` of each window in `batch` into `out`, laid out
    /// channels × batch (column per window).
    pub fn write_step(&self, batch: &[usize], t: usize, out: &mut [f64]) {
        let b = batch.len();
        for (col, &i) in batch.iter().enumerate() {
            let (s, end) = self.index[i];
            let at = end + 1 - self.history + t;
            for (c, channel) in self.series[s].inputs.iter().enumerate() {
                out[c * b + col] = channel[at];
            }
        }
    }

    /// Which trajectory (in construction order) window `i` came from.
    pub fn source(&self, i: usize) -> usize {
        self.index[i].0
    }
}

/// Windows over one split of `dataset`.
pub fn window(dataset: &Dataset, history: usize, mode: InputMode, split: Split) -> Result<WindowSet, DatasetError> {
    let trajectories: Vec<&Trajectory> = dataset.split_trajectories(split).collect();
    if trajectories.is_empty() {
        return Err(DatasetError::EmptySplit(split));
    }
    WindowSet::new(&trajectories, &dataset.normalization, history, mode)
}
