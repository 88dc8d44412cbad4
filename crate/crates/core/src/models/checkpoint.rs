//! Binary checkpoint: little-endian, magic and version, spec block, model
//! name, normalisation, training metadata, then every parameter as `f64` in
//! declaration order.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor2D;
use crate::dataset::{ChannelStats, InputMode, Normalization};

use super::{Model, ModelError, ModelKind, ModelSpec};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CQDDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epochs actually run.
    pub epochs: u32,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub name: String,
    pub model: Model,
    pub normalization: Normalization,
    pub meta: TrainingMeta,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or(ModelError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.model.spec();
        let mut out = Vec::with_capacity(128 + 8 * spec.num_params());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match spec.kind {
            ModelKind::Gru => 0,
            ModelKind::Mlp => 1,
        });
        for v in [spec.input_channels, spec.history, spec.layers, spec.hidden_size] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.name.len() as u32).to_le_bytes());
        out.extend_from_slice(self.name.as_bytes());
        for c in self.normalization.channels() {
            out.extend_from_slice(&c.mean.to_le_bytes());
            out.extend_from_slice(&c.std.to_le_bytes());
        }
        let m = &self.meta;
        out.extend_from_slice(&m.seed.to_le_bytes());
        out.extend_from_slice(&m.epochs.to_le_bytes());
        out.extend_from_slice(&m.best_epoch.to_le_bytes());
        out.extend_from_slice(&m.train_loss.to_le_bytes());
        out.extend_from_slice(&m.val_loss.to_le_bytes());
        out.extend_from_slice(&(spec.num_params() as u64).to_le_bytes());
        for p in self.model.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Version { found: version });
        }
        let kind = match r.u8("spec")? {
            0 => ModelKind::Gru,
            1 => ModelKind::Mlp,
            k => return Err(ModelError::ShapeInconsistent(format!("unknown model kind tag {k}"))),
        };
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("spec")? as usize;
        }
        let spec = ModelSpec {
            kind,
            input_channels: dims[0],
            history: dims[1],
            layers: dims[2],
            hidden_size: dims[3],
        };
        spec.validate()
            .map_err(|e| ModelError::ShapeInconsistent(e.to_string()))?;
        let name_len = r.u32("name")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| ModelError::ShapeInconsistent("model name is not UTF-8".into()))?;
        let mut channels = [ChannelStats { mean: 0.0, std: 1.0 }; 4];
        for c in &mut channels {
            c.mean = r.f64("normalization")?;
            c.std = r.f64("normalization")?;
        }
        let meta = TrainingMeta {
            seed: r.u64("metadata")?,
            epochs: r.u32("metadata")?,
            best_epoch: r.u32("metadata")?,
            train_loss: r.f64("metadata")?,
            val_loss: r.f64("metadata")?,
        };
        let count = r.u64("parameter count")? as usize;
        if count != spec.num_params() {
            return Err(ModelError::ShapeInconsistent(format!(
                "{count} parameters stored, spec needs {}",
                spec.num_params()
            )));
        }
        let mut params = Vec::new();
        for (rows, cols) in spec.param_shapes() {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f64("parameters")?);
            }
            params.push(Tensor2D::new(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(ModelError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self {
            name,
            model: Model::from_params(spec, params)?,
            normalization: Normalization::from_channels(channels),
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Rejects a checkpoint whose input channels differ from `mode`.
    pub fn expect_mode(&self, mode: InputMode) -> Result<(), ModelError> {
        let have = self.model.spec().input_channels;
        if have != mode.channels() {
            return Err(ModelError::ShapeInconsistent(format!(
                "checkpoint {:?} takes {have} input channels, data provides {}",
                self.name,
                mode.channels()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Preset;
    use crate::seed;

    fn sample(preset: Preset) -> Checkpoint {
        let mut rng = seed::fork(11, "ckpt");
        let mut model = Model::init(preset.spec(), &mut rng).unwrap();
        // non-zero biases so they are exercised too
        for p in model.params_mut() {
            if p.cols() == 1 {
                for v in p.data_mut() {
                    *v = 0.125;
                }
            }
        }
        let c = ChannelStats { mean: 0.1, std: 2.0 };
        Checkpoint {
            name: preset.name().to_string(),
            model,
            normalization: Normalization::from_channels([c; 4]),
            meta: TrainingMeta {
                seed: 7,
                epochs: 3,
                best_epoch: 2,
                train_loss: 0.5,
                val_loss: 0.25,
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        for preset in Preset::ALL {
            let ck = sample(preset);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            assert_eq!(back, ck);
            let window: Vec<f64> = (0..ck.model.spec().window_len()).map(|i| (i as f64).sin()).collect();
            assert_eq!(
                ck.model.predict(&window).unwrap().to_bits(),
                back.model.predict(&window).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample(Preset::MlpBaseline).to_bytes();

        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(ModelError::BadMagic)));

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(ModelError::Version { found: 9 })
        ));

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(ModelError::Truncated("parameters"))
        ));

        // hidden size field altered: the stored parameter count no longer fits
        let mut bad = bytes.clone();
        bad[12 + 1 + 12] = 31;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(ModelError::ShapeInconsistent(_))
        ));

        let mut long = bytes;
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(ModelError::TrailingBytes(1))
        ));
    }

    #[test]
    fn mode_mismatch() {
        let ck = sample(Preset::PvaGru);
        assert!(ck.expect_mode(InputMode::Pva).is_ok());
        assert!(matches!(
            ck.expect_mode(InputMode::Pv),
            Err(ModelError::ShapeInconsistent(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample(Preset::PvGru);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing")),
            Err(ModelError::Io { .. })
        ));
    }
}
