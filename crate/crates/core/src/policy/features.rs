use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tasks::{generate_balanced, ChannelStats, TaskInstance, TaskRegistry};

/// Values per channel: min, max, mean, std, rise, zero-crossing rate, peak position.
pub const PER_CHANNEL: usize = 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("task {0:?} is not in the featurizer's registry")]
    UnknownTask(String),
    #[error("instance has {got} channels but the registry allows at most {max}")]
    TooManyChannels { got: usize, max: usize },
    #[error("series contains a non-finite value")]
    NonFinite,
}

/// Conditioning vector for the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures(pub Vec<f64>);

impl ContextFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps instances to fixed-length feature vectors: [`PER_CHANNEL`] statistics
/// for each channel slot (zero for absent channels), then a one-hot task id.
/// Statistics are standardized as `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub max_channels: usize,
    pub tasks: Vec<String>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Instances per task drawn by [`Featurizer::calibrated`].
pub const CALIBRATION_SAMPLES: usize = 256;
const CALIBRATION_SEED: u64 = 0xCA11_B4A7E;

impl Featurizer {
    /// Raw statistics, no standardization.
    pub fn new(registry: &TaskRegistry) -> Self {
        let max_channels = registry.max_channels();
        Featurizer {
            max_channels,
            tasks: registry.tasks.iter().map(|t| t.name.clone()).collect(),
            shift: vec![0.0; PER_CHANNEL * max_channels],
            scale: vec![1.0; PER_CHANNEL * max_channels],
        }
    }

    /// Standardizes each statistic by its mean and standard deviation over
    /// [`CALIBRATION_SAMPLES`] balanced instances per task, drawn from a fixed
    /// seed. Constant statistics keep scale 1.
    pub fn calibrated(registry: &TaskRegistry) -> Self {
        let mut f = Featurizer::new(registry);
        let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
        let rows: Vec<Vec<f64>> = registry
            .tasks
            .iter()
            .flat_map(|spec| generate_balanced(spec, CALIBRATION_SAMPLES, &mut rng))
            .map(|inst| f.featurize(&inst).expect("generated instances featurize").0)
            .collect();
        let n = rows.len() as f64;
        for j in 0..f.shift.len() {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            f.shift[j] = mean;
            f.scale[j] = if sd > 1e-12 { sd } else { 1.0 };
        }
        f
    }

    pub fn dim(&self) -> usize {
        PER_CHANNEL * self.max_channels + self.tasks.len()
    }

    pub fn featurize(&self, instance: &TaskInstance) -> Result<ContextFeatures, FeatureError> {
        let task = self
            .tasks
            .iter()
            .position(|t| *t == instance.task)
            .ok_or_else(|| FeatureError::UnknownTask(instance.task.clone()))?;
        let dims = instance.series.dims();
        if dims > self.max_channels {
            return Err(FeatureError::TooManyChannels {
                got: dims,
                max: self.max_channels,
            });
        }
        let mut out = vec![0.0; self.dim()];
        for d in 0..dims {
            let xs = instance.series.channel(d);
            if xs.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite);
            }
            let s = ChannelStats::compute(&xs);
            out[d * PER_CHANNEL..(d + 1) * PER_CHANNEL].copy_from_slice(&[
                s.min,
                s.max,
                s.mean,
                s.std,
                s.rise(),
                s.zero_crossing_rate(),
                s.peak_position(),
            ]);
        }
        for (j, x) in out.iter_mut().enumerate().take(self.shift.len()) {
            *x = (*x - self.shift[j]) / self.scale[j];
        }
        out[PER_CHANNEL * self.max_channels + task] = 1.0;
        Ok(ContextFeatures(out))
    }
}
