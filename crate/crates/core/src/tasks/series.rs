use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("series needs at least 2 timesteps, got {0}")]
    TooShort(usize),
    #[error("series needs at least one channel")]
    NoChannels,
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value {value} at row {row}, channel {channel}")]
    NonFinite {
        row: usize,
        channel: usize,
        value: f64,
    },
}

/// A `T × D` multivariate series. Rows are timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSeries", into = "RawSeries")]
pub struct TimeSeries {
    rows: Vec<Vec<f64>>,
    channels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawSeries {
    channels: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawSeries> for TimeSeries {
    type Error = SeriesError;
    fn try_from(raw: RawSeries) -> Result<Self, SeriesError> {
        TimeSeries::new(raw.values, raw.channels)
    }
}

impl From<TimeSeries> for RawSeries {
    fn from(s: TimeSeries) -> RawSeries {
        RawSeries {
            channels: s.channels,
            values: s.rows,
        }
    }
}

impl TimeSeries {
    pub fn new(rows: Vec<Vec<f64>>, channels: Vec<String>) -> Result<Self, SeriesError> {
        if channels.is_empty() {
            return Err(SeriesError::NoChannels);
        }
        if rows.len() < 2 {
            return Err(SeriesError::TooShort(rows.len()));
        }
        for (row, values) in rows.iter().enumerate() {
            if values.len() != channels.len() {
                return Err(SeriesError::Ragged {
                    row,
                    got: values.len(),
                    expected: channels.len(),
                });
            }
            if let Some((channel, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite())
            {
                return Err(SeriesError::NonFinite {
                    row,
                    channel,
                    value,
                });
            }
        }
        Ok(TimeSeries { rows, channels })
    }

    /// Builds a series from per-channel columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>], channels: Vec<String>) -> Result<Self, SeriesError> {
        let len = columns.first().map_or(0, Vec::len);
        let rows = (0..len)
            .map(|t| {
                columns
                    .iter()
                    .map(|c| c.get(t).copied().unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        TimeSeries::new(rows, channels)
    }

    pub fn univariate(values: &[f64]) -> Result<Self, SeriesError> {
        TimeSeries::new(
            values.iter().map(|&v| vec![v]).collect(),
            vec!["value".to_string()],
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn channel(&self, d: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[d]).collect()
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.rows
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}
