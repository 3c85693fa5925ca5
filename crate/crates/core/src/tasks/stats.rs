/// Summary statistics of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Least-squares slope per timestep.
    pub slope: f64,
    /// Sign changes of `x - mean`, skipping samples equal to the mean.
    pub zero_crossings: usize,
    /// Index of the largest absolute deviation from the mean (first on ties).
    pub peak_index: usize,
    pub len: usize,
}

impl ChannelStats {
    pub fn compute(xs: &[f64]) -> ChannelStats {
        let n = xs.len();
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (min, max) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;

        let t_mean = (nf - 1.0) / 2.0;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (t, x) in xs.iter().enumerate() {
            let dt = t as f64 - t_mean;
            sxy += dt * (x - mean);
            sxx += dt * dt;
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };

        let mut zero_crossings = 0;
        let mut last_sign = 0i8;
        let mut peak_index = 0;
        let mut peak_dev = -1.0;
        for (t, x) in xs.iter().enumerate() {
            let dev = x - mean;
            let sign = if dev > 0.0 {
                1
            } else if dev < 0.0 {
                -1
            } else {
                0
            };
            if sign != 0 {
                if last_sign != 0 && sign != last_sign {
                    zero_crossings += 1;
                }
                last_sign = sign;
            }
            if dev.abs() > peak_dev {
                peak_dev = dev.abs();
                peak_index = t;
            }
        }

        ChannelStats {
            min,
            max,
            mean,
            std: var.sqrt(),
            slope,
            zero_crossings,
            peak_index,
            len: n,
        }
    }

    /// Total rise of the fitted trend line over the window.
    pub fn rise(&self) -> f64 {
        self.slope * (self.len.saturating_sub(1)) as f64
    }

    pub fn zero_crossing_rate(&self) -> f64 {
        self.zero_crossings as f64 / (self.len.saturating_sub(1)).max(1) as f64
    }

    pub fn peak_position(&self) -> f64 {
        self.peak_index as f64 / (self.len.saturating_sub(1)).max(1) as f64
    }
}
