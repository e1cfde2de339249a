use serde::{Deserialize, Serialize};

use super::ModelError;

/// Empirical histogram of a class's segment durations, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationDistribution {
    pub class_id: usize,
    pub bin_edges: Vec<f64>,
    pub bin_mass: Vec<f64>,
    pub n_samples: usize,
}

impl DurationDistribution {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvariantViolation(format!("duration histogram {}: {msg}", self.class_id)));
        if self.bin_edges.len() < 2 || self.bin_mass.len() + 1 != self.bin_edges.len() {
            return bad(format!("{} edges for {} bins", self.bin_edges.len(), self.bin_mass.len()));
        }
        if self.bin_edges.iter().any(|e| !e.is_finite()) || self.bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return bad("edges must be finite and strictly increasing".into());
        }
        if self.bin_mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return bad("negative or non-finite mass".into());
        }
        let total: f64 = self.bin_mass.iter().sum();
        if (total - 1.0).abs() > super::hmm::STOCHASTIC_TOL {
            return bad(format!("masses sum to {total}"));
        }
        Ok(())
    }

    /// Histogram of `durations` over the given edges. Samples outside
    /// `[first, last]` are dropped but still counted in `n_samples`.
    pub fn from_durations_with_edges(class_id: usize, durations: &[f64], bin_edges: Vec<f64>) -> Result<Self, ModelError> {
        let mut counts = vec![0usize; bin_edges.len().saturating_sub(1)];
        let mut probe = Self {
            class_id,
            bin_mass: vec![0.0; counts.len()],
            bin_edges,
            n_samples: durations.len(),
        };
        for &d in durations {
            if let Some(bin) = probe.bin_of(d) {
                counts[bin] += 1;
            }
        }
        let inside: usize = counts.iter().sum();
        if inside == 0 {
            return Err(ModelError::InvariantViolation(format!(
                "duration histogram {class_id}: no sample falls inside the edges"
            )));
        }
        probe.bin_mass = counts.iter().map(|&c| c as f64 / inside as f64).collect();
        probe.validate()?;
        Ok(probe)
    }

    /// Equal-width histogram over `[0, max duration]`. When every duration is
    /// zero the support is widened to `[0, 1]` second.
    pub fn from_durations(class_id: usize, durations: &[f64], n_bins: usize) -> Result<Self, ModelError> {
        if n_bins == 0 {
            return Err(ModelError::InvariantViolation("duration histogram needs at least one bin".into()));
        }
        let max = durations.iter().copied().fold(0.0f64, f64::max);
        let upper = if max > 0.0 { max } else { 1.0 };
        let mut edges: Vec<f64> = (0..n_bins).map(|i| upper * i as f64 / n_bins as f64).collect();
        edges.push(upper);
        Self::from_durations_with_edges(class_id, durations, edges)
    }

    /// Bin containing `t`: bins are right-open except the last, which is closed.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        let first = *self.bin_edges.first()?;
        let last = *self.bin_edges.last()?;
        if !(t >= first && t <= last) {
            return None;
        }
        // first edge strictly greater than t, minus one
        let upper = self.bin_edges.partition_point(|&e| e <= t);
        Some(upper.saturating_sub(1).min(self.bin_mass.len() - 1))
    }

    /// Probability mass of the bin containing `t_s`, or 0 outside the support.
    pub fn likelihood(&self, t_s: f64) -> f64 {
        self.bin_of(t_s).map_or(0.0, |b| self.bin_mass[b])
    }
}
