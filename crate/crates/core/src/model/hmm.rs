//! Discrete-observation hidden Markov model with log-space forward filtering.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Tolerance for row-stochastic checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Numerically stable `ln(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn check_distribution(what: &str, row: &[f64]) -> Result<(), ModelError> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ModelError::InvariantViolation(format!("{what}: negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(ModelError::InvariantViolation(format!("{what}: sums to {sum}, not 1")));
    }
    Ok(())
}

/// Hidden Markov model over `n_states` hidden states and `n_symbols`
/// observation symbols. Probabilities are kept linear for storage and
/// mirrored in log-space for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmmTables", into = "HmmTables")]
pub struct Hmm {
    tables: HmmTables,
    log_initial: Vec<f64>,
    /// Row-major `[from * K + to]`.
    log_transition: Vec<f64>,
    /// Same layout, linear.
    transition: Vec<f64>,
    /// Symbol-major `[symbol * K + state]` so one observation's column is contiguous.
    log_emission_by_symbol: Vec<f64>,
}

/// Linear probability tables, the persisted form of an [`Hmm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmTables {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
}

impl TryFrom<HmmTables> for Hmm {
    type Error = ModelError;

    fn try_from(tables: HmmTables) -> Result<Self, Self::Error> {
        Hmm::from_tables(tables)
    }
}

impl From<Hmm> for HmmTables {
    fn from(hmm: Hmm) -> Self {
        hmm.tables
    }
}

impl Hmm {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        Self::from_tables(HmmTables {
            initial,
            transition,
            emission,
        })
    }

    pub fn from_tables(tables: HmmTables) -> Result<Self, ModelError> {
        let k = tables.initial.len();
        if k == 0 {
            return Err(ModelError::InvariantViolation("hmm needs at least one state".into()));
        }
        check_distribution("initial", &tables.initial)?;
        if tables.transition.len() != k || tables.emission.len() != k {
            return Err(ModelError::InvariantViolation(format!(
                "expected {k} transition and emission rows, got {} and {}",
                tables.transition.len(),
                tables.emission.len()
            )));
        }
        let v = tables.emission[0].len();
        if v == 0 {
            return Err(ModelError::InvariantViolation("hmm needs at least one symbol".into()));
        }
        for (i, row) in tables.transition.iter().enumerate() {
            if row.len() != k {
                return Err(ModelError::InvariantViolation(format!("transition row {i} has length {}", row.len())));
            }
            check_distribution(&format!("transition row {i}"), row)?;
        }
        for (i, row) in tables.emission.iter().enumerate() {
            if row.len() != v {
                return Err(ModelError::InvariantViolation(format!("emission row {i} has length {}", row.len())));
            }
            check_distribution(&format!("emission row {i}"), row)?;
        }
        let log_initial = tables.initial.iter().map(|p| p.ln()).collect();
        let transition: Vec<f64> = tables.transition.iter().flatten().copied().collect();
        let log_transition = transition.iter().map(|p| p.ln()).collect();
        let mut log_emission_by_symbol = vec![0.0; k * v];
        for (state, row) in tables.emission.iter().enumerate() {
            for (sym, p) in row.iter().enumerate() {
                log_emission_by_symbol[sym * k + state] = p.ln();
            }
        }
        Ok(Self {
            tables,
            log_initial,
            log_transition,
            transition,
            log_emission_by_symbol,
        })
    }

    pub fn n_states(&self) -> usize {
        self.tables.initial.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.tables.emission[0].len()
    }

    pub fn tables(&self) -> &HmmTables {
        &self.tables
    }

    pub fn initial(&self) -> &[f64] {
        &self.tables.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.tables.transition
    }

    pub fn emission(&self) -> &[Vec<f64>] {
        &self.tables.emission
    }

    fn log_emission_column(&self, y: usize) -> Result<&[f64], ModelError> {
        if y >= self.n_symbols() {
            return Err(ModelError::ObservationOutOfRange {
                symbol: y,
                n_symbols: self.n_symbols(),
            });
        }
        let k = self.n_states();
        Ok(&self.log_emission_by_symbol[y * k..(y + 1) * k])
    }

    /// Filter state after the first observation: belief ∝ π ∘ B[:, y].
    pub fn forward_init(&self, y: usize) -> Result<FilterState, ModelError> {
        let emit = self.log_emission_column(y)?;
        let mut log_belief: Vec<f64> = self.log_initial.iter().zip(emit).map(|(a, b)| a + b).collect();
        let norm = log_sum_exp(&log_belief);
        if norm == f64::NEG_INFINITY {
            return Err(ModelError::ZeroLikelihood { t: 1 });
        }
        log_belief.iter_mut().for_each(|x| *x -= norm);
        Ok(FilterState {
            scratch: vec![0.0; 2 * log_belief.len()],
            log_belief,
            t: 1,
            log_evidence: norm,
        })
    }

    /// One filtering step: belief ∝ B[:, y] ∘ (Aᵀ · belief), renormalized,
    /// with the normalizer added to the running log-evidence.
    pub fn forward_step(&self, state: &mut FilterState, y: usize) -> Result<(), ModelError> {
        let k = self.n_states();
        debug_assert_eq!(state.log_belief.len(), k);
        let emit = self.log_emission_column(y)?;
        state.scratch.resize(2 * k, 0.0);
        let (linear, out) = state.scratch.split_at_mut(k);
        let belief = &state.log_belief;
        // The belief is normalized, so shifting by its maximum keeps every
        // non-negligible entry representable in linear space.
        let shift = belief.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (l, b) in linear.iter_mut().zip(belief) {
            *l = (b - shift).exp();
        }
        let mut norm_max = f64::NEG_INFINITY;
        for (to, out) in out.iter_mut().enumerate() {
            let column = self.transition[to..].iter().step_by(k);
            let acc: f64 = linear.iter().zip(column).map(|(b, a)| b * a).sum();
            let predicted = if acc > 0.0 {
                shift + acc.ln()
            } else {
                self.log_predicted(belief, to)
            };
            *out = predicted + emit[to];
            norm_max = norm_max.max(*out);
        }
        if norm_max == f64::NEG_INFINITY {
            return Err(ModelError::ZeroLikelihood { t: state.t + 1 });
        }
        let out = &state.scratch[k..];
        let norm = norm_max + out.iter().map(|x| (x - norm_max).exp()).sum::<f64>().ln();
        for (dst, src) in state.log_belief.iter_mut().zip(out) {
            *dst = src - norm;
        }
        state.log_evidence += norm;
        state.t += 1;
        Ok(())
    }

    /// Runs the filter over a whole sequence.
    pub fn filter(&self, ys: &[usize]) -> Result<FilterState, ModelError> {
        let (&first, rest) = ys.split_first().ok_or(ModelError::EmptySequence)?;
        let mut state = self.forward_init(first)?;
        for &y in rest {
            self.forward_step(&mut state, y)?;
        }
        Ok(state)
    }

    /// `ln sum_from exp(belief[from] + ln A[from][to])`, exact in log space;
    /// used when the linear product underflows.
    fn log_predicted(&self, belief: &[f64], to: usize) -> f64 {
        let k = self.n_states();
        let max = (0..k)
            .map(|from| belief[from] + self.log_transition[from * k + to])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        let acc: f64 = (0..k)
            .map(|from| (belief[from] + self.log_transition[from * k + to] - max).exp())
            .sum();
        max + acc.ln()
    }

    /// `ln P(y_1..y_T)`.
    pub fn sequence_loglik(&self, ys: &[usize]) -> Result<f64, ModelError> {
        Ok(self.filter(ys)?.log_evidence)
    }
}

/// Running forward-filter state for one HMM.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// `ln P(X_t = k | y_1..y_t)`.
    pub log_belief: Vec<f64>,
    /// Number of observations absorbed.
    pub t: usize,
    /// `ln P(y_1..y_t)`.
    pub log_evidence: f64,
    scratch: Vec<f64>,
}

impl FilterState {
    pub fn belief(&self) -> Vec<f64> {
        self.log_belief.iter().map(|x| x.exp()).collect()
    }

    /// Most probable current state, smallest index on ties.
    pub fn map_state(&self) -> usize {
        argmax(&self.log_belief)
    }
}

/// Index of the largest value, smallest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
