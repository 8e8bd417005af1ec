//! Simulated judges that answer trials from a hidden ground-truth embedding.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{l2_distance, Observation, OutcomeIndex, StimulusId, Trial, DEFAULT_BETA};
use crate::quality::CatchTrial;
use crate::seed::rng_from;

/// Duration reported for every simulated judgment, in seconds.
pub const DEFAULT_ORACLE_DURATION_S: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    /// Sample ranked choices from the Luce model.
    Stochastic,
    /// Always pick the nearest references, nearest first.
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub truth: Array2<f64>,
    pub beta: f64,
    pub mode: JudgeMode,
    pub catch_accuracy: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl OracleConfig {
    pub fn new(truth: Array2<f64>) -> Self {
        OracleConfig {
            truth,
            beta: DEFAULT_BETA,
            mode: JudgeMode::Stochastic,
            catch_accuracy: 1.0,
            duration_s: DEFAULT_ORACLE_DURATION_S,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Oracle {
    truth: Array2<f64>,
    beta: f64,
    mode: JudgeMode,
    catch_accuracy: f64,
    duration_s: f64,
    rng: ChaCha8Rng,
}

impl Oracle {
    pub fn new(config: OracleConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.catch_accuracy) {
            return Err(Error::arg("catch_accuracy must lie in [0, 1]"));
        }
        if !(config.beta > 0.0) {
            return Err(Error::arg("beta must be positive"));
        }
        Ok(Oracle {
            truth: config.truth,
            beta: config.beta,
            mode: config.mode,
            catch_accuracy: config.catch_accuracy,
            duration_s: config.duration_s,
            rng: rng_from(config.seed),
        })
    }

    pub fn truth(&self) -> &Array2<f64> {
        &self.truth
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn set_catch_accuracy(&mut self, accuracy: f64) {
        self.catch_accuracy = accuracy.clamp(0.0, 1.0);
    }

    fn distances(&self, trial: &Trial) -> Result<Vec<f64>> {
        if trial.max_index() >= self.truth.nrows() {
            return Err(Error::arg(format!(
                "trial references stimulus {} outside the ground truth",
                trial.max_index()
            )));
        }
        let zq = self.truth.row(trial.query().index());
        let zq = zq.as_slice().expect("standard layout");
        Ok(trial
            .references()
            .iter()
            .map(|r| {
                let zr = self.truth.row(r.index());
                l2_distance(zq, zr.as_slice().expect("standard layout"))
            })
            .collect())
    }

    /// Ranked positions chosen for `trial`.
    fn choose(&mut self, trial: &Trial) -> Result<Vec<usize>> {
        let dists = self.distances(trial)?;
        let mut remaining: Vec<usize> = (0..dists.len()).collect();
        let mut chosen = Vec::with_capacity(trial.n_select());
        for _ in 0..trial.n_select() {
            let pick = match self.mode {
                JudgeMode::Deterministic => remaining
                    .iter()
                    .enumerate()
                    .min_by(|(_, &a), (_, &b)| dists[a].total_cmp(&dists[b]))
                    .map(|(k, _)| k)
                    .expect("nonempty"),
                JudgeMode::Stochastic => {
                    // Strengths relative to the nearest remaining reference keep
                    // the largest weight at 1.
                    let nearest = remaining.iter().map(|&j| dists[j]).fold(f64::INFINITY, f64::min);
                    let weights: Vec<f64> = remaining
                        .iter()
                        .map(|&j| (-self.beta * (dists[j] - nearest)).exp())
                        .collect();
                    let total: f64 = weights.iter().sum();
                    let mut u = self.rng.random::<f64>() * total;
                    let mut k = weights.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            k = i;
                            break;
                        }
                        u -= w;
                    }
                    k
                }
            };
            chosen.push(remaining.remove(pick));
        }
        Ok(chosen)
    }

    pub fn judge(&mut self, trial: &Trial) -> Result<OutcomeIndex> {
        let chosen = self.choose(trial)?;
        trial.encode(&chosen)
    }

    /// With probability `catch_accuracy` the mirrored query is picked first
    /// (and the rest judged normally); otherwise the underlying content trial
    /// is judged as if no mirror were present.
    pub fn judge_catch(&mut self, catch: &CatchTrial) -> Result<OutcomeIndex> {
        let trial = catch.base();
        let mirror = catch.mirror_position();
        if self.rng.random::<f64>() < self.catch_accuracy {
            let mut positions = vec![mirror];
            if trial.n_select() > 1 {
                let dists = self.distances(trial)?;
                let mut rest: Vec<usize> = (0..dists.len()).filter(|&j| j != mirror).collect();
                rest.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
                if self.mode == JudgeMode::Stochastic {
                    let sub_refs = rest.iter().map(|&j| trial.references()[j]).collect();
                    let sub = Trial::new(trial.query(), sub_refs, trial.n_select() - 1)?;
                    let picks = self.choose(&sub)?;
                    positions.extend(picks.into_iter().map(|k| rest[k]));
                } else {
                    positions.extend(rest.into_iter().take(trial.n_select() - 1));
                }
            }
            trial.encode(&positions)
        } else {
            self.judge(trial)
        }
    }

    /// Ranked positions for a display whose `None` slot shows the mirrored
    /// query. A judge who notices the mirror ranks it first; one who does
    /// not ranks only the remaining references.
    pub fn judge_display(&mut self, query: StimulusId, references: &[Option<StimulusId>], n_select: usize) -> Result<Vec<usize>> {
        let mirror: Vec<usize> = (0..references.len()).filter(|&j| references[j].is_none()).collect();
        let known: Vec<usize> = (0..references.len()).filter(|&j| references[j].is_some()).collect();
        let sub = |k| Trial::new(query, known.iter().map(|&j| references[j].expect("known")).collect(), k);
        match mirror.as_slice() {
            [] => self.choose(&sub(n_select)?),
            &[m] => {
                let noticed = self.rng.random::<f64>() < self.catch_accuracy;
                let mut positions = if noticed { vec![m] } else { Vec::new() };
                let rest = n_select - positions.len();
                if rest > 0 {
                    positions.extend(self.choose(&sub(rest)?)?.into_iter().map(|k| known[k]));
                }
                Ok(positions)
            }
            _ => Err(Error::arg("a display holds at most one mirror")),
        }
    }

    /// Judges `trial` and wraps the answer as a unit-weight observation.
    pub fn observe(&mut self, trial: &Trial) -> Result<Observation> {
        let outcome = self.judge(trial)?;
        let mut obs = Observation::new(trial.clone(), outcome);
        obs.duration_s = self.duration_s;
        obs.worker_hash = "oracle".to_string();
        Ok(obs)
    }

    pub fn observe_all(&mut self, trials: &[Trial]) -> Result<Vec<Observation>> {
        trials.iter().map(|t| self.observe(t)).collect()
    }
}

/// `n x d` ground truth with i.i.d. `N(0, scale^2)` coordinates.
pub fn random_truth<R: Rng + ?Sized>(n: usize, d: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, scale).expect("finite scale");
    Array2::from_shape_fn((n, d), |_| normal.sample(rng))
}

/// A simulated participant in a worker pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedWorker {
    pub worker_hash: String,
    pub catch_accuracy: f64,
}

/// Workers with per-worker catch accuracy, used to exercise eligibility
/// rules. `accuracies` cycles when more workers are requested than given.
pub fn worker_pool(size: usize, accuracies: &[f64]) -> Vec<SimulatedWorker> {
    (0..size)
        .map(|i| SimulatedWorker {
            worker_hash: format!("worker-{i:04}"),
            catch_accuracy: if accuracies.is_empty() { 1.0 } else { accuracies[i % accuracies.len()] },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line_oracle(mode: JudgeMode) -> Oracle {
        let truth = array![[0.0], [0.05], [0.3], [0.1], [0.6], [0.2]];
        Oracle::new(OracleConfig {
            mode,
            ..OracleConfig::new(truth)
        })
        .unwrap()
    }

    #[test]
    fn deterministic_picks_nearest_in_order() {
        let mut oracle = line_oracle(JudgeMode::Deterministic);
        let trial = Trial::rank2(0, &[2, 3, 1, 4, 5]).unwrap();
        let outcome = oracle.judge(&trial).unwrap();
        assert_eq!(trial.decode(outcome).unwrap(), vec![2, 1]);
    }

    #[test]
    fn deterministic_ignores_seed() {
        let trial = Trial::rank2(0, &[2, 3, 1, 4, 5]).unwrap();
        let mut a = line_oracle(JudgeMode::Deterministic);
        let mut b = Oracle::new(OracleConfig {
            mode: JudgeMode::Deterministic,
            seed: 99,
            ..OracleConfig::new(a.truth().clone())
        })
        .unwrap();
        for _ in 0..5 {
            assert_eq!(a.judge(&trial).unwrap(), b.judge(&trial).unwrap());
        }
    }

    #[test]
    fn rejects_out_of_range_trials() {
        let mut oracle = line_oracle(JudgeMode::Stochastic);
        assert!(oracle.judge(&Trial::rank2(0, &[1, 2, 9]).unwrap()).is_err());
    }

    #[test]
    fn pool_cycles_accuracies() {
        let pool = worker_pool(5, &[1.0, 0.2]);
        assert_eq!(pool.len(), 5);
        assert_eq!(pool[2].catch_accuracy, 1.0);
        assert_eq!(pool[3].catch_accuracy, 0.2);
    }

    #[test]
    fn display_with_mirror() {
        let mut oracle = line_oracle(JudgeMode::Deterministic);
        let refs = [Some(StimulusId(2)), None, Some(StimulusId(1)), Some(StimulusId(3))];
        assert_eq!(oracle.judge_display(StimulusId(0), &refs, 2).unwrap(), vec![1, 2]);
        oracle.set_catch_accuracy(0.0);
        assert_eq!(oracle.judge_display(StimulusId(0), &refs, 2).unwrap(), vec![2, 3]);
        assert!(oracle.judge_display(StimulusId(0), &[None, None, Some(StimulusId(1))], 1).is_err());
    }
}
