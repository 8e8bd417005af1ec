//! Session protocol: catch trials, grading, classification and the
//! observations a graded session contributes to the dataset.
//!
//! A session holds 50 slots, four of which are catch trials: copies of a
//! content trial in which one reference is replaced by a mirror image of the
//! query. Two catches land in the first 20 slots and two in the last 20.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Observation, OutcomeIndex, Trial};

pub const SESSION_SIZE: usize = 50;
pub const CATCHES_PER_SESSION: usize = 4;
/// Catch trials are placed within this many slots of either end.
pub const CATCH_WINDOW: usize = 20;
/// Judgments faster than this are discarded.
pub const MIN_DURATION_S: f64 = 1.0;
pub const PREMIUM_THRESHOLD: f64 = 0.875;
pub const SATISFACTORY_THRESHOLD: f64 = 0.5;

/// A content trial with one reference slot showing the mirrored query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatchTrial {
    base: Trial,
    mirror_position: usize,
}

impl CatchTrial {
    pub fn new(base: Trial, mirror_position: usize) -> Result<Self> {
        if mirror_position >= base.n_references() {
            return Err(Error::arg(format!(
                "mirror position {mirror_position} outside [0, {})",
                base.n_references()
            )));
        }
        Ok(CatchTrial { base, mirror_position })
    }

    /// The content trial the catch was derived from. The reference at
    /// [`Self::mirror_position`] is displayed as the mirrored query.
    pub fn base(&self) -> &Trial {
        &self.base
    }

    pub fn mirror_position(&self) -> usize {
        self.mirror_position
    }

    /// 1 if the mirror was ranked first, 0.5 if second, 0 otherwise.
    pub fn grade(&self, outcome: OutcomeIndex) -> Result<f64> {
        let chosen = self.base.decode(outcome)?;
        Ok(match chosen.iter().position(|&p| p == self.mirror_position) {
            Some(0) => 1.0,
            Some(1) => 0.5,
            _ => 0.0,
        })
    }
}

/// Grade of an 8-rank-2 catch judgment.
pub fn grade_catch(outcome: OutcomeIndex, mirror_position: usize) -> Result<f64> {
    if mirror_position >= 8 {
        return Err(Error::arg(format!("mirror position {mirror_position} outside [0, 8)")));
    }
    let chosen = crate::model::decode_outcome(8, 2, outcome)?;
    Ok(if chosen[0] == mirror_position {
        1.0
    } else if chosen[1] == mirror_position {
        0.5
    } else {
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Premium,
    Satisfactory,
    Unsatisfactory,
}

impl Classification {
    /// `> 0.875` premium, `[0.5, 0.875)` satisfactory, `< 0.5` unsatisfactory.
    pub fn from_grade(grade: f64) -> Self {
        if grade > PREMIUM_THRESHOLD {
            Classification::Premium
        } else if grade >= SATISFACTORY_THRESHOLD {
            Classification::Satisfactory
        } else {
            Classification::Unsatisfactory
        }
    }

    /// Only premium completions keep a worker eligible for more sessions.
    pub fn keeps_worker_eligible(self) -> bool {
        self == Classification::Premium
    }

    /// Unsatisfactory sessions contribute nothing to the dataset.
    pub fn is_retained(self) -> bool {
        self != Classification::Unsatisfactory
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SessionSlot {
    Content { trial: Trial },
    Catch { catch: CatchTrial },
}

impl SessionSlot {
    /// The trial whose outcome space the judgment indexes.
    pub fn trial(&self) -> &Trial {
        match self {
            SessionSlot::Content { trial } => trial,
            SessionSlot::Catch { catch } => catch.base(),
        }
    }

    pub fn is_catch(&self) -> bool {
        matches!(self, SessionSlot::Catch { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub outcome: OutcomeIndex,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub trials: Vec<SessionSlot>,
    pub catch_positions: Vec<usize>,
    pub judgments: Vec<Option<Judgment>>,
    pub grade: Option<f64>,
    pub classification: Option<Classification>,
    pub worker_hash: Option<String>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.judgments.iter().all(Option::is_some)
    }

    pub fn n_judged(&self) -> usize {
        self.judgments.iter().filter(|j| j.is_some()).count()
    }

    /// A fresh, unjudged copy for another completion attempt.
    pub fn reissue(&self, id: String) -> Session {
        Session {
            id,
            trials: self.trials.clone(),
            catch_positions: self.catch_positions.clone(),
            judgments: vec![None; self.trials.len()],
            grade: None,
            classification: None,
            worker_hash: None,
        }
    }

    pub fn record(&mut self, slot: usize, judgment: Judgment) -> Result<()> {
        let trial = self
            .trials
            .get(slot)
            .ok_or_else(|| Error::arg(format!("slot {slot} outside session of {}", self.trials.len())))?
            .trial();
        if judgment.outcome.0 >= trial.n_outcomes() {
            return Err(Error::arg(format!("outcome {} out of range", judgment.outcome.0)));
        }
        if !(judgment.duration_s >= 0.0) {
            return Err(Error::arg("duration must be non-negative"));
        }
        if self.judgments[slot].is_some() {
            return Err(Error::state(format!("slot {slot} of session {} already judged", self.id)));
        }
        self.judgments[slot] = Some(judgment);
        Ok(())
    }
}

/// Partitions `trials` at random into sessions of `session_size` slots, each
/// with `catches_per_session` catch trials derived from its own content.
pub fn build_sessions<R: Rng + ?Sized>(
    trials: &[Trial],
    session_size: usize,
    catches_per_session: usize,
    id_prefix: &str,
    rng: &mut R,
) -> Result<Vec<Session>> {
    if catches_per_session % 2 != 0 || catches_per_session / 2 > CATCH_WINDOW {
        return Err(Error::arg("catch count must be even and fit the placement windows"));
    }
    if session_size < 2 * CATCH_WINDOW || catches_per_session >= session_size {
        return Err(Error::arg(format!(
            "session size {session_size} too small for catch placement"
        )));
    }
    let content_per_session = session_size - catches_per_session;
    if trials.is_empty() || trials.len() % content_per_session != 0 {
        return Err(Error::arg(format!(
            "{} trials do not divide into sessions of {content_per_session} content trials",
            trials.len()
        )));
    }
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.shuffle(rng);

    let mut sessions = Vec::with_capacity(trials.len() / content_per_session);
    for (k, chunk) in order.chunks(content_per_session).enumerate() {
        let half = catches_per_session / 2;
        let mut early: Vec<usize> = (0..CATCH_WINDOW).collect();
        early.shuffle(rng);
        let mut late: Vec<usize> = (session_size - CATCH_WINDOW..session_size).collect();
        late.shuffle(rng);
        let mut catch_positions: Vec<usize> = early[..half].iter().chain(&late[..half]).copied().collect();
        catch_positions.sort_unstable();

        let mut content = chunk.iter().map(|&i| trials[i].clone());
        let mut slots = Vec::with_capacity(session_size);
        for pos in 0..session_size {
            if catch_positions.contains(&pos) {
                let base = trials[chunk[rng.random_range(0..chunk.len())]].clone();
                let mirror_position = rng.random_range(0..base.n_references());
                slots.push(SessionSlot::Catch {
                    catch: CatchTrial::new(base, mirror_position)?,
                });
            } else {
                slots.push(SessionSlot::Content {
                    trial: content.next().expect("content count matches"),
                });
            }
        }
        sessions.push(Session {
            id: format!("{id_prefix}-{k:04}"),
            trials: slots,
            catch_positions,
            judgments: vec![None; session_size],
            grade: None,
            classification: None,
            worker_hash: None,
        });
    }
    Ok(sessions)
}

/// Grades a fully judged session; the grade is the mean catch grade.
pub fn grade_session(session: &mut Session) -> Result<(f64, Classification)> {
    if !session.is_complete() {
        return Err(Error::state(format!(
            "session {} has {} of {} slots judged",
            session.id,
            session.n_judged(),
            session.len()
        )));
    }
    let mut grades = Vec::with_capacity(session.catch_positions.len());
    for &pos in &session.catch_positions {
        let SessionSlot::Catch { catch } = &session.trials[pos] else {
            return Err(Error::state(format!("slot {pos} is listed as a catch but is not one")));
        };
        let judgment = session.judgments[pos].expect("complete session");
        grades.push(catch.grade(judgment.outcome)?);
    }
    if grades.is_empty() {
        return Err(Error::state("session has no catch trials"));
    }
    let grade = grades.iter().sum::<f64>() / grades.len() as f64;
    let classification = Classification::from_grade(grade);
    session.grade = Some(grade);
    session.classification = Some(classification);
    Ok((grade, classification))
}

/// Observations contributed by a graded, retained session: one per content
/// slot judged in at least [`MIN_DURATION_S`], weighted by the session grade.
pub fn finalize_observations(session: &Session) -> Result<Vec<Observation>> {
    let (Some(grade), Some(classification)) = (session.grade, session.classification) else {
        return Err(Error::state(format!("session {} has not been graded", session.id)));
    };
    if !classification.is_retained() {
        return Err(Error::state(format!("session {} is unsatisfactory", session.id)));
    }
    let worker = session.worker_hash.clone().unwrap_or_default();
    let mut out = Vec::with_capacity(session.len());
    for (pos, (slot, judgment)) in session.trials.iter().zip(&session.judgments).enumerate() {
        let (SessionSlot::Content { trial }, Some(j)) = (slot, judgment) else {
            continue;
        };
        if j.duration_s < MIN_DURATION_S {
            continue;
        }
        out.push(Observation {
            trial: trial.clone(),
            outcome: j.outcome,
            weight: grade,
            session_id: session.id.clone(),
            slot: Some(pos),
            worker_hash: worker.clone(),
            duration_s: j.duration_s,
            is_catch: false,
        });
    }
    Ok(out)
}
