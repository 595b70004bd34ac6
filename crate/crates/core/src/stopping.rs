//! Stopping rules over the per-sweep outcome stream and ε schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DqeError, Result};
use crate::pauli::PauliHamiltonian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum StoppingKind {
    /// Stop when a run of `n` zeros completes.
    FirstRunOfZeros(usize),
    /// Horizon in steps; observe the first ⌊t/e⌋ steps, then take a record run.
    Secretary(usize),
    /// Chow expected-rank policy over at most `t` runs.
    ExpectedRank(usize),
    /// No rule; run until the cap and report the longest run.
    TimeCap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub kind: StoppingKind,
    pub time_cap: Option<usize>,
}

impl StoppingRule {
    pub fn new(kind: StoppingKind) -> Self {
        StoppingRule {
            kind,
            time_cap: None,
        }
    }

    pub fn with_cap(kind: StoppingKind, cap: usize) -> Self {
        StoppingRule {
            kind,
            time_cap: Some(cap),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self.kind {
            StoppingKind::FirstRunOfZeros(n)
            | StoppingKind::Secretary(n)
            | StoppingKind::ExpectedRank(n)
            | StoppingKind::TimeCap(n) => n,
        };
        if v == 0 || self.time_cap == Some(0) {
            return Err(DqeError::Parameter(
                "stopping rule lengths and horizons must be ≥ 1".into(),
            ));
        }
        Ok(())
    }

    /// Step budget implied by the rule itself.
    pub fn horizon(&self) -> Option<usize> {
        let own = match self.kind {
            StoppingKind::Secretary(t) | StoppingKind::TimeCap(t) => Some(t),
            _ => None,
        };
        match (own, self.time_cap) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

impl std::str::FromStr for StoppingRule {
    type Err = DqeError;

    /// `run-of-zeros:n`, `secretary:t`, `expected-rank:t`, `time-cap:t`,
    /// each optionally followed by `,cap:T`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',');
        let head = parts.next().unwrap_or("");
        let (name, val) = head
            .split_once(':')
            .ok_or_else(|| DqeError::Config(format!("bad stopping rule {s:?}")))?;
        let v: usize = val
            .trim()
            .parse()
            .map_err(|_| DqeError::Config(format!("bad stopping value in {s:?}")))?;
        let kind = match name.trim() {
            "run-of-zeros" => StoppingKind::FirstRunOfZeros(v),
            "secretary" => StoppingKind::Secretary(v),
            "expected-rank" => StoppingKind::ExpectedRank(v),
            "time-cap" => StoppingKind::TimeCap(v),
            other => return Err(DqeError::Config(format!("unknown stopping rule {other:?}"))),
        };
        let mut rule = StoppingRule::new(kind);
        for p in parts {
            match p.split_once(':') {
                Some(("cap", c)) => {
                    rule.time_cap = Some(
                        c.trim()
                            .parse()
                            .map_err(|_| DqeError::Config(format!("bad cap in {s:?}")))?,
                    )
                }
                _ => return Err(DqeError::Config(format!("bad stopping modifier {p:?}"))),
            }
        }
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
    /// Budget exhausted without the rule firing.
    Truncate,
}

/// Outcome summary the rules read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub step: usize,
    pub current_run: usize,
    pub completed_runs: Vec<usize>,
    pub last_one_step: usize,
}

impl History {
    pub fn push(&mut self, outcome: u8) {
        self.step += 1;
        if outcome == 0 {
            self.current_run += 1;
        } else {
            self.completed_runs.push(self.current_run);
            self.current_run = 0;
            self.last_one_step = self.step;
        }
    }

    pub fn max_completed(&self) -> usize {
        self.completed_runs.iter().copied().max().unwrap_or(0)
    }
}

/// Per-trajectory rule state. Tie-breaks draw from a private stream so a
/// replay of any outcome prefix reproduces every decision.
#[derive(Debug, Clone)]
pub struct StopMonitor {
    pub rule: StoppingRule,
    pub history: History,
    chow: Option<ChowThresholds>,
    ties: ChaCha8Rng,
}

impl StopMonitor {
    pub fn new(rule: StoppingRule, tie_seed: u64, stream: u64) -> Self {
        let chow = match rule.kind {
            StoppingKind::ExpectedRank(t) => Some(chow_thresholds(t)),
            _ => None,
        };
        let mut ties = ChaCha8Rng::seed_from_u64(tie_seed);
        ties.set_stream(stream);
        StopMonitor {
            rule,
            history: History::default(),
            chow,
            ties,
        }
    }

    pub fn observe(&mut self, outcome: u8) -> Decision {
        self.history.push(outcome);
        let h = &self.history;
        let fired = outcome == 0
            && match self.rule.kind {
                StoppingKind::FirstRunOfZeros(n) => h.current_run >= n,
                StoppingKind::Secretary(t) => {
                    let observe = (t as f64 / std::f64::consts::E).floor() as usize;
                    if h.step <= observe {
                        false
                    } else {
                        let best = h.max_completed();
                        if h.current_run > best {
                            true
                        } else if h.current_run == best && best >= 1 {
                            self.ties.gen::<bool>()
                        } else {
                            false
                        }
                    }
                }
                StoppingKind::ExpectedRank(t) => {
                    let idx = h.completed_runs.len() + 1;
                    if idx > t {
                        false
                    } else if idx == t {
                        true
                    } else {
                        let longer = h.completed_runs.iter().filter(|&&r| r > h.current_run).count();
                        let equal = h.completed_runs.iter().filter(|&&r| r == h.current_run).count();
                        let rank = 1 + longer + self.ties.gen_range(0..=equal);
                        let chow = self.chow.as_ref().expect("built for expected-rank");
                        rank <= chow.s(idx)
                    }
                }
                StoppingKind::TimeCap(_) => false,
            };
        if fired {
            return Decision::Stop;
        }
        let exhausted = match self.rule.kind {
            StoppingKind::ExpectedRank(t) => self.history.completed_runs.len() >= t,
            _ => false,
        };
        if exhausted || self.rule.horizon().is_some_and(|cap| self.history.step >= cap) {
            return Decision::Truncate;
        }
        Decision::Continue
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChowThresholds {
    pub n: usize,
    /// `s[i-1]` is s_i for i = 1..=n.
    pub s: Vec<usize>,
    /// `c[i]` is c_i for i = 0..n-1.
    pub c: Vec<f64>,
}

impl ChowThresholds {
    pub fn s(&self, i: usize) -> usize {
        self.s[i - 1]
    }

    pub fn c0(&self) -> f64 {
        self.c[0]
    }
}

/// Backward recursion for the expected-rank thresholds.
pub fn chow_thresholds(n: usize) -> ChowThresholds {
    assert!(n >= 1, "need at least one candidate");
    let mut s = vec![0usize; n];
    let mut c = vec![0.0f64; n];
    s[n - 1] = n;
    c[n - 1] = (n as f64 + 1.0) / 2.0;
    let nf = n as f64;
    for i in (1..n).rev() {
        let ci = c[i];
        let si = (((i as f64 + 1.0) / (nf + 1.0)) * ci).floor() as usize;
        s[i - 1] = si;
        let sf = si as f64;
        c[i - 1] = ((nf + 1.0) / (i as f64 + 1.0) * sf * (sf + 1.0) / 2.0 + (i as f64 - sf) * ci)
            / i as f64;
    }
    ChowThresholds { n, s, c }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "eps")]
pub enum EpsilonSchedule {
    Constant(f64),
    /// ε_t = ε/(t − t1), t1 the step of the last 1-outcome.
    Decaying(f64),
}

impl EpsilonSchedule {
    pub fn base(&self) -> f64 {
        match *self {
            EpsilonSchedule::Constant(e) | EpsilonSchedule::Decaying(e) => e,
        }
    }
}

pub fn epsilon_at(schedule: &EpsilonSchedule, t: usize, t1: usize) -> Result<f64> {
    if t <= t1 {
        return Err(DqeError::Ordering { step: t, last: t1 });
    }
    Ok(match *schedule {
        EpsilonSchedule::Constant(e) => e,
        EpsilonSchedule::Decaying(e) => e / (t - t1) as f64,
    })
}

/// Conservative ε = 1/(4m + 4).
pub fn suggest_epsilon(h: &PauliHamiltonian) -> f64 {
    1.0 / (4.0 * h.num_terms() as f64 + 4.0)
}
