//! Exact event-driven simulation and the partially observed projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{probabilities_at, ModelParams};

/// Division outcome of a viable stem cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// SC → SC + SC, probability `p1(t)`.
    SymSelfRenew,
    /// SC → SC + FC, probability `p2(t)`.
    Asym,
    /// SC → FC + FC, probability `p3(t)`.
    SymDiff,
    /// SC → SC + DC, probability `p4(t)`.
    DudRenew,
}

impl EventKind {
    pub const ALL: [EventKind; 4] =
        [EventKind::SymSelfRenew, EventKind::Asym, EventKind::SymDiff, EventKind::DudRenew];

    /// Position of this event's probability in `[p1, p2, p3, p4]`.
    pub const fn prob_index(self) -> usize {
        match self {
            EventKind::SymSelfRenew => 0,
            EventKind::Asym => 1,
            EventKind::SymDiff => 2,
            EventKind::DudRenew => 3,
        }
    }

    /// Change in (viable, differentiated, nonviable) counts.
    pub const fn delta(self) -> (i64, i64, i64) {
        match self {
            EventKind::SymSelfRenew => (1, 0, 0),
            EventKind::Asym => (0, 1, 0),
            EventKind::SymDiff => (-1, 2, 0),
            EventKind::DudRenew => (0, 0, 1),
        }
    }

    pub fn from_delta(dx: i64, dy: i64, dz: i64) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.delta() == (dx, dy, dz))
    }
}

/// One division event and the counts immediately after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    pub x: u64,
    pub y: u64,
    pub z: u64,
}

impl EventRecord {
    pub fn delta(&self) -> (i64, i64, i64) {
        self.kind.delta()
    }
}

/// A fully observed realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub s0: u64,
    pub events: Vec<EventRecord>,
    /// End of the observation window when the run was cut off before
    /// extinction; `None` means observed to extinction.
    pub t_end: Option<f64>,
}

impl Trajectory {
    /// Rebuilds running counts from an initial count and a sequence of
    /// `(t, kind)` pairs, checking every invariant on the way.
    pub fn from_events(s0: u64, events: &[(f64, EventKind)]) -> Result<Self> {
        let (mut x, mut y, mut z) = (s0, 0u64, 0u64);
        let mut prev_t = 0.0;
        let mut out = Vec::with_capacity(events.len());
        for (i, &(t, kind)) in events.iter().enumerate() {
            if !(t.is_finite() && t > prev_t) {
                return Err(Error::InvalidInput(format!(
                    "event {i}: time {t} is not strictly after {prev_t}"
                )));
            }
            if x == 0 {
                return Err(Error::InvalidInput(format!(
                    "event {i} at t = {t} occurs after viable cells went extinct"
                )));
            }
            let (dx, dy, dz) = kind.delta();
            x = (x as i64 + dx) as u64;
            y = (y as i64 + dy) as u64;
            z = (z as i64 + dz) as u64;
            out.push(EventRecord { t, kind, x, y, z });
            prev_t = t;
        }
        Ok(Trajectory { s0, events: out, t_end: None })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Viable count before event `i` (i.e. `X_{i-1}` in 1-based numbering).
    pub fn viable_before(&self, i: usize) -> u64 {
        if i == 0 {
            self.s0
        } else {
            self.events[i - 1].x
        }
    }

    pub fn final_counts(&self) -> (u64, u64, u64) {
        self.events.last().map_or((self.s0, 0, 0), |e| (e.x, e.y, e.z))
    }

    pub fn extinct(&self) -> bool {
        self.final_counts().0 == 0
    }

    /// Time of the last event, `0` for an empty trajectory.
    pub fn last_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.t)
    }

    /// Extinction time, if the run reached extinction with at least one event.
    pub fn extinction_time(&self) -> Option<f64> {
        match self.events.last() {
            Some(e) if e.x == 0 => Some(e.t),
            _ => None,
        }
    }

    /// Counts `(x, y, z)` at time `t`, right-continuous at event times.
    pub fn counts_at(&self, t: f64) -> (u64, u64, u64) {
        let n = self.events.partition_point(|e| e.t <= t);
        if n == 0 {
            (self.s0, 0, 0)
        } else {
            let e = &self.events[n - 1];
            (e.x, e.y, e.z)
        }
    }

    pub fn viable_at(&self, t: f64) -> u64 {
        self.counts_at(t).0
    }
}

/// `(t, m, y)` after an event, where `m = x + z` pools viable and nonviable
/// stem cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialRecord {
    pub t: f64,
    pub m: u64,
    pub y: u64,
}

/// What a partial observation reveals about one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservedStep {
    /// `(Δm, Δy) = (+1, 0)`: self-renewal or dud renewal.
    Grow,
    /// `(0, +1)`: asymmetric division.
    Asym,
    /// `(-1, +2)`: symmetric differentiation.
    Diff,
}

impl ObservedStep {
    pub fn classify(dm: i64, dy: i64) -> Option<Self> {
        match (dm, dy) {
            (1, 0) => Some(ObservedStep::Grow),
            (0, 1) => Some(ObservedStep::Asym),
            (-1, 2) => Some(ObservedStep::Diff),
            _ => None,
        }
    }
}

/// A realization seen only through `M = X + Z` and `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialTrajectory {
    /// `M_0`, equal to the initial viable count.
    pub m0: u64,
    pub records: Vec<PartialRecord>,
    pub t_end: Option<f64>,
}

impl PartialTrajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(M_k, Y_k, T_k)` for `k = 0..=n`.
    pub fn state(&self, k: usize) -> (u64, u64, f64) {
        if k == 0 {
            (self.m0, 0, 0.0)
        } else {
            let r = &self.records[k - 1];
            (r.m, r.y, r.t)
        }
    }

    /// Classifies every step, failing on the first change outside the
    /// three-element support or a non-increasing time.
    pub fn steps(&self) -> Result<Vec<ObservedStep>> {
        let mut out = Vec::with_capacity(self.records.len());
        for k in 0..self.records.len() {
            let (m0, y0, t0) = self.state(k);
            let r = &self.records[k];
            if !(r.t.is_finite() && r.t > t0) {
                return Err(Error::MalformedObservation {
                    step: k + 1,
                    detail: format!("time {} does not follow {t0}", r.t),
                });
            }
            let dm = r.m as i64 - m0 as i64;
            let dy = r.y as i64 - y0 as i64;
            let step = ObservedStep::classify(dm, dy).ok_or_else(|| Error::MalformedObservation {
                step: k + 1,
                detail: format!("(Δm, Δy) = ({dm}, {dy}) is not one of (+1,0), (0,+1), (-1,+2)"),
            })?;
            out.push(step);
        }
        Ok(out)
    }

    /// `(m, y)` at time `t`, right-continuous.
    pub fn counts_at(&self, t: f64) -> (u64, u64) {
        let n = self.records.partition_point(|r| r.t <= t);
        if n == 0 {
            (self.m0, 0)
        } else {
            (self.records[n - 1].m, self.records[n - 1].y)
        }
    }

    pub fn last_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }
}

/// Simulates one realization. Inter-event times are exponential with rate
/// `r · X`; the outcome is drawn with the probabilities at the new event
/// time. Stops at extinction or, when `t_max` is given, before the first
/// event after `t_max`.
///
/// Without `t_max` the caller must make sure the process dies out (true
/// whenever `p3(t) → 1`, as for the Lorentzian family with `c > 0`).
pub fn simulate(params: &ModelParams, seed: u64, t_max: Option<f64>) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y, mut z) = (params.s0, 0u64, 0u64);
    let mut t = 0.0;
    let mut events = Vec::new();
    let mut t_end = None;
    while x > 0 {
        let e: f64 = Exp1.sample(&mut rng);
        let next = t + e / (params.r * x as f64);
        if let Some(cap) = t_max {
            if next > cap {
                t_end = Some(cap);
                break;
            }
        }
        // Exp1 is never zero in practice, but equal times would break the
        // strict ordering invariant.
        if next <= t {
            continue;
        }
        t = next;
        let kind = draw_kind(&probabilities_at(params, t), rng.random::<f64>());
        match kind {
            EventKind::SymSelfRenew => x += 1,
            EventKind::Asym => y += 1,
            EventKind::SymDiff => {
                x -= 1;
                y += 2;
            }
            EventKind::DudRenew => z += 1,
        }
        events.push(EventRecord { t, kind, x, y, z });
    }
    Trajectory { s0: params.s0, events, t_end }
}

/// Inverse-CDF categorical draw over `[p1, p2, p3, p4]` in index order.
fn draw_kind(probs: &[f64; 4], u: f64) -> EventKind {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate().take(3) {
        acc += p;
        if u < acc {
            return EventKind::ALL[i];
        }
    }
    if probs[3] > 0.0 {
        EventKind::DudRenew
    } else {
        // rounding left u above p1+p2+p3 while p4 = 0
        EventKind::ALL[(0..3).rev().find(|&i| probs[i] > 0.0).unwrap_or(2)]
    }
}

/// Drops the viable/nonviable distinction.
pub fn project_partial(traj: &Trajectory) -> PartialTrajectory {
    PartialTrajectory {
        m0: traj.s0,
        records: traj
            .events
            .iter()
            .map(|e| PartialRecord { t: e.t, m: e.x + e.z, y: e.y })
            .collect(),
        t_end: traj.t_end,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `master`; independent of scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Simulates `n_reps` replicates in parallel; output is in replicate order
/// and identical for any thread count.
pub fn simulate_ensemble(
    params: &ModelParams,
    n_reps: usize,
    master_seed: u64,
    t_max: Option<f64>,
) -> Vec<Trajectory> {
    (0..n_reps as u64)
        .into_par_iter()
        .map(|i| simulate(params, derive_seed(master_seed, i), t_max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LorentzianParams;

    fn pure_death(s0: u64) -> ModelParams {
        ModelParams::new(
            LorentzianParams::new(0.0, 0.0, 0.0),
            LorentzianParams::new(0.0, 0.0, 0.0),
            LorentzianParams::new(0.0, 0.0, 0.0),
            1.0,
            s0,
        )
        .unwrap()
    }

    #[test]
    fn empty_start() {
        let t = simulate(&ModelParams::config1().with_s0(0), 1, None);
        assert!(t.is_empty());
        assert_eq!(t.final_counts(), (0, 0, 0));
    }

    #[test]
    fn pure_death_chain() {
        let t = simulate(&pure_death(5), 99, None);
        assert_eq!(t.len(), 5);
        assert!(t.events.iter().all(|e| e.kind == EventKind::SymDiff));
        assert_eq!(t.final_counts(), (0, 10, 0));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = ModelParams::config1();
        assert_eq!(simulate(&p, 42, None), simulate(&p, 42, None));
        assert_ne!(simulate(&p, 42, None), simulate(&p, 43, None));
    }

    #[test]
    fn invariants_hold() {
        let p = ModelParams::config1().with_s0(30);
        for seed in 0..20 {
            let t = simulate(&p, seed, None);
            let mut prev = (t.s0, 0u64, 0u64);
            let mut prev_t = 0.0;
            for e in &t.events {
                assert!(e.t > prev_t);
                assert!(prev.0 > 0);
                let (dx, dy, dz) = e.delta();
                assert_eq!(e.x as i64, prev.0 as i64 + dx);
                assert_eq!(e.y as i64, prev.1 as i64 + dy);
                assert_eq!(e.z as i64, prev.2 as i64 + dz);
                assert_eq!(e.x + e.y + e.z, prev.0 + prev.1 + prev.2 + 1);
                prev = (e.x, e.y, e.z);
                prev_t = e.t;
            }
            assert!(t.extinct());
            assert_eq!(t.t_end, None);
        }
    }

    #[test]
    fn time_cap() {
        let p = ModelParams::config1();
        let t = simulate(&p, 5, Some(3.0));
        assert_eq!(t.t_end, Some(3.0));
        assert!(t.events.iter().all(|e| e.t <= 3.0));
        assert!(!t.extinct());
        let full = simulate(&p, 5, None);
        assert_eq!(&full.events[..t.len()], &t.events[..]);
    }

    #[test]
    fn projection_examples() {
        let t = Trajectory::from_events(1, &[(0.7, EventKind::DudRenew)]).unwrap();
        let pt = project_partial(&t);
        assert_eq!(pt.records, vec![PartialRecord { t: 0.7, m: 2, y: 0 }]);

        let t = Trajectory::from_events(
            2,
            &[(0.1, EventKind::SymSelfRenew), (0.2, EventKind::Asym), (0.4, EventKind::SymDiff)],
        )
        .unwrap();
        let pt = project_partial(&t);
        let xs: Vec<u64> = t.events.iter().map(|e| e.x).collect();
        let ms: Vec<u64> = pt.records.iter().map(|r| r.m).collect();
        assert_eq!(xs, ms);
    }

    #[test]
    fn right_continuous_lookup() {
        let t = Trajectory::from_events(3, &[(1.0, EventKind::SymDiff), (2.0, EventKind::Asym)])
            .unwrap();
        assert_eq!(t.viable_at(0.5), 3);
        assert_eq!(t.viable_at(1.0), 2);
        assert_eq!(t.counts_at(2.0), (2, 3, 0));
    }

    #[test]
    fn from_events_rejects_bad_input() {
        assert!(Trajectory::from_events(1, &[(1.0, EventKind::SymDiff), (2.0, EventKind::Asym)])
            .is_err());
        assert!(Trajectory::from_events(2, &[(1.0, EventKind::Asym), (1.0, EventKind::Asym)])
            .is_err());
    }

    #[test]
    fn ensemble_singleton_and_order() {
        let p = ModelParams::config1().with_s0(20);
        let one = simulate_ensemble(&p, 1, 77, None);
        assert_eq!(one[0], simulate(&p, derive_seed(77, 0), None));
        let a = simulate_ensemble(&p, 16, 77, None);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_ensemble(&p, 16, 77, None));
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_partial_step() {
        let pt = PartialTrajectory {
            m0: 2,
            records: vec![PartialRecord { t: 1.0, m: 4, y: 0 }],
            t_end: None,
        };
        assert!(matches!(pt.steps(), Err(Error::MalformedObservation { step: 1, .. })));
    }
}
