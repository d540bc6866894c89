//! Map between constrained parameters and the unconstrained coordinates
//! the optimizers work in.
//!
//! * free peak heights among `p1, p2, p4` plus the slack `1 - Σ p` form a
//!   softmax with the slack's logit fixed at zero (pinned heights take their
//!   share of the unit mass first);
//! * `c` and `r` live on a log scale;
//! * `m` is used as is.
//!
//! Pinned parameters are excluded from the coordinate vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Param, Theta, NPARAM};

const HEIGHTS: [Param; 3] = [Param::P1, Param::P2, Param::P4];
const EXP_CLAMP: f64 = 700.0;

/// Natural-scale box bounds used to seed differential evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub p: (f64, f64),
    pub c: (f64, f64),
    /// Peak locations; `None` means `[0, 1.5 × last event time]`.
    pub m: Option<(f64, f64)>,
    pub r: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self { p: (1e-4, 1.0 - 1e-4), c: (1e-6, 10.0), m: None, r: (1e-4, 10.0) }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64), positive: bool| {
            lo.is_finite() && hi.is_finite() && lo < hi && (!positive || lo > 0.0)
        };
        if !(ok(self.p, true) && self.p.1 < 1.0) {
            return Err(Error::InvalidInput(format!("p bounds {:?} must satisfy 0 < lo < hi < 1", self.p)));
        }
        if !ok(self.c, true) {
            return Err(Error::InvalidInput(format!("c bounds {:?} must satisfy 0 < lo < hi", self.c)));
        }
        if !ok(self.r, true) {
            return Err(Error::InvalidInput(format!("r bounds {:?} must satisfy 0 < lo < hi", self.r)));
        }
        if let Some(m) = self.m {
            if !ok(m, false) {
                return Err(Error::InvalidInput(format!("m bounds {m:?} must satisfy lo < hi")));
            }
        }
        Ok(())
    }

    /// Fills in the data-dependent `m` range.
    pub fn resolved(&self, last_event_time: f64) -> Bounds {
        let m = self.m.unwrap_or((0.0, (1.5 * last_event_time).max(1e-6)));
        Bounds { m: Some(m), ..*self }
    }
}

/// The free coordinates of a fit and their transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    pins: [Option<f64>; NPARAM],
    free: Vec<Param>,
}

impl ParamSpace {
    /// Nothing pinned.
    pub fn unpinned() -> Self {
        Self::new(&[]).expect("empty pin set is valid")
    }

    /// A peak height pinned to exactly zero also pins its `c` and `m` (to
    /// zero) unless they are pinned explicitly, since the likelihood no
    /// longer depends on them.
    pub fn new(pins: &[(Param, f64)]) -> Result<Self> {
        let mut slots = [None; NPARAM];
        for &(p, v) in pins {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("pinned {p} = {v} is not finite")));
            }
            slots[p.index()] = Some(v);
        }
        for (h, c, m) in [(Param::P1, Param::C1, Param::M1), (Param::P2, Param::C2, Param::M2), (Param::P4, Param::C4, Param::M4)] {
            if slots[h.index()] == Some(0.0) {
                slots[c.index()].get_or_insert(0.0);
                slots[m.index()].get_or_insert(0.0);
            }
        }
        let pinned_mass: f64 = HEIGHTS.iter().filter_map(|h| slots[h.index()]).sum();
        for h in HEIGHTS {
            if let Some(v) = slots[h.index()] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!("pinned {h} = {v} must lie in [0, 1]")));
                }
            }
        }
        if pinned_mass > 1.0 {
            return Err(Error::InvalidInput(format!("pinned peak heights sum to {pinned_mass} > 1")));
        }
        for p in [Param::C1, Param::C2, Param::C4] {
            if let Some(v) = slots[p.index()] {
                if v < 0.0 {
                    return Err(Error::InvalidInput(format!("pinned {p} = {v} must be >= 0")));
                }
            }
        }
        if let Some(v) = slots[Param::R.index()] {
            if v <= 0.0 {
                return Err(Error::InvalidInput(format!("pinned r = {v} must be > 0")));
            }
        }
        let free: Vec<Param> = Param::ALL.into_iter().filter(|p| slots[p.index()].is_none()).collect();
        let free_heights = free.iter().filter(|p| HEIGHTS.contains(p)).count();
        if free_heights > 0 && 1.0 - pinned_mass <= 0.0 {
            return Err(Error::InvalidInput(
                "pinned peak heights leave no mass for the free ones".into(),
            ));
        }
        Ok(Self { pins: slots, free })
    }

    /// Same space with one more pin.
    pub fn pin(&self, p: Param, v: f64) -> Result<Self> {
        let mut pins: Vec<(Param, f64)> = self.pinned().collect();
        pins.retain(|(q, _)| *q != p);
        pins.push((p, v));
        Self::new(&pins)
    }

    pub fn pinned(&self) -> impl Iterator<Item = (Param, f64)> + '_ {
        Param::ALL.into_iter().filter_map(|p| self.pins[p.index()].map(|v| (p, v)))
    }

    pub fn pinned_value(&self, p: Param) -> Option<f64> {
        self.pins[p.index()]
    }

    pub fn free_params(&self) -> &[Param] {
        &self.free
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    fn free_mass(&self) -> f64 {
        1.0 - HEIGHTS.iter().filter_map(|h| self.pins[h.index()]).sum::<f64>()
    }

    /// Requires every free coordinate to be strictly interior.
    pub fn to_unconstrained(&self, theta: &Theta) -> Result<Vec<f64>> {
        let mass = self.free_mass();
        let free_sum: f64 = self.free.iter().filter(|p| HEIGHTS.contains(p)).map(|&p| theta[p]).sum();
        let slack = mass - free_sum;
        let mut out = Vec::with_capacity(self.free.len());
        for &p in &self.free {
            let v = theta[p];
            let z = match p {
                Param::P1 | Param::P2 | Param::P4 => {
                    if !(v > 0.0 && slack > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "{p} = {v} with slack {slack} is on the simplex boundary"
                        )));
                    }
                    (v / slack).ln()
                }
                Param::C1 | Param::C2 | Param::C4 | Param::R => {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::InvalidInput(format!("{p} = {v} must be > 0 to log-transform")));
                    }
                    v.ln()
                }
                Param::M1 | Param::M2 | Param::M4 => v,
            };
            out.push(z);
        }
        Ok(out)
    }

    pub fn from_unconstrained(&self, z: &[f64]) -> Theta {
        debug_assert_eq!(z.len(), self.free.len());
        let mut theta = [0.0; NPARAM];
        for p in Param::ALL {
            if let Some(v) = self.pins[p.index()] {
                theta[p.index()] = v;
            }
        }
        // softmax over free heights with the slack logit fixed at 0
        let logits: Vec<(Param, f64)> = self
            .free
            .iter()
            .zip(z)
            .filter(|(p, _)| HEIGHTS.contains(p))
            .map(|(&p, &v)| (p, v))
            .collect();
        if !logits.is_empty() {
            let shift = logits.iter().map(|(_, v)| *v).fold(0.0, f64::max);
            let denom = (-shift).exp() + logits.iter().map(|(_, v)| (v - shift).exp()).sum::<f64>();
            let mass = self.free_mass();
            for (p, v) in logits {
                theta[p.index()] = mass * (v - shift).exp() / denom;
            }
        }
        for (&p, &v) in self.free.iter().zip(z) {
            match p {
                Param::C1 | Param::C2 | Param::C4 | Param::R => {
                    theta[p.index()] = v.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
                }
                Param::M1 | Param::M2 | Param::M4 => theta[p.index()] = v,
                _ => {}
            }
        }
        Theta(theta)
    }

    /// Chain rule: gradient over the free coordinates from the gradient over
    /// natural parameters, both evaluated at `theta`.
    pub fn chain_gradient(&self, theta: &Theta, grad: &[f64; NPARAM]) -> Vec<f64> {
        let mass = self.free_mass();
        let weighted: f64 = self
            .free
            .iter()
            .filter(|p| HEIGHTS.contains(p))
            .map(|&p| grad[p.index()] * theta[p])
            .sum();
        self.free
            .iter()
            .map(|&p| {
                let g = grad[p.index()];
                let v = theta[p];
                match p {
                    Param::P1 | Param::P2 | Param::P4 => v * g - v / mass * weighted,
                    Param::C1 | Param::C2 | Param::C4 | Param::R => v * g,
                    Param::M1 | Param::M2 | Param::M4 => g,
                }
            })
            .collect()
    }

    /// Box in unconstrained coordinates corresponding to natural bounds
    /// (which must already have `m` resolved).
    pub fn box_bounds(&self, bounds: &Bounds) -> (Vec<f64>, Vec<f64>) {
        let (plo, phi) = bounds.p;
        let logit = ((plo / phi).ln(), (phi / plo).ln());
        let m = bounds.m.expect("m bounds must be resolved");
        self.free
            .iter()
            .map(|p| match p {
                Param::P1 | Param::P2 | Param::P4 => logit,
                Param::C1 | Param::C2 | Param::C4 => (bounds.c.0.ln(), bounds.c.1.ln()),
                Param::R => (bounds.r.0.ln(), bounds.r.1.ln()),
                Param::M1 | Param::M2 | Param::M4 => m,
            })
            .unzip()
    }
}
