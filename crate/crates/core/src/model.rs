//! Division probabilities, mean-field solution and exact moments of the
//! viable stem-cell count.
//!
//! The viable count `X(t)` starts at `s0`. Each viable cell divides at rate
//! `r`; a division at time `t` is a symmetric self-renewal, an asymmetric
//! division, a symmetric differentiation or a dud renewal with probabilities
//! `p1(t), p2(t), p3(t), p4(t)`. The first, second and fourth follow a
//! Lorentzian peak and `p3` takes the remaining mass.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, SimpsonTol};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Index of each estimable parameter inside a [`Theta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    P1 = 0,
    P2,
    P4,
    C1,
    C2,
    C4,
    M1,
    M2,
    M4,
    R,
}

pub const NPARAM: usize = 10;

impl Param {
    pub const ALL: [Param; NPARAM] = [
        Param::P1,
        Param::P2,
        Param::P4,
        Param::C1,
        Param::C2,
        Param::C4,
        Param::M1,
        Param::M2,
        Param::M4,
        Param::R,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Param::P1 => "p1",
            Param::P2 => "p2",
            Param::P4 => "p4",
            Param::C1 => "c1",
            Param::C2 => "c2",
            Param::C4 => "c4",
            Param::M1 => "m1",
            Param::M2 => "m2",
            Param::M4 => "m4",
            Param::R => "r",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The ten estimable parameters in the fixed order
/// `(p1, p2, p4, c1, c2, c4, m1, m2, m4, r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta(pub [f64; NPARAM]);

impl Theta {
    pub fn get(&self, p: Param) -> f64 {
        self.0[p.index()]
    }

    pub fn set(&mut self, p: Param, v: f64) {
        self.0[p.index()] = v;
    }

    pub fn with(mut self, p: Param, v: f64) -> Self {
        self.set(p, v);
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Checks the simplex and positivity constraints.
    pub fn validate(&self) -> Result<()> {
        ModelParams::from_theta(self, 0).validate()
    }
}

impl std::ops::Index<Param> for Theta {
    type Output = f64;
    fn index(&self, p: Param) -> &f64 {
        &self.0[p.index()]
    }
}

impl Serialize for Theta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(NPARAM))?;
        for p in Param::ALL {
            map.serialize_entry(p.name(), &self[p])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        let mut out = [0.0; NPARAM];
        for p in Param::ALL {
            out[p.index()] = *map
                .get(p.name())
                .ok_or_else(|| D::Error::custom(format!("missing parameter `{}`", p.name())))?;
        }
        if let Some(extra) = map.keys().find(|k| Param::from_name(k).is_none()) {
            return Err(D::Error::custom(format!("unknown parameter `{extra}`")));
        }
        Ok(Theta(out))
    }
}

/// A time-dependent probability curve with a closed-form integral.
pub trait ProbabilityShape {
    fn value(&self, t: f64) -> f64;
    /// `∫_0^t value(u) du`.
    fn integral(&self, t: f64) -> f64;
    /// Partial derivatives of `value(t)` with respect to the shape's own
    /// parameters, in declaration order.
    fn partials(&self, t: f64) -> [f64; 3];
}

/// `p / (1 + c (t - m)^2)`: peak height `p` attained at `t = m`, decay `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub p: f64,
    pub c: f64,
    pub m: f64,
}

impl LorentzianParams {
    pub const fn new(p: f64, c: f64, m: f64) -> Self {
        Self { p, c, m }
    }
}

impl ProbabilityShape for LorentzianParams {
    #[inline]
    fn value(&self, t: f64) -> f64 {
        let dt = t - self.m;
        self.p / (1.0 + self.c * dt * dt)
    }

    fn integral(&self, t: f64) -> f64 {
        if self.c == 0.0 {
            return self.p * t;
        }
        let sc = self.c.sqrt();
        self.p / sc * ((sc * (t - self.m)).atan() + (sc * self.m).atan())
    }

    #[inline]
    fn partials(&self, t: f64) -> [f64; 3] {
        let dt = t - self.m;
        let den = 1.0 + self.c * dt * dt;
        let inv = 1.0 / den;
        let inv2 = inv * inv;
        [inv, -self.p * dt * dt * inv2, 2.0 * self.p * self.c * dt * inv2]
    }
}

/// Full parameter set of the branching process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatParams", into = "FlatParams")]
pub struct ModelParams {
    pub lor1: LorentzianParams,
    pub lor2: LorentzianParams,
    pub lor4: LorentzianParams,
    /// Division rate per viable cell.
    pub r: f64,
    /// Initial viable stem-cell count.
    pub s0: u64,
}

/// On-disk JSON layout `{p1,p2,p4,c1,c2,c4,m1,m2,m4,r,s0}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatParams {
    pub p1: f64,
    pub p2: f64,
    pub p4: f64,
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
    pub m1: f64,
    pub m2: f64,
    pub m4: f64,
    pub r: f64,
    pub s0: u64,
}

impl TryFrom<FlatParams> for ModelParams {
    type Error = Error;
    fn try_from(f: FlatParams) -> Result<Self> {
        let p = ModelParams {
            lor1: LorentzianParams::new(f.p1, f.c1, f.m1),
            lor2: LorentzianParams::new(f.p2, f.c2, f.m2),
            lor4: LorentzianParams::new(f.p4, f.c4, f.m4),
            r: f.r,
            s0: f.s0,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<ModelParams> for FlatParams {
    fn from(p: ModelParams) -> Self {
        FlatParams {
            p1: p.lor1.p,
            p2: p.lor2.p,
            p4: p.lor4.p,
            c1: p.lor1.c,
            c2: p.lor2.c,
            c4: p.lor4.c,
            m1: p.lor1.m,
            m2: p.lor2.m,
            m4: p.lor4.m,
            r: p.r,
            s0: p.s0,
        }
    }
}

impl ModelParams {
    pub fn new(
        lor1: LorentzianParams,
        lor2: LorentzianParams,
        lor4: LorentzianParams,
        r: f64,
        s0: u64,
    ) -> Result<Self> {
        let p = Self { lor1, lor2, lor4, r, s0 };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters without validation; pair with [`ModelParams::validate`].
    pub fn from_theta(theta: &Theta, s0: u64) -> Self {
        let t = &theta.0;
        Self {
            lor1: LorentzianParams::new(t[0], t[3], t[6]),
            lor2: LorentzianParams::new(t[1], t[4], t[7]),
            lor4: LorentzianParams::new(t[2], t[5], t[8]),
            r: t[9],
            s0,
        }
    }

    pub fn theta(&self) -> Theta {
        Theta([
            self.lor1.p,
            self.lor2.p,
            self.lor4.p,
            self.lor1.c,
            self.lor2.c,
            self.lor4.c,
            self.lor1.m,
            self.lor2.m,
            self.lor4.m,
            self.r,
        ])
    }

    pub fn with_s0(mut self, s0: u64) -> Self {
        self.s0 = s0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        for (name, l) in [("1", &self.lor1), ("2", &self.lor2), ("4", &self.lor4)] {
            if !(l.p.is_finite() && (0.0..=1.0).contains(&l.p)) {
                return bad(format!("p{name} = {} must lie in [0, 1]", l.p));
            }
            if !(l.c.is_finite() && l.c >= 0.0) {
                return bad(format!("c{name} = {} must be finite and >= 0", l.c));
            }
            if !l.m.is_finite() {
                return bad(format!("m{name} = {} must be finite", l.m));
            }
        }
        let sum = self.lor1.p + self.lor2.p + self.lor4.p;
        if sum > 1.0 + 1e-12 {
            return bad(format!("p1 + p2 + p4 = {sum} must not exceed 1"));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return bad(format!("r = {} must be finite and > 0", self.r));
        }
        Ok(())
    }

    /// Configuration 1 of the parameter-recovery study (s0 = 200, r = 0.2).
    pub fn config1() -> Self {
        Self {
            lor1: LorentzianParams::new(0.55, 0.005, 4.0),
            lor2: LorentzianParams::new(0.15, 0.012, 12.0),
            lor4: LorentzianParams::new(0.20, 0.008, 20.0),
            r: 0.2,
            s0: 200,
        }
    }

    /// Configuration 2: equal peaks at well separated times.
    pub fn config2() -> Self {
        Self {
            lor1: LorentzianParams::new(0.30, 0.008, 6.0),
            lor2: LorentzianParams::new(0.30, 0.008, 15.0),
            lor4: LorentzianParams::new(0.30, 0.008, 25.0),
            r: 0.2,
            s0: 200,
        }
    }

    /// Configuration 3: a dominant asymmetric-division peak.
    pub fn config3() -> Self {
        Self {
            lor1: LorentzianParams::new(0.25, 0.005, 6.0),
            lor2: LorentzianParams::new(0.65, 0.012, 15.0),
            lor4: LorentzianParams::new(0.10, 0.008, 20.0),
            r: 0.2,
            s0: 200,
        }
    }
}

/// Event probabilities `[p1, p2, p3, p4]` at time `t`. `p3` is the
/// complement, so the four always sum to one.
#[inline]
pub fn probabilities_at(params: &ModelParams, t: f64) -> [f64; 4] {
    let p1 = params.lor1.value(t);
    let p2 = params.lor2.value(t);
    let p4 = params.lor4.value(t);
    [p1, p2, 1.0 - p1 - p2 - p4, p4]
}

/// Event probabilities together with their partial derivatives with respect
/// to the nine shape parameters (the first nine [`Theta`] slots).
#[inline]
pub fn probabilities_with_partials(params: &ModelParams, t: f64) -> ([f64; 4], [[f64; 9]; 4]) {
    let probs = probabilities_at(params, t);
    let mut grads = [[0.0; 9]; 4];
    let lors = [&params.lor1, &params.lor2, &params.lor4];
    // slots (p, c, m) of events 1, 2, 4 inside theta
    let slots = [[0, 3, 6], [1, 4, 7], [2, 5, 8]];
    let event = [0usize, 1, 3];
    for k in 0..3 {
        let d = lors[k].partials(t);
        for (j, &slot) in slots[k].iter().enumerate() {
            grads[event[k]][slot] = d[j];
            grads[2][slot] = -d[j];
        }
    }
    (probs, grads)
}

/// `P(t) = ∫_0^t [p1(u) - p3(u)] du` in closed form.
pub fn cumulative_drift(params: &ModelParams, t: f64) -> f64 {
    2.0 * params.lor1.integral(t) + params.lor2.integral(t) + params.lor4.integral(t) - t
}

/// Expected viable count `S(t) = s0 exp(r P(t))`.
pub fn mean_count(params: &ModelParams, t: f64) -> f64 {
    params.s0 as f64 * (params.r * cumulative_drift(params, t)).exp()
}

const VARIANCE_TOL: SimpsonTol = SimpsonTol::new(1e-10, 1e-12, 50);

/// `∫_a^b (p1 + p3)(u) exp(-r P(u)) du`; equals `s0 ∫ (p1+p3)/S`.
fn variance_kernel_integral(params: &ModelParams, a: f64, b: f64) -> f64 {
    adaptive_simpson(
        |u| {
            let p = probabilities_at(params, u);
            (p[0] + p[2]) * (-params.r * cumulative_drift(params, u)).exp()
        },
        a,
        b,
        VARIANCE_TOL,
    )
}

/// `Var X(t) = r S(t)^2 ∫_0^t (p1 + p3)(u) / S(u) du`.
pub fn variance_count(params: &ModelParams, t: f64) -> f64 {
    if t <= 0.0 || params.s0 == 0 {
        return 0.0;
    }
    let integral = variance_kernel_integral(params, 0.0, t);
    let scale = params.r * params.s0 as f64 * (2.0 * params.r * cumulative_drift(params, t)).exp();
    (scale * integral).max(0.0)
}

/// `Cov(X(t), X(u)) = S(t)/S(u) · V(u)` for `u <= t`; symmetric otherwise.
pub fn autocovariance(params: &ModelParams, t: f64, u: f64) -> f64 {
    let (late, early) = if t >= u { (t, u) } else { (u, t) };
    let ratio =
        (params.r * (cumulative_drift(params, late) - cumulative_drift(params, early))).exp();
    ratio * variance_count(params, early)
}

/// Correlation of `X(t)` and `X(u)`; `None` when either variance vanishes.
pub fn autocorrelation(params: &ModelParams, t: f64, u: f64) -> Option<f64> {
    let vt = variance_count(params, t);
    let vu = variance_count(params, u);
    if vt <= 0.0 || vu <= 0.0 {
        return None;
    }
    Some(autocovariance(params, t, u) / (vt * vu).sqrt())
}

/// Theoretical mean and variance of the viable count on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Evaluates mean and variance on `times` (any order, all `>= 0`),
/// accumulating the variance integral panel by panel over the sorted grid.
pub fn moment_curve(params: &ModelParams, times: &[f64]) -> Result<MomentCurve> {
    if let Some(&t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidInput(format!("grid time {t} must be finite and >= 0")));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut variance = vec![0.0; times.len()];
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &i in &order {
        let t = times[i];
        acc += variance_kernel_integral(params, prev, t);
        prev = t;
        let scale =
            params.r * params.s0 as f64 * (2.0 * params.r * cumulative_drift(params, t)).exp();
        variance[i] = if t == 0.0 { 0.0 } else { (scale * acc).max(0.0) };
    }
    Ok(MomentCurve {
        times: times.to_vec(),
        mean: times.iter().map(|&t| mean_count(params, t)).collect(),
        variance,
    })
}

/// Lower bound on the expected extinction time, obtained when every event
/// is a symmetric differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimeBound {
    /// `(1/r) Σ_{k=1}^{s0} 1/k`.
    pub exact: f64,
    /// Approximation `(1/r) ln(s0) + γ` (γ outside the rate factor).
    pub approx_gamma: f64,
    /// `(ln s0 + γ) / r`, the harmonic asymptotic proper.
    pub approx_harmonic: f64,
    /// `ln(s0) / r` with no Euler-Mascheroni term.
    pub approx_log: f64,
}

pub fn min_expected_stopping_time(params: &ModelParams) -> Result<StoppingTimeBound> {
    if params.s0 == 0 {
        return Err(Error::Extinct);
    }
    // summed smallest-first for accuracy
    let harmonic: f64 = (1..=params.s0).rev().map(|k| 1.0 / k as f64).sum();
    let ln_s0 = (params.s0 as f64).ln();
    Ok(StoppingTimeBound {
        exact: harmonic / params.r,
        approx_gamma: ln_s0 / params.r + EULER_GAMMA,
        approx_harmonic: (ln_s0 + EULER_GAMMA) / params.r,
        approx_log: ln_s0 / params.r,
    })
}

/// Right-hand side of the mean-field system for (viable, nonviable,
/// differentiated) counts.
pub fn mean_field_ode_rhs(params: &ModelParams, t: f64, state: [f64; 3]) -> [f64; 3] {
    let [p1, p2, p3, p4] = probabilities_at(params, t);
    let rs = params.r * state[0];
    [rs * (p1 - p3), rs * p4, rs * (p2 + 2.0 * p3)]
}
