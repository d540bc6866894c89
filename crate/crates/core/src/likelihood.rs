//! Log-likelihoods for fully and partially observed trajectories.
//!
//! With full observation every factor is explicit: the outcome probability
//! at the event time times the exponential density of the waiting time at
//! rate `r · X_{i-1}`.
//!
//! Under partial observation the number of nonviable cells `u` hidden in
//! `M = X + Z` is a latent state. The forward recursion carries the
//! normalized weights `ᾱ_k(u)` with transitions
//! `h_k(u, v) = r (M_k - u) exp(-r (M_k - u) ΔT) · p_j(T_{k+1})`, where `v = u`
//! for events 1, 2, 3 and `v = u + 1` for event 4. The log-likelihood is the
//! sum of the log normalizers `d_{k+1}`. The gradient is propagated along
//! with the weights by differentiating the same recursion.

use crate::error::{Error, Result};
use crate::model::{probabilities_at, probabilities_with_partials, ModelParams, Theta, NPARAM};
use crate::sim::{ObservedStep, PartialTrajectory, Trajectory};

/// Largest trajectory the brute-force enumeration accepts.
pub const ENUMERATION_LIMIT: usize = 20;

/// Slot of `r` inside gradient vectors.
const R: usize = NPARAM - 1;

fn checked_params(theta: &Theta, s0: u64) -> Result<ModelParams> {
    let p = ModelParams::from_theta(theta, s0);
    p.validate()?;
    Ok(p)
}

/// Full-data log-likelihood, optionally with the survival factor for a
/// trajectory cut off before extinction.
pub fn full_loglik_with(theta: &Theta, traj: &Trajectory, right_censor: bool) -> Result<f64> {
    let params = checked_params(theta, traj.s0)?;
    let r = params.r;
    let ln_r = r.ln();
    let mut ll = 0.0;
    let mut prev_t = 0.0;
    for (i, e) in traj.events.iter().enumerate() {
        let x = traj.viable_before(i) as f64;
        let p = probabilities_at(&params, e.t)[e.kind.prob_index()];
        if !(p > 0.0) {
            return Err(Error::NonFiniteLikelihood(format!(
                "event {} ({:?}) at t = {} has probability {p}",
                i + 1,
                e.kind,
                e.t
            )));
        }
        ll += p.ln() + ln_r + x.ln() - r * x * (e.t - prev_t);
        prev_t = e.t;
    }
    if right_censor {
        if let Some(end) = traj.t_end {
            let x = traj.final_counts().0 as f64;
            ll -= r * x * (end - prev_t).max(0.0);
        }
    }
    Ok(ll)
}

/// `Σ_i [log p_{kind(i)}(T_i) + log r + log X_{i-1} - r X_{i-1} ΔT_i]`.
pub fn full_loglik(theta: &Theta, traj: &Trajectory) -> Result<f64> {
    full_loglik_with(theta, traj, false)
}

/// Full-data log-likelihood and its gradient over the ten parameters.
pub fn full_loglik_grad(theta: &Theta, traj: &Trajectory) -> Result<(f64, [f64; NPARAM])> {
    let params = checked_params(theta, traj.s0)?;
    let r = params.r;
    let ln_r = r.ln();
    let mut ll = 0.0;
    let mut grad = [0.0; NPARAM];
    let mut exposure = 0.0;
    let mut prev_t = 0.0;
    for (i, e) in traj.events.iter().enumerate() {
        let x = traj.viable_before(i) as f64;
        let (probs, partials) = probabilities_with_partials(&params, e.t);
        let j = e.kind.prob_index();
        let p = probs[j];
        if !(p > 0.0) {
            return Err(Error::NonFiniteLikelihood(format!(
                "event {} ({:?}) at t = {} has probability {p}",
                i + 1,
                e.kind,
                e.t
            )));
        }
        let dt = e.t - prev_t;
        ll += p.ln() + ln_r + x.ln() - r * x * dt;
        exposure += x * dt;
        for (g, d) in grad.iter_mut().zip(partials[j].iter()) {
            *g += d / p;
        }
        prev_t = e.t;
    }
    grad[R] = traj.len() as f64 / r - exposure;
    Ok((ll, grad))
}

/// Closed-form rate MLE `n / Σ X_{i-1} ΔT_i`.
pub fn rate_mle(traj: &Trajectory) -> Result<f64> {
    rate_mle_pooled(std::slice::from_ref(traj))
}

/// Rate MLE over independent trajectories sharing one rate.
pub fn rate_mle_pooled(trajs: &[Trajectory]) -> Result<f64> {
    let mut n = 0usize;
    let mut exposure = 0.0;
    for traj in trajs {
        let mut prev_t = 0.0;
        for (i, e) in traj.events.iter().enumerate() {
            exposure += traj.viable_before(i) as f64 * (e.t - prev_t);
            prev_t = e.t;
        }
        n += traj.len();
    }
    if n == 0 {
        return Err(Error::NoEvents);
    }
    Ok(n as f64 / exposure)
}

/// Controls for the forward algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Hidden states at either edge of the support whose normalized weight
    /// (the weights sum to one) falls below `prune_tol` are dropped. The
    /// discarded mass is far below double precision of the log-likelihood
    /// for the default; `0.0` keeps every state with nonzero weight.
    pub prune_tol: f64,
    /// Add the survival factor for the interval after the last event when
    /// the trajectory carries an observation end time.
    pub right_censor: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { prune_tol: 1e-20, right_censor: false }
    }
}

impl ForwardOptions {
    pub fn exact() -> Self {
        Self { prune_tol: 0.0, right_censor: false }
    }
}

/// Normalized forward weights over the hidden nonviable count, with
/// optional gradient accumulators.
///
/// Weights are stored for the contiguous window `lo..lo + len`; every other
/// hidden count has weight zero.
#[derive(Debug, Clone)]
pub struct ForwardState {
    k: usize,
    lo: usize,
    weights: Vec<f64>,
    loglik: f64,
    grad: Option<GradState>,
    scratch: Vec<f64>,
}

#[derive(Debug, Clone)]
struct GradState {
    weights: Vec<[f64; NPARAM]>,
    loglik: [f64; NPARAM],
    scratch: Vec<[f64; NPARAM]>,
}

/// Transition data shared by every hidden state in one step.
struct StepKernel {
    m_k: f64,
    dt: f64,
    r: f64,
    /// `(probability, partials)` of staying at `u`.
    stay: Option<(f64, [f64; 9])>,
    /// `(probability, partials)` of moving to `u + 1`.
    shift: Option<(f64, [f64; 9])>,
}

impl ForwardState {
    /// `ᾱ_0(0) = 1`.
    pub fn new(with_grad: bool) -> Self {
        Self {
            k: 0,
            lo: 0,
            weights: vec![1.0],
            loglik: 0.0,
            grad: with_grad.then(|| GradState {
                weights: vec![[0.0; NPARAM]],
                loglik: [0.0; NPARAM],
                scratch: Vec::new(),
            }),
            scratch: Vec::new(),
        }
    }

    /// Number of steps absorbed so far.
    pub fn step_index(&self) -> usize {
        self.k
    }

    /// Normalized weight of hidden count `u`.
    pub fn weight(&self, u: usize) -> f64 {
        if u < self.lo {
            return 0.0;
        }
        self.weights.get(u - self.lo).copied().unwrap_or(0.0)
    }

    /// Inclusive range of hidden counts carrying weight.
    pub fn support(&self) -> (usize, usize) {
        (self.lo, self.lo + self.weights.len() - 1)
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn grad_loglik(&self) -> Option<[f64; NPARAM]> {
        self.grad.as_ref().map(|g| g.loglik)
    }

    /// Derivative of `ᾱ_k(u)` with respect to every parameter.
    pub fn weight_grad(&self, u: usize) -> Option<[f64; NPARAM]> {
        let g = self.grad.as_ref()?;
        if u < self.lo {
            return Some([0.0; NPARAM]);
        }
        Some(g.weights.get(u - self.lo).copied().unwrap_or([0.0; NPARAM]))
    }

    /// Absorbs one observed step from `(M_k, T_k)` to an event at `t_next`.
    pub fn step(
        &mut self,
        params: &ModelParams,
        m_k: u64,
        t_k: f64,
        t_next: f64,
        obs: ObservedStep,
        opts: &ForwardOptions,
    ) -> Result<()> {
        let (probs, partials) = probabilities_with_partials(params, t_next);
        let (stay, shift) = match obs {
            ObservedStep::Grow => {
                (Some((probs[0], partials[0])), Some((probs[3], partials[3])))
            }
            ObservedStep::Asym => (Some((probs[1], partials[1])), None),
            ObservedStep::Diff => (Some((probs[2], partials[2])), None),
        };
        let kernel = StepKernel { m_k: m_k as f64, dt: t_next - t_k, r: params.r, stay, shift };
        let step_no = self.k + 1;

        // Reference state: the largest hidden count that still leaves a
        // viable cell. Its exponential factor is the largest, so every
        // other scaled factor q^(u_ref - u) is at most one.
        if m_k == 0 || self.lo as u64 >= m_k {
            return Err(Error::NonFiniteLikelihood(format!(
                "step {step_no}: no hidden state leaves a viable cell to divide"
            )));
        }
        let hi = self.lo + self.weights.len() - 1;
        let u_ref = hi.min(m_k as usize - 1);
        let w_ref = kernel.m_k - u_ref as f64;
        let log_offset = -kernel.r * w_ref * kernel.dt;

        let ds = match self.grad.as_mut() {
            None => propagate(&kernel, self.lo, u_ref, &self.weights, &mut self.scratch),
            Some(g) => propagate_with_grad(
                &kernel,
                self.lo,
                u_ref,
                &self.weights,
                &g.weights,
                &mut self.scratch,
                &mut g.scratch,
                &mut g.loglik,
            ),
        };
        if !(ds > 0.0 && ds.is_finite()) {
            return Err(Error::NonFiniteLikelihood(format!(
                "step {step_no}: normalizer d = {ds} under these parameters"
            )));
        }
        std::mem::swap(&mut self.weights, &mut self.scratch);
        if let Some(g) = self.grad.as_mut() {
            std::mem::swap(&mut g.weights, &mut g.scratch);
        }
        self.loglik += log_offset + ds.ln();
        self.k += 1;
        self.prune(opts.prune_tol);
        Ok(())
    }

    /// Multiplies in the probability of no further event during `tail`
    /// time units after the last one.
    pub fn censor(&mut self, r: f64, m_n: u64, tail: f64) -> Result<()> {
        if tail <= 0.0 {
            return Ok(());
        }
        let mut ds = 0.0;
        let mut dgrad = [0.0; NPARAM];
        for (i, w) in self.weights.iter_mut().enumerate() {
            let viable = m_n as f64 - (self.lo + i) as f64;
            let f = (-r * viable * tail).exp();
            *w *= f;
            ds += *w;
            if let Some(g) = self.grad.as_mut() {
                let gw = &mut g.weights[i];
                for gv in gw.iter_mut() {
                    *gv *= f;
                }
                // ∂f/∂r = -viable·tail·f, folded into the already scaled weight
                gw[R] += -viable * tail * *w;
                for (acc, gv) in dgrad.iter_mut().zip(gw.iter()) {
                    *acc += gv;
                }
            }
        }
        if !(ds > 0.0 && ds.is_finite()) {
            return Err(Error::NonFiniteLikelihood("survival factor vanished".into()));
        }
        for w in &mut self.weights {
            *w /= ds;
        }
        if let Some(g) = self.grad.as_mut() {
            for (i, gw) in g.weights.iter_mut().enumerate() {
                let wn = self.weights[i];
                for (j, gv) in gw.iter_mut().enumerate() {
                    *gv = (*gv - wn * dgrad[j]) / ds;
                }
            }
            for (acc, d) in g.loglik.iter_mut().zip(dgrad.iter()) {
                *acc += d / ds;
            }
        }
        self.loglik += ds.ln();
        Ok(())
    }

    /// Drops states carrying less than `tol` of the (unit) total weight
    /// from both ends of the window.
    fn prune(&mut self, tol: f64) {
        let keep = |w: &f64| *w > tol;
        let first = self.weights.iter().position(keep).unwrap_or(0);
        let last = self.weights.iter().rposition(keep).unwrap_or(0);
        if first == 0 && last + 1 == self.weights.len() {
            return;
        }
        self.weights.truncate(last + 1);
        self.weights.drain(..first);
        if let Some(g) = self.grad.as_mut() {
            g.weights.truncate(last + 1);
            g.weights.drain(..first);
        }
        self.lo += first;
    }
}

/// Writes the normalized next weights into `out` and returns the scaled
/// normalizer `d · exp(r w_ref ΔT)`.
fn propagate(k: &StepKernel, lo: usize, u_ref: usize, alpha: &[f64], out: &mut Vec<f64>) -> f64 {
    let len = alpha.len() + usize::from(k.shift.is_some());
    out.clear();
    out.resize(len, 0.0);
    let q = (-k.r * k.dt).exp();
    let p_stay = k.stay.map_or(0.0, |s| s.0);
    let p_shift = k.shift.map_or(0.0, |s| s.0);
    // first pass: out[i] = g(u) ᾱ(u), walking down from the reference
    // state so the factor only shrinks; four lanes keep the products
    // independent
    let top = (u_ref + 1).saturating_sub(lo).min(alpha.len());
    let q2 = q * q;
    let q4 = q2 * q2;
    let mut f = [1.0, q, q2, q2 * q];
    let mut acc = [0.0; 4];
    let base = k.m_k - lo as f64;
    let mut j = 0;
    while j < top {
        let lanes = (top - j).min(4);
        for l in 0..lanes {
            let i = top - 1 - (j + l);
            let ga = k.r * (base - i as f64) * f[l] * alpha[i];
            out[i] = ga;
            acc[l] += ga;
        }
        for fl in &mut f {
            *fl *= q4;
        }
        if f[0] == 0.0 {
            break;
        }
        j += 4;
    }
    let sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let total = sum * (p_stay + p_shift);
    if !(total > 0.0) {
        out.iter_mut().for_each(|w| *w = 0.0);
        return total;
    }
    // second pass, downward and in place: v receives u = v (stay) and
    // u = v - 1 (shift)
    let (ps, pf) = (p_stay / total, p_shift / total);
    for v in (1..len).rev() {
        out[v] = ps * out[v] + pf * out[v - 1];
    }
    out[0] *= ps;
    total
}

#[allow(clippy::too_many_arguments)]
fn propagate_with_grad(
    k: &StepKernel,
    lo: usize,
    u_ref: usize,
    alpha: &[f64],
    dalpha: &[[f64; NPARAM]],
    out: &mut Vec<f64>,
    dout: &mut Vec<[f64; NPARAM]>,
    dloglik: &mut [f64; NPARAM],
) -> f64 {
    let len = alpha.len() + usize::from(k.shift.is_some());
    out.clear();
    out.resize(len, 0.0);
    dout.clear();
    dout.resize(len, [0.0; NPARAM]);
    let q = (-k.r * k.dt).exp();
    let top = (u_ref + 1).saturating_sub(lo).min(alpha.len());
    let mut factor = 1.0;
    let mut total = 0.0;
    let mut dtotal = [0.0; NPARAM];

    let mut add = |dest: usize,
                   g: f64,
                   dg_dr: f64,
                   a_u: f64,
                   da_u: &[f64; NPARAM],
                   (p, dp): (f64, [f64; 9]),
                   out: &mut Vec<f64>,
                   dout: &mut Vec<[f64; NPARAM]>| {
        let h = g * p;
        let contrib = a_u * h;
        out[dest] += contrib;
        total += contrib;
        let slot = &mut dout[dest];
        for j in 0..9 {
            let d = da_u[j] * h + a_u * g * dp[j];
            slot[j] += d;
            dtotal[j] += d;
        }
        let d = da_u[R] * h + a_u * dg_dr * p;
        slot[R] += d;
        dtotal[R] += d;
    };

    for i in (0..top).rev() {
        let viable = k.m_k - (lo + i) as f64;
        let g = k.r * viable * factor;
        let dg_dr = g * (1.0 / k.r - viable * k.dt);
        if let Some(s) = k.stay {
            add(i, g, dg_dr, alpha[i], &dalpha[i], s, out, dout);
        }
        if let Some(s) = k.shift {
            add(i + 1, g, dg_dr, alpha[i], &dalpha[i], s, out, dout);
        }
        factor *= q;
    }

    if total > 0.0 {
        let inv = 1.0 / total;
        for (w, dw) in out.iter_mut().zip(dout.iter_mut()) {
            *w *= inv;
            for j in 0..NPARAM {
                dw[j] = (dw[j] - *w * dtotal[j]) * inv;
            }
        }
        for j in 0..NPARAM {
            dloglik[j] += dtotal[j] * inv;
        }
    }
    total
}

fn run_forward(
    theta: &Theta,
    ptraj: &PartialTrajectory,
    opts: &ForwardOptions,
    with_grad: bool,
) -> Result<ForwardState> {
    let params = checked_params(theta, ptraj.m0)?;
    let steps = ptraj.steps()?;
    let mut state = ForwardState::new(with_grad);
    for (k, obs) in steps.into_iter().enumerate() {
        let (m_k, _, t_k) = ptraj.state(k);
        let t_next = ptraj.records[k].t;
        state.step(&params, m_k, t_k, t_next, obs, opts)?;
    }
    if opts.right_censor {
        if let Some(end) = ptraj.t_end {
            let (m_n, _, t_n) = ptraj.state(ptraj.len());
            state.censor(params.r, m_n, end - t_n)?;
        }
    }
    Ok(state)
}

/// Partial-data log-likelihood by the normalized forward algorithm.
pub fn forward_loglik(theta: &Theta, ptraj: &PartialTrajectory) -> Result<f64> {
    forward_loglik_with(theta, ptraj, &ForwardOptions::default())
}

pub fn forward_loglik_with(
    theta: &Theta,
    ptraj: &PartialTrajectory,
    opts: &ForwardOptions,
) -> Result<f64> {
    Ok(run_forward(theta, ptraj, opts, false)?.loglik())
}

/// Forward log-likelihood and its gradient over the ten natural parameters.
pub fn forward_loglik_grad(
    theta: &Theta,
    ptraj: &PartialTrajectory,
) -> Result<(f64, [f64; NPARAM])> {
    forward_loglik_grad_with(theta, ptraj, &ForwardOptions::default())
}

pub fn forward_loglik_grad_with(
    theta: &Theta,
    ptraj: &PartialTrajectory,
    opts: &ForwardOptions,
) -> Result<(f64, [f64; NPARAM])> {
    let state = run_forward(theta, ptraj, opts, true)?;
    Ok((state.loglik(), state.grad_loglik().unwrap_or([0.0; NPARAM])))
}

/// Sums the likelihood over every hidden dud path explicitly. Exponential in
/// the number of `(+1, 0)` steps; meant as a check on the forward algorithm.
pub fn enumerate_loglik(theta: &Theta, ptraj: &PartialTrajectory) -> Result<f64> {
    if ptraj.len() > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { n: ptraj.len(), limit: ENUMERATION_LIMIT });
    }
    let params = checked_params(theta, ptraj.m0)?;
    let steps = ptraj.steps()?;
    if steps.is_empty() {
        return Ok(0.0);
    }
    let mut paths = Vec::new();
    enumerate_paths(&params, ptraj, &steps, 0, 0, 0.0, &mut paths);
    let max = paths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFiniteLikelihood("every hidden path has zero likelihood".into()));
    }
    let sum: f64 = paths.iter().map(|&l| (l - max).exp()).sum();
    Ok(max + sum.ln())
}

fn enumerate_paths(
    params: &ModelParams,
    ptraj: &PartialTrajectory,
    steps: &[ObservedStep],
    k: usize,
    duds: u64,
    acc: f64,
    out: &mut Vec<f64>,
) {
    if k == steps.len() {
        out.push(acc);
        return;
    }
    let (m_k, _, t_k) = ptraj.state(k);
    let t = ptraj.records[k].t;
    if duds >= m_k {
        return;
    }
    let viable = (m_k - duds) as f64;
    let r = params.r;
    let wait = r.ln() + viable.ln() - r * viable * (t - t_k);
    let probs = probabilities_at(params, t);
    let mut branch = |p: f64, next_duds: u64| {
        if p > 0.0 {
            enumerate_paths(params, ptraj, steps, k + 1, next_duds, acc + wait + p.ln(), out);
        }
    };
    match steps[k] {
        ObservedStep::Grow => {
            branch(probs[0], duds);
            branch(probs[3], duds + 1);
        }
        ObservedStep::Asym => branch(probs[1], duds),
        ObservedStep::Diff => branch(probs[2], duds),
    }
}
