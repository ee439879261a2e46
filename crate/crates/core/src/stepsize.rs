//! Stepsize rules and the error-bound sequences that certify them.
//!
//! Every recursive rule here has the form `g_{k+1} = g_k (1 - a g_k)`. With
//! `m = a g` this is the logistic map `m_{k+1} = m_k (1 - m_k)`, so all
//! adaptive schedules share one normalised state `m` and only differ in the
//! starting value and the output scale. The state is carried in double-double
//! precision and rounded once per emitted step; rounding the recursion in
//! plain `f64` drifts by roughly `sqrt(k)` ulp, which would blur the exact
//! identities between the sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};

/// Relative slack when checking inequalities between user-supplied constants
/// that are often set to equality (e.g. `nu = L sqrt(e0/2)`).
const REL_SLACK: f64 = 1e-12;

mod dd {
    //! Minimal double-double arithmetic (error-free transforms via FMA).

    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    impl Dd {
        pub fn from(v: f64) -> Dd {
            Dd { hi: v, lo: 0.0 }
        }

        /// Exact product of two doubles.
        pub fn prod(a: f64, b: f64) -> Dd {
            let p = a * b;
            Dd {
                hi: p,
                lo: a.mul_add(b, -p),
            }
        }

        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }

        pub fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            quick_two_sum(s, e + self.lo + o.lo)
        }

        pub fn neg(self) -> Dd {
            Dd {
                hi: -self.hi,
                lo: -self.lo,
            }
        }

        pub fn sub(self, o: Dd) -> Dd {
            self.add(o.neg())
        }

        pub fn mul(self, o: Dd) -> Dd {
            let p = Dd::prod(self.hi, o.hi);
            quick_two_sum(p.hi, p.lo + self.hi * o.lo + self.lo * o.hi)
        }

        pub fn mul_f(self, b: f64) -> Dd {
            let p = Dd::prod(self.hi, b);
            quick_two_sum(p.hi, p.lo + self.lo * b)
        }

        pub fn div_f(self, b: f64) -> Dd {
            let q = self.hi / b;
            let p = Dd::prod(q, b);
            let r = ((self.hi - p.hi) - p.lo + self.lo) / b;
            quick_two_sum(q, r)
        }
    }
}

use dd::Dd;

/// Constants shared by the adaptive rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    /// Strong monotonicity modulus.
    pub eta: f64,
    /// Lipschitz constant.
    pub lip: f64,
    /// Noise bound.
    pub nu: f64,
    /// Initial error bound `e_0 >= E||x_0 - x*||^2`.
    pub e0: f64,
    /// Stepsize discrepancy bound, `0 <= beta < eta / L`.
    #[serde(default)]
    pub beta: f64,
    /// DASA constant in `(0, eta/2]`.
    pub c: f64,
    /// Per-agent DASA multipliers.
    pub r: Vec<f64>,
    /// Diameter bound `max ||x - x_0||` over the set.
    pub diameter: f64,
    /// Accept `nu >= D` in place of `nu >= D L / sqrt(2)` for DASA.
    #[serde(default)]
    pub relaxed_nu: bool,
}

impl SchemeParams {
    /// Centralized defaults: `beta = 0`, `c = eta/2`, one agent with `r = 1`,
    /// `D = sqrt(e0)`.
    pub fn new(eta: f64, lip: f64, nu: f64, e0: f64) -> Self {
        SchemeParams {
            eta,
            lip,
            nu,
            e0,
            beta: 0.0,
            c: eta / 2.0,
            r: vec![1.0],
            diameter: e0.sqrt(),
            relaxed_nu: false,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_dasa(mut self, c: f64, r: Vec<f64>, diameter: f64) -> Self {
        self.c = c;
        self.r = r;
        self.diameter = diameter;
        self
    }

    pub fn relaxed(mut self, on: bool) -> Self {
        self.relaxed_nu = on;
        self
    }

    /// Upper end `1 + (eta - 2c)/L` of the admissible multiplier range.
    pub fn r_max(&self) -> f64 {
        1.0 + (self.eta - 2.0 * self.c) / self.lip
    }

    /// The discrepancy bound `(eta - 2c)/L` that DASA guarantees.
    pub fn dasa_beta(&self) -> f64 {
        (self.eta - 2.0 * self.c) / self.lip
    }

    /// Draws `count` multipliers uniformly from `[1, 1 + (eta-2c)/L]`.
    pub fn draw_multipliers<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let hi = self.r_max();
        (0..count)
            .map(|_| if hi > 1.0 { rng.random_range(1.0..=hi) } else { 1.0 })
            .collect()
    }

    fn validate_basic(&self) -> Result<()> {
        let all = [self.eta, self.lip, self.nu, self.e0];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SviError::param("eta, L, nu and e0 must be positive and finite"));
        }
        if self.eta > self.lip * (1.0 + REL_SLACK) {
            return Err(SviError::param(format!("eta = {} exceeds L = {}", self.eta, self.lip)));
        }
        Ok(())
    }

    pub fn validate_asa(&self) -> Result<()> {
        self.validate_basic()?;
        let need = self.lip * (self.e0 / 2.0).sqrt();
        if self.nu < need * (1.0 - REL_SLACK) {
            return Err(SviError::param(format!(
                "ASA needs nu >= L sqrt(e0/2) = {need}, got nu = {}",
                self.nu
            )));
        }
        Ok(())
    }

    pub fn validate_dasa(&self) -> Result<()> {
        self.validate_basic()?;
        if !(self.c > 0.0 && self.c <= self.eta / 2.0 * (1.0 + REL_SLACK)) {
            return Err(SviError::param(format!(
                "DASA needs c in (0, eta/2], got c = {}",
                self.c
            )));
        }
        if !(self.diameter.is_finite() && self.diameter > 0.0) {
            return Err(SviError::param("diameter bound D must be positive"));
        }
        let hi = self.r_max();
        for (i, r) in self.r.iter().enumerate() {
            if !(*r >= 1.0 && *r <= hi * (1.0 + REL_SLACK)) {
                return Err(SviError::param(format!("multiplier r_{i} = {r} outside [1, {hi}]")));
            }
        }
        let need = if self.relaxed_nu {
            self.diameter
        } else {
            self.diameter * self.lip / 2f64.sqrt()
        };
        if self.nu < need * (1.0 - REL_SLACK) {
            return Err(SviError::param(format!(
                "DASA needs nu >= {need}{}, got nu = {}",
                if self.relaxed_nu {
                    " (relaxed: D)"
                } else {
                    " (D L / sqrt 2)"
                },
                self.nu
            )));
        }
        Ok(())
    }

    pub fn validate_bounds(&self) -> Result<()> {
        self.validate_basic()?;
        let cap = 2.0 * self.nu * self.nu / (self.lip * self.lip);
        if self.e0 > cap * (1.0 + REL_SLACK) {
            return Err(SviError::param(format!(
                "bound sequences need e0 <= 2 nu^2 / L^2 = {cap}, got {}",
                self.e0
            )));
        }
        if !(self.beta >= 0.0 && self.beta < self.eta / self.lip) {
            return Err(SviError::param(format!("beta = {} outside [0, eta/L)", self.beta)));
        }
        Ok(())
    }

    /// Largest admissible stepsize `(eta - beta L)/((1+beta)^2 L^2)`.
    pub fn max_step(&self) -> f64 {
        let b1 = 1.0 + self.beta;
        (self.eta - self.beta * self.lip) / (b1 * b1 * self.lip * self.lip)
    }
}

/// `theta / k` for the 1-indexed iteration `k`.
pub fn harmonic_step(theta: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(SviError::param("harmonic steps are indexed from k = 1"));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(SviError::param("harmonic theta must be positive"));
    }
    Ok(theta / k as f64)
}

/// Logistic state `m_{k+1} = m_k (1 - m_k)` with output `scale * m / a`.
#[derive(Clone, Debug, PartialEq)]
struct Logistic {
    m: Dd,
    m0: Dd,
    a: f64,
    scale: f64,
}

impl Logistic {
    /// Sequence `g_{k+1} = g_k (1 - a g_k)` from `g0`, emitted as `scale * g`.
    fn new(g0: f64, a: f64, scale: f64) -> Self {
        let m0 = Dd::prod(a, g0);
        Logistic { m: m0, m0, a, scale }
    }

    fn current(&self) -> f64 {
        if self.scale == 1.0 {
            self.m.div_f(self.a).to_f64()
        } else {
            self.m.mul_f(self.scale).div_f(self.a).to_f64()
        }
    }

    fn advance(&mut self) {
        self.m = self.m.sub(self.m.mul(self.m));
    }

    fn reset(&mut self) {
        self.m = self.m0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizeKind {
    /// `theta / (k+1)` at update `k = 0, 1, ...`.
    Harmonic {
        theta: f64,
    },
    /// `g_k = g_{k-1} (1 - c g_{k-1})`.
    Recursive {
        gamma0: f64,
        c: f64,
    },
    Asa {
        params: SchemeParams,
    },
    Dasa {
        params: SchemeParams,
        agent: usize,
    },
    Explicit {
        steps: Vec<f64>,
    },
}

/// Lazily generated stepsizes for one agent (or one coordinate group).
#[derive(Clone, Debug)]
pub struct StepsizeSchedule {
    kind: StepsizeKind,
    k: usize,
    logistic: Option<Logistic>,
}

impl StepsizeSchedule {
    pub fn new(kind: StepsizeKind) -> Result<Self> {
        let logistic = match &kind {
            StepsizeKind::Harmonic { theta } => {
                harmonic_step(*theta, 1)?;
                None
            }
            StepsizeKind::Recursive { gamma0, c } => {
                if !(*c > 0.0 && *gamma0 > 0.0 && *gamma0 < 1.0 / c) {
                    return Err(SviError::param(format!(
                        "recursive rule needs c > 0 and 0 < gamma0 < 1/c, got gamma0 = {gamma0}, c = {c}"
                    )));
                }
                Some(Logistic::new(*gamma0, *c, 1.0))
            }
            StepsizeKind::Asa { params } => {
                params.validate_asa()?;
                let g0 = params.eta * params.e0 / (2.0 * params.nu * params.nu);
                Some(Logistic::new(g0, params.eta / 2.0, 1.0))
            }
            StepsizeKind::Dasa { params, agent } => {
                params.validate_dasa()?;
                let r = *params.r.get(*agent).ok_or_else(|| {
                    SviError::param(format!("agent {agent} has no multiplier ({} given)", params.r.len()))
                })?;
                // Agent-free sequence lambda_k = gamma_{k,i} / r_i.
                let f = 1.0 + (params.eta - 2.0 * params.c) / params.lip;
                let d2 = params.diameter * params.diameter;
                let lam0 = params.c * d2 / (f * f * params.nu * params.nu);
                Some(Logistic::new(lam0, params.c, r))
            }
            StepsizeKind::Explicit { steps } => {
                if steps.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(SviError::param("explicit stepsizes must be positive"));
                }
                None
            }
        };
        Ok(StepsizeSchedule { kind, k: 0, logistic })
    }

    pub fn harmonic(theta: f64) -> Result<Self> {
        Self::new(StepsizeKind::Harmonic { theta })
    }

    pub fn recursive(gamma0: f64, c: f64) -> Result<Self> {
        Self::new(StepsizeKind::Recursive { gamma0, c })
    }

    pub fn asa(params: &SchemeParams) -> Result<Self> {
        Self::new(StepsizeKind::Asa { params: params.clone() })
    }

    pub fn dasa(params: &SchemeParams, agent: usize) -> Result<Self> {
        Self::new(StepsizeKind::Dasa {
            params: params.clone(),
            agent,
        })
    }

    pub fn explicit(steps: Vec<f64>) -> Result<Self> {
        Self::new(StepsizeKind::Explicit { steps })
    }

    pub fn kind(&self) -> &StepsizeKind {
        &self.kind
    }

    /// Index of the next step to be emitted.
    pub fn position(&self) -> usize {
        self.k
    }

    pub fn reset(&mut self) {
        self.k = 0;
        if let Some(l) = &mut self.logistic {
            l.reset();
        }
    }

    /// Like `next()`, but an exhausted explicit schedule is an error.
    pub fn next_step(&mut self) -> Result<f64> {
        let k = self.k;
        self.next()
            .ok_or_else(|| SviError::param(format!("explicit stepsize sequence exhausted at k = {k}")))
    }

    /// The first `len` steps from the start, leaving `self` untouched.
    pub fn materialize(&self, len: usize) -> Result<Vec<f64>> {
        let mut s = self.clone();
        s.reset();
        (0..len).map(|_| s.next_step()).collect()
    }
}

impl Iterator for StepsizeSchedule {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let k = self.k;
        let out = match (&self.kind, &mut self.logistic) {
            (StepsizeKind::Harmonic { theta }, _) => theta / (k + 1) as f64,
            (StepsizeKind::Explicit { steps }, _) => *steps.get(k)?,
            (_, Some(l)) => {
                let g = l.current();
                l.advance();
                g
            }
            (_, None) => unreachable!("recursive kinds carry a logistic state"),
        };
        self.k += 1;
        Some(out)
    }
}

/// `gamma*_0, ..., gamma*_{K-1}` of the centralized adaptive rule.
pub fn asa_schedule(params: &SchemeParams, k: usize) -> Result<Vec<f64>> {
    StepsizeSchedule::asa(params)?.materialize(k)
}

/// `gamma_{0,i}, ..., gamma_{K-1,i}` of the distributed adaptive rule.
pub fn dasa_schedule(params: &SchemeParams, agent: usize, k: usize) -> Result<Vec<f64>> {
    StepsizeSchedule::dasa(params, agent)?.materialize(k)
}

/// Lower and upper optimal bound sequences `(delta*_k, Gamma*_k)` for
/// `k = 0..=K`.
pub fn bound_schedules(params: &SchemeParams, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate_bounds()?;
    let b1 = 1.0 + params.beta;
    let h = params.eta - params.beta * params.lip;
    let delta0 = h * params.e0 / (2.0 * b1 * b1 * params.nu * params.nu);
    // Both recursions normalise to the same logistic state m = (h/2) delta.
    let mut lo = Logistic::new(delta0, h / 2.0, 1.0);
    let mut up = Logistic::new(delta0, h / 2.0, b1);
    let mut deltas = Vec::with_capacity(k + 1);
    let mut gammas = Vec::with_capacity(k + 1);
    for _ in 0..=k {
        deltas.push(lo.current());
        gammas.push(up.current());
        lo.advance();
        up.advance();
    }
    Ok((deltas, gammas))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `e_{k+1} = (1 - eta g) e_k + g^2 nu^2`.
    Centralized,
    /// `e_{k+1} = (1 - (eta - beta L) g) e_k + (1+beta)^2 nu^2 g^2`.
    Distributed,
}

fn error_sequence_dd(params: &SchemeParams, steps: &[f64], variant: Variant) -> Vec<Dd> {
    let (a, noise) = match variant {
        Variant::Centralized => (params.eta, Dd::prod(params.nu, params.nu)),
        Variant::Distributed => {
            let b1 = 1.0 + params.beta;
            (
                params.eta - params.beta * params.lip,
                Dd::prod(b1, b1).mul(Dd::prod(params.nu, params.nu)),
            )
        }
    };
    let mut e = Dd::from(params.e0);
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(e);
    for &g in steps {
        let contraction = e.mul(Dd::prod(a, g));
        let fresh = noise.mul(Dd::prod(g, g));
        e = e.sub(contraction).add(fresh);
        out.push(e);
    }
    out
}

/// `e_0, ..., e_K` for the given `K` steps.
pub fn error_sequence(params: &SchemeParams, steps: &[f64], variant: Variant) -> Vec<f64> {
    error_sequence_dd(params, steps, variant)
        .into_iter()
        .map(Dd::to_f64)
        .collect()
}

/// Result of comparing a perturbed stepsize sequence against the optimum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapCheck {
    /// `e_K(perturbed) - e_K(optimal)`.
    pub gap: f64,
    /// `(1+beta)^2 nu^2 (g_{K-1} - g*_{K-1})^2`.
    pub lower_bound: f64,
    /// Rounding allowance used by [`GapCheck::holds`].
    pub slack: f64,
}

impl GapCheck {
    pub fn holds(&self) -> bool {
        self.gap >= self.lower_bound - self.slack
    }
}

/// Compares `e_K` of `perturbed` against the optimal sequence of the same
/// length (ASA for the centralized variant, `delta*` for the distributed one).
pub fn optimality_gap_check(params: &SchemeParams, perturbed: &[f64], variant: Variant) -> Result<GapCheck> {
    let k = perturbed.len();
    if k == 0 {
        return Err(SviError::param("need at least one step"));
    }
    let local;
    let p = match variant {
        Variant::Centralized => {
            local = SchemeParams {
                beta: 0.0,
                ..params.clone()
            };
            &local
        }
        Variant::Distributed => params,
    };
    p.validate_bounds()?;
    let cap = p.max_step();
    if let Some(j) = perturbed
        .iter()
        .position(|g| !(*g > 0.0 && *g <= cap * (1.0 + REL_SLACK)))
    {
        return Err(SviError::param(format!(
            "step {j} = {} outside the feasible region (0, {cap}]",
            perturbed[j]
        )));
    }
    let (opt, _) = bound_schedules(p, k - 1)?;
    let e_pert = error_sequence_dd(p, perturbed, variant);
    let e_opt = error_sequence_dd(p, &opt, variant);
    let gap = e_pert[k].sub(e_opt[k]).to_f64();
    let b1 = 1.0 + p.beta;
    let diff = perturbed[k - 1] - opt[k - 1];
    let lower_bound = b1 * b1 * p.nu * p.nu * diff * diff;
    let slack = 64.0 * f64::EPSILON * e_opt[k].to_f64();
    Ok(GapCheck {
        gap,
        lower_bound,
        slack,
    })
}

/// Distance between two doubles in units in the last place of the larger.
pub fn ulp_distance(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let scale = a.abs().max(b.abs());
    let ulp = f64::from_bits(scale.to_bits() + 1) - scale;
    (a - b).abs() / ulp
}
