//! Carleman weight ingredients: the singular time factor `ξ`, the spatial
//! profiles `η₁`, `η₂` glued in `C²` on the inner control interval, the
//! cut-off `χ`, and the composite singular (`φ`) and regular (`Φ`) weights.
//!
//! Exponentials such as `e^{2sφ}` leave the `f64` range for moderate `s`, so
//! every evaluator also exposes the logarithm `2sφ` (resp. `2sΦ`).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// `self ⋐ outer`: closure strictly inside.
    pub fn compactly_inside(&self, outer: &Interval) -> bool {
        outer.lo < self.lo && self.hi < outer.hi && self.lo < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Control interval `ω` with the nested `ω⁽²⁾ ⋐ ω⁽¹⁾ ⋐ ω ⊂ (0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRegion {
    pub omega: Interval,
    pub omega1: Interval,
    pub omega2: Interval,
}

impl Default for ControlRegion {
    fn default() -> Self {
        Self {
            omega: Interval::new(0.4, 0.8),
            omega1: Interval::new(0.45, 0.75),
            omega2: Interval::new(0.5, 0.7),
        }
    }
}

impl ControlRegion {
    /// Every violated nesting constraint, in order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let o = self.omega;
        if !(0.0 < o.lo && o.lo < o.hi && o.hi < 1.0) {
            out.push(format!("omega = ({}, {}) must satisfy 0 < x1 < x2 < 1", o.lo, o.hi));
        }
        if !self.omega1.compactly_inside(&o) {
            out.push(format!(
                "omega1 = ({}, {}) must be compactly contained in omega = ({}, {})",
                self.omega1.lo, self.omega1.hi, o.lo, o.hi
            ));
        }
        if !self.omega2.compactly_inside(&self.omega1) {
            out.push(format!(
                "omega2 = ({}, {}) must be compactly contained in omega1 = ({}, {})",
                self.omega2.lo, self.omega2.hi, self.omega1.lo, self.omega1.hi
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Quintic on `[a, b]` interpolating value, first and second derivative at
/// both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quintic {
    a: f64,
    len: f64,
    c: [f64; 6],
}

impl Quintic {
    pub fn hermite(a: f64, b: f64, left: [f64; 3], right: [f64; 3]) -> Self {
        let len = b - a;
        let (f0, d0, s0) = (left[0], left[1] * len, left[2] * len * len);
        let (f1, d1, s1) = (right[0], right[1] * len, right[2] * len * len);
        let c0 = f0;
        let c1 = d0;
        let c2 = 0.5 * s0;
        let p = f1 - c0 - c1 - c2;
        let q = d1 - c1 - 2.0 * c2;
        let r = s1 - 2.0 * c2;
        let c3 = 10.0 * p - 4.0 * q + 0.5 * r;
        let c4 = -15.0 * p + 7.0 * q - r;
        let c5 = 6.0 * p - 3.0 * q + 0.5 * r;
        Self {
            a,
            len,
            c: [c0, c1, c2, c3, c4, c5],
        }
    }

    /// Value, first and second derivative at `x`.
    pub fn eval(&self, x: f64) -> [f64; 3] {
        let u = (x - self.a) / self.len;
        let c = &self.c;
        let v = c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * (c[4] + u * c[5]))));
        let d = c[1] + u * (2.0 * c[2] + u * (3.0 * c[3] + u * (4.0 * c[4] + u * 5.0 * c[5])));
        let s = 2.0 * c[2] + u * (6.0 * c[3] + u * (12.0 * c[4] + u * 20.0 * c[5]));
        [v, d / self.len, s / (self.len * self.len)]
    }

    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn end(&self) -> f64 {
        self.a + self.len
    }
}

/// `C²` cut-off: `1` on `(0, x₁⁽²⁾)`, `0` on `(x₂⁽²⁾, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutOff {
    ramp: Quintic,
}

impl CutOff {
    pub fn new(inner: Interval) -> Self {
        Self {
            ramp: Quintic::hermite(inner.lo, inner.hi, [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
        }
    }

    pub fn eval(&self, x: f64) -> [f64; 3] {
        if x <= self.ramp.start() {
            [1.0, 0.0, 0.0]
        } else if x >= self.ramp.end() {
            [0.0, 0.0, 0.0]
        } else {
            self.ramp.eval(x)
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x)[0]
    }
}

/// `η₁(x) = (x+ε)^β − ε^β` with its first two derivatives.
pub fn eta1(x: f64, beta: f64, eps: f64) -> [f64; 3] {
    let y = x + eps;
    [
        y.powf(beta) - eps.powf(beta),
        beta * y.powf(beta - 1.0),
        beta * (beta - 1.0) * y.powf(beta - 2.0),
    ]
}

/// Piecewise `C²` profile: quintic on `[0, x₁⁽²⁾]`, `η₁` on `ω⁽²⁾`, and two
/// quintics on `[x₂⁽²⁾, 1]` meeting at the single interior maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Eta2 {
    beta: f64,
    eps: f64,
    inner: Interval,
    left: Quintic,
    rise: Quintic,
    fall: Quintic,
}

impl Eta2 {
    pub fn build(region: &ControlRegion, beta: f64, eps: f64) -> Result<Self> {
        region.validate()?;
        let inner = region.omega2;
        let peak = 0.5 * (region.omega2.hi + region.omega1.hi);
        let at_lo = eta1(inner.lo, beta, eps);
        let at_hi = eta1(inner.hi, beta, eps);
        let secant = at_lo[0] / inner.lo;

        let left = [1.0, 0.5, 1.5, 0.25, 2.0]
            .iter()
            .map(|f| Quintic::hermite(0.0, inner.lo, [0.0, f * secant, 0.0], at_lo))
            .find(|q| strictly_monotone(q, 1.0) && q.eval(inner.lo)[0] > 0.0)
            .ok_or_else(|| {
                Error::Construction(format!(
                    "no increasing C² link from 0 to x1^(2) = {} (beta = {beta}, eps = {eps})",
                    inner.lo
                ))
            })?;

        let rise_len = peak - inner.hi;
        let fall_len = 1.0 - peak;
        for theta in [0.5, 0.4, 0.6, 0.3, 0.7] {
            let height = at_hi[0] + theta * at_hi[1] * rise_len;
            for kc in [1.0, 2.0, 0.5, 4.0] {
                let curvature = kc * (at_hi[1] / rise_len).max(height / (fall_len * fall_len));
                for dc in [1.0, 1.5, 2.0, 0.75] {
                    let end_slope = dc * height / fall_len;
                    let rise = Quintic::hermite(inner.hi, peak, at_hi, [height, 0.0, -curvature]);
                    let fall = Quintic::hermite(peak, 1.0, [height, 0.0, -curvature], [0.0, -end_slope, 0.0]);
                    if strictly_monotone(&rise, 1.0) && strictly_monotone(&fall, -1.0) {
                        return Ok(Self {
                            beta,
                            eps,
                            inner,
                            left,
                            rise,
                            fall,
                        });
                    }
                }
            }
        }
        Err(Error::Construction(format!(
            "cannot build a positive eta2 with a single maximum in ({}, {})",
            inner.hi, region.omega1.hi
        )))
    }

    pub fn eval(&self, x: f64) -> [f64; 3] {
        if x <= self.inner.lo {
            self.left.eval(x.max(0.0))
        } else if x < self.inner.hi {
            eta1(x, self.beta, self.eps)
        } else if x <= self.rise.end() {
            self.rise.eval(x)
        } else {
            self.fall.eval(x.min(1.0))
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x)[0]
    }

    /// Location of the interior maximum.
    pub fn peak(&self) -> f64 {
        self.rise.end()
    }
}

/// Sign-definite derivative over the open piece, checked on a fine grid
/// including the endpoints where the derivative is allowed to vanish.
fn strictly_monotone(q: &Quintic, sign: f64) -> bool {
    let samples = 2000;
    (1..samples).all(|i| {
        let x = q.start() + (q.end() - q.start()) * i as f64 / samples as f64;
        let [v, d, _] = q.eval(x);
        sign * d > 0.0 && v > 0.0
    })
}

/// `β₀(α) = max{0, 3−2α, 1−α/2, (14−9α+√(17α²−44α+36))/8}` for `α ∈ (1,2)`.
pub fn beta0(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(invalid("alpha", format!("beta0 is defined for alpha in (1, 2), got {alpha}")));
    }
    Ok(beta0_formula(alpha))
}

pub(crate) fn beta0_formula(alpha: f64) -> f64 {
    let root = (17.0 * alpha * alpha - 44.0 * alpha + 36.0).sqrt();
    [0.0, 3.0 - 2.0 * alpha, 1.0 - 0.5 * alpha, (14.0 - 9.0 * alpha + root) / 8.0]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Outcome of the `β` admissibility test and of the coercivity condition
/// `ε₁C⁽¹⁾ + C⁽¹⁾C⁽²⁾/(4ε₁) < (α+2β−2)β` with `ε₁ = 1/|3−2α−β|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaAdmissibility {
    pub admissible: bool,
    /// Open/closed bounds `(lower, upper]` of the admissible range.
    pub lower: f64,
    pub upper: f64,
    /// `(lhs, rhs)` of the coercivity condition; `None` at `α = 1` or where
    /// `3−2α−β = 0`.
    pub coercivity: Option<(f64, f64)>,
    pub coercivity_holds: bool,
}

pub fn beta_admissible(alpha: f64, beta: f64) -> BetaAdmissibility {
    const TOL: f64 = 1e-12;
    let upper = 2.0 - alpha;
    let (admissible, lower) = if alpha > 0.0 && alpha < 1.0 {
        (beta > 1.0 && beta <= upper + TOL, 1.0)
    } else if (alpha - 1.0).abs() <= TOL {
        ((beta - 1.0).abs() <= TOL, 1.0)
    } else if alpha > 1.0 && alpha < 2.0 {
        let b0 = beta0_formula(alpha);
        (beta > b0 && beta <= upper + TOL, b0)
    } else {
        (false, f64::NAN)
    };

    let gap = 3.0 - 2.0 * alpha - beta;
    let c1 = beta * (alpha + beta - 1.0) * (2.0 - alpha - beta);
    let rhs = (alpha + 2.0 * beta - 2.0) * beta;
    let coercivity = if (alpha - 1.0).abs() <= TOL || gap.abs() < TOL {
        None
    } else {
        let eps1 = 1.0 / gap.abs();
        let c2 = 4.0 / (gap * gap);
        Some((eps1 * c1 + c1 * c2 / (4.0 * eps1), rhs))
    };
    let coercivity_holds = match coercivity {
        Some((l, r)) => l < r,
        None => rhs > 0.0 || (alpha - 1.0).abs() <= TOL,
    };
    BetaAdmissibility {
        admissible,
        lower,
        upper,
        coercivity,
        coercivity_holds,
    }
}

/// `ξ(t) = 1/(t²(T−t)²)` on the open interval `(0, T)`.
pub fn xi(t: f64, horizon: f64) -> Result<f64> {
    if !(t > 0.0 && t < horizon) {
        return Err(Error::Singularity { t, horizon });
    }
    Ok(1.0 / (t * t * (horizon - t) * (horizon - t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Singular,
    Regular,
}

/// Parameters of a weight system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub beta: f64,
    pub lambda: f64,
    pub s: f64,
    pub eps: f64,
    pub horizon: f64,
    /// `M = margin · max{‖η₁‖, ‖η₂‖}`.
    pub m_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSystem {
    params: WeightParams,
    kind: WeightKind,
    region: ControlRegion,
    chi: CutOff,
    eta2: Eta2,
    big_m: f64,
}

impl WeightSystem {
    pub fn new(params: WeightParams, region: ControlRegion, kind: WeightKind) -> Result<Self> {
        region.validate()?;
        if !(params.lambda > 0.0) {
            return Err(invalid("lambda", format!("must be positive, got {}", params.lambda)));
        }
        if !(params.s > 0.0) {
            return Err(invalid("s", format!("must be positive, got {}", params.s)));
        }
        if !(params.beta > 0.0) {
            return Err(invalid("beta", format!("must be positive, got {}", params.beta)));
        }
        if !(params.m_margin >= 1.0) {
            return Err(invalid("m_margin", "must be at least 1"));
        }
        let eta2 = Eta2::build(&region, params.beta, params.eps)?;
        let samples = 4000;
        let sup = (0..=samples)
            .map(|i| {
                let x = i as f64 / samples as f64;
                eta1(x, params.beta, params.eps)[0].abs().max(eta2.value(x).abs())
            })
            .fold(0.0f64, f64::max);
        let system = Self {
            params,
            kind,
            region,
            chi: CutOff::new(region.omega2),
            eta2,
            big_m: params.m_margin * sup,
        };
        Ok(system)
    }

    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn region(&self) -> &ControlRegion {
        &self.region
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    pub fn chi(&self) -> &CutOff {
        &self.chi
    }

    pub fn eta2(&self) -> &Eta2 {
        &self.eta2
    }

    pub fn eta1(&self, x: f64) -> f64 {
        eta1(x, self.params.beta, self.params.eps)[0]
    }

    /// `(ψ₁(x), ψ₂(x))`; both negative.
    pub fn psi_pair(&self, x: f64) -> (f64, f64) {
        let l = self.params.lambda;
        let cap = (2.0 * l * self.big_m).exp();
        ((l * self.eta1(x)).exp() - cap, (l * self.eta2.value(x)).exp() - cap)
    }

    /// `χψ₁ + (1−χ)ψ₂`, the spatial factor of `φ`.
    pub fn psi_composite(&self, x: f64) -> f64 {
        let (p1, p2) = self.psi_pair(x);
        let c = self.chi.value(x);
        c * p1 + (1.0 - c) * p2
    }

    /// `(φ₁, φ₂)` at an interior time.
    pub fn singular_pair(&self, x: f64, t: f64) -> Result<(f64, f64)> {
        let x_t = xi(t, self.params.horizon)?;
        let (p1, p2) = self.psi_pair(x);
        Ok((p1 * x_t, p2 * x_t))
    }

    /// `(φ, e^{2sφ})`; at `t ∈ {0, T}` the continuous extension
    /// `(−∞, 0)` is returned.
    pub fn singular_weight(&self, x: f64, t: f64) -> (f64, f64) {
        match xi(t, self.params.horizon) {
            Ok(x_t) => {
                let phi = self.psi_composite(x) * x_t;
                (phi, (2.0 * self.params.s * phi).exp())
            }
            Err(_) => (f64::NEG_INFINITY, 0.0),
        }
    }

    /// `ln e^{2sφ} = 2sφ`, `−∞` at the time endpoints.
    pub fn singular_log_weight(&self, x: f64, t: f64) -> f64 {
        self.singular_weight(x, t).0 * 2.0 * self.params.s
    }

    /// `(ϱ₁, ϱ₂)` with `ϱ_i = η_i − (λ−t)² + λ²`.
    pub fn rho_pair(&self, x: f64, t: f64) -> (f64, f64) {
        let l = self.params.lambda;
        let time = -(l - t) * (l - t) + l * l;
        (self.eta1(x) + time, self.eta2.value(x) + time)
    }

    /// `(Φ₁, Φ₂)`.
    pub fn regular_pair(&self, x: f64, t: f64) -> (f64, f64) {
        let l = self.params.lambda;
        let (r1, r2) = self.rho_pair(x, t);
        ((l * r1).exp(), (l * r2).exp())
    }

    /// `(Φ, e^{2sΦ})` with `Φ = χΦ₁ + (1−χ)Φ₂`.
    pub fn regular_weight(&self, x: f64, t: f64) -> (f64, f64) {
        let (a, b) = self.regular_pair(x, t);
        let c = self.chi.value(x);
        let phi = c * a + (1.0 - c) * b;
        (phi, (2.0 * self.params.s * phi).exp())
    }

    pub fn regular_log_weight(&self, x: f64, t: f64) -> f64 {
        2.0 * self.params.s * self.regular_weight(x, t).0
    }

    /// `φ` or `Φ` depending on the kind.
    pub fn phi(&self, x: f64, t: f64) -> f64 {
        match self.kind {
            WeightKind::Singular => self.singular_weight(x, t).0,
            WeightKind::Regular => self.regular_weight(x, t).0,
        }
    }

    pub fn log_weight(&self, x: f64, t: f64) -> f64 {
        2.0 * self.params.s * self.phi(x, t)
    }
}
