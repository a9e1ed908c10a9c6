//! Run configuration: a TOML file with one section per concern. Every key
//! has a default, unknown keys are rejected, and all cross-field
//! constraints are collected by [`RunConfig::violations`] before any
//! computation starts.

use serde::{Deserialize, Serialize};

use crate::carleman::EstimateKind;
use crate::control::HumConfig;
use crate::error::{Error, Result};
use crate::inverse::SourceProfile;
use crate::solver::ConvectionMode;
use crate::study::{Setup, WeightChoice};
use crate::tree::DEFAULT_DEPTH_CAP;
use crate::weights::{beta_admissible, ControlRegion, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    Check,
    NullControl,
    InverseSource,
    Hardy,
    Observability,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Check => "check",
            Task::NullControl => "null-control",
            Task::InverseSource => "inverse-source",
            Task::Hardy => "hardy",
            Task::Observability => "observability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    pub problem: ProblemSection,
    pub discretization: DiscretizationSection,
    pub weights: WeightsSection,
    pub simulate: SimulateSection,
    pub check: CheckSection,
    pub null_control: NullControlSection,
    pub inverse_source: InverseSection,
    pub hardy: HardySection,
    pub observability: ObservabilitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: "out".into(),
            problem: ProblemSection::default(),
            discretization: DiscretizationSection::default(),
            weights: WeightsSection::default(),
            simulate: SimulateSection::default(),
            check: CheckSection::default(),
            null_control: NullControlSection::default(),
            inverse_source: InverseSection::default(),
            hardy: HardySection::default(),
            observability: ObservabilitySection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub alpha: f64,
    pub eps: f64,
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub convection: ConvectionMode,
    pub omega: [f64; 2],
    pub omega1: [f64; 2],
    pub omega2: [f64; 2],
}

impl Default for ProblemSection {
    fn default() -> Self {
        let r = ControlRegion::default();
        Self {
            alpha: 0.5,
            eps: 0.0,
            horizon: 1.0,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            convection: ConvectionMode::Plain,
            omega: [r.omega.lo, r.omega.hi],
            omega1: [r.omega1.lo, r.omega1.hi],
            omega2: [r.omega2.lo, r.omega2.hi],
        }
    }
}

impl ProblemSection {
    pub fn region(&self) -> ControlRegion {
        ControlRegion {
            omega: Interval::new(self.omega[0], self.omega[1]),
            omega1: Interval::new(self.omega1[0], self.omega1[1]),
            omega2: Interval::new(self.omega2[0], self.omega2[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSection {
    pub cells: usize,
    pub depth: usize,
    pub cap: usize,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        Self {
            cells: 32,
            depth: 6,
            cap: DEFAULT_DEPTH_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    /// Spatial exponent; absent means automatic.
    pub beta: Option<f64>,
    pub lambda: Vec<f64>,
    pub s: Vec<f64>,
    pub m_margin: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self {
            beta: None,
            lambda: vec![2.0],
            s: (0..9).map(|i| f64::from(1u32 << i)).collect(),
            m_margin: 1.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub draws: usize,
    /// Decreasing list ending at 0 for the energy and convergence tables.
    pub eps_list: Vec<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            draws: 20,
            eps_list: vec![0.1, 0.05, 0.01, 0.005, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub estimate: EstimateKind,
    pub draws: usize,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            estimate: EstimateKind::BackwardSingular,
            draws: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NullControlSection {
    pub tau: Vec<f64>,
    pub s: f64,
    pub lambda: f64,
    pub beta: Option<f64>,
    pub cg_tolerance: f64,
    pub max_iterations: usize,
    /// Required decay of `E‖y(T)‖²` from the uncontrolled value to the
    /// last grid point.
    pub min_decrease: f64,
    /// Allowed `max/min` of the normalized control cost over the grid.
    pub max_cost_spread: f64,
}

impl Default for NullControlSection {
    fn default() -> Self {
        let h = HumConfig::default();
        Self {
            tau: vec![1e-1, 1e-2, 1e-3, 1e-4],
            s: h.s,
            lambda: h.lambda,
            beta: None,
            cg_tolerance: h.tolerance,
            max_iterations: h.max_iterations,
            min_decrease: 1e3,
            max_cost_spread: 2.0,
        }
    }
}

impl NullControlSection {
    pub fn hum(&self, tau: f64) -> HumConfig {
        HumConfig {
            tau,
            s: self.s,
            lambda: self.lambda,
            beta: self.beta,
            max_iterations: self.max_iterations,
            tolerance: self.cg_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseSection {
    pub pairs: usize,
    pub noise: Vec<f64>,
    pub base: f64,
    pub amplitude: f64,
    pub scale: f64,
    /// Allowed factor between the noise slope and the Lipschitz maximum.
    pub slope_factor: f64,
}

impl Default for InverseSection {
    fn default() -> Self {
        Self {
            pairs: 100,
            noise: vec![1e-3, 1e-2],
            base: 1.0,
            amplitude: 0.25,
            scale: 1.0,
            slope_factor: 3.0,
        }
    }
}

impl InverseSection {
    pub fn profile(&self) -> SourceProfile {
        SourceProfile {
            base: self.base,
            modes: vec![(self.amplitude, 1, 1)],
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardySection {
    pub gamma: Vec<f64>,
    pub eps: Vec<f64>,
    pub profiles: usize,
}

impl Default for HardySection {
    fn default() -> Self {
        Self {
            gamma: vec![0.0, 0.5, 1.5, 2.0],
            eps: vec![0.0, 0.01],
            profiles: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilitySection {
    pub draws: usize,
}

impl Default for ObservabilitySection {
    fn default() -> Self {
        Self { draws: 50 }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn setup(&self) -> Setup {
        let p = &self.problem;
        let d = &self.discretization;
        Setup {
            alpha: p.alpha,
            eps: p.eps,
            horizon: p.horizon,
            a: p.a,
            b: p.b,
            c: p.c,
            convection: p.convection,
            region: p.region(),
            cells: d.cells,
            depth: d.depth,
            cap: d.cap,
        }
    }

    pub fn weight_choice(&self, lambda: f64) -> WeightChoice {
        WeightChoice {
            beta: self.weights.beta,
            lambda,
            m_margin: self.weights.m_margin,
        }
    }

    /// Every violated constraint relevant to `task`, in section order.
    pub fn violations(&self, task: Task) -> Vec<String> {
        let mut out = Vec::new();
        let p = &self.problem;
        if !(p.alpha > 0.0 && p.alpha < 2.0) {
            out.push(format!("problem.alpha must lie in (0, 2), got {}", p.alpha));
        }
        if !(p.eps >= 0.0 && p.eps < 1.0) {
            out.push(format!("problem.eps must lie in [0, 1), got {}", p.eps));
        }
        if !positive(p.horizon) {
            out.push(format!("problem.horizon must be positive, got {}", p.horizon));
        }
        for (name, v) in [("a", p.a), ("b", p.b), ("c", p.c)] {
            if !v.is_finite() {
                out.push(format!("problem.{name} must be finite"));
            }
        }
        if p.convection == ConvectionMode::Plain && p.a != 0.0 && p.alpha >= 1.0 {
            out.push(format!(
                "problem.a != 0 with plain convection needs alpha < 1, got {}; set convection = \"decomposed\"",
                p.alpha
            ));
        }
        out.extend(p.region().violations().into_iter().map(|v| format!("problem: {v}")));

        let d = &self.discretization;
        if d.cells < 4 {
            out.push(format!("discretization.cells must be at least 4, got {}", d.cells));
        }
        if d.depth < 2 {
            out.push(format!("discretization.depth must be at least 2, got {}", d.depth));
        }
        if d.depth > d.cap {
            out.push(format!(
                "discretization.depth = {} exceeds discretization.cap = {}",
                d.depth, d.cap
            ));
        }
        if d.cap > 24 {
            out.push(format!("discretization.cap must not exceed 24, got {}", d.cap));
        }

        let w = &self.weights;
        if w.lambda.is_empty() || w.lambda.iter().any(|l| !positive(*l)) {
            out.push("weights.lambda must be a non-empty list of positive values".into());
        }
        if w.s.is_empty() || w.s.iter().any(|s| !positive(*s)) || w.s.windows(2).any(|v| v[1] <= v[0]) {
            out.push("weights.s must be a non-empty, strictly increasing list of positive values".into());
        }
        if !(w.m_margin > 1.0 && w.m_margin.is_finite()) {
            out.push(format!("weights.m_margin must exceed 1, got {}", w.m_margin));
        }

        match task {
            Task::Simulate => {
                let s = &self.simulate;
                if s.draws == 0 {
                    out.push("simulate.draws must be positive".into());
                }
                if s.eps_list.len() < 2
                    || s.eps_list.last() != Some(&0.0)
                    || s.eps_list.windows(2).any(|v| v[1] >= v[0])
                    || s.eps_list.iter().any(|e| !(0.0..1.0).contains(e))
                {
                    out.push("simulate.eps_list must be strictly decreasing in [0, 1) and end at 0".into());
                }
            }
            Task::Check => {
                if self.check.draws == 0 {
                    out.push("check.draws must be positive".into());
                }
                let beta = self.weight_choice(1.0).beta_for(self.check.estimate, p.alpha);
                if !beta_admissible(p.alpha, beta).admissible {
                    out.push(format!("weights.beta = {beta} is not admissible for alpha = {}", p.alpha));
                }
                if self.check.estimate == EstimateKind::Convection && !(p.alpha < 0.5) {
                    out.push(format!("check.estimate = convection needs alpha < 1/2, got {}", p.alpha));
                }
            }
            Task::NullControl => {
                let n = &self.null_control;
                if n.tau.is_empty() || n.tau.iter().any(|t| !positive(*t)) || n.tau.windows(2).any(|v| v[1] >= v[0])
                {
                    out.push("null_control.tau must be a non-empty, strictly decreasing list of positive values".into());
                }
                let hum = n.hum(n.tau.first().copied().unwrap_or(1.0));
                out.extend(hum.violations().into_iter().map(|v| format!("null_control: {v}")));
                let beta = hum.beta_for(p.alpha);
                if !beta_admissible(p.alpha, beta).admissible {
                    out.push(format!("null_control.beta = {beta} is not admissible for alpha = {}", p.alpha));
                }
                if p.a != 0.0 && !(p.alpha < 0.5) {
                    out.push(format!("null_control with a != 0 needs alpha < 1/2, got {}", p.alpha));
                }
                if !(n.min_decrease >= 1.0) {
                    out.push(format!("null_control.min_decrease must be at least 1, got {}", n.min_decrease));
                }
                if !(n.max_cost_spread >= 1.0) {
                    out.push(format!(
                        "null_control.max_cost_spread must be at least 1, got {}",
                        n.max_cost_spread
                    ));
                }
            }
            Task::InverseSource => {
                let i = &self.inverse_source;
                if i.pairs < 2 {
                    out.push(format!("inverse_source.pairs must be at least 2, got {}", i.pairs));
                }
                if i.noise.iter().any(|d| !positive(*d)) {
                    out.push("inverse_source.noise levels must be positive".into());
                }
                if let Err(e) = i.profile().validate() {
                    out.push(format!("inverse_source: {e}"));
                }
                if !(i.slope_factor >= 1.0) {
                    out.push(format!("inverse_source.slope_factor must be at least 1, got {}", i.slope_factor));
                }
            }
            Task::Hardy => {
                let h = &self.hardy;
                if h.profiles == 0 {
                    out.push("hardy.profiles must be positive".into());
                }
                for g in &h.gamma {
                    if !(0.0..=2.0).contains(g) || (g - 1.0).abs() < 1e-12 {
                        out.push(format!("hardy.gamma values must lie in [0,1)∪(1,2], got {g}"));
                    }
                }
                if h.eps.iter().any(|e| !(0.0..1.0).contains(e)) {
                    out.push("hardy.eps values must lie in [0, 1)".into());
                }
            }
            Task::Observability => {
                if self.observability.draws == 0 {
                    out.push("observability.draws must be positive".into());
                }
            }
        }
        out
    }
}
