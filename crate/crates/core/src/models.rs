//! Concrete flow maps: identity, a two-site averaging map, first-order upwind
//! advection and an arsenate advection/adsorption model integrated on a fine
//! characteristic grid.

use serde::{Deserialize, Serialize};

use crate::densities::{Interval, SparseDensity};
use crate::error::{CpaError, Result};
use crate::partition::{CellPartition, DomainBox, RectilinearPartition};
use crate::translator::FlowMap;

/// `h(v) = v` with `U = {0}`.
#[derive(Clone, Debug)]
pub struct IdentityFlow {
    dim: usize,
    tau: f64,
}

impl IdentityFlow {
    pub fn new(dim: usize) -> Self {
        Self { dim, tau: 1.0 }
    }
}

impl FlowMap for IdentityFlow {
    fn dim(&self) -> usize {
        self.dim
    }

    fn neighborhood(&self) -> Interval {
        Interval::single(0)
    }

    fn time_step(&self) -> f64 {
        self.tau
    }

    fn apply(&self, window: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&window[..self.dim]);
        Ok(())
    }
}

/// `h(a, b) = (a + b) / 3.75` on `[0, 1]` with `U = {0, 1}`.
#[derive(Clone, Debug, Default)]
pub struct AveragingFlow;

impl AveragingFlow {
    pub const DIVISOR: f64 = 3.75;

    /// The partition `[0, 0.183, 0.31, 0.4, 0.7, 1]` used with this map.
    pub fn partition() -> RectilinearPartition {
        RectilinearPartition::new(vec![vec![0.0, 0.183, 0.31, 0.4, 0.7, 1.0]])
            .expect("static breakpoints are valid")
    }

    pub fn eval(a: f64, b: f64) -> f64 {
        (a + b) / Self::DIVISOR
    }
}

impl FlowMap for AveragingFlow {
    fn dim(&self) -> usize {
        1
    }

    fn neighborhood(&self) -> Interval {
        Interval { lo: 0, hi: 1 }
    }

    fn time_step(&self) -> f64 {
        1.0
    }

    fn apply(&self, window: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = Self::eval(window[0], window[1]);
        Ok(())
    }
}

/// First-order upwind scheme for `u_t + c u_x = 0`.
#[derive(Clone, Debug)]
pub struct LinearAdvection {
    speed: f64,
    dx: f64,
    tau: f64,
}

impl LinearAdvection {
    pub fn new(speed: f64, dx: f64, tau: f64) -> Result<Self> {
        if !(dx > 0.0 && tau > 0.0 && speed.is_finite()) {
            return Err(CpaError::InvalidParameters(format!(
                "advection needs dx > 0, tau > 0 and finite speed (dx={dx}, tau={tau}, c={speed})"
            )));
        }
        if speed.abs() * tau > dx * (1.0 + 1e-12) {
            return Err(CpaError::InvalidParameters(format!(
                "upwind step violates |c| tau <= dx: |{speed}| * {tau} > {dx}"
            )));
        }
        Ok(Self { speed, dx, tau })
    }

    fn courant(&self) -> f64 {
        (self.speed.abs() * self.tau / self.dx).min(1.0)
    }
}

impl FlowMap for LinearAdvection {
    fn dim(&self) -> usize {
        1
    }

    fn neighborhood(&self) -> Interval {
        if self.speed >= 0.0 {
            Interval { lo: -1, hi: 0 }
        } else {
            Interval { lo: 0, hi: 1 }
        }
    }

    fn time_step(&self) -> f64 {
        self.tau
    }

    fn apply(&self, window: &[f64], out: &mut [f64]) -> Result<()> {
        let nu = self.courant();
        out[0] = if self.speed >= 0.0 {
            (1.0 - nu) * window[1] + nu * window[0]
        } else {
            (1.0 - nu) * window[0] + nu * window[1]
        };
        Ok(())
    }
}

/// One-step method for the fine reaction integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// Parameters of the arsenate transport and Langmuir adsorption model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArsenateParams {
    /// Flow speed (m/min).
    pub v: f64,
    /// Hydraulic ratio (l/m²).
    pub r_h: f64,
    /// Adsorption rate (l/(mg·min)).
    pub k1: f64,
    /// Wall capacity (mg/m²).
    pub s_max: f64,
    /// Equilibrium constant (mg/l).
    pub k_eq: f64,
    /// Film transfer rate (l/(m²·min)).
    pub k_f: f64,
    /// Report location spacing (m).
    pub dx: f64,
    /// Coarse time step (min).
    pub tau: f64,
    /// Fine grid spacing (m).
    pub dx_fine: f64,
    /// Fine time step (min).
    pub dt_fine: f64,
    pub integrator: Integrator,
}

impl Default for ArsenateParams {
    fn default() -> Self {
        Self {
            v: 10.0,
            r_h: 50.0,
            k1: 0.2,
            s_max: 100.0,
            k_eq: 0.0537,
            k_f: 2.4,
            dx: 100.0,
            tau: 10.0,
            dx_fine: 1.0,
            dt_fine: 0.1,
            integrator: Integrator::Rk4,
        }
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let q = num / den;
    let n = q.round();
    (n >= 1.0 && (q - n).abs() < 1e-9 * n.max(1.0)).then_some(n as usize)
}

impl ArsenateParams {
    /// Validates the grid relations and returns the number of fine substeps
    /// per coarse step.
    pub fn validate(&self) -> Result<usize> {
        let positive = [
            ("v", self.v),
            ("r_h", self.r_h),
            ("k1", self.k1),
            ("s_max", self.s_max),
            ("k_f", self.k_f),
            ("dx", self.dx),
            ("tau", self.tau),
            ("dx_fine", self.dx_fine),
            ("dt_fine", self.dt_fine),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(CpaError::InvalidParameters(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.k_eq.is_finite() && self.k_eq >= 0.0) {
            return Err(CpaError::InvalidParameters(format!("k_eq must be nonnegative, got {}", self.k_eq)));
        }
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        if !rel(self.tau, self.dx / self.v) {
            return Err(CpaError::InvalidParameters(format!(
                "tau = {} must equal dx / v = {}",
                self.tau,
                self.dx / self.v
            )));
        }
        if !rel(self.dx_fine, self.v * self.dt_fine) {
            return Err(CpaError::InvalidParameters(format!(
                "dx_fine = {} must equal v * dt_fine = {}",
                self.dx_fine,
                self.v * self.dt_fine
            )));
        }
        let steps = integer_ratio(self.tau, self.dt_fine).ok_or_else(|| {
            CpaError::InvalidParameters(format!("dt_fine = {} does not divide tau = {}", self.dt_fine, self.tau))
        })?;
        integer_ratio(self.dx, self.dx_fine).ok_or_else(|| {
            CpaError::InvalidParameters(format!("dx_fine = {} does not divide dx = {}", self.dx_fine, self.dx))
        })?;
        Ok(steps)
    }

    /// The state box `D ∈ [0, 1]`, `A ∈ [0, s_max]`.
    pub fn domain(&self) -> DomainBox {
        DomainBox::new(vec![0.0, 0.0], vec![1.0, self.s_max]).expect("s_max validated positive")
    }

    /// Adsorbed concentration at rest with dissolved concentration `d`.
    pub fn equilibrium_adsorbed(&self, d: f64) -> f64 {
        self.s_max * d / (d + self.k_eq)
    }

    /// Source density at the tank (site 1): the given `D` cells with equal
    /// weight, each paired with the `A` cell that holds the equilibrium value
    /// of the cell's midpoint.
    pub fn tank_source(&self, partition: &dyn CellPartition, d_cells: &[usize]) -> Result<SparseDensity> {
        if partition.dim() != 2 {
            return Err(CpaError::InvalidPartition(format!(
                "the arsenate state is two-dimensional, partition has {} dimensions",
                partition.dim()
            )));
        }
        if d_cells.is_empty() {
            return Err(CpaError::InvalidParameters("tank source needs at least one D cell".into()));
        }
        let upper = partition.domain().upper()[1];
        let mut weights = Vec::with_capacity(d_cells.len());
        for &k in d_cells {
            if k >= partition.cells_per_dim()[0] {
                return Err(CpaError::InvalidSymbol {
                    symbol: k,
                    count: partition.cells_per_dim()[0],
                });
            }
            let d = 0.5 * (partition.breakpoint(0, k) + partition.breakpoint(0, k + 1));
            let a = self.equilibrium_adsorbed(d).min(upper);
            let s = partition.symbol_of(&[k, partition.locate(1, a)])?;
            weights.push((s.index() as u64, 1.0 / d_cells.len() as f64));
        }
        SparseDensity::from_weights(Interval::single(1), partition.num_symbols(), weights)?.normalize()
    }

    /// Adsorption rate `dA/dt`; the dissolved phase changes at `-rate / r_h`.
    #[inline(always)]
    pub fn reaction_rate(&self, d: f64, a: f64) -> f64 {
        let free = self.s_max - a;
        (d * free - self.k_eq * a) / (1.0 / self.k1 + free / self.k_f)
    }
}

/// Reaction coefficients hoisted out of the inner loops.
#[derive(Clone, Copy, Debug)]
struct Kinetics {
    s_max: f64,
    k_eq: f64,
    inv_k1: f64,
    inv_kf: f64,
    inv_rh: f64,
    dt: f64,
    integrator: Integrator,
}

impl Kinetics {
    fn new(p: &ArsenateParams) -> Self {
        Self {
            s_max: p.s_max,
            k_eq: p.k_eq,
            inv_k1: 1.0 / p.k1,
            inv_kf: 1.0 / p.k_f,
            inv_rh: 1.0 / p.r_h,
            dt: p.dt_fine,
            integrator: p.integrator,
        }
    }

    #[inline(always)]
    fn rate(&self, d: f64, a: f64) -> f64 {
        let free = self.s_max - a;
        (d * free - self.k_eq * a) / (self.inv_k1 + free * self.inv_kf)
    }

    /// Advances every node of `d`, `a` by one fine step.
    fn react(&self, d: &mut [f64], a: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required CPU feature was detected at runtime.
                return unsafe { self.react_avx512(d, a) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { self.react_avx2(d, a) };
            }
        }
        self.react_portable(d, a)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn react_avx512(&self, d: &mut [f64], a: &mut [f64]) {
        self.react_portable(d, a)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn react_avx2(&self, d: &mut [f64], a: &mut [f64]) {
        self.react_portable(d, a)
    }

    #[inline(always)]
    fn react_portable(&self, d: &mut [f64], a: &mut [f64]) {
        let dt = self.dt;
        let h = 0.5 * dt;
        let c = self.inv_rh;
        let n = d.len().min(a.len());
        let (d, a) = (&mut d[..n], &mut a[..n]);
        match self.integrator {
            Integrator::Rk4 => {
                for j in 0..n {
                    let (d0, a0) = (d[j], a[j]);
                    let k1 = self.rate(d0, a0);
                    let k2 = self.rate(d0 - h * c * k1, a0 + h * k1);
                    let k3 = self.rate(d0 - h * c * k2, a0 + h * k2);
                    let k4 = self.rate(d0 - dt * c * k3, a0 + dt * k3);
                    let incr = dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    a[j] = a0 + incr;
                    d[j] = d0 - c * incr;
                }
            }
            Integrator::Euler => {
                for j in 0..n {
                    let incr = dt * self.rate(d[j], a[j]);
                    a[j] += incr;
                    d[j] -= c * incr;
                }
            }
        }
    }
}

fn all_finite(d: &[f64], a: &[f64]) -> bool {
    d.iter().chain(a).all(|x| x.is_finite())
}

/// The arsenate model as a coarse flow map with `U = {-1, 0}`.
///
/// Over one coarse step the segment between the upstream and the local report
/// location is resolved on the fine grid. Initial values on the segment are
/// interpolated linearly between the two report locations, `D` moves one fine
/// node per fine step, and the reaction is integrated at every node. The
/// upstream value is held constant and injected at the first node.
#[derive(Clone, Debug)]
pub struct ArsenateFlow {
    params: ArsenateParams,
    kinetics: Kinetics,
    substeps: usize,
}

impl ArsenateFlow {
    pub fn new(params: ArsenateParams) -> Result<Self> {
        let substeps = params.validate()?;
        if integer_ratio(params.dx, params.dx_fine) != Some(substeps) {
            return Err(CpaError::InvalidParameters(
                "fine grid must hold one node per fine time step".into(),
            ));
        }
        let kinetics = Kinetics::new(&params);
        Ok(Self {
            params,
            kinetics,
            substeps,
        })
    }

    pub fn params(&self) -> &ArsenateParams {
        &self.params
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    fn initial_segment(&self, up: [f64; 2], local: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let n = self.substeps;
        let lerp = |x0: f64, x1: f64, j: usize| x0 + (x1 - x0) * (j as f64 / n as f64);
        let d = (0..=n).map(|j| lerp(up[0], local[0], j)).collect();
        let a = (0..=n).map(|j| lerp(up[1], local[1], j)).collect();
        (d, a)
    }

    /// Evolves the whole segment for one coarse step and returns the final
    /// `(D, A)` profiles from the upstream to the local node.
    pub fn segment_profile(&self, up: [f64; 2], local: [f64; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut d, mut a) = self.initial_segment(up, local);
        for k in 1..=self.substeps {
            d.copy_within(0..self.substeps, 1);
            d[0] = up[0];
            a[0] = up[1];
            self.kinetics.react(&mut d[1..], &mut a[1..]);
            if !all_finite(&d, &a) {
                return Err(CpaError::ModelInstability { substep: k });
            }
        }
        Ok((d, a))
    }

    /// One coarse step at the local report location.
    ///
    /// Only nodes whose values can still reach the local node before the end
    /// of the step are updated; the result equals the last node of
    /// [`segment_profile`](Self::segment_profile).
    pub fn step(&self, up: [f64; 2], local: [f64; 2]) -> Result<[f64; 2]> {
        let (mut d, mut a) = self.initial_segment(up, local);
        let n = self.substeps;
        for k in 1..=n {
            d.copy_within(k - 1..n, k);
            self.kinetics.react(&mut d[k..], &mut a[k..]);
        }
        if !(d[n].is_finite() && a[n].is_finite()) {
            // Non-finite values travel with the flow, so a full rerun locates the substep.
            self.segment_profile(up, local)?;
            return Err(CpaError::ModelInstability { substep: n });
        }
        Ok([d[n], a[n]])
    }
}

impl FlowMap for ArsenateFlow {
    fn dim(&self) -> usize {
        2
    }

    fn neighborhood(&self) -> Interval {
        Interval { lo: -1, hi: 0 }
    }

    fn time_step(&self) -> f64 {
        self.params.tau
    }

    fn apply(&self, window: &[f64], out: &mut [f64]) -> Result<()> {
        let r = self.step([window[0], window[1]], [window[2], window[3]])?;
        out.copy_from_slice(&r);
        Ok(())
    }
}

/// A pipe of `sites` report locations resolved entirely on the fine grid.
///
/// The first report location is the source; its value is injected at the
/// first fine node every fine step and held for a whole coarse step.
#[derive(Clone, Debug)]
pub struct ArsenatePipe {
    kinetics: Kinetics,
    substeps: usize,
    sites: usize,
}

/// Fine-grid state of an [`ArsenatePipe`].
#[derive(Clone, Debug, PartialEq)]
pub struct PipeState {
    pub d: Vec<f64>,
    pub a: Vec<f64>,
}

impl ArsenatePipe {
    pub fn new(params: &ArsenateParams, sites: usize) -> Result<Self> {
        let flow = ArsenateFlow::new(params.clone())?;
        if sites < 2 {
            return Err(CpaError::InvalidParameters("a pipe needs at least two report locations".into()));
        }
        Ok(Self {
            kinetics: flow.kinetics,
            substeps: flow.substeps,
            sites,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    fn nodes(&self) -> usize {
        (self.sites - 1) * self.substeps + 1
    }

    /// Fine state with report values interpolated linearly in between.
    pub fn initial_state(&self, report: &[[f64; 2]]) -> PipeState {
        assert_eq!(report.len(), self.sites);
        let n = self.substeps;
        let mut d = Vec::with_capacity(self.nodes());
        let mut a = Vec::with_capacity(self.nodes());
        for seg in report.windows(2) {
            for j in 0..n {
                let t = j as f64 / n as f64;
                d.push(seg[0][0] + (seg[1][0] - seg[0][0]) * t);
                a.push(seg[0][1] + (seg[1][1] - seg[0][1]) * t);
            }
        }
        d.push(report[self.sites - 1][0]);
        a.push(report[self.sites - 1][1]);
        PipeState { d, a }
    }

    /// One coarse step with the source held at `source`.
    pub fn advance(&self, state: &mut PipeState, source: [f64; 2]) -> Result<()> {
        let last = self.nodes() - 1;
        for k in 1..=self.substeps {
            state.d.copy_within(0..last, 1);
            state.d[0] = source[0];
            state.a[0] = source[1];
            self.kinetics.react(&mut state.d[1..], &mut state.a[1..]);
            if !all_finite(&state.d, &state.a) {
                return Err(CpaError::ModelInstability { substep: k });
            }
        }
        Ok(())
    }

    /// Values at the report locations, source first.
    pub fn report(&self, state: &PipeState) -> Vec<[f64; 2]> {
        (0..self.sites)
            .map(|i| {
                let j = i * self.substeps;
                [state.d[j], state.a[j]]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averaging_examples() {
        assert!((AveragingFlow::eval(0.7, 0.8) - 0.4).abs() < 1e-15);
        assert!((AveragingFlow::eval(0.8, 0.3625) - 0.31).abs() < 1e-15);
        assert_eq!(AveragingFlow::eval(0.0, 0.0), 0.0);
    }

    #[test]
    fn advection_limits() {
        let mut out = [0.0];
        LinearAdvection::new(0.0, 1.0, 1.0).unwrap().apply(&[0.3, 0.7], &mut out).unwrap();
        assert_eq!(out[0], 0.7);
        LinearAdvection::new(2.0, 1.0, 0.5).unwrap().apply(&[0.3, 0.7], &mut out).unwrap();
        assert_eq!(out[0], 0.3);
        LinearAdvection::new(0.7, 1.0, 1.0).unwrap().apply(&[0.4, 0.4], &mut out).unwrap();
        assert!((out[0] - 0.4).abs() < 1e-15);
        assert!(LinearAdvection::new(2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn default_parameters_validate() {
        assert_eq!(ArsenateParams::default().validate().unwrap(), 100);
        let bad = ArsenateParams {
            tau: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ArsenateParams {
            dt_fine: 0.3,
            dx_fine: 3.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_pipe_is_a_fixed_point() {
        let flow = ArsenateFlow::new(ArsenateParams::default()).unwrap();
        assert_eq!(flow.step([0.0, 0.0], [0.0, 0.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn equilibrium_has_no_reaction() {
        let p = ArsenateParams::default();
        for d in [0.1, 0.5, 0.9] {
            let a = d * p.s_max / (d + p.k_eq);
            assert!(p.reaction_rate(d, a).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_step_matches_full_profile() {
        let flow = ArsenateFlow::new(ArsenateParams::default()).unwrap();
        for (up, loc) in [([0.3, 90.0], [0.5, 85.0]), ([0.9, 10.0], [0.1, 60.0])] {
            let (d, a) = flow.segment_profile(up, loc).unwrap();
            let fast = flow.step(up, loc).unwrap();
            assert_eq!(fast, [d[100], a[100]]);
        }
    }

    #[test]
    fn pipe_reports_coarse_locations() {
        let p = ArsenateParams::default();
        let pipe = ArsenatePipe::new(&p, 3).unwrap();
        let s = pipe.initial_state(&[[0.2, 1.0], [0.4, 2.0], [0.6, 3.0]]);
        assert_eq!(s.d.len(), 201);
        assert_eq!(pipe.report(&s), vec![[0.2, 1.0], [0.4, 2.0], [0.6, 3.0]]);
    }

    #[test]
    fn instability_names_the_substep() {
        let p = ArsenateParams {
            k_f: 1e-300,
            ..Default::default()
        };
        let flow = ArsenateFlow::new(p).unwrap();
        let err = flow.step([f64::MAX, 0.0], [f64::MAX, 0.0]).unwrap_err();
        assert!(matches!(err, CpaError::ModelInstability { substep: 1 }));
    }
}
