//! The cellular probabilistic automaton: the global function on de Bruijn
//! densities, trajectories with pruning, and the bridges to global densities.
//!
//! Sites are `I = {1, .., m}`. With `U = {-r, .., s}` and `V = {-p, .., q}` the
//! evolved sites are `Ĩ = {1+p+r, .., m-q-s}` and the boundary sites are
//! `K_l = {1, .., r}` and `K_r = {m-s+1, .., m}`. A boundary is either a fixed
//! pattern or a pair of densities redrawn independently every step.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;

use crate::debruijn::{trim_to_extendable, Glue};
use crate::densities::{DeBruijnDensity, Interval, SparseDensity};
use crate::error::{CpaError, Result};
use crate::translator::LocalRule;

/// Boundary values on `K_l` and `K_r`.
#[derive(Clone, Debug, PartialEq)]
pub enum Boundary {
    /// Fixed symbols, left to right.
    Deterministic { left: Vec<usize>, right: Vec<usize> },
    /// Densities over `K_l` and `K_r` in absolute site labels.
    WhiteNoise { left: SparseDensity, right: SparseDensity },
}

#[derive(Clone, Debug)]
struct BoundaryDensities {
    left: SparseDensity,
    right: SparseDensity,
}

/// Site geometry shared by the automaton and the reference solvers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub m: usize,
    pub u: Interval,
    pub v: Interval,
}

impl Grid {
    pub fn new(m: usize, u: Interval, v: Interval) -> Result<Self> {
        if u.lo > 0 || u.hi < 0 || v.lo > 0 || v.hi < 0 {
            return Err(CpaError::Geometry(format!("U = {u} and V = {v} must both contain 0")));
        }
        let need = 1 + v.len() as i64 - 1 + u.len() as i64 - 1;
        if m < 1 || (m as i64) < need {
            return Err(CpaError::Geometry(format!(
                "grid of {m} sites is too small: 1 + p + q + r + s = {need} must not exceed m"
            )));
        }
        Ok(Self { m, u, v })
    }

    pub fn r(&self) -> i64 {
        -self.u.lo
    }

    pub fn s(&self) -> i64 {
        self.u.hi
    }

    pub fn p(&self) -> i64 {
        -self.v.lo
    }

    pub fn q(&self) -> i64 {
        self.v.hi
    }

    /// All sites `{1, .., m}`.
    pub fn all_sites(&self) -> Interval {
        Interval {
            lo: 1,
            hi: self.m as i64,
        }
    }

    /// `Ĩ = {i_l, .., i_r}`.
    pub fn sites(&self) -> Interval {
        Interval {
            lo: 1 + self.p() + self.r(),
            hi: self.m as i64 - self.q() - self.s(),
        }
    }

    pub fn k_left(&self) -> Interval {
        Interval { lo: 1, hi: self.r() }
    }

    pub fn k_right(&self) -> Interval {
        Interval {
            lo: self.m as i64 - self.s() + 1,
            hi: self.m as i64,
        }
    }

    /// Sites `{1+r, .., m-s}` covered by the patterns of `Ĩ`.
    pub fn interior(&self) -> Interval {
        Interval {
            lo: 1 + self.r(),
            hi: self.m as i64 - self.s(),
        }
    }

    /// `Ũ(i)`, the part of `U` whose shifted patterns stay inside `Ĩ`.
    pub fn truncated_neighborhood(&self, i: i64) -> Interval {
        let sites = self.sites();
        let (r, s) = (self.r(), self.s());
        let below = if i < sites.lo + r { i - sites.lo } else { r };
        let above = if i > sites.hi - s { sites.hi - i } else { s };
        Interval { lo: -below, hi: above }
    }
}

/// A state of the automaton together with its boundary densities.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalState {
    pub left: SparseDensity,
    pub sites: DeBruijnDensity,
    pub right: SparseDensity,
}

/// Per-step bookkeeping of [`Automaton::evolve`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Largest per-site mass removed by the probability threshold.
    pub pruned: f64,
    /// Largest per-site mass removed to restore extendability.
    pub trimmed: f64,
    pub support: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<DeBruijnDensity>,
    /// One entry per step; entry `k` describes `states[k + 1]`.
    pub reports: Vec<StepReport>,
}

pub struct Automaton {
    grid: Grid,
    base: usize,
    rule: Arc<dyn LocalRule>,
    schedule: Vec<BoundaryDensities>,
}

impl std::fmt::Debug for Automaton {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Automaton")
            .field("grid", &self.grid)
            .field("base", &self.base)
            .finish_non_exhaustive()
    }
}

impl Automaton {
    pub fn new(m: usize, rule: Arc<dyn LocalRule>, boundary: Boundary) -> Result<Self> {
        Self::with_schedule(m, rule, vec![boundary])
    }

    /// Step `n` (producing state `n`) uses `schedule[min(n - 1, len - 1)]`.
    pub fn with_schedule(m: usize, rule: Arc<dyn LocalRule>, schedule: Vec<Boundary>) -> Result<Self> {
        let grid = Grid::new(m, rule.neighborhood(), rule.pattern_window())?;
        if schedule.is_empty() {
            return Err(CpaError::Geometry("boundary schedule is empty".into()));
        }
        let base = rule.base();
        let span = (grid.u.len() + grid.v.len() - 1) as i64;
        if (m as i64) < 2 * span {
            log::warn!("grid of {m} sites lets pattern windows reach both boundaries at once");
        }
        let schedule = schedule
            .into_iter()
            .map(|b| boundary_densities(&grid, base, b))
            .collect::<Result<_>>()?;
        Ok(Self {
            grid,
            base,
            rule,
            schedule,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn rule(&self) -> &dyn LocalRule {
        self.rule.as_ref()
    }

    fn boundary_at(&self, step: usize) -> &BoundaryDensities {
        &self.schedule[step.saturating_sub(1).min(self.schedule.len() - 1)]
    }

    /// The de Bruijn state whose patterns are products of independent site densities
    /// given for every site of `{1+r, .., m-s}`.
    pub fn product_state(&self, site_densities: &[SparseDensity]) -> Result<DeBruijnDensity> {
        DeBruijnDensity::from_site_product(self.grid.sites(), self.grid.v, site_densities)
    }

    /// One application of the global function, producing state `step`.
    pub fn step(&self, g: &DeBruijnDensity, step: usize) -> Result<DeBruijnDensity> {
        self.check_state(g)?;
        let bd = self.boundary_at(step);
        let sites = self.grid.sites();
        let at = sites
            .sites()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|i| self.step_site(g, bd, i, step))
            .collect::<Result<Vec<_>>>()?;
        Ok(DeBruijnDensity::new_unchecked(sites, self.grid.v, self.base, at))
    }

    fn check_state(&self, g: &DeBruijnDensity) -> Result<()> {
        if g.sites() != self.grid.sites() || g.pattern_window() != self.grid.v || g.base() != self.base {
            return Err(CpaError::WindowMismatch {
                expected: format!("sites {} with patterns {} over {} symbols", self.grid.sites(), self.grid.v, self.base),
                found: format!("sites {} with patterns {} over {} symbols", g.sites(), g.pattern_window(), g.base()),
            });
        }
        Ok(())
    }

    fn step_site(&self, g: &DeBruijnDensity, bd: &BoundaryDensities, i: i64, step: usize) -> Result<SparseDensity> {
        let grid = &self.grid;
        let base = self.base as u64;
        let sites = grid.sites();
        let ut = grid.truncated_neighborhood(i);
        let first = (i + ut.lo - sites.lo) as usize;
        let last = (i + ut.hi - sites.lo) as usize;
        let glue = Glue::new(&g.densities()[first..=last], grid.v.len(), self.base, i + ut.lo);
        let center = glue.averaged()?;
        let center_len = (grid.v.len() + ut.len() - 1) as u32;
        // Preimage sites left and right of the reconstructed part lie in K.
        let left_sites = Interval {
            lo: i - grid.r() - grid.p(),
            hi: i + ut.lo - grid.p() - 1,
        };
        let right_sites = Interval {
            lo: i + ut.hi + grid.q() + 1,
            hi: i + grid.s() + grid.q(),
        };
        let left = boundary_marginal(&bd.left, &left_sites)?;
        let right = boundary_marginal(&bd.right, &right_sites)?;
        let right_place = base.pow(right_sites.len() as u32);
        let center_place = base.pow(center_len);
        let mut out: HashMap<u64, f64> = HashMap::new();
        for &(lc, lw) in &left {
            for (&cc, &cw) in &center {
                let prefix = (lc * center_place + cc) * right_place;
                for &(rc, rw) in &right {
                    let weight = lw * cw * rw;
                    if weight == 0.0 {
                        continue;
                    }
                    let code = prefix + rc;
                    let row = self.rule.row(code)?.ok_or(CpaError::UnexploredPreimage {
                        code,
                        site: Some(i),
                        step: Some(step),
                    })?;
                    for &(psi, p) in row {
                        *out.entry(psi).or_insert(0.0) += weight * p;
                    }
                }
            }
        }
        let map: BTreeMap<u64, f64> = out.into_iter().filter(|(_, w)| *w > 0.0).collect();
        SparseDensity::from_map_unchecked(grid.v, self.base, map).normalize()
    }

    /// The trajectory `g⁰, .., gⁿ`, each step pruned at `threshold`.
    ///
    /// When pruning leaves a pattern without a consistent neighbour the
    /// pattern is dropped as well, so every state stays extendable.
    pub fn evolve(&self, g0: &DeBruijnDensity, steps: usize, threshold: f64) -> Result<Trajectory> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(CpaError::InvalidThreshold(threshold));
        }
        self.check_state(g0)?;
        let mut states = Vec::with_capacity(steps + 1);
        let mut reports = Vec::with_capacity(steps);
        states.push(g0.clone());
        for n in 1..=steps {
            let next = self.step(&states[n - 1], n)?;
            let pruned = next
                .densities()
                .iter()
                .map(|d| d.pruned_mass(threshold))
                .fold(0.0, f64::max);
            let next = next.prune(threshold)?;
            let (next, trimmed) = if self.grid.v.len() > 1 {
                trim_to_extendable(&next)?
            } else {
                (next, 0.0)
            };
            if trimmed > 0.0 {
                log::debug!("step {n}: trimmed {trimmed:.3e} of non-extendable mass");
            }
            reports.push(StepReport {
                pruned,
                trimmed,
                support: next.support_sizes(),
            });
            states.push(next);
        }
        Ok(Trajectory { states, reports })
    }

    /// Localizes a global density over `{1, .., m}`.
    pub fn hat_beta(&self, g: &SparseDensity) -> Result<LocalState> {
        let grid = &self.grid;
        if g.window() != grid.all_sites() || g.base() != self.base {
            return Err(CpaError::WindowMismatch {
                expected: format!("{} over {} symbols", grid.all_sites(), self.base),
                found: format!("{} over {} symbols", g.window(), g.base()),
            });
        }
        let left = g.marginal(&grid.k_left())?.normalize()?;
        let right = g.marginal(&grid.k_right())?.normalize()?;
        for (name, found, expected) in [
            ("left", &left, &self.schedule[0].left),
            ("right", &right, &self.schedule[0].right),
        ] {
            if expected.len() == 1 && found.l1_distance(expected)? > 1e-12 {
                return Err(CpaError::Mismatch(format!(
                    "density carries mass off the fixed {name} boundary"
                )));
            }
        }
        let at = grid
            .sites()
            .sites()
            .map(|i| g.marginal(&grid.v.shift(i))?.relabel(grid.v)?.normalize())
            .collect::<Result<Vec<_>>>()?;
        Ok(LocalState {
            left,
            sites: DeBruijnDensity::new(grid.sites(), grid.v, self.base, at)?,
            right,
        })
    }

    /// The global density `g_l · α_Ĩ(g) · g_r` over `{1, .., m}`.
    pub fn hat_alpha(&self, state: &LocalState) -> Result<SparseDensity> {
        self.check_state(&state.sites)?;
        let grid = &self.grid;
        let glue = Glue::new(state.sites.densities(), grid.v.len(), self.base, grid.sites().lo);
        let inner = SparseDensity::from_map_unchecked(grid.interior(), self.base, glue.averaged()?);
        state.left.product(&inner)?.product(&state.right)
    }

    /// The boundary densities used by step `step`, e.g. for [`hat_alpha`](Self::hat_alpha).
    pub fn boundary_densities(&self, step: usize) -> (SparseDensity, SparseDensity) {
        let bd = self.boundary_at(step);
        (bd.left.clone(), bd.right.clone())
    }
}

fn boundary_densities(grid: &Grid, base: usize, b: Boundary) -> Result<BoundaryDensities> {
    let (kl, kr) = (grid.k_left(), grid.k_right());
    let (left, right) = match b {
        Boundary::Deterministic { left, right } => {
            for (name, syms, k) in [("left", &left, kl), ("right", &right, kr)] {
                if syms.len() != k.len() {
                    return Err(CpaError::Geometry(format!(
                        "{name} boundary needs {} symbols, got {}",
                        k.len(),
                        syms.len()
                    )));
                }
                if let Some(&s) = syms.iter().find(|&&s| s >= base) {
                    return Err(CpaError::InvalidSymbol { symbol: s, count: base });
                }
            }
            (
                SparseDensity::point(kl, base, crate::densities::encode_symbols(base, &left))?,
                SparseDensity::point(kr, base, crate::densities::encode_symbols(base, &right))?,
            )
        }
        Boundary::WhiteNoise { left, right } => (left, right),
    };
    for (name, d, k) in [("left", &left, kl), ("right", &right, kr)] {
        if d.window() != k || d.base() != base {
            return Err(CpaError::WindowMismatch {
                expected: format!("{name} boundary over {k} with {base} symbols"),
                found: format!("{} with {} symbols", d.window(), d.base()),
            });
        }
        if !d.is_normalized() {
            return Err(CpaError::ZeroMass);
        }
    }
    Ok(BoundaryDensities { left, right })
}

/// Marginal of a boundary density on `sites`, as (code, weight) pairs.
fn boundary_marginal(d: &SparseDensity, sites: &Interval) -> Result<Vec<(u64, f64)>> {
    if sites.is_empty() {
        return Ok(vec![(0, 1.0)]);
    }
    Ok(d.marginal(sites)?.iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_neighborhoods() {
        let g = Grid::new(8, Interval::new(-2, 1).unwrap(), Interval::new(-1, 0).unwrap()).unwrap();
        assert_eq!(g.sites(), Interval::new(4, 7).unwrap());
        assert_eq!(g.k_left(), Interval::new(1, 2).unwrap());
        assert_eq!(g.k_right(), Interval::new(8, 8).unwrap());
        assert_eq!(g.truncated_neighborhood(4), Interval::new(0, 1).unwrap());
        assert_eq!(g.truncated_neighborhood(5), Interval::new(-1, 1).unwrap());
        assert_eq!(g.truncated_neighborhood(6), Interval::new(-2, 1).unwrap());
        assert_eq!(g.truncated_neighborhood(7), Interval::new(-2, 0).unwrap());
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let err = Grid::new(3, Interval::new(-1, 1).unwrap(), Interval::new(0, 1).unwrap()).unwrap_err();
        assert!(err.to_string().contains("1 + p + q + r + s"));
        assert!(Grid::new(4, Interval::new(-1, 1).unwrap(), Interval::new(0, 1).unwrap()).is_ok());
    }
}
