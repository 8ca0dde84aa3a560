//! Box partitions of the per-site state domain.
//!
//! A partition splits a box `Ω ⊂ R^n` into finitely many cells. Every cell is
//! labelled by a [`Symbol`]; multi-dimensional cell indices are linearised in
//! row-major order (the last dimension varies fastest). Cells are half-open
//! `[lo, hi)` in every dimension, except for the topmost cell of a dimension,
//! which is closed so that the cells cover the whole box.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{CpaError, Result};

/// Label of one partition cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Symbol(pub usize);

impl Symbol {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis-aligned box `[lower, upper]` in `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(CpaError::InvalidPartition(format!(
                "box bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CpaError::InvalidPartition(format!(
                    "dimension {d}: lower bound {lo} must be below upper bound {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Closed-box containment.
    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    /// Clamps `v` componentwise into the box. Returns true if any component moved.
    pub fn clamp(&self, v: &mut [f64]) -> bool {
        let mut moved = false;
        for (x, (lo, hi)) in v.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            if *x < *lo {
                *x = *lo;
                moved = true;
            } else if *x > *hi {
                *x = *hi;
                moved = true;
            }
        }
        moved
    }

    fn check_point(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(CpaError::InvalidPartition(format!(
                "point has {} components, domain has dimension {}",
                v.len(),
                self.dim()
            )));
        }
        for (d, x) in v.iter().enumerate() {
            let (lo, hi) = (self.lower[d], self.upper[d]);
            if !(lo <= *x && *x <= hi) {
                return Err(CpaError::DomainViolation {
                    dim: d,
                    value: *x,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }
}

/// Serializable description of a partition, stored in local-function files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSpec {
    Uniform {
        lower: Vec<f64>,
        upper: Vec<f64>,
        cells: Vec<usize>,
    },
    Rectilinear {
        breakpoints: Vec<Vec<f64>>,
    },
}

impl PartitionSpec {
    pub fn build(&self) -> Result<AnyPartition> {
        match self {
            PartitionSpec::Uniform {
                lower,
                upper,
                cells,
            } => Ok(AnyPartition::Uniform(UniformPartition::new(
                DomainBox::new(lower.clone(), upper.clone())?,
                cells.clone(),
            )?)),
            PartitionSpec::Rectilinear { breakpoints } => Ok(AnyPartition::Rectilinear(
                RectilinearPartition::new(breakpoints.clone())?,
            )),
        }
    }
}

/// Operations the automaton machinery needs from a partition.
pub trait CellPartition: Send + Sync {
    fn domain(&self) -> &DomainBox;

    /// Number of cells along each dimension.
    fn cells_per_dim(&self) -> &[usize];

    /// Lower and upper boundary of cell `k` along dimension `d`.
    fn breakpoint(&self, d: usize, k: usize) -> f64;

    fn spec(&self) -> PartitionSpec;

    /// Cell index along dimension `d` for a coordinate already known to lie in the domain.
    fn locate(&self, d: usize, x: f64) -> usize;

    fn dim(&self) -> usize {
        self.domain().dim()
    }

    /// Total symbol count `|E|`.
    fn num_symbols(&self) -> usize {
        self.cells_per_dim().iter().product()
    }

    /// The coding map: symbol of the cell containing `v`.
    fn encode(&self, v: &[f64]) -> Result<Symbol> {
        self.domain().check_point(v)?;
        let cells = self.cells_per_dim();
        let mut index = 0;
        for (d, x) in v.iter().enumerate() {
            index = index * cells[d] + self.locate(d, *x);
        }
        Ok(Symbol(index))
    }

    /// Row-major multi-index of a symbol.
    fn multi_index(&self, s: Symbol) -> Result<Vec<usize>> {
        self.check_symbol(s)?;
        let cells = self.cells_per_dim();
        let mut rest = s.0;
        let mut idx = vec![0; cells.len()];
        for d in (0..cells.len()).rev() {
            idx[d] = rest % cells[d];
            rest /= cells[d];
        }
        Ok(idx)
    }

    fn symbol_of(&self, multi: &[usize]) -> Result<Symbol> {
        let cells = self.cells_per_dim();
        if multi.len() != cells.len() {
            return Err(CpaError::InvalidPartition(format!(
                "multi-index {multi:?} has wrong length for {} dimensions",
                cells.len()
            )));
        }
        let mut index = 0;
        for (d, &k) in multi.iter().enumerate() {
            if k >= cells[d] {
                return Err(CpaError::InvalidSymbol {
                    symbol: k,
                    count: cells[d],
                });
            }
            index = index * cells[d] + k;
        }
        Ok(Symbol(index))
    }

    fn check_symbol(&self, s: Symbol) -> Result<()> {
        let count = self.num_symbols();
        if s.0 >= count {
            Err(CpaError::InvalidSymbol {
                symbol: s.0,
                count,
            })
        } else {
            Ok(())
        }
    }

    fn cell_bounds(&self, s: Symbol) -> Result<DomainBox> {
        let idx = self.multi_index(s)?;
        let lower = idx
            .iter()
            .enumerate()
            .map(|(d, &k)| self.breakpoint(d, k))
            .collect();
        let upper = idx
            .iter()
            .enumerate()
            .map(|(d, &k)| self.breakpoint(d, k + 1))
            .collect();
        DomainBox::new(lower, upper)
    }

    /// Draws `count` points i.i.d. uniformly from the cell of `s`.
    fn sample_cell(&self, s: Symbol, rng: &mut dyn RngCore, count: usize) -> Result<Vec<Vec<f64>>> {
        let cell = self.cell_bounds(s)?;
        Ok((0..count)
            .map(|_| {
                cell.lower()
                    .iter()
                    .zip(cell.upper())
                    .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                    .collect()
            })
            .collect())
    }
}

/// Equal-width cells along every dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformPartition {
    domain: DomainBox,
    cells: Vec<usize>,
}

impl UniformPartition {
    pub fn new(domain: DomainBox, cells: Vec<usize>) -> Result<Self> {
        if cells.len() != domain.dim() || cells.contains(&0) {
            return Err(CpaError::InvalidPartition(format!(
                "cell counts {cells:?} must be positive, one per dimension"
            )));
        }
        Ok(Self { domain, cells })
    }

    /// The unit interval split into `cells` equal cells.
    pub fn unit_interval(cells: usize) -> Result<Self> {
        Self::new(DomainBox::new(vec![0.0], vec![1.0])?, vec![cells])
    }
}

impl CellPartition for UniformPartition {
    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn cells_per_dim(&self) -> &[usize] {
        &self.cells
    }

    fn breakpoint(&self, d: usize, k: usize) -> f64 {
        let (lo, hi) = (self.domain.lower[d], self.domain.upper[d]);
        let n = self.cells[d];
        if k >= n {
            hi
        } else {
            lo + (hi - lo) * (k as f64) / (n as f64)
        }
    }

    fn locate(&self, d: usize, x: f64) -> usize {
        let (lo, hi) = (self.domain.lower[d], self.domain.upper[d]);
        let n = self.cells[d];
        let guess = ((x - lo) / (hi - lo) * n as f64).floor();
        let mut k = if guess < 0.0 {
            0
        } else {
            (guess as usize).min(n - 1)
        };
        // Reconcile with the breakpoints used by cell_bounds.
        while k + 1 < n && x >= self.breakpoint(d, k + 1) {
            k += 1;
        }
        while k > 0 && x < self.breakpoint(d, k) {
            k -= 1;
        }
        k
    }

    fn spec(&self) -> PartitionSpec {
        PartitionSpec::Uniform {
            lower: self.domain.lower.clone(),
            upper: self.domain.upper.clone(),
            cells: self.cells.clone(),
        }
    }
}

/// Cells given by sorted breakpoints per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RectilinearPartition {
    domain: DomainBox,
    breakpoints: Vec<Vec<f64>>,
    cells: Vec<usize>,
}

impl RectilinearPartition {
    pub fn new(breakpoints: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(CpaError::InvalidPartition("no dimensions".into()));
        }
        for (d, b) in breakpoints.iter().enumerate() {
            if b.len() < 2 || b.windows(2).any(|w| !(w[0] < w[1])) || b.iter().any(|x| !x.is_finite()) {
                return Err(CpaError::InvalidPartition(format!(
                    "dimension {d}: breakpoints must be finite, strictly increasing, at least two"
                )));
            }
        }
        let domain = DomainBox::new(
            breakpoints.iter().map(|b| b[0]).collect(),
            breakpoints.iter().map(|b| *b.last().unwrap()).collect(),
        )?;
        let cells = breakpoints.iter().map(|b| b.len() - 1).collect();
        Ok(Self {
            domain,
            breakpoints,
            cells,
        })
    }
}

impl CellPartition for RectilinearPartition {
    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn cells_per_dim(&self) -> &[usize] {
        &self.cells
    }

    fn breakpoint(&self, d: usize, k: usize) -> f64 {
        self.breakpoints[d][k]
    }

    fn locate(&self, d: usize, x: f64) -> usize {
        let b = &self.breakpoints[d];
        // Number of interior breakpoints <= x.
        b[1..b.len() - 1].partition_point(|w| *w <= x)
    }

    fn spec(&self) -> PartitionSpec {
        PartitionSpec::Rectilinear {
            breakpoints: self.breakpoints.clone(),
        }
    }
}

/// Either partition flavour, as restored from a [`PartitionSpec`].
#[derive(Clone, Debug, PartialEq)]
pub enum AnyPartition {
    Uniform(UniformPartition),
    Rectilinear(RectilinearPartition),
}

impl CellPartition for AnyPartition {
    fn domain(&self) -> &DomainBox {
        match self {
            AnyPartition::Uniform(p) => p.domain(),
            AnyPartition::Rectilinear(p) => p.domain(),
        }
    }

    fn cells_per_dim(&self) -> &[usize] {
        match self {
            AnyPartition::Uniform(p) => p.cells_per_dim(),
            AnyPartition::Rectilinear(p) => p.cells_per_dim(),
        }
    }

    fn breakpoint(&self, d: usize, k: usize) -> f64 {
        match self {
            AnyPartition::Uniform(p) => p.breakpoint(d, k),
            AnyPartition::Rectilinear(p) => p.breakpoint(d, k),
        }
    }

    fn locate(&self, d: usize, x: f64) -> usize {
        match self {
            AnyPartition::Uniform(p) => p.locate(d, x),
            AnyPartition::Rectilinear(p) => p.locate(d, x),
        }
    }

    fn spec(&self) -> PartitionSpec {
        match self {
            AnyPartition::Uniform(p) => p.spec(),
            AnyPartition::Rectilinear(p) => p.spec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(cells: usize) -> UniformPartition {
        UniformPartition::unit_interval(cells).unwrap()
    }

    fn square(a: usize, b: usize) -> UniformPartition {
        UniformPartition::new(
            DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            vec![a, b],
        )
        .unwrap()
    }

    #[test]
    fn encode_first_cell() {
        assert_eq!(unit(5).encode(&[0.183]).unwrap(), Symbol(0));
    }

    #[test]
    fn encode_last_closed_cell() {
        let p = square(5, 5);
        let s = p.encode(&[0.95, 0.95]).unwrap();
        assert_eq!(p.multi_index(s).unwrap(), vec![4, 4]);
        assert_eq!(p.encode(&[1.0, 1.0]).unwrap(), Symbol(24));
    }

    #[test]
    fn encode_rectilinear_breakpoint_belongs_to_upper_cell() {
        let p = RectilinearPartition::new(vec![vec![0.0, 0.183, 0.31, 0.4, 0.7, 1.0]]).unwrap();
        assert_eq!(p.encode(&[0.31]).unwrap(), Symbol(2));
        assert_eq!(p.encode(&[0.0]).unwrap(), Symbol(0));
        assert_eq!(p.encode(&[1.0]).unwrap(), Symbol(4));
        assert_eq!(p.encode(&[0.6999]).unwrap(), Symbol(3));
    }

    #[test]
    fn encode_outside_domain_reports_coordinate() {
        match unit(5).encode(&[1.5]) {
            Err(CpaError::DomainViolation { dim, value, .. }) => {
                assert_eq!(dim, 0);
                assert_eq!(value, 1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(unit(5).encode(&[f64::NAN]).is_err());
    }

    #[test]
    fn cell_bounds_examples() {
        let b = unit(5).cell_bounds(Symbol(1)).unwrap();
        assert_eq!(b.lower(), &[0.2]);
        assert_eq!(b.upper(), &[0.4]);
        let b = square(2, 2).cell_bounds(Symbol(3)).unwrap();
        assert_eq!(b.lower(), &[0.5, 0.5]);
        assert_eq!(b.upper(), &[1.0, 1.0]);
        assert!(unit(5).cell_bounds(Symbol(5)).is_err());
    }

    #[test]
    fn midpoint_roundtrip_5x15() {
        let p = UniformPartition::new(
            DomainBox::new(vec![0.0, 0.0], vec![1.0, 100.0]).unwrap(),
            vec![5, 15],
        )
        .unwrap();
        for s in 0..p.num_symbols() {
            let mid = p.cell_bounds(Symbol(s)).unwrap().midpoint();
            assert_eq!(p.encode(&mid).unwrap(), Symbol(s));
        }
    }

    #[test]
    fn cell_volumes_sum_to_domain_volume() {
        let p = UniformPartition::new(
            DomainBox::new(vec![0.0, 0.0], vec![1.0, 100.0]).unwrap(),
            vec![5, 15],
        )
        .unwrap();
        let total: f64 = (0..p.num_symbols())
            .map(|s| p.cell_bounds(Symbol(s)).unwrap().volume())
            .sum();
        let vol = p.domain().volume();
        assert!(((total - vol) / vol).abs() < 1e-12);
    }

    #[test]
    fn samples_stay_in_their_cell() {
        let p = square(3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in 0..p.num_symbols() {
            let pts = p.sample_cell(Symbol(s), &mut rng, 100).unwrap();
            assert_eq!(pts.len(), 100);
            for v in pts {
                assert_eq!(p.encode(&v).unwrap(), Symbol(s));
            }
        }
        let one = p.sample_cell(Symbol(4), &mut rng, 1).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn sample_mean_matches_uniform_moments() {
        let p = unit(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = p.sample_cell(Symbol(0), &mut rng, 10_000).unwrap();
        let mean = pts.iter().map(|v| v[0]).sum::<f64>() / 10_000.0;
        let three_sigma = 3.0 * (0.2 / 12f64.sqrt()) / 100.0;
        assert!((mean - 0.1).abs() < three_sigma, "mean {mean}");
    }

    #[test]
    fn dense_sampling_hits_every_symbol() {
        let p = square(4, 3);
        let mut seen = vec![false; p.num_symbols()];
        for i in 0..=40 {
            for j in 0..=40 {
                let v = [i as f64 / 40.0, j as f64 / 40.0];
                seen[p.encode(&v).unwrap().0] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn spec_roundtrip_builds_equal_partition() {
        let p = square(2, 3);
        let AnyPartition::Uniform(q) = p.spec().build().unwrap() else {
            panic!("expected uniform");
        };
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(DomainBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(RectilinearPartition::new(vec![vec![0.0, 0.5, 0.5, 1.0]]).is_err());
        assert!(UniformPartition::new(DomainBox::new(vec![0.0], vec![1.0]).unwrap(), vec![0]).is_err());
    }
}
