//! Dense density operators over truncated multimode Fock spaces.
//!
//! Basis states are ordered lexicographically with mode 0 most significant,
//! so the occupation vector `[n0, n1, ..]` maps to
//! `n0 * d^(M-1) + n1 * d^(M-2) + ..` with `d = cutoff + 1`.
//!
//! Every operation returns a new operator; nothing is mutated in place.
//! Gates that would move population above the cutoff are rejected instead
//! of silently truncated.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{check_range, invalid, Error, Result};

pub type C64 = Complex64;

/// Default ceiling on the total Hilbert-space dimension.
pub const DEFAULT_DIMENSION_BOUND: usize = 1_000_000;

/// Largest leaked weight the two-mode squeezer accepts by default.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-8;

/// Conditioning on an outcome rarer than this is refused.
pub const MIN_OUTCOME_PROBABILITY: f64 = 1e-15;

const SUPPORT_TOL: f64 = 1e-13;

/// Number of modes and per-mode photon cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeLayout {
    modes: usize,
    cutoff: usize,
    dim: usize,
}

impl ModeLayout {
    pub fn new(modes: usize, cutoff: usize) -> Result<Self> {
        Self::with_bound(modes, cutoff, DEFAULT_DIMENSION_BOUND)
    }

    pub fn with_bound(modes: usize, cutoff: usize, bound: usize) -> Result<Self> {
        if modes == 0 {
            return Err(invalid("mode_count", "must be positive"));
        }
        if cutoff == 0 {
            return Err(invalid("cutoff", "must be positive"));
        }
        let local = cutoff as u128 + 1;
        let mut dim: u128 = 1;
        for _ in 0..modes {
            dim = dim.saturating_mul(local);
            if dim > bound as u128 {
                return Err(Error::DimensionBound { dim, bound });
            }
        }
        Ok(Self {
            modes,
            cutoff,
            dim: dim as usize,
        })
    }

    /// Zero-mode layout holding a single scalar.
    fn scalar(cutoff: usize) -> Self {
        Self {
            modes: 0,
            cutoff,
            dim: 1,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Dimension of the full tensor-product space.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn local_dim(&self) -> usize {
        self.cutoff + 1
    }

    pub fn stride(&self, mode: usize) -> usize {
        self.local_dim().pow((self.modes - 1 - mode) as u32)
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes {
            return Err(Error::InvalidMode {
                index: mode,
                modes: self.modes,
            });
        }
        Ok(())
    }

    /// Basis index of an occupation vector.
    pub fn index(&self, occupations: &[usize]) -> Result<usize> {
        if occupations.len() != self.modes {
            return Err(Error::LayoutMismatch(format!(
                "{} occupations for {} modes",
                occupations.len(),
                self.modes
            )));
        }
        let d = self.local_dim();
        occupations.iter().try_fold(0usize, |acc, &n| {
            if n > self.cutoff {
                Err(Error::Truncation(format!(
                    "occupation {n} above cutoff {}",
                    self.cutoff
                )))
            } else {
                Ok(acc * d + n)
            }
        })
    }

    pub fn occupations(&self, mut index: usize) -> Vec<usize> {
        let d = self.local_dim();
        let mut occ = vec![0; self.modes];
        for slot in occ.iter_mut().rev() {
            *slot = index % d;
            index /= d;
        }
        occ
    }

    /// Photon number of `mode` in basis state `index`.
    pub fn occupation(&self, index: usize, mode: usize) -> usize {
        (index / self.stride(mode)) % self.local_dim()
    }

    fn without_modes(&self, removed: &[usize]) -> Self {
        let modes = self.modes - removed.len();
        Self {
            modes,
            cutoff: self.cutoff,
            dim: self.local_dim().pow(modes as u32),
        }
    }

    /// Base indices (all listed modes empty) and local offsets for a set of
    /// modes. Local index ordering follows the order of `modes`.
    fn local_split(&self, modes: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let d = self.local_dim();
        let local = d.pow(modes.len() as u32);
        let offsets: Vec<usize> = (0..local)
            .map(|mut l| {
                let mut off = 0;
                for &m in modes.iter().rev() {
                    off += (l % d) * self.stride(m);
                    l /= d;
                }
                off
            })
            .collect();
        let bases = (0..self.dim)
            .filter(|&x| modes.iter().all(|&m| self.occupation(x, m) == 0))
            .collect();
        (bases, offsets)
    }
}

/// Normalized pure state over a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    layout: ModeLayout,
    amplitudes: Vec<C64>,
}

impl PureState {
    /// Accepts amplitudes that already have unit norm (within 1e-12).
    pub fn new(layout: ModeLayout, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != layout.dim() {
            return Err(Error::LayoutMismatch(format!(
                "{} amplitudes for dimension {}",
                amplitudes.len(),
                layout.dim()
            )));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(invalid("amplitudes", format!("norm² = {norm}, expected 1")));
        }
        Ok(Self { layout, amplitudes })
    }

    /// Builds and normalizes a superposition of occupation-number states.
    pub fn from_terms(layout: ModeLayout, terms: &[(&[usize], C64)]) -> Result<Self> {
        let mut amplitudes = vec![C64::new(0.0, 0.0); layout.dim()];
        for (occ, amp) in terms {
            amplitudes[layout.index(occ)?] += amp;
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(invalid("terms", "zero vector"));
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { layout, amplitudes })
    }

    pub fn basis(layout: ModeLayout, occupations: &[usize]) -> Result<Self> {
        Self::from_terms(layout, &[(occupations, C64::new(1.0, 0.0))])
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, occupations: &[usize]) -> Result<C64> {
        Ok(self.amplitudes[self.layout.index(occupations)?])
    }

    pub fn to_density(&self) -> DensityOperator {
        let dim = self.layout.dim();
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for (r, a) in self.amplitudes.iter().enumerate() {
            if *a == C64::new(0.0, 0.0) {
                continue;
            }
            for (c, b) in self.amplitudes.iter().enumerate() {
                data[r * dim + c] = a * b.conj();
            }
        }
        DensityOperator {
            layout: self.layout,
            data,
        }
    }
}

/// Threshold or photon-number-resolving detector with dark counts.
///
/// A threshold detector fires on `n` incident photons with probability
/// `1 - (1 - dark_count_prob) (1 - efficiency)^n`. A resolving detector
/// registers each photon independently with `efficiency` and adds one
/// spurious count with `dark_count_prob`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_count_prob: f64,
    pub resolving: bool,
}

impl DetectorModel {
    pub fn new(efficiency: f64, dark_count_prob: f64) -> Result<Self> {
        check_range("efficiency", efficiency, 0.0, 1.0)?;
        check_range("dark_count_prob", dark_count_prob, 0.0, 1.0)?;
        Ok(Self {
            efficiency,
            dark_count_prob,
            resolving: false,
        })
    }

    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_count_prob: 0.0,
            resolving: false,
        }
    }

    pub fn resolving(mut self) -> Self {
        self.resolving = true;
        self
    }

    fn validate(&self) -> Result<()> {
        check_range("efficiency", self.efficiency, 0.0, 1.0)?;
        check_range("dark_count_prob", self.dark_count_prob, 0.0, 1.0)
    }

    /// Probability of `outcome` given `n` incident photons.
    pub fn outcome_probability(&self, n: usize, outcome: DetectorOutcome) -> Result<f64> {
        let eta = self.efficiency;
        let dark = self.dark_count_prob;
        let silent = (1.0 - dark) * (1.0 - eta).powi(n as i32);
        match outcome {
            DetectorOutcome::NoClick => Ok(silent),
            DetectorOutcome::Click => Ok(1.0 - silent),
            DetectorOutcome::Count(k) => {
                if !self.resolving {
                    return Err(invalid(
                        "outcome",
                        "photon counts need a resolving detector",
                    ));
                }
                let detected = |k: usize| -> f64 {
                    if k > n {
                        0.0
                    } else {
                        binomial(n, k) * eta.powi(k as i32) * (1.0 - eta).powi((n - k) as i32)
                    }
                };
                let spurious = if k == 0 { 0.0 } else { detected(k - 1) };
                Ok((1.0 - dark) * detected(k) + dark * spurious)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorOutcome {
    NoClick,
    Click,
    /// Exact registered count; resolving detectors only.
    Count(usize),
}

/// Mixed state over a truncated Fock space, stored as a dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    layout: ModeLayout,
    data: Vec<C64>,
}

/// Multimode vacuum `|0..0><0..0|`.
pub fn vacuum(layout: ModeLayout) -> DensityOperator {
    let dim = layout.dim();
    let mut data = vec![C64::new(0.0, 0.0); dim * dim];
    data[0] = C64::new(1.0, 0.0);
    DensityOperator { layout, data }
}

impl DensityOperator {
    pub fn from_matrix(layout: ModeLayout, data: Vec<C64>) -> Result<Self> {
        if data.len() != layout.dim() * layout.dim() {
            return Err(Error::LayoutMismatch(format!(
                "{} entries for dimension {}",
                data.len(),
                layout.dim()
            )));
        }
        Ok(Self { layout, data })
    }

    /// Diagonal operator over occupation-number states.
    pub fn from_populations(layout: ModeLayout, pops: &[(&[usize], f64)]) -> Result<Self> {
        let dim = layout.dim();
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for (occ, p) in pops {
            let i = layout.index(occ)?;
            data[i * dim + i] += C64::new(*p, 0.0);
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim() + col]
    }

    /// Matrix element between two occupation-number states.
    pub fn element(&self, row: &[usize], col: &[usize]) -> Result<C64> {
        Ok(self.get(self.layout.index(row)?, self.layout.index(col)?))
    }

    pub fn population(&self, occupations: &[usize]) -> Result<f64> {
        let i = self.layout.index(occupations)?;
        Ok(self.get(i, i).re)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i).re).sum()
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        let dim = self.dim();
        let mut acc = 0.0;
        for r in 0..dim {
            for c in 0..dim {
                acc += (self.data[r * dim + c] * self.data[c * dim + r]).re;
            }
        }
        acc
    }

    /// Largest elementwise deviation `|ρ - ρ†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..dim {
            for c in r..dim {
                let d = self.data[r * dim + c] - self.data[c * dim + r].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part; for test-time checks.
    pub fn min_eigenvalue(&self) -> f64 {
        let dim = self.dim();
        let m = DMatrix::from_fn(dim, dim, |r, c| {
            (self.data[r * dim + c] + self.data[c * dim + r].conj()) * 0.5
        });
        m.symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_photon_number(&self, mode: usize) -> Result<f64> {
        self.layout.check_mode(mode)?;
        Ok((0..self.dim())
            .map(|i| self.layout.occupation(i, mode) as f64 * self.get(i, i).re)
            .sum())
    }

    /// Total weight on basis states with exactly `n` photons summed over `modes`.
    pub fn sector_weight(&self, modes: &[usize], n: usize) -> Result<f64> {
        for &m in modes {
            self.layout.check_mode(m)?;
        }
        Ok((0..self.dim())
            .filter(|&i| modes.iter().map(|&m| self.layout.occupation(i, m)).sum::<usize>() == n)
            .map(|i| self.get(i, i).re)
            .sum())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            layout: self.layout,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// Divides by the trace; errors when the trace is below the conditioning floor.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if tr < MIN_OUTCOME_PROBABILITY {
            return Err(Error::ImpossibleOutcome { probability: tr });
        }
        Ok(self.scaled(1.0 / tr))
    }

    /// Elementwise sum; layouts must agree.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch("cannot add operators".into()));
        }
        Ok(Self {
            layout: self.layout,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Tensor product `self ⊗ other`; the modes of `other` follow those of `self`.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        if self.layout.cutoff != other.layout.cutoff {
            return Err(Error::LayoutMismatch(format!(
                "cutoffs {} and {} differ",
                self.layout.cutoff, other.layout.cutoff
            )));
        }
        let layout = ModeLayout::new(self.layout.modes + other.layout.modes, self.layout.cutoff)?;
        let (da, db) = (self.dim(), other.dim());
        let dim = da * db;
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for ar in 0..da {
            for ac in 0..da {
                let a = self.data[ar * da + ac];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for br in 0..db {
                    let row = (ar * db + br) * dim + ac * db;
                    for bc in 0..db {
                        data[row + bc] = a * other.data[br * db + bc];
                    }
                }
            }
        }
        Ok(Self { layout, data })
    }

    /// Re-embeds into a layout with a larger per-mode cutoff.
    pub fn with_cutoff(&self, cutoff: usize) -> Result<Self> {
        if cutoff < self.layout.cutoff {
            return Err(invalid("cutoff", "can only grow"));
        }
        let layout = ModeLayout::new(self.layout.modes, cutoff)?;
        let map: Vec<usize> = (0..self.dim())
            .map(|i| layout.index(&self.layout.occupations(i)))
            .collect::<Result<_>>()?;
        let (old, new) = (self.dim(), layout.dim());
        let mut data = vec![C64::new(0.0, 0.0); new * new];
        for r in 0..old {
            for c in 0..old {
                data[map[r] * new + map[c]] = self.data[r * old + c];
            }
        }
        Ok(Self { layout, data })
    }

    /// `U ρ U†` for an operator acting on `modes` (local row-major matrix).
    fn conjugate_local(&self, modes: &[usize], u: &[C64]) -> Self {
        let (bases, offsets) = self.layout.local_split(modes);
        let dim = self.dim();
        let local = offsets.len();
        let zero = C64::new(0.0, 0.0);
        let nonzero: Vec<Vec<(usize, C64)>> = (0..local)
            .map(|k| {
                (0..local)
                    .filter(|&l| u[k * local + l] != zero)
                    .map(|l| (l, u[k * local + l]))
                    .collect()
            })
            .collect();
        // rows: left = U ρ, accumulated as whole contiguous row slices
        let mut left = vec![zero; dim * dim];
        for &b in &bases {
            for (k, terms) in nonzero.iter().enumerate() {
                let dst = (b + offsets[k]) * dim;
                for &(l, coef) in terms {
                    let src = (b + offsets[l]) * dim;
                    for c in 0..dim {
                        left[dst + c] += coef * self.data[src + c];
                    }
                }
            }
        }
        // columns: out = left U†
        let mut out = vec![zero; dim * dim];
        let mut v = vec![zero; local];
        for row in 0..dim {
            let base_row = row * dim;
            for &b in &bases {
                for (l, off) in offsets.iter().enumerate() {
                    v[l] = left[base_row + b + off];
                }
                for (k, terms) in nonzero.iter().enumerate() {
                    out[base_row + b + offsets[k]] =
                        terms.iter().map(|&(l, coef)| v[l] * coef.conj()).sum();
                }
            }
        }
        Self {
            layout: self.layout,
            data: out,
        }
    }

    /// Largest diagonal weight on states where `pred` holds.
    fn weight_where(&self, pred: impl Fn(usize) -> bool) -> f64 {
        (0..self.dim())
            .filter(|&i| pred(i))
            .map(|i| self.get(i, i).re.abs())
            .fold(0.0, f64::max)
    }

    /// Two-mode beamsplitter with mixing angle θ and phase φ.
    ///
    /// Heisenberg action: `a_i† → cos θ a_i† + e^{iφ} sin θ a_j†`,
    /// `a_j† → cos θ a_j† − e^{−iφ} sin θ a_i†`, generated by
    /// `exp(θ (e^{iφ} a_j† a_i − e^{−iφ} a_i† a_j))`. θ = π/4 is 50/50.
    /// The input must have no weight where `n_i + n_j` exceeds the cutoff.
    pub fn apply_beamsplitter(&self, i: usize, j: usize, theta: f64, phi: f64) -> Result<Self> {
        self.layout.check_mode(i)?;
        self.layout.check_mode(j)?;
        if i == j {
            return Err(invalid("mode", "beamsplitter needs two distinct modes"));
        }
        let cutoff = self.layout.cutoff;
        let leak = self.weight_where(|x| {
            self.layout.occupation(x, i) + self.layout.occupation(x, j) > cutoff
        });
        if leak > SUPPORT_TOL {
            return Err(Error::Truncation(format!(
                "weight {leak:e} on states with n_{i} + n_{j} > {cutoff}"
            )));
        }
        let u = beamsplitter_matrix(cutoff, theta, phi);
        Ok(self.conjugate_local(&[i, j], &u))
    }

    /// Phase shift `e^{iψ n}` on one mode.
    pub fn apply_phase(&self, mode: usize, psi: f64) -> Result<Self> {
        self.layout.check_mode(mode)?;
        let dim = self.dim();
        let occ: Vec<isize> = (0..dim)
            .map(|x| self.layout.occupation(x, mode) as isize)
            .collect();
        let cutoff = self.layout.cutoff as isize;
        let factors: Vec<C64> = (-cutoff..=cutoff)
            .map(|delta| C64::from_polar(1.0, psi * delta as f64))
            .collect();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, v)| match occ[k / dim] - occ[k % dim] {
                0 => *v,
                delta => v * factors[(delta + cutoff) as usize],
            })
            .collect();
        Ok(Self {
            layout: self.layout,
            data,
        })
    }

    /// Two-mode squeezer `exp(r (a_i† a_j† − a_i a_j))` with the default
    /// truncation tolerance. On vacuum it yields `Σ_n tanh^n r |n,n> / cosh r`.
    pub fn apply_two_mode_squeeze(&self, i: usize, j: usize, r: f64) -> Result<Self> {
        self.apply_two_mode_squeeze_with_tol(i, j, r, DEFAULT_TRUNCATION_TOL)
    }

    /// As [`Self::apply_two_mode_squeeze`], failing if more than `tol` of the
    /// trace is pushed above the cutoff.
    pub fn apply_two_mode_squeeze_with_tol(
        &self,
        i: usize,
        j: usize,
        r: f64,
        tol: f64,
    ) -> Result<Self> {
        self.layout.check_mode(i)?;
        self.layout.check_mode(j)?;
        if i == j {
            return Err(invalid("mode", "squeezer needs two distinct modes"));
        }
        if !r.is_finite() {
            return Err(invalid("r", "must be finite"));
        }
        let u = squeezer_matrix(self.layout.cutoff, r)?;
        let out = self.conjugate_local(&[i, j], &u);
        let leaked = self.trace() - out.trace();
        if leaked > tol {
            return Err(Error::Truncation(format!(
                "squeezing r = {r} leaks {leaked:e} above cutoff {} (tolerance {tol:e})",
                self.layout.cutoff
            )));
        }
        Ok(out)
    }

    /// Pure-loss channel with transmission `eta`.
    pub fn apply_loss(&self, mode: usize, eta: f64) -> Result<Self> {
        self.layout.check_mode(mode)?;
        check_range("eta", eta, 0.0, 1.0)?;
        if eta == 1.0 {
            return Ok(self.clone());
        }
        // ρ'[x,y] = Σ_k A_k(n_x) A_k(n_y) ρ[x + k s, y + k s] with
        // A_k(n) = sqrt(C(n+k, k) η^n (1-η)^k), k photons lost
        let d = self.layout.local_dim();
        let amp: Vec<Vec<f64>> = (0..d)
            .map(|n| {
                (0..d - n)
                    .map(|k| {
                        (binomial(n + k, k) * eta.powi(n as i32) * (1.0 - eta).powi(k as i32)).sqrt()
                    })
                    .collect()
            })
            .collect();
        let dim = self.dim();
        let stride = self.layout.stride(mode);
        let occ: Vec<usize> = (0..dim).map(|x| self.layout.occupation(x, mode)).collect();
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for x in 0..dim {
            let ax = &amp[occ[x]];
            for y in 0..dim {
                let ay = &amp[occ[y]];
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..ax.len().min(ay.len()) {
                    acc += self.data[(x + k * stride) * dim + y + k * stride] * (ax[k] * ay[k]);
                }
                data[x * dim + y] = acc;
            }
        }
        Ok(Self {
            layout: self.layout,
            data,
        })
    }

    /// Unnormalized conditional state after a destructive detection on
    /// `mode`; its trace is the outcome probability.
    pub fn project_detector(
        &self,
        mode: usize,
        detector: &DetectorModel,
        outcome: DetectorOutcome,
    ) -> Result<Self> {
        self.layout.check_mode(mode)?;
        detector.validate()?;
        let weights: Vec<f64> = (0..self.layout.local_dim())
            .map(|n| detector.outcome_probability(n, outcome))
            .collect::<Result<_>>()?;
        Ok(self.contract_mode(mode, &weights))
    }

    /// Detection probability and normalized post-measurement state.
    pub fn measure_detector(
        &self,
        mode: usize,
        detector: &DetectorModel,
        outcome: DetectorOutcome,
    ) -> Result<(f64, Self)> {
        let projected = self.project_detector(mode, detector, outcome)?;
        let p = projected.trace();
        if p < MIN_OUTCOME_PROBABILITY {
            return Err(Error::ImpossibleOutcome { probability: p });
        }
        Ok((p, projected.scaled(1.0 / p)))
    }

    /// `Σ_n w_n <n|ρ|n>` over one mode, removing it from the layout.
    fn contract_mode(&self, mode: usize, weights: &[f64]) -> Self {
        let layout = self.layout.without_modes(&[mode]);
        let stride = self.layout.stride(mode);
        let d = self.layout.local_dim();
        let (dim, new_dim) = (self.dim(), layout.dim());
        // Reduced index x maps to the full index with n = 0 on `mode`.
        let lift = |x: usize| (x / stride) * stride * d + x % stride;
        let mut data = vec![C64::new(0.0, 0.0); new_dim * new_dim];
        for r in 0..new_dim {
            let rb = lift(r);
            for c in 0..new_dim {
                let cb = lift(c);
                data[r * new_dim + c] = weights
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(n, w)| self.data[(rb + n * stride) * dim + cb + n * stride] * *w)
                    .sum();
            }
        }
        Self { layout, data }
    }

    /// Traces out `modes`. Tracing every mode yields a zero-mode scalar
    /// operator holding the trace.
    pub fn partial_trace(&self, modes: &[usize]) -> Result<Self> {
        for &m in modes {
            self.layout.check_mode(m)?;
        }
        let mut sorted = modes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != modes.len() {
            return Err(invalid("modes", "duplicate mode index"));
        }
        if sorted.len() == self.layout.modes {
            let layout = ModeLayout::scalar(self.layout.cutoff);
            return Ok(Self {
                layout,
                data: vec![C64::new(self.trace(), 0.0)],
            });
        }
        let ones = vec![1.0; self.layout.local_dim()];
        let mut out = self.clone();
        for &m in sorted.iter().rev() {
            out = out.contract_mode(m, &ones);
        }
        Ok(out)
    }

    /// `<ψ|ρ|ψ>`.
    pub fn fidelity(&self, psi: &PureState) -> Result<f64> {
        if psi.layout != self.layout {
            return Err(Error::LayoutMismatch(format!(
                "state over {} modes/cutoff {}, operator over {} modes/cutoff {}",
                psi.layout.modes, psi.layout.cutoff, self.layout.modes, self.layout.cutoff
            )));
        }
        let dim = self.dim();
        let a = &psi.amplitudes;
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..dim {
            if a[r] == C64::new(0.0, 0.0) {
                continue;
            }
            let row: C64 = (0..dim).map(|c| self.data[r * dim + c] * a[c]).sum();
            acc += a[r].conj() * row;
        }
        Ok(acc.re)
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Local two-mode beamsplitter unitary (row-major over `(n_i, n_j)`),
/// exact on every block with `n_i + n_j <= cutoff` and identity above it.
fn beamsplitter_matrix(cutoff: usize, theta: f64, phi: f64) -> Vec<C64> {
    let d = cutoff + 1;
    let (s, c) = theta.sin_cos();
    // a_i† → α a_i† + β a_j†,  a_j† → γ a_i† + δ a_j†
    let alpha = C64::new(c, 0.0);
    let beta = C64::from_polar(s, phi);
    let gamma = -C64::from_polar(s, -phi);
    let delta = C64::new(c, 0.0);
    let mut u = vec![C64::new(0.0, 0.0); d * d * d * d];
    for n in 0..d {
        for m in 0..d {
            let col = n * d + m;
            if n + m > cutoff {
                u[col * d * d + col] = C64::new(1.0, 0.0);
                continue;
            }
            let norm = (factorial(n) * factorial(m)).sqrt();
            for k in 0..=n {
                for l in 0..=m {
                    let p = k + l;
                    let q = n + m - p;
                    let coeff = binomial(n, k)
                        * binomial(m, l)
                        * (factorial(p) * factorial(q)).sqrt()
                        / norm;
                    let amp = alpha.powu(k as u32)
                        * beta.powu((n - k) as u32)
                        * gamma.powu(l as u32)
                        * delta.powu((m - l) as u32)
                        * coeff;
                    u[(p * d + q) * d * d + col] += amp;
                }
            }
        }
    }
    u
}

/// Local two-mode squeezing matrix over `(n_i, n_j)`, cut to the truncated
/// space. The squeezer conserves `n_i − n_j`; each such chain is
/// exponentiated on an enlarged space so the kept entries are exact to
/// rounding.
fn squeezer_matrix(cutoff: usize, r: f64) -> Result<Vec<C64>> {
    let d = cutoff + 1;
    let mut u = vec![C64::new(0.0, 0.0); d * d * d * d];
    let t = r.abs().tanh();
    let pad = if t == 0.0 {
        1
    } else if t >= 1.0 {
        return Err(invalid("r", "squeezing too strong for a dense chain"));
    } else {
        (((1e-20f64).ln() / (2.0 * t.ln())).ceil() as usize + 8).max(8)
    };
    if pad > 4000 {
        return Err(invalid("r", format!("squeezing {r} needs a {pad}-level chain")));
    }
    for diff in -(cutoff as isize)..=(cutoff as isize) {
        let (oi, oj) = if diff >= 0 {
            (diff as usize, 0)
        } else {
            (0, (-diff) as usize)
        };
        let kept = cutoff - diff.unsigned_abs() + 1;
        let len = kept + pad;
        // chain state m ↔ |oi + m, oj + m>
        let gen = DMatrix::<f64>::from_fn(len, len, |a, b| {
            let up = |m: usize| (((oi + m + 1) * (oj + m + 1)) as f64).sqrt() * r;
            if a == b + 1 {
                up(b)
            } else if b == a + 1 {
                -up(a)
            } else {
                0.0
            }
        });
        let block = gen.exp();
        for a in 0..kept {
            for b in 0..kept {
                let row = (oi + a) * d + oj + a;
                let col = (oi + b) * d + oj + b;
                u[row * d * d + col] = C64::new(block[(a, b)], 0.0);
            }
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn fock(modes: usize, cutoff: usize, occ: &[usize]) -> DensityOperator {
        let layout = ModeLayout::new(modes, cutoff).unwrap();
        PureState::basis(layout, occ).unwrap().to_density()
    }

    #[test]
    fn vacuum_single_mode() {
        let rho = vacuum(ModeLayout::new(1, 2).unwrap());
        assert_eq!(rho.data(), &[c(1.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0)]);
    }

    #[test]
    fn vacuum_two_modes() {
        let rho = vacuum(ModeLayout::new(2, 1).unwrap());
        assert_eq!(rho.dim(), 4);
        assert_eq!(rho.get(0, 0), c(1.0));
        assert_eq!(rho.data().iter().filter(|x| x.norm() > 0.0).count(), 1);
    }

    #[test]
    fn dimension_bound_rejected() {
        assert!(matches!(
            ModeLayout::new(21, 1),
            Err(Error::DimensionBound { .. })
        ));
        assert!(ModeLayout::with_bound(3, 3, 63).is_err());
        assert!(ModeLayout::with_bound(3, 3, 64).is_ok());
        // would overflow u64 without the running bound check
        assert!(ModeLayout::new(200, 1000).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let l = ModeLayout::new(3, 2).unwrap();
        for x in 0..l.dim() {
            assert_eq!(l.index(&l.occupations(x)).unwrap(), x);
        }
        assert_eq!(l.index(&[1, 0, 2]).unwrap(), 9 + 2);
    }

    #[test]
    fn beamsplitter_single_photon() {
        let rho = fock(2, 1, &[1, 0]);
        let out = rho.apply_beamsplitter(0, 1, FRAC_PI_4, 0.0).unwrap();
        let l = *rho.layout();
        let target = PureState::from_terms(l, &[(&[1, 0], c(1.0)), (&[0, 1], c(1.0))]).unwrap();
        assert!((out.fidelity(&target).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beamsplitter_vacuum_invariant() {
        let rho = vacuum(ModeLayout::new(2, 3).unwrap());
        for (t, p) in [(0.3, 1.1), (FRAC_PI_4, 0.0), (2.0, -0.7)] {
            let out = rho.apply_beamsplitter(0, 1, t, p).unwrap();
            assert!((out.get(0, 0) - c(1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn beamsplitter_rejects_overflowing_support() {
        let rho = fock(2, 2, &[2, 1]);
        assert!(matches!(
            rho.apply_beamsplitter(0, 1, FRAC_PI_4, 0.0),
            Err(Error::Truncation(_))
        ));
        assert!(rho.apply_beamsplitter(0, 0, FRAC_PI_4, 0.0).is_err());
        assert!(rho.apply_beamsplitter(0, 2, FRAC_PI_4, 0.0).is_err());
    }

    #[test]
    fn phase_zero_is_identity_and_pi_flips_sign() {
        let l = ModeLayout::new(1, 2).unwrap();
        let psi = PureState::from_terms(l, &[(&[0], c(1.0)), (&[1], c(1.0))]).unwrap();
        let rho = psi.to_density();
        assert_eq!(rho.apply_phase(0, 0.0).unwrap(), rho);
        let flipped = rho.apply_phase(0, PI).unwrap();
        assert!((flipped.element(&[0], &[1]).unwrap() - c(-0.5)).norm() < 1e-15);
        let diag = DensityOperator::from_populations(l, &[(&[0], 0.3), (&[2], 0.7)]).unwrap();
        assert_eq!(diag.apply_phase(0, 1.234).unwrap(), diag);
        assert!(rho.apply_phase(1, 0.1).is_err());
    }

    #[test]
    fn squeeze_zero_is_identity() {
        let rho = fock(2, 2, &[1, 0]);
        let out = rho.apply_two_mode_squeeze(0, 1, 0.0).unwrap();
        for (a, b) in out.data().iter().zip(rho.data()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn squeeze_small_on_vacuum() {
        // tanh² r = 0.01
        let r = 0.1f64.atanh();
        let rho = vacuum(ModeLayout::new(2, 4).unwrap());
        let out = rho.apply_two_mode_squeeze(0, 1, r).unwrap();
        assert!((out.population(&[0, 0]).unwrap() - 0.99).abs() < 1e-12);
        assert!((out.population(&[1, 1]).unwrap() - 0.0099).abs() < 1e-12);
    }

    #[test]
    fn squeeze_rejects_heavy_truncation() {
        let rho = vacuum(ModeLayout::new(2, 1).unwrap());
        assert!(matches!(
            rho.apply_two_mode_squeeze(0, 1, 0.5),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn loss_on_single_photon() {
        let rho = fock(1, 1, &[1]);
        let out = rho.apply_loss(0, 0.3).unwrap();
        assert!((out.population(&[1]).unwrap() - 0.3).abs() < 1e-15);
        assert!((out.population(&[0]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(rho.apply_loss(0, 1.0).unwrap(), rho);
        assert!(rho.apply_loss(0, 1.5).is_err());
        assert!(rho.apply_loss(0, -0.1).is_err());
    }

    #[test]
    fn detector_probabilities() {
        let vac = vacuum(ModeLayout::new(1, 2).unwrap());
        let ideal = DetectorModel::new(1.0, 0.0).unwrap();
        let p = vac.project_detector(0, &ideal, DetectorOutcome::Click).unwrap().trace();
        assert_eq!(p, 0.0);
        assert!(matches!(
            vac.measure_detector(0, &ideal, DetectorOutcome::Click),
            Err(Error::ImpossibleOutcome { .. })
        ));
        let one = fock(1, 2, &[1]);
        let det = DetectorModel::new(0.4, 0.0).unwrap();
        let (p, post) = one.measure_detector(0, &det, DetectorOutcome::Click).unwrap();
        assert!((p - 0.4).abs() < 1e-15);
        assert_eq!(post.layout().modes(), 0);
        let dark = DetectorModel::new(0.4, 1e-5).unwrap();
        let (p, _) = vac.measure_detector(0, &dark, DetectorOutcome::Click).unwrap();
        assert!((p - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn resolving_counts() {
        let two = fock(1, 2, &[2]);
        let det = DetectorModel::new(0.5, 0.0).unwrap().resolving();
        let probs: Vec<f64> = (0..3)
            .map(|k| two.project_detector(0, &det, DetectorOutcome::Count(k)).unwrap().trace())
            .collect();
        assert!((probs[0] - 0.25).abs() < 1e-15);
        assert!((probs[1] - 0.5).abs() < 1e-15);
        assert!((probs[2] - 0.25).abs() < 1e-15);
        let threshold = DetectorModel::new(0.5, 0.0).unwrap();
        assert!(two.project_detector(0, &threshold, DetectorOutcome::Count(1)).is_err());
    }

    #[test]
    fn partial_trace_cases() {
        let l = ModeLayout::new(2, 1).unwrap();
        let bell = PureState::from_terms(l, &[(&[1, 0], c(1.0)), (&[0, 1], c(1.0))])
            .unwrap()
            .to_density();
        let reduced = bell.partial_trace(&[1]).unwrap();
        assert!((reduced.get(0, 0) - c(0.5)).norm() < 1e-15);
        assert!((reduced.get(1, 1) - c(0.5)).norm() < 1e-15);
        assert!(reduced.get(0, 1).norm() < 1e-15);

        let one = fock(1, 1, &[1]);
        let padded = one.tensor(&vacuum(ModeLayout::new(1, 1).unwrap())).unwrap();
        assert_eq!(padded.partial_trace(&[1]).unwrap(), one);

        let all = bell.partial_trace(&[0, 1]).unwrap();
        assert_eq!(all.dim(), 1);
        assert!((all.get(0, 0) - c(1.0)).norm() < 1e-15);
        assert!(bell.partial_trace(&[0, 0]).is_err());
        assert!(bell.partial_trace(&[2]).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let l = ModeLayout::new(1, 1).unwrap();
        let psi = PureState::from_terms(l, &[(&[0], c(1.0)), (&[1], C64::new(0.0, 1.0))]).unwrap();
        assert!((psi.to_density().fidelity(&psi).unwrap() - 1.0).abs() < 1e-15);
        let one = PureState::basis(l, &[1]).unwrap();
        assert_eq!(vacuum(l).fidelity(&one).unwrap(), 0.0);
        let mix = DensityOperator::from_populations(l, &[(&[0], 0.3), (&[1], 0.7)]).unwrap();
        let first = PureState::basis(l, &[0]).unwrap();
        assert!((mix.fidelity(&first).unwrap() - 0.3).abs() < 1e-15);
        let other = PureState::basis(ModeLayout::new(2, 1).unwrap(), &[0, 0]).unwrap();
        assert!(mix.fidelity(&other).is_err());
    }

    #[test]
    fn pure_state_rejects_unnormalized() {
        let l = ModeLayout::new(1, 1).unwrap();
        assert!(PureState::new(l, vec![c(1.0), c(1.0)]).is_err());
        assert!(PureState::new(l, vec![c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)]).is_ok());
    }

    #[test]
    fn tensor_then_trace_recovers_factors() {
        let a = fock(1, 2, &[1]).apply_loss(0, 0.6).unwrap();
        let b = fock(1, 2, &[2]);
        let ab = a.tensor(&b).unwrap();
        assert!((ab.trace() - 1.0).abs() < 1e-14);
        let back = ab.partial_trace(&[1]).unwrap();
        for (x, y) in back.data().iter().zip(a.data()) {
            assert!((x - y).norm() < 1e-15);
        }
    }
}
