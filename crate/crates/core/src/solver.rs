//! One round of the progressive estimation: minimise the weighted hinge
//! objective `sum_i xi_i (x_i - z_i'b)^+` subject to the sign constraints
//! carried by the current split values, extract the p-member interpolated
//! basis with its split weights and dual multipliers, and compute the
//! relative breakpoint that ends the segment.
//!
//! The minimisation is a primal active-set method on the piecewise-linear
//! program: descent steps build the interpolated working set up to a vertex,
//! then dual-sign checks pivot between vertices until the optimality
//! certificate holds. Degenerate ties are resolved combinatorially with the
//! precedence order "above-set events, then censored, then below-set
//! events", keyed by dataset index.

use thiserror::Error;

use crate::linalg::{self, dot};
use crate::model::{Dataset, SegmentFlag};
use crate::scalar::Scalar;

/// Absolute per-component tolerance for the dual certificate.
pub const TOL_DUAL: f64 = 1e-8;

const TOL_ACT: f64 = 1e-9;
const TOL_DIR: f64 = 1e-11;
const TOL_SLOPE: f64 = 1e-9;
const TOL_VIOLATION: f64 = 1e-9;
const TOL_SNAP: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("objective decreases along an unblocked feasible direction")]
    UnboundedObjective,
    #[error("active-set iteration guard exceeded: anti-cycling failed")]
    CycleDetected,
    #[error("relative breakpoint {0} is not positive")]
    NonPositiveBreakpoint(f64),
    #[error("updated split weight {w} for observation {index} lies outside [0,1]")]
    WeightOutOfRange { index: usize, w: f64 },
    #[error("interpolated covariates are rank deficient")]
    RankDeficientVertex,
    #[error("warm start violates the round constraints at observation {0}")]
    InfeasibleWarmStart(usize),
    #[error("invalid round input: {0}")]
    Invalid(String),
}

/// Inputs of one round at cumulative probability `tau`.
pub struct RoundInput<'a, F: Scalar> {
    pub dataset: &'a Dataset<F>,
    /// Positive per-observation masses (all ones for the plain estimator).
    pub weights: &'a [F],
    /// Current split values for uncensored observations, in [0,1].
    pub phi: &'a [F],
    /// Feasible coefficient vector to start from.
    pub warm_start: &'a [F],
    pub tau: F,
}

/// Active-set bookkeeping of a solved round.
#[derive(Debug, Clone)]
pub struct PartitionState<F: Scalar> {
    /// Split values at the round's start, one per observation.
    pub phi: Vec<F>,
    pub d_minus: Vec<usize>,
    pub d_zero: Vec<usize>,
    pub d_plus: Vec<usize>,
    /// Interpolated basis, ascending by index.
    pub s: Vec<usize>,
    /// Split weights aligned with `s`.
    pub w: Vec<F>,
    /// Dual multipliers for uncensored basis members.
    pub gamma: Vec<(usize, F)>,
    /// Interpolated non-basis observations with their side weights.
    pub extra_interpolated: Vec<(usize, F)>,
    /// Locally constant right-hand side of the round equation.
    pub h_hat: Vec<F>,
}

impl<F: Scalar> PartitionState<F> {
    pub fn w_of(&self, index: usize) -> Option<F> {
        self.s
            .iter()
            .position(|&i| i == index)
            .map(|pos| self.w[pos])
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutput<F: Scalar> {
    pub beta: Vec<F>,
    pub state: PartitionState<F>,
    /// Relative breakpoint in (0, 1].
    pub lambda_b: F,
    /// Split values carried to the next round.
    pub phi_next: Vec<F>,
    pub classification: SegmentFlag,
}

/// Outcome of a single active-set iteration.
pub enum StepOutcome<F: Scalar> {
    Moved,
    Optimal(Box<RoundOutput<F>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    DPlus,
    Censored,
    DMinus,
    DZero,
}

fn class_rank(c: Class) -> u8 {
    match c {
        Class::DPlus => 0,
        Class::Censored => 1,
        Class::DMinus => 2,
        Class::DZero => 3,
    }
}

struct Scan<F: Scalar> {
    slope: F,
    slope_scale: F,
    zero_blocks: Vec<usize>,
    zero_kinks: Vec<usize>,
    /// (step, index, slope increment when crossed)
    crossings: Vec<(F, usize, F)>,
}

enum Search<F: Scalar> {
    Enter { t: F, index: usize },
    NoDescent,
    NoCrossing,
}

#[derive(Clone, Copy)]
enum Mode {
    Descent,
    ZeroWalk,
}

struct Certificate<F: Scalar> {
    /// Multipliers aligned with the basis: gamma for uncensored members,
    /// (w - 1) for censored members.
    theta: Vec<F>,
    c: Vec<F>,
}

pub struct RoundSolver<'a, F: Scalar> {
    dataset: &'a Dataset<F>,
    xi: &'a [F],
    phi: Vec<F>,
    class: Vec<Class>,
    b: Vec<F>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    iters: usize,
    max_iters: usize,
    relaxed: bool,
}

impl<'a, F: Scalar> RoundSolver<'a, F> {
    pub fn new(input: &RoundInput<'a, F>) -> Result<Self, SolveError> {
        let n = input.dataset.n();
        let p = input.dataset.p();
        if input.weights.len() != n || input.phi.len() != n || input.warm_start.len() != p {
            return Err(SolveError::Invalid("input length mismatch".into()));
        }
        if input.weights.iter().any(|&w| w <= F::zero() || !w.is_finite()) {
            return Err(SolveError::Invalid("weights must be positive".into()));
        }
        let mut class = Vec::with_capacity(n);
        for i in 0..n {
            let c = if !input.dataset.delta(i) {
                Class::Censored
            } else if input.phi[i] == F::zero() {
                Class::DPlus
            } else if input.phi[i] == F::one() {
                Class::DMinus
            } else if input.phi[i] > F::zero() && input.phi[i] < F::one() {
                Class::DZero
            } else {
                return Err(SolveError::Invalid(format!(
                    "phi[{i}] = {} outside [0,1]",
                    input.phi[i]
                )));
            };
            class.push(c);
        }
        let b = input.warm_start.to_vec();
        let mut in_basis = vec![false; n];
        let mut basis = Vec::new();
        for i in 0..n {
            if class[i] == Class::DZero {
                basis.push(i);
                in_basis[i] = true;
            }
        }
        let solver = RoundSolver {
            dataset: input.dataset,
            xi: input.weights,
            phi: input.phi.to_vec(),
            class,
            b,
            basis,
            in_basis,
            iters: 0,
            max_iters: 1000 + 60 * n * (p + 1),
            relaxed: false,
        };
        solver.check_feasible()?;
        Ok(solver)
    }

    fn check_feasible(&self) -> Result<(), SolveError> {
        let tol = F::real(1e-7) * self.dataset.x_scale();
        for i in 0..self.dataset.n() {
            let r = self.resid(i);
            let ok = match self.class[i] {
                Class::Censored => true,
                Class::DPlus => r >= -tol,
                Class::DMinus => r <= tol,
                Class::DZero => r.abs() <= tol,
            };
            if !ok {
                return Err(SolveError::InfeasibleWarmStart(i));
            }
        }
        Ok(())
    }

    fn resid(&self, i: usize) -> F {
        self.dataset.x(i) - dot(self.dataset.z(i), &self.b)
    }

    fn tol_act(&self, i: usize) -> F {
        F::real(TOL_ACT) * (F::one() + self.dataset.x(i).abs())
    }

    pub fn beta(&self) -> &[F] {
        &self.b
    }

    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    /// Run active-set iterations to optimality.
    pub fn solve(&mut self) -> Result<RoundOutput<F>, SolveError> {
        loop {
            match self.step()? {
                StepOutcome::Moved => {}
                StepOutcome::Optimal(out) => return Ok(*out),
            }
        }
    }

    /// One iteration: a descent/build-up move below the vertex dimension, or
    /// a certificate check plus pivot at a vertex.
    pub fn step(&mut self) -> Result<StepOutcome<F>, SolveError> {
        self.iters += 1;
        if self.iters > self.max_iters {
            return Err(SolveError::CycleDetected);
        }
        if self.basis.len() < self.dataset.p() {
            self.expand()?;
            return Ok(StepOutcome::Moved);
        }
        self.snap()?;
        let cert = self.certificate()?;
        match self.first_violation(&cert) {
            Some(pos) => {
                self.pivot(pos, &cert)?;
                Ok(StepOutcome::Moved)
            }
            None => Ok(StepOutcome::Optimal(Box::new(self.finalize(&cert)?))),
        }
    }

    fn best_of(&self, candidates: &[usize]) -> usize {
        *candidates
            .iter()
            .min_by_key(|&&i| (class_rank(self.class[i]), i))
            .expect("non-empty candidate set")
    }

    fn scan_direction(&self, d: &[F], exclude: Option<usize>) -> Scan<F> {
        let n = self.dataset.n();
        let z_scale = F::one()
            + self
                .dataset
                .z(0)
                .iter()
                .fold(F::zero(), |m, &v| m.max(v.abs()));
        let tol_a = F::real(TOL_DIR) * z_scale;
        let mut scan = Scan {
            slope: F::zero(),
            slope_scale: F::zero(),
            zero_blocks: Vec::new(),
            zero_kinks: Vec::new(),
            crossings: Vec::new(),
        };
        for i in 0..n {
            if self.in_basis[i] {
                continue;
            }
            let a = dot(self.dataset.z(i), d);
            let xi = self.xi[i];
            scan.slope_scale += xi * a.abs();
            let r = self.resid(i);
            let excluded = exclude == Some(i);
            if r.abs() <= self.tol_act(i) {
                match self.class[i] {
                    Class::DPlus => {
                        if a > tol_a {
                            if !excluded {
                                scan.zero_blocks.push(i);
                            }
                        } else if a < -tol_a {
                            scan.slope += xi * (-a);
                            if !excluded {
                                scan.zero_kinks.push(i);
                            }
                        }
                    }
                    Class::DMinus => {
                        if a < -tol_a {
                            if !excluded {
                                scan.zero_blocks.push(i);
                            }
                        } else if a > tol_a && !excluded {
                            scan.zero_kinks.push(i);
                        }
                    }
                    Class::Censored => {
                        if a < -tol_a {
                            scan.slope += xi * (-a);
                            if !excluded {
                                scan.zero_kinks.push(i);
                            }
                        } else if a > tol_a && !excluded {
                            scan.zero_kinks.push(i);
                        }
                    }
                    Class::DZero => {
                        debug_assert!(false, "below-vertex equality member outside the basis");
                    }
                }
            } else if r > F::zero() {
                scan.slope -= xi * a;
                if a > tol_a {
                    scan.crossings.push((r / a, i, xi * a.abs()));
                }
            } else if a < -tol_a {
                scan.crossings.push((r / a, i, xi * a.abs()));
            }
        }
        scan
    }

    fn search(&self, mut scan: Scan<F>, mode: Mode) -> Result<Search<F>, SolveError> {
        if !scan.zero_blocks.is_empty() {
            return Ok(Search::Enter {
                t: F::zero(),
                index: self.best_of(&scan.zero_blocks),
            });
        }
        let tol_slope = F::real(TOL_SLOPE) * (scan.slope_scale + F::one());
        if let Mode::Descent = mode {
            if scan.slope >= -tol_slope {
                if !scan.zero_kinks.is_empty() {
                    return Ok(Search::Enter {
                        t: F::zero(),
                        index: self.best_of(&scan.zero_kinks),
                    });
                }
                return Ok(Search::NoDescent);
            }
        }
        scan.crossings
            .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut slope = scan.slope;
        let mut k = 0;
        let m = scan.crossings.len();
        while k < m {
            let t0 = scan.crossings[k].0;
            let mut j = k;
            let cluster_lim = t0 * (F::one() + F::real(1e-12)) + F::real(1e-15);
            while j < m && scan.crossings[j].0 <= cluster_lim {
                j += 1;
            }
            let cluster = &scan.crossings[k..j];
            if let Mode::ZeroWalk = mode {
                let members: Vec<usize> = cluster.iter().map(|c| c.1).collect();
                return Ok(Search::Enter {
                    t: t0,
                    index: self.best_of(&members),
                });
            }
            let has_uncensored = cluster
                .iter()
                .any(|&(_, i, _)| self.class[i] != Class::Censored);
            if has_uncensored {
                let members: Vec<usize> = cluster.iter().map(|c| c.1).collect();
                return Ok(Search::Enter {
                    t: t0,
                    index: self.best_of(&members),
                });
            }
            let mut order: Vec<&(F, usize, F)> = cluster.iter().collect();
            order.sort_by_key(|&&(_, i, _)| (class_rank(self.class[i]), i));
            for &&(_, i, inc) in &order {
                slope += inc;
                if slope >= -tol_slope {
                    return Ok(Search::Enter { t: t0, index: i });
                }
            }
            k = j;
        }
        match mode {
            Mode::ZeroWalk => Ok(Search::NoCrossing),
            Mode::Descent => Err(SolveError::UnboundedObjective),
        }
    }

    fn advance(&mut self, t: F, d: &[F]) {
        if t > F::zero() {
            for (bk, &dk) in self.b.iter_mut().zip(d) {
                *bk += t * dk;
            }
        }
        // restore exact interpolation of the working set
        if !self.basis.is_empty() {
            let rows: Vec<&[F]> = self.basis.iter().map(|&i| self.dataset.z(i)).collect();
            let deficit: Vec<F> = self
                .basis
                .iter()
                .map(|&i| self.dataset.x(i) - dot(self.dataset.z(i), &self.b))
                .collect();
            if let Some(corr) = linalg::min_norm_correction(&rows, &deficit) {
                for (bk, ck) in self.b.iter_mut().zip(corr) {
                    *bk += ck;
                }
            }
        }
    }

    fn enter(&mut self, index: usize) {
        debug_assert!(!self.in_basis[index]);
        self.basis.push(index);
        self.in_basis[index] = true;
    }

    fn normalize(d: &mut [F]) {
        let m = linalg::norm_inf(d);
        if m > F::zero() {
            for x in d.iter_mut() {
                *x = *x / m;
            }
        }
    }

    /// Build-up move while the working set is below the vertex dimension.
    fn expand(&mut self) -> Result<(), SolveError> {
        let p = self.dataset.p();
        let rows: Vec<&[F]> = self.basis.iter().map(|&i| self.dataset.z(i)).collect();
        let q = linalg::orthonormalize(&rows);
        if q.len() < self.basis.len() {
            return Err(SolveError::RankDeficientVertex);
        }
        // pull towards the observations still above the hyperplane
        let mut g = vec![F::zero(); p];
        for i in 0..self.dataset.n() {
            if !self.in_basis[i] && self.resid(i) > self.tol_act(i) {
                linalg::axpy(&mut g, self.xi[i], self.dataset.z(i));
            }
        }
        let mut d = linalg::project_out(&q, &g);
        let g_scale = linalg::norm_inf(&g) + F::one();
        if linalg::norm_inf(&d) > F::real(TOL_DIR) * g_scale {
            Self::normalize(&mut d);
            let scan = self.scan_direction(&d, None);
            match self.search(scan, Mode::Descent)? {
                Search::Enter { t, index } => {
                    self.advance(t, &d);
                    self.enter(index);
                    return Ok(());
                }
                Search::NoDescent | Search::NoCrossing => {}
            }
        }
        // stalled: absorb an interpolated observation if an independent one exists
        let mut actives: Vec<usize> = (0..self.dataset.n())
            .filter(|&i| !self.in_basis[i] && self.resid(i).abs() <= self.tol_act(i))
            .collect();
        actives.sort_by_key(|&i| (class_rank(self.class[i]), i));
        for &i in &actives {
            let res = linalg::project_out(&q, self.dataset.z(i));
            let scale = linalg::norm_inf(self.dataset.z(i)) + F::one();
            if linalg::norm_inf(&res) > F::real(1e-10) * scale {
                self.enter(i);
                return Ok(());
            }
        }
        // walk a zero-cost direction until some observation interpolates
        for base in linalg::null_basis(&q, p) {
            for sign in [F::one(), -F::one()] {
                let mut d: Vec<F> = base.iter().map(|&v| v * sign).collect();
                Self::normalize(&mut d);
                let scan = self.scan_direction(&d, None);
                if let Search::Enter { t, index } = self.search(scan, Mode::ZeroWalk)? {
                    self.advance(t, &d);
                    self.enter(index);
                    return Ok(());
                }
            }
        }
        Err(SolveError::RankDeficientVertex)
    }

    fn snap(&mut self) -> Result<(), SolveError> {
        let rows: Vec<Vec<F>> = self
            .basis
            .iter()
            .map(|&i| self.dataset.z(i).to_vec())
            .collect();
        let rhs: Vec<F> = self.basis.iter().map(|&i| self.dataset.x(i)).collect();
        self.b = linalg::solve(rows, rhs).ok_or(SolveError::RankDeficientVertex)?;
        Ok(())
    }

    /// Side weight of an interpolated observation outside the basis.
    fn extra_weight(&self, i: usize) -> F {
        match self.class[i] {
            Class::Censored | Class::DPlus => F::zero(),
            Class::DMinus => F::one(),
            Class::DZero => self.phi[i],
        }
    }

    fn certificate(&self) -> Result<Certificate<F>, SolveError> {
        let p = self.dataset.p();
        let mut c = vec![F::zero(); p];
        for i in 0..self.dataset.n() {
            if self.in_basis[i] {
                continue;
            }
            let r = self.resid(i);
            if r.abs() <= self.tol_act(i) {
                let coef = self.xi[i] * (F::one() - self.extra_weight(i));
                linalg::axpy(&mut c, coef, self.dataset.z(i));
            } else if r > F::zero() {
                linalg::axpy(&mut c, self.xi[i], self.dataset.z(i));
            }
        }
        for &j in &self.basis {
            if self.dataset.delta(j) {
                let coef = self.xi[j] * (F::one() - self.phi[j]);
                linalg::axpy(&mut c, coef, self.dataset.z(j));
            }
        }
        // columns xi_j z_j, row-major transpose for the solve
        let mut m = vec![vec![F::zero(); self.basis.len()]; p];
        for (col, &j) in self.basis.iter().enumerate() {
            for (row, &zr) in self.dataset.z(j).iter().enumerate() {
                m[row][col] = self.xi[j] * zr;
            }
        }
        let theta = linalg::solve(m, c.clone()).ok_or(SolveError::RankDeficientVertex)?;
        Ok(Certificate { theta, c })
    }

    fn violation_tol(&self, cert: &Certificate<F>) -> F {
        let scale = F::one() + linalg::norm_inf(&cert.theta);
        let base = F::real(TOL_VIOLATION) * scale;
        if self.relaxed {
            base * F::real(100.0)
        } else {
            base
        }
    }

    fn first_violation(&self, cert: &Certificate<F>) -> Option<usize> {
        let tol = self.violation_tol(cert);
        let mut order: Vec<usize> = (0..self.basis.len()).collect();
        order.sort_by_key(|&pos| (class_rank(self.class[self.basis[pos]]), self.basis[pos]));
        for pos in order {
            let j = self.basis[pos];
            let th = cert.theta[pos];
            let violated = match self.class[j] {
                Class::DPlus => th < -tol,
                Class::DMinus => th > tol,
                Class::DZero => false,
                Class::Censored => th > tol || th < -F::one() - tol,
            };
            if violated {
                return Some(pos);
            }
        }
        None
    }

    fn edge_direction(&self, j: usize, sigma: F) -> Result<Vec<F>, SolveError> {
        let mut rows: Vec<Vec<F>> = self
            .basis
            .iter()
            .map(|&i| self.dataset.z(i).to_vec())
            .collect();
        let mut rhs = vec![F::zero(); rows.len()];
        rows.push(self.dataset.z(j).to_vec());
        rhs.push(sigma);
        let mut d = linalg::solve(rows, rhs).ok_or(SolveError::RankDeficientVertex)?;
        // keep the defining component's sign while normalising
        let a_j = dot(self.dataset.z(j), &d);
        Self::normalize(&mut d);
        if (a_j > F::zero()) != (sigma > F::zero()) {
            for x in d.iter_mut() {
                *x = -*x;
            }
        }
        Ok(d)
    }

    fn relax_sigma(&self, j: usize, theta: F) -> F {
        match self.class[j] {
            Class::Censored => {
                if theta > -F::real(0.5) {
                    F::one() // w at or beyond 1: open towards the below set
                } else {
                    -F::one() // w at or beyond 0: open towards the above set
                }
            }
            Class::DPlus => -F::one(),
            Class::DMinus => F::one(),
            Class::DZero => unreachable!("equality members are never relaxed"),
        }
    }

    fn pivot(&mut self, pos: usize, cert: &Certificate<F>) -> Result<(), SolveError> {
        let j = self.basis.remove(pos);
        self.in_basis[j] = false;
        let sigma = self.relax_sigma(j, cert.theta[pos]);
        let d = self.edge_direction(j, sigma)?;
        let scan = self.scan_direction(&d, Some(j));
        match self.search(scan, Mode::Descent)? {
            Search::Enter { t, index } => {
                self.advance(t, &d);
                self.enter(index);
                Ok(())
            }
            Search::NoDescent | Search::NoCrossing => {
                // flat edge under tolerance noise: restore and accept with a
                // widened certificate tolerance
                self.basis.insert(pos, j);
                self.in_basis[j] = true;
                self.relaxed = true;
                Ok(())
            }
        }
    }

    fn classify(&mut self, cert: &Certificate<F>) -> SegmentFlag {
        let tol = self.violation_tol(cert);
        let mut nonunique = false;
        for pos in 0..self.basis.len() {
            let j = self.basis[pos];
            let th = cert.theta[pos];
            let tight = match self.class[j] {
                Class::DPlus | Class::DMinus => th.abs() <= tol,
                Class::Censored => th.abs() <= tol || (th + F::one()).abs() <= tol,
                Class::DZero => false,
            };
            if !tight {
                continue;
            }
            let sigma = self.relax_sigma(j, th);
            self.basis.remove(pos);
            self.in_basis[j] = false;
            let flat = match self.edge_direction(j, sigma) {
                Ok(d) => {
                    let scan = self.scan_direction(&d, Some(j));
                    let tol_slope = F::real(TOL_SLOPE) * (scan.slope_scale + F::one());
                    scan.zero_blocks.is_empty() && scan.slope.abs() <= tol_slope
                }
                Err(_) => false,
            };
            self.basis.insert(pos, j);
            self.in_basis[j] = true;
            if flat {
                nonunique = true;
                break;
            }
        }
        if nonunique {
            SegmentFlag::Nonunique
        } else if self.basis.iter().all(|&i| self.dataset.delta(i)) {
            SegmentFlag::UniqueUncensoredS
        } else {
            SegmentFlag::UniqueMixedS
        }
    }

    fn finalize(&mut self, cert: &Certificate<F>) -> Result<RoundOutput<F>, SolveError> {
        let classification = self.classify(cert);
        let n = self.dataset.n();

        // sort the basis (and the multipliers with it) by dataset index
        let mut order: Vec<usize> = (0..self.basis.len()).collect();
        order.sort_by_key(|&pos| self.basis[pos]);
        let s: Vec<usize> = order.iter().map(|&pos| self.basis[pos]).collect();
        let theta: Vec<F> = order.iter().map(|&pos| cert.theta[pos]).collect();

        let mut w = Vec::with_capacity(s.len());
        let mut gamma = Vec::new();
        for (pos, &j) in s.iter().enumerate() {
            if self.dataset.delta(j) {
                w.push(self.phi[j]);
                gamma.push((j, theta[pos]));
            } else {
                let mut wj = F::one() + theta[pos];
                if wj.abs() <= F::real(TOL_SNAP) {
                    wj = F::zero();
                }
                if (wj - F::one()).abs() <= F::real(TOL_SNAP) {
                    wj = F::one();
                }
                w.push(wj.max(F::zero()).min(F::one()));
            }
        }

        let mut extra_interpolated = Vec::new();
        for i in 0..n {
            if !self.in_basis[i] && self.resid(i).abs() <= self.tol_act(i) {
                extra_interpolated.push((i, self.extra_weight(i)));
            }
        }

        // data-side right-hand vector: c plus the censored basis contributions
        let mut h_hat = cert.c.clone();
        for (pos, &j) in s.iter().enumerate() {
            if !self.dataset.delta(j) {
                let coef = self.xi[j] * (F::one() - w[pos]);
                linalg::axpy(&mut h_hat, coef, self.dataset.z(j));
            }
        }

        let mut d_minus = Vec::new();
        let mut d_zero = Vec::new();
        let mut d_plus = Vec::new();
        for i in 0..n {
            match self.class[i] {
                Class::DMinus => d_minus.push(i),
                Class::DZero => d_zero.push(i),
                Class::DPlus => d_plus.push(i),
                Class::Censored => {}
            }
        }

        let state = PartitionState {
            phi: self.phi.clone(),
            d_minus,
            d_zero,
            d_plus,
            s,
            w,
            gamma,
            extra_interpolated,
            h_hat,
        };
        let lambda_b = compute_breakpoint(&state)?;
        let mut phi_next = self.phi.clone();
        for (idx, wv) in update_weights(&state, lambda_b)? {
            phi_next[idx] = wv;
        }
        Ok(RoundOutput {
            beta: self.b.clone(),
            state,
            lambda_b,
            phi_next,
            classification,
        })
    }
}

/// Solve one round from scratch.
pub fn solve_round<F: Scalar>(input: &RoundInput<'_, F>) -> Result<RoundOutput<F>, SolveError> {
    RoundSolver::new(input)?.solve()
}

/// Relative breakpoint: the smallest step at which an uncensored basis
/// weight reaches a bound, and 1 when no weight is moving.
pub fn compute_breakpoint<F: Scalar>(state: &PartitionState<F>) -> Result<F, SolveError> {
    let tol_gamma = F::real(1e-10) * (F::one() + linalg::norm_inf(&state.h_hat));
    let mut best: Option<F> = None;
    for &(idx, g) in &state.gamma {
        if g.abs() <= tol_gamma {
            continue;
        }
        let w = state
            .w_of(idx)
            .ok_or_else(|| SolveError::Invalid("gamma entry outside the basis".into()))?;
        let bound = if g > F::zero() { F::one() } else { F::zero() };
        let ratio = (bound - w) / g;
        best = Some(match best {
            Some(b) if b <= ratio => b,
            _ => ratio,
        });
    }
    let lambda = best.unwrap_or_else(F::one);
    if lambda <= F::zero() {
        return Err(SolveError::NonPositiveBreakpoint(lambda.as_f64()));
    }
    if lambda > F::one() {
        if lambda > F::one() + F::real(1e-9) {
            return Err(SolveError::Invalid(format!(
                "breakpoint {lambda} exceeds 1 beyond tolerance"
            )));
        }
        return Ok(F::one());
    }
    Ok(lambda)
}

/// Split-weight update at the breakpoint for uncensored basis members.
/// Returns the updated weights, snapped exactly onto a reached bound.
pub fn update_weights<F: Scalar>(
    state: &PartitionState<F>,
    lambda_b: F,
) -> Result<Vec<(usize, F)>, SolveError> {
    let mut out = Vec::with_capacity(state.gamma.len());
    for &(idx, g) in &state.gamma {
        let w = state
            .w_of(idx)
            .ok_or_else(|| SolveError::Invalid("gamma entry outside the basis".into()))?;
        let mut wv = w + lambda_b * g;
        if wv.abs() <= F::real(TOL_SNAP) {
            wv = F::zero();
        } else if (wv - F::one()).abs() <= F::real(TOL_SNAP) {
            wv = F::one();
        }
        if wv < F::zero() || wv > F::one() {
            return Err(SolveError::WeightOutOfRange {
                index: idx,
                w: wv.as_f64(),
            });
        }
        out.push((idx, wv));
    }
    Ok(out)
}

/// Select a p-member basis from an oversized interpolated set, honouring the
/// precedence "above-set events, censored, below-set events" after the
/// mandatory equality members. Returns the basis and the side weights
/// assigned to the left-out interpolated observations.
pub fn resolve_degeneracy<F: Scalar>(
    dataset: &Dataset<F>,
    phi: &[F],
    interpolated: &[usize],
) -> Result<(Vec<usize>, Vec<(usize, F)>), SolveError> {
    let p = dataset.p();
    let classify = |i: usize| -> Class {
        if !dataset.delta(i) {
            Class::Censored
        } else if phi[i] == F::zero() {
            Class::DPlus
        } else if phi[i] == F::one() {
            Class::DMinus
        } else {
            Class::DZero
        }
    };
    let mut order: Vec<usize> = interpolated.to_vec();
    order.sort_by_key(|&i| {
        let c = classify(i);
        let mandatory = if c == Class::DZero { 0u8 } else { 1u8 };
        (mandatory, class_rank(c), i)
    });
    let mut selected: Vec<usize> = Vec::with_capacity(p);
    let mut q: Vec<Vec<F>> = Vec::new();
    for &i in &order {
        if selected.len() == p {
            break;
        }
        let res = linalg::project_out(&q, dataset.z(i));
        let scale = linalg::norm_inf(dataset.z(i)) + F::one();
        let norm = dot(&res, &res).sqrt();
        if norm > F::real(1e-10) * scale {
            let inv = F::one() / norm;
            q.push(res.iter().map(|&v| v * inv).collect());
            selected.push(i);
        } else if classify(i) == Class::DZero {
            return Err(SolveError::RankDeficientVertex);
        }
    }
    if selected.len() < p {
        return Err(SolveError::RankDeficientVertex);
    }
    selected.sort_unstable();
    let mut sides = Vec::new();
    for &i in interpolated {
        if !selected.contains(&i) {
            let w = match classify(i) {
                Class::Censored | Class::DPlus => F::zero(),
                Class::DMinus => F::one(),
                Class::DZero => unreachable!("equality members are always selected"),
            };
            sides.push((i, w));
        }
    }
    Ok((selected, sides))
}

fn dot_indicator_side<F: Scalar>(r: F, tol: F) -> Option<bool> {
    if r.abs() <= tol {
        None
    } else {
        Some(r > F::zero())
    }
}

/// Machine-checkable optimality certificate for a recorded segment: the
/// interpolated basis must have rank p, the dual identity must hold within
/// `tol` per component, multiplier signs must match the partition, and all
/// recorded weights must lie in [0,1].
pub fn verify_segment<F: Scalar>(
    dataset: &Dataset<F>,
    weights: &[F],
    beta: &[F],
    basis: &[usize],
    w: &[F],
    gamma: &[(usize, F)],
    extra: &[(usize, F)],
    lambda_b: F,
    tol: F,
) -> Result<(), String> {
    let p = dataset.p();
    if basis.len() != p {
        return Err(format!("basis size {} != p {}", basis.len(), p));
    }
    let rows: Vec<&[F]> = basis.iter().map(|&i| dataset.z(i)).collect();
    if linalg::orthonormalize(&rows).len() < p {
        return Err("interpolated basis is rank deficient".into());
    }
    if !(lambda_b > F::zero() && lambda_b <= F::one()) {
        return Err(format!("lambda_b {lambda_b} outside (0,1]"));
    }
    let w_lookup = |i: usize| -> Option<F> {
        basis
            .iter()
            .position(|&j| j == i)
            .map(|pos| w[pos])
            .or_else(|| extra.iter().find(|&&(j, _)| j == i).map(|&(_, wv)| wv))
    };
    for (&j, &wv) in basis.iter().zip(w) {
        let _ = j;
        if wv < -tol || wv > F::one() + tol {
            return Err(format!("basis weight {wv} outside [0,1]"));
        }
    }
    // recompute the right-hand vector from the data
    let mut h = vec![F::zero(); p];
    for i in 0..dataset.n() {
        let r = dataset.x(i) - dot(dataset.z(i), beta);
        let tol_act = F::real(TOL_ACT) * (F::one() + dataset.x(i).abs());
        match w_lookup(i) {
            Some(wv) => {
                if r.abs() > F::real(1e-6) * (F::one() + dataset.x(i).abs()) {
                    return Err(format!("recorded interpolated observation {i} has residual {r}"));
                }
                linalg::axpy(&mut h, weights[i] * (F::one() - wv), dataset.z(i));
            }
            None => match dot_indicator_side(r, tol_act) {
                Some(true) => linalg::axpy(&mut h, weights[i], dataset.z(i)),
                Some(false) => {}
                None => {
                    // unrecorded interpolation: treat per the above-side indicator
                    linalg::axpy(&mut h, weights[i], dataset.z(i));
                }
            },
        }
    }
    let mut lhs = vec![F::zero(); p];
    for &(i, g) in gamma {
        if !dataset.delta(i) {
            return Err(format!("gamma recorded for censored observation {i}"));
        }
        linalg::axpy(&mut lhs, weights[i] * g, dataset.z(i));
        let w_here = w_lookup(i).ok_or_else(|| format!("gamma member {i} not in basis"))?;
        if w_here == F::zero() && g < -tol {
            return Err(format!("above-set member {i} has negative multiplier {g}"));
        }
        if w_here == F::one() && g > tol {
            return Err(format!("below-set member {i} has positive multiplier {g}"));
        }
    }
    for (k, (&l, &r)) in lhs.iter().zip(&h).enumerate() {
        if (l - r).abs() > tol {
            return Err(format!(
                "dual identity residual {} at component {k} exceeds {tol}",
                (l - r).abs()
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sample(x: &[f64], delta: &[bool]) -> Dataset<f64> {
        Dataset::from_parts(x.to_vec(), delta.to_vec(), vec![vec![1.0]; x.len()]).unwrap()
    }

    fn round<'a>(
        ds: &'a Dataset<f64>,
        xi: &'a [f64],
        phi: &'a [f64],
        warm: &'a [f64],
        tau: f64,
    ) -> RoundInput<'a, f64> {
        RoundInput {
            dataset: ds,
            weights: xi,
            phi,
            warm_start: warm,
            tau,
        }
    }

    #[test]
    fn zeroth_round_uncensored() {
        let ds = one_sample(&[1.0, 2.0, 3.0], &[true, true, true]);
        let xi = [1.0; 3];
        let phi = [0.0; 3];
        let warm = [0.0];
        let out = solve_round(&round(&ds, &xi, &phi, &warm, 0.0)).unwrap();
        assert_eq!(out.beta, vec![1.0]);
        assert_eq!(out.state.s, vec![0]);
        assert_eq!(out.state.h_hat, vec![3.0]);
        assert_eq!(out.state.gamma, vec![(0, 3.0)]);
        assert!((out.lambda_b - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(out.phi_next[0], 1.0);
    }

    #[test]
    fn zeroth_round_censored_first() {
        let ds = one_sample(&[1.0, 2.0, 3.0], &[false, true, true]);
        let xi = [1.0; 3];
        let phi = [0.0; 3];
        let warm = [0.0];
        let out = solve_round(&round(&ds, &xi, &phi, &warm, 0.0)).unwrap();
        assert_eq!(out.beta, vec![2.0]);
        assert_eq!(out.state.h_hat, vec![2.0]);
        assert!((out.lambda_b - 0.5).abs() < 1e-15);
    }

    #[test]
    fn second_round_reaches_final_quantile() {
        let ds = one_sample(&[1.0, 2.0, 3.0], &[false, true, true]);
        let xi = [1.0; 3];
        let phi = [0.0, 1.0, 0.0];
        let warm = [2.0];
        let out = solve_round(&round(&ds, &xi, &phi, &warm, 0.5)).unwrap();
        assert_eq!(out.beta, vec![3.0]);
        assert_eq!(out.state.gamma, vec![(2, 1.0)]);
        assert_eq!(out.lambda_b, 1.0);
    }

    #[test]
    fn descent_blocks_at_first_event() {
        let ds = one_sample(&[1.0, 2.0], &[true, true]);
        let xi = [1.0; 2];
        let phi = [0.0; 2];
        let warm = [0.0];
        let input = round(&ds, &xi, &phi, &warm, 0.0);
        let mut solver = RoundSolver::new(&input).unwrap();
        // first step: line search blocked by the first event
        match solver.step().unwrap() {
            StepOutcome::Moved => {}
            StepOutcome::Optimal(_) => panic!("expected a move"),
        }
        assert_eq!(solver.beta(), &[1.0]);
        assert_eq!(solver.basis(), &[0]);
        // second step: the vertex certificate holds
        match solver.step().unwrap() {
            StepOutcome::Optimal(out) => assert_eq!(out.beta, vec![1.0]),
            StepOutcome::Moved => panic!("expected optimality"),
        }
    }

    #[test]
    fn full_equality_vertex_is_immediately_optimal() {
        // two interpolated events pin the p=2 coefficient completely
        let ds = Dataset::from_parts(
            vec![1.0, 2.0, 5.0],
            vec![true, true, true],
            vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]],
        )
        .unwrap();
        let xi = [1.0; 3];
        let phi = [0.5, 0.5, 0.0];
        let warm = [1.0, 1.0]; // interpolates observations 0 and 1
        let input = round(&ds, &xi, &phi, &warm, 0.3);
        let mut solver = RoundSolver::new(&input).unwrap();
        match solver.step().unwrap() {
            StepOutcome::Optimal(out) => {
                assert_eq!(out.state.s, vec![0, 1]);
                assert_eq!(out.beta, vec![1.0, 1.0]);
            }
            StepOutcome::Moved => panic!("expected immediate optimality"),
        }
    }

    #[test]
    fn tail_round_sticks_to_last_followup() {
        let ds = one_sample(&[1.0, 2.0, 3.0], &[true, true, false]);
        let xi = [1.0; 3];
        let phi = [1.0, 1.0, 0.0];
        let warm = [2.0];
        let out = solve_round(&round(&ds, &xi, &phi, &warm, 2.0 / 3.0)).unwrap();
        assert_eq!(out.beta, vec![3.0]);
        assert_eq!(out.state.s, vec![2]);
        assert_eq!(out.state.w, vec![1.0]);
        assert_eq!(out.lambda_b, 1.0);
        assert_eq!(out.classification, SegmentFlag::Nonunique);
    }

    #[test]
    fn breakpoint_single_event() {
        let state: PartitionState<f64> = PartitionState {
            phi: vec![0.0],
            d_minus: vec![],
            d_zero: vec![],
            d_plus: vec![0],
            s: vec![0],
            w: vec![0.0],
            gamma: vec![(0, 3.0)],
            extra_interpolated: vec![],
            h_hat: vec![3.0],
        };
        assert!((compute_breakpoint(&state).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn breakpoint_defaults_to_one_without_moving_events() {
        let state: PartitionState<f64> = PartitionState {
            phi: vec![0.0],
            d_minus: vec![],
            d_zero: vec![],
            d_plus: vec![],
            s: vec![0],
            w: vec![1.0],
            gamma: vec![],
            extra_interpolated: vec![],
            h_hat: vec![0.0],
        };
        assert_eq!(compute_breakpoint(&state).unwrap(), 1.0);
    }

    #[test]
    fn breakpoint_negative_gamma_branch() {
        let state: PartitionState<f64> = PartitionState {
            phi: vec![0.5],
            d_minus: vec![],
            d_zero: vec![0],
            d_plus: vec![],
            s: vec![0],
            w: vec![0.5],
            gamma: vec![(0, -1.0)],
            extra_interpolated: vec![],
            h_hat: vec![-1.0],
        };
        assert!((compute_breakpoint(&state).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weight_update_reaches_bounds() {
        let state: PartitionState<f64> = PartitionState {
            phi: vec![0.0],
            d_minus: vec![],
            d_zero: vec![],
            d_plus: vec![0],
            s: vec![0],
            w: vec![0.0],
            gamma: vec![(0, 3.0)],
            extra_interpolated: vec![],
            h_hat: vec![3.0],
        };
        let updated = update_weights(&state, 1.0 / 3.0).unwrap();
        assert_eq!(updated, vec![(0, 1.0)]);

        let state2: PartitionState<f64> = PartitionState {
            phi: vec![0.5],
            d_minus: vec![],
            d_zero: vec![0],
            d_plus: vec![],
            s: vec![0],
            w: vec![0.5],
            gamma: vec![(0, -1.0)],
            extra_interpolated: vec![],
            h_hat: vec![-1.0],
        };
        let updated2 = update_weights(&state2, 0.5).unwrap();
        assert_eq!(updated2, vec![(0, 0.0)]);
    }

    #[test]
    fn degeneracy_prefers_lower_index_within_class() {
        let ds = one_sample(&[2.0, 2.0, 3.0], &[true, true, true]);
        let phi = [0.0; 3];
        let (s, sides) = resolve_degeneracy(&ds, &phi, &[0, 1]).unwrap();
        assert_eq!(s, vec![0]);
        assert_eq!(sides, vec![(1, 0.0)]);
    }

    #[test]
    fn degeneracy_identity_when_exact() {
        let ds = one_sample(&[2.0, 3.0], &[true, true]);
        let phi = [0.0; 2];
        let (s, sides) = resolve_degeneracy(&ds, &phi, &[0]).unwrap();
        assert_eq!(s, vec![0]);
        assert!(sides.is_empty());
    }

    #[test]
    fn degeneracy_event_precedes_censored() {
        let ds = one_sample(&[2.0, 2.0], &[false, true]);
        let phi = [0.0; 2];
        let (s, sides) = resolve_degeneracy(&ds, &phi, &[0, 1]).unwrap();
        assert_eq!(s, vec![1]);
        assert_eq!(sides, vec![(0, 0.0)]);
    }

    #[test]
    fn tied_events_split_mass_like_the_product_limit() {
        // two tied events at 2: the first round grants 1/3, the second 1/2,
        // composing to the 2/3 product-limit step
        let ds = one_sample(&[2.0, 2.0, 3.0], &[true, true, true]);
        let xi = [1.0; 3];
        let phi = [0.0; 3];
        let warm = [0.0];
        let out = solve_round(&round(&ds, &xi, &phi, &warm, 0.0)).unwrap();
        assert_eq!(out.beta, vec![2.0]);
        assert_eq!(out.state.s, vec![0]);
        assert!((out.lambda_b - 1.0 / 3.0).abs() < 1e-15);

        let phi2 = out.phi_next.clone();
        let out2 = solve_round(&round(&ds, &xi, &phi2, &[2.0], 1.0 / 3.0)).unwrap();
        assert_eq!(out2.beta, vec![2.0]);
        assert_eq!(out2.state.s, vec![1]);
        assert!((out2.lambda_b - 0.5).abs() < 1e-15);
        let survival = (1.0 - out.lambda_b) * (1.0 - out2.lambda_b);
        assert!((survival - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn certificate_verifies_on_solved_round() {
        let ds = one_sample(&[1.0, 2.0, 3.0], &[false, true, true]);
        let xi = [1.0; 3];
        let phi = [0.0; 3];
        let out = solve_round(&round(&ds, &xi, &phi, &[0.0], 0.0)).unwrap();
        verify_segment(
            &ds,
            &xi,
            &out.beta,
            &out.state.s,
            &out.state.w,
            &out.state.gamma,
            &out.state.extra_interpolated,
            out.lambda_b,
            TOL_DUAL,
        )
        .unwrap();
    }

    #[test]
    fn response_shift_equivariance() {
        // shifting x by z'c and the warm start by c shifts the vertex by c
        // and leaves the combinatorial state untouched
        let x = vec![1.0, 2.5, 3.0, 4.5, 0.5, 2.0];
        let delta = vec![true, true, false, true, false, true];
        let z: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.5],
            vec![1.0, 1.0],
            vec![1.0, 1.5],
            vec![1.0, 2.0],
            vec![1.0, 0.25],
        ];
        let ds = Dataset::from_parts(x.clone(), delta.clone(), z.clone()).unwrap();
        let c = [2.0, -1.5];
        let x_shift: Vec<f64> = x
            .iter()
            .zip(&z)
            .map(|(&xv, zr)| xv + c[0] * zr[0] + c[1] * zr[1])
            .collect();
        let ds2 = Dataset::from_parts(x_shift, delta, z).unwrap();
        let xi = [1.0; 6];
        let phi = [0.0; 6];
        let warm = [-10.0, 0.0];
        let warm2 = [-10.0 + c[0], c[1]];
        let a = solve_round(&round(&ds, &xi, &phi, &warm, 0.0)).unwrap();
        let b = solve_round(&round(&ds2, &xi, &phi, &warm2, 0.0)).unwrap();
        assert_eq!(a.state.s, b.state.s);
        assert_eq!(a.state.w, b.state.w);
        assert_eq!(a.lambda_b, b.lambda_b);
        for k in 0..2 {
            assert!((a.beta[k] + c[k] - b.beta[k]).abs() < 1e-10);
        }
        for ((ia, ga), (ib, gb)) in a.state.gamma.iter().zip(&b.state.gamma) {
            assert_eq!(ia, ib);
            assert!((ga - gb).abs() < 1e-9);
        }
    }
}
