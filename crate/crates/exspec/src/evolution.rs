//! Time propagation for the three flows the constructions downstream
//! consume: the linear Hamiltonian flow e^{-itH0}, the linearized flow
//! e^{tL1} around an excited state, and the full cubic flow.
//!
//! The linear flow is applied exactly in the discretized space through a
//! cached eigendecomposition of H0, so it contributes no stepping error
//! where it is used as a reference signal. The linearized flow uses the
//! implicit midpoint rule, which is A-stable and preserves every
//! quadratic invariant of the continuous flow exactly (the step is a
//! Cayley transform of L1, and the conserved form pairs with L1
//! antisymmetrically). The full cubic flow uses Strang splitting between
//! a Cayley step of H0 and the pointwise nonlinear phase; both substeps
//! conserve mass exactly, and the composition is second order.
//!
//! Every trace records a reflection horizon estimated from the momentum
//! content of the initial data: components near twice the rms momentum
//! travel at group speed twice their momentum, so they first reach the
//! wall at r_max / (4 k_rms). Decay fits refuse windows that extend past
//! the horizon, where the boxed flow and the free-space flow part ways.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, NormKind, RadialGrid};
use crate::linalg::{ComplexBandLu, RealBandLu, SymTridiag};
use crate::linear_spectrum::Potential;
use crate::linearized::{
    decompose, LinearizedOperator, SpectralDecomposition, TwoComponent,
};

/// Default step for the full cubic flow.
pub const DEFAULT_DT_NLS: f64 = 1e-3;
/// Default step for the linearized flow.
pub const DEFAULT_DT_LINEARIZED: f64 = 5e-3;
/// Relative mass drift that aborts a cubic-flow run: both substeps are
/// mass-exact, so any drift beyond roundoff means the step went bad.
pub const MASS_DRIFT_FAULT: f64 = 1e-8;
/// A linearized run aborts when the norm exceeds this factor times the
/// expected growth envelope.
const BLOWUP_FACTOR: f64 = 1e3;

/// Exact propagator for e^{-itH0} built from one full symmetric
/// tridiagonal eigendecomposition, reusable across times and fields.
pub struct H0Propagator {
    n: usize,
    /// Eigenvalues ascending.
    eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors in isometric coordinates, concatenated
    /// columns.
    basis: Vec<f64>,
}

const CACHE_MAGIC: &[u8; 8] = b"EXH0DIAG";

impl H0Propagator {
    /// Diagonalizes -Laplace + potential on the grid.
    pub fn new(grid: &RadialGrid, potential: &[f64]) -> Result<Self> {
        if potential.len() != grid.n_points {
            return Err(Error::ShapeMismatch(format!(
                "potential has {} values, grid has {}",
                potential.len(),
                grid.n_points
            )));
        }
        let h = grid.hamiltonian_x(potential);
        let (eigenvalues, basis) = h.eigen_all()?;
        Ok(H0Propagator { n: grid.n_points, eigenvalues, basis })
    }

    /// Like `new`, but reuses a diagonalization stored under `dir` when
    /// one exists for this grid and potential, and stores the fresh one
    /// otherwise. Pass the directory named by the cache environment
    /// variable to share the work across processes.
    pub fn with_cache(
        grid: &RadialGrid,
        potential: &[f64],
        dir: Option<&Path>,
    ) -> Result<Self> {
        let Some(dir) = dir else {
            return Self::new(grid, potential);
        };
        let path = Self::cache_path(dir, grid, potential);
        if let Some(prop) = Self::load(&path, grid.n_points) {
            return Ok(prop);
        }
        let prop = Self::new(grid, potential)?;
        fs::create_dir_all(dir)?;
        prop.store(&path)?;
        Ok(prop)
    }

    fn cache_path(dir: &Path, grid: &RadialGrid, potential: &[f64]) -> PathBuf {
        let mut hasher = DefaultHasher::new();
        grid.n_points.hash(&mut hasher);
        grid.r_max.to_bits().hash(&mut hasher);
        grid.dr.to_bits().hash(&mut hasher);
        for v in potential {
            v.to_bits().hash(&mut hasher);
        }
        dir.join(format!("h0-{:016x}.bin", hasher.finish()))
    }

    fn load(path: &Path, n: usize) -> Option<Self> {
        let mut file = fs::File::open(path).ok()?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic).ok()?;
        if &magic != CACHE_MAGIC {
            return None;
        }
        let mut len = [0u8; 8];
        file.read_exact(&mut len).ok()?;
        if u64::from_le_bytes(len) != n as u64 {
            return None;
        }
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).ok()?;
        if bytes.len() != 8 * (n + n * n) {
            return None;
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let eigenvalues: Vec<f64> = values.by_ref().take(n).collect();
        let basis: Vec<f64> = values.collect();
        Some(H0Propagator { n, eigenvalues, basis })
    }

    fn store(&self, path: &Path) -> Result<()> {
        let mut bytes =
            Vec::with_capacity(16 + 8 * (self.n + self.n * self.n));
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&(self.n as u64).to_le_bytes());
        for v in self.eigenvalues.iter().chain(&self.basis) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of bound states: eigenvalues below the continuum edge at
    /// zero.
    pub fn bound_count(&self) -> usize {
        self.eigenvalues.iter().take_while(|&&e| e < 0.0).count()
    }

    /// Expands an isometric-coordinate field in the eigenbasis.
    pub fn to_modes(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|j| {
                let col = &self.basis[j * self.n..(j + 1) * self.n];
                col.iter().zip(x).map(|(&b, v)| b * v).sum()
            })
            .collect()
    }

    /// Rebuilds the isometric-coordinate field from mode amplitudes.
    pub fn from_modes(&self, modes: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(modes.len(), self.n);
        let mut out = vec![Complex64::ZERO; self.n];
        for (j, &c) in modes.iter().enumerate() {
            if c == Complex64::ZERO {
                continue;
            }
            let col = &self.basis[j * self.n..(j + 1) * self.n];
            for (o, &b) in out.iter_mut().zip(col) {
                *o += b * c;
            }
        }
        out
    }

    /// Applies e^{-itH0} exactly in the discretized space.
    pub fn apply(&self, grid: &RadialGrid, f: &GridFunction, t: f64) -> GridFunction {
        let x = grid.to_x(f);
        let mut modes = self.to_modes(&x);
        for (c, &ev) in modes.iter_mut().zip(&self.eigenvalues) {
            *c *= Complex64::from_polar(1.0, -ev * t);
        }
        grid.from_x(&self.from_modes(&modes))
    }

    /// Projection onto the continuous spectral subspace: zeroes the
    /// bound-state amplitudes.
    pub fn project_continuum(&self, grid: &RadialGrid, f: &GridFunction) -> GridFunction {
        let x = grid.to_x(f);
        let mut modes = self.to_modes(&x);
        for c in modes.iter_mut().take(self.bound_count()) {
            *c = Complex64::ZERO;
        }
        grid.from_x(&self.from_modes(&modes))
    }
}

/// e^{-itH0} applied to one field at one time.
pub fn propagate_h0(
    xi: &GridFunction,
    t: f64,
    prop: &H0Propagator,
    grid: &RadialGrid,
) -> GridFunction {
    prop.apply(grid, xi, t)
}

/// Discrete-mode coordinates sampled along a linearized trace.
#[derive(Clone, Copy, Debug)]
pub struct CoordinateSample {
    pub a: Complex64,
    pub b: Complex64,
    pub alpha: Complex64,
    pub beta: Complex64,
}

/// Observable history of one propagation run. Norm columns are aligned
/// with `times`; columns that do not apply to the flow stay empty. For
/// two-component flows the Sobolev columns hold the root sum of squares
/// of the per-component norms and `linf` the larger component maximum.
#[derive(Clone, Debug, Default)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub linf: Vec<f64>,
    /// Squared L2 norm, the conserved mass of the cubic flow.
    pub mass: Vec<f64>,
    /// Conserved quadratic form of the linearized flow; empty otherwise.
    pub quadratic: Vec<f64>,
    /// Energy functional of the cubic flow; empty otherwise.
    pub hamiltonian: Vec<f64>,
    /// Discrete-mode coordinates when a spectral decomposition is
    /// attached to the run; empty otherwise.
    pub coords: Vec<CoordinateSample>,
    /// Time after which boundary reflections can contaminate decay
    /// measurements, estimated from the initial momentum content.
    pub reflection_horizon: f64,
    /// Steps between stored snapshots; zero when none were kept.
    pub snapshot_stride: usize,
    /// Times of the stored snapshots. The final state is always stored
    /// when snapshots are requested.
    pub snapshot_times: Vec<f64>,
    /// Scalar-field snapshots (cubic and linear Hamiltonian flows).
    pub scalar_snapshots: Vec<GridFunction>,
    /// Two-component snapshots (linearized flow).
    pub pair_snapshots: Vec<TwoComponent>,
}

impl EvolutionTrace {
    fn with_horizon(horizon: f64) -> Self {
        EvolutionTrace { reflection_horizon: horizon, ..Default::default() }
    }

    /// Checks the structural invariants: strictly increasing times and
    /// aligned observable columns.
    pub fn validate(&self) -> Result<()> {
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "trace times are not strictly increasing".into(),
            ));
        }
        let n = self.times.len();
        let aligned = [&self.l2, &self.h1, &self.h2, &self.linf, &self.mass]
            .iter()
            .all(|c| c.len() == n)
            && (self.quadratic.is_empty() || self.quadratic.len() == n)
            && (self.hamiltonian.is_empty() || self.hamiltonian.len() == n)
            && (self.coords.is_empty() || self.coords.len() == n)
            && (self.snapshot_times.len() == self.scalar_snapshots.len()
                || self.snapshot_times.len() == self.pair_snapshots.len());
        if !aligned {
            return Err(Error::InvalidParameter(
                "trace observable columns are not aligned with times".into(),
            ));
        }
        Ok(())
    }

    /// Observable column for a norm kind.
    pub fn column(&self, kind: NormKind) -> Result<&[f64]> {
        match kind {
            NormKind::L2 => Ok(&self.l2),
            NormKind::H1 => Ok(&self.h1),
            NormKind::H2 => Ok(&self.h2),
            NormKind::Linf => Ok(&self.linf),
            NormKind::L2Weighted(_) => Err(Error::InvalidParameter(
                "traces do not record weighted norms".into(),
            )),
        }
    }

    /// Serializes the observable columns as CSV. Optional columns appear
    /// only when recorded.
    pub fn observables_csv(&self) -> String {
        let mut header = String::from("t,l2,h1,h2,linf,mass");
        if !self.quadratic.is_empty() {
            header.push_str(",quadratic");
        }
        if !self.hamiltonian.is_empty() {
            header.push_str(",hamiltonian");
        }
        if !self.coords.is_empty() {
            header.push_str(
                ",re_a,im_a,re_b,im_b,re_alpha,im_alpha,re_beta,im_beta",
            );
        }
        let mut out = header;
        out.push('\n');
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.times[i], self.l2[i], self.h1[i], self.h2[i],
                self.linf[i], self.mass[i]
            ));
            if !self.quadratic.is_empty() {
                out.push_str(&format!(",{:.17e}", self.quadratic[i]));
            }
            if !self.hamiltonian.is_empty() {
                out.push_str(&format!(",{:.17e}", self.hamiltonian[i]));
            }
            if !self.coords.is_empty() {
                let c = &self.coords[i];
                out.push_str(&format!(
                    ",{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    c.a.re, c.a.im, c.b.re, c.b.im, c.alpha.re, c.alpha.im,
                    c.beta.re, c.beta.im
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// Root-mean-square asymptotic momentum from the quadratic form of the
/// flow generator: the spectral mean above the continuum edge. Local
/// oscillation inside a well inflates the bare kinetic energy without
/// moving anything, so the generator's spectral density is the honest
/// measure of travel speed; energy below the edge belongs to bound
/// content, which does not propagate at all.
fn rms_momentum(energy: f64, edge: f64, norm_sqr: f64) -> f64 {
    if norm_sqr == 0.0 {
        return 0.0;
    }
    (energy / norm_sqr - edge).max(0.0).sqrt()
}

/// Quadratic form of a real symmetric tridiagonal operator on a complex
/// field, together with the squared norm of the field.
fn quad_form_c(t: &SymTridiag, x: &[Complex64]) -> (f64, f64) {
    let mut y = vec![Complex64::ZERO; x.len()];
    t.matvec_complex(x, &mut y);
    let energy: f64 = x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
    let norm_sqr: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    (energy, norm_sqr)
}

/// Time at which components near twice the rms momentum, moving at
/// group speed twice their momentum, first reach the wall.
pub fn reflection_horizon(grid: &RadialGrid, k_rms: f64) -> f64 {
    grid.r_max / (4.0 * k_rms.max(1e-9))
}

fn pair_norm(grid: &RadialGrid, h: &TwoComponent, kind: NormKind) -> Result<f64> {
    let a = grid.norm(&h.c1, kind)?;
    let b = grid.norm(&h.c2, kind)?;
    match kind {
        NormKind::Linf => Ok(a.max(b)),
        _ => Ok((a * a + b * b).sqrt()),
    }
}

/// Observable history of the exact linear flow at the requested times.
/// Propagation is by phase multiplication in the eigenbasis, so the
/// times need not be uniformly spaced.
pub fn h0_observable_trace(
    prop: &H0Propagator,
    grid: &RadialGrid,
    xi0: &GridFunction,
    times: &[f64],
) -> Result<EvolutionTrace> {
    xi0.assert_finite()?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "sample times must be strictly increasing".into(),
        ));
    }
    let x0 = grid.to_x(xi0);
    let modes0 = prop.to_modes(&x0);
    // Spectral mean of the generator over the modes, bound content
    // excluded by the clamp at the continuum edge.
    let energy: f64 = modes0
        .iter()
        .zip(&prop.eigenvalues)
        .map(|(c, &ev)| ev.max(0.0) * c.norm_sqr())
        .sum();
    let norm_sqr: f64 = modes0.iter().map(|c| c.norm_sqr()).sum();
    let horizon = reflection_horizon(grid, rms_momentum(energy, 0.0, norm_sqr));
    let mut trace = EvolutionTrace::with_horizon(horizon);
    for &t in times {
        let mut modes = modes0.clone();
        for (c, &ev) in modes.iter_mut().zip(&prop.eigenvalues) {
            *c *= Complex64::from_polar(1.0, -ev * t);
        }
        let f = grid.from_x(&prop.from_modes(&modes));
        trace.times.push(t);
        trace.l2.push(grid.norm(&f, NormKind::L2)?);
        trace.h1.push(grid.norm(&f, NormKind::H1)?);
        trace.h2.push(grid.norm(&f, NormKind::H2)?);
        trace.linf.push(grid.norm(&f, NormKind::Linf)?);
        let l2 = *trace.l2.last().unwrap();
        trace.mass.push(l2 * l2);
    }
    trace.validate()?;
    Ok(trace)
}

fn tri_entry(t: &SymTridiag, p: usize, q: usize) -> f64 {
    if p == q {
        t.diag[p]
    } else {
        t.off[p.min(q)]
    }
}

/// Implicit midpoint stepper for d/dt h = L1 h on real fields in
/// isometric coordinates. The operator is real, so complex data
/// propagates by stepping real and imaginary parts independently.
pub struct LinearizedStepper {
    n: usize,
    dt: f64,
    half: f64,
    /// Factorization of I - (dt/2) L1 on interleaved unknowns.
    lu: RealBandLu,
    h: SymTridiag,
    l_plus: SymTridiag,
    scratch1: Vec<f64>,
    scratch2: Vec<f64>,
    interleaved: Vec<f64>,
}

impl LinearizedStepper {
    pub fn new(op: &LinearizedOperator, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "step dt = {dt} must be positive"
            )));
        }
        let n = op.h.len();
        let a = 0.5 * dt;
        let h = &op.h;
        let lp = &op.l_plus;
        let lu = RealBandLu::factor(2 * n, 3, |i, j| {
            if i == j {
                return 1.0;
            }
            let (p, q) = (i / 2, j / 2);
            if p.abs_diff(q) > 1 {
                return 0.0;
            }
            if i % 2 == 0 && j % 2 == 1 {
                -a * tri_entry(h, p, q)
            } else if i % 2 == 1 && j % 2 == 0 {
                a * tri_entry(lp, p, q)
            } else {
                0.0
            }
        })?;
        Ok(LinearizedStepper {
            n,
            dt,
            half: a,
            lu,
            h: op.h.clone(),
            l_plus: op.l_plus.clone(),
            scratch1: vec![0.0; n],
            scratch2: vec![0.0; n],
            interleaved: vec![0.0; 2 * n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step in place: solves
    /// (I - dt/2 L1) h' = (I + dt/2 L1) h.
    pub fn step(&mut self, x1: &mut [f64], x2: &mut [f64]) -> Result<()> {
        assert_eq!(x1.len(), self.n);
        assert_eq!(x2.len(), self.n);
        self.h.matvec(x2, &mut self.scratch1);
        self.l_plus.matvec(x1, &mut self.scratch2);
        for j in 0..self.n {
            self.interleaved[2 * j] = x1[j] + self.half * self.scratch1[j];
            self.interleaved[2 * j + 1] = x2[j] - self.half * self.scratch2[j];
        }
        self.lu.solve_in_place(&mut self.interleaved)?;
        for j in 0..self.n {
            x1[j] = self.interleaved[2 * j];
            x2[j] = self.interleaved[2 * j + 1];
        }
        Ok(())
    }
}

/// Options for a linearized run.
pub struct LinearizedRunOptions<'a> {
    /// Approximate number of observable rows (the stride is derived).
    pub sample_count: usize,
    /// Records discrete-mode coordinates along the trace when given.
    pub decomposition: Option<&'a SpectralDecomposition>,
    /// Expected exponential growth rate; the blowup guard allows the
    /// norm a large factor above exp(2 rate t) before declaring the
    /// step unstable. None means no growth is expected.
    pub growth_rate: Option<f64>,
    /// Steps between stored snapshots; zero keeps none.
    pub snapshot_stride: usize,
}

impl Default for LinearizedRunOptions<'static> {
    fn default() -> Self {
        LinearizedRunOptions {
            sample_count: 400,
            decomposition: None,
            growth_rate: None,
            snapshot_stride: 0,
        }
    }
}

struct PairState {
    re1: Vec<f64>,
    re2: Vec<f64>,
    im1: Vec<f64>,
    im2: Vec<f64>,
    has_im: bool,
}

impl PairState {
    fn new(grid: &RadialGrid, h: &TwoComponent) -> Self {
        let x1 = grid.to_x(&h.c1);
        let x2 = grid.to_x(&h.c2);
        let has_im = x1.iter().chain(&x2).any(|v| v.im != 0.0);
        PairState {
            re1: x1.iter().map(|v| v.re).collect(),
            re2: x2.iter().map(|v| v.re).collect(),
            im1: x1.iter().map(|v| v.im).collect(),
            im2: x2.iter().map(|v| v.im).collect(),
            has_im,
        }
    }

    fn field(&self, grid: &RadialGrid) -> TwoComponent {
        let c1: Vec<Complex64> = self
            .re1
            .iter()
            .zip(&self.im1)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        let c2: Vec<Complex64> = self
            .re2
            .iter()
            .zip(&self.im2)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        TwoComponent { c1: grid.from_x(&c1), c2: grid.from_x(&c2) }
    }
}

/// Implicit midpoint propagation of d/dt h = L1 h with default options.
pub fn propagate_linearized(
    eta0: &TwoComponent,
    t_final: f64,
    dt: f64,
    op: &LinearizedOperator,
    grid: &RadialGrid,
) -> Result<EvolutionTrace> {
    propagate_linearized_opts(
        eta0,
        t_final,
        dt,
        op,
        grid,
        &LinearizedRunOptions::default(),
    )
}

/// Implicit midpoint propagation of d/dt h = L1 h. The step count is
/// the nearest integer to t_final / dt, and the step is adjusted to
/// land on t_final exactly.
pub fn propagate_linearized_opts(
    eta0: &TwoComponent,
    t_final: f64,
    dt: f64,
    op: &LinearizedOperator,
    grid: &RadialGrid,
    opts: &LinearizedRunOptions,
) -> Result<EvolutionTrace> {
    eta0.c1.assert_finite()?;
    eta0.c2.assert_finite()?;
    if !t_final.is_finite() || t_final <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "final time {t_final} must be positive"
        )));
    }
    if !dt.is_finite() || dt <= 0.0 || dt > t_final {
        return Err(Error::InvalidParameter(format!(
            "step dt = {dt} must lie in (0, t_final]"
        )));
    }
    let n_steps = ((t_final / dt).round() as usize).max(1);
    let dt_eff = t_final / n_steps as f64;
    let stride = (n_steps / opts.sample_count.max(1)).max(1);

    let mut stepper = LinearizedStepper::new(op, dt_eff)?;
    let mut state = PairState::new(grid, eta0);
    let k_rms = {
        let x1 = grid.to_x(&eta0.c1);
        let x2 = grid.to_x(&eta0.c2);
        let joined: Vec<Complex64> =
            x1.iter().chain(&x2).copied().collect();
        rms_momentum_x(grid, &joined)
    };
    let mut trace = EvolutionTrace::with_horizon(reflection_horizon(grid, k_rms));
    trace.snapshot_stride = opts.snapshot_stride;

    let rate = opts.growth_rate.unwrap_or(0.0).max(0.0);
    let mut l2_start = 0.0;

    for step in 0..=n_steps {
        let t = step as f64 * dt_eff;
        let at_sample = step % stride == 0 || step == n_steps;
        let at_snapshot = opts.snapshot_stride > 0
            && (step % opts.snapshot_stride == 0 || step == n_steps);
        if at_sample || at_snapshot {
            let h = state.field(grid);
            if at_snapshot {
                trace.snapshot_times.push(t);
                trace.pair_snapshots.push(h.clone());
            }
            if at_sample {
                h.c1.assert_finite().map_err(|_| {
                    Error::IntegratorFault(format!(
                        "non-finite field at t = {t:.6}; reduce dt"
                    ))
                })?;
                let l2 = pair_norm(grid, &h, NormKind::L2)?;
                if step == 0 {
                    l2_start = l2;
                } else if l2 > BLOWUP_FACTOR * l2_start * (2.0 * rate * t).exp() {
                    return Err(Error::IntegratorFault(format!(
                        "norm {l2:.3e} at t = {t:.3} exceeds the stability \
                         envelope {:.3e}; reduce dt",
                        BLOWUP_FACTOR * l2_start * (2.0 * rate * t).exp()
                    )));
                }
                trace.times.push(t);
                trace.l2.push(l2);
                trace.h1.push(pair_norm(grid, &h, NormKind::H1)?);
                trace.h2.push(pair_norm(grid, &h, NormKind::H2)?);
                trace.linf.push(pair_norm(grid, &h, NormKind::Linf)?);
                trace.mass.push(l2 * l2);
                trace.quadratic.push(op.quadratic_form(grid, &h));
                if let Some(dec) = opts.decomposition {
                    let c = decompose(op, dec, grid, &h)?;
                    trace.coords.push(CoordinateSample {
                        a: c.a,
                        b: c.b,
                        alpha: c.alpha,
                        beta: c.beta,
                    });
                }
            }
        }
        if step < n_steps {
            stepper.step(&mut state.re1, &mut state.re2)?;
            if state.has_im {
                stepper.step(&mut state.im1, &mut state.im2)?;
            }
        }
    }
    trace.validate()?;
    Ok(trace)
}

/// Options for a cubic-flow run.
pub struct NlsRunOptions {
    /// Approximate number of observable rows (the stride is derived).
    pub sample_count: usize,
    /// Steps between stored snapshots; zero keeps none.
    pub snapshot_stride: usize,
}

impl Default for NlsRunOptions {
    fn default() -> Self {
        NlsRunOptions { sample_count: 400, snapshot_stride: 0 }
    }
}

/// Energy functional of the cubic flow in isometric coordinates, using
/// the same stencil as the propagator: half the quadratic form of H0
/// plus a quarter of the quartic term.
fn cubic_hamiltonian(
    h0: &SymTridiag,
    inv_w: &[f64],
    lambda: f64,
    x: &[Complex64],
) -> f64 {
    let mut hx = vec![Complex64::ZERO; x.len()];
    h0.matvec_complex(x, &mut hx);
    let quad: f64 = x.iter().zip(&hx).map(|(a, b)| (a.conj() * b).re).sum();
    let quartic: f64 = x
        .iter()
        .zip(inv_w)
        .map(|(v, &iw)| v.norm_sqr() * v.norm_sqr() * iw)
        .sum();
    0.5 * quad + 0.25 * lambda * quartic
}

/// Strang-split propagation of the cubic flow with default options.
pub fn propagate_nls(
    psi0: &GridFunction,
    t_final: f64,
    dt: f64,
    potential: &Potential,
    lambda: f64,
    grid: &RadialGrid,
) -> Result<EvolutionTrace> {
    propagate_nls_opts(
        psi0,
        t_final,
        dt,
        potential,
        lambda,
        grid,
        &NlsRunOptions::default(),
    )
}

/// Strang-split propagation of i d/dt psi = H0 psi + lambda |psi|^2 psi:
/// a half step of the pointwise nonlinear phase, a Cayley step of H0,
/// and another half phase. Both substeps conserve mass exactly; the
/// Cayley transform of the real symmetric H0 is unitary.
pub fn propagate_nls_opts(
    psi0: &GridFunction,
    t_final: f64,
    dt: f64,
    potential: &Potential,
    lambda: f64,
    grid: &RadialGrid,
    opts: &NlsRunOptions,
) -> Result<EvolutionTrace> {
    psi0.assert_finite()?;
    if !t_final.is_finite() || t_final <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "final time {t_final} must be positive"
        )));
    }
    if !dt.is_finite() || dt <= 0.0 || dt > t_final {
        return Err(Error::InvalidParameter(format!(
            "step dt = {dt} must lie in (0, t_final]"
        )));
    }
    let n = grid.n_points;
    let v = potential.sample(grid);
    let h0 = grid.hamiltonian_x(&v);
    let a = 0.5 * dt;
    let lu = ComplexBandLu::factor(n, 1, |i, j| {
        if i == j {
            Complex64::new(1.0, a * h0.diag[i])
        } else if i.abs_diff(j) == 1 {
            Complex64::new(0.0, a * h0.off[i.min(j)])
        } else {
            Complex64::ZERO
        }
    })?;
    let inv_w: Vec<f64> = grid.quad_weights.iter().map(|&w| 1.0 / w).collect();

    let n_steps = ((t_final / dt).round() as usize).max(1);
    let dt_eff = t_final / n_steps as f64;
    let half_eff = 0.5 * dt_eff;
    let stride = (n_steps / opts.sample_count.max(1)).max(1);

    let mut x = grid.to_x(psi0);
    let mut hx = vec![Complex64::ZERO; n];
    let horizon = reflection_horizon(grid, rms_momentum_x(grid, &x));
    let mut trace = EvolutionTrace::with_horizon(horizon);
    trace.snapshot_stride = opts.snapshot_stride;
    let mass0: f64 = x.iter().map(|v| v.norm_sqr()).sum();

    for step in 0..=n_steps {
        let t = step as f64 * dt_eff;
        let at_sample = step % stride == 0 || step == n_steps;
        let at_snapshot = opts.snapshot_stride > 0
            && (step % opts.snapshot_stride == 0 || step == n_steps);
        if at_snapshot {
            trace.snapshot_times.push(t);
            trace.scalar_snapshots.push(grid.from_x(&x));
        }
        if at_sample {
            let mass: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            if !mass.is_finite()
                || (mass0 > 0.0 && (mass / mass0 - 1.0).abs() > MASS_DRIFT_FAULT)
            {
                return Err(Error::IntegratorFault(format!(
                    "relative mass drift {:.3e} at t = {t:.6} exceeds {MASS_DRIFT_FAULT:.0e}",
                    mass / mass0 - 1.0
                )));
            }
            let f = grid.from_x(&x);
            trace.times.push(t);
            trace.l2.push(grid.norm(&f, NormKind::L2)?);
            trace.h1.push(grid.norm(&f, NormKind::H1)?);
            trace.h2.push(grid.norm(&f, NormKind::H2)?);
            trace.linf.push(grid.norm(&f, NormKind::Linf)?);
            trace.mass.push(mass);
            trace.hamiltonian.push(cubic_hamiltonian(&h0, &inv_w, lambda, &x));
        }
        if step < n_steps {
            for (xv, &iw) in x.iter_mut().zip(&inv_w) {
                let amp2 = xv.norm_sqr() * iw;
                *xv *= Complex64::from_polar(1.0, -lambda * amp2 * half_eff);
            }
            h0.matvec_complex(&x, &mut hx);
            for (xv, hv) in x.iter_mut().zip(&hx) {
                *xv -= Complex64::new(0.0, half_eff) * hv;
            }
            lu.solve_in_place(&mut x)?;
            for (xv, &iw) in x.iter_mut().zip(&inv_w) {
                let amp2 = xv.norm_sqr() * iw;
                *xv *= Complex64::from_polar(1.0, -lambda * amp2 * half_eff);
            }
        }
    }
    trace.validate()?;
    Ok(trace)
}

/// Least-squares slope of log norm against log time over the window.
/// Refuses windows that extend past the trace's reflection horizon.
pub fn decay_fit(
    trace: &EvolutionTrace,
    kind: NormKind,
    window: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = window;
    if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || hi <= lo {
        return Err(Error::InvalidParameter(format!(
            "window ({lo}, {hi}) must satisfy 0 < lo < hi"
        )));
    }
    if hi > trace.reflection_horizon * (1.0 + 1e-9) {
        return Err(Error::Window(format!(
            "window end {hi} lies past the boundary-reflection horizon \
             {:.3} of this trace",
            trace.reflection_horizon
        )));
    }
    let col = trace.column(kind)?;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (&t, &y) in trace.times.iter().zip(col) {
        if t >= lo && t <= hi {
            if y <= 0.0 {
                return Err(Error::Window(format!(
                    "norm vanished at t = {t}; no log slope exists"
                )));
            }
            ts.push(t.ln());
            ys.push(y.ln());
        }
    }
    if ts.len() < 3 {
        return Err(Error::Window(format!(
            "only {} samples in the window; need at least 3",
            ts.len()
        )));
    }
    Ok(least_squares_slope(&ts, &ys))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    sxy / sxx
}

/// Worst max/min ratio of the H1 and H2 norms along a linearized run;
/// near one when the flow neither grows nor decays in Sobolev norms.
pub fn norm_equivalence_check(
    eta0: &TwoComponent,
    t_final: f64,
    dt: f64,
    op: &LinearizedOperator,
    grid: &RadialGrid,
) -> Result<f64> {
    let trace = propagate_linearized(eta0, t_final, dt, op, grid)?;
    let ratio = |col: &[f64]| {
        let max = col.iter().cloned().fold(f64::MIN, f64::max);
        let min = col.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    };
    Ok(ratio(&trace.h1).max(ratio(&trace.h2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::linear_spectrum::solve_bound_states;
    use crate::linearized::assemble;
    use crate::nonlinear_states::{continue_branch, Family, Target};
    use std::sync::OnceLock;
    use std::time::Instant;

    struct Setup {
        grid: RadialGrid,
        potential: Potential,
        op: LinearizedOperator,
    }

    fn setup_on(potential: Potential, n_target: f64) -> Setup {
        let grid = make_grid(120.0, 6000, 0.25).unwrap();
        let spec = solve_bound_states(&grid, &potential).unwrap();
        let state = continue_branch(
            &grid,
            &spec,
            &potential,
            Family::Excited,
            Target::Norm(n_target),
            1.0,
        )
        .unwrap();
        let op = assemble(&grid, &potential, &spec, &state).unwrap();
        Setup { grid, potential, op }
    }

    fn resonant() -> &'static Setup {
        static CELL: OnceLock<Setup> = OnceLock::new();
        CELL.get_or_init(|| setup_on(Potential::preset_resonant(), 0.2))
    }

    fn h0_prop() -> &'static H0Propagator {
        static CELL: OnceLock<H0Propagator> = OnceLock::new();
        CELL.get_or_init(|| {
            let s = resonant();
            let started = Instant::now();
            let prop =
                H0Propagator::new(&s.grid, &s.potential.sample(&s.grid)).unwrap();
            eprintln!("h0 diagonalization: {:.1?}", started.elapsed());
            prop
        })
    }

    fn bump(grid: &RadialGrid, width_sqr: f64) -> GridFunction {
        GridFunction::from_fn(grid, |r| {
            Complex64::new((-r * r / (2.0 * width_sqr)).exp(), 0.0)
        })
    }

    #[test]
    fn h0_flow_is_unitary_and_fixes_eigenstates() {
        let s = resonant();
        let prop = h0_prop();
        let f = bump(&s.grid, 4.0);

        let at_zero = prop.apply(&s.grid, &f, 0.0);
        let dev = s.grid.norm_l2(&at_zero.sub(&f)) / s.grid.norm_l2(&f);
        assert!(dev <= 1e-12, "t = 0 deviation {dev:.3e}");

        let t = 37.5;
        let moved = prop.apply(&s.grid, &f, t);
        let drift =
            (s.grid.norm_l2(&moved) / s.grid.norm_l2(&f) - 1.0).abs();
        assert!(drift <= 1e-12, "norm drift {drift:.3e}");

        let spec = solve_bound_states(&s.grid, &s.potential).unwrap();
        let phi1 = GridFunction::from_real(&spec.phi1);
        let rotated = prop.apply(&s.grid, &phi1, t);
        let expected = phi1.scaled(Complex64::from_polar(1.0, -spec.e1 * t));
        let err = s.grid.norm_l2(&rotated.sub(&expected));
        eprintln!("eigenstate phase error {err:.3e}");
        assert!(err <= 1e-9, "eigenstate phase error {err:.3e}");
    }

    #[test]
    fn continuum_bump_disperses_at_the_free_rate() {
        let s = resonant();
        let prop = h0_prop();
        assert_eq!(prop.bound_count(), 2);

        let f = prop.project_continuum(&s.grid, &bump(&s.grid, 4.0));
        let times: Vec<f64> =
            (0..40).map(|i| 1.0 * (46.0f64).powf(i as f64 / 39.0)).collect();
        let trace = h0_observable_trace(prop, &s.grid, &f, &times).unwrap();
        eprintln!("reflection horizon {:.2}", trace.reflection_horizon);

        let slope = decay_fit(&trace, NormKind::Linf, (5.0, 40.0)).unwrap();
        eprintln!("continuum bump Linf slope {slope:.3}");
        assert!(
            (-1.8..=-1.2).contains(&slope),
            "Linf decay slope {slope:.3} outside [-1.8, -1.2]"
        );

        let flat = decay_fit(&trace, NormKind::L2, (5.0, 40.0)).unwrap();
        assert!(flat.abs() <= 0.05, "L2 slope {flat:.2e} should vanish");
    }

    #[test]
    fn free_particle_control_matches_the_exact_rate() {
        let grid = make_grid(120.0, 3000, 0.25).unwrap();
        let zeros = vec![0.0; grid.n_points];
        let prop = H0Propagator::new(&grid, &zeros).unwrap();
        assert_eq!(prop.bound_count(), 0);

        let f = bump(&grid, 4.0);
        let times: Vec<f64> =
            (0..32).map(|i| 2.0 * (23.0f64).powf(i as f64 / 31.0)).collect();
        let trace = h0_observable_trace(&prop, &grid, &f, &times).unwrap();
        let slope = decay_fit(&trace, NormKind::Linf, (5.0, 40.0)).unwrap();
        eprintln!("free-particle Linf slope {slope:.3}");
        assert!(
            (slope + 1.5).abs() <= 0.1,
            "free decay slope {slope:.3} not within 0.1 of -1.5"
        );
    }

    #[test]
    fn diagonalization_cache_roundtrips_bitwise() {
        let grid = make_grid(30.0, 400, 0.25).unwrap();
        let potential = Potential::preset_resonant();
        let v = potential.sample(&grid);
        let dir = std::env::temp_dir().join("exspec-h0-cache-test");
        let _ = fs::remove_dir_all(&dir);

        let first = H0Propagator::with_cache(&grid, &v, Some(&dir)).unwrap();
        let second = H0Propagator::with_cache(&grid, &v, Some(&dir)).unwrap();
        assert_eq!(first.eigenvalues, second.eigenvalues);
        assert_eq!(first.basis, second.basis);

        let f = bump(&grid, 2.0);
        let a = first.apply(&grid, &f, 3.0);
        let b = second.apply(&grid, &f, 3.0);
        assert_eq!(a.values, b.values);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn zero_mode_is_a_fixed_point_of_the_linearized_flow() {
        let s = resonant();
        let h0 = TwoComponent {
            c1: GridFunction::zeros(s.grid.n_points),
            c2: GridFunction::from_real(&s.op.state.q),
        };
        let trace =
            propagate_linearized(&h0, 50.0, DEFAULT_DT_LINEARIZED, &s.op, &s.grid)
                .unwrap();
        let start = trace.l2[0];
        let drift = trace
            .l2
            .iter()
            .map(|&v| (v - start).abs())
            .fold(0.0, f64::max)
            / start;
        eprintln!("zero-mode norm drift {drift:.3e}");
        assert!(drift <= 1e-8, "zero mode drifted by {drift:.3e}");
    }

    #[test]
    fn quadratic_form_is_conserved_exactly() {
        let s = resonant();
        let b = bump(&s.grid, 9.0);
        let h = TwoComponent { c1: b.clone(), c2: b.scaled(Complex64::new(0.7, 0.0)) };
        let trace = propagate_linearized(&h, 50.0, DEFAULT_DT_LINEARIZED, &s.op, &s.grid)
            .unwrap();
        let q0 = trace.quadratic[0];
        let drift = trace
            .quadratic
            .iter()
            .map(|&q| (q - q0).abs())
            .fold(0.0, f64::max)
            / q0.abs();
        eprintln!("quadratic form drift {drift:.3e} (q0 = {q0:.6e})");
        assert!(drift <= 1e-9, "quadratic form drifted by {drift:.3e}");
    }

    #[test]
    fn sigma3_conjugation_reverses_the_flow() {
        let s = resonant();
        let b = bump(&s.grid, 9.0);
        let h0 = TwoComponent { c1: b.clone(), c2: b.scaled(Complex64::new(0.4, 0.0)) };
        let n_steps = 2000;
        let dt = 1e-3;

        let mut stepper = LinearizedStepper::new(&s.op, dt).unwrap();
        let mut state = PairState::new(&s.grid, &h0);
        for _ in 0..n_steps {
            stepper.step(&mut state.re1, &mut state.re2).unwrap();
        }
        let forward = state.field(&s.grid);

        // sigma3 L1 sigma3 = -L1, so stepping sigma3 h forward unwinds
        // the flow; the roundtrip is exact at the discrete level.
        let mut back = PairState::new(&s.grid, &forward.sigma3());
        for _ in 0..n_steps {
            stepper.step(&mut back.re1, &mut back.re2).unwrap();
        }
        let returned = back.field(&s.grid).sigma3();
        let err = returned.sub(&h0).norm_l2(&s.grid) / h0.norm_l2(&s.grid);
        eprintln!("sigma3 roundtrip residual {err:.3e}");
        assert!(err <= 1e-9, "roundtrip residual {err:.3e}");
    }

    #[test]
    fn nls_excited_orbit_is_exact_to_scheme_order() {
        let s = resonant();
        let q = GridFunction::from_real(&s.op.state.q);
        let e1 = s.op.state.energy;
        let t_final = 5.0;

        // Terminal pointwise deviation from Q e^{-i E1 t}.
        let dev = |dt: f64| {
            let opts = NlsRunOptions { sample_count: 1, snapshot_stride: usize::MAX };
            let trace = propagate_nls_opts(
                &q, t_final, dt, &s.potential, s.op.state.lambda, &s.grid, &opts,
            )
            .unwrap();
            assert_eq!(*trace.snapshot_times.last().unwrap(), t_final);
            let psi = trace.scalar_snapshots.last().unwrap();
            let phase = Complex64::from_polar(1.0, -e1 * t_final);
            psi.values
                .iter()
                .zip(&q.values)
                .map(|(p, qv)| (p - qv * phase).norm())
                .fold(0.0, f64::max)
        };
        let coarse = dev(2e-3);
        let fine = dev(1e-3);
        let ratio = coarse / fine;
        eprintln!("orbit deviations {coarse:.3e} / {fine:.3e}, ratio {ratio:.2}");
        assert!(
            (3.0..=5.5).contains(&ratio),
            "self-convergence ratio {ratio:.2} not near 4"
        );
        assert!(fine <= 1e-6, "fine-step orbit deviation {fine:.3e}");
    }

    #[test]
    fn nls_conserves_mass_and_energy() {
        let s = resonant();
        // A perturbed orbit exercises genuine dynamics, not a fixed point.
        let q = GridFunction::from_real(&s.op.state.q);
        let mut psi0 = q.clone();
        psi0.axpy(Complex64::new(0.05, 0.02), &bump(&s.grid, 4.0));

        let trace = propagate_nls(
            &psi0, 20.0, DEFAULT_DT_NLS, &s.potential, s.op.state.lambda, &s.grid,
        )
        .unwrap();
        let mass_drift = trace
            .mass
            .iter()
            .map(|&m| (m / trace.mass[0] - 1.0).abs())
            .fold(0.0, f64::max);
        let h0 = trace.hamiltonian[0];
        let ham_drift = trace
            .hamiltonian
            .iter()
            .map(|&h| (h - h0).abs())
            .fold(0.0, f64::max)
            / h0.abs();
        eprintln!("mass drift {mass_drift:.3e}, hamiltonian drift {ham_drift:.3e}");
        assert!(mass_drift <= 1e-10, "mass drift {mass_drift:.3e}");
        assert!(ham_drift <= 1e-6, "hamiltonian drift {ham_drift:.3e}");
    }

    #[test]
    fn hc_field_keeps_equivalent_norms() {
        let s = resonant();
        let dec = crate::linearized::spectral_decomposition(
            &s.op,
            &s.grid,
            crate::linearized::Absorption::Cap {
                strength: crate::linearized::DEFAULT_CAP_STRENGTH,
            },
        )
        .unwrap();
        let b = bump(&s.grid, 9.0);
        let h = TwoComponent { c1: b.clone(), c2: b.scaled(Complex64::new(0.6, 0.0)) };
        let coords = decompose(&s.op, &dec, &s.grid, &h).unwrap();
        let eta = coords.eta;

        let ratio =
            norm_equivalence_check(&eta, 100.0, DEFAULT_DT_LINEARIZED, &s.op, &s.grid)
                .unwrap();
        eprintln!("continuous-subspace norm ratio {ratio:.3}");
        assert!(ratio <= 10.0, "norm ratio {ratio:.3} exceeds 10");
    }

    #[test]
    fn window_and_parameter_validation() {
        let s = resonant();
        let prop = h0_prop();
        let f = prop.project_continuum(&s.grid, &bump(&s.grid, 4.0));
        let times: Vec<f64> = (1..=20).map(|i| i as f64 * 2.0).collect();
        let trace = h0_observable_trace(prop, &s.grid, &f, &times).unwrap();

        assert!(matches!(
            decay_fit(&trace, NormKind::Linf, (5.0, 2.0 * trace.reflection_horizon)),
            Err(Error::Window(_))
        ));
        assert!(matches!(
            decay_fit(&trace, NormKind::Linf, (-1.0, 10.0)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            decay_fit(&trace, NormKind::L2Weighted(2.0), (5.0, 40.0)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            decay_fit(&trace, NormKind::Linf, (38.0, 39.0)),
            Err(Error::Window(_))
        ));

        let h = TwoComponent {
            c1: bump(&s.grid, 4.0),
            c2: GridFunction::zeros(s.grid.n_points),
        };
        assert!(matches!(
            propagate_linearized(&h, -1.0, 1e-2, &s.op, &s.grid),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            propagate_linearized(&h, 1.0, 2.0, &s.op, &s.grid),
            Err(Error::InvalidParameter(_))
        ));
        let bad = GridFunction {
            values: vec![Complex64::new(f64::NAN, 0.0); s.grid.n_points],
        };
        assert!(propagate_nls(
            &bad, 1.0, 1e-2, &s.potential, 1.0, &s.grid
        )
        .is_err());
    }
}
