//! Pre-computation of the per-mode conditional sampling filters: the
//! latitude grid, cross-covariance matrices J^m built from the closed-form
//! Green's function, transition matrices A, innovation factors B, and the
//! equator factors B_eq.

pub mod file;

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::specfun::{self, DEFAULT_TERM_CAP};
use crate::spectrum::PowerSpectrum;

/// Iso-latitude grid z_j = sin(pi*j / (2n+1)) for j = -n..n, with
/// equi-spaced azimuthal angles phi_j = 2*pi*j / n_phi.
///
/// The grid is strictly increasing, symmetric about the equator (z_0 = 0)
/// and excludes the poles.
#[derive(Debug, Clone, PartialEq)]
pub struct LatitudeGrid {
    n: usize,
    m_max: usize,
    n_phi: usize,
    z: Vec<f64>,
    phi: Vec<f64>,
}

/// String identifying the latitude placement, stored in file headers.
pub const GRID_CONVENTION: &str = "sin(pi*j/(2n+1))";

impl LatitudeGrid {
    pub fn new(n: usize, m_max: usize, n_phi: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if m_max < 1 {
            return Err(Error::InvalidArgument("m_max must be at least 1".into()));
        }
        if n_phi < 2 * m_max {
            return Err(Error::InvalidArgument(format!(
                "n_phi = {n_phi} is below the alias-free minimum 2*m_max = {}",
                2 * m_max
            )));
        }
        let denom = (2 * n + 1) as f64;
        let z = (-(n as isize)..=n as isize)
            .map(|j| (std::f64::consts::PI * j as f64 / denom).sin())
            .collect();
        let phi = (0..n_phi)
            .map(|j| 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64)
            .collect();
        Ok(LatitudeGrid {
            n,
            m_max,
            n_phi,
            z,
            phi,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    /// Latitude count 2n+1.
    pub fn rows(&self) -> usize {
        2 * self.n + 1
    }

    /// z values ordered south to north; index t corresponds to j = t - n.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Row index of z_j for j in -n..=n.
    pub fn row_of(&self, j: isize) -> usize {
        (j + self.n as isize) as usize
    }

    pub fn equator_row(&self) -> usize {
        self.n
    }

    pub fn z_at(&self, j: isize) -> f64 {
        self.z[self.row_of(j)]
    }
}

/// Green's function of kappa - L_m on (-1, 1):
/// G^m_lambda(x, y) = 1/2 * Γ(1+λ-m) Γ(-λ-m) * P^m_λ(-min) P^m_λ(max).
pub fn green_function(m: u32, lambda: Complex64, x: f64, y: f64) -> Result<Complex64> {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    let mf = m as f64;
    let ln_gamma_pair = specfun::ln_gamma(lambda + (1.0 - mf))? + specfun::ln_gamma(-lambda - mf)?;
    let lnp = specfun::ln_assoc_legendre(lambda, m, -lo, DEFAULT_TERM_CAP)?
        + specfun::ln_assoc_legendre(lambda, m, hi, DEFAULT_TERM_CAP)?;
    Ok(0.5 * (ln_gamma_pair + lnp).exp())
}

/// Maximum imaginary residue tolerated when realifying covariance values;
/// larger residues flag a spectrum that is not conjugate-closed.
const IMAG_RESIDUE_LIMIT: f64 = 1e-8;

fn realify(value: Complex64) -> Result<f64> {
    let limit = IMAG_RESIDUE_LIMIT * (1.0 + value.re.abs());
    if value.im.abs() > limit {
        return Err(Error::ImaginaryResidue { value, limit });
    }
    Ok(value.re)
}

/// Per-spectrum quantities reused across covariance evaluations for one
/// mode m: the residues and the log-gamma prefactors ln Γ(1+λ_i-m) + ln Γ(-λ_i-m).
struct ModePrefactor {
    residues: Vec<Complex64>,
    ln_gamma: Vec<Complex64>,
}

impl ModePrefactor {
    fn new(spec: &PowerSpectrum, m: u32) -> Result<Self> {
        let mf = m as f64;
        let lambdas = spec.lambdas();
        let ln_gamma = lambdas
            .iter()
            .map(|&l| Ok(specfun::ln_gamma(l + (1.0 - mf))? + specfun::ln_gamma(-l - mf)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModePrefactor {
            residues: spec.residues(),
            ln_gamma,
        })
    }

    /// One J entry from per-root log-Legendre values at the two (already
    /// sign-arranged) arguments.
    fn entry(&self, lnp1: &[Complex64], lnp2: &[Complex64], negate: bool) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.residues.len() {
            acc += self.residues[i] * (self.ln_gamma[i] + lnp1[i] + lnp2[i]).exp();
        }
        let sign = if negate { -1.0 } else { 1.0 };
        acc * (sign / (4.0 * std::f64::consts::PI))
    }
}

fn ln_legendre_all_roots(
    spec: &PowerSpectrum,
    order: u32,
    z: f64,
    cap: usize,
) -> Result<Vec<Complex64>> {
    spec.lambdas()
        .iter()
        .map(|&l| specfun::ln_assoc_legendre(l, order, z, cap))
        .collect()
}

/// Cross-covariance of the transformed derivative components,
/// J^m_pq(z1, z2). For p = q = 0 this is the mode covariance C_{g_m}(z1, z2).
pub fn cross_covariance(
    spec: &PowerSpectrum,
    m: u32,
    p: usize,
    q: usize,
    z1: f64,
    z2: f64,
) -> Result<f64> {
    cross_covariance_with_cap(spec, m, p, q, z1, z2, DEFAULT_TERM_CAP)
}

pub fn cross_covariance_with_cap(
    spec: &PowerSpectrum,
    m: u32,
    p: usize,
    q: usize,
    z1: f64,
    z2: f64,
    cap: usize,
) -> Result<f64> {
    if !(z1 > -1.0 && z1 < 1.0 && z2 > -1.0 && z2 < 1.0) {
        return Err(Error::Domain(format!(
            "cross covariance needs -1 < z < 1, got z1 = {z1}, z2 = {z2}"
        )));
    }
    let pref = ModePrefactor::new(spec, m)?;
    // z1 <= z2: (-1)^p P^{m+p}(-z1) P^{m+q}(z2); otherwise the mirrored
    // branch with (-1)^q.
    let (arg1, arg2, negate) = if z1 <= z2 {
        (-z1, z2, p % 2 == 1)
    } else {
        (z1, -z2, q % 2 == 1)
    };
    let lnp1 = ln_legendre_all_roots(spec, m + p as u32, arg1, cap)?;
    let lnp2 = ln_legendre_all_roots(spec, m + q as u32, arg2, cap)?;
    realify(pref.entry(&lnp1, &lnp2, negate))
}

/// M x M matrix of cross covariances between the transformed derivative
/// components at two latitudes; symmetrized by averaging when z1 = z2.
pub fn jmatrix(spec: &PowerSpectrum, m: u32, z1: f64, z2: f64) -> Result<DMatrix<f64>> {
    jmatrix_with_cap(spec, m, z1, z2, DEFAULT_TERM_CAP)
}

pub fn jmatrix_with_cap(
    spec: &PowerSpectrum,
    m: u32,
    z1: f64,
    z2: f64,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let order = spec.order();
    let mut j = DMatrix::zeros(order, order);
    for p in 0..order {
        for q in 0..order {
            j[(p, q)] = cross_covariance_with_cap(spec, m, p, q, z1, z2, cap)?;
        }
    }
    if z1 == z2 {
        j = (&j + j.transpose()) * 0.5;
    }
    Ok(j)
}

/// Conditional sampling step: the transition matrix A = J12ᵀ J11⁻¹ (so
/// that E[g(z2) | g(z1)] = A g(z1)) and a lower-triangular factor B of the
/// innovation covariance J22 - J12ᵀ J11⁻¹ J12 with negative rounding
/// eigenvalues clipped to zero.
pub fn transition_step(
    j11: &DMatrix<f64>,
    j12: &DMatrix<f64>,
    j22: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a_t = solve_spd(j11, j12)?;
    let a = a_t.transpose();
    let s = j22 - &a * j12;
    // The Schur complement carries rounding noise at the scale of the
    // inputs, which the negativity check must tolerate even when S itself
    // is numerically zero.
    let scale = j11.amax().max(j22.amax());
    let b = psd_lower_factor(&s, scale)?;
    Ok((a, b))
}

/// Solves J11 X = RHS for a symmetric PSD J11, falling back to an
/// eigenvalue pseudo-inverse when the Cholesky factorization fails
/// (near-singular covariances at high m near the poles).
fn solve_spd(j11: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = j11.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let eig = j11.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.amax();
    let trace = j11.trace();
    let min_eig = eig.eigenvalues.min();
    let neg_tol = (1e-8 * trace.abs()).max(1e-12 * j11.amax()).max(1e-300);
    if min_eig < -neg_tol {
        return Err(Error::IndefiniteCovariance {
            min_eigenvalue: min_eig,
            trace,
        });
    }
    let cutoff = (1e-12 * max_eig).max(1e-280);
    let inv_vals = eig
        .eigenvalues
        .map(|v| if v > cutoff { 1.0 / v } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok(pinv * rhs)
}

/// Lower-triangular factor of a symmetric positive semi-definite matrix.
/// Eigenvalues below the negativity tolerance (relative to the trace and
/// the ambient `scale` of the matrices the input was computed from) are an
/// error; small negatives are clipped to zero, and rank-deficient pivots
/// produce zero columns.
fn psd_lower_factor(s: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let order = s.nrows();
    let sym = (s + s.transpose()) * 0.5;
    let trace = sym.trace();
    let eig = sym.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    let neg_tol = (1e-8 * trace.abs()).max(1e-12 * scale).max(1e-300);
    if min_eig < -neg_tol {
        return Err(Error::IndefiniteCovariance {
            min_eigenvalue: min_eig,
            trace,
        });
    }
    let clipped = if min_eig < 0.0 {
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
    } else {
        sym
    };

    let scale = clipped.diagonal().amax().max(f64::MIN_POSITIVE);
    let pivot_tol = 1e-14 * scale;
    let mut l = DMatrix::zeros(order, order);
    for j in 0..order {
        let mut d = clipped[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= pivot_tol {
            continue; // rank-deficient direction, column stays zero
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..order {
            let mut v = clipped[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / dj;
        }
    }
    Ok(l)
}

/// Filters for a single azimuthal mode: the equator factor and the
/// directed latitude steps away from the equator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFilters {
    /// Lower-triangular factor of J^m(0, 0).
    pub b_eq: DMatrix<f64>,
    /// Step i-1 -> i for i = 1..=n (index i-1).
    pub north: Vec<StepFilters>,
    /// Step -(k-1) -> -k for k = 1..=n (index k-1).
    pub south: Vec<StepFilters>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFilters {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Pre-computed sampling filters for every mode on a latitude grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    grid: Arc<LatitudeGrid>,
    spectrum: Arc<PowerSpectrum>,
    modes: Vec<ModeFilters>,
}

/// Options for the pre-computation pass.
#[derive(Debug, Clone)]
pub struct PrecomputeOptions {
    /// Cap on hypergeometric series terms; grids reaching very close to
    /// the poles need more than the default.
    pub term_cap: usize,
    /// Worker threads for the Legendre table (1 = serial).
    pub threads: usize,
}

impl Default for PrecomputeOptions {
    fn default() -> Self {
        PrecomputeOptions {
            term_cap: DEFAULT_TERM_CAP,
            threads: 1,
        }
    }
}

/// Cache of log-Legendre values ln P^{order}_{λ_i}(z_t) for every order up
/// to m_max + M - 1, every spectrum root, and every grid latitude, so that
/// each hypergeometric evaluation happens exactly once.
struct LegendreTable {
    roots: usize,
    rows: usize,
    lnp: Vec<Complex64>,
}

impl LegendreTable {
    fn build(
        spec: &PowerSpectrum,
        grid: &LatitudeGrid,
        max_order: u32,
        opts: &PrecomputeOptions,
    ) -> Result<Self> {
        let roots = spec.order();
        let rows = grid.rows();
        let orders = max_order as usize + 1;
        let lambdas = spec.lambdas();
        let cap = opts.term_cap;

        let compute_order = |order: usize| -> Result<Vec<Complex64>> {
            let mut chunk = Vec::with_capacity(roots * rows);
            for lambda in &lambdas {
                for &z in grid.z() {
                    chunk.push(specfun::ln_assoc_legendre(*lambda, order as u32, z, cap)?);
                }
            }
            Ok(chunk)
        };

        let threads = opts.threads.max(1).min(orders);
        let mut per_order: Vec<Option<Result<Vec<Complex64>>>> = Vec::new();
        per_order.resize_with(orders, || None);
        if threads == 1 {
            for (order, slot) in per_order.iter_mut().enumerate() {
                *slot = Some(compute_order(order));
            }
        } else {
            // Round-robin over orders: the slow near-pole series sit at the
            // low orders, so interleaving balances the workers.
            let results: Vec<Vec<(usize, Result<Vec<Complex64>>)>> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let compute_order = &compute_order;
                        scope.spawn(move || {
                            (t..orders)
                                .step_by(threads)
                                .map(|order| (order, compute_order(order)))
                                .collect()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("table worker panicked"))
                    .collect()
            });
            for chunk in results {
                for (order, res) in chunk {
                    per_order[order] = Some(res);
                }
            }
        }

        let mut lnp = Vec::with_capacity(orders * roots * rows);
        for slot in per_order {
            lnp.extend(slot.expect("order slot filled")?);
        }
        Ok(LegendreTable { roots, rows, lnp })
    }

    /// Slice of per-root values for one (order, row), arranged root-major.
    fn at(&self, order: usize, row: usize) -> Vec<Complex64> {
        let base = order * self.roots * self.rows;
        (0..self.roots)
            .map(|i| self.lnp[base + i * self.rows + row])
            .collect()
    }
}

/// Mirror of a row index across the equator: the row of -z.
fn mirror(rows: usize, row: usize) -> usize {
    rows - 1 - row
}

/// Filter entries hundreds of orders below the field scale carry no
/// signal but drag the sampler through subnormal arithmetic; zero them.
fn flush_tiny(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for v in m.iter_mut() {
        if v.abs() < 1e-280 {
            *v = 0.0;
        }
    }
    m
}

fn jmatrix_from_table(
    pref: &ModePrefactor,
    table: &LegendreTable,
    m: usize,
    roots: usize,
    row1: usize,
    row2: usize,
) -> Result<DMatrix<f64>> {
    let rows = table.rows;
    let mut j = DMatrix::zeros(roots, roots);
    // Row order equals z order, so row1 <= row2 means z1 <= z2.
    for p in 0..roots {
        for q in 0..roots {
            let value = if row1 <= row2 {
                let lnp1 = table.at(m + p, mirror(rows, row1));
                let lnp2 = table.at(m + q, row2);
                pref.entry(&lnp1, &lnp2, p % 2 == 1)
            } else {
                let lnp1 = table.at(m + p, row1);
                let lnp2 = table.at(m + q, mirror(rows, row2));
                pref.entry(&lnp1, &lnp2, q % 2 == 1)
            };
            j[(p, q)] = realify(value)?;
        }
    }
    if row1 == row2 {
        j = (&j + j.transpose()) * 0.5;
    }
    Ok(j)
}

/// Runs the pre-computation with default options.
pub fn precompute(spec: &PowerSpectrum, grid: &LatitudeGrid) -> Result<FilterBank> {
    precompute_with_options(spec, grid, &PrecomputeOptions::default())
}

/// Builds the filter bank: for each mode the equator factor B_eq from
/// J^m(0,0), then transition/innovation pairs for every directed step away
/// from the equator, north and south.
pub fn precompute_with_options(
    spec: &PowerSpectrum,
    grid: &LatitudeGrid,
    opts: &PrecomputeOptions,
) -> Result<FilterBank> {
    let roots = spec.order();
    let max_order = grid.m_max() as u32 + roots as u32 - 1;
    let table = LegendreTable::build(spec, grid, max_order, opts)?;

    let build_mode = |m: usize| -> Result<ModeFilters> {
        let pref = ModePrefactor::new(spec, m as u32)?;
        let eq = grid.equator_row();
        let j_eq = jmatrix_from_table(&pref, &table, m, roots, eq, eq)?;
        let b_eq = flush_tiny(psd_lower_factor(&j_eq, j_eq.amax())?);

        let n = grid.n();
        let mut north = Vec::with_capacity(n);
        let mut south = Vec::with_capacity(n);
        let mut j_prev_north = j_eq.clone();
        let mut j_prev_south = j_eq;
        for step in 1..=n as isize {
            let prev_n = grid.row_of(step - 1);
            let next_n = grid.row_of(step);
            let j12 = jmatrix_from_table(&pref, &table, m, roots, prev_n, next_n)?;
            let j22 = jmatrix_from_table(&pref, &table, m, roots, next_n, next_n)?;
            let (a, b) = transition_step(&j_prev_north, &j12, &j22)?;
            north.push(StepFilters {
                a: flush_tiny(a),
                b: flush_tiny(b),
            });
            j_prev_north = j22;

            let prev_s = grid.row_of(-(step - 1));
            let next_s = grid.row_of(-step);
            let j12 = jmatrix_from_table(&pref, &table, m, roots, prev_s, next_s)?;
            let j22 = jmatrix_from_table(&pref, &table, m, roots, next_s, next_s)?;
            let (a, b) = transition_step(&j_prev_south, &j12, &j22)?;
            south.push(StepFilters {
                a: flush_tiny(a),
                b: flush_tiny(b),
            });
            j_prev_south = j22;
        }
        Ok(ModeFilters { b_eq, north, south })
    };

    let mode_count = grid.m_max() + 1;
    let threads = opts.threads.max(1).min(mode_count);
    let modes: Vec<ModeFilters> = if threads == 1 {
        (0..mode_count)
            .map(build_mode)
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut slots: Vec<Option<Result<ModeFilters>>> = Vec::new();
        slots.resize_with(mode_count, || None);
        let results: Vec<Vec<(usize, Result<ModeFilters>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let build_mode = &build_mode;
                    scope.spawn(move || {
                        (t..mode_count)
                            .step_by(threads)
                            .map(|m| (m, build_mode(m)))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("mode worker panicked"))
                .collect()
        });
        for chunk in results {
            for (m, res) in chunk {
                slots[m] = Some(res);
            }
        }
        slots
            .into_iter()
            .map(|s| s.expect("mode slot filled"))
            .collect::<Result<Vec<_>>>()?
    };

    Ok(FilterBank {
        grid: Arc::new(grid.clone()),
        spectrum: Arc::new(spec.clone()),
        modes,
    })
}

impl FilterBank {
    pub(crate) fn from_parts(
        grid: Arc<LatitudeGrid>,
        spectrum: Arc<PowerSpectrum>,
        modes: Vec<ModeFilters>,
    ) -> Self {
        FilterBank {
            grid,
            spectrum,
            modes,
        }
    }

    pub fn grid(&self) -> &Arc<LatitudeGrid> {
        &self.grid
    }

    pub fn spectrum(&self) -> &Arc<PowerSpectrum> {
        &self.spectrum
    }

    pub fn modes(&self) -> &[ModeFilters] {
        &self.modes
    }

    pub fn mode(&self, m: usize) -> &ModeFilters {
        &self.modes[m]
    }

    /// State dimension M.
    pub fn state_dim(&self) -> usize {
        self.spectrum.order()
    }
}
