//! Covariance validation: the analytic covariance series, a small-l_max
//! direct spherical-harmonic sampler used as an independent oracle,
//! empirical covariance estimation, the max-error metric, and the
//! multi-resolution convergence study.

use serde::Serialize;
use std::borrow::Borrow;
use std::io::Write;

use crate::error::{Error, Result};
use crate::filterbank::{precompute_with_options, LatitudeGrid, PrecomputeOptions};
use crate::sampler::{FieldSample, FieldSampler, RngStream};
use crate::specfun::{normalized_assoc_legendre_row, DEFAULT_TERM_CAP};
use crate::spectrum::PowerSpectrum;

/// Tolerance the truncation tail bound must meet before an analytic
/// covariance value is trusted.
pub const ANALYTIC_TAIL_TOL: f64 = 1e-10;

/// Truncated analytic covariance with its rigorous tail bound.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticCovariance {
    pub value: f64,
    pub tail_bound: f64,
}

/// Upper bound on sum_{l > l_max} (2l+1) C_l / (4 pi), valid once
/// l(l+1) >= 2 max|kappa| and M >= 2; `None` when the bound does not apply
/// yet at this l_max.
fn series_tail_bound(spec: &PowerSpectrum, l_max: u32) -> Option<f64> {
    let m = spec.order();
    if m < 2 {
        return None; // sum (2l+1) C_l diverges for M = 1
    }
    let max_kappa = spec
        .kappas()
        .iter()
        .map(|k| k.norm())
        .fold(0.0f64, f64::max);
    let x = l_max as f64 * (l_max as f64 + 1.0);
    if x < 2.0 * max_kappa {
        return None;
    }
    // C_l <= amplitude 2^M / (l(l+1))^M there; sum bounded by the integral
    // with a (1 + 1/(2l)) slack for the left endpoint.
    let bound = spec.amplitude() * 2f64.powi(m as i32) * (1.0 + 0.5 / l_max as f64)
        / ((m as f64 - 1.0) * x.powi(m as i32 - 1))
        / (4.0 * std::f64::consts::PI);
    Some(bound)
}

/// Smallest power-of-two-ish l_max whose tail bound meets
/// [`ANALYTIC_TAIL_TOL`].
pub fn required_l_max(spec: &PowerSpectrum) -> Result<u32> {
    let mut l = 16u32;
    while l <= (1 << 24) {
        if let Some(bound) = series_tail_bound(spec, l) {
            if bound <= ANALYTIC_TAIL_TOL {
                return Ok(l);
            }
        }
        l *= 2;
    }
    Err(Error::TailBound {
        bound: series_tail_bound(spec, 1 << 24).unwrap_or(f64::INFINITY),
        tol: ANALYTIC_TAIL_TOL,
        l_max: 1 << 24,
    })
}

/// C_T(cos gamma) = sum_l (2l+1)/(4 pi) C_l P_l(cos gamma), truncated at
/// l_max with the tail bound checked against [`ANALYTIC_TAIL_TOL`].
pub fn analytic_covariance(
    spec: &PowerSpectrum,
    cos_gamma: f64,
    l_max: u32,
) -> Result<AnalyticCovariance> {
    if !(-1.0..=1.0).contains(&cos_gamma) {
        return Err(Error::Domain(format!(
            "cos gamma must lie in [-1, 1], got {cos_gamma}"
        )));
    }
    let tail_bound = series_tail_bound(spec, l_max).ok_or(Error::TailBound {
        bound: f64::INFINITY,
        tol: ANALYTIC_TAIL_TOL,
        l_max,
    })?;
    if tail_bound > ANALYTIC_TAIL_TOL {
        return Err(Error::TailBound {
            bound: tail_bound,
            tol: ANALYTIC_TAIL_TOL,
            l_max,
        });
    }

    let norm = 1.0 / (4.0 * std::f64::consts::PI);
    let mut sum = spec.angular_power(0) * norm; // P_0 = 1
    let mut prev = 1.0f64;
    let mut cur = cos_gamma;
    for l in 1..=l_max {
        sum += (2.0 * l as f64 + 1.0) * norm * spec.angular_power(l) * cur;
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * cos_gamma * cur - lf * prev) / (lf + 1.0);
        prev = cur;
        cur = next;
    }
    Ok(AnalyticCovariance {
        value: sum,
        tail_bound,
    })
}

/// Direct spherical-harmonic sampler, O(l_max² · points) per sample.
/// Deliberately simple and independent of the Markov sampler; the
/// cross-implementation equivalence test compares the two.
pub struct DirectOracleSampler {
    c_l: Vec<f64>,
    points: Vec<OraclePoint>,
    l_max: u32,
}

struct OraclePoint {
    /// l_rows[m][l - m] = L_{lm}(z).
    l_rows: Vec<Vec<f64>>,
    cos_mphi: Vec<f64>,
    sin_mphi: Vec<f64>,
}

/// Hard cap keeping the oracle in its intended small-l_max regime.
pub const ORACLE_L_MAX: u32 = 64;

impl DirectOracleSampler {
    /// Points are (z, phi) pairs with z = cos(theta).
    pub fn new(spec: &PowerSpectrum, l_max: u32, points: &[(f64, f64)]) -> Result<Self> {
        let c_l = (0..=l_max).map(|l| spec.angular_power(l)).collect();
        Self::from_angular_power(c_l, points)
    }

    /// Oracle over an explicit angular power table (C_0, ..., C_{l_max}).
    pub fn from_angular_power(c_l: Vec<f64>, points: &[(f64, f64)]) -> Result<Self> {
        if c_l.is_empty() {
            return Err(Error::InvalidArgument("need at least C_0".into()));
        }
        let l_max = (c_l.len() - 1) as u32;
        if l_max > ORACLE_L_MAX {
            return Err(Error::InvalidArgument(format!(
                "oracle l_max = {l_max} exceeds the supported {ORACLE_L_MAX}"
            )));
        }
        let points = points
            .iter()
            .map(|&(z, phi)| {
                if !(-1.0..=1.0).contains(&z) {
                    return Err(Error::Domain(format!("point z = {z} outside [-1, 1]")));
                }
                let l_rows = (0..=l_max)
                    .map(|m| normalized_assoc_legendre_row(m, l_max, z))
                    .collect();
                let cos_mphi = (0..=l_max).map(|m| (m as f64 * phi).cos()).collect();
                let sin_mphi = (0..=l_max).map(|m| (m as f64 * phi).sin()).collect();
                Ok(OraclePoint {
                    l_rows,
                    cos_mphi,
                    sin_mphi,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DirectOracleSampler { c_l, points, l_max })
    }

    /// One truncated-expansion sample evaluated at every point. Draw order:
    /// l ascending, m ascending within l, real part before imaginary.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.points.len()];
        for l in 0..=self.l_max as usize {
            let a_l0 = self.c_l[l].sqrt() * rng.sample_normal();
            for (pt, o) in self.points.iter().zip(&mut out) {
                *o += a_l0 * pt.l_rows[0][l];
            }
            let s_half = (self.c_l[l] / 2.0).sqrt();
            for m in 1..=l {
                let re = s_half * rng.sample_normal();
                let im = s_half * rng.sample_normal();
                for (pt, o) in self.points.iter().zip(&mut out) {
                    let llm = pt.l_rows[m][l - m];
                    *o += 2.0 * llm * (re * pt.cos_mphi[m] - im * pt.sin_mphi[m]);
                }
            }
        }
        out
    }
}

/// Convenience wrapper drawing a single oracle sample.
pub fn oracle_sample_direct(
    spec: &PowerSpectrum,
    l_max: u32,
    points: &[(f64, f64)],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    Ok(DirectOracleSampler::new(spec, l_max, points)?.sample(rng))
}

/// A grid point by row (latitude, south to north) and column (longitude).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    pub lat: usize,
    pub lon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointPair {
    pub a: GridPoint,
    pub b: GridPoint,
}

/// Covariance along an evaluation set: separation angles, analytic and
/// empirical values, and Monte Carlo standard errors.
#[derive(Debug, Clone)]
pub struct CovarianceCurve {
    pub gammas: Vec<f64>,
    pub analytic: Vec<f64>,
    pub empirical: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: usize,
}

impl CovarianceCurve {
    /// CSV rows `gamma,analytic,empirical,stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"gamma,analytic,empirical,stderr\n")?;
        for i in 0..self.gammas.len() {
            w.write_all(
                format!(
                    "{},{},{},{}\n",
                    self.gammas[i], self.analytic[i], self.empirical[i], self.std_err[i]
                )
                .as_bytes(),
            )?;
        }
        Ok(())
    }
}

fn geodesic_cos(grid: &LatitudeGrid, a: GridPoint, b: GridPoint) -> f64 {
    let z1 = grid.z()[a.lat];
    let z2 = grid.z()[b.lat];
    let dphi = grid.phi()[a.lon] - grid.phi()[b.lon];
    let c = z1 * z2 + ((1.0 - z1 * z1) * (1.0 - z2 * z2)).sqrt() * dphi.cos();
    c.clamp(-1.0, 1.0)
}

/// Streaming empirical covariance over explicit grid-point pairs:
/// Cov(x, y) ~ N^{-1} sum_j T_j(x) T_j(y), with the standard error taken
/// from the empirical variance of the per-sample products.
pub fn empirical_covariance<I>(
    spec: &PowerSpectrum,
    samples: I,
    pairs: &[PointPair],
) -> Result<CovarianceCurve>
where
    I: IntoIterator,
    I::Item: Borrow<FieldSample>,
{
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one point pair".into(),
        ));
    }
    let mut sums = vec![0.0f64; pairs.len()];
    let mut sums2 = vec![0.0f64; pairs.len()];
    let mut count = 0usize;
    let mut grid: Option<std::sync::Arc<LatitudeGrid>> = None;

    for item in samples {
        let sample = item.borrow();
        match &grid {
            None => {
                let g = sample.grid();
                for pair in pairs {
                    for pt in [pair.a, pair.b] {
                        if pt.lat >= g.rows() || pt.lon >= g.n_phi() {
                            return Err(Error::MismatchedGrid(format!(
                                "pair point (lat {}, lon {}) outside the {} x {} grid",
                                pt.lat,
                                pt.lon,
                                g.rows(),
                                g.n_phi()
                            )));
                        }
                    }
                }
                grid = Some(std::sync::Arc::clone(g));
            }
            Some(g) => {
                let sg = sample.grid();
                if sg.n() != g.n() || sg.n_phi() != g.n_phi() || sg.m_max() != g.m_max() {
                    return Err(Error::MismatchedGrid(
                        "samples in the stream live on different grids".into(),
                    ));
                }
            }
        }
        for (i, pair) in pairs.iter().enumerate() {
            let prod = sample.value(pair.a.lat, pair.a.lon) * sample.value(pair.b.lat, pair.b.lon);
            sums[i] += prod;
            sums2[i] += prod * prod;
        }
        count += 1;
    }
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples for an empirical covariance, got {count}"
        )));
    }
    let grid = grid.expect("grid recorded with first sample");

    let l_max = required_l_max(spec)?;
    let nf = count as f64;
    let mut curve = CovarianceCurve {
        gammas: Vec::with_capacity(pairs.len()),
        analytic: Vec::with_capacity(pairs.len()),
        empirical: Vec::with_capacity(pairs.len()),
        std_err: Vec::with_capacity(pairs.len()),
        samples: count,
    };
    for (i, pair) in pairs.iter().enumerate() {
        let cosg = geodesic_cos(&grid, pair.a, pair.b);
        curve.gammas.push(cosg.acos());
        curve
            .analytic
            .push(analytic_covariance(spec, cosg, l_max)?.value);
        let mean = sums[i] / nf;
        curve.empirical.push(mean);
        let var = ((sums2[i] - nf * mean * mean) / (nf - 1.0)).max(0.0);
        curve.std_err.push((var / nf).sqrt());
    }
    Ok(curve)
}

/// Maximum absolute deviation between empirical and analytic values.
pub fn max_error(curve: &CovarianceCurve) -> f64 {
    curve
        .empirical
        .iter()
        .zip(&curve.analytic)
        .map(|(e, a)| (e - a).abs())
        .fold(0.0, f64::max)
}

/// Options for [`convergence_study`].
#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub samples: usize,
    pub seed: u64,
    pub threads: usize,
    pub term_cap: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            samples: 40_000,
            seed: 1,
            threads: 1,
            term_cap: DEFAULT_TERM_CAP,
        }
    }
}

/// Machine-readable study result.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub resolutions: Vec<usize>,
    pub equator_errors: Vec<f64>,
    pub meridian_errors: Vec<f64>,
    /// Least-squares slope of log max-error against log n_theta.
    pub slope: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Per-resolution covariance curves along the two evaluation sets.
#[derive(Debug, Clone)]
pub struct ResolutionCurves {
    pub n_theta: usize,
    pub equator: CovarianceCurve,
    pub meridian: CovarianceCurve,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub report: ConvergenceReport,
    pub curves: Vec<ResolutionCurves>,
}

struct AccumSet {
    eq_sum: Vec<f64>,
    eq_sum2: Vec<f64>,
    mer_sum: Vec<f64>,
    mer_sum2: Vec<f64>,
}

impl AccumSet {
    fn new(eq_len: usize, mer_len: usize) -> Self {
        AccumSet {
            eq_sum: vec![0.0; eq_len],
            eq_sum2: vec![0.0; eq_len],
            mer_sum: vec![0.0; mer_len],
            mer_sum2: vec![0.0; mer_len],
        }
    }

    fn accumulate(&mut self, sample: &FieldSample) {
        let n_phi = sample.cols();
        let eq = sample.equator_row();
        let inv = 1.0 / n_phi as f64;
        // Equatorial lags, averaged over ring origins (stationary in phi).
        for k in 0..self.eq_sum.len() {
            let mut s = 0.0;
            for c in 0..n_phi {
                let c2 = c + k;
                let c2 = if c2 >= n_phi { c2 - n_phi } else { c2 };
                s += eq[c] * eq[c2];
            }
            let u = s * inv;
            self.eq_sum[k] += u;
            self.eq_sum2[k] += u * u;
        }
        // Meridian rows against the equator, averaged over origins.
        for t in 0..self.mer_sum.len() {
            let row = sample.row(t);
            let mut s = 0.0;
            for c in 0..n_phi {
                s += row[c] * eq[c];
            }
            let v = s * inv;
            self.mer_sum[t] += v;
            self.mer_sum2[t] += v * v;
        }
    }

    fn merge(&mut self, other: &AccumSet) {
        for (a, b) in self.eq_sum.iter_mut().zip(&other.eq_sum) {
            *a += b;
        }
        for (a, b) in self.eq_sum2.iter_mut().zip(&other.eq_sum2) {
            *a += b;
        }
        for (a, b) in self.mer_sum.iter_mut().zip(&other.mer_sum) {
            *a += b;
        }
        for (a, b) in self.mer_sum2.iter_mut().zip(&other.mer_sum2) {
            *a += b;
        }
    }
}

fn curve_from_moments(
    gammas: Vec<f64>,
    analytic: Vec<f64>,
    sums: &[f64],
    sums2: &[f64],
    n: usize,
) -> CovarianceCurve {
    let nf = n as f64;
    let mut empirical = Vec::with_capacity(sums.len());
    let mut std_err = Vec::with_capacity(sums.len());
    for i in 0..sums.len() {
        let mean = sums[i] / nf;
        empirical.push(mean);
        let var = ((sums2[i] - nf * mean * mean) / (nf - 1.0)).max(0.0);
        std_err.push((var / nf).sqrt());
    }
    CovarianceCurve {
        gammas,
        analytic,
        empirical,
        std_err,
        samples: n,
    }
}

/// Runs the multi-resolution experiment: for each n_theta build the bank
/// with m_max = n_theta and n_phi = 2 n_theta, draw `samples` fields, and
/// estimate the covariance along the equatorial and meridional evaluation
/// sets. The per-pair estimators average over ring origins, which leaves
/// their expectation unchanged (the field is stationary in phi) and lowers
/// the Monte Carlo noise floor.
pub fn convergence_study(
    spec: &PowerSpectrum,
    resolutions: &[usize],
    opts: &StudyOptions,
) -> Result<ConvergenceStudy> {
    if resolutions.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two resolutions".into(),
        ));
    }
    for w in resolutions.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument(format!(
                "resolutions must be strictly ascending, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if resolutions[0] < 1 {
        return Err(Error::InvalidArgument(
            "resolutions must be positive".into(),
        ));
    }
    if opts.samples < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 samples per resolution".into(),
        ));
    }

    let l_req = required_l_max(spec)?;
    let mut curves = Vec::with_capacity(resolutions.len());
    let mut eq_errors = Vec::with_capacity(resolutions.len());
    let mut mer_errors = Vec::with_capacity(resolutions.len());

    for (ridx, &n_theta) in resolutions.iter().enumerate() {
        let grid = LatitudeGrid::new(n_theta, n_theta, 2 * n_theta)?;
        let pre_opts = PrecomputeOptions {
            term_cap: opts.term_cap,
            threads: opts.threads,
        };
        let bank = precompute_with_options(spec, &grid, &pre_opts)?;

        let eq_len = grid.n_phi() / 2 + 1;
        let mer_len = grid.rows();
        let n = opts.samples;
        let threads = opts.threads.max(1).min(n);

        let mut total = AccumSet::new(eq_len, mer_len);
        if threads == 1 {
            let mut sampler = FieldSampler::new(&bank);
            for j in 0..n {
                let mut rng = RngStream::substream(opts.seed, stream_id(ridx, j));
                let sample = sampler.sample(&mut rng);
                total.accumulate(&sample);
            }
        } else {
            let chunk = n.div_ceil(threads);
            let partials: Vec<AccumSet> = std::thread::scope(|scope| {
                let bank = &bank;
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let lo = t * chunk;
                        let hi = ((t + 1) * chunk).min(n);
                        scope.spawn(move || {
                            let mut acc = AccumSet::new(eq_len, mer_len);
                            let mut sampler = FieldSampler::new(bank);
                            for j in lo..hi {
                                let mut rng = RngStream::substream(opts.seed, stream_id(ridx, j));
                                let sample = sampler.sample(&mut rng);
                                acc.accumulate(&sample);
                            }
                            acc
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("study worker panicked"))
                    .collect()
            });
            for p in &partials {
                total.merge(p);
            }
        }

        // Equatorial set: all delta-phi lags at z = 0.
        let mut eq_gammas = Vec::with_capacity(eq_len);
        let mut eq_analytic = Vec::with_capacity(eq_len);
        for k in 0..eq_len {
            let gamma = grid.phi()[k];
            eq_gammas.push(gamma);
            eq_analytic.push(analytic_covariance(spec, gamma.cos(), l_req)?.value);
        }
        // Meridian set: every grid latitude against the equator point.
        let mut mer_gammas = Vec::with_capacity(mer_len);
        let mut mer_analytic = Vec::with_capacity(mer_len);
        for t in 0..mer_len {
            let z = grid.z()[t];
            let cosg = (1.0 - z * z).sqrt().clamp(-1.0, 1.0);
            mer_gammas.push(cosg.acos());
            mer_analytic.push(analytic_covariance(spec, cosg, l_req)?.value);
        }

        let equator = curve_from_moments(eq_gammas, eq_analytic, &total.eq_sum, &total.eq_sum2, n);
        let meridian =
            curve_from_moments(mer_gammas, mer_analytic, &total.mer_sum, &total.mer_sum2, n);
        eq_errors.push(max_error(&equator));
        mer_errors.push(max_error(&meridian));
        curves.push(ResolutionCurves {
            n_theta,
            equator,
            meridian,
        });
    }

    let xs: Vec<f64> = resolutions.iter().map(|&r| (r as f64).ln()).collect();
    let ys: Vec<f64> = eq_errors
        .iter()
        .zip(&mer_errors)
        .map(|(e, m)| e.max(*m).max(f64::MIN_POSITIVE).ln())
        .collect();
    let slope = least_squares_slope(&xs, &ys);

    Ok(ConvergenceStudy {
        report: ConvergenceReport {
            resolutions: resolutions.to_vec(),
            equator_errors: eq_errors,
            meridian_errors: mer_errors,
            slope,
            samples: opts.samples,
            seed: opts.seed,
        },
        curves,
    })
}

fn stream_id(resolution_index: usize, sample_index: usize) -> u64 {
    ((resolution_index as u64) << 32) | sample_index as u64
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let num: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let den: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    num / den
}
