//! Field generation: equator initialization, latitude-by-latitude state
//! marching of the per-mode Gaussian Markov chains, and Hermitian FFT ring
//! synthesis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::{ComplexToReal, RealFftPlanner};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filterbank::{FilterBank, LatitudeGrid, StepFilters, GRID_CONVENTION};
use crate::spectrum::PowerSpectrum;

/// Seedable, platform-stable random stream.
///
/// The generator is ChaCha8 keyed by the (seed, stream) pair; identical
/// pairs give identical sequences on every platform. Per-sample substreams
/// use the sample index as the stream id, so samples are reproducible
/// independently and generation parallelizes across samples.
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    /// Independent stream for (seed, stream): the 32-byte ChaCha key is
    /// seed LE || stream LE || "sgrf-rng" || zeros.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&stream.to_le_bytes());
        key[16..24].copy_from_slice(b"sgrf-rng");
        RngStream {
            seed,
            stream,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// One standard normal draw.
    pub fn sample_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngStream")
            .field("algorithm", &Self::ALGORITHM)
            .field("seed", &self.seed)
            .field("stream", &self.stream)
            .finish()
    }
}

/// Complex standard normal for m > 0 (independent re/im with variance 1/2,
/// so E|w|² = 1 and the pseudo-variance E w² vanishes), real standard
/// normal for m = 0. The real part is drawn before the imaginary part.
pub fn draw_complex_std_normal(rng: &mut RngStream, m: u32) -> Complex64 {
    if m == 0 {
        Complex64::new(rng.sample_normal(), 0.0)
    } else {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let re = rng.sample_normal() * c;
        let im = rng.sample_normal() * c;
        Complex64::new(re, im)
    }
}

/// The M-vector of transformed derivative components of one mode at one
/// latitude; real for m = 0, complex otherwise. Real transition matrices
/// act on the real and imaginary parts independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeState {
    m: u32,
    re: DVector<f64>,
    im: DVector<f64>,
}

impl ModeState {
    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.re.len()
    }

    pub fn value(&self, p: usize) -> Complex64 {
        Complex64::new(self.re[p], self.im[p])
    }

    pub fn values(&self) -> Vec<Complex64> {
        (0..self.dim()).map(|p| self.value(p)).collect()
    }

    /// Draws noise in documented order (q ascending, re before im) and
    /// applies a factor matrix.
    pub(crate) fn from_noise(m: u32, factor: &DMatrix<f64>, rng: &mut RngStream) -> Self {
        let dim = factor.nrows();
        let mut w_re = DVector::zeros(dim);
        let mut w_im = DVector::zeros(dim);
        draw_noise(rng, m, &mut w_re, &mut w_im);
        let re = factor * &w_re;
        let im = if m == 0 {
            DVector::zeros(dim)
        } else {
            factor * &w_im
        };
        ModeState { m, re, im }
    }

    fn advance(&mut self, step: &StepFilters, rng: &mut RngStream, scratch: &mut MarchScratch) {
        draw_noise(rng, self.m, &mut scratch.w_re, &mut scratch.w_im);
        scratch.next_re.gemv(1.0, &step.a, &self.re, 0.0);
        scratch.next_re.gemv(1.0, &step.b, &scratch.w_re, 1.0);
        std::mem::swap(&mut self.re, &mut scratch.next_re);
        if self.m > 0 {
            scratch.next_im.gemv(1.0, &step.a, &self.im, 0.0);
            scratch.next_im.gemv(1.0, &step.b, &scratch.w_im, 1.0);
            std::mem::swap(&mut self.im, &mut scratch.next_im);
        }
        // High modes decay by hundreds of orders of magnitude toward the
        // poles; subnormal state values stall the FPU without carrying any
        // signal, so flush them.
        flush_subnormal(&mut self.re);
        flush_subnormal(&mut self.im);
    }
}

fn draw_noise(rng: &mut RngStream, m: u32, w_re: &mut DVector<f64>, w_im: &mut DVector<f64>) {
    for q in 0..w_re.len() {
        let w = draw_complex_std_normal(rng, m);
        w_re[q] = w.re;
        w_im[q] = w.im;
    }
}

fn flush_subnormal(v: &mut DVector<f64>) {
    for x in v.iter_mut() {
        if x.abs() < 1e-280 {
            *x = 0.0;
        }
    }
}

struct MarchScratch {
    w_re: DVector<f64>,
    w_im: DVector<f64>,
    next_re: DVector<f64>,
    next_im: DVector<f64>,
}

impl MarchScratch {
    fn new(dim: usize) -> Self {
        MarchScratch {
            w_re: DVector::zeros(dim),
            w_im: DVector::zeros(dim),
            next_re: DVector::zeros(dim),
            next_im: DVector::zeros(dim),
        }
    }
}

/// Equator state g_m(z_0) = B_eq · w.
pub fn initial_state(bank: &FilterBank, m: u32, rng: &mut RngStream) -> ModeState {
    ModeState::from_noise(m, &bank.mode(m as usize).b_eq, rng)
}

/// One conditional step g(z_next) = A g(z_prev) + B w.
pub fn march_step(
    state: &ModeState,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rng: &mut RngStream,
) -> ModeState {
    let mut next = state.clone();
    let step = StepFilters {
        a: a.clone(),
        b: b.clone(),
    };
    let mut scratch = MarchScratch::new(state.dim());
    next.advance(&step, rng, &mut scratch);
    next
}

/// Real ring values T(phi_j) = sum_{m} g_m e^{i m phi_j} with
/// g_{-m} = conj(g_m), via a Hermitian-symmetric inverse DFT at scale 1.
/// The output is real by construction (complex-to-real transform); when
/// n_phi = 2*m_max the top mode lands on the shared Nyquist bin, whose
/// imaginary part Hermitian symmetry forces to zero.
pub fn synthesize_ring(gm_row: &[Complex64], n_phi: usize) -> Vec<f64> {
    assert!(!gm_row.is_empty(), "need at least the m = 0 coefficient");
    let m_max = gm_row.len() - 1;
    assert!(
        n_phi >= 2 * m_max,
        "n_phi must be at least 2*m_max for alias-free synthesis"
    );
    debug_assert!(gm_row[0].im == 0.0, "g_0 must be real");

    let mut planner = RealFftPlanner::<f64>::new();
    let c2r = planner.plan_fft_inverse(n_phi);
    let mut spectrum = c2r.make_input_vec();
    fill_ring_spectrum(gm_row, &mut spectrum);
    let mut out = vec![0.0; n_phi];
    c2r.process(&mut spectrum, &mut out)
        .expect("Hermitian spectrum layout");
    out
}

fn fill_ring_spectrum(gm_row: &[Complex64], spectrum: &mut [Complex64]) {
    for (k, slot) in spectrum.iter_mut().enumerate() {
        *slot = if k < gm_row.len() {
            gm_row[k]
        } else {
            Complex64::new(0.0, 0.0)
        };
        // Deeply damped near-pole modes would drag the FFT through
        // subnormal arithmetic; 1e-280 is hundreds of orders below the
        // field scale.
        if slot.re.abs() < 1e-280 {
            slot.re = 0.0;
        }
        if slot.im.abs() < 1e-280 {
            slot.im = 0.0;
        }
    }
    spectrum[0].im = 0.0;
    // Shared +/- Nyquist bin must be real for a real field.
    let last = spectrum.len() - 1;
    spectrum[last].im = 0.0;
}

/// One realization of the field on the grid, row t holding latitude
/// z_{t-n} (south to north), column j holding phi_j.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    grid: Arc<LatitudeGrid>,
    spectrum: Arc<PowerSpectrum>,
    seed: u64,
    stream: u64,
    data: Vec<f64>,
}

impl FieldSample {
    #[cfg(test)]
    pub(crate) fn from_parts_for_tests(
        grid: &LatitudeGrid,
        spectrum: &PowerSpectrum,
        seed: u64,
        stream: u64,
        data: Vec<f64>,
    ) -> Self {
        assert_eq!(data.len(), grid.rows() * grid.n_phi());
        FieldSample {
            grid: Arc::new(grid.clone()),
            spectrum: Arc::new(spectrum.clone()),
            seed,
            stream,
            data,
        }
    }

    pub fn grid(&self) -> &Arc<LatitudeGrid> {
        &self.grid
    }

    pub fn spectrum(&self) -> &Arc<PowerSpectrum> {
        &self.spectrum
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn rows(&self) -> usize {
        self.grid.rows()
    }

    pub fn cols(&self) -> usize {
        self.grid.n_phi()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.cols();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn value(&self, lat: usize, lon: usize) -> f64 {
        self.data[lat * self.cols() + lon]
    }

    pub fn equator_row(&self) -> &[f64] {
        self.row(self.grid.equator_row())
    }

    /// Writes the binary field format: u32 LE length-prefixed JSON header,
    /// then the row-major float64 LE payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = FieldHeader {
            n: self.grid.n(),
            m_max: self.grid.m_max(),
            n_phi: self.grid.n_phi(),
            seed: self.seed,
            stream: self.stream,
            spectrum: (*self.spectrum).clone(),
            grid_convention: GRID_CONVENTION.to_string(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_to(&mut buf)?;
        buf.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes)
            .map_err(|_| Error::Format("field file truncated in header length".into()))?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)
            .map_err(|_| Error::Format("field file truncated in header".into()))?;
        let header: FieldHeader = serde_json::from_slice(&header_bytes)?;
        if header.grid_convention != GRID_CONVENTION {
            return Err(Error::Format(format!(
                "unsupported grid convention {:?}",
                header.grid_convention
            )));
        }
        let grid = LatitudeGrid::new(header.n, header.m_max, header.n_phi)?;
        let count = grid.rows() * grid.n_phi();
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format("field file truncated in payload".into()))?;
            data.push(f64::from_le_bytes(buf));
        }
        Ok(FieldSample {
            grid: Arc::new(grid),
            spectrum: Arc::new(header.spectrum),
            seed: header.seed,
            stream: header.stream,
            data,
        })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// Plain CSV export: one row per latitude, comma-separated values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for t in 0..self.rows() {
            let row = self.row(t);
            let mut line = String::with_capacity(row.len() * 20);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    n: usize,
    m_max: usize,
    n_phi: usize,
    seed: u64,
    stream: u64,
    spectrum: PowerSpectrum,
    grid_convention: String,
}

/// Bank filters repacked in march order (step-major, modes contiguous
/// within a step) so one sample streams the memory linearly instead of
/// chasing per-matrix allocations.
struct MarchPlan {
    modes: usize,
    dim: usize,
    /// Per mode: B_eq, row-major.
    eq: Vec<f64>,
    /// Per step i, per mode: A then B, row-major.
    north: Vec<f64>,
    south: Vec<f64>,
}

impl MarchPlan {
    fn new(bank: &FilterBank) -> Self {
        let modes = bank.grid().m_max() + 1;
        let dim = bank.state_dim();
        let dd = dim * dim;
        let n = bank.grid().n();

        let mut eq = Vec::with_capacity(modes * dd);
        for m in 0..modes {
            let b_eq = &bank.mode(m).b_eq;
            for r in 0..dim {
                for c in 0..dim {
                    eq.push(b_eq[(r, c)]);
                }
            }
        }
        fn push_step(buf: &mut Vec<f64>, step: &StepFilters, dim: usize) {
            for r in 0..dim {
                for c in 0..dim {
                    buf.push(step.a[(r, c)]);
                }
            }
            for r in 0..dim {
                for c in 0..dim {
                    buf.push(step.b[(r, c)]);
                }
            }
        }
        let mut north = Vec::with_capacity(n * modes * 2 * dd);
        let mut south = Vec::with_capacity(n * modes * 2 * dd);
        for i in 0..n {
            for m in 0..modes {
                push_step(&mut north, &bank.mode(m).north[i], dim);
                push_step(&mut south, &bank.mode(m).south[i], dim);
            }
        }
        MarchPlan {
            modes,
            dim,
            eq,
            north,
            south,
        }
    }
}

/// Reusable sampler holding the FFT plan, the march-ordered filters, and
/// scratch buffers; one per thread in parallel studies.
pub struct FieldSampler<'a> {
    bank: &'a FilterBank,
    plan: MarchPlan,
    c2r: Arc<dyn ComplexToReal<f64>>,
    spectrum_buf: Vec<Complex64>,
    fft_scratch: Vec<Complex64>,
    gm_row: Vec<Complex64>,
    // Flat per-mode states: [m * dim + p].
    state_re: Vec<f64>,
    state_im: Vec<f64>,
    eq_re: Vec<f64>,
    eq_im: Vec<f64>,
    w_re: Vec<f64>,
    w_im: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> FieldSampler<'a> {
    pub fn new(bank: &'a FilterBank) -> Self {
        let n_phi = bank.grid().n_phi();
        let mut planner = RealFftPlanner::<f64>::new();
        let c2r = planner.plan_fft_inverse(n_phi);
        let spectrum_buf = c2r.make_input_vec();
        let fft_scratch = c2r.make_scratch_vec();
        let plan = MarchPlan::new(bank);
        let flat = plan.modes * plan.dim;
        let dim = plan.dim;
        FieldSampler {
            bank,
            plan,
            c2r,
            spectrum_buf,
            fft_scratch,
            gm_row: vec![Complex64::new(0.0, 0.0); bank.grid().m_max() + 1],
            state_re: vec![0.0; flat],
            state_im: vec![0.0; flat],
            eq_re: vec![0.0; flat],
            eq_im: vec![0.0; flat],
            w_re: vec![0.0; dim],
            w_im: vec![0.0; dim],
            next: vec![0.0; 2 * dim],
        }
    }

    /// Draws one field realization. Noise order: equator modes m ascending,
    /// then the north sweep latitude by latitude (modes ascending within a
    /// latitude), then the south sweep, with q ascending within a mode.
    pub fn sample(&mut self, rng: &mut RngStream) -> FieldSample {
        let grid = self.bank.grid();
        let n = grid.n();
        let n_phi = grid.n_phi();
        let mut data = vec![0.0; grid.rows() * n_phi];

        self.init_equator(rng);
        self.render_ring(&mut data, grid.equator_row(), n_phi);
        self.eq_re.copy_from_slice(&self.state_re);
        self.eq_im.copy_from_slice(&self.state_im);

        for i in 1..=n {
            self.march_all(true, i - 1, rng);
            self.render_ring(&mut data, grid.equator_row() + i, n_phi);
        }

        self.state_re.copy_from_slice(&self.eq_re);
        self.state_im.copy_from_slice(&self.eq_im);
        for k in 1..=n {
            self.march_all(false, k - 1, rng);
            self.render_ring(&mut data, grid.equator_row() - k, n_phi);
        }

        FieldSample {
            grid: Arc::clone(grid),
            spectrum: Arc::clone(self.bank.spectrum()),
            seed: rng.seed(),
            stream: rng.stream(),
            data,
        }
    }

    fn init_equator(&mut self, rng: &mut RngStream) {
        let dim = self.plan.dim;
        for m in 0..self.plan.modes {
            for q in 0..dim {
                let w = draw_complex_std_normal(rng, m as u32);
                self.w_re[q] = w.re;
                self.w_im[q] = w.im;
            }
            let factor = &self.plan.eq[m * dim * dim..(m + 1) * dim * dim];
            let off = m * dim;
            for p in 0..dim {
                let row = &factor[p * dim..(p + 1) * dim];
                let mut sr = 0.0;
                let mut si = 0.0;
                for (f, (wr, wi)) in row.iter().zip(self.w_re.iter().zip(&self.w_im)) {
                    sr += f * wr;
                    si += f * wi;
                }
                self.state_re[off + p] = sr;
                self.state_im[off + p] = si;
            }
        }
    }

    /// Advances every mode by one latitude step, reading the packed
    /// filters linearly: x <- A x + B w with the per-mode noise w.
    fn march_all(&mut self, northward: bool, step: usize, rng: &mut RngStream) {
        let dim = self.plan.dim;
        let dd = dim * dim;
        let buf = if northward {
            &self.plan.north
        } else {
            &self.plan.south
        };
        let base = step * self.plan.modes * 2 * dd;
        for m in 0..self.plan.modes {
            for q in 0..dim {
                let w = draw_complex_std_normal(rng, m as u32);
                self.w_re[q] = w.re;
                self.w_im[q] = w.im;
            }
            let a = &buf[base + m * 2 * dd..base + m * 2 * dd + dd];
            let b = &buf[base + m * 2 * dd + dd..base + (m + 1) * 2 * dd];
            let off = m * dim;
            for p in 0..dim {
                let ar = &a[p * dim..(p + 1) * dim];
                let br = &b[p * dim..(p + 1) * dim];
                let mut sr = 0.0;
                let mut si = 0.0;
                for q in 0..dim {
                    sr += ar[q] * self.state_re[off + q] + br[q] * self.w_re[q];
                    si += ar[q] * self.state_im[off + q] + br[q] * self.w_im[q];
                }
                // Flush values hundreds of orders below the field scale;
                // subnormals stall the FPU in the damped pole regime.
                self.next[p] = if sr.abs() < 1e-280 { 0.0 } else { sr };
                self.next[dim + p] = if si.abs() < 1e-280 { 0.0 } else { si };
            }
            self.state_re[off..off + dim].copy_from_slice(&self.next[..dim]);
            self.state_im[off..off + dim].copy_from_slice(&self.next[dim..]);
        }
    }

    fn render_ring(&mut self, data: &mut [f64], row: usize, n_phi: usize) {
        let dim = self.plan.dim;
        for m in 0..self.plan.modes {
            self.gm_row[m] = Complex64::new(self.state_re[m * dim], self.state_im[m * dim]);
        }
        fill_ring_spectrum(&self.gm_row, &mut self.spectrum_buf);
        let out = &mut data[row * n_phi..(row + 1) * n_phi];
        self.c2r
            .process_with_scratch(&mut self.spectrum_buf, out, &mut self.fft_scratch)
            .expect("Hermitian spectrum layout");
    }
}

/// One-shot generation; use [`FieldSampler`] to amortize the FFT plan over
/// many samples.
pub fn generate(bank: &FilterBank, rng: &mut RngStream) -> FieldSample {
    FieldSampler::new(bank).sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{precompute, LatitudeGrid};
    use approx::assert_relative_eq;

    fn small_bank() -> FilterBank {
        let spec = PowerSpectrum::from_squared_amplitude(10.0).unwrap();
        let grid = LatitudeGrid::new(4, 4, 8).unwrap();
        precompute(&spec, &grid).unwrap()
    }

    #[test]
    fn complex_normal_moments() {
        let mut rng = RngStream::new(11);
        let n = 1_000_000usize;
        let mut mean = Complex64::new(0.0, 0.0);
        let mut power = 0.0;
        for _ in 0..n {
            let w = draw_complex_std_normal(&mut rng, 3);
            mean += w;
            power += w.norm_sqr();
        }
        mean /= n as f64;
        power /= n as f64;
        assert!(mean.norm() <= 4.0 / (n as f64).sqrt());
        assert!((power - 1.0).abs() < 0.01);
    }

    #[test]
    fn mode_zero_draws_are_real() {
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            assert_eq!(draw_complex_std_normal(&mut rng, 0).im, 0.0);
        }
    }

    #[test]
    fn zero_factor_gives_zero_state() {
        let mut rng = RngStream::new(1);
        let zero = DMatrix::zeros(2, 2);
        let s = ModeState::from_noise(2, &zero, &mut rng);
        assert!(s.re.amax() == 0.0 && s.im.amax() == 0.0);
    }

    #[test]
    fn initial_state_mode_zero_is_real() {
        let bank = small_bank();
        let mut rng = RngStream::new(9);
        for _ in 0..50 {
            let s = initial_state(&bank, 0, &mut rng);
            assert!(s.im.amax() == 0.0);
        }
    }

    #[test]
    fn initial_state_covariance_matches_bank() {
        let bank = small_bank();
        let spec = bank.spectrum();
        let j00 = crate::filterbank::jmatrix(spec, 1, 0.0, 0.0).unwrap();
        let mut rng = RngStream::new(77);
        let n = 100_000usize;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let s = initial_state(&bank, 1, &mut rng);
            for p in 0..2 {
                for q in 0..2 {
                    // Re E[conj(g_p) g_q] accumulated from the circular state.
                    acc[(p, q)] += s.re[p] * s.re[q] + s.im[p] * s.im[q];
                }
            }
        }
        acc /= n as f64;
        for p in 0..2 {
            for q in 0..2 {
                let var = j00[(p, p)] * j00[(q, q)] + j00[(p, q)] * j00[(p, q)];
                let sigma = (var / n as f64).sqrt();
                assert!(
                    (acc[(p, q)] - j00[(p, q)]).abs() <= 3.0 * sigma,
                    "({p},{q}): {} vs {}",
                    acc[(p, q)],
                    j00[(p, q)]
                );
            }
        }
    }

    #[test]
    fn march_identity_keeps_state() {
        let mut rng = RngStream::new(3);
        let state = ModeState {
            m: 1,
            re: DVector::from_vec(vec![0.3, -0.7]),
            im: DVector::from_vec(vec![0.1, 0.2]),
        };
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 2);
        let next = march_step(&state, &a, &b, &mut rng);
        assert_eq!(next, state);
    }

    #[test]
    fn march_zero_a_forgets_state() {
        // With A = 0 the output is B w, independent of the input state.
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.4]);
        let a = DMatrix::zeros(2, 2);
        let state1 = ModeState {
            m: 1,
            re: DVector::from_vec(vec![100.0, -40.0]),
            im: DVector::from_vec(vec![3.0, 8.0]),
        };
        let state2 = ModeState {
            m: 1,
            re: DVector::zeros(2),
            im: DVector::zeros(2),
        };
        let n1 = march_step(&state1, &a, &b, &mut RngStream::new(42));
        let n2 = march_step(&state2, &a, &b, &mut RngStream::new(42));
        assert_eq!(n1.re, n2.re);
        assert_eq!(n1.im, n2.im);
    }

    #[test]
    fn march_two_latitude_joint_covariance() {
        let bank = small_bank();
        let spec = bank.spectrum();
        let grid = bank.grid();
        let z0 = grid.z_at(0);
        let z1 = grid.z_at(1);
        let j11 = crate::filterbank::jmatrix(spec, 0, z0, z0).unwrap();
        let j12 = crate::filterbank::jmatrix(spec, 0, z0, z1).unwrap();
        let j22 = crate::filterbank::jmatrix(spec, 0, z1, z1).unwrap();

        let step = &bank.mode(0).north[0];
        let mut rng = RngStream::new(2024);
        let n = 100_000usize;
        let mut acc11 = DMatrix::<f64>::zeros(2, 2);
        let mut acc12 = DMatrix::<f64>::zeros(2, 2);
        let mut acc22 = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let s0 = initial_state(&bank, 0, &mut rng);
            let s1 = march_step(&s0, &step.a, &step.b, &mut rng);
            for p in 0..2 {
                for q in 0..2 {
                    acc11[(p, q)] += s0.re[p] * s0.re[q];
                    acc12[(p, q)] += s0.re[p] * s1.re[q];
                    acc22[(p, q)] += s1.re[p] * s1.re[q];
                }
            }
        }
        acc11 /= n as f64;
        acc12 /= n as f64;
        acc22 /= n as f64;
        // Gaussian product variance: Var(xy) = Cxx Cyy + Cxy².
        for (emp, truth, cx, cy) in [
            (&acc11, &j11, &j11, &j11),
            (&acc12, &j12, &j11, &j22),
            (&acc22, &j22, &j22, &j22),
        ] {
            for p in 0..2 {
                for q in 0..2 {
                    let var = cx[(p, p)] * cy[(q, q)] + truth[(p, q)] * truth[(p, q)];
                    let sigma = (var / n as f64).sqrt();
                    assert!(
                        (emp[(p, q)] - truth[(p, q)]).abs() <= 3.0 * sigma,
                        "({p},{q}): {} vs {}",
                        emp[(p, q)],
                        truth[(p, q)]
                    );
                }
            }
        }
    }

    #[test]
    fn ring_synthesis_base_cases() {
        let zeros = synthesize_ring(&[Complex64::new(0.0, 0.0); 3], 8);
        assert!(zeros.iter().all(|&v| v == 0.0));

        let constant = synthesize_ring(
            &[
                Complex64::new(1.25, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
            8,
        );
        assert!(constant.iter().all(|&v| (v - 1.25).abs() < 1e-15));
    }

    #[test]
    fn ring_synthesis_single_mode_oracle() {
        // g_1 = 1, m_max = 2, n_phi = 8 -> T(phi_j) = 2 cos(phi_j); checked
        // against the direct summation oracle.
        let gm = [
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let out = synthesize_ring(&gm, 8);
        for (j, &v) in out.iter().enumerate() {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / 8.0;
            let direct: Complex64 = (-2i32..=2)
                .map(|m| {
                    let g = if m >= 0 {
                        gm[m as usize]
                    } else {
                        gm[(-m) as usize].conj()
                    };
                    g * Complex64::new(0.0, m as f64 * phi).exp()
                })
                .sum();
            assert!(direct.im.abs() < 1e-12);
            assert_relative_eq!(v, 2.0 * phi.cos(), epsilon = 1e-12);
            assert_relative_eq!(v, direct.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_bank_gives_zero_field() {
        // All-zero factors: the conditional chain never injects noise.
        let spec = PowerSpectrum::from_squared_amplitude(10.0).unwrap();
        let grid = LatitudeGrid::new(3, 3, 6).unwrap();
        let zero = DMatrix::zeros(2, 2);
        let modes = (0..=3)
            .map(|_| crate::filterbank::ModeFilters {
                b_eq: zero.clone(),
                north: (0..3)
                    .map(|_| crate::filterbank::StepFilters {
                        a: zero.clone(),
                        b: zero.clone(),
                    })
                    .collect(),
                south: (0..3)
                    .map(|_| crate::filterbank::StepFilters {
                        a: zero.clone(),
                        b: zero.clone(),
                    })
                    .collect(),
            })
            .collect();
        let bank = FilterBank::from_parts(Arc::new(grid), Arc::new(spec), modes);
        let sample = generate(&bank, &mut RngStream::new(17));
        assert!(sample.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn longitudinal_stationarity() {
        // Cov(T(z, phi0), T(z, phi0 + dphi)) must not depend on phi0.
        let bank = small_bank();
        let mut sampler = FieldSampler::new(&bank);
        let n = 20_000usize;
        let lag = 3usize;
        let origins = [0usize, 5];
        let mut sums = [0.0f64; 2];
        let mut sums2 = [0.0f64; 2];
        for j in 0..n {
            let mut rng = RngStream::substream(404, j as u64);
            let sample = sampler.sample(&mut rng);
            let ring = sample.equator_row();
            for (k, &o) in origins.iter().enumerate() {
                let p = ring[o] * ring[(o + lag) % ring.len()];
                sums[k] += p;
                sums2[k] += p * p;
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sums.iter().map(|s| s / nf).collect();
        let se: Vec<f64> = sums2
            .iter()
            .zip(&mean)
            .map(|(s2, m)| (((s2 - nf * m * m) / (nf - 1.0)).max(0.0) / nf).sqrt())
            .collect();
        let band = 3.0 * (se[0] * se[0] + se[1] * se[1]).sqrt();
        assert!(
            (mean[0] - mean[1]).abs() <= band,
            "lag covariance differs across origins: {} vs {} (band {band})",
            mean[0],
            mean[1]
        );
    }

    #[test]
    fn csv_export_round_trips_values() {
        let bank = small_bank();
        let sample = generate(&bank, &mut RngStream::new(12));
        let mut out = Vec::new();
        sample.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), sample.rows());
        for (t, line) in rows.iter().enumerate() {
            let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(vals.len(), sample.cols());
            for (c, v) in vals.iter().enumerate() {
                assert_eq!(*v, sample.value(t, c));
            }
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let bank = small_bank();
        let s1 = generate(&bank, &mut RngStream::substream(123, 4));
        let s2 = generate(&bank, &mut RngStream::substream(123, 4));
        assert_eq!(s1.data(), s2.data());
        let s3 = generate(&bank, &mut RngStream::substream(123, 5));
        assert_ne!(s1.data(), s3.data());
    }

    #[test]
    fn field_file_round_trip() {
        let bank = small_bank();
        let sample = generate(&bank, &mut RngStream::new(31));
        let mut bytes = Vec::new();
        sample.write_to(&mut bytes).unwrap();
        let loaded = FieldSample::read_from(bytes.as_slice()).unwrap();
        assert_eq!(loaded.data(), sample.data());
        assert_eq!(loaded.seed(), 31);
        let mut bytes2 = Vec::new();
        loaded.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn truncated_field_file_errors() {
        let bank = small_bank();
        let sample = generate(&bank, &mut RngStream::new(31));
        let mut bytes = Vec::new();
        sample.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(
            FieldSample::read_from(bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
