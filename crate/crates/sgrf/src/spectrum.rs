//! Angular power spectra of the form C_l = amplitude * prod_i (kappa_i + l(l+1))^{-1}
//! and their partial-fraction decomposition into degrees lambda_i and
//! residues b_i.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of leading degrees checked for positivity at construction.
const POSITIVITY_CHECK_L: u32 = 64;

/// Validated angular power spectrum.
///
/// Immutable after construction; the invariants (distinct kappas,
/// conjugate closure, non-integer lambdas, positive C_l) are enforced by
/// the constructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    kappas: Vec<[f64; 2]>,
    lambdas: Vec<[f64; 2]>,
    residues: Vec<[f64; 2]>,
    amplitude: f64,
}

impl PowerSpectrum {
    /// Builds a spectrum from operator roots kappa_i with unit amplitude.
    pub fn from_kappas(kappas: &[Complex64]) -> Result<Self> {
        Self::with_amplitude(kappas, 1.0)
    }

    /// Builds the M=2 family C_l = a² + l²(l+1)² in inverse, i.e.
    /// kappa = (i*a, -i*a) with a = sqrt(a2).
    pub fn from_squared_amplitude(a2: f64) -> Result<Self> {
        if a2 <= 0.0 || !a2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "squared amplitude must be positive and finite, got {a2}"
            )));
        }
        let a = a2.sqrt();
        Self::from_kappas(&[Complex64::new(0.0, a), Complex64::new(0.0, -a)])
    }

    /// Builds a spectrum with an overall scalar multiplier on C_l, applied
    /// to the residues.
    pub fn with_amplitude(kappas: &[Complex64], amplitude: f64) -> Result<Self> {
        if kappas.is_empty() {
            return Err(Error::InvalidArgument(
                "kappa list must not be empty".into(),
            ));
        }
        if amplitude <= 0.0 || !amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "amplitude must be positive and finite, got {amplitude}"
            )));
        }

        let max_norm = kappas.iter().map(|k| k.norm()).fold(0.0f64, f64::max);
        for i in 0..kappas.len() {
            for j in (i + 1)..kappas.len() {
                if (kappas[i] - kappas[j]).norm() <= 1e-12 * max_norm.max(1.0) {
                    return Err(Error::DuplicateKappa { i, j });
                }
            }
        }
        // Non-real kappas must come in conjugate pairs, else the field
        // cannot be real-valued.
        for (i, k) in kappas.iter().enumerate() {
            if k.im.abs() > 1e-12 * max_norm.max(1.0)
                && !kappas
                    .iter()
                    .any(|other| (other - k.conj()).norm() <= 1e-12 * max_norm.max(1.0))
            {
                return Err(Error::NonConjugateKappas { i, kappa: *k });
            }
        }

        let lambdas = kappas
            .iter()
            .map(|&k| lambda_from_kappa(k))
            .collect::<Result<Vec<_>>>()?;
        for (&k, &l) in kappas.iter().zip(&lambdas) {
            debug_assert!(
                (l * (l + 1.0) + k).norm() <= 1e-12 * k.norm().max(1.0),
                "lambda root residual too large"
            );
        }

        let mut res = residues(kappas)?;
        for b in &mut res {
            *b *= amplitude;
        }

        let spec = PowerSpectrum {
            kappas: kappas.iter().map(|k| [k.re, k.im]).collect(),
            lambdas: lambdas.iter().map(|l| [l.re, l.im]).collect(),
            residues: res.iter().map(|b| [b.re, b.im]).collect(),
            amplitude,
        };
        // C_l must be positive real over the leading degrees.
        for l in 0..=POSITIVITY_CHECK_L {
            let c = spec.angular_power_complex(l);
            if c.re <= 0.0 || !c.re.is_finite() || c.im.abs() > 1e-10 * c.re.abs() {
                return Err(Error::NonPositiveSpectrum { l, value: c });
            }
        }
        Ok(spec)
    }

    /// Operator order count M.
    pub fn order(&self) -> usize {
        self.kappas.len()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn kappas(&self) -> Vec<Complex64> {
        self.kappas
            .iter()
            .map(|k| Complex64::new(k[0], k[1]))
            .collect()
    }

    pub fn lambdas(&self) -> Vec<Complex64> {
        self.lambdas
            .iter()
            .map(|l| Complex64::new(l[0], l[1]))
            .collect()
    }

    pub fn residues(&self) -> Vec<Complex64> {
        self.residues
            .iter()
            .map(|b| Complex64::new(b[0], b[1]))
            .collect()
    }

    fn angular_power_complex(&self, l: u32) -> Complex64 {
        let x = l as f64 * (l as f64 + 1.0);
        let mut c = Complex64::new(self.amplitude, 0.0);
        for k in &self.kappas {
            c /= Complex64::new(k[0] + x, k[1]);
        }
        c
    }

    /// Angular power C_l, evaluated by the product form.
    pub fn angular_power(&self, l: u32) -> f64 {
        let product = self.angular_power_complex(l);
        debug_assert!(
            {
                let pf = self.angular_power_partial_fraction(l);
                let tol = (20.0 * f64::EPSILON * self.partial_fraction_condition(l)).max(1e-10);
                (pf - product).norm() <= tol * product.norm()
            },
            "product and partial-fraction forms of C_l disagree at l = {l}"
        );
        product.re
    }

    /// Cancellation factor of the partial-fraction form at degree l: the
    /// summands exceed the result by this ratio, so the two forms can only
    /// agree to ~eps times it.
    fn partial_fraction_condition(&self, l: u32) -> f64 {
        let x = l as f64 * (l as f64 + 1.0);
        let result = self.angular_power_complex(l).norm().max(f64::MIN_POSITIVE);
        self.lambdas
            .iter()
            .zip(&self.residues)
            .map(|(lm, b)| {
                let lambda = Complex64::new(lm[0], lm[1]);
                (Complex64::new(b[0], b[1]) / (x - lambda * (lambda + 1.0))).norm()
            })
            .sum::<f64>()
            / result
    }

    /// C_l by the partial-fraction form sum_i b_i / (l(l+1) - lambda_i(lambda_i+1)).
    pub fn angular_power_partial_fraction(&self, l: u32) -> Complex64 {
        let x = l as f64 * (l as f64 + 1.0);
        self.lambdas
            .iter()
            .zip(&self.residues)
            .map(|(lm, b)| {
                let lambda = Complex64::new(lm[0], lm[1]);
                Complex64::new(b[0], b[1]) / (x - lambda * (lambda + 1.0))
            })
            .sum()
    }
}

/// Root of lambda² + lambda + kappa = 0 with Re(lambda) >= -1/2, ties
/// broken by Im(lambda) >= 0. Errors when lambda falls within 1e-9 of an
/// integer, for which C_l is undefined.
pub fn lambda_from_kappa(kappa: Complex64) -> Result<Complex64> {
    // Principal sqrt has Re >= 0, giving the canonical branch directly.
    let root = (Complex64::new(0.25, 0.0) - kappa).sqrt();
    let lambda = -0.5 + root;
    let nearest = lambda.re.round();
    if (lambda - nearest).norm() < 1e-9 {
        return Err(Error::IntegerLambda { kappa, lambda });
    }
    Ok(lambda)
}

/// Partial-fraction residues b_i = prod_{j != i} (kappa_j - kappa_i)^{-1},
/// so that prod_i (x + kappa_i)^{-1} = sum_i b_i / (x + kappa_i).
pub fn residues(kappas: &[Complex64]) -> Result<Vec<Complex64>> {
    let max_norm = kappas.iter().map(|k| k.norm()).fold(0.0f64, f64::max);
    let mut out = Vec::with_capacity(kappas.len());
    for (i, &ki) in kappas.iter().enumerate() {
        let mut b = Complex64::new(1.0, 0.0);
        for (j, &kj) in kappas.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = kj - ki;
            if d.norm() <= 1e-12 * max_norm.max(1.0) {
                return Err(Error::DuplicateKappa { i, j });
            }
            b /= d;
        }
        out.push(b);
    }
    Ok(out)
}
