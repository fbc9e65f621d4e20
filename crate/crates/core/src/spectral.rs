//! Radial power spectrum of a field and annular band metrics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Fft2, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Annulus of normalized radial frequencies (cycles/pixel), inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub r_lo: f64,
    pub r_hi: f64,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            r_lo: 0.05,
            r_hi: 0.22,
        }
    }
}

impl BandSpec {
    pub fn new(r_lo: f64, r_hi: f64) -> Result<Self> {
        let b = Self { r_lo, r_hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.r_lo && self.r_lo < self.r_hi && self.r_hi <= 0.5) {
            return Err(Error::config(format!(
                "band must satisfy 0 <= r_lo < r_hi <= 0.5, got [{}, {}]",
                self.r_lo, self.r_hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, r: f64) -> bool {
        self.r_lo <= r && r <= self.r_hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralMetrics {
    pub band_ratio: f64,
    pub band_power: f64,
}

/// Signed DFT frequency of bin `i` out of `n`, in cycles/sample.
pub fn signed_frequency(i: usize, n: usize) -> f64 {
    let k = if 2 * i < n {
        i as f64
    } else {
        i as f64 - n as f64
    };
    k / n as f64
}

/// Radial frequency of every bin of an `h x w` spectrum, row-major.
pub fn radial_frequencies(h: usize, w: usize) -> Vec<f64> {
    let mut r = Vec::with_capacity(h * w);
    for i in 0..h {
        let fy = signed_frequency(i, h);
        for j in 0..w {
            let fx = signed_frequency(j, w);
            r.push((fy * fy + fx * fx).sqrt());
        }
    }
    r
}

/// FFT plan and band mask for one grid size; cheap to clone and share.
#[derive(Clone, Debug)]
pub struct SpectralPlan<T: Real> {
    fft: Arc<Fft2<T>>,
    band_mask: Arc<Vec<T>>,
    all_mask: Arc<Vec<T>>,
    band: BandSpec,
}

impl<T: Real> SpectralPlan<T> {
    pub fn new(h: usize, w: usize, band: BandSpec) -> Result<Self> {
        band.validate()?;
        let band_mask = radial_frequencies(h, w)
            .into_iter()
            .map(|r| {
                if band.contains(r) {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(Self {
            fft: Arc::new(Fft2::new(h, w)),
            band_mask: Arc::new(band_mask),
            all_mask: Arc::new(vec![T::one(); h * w]),
            band,
        })
    }

    pub fn band(&self) -> BandSpec {
        self.band
    }

    pub fn dims(&self) -> (usize, usize) {
        self.fft.dims()
    }

    /// `|DFT2(f - mean f)|^2 / (H*W)^2` with the DC bin zeroed.
    pub fn power_spectrum(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(f.clone());
        let p = tape.power_spectrum(x, &self.fft)?;
        Ok(tape.value(p).clone())
    }

    pub fn metrics(&self, f: &Tensor<T>) -> Result<SpectralMetrics> {
        band_metrics(&self.power_spectrum(f)?, self.band)
    }

    /// Band power and band ratio of a field on the tape. The ratio is the
    /// constant 0 when the spectrum carries no power at all.
    pub fn band_terms(&self, tape: &mut Tape<T>, f: Var) -> Result<BandVars> {
        let p = tape.power_spectrum(f, &self.fft)?;
        let power = tape.weighted_sum(p, &self.band_mask)?;
        let total = tape.weighted_sum(p, &self.all_mask)?;
        let ratio = if tape.item(total)? > T::zero() {
            tape.div(power, total)?
        } else {
            tape.constant(Tensor::scalar(T::zero()))
        };
        Ok(BandVars { ratio, power })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BandVars {
    pub ratio: Var,
    pub power: Var,
}

/// Band power and selectivity of a DC-free power spectrum.
pub fn band_metrics<T: Real>(power: &Tensor<T>, band: BandSpec) -> Result<SpectralMetrics> {
    let (h, w) = match *power.shape() {
        [h, w] => (h, w),
        _ => {
            return Err(Error::config(format!(
                "band_metrics expects an [H,W] spectrum, got {:?}",
                power.shape()
            )))
        }
    };
    let radii = radial_frequencies(h, w);
    let (mut in_band, mut total) = (0.0f64, 0.0f64);
    for (&p, &r) in power.data().iter().zip(&radii) {
        let p = p.to_f64_lossy();
        total += p;
        if band.contains(r) {
            in_band += p;
        }
    }
    Ok(SpectralMetrics {
        band_ratio: if total > 0.0 { in_band / total } else { 0.0 },
        band_power: in_band,
    })
}
