//! Blind per-band filter identification from multichannel spectrograms by
//! constrained cross-relation least squares.
//!
//! For two channels driven by one source, `x ⋆ b = y ⋆ a` in each band. With
//! critically sampled filters and an oversampled signal the convolution runs
//! with stride `r = N/L`. Stacking the pair relations gives `Z c = 0`; the
//! trivial solution is excluded by `gᵀc = 1`, with `g` selecting the first tap
//! of every channel, so `ĉ = R⁻¹g / (gᵀR⁻¹g)` with `R = ZᴴZ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctf::{CtfSet, Normalization, Sampling};
use crate::error::{input, Result};
use crate::stft::{Spectrogram, StftConfig};

/// Relative diagonal loading for near-singular normal equations.
pub const LOADING: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `P × Q̃` matrix with entry `(p, q) = x[p − stride·q]` (zero before the start).
pub fn build_signal_matrix(
    x: &[Complex64],
    taps: usize,
    stride: usize,
) -> Result<DMatrix<Complex64>> {
    if taps == 0 || stride == 0 {
        return input("filter length and stride must be positive");
    }
    let need = stride * (taps - 1) + 1;
    if x.len() < need {
        return input(format!(
            "{} frames cannot support {taps} taps at stride {stride} (need {need})",
            x.len()
        ));
    }
    Ok(DMatrix::from_fn(x.len(), taps, |p, q| {
        p.checked_sub(stride * q).map_or(ZERO, |i| x[i])
    }))
}

/// `Z` and `g` of one band.
#[derive(Debug, Clone)]
pub struct CrossRelationSystem {
    pub band: usize,
    pub channels: usize,
    pub taps: usize,
    pub z: DMatrix<Complex64>,
    pub g: DVector<Complex64>,
}

/// Unordered channel pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn channel_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect()
}

/// One block row per channel pair `(i, j)`: `X_j` in channel-i columns and
/// `−X_i` in channel-j columns, so that `X_j c_i − X_i c_j = 0`.
pub fn assemble_system(
    band_signals: &[Vec<Complex64>],
    taps: usize,
    stride: usize,
    band: usize,
) -> Result<CrossRelationSystem> {
    let m = band_signals.len();
    if m < 2 {
        return input(format!("identification needs at least 2 channels, got {m}"));
    }
    let p = band_signals[0].len();
    if band_signals.iter().any(|x| x.len() != p) {
        return input("channels have different frame counts");
    }
    let mats: Vec<DMatrix<Complex64>> = band_signals
        .iter()
        .map(|x| build_signal_matrix(x, taps, stride))
        .collect::<Result<_>>()?;
    let pairs = channel_pairs(m);
    let mut z = DMatrix::zeros(p * pairs.len(), m * taps);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        z.view_mut((row * p, i * taps), (p, taps)).copy_from(&mats[j]);
        z.view_mut((row * p, j * taps), (p, taps))
            .copy_from(&(-&mats[i]));
    }
    let mut g = DVector::zeros(m * taps);
    for c in 0..m {
        g[c * taps] = ONE;
    }
    Ok(CrossRelationSystem {
        band,
        channels: m,
        taps,
        z,
        g,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDiagnostics {
    pub band: usize,
    /// `‖Zĉ‖²`.
    pub residual: f64,
    /// `λ_max / λ_min` of `ZᴴZ` (infinite when singular).
    pub condition: f64,
    /// Diagonal loading was applied.
    pub loaded: bool,
    /// No unique solution; taps are placeholders.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct IdentifiedFilters {
    /// Constrained solution, channels concatenated.
    pub raw: DVector<Complex64>,
    /// `[channel][tap]`, divided by the first tap of channel 0.
    pub normalized: Vec<Vec<Complex64>>,
    pub diagnostics: BandDiagnostics,
}

impl IdentifiedFilters {
    fn degenerate(sys: &CrossRelationSystem, condition: f64, loaded: bool) -> Self {
        let mut unit = vec![ZERO; sys.taps];
        unit[0] = ONE;
        IdentifiedFilters {
            raw: DVector::zeros(sys.channels * sys.taps),
            normalized: vec![unit; sys.channels],
            diagnostics: BandDiagnostics {
                band: sys.band,
                residual: f64::NAN,
                condition,
                loaded,
                degenerate: true,
            },
        }
    }
}

fn split_channels(c: &DVector<Complex64>, channels: usize, taps: usize) -> Vec<Vec<Complex64>> {
    (0..channels)
        .map(|m| c.rows(m * taps, taps).iter().copied().collect())
        .collect()
}

fn normalize(c: &DVector<Complex64>, channels: usize, taps: usize) -> Option<Vec<Vec<Complex64>>> {
    let pivot = c[0];
    if !(pivot.norm() > 0.0) || !pivot.is_finite() {
        return None;
    }
    let mut out = split_channels(c, channels, taps);
    for ch in &mut out {
        for v in ch.iter_mut() {
            *v /= pivot;
        }
    }
    out[0][0] = ONE;
    Some(out)
}

/// Solves `min ‖Zc‖² s.t. gᵀc = 1` through the eigendecomposition of `ZᴴZ`.
pub fn identify_band(sys: &CrossRelationSystem) -> IdentifiedFilters {
    let n = sys.channels * sys.taps;
    let r = sys.z.adjoint() * &sys.z;
    let eig = SymmetricEigen::new(r);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lmin = eig.eigenvalues[order[0]].max(0.0);
    let lmax = eig.eigenvalues[order[n - 1]];
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(lmax > 0.0) {
        return IdentifiedFilters::degenerate(sys, condition, false);
    }

    let load = LOADING * eig.eigenvalues.sum() / n as f64;
    let loaded = lmin <= load;
    // a second eigenvalue at the loading level means a non-unique null space
    if n > 1 && eig.eigenvalues[order[1]] <= load {
        return IdentifiedFilters::degenerate(sys, condition, loaded);
    }
    let shift = if loaded { load } else { 0.0 };

    let mut rinv_g = DVector::<Complex64>::zeros(n);
    for i in 0..n {
        let v = eig.eigenvectors.column(i);
        let coef = v.dotc(&sys.g) / (eig.eigenvalues[i].max(0.0) + shift);
        rinv_g.axpy(coef, &v, ONE);
    }
    let denom = sys.g.dotc(&rinv_g);
    let raw = rinv_g / denom;

    let Some(normalized) = normalize(&raw, sys.channels, sys.taps) else {
        return IdentifiedFilters::degenerate(sys, condition, loaded);
    };
    let residual = (&sys.z * &raw).norm_squared();
    IdentifiedFilters {
        raw,
        normalized,
        diagnostics: BandDiagnostics {
            band: sys.band,
            residual,
            condition,
            loaded,
            degenerate: false,
        },
    }
}

/// Right singular vector of the smallest singular value of `Z`, scaled so
/// that `gᵀc = 1`. Diagnostic only.
pub fn identify_band_eigenvector(sys: &CrossRelationSystem) -> DVector<Complex64> {
    let n = sys.channels * sys.taps;
    let svd = sys.z.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let k = (0..svd.singular_values.len())
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap_or(0);
    // rows of Vᴴ are conjugated right singular vectors
    let v: DVector<Complex64> = DVector::from_iterator(n, v_t.row(k).iter().map(|c| c.conj()));
    let s = sys.g.dotc(&v);
    if s.norm() == 0.0 {
        v
    } else {
        v / s
    }
}

/// `round(0.5 · T60 · fs / N)`, at least 2.
pub fn select_filter_length(t60: f64, config: &StftConfig) -> usize {
    let q = (0.5 * t60 * config.sample_rate / config.frame_length as f64).round();
    if q.is_finite() && q > 2.0 {
        q as usize
    } else {
        2
    }
}

/// Stride between critically sampled taps on the signal frame grid.
pub fn tap_stride(config: &StftConfig) -> Result<usize> {
    let (n, l) = (config.frame_length, config.frame_step);
    if n % l != 0 {
        return input(format!("frame length {n} is not a multiple of step {l}"));
    }
    Ok(n / l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub taps: usize,
    pub channels: usize,
    pub bands: Vec<BandDiagnostics>,
}

impl IdentificationReport {
    pub fn degenerate_bands(&self) -> Vec<usize> {
        self.bands
            .iter()
            .filter(|b| b.degenerate)
            .map(|b| b.band)
            .collect()
    }
}

/// Runs the identification on bands `0..=N/2` in parallel.
pub fn identify_all_bands(
    specs: &[Spectrogram],
    taps: usize,
) -> Result<(CtfSet, IdentificationReport)> {
    if specs.len() < 2 {
        return input(format!("identification needs at least 2 channels, got {}", specs.len()));
    }
    let cfg = *specs[0].config();
    let frames = specs[0].frames();
    if specs
        .iter()
        .any(|s| s.config() != &cfg || s.frames() != frames)
    {
        return input("spectrograms must share configuration and frame count");
    }
    let stride = tap_stride(&cfg)?;
    let halves: Vec<Vec<Vec<Complex64>>> = specs.iter().map(Spectrogram::half_bands).collect();
    let results: Vec<IdentifiedFilters> = (0..cfg.num_bands())
        .into_par_iter()
        .map(|k| {
            let bands: Vec<Vec<Complex64>> = halves.iter().map(|h| h[k].clone()).collect();
            assemble_system(&bands, taps, stride, k).map(|sys| identify_band(&sys))
        })
        .collect::<Result<_>>()?;

    let report = IdentificationReport {
        taps,
        channels: specs.len(),
        bands: results.iter().map(|r| r.diagnostics.clone()).collect(),
    };
    let set = CtfSet {
        frame_length: cfg.frame_length,
        sampling: Sampling::Critical,
        noncausal: 0,
        normalization: Normalization::FirstChannelNormalized,
        degenerate: report.degenerate_bands(),
        taps: results.into_iter().map(|r| r.normalized).collect(),
    };
    Ok((set, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_seq(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn strided_conv(u: &[Complex64], h: &[Complex64], stride: usize) -> Vec<Complex64> {
        (0..u.len())
            .map(|p| {
                h.iter()
                    .enumerate()
                    .filter(|(q, _)| p >= stride * q)
                    .map(|(q, hq)| hq * u[p - stride * q])
                    .sum()
            })
            .collect()
    }

    fn err_db(truth: &[Complex64], est: &[Complex64]) -> f64 {
        let e: f64 = truth.iter().zip(est).map(|(a, b)| (a - b).norm_sqr()).sum();
        let t: f64 = truth.iter().map(|a| a.norm_sqr()).sum();
        10.0 * (e / t).log10()
    }

    #[test]
    fn signal_matrix_layout() {
        let x: Vec<Complex64> = (0..5).map(|i| c(i as f64 + 1.0, 0.0)).collect();
        let m = build_signal_matrix(&x, 2, 4).unwrap();
        assert_eq!(m.shape(), (5, 2));
        for p in 0..4 {
            assert_eq!(m[(p, 0)], x[p]);
            assert_eq!(m[(p, 1)], ZERO);
        }
        assert_eq!(m[(4, 1)], x[0]);
        let col = build_signal_matrix(&x, 1, 4).unwrap();
        assert_eq!(col.column(0).iter().copied().collect::<Vec<_>>(), x);
        assert!(build_signal_matrix(&x[..4], 2, 4).is_err());
    }

    #[test]
    fn signal_matrix_is_strided_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_seq(&mut rng, 30);
        let h = random_seq(&mut rng, 4);
        let m = build_signal_matrix(&x, 4, 4).unwrap();
        let y = &m * DVector::from_vec(h.clone());
        for (a, b) in y.iter().zip(strided_conv(&x, &h, 4)) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn scalar_channels() {
        let x: Vec<Complex64> = (0..8).map(|i| c((i as f64).sin(), (i as f64).cos())).collect();
        let y: Vec<Complex64> = x.iter().map(|v| v * 2.0).collect();
        let sys = assemble_system(&[x, y], 1, 4, 0).unwrap();
        assert_eq!(sys.g.iter().copied().collect::<Vec<_>>(), vec![ONE, ONE]);
        let out = identify_band(&sys);
        assert!((out.raw[0] - c(1.0 / 3.0, 0.0)).norm() < 1e-8);
        assert!((out.raw[1] - c(2.0 / 3.0, 0.0)).norm() < 1e-8);
        assert_eq!(out.normalized[0], vec![ONE]);
        assert!((out.normalized[1][0] - c(2.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn three_channel_layout() {
        let xs: Vec<Vec<Complex64>> = (0..3)
            .map(|m| (0..6).map(|i| c((i * (m + 1)) as f64, 0.0)).collect())
            .collect();
        let sys = assemble_system(&xs, 1, 4, 2).unwrap();
        assert_eq!(sys.z.shape(), (18, 3));
        assert_eq!(channel_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        // pair (0, 2): X_2 in column 0, −X_0 in column 2
        assert_eq!(sys.z[(6 + 3, 0)], xs[2][3]);
        assert_eq!(sys.z[(6 + 3, 2)], -xs[0][3]);
        assert_eq!(sys.z[(6 + 3, 1)], ZERO);
        assert!(assemble_system(&xs[..1], 1, 4, 0).is_err());
    }

    #[test]
    fn exact_two_channel_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_seq(&mut rng, 200);
        let h: Vec<Vec<Complex64>> = (0..2).map(|_| random_seq(&mut rng, 4)).collect();
        let xs: Vec<Vec<Complex64>> = h.iter().map(|hm| strided_conv(&u, hm, 4)).collect();
        let sys = assemble_system(&xs, 4, 4, 0).unwrap();
        let out = identify_band(&sys);
        assert!(!out.diagnostics.degenerate);
        let gc: Complex64 = sys.g.dotc(&out.raw);
        assert!((gc - ONE).norm() < 1e-8);
        for (m, hm) in h.iter().enumerate() {
            let truth: Vec<Complex64> = hm.iter().map(|v| v / h[0][0]).collect();
            assert!(err_db(&truth, &out.normalized[m]) < -120.0);
        }
        let ev = identify_band_eigenvector(&sys);
        assert!((&ev - &out.raw).norm() < 1e-6);
    }

    #[test]
    fn identical_channels_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_seq(&mut rng, 50);
        let sys = assemble_system(&[x.clone(), x], 2, 4, 0).unwrap();
        assert!(identify_band(&sys).diagnostics.degenerate);
        let zero = vec![ZERO; 20];
        let sys = assemble_system(&[zero.clone(), zero], 2, 4, 0).unwrap();
        assert!(identify_band(&sys).diagnostics.degenerate);
    }

    #[test]
    fn filter_length_selection() {
        let cfg = StftConfig::standard(16_000.0);
        assert_eq!(select_filter_length(0.5, &cfg), 4);
        assert_eq!(select_filter_length(0.79, &cfg), 6);
        assert_eq!(select_filter_length(0.61, &cfg), 5);
        assert_eq!(select_filter_length(0.05, &cfg), 2);
    }
}
