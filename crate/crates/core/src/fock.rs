//! Truncated Fock-space numerics for the modulated-state ensemble.
//!
//! The average transmitted state `tau = sum_k p_k |alpha_k><alpha_k|` is built
//! in the number basis `|0>..|cutoff>`, and the correlation term
//! `Z = 2 Tr(sqrt(tau) a† sqrt(tau) a)` is evaluated through the spectral
//! decomposition of `tau`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::constellation::Constellation;
use crate::engine::EngineError;

/// Minimum squared norm each truncated coherent state must retain.
pub const NORM_TOLERANCE: f64 = 1e-10;
/// Eigenvalues of `tau` above this (negative) bound are clamped to zero.
pub const EIGEN_FLOOR: f64 = -1e-12;
/// Agreement required between successive cutoff doublings.
pub const Z_STABILITY: f64 = 1e-9;
pub const MAX_DOUBLINGS: u32 = 3;
/// Amplitudes below this are dropped when building `tau`. Keeping them
/// stretches the dynamic range until the eigensolver underflows.
const AMPLITUDE_FLOOR: f64 = 1e-30;

/// Fock amplitudes `e^{-|alpha|^2/2} alpha^m / sqrt(m!)` for `m = 0..=cutoff`.
pub fn fock_amplitudes(alpha: Complex64, cutoff: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(cutoff + 1);
    let mut entry = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    out.push(entry);
    for m in 1..=cutoff {
        entry = entry * alpha / (m as f64).sqrt();
        out.push(entry);
    }
    out
}

/// `tau` in the truncated number basis, dimension `(cutoff + 1)^2`.
pub fn average_state(c: &Constellation, cutoff: usize) -> Result<DMatrix<Complex64>, EngineError> {
    let dim = cutoff + 1;
    let mut tau = DMatrix::<Complex64>::zeros(dim, dim);
    for pt in c.points() {
        let mut v = fock_amplitudes(pt.amplitude, cutoff);
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if norm < 1.0 - NORM_TOLERANCE {
            return Err(EngineError::Truncation { cutoff, norm });
        }
        for z in v.iter_mut().filter(|z| z.norm() < AMPLITUDE_FLOOR) {
            *z = Complex64::new(0.0, 0.0);
        }
        for j in 0..dim {
            let cj = v[j].conj() * pt.probability;
            for i in 0..dim {
                tau[(i, j)] += v[i] * cj;
            }
        }
    }
    let trace = tau.trace().re;
    if !(trace >= 1.0 - NORM_TOLERANCE && trace <= 1.0 + 1e-12) {
        return Err(EngineError::Truncation {
            cutoff,
            norm: trace,
        });
    }
    Ok(tau)
}

/// Principal square root of a Hermitian PSD matrix by eigendecomposition.
pub fn psd_sqrt(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>, EngineError> {
    let eig = m.clone().symmetric_eigen();
    let mut roots = Vec::with_capacity(eig.eigenvalues.len());
    for &lambda in eig.eigenvalues.iter() {
        if lambda < EIGEN_FLOOR {
            return Err(EngineError::NegativeEigenvalue(lambda));
        }
        roots.push(Complex64::new(lambda.max(0.0).sqrt(), 0.0));
    }
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(r.re);
    }
    Ok(scaled * u.adjoint())
}

/// Truncated annihilation operator, `a|n> = sqrt(n)|n-1>`.
pub fn annihilation(cutoff: usize) -> DMatrix<Complex64> {
    let dim = cutoff + 1;
    DMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            Complex64::new((j as f64).sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// `Z = 2 Tr(sqrt(tau) a† sqrt(tau) a)` at a fixed cutoff.
pub fn correlation_z(c: &Constellation, cutoff: usize) -> Result<f64, EngineError> {
    let tau = average_state(c, cutoff)?;
    // tau vanishes beyond its last populated level; the eigensolver returns
    // NaN on such a zero block, and dropping it leaves Z unchanged
    let dim = (0..=cutoff)
        .rev()
        .find(|&i| tau[(i, i)].re > 0.0)
        .map_or(1, |i| i + 1);
    let tau = tau.view((0, 0), (dim, dim)).into_owned();
    let root = psd_sqrt(&tau)?;
    let a = annihilation(dim - 1);
    let left = &root * a.adjoint();
    let right = &root * &a;
    let tr: Complex64 = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .map(|(i, j)| left[(i, j)] * right[(j, i)])
        .sum();
    let z = 2.0 * tr;
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(EngineError::NonFinite("correlation term Z".into()));
    }
    if z.im.abs() > 1e-10 * z.re.abs().max(1.0) {
        return Err(EngineError::Domain(format!(
            "correlation term has imaginary residue {:e}",
            z.im
        )));
    }
    Ok(z.re.max(0.0))
}

/// Starting cutoff for the automatic policy: `max(20, ceil(4 (max|alpha|^2 + 3)))`.
pub fn auto_cutoff_start(c: &Constellation) -> usize {
    let n = (4.0 * (c.max_photon_number() + 3.0)).ceil() as usize;
    n.max(20)
}

/// Evaluates `Z` from `start`, doubling the cutoff until two successive values
/// agree to [`Z_STABILITY`]. Returns `Z` and the cutoff it was accepted at.
pub fn correlation_z_converged(
    c: &Constellation,
    start: usize,
) -> Result<(f64, usize), EngineError> {
    let mut cutoff = start;
    let mut z = correlation_z(c, cutoff)?;
    let mut delta = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        let next = correlation_z(c, cutoff * 2)?;
        delta = (next - z).abs();
        if delta <= Z_STABILITY {
            return Ok((z, cutoff));
        }
        cutoff *= 2;
        z = next;
    }
    Err(EngineError::NotConverged { cutoff, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{ConstellationPoint, ProtocolTag, QamDistribution};

    fn single(alpha: Complex64) -> Constellation {
        Constellation::from_points(
            ProtocolTag::Psk,
            alpha.norm(),
            vec![ConstellationPoint {
                amplitude: alpha,
                probability: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn vacuum_amplitudes() {
        let v = fock_amplitudes(Complex64::new(0.0, 0.0), 5);
        assert_eq!(v[0], Complex64::new(1.0, 0.0));
        assert!(v[1..].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn coherent_amplitudes() {
        let v = fock_amplitudes(Complex64::new(1.0, 0.0), 20);
        assert!((v[0].re - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v[0].re - 0.60653).abs() < 1e-5);
        // direct formula at m = 3: e^{-1/2} / sqrt(6)
        assert!((v[3].re - (-0.5f64).exp() / 6f64.sqrt()).abs() < 1e-15);

        let v = fock_amplitudes(Complex64::new(0.5, 0.0), 20);
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vacuum_projector() {
        let tau = average_state(&single(Complex64::new(0.0, 0.0)), 6).unwrap();
        assert_eq!(tau[(0, 0)], Complex64::new(1.0, 0.0));
        let rest: f64 = tau.iter().map(|z| z.norm()).sum::<f64>() - 1.0;
        assert_eq!(rest, 0.0);
    }

    #[test]
    fn psk4_state_is_phase_averaged() {
        let c = Constellation::psk(4, 0.5).unwrap();
        let tau = average_state(&c, 24).unwrap();
        for i in 0..=24 {
            assert!(tau[(i, i)].re >= 0.0);
            for j in 0..=24 {
                if (i as i64 - j as i64).rem_euclid(4) != 0 {
                    assert!(tau[(i, j)].norm() < 1e-15, "tau[{i},{j}] = {}", tau[(i, j)]);
                }
            }
        }
        let tr = tau.trace().re;
        assert!(tr <= 1.0 + 1e-15 && tr >= 1.0 - 1e-10);
    }

    #[test]
    fn average_state_reports_truncation() {
        let c = Constellation::psk(4, 3.0).unwrap();
        match average_state(&c, 5) {
            Err(EngineError::Truncation { cutoff, norm }) => {
                assert_eq!(cutoff, 5);
                assert!(norm < 0.9);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn z_of_pure_states() {
        // pure state: sqrt(tau) = tau, Z = 2 |alpha|^2
        let z = correlation_z(&single(Complex64::new(1.0, 0.0)), 30).unwrap();
        assert!((z - 2.0).abs() < 1e-9, "Z = {z}");
        let z = correlation_z(&single(Complex64::new(0.0, 0.0)), 10).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn weak_state_at_large_cutoff() {
        let c = single(Complex64::new(-0.0036, -0.0524));
        let (z, _) = correlation_z_converged(&c, 20).unwrap();
        assert!((z - 2.0 * c.mean_photon_number()).abs() < 1e-12);
        assert!(correlation_z(&c, 160).unwrap().is_finite());
    }

    #[test]
    fn sqrt_squares_back() {
        let c = Constellation::qam(16, 0.4, QamDistribution::Binomial).unwrap();
        let tau = average_state(&c, 20).unwrap();
        let r = psd_sqrt(&tau).unwrap();
        let err = (&r * &r - &tau).norm();
        assert!(err < 1e-7, "residual {err}");
    }

    #[test]
    fn auto_cutoff_rule() {
        assert_eq!(auto_cutoff_start(&Constellation::psk(4, 0.5).unwrap()), 20);
        // max |alpha|^2 = 4 -> ceil(4 * 7) = 28
        assert_eq!(auto_cutoff_start(&Constellation::psk(4, 2.0).unwrap()), 28);
    }

    #[test]
    fn converged_z_is_stable() {
        let c = Constellation::apsk(16, 1.0).unwrap();
        let (z, cutoff) = correlation_z_converged(&c, auto_cutoff_start(&c)).unwrap();
        let z10 = correlation_z(&c, cutoff + 10).unwrap();
        assert!((z - z10).abs() < 1e-8);
    }
}
