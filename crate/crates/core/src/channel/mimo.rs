//! Channel matrices and beamforming.
//!
//! `H(t,f) = sqrt(N_rx·N_tx / L) · Σ_k Σ_l g_kl(t,f) · u_rx(kl) · u_tx(kl)^H`
//! where the `u` are unit-norm spatial signatures and `L` is the total number
//! of subpaths. The `sqrt(N_rx·N_tx)` factor restores the array gain that the
//! unit-norm signatures normalize away, so a single path steered perfectly at
//! both ends yields `|w_rx^H H w_tx|² = N_rx·N_tx / L`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::array::{accumulate_signature, overlap_from_steps, phase_steps, projection_from_steps};
use super::{
    spatial_signature, Angles, ChannelError, ChannelInstance, LinkState, SeparableSignature,
};
use crate::units::AntennaArray;

pub type ChannelMatrix = DMatrix<Complex64>;

/// Unit-norm transmit and receive beamforming vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingVectors {
    pub w_tx: Vec<Complex64>,
    pub w_rx: Vec<Complex64>,
}

/// Optimal beams together with the gain they achieve.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPair {
    pub beams: BeamformingVectors,
    /// `|w_rx^H H w_tx|²`, linear.
    pub gain: f64,
}

fn array_scale(
    ch: &ChannelInstance,
    tx: &AntennaArray,
    rx: &AntennaArray,
) -> Result<f64, ChannelError> {
    let l = ch.clusters.total_subpaths();
    if ch.state == LinkState::Outage || l == 0 {
        return Err(ChannelError::Outage);
    }
    Ok(((rx.elements() * tx.elements()) as f64 / l as f64).sqrt())
}

/// Builds the `N_rx × N_tx` channel matrix at time `t` and frequency offset `f`.
pub fn assemble_channel_matrix(
    ch: &ChannelInstance,
    tx: &AntennaArray,
    rx: &AntennaArray,
    t: f64,
    f: f64,
) -> Result<ChannelMatrix, ChannelError> {
    let scale = array_scale(ch, tx, rx)?;
    let mut h = ChannelMatrix::zeros(rx.elements(), tx.elements());
    for sp in ch.clusters.subpaths() {
        let g = sp.fading(ch.doppler_hz, t, f) * scale;
        let u_rx = DVector::from_vec(spatial_signature(rx, sp.aoa));
        let u_tx = DVector::from_vec(spatial_signature(tx, sp.aod));
        h += (u_rx * g) * u_tx.adjoint();
    }
    Ok(h)
}

/// `|w_rx^H H w_tx|²`.
pub fn beamforming_gain(h: &ChannelMatrix, w: &BeamformingVectors) -> Result<f64, ChannelError> {
    if h.nrows() != w.w_rx.len() || h.ncols() != w.w_tx.len() {
        return Err(ChannelError::DimensionMismatch {
            rows: h.nrows(),
            cols: h.ncols(),
            rx: w.w_rx.len(),
            tx: w.w_tx.len(),
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, wr) in w.w_rx.iter().enumerate() {
        let row: Complex64 = w
            .w_tx
            .iter()
            .enumerate()
            .map(|(j, wt)| h[(i, j)] * wt)
            .sum();
        acc += wr.conj() * row;
    }
    Ok(acc.norm_sqr())
}

const POWER_ITERATIONS: usize = 2000;

/// Largest eigenvalue and a unit eigenvector of a Hermitian PSD matrix.
fn dominant_eigenpair(k: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    let n = k.nrows();
    let start = (0..n)
        .max_by(|&a, &b| k[(a, a)].re.total_cmp(&k[(b, b)].re))
        .expect("non-empty matrix");
    let mut x: DVector<Complex64> = k.column(start).into_owned();
    let norm = x.norm();
    if norm == 0.0 {
        return (
            0.0,
            DVector::from_fn(n, |i, _| Complex64::from(f64::from(i == start))),
        );
    }
    x /= Complex64::from(norm);
    let mut lambda = f64::NAN;
    let mut y = DVector::zeros(n);
    for _ in 0..POWER_ITERATIONS {
        k.mul_to(&x, &mut y);
        let next = x.dotc(&y).re;
        let norm = y.norm();
        if norm == 0.0 {
            return (0.0, x);
        }
        x.copy_from(&y);
        x /= Complex64::from(norm);
        if (next - lambda).abs() <= 1e-13 * next {
            // refresh the quotient for the final vector
            let lambda = x.dotc(&(k * &x)).re;
            return (lambda, x);
        }
        lambda = next;
    }
    // nearly degenerate leading pair: fall back to a full decomposition
    let eig = k.clone().symmetric_eigen();
    let (idx, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    (val, eig.eigenvectors.column(idx).into_owned())
}

fn normalized(v: DVector<Complex64>) -> Vec<Complex64> {
    let n = v.norm();
    (v / Complex64::from(n)).data.into()
}

/// Beam pair maximizing `|w_rx^H H w_tx|²`: the dominant singular vectors of `H`.
pub fn best_beam_pair(h: &ChannelMatrix) -> Result<BeamformingVectors, ChannelError> {
    if h.iter().all(|x| *x == Complex64::new(0.0, 0.0)) {
        return Err(ChannelError::ZeroMatrix);
    }
    let beams = if h.nrows() <= h.ncols() {
        let (_, u) = dominant_eigenpair(&(h * h.adjoint()));
        let v = h.adjoint() * &u;
        BeamformingVectors {
            w_tx: normalized(v),
            w_rx: u.data.into(),
        }
    } else {
        let (_, v) = dominant_eigenpair(&(h.adjoint() * h));
        let u = h * &v;
        BeamformingVectors {
            w_tx: v.data.into(),
            w_rx: normalized(u),
        }
    };
    Ok(beams)
}

/// Subpath terms of the factored channel `H = A·diag(c)·B^H`.
struct Factors {
    rx: Vec<SeparableSignature>,
    tx: Vec<SeparableSignature>,
    coeffs: Vec<Complex64>,
}

fn signature_matrix(sigs: &[SeparableSignature], n: usize) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(n, sigs.len());
    for (i, s) in sigs.iter().enumerate() {
        m.set_column(i, &DVector::from_vec(s.to_vec()));
    }
    m
}

/// `A · G · A^H` for Hermitian `G`.
fn congruence(a: &DMatrix<Complex64>, g: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (n, l) = a.shape();
    let (a_cols, g_cols) = (a.as_slice(), g.as_slice());
    // column-major: column j of A·G is Σ_i G[i, j] · A[:, i]
    let mut ag = vec![Complex64::new(0.0, 0.0); n * l];
    for (ag_col, g_col) in ag.chunks_exact_mut(n).zip(g_cols.chunks_exact(l)) {
        for (a_col, gij) in a_cols.chunks_exact(n).zip(g_col) {
            for (o, x) in ag_col.iter_mut().zip(a_col) {
                *o += x * gij;
            }
        }
    }
    let mut k = DMatrix::<Complex64>::zeros(n, n);
    for (ag_col, a_col) in ag.chunks_exact(n).zip(a_cols.chunks_exact(n)) {
        for q in 0..n {
            let aq = a_col[q].conj();
            for p in 0..=q {
                k[(p, q)] += ag_col[p] * aq;
            }
        }
    }
    for q in 0..n {
        k[(q, q)].im = 0.0;
        for p in 0..q {
            k[(q, p)] = k[(p, q)].conj();
        }
    }
    k
}

/// `c_i · conj(c_j) · (u_i^H u_j)`, Hermitian.
fn weighted_gram(sigs: &[SeparableSignature], c: &[Complex64]) -> DMatrix<Complex64> {
    let l = sigs.len();
    let mut g = DMatrix::zeros(l, l);
    for i in 0..l {
        g[(i, i)] = Complex64::from(c[i].norm_sqr() * sigs[i].overlap(&sigs[i]).re);
        for j in i + 1..l {
            let v = c[i] * sigs[i].overlap(&sigs[j]) * c[j].conj();
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    g
}

impl ChannelInstance {
    fn factors(
        &self,
        tx: &AntennaArray,
        rx: &AntennaArray,
        t: f64,
        f: f64,
    ) -> Result<Factors, ChannelError> {
        let scale = array_scale(self, tx, rx)?;
        let subpaths = self.clusters.subpaths();
        let mut out = Factors {
            rx: Vec::with_capacity(self.clusters.total_subpaths()),
            tx: Vec::with_capacity(self.clusters.total_subpaths()),
            coeffs: Vec::with_capacity(self.clusters.total_subpaths()),
        };
        for sp in subpaths {
            out.rx.push(SeparableSignature::new(rx, sp.aoa));
            out.tx.push(SeparableSignature::new(tx, sp.aod));
            out.coeffs.push(sp.fading(self.doppler_hz, t, f) * scale);
        }
        Ok(out)
    }

    /// Optimal beams and gain computed from the subpath factors, without
    /// forming `H`. Equivalent to [`best_beam_pair`] on the assembled matrix.
    pub fn optimal_beams(
        &self,
        tx: &AntennaArray,
        rx: &AntennaArray,
        t: f64,
        f: f64,
    ) -> Result<BeamPair, ChannelError> {
        let fa = self.factors(tx, rx, t, f)?;
        let c = &fa.coeffs;
        if rx.elements() <= tx.elements() {
            // H H^H = A (C G_B C^H) A^H with G_B the tx signature Gram matrix
            let a = signature_matrix(&fa.rx, rx.elements());
            let k = congruence(&a, &weighted_gram(&fa.tx, c));
            let (gain, u) = dominant_eigenpair(&k);
            if gain <= 0.0 {
                return Err(ChannelError::ZeroMatrix);
            }
            let mut y = a.adjoint() * &u;
            for (yi, ci) in y.iter_mut().zip(c) {
                *yi *= ci.conj();
            }
            let v = signature_matrix(&fa.tx, tx.elements()) * y;
            Ok(BeamPair {
                beams: BeamformingVectors {
                    w_tx: normalized(v),
                    w_rx: u.data.into(),
                },
                gain,
            })
        } else {
            let conj: Vec<Complex64> = c.iter().map(|x| x.conj()).collect();
            let b = signature_matrix(&fa.tx, tx.elements());
            let k = congruence(&b, &weighted_gram(&fa.rx, &conj));
            let (gain, v) = dominant_eigenpair(&k);
            if gain <= 0.0 {
                return Err(ChannelError::ZeroMatrix);
            }
            let mut y = b.adjoint() * &v;
            for (yi, ci) in y.iter_mut().zip(c) {
                *yi *= ci;
            }
            let u = signature_matrix(&fa.rx, rx.elements()) * y;
            Ok(BeamPair {
                beams: BeamformingVectors {
                    w_tx: v.data.into(),
                    w_rx: normalized(u),
                },
                gain,
            })
        }
    }

    /// `H·u_tx(tx_direction)`: the vector seen at the receive array when the
    /// transmitter steers a planar-array beam towards `tx_direction`.
    pub fn steered_response(
        &self,
        tx: &AntennaArray,
        rx: &AntennaArray,
        tx_direction: Angles,
        t: f64,
        f: f64,
    ) -> Result<Vec<Complex64>, ChannelError> {
        let scale = array_scale(self, tx, rx)?;
        let beam = phase_steps(tx, tx_direction);
        let mut out = vec![Complex64::new(0.0, 0.0); rx.elements()];
        for sp in self.clusters.subpaths() {
            let coeff = sp.fading(self.doppler_hz, t, f)
                * overlap_from_steps(tx, phase_steps(tx, sp.aod), beam)
                * scale;
            accumulate_signature(rx, &mut out, coeff, phase_steps(rx, sp.aoa));
        }
        Ok(out)
    }

    /// Gain seen through receive weights `w_rx` when the transmitter steers a
    /// planar-array beam towards `tx_direction`. Used for interferers.
    pub fn steered_gain(
        &self,
        tx: &AntennaArray,
        rx: &AntennaArray,
        w_rx: &[Complex64],
        tx_direction: Angles,
        t: f64,
        f: f64,
    ) -> Result<f64, ChannelError> {
        let scale = array_scale(self, tx, rx)?;
        let beam = phase_steps(tx, tx_direction);
        let mut acc = Complex64::new(0.0, 0.0);
        for sp in self.clusters.subpaths() {
            let g = sp.fading(self.doppler_hz, t, f);
            acc += g
                * projection_from_steps(rx, w_rx, phase_steps(rx, sp.aoa))
                * overlap_from_steps(tx, phase_steps(tx, sp.aod), beam);
        }
        Ok((acc * scale).norm_sqr())
    }
}

/// `|w^H · v|²`.
pub fn projected_power(w: &[Complex64], v: &[Complex64]) -> f64 {
    w.iter()
        .zip(v)
        .map(|(a, b)| a.conj() * b)
        .sum::<Complex64>()
        .norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_clusters, Cluster, ClusterParams, ClusterSet, Subpath};
    use crate::rng;

    fn instance(clusters: ClusterSet) -> ChannelInstance {
        ChannelInstance {
            state: LinkState::Los,
            pathloss_db: 80.0,
            shadow_db: 0.0,
            clusters,
            doppler_hz: 2333.0,
        }
    }

    #[test]
    fn degenerate_scalar_channel() {
        let sp = Subpath {
            power_fraction: 1.0,
            aoa: Angles::new(0.3, 0.1),
            aod: Angles::new(-0.2, 0.0),
            delay_s: 10e-9,
            motion_angle: 0.3,
        };
        let ch = instance(ClusterSet {
            clusters: vec![Cluster {
                power_fraction: 1.0,
                central_aoa: sp.aoa,
                central_aod: sp.aod,
                delay_s: 10e-9,
                subpaths: vec![sp],
            }],
        });
        let one = AntennaArray::new(1, 1);
        let (t, f) = (1e-4, 3e6);
        let h = assemble_channel_matrix(&ch, &one, &one, t, f).unwrap();
        assert_eq!(h.shape(), (1, 1));
        assert!((h[(0, 0)] - ch.small_scale_fading(0, 0, t, f)).norm() < 1e-15);
        let w = BeamformingVectors {
            w_tx: vec![Complex64::new(1.0, 0.0)],
            w_rx: vec![Complex64::new(1.0, 0.0)],
        };
        assert!((beamforming_gain(&h, &w).unwrap() - h[(0, 0)].norm_sqr()).abs() < 1e-15);
    }

    #[test]
    fn outage_has_no_matrix() {
        let mut ch = instance(ClusterSet::default());
        ch.state = LinkState::Outage;
        let a = AntennaArray::new(2, 2);
        assert_eq!(
            assemble_channel_matrix(&ch, &a, &a, 0.0, 0.0),
            Err(ChannelError::Outage)
        );
    }

    #[test]
    fn gain_rejects_mismatched_beams() {
        let h = ChannelMatrix::zeros(4, 16);
        let w = BeamformingVectors {
            w_tx: vec![Complex64::new(1.0, 0.0); 4],
            w_rx: vec![Complex64::new(1.0, 0.0); 16],
        };
        assert!(matches!(
            beamforming_gain(&h, &w),
            Err(ChannelError::DimensionMismatch { .. })
        ));
        assert_eq!(best_beam_pair(&h), Err(ChannelError::ZeroMatrix));
    }

    #[test]
    fn factored_optimum_matches_matrix_route() {
        let p = ClusterParams::default();
        let mut r = rng::stream(21, &[]);
        for (tx, rx) in [
            (AntennaArray::new(8, 8), AntennaArray::new(4, 4)),
            (AntennaArray::new(2, 2), AntennaArray::new(4, 4)),
            (AntennaArray::new(2, 2), AntennaArray::new(2, 2)),
        ] {
            for _ in 0..20 {
                let ch = instance(sample_clusters(&p, &mut r));
                let h = assemble_channel_matrix(&ch, &tx, &rx, 0.0, 0.0).unwrap();
                let via_matrix = beamforming_gain(&h, &best_beam_pair(&h).unwrap()).unwrap();
                let fast = ch.optimal_beams(&tx, &rx, 0.0, 0.0).unwrap();
                let check = beamforming_gain(&h, &fast.beams).unwrap();
                assert!((fast.gain - via_matrix).abs() <= 1e-9 * via_matrix.max(1.0));
                assert!((check - fast.gain).abs() <= 1e-9 * fast.gain.max(1.0));
            }
        }
    }

    #[test]
    fn steered_gain_matches_explicit_product() {
        let p = ClusterParams::default();
        let mut r = rng::stream(22, &[]);
        let (tx, rx) = (AntennaArray::new(8, 8), AntennaArray::new(4, 4));
        for _ in 0..20 {
            let ch = instance(sample_clusters(&p, &mut r));
            let h = assemble_channel_matrix(&ch, &tx, &rx, 0.0, 0.0).unwrap();
            let w_rx = spatial_signature(&rx, Angles::new(0.5, 0.1));
            let dir = Angles::new(-0.8, 0.0);
            let w = BeamformingVectors {
                w_tx: spatial_signature(&tx, dir),
                w_rx: w_rx.clone(),
            };
            let expected = beamforming_gain(&h, &w).unwrap();
            let fast = ch.steered_gain(&tx, &rx, &w_rx, dir, 0.0, 0.0).unwrap();
            assert!((fast - expected).abs() <= 1e-10 * expected.max(1e-3));
            let response = ch.steered_response(&tx, &rx, dir, 0.0, 0.0).unwrap();
            let via_response = projected_power(&w_rx, &response);
            assert!((via_response - expected).abs() <= 1e-10 * expected.max(1e-3));
        }
    }
}
