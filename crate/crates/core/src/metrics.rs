//! Effective channels, achievable rates, MSE matrices, and the closed-form
//! receiver/weight updates.
//!
//! All rates are in nats per channel use; conversion to bits/s/Hz happens at
//! the reporting layer only.

use crate::linalg::{hermitize, ln_det_hpd, solve_hpd, trace, vstack, CMat};
use crate::scenario::{ChannelSet, PhaseProfile};
use crate::{Error, Result};

/// Per-base-station, per-user transmit beamformers.
///
/// Indexed `[n][k]`, each `N_t x d`. The stacked form concatenates one
/// user's blocks over the base stations into an `N N_t x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    mats: Vec<Vec<CMat>>,
}

impl BeamformerSet {
    /// Builds a set from `[n][k]` blocks, checking that shapes agree.
    pub fn new(mats: Vec<Vec<CMat>>) -> Result<Self> {
        if mats.is_empty() || mats[0].is_empty() {
            return Err(Error::Dimension("beamformer set must be non-empty".into()));
        }
        let k = mats[0].len();
        let shape = mats[0][0].shape();
        for row in &mats {
            if row.len() != k {
                return Err(Error::Dimension("ragged beamformer set".into()));
            }
            for w in row {
                if w.shape() != shape {
                    return Err(Error::Dimension("beamformer block shape mismatch".into()));
                }
                if !crate::linalg::all_finite(w) {
                    return Err(Error::Numeric("beamformer has non-finite entries".into()));
                }
            }
        }
        Ok(Self { mats })
    }

    /// All-zero set.
    pub fn zeros(num_bs: usize, num_users: usize, nt: usize, d: usize) -> Self {
        Self {
            mats: vec![vec![CMat::zeros(nt, d); num_users]; num_bs],
        }
    }

    /// Number of base stations.
    pub fn num_bs(&self) -> usize {
        self.mats.len()
    }

    /// Number of users.
    pub fn num_users(&self) -> usize {
        self.mats[0].len()
    }

    /// Transmit antennas per base station.
    pub fn tx_antennas(&self) -> usize {
        self.mats[0][0].nrows()
    }

    /// Streams per user.
    pub fn streams(&self) -> usize {
        self.mats[0][0].ncols()
    }

    /// Block for base station `n`, user `k`.
    pub fn block(&self, n: usize, k: usize) -> &CMat {
        &self.mats[n][k]
    }

    /// Replaces one block.
    pub fn set_block(&mut self, n: usize, k: usize, w: CMat) {
        assert_eq!(w.shape(), self.mats[n][k].shape());
        self.mats[n][k] = w;
    }

    /// Stacked beamformer of user `k` (blocks of all base stations).
    pub fn stacked(&self, k: usize) -> CMat {
        let blocks: Vec<CMat> = self.mats.iter().map(|row| row[k].clone()).collect();
        vstack(&blocks)
    }

    /// Stacked beamformers of every user.
    pub fn stacked_all(&self) -> Vec<CMat> {
        (0..self.num_users()).map(|k| self.stacked(k)).collect()
    }

    /// Rebuilds the `[n][k]` blocks from stacked per-user matrices.
    pub fn from_stacked(stacks: &[CMat], num_bs: usize) -> Result<Self> {
        if stacks.is_empty() {
            return Err(Error::Dimension("no stacked beamformers given".into()));
        }
        let rows = stacks[0].nrows();
        if !rows.is_multiple_of(num_bs) {
            return Err(Error::Dimension("stacked height is not a multiple of the BS count".into()));
        }
        let nt = rows / num_bs;
        let d = stacks[0].ncols();
        let mut mats = vec![Vec::with_capacity(stacks.len()); num_bs];
        for w in stacks {
            if w.shape() != (rows, d) {
                return Err(Error::Dimension("stacked beamformer shape mismatch".into()));
            }
            for (n, row) in mats.iter_mut().enumerate() {
                row.push(w.view((n * nt, 0), (nt, d)).into_owned());
            }
        }
        Self::new(mats)
    }

    /// Transmit power spent by base station `n`.
    pub fn bs_power(&self, n: usize) -> f64 {
        self.mats[n].iter().map(crate::linalg::fro_norm_sq).sum()
    }

    /// Transmit power of every base station.
    pub fn bs_powers(&self) -> Vec<f64> {
        (0..self.num_bs()).map(|n| self.bs_power(n)).collect()
    }

    /// Checks the per-base-station power constraint with a small slack.
    pub fn validate_power(&self, max_power_w: f64) -> Result<()> {
        for n in 0..self.num_bs() {
            let p = self.bs_power(n);
            if p > max_power_w + 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "base station {n} spends {p:.6e} W over the {max_power_w:.6e} W budget"
                )));
            }
        }
        Ok(())
    }

    /// Scales every block by `s`.
    pub fn scale(&mut self, s: f64) {
        for row in &mut self.mats {
            for w in row.iter_mut() {
                *w = w.scale(s);
            }
        }
    }
}

/// Auxiliary receive filters `U_k` and weight matrices `Q_k` of the MSE
/// reformulation.
#[derive(Debug, Clone)]
pub struct MseState {
    /// Receive filters, `N_r x d` per user.
    pub receivers: Vec<CMat>,
    /// Hermitian positive-definite weights, `d x d` per user.
    pub weights: Vec<CMat>,
}

impl MseState {
    /// Closed-form optimal receivers and weights for fixed channels and
    /// beamformers with white noise `sigma2`.
    pub fn optimal(h_bars: &[CMat], beamformers: &BeamformerSet, sigma2: f64) -> Result<Self> {
        let stacked = beamformers.stacked_all();
        let mut receivers = Vec::with_capacity(h_bars.len());
        let mut weights = Vec::with_capacity(h_bars.len());
        for (k, h_bar) in h_bars.iter().enumerate() {
            let u = mmse_receiver(h_bar, &stacked, k, sigma2)?;
            let e = mse_matrix(h_bar, &stacked, k, &u, sigma2);
            receivers.push(u);
            weights.push(optimal_weight(&e)?);
        }
        Ok(Self { receivers, weights })
    }

    /// Same as [`MseState::optimal`] with per-user noise covariances.
    pub fn optimal_with_noise(
        h_bars: &[CMat],
        beamformers: &BeamformerSet,
        noise_cov: &[CMat],
    ) -> Result<Self> {
        let stacked = beamformers.stacked_all();
        let mut receivers = Vec::with_capacity(h_bars.len());
        let mut weights = Vec::with_capacity(h_bars.len());
        for (k, h_bar) in h_bars.iter().enumerate() {
            let u = mmse_receiver_with_noise(h_bar, &stacked, k, &noise_cov[k])?;
            let e = mse_matrix_with_noise(h_bar, &stacked, k, &u, &noise_cov[k]);
            receivers.push(u);
            weights.push(optimal_weight(&e)?);
        }
        Ok(Self { receivers, weights })
    }
}

/// Effective channel of user `k`: concatenation over base stations of
/// `H_{n,k} + H_{r,k} diag(phi) G_{n,r}`.
pub fn effective_channel(channels: &ChannelSet, phase: &PhaseProfile, k: usize) -> CMat {
    let blocks: Vec<CMat> = (0..channels.num_bs())
        .map(|n| effective_channel_block(channels, phase, n, k))
        .collect();
    crate::linalg::hstack(&blocks)
}

/// One base-station block of the effective channel.
pub fn effective_channel_block(
    channels: &ChannelSet,
    phase: &PhaseProfile,
    n: usize,
    k: usize,
) -> CMat {
    let direct = &channels.direct[n][k];
    if channels.num_irs_elements() == 0 {
        return direct.clone();
    }
    let reflected = &channels.irs_user[k] * phase.phi_diag() * &channels.bs_irs[n];
    direct + reflected
}

/// Effective channels of every user.
pub fn effective_channels(channels: &ChannelSet, phase: &PhaseProfile) -> Vec<CMat> {
    (0..channels.num_users()).map(|k| effective_channel(channels, phase, k)).collect()
}

/// Interference-plus-noise covariance of user `k`:
/// sum over `j != k` of `(H_bar W_j)(H_bar W_j)^H` plus the noise covariance.
fn interference_covariance(h_bar: &CMat, stacked: &[CMat], k: usize, noise_cov: &CMat) -> CMat {
    let nr = h_bar.nrows();
    let mut f = noise_cov.clone();
    for (j, w) in stacked.iter().enumerate() {
        if j == k {
            continue;
        }
        let hw = h_bar * w;
        f += &hw * hw.adjoint();
    }
    debug_assert_eq!(f.shape(), (nr, nr));
    hermitize(&f)
}

/// Full receive covariance including the desired signal.
fn total_covariance(h_bar: &CMat, stacked: &[CMat], noise_cov: &CMat) -> CMat {
    let mut j_mat = noise_cov.clone();
    for w in stacked {
        let hw = h_bar * w;
        j_mat += &hw * hw.adjoint();
    }
    hermitize(&j_mat)
}

/// Achievable rate of user `k` in nats per channel use, white noise.
pub fn user_rate(h_bar: &CMat, stacked: &[CMat], k: usize, sigma2: f64) -> Result<f64> {
    let noise = CMat::identity(h_bar.nrows(), h_bar.nrows()).scale(sigma2);
    user_rate_with_noise(h_bar, stacked, k, &noise)
}

/// Achievable rate with an arbitrary Hermitian PD noise covariance.
///
/// Evaluated as `ln det(F + S S^H) - ln det(F)` with both determinants taken
/// through Cholesky factors, which keeps the difference stable.
pub fn user_rate_with_noise(
    h_bar: &CMat,
    stacked: &[CMat],
    k: usize,
    noise_cov: &CMat,
) -> Result<f64> {
    if !crate::linalg::all_finite(h_bar) {
        return Err(Error::Numeric("effective channel has non-finite entries".into()));
    }
    let f = interference_covariance(h_bar, stacked, k, noise_cov);
    let s = h_bar * &stacked[k];
    let full = hermitize(&(&f + &s * s.adjoint()));
    Ok((ln_det_hpd(&full)? - ln_det_hpd(&f)?).max(0.0))
}

/// Minimum per-user rate in nats, white noise.
pub fn min_rate(h_bars: &[CMat], beamformers: &BeamformerSet, sigma2: f64) -> Result<f64> {
    let stacked = beamformers.stacked_all();
    let mut worst = f64::INFINITY;
    for (k, h_bar) in h_bars.iter().enumerate() {
        worst = worst.min(user_rate(h_bar, &stacked, k, sigma2)?);
    }
    Ok(worst)
}

/// MSE matrix of user `k` for receiver `u`, white noise.
pub fn mse_matrix(h_bar: &CMat, stacked: &[CMat], k: usize, u: &CMat, sigma2: f64) -> CMat {
    let noise = CMat::identity(h_bar.nrows(), h_bar.nrows()).scale(sigma2);
    mse_matrix_with_noise(h_bar, stacked, k, u, &noise)
}

/// MSE matrix with an arbitrary noise covariance, symmetrized to Hermitian.
pub fn mse_matrix_with_noise(
    h_bar: &CMat,
    stacked: &[CMat],
    k: usize,
    u: &CMat,
    noise_cov: &CMat,
) -> CMat {
    let d = stacked[k].ncols();
    let j_mat = total_covariance(h_bar, stacked, noise_cov);
    let cross = u.adjoint() * h_bar * &stacked[k];
    let e = u.adjoint() * j_mat * u - &cross - cross.adjoint() + CMat::identity(d, d);
    hermitize(&e)
}

/// Closed-form MMSE receive filter, white noise.
pub fn mmse_receiver(h_bar: &CMat, stacked: &[CMat], k: usize, sigma2: f64) -> Result<CMat> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain("noise power must be positive".into()));
    }
    let noise = CMat::identity(h_bar.nrows(), h_bar.nrows()).scale(sigma2);
    mmse_receiver_with_noise(h_bar, stacked, k, &noise)
}

/// Closed-form MMSE receive filter with an arbitrary noise covariance.
pub fn mmse_receiver_with_noise(
    h_bar: &CMat,
    stacked: &[CMat],
    k: usize,
    noise_cov: &CMat,
) -> Result<CMat> {
    let j_mat = total_covariance(h_bar, stacked, noise_cov);
    solve_hpd(&j_mat, &(h_bar * &stacked[k]))
}

/// Optimal MSE weight, the Hermitian inverse of the MSE matrix.
pub fn optimal_weight(e: &CMat) -> Result<CMat> {
    crate::linalg::inverse_hpd(e)
}

/// MSE-reformulated rate value `ln det(Q) - Tr(Q E) + d`.
pub fn mse_objective(q: &CMat, e: &CMat) -> Result<f64> {
    let d = q.nrows() as f64;
    Ok(ln_det_hpd(q)? - trace(&(q * e)).re + d)
}

/// Minimum MSE-reformulated rate over the users at the closed-form receiver
/// and weight state.
pub fn min_mse_objective(
    h_bars: &[CMat],
    beamformers: &BeamformerSet,
    state: &MseState,
    sigma2: f64,
) -> Result<f64> {
    let stacked = beamformers.stacked_all();
    let mut worst = f64::INFINITY;
    for (k, h_bar) in h_bars.iter().enumerate() {
        let e = mse_matrix(h_bar, &stacked, k, &state.receivers[k], sigma2);
        worst = worst.min(mse_objective(&state.weights[k], &e)?);
    }
    Ok(worst)
}

/// Minimum-MSE matrix evaluated directly from the channel, bypassing the
/// receiver: `I - W_k^H Hb^H J^{-1} Hb W_k`.
pub fn mmse_matrix_direct(
    h_bar: &CMat,
    stacked: &[CMat],
    k: usize,
    sigma2: f64,
) -> Result<CMat> {
    let noise = CMat::identity(h_bar.nrows(), h_bar.nrows()).scale(sigma2);
    let j_mat = total_covariance(h_bar, stacked, &noise);
    let hw = h_bar * &stacked[k];
    let d = stacked[k].ncols();
    let solved = solve_hpd(&j_mat, &hw)?;
    Ok(hermitize(&(CMat::identity(d, d) - hw.adjoint() * solved)))
}
