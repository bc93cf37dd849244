//! Half-duplex amplify-and-forward relay baseline: the relay applies a
//! unit-modulus processing matrix between receive and retransmit phases, at
//! the cost of a rate factor of one half and amplified relay noise.

use std::f64::consts::PI;

use rand::Rng;

use crate::config::SystemConfig;
use crate::linalg::{cis, cr, hermitize, hstack, ln_det_hpd, CMat, CVec};
use crate::metrics::{mse_matrix_with_noise, mse_objective, BeamformerSet, MseState};
use crate::scenario::ChannelSet;
use crate::{Error, Result};

/// Unit-modulus relay processing matrix.
#[derive(Debug, Clone)]
pub struct RelayMatrix {
    v: CMat,
}

impl RelayMatrix {
    /// Wraps a matrix, checking that every entry has unit modulus.
    pub fn new(v: CMat) -> Result<Self> {
        if v.iter().any(|e| (e.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidConfig("relay entries must have unit modulus".into()));
        }
        Ok(Self { v })
    }

    /// Random unit-modulus initialization.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        Self { v: CMat::from_fn(m, m, |_, _| cis(rng.random::<f64>() * 2.0 * PI)) }
    }

    /// The processing matrix.
    pub fn matrix(&self) -> &CMat {
        &self.v
    }

    /// Side length.
    pub fn len(&self) -> usize {
        self.v.nrows()
    }

    /// True for an empty relay.
    pub fn is_empty(&self) -> bool {
        self.v.nrows() == 0
    }
}

/// Wide matrix of all base-station-to-relay links side by side.
pub fn relay_input_matrix(channels: &ChannelSet) -> CMat {
    hstack(&channels.bs_irs)
}

/// Achievable half-duplex rate of user `k` in nats: `1/2 ln det(I + S S^H
/// F^{-1})` with the interference-plus-amplified-noise covariance `F`.
pub fn af_rate(
    channels: &ChannelSet,
    beamformers: &BeamformerSet,
    relay: &RelayMatrix,
    sigma2: f64,
    k: usize,
) -> Result<f64> {
    let g_r = relay_input_matrix(channels);
    let stacked = beamformers.stacked_all();
    let t_k = &channels.irs_user[k] * relay.matrix();
    let nr = t_k.nrows();
    let mut f2 = hermitize(&(&t_k * t_k.adjoint())).scale(sigma2)
        + CMat::identity(nr, nr).scale(sigma2);
    let mut desired = CMat::zeros(nr, stacked[k].ncols());
    for (j, w) in stacked.iter().enumerate() {
        let path = &t_k * &g_r * w;
        if j == k {
            desired = path;
        } else {
            f2 += &path * path.adjoint();
        }
    }
    let f2 = hermitize(&f2);
    let full = hermitize(&(&f2 + &desired * desired.adjoint()));
    Ok(0.5 * (ln_det_hpd(&full)? - ln_det_hpd(&f2)?).max(0.0))
}

/// Worst-user half-duplex rate.
pub fn min_af_rate(
    channels: &ChannelSet,
    beamformers: &BeamformerSet,
    relay: &RelayMatrix,
    sigma2: f64,
) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for k in 0..channels.num_users() {
        worst = worst.min(af_rate(channels, beamformers, relay, sigma2, k)?);
    }
    Ok(worst)
}

/// Incremental state of the per-entry relay sweep: effective matrices that
/// admit rank-one updates when one relay entry changes.
struct SweepState {
    /// `T_k = H_{r,k} V` per user.
    t: Vec<CMat>,
    /// `D_{k,j} = T_k (G_r W_j)` per user pair.
    d: Vec<Vec<CMat>>,
    /// `Z_k = T_k T_k^H` per user.
    z: Vec<CMat>,
    /// `G_r W_j` per user.
    gw: Vec<CMat>,
}

impl SweepState {
    fn rebuild(
        channels: &ChannelSet,
        beamformers: &BeamformerSet,
        relay: &RelayMatrix,
    ) -> Self {
        let g_r = relay_input_matrix(channels);
        let stacked = beamformers.stacked_all();
        let gw: Vec<CMat> = stacked.iter().map(|w| &g_r * w).collect();
        let t: Vec<CMat> =
            channels.irs_user.iter().map(|h| h * relay.matrix()).collect();
        let d: Vec<Vec<CMat>> =
            t.iter().map(|tk| gw.iter().map(|g| tk * g).collect()).collect();
        let z: Vec<CMat> = t.iter().map(|tk| tk * tk.adjoint()).collect();
        Self { t, d, z, gw }
    }

    /// Worst-user inner log-det value (without the half-duplex factor) when
    /// relay entry `(row, col)` moves by `delta`, without committing.
    fn min_inner_value(
        &self,
        channels: &ChannelSet,
        sigma2: f64,
        row: usize,
        col: usize,
        delta: num_complex::Complex<f64>,
    ) -> f64 {
        let num_users = self.t.len();
        let mut worst = f64::INFINITY;
        for k in 0..num_users {
            let h_col: CVec = channels.irs_user[k].column(row).into_owned();
            let t_col: CVec = self.t[k].column(col).into_owned();
            let nr = h_col.len();
            // Z' = Z + delta h t^H + conj(delta) t h^H + |delta|^2 h h^H
            let mut f2 = self.z[k].clone();
            f2 += (&h_col * t_col.adjoint()).scale_complex(delta);
            f2 += (&t_col * h_col.adjoint()).scale_complex(delta.conj());
            f2 += (&h_col * h_col.adjoint()).scale(delta.norm_sqr());
            let mut f2 = hermitize(&f2).scale(sigma2) + CMat::identity(nr, nr).scale(sigma2);
            let mut desired = CMat::zeros(nr, self.d[k][k].ncols());
            for j in 0..num_users {
                // D' = D + delta h (row `col` of G_r W_j)
                let gw_row = self.gw[j].row(col);
                let mut dj = self.d[k][j].clone();
                for c in 0..dj.ncols() {
                    for r in 0..nr {
                        dj[(r, c)] += delta * h_col[r] * gw_row[c];
                    }
                }
                if j == k {
                    desired = dj;
                } else {
                    f2 += &dj * dj.adjoint();
                }
            }
            let f2 = hermitize(&f2);
            let full = hermitize(&(&f2 + &desired * desired.adjoint()));
            let value = match (ln_det_hpd(&full), ln_det_hpd(&f2)) {
                (Ok(a), Ok(b)) => (a - b).max(0.0),
                _ => f64::NEG_INFINITY,
            };
            worst = worst.min(value);
        }
        worst
    }

    /// Commits an entry change.
    fn apply(&mut self, channels: &ChannelSet, row: usize, col: usize, delta: num_complex::Complex<f64>) {
        for k in 0..self.t.len() {
            let h_col: CVec = channels.irs_user[k].column(row).into_owned();
            let t_col: CVec = self.t[k].column(col).into_owned();
            let nr = h_col.len();
            let mut z = self.z[k].clone();
            z += (&h_col * t_col.adjoint()).scale_complex(delta);
            z += (&t_col * h_col.adjoint()).scale_complex(delta.conj());
            z += (&h_col * h_col.adjoint()).scale(delta.norm_sqr());
            self.z[k] = z;
            for j in 0..self.gw.len() {
                let gw_row = self.gw[j].row(col).into_owned();
                for c in 0..self.d[k][j].ncols() {
                    for r in 0..nr {
                        self.d[k][j][(r, c)] += delta * h_col[r] * gw_row[c];
                    }
                }
            }
            for r in 0..nr {
                self.t[k][(r, col)] += delta * h_col[r];
            }
        }
    }
}

trait ScaleComplex {
    fn scale_complex(self, s: num_complex::Complex<f64>) -> CMat;
}

impl ScaleComplex for CMat {
    fn scale_complex(self, s: num_complex::Complex<f64>) -> CMat {
        self.map(|e| e * s)
    }
}

/// One record of the relay trajectory.
#[derive(Debug, Clone)]
pub struct RelayIterRecord {
    /// Outer iteration (1-based).
    pub iteration: usize,
    /// Worst-user half-duplex rate in nats.
    pub objective_nats: f64,
}

/// Result of the relay alternating optimization.
#[derive(Debug, Clone)]
pub struct RelaySolution {
    /// Final beamformers.
    pub beamformers: BeamformerSet,
    /// Final relay matrix.
    pub relay: RelayMatrix,
    /// Worst-user half-duplex rate at the final design, nats.
    pub rate_nats: f64,
    /// Per-iteration records.
    pub trajectory: Vec<RelayIterRecord>,
    /// Outer iterations spent.
    pub outer_iterations: usize,
    /// False when the cap was hit first.
    pub converged: bool,
}

/// Grid resolution of the per-entry relay phase search.
pub const DEFAULT_RELAY_GRID: usize = 64;

/// Alternating optimization for the relay system: MSE-reformulated SOCP
/// beamforming against the relay-effective channel and colored noise, then
/// one grid-search sweep over the relay entries per outer iteration.
pub fn optimize_af(config: &SystemConfig, channels: &ChannelSet) -> Result<RelaySolution> {
    optimize_af_with_grid(config, channels, DEFAULT_RELAY_GRID)
}

/// Same as [`optimize_af`] with a configurable grid resolution.
pub fn optimize_af_with_grid(
    config: &SystemConfig,
    channels: &ChannelSet,
    grid: usize,
) -> Result<RelaySolution> {
    config.validate()?;
    channels.validate(config)?;
    let m = config.num_irs_elements;
    if m == 0 {
        return Err(Error::InvalidConfig("relay baseline needs at least one element".into()));
    }
    if grid < 2 {
        return Err(Error::InvalidConfig("relay grid needs at least two points".into()));
    }
    let sigma2 = config.noise_power_w;
    let p_max = config.max_power_w;
    let num_users = config.num_users;

    let mut relay = RelayMatrix::random(
        m,
        &mut crate::rng::stream(config.rng_seed, &[crate::rng::tags::RELAY_INIT]),
    );
    let g_r = relay_input_matrix(channels);

    // Matched-filter start against the relay-effective channel.
    let effective_blocks = |relay: &RelayMatrix| -> Vec<Vec<CMat>> {
        (0..num_users)
            .map(|k| {
                let t_k = &channels.irs_user[k] * relay.matrix();
                (0..config.num_bs)
                    .map(|n| &t_k * &channels.bs_irs[n])
                    .collect()
            })
            .collect()
    };
    let blocks = effective_blocks(&relay);
    let mut beamformers =
        BeamformerSet::zeros(config.num_bs, num_users, config.tx_antennas, config.streams);
    for n in 0..config.num_bs {
        for k in 0..num_users {
            beamformers.set_block(
                n,
                k,
                crate::single_user::matched_filter_init(
                    &blocks[k][n],
                    config.streams,
                    p_max / num_users as f64,
                ),
            );
        }
    }

    let mut trajectory: Vec<RelayIterRecord> = Vec::new();
    let mut converged = false;
    let mut outer = 0;

    while outer < config.max_outer_iterations {
        outer += 1;
        // Relay-effective channels and colored noise covariance.
        let t_all: Vec<CMat> =
            channels.irs_user.iter().map(|h| h * relay.matrix()).collect();
        let h_tilde: Vec<CMat> = t_all.iter().map(|t| t * &g_r).collect();
        let noise_cov: Vec<CMat> = t_all
            .iter()
            .map(|t| {
                hermitize(&(t * t.adjoint())).scale(sigma2)
                    + CMat::identity(t.nrows(), t.nrows()).scale(sigma2)
            })
            .collect();

        let state = MseState::optimal_with_noise(&h_tilde, &beamformers, &noise_cov)?;
        let inner_objective = |bf: &BeamformerSet| -> Result<f64> {
            let stacked = bf.stacked_all();
            let mut worst = f64::INFINITY;
            for k in 0..num_users {
                let e = mse_matrix_with_noise(
                    &h_tilde[k],
                    &stacked,
                    k,
                    &state.receivers[k],
                    &noise_cov[k],
                );
                worst = worst.min(mse_objective(&state.weights[k], &e)?);
            }
            Ok(worst)
        };
        let v_state = inner_objective(&beamformers)?;
        let (candidate, _socp_r) = crate::multi_user::beamforming_socp_step(
            &h_tilde,
            &state,
            &noise_cov,
            p_max,
            &beamformers,
        )?;
        if inner_objective(&candidate)? >= v_state {
            beamformers = candidate;
        }

        // Relay sweep: per-entry grid search on the exact worst-user value,
        // keeping the current entry when no grid point improves on it.
        let mut sweep = SweepState::rebuild(channels, &beamformers, &relay);
        let zero = cr(0.0);
        for row in 0..m {
            for col in 0..m {
                let current = relay.v[(row, col)];
                let mut best_delta = zero;
                let mut best_value =
                    sweep.min_inner_value(channels, sigma2, row, col, zero);
                for level in 0..grid {
                    let candidate = cis(2.0 * PI * level as f64 / grid as f64);
                    let delta = candidate - current;
                    let value = sweep.min_inner_value(channels, sigma2, row, col, delta);
                    if value > best_value {
                        best_value = value;
                        best_delta = delta;
                    }
                }
                if best_delta != zero {
                    sweep.apply(channels, row, col, best_delta);
                    let updated = current + best_delta;
                    // Renormalize against accumulated round-off.
                    relay.v[(row, col)] = updated / cr(updated.norm());
                }
            }
        }

        let objective = min_af_rate(channels, &beamformers, &relay, sigma2)?;
        if let Some(last) = trajectory.last() {
            if objective < last.objective_nats - 1e-8 {
                return Err(Error::Monotonicity {
                    iteration: outer,
                    details: format!(
                        "relay objective fell from {:.12e} to {:.12e}",
                        last.objective_nats, objective
                    ),
                });
            }
            let change = (objective - last.objective_nats) / last.objective_nats.abs().max(1.0);
            if change < config.convergence_threshold {
                converged = true;
            }
        }
        trajectory.push(RelayIterRecord { iteration: outer, objective_nats: objective });
        if converged {
            break;
        }
    }

    beamformers.validate_power(p_max)?;
    let rate_nats = min_af_rate(channels, &beamformers, &relay, sigma2)?;
    Ok(RelaySolution {
        beamformers,
        relay,
        rate_nats,
        trajectory,
        outer_iterations: outer,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::complex_gaussian_matrix;
    use crate::rng::stream;

    fn scalar_channels(h_r: f64, g: f64) -> ChannelSet {
        ChannelSet {
            direct: vec![vec![CMat::zeros(1, 1)]],
            bs_irs: vec![CMat::from_element(1, 1, cr(g))],
            irs_user: vec![CMat::from_element(1, 1, cr(h_r))],
        }
    }

    #[test]
    fn af_rate_scalar_case() {
        let channels = scalar_channels(1.0, 1.0);
        let mut bf = BeamformerSet::zeros(1, 1, 1, 1);
        bf.set_block(0, 0, CMat::from_element(1, 1, cr(1.0)));
        // Any unit-modulus relay phase cancels out.
        for angle in [0.0, 0.7, 2.4] {
            let relay = RelayMatrix::new(CMat::from_element(1, 1, cis(angle))).unwrap();
            let rate = af_rate(&channels, &bf, &relay, 1.0, 0).unwrap();
            assert!((rate - 0.5 * 1.5f64.ln()).abs() < 1e-12, "rate {rate} at {angle}");
        }
    }

    #[test]
    fn af_rate_zero_beamformer_is_zero() {
        let channels = scalar_channels(2.0, 3.0);
        let bf = BeamformerSet::zeros(1, 1, 1, 1);
        let relay = RelayMatrix::new(CMat::from_element(1, 1, cr(1.0))).unwrap();
        assert!(af_rate(&channels, &bf, &relay, 0.5, 0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn af_rate_matches_determinant_oracle() {
        // Independent evaluation through an explicit inverse.
        let mut rng = stream(110, &[1]);
        let m = 4;
        let channels = ChannelSet {
            direct: vec![vec![CMat::zeros(2, 2); 2]; 2],
            bs_irs: (0..2).map(|_| complex_gaussian_matrix(&mut rng, m, 2)).collect(),
            irs_user: (0..2).map(|_| complex_gaussian_matrix(&mut rng, 2, m)).collect(),
        };
        let relay = RelayMatrix::random(m, &mut rng);
        let mut bf = BeamformerSet::zeros(2, 2, 2, 2);
        for n in 0..2 {
            for k in 0..2 {
                bf.set_block(n, k, complex_gaussian_matrix(&mut rng, 2, 2).scale(0.5));
            }
        }
        let sigma2 = 0.3;
        let g_r = relay_input_matrix(&channels);
        let stacked = bf.stacked_all();
        for k in 0..2 {
            let t_k = &channels.irs_user[k] * relay.matrix();
            let mut f2 = hermitize(&(&t_k * t_k.adjoint())).scale(sigma2)
                + CMat::identity(2, 2).scale(sigma2);
            for j in 0..2 {
                if j != k {
                    let p = &t_k * &g_r * &stacked[j];
                    f2 += &p * p.adjoint();
                }
            }
            let s = &t_k * &g_r * &stacked[k];
            let inv = hermitize(&f2).try_inverse().unwrap();
            let inner = CMat::identity(2, 2) + &s * s.adjoint() * inv;
            let oracle = 0.5 * inner.lu().determinant().re.ln();
            let direct = af_rate(&channels, &bf, &relay, sigma2, k).unwrap();
            assert!((oracle - direct).abs() < 1e-9, "user {k}: {direct} vs {oracle}");
        }
    }

    #[test]
    fn half_duplex_scaling_consistency() {
        // Doubling every channel with V, W fixed must match a direct
        // evaluation of the half log-det form.
        let mut rng = stream(111, &[1]);
        let m = 3;
        let mk = |rng: &mut _| complex_gaussian_matrix(rng, 2, m);
        let irs_user: Vec<CMat> = vec![mk(&mut rng)];
        let bs_irs: Vec<CMat> = vec![complex_gaussian_matrix(&mut rng, m, 2)];
        let channels = ChannelSet {
            direct: vec![vec![CMat::zeros(2, 2)]],
            bs_irs: bs_irs.clone(),
            irs_user: irs_user.clone(),
        };
        let doubled = ChannelSet {
            direct: vec![vec![CMat::zeros(2, 2)]],
            bs_irs: bs_irs.iter().map(|g| g.scale(2.0)).collect(),
            irs_user: irs_user.iter().map(|h| h.scale(2.0)).collect(),
        };
        let relay = RelayMatrix::random(m, &mut rng);
        let mut bf = BeamformerSet::zeros(1, 1, 2, 2);
        bf.set_block(0, 0, complex_gaussian_matrix(&mut rng, 2, 2).scale(0.3));
        let sigma2 = 0.4;
        let direct = af_rate(&doubled, &bf, &relay, sigma2, 0).unwrap();
        // Explicit evaluation with scaled matrices (factor 4 on the relay
        // path, factor 2 on the amplified noise path).
        let t = (&irs_user[0] * relay.matrix()).scale(2.0);
        let g = relay_input_matrix(&channels).scale(2.0);
        let s = &t * &g * bf.stacked(0);
        let f2 = hermitize(&(&t * t.adjoint())).scale(sigma2) + CMat::identity(2, 2).scale(sigma2);
        let full = hermitize(&(&f2 + &s * s.adjoint()));
        let expected = 0.5 * (ln_det_hpd(&full).unwrap() - ln_det_hpd(&f2).unwrap());
        assert!((direct - expected).abs() < 1e-10);
    }

    #[test]
    fn sweep_state_incremental_matches_rebuild() {
        let mut rng = stream(112, &[1]);
        let m = 4;
        let channels = ChannelSet {
            direct: vec![vec![CMat::zeros(2, 2); 2]; 2],
            bs_irs: (0..2).map(|_| complex_gaussian_matrix(&mut rng, m, 2)).collect(),
            irs_user: (0..2).map(|_| complex_gaussian_matrix(&mut rng, 2, m)).collect(),
        };
        let mut relay = RelayMatrix::random(m, &mut rng);
        let mut bf = BeamformerSet::zeros(2, 2, 2, 2);
        for n in 0..2 {
            for k in 0..2 {
                bf.set_block(n, k, complex_gaussian_matrix(&mut rng, 2, 2).scale(0.4));
            }
        }
        let sigma2 = 0.5;
        let mut sweep = SweepState::rebuild(&channels, &bf, &relay);
        // Apply a few entry changes both incrementally and from scratch.
        for (row, col, angle) in [(0usize, 1usize, 0.3), (2, 2, 1.1), (3, 0, 2.2)] {
            let new_entry = cis(angle);
            let delta = new_entry - relay.v[(row, col)];
            // Candidate evaluation before committing matches a fresh build.
            let predicted = sweep.min_inner_value(&channels, sigma2, row, col, delta);
            relay.v[(row, col)] = new_entry;
            let fresh = SweepState::rebuild(&channels, &bf, &relay);
            let direct = fresh.min_inner_value(&channels, sigma2, 0, 0, cr(0.0));
            assert!((predicted - direct).abs() < 1e-9, "{predicted} vs {direct}");
            sweep.apply(&channels, row, col, delta);
            // Internal state agrees with the rebuild.
            for k in 0..2 {
                assert!((&sweep.t[k] - &fresh.t[k]).norm() < 1e-10);
                assert!((&sweep.z[k] - &fresh.z[k]).norm() < 1e-10);
            }
            // Rate through the incremental state agrees with af_rate.
            let inner = sweep.min_inner_value(&channels, sigma2, 0, 0, cr(0.0));
            let direct_rate = min_af_rate(&channels, &bf, &relay, sigma2).unwrap();
            assert!((0.5 * inner - direct_rate).abs() < 1e-9);
        }
    }

    #[test]
    fn relay_optimization_is_monotone_and_unit_modulus() {
        let mut config = SystemConfig::multi_user();
        config.num_irs_elements = 6;
        config.tx_antennas = 3;
        config.num_users = 2;
        config.num_bs = 2;
        config.bs_positions = vec![[-300.0, 0.0, 10.0], [300.0, 0.0, 10.0]];
        config.max_outer_iterations = 8;
        config.rng_seed = 13;
        let mut rng = stream(13, &[crate::rng::tags::CHANNELS]);
        let placement = crate::scenario::build_geometry(&config, &mut rng).unwrap();
        let channels = crate::scenario::sample_channels(&config, &placement, &mut rng)
            .unwrap()
            .without_direct();
        let solution = optimize_af_with_grid(&config, &channels, 16).unwrap();
        for w in solution.trajectory.windows(2) {
            assert!(w[1].objective_nats >= w[0].objective_nats - 1e-8);
        }
        for e in solution.relay.matrix().iter() {
            assert!((e.norm() - 1.0).abs() < 1e-9);
        }
        solution.beamformers.validate_power(config.max_power_w).unwrap();
        assert!(solution.rate_nats > 0.0);
    }
}
