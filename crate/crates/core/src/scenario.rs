//! Geometry, large-scale path loss, fading realizations, and phase
//! quantization.

use std::f64::consts::PI;

use rand::Rng;

use crate::config::{SystemConfig, UserLayout};
use crate::linalg::{all_finite, cis, complex_gaussian_matrix, CMat, CVec};
use crate::{Error, Result};

/// A point in metres.
pub type Point3 = [f64; 3];

/// Euclidean distance between two points.
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// One realized layout: base stations, reflecting surface, users.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// Base-station coordinates.
    pub bs: Vec<Point3>,
    /// Reflecting-surface coordinates.
    pub irs: Point3,
    /// User coordinates.
    pub users: Vec<Point3>,
}

/// One realization of every channel in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Direct links, indexed `[n][k]`, each `N_r x N_t`.
    pub direct: Vec<Vec<CMat>>,
    /// Base-station-to-surface links, indexed `[n]`, each `M x N_t`.
    pub bs_irs: Vec<CMat>,
    /// Surface-to-user links, indexed `[k]`, each `N_r x M`.
    pub irs_user: Vec<CMat>,
}

impl ChannelSet {
    /// Number of base stations.
    pub fn num_bs(&self) -> usize {
        self.direct.len()
    }

    /// Number of users.
    pub fn num_users(&self) -> usize {
        self.direct.first().map_or(0, |row| row.len())
    }

    /// Number of reflecting elements.
    pub fn num_irs_elements(&self) -> usize {
        self.bs_irs.first().map_or(0, |g| g.nrows())
    }

    /// Checks that every matrix has the dimensions the config promises and
    /// every entry is finite.
    pub fn validate(&self, config: &SystemConfig) -> Result<()> {
        let (n, k, m) = (config.num_bs, config.num_users, config.num_irs_elements);
        let (nr, nt) = (config.rx_antennas, config.tx_antennas);
        if self.direct.len() != n || self.bs_irs.len() != n || self.irs_user.len() != k {
            return Err(Error::Dimension("channel-set link counts do not match config".into()));
        }
        for row in &self.direct {
            if row.len() != k {
                return Err(Error::Dimension("direct-link user count mismatch".into()));
            }
            for h in row {
                if h.shape() != (nr, nt) || !all_finite(h) {
                    return Err(Error::Dimension("direct link has wrong shape or NaN".into()));
                }
            }
        }
        for g in &self.bs_irs {
            if g.shape() != (m, nt) || !all_finite(g) {
                return Err(Error::Dimension("bs-irs link has wrong shape or NaN".into()));
            }
        }
        for h in &self.irs_user {
            if h.shape() != (nr, m) || !all_finite(h) {
                return Err(Error::Dimension("irs-user link has wrong shape or NaN".into()));
            }
        }
        Ok(())
    }

    /// Copy with the surface links removed (used by the no-surface baseline).
    pub fn without_irs(&self) -> ChannelSet {
        ChannelSet {
            direct: self.direct.clone(),
            bs_irs: self.bs_irs.iter().map(|g| CMat::zeros(g.nrows(), g.ncols())).collect(),
            irs_user: self.irs_user.iter().map(|h| CMat::zeros(h.nrows(), h.ncols())).collect(),
        }
    }

    /// Copy with the direct links removed (used by the relay comparison).
    pub fn without_direct(&self) -> ChannelSet {
        ChannelSet {
            direct: self
                .direct
                .iter()
                .map(|row| row.iter().map(|h| CMat::zeros(h.nrows(), h.ncols())).collect())
                .collect(),
            bs_irs: self.bs_irs.clone(),
            irs_user: self.irs_user.clone(),
        }
    }
}

/// The `M` reflecting phases and their unit-modulus representations.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    theta: Vec<f64>,
}

impl PhaseProfile {
    /// Wraps angles into `[0, 2pi)`.
    pub fn new(theta: Vec<f64>) -> Self {
        let tau = 2.0 * PI;
        let theta = theta
            .into_iter()
            .map(|t| {
                let mut w = t % tau;
                if w < 0.0 {
                    w += tau;
                }
                if w >= tau {
                    w = 0.0;
                }
                w
            })
            .collect();
        Self { theta }
    }

    /// All phases at zero.
    pub fn zeros(m: usize) -> Self {
        Self { theta: vec![0.0; m] }
    }

    /// Uniform random phases in `[0, 2pi)`.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        Self { theta: (0..m).map(|_| rng.random::<f64>() * 2.0 * PI).collect() }
    }

    /// Recovers the profile from a unit-modulus vector.
    pub fn from_phi(phi: &CVec) -> Self {
        Self::new(phi.iter().map(|p| p.arg()).collect())
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    /// True when the surface has no elements.
    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Phase angles in `[0, 2pi)`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Unit-modulus vector `phi`, entries `e^{j theta_m}`.
    pub fn phi(&self) -> CVec {
        CVec::from_iterator(self.theta.len(), self.theta.iter().map(|&t| cis(t)))
    }

    /// Diagonal reflection matrix `diag(phi)` (amplitude fixed to one).
    pub fn phi_diag(&self) -> CMat {
        CMat::from_diagonal(&self.phi())
    }

    /// Quantized copy (see [`quantize_phases`]); continuous resolution is a
    /// pass-through.
    pub fn quantized(&self, resolution: crate::config::PhaseResolution) -> PhaseProfile {
        match resolution {
            crate::config::PhaseResolution::Continuous => self.clone(),
            crate::config::PhaseResolution::Bits(b) => PhaseProfile::new(quantize_phases(&self.theta, b)),
        }
    }
}

/// Realizes the layout: fixed positions are copied from the config, disc
/// users are drawn uniformly at random.
pub fn build_geometry<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<Placement> {
    config.validate()?;
    let users = match &config.user_layout {
        UserLayout::Fixed(pts) => pts.clone(),
        UserLayout::Disc { center, radius_m } => (0..config.num_users)
            .map(|_| {
                let r = radius_m * rng.random::<f64>().sqrt();
                let angle = rng.random::<f64>() * 2.0 * PI;
                [center[0] + r * angle.cos(), center[1] + r * angle.sin(), center[2]]
            })
            .collect(),
    };
    let placement =
        Placement { bs: config.bs_positions.clone(), irs: config.irs_position, users };
    for (n, b) in placement.bs.iter().enumerate() {
        for (k, u) in placement.users.iter().enumerate() {
            if distance(b, u) <= config.ref_distance_m {
                return Err(Error::InvalidConfig(format!(
                    "base station {n} and user {k} are within the reference distance"
                )));
            }
        }
    }
    Ok(placement)
}

/// Large-scale linear power gain `L_0 (d / d_0)^{-alpha}`.
pub fn path_loss(distance_m: f64, exponent: f64, config: &SystemConfig) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("path loss needs a positive distance, got {distance_m}")));
    }
    Ok(config.ref_gain * (distance_m / config.ref_distance_m).powf(-exponent))
}

/// Uniform-linear-array response with half-wavelength spacing.
fn steering_vector(len: usize, angle: f64) -> CVec {
    CVec::from_iterator(len, (0..len).map(|i| cis(PI * i as f64 * angle.sin())))
}

/// Draws one small-scale fading realization of every link.
///
/// Direct links are Rayleigh with per-entry variance equal to the link path
/// loss. Surface links are Rician: a line-of-sight outer product of array
/// responses (departure/arrival angles uniform per link) plus a scattered
/// Gaussian part, mixed by the Rician factor.
pub fn sample_channels<R: Rng + ?Sized>(
    config: &SystemConfig,
    placement: &Placement,
    rng: &mut R,
) -> Result<ChannelSet> {
    if placement.bs.len() != config.num_bs || placement.users.len() != config.num_users {
        return Err(Error::Dimension("placement does not match config".into()));
    }
    let m = config.num_irs_elements;
    let (nr, nt) = (config.rx_antennas, config.tx_antennas);
    let kappa = config.rician_factor;
    let los_scale = (kappa / (1.0 + kappa)).sqrt();
    let nlos_scale = (1.0 / (1.0 + kappa)).sqrt();

    let rician = |rows: usize,
                  cols: usize,
                  gain: f64,
                  rng: &mut R|
     -> CMat {
        let depart = rng.random::<f64>() * 2.0 * PI;
        let arrive = rng.random::<f64>() * 2.0 * PI;
        let los = steering_vector(rows, arrive) * steering_vector(cols, depart).adjoint();
        let nlos = complex_gaussian_matrix(rng, rows, cols);
        (los.scale(los_scale) + nlos.scale(nlos_scale)).scale(gain.sqrt())
    };

    let mut direct = Vec::with_capacity(config.num_bs);
    for bs in &placement.bs {
        let mut row = Vec::with_capacity(config.num_users);
        for user in &placement.users {
            let gain = path_loss(distance(bs, user), config.pl_exp_bs_user, config)?;
            row.push(complex_gaussian_matrix(rng, nr, nt).scale(gain.sqrt()));
        }
        direct.push(row);
    }
    let mut bs_irs = Vec::with_capacity(config.num_bs);
    for bs in &placement.bs {
        let gain = path_loss(distance(bs, &placement.irs), config.pl_exp_bs_irs, config)?;
        bs_irs.push(rician(m, nt, gain, rng));
    }
    let mut irs_user = Vec::with_capacity(config.num_users);
    for user in &placement.users {
        let gain = path_loss(distance(&placement.irs, user), config.pl_exp_irs_user, config)?;
        irs_user.push(rician(nr, m, gain, rng));
    }

    let set = ChannelSet { direct, bs_irs, irs_user };
    set.validate(config)?;
    Ok(set)
}

/// Convenience wrapper: geometry plus channels from one generator.
pub fn sample_scenario<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
) -> Result<(Placement, ChannelSet)> {
    let placement = build_geometry(config, rng)?;
    let channels = sample_channels(config, &placement, rng)?;
    Ok((placement, channels))
}

/// Maps each phase to the closest of the `2^b` uniformly spaced levels
/// (closest in chordal distance `|e^{j a} - e^{j b}|`); exact ties go to the
/// smaller level.
pub fn quantize_phases(theta: &[f64], bits: u32) -> Vec<f64> {
    assert!(bits >= 1, "quantizer needs at least one bit");
    let levels = 1usize << bits;
    let step = 2.0 * PI / levels as f64;
    theta
        .iter()
        .map(|&t| {
            let target = cis(t);
            let mut best = 0.0;
            let mut best_dist = f64::INFINITY;
            for i in 0..levels {
                let candidate = step * i as f64;
                let dist = (cis(candidate) - target).norm_sqr();
                // Ties (within round-off) resolve toward the smaller level,
                // which the ascending scan already visits first.
                if dist < best_dist - 1e-12 {
                    best_dist = dist;
                    best = candidate;
                }
            }
            best
        })
        .collect()
}
