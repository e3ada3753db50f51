//! Deployment geometry, pathloss, channel realizations, traffic profiles.
//!
//! The disconnected BS sits at the origin of a hexagonal grid; the L nearest
//! grid sites host the surviving BSs and a RIS panel sits a quarter site
//! away along +x. Direct links are NLOS Rayleigh, RIS links are LOS Rician,
//! both scaled by a close-in pathloss law. A [`Scenario`] bundles one frozen
//! realization of all of it; everything downstream treats it as immutable.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::{
    derive_seed, CMatrix, CVector, Rng, STREAM_DIRECT, STREAM_RIS, STREAM_TRAFFIC,
};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Hexagonal grid rings searched for BS sites. Three rings give 36 candidate
/// sites, plenty for any realistic L.
const MAX_RINGS: i32 = 3;

/// Physical and budget parameters of one deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n_antennas: usize,
    pub ris_elements: usize,
    pub surviving_bs: usize,
    /// Total transmit power budget, watts.
    pub p_max: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Hz.
    pub carrier: f64,
    /// Watts.
    pub noise_power: f64,
    /// Fronthaul capacity C_0 of every BS, bit/s.
    pub bbu_capacity: f64,
    /// Inter-site distance d_0, meters.
    pub inter_site: f64,
    /// Rician factor, linear (not dB).
    pub rician_factor: f64,
    pub exponent_los: f64,
    pub exponent_nlos: f64,
    pub ris_offset_fraction: f64,
    /// Bookkeeping constant from the mixed-integer formulation, bit/s.
    /// Kept for manifests; never enters arithmetic.
    pub big_m: f64,
    /// Auxiliary receiver regularization epsilon.
    pub epsilon_reg: f64,
    pub max_outer_iterations: usize,
}

/// Node placement and the distances the traffic/pathloss models need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub disconnected: [f64; 2],
    pub surviving: Vec<[f64; 2]>,
    pub ris: [f64; 2],
    /// Disconnected BS to surviving BS l, meters.
    pub bs_distances: Vec<f64>,
    /// RIS to surviving BS l, meters.
    pub ris_bs_distances: Vec<f64>,
    /// Disconnected BS to RIS, meters.
    pub ris_distance: f64,
    pub d_min: f64,
    pub d_max: f64,
}

/// One small-scale channel realization, pathloss included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// H_l, N x N, NLOS Rayleigh.
    pub direct: Vec<CMatrix>,
    /// G_l, N x M, LOS Rician.
    pub ris_to_bs: Vec<CMatrix>,
    /// G_tilde, M x N, LOS Rician.
    pub bs_to_ris: CMatrix,
}

/// Load state of the network at failure time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    /// Traffic intensity eta of the disconnected BS.
    pub intensity: f64,
    /// Per-BS local intensity eta_l, clamped to [0, 1].
    pub local: Vec<f64>,
    /// Demand C_d = eta * C_0, bit/s.
    pub demand: f64,
    /// Carried load C_l = eta_l * C_0, bit/s.
    pub carried: Vec<f64>,
    /// Spare fronthaul C_0 - C_l, bit/s.
    pub spare: Vec<f64>,
}

/// Immutable bundle of one experiment realization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub params: SystemParams,
    pub topology: Topology,
    pub channels: ChannelSet,
    pub traffic: TrafficProfile,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkType {
    Los,
    Nlos,
}

/// Close-in reference pathloss in dB at distance `d` meters.
///
/// `FSPL(1 m) + 10 n log10(d)`, valid for d >= 1 m (the reference distance).
pub fn pathloss_db(params: &SystemParams, d: f64, link: LinkType) -> Result<f64> {
    if !(d >= 1.0) {
        return Err(Error::invalid(format!(
            "pathloss_db: distance {d} m is below the 1 m reference"
        )));
    }
    let fspl = 20.0 * (4.0 * std::f64::consts::PI * params.carrier / SPEED_OF_LIGHT).log10();
    let n = match link {
        LinkType::Los => params.exponent_los,
        LinkType::Nlos => params.exponent_nlos,
    };
    Ok(fspl + 10.0 * n * d.log10())
}

/// Linear power gain `10^(-PL/10)`.
pub fn pathloss_gain(params: &SystemParams, d: f64, link: LinkType) -> Result<f64> {
    Ok(10f64.powf(-pathloss_db(params, d, link)? / 10.0))
}

/// Axial hex coordinates of all sites within `MAX_RINGS` rings, origin
/// excluded.
fn hex_sites(d0: f64) -> Vec<[f64; 2]> {
    let mut sites = Vec::new();
    for q in -MAX_RINGS..=MAX_RINGS {
        for r in -MAX_RINGS..=MAX_RINGS {
            if q == 0 && r == 0 {
                continue;
            }
            let ring = ((q.abs() + r.abs() + (q + r).abs()) / 2) as i32;
            if ring > MAX_RINGS {
                continue;
            }
            let x = d0 * (q as f64 + r as f64 / 2.0);
            let y = d0 * r as f64 * 3f64.sqrt() / 2.0;
            sites.push([x, y]);
        }
    }
    sites
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Angle of `p` seen from the origin, counterclockwise from +x, in [0, 2pi).
fn ccw_angle(p: [f64; 2]) -> f64 {
    let a = p[1].atan2(p[0]);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Place the disconnected BS at the origin, pick the L nearest hexagonal
/// sites for the survivors (ties broken counterclockwise from +x), and drop
/// the RIS `offset_fraction * d_0` along +x.
pub fn build_topology(params: &SystemParams) -> Result<Topology> {
    let l = params.surviving_bs;
    let d0 = params.inter_site;
    let mut sites = hex_sites(d0);
    if l > sites.len() {
        return Err(Error::invalid(format!(
            "build_topology: {l} surviving BSs requested but only {} sites within {MAX_RINGS} rings",
            sites.len()
        )));
    }

    let origin = [0.0, 0.0];
    // Quantized distance keeps same-ring sites exactly tied despite rounding
    // (e.g. sqrt(1/4 + 3/4) is not exactly 1 in binary).
    let key = |p: &[f64; 2]| {
        let q = (dist(origin, *p) / d0 * 1e9).round() as i64;
        (q, ccw_angle(*p))
    };
    sites.sort_by(|a, b| {
        let (qa, aa) = key(a);
        let (qb, ab) = key(b);
        qa.cmp(&qb).then(aa.partial_cmp(&ab).unwrap())
    });
    sites.truncate(l);

    let ris = [params.ris_offset_fraction * d0, 0.0];
    let ris_distance = dist(origin, ris);
    if ris_distance < 1.0 {
        return Err(Error::invalid(format!(
            "build_topology: RIS sits {ris_distance:.3} m from the BS, below the 1 m pathloss reference"
        )));
    }

    let bs_distances: Vec<f64> = sites.iter().map(|p| dist(origin, *p)).collect();
    let ris_bs_distances: Vec<f64> = sites.iter().map(|p| dist(ris, *p)).collect();
    let d_min = bs_distances.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = bs_distances.iter().cloned().fold(0.0, f64::max);

    Ok(Topology {
        disconnected: origin,
        surviving: sites,
        ris,
        bs_distances,
        ris_bs_distances,
        ris_distance,
        d_min,
        d_max,
    })
}

/// Steering phases of a half-wavelength ULA laid along the global +y axis.
fn ula_response(n: usize, dir_y: f64) -> CVector {
    CVector::from_fn(n, |k, _| {
        Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 * dir_y)
    })
}

/// Steering phases of the RIS panel. Elements fill a near-square grid; rows
/// stack vertically and all nodes share a height, so only the horizontal
/// (column) coordinate advances the phase.
fn ris_response(m: usize, dir_y: f64) -> CVector {
    if m == 0 {
        return CVector::zeros(0);
    }
    let cols = (m as f64).sqrt().ceil() as usize;
    CVector::from_fn(m, |i, _| {
        let col = i % cols;
        Complex64::from_polar(1.0, std::f64::consts::PI * col as f64 * dir_y)
    })
}

fn unit_dir(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    let d = dist(from, to);
    [(to[0] - from[0]) / d, (to[1] - from[1]) / d]
}

/// Rician mixture around a rank-one LOS outer product of steering vectors.
/// Every LOS entry has unit modulus, so kappa -> infinity drives all entry
/// moduli to 1 and kappa = 0 leaves pure CN(0, 1).
fn rician(kappa: f64, los: CMatrix, rng: &mut Rng) -> CMatrix {
    let (rows, cols) = los.shape();
    let los_w = Complex64::from((kappa / (1.0 + kappa)).sqrt());
    let nlos_w = Complex64::from((1.0 / (1.0 + kappa)).sqrt());
    los * los_w + rng.sample_cn(rows, cols) * nlos_w
}

/// Draw one channel realization.
///
/// Two independent child streams are split off the seed: one for the direct
/// NLOS links, one for the RIS links. An M = 0 run therefore consumes the
/// exact same direct-link draws as its M > 0 pair.
pub fn build_channels(params: &SystemParams, topo: &Topology, seed: u64) -> Result<ChannelSet> {
    let n = params.n_antennas;
    let m = params.ris_elements;
    let kappa = params.rician_factor;
    let mut direct_rng = Rng::from_seed(derive_seed(seed, &[STREAM_DIRECT]));
    let mut ris_rng = Rng::from_seed(derive_seed(seed, &[STREAM_RIS]));

    let mut direct = Vec::with_capacity(topo.surviving.len());
    for &d in &topo.bs_distances {
        let beta = pathloss_gain(params, d, LinkType::Nlos)?;
        direct.push(direct_rng.sample_cn(n, n) * Complex64::from(beta.sqrt()));
    }

    // Disconnected BS -> RIS.
    let bs_to_ris = if m == 0 {
        CMatrix::zeros(0, n)
    } else {
        let beta = pathloss_gain(params, topo.ris_distance, LinkType::Los)?;
        let at_ris = ris_response(m, unit_dir(topo.ris, topo.disconnected)[1]);
        let at_bs = ula_response(n, unit_dir(topo.disconnected, topo.ris)[1]);
        let los = &at_ris * at_bs.adjoint();
        rician(kappa, los, &mut ris_rng) * Complex64::from(beta.sqrt())
    };

    // RIS -> each surviving BS.
    let mut ris_to_bs = Vec::with_capacity(topo.surviving.len());
    for (l, &pos) in topo.surviving.iter().enumerate() {
        if m == 0 {
            ris_to_bs.push(CMatrix::zeros(n, 0));
            continue;
        }
        let d = topo.ris_bs_distances[l];
        let beta = pathloss_gain(params, d, LinkType::Los)?;
        let at_bs = ula_response(n, unit_dir(pos, topo.ris)[1]);
        let at_ris = ris_response(m, unit_dir(topo.ris, pos)[1]);
        let los = &at_bs * at_ris.adjoint();
        ris_to_bs.push(rician(kappa, los, &mut ris_rng) * Complex64::from(beta.sqrt()));
    }

    Ok(ChannelSet {
        direct,
        ris_to_bs,
        bs_to_ris,
    })
}

/// Distance-biased load profile.
///
/// `eta_l = alpha * ((d_max - d_l)/(d_max - d_min))^gamma * eta
///          + (1 - alpha) * eta + chi_l`,
/// clamped to [0, 1]. alpha = 0 is uniform load; alpha > 0 concentrates load
/// on the BSs nearest the failure (the hotspot case). When all survivors sit
/// at the same distance the bias factor degenerates to 1.
pub fn traffic_profile(
    params: &SystemParams,
    topo: &Topology,
    eta: f64,
    alpha: f64,
    gamma: f64,
    sigma_chi: f64,
    rng: &mut Rng,
) -> Result<TrafficProfile> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("traffic intensity {eta} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("traffic alpha {alpha} outside [0, 1]")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("traffic gamma {gamma} must be positive")));
    }
    if !(sigma_chi >= 0.0) {
        return Err(Error::invalid(format!(
            "traffic sigma_chi {sigma_chi} must be nonnegative"
        )));
    }

    let span = topo.d_max - topo.d_min;
    let local: Vec<f64> = topo
        .bs_distances
        .iter()
        .map(|&d| {
            let bias = if span <= f64::EPSILON * topo.d_max {
                1.0
            } else {
                ((topo.d_max - d) / span).powf(gamma)
            };
            let chi = if sigma_chi > 0.0 {
                sigma_chi * rng.standard_normal()
            } else {
                0.0
            };
            (alpha * bias * eta + (1.0 - alpha) * eta + chi).clamp(0.0, 1.0)
        })
        .collect();

    let c0 = params.bbu_capacity;
    let carried: Vec<f64> = local.iter().map(|&e| e * c0).collect();
    let spare: Vec<f64> = carried.iter().map(|&c| c0 - c).collect();

    Ok(TrafficProfile {
        intensity: eta,
        local,
        demand: eta * c0,
        carried,
        spare,
    })
}

/// Build a full scenario from a validated config and a seed.
///
/// Identical `(config, seed)` pairs produce identical scenarios; the RIS
/// element count is the only thing that distinguishes a paired on/off run.
pub fn build_scenario(config: &RunConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let params = config.system_params();
    let topology = build_topology(&params)?;
    let channels = build_channels(&params, &topology, seed)?;
    let mut traffic_rng = Rng::from_seed(derive_seed(seed, &[STREAM_TRAFFIC]));
    let traffic = traffic_profile(
        &params,
        &topology,
        config.traffic.intensity,
        config.traffic.alpha,
        config.traffic.gamma,
        config.traffic.sigma_chi,
        &mut traffic_rng,
    )?;
    Ok(Scenario {
        params,
        topology,
        channels,
        traffic,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_params() -> SystemParams {
        RunConfig::default().system_params()
    }

    #[test]
    fn seven_nearest_sites_match_hex_geometry() {
        let params = default_params();
        let topo = build_topology(&params).unwrap();
        assert_eq!(topo.surviving.len(), 7);
        // Six first-ring sites at d_0, the seventh at sqrt(3) d_0.
        for l in 0..6 {
            assert_relative_eq!(topo.bs_distances[l], 100.0, max_relative = 1e-9);
        }
        assert_relative_eq!(topo.bs_distances[6], 100.0 * 3f64.sqrt(), max_relative = 1e-9);
        assert_relative_eq!(topo.d_min, 100.0, max_relative = 1e-9);
        assert_relative_eq!(topo.d_max, 100.0 * 3f64.sqrt(), max_relative = 1e-9);

        // First-ring ties resolve counterclockwise from +x: 0, 60, ..., 300
        // degrees. The seventh site is the first second-ring site at 30 deg.
        for (l, expect) in (0..6).map(|k| (k, k as f64 * 60f64.to_radians())) {
            assert_relative_eq!(
                ccw_angle(topo.surviving[l]),
                expect,
                epsilon = 1e-9
            );
        }
        assert_relative_eq!(
            ccw_angle(topo.surviving[6]),
            30f64.to_radians(),
            epsilon = 1e-9
        );

        // RIS a quarter site along +x.
        assert_relative_eq!(topo.ris[0], 25.0, max_relative = 1e-12);
        assert_eq!(topo.ris[1], 0.0);
        assert_relative_eq!(topo.ris_distance, 25.0, max_relative = 1e-12);
    }

    #[test]
    fn topology_rejects_too_many_bs() {
        let mut params = default_params();
        params.surviving_bs = 37;
        assert!(matches!(
            build_topology(&params),
            Err(Error::InvalidInput(_))
        ));
        params.surviving_bs = 36;
        assert!(build_topology(&params).is_ok());
    }

    #[test]
    fn pathloss_reference_values() {
        let params = default_params();
        // Free-space reference at 1 m, 28 GHz: 20 log10(4 pi f / c).
        let fspl = pathloss_db(&params, 1.0, LinkType::Los).unwrap();
        let oracle =
            20.0 * (4.0 * std::f64::consts::PI * 28e9 / SPEED_OF_LIGHT).log10();
        assert_relative_eq!(fspl, oracle, max_relative = 1e-12);
        assert!((fspl - 61.39).abs() < 0.02, "fspl = {fspl}");

        // LOS at 100 m adds 10 * 2.0 * 2 dB.
        let los100 = pathloss_db(&params, 100.0, LinkType::Los).unwrap();
        assert_relative_eq!(los100, oracle + 40.0, max_relative = 1e-12);

        // NLOS slope follows the configured exponent.
        let nlos100 = pathloss_db(&params, 100.0, LinkType::Nlos).unwrap();
        assert_relative_eq!(
            nlos100,
            oracle + 10.0 * params.exponent_nlos * 2.0,
            max_relative = 1e-12
        );

        // Gains are the dB values in linear.
        let g = pathloss_gain(&params, 100.0, LinkType::Nlos).unwrap();
        assert_relative_eq!(g, 10f64.powf(-nlos100 / 10.0), max_relative = 1e-12);

        assert!(matches!(
            pathloss_db(&params, 0.5, LinkType::Los),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn direct_channel_second_moment_matches_pathloss() {
        let mut params = default_params();
        params.surviving_bs = 1;
        params.n_antennas = 4;
        params.ris_elements = 0;
        let topo = build_topology(&params).unwrap();
        let beta = pathloss_gain(&params, topo.bs_distances[0], LinkType::Nlos).unwrap();

        // 10^4 matrices of 16 entries each.
        let mut acc = 0.0;
        let mut count = 0usize;
        for s in 0..10_000u64 {
            let ch = build_channels(&params, &topo, s).unwrap();
            acc += ch.direct[0].iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += ch.direct[0].len();
        }
        let mean = acc / count as f64;
        assert_relative_eq!(mean, beta, max_relative = 0.03);
    }

    #[test]
    fn rician_limits() {
        let mut params = default_params();
        params.surviving_bs = 2;
        params.n_antennas = 2;
        params.ris_elements = 16;
        let topo = build_topology(&params).unwrap();

        // kappa -> infinity: every entry modulus approaches its LOS value,
        // which is unit modulus times the pathloss amplitude.
        params.rician_factor = 1e12;
        let ch = build_channels(&params, &topo, 9).unwrap();
        let beta = pathloss_gain(&params, topo.ris_distance, LinkType::Los).unwrap();
        for z in ch.bs_to_ris.iter() {
            assert_relative_eq!(z.norm(), beta.sqrt(), max_relative = 1e-4);
        }

        // kappa = 0: pure scattering, E|g|^2 = beta.
        params.rician_factor = 0.0;
        let mut acc = 0.0;
        let mut count = 0usize;
        for s in 0..2_000u64 {
            let ch = build_channels(&params, &topo, s).unwrap();
            acc += ch.bs_to_ris.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += ch.bs_to_ris.len();
        }
        assert_relative_eq!(acc / count as f64, beta, max_relative = 0.03);
    }

    #[test]
    fn ris_off_pairs_share_direct_draws() {
        let cfg_on = RunConfig::default();
        let mut cfg_off = cfg_on.clone();
        cfg_off.system.ris_elements = 0;

        let on = build_scenario(&cfg_on, 77).unwrap();
        let off = build_scenario(&cfg_off, 77).unwrap();
        assert_eq!(on.channels.direct, off.channels.direct);
        assert_eq!(on.traffic, off.traffic);
        assert_eq!(off.channels.bs_to_ris.nrows(), 0);
        assert_eq!(off.channels.ris_to_bs[0].ncols(), 0);
    }

    #[test]
    fn same_seed_same_scenario() {
        let cfg = RunConfig::default();
        let a = build_scenario(&cfg, 5).unwrap();
        let b = build_scenario(&cfg, 5).unwrap();
        assert_eq!(a.channels.direct, b.channels.direct);
        assert_eq!(a.channels.bs_to_ris, b.channels.bs_to_ris);
        assert_eq!(a.channels.ris_to_bs, b.channels.ris_to_bs);
        assert_eq!(a.traffic, b.traffic);

        let c = build_scenario(&cfg, 6).unwrap();
        assert_ne!(a.channels.direct, c.channels.direct);
    }

    #[test]
    fn traffic_profile_reference_points() {
        let params = default_params();
        let topo = build_topology(&params).unwrap();
        let mut rng = Rng::from_seed(1);

        // Uniform, no noise: every BS carries exactly eta.
        let t = traffic_profile(&params, &topo, 0.5, 0.0, 2.0, 0.0, &mut rng).unwrap();
        assert!(t.local.iter().all(|&e| e == 0.5));
        assert_relative_eq!(t.demand, 0.5e9, max_relative = 1e-12);
        assert!(t.spare.iter().all(|&s| (s - 0.5e9).abs() < 1e-3));

        // Hotspot, no noise: nearest BS carries eta, farthest 0.3 eta.
        let t = traffic_profile(&params, &topo, 0.8, 0.7, 2.0, 0.0, &mut rng).unwrap();
        assert_relative_eq!(t.local[0], 0.8, max_relative = 1e-12); // d = d_min
        assert_relative_eq!(t.local[6], 0.3 * 0.8, max_relative = 1e-12); // d = d_max

        // Nearest BS at eta = 0.8 keeps 0.8 regardless of alpha.
        let t = traffic_profile(&params, &topo, 0.8, 0.3, 2.0, 0.0, &mut rng).unwrap();
        assert_relative_eq!(t.local[0], 0.8, max_relative = 1e-12);

        // Noise perturbs but clamps to [0, 1].
        let t = traffic_profile(&params, &topo, 0.95, 0.0, 2.0, 0.2, &mut rng).unwrap();
        assert!(t.local.iter().all(|&e| (0.0..=1.0).contains(&e)));

        // Range errors.
        assert!(traffic_profile(&params, &topo, 1.2, 0.0, 2.0, 0.0, &mut rng).is_err());
        assert!(traffic_profile(&params, &topo, 0.5, -0.1, 2.0, 0.0, &mut rng).is_err());
        assert!(traffic_profile(&params, &topo, 0.5, 0.0, 0.0, 0.0, &mut rng).is_err());
        assert!(traffic_profile(&params, &topo, 0.5, 0.0, 2.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn single_distance_layout_degenerates_to_uniform() {
        let mut params = default_params();
        params.surviving_bs = 6; // all first-ring, equal distances
        let topo = build_topology(&params).unwrap();
        let mut rng = Rng::from_seed(2);
        let t = traffic_profile(&params, &topo, 0.6, 0.9, 2.0, 0.0, &mut rng).unwrap();
        assert!(t.local.iter().all(|&e| (e - 0.6).abs() < 1e-12));
    }
}
