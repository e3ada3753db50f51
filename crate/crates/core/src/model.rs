//! Signal model: effective channels, rates, redistributed flows, and the
//! quadratic surrogate with its gradients.
//!
//! All per-BS collections in this module are in *selection order*: position
//! `p` refers to the p-th selected BS, `selection.indices()[p]` maps back to
//! the global BS index. Gradients follow the convention
//! `df = Re(g^H delta)`, so the real-parameter gradient of a function of a
//! complex vector is `[Re g; Im g]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hermitian_solve_vec, CMatrix, CVector};
use crate::scenario::{ChannelSet, Scenario, TrafficProfile};

/// Subset of surviving BSs that receive a redistribution stream.
///
/// Indices are kept sorted ascending; the bitmask mirrors them for cheap
/// set operations and for deriving per-subset solver seeds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Selection {
    indices: Vec<usize>,
    mask: u64,
}

impl Selection {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("selection must contain at least one BS"));
        }
        indices.sort_unstable();
        let mut mask = 0u64;
        for &l in &indices {
            if l >= 64 {
                return Err(Error::invalid(format!("BS index {l} out of range")));
            }
            if mask & (1 << l) != 0 {
                return Err(Error::invalid(format!("BS index {l} selected twice")));
            }
            mask |= 1 << l;
        }
        Ok(Self { indices, mask })
    }

    pub fn from_mask(mask: u64) -> Result<Self> {
        Self::new((0..64).filter(|l| mask & (1 << l) != 0).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, l: usize) -> bool {
        l < 64 && self.mask & (1 << l) != 0
    }
}

impl TryFrom<Vec<usize>> for Selection {
    type Error = Error;
    fn try_from(indices: Vec<usize>) -> Result<Self> {
        Self::new(indices)
    }
}

impl From<Selection> for Vec<usize> {
    fn from(s: Selection) -> Vec<usize> {
        s.indices
    }
}

/// `H_l + G_l diag(phi) G_tilde`. With no RIS elements this is the direct
/// channel alone.
pub fn effective_channel(
    direct: &CMatrix,
    ris_to_bs: &CMatrix,
    bs_to_ris: &CMatrix,
    phi: &CVector,
) -> CMatrix {
    if phi.is_empty() {
        return direct.clone();
    }
    let mut scaled = bs_to_ris.clone();
    for i in 0..scaled.nrows() {
        let mut row = scaled.row_mut(i);
        row *= phi[i];
    }
    direct + ris_to_bs * scaled
}

/// Effective channels of every selected BS, in selection order.
pub fn effective_channels(
    channels: &ChannelSet,
    phi: &CVector,
    selection: &Selection,
) -> Vec<CMatrix> {
    selection
        .indices()
        .iter()
        .map(|&l| {
            effective_channel(
                &channels.direct[l],
                &channels.ris_to_bs[l],
                &channels.bs_to_ris,
                phi,
            )
        })
        .collect()
}

/// Coefficients `(a, b)` of the affine map `phi -> y^H H_eff(phi) w`:
/// `y^H H_eff(phi) w = a + b^H phi` with `a = y^H H w` and
/// `b = (G^H y) .* conj(G_tilde w)`.
pub fn cascade_coefficients(
    direct: &CMatrix,
    ris_to_bs: &CMatrix,
    bs_to_ris: &CMatrix,
    y: &CVector,
    w: &CVector,
) -> (Complex64, CVector) {
    let a = y.dotc(&(direct * w));
    let t = ris_to_bs.ad_mul(y);
    let s = bs_to_ris * w;
    let b = t.component_mul(&s.conjugate());
    (a, b)
}

/// `R = sigma^2 I + sum_{j != self_pos} (H w_j)(H w_j)^H`.
///
/// Every stream leaves the same transmitter, so receiver `l` sees each
/// interferer through its own effective channel.
pub fn interference_covariance(
    noise_power: f64,
    h_eff: &CMatrix,
    precoders: &[CVector],
    self_pos: usize,
) -> CMatrix {
    let n = h_eff.nrows();
    let mut cov = CMatrix::identity(n, n) * Complex64::from(noise_power);
    for (j, w) in precoders.iter().enumerate() {
        if j == self_pos {
            continue;
        }
        let x = h_eff * w;
        cov += &x * x.adjoint();
    }
    cov
}

/// `w^H H^H R^{-1} H w`, clamped at zero against roundoff.
pub fn sinr(h_eff: &CMatrix, cov: &CMatrix, w: &CVector) -> Result<f64> {
    let x = h_eff * w;
    let z = hermitian_solve_vec(cov, &x)?;
    Ok(x.dotc(&z).re.max(0.0))
}

/// Shannon rate over the configured bandwidth, bit/s.
pub fn achievable_rate(bandwidth: f64, sinr: f64) -> f64 {
    bandwidth * (1.0 + sinr).log2()
}

/// True rate of every selected BS, in selection order.
pub fn per_bs_rates(
    bandwidth: f64,
    noise_power: f64,
    h_effs: &[CMatrix],
    precoders: &[CVector],
) -> Result<Vec<f64>> {
    let mut rates = Vec::with_capacity(h_effs.len());
    for (pos, h) in h_effs.iter().enumerate() {
        let cov = interference_covariance(noise_power, h, precoders, pos);
        rates.push(achievable_rate(bandwidth, sinr(h, &cov, &precoders[pos])?));
    }
    Ok(rates)
}

/// Redistributed-traffic summary of one operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Redistribution {
    /// Achievable rate per BS (global index), zero where unselected. bit/s.
    pub rates: Vec<f64>,
    /// Admitted flow `min(rate, spare)` per BS, zero where unselected. bit/s.
    pub flows: Vec<f64>,
    /// Total redistributed traffic, bit/s.
    pub total: f64,
    /// Fraction of the failed demand that is carried, in [0, 1].
    pub survivability: f64,
}

/// Fraction of demand carried: `min(1, total / demand)`, and 1 by
/// convention when there is no demand to carry.
pub fn survivability(total: f64, demand: f64) -> f64 {
    if demand <= 0.0 {
        1.0
    } else {
        (total / demand).min(1.0)
    }
}

/// Fold selection-ordered rates into the full per-BS redistribution.
pub fn redistribution(
    traffic: &TrafficProfile,
    selection: &Selection,
    rates_sel: &[f64],
) -> Redistribution {
    let l_total = traffic.local.len();
    let mut rates = vec![0.0; l_total];
    let mut flows = vec![0.0; l_total];
    let mut total = 0.0;
    for (pos, &l) in selection.indices().iter().enumerate() {
        rates[l] = rates_sel[pos];
        flows[l] = rates_sel[pos].min(traffic.spare[l]);
        total += flows[l];
    }
    Redistribution {
        rates,
        flows,
        total,
        survivability: survivability(total, traffic.demand),
    }
}

/// Evaluate the true objective at one operating point.
pub fn evaluate_selection(
    scenario: &Scenario,
    phi: &CVector,
    precoders: &[CVector],
    selection: &Selection,
) -> Result<Redistribution> {
    let h_effs = effective_channels(&scenario.channels, phi, selection);
    let rates = per_bs_rates(
        scenario.params.bandwidth,
        scenario.params.noise_power,
        &h_effs,
        precoders,
    )?;
    Ok(redistribution(&scenario.traffic, selection, &rates))
}

/// Quadratic surrogate of the SINR of selected BS `l_pos`:
/// `q = 2 Re(y^H H w_l) - sigma^2 ||y||^2 - sum_{j != l} |y^H H w_j|^2`.
pub fn surrogate_q(
    noise_power: f64,
    h_eff: &CMatrix,
    precoders: &[CVector],
    y: &CVector,
    l_pos: usize,
) -> f64 {
    let u = h_eff.ad_mul(y);
    let mut q = 2.0 * u.dotc(&precoders[l_pos]).re - noise_power * y.norm_squared();
    for (j, w) in precoders.iter().enumerate() {
        if j != l_pos {
            q -= u.dotc(w).norm_sqr();
        }
    }
    q
}

/// Maximizer of the surrogate in `y`: `R^{-1} H w_l`, nudged by a small
/// constant offset so a dead receiver still produces a usable direction.
pub fn optimal_auxiliary(
    noise_power: f64,
    h_eff: &CMatrix,
    precoders: &[CVector],
    l_pos: usize,
    epsilon_reg: f64,
) -> Result<CVector> {
    let cov = interference_covariance(noise_power, h_eff, precoders, l_pos);
    let x = h_eff * &precoders[l_pos];
    let mut y = hermitian_solve_vec(&cov, &x)?;
    if epsilon_reg != 0.0 {
        y.add_scalar_mut(Complex64::from(epsilon_reg));
    }
    Ok(y)
}

/// Capped concave objective `sum_l min(B log2(1 + q_l), spare_l)`.
///
/// Negative surrogates count in full (no clamp at zero: clamping would
/// break concavity). A surrogate at or below -1 makes the point infeasible
/// for the log and evaluates to negative infinity, which any ascent step
/// rejects.
pub fn capped_objective(bandwidth: f64, qs: &[f64], spares: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&q, &spare) in qs.iter().zip(spares) {
        if 1.0 + q <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += (bandwidth * (1.0 + q).log2()).min(spare);
    }
    total
}

/// Subgradient weight of each surrogate term: `B / (ln2 (1 + q_l))` while
/// the rate term is below its cap, zero once the cap binds.
pub fn subgradient_coeffs(bandwidth: f64, qs: &[f64], spares: &[f64]) -> Vec<f64> {
    qs.iter()
        .zip(spares)
        .map(|(&q, &spare)| {
            if 1.0 + q <= 0.0 {
                return 0.0;
            }
            let rate = bandwidth * (1.0 + q).log2();
            if rate < spare {
                bandwidth / (std::f64::consts::LN_2 * (1.0 + q))
            } else {
                0.0
            }
        })
        .collect()
}

/// Fixed per-receiver data of the precoder subproblem (phases and auxiliary
/// receivers held constant): `u_l = H_eff,l^H y_l` and the noise quadratic.
pub struct PrecoderData {
    pub us: Vec<CVector>,
    pub noise_terms: Vec<f64>,
    pub bandwidth: f64,
    pub spares: Vec<f64>,
}

impl PrecoderData {
    pub fn build(
        bandwidth: f64,
        noise_power: f64,
        h_effs: &[CMatrix],
        ys: &[CVector],
        spares: Vec<f64>,
    ) -> Self {
        let us: Vec<CVector> = h_effs
            .iter()
            .zip(ys)
            .map(|(h, y)| h.ad_mul(y))
            .collect();
        let noise_terms = ys.iter().map(|y| noise_power * y.norm_squared()).collect();
        Self {
            us,
            noise_terms,
            bandwidth,
            spares,
        }
    }

    /// `c[l][j] = u_l^H w_j = y_l^H H_eff,l w_j`.
    pub fn inner(&self, precoders: &[CVector]) -> Vec<Vec<Complex64>> {
        self.us
            .iter()
            .map(|u| precoders.iter().map(|w| u.dotc(w)).collect())
            .collect()
    }

    pub fn qs(&self, inner: &[Vec<Complex64>]) -> Vec<f64> {
        (0..self.us.len())
            .map(|l| {
                let mut q = 2.0 * inner[l][l].re - self.noise_terms[l];
                for (j, c) in inner[l].iter().enumerate() {
                    if j != l {
                        q -= c.norm_sqr();
                    }
                }
                q
            })
            .collect()
    }

    pub fn objective(&self, precoders: &[CVector]) -> f64 {
        capped_objective(self.bandwidth, &self.qs(&self.inner(precoders)), &self.spares)
    }

    /// Stacked gradient `g_j = 2 gamma_j u_j - 2 sum_{l != j} gamma_l u_l c_lj`.
    pub fn gradient(&self, inner: &[Vec<Complex64>], gammas: &[f64]) -> Vec<CVector> {
        let k = self.us.len();
        (0..k)
            .map(|j| {
                let mut g = &self.us[j] * Complex64::from(2.0 * gammas[j]);
                for l in 0..k {
                    if l != j && gammas[l] != 0.0 {
                        g -= &self.us[l] * (Complex64::from(2.0 * gammas[l]) * inner[l][j]);
                    }
                }
                g
            })
            .collect()
    }
}

/// Fixed cascade data of the phase subproblem (precoders and auxiliary
/// receivers held constant): `y_l^H H_eff,l(phi) w_j = a[l][j] + b[l][:,j]^H phi`.
pub struct CascadeData {
    /// `a[l][j] = y_l^H H_l w_j` (direct part).
    pub a: Vec<Vec<Complex64>>,
    /// Column `j` of `b[l]` is `(G_l^H y_l) .* conj(G_tilde w_j)`, M x |S|.
    pub b: Vec<CMatrix>,
    /// `sigma^2 ||y_l||^2`.
    pub noise_terms: Vec<f64>,
    pub bandwidth: f64,
    pub spares: Vec<f64>,
}

impl CascadeData {
    pub fn build(
        bandwidth: f64,
        noise_power: f64,
        channels: &ChannelSet,
        selection: &Selection,
        precoders: &[CVector],
        ys: &[CVector],
        spares: Vec<f64>,
    ) -> Self {
        let k = selection.len();
        let m = channels.bs_to_ris.nrows();
        let ss: Vec<CVector> = precoders.iter().map(|w| &channels.bs_to_ris * w).collect();
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        for (pos, &l) in selection.indices().iter().enumerate() {
            let t = channels.ris_to_bs[l].ad_mul(&ys[pos]);
            let mut bl = CMatrix::zeros(m, k);
            let mut al = Vec::with_capacity(k);
            for (j, w) in precoders.iter().enumerate() {
                al.push(ys[pos].dotc(&(&channels.direct[l] * w)));
                bl.set_column(j, &t.component_mul(&ss[j].conjugate()));
            }
            a.push(al);
            b.push(bl);
        }
        let noise_terms = ys.iter().map(|y| noise_power * y.norm_squared()).collect();
        Self {
            a,
            b,
            noise_terms,
            bandwidth,
            spares,
        }
    }

    /// `s[l][j] = a[l][j] + b[l][:,j]^H phi`, the received coefficients at
    /// phase setting `phi`.
    pub fn s_values(&self, phi: &CVector) -> Vec<Vec<Complex64>> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(al, bl)| {
                let proj = bl.ad_mul(phi);
                al.iter().zip(proj.iter()).map(|(a, p)| a + p).collect()
            })
            .collect()
    }

    pub fn qs(&self, s: &[Vec<Complex64>]) -> Vec<f64> {
        (0..self.a.len())
            .map(|l| {
                let mut q = 2.0 * s[l][l].re - self.noise_terms[l];
                for (j, c) in s[l].iter().enumerate() {
                    if j != l {
                        q -= c.norm_sqr();
                    }
                }
                q
            })
            .collect()
    }

    pub fn objective(&self, phi: &CVector) -> f64 {
        capped_objective(self.bandwidth, &self.qs(&self.s_values(phi)), &self.spares)
    }

    /// `g = 2 sum_l gamma_l (b[l][:,l] - sum_{j != l} b[l][:,j] s_lj)`.
    pub fn gradient(&self, s: &[Vec<Complex64>], gammas: &[f64]) -> CVector {
        let m = self.b.first().map_or(0, |bl| bl.nrows());
        let mut g = CVector::zeros(m);
        for (l, bl) in self.b.iter().enumerate() {
            if gammas[l] == 0.0 {
                continue;
            }
            let mut weights = CVector::from_row_slice(&s[l]);
            weights[l] = -Complex64::ONE; // own column enters with +1
            g -= bl * weights * Complex64::from(2.0 * gammas[l]);
        }
        g
    }
}
