//! Rényi-DP accountant for the (sampled) Gaussian mechanism applied to the
//! clipped, averaged task updates.
//!
//! A release adds `N(0, sigma^2 I)` to `(1/divisor) * sum clip(g_k, gamma)`.
//! With `divisor = q` its noise multiplier is `z = q * sigma / gamma`. The
//! sensitivity convention decides whether one task can move the sum by
//! `gamma` (standard) or `2 gamma` (conservative, replace-one worst case); the
//! accountant then works with `z / relative_sensitivity`.

use crate::config::FederationConfig;
use crate::error::{Error, Result};

/// How much one task's replacement can move the clipped sum, in units of `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityConvention {
    /// Sensitivity `gamma`, the bound used to derive the closed-form noise level.
    #[default]
    Standard,
    /// Sensitivity `2 gamma`: two opposite clipped updates. Doubles the calibrated sigma.
    Conservative,
}

impl SensitivityConvention {
    pub fn relative_sensitivity(self) -> f64 {
        match self {
            SensitivityConvention::Standard => 1.0,
            SensitivityConvention::Conservative => 2.0,
        }
    }
}

/// RDP orders `{1.5, 2, 3, ..., 256}`.
pub fn default_alpha_grid() -> Vec<f64> {
    std::iter::once(1.5).chain((2..=256).map(f64::from)).collect()
}

/// RDP of one Gaussian release with noise multiplier `z` (unit sensitivity): `alpha / (2 z^2)`.
pub fn rdp_gaussian(alpha: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return f64::INFINITY;
    }
    alpha / (2.0 * z * z)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// RDP at integer order `alpha >= 2` of one Poisson-subsampled Gaussian step:
///
/// `1/(alpha-1) * ln sum_{j=0}^{alpha} C(alpha,j) (1-p)^(alpha-j) p^j exp(j(j-1)/(2 z^2))`,
///
/// summed in log space. Returns `f64::INFINITY` when the bound diverges.
pub fn rdp_subsampled_gaussian(alpha: u32, z: f64, p: f64) -> f64 {
    assert!(alpha >= 2, "integer order must be at least 2");
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return rdp_gaussian(f64::from(alpha), z);
    }
    if z <= 0.0 {
        return f64::INFINITY;
    }
    let a = f64::from(alpha);
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let inv_two_z2 = 1.0 / (2.0 * z * z);
    let mut ln_binom = 0.0;
    let mut acc = f64::NEG_INFINITY;
    for j in 0..=alpha {
        let jf = f64::from(j);
        if j > 0 {
            ln_binom += (a - jf + 1.0).ln() - jf.ln();
        }
        let term = ln_binom + (a - jf) * ln_q + jf * ln_p + jf * (jf - 1.0) * inv_two_z2;
        acc = log_add_exp(acc, term);
    }
    let rdp = acc / (a - 1.0);
    if rdp.is_nan() {
        f64::INFINITY
    } else {
        rdp.max(0.0)
    }
}

/// RDP at any grid order; the subsampled bound is only available at integer orders.
fn rdp_at(alpha: f64, z: f64, p: f64) -> f64 {
    if p >= 1.0 {
        rdp_gaussian(alpha, z)
    } else if alpha >= 2.0 && alpha.fract() == 0.0 && alpha <= f64::from(u32::MAX) {
        rdp_subsampled_gaussian(alpha as u32, z, p)
    } else {
        f64::INFINITY
    }
}

/// `count` repetitions of a sampled Gaussian release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismEvent {
    /// `z = q sigma / gamma`.
    pub noise_multiplier: f64,
    /// `p = q / m`.
    pub sampling_rate: f64,
    pub count: usize,
}

impl MechanismEvent {
    pub fn new(noise_multiplier: f64, sampling_rate: f64, count: usize) -> Result<Self> {
        if !(noise_multiplier > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise multiplier {noise_multiplier} must be > 0"
            )));
        }
        if !(sampling_rate > 0.0 && sampling_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling rate {sampling_rate} must lie in (0, 1]"
            )));
        }
        if count == 0 {
            return Err(Error::InvalidConfig("event count must be >= 1".to_string()));
        }
        Ok(Self {
            noise_multiplier,
            sampling_rate,
            count,
        })
    }
}

/// Composition of all releases made so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    events: Vec<MechanismEvent>,
    /// Per-event RDP curve over `alpha_grid` for a single occurrence.
    curves: Vec<Vec<f64>>,
    delta: f64,
    alpha_grid: Vec<f64>,
    convention: SensitivityConvention,
    noiseless: bool,
}

impl PrivacyLedger {
    pub fn new(delta: f64, convention: SensitivityConvention) -> Result<Self> {
        Self::with_alpha_grid(delta, convention, default_alpha_grid())
    }

    pub fn with_alpha_grid(
        delta: f64,
        convention: SensitivityConvention,
        alpha_grid: Vec<f64>,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta {delta} must lie in (0, 1)")));
        }
        if let Some(a) = alpha_grid.iter().find(|a| !(**a > 1.0)) {
            return Err(Error::InvalidConfig(format!("RDP order {a} must be > 1")));
        }
        Ok(Self {
            events: Vec::new(),
            curves: Vec::new(),
            delta,
            alpha_grid,
            convention,
            noiseless: false,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn events(&self) -> &[MechanismEvent] {
        &self.events
    }

    pub fn alpha_grid(&self) -> &[f64] {
        &self.alpha_grid
    }

    pub fn convention(&self) -> SensitivityConvention {
        self.convention
    }

    /// True once a release without noise was recorded; epsilon is then unbounded.
    pub fn has_noiseless_release(&self) -> bool {
        self.noiseless
    }

    pub fn push(&mut self, event: MechanismEvent) {
        if let Some(last) = self.events.last_mut() {
            if last.noise_multiplier == event.noise_multiplier
                && last.sampling_rate == event.sampling_rate
            {
                last.count += event.count;
                return;
            }
        }
        let z = event.noise_multiplier / self.convention.relative_sensitivity();
        self.curves.push(
            self.alpha_grid
                .iter()
                .map(|&a| rdp_at(a, z, event.sampling_rate))
                .collect(),
        );
        self.events.push(event);
    }

    /// Records one release. A zero (or non-finite) multiplier is a noiseless release.
    pub fn record_release(&mut self, noise_multiplier: f64, sampling_rate: f64) -> Result<()> {
        if noise_multiplier > 0.0 && noise_multiplier.is_finite() {
            self.push(MechanismEvent::new(noise_multiplier, sampling_rate, 1)?);
        } else {
            self.noiseless = true;
        }
        Ok(())
    }

    /// Total RDP per grid order.
    pub fn rdp_curve(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.alpha_grid.len()];
        for (event, curve) in self.events.iter().zip(&self.curves) {
            for (t, r) in total.iter_mut().zip(curve) {
                *t += event.count as f64 * r;
            }
        }
        total
    }

    /// `(epsilon, alpha)` minimizing `rdp(alpha) + ln(1/delta)/(alpha - 1)` over the grid.
    pub fn epsilon_and_order(&self) -> Result<(f64, f64)> {
        if self.alpha_grid.is_empty() {
            return Err(Error::EmptyLedger);
        }
        if self.noiseless {
            return Ok((f64::INFINITY, f64::NAN));
        }
        if self.events.is_empty() {
            return Ok((0.0, f64::NAN));
        }
        let log_inv_delta = (1.0 / self.delta).ln();
        let mut best = (f64::INFINITY, f64::NAN);
        for (&alpha, rdp) in self.alpha_grid.iter().zip(self.rdp_curve()) {
            let eps = rdp + log_inv_delta / (alpha - 1.0);
            if eps < best.0 {
                best = (eps, alpha);
            }
        }
        Ok(best)
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.epsilon_and_order().map(|(e, _)| e)
    }
}

/// Certified epsilon of everything recorded in `ledger`.
pub fn epsilon_for_sigma(ledger: &PrivacyLedger) -> Result<f64> {
    ledger.epsilon()
}

/// A release repeated for `rounds` rounds, in the form the calibrator needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismSchedule {
    /// What the clipped sum is divided by before noise is added (`q`, or 1 for a concatenated model).
    pub divisor: f64,
    pub sampling_rate: f64,
    pub rounds: usize,
    pub gamma: f64,
    pub delta: f64,
    pub convention: SensitivityConvention,
}

impl MechanismSchedule {
    /// The noisy-mean aggregation shared by PMTL and private FedAvg/FedProx.
    pub fn aggregation(config: &FederationConfig) -> Self {
        Self {
            divisor: config.sampled as f64,
            sampling_rate: config.sampling_rate(),
            rounds: config.rounds,
            gamma: config.gamma,
            delta: config.delta,
            convention: config.sensitivity,
        }
    }

    /// DP-SGD on the concatenated model: each block is clipped and noised without averaging.
    pub fn joint_model(config: &FederationConfig) -> Self {
        Self {
            divisor: 1.0,
            ..Self::aggregation(config)
        }
    }

    pub fn noise_multiplier(&self, sigma: f64) -> f64 {
        self.divisor * sigma / self.gamma
    }

    fn sigma_for_multiplier(&self, z: f64) -> f64 {
        z * self.gamma / self.divisor
    }

    pub fn ledger(&self, sigma: f64) -> Result<PrivacyLedger> {
        let mut ledger = PrivacyLedger::new(self.delta, self.convention)?;
        let z = self.noise_multiplier(sigma);
        if z > 0.0 && z.is_finite() {
            ledger.push(MechanismEvent::new(z, self.sampling_rate, self.rounds)?);
        } else {
            for _ in 0..self.rounds {
                ledger.record_release(z, self.sampling_rate)?;
            }
        }
        Ok(ledger)
    }

    pub fn epsilon(&self, sigma: f64) -> Result<f64> {
        self.ledger(sigma)?.epsilon()
    }

    /// `4 gamma sqrt(T ln(1/delta)) / (epsilon * divisor)`, scaled by the relative sensitivity.
    pub fn closed_form_sigma(&self, epsilon: f64) -> f64 {
        4.0 * self.gamma
            * self.convention.relative_sensitivity()
            * (self.rounds as f64 * (1.0 / self.delta).ln()).sqrt()
            / (epsilon * self.divisor)
    }
}

/// Relative tolerance of the bisection in [`calibrate_sigma`].
const BISECTION_RTOL: f64 = 1e-4;
/// Multiplier bracket (in units of the relative sensitivity) searched by the calibrator.
const MULTIPLIER_BRACKET: (f64, f64) = (1e-6, 1e6);

/// Smallest sigma certified at `epsilon`.
///
/// Full participation uses the closed form, which must still certify: the
/// finite order grid puts a floor of roughly `ln(1/delta)/(max_order - 1)` on
/// any epsilon, and targets below it are infeasible. Otherwise a geometric
/// bisection over the noise multiplier returns the upper end of the final
/// bracket, so the result always certifies.
pub fn calibrate_sigma(epsilon: f64, schedule: &MechanismSchedule) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon target {epsilon} must be > 0")));
    }
    if schedule.sampling_rate >= 1.0 {
        let sigma = schedule.closed_form_sigma(epsilon);
        if !sigma.is_finite() {
            return Err(Error::InfeasiblePrivacy(format!(
                "closed-form sigma is not finite for epsilon {epsilon}"
            )));
        }
        let certified = schedule.epsilon(sigma)?;
        if certified > epsilon {
            return Err(Error::InfeasiblePrivacy(format!(
                "epsilon {epsilon} is below what the accountant can certify (closed-form sigma {sigma:.3e} gives {certified:.4})"
            )));
        }
        return Ok(sigma);
    }
    let scale = schedule.convention.relative_sensitivity();
    let eps_at = |z: f64| schedule.epsilon(schedule.sigma_for_multiplier(z));
    let (mut lo, mut hi) = (MULTIPLIER_BRACKET.0 * scale, MULTIPLIER_BRACKET.1 * scale);
    if eps_at(hi)? > epsilon {
        return Err(Error::InfeasiblePrivacy(format!(
            "epsilon {epsilon} needs sigma above {:.3e}",
            schedule.sigma_for_multiplier(hi)
        )));
    }
    if eps_at(lo)? <= epsilon {
        return Ok(schedule.sigma_for_multiplier(lo));
    }
    while hi / lo > 1.0 + BISECTION_RTOL {
        let mid = (lo * hi).sqrt();
        if eps_at(mid)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(schedule.sigma_for_multiplier(hi))
}

/// Noise level for the aggregation step of `config` at the target epsilon.
pub fn sigma_for_epsilon(epsilon: f64, config: &FederationConfig) -> Result<f64> {
    calibrate_sigma(epsilon, &MechanismSchedule::aggregation(config))
}

/// Epsilon certified for the aggregation step of `config` run with `sigma`.
pub fn certify_sigma(sigma: f64, config: &FederationConfig) -> Result<f64> {
    MechanismSchedule::aggregation(config).epsilon(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct linear-space evaluation of the binomial sum, for small orders.
    fn subsampled_direct(alpha: u32, z: f64, p: f64) -> f64 {
        let mut sum = 0.0;
        let mut binom = 1.0;
        for j in 0..=alpha {
            if j > 0 {
                binom = binom * f64::from(alpha - j + 1) / f64::from(j);
            }
            let jf = f64::from(j);
            sum += binom
                * (1.0 - p).powi((alpha - j) as i32)
                * p.powi(j as i32)
                * (jf * (jf - 1.0) / (2.0 * z * z)).exp();
        }
        sum.ln() / f64::from(alpha - 1)
    }

    fn config(m: usize, rounds: usize, delta: f64) -> FederationConfig {
        let mut c = FederationConfig::new(m);
        c.rounds = rounds;
        c.delta = delta;
        c
    }

    #[test]
    fn gaussian_rdp_examples() {
        assert_eq!(rdp_gaussian(2.0, 1.0), 1.0);
        assert_eq!(rdp_gaussian(4.0, 1.3), 2.0 * rdp_gaussian(2.0, 1.3));
        assert!(rdp_gaussian(2.0, 1e12) < 1e-20);
    }

    #[test]
    fn subsampled_matches_direct_sum() {
        for &(alpha, z, p) in &[(2u32, 1.0, 0.1), (5, 0.8, 0.3), (16, 2.0, 0.01), (30, 3.0, 0.5)] {
            let a = rdp_subsampled_gaussian(alpha, z, p);
            let b = subsampled_direct(alpha, z, p);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{alpha} {z} {p}: {a} vs {b}");
        }
    }

    #[test]
    fn subsampled_edge_cases() {
        assert_eq!(rdp_subsampled_gaussian(8, 1.0, 0.0), 0.0);
        assert!(rdp_subsampled_gaussian(8, 1.0, 1e-12) < 1e-10);
        let s = rdp_subsampled_gaussian(16, 2.0, 0.01);
        assert!(s >= 0.0 && s <= rdp_gaussian(16.0, 2.0));
        assert!(rdp_subsampled_gaussian(256, 1e-3, 0.5) > 1e6);
    }

    #[test]
    fn full_participation_reduces_to_gaussian() {
        for alpha in 2..=256u32 {
            for &z in &[0.3, 1.0, 7.5] {
                let a = rdp_subsampled_gaussian(alpha, z, 1.0);
                let b = rdp_gaussian(f64::from(alpha), z);
                assert!((a - b).abs() <= 1e-9, "{alpha} {z}");
                // and arbitrarily close to p = 1 through the log-space sum
                let near = rdp_subsampled_gaussian(alpha, z, 1.0 - 1e-15);
                assert!((near - b).abs() <= 1e-9 * b.max(1.0), "{alpha} {z}: {near} vs {b}");
            }
        }
    }

    #[test]
    fn zero_events_cost_nothing_and_noiseless_costs_everything() {
        let mut ledger = PrivacyLedger::new(0.01, SensitivityConvention::Standard).unwrap();
        assert_eq!(epsilon_for_sigma(&ledger).unwrap(), 0.0);
        ledger.record_release(0.0, 1.0).unwrap();
        assert!(ledger.epsilon().unwrap().is_infinite());
        let empty = PrivacyLedger::with_alpha_grid(0.01, SensitivityConvention::Standard, vec![]).unwrap();
        assert_eq!(empty.epsilon(), Err(Error::EmptyLedger));
        assert!(PrivacyLedger::with_alpha_grid(0.01, SensitivityConvention::Standard, vec![1.0]).is_err());
    }

    #[test]
    fn closed_form_matches_hand_evaluation() {
        let c = config(100, 100, 0.01);
        let sigma = sigma_for_epsilon(1.0, &c).unwrap();
        let by_hand = 4.0 * (100.0 * 100f64.ln()).sqrt() / 100.0;
        assert_eq!(sigma, by_hand);
        assert!(((sigma - 0.858_43) / 0.858_43).abs() < 1e-4);
        assert!(certify_sigma(sigma, &c).unwrap() <= 1.0);
    }

    #[test]
    fn closed_form_scaling() {
        let c = config(100, 100, 0.01);
        let base = sigma_for_epsilon(1.0, &c).unwrap();
        let half_eps = sigma_for_epsilon(0.5, &c).unwrap();
        assert!((half_eps / base - 2.0).abs() < 1e-12);
        let double_m = config(200, 100, 0.01);
        let s = sigma_for_epsilon(1.0, &double_m).unwrap();
        assert!((s / base - 0.5).abs() < 1e-12);
        let mut conservative = c.clone();
        conservative.sensitivity = SensitivityConvention::Conservative;
        let sc = sigma_for_epsilon(1.0, &conservative).unwrap();
        assert!((sc / base - 2.0).abs() < 1e-12);
        assert!(certify_sigma(sc, &conservative).unwrap() <= 1.0);
    }

    #[test]
    fn doubling_rounds_increases_epsilon() {
        let mut c = config(100, 50, 0.01);
        c.sampled = 10;
        let e1 = certify_sigma(0.05, &c).unwrap();
        c.rounds = 100;
        let e2 = certify_sigma(0.05, &c).unwrap();
        assert!(e2 > e1);
    }

    #[test]
    fn bisection_certifies_and_is_tight() {
        let mut c = config(100, 30, 0.01);
        c.sampled = 20;
        c.gamma = 0.5;
        let sigma = sigma_for_epsilon(2.0, &c).unwrap();
        assert!(certify_sigma(sigma, &c).unwrap() <= 2.0);
        assert!(certify_sigma(sigma * (1.0 - 2e-4), &c).unwrap() > 2.0);
    }

    #[test]
    fn infeasible_target_is_reported() {
        let mut c = config(100, 1000, 1e-10);
        c.sampled = 50;
        assert!(matches!(sigma_for_epsilon(1e-9, &c), Err(Error::InfeasiblePrivacy(_))));
        assert!(sigma_for_epsilon(0.0, &c).is_err());
    }

    #[test]
    fn non_integer_orders_only_count_without_subsampling() {
        let mut full = PrivacyLedger::with_alpha_grid(0.1, SensitivityConvention::Standard, vec![1.5]).unwrap();
        full.record_release(3.0, 1.0).unwrap();
        assert!(full.epsilon().unwrap().is_finite());
        let mut sub = PrivacyLedger::with_alpha_grid(0.1, SensitivityConvention::Standard, vec![1.5]).unwrap();
        sub.record_release(3.0, 0.5).unwrap();
        assert!(sub.epsilon().unwrap().is_infinite());
    }

    #[test]
    fn repeated_events_are_merged() {
        let mut ledger = PrivacyLedger::new(0.01, SensitivityConvention::Standard).unwrap();
        for _ in 0..5 {
            ledger.record_release(2.0, 0.5).unwrap();
        }
        assert_eq!(ledger.events().len(), 1);
        assert_eq!(ledger.events()[0].count, 5);
        let single = MechanismSchedule {
            divisor: 1.0,
            sampling_rate: 0.5,
            rounds: 5,
            gamma: 1.0,
            delta: 0.01,
            convention: SensitivityConvention::Standard,
        };
        assert_eq!(single.epsilon(2.0).unwrap(), ledger.epsilon().unwrap());
    }
}
