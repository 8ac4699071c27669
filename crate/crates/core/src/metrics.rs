//! Distance, coherence and heat observables evaluated on (reduced) spin states.
//!
//! Entropies use base-2 logarithms throughout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Liouvillian, TimeSeries};
use crate::qstate::{hermitian_eig, partial_trace_matrix, ComplexMatrix, DensityMatrix, QStateError, C64};

/// Eigenvalues in `[−CLIP_TOL, 0)` are treated as zero inside entropies.
pub const CLIP_TOL: f64 = 1e-10;

/// Overlap weight below which a component outside the support of σ is ignored.
const SUPPORT_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("eigenvalue {0:e} is below the clipping tolerance; the state is not positive")]
    NegativeEigenvalue(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("series has no `{0}` column")]
    MissingColumn(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    QState(#[from] QStateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    RelEntropyVsThermal,
    TraceDistanceVsThermal,
    CohRelEntropy,
    CohL1,
    HeatCurrent,
    HeatIntegrated,
    SigmaZExpect,
    Purity,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::RelEntropyVsThermal,
        MetricName::TraceDistanceVsThermal,
        MetricName::CohRelEntropy,
        MetricName::CohL1,
        MetricName::HeatCurrent,
        MetricName::HeatIntegrated,
        MetricName::SigmaZExpect,
        MetricName::Purity,
    ];

    /// The four state measures tabulated for protection times and window means.
    pub const TABLE: [MetricName; 4] = [
        MetricName::RelEntropyVsThermal,
        MetricName::TraceDistanceVsThermal,
        MetricName::CohRelEntropy,
        MetricName::CohL1,
    ];

    pub fn key(self) -> &'static str {
        match self {
            MetricName::RelEntropyVsThermal => "rel_entropy_vs_thermal",
            MetricName::TraceDistanceVsThermal => "trace_distance_vs_thermal",
            MetricName::CohRelEntropy => "coh_rel_entropy",
            MetricName::CohL1 => "coh_l1",
            MetricName::HeatCurrent => "heat_current",
            MetricName::HeatIntegrated => "heat_integrated",
            MetricName::SigmaZExpect => "sigma_z_expect",
            MetricName::Purity => "purity",
        }
    }

    /// Whether the metric needs the generator output rather than just the state.
    pub fn needs_derivative(self) -> bool {
        matches!(self, MetricName::HeatCurrent | MetricName::HeatIntegrated)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for MetricName {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, MetricsError> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| MetricsError::UnknownMetric(s.to_string()))
    }
}

/// A metric evaluated on the reduced state of a set of sites.
///
/// The column key is the bare metric name for the central spin and
/// `name@i,j,...` otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observable {
    pub metric: MetricName,
    pub sites: Vec<usize>,
}

impl Observable {
    pub fn central(metric: MetricName) -> Self {
        Self { metric, sites: vec![1] }
    }

    pub fn on_sites(metric: MetricName, sites: &[usize]) -> Self {
        let mut sites = sites.to_vec();
        sites.sort_unstable();
        sites.dedup();
        Self { metric, sites }
    }

    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl From<MetricName> for Observable {
    fn from(metric: MetricName) -> Self {
        Observable::central(metric)
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sites == [1] {
            write!(f, "{}", self.metric)
        } else {
            let sites: Vec<String> = self.sites.iter().map(|s| s.to_string()).collect();
            write!(f, "{}@{}", self.metric, sites.join(","))
        }
    }
}

impl FromStr for Observable {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, MetricsError> {
        match s.split_once('@') {
            None => Ok(Observable::central(s.trim().parse()?)),
            Some((name, sites)) => {
                let sites: Result<Vec<usize>, _> = sites.split(',').map(|x| x.trim().parse()).collect();
                let sites = sites.map_err(|_| MetricsError::UnknownMetric(s.to_string()))?;
                if sites.is_empty() || sites.contains(&0) {
                    return Err(MetricsError::UnknownMetric(s.to_string()));
                }
                Ok(Observable::on_sites(name.trim().parse()?, &sites))
            }
        }
    }
}

impl Serialize for Observable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Observable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn clipped(values: Vec<f64>) -> Result<Vec<f64>, MetricsError> {
    values
        .into_iter()
        .map(|v| {
            if v >= 0.0 {
                Ok(v)
            } else if v >= -CLIP_TOL {
                Ok(0.0)
            } else {
                Err(MetricsError::NegativeEigenvalue(v))
            }
        })
        .collect()
}

fn xlog2x(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64, MetricsError> {
    let (vals, _) = hermitian_eig(rho.matrix())?;
    Ok(-clipped(vals)?.into_iter().map(xlog2x).sum::<f64>())
}

/// `S(ρ‖σ) = tr[ρ log₂ρ] − tr[ρ log₂σ]`; `+∞` when `supp ρ ⊄ supp σ`.
pub fn relative_entropy(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, MetricsError> {
    if rho.dim() != sigma.dim() {
        return Err(MetricsError::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let (p, v) = hermitian_eig(rho.matrix())?;
    let (q, w) = hermitian_eig(sigma.matrix())?;
    let p = clipped(p)?;
    let q = clipped(q)?;
    let n = rho.dim();
    let mut cross = 0.0;
    for (j, &qj) in q.iter().enumerate() {
        // ⟨w_j|ρ|w_j⟩ = Σ_i p_i |⟨v_i|w_j⟩|²
        let mut weight = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            let overlap: C64 = (0..n).map(|k| v[(k, i)].conj() * w[(k, j)]).sum();
            weight += pi * overlap.norm_sqr();
        }
        if qj == 0.0 {
            if weight > SUPPORT_TOL {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        cross += weight * qj.log2();
    }
    let self_term: f64 = p.iter().copied().map(xlog2x).sum();
    Ok((self_term - cross).max(0.0))
}

/// `½ tr|ρ − σ|`, half the sum of absolute eigenvalues of the difference.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, MetricsError> {
    if rho.dim() != sigma.dim() {
        return Err(MetricsError::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let diff = rho.matrix() - sigma.matrix();
    let (vals, _) = hermitian_eig(&diff)?;
    Ok(0.5 * vals.iter().map(|v| v.abs()).sum::<f64>())
}

/// Sum of the moduli of all off-diagonal entries.
pub fn coherence_l1(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    let n = m.dim();
    let mut total = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                total += m[(r, c)].norm();
            }
        }
    }
    total
}

/// `S(ρ‖ρ_d) = S(ρ_d) − S(ρ)` with `ρ_d` the diagonal part of `ρ`.
pub fn coherence_rel_entropy(rho: &DensityMatrix) -> Result<f64, MetricsError> {
    let diag_entropy: f64 = -clipped(rho.matrix().diagonal().iter().map(|z| z.re).collect())?
        .into_iter()
        .map(xlog2x)
        .sum::<f64>();
    Ok((diag_entropy - von_neumann_entropy(rho)?).max(0.0))
}

/// `Σ_{i∈sites} ⟨σ_z^{(i)}⟩` read off the diagonal of a reduced matrix over those sites.
pub fn sigma_z_sum(reduced: &ComplexMatrix) -> f64 {
    let n = reduced.dim();
    let k = n.trailing_zeros() as i64;
    (0..n)
        .map(|x| reduced[(x, x)].re * (k - 2 * x.count_ones() as i64) as f64)
        .sum()
}

/// `J = tr(H_s · dρ_s/dt)` with `H_s = (ω/2)σ_z` on the central spin.
///
/// The time derivative is the generator applied to the full state, traced
/// down to the central spin. The value is the same whether `rho_full` and
/// `generator` are given in the lab or the co-rotating frame, since `H_s`
/// commutes with the frame change.
pub fn heat_current(omega: f64, rho_full: &DensityMatrix, generator: &Liouvillian) -> Result<f64, MetricsError> {
    heat_current_on(omega, &[1], rho_full.matrix(), generator)
}

pub(crate) fn heat_current_on(
    omega: f64,
    sites: &[usize],
    rho_full: &ComplexMatrix,
    generator: &Liouvillian,
) -> Result<f64, MetricsError> {
    if rho_full.dim() != generator.dim() {
        return Err(MetricsError::DimensionMismatch(rho_full.dim(), generator.dim()));
    }
    let mut deriv = vec![C64::new(0.0, 0.0); generator.dim() * generator.dim()];
    generator.apply(rho_full.as_slice(), &mut deriv);
    let deriv = ComplexMatrix::from_vec(generator.dim(), deriv)?;
    let reduced = partial_trace_matrix(&deriv, sites, generator.n_spins())?;
    Ok(0.5 * omega * sigma_z_sum(&reduced))
}

/// `Q(t) = ∫₀ᵗ J dτ` by the trapezoidal rule on the sample grid.
pub fn integrate_heat(series: &TimeSeries) -> Result<TimeSeries, MetricsError> {
    let key = MetricName::HeatCurrent.key();
    let current = series
        .column(key)
        .ok_or_else(|| MetricsError::MissingColumn(key.to_string()))?;
    let q = trapezoid_cumulative(series.times(), current);
    let mut out = TimeSeries::new(vec![MetricName::HeatIntegrated.key().to_string()]);
    for (&t, &v) in series.times().iter().zip(&q) {
        out.push(t, &[v]).expect("times inherited from a valid series");
    }
    Ok(out)
}

pub(crate) fn trapezoid_cumulative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(values.len());
    for k in 0..values.len() {
        if k > 0 {
            acc += 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
        }
        out.push(acc);
    }
    out
}

/// `E_c = tr(H_s(ρ_fin − ρ_int))` for the central spin.
pub fn erasure_cost(omega: f64, rho_initial: &DensityMatrix, rho_final: &DensityMatrix) -> Result<f64, MetricsError> {
    for rho in [rho_initial, rho_final] {
        if rho.dim() != 2 {
            return Err(MetricsError::DimensionMismatch(rho.dim(), 2));
        }
    }
    Ok(0.5 * omega * (sigma_z_sum(rho_final.matrix()) - sigma_z_sum(rho_initial.matrix())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{thermal_populations, thermal_state};

    fn diag(p: &[f64]) -> DensityMatrix {
        DensityMatrix::try_new(ComplexMatrix::from_diagonal(p)).unwrap()
    }

    fn qubit(a: f64, re: f64, im: f64) -> DensityMatrix {
        let m = ComplexMatrix::from_rows(&[
            &[C64::new(a, 0.0), C64::new(re, im)],
            &[C64::new(re, -im), C64::new(1.0 - a, 0.0)],
        ]);
        DensityMatrix::try_new(m).unwrap()
    }

    #[test]
    fn relative_entropy_examples() {
        let rho = qubit(0.3, 0.1, -0.2);
        assert!(relative_entropy(&rho, &rho).unwrap().abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((relative_entropy(&DensityMatrix::plus(), &mixed).unwrap() - 1.0).abs() < 1e-12);
        let (p0, p1) = thermal_populations(1.0, 0.4);
        let expected = p0 * (2.0 * p0).log2() + p1 * (2.0 * p1).log2();
        let s = relative_entropy(&thermal_state(1.0, 0.4).unwrap(), &mixed).unwrap();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.612_586).abs() < 1e-6);
    }

    #[test]
    fn relative_entropy_support_violation() {
        let s = relative_entropy(&DensityMatrix::plus(), &diag(&[1.0, 0.0])).unwrap();
        assert_eq!(s, f64::INFINITY);
        // supp ρ ⊆ supp σ even though σ is singular
        let s = relative_entropy(&diag(&[1.0, 0.0]), &diag(&[1.0, 0.0])).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn trace_distance_examples() {
        let rho = qubit(0.3, 0.1, -0.2);
        assert!(trace_distance(&rho, &rho).unwrap() < 1e-15);
        assert!((trace_distance(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((trace_distance(&diag(&[0.6, 0.4]), &diag(&[0.5, 0.5])).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn coherence_examples() {
        assert!((coherence_l1(&DensityMatrix::plus()) - 1.0).abs() < 1e-15);
        assert_eq!(coherence_l1(&diag(&[0.2, 0.8])), 0.0);
        assert!((coherence_l1(&qubit(0.5, 0.25, 0.0)) - 0.5).abs() < 1e-15);

        assert!((coherence_rel_entropy(&DensityMatrix::plus()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(coherence_rel_entropy(&diag(&[0.2, 0.8])).unwrap(), 0.0);
        // eigenvalues {0.75, 0.25}: 1 − H₂(0.25)
        let h = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        let c = coherence_rel_entropy(&qubit(0.5, 0.25, 0.0)).unwrap();
        assert!((c - (1.0 - h)).abs() < 1e-12);
        assert!((c - 0.188_722).abs() < 1e-6);
    }

    #[test]
    fn erasure_cost_examples() {
        let th = thermal_state(1.0, 0.4).unwrap();
        let plus = DensityMatrix::plus();
        let ec = erasure_cost(1.0, &plus, &th).unwrap();
        assert!((ec + 0.5 * 1.25f64.tanh()).abs() < 1e-14);
        assert!((ec + 0.424_142).abs() < 1e-6);
        assert_eq!(erasure_cost(1.0, &plus, &plus).unwrap(), 0.0);
        assert_eq!(erasure_cost(1.0, &th, &th).unwrap(), 0.0);
        assert!(erasure_cost(1.0, &DensityMatrix::maximally_mixed(4), &th).is_err());
    }

    #[test]
    fn negative_eigenvalues_are_faults() {
        let bad = DensityMatrix::from_matrix_unchecked(ComplexMatrix::from_diagonal(&[1.0 + 1e-6, -1e-6]));
        assert!(matches!(von_neumann_entropy(&bad), Err(MetricsError::NegativeEigenvalue(_))));
        let tiny = DensityMatrix::from_matrix_unchecked(ComplexMatrix::from_diagonal(&[1.0 + 1e-12, -1e-12]));
        assert!(von_neumann_entropy(&tiny).unwrap().abs() < 1e-9);
    }

    #[test]
    fn observable_keys() {
        let o: Observable = "coh_l1".parse().unwrap();
        assert_eq!(o, Observable::central(MetricName::CohL1));
        let o: Observable = "purity@3,2".parse().unwrap();
        assert_eq!(o.sites, vec![2, 3]);
        assert_eq!(o.to_string(), "purity@2,3");
        assert!("nope".parse::<Observable>().is_err());
        assert!("purity@".parse::<Observable>().is_err());
        assert!("purity@0".parse::<Observable>().is_err());
        for m in MetricName::ALL {
            assert_eq!(m.key().parse::<MetricName>().unwrap(), m);
        }
    }

    #[test]
    fn trapezoid_constant_and_sine() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.5).collect();
        let q = trapezoid_cumulative(&times, &vec![0.3; times.len()]);
        for (t, v) in times.iter().zip(&q) {
            assert!((v - 0.3 * t).abs() < 1e-12);
        }
        let dt = 1e-3;
        let times: Vec<f64> = (0..=3000).map(|k| k as f64 * dt).collect();
        let j: Vec<f64> = times.iter().map(|t| t.sin()).collect();
        let q = trapezoid_cumulative(&times, &j);
        for (t, v) in times.iter().zip(&q) {
            // trapezoid error bound (t/12) dt² max|sin''|
            assert!((v - (1.0 - t.cos())).abs() <= t / 12.0 * dt * dt + 1e-14);
        }
    }
}
