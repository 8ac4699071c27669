//! Physical specification of a spin-star cluster: Hamiltonian, dissipators and states.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{embed, pauli, site_bit, Axis, ComplexMatrix, DensityMatrix, SparseOperator, C64};
use crate::topology::{BufferGraph, TopologyError};

/// Largest register (central plus buffer spins) accepted by default.
pub const MAX_SPINS: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{0} spins exceed the supported maximum of {MAX_SPINS}")]
    TooManySpins(usize),
    #[error("graph has {graph} buffer vertices but the spec has {spec}")]
    GraphSizeMismatch { graph: usize, spec: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// How the `Σ_{i≠j}` over coupled pairs is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairConvention {
    /// Each coupled pair contributes once with strength `g`.
    UnorderedOnce,
    /// Both orderings `(i,j)` and `(j,i)` contribute, doubling the effective coupling.
    OrderedDouble,
}

impl PairConvention {
    pub fn multiplicity(self) -> f64 {
        match self {
            PairConvention::UnorderedOnce => 1.0,
            PairConvention::OrderedDouble => 2.0,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            PairConvention::UnorderedOnce => "unordered_once",
            PairConvention::OrderedDouble => "ordered_double",
        }
    }
}

impl fmt::Display for PairConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for PairConvention {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "unordered_once" | "once" => Ok(PairConvention::UnorderedOnce),
            "ordered_double" | "double" => Ok(PairConvention::OrderedDouble),
            other => Err(ModelError::InvalidParameter(format!("pair convention `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChannel {
    Thermal,
    Dephasing,
}

impl FromStr for NoiseChannel {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "thermal" => Ok(NoiseChannel::Thermal),
            "dephasing" => Ok(NoiseChannel::Dephasing),
            other => Err(ModelError::InvalidParameter(format!("noise channel `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseChannel::Thermal => "thermal",
            NoiseChannel::Dephasing => "dephasing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub channel: NoiseChannel,
    /// Bath temperature with `k_B = 1`; also fixes the thermal reference state.
    pub temperature: f64,
    /// Thermal dissipation rate.
    pub gamma: f64,
    /// Pure-dephasing rate.
    pub gamma_d: f64,
}

impl NoiseSpec {
    pub fn thermal(temperature: f64, gamma: f64) -> Self {
        Self {
            channel: NoiseChannel::Thermal,
            temperature,
            gamma,
            gamma_d: 0.0,
        }
    }

    pub fn dephasing(temperature: f64, gamma_d: f64) -> Self {
        Self {
            channel: NoiseChannel::Dephasing,
            temperature,
            gamma: 0.0,
            gamma_d,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        for (name, rate) in [("gamma", self.gamma), ("gamma_d", self.gamma_d)] {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(ModelError::InvalidParameter(format!("{name} = {rate} must be finite and >= 0")));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "temperature = {} must be > 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferInit {
    Thermal,
    MaxCoherent,
}

impl FromStr for BufferInit {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "thermal" => Ok(BufferInit::Thermal),
            "max_coherent" | "max-coherent" => Ok(BufferInit::MaxCoherent),
            other => Err(ModelError::InvalidParameter(format!("initial buffer state `{other}`"))),
        }
    }
}

impl fmt::Display for BufferInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BufferInit::Thermal => "thermal",
            BufferInit::MaxCoherent => "max_coherent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralInit {
    #[default]
    MaxCoherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_buffer: usize,
    pub omega: f64,
    pub graph: BufferGraph,
    pub g: f64,
    pub pair_convention: PairConvention,
    pub noise: NoiseSpec,
    pub initial_buffer: BufferInit,
    #[serde(default)]
    pub initial_central: CentralInit,
    /// Attach the bath to the central spin as well. Only used by the
    /// single-spin reference rig; the cluster model keeps the centre isolated.
    #[serde(default)]
    pub bath_on_central: bool,
}

impl ClusterSpec {
    /// Cluster with the default physical parameters `ω = 1, g = 0.002, γ = 0.0005, T = 0.4`.
    pub fn new(graph: BufferGraph) -> Self {
        Self {
            n_buffer: graph.n_buffer(),
            omega: 1.0,
            graph,
            g: 0.002,
            pair_convention: PairConvention::UnorderedOnce,
            noise: NoiseSpec::thermal(0.4, 0.0005),
            initial_buffer: BufferInit::Thermal,
            initial_central: CentralInit::MaxCoherent,
            bath_on_central: false,
        }
    }

    /// A lone spin in direct contact with the bath.
    pub fn single_spin_rig(omega: f64, noise: NoiseSpec) -> Self {
        Self {
            n_buffer: 0,
            omega,
            graph: BufferGraph::empty(0).expect("empty graph"),
            g: 0.0,
            pair_convention: PairConvention::UnorderedOnce,
            noise,
            initial_buffer: BufferInit::Thermal,
            initial_central: CentralInit::MaxCoherent,
            bath_on_central: true,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_buffer + 1
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("omega = {} must be > 0", self.omega)));
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("g = {} must be >= 0", self.g)));
        }
        if self.n_spins() > MAX_SPINS {
            return Err(ModelError::TooManySpins(self.n_spins()));
        }
        if self.graph.n_buffer() != self.n_buffer {
            return Err(ModelError::GraphSizeMismatch {
                graph: self.graph.n_buffer(),
                spec: self.n_buffer,
            });
        }
        self.graph.validate_planar()?;
        self.noise.validate()
    }

    /// Strength multiplying `σ_xσ_x + σ_yσ_y` for every coupled pair.
    pub fn pair_strength(&self) -> f64 {
        self.g * self.pair_convention.multiplicity()
    }

    /// Coupled pairs as 1-based site labels: the star bonds `(1, j)` followed by the buffer edges.
    pub fn coupled_pairs(&self) -> Vec<(usize, usize)> {
        (2..=self.n_buffer + 1)
            .map(|j| (1, j))
            .chain(self.graph.edges())
            .collect()
    }

    /// Sites attached to the bath.
    pub fn dissipative_sites(&self) -> Vec<usize> {
        let first = if self.bath_on_central { 1 } else { 2 };
        (first..=self.n_buffer + 1).collect()
    }
}

/// Mean thermal occupation `1/(e^{ω/T} − 1)`.
pub fn planck_occupation(omega: f64, temperature: f64) -> f64 {
    1.0 / (omega / temperature).exp_m1()
}

/// Energy of basis state `index` under `Σ (ω/2) σ_z^{(i)}`.
pub fn free_energy(index: usize, n_spins: usize, omega: f64) -> f64 {
    let excited_down = index.count_ones() as f64;
    0.5 * omega * (n_spins as f64 - 2.0 * excited_down)
}

/// Hamiltonian as a sparse operator. With `include_free = false` only the
/// exchange part is kept, which is the generator in the frame co-rotating with
/// `Σ (ω/2) σ_z^{(i)}`.
pub fn hamiltonian_operator(spec: &ClusterSpec, include_free: bool) -> SparseOperator {
    let n = spec.n_spins();
    let dim = spec.dim();
    let flip = C64::new(2.0 * spec.pair_strength(), 0.0);
    let masks: Vec<(usize, usize)> = spec
        .coupled_pairs()
        .into_iter()
        .map(|(i, j)| (site_bit(i, n), site_bit(j, n)))
        .collect();
    let mut triplets = Vec::new();
    for x in 0..dim {
        if include_free {
            triplets.push((x, x, C64::new(free_energy(x, n, spec.omega), 0.0)));
        }
        if spec.pair_strength() == 0.0 {
            continue;
        }
        // σxσx + σyσy = 2(σ⁺σ⁻ + σ⁻σ⁺): swaps antiparallel pairs with amplitude 2.
        for &(bi, bj) in &masks {
            if (x >> bi & 1) != (x >> bj & 1) {
                triplets.push((x ^ (1 << bi | 1 << bj), x, flip));
            }
        }
    }
    SparseOperator::from_triplets(dim, triplets)
}

/// Dense Hamiltonian
/// `H = Σ_i (ω/2) σ_z^{(i)} + Σ_pairs g_eff (σ_x^{(i)}σ_x^{(j)} + σ_y^{(i)}σ_y^{(j)})`,
/// built from embedded Pauli operators.
pub fn build_hamiltonian(spec: &ClusterSpec) -> Result<ComplexMatrix, ModelError> {
    spec.validate()?;
    let n = spec.n_spins();
    let emb = |axis, site| embed(&pauli(axis), site, n).expect("site within register");
    let mut h = ComplexMatrix::zeros(spec.dim());
    for site in 1..=n {
        h = &h + &emb(Axis::Z, site).scale_real(0.5 * spec.omega);
    }
    let strength = spec.pair_strength();
    for (i, j) in spec.coupled_pairs() {
        let xx = &emb(Axis::X, i) * &emb(Axis::X, j);
        let yy = &emb(Axis::Y, i) * &emb(Axis::Y, j);
        h = &h + &(&xx + &yy).scale_real(strength);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpKind {
    Lower,
    Raise,
    Dephase,
}

/// One Lindblad channel `rate · (J ρ J† − ½{J†J, ρ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladTerm {
    pub site: usize,
    pub kind: JumpKind,
    pub jump: SparseOperator,
    pub rate: f64,
}

/// Local bath channels on every dissipative site.
///
/// Thermal: `σ⁻` at `γ(1+n)` and `σ⁺` at `γn`. Dephasing: `σ_z` at `γ_d`,
/// giving `γ_d(σ_z ρ σ_z − ρ)` per site.
pub fn build_dissipator_terms(spec: &ClusterSpec) -> Vec<LindbladTerm> {
    let n = spec.n_spins();
    let term = |site, kind, axis, rate| LindbladTerm {
        site,
        kind,
        jump: SparseOperator::from_dense(&embed(&pauli(axis), site, n).expect("site within register")),
        rate,
    };
    let mut terms = Vec::new();
    for site in spec.dissipative_sites() {
        match spec.noise.channel {
            NoiseChannel::Thermal => {
                let occ = planck_occupation(spec.omega, spec.noise.temperature);
                terms.push(term(site, JumpKind::Lower, Axis::Minus, spec.noise.gamma * (1.0 + occ)));
                terms.push(term(site, JumpKind::Raise, Axis::Plus, spec.noise.gamma * occ));
            }
            NoiseChannel::Dephasing => {
                terms.push(term(site, JumpKind::Dephase, Axis::Z, spec.noise.gamma_d));
            }
        }
    }
    terms
}

/// Populations `(p₀, p₁)` of `e^{−ωσ_z/2T}/Z`.
pub fn thermal_populations(omega: f64, temperature: f64) -> (f64, f64) {
    let p0 = 1.0 / (1.0 + (omega / temperature).exp());
    (p0, 1.0 - p0)
}

/// `e^{−β ω σ_z / 2} / Z` with `Z = 2 cosh(βω/2)`.
pub fn thermal_state(omega: f64, temperature: f64) -> Result<DensityMatrix, ModelError> {
    if !(temperature > 0.0) {
        return Err(ModelError::InvalidParameter(format!("temperature = {temperature} must be > 0")));
    }
    let (p0, p1) = thermal_populations(omega, temperature);
    Ok(DensityMatrix::from_matrix_unchecked(ComplexMatrix::from_diagonal(&[p0, p1])))
}

/// `|+⟩⟨+|` on the central spin tensored with the chosen buffer state on every buffer spin.
pub fn initial_state(spec: &ClusterSpec) -> Result<DensityMatrix, ModelError> {
    let buffer = match spec.initial_buffer {
        BufferInit::Thermal => thermal_state(spec.omega, spec.noise.temperature)?,
        BufferInit::MaxCoherent => DensityMatrix::plus(),
    };
    let mut rho = DensityMatrix::plus();
    for _ in 0..spec.n_buffer {
        rho = rho.kron(&buffer);
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{hermitian_eig, partial_trace};
    use crate::topology::{extreme_geometry, Extreme};

    fn pair_spec(g: f64, convention: PairConvention) -> ClusterSpec {
        let mut spec = ClusterSpec::new(BufferGraph::empty(1).unwrap());
        spec.g = g;
        spec.pair_convention = convention;
        spec
    }

    #[test]
    fn single_spin_hamiltonian() {
        let spec = ClusterSpec::single_spin_rig(1.0, NoiseSpec::thermal(0.4, 0.0));
        let h = build_hamiltonian(&spec).unwrap();
        assert_eq!(h, pauli(Axis::Z).scale_real(0.5));
    }

    #[test]
    fn noninteracting_pair_spectrum() {
        let h = build_hamiltonian(&pair_spec(0.0, PairConvention::UnorderedOnce)).unwrap();
        let (vals, _) = hermitian_eig(&h).unwrap();
        let expected = [-1.0, 0.0, 0.0, 1.0];
        for (v, e) in vals.iter().zip(expected) {
            assert!((v - e).abs() < 1e-14);
        }
    }

    #[test]
    fn flip_flop_gap() {
        let h = build_hamiltonian(&pair_spec(0.002, PairConvention::UnorderedOnce)).unwrap();
        let (vals, _) = hermitian_eig(&h).unwrap();
        // single-excitation block: [[0, 2g], [2g, 0]]
        assert!((vals[2] - vals[1] - 0.008).abs() < 1e-12);
        let h2 = build_hamiltonian(&pair_spec(0.002, PairConvention::OrderedDouble)).unwrap();
        let h4 = build_hamiltonian(&pair_spec(0.004, PairConvention::UnorderedOnce)).unwrap();
        assert!(h2.max_abs_diff(&h4) < 1e-15);
    }

    #[test]
    fn sparse_and_dense_hamiltonians_agree() {
        let mut spec = ClusterSpec::new(extreme_geometry(4, Extreme::Maximal).unwrap());
        spec.pair_convention = PairConvention::OrderedDouble;
        let dense = build_hamiltonian(&spec).unwrap();
        let sparse = hamiltonian_operator(&spec, true).to_dense();
        assert!(dense.max_abs_diff(&sparse) < 1e-15);
    }

    #[test]
    fn dissipator_term_counts() {
        let spec = ClusterSpec::new(BufferGraph::empty(4).unwrap());
        assert_eq!(build_dissipator_terms(&spec).len(), 8);
        assert!(build_dissipator_terms(&spec).iter().all(|t| t.site != 1));
        let mut deph = ClusterSpec::new(BufferGraph::empty(3).unwrap());
        deph.noise = NoiseSpec::dephasing(0.4, 0.00059);
        let terms = build_dissipator_terms(&deph);
        assert_eq!(terms.len(), 3);
        assert!(terms.iter().all(|t| t.rate == 0.00059 && t.kind == JumpKind::Dephase));
    }

    #[test]
    fn planck_value() {
        // 1/(e^{2.5} − 1)
        assert!((planck_occupation(1.0, 0.4) - 0.089_425_490).abs() < 1e-8);
    }

    #[test]
    fn thermal_state_values() {
        let th = thermal_state(1.0, 0.4).unwrap();
        assert!((th.matrix()[(0, 0)].re - 0.075858).abs() < 1e-6);
        assert!((th.matrix()[(1, 1)].re - 0.924142).abs() < 1e-6);
        let sz = th.expectation(&pauli(Axis::Z)).re;
        assert!((sz + 1.25f64.tanh()).abs() < 1e-14);
        assert!((sz + 0.848284).abs() < 1e-6);
        let hot = thermal_state(1.0, f64::INFINITY).unwrap();
        assert_eq!(hot, DensityMatrix::maximally_mixed(2));
        assert!(thermal_state(1.0, 0.0).is_err());
        assert!(thermal_state(1.0, -1.0).is_err());
    }

    #[test]
    fn initial_states() {
        let single = ClusterSpec::single_spin_rig(1.0, NoiseSpec::thermal(0.4, 0.0005));
        let rho = initial_state(&single).unwrap();
        assert!(rho.matrix().as_slice().iter().all(|z| (z.re - 0.5).abs() < 1e-15 && z.im == 0.0));

        let one = ClusterSpec::new(BufferGraph::empty(1).unwrap());
        let rho = initial_state(&one).unwrap();
        let buffer = partial_trace(&rho, &[2], 2).unwrap();
        assert!(buffer.matrix().max_abs_diff(thermal_state(1.0, 0.4).unwrap().matrix()) < 1e-15);

        let two = ClusterSpec::new(BufferGraph::empty(2).unwrap());
        let rho = initial_state(&two).unwrap();
        // |+⟩⟨+| is pure, so purity is (p₀² + p₁²)²
        let (p0, p1) = thermal_populations(1.0, 0.4);
        let expected = (p0 * p0 + p1 * p1).powi(2);
        assert!((rho.purity() - expected).abs() < 1e-14);
        assert!((rho.purity() - 0.739_243).abs() < 1e-6);
    }

    #[test]
    fn spec_validation() {
        let mut spec = ClusterSpec::new(BufferGraph::empty(3).unwrap());
        assert!(spec.validate().is_ok());
        spec.g = -1.0;
        assert!(spec.validate().is_err());
        spec.g = 0.002;
        spec.omega = 0.0;
        assert!(spec.validate().is_err());
        spec.omega = 1.0;
        spec.n_buffer = 4;
        assert!(matches!(spec.validate(), Err(ModelError::GraphSizeMismatch { .. })));
        let mut k5 = ClusterSpec::new(BufferGraph::complete(5).unwrap());
        assert!(k5.validate().is_err());
        k5.graph = BufferGraph::empty(5).unwrap();
        k5.noise.temperature = 0.0;
        assert!(k5.validate().is_err());
    }
}
