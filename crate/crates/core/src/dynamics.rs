//! Fixed-step integration of the Lindblad master equation.
//!
//! The generator is applied directly from sparse operator lists,
//! `dρ/dt = Aρ + ρA† + Σ_k r_k J_k ρ J_k†` with `A = −iH − ½ Σ_k r_k J_k†J_k`,
//! so no superoperator is ever formed. In the co-rotating frame the free part
//! `Σ (ω/2) σ_z` is dropped from `H`; this is exact because it commutes with
//! the exchange coupling and the local baths are covariant under it.

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    self, coherence_l1, coherence_rel_entropy, relative_entropy, sigma_z_sum, trace_distance, MetricName, MetricsError,
    Observable,
};
use crate::model::{
    build_dissipator_terms, hamiltonian_operator, initial_state, thermal_state, ClusterSpec, LindbladTerm, ModelError,
};
use crate::qstate::{hermitian_eig, partial_trace_matrix, ComplexMatrix, DensityMatrix, QStateError, SparseOperator, C64};

pub const TRACE_DRIFT_LIMIT: f64 = 1e-8;
pub const HERMITICITY_DRIFT_LIMIT: f64 = 1e-9;
pub const POSITIVITY_LIMIT: f64 = -1e-7;

/// Largest `dt × frequency` accepted for the fastest retained scale.
pub const RESOLUTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("{quantity} = {value:e} breached its limit {limit:e} at t = {t}")]
    ToleranceBreach {
        quantity: &'static str,
        value: f64,
        limit: f64,
        t: f64,
    },
    #[error("jump operator on site {0} is not monomial")]
    UnsupportedJump(usize),
    #[error("time series: {0}")]
    Series(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    QState(#[from] QStateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    Rotating,
}

impl FromStr for Frame {
    type Err = DynamicsError;
    fn from_str(s: &str) -> Result<Self, DynamicsError> {
        match s {
            "lab" => Ok(Frame::Lab),
            "rotating" => Ok(Frame::Rotating),
            other => Err(DynamicsError::Config(format!("unknown frame `{other}`"))),
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Lab => "lab",
            Frame::Rotating => "rotating",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Rk4Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    pub sample_every: f64,
    pub frame: Frame,
    #[serde(default)]
    pub scheme: Scheme,
    /// Diagonalize the full state at every sample and fail on negative eigenvalues.
    #[serde(default)]
    pub check_positivity: bool,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_max: f64, sample_every: f64, frame: Frame) -> Result<Self, DynamicsError> {
        let cfg = Self {
            dt,
            t_max,
            sample_every,
            frame,
            scheme: Scheme::Rk4Fixed,
            check_positivity: false,
        };
        cfg.check_grid()?;
        Ok(cfg)
    }

    /// Default co-rotating configuration: `dt = 1`, samples every 10 time units.
    pub fn rotating(t_max: f64) -> Self {
        Self::new(1.0, t_max, 10.0, Frame::Rotating).expect("default grid is valid")
    }

    /// Co-rotating configuration with the largest step from [`ROTATING_STEPS`]
    /// that passes [`validate_for`](Self::validate_for) and keeps `dt` times the
    /// fastest rotating-frame rate within [`STEP_BUDGET`].
    pub fn rotating_for(spec: &ClusterSpec, t_max: f64) -> Result<Self, DynamicsError> {
        let rate = rotating_rate_bound(spec);
        let mut last = None;
        for dt in ROTATING_STEPS {
            let cfg = Self::new(dt, t_max, 10.0, Frame::Rotating)?;
            match cfg.validate_for(spec) {
                Ok(()) if dt * rate <= STEP_BUDGET => return Ok(cfg),
                Ok(()) => last = Some(Ok(cfg)),
                Err(e) => last = Some(Err(e)),
            }
        }
        last.expect("step list is not empty")
    }

    pub fn with_positivity_check(mut self) -> Self {
        self.check_positivity = true;
        self
    }

    fn check_grid(&self) -> Result<(), DynamicsError> {
        let finite = self.dt.is_finite() && self.sample_every.is_finite() && self.t_max.is_finite();
        if !(finite && 0.0 < self.dt && self.dt <= self.sample_every && self.sample_every <= self.t_max) {
            return Err(DynamicsError::Config(format!(
                "need 0 < dt ({}) <= sample_every ({}) <= t_max ({})",
                self.dt, self.sample_every, self.t_max
            )));
        }
        let ratio = self.sample_every / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(DynamicsError::Config(format!(
                "sample_every ({}) must be a whole number of steps of dt ({})",
                self.sample_every, self.dt
            )));
        }
        Ok(())
    }

    /// Checks the grid and that `dt` resolves the fastest frequency kept in the chosen frame.
    pub fn validate_for(&self, spec: &ClusterSpec) -> Result<(), DynamicsError> {
        self.check_grid()?;
        let fastest_rate = build_dissipator_terms(spec).iter().map(|t| t.rate).fold(0.0, f64::max);
        let (scale, label) = match self.frame {
            Frame::Lab => (spec.omega.max(spec.g), "omega"),
            Frame::Rotating => (spec.g, "g"),
        };
        for (freq, what) in [(scale, label), (fastest_rate, "largest dissipation rate")] {
            if freq > 0.0 && self.dt * freq > RESOLUTION {
                return Err(DynamicsError::Config(format!(
                    "dt = {} does not resolve {what} = {freq}: need dt <= {}",
                    self.dt,
                    RESOLUTION / freq
                )));
            }
        }
        Ok(())
    }

    pub fn steps_per_sample(&self) -> u64 {
        (self.sample_every / self.dt).round() as u64
    }

    pub fn sample_count(&self) -> u64 {
        (self.t_max / self.sample_every * (1.0 + 1e-12)).floor() as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.sample_count() * self.steps_per_sample()
    }
}

/// Candidate steps for [`IntegratorConfig::rotating_for`]; all divide the 10-unit sampling interval.
pub const ROTATING_STEPS: [f64; 5] = [1.0, 0.5, 0.25, 0.2, 0.1];

/// Bound on `dt · rate` used to pick a rotating-frame step. At the default
/// parameters it keeps the step-halving change of every metric below 1e-8 at t = 1000.
pub const STEP_BUDGET: f64 = 0.05;

/// Upper estimate of the fastest rate in the co-rotating generator: the
/// exchange hopping norm `2 g_eff · max degree` plus half the summed jump rates.
pub fn rotating_rate_bound(spec: &ClusterSpec) -> f64 {
    let mut degree = vec![0usize; spec.n_spins() + 1];
    for (i, j) in spec.coupled_pairs() {
        degree[i] += 1;
        degree[j] += 1;
    }
    let max_degree = degree.into_iter().max().unwrap_or(0) as f64;
    let jumps: f64 = build_dissipator_terms(spec).iter().map(|t| t.rate).sum();
    2.0 * spec.pair_strength() * max_degree + 0.5 * jumps
}

/// Scalar observables on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(names: Vec<String>) -> Self {
        let columns = vec![Vec::new(); names.len()];
        Self {
            times: Vec::new(),
            names,
            columns,
        }
    }

    pub fn push(&mut self, t: f64, values: &[f64]) -> Result<(), DynamicsError> {
        if values.len() != self.names.len() {
            return Err(DynamicsError::Series(format!(
                "expected {} values, got {}",
                self.names.len(),
                values.len()
            )));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(DynamicsError::Series(format!("time {t} does not follow {last}")));
            }
        }
        self.times.push(t);
        for (col, &v) in self.columns.iter_mut().zip(values) {
            col.push(v);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
    }

    /// Adds the columns of `other`, which must share this grid.
    pub fn merge(&mut self, other: &TimeSeries) -> Result<(), DynamicsError> {
        if other.times != self.times {
            return Err(DynamicsError::Series("time grids differ".into()));
        }
        for (name, col) in other.names.iter().zip(&other.columns) {
            if self.column(name).is_some() {
                return Err(DynamicsError::Series(format!("duplicate column `{name}`")));
            }
            self.names.push(name.clone());
            self.columns.push(col.clone());
        }
        Ok(())
    }

    /// CSV with header `t,<name>,...` and 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format_value(*t));
            for col in &self.columns {
                out.push(',');
                out.push_str(&format_value(col[k]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, DynamicsError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| DynamicsError::Series("empty CSV".into()))?;
        let mut fields = header.split(',');
        if fields.next() != Some("t") {
            return Err(DynamicsError::Series("first column must be `t`".into()));
        }
        let mut series = TimeSeries::new(fields.map(str::to_string).collect());
        for (lineno, line) in lines.enumerate() {
            let parsed: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let parsed = parsed.map_err(|e| DynamicsError::Series(format!("row {}: {e}", lineno + 1)))?;
            let (t, values) = parsed
                .split_first()
                .ok_or_else(|| DynamicsError::Series(format!("row {} is empty", lineno + 1)))?;
            series.push(*t, values)?;
        }
        Ok(series)
    }
}

/// Full-precision decimal rendering used by every emitted table.
pub fn format_value(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Jump operator with at most one nonzero per row, pre-scaled by `√rate`.
#[derive(Debug, Clone)]
struct MonomialJump {
    /// `(row, source column, value)`
    entries: Vec<(usize, usize, C64)>,
}

/// Right-hand side of the master equation, in either frame.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    n_spins: usize,
    dim: usize,
    frame: Frame,
    /// `A = −iH − ½ Σ r J†J`
    drift: SparseOperator,
    jumps: Vec<MonomialJump>,
}

impl Liouvillian {
    pub fn new(spec: &ClusterSpec, frame: Frame) -> Result<Self, DynamicsError> {
        spec.validate()?;
        let h = hamiltonian_operator(spec, frame == Frame::Lab);
        let terms = build_dissipator_terms(spec);
        Self::from_parts(spec.n_spins(), frame, &h, &terms)
    }

    pub fn from_parts(
        n_spins: usize,
        frame: Frame,
        hamiltonian: &SparseOperator,
        terms: &[LindbladTerm],
    ) -> Result<Self, DynamicsError> {
        let dim = hamiltonian.dim();
        let mut drift = hamiltonian.scale(C64::new(0.0, -1.0));
        let mut jumps = Vec::new();
        for term in terms.iter().filter(|t| t.rate > 0.0) {
            let decay = term.jump.dagger().mul_sparse(&term.jump);
            drift = drift.add(&decay.scale(C64::new(-0.5 * term.rate, 0.0)));
            let scale = term.rate.sqrt();
            let mut entries = Vec::new();
            for r in 0..dim {
                let mut row = term.jump.row(r);
                if let Some((c, v)) = row.next() {
                    if row.next().is_some() {
                        return Err(DynamicsError::UnsupportedJump(term.site));
                    }
                    entries.push((r, c, v * scale));
                }
            }
            jumps.push(MonomialJump { entries });
        }
        Ok(Self {
            n_spins,
            dim,
            frame,
            drift,
            jumps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    /// Writes `L(ρ)` into `out` (row-major, `dim²` entries).
    pub fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let n = self.dim;
        debug_assert_eq!(rho.len(), n * n);
        debug_assert_eq!(out.len(), n * n);

        // A ρ, row by row
        for r in 0..n {
            let dst = &mut out[r * n..(r + 1) * n];
            dst.fill(C64::new(0.0, 0.0));
            for (k, a) in self.drift.row(r) {
                for (o, x) in dst.iter_mut().zip(&rho[k * n..(k + 1) * n]) {
                    *o += a * x;
                }
            }
        }

        // ρ A†: (ρA†)[r][c] = Σ_k ρ[r][k] conj(A[c][k])
        for c in 0..n {
            let row_c: Vec<(usize, C64)> = self.drift.row(c).map(|(k, a)| (k, a.conj())).collect();
            for r in 0..n {
                let src = &rho[r * n..(r + 1) * n];
                let mut acc = C64::new(0.0, 0.0);
                for &(k, a) in &row_c {
                    acc += src[k] * a;
                }
                out[r * n + c] += acc;
            }
        }

        self.add_jumps(rho, out);
    }

    /// Same as [`apply`](Self::apply) for Hermitian `ρ`, using `ρA† = (Aρ)†`.
    pub fn apply_hermitian(&self, rho: &[C64], out: &mut [C64]) {
        let n = self.dim;
        debug_assert_eq!(rho.len(), n * n);
        debug_assert_eq!(out.len(), n * n);
        for r in 0..n {
            let dst = &mut out[r * n..(r + 1) * n];
            dst.fill(C64::new(0.0, 0.0));
            for (k, a) in self.drift.row(r) {
                for (o, x) in dst.iter_mut().zip(&rho[k * n..(k + 1) * n]) {
                    *o += a * x;
                }
            }
        }
        for r in 0..n {
            out[r * n + r] = C64::new(2.0 * out[r * n + r].re, 0.0);
            for c in r + 1..n {
                let (x, y) = (out[r * n + c], out[c * n + r]);
                out[r * n + c] = x + y.conj();
                out[c * n + r] = y + x.conj();
            }
        }
        self.add_jumps(rho, out);
    }

    /// `out += Σ J ρ J†`
    fn add_jumps(&self, rho: &[C64], out: &mut [C64]) {
        let n = self.dim;
        for jump in &self.jumps {
            for &(a, sa, va) in &jump.entries {
                let src = &rho[sa * n..(sa + 1) * n];
                let dst = &mut out[a * n..(a + 1) * n];
                for &(b, sb, vb) in &jump.entries {
                    dst[b] += va * src[sb] * vb.conj();
                }
            }
        }
    }

    pub fn apply_matrix(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        self.apply(rho.as_slice(), &mut out);
        ComplexMatrix::from_vec(self.dim, out).expect("generator output has the state's shape")
    }
}

/// Phase `e^{i s ω (pop(c) − pop(r)) t}` on entry `(r, c)`: `s = +1` maps lab to
/// co-rotating, `s = −1` maps back.
fn frame_phase(m: &ComplexMatrix, t: f64, omega: f64, sign: f64) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.dim(), |r, c| {
        let shift = c.count_ones() as f64 - r.count_ones() as f64;
        if shift == 0.0 {
            m[(r, c)]
        } else {
            let (s, co) = (sign * omega * shift * t).sin_cos();
            m[(r, c)] * C64::new(co, s)
        }
    })
}

/// `e^{+iH₀t} ρ e^{−iH₀t}` with `H₀ = Σ (ω/2) σ_z^{(i)}`.
pub fn to_rotating_frame(rho: &DensityMatrix, t: f64, omega: f64) -> DensityMatrix {
    DensityMatrix::from_matrix_unchecked(frame_phase(rho.matrix(), t, omega, 1.0))
}

/// Inverse of [`to_rotating_frame`].
pub fn to_lab_frame(rho: &DensityMatrix, t: f64, omega: f64) -> DensityMatrix {
    DensityMatrix::from_matrix_unchecked(frame_phase(rho.matrix(), t, omega, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub steps: u64,
    pub max_trace_drift: f64,
    pub max_hermiticity_drift: f64,
    /// Smallest eigenvalue seen, when positivity checks are enabled.
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub series: TimeSeries,
    /// Full state at the last sample, in the lab frame.
    pub final_state: DensityMatrix,
    pub final_time: f64,
    pub diagnostics: Diagnostics,
}

/// Integrates from `initial_state(spec)` over the whole horizon.
pub fn evolve(
    spec: &ClusterSpec,
    cfg: &IntegratorConfig,
    observables: &[Observable],
) -> Result<Evolution, DynamicsError> {
    evolve_until(spec, cfg, observables, |_, _| ControlFlow::Continue(()))
}

/// Like [`evolve`], but `observer` sees every sample `(t, values)` and may stop the run early.
pub fn evolve_until(
    spec: &ClusterSpec,
    cfg: &IntegratorConfig,
    observables: &[Observable],
    observer: impl FnMut(f64, &[f64]) -> ControlFlow<()>,
) -> Result<Evolution, DynamicsError> {
    let rho0 = initial_state(spec)?;
    evolve_from(spec, cfg, rho0, observables, observer)
}

/// Integrates from an arbitrary lab-frame state.
pub fn evolve_from(
    spec: &ClusterSpec,
    cfg: &IntegratorConfig,
    rho0: DensityMatrix,
    observables: &[Observable],
    mut observer: impl FnMut(f64, &[f64]) -> ControlFlow<()>,
) -> Result<Evolution, DynamicsError> {
    cfg.validate_for(spec)?;
    if rho0.dim() != spec.dim() {
        return Err(QStateError::DimensionMismatch {
            expected: spec.dim(),
            found: rho0.dim(),
        }
        .into());
    }
    for obs in observables {
        if obs.sites.iter().any(|&s| s == 0 || s > spec.n_spins()) {
            return Err(QStateError::InvalidSites {
                sites: obs.sites.clone(),
                total_spins: spec.n_spins(),
            }
            .into());
        }
    }
    let generator = Liouvillian::new(spec, cfg.frame)?;
    let mut recorder = Recorder::new(spec, observables)?;
    let mut stepper = Rk4::new(rho0.into_matrix());
    let mut diagnostics = Diagnostics::default();
    let steps_per_sample = cfg.steps_per_sample();
    let samples = cfg.sample_count();

    let mut sample_index = 0u64;
    loop {
        let t = sample_index as f64 * cfg.sample_every;
        let values = recorder.record(t, stepper.state(), &generator, cfg.frame)?;
        check_drift(stepper.state(), t, cfg.check_positivity, &mut diagnostics)?;
        if observer(t, &values).is_break() || sample_index == samples {
            break;
        }
        for _ in 0..steps_per_sample {
            stepper.step(&generator, cfg.dt);
        }
        diagnostics.steps += steps_per_sample;
        sample_index += 1;
    }

    let final_time = sample_index as f64 * cfg.sample_every;
    let final_matrix = match cfg.frame {
        Frame::Lab => stepper.into_state(),
        Frame::Rotating => frame_phase(stepper.state(), final_time, spec.omega, -1.0),
    };
    Ok(Evolution {
        series: recorder.into_series(),
        final_state: DensityMatrix::from_matrix_unchecked(final_matrix),
        final_time,
        diagnostics,
    })
}

fn check_drift(rho: &ComplexMatrix, t: f64, positivity: bool, diag: &mut Diagnostics) -> Result<(), DynamicsError> {
    let trace_drift = (rho.trace() - C64::new(1.0, 0.0)).norm();
    let herm_drift = rho.hermiticity_error();
    diag.max_trace_drift = diag.max_trace_drift.max(trace_drift);
    diag.max_hermiticity_drift = diag.max_hermiticity_drift.max(herm_drift);
    if !rho.is_finite() || trace_drift > TRACE_DRIFT_LIMIT {
        return Err(DynamicsError::ToleranceBreach {
            quantity: "trace drift",
            value: trace_drift,
            limit: TRACE_DRIFT_LIMIT,
            t,
        });
    }
    if herm_drift > HERMITICITY_DRIFT_LIMIT {
        return Err(DynamicsError::ToleranceBreach {
            quantity: "hermiticity drift",
            value: herm_drift,
            limit: HERMITICITY_DRIFT_LIMIT,
            t,
        });
    }
    if positivity {
        let (vals, _) = hermitian_eig(rho)?;
        let min = vals[0];
        diag.min_eigenvalue = Some(diag.min_eigenvalue.map_or(min, |m: f64| m.min(min)));
        if min < POSITIVITY_LIMIT {
            return Err(DynamicsError::ToleranceBreach {
                quantity: "minimum eigenvalue",
                value: min,
                limit: POSITIVITY_LIMIT,
                t,
            });
        }
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta with preallocated stages.
struct Rk4 {
    rho: ComplexMatrix,
    k: [Vec<C64>; 4],
    probe: Vec<C64>,
}

impl Rk4 {
    fn new(rho: ComplexMatrix) -> Self {
        let len = rho.as_slice().len();
        let zero = vec![C64::new(0.0, 0.0); len];
        Self {
            rho,
            k: [zero.clone(), zero.clone(), zero.clone(), zero.clone()],
            probe: zero,
        }
    }

    fn state(&self) -> &ComplexMatrix {
        &self.rho
    }

    fn into_state(self) -> ComplexMatrix {
        self.rho
    }

    fn step(&mut self, gen: &Liouvillian, dt: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        let rho = self.rho.as_mut_slice();
        gen.apply_hermitian(rho, k1);
        axpy_into(&mut self.probe, rho, 0.5 * dt, k1);
        gen.apply_hermitian(&self.probe, k2);
        axpy_into(&mut self.probe, rho, 0.5 * dt, k2);
        gen.apply_hermitian(&self.probe, k3);
        axpy_into(&mut self.probe, rho, dt, k3);
        gen.apply_hermitian(&self.probe, k4);
        let w = dt / 6.0;
        for i in 0..rho.len() {
            rho[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
        }
    }
}

fn axpy_into(out: &mut [C64], x: &[C64], a: f64, y: &[C64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + yi * a;
    }
}

/// Evaluates observables on the lab-frame reduced states at each sample.
struct Recorder {
    omega: f64,
    n_spins: usize,
    observables: Vec<Observable>,
    /// Distinct site sets, with the thermal reference product state on each.
    site_sets: Vec<(Vec<usize>, DensityMatrix)>,
    heat_running: Vec<Option<(f64, f64)>>,
    series: TimeSeries,
}

impl Recorder {
    fn new(spec: &ClusterSpec, observables: &[Observable]) -> Result<Self, DynamicsError> {
        let thermal = thermal_state(spec.omega, spec.noise.temperature)?;
        let mut site_sets: Vec<(Vec<usize>, DensityMatrix)> = Vec::new();
        for obs in observables {
            if !site_sets.iter().any(|(s, _)| *s == obs.sites) {
                let mut reference = thermal.clone();
                for _ in 1..obs.sites.len() {
                    reference = reference.kron(&thermal);
                }
                site_sets.push((obs.sites.clone(), reference));
            }
        }
        Ok(Self {
            omega: spec.omega,
            n_spins: spec.n_spins(),
            observables: observables.to_vec(),
            site_sets,
            heat_running: vec![None; observables.len()],
            series: TimeSeries::new(observables.iter().map(Observable::key).collect()),
        })
    }

    fn record(
        &mut self,
        t: f64,
        rho: &ComplexMatrix,
        generator: &Liouvillian,
        frame: Frame,
    ) -> Result<Vec<f64>, DynamicsError> {
        let mut reduced = Vec::with_capacity(self.site_sets.len());
        for (sites, _) in &self.site_sets {
            let mut m = partial_trace_matrix(rho, sites, self.n_spins)?;
            if frame == Frame::Rotating {
                m = frame_phase(&m, t, self.omega, -1.0);
            }
            reduced.push(DensityMatrix::from_matrix_unchecked(m));
        }
        let mut values = Vec::with_capacity(self.observables.len());
        for (k, obs) in self.observables.iter().enumerate() {
            let set = self
                .site_sets
                .iter()
                .position(|(s, _)| *s == obs.sites)
                .expect("site set registered");
            let state = &reduced[set];
            let reference = &self.site_sets[set].1;
            let value = match obs.metric {
                MetricName::RelEntropyVsThermal => relative_entropy(state, reference)?,
                MetricName::TraceDistanceVsThermal => trace_distance(state, reference)?,
                MetricName::CohRelEntropy => coherence_rel_entropy(state)?,
                MetricName::CohL1 => coherence_l1(state),
                MetricName::SigmaZExpect => sigma_z_sum(state.matrix()),
                MetricName::Purity => state.purity(),
                MetricName::HeatCurrent => metrics::heat_current_on(self.omega, &obs.sites, rho, generator)?,
                MetricName::HeatIntegrated => {
                    let j = metrics::heat_current_on(self.omega, &obs.sites, rho, generator)?;
                    let q = match self.heat_running[k] {
                        None => 0.0,
                        Some((t_prev, j_prev)) => {
                            let q_prev = *self.series.columns[k].last().expect("previous sample");
                            q_prev + 0.5 * (t - t_prev) * (j + j_prev)
                        }
                    };
                    self.heat_running[k] = Some((t, j));
                    q
                }
            };
            values.push(value);
        }
        self.series.push(t, &values)?;
        Ok(values)
    }

    fn into_series(self) -> TimeSeries {
        self.series
    }
}
