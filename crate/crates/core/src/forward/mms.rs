use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voltage bounds outside which a step is considered unstable.
const V_LOWER: f64 = -0.5;
const V_UPPER: f64 = 1.5;

/// Intrinsic parameters of the modified Mitchell-Schaeffer cell (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub tau_in: f64,
    pub tau_out: f64,
    pub tau_open: f64,
    pub tau_close: f64,
    pub v_gate: f64,
}

impl CellParams {
    pub fn new(tau_in: f64, tau_out: f64, tau_open: f64, tau_close: f64) -> Result<Self> {
        let p = Self { tau_in, tau_out, tau_open, tau_close, v_gate: 0.1 };
        p.validate()?;
        Ok(p)
    }

    /// Centre of the usual parameter box.
    pub fn midrange() -> Self {
        Self { tau_in: 0.155, tau_out: 15.5, tau_open: 140.0, tau_close: 125.0, v_gate: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let taus = [self.tau_in, self.tau_out, self.tau_open, self.tau_close];
        if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidInput(format!("time constants must be positive, got {taus:?}")));
        }
        if !(self.v_gate > 0.0 && self.v_gate < 1.0) {
            return Err(Error::InvalidInput(format!("v_gate must lie in (0, 1), got {}", self.v_gate)));
        }
        Ok(())
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a, b, c, d] => Self::new(*a, *b, *c, *d),
            _ => Err(Error::DimensionMismatch(format!("cell parameters need 4 values, got {}", v.len()))),
        }
    }
}

/// Cell parameters plus the tissue conductivity `conductivity` in cm²/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    pub cell: CellParams,
    pub conductivity: f64,
}

impl TissueParams {
    pub fn new(cell: CellParams, conductivity: f64) -> Result<Self> {
        cell.validate()?;
        if !(conductivity.is_finite() && conductivity >= 0.0) {
            return Err(Error::InvalidInput(format!("conductivity must be non-negative, got {conductivity}")));
        }
        Ok(Self { cell, conductivity })
    }

    /// Order: `tau_in, tau_out, tau_open, tau_close, D`.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 5 {
            return Err(Error::DimensionMismatch(format!("tissue parameters need 5 values, got {}", v.len())));
        }
        Self::new(CellParams::from_slice(&v[..4])?, v[4])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let c = &self.cell;
        vec![c.tau_in, c.tau_out, c.tau_open, c.tau_close, self.conductivity]
    }

    /// Conductivity in cm²/ms, the unit the solver works in.
    fn d_per_ms(&self) -> f64 {
        self.conductivity * 1e-3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Cable { length_cm: f64, dx_cm: f64 },
    Sheet { nx: usize, ny: usize, dx_cm: f64 },
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry::Cable { length_cm: 3.0, dx_cm: 0.025 }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if !(self.dx() > 0.0) || n == 0 {
            return Err(Error::InvalidInput(format!("degenerate geometry {self:?}")));
        }
        if n > 10_000 {
            return Err(Error::InvalidInput(format!("geometry has {n} nodes, limit is 10000")));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        match *self {
            Geometry::Cable { dx_cm, .. } | Geometry::Sheet { dx_cm, .. } => dx_cm,
        }
    }

    pub fn spatial_dims(&self) -> usize {
        match self {
            Geometry::Cable { .. } => 1,
            Geometry::Sheet { .. } => 2,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match *self {
            Geometry::Cable { length_cm, dx_cm } => (length_cm / dx_cm).round() as usize + 1,
            Geometry::Sheet { nx, ny, .. } => nx * ny,
        }
    }

    /// Position of a node in cm; for a sheet, nodes are numbered row-major in x.
    pub fn position(&self, node: usize) -> (f64, f64) {
        match *self {
            Geometry::Cable { dx_cm, .. } => (node as f64 * dx_cm, 0.0),
            Geometry::Sheet { nx, dx_cm, .. } => ((node % nx) as f64 * dx_cm, (node / nx) as f64 * dx_cm),
        }
    }

    /// Nodes with `x ≤ width` (a strip along the left edge of a sheet).
    pub fn left_strip(&self, width_cm: f64) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.position(i).0 <= width_cm + 1e-9).collect()
    }

    /// `count` nodes nearest to evenly spaced x positions over `[from, to]`
    /// along the bottom row.
    pub fn sensors_along_x(&self, from_cm: f64, to_cm: f64, count: usize) -> Vec<usize> {
        let dx = self.dx();
        let last = match *self {
            Geometry::Cable { .. } => self.n_nodes() - 1,
            Geometry::Sheet { nx, .. } => nx - 1,
        };
        (0..count)
            .map(|k| {
                let x = if count == 1 { from_cm } else { from_cm + (to_cm - from_cm) * k as f64 / (count - 1) as f64 };
                ((x / dx).round() as usize).min(last)
            })
            .collect()
    }

    /// 15 sensors evenly spaced over [0.3, 2.9] cm.
    pub fn default_sensors(&self) -> Vec<usize> {
        self.sensors_along_x(0.3, 2.9, 15)
    }

    /// Mirror-ghost discrete Laplacian (no-flux boundaries), without the 1/dx² factor.
    fn laplacian(&self, v: &[f64], out: &mut [f64]) {
        match *self {
            Geometry::Cable { .. } => {
                let n = v.len();
                if n == 1 {
                    out[0] = 0.0;
                    return;
                }
                out[0] = 2.0 * (v[1] - v[0]);
                for i in 1..n - 1 {
                    out[i] = v[i - 1] - 2.0 * v[i] + v[i + 1];
                }
                out[n - 1] = 2.0 * (v[n - 2] - v[n - 1]);
            }
            Geometry::Sheet { nx, ny, .. } => {
                for iy in 0..ny {
                    for ix in 0..nx {
                        let i = iy * nx + ix;
                        let c = v[i];
                        let xl = if ix > 0 { v[i - 1] } else if nx > 1 { v[i + 1] } else { c };
                        let xr = if ix + 1 < nx { v[i + 1] } else if nx > 1 { v[i - 1] } else { c };
                        let yd = if iy > 0 { v[i - nx] } else if ny > 1 { v[i + nx] } else { c };
                        let yu = if iy + 1 < ny { v[i + nx] } else if ny > 1 { v[i - nx] } else { c };
                        out[i] = xl + xr + yd + yu - 4.0 * c;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacingProtocol {
    pub s1_count: usize,
    pub s1_interval: f64,
    /// Delay of the premature S2 stimulus after the last S1; `None` disables S2.
    pub s2_coupling: Option<f64>,
    pub stim_amplitude: f64,
    pub stim_duration: f64,
    /// Nodes receiving the stimulus. Empty means "left 0.2 cm strip" when
    /// used with a geometry.
    pub stim_region: Vec<usize>,
    /// Simulated time after the last stimulus onset.
    pub tail: f64,
}

impl Default for PacingProtocol {
    fn default() -> Self {
        Self {
            s1_count: 3,
            s1_interval: 800.0,
            s2_coupling: Some(500.0),
            stim_amplitude: 1.0,
            stim_duration: 2.0,
            stim_region: Vec::new(),
            tail: 800.0,
        }
    }
}

impl PacingProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.s1_count == 0 {
            return Err(Error::InvalidInput("s1_count must be at least 1".into()));
        }
        let positive = [self.s1_interval, self.stim_duration, self.tail];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.s2_coupling.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::InvalidInput("protocol intervals and durations must be positive".into()));
        }
        Ok(())
    }

    /// No stimulus at all.
    pub fn quiescent(duration: f64) -> Self {
        Self { s1_count: 1, s2_coupling: None, stim_amplitude: 0.0, tail: duration, ..Self::default() }
    }

    pub fn s1_onsets(&self) -> Vec<f64> {
        (0..self.s1_count).map(|k| k as f64 * self.s1_interval).collect()
    }

    pub fn last_s1_onset(&self) -> f64 {
        (self.s1_count - 1) as f64 * self.s1_interval
    }

    pub fn s2_onset(&self) -> Option<f64> {
        self.s2_coupling.map(|c| self.last_s1_onset() + c)
    }

    pub fn onsets(&self) -> Vec<f64> {
        let mut o = self.s1_onsets();
        o.extend(self.s2_onset());
        o
    }

    pub fn end_time(&self) -> f64 {
        self.onsets().last().copied().unwrap_or(0.0) + self.tail
    }

    fn region_for(&self, geometry: &Geometry) -> Vec<usize> {
        if self.stim_region.is_empty() {
            geometry.left_strip(0.2)
        } else {
            self.stim_region.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Fixed internal step; `None` uses the stability rule.
    pub dt: Option<f64>,
    pub dt_max: f64,
    /// Storage interval of the trace (ms).
    pub sample_interval: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { dt: None, dt_max: 0.02, sample_interval: 1.0 }
    }
}

/// `min(dt_max, 0.25·dx²/(D·dims), 0.1·τ_in)` with D in cm²/ms.
pub fn stable_dt(p: &TissueParams, geometry: &Geometry, dt_max: f64) -> f64 {
    let d = p.d_per_ms();
    let diff = if d > 0.0 { 0.25 * geometry.dx().powi(2) / (d * geometry.spatial_dims() as f64) } else { f64::INFINITY };
    dt_max.min(diff).min(0.1 * p.cell.tau_in)
}

/// Sampled voltage and gate at a set of recorded nodes.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    /// Global indices of the recorded nodes.
    pub nodes: Vec<usize>,
    /// `v[k * nodes.len() + j]` is node `nodes[j]` at `times[k]`.
    v: Vec<f64>,
    h: Vec<f64>,
    pub sensors: Vec<usize>,
    pub dt: f64,
}

impl SimulationTrace {
    fn slot(&self, node: usize) -> Result<usize> {
        self.nodes
            .iter()
            .position(|&n| n == node)
            .ok_or_else(|| Error::InvalidInput(format!("node {node} was not recorded")))
    }

    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn voltage(&self, node: usize) -> Result<Vec<f64>> {
        let j = self.slot(node)?;
        let w = self.nodes.len();
        Ok((0..self.times.len()).map(|k| self.v[k * w + j]).collect())
    }

    pub fn gate(&self, node: usize) -> Result<Vec<f64>> {
        let j = self.slot(node)?;
        let w = self.nodes.len();
        Ok((0..self.times.len()).map(|k| self.h[k * w + j]).collect())
    }

    /// All recorded voltages at sample `k`.
    pub fn snapshot(&self, k: usize) -> &[f64] {
        let w = self.nodes.len();
        &self.v[k * w..(k + 1) * w]
    }

    pub fn gate_snapshot(&self, k: usize) -> &[f64] {
        let w = self.nodes.len();
        &self.h[k * w..(k + 1) * w]
    }

    /// Time column followed by one voltage column per sensor.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend(self.sensors.iter().map(|s| format!("v_{s}")));
        out.write_record(&header)?;
        let series = self.sensors.iter().map(|&s| self.voltage(s)).collect::<Result<Vec<_>>>()?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:?}")];
            row.extend(series.iter().map(|s| format!("{:?}", s[k])));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Stepper<'a> {
    cell: CellParams,
    geometry: &'a Geometry,
    coef: f64,
    dt: f64,
    exp_open: f64,
    exp_close: f64,
}

impl Stepper<'_> {
    fn step(&self, v: &mut [f64], h: &mut [f64], scratch: &mut [f64], stim: Option<(&[bool], f64)>) {
        let CellParams { tau_in, tau_out, v_gate, .. } = self.cell;
        let (inv_in, inv_out) = (1.0 / tau_in, 1.0 / tau_out);
        if self.coef > 0.0 {
            self.geometry.laplacian(v, scratch);
        }
        for i in 0..v.len() {
            let v0 = v[i];
            h[i] = if v0 <= v_gate { 1.0 - (1.0 - h[i]) * self.exp_open } else { h[i] * self.exp_close };
            debug_assert!((0.0..=1.0).contains(&h[i]));
            let x = if self.coef > 0.0 { v0 + self.coef * scratch[i] } else { v0 };
            let mut rate = h[i] * x * (x - v_gate) * (1.0 - x) * inv_in - (1.0 - h[i]) * x * inv_out;
            if let Some((mask, amp)) = stim {
                if mask[i] {
                    rate += amp;
                }
            }
            v[i] = x + self.dt * rate;
        }
    }
}

fn march(
    cell: CellParams,
    d_per_ms: f64,
    geometry: &Geometry,
    protocol: &PacingProtocol,
    settings: &SolverSettings,
    dt_rule: f64,
    stim_mask: &[bool],
    record: Vec<usize>,
    sensors: Vec<usize>,
    initial_v: Option<&[f64]>,
) -> Result<SimulationTrace> {
    let n = stim_mask.len();
    let sample = settings.sample_interval;
    if !(sample > 0.0) {
        return Err(Error::InvalidInput("sample_interval must be positive".into()));
    }
    let dt_target = settings.dt.unwrap_or(dt_rule);
    if !(dt_target > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt_target}")));
    }
    let substeps = ((sample / dt_target) - 1e-9).ceil().max(1.0) as usize;
    let dt = sample / substeps as f64;
    let n_samples = (protocol.end_time() / sample).round() as usize + 1;

    let stim_steps: Vec<(usize, usize)> = protocol
        .onsets()
        .iter()
        .map(|&t| {
            let a = (t / dt).round() as usize;
            (a, a + (protocol.stim_duration / dt).round() as usize)
        })
        .collect();

    let stepper = Stepper {
        cell,
        geometry,
        coef: d_per_ms * dt / geometry.dx().powi(2),
        dt,
        exp_open: (-dt / cell.tau_open).exp(),
        exp_close: (-dt / cell.tau_close).exp(),
    };

    let mut v = match initial_v {
        Some(v0) => v0.to_vec(),
        None => vec![0.0; n],
    };
    let mut h = vec![1.0; n];
    let mut scratch = vec![0.0; n];
    let w = record.len();
    let mut tv = Vec::with_capacity(n_samples * w);
    let mut th = Vec::with_capacity(n_samples * w);
    let mut times = Vec::with_capacity(n_samples);

    let mut step = 0usize;
    for k in 0..n_samples {
        if k > 0 {
            for _ in 0..substeps {
                let active = stim_steps.iter().any(|&(a, b)| step >= a && step < b);
                let stim = (active && protocol.stim_amplitude != 0.0).then_some((stim_mask, protocol.stim_amplitude));
                stepper.step(&mut v, &mut h, &mut scratch, stim);
                step += 1;
            }
        }
        let t = k as f64 * sample;
        if let Some((node, &value)) = v.iter().enumerate().find(|(_, x)| !(**x >= V_LOWER && **x <= V_UPPER)) {
            return Err(Error::UnstableStep { time: t, node, value });
        }
        times.push(t);
        tv.extend(record.iter().map(|&i| v[i]));
        th.extend(record.iter().map(|&i| h[i]));
    }
    Ok(SimulationTrace { times, nodes: record, v: tv, h: th, sensors, dt })
}

/// Single stimulated cell. `dt = None` applies the stability rule.
pub fn simulate_cell(p: &CellParams, protocol: &PacingProtocol, dt: Option<f64>) -> Result<SimulationTrace> {
    p.validate()?;
    protocol.validate()?;
    let settings = SolverSettings { dt, ..SolverSettings::default() };
    let dt_rule = settings.dt_max.min(0.1 * p.tau_in);
    march(*p, 0.0, &Geometry::Cable { length_cm: 0.0, dx_cm: 1.0 }, protocol, &settings, dt_rule, &[true], vec![0], vec![0], None)
}

/// Monodomain tissue run. Records `record` nodes (all nodes when `None`);
/// `sensors` are carried on the trace for export.
pub fn simulate_tissue(
    p: &TissueParams,
    geometry: &Geometry,
    protocol: &PacingProtocol,
    settings: &SolverSettings,
    record: Option<&[usize]>,
    initial_v: Option<&[f64]>,
) -> Result<SimulationTrace> {
    p.cell.validate()?;
    protocol.validate()?;
    geometry.validate()?;
    let n = geometry.n_nodes();
    let region = protocol.region_for(geometry);
    let mut mask = vec![false; n];
    for &i in &region {
        *mask.get_mut(i).ok_or_else(|| Error::InvalidInput(format!("stimulus node {i} outside geometry")))? = true;
    }
    let record: Vec<usize> = record.map(<[usize]>::to_vec).unwrap_or_else(|| (0..n).collect());
    if record.iter().any(|&i| i >= n) {
        return Err(Error::InvalidInput("recorded node outside geometry".into()));
    }
    if let Some(v0) = initial_v {
        if v0.len() != n {
            return Err(Error::DimensionMismatch(format!("initial state has {} nodes, geometry {n}", v0.len())));
        }
    }
    let dt_rule = stable_dt(p, geometry, settings.dt_max);
    let sensors = record.clone();
    march(p.cell, p.d_per_ms(), geometry, protocol, settings, dt_rule, &mask, record, sensors, initial_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upward_crossings(v: &[f64], level: f64) -> usize {
        v.windows(2).filter(|w| w[0] < level && w[1] >= level).count()
    }

    #[test]
    fn rest_is_an_equilibrium() {
        let tr = simulate_cell(&CellParams::midrange(), &PacingProtocol::quiescent(500.0), None).unwrap();
        assert!(tr.voltage(0).unwrap().iter().all(|&v| v == 0.0));
        assert!(tr.gate(0).unwrap().iter().all(|&h| h == 1.0));
    }

    #[test]
    fn one_upstroke_per_stimulus() {
        let protocol = PacingProtocol::default();
        let tr = simulate_cell(&CellParams::midrange(), &protocol, None).unwrap();
        let v = tr.voltage(0).unwrap();
        assert_eq!(upward_crossings(&v, 0.75), protocol.onsets().len());
        for &onset in &protocol.s1_onsets()[1..] {
            let k = (onset / tr.times[1]).round() as usize;
            assert!(v[k - 1] < 0.1, "not recovered before {onset}: {}", v[k - 1]);
        }
    }

    #[test]
    fn gate_stays_in_unit_interval() {
        let g = Geometry::Cable { length_cm: 1.0, dx_cm: 0.025 };
        let p = TissueParams::new(CellParams::midrange(), 2.0).unwrap();
        let tr = simulate_tissue(&p, &g, &PacingProtocol::default(), &SolverSettings::default(), None, None).unwrap();
        for k in 0..tr.n_samples() {
            assert!(tr.gate_snapshot(k).iter().all(|h| (0.0..=1.0).contains(h)));
            assert!(tr.snapshot(k).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_conductivity_decouples_nodes() {
        let cell = CellParams::new(0.1, 10.0, 120.0, 130.0).unwrap();
        let g = Geometry::Cable { length_cm: 0.5, dx_cm: 0.025 };
        let protocol = PacingProtocol { stim_region: vec![0, 1, 2, 3], ..PacingProtocol::default() };
        let tissue = simulate_tissue(&TissueParams::new(cell, 0.0).unwrap(), &g, &protocol, &SolverSettings::default(), None, None).unwrap();
        let stimulated = simulate_cell(&cell, &protocol, None).unwrap().voltage(0).unwrap();
        let resting = simulate_cell(&cell, &PacingProtocol { stim_amplitude: 0.0, ..protocol.clone() }, None)
            .unwrap()
            .voltage(0)
            .unwrap();
        for node in 0..g.n_nodes() {
            let reference = if node < 4 { &stimulated } else { &resting };
            let got = tissue.voltage(node).unwrap();
            let err = got.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "node {node}: {err}");
        }
    }

    #[test]
    fn uniform_state_stays_uniform() {
        let g = Geometry::Sheet { nx: 6, ny: 4, dx_cm: 0.05 };
        let p = TissueParams::new(CellParams::midrange(), 3.0).unwrap();
        let protocol = PacingProtocol::quiescent(300.0);
        let v0 = vec![0.8; g.n_nodes()];
        let tr = simulate_tissue(&p, &g, &protocol, &SolverSettings::default(), None, Some(&v0)).unwrap();
        for k in 0..tr.n_samples() {
            let s = tr.snapshot(k);
            assert!(s.iter().all(|&v| v == s[0]), "sample {k} not uniform");
        }
    }

    #[test]
    fn default_geometry_layout() {
        let g = Geometry::default();
        assert_eq!(g.n_nodes(), 121);
        let s = g.default_sensors();
        assert_eq!(s.len(), 15);
        assert_eq!(s[0], 12);
        assert_eq!(s[14], 116);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.left_strip(0.2).len(), 9);
    }

    #[test]
    fn huge_step_is_reported_unstable() {
        let g = Geometry::Cable { length_cm: 0.5, dx_cm: 0.025 };
        let p = TissueParams::new(CellParams::midrange(), 5.0).unwrap();
        let settings = SolverSettings { dt: Some(0.5), ..SolverSettings::default() };
        let err = simulate_tissue(&p, &g, &PacingProtocol::default(), &settings, None, None).unwrap_err();
        assert!(matches!(err, Error::UnstableStep { .. }), "{err:?}");
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(CellParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(TissueParams::from_slice(&[0.1, 1.0, 100.0, 120.0]).is_err());
        assert!(TissueParams::from_slice(&[0.1, 1.0, 100.0, 120.0, -1.0]).is_err());
    }
}
