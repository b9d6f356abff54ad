use std::fmt;

use super::mms::{simulate_cell, simulate_tissue, CellParams, Geometry, PacingProtocol, SimulationTrace, SolverSettings, TissueParams};
use crate::error::Result;

pub const LAT_THRESHOLD: f64 = 0.75;
pub const RECOVERY_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerError {
    NoCapture,
    NoRecovery,
}

impl fmt::Display for MarkerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkerError::NoCapture => write!(f, "no activation in window"),
            MarkerError::NoRecovery => write!(f, "no recovery in window"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApdMarker {
    pub lat: f64,
    pub lrt: f64,
    pub apd: f64,
}

fn crossing(t0: f64, t1: f64, v0: f64, v1: f64, level: f64) -> f64 {
    if v1 == v0 {
        return t1;
    }
    t0 + (level - v0) / (v1 - v0) * (t1 - t0)
}

/// Index pair and time of the first upward crossing of the LAT threshold in
/// `[start, end)`.
fn find_lat(times: &[f64], v: &[f64], (start, end): (f64, f64)) -> Option<(usize, f64)> {
    for k in 0..times.len().saturating_sub(1) {
        if times[k + 1] < start {
            continue;
        }
        if times[k] >= end {
            break;
        }
        if v[k] < LAT_THRESHOLD && v[k + 1] >= LAT_THRESHOLD {
            let tc = crossing(times[k], times[k + 1], v[k], v[k + 1], LAT_THRESHOLD);
            if tc >= start && tc < end {
                return Some((k + 1, tc));
            }
        }
    }
    None
}

/// Earliest upward crossing of 0.75 inside `window`, linearly interpolated.
pub fn extract_lat(times: &[f64], v: &[f64], window: (f64, f64)) -> std::result::Result<f64, MarkerError> {
    find_lat(times, v, window).map(|(_, t)| t).ok_or(MarkerError::NoCapture)
}

/// LAT, recovery time (first fall to 10% of the beat's running peak) and APD.
pub fn extract_apd(times: &[f64], v: &[f64], window: (f64, f64)) -> std::result::Result<ApdMarker, MarkerError> {
    let (k0, lat) = find_lat(times, v, window).ok_or(MarkerError::NoCapture)?;
    let mut peak = v[k0];
    for k in k0 + 1..times.len() {
        if times[k] > window.1 {
            break;
        }
        let level = RECOVERY_FRACTION * peak;
        if v[k] <= level {
            let lrt = crossing(times[k - 1], times[k], v[k - 1], v[k], level);
            return Ok(ApdMarker { lat, lrt, apd: lrt - lat });
        }
        peak = peak.max(v[k]);
    }
    Err(MarkerError::NoRecovery)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    LatS1,
    LatS2,
    ApdS2,
}

impl OutputKind {
    pub const ALL: [OutputKind; 3] = [OutputKind::LatS1, OutputKind::LatS2, OutputKind::ApdS2];

    pub fn prefix(self) -> &'static str {
        match self {
            OutputKind::LatS1 => "lat_s1",
            OutputKind::LatS2 => "lat_s2",
            OutputKind::ApdS2 => "apd_s2",
        }
    }
}

/// `lat_s1_00, …, lat_s2_00, …, apd_s2_00, …`, matching the flattening order.
pub fn output_labels(n_sensors: usize) -> Vec<String> {
    OutputKind::ALL
        .iter()
        .flat_map(|k| (0..n_sensors).map(move |s| format!("{}_{s:02}", k.prefix())))
        .collect()
}

/// Per-sensor markers of the last S1 beat and the S2 beat. Times are
/// relative to the onset of the stimulus that produced the beat.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatMarkers {
    pub lat_s1: Vec<Option<f64>>,
    pub lat_s2: Vec<Option<f64>>,
    pub apd_s2: Vec<Option<f64>>,
}

impl BeatMarkers {
    pub fn n_sensors(&self) -> usize {
        self.lat_s1.len()
    }

    /// `[s1, s2]` capture flags per sensor.
    pub fn capture_flags(&self) -> Vec<[bool; 2]> {
        self.lat_s1.iter().zip(&self.lat_s2).map(|(a, b)| [a.is_some(), b.is_some()]).collect()
    }

    /// Output-type major, sensor minor.
    pub fn flatten(&self) -> Vec<Option<f64>> {
        self.lat_s1.iter().chain(&self.lat_s2).chain(&self.apd_s2).copied().collect()
    }

    pub fn complete(&self) -> Option<Vec<f64>> {
        self.flatten().into_iter().collect()
    }
}

/// Extract markers at `sensors` from a trace produced under `protocol`.
pub fn beat_markers(trace: &SimulationTrace, protocol: &PacingProtocol, sensors: &[usize]) -> Result<BeatMarkers> {
    let t_s1 = protocol.last_s1_onset();
    let t_end = trace.times.last().copied().unwrap_or(0.0);
    let t_s2 = protocol.s2_onset();
    let s1_end = (t_s1 + protocol.s1_interval).min(t_s2.unwrap_or(f64::INFINITY));
    let mut m = BeatMarkers { lat_s1: Vec::new(), lat_s2: Vec::new(), apd_s2: Vec::new() };
    for &s in sensors {
        let v = trace.voltage(s)?;
        m.lat_s1.push(extract_lat(&trace.times, &v, (t_s1, s1_end)).ok().map(|t| t - t_s1));
        match t_s2 {
            Some(t2) => {
                let window = (t2, t_end + 1e-9);
                m.lat_s2.push(extract_lat(&trace.times, &v, window).ok().map(|t| t - t2));
                m.apd_s2.push(extract_apd(&trace.times, &v, window).ok().map(|a| a.apd));
            }
            None => {
                m.lat_s2.push(None);
                m.apd_s2.push(None);
            }
        }
    }
    if m.lat_s1.iter().all(Option::is_none) {
        log::warn!("last S1 beat reached no sensor");
    } else if t_s2.is_some() && m.lat_s2.iter().all(Option::is_none) {
        log::warn!("S2 beat reached no sensor");
    }
    Ok(m)
}

/// Simulate the S1S2 protocol and return the flattened markers at `sensors`
/// (`3 × sensors.len()` entries, `None` where a marker is missing).
pub fn s1s2_outputs(
    p: &TissueParams,
    geometry: &Geometry,
    protocol: &PacingProtocol,
    settings: &SolverSettings,
    sensors: &[usize],
) -> Result<BeatMarkers> {
    let trace = simulate_tissue(p, geometry, protocol, settings, Some(sensors), None)?;
    beat_markers(&trace, protocol, sensors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFeasibility {
    /// APD of every S1 beat (`None` if the beat failed or did not recover).
    pub apds: Vec<Option<f64>>,
    pub feasible: bool,
    pub reason: Option<String>,
}

pub const MAX_APD: f64 = 500.0;
pub const ALTERNANS_THRESHOLD: f64 = 5.0;

/// Single-cell screen: every S1 beat must capture and recover, APD must not
/// exceed 500 ms and consecutive APDs must not differ by more than 5 ms. The
/// first beat starts from rest and is left out of the alternans comparison.
pub fn cell_feasibility(p: &CellParams, protocol: &PacingProtocol) -> Result<CellFeasibility> {
    let s1_only = PacingProtocol { s2_coupling: None, tail: protocol.s1_interval, ..protocol.clone() };
    let trace = simulate_cell(p, &s1_only, None)?;
    let v = trace.voltage(0)?;
    let apds: Vec<Option<f64>> = s1_only
        .s1_onsets()
        .iter()
        .map(|&t| extract_apd(&trace.times, &v, (t, t + s1_only.s1_interval)).ok().map(|a| a.apd))
        .collect();
    let reason = if let Some(k) = apds.iter().position(Option::is_none) {
        Some(format!("beat {} failed to capture or recover", k + 1))
    } else if let Some(a) = apds.iter().flatten().find(|&&a| a > MAX_APD) {
        Some(format!("APD {a:.1} ms exceeds {MAX_APD} ms"))
    } else {
        apds[1..]
            .windows(2)
            .filter_map(|w| Some((w[1]? - w[0]?).abs()))
            .find(|&d| d > ALTERNANS_THRESHOLD)
            .map(|d| format!("alternans: consecutive APDs differ by {d:.1} ms"))
    };
    Ok(CellFeasibility { apds, feasible: reason.is_none(), reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::mms::SolverSettings;
    use proptest::prelude::*;

    fn grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
        let n = ((t1 - t0) / dt).round() as usize;
        (0..=n).map(|k| t0 + k as f64 * dt).collect()
    }

    #[test]
    fn ramp_lat() {
        let t = grid(0.0, 100.0, 1.0);
        let v: Vec<f64> = t.iter().map(|x| x / 100.0).collect();
        assert!((extract_lat(&t, &v, (0.0, 101.0)).unwrap() - 75.0).abs() < 1e-9);
    }

    #[test]
    fn flat_trace_has_no_capture() {
        let t = grid(0.0, 50.0, 1.0);
        let v = vec![0.5; t.len()];
        assert_eq!(extract_lat(&t, &v, (0.0, 50.0)), Err(MarkerError::NoCapture));
        assert_eq!(extract_apd(&t, &vec![0.0; t.len()], (0.0, 50.0)), Err(MarkerError::NoCapture));
    }

    #[test]
    fn sine_crossing_matches_arcsin() {
        let t = grid(0.0, 20.0, 0.01);
        let omega = 0.3;
        let v: Vec<f64> = t.iter().map(|x| (omega * x).sin()).collect();
        let exact = LAT_THRESHOLD.asin() / omega;
        assert!((extract_lat(&t, &v, (0.0, 20.0)).unwrap() - exact).abs() < 1e-3);
    }

    fn triangle(t: f64) -> f64 {
        if t <= 1.0 {
            t.max(0.0)
        } else {
            (1.0 - (t - 1.0) / 10.0).max(0.0)
        }
    }

    #[test]
    fn triangular_pulse_apd() {
        let t = grid(0.0, 15.0, 0.25);
        let v: Vec<f64> = t.iter().map(|&x| triangle(x)).collect();
        let a = extract_apd(&t, &v, (0.0, 15.0)).unwrap();
        assert!((a.lat - 0.75).abs() < 1e-9);
        assert!((a.lrt - 10.0).abs() < 1e-9);
        assert!((a.apd - 9.25).abs() < 1e-9);
    }

    #[test]
    fn truncated_beat_has_no_recovery() {
        let t = grid(0.0, 15.0, 0.25);
        let v: Vec<f64> = t.iter().map(|&x| triangle(x)).collect();
        assert_eq!(extract_apd(&t, &v, (0.0, 1.0)), Err(MarkerError::NoRecovery));
    }

    #[test]
    fn labels_are_type_major() {
        let l = output_labels(15);
        assert_eq!(l.len(), 45);
        assert_eq!(l[0], "lat_s1_00");
        assert_eq!(l[15], "lat_s2_00");
        assert_eq!(l[44], "apd_s2_14");
    }

    #[test]
    fn midrange_cell_is_feasible() {
        let f = cell_feasibility(&CellParams::midrange(), &PacingProtocol::default()).unwrap();
        assert!(f.feasible, "{f:?}");
        assert_eq!(f.apds.len(), 3);
    }

    #[test]
    fn long_apd_is_unfeasible() {
        let p = CellParams { tau_close: 150.0, tau_out: 30.0, ..CellParams::midrange() };
        let f = cell_feasibility(&p, &PacingProtocol::default()).unwrap();
        assert!(f.apds.iter().flatten().any(|&a| a > MAX_APD), "{f:?}");
        assert!(!f.feasible);
    }

    #[test]
    fn decoupled_uniform_tissue_matches_cell() {
        let cell = CellParams::midrange();
        let g = Geometry::default();
        let protocol = PacingProtocol { stim_region: (0..g.n_nodes()).collect(), ..PacingProtocol::default() };
        let sensors = g.default_sensors();
        let m = s1s2_outputs(&TissueParams::new(cell, 0.0).unwrap(), &g, &protocol, &SolverSettings::default(), &sensors).unwrap();
        let single = simulate_cell(&cell, &protocol, None).unwrap();
        let expected = beat_markers(&single, &protocol, &[0]).unwrap().lat_s1[0].unwrap();
        for l in &m.lat_s1 {
            assert!((l.unwrap() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn midrange_cable_activation_is_monotone() {
        let g = Geometry::default();
        let p = TissueParams::new(CellParams::midrange(), 2.55).unwrap();
        let m = s1s2_outputs(&p, &g, &PacingProtocol::default(), &SolverSettings::default(), &g.default_sensors()).unwrap();
        let lats: Vec<f64> = m.lat_s1.iter().map(|l| l.unwrap()).collect();
        assert!(lats.windows(2).all(|w| w[1] > w[0]), "{lats:?}");
        let flat = m.complete().expect("all markers present");
        assert_eq!(flat.len(), 45);
        assert!(m.apd_s2.iter().all(|a| a.unwrap() > 0.0));
    }

    #[test]
    fn failed_propagation_leaves_missing_entries() {
        let g = Geometry::default();
        let protocol = PacingProtocol { stim_amplitude: 0.0, ..PacingProtocol::default() };
        let p = TissueParams::new(CellParams::midrange(), 1.0).unwrap();
        let m = s1s2_outputs(&p, &g, &protocol, &SolverSettings::default(), &g.default_sensors()).unwrap();
        assert!(m.complete().is_none());
        assert!(m.capture_flags().iter().all(|f| *f == [false, false]));
    }

    proptest! {
        #[test]
        fn markers_shift_with_time(shift in -500.0f64..500.0, dt in 0.05f64..0.5) {
            let t = grid(0.0, 15.0, dt);
            let v: Vec<f64> = t.iter().map(|&x| triangle(x)).collect();
            let shifted: Vec<f64> = t.iter().map(|x| x + shift).collect();
            let a = extract_apd(&t, &v, (0.0, 15.0)).unwrap();
            let b = extract_apd(&shifted, &v, (shift, 15.0 + shift)).unwrap();
            prop_assert!((b.lat - a.lat - shift).abs() < 1e-9);
            prop_assert!((b.lrt - a.lrt - shift).abs() < 1e-9);
            prop_assert!((b.apd - a.apd).abs() < 1e-9);
        }
    }
}
