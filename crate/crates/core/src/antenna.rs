//! Small-loop near-field antenna design equations: radiation and loss
//! resistance, radiation efficiency, radar-equation received power,
//! instrument voltage and dB magnitude.
//!
//! All quantities are SI; field names carry their unit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vacuum permeability in H/m.
pub const MU0: f64 = 4.0e-7 * PI;
/// Speed of light in m/s.
pub const C0: f64 = 299_792_458.0;
/// Conductivity of silver in S/m.
pub const SILVER: f64 = 6.3e7;
/// Reference voltage for [`magnitude_db`].
pub const V_REF_DEFAULT: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum AntennaError {
    #[error("antenna has zero radiation and loss resistance (no turns)")]
    DegenerateAntenna,
    #[error("voltages must be positive (got {0})")]
    NonPositiveVoltage(f64),
    #[error("antenna resistance must be positive (got {0})")]
    NonPositiveResistance(f64),
    #[error("invalid antenna parameter: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntennaSpec {
    pub circumference_m: f64,
    pub turns: u64,
    pub wire_diameter_m: f64,
    pub conductivity_s_per_m: f64,
    pub wavelength_m: f64,
    pub angular_frequency_rad_s: f64,
    pub mu0_h_per_m: f64,
    pub directivity: f64,
    /// Antenna resistance; `None` means `R_r + R_L`.
    pub r_ant_ohm: Option<f64>,
    pub r_inst_ohm: f64,
}

impl AntennaSpec {
    /// 2 cm x 2 cm square loop, four turns of 0.5 mm silver trace, at
    /// `freq_hz`; 50 ohm instrument; small-loop directivity 1.5.
    pub fn square_loop(freq_hz: f64) -> Self {
        AntennaSpec {
            circumference_m: 0.08,
            turns: 4,
            wire_diameter_m: 0.5e-3,
            conductivity_s_per_m: SILVER,
            wavelength_m: C0 / freq_hz,
            angular_frequency_rad_s: 2.0 * PI * freq_hz,
            mu0_h_per_m: MU0,
            directivity: 1.5,
            r_ant_ohm: None,
            r_inst_ohm: 50.0,
        }
    }

    pub fn validate(&self) -> Result<(), AntennaError> {
        let checks = [
            ("circumference_m", self.circumference_m),
            ("wire_diameter_m", self.wire_diameter_m),
            ("conductivity_s_per_m", self.conductivity_s_per_m),
            ("wavelength_m", self.wavelength_m),
            ("angular_frequency_rad_s", self.angular_frequency_rad_s),
            ("mu0_h_per_m", self.mu0_h_per_m),
            ("directivity", self.directivity),
            ("r_inst_ohm", self.r_inst_ohm),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(AntennaError::InvalidSpec(format!("{name} = {v}")));
            }
        }
        if let Some(r) = self.r_ant_ohm {
            if !(r.is_finite() && r > 0.0) {
                return Err(AntennaError::InvalidSpec(format!("r_ant_ohm = {r}")));
            }
        }
        Ok(())
    }
}

/// `R_r = 20 pi^2 (C / lambda)^4 N^2`.
pub fn radiation_resistance(s: &AntennaSpec) -> f64 {
    let n = s.turns as f64;
    20.0 * PI * PI * (s.circumference_m / s.wavelength_m).powi(4) * n * n
}

/// `R_L = N C / (2 pi b) * sqrt(omega mu0 / (2 sigma))`.
pub fn loss_resistance(s: &AntennaSpec) -> f64 {
    let surface = (s.angular_frequency_rad_s * s.mu0_h_per_m / (2.0 * s.conductivity_s_per_m)).sqrt();
    s.turns as f64 * s.circumference_m / (2.0 * PI * s.wire_diameter_m) * surface
}

/// `e_cd = R_r / (R_L + R_r)`.
pub fn radiation_efficiency(s: &AntennaSpec) -> Result<f64, AntennaError> {
    let rr = radiation_resistance(s);
    let total = rr + loss_resistance(s);
    if total <= 0.0 {
        return Err(AntennaError::DegenerateAntenna);
    }
    Ok(rr / total)
}

/// Efficiency with `N C` cancelled from both resistances:
/// `20 pi^2 C^3 N / lambda^4 / (sqrt(omega mu0 / 2 sigma) / (2 pi b) + 20 pi^2 C^3 N / lambda^4)`.
pub fn radiation_efficiency_expanded(s: &AntennaSpec) -> Result<f64, AntennaError> {
    if s.turns == 0 {
        return Err(AntennaError::DegenerateAntenna);
    }
    let a = 20.0 * PI * PI * s.circumference_m.powi(3) / s.wavelength_m.powi(4) * s.turns as f64;
    let l = (s.angular_frequency_rad_s * s.mu0_h_per_m / (2.0 * s.conductivity_s_per_m)).sqrt()
        / (2.0 * PI * s.wire_diameter_m);
    Ok(a / (l + a))
}

/// `A_e = e_cd lambda^2 / (4 pi) D`.
pub fn effective_aperture(e_cd: f64, wavelength_m: f64, directivity: f64) -> f64 {
    e_cd * wavelength_m * wavelength_m / (4.0 * PI) * directivity
}

/// `G = e_cd D`.
pub fn gain(e_cd: f64, directivity: f64) -> f64 {
    e_cd * directivity
}

/// `P_r = P_t G A_e sigma / ((4 pi)^2 R^4)`.
pub fn received_power(p_t_w: f64, gain: f64, aperture_m2: f64, rcs_m2: f64, distance_m: f64) -> f64 {
    p_t_w * gain * aperture_m2 * rcs_m2 / ((4.0 * PI).powi(2) * distance_m.powi(4))
}

/// Transmit side of the radar equation. The cross-section defaults to 1:
/// it is a far-field quantity and has no physical meaning at near-field
/// range, but the equation keeps it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub p_t_w: f64,
    pub distance_m: f64,
    pub rcs_m2: f64,
}

impl Default for Link {
    fn default() -> Self {
        Link {
            p_t_w: 1.0,
            distance_m: 1e-3,
            rcs_m2: 1.0,
        }
    }
}

/// Received power of `s` with gain and aperture derived from its efficiency.
pub fn antenna_received_power(s: &AntennaSpec, link: &Link) -> Result<f64, AntennaError> {
    let e = radiation_efficiency(s)?;
    Ok(received_power(
        link.p_t_w,
        gain(e, s.directivity),
        effective_aperture(e, s.wavelength_m, s.directivity),
        link.rcs_m2,
        link.distance_m,
    ))
}

/// `V_inst = sqrt(P_r / R_ant) R_inst`.
pub fn instrument_voltage(p_r_w: f64, r_ant_ohm: f64, r_inst_ohm: f64) -> Result<f64, AntennaError> {
    if !(r_ant_ohm > 0.0) {
        return Err(AntennaError::NonPositiveResistance(r_ant_ohm));
    }
    if !(p_r_w >= 0.0) {
        return Err(AntennaError::InvalidSpec(format!("received power {p_r_w}")));
    }
    Ok((p_r_w / r_ant_ohm).sqrt() * r_inst_ohm)
}

/// `R_ant` of `s`: the override, or `R_r + R_L`.
pub fn antenna_resistance(s: &AntennaSpec) -> f64 {
    s.r_ant_ohm
        .unwrap_or_else(|| radiation_resistance(s) + loss_resistance(s))
}

/// `20 log10(V_test / V_ref)`.
pub fn magnitude_db(v_test: f64, v_ref: f64) -> Result<f64, AntennaError> {
    for v in [v_test, v_ref] {
        if !(v > 0.0) {
            return Err(AntennaError::NonPositiveVoltage(v));
        }
    }
    Ok(20.0 * (v_test / v_ref).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub turns: u64,
    pub circumference_m: f64,
    pub e_cd: f64,
    pub r_r: f64,
    pub r_l: f64,
    pub v_inst: f64,
}

/// Evaluates every `(N, C)` combination, `N` varying fastest.
pub fn sweep(base: &AntennaSpec, link: &Link, turns: &[u64], circumferences: &[f64]) -> Result<Vec<SweepRow>, AntennaError> {
    let mut out = Vec::with_capacity(turns.len() * circumferences.len());
    for &c in circumferences {
        for &n in turns {
            let s = AntennaSpec {
                turns: n,
                circumference_m: c,
                ..*base
            };
            s.validate()?;
            let p = antenna_received_power(&s, link)?;
            out.push(SweepRow {
                turns: n,
                circumference_m: c,
                e_cd: radiation_efficiency(&s)?,
                r_r: radiation_resistance(&s),
                r_l: loss_resistance(&s),
                v_inst: instrument_voltage(p, antenna_resistance(&s), s.r_inst_ohm)?,
            });
        }
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("N,C,e_cd,R_r,R_L,V_inst\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e}\n",
            r.turns, r.circumference_m, r.e_cd, r.r_r, r.r_l, r.v_inst
        ));
    }
    s
}
