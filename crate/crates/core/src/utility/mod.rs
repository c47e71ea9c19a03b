//! QoE models for the supported application classes, all mapped onto the
//! common `[1, 5]` utility scale, plus quantized utility grids.

mod classes;
mod grid;

pub use classes::{AppClass, ClassModel, VideoLadder, WebPage};
pub use grid::{build_grid, grid_lookup, load_grid, save_grid, AxisSpacing, GridBuild, GridSpec, Repair, UtilityGrid};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UTILITY_MIN: f64 = 1.0;
pub const UTILITY_MAX: f64 = 5.0;

/// MOS ceiling of the web browsing model before rescaling.
pub const WEB_MOS_MAX: f64 = 4.6;
/// MOS ceiling of the remote terminal model before rescaling.
pub const SSH_MOS_MAX: f64 = 4.3;
/// MOS ceiling of the VoIP model before rescaling.
pub const VOIP_MOS_MAX: f64 = 3.65;

/// Response time at which the terminal model reaches the bottom of the scale.
pub const SSH_MAX_RESPONSE_MS: f64 = 1200.0;

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("{what} outside model domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid index ({tp}, {d}) out of range for {n_tp}x{n_d} grid")]
    Index {
        tp: usize,
        d: usize,
        n_tp: usize,
        n_d: usize,
    },
    #[error("model evaluation failed at tp={tp} kbps, d={d} ms: {source}")]
    Build {
        tp: f64,
        d: f64,
        #[source]
        source: Box<UtilityError>,
    },
    #[error("grid file {path}: {message}")]
    Load { path: String, message: String },
    #[error("grid io: {0}")]
    Io(#[from] std::io::Error),
}

fn clamp_scale(v: f64) -> f64 {
    v.clamp(UTILITY_MIN, UTILITY_MAX)
}

/// Web browsing MOS from page load time in seconds, clamped to `[1, 5]`.
pub fn mos_web(page_load_time_s: f64) -> Result<f64, UtilityError> {
    if !(page_load_time_s > 0.0) {
        return Err(UtilityError::Domain {
            what: "page load time",
            value: page_load_time_s,
        });
    }
    Ok(clamp_scale(-0.88 * page_load_time_s.ln() + 4.72))
}

/// File download MOS from download time in seconds, clamped to `[1, 5]`.
pub fn mos_dl(download_time_s: f64) -> Result<f64, UtilityError> {
    if !(download_time_s > 0.0) {
        return Err(UtilityError::Domain {
            what: "download time",
            value: download_time_s,
        });
    }
    Ok(clamp_scale(-1.68 * download_time_s.ln() + 9.61))
}

/// Affine stretch of `[1, mos_max]` onto `[1, 5]`.
pub fn scale_mos(mos: f64, mos_max: f64) -> Result<f64, UtilityError> {
    if !(mos_max > UTILITY_MIN && mos_max <= UTILITY_MAX) {
        return Err(UtilityError::Domain {
            what: "mos_max",
            value: mos_max,
        });
    }
    if !(UTILITY_MIN..=mos_max).contains(&mos) {
        return Err(UtilityError::Domain {
            what: "mos",
            value: mos,
        });
    }
    Ok(clamp_scale((mos - 1.0) * 4.0 / (mos_max - 1.0) + 1.0))
}

/// Web utility: MOS saturates at the model ceiling, then is rescaled.
pub fn u_web(page_load_time_s: f64) -> Result<f64, UtilityError> {
    scale_mos(mos_web(page_load_time_s)?.min(WEB_MOS_MAX), WEB_MOS_MAX)
}

/// Download utility is the download MOS itself.
pub fn u_dl(download_time_s: f64) -> Result<f64, UtilityError> {
    mos_dl(download_time_s)
}

/// (response time ms, MOS) anchors of the remote-terminal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SshAnchorTable {
    pub points: Vec<(f64, f64)>,
}

impl Default for SshAnchorTable {
    fn default() -> Self {
        Self {
            points: vec![
                (0.0, 4.3),
                (120.0, 4.0),
                (250.0, 3.3),
                (375.0, 2.6),
                (500.0, 2.0),
                (1200.0, 1.0),
            ],
        }
    }
}

impl SshAnchorTable {
    pub fn validate(&self) -> Result<(), UtilityError> {
        let p = &self.points;
        if p.len() < 2 {
            return Err(UtilityError::Config("SSH anchor table needs two points".into()));
        }
        if p[0].0 != 0.0 || p[p.len() - 1].0 < SSH_MAX_RESPONSE_MS {
            return Err(UtilityError::Config(format!(
                "SSH anchors must cover [0, {SSH_MAX_RESPONSE_MS}] ms"
            )));
        }
        if p.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(UtilityError::Config("SSH anchor response times must ascend".into()));
        }
        if p.iter().any(|&(_, m)| !(UTILITY_MIN..=SSH_MOS_MAX).contains(&m)) {
            return Err(UtilityError::Config(format!(
                "SSH anchor MOS must lie in [1, {SSH_MOS_MAX}]"
            )));
        }
        Ok(())
    }

    fn interpolate(&self, rt: f64) -> f64 {
        let p = &self.points;
        let hi = p.partition_point(|&(t, _)| t <= rt);
        if hi == 0 {
            return p[0].1;
        }
        if hi == p.len() {
            return p[p.len() - 1].1;
        }
        let (t0, m0) = p[hi - 1];
        let (t1, m1) = p[hi];
        m0 + (m1 - m0) * (rt - t0) / (t1 - t0)
    }
}

/// Remote terminal utility from response time in ms. Beyond the modeled
/// range the utility stays at 1.
pub fn u_ssh(response_time_ms: f64, anchors: &SshAnchorTable) -> Result<f64, UtilityError> {
    if !(response_time_ms >= 0.0) {
        return Err(UtilityError::Domain {
            what: "response time",
            value: response_time_ms,
        });
    }
    anchors.validate()?;
    if response_time_ms >= SSH_MAX_RESPONSE_MS {
        return Ok(UTILITY_MIN);
    }
    let mos = anchors.interpolate(response_time_ms).clamp(UTILITY_MIN, SSH_MOS_MAX);
    scale_mos(mos, SSH_MOS_MAX)
}

/// Adaptive streaming utility from the average quality level.
pub fn u_has(q_avg: f64, q_min: f64, q_max: f64) -> Result<f64, UtilityError> {
    if !(q_max > q_min) {
        return Err(UtilityError::Domain {
            what: "quality range",
            value: q_max - q_min,
        });
    }
    if !(q_min..=q_max).contains(&q_avg) {
        return Err(UtilityError::Domain {
            what: "average quality",
            value: q_avg,
        });
    }
    Ok(clamp_scale((q_avg - q_min) / (q_max - q_min) * 4.0 + 1.0))
}

/// Coefficients of the bivariate cubic VoIP MOS polynomial in packet loss
/// fraction `L` and one-way delay `D` (ms):
///
/// `MOS = a + b·L + c·L² + d·L³ + e·D + f·D² + g·D³ + h·L·D + i·L²·D + j·L·D²`
///
/// The codec-specific constants come from an external regression table. The
/// shipped defaults are a calibration that yields utility 5 up to 34.5 ms at
/// zero loss, utility 4.9 at 8 % loss and 80 ms, and the scale floor at total
/// loss. Load a coefficient file to use published values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoipCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub i: f64,
    pub j: f64,
    pub mos_min: f64,
    pub mos_max: f64,
}

impl Default for VoipCoefficients {
    fn default() -> Self {
        Self {
            a: 3.66725,
            b: -0.35625,
            c: -2.34375,
            d: 0.0,
            e: -0.0005,
            f: 0.0,
            g: 0.0,
            h: 0.0,
            i: 0.0,
            j: 0.0,
            mos_min: UTILITY_MIN,
            mos_max: VOIP_MOS_MAX,
        }
    }
}

impl VoipCoefficients {
    /// Reads a flat `key = value` file. Every coefficient and both clamp
    /// bounds are required.
    pub fn load(path: &Path) -> Result<Self, UtilityError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, UtilityError> {
        let coeffs: Self = toml::from_str(text).map_err(|e| UtilityError::Config(e.message().to_string()))?;
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat struct serializes")
    }

    pub fn validate(&self) -> Result<(), UtilityError> {
        let all = [
            self.a,
            self.b,
            self.c,
            self.d,
            self.e,
            self.f,
            self.g,
            self.h,
            self.i,
            self.j,
            self.mos_min,
            self.mos_max,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(UtilityError::Config("non-finite VoIP coefficient".into()));
        }
        if !(UTILITY_MIN <= self.mos_min && self.mos_min < self.mos_max && self.mos_max <= UTILITY_MAX) {
            return Err(UtilityError::Config(format!(
                "VoIP clamp bounds [{}, {}] invalid",
                self.mos_min, self.mos_max
            )));
        }
        Ok(())
    }

    pub fn mos(&self, loss: f64, delay_ms: f64) -> f64 {
        let (l, d) = (loss, delay_ms);
        self.a
            + self.b * l
            + self.c * l * l
            + self.d * l * l * l
            + self.e * d
            + self.f * d * d
            + self.g * d * d * d
            + self.h * l * d
            + self.i * l * l * d
            + self.j * l * d * d
    }
}

/// VoIP utility from loss fraction and one-way delay in ms.
pub fn u_voip(loss: f64, delay_ms: f64, coeffs: &VoipCoefficients) -> Result<f64, UtilityError> {
    if !(0.0..=1.0).contains(&loss) {
        return Err(UtilityError::Domain {
            what: "loss fraction",
            value: loss,
        });
    }
    if !(delay_ms >= 0.0) {
        return Err(UtilityError::Domain {
            what: "delay",
            value: delay_ms,
        });
    }
    coeffs.validate()?;
    let mos = coeffs.mos(loss, delay_ms).clamp(coeffs.mos_min, coeffs.mos_max);
    // Relative to the lower clamp bound so mos_min maps to the scale floor.
    let span = coeffs.mos_max - coeffs.mos_min;
    Ok(clamp_scale((mos - coeffs.mos_min) * 4.0 / span + 1.0))
}
