use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::{AxisSpacing, GridSpec};
use super::{u_dl, u_has, u_ssh, u_voip, u_web, SshAnchorTable, UtilityError, VoipCoefficients};

/// Application classes with a builtin utility model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppClass {
    Web,
    Dl,
    Vod,
    Live,
    Ssh,
    Voip,
}

impl AppClass {
    pub const ALL: [AppClass; 6] = [
        AppClass::Web,
        AppClass::Dl,
        AppClass::Vod,
        AppClass::Live,
        AppClass::Ssh,
        AppClass::Voip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AppClass::Web => "web",
            AppClass::Dl => "dl",
            AppClass::Vod => "vod",
            AppClass::Live => "live",
            AppClass::Ssh => "ssh",
            AppClass::Voip => "voip",
        }
    }

    /// Measurement domain and default quantization (12 x 8) of the class.
    pub fn default_grid_spec(self) -> GridSpec {
        let (tp_range, d_range) = match self {
            AppClass::Dl => ((100.0, 5000.0), (0.0, 240.0)),
            AppClass::Web => ((100.0, 12000.0), (0.0, 240.0)),
            AppClass::Vod | AppClass::Live => ((750.0, 5000.0), (0.0, 240.0)),
            AppClass::Voip | AppClass::Ssh => ((100.0, 500.0), (0.0, 500.0)),
        };
        GridSpec {
            tp_range,
            d_range,
            tp_steps: 12,
            d_steps: 8,
            tp_spacing: AxisSpacing::Linear,
            d_spacing: AxisSpacing::Quadratic,
        }
    }
}

impl fmt::Display for AppClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AppClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AppClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown application class {s:?}"))
    }
}

/// A web page fetched over persistent parallel connections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebPage {
    pub total_bytes: u64,
    pub objects: u32,
    pub connections: u32,
}

impl Default for WebPage {
    fn default() -> Self {
        Self {
            total_bytes: 1_300_000,
            objects: 22,
            connections: 6,
        }
    }
}

impl WebPage {
    /// Request rounds: the index object plus `ceil(objects / connections)`
    /// waves of embedded objects.
    pub fn request_rounds(&self) -> u32 {
        self.objects.div_ceil(self.connections.max(1)) + 1
    }
}

/// Bitrate ladder of an adaptive video and the throughput headroom the
/// player keeps when choosing a level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoLadder {
    pub bitrates_kbps: Vec<f64>,
    pub safety: f64,
    /// Delay above which one quality level is lost (live only).
    pub delay_penalty_ms: Option<f64>,
    pub segment_s: f64,
}

impl VideoLadder {
    pub fn vod() -> Self {
        Self {
            bitrates_kbps: vec![486.0, 944.0, 1389.0, 1847.0, 2291.0, 2750.0],
            safety: 0.9,
            delay_penalty_ms: None,
            segment_s: 4.0,
        }
    }

    pub fn live() -> Self {
        Self {
            bitrates_kbps: vec![572.0, 1103.0, 1625.0, 2145.0, 2660.0, 3172.0],
            safety: 0.8,
            delay_penalty_ms: Some(120.0),
            segment_s: 1.0,
        }
    }

    /// Sustained quality level, 1-based. The lowest level is always playable.
    pub fn level(&self, tp_kbps: f64, d_ms: f64) -> usize {
        let budget = self.safety * tp_kbps;
        let mut level = self
            .bitrates_kbps
            .iter()
            .rposition(|&b| b <= budget)
            .map_or(1, |i| i + 1);
        if let Some(limit) = self.delay_penalty_ms {
            if d_ms > limit {
                level = level.saturating_sub(1).max(1);
            }
        }
        level
    }

    pub fn utility(&self, tp_kbps: f64, d_ms: f64) -> Result<f64, UtilityError> {
        let q = self.level(tp_kbps, d_ms) as f64;
        u_has(q, 1.0, self.bitrates_kbps.len() as f64)
    }
}

/// Evaluator for one builtin class, turning a (throughput, delay budget) pair
/// into a utility via an analytic KPI.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub class: AppClass,
    pub web: WebPage,
    pub download_bytes: u64,
    pub vod: VideoLadder,
    pub live: VideoLadder,
    pub ssh: SshAnchorTable,
    pub voip: VoipCoefficients,
    /// On-the-wire rate of a voice stream (kbps); less throughput means loss.
    pub voip_stream_kbps: f64,
}

impl ClassModel {
    pub fn new(class: AppClass) -> Self {
        Self {
            class,
            web: WebPage::default(),
            download_bytes: 10_000_000,
            vod: VideoLadder::vod(),
            live: VideoLadder::live(),
            ssh: SshAnchorTable::default(),
            voip: VoipCoefficients::default(),
            // 50 packets/s in 64-byte minimum frames
            voip_stream_kbps: 25.6,
        }
    }

    /// Page load time in seconds.
    pub fn page_load_time_s(&self, tp_kbps: f64, d_ms: f64) -> f64 {
        let transfer = self.web.total_bytes as f64 * 8.0 / tp_kbps / 1000.0;
        transfer + self.web.request_rounds() as f64 * d_ms / 1000.0
    }

    /// Download time in seconds: payload at `tp` plus request and final ack.
    pub fn download_time_s(&self, tp_kbps: f64, d_ms: f64) -> f64 {
        self.download_bytes as f64 * 8.0 / 1000.0 / tp_kbps + 2.0 * d_ms / 1000.0
    }

    pub fn voip_loss(&self, tp_kbps: f64) -> f64 {
        (1.0 - tp_kbps / self.voip_stream_kbps).clamp(0.0, 1.0)
    }

    pub fn evaluate(&self, tp_kbps: f64, d_ms: f64) -> Result<f64, UtilityError> {
        if !(tp_kbps > 0.0) {
            return Err(UtilityError::Domain {
                what: "throughput",
                value: tp_kbps,
            });
        }
        if !(d_ms >= 0.0) {
            return Err(UtilityError::Domain {
                what: "delay",
                value: d_ms,
            });
        }
        match self.class {
            AppClass::Web => u_web(self.page_load_time_s(tp_kbps, d_ms)),
            AppClass::Dl => u_dl(self.download_time_s(tp_kbps, d_ms)),
            AppClass::Vod => self.vod.utility(tp_kbps, d_ms),
            AppClass::Live => self.live.utility(tp_kbps, d_ms),
            // the constrained direction's delay stands in for the response time
            AppClass::Ssh => u_ssh(d_ms, &self.ssh),
            AppClass::Voip => u_voip(self.voip_loss(tp_kbps), d_ms, &self.voip),
        }
    }
}
