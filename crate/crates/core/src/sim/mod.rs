//! Discrete-event packet simulator: traffic sources with different sending
//! disciplines sharing one drop-tail bottleneck.

mod engine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationResult;

pub use engine::{run, run_traced};

/// Simulation clock, integer microseconds.
pub type Micros = u64;

pub const US_PER_MS: f64 = 1e3;
pub const US_PER_S: u64 = 1_000_000;

/// Smallest and largest packet on the wire, bytes.
pub const MIN_PKT: u32 = 64;
pub const MAX_PKT: u32 = 9000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error("rate must be positive, found {0} kbps")]
    Rate(f64),
    #[error("allocation does not match the simulated bottleneck: {0}")]
    Mapping(String),
    #[error("trace output failed: {0}")]
    Trace(String),
}

pub fn ms_to_us(ms: f64) -> Micros {
    (ms * US_PER_MS).round() as Micros
}

pub fn us_to_ms(us: Micros) -> f64 {
    us as f64 / US_PER_MS
}

/// Wire time of `bytes` at `rate_kbps`, fractional microseconds.
pub fn wire_time_us(bytes: u32, rate_kbps: f64) -> f64 {
    bytes as f64 * 8.0 / rate_kbps * US_PER_MS
}

/// Earliest time a pacer releases the packet after one of `pkt_len` bytes
/// left at `now`.
pub fn next_departure(now: Micros, pkt_len: u32, rate_kbps: f64) -> Result<Micros, SimError> {
    if !(rate_kbps > 0.0) {
        return Err(SimError::Rate(rate_kbps));
    }
    Ok(now + wire_time_us(pkt_len, rate_kbps).round() as Micros)
}

/// How a source releases packets into the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Discipline {
    /// Packets spaced at `rate_kbps`.
    Paced { rate_kbps: f64 },
    /// Emitted at access rate; a token bucket drops the excess.
    Policed { rate_kbps: f64, bucket_bytes: u32 },
    /// Emitted at access rate; a token bucket holds the excess in a queue.
    Shaped {
        rate_kbps: f64,
        bucket_bytes: u32,
        queue_bytes: u32,
    },
    /// Loss-driven congestion window.
    Aimd { mss_bytes: u32, initial_window: u32 },
    /// Fixed-size packets at a constant rate, whatever happens to them.
    Cbr { rate_kbps: f64, pkt_bytes: u32 },
}

/// When a source has data to send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Workload {
    /// Always has data.
    Backlogged,
    /// Request/response exchanges of `size_bytes`, issued `think_ms` after
    /// the previous one completed and at least `min_interval_ms` after the
    /// previous one was issued. Sources with the same `app_id` split each
    /// request evenly and complete together.
    Requests {
        size_bytes: u64,
        think_ms: f64,
        #[serde(default)]
        min_interval_ms: f64,
    },
    /// A constant-rate packet stream, e.g. voice.
    Stream { rate_kbps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub flow_id: String,
    /// Application the flow belongs to; groups parallel connections.
    pub app_id: String,
    pub discipline: Discipline,
    #[serde(default = "default_pkt_len")]
    pub pkt_len: u32,
    #[serde(default = "default_workload")]
    pub workload: Workload,
    /// Start offset; drawn per application from the seeded RNG when absent.
    #[serde(default)]
    pub start_ms: Option<f64>,
}

fn default_pkt_len() -> u32 {
    1500
}

fn default_workload() -> Workload {
    Workload::Backlogged
}

impl SourceSpec {
    pub fn new(flow_id: impl Into<String>, discipline: Discipline) -> Self {
        let flow_id = flow_id.into();
        Self {
            app_id: flow_id.clone(),
            flow_id,
            discipline,
            pkt_len: default_pkt_len(),
            workload: Workload::Backlogged,
            start_ms: None,
        }
    }

    /// Size of a full packet of this source.
    pub fn packet_bytes(&self) -> u32 {
        match self.discipline {
            Discipline::Cbr { pkt_bytes, .. } => pkt_bytes,
            Discipline::Aimd { mss_bytes, .. } => mss_bytes,
            _ => self.pkt_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub bottleneck_capacity_kbps: f64,
    #[serde(default = "default_buffer")]
    pub buffer_bytes: u64,
    /// One-way propagation delay, ms.
    pub base_delay_ms: f64,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub rng_seed: u64,
    /// Line rate of unpaced senders, kbps.
    #[serde(default = "default_access")]
    pub access_rate_kbps: f64,
    /// Upper bound of the random start offset, ms.
    #[serde(default = "default_jitter")]
    pub start_jitter_ms: f64,
    pub sources: Vec<SourceSpec>,
}

fn default_buffer() -> u64 {
    1_000_000
}

fn default_access() -> f64 {
    1_000_000.0
}

fn default_jitter() -> f64 {
    1000.0
}

impl SimConfig {
    pub fn new(capacity_kbps: f64, base_delay_ms: f64, duration_s: f64, warmup_s: f64) -> Self {
        Self {
            bottleneck_capacity_kbps: capacity_kbps,
            buffer_bytes: default_buffer(),
            base_delay_ms,
            duration_s,
            warmup_s,
            rng_seed: 0,
            access_rate_kbps: default_access(),
            start_jitter_ms: default_jitter(),
            sources: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if !(self.bottleneck_capacity_kbps > 0.0 && self.bottleneck_capacity_kbps.is_finite()) {
            return bad(format!("capacity {} must be positive", self.bottleneck_capacity_kbps));
        }
        if self.buffer_bytes == 0 {
            return bad("buffer_bytes must be positive".into());
        }
        if !(self.base_delay_ms >= 0.0) {
            return bad("base_delay_ms must be >= 0".into());
        }
        if !(self.warmup_s >= 0.0 && self.duration_s > self.warmup_s && self.duration_s.is_finite()) {
            return bad(format!(
                "need duration > warmup >= 0, found duration {} warmup {}",
                self.duration_s, self.warmup_s
            ));
        }
        if !(self.access_rate_kbps > 0.0) {
            return bad("access_rate_kbps must be positive".into());
        }
        if !(self.start_jitter_ms >= 0.0) {
            return bad("start_jitter_ms must be >= 0".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.sources {
            let f = &s.flow_id;
            if !ids.insert(f.as_str()) {
                return bad(format!("duplicate flow id {f}"));
            }
            if !(MIN_PKT..=MAX_PKT).contains(&s.packet_bytes()) {
                return bad(format!(
                    "flow {f}: packet length {} outside [64, 9000]",
                    s.packet_bytes()
                ));
            }
            let rate_ok = match s.discipline {
                Discipline::Paced { rate_kbps }
                | Discipline::Policed { rate_kbps, .. }
                | Discipline::Shaped { rate_kbps, .. }
                | Discipline::Cbr { rate_kbps, .. } => rate_kbps > 0.0 && rate_kbps.is_finite(),
                Discipline::Aimd { initial_window, .. } => initial_window >= 1,
            };
            if !rate_ok {
                return bad(format!("flow {f}: rate must be positive"));
            }
            match s.discipline {
                Discipline::Policed { bucket_bytes, .. } | Discipline::Shaped { bucket_bytes, .. }
                    if bucket_bytes < s.pkt_len =>
                {
                    return bad(format!("flow {f}: bucket smaller than one packet"));
                }
                _ => {}
            }
            match &s.workload {
                Workload::Requests {
                    size_bytes,
                    think_ms,
                    min_interval_ms,
                } => {
                    if *size_bytes == 0 || !(*think_ms >= 0.0) || !(*min_interval_ms >= 0.0) {
                        return bad(format!("flow {f}: invalid request workload"));
                    }
                }
                Workload::Stream { rate_kbps } if !(*rate_kbps > 0.0) => {
                    return bad(format!("flow {f}: stream rate must be positive"));
                }
                _ => {}
            }
            if let Some(ms) = s.start_ms {
                if !(ms >= 0.0) {
                    return bad(format!("flow {f}: start_ms must be >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Congestion window state, bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AimdState {
    pub mss: f64,
    pub cwnd: f64,
    pub ssthresh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AimdEvent {
    Ack,
    Loss,
}

impl AimdState {
    pub fn new(mss: u32, initial_window: u32) -> Self {
        Self {
            mss: mss as f64,
            cwnd: (mss * initial_window) as f64,
            ssthresh: f64::INFINITY,
        }
    }
}

/// Slow start adds one mss per ack, congestion avoidance one mss per window;
/// a loss halves the window, never below one mss.
pub fn aimd_step(state: AimdState, event: AimdEvent) -> AimdState {
    let mut s = state;
    match event {
        AimdEvent::Ack if s.cwnd < s.ssthresh => s.cwnd += s.mss,
        AimdEvent::Ack => s.cwnd += s.mss * s.mss / s.cwnd,
        AimdEvent::Loss => {
            s.cwnd = (s.cwnd / 2.0).max(s.mss);
            s.ssthresh = s.cwnd;
        }
    }
    s
}

/// Token bucket in bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    pub rate_kbps: f64,
    pub depth: f64,
    pub tokens: f64,
    pub updated: Micros,
}

impl TokenBucket {
    /// A full bucket.
    pub fn new(rate_kbps: f64, depth_bytes: u32) -> Self {
        Self {
            rate_kbps,
            depth: depth_bytes as f64,
            tokens: depth_bytes as f64,
            updated: 0,
        }
    }

    pub fn refill(&mut self, now: Micros) {
        if now > self.updated {
            let add = (now - self.updated) as f64 * self.rate_kbps / 8.0 / US_PER_MS;
            self.tokens = (self.tokens + add).min(self.depth);
            self.updated = now;
        }
    }

    /// Time at which `bytes` tokens will be available.
    pub fn ready_at(&self, bytes: u32) -> Micros {
        let missing = bytes as f64 - self.tokens;
        if missing <= 0.0 {
            self.updated
        } else {
            self.updated + (missing * 8.0 / self.rate_kbps * US_PER_MS).ceil() as Micros
        }
    }
}

/// Per-flow state of an admission discipline.
#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Policer(TokenBucket),
    Shaper {
        bucket: TokenBucket,
        queued: std::collections::VecDeque<u32>,
        queued_bytes: u64,
        capacity: u64,
    },
    Pacer {
        rate_kbps: f64,
        /// Earliest next release, fractional microseconds.
        next: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Transmit(Micros),
    Drop,
    Enqueue,
}

impl Admission {
    pub fn pacer(rate_kbps: f64) -> Self {
        Admission::Pacer { rate_kbps, next: 0.0 }
    }

    pub fn shaper(rate_kbps: f64, bucket_bytes: u32, queue_bytes: u32) -> Self {
        Admission::Shaper {
            bucket: TokenBucket::new(rate_kbps, bucket_bytes),
            queued: Default::default(),
            queued_bytes: 0,
            capacity: queue_bytes as u64,
        }
    }
}

/// Decides the fate of a packet of `pkt_len` bytes offered at `now`.
/// Policer: pass with tokens, else drop. Shaper: pass with tokens and an
/// empty queue, else queue while room remains, else drop. Pacer: always
/// accept, release at the next free slot.
pub fn discipline_admit(state: &mut Admission, pkt_len: u32, now: Micros) -> Verdict {
    match state {
        Admission::Policer(b) => {
            b.refill(now);
            if b.tokens >= pkt_len as f64 {
                b.tokens -= pkt_len as f64;
                Verdict::Transmit(now)
            } else {
                Verdict::Drop
            }
        }
        Admission::Shaper {
            bucket,
            queued,
            queued_bytes,
            capacity,
        } => {
            bucket.refill(now);
            if queued.is_empty() && bucket.tokens >= pkt_len as f64 {
                bucket.tokens -= pkt_len as f64;
                Verdict::Transmit(now)
            } else if *queued_bytes + pkt_len as u64 <= *capacity {
                queued.push_back(pkt_len);
                *queued_bytes += pkt_len as u64;
                Verdict::Enqueue
            } else {
                Verdict::Drop
            }
        }
        Admission::Pacer { rate_kbps, next } => {
            let at = next.max(now as f64);
            *next = at + wire_time_us(pkt_len, *rate_kbps);
            Verdict::Transmit(at.ceil() as Micros)
        }
    }
}

/// Releases the shaper's head packet if its tokens are available.
pub fn shaper_release(state: &mut Admission, now: Micros) -> Option<u32> {
    let Admission::Shaper {
        bucket,
        queued,
        queued_bytes,
        ..
    } = state
    else {
        return None;
    };
    bucket.refill(now);
    let &head = queued.front()?;
    if bucket.tokens + 1e-6 >= head as f64 {
        bucket.tokens = (bucket.tokens - head as f64).max(0.0);
        queued.pop_front();
        *queued_bytes -= head as u64;
        Some(head)
    } else {
        None
    }
}

/// One completed (or projected) request of an application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub issued_ms: f64,
    /// Time from issue until the last byte arrived. For a request still
    /// running at the end, the elapsed time scaled by the undelivered share;
    /// `None` if nothing arrived.
    pub duration_ms: Option<f64>,
    /// Mean one-way delay of the request's packets.
    pub mean_delay_ms: f64,
    pub bytes: u64,
    pub completed: bool,
}

/// Loss and delay of a stream over one measurement interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStat {
    pub start_s: f64,
    pub loss: f64,
    pub mean_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow_id: String,
    pub app_id: String,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub loss: f64,
    pub throughput_kbps: f64,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    #[serde(skip)]
    pub delays_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMetrics {
    pub app_id: String,
    pub requests: Vec<RequestRecord>,
    pub intervals: Vec<IntervalStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub max_queue_bytes: u64,
    pub max_queue_packets: u64,
    pub utilization: f64,
    pub queue_delay_mean_ms: f64,
    pub queue_delay_p95_ms: f64,
    pub drops: u64,
    #[serde(skip)]
    pub queue_delays_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub flows: Vec<FlowMetrics>,
    pub apps: Vec<AppMetrics>,
    pub link: LinkMetrics,
    pub sent: u64,
    pub dropped: u64,
    pub loss: f64,
    pub events: u64,
}

impl SimMetrics {
    pub fn flow(&self, id: &str) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.flow_id == id)
    }

    pub fn app(&self, id: &str) -> Option<&AppMetrics> {
        self.apps.iter().find(|a| a.app_id == id)
    }
}

/// One paced source per application at its allocated rate, in id order.
pub fn allocation_to_sim(result: &AllocationResult, template: &SimConfig) -> Result<SimConfig, SimError> {
    allocation_to_sim_with(result, template, |_| (Workload::Backlogged, default_pkt_len()))
}

/// Like [`allocation_to_sim`], with a per-application workload and packet
/// size. Every allocated path must be the template's single bottleneck.
pub fn allocation_to_sim_with(
    result: &AllocationResult,
    template: &SimConfig,
    mut workload: impl FnMut(&crate::allocation::AppAllocation) -> (Workload, u32),
) -> Result<SimConfig, SimError> {
    let mut bottleneck: Option<(&str, &str)> = None;
    for l in &result.links {
        if l.usage_kbps > 0.0 {
            if let Some(b) = bottleneck {
                if b != (l.from.as_str(), l.to.as_str()) {
                    return Err(SimError::Mapping(format!(
                        "traffic on {}->{} and {}->{}; only one bottleneck is simulated",
                        b.0, b.1, l.from, l.to
                    )));
                }
            }
            bottleneck = Some((&l.from, &l.to));
            if l.capacity_kbps != template.bottleneck_capacity_kbps {
                return Err(SimError::Mapping(format!(
                    "link {}->{} has capacity {} but the template bottleneck has {}",
                    l.from, l.to, l.capacity_kbps, template.bottleneck_capacity_kbps
                )));
            }
        }
    }
    let mut apps: Vec<_> = result.apps.iter().collect();
    apps.sort_by(|a, b| a.id.cmp(&b.id));
    let mut cfg = template.clone();
    cfg.sources = apps
        .into_iter()
        .map(|a| {
            let (workload, pkt_len) = workload(a);
            SourceSpec {
                flow_id: a.id.clone(),
                app_id: a.id.clone(),
                discipline: Discipline::Paced { rate_kbps: a.tp_kbps },
                pkt_len,
                workload,
                start_ms: None,
            }
        })
        .collect();
    Ok(cfg)
}
