//! Event loop of the simulator.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    aimd_step, discipline_admit, ms_to_us, shaper_release, us_to_ms, wire_time_us, Admission, AimdEvent, AimdState,
    AppMetrics, Discipline, FlowMetrics, IntervalStat, LinkMetrics, Micros, RequestRecord, SimConfig, SimError,
    SimMetrics, Verdict, Workload, MIN_PKT, US_PER_S,
};

#[derive(Debug, Clone)]
struct Pkt {
    flow: usize,
    seq: u64,
    wire: u32,
    payload: u32,
    emit: Micros,
    arrive: Micros,
    req: u64,
}

#[derive(Debug)]
enum Ev {
    Wake(usize),
    Issue(usize),
    StreamGen(usize),
    ServiceDone,
    Deliver(Pkt),
    Ack(usize, u32),
    Loss(Pkt),
    ShaperRelease(usize),
    End,
}

struct Entry {
    time: Micros,
    flow: u32,
    seq: u64,
    ev: Ev,
}

impl Entry {
    fn key(&self) -> (Micros, u32, u64) {
        (self.time, self.flow, self.seq)
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

enum Sender {
    Paced(Admission),
    Edge(Admission),
    Aimd {
        state: AimdState,
        inflight: u64,
        recover: u64,
    },
    Cbr,
}

enum Backlog {
    Infinite,
    Bytes(u64),
    Packets(u64),
}

struct Flow {
    sender: Sender,
    backlog: Backlog,
    pkt_bytes: u32,
    group: Option<usize>,
    req: u64,
    start: Micros,
    /// Stream packet spacing, fractional µs.
    stream_gap: Option<f64>,
    generated: u64,
    next_emit: Micros,
    wake_at: Option<Micros>,
    seq: u64,
    held: VecDeque<Pkt>,
    // window statistics, by emission time
    sent: u64,
    delivered: u64,
    dropped: u64,
    bytes: u64,
    delays: Vec<f64>,
    last_delay: Option<f64>,
    jitter_sum: f64,
    bins: Vec<(u64, u64, f64)>,
}

struct Group {
    app: usize,
    members: Vec<usize>,
    size: u64,
    think: Micros,
    min_interval: Micros,
    req: u64,
    active: bool,
    closed: bool,
    issued: Micros,
    delivered: u64,
    delay_sum: f64,
    delay_n: u64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    trace: Option<&'a mut dyn Write>,
    heap: BinaryHeap<Reverse<Entry>>,
    counter: u64,
    events: u64,
    warm: Micros,
    end: Micros,
    base: Micros,
    flows: Vec<Flow>,
    groups: Vec<Group>,
    apps: Vec<String>,
    records: Vec<Vec<RequestRecord>>,
    queue: VecDeque<Pkt>,
    queue_bytes: u64,
    busy: bool,
    /// When the bottleneck finishes its current packet, fractional µs.
    free_at: f64,
    busy_us: u64,
    max_queue_bytes: u64,
    max_queue_packets: u64,
    link_drops: u64,
    queue_delays: Vec<f64>,
}

/// Runs the simulation to completion.
pub fn run(config: &SimConfig) -> Result<SimMetrics, SimError> {
    Sim::new(config, None)?.run()
}

/// Like [`run`], also writing every queue event to `trace` as CSV.
pub fn run_traced(config: &SimConfig, trace: &mut dyn Write) -> Result<SimMetrics, SimError> {
    writeln!(trace, "time_us,flow_id,event,queue_bytes").map_err(|e| SimError::Trace(e.to_string()))?;
    Sim::new(config, Some(trace))?.run()
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, trace: Option<&'a mut dyn Write>) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut apps: Vec<String> = Vec::new();
        let mut app_start: Vec<Micros> = Vec::new();
        let mut app_index = BTreeMap::new();
        let mut groups: Vec<Group> = Vec::new();
        let mut group_of_app: BTreeMap<usize, usize> = BTreeMap::new();
        let mut flows = Vec::new();
        for (i, s) in cfg.sources.iter().enumerate() {
            let app = *app_index.entry(s.app_id.clone()).or_insert_with(|| {
                apps.push(s.app_id.clone());
                let offset = if cfg.start_jitter_ms > 0.0 {
                    rng.gen_range(0.0..=cfg.start_jitter_ms)
                } else {
                    0.0
                };
                app_start.push(ms_to_us(offset));
                apps.len() - 1
            });
            let start = s.start_ms.map(ms_to_us).unwrap_or(app_start[app]);
            let sender = match s.discipline {
                Discipline::Paced { rate_kbps } => Sender::Paced(Admission::pacer(rate_kbps)),
                Discipline::Policed {
                    rate_kbps,
                    bucket_bytes,
                } => Sender::Edge(Admission::Policer(super::TokenBucket::new(rate_kbps, bucket_bytes))),
                Discipline::Shaped {
                    rate_kbps,
                    bucket_bytes,
                    queue_bytes,
                } => Sender::Edge(Admission::shaper(rate_kbps, bucket_bytes, queue_bytes)),
                Discipline::Aimd {
                    mss_bytes,
                    initial_window,
                } => Sender::Aimd {
                    state: AimdState::new(mss_bytes, initial_window),
                    inflight: 0,
                    recover: 0,
                },
                Discipline::Cbr { .. } => Sender::Cbr,
            };
            let pkt_bytes = s.packet_bytes();
            let mut group = None;
            let (backlog, stream_gap) = match (&s.discipline, &s.workload) {
                (Discipline::Cbr { rate_kbps, .. }, _) => {
                    (Backlog::Packets(0), Some(wire_time_us(pkt_bytes, *rate_kbps)))
                }
                (_, Workload::Stream { rate_kbps }) => (Backlog::Packets(0), Some(wire_time_us(pkt_bytes, *rate_kbps))),
                (_, Workload::Backlogged) => (Backlog::Infinite, None),
                (
                    _,
                    Workload::Requests {
                        size_bytes,
                        think_ms,
                        min_interval_ms,
                    },
                ) => {
                    let g = *group_of_app.entry(app).or_insert_with(|| {
                        groups.push(Group {
                            app,
                            members: Vec::new(),
                            size: *size_bytes,
                            think: ms_to_us(*think_ms),
                            min_interval: ms_to_us(*min_interval_ms),
                            req: 0,
                            active: false,
                            closed: false,
                            issued: 0,
                            delivered: 0,
                            delay_sum: 0.0,
                            delay_n: 0,
                        });
                        groups.len() - 1
                    });
                    groups[g].members.push(i);
                    group = Some(g);
                    (Backlog::Bytes(0), None)
                }
            };
            flows.push(Flow {
                sender,
                backlog,
                pkt_bytes,
                group,
                req: 0,
                start,
                stream_gap,
                generated: 0,
                next_emit: 0,
                wake_at: None,
                seq: 0,
                held: VecDeque::new(),
                sent: 0,
                delivered: 0,
                dropped: 0,
                bytes: 0,
                delays: Vec::new(),
                last_delay: None,
                jitter_sum: 0.0,
                bins: Vec::new(),
            });
        }
        let warm = (cfg.warmup_s * US_PER_S as f64).round() as Micros;
        let end = (cfg.duration_s * US_PER_S as f64).round() as Micros;
        let n_bins = (end - warm).div_ceil(US_PER_S) as usize;
        for f in flows.iter_mut().filter(|f| f.stream_gap.is_some()) {
            f.bins = vec![(0, 0, 0.0); n_bins];
        }
        let n_apps = apps.len();
        let mut sim = Sim {
            cfg,
            trace,
            heap: BinaryHeap::new(),
            counter: 0,
            events: 0,
            warm,
            end,
            base: ms_to_us(cfg.base_delay_ms),
            flows,
            groups,
            apps,
            records: vec![Vec::new(); n_apps],
            queue: VecDeque::new(),
            queue_bytes: 0,
            busy: false,
            free_at: 0.0,
            busy_us: 0,
            max_queue_bytes: 0,
            max_queue_packets: 0,
            link_drops: 0,
            queue_delays: Vec::new(),
        };
        for g in 0..sim.groups.len() {
            let first = sim.groups[g].members[0];
            let at = sim.groups[g].members.iter().map(|&m| sim.flows[m].start).min().unwrap();
            sim.push(at, first, Ev::Issue(g));
        }
        for f in 0..sim.flows.len() {
            let at = sim.flows[f].start;
            match sim.flows[f].backlog {
                Backlog::Packets(_) => sim.push(at, f, Ev::StreamGen(f)),
                Backlog::Infinite => sim.schedule_wake(f, at),
                Backlog::Bytes(_) => {}
            }
        }
        sim.push(end, u32::MAX as usize, Ev::End);
        Ok(sim)
    }

    fn push(&mut self, time: Micros, flow: usize, ev: Ev) {
        self.counter += 1;
        self.heap.push(Reverse(Entry {
            time,
            flow: flow.min(u32::MAX as usize) as u32,
            seq: self.counter,
            ev,
        }));
    }

    fn schedule_wake(&mut self, f: usize, at: Micros) {
        match self.flows[f].wake_at {
            Some(t) if t <= at => {}
            _ => {
                self.flows[f].wake_at = Some(at);
                self.push(at, f, Ev::Wake(f));
            }
        }
    }

    fn trace(&mut self, now: Micros, flow: usize, event: &str) -> Result<(), SimError> {
        if let Some(w) = self.trace.as_mut() {
            writeln!(
                w,
                "{},{},{},{}",
                now, self.cfg.sources[flow].flow_id, event, self.queue_bytes
            )
            .map_err(|e| SimError::Trace(e.to_string()))?;
        }
        Ok(())
    }

    fn in_window(&self, t: Micros) -> bool {
        t >= self.warm && t < self.end
    }

    fn run(mut self) -> Result<SimMetrics, SimError> {
        while let Some(Reverse(e)) = self.heap.pop() {
            self.events += 1;
            let now = e.time;
            match e.ev {
                Ev::Wake(f) => {
                    if self.flows[f].wake_at == Some(now) {
                        self.flows[f].wake_at = None;
                    }
                    self.try_send(f, now)?;
                }
                Ev::Issue(g) => self.issue(g, now)?,
                Ev::StreamGen(f) => {
                    if now < self.end {
                        let fl = &mut self.flows[f];
                        if let Backlog::Packets(n) = &mut fl.backlog {
                            *n += 1;
                        }
                        fl.generated += 1;
                        let next = fl.start + (fl.generated as f64 * fl.stream_gap.unwrap()).round() as Micros;
                        self.push(next, f, Ev::StreamGen(f));
                        self.try_send(f, now)?;
                    }
                }
                Ev::ServiceDone => {
                    let p = self.queue.pop_front().expect("service of an empty queue");
                    self.queue_bytes -= p.wire as u64;
                    self.trace(now, p.flow, "deq")?;
                    let f = p.flow;
                    self.push(now + self.base, f, Ev::Deliver(p));
                    self.busy = false;
                    if !self.queue.is_empty() {
                        self.start_service(now);
                    }
                }
                Ev::Deliver(p) => self.deliver(p, now)?,
                Ev::Ack(f, wire) => {
                    if let Sender::Aimd { state, inflight, .. } = &mut self.flows[f].sender {
                        *inflight -= wire as u64;
                        *state = aimd_step(*state, AimdEvent::Ack);
                    }
                    self.try_send(f, now)?;
                }
                Ev::Loss(p) => {
                    let f = p.flow;
                    let next_seq = self.flows[f].seq;
                    if let Sender::Aimd {
                        state,
                        inflight,
                        recover,
                    } = &mut self.flows[f].sender
                    {
                        *inflight -= p.wire as u64;
                        if p.seq >= *recover {
                            *state = aimd_step(*state, AimdEvent::Loss);
                            *recover = next_seq;
                        }
                    }
                    let fl = &mut self.flows[f];
                    if let Backlog::Bytes(b) = &mut fl.backlog {
                        if fl.req == p.req {
                            *b += p.payload as u64;
                        }
                    }
                    self.try_send(f, now)?;
                }
                Ev::ShaperRelease(f) => {
                    while let Sender::Edge(adm) = &mut self.flows[f].sender {
                        if shaper_release(adm, now).is_none() {
                            break;
                        }
                        let p = self.flows[f].held.pop_front().expect("shaper queue out of sync");
                        self.arrive(p, now)?;
                    }
                    self.schedule_release(f, now);
                }
                Ev::End => self.close_requests(),
            }
        }
        Ok(self.finish())
    }

    fn schedule_release(&mut self, f: usize, now: Micros) {
        let fl = &self.flows[f];
        if let (Some(head), Sender::Edge(Admission::Shaper { bucket, .. })) = (fl.held.front(), &fl.sender) {
            let at = bucket.ready_at(head.wire).max(now + 1);
            self.push(at, f, Ev::ShaperRelease(f));
        }
    }

    fn issue(&mut self, g: usize, now: Micros) -> Result<(), SimError> {
        if now >= self.end {
            return Ok(());
        }
        let grp = &mut self.groups[g];
        grp.req += 1;
        grp.active = true;
        grp.issued = now;
        grp.delivered = 0;
        grp.delay_sum = 0.0;
        grp.delay_n = 0;
        let n = grp.members.len() as u64;
        let members = grp.members.clone();
        let (size, req) = (grp.size, grp.req);
        for (i, &m) in members.iter().enumerate() {
            let share = size / n + if (i as u64) < size % n { 1 } else { 0 };
            let fl = &mut self.flows[m];
            fl.backlog = Backlog::Bytes(share);
            fl.req = req;
            self.try_send(m, now)?;
        }
        Ok(())
    }

    fn close_requests(&mut self) {
        for g in 0..self.groups.len() {
            let grp = &mut self.groups[g];
            grp.closed = true;
            // a running request only stands in for apps with nothing completed
            if !grp.active || !self.records[grp.app].is_empty() {
                continue;
            }
            let elapsed = us_to_ms(self.end - grp.issued);
            let duration = (grp.delivered > 0).then(|| elapsed * grp.size as f64 / grp.delivered as f64);
            let delay = if grp.delay_n > 0 {
                grp.delay_sum / grp.delay_n as f64
            } else {
                self.cfg.base_delay_ms
            };
            self.records[grp.app].push(RequestRecord {
                issued_ms: us_to_ms(grp.issued),
                duration_ms: duration,
                mean_delay_ms: delay,
                bytes: grp.size,
                completed: false,
            });
        }
    }

    /// Releases as many packets as the flow's discipline allows at `now`.
    fn try_send(&mut self, f: usize, now: Micros) -> Result<(), SimError> {
        loop {
            if now >= self.end {
                return Ok(());
            }
            let fl = &self.flows[f];
            let payload = match fl.backlog {
                Backlog::Infinite => fl.pkt_bytes,
                Backlog::Bytes(0) | Backlog::Packets(0) => return Ok(()),
                Backlog::Bytes(b) => (fl.pkt_bytes as u64).min(b) as u32,
                Backlog::Packets(_) => fl.pkt_bytes,
            };
            let wire = payload.max(MIN_PKT);
            let earliest = match &fl.sender {
                Sender::Paced(Admission::Pacer { next, .. }) => next.ceil() as Micros,
                Sender::Aimd { state, inflight, .. } => {
                    if *inflight > 0 && (*inflight + wire as u64) as f64 > state.cwnd {
                        return Ok(());
                    }
                    fl.next_emit
                }
                _ => fl.next_emit,
            };
            if earliest > now {
                self.schedule_wake(f, earliest);
                return Ok(());
            }
            let fl = &mut self.flows[f];
            match &mut fl.backlog {
                Backlog::Bytes(b) => *b -= payload as u64,
                Backlog::Packets(n) => *n -= 1,
                Backlog::Infinite => {}
            }
            self.emit(f, payload, wire, now)?;
        }
    }

    fn emit(&mut self, f: usize, payload: u32, wire: u32, now: Micros) -> Result<(), SimError> {
        let in_window = self.in_window(now);
        let warm = self.warm;
        let access = self.cfg.access_rate_kbps;
        let fl = &mut self.flows[f];
        let p = Pkt {
            flow: f,
            seq: fl.seq,
            wire,
            payload,
            emit: now,
            arrive: now,
            req: fl.req,
        };
        fl.seq += 1;
        if in_window {
            fl.sent += 1;
            if let Some(b) = fl.bins.get_mut(((now - warm) / US_PER_S) as usize) {
                b.0 += 1;
            }
        }
        fl.next_emit = now + wire_time_us(wire, access).ceil() as Micros;
        match &mut fl.sender {
            Sender::Paced(adm) => {
                discipline_admit(adm, wire, now);
                self.arrive(p, now)
            }
            Sender::Aimd { inflight, .. } => {
                *inflight += wire as u64;
                self.arrive(p, now)
            }
            Sender::Cbr => self.arrive(p, now),
            Sender::Edge(adm) => match discipline_admit(adm, wire, now) {
                Verdict::Transmit(_) => self.arrive(p, now),
                Verdict::Drop => {
                    self.lost(p, now, 0);
                    Ok(())
                }
                Verdict::Enqueue => {
                    fl.held.push_back(p);
                    if fl.held.len() == 1 {
                        self.schedule_release(f, now);
                    }
                    Ok(())
                }
            },
        }
    }

    /// Accounts a dropped packet and tells the sender after `notice` µs.
    fn lost(&mut self, p: Pkt, now: Micros, notice: Micros) {
        let counted = self.in_window(p.emit);
        let fl = &mut self.flows[p.flow];
        if counted {
            fl.dropped += 1;
        }
        let reacts = matches!(fl.sender, Sender::Aimd { .. }) || matches!(fl.backlog, Backlog::Bytes(_));
        if reacts {
            let f = p.flow;
            self.push(now + notice, f, Ev::Loss(p));
        }
    }

    fn arrive(&mut self, mut p: Pkt, now: Micros) -> Result<(), SimError> {
        let f = p.flow;
        if self.queue_bytes + p.wire as u64 > self.cfg.buffer_bytes {
            if self.in_window(p.emit) {
                self.link_drops += 1;
            }
            self.trace(now, f, "drop")?;
            let drain = (self.queue_bytes as f64 * 8.0 / self.cfg.bottleneck_capacity_kbps * 1e3) as Micros;
            self.lost(p, now, drain + 2 * self.base);
            return Ok(());
        }
        p.arrive = now;
        self.queue_bytes += p.wire as u64;
        self.queue.push_back(p);
        if self.in_window(now) {
            self.max_queue_bytes = self.max_queue_bytes.max(self.queue_bytes);
            self.max_queue_packets = self.max_queue_packets.max(self.queue.len() as u64);
        }
        self.trace(now, f, "enq")?;
        if !self.busy {
            self.start_service(now);
        }
        Ok(())
    }

    fn start_service(&mut self, now: Micros) {
        let head = self.queue.front().expect("service of an empty queue");
        if self.in_window(head.emit) {
            self.queue_delays.push(us_to_ms(now - head.arrive));
        }
        self.free_at = self.free_at.max(now as f64) + wire_time_us(head.wire, self.cfg.bottleneck_capacity_kbps);
        let done = (self.free_at.round() as Micros).max(now);
        let lo = now.max(self.warm);
        let hi = done.min(self.end);
        if hi > lo {
            self.busy_us += hi - lo;
        }
        self.busy = true;
        let f = head.flow;
        self.push(done, f, Ev::ServiceDone);
    }

    fn deliver(&mut self, p: Pkt, now: Micros) -> Result<(), SimError> {
        let f = p.flow;
        let delay = us_to_ms(now - p.emit);
        let counted = self.in_window(p.emit);
        let warm = self.warm;
        let received = self.in_window(now);
        let fl = &mut self.flows[f];
        if counted {
            fl.delivered += 1;
            fl.delays.push(delay);
            if let Some(prev) = fl.last_delay {
                fl.jitter_sum += (delay - prev).abs();
            }
            fl.last_delay = Some(delay);
            if let Some(b) = fl.bins.get_mut(((p.emit - warm) / US_PER_S) as usize) {
                b.1 += 1;
                b.2 += delay;
            }
        }
        if received {
            fl.bytes += p.payload as u64;
        }
        let group = fl.group;
        if let Sender::Aimd { .. } = fl.sender {
            let at = now + self.base;
            self.push(at, f, Ev::Ack(f, p.wire));
        }
        if let Some(g) = group {
            let grp = &mut self.groups[g];
            if grp.active && grp.req == p.req {
                grp.delivered += p.payload as u64;
                grp.delay_sum += delay;
                grp.delay_n += 1;
                if grp.delivered >= grp.size {
                    grp.active = false;
                    if !grp.closed && now >= warm {
                        let rec = RequestRecord {
                            issued_ms: us_to_ms(grp.issued),
                            duration_ms: Some(us_to_ms(now - grp.issued)),
                            mean_delay_ms: grp.delay_sum / grp.delay_n as f64,
                            bytes: grp.size,
                            completed: true,
                        };
                        self.records[grp.app].push(rec);
                    }
                    let next = (now + grp.think).max(grp.issued + grp.min_interval);
                    let first = grp.members[0];
                    if next < self.end {
                        self.push(next, first, Ev::Issue(g));
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> SimMetrics {
        let window_s = us_to_ms(self.end - self.warm) / 1000.0;
        let mut intervals: Vec<Vec<IntervalStat>> = vec![Vec::new(); self.apps.len()];
        let mut app_of_flow = BTreeMap::new();
        for (i, a) in self.apps.iter().enumerate() {
            app_of_flow.insert(a.as_str(), i);
        }
        let flows: Vec<FlowMetrics> = self
            .flows
            .into_iter()
            .zip(&self.cfg.sources)
            .map(|(fl, s)| {
                let app = app_of_flow[s.app_id.as_str()];
                for (i, &(sent, delivered, sum)) in fl.bins.iter().enumerate() {
                    if sent > 0 {
                        intervals[app].push(IntervalStat {
                            start_s: self.cfg.warmup_s + i as f64,
                            loss: (sent - delivered) as f64 / sent as f64,
                            mean_delay_ms: if delivered > 0 { sum / delivered as f64 } else { 0.0 },
                        });
                    }
                }
                let n = fl.delays.len();
                FlowMetrics {
                    flow_id: s.flow_id.clone(),
                    app_id: s.app_id.clone(),
                    sent: fl.sent,
                    delivered: fl.delivered,
                    dropped: fl.dropped,
                    loss: if fl.sent > 0 {
                        fl.dropped as f64 / fl.sent as f64
                    } else {
                        0.0
                    },
                    throughput_kbps: fl.bytes as f64 * 8.0 / window_s / 1000.0,
                    mean_delay_ms: if n > 0 {
                        fl.delays.iter().sum::<f64>() / n as f64
                    } else {
                        0.0
                    },
                    jitter_ms: if n > 1 { fl.jitter_sum / (n - 1) as f64 } else { 0.0 },
                    delays_ms: fl.delays,
                }
            })
            .collect();
        let apps = self
            .apps
            .into_iter()
            .zip(self.records)
            .zip(intervals)
            .map(|((app_id, requests), intervals)| AppMetrics {
                app_id,
                requests,
                intervals,
            })
            .collect();
        let qd = &self.queue_delays;
        let (mean, p95) = if qd.is_empty() {
            (0.0, 0.0)
        } else {
            (
                qd.iter().sum::<f64>() / qd.len() as f64,
                crate::metrics::percentile(qd, 95.0).unwrap_or(0.0),
            )
        };
        let sent: u64 = flows.iter().map(|f| f.sent).sum();
        let dropped: u64 = flows.iter().map(|f| f.dropped).sum();
        SimMetrics {
            link: LinkMetrics {
                max_queue_bytes: self.max_queue_bytes,
                max_queue_packets: self.max_queue_packets,
                utilization: self.busy_us as f64 / (self.end - self.warm) as f64,
                queue_delay_mean_ms: mean,
                queue_delay_p95_ms: p95,
                drops: self.link_drops,
                queue_delays_ms: self.queue_delays,
            },
            flows,
            apps,
            sent,
            dropped,
            loss: if sent > 0 { dropped as f64 / sent as f64 } else { 0.0 },
            events: self.events,
        }
    }
}
