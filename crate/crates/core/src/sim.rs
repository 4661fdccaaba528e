//! Synthetic per-second throughput traces on a grid of devices.
//!
//! Each run is a `T x D` matrix in kbps: background chatter on every device
//! for the whole trace plus, for the four applications, a scheduled traffic
//! pattern during the active window (the trace minus an idle lead-in and
//! lead-out). A transmission contributes its size to the sender and to every
//! receiver in the same second.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The five traffic classes.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum AppKind {
    Aggregation,
    Broadcast,
    Consensus,
    Dgd,
    #[serde(rename = "baseref")]
    BaseRef,
}

impl AppKind {
    pub const ALL: [AppKind; 5] = [
        AppKind::Aggregation,
        AppKind::Broadcast,
        AppKind::Consensus,
        AppKind::Dgd,
        AppKind::BaseRef,
    ];

    /// The decentralized applications, i.e. every class except the idle reference.
    pub const APPLICATIONS: [AppKind; 4] = [
        AppKind::Aggregation,
        AppKind::Broadcast,
        AppKind::Consensus,
        AppKind::Dgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AppKind::Aggregation => "aggregation",
            AppKind::Broadcast => "broadcast",
            AppKind::Consensus => "consensus",
            AppKind::Dgd => "dgd",
            AppKind::BaseRef => "baseref",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AppKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AppKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        AppKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| {
                let valid: Vec<_> = AppKind::ALL.iter().map(|k| k.name()).collect();
                Error::UnknownLabel(format!("unknown application '{s}' (valid: {})", valid.join(", ")))
            })
    }
}

/// A `rows x cols` 4-connected grid with a BFS spanning tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub rows: usize,
    pub cols: usize,
    pub root: usize,
    /// Sorted neighbor lists.
    pub adjacency: Vec<Vec<usize>>,
    /// Tree parent of each device; `None` for the root.
    pub parent: Vec<Option<usize>>,
    /// Tree depth (hop count from the root).
    pub depth: Vec<usize>,
}

impl Topology {
    pub fn device_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn children(&self, device: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(device))
            .map(|(c, _)| c)
    }

    pub fn is_leaf(&self, device: usize) -> bool {
        self.children(device).next().is_none()
    }
}

/// Builds the grid and its BFS tree from `root`; neighbors are visited in
/// increasing index order, so the tree is deterministic.
pub fn build_grid_topology(rows: usize, cols: usize, root: usize) -> Result<Topology> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("grid must be non-empty, got {rows}x{cols}")));
    }
    let n = rows * cols;
    if root >= n {
        return Err(Error::invalid(format!("root {root} out of range for {n} devices")));
    }

    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|d| {
            let (r, c) = (d / cols, d % cols);
            let mut nbrs = Vec::with_capacity(4);
            if r > 0 {
                nbrs.push(d - cols);
            }
            if c > 0 {
                nbrs.push(d - 1);
            }
            if c + 1 < cols {
                nbrs.push(d + 1);
            }
            if r + 1 < rows {
                nbrs.push(d + cols);
            }
            nbrs
        })
        .collect();

    let mut parent = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(d) = queue.pop_front() {
        for &nb in &adjacency[d] {
            if depth[nb] == usize::MAX {
                depth[nb] = depth[d] + 1;
                parent[nb] = Some(d);
                queue.push_back(nb);
            }
        }
    }

    Ok(Topology {
        rows,
        cols,
        root,
        adjacency,
        parent,
        depth,
    })
}

/// Schedule knobs shared by all applications. Not every field applies to
/// every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Idle seconds before and after the application's active window.
    pub lead_s: usize,
    /// Multiplicative jitter half-width applied to every transmission.
    pub jitter: f64,
    /// Mean background chatter per device, kbps.
    pub background_kbps: f64,
    /// Half-width of the uniform background distribution relative to its
    /// mean: each device-second draws from `background * U[1 - s, 1 + s]`.
    pub background_spread: f64,
    /// Half-width of the per-device background rate factor, drawn once per
    /// run: device `d` chatters at `background * U[1 - h, 1 + h]` on average.
    pub background_heterogeneity: f64,
    /// Round period for the tree schedules, iteration period for DGD.
    pub period_s: usize,
    /// Relative jitter of the gap between successive rounds or iterations:
    /// each gap is `period_s * U[1 - r, 1 + r]`, rounded, at least one second.
    pub period_jitter: f64,
    /// Longest duration of a single transfer; each transmission's payload is
    /// spread over `1..=transfer_s` seconds.
    pub transfer_s: usize,
    /// Seconds of neighbor exchange at the start of each DGD iteration.
    pub exchange_s: usize,
    /// Upper bound of the uniform per-device start/stop offset (consensus).
    pub start_jitter_s: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            lead_s: 25,
            jitter: 0.2,
            background_kbps: 10.20,
            background_spread: 0.2,
            background_heterogeneity: 0.6,
            period_s: 24,
            period_jitter: 0.0,
            transfer_s: 1,
            exchange_s: 2,
            start_jitter_s: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub kind: AppKind,
    pub duration_s: usize,
    pub mean_throughput_kbps: f64,
    pub params: ScheduleParams,
}

impl AppProfile {
    /// Duration and mean throughput from the reference measurements.
    pub fn default_for(kind: AppKind) -> Self {
        let (duration_s, mean_throughput_kbps) = match kind {
            AppKind::Aggregation => (195, 44.25),
            AppKind::Broadcast => (195, 23.77),
            AppKind::Consensus => (202, 499.04),
            AppKind::Dgd => (242, 533.35),
            AppKind::BaseRef => (300, 10.20),
        };
        let base = ScheduleParams::default();
        let params = match kind {
            AppKind::Aggregation => ScheduleParams { period_s: 8, jitter: 0.25, ..base },
            AppKind::Broadcast => ScheduleParams { period_s: 6, jitter: 0.25, ..base },
            AppKind::Dgd => ScheduleParams { period_s: 3, exchange_s: 2, ..base },
            AppKind::Consensus => ScheduleParams { period_s: 3, exchange_s: 2, ..base },
            AppKind::BaseRef => base,
        };
        Self {
            kind,
            duration_s,
            mean_throughput_kbps,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if self.duration_s == 0 {
            return Err(Error::invalid("profile duration must be positive"));
        }
        if !(self.mean_throughput_kbps > 0.0) {
            return Err(Error::invalid("profile mean throughput must be positive"));
        }
        if !(0.0..1.0).contains(&p.jitter) {
            return Err(Error::invalid(format!("jitter {} outside [0, 1)", p.jitter)));
        }
        if !(0.0..=1.0).contains(&p.background_heterogeneity) {
            return Err(Error::invalid(format!(
                "background heterogeneity {} outside [0, 1]",
                p.background_heterogeneity
            )));
        }
        if !(0.0..=1.0).contains(&p.background_spread) {
            return Err(Error::invalid(format!("background spread {} outside [0, 1]", p.background_spread)));
        }
        if !(0.0..1.0).contains(&p.period_jitter) {
            return Err(Error::invalid(format!("period jitter {} outside [0, 1)", p.period_jitter)));
        }
        if p.background_kbps < 0.0 {
            return Err(Error::invalid("background throughput must be nonnegative"));
        }
        if self.kind != AppKind::BaseRef {
            if 2 * p.lead_s >= self.duration_s {
                return Err(Error::invalid("lead-in/lead-out leave no active window"));
            }
            if p.background_kbps >= self.mean_throughput_kbps {
                return Err(Error::invalid(
                    "background throughput must be below the application mean",
                ));
            }
            if p.transfer_s == 0 {
                return Err(Error::invalid("transfer duration must be at least one second"));
            }
            if p.period_s == 0 {
                return Err(Error::invalid("schedule period must be positive"));
            }
        }
        Ok(())
    }
}

/// One recorded run: `duration x devices` samples in kbps, row-major by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputTrace {
    pub app_label: AppKind,
    pub run_id: u32,
    pub seed: u64,
    pub anomaly_intensity: f64,
    pub rows: usize,
    pub cols: usize,
    /// Mean throughput of the labeled application's profile; the anomaly
    /// injector scales against it.
    pub mean_throughput_kbps: f64,
    pub samples: Vec<Vec<f64>>,
}

impl ThroughputTrace {
    pub fn duration(&self) -> usize {
        self.samples.len()
    }

    pub fn device_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn grand_mean(&self) -> f64 {
        let n: usize = self.samples.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.samples.iter().flatten().sum::<f64>() / n as f64
    }
}

/// Accumulates scheduled transmissions in payload units.
struct Schedule {
    devices: usize,
    /// Unjittered unit counts, used to calibrate the payload size.
    units: Vec<f64>,
    /// Same transmissions with their jitter factors applied.
    jittered: Vec<f64>,
}

impl Schedule {
    fn new(duration: usize, devices: usize) -> Self {
        Self {
            devices,
            units: vec![0.0; duration * devices],
            jittered: vec![0.0; duration * devices],
        }
    }

    /// One transmission from `sender` to `receivers` starting at `t`. The
    /// payload is spread evenly over a random duration of up to
    /// `p.transfer_s` seconds, truncated at the end of the trace.
    fn transmit(
        &mut self,
        rng: &mut ChaCha8Rng,
        p: &ScheduleParams,
        t: usize,
        sender: usize,
        receivers: impl IntoIterator<Item = usize>,
    ) {
        let factor = jitter_factor(rng, p.jitter);
        let span = if p.transfer_s > 1 { rng.gen_range(1..=p.transfer_s) } else { 1 };
        let duration = self.units.len() / self.devices;
        let seconds = span.min(duration - t);
        let share = 1.0 / span as f64;
        let mut add = |d: usize| {
            for k in 0..seconds {
                let i = (t + k) * self.devices + d;
                self.units[i] += share;
                self.jittered[i] += factor * share;
            }
        };
        add(sender);
        for r in receivers {
            add(r);
        }
    }
}

fn jitter_factor(rng: &mut ChaCha8Rng, jitter: f64) -> f64 {
    if jitter == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - jitter..=1.0 + jitter)
    }
}

fn next_gap(rng: &mut ChaCha8Rng, p: &ScheduleParams) -> usize {
    let g = p.period_s as f64 * jitter_factor(rng, p.period_jitter);
    (g.round() as usize).max(1)
}

/// Generates one run. Pure function of its inputs.
pub fn simulate_run(
    profile: &AppProfile,
    topo: &Topology,
    run_id: u32,
    seed: u64,
) -> Result<ThroughputTrace> {
    profile.validate()?;
    let p = &profile.params;
    let duration = profile.duration_s;
    let devices = topo.device_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (background, app_mean) = match profile.kind {
        AppKind::BaseRef => (profile.mean_throughput_kbps, 0.0),
        _ => (p.background_kbps, profile.mean_throughput_kbps - p.background_kbps),
    };

    let rates: Vec<f64> = (0..devices)
        .map(|_| background * jitter_factor(&mut rng, p.background_heterogeneity))
        .collect();
    let mut samples: Vec<Vec<f64>> = (0..duration)
        .map(|_| {
            rates
                .iter()
                .map(|r| r * jitter_factor(&mut rng, p.background_spread))
                .collect()
        })
        .collect();

    if profile.kind != AppKind::BaseRef {
        let start = p.lead_s;
        let end = duration - p.lead_s;
        let mut sched = Schedule::new(duration, devices);
        match profile.kind {
            AppKind::Aggregation => aggregation(&mut sched, &mut rng, topo, p, start, end),
            AppKind::Broadcast => broadcast(&mut sched, &mut rng, topo, p, start, end),
            AppKind::Consensus => consensus(&mut sched, &mut rng, topo, p, start, end),
            AppKind::Dgd => dgd(&mut sched, &mut rng, topo, p, start, end),
            AppKind::BaseRef => unreachable!(),
        }
        let total_units: f64 = sched.units.iter().sum();
        if total_units > 0.0 {
            let payload = app_mean * (duration * devices) as f64 / total_units;
            for (t, row) in samples.iter_mut().enumerate() {
                let base = t * devices;
                for (d, v) in row.iter_mut().enumerate() {
                    *v += payload * sched.jittered[base + d];
                }
            }
        }
    }

    Ok(ThroughputTrace {
        app_label: profile.kind,
        run_id,
        seed,
        anomaly_intensity: 0.0,
        rows: topo.rows,
        cols: topo.cols,
        mean_throughput_kbps: profile.mean_throughput_kbps,
        samples,
    })
}

/// Convergecast rounds: devices at the deepest level send first, each device
/// forwards a single payload to its parent one second after its children.
fn aggregation(
    s: &mut Schedule,
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    p: &ScheduleParams,
    start: usize,
    end: usize,
) {
    let max_depth = topo.max_depth();
    let mut round = start;
    while round + max_depth <= end {
        for wave in 0..max_depth {
            let depth = max_depth - wave;
            let t = round + wave;
            for d in 0..topo.device_count() {
                if topo.depth[d] == depth {
                    let parent = topo.parent[d].expect("non-root device has a parent");
                    s.transmit(rng, p, t, d, [parent]);
                }
            }
        }
        round += next_gap(rng, p);
    }
}

/// Root-down dissemination: one local broadcast per inner device per round,
/// received by all of its children.
fn broadcast(
    s: &mut Schedule,
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    p: &ScheduleParams,
    start: usize,
    end: usize,
) {
    let max_depth = topo.max_depth();
    let children: Vec<Vec<usize>> = (0..topo.device_count())
        .map(|d| topo.children(d).collect())
        .collect();
    let mut round = start;
    while round + max_depth <= end {
        for depth in 0..max_depth {
            let t = round + depth;
            for d in 0..topo.device_count() {
                if topo.depth[d] == depth && !children[d].is_empty() {
                    s.transmit(rng, p, t, d, children[d].iter().copied());
                }
            }
        }
        round += next_gap(rng, p);
    }
}

/// Asynchronous gossip: each device starts and stops at its own offset and
/// runs its own exchange/compute iteration clock with a random phase. While
/// exchanging it sends to every running neighbor.
fn consensus(
    s: &mut Schedule,
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    p: &ScheduleParams,
    start: usize,
    end: usize,
) {
    let n = topo.device_count();
    let span = end - start;
    let max_off = p.start_jitter_s.min(span.saturating_sub(1) / 2);
    let period = p.period_s.max(1);
    let exchange = p.exchange_s.clamp(1, period);
    let windows: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let a = rng.gen_range(0..=max_off);
            let b = rng.gen_range(0..=max_off);
            (start + a, end - b)
        })
        .collect();
    let phase: Vec<usize> = (0..n).map(|_| rng.gen_range(0..period)).collect();
    for t in start..end {
        for d in 0..n {
            let (a, b) = windows[d];
            if t < a || t >= b || (t - a + phase[d]) % period >= exchange {
                continue;
            }
            let running: Vec<usize> = topo.adjacency[d]
                .iter()
                .copied()
                .filter(|&nb| t >= windows[nb].0 && t < windows[nb].1)
                .collect();
            s.transmit(rng, p, t, d, running);
        }
    }
}

/// Synchronous iterations: every device exchanges with all neighbors during
/// the first `exchange_s` seconds of each globally aligned iteration.
fn dgd(
    s: &mut Schedule,
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    p: &ScheduleParams,
    start: usize,
    end: usize,
) {
    let mut iter_start = start;
    while iter_start < end {
        let len = next_gap(rng, p);
        let exchange = p.exchange_s.clamp(1, len);
        for t in iter_start..(iter_start + exchange).min(end) {
            for d in 0..topo.device_count() {
                s.transmit(rng, p, t, d, topo.adjacency[d].iter().copied());
            }
        }
        iter_start += len;
    }
}

/// Adds uniform `[0, 2 * intensity * mean]` noise to every sample, where
/// `mean` is the labeled application's profile throughput.
pub fn inject_anomaly(trace: &ThroughputTrace, intensity: f64, seed: u64) -> Result<ThroughputTrace> {
    if !(intensity >= 0.0) || !intensity.is_finite() {
        return Err(Error::invalid(format!(
            "anomaly intensity must be a nonnegative number, got {intensity}"
        )));
    }
    let mut out = trace.clone();
    out.anomaly_intensity = trace.anomaly_intensity + intensity;
    if intensity == 0.0 {
        return Ok(out);
    }
    let upper = 2.0 * intensity * trace.mean_throughput_kbps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.samples.iter_mut().flatten() {
        *v += rng.gen_range(0.0..=upper);
    }
    Ok(out)
}
