//! Grouping of per-receiver CSI reports into per-frame clusters.
//!
//! Every receiver that hears a WiFi frame produces its own [`CsiReport`], so a
//! single transmitted frame fans out into up to `M` reports that arrive on one
//! merged stream in no particular cross-receiver order. Downstream estimation
//! needs them reunited: one [`FrameCluster`] per transmitted frame, holding at
//! most one report per receiver.
//!
//! Reports are matched on `(source_mac, sequence_number, frame_kind)` plus
//! timestamp coincidence: two reports belong to the same cluster only when
//! every pairwise timestamp difference stays within the coincidence window.
//! The timestamp check is what disambiguates the 12-bit sequence counter once
//! it wraps — two frames 4096 sequence numbers apart carry identical keys but
//! are separated by far more than any sane window.
//!
//! Emission is governed by a watermark: the minimum over all receivers seen so
//! far of the latest timestamp each has produced. Per-receiver streams are
//! nondecreasing in time, so once the watermark has advanced past a cluster's
//! earliest timestamp plus the flush horizon, no receiver can still contribute
//! a member, and the cluster is released. Clusters come out ordered by
//! `cluster_timestamp`. A receiver that first appears long after the others —
//! with timestamps behind the watermark — is the one case this cannot defend
//! against: its backlog opens fresh clusters instead of joining released ones.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use thiserror::Error;

use crate::wire::{CsiReport, FrameKind};

/// Coincidence window and flush horizon, both in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterConfig {
    /// Maximum pairwise timestamp spread within one cluster.
    pub window_us: u64,
    /// How far the watermark must pass a cluster's earliest timestamp before
    /// it is emitted. Must exceed `window_us`, otherwise a report could still
    /// legitimately join a cluster that has already been released.
    pub flush_horizon_us: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        // Frames are hundreds of microseconds apart at realistic rates and the
        // receivers share a synchronized clock, so 500 µs of coincidence is
        // generous; 10 ms of horizon bounds latency while tolerating heavily
        // skewed cross-receiver delivery.
        ClusterConfig { window_us: 500, flush_horizon_us: 10_000 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("flush horizon ({horizon_us} µs) must exceed the coincidence window ({window_us} µs)")]
    HorizonTooShort { window_us: u64, horizon_us: u64 },
    #[error(
        "receiver {receiver_id} went back in time: report at {timestamp_us} µs after {last_us} µs"
    )]
    OutOfOrder { receiver_id: u8, timestamp_us: u64, last_us: u64 },
}

/// Reports from multiple receivers matched to one transmitted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCluster {
    /// Emission index: densely increasing in emission (= timestamp) order.
    pub cluster_id: u64,
    pub frame_kind: FrameKind,
    pub source_mac: [u8; 6],
    pub sequence_number: u16,
    /// Earliest member timestamp.
    pub cluster_timestamp_us: u64,
    /// At most one report per receiver, iterated in receiver order.
    pub members: BTreeMap<u8, CsiReport>,
}

impl FrameCluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn report(&self, receiver_id: u8) -> Option<&CsiReport> {
        self.members.get(&receiver_id)
    }
}

/// A cluster still waiting for members (or for the watermark).
#[derive(Debug)]
struct OpenCluster {
    frame_kind: FrameKind,
    source_mac: [u8; 6],
    sequence_number: u16,
    min_ts: u64,
    max_ts: u64,
    members: BTreeMap<u8, CsiReport>,
}

impl OpenCluster {
    /// Timestamp spread if `ts` were admitted.
    fn span_with(&self, ts: u64) -> u64 {
        self.max_ts.max(ts) - self.min_ts.min(ts)
    }

    /// Distance from `ts` to the cluster's current timestamp interval; used to
    /// pick the closest candidate when several clusters could admit a report.
    fn distance(&self, ts: u64) -> u64 {
        if ts < self.min_ts {
            self.min_ts - ts
        } else if ts > self.max_ts {
            ts - self.max_ts
        } else {
            0
        }
    }
}

/// Counters describing everything the clusterer has done so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClusterStats {
    pub reports_in: u64,
    pub clusters_out: u64,
    /// Reports dropped because their receiver was already present in the
    /// cluster they matched (keep-first policy).
    pub duplicates_discarded: u64,
}

/// Online single-consumer clusterer.
///
/// Feed reports with [`push`](Self::push), drain results with
/// [`next_cluster`](Self::next_cluster), and call [`finish`](Self::finish)
/// once the stream ends to release everything still buffered. Emitted clusters
/// are immutable; all mutable state lives inside this one value.
#[derive(Debug)]
pub struct Clusterer {
    cfg: ClusterConfig,
    open: Vec<OpenCluster>,
    /// Latest timestamp seen per receiver; the watermark is the minimum.
    last_seen: BTreeMap<u8, u64>,
    ready: VecDeque<FrameCluster>,
    next_cluster_id: u64,
    stats: ClusterStats,
}

impl Clusterer {
    pub fn new(cfg: ClusterConfig) -> Result<Self, ClusterError> {
        if cfg.flush_horizon_us <= cfg.window_us {
            return Err(ClusterError::HorizonTooShort {
                window_us: cfg.window_us,
                horizon_us: cfg.flush_horizon_us,
            });
        }
        Ok(Clusterer {
            cfg,
            open: Vec::new(),
            last_seen: BTreeMap::new(),
            ready: VecDeque::new(),
            next_cluster_id: 0,
            stats: ClusterStats::default(),
        })
    }

    /// Accept one report. Rejects per-receiver timestamp regressions, which
    /// the wire contract forbids.
    pub fn push(&mut self, report: CsiReport) -> Result<(), ClusterError> {
        let ts = report.rx_timestamp_us;
        if let Some(&last) = self.last_seen.get(&report.receiver_id) {
            if ts < last {
                return Err(ClusterError::OutOfOrder {
                    receiver_id: report.receiver_id,
                    timestamp_us: ts,
                    last_us: last,
                });
            }
        }
        self.last_seen.insert(report.receiver_id, ts);
        self.stats.reports_in += 1;
        self.admit(report);
        self.release_ripe();
        Ok(())
    }

    /// Place a report into the best matching open cluster, or open a new one.
    fn admit(&mut self, report: CsiReport) {
        let ts = report.rx_timestamp_us;
        // Among key-matching clusters that could admit the report without
        // exceeding the window, prefer the nearest (tie: earliest). With sane
        // traffic a key repeats only after a sequence wrap, so at most one
        // cluster ever matches and the choice is order-independent.
        let best = self
            .open
            .iter_mut()
            .filter(|c| {
                c.frame_kind == report.frame_kind
                    && c.source_mac == report.source_mac
                    && c.sequence_number == report.sequence_number
                    && c.span_with(ts) <= self.cfg.window_us
            })
            .min_by_key(|c| (c.distance(ts), c.min_ts));
        match best {
            Some(cluster) => {
                if cluster.members.contains_key(&report.receiver_id) {
                    self.stats.duplicates_discarded += 1;
                    return;
                }
                cluster.min_ts = cluster.min_ts.min(ts);
                cluster.max_ts = cluster.max_ts.max(ts);
                cluster.members.insert(report.receiver_id, report);
            }
            None => self.open.push(OpenCluster {
                frame_kind: report.frame_kind,
                source_mac: report.source_mac,
                sequence_number: report.sequence_number,
                min_ts: ts,
                max_ts: ts,
                members: BTreeMap::from([(report.receiver_id, report)]),
            }),
        }
    }

    /// Current watermark: every receiver seen so far has advanced at least
    /// this far, so nothing older than `watermark − window` can still arrive.
    fn watermark(&self) -> Option<u64> {
        self.last_seen.values().copied().min()
    }

    /// Move clusters the watermark has passed into the ready queue.
    fn release_ripe(&mut self) {
        let Some(mark) = self.watermark() else { return };
        let horizon = self.cfg.flush_horizon_us;
        let mut ripe: Vec<OpenCluster> = Vec::new();
        self.open.retain_mut(|c| {
            if mark >= c.min_ts.saturating_add(horizon) {
                ripe.push(OpenCluster {
                    frame_kind: c.frame_kind,
                    source_mac: c.source_mac,
                    sequence_number: c.sequence_number,
                    min_ts: c.min_ts,
                    max_ts: c.max_ts,
                    members: std::mem::take(&mut c.members),
                });
                false
            } else {
                true
            }
        });
        self.enqueue_sorted(ripe);
    }

    fn enqueue_sorted(&mut self, mut batch: Vec<OpenCluster>) {
        // Emission order is cluster-timestamp order; the remaining key fields
        // break ties deterministically for simultaneous frames.
        batch.sort_by_key(|c| (c.min_ts, c.source_mac, c.sequence_number, c.frame_kind as u8));
        for c in batch {
            self.ready.push_back(FrameCluster {
                cluster_id: self.next_cluster_id,
                frame_kind: c.frame_kind,
                source_mac: c.source_mac,
                sequence_number: c.sequence_number,
                cluster_timestamp_us: c.min_ts,
                members: c.members,
            });
            self.next_cluster_id += 1;
            self.stats.clusters_out += 1;
        }
    }

    /// Release everything still buffered: the stream has ended, so no further
    /// member can arrive by definition.
    pub fn finish(&mut self) {
        let remaining = std::mem::take(&mut self.open);
        self.enqueue_sorted(remaining);
    }

    /// Next emitted cluster, in cluster-timestamp order.
    pub fn next_cluster(&mut self) -> Option<FrameCluster> {
        self.ready.pop_front()
    }

    /// Reports currently held in open clusters (excludes the ready queue);
    /// bounded by `M · flush_horizon / inter-frame spacing` for compliant
    /// streams.
    pub fn buffered_reports(&self) -> usize {
        self.open.iter().map(|c| c.members.len()).sum()
    }

    pub fn open_clusters(&self) -> usize {
        self.open.len()
    }

    pub fn stats(&self) -> ClusterStats {
        self.stats
    }
}

/// Convenience for tests and batch tools: cluster a whole slice at once.
pub fn cluster_reports(
    reports: &[CsiReport],
    cfg: ClusterConfig,
) -> Result<(Vec<FrameCluster>, ClusterStats), ClusterError> {
    let mut clusterer = Clusterer::new(cfg)?;
    for report in reports {
        clusterer.push(report.clone())?;
    }
    clusterer.finish();
    let mut out = Vec::new();
    while let Some(c) = clusterer.next_cluster() {
        out.push(c);
    }
    Ok((out, clusterer.stats()))
}
