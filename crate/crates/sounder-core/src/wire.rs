//! Binary CSI report records and the resynchronizing stream parser.
//!
//! Each receiver pushes one record per captured frame. Record layout, all
//! multi-byte fields little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 2    | magic `0xE5 0xA4`                       |
//! | 2      | 1    | format version (currently 1)            |
//! | 3      | 1    | receiver id                             |
//! | 4      | 6    | source MAC                              |
//! | 10     | 2    | sequence number (12-bit valid range)    |
//! | 12     | 8    | rx timestamp, microseconds              |
//! | 20     | 1    | frame kind: 0 = OTA, 1 = REFERENCE      |
//! | 21     | 1    | RSSI, dB (i8)                           |
//! | 22     | 2    | subcarrier count n                      |
//! | 24     | 8·n  | coefficients, f32 re/im pairs           |
//! | 24+8n  | 4    | CRC32C over all preceding record bytes  |
//!
//! A capture stream is just concatenated records. [`StreamParser`] pulls
//! records out of arbitrarily chunked input and, when it hits garbage or a
//! failed checksum, resynchronizes by scanning for the next magic marker —
//! a single corrupted byte costs at most the record it landed in. A JSONL
//! debug mirror of the same fields is provided for eyeballing captures.

use crc::{Crc, CRC_32_ISCSI};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complex coefficient as carried on the wire.
pub type C32 = Complex<f32>;

pub const WIRE_MAGIC: [u8; 2] = [0xE5, 0xA4];
pub const WIRE_VERSION: u8 = 1;
/// Header bytes before the coefficient block.
pub const HEADER_LEN: usize = 24;
/// Trailing checksum bytes.
pub const CRC_LEN: usize = 4;
/// Sequence numbers live in a 12-bit counter space.
pub const SEQUENCE_MODULUS: u16 = 4096;

/// CRC32C (Castagnoli), the checksum family used by iSCSI and ext4.
const CASTAGNOLI: Crc<u32> = Crc::<u32>::new(&CRC_32_ISCSI);

pub fn crc32c(bytes: &[u8]) -> u32 {
    CASTAGNOLI.checksum(bytes)
}

/// Whether a frame came in over the air or through the cabled reference path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Ota = 0,
    Reference = 1,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FrameKind::Ota),
            1 => Some(FrameKind::Reference),
            _ => None,
        }
    }
}

/// One receiver's CSI for one captured frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiReport {
    pub receiver_id: u8,
    pub source_mac: [u8; 6],
    /// 12-bit rolling counter copied from the frame.
    pub sequence_number: u16,
    pub rx_timestamp_us: u64,
    pub frame_kind: FrameKind,
    pub rssi_db: i8,
    pub coefficients: Vec<C32>,
}

impl CsiReport {
    pub fn record_len(&self) -> usize {
        HEADER_LEN + 8 * self.coefficients.len() + CRC_LEN
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("record does not start with the magic marker")]
    BadMagic,
    #[error("unsupported wire format version {0}")]
    UnsupportedVersion(u8),
    #[error("record truncated: stream ended inside a record")]
    Truncated,
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("unknown frame kind byte {0}")]
    BadFrameKind(u8),
    #[error("record carries {got} subcarriers, stream is configured for {expected}")]
    CoefficientCountMismatch { expected: u16, got: u16 },
}

/// What the stream parser should do with the input after a parse failure.
enum FailAction {
    /// Not enough bytes yet; retry after more input (or report truncation at EOF).
    NeedMore,
    /// Length field untrustworthy: rescan for magic just past this marker.
    Rescan,
    /// Checksum was valid, so the record extent is known: skip it whole.
    Skip(usize),
}

fn parse_at(buf: &[u8], expected_n: Option<u16>) -> Result<(CsiReport, usize), (WireError, FailAction)> {
    if buf.len() < 2 {
        return Err((WireError::Truncated, FailAction::NeedMore));
    }
    if buf[0..2] != WIRE_MAGIC {
        return Err((WireError::BadMagic, FailAction::Rescan));
    }
    if buf.len() < HEADER_LEN {
        return Err((WireError::Truncated, FailAction::NeedMore));
    }
    let version = buf[2];
    if version != WIRE_VERSION {
        return Err((WireError::UnsupportedVersion(version), FailAction::Rescan));
    }
    let n = u16::from_le_bytes([buf[22], buf[23]]);
    let record_len = HEADER_LEN + 8 * n as usize + CRC_LEN;
    if buf.len() < record_len {
        return Err((WireError::Truncated, FailAction::NeedMore));
    }
    let body = &buf[..record_len - CRC_LEN];
    let stored = u32::from_le_bytes(buf[record_len - CRC_LEN..record_len].try_into().unwrap());
    let computed = crc32c(body);
    if stored != computed {
        return Err((WireError::CrcMismatch { stored, computed }, FailAction::Rescan));
    }
    // Checksum holds, so the record is intact; remaining failures are
    // well-formedness problems of a whole, skippable record.
    let Some(frame_kind) = FrameKind::from_byte(buf[20]) else {
        return Err((WireError::BadFrameKind(buf[20]), FailAction::Skip(record_len)));
    };
    if let Some(expected) = expected_n {
        if n != expected {
            return Err((
                WireError::CoefficientCountMismatch { expected, got: n },
                FailAction::Skip(record_len),
            ));
        }
    }
    let mut coefficients = Vec::with_capacity(n as usize);
    for k in 0..n as usize {
        let off = HEADER_LEN + 8 * k;
        let re = f32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
        let im = f32::from_le_bytes(buf[off + 4..off + 8].try_into().unwrap());
        coefficients.push(C32::new(re, im));
    }
    let report = CsiReport {
        receiver_id: buf[3],
        source_mac: buf[4..10].try_into().unwrap(),
        sequence_number: u16::from_le_bytes([buf[10], buf[11]]),
        rx_timestamp_us: u64::from_le_bytes(buf[12..20].try_into().unwrap()),
        frame_kind,
        rssi_db: buf[21] as i8,
        coefficients,
    };
    Ok((report, record_len))
}

/// Parses a single record at the start of `bytes`, returning it and the number
/// of bytes consumed. Stream-level recovery (resync, skipping) is
/// [`StreamParser`]'s job.
pub fn parse_report(bytes: &[u8]) -> Result<(CsiReport, usize), WireError> {
    parse_at(bytes, None).map_err(|(e, _)| e)
}

/// Serializes a report into a fresh record. Panics if the sequence number is
/// outside its 12-bit range or the coefficient count exceeds the u16 field —
/// both are producer-side contract violations, not runtime data errors.
pub fn serialize_report(report: &CsiReport) -> Vec<u8> {
    assert!(
        report.sequence_number < SEQUENCE_MODULUS,
        "sequence number {} exceeds the 12-bit wire range",
        report.sequence_number
    );
    assert!(report.coefficients.len() <= u16::MAX as usize, "too many subcarriers for the wire");
    let mut out = Vec::with_capacity(report.record_len());
    out.extend_from_slice(&WIRE_MAGIC);
    out.push(WIRE_VERSION);
    out.push(report.receiver_id);
    out.extend_from_slice(&report.source_mac);
    out.extend_from_slice(&report.sequence_number.to_le_bytes());
    out.extend_from_slice(&report.rx_timestamp_us.to_le_bytes());
    out.push(report.frame_kind as u8);
    out.push(report.rssi_db as u8);
    out.extend_from_slice(&(report.coefficients.len() as u16).to_le_bytes());
    for c in &report.coefficients {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    let crc = crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Running tallies kept by [`StreamParser`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseStats {
    /// Records successfully decoded.
    pub records: u64,
    /// Distinct corruption incidents (a burst of related failures counts once).
    pub corruption_events: u64,
    pub crc_mismatches: u64,
    pub desyncs: u64,
    pub skipped_bytes: u64,
    /// Intact records rejected for carrying the wrong subcarrier count.
    pub count_mismatches: u64,
    /// Stream ended inside a record.
    pub truncated_tail: bool,
}

/// Incremental record parser with resynchronization.
///
/// Feed byte chunks in any granularity, then drain with [`next_report`]
/// (`StreamParser::next_report`); call [`finish`](StreamParser::finish) when
/// the input is exhausted so a trailing partial record is reported instead of
/// waited on. After an error the parser has already advanced past the bad
/// region — keep calling `next_report`. Consecutive failures triggered by one
/// corrupted region are collapsed into a single surfaced error and a single
/// `corruption_events` increment.
pub struct StreamParser {
    buf: Vec<u8>,
    pos: usize,
    expected_n: Option<u16>,
    eof: bool,
    recovering: bool,
    stats: ParseStats,
}

impl StreamParser {
    pub fn new(expected_n: Option<u16>) -> Self {
        Self {
            buf: Vec::new(),
            pos: 0,
            expected_n,
            eof: false,
            recovering: false,
            stats: ParseStats::default(),
        }
    }

    pub fn feed(&mut self, data: &[u8]) {
        assert!(!self.eof, "feed after finish");
        // Drop consumed bytes before growing the buffer.
        if self.pos > 0 && (self.pos >= 1 << 16 || self.pos >= self.buf.len()) {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(data);
    }

    pub fn finish(&mut self) {
        self.eof = true;
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    /// Bytes currently buffered and not yet consumed.
    pub fn buffered_len(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn scan_magic(&self, from: usize) -> Option<usize> {
        let buf = &self.buf;
        if buf.len() < 2 {
            return None;
        }
        (from..buf.len() - 1).find(|&i| buf[i] == WIRE_MAGIC[0] && buf[i + 1] == WIRE_MAGIC[1])
    }

    fn begin_incident(&mut self) -> bool {
        if self.recovering {
            false
        } else {
            self.recovering = true;
            self.stats.corruption_events += 1;
            true
        }
    }

    /// Next record, a surfaced stream error, or `None` when more input is
    /// needed (or the stream is fully drained after `finish`).
    pub fn next_report(&mut self) -> Option<Result<CsiReport, WireError>> {
        loop {
            // Align on a magic marker, counting anything skipped.
            match self.scan_magic(self.pos) {
                Some(at) => {
                    if at > self.pos {
                        self.stats.skipped_bytes += (at - self.pos) as u64;
                        self.stats.desyncs += 1;
                        self.pos = at;
                        if self.begin_incident() {
                            return Some(Err(WireError::BadMagic));
                        }
                    }
                }
                None => {
                    if self.eof {
                        let leftover = self.buf.len() - self.pos;
                        if leftover > 0 {
                            self.stats.skipped_bytes += leftover as u64;
                            self.stats.desyncs += 1;
                            self.pos = self.buf.len();
                            if self.begin_incident() {
                                return Some(Err(WireError::BadMagic));
                            }
                        }
                        return None;
                    }
                    return None;
                }
            }

            match parse_at(&self.buf[self.pos..], self.expected_n) {
                Ok((report, consumed)) => {
                    self.pos += consumed;
                    self.stats.records += 1;
                    self.recovering = false;
                    return Some(Ok(report));
                }
                Err((err, action)) => match action {
                    FailAction::NeedMore => {
                        if !self.eof {
                            return None;
                        }
                        // Trailing bytes that parse as the start of a record
                        // but can never complete.
                        self.stats.truncated_tail = true;
                        self.stats.skipped_bytes += 2;
                        self.pos += 2;
                        if self.begin_incident() {
                            return Some(Err(WireError::Truncated));
                        }
                    }
                    FailAction::Rescan => {
                        if let WireError::CrcMismatch { .. } = err {
                            self.stats.crc_mismatches += 1;
                        }
                        self.stats.skipped_bytes += 2;
                        self.pos += 2;
                        if self.begin_incident() {
                            return Some(Err(err));
                        }
                    }
                    FailAction::Skip(len) => {
                        if let WireError::CoefficientCountMismatch { .. } = err {
                            self.stats.count_mismatches += 1;
                        }
                        self.pos += len;
                        // An intact but unusable record is its own incident;
                        // it does not open a recovery window.
                        self.stats.corruption_events += 1;
                        return Some(Err(err));
                    }
                },
            }
        }
    }
}

/// JSONL mirror of a record, for debug captures: same fields, human-readable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonReport {
    pub receiver_id: u8,
    /// Colon-separated hex, e.g. `"02:e5:a4:00:00:01"`.
    pub source_mac: String,
    pub sequence_number: u16,
    pub rx_timestamp_us: u64,
    pub frame_kind: FrameKind,
    pub rssi_db: i8,
    /// `[re, im]` pairs.
    pub coefficients: Vec<[f32; 2]>,
}

pub fn format_mac(mac: &[u8; 6]) -> String {
    mac.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(":")
}

pub fn parse_mac(s: &str) -> Option<[u8; 6]> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 6 {
        return None;
    }
    let mut mac = [0u8; 6];
    for (slot, part) in mac.iter_mut().zip(parts) {
        *slot = u8::from_str_radix(part, 16).ok()?;
    }
    Some(mac)
}

impl From<&CsiReport> for JsonReport {
    fn from(r: &CsiReport) -> Self {
        JsonReport {
            receiver_id: r.receiver_id,
            source_mac: format_mac(&r.source_mac),
            sequence_number: r.sequence_number,
            rx_timestamp_us: r.rx_timestamp_us,
            frame_kind: r.frame_kind,
            rssi_db: r.rssi_db,
            coefficients: r.coefficients.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

impl TryFrom<&JsonReport> for CsiReport {
    type Error = String;

    fn try_from(j: &JsonReport) -> Result<Self, String> {
        let source_mac =
            parse_mac(&j.source_mac).ok_or_else(|| format!("bad MAC string {:?}", j.source_mac))?;
        Ok(CsiReport {
            receiver_id: j.receiver_id,
            source_mac,
            sequence_number: j.sequence_number,
            rx_timestamp_us: j.rx_timestamp_us,
            frame_kind: j.frame_kind,
            rssi_db: j.rssi_db,
            coefficients: j.coefficients.iter().map(|&[re, im]| C32::new(re, im)).collect(),
        })
    }
}

/// One JSONL line (no trailing newline) mirroring the record.
pub fn report_to_json_line(report: &CsiReport) -> String {
    serde_json::to_string(&JsonReport::from(report)).expect("JSON serialization cannot fail")
}

pub fn report_from_json_line(line: &str) -> Result<CsiReport, String> {
    let j: JsonReport = serde_json::from_str(line).map_err(|e| e.to_string())?;
    CsiReport::try_from(&j)
}
