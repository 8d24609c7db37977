//! Measurement wire protocol, trace files and the stream listener.
//!
//! A record is one JSON object per LF-terminated line:
//!
//! ```text
//! {"schema_version":1,"timestamp":0.0,"anchor_id":"L1","device_id":"phone","rssi":-71.0}
//! ```
//!
//! Trace files are the same lines stored back to back, so recorded and live
//! streams are interchangeable.

use std::fs::File;
use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::localizer::Measurement;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 7700;

const POLL_INTERVAL: Duration = Duration::from_millis(20);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported schema_version {0}")]
    Version(u64),
    #[error("missing or invalid field {0:?}")]
    Field(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("field {0:?} is invalid")]
    Invalid(&'static str),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot bind listener: {0}")]
    Bind(io::Error),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// One measurement as carried on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub schema_version: u32,
    pub timestamp: f64,
    pub anchor_id: String,
    pub device_id: String,
    pub rssi: f64,
}

impl MeasurementRecord {
    pub fn new(timestamp: f64, anchor_id: impl Into<String>, device_id: impl Into<String>, rssi: f64) -> Self {
        Self { schema_version: SCHEMA_VERSION, timestamp, anchor_id: anchor_id.into(), device_id: device_id.into(), rssi }
    }

    fn check(&self) -> Result<(), &'static str> {
        if self.schema_version != SCHEMA_VERSION {
            return Err("schema_version");
        }
        if !(self.timestamp.is_finite() && self.timestamp >= 0.0) {
            return Err("timestamp");
        }
        if self.anchor_id.is_empty() {
            return Err("anchor_id");
        }
        if self.device_id.is_empty() {
            return Err("device_id");
        }
        if !self.rssi.is_finite() {
            return Err("rssi");
        }
        Ok(())
    }
}

impl From<&Measurement> for MeasurementRecord {
    fn from(m: &Measurement) -> Self {
        Self::new(m.timestamp, m.anchor_id.clone(), m.device_id.clone(), m.rssi)
    }
}

impl From<MeasurementRecord> for Measurement {
    fn from(r: MeasurementRecord) -> Self {
        Measurement { timestamp: r.timestamp, anchor_id: r.anchor_id, device_id: r.device_id, rssi: r.rssi }
    }
}

/// Serializes a record as one newline-terminated line.
pub fn encode_record(r: &MeasurementRecord) -> Result<String, EncodeError> {
    r.check().map_err(EncodeError::Invalid)?;
    let mut line = serde_json::to_string(r).map_err(|_| EncodeError::Invalid("record"))?;
    line.push('\n');
    Ok(line)
}

/// Parses one line (with or without its trailing newline).
///
/// Unknown fields are ignored.
pub fn decode_record(line: &str) -> Result<MeasurementRecord, DecodeError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let value: Value = serde_json::from_str(line).map_err(|e| DecodeError::Parse {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or(DecodeError::Parse { offset: 0, message: "expected a JSON object".into() })?;

    let version = obj.get("schema_version").and_then(Value::as_u64).ok_or(DecodeError::Field("schema_version"))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(DecodeError::Version(version));
    }
    let number = |key: &'static str| obj.get(key).and_then(Value::as_f64).ok_or(DecodeError::Field(key));
    let text = |key: &'static str| {
        obj.get(key)
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .ok_or(DecodeError::Field(key))
    };
    let record = MeasurementRecord {
        schema_version: SCHEMA_VERSION,
        timestamp: number("timestamp")?,
        anchor_id: text("anchor_id")?,
        device_id: text("device_id")?,
        rssi: number("rssi")?,
    };
    record.check().map_err(DecodeError::Field)?;
    Ok(record)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    // serde_json reports 1-based line and column (in bytes) of the error.
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Writes records as a trace file.
pub fn write_trace<'a, W, I>(mut out: W, records: I) -> Result<(), IngestError>
where
    W: Write,
    I: IntoIterator<Item = &'a MeasurementRecord>,
{
    for r in records {
        let line = encode_record(r).map_err(|e| io::Error::new(ErrorKind::InvalidInput, e))?;
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads every line of a trace; malformed lines are returned as errors in place.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<Result<MeasurementRecord, DecodeError>>, IngestError> {
    let mut out = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_record(&line));
    }
    Ok(out)
}

/// Identifies the stream a record arrived on.
pub type ConnectionId = u64;

/// Consumer of decoded records.
pub trait MeasurementSink: Send {
    fn deliver(&mut self, origin: ConnectionId, record: MeasurementRecord);
}

impl<F> MeasurementSink for F
where
    F: FnMut(ConnectionId, MeasurementRecord) + Send,
{
    fn deliver(&mut self, origin: ConnectionId, record: MeasurementRecord) {
        self(origin, record)
    }
}

#[derive(Debug, Default)]
struct Counters {
    records: AtomicU64,
    malformed: AtomicU64,
    connections: AtomicU64,
}

/// Totals reported by a listener or a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestSummary {
    pub records: u64,
    pub malformed: u64,
    pub connections: u64,
}

/// A running listener. Dropping it without [`IngestServer::shutdown`] stops
/// accepting but does not wait for connections to drain.
pub struct IngestServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    acceptor: Option<JoinHandle<Vec<JoinHandle<()>>>>,
}

impl IngestServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn summary(&self) -> IngestSummary {
        IngestSummary {
            records: self.counters.records.load(Ordering::SeqCst),
            malformed: self.counters.malformed.load(Ordering::SeqCst),
            connections: self.counters.connections.load(Ordering::SeqCst),
        }
    }

    /// Stops accepting, delivers every complete line already received, and
    /// waits for connection workers to exit.
    pub fn shutdown(mut self) -> IngestSummary {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(acceptor) = self.acceptor.take() {
            if let Ok(workers) = acceptor.join() {
                for w in workers {
                    let _ = w.join();
                }
            }
        }
        self.summary()
    }
}

impl Drop for IngestServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Binds `addr` and starts accepting newline-delimited record streams.
///
/// Delivery into `sink` is serialized across connections; records from one
/// connection arrive in the order they were sent. Malformed lines are logged,
/// counted and skipped.
pub fn serve_ingest<A, S>(addr: A, sink: S) -> Result<IngestServer, IngestError>
where
    A: ToSocketAddrs,
    S: MeasurementSink + 'static,
{
    let listener = TcpListener::bind(addr).map_err(IngestError::Bind)?;
    listener.set_nonblocking(true).map_err(IngestError::Bind)?;
    let local_addr = listener.local_addr().map_err(IngestError::Bind)?;
    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(Counters::default());
    let sink: Arc<Mutex<dyn MeasurementSink>> = Arc::new(Mutex::new(sink));

    let acceptor = {
        let stop = Arc::clone(&stop);
        let counters = Arc::clone(&counters);
        std::thread::Builder::new()
            .name("ingest-accept".into())
            .spawn(move || {
                let mut workers = Vec::new();
                let mut next_id: ConnectionId = 0;
                // After a stop request, connections already in the backlog are
                // still accepted and drained.
                loop {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            log::debug!("connection {next_id} from {peer}");
                            counters.connections.fetch_add(1, Ordering::SeqCst);
                            let id = next_id;
                            next_id += 1;
                            let (stop, counters, sink) = (Arc::clone(&stop), Arc::clone(&counters), Arc::clone(&sink));
                            workers.push(std::thread::spawn(move || {
                                if let Err(e) = handle_connection(id, stream, &stop, &counters, &sink) {
                                    log::warn!("connection {id}: {e}");
                                }
                            }));
                        }
                        Err(e) if e.kind() == ErrorKind::WouldBlock => {
                            if stop.load(Ordering::SeqCst) {
                                break;
                            }
                            std::thread::sleep(POLL_INTERVAL);
                        }
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            if stop.load(Ordering::SeqCst) {
                                break;
                            }
                        }
                    }
                }
                workers
            })
            .map_err(IngestError::Io)?
    };

    Ok(IngestServer { local_addr, stop, counters, acceptor: Some(acceptor) })
}

fn handle_connection(
    id: ConnectionId,
    stream: TcpStream,
    stop: &AtomicBool,
    counters: &Counters,
    sink: &Mutex<dyn MeasurementSink>,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL_INTERVAL))?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => {
                // EOF: a trailing unterminated line still counts.
                if !buf.is_empty() {
                    process_line(id, &buf, counters, sink);
                }
                return Ok(());
            }
            Ok(_) => {
                if buf.ends_with(b"\n") {
                    process_line(id, &buf, counters, sink);
                    buf.clear();
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    // Nothing left in the socket buffer; drop any partial line.
                    return Ok(());
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}

fn process_line(id: ConnectionId, raw: &[u8], counters: &Counters, sink: &Mutex<dyn MeasurementSink>) {
    let text = match std::str::from_utf8(raw) {
        Ok(t) => t.trim_end_matches(['\n', '\r']),
        Err(_) => {
            counters.malformed.fetch_add(1, Ordering::SeqCst);
            log::warn!("connection {id}: line is not UTF-8");
            return;
        }
    };
    if text.trim().is_empty() {
        return;
    }
    match decode_record(text) {
        Ok(record) => {
            let mut sink = sink.lock().unwrap_or_else(|p| p.into_inner());
            sink.deliver(id, record);
            counters.records.fetch_add(1, Ordering::SeqCst);
        }
        Err(e) => {
            counters.malformed.fetch_add(1, Ordering::SeqCst);
            log::warn!("connection {id}: {e}");
        }
    }
}

/// Replay pacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pace {
    /// Deliver as fast as possible.
    Unpaced,
    /// Timestamp gaps are divided by this factor.
    Speed(f64),
}

impl Pace {
    pub fn from_speed(speed: f64) -> Pace {
        if speed.is_infinite() || !(speed > 0.0) {
            Pace::Unpaced
        } else {
            Pace::Speed(speed)
        }
    }
}

/// Streams a trace file into `sink`, paced by its timestamps.
pub fn replay_trace<P, S>(path: P, pace: Pace, sink: &mut S) -> Result<IngestSummary, IngestError>
where
    P: AsRef<Path>,
    S: MeasurementSink + ?Sized,
{
    let reader = BufReader::new(File::open(path)?);
    let mut summary = IngestSummary { connections: 1, ..Default::default() };
    let started = Instant::now();
    let mut first_ts: Option<f64> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match decode_record(&line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("replay: {e}");
                summary.malformed += 1;
                continue;
            }
        };
        if let Pace::Speed(speed) = pace {
            let t0 = *first_ts.get_or_insert(record.timestamp);
            let due = Duration::from_secs_f64(((record.timestamp - t0) / speed).max(0.0));
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        sink.deliver(0, record);
        summary.records += 1;
    }
    Ok(summary)
}
