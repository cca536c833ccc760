//! Two-party execution of the protocol over framed byte streams, with an
//! optional middlebox that applies a channel model to every qudit.
//!
//! Frame layout: `len: u32 BE | type: u8 | payload`, where `len` counts the
//! type byte plus the payload. Each role is a sequential state machine; a
//! background thread per connection only reads and queues frames, so two
//! peers writing at once cannot deadlock on socket buffers.
//!
//! Both endpoints rebuild a partial round log (their own bits, the peer's
//! bits only where revealed) and feed it to [`protocol::summarize`], and run
//! the parity rounds with the same helpers as
//! [`distill::simulate_distillation`]. Keys therefore match the in-process
//! pipeline bit for bit.

use std::collections::BTreeMap;
use std::io::{self, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channels::{apply_action, ChannelAction, ChannelModel};
use crate::distill::{
    block_parities, kept_positions, pair_parities, pairing_permutation, required_length, simulate_distillation,
    DistillError, DistillParams, LabeledKey,
};
use crate::field::Field;
use crate::protocol::{
    alice_prepare, bob_measure, distill_rng, record, round_rng, run_session, select_sample, summarize,
    ProtocolError, RoundRecord, SessionConfig, SessionStats, SessionStatus, Stream,
};
use crate::qstates::{Outcome, Pair, PairState, SparseKet};

/// Upper bound on `len`; larger prefixes are rejected before allocating.
pub const MAX_FRAME: usize = 64 << 20;

pub const QUDIT: u8 = 0x01;
pub const PAIR_ANNOUNCE: u8 = 0x02;
pub const OUTCOME_ANNOUNCE: u8 = 0x03;
pub const SIFT_ACCEPT: u8 = 0x04;
pub const SAMPLE_REVEAL: u8 = 0x05;
pub const PARITY_ROUND: u8 = 0x06;
pub const BLOCK_PARITY: u8 = 0x07;
pub const VERDICT: u8 = 0x08;
pub const HANDSHAKE: u8 = 0x09;
pub const ABORT: u8 = 0x0F;

pub const ABORT_CONDITION: &str = "condition-2-failed";
pub const ABORT_PROTOCOL: &str = "protocol-error";
pub const ABORT_CONFIG: &str = "config-mismatch";
pub const ABORT_KEY_TOO_SHORT: &str = "key-too-short";
pub const ABORT_INSUFFICIENT_SIFT: &str = "insufficient-sift";
pub const ABORT_UNDEFINED_EC: &str = "undefined-ec";

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("connection closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame length {0} outside 1..={MAX_FRAME}")]
    Length(usize),
    #[error("unknown frame type 0x{0:02x}")]
    UnknownType(u8),
    #[error("bad {kind} payload: {detail}")]
    Payload { kind: &'static str, detail: String },
}

fn bad(kind: &'static str, detail: impl Into<String>) -> WireError {
    WireError::Payload {
        kind,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&((self.payload.len() + 1) as u32).to_be_bytes());
        out.push(self.kind);
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Reads one frame. A clean end of stream before the first length byte is
/// `Closed`; anything truncated later is an i/o error.
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Frame, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Err(WireError::Closed),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME {
        return Err(WireError::Length(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let kind = body[0];
    body.remove(0);
    Ok(Frame { kind, payload: body })
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.to_bytes())
}

/// MSB-first bitmap of 0/1 values.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b & 1 == 1 {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], nbits: usize) -> Option<Vec<u8>> {
    if bytes.len() != nbits.div_ceil(8) {
        return None;
    }
    if nbits % 8 != 0 {
        let pad_mask = 0xFFu8 >> (nbits % 8);
        if bytes[bytes.len() - 1] & pad_mask != 0 {
            return None;
        }
    }
    Some((0..nbits).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect())
}

/// Parameters both parties must agree on before the first qudit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub version: u32,
    pub n: u32,
    pub modulus: u32,
    pub rounds: u64,
    pub sample_fraction: f64,
    pub seed: u64,
    pub ec_mode: crate::protocol::EcMode,
    pub k: u32,
    pub r: u64,
}

impl Handshake {
    pub fn from_config(session: &SessionConfig, field: &Field, params: &DistillParams) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            n: session.n,
            modulus: field.spec().modulus(),
            rounds: session.rounds,
            sample_fraction: session.sample_fraction,
            seed: session.seed,
            ec_mode: session.ec_mode,
            k: params.k,
            r: params.r,
        }
    }

    /// Names of fields that differ.
    pub fn differences(&self, other: &Handshake) -> Vec<&'static str> {
        let mut d = Vec::new();
        macro_rules! cmp {
            ($($f:ident),*) => {$(if self.$f != other.$f { d.push(stringify!($f)); })*};
        }
        cmp!(version, n, modulus, rounds, sample_fraction, seed, ec_mode, k, r);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Qudit(Vec<u8>),
    PairAnnounce(u16, u16),
    OutcomeAnnounce { pair: (u16, u16), in_pair: bool },
    SiftAccept(Vec<u32>),
    SampleReveal(Vec<(u32, u8)>),
    ParityRound { seed: u64, bits: Vec<u8> },
    BlockParity { r: u64, bits: Vec<u8> },
    Verdict(serde_json::Value),
    Handshake(Handshake),
    Abort(String),
}

fn strictly_increasing(v: &[u32]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Qudit(_) => QUDIT,
            Message::PairAnnounce(..) => PAIR_ANNOUNCE,
            Message::OutcomeAnnounce { .. } => OUTCOME_ANNOUNCE,
            Message::SiftAccept(_) => SIFT_ACCEPT,
            Message::SampleReveal(_) => SAMPLE_REVEAL,
            Message::ParityRound { .. } => PARITY_ROUND,
            Message::BlockParity { .. } => BLOCK_PARITY,
            Message::Verdict(_) => VERDICT,
            Message::Handshake(_) => HANDSHAKE,
            Message::Abort(_) => ABORT,
        }
    }

    pub fn name(&self) -> &'static str {
        kind_name(self.kind())
    }

    pub fn encode(&self) -> Frame {
        let mut p = Vec::new();
        match self {
            Message::Qudit(bytes) => p.extend_from_slice(bytes),
            Message::PairAnnounce(i, j) => {
                p.extend_from_slice(&i.to_be_bytes());
                p.extend_from_slice(&j.to_be_bytes());
            }
            Message::OutcomeAnnounce { pair, in_pair } => {
                p.extend_from_slice(&pair.0.to_be_bytes());
                p.extend_from_slice(&pair.1.to_be_bytes());
                p.push(*in_pair as u8);
            }
            Message::SiftAccept(rounds) => {
                for r in rounds {
                    p.extend_from_slice(&r.to_be_bytes());
                }
            }
            Message::SampleReveal(entries) => {
                for (idx, bit) in entries {
                    p.extend_from_slice(&idx.to_be_bytes());
                    p.push(*bit);
                }
            }
            Message::ParityRound { seed, bits } => {
                p.extend_from_slice(&seed.to_be_bytes());
                p.extend_from_slice(&(bits.len() as u32).to_be_bytes());
                p.extend_from_slice(&pack_bits(bits));
            }
            Message::BlockParity { r, bits } => {
                p.extend_from_slice(&r.to_be_bytes());
                p.extend_from_slice(&(bits.len() as u32).to_be_bytes());
                p.extend_from_slice(&pack_bits(bits));
            }
            Message::Verdict(v) => p = serde_json::to_vec(v).expect("json values serialize"),
            Message::Handshake(h) => p = serde_json::to_vec(h).expect("handshake serializes"),
            Message::Abort(reason) => p.extend_from_slice(reason.as_bytes()),
        }
        Frame {
            kind: self.kind(),
            payload: p,
        }
    }

    /// Structural validation only; field-dependent checks are the roles' job.
    pub fn decode(frame: &Frame) -> Result<Self, WireError> {
        let p = &frame.payload;
        let u16_at = |i: usize| u16::from_be_bytes([p[i], p[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes(p[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_be_bytes(p[i..i + 8].try_into().unwrap());
        let bitmap = |kind: &'static str| -> Result<(u64, Vec<u8>), WireError> {
            if p.len() < 12 {
                return Err(bad(kind, "shorter than 12 bytes"));
            }
            let nbits = u32_at(8) as usize;
            let bits = unpack_bits(&p[12..], nbits).ok_or_else(|| bad(kind, "bitmap length or padding"))?;
            Ok((u64_at(0), bits))
        };
        Ok(match frame.kind {
            QUDIT => {
                if p.len() != 3 && p.len() != 6 {
                    return Err(bad("QUDIT", format!("{} bytes", p.len())));
                }
                Message::Qudit(p.clone())
            }
            PAIR_ANNOUNCE => {
                if p.len() != 4 {
                    return Err(bad("PAIR_ANNOUNCE", format!("{} bytes", p.len())));
                }
                Message::PairAnnounce(u16_at(0), u16_at(2))
            }
            OUTCOME_ANNOUNCE => {
                if p.len() != 5 || p[4] > 1 {
                    return Err(bad("OUTCOME_ANNOUNCE", "expected 2 indices and a 0/1 byte"));
                }
                Message::OutcomeAnnounce {
                    pair: (u16_at(0), u16_at(2)),
                    in_pair: p[4] == 1,
                }
            }
            SIFT_ACCEPT => {
                if p.len() % 4 != 0 {
                    return Err(bad("SIFT_ACCEPT", "length not a multiple of 4"));
                }
                let list: Vec<u32> = (0..p.len() / 4).map(|i| u32_at(4 * i)).collect();
                if !strictly_increasing(&list) {
                    return Err(bad("SIFT_ACCEPT", "round indices not strictly increasing"));
                }
                Message::SiftAccept(list)
            }
            SAMPLE_REVEAL => {
                if p.len() % 5 != 0 {
                    return Err(bad("SAMPLE_REVEAL", "length not a multiple of 5"));
                }
                let entries: Vec<(u32, u8)> = (0..p.len() / 5).map(|i| (u32_at(5 * i), p[5 * i + 4])).collect();
                if entries.iter().any(|e| e.1 > 1) {
                    return Err(bad("SAMPLE_REVEAL", "bit value above 1"));
                }
                let idx: Vec<u32> = entries.iter().map(|e| e.0).collect();
                if !strictly_increasing(&idx) {
                    return Err(bad("SAMPLE_REVEAL", "indices not strictly increasing"));
                }
                Message::SampleReveal(entries)
            }
            PARITY_ROUND => {
                let (seed, bits) = bitmap("PARITY_ROUND")?;
                Message::ParityRound { seed, bits }
            }
            BLOCK_PARITY => {
                let (r, bits) = bitmap("BLOCK_PARITY")?;
                Message::BlockParity { r, bits }
            }
            VERDICT => Message::Verdict(serde_json::from_slice(p).map_err(|e| bad("VERDICT", e.to_string()))?),
            HANDSHAKE => Message::Handshake(serde_json::from_slice(p).map_err(|e| bad("HANDSHAKE", e.to_string()))?),
            ABORT => Message::Abort(String::from_utf8(p.clone()).map_err(|_| bad("ABORT", "reason is not UTF-8"))?),
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

pub fn kind_name(kind: u8) -> &'static str {
    match kind {
        QUDIT => "QUDIT",
        PAIR_ANNOUNCE => "PAIR_ANNOUNCE",
        OUTCOME_ANNOUNCE => "OUTCOME_ANNOUNCE",
        SIFT_ACCEPT => "SIFT_ACCEPT",
        SAMPLE_REVEAL => "SAMPLE_REVEAL",
        PARITY_ROUND => "PARITY_ROUND",
        BLOCK_PARITY => "BLOCK_PARITY",
        VERDICT => "VERDICT",
        HANDSHAKE => "HANDSHAKE",
        ABORT => "ABORT",
        _ => "UNKNOWN",
    }
}

// ---------------------------------------------------------------------------
// Transport

/// Write half of an in-memory byte pipe.
pub struct PipeWriter(Sender<Vec<u8>>);

/// Read half of an in-memory byte pipe; end of stream once the writer drops.
pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

pub fn pipe() -> (PipeWriter, PipeReader) {
    let (tx, rx) = mpsc::channel();
    (
        PipeWriter(tx),
        PipeReader {
            rx,
            buf: Vec::new(),
            pos: 0,
        },
    )
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        if data.is_empty() {
            return Ok(0);
        }
        self.0
            .send(data.to_vec())
            .map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let k = out.len().min(self.buf.len() - self.pos);
        out[..k].copy_from_slice(&self.buf[self.pos..self.pos + k]);
        self.pos += k;
        Ok(k)
    }
}

pub struct FrameSender {
    out: BufWriter<Box<dyn Write + Send>>,
    tcp: Option<TcpStream>,
}

impl FrameSender {
    pub fn send(&mut self, frame: &Frame) -> io::Result<()> {
        write_frame(&mut self.out, frame)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

impl Drop for FrameSender {
    fn drop(&mut self) {
        let _ = self.out.flush();
        if let Some(s) = &self.tcp {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

pub struct FrameReceiver {
    rx: Receiver<Result<Frame, WireError>>,
    timeout: Duration,
}

impl FrameReceiver {
    pub fn recv(&self) -> Result<Frame, WireError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(io::Error::from(io::ErrorKind::TimedOut).into()),
            Err(RecvTimeoutError::Disconnected) => Err(WireError::Closed),
        }
    }

    /// A frame that is already queued, if any.
    pub fn try_recv(&self) -> Option<Result<Frame, WireError>> {
        match self.rx.try_recv() {
            Ok(r) => Some(r),
            Err(TryRecvError::Empty) => None,
            Err(TryRecvError::Disconnected) => Some(Err(WireError::Closed)),
        }
    }
}

/// A framed duplex connection.
pub struct Conn {
    pub tx: FrameSender,
    pub rx: FrameReceiver,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

impl Conn {
    /// Spawns the reader thread for `reader`.
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self::build(Box::new(reader), Box::new(writer), None)
    }

    fn build(mut reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>, tcp: Option<TcpStream>) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let item = read_frame(&mut reader);
            let stop = item.is_err();
            if tx.send(item).is_err() || stop {
                break;
            }
        });
        Conn {
            tx: FrameSender {
                out: BufWriter::with_capacity(1 << 16, writer),
                tcp,
            },
            rx: FrameReceiver {
                rx,
                timeout: DEFAULT_TIMEOUT,
            },
        }
    }

    pub fn tcp(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let writer = stream.try_clone()?;
        Ok(Self::build(Box::new(reader), Box::new(writer), Some(stream)))
    }

    /// Two connections joined back to back.
    pub fn loopback_pair() -> (Conn, Conn) {
        let (w1, r1) = pipe();
        let (w2, r2) = pipe();
        (Conn::new(r2, w1), Conn::new(r1, w2))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.rx.timeout = timeout;
        self
    }
}

/// Accepts exactly one connection.
pub fn accept_one(listener: &TcpListener) -> io::Result<Conn> {
    let (stream, _) = listener.accept()?;
    Conn::tcp(stream)
}

/// Connects, retrying until `timeout` while the peer is not yet listening.
pub fn connect_retry(addr: &str, timeout: Duration) -> io::Result<Conn> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Conn::tcp(s),
            Err(e) if start.elapsed() < timeout => {
                if !matches!(
                    e.kind(),
                    io::ErrorKind::ConnectionRefused | io::ErrorKind::NotFound | io::ErrorKind::AddrNotAvailable
                ) {
                    return Err(e);
                }
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e),
        }
    }
}

// ---------------------------------------------------------------------------
// Roles

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Alice,
    Bob,
    Eve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    /// Alice and Bob ignore `channel`; the middlebox applies it.
    pub session: SessionConfig,
    pub distill: DistillParams,
}

impl RoleConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.session.validate()?;
        if self.session.rounds > u32::MAX as u64 {
            return Err(ProtocolError::Config("rounds must fit in 32 bits on the wire".into()));
        }
        if self.distill.r == 0 || self.distill.r % 2 == 0 {
            return Err(ProtocolError::Config(format!("r = {} must be odd", self.distill.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleStatus {
    Pass,
    ConditionFailed,
    InsufficientData,
    ProtocolError,
    ConfigMismatch,
    KeyTooShort,
    PeerAbort,
    Disconnected,
}

impl RoleStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RoleStatus::Pass => 0,
            RoleStatus::ConditionFailed | RoleStatus::InsufficientData => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoleReport {
    pub role: Role,
    pub status: RoleStatus,
    pub detail: Option<String>,
    pub stats: Option<SessionStats>,
    pub raw_key_length: Option<usize>,
    /// Length after each parity round, starting with the raw key.
    pub lengths: Vec<usize>,
    pub pairing_seeds: Vec<u64>,
    pub final_key: Option<String>,
    pub final_disagreements: Option<u64>,
    pub disagreement_rate: Option<f64>,
    pub peer_verdict: Option<serde_json::Value>,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub transcript_sha256: String,
}

impl RoleReport {
    pub fn exit_code(&self) -> i32 {
        match (self.status, self.detail.as_deref()) {
            (RoleStatus::PeerAbort, Some(ABORT_CONDITION)) => 2,
            (s, _) => s.exit_code(),
        }
    }

    pub fn final_bits(&self) -> Option<Vec<u8>> {
        self.final_key
            .as_ref()
            .map(|s| s.bytes().map(|b| (b == b'1') as u8).collect())
    }
}

struct Failure {
    status: RoleStatus,
    detail: String,
    /// Reason to send in an ABORT frame, if any.
    abort: Option<&'static str>,
}

impl Failure {
    fn protocol(detail: impl Into<String>) -> Self {
        Self {
            status: RoleStatus::ProtocolError,
            detail: detail.into(),
            abort: Some(ABORT_PROTOCOL),
        }
    }
}

impl From<WireError> for Failure {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Closed | WireError::Io(_) => Failure {
                status: RoleStatus::Disconnected,
                detail: e.to_string(),
                abort: None,
            },
            other => Failure::protocol(other.to_string()),
        }
    }
}

struct Channel {
    conn: Conn,
    digest: Sha256,
    sent: u64,
    received: u64,
}

impl Channel {
    fn new(conn: Conn) -> Self {
        Self {
            conn,
            digest: Sha256::new(),
            sent: 0,
            received: 0,
        }
    }

    fn send(&mut self, m: &Message) -> Result<(), Failure> {
        let frame = m.encode();
        self.digest.update([b'S']);
        self.digest.update(frame.to_bytes());
        self.sent += 1;
        self.conn.tx.send(&frame).map_err(|e| Failure::from(WireError::Io(e)))
    }

    fn recv(&mut self) -> Result<Message, Failure> {
        self.conn.tx.flush().map_err(|e| Failure::from(WireError::Io(e)))?;
        let frame = self.conn.rx.recv()?;
        self.digest.update([b'R']);
        self.digest.update(frame.to_bytes());
        self.received += 1;
        match Message::decode(&frame)? {
            Message::Abort(reason) => Err(Failure {
                status: RoleStatus::PeerAbort,
                detail: reason,
                abort: None,
            }),
            m => Ok(m),
        }
    }

    fn abort(&mut self, reason: &str) {
        if self.send(&Message::Abort(reason.to_string())).is_ok() {
            let _ = self.conn.tx.flush();
        }
    }

    fn digest_hex(&self) -> String {
        hex(&self.digest.clone().finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unexpected(want: &str, got: &Message) -> Failure {
    Failure::protocol(format!("expected {want}, got {}", got.name()))
}

fn check_pair(field: &Field, (i, j): (u16, u16)) -> Result<Pair, Failure> {
    let e = |v: u16| field.element(v as u32).map_err(|e| Failure::protocol(e.to_string()));
    let pair = Pair::new(e(i)?, e(j)?).map_err(|e| Failure::protocol(e.to_string()))?;
    if (pair.lo().value(), pair.hi().value()) != (i, j) {
        return Err(Failure::protocol("pair indices not in ascending order"));
    }
    Ok(pair)
}

fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

/// State shared by both parties once the quantum phase is over.
struct PartyState {
    role: Role,
    config: RoleConfig,
    field: Field,
    stats: Option<SessionStats>,
    raw_key_length: Option<usize>,
    lengths: Vec<usize>,
    pairing_seeds: Vec<u64>,
    final_key: Option<Vec<u8>>,
    final_disagreements: Option<u64>,
    peer_verdict: Option<serde_json::Value>,
}

impl PartyState {
    fn new(config: &RoleConfig) -> Result<Self, Failure> {
        config.validate().map_err(|e| Failure {
            status: RoleStatus::ConfigMismatch,
            detail: e.to_string(),
            abort: None,
        })?;
        let field = Field::new(config.session.n).map_err(|e| Failure {
            status: RoleStatus::ConfigMismatch,
            detail: e.to_string(),
            abort: None,
        })?;
        Ok(Self {
            role: config.role,
            config: config.clone(),
            field,
            stats: None,
            raw_key_length: None,
            lengths: Vec::new(),
            pairing_seeds: Vec::new(),
            final_key: None,
            final_disagreements: None,
            peer_verdict: None,
        })
    }

    fn handshake(&self) -> Handshake {
        Handshake::from_config(&self.config.session, &self.field, &self.config.distill)
    }

    fn check_handshake(&self, peer: &Handshake) -> Result<(), Failure> {
        let diff = self.handshake().differences(peer);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Failure {
                status: RoleStatus::ConfigMismatch,
                detail: format!("parameters differ: {}", diff.join(", ")),
                abort: Some(ABORT_CONFIG),
            })
        }
    }

    fn report(self, ch: &Channel, outcome: Result<(), Failure>) -> RoleReport {
        let (status, detail) = match outcome {
            Ok(()) => (RoleStatus::Pass, None),
            Err(f) => (f.status, Some(f.detail)),
        };
        let rate = match (self.final_disagreements, &self.final_key) {
            (Some(d), Some(k)) if !k.is_empty() => Some(d as f64 / k.len() as f64),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        RoleReport {
            role: self.role,
            status,
            detail,
            stats: self.stats,
            raw_key_length: self.raw_key_length,
            lengths: self.lengths,
            pairing_seeds: self.pairing_seeds,
            final_key: self.final_key.as_deref().map(bits_to_string),
            final_disagreements: self.final_disagreements,
            disagreement_rate: rate,
            peer_verdict: self.peer_verdict,
            frames_sent: ch.sent,
            frames_received: ch.received,
            transcript_sha256: ch.digest_hex(),
        }
    }

    /// Sample exchange, continuation gate, parity rounds, blocks, verdicts.
    /// `log` carries the peer's bits as zeros; the sample reveal fills them in.
    fn finish(&mut self, ch: &mut Channel, mut log: Vec<RoundRecord>) -> Result<(), Failure> {
        let is_alice = self.role == Role::Alice;
        let sifted_rounds: Vec<usize> = (0..log.len()).filter(|&i| log[i].sifted).collect();
        let sample = select_sample(self.config.session.seed, sifted_rounds.len(), self.config.session.sample_fraction);
        let mine: Vec<(u32, u8)> = sample
            .iter()
            .map(|&p| {
                let r = &log[sifted_rounds[p]];
                (p as u32, if is_alice { r.s } else { r.bob_bit })
            })
            .collect();
        let theirs = if is_alice {
            ch.send(&Message::SampleReveal(mine))?;
            ch.recv()?
        } else {
            let m = ch.recv()?;
            ch.send(&Message::SampleReveal(mine))?;
            m
        };
        let Message::SampleReveal(theirs) = theirs else {
            return Err(unexpected("SAMPLE_REVEAL", &theirs));
        };
        if theirs.len() != sample.len() || theirs.iter().zip(&sample).any(|(t, &p)| t.0 as usize != p) {
            return Err(Failure::protocol("sample positions differ from the agreed selection"));
        }
        for (p, bit) in theirs {
            let r = &mut log[sifted_rounds[p as usize]];
            if is_alice {
                r.bob_bit = bit;
            } else {
                r.s = bit;
            }
        }
        let (alice_key, bob_key, stats) = summarize(&self.config.session, &log);
        let status = stats.status;
        self.stats = Some(stats);
        let key = if is_alice { alice_key } else { bob_key };
        self.raw_key_length = Some(key.len());
        let gate = match status {
            SessionStatus::Pass => None,
            SessionStatus::ConditionFailed => Some((RoleStatus::ConditionFailed, ABORT_CONDITION)),
            SessionStatus::InsufficientSift => Some((RoleStatus::InsufficientData, ABORT_INSUFFICIENT_SIFT)),
            SessionStatus::UndefinedEc => Some((RoleStatus::InsufficientData, ABORT_UNDEFINED_EC)),
        };
        if let Some((status, reason)) = gate {
            return Err(self.mutual_abort(ch, status, reason));
        }
        let params = self.config.distill;
        let need = required_length(params.k, params.r);
        if key.len() < need {
            return Err(self.mutual_abort(ch, RoleStatus::KeyTooShort, ABORT_KEY_TOO_SHORT));
        }
        let mut key = key;
        self.lengths.push(key.len());
        let mut rng = distill_rng(self.config.session.seed);
        for _ in 0..params.k {
            let (seed, perm, mine, theirs) = if is_alice {
                let seed: u64 = rng.gen();
                let perm = pairing_permutation(seed, key.len());
                let mine = pair_parities(&key, &perm);
                ch.send(&Message::ParityRound { seed, bits: mine.clone() })?;
                match ch.recv()? {
                    Message::ParityRound { seed: s, bits } if s == seed => (seed, perm, mine, bits),
                    Message::ParityRound { .. } => return Err(Failure::protocol("PARITY_ROUND seed echo differs")),
                    other => return Err(unexpected("PARITY_ROUND", &other)),
                }
            } else {
                let (seed, theirs) = match ch.recv()? {
                    Message::ParityRound { seed, bits } => (seed, bits),
                    other => return Err(unexpected("PARITY_ROUND", &other)),
                };
                let perm = pairing_permutation(seed, key.len());
                let mine = pair_parities(&key, &perm);
                ch.send(&Message::ParityRound { seed, bits: mine.clone() })?;
                (seed, perm, mine, theirs)
            };
            if theirs.len() != mine.len() {
                return Err(Failure::protocol(format!(
                    "PARITY_ROUND carries {} parities, expected {}",
                    theirs.len(),
                    mine.len()
                )));
            }
            self.pairing_seeds.push(seed);
            key = kept_positions(&perm, &mine, &theirs).iter().map(|&p| key[p]).collect();
            self.lengths.push(key.len());
        }
        let out = block_parities(&key, params.r);
        let block = Message::BlockParity { r: params.r, bits: out.clone() };
        let theirs = if is_alice {
            ch.send(&block)?;
            ch.recv()?
        } else {
            let m = ch.recv()?;
            ch.send(&block)?;
            m
        };
        let theirs = match theirs {
            Message::BlockParity { r, bits } if r == params.r && bits.len() == out.len() => bits,
            Message::BlockParity { .. } => return Err(Failure::protocol("BLOCK_PARITY shape differs")),
            other => return Err(unexpected("BLOCK_PARITY", &other)),
        };
        let disagreements = out.iter().zip(&theirs).filter(|(a, b)| a != b).count() as u64;
        self.final_disagreements = Some(disagreements);
        let verdict = serde_json::json!({
            "role": self.role,
            "status": "pass",
            "raw_key_length": self.raw_key_length,
            "final_length": out.len(),
            "final_disagreements": disagreements,
            "lengths": self.lengths,
        });
        self.final_key = Some(out);
        let peer = if is_alice {
            ch.send(&Message::Verdict(verdict))?;
            ch.recv()?
        } else {
            let m = ch.recv()?;
            ch.send(&Message::Verdict(verdict))?;
            m
        };
        match peer {
            Message::Verdict(v) => self.peer_verdict = Some(v),
            other => return Err(unexpected("VERDICT", &other)),
        }
        ch.conn.tx.flush().map_err(|e| Failure::from(WireError::Io(e)))?;
        Ok(())
    }

    /// Both sides reach the same decision independently: send ABORT, then
    /// consume the peer's.
    fn mutual_abort(&self, ch: &mut Channel, status: RoleStatus, reason: &'static str) -> Failure {
        ch.abort(reason);
        match ch.recv() {
            Err(f) if f.status == RoleStatus::PeerAbort && f.detail == reason => {}
            Err(f) if f.status == RoleStatus::PeerAbort => {
                return Failure {
                    status: RoleStatus::ProtocolError,
                    detail: format!("peer aborted with {:?} while this side aborted with {reason:?}", f.detail),
                    abort: None,
                };
            }
            _ => {}
        }
        Failure {
            status,
            detail: reason.to_string(),
            abort: None,
        }
    }
}

fn settle(state: PartyState, mut ch: Channel, outcome: Result<(), Failure>) -> RoleReport {
    if let Err(f) = &outcome {
        if let Some(reason) = f.abort {
            ch.abort(reason);
        }
    }
    let report = state.report(&ch, outcome);
    drop(ch);
    report
}

fn early_failure(role: Role, f: Failure) -> RoleReport {
    RoleReport {
        role,
        status: f.status,
        detail: Some(f.detail),
        stats: None,
        raw_key_length: None,
        lengths: Vec::new(),
        pairing_seeds: Vec::new(),
        final_key: None,
        final_disagreements: None,
        disagreement_rate: None,
        peer_verdict: None,
        frames_sent: 0,
        frames_received: 0,
        transcript_sha256: hex(&Sha256::new().finalize()),
    }
}

/// Alice's side of one session over `conn`.
pub fn run_alice(config: &RoleConfig, conn: Conn) -> RoleReport {
    let mut state = match PartyState::new(config) {
        Ok(s) => s,
        Err(f) => return early_failure(Role::Alice, f),
    };
    state.role = Role::Alice;
    let mut ch = Channel::new(conn);
    let outcome = alice_steps(&mut state, &mut ch);
    settle(state, ch, outcome)
}

fn alice_steps(state: &mut PartyState, ch: &mut Channel) -> Result<(), Failure> {
    let field = state.field.clone();
    let session = state.config.session.clone();
    ch.send(&Message::Handshake(state.handshake()))?;
    match ch.recv()? {
        Message::Handshake(h) => state.check_handshake(&h)?,
        other => return Err(unexpected("HANDSHAKE", &other)),
    }
    let rounds = session.rounds as usize;
    let mut preps: Vec<PairState> = Vec::with_capacity(rounds);
    let mut buf = Vec::with_capacity(6);
    for round in 0..rounds {
        let prep = alice_prepare(&field, &mut round_rng(session.seed, round as u64, Stream::Alice));
        buf.clear();
        prep.ket().encode(&mut buf);
        ch.send(&Message::Qudit(buf.clone()))?;
        preps.push(prep);
    }
    let mut log = Vec::with_capacity(rounds);
    for (round, prep) in preps.iter().enumerate() {
        let (pair, in_pair) = match ch.recv()? {
            Message::OutcomeAnnounce { pair, in_pair } => (check_pair(&field, pair)?, in_pair),
            other => return Err(unexpected("OUTCOME_ANNOUNCE", &other)),
        };
        let outcome = if in_pair { Outcome::Plus } else { Outcome::Outside };
        log.push(record(&field, round as u64, prep, &pair, outcome, 0));
    }
    for prep in &preps {
        ch.send(&Message::PairAnnounce(prep.pair.lo().value(), prep.pair.hi().value()))?;
    }
    let sifted: Vec<u32> = log.iter().filter(|r| r.sifted).map(|r| r.round as u32).collect();
    ch.send(&Message::SiftAccept(sifted))?;
    state.finish(ch, log)
}

/// Bob's side of one session over `conn`.
pub fn run_bob(config: &RoleConfig, conn: Conn) -> RoleReport {
    let mut state = match PartyState::new(config) {
        Ok(s) => s,
        Err(f) => return early_failure(Role::Bob, f),
    };
    state.role = Role::Bob;
    let mut ch = Channel::new(conn);
    let outcome = bob_steps(&mut state, &mut ch);
    settle(state, ch, outcome)
}

fn bob_steps(state: &mut PartyState, ch: &mut Channel) -> Result<(), Failure> {
    let field = state.field.clone();
    let session = state.config.session.clone();
    match ch.recv()? {
        Message::Handshake(h) => state.check_handshake(&h)?,
        other => return Err(unexpected("HANDSHAKE", &other)),
    }
    ch.send(&Message::Handshake(state.handshake()))?;
    let rounds = session.rounds as usize;
    let mut seen: Vec<(Pair, Outcome, u8)> = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let ket = match ch.recv()? {
            Message::Qudit(bytes) => SparseKet::decode(&field, &bytes).map_err(|e| Failure::protocol(e.to_string()))?,
            other => return Err(unexpected("QUDIT", &other)),
        };
        let (pair, outcome, bit) = bob_measure(&field, &ket, &mut round_rng(session.seed, round as u64, Stream::Bob));
        ch.send(&Message::OutcomeAnnounce {
            pair: (pair.lo().value(), pair.hi().value()),
            in_pair: outcome.in_pair(),
        })?;
        seen.push((pair, outcome, bit));
    }
    let mut log = Vec::with_capacity(rounds);
    for (round, (pair, outcome, bit)) in seen.iter().enumerate() {
        let alice = match ch.recv()? {
            Message::PairAnnounce(i, j) => check_pair(&field, (i, j))?,
            other => return Err(unexpected("PAIR_ANNOUNCE", &other)),
        };
        let prep = PairState { pair: alice, sign: 0 };
        log.push(record(&field, round as u64, &prep, pair, *outcome, *bit));
    }
    let expected: Vec<u32> = log.iter().filter(|r| r.sifted).map(|r| r.round as u32).collect();
    match ch.recv()? {
        Message::SiftAccept(list) if list == expected => {}
        Message::SiftAccept(_) => return Err(Failure::protocol("SIFT_ACCEPT disagrees with announced pairs")),
        other => return Err(unexpected("SIFT_ACCEPT", &other)),
    }
    state.finish(ch, log)
}

// ---------------------------------------------------------------------------
// Middlebox

#[derive(Debug, Clone, Serialize)]
pub struct EveReport {
    pub channel: String,
    pub qudits: u64,
    pub undecodable_qudits: u64,
    pub forwarded_downstream: u64,
    pub forwarded_upstream: u64,
    pub action_counts: BTreeMap<String, u64>,
    /// Per-round action labels, when requested.
    pub actions: Option<Vec<String>>,
    pub error: Option<String>,
}

pub fn action_label(action: &ChannelAction) -> String {
    match action {
        ChannelAction::Unitary { shift, phase } if phase.is_zero() => format!("shift:{}", shift.value()),
        ChannelAction::Unitary { shift, phase } => format!("shift:{},phase:{}", shift.value(), phase.to_hex()),
        ChannelAction::InterceptResend => "intercept".into(),
        ChannelAction::IndependentPhases => "dephase".into(),
    }
}

fn pump(
    rx: &FrameReceiver,
    tx: &mut FrameSender,
    mut transform: impl FnMut(Frame) -> Frame,
) -> (u64, Option<String>) {
    let mut forwarded = 0;
    loop {
        let item = match rx.try_recv() {
            Some(item) => item,
            None => {
                if let Err(e) = tx.flush() {
                    return (forwarded, Some(e.to_string()));
                }
                rx.recv()
            }
        };
        match item {
            Ok(frame) => {
                let out = transform(frame);
                if let Err(e) = tx.send(&out) {
                    return (forwarded, Some(e.to_string()));
                }
                forwarded += 1;
            }
            Err(WireError::Closed) => {
                let _ = tx.flush();
                return (forwarded, None);
            }
            Err(e) => {
                let _ = tx.flush();
                return (forwarded, Some(e.to_string()));
            }
        }
    }
}

/// Relays frames between `upstream` (Alice) and `downstream` (Bob),
/// applying `config.session.channel` to every QUDIT. Rounds are counted in
/// arrival order and the channel draws from the (seed, round, channel)
/// stream, as in the in-process engine.
pub fn run_eve(config: &RoleConfig, upstream: Conn, downstream: Conn, log_actions: bool) -> EveReport {
    let mut report = EveReport {
        channel: config.session.channel.clone(),
        qudits: 0,
        undecodable_qudits: 0,
        forwarded_downstream: 0,
        forwarded_upstream: 0,
        action_counts: BTreeMap::new(),
        actions: log_actions.then(Vec::new),
        error: None,
    };
    let model = Field::new(config.session.n)
        .map_err(|e| e.to_string())
        .and_then(|f| ChannelModel::parse(&f, &config.session.channel).map_err(|e| e.to_string()));
    let model = match model {
        Ok(m) => m,
        Err(e) => {
            report.error = Some(e);
            return report;
        }
    };
    let field = model.field().clone();
    let seed = config.session.seed;
    let Conn { tx: mut up_tx, rx: up_rx } = upstream;
    let Conn { tx: mut down_tx, rx: down_rx } = downstream;
    let shared = Arc::new(Mutex::new(report));
    let back = thread::spawn(move || pump(&down_rx, &mut up_tx, |f| f));
    let stats = Arc::clone(&shared);
    let mut round = 0u64;
    let (down, err) = pump(&up_rx, &mut down_tx, |frame| {
        if frame.kind != QUDIT {
            return frame;
        }
        let mut rep = stats.lock().unwrap();
        rep.qudits += 1;
        let Ok(ket) = SparseKet::decode(&field, &frame.payload) else {
            rep.undecodable_qudits += 1;
            round += 1;
            return frame;
        };
        let mut rng = round_rng(seed, round, Stream::Channel);
        let action = model.sample_action(&mut rng);
        let out = apply_action(&field, action, &ket, &mut rng);
        let label = action_label(&action);
        *rep.action_counts.entry(label.clone()).or_insert(0) += 1;
        if let Some(a) = rep.actions.as_mut() {
            a.push(label);
        }
        round += 1;
        let mut payload = Vec::with_capacity(6);
        out.encode(&mut payload);
        Frame { kind: QUDIT, payload }
    });
    drop(down_tx);
    let (up, back_err) = back.join().unwrap_or((0, Some("relay thread panicked".into())));
    let mut rep = shared.lock().unwrap().clone();
    rep.forwarded_downstream = down;
    rep.forwarded_upstream = up;
    rep.error = err.or(back_err);
    rep
}

// ---------------------------------------------------------------------------
// Reference pipeline and in-process topologies

/// What netrun must reproduce: [`run_session`] followed, when the gate
/// passes, by [`simulate_distillation`] on the raw keys with pairing seeds
/// from the distillation stream.
#[derive(Debug, Clone)]
pub struct ReferenceRun {
    pub stats: SessionStats,
    pub alice_raw: Vec<u8>,
    pub bob_raw: Vec<u8>,
    pub alice_final: Option<Vec<u8>>,
    pub bob_final: Option<Vec<u8>>,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

pub fn reference_pipeline(session: &SessionConfig, params: &DistillParams) -> Result<ReferenceRun, ReferenceError> {
    let out = run_session(session)?;
    let mut run = ReferenceRun {
        stats: out.stats,
        alice_raw: out.alice_key,
        bob_raw: out.bob_key,
        alice_final: None,
        bob_final: None,
        lengths: Vec::new(),
    };
    if run.stats.status == SessionStatus::Pass {
        let keys = LabeledKey::from_bits(&run.alice_raw, &run.bob_raw);
        let d = simulate_distillation(&keys, params, &mut distill_rng(session.seed))?;
        run.lengths = d.lengths;
        run.alice_final = Some(d.alice);
        run.bob_final = Some(d.bob);
    }
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct LocalRun {
    pub alice: RoleReport,
    pub bob: RoleReport,
    pub eve: Option<EveReport>,
}

/// Runs Alice, Bob and (when `with_eve`) the middlebox on threads joined by
/// in-memory pipes.
pub fn run_local(config: &SessionConfig, params: &DistillParams, with_eve: bool) -> LocalRun {
    let role = |role| RoleConfig {
        role,
        session: config.clone(),
        distill: *params,
    };
    let (alice_cfg, bob_cfg, eve_cfg) = (role(Role::Alice), role(Role::Bob), role(Role::Eve));
    let (alice_conn, bob_conn, eve) = if with_eve {
        let (a, ea) = Conn::loopback_pair();
        let (eb, b) = Conn::loopback_pair();
        let eve = thread::spawn(move || run_eve(&eve_cfg, ea, eb, false));
        (a, b, Some(eve))
    } else {
        let (a, b) = Conn::loopback_pair();
        (a, b, None)
    };
    let bob = thread::spawn(move || run_bob(&bob_cfg, bob_conn));
    let alice = run_alice(&alice_cfg, alice_conn);
    let bob = bob.join().expect("bob thread");
    let eve = eve.map(|h| h.join().expect("eve thread"));
    LocalRun { alice, bob, eve }
}
