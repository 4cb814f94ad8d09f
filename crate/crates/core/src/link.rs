//! Ground-link plumbing: PPM channel mapping, the `FWNG` wire format,
//! transports and the fixed-rate ground-station loop.
//!
//! Wire layout, little-endian:
//!
//! ```text
//! "FWNG" | version u8 = 1 | type u8 | seq u32 | timestamp_us u64 | payload_len u32 | payload | crc32 u32
//! ```
//!
//! The header is 22 bytes. The CRC (IEEE) covers everything after the magic
//! up to the end of the payload.

use std::collections::VecDeque;
use std::io;
use std::net::UdpSocket;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Control;
use crate::dynamics::MAX_PITCH_CMD;
use crate::estimation::{ssim, MonitorEvent, QualityMonitor};
use crate::geom::wrap_angle;
use crate::harness::{Policy, TrialResult, TrialSim};
use crate::percept::Frame;
use crate::rng::SeedTree;

pub const MAGIC: [u8; 4] = *b"FWNG";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
pub const CRC_LEN: usize = 4;
/// Default UDP port of the loopback demo.
pub const DEFAULT_PORT: u16 = 47801;

pub const PPM_MIN: u16 = 1000;
pub const PPM_MAX: u16 = 2000;
pub const PPM_CENTER: u16 = 1500;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("bad magic")]
    BadMagic,
    #[error("buffer truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("crc mismatch: computed {computed:#010x}, received {received:#010x}")]
    BadCrc { computed: u32, received: u32 },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed payload: {0}")]
    BadPayload(String),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("ppm channel {channel} width {width} outside [1000, 2000]")]
    OutOfRange { channel: usize, width: u16 },
    #[error("transport closed")]
    TransportClosed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Channel pulse widths in microseconds: throttle, aileron, elevator, rudder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PpmFrame {
    pub throttle: u16,
    pub aileron: u16,
    pub elevator: u16,
    pub rudder: u16,
}

impl PpmFrame {
    pub fn to_array(&self) -> [u16; 4] {
        [self.throttle, self.aileron, self.elevator, self.rudder]
    }

    pub fn from_array(a: [u16; 4]) -> Self {
        Self {
            throttle: a[0],
            aileron: a[1],
            elevator: a[2],
            rudder: a[3],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array()
            .iter()
            .all(|w| (PPM_MIN..=PPM_MAX).contains(w))
    }
}

fn pulse(v: f64) -> u16 {
    v.round().clamp(f64::from(PPM_MIN), f64::from(PPM_MAX)) as u16
}

/// Maps a control to pulse widths. The rudder channel carries the heading
/// error `wrap(yaw_cmd - heading)` over `[-pi, pi]`.
pub fn encode_ppm(control: &Control, heading: f64) -> PpmFrame {
    let c = control.clamped();
    let half = f64::from(PPM_CENTER - PPM_MIN);
    PpmFrame {
        throttle: pulse(f64::from(PPM_MIN) + 1000.0 * c.throttle),
        aileron: pulse(f64::from(PPM_CENTER) + half * c.aileron),
        elevator: pulse(f64::from(PPM_CENTER) + half * c.pitch_cmd / MAX_PITCH_CMD),
        rudder: pulse(
            f64::from(PPM_CENTER) + half * wrap_angle(c.yaw_cmd - heading) / std::f64::consts::PI,
        ),
    }
}

/// Inverse of [`encode_ppm`] for the same `heading`.
pub fn decode_ppm(frame: &PpmFrame, heading: f64) -> Result<Control, LinkError> {
    for (channel, &width) in frame.to_array().iter().enumerate() {
        if !(PPM_MIN..=PPM_MAX).contains(&width) {
            return Err(LinkError::OutOfRange { channel, width });
        }
    }
    let half = f64::from(PPM_CENTER - PPM_MIN);
    let bipolar = |w: u16| (f64::from(w) - f64::from(PPM_CENTER)) / half;
    Ok(Control {
        throttle: (f64::from(frame.throttle) - f64::from(PPM_MIN)) / 1000.0,
        aileron: bipolar(frame.aileron),
        pitch_cmd: bipolar(frame.elevator) * MAX_PITCH_CMD,
        yaw_cmd: wrap_angle(heading + bipolar(frame.rudder) * std::f64::consts::PI),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Manual,
    Autonomous,
}

impl Mode {
    fn to_byte(self) -> u8 {
        match self {
            Mode::Manual => 0,
            Mode::Autonomous => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Mode::Manual),
            1 => Some(Mode::Autonomous),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinkMessage {
    Frame {
        width: u16,
        height: u16,
        /// 0 = packed RGB8.
        pixfmt: u8,
        pixels: Vec<u8>,
    },
    Control {
        values: [f32; 4],
        ppm: PpmFrame,
    },
    Mode(Mode),
    Safety {
        flag: bool,
        ssim: f32,
    },
    Ack,
}

impl LinkMessage {
    pub fn type_byte(&self) -> u8 {
        match self {
            LinkMessage::Frame { .. } => 0,
            LinkMessage::Control { .. } => 1,
            LinkMessage::Mode(_) => 2,
            LinkMessage::Safety { .. } => 3,
            LinkMessage::Ack => 4,
        }
    }

    /// Frame message carrying `frame` as packed RGB8.
    pub fn from_frame(frame: &Frame) -> Result<Self, LinkError> {
        let dim = |v: u32| {
            u16::try_from(v)
                .map_err(|_| LinkError::BadPayload(format!("dimension {v} exceeds u16")))
        };
        Ok(LinkMessage::Frame {
            width: dim(frame.width)?,
            height: dim(frame.height)?,
            pixfmt: 0,
            pixels: frame.pixels.clone(),
        })
    }

    pub fn to_frame(&self) -> Option<Frame> {
        match self {
            LinkMessage::Frame {
                width,
                height,
                pixels,
                ..
            } => Some(Frame {
                width: u32::from(*width),
                height: u32::from(*height),
                pixels: pixels.clone(),
            }),
            _ => None,
        }
    }

    pub fn control(control: &Control, heading: f64) -> Self {
        let a = control.to_array();
        LinkMessage::Control {
            values: a.map(|v| v as f32),
            ppm: encode_ppm(control, heading),
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            LinkMessage::Frame {
                width,
                height,
                pixfmt,
                pixels,
            } => {
                p.extend_from_slice(&width.to_le_bytes());
                p.extend_from_slice(&height.to_le_bytes());
                p.push(*pixfmt);
                p.extend_from_slice(pixels);
            }
            LinkMessage::Control { values, ppm } => {
                for v in values {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                for w in ppm.to_array() {
                    p.extend_from_slice(&w.to_le_bytes());
                }
            }
            LinkMessage::Mode(m) => p.push(m.to_byte()),
            LinkMessage::Safety { flag, ssim } => {
                p.push(u8::from(*flag));
                p.extend_from_slice(&ssim.to_le_bytes());
            }
            LinkMessage::Ack => {}
        }
        p
    }

    fn from_payload(kind: u8, p: &[u8]) -> Result<Self, LinkError> {
        let bad = |what: &str| LinkError::BadPayload(what.to_string());
        let u16_at = |i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
        let f32_at = |i: usize| f32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]]);
        match kind {
            0 => {
                if p.len() < 5 {
                    return Err(bad("frame header"));
                }
                let (width, height, pixfmt) = (u16_at(0), u16_at(2), p[4]);
                if pixfmt != 0 {
                    return Err(bad("unknown pixel format"));
                }
                if p.len() - 5 != usize::from(width) * usize::from(height) * 3 {
                    return Err(bad("pixel count does not match dimensions"));
                }
                Ok(LinkMessage::Frame {
                    width,
                    height,
                    pixfmt,
                    pixels: p[5..].to_vec(),
                })
            }
            1 => {
                if p.len() != 24 {
                    return Err(bad("control length"));
                }
                Ok(LinkMessage::Control {
                    values: std::array::from_fn(|k| f32_at(4 * k)),
                    ppm: PpmFrame::from_array(std::array::from_fn(|k| u16_at(16 + 2 * k))),
                })
            }
            2 => match p {
                [b] => Mode::from_byte(*b)
                    .map(LinkMessage::Mode)
                    .ok_or_else(|| bad("mode value")),
                _ => Err(bad("mode length")),
            },
            3 => {
                if p.len() != 5 || p[0] > 1 {
                    return Err(bad("safety payload"));
                }
                Ok(LinkMessage::Safety {
                    flag: p[0] == 1,
                    ssim: f32_at(1),
                })
            }
            4 if p.is_empty() => Ok(LinkMessage::Ack),
            4 => Err(bad("ack carries no payload")),
            other => Err(LinkError::UnknownType(other)),
        }
    }
}

pub fn serialize(msg: &LinkMessage, seq: u32, timestamp_us: u64) -> Vec<u8> {
    let payload = msg.payload();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.type_byte());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&timestamp_us.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses one message; returns `(message, seq, timestamp_us)`.
pub fn deserialize(bytes: &[u8]) -> Result<(LinkMessage, u32, u64), LinkError> {
    let magic_len = MAGIC.len().min(bytes.len());
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(LinkError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(LinkError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let payload_len = word(18) as usize;
    let total = HEADER_LEN + payload_len + CRC_LEN;
    if bytes.len() < total {
        return Err(LinkError::Truncated {
            needed: total,
            have: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(LinkError::TrailingBytes(bytes.len() - total));
    }
    let computed = crc32fast::hash(&bytes[MAGIC.len()..HEADER_LEN + payload_len]);
    let received = word(HEADER_LEN + payload_len);
    if computed != received {
        return Err(LinkError::BadCrc { computed, received });
    }
    if bytes[4] != VERSION {
        return Err(LinkError::UnsupportedVersion(bytes[4]));
    }
    let kind = bytes[5];
    if kind > 4 {
        return Err(LinkError::UnknownType(kind));
    }
    let seq = word(6);
    let timestamp = u64::from_le_bytes(bytes[10..18].try_into().expect("8-byte slice"));
    let msg = LinkMessage::from_payload(kind, &bytes[HEADER_LEN..HEADER_LEN + payload_len])?;
    Ok((msg, seq, timestamp))
}

/// Datagram-style byte transport. `recv` never blocks.
pub trait Transport {
    fn send(&mut self, bytes: &[u8]) -> Result<(), LinkError>;
    fn recv(&mut self) -> Result<Option<Vec<u8>>, LinkError>;
}

#[derive(Debug, Default)]
struct Queues {
    to_a: VecDeque<Vec<u8>>,
    to_b: VecDeque<Vec<u8>>,
    closed: bool,
}

/// One end of a lossless in-process link.
#[derive(Debug, Clone)]
pub struct MemoryEnd {
    shared: Arc<Mutex<Queues>>,
    is_a: bool,
}

impl MemoryEnd {
    /// Two connected ends.
    pub fn pair() -> (MemoryEnd, MemoryEnd) {
        let shared = Arc::new(Mutex::new(Queues::default()));
        (
            MemoryEnd {
                shared: shared.clone(),
                is_a: true,
            },
            MemoryEnd {
                shared,
                is_a: false,
            },
        )
    }

    /// Closes both directions; queued messages can still be drained.
    pub fn close(&self) {
        self.shared.lock().expect("link mutex").closed = true;
    }
}

impl Transport for MemoryEnd {
    fn send(&mut self, bytes: &[u8]) -> Result<(), LinkError> {
        let mut q = self.shared.lock().expect("link mutex");
        if q.closed {
            return Err(LinkError::TransportClosed);
        }
        if self.is_a {
            q.to_b.push_back(bytes.to_vec());
        } else {
            q.to_a.push_back(bytes.to_vec());
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Vec<u8>>, LinkError> {
        let mut q = self.shared.lock().expect("link mutex");
        let closed = q.closed;
        let inbox = if self.is_a { &mut q.to_a } else { &mut q.to_b };
        match inbox.pop_front() {
            Some(m) => Ok(Some(m)),
            None if closed => Err(LinkError::TransportClosed),
            None => Ok(None),
        }
    }
}

/// Non-blocking UDP endpoint connected to one peer.
#[derive(Debug)]
pub struct UdpTransport {
    socket: UdpSocket,
}

impl UdpTransport {
    pub fn connect(local: &str, peer: &str) -> Result<Self, LinkError> {
        let socket = UdpSocket::bind(local)?;
        socket.connect(peer)?;
        socket.set_nonblocking(true)?;
        Ok(Self { socket })
    }

    /// Two loopback endpoints on `port` and `port + 1`; port 0 picks free ports.
    pub fn loopback_pair(port: u16) -> Result<(UdpTransport, UdpTransport), LinkError> {
        let (a, b) = if port == 0 {
            (
                UdpSocket::bind("127.0.0.1:0")?,
                UdpSocket::bind("127.0.0.1:0")?,
            )
        } else {
            (
                UdpSocket::bind(("127.0.0.1", port))?,
                UdpSocket::bind(("127.0.0.1", port.wrapping_add(1)))?,
            )
        };
        a.connect(b.local_addr()?)?;
        b.connect(a.local_addr()?)?;
        a.set_nonblocking(true)?;
        b.set_nonblocking(true)?;
        Ok((UdpTransport { socket: a }, UdpTransport { socket: b }))
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, bytes: &[u8]) -> Result<(), LinkError> {
        self.socket.send(bytes)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Vec<u8>>, LinkError> {
        let mut buf = vec![0u8; 65_536];
        match self.socket.recv(&mut buf) {
            Ok(n) => {
                buf.truncate(n);
                Ok(Some(buf))
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub tick_rate: f64,
    /// Probability that a frame message is lost.
    pub drop_probability: f64,
    /// Frame delivery delay in whole ticks.
    pub latency_ticks: usize,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            tick_rate: 20.0,
            drop_probability: 0.0,
            latency_ticks: 0,
            seed: 0,
        }
    }
}

impl LinkConfig {
    pub fn is_valid(&self) -> bool {
        self.tick_rate > 0.0 && (0.0..=1.0).contains(&self.drop_probability)
    }

    pub fn timestamp_us(&self, tick: usize) -> u64 {
        (tick as f64 * 1e6 / self.tick_rate).round() as u64
    }
}

/// Scripted transmitter: mode switches at given ticks and the stick
/// command flown while in manual mode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PilotScript {
    pub mode_changes: Vec<(usize, Mode)>,
    pub manual_control: Option<Control>,
}

/// Per-tick frame transformation applied on the aircraft side before sending.
pub type FrameHook<'a> = &'a dyn Fn(usize, Frame) -> Frame;

#[derive(Default)]
pub struct LoopOptions<'a> {
    pub pilot: PilotScript,
    pub degrade: Option<FrameHook<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub tick: usize,
    pub mode: Mode,
    /// SSIM between the two latest received frames, when available.
    pub ssim: Option<f64>,
    pub dropped: bool,
    pub ppm: [u16; 4],
    /// Safety flag raised at this tick.
    pub safety: bool,
}

#[derive(Debug, Clone)]
pub struct LoopLog {
    pub ticks: Vec<TickLog>,
    pub monitor_events: Vec<MonitorEvent>,
    pub result: TrialResult,
    /// Set when the transport closed before the trial finished.
    pub closed_early: bool,
    /// Messages that failed to parse.
    pub rejected_messages: usize,
}

impl LoopLog {
    pub fn dropped_ticks(&self) -> Vec<usize> {
        self.ticks
            .iter()
            .filter(|t| t.dropped)
            .map(|t| t.tick)
            .collect()
    }

    pub fn safety_ticks(&self) -> Vec<usize> {
        self.ticks
            .iter()
            .filter(|t| t.safety)
            .map(|t| t.tick)
            .collect()
    }

    /// One JSON object per tick.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for t in &self.ticks {
            s.push_str(&serde_json::to_string(t).expect("tick log is serializable"));
            s.push('\n');
        }
        s
    }
}

/// Runs a trial through the link at a simulated fixed rate.
///
/// Each tick the aircraft renders and sends a frame (subject to seeded drops
/// and whole-tick latency), the ground station drains its inbox, updates the
/// quality monitor, picks the policy or manual command and sends a control
/// message, and the aircraft applies the command it received. The aircraft
/// applies the ground station's full-precision command, so a lossless link
/// reproduces the direct harness run bit for bit. A tick with no command
/// received repeats the previous one.
pub fn run_loop(
    mut sim: TrialSim,
    policy: &mut dyn Policy,
    mut monitor: QualityMonitor,
    config: &LinkConfig,
    air: &mut dyn Transport,
    ground: &mut dyn Transport,
    options: LoopOptions<'_>,
) -> LoopLog {
    let mut drops = SeedTree::new(config.seed).stream("link-drops");
    let mut pending: VecDeque<(usize, Vec<u8>)> = VecDeque::new();
    let mut mode = Mode::Autonomous;
    let mut last_frame: Option<Frame> = None;
    let mut applied = sim.history.latest();
    let mut ticks = Vec::new();
    let mut events = Vec::new();
    let mut rejected = 0;
    let mut closed_early = false;

    'run: while !sim.finished() {
        let tick = sim.tick();
        let stamp = config.timestamp_us(tick);

        // Aircraft side: camera frame out.
        let (mut frame, _) = sim.render();
        if let Some(hook) = options.degrade {
            frame = hook(tick, frame);
        }
        let dropped = drops.random::<f64>() < config.drop_probability;
        if !dropped {
            match LinkMessage::from_frame(&frame) {
                Ok(msg) => pending.push_back((
                    tick + config.latency_ticks,
                    serialize(&msg, tick as u32, stamp),
                )),
                Err(_) => rejected += 1,
            }
        }
        while pending.front().is_some_and(|(due, _)| *due <= tick) {
            let (_, bytes) = pending.pop_front().expect("front checked");
            if air.send(&bytes).is_err() {
                closed_early = true;
                break 'run;
            }
        }
        for &(_, m) in options
            .pilot
            .mode_changes
            .iter()
            .filter(|(t, _)| *t == tick)
        {
            if air
                .send(&serialize(&LinkMessage::Mode(m), tick as u32, stamp))
                .is_err()
            {
                closed_early = true;
                break 'run;
            }
        }

        // Ground side: drain inbox.
        let mut tick_ssim = None;
        let mut safety = false;
        loop {
            let bytes = match ground.recv() {
                Ok(Some(b)) => b,
                Ok(None) => break,
                Err(_) => {
                    closed_early = true;
                    break 'run;
                }
            };
            match deserialize(&bytes) {
                Ok((LinkMessage::Mode(m), _, _)) => mode = m,
                Ok((msg @ LinkMessage::Frame { .. }, _, _)) => {
                    let received = msg.to_frame().expect("frame message");
                    if let Some(prev) = &last_frame {
                        if let Ok(s) = ssim(prev, &received) {
                            let raised = monitor.update(s);
                            tick_ssim = Some(s);
                            safety |= raised;
                            events.push(MonitorEvent {
                                t: sim.time(),
                                ssim: s,
                                flag: raised,
                            });
                        }
                    }
                    last_frame = Some(received);
                }
                Ok(_) => {}
                Err(_) => rejected += 1,
            }
        }
        if safety {
            let msg = LinkMessage::Safety {
                flag: true,
                ssim: tick_ssim.unwrap_or(f64::NAN) as f32,
            };
            if ground.send(&serialize(&msg, tick as u32, stamp)).is_err() {
                closed_early = true;
                break 'run;
            }
        }

        let (control, runtime) = match (mode, options.pilot.manual_control) {
            (Mode::Manual, Some(manual)) => (manual, 0.0),
            (Mode::Manual, None) => (applied, 0.0),
            (Mode::Autonomous, _) => {
                let frame_ref = if policy.needs_frame() {
                    last_frame.as_ref()
                } else {
                    None
                };
                let obs = sim.observation(frame_ref);
                let start = Instant::now();
                let c = policy.act(&obs);
                (c, start.elapsed().as_secs_f64())
            }
        };
        let msg = LinkMessage::control(&control, sim.own().yaw);
        let ppm = match &msg {
            LinkMessage::Control { ppm, .. } => ppm.to_array(),
            _ => unreachable!("control message"),
        };
        if ground.send(&serialize(&msg, tick as u32, stamp)).is_err() {
            closed_early = true;
            break 'run;
        }

        // Aircraft side: take the command and step.
        loop {
            match air.recv() {
                Ok(Some(bytes)) => match deserialize(&bytes) {
                    Ok((LinkMessage::Control { .. }, seq, _)) => {
                        if seq as usize == tick {
                            applied = control;
                        }
                        let _ = air.send(&serialize(&LinkMessage::Ack, seq, stamp));
                    }
                    Ok(_) => {}
                    Err(_) => rejected += 1,
                },
                Ok(None) => break,
                Err(_) => {
                    closed_early = true;
                    break 'run;
                }
            }
        }
        ticks.push(TickLog {
            tick,
            mode,
            ssim: tick_ssim,
            dropped,
            ppm,
            safety,
        });
        sim.advance(applied, runtime);
    }

    // Drain acknowledgements left for the ground station.
    while let Ok(Some(bytes)) = ground.recv() {
        if deserialize(&bytes).is_err() {
            rejected += 1;
        }
    }

    LoopLog {
        ticks,
        monitor_events: events,
        result: sim.into_result(),
        closed_early,
        rejected_messages: rejected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{
        run_trial, tracking_scenario, ExpertFollower, Maneuver, TrialConfig, VisionFollower,
    };
    use crate::percept::corrupt_frame;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn ppm_center_and_full_scale() {
        assert_eq!(
            encode_ppm(&Control::new(0.0, 0.0, 0.0, 0.7), 0.7).to_array(),
            [1000, 1500, 1500, 1500]
        );
        assert_eq!(
            encode_ppm(&Control::new(1.0, 0.0, 0.0, 0.0), 0.0).throttle,
            2000
        );
        let c = decode_ppm(&PpmFrame::from_array([1000, 1500, 1500, 1500]), 0.3).unwrap();
        assert_eq!(c, Control::new(0.0, 0.0, 0.0, 0.3));
        let c = decode_ppm(&PpmFrame::from_array([2000; 4]), 0.0).unwrap();
        assert_eq!(
            (c.throttle, c.aileron, c.pitch_cmd),
            (1.0, 1.0, MAX_PITCH_CMD)
        );
        assert!((wrap_angle(c.yaw_cmd) + PI).abs() < 1e-12);
        assert!(matches!(
            decode_ppm(&PpmFrame::from_array([999, 1500, 1500, 1500]), 0.0),
            Err(LinkError::OutOfRange {
                channel: 0,
                width: 999
            })
        ));
    }

    #[test]
    fn ppm_roundtrip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let heading = rng.random_range(-PI..PI);
            let c = Control::new(
                rng.random_range(0.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-0.5..=0.5),
                rng.random_range(-PI..PI),
            );
            let f = encode_ppm(&c, heading);
            assert!(f.is_valid());
            let d = decode_ppm(&f, heading).unwrap();
            assert!((d.throttle - c.throttle).abs() <= 0.0005 + 1e-12);
            assert!((d.aileron - c.aileron).abs() <= 0.001 + 1e-12);
            assert!((d.pitch_cmd - c.pitch_cmd).abs() <= 0.0005 + 1e-12);
            assert!(wrap_angle(d.yaw_cmd - c.yaw_cmd).abs() <= PI / 1000.0 + 1e-12);
        }
    }

    fn sample_messages() -> Vec<LinkMessage> {
        vec![
            LinkMessage::Frame {
                width: 3,
                height: 2,
                pixfmt: 0,
                pixels: (0..18).collect(),
            },
            LinkMessage::control(&Control::new(0.8, -0.2, 0.1, 1.0), 0.9),
            LinkMessage::Mode(Mode::Manual),
            LinkMessage::Mode(Mode::Autonomous),
            LinkMessage::Safety {
                flag: true,
                ssim: 0.42,
            },
            LinkMessage::Ack,
        ]
    }

    #[test]
    fn roundtrip_all_variants() {
        for (i, m) in sample_messages().into_iter().enumerate() {
            let bytes = serialize(&m, i as u32 + 10, 123_456_789);
            assert_eq!(
                deserialize(&bytes).unwrap(),
                (m, i as u32 + 10, 123_456_789)
            );
        }
    }

    #[test]
    fn mode_message_layout() {
        let bytes = serialize(&LinkMessage::Mode(Mode::Manual), 1, 2);
        assert_eq!(bytes.len(), HEADER_LEN + 1 + CRC_LEN);
        assert_eq!(&bytes[..4], b"FWNG");
        assert_eq!((bytes[4], bytes[5]), (1, 2));
        assert_eq!(bytes[HEADER_LEN], 0);
        assert_eq!(
            serialize(&LinkMessage::Ack, 7, 0),
            serialize(&LinkMessage::Ack, 7, 0)
        );
    }

    #[test]
    fn payload_bit_flips_are_detected() {
        let msg = LinkMessage::Frame {
            width: 8,
            height: 8,
            pixfmt: 0,
            pixels: (0..192u32).map(|v| (v * 7) as u8).collect(),
        };
        let bytes = serialize(&msg, 5, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let mut b = bytes.clone();
            let bit = rng.random_range(HEADER_LEN * 8..(bytes.len() - CRC_LEN) * 8);
            b[bit / 8] ^= 1 << (bit % 8);
            assert!(matches!(deserialize(&b), Err(LinkError::BadCrc { .. })));
        }
    }

    #[test]
    fn distinct_error_kinds() {
        let good = serialize(&LinkMessage::Mode(Mode::Manual), 1, 2);
        assert!(matches!(
            deserialize(&good[..10]),
            Err(LinkError::Truncated { .. })
        ));
        assert!(matches!(
            deserialize(&good[..good.len() - 1]),
            Err(LinkError::Truncated { .. })
        ));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize(&bad), Err(LinkError::BadMagic)));
        let mut unknown = good[..HEADER_LEN + 1].to_vec();
        unknown[5] = 9;
        let crc = crc32fast::hash(&unknown[4..]);
        unknown.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            deserialize(&unknown),
            Err(LinkError::UnknownType(9))
        ));
        let mut longer = good.clone();
        longer.push(0);
        assert!(matches!(
            deserialize(&longer),
            Err(LinkError::TrailingBytes(1))
        ));
    }

    proptest! {
        #[test]
        fn control_and_safety_roundtrip(
            vals in proptest::array::uniform4(-10.0f32..10.0),
            ppm in proptest::array::uniform4(1000u16..=2000),
            flag in any::<bool>(), s in -1.0f32..1.0, seq in any::<u32>(), ts in any::<u64>()
        ) {
            let c = LinkMessage::Control { values: vals, ppm: PpmFrame::from_array(ppm) };
            prop_assert_eq!(deserialize(&serialize(&c, seq, ts)).unwrap(), (c, seq, ts));
            let m = LinkMessage::Safety { flag, ssim: s };
            prop_assert_eq!(deserialize(&serialize(&m, seq, ts)).unwrap(), (m, seq, ts));
        }
    }

    fn tracking_setup() -> (crate::harness::Scenario, TrialConfig) {
        let c = TrialConfig::default();
        (
            tracking_scenario(Maneuver::LeftSDescent, 4, &c.gains, 0.05),
            c,
        )
    }

    #[test]
    fn lossless_link_matches_direct_run() {
        let (s, c) = tracking_setup();
        for vision in [false, true] {
            let make = || -> Box<dyn Policy> {
                if vision {
                    Box::new(VisionFollower::new(c.gains, &c.render.intrinsics))
                } else {
                    Box::new(ExpertFollower { gains: c.gains })
                }
            };
            let direct = run_trial(&s, make().as_mut(), &c);
            let (mut air, mut ground) = MemoryEnd::pair();
            let log = run_loop(
                TrialSim::new(&s, &c),
                make().as_mut(),
                QualityMonitor::default(),
                &LinkConfig::default(),
                &mut air,
                &mut ground,
                LoopOptions::default(),
            );
            assert!(!log.closed_early);
            assert_eq!(log.ticks.len(), s.ticks());
            assert_eq!(log.result.follower, direct.follower);
            assert_eq!(log.result.leader, direct.leader);
            assert_eq!(log.rejected_messages, 0);
        }
    }

    #[test]
    fn manual_override_applies_same_tick() {
        let (s, c) = tracking_setup();
        let manual = Control::new(0.3, -0.5, 0.2, 0.0);
        let (mut air, mut ground) = MemoryEnd::pair();
        let log = run_loop(
            TrialSim::new(&s, &c),
            &mut ExpertFollower { gains: c.gains },
            QualityMonitor::default(),
            &LinkConfig::default(),
            &mut air,
            &mut ground,
            LoopOptions {
                pilot: PilotScript {
                    mode_changes: vec![(40, Mode::Manual)],
                    manual_control: Some(manual),
                },
                degrade: None,
            },
        );
        assert_eq!(log.ticks[39].mode, Mode::Autonomous);
        assert_eq!(log.ticks[40].mode, Mode::Manual);
        assert_eq!(log.result.follower.controls[40], manual);
        assert_ne!(log.result.follower.controls[39], manual);
    }

    #[test]
    fn degraded_frames_raise_safety_on_fifth() {
        let (s, c) = tracking_setup();
        let hook = |tick: usize, f: Frame| {
            if tick >= 10 {
                corrupt_frame(&f, 0.6, tick as u64)
            } else {
                f
            }
        };
        let (mut air, mut ground) = MemoryEnd::pair();
        let log = run_loop(
            TrialSim::new(&s, &c),
            &mut ExpertFollower { gains: c.gains },
            QualityMonitor::default(),
            &LinkConfig::default(),
            &mut air,
            &mut ground,
            LoopOptions {
                pilot: PilotScript::default(),
                degrade: Some(&hook),
            },
        );
        for t in 10..15 {
            assert!(log.ticks[t].ssim.unwrap() < 0.7, "tick {t}");
        }
        assert!(log.ticks[..10]
            .iter()
            .all(|t| t.ssim.is_none_or(|v| v >= 0.7)));
        assert_eq!(log.safety_ticks(), vec![14]);
    }

    #[test]
    fn drops_are_seeded_and_do_not_stall() {
        let (s, c) = tracking_setup();
        let run = || {
            let (mut air, mut ground) = MemoryEnd::pair();
            run_loop(
                TrialSim::new(&s, &c),
                &mut VisionFollower::new(c.gains, &c.render.intrinsics),
                QualityMonitor::default(),
                &LinkConfig {
                    drop_probability: 0.2,
                    latency_ticks: 1,
                    seed: 11,
                    ..LinkConfig::default()
                },
                &mut air,
                &mut ground,
                LoopOptions::default(),
            )
        };
        let (a, b) = (run(), run());
        assert_eq!(a.ticks.len(), s.ticks());
        assert!(!a.dropped_ticks().is_empty());
        assert_eq!(a.dropped_ticks(), b.dropped_ticks());
        assert_eq!(a.result.follower, b.result.follower);
    }

    struct ClosingTransport {
        inner: MemoryEnd,
        sends_left: usize,
    }

    impl Transport for ClosingTransport {
        fn send(&mut self, bytes: &[u8]) -> Result<(), LinkError> {
            if self.sends_left == 0 {
                return Err(LinkError::TransportClosed);
            }
            self.sends_left -= 1;
            self.inner.send(bytes)
        }

        fn recv(&mut self) -> Result<Option<Vec<u8>>, LinkError> {
            self.inner.recv()
        }
    }

    #[test]
    fn closed_transport_ends_with_partial_log() {
        let (s, c) = tracking_setup();
        let (air, mut ground) = MemoryEnd::pair();
        let mut air = ClosingTransport {
            inner: air,
            sends_left: 20,
        };
        let log = run_loop(
            TrialSim::new(&s, &c),
            &mut ExpertFollower { gains: c.gains },
            QualityMonitor::default(),
            &LinkConfig::default(),
            &mut air,
            &mut ground,
            LoopOptions::default(),
        );
        assert!(log.closed_early);
        assert!(!log.ticks.is_empty() && log.ticks.len() < s.ticks());
        assert_eq!(log.result.follower.controls.len(), log.ticks.len());
    }

    #[test]
    fn memory_close_is_reported() {
        let (mut a, mut b) = MemoryEnd::pair();
        a.send(b"x").unwrap();
        a.close();
        assert_eq!(b.recv().unwrap(), Some(b"x".to_vec()));
        assert!(matches!(b.recv(), Err(LinkError::TransportClosed)));
        assert!(matches!(a.send(b"y"), Err(LinkError::TransportClosed)));
    }

    #[test]
    fn udp_loopback_carries_messages() {
        let Ok((mut a, mut b)) = UdpTransport::loopback_pair(0) else {
            return;
        };
        let bytes = serialize(&LinkMessage::Mode(Mode::Manual), 3, 4);
        a.send(&bytes).unwrap();
        let mut got = None;
        for _ in 0..1000 {
            if let Some(m) = b.recv().unwrap() {
                got = Some(m);
                break;
            }
            std::thread::sleep(std::time::Duration::from_millis(1));
        }
        assert_eq!(got, Some(bytes));
    }
}
