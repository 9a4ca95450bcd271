//! Broadcast communication between robots: the transmit/receive buffers, the
//! buffer manager's swap, a lossy channel model and the wire encoding of
//! aggregated messages.
//!
//! Wire layout, little-endian:
//!
//! ```text
//! "PAC1" | version u8 = 1 | sender u32 | seq u32 | timestamp_us u64
//!        | L u8 | K u8 | d_0..d_{L-1} u32 each
//!        | for l in 1..=L, k in 0..K: d_{l-1} x f32
//! ```

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcnn::AggregatedMessage;
use crate::graph::CommGraph;

pub const WIRE_MAGIC: [u8; 4] = *b"PAC1";
pub const WIRE_VERSION: u8 = 1;
const FIXED_HEADER: usize = 4 + 1 + 4 + 4 + 8 + 1 + 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("message declares {expected} bytes but {actual} are present")]
    Truncated { expected: usize, actual: usize },
    #[error("message declares an empty architecture")]
    EmptyArchitecture,
    #[error("message too large to encode: {0}")]
    TooLarge(&'static str),
}

/// Header fields of an encoded message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireHeader {
    pub sender_id: u32,
    pub seq: u32,
    pub timestamp_us: u64,
    pub taps: usize,
    pub layer_dims: Vec<usize>,
}

impl WireHeader {
    pub fn header_len(&self) -> usize {
        FIXED_HEADER + 4 * self.layer_dims.len()
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + 4 * self.taps * self.layer_dims.iter().sum::<usize>()
    }
}

/// Byte length of the header for a network with `layers` layers.
pub fn header_len(layers: usize) -> usize {
    FIXED_HEADER + 4 * layers
}

pub fn encode_message(m: &AggregatedMessage, timestamp_us: u64) -> Result<Vec<u8>, WireError> {
    let layers = u8::try_from(m.layers.len()).map_err(|_| WireError::TooLarge("layer count"))?;
    let taps = u8::try_from(m.taps()).map_err(|_| WireError::TooLarge("tap count"))?;
    if layers == 0 || taps == 0 {
        return Err(WireError::EmptyArchitecture);
    }
    let dims = m.layer_dims();
    let mut out = Vec::with_capacity(header_len(dims.len()) + 4 * m.value_count());
    out.extend_from_slice(&WIRE_MAGIC);
    out.push(WIRE_VERSION);
    out.extend_from_slice(&m.sender_id.to_le_bytes());
    out.extend_from_slice(&m.seq.to_le_bytes());
    out.extend_from_slice(&timestamp_us.to_le_bytes());
    out.push(layers);
    out.push(taps);
    for &d in &dims {
        let d = u32::try_from(d).map_err(|_| WireError::TooLarge("layer width"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (cols, &d) in m.layers.iter().zip(&dims) {
        if cols.len() != taps as usize || cols.iter().any(|c| c.len() != d) {
            return Err(WireError::TooLarge("ragged message"));
        }
        for col in cols {
            for &v in col.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parses and validates the header, including the total length it implies.
pub fn decode_header(bytes: &[u8]) -> Result<WireHeader, WireError> {
    if bytes.len() < 5 {
        return Err(WireError::Truncated {
            expected: FIXED_HEADER,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if magic != WIRE_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes[4] != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(bytes[4]));
    }
    if bytes.len() < FIXED_HEADER {
        return Err(WireError::Truncated {
            expected: FIXED_HEADER,
            actual: bytes.len(),
        });
    }
    let sender_id = read_u32(bytes, 5);
    let seq = read_u32(bytes, 9);
    let timestamp_us = u64::from_le_bytes(bytes[13..21].try_into().expect("8-byte slice"));
    let layers = bytes[21] as usize;
    let taps = bytes[22] as usize;
    if layers == 0 || taps == 0 {
        return Err(WireError::EmptyArchitecture);
    }
    let hlen = header_len(layers);
    if bytes.len() < hlen {
        return Err(WireError::Truncated {
            expected: hlen,
            actual: bytes.len(),
        });
    }
    let layer_dims = (0..layers)
        .map(|l| read_u32(bytes, FIXED_HEADER + 4 * l) as usize)
        .collect();
    let header = WireHeader {
        sender_id,
        seq,
        timestamp_us,
        taps,
        layer_dims,
    };
    let expected = header.encoded_len();
    if bytes.len() != expected {
        return Err(WireError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(header)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMessage {
    pub timestamp_us: u64,
    pub message: AggregatedMessage,
}

pub fn decode_message(bytes: &[u8]) -> Result<DecodedMessage, WireError> {
    let header = decode_header(bytes)?;
    let mut at = header.header_len();
    let layers = header
        .layer_dims
        .iter()
        .map(|&d| {
            (0..header.taps)
                .map(|_| {
                    let col = DVector::from_fn(d, |i, _| {
                        let off = at + 4 * i;
                        f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4-byte slice")) as f64
                    });
                    at += 4 * d;
                    col
                })
                .collect()
        })
        .collect();
    Ok(DecodedMessage {
        timestamp_us: header.timestamp_us,
        message: AggregatedMessage {
            sender_id: header.sender_id,
            seq: header.seq,
            layers,
        },
    })
}

/// An encoded message as it travels between robots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub sender_id: u32,
    pub seq: u32,
    pub timestamp_us: u64,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn encode(m: &AggregatedMessage, timestamp_us: u64) -> Result<Self, WireError> {
        Ok(Self {
            sender_id: m.sender_id,
            seq: m.seq,
            timestamp_us,
            payload: encode_message(m, timestamp_us)?,
        })
    }

    pub fn decode(&self) -> Result<AggregatedMessage, WireError> {
        decode_message(&self.payload).map(|d| d.message)
    }

    /// Header in the payload agrees with the envelope fields.
    fn is_well_formed(&self) -> bool {
        matches!(decode_header(&self.payload), Ok(h)
            if h.sender_id == self.sender_id && h.seq == self.seq && h.timestamp_us == self.timestamp_us)
    }
}

/// Outgoing slot; holds only the latest message.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TxBuffer {
    pub current: Option<WireMessage>,
}

/// Latest message per sender since the last swap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RxBuffer {
    slots: BTreeMap<u32, WireMessage>,
    /// Messages rejected because their payload did not parse.
    pub malformed: u64,
    /// Messages rejected because a newer one from the same sender was held.
    pub stale: u64,
}

impl RxBuffer {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, sender: u32) -> Option<&WireMessage> {
        self.slots.get(&sender)
    }

    pub fn senders(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots.keys().copied()
    }
}

/// Stores `msg` unless a message with a higher sequence number from the same
/// sender is already held. Malformed messages are counted and dropped.
pub fn receive(rx: &mut RxBuffer, msg: WireMessage) {
    if !msg.is_well_formed() {
        rx.malformed += 1;
        return;
    }
    match rx.slots.get(&msg.sender_id) {
        Some(held) if held.seq > msg.seq => rx.stale += 1,
        _ => {
            rx.slots.insert(msg.sender_id, msg);
        }
    }
}

/// Loads `new_msg` for transmission and hands back everything received since
/// the previous swap, leaving the receive side empty.
pub fn buffer_swap(tx: &mut TxBuffer, rx: &mut RxBuffer, new_msg: WireMessage) -> Vec<WireMessage> {
    tx.current = Some(new_msg);
    std::mem::take(&mut rx.slots).into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Independent per-delivery loss probability.
    pub drop_probability: f64,
    /// Fixed delivery delay in seconds.
    pub latency_s: f64,
}

/// Per-delivery loss model. The draw order is the delivery order, so a fixed
/// seed reproduces the same losses.
#[derive(Debug, Clone)]
pub struct Channel {
    config: ChannelConfig,
    rng: ChaCha8Rng,
}

impl Channel {
    pub fn new(config: ChannelConfig, rng: ChaCha8Rng) -> Self {
        Self { config, rng }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    fn delivers(&mut self) -> bool {
        let p = self.config.drop_probability;
        p <= 0.0 || self.rng.random::<f64>() >= p
    }

    /// Receivers of the transmit buffer's content: the sender's neighbors,
    /// minus channel losses. Empty when nothing is queued for transmission.
    pub fn broadcast(&mut self, graph: &CommGraph, sender: usize, tx: &TxBuffer) -> Vec<(usize, WireMessage)> {
        let Some(msg) = &tx.current else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(graph.degree(sender));
        for &j in graph.neighbors(sender) {
            if self.delivers() {
                out.push((j, msg.clone()));
            }
        }
        out
    }
}

/// Buffers of every robot plus messages still in flight.
#[derive(Debug, Clone)]
pub struct Network {
    tx: Vec<TxBuffer>,
    rx: Vec<RxBuffer>,
    in_flight: Vec<Vec<(u64, WireMessage)>>,
    channel: Channel,
    delivered: u64,
}

impl Network {
    pub fn new(robots: usize, channel: Channel) -> Self {
        Self {
            tx: vec![TxBuffer::default(); robots],
            rx: vec![RxBuffer::default(); robots],
            in_flight: vec![Vec::new(); robots],
            channel,
            delivered: 0,
        }
    }

    pub fn tx(&self, robot: usize) -> &TxBuffer {
        &self.tx[robot]
    }

    pub fn rx(&self, robot: usize) -> &RxBuffer {
        &self.rx[robot]
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    fn settle(&mut self, robot: usize, now_us: u64) {
        let pending = std::mem::take(&mut self.in_flight[robot]);
        for (arrival, msg) in pending {
            if arrival <= now_us {
                receive(&mut self.rx[robot], msg);
            } else {
                self.in_flight[robot].push((arrival, msg));
            }
        }
    }

    /// Transmitter step: broadcast `sender`'s transmit buffer to its neighbors.
    pub fn transmit(&mut self, graph: &CommGraph, sender: usize, now_us: u64) -> usize {
        let deliveries = self.channel.broadcast(graph, sender, &self.tx[sender]);
        let latency_us = (self.channel.config.latency_s * 1e6).round().max(0.0) as u64;
        let count = deliveries.len();
        for (receiver, msg) in deliveries {
            if latency_us == 0 {
                receive(&mut self.rx[receiver], msg);
            } else {
                self.in_flight[receiver].push((now_us + latency_us, msg));
            }
        }
        self.delivered += count as u64;
        count
    }

    /// Buffer-manager step for `robot`; `new_msg` of `None` keeps the current
    /// transmit content.
    pub fn swap(&mut self, robot: usize, new_msg: Option<WireMessage>, now_us: u64) -> Vec<WireMessage> {
        self.settle(robot, now_us);
        match new_msg {
            Some(m) => buffer_swap(&mut self.tx[robot], &mut self.rx[robot], m),
            None => std::mem::take(&mut self.rx[robot].slots).into_values().collect(),
        }
    }
}
