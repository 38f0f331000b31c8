//! Host-side capture tooling: radiotap header build/parse, classic pcap
//! read/write, demux of the SDIO host queue into capture records, and a
//! seeded test-corpus generator.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{Dot11Frame, FrameSubtype, MacAddr, SdioFrame, MONITOR_CHANNEL};
use crate::{Error, Result};

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_IEEE802_11_RADIOTAP: u32 = 127;

// present-word bits
const RT_FLAGS: u32 = 1 << 1;
const RT_CHANNEL: u32 = 1 << 3;
const RT_EXT: u32 = 1 << 31;
const RT_FLAG_BADFCS: u8 = 0x40;

/// (size, alignment) for radiotap fields 0..=13; later bits have no
/// defined layout here and stop the field walk.
const RT_FIELDS: &[(u16, u16)] = &[
    (8, 8), // TSFT
    (1, 1), // Flags
    (1, 1), // Rate
    (4, 2), // Channel
    (2, 2), // FHSS
    (1, 1), // dBm antenna signal
    (1, 1), // dBm antenna noise
    (2, 2), // lock quality
    (2, 2), // TX attenuation
    (2, 2), // dB TX attenuation
    (1, 1), // dBm TX power
    (1, 1), // antenna
    (1, 1), // dB antenna signal
    (1, 1), // dB antenna noise
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadiotapDefaults {
    /// Channel flags field; 0x0080 marks the 2.4 GHz band.
    pub channel_flags: u16,
}

impl Default for RadiotapDefaults {
    fn default() -> Self {
        RadiotapDefaults { channel_flags: 0x0080 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadiotapHeader {
    pub length: u16,
    pub present: u32,
    pub flags: Option<u8>,
    /// (frequency MHz, channel flags)
    pub channel: Option<(u16, u16)>,
}

pub fn channel_to_mhz(channel: u8) -> u16 {
    2407 + 5 * channel as u16
}

/// Minimal radiotap header the firmware prepends in monitor mode:
/// Flags + Channel present, 14 bytes total.
pub fn build_radiotap(channel: u8, fcs_ok: bool, defaults: &RadiotapDefaults) -> Vec<u8> {
    let mut out = vec![0u8; 14];
    // version 0, pad 0
    out[2..4].copy_from_slice(&14u16.to_le_bytes());
    out[4..8].copy_from_slice(&(RT_FLAGS | RT_CHANNEL).to_le_bytes());
    out[8] = if fcs_ok { 0 } else { RT_FLAG_BADFCS };
    // byte 9: alignment pad before the channel field
    out[10..12].copy_from_slice(&channel_to_mhz(channel).to_le_bytes());
    out[12..14].copy_from_slice(&defaults.channel_flags.to_le_bytes());
    out
}

/// Parse a radiotap header, returning it and the payload that follows.
/// Fields past the ones this module knows stop the walk; the declared
/// header length still decides where the payload starts.
pub fn parse_radiotap(bytes: &[u8]) -> Result<(RadiotapHeader, &[u8])> {
    if bytes.len() < 8 {
        return Err(Error::Radiotap("truncated header".into()));
    }
    if bytes[0] != 0 {
        return Err(Error::Radiotap(format!("unsupported version {}", bytes[0])));
    }
    let length = u16::from_le_bytes([bytes[2], bytes[3]]);
    if (length as usize) < 8 || length as usize > bytes.len() {
        return Err(Error::Radiotap(format!("bad length {length}")));
    }
    let first_present = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let mut offset = 8usize;
    let mut present = first_present;
    // skip extension present words
    while present & RT_EXT != 0 {
        if offset + 4 > length as usize {
            return Err(Error::Radiotap("present chain overruns header".into()));
        }
        present = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        offset += 4;
    }

    let mut header = RadiotapHeader {
        length,
        present: first_present,
        flags: None,
        channel: None,
    };
    for (bit, &(size, align)) in RT_FIELDS.iter().enumerate() {
        if first_present & (1 << bit) == 0 {
            continue;
        }
        let align = align as usize;
        offset = (offset + align - 1) / align * align;
        if offset + size as usize > length as usize {
            return Err(Error::Radiotap("field overruns header".into()));
        }
        match bit {
            1 => header.flags = Some(bytes[offset]),
            3 => {
                header.channel = Some((
                    u16::from_le_bytes(bytes[offset..offset + 2].try_into().unwrap()),
                    u16::from_le_bytes(bytes[offset + 2..offset + 4].try_into().unwrap()),
                ))
            }
            _ => {}
        }
        offset += size as usize;
    }
    Ok((header, &bytes[length as usize..]))
}

// ---------------------------------------------------------------------------
// Host-side demux

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub timestamp_us: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct HostCapture {
    /// Frames from the monitor SDIO channel.
    pub monitor: Vec<CaptureRecord>,
    /// Everything else (stock data path).
    pub data: Vec<CaptureRecord>,
    pub malformed: usize,
}

/// Split the host-bound queue into capture streams. Timestamps are a
/// simple arrival counter starting at 1, so runs are reproducible.
pub fn host_deliver(frames: &[SdioFrame]) -> HostCapture {
    let mut out = HostCapture::default();
    for (i, f) in frames.iter().enumerate() {
        let ts = i as u64 + 1;
        if f.payload.is_empty() || f.header.length as usize != f.payload.len() + 4 {
            out.malformed += 1;
            continue;
        }
        let rec = CaptureRecord { timestamp_us: ts, payload: f.payload.clone() };
        if f.header.channel == MONITOR_CHANNEL {
            out.monitor.push(rec);
        } else {
            out.data.push(rec);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// pcap

const PCAP_MAGIC: u32 = 0xA1B2_C3D4;

pub fn pcap_bytes(linktype: u32, records: &[CaptureRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + records.iter().map(|r| 16 + r.payload.len()).sum::<usize>());
    out.extend_from_slice(&PCAP_MAGIC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // thiszone
    out.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
    out.extend_from_slice(&0xFFFFu32.to_le_bytes()); // snaplen
    out.extend_from_slice(&linktype.to_le_bytes());
    for r in records {
        out.extend_from_slice(&((r.timestamp_us / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((r.timestamp_us % 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&r.payload);
    }
    out
}

pub fn parse_pcap(bytes: &[u8]) -> Result<(u32, Vec<CaptureRecord>)> {
    if bytes.len() < 24 {
        return Err(Error::Pcap("truncated global header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(0) != PCAP_MAGIC {
        return Err(Error::Pcap("bad magic".into()));
    }
    let linktype = u32_at(20);
    let mut records = Vec::new();
    let mut off = 24usize;
    while off < bytes.len() {
        if off + 16 > bytes.len() {
            return Err(Error::Pcap("truncated record header".into()));
        }
        let sec = u32_at(off) as u64;
        let usec = u32_at(off + 4) as u64;
        let incl = u32_at(off + 8) as usize;
        let orig = u32_at(off + 12) as usize;
        if incl != orig {
            return Err(Error::Pcap("sliced record".into()));
        }
        off += 16;
        if off + incl > bytes.len() {
            return Err(Error::Pcap("truncated record body".into()));
        }
        records.push(CaptureRecord {
            timestamp_us: sec * 1_000_000 + usec,
            payload: bytes[off..off + incl].to_vec(),
        });
        off += incl;
    }
    Ok((linktype, records))
}

pub fn write_pcap(path: &Path, linktype: u32, records: &[CaptureRecord]) -> Result<()> {
    std::fs::write(path, pcap_bytes(linktype, records))?;
    Ok(())
}

pub fn read_pcap(path: &Path) -> Result<(u32, Vec<CaptureRecord>)> {
    parse_pcap(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Test corpus

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub own_data: u32,
    pub foreign_data: u32,
    pub broadcast_data: u32,
    pub own_beacon: u32,
    pub foreign_beacon: u32,
    pub control: u32,
    pub bad_fcs: u32,
}

impl ClassCounts {
    pub fn total(&self) -> u32 {
        self.own_data
            + self.foreign_data
            + self.broadcast_data
            + self.own_beacon
            + self.foreign_beacon
            + self.control
            + self.bad_fcs
    }
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts {
            own_data: 20,
            foreign_data: 20,
            broadcast_data: 15,
            own_beacon: 10,
            foreign_beacon: 15,
            control: 10,
            bad_fcs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub counts: ClassCounts,
    pub sta_mac: MacAddr,
    pub joined_bssid: MacAddr,
    pub channel: u8,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0xC0FFEE,
            counts: ClassCounts::default(),
            sta_mac: MacAddr([0x02, 0, 0, 0, 0, 0x01]),
            joined_bssid: MacAddr([0x02, 0, 0, 0, 0, 0x02]),
            channel: 6,
        }
    }
}

impl CorpusSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus spec serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Deterministic frame corpus for a spec: per-class generation followed
/// by a seeded shuffle. Identical specs yield identical corpora.
pub fn gen_corpus(spec: &CorpusSpec) -> Vec<Dot11Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ch = spec.channel;
    let mut frames = Vec::with_capacity(spec.counts.total() as usize);

    let body = |rng: &mut ChaCha8Rng| -> Vec<u8> {
        let len = rng.gen_range(8..64);
        (0..len).map(|_| rng.gen()).collect()
    };
    let foreign = |rng: &mut ChaCha8Rng| -> MacAddr {
        loop {
            let mut b = [0u8; 6];
            b[0] = 0x06; // locally administered, unicast
            for x in &mut b[1..] {
                *x = rng.gen();
            }
            let m = MacAddr(b);
            if m != spec.sta_mac && m != spec.joined_bssid {
                return m;
            }
        }
    };

    for _ in 0..spec.counts.own_data {
        let b = body(&mut rng);
        frames.push(Dot11Frame::data(spec.sta_mac, spec.joined_bssid, spec.joined_bssid, b, true, ch));
    }
    for _ in 0..spec.counts.foreign_data {
        let dst = foreign(&mut rng);
        let src = foreign(&mut rng);
        let b = body(&mut rng);
        frames.push(Dot11Frame::data(dst, src, src, b, true, ch));
    }
    for _ in 0..spec.counts.broadcast_data {
        let src = foreign(&mut rng);
        let b = body(&mut rng);
        frames.push(Dot11Frame::data(MacAddr::BROADCAST, src, src, b, true, ch));
    }
    for _ in 0..spec.counts.own_beacon {
        let b = body(&mut rng);
        frames.push(Dot11Frame::beacon(spec.joined_bssid, b, ch));
    }
    for i in 0..spec.counts.foreign_beacon {
        let bssid = foreign(&mut rng);
        let b = body(&mut rng);
        if i % 3 == 2 {
            frames.push(Dot11Frame::probe_response(spec.sta_mac, bssid, b, ch));
        } else {
            frames.push(Dot11Frame::beacon(bssid, b, ch));
        }
    }
    for i in 0..spec.counts.control {
        let sub = match i % 3 {
            0 => FrameSubtype::Ack,
            1 => FrameSubtype::Rts,
            _ => FrameSubtype::Cts,
        };
        frames.push(Dot11Frame::control(sub, spec.sta_mac, ch));
    }
    for _ in 0..spec.counts.bad_fcs {
        let b = body(&mut rng);
        frames.push(Dot11Frame::data(spec.sta_mac, spec.joined_bssid, spec.joined_bssid, b, false, ch));
    }

    frames.shuffle(&mut rng);
    frames
}
