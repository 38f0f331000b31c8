//! Behavioral model of the chip's receive pipeline: the D11 core's frame
//! filter and DMA ring on one side, the host-bound SDIO queue on the
//! other, with the receive handler in between — native for the stock
//! firmware, interpreted for patched images.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::capture::{build_radiotap, RadiotapDefaults};
use crate::image::FirmwareImage;
use crate::interp::{self, TrapEnv, TrapTag};
use crate::patch::{MctlBits, PatchManifest};
use crate::symbols::SymbolMap;
use crate::{Error, Result};

/// SDIO channel carrying monitor-mode frames up to the host.
pub const MONITOR_CHANNEL: u8 = 0xF;

/// Interrupt delivery path from FIQ entry down to the receive handler,
/// appended to the dispatch log on every interrupt.
pub const DISPATCH_CHAIN: &[u32] = &[
    0x180fee, // fiq_ram_handler
    0x181032, // common_exception_handler
    0x181100, // callback_ref
    0x181e48, // callback_fn
    0x181a88, // fiq_dispatch
    0x180e5c, // handler_list_ref
    0x27550,  // wlc_dpc path
    0x2733c,
    0x61eb4,
    0x4f7a4,  // wlc_bmac_recv wrapper
    0x1aad98, // wlc_bmac_recv
];

// ---------------------------------------------------------------------------
// Frames

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xFF; 6]);

    pub fn is_multicast(&self) -> bool {
        self.0[0] & 1 != 0
    }

    pub fn is_broadcast(&self) -> bool {
        self.0 == [0xFF; 6]
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(Error::Config(format!("bad mac address {s:?}")));
        }
        let mut b = [0u8; 6];
        for (i, p) in parts.iter().enumerate() {
            b[i] = u8::from_str_radix(p, 16)
                .map_err(|_| Error::Config(format!("bad mac address {s:?}")))?;
        }
        Ok(MacAddr(b))
    }
}

impl TryFrom<String> for MacAddr {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MacAddr> for String {
    fn from(m: MacAddr) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameType {
    Management,
    Control,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameSubtype {
    Beacon,
    ProbeResponse,
    Ack,
    Rts,
    Cts,
    Data,
}

impl FrameSubtype {
    fn bits(self) -> u8 {
        match self {
            FrameSubtype::Beacon => 8,
            FrameSubtype::ProbeResponse => 5,
            FrameSubtype::Ack => 13,
            FrameSubtype::Rts => 11,
            FrameSubtype::Cts => 12,
            FrameSubtype::Data => 0,
        }
    }
}

/// One over-the-air frame as seen past the PHY: parsed header fields plus
/// receive metadata (FCS outcome and channel) that the D11 core would
/// learn from the PHY.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dot11Frame {
    pub frame_type: FrameType,
    pub subtype: FrameSubtype,
    pub addr1: MacAddr,
    pub addr2: MacAddr,
    pub addr3: MacAddr,
    pub body: Vec<u8>,
    pub fcs_ok: bool,
    pub channel: u8,
}

impl Dot11Frame {
    pub fn data(
        addr1: MacAddr,
        addr2: MacAddr,
        addr3: MacAddr,
        body: Vec<u8>,
        fcs_ok: bool,
        channel: u8,
    ) -> Self {
        Dot11Frame {
            frame_type: FrameType::Data,
            subtype: FrameSubtype::Data,
            addr1,
            addr2,
            addr3,
            body,
            fcs_ok,
            channel,
        }
    }

    pub fn beacon(bssid: MacAddr, body: Vec<u8>, channel: u8) -> Self {
        Dot11Frame {
            frame_type: FrameType::Management,
            subtype: FrameSubtype::Beacon,
            addr1: MacAddr::BROADCAST,
            addr2: bssid,
            addr3: bssid,
            body,
            fcs_ok: true,
            channel,
        }
    }

    pub fn probe_response(dest: MacAddr, bssid: MacAddr, body: Vec<u8>, channel: u8) -> Self {
        Dot11Frame {
            frame_type: FrameType::Management,
            subtype: FrameSubtype::ProbeResponse,
            addr1: dest,
            addr2: bssid,
            addr3: bssid,
            body,
            fcs_ok: true,
            channel,
        }
    }

    pub fn control(subtype: FrameSubtype, addr1: MacAddr, channel: u8) -> Self {
        Dot11Frame {
            frame_type: FrameType::Control,
            subtype,
            addr1,
            addr2: MacAddr([0; 6]),
            addr3: MacAddr([0; 6]),
            body: Vec::new(),
            fcs_ok: true,
            channel,
        }
    }

    pub fn bssid(&self) -> MacAddr {
        self.addr3
    }

    fn fc0(&self) -> u8 {
        let type_bits = match self.frame_type {
            FrameType::Management => 0,
            FrameType::Control => 1,
            FrameType::Data => 2,
        };
        type_bits << 2 | self.subtype.bits() << 4
    }

    /// Wire bytes, FCS omitted: 24-byte MAC header + body for management
    /// and data frames, 10-byte short form for control frames.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.fc0(), 0, 0, 0];
        out.extend_from_slice(&self.addr1.0);
        if self.frame_type == FrameType::Control {
            return out;
        }
        out.extend_from_slice(&self.addr2.0);
        out.extend_from_slice(&self.addr3.0);
        out.extend_from_slice(&[0, 0]); // seq
        out.extend_from_slice(&self.body);
        out
    }
}

// ---------------------------------------------------------------------------
// Chip-side structures

/// A receive buffer with reserved headroom for headers prepended on the
/// way to the host.
#[derive(Debug, Clone)]
pub struct PacketBuffer {
    pub headroom: usize,
    pub data: Vec<u8>,
}

impl PacketBuffer {
    pub fn with_headroom(headroom: usize, data: Vec<u8>) -> Self {
        PacketBuffer { headroom, data }
    }

    pub fn prepend(&mut self, bytes: &[u8]) -> Result<()> {
        if self.headroom < bytes.len() {
            return Err(Error::Headroom { need: bytes.len(), have: self.headroom });
        }
        self.headroom -= bytes.len();
        self.data.splice(0..0, bytes.iter().copied());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RxPacket {
    pub frame: Dot11Frame,
    pub buf: PacketBuffer,
}

#[derive(Debug, Clone)]
pub struct DmaRing {
    pub capacity: usize,
    /// Free receive descriptors; refilled by dma_rxfill.
    pub posted: usize,
    pub queue: VecDeque<Dot11Frame>,
}

impl DmaRing {
    fn new(capacity: usize) -> Self {
        DmaRing { capacity, posted: capacity, queue: VecDeque::new() }
    }
}

#[derive(Debug, Clone)]
pub struct D11Core {
    pub maccontrol: u32,
    pub ring: DmaRing,
    pub sta_mac: MacAddr,
    pub joined_bssid: MacAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SdioHeader {
    pub length: u16,
    pub channel: u8,
    pub flags: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdioFrame {
    pub header: SdioHeader,
    /// Payload bytes, the 4-byte SDIO header excluded.
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub offered: u64,
    pub accepted: u64,
    pub dropped_filter: u64,
    pub dropped_overflow: u64,
    pub dma_rx_calls: u64,
    pub rxfill_calls: u64,
    pub sendpkt_calls: u64,
    pub mgmt_consumed: u64,
    pub stock_discarded: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stock,
    Patched,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub rxbnd: u32,
    pub ring_capacity: usize,
    pub mctl: MctlBits,
    /// Break the monitor loop on an empty ring instead of spinning the
    /// full bound (the firmware's loop does not).
    pub corrected_loop: bool,
    /// Skip the monitor handler's maccontrol re-assert; only useful to
    /// demonstrate why the re-assert matters.
    pub omit_mctrl_reassert: bool,
    pub stock_data_channel: u8,
    pub sta_mac: MacAddr,
    pub joined_bssid: MacAddr,
    pub fuel: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rxbnd: 8,
            ring_capacity: 64,
            mctl: MctlBits::default(),
            corrected_loop: false,
            omit_mctrl_reassert: false,
            stock_data_channel: 2,
            sta_mac: MacAddr([0x02, 0, 0, 0, 0, 0x01]),
            joined_bssid: MacAddr([0x02, 0, 0, 0, 0, 0x02]),
            fuel: interp::DEFAULT_FUEL,
        }
    }
}

/// The D11 frame filter. `maccontrol` bits relax it: keep-bad-FCS admits
/// corrupt frames, keep-control admits control frames, bcns-promisc
/// admits foreign beacons/probe responses, promisc admits unicast frames
/// addressed elsewhere.
pub fn d11_accept(
    frame: &Dot11Frame,
    maccontrol: u32,
    mctl: &MctlBits,
    sta_mac: MacAddr,
    joined_bssid: MacAddr,
) -> bool {
    if !frame.fcs_ok && maccontrol & mctl.keepbadfcs == 0 {
        return false;
    }
    if frame.frame_type == FrameType::Control && maccontrol & mctl.keepcontrol == 0 {
        return false;
    }
    let beaconish = frame.frame_type == FrameType::Management
        && matches!(frame.subtype, FrameSubtype::Beacon | FrameSubtype::ProbeResponse);
    if beaconish && frame.bssid() != joined_bssid && maccontrol & mctl.bcns_promisc == 0 {
        return false;
    }
    if !frame.addr1.is_multicast()
        && frame.addr1 != sta_mac
        && maccontrol & mctl.promisc == 0
    {
        return false;
    }
    true
}

// ---------------------------------------------------------------------------
// Simulator state

pub struct SimState {
    pub d11: D11Core,
    pub console: String,
    pub host_queue: Vec<SdioFrame>,
    pub counters: Counters,
    pub mode: Mode,
    /// The handler's `*cnt +=` cell.
    pub count_cell: u32,
    pub dispatch_log: Vec<u32>,
    pub maccontrol_history: Vec<u32>,
    pub config: SimConfig,
    pub interrupt_pending: bool,
    mctl: MctlBits,
    traps: BTreeMap<u32, TrapTag>,
    recv_entry: u32,
    /// Frames handed out by the dma_rx trap, delivered after the stub
    /// returns.
    pending_rx: Vec<RxPacket>,
}

const CONSOLE_CAP: usize = 16 * 1024;
const RX_HEADROOM: usize = 32;

impl SimState {
    /// Bring the modeled firmware up. A manifest switches the receive
    /// path to the interpreter; it must verify cleanly against the image
    /// first. Boot replays the coreinit maccontrol write from the image's
    /// mask/value words.
    pub fn boot(
        image: &FirmwareImage,
        manifest: Option<&PatchManifest>,
        syms: &SymbolMap,
        config: SimConfig,
    ) -> Result<SimState> {
        config.mctl.validate()?;
        let mctl = match manifest {
            Some(m) => {
                let report = crate::patch::verify(image, m, syms);
                if !report.all_ok() {
                    return Err(Error::VerifyFailed(report.render()));
                }
                m.mctl.validate()?;
                m.mctl.clone()
            }
            None => config.mctl.clone(),
        };

        let mut traps = BTreeMap::new();
        let native = [
            ("printf", TrapTag::Printf),
            ("dma_rx", TrapTag::DmaRx),
            ("dma_rxfill", TrapTag::DmaRxfill),
            ("dngl_sendpkt", TrapTag::DnglSendpkt),
            ("wlc_bmac_mctrl", TrapTag::WlcBmacMctrl),
        ];
        for (name, tag) in native {
            traps.insert(syms.addr_of(name)?, tag);
        }
        if let Some(m) = manifest {
            for reg in &m.traps {
                let tag = TrapTag::from_name(&reg.tag)
                    .ok_or_else(|| Error::Manifest(format!("unknown trap tag {:?}", reg.tag)))?;
                traps.insert(reg.addr, tag);
            }
        }

        let mut state = SimState {
            d11: D11Core {
                maccontrol: 0,
                ring: DmaRing::new(config.ring_capacity),
                sta_mac: config.sta_mac,
                joined_bssid: config.joined_bssid,
            },
            console: String::new(),
            host_queue: Vec::new(),
            counters: Counters::default(),
            mode: if manifest.is_some() { Mode::Patched } else { Mode::Stock },
            count_cell: 0,
            dispatch_log: Vec::new(),
            maccontrol_history: Vec::new(),
            config,
            interrupt_pending: false,
            mctl,
            traps,
            recv_entry: syms.addr_of("wlc_bmac_recv")?,
            pending_rx: Vec::new(),
        };

        // coreinit: program maccontrol from the image's mask/value words
        let mask = image.read_u32(syms.addr_of("coreinit_mctrl_mask_word")?)?;
        let value = image.read_u32(syms.addr_of("coreinit_mctrl_value_word")?)?;
        state.wlc_bmac_mctrl(mask, value);
        Ok(state)
    }

    pub fn mctl(&self) -> &MctlBits {
        &self.mctl
    }

    /// A frame arrives over the air: run it through the D11 filter and,
    /// if accepted, park it in the ring and raise the receive interrupt.
    pub fn inject_air_frame(&mut self, frame: Dot11Frame) {
        self.counters.offered += 1;
        let accept = d11_accept(
            &frame,
            self.d11.maccontrol,
            &self.mctl,
            self.d11.sta_mac,
            self.d11.joined_bssid,
        );
        if !accept {
            self.counters.dropped_filter += 1;
            return;
        }
        if self.d11.ring.posted == 0 {
            self.counters.dropped_overflow += 1;
            return;
        }
        self.d11.ring.posted -= 1;
        self.d11.ring.queue.push_back(frame);
        self.counters.accepted += 1;
        self.interrupt_pending = true;
    }

    /// Service one receive interrupt, walking the modeled FIQ-to-handler
    /// chain and running the receive handler once. Returns the handler's
    /// return value. The interrupt stays pending while the ring holds
    /// more frames than one bound's worth of servicing consumed.
    pub fn dispatch_interrupt(&mut self, image: &FirmwareImage) -> Result<u32> {
        if !self.interrupt_pending {
            return Err(Error::NoInterrupt);
        }
        self.interrupt_pending = false;
        self.dispatch_log.extend_from_slice(DISPATCH_CHAIN);
        let result = match self.mode {
            Mode::Stock => self.stock_recv()?,
            Mode::Patched => {
                let args = [0, 0, self.config.rxbnd, 0];
                let fuel = self.config.fuel;
                let entry = self.recv_entry;
                let r = interp::call_stub(image, entry, args, self, fuel)?;
                let drained = std::mem::take(&mut self.pending_rx);
                for pkt in drained {
                    self.deliver_stock_frame(pkt)?;
                }
                r
            }
        };
        if !self.d11.ring.queue.is_empty() {
            self.interrupt_pending = true;
        }
        Ok(result)
    }

    pub fn consoledump(&self) -> &str {
        &self.console
    }

    // -- native firmware functions ------------------------------------------

    pub fn wlc_bmac_mctrl(&mut self, mask: u32, value: u32) {
        self.d11.maccontrol = (self.d11.maccontrol & !mask) | (value & mask);
        self.maccontrol_history.push(self.d11.maccontrol);
    }

    /// One descriptor off the ring; the call is counted whether or not a
    /// frame was waiting.
    fn dma_rx(&mut self) -> Option<RxPacket> {
        self.counters.dma_rx_calls += 1;
        self.d11.ring.queue.pop_front().map(|frame| {
            let data = frame.to_bytes();
            RxPacket { buf: PacketBuffer::with_headroom(RX_HEADROOM, data), frame }
        })
    }

    fn dma_rxfill(&mut self) {
        self.counters.rxfill_calls += 1;
        self.d11.ring.posted = self.d11.ring.capacity - self.d11.ring.queue.len();
    }

    fn dngl_sendpkt(&mut self, mut buf: PacketBuffer, channel: u8) -> Result<()> {
        self.counters.sendpkt_calls += 1;
        let length = (buf.data.len() + 4) as u16;
        buf.prepend(&[length as u8, (length >> 8) as u8, channel, 0])?;
        self.host_queue.push(SdioFrame {
            header: SdioHeader { length, channel, flags: 0 },
            payload: buf.data[4..].to_vec(),
        });
        Ok(())
    }

    fn console_print(&mut self, line: &str) {
        self.console.push_str(line);
        self.console.push('\n');
        if self.console.len() > CONSOLE_CAP {
            let cut = self.console.len() - CONSOLE_CAP;
            self.console.drain(..cut);
        }
    }

    /// The stock bounded receive loop: drain up to rxbnd frames, refill,
    /// report whether the bound was reached.
    fn stock_recv(&mut self) -> Result<u32> {
        let bound = self.config.rxbnd;
        let mut n = 0u32;
        while n < bound {
            match self.dma_rx() {
                Some(pkt) => {
                    n += 1;
                    self.deliver_stock_frame(pkt)?;
                }
                None => break,
            }
        }
        self.dma_rxfill();
        Ok((n == bound) as u32)
    }

    /// The monitor-mode replacement handler. The do-while spins the full
    /// bound even once the ring is empty (each spin still calls dma_rx)
    /// and counts iterations, not frames; `corrected_loop` opts into the
    /// obvious fix. After the loop: one refill, then re-assert the
    /// promiscuous maccontrol bits in case the host side cleared them.
    fn monitor_recv(&mut self, bound: u32) -> Result<u32> {
        let bound = bound.max(1);
        let mut iterations = 0u32;
        let mut frames = 0u32;
        loop {
            let pkt = self.dma_rx();
            let got = pkt.is_some();
            if let Some(p) = pkt {
                frames += 1;
                self.monitor_deliver(p)?;
            }
            iterations += 1;
            if iterations >= bound {
                break;
            }
            if self.config.corrected_loop && !got {
                break;
            }
        }
        let inc = if self.config.corrected_loop { frames } else { iterations };
        self.count_cell = self.count_cell.wrapping_add(inc);
        self.dma_rxfill();
        if !self.config.omit_mctrl_reassert {
            let bits = self.mctl.combined();
            self.wlc_bmac_mctrl(bits, bits);
        }
        Ok(1)
    }

    /// Monitor delivery: radiotap header in front of the raw frame, up on
    /// the monitor SDIO channel.
    fn monitor_deliver(&mut self, pkt: RxPacket) -> Result<()> {
        let rt = build_radiotap(pkt.frame.channel, pkt.frame.fcs_ok, &RadiotapDefaults::default());
        let mut buf = pkt.buf;
        buf.prepend(&rt)?;
        self.dngl_sendpkt(buf, MONITOR_CHANNEL)
    }

    /// Stock per-frame handling: management and control frames are
    /// consumed inside the firmware; valid directed or group data frames
    /// go up as Ethernet.
    fn deliver_stock_frame(&mut self, pkt: RxPacket) -> Result<()> {
        let f = &pkt.frame;
        match f.frame_type {
            FrameType::Management | FrameType::Control => {
                self.counters.mgmt_consumed += 1;
            }
            FrameType::Data => {
                let ours = f.addr1 == self.d11.sta_mac || f.addr1.is_multicast();
                if f.fcs_ok && ours {
                    let mut eth = Vec::with_capacity(14 + f.body.len());
                    eth.extend_from_slice(&f.addr1.0);
                    eth.extend_from_slice(&f.addr3.0);
                    eth.extend_from_slice(&[0x08, 0x00]);
                    eth.extend_from_slice(&f.body);
                    let buf = PacketBuffer::with_headroom(RX_HEADROOM, eth);
                    let ch = self.config.stock_data_channel;
                    self.dngl_sendpkt(buf, ch)?;
                } else {
                    self.counters.stock_discarded += 1;
                }
            }
        }
        Ok(())
    }
}

impl TrapEnv for SimState {
    fn trap_at(&self, addr: u32) -> Option<TrapTag> {
        self.traps.get(&addr).copied()
    }

    fn handle_trap(
        &mut self,
        tag: TrapTag,
        args: [u32; 4],
        image: &FirmwareImage,
    ) -> Result<u32> {
        match tag {
            TrapTag::Printf => {
                let mut addr = args[0];
                let mut text = String::new();
                loop {
                    let b = image.read_bytes(addr, 1)?[0];
                    if b == 0 {
                        break;
                    }
                    text.push(b as char);
                    addr += 1;
                }
                self.console_print(&text);
                Ok(0)
            }
            TrapTag::DmaRx => match self.dma_rx() {
                Some(pkt) => {
                    self.pending_rx.push(pkt);
                    Ok(self.pending_rx.len() as u32)
                }
                None => Ok(0),
            },
            TrapTag::DmaRxfill => {
                self.dma_rxfill();
                Ok(0)
            }
            TrapTag::DnglSendpkt => {
                // pointer arguments carry no host-visible payload here
                self.counters.sendpkt_calls += 1;
                Ok(0)
            }
            TrapTag::WlcBmacMctrl => {
                self.wlc_bmac_mctrl(args[1], args[2]);
                Ok(0)
            }
            TrapTag::MonitorRecv => self.monitor_recv(args[2]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::patch::{self, PatchConfig};

    fn syms() -> SymbolMap {
        SymbolMap::builtin()
    }

    fn baseline_image() -> FirmwareImage {
        FirmwareImage::from_ram_bytes(fixture::baseline_ram(&syms()).unwrap())
    }

    fn patched_monitor() -> (FirmwareImage, PatchManifest) {
        let s = syms();
        let mut img = baseline_image();
        let actions = patch::make_monitor_patchset(&s, &MctlBits::default()).unwrap();
        let planned = patch::plan(&actions, &img, &s, &PatchConfig::default()).unwrap();
        let manifest = patch::apply(&planned, &mut img).unwrap();
        (img, manifest)
    }

    fn patched_hello() -> (FirmwareImage, PatchManifest) {
        let s = syms();
        let mut img = baseline_image();
        let actions = patch::make_helloworld_patchset(&s).unwrap();
        let planned = patch::plan(&actions, &img, &s, &PatchConfig::default()).unwrap();
        let manifest = patch::apply(&planned, &mut img).unwrap();
        (img, manifest)
    }

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn own_data(cfg: &SimConfig) -> Dot11Frame {
        Dot11Frame::data(
            cfg.sta_mac,
            cfg.joined_bssid,
            cfg.joined_bssid,
            vec![1, 2, 3, 4],
            true,
            6,
        )
    }

    #[test]
    fn mac_addr_round_trip() {
        let m: MacAddr = "02:00:00:aa:bb:01".parse().unwrap();
        assert_eq!(m.to_string(), "02:00:00:aa:bb:01");
        assert!(!m.is_multicast());
        assert!(MacAddr::BROADCAST.is_multicast());
        assert!(MacAddr([0x01, 0, 0x5E, 0, 0, 1]).is_multicast());
        assert!("02:00:00".parse::<MacAddr>().is_err());
    }

    #[test]
    fn frame_control_bytes_match_the_standard() {
        let c = cfg();
        assert_eq!(own_data(&c).to_bytes()[0], 0x08);
        assert_eq!(Dot11Frame::beacon(c.joined_bssid, vec![], 6).to_bytes()[0], 0x80);
        let ack = Dot11Frame::control(FrameSubtype::Ack, c.sta_mac, 6);
        let b = ack.to_bytes();
        assert_eq!(b[0], 0xD4);
        assert_eq!(b.len(), 10);
        assert_eq!(own_data(&c).to_bytes().len(), 24 + 4);
    }

    #[test]
    fn filter_stock_keeps_only_our_traffic() {
        let c = cfg();
        let mctl = MctlBits::default();
        let foreign = MacAddr([0x02, 9, 9, 9, 9, 9]);
        let ok = |f: &Dot11Frame| d11_accept(f, 0, &mctl, c.sta_mac, c.joined_bssid);
        assert!(ok(&own_data(&c)));
        let mut bad = own_data(&c);
        bad.fcs_ok = false;
        assert!(!ok(&bad));
        let mut other = own_data(&c);
        other.addr1 = foreign;
        assert!(!ok(&other));
        let bcast = Dot11Frame::data(
            MacAddr::BROADCAST,
            foreign,
            foreign,
            vec![0],
            true,
            6,
        );
        assert!(ok(&bcast));
        assert!(!ok(&Dot11Frame::control(FrameSubtype::Rts, c.sta_mac, 6)));
        assert!(ok(&Dot11Frame::beacon(c.joined_bssid, vec![], 6)));
        assert!(!ok(&Dot11Frame::beacon(foreign, vec![], 6)));
    }

    #[test]
    fn filter_promisc_bits_open_the_gates() {
        let c = cfg();
        let mctl = MctlBits::default();
        let all = mctl.combined();
        let foreign = MacAddr([0x02, 9, 9, 9, 9, 9]);
        let ok = |f: &Dot11Frame| d11_accept(f, all, &mctl, c.sta_mac, c.joined_bssid);
        let mut bad = own_data(&c);
        bad.fcs_ok = false;
        assert!(ok(&bad));
        assert!(ok(&Dot11Frame::control(FrameSubtype::Cts, foreign, 6)));
        assert!(ok(&Dot11Frame::beacon(foreign, vec![], 6)));
        let mut other = own_data(&c);
        other.addr1 = foreign;
        assert!(ok(&other));
    }

    #[test]
    fn stock_boot_programs_no_maccontrol_bits() {
        let img = baseline_image();
        let state = SimState::boot(&img, None, &syms(), cfg()).unwrap();
        assert_eq!(state.mode, Mode::Stock);
        assert_eq!(state.d11.maccontrol, 0);
        assert_eq!(state.maccontrol_history, vec![0]);
    }

    #[test]
    fn monitor_boot_programs_promisc_bits() {
        let (img, manifest) = patched_monitor();
        let state = SimState::boot(&img, Some(&manifest), &syms(), cfg()).unwrap();
        assert_eq!(state.mode, Mode::Patched);
        let bits = MctlBits::default().combined();
        assert_eq!(state.d11.maccontrol & bits, bits);
    }

    #[test]
    fn boot_rejects_corrupted_patched_image() {
        let (mut img, manifest) = patched_monitor();
        let mut b = img.read_bytes(0x180000, 1).unwrap().to_vec();
        b[0] ^= 0xFF;
        img.write_bytes(0x180000, &b).unwrap();
        assert!(matches!(
            SimState::boot(&img, Some(&manifest), &syms(), cfg()),
            Err(Error::VerifyFailed(_))
        ));
    }

    #[test]
    fn dispatch_without_interrupt_errors() {
        let img = baseline_image();
        let mut state = SimState::boot(&img, None, &syms(), cfg()).unwrap();
        assert!(matches!(
            state.dispatch_interrupt(&img),
            Err(Error::NoInterrupt)
        ));
    }

    #[test]
    fn stock_pipeline_delivers_ethernet() {
        let img = baseline_image();
        let c = cfg();
        let mut state = SimState::boot(&img, None, &syms(), c.clone()).unwrap();
        state.inject_air_frame(own_data(&c));
        state.inject_air_frame(Dot11Frame::beacon(c.joined_bssid, vec![], 6));
        state.inject_air_frame(Dot11Frame::control(FrameSubtype::Ack, c.sta_mac, 6));
        assert!(state.interrupt_pending);
        let r = state.dispatch_interrupt(&img).unwrap();
        assert_eq!(r, 0, "bound not reached");
        assert_eq!(state.counters.dropped_filter, 1, "control frame filtered");
        assert_eq!(state.counters.mgmt_consumed, 1, "beacon eaten internally");
        assert_eq!(state.host_queue.len(), 1);
        let up = &state.host_queue[0];
        assert_eq!(up.header.channel, c.stock_data_channel);
        assert_eq!(&up.payload[..6], &c.sta_mac.0);
        assert_eq!(&up.payload[6..12], &c.joined_bssid.0);
        assert_eq!(&up.payload[12..14], &[0x08, 0x00]);
        assert_eq!(&up.payload[14..], &[1, 2, 3, 4]);
        assert_eq!(state.dispatch_log, DISPATCH_CHAIN);
    }

    #[test]
    fn monitor_handler_counters_match_the_hand_trace() {
        let (img, manifest) = patched_monitor();
        let c = cfg();
        let mut state = SimState::boot(&img, Some(&manifest), &syms(), c.clone()).unwrap();
        for _ in 0..3 {
            state.inject_air_frame(own_data(&c));
        }
        let r = state.dispatch_interrupt(&img).unwrap();
        assert_eq!(r, 1, "handler always reports success");
        assert_eq!(state.counters.dma_rx_calls, 8, "loop spins the full bound");
        assert_eq!(state.counters.sendpkt_calls, 3);
        assert!(state
            .host_queue
            .iter()
            .all(|f| f.header.channel == MONITOR_CHANNEL));
        assert_eq!(state.counters.rxfill_calls, 1);
        assert_eq!(state.count_cell, 8, "cell counts iterations, not frames");
    }

    #[test]
    fn corrected_loop_stops_at_empty_ring() {
        let (img, manifest) = patched_monitor();
        let mut c = cfg();
        c.corrected_loop = true;
        let mut state = SimState::boot(&img, Some(&manifest), &syms(), c.clone()).unwrap();
        for _ in 0..3 {
            state.inject_air_frame(own_data(&c));
        }
        state.dispatch_interrupt(&img).unwrap();
        assert_eq!(state.counters.dma_rx_calls, 4, "3 frames + 1 empty probe");
        assert_eq!(state.count_cell, 3);
    }

    #[test]
    fn monitor_captures_everything() {
        let (img, manifest) = patched_monitor();
        let c = cfg();
        let mut state = SimState::boot(&img, Some(&manifest), &syms(), c.clone()).unwrap();
        let foreign = MacAddr([0x02, 9, 9, 9, 9, 9]);
        let mut bad = own_data(&c);
        bad.fcs_ok = false;
        let frames = vec![
            own_data(&c),
            bad,
            Dot11Frame::control(FrameSubtype::Rts, foreign, 6),
            Dot11Frame::beacon(foreign, vec![0xDD], 6),
        ];
        for f in frames {
            state.inject_air_frame(f);
        }
        assert_eq!(state.counters.dropped_filter, 0);
        state.dispatch_interrupt(&img).unwrap();
        assert_eq!(state.host_queue.len(), 4);
    }

    #[test]
    fn monitor_reasserts_maccontrol() {
        let (img, manifest) = patched_monitor();
        let c = cfg();
        let bits = MctlBits::default().combined();
        let mut state = SimState::boot(&img, Some(&manifest), &syms(), c.clone()).unwrap();
        state.d11.maccontrol &= !bits; // host side turns the bits off
        state.inject_air_frame(Dot11Frame::data(
            c.sta_mac,
            c.joined_bssid,
            c.joined_bssid,
            vec![9],
            true,
            6,
        ));
        state.dispatch_interrupt(&img).unwrap();
        assert_eq!(state.d11.maccontrol & bits, bits);
    }

    #[test]
    fn helloworld_prints_and_still_delivers() {
        let (img, manifest) = patched_hello();
        let c = cfg();
        let mut state = SimState::boot(&img, Some(&manifest), &syms(), c.clone()).unwrap();
        state.inject_air_frame(own_data(&c));
        state.dispatch_interrupt(&img).unwrap();
        assert_eq!(state.consoledump(), "hello world\n");
        assert_eq!(state.host_queue.len(), 1);
        assert_eq!(state.host_queue[0].header.channel, c.stock_data_channel);
    }

    #[test]
    fn full_ring_overflows() {
        let img = baseline_image();
        let mut c = cfg();
        c.ring_capacity = 2;
        let mut state = SimState::boot(&img, None, &syms(), c.clone()).unwrap();
        for _ in 0..3 {
            state.inject_air_frame(own_data(&c));
        }
        assert_eq!(state.counters.accepted, 2);
        assert_eq!(state.counters.dropped_overflow, 1);
    }

    #[test]
    fn interrupt_stays_pending_past_the_bound() {
        let img = baseline_image();
        let mut c = cfg();
        c.rxbnd = 2;
        let mut state = SimState::boot(&img, None, &syms(), c.clone()).unwrap();
        for _ in 0..5 {
            state.inject_air_frame(own_data(&c));
        }
        let r = state.dispatch_interrupt(&img).unwrap();
        assert_eq!(r, 1, "bound reached");
        assert!(state.interrupt_pending);
        state.dispatch_interrupt(&img).unwrap();
        state.dispatch_interrupt(&img).unwrap();
        assert!(!state.interrupt_pending);
        assert_eq!(state.host_queue.len(), 5);
    }
}
