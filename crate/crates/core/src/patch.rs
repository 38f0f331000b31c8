//! Patch planning, application, rollback and verification, plus the two
//! shipped patch sets: the dma_rx hello-world hook and the monitor-mode
//! patch (replace the receive function, extend the coreinit maccontrol
//! mask/value words).

use serde::{Deserialize, Serialize};

use crate::hexfmt::{hex_bytes, hex_u32};
use crate::image::FirmwareImage;
use crate::symbols::{Symbol, SymbolKind, SymbolMap};
use crate::thumb::{
    self, assemble_stub, EncodedStub, HookArg, HookOp, HookProgram,
};
use crate::{Error, Result};

pub const DEFAULT_PLACEMENT_BASE: u32 = 0x18_0000;

/// The four maccontrol bits promiscuous reception needs. The firmware
/// names them but not their values; defaults follow the brcmsmac d11.h
/// convention and are configuration, not contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MctlBits {
    #[serde(with = "hex_u32")]
    pub promisc: u32,
    #[serde(with = "hex_u32")]
    pub keepcontrol: u32,
    #[serde(with = "hex_u32")]
    pub bcns_promisc: u32,
    #[serde(with = "hex_u32")]
    pub keepbadfcs: u32,
}

impl Default for MctlBits {
    fn default() -> Self {
        MctlBits {
            promisc: 1 << 24,
            keepbadfcs: 1 << 23,
            keepcontrol: 1 << 22,
            bcns_promisc: 1 << 20,
        }
    }
}

impl MctlBits {
    pub fn combined(&self) -> u32 {
        self.promisc | self.keepcontrol | self.bcns_promisc | self.keepbadfcs
    }

    pub fn validate(&self) -> Result<()> {
        let masks = [self.promisc, self.keepcontrol, self.bcns_promisc, self.keepbadfcs];
        for (i, m) in masks.iter().enumerate() {
            if m.count_ones() != 1 {
                return Err(Error::Config(format!("mctl mask {i} is not a single bit")));
            }
            if masks[..i].contains(m) {
                return Err(Error::Config("mctl masks must be distinct".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchKind {
    #[serde(rename = "bl")]
    Bl,
    #[serde(rename = "b.w")]
    BW,
}

#[derive(Debug, Clone)]
pub enum StubSource {
    Program(HookProgram),
    /// A minimal prologue that BLs a registered native trap and returns
    /// its result; `tag` names the handler.
    NativeTrap(String),
}

#[derive(Debug, Clone, Copy)]
pub enum PatchTarget {
    Absolute(u32),
    /// Index of an `InstallStub` action in the same action list.
    Stub(usize),
}

#[derive(Debug, Clone)]
pub enum WordTarget {
    Symbol(String),
    Absolute(u32),
}

#[derive(Debug, Clone)]
pub enum PatchAction {
    InstallStub { source: StubSource },
    RedirectBranch { site: u32, target: PatchTarget, kind: BranchKind },
    ReplaceFunction { symbol: String, target: PatchTarget },
    OrWord { target: WordTarget, bits: u32 },
}

#[derive(Debug, Clone)]
pub struct PatchConfig {
    pub placement_base: u32,
    pub mctl: MctlBits,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig { placement_base: DEFAULT_PLACEMENT_BASE, mctl: MctlBits::default() }
    }
}

/// What `verify` re-checks for one edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditCheck {
    StubBytes,
    Branch {
        branch: BranchKind,
        #[serde(with = "hex_u32")]
        target: u32,
    },
    OrWord {
        #[serde(with = "hex_u32")]
        bits: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub action_id: usize,
    #[serde(with = "hex_u32")]
    pub addr: u32,
    #[serde(with = "hex_bytes")]
    pub old: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub new: Vec<u8>,
    pub check: EditCheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapRegistration {
    #[serde(with = "hex_u32")]
    pub addr: u32,
    pub tag: String,
}

/// Record of every byte written plus trap registrations; consumed by the
/// verifier and the simulator, and sufficient for exact rollback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchManifest {
    #[serde(with = "hex_u32")]
    pub placement_base: u32,
    pub mctl: MctlBits,
    pub entries: Vec<ManifestEntry>,
    pub traps: Vec<TrapRegistration>,
}

impl PatchManifest {
    pub fn registers_trap(&self, tag: &str) -> bool {
        self.traps.iter().any(|t| t.tag == tag)
    }

    /// Restore the original image, byte-exact.
    pub fn rollback(&self, image: &mut FirmwareImage) -> Result<()> {
        for e in &self.entries {
            let cur = image.read_bytes(e.addr, e.new.len() as u32)?;
            if cur != e.new {
                return Err(Error::StaleImage { addr: e.addr });
            }
        }
        for e in &self.entries {
            image.write_bytes(e.addr, &e.old)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct PlannedWrite {
    pub action_id: usize,
    pub addr: u32,
    pub old: Vec<u8>,
    pub new: Vec<u8>,
    pub check: EditCheck,
}

#[derive(Debug, Clone)]
pub struct PlannedPatch {
    pub placement_base: u32,
    pub mctl: MctlBits,
    pub writes: Vec<PlannedWrite>,
    pub traps: Vec<TrapRegistration>,
    pub stubs: Vec<EncodedStub>,
}

fn align4(v: u32) -> u32 {
    (v + 3) & !3
}

struct Allocator {
    cursor: u32,
    end: u64,
}

impl Allocator {
    fn alloc(&mut self, size: u32) -> Result<u32> {
        let base = align4(self.cursor);
        if base as u64 + size as u64 > self.end {
            return Err(Error::PlacementExhausted(base));
        }
        self.cursor = base + size;
        Ok(base)
    }
}

/// Bytes parked at a native-trap anchor address: BX LR; NOP. The anchor
/// only exists so generated code has a concrete BL target to trap on.
const TRAP_ANCHOR_BYTES: [u8; 4] = [0x70, 0x47, 0x00, 0xBF];

/// Resolve placement, assemble stubs, capture old bytes and validate every
/// action. Deterministic for identical inputs.
pub fn plan(
    actions: &[PatchAction],
    image: &FirmwareImage,
    syms: &SymbolMap,
    config: &PatchConfig,
) -> Result<PlannedPatch> {
    let region = image
        .region_at(config.placement_base)
        .ok_or_else(|| Error::Plan(format!(
            "placement base 0x{:x} is unmapped",
            config.placement_base
        )))?;
    if !region.writable {
        return Err(Error::Plan("placement region is not writable".into()));
    }
    let mut alloc = Allocator { cursor: config.placement_base, end: region.end() };

    let mut writes: Vec<PlannedWrite> = Vec::new();
    let mut traps: Vec<TrapRegistration> = Vec::new();
    let mut stubs: Vec<EncodedStub> = Vec::new();
    let mut stub_base: Vec<Option<u32>> = vec![None; actions.len()];
    let mut local_syms = syms.clone();

    // first pass: place stubs (and trap anchors) by bump allocation
    for (id, action) in actions.iter().enumerate() {
        let source = match action {
            PatchAction::InstallStub { source } => source,
            _ => continue,
        };
        let prog = match source {
            StubSource::Program(p) => p.clone(),
            StubSource::NativeTrap(tag) => {
                let anchor = alloc.alloc(TRAP_ANCHOR_BYTES.len() as u32)?;
                let old = image.read_bytes(anchor, 4)?.to_vec();
                writes.push(PlannedWrite {
                    action_id: id,
                    addr: anchor,
                    old,
                    new: TRAP_ANCHOR_BYTES.to_vec(),
                    check: EditCheck::StubBytes,
                });
                traps.push(TrapRegistration { addr: anchor, tag: tag.clone() });
                let name = format!("__trap_{tag}");
                local_syms.insert(Symbol {
                    name: name.clone(),
                    address: anchor,
                    kind: SymbolKind::Function,
                    thumb: true,
                })?;
                HookProgram {
                    ops: vec![
                        HookOp::SaveScratch,
                        HookOp::TailCall { symbol: name },
                        HookOp::ReturnLastResult,
                    ],
                }
            }
        };
        // stub sizes are base-independent, so assembling at the aligned
        // cursor is final
        let base = align4(alloc.cursor);
        let stub = assemble_stub(&prog, base, &local_syms)?;
        let base = alloc.alloc(stub.total_size)?;
        debug_assert_eq!(base, stub.base);
        let old = image.read_bytes(base, stub.total_size)?.to_vec();
        writes.push(PlannedWrite {
            action_id: id,
            addr: base,
            old,
            new: stub.bytes(),
            check: EditCheck::StubBytes,
        });
        stub_base[id] = Some(base);
        stubs.push(stub);
    }

    let resolve = |t: &PatchTarget| -> Result<u32> {
        match t {
            PatchTarget::Absolute(a) => Ok(*a),
            PatchTarget::Stub(i) => stub_base
                .get(*i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Plan(format!("action {i} is not an installed stub"))),
        }
    };

    // second pass: redirects, replacements, word edits
    for (id, action) in actions.iter().enumerate() {
        match action {
            PatchAction::InstallStub { .. } => {}
            PatchAction::RedirectBranch { site, target, kind } => {
                let old = image.read_bytes(*site, 4)?.to_vec();
                let decoded = match kind {
                    BranchKind::Bl => thumb::decode_bl(&old, *site),
                    BranchKind::BW => thumb::decode_bw(&old, *site),
                };
                if decoded.is_err() {
                    return Err(Error::Plan(format!(
                        "redirect site 0x{site:x} does not hold a branch of the stated kind"
                    )));
                }
                let target = resolve(target)?;
                let new = match kind {
                    BranchKind::Bl => thumb::encode_bl(*site, target)?,
                    BranchKind::BW => thumb::encode_bw(*site, target)?,
                };
                writes.push(PlannedWrite {
                    action_id: id,
                    addr: *site,
                    old,
                    new: new.to_vec(),
                    check: EditCheck::Branch { branch: *kind, target },
                });
            }
            PatchAction::ReplaceFunction { symbol, target } => {
                let victim = local_syms.addr_of(symbol)?;
                let target = resolve(target)?;
                let old = image.read_bytes(victim, 4)?.to_vec();
                let new = thumb::encode_bw(victim, target)?;
                writes.push(PlannedWrite {
                    action_id: id,
                    addr: victim,
                    old,
                    new: new.to_vec(),
                    check: EditCheck::Branch { branch: BranchKind::BW, target },
                });
            }
            PatchAction::OrWord { target, bits } => {
                let addr = match target {
                    WordTarget::Symbol(s) => local_syms.addr_of(s)?,
                    WordTarget::Absolute(a) => *a,
                };
                if addr & 3 != 0 {
                    return Err(Error::Misaligned(addr));
                }
                let old_word = image.read_u32(addr)?;
                let region = image.region_at(addr).expect("read succeeded");
                if !region.writable {
                    return Err(Error::Plan(format!("or_word target 0x{addr:x} is read-only")));
                }
                writes.push(PlannedWrite {
                    action_id: id,
                    addr,
                    old: old_word.to_le_bytes().to_vec(),
                    new: (old_word | bits).to_le_bytes().to_vec(),
                    check: EditCheck::OrWord { bits: *bits },
                });
            }
        }
    }

    // edits must not overlap
    let mut ranges: Vec<(u64, u64)> = writes
        .iter()
        .map(|w| (w.addr as u64, w.addr as u64 + w.new.len() as u64))
        .collect();
    ranges.sort_unstable();
    for pair in ranges.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::Plan(format!(
                "overlapping edits at 0x{:x}",
                pair[1].0
            )));
        }
    }

    Ok(PlannedPatch {
        placement_base: config.placement_base,
        mctl: config.mctl.clone(),
        writes,
        traps,
        stubs,
    })
}

/// Write a validated plan, failing without modification if the image has
/// drifted since planning.
pub fn apply(plan: &PlannedPatch, image: &mut FirmwareImage) -> Result<PatchManifest> {
    for w in &plan.writes {
        let cur = image.read_bytes(w.addr, w.old.len() as u32)?;
        if cur != w.old {
            return Err(Error::StaleImage { addr: w.addr });
        }
    }
    for w in &plan.writes {
        image.write_bytes(w.addr, &w.new)?;
    }
    Ok(PatchManifest {
        placement_base: plan.placement_base,
        mctl: plan.mctl.clone(),
        entries: plan
            .writes
            .iter()
            .map(|w| ManifestEntry {
                action_id: w.action_id,
                addr: w.addr,
                old: w.old.clone(),
                new: w.new.clone(),
                check: w.check.clone(),
            })
            .collect(),
        traps: plan.traps.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct VerifyEntry {
    pub action_id: usize,
    pub addr: u32,
    pub ok: bool,
    pub note: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub entries: Vec<VerifyEntry>,
}

impl VerifyReport {
    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.ok)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} action {} @ 0x{:x}: {}\n",
                if e.ok { "pass" } else { "FAIL" },
                e.action_id,
                e.addr,
                e.note
            ));
        }
        out
    }
}

/// Re-check every manifest edit against the patched image.
pub fn verify(image: &FirmwareImage, manifest: &PatchManifest, _syms: &SymbolMap) -> VerifyReport {
    let mut report = VerifyReport::default();
    for e in &manifest.entries {
        let (ok, note) = match image.read_bytes(e.addr, e.new.len() as u32) {
            Err(err) => (false, format!("unreadable: {err}")),
            Ok(cur) => match &e.check {
                EditCheck::StubBytes => {
                    if cur == e.new {
                        (true, "stub bytes intact".to_string())
                    } else {
                        (false, "stub bytes differ from manifest".to_string())
                    }
                }
                EditCheck::Branch { branch, target } => {
                    let decoded = match branch {
                        BranchKind::Bl => thumb::decode_bl(cur, e.addr),
                        BranchKind::BW => thumb::decode_bw(cur, e.addr),
                    };
                    match decoded {
                        Ok(t) if t == *target => {
                            (true, format!("branch decodes to 0x{t:x}"))
                        }
                        Ok(t) => (false, format!("branch decodes to 0x{t:x}, want 0x{target:x}")),
                        Err(err) => (false, format!("not a branch: {err}")),
                    }
                }
                EditCheck::OrWord { bits } => {
                    let word = u32::from_le_bytes(cur.try_into().unwrap_or([0; 4]));
                    if *bits == 0 {
                        (true, "degenerate zero-mask or_word".to_string())
                    } else if word & bits == *bits {
                        (true, format!("word contains bits 0x{bits:x}"))
                    } else {
                        (false, format!("word 0x{word:x} is missing bits 0x{bits:x}"))
                    }
                }
            },
        };
        report.entries.push(VerifyEntry { action_id: e.action_id, addr: e.addr, ok, note });
    }
    report
}

/// The monitor-mode patch set: replace the receive function with a stub
/// that traps into the native monitor handler, and extend the coreinit
/// maccontrol mask and value words with the promiscuous bits.
pub fn make_monitor_patchset(syms: &SymbolMap, mctl: &MctlBits) -> Result<Vec<PatchAction>> {
    for required in ["wlc_bmac_recv", "coreinit_mctrl_mask_word", "coreinit_mctrl_value_word"] {
        syms.addr_of(required)?;
    }
    Ok(vec![
        PatchAction::InstallStub { source: StubSource::NativeTrap("monitor_recv".into()) },
        PatchAction::ReplaceFunction {
            symbol: "wlc_bmac_recv".into(),
            target: PatchTarget::Stub(0),
        },
        PatchAction::OrWord {
            target: WordTarget::Symbol("coreinit_mctrl_mask_word".into()),
            bits: mctl.combined(),
        },
        PatchAction::OrWord {
            target: WordTarget::Symbol("coreinit_mctrl_value_word".into()),
            bits: mctl.combined(),
        },
    ])
}

pub fn hello_world_program() -> HookProgram {
    HookProgram {
        ops: vec![
            HookOp::SaveScratch,
            HookOp::Call {
                symbol: "printf".into(),
                args: vec![HookArg::Str("hello world".into())],
            },
            HookOp::Call {
                symbol: "dma_rx".into(),
                args: vec![HookArg::Forwarded(0)],
            },
            HookOp::ReturnLastResult,
        ],
    }
}

/// The demo patch set: install the hello-world hook and redirect the
/// dma_rx BL inside the modeled receive routine to it.
pub fn make_helloworld_patchset(syms: &SymbolMap) -> Result<Vec<PatchAction>> {
    for required in ["printf", "dma_rx", "wlc_bmac_recv"] {
        syms.addr_of(required)?;
    }
    let site = syms.addr_of("wlc_bmac_recv")? + 4;
    Ok(vec![
        PatchAction::InstallStub { source: StubSource::Program(hello_world_program()) },
        PatchAction::RedirectBranch { site, target: PatchTarget::Stub(0), kind: BranchKind::Bl },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use proptest::prelude::*;

    fn baseline() -> (FirmwareImage, SymbolMap) {
        let syms = SymbolMap::builtin();
        let img = FirmwareImage::from_ram_bytes(fixture::baseline_ram(&syms).unwrap());
        (img, syms)
    }

    #[test]
    fn mctl_defaults_are_valid() {
        let m = MctlBits::default();
        m.validate().unwrap();
        assert_eq!(
            m.combined(),
            m.promisc | m.keepcontrol | m.bcns_promisc | m.keepbadfcs
        );
    }

    #[test]
    fn bump_allocation_is_sequential() {
        let (img, syms) = baseline();
        let two = HookProgram {
            ops: vec![
                HookOp::SaveScratch,
                HookOp::Call {
                    symbol: "printf".into(),
                    args: vec![HookArg::Str("hello world".into())],
                },
                HookOp::Call { symbol: "dma_rx".into(), args: vec![HookArg::Forwarded(0)] },
                HookOp::ReturnLastResult,
            ],
        };
        let small = HookProgram {
            ops: vec![
                HookOp::SaveScratch,
                HookOp::TailCall { symbol: "dma_rx".into() },
                HookOp::ReturnLastResult,
            ],
        };
        let actions = vec![
            PatchAction::InstallStub { source: StubSource::Program(two) },
            PatchAction::InstallStub { source: StubSource::Program(small) },
        ];
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        // first stub is 0x24 bytes, so the second lands right after it
        assert_eq!(planned.stubs[0].base, 0x180000);
        assert_eq!(planned.stubs[0].total_size, 0x24);
        assert_eq!(planned.stubs[1].base, 0x180024);
    }

    #[test]
    fn redirect_requires_existing_branch() {
        let (img, syms) = baseline();
        let actions = vec![PatchAction::RedirectBranch {
            site: 0x180200, // zero-filled: not a branch
            target: PatchTarget::Absolute(0x180000),
            kind: BranchKind::Bl,
        }];
        assert!(matches!(
            plan(&actions, &img, &syms, &PatchConfig::default()),
            Err(Error::Plan(_))
        ));
    }

    #[test]
    fn helloworld_patchset_places_listing_layout() {
        let (mut img, syms) = baseline();
        let actions = make_helloworld_patchset(&syms).unwrap();
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let manifest = apply(&planned, &mut img).unwrap();
        assert_eq!(img.read_bytes(0x180018, 12).unwrap(), b"hello world\0");
        assert_eq!(img.read_u32(0x180014).unwrap(), 0x0018_0018);
        // redirected call site now branches to the stub
        let site = syms.addr_of("wlc_bmac_recv").unwrap() + 4;
        let bytes = img.read_bytes(site, 4).unwrap();
        assert_eq!(thumb::decode_bl(bytes, site).unwrap(), 0x180000);
        assert!(verify(&img, &manifest, &syms).all_ok());
    }

    #[test]
    fn apply_rollback_round_trip() {
        let (mut img, syms) = baseline();
        let original = img.region("ram").unwrap().bytes().to_vec();
        let actions = make_monitor_patchset(&syms, &MctlBits::default()).unwrap();
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let manifest = apply(&planned, &mut img).unwrap();
        assert_ne!(img.region("ram").unwrap().bytes(), &original[..]);
        manifest.rollback(&mut img).unwrap();
        assert_eq!(img.region("ram").unwrap().bytes(), &original[..]);
    }

    #[test]
    fn double_apply_fails_old_bytes_check() {
        let (mut img, syms) = baseline();
        let actions = make_monitor_patchset(&syms, &MctlBits::default()).unwrap();
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        apply(&planned, &mut img).unwrap();
        assert!(matches!(
            apply(&planned, &mut img),
            Err(Error::StaleImage { .. })
        ));
    }

    #[test]
    fn monitor_patchset_edits_documented_addresses() {
        let (mut img, syms) = baseline();
        let mctl = MctlBits::default();
        let actions = make_monitor_patchset(&syms, &mctl).unwrap();
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let manifest = apply(&planned, &mut img).unwrap();
        let addrs: Vec<u32> = manifest.entries.iter().map(|e| e.addr).collect();
        assert!(addrs.contains(&0x1aad98), "receive function entry");
        assert!(addrs.contains(&0x1ab82c), "coreinit mask word");
        assert!(addrs.contains(&0x1ab828), "coreinit value word");
        // entry now branches to the stub
        let bytes = img.read_bytes(0x1aad98, 4).unwrap();
        let stub_entry = thumb::decode_bw(bytes, 0x1aad98).unwrap();
        assert!(stub_entry >= 0x180000 && stub_entry < 0x180100);
        assert_eq!(img.read_u32(0x1ab82c).unwrap() & mctl.combined(), mctl.combined());
        assert_eq!(img.read_u32(0x1ab828).unwrap() & mctl.combined(), mctl.combined());
        assert!(manifest.registers_trap("monitor_recv"));
        assert!(verify(&img, &manifest, &syms).all_ok());
    }

    #[test]
    fn zero_mask_or_word_is_degenerate_but_passes() {
        let (mut img, syms) = baseline();
        let actions = vec![PatchAction::OrWord {
            target: WordTarget::Symbol("coreinit_mctrl_mask_word".into()),
            bits: 0,
        }];
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let manifest = apply(&planned, &mut img).unwrap();
        let report = verify(&img, &manifest, &syms);
        assert!(report.all_ok());
        assert!(report.entries[0].note.contains("degenerate"));
    }

    #[test]
    fn verify_flags_corrupted_stub() {
        let (mut img, syms) = baseline();
        let actions = make_monitor_patchset(&syms, &MctlBits::default()).unwrap();
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let manifest = apply(&planned, &mut img).unwrap();
        // corrupt one stub byte
        let stub_addr = planned.stubs[0].base;
        let mut b = img.read_bytes(stub_addr, 1).unwrap().to_vec();
        b[0] ^= 0xFF;
        img.write_bytes(stub_addr, &b).unwrap();
        let report = verify(&img, &manifest, &syms);
        assert!(!report.all_ok());
        let failed: Vec<_> = report.entries.iter().filter(|e| !e.ok).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].addr, stub_addr);
    }

    #[test]
    fn plan_is_deterministic() {
        let (img, syms) = baseline();
        let actions = make_monitor_patchset(&syms, &MctlBits::default()).unwrap();
        let a = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let b = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let key = |p: &PlannedPatch| {
            p.writes
                .iter()
                .map(|w| (w.addr, w.new.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn manifest_json_round_trip() {
        let (mut img, syms) = baseline();
        let actions = make_monitor_patchset(&syms, &MctlBits::default()).unwrap();
        let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
        let manifest = apply(&planned, &mut img).unwrap();
        let back = PatchManifest::from_json(&manifest.to_json()).unwrap();
        assert_eq!(back, manifest);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn random_or_word_patchsets_roll_back(
            words in proptest::collection::vec((0u32..0x400, any::<u32>()), 1..8)
        ) {
            let (mut img, syms) = baseline();
            let original = img.region("ram").unwrap().bytes().to_vec();
            // distinct aligned word addresses inside RAM
            let mut actions = Vec::new();
            let mut seen = std::collections::BTreeSet::new();
            for (slot, bits) in words {
                let addr = 0x1C0000 + slot * 4;
                if seen.insert(addr) {
                    actions.push(PatchAction::OrWord {
                        target: WordTarget::Absolute(addr),
                        bits,
                    });
                }
            }
            let planned = plan(&actions, &img, &syms, &PatchConfig::default()).unwrap();
            let manifest = apply(&planned, &mut img).unwrap();
            prop_assert!(verify(&img, &manifest, &syms).all_ok());
            manifest.rollback(&mut img).unwrap();
            prop_assert_eq!(img.region("ram").unwrap().bytes(), &original[..]);
        }
    }
}
