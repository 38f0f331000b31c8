//! Named firmware addresses recovered from the BCM4339 firmware
//! (version 6.37.32.RC23.34.40), plus load/save in a simple JSON format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hexfmt::hex_u32;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolKind {
    #[serde(rename = "function")]
    Function,
    #[serde(rename = "data-word")]
    DataWord,
    #[serde(rename = "handler-chain-node")]
    HandlerChainNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    #[serde(with = "hex_u32")]
    pub address: u32,
    pub kind: SymbolKind,
    pub thumb: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolMap {
    entries: BTreeMap<String, Symbol>,
}

/// Address constants recovered from the firmware disassembly. All code
/// symbols execute in Thumb mode. `dma_rxfill` carries no published
/// address; the value here is a model constant inside ROM.
const BUILTIN: &[(&str, u32, SymbolKind)] = &[
    ("printf", 0x126F0, SymbolKind::Function),
    ("dma_rx", 0x8C69C, SymbolKind::Function),
    ("dma_rxfill", 0x8C76C, SymbolKind::Function),
    ("wlc_bmac_recv", 0x1aad98, SymbolKind::Function),
    ("wlc_bmac_recv_wrapper", 0x4f7a4, SymbolKind::Function),
    ("wlc_recv", 0x19afe8, SymbolKind::Function),
    ("dngl_sendpkt", 0x182750, SymbolKind::Function),
    ("dma_txfast", 0x1844b2, SymbolKind::Function),
    ("wlc_bmac_mctrl", 0x4f080, SymbolKind::Function),
    ("wlc_coreinit", 0x1ab66c, SymbolKind::Function),
    ("coreinit_mctrl_mask_word", 0x1ab82c, SymbolKind::DataWord),
    ("coreinit_mctrl_value_word", 0x1ab828, SymbolKind::DataWord),
    ("fiq_ram_handler", 0x180fee, SymbolKind::Function),
    ("common_exception_handler", 0x181032, SymbolKind::Function),
    ("callback_ref", 0x181100, SymbolKind::DataWord),
    ("callback_fn", 0x181e48, SymbolKind::Function),
    ("fiq_dispatch", 0x181a88, SymbolKind::Function),
    ("handler_list_ref", 0x180e5c, SymbolKind::DataWord),
    ("wlc_dpc_path_0", 0x27550, SymbolKind::HandlerChainNode),
    ("wlc_dpc_path_1", 0x2733c, SymbolKind::HandlerChainNode),
    ("wlc_dpc_path_2", 0x61eb4, SymbolKind::HandlerChainNode),
    // Intermediate sendpkt/txfast path constants; not named functions in
    // the firmware, kept as chain nodes under synthetic names.
    ("recv_path_node_0", 0x19955f, SymbolKind::HandlerChainNode),
    ("recv_path_node_1", 0x198cdd, SymbolKind::HandlerChainNode),
    ("recv_path_node_2", 0x1981f5, SymbolKind::HandlerChainNode),
    ("recv_path_node_3", 0x1893b5, SymbolKind::HandlerChainNode),
    ("recv_path_node_4", 0x183771, SymbolKind::HandlerChainNode),
    ("recv_path_node_5", 0x182C84, SymbolKind::HandlerChainNode),
    ("tx_path_node_0", 0x18256c, SymbolKind::HandlerChainNode),
    ("tx_path_node_1", 0x182450, SymbolKind::HandlerChainNode),
];

impl SymbolMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut map = Self::new();
        for &(name, addr, kind) in BUILTIN {
            map.insert(Symbol {
                name: name.to_string(),
                address: addr,
                kind,
                thumb: true,
            })
            .expect("builtin map is well formed");
        }
        map
    }

    pub fn insert(&mut self, sym: Symbol) -> Result<()> {
        if sym.kind == SymbolKind::Function {
            if sym.address & 1 != 0 {
                return Err(Error::Misaligned(sym.address));
            }
            if self
                .entries
                .values()
                .any(|s| s.kind == SymbolKind::Function && s.address == sym.address)
            {
                return Err(Error::SymbolFormat(format!(
                    "two function symbols at 0x{:x}",
                    sym.address
                )));
            }
        }
        if self.entries.contains_key(&sym.name) {
            return Err(Error::DuplicateSymbol(sym.name));
        }
        self.entries.insert(sym.name.clone(), sym);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<&Symbol> {
        self.entries.get(name)
    }

    pub fn addr_of(&self, name: &str) -> Result<u32> {
        self.lookup(name)
            .map(|s| s.address)
            .ok_or_else(|| Error::UnresolvedSymbol(name.to_string()))
    }

    /// Unique function symbol at `addr`, if any.
    pub fn reverse_lookup(&self, addr: u32) -> Option<&Symbol> {
        self.entries
            .values()
            .find(|s| s.kind == SymbolKind::Function && s.address == addr)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Symbol> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let v: Vec<&Symbol> = self.entries.values().collect();
        serde_json::to_string_pretty(&v).expect("symbol serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::new());
        }
        let v: Vec<Symbol> = serde_json::from_str(text)?;
        let mut map = Self::new();
        for sym in v {
            map.insert(sym)?;
        }
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
