use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fwmon::capture::{
    self, gen_corpus, host_deliver, CorpusSpec, LINKTYPE_ETHERNET, LINKTYPE_IEEE802_11_RADIOTAP,
};
use fwmon::image::{FirmwareImage, MemoryRegion, RAM_BASE, ROM_BASE, ROM_SIZE};
use fwmon::patch::{self, MctlBits, PatchConfig, PatchManifest};
use fwmon::sim::SimState;
use fwmon::symbols::SymbolMap;
use fwmon::{hexfmt, thumb, Error, Result};

#[derive(Parser)]
#[command(name = "fwmon", version, about = "Firmware monitor-mode patching and receive-path simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn hex32(s: &str) -> std::result::Result<u32, String> {
    hexfmt::parse_u32(s).ok_or_else(|| format!("bad number {s:?}"))
}

#[derive(Clone, Copy, ValueEnum)]
enum PatchsetName {
    Monitor,
    Helloworld,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic baseline RAM image.
    GenRam {
        #[arg(long)]
        out: PathBuf,
    },
    /// Hexdump (or raw-dump) part of a RAM image.
    Dump {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_parser = hex32, default_value = "0x180000")]
        base: u32,
        #[arg(long, value_parser = hex32)]
        addr: u32,
        #[arg(long, value_parser = hex32)]
        len: u32,
        /// Write raw bytes here instead of hexdumping to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Disassemble instructions from a RAM image.
    Disasm {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_parser = hex32, default_value = "0x180000")]
        base: u32,
        #[arg(long, value_parser = hex32)]
        addr: u32,
        #[arg(long, default_value_t = 8)]
        count: u32,
        #[arg(long)]
        symbols: Option<PathBuf>,
    },
    /// Apply a named patch set to a RAM image.
    Patch {
        #[arg(long)]
        ram: PathBuf,
        #[arg(long, value_enum)]
        patchset: PatchsetName,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        symbols: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = hex32, default_value = "0x180000")]
        base: u32,
    },
    /// Run a frame corpus through the receive-path simulator.
    Sim {
        #[arg(long)]
        ram: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_pcap: Option<PathBuf>,
        /// Ignore the manifest and run the stock firmware path.
        #[arg(long)]
        stock: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print the firmware console after the run.
        #[arg(long)]
        console: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a corpus spec (normalized JSON).
    GenCorpus {
        /// Start from an existing spec instead of the defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Optional JSON config overlaying tool defaults.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct CliConfig {
    placement_base: Option<String>,
    rxbnd: Option<u32>,
    mctl: Option<MctlBits>,
    stock_data_channel: Option<u8>,
    corrected_loop: Option<bool>,
}

impl CliConfig {
    fn load(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }

    fn placement_base(&self) -> Result<Option<u32>> {
        self.placement_base
            .as_deref()
            .map(|s| {
                hexfmt::parse_u32(s)
                    .ok_or_else(|| Error::Config(format!("bad placement_base {s:?}")))
            })
            .transpose()
    }
}

fn load_image(ram: &PathBuf, base: u32) -> Result<FirmwareImage> {
    let bytes = std::fs::read(ram)?;
    let mut img = FirmwareImage::empty();
    img.add_region(MemoryRegion::zeroed("rom", ROM_BASE, ROM_SIZE, false))?;
    img.add_region(MemoryRegion::new("ram", base, true, bytes))?;
    Ok(img)
}

fn load_symbols(path: Option<&PathBuf>) -> Result<SymbolMap> {
    match path {
        Some(p) => SymbolMap::load(p),
        None => Ok(SymbolMap::builtin()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenRam { out } => {
            let syms = SymbolMap::builtin();
            std::fs::write(out, fwmon::fixture::baseline_ram(&syms)?)?;
        }
        Command::Dump { image, base, addr, len, out } => {
            let img = load_image(&image, base)?;
            match out {
                Some(p) => std::fs::write(p, img.read_bytes(addr, len)?)?,
                None => print!("{}", img.hexdump(addr, len)?),
            }
        }
        Command::Disasm { image, base, addr, count, symbols } => {
            let img = load_image(&image, base)?;
            let syms = load_symbols(symbols.as_ref())?;
            let bytes = available_bytes(&img, addr, count * 4);
            let lines = thumb::disassemble(bytes, addr, &syms);
            for line in lines.iter().take(count as usize) {
                println!("{}", line.text);
            }
        }
        Command::Patch { ram, patchset, out, manifest, symbols, config, base } => {
            let mut img = load_image(&ram, base)?;
            let syms = load_symbols(symbols.as_ref())?;
            let cfg = CliConfig::load(config.as_ref())?;
            let mut pc = PatchConfig::default();
            if let Some(b) = cfg.placement_base()? {
                pc.placement_base = b;
            }
            if let Some(m) = cfg.mctl {
                pc.mctl = m;
            }
            pc.mctl.validate()?;
            let actions = match patchset {
                PatchsetName::Monitor => patch::make_monitor_patchset(&syms, &pc.mctl)?,
                PatchsetName::Helloworld => patch::make_helloworld_patchset(&syms)?,
            };
            let planned = patch::plan(&actions, &img, &syms, &pc)?;
            let applied = patch::apply(&planned, &mut img)?;
            let report = patch::verify(&img, &applied, &syms);
            print!("{}", report.render());
            if !report.all_ok() {
                return Err(Error::VerifyFailed("post-apply verification".into()));
            }
            img.dump_region("ram", &out)?;
            applied.save(&manifest)?;
        }
        Command::Sim { ram, manifest, corpus, out_pcap, stock, report, console, config } => {
            let img = load_image(&ram, RAM_BASE)?;
            let syms = SymbolMap::builtin();
            let cfg = CliConfig::load(config.as_ref())?;
            let spec = CorpusSpec::load(&corpus)?;
            let loaded = manifest.as_ref().map(|p| PatchManifest::load(p)).transpose()?;
            let manifest_used = if stock { None } else { loaded.as_ref() };

            let mut sim_cfg = fwmon::sim::SimConfig::default();
            sim_cfg.sta_mac = spec.sta_mac;
            sim_cfg.joined_bssid = spec.joined_bssid;
            if let Some(r) = cfg.rxbnd {
                sim_cfg.rxbnd = r;
            }
            if let Some(m) = cfg.mctl.clone() {
                sim_cfg.mctl = m;
            }
            if let Some(c) = cfg.stock_data_channel {
                sim_cfg.stock_data_channel = c;
            }
            if let Some(c) = cfg.corrected_loop {
                sim_cfg.corrected_loop = c;
            }

            let mut state = SimState::boot(&img, manifest_used, &syms, sim_cfg)?;
            for frame in gen_corpus(&spec) {
                state.inject_air_frame(frame);
                while state.interrupt_pending {
                    state.dispatch_interrupt(&img)?;
                }
            }

            let cap = host_deliver(&state.host_queue);
            let monitor_mode = manifest_used
                .map(|m| m.registers_trap("monitor_recv"))
                .unwrap_or(false);
            if let Some(p) = out_pcap {
                if monitor_mode {
                    capture::write_pcap(&p, LINKTYPE_IEEE802_11_RADIOTAP, &cap.monitor)?;
                } else {
                    capture::write_pcap(&p, LINKTYPE_ETHERNET, &cap.data)?;
                }
            }
            if let Some(p) = report {
                let hexvec = |v: &[u32]| -> Vec<String> {
                    v.iter().map(|x| format!("0x{x:x}")).collect()
                };
                let doc = serde_json::json!({
                    "mode": state.mode,
                    "counters": state.counters,
                    "count_cell": state.count_cell,
                    "malformed": cap.malformed,
                    "dispatch_chain": hexvec(&state.dispatch_log),
                    "maccontrol_history": hexvec(&state.maccontrol_history),
                });
                std::fs::write(p, serde_json::to_string_pretty(&doc)?)?;
            }
            if console {
                print!("{}", state.consoledump());
            }
        }
        Command::GenCorpus { spec, seed, out } => {
            let mut s = match spec {
                Some(p) => CorpusSpec::load(&p)?,
                None => CorpusSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            s.save(&out)?;
        }
    }
    Ok(())
}

/// As many bytes from `addr` as the image maps, up to `want`.
fn available_bytes(img: &FirmwareImage, addr: u32, want: u32) -> &[u8] {
    let mut len = want;
    loop {
        if let Ok(b) = img.read_bytes(addr, len) {
            return b;
        }
        if len <= 2 {
            return &[];
        }
        len -= 2;
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Misaligned(_)
        | Error::BranchRange { .. }
        | Error::NotABranch(..)
        | Error::LiteralRange(_)
        | Error::Undecodable { .. } => 2,
        Error::Plan(_)
        | Error::PlacementExhausted(_)
        | Error::Program(_)
        | Error::UnresolvedSymbol(_)
        | Error::DuplicateSymbol(_)
        | Error::SymbolFormat(_)
        | Error::StaleImage { .. } => 3,
        Error::VerifyFailed(_) => 4,
        Error::Sim(_)
        | Error::NoInterrupt
        | Error::FuelExhausted(_)
        | Error::StackFault(..)
        | Error::UntrappedCall(_)
        | Error::Headroom { .. } => 5,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
