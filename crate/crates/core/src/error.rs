use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    // memory model
    #[error("range 0x{addr:x}+0x{len:x} is not inside a single mapped region")]
    Unmapped { addr: u32, len: u32 },
    #[error("write into read-only region {name} at 0x{addr:x}")]
    ReadOnly { name: String, addr: u32 },
    #[error("region {0} overlaps an existing region")]
    RegionOverlap(String),
    #[error("no region named {0}")]
    UnknownRegion(String),

    // symbols
    #[error("duplicate symbol {0}")]
    DuplicateSymbol(String),
    #[error("unresolved symbol {0}")]
    UnresolvedSymbol(String),
    #[error("symbol map: {0}")]
    SymbolFormat(String),

    // codegen
    #[error("misaligned address 0x{0:x}")]
    Misaligned(u32),
    #[error("branch offset {offset:#x} out of range at pc 0x{pc:x}")]
    BranchRange { pc: u32, offset: i64 },
    #[error("bytes at 0x{0:x} are not a {1} encoding")]
    NotABranch(u32, &'static str),
    #[error("literal pool out of LDR range at 0x{0:x}")]
    LiteralRange(u32),
    #[error("hook program: {0}")]
    Program(String),

    // patcher
    #[error("placement region exhausted at 0x{0:x}")]
    PlacementExhausted(u32),
    #[error("plan: {0}")]
    Plan(String),
    #[error("old bytes at 0x{addr:x} do not match plan (image drifted)")]
    StaleImage { addr: u32 },
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("manifest: {0}")]
    Manifest(String),

    // interpreter / simulator
    #[error("undecodable instruction 0x{word:04x} at 0x{addr:x}")]
    Undecodable { addr: u32, word: u16 },
    #[error("fuel exhausted after {0} instructions")]
    FuelExhausted(u64),
    #[error("stack {0} at sp 0x{1:x}")]
    StackFault(&'static str, u32),
    #[error("call to unmapped, untrapped address 0x{0:x}")]
    UntrappedCall(u32),
    #[error("no interrupt pending")]
    NoInterrupt,
    #[error("insufficient headroom: need {need}, have {have}")]
    Headroom { need: usize, have: usize },
    #[error("sim: {0}")]
    Sim(String),

    // capture
    #[error("radiotap: {0}")]
    Radiotap(String),
    #[error("pcap: {0}")]
    Pcap(String),
    #[error("capture: {0}")]
    Capture(String),

    #[error("config: {0}")]
    Config(String),
}
