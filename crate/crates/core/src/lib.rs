//! Desk-scale reconstruction of a FullMAC Wi-Fi firmware extension toolchain:
//! a Thumb hook-stub patcher for a modeled BCM4339 ROM/RAM image and a
//! behavioral simulator of the chip's receive pipeline, producing
//! radiotap/pcap captures for the stock-filtered and monitor-mode paths.

pub mod capture;
pub mod fixture;
pub mod image;
pub mod interp;
pub mod patch;
pub mod sim;
pub mod symbols;
pub mod thumb;

mod error;
pub mod hexfmt;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
