//! EVM runtime bytecode to IR.

mod asm;
mod cfg;
mod disasm;
mod dispatch;
mod lift;
mod opcodes;

use thiserror::Error;
use tiny_keccak::{Hasher, Keccak};

pub use asm::{assemble, AsmError};
pub use cfg::{fold, recover_blocks, AbsVal, EdgeKind, EvmBlock, EvmCfg, EvmEdge, Target};
pub use disasm::{decode_hex, disassemble, reassemble, EvmOp};
pub use dispatch::{identify_functions, single_entry, DispatchEntry, Dispatch};
pub use lift::{lift_bytecode, lift_to_ir, parse_signature, LiftInput, Lifted, Signature, SignatureTable};
pub use opcodes::{byte_of, info, OpInfo};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("EmptyBytecode: no bytes to decode")]
    EmptyBytecode,
    #[error("OddHexLength: hex text has an odd number of digits")]
    OddHexLength,
    #[error("BadHex: {0}")]
    BadHex(String),
    #[error("NoDispatcher: no selector dispatch found")]
    NoDispatcher,
}

/// First four bytes of keccak256 over a canonical signature such as
/// `transfer(address,uint256)`.
pub fn selector_of(signature: &str) -> u32 {
    let mut k = Keccak::v256();
    k.update(signature.as_bytes());
    let mut out = [0u8; 32];
    k.finalize(&mut out);
    u32::from_be_bytes([out[0], out[1], out[2], out[3]])
}

pub fn format_selector(sel: u32) -> String {
    format!("0x{sel:08x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_selectors() {
        assert_eq!(selector_of("transfer(address,uint256)"), 0xa9059cbb);
        assert_eq!(selector_of("balanceOf(address)"), 0x70a08231);
        assert_eq!(format_selector(0x0000_00ab), "0x000000ab");
    }
}
