//! EVM opcode table.

/// Static facts about one opcode byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpInfo {
    pub name: &'static str,
    /// Stack items consumed.
    pub pops: u8,
    /// Stack items produced.
    pub pushes: u8,
    /// PUSH immediate width in bytes.
    pub imm: u8,
}

const fn op(name: &'static str, pops: u8, pushes: u8) -> Option<OpInfo> {
    Some(OpInfo { name, pops, pushes, imm: 0 })
}

const PUSH_NAMES: [&str; 33] = [
    "PUSH0", "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10", "PUSH11",
    "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22",
    "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11", "DUP12", "DUP13",
    "DUP14", "DUP15", "DUP16",
];
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10", "SWAP11", "SWAP12",
    "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];
const LOG_NAMES: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

/// Known opcodes; `None` for unassigned bytes.
pub const fn info(byte: u8) -> Option<OpInfo> {
    match byte {
        0x00 => op("STOP", 0, 0),
        0x01 => op("ADD", 2, 1),
        0x02 => op("MUL", 2, 1),
        0x03 => op("SUB", 2, 1),
        0x04 => op("DIV", 2, 1),
        0x05 => op("SDIV", 2, 1),
        0x06 => op("MOD", 2, 1),
        0x07 => op("SMOD", 2, 1),
        0x08 => op("ADDMOD", 3, 1),
        0x09 => op("MULMOD", 3, 1),
        0x0a => op("EXP", 2, 1),
        0x0b => op("SIGNEXTEND", 2, 1),
        0x10 => op("LT", 2, 1),
        0x11 => op("GT", 2, 1),
        0x12 => op("SLT", 2, 1),
        0x13 => op("SGT", 2, 1),
        0x14 => op("EQ", 2, 1),
        0x15 => op("ISZERO", 1, 1),
        0x16 => op("AND", 2, 1),
        0x17 => op("OR", 2, 1),
        0x18 => op("XOR", 2, 1),
        0x19 => op("NOT", 1, 1),
        0x1a => op("BYTE", 2, 1),
        0x1b => op("SHL", 2, 1),
        0x1c => op("SHR", 2, 1),
        0x1d => op("SAR", 2, 1),
        0x20 => op("SHA3", 2, 1),
        0x30 => op("ADDRESS", 0, 1),
        0x31 => op("BALANCE", 1, 1),
        0x32 => op("ORIGIN", 0, 1),
        0x33 => op("CALLER", 0, 1),
        0x34 => op("CALLVALUE", 0, 1),
        0x35 => op("CALLDATALOAD", 1, 1),
        0x36 => op("CALLDATASIZE", 0, 1),
        0x37 => op("CALLDATACOPY", 3, 0),
        0x38 => op("CODESIZE", 0, 1),
        0x39 => op("CODECOPY", 3, 0),
        0x3a => op("GASPRICE", 0, 1),
        0x3b => op("EXTCODESIZE", 1, 1),
        0x3c => op("EXTCODECOPY", 4, 0),
        0x3d => op("RETURNDATASIZE", 0, 1),
        0x3e => op("RETURNDATACOPY", 3, 0),
        0x3f => op("EXTCODEHASH", 1, 1),
        0x40 => op("BLOCKHASH", 1, 1),
        0x41 => op("COINBASE", 0, 1),
        0x42 => op("TIMESTAMP", 0, 1),
        0x43 => op("NUMBER", 0, 1),
        0x44 => op("PREVRANDAO", 0, 1),
        0x45 => op("GASLIMIT", 0, 1),
        0x46 => op("CHAINID", 0, 1),
        0x47 => op("SELFBALANCE", 0, 1),
        0x48 => op("BASEFEE", 0, 1),
        0x49 => op("BLOBHASH", 1, 1),
        0x4a => op("BLOBBASEFEE", 0, 1),
        0x50 => op("POP", 1, 0),
        0x51 => op("MLOAD", 1, 1),
        0x52 => op("MSTORE", 2, 0),
        0x53 => op("MSTORE8", 2, 0),
        0x54 => op("SLOAD", 1, 1),
        0x55 => op("SSTORE", 2, 0),
        0x56 => op("JUMP", 1, 0),
        0x57 => op("JUMPI", 2, 0),
        0x58 => op("PC", 0, 1),
        0x59 => op("MSIZE", 0, 1),
        0x5a => op("GAS", 0, 1),
        0x5b => op("JUMPDEST", 0, 0),
        0x5c => op("TLOAD", 1, 1),
        0x5d => op("TSTORE", 2, 0),
        0x5e => op("MCOPY", 3, 0),
        0x5f..=0x7f => {
            let n = byte - 0x5f;
            Some(OpInfo {
                name: PUSH_NAMES[n as usize],
                pops: 0,
                pushes: 1,
                imm: n,
            })
        }
        0x80..=0x8f => {
            let n = byte - 0x7f;
            Some(OpInfo {
                name: DUP_NAMES[n as usize - 1],
                pops: n,
                pushes: n + 1,
                imm: 0,
            })
        }
        0x90..=0x9f => {
            let n = byte - 0x8f;
            Some(OpInfo {
                name: SWAP_NAMES[n as usize - 1],
                pops: n + 1,
                pushes: n + 1,
                imm: 0,
            })
        }
        0xa0..=0xa4 => {
            let n = byte - 0xa0;
            Some(OpInfo {
                name: LOG_NAMES[n as usize],
                pops: n + 2,
                pushes: 0,
                imm: 0,
            })
        }
        0xf0 => op("CREATE", 3, 1),
        0xf1 => op("CALL", 7, 1),
        0xf2 => op("CALLCODE", 7, 1),
        0xf3 => op("RETURN", 2, 0),
        0xf4 => op("DELEGATECALL", 6, 1),
        0xf5 => op("CREATE2", 4, 1),
        0xfa => op("STATICCALL", 6, 1),
        0xfd => op("REVERT", 2, 0),
        0xfe => op("INVALID", 0, 0),
        0xff => op("SELFDESTRUCT", 1, 0),
        _ => None,
    }
}

/// Byte for a mnemonic, if it names a known opcode.
pub fn byte_of(name: &str) -> Option<u8> {
    (0..=255u8).find(|b| info(*b).is_some_and(|i| i.name.eq_ignore_ascii_case(name)))
}

/// Opcodes after which control never falls through.
pub fn ends_block(byte: u8) -> bool {
    matches!(byte, 0x00 | 0x56 | 0xf3 | 0xfd | 0xfe | 0xff) || info(byte).is_none()
}

pub const JUMPDEST: u8 = 0x5b;
pub const JUMP: u8 = 0x56;
pub const JUMPI: u8 = 0x57;
