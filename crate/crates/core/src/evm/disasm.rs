use ruint::aliases::U256;

use super::opcodes::info;
use super::FrontendError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvmOp {
    pub offset: usize,
    pub byte: u8,
    /// `INVALID` for unassigned bytes.
    pub name: &'static str,
    /// PUSH payload, zero-padded to the full width when truncated.
    pub imm: Vec<u8>,
    /// The payload ran past the end of the code.
    pub truncated: bool,
}

impl EvmOp {
    pub fn is_push(&self) -> bool {
        (0x5f..=0x7f).contains(&self.byte)
    }

    pub fn push_value(&self) -> Option<U256> {
        self.is_push().then(|| U256::from_be_slice(&self.imm))
    }
}

/// Hex text to bytes; an optional `0x` prefix and any whitespace are ignored.
pub fn decode_hex(text: &str) -> Result<Vec<u8>, FrontendError> {
    let cleaned: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let body = cleaned.strip_prefix("0x").unwrap_or(&cleaned);
    if !body.len().is_multiple_of(2) {
        return Err(FrontendError::OddHexLength);
    }
    let bytes = hex::decode(body).map_err(|e| FrontendError::BadHex(e.to_string()))?;
    if bytes.is_empty() {
        return Err(FrontendError::EmptyBytecode);
    }
    Ok(bytes)
}

pub fn disassemble(code: &[u8]) -> Result<Vec<EvmOp>, FrontendError> {
    if code.is_empty() {
        return Err(FrontendError::EmptyBytecode);
    }
    let mut ops = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let byte = code[pc];
        let (name, width) = match info(byte) {
            Some(i) => (i.name, i.imm as usize),
            None => ("INVALID", 0),
        };
        let end = (pc + 1 + width).min(code.len());
        let mut imm = code[pc + 1..end].to_vec();
        let truncated = imm.len() < width;
        imm.resize(width, 0);
        ops.push(EvmOp {
            offset: pc,
            byte,
            name,
            imm,
            truncated,
        });
        pc += 1 + width;
    }
    Ok(ops)
}

/// Bytes of `ops`; truncated payloads come back padded.
pub fn reassemble(ops: &[EvmOp]) -> Vec<u8> {
    let mut out = Vec::new();
    for op in ops {
        out.push(op.byte);
        out.extend_from_slice(&op.imm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_push_add() {
        let ops = disassemble(&decode_hex("6001600101").unwrap()).unwrap();
        let names: Vec<_> = ops.iter().map(|o| o.name).collect();
        assert_eq!(names, ["PUSH1", "PUSH1", "ADD"]);
        assert_eq!(ops[1].offset, 2);
        assert_eq!(ops[0].push_value(), Some(U256::from(1)));
    }

    #[test]
    fn input_errors() {
        assert_eq!(decode_hex(""), Err(FrontendError::EmptyBytecode));
        assert_eq!(decode_hex("0x"), Err(FrontendError::EmptyBytecode));
        assert_eq!(decode_hex("0x600"), Err(FrontendError::OddHexLength));
        assert_eq!(disassemble(&[]), Err(FrontendError::EmptyBytecode));
        assert_eq!(decode_hex("0x60 01\n01").unwrap(), vec![0x60, 1, 1]);
    }

    #[test]
    fn unknown_byte_is_invalid() {
        let ops = disassemble(&[0x0c, 0x00]).unwrap();
        assert_eq!(ops[0].name, "INVALID");
        assert_eq!(ops[0].byte, 0x0c);
    }

    #[test]
    fn truncated_push_is_padded() {
        let ops = disassemble(&[0x61, 0xab]).unwrap();
        assert!(ops[0].truncated);
        assert_eq!(ops[0].imm, vec![0xab, 0]);
    }

    proptest! {
        #[test]
        fn round_trip(code in proptest::collection::vec(any::<u8>(), 1..200)) {
            let ops = disassemble(&code).unwrap();
            let mut offsets = ops.iter().map(|o| o.offset);
            let mut prev = offsets.next().unwrap();
            for o in offsets {
                prop_assert!(o > prev);
                prev = o;
            }
            if ops.iter().all(|o| !o.truncated) {
                prop_assert_eq!(reassemble(&ops), code);
            } else {
                prop_assert!(reassemble(&ops).starts_with(&code));
            }
        }
    }
}
