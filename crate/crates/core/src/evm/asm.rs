//! A small assembler for hand-written bytecode fixtures.
//!
//! ```text
//! ; comment
//!     PUSH1 0x80
//!     PUSH4 @sel(bid())
//!     PUSH2 @done
//!     JUMP
//! done:               ; emits JUMPDEST
//!     STOP
//! ```

use std::collections::HashMap;

use ruint::aliases::U256;
use thiserror::Error;

use super::opcodes::{byte_of, info, JUMPDEST};
use super::selector_of;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

enum Imm {
    None,
    Lit(U256),
    Label(String),
}

struct Item {
    line: usize,
    byte: u8,
    width: usize,
    imm: Imm,
}

fn err(line: usize, message: impl Into<String>) -> AsmError {
    AsmError {
        line,
        message: message.into(),
    }
}

fn parse_imm(line: usize, text: &str) -> Result<Imm, AsmError> {
    if let Some(sig) = text.strip_prefix("@sel(").and_then(|s| s.strip_suffix(')')) {
        return Ok(Imm::Lit(U256::from(selector_of(sig))));
    }
    if let Some(label) = text.strip_prefix('@') {
        return Ok(Imm::Label(label.to_string()));
    }
    let parsed = match text.strip_prefix("0x") {
        Some(h) => U256::from_str_radix(h, 16),
        None => U256::from_str_radix(text, 10),
    };
    parsed.map(Imm::Lit).map_err(|_| err(line, format!("bad immediate `{text}`")))
}

pub fn assemble(source: &str) -> Result<Vec<u8>, AsmError> {
    let mut items = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut pc = 0;
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split(';').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(label) = text.strip_suffix(':') {
            if labels.insert(label.to_string(), pc).is_some() {
                return Err(err(line, format!("label `{label}` defined twice")));
            }
            items.push(Item {
                line,
                byte: JUMPDEST,
                width: 0,
                imm: Imm::None,
            });
            pc += 1;
            continue;
        }
        let mut parts = text.split_whitespace();
        let mnemonic = parts.next().unwrap_or_default();
        let byte = byte_of(mnemonic).ok_or_else(|| err(line, format!("unknown mnemonic `{mnemonic}`")))?;
        let width = info(byte).map_or(0, |i| i.imm as usize);
        let imm = match (width, parts.next()) {
            (0, None) => Imm::None,
            (0, Some(_)) => return Err(err(line, format!("{mnemonic} takes no immediate"))),
            (_, None) => return Err(err(line, format!("{mnemonic} needs an immediate"))),
            (_, Some(t)) => parse_imm(line, t)?,
        };
        if parts.next().is_some() {
            return Err(err(line, "trailing tokens"));
        }
        items.push(Item { line, byte, width, imm });
        pc += 1 + width;
    }
    let mut out = Vec::with_capacity(pc);
    for it in items {
        out.push(it.byte);
        let value = match it.imm {
            Imm::None => continue,
            Imm::Lit(v) => v,
            Imm::Label(l) => U256::from(
                *labels
                    .get(&l)
                    .ok_or_else(|| err(it.line, format!("undefined label `{l}`")))?,
            ),
        };
        let bytes: [u8; 32] = value.to_be_bytes();
        if bytes[..32 - it.width].iter().any(|b| *b != 0) {
            return Err(err(it.line, format!("immediate does not fit in {} bytes", it.width)));
        }
        out.extend_from_slice(&bytes[32 - it.width..]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_resolve_forward() {
        let code = assemble("PUSH2 @end\nJUMP\nend:\nSTOP\n").unwrap();
        assert_eq!(hex::encode(code), "610004565b00");
    }

    #[test]
    fn selector_immediates() {
        let code = assemble("PUSH4 @sel(transfer(address,uint256))").unwrap();
        assert_eq!(hex::encode(code), "63a9059cbb");
    }

    #[test]
    fn errors_carry_lines() {
        assert_eq!(assemble("STOP\nFOO").unwrap_err().line, 2);
        assert_eq!(assemble("PUSH1 0x100").unwrap_err().line, 1);
        assert!(assemble("PUSH1 @nowhere").is_err());
        assert!(assemble("a:\na:").is_err());
    }
}
