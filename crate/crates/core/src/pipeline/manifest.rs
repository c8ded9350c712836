//! Deployment manifests.
//!
//! ```toml
//! entries = ["Auction.bid"]            # optional allow-list
//!
//! [[contract]]
//! name = "Auction"
//! ir = "fig2.ir"                       # or ir_text = "...", or bytecode = "a.hex"
//!
//! [[contract]]
//! name = "FundsHandler"
//! bytecode = "evm/FundsHandler.hex"
//! address = "0x00000000000000000000000000000000000000aa"
//! signatures = ["recordBid(address)"]
//! storage = { "3" = "refunds" }
//!
//! [[binding]]
//! contract = "Auction"
//! slot = 3
//! target = "FundsHandler"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::PipelineError;
use crate::diag::Stage;
use crate::ir::{parse_word, Word};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractSource {
    IrFile(PathBuf),
    IrText(String),
    /// Hex text, or assembly when the file ends in `.easm`.
    Bytecode(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractSpec {
    pub name: String,
    pub source: ContractSource,
    pub address: Option<[u8; 20]>,
    pub signatures: Vec<String>,
    pub storage: BTreeMap<Word, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingSpec {
    pub contract: String,
    pub slot: Word,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub contracts: Vec<ContractSpec>,
    pub bindings: Vec<BindingSpec>,
    /// Qualified `Contract.function` names; `None` means every public function.
    pub entries: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSlot {
    Int(u64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContract {
    name: String,
    ir: Option<PathBuf>,
    ir_text: Option<String>,
    bytecode: Option<PathBuf>,
    address: Option<String>,
    #[serde(default)]
    signatures: Vec<String>,
    #[serde(default)]
    storage: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBinding {
    contract: String,
    slot: RawSlot,
    target: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    entries: Option<Vec<String>>,
    #[serde(default)]
    contract: Vec<RawContract>,
    #[serde(default)]
    binding: Vec<RawBinding>,
}

fn invalid(message: impl Into<String>) -> PipelineError {
    PipelineError::Manifest(message.into())
}

fn slot_word(text: &str) -> Result<Word, PipelineError> {
    parse_word(text).ok_or_else(|| invalid(format!("bad slot `{text}`")))
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses and validates a manifest. Relative paths are joined to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let mut contracts = Vec::new();
        for c in raw.contract {
            let source = match (c.ir, c.ir_text, c.bytecode) {
                (Some(p), None, None) => ContractSource::IrFile(base.join(p)),
                (None, Some(t), None) => ContractSource::IrText(t),
                (None, None, Some(p)) => ContractSource::Bytecode(base.join(p)),
                _ => {
                    return Err(invalid(format!(
                        "contract `{}` needs exactly one of ir, ir_text, bytecode",
                        c.name
                    )))
                }
            };
            let address = match c.address {
                Some(a) => Some(
                    crate::ir::parse_address(&a)
                        .ok_or_else(|| invalid(format!("contract `{}`: bad address `{a}`", c.name)))?,
                ),
                None => None,
            };
            let storage = c
                .storage
                .iter()
                .map(|(k, v)| Ok((slot_word(k)?, v.clone())))
                .collect::<Result<_, PipelineError>>()?;
            contracts.push(ContractSpec {
                name: c.name,
                source,
                address,
                signatures: c.signatures,
                storage,
            });
        }
        let bindings = raw
            .binding
            .into_iter()
            .map(|b| {
                let slot = match b.slot {
                    RawSlot::Int(n) => Word::from(n),
                    RawSlot::Text(t) => slot_word(&t)?,
                };
                Ok(BindingSpec {
                    contract: b.contract,
                    slot,
                    target: b.target,
                })
            })
            .collect::<Result<_, PipelineError>>()?;
        let m = Manifest {
            contracts,
            bindings,
            entries: raw.entries,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), PipelineError> {
        let mut names = BTreeSet::new();
        for c in &self.contracts {
            if !names.insert(c.name.as_str()) {
                return Err(invalid(format!("DuplicateContract({})", c.name)));
            }
        }
        for b in &self.bindings {
            for n in [&b.contract, &b.target] {
                if !names.contains(n.as_str()) {
                    return Err(invalid(format!("UnknownBindingContract({n})")));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn read(path: &Path) -> Result<String, PipelineError> {
        std::fs::read_to_string(path).map_err(|e| PipelineError::Stage {
            stage: Stage::Frontend,
            message: format!("cannot read {}: {e}", path.display()),
        })
    }
}
