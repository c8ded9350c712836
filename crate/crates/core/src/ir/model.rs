//! The three-address IR shared by every analysis.
//!
//! A [`Universe`] is a set of contracts; each contract owns state variables and
//! functions, and each function is a list of basic blocks whose last
//! instruction is the terminator. The representation is not SSA: a value id
//! may be assigned more than once, and `PHI` is optional.

use std::fmt;
use std::str::FromStr;

use ruint::aliases::U256;

use crate::semantics::SemanticCategory;

/// 256-bit EVM word.
pub type Word = U256;

/// Formats a word the way the textual IR writes literals.
pub fn format_word(w: &Word) -> String {
    if *w <= Word::from(u64::MAX) {
        w.to::<u64>().to_string()
    } else {
        format!("{w:#x}")
    }
}

pub fn parse_word(s: &str) -> Option<Word> {
    if let Some(hex) = s.strip_prefix("0x") {
        if hex.is_empty() || hex.len() > 64 {
            return None;
        }
        Word::from_str_radix(hex, 16).ok()
    } else if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
        Word::from_str_radix(s, 10).ok()
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Eq,
    IsZero,
    And,
    Or,
    Sha3,
    Sload,
    Sstore,
    Mload,
    Mstore,
    CallDataLoad,
    Caller,
    CallValue,
    Timestamp,
    Number,
    Call,
    CallValueCall,
    StaticCall,
    DelegateCall,
    Jump,
    JumpI,
    Return,
    Revert,
    Stop,
    Phi,
    InternalCall,
}

impl Opcode {
    pub const ALL: [Opcode; 32] = [
        Opcode::Const,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::Lt,
        Opcode::Gt,
        Opcode::Eq,
        Opcode::IsZero,
        Opcode::And,
        Opcode::Or,
        Opcode::Sha3,
        Opcode::Sload,
        Opcode::Sstore,
        Opcode::Mload,
        Opcode::Mstore,
        Opcode::CallDataLoad,
        Opcode::Caller,
        Opcode::CallValue,
        Opcode::Timestamp,
        Opcode::Number,
        Opcode::Call,
        Opcode::CallValueCall,
        Opcode::StaticCall,
        Opcode::DelegateCall,
        Opcode::Jump,
        Opcode::JumpI,
        Opcode::Return,
        Opcode::Revert,
        Opcode::Stop,
        Opcode::Phi,
        Opcode::InternalCall,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Const => "CONST",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Div => "DIV",
            Opcode::Lt => "LT",
            Opcode::Gt => "GT",
            Opcode::Eq => "EQ",
            Opcode::IsZero => "ISZERO",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Sha3 => "SHA3",
            Opcode::Sload => "SLOAD",
            Opcode::Sstore => "SSTORE",
            Opcode::Mload => "MLOAD",
            Opcode::Mstore => "MSTORE",
            Opcode::CallDataLoad => "CALLDATALOAD",
            Opcode::Caller => "CALLER",
            Opcode::CallValue => "CALLVALUE",
            Opcode::Timestamp => "TIMESTAMP",
            Opcode::Number => "NUMBER",
            Opcode::Call => "CALL",
            Opcode::CallValueCall => "CALLVALUECALL",
            Opcode::StaticCall => "STATICCALL",
            Opcode::DelegateCall => "DELEGATECALL",
            Opcode::Jump => "JUMP",
            Opcode::JumpI => "JUMPI",
            Opcode::Return => "RETURN",
            Opcode::Revert => "REVERT",
            Opcode::Stop => "STOP",
            Opcode::Phi => "PHI",
            Opcode::InternalCall => "INTERNALCALL",
        }
    }

    pub fn is_terminator(self) -> bool {
        matches!(
            self,
            Opcode::Jump | Opcode::JumpI | Opcode::Return | Opcode::Revert | Opcode::Stop
        )
    }

    /// CALL, CALLVALUECALL, STATICCALL or DELEGATECALL.
    pub fn is_contract_call(self) -> bool {
        matches!(
            self,
            Opcode::Call | Opcode::CallValueCall | Opcode::StaticCall | Opcode::DelegateCall
        )
    }

    pub fn is_call(self) -> bool {
        self.is_contract_call() || self == Opcode::InternalCall
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, Opcode::Lt | Opcode::Gt | Opcode::Eq | Opcode::IsZero)
    }

    pub fn is_overflowable(self) -> bool {
        matches!(self, Opcode::Add | Opcode::Sub | Opcode::Mul)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Opcode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == s).ok_or(())
    }
}

/// Value name `vN`, scoped to one function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct ValueId(pub u32);

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Block label `bN`, scoped to one function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockLabel(pub u32);

impl fmt::Display for BlockLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

/// Instruction id, sequential within a function in canonical block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstrId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(ValueId),
    /// Function parameter by position.
    Param(u32),
    Lit(Word),
}

impl Operand {
    pub fn as_value(&self) -> Option<ValueId> {
        match self {
            Operand::Value(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateRef {
    /// Name of a state variable of the enclosing contract.
    pub var: String,
    /// Mapping key or array index, if any.
    pub key: Option<Operand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Callee {
    /// `Contract.function` named in the IR.
    Named { contract: String, function: String },
    /// Address computed at runtime, optionally with a known function name.
    Dynamic {
        address: Operand,
        function: Option<String>,
    },
    /// Function of the same contract.
    Internal { function: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub id: InstrId,
    pub opcode: Opcode,
    pub result: Option<ValueId>,
    pub operands: Vec<Operand>,
    pub state_ref: Option<StateRef>,
    pub callee: Option<Callee>,
    /// Jump targets: one for JUMP, taken then fallthrough for JUMPI.
    pub targets: Vec<BlockLabel>,
}

impl Instruction {
    pub fn new(opcode: Opcode) -> Self {
        Instruction {
            id: InstrId(0),
            opcode,
            result: None,
            operands: Vec::new(),
            state_ref: None,
            callee: None,
            targets: Vec::new(),
        }
    }

    pub fn with_result(mut self, v: ValueId) -> Self {
        self.result = Some(v);
        self
    }

    pub fn with_operands(mut self, ops: impl IntoIterator<Item = Operand>) -> Self {
        self.operands = ops.into_iter().collect();
        self
    }

    /// Every operand read by the instruction, including a state-ref key and a
    /// dynamic call address.
    pub fn uses(&self) -> impl Iterator<Item = &Operand> {
        let key = self.state_ref.as_ref().and_then(|s| s.key.as_ref());
        let addr = match &self.callee {
            Some(Callee::Dynamic { address, .. }) => Some(address),
            _ => None,
        };
        self.operands.iter().chain(key).chain(addr)
    }

    pub fn used_values(&self) -> impl Iterator<Item = ValueId> + '_ {
        self.uses().filter_map(Operand::as_value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub label: BlockLabel,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn terminator(&self) -> Option<&Instruction> {
        self.instructions.last().filter(|i| i.opcode.is_terminator())
    }

    /// Intra-function successors in target order.
    pub fn successors(&self) -> &[BlockLabel] {
        self.terminator().map(|t| t.targets.as_slice()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Visibility {
    Public,
    Private,
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Visibility::Public => "public",
            Visibility::Private => "private",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub visibility: Visibility,
    pub params: Vec<Param>,
    pub entry: BlockLabel,
    pub blocks: Vec<BasicBlock>,
}

impl Function {
    pub fn block(&self, label: BlockLabel) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn param_index(&self, name: &str) -> Option<u32> {
        self.params.iter().position(|p| p.name == name).map(|i| i as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateKind {
    Scalar,
    Mapping,
    Array,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateKind::Scalar => "scalar",
            StateKind::Mapping => "mapping",
            StateKind::Array => "array",
        })
    }
}

impl FromStr for StateKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "scalar" => Ok(StateKind::Scalar),
            "mapping" => Ok(StateKind::Mapping),
            "array" => Ok(StateKind::Array),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateVar {
    pub name: String,
    /// Storage slot; the base slot for mappings and arrays.
    pub slot: Word,
    pub kind: StateKind,
    pub label: Option<SemanticCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contract {
    pub name: String,
    pub address: Option<[u8; 20]>,
    pub state_vars: Vec<StateVar>,
    pub functions: Vec<Function>,
}

impl Contract {
    pub fn new(name: impl Into<String>) -> Self {
        Contract {
            name: name.into(),
            address: None,
            state_vars: Vec::new(),
            functions: Vec::new(),
        }
    }

    pub fn state_var(&self, name: &str) -> Option<&StateVar> {
        self.state_vars.iter().find(|s| s.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Universe {
    pub contracts: Vec<Contract>,
}

impl Universe {
    pub fn new(contracts: Vec<Contract>) -> Self {
        let mut u = Universe { contracts };
        u.canonicalize();
        u
    }

    pub fn contract(&self, name: &str) -> Option<&Contract> {
        self.contracts.iter().find(|c| c.name == name)
    }

    /// Sorts contracts, functions and blocks by name/label and renumbers
    /// instruction ids. State variables are ordered by (slot, kind).
    pub fn canonicalize(&mut self) {
        self.contracts.sort_by(|a, b| a.name.cmp(&b.name));
        for c in &mut self.contracts {
            c.state_vars
                .sort_by(|a, b| (a.slot, a.kind, &a.name).cmp(&(b.slot, b.kind, &b.name)));
            c.functions.sort_by(|a, b| a.name.cmp(&b.name));
            for f in &mut c.functions {
                f.blocks.sort_by_key(|b| b.label);
                let mut next = 0;
                for b in &mut f.blocks {
                    for i in &mut b.instructions {
                        i.id = InstrId(next);
                        next += 1;
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, other: Universe) {
        self.contracts.extend(other.contracts);
        self.canonicalize();
    }
}
