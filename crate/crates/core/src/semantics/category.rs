use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Semantic role of a state variable.
///
/// The list is closed; anything outside it is rejected when parsing IR labels
/// or prediction files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SemanticCategory {
    AmountUint,
    TimeUint,
    PriceUint,
    SupplyUint,
    NameString,
    SymbolString,
    UriString,
    BalanceMapping,
    AllowanceMapping,
    PausedBool,
    EnableBool,
    NonreentrantBool,
    OwnerAddress,
    WalletAddress,
    Unknown,
}

impl SemanticCategory {
    pub const ALL: [SemanticCategory; 15] = [
        SemanticCategory::AmountUint,
        SemanticCategory::TimeUint,
        SemanticCategory::PriceUint,
        SemanticCategory::SupplyUint,
        SemanticCategory::NameString,
        SemanticCategory::SymbolString,
        SemanticCategory::UriString,
        SemanticCategory::BalanceMapping,
        SemanticCategory::AllowanceMapping,
        SemanticCategory::PausedBool,
        SemanticCategory::EnableBool,
        SemanticCategory::NonreentrantBool,
        SemanticCategory::OwnerAddress,
        SemanticCategory::WalletAddress,
        SemanticCategory::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticCategory::AmountUint => "AmountUint",
            SemanticCategory::TimeUint => "TimeUint",
            SemanticCategory::PriceUint => "PriceUint",
            SemanticCategory::SupplyUint => "SupplyUint",
            SemanticCategory::NameString => "NameString",
            SemanticCategory::SymbolString => "SymbolString",
            SemanticCategory::UriString => "UriString",
            SemanticCategory::BalanceMapping => "BalanceMapping",
            SemanticCategory::AllowanceMapping => "AllowanceMapping",
            SemanticCategory::PausedBool => "PausedBool",
            SemanticCategory::EnableBool => "EnableBool",
            SemanticCategory::NonreentrantBool => "NonreentrantBool",
            SemanticCategory::OwnerAddress => "OwnerAddress",
            SemanticCategory::WalletAddress => "WalletAddress",
            SemanticCategory::Unknown => "Unknown",
        }
    }

    /// One-line description of what the category denotes.
    pub fn description(self) -> &'static str {
        match self {
            SemanticCategory::AmountUint => "token or ether amounts",
            SemanticCategory::TimeUint => "timestamps and durations",
            SemanticCategory::PriceUint => "prices and rates",
            SemanticCategory::SupplyUint => "total or capped supply",
            SemanticCategory::NameString => "token or contract name",
            SemanticCategory::SymbolString => "token symbol",
            SemanticCategory::UriString => "resource URIs",
            SemanticCategory::BalanceMapping => "account balances",
            SemanticCategory::AllowanceMapping => "spending allowances",
            SemanticCategory::PausedBool => "pause switch",
            SemanticCategory::EnableBool => "feature switch",
            SemanticCategory::NonreentrantBool => "reentrancy lock",
            SemanticCategory::OwnerAddress => "privileged owner",
            SemanticCategory::WalletAddress => "fund-receiving wallet",
            SemanticCategory::Unknown => "no recognised role",
        }
    }
}

impl fmt::Display for SemanticCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown semantic category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for SemanticCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SemanticCategory::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}
