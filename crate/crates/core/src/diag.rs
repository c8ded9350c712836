use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Frontend,
    Ir,
    Semantics,
    Graphs,
    Detect,
    Taint,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Frontend => "frontend",
            Stage::Ir => "ir",
            Stage::Semantics => "semantics",
            Stage::Graphs => "graphs",
            Stage::Detect => "detect",
            Stage::Taint => "taint",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Info,
    Warning,
    Error,
}

/// A non-fatal message attached to the report.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Diagnostic {
    pub stage: Stage,
    pub level: Level,
    pub message: String,
}

impl Diagnostic {
    pub fn info(stage: Stage, message: impl Into<String>) -> Self {
        Diagnostic {
            stage,
            level: Level::Info,
            message: message.into(),
        }
    }

    pub fn warning(stage: Stage, message: impl Into<String>) -> Self {
        Diagnostic {
            stage,
            level: Level::Warning,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}/{:?}] {}", self.stage, self.level, self.message)
    }
}
