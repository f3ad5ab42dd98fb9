//! Identifier newtypes and the binary bias label shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_newtype!(
    /// Identifier of a news sentence.
    SentenceId
);
id_newtype!(
    /// Identifier of a news outlet.
    OutletId
);
id_newtype!(
    /// Identifier of an annotator (crowdworker, expert or game player).
    AnnotatorId
);
id_newtype!(
    /// Identifier of a game session.
    SessionId
);

/// Sentence-level bias class. `Neutral` is class 0, `Biased` is class 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Neutral,
    Biased,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Neutral, Label::Biased];

    pub fn as_binary(self) -> u8 {
        match self {
            Label::Neutral => 0,
            Label::Biased => 1,
        }
    }

    pub fn from_binary(y: u8) -> Option<Label> {
        match y {
            0 => Some(Label::Neutral),
            1 => Some(Label::Biased),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Neutral => "neutral",
            Label::Biased => "biased",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}` (expected `biased` or `neutral`)")]
pub struct ParseLabelError(pub String);

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "neutral" => Ok(Label::Neutral),
            "biased" => Ok(Label::Biased),
            other => Err(ParseLabelError(other.to_owned())),
        }
    }
}
