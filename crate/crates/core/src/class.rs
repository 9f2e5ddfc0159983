use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Motion label of an obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleClass {
    Static,
    Dynamic,
    #[default]
    Unknown,
}

impl ObstacleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ObstacleClass::Static => "static",
            ObstacleClass::Dynamic => "dynamic",
            ObstacleClass::Unknown => "unknown",
        }
    }

    pub fn is_dynamic(self) -> bool {
        self == ObstacleClass::Dynamic
    }
}

impl fmt::Display for ObstacleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObstacleClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ObstacleClass::Static),
            "dynamic" => Ok(ObstacleClass::Dynamic),
            "unknown" => Ok(ObstacleClass::Unknown),
            other => Err(format!("unknown obstacle class `{other}`")),
        }
    }
}
