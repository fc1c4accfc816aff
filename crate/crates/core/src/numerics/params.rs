//! Parameter grouping for the alternating update scheme.

use serde::{Deserialize, Serialize};

/// The four disjoint parameter groups. Every learnable tensor belongs to
/// exactly one; the trainer's sub-steps update fixed subsets (the
/// discriminator step touches only [`GroupName::Discriminator`], the
/// adversarial encoder step only the two encoder groups).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    ContentEncoder,
    SummaryEncoder,
    Decoder,
    Discriminator,
}

impl GroupName {
    pub const ALL: [GroupName; 4] = [
        GroupName::ContentEncoder,
        GroupName::SummaryEncoder,
        GroupName::Decoder,
        GroupName::Discriminator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupName::ContentEncoder => "content_encoder",
            GroupName::SummaryEncoder => "summary_encoder",
            GroupName::Decoder => "decoder",
            GroupName::Discriminator => "discriminator",
        }
    }
}

impl std::fmt::Display for GroupName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
