use serde::{Deserialize, Serialize};

use super::Stage;

/// State-changing session operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Describe,
    EditDescription,
    AdvanceImages,
    AppendFeedback,
    FlagImages,
    SelectImage,
    AdvanceMesh,
    SelectMesh,
    PostProcess,
    Export,
}

impl Operation {
    pub const ALL: [Operation; 10] = [
        Self::Describe,
        Self::EditDescription,
        Self::AdvanceImages,
        Self::AppendFeedback,
        Self::FlagImages,
        Self::SelectImage,
        Self::AdvanceMesh,
        Self::SelectMesh,
        Self::PostProcess,
        Self::Export,
    ];

    /// Stages from which the operation may run.
    pub fn allowed_from(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Self::Describe => &[Created],
            Self::EditDescription => {
                &[Described, ImagesGenerated, ImageSelected, MeshGenerated, MeshSelected, PostProcessed, Exported]
            }
            Self::AdvanceImages => &[Described, ImagesGenerated, ImageSelected],
            Self::AppendFeedback | Self::FlagImages => &[ImagesGenerated, ImageSelected],
            Self::SelectImage => &[ImagesGenerated, ImageSelected],
            Self::AdvanceMesh => &[ImageSelected],
            Self::SelectMesh => &[MeshGenerated, MeshSelected],
            Self::PostProcess => &[MeshSelected],
            Self::Export => &[PostProcessed],
        }
    }

    pub fn allowed(self, stage: Stage) -> bool {
        self.allowed_from().contains(&stage)
    }

    /// Stage after success; `None` leaves it unchanged.
    pub fn target(self) -> Option<Stage> {
        Some(match self {
            Self::Describe | Self::EditDescription => Stage::Described,
            Self::AdvanceImages | Self::AppendFeedback => Stage::ImagesGenerated,
            Self::FlagImages => return None,
            Self::SelectImage => Stage::ImageSelected,
            Self::AdvanceMesh => Stage::MeshGenerated,
            Self::SelectMesh => Stage::MeshSelected,
            Self::PostProcess => Stage::PostProcessed,
            Self::Export => Stage::Exported,
        })
    }
}
