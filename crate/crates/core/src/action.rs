use serde::{Deserialize, Serialize};

/// The mouse actions the recognizer distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicAction {
    LeftClick,
    RightClick,
    DoubleClick,
    ClickDrag,
}

impl BasicAction {
    pub const ALL: [BasicAction; 4] = [
        BasicAction::LeftClick,
        BasicAction::RightClick,
        BasicAction::DoubleClick,
        BasicAction::ClickDrag,
    ];

    /// Number of key frames (button transitions) the action spans.
    pub fn part_count(self) -> usize {
        match self {
            BasicAction::DoubleClick => 4,
            _ => 2,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn verb(self) -> &'static str {
        match self {
            BasicAction::LeftClick => "Click",
            BasicAction::RightClick => "RightClick",
            BasicAction::DoubleClick => "DoubleClick",
            BasicAction::ClickDrag => "DragTo",
        }
    }
}

impl std::fmt::Display for BasicAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BasicAction::LeftClick => "LeftClick",
            BasicAction::RightClick => "RightClick",
            BasicAction::DoubleClick => "DoubleClick",
            BasicAction::ClickDrag => "ClickDrag",
        };
        f.write_str(s)
    }
}
