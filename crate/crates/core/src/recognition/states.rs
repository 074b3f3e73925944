use serde::{Deserialize, Serialize};

use crate::action::BasicAction;

/// One part of one basic action: the unit the decoder labels each key frame with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub action: BasicAction,
    pub part: usize,
}

impl State {
    pub fn is_last(&self) -> bool {
        self.part + 1 == self.action.part_count()
    }
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.part{}", self.action, self.part + 1)
    }
}

/// All parts of all actions, in fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    states: Vec<State>,
}

impl Default for StateSpace {
    fn default() -> Self {
        Self::new(&BasicAction::ALL)
    }
}

impl StateSpace {
    pub fn new(actions: &[BasicAction]) -> Self {
        let states = actions
            .iter()
            .flat_map(|&action| (0..action.part_count()).map(move |part| State { action, part }))
            .collect();
        Self { states }
    }

    /// Sum of part counts over actions.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, index: usize) -> State {
        self.states[index]
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn index_of(&self, state: State) -> Option<usize> {
        self.states.iter().position(|s| *s == state)
    }
}

/// Transition reward between consecutive key-frame labels.
///
/// `+1` for the next part of the same action, `0` for leaving an action
/// from its last part into a different action, `-1` otherwise.
pub fn pairwise(prev: State, next: State) -> i8 {
    if prev.action == next.action && next.part == prev.part + 1 {
        1
    } else if prev.action != next.action && prev.is_last() {
        0
    } else {
        -1
    }
}

/// Reward for starting the sequence in `state`.
pub fn initial(state: State) -> i8 {
    if state.part == 0 {
        0
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BasicAction::*;

    fn s(action: BasicAction, part: usize) -> State {
        State { action, part }
    }

    #[test]
    fn ten_states() {
        assert_eq!(StateSpace::default().len(), 10);
    }

    #[test]
    fn pairwise_cases() {
        assert_eq!(pairwise(s(LeftClick, 0), s(LeftClick, 1)), 1);
        assert_eq!(pairwise(s(LeftClick, 1), s(RightClick, 0)), 0);
        assert_eq!(pairwise(s(DoubleClick, 0), s(LeftClick, 0)), -1);
        // leaving an action for the same action is not rewarded
        assert_eq!(pairwise(s(LeftClick, 1), s(LeftClick, 0)), -1);
        assert_eq!(pairwise(s(DoubleClick, 2), s(DoubleClick, 1)), -1);
    }
}
