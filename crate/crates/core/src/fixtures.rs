//! Built-in MDP instances.

use crate::mdp::{soft_value_iteration, PolicyTable, TabularMdp};

/// JSON text of the shipped two-corridor MDP.
pub const TWO_CORRIDOR_JSON: &str = include_str!("../../../fixtures/two_corridor.json");

/// Temperature of the soft-optimal expert on the two-corridor MDP.
pub const TWO_CORRIDOR_EXPERT_TEMPERATURE: f64 = 0.05;

/// Five states, two actions. From the start state the agent picks a corridor;
/// the left corridor ends in the high-reward state, the right one in a
/// low-reward state. Both ends reset to the start.
pub fn two_corridor() -> TabularMdp {
    TabularMdp::from_json_str(TWO_CORRIDOR_JSON).expect("shipped fixture is valid")
}

pub fn two_corridor_expert() -> PolicyTable {
    soft_value_iteration(&two_corridor(), TWO_CORRIDOR_EXPERT_TEMPERATURE).expect("positive temperature")
}

/// Three states: the start state branches to a state where the expert is
/// uniform or one where it is nearly deterministic, so expected future
/// entropy depends on the first action.
pub fn three_state_entropy() -> TabularMdp {
    TabularMdp::new(
        vec![
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        ],
        vec![1.0, 0.0, 0.0],
        0.9,
        vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
    )
    .expect("valid fixture")
}

pub fn three_state_entropy_expert() -> PolicyTable {
    PolicyTable::new(vec![vec![0.7, 0.3], vec![0.5, 0.5], vec![0.95, 0.05]]).expect("valid fixture")
}

/// Resolves a built-in fixture by name.
pub fn builtin(name: &str) -> Option<(TabularMdp, PolicyTable)> {
    match name {
        "two_corridor" => Some((two_corridor(), two_corridor_expert())),
        "three_state_entropy" => Some((three_state_entropy(), three_state_entropy_expert())),
        _ => None,
    }
}
