//! Seeded instance generators for the two benchmark families.

mod movset;
mod walrasian;

pub use movset::{gen_movset, movset_initial_point, MovSetData, MovingSetConstraint, DEFAULT_MARGIN};
pub use walrasian::{gen_walrasian, walras_initial_point, BudgetConstraints, WalrasianData};
