//! Separability of [MASK] representations, nearest-word projection of
//! label slots, and CSV export of captured states.

mod capture;
mod export;
mod neighbors;
mod rd;

pub use capture::{mask_states, CaptureObserver, DEFAULT_CAPTURE_STEPS};
pub use export::{export_states_csv, read_states_csv, states_to_csv};
pub use neighbors::{nearest_labels, Neighbor, NeighborReport, SlotNeighbors};
pub use rd::{rd_ratio, LabeledStates};
