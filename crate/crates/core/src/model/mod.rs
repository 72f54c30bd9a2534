//! Function libraries, plants, exosystems and excitation signals.

mod exosystem;
mod library;
mod plant;
mod signal;

pub use exosystem::Exosystem;
pub use library::{FunctionLibrary, Term};
pub use plant::PlantModel;
pub use signal::{InputSignal, SineTerm};
