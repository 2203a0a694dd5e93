pub mod cancel;
pub mod diagnostic;
pub mod dsl;
pub mod flowchart;
pub mod llm;
pub mod session;
pub mod sim;

pub use cancel::CancelToken;
pub use diagnostic::{Code, Diagnostic, Diagnostics, Severity};
