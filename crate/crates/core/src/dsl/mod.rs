//! CocoScript: the robot-task language.
//!
//! ```text
//! userRequest: guide me
//! say: Welcome!
//! ask: Which area would you like to visit?
//! when robot:
//!   goto: Exhibition Area
//! otherwise:
//!   say: Let me take you back.
//! end
//! goto: Reception Area
//! ```

mod ast;
mod emit;
mod parser;
mod validate;

pub use ast::{fold, Arm, AstPath, Block, Branch, Command, RobotProgram, Step, DEFAULT_ARM};
pub use emit::{emit_program, emit_with_spans, StepSpans};
pub use parser::{canonicalize, parse_command, parse_program};
pub use validate::{check_structure, validate_program, walk, WorldCatalog};
