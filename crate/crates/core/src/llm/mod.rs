//! Prompt chains that turn conversation into robot programs.
//!
//! Each user-facing function runs a short chain of model calls. Every call
//! gets a six-segment system prompt, the conversation so far and the user's
//! message; the reply must use the XML tags of [`Tag`]. Replies that do not
//! parse or do not validate are sent back with a repair instruction a
//! bounded number of times.

mod chain;
mod preamble;
mod provider;
mod requirements;
mod scope;
mod tags;
pub mod templates;

pub use chain::{
    run_chain, ChainContext, ChainError, ChainOutcome, ChainRequest, ChainRun, ChainSettings,
    ChainSpec, ChainStep, FunctionKind, RepairRecord, SpecError, Speaker, Turn, UserTurn,
    DEBUG_START_PROMPT, SLOTS,
};
pub use preamble::{assemble_prompt, PromptError, PromptPreamble, SEGMENTS};
pub use provider::{
    ChatMessage, ChatRequest, ConfigError, LiveProvider, Provider, ProviderConfig, ProviderError,
    ProviderKind, Role, Script, ScriptEntry, ScriptError, ScriptMatch, ScriptedProvider,
    SCRIPT_SCHEMA,
};
pub use requirements::{RequirementError, RequirementList, RequirementState};
pub use scope::{check_coherence, check_region_isolation, selected_lines};
pub use tags::{
    detect_intent, intent_of, parse_tagged_output, parse_tagged_output_with, AmbiguousIntent,
    CodeBody, Intent, RepairNeeded, RepairReason, Segment, Tag, TaggedResponse,
};
