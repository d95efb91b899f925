//! Synthetic world and task generation: knowledge-form and instruction-form
//! examples, ICL prompts with label-shuffled counterfactuals, a pretraining
//! corpus, and continual task sequences.

pub mod corpus;
pub mod io;
pub mod prompt;
pub mod suite;
pub mod task;
pub mod world;

pub use corpus::{emit_pretrain_corpus, PretrainMix};
pub use io::{dump_examples, load_examples, DatasetRecord};
pub use prompt::{build_icl_prompt, render_knowledge, render_zero_shot, ICLPrompt};
pub use suite::{base_tasks, fresh_tasks, task_sequence, Benchmark};
pub use task::{make_examples, ExampleQuad, Split, TaskFamily, TaskSpec};
pub use world::{build_world, FactTable, TokenLayout, World, WorldSizes};
