//! Pretraining and continual fine-tuning with method plugins and IV-guided
//! training.

pub mod finetune;
pub mod log;
pub mod losses;
pub mod pretrain;
pub mod schedule;

pub use finetune::{
    finetune_task, run_sequence, EvalConfig, FinetuneConfig, IvExtractConfig, Method, MethodState,
    RunOutput, TaskTrainLog,
};
pub use log::{ContinualRunLog, EvalSetMeta};
pub use pretrain::pretrain;
pub use losses::{
    build_batch_loss, build_ewc_penalty, build_ivg_intervened_loss, build_ivg_kl_loss,
    build_lwf_distill_loss, ewc_fisher, ivg_intervened_loss, ivg_kl_loss, lwf_distill_loss,
    EwcState, TrainItem,
};
pub use schedule::{s_value, ScheduleShape};
