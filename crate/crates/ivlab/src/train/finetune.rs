//! Continual fine-tuning: method plugins (IncLoRA, EWC, LwF), optional
//! IV-guided training, and the full task-sequence driver.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::eval::{evaluate_set, EvalForm, EvalMode, EvalSpec};
use crate::iv::{
    ce_scan, collect_activations, extract_iv, select_heads, sweep_layers, CeProbMode,
    InstructionVector,
};
use crate::model::{Model, ParamNodes};
use crate::numerics::{AdamState, Graph};
use crate::tasks::task::fnv64;
use crate::tasks::{Benchmark, Split, TaskSpec, World};
use crate::train::log::{ContinualRunLog, EvalSetMeta};
use crate::train::losses::{
    build_batch_loss, build_ewc_penalty, build_ivg_intervened_loss, build_ivg_kl_loss,
    build_lwf_distill_loss, ewc_fisher, EwcState, TrainItem,
};
use crate::train::schedule::{s_value, ScheduleShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Fresh frozen adapter per task.
    IncLora,
    /// Single shared adapter plus a diagonal-Fisher quadratic penalty.
    Ewc,
    /// Fresh adapter per task plus distillation against the previous model.
    Lwf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub method: Method,
    /// Enable IV-guided training (progressive intervention + KL term).
    pub ivg: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_kl: f64,
    pub schedule: ScheduleShape,
    pub ewc_lambda: f64,
    pub lwf_temperature: f64,
    pub lwf_weight: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub n_train: usize,
    /// Post-training accuracy the task must reach on its own train split.
    pub min_train_acc: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            method: Method::IncLora,
            ivg: false,
            lr: 3e-3,
            epochs: 4,
            batch_size: 8,
            lambda_kl: 0.05,
            schedule: ScheduleShape::Linear,
            ewc_lambda: 50.0,
            lwf_temperature: 2.0,
            lwf_weight: 1.0,
            lora_rank: 8,
            lora_alpha: 16.0,
            n_train: 128,
            min_train_acc: 0.9,
            seed: 0,
        }
    }
}

/// State the continual methods carry between tasks.
#[derive(Clone, Debug, Default)]
pub struct MethodState {
    pub ewc: Option<EwcState>,
    pub lwf_prev: Option<Model>,
    pub tasks_done: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskTrainLog {
    pub task_id: String,
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    /// Residual layer the IV was injected at, when IVG was on.
    pub iv_layer: Option<usize>,
}

/// Fine-tune the model on one task, updating `state` for the next one.
/// When `cfg.ivg` is set, `iv` must carry the instruction vector and the
/// residual layer to inject it at.
pub fn finetune_task(
    model: &mut Model,
    world: &World,
    task: &TaskSpec,
    cfg: &FinetuneConfig,
    state: &mut MethodState,
    iv: Option<(&InstructionVector, usize)>,
) -> Result<TaskTrainLog> {
    if cfg.ivg && iv.is_none() {
        return Err(IvLabError::InvalidArgument(
            "ivg enabled but no instruction vector supplied".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.n_train == 0 {
        return Err(IvLabError::InvalidArgument(
            "batch_size and n_train must be >= 1".into(),
        ));
    }
    let adapter_seed = cfg.seed ^ (state.tasks_done as u64).wrapping_mul(0x9e37_79b9);
    match cfg.method {
        Method::IncLora | Method::Lwf => {
            model.freeze_all();
            model.add_adapter(
                &format!("task{}", state.tasks_done),
                cfg.lora_rank,
                cfg.lora_alpha,
                adapter_seed,
            );
        }
        Method::Ewc => {
            // One shared adapter, added before the first task and kept
            // trainable throughout the sequence.
            if state.tasks_done == 0 {
                model.freeze_all();
                model.add_adapter("shared", cfg.lora_rank, cfg.lora_alpha, adapter_seed);
            }
        }
    }

    let examples = crate::tasks::make_examples(world, task, cfg.n_train, Split::Train)?;
    let items: Vec<TrainItem> = examples
        .iter()
        .map(|q| TrainItem::from_quad(world, q))
        .collect();
    let n_batches = items.len().div_ceil(cfg.batch_size);
    let horizon = cfg.epochs * n_batches;

    let mut adam = AdamState::new(cfg.lr, 0.0);
    let mut losses = Vec::with_capacity(horizon);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf17e ^ (epoch as u64) << 8 ^ state.tasks_done as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            let mut g = Graph::new(model.precision);
            let mut leaves = ParamNodes::default();
            let mut loss;
            if cfg.ivg {
                let (ivec, layer) = iv.unwrap();
                let s = s_value(cfg.schedule, horizon, step);
                // s = 0 means the task branch is the plain zero-shot loss;
                // skipping the intervened build keeps it bit-identical to
                // the IVG-off path.
                loss = if s > 0.0 {
                    build_ivg_intervened_loss(&mut g, &mut leaves, model, &batch, ivec, layer, s)?
                } else {
                    build_batch_loss(&mut g, &mut leaves, model, &batch, None)?
                };
                if cfg.lambda_kl > 0.0 {
                    let kl = build_ivg_kl_loss(&mut g, &mut leaves, model, &batch, ivec, layer)?;
                    let scaled = g.scale(kl, cfg.lambda_kl);
                    loss = g.add(loss, scaled);
                }
            } else {
                loss = build_batch_loss(&mut g, &mut leaves, model, &batch, None)?;
            }
            match cfg.method {
                Method::Ewc => {
                    if let Some(ewc) = &state.ewc {
                        let pen =
                            build_ewc_penalty(&mut g, &mut leaves, model, ewc, cfg.ewc_lambda)?;
                        loss = g.add(loss, pen);
                    }
                }
                Method::Lwf => {
                    if let Some(prev) = &state.lwf_prev {
                        let distill = build_lwf_distill_loss(
                            &mut g,
                            &mut leaves,
                            model,
                            prev,
                            &batch,
                            cfg.lwf_temperature,
                        )?;
                        let scaled = g.scale(distill, cfg.lwf_weight);
                        loss = g.add(loss, scaled);
                    }
                }
                Method::IncLora => {}
            }
            let value = g.scalar_value(loss)?;
            if !value.is_finite() {
                return Err(IvLabError::Divergence(format!(
                    "loss {value} on task {} step {step}",
                    task.id
                )));
            }
            model.params.zero_grad();
            g.backward(loss, &mut model.params)?;
            adam.step(&mut model.params)?;
            losses.push(value);
            step += 1;
        }
    }
    model.params.zero_grad();

    let train_accuracy = train_split_accuracy(model, world, task, cfg.n_train.min(32))?;
    if train_accuracy < cfg.min_train_acc {
        return Err(IvLabError::GateFailure {
            task: task.id.clone(),
            detail: format!(
                "train accuracy {train_accuracy:.3} below threshold {:.3}",
                cfg.min_train_acc
            ),
        });
    }

    match cfg.method {
        Method::Ewc => {
            let fisher_items: Vec<TrainItem> =
                items.iter().take(32).cloned().collect();
            let fisher = ewc_fisher(model, &fisher_items)?;
            let snapshot = model
                .params
                .iter()
                .filter(|(_, p)| p.trainable)
                .map(|(_, p)| (p.name.clone(), p.value.data().to_vec()))
                .collect();
            let merged = match state.ewc.take() {
                // Fisher information accumulates across tasks; the snapshot
                // always tracks the latest converged parameters.
                Some(mut prev) => {
                    for (name, f) in fisher {
                        let slot = prev.fisher.entry(name).or_insert_with(|| vec![0.0; f.len()]);
                        for (a, b) in slot.iter_mut().zip(f) {
                            *a += b;
                        }
                    }
                    prev.snapshot = snapshot;
                    prev
                }
                None => EwcState { fisher, snapshot },
            };
            state.ewc = Some(merged);
        }
        Method::Lwf => state.lwf_prev = Some(model.clone()),
        Method::IncLora => {}
    }
    state.tasks_done += 1;

    Ok(TaskTrainLog {
        task_id: task.id.clone(),
        losses,
        train_accuracy,
        iv_layer: iv.map(|(_, l)| l),
    })
}

/// Zero-shot instruction-form accuracy on the task's own train split.
fn train_split_accuracy(
    model: &Model,
    world: &World,
    task: &TaskSpec,
    n: usize,
) -> Result<f64> {
    let examples = crate::tasks::make_examples(world, task, n, Split::Train)?;
    let hits = crate::par::ordered_map(&examples, |q| {
        let prompt = crate::tasks::render_zero_shot(world, q);
        let candidates = task.candidates(world, q);
        let (best, _) = crate::eval::rank_classify(model, &prompt, &candidates, None)?;
        Ok::<bool, IvLabError>(candidates[best] == q.yc)
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// How run_sequence samples its per-checkpoint evaluations.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_examples: usize,
    pub icl_shots: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_examples: 24,
            icl_shots: 10,
            seed: 0,
        }
    }
}

/// Per-task IV extraction knobs used when `FinetuneConfig::ivg` is on.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvExtractConfig {
    pub n_shots: usize,
    pub n_activation_samples: usize,
    pub n_counterfactuals: usize,
    pub top_k: usize,
    pub sweep_examples: usize,
    pub filter_correct: bool,
}

impl Default for IvExtractConfig {
    fn default() -> Self {
        IvExtractConfig {
            n_shots: 10,
            n_activation_samples: 16,
            n_counterfactuals: 8,
            top_k: 10,
            sweep_examples: 16,
            filter_correct: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutput {
    pub log: ContinualRunLog,
    pub task_logs: Vec<TaskTrainLog>,
    pub ivs: Vec<Option<InstructionVector>>,
}

/// Run the full continual sequence: evaluate the pretrained checkpoint,
/// then fine-tune each task in order, re-evaluating every set after each.
pub fn run_sequence(
    model: &mut Model,
    world: &World,
    benchmark: &Benchmark,
    cfg: &FinetuneConfig,
    ecfg: &EvalConfig,
    ivcfg: &IvExtractConfig,
) -> Result<RunOutput> {
    let mut eval_sets: Vec<(EvalSetMeta, TaskSpec)> = Vec::new();
    for t in &benchmark.held_out {
        eval_sets.push((
            EvalSetMeta {
                id: t.id.clone(),
                held_out: true,
                trained_at: None,
            },
            t.clone(),
        ));
    }
    for (j, t) in benchmark.continual.iter().enumerate() {
        eval_sets.push((
            EvalSetMeta {
                id: t.id.clone(),
                held_out: false,
                trained_at: Some(j),
            },
            t.clone(),
        ));
    }

    let n_sets = eval_sets.len();
    let mut zero_shot = vec![Vec::new(); n_sets];
    let mut icl = vec![Vec::new(); n_sets];
    let mut knowledge = vec![Vec::new(); n_sets];
    let mut push_column = |model: &Model| -> Result<()> {
        for (i, (meta, task)) in eval_sets.iter().enumerate() {
            // Fixed per-set seeds keep the example draw identical across
            // checkpoints, so columns are paired measurements.
            let base = ecfg.seed ^ fnv64(meta.id.bytes());
            let mk = |mode, form, salt: u64| EvalSpec {
                set_id: meta.id.clone(),
                task: task.clone(),
                mode,
                form,
                n_examples: ecfg.n_examples,
                seed: base.wrapping_add(salt),
            };
            zero_shot[i].push(
                evaluate_set(model, world, &mk(EvalMode::ZeroShot, EvalForm::Instruction, 1), None)?
                    .accuracy,
            );
            icl[i].push(
                evaluate_set(
                    model,
                    world,
                    &mk(
                        EvalMode::Icl {
                            n_shots: ecfg.icl_shots,
                        },
                        EvalForm::Instruction,
                        2,
                    ),
                    None,
                )?
                .accuracy,
            );
            knowledge[i].push(
                evaluate_set(model, world, &mk(EvalMode::ZeroShot, EvalForm::Knowledge, 3), None)?
                    .accuracy,
            );
        }
        Ok(())
    };

    push_column(model)?;

    let mut state = MethodState::default();
    let mut task_logs = Vec::new();
    let mut ivs = Vec::new();
    for (j, task) in benchmark.continual.iter().enumerate() {
        let extraction = if cfg.ivg {
            let seed_j = cfg.seed ^ 0x1ce0 ^ (j as u64) << 16;
            let tca = collect_activations(
                model,
                world,
                task,
                ivcfg.n_shots,
                ivcfg.n_activation_samples,
                ivcfg.filter_correct,
                seed_j,
            )?;
            let map = ce_scan(
                model,
                world,
                task,
                &tca,
                ivcfg.n_counterfactuals,
                CeProbMode::FullVocab,
                seed_j.wrapping_add(1),
            )?;
            let heads = model.config.n_layers * model.config.n_heads;
            let set = select_heads(std::slice::from_ref(&map), ivcfg.top_k.min(heads))?;
            let ivec = extract_iv(&tca, &set)?;
            let sweep = sweep_layers(
                model,
                world,
                &ivec,
                task,
                ivcfg.sweep_examples,
                seed_j.wrapping_add(2),
            )?;
            Some((ivec, sweep.best_layer))
        } else {
            None
        };
        let iv_arg = extraction.as_ref().map(|(v, l)| (v, *l));
        task_logs.push(finetune_task(model, world, task, cfg, &mut state, iv_arg)?);
        ivs.push(extraction.map(|(v, _)| v));
        let _ = j;
        push_column(model)?;
    }

    let config_hash = format!("{:016x}", fnv64(serde_json::to_vec(cfg)?));
    let log = ContinualRunLog {
        task_order: benchmark.continual.iter().map(|t| t.id.clone()).collect(),
        eval_sets: eval_sets.into_iter().map(|(m, _)| m).collect(),
        zero_shot,
        icl,
        knowledge,
        loss_curves: task_logs.iter().map(|l| l.losses.clone()).collect(),
        seed: cfg.seed,
        config_hash,
    };
    log.validate()?;
    Ok(RunOutput {
        log,
        task_logs,
        ivs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tasks::{build_world, task_sequence, WorldSizes};

    fn tiny_model(vocab: usize) -> Model {
        Model::new(ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_head: 8,
            d_mlp: 32,
            vocab_size: vocab,
            max_context: 192,
            seed: 71,
            ..Default::default()
        })
        .unwrap()
    }

    fn smoke_cfg(method: Method) -> FinetuneConfig {
        FinetuneConfig {
            method,
            epochs: 1,
            batch_size: 8,
            n_train: 16,
            min_train_acc: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn inclora_keeps_the_base_and_earlier_adapters_frozen() {
        let w = build_world(9, &WorldSizes::default()).unwrap();
        let bench = task_sequence("toy2", &w, 0).unwrap();
        let mut m = tiny_model(w.layout.vocab_size);
        let base_before: Vec<(String, Vec<f64>)> = m
            .params
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.data().to_vec()))
            .collect();
        let cfg = smoke_cfg(Method::IncLora);
        let mut state = MethodState::default();
        finetune_task(&mut m, &w, &bench.continual[0], &cfg, &mut state, None).unwrap();
        let after_first: Vec<(String, Vec<f64>)> = m
            .params
            .iter()
            .filter(|(_, p)| p.name.starts_with("ad0."))
            .map(|(_, p)| (p.name.clone(), p.value.data().to_vec()))
            .collect();
        finetune_task(&mut m, &w, &bench.continual[1], &cfg, &mut state, None).unwrap();
        // Base parameters and the first adapter must be untouched by task 2.
        for (name, vals) in base_before.into_iter().chain(after_first) {
            let id = m.params.id(&name).unwrap();
            assert_eq!(m.params.get(id).value.data(), &vals[..], "{name} moved");
        }
        assert_eq!(state.tasks_done, 2);
    }

    #[test]
    fn ewc_uses_one_shared_adapter_and_accumulates_fisher() {
        let w = build_world(9, &WorldSizes::default()).unwrap();
        let bench = task_sequence("toy2", &w, 0).unwrap();
        let mut m = tiny_model(w.layout.vocab_size);
        let cfg = smoke_cfg(Method::Ewc);
        let mut state = MethodState::default();
        finetune_task(&mut m, &w, &bench.continual[0], &cfg, &mut state, None).unwrap();
        assert_eq!(m.adapters.len(), 1);
        let f1: f64 = state.ewc.as_ref().unwrap().fisher.values().flatten().sum();
        finetune_task(&mut m, &w, &bench.continual[1], &cfg, &mut state, None).unwrap();
        assert_eq!(m.adapters.len(), 1, "EWC must not add a second adapter");
        let f2: f64 = state.ewc.as_ref().unwrap().fisher.values().flatten().sum();
        assert!(f2 >= f1);
    }

    #[test]
    fn lwf_records_the_previous_model() {
        let w = build_world(9, &WorldSizes::default()).unwrap();
        let bench = task_sequence("toy2", &w, 0).unwrap();
        let mut m = tiny_model(w.layout.vocab_size);
        let cfg = smoke_cfg(Method::Lwf);
        let mut state = MethodState::default();
        finetune_task(&mut m, &w, &bench.continual[0], &cfg, &mut state, None).unwrap();
        let prev_fp = state.lwf_prev.as_ref().unwrap().fingerprint();
        assert_eq!(prev_fp, m.fingerprint());
        finetune_task(&mut m, &w, &bench.continual[1], &cfg, &mut state, None).unwrap();
        assert_ne!(state.lwf_prev.as_ref().unwrap().fingerprint(), prev_fp);
    }

    #[test]
    fn gate_failure_when_threshold_is_unreachable() {
        let w = build_world(9, &WorldSizes::default()).unwrap();
        let bench = task_sequence("toy2", &w, 0).unwrap();
        let mut m = tiny_model(w.layout.vocab_size);
        let cfg = FinetuneConfig {
            min_train_acc: 1.01,
            ..smoke_cfg(Method::IncLora)
        };
        let mut state = MethodState::default();
        let err = finetune_task(&mut m, &w, &bench.continual[0], &cfg, &mut state, None);
        assert!(matches!(err, Err(IvLabError::GateFailure { .. })));
    }

    #[test]
    fn ivg_requires_an_instruction_vector() {
        let w = build_world(9, &WorldSizes::default()).unwrap();
        let bench = task_sequence("toy2", &w, 0).unwrap();
        let mut m = tiny_model(w.layout.vocab_size);
        let cfg = FinetuneConfig {
            ivg: true,
            ..smoke_cfg(Method::IncLora)
        };
        let mut state = MethodState::default();
        let err = finetune_task(&mut m, &w, &bench.continual[0], &cfg, &mut state, None);
        assert!(matches!(err, Err(IvLabError::InvalidArgument(_))));
    }

    #[test]
    fn run_sequence_shapes_and_determinism() {
        let w = build_world(9, &WorldSizes::default()).unwrap();
        let bench = task_sequence("toy2", &w, 0).unwrap();
        let cfg = smoke_cfg(Method::IncLora);
        let ecfg = EvalConfig {
            n_examples: 6,
            icl_shots: 4,
            seed: 3,
        };
        let ivcfg = IvExtractConfig::default();
        let mut a = tiny_model(w.layout.vocab_size);
        let mut b = a.clone();
        let ra = run_sequence(&mut a, &w, &bench, &cfg, &ecfg, &ivcfg).unwrap();
        let rb = run_sequence(&mut b, &w, &bench, &cfg, &ecfg, &ivcfg).unwrap();
        assert_eq!(ra.log.zero_shot, rb.log.zero_shot);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(ra.log.n_checkpoints(), 3);
        // 7 held-out base tasks + the 2 continual tasks
        assert_eq!(ra.log.eval_sets.len(), 9);
        assert_eq!(ra.log.zero_shot[0].len(), 3);
        assert!(ra.ivs.iter().all(|v| v.is_none()));
    }
}
