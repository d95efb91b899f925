//! One function per subcommand. Each writes a self-describing run directory;
//! every artifact embeds the config hash and the run seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::config::RunConfig;
use crate::error::{IvLabError, Result};
use crate::eval::{evaluate_set, knowledge_vs_instruction_curves, summarize, EvalForm, EvalMode, EvalSpec, MetricsSummary};
use crate::iv::{ce_scan, collect_activations, extract_iv, select_heads, sweep_layers, CeProbMode};
use crate::model::{checkpoint, Model, RngState};
use crate::numerics::Precision;
use crate::tasks::{
    base_tasks, emit_pretrain_corpus, fresh_tasks, task::fnv64, task_sequence, Benchmark, TaskSpec,
    World,
};
use crate::train::{pretrain, run_sequence, Method};

/// Everything a command needs besides its own section of the config.
pub struct Ctx {
    pub cfg: RunConfig,
    pub cfg_hash: String,
    pub seed: u64,
    pub out: PathBuf,
    pub precision: Precision,
}

/// Provenance wrapper written around every JSON artifact.
#[derive(Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    pub payload: T,
}

impl Ctx {
    fn world(&self) -> Result<World> {
        crate::tasks::build_world(self.cfg.world.seed, &self.cfg.world.sizes)
    }

    fn benchmark(&self, world: &World) -> Result<Benchmark> {
        task_sequence(&self.cfg.benchmark, world, self.seed)
    }

    fn stamp_json<T: Serialize>(&self, name: &str, payload: &T) -> Result<()> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let wrapped = Stamped {
            config_hash: self.cfg_hash.clone(),
            seed: self.seed,
            payload,
        };
        std::fs::write(path, serde_json::to_vec_pretty(&wrapped)?)?;
        Ok(())
    }

    /// CSV with a provenance comment line before the header.
    fn stamp_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = format!(
            "# config_hash={} seed={}\n{header}\n",
            self.cfg_hash, self.seed
        );
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    fn checkpoint_meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("config_hash".to_string(), self.cfg_hash.clone()),
            ("seed".to_string(), self.seed.to_string()),
        ])
    }

    fn load_checkpoint(&self) -> Result<Model> {
        let path = self.cfg.paths.checkpoint.as_ref().ok_or_else(|| {
            IvLabError::Config("paths.checkpoint is required for this command".into())
        })?;
        let (mut model, _) = checkpoint::load(path)?;
        model.precision = self.precision;
        Ok(model)
    }

    fn accuracy(
        &self,
        model: &Model,
        world: &World,
        task: &TaskSpec,
        mode: EvalMode,
        form: EvalForm,
    ) -> Result<f64> {
        let spec = EvalSpec {
            set_id: task.id.clone(),
            task: task.clone(),
            mode,
            form,
            n_examples: self.cfg.eval.n_examples,
            seed: self.seed ^ fnv64(task.id.bytes()),
        };
        Ok(evaluate_set(model, world, &spec, None)?.accuracy)
    }
}

fn all_tasks(world: &World) -> Vec<TaskSpec> {
    let mut v = base_tasks(world);
    v.extend(fresh_tasks(world));
    v
}

#[derive(Serialize)]
struct CorpusManifest {
    n_sequences: usize,
    max_seq_len: usize,
    mix: crate::tasks::PretrainMix,
    corpus_fingerprint: String,
}

pub fn cmd_pretrain(ctx: &Ctx) -> Result<()> {
    let world = ctx.world()?;
    let p = &ctx.cfg.pretrain;
    let corpus = emit_pretrain_corpus(&world, &p.mix, p.n_sequences, p.max_seq_len, ctx.seed)?;
    let fp = fnv64(corpus.iter().flatten().flat_map(|t| t.to_le_bytes()));
    ctx.stamp_json(
        "corpus_manifest.json",
        &CorpusManifest {
            n_sequences: p.n_sequences,
            max_seq_len: p.max_seq_len,
            mix: p.mix,
            corpus_fingerprint: format!("{fp:016x}"),
        },
    )?;

    let mut model = Model::new(ctx.cfg.model.clone())?;
    model.precision = ctx.precision;
    let losses = pretrain(&mut model, &corpus, p.steps, p.lr, p.batch_size, ctx.seed)?;
    let rng = RngState {
        seed: ctx.seed,
        word_pos: 0,
    };
    checkpoint::save_with_meta(
        &model,
        Some(&rng),
        &ctx.checkpoint_meta(),
        &ctx.out.join("checkpoint.bin"),
    )?;
    ctx.stamp_csv(
        "pretrain_loss.csv",
        "step,loss",
        &losses
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i},{l}"))
            .collect::<Vec<_>>(),
    )?;

    // Base-model competence table: zero-shot vs ICL on every toy task.
    let shots = ctx.cfg.eval.icl_shots;
    let mut rows = Vec::new();
    for task in all_tasks(&world) {
        let zero = ctx.accuracy(&model, &world, &task, EvalMode::ZeroShot, EvalForm::Instruction)?;
        let icl = ctx.accuracy(
            &model,
            &world,
            &task,
            EvalMode::Icl { n_shots: shots },
            EvalForm::Instruction,
        )?;
        rows.push(format!("{},{zero},{icl}", task.id));
    }
    ctx.stamp_csv("competence.csv", "task,zero_shot,icl", &rows)?;
    Ok(())
}

pub fn cmd_extract(ctx: &Ctx) -> Result<()> {
    let world = ctx.world()?;
    let model = ctx.load_checkpoint()?;
    let bench = ctx.benchmark(&world)?;
    let known = all_tasks(&world);
    let tasks: Vec<TaskSpec> = if ctx.cfg.extract.tasks.is_empty() {
        bench.continual.clone()
    } else {
        ctx.cfg
            .extract
            .tasks
            .iter()
            .map(|id| {
                known
                    .iter()
                    .find(|t| &t.id == id)
                    .cloned()
                    .ok_or_else(|| IvLabError::Config(format!("unknown task id {id}")))
            })
            .collect::<Result<_>>()?
    };

    let ecfg = &ctx.cfg.extract;
    for task in &tasks {
        let icl = ctx.accuracy(
            &model,
            &world,
            task,
            EvalMode::Icl {
                n_shots: ecfg.iv.n_shots,
            },
            EvalForm::Instruction,
        )?;
        if icl < ecfg.gate_min_icl {
            return Err(IvLabError::GateFailure {
                task: task.id.clone(),
                detail: format!(
                    "{}-shot accuracy {icl:.3} below extraction gate {:.3}",
                    ecfg.iv.n_shots, ecfg.gate_min_icl
                ),
            });
        }
        let seed = ctx.seed ^ fnv64(task.id.bytes());
        let tca = collect_activations(
            &model,
            &world,
            task,
            ecfg.iv.n_shots,
            ecfg.iv.n_activation_samples,
            ecfg.iv.filter_correct,
            seed,
        )?;
        let map = ce_scan(
            &model,
            &world,
            task,
            &tca,
            ecfg.iv.n_counterfactuals,
            CeProbMode::FullVocab,
            seed.wrapping_add(1),
        )?;
        let heads = model.config.n_layers * model.config.n_heads;
        let set = select_heads(std::slice::from_ref(&map), ecfg.iv.top_k.min(heads))?;
        let iv = extract_iv(&tca, &set)?;
        let sweep = sweep_layers(
            &model,
            &world,
            &iv,
            task,
            ecfg.iv.sweep_examples,
            seed.wrapping_add(2),
        )?;
        let id = &task.id;
        ctx.stamp_json(&format!("tca_{id}.json"), &tca)?;
        ctx.stamp_csv(
            &format!("ce_map_{id}.csv"),
            "layer,head,mean_ce,n",
            &map.ce
                .iter()
                .map(|(loc, ce)| format!("{},{},{ce},{}", loc.layer, loc.head, map.n_inputs))
                .collect::<Vec<_>>(),
        )?;
        ctx.stamp_json(&format!("head_set_{id}.json"), &set)?;
        ctx.stamp_json(&format!("iv_{id}.json"), &iv)?;
        ctx.stamp_json(&format!("sweep_{id}.json"), &sweep)?;
    }
    Ok(())
}

pub fn cmd_finetune(ctx: &Ctx) -> Result<()> {
    let world = ctx.world()?;
    let mut model = ctx.load_checkpoint()?;
    let bench = ctx.benchmark(&world)?;
    let mut fcfg = ctx.cfg.finetune.clone();
    fcfg.seed = ctx.seed;
    let mut run = run_sequence(
        &mut model,
        &world,
        &bench,
        &fcfg,
        &ctx.cfg.eval,
        &ctx.cfg.extract.iv,
    )?;
    run.log.config_hash = ctx.cfg_hash.clone();

    run.log.save_json(&ctx.out.join("run_log.json"))?;
    ctx.stamp_csv(
        "run_log.csv",
        "eval_set,after_task,mode,accuracy",
        &run_log_rows(&run.log),
    )?;
    let metrics = summarize(&run.log)?;
    ctx.stamp_json("metrics.json", &metrics)?;
    let curves = knowledge_vs_instruction_curves(&run.log)?;
    ctx.stamp_csv(
        "curves.csv",
        "stage,knowledge,instruction_zero,instruction_icl",
        &(0..curves.knowledge.len())
            .map(|j| {
                format!(
                    "{j},{},{},{}",
                    curves.knowledge[j], curves.instruction_zero[j], curves.instruction_icl[j]
                )
            })
            .collect::<Vec<_>>(),
    )?;
    ctx.stamp_json("task_logs.json", &run.task_logs)?;
    for (j, iv) in run.ivs.iter().enumerate() {
        if let Some(iv) = iv {
            ctx.stamp_json(&format!("iv_task{j}_{}.json", iv.task_id), iv)?;
        }
    }
    ctx.stamp_json("config_used.json", &ctx.cfg)?;
    checkpoint::save_with_meta(
        &model,
        None,
        &ctx.checkpoint_meta(),
        &ctx.out.join("final_checkpoint.bin"),
    )?;
    Ok(())
}

fn run_log_rows(log: &crate::train::ContinualRunLog) -> Vec<String> {
    let mut rows = Vec::new();
    for (mode, matrix) in [
        ("zero", &log.zero_shot),
        ("icl", &log.icl),
        ("knowledge", &log.knowledge),
    ] {
        for (i, series) in matrix.iter().enumerate() {
            for (j, acc) in series.iter().enumerate() {
                rows.push(format!("{},{j},{mode},{acc}", log.eval_sets[i].id));
            }
        }
    }
    rows
}

pub fn cmd_evaluate(ctx: &Ctx) -> Result<()> {
    let world = ctx.world()?;
    let model = ctx.load_checkpoint()?;
    let bench = ctx.benchmark(&world)?;
    let shots = ctx.cfg.eval.icl_shots;
    let mut rows = Vec::new();
    for task in bench.held_out.iter().chain(&bench.continual) {
        for (mode, form, label) in [
            (EvalMode::ZeroShot, EvalForm::Instruction, "zero"),
            (EvalMode::Icl { n_shots: shots }, EvalForm::Instruction, "icl"),
            (EvalMode::ZeroShot, EvalForm::Knowledge, "knowledge"),
        ] {
            let spec = EvalSpec {
                set_id: task.id.clone(),
                task: task.clone(),
                mode,
                form,
                n_examples: ctx.cfg.eval.n_examples,
                seed: ctx.seed ^ fnv64(task.id.bytes()),
            };
            let result = evaluate_set(&model, &world, &spec, None)?;
            rows.push(format!("{},{label},{}", task.id, result.accuracy));
            ctx.stamp_json(&format!("eval_{}_{label}.json", task.id), &result)?;
        }
    }
    ctx.stamp_csv("evaluate.csv", "eval_set,mode,accuracy", &rows)?;
    Ok(())
}

#[derive(Deserialize)]
struct UsedConfig {
    benchmark: String,
    finetune: MethodBits,
}

#[derive(Deserialize)]
struct MethodBits {
    method: Method,
    ivg: bool,
}

/// Join several finetune run directories into the method-level comparison
/// table, averaging HP/IP/OP over seeds.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(IvLabError::Config("report needs at least one run dir".into()));
    }
    let mut benchmark: Option<String> = None;
    // (method, ivg) -> per-seed (seed, config hash, summary)
    let mut groups: BTreeMap<(String, bool), Vec<(u64, String, MetricsSummary)>> = BTreeMap::new();
    for dir in runs {
        let cfg: Stamped<UsedConfig> = serde_json::from_slice(
            &std::fs::read(dir.join("config_used.json"))
                .map_err(|e| IvLabError::Config(format!("{}: {e}", dir.display())))?,
        )?;
        let metrics: Stamped<MetricsSummary> =
            serde_json::from_slice(&std::fs::read(dir.join("metrics.json"))?)?;
        match &benchmark {
            None => benchmark = Some(cfg.payload.benchmark.clone()),
            Some(b) if *b != cfg.payload.benchmark => {
                return Err(IvLabError::Config(format!(
                    "incompatible runs in one report: benchmark {b} vs {}",
                    cfg.payload.benchmark
                )));
            }
            Some(_) => {}
        }
        let method = format!("{:?}", cfg.payload.finetune.method).to_lowercase();
        groups
            .entry((method, cfg.payload.finetune.ivg))
            .or_default()
            .push((metrics.seed, metrics.config_hash, metrics.payload));
    }

    let benchmark = benchmark.unwrap();
    let mut rows = Vec::new();
    let mut table = String::from("method          seeds       HP       IP       OP\n");
    for ((method, ivg), entries) in &groups {
        let n = entries.len() as f64;
        let hp = 100.0 * entries.iter().map(|(_, _, m)| m.hp).sum::<f64>() / n;
        let ip = 100.0 * entries.iter().map(|(_, _, m)| m.ip).sum::<f64>() / n;
        let op = if entries.iter().all(|(_, _, m)| m.op.is_some()) {
            Some(100.0 * entries.iter().map(|(_, _, m)| m.op.unwrap()).sum::<f64>() / n)
        } else {
            None
        };
        let seeds: Vec<String> = entries.iter().map(|(s, _, _)| s.to_string()).collect();
        let hashes: Vec<String> = entries.iter().map(|(_, h, _)| h.clone()).collect();
        let name = if *ivg {
            format!("{method}+ivg")
        } else {
            method.clone()
        };
        let op_str = op.map_or("absent".to_string(), |v| format!("{v:.2}"));
        rows.push(format!(
            "{benchmark},{name},{},{},{hp:.4},{ip:.4},{}",
            seeds.join("|"),
            hashes.join("|"),
            op.map_or("".to_string(), |v| format!("{v:.4}"))
        ));
        table.push_str(&format!(
            "{name:<15} {:<10} {hp:>8.2} {ip:>8.2} {op_str:>8}\n",
            seeds.join(",")
        ));
    }
    std::fs::create_dir_all(out)?;
    let mut csv = String::from("benchmark,method,seeds,config_hashes,hp,ip,op\n");
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    std::fs::write(out.join("report.csv"), csv)?;
    print!("{table}");
    Ok(())
}
