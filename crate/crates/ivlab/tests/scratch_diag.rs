//! Temporary diagnostics against a pilot checkpoint. Not part of the suite.

use std::path::Path;

use ivlab::eval::{evaluate_set, EvalForm, EvalMode, EvalSpec};
use ivlab::model::checkpoint;
use ivlab::tasks::{base_tasks, build_world, fresh_tasks};

#[test]
#[ignore]
fn burst_token_instruction() {
    let (model, _) = checkpoint::load(Path::new("/root/pilot/run6/checkpoint.bin")).unwrap();
    let world = build_world(9, &Default::default()).unwrap();
    for t in fresh_tasks(&world) {
        let mut row = format!("{:<16}", t.id);
        for (tag, instr) in [
            ("fresh", t.instruction.clone()),
            ("burst", vec![world.layout.burst_instr.start + 3]),
        ] {
            let mut probe = t.clone();
            probe.instruction = instr;
            for shots in [0usize, 10] {
                let spec = EvalSpec {
                    set_id: t.id.clone(),
                    task: probe.clone(),
                    mode: if shots == 0 {
                        EvalMode::ZeroShot
                    } else {
                        EvalMode::Icl { n_shots: shots }
                    },
                    form: EvalForm::Instruction,
                    n_examples: 24,
                    seed: 7,
                };
                let r = evaluate_set(&model, &world, &spec, None).unwrap();
                row += &format!(" {tag}{shots}:{:.2}", r.accuracy);
            }
        }
        println!("{row}");
    }
}

#[test]
#[ignore]
fn shot_curve() {
    let (model, _) = checkpoint::load(Path::new("/root/pilot/run6/checkpoint.bin")).unwrap();
    let world = build_world(9, &Default::default()).unwrap();
    let mut tasks = base_tasks(&world);
    tasks.extend(fresh_tasks(&world));
    for t in &tasks {
        let mut row = format!("{:<16}", t.id);
        for shots in [0usize, 1, 2, 4, 10] {
            let spec = EvalSpec {
                set_id: t.id.clone(),
                task: t.clone(),
                mode: if shots == 0 {
                    EvalMode::ZeroShot
                } else {
                    EvalMode::Icl { n_shots: shots }
                },
                form: EvalForm::Instruction,
                n_examples: 24,
                seed: 7,
            };
            let r = evaluate_set(&model, &world, &spec, None).unwrap();
            row += &format!(" {shots}:{:.2}", r.accuracy);
        }
        println!("{row}");
    }
}
