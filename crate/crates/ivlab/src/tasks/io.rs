//! Line-delimited dataset dump/load; one JSON record per example.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tasks::task::{ExampleQuad, Split};

/// One dumped example with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub split: Split,
    pub task_id: String,
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub c: Vec<usize>,
    pub yc: Vec<usize>,
}

impl DatasetRecord {
    pub fn new(split: Split, task_id: &str, quad: &ExampleQuad) -> Self {
        DatasetRecord {
            split,
            task_id: task_id.to_string(),
            x: quad.x.clone(),
            y: quad.y.clone(),
            c: quad.c.clone(),
            yc: quad.yc.clone(),
        }
    }

    pub fn quad(&self) -> ExampleQuad {
        ExampleQuad {
            x: self.x.clone(),
            y: self.y.clone(),
            c: self.c.clone(),
            yc: self.yc.clone(),
        }
    }
}

pub fn dump_examples(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_examples(path: &Path) -> Result<Vec<DatasetRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::task::{make_examples, TaskFamily, TaskSpec};
    use crate::tasks::world::{build_world, WorldSizes};

    #[test]
    fn jsonl_roundtrip_exact() {
        let w = build_world(1, &WorldSizes::default()).unwrap();
        let t = TaskSpec {
            id: "rt".into(),
            family: TaskFamily::FactLookupMc,
            instruction: vec![w.layout.fresh_instr.start],
            relation: 0,
            seed: 2,
        };
        let records: Vec<DatasetRecord> = make_examples(&w, &t, 20, Split::Test)
            .unwrap()
            .iter()
            .map(|q| DatasetRecord::new(Split::Test, &t.id, q))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        dump_examples(&path, &records).unwrap();
        assert_eq!(load_examples(&path).unwrap(), records);
    }
}
