//! Per-task CSV directories: `task_0.csv`, `task_1.csv`, ... each with a
//! header `f0,f1,...,f{p-1},label` and one example per row.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use pmtl_core::data::{Example, TaskDataset};

use crate::error::{HarnessError, Result};

fn task_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("task_")?.strip_suffix(".csv")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn parse_error(file: &str, line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads one task file. Line numbers in errors count the header as line 1.
pub fn read_task_file(path: &Path, task_id: usize) -> Result<TaskDataset> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let csv_err = |source| HarnessError::Csv {
        file: name.clone(),
        source,
    };
    let header = reader.headers().map_err(csv_err)?.clone();
    let width = header.len().checked_sub(1).filter(|w| *w > 0).ok_or_else(|| {
        parse_error(&name, 1, "header needs at least one feature column and a label column")
    })?;
    for (i, col) in header.iter().enumerate() {
        let expected = if i == width {
            "label".to_string()
        } else {
            format!("f{i}")
        };
        if col.trim() != expected {
            return Err(parse_error(&name, 1, format!("column {i} is `{col}`, expected `{expected}`")));
        }
    }
    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width + 1 {
            return Err(parse_error(
                &name,
                line,
                format!("ragged row: {} cells, expected {}", record.len(), width + 1),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(&name, line, format!("column {col}: `{cell}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let (features, label) = values.split_at(width);
        examples.push(Example::new(features.to_vec(), label[0]));
    }
    if examples.is_empty() {
        return Err(parse_error(&name, 1, "no examples"));
    }
    Ok(TaskDataset::new(task_id, examples)?)
}

/// Loads `task_0.csv .. task_{m-1}.csv`. Indices must be contiguous from 0
/// and every file must have the same feature width.
pub fn load_task_directory(dir: &Path) -> Result<Vec<TaskDataset>> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(dir, e))?;
        if let Some(k) = entry.file_name().to_str().and_then(task_index) {
            files.insert(k, entry.path());
        }
    }
    if files.is_empty() {
        return Err(HarnessError::Config(format!("no task_<k>.csv files in {}", dir.display())));
    }
    for (expected, &k) in files.keys().enumerate() {
        if k != expected {
            return Err(HarnessError::Config(format!(
                "missing task_{expected} in {}",
                dir.display()
            )));
        }
    }
    let tasks = files
        .iter()
        .map(|(&k, path)| read_task_file(path, k))
        .collect::<Result<Vec<_>>>()?;
    let width = tasks[0].width();
    if let Some(bad) = tasks.iter().find(|t| t.width() != width) {
        return Err(HarnessError::Config(format!(
            "task_{}.csv has {} features but task_0.csv has {width}",
            bad.task_id(),
            bad.width()
        )));
    }
    Ok(tasks)
}

/// Writes tasks in the format [`load_task_directory`] reads.
pub fn write_task_directory(dir: &Path, tasks: &[TaskDataset]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for task in tasks {
        let path = dir.join(format!("task_{}.csv", task.task_id()));
        let name = path.display().to_string();
        let csv_err = |source| HarnessError::Csv {
            file: name.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        let mut header: Vec<String> = (0..task.width()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for e in task.examples() {
            let row: Vec<String> = e
                .features
                .iter()
                .chain(std::iter::once(&e.label))
                .map(f64::to_string)
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}
