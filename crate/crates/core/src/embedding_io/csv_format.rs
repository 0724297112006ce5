use std::io::{Read, Write};

use super::{AttributeLabels, EmbeddingSet};
use crate::error::{Error, Result};

const WHAT: &str = "embedding CSV";

enum Column {
    Feature(usize),
    Attribute(usize),
    Task,
}

/// Header `h_0,…,h_{d−1},attr:<name>,…[,task]`. The class count of each
/// attribute is inferred as `max(label) + 1`, at least 2.
pub fn read_embedding_csv<R: Read>(input: R) -> Result<EmbeddingSet> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(WHAT, e.to_string()))?
        .clone();

    let mut columns = Vec::with_capacity(headers.len());
    let mut d = 0;
    let mut attr_names: Vec<String> = Vec::new();
    let mut has_task = false;
    for h in headers.iter() {
        if let Some(idx) = h.strip_prefix("h_") {
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::format(WHAT, format!("bad feature column `{h}`")))?;
            if idx != d {
                return Err(Error::format(WHAT, format!("feature column `{h}` out of order")));
            }
            columns.push(Column::Feature(idx));
            d += 1;
        } else if let Some(name) = h.strip_prefix("attr:") {
            if name.is_empty() || attr_names.iter().any(|n| n == name) {
                return Err(Error::format(WHAT, format!("bad attribute column `{h}`")));
            }
            columns.push(Column::Attribute(attr_names.len()));
            attr_names.push(name.to_string());
        } else if h == "task" && !has_task {
            columns.push(Column::Task);
            has_task = true;
        } else {
            return Err(Error::UnknownAttribute(h.to_string()));
        }
    }
    if d == 0 {
        return Err(Error::format(WHAT, "no h_<i> feature columns"));
    }

    let mut data = Vec::new();
    let mut labels: Vec<Vec<u32>> = vec![Vec::new(); attr_names.len()];
    let mut task = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(WHAT, format!("row {row}: {e}")))?;
        if record.len() != columns.len() {
            return Err(Error::Dimension {
                expected: columns.len(),
                actual: record.len(),
                context: "CSV field count",
            });
        }
        for (field, col) in record.iter().zip(&columns) {
            match col {
                Column::Feature(j) => {
                    let v: f32 = field
                        .parse()
                        .map_err(|_| Error::format(WHAT, format!("row {row}: bad number `{field}`")))?;
                    if !v.is_finite() {
                        return Err(Error::NonFinite { row, col: *j });
                    }
                    data.push(v);
                }
                Column::Attribute(a) => labels[*a].push(parse_label(field, row)?),
                Column::Task => task.push(parse_label(field, row)?),
            }
        }
        n += 1;
    }

    let attributes = attr_names
        .into_iter()
        .zip(labels)
        .map(|(name, labels)| {
            let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(2);
            AttributeLabels::new(name, classes, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(n, d, data, attributes, has_task.then_some(task))
}

fn parse_label(field: &str, row: usize) -> Result<u32> {
    field
        .parse()
        .map_err(|_| Error::format(WHAT, format!("row {row}: bad label `{field}`")))
}

pub fn write_embedding_csv<W: Write>(set: &EmbeddingSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::format(WHAT, e.to_string());
    let mut header: Vec<String> = (0..set.d()).map(|j| format!("h_{j}")).collect();
    header.extend(set.attributes().iter().map(|a| format!("attr:{}", a.name)));
    if set.task_labels().is_some() {
        header.push("task".into());
    }
    w.write_record(&header).map_err(map)?;
    for i in 0..set.n() {
        let mut rec: Vec<String> = set.row(i).iter().map(|v| v.to_string()).collect();
        rec.extend(set.attributes().iter().map(|a| a.labels[i].to_string()));
        if let Some(task) = set.task_labels() {
            rec.push(task[i].to_string());
        }
        w.write_record(&rec).map_err(map)?;
    }
    w.flush().map_err(|e| Error::format(WHAT, e.to_string()))
}
