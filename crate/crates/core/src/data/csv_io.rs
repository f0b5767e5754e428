//! Dataset CSV files: header `class,id,x0,...,x{d-1}`, one row per sample.
//! `class` is the global class id and `id` the row index in the dataset.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let d = data.x.cols();
    let mut header = vec!["class".to_string(), "id".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in data.x.row_iter().enumerate() {
        let mut rec = vec![data.class_ids[data.y[i]].to_string(), i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset back. Local labels follow ascending global class id.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "class" || &header[1] != "id" {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header class,id,x0,...",
            path.display()
        )));
    }
    let d = header.len() - 2;
    let mut global = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse_err =
            |what: &str| Error::InvalidArgument(format!("{}: row {}: bad {what}", path.display(), line + 1));
        let class: usize = rec[0].parse().map_err(|_| parse_err("class"))?;
        global.push(class);
        for j in 0..d {
            let v: f64 = rec[j + 2].parse().map_err(|_| parse_err("value"))?;
            values.push(v);
        }
    }
    let mut class_ids = global.clone();
    class_ids.sort_unstable();
    class_ids.dedup();
    let y = global
        .iter()
        .map(|c| class_ids.binary_search(c).expect("present"))
        .collect();
    Ok(Dataset {
        x: Matrix::from_vec(global.len(), d, values)?,
        y,
        class_ids,
    })
}
