//! CSV and JSON file formats shared by the command line and the tests.
//!
//! Tensors are stored as `i,j,k,value` rows (0-based) next to a JSON sidecar
//! `{"I":..,"J":..,"K":..}` with the same stem.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advisor::Action;
use crate::decomp::BenchTrace;
use crate::error::{Error, Result};
use crate::pipeline::Verdict;
use crate::synth::Label;
use crate::tensor::{DenseTensor3, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDims {
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Serialize, Deserialize)]
struct Cell {
    i: usize,
    j: usize,
    k: usize,
    value: f64,
}

/// Path of the JSON sidecar belonging to a tensor CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_tensor_csv<W: Write>(t: &DenseTensor3, w: W) -> Result<()> {
    let (ni, nj, nk) = t.dims();
    let mut wr = csv::Writer::from_writer(w);
    for k in 0..nk {
        for j in 0..nj {
            for i in 0..ni {
                wr.serialize(Cell { i, j, k, value: t.get(i, j, k) })?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads cells into a tensor of the given shape. Every cell must appear
/// exactly once.
pub fn read_tensor_csv<R: Read>(dims: TensorDims, r: R) -> Result<DenseTensor3> {
    let shape = (dims.i, dims.j, dims.k);
    let total = dims.i * dims.j * dims.k;
    let mut t = DenseTensor3::zeros(shape);
    let mut seen = vec![false; total];
    let mut rd = csv::Reader::from_reader(r);
    for (line, rec) in rd.deserialize::<Cell>().enumerate() {
        let c = rec?;
        if c.i >= dims.i || c.j >= dims.j || c.k >= dims.k {
            return Err(Error::ShapeMismatch(format!("cell ({}, {}, {}) outside {:?}", c.i, c.j, c.k, shape)));
        }
        if !c.value.is_finite() {
            return Err(Error::NonFinite(format!("cell ({}, {}, {})", c.i, c.j, c.k)));
        }
        let flat = (c.i * dims.j + c.j) * dims.k + c.k;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(Error::Parse(format!("duplicate cell ({}, {}, {}) on data row {}", c.i, c.j, c.k, line + 1)));
        }
        t.set(c.i, c.j, c.k, c.value);
    }
    if let Some(flat) = seen.iter().position(|s| !s) {
        let (i, rest) = (flat / (dims.j * dims.k), flat % (dims.j * dims.k));
        return Err(Error::Parse(format!("missing cell ({}, {}, {})", i, rest / dims.k, rest % dims.k)));
    }
    Ok(t)
}

/// Writes `path` and its sidecar.
pub fn save_tensor(t: &DenseTensor3, path: &Path) -> Result<()> {
    let (i, j, k) = t.dims();
    let side = serde_json::to_string_pretty(&TensorDims { i, j, k })?;
    std::fs::write(sidecar_path(path), side + "\n")?;
    write_tensor_csv(t, BufWriter::new(File::create(path)?))
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor3> {
    let side = std::fs::read_to_string(sidecar_path(path))?;
    let dims: TensorDims = serde_json::from_str(&side)?;
    read_tensor_csv(dims, BufReader::new(File::open(path)?))
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    k: usize,
    label: String,
}

pub fn write_labels_csv<W: Write>(labels: &[Label], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (k, l) in labels.iter().enumerate() {
        wr.serialize(LabelRow { k, label: l.as_str().to_string() })?;
    }
    wr.flush()?;
    Ok(())
}

/// Labels must be listed for `k = 0, 1, 2, ...` in order.
pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<Label>> {
    let mut out = Vec::new();
    for rec in csv::Reader::from_reader(r).deserialize::<LabelRow>() {
        let row = rec?;
        if row.k != out.len() {
            return Err(Error::Parse(format!("label rows out of order: expected k = {}, got {}", out.len(), row.k)));
        }
        out.push(row.label.parse()?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct VerdictRow {
    t: usize,
    g_raw: f64,
    p_env: f64,
    g_advised: f64,
    action: String,
}

pub fn write_verdicts_csv<W: Write>(verdicts: &[Verdict], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for v in verdicts {
        wr.serialize(VerdictRow {
            t: v.t,
            g_raw: v.g_raw,
            p_env: v.p_env,
            g_advised: v.g_advised,
            action: v.action.as_str().to_string(),
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_verdicts_csv<R: Read>(r: R) -> Result<Vec<Verdict>> {
    csv::Reader::from_reader(r)
        .deserialize::<VerdictRow>()
        .map(|rec| {
            let v = rec?;
            let action: Action = v.action.parse()?;
            Ok(Verdict { t: v.t, g_raw: v.g_raw, p_env: v.p_env, g_advised: v.g_advised, action })
        })
        .collect()
}

/// One row per recorded point: `step,rmse,optimizer`.
pub fn write_rmse_csv<W: Write>(traces: &[BenchTrace], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "rmse", "optimizer"])?;
    for tr in traces {
        for &(step, rmse) in &tr.points {
            wr.write_record([step.to_string(), rmse.to_string(), tr.optimizer.name().to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Factor matrix as `row,f0,f1,...`.
pub fn write_factor_csv<W: Write>(m: &Matrix, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let header: Vec<String> = std::iter::once("row".to_string()).chain((0..m.cols()).map(|q| format!("f{}", q))).collect();
    wr.write_record(&header)?;
    for r in 0..m.rows() {
        let rec: Vec<String> = std::iter::once(r.to_string()).chain(m.row(r).iter().map(|v| v.to_string())).collect();
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_factor_csv<R: Read>(r: R) -> Result<Matrix> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(r).records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{}: {}", s, e))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Matrix::from_rows(&rows)
}
