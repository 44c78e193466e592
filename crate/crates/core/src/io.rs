//! CSV ingestion and deterministic JSON output.
//!
//! Input: one row per sampled observation with columns
//! `location_id, N, y, pi, [sigma2,] x1..xp, [z1..zq]`; a header row is
//! required and columns are matched by name.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Result, WccError};
use crate::model::{Dataset, LocationBlock};

struct Columns {
    id: usize,
    n: usize,
    y: usize,
    pi: usize,
    sigma2: Option<usize>,
    x: Vec<usize>,
    z: Vec<usize>,
}

fn find(headers: &HashMap<String, usize>, name: &str) -> Result<usize> {
    headers
        .get(name)
        .copied()
        .ok_or_else(|| WccError::Input(format!("missing column `{name}`")))
}

#[derive(Default)]
struct Rows {
    n_pop: f64,
    y: Vec<f64>,
    pi: Vec<f64>,
    sigma2: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
}

/// Reads a dataset with `p` local and `q` global covariates.
pub fn read_dataset<R: Read>(reader: R, p: usize, q: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: HashMap<String, usize> = rdr
        .headers()
        .map_err(|e| WccError::Input(format!("cannot read header: {e}")))?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let cols = Columns {
        id: find(&headers, "location_id")?,
        n: find(&headers, "N")?,
        y: find(&headers, "y")?,
        pi: find(&headers, "pi")?,
        sigma2: headers.get("sigma2").copied(),
        x: (1..=p).map(|k| find(&headers, &format!("x{k}"))).collect::<Result<_>>()?,
        z: (1..=q).map(|k| find(&headers, &format!("z{k}"))).collect::<Result<_>>()?,
    };
    if p == 0 {
        return Err(WccError::Input("--p must be at least 1".into()));
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Rows> = HashMap::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| WccError::Input(format!("row {}: {e}", line + 2)))?;
        let id = record.get(cols.id).unwrap_or_default().to_string();
        let num = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or_default();
            raw.parse::<f64>().map_err(|_| {
                WccError::data(
                    &id,
                    format!("row {}: column `{name}` value `{raw}` is not a number", line + 2),
                )
            })
        };
        let n_pop = num(cols.n, "N")?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
            groups.insert(id.clone(), Rows { n_pop, ..Rows::default() });
        }
        let rows = groups.get_mut(&id).expect("inserted above");
        if rows.n_pop != n_pop {
            return Err(WccError::data(&id, format!("row {}: column `N` changes within the location", line + 2)));
        }
        rows.y.push(num(cols.y, "y")?);
        rows.pi.push(num(cols.pi, "pi")?);
        if let Some(c) = cols.sigma2 {
            rows.sigma2.push(num(c, "sigma2")?);
        }
        for (k, &c) in cols.x.iter().enumerate() {
            rows.x.push(num(c, &format!("x{}", k + 1))?);
        }
        for (k, &c) in cols.z.iter().enumerate() {
            rows.z.push(num(c, &format!("z{}", k + 1))?);
        }
    }
    if order.is_empty() {
        return Err(WccError::Input("no data rows".into()));
    }
    let blocks = order
        .into_iter()
        .map(|id| {
            let rows = groups.remove(&id).expect("every id has rows");
            let n = rows.y.len();
            LocationBlock::new(
                id,
                rows.n_pop,
                DVector::from_vec(rows.y),
                DMatrix::from_row_slice(n, p, &rows.x),
                DMatrix::from_row_slice(n, q, &rows.z),
                DVector::from_vec(rows.pi),
                cols.sigma2.map(|_| DVector::from_vec(rows.sigma2)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(blocks)
}

pub fn read_dataset_file(path: &Path, p: usize, q: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| WccError::Input(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(io::BufReader::new(file), p, q)
}

/// Writes `data` in the ingestion schema.
pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let has_sigma = data.locations().iter().any(|b| b.sigma2().is_some());
    let mut header = vec!["location_id".to_string(), "N".into(), "y".into(), "pi".into()];
    if has_sigma {
        header.push("sigma2".into());
    }
    header.extend((1..=data.p()).map(|k| format!("x{k}")));
    header.extend((1..=data.q()).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for b in data.locations() {
        for h in 0..b.n() {
            let mut rec = vec![b.id().to_string(), format_real(b.population_size()), format_real(b.y()[h]), format_real(b.pi()[h])];
            if has_sigma {
                rec.push(format_real(b.sigma2().map_or(1.0, |s| s[h])));
            }
            rec.extend((0..data.p()).map(|k| format_real(b.x()[(h, k)])));
            rec.extend((0..data.q()).map(|k| format_real(b.z()[(h, k)])));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> WccError {
    WccError::Input(e.to_string())
}

/// Reals are written with 17 significant digits, which round-trips every
/// finite `f64`.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Pretty JSON formatter writing every float with 17 significant digits.
struct FixedDigits<'a>(PrettyFormatter<'a>);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for FixedDigits<'_> {
    forward! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_real(value).as_bytes())
    }
}

/// Serializes with fixed field order and 17-significant-digit reals;
/// identical values always give identical bytes. Non-finite values become
/// `null`.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}
