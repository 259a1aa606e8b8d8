//! CSV ingestion and emission.
//!
//! Columns: covariates `x1..xd`, assignment `z` and uptake `t` (0/1),
//! outcome `y`, and an optional per-row propensity (`p` by default). Other
//! columns are ignored.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use cgce::{validate_sample, ObservedSample, Propensity, RawColumns, ValidationOptions};
use ndarray::Array2;

use crate::config::{AnalysisConfig, PropensitySource, Standardize};
use crate::error::{CliError, CliResult};

/// A CSV file held as text, parsed column by column on demand.
#[derive(Debug, Clone)]
pub struct CsvTable {
    headers: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::from_reader(file).map_err(|e| e.context(path.display()))
    }

    pub fn from_reader(r: impl Read) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::schema(format!("header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut index = HashMap::new();
        for (j, h) in headers.iter().enumerate() {
            if index.insert(h.clone(), j).is_some() {
                return Err(CliError::schema(format!("duplicate column '{h}'")));
            }
        }
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::schema(e.to_string()))?;
        Ok(Self { headers, index, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Numeric values of a column; row numbers in errors count the header as
    /// line 1.
    pub fn column(&self, name: &str) -> CliResult<Vec<f64>> {
        let j = *self
            .index
            .get(name)
            .ok_or_else(|| CliError::schema(format!("missing column '{name}'")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let raw = rec.get(j).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    CliError::schema(format!("line {}: column '{name}' is not a number: '{raw}'", i + 2))
                })
            })
            .collect()
    }

    /// Covariate names `x1..xd`, which must be numbered without gaps.
    pub fn covariate_names(&self) -> CliResult<Vec<String>> {
        let mut numbers: Vec<usize> = Vec::new();
        for h in &self.headers {
            if let Some(rest) = h.strip_prefix('x') {
                if let Ok(k) = rest.parse::<usize>() {
                    numbers.push(k);
                }
            }
        }
        numbers.sort_unstable();
        for (i, &k) in numbers.iter().enumerate() {
            if k != i + 1 {
                return Err(CliError::schema(format!(
                    "covariate columns must be x1..xd without gaps; x{} is missing",
                    i + 1
                )));
            }
        }
        Ok(numbers.iter().map(|k| format!("x{k}")).collect())
    }
}

/// Builds a validated sample from a table under the given configuration.
pub fn load_sample(table: &CsvTable, cfg: &AnalysisConfig) -> CliResult<ObservedSample> {
    let names = table.covariate_names()?;
    let n = table.n_rows();
    if n == 0 {
        return Err(CliError::schema("no data rows"));
    }
    let mut x = Array2::zeros((n, names.len()));
    for (j, name) in names.iter().enumerate() {
        for (i, v) in table.column(name)?.into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    let z = table.column("z")?;
    let t = table.column("t")?;
    let mut y = table.column("y")?;
    if cfg.asinh {
        y.iter_mut().for_each(|v| *v = v.asinh());
    }
    let propensity = match &cfg.propensity {
        Some(PropensitySource::Constant(p)) => Propensity::Constant(*p),
        Some(PropensitySource::Column(name)) => Propensity::PerRow(table.column(name)?),
        None if table.has("p") => Propensity::PerRow(table.column("p")?),
        None => {
            return Err(CliError::schema(
                "no propensity: add a 'p' column or set a constant or column name",
            ))
        }
    };
    let standardize = match &cfg.standardize {
        Standardize::All(true) => (0..names.len()).collect(),
        Standardize::All(false) => Vec::new(),
        Standardize::Columns(cols) => cols
            .iter()
            .map(|c| {
                names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| CliError::config(format!("cannot standardize '{c}': not a covariate column")))
            })
            .collect::<CliResult<Vec<_>>>()?,
    };
    let opts = ValidationOptions {
        standardize,
        ..ValidationOptions::default()
    };
    validate_sample(RawColumns { x, z, t, y, propensity }, &opts).map_err(CliError::from)
}

/// Writes `x1..xd,z,t,y,p` with round-trip precision.
pub fn write_sample(s: &ObservedSample, out: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=s.d()).map(|j| format!("x{j}")).collect();
    header.extend(["z", "t", "y", "p"].map(String::from));
    let werr = |e: csv::Error| CliError::new(crate::error::ErrorKind::Io, e.to_string());
    w.write_record(&header).map_err(werr)?;
    for i in 0..s.n() {
        let mut rec: Vec<String> = s.row(i).iter().map(|v| v.to_string()).collect();
        rec.push((s.z()[i] as u8).to_string());
        rec.push((s.t()[i] as u8).to_string());
        rec.push(s.y()[i].to_string());
        rec.push(s.p()[i].to_string());
        w.write_record(&rec).map_err(werr)?;
    }
    w.flush().map_err(|e| CliError::new(crate::error::ErrorKind::Io, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> CsvTable {
        CsvTable::from_reader(text.as_bytes()).unwrap()
    }

    fn with_p(p: f64) -> AnalysisConfig {
        AnalysisConfig {
            propensity: Some(PropensitySource::Constant(p)),
            ..AnalysisConfig::default()
        }
    }

    #[test]
    fn reads_covariates_in_order() {
        let t = table("y,x2,z,x1,t\n1.5,20,1,10,1\n2.5,21,0,11,0\n");
        assert_eq!(t.covariate_names().unwrap(), vec!["x1", "x2"]);
        let s = load_sample(&t, &with_p(0.5)).unwrap();
        assert_eq!(s.row(0).to_vec(), vec![10.0, 20.0]);
        assert_eq!(s.y(), &[1.5, 2.5]);
    }

    #[test]
    fn schema_errors() {
        let cfg = with_p(0.5);
        for text in [
            "z,t\n1,1\n",
            "z,t,y\n1,1,abc\n",
            "x1,x3,z,t,y\n1,1,1,1,1\n",
            "z,t,y\n",
            "z,t,y\n0,1,2\n",
        ] {
            let e = load_sample(&table(text), &cfg).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}");
        }
        let e = load_sample(&table("z,t,y\n1,1,x\n"), &cfg).unwrap_err();
        assert!(e.message.contains("line 2"), "{}", e.message);
        let e = load_sample(&table("z,t,y\n1,1,1\n"), &AnalysisConfig::default()).unwrap_err();
        assert!(e.message.contains("propensity"));
    }

    #[test]
    fn asinh_of_zero_is_zero() {
        let cfg = AnalysisConfig {
            asinh: true,
            ..with_p(0.5)
        };
        let s = load_sample(&table("z,t,y\n1,1,0\n0,0,3\n"), &cfg).unwrap();
        assert_eq!(s.y()[0], 0.0);
        assert_eq!(s.y()[1], (3.0f64 + 10.0f64.sqrt()).ln());
    }

    #[test]
    fn per_row_propensity_column() {
        let t = table("z,t,y,p,ps\n1,1,2,0.4,0.3\n0,0,1,0.6,0.7\n");
        let s = load_sample(&t, &AnalysisConfig::default()).unwrap();
        assert_eq!(s.p(), &[0.4, 0.6]);
        let cfg = AnalysisConfig {
            propensity: Some(PropensitySource::Column("ps".into())),
            ..AnalysisConfig::default()
        };
        assert_eq!(load_sample(&t, &cfg).unwrap().p(), &[0.3, 0.7]);
    }

    #[test]
    fn write_then_read_is_exact() {
        let t = table("x1,z,t,y,p\n0.1,1,1,3.3333333333333335,0.25\n2.5,0,0,-1e-17,0.75\n");
        let s = load_sample(&t, &AnalysisConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_sample(&s, &mut buf).unwrap();
        let back = load_sample(&table(std::str::from_utf8(&buf).unwrap()), &AnalysisConfig::default()).unwrap();
        assert_eq!(back.y(), s.y());
        assert_eq!(back.x(), s.x());
        assert_eq!(back.p(), s.p());
    }

    #[test]
    fn standardize_named_columns() {
        let t = table("x1,x2,z,t,y\n1,5,1,1,1\n3,5,0,0,2\n");
        let cfg = AnalysisConfig {
            standardize: Standardize::Columns(vec!["x1".into()]),
            ..with_p(0.5)
        };
        let s = load_sample(&t, &cfg).unwrap();
        assert_eq!(s.x().column(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(s.x().column(1).to_vec(), vec![5.0, 5.0]);
        let cfg = AnalysisConfig {
            standardize: Standardize::All(true),
            ..with_p(0.5)
        };
        assert_eq!(load_sample(&t, &cfg).unwrap_err().exit_code(), 2);
    }
}
