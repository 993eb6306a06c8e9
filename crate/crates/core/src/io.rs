//! CSV series and TOML model configuration.
//!
//! CSV: one header row of column names, one row per time step. Empty cells
//! and `NA` are missing. TOML: `sigma_eps` as a row list, one `[[blocks]]`
//! table per series and an optional `[[params]]` parameter map.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SutseError};
use crate::estimation::{ParamSpec, ParameterMap};
use crate::model::ObservationSeries;
use crate::sutse::{ar_local_level_block, SeriesBlock, SutseSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedSeries {
    pub names: Vec<String>,
    pub series: ObservationSeries,
}

fn is_missing_token(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan")
}

pub fn read_series<R: Read>(reader: R) -> Result<NamedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| SutseError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let d = names.len();
    if d == 0 || (d == 1 && names[0].is_empty()) {
        return Err(SutseError::Parse {
            line: 1,
            msg: "missing header row".into(),
        });
    }
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut n = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| SutseError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(n + 2, |p| p.line() as usize);
        if record.len() != d {
            return Err(SutseError::Parse {
                line,
                msg: format!("expected {d} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            if is_missing_token(field) {
                data.push(f64::NAN);
                mask.push(true);
                continue;
            }
            let x: f64 = field.parse().map_err(|_| SutseError::Parse {
                line,
                msg: format!("column {}: cannot parse {field:?} as a number", names[j]),
            })?;
            if !x.is_finite() {
                return Err(SutseError::Parse {
                    line,
                    msg: format!("column {}: non-finite value {field:?}", names[j]),
                });
            }
            data.push(x);
            mask.push(false);
        }
        n += 1;
    }
    let values = DMatrix::from_row_slice(n, d, &data);
    Ok(NamedSeries {
        names,
        series: ObservationSeries::new(values, mask)?,
    })
}

pub fn read_series_csv(path: &Path) -> Result<NamedSeries> {
    read_series(fs::File::open(path)?)
}

pub fn write_series<W: Write>(writer: W, names: &[String], series: &ObservationSeries) -> Result<()> {
    if names.len() != series.dim() {
        return Err(SutseError::input("column names do not match the series dimension"));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(names).map_err(csv_err)?;
    for t in 0..series.len() {
        let row: Vec<String> = (0..series.dim())
            .map(|j| series.get(t, j).map(|x| x.to_string()).unwrap_or_default())
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_csv(path: &Path, names: &[String], series: &ObservationSeries) -> Result<()> {
    write_series(fs::File::create(path)?, names, series)
}

pub(crate) fn csv_err(e: csv::Error) -> SutseError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SutseError::Io(io),
        other => SutseError::Config(format!("{other:?}")),
    }
}

/// Default column names `y1..yd`.
pub fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("y{j}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockConfig {
    /// AR(q) + local level. `diffuse` replaces a1, P1 with 0, κI.
    ArLocalLevel {
        phi: Vec<f64>,
        level_var: f64,
        ar_var: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diffuse: Option<f64>,
    },
    General {
        z: Vec<f64>,
        t: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        a1: Vec<f64>,
        p1: Vec<Vec<f64>>,
    },
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(SutseError::Config(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Recognize the AR + local level layout produced by [`ar_local_level_block`].
fn as_ar_local_level(b: &SeriesBlock) -> Option<BlockConfig> {
    let p = b.state_dim();
    if p < 2 {
        return None;
    }
    let phi: Vec<f64> = (1..p).map(|j| b.t[(1, j)]).collect();
    let template = ar_local_level_block(&phi, b.q[(0, 0)], b.q[(1, 1)]).ok()?;
    if template.z != b.z || template.t != b.t || template.q != b.q || b.a1.iter().any(|&x| x != 0.0) {
        return None;
    }
    let diffuse = if b.p1 == template.p1 {
        None
    } else {
        let k = b.p1[(0, 0)];
        if b.p1 != DMatrix::from_diagonal_element(p, p, k) {
            return None;
        }
        Some(k)
    };
    Some(BlockConfig::ArLocalLevel {
        phi,
        level_var: b.q[(0, 0)],
        ar_var: b.q[(1, 1)],
        diffuse,
    })
}

impl BlockConfig {
    pub fn from_block(b: &SeriesBlock) -> Self {
        as_ar_local_level(b).unwrap_or_else(|| BlockConfig::General {
            z: b.z.iter().copied().collect(),
            t: rows_of(&b.t),
            q: rows_of(&b.q),
            a1: b.a1.iter().copied().collect(),
            p1: rows_of(&b.p1),
        })
    }

    pub fn to_block(&self) -> Result<SeriesBlock> {
        let block = match self {
            BlockConfig::ArLocalLevel {
                phi,
                level_var,
                ar_var,
                diffuse,
            } => {
                let b = ar_local_level_block(phi, *level_var, *ar_var)?;
                match diffuse {
                    Some(k) if *k > 0.0 => b.with_diffuse_prior(*k),
                    Some(k) => return Err(SutseError::Config(format!("diffuse variance {k} must be positive"))),
                    None => b,
                }
            }
            BlockConfig::General { z, t, q, a1, p1 } => SeriesBlock {
                z: DVector::from_column_slice(z),
                t: matrix_of("t", t)?,
                q: matrix_of("q", q)?,
                a1: DVector::from_column_slice(a1),
                p1: matrix_of("p1", p1)?,
            },
        };
        block.validate()?;
        Ok(block)
    }
}

/// Summary stored next to fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub mode: String,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub log_transform: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sigma_eps: Vec<Vec<f64>>,
    pub blocks: Vec<BlockConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<ParamSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

impl ModelConfig {
    pub fn from_spec(spec: &SutseSpec) -> Self {
        Self {
            sigma_eps: rows_of(&spec.sigma_eps),
            blocks: spec.blocks.iter().map(BlockConfig::from_block).collect(),
            params: Vec::new(),
            fit: None,
        }
    }

    pub fn to_spec(&self) -> Result<SutseSpec> {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(j, b)| b.to_block().map_err(|e| SutseError::Config(format!("block {j}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let spec = SutseSpec {
            blocks,
            sigma_eps: matrix_of("sigma_eps", &self.sigma_eps)?,
        };
        spec.validate().map_err(|e| SutseError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn parameter_map(&self) -> Option<ParameterMap> {
        (!self.params.is_empty()).then(|| ParameterMap::new(self.params.clone()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SutseError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SutseError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

/// Parse a config file straight into a spec and optional parameter map.
pub fn load_spec(path: &Path) -> Result<(SutseSpec, Option<ParameterMap>)> {
    let cfg = ModelConfig::load(path)?;
    Ok((cfg.to_spec()?, cfg.parameter_map()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{ParamTarget, Transform};
    use crate::sutse::simulation_model;

    #[test]
    fn csv_missing_tokens() {
        let text = "a,b\n1.5,NA\n,2\n3,4\n";
        let ns = read_series(text.as_bytes()).unwrap();
        assert_eq!(ns.names, vec!["a", "b"]);
        assert_eq!(ns.series.len(), 3);
        assert!(ns.series.is_missing(0, 1) && ns.series.is_missing(1, 0));
        assert_eq!(ns.series.get(2, 1), Some(4.0));
        assert_eq!(ns.series.missing_count(), 2);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = read_series("a,b\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SutseError::Parse { line: 3, .. }), "{err}");
        let err = read_series("a,b\n1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SutseError::Parse { line: 3, .. }), "{err}");
        assert!(read_series("".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let values = DMatrix::from_row_slice(2, 2, &[0.1 + 0.2, -1e-300, f64::NAN, 1.0 / 3.0]);
        let series = ObservationSeries::from_matrix(values);
        let mut buf = Vec::new();
        write_series(&mut buf, &default_names(2), &series).unwrap();
        let back = read_series(buf.as_slice()).unwrap();
        assert_eq!(back.series.missing_mask(), series.missing_mask());
        for t in 0..2 {
            for j in 0..2 {
                assert_eq!(back.series.get(t, j), series.get(t, j));
            }
        }
    }

    #[test]
    fn config_round_trip() {
        let (mut spec, _) = simulation_model(3).unwrap();
        spec.blocks[1] = spec.blocks[1].clone().with_diffuse_prior(1e7);
        spec.blocks[2].a1[3] = 0.1 + 0.2;
        let mut cfg = ModelConfig::from_spec(&spec);
        assert!(matches!(cfg.blocks[0], BlockConfig::ArLocalLevel { diffuse: None, .. }));
        assert!(matches!(cfg.blocks[1], BlockConfig::ArLocalLevel { diffuse: Some(_), .. }));
        assert!(matches!(cfg.blocks[2], BlockConfig::General { .. }));
        cfg.params = ParameterMap::equicorrelation(3).params;
        let text = cfg.to_toml().unwrap();
        let back = ModelConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_spec().unwrap(), spec);
        let pm = back.parameter_map().unwrap();
        assert_eq!(pm.params[3].target, ParamTarget::SigmaEpsOffdiagCommon);
        assert_eq!(pm.params[0].transform, Transform::Log);
    }

    #[test]
    fn config_rejects_bad_shapes() {
        let text = r#"
sigma_eps = [[1.0, 0.0], [0.0, 1.0]]
[[blocks]]
kind = "ar_local_level"
phi = [0.5]
level_var = 0.1
ar_var = 1.0
"#;
        let cfg = ModelConfig::from_toml(text).unwrap();
        assert!(matches!(cfg.to_spec(), Err(SutseError::Config(_))));
        assert!(ModelConfig::from_toml("sigma_eps = 3").is_err());
    }
}
