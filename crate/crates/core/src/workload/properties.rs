//! Flat `key=value` workload files in the style of YCSB's.
//!
//! Recognised keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `workload` | `a`, `b`, `f` or `custom`; selects the preset the other keys override |
//! | `readproportion`, `updateproportion`, `readmodifywriteproportion` | operation mix |
//! | `recordcount`, `fieldcount`, `fieldlength` | record shape |
//! | `requestdistribution` | `zipfian`, `uniform` or `hotspot` |
//! | `zipfianconstant` | Zipfian theta |
//! | `hotspotdatafraction`, `hotspotopnfraction` | hotspot shape |
//! | `opspertransaction` | `k` or `min-max` |
//! | `readmodifywritestyle` | `overwrite` or `increment` |
//!
//! `insertproportion` and `scanproportion` must be zero if present. Any
//! other key is kept verbatim in [`Properties::extra`].

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use super::{Distribution, OpsPerTransaction, RmwStyle, WorkloadError, WorkloadName, WorkloadSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Properties {
    pub spec: WorkloadSpec,
    /// Keys not interpreted by the workload itself (`operationcount`, ...).
    pub extra: BTreeMap<String, String>,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, WorkloadError> {
    raw.trim().parse().map_err(|_| WorkloadError::Value {
        key: key.into(),
        value: raw.into(),
    })
}

impl Properties {
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('!') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or(WorkloadError::Syntax { line: i + 1 })?;
            kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_owned());
        }

        let name = match kv.remove("workload") {
            Some(v) => v.parse()?,
            None => WorkloadName::Custom,
        };
        let mut spec = WorkloadSpec::named(name);
        let mut theta = None;
        let mut hot_data = 0.2;
        let mut hot_ops = 0.8;
        let mut dist = None;
        let mut extra = BTreeMap::new();

        for (k, v) in kv {
            match k.as_str() {
                "readproportion" => spec.read_fraction = value(&k, &v)?,
                "updateproportion" => spec.update_fraction = value(&k, &v)?,
                "readmodifywriteproportion" => spec.rmw_fraction = value(&k, &v)?,
                "insertproportion" | "scanproportion" => {
                    if value::<f64>(&k, &v)? != 0.0 {
                        return Err(WorkloadError::Unsupported(k));
                    }
                }
                "recordcount" => spec.record_count = value(&k, &v)?,
                "fieldcount" => spec.field_count = value(&k, &v)?,
                "fieldlength" => spec.field_length = value(&k, &v)?,
                "requestdistribution" => dist = Some(v.to_ascii_lowercase()),
                "zipfianconstant" => theta = Some(value(&k, &v)?),
                "hotspotdatafraction" => hot_data = value(&k, &v)?,
                "hotspotopnfraction" => hot_ops = value(&k, &v)?,
                "opspertransaction" => spec.ops_per_transaction = v.parse()?,
                "readmodifywritestyle" => {
                    spec.rmw_style = match v.to_ascii_lowercase().as_str() {
                        "overwrite" => RmwStyle::Overwrite,
                        "increment" => RmwStyle::Increment,
                        _ => return Err(WorkloadError::Value { key: k, value: v }),
                    }
                }
                _ => {
                    extra.insert(k, v);
                }
            }
        }

        let default_theta = match spec.distribution {
            Distribution::Zipfian { theta } => theta,
            _ => 0.99,
        };
        spec.distribution = match dist.as_deref() {
            None if theta.is_none() => spec.distribution,
            None | Some("zipfian") => Distribution::Zipfian {
                theta: theta.unwrap_or(default_theta),
            },
            Some("uniform") => Distribution::Uniform,
            Some("hotspot") => Distribution::Hotspot {
                data_fraction: hot_data,
                op_fraction: hot_ops,
            },
            Some(other) => {
                return Err(WorkloadError::Value {
                    key: "requestdistribution".into(),
                    value: other.into(),
                })
            }
        };
        spec.validate()?;
        Ok(Properties { spec, extra })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, WorkloadError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn extra_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, WorkloadError> {
        self.extra.get(key).map(|v| value(key, v)).transpose()
    }
}

impl WorkloadSpec {
    pub fn from_properties(text: &str) -> Result<Self, WorkloadError> {
        Properties::parse(text).map(|p| p.spec)
    }

    /// Render as a properties file that parses back to `self`.
    pub fn to_properties(&self) -> String {
        let name = match self.name {
            WorkloadName::A => "a",
            WorkloadName::B => "b",
            WorkloadName::F => "f",
            WorkloadName::Custom => "custom",
        };
        let mut out = format!(
            "workload={name}\nreadproportion={}\nupdateproportion={}\nreadmodifywriteproportion={}\n\
             recordcount={}\nfieldcount={}\nfieldlength={}\n",
            self.read_fraction,
            self.update_fraction,
            self.rmw_fraction,
            self.record_count,
            self.field_count,
            self.field_length
        );
        match self.distribution {
            Distribution::Uniform => out.push_str("requestdistribution=uniform\n"),
            Distribution::Zipfian { theta } => {
                out.push_str(&format!("requestdistribution=zipfian\nzipfianconstant={theta}\n"))
            }
            Distribution::Hotspot {
                data_fraction,
                op_fraction,
            } => out.push_str(&format!(
                "requestdistribution=hotspot\nhotspotdatafraction={data_fraction}\nhotspotopnfraction={op_fraction}\n"
            )),
        }
        match self.ops_per_transaction {
            OpsPerTransaction::Fixed(k) => out.push_str(&format!("opspertransaction={k}\n")),
            OpsPerTransaction::Uniform { min, max } => {
                out.push_str(&format!("opspertransaction={min}-{max}\n"))
            }
        }
        let style = match self.rmw_style {
            RmwStyle::Overwrite => "overwrite",
            RmwStyle::Increment => "increment",
        };
        out.push_str(&format!("readmodifywritestyle={style}\n"));
        out
    }
}
