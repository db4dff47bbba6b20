use std::fmt::Write as _;

use nalgebra::DVector;

use crate::{Error, Result};

/// A named time series of a conserved (or monitored) quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub name: String,
    pub values: Vec<f64>,
}

impl Audit {
    /// `max_t |values(t) − values(0)|`.
    pub fn max_drift(&self) -> f64 {
        let Some(&first) = self.values.first() else { return 0.0 };
        self.values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max)
    }
}

/// Time-stamped states with audit columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Column labels for the state coordinates.
    pub labels: Vec<String>,
    pub audits: Vec<Audit>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            labels,
            audits: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn declare_audits(&mut self, names: &[String]) {
        self.audits = names
            .iter()
            .map(|n| Audit {
                name: n.clone(),
                values: Vec::new(),
            })
            .collect();
    }

    /// Appends a sample. Panics if `t` does not increase or the audit count
    /// does not match the declared audits.
    pub fn push(&mut self, t: f64, state: DVector<f64>, audit_values: &[f64]) {
        if let Some(&last) = self.times.last() {
            assert!(t > last, "trajectory times must increase ({t} after {last})");
        }
        assert_eq!(state.len(), self.labels.len(), "state dimension");
        assert_eq!(audit_values.len(), self.audits.len(), "audit count");
        self.times.push(t);
        self.states.push(state);
        for (a, &v) in self.audits.iter_mut().zip(audit_values) {
            a.values.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn audit(&self, name: &str) -> Option<&Audit> {
        self.audits.iter().find(|a| a.name == name)
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    /// Adds an audit column computed from the stored states.
    pub fn add_audit<F: Fn(&DVector<f64>) -> f64>(&mut self, name: impl Into<String>, f: F) {
        let values = self.states.iter().map(f).collect();
        self.audits.push(Audit {
            name: name.into(),
            values,
        });
    }

    pub fn header(&self) -> Vec<String> {
        std::iter::once("t".to_string())
            .chain(self.labels.iter().cloned())
            .chain(self.audits.iter().map(|a| a.name.clone()))
            .collect()
    }

    /// CSV with header `t,<labels>,<audits>`; every number carries 17
    /// significant digits so that values round-trip exactly.
    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            write_f64(&mut out, *t);
            for x in s.iter() {
                out.push(',');
                write_f64(&mut out, *x);
            }
            for a in &self.audits {
                out.push(',');
                write_f64(&mut out, a.values[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`Trajectory::to_csv`] given the number of state
    /// columns; the remaining columns become audits.
    pub fn from_csv(text: &str, state_dim: usize) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::InvalidParameter("empty CSV".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        if header.first() != Some(&"t") || header.len() < 1 + state_dim {
            return Err(Error::InvalidParameter("malformed trajectory header".into()));
        }
        let mut traj = Trajectory::new(header[1..=state_dim].iter().map(|s| s.to_string()).collect());
        let audit_names: Vec<String> = header[1 + state_dim..].iter().map(|s| s.to_string()).collect();
        traj.declare_audits(&audit_names);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(line, header.len()).map_err(|e| {
                Error::InvalidParameter(format!("row {}: {e}", lineno + 2))
            })?;
            traj.times.push(row[0]);
            traj.states.push(DVector::from_column_slice(&row[1..=state_dim]));
            for (a, v) in traj.audits.iter_mut().zip(&row[1 + state_dim..]) {
                a.values.push(*v);
            }
        }
        Ok(traj)
    }
}

pub(crate) fn write_f64(out: &mut String, x: f64) {
    let _ = write!(out, "{x:.16e}");
}

pub(crate) fn parse_row(line: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let row: Vec<f64> = line
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{e}: `{s}`")))
        .collect::<std::result::Result<_, _>>()?;
    if row.len() != expected {
        return Err(format!("expected {expected} columns, found {}", row.len()));
    }
    Ok(row)
}
