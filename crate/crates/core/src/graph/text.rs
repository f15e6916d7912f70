//! Line format:
//!
//! ```text
//! VAR <id> <kind> tx ty tz qx qy qz qw
//! FACTOR <kind> <ids...> tx ty tz qx qy qz qw <21 upper-triangular info entries> [huber_k]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix6;

use super::factor::{Factor, FactorKind, VariableKind};
use super::FactorGraph;
use crate::error::{Error, Result};
use crate::geometry::RigidPose;

fn push_values(line: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        write!(line, " {v}").unwrap();
    }
}

pub fn write_graph(graph: &FactorGraph) -> String {
    let mut out = String::new();
    for v in graph.variables() {
        let mut line = format!("VAR {} {}", v.id, v.kind.as_str());
        push_values(&mut line, v.estimate.to_array7());
        out.push_str(&line);
        out.push('\n');
    }
    for f in graph.factors() {
        let mut line = format!("FACTOR {}", f.kind.as_str());
        for id in &f.variables {
            write!(line, " {id}").unwrap();
        }
        push_values(&mut line, f.measurement.to_array7());
        push_values(&mut line, (0..6).flat_map(|i| (i..6).map(move |j| (i, j))).map(|(i, j)| f.information[(i, j)]));
        if let Some(k) = f.huber {
            write!(line, " {k}").unwrap();
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn floats(tokens: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, line, format!("invalid number `{t}`"))))
        .collect()
}

fn pose7(values: &[f64], path: &Path, line: usize) -> Result<RigidPose> {
    let a: [f64; 7] = values.try_into().map_err(|_| Error::parse(path, line, "expected 7 pose values"))?;
    RigidPose::from_array7(&a).map_err(|e| Error::parse(path, line, e.to_string()))
}

pub fn parse_graph(text: &str, path: impl AsRef<Path>) -> Result<FactorGraph> {
    let path = path.as_ref();
    let mut graph = FactorGraph::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.first() {
            None => continue,
            Some(t) if t.starts_with('#') => continue,
            Some(&"VAR") => {
                if tokens.len() != 10 {
                    return Err(Error::parse(path, line, "VAR needs id, kind and 7 pose values"));
                }
                let id = tokens[1].parse().map_err(|_| Error::parse(path, line, "invalid variable id"))?;
                let kind = VariableKind::parse(tokens[2]).ok_or_else(|| Error::parse(path, line, format!("unknown variable kind `{}`", tokens[2])))?;
                let pose = pose7(&floats(&tokens[3..], path, line)?, path, line)?;
                graph.add_variable(id, kind, pose).map_err(|e| Error::parse(path, line, e.to_string()))?;
            }
            Some(&"FACTOR") => {
                let kind = tokens
                    .get(1)
                    .and_then(|k| FactorKind::parse(k))
                    .ok_or_else(|| Error::parse(path, line, "missing or unknown factor kind"))?;
                let arity = kind.arity();
                let expected = 2 + arity + 7 + 21;
                if tokens.len() != expected && tokens.len() != expected + 1 {
                    return Err(Error::parse(path, line, format!("{} factor needs {} fields", kind.as_str(), expected)));
                }
                let ids = tokens[2..2 + arity]
                    .iter()
                    .map(|t| t.parse().map_err(|_| Error::parse(path, line, "invalid variable id")))
                    .collect::<Result<Vec<u64>>>()?;
                let values = floats(&tokens[2 + arity..], path, line)?;
                let pose = pose7(&values[..7], path, line)?;
                let mut info = Matrix6::zeros();
                let mut k = 7;
                for i in 0..6 {
                    for j in i..6 {
                        info[(i, j)] = values[k];
                        info[(j, i)] = values[k];
                        k += 1;
                    }
                }
                let mut factor = Factor::new(kind, ids, pose, info).map_err(|e| Error::parse(path, line, e.to_string()))?;
                if let Some(&h) = values.get(28) {
                    factor = factor.with_huber(h).map_err(|e| Error::parse(path, line, e.to_string()))?;
                }
                graph.add_factor(factor).map_err(|e| Error::parse(path, line, e.to_string()))?;
            }
            Some(other) => return Err(Error::parse(path, line, format!("unknown record `{other}`"))),
        }
    }
    Ok(graph)
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<FactorGraph> {
    let path = path.as_ref();
    parse_graph(&std::fs::read_to_string(path)?, path)
}
