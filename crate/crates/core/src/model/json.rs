//! JSON problem files.

use serde::{Deserialize, Serialize};

use super::{
    DomainScaling, InputBox, InputSet, ModelError, OcpSpec, Problem, SemialgebraicSet,
    SynthesisConfig, VariableRegistry, Weight, MAX_DEGREE,
};
use crate::poly::{format_poly, parse_poly, PolyError};
use crate::Polynomial;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputsFile {
    names: Vec<String>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bounds_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<String>,
    /// Box enclosing `{h >= 0}`; defaults to `[-1, 1]` per input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    states: Vec<String>,
    inputs: InputsFile,
    running_cost: String,
    terminal_cost: String,
    dynamics: Vec<String>,
    omega_h: String,
    #[serde(rename = "horizon_T")]
    horizon_t: f64,
    lambda_box: Vec<[f64; 2]>,
    weight: Weight,
    degree: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scaling: Option<DomainScaling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_multipliers: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dissipation_multipliers: Option<Vec<u32>>,
}

/// Names of the bundled example problems.
pub const PRESET_NAMES: [&str; 4] = ["ex1", "ex2", "ex3", "ex4"];

/// Text of a bundled example problem.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "ex1" => Some(include_str!("../../presets/ex1.json")),
        "ex2" => Some(include_str!("../../presets/ex2.json")),
        "ex3" => Some(include_str!("../../presets/ex3.json")),
        "ex4" => Some(include_str!("../../presets/ex4.json")),
        _ => None,
    }
}

fn parse_field(text: &str, names: &[&str], field: &str) -> Result<Polynomial, ModelError> {
    parse_poly(text, names).map_err(|e| match e {
        PolyError::UnknownVariable(v) => ModelError::UnknownVariable(v),
        source => ModelError::Poly {
            context: field.to_string(),
            source,
        },
    })
}

/// Parses and validates a problem file.
pub fn parse_problem(text: &str) -> Result<Problem, ModelError> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
    if file.degree > MAX_DEGREE {
        return Err(ModelError::DegreeOverflow(file.degree));
    }
    let registry = VariableRegistry::new(file.states.clone(), file.inputs.names.clone())?;
    let names = registry.names();
    let m = registry.m_inputs();
    let inputs = match (&file.inputs.bounds_box, &file.inputs.h) {
        (Some(_), Some(_)) => {
            return Err(ModelError::Schema(
                "inputs: give either `box` or `h`, not both".into(),
            ))
        }
        (None, None) if m == 0 => InputSet::Empty,
        (None, None) => {
            return Err(ModelError::Schema(
                "inputs: `box` or `h` is required".into(),
            ))
        }
        (Some(b), None) => InputSet::Box(InputBox {
            intervals: b.iter().map(|i| (i[0], i[1])).collect(),
        }),
        (None, Some(h)) => InputSet::Semialgebraic {
            set: SemialgebraicSet::new(parse_field(h, &names, "inputs.h")?),
            bounds: match &file.inputs.bounds {
                Some(b) => b.iter().map(|i| (i[0], i[1])).collect(),
                None => vec![(-1.0, 1.0); m],
            },
        },
    };
    if file.inputs.bounds.is_some() && file.inputs.h.is_none() {
        return Err(ModelError::Schema(
            "inputs.bounds only applies with inputs.h".into(),
        ));
    }
    let dynamics = file
        .dynamics
        .iter()
        .enumerate()
        .map(|(i, d)| parse_field(d, &names, &format!("dynamics[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = OcpSpec {
        running_cost: parse_field(&file.running_cost, &names, "running_cost")?,
        terminal_cost: parse_field(&file.terminal_cost, &names, "terminal_cost")?,
        dynamics,
        omega: SemialgebraicSet::new(parse_field(&file.omega_h, &names, "omega_h")?),
        inputs,
        horizon: file.horizon_t,
        registry,
    };
    spec.validate()?;
    let mut config = SynthesisConfig::new(
        file.lambda_box.iter().map(|i| (i[0], i[1])).collect(),
        file.weight,
        file.degree,
    );
    config.scaling = file.scaling.unwrap_or_default();
    config.boundary_multipliers = file.boundary_multipliers;
    config.dissipation_multipliers = file.dissipation_multipliers;
    config.validate(&spec)?;
    if let Some(x0) = &file.x0 {
        if x0.len() != spec.n_states() {
            return Err(ModelError::Invalid("x0 dimension mismatch".into()));
        }
    }
    Ok(Problem {
        spec,
        config,
        x0: file.x0,
    })
}

/// Writes a problem in the file format accepted by [`parse_problem`].
pub fn serialize_problem(problem: &Problem) -> String {
    let spec = &problem.spec;
    let names = spec.registry.names();
    let pair = |v: &[(f64, f64)]| v.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>();
    let inputs = match &spec.inputs {
        InputSet::Empty => InputsFile {
            names: vec![],
            bounds_box: None,
            h: None,
            bounds: None,
        },
        InputSet::Box(b) => InputsFile {
            names: spec.registry.inputs.clone(),
            bounds_box: Some(pair(&b.intervals)),
            h: None,
            bounds: None,
        },
        InputSet::Semialgebraic { set, bounds } => InputsFile {
            names: spec.registry.inputs.clone(),
            bounds_box: None,
            h: Some(format_poly(&set.defining_poly, &names)),
            bounds: Some(pair(bounds)),
        },
    };
    let file = ProblemFile {
        states: spec.registry.states.clone(),
        inputs,
        running_cost: format_poly(&spec.running_cost, &names),
        terminal_cost: format_poly(&spec.terminal_cost, &names),
        dynamics: spec
            .dynamics
            .iter()
            .map(|f| format_poly(f, &names))
            .collect(),
        omega_h: format_poly(&spec.omega.defining_poly, &names),
        horizon_t: spec.horizon,
        lambda_box: pair(&problem.config.lambda_box),
        weight: problem.config.weight,
        degree: problem.config.degree,
        x0: problem.x0.clone(),
        scaling: (problem.config.scaling != DomainScaling::default())
            .then_some(problem.config.scaling),
        boundary_multipliers: problem.config.boundary_multipliers.clone(),
        dissipation_multipliers: problem.config.dissipation_multipliers.clone(),
    };
    serde_json::to_string_pretty(&file).expect("problem file serializes")
}
