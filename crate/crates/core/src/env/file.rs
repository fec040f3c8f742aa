//! TOML model files.
//!
//! ```toml
//! name = "benchmark-A"
//! d = 2
//! u_hat = [1, 0]
//! delta = 0.2
//! s0 = 1.0
//! M = 1.0
//! kappa = 0.3
//!
//! [family]
//! type = "two-point"            # homogeneous | two-point | finite-mixture
//! components = [
//!   { steps = [[1, 0], [-1, 0], [0, 1], [0, -1]], probs = [0.5, 0.1, 0.2, 0.2] },
//!   { steps = [[1, 0], [-1, 0], [0, 1], [0, -1]], probs = [0.3, 0.1, 0.4, 0.2] },
//! ]
//! weights-law = { type = "uniform", lo = 0.0, hi = 1.0 }
//! ```
//!
//! `weights-law` is the mixing law of a two-point family (`uniform`,
//! `point` with `w`, `discrete` with `values`/`probs`) or the component
//! weights of a finite mixture (`categorical` with `probs`). Homogeneous
//! families have exactly one component and no weights law.

use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::{EnvironmentModel, Family, MixingLaw, StepDistribution};
use crate::error::{Error, Result};
use crate::lattice::{self, Site};

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: Option<String>,
    d: Spanned<usize>,
    u_hat: Spanned<Vec<i64>>,
    delta: Spanned<f64>,
    s0: Spanned<f64>,
    #[serde(rename = "M")]
    m: Spanned<f64>,
    kappa: Spanned<f64>,
    family: Spanned<RawFamily>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawFamily {
    #[serde(rename = "type")]
    kind: Spanned<String>,
    components: Vec<Spanned<RawComponent>>,
    #[serde(rename = "weights-law")]
    weights_law: Option<Spanned<RawWeightsLaw>>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    steps: Vec<Vec<i64>>,
    probs: Vec<f64>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawWeightsLaw {
    #[serde(rename = "type")]
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn at<T>(text: &str, key: &str, span: &Spanned<T>, message: impl Into<String>) -> Error {
    Error::ModelFile {
        location: format!("line {}, key `{key}`", line_of(text, span.span().start)),
        message: message.into(),
    }
}

/// Parses a model file. Errors cite the line and key at fault.
pub fn parse_model(text: &str) -> Result<EnvironmentModel> {
    let raw: RawModel = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => format!("line {}", line_of(text, span.start)),
            None => "file".to_string(),
        };
        Error::ModelFile {
            location,
            message: e.message().to_string(),
        }
    })?;

    let d = *raw.d.get_ref();
    if d < 2 {
        return Err(at(text, "d", &raw.d, format!("dimension must be at least 2, got {d}")));
    }
    if raw.u_hat.get_ref().len() != d {
        return Err(at(text, "u_hat", &raw.u_hat, format!("expected {d} coordinates")));
    }
    let fam = raw.family.get_ref();
    let mut components = Vec::with_capacity(fam.components.len());
    for (i, c) in fam.components.iter().enumerate() {
        let key = format!("family.components[{i}]");
        let rc = c.get_ref();
        if rc.steps.iter().any(|s| s.len() != d) {
            return Err(at(text, &key, c, format!("steps must have {d} coordinates")));
        }
        let steps: Vec<Site> = rc.steps.iter().map(|s| lattice::site(s)).collect();
        let sd = StepDistribution::new(steps, rc.probs.clone()).map_err(|e| at(text, &key, c, e.to_string()))?;
        components.push(sd);
    }

    let kind = fam.kind.get_ref().as_str();
    let need_components = |n: usize| -> Result<()> {
        if components.len() != n {
            return Err(at(
                text,
                "family.components",
                &raw.family,
                format!("family `{kind}` needs {n} components, found {}", components.len()),
            ));
        }
        Ok(())
    };
    let law = fam.weights_law.as_ref();
    let family = match kind {
        "homogeneous" => {
            need_components(1)?;
            Family::Homogeneous {
                law: components.remove(0),
            }
        }
        "two-point" => {
            need_components(2)?;
            let Some(law) = law else {
                return Err(at(text, "family.weights-law", &raw.family, "two-point family needs a weights law"));
            };
            let l = law.get_ref();
            let missing = |f: &str| at(text, &format!("family.weights-law.{f}"), law, format!("missing `{f}`"));
            let mixing = match l.kind.as_str() {
                "uniform" => MixingLaw::Uniform {
                    lo: l.lo.unwrap_or(0.0),
                    hi: l.hi.unwrap_or(1.0),
                },
                "point" => MixingLaw::Point {
                    w: l.w.ok_or_else(|| missing("w"))?,
                },
                "discrete" => MixingLaw::Discrete {
                    values: l.values.clone().ok_or_else(|| missing("values"))?,
                    probs: l.probs.clone().ok_or_else(|| missing("probs"))?,
                },
                other => {
                    return Err(at(
                        text,
                        "family.weights-law.type",
                        law,
                        format!("unknown mixing law `{other}`"),
                    ))
                }
            };
            let b = components.remove(1);
            let a = components.remove(0);
            Family::TwoPointMixture { a, b, mixing }
        }
        "finite-mixture" => {
            let Some(law) = law else {
                return Err(at(text, "family.weights-law", &raw.family, "finite mixture needs categorical weights"));
            };
            let l = law.get_ref();
            if l.kind != "categorical" {
                return Err(at(text, "family.weights-law.type", law, "finite mixtures use `categorical`"));
            }
            let weights = l
                .probs
                .clone()
                .ok_or_else(|| at(text, "family.weights-law.probs", law, "missing `probs`"))?;
            if weights.len() != components.len() {
                return Err(at(text, "family.weights-law.probs", law, "one weight per component required"));
            }
            Family::FiniteMixture { components, weights }
        }
        other => return Err(at(text, "family.type", &fam.kind, format!("unknown family `{other}`"))),
    };

    let name = raw.name.clone().unwrap_or_else(|| "model".into());
    EnvironmentModel::new(
        &name,
        d,
        raw.u_hat.get_ref(),
        *raw.delta.get_ref(),
        *raw.s0.get_ref(),
        *raw.m.get_ref(),
        *raw.kappa.get_ref(),
        family,
    )
    .map_err(|e| Error::ModelFile {
        location: "model".into(),
        message: e.to_string(),
    })
}

/// Renders a model in the file format accepted by [`parse_model`].
pub fn model_to_toml(model: &EnvironmentModel) -> String {
    let comp = |sd: &StepDistribution| {
        Spanned::new(
            0..0,
            RawComponent {
                steps: sd.steps().iter().map(|s| s.to_vec()).collect(),
                probs: sd.probs().to_vec(),
            },
        )
    };
    let empty_law = |kind: &str| RawWeightsLaw {
        kind: kind.into(),
        lo: None,
        hi: None,
        w: None,
        values: None,
        probs: None,
    };
    let (kind, components, law) = match &model.family {
        Family::Homogeneous { law } => ("homogeneous", vec![comp(law)], None),
        Family::TwoPointMixture { a, b, mixing } => {
            let l = match mixing {
                MixingLaw::Uniform { lo, hi } => RawWeightsLaw {
                    lo: Some(*lo),
                    hi: Some(*hi),
                    ..empty_law("uniform")
                },
                MixingLaw::Point { w } => RawWeightsLaw {
                    w: Some(*w),
                    ..empty_law("point")
                },
                MixingLaw::Discrete { values, probs } => RawWeightsLaw {
                    values: Some(values.clone()),
                    probs: Some(probs.clone()),
                    ..empty_law("discrete")
                },
            };
            ("two-point", vec![comp(a), comp(b)], Some(l))
        }
        Family::FiniteMixture { components, weights } => (
            "finite-mixture",
            components.iter().map(comp).collect(),
            Some(RawWeightsLaw {
                probs: Some(weights.clone()),
                ..empty_law("categorical")
            }),
        ),
    };
    let s = |v| Spanned::new(0..0, v);
    let raw = RawModel {
        name: Some(model.name.clone()),
        d: s(model.d),
        u_hat: Spanned::new(0..0, model.u_hat.to_vec()),
        delta: s2(model.delta),
        s0: s2(model.s0),
        m: s2(model.m_bound),
        kappa: s2(model.kappa),
        family: Spanned::new(
            0..0,
            RawFamily {
                kind: Spanned::new(0..0, kind.to_string()),
                components,
                weights_law: law.map(|l| Spanned::new(0..0, l)),
            },
        ),
    };
    toml::to_string(&raw).expect("model serializes")
}

fn s2(v: f64) -> Spanned<f64> {
    Spanned::new(0..0, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{benchmark_a, micro_model};

    const BENCH: &str = r#"
name = "benchmark-A"
d = 2
u_hat = [1, 0]
delta = 0.2
s0 = 1.0
M = 1.0
kappa = 0.3

[family]
type = "two-point"
components = [
  { steps = [[1, 0], [-1, 0], [0, 1], [0, -1]], probs = [0.5, 0.1, 0.2, 0.2] },
  { steps = [[1, 0], [-1, 0], [0, 1], [0, -1]], probs = [0.3, 0.1, 0.4, 0.2] },
]
weights-law = { type = "uniform", lo = 0.0, hi = 1.0 }
"#;

    #[test]
    fn parses_benchmark() {
        let m = parse_model(BENCH).unwrap();
        assert_eq!(m.family, benchmark_a().family);
        assert_eq!(m.u_hat.as_slice(), &[1, 0]);
        assert_eq!(m.kappa, 0.3);
    }

    #[test]
    fn negative_probability_cites_line_and_key() {
        let bad = BENCH.replace("0.3, 0.1, 0.4, 0.2", "0.5, -0.1, 0.4, 0.2");
        let err = parse_model(&bad).unwrap_err().to_string();
        assert!(err.contains("line 14"), "{err}");
        assert!(err.contains("family.components[1]"), "{err}");
    }

    #[test]
    fn syntax_error_cites_line() {
        let bad = BENCH.replace("kappa = 0.3", "kappa = ");
        let err = parse_model(&bad).unwrap_err().to_string();
        assert!(err.contains("line 8"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let bad = BENCH.replace("kappa = 0.3", "kappa = 0.3\ngamma = 1");
        assert!(parse_model(&bad).is_err());
    }

    #[test]
    fn low_dimension_rejected() {
        let bad = BENCH.replace("d = 2", "d = 1");
        let err = parse_model(&bad).unwrap_err().to_string();
        assert!(err.contains("key `d`"), "{err}");
    }

    #[test]
    fn round_trip() {
        for m in [benchmark_a(), micro_model()] {
            let text = model_to_toml(&m);
            let back = parse_model(&text).unwrap();
            assert_eq!(back.family, m.family);
            assert_eq!(back.u_hat, m.u_hat);
        }
    }
}
