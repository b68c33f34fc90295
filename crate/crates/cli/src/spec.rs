//! Experiment spec files: TOML with a `spec_version` key. Unknown keys are
//! rejected and every error carries the line it refers to.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use passive_sgd::transfer::{ExperimentSpec, Jump, JumpSpec, Scenario, VariantSpec};
use passive_sgd::{Constraint, DensityFamily, KernelFamily, KernelSpec, MultiplierSign, NoiseModel, Variant};
use serde::Deserialize;
use toml::Spanned;

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecError {
    pub path: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.path, self.line, self.column, self.message)
    }
}

impl std::error::Error for SpecError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    spec_version: Spanned<u32>,
    name: String,
    scenario: Scenario,
    minimizer: Spanned<Vec<f64>>,
    initial: Option<Spanned<Vec<f64>>>,
    iterations: Spanned<usize>,
    #[serde(default = "one")]
    trials: Spanned<usize>,
    seed: Option<u64>,
    stride: Option<Spanned<usize>>,
    constraint: Option<Spanned<ConstraintFile>>,
    #[serde(default)]
    noise: NoiseFile,
    sampling: SamplingFile,
    #[serde(rename = "variant")]
    variants: Spanned<Vec<Spanned<VariantFile>>>,
    jump: Option<Spanned<JumpFile>>,
}

fn one() -> Spanned<usize> {
    Spanned::new(0..0, 1)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintFile {
    direction: Vec<f64>,
    rhs: f64,
    multiplier: f64,
    #[serde(default)]
    sign: MultiplierSign,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum NoiseKind {
    #[default]
    None,
    IidGaussian,
    Ar1,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseFile {
    #[serde(default)]
    kind: NoiseKind,
    scale: Option<f64>,
    rho: Option<f64>,
    innovation: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingFile {
    family: DensityFamily,
    scales: Spanned<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelFile {
    family: KernelFamily,
    bandwidth: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantFile {
    variant: Variant,
    step_sizes: Spanned<Vec<f64>>,
    kernel: KernelFile,
    batch_size: usize,
    #[serde(default = "one_usize")]
    iteration_factor: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum JumpKind {
    Parameter,
    DensityScale,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpFile {
    iteration: Spanned<usize>,
    kind: JumpKind,
    minimizer: Option<Vec<f64>>,
    scale: Option<f64>,
}

/// A parsed spec plus the run settings it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSpec {
    pub experiment: ExperimentSpec,
    pub seed: Option<u64>,
    pub stride: Option<usize>,
}

struct Ctx<'a> {
    path: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn at(&self, span: Range<usize>, message: impl Into<String>) -> SpecError {
        let start = span.start.min(self.text.len());
        let before = &self.text[..start];
        let line = before.matches('\n').count() + 1;
        let column = start - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        SpecError {
            path: self.path.to_string(),
            line,
            column,
            message: message.into(),
        }
    }
}

pub fn load(path: &Path) -> Result<LoadedSpec, SpecError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| SpecError {
        path: name.clone(),
        line: 0,
        column: 0,
        message: format!("cannot read spec: {e}"),
    })?;
    parse(&text, &name)
}

pub fn parse(text: &str, path: &str) -> Result<LoadedSpec, SpecError> {
    let cx = Ctx { path, text };
    let file: SpecFile = toml::from_str(text).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        cx.at(span, e.message().trim().to_string())
    })?;

    if *file.spec_version.get_ref() != SPEC_VERSION {
        return Err(cx.at(
            file.spec_version.span(),
            format!("unsupported spec_version {}, expected {SPEC_VERSION}", file.spec_version.get_ref()),
        ));
    }
    let minimizer = file.minimizer.get_ref().clone();
    let n = minimizer.len();
    if n == 0 {
        return Err(cx.at(file.minimizer.span(), "minimizer must not be empty"));
    }
    let initial = match &file.initial {
        Some(s) if s.get_ref().len() != n => {
            return Err(cx.at(s.span(), format!("initial has {} entries, minimizer has {n}", s.get_ref().len())))
        }
        Some(s) => s.get_ref().clone(),
        None => vec![0.0; n],
    };
    if *file.iterations.get_ref() == 0 {
        return Err(cx.at(file.iterations.span(), "iterations must be at least 1"));
    }
    if *file.trials.get_ref() == 0 {
        return Err(cx.at(file.trials.span(), "trials must be at least 1"));
    }
    if let Some(s) = &file.stride {
        if *s.get_ref() == 0 {
            return Err(cx.at(s.span(), "stride must be at least 1"));
        }
    }
    let scales = file.sampling.scales.get_ref().clone();
    if scales.is_empty() {
        return Err(cx.at(file.sampling.scales.span(), "scale list is empty"));
    }
    if let Some(bad) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(cx.at(file.sampling.scales.span(), format!("scale {bad} must be positive")));
    }
    let constraint = match &file.constraint {
        Some(c) => {
            let v = c.get_ref();
            if v.direction.len() != n {
                return Err(cx.at(c.span(), format!("direction has {} entries, minimizer has {n}", v.direction.len())));
            }
            Some(
                Constraint::new(v.direction.clone(), v.rhs, v.multiplier, v.sign)
                    .map_err(|e| cx.at(c.span(), e.to_string()))?,
            )
        }
        None => None,
    };
    let noise = match file.noise.kind {
        NoiseKind::None => NoiseModel::None,
        NoiseKind::IidGaussian => NoiseModel::IidGaussian {
            scale: file.noise.scale.unwrap_or(1.0),
        },
        NoiseKind::Ar1 => NoiseModel::Ar1 {
            rho: file.noise.rho.unwrap_or(0.0),
            innovation: file.noise.innovation.unwrap_or(1.0),
        },
    };
    noise.validate().map_err(|e| cx.at(0..0, e.to_string()))?;

    if file.variants.get_ref().is_empty() {
        return Err(cx.at(file.variants.span(), "at least one [[variant]] is required"));
    }
    let mut variants = Vec::new();
    for v in file.variants.get_ref() {
        let vf = v.get_ref();
        if vf.step_sizes.get_ref().is_empty() {
            return Err(cx.at(vf.step_sizes.span(), "step_sizes is empty"));
        }
        if let Some(bad) = vf.step_sizes.get_ref().iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(cx.at(vf.step_sizes.span(), format!("step size {bad} must be positive")));
        }
        let kernel = KernelSpec::new(vf.kernel.family, n, vf.kernel.bandwidth).map_err(|e| cx.at(v.span(), e.to_string()))?;
        if vf.batch_size == 0 || vf.iteration_factor == 0 {
            return Err(cx.at(v.span(), "batch_size and iteration_factor must be at least 1"));
        }
        variants.push(VariantSpec {
            variant: vf.variant,
            step_sizes: vf.step_sizes.get_ref().clone(),
            kernel,
            batch_size: vf.batch_size,
            iteration_factor: vf.iteration_factor,
        });
    }
    let jump = match &file.jump {
        Some(j) => {
            let jf = j.get_ref();
            if *jf.iteration.get_ref() >= *file.iterations.get_ref() {
                return Err(cx.at(jf.iteration.span(), "jump iteration must be below iterations"));
            }
            let jump = match (&jf.kind, &jf.minimizer, jf.scale) {
                (JumpKind::Parameter, Some(m), None) if m.len() == n => Jump::Parameter { minimizer: m.clone() },
                (JumpKind::DensityScale, None, Some(s)) if s > 0.0 && s.is_finite() => Jump::DensityScale { scale: s },
                (JumpKind::Parameter, ..) => {
                    return Err(cx.at(j.span(), format!("parameter jump needs `minimizer` with {n} entries and no `scale`")))
                }
                (JumpKind::DensityScale, ..) => {
                    return Err(cx.at(j.span(), "density_scale jump needs a positive `scale` and no `minimizer`"))
                }
            };
            Some(JumpSpec {
                iteration: *jf.iteration.get_ref(),
                jump,
            })
        }
        None => None,
    };
    if jump.is_some() && file.scenario != Scenario::JumpTracking {
        return Err(cx.at(file.jump.as_ref().map(|j| j.span()).unwrap_or(0..0), "[jump] is only valid for scenario = \"jump_tracking\""));
    }

    let experiment = ExperimentSpec {
        name: file.name,
        scenario: file.scenario,
        minimizer,
        constraint,
        noise,
        variants,
        density_family: file.sampling.family,
        scales,
        trials: *file.trials.get_ref(),
        iterations: *file.iterations.get_ref(),
        initial,
        jump,
    };
    experiment.validate().map_err(|e| cx.at(0..0, e.to_string()))?;
    Ok(LoadedSpec {
        experiment,
        seed: file.seed,
        stride: file.stride.map(|s| *s.get_ref()),
    })
}
