//! JSON run configuration. Every schema violation names its JSON path.

use serde_json::{Map, Value};

use crate::algebra::{AlgebraTables, SemidirectAlgebra};
use crate::dynamics::{NoiseChannel, NoiseSpec};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{gamma_family_gain, KkData, SemidirectModel};
use crate::presets;
use crate::satellite::{build_satellite, SatelliteParams};

pub const DEFAULT_SEED: u64 = 0x5eed;

/// Where the model came from; sweeps rebuild it per grid value.
#[derive(Debug, Clone)]
pub enum ModelSource {
    Satellite(SatelliteParams),
    Preset { name: String, parameter: f64 },
    Inline(Box<InlineModel>),
}

#[derive(Debug, Clone)]
pub struct InlineModel {
    pub algebra: SemidirectAlgebra,
    pub kk: KkData,
    pub gain: GainSpec,
}

#[derive(Debug, Clone)]
pub enum GainSpec {
    Matrix(Matrix),
    Gamma(f64),
}

impl ModelSource {
    /// Name of the scalar a sweep varies.
    pub fn parameter_name(&self) -> &'static str {
        match self {
            ModelSource::Satellite(_) => "k",
            ModelSource::Preset { name, .. } if name == "semidirect_dense" => "scale",
            ModelSource::Preset { .. } => "gamma",
            ModelSource::Inline(_) => "gamma",
        }
    }

    pub fn satellite_params(&self) -> Option<SatelliteParams> {
        match self {
            ModelSource::Satellite(p) => Some(*p),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<SemidirectModel> {
        match self {
            ModelSource::Satellite(p) => build_satellite(p),
            ModelSource::Preset { name, parameter } => presets::named(name, *parameter)
                .unwrap_or_else(|| Err(Error::config("$.model.preset", format!("unknown preset {name:?}")))),
            ModelSource::Inline(m) => {
                let gain = match &m.gain {
                    GainSpec::Matrix(c) => c.clone(),
                    GainSpec::Gamma(g) => gamma_family_gain(&m.kk, *g)?,
                };
                SemidirectModel::new(m.algebra.clone(), m.kk.clone(), gain)
            }
        }
    }

    /// Same source with the sweep parameter replaced.
    pub fn with_parameter(&self, value: f64) -> Result<Self> {
        Ok(match self {
            ModelSource::Satellite(p) => ModelSource::Satellite(p.with_k(value)),
            ModelSource::Preset { name, .. } => ModelSource::Preset {
                name: name.clone(),
                parameter: value,
            },
            ModelSource::Inline(m) => ModelSource::Inline(Box::new(InlineModel {
                gain: GainSpec::Gamma(value),
                ..(**m).clone()
            })),
        })
    }
}

#[derive(Debug, Clone)]
pub struct StabilityConfig {
    pub k_values: Vec<f64>,
    pub perturbation: f64,
    pub t_end: f64,
    pub omega_bar: f64,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub values: Vec<f64>,
    pub cell_dir: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StochasticConfig {
    pub noise: NoiseSpec,
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSource,
    pub dt: f64,
    pub t_end: f64,
    /// Initial momenta; absent only for models without defaults, in which
    /// case commands that integrate fail with a path diagnostic.
    pub nu0: Option<Vector>,
    pub qt0: Option<Vector>,
    pub track_group: bool,
    pub controlled: bool,
    pub seed: u64,
    pub tolerance: Option<f64>,
    pub out: Option<String>,
    pub stability: StabilityConfig,
    pub sweep: Option<SweepConfig>,
    pub stochastic: Option<StochasticConfig>,
}

struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Obj<'a> {
    fn new(value: &'a Value, path: &str, allowed: &[&str]) -> Result<Self> {
        let map = value
            .as_object()
            .ok_or_else(|| Error::config(path, "expected an object"))?;
        if let Some(bad) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::config(format!("{path}.{bad}"), "unknown field"));
        }
        Ok(Self {
            map,
            path: path.to_string(),
        })
    }

    fn at(&self, key: &str) -> String {
        format!("{}.{key}", self.path)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| number(v, &self.at(key)))
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| number(v, &self.at(key))).transpose()
    }

    fn opt_vec(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| numbers(v, &self.at(key))).transpose()
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(Error::config(self.at(key), "expected a boolean")),
        }
    }

    fn opt_str(&self, key: &str) -> Result<Option<&'a str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(Error::config(self.at(key), "expected a string")),
        }
    }

    fn opt_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.as_u64()
                    .ok_or_else(|| Error::config(self.at(key), "expected a nonnegative integer"))
            })
            .transpose()
    }
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::config(path, "expected a finite number"))
}

fn numbers(v: &Value, path: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::config(path, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{i}]")))
        .collect()
}

fn matrix(v: &Value, path: &str) -> Result<Matrix> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::config(path, "expected an array of rows"))?;
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| numbers(r, &format!("{path}[{i}]")))
        .collect::<Result<_>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::config(path, "matrix must be nonempty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::config(
            format!("{path}[{i}]"),
            format!("row has {} entries, expected {ncols}", rows[i].len()),
        ));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn triple(v: &Value, path: &str) -> Result<[f64; 3]> {
    let xs = numbers(v, path)?;
    xs.try_into()
        .map_err(|xs: Vec<f64>| Error::config(path, format!("expected 3 numbers, got {}", xs.len())))
}

/// Wraps a model construction error with the path of the offending block.
fn at_path<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    })
}

fn parse_model(v: &Value) -> Result<ModelSource> {
    const PATH: &str = "$.model";
    if let Value::String(name) = v {
        return parse_model(&serde_json::json!({ "preset": name }));
    }
    let probe = v
        .as_object()
        .ok_or_else(|| Error::config(PATH, "expected a preset name or an object"))?;
    if probe.contains_key("preset") {
        let o = Obj::new(v, PATH, &["preset", "k", "gamma", "scale", "inertia", "rotor"])?;
        let name = o.opt_str("preset")?.ok_or_else(|| Error::config(o.at("preset"), "expected a string"))?;
        if name == "satellite" {
            let mut p = SatelliteParams::reference(o.f64_or("k", 0.7)?);
            if let Some(v) = o.get("inertia") {
                p.inertia = triple(v, &o.at("inertia"))?;
            }
            if let Some(v) = o.get("rotor") {
                p.rotor = triple(v, &o.at("rotor"))?;
            }
            at_path(PATH, p.validate())?;
            return Ok(ModelSource::Satellite(p));
        }
        let (key, default) = match name {
            "semidirect_gamma" | "so3_pair" => ("gamma", 0.2),
            "semidirect_dense" => ("scale", 0.4),
            other => {
                return Err(Error::config(
                    o.at("preset"),
                    format!(
                        "unknown preset {other:?} (expected satellite, semidirect_gamma, semidirect_dense, so3_pair)"
                    ),
                ))
            }
        };
        let parameter = o.f64_or(key, default)?;
        let source = ModelSource::Preset {
            name: name.to_string(),
            parameter,
        };
        at_path(PATH, source.build())?;
        return Ok(source);
    }
    let o = Obj::new(v, PATH, &["algebra", "mu_M", "I0", "A0", "C"])?;
    let algebra = match o.get("algebra") {
        Some(Value::String(name)) => at_path(&o.at("algebra"), SemidirectAlgebra::preset(name))?,
        Some(t @ Value::Object(_)) => {
            let tables: AlgebraTables = serde_json::from_value(t.clone())
                .map_err(|e| Error::config(o.at("algebra"), e.to_string()))?;
            at_path(&o.at("algebra"), SemidirectAlgebra::from_tables(&tables))?
        }
        _ => return Err(Error::config(o.at("algebra"), "expected a preset name or structure tables")),
    };
    let req = |key: &str| {
        o.get(key)
            .ok_or_else(|| Error::config(o.at(key), "missing required field"))
            .and_then(|v| matrix(v, &o.at(key)))
    };
    let kk = at_path(PATH, KkData::new(req("mu_M")?, req("I0")?, req("A0")?))?;
    let gain = match o.get("C") {
        None => GainSpec::Matrix(Matrix::zeros(kk.dim_g(), kk.dim_m())),
        Some(c @ Value::Array(_)) => GainSpec::Matrix(matrix(c, &o.at("C"))?),
        Some(c @ Value::Object(_)) => {
            let g = Obj::new(c, &o.at("C"), &["gamma"])?;
            GainSpec::Gamma(
                g.opt_f64("gamma")?
                    .ok_or_else(|| Error::config(g.at("gamma"), "missing required field"))?,
            )
        }
        Some(_) => return Err(Error::config(o.at("C"), "expected a matrix or {\"gamma\": x}")),
    };
    let source = ModelSource::Inline(Box::new(InlineModel { algebra, kk, gain }));
    at_path(PATH, source.build())?;
    Ok(source)
}

fn parse_noise(v: &Value, seed: u64) -> Result<NoiseSpec> {
    const PATH: &str = "$.noise";
    let arr = v.as_array().ok_or_else(|| Error::config(PATH, "expected an array of channels"))?;
    let channels = arr
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let o = Obj::new(c, &format!("{PATH}[{i}]"), &["epsilon", "seed"])?;
            let epsilon = o
                .opt_f64("epsilon")?
                .ok_or_else(|| Error::config(o.at("epsilon"), "missing required field"))?;
            let seed = o.opt_u64("seed")?.unwrap_or(seed.wrapping_add(i as u64));
            Ok(NoiseChannel { epsilon, seed })
        })
        .collect::<Result<Vec<_>>>()?;
    at_path(PATH, NoiseSpec::new(channels))
}

fn positive(x: f64, path: &str) -> Result<f64> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::config(path, format!("must be positive, got {x}")))
    }
}

fn nonnegative(x: f64, path: &str) -> Result<f64> {
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(Error::config(path, format!("must be nonnegative, got {x}")))
    }
}

const SATELLITE_NU0: [f64; 3] = [0.1, 2.3, 0.05];
const SATELLITE_QT0: f64 = 0.02;

impl RunConfig {
    /// Parses a config document; `seed_override` replaces the config seed.
    pub fn from_json_str(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| {
            Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        Self::from_value(&doc, seed_override)
    }

    pub fn from_value(doc: &Value, seed_override: Option<u64>) -> Result<Self> {
        let o = Obj::new(
            doc,
            "$",
            &[
                "model", "dt", "t_end", "nu0", "qt0", "track_group", "system", "seed", "tolerance", "out",
                "stability", "sweep", "noise", "n_paths",
            ],
        )?;
        let model = parse_model(o.get("model").ok_or_else(|| Error::config("$.model", "missing required field"))?)?;
        let dt = positive(o.f64_or("dt", 1e-3)?, "$.dt")?;
        let t_end = nonnegative(o.f64_or("t_end", 10.0)?, "$.t_end")?;
        let seed = match seed_override {
            Some(s) => s,
            None => o.opt_u64("seed")?.unwrap_or(DEFAULT_SEED),
        };

        let built = model.build()?;
        let (dm, dg) = (built.dim_m(), built.dim_g());
        let defaults = matches!(model, ModelSource::Satellite(_));
        let nu0 = o.opt_vec("nu0")?.or_else(|| defaults.then(|| SATELLITE_NU0.to_vec()));
        let qt0 = o.opt_vec("qt0")?.or_else(|| defaults.then(|| vec![SATELLITE_QT0]));
        if let Some(v) = &nu0 {
            if v.len() != dm {
                return Err(Error::config("$.nu0", format!("expected {dm} entries, got {}", v.len())));
            }
        }
        if let Some(v) = &qt0 {
            if v.len() != dg {
                return Err(Error::config("$.qt0", format!("expected {dg} entries, got {}", v.len())));
            }
        }
        let alg = built.algebra();
        let needs_group = !(alg.rep.is_trivial() && alg.g.is_abelian());
        let track_group = o.bool_or("track_group", needs_group)?;
        let controlled = match o.opt_str("system")? {
            None | Some("forced") => false,
            Some("controlled") => true,
            Some(other) => {
                return Err(Error::config(
                    "$.system",
                    format!("expected \"forced\" or \"controlled\", got {other:?}"),
                ))
            }
        };
        let tolerance = o.opt_f64("tolerance")?.map(|t| nonnegative(t, "$.tolerance")).transpose()?;
        let out = o.opt_str("out")?.map(str::to_string);

        let stability = match o.get("stability") {
            None => StabilityConfig::default(),
            Some(v) => {
                let s = Obj::new(v, "$.stability", &["k_values", "perturbation", "t_end", "omega_bar", "dt"])?;
                let d = StabilityConfig::default();
                StabilityConfig {
                    k_values: s.opt_vec("k_values")?.unwrap_or(d.k_values),
                    perturbation: nonnegative(s.f64_or("perturbation", d.perturbation)?, "$.stability.perturbation")?,
                    t_end: nonnegative(s.f64_or("t_end", d.t_end)?, "$.stability.t_end")?,
                    omega_bar: s.f64_or("omega_bar", d.omega_bar)?,
                    dt: positive(s.f64_or("dt", d.dt)?, "$.stability.dt")?,
                }
            }
        };
        if stability.omega_bar == 0.0 {
            return Err(Error::config("$.stability.omega_bar", "must be nonzero"));
        }

        let sweep = o
            .get("sweep")
            .map(|v| -> Result<SweepConfig> {
                let s = Obj::new(v, "$.sweep", &["values", "cell_dir"])?;
                let values = s
                    .opt_vec("values")?
                    .ok_or_else(|| Error::config("$.sweep.values", "missing required field"))?;
                for (i, x) in values.iter().enumerate() {
                    at_path(&format!("$.sweep.values[{i}]"), model.with_parameter(*x)?.build())?;
                }
                Ok(SweepConfig {
                    values,
                    cell_dir: s.opt_str("cell_dir")?.map(str::to_string),
                })
            })
            .transpose()?;

        let stochastic = o
            .get("noise")
            .map(|v| -> Result<StochasticConfig> {
                Ok(StochasticConfig {
                    noise: parse_noise(v, seed)?,
                    n_paths: o.opt_u64("n_paths")?.unwrap_or(64) as usize,
                    dt,
                    t_end,
                })
            })
            .transpose()?;

        Ok(RunConfig {
            model,
            dt,
            t_end,
            nu0: nu0.map(Vector::from_vec),
            qt0: qt0.map(Vector::from_vec),
            track_group,
            controlled,
            seed,
            tolerance,
            out,
            stability,
            sweep,
            stochastic,
        })
    }
}

impl RunConfig {
    /// `(nu0, qt0)`, required by every command that integrates.
    pub fn initial_momenta(&self) -> Result<(Vector, Vector)> {
        let nu0 = self
            .nu0
            .clone()
            .ok_or_else(|| Error::config("$.nu0", "required for non-satellite models"))?;
        let qt0 = self
            .qt0
            .clone()
            .ok_or_else(|| Error::config("$.qt0", "required for non-satellite models"))?;
        Ok((nu0, qt0))
    }
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            k_values: vec![0.0, 0.3, 0.6, 0.75, 0.9],
            perturbation: 1e-3,
            t_end: 100.0,
            omega_bar: 1.0,
            dt: 5e-3,
        }
    }
}
