//! INI run configuration.
//!
//! ```ini
//! [scenario]
//! system = smib_const        ; example75 | smib_const | smib_freq
//! load = constant            ; smib only: constant | frequency_dependent
//! t_cl = 1.2                 ; optional clearing time for `run`
//!
//! [params]
//! Pm = 0.3                   ; any model parameter
//! active = Pm                ; parameter the sensitivities refer to
//!
//! [solver]
//! dt = 1e-3
//! newton_tol = 1e-10
//! newton_max_iter = 50
//! delta_floor = 1e-8
//! t_max = 60
//!
//! [cct]
//! bracket_low = 0
//! bracket_high = 3
//! cct_tol = 1e-6
//! fd_delta = 1e-3
//! oracle_tol = 1e-7
//!
//! [sweep]
//! parameter = Pm
//! from = 0.3
//! to = 0.5
//! steps = 21
//! tolerance = 0.02
//!
//! [portrait]
//! x1 = -4, 2, 7              ; min, max, count of grid seeds
//! x2 = -3, 3, 7
//! horizon = 2
//! trace = y1, -1.5, 1.5, 301 ; scanned coordinate, min, max, count
//! guesses = 0.05 0.02 0.02; -2.8 -1.9 1.05
//!
//! [output]
//! dir = out
//! ```
//!
//! Every key is optional except `scenario.system`; unknown sections or keys
//! are rejected so typos surface as configuration errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use cctsens::cct::{CctConfig, TailExtrapolation};
use cctsens::systems::{entry, LoadModel, SystemId};
use cctsens::{ParamSet, Point, ScenarioModel};
use ini::{Ini, Properties};

use crate::error::{CliError, CliResult};

/// Grid of a single coordinate: `count` evenly spaced values in `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            k => (0..k).map(|i| self.min + (self.max - self.min) * i as f64 / (k - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub parameter: String,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    /// Relative formula-vs-oracle tolerance.
    pub tolerance: f64,
}

impl SweepConfig {
    pub fn values(&self) -> Vec<f64> {
        Axis { min: self.from, max: self.to, count: self.steps }.values()
    }
}

/// Coordinate scanned while tracing the singular surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceCoord {
    X(usize),
    Y(usize),
}

impl FromStr for TraceCoord {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        let s = s.trim();
        let idx = |rest: &str| -> CliResult<usize> {
            match rest.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => Err(CliError::Config(format!("bad trace coordinate `{s}` (use x1, x2, y1, ...)"))),
            }
        };
        if let Some(rest) = s.strip_prefix('x') {
            Ok(TraceCoord::X(idx(rest)?))
        } else if let Some(rest) = s.strip_prefix('y') {
            Ok(TraceCoord::Y(idx(rest)?))
        } else {
            Err(CliError::Config(format!("bad trace coordinate `{s}` (use x1, x2, y1, ...)")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitConfig {
    pub x1: Axis,
    pub x2: Axis,
    /// Post-fault integration time per grid seed.
    pub horizon: f64,
    pub trace_coord: TraceCoord,
    pub trace: Axis,
    /// Starting point for the singular-surface continuation.
    pub trace_seed: Point,
    /// Starting guesses for critical-element searches.
    pub guesses: Vec<Point>,
    /// Include the base critical trajectory (needs a CCT computation).
    pub critical: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemId,
    pub params: ParamSet,
    pub t_cl: Option<f64>,
    pub cct: CctConfig,
    pub sweep: Option<SweepConfig>,
    pub portrait: PortraitConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let ini = Ini::load_from_file(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_ini(&ini)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_ini(&ini)
    }

    pub fn build(&self) -> CliResult<ScenarioModel> {
        Ok(entry(self.system).build(&self.params)?)
    }

    /// Parameters with the active one set to `value`.
    pub fn params_at(&self, value: f64) -> CliResult<ParamSet> {
        Ok(self.params.with_active_value(value)?)
    }

    fn from_ini(ini: &Ini) -> CliResult<Self> {
        const SECTIONS: [&str; 7] = ["scenario", "params", "solver", "cct", "sweep", "portrait", "output"];
        for (name, props) in ini.iter() {
            match name {
                Some(s) if SECTIONS.contains(&s) => {}
                None if props.is_empty() => {}
                None => return Err(CliError::Config("keys outside any section".into())),
                Some(s) => return Err(CliError::Config(format!("unknown section [{s}]"))),
            }
        }
        let empty = Properties::new();
        let sec = |name: &str| ini.section(Some(name)).unwrap_or(&empty);

        let scenario = Section::new("scenario", sec("scenario"), &["system", "load", "t_cl"])?;
        let mut system: SystemId = scenario.required("system")?.parse()?;
        if let Some(load) = scenario.get("load") {
            system = match (system, parse_load(load)?) {
                (SystemId::Example75, _) => {
                    return Err(CliError::Config("`load` applies to the machine systems only".into()));
                }
                (_, LoadModel::Constant) => SystemId::SmibConst,
                (_, LoadModel::FrequencyDependent) => SystemId::SmibFreq,
            };
        }
        let t_cl = scenario.opt_f64("t_cl")?;

        let mut params = entry(system).defaults;
        let pr = sec("params");
        for (key, value) in pr.iter() {
            if key == "active" {
                continue;
            }
            params
                .require(key)
                .map_err(|_| CliError::Config(format!("[params] `{key}` is not a parameter of {system}")))?;
            params.set(key, parse_f64("params", key, value)?);
        }
        let sweep_sec = Section::new("sweep", sec("sweep"), &["parameter", "from", "to", "steps", "tolerance"])?;
        let active = pr.get("active").or(sweep_sec.get("parameter"));
        if let Some(name) = active {
            params
                .set_active(name.trim())
                .map_err(|_| CliError::Config(format!("unknown active parameter `{name}`")))?;
        }

        let solver = Section::new(
            "solver",
            sec("solver"),
            &["dt", "newton_tol", "newton_max_iter", "delta_floor", "t_max", "shadow_stride"],
        )?;
        let mut cct = default_cct(system);
        let ic = &mut cct.integrator;
        solver.set_f64("dt", &mut ic.dt)?;
        solver.set_f64("newton_tol", &mut ic.newton_tol)?;
        solver.set_usize("newton_max_iter", &mut ic.newton_max_iter)?;
        solver.set_f64("delta_floor", &mut ic.delta_floor)?;
        solver.set_f64("t_max", &mut ic.t_max)?;
        solver.set_usize("shadow_stride", &mut ic.shadow_stride)?;

        let c = Section::new(
            "cct",
            sec("cct"),
            &[
                "bracket_low",
                "bracket_high",
                "cct_tol",
                "sep_radius",
                "dwell",
                "eps_uep",
                "eps_kappa",
                "cuep_truncation",
                "truncation",
                "tail",
                "fd_delta",
                "oracle_tol",
            ],
        )?;
        c.set_f64("bracket_low", &mut cct.bracket.0)?;
        c.set_f64("bracket_high", &mut cct.bracket.1)?;
        c.set_f64("cct_tol", &mut cct.cct_tol)?;
        c.set_f64("sep_radius", &mut cct.sep_radius)?;
        c.set_f64("dwell", &mut cct.dwell)?;
        c.set_f64("eps_uep", &mut cct.eps_uep)?;
        c.set_f64("eps_kappa", &mut cct.eps_kappa)?;
        c.set_f64("cuep_truncation", &mut cct.cuep_truncation)?;
        c.set_f64("truncation", &mut cct.truncation)?;
        c.set_f64("fd_delta", &mut cct.fd_delta)?;
        c.set_f64("oracle_tol", &mut cct.oracle_tol)?;
        if let Some(t) = c.get("tail") {
            cct.tail = t.parse::<TailExtrapolation>()?;
        }
        cct.validate()?;

        let sweep = if sweep_sec.is_empty() {
            None
        } else {
            let parameter =
                params.active_name().ok_or_else(|| CliError::Config("sweep needs an active parameter".into()))?;
            let s = SweepConfig {
                parameter: parameter.to_string(),
                from: sweep_sec.f64_required("from")?,
                to: sweep_sec.f64_required("to")?,
                steps: sweep_sec.usize_or("steps", 11)?,
                tolerance: sweep_sec.f64_or("tolerance", 0.02)?,
            };
            if s.from.is_nan()
                || s.to.is_nan()
                || s.from >= s.to
                || s.steps < 2
                || s.tolerance.is_nan()
                || s.tolerance <= 0.0
            {
                return Err(CliError::Config("[sweep] needs from < to, steps >= 2, tolerance > 0".into()));
            }
            Some(s)
        };

        let portrait = parse_portrait(system, &params, sec("portrait"))?;

        let output = Section::new("output", sec("output"), &["dir"])?;
        let out_dir = PathBuf::from(output.get("dir").unwrap_or("out"));

        Ok(Self { system, params, t_cl, cct, sweep, portrait, out_dir })
    }
}

/// Per-system CCT settings: the example75 fault needs a wider bracket.
pub fn default_cct(system: SystemId) -> CctConfig {
    let bracket = match system {
        SystemId::Example75 => (0.0, 8.0),
        SystemId::SmibConst => (0.0, 3.0),
        SystemId::SmibFreq => (0.0, 2.0),
    };
    CctConfig { bracket, ..Default::default() }
}

fn parse_load(s: &str) -> CliResult<LoadModel> {
    match s.trim() {
        "constant" => Ok(LoadModel::Constant),
        "frequency_dependent" => Ok(LoadModel::FrequencyDependent),
        other => Err(CliError::Config(format!("unknown load model `{other}`"))),
    }
}

fn parse_f64(section: &str, key: &str, v: &str) -> CliResult<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| CliError::Config(format!("[{section}] `{key}`: `{v}` is not a finite number")))
}

fn parse_list(section: &str, key: &str, v: &str) -> CliResult<Vec<f64>> {
    v.split([',', ' ']).filter(|s| !s.trim().is_empty()).map(|s| parse_f64(section, key, s)).collect()
}

fn parse_axis(key: &str, v: &str) -> CliResult<Axis> {
    match parse_list("portrait", key, v)?.as_slice() {
        &[min, max, count] if count >= 0.0 && count.fract() == 0.0 && min <= max => {
            Ok(Axis { min, max, count: count as usize })
        }
        _ => Err(CliError::Config(format!("[portrait] `{key}` must be `min, max, count`"))),
    }
}

fn parse_point(v: &str, n: usize, m: usize) -> CliResult<Point> {
    let vals = parse_list("portrait", "guesses", v)?;
    if vals.len() != n + m {
        return Err(CliError::Config(format!("[portrait] point `{v}` needs {} coordinates", n + m)));
    }
    Ok(Point::from_slices(&vals[..n], &vals[n..]))
}

fn parse_portrait(system: SystemId, params: &ParamSet, props: &Properties) -> CliResult<PortraitConfig> {
    let s = Section::new("portrait", props, &["x1", "x2", "horizon", "trace", "trace_seed", "guesses", "critical"])?;
    let mut cfg = default_portrait(system, params)?;
    if let Some(v) = s.get("x1") {
        cfg.x1 = parse_axis("x1", v)?;
    }
    if let Some(v) = s.get("x2") {
        cfg.x2 = parse_axis("x2", v)?;
    }
    s.set_f64("horizon", &mut cfg.horizon)?;
    if let Some(v) = s.get("trace") {
        let (coord, rest) = v
            .split_once(',')
            .ok_or_else(|| CliError::Config("[portrait] `trace` must be `coord, min, max, count`".into()))?;
        cfg.trace_coord = coord.parse()?;
        cfg.trace = parse_axis("trace", rest)?;
    }
    if let Some(v) = s.get("trace_seed") {
        cfg.trace_seed = parse_point(v, 2, 1)?;
    }
    if let Some(v) = s.get("guesses") {
        cfg.guesses =
            v.split(';').filter(|g| !g.trim().is_empty()).map(|g| parse_point(g, 2, 1)).collect::<CliResult<_>>()?;
    }
    if let Some(v) = s.get("critical") {
        cfg.critical = match v.trim() {
            "true" | "yes" | "1" => true,
            "false" | "no" | "0" => false,
            other => return Err(CliError::Config(format!("[portrait] `critical`: `{other}` is not a boolean"))),
        };
    }
    Ok(cfg)
}

fn default_portrait(system: SystemId, params: &ParamSet) -> CliResult<PortraitConfig> {
    Ok(match system {
        SystemId::Example75 => {
            let p = params.get("p")?;
            PortraitConfig {
                x1: Axis { min: -4.0, max: 3.0, count: 8 },
                x2: Axis { min: -3.0, max: 4.0, count: 8 },
                horizon: 2.0,
                trace_coord: TraceCoord::Y(0),
                trace: Axis { min: -1.5, max: 1.5, count: 301 },
                trace_seed: Point::from_slices(&[p - 6.75, 6.75], &[-1.5]),
                guesses: vec![
                    Point::from_slices(&[p + 0.05, 0.02], &[0.02]),
                    Point::from_slices(&[p - 2.8, -1.9], &[1.05]),
                ],
                critical: true,
            }
        }
        SystemId::SmibConst | SystemId::SmibFreq => PortraitConfig {
            x1: Axis { min: -1.0, max: 2.5, count: 8 },
            x2: Axis { min: -1.5, max: 1.5, count: 7 },
            horizon: 2.0,
            trace_coord: TraceCoord::X(1),
            trace: Axis { min: -0.5, max: 1.0, count: 151 },
            trace_seed: Point::from_slices(&[1.1, -0.5], &[0.16]),
            guesses: vec![Point::from_slices(&[1.1, 0.0], &[0.25]), Point::from_slices(&[1.1, 0.1], &[0.22])],
            critical: true,
        },
    })
}

/// Section view that rejects unknown keys.
struct Section<'a> {
    name: &'a str,
    props: &'a Properties,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, props: &'a Properties, known: &[&str]) -> CliResult<Self> {
        if let Some((k, _)) = props.iter().find(|(k, _)| !known.contains(k)) {
            return Err(CliError::Config(format!("unknown key `{k}` in [{name}]")));
        }
        Ok(Self { name, props })
    }

    fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.props.get(key)
    }

    fn required(&self, key: &str) -> CliResult<&'a str> {
        self.get(key).ok_or_else(|| CliError::Config(format!("[{}] `{key}` is required", self.name)))
    }

    fn opt_f64(&self, key: &str) -> CliResult<Option<f64>> {
        self.get(key).map(|v| parse_f64(self.name, key, v)).transpose()
    }

    fn f64_required(&self, key: &str) -> CliResult<f64> {
        parse_f64(self.name, key, self.required(key)?)
    }

    fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    fn usize_or(&self, key: &str, default: usize) -> CliResult<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                v.trim().parse().map_err(|_| CliError::Config(format!("[{}] `{key}`: `{v}` is not a count", self.name)))
            }
        }
    }

    fn set_f64(&self, key: &str, slot: &mut f64) -> CliResult<()> {
        if let Some(v) = self.opt_f64(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_usize(&self, key: &str, slot: &mut usize) -> CliResult<()> {
        *slot = self.usize_or(key, *slot)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_system_defaults() {
        let c = RunConfig::parse("[scenario]\nsystem = smib_const\n").unwrap();
        assert_eq!(c.system, SystemId::SmibConst);
        assert_eq!(c.params.get("Pm").unwrap(), 0.3);
        assert_eq!(c.params.active_name(), Some("Pm"));
        assert!(c.sweep.is_none());
        assert_eq!(c.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn load_key_selects_machine_variant() {
        let c = RunConfig::parse("[scenario]\nsystem = smib_const\nload = frequency_dependent\n[params]\nactive = M\n")
            .unwrap();
        assert_eq!(c.system, SystemId::SmibFreq);
        assert_eq!(c.params.active_name(), Some("M"));
    }

    #[test]
    fn sweep_section_defines_grid() {
        let c = RunConfig::parse("[scenario]\nsystem=smib_const\n[sweep]\nparameter=Pm\nfrom=0.3\nto=0.5\nsteps=21\n")
            .unwrap();
        let s = c.sweep.unwrap();
        let v = s.values();
        assert_eq!(v.len(), 21);
        assert_eq!(v[0], 0.3);
        assert_eq!(v[20], 0.5);
        assert!((v[10] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn errors_are_configuration_errors() {
        for text in [
            "[scenario]\n",
            "[scenario]\nsystem = nope\n",
            "[scenario]\nsystem = example75\n[params]\nPm = 1\n",
            "[scenario]\nsystem = example75\n[solver]\ndt = fast\n",
            "[scenario]\nsystem = example75\n[solver]\ndt = -1\n",
            "[scenario]\nsystem = example75\n[bogus]\na = 1\n",
            "[scenario]\nsystem = example75\n[cct]\nbracket_low = 2\nbracket_high = 1\n",
            "[scenario]\nsystem = example75\n[sweep]\nparameter = p\nfrom = 1\nto = 0\n",
            "[scenario]\nsystem = example75\n[sweep]\nparameter = p\nfrom = 0\nto = 1\nsteps = 1\n",
            "[scenario]\nsystem = example75\nload = constant\n",
            "[scenario]\nsystem = example75\n[portrait]\nx1 = 1, 2\n",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn axis_values_cover_endpoints() {
        assert!(Axis { min: 0.0, max: 1.0, count: 0 }.values().is_empty());
        assert_eq!(Axis { min: 2.0, max: 3.0, count: 1 }.values(), vec![2.0]);
        assert_eq!(Axis { min: 0.0, max: 1.0, count: 3 }.values(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn trace_coordinates_parse() {
        assert_eq!("x2".parse::<TraceCoord>().unwrap(), TraceCoord::X(1));
        assert_eq!(" y1".parse::<TraceCoord>().unwrap(), TraceCoord::Y(0));
        assert!("z1".parse::<TraceCoord>().is_err());
        assert!("x0".parse::<TraceCoord>().is_err());
    }
}
