//! Built-in test systems.
//!
//! * `example75` — the two-state, one-algebraic-state example with a
//!   semi-saddle and a transverse-saddle pseudo equilibrium on its stability
//!   boundary, parameterized by `p`.
//! * `smib_const`, `smib_freq` — one machine against one load bus, with a
//!   constant or frequency-dependent reactive load.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{ParamSet, Point, ScalarGradient, ScenarioModel, StageModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemId {
    Example75,
    SmibConst,
    SmibFreq,
}

impl SystemId {
    pub const ALL: [SystemId; 3] = [SystemId::Example75, SystemId::SmibConst, SystemId::SmibFreq];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemId::Example75 => "example75",
            SystemId::SmibConst => "smib_const",
            SystemId::SmibFreq => "smib_freq",
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown system `{s}`")))
    }
}

/// Catalog entry: defaults, documentation and a stage builder.
#[derive(Debug, Clone)]
pub struct SystemCatalogEntry {
    pub id: SystemId,
    pub summary: &'static str,
    pub states: &'static str,
    pub defaults: ParamSet,
}

impl SystemCatalogEntry {
    pub fn build(&self, p: &ParamSet) -> Result<ScenarioModel> {
        build(self.id, p)
    }
}

pub fn catalog() -> Vec<SystemCatalogEntry> {
    SystemId::ALL.into_iter().map(entry).collect()
}

pub fn entry(id: SystemId) -> SystemCatalogEntry {
    match id {
        SystemId::Example75 => SystemCatalogEntry {
            id,
            summary: "2-state example: semi-saddle at (p,0,0), transverse-saddle pseudo EP; fault f=[x2,-1]",
            states: "x1, x2 dimensionless; y dimensionless",
            defaults: example75_defaults(),
        },
        SystemId::SmibConst => SystemCatalogEntry {
            id,
            summary: "one machine, one load bus, constant reactive load; bolted bus fault (y=0)",
            states: "x1 rotor angle [rad], x2 frequency deviation [pu]; y bus voltage [pu]",
            defaults: smib_defaults(0.3),
        },
        SystemId::SmibFreq => SystemCatalogEntry {
            id,
            summary: "one machine, one load bus, reactive load Ql(1+x2); bolted bus fault (y=0)",
            states: "x1 rotor angle [rad], x2 frequency deviation [pu]; y bus voltage [pu]",
            defaults: smib_defaults(0.5).with_active("M").expect("M present"),
        },
    }
}

pub fn build(id: SystemId, p: &ParamSet) -> Result<ScenarioModel> {
    match id {
        SystemId::Example75 => build_example75(p),
        SystemId::SmibConst => build_smib(p, LoadModel::Constant),
        SystemId::SmibFreq => build_smib(p, LoadModel::FrequencyDependent),
    }
}

pub fn example75_defaults() -> ParamSet {
    ParamSet::new().with("p", 0.0).with_active("p").expect("p present")
}

/// `[X=0.5, Pm, E=1, M=1, Dl=1, Dg=1, Ql=0.1]` with `Pm` active.
pub fn smib_defaults(pm: f64) -> ParamSet {
    ParamSet::new()
        .with("X", 0.5)
        .with("Pm", pm)
        .with("E", 1.0)
        .with("M", 1.0)
        .with("Dl", 1.0)
        .with("Dg", 1.0)
        .with("Ql", 0.1)
        .with_active("Pm")
        .expect("Pm present")
}

// ---------------------------------------------------------------------------
// Two-state example (`example75`)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ex75Stage {
    Post,
    Fault,
}

/// `g = x1 y − p y − x2 + y³` in both stages.
///
/// Post-fault `f = [p + 1 − x1 + p y, 2 − x2 + p y²]`, whose algebraic drift
/// is `κ = 2 − y (p − x1 + 1) − x2`; fault-on `f = [x2, −1]`.
#[derive(Debug, Clone)]
pub struct Example75 {
    stage: Ex75Stage,
    ip: usize,
}

impl Example75 {
    fn pval(&self, p: &ParamSet) -> f64 {
        p.value_at(self.ip)
    }

    fn active(&self, p: &ParamSet) -> bool {
        p.active_index() == Some(self.ip)
    }
}

impl StageModel for Example75 {
    fn n(&self) -> usize {
        2
    }
    fn m(&self) -> usize {
        1
    }

    fn f(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        let (pv, y) = (self.pval(p), y[0]);
        match self.stage {
            Ex75Stage::Post => Vector::from_vec(vec![pv + 1.0 - x[0] + pv * y, 2.0 - x[1] + pv * y * y]),
            Ex75Stage::Fault => Vector::from_vec(vec![x[1], -1.0]),
        }
    }

    fn g(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        let y = y[0];
        Vector::from_element(1, x[0] * y - self.pval(p) * y - x[1] + y * y * y)
    }

    fn f_x(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Matrix {
        match self.stage {
            Ex75Stage::Post => Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            Ex75Stage::Fault => Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        }
    }

    fn f_y(&self, _x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        let pv = self.pval(p);
        match self.stage {
            Ex75Stage::Post => Matrix::from_column_slice(2, 1, &[pv, 2.0 * pv * y[0]]),
            Ex75Stage::Fault => Matrix::zeros(2, 1),
        }
    }

    fn f_p(&self, _x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        if !self.active(p) || self.stage == Ex75Stage::Fault {
            return Vector::zeros(2);
        }
        Vector::from_vec(vec![1.0 + y[0], y[0] * y[0]])
    }

    fn g_x(&self, _x: &Vector, y: &Vector, _p: &ParamSet) -> Matrix {
        Matrix::from_row_slice(1, 2, &[y[0], -1.0])
    }

    fn g_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        Matrix::from_element(1, 1, self.delta(x, y, p).expect("closed form"))
    }

    fn g_p(&self, _x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        let d = if self.active(p) { -y[0] } else { 0.0 };
        Vector::from_element(1, d)
    }

    fn delta(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Option<f64> {
        Some(3.0 * y[0] * y[0] - self.pval(p) + x[0])
    }

    fn delta_gradient(&self, _x: &Vector, y: &Vector, p: &ParamSet) -> Option<ScalarGradient> {
        Some(ScalarGradient {
            dx: Vector::from_vec(vec![1.0, 0.0]),
            dy: Vector::from_element(1, 6.0 * y[0]),
            dp: if self.active(p) { -1.0 } else { 0.0 },
        })
    }
}

/// Closed-form `κ` of the post-fault stage.
pub fn example75_kappa(pt: &Point, p: f64) -> f64 {
    2.0 - pt.y[0] * (p - pt.x[0] + 1.0) - pt.x[1]
}

/// Closed-form tangency indicator `(∂Δ/∂y)·κ` of the post-fault stage.
pub fn example75_indicator(pt: &Point, p: f64) -> f64 {
    let (x1, x2, y) = (pt.x[0], pt.x[1], pt.y[0]);
    12.0 * y + 6.0 * x1 * y * y - (6.0 * x2 * y + 6.0 * p * y * y + 6.0 * y * y)
}

/// Post-fault SEP `(1 + 2p, 2 + p, 1)`.
pub fn example75_sep(p: f64) -> Point {
    Point::from_slices(&[1.0 + 2.0 * p, 2.0 + p], &[1.0])
}

pub fn build_example75(p: &ParamSet) -> Result<ScenarioModel> {
    let ip = p.require("p")?;
    let post: Arc<dyn StageModel> = Arc::new(Example75 { stage: Ex75Stage::Post, ip });
    let fault: Arc<dyn StageModel> = Arc::new(Example75 { stage: Ex75Stage::Fault, ip });
    ScenarioModel::new("example75", post.clone(), fault, post, example75_sep(p.value_at(ip)))
}

// ---------------------------------------------------------------------------
// Single machine, single load bus

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadModel {
    Constant,
    FrequencyDependent,
}

#[derive(Debug, Clone, Copy)]
struct SmibIdx {
    x: usize,
    pm: usize,
    e: usize,
    m: usize,
    dl: usize,
    dg: usize,
    ql: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    X,
    Pm,
    E,
    M,
    Dl,
    Dg,
    Ql,
}

/// `ẋ1 = x2 + (Pm − Pe)/Dl`, `ẋ2 = (Pm − Pe − Dg x2)/M` with
/// `Pe = (E y / X) sin x1`.
///
/// Post-fault `g = (E y / X) cos x1 − y²/X − Ql` (times `1 + x2` on `Ql` for
/// the frequency-dependent load); fault-on `g = y`.
#[derive(Debug, Clone)]
pub struct Smib {
    load: LoadModel,
    faulted: bool,
    idx: SmibIdx,
}

struct Vals {
    x: f64,
    pm: f64,
    e: f64,
    m: f64,
    dl: f64,
    dg: f64,
    ql: f64,
}

impl Smib {
    fn vals(&self, p: &ParamSet) -> Vals {
        let i = self.idx;
        Vals {
            x: p.value_at(i.x),
            pm: p.value_at(i.pm),
            e: p.value_at(i.e),
            m: p.value_at(i.m),
            dl: p.value_at(i.dl),
            dg: p.value_at(i.dg),
            ql: p.value_at(i.ql),
        }
    }

    fn active(&self, p: &ParamSet) -> Option<Param> {
        let a = p.active_index()?;
        let i = self.idx;
        [
            (i.x, Param::X),
            (i.pm, Param::Pm),
            (i.e, Param::E),
            (i.m, Param::M),
            (i.dl, Param::Dl),
            (i.dg, Param::Dg),
            (i.ql, Param::Ql),
        ]
        .into_iter()
        .find(|(k, _)| *k == a)
        .map(|(_, q)| q)
    }

    fn load_factor(&self, x2: f64) -> f64 {
        match self.load {
            LoadModel::Constant => 1.0,
            LoadModel::FrequencyDependent => 1.0 + x2,
        }
    }
}

impl StageModel for Smib {
    fn n(&self) -> usize {
        2
    }
    fn m(&self) -> usize {
        1
    }

    fn f(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        let v = self.vals(p);
        let pe = v.e * y[0] / v.x * x[0].sin();
        Vector::from_vec(vec![x[1] + (v.pm - pe) / v.dl, (v.pm - pe - v.dg * x[1]) / v.m])
    }

    fn g(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        if self.faulted {
            return y.clone();
        }
        let v = self.vals(p);
        let y = y[0];
        Vector::from_element(1, v.e * y / v.x * x[0].cos() - y * y / v.x - v.ql * self.load_factor(x[1]))
    }

    fn f_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        let v = self.vals(p);
        let pe_x1 = v.e * y[0] / v.x * x[0].cos();
        Matrix::from_row_slice(2, 2, &[-pe_x1 / v.dl, 1.0, -pe_x1 / v.m, -v.dg / v.m])
    }

    fn f_y(&self, x: &Vector, _y: &Vector, p: &ParamSet) -> Matrix {
        let v = self.vals(p);
        let pe_y = v.e / v.x * x[0].sin();
        Matrix::from_column_slice(2, 1, &[-pe_y / v.dl, -pe_y / v.m])
    }

    fn f_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        let Some(which) = self.active(p) else {
            return Vector::zeros(2);
        };
        let v = self.vals(p);
        let s = x[0].sin();
        let pe = v.e * y[0] / v.x * s;
        // ∂Pe/∂q for the active q
        let pe_q = match which {
            Param::E => y[0] / v.x * s,
            Param::X => -v.e * y[0] / (v.x * v.x) * s,
            _ => 0.0,
        };
        let (mut d1, mut d2) = (-pe_q / v.dl, -pe_q / v.m);
        match which {
            Param::Pm => {
                d1 += 1.0 / v.dl;
                d2 += 1.0 / v.m;
            }
            Param::Dl => d1 -= (v.pm - pe) / (v.dl * v.dl),
            Param::M => d2 -= (v.pm - pe - v.dg * x[1]) / (v.m * v.m),
            Param::Dg => d2 -= x[1] / v.m,
            _ => {}
        }
        Vector::from_vec(vec![d1, d2])
    }

    fn g_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        if self.faulted {
            return Matrix::zeros(1, 2);
        }
        let v = self.vals(p);
        let dq = match self.load {
            LoadModel::Constant => 0.0,
            LoadModel::FrequencyDependent => -v.ql,
        };
        Matrix::from_row_slice(1, 2, &[-v.e * y[0] / v.x * x[0].sin(), dq])
    }

    fn g_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        Matrix::from_element(1, 1, self.delta(x, y, p).expect("closed form"))
    }

    fn g_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        if self.faulted {
            return Vector::zeros(1);
        }
        let v = self.vals(p);
        let (c, y) = (x[0].cos(), y[0]);
        let d = match self.active(p) {
            Some(Param::E) => y * c / v.x,
            Some(Param::X) => -v.e * y * c / (v.x * v.x) + y * y / (v.x * v.x),
            Some(Param::Ql) => -self.load_factor(x[1]),
            _ => 0.0,
        };
        Vector::from_element(1, d)
    }

    fn delta(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Option<f64> {
        if self.faulted {
            return Some(1.0);
        }
        let v = self.vals(p);
        Some(v.e / v.x * x[0].cos() - 2.0 * y[0] / v.x)
    }

    fn delta_gradient(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Option<ScalarGradient> {
        if self.faulted {
            return Some(ScalarGradient { dx: Vector::zeros(2), dy: Vector::zeros(1), dp: 0.0 });
        }
        let v = self.vals(p);
        let c = x[0].cos();
        let dp = match self.active(p) {
            Some(Param::E) => c / v.x,
            Some(Param::X) => -v.e * c / (v.x * v.x) + 2.0 * y[0] / (v.x * v.x),
            _ => 0.0,
        };
        Some(ScalarGradient {
            dx: Vector::from_vec(vec![-v.e / v.x * x[0].sin(), 0.0]),
            dy: Vector::from_element(1, -2.0 / v.x),
            dp,
        })
    }
}

pub fn build_smib(p: &ParamSet, load: LoadModel) -> Result<ScenarioModel> {
    let idx = SmibIdx {
        x: p.require("X")?,
        pm: p.require("Pm")?,
        e: p.require("E")?,
        m: p.require("M")?,
        dl: p.require("Dl")?,
        dg: p.require("Dg")?,
        ql: p.require("Ql")?,
    };
    let post: Arc<dyn StageModel> = Arc::new(Smib { load, faulted: false, idx });
    let fault: Arc<dyn StageModel> = Arc::new(Smib { load, faulted: true, idx });
    let name = match load {
        LoadModel::Constant => "smib_const",
        LoadModel::FrequencyDependent => "smib_freq",
    };
    // stable branch: small angle, high voltage
    ScenarioModel::new(name, post.clone(), fault, post, Point::from_slices(&[0.2, 0.0], &[0.9]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derivative_consistency, eval_delta, eval_delta_det, eval_kappa, eval_semi_singular_indicator};

    #[test]
    fn ids_round_trip() {
        for id in SystemId::ALL {
            assert_eq!(id.as_str().parse::<SystemId>().unwrap(), id);
        }
        assert!("ieee14".parse::<SystemId>().is_err());
    }

    #[test]
    fn example75_printed_fields() {
        let p = example75_defaults();
        let sc = build_example75(&p).unwrap();
        let origin = Point::from_slices(&[0.0, 0.0], &[0.0]);
        let pep = Point::from_slices(&[-3.0, -2.0], &[1.0]);
        assert_eq!(eval_delta(sc.post.as_ref(), &origin, &p).unwrap(), 0.0);
        assert_eq!(eval_delta(sc.post.as_ref(), &pep, &p).unwrap(), 0.0);
        assert_eq!(eval_kappa(sc.post.as_ref(), &pep, &p).unwrap()[0], 0.0);
        assert_eq!(eval_kappa(sc.post.as_ref(), &origin, &p).unwrap()[0], 2.0);
        let q = Point::from_slices(&[0.1, 0.0], &[0.1]);
        let ind = eval_semi_singular_indicator(sc.post.as_ref(), &q, &p).unwrap();
        assert!((ind - 1.146).abs() < 1e-12);
    }

    #[test]
    fn smib_delta_example() {
        let p = smib_defaults(0.3);
        let sc = build_smib(&p, LoadModel::Constant).unwrap();
        let pt = Point::from_slices(&[0.0, 0.0], &[0.25]);
        assert_eq!(eval_delta(sc.post.as_ref(), &pt, &p).unwrap(), 1.0);
        assert_eq!(eval_delta_det(sc.fault.as_ref(), &pt, &p).unwrap(), 1.0);
    }

    #[test]
    fn derivatives_consistent_for_every_active_parameter() {
        for load in [LoadModel::Constant, LoadModel::FrequencyDependent] {
            let base = smib_defaults(0.4);
            let sc = build_smib(&base, load).unwrap();
            let pt = Point::from_slices(&[0.7, 0.3], &[0.6]);
            for name in ["X", "Pm", "E", "M", "Dl", "Dg", "Ql"] {
                let p = base.clone().with_active(name).unwrap();
                for stage in [&sc.post, &sc.fault] {
                    let err = derivative_consistency(stage.as_ref(), &pt, &p);
                    assert!(err < 1e-7, "{name}: {err}");
                }
            }
        }
    }
}
