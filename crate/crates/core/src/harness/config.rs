//! Line-oriented run configuration.
//!
//! ```text
//! [domain]
//! L = pi
//! [f]
//! kind = cubic
//! lambda = 1
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::estimates::Tolerance;
use crate::model::{
    ConstantOverrides, DeclaredConstants, DelayCoupling, DelayFn, DelaySpec, Forcing, HistorySpec, ProblemSpec,
    Reaction, TimeProfile,
};
use crate::solver::{Interpolation, SolverConfig};

const SECTIONS: &[(&str, &[&str])] = &[
    ("domain", &["L"]),
    ("f", &["kind", "lambda", "N", "alpha", "a0", "gamma", "coef", "growth", "a1"]),
    ("g", &["kind", "beta", "separated", "amp", "coef", "b0", "b0p", "b1p"]),
    ("delays", &["r"]),
    ("h", &["kind", "linf_bound", "h1_bound"]),
    ("history", &["phi", "profile"]),
    ("solver", &["dt", "T", "n_modes", "n_quad", "interp", "dealias", "oracle_t", "oracle_nodes"]),
    ("estimates", &["q", "tol_rel", "tol_abs", "rho_q_scale", "h2_rate", "h2_held_out", "invariance_eps"]),
    ("output", &["dir", "stride"]),
];

/// Everything needed to rebuild the problem after changing one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInputs {
    pub length: f64,
    pub f: Reaction,
    pub g: DelayCoupling,
    pub separated: bool,
    pub delays: DelaySpec,
    pub h: Forcing,
    pub h_linf: Option<f64>,
    pub h_h1: Option<f64>,
    pub declared: DeclaredConstants,
    pub overrides: ConstantOverrides,
}

impl ProblemInputs {
    pub fn build(&self) -> Result<ProblemSpec> {
        ProblemSpec::new(
            self.length,
            self.f,
            self.g,
            self.separated,
            self.delays.clone(),
            self.h,
            self.h_linf,
            self.h_h1,
            self.declared,
            self.overrides,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatesConfig {
    pub q: f64,
    pub tol: Tolerance,
    pub rho_q_scale: f64,
    pub h2_rate: Option<f64>,
    pub h2_held_out: Option<HistorySpec>,
    pub invariance_eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub t_end: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub inputs: ProblemInputs,
    pub problem: ProblemSpec,
    pub history: HistorySpec,
    pub solver: SolverConfig,
    pub estimates: EstimatesConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Re-validates after a programmatic change of `inputs`, `solver` or `estimates`.
    pub fn rebuilt(mut self) -> Result<Self> {
        self.problem = self.inputs.build()?;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.solver.validate(self.problem.r())?;
        let ex = self.problem.exponents();
        if !(self.estimates.q > ex.q_star) {
            return Err(Error::OutOfTheory { q: self.estimates.q, q_star: ex.q_star });
        }
        if !(self.oracle.t_end > 0.0 && self.oracle.t_end <= 2.0) {
            return Err(Error::semantic("oracle_t", "0 < oracle_t <= 2 required"));
        }
        if self.oracle.nodes < 8 {
            return Err(Error::semantic("oracle_nodes", "at least 8 nodes required"));
        }
        Ok(())
    }
}

/// Parses `pi`, `2pi`, `2*pi`, `pi/2` and ordinary floats.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let pi = std::f64::consts::PI;
    if s == "pi" {
        return Some(pi);
    }
    if let Some(d) = s.strip_prefix("pi/") {
        return d.trim().parse::<f64>().ok().map(|d| pi / d);
    }
    let head = s.strip_suffix("pi")?.trim_end();
    let head = head.strip_suffix('*').unwrap_or(head).trim();
    head.parse::<f64>().ok().map(|k| k * pi)
}

type Sections = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn tokenize(text: &str) -> Result<Sections> {
    let mut out: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Syntax { line: line_no, msg: "unterminated section header".into() })?
                .trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Syntax { line: line_no, msg: format!("unknown section [{name}]") });
            }
            if out.contains_key(name) {
                return Err(Error::Syntax { line: line_no, msg: format!("duplicate section [{name}]") });
            }
            out.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Syntax { line: line_no, msg: "expected `key = value`".into() })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Syntax { line: line_no, msg: "empty key or value".into() });
        }
        let sec = current
            .as_ref()
            .ok_or_else(|| Error::Syntax { line: line_no, msg: "entry outside of a section".into() })?;
        let allowed = SECTIONS.iter().find(|(s, _)| s == sec).unwrap().1;
        let delay_key = sec == "delays" && k.starts_with('r') && k[1..].parse::<usize>().map_or(false, |n| n >= 1);
        if !allowed.contains(&k) && !delay_key {
            return Err(Error::Syntax { line: line_no, msg: format!("unknown key `{k}` in [{sec}]") });
        }
        let entries = out.get_mut(sec).unwrap();
        if entries.insert(k.to_string(), (line_no, v.to_string())).is_some() {
            return Err(Error::Syntax { line: line_no, msg: format!("duplicate key `{k}`") });
        }
    }
    Ok(out)
}

struct Reader<'a> {
    secs: &'a Sections,
}

impl<'a> Reader<'a> {
    fn raw(&self, sec: &str, key: &str) -> Option<&'a (usize, String)> {
        self.secs.get(sec).and_then(|s| s.get(key))
    }

    fn str_opt(&self, sec: &str, key: &str) -> Option<&'a str> {
        self.raw(sec, key).map(|x| x.1.as_str())
    }

    fn str_req(&self, sec: &str, key: &str) -> Result<&'a str> {
        self.str_opt(sec, key)
            .ok_or_else(|| Error::semantic(format!("{sec}.{key}"), "required"))
    }

    fn num_opt(&self, sec: &str, key: &str) -> Result<Option<f64>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some((line, v)) => parse_number(v)
                .map(Some)
                .ok_or_else(|| Error::Syntax { line: *line, msg: format!("`{key}`: not a number: {v}") }),
        }
    }

    fn num_req(&self, sec: &str, key: &str) -> Result<f64> {
        self.num_opt(sec, key)?
            .ok_or_else(|| Error::semantic(format!("{sec}.{key}"), "required"))
    }

    fn usize_opt(&self, sec: &str, key: &str) -> Result<Option<usize>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| Error::Syntax { line: *line, msg: format!("`{key}`: not an integer: {v}") }),
        }
    }

    fn bool_opt(&self, sec: &str, key: &str) -> Result<Option<bool>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some((line, v)) => match v.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(Error::Syntax { line: *line, msg: format!("`{key}`: expected true or false") }),
            },
        }
    }

    fn line(&self, sec: &str, key: &str) -> usize {
        self.raw(sec, key).map(|x| x.0).unwrap_or(0)
    }
}

fn split_kind(v: &str) -> (&str, Vec<&str>) {
    let mut parts = v.split(':').map(str::trim);
    let head = parts.next().unwrap_or("");
    (head, parts.collect())
}

fn nums(parts: &[&str], line: usize, what: &str) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|p| parse_number(p).ok_or_else(|| Error::Syntax { line, msg: format!("{what}: bad number `{p}`") }))
        .collect()
}

fn parse_reaction(r: &Reader) -> Result<Reaction> {
    let kind = r.str_req("f", "kind")?;
    let line = r.line("f", "kind");
    let coef = r.num_opt("f", "coef")?;
    let (head, rest) = split_kind(kind);
    let args = nums(&rest, line, "f.kind")?;
    Ok(match (head, args.as_slice()) {
        ("cubic", []) => Reaction::Cubic { coef: coef.unwrap_or(1.0), growth: r.num_opt("f", "growth")?.unwrap_or(0.0) },
        ("power", [p]) => Reaction::Power { p: *p, coef: coef.unwrap_or(1.0) },
        ("linear", [g]) => Reaction::Linear { gain: *g },
        ("zero", []) => Reaction::Zero,
        _ => return Err(Error::semantic("f.kind", format!("unsupported reaction `{kind}`"))),
    })
}

fn parse_coupling(r: &Reader) -> Result<DelayCoupling> {
    let kind = r.str_req("g", "kind")?;
    let line = r.line("g", "kind");
    let (head, rest) = split_kind(kind);
    let args = nums(&rest, line, "g.kind")?;
    let amp = r.num_opt("g", "amp")?;
    let coef = r.num_opt("g", "coef")?;
    Ok(match (head, args.as_slice()) {
        ("linear", [g]) => DelayCoupling::Linear { gain: *g },
        ("sinsum", []) => DelayCoupling::SinSum { amp: amp.unwrap_or(1.0) },
        ("sinsum", [a]) => DelayCoupling::SinSum { amp: *a },
        ("sinofsum", []) => DelayCoupling::SinOfSum { amp: amp.unwrap_or(1.0) },
        ("sinofsum", [a]) => DelayCoupling::SinOfSum { amp: *a },
        ("power", [p]) => DelayCoupling::Power { p: *p, coef: coef.unwrap_or(1.0) },
        ("zero", []) => DelayCoupling::Zero,
        _ => return Err(Error::semantic("g.kind", format!("unsupported coupling `{kind}`"))),
    })
}

fn parse_delay_fn(v: &str, line: usize) -> Result<DelayFn> {
    let (head, rest) = split_kind(v);
    let args = nums(&rest, line, "delay")?;
    match (head, args.as_slice()) {
        ("const", [c]) => Ok(DelayFn::Constant(*c)),
        ("sin", [mean, amp, omega]) => Ok(DelayFn::Sinusoid { mean: *mean, amp: *amp, omega: *omega }),
        _ => Err(Error::Syntax { line, msg: format!("delay `{v}`: expected const:c or sin:mean:amp:omega") }),
    }
}

fn parse_forcing(r: &Reader) -> Result<Forcing> {
    let Some(kind) = r.str_opt("h", "kind") else { return Ok(Forcing::Zero) };
    let line = r.line("h", "kind");
    let (head, rest) = split_kind(kind);
    let args = nums(&rest, line, "h.kind")?;
    Ok(match (head, args.as_slice()) {
        ("zero", []) => Forcing::Zero,
        ("mode", [j, a]) => Forcing::Mode { j: mode_index(*j, line)?, amp: *a, omega: 0.0 },
        ("mode", [j, a, w]) => Forcing::Mode { j: mode_index(*j, line)?, amp: *a, omega: *w },
        ("const", [c]) => Forcing::Constant { value: *c },
        _ => return Err(Error::semantic("h.kind", format!("unsupported forcing `{kind}`"))),
    })
}

fn mode_index(j: f64, line: usize) -> Result<usize> {
    if j >= 1.0 && j.fract() == 0.0 {
        Ok(j as usize)
    } else {
        Err(Error::Syntax { line, msg: format!("mode index must be a positive integer, got {j}") })
    }
}

/// `mode:j:amp[,mode:j:amp…]`, or `zero`.
pub fn parse_history_modes(v: &str, line: usize) -> Result<Vec<(usize, f64)>> {
    if v.trim() == "zero" {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|item| {
            let (head, rest) = split_kind(item.trim());
            let args = nums(&rest, line, "history")?;
            match (head, args.as_slice()) {
                ("mode", [j, a]) => Ok((mode_index(*j, line)?, *a)),
                _ => Err(Error::Syntax { line, msg: format!("history `{item}`: expected mode:j:amp") }),
            }
        })
        .collect()
}

fn parse_profile(r: &Reader) -> Result<TimeProfile> {
    match r.str_opt("history", "profile") {
        None | Some("const") => Ok(TimeProfile::Constant),
        Some(v) => {
            let line = r.line("history", "profile");
            let (head, rest) = split_kind(v);
            let args = nums(&rest, line, "profile")?;
            match (head, args.as_slice()) {
                ("affine", [s]) => Ok(TimeProfile::Affine { slope: *s }),
                _ => Err(Error::Syntax { line, msg: format!("profile `{v}`: expected const or affine:slope") }),
            }
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let secs = tokenize(text)?;
    let r = Reader { secs: &secs };

    let length = r.num_req("domain", "L")?;
    let f = parse_reaction(&r)?;
    let declared = DeclaredConstants {
        lambda_diss: r.num_req("f", "lambda")?,
        n_diss: r.num_req("f", "N")?,
        gamma: r.num_req("f", "gamma")?,
        alpha: r.num_req("f", "alpha")?,
        a0: r.num_req("f", "a0")?,
        beta: r.num_req("g", "beta")?,
    };
    let g = parse_coupling(&r)?;
    let separated = r.bool_opt("g", "separated")?.unwrap_or(g.is_separable());
    let overrides = ConstantOverrides {
        a1: r.num_opt("f", "a1")?,
        b0: r.num_opt("g", "b0")?,
        b0p: r.num_opt("g", "b0p")?,
        b1p: r.num_opt("g", "b1p")?,
    };

    let delay_r = r.num_opt("delays", "r")?.unwrap_or(0.0);
    let mut delay_fns = Vec::new();
    if let Some(sec) = secs.get("delays") {
        let mut keyed: Vec<(usize, &(usize, String))> = sec
            .iter()
            .filter(|(k, _)| k.as_str() != "r")
            .map(|(k, v)| (k[1..].parse::<usize>().unwrap(), v))
            .collect();
        keyed.sort_by_key(|x| x.0);
        for (idx, (n, (line, v))) in keyed.iter().enumerate() {
            if *n != idx + 1 {
                return Err(Error::Syntax { line: *line, msg: format!("delays must be numbered r1, r2, … (missing r{})", idx + 1) });
            }
            delay_fns.push(parse_delay_fn(v, *line)?);
        }
    }
    let delays = DelaySpec::new(delay_r, delay_fns)?;

    let h = parse_forcing(&r)?;
    let inputs = ProblemInputs {
        length,
        f,
        g,
        separated,
        delays,
        h,
        h_linf: r.num_opt("h", "linf_bound")?,
        h_h1: r.num_opt("h", "h1_bound")?,
        declared,
        overrides,
    };
    let problem = inputs.build()?;

    let phi = r.str_req("history", "phi")?;
    let history = HistorySpec { modes: parse_history_modes(phi, r.line("history", "phi"))?, profile: parse_profile(&r)? };

    let interp = match r.str_opt("solver", "interp") {
        None | Some("cubic") => Interpolation::Cubic,
        Some("linear") => Interpolation::Linear,
        Some(v) => return Err(Error::semantic("solver.interp", format!("expected cubic or linear, got `{v}`"))),
    };
    let n_modes = r
        .usize_opt("solver", "n_modes")?
        .ok_or_else(|| Error::semantic("solver.n_modes", "required"))?;
    let solver = SolverConfig {
        dt: r.num_req("solver", "dt")?,
        t_end: r.num_req("solver", "T")?,
        n_modes,
        n_quad: r.usize_opt("solver", "n_quad")?.unwrap_or(4 * n_modes),
        interp,
        dealias: r.bool_opt("solver", "dealias")?.unwrap_or(true),
    };
    let oracle = OracleConfig {
        t_end: r.num_opt("solver", "oracle_t")?.unwrap_or(1.0),
        nodes: r.usize_opt("solver", "oracle_nodes")?.unwrap_or(512),
    };

    let held_out = match r.str_opt("estimates", "h2_held_out") {
        None => None,
        Some(v) => Some(HistorySpec {
            modes: parse_history_modes(v, r.line("estimates", "h2_held_out"))?,
            profile: history.profile,
        }),
    };
    let estimates = EstimatesConfig {
        q: r.num_req("estimates", "q")?,
        tol: Tolerance {
            rel: r.num_opt("estimates", "tol_rel")?.unwrap_or(1e-6),
            abs: r.num_opt("estimates", "tol_abs")?.unwrap_or(1e-12),
        },
        rho_q_scale: r.num_opt("estimates", "rho_q_scale")?.unwrap_or(1.0),
        h2_rate: r.num_opt("estimates", "h2_rate")?,
        h2_held_out: held_out,
        invariance_eps: r.num_opt("estimates", "invariance_eps")?.unwrap_or(0.0),
    };
    if !(estimates.rho_q_scale > 0.0) {
        return Err(Error::semantic("estimates.rho_q_scale", "must be positive"));
    }

    let output = OutputConfig {
        dir: r.str_opt("output", "dir").map(PathBuf::from),
        stride: r.usize_opt("output", "stride")?.unwrap_or(1).max(1),
    };

    let cfg = RunConfig { inputs, problem, history, solver, estimates, oracle, output };
    cfg.validate()?;
    Ok(cfg)
}
