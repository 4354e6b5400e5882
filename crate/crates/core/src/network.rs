//! Grid data model, case-file reader and topology helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;
use thiserror::Error;

pub type BusId = usize;
pub type LineId = usize;
pub type GenId = usize;

/// Set of outaged line ids.
pub type Outage = BTreeSet<LineId>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("case has already been prepared")]
    AlreadyPrepared,
    #[error("line {line} connects buses {from}-{to}, expected 7-8")]
    UnexpectedRadialLine { line: LineId, from: BusId, to: BusId },
    #[error("balancing set has zero total capacity")]
    ZeroBalancingCapacity,
    #[error("unknown generator {0}")]
    UnknownGenerator(GenId),
    #[error("unknown line {0}")]
    UnknownLine(LineId),
}

/// How line susceptance is derived from the series impedance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SusceptanceModel {
    /// `b = -1 / x`
    #[default]
    Reactance,
    /// Imaginary part of the series admittance, `b = -x / (r^2 + x^2)`.
    Series,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub base_load_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: LineId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub resistance_pu: f64,
    pub reactance_pu: f64,
    /// Stored negative; flow is `-b (theta_from - theta_to)` in p.u.
    pub susceptance_pu: f64,
    pub rating_mw: f64,
    pub in_service: bool,
    pub radial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: GenId,
    pub bus: BusId,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    /// $/MW^2
    pub cost_quad: f64,
    /// $/MW
    pub cost_lin: f64,
    pub cost_const: f64,
    pub participation: f64,
    pub in_service: bool,
}

impl Generator {
    /// Operating cost at `p_mw`, including the no-load constant.
    pub fn cost(&self, p_mw: f64) -> f64 {
        self.cost_quad * p_mw * p_mw + self.cost_lin * p_mw + self.cost_const
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub susceptance_model: SusceptanceModel,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    /// Set once the case-study derating has been applied.
    pub prepared: bool,
}

/// A set of simultaneously outaged lines.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Contingency {
    pub outaged_lines: Outage,
}

impl Contingency {
    pub fn line(id: LineId) -> Self {
        Self {
            outaged_lines: BTreeSet::from([id]),
        }
    }

    pub fn new(lines: impl IntoIterator<Item = LineId>) -> Result<Self, NetworkError> {
        let outaged_lines: Outage = lines.into_iter().collect();
        if outaged_lines.is_empty() {
            return Err(NetworkError::Invalid("empty contingency".into()));
        }
        Ok(Self { outaged_lines })
    }

    pub fn validate(&self, net: &Network) -> Result<(), NetworkError> {
        if self.outaged_lines.is_empty() {
            return Err(NetworkError::Invalid("empty contingency".into()));
        }
        match self.outaged_lines.iter().find(|&&l| l == 0 || l > net.lines.len()) {
            Some(&l) => Err(NetworkError::UnknownLine(l)),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Contingency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.outaged_lines.iter().map(|l| l.to_string()).collect();
        f.write_str(&ids.join("+"))
    }
}

impl Network {
    pub fn bus(&self, id: BusId) -> &Bus {
        &self.buses[id - 1]
    }

    pub fn line(&self, id: LineId) -> &Line {
        &self.lines[id - 1]
    }

    pub fn generator(&self, id: GenId) -> &Generator {
        &self.generators[id - 1]
    }

    pub fn total_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.base_load_mw).sum()
    }

    pub fn loads_mw(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.base_load_mw).collect()
    }

    /// Copy of the network with new per-bus loads (indexed by bus id - 1).
    pub fn with_loads(&self, loads_mw: &[f64]) -> Result<Network, NetworkError> {
        if loads_mw.len() != self.buses.len() {
            return Err(NetworkError::Invalid(format!(
                "{} loads given for {} buses",
                loads_mw.len(),
                self.buses.len()
            )));
        }
        let mut net = self.clone();
        for (bus, &load) in net.buses.iter_mut().zip(loads_mw) {
            bus.base_load_mw = load;
        }
        net.validate()?;
        Ok(net)
    }

    /// Lines that are in service and not in `out`.
    pub fn surviving_lines<'a>(&'a self, out: &'a Outage) -> impl Iterator<Item = &'a Line> + 'a {
        self.lines
            .iter()
            .filter(move |l| l.in_service && !out.contains(&l.id))
    }

    pub fn generators_at(&self, bus: BusId) -> impl Iterator<Item = &Generator> + '_ {
        self.generators.iter().filter(move |g| g.bus == bus)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), NetworkError> {
        let inv = |m: String| Err(NetworkError::Invalid(m));
        if !(self.base_mva > 0.0) {
            return inv(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            return inv("no buses".into());
        }
        let nb = self.buses.len();
        for (k, b) in self.buses.iter().enumerate() {
            if b.id != k + 1 {
                return inv(format!("bus ids must be contiguous from 1, found {} at position {}", b.id, k + 1));
            }
            if !(b.base_load_mw >= 0.0) || !b.base_load_mw.is_finite() {
                return inv(format!("bus {} has load {}", b.id, b.base_load_mw));
            }
        }
        for (k, l) in self.lines.iter().enumerate() {
            if l.id != k + 1 {
                return inv(format!("line ids must be contiguous from 1, found {} at position {}", l.id, k + 1));
            }
            for bus in [l.from_bus, l.to_bus] {
                if bus == 0 || bus > nb {
                    return inv(format!("line {} references missing bus {bus}", l.id));
                }
            }
            if l.from_bus == l.to_bus {
                return inv(format!("line {} starts and ends at bus {}", l.id, l.from_bus));
            }
            if !(l.rating_mw > 0.0) {
                return inv(format!("line {} has non-positive rating {}", l.id, l.rating_mw));
            }
            if !(l.susceptance_pu < 0.0) || !l.susceptance_pu.is_finite() {
                return inv(format!("line {} has unusable impedance", l.id));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if g.id != k + 1 {
                return inv(format!("generator ids must be contiguous from 1, found {} at position {}", g.id, k + 1));
            }
            if g.bus == 0 || g.bus > nb {
                return inv(format!("generator {} references missing bus {}", g.id, g.bus));
            }
            if !(0.0 <= g.p_min_mw && g.p_min_mw <= g.p_max_mw) {
                return inv(format!(
                    "generator {} limits [{}, {}] violate 0 <= p_min <= p_max",
                    g.id, g.p_min_mw, g.p_max_mw
                ));
            }
            if !(g.participation >= 0.0) {
                return inv(format!("generator {} has participation {}", g.id, g.participation));
            }
            if g.cost_quad < 0.0 {
                return inv(format!("generator {} has a concave cost", g.id));
            }
        }
        let k_sum: f64 = self.generators.iter().map(|g| g.participation).sum();
        if k_sum != 0.0 && (k_sum - 1.0).abs() > 1e-9 {
            return inv(format!("participation factors sum to {k_sum}, expected 1"));
        }
        Ok(())
    }

    /// Ids of generators with a nonzero participation factor.
    pub fn balancing_set(&self) -> Vec<GenId> {
        self.generators
            .iter()
            .filter(|g| g.participation > 0.0)
            .map(|g| g.id)
            .collect()
    }

    /// Recomputes the `radial` flags: a line is radial when removing it
    /// leaves a bus with no other connection (a bridge to a degree-1 bus).
    pub fn mark_radial_lines(&mut self) {
        let mut degree = vec![0usize; self.buses.len() + 1];
        for l in self.lines.iter().filter(|l| l.in_service) {
            degree[l.from_bus] += 1;
            degree[l.to_bus] += 1;
        }
        for l in &mut self.lines {
            l.radial = l.in_service && (degree[l.from_bus] == 1 || degree[l.to_bus] == 1);
        }
    }
}

fn susceptance(model: SusceptanceModel, r: f64, x: f64) -> f64 {
    match model {
        SusceptanceModel::Reactance => -1.0 / x,
        SusceptanceModel::Series => -x / (r * r + x * x),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Header,
    Buses,
    Generators,
    Lines,
}

/// Reads a case file (format documented in `docs/case-format.md`).
pub fn parse_case(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| NetworkError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_case_str(&text)
}

pub fn parse_case_str(text: &str) -> Result<Network, NetworkError> {
    let mut section = Section::Header;
    let mut base_mva = 100.0;
    let mut model = SusceptanceModel::default();
    let mut prepared = false;
    let mut buses = Vec::new();
    let mut lines = Vec::new();
    let mut generators = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[buses]" => Section::Buses,
                "[generators]" => Section::Generators,
                "[lines]" => Section::Lines,
                other => {
                    return Err(NetworkError::Parse {
                        line: ln,
                        field: "section".into(),
                        message: format!("unknown section {other}"),
                    })
                }
            };
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let row = Row { ln, fields: &fields };
        match section {
            Section::Header => match fields[0] {
                "base_mva" => {
                    row.expect_len(&["key", "value"])?;
                    base_mva = row.real(1, "base_mva")?;
                }
                "susceptance" => {
                    row.expect_len(&["key", "model"])?;
                    model = match fields[1] {
                        "reactance" => SusceptanceModel::Reactance,
                        "series" => SusceptanceModel::Series,
                        other => {
                            return Err(row.err("model", format!("expected `reactance` or `series`, got `{other}`")))
                        }
                    };
                }
                "prepared" => {
                    row.expect_len(&["key", "flag"])?;
                    prepared = match fields[1] {
                        "true" => true,
                        "false" => false,
                        other => return Err(row.err("flag", format!("expected `true` or `false`, got `{other}`"))),
                    };
                }
                other => return Err(row.err("key", format!("unknown header key `{other}`"))),
            },
            Section::Buses => {
                let names = ["id", "load_mw"];
                row.expect_len(&names)?;
                buses.push(Bus {
                    id: row.int(0, names[0])?,
                    base_load_mw: row.real(1, names[1])?,
                });
            }
            Section::Generators => {
                let names = ["id", "bus", "p_min_mw", "p_max_mw", "c2", "c1", "c0", "participation"];
                // participation is optional
                if fields.len() != names.len() {
                    row.expect_len(&names[..7])?;
                }
                let participation = if fields.len() == 8 { row.real(7, names[7])? } else { 0.0 };
                if participation < 0.0 {
                    return Err(row.err(names[7], "participation must be non-negative".into()));
                }
                generators.push(Generator {
                    id: row.int(0, names[0])?,
                    bus: row.int(1, names[1])?,
                    p_min_mw: row.real(2, names[2])?,
                    p_max_mw: row.real(3, names[3])?,
                    cost_quad: row.real(4, names[4])?,
                    cost_lin: row.real(5, names[5])?,
                    cost_const: row.real(6, names[6])?,
                    participation,
                    in_service: true,
                });
            }
            Section::Lines => {
                let names = ["id", "from", "to", "r_pu", "x_pu", "rating_mw"];
                row.expect_len(&names)?;
                let r = row.real(3, names[3])?;
                let x = row.real(4, names[4])?;
                if x == 0.0 {
                    return Err(row.err(names[4], "reactance must be nonzero".into()));
                }
                lines.push(Line {
                    id: row.int(0, names[0])?,
                    from_bus: row.int(1, names[1])?,
                    to_bus: row.int(2, names[2])?,
                    resistance_pu: r,
                    reactance_pu: x,
                    susceptance_pu: susceptance(model, r, x),
                    rating_mw: row.real(5, names[5])?,
                    in_service: true,
                    radial: false,
                });
            }
        }
    }
    let mut net = Network {
        base_mva,
        susceptance_model: model,
        buses,
        lines,
        generators,
        prepared,
    };
    net.validate()?;
    net.mark_radial_lines();
    Ok(net)
}

/// Writes `net` in the case format; parsing the output gives back the same
/// network.
pub fn write_case_string(net: &Network) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "base_mva {}", net.base_mva);
    let model = match net.susceptance_model {
        SusceptanceModel::Reactance => "reactance",
        SusceptanceModel::Series => "series",
    };
    let _ = writeln!(s, "susceptance {model}");
    let _ = writeln!(s, "prepared {}", net.prepared);
    let _ = writeln!(s, "\n[buses]\n# id load_mw");
    for b in &net.buses {
        let _ = writeln!(s, "{} {}", b.id, b.base_load_mw);
    }
    let _ = writeln!(s, "\n[generators]\n# id bus p_min_mw p_max_mw c2 c1 c0 participation");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            g.id, g.bus, g.p_min_mw, g.p_max_mw, g.cost_quad, g.cost_lin, g.cost_const, g.participation
        );
    }
    let _ = writeln!(s, "\n[lines]\n# id from to r_pu x_pu rating_mw");
    for l in &net.lines {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            l.id, l.from_bus, l.to_bus, l.resistance_pu, l.reactance_pu, l.rating_mw
        );
    }
    s
}

struct Row<'a> {
    ln: usize,
    fields: &'a [&'a str],
}

impl Row<'_> {
    fn err(&self, field: &str, message: String) -> NetworkError {
        NetworkError::Parse {
            line: self.ln,
            field: field.to_string(),
            message,
        }
    }

    fn expect_len(&self, names: &[&str]) -> Result<(), NetworkError> {
        if self.fields.len() == names.len() {
            return Ok(());
        }
        let field = names.get(self.fields.len()).unwrap_or(&"<extra>");
        Err(self.err(
            field,
            format!("expected {} fields ({}), found {}", names.len(), names.join(" "), self.fields.len()),
        ))
    }

    fn real(&self, i: usize, name: &str) -> Result<f64, NetworkError> {
        let v: f64 = self.fields[i]
            .parse()
            .map_err(|_| self.err(name, format!("`{}` is not a number", self.fields[i])))?;
        if !v.is_finite() {
            return Err(self.err(name, "value must be finite".into()));
        }
        Ok(v)
    }

    fn int(&self, i: usize, name: &str) -> Result<usize, NetworkError> {
        self.fields[i]
            .parse()
            .map_err(|_| self.err(name, format!("`{}` is not a non-negative integer", self.fields[i])))
    }
}

/// Line derating used by the case study.
pub const STUDY_RATING_SCALE: f64 = 0.8;
/// The radial line 7-8 gets 1.5 times its original rating instead.
pub const STUDY_RADIAL_LINE: LineId = 11;
pub const STUDY_RADIAL_SCALE: f64 = 1.5;
/// Generators 1-16 share any imbalance.
pub const STUDY_BALANCING: std::ops::RangeInclusive<GenId> = 1..=16;

/// Applies the case-study modifications to the unmodified RTS-96 case:
/// 80% line ratings, 150% on line 11 (bus 7-8) and participation factors
/// for generators 1-16.
pub fn prepare_study_case(net: &Network) -> Result<Network, NetworkError> {
    if net.prepared {
        return Err(NetworkError::AlreadyPrepared);
    }
    let radial = net
        .lines
        .get(STUDY_RADIAL_LINE - 1)
        .ok_or(NetworkError::UnknownLine(STUDY_RADIAL_LINE))?;
    let ends = (radial.from_bus.min(radial.to_bus), radial.from_bus.max(radial.to_bus));
    if ends != (7, 8) {
        return Err(NetworkError::UnexpectedRadialLine {
            line: radial.id,
            from: radial.from_bus,
            to: radial.to_bus,
        });
    }
    let mut out = net.clone();
    for l in &mut out.lines {
        l.rating_mw *= if l.id == STUDY_RADIAL_LINE {
            STUDY_RADIAL_SCALE
        } else {
            STUDY_RATING_SCALE
        };
    }
    let balancing: Vec<GenId> = STUDY_BALANCING.collect();
    let k = participation_factors(&out, &balancing)?;
    for g in &mut out.generators {
        g.participation = k.get(&g.id).copied().unwrap_or(0.0);
    }
    out.prepared = true;
    out.validate()?;
    Ok(out)
}

/// `K_i = p_max_i / sum of p_max over the balancing set`, zero elsewhere.
pub fn participation_factors(
    net: &Network,
    balancing: &[GenId],
) -> Result<BTreeMap<GenId, f64>, NetworkError> {
    if balancing.is_empty() {
        return Err(NetworkError::ZeroBalancingCapacity);
    }
    let set: BTreeSet<GenId> = balancing.iter().copied().collect();
    if let Some(&g) = set.iter().find(|&&g| g == 0 || g > net.generators.len()) {
        return Err(NetworkError::UnknownGenerator(g));
    }
    let total: f64 = set.iter().map(|&g| net.generator(g).p_max_mw).sum();
    if total <= 0.0 {
        return Err(NetworkError::ZeroBalancingCapacity);
    }
    Ok(net
        .generators
        .iter()
        .map(|g| {
            let k = if set.contains(&g.id) { g.p_max_mw / total } else { 0.0 };
            (g.id, k)
        })
        .collect())
}

/// Nodal susceptance matrix and per-line flow coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptanceMatrices {
    /// `B[i][i] = sum of -b over incident lines`, `B[i][j] = sum of b`;
    /// rows and columns are indexed by bus id - 1.
    pub bus: DMatrix<f64>,
    /// `(line, from index, to index, -b)`: the line flow in p.u. is
    /// `coef * (theta[from] - theta[to])`.
    pub flow_map: Vec<(LineId, usize, usize, f64)>,
}

pub fn susceptance_matrices(net: &Network, out: &Outage) -> SusceptanceMatrices {
    let n = net.buses.len();
    let mut bus = DMatrix::zeros(n, n);
    let mut flow_map = Vec::new();
    for l in net.surviving_lines(out) {
        let (i, j, b) = (l.from_bus - 1, l.to_bus - 1, l.susceptance_pu);
        bus[(i, i)] -= b;
        bus[(j, j)] -= b;
        bus[(i, j)] += b;
        bus[(j, i)] += b;
        flow_map.push((l.id, i, j, -b));
    }
    SusceptanceMatrices { bus, flow_map }
}

/// Connected components of the surviving line graph, each sorted, ordered
/// by smallest bus id.
pub fn find_islands(net: &Network, out: &Outage) -> Vec<BTreeSet<BusId>> {
    let n = net.buses.len();
    let mut uf = UnionFind::<usize>::new(n);
    for l in net.surviving_lines(out) {
        uf.union(l.from_bus - 1, l.to_bus - 1);
    }
    let mut groups: BTreeMap<usize, BTreeSet<BusId>> = BTreeMap::new();
    for b in 0..n {
        groups.entry(uf.find(b)).or_default().insert(b + 1);
    }
    let mut islands: Vec<BTreeSet<BusId>> = groups.into_values().collect();
    islands.sort_by_key(|s| *s.first().expect("islands are non-empty"));
    islands
}
