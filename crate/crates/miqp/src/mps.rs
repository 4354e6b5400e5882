//! Free-format MPS export with integrality markers and a `QUADOBJ` section,
//! plus a reader for the same subset.
//!
//! `QUADOBJ` follows the `0.5 x'Qx` convention and lists the upper triangle,
//! so a model term `c * x_i^2` is written as `2c` and `c * x_i * x_j` as `c`.
//! The objective constant is stored as the negated RHS of the objective row.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::MpsError;
use crate::model::{LinExpr, Model, Sense, VarId, VarKind};

const OBJ_ROW: &str = "OBJ";

fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn check_name(name: &str) -> Result<(), MpsError> {
    if name.is_empty() || name.chars().any(char::is_whitespace) || name.starts_with('$') {
        return Err(MpsError::InvalidName(name.to_string()));
    }
    Ok(())
}

/// Renders `model` as free MPS text.
pub fn export_mps(model: &Model) -> Result<String, MpsError> {
    model.validate()?;
    let mut out = String::new();
    let name = if model.name.is_empty() { "model" } else { &model.name };
    check_name(name)?;
    writeln!(out, "NAME {name}").unwrap();
    writeln!(out, "ROWS").unwrap();
    writeln!(out, " N {OBJ_ROW}").unwrap();
    for c in model.constraints() {
        check_name(&c.name)?;
        if c.name == OBJ_ROW {
            return Err(MpsError::InvalidName(c.name.clone()));
        }
        let t = match c.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        writeln!(out, " {t} {}", c.name).unwrap();
    }

    // column-major view of the constraint matrix
    let n = model.num_vars();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, c) in model.constraints().iter().enumerate() {
        for &(v, a) in &c.terms {
            cols[v.0].push((r, a));
        }
    }
    let mut obj = vec![0.0; n];
    for &(v, c) in &model.objective().linear {
        obj[v.0] += c;
    }

    writeln!(out, "COLUMNS").unwrap();
    let mut in_int = false;
    let mut marker = 0;
    for (j, var) in model.variables().iter().enumerate() {
        check_name(&var.name)?;
        let is_int = var.kind == VarKind::Binary;
        if is_int != in_int {
            let tag = if is_int { "INTORG" } else { "INTEND" };
            writeln!(out, "    M{marker} 'MARKER' '{tag}'").unwrap();
            marker += 1;
            in_int = is_int;
        }
        if obj[j] != 0.0 || cols[j].is_empty() {
            writeln!(out, "    {} {OBJ_ROW} {}", var.name, num(obj[j])).unwrap();
        }
        for &(r, a) in &cols[j] {
            writeln!(out, "    {} {} {}", var.name, model.constraints()[r].name, num(a)).unwrap();
        }
    }
    if in_int {
        writeln!(out, "    M{marker} 'MARKER' 'INTEND'").unwrap();
    }

    writeln!(out, "RHS").unwrap();
    let constant = model.objective().constant;
    if constant != 0.0 {
        writeln!(out, "    RHS {OBJ_ROW} {}", num(-constant)).unwrap();
    }
    for c in model.constraints() {
        if c.rhs != 0.0 {
            writeln!(out, "    RHS {} {}", c.name, num(c.rhs)).unwrap();
        }
    }

    writeln!(out, "BOUNDS").unwrap();
    for var in model.variables() {
        let (lo, up, name) = (var.lower, var.upper, &var.name);
        if var.kind == VarKind::Binary && lo == 0.0 && up == 1.0 {
            writeln!(out, " BV BND {name}").unwrap();
        } else if lo == up {
            writeln!(out, " FX BND {name} {}", num(lo)).unwrap();
        } else if lo == f64::NEG_INFINITY && up == f64::INFINITY {
            writeln!(out, " FR BND {name}").unwrap();
        } else {
            if lo == f64::NEG_INFINITY {
                writeln!(out, " MI BND {name}").unwrap();
            } else if lo != 0.0 || up < 0.0 || var.kind == VarKind::Binary {
                writeln!(out, " LO BND {name} {}", num(lo)).unwrap();
            }
            if up != f64::INFINITY {
                writeln!(out, " UP BND {name} {}", num(up)).unwrap();
            }
        }
    }

    if model.objective().has_quadratic() {
        let mut q: BTreeMap<(VarId, VarId), f64> = BTreeMap::new();
        for &(i, j, c) in &model.objective().quadratic {
            *q.entry((i, j)).or_insert(0.0) += if i == j { 2.0 * c } else { c };
        }
        writeln!(out, "QUADOBJ").unwrap();
        for ((i, j), c) in q {
            if c != 0.0 {
                let (a, b) = (&model.variable(i).name, &model.variable(j).name);
                writeln!(out, "    {a} {b} {}", num(c)).unwrap();
            }
        }
    }
    writeln!(out, "ENDATA").unwrap();
    Ok(out)
}

pub fn write_mps(model: &Model, path: impl AsRef<Path>) -> Result<(), MpsError> {
    fs::write(path, export_mps(model)?)?;
    Ok(())
}

pub fn read_mps(path: impl AsRef<Path>) -> Result<Model, MpsError> {
    parse_mps(&fs::read_to_string(path)?)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Rows,
    Columns,
    Rhs,
    Bounds,
    Quad,
    End,
}

struct RawVar {
    name: String,
    binary: bool,
    lower: Option<f64>,
    upper: Option<f64>,
}

struct RawRow {
    name: String,
    sense: Sense,
    terms: Vec<(usize, f64)>,
    rhs: f64,
}

/// Parses free MPS text as produced by [`export_mps`].
pub fn parse_mps(text: &str) -> Result<Model, MpsError> {
    let perr = |line: usize, message: String| MpsError::Parse { line, message };
    let mut section = Section::None;
    let mut name = String::new();
    let mut obj_row: Option<String> = None;
    let mut rows: Vec<RawRow> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut vars: Vec<RawVar> = Vec::new();
    let mut var_index: HashMap<String, usize> = HashMap::new();
    let mut linear: Vec<(usize, f64)> = Vec::new();
    let mut quad: Vec<(usize, usize, f64)> = Vec::new();
    let mut constant = 0.0;
    let mut in_int = false;

    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let f: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(char::is_whitespace) {
            section = match f[0] {
                "NAME" => {
                    name = f.get(1).copied().unwrap_or("").to_string();
                    Section::None
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "QUADOBJ" => Section::Quad,
                "ENDATA" => Section::End,
                other => return Err(perr(ln, format!("unsupported section `{other}`"))),
            };
            continue;
        }
        let value = |s: &str| -> Result<f64, MpsError> {
            s.parse::<f64>()
                .map_err(|_| perr(ln, format!("bad number `{s}`")))
        };
        match section {
            Section::Rows => {
                if f.len() != 2 {
                    return Err(perr(ln, "row entry needs a type and a name".into()));
                }
                let sense = match f[0] {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(f[1].to_string());
                        }
                        continue;
                    }
                    "L" => Sense::Le,
                    "G" => Sense::Ge,
                    "E" => Sense::Eq,
                    t => return Err(perr(ln, format!("unknown row type `{t}`"))),
                };
                if row_index.insert(f[1].to_string(), rows.len()).is_some() {
                    return Err(perr(ln, format!("duplicate row `{}`", f[1])));
                }
                rows.push(RawRow {
                    name: f[1].to_string(),
                    sense,
                    terms: Vec::new(),
                    rhs: 0.0,
                });
            }
            Section::Columns => {
                if f.len() == 3 && f[1] == "'MARKER'" {
                    in_int = match f[2] {
                        "'INTORG'" => true,
                        "'INTEND'" => false,
                        m => return Err(perr(ln, format!("unknown marker {m}"))),
                    };
                    continue;
                }
                if f.len() != 3 && f.len() != 5 {
                    return Err(perr(ln, "column entry needs 3 or 5 fields".into()));
                }
                let j = match var_index.get(f[0]) {
                    Some(&j) => j,
                    None => {
                        var_index.insert(f[0].to_string(), vars.len());
                        vars.push(RawVar {
                            name: f[0].to_string(),
                            binary: in_int,
                            lower: None,
                            upper: None,
                        });
                        vars.len() - 1
                    }
                };
                for pair in f[1..].chunks(2) {
                    let a = value(pair[1])?;
                    if obj_row.as_deref() == Some(pair[0]) {
                        linear.push((j, a));
                    } else {
                        let r = *row_index
                            .get(pair[0])
                            .ok_or_else(|| perr(ln, format!("unknown row `{}`", pair[0])))?;
                        rows[r].terms.push((j, a));
                    }
                }
            }
            Section::Rhs => {
                // the RHS set name is optional
                let entries = if f.len() % 2 == 1 { &f[1..] } else { &f[..] };
                for pair in entries.chunks(2) {
                    if pair.len() != 2 {
                        return Err(perr(ln, "incomplete RHS entry".into()));
                    }
                    let b = value(pair[1])?;
                    if obj_row.as_deref() == Some(pair[0]) {
                        constant = -b;
                    } else {
                        let r = *row_index
                            .get(pair[0])
                            .ok_or_else(|| perr(ln, format!("unknown row `{}`", pair[0])))?;
                        rows[r].rhs = b;
                    }
                }
            }
            Section::Bounds => {
                if f.len() < 3 {
                    return Err(perr(ln, "bound entry needs type, set and column".into()));
                }
                let j = *var_index
                    .get(f[2])
                    .ok_or_else(|| perr(ln, format!("unknown column `{}`", f[2])))?;
                let arg = || -> Result<f64, MpsError> {
                    let s = f.get(3).ok_or_else(|| perr(ln, "missing bound value".into()))?;
                    value(s)
                };
                let v = &mut vars[j];
                match f[0] {
                    "LO" => v.lower = Some(arg()?),
                    "UP" => v.upper = Some(arg()?),
                    "FX" => {
                        let b = arg()?;
                        v.lower = Some(b);
                        v.upper = Some(b);
                    }
                    "FR" => {
                        v.lower = Some(f64::NEG_INFINITY);
                        v.upper = Some(f64::INFINITY);
                    }
                    "MI" => v.lower = Some(f64::NEG_INFINITY),
                    "PL" => v.upper = Some(f64::INFINITY),
                    "BV" => {
                        v.binary = true;
                        v.lower = Some(0.0);
                        v.upper = Some(1.0);
                    }
                    t => return Err(perr(ln, format!("unsupported bound type `{t}`"))),
                }
            }
            Section::Quad => {
                if f.len() != 3 {
                    return Err(perr(ln, "QUADOBJ entry needs 3 fields".into()));
                }
                let look = |s: &str| {
                    var_index
                        .get(s)
                        .copied()
                        .ok_or_else(|| perr(ln, format!("unknown column `{s}`")))
                };
                quad.push((look(f[0])?, look(f[1])?, value(f[2])?));
            }
            Section::None | Section::End => {
                return Err(perr(ln, "data outside of a section".into()));
            }
        }
    }
    if section != Section::End {
        return Err(perr(text.lines().count(), "missing ENDATA".into()));
    }

    let mut model = Model::new(name);
    for v in &vars {
        let kind = if v.binary { VarKind::Binary } else { VarKind::Continuous };
        let lower = v.lower.unwrap_or(0.0);
        let upper = v.upper.unwrap_or(if v.binary { 1.0 } else { f64::INFINITY });
        model.add_var(v.name.clone(), kind, lower, upper)?;
    }
    for r in rows {
        let mut expr = LinExpr::new();
        for (j, a) in r.terms {
            expr.add_term(VarId(j), a);
        }
        model.add_constraint(r.name, expr, r.sense, r.rhs)?;
    }
    for (j, c) in linear {
        model.add_linear_cost(VarId(j), c);
    }
    for (i, j, c) in quad {
        let c = if i == j { 0.5 * c } else { c };
        model.add_quadratic_cost(VarId(i), VarId(j), c);
    }
    model.add_objective_constant(constant);
    Ok(model)
}
