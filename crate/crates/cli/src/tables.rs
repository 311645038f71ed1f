//! CSV tables. Floats are written with 17 significant digits so every
//! value round-trips exactly.

use std::fs::File;
use std::path::Path;

use hjb_core::grid::{layer_gradient, norm};
use hjb_core::{ControlField, Grid, TruncationTrace, ValueFunction};

use crate::CliError;

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

fn coord_header(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |k| format!("{prefix}_{k}"))
}

fn node_row(grid: &Grid, layer: usize, node: usize) -> Vec<String> {
    let mut row = Vec::with_capacity(grid.dim() + 3);
    row.push(fmt(grid.time(layer)));
    row.extend(grid.node_coords(node).into_iter().map(fmt));
    row
}

/// t, x_1..x_d, u, grad_norm; time-major, then lexicographic multi-index.
pub fn value_table(u: &ValueFunction) -> Table {
    let g = u.grid();
    let mut header = vec!["t".to_string()];
    header.extend(coord_header("x", g.dim()));
    header.extend(["u".to_string(), "grad_norm".to_string()]);
    let mut t = Table::new(header);
    for l in 0..g.n_layers() {
        let vals = u.layer(l);
        for i in 0..g.n_nodes() {
            let mut row = node_row(g, l, i);
            row.push(fmt(vals[i]));
            row.push(fmt(norm(&layer_gradient(g, vals, i))));
            t.push(row);
        }
    }
    t
}

/// t, x_1..x_d, alpha_1..alpha_d.
pub fn control_table(field: &ControlField) -> Table {
    let g = field.grid();
    let mut header = vec!["t".to_string()];
    header.extend(coord_header("x", g.dim()));
    header.extend(coord_header("alpha", g.dim()));
    let mut t = Table::new(header);
    for l in 0..g.n_layers() {
        for i in 0..g.n_nodes() {
            let mut row = node_row(g, l, i);
            row.extend(field.control(l, i).iter().copied().map(fmt));
            t.push(row);
        }
    }
    t
}

pub fn trace_table(trace: &TruncationTrace) -> Table {
    let mut t = Table::new(["stage", "radius", "sup_grad", "delta_sup"]);
    for s in &trace.stages {
        t.push(vec![s.stage.to_string(), fmt(s.radius), fmt(s.sup_grad), fmt(s.delta_sup)]);
    }
    t
}

fn parse(field: &str, line: u64, col: &str) -> Result<f64, CliError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Data(format!("line {line}: column {col}: not a number: {field:?}")))
}

/// Reads a value table written by [`value_table`] and checks it against
/// the declared grid.
pub fn read_value_function(path: &Path, grid: &Grid) -> Result<ValueFunction, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(file);
    let d = grid.dim();
    let mut expected = vec!["t".to_string()];
    expected.extend(coord_header("x", d));
    expected.extend(["u".to_string(), "grad_norm".to_string()]);

    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if let Some(missing) = expected.iter().find(|c| !header.contains(c)) {
        return Err(CliError::Data(format!("{}: missing column {missing}", path.display())));
    }
    if header != expected {
        return Err(CliError::Data(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            header,
            expected
        )));
    }

    let n = grid.n_layers() * grid.n_nodes();
    let mut values = Vec::with_capacity(n);
    let t_tol = 1e-9 * (1.0 + grid.horizon());
    let x_tol = 1e-9 * (1.0 + grid.half_width() + grid.center().iter().fold(0.0f64, |m, c| m.max(c.abs())));
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if k >= n {
            return Err(CliError::Data(format!(
                "{}: more than {n} data rows for the declared grid",
                path.display()
            )));
        }
        let (l, i) = (k / grid.n_nodes(), k % grid.n_nodes());
        let t = parse(&rec[0], line, "t")?;
        if (t - grid.time(l)).abs() > t_tol {
            return Err(CliError::Data(format!(
                "line {line}: t = {t} does not match layer {l} at {}",
                grid.time(l)
            )));
        }
        for (a, want) in grid.node_coords(i).into_iter().enumerate() {
            let x = parse(&rec[1 + a], line, &expected[1 + a])?;
            if (x - want).abs() > x_tol {
                return Err(CliError::Data(format!(
                    "line {line}: x_{} = {x} does not match node coordinate {want}",
                    a + 1
                )));
            }
        }
        let u = parse(&rec[1 + d], line, "u")?;
        if !u.is_finite() {
            return Err(CliError::Data(format!("line {line}: non-finite u")));
        }
        values.push(u);
    }
    if values.len() != n {
        return Err(CliError::Data(format!(
            "{}: {} data rows, the declared grid needs {n}",
            path.display(),
            values.len()
        )));
    }
    ValueFunction::from_values(grid.clone(), values).map_err(|e| CliError::Data(e.to_string()))
}
