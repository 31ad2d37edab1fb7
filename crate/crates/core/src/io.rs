//! Plain-text output helpers (CSV tables, key-value blocks).

use std::fmt::Write as _;

use crate::grid::Grid;

/// Full-precision decimal rendering (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `# key = value` header lines echoed at the top of every table.
pub fn header(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out
}

fn coordinate_columns(grid: &Grid) -> String {
    (0..grid.dim()).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",")
}

fn coordinate_cells(grid: &Grid, node: usize) -> String {
    grid.coordinates(node)
        .into_iter()
        .map(fmt_f64)
        .collect::<Vec<_>>()
        .join(",")
}

/// Node coordinates followed by one named column per field.
pub fn node_table(grid: &Grid, columns: &[(&str, &[f64])]) -> String {
    let mut out = coordinate_columns(grid);
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for node in 0..grid.len() {
        out.push_str(&coordinate_cells(grid, node));
        for (_, col) in columns {
            out.push(',');
            out.push_str(&fmt_f64(col[node]));
        }
        out.push('\n');
    }
    out
}

/// Value field with its policy: `x0..,V,policy`.
pub fn value_table(grid: &Grid, values: &[f64], policy: &[usize]) -> String {
    let mut out = coordinate_columns(grid);
    out.push_str(",V,policy\n");
    for node in 0..grid.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            coordinate_cells(grid, node),
            fmt_f64(values[node]),
            policy[node]
        );
    }
    out
}

/// Measure weights with the control used at each node: `x0..,weight,control`.
pub fn measure_table(grid: &Grid, weights: &[f64], policy: &[usize]) -> String {
    let mut out = coordinate_columns(grid);
    out.push_str(",weight,control\n");
    for node in 0..grid.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            coordinate_cells(grid, node),
            fmt_f64(weights[node]),
            policy[node]
        );
    }
    out
}

/// Control index at every node: `x0..,control`.
pub fn policy_table(grid: &Grid, policy: &[usize]) -> String {
    let mut out = coordinate_columns(grid);
    out.push_str(",control\n");
    for node in 0..grid.len() {
        let _ = writeln!(out, "{},{}", coordinate_cells(grid, node), policy[node]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.trim_start_matches('-').split('e').next().unwrap();
            assert_eq!(mantissa.replace('.', "").len(), 17);
        }
    }

    #[test]
    fn value_table_layout() {
        let g = Grid::uniform(1, 1.0, 3).unwrap();
        let t = value_table(&g, &[0.5, 0.0, 0.5], &[1, 0, 1]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "x0,V,policy");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].ends_with(",0"));
    }
}
