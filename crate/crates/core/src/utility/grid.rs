use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{UtilityError, UTILITY_MAX, UTILITY_MIN};

/// Quantized utility map indexed by `[tp][d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityGrid {
    /// Throughput levels, kbps, ascending.
    pub tp_levels: Vec<f64>,
    /// Delay budget levels, ms, ascending.
    pub d_levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// A cell changed while enforcing grid monotonicity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Repair {
    pub tp_index: usize,
    pub d_index: usize,
    pub from: f64,
    pub to: f64,
}

impl UtilityGrid {
    /// Builds a grid and checks every invariant.
    pub fn new(tp_levels: Vec<f64>, d_levels: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, UtilityError> {
        let grid = Self {
            tp_levels,
            d_levels,
            values,
        };
        if let Some((_, _, msg)) = grid.violations().into_iter().next() {
            return Err(UtilityError::Config(msg));
        }
        Ok(grid)
    }

    pub fn n_tp(&self) -> usize {
        self.tp_levels.len()
    }

    pub fn n_d(&self) -> usize {
        self.d_levels.len()
    }

    pub fn len(&self) -> usize {
        self.n_tp() * self.n_d()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Invariant violations as `(tp_index, d_index, message)`; axis problems
    /// use `usize::MAX` for the unrelated index.
    pub fn violations(&self) -> Vec<(usize, usize, String)> {
        let mut out = Vec::new();
        if self.tp_levels.is_empty() || self.d_levels.is_empty() {
            out.push((0, 0, "grid needs at least one level per axis".into()));
            return out;
        }
        for (i, w) in self.tp_levels.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                out.push((i + 1, usize::MAX, format!("tp level {} not ascending", w[1])));
            }
        }
        for (j, w) in self.d_levels.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                out.push((usize::MAX, j + 1, format!("d level {} not ascending", w[1])));
            }
        }
        if self.tp_levels.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            out.push((0, usize::MAX, "tp levels must be positive".into()));
        }
        if self.d_levels.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            out.push((usize::MAX, 0, "d levels must be non-negative".into()));
        }
        if self.values.len() != self.n_tp() || self.values.iter().any(|r| r.len() != self.n_d()) {
            out.push((0, 0, "value matrix does not match level counts".into()));
            return out;
        }
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(UTILITY_MIN..=UTILITY_MAX).contains(&v) {
                    out.push((i, j, format!("utility {v} outside [1, 5] at ({i}, {j})")));
                }
                if i > 0 && v < self.values[i - 1][j] {
                    out.push((i, j, format!("utility decreases with throughput at ({i}, {j})")));
                }
                if j > 0 && v > row[j - 1] {
                    out.push((i, j, format!("utility increases with delay at ({i}, {j})")));
                }
            }
        }
        out
    }

    /// Clamps to the scale, then forces monotonicity: running max along
    /// throughput, then running min along delay. Returns changed cells.
    pub fn repair_monotone(&mut self) -> Vec<Repair> {
        let before = self.values.clone();
        for row in &mut self.values {
            for v in row.iter_mut() {
                *v = v.clamp(UTILITY_MIN, UTILITY_MAX);
            }
        }
        for i in 1..self.values.len() {
            for j in 0..self.values[i].len() {
                let prev = self.values[i - 1][j];
                if self.values[i][j] < prev {
                    self.values[i][j] = prev;
                }
            }
        }
        for row in &mut self.values {
            for j in 1..row.len() {
                if row[j] > row[j - 1] {
                    row[j] = row[j - 1];
                }
            }
        }
        let mut repairs = Vec::new();
        for (i, (a, b)) in before.iter().zip(&self.values).enumerate() {
            for (j, (&from, &to)) in a.iter().zip(b).enumerate() {
                if from != to {
                    repairs.push(Repair {
                        tp_index: i,
                        d_index: j,
                        from,
                        to,
                    });
                }
            }
        }
        repairs
    }
}

/// Placement of levels along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisSpacing {
    Linear,
    /// Denser near the lower end: `lo + (hi - lo) * (i / (n - 1))^2`.
    Quadratic,
}

impl AxisSpacing {
    pub fn levels(self, (lo, hi): (f64, f64), steps: usize) -> Vec<f64> {
        if steps <= 1 {
            return vec![lo];
        }
        (0..steps)
            .map(|i| {
                let t = i as f64 / (steps - 1) as f64;
                let t = match self {
                    AxisSpacing::Linear => t,
                    AxisSpacing::Quadratic => t * t,
                };
                if i == steps - 1 {
                    hi
                } else {
                    lo + (hi - lo) * t
                }
            })
            .collect()
    }
}

/// Measurement domain and quantization of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub tp_range: (f64, f64),
    pub d_range: (f64, f64),
    pub tp_steps: usize,
    pub d_steps: usize,
    #[serde(default = "linear")]
    pub tp_spacing: AxisSpacing,
    #[serde(default = "quadratic")]
    pub d_spacing: AxisSpacing,
}

fn linear() -> AxisSpacing {
    AxisSpacing::Linear
}

fn quadratic() -> AxisSpacing {
    AxisSpacing::Quadratic
}

impl GridSpec {
    fn check(&self) -> Result<(), UtilityError> {
        let (tlo, thi) = self.tp_range;
        let (dlo, dhi) = self.d_range;
        if self.tp_steps == 0 || self.d_steps == 0 {
            return Err(UtilityError::Config("grid steps must be >= 1".into()));
        }
        if !(tlo > 0.0 && thi >= tlo) || (self.tp_steps > 1 && thi == tlo) {
            return Err(UtilityError::Config(format!("invalid throughput range [{tlo}, {thi}]")));
        }
        if !(dlo >= 0.0 && dhi >= dlo) || (self.d_steps > 1 && dhi == dlo) {
            return Err(UtilityError::Config(format!("invalid delay range [{dlo}, {dhi}]")));
        }
        Ok(())
    }
}

/// A built grid plus the cells touched by monotone repair.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBuild {
    pub grid: UtilityGrid,
    pub repairs: Vec<Repair>,
}

/// Evaluates `model(tp, d)` at every grid point.
pub fn build_grid<F>(model: F, spec: &GridSpec) -> Result<GridBuild, UtilityError>
where
    F: Fn(f64, f64) -> Result<f64, UtilityError>,
{
    spec.check()?;
    let tp_levels = spec.tp_spacing.levels(spec.tp_range, spec.tp_steps);
    let d_levels = spec.d_spacing.levels(spec.d_range, spec.d_steps);
    let mut values = Vec::with_capacity(tp_levels.len());
    for &tp in &tp_levels {
        let mut row = Vec::with_capacity(d_levels.len());
        for &d in &d_levels {
            let u = model(tp, d).map_err(|e| UtilityError::Build {
                tp,
                d,
                source: Box::new(e),
            })?;
            row.push(u);
        }
        values.push(row);
    }
    let mut grid = UtilityGrid {
        tp_levels,
        d_levels,
        values,
    };
    let repairs = grid.repair_monotone();
    Ok(GridBuild { grid, repairs })
}

pub fn grid_lookup(grid: &UtilityGrid, tp_index: usize, d_index: usize) -> Result<f64, UtilityError> {
    grid.values
        .get(tp_index)
        .and_then(|row| row.get(d_index))
        .copied()
        .ok_or(UtilityError::Index {
            tp: tp_index,
            d: d_index,
            n_tp: grid.n_tp(),
            n_d: grid.n_d(),
        })
}

const CORNER: &str = "tp_kbps\\d_ms";

/// Writes the grid as CSV: header of delay levels, one row per throughput
/// level.
pub fn save_grid(grid: &UtilityGrid, path: &Path) -> Result<(), UtilityError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| load_err(path, e.to_string()))?;
    let mut header = vec![CORNER.to_string()];
    header.extend(grid.d_levels.iter().map(f64::to_string));
    w.write_record(&header).map_err(|e| load_err(path, e.to_string()))?;
    for (tp, row) in grid.tp_levels.iter().zip(&grid.values) {
        let mut rec = vec![tp.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| load_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn load_err(path: &Path, message: String) -> UtilityError {
    UtilityError::Load {
        path: path.display().to_string(),
        message,
    }
}

/// Reads a grid written by [`save_grid`]. With `repair` set, monotonicity
/// and range defects are fixed instead of rejected.
pub fn load_grid(path: &Path, repair: bool) -> Result<UtilityGrid, UtilityError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(path, e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| load_err(path, e.to_string()))?);
    }
    let Some((header, body)) = rows.split_first() else {
        return Err(load_err(path, "empty file".into()));
    };
    let num = |s: &str, row: usize, col: usize| -> Result<f64, UtilityError> {
        s.parse::<f64>()
            .map_err(|_| load_err(path, format!("row {row}, column {col}: not a number: {s:?}")))
    };
    let d_levels = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, s)| num(s, 1, c + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let mut tp_levels = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in body.iter().enumerate() {
        let row_no = r + 2;
        if rec.len() != d_levels.len() + 1 {
            return Err(load_err(
                path,
                format!(
                    "row {row_no}: expected {} fields, found {}",
                    d_levels.len() + 1,
                    rec.len()
                ),
            ));
        }
        tp_levels.push(num(&rec[0], row_no, 1)?);
        values.push(
            rec.iter()
                .enumerate()
                .skip(1)
                .map(|(c, s)| num(s, row_no, c + 1))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let mut grid = UtilityGrid {
        tp_levels,
        d_levels,
        values,
    };
    // axis defects are never repairable
    let axis_or_shape = |g: &UtilityGrid| {
        g.violations()
            .into_iter()
            .find(|(i, j, m)| *i == usize::MAX || *j == usize::MAX || m.contains("level") || m.contains("matrix"))
    };
    if let Some((i, j, msg)) = axis_or_shape(&grid) {
        return Err(load_err(path, locate(i, j, &msg)));
    }
    if repair {
        grid.repair_monotone();
    }
    if let Some((i, j, msg)) = grid.violations().into_iter().next() {
        return Err(load_err(path, locate(i, j, &msg)));
    }
    Ok(grid)
}

fn locate(i: usize, j: usize, msg: &str) -> String {
    // file row = tp index + 2 (header), file column = d index + 2 (tp column)
    let row = if i == usize::MAX {
        "-".to_string()
    } else {
        (i + 2).to_string()
    };
    let col = if j == usize::MAX {
        "-".to_string()
    } else {
        (j + 2).to_string()
    };
    format!("row {row}, column {col}: {msg}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{mos_dl, AppClass, ClassModel};

    fn dl_spec() -> GridSpec {
        GridSpec {
            tp_range: (4000.0, 5000.0),
            d_range: (0.0, 0.0),
            tp_steps: 2,
            d_steps: 1,
            tp_spacing: AxisSpacing::Linear,
            d_spacing: AxisSpacing::Linear,
        }
    }

    #[test]
    fn dl_two_point_grid() {
        let m = ClassModel::new(AppClass::Dl);
        let b = build_grid(|tp, d| m.evaluate(tp, d), &dl_spec()).unwrap();
        assert!(b.repairs.is_empty());
        assert_eq!(b.grid.tp_levels, vec![4000.0, 5000.0]);
        let v = [b.grid.values[0][0], b.grid.values[1][0]];
        assert_eq!(v, [mos_dl(20.0).unwrap(), mos_dl(16.0).unwrap()]);
        assert!((v[0] - 4.58).abs() <= 0.02, "{v:?}");
        assert!((v[1] - 4.95).abs() <= 0.02, "{v:?}");
    }

    #[test]
    fn single_cell_grid_is_direct_evaluation() {
        for class in AppClass::ALL {
            let m = ClassModel::new(class);
            let spec = GridSpec {
                tp_range: (1234.0, 1234.0),
                d_range: (17.0, 17.0),
                tp_steps: 1,
                d_steps: 1,
                tp_spacing: AxisSpacing::Linear,
                d_spacing: AxisSpacing::Linear,
            };
            let b = build_grid(|tp, d| m.evaluate(tp, d), &spec).unwrap();
            assert_eq!(b.grid.values, vec![vec![m.evaluate(1234.0, 17.0).unwrap()]]);
        }
    }

    #[test]
    fn ssh_grid_is_constant_along_throughput() {
        let m = ClassModel::new(AppClass::Ssh);
        let b = build_grid(|tp, d| m.evaluate(tp, d), &AppClass::Ssh.default_grid_spec()).unwrap();
        assert_eq!(b.grid.d_levels.last(), Some(&500.0));
        for row in &b.grid.values[1..] {
            assert_eq!(row, &b.grid.values[0]);
        }
        assert_eq!(b.grid.values[0][0], 5.0);
    }

    #[test]
    fn default_class_grids_are_exact_and_monotone() {
        for class in AppClass::ALL {
            let m = ClassModel::new(class);
            let spec = class.default_grid_spec();
            let b = build_grid(|tp, d| m.evaluate(tp, d), &spec).unwrap();
            assert!(b.repairs.is_empty(), "{class}: {:?}", b.repairs);
            assert!(b.grid.violations().is_empty());
            assert_eq!((b.grid.n_tp(), b.grid.n_d()), (12, 8));
            for (i, &tp) in b.grid.tp_levels.iter().enumerate() {
                for (j, &d) in b.grid.d_levels.iter().enumerate() {
                    assert_eq!(b.grid.values[i][j], m.evaluate(tp, d).unwrap());
                }
            }
        }
    }

    #[test]
    fn repair_reports_cells() {
        let b = build_grid(
            |tp, d| Ok(if tp > 150.0 && d < 1.0 { 2.0 } else { 3.0 }),
            &GridSpec {
                tp_range: (100.0, 200.0),
                d_range: (0.0, 10.0),
                tp_steps: 2,
                d_steps: 2,
                tp_spacing: AxisSpacing::Linear,
                d_spacing: AxisSpacing::Linear,
            },
        )
        .unwrap();
        assert_eq!(b.repairs.len(), 1);
        assert_eq!((b.repairs[0].tp_index, b.repairs[0].d_index), (1, 0));
        assert!(b.grid.violations().is_empty());
    }

    #[test]
    fn build_error_names_the_point() {
        let err = build_grid(
            |tp, _| {
                if tp > 150.0 {
                    Err(UtilityError::Config("boom".into()))
                } else {
                    Ok(1.0)
                }
            },
            &GridSpec {
                tp_range: (100.0, 200.0),
                d_range: (0.0, 0.0),
                tp_steps: 2,
                d_steps: 1,
                tp_spacing: AxisSpacing::Linear,
                d_spacing: AxisSpacing::Linear,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("tp=200"), "{err}");
    }

    #[test]
    fn lookup() {
        let m = ClassModel::new(AppClass::Dl);
        let g = build_grid(|tp, d| m.evaluate(tp, d), &AppClass::Dl.default_grid_spec())
            .unwrap()
            .grid;
        let corner = grid_lookup(&g, g.n_tp() - 1, 0).unwrap();
        assert_eq!(corner, g.max_value());
        assert_eq!(grid_lookup(&g, 0, 0).unwrap(), m.evaluate(100.0, 0.0).unwrap());
        assert!(matches!(grid_lookup(&g, 12, 0), Err(UtilityError::Index { .. })));
        assert!(grid_lookup(&g, 0, 8).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let m = ClassModel::new(AppClass::Web);
        let g = build_grid(|tp, d| m.evaluate(tp, d), &AppClass::Web.default_grid_spec())
            .unwrap()
            .grid;
        save_grid(&g, &path).unwrap();
        assert_eq!(load_grid(&path, false).unwrap(), g);
    }

    #[test]
    fn csv_rejects_out_of_range_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "tp,0,10\n100,5.3,4\n200,5,4.5\n").unwrap();
        let err = load_grid(&path, false).unwrap_err().to_string();
        assert!(err.contains("row 2, column 2"), "{err}");
        assert!(err.contains("5.3"), "{err}");
    }

    #[test]
    fn csv_rejects_unsorted_throughput() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "tp,0\n200,3\n100,4\n").unwrap();
        let err = load_grid(&path, true).unwrap_err().to_string();
        assert!(err.contains("not ascending"), "{err}");
    }

    #[test]
    fn csv_repair_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "tp,0,10\n100,3,3.5\n200,2,2\n").unwrap();
        assert!(load_grid(&path, false).is_err());
        let g = load_grid(&path, true).unwrap();
        assert_eq!(g.values, vec![vec![3.0, 3.0], vec![3.0, 3.0]]);
    }
}
