use std::fmt::Write as _;
use std::path::Path;

use interfx::panel::read_side_matrix;
use interfx::PanelDataset;
use nalgebra::DMatrix;

use crate::Failure;

/// Writes `text` to `out`, or to stdout when no path is given.
pub fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn read_panel(path: &Path) -> Result<PanelDataset, Failure> {
    PanelDataset::read_csv(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn read_side(path: &Path) -> Result<DMatrix<f64>, Failure> {
    read_side_matrix(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// `[name]` section with one `m,value` row per candidate.
pub fn criterion_table(name: &str, values: &[f64]) -> String {
    let mut s = format!("\n[{name}]\nm,value\n");
    for (m, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{m},{v:e}");
    }
    s
}
