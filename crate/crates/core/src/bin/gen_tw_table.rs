//! One-shot generator for the checked-in Tracy-Widom CDF table.
//!
//! Usage: gen-tw-table [output-path]

use mmwave_cs::analysis::{painleve_f2_grid, render_table};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/data/tw_f2.dat".to_string());
    let rows = painleve_f2_grid(-10.0, 6.0, 0.005);
    let text = render_table(
        &rows,
        "painleve-ii rk4 h=5e-4, airy asymptotic boundary at x=10, s in [-10,6] step 0.005",
    );
    std::fs::write(&path, text).expect("write table");
    eprintln!("wrote {} rows to {path}", rows.len());
}
