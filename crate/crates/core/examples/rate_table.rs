//! Fits convergence rates for the canonical family grid and prints the table.

use accel_flow::cli::{render_table, reproduce_table};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = reproduce_table()?;
    print!("{}", render_table(&rows));
    let passed = rows.iter().filter(|r| r.rate_pass).count();
    println!("{passed}/{} rows reach their rate threshold", rows.len());
    Ok(())
}
