//! Drive a whole experiment from a JSON config through the library —
//! the same path the `dfm` binary takes — and show where the CSV and
//! its sidecar landed, plus the first few result rows.
//!
//!     cargo run --example run_experiment

use dfm::config::ExperimentConfig;
use dfm::experiment::run;

fn main() -> dfm::Result<()> {
    let out_dir = std::env::temp_dir().join("dfm-example-run");
    let config = ExperimentConfig::from_json(&format!(
        r#"{{
          "experiment": "sweep-h",
          "coupling": {{
            "type": "independent",
            "mu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}},
            "nu": {{
              "weights": [0.5, 0.5],
              "means": [[-1.0], [1.5]],
              "covs": [[[0.4]], [[0.7]]]
            }}
          }},
          "grid": {{"n_steps_list": [8, 16, 32]}},
          "n": 5000,
          "seed": 7,
          "out": {:?}
        }}"#,
        out_dir
    ))?;

    let output = run(&config)?;
    println!("csv:     {}", output.csv_path.display());
    println!("sidecar: {}", output.sidecar_path.display());
    println!("\nfirst rows:");
    for row in output.rows.iter().take(5) {
        println!(
            "  {} / {} = {:.5e} (stderr {:.1e}, h = {:?})",
            row.experiment, row.metric, row.value, row.stderr, row.h
        );
    }
    println!("... {} rows total", output.rows.len());
    Ok(())
}
