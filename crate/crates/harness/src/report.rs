use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::error::{HarnessError, Result};
use crate::io::read_json;

/// Markdown tables for a finished bundle: drift MSE, diffusion estimate,
/// safety ratios and timings.
pub fn render(dir: &Path) -> Result<String> {
    let summary: Value = read_json(&dir.join("summary.json"))?;
    let timing: Value = read_json(&dir.join("timing.json"))?;
    let safety_path = dir.join("safety.csv");
    let safety = std::fs::read_to_string(&safety_path).map_err(|e| HarnessError::io(&safety_path, e))?;

    let mut s = String::new();
    let name = summary["name"].as_str().unwrap_or("experiment");
    let _ = writeln!(s, "# {name}\n");
    let _ = writeln!(s, "config `{}`\n", summary["config_hash"].as_str().unwrap_or("?"));

    let _ = writeln!(s, "## Drift MSE (K = {})\n", summary["mse"]["k"]);
    let _ = writeln!(s, "| function | MSE | std. error |\n|---|---|---|");
    for e in summary["mse"]["entries"].as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "| {} | {:.3e} | {:.1e} |",
            e["function"].as_str().unwrap_or("?"),
            e["mse"].as_f64().unwrap_or(f64::NAN),
            e["std_error"].as_f64().unwrap_or(f64::NAN)
        );
    }

    let _ = writeln!(s, "\n## Diffusion\n");
    let _ = writeln!(s, "| channel | true σ | σ̂ | rel. error | residuals |\n|---|---|---|---|---|");
    for d in summary["diffusion"].as_array().into_iter().flatten() {
        let f = |k: &str| d[k].as_f64().unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:+.2}% | {} |",
            d["channel"],
            f("sigma_true"),
            f("sigma_hat"),
            100.0 * f("relative_error"),
            d["n_residuals"]
        );
    }

    let _ = writeln!(s, "\n## Safety ratio\n");
    let _ = writeln!(s, "| x0 | method | ratio | 95% CI | trials | source |\n|---|---|---|---|---|---|");
    let mut reader = csv::Reader::from_reader(safety.as_bytes());
    for rec in reader.records() {
        let rec = rec.map_err(|e| HarnessError::Parse(format!("{}: {e}", safety_path.display())))?;
        let ci = if rec[3].is_empty() { String::new() } else { format!("{}–{}", &rec[3], &rec[4]) };
        let _ = writeln!(s, "| {} | {} | {} | {} | {} | {} |", &rec[0], &rec[1], &rec[2], ci, &rec[5], &rec[6]);
    }

    let _ = writeln!(s, "\n## Timing\n");
    let _ = writeln!(s, "learning: {:.3} s\n", timing["learning_seconds"].as_f64().unwrap_or(f64::NAN));
    let _ = writeln!(s, "| phase | seconds |\n|---|---|");
    for p in timing["phases"].as_array().into_iter().flatten() {
        let _ = writeln!(s, "| {} | {:.3} |", p["phase"].as_str().unwrap_or("?"), p["seconds"].as_f64().unwrap_or(f64::NAN));
    }
    Ok(s)
}
