use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use frpose_core::heatmap_codec::{analyze_grid, flip_displacement, Alignment, ANALYZED_STRIDES};

use super::prepare_out_dir;
use crate::config::LoadedConfig;
use crate::error::{io_context, Result};
use crate::report::RunReport;

pub const QUANTIZATION_FILE: &str = "quantization.csv";
pub const FLIP_FILE: &str = "flip_displacement.csv";

/// Encode→decode error for strides 4/2/1, both decode modes, flip off/on and
/// both cell alignments, plus the peak displacement flip averaging causes.
pub fn cmd_analyze_quantization(cfg: &LoadedConfig, out: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let mut q = cfg.run.quantization.clone();
    q.seed = cfg.run.seed;
    prepare_out_dir(out)?;

    let rows = analyze_grid(&q)?;
    let mut csv = String::from(frpose_core::heatmap_codec::QuantizationRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    let path = out.join(QUANTIZATION_FILE);
    io_context(std::fs::write(&path, &csv), || format!("writing {}", path.display()))?;

    let mut flips = String::from("stride,alignment,shift,mean_cells,max_cells\n");
    for alignment in [Alignment::HalfPixel, Alignment::Corner] {
        for stride in ANALYZED_STRIDES {
            for shift in [0, 1] {
                let d = flip_displacement(&q, stride, alignment, shift)?;
                let a = match alignment {
                    Alignment::HalfPixel => "half_pixel",
                    Alignment::Corner => "corner",
                };
                let _ = writeln!(flips, "{stride},{a},{shift},{:.6},{:.6}", d.mean_cells, d.max_cells);
            }
        }
    }
    let path = out.join(FLIP_FILE);
    io_context(std::fs::write(&path, &flips), || format!("writing {}", path.display()))?;
    print!("{csv}");

    let mut report = RunReport::new("analyze-quantization", cfg.run.seed, cfg.echo());
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out)?;
    Ok(report)
}
