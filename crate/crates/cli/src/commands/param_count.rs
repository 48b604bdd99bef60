use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use frpose_core::pose_network::{PoseNetwork, Variant};

use super::prepare_out_dir;
use crate::config::LoadedConfig;
use crate::error::{io_context, Result};
use crate::report::RunReport;

pub const PARAMS_FILE: &str = "params.csv";

/// Parameter counts of the configured network under every ablation variant.
pub fn cmd_param_count(cfg: &LoadedConfig, out: &Path) -> Result<RunReport> {
    let start = Instant::now();
    prepare_out_dir(out)?;
    let mut csv = String::from("variant,parameters,millions\n");
    let mut breakdown = String::new();
    for v in Variant::ALL {
        let net = PoseNetwork::<f32>::build(&cfg.network.clone().with_variant(v), cfg.run.seed)?;
        let stats = net.stats();
        let _ = writeln!(csv, "{v},{},{:.3}", stats.parameter_count, stats.millions());
        let _ = writeln!(breakdown, "{v}\n{stats}");
    }
    let path = out.join(PARAMS_FILE);
    io_context(std::fs::write(&path, &csv), || format!("writing {}", path.display()))?;
    let path = out.join("params_breakdown.txt");
    io_context(std::fs::write(&path, &breakdown), || format!("writing {}", path.display()))?;
    print!("{csv}");
    let mut report = RunReport::new("param-count", cfg.run.seed, cfg.echo());
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out)?;
    Ok(report)
}
