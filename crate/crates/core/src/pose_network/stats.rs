use std::fmt;

use crate::tensor_core::{ParamStore, Real};

/// Trainable-scalar count with a per-module breakdown. Modules are the first
/// dotted component of each parameter name, in build order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkStats {
    pub parameter_count: usize,
    pub breakdown: Vec<(String, usize)>,
}

impl NetworkStats {
    pub fn of<T: Real>(store: &ParamStore<T>) -> Self {
        let mut breakdown: Vec<(String, usize)> = Vec::new();
        for (_, name, t) in store.iter() {
            let module = name.split('.').next().unwrap_or(name);
            let n = t.shape().numel();
            match breakdown.iter_mut().find(|(m, _)| m == module) {
                Some((_, count)) => *count += n,
                None => breakdown.push((module.to_string(), n)),
            }
        }
        Self {
            parameter_count: breakdown.iter().map(|(_, n)| n).sum(),
            breakdown,
        }
    }

    pub fn module(&self, name: &str) -> Option<usize> {
        self.breakdown.iter().find(|(m, _)| m == name).map(|(_, n)| *n)
    }

    /// Count in millions.
    pub fn millions(&self) -> f64 {
        self.parameter_count as f64 / 1e6
    }
}

impl fmt::Display for NetworkStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (m, n) in &self.breakdown {
            writeln!(f, "{m:<14} {n:>12}")?;
        }
        write!(f, "{:<14} {:>12}", "total", self.parameter_count)
    }
}
