use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    energy_reduction, load_reduction, power_at, stats, PowerParams, TelemetryError, TraceStats, UtilizationTrace,
};

/// Which central value of each trace drives the power model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Median,
    Mean,
}

impl Basis {
    fn pick(self, s: &TraceStats) -> f64 {
        match self {
            Basis::Median => s.median_pct,
            Basis::Mean => s.mean_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub label: String,
    pub samples: usize,
    pub stats: TraceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub basis: Basis,
    pub power: PowerParams,
    pub onboard: TraceSummary,
    pub offload: TraceSummary,
    /// Estimated power with every model onboard.
    pub p_loaded_w: f64,
    /// Estimated power with inference offloaded.
    pub p_base_w: f64,
    pub energy_reduction: f64,
    pub load_reduction: f64,
}

pub fn build_report(
    onboard: &UtilizationTrace,
    offload: &UtilizationTrace,
    power: PowerParams,
    basis: Basis,
) -> Result<EnergyReport, TelemetryError> {
    let on = stats(onboard)?;
    let off = stats(offload)?;
    let u_on = basis.pick(&on);
    let u_off = basis.pick(&off);
    let p_loaded_w = power_at(u_on / 100.0, &power)?;
    let p_base_w = power_at(u_off / 100.0, &power)?;
    Ok(EnergyReport {
        basis,
        power,
        onboard: TraceSummary {
            label: onboard.source_label.clone(),
            samples: onboard.len(),
            stats: on,
        },
        offload: TraceSummary {
            label: offload.source_label.clone(),
            samples: offload.len(),
            stats: off,
        },
        p_loaded_w,
        p_base_w,
        energy_reduction: energy_reduction(p_base_w, p_loaded_w)?,
        load_reduction: load_reduction(u_off, u_on)?,
    })
}

impl EnergyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn from_json(text: &str) -> Result<EnergyReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Statistics at 2 decimals, watts at 1, energy reduction at 1 and load
    /// reduction at 2 decimals of a percent.
    pub fn to_table(&self) -> String {
        let basis = match self.basis {
            Basis::Median => "median",
            Basis::Mean => "mean",
        };
        let (on, off) = (&self.onboard.stats, &self.offload.stats);
        let rows: [(&str, f64, f64); 4] = [
            ("mean (%)", on.mean_pct, off.mean_pct),
            ("median (%)", on.median_pct, off.median_pct),
            ("variance", on.variance, off.variance),
            ("stddev (%)", on.stddev_pct, off.stddev_pct),
        ];
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>12} {:>12}", "", "onboard", "offload");
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12}",
            "samples", self.onboard.samples, self.offload.samples
        );
        for (name, a, b) in rows {
            let _ = writeln!(s, "{name:<12} {a:>12.2} {b:>12.2}");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "power model: idle {:.1} W, full {:.1} W, {basis} utilization",
            self.power.p_idle_w, self.power.p_full_w
        );
        let _ = writeln!(s, "P onboard: {:.1} W", self.p_loaded_w);
        let _ = writeln!(s, "P offload: {:.1} W", self.p_base_w);
        let _ = writeln!(s, "energy reduction: {:.1}%", self.energy_reduction * 100.0);
        let _ = writeln!(s, "load reduction: {:.2}%", self.load_reduction * 100.0);
        s
    }
}
