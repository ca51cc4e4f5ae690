use std::time::{Duration, Instant};

use super::{TelemetryError, UtilizationTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_s: f64,
    pub util_pct: f64,
}

/// A source of whole-system utilization samples.
pub trait Sampler {
    fn label(&self) -> &str;

    /// Blocks until the next sample is due. `None` once the sampler is done.
    fn next_sample(&mut self) -> Result<Option<Sample>, TelemetryError>;
}

/// Drains a sampler into a trace.
pub fn collect(sampler: &mut dyn Sampler) -> Result<UtilizationTrace, TelemetryError> {
    let mut trace = UtilizationTrace::new(sampler.label());
    while let Some(s) = sampler.next_sample()? {
        trace.push(s.t_s, s.util_pct)?;
    }
    Ok(trace)
}

/// Replays a recorded trace without waiting.
pub struct ReplaySampler {
    trace: UtilizationTrace,
    next: usize,
}

impl ReplaySampler {
    pub fn new(trace: UtilizationTrace) -> ReplaySampler {
        ReplaySampler { trace, next: 0 }
    }
}

impl Sampler for ReplaySampler {
    fn label(&self) -> &str {
        &self.trace.source_label
    }

    fn next_sample(&mut self) -> Result<Option<Sample>, TelemetryError> {
        let p = self.trace.samples().get(self.next).copied();
        self.next += 1;
        Ok(p.map(|p| Sample {
            t_s: p.t_s,
            util_pct: p.util_pct,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CpuTimes {
    idle: u64,
    total: u64,
}

const PROC_STAT: &str = "/proc/stat";

fn read_cpu_times() -> Result<CpuTimes, TelemetryError> {
    let text =
        std::fs::read_to_string(PROC_STAT).map_err(|e| TelemetryError::Unavailable(format!("{PROC_STAT}: {e}")))?;
    parse_cpu_line(text.lines().next().unwrap_or(""))
        .ok_or_else(|| TelemetryError::Unavailable(format!("{PROC_STAT}: unrecognized format")))
}

/// Aggregate `cpu` line: user nice system idle iowait irq softirq steal ...
fn parse_cpu_line(line: &str) -> Option<CpuTimes> {
    let mut it = line.split_whitespace();
    if it.next()? != "cpu" {
        return None;
    }
    let v: Vec<u64> = it.map(|f| f.parse().ok()).collect::<Option<_>>()?;
    if v.len() < 4 {
        return None;
    }
    // guest and guest_nice are already counted in user and nice.
    let total: u64 = v.iter().take(8).sum();
    let idle = v[3] + v.get(4).copied().unwrap_or(0);
    Some(CpuTimes { idle, total })
}

/// Whole-system CPU utilization from `/proc/stat`, one sample per interval
/// over the busy share of the elapsed jiffies.
pub struct HostSampler {
    interval: Duration,
    remaining: u64,
    start: Instant,
    ticks: u64,
    prev: CpuTimes,
}

impl HostSampler {
    /// `floor(duration / interval)` samples; errors where `/proc/stat` is
    /// not available.
    pub fn new(interval: Duration, duration: Duration) -> Result<HostSampler, TelemetryError> {
        if interval.is_zero() {
            return Err(TelemetryError::NonPositive("sampling interval"));
        }
        let prev = read_cpu_times()?;
        Ok(HostSampler {
            interval,
            remaining: (duration.as_nanos() / interval.as_nanos()) as u64,
            start: Instant::now(),
            ticks: 0,
            prev,
        })
    }

    /// Unbounded variant, for sampling alongside a run.
    pub fn unbounded(interval: Duration) -> Result<HostSampler, TelemetryError> {
        let mut s = HostSampler::new(interval, interval)?;
        s.remaining = u64::MAX;
        Ok(s)
    }
}

impl Sampler for HostSampler {
    fn label(&self) -> &str {
        PROC_STAT
    }

    fn next_sample(&mut self) -> Result<Option<Sample>, TelemetryError> {
        if self.remaining == 0 {
            return Ok(None);
        }
        self.remaining -= 1;
        self.ticks += 1;
        let due = self.start + self.interval * u32::try_from(self.ticks).unwrap_or(u32::MAX);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        let now = read_cpu_times()?;
        let total = now.total.saturating_sub(self.prev.total);
        let idle = now.idle.saturating_sub(self.prev.idle).min(total);
        self.prev = now;
        let util = if total == 0 {
            0.0
        } else {
            100.0 * (total - idle) as f64 / total as f64
        };
        Ok(Some(Sample {
            t_s: self.start.elapsed().as_secs_f64(),
            util_pct: util.clamp(0.0, 100.0),
        }))
    }
}

/// Samples the host for `duration` at `interval`.
pub fn sample_host(interval: Duration, duration: Duration) -> Result<UtilizationTrace, TelemetryError> {
    collect(&mut HostSampler::new(interval, duration)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpu_line() {
        let t = parse_cpu_line("cpu  10 0 5 80 5 0 0 0 0 0").unwrap();
        assert_eq!(t, CpuTimes { idle: 85, total: 100 });
        assert!(parse_cpu_line("cpu0 1 2 3 4").is_none());
        assert!(parse_cpu_line("cpu 1 2").is_none());
    }
}
