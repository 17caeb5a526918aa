use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub v_node: f64,
    /// Total current drawn from the supply through pull-up branches.
    pub i_supply: f64,
}

/// Time-ordered node samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransientTrace {
    samples: Vec<Sample>,
}

impl TransientTrace {
    pub fn new(samples: Vec<Sample>) -> Self {
        debug_assert!(samples.windows(2).all(|w| w[0].t < w[1].t));
        TransientTrace { samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Integral over `[t0, t1]` of the piecewise-linear interpolation of `f`.
    fn integrate(&self, t0: f64, t1: f64, f: impl Fn(&Sample) -> f64) -> f64 {
        let mut total = 0.0;
        for w in self.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let lo = a.t.max(t0);
            let hi = b.t.min(t1);
            if hi <= lo {
                continue;
            }
            let (fa, fb) = (f(a), f(b));
            let at = |t: f64| fa + (fb - fa) * (t - a.t) / (b.t - a.t);
            total += 0.5 * (at(lo) + at(hi)) * (hi - lo);
        }
        total
    }

    pub fn average_voltage(&self, t0: f64, t1: f64) -> f64 {
        self.integrate(t0, t1, |s| s.v_node) / (t1 - t0)
    }

    pub fn average_supply_power(&self, v_dd: f64, t0: f64, t1: f64) -> f64 {
        v_dd * self.integrate(t0, t1, |s| s.i_supply) / (t1 - t0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_s,v_node_V,i_supply_A")?;
        for s in &self.samples {
            writeln!(out, "{},{},{}", s.t, s.v_node, s.i_supply)?;
        }
        Ok(())
    }
}
