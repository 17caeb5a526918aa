use crate::device::{branch_conductance, branch_current, linear_conductance, Branch, BranchState, DeviceModel};
use crate::netlist::{CellKind, Netlist};
use crate::signal::{edge_schedule, Level, PwmSpec};

use super::trace::Sample;
use super::{SolverError, SolverMode, SolverOptions, SteadyStateResult};

const MAX_NEWTON_ITER: usize = 100;

/// `V -> a*V + b`. `one_minus_a` is carried separately to keep the fixed
/// point accurate when `a` is close to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
    pub one_minus_a: f64,
}

impl AffineMap {
    pub fn apply(&self, v: f64) -> f64 {
        self.a * v + self.b
    }

    pub fn fixed_point(&self) -> f64 {
        self.b / self.one_minus_a
    }
}

/// Per-window running integrals.
#[derive(Debug, Clone, Copy)]
struct Accum {
    int_v: f64,
    int_supply: f64,
    v_min: f64,
    v_max: f64,
}

impl Accum {
    fn new(v0: f64) -> Self {
        Accum { int_v: 0.0, int_supply: 0.0, v_min: v0, v_max: v0 }
    }

    fn touch(&mut self, v: f64) {
        self.v_min = self.v_min.min(v);
        self.v_max = self.v_max.max(v);
    }
}

struct Segment {
    t0: f64,
    t1: f64,
    levels: Vec<Level>,
}

pub(super) struct Engine<'a> {
    netlist: &'a Netlist,
    stimuli: &'a [PwmSpec],
    opts: SolverOptions,
    max_step: f64,
    /// (pull-up, pull-down) conductances per cell, linear model only.
    linear_g: Option<Vec<(f64, f64)>>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        netlist: &'a Netlist,
        stimuli: &'a [PwmSpec],
        opts: &SolverOptions,
        max_step: f64,
    ) -> Result<Self, SolverError> {
        let linear_g = match netlist.model() {
            DeviceModel::Linear(m) => Some(
                netlist
                    .cells()
                    .iter()
                    .map(|c| {
                        (
                            linear_conductance(m, &c.geometry, Branch::PullUp),
                            linear_conductance(m, &c.geometry, Branch::PullDown),
                        )
                    })
                    .collect(),
            ),
            DeviceModel::SquareLaw(_) => None,
        };
        if opts.mode == SolverMode::AnalyticLinear && linear_g.is_none() {
            return Err(SolverError::NonlinearModel);
        }
        Ok(Engine { netlist, stimuli, opts: *opts, max_step, linear_g })
    }

    fn segments(&self, t0: f64, t1: f64) -> Vec<Segment> {
        let mut levels: Vec<Level> = self.stimuli.iter().map(|s| s.level_at(t0)).collect();
        let events = edge_schedule(self.stimuli, t0, t1);
        let mut out = Vec::with_capacity(events.len() + 1);
        let mut cursor = t0;
        let mut i = 0;
        while i < events.len() {
            let t = events[i].time;
            if t > cursor {
                out.push(Segment { t0: cursor, t1: t, levels: levels.clone() });
                cursor = t;
            }
            while i < events.len() && events[i].time == t {
                levels[events[i].input_index] = events[i].new_level;
                i += 1;
            }
        }
        if t1 > cursor {
            out.push(Segment { t0: cursor, t1, levels });
        }
        out
    }

    fn branch_states(&self, levels: &[Level]) -> Vec<BranchState> {
        let v_dd = self.netlist.v_dd();
        self.netlist
            .cells()
            .iter()
            .map(|c| {
                let branch = c.drive_state(levels[c.input_index]);
                let gate_drive = match (c.kind, branch) {
                    // the PWM input drives the inverter gates directly
                    (CellKind::Inverter, Branch::PullDown) => self.stimuli[c.input_index].v_high(),
                    (CellKind::Inverter, Branch::PullUp) => v_dd - self.stimuli[c.input_index].v_low(),
                    (CellKind::Gated { .. }, _) => v_dd,
                };
                BranchState { branch, gate_drive }
            })
            .collect()
    }

    /// (total conductance, pull-up conductance) of a linear segment.
    fn linear_totals(&self, levels: &[Level]) -> (f64, f64) {
        let gs = self.linear_g.as_ref().expect("linear model");
        let mut total = 0.0;
        let mut up = 0.0;
        for (c, &(g_up, g_dn)) in self.netlist.cells().iter().zip(gs) {
            match c.drive_state(levels[c.input_index]) {
                Branch::PullUp => {
                    total += g_up;
                    up += g_up;
                }
                Branch::PullDown => total += g_dn,
            }
        }
        (total, up)
    }

    fn substeps(&self, duration: f64) -> usize {
        ((duration / self.max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    /// Exact relaxation over one linear segment.
    fn advance_linear(&self, seg: &Segment, v0: f64, sink: Option<&mut Vec<Sample>>, acc: &mut Accum) -> f64 {
        let (g, g_up) = self.linear_totals(&seg.levels);
        let c = self.netlist.c_out();
        let v_dd = self.netlist.v_dd();
        let duration = seg.t1 - seg.t0;
        if g <= 0.0 {
            acc.int_v += v0 * duration;
            return v0;
        }
        let target = g_up * v_dd / g;
        let tau = c / g;
        let relax = |dt: f64| {
            let decay = (-dt / tau).exp();
            let one_minus = -(-dt / tau).exp_m1();
            (target + (v0 - target) * decay, target * dt + (v0 - target) * tau * one_minus)
        };
        let (v1, int_v) = relax(duration);
        acc.int_v += int_v;
        acc.int_supply += g_up * (v_dd * duration - int_v);
        acc.touch(v1);
        if let Some(samples) = sink {
            let n = self.substeps(duration);
            for k in 1..=n {
                let (t, v) = if k == n {
                    (seg.t1, v1)
                } else {
                    let dt = duration * k as f64 / n as f64;
                    (seg.t0 + dt, relax(dt).0)
                };
                samples.push(Sample { t, v_node: v, i_supply: g_up * (v_dd - v) });
            }
        }
        v1
    }

    fn node_currents(&self, states: &[BranchState], v: f64) -> Result<(f64, f64), SolverError> {
        let mut total = 0.0;
        let mut supply = 0.0;
        for (cell, &st) in self.netlist.cells().iter().zip(states) {
            let i = branch_current(self.netlist.model(), &cell.geometry, st, self.netlist.v_dd(), v)?;
            total += i;
            if st.branch == Branch::PullUp {
                supply += i;
            }
        }
        Ok((total, supply))
    }

    /// Backward-Euler substeps over one segment.
    fn advance_implicit(
        &self,
        seg: &Segment,
        v0: f64,
        mut sink: Option<&mut Vec<Sample>>,
        acc: &mut Accum,
    ) -> Result<f64, SolverError> {
        let states = self.branch_states(&seg.levels);
        let model = self.netlist.model();
        let v_dd = self.netlist.v_dd();
        let c = self.netlist.c_out();
        let duration = seg.t1 - seg.t0;
        let n = self.substeps(duration);
        let h = duration / n as f64;
        let mut v_prev = v0;
        for k in 1..=n {
            let t = if k == n { seg.t1 } else { seg.t0 + duration * k as f64 / n as f64 };
            let mut v = v_prev;
            let mut converged = false;
            for _ in 0..MAX_NEWTON_ITER {
                let (i_total, _) = self.node_currents(&states, v)?;
                let mut g_total = 0.0;
                for (cell, &st) in self.netlist.cells().iter().zip(&states) {
                    g_total += branch_conductance(model, &cell.geometry, st, v_dd, v)?;
                }
                let residual = c * (v - v_prev) / h - i_total;
                let dv = -residual / (c / h + g_total);
                v += dv;
                if !v.is_finite() {
                    break;
                }
                if dv.abs() < self.opts.newton_tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(SolverError::NewtonDiverged { time: t, voltage: v });
            }
            let (_, i_supply) = self.node_currents(&states, v)?;
            acc.int_v += 0.5 * h * (v_prev + v);
            acc.int_supply += h * i_supply;
            acc.touch(v);
            if let Some(samples) = sink.as_deref_mut() {
                samples.push(Sample { t, v_node: v, i_supply });
            }
            v_prev = v;
        }
        Ok(v_prev)
    }

    fn supply_current_at(&self, levels: &[Level], v: f64) -> Result<f64, SolverError> {
        if self.linear_g.is_some() {
            let (_, g_up) = self.linear_totals(levels);
            Ok(g_up * (self.netlist.v_dd() - v))
        } else {
            Ok(self.node_currents(&self.branch_states(levels), v)?.1)
        }
    }

    fn advance(&self, seg: &Segment, v0: f64, sink: Option<&mut Vec<Sample>>, acc: &mut Accum) -> Result<f64, SolverError> {
        match self.opts.mode {
            SolverMode::AnalyticLinear => Ok(self.advance_linear(seg, v0, sink, acc)),
            SolverMode::ImplicitNonlinear => self.advance_implicit(seg, v0, sink, acc),
        }
    }

    /// Integrates `[t0, t1]` from `v0`, returning the end voltage and the
    /// window integrals. Samples, when requested, include `t0`.
    fn run_window(
        &self,
        t0: f64,
        t1: f64,
        v0: f64,
        mut sink: Option<&mut Vec<Sample>>,
    ) -> Result<(f64, Accum), SolverError> {
        let segments = self.segments(t0, t1);
        let mut acc = Accum::new(v0);
        if let (Some(samples), Some(first)) = (sink.as_deref_mut(), segments.first()) {
            let i_supply = self.supply_current_at(&first.levels, v0)?;
            samples.push(Sample { t: t0, v_node: v0, i_supply });
        }
        let mut v = v0;
        for seg in &segments {
            v = self.advance(seg, v, sink.as_deref_mut(), &mut acc)?;
        }
        Ok((v, acc))
    }

    pub(super) fn run(&self, t0: f64, t1: f64, v0: f64, sink: Option<&mut Vec<Sample>>) -> Result<f64, SolverError> {
        self.run_window(t0, t1, v0, sink).map(|(v, _)| v)
    }

    pub(super) fn affine_map(&self, t0: f64, t1: f64) -> Result<AffineMap, SolverError> {
        if self.linear_g.is_none() {
            return Err(SolverError::NonlinearModel);
        }
        let c = self.netlist.c_out();
        let v_dd = self.netlist.v_dd();
        let mut a = 1.0;
        let mut b = 0.0;
        let mut exponent = 0.0;
        for seg in self.segments(t0, t1) {
            let (g, g_up) = self.linear_totals(&seg.levels);
            if g <= 0.0 {
                continue;
            }
            let x = (seg.t1 - seg.t0) * g / c;
            let seg_a = (-x).exp();
            let seg_b = g_up * v_dd / g * -(-x).exp_m1();
            a *= seg_a;
            b = seg_a * b + seg_b;
            exponent += x;
        }
        Ok(AffineMap { a, b, one_minus_a: -(-exponent).exp_m1() })
    }

    fn result(&self, window: f64, v_start: f64, v_end: f64, acc: &Accum, periods: usize, converged: bool) -> SteadyStateResult {
        SteadyStateResult {
            v_avg: acc.int_v / window,
            ripple_pp: acc.v_max - acc.v_min,
            avg_power: self.netlist.v_dd() * acc.int_supply / window,
            periods_to_converge: periods,
            window,
            v_start,
            v_end,
            converged,
        }
    }

    pub(super) fn closed_form_pss(&self, window: f64) -> Result<SteadyStateResult, SolverError> {
        let map = self.affine_map(0.0, window)?;
        let v_star = if map.one_minus_a > 0.0 { map.fixed_point() } else { self.opts.v_init };
        let (v_end, acc) = self.run_window(0.0, window, v_star, None)?;
        Ok(self.result(window, v_star, v_end, &acc, 1, true))
    }

    pub(super) fn settle_pss(&self, window: f64) -> Result<SteadyStateResult, SolverError> {
        if self.opts.accelerate {
            self.shoot_pss(window)
        } else {
            self.iterate_pss(window, self.opts.v_init, 0)
        }
    }

    /// Plain period-by-period settling from `v`, with `used` periods
    /// already spent.
    fn iterate_pss(&self, window: f64, mut v: f64, used: usize) -> Result<SteadyStateResult, SolverError> {
        let mut last = None;
        for period in used + 1..=self.opts.max_periods {
            let (v_next, acc) = self.run_window(0.0, window, v, None)?;
            if (v_next - v).abs() < self.opts.ss_tol {
                return Ok(self.result(window, v, v_next, &acc, period, true));
            }
            last = Some((v, v_next, acc, period));
            v = v_next;
        }
        let (v_start, v_end, acc, periods) = match last {
            Some(l) => l,
            None => {
                let (v_end, acc) = self.run_window(0.0, window, v, None)?;
                (v, v_end, acc, used)
            }
        };
        Ok(self.result(window, v_start, v_end, &acc, periods, false))
    }

    /// Shooting on g(v) = P(v) - v, where P maps the start voltage of one
    /// window to its end voltage. The node is confined between the rails,
    /// so g changes sign across [min(0, v_init), max(v_dd, v_init)] and an
    /// Illinois regula falsi keeps the root bracketed. Each evaluation costs
    /// one simulated window; the stopping test is the plain |P(v) - v|.
    fn shoot_pss(&self, window: f64) -> Result<SteadyStateResult, SolverError> {
        let tol = self.opts.ss_tol;
        let budget = self.opts.max_periods;
        let mut periods = 0;
        let mut eval = |v: f64| -> Result<(f64, Accum), SolverError> {
            periods += 1;
            let (v_end, acc) = self.run_window(0.0, window, v, None)?;
            Ok((v_end - v, acc))
        };

        let v0 = self.opts.v_init;
        let (g0, acc0) = eval(v0)?;
        if g0.abs() < tol {
            return Ok(self.result(window, v0, v0 + g0, &acc0, 1, true));
        }
        let v_dd = self.netlist.v_dd();
        let far = if g0 > 0.0 { v_dd.max(v0) } else { v0.min(0.0) };
        if far == v0 || budget < 2 {
            return self.iterate_pss(window, v0 + g0, 1);
        }
        let (g_far, acc_far) = eval(far)?;
        if g_far.abs() < tol {
            return Ok(self.result(window, far, far + g_far, &acc_far, 2, true));
        }
        if g_far.signum() == g0.signum() {
            return self.iterate_pss(window, v0 + g0, 2);
        }

        let (mut a, mut ga, mut b, mut gb) = (v0, g0, far, g_far);
        let mut side = 0i8;
        let mut best = if g0.abs() < g_far.abs() { v0 + g0 } else { far + g_far };
        let mut used = 2;
        while used < budget {
            let mut c = (a * gb - b * ga) / (gb - ga);
            if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
                c = 0.5 * (a + b);
            }
            let (gc, acc) = eval(c)?;
            used += 1;
            if gc.abs() < tol {
                return Ok(self.result(window, c, c + gc, &acc, used, true));
            }
            best = c + gc;
            if gc.signum() == gb.signum() {
                b = c;
                gb = gc;
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            } else {
                a = c;
                ga = gc;
                if side == -1 {
                    gb *= 0.5;
                }
                side = -1;
            }
            if (b - a).abs() <= 4.0 * f64::EPSILON * v_dd.max(a.abs()).max(b.abs()) {
                // bracket exhausted without meeting tol (map noise); fall back
                break;
            }
        }
        self.iterate_pss(window, best, periods)
    }

    /// Averages over the second half of `[0, horizon]`.
    pub(super) fn long_run(&self, horizon: f64) -> Result<SteadyStateResult, SolverError> {
        let half = 0.5 * horizon;
        let v_mid = self.run(0.0, half, self.opts.v_init, None)?;
        let (v_end, acc) = self.run_window(half, horizon, v_mid, None)?;
        Ok(self.result(horizon - half, v_mid, v_end, &acc, 0, true))
    }
}
