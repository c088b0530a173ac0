//! The continuous-state dynamic program.
//!
//! Each candidate is a changepoint vector carrying the quadratic cost of
//! segmenting `y[..t]` with those changes and the fitted value at `t` as
//! argument. Per time step every candidate's quadratic is refreshed over its
//! trailing segment, the pointwise minimum of all quadratics is swept from
//! `-inf` to `+inf`, and only candidates owning part of that envelope spawn
//! children. Candidates whose minimum exceeds the global minimum by more than
//! `2 beta + h(1) + h(n)` are discarded.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadfn::{minimize_out_start, Quadratic, ABS_TOL, REL_TOL};
use crate::segcost::{validate_data, PenaltyConfig, PrefixSums};

/// Index of a node in a [`ChangeTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

#[derive(Debug, Clone, Copy)]
struct Node {
    time: u32,
    depth: u32,
    parent: Option<NodeId>,
}

/// Arena of prefix-sharing changepoint vectors.
///
/// The root is the vector with no changes (time 0). Extending a vector adds
/// a child node and never touches the prefix.
#[derive(Debug, Clone)]
pub struct ChangeTree {
    nodes: Vec<Node>,
}

impl Default for ChangeTree {
    fn default() -> Self {
        Self::new()
    }
}

impl ChangeTree {
    pub fn new() -> Self {
        Self {
            nodes: vec![Node {
                time: 0,
                depth: 0,
                parent: None,
            }],
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn extend(&mut self, parent: NodeId, time: usize) -> NodeId {
        let p = self.nodes[parent.0 as usize];
        debug_assert!(time as u32 > p.time || parent.0 == 0);
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            time: time as u32,
            depth: p.depth + 1,
            parent: Some(parent),
        });
        id
    }

    pub fn last(&self, id: NodeId) -> usize {
        self.nodes[id.0 as usize].time as usize
    }

    /// Number of changepoints in the vector.
    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id.0 as usize].depth as usize
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Changepoint times in increasing order, root excluded.
    pub fn taus(&self, id: NodeId) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.depth(id));
        let mut cur = Some(id);
        while let Some(c) = cur {
            let node = self.nodes[c.0 as usize];
            if node.parent.is_some() {
                out.push(node.time as usize);
            }
            cur = node.parent;
        }
        out.reverse();
        out
    }

    /// Tie-break order: fewer changepoints first, then lexicographically
    /// smaller vectors.
    pub fn cmp_preference(&self, a: NodeId, b: NodeId) -> Ordering {
        if a == b {
            return Ordering::Equal;
        }
        self.depth(a)
            .cmp(&self.depth(b))
            .then_with(|| self.taus(a).cmp(&self.taus(b)))
    }
}

/// Closed interval of boundary values; ends may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// One piece of the lower envelope: `owner` attains the minimum on `interval`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePiece {
    pub owner: usize,
    pub interval: Interval,
}

/// Sweeps the pointwise minimum of `fns` from `-inf` to `+inf`.
///
/// Pieces are written to `out` in increasing order of `phi`. `prefer`
/// breaks exact ties between two indices (`Less` keeps the first).
pub fn envelope_pieces<P>(fns: &[Quadratic], prefer: P, out: &mut Vec<EnvelopePiece>)
where
    P: Fn(usize, usize) -> Ordering,
{
    out.clear();
    if fns.is_empty() {
        return;
    }
    let mut cur = 0;
    for i in 1..fns.len() {
        if fns[i]
            .cmp_at_neg_infinity(&fns[cur])
            .then_with(|| prefer(i, cur))
            == Ordering::Less
        {
            cur = i;
        }
    }
    let mut active: Vec<usize> = (0..fns.len()).filter(|&i| i != cur).collect();
    let mut next_active = Vec::with_capacity(active.len());
    let mut hits: Vec<(usize, f64)> = Vec::new();
    let mut start = f64::NEG_INFINITY;
    let mut phi = f64::NEG_INFINITY;

    loop {
        hits.clear();
        next_active.clear();
        let mut twin: Option<usize> = None;
        let mut first = f64::INFINITY;
        for &i in &active {
            match fns[i].crossing_after(&fns[cur], phi) {
                Ok(Some(x)) => {
                    hits.push((i, x));
                    next_active.push(i);
                    first = first.min(x);
                }
                Ok(None) => {}
                Err(_) => {
                    // Identical to the current optimum: only the preferred
                    // one of the pair stays.
                    if prefer(i, cur) == Ordering::Less
                        && twin.is_none_or(|t| prefer(i, t) == Ordering::Less)
                    {
                        twin = Some(i);
                    }
                }
            }
        }
        std::mem::swap(&mut active, &mut next_active);

        if let Some(t) = twin {
            cur = t;
            active.retain(|&i| i != t);
            continue;
        }
        if hits.is_empty() {
            out.push(EnvelopePiece {
                owner: cur,
                interval: Interval {
                    lo: start,
                    hi: f64::INFINITY,
                },
            });
            return;
        }

        let window = first + ABS_TOL + REL_TOL * first.abs();
        let mut next = cur;
        for &(i, x) in &hits {
            if x <= window
                && fns[i]
                    .cmp_right_of(&fns[next], first)
                    .then_with(|| prefer(i, next))
                    == Ordering::Less
            {
                next = i;
            }
        }
        if next != cur {
            out.push(EnvelopePiece {
                owner: cur,
                interval: Interval {
                    lo: start,
                    hi: first,
                },
            });
            start = first;
            if let Some(pos) = active.iter().position(|&i| i == next) {
                active.swap_remove(pos);
            }
            active.push(cur);
            cur = next;
        }
        phi = first;
    }
}

/// Per-function lists of the intervals on which each attains the minimum.
pub fn compute_intervals<P>(fns: &[Quadratic], prefer: P) -> Vec<Vec<Interval>>
where
    P: Fn(usize, usize) -> Ordering,
{
    let mut pieces = Vec::new();
    envelope_pieces(fns, prefer, &mut pieces);
    let mut out = vec![Vec::new(); fns.len()];
    for p in pieces {
        out[p.owner].push(p.interval);
    }
    out
}

/// Survivors of inequality-based pruning: `keep[i]` is false when
/// `minima[i]` exceeds the smallest minimum by more than `margin`.
pub fn inequality_survivors(minima: &[f64], margin: f64) -> Vec<bool> {
    let best = minima.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = best + margin + ABS_TOL + REL_TOL * best.abs();
    minima.iter().map(|&v| v <= threshold).collect()
}

/// Which pruning rules the solver applies, plus tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpopOptions {
    /// Only candidates on the lower envelope spawn children.
    pub functional_pruning: bool,
    /// Drop candidates whose minimum exceeds the global minimum by `2 beta + h(1) + h(n)`.
    pub inequality_pruning: bool,
    /// Record per-step candidate-set sizes and timestamps.
    pub trace: bool,
    /// Abort with [`Error::CandidateLimit`] once the candidate set exceeds this size.
    pub candidate_limit: Option<usize>,
}

impl Default for CpopOptions {
    fn default() -> Self {
        Self {
            functional_pruning: true,
            inequality_pruning: true,
            trace: false,
            candidate_limit: None,
        }
    }
}

impl CpopOptions {
    pub fn with_pruning(functional_pruning: bool, inequality_pruning: bool) -> Self {
        Self {
            functional_pruning,
            inequality_pruning,
            ..Self::default()
        }
    }

    pub fn traced(mut self) -> Self {
        self.trace = true;
        self
    }
}

/// One row of the per-step trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// Candidates owning part of the envelope at `t`.
    pub optimal: usize,
    /// Candidates whose cost was evaluated at `t`.
    pub candidates: usize,
    /// Seconds since the solver started.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Empty unless tracing was enabled.
    pub trace: Vec<TraceRow>,
    /// Candidates evaluated at the final step.
    pub final_candidates: usize,
    /// Largest candidate set over the run.
    pub peak_candidates: usize,
    pub elapsed: Duration,
}

/// Optimal continuous piecewise-linear fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub n: usize,
    /// Changepoint times, strictly increasing in `1..n`.
    pub taus: Vec<usize>,
    /// Fitted values at times `0, taus.., n`.
    pub phis: Vec<f64>,
    /// Penalized cost: scaled RSS plus length penalties plus `beta * (m + 1)`.
    pub cost: f64,
    pub diagnostics: Diagnostics,
}

impl Segmentation {
    pub fn m(&self) -> usize {
        self.taus.len()
    }

    /// Fitted mean at every time point.
    pub fn fitted(&self) -> Vec<f64> {
        fitted_values(self.n, &self.taus, &self.phis)
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    node: NodeId,
    last: usize,
    origin: Quadratic,
    f: Quadratic,
    min_value: f64,
    evaluated_at: usize,
    optimal: bool,
    pruned: bool,
}

impl Candidate {
    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Most recent changepoint (0 for the vector with no changes).
    pub fn last(&self) -> usize {
        self.last
    }

    /// Cost function at the time it was last evaluated.
    pub fn cost_fn(&self) -> &Quadratic {
        &self.f
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn evaluated_at(&self) -> usize {
        self.evaluated_at
    }
}

/// Step-by-step solver. [`cpop`] drives it to completion.
#[derive(Debug)]
pub struct CpopSolver {
    prefix: PrefixSums,
    cfg: PenaltyConfig,
    opts: CpopOptions,
    margin: f64,
    t: usize,
    tree: ChangeTree,
    live: Vec<Candidate>,
    fns: Vec<Quadratic>,
    pieces: Vec<EnvelopePiece>,
    trace: Vec<TraceRow>,
    peak: usize,
    started: Instant,
}

impl CpopSolver {
    pub fn new(y: &[f64], cfg: &PenaltyConfig, opts: CpopOptions) -> Result<Self> {
        validate_data(y)?;
        cfg.validate()?;
        let prefix = PrefixSums::new(y)?;
        let tree = ChangeTree::new();
        let root = Candidate {
            node: tree.root(),
            last: 0,
            origin: Quadratic::ZERO,
            f: Quadratic::ZERO,
            min_value: f64::INFINITY,
            evaluated_at: 0,
            optimal: false,
            pruned: false,
        };
        Ok(Self {
            margin: cfg.pruning_margin(y.len()),
            prefix,
            cfg: *cfg,
            opts,
            t: 0,
            tree,
            live: vec![root],
            fns: Vec::new(),
            pieces: Vec::new(),
            trace: Vec::new(),
            peak: 1,
            started: Instant::now(),
        })
    }

    pub fn n(&self) -> usize {
        self.prefix.len()
    }

    /// Time of the last completed step.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn tree(&self) -> &ChangeTree {
        &self.tree
    }

    /// Candidates evaluated at the current time (pruned ones included until
    /// the next step).
    pub fn evaluated(&self) -> impl Iterator<Item = &Candidate> {
        let t = self.t;
        self.live.iter().filter(move |c| c.evaluated_at == t)
    }

    /// All candidates currently held, including unevaluated children.
    pub fn candidates(&self) -> &[Candidate] {
        &self.live
    }

    /// Envelope pieces of the current step, indexed into [`Self::evaluated`]
    /// order. Empty when neither functional pruning nor tracing is on.
    pub fn envelope(&self) -> &[EnvelopePiece] {
        &self.pieces
    }

    /// Lower envelope `min_tau f_tau^t(phi)` at the current time.
    pub fn envelope_value(&self, phi: f64) -> f64 {
        self.evaluated()
            .map(|c| c.f.eval(phi))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Advances one time step. Returns `false` once all data is consumed.
    pub fn step(&mut self) -> Result<bool> {
        let n = self.n();
        if self.t >= n {
            return Ok(false);
        }
        self.t += 1;
        let t = self.t;
        self.live.retain(|c| !c.pruned);

        let (beta, sigma2) = (self.cfg.beta, self.cfg.sigma2);
        self.fns.clear();
        for c in &mut self.live {
            let seg = self
                .prefix
                .segment_coefficients_unchecked(c.last, t, sigma2);
            c.f = minimize_out_start(&c.origin, &seg, beta, self.cfg.h_value(t - c.last))?;
            c.min_value = c.f.minimum()?.1;
            c.evaluated_at = t;
            c.optimal = !self.opts.functional_pruning;
            self.fns.push(c.f);
        }

        let mut optimal_count = self.live.len();
        if self.opts.functional_pruning || self.opts.trace {
            let tree = &self.tree;
            let live = &self.live;
            envelope_pieces(
                &self.fns,
                |a, b| tree.cmp_preference(live[a].node, live[b].node),
                &mut self.pieces,
            );
            let mut flags = vec![false; self.live.len()];
            for p in &self.pieces {
                flags[p.owner] = true;
            }
            optimal_count = flags.iter().filter(|&&f| f).count();
            if self.opts.functional_pruning {
                for (c, f) in self.live.iter_mut().zip(flags) {
                    c.optimal = f;
                }
            }
        } else {
            self.pieces.clear();
        }

        if self.opts.trace {
            self.trace.push(TraceRow {
                t,
                optimal: optimal_count,
                candidates: self.live.len(),
                elapsed_s: self.started.elapsed().as_secs_f64(),
            });
        }

        if self.opts.inequality_pruning {
            let minima: Vec<f64> = self.live.iter().map(|c| c.min_value).collect();
            for (c, keep) in self
                .live
                .iter_mut()
                .zip(inequality_survivors(&minima, self.margin))
            {
                c.pruned = !keep;
            }
        }

        if t < n {
            let evaluated = self.live.len();
            for i in 0..evaluated {
                let c = &self.live[i];
                if c.optimal && !c.pruned {
                    let node = self.tree.extend(c.node, t);
                    let origin = c.f;
                    self.live.push(Candidate {
                        node,
                        last: t,
                        origin,
                        f: Quadratic::ZERO,
                        min_value: f64::INFINITY,
                        evaluated_at: 0,
                        optimal: false,
                        pruned: false,
                    });
                }
            }
        }

        let size = self.live.iter().filter(|c| !c.pruned).count();
        self.peak = self.peak.max(size);
        if let Some(limit) = self.opts.candidate_limit {
            if size > limit {
                return Err(Error::CandidateLimit { t, size, limit });
            }
        }
        Ok(true)
    }

    /// Runs the remaining steps and extracts the optimal segmentation.
    pub fn finish(mut self) -> Result<Segmentation> {
        while self.step()? {}
        let n = self.n();
        let finals: Vec<&Candidate> = self.live.iter().filter(|c| c.evaluated_at == n).collect();
        let best = finals
            .iter()
            .map(|c| c.min_value)
            .fold(f64::INFINITY, f64::min);
        let window = best + ABS_TOL + REL_TOL * best.abs();
        let winner = finals
            .iter()
            .filter(|c| c.min_value <= window)
            .min_by(|a, b| self.tree.cmp_preference(a.node, b.node))
            .expect("at least one candidate survives to the end");
        let taus = self.tree.taus(winner.node);
        let cost = winner.min_value;
        let phis = reconstruct_phis_from(&self.prefix, &taus, self.cfg.sigma2)?;
        Ok(Segmentation {
            n,
            taus,
            phis,
            cost,
            diagnostics: Diagnostics {
                trace: self.trace,
                final_candidates: finals.len(),
                peak_candidates: self.peak,
                elapsed: self.started.elapsed(),
            },
        })
    }
}

/// Exact minimizer of the penalized cost over changepoints and boundary values.
pub fn cpop(y: &[f64], cfg: &PenaltyConfig, opts: CpopOptions) -> Result<Segmentation> {
    if y.len() < 2 {
        validate_data(y)?;
        return Err(Error::TooShort {
            needed: 2,
            got: y.len(),
        });
    }
    CpopSolver::new(y, cfg, opts)?.finish()
}

pub(crate) fn check_taus(taus: &[usize], n: usize) -> Result<()> {
    let mut prev = 0;
    for &tau in taus {
        if tau <= prev || tau >= n {
            return Err(Error::InvalidChangepoints(format!(
                "{taus:?} must be strictly increasing within 1..{n}"
            )));
        }
        prev = tau;
    }
    Ok(())
}

/// Fitted mean at times `1..=n` of the continuous line through `(boundary, phi)`.
pub fn fitted_values(n: usize, taus: &[usize], phis: &[f64]) -> Vec<f64> {
    let mut bounds = Vec::with_capacity(taus.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(taus);
    bounds.push(n);
    let mut out = Vec::with_capacity(n);
    for (w, p) in bounds.windows(2).zip(phis.windows(2)) {
        let (s, e) = (w[0], w[1]);
        let len = (e - s) as f64;
        for j in s + 1..=e {
            out.push(p[0] + (p[1] - p[0]) * (j - s) as f64 / len);
        }
    }
    out
}

/// Boundary values minimizing the scaled RSS for fixed changepoints, and
/// that RSS (no penalties).
///
/// When the first segment holds a single observation the start value is not
/// identified; it is set equal to the value at the first changepoint.
pub fn reconstruct_phis(y: &[f64], taus: &[usize], sigma2: f64) -> Result<(Vec<f64>, f64)> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::SigmaNotPositive(sigma2));
    }
    let prefix = PrefixSums::new(y)?;
    let phis = reconstruct_phis_from(&prefix, taus, sigma2)?;
    let rss = fitted_values(y.len(), taus, &phis)
        .iter()
        .zip(y)
        .map(|(f, v)| (v - f) * (v - f))
        .sum::<f64>()
        / sigma2;
    Ok((phis, rss))
}

fn reconstruct_phis_from(prefix: &PrefixSums, taus: &[usize], sigma2: f64) -> Result<Vec<f64>> {
    let n = prefix.len();
    check_taus(taus, n)?;
    let mut bounds = Vec::with_capacity(taus.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(taus);
    bounds.push(n);
    let k = bounds.len();

    // Gradient of the summed segment quadratics: H phi = rhs, H tridiagonal.
    let mut diag = vec![0.0; k];
    let mut off = vec![0.0; k - 1];
    let mut rhs = vec![0.0; k];
    for i in 0..k - 1 {
        let seg = prefix.segment_coefficients_unchecked(bounds[i], bounds[i + 1], sigma2);
        diag[i] += 2.0 * seg.start_sq;
        diag[i + 1] += 2.0 * seg.end_sq;
        off[i] += seg.cross;
        rhs[i] -= seg.start_lin;
        rhs[i + 1] -= seg.end_lin;
    }

    let first = if bounds[1] - bounds[0] == 1 { 1 } else { 0 };
    let mut phis = vec![0.0; k];
    solve_tridiagonal(
        &diag[first..],
        &off[first..],
        &rhs[first..],
        &mut phis[first..],
    )
    .map_err(|row| Error::SingularSystem(row + first))?;
    if first == 1 {
        phis[0] = phis[1];
    }
    Ok(phis)
}

/// Thomas algorithm for a symmetric positive-definite tridiagonal system.
/// `off[i]` couples rows `i` and `i + 1`. Returns the failing row on a
/// non-positive pivot.
fn solve_tridiagonal(
    diag: &[f64],
    off: &[f64],
    rhs: &[f64],
    out: &mut [f64],
) -> std::result::Result<(), usize> {
    let k = diag.len();
    let mut pivots = Vec::with_capacity(k);
    let mut reduced = Vec::with_capacity(k);
    let scale = diag.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
    for i in 0..k {
        let (mut p, mut r) = (diag[i], rhs[i]);
        if i > 0 {
            let w = off[i - 1] / pivots[i - 1];
            p -= w * off[i - 1];
            r -= w * reduced[i - 1];
        }
        if p.is_nan() || p <= 1e-14 * scale {
            return Err(i);
        }
        pivots.push(p);
        reduced.push(r);
    }
    for i in (0..k).rev() {
        let mut v = reduced[i];
        if i + 1 < k {
            v -= off[i] * out[i + 1];
        }
        out[i] = v / pivots[i];
    }
    Ok(())
}
