//! Assembly of phases and inter-phase links into one nonlinear program.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::ElementBasis;
use super::phase::{element_residual, BoundaryCondition, ElementWork, End, Phase, PhaseObjective};
use super::DfetError;
use crate::nlp::{minimize, NlpOptions, NlpProblem, NlpReport, NlpSpec};

/// Phase, parity and local column of a colour group, with its columns.
type ColorGroup = (Option<(usize, usize, usize)>, Vec<usize>);

/// Constraints joining the end of phase `from` to the start of phase `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Continuity of the full state and of time.
    Continuity { from: usize, to: usize },
    /// Unpowered swing-by of `body`: position, time and the non-kinematic
    /// states are continuous; the relative velocity keeps its modulus and
    /// turns by the deflection of a pericentre radius that becomes a static
    /// parameter. Both phases must share a frame and units.
    SwingBy { from: usize, to: usize, body: String },
}

impl Link {
    fn ends(&self) -> (usize, usize) {
        match self {
            Link::Continuity { from, to } | Link::SwingBy { from, to, .. } => (*from, *to),
        }
    }
}

/// Absolute indices of one phase's variables in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseLayout {
    pub n_elements: usize,
    pub p: usize,
    pub n_x: usize,
    pub n_u: usize,
    /// Gauss-node states, element-major then node-major.
    pub xs: usize,
    /// Gauss-node controls, same ordering.
    pub us: usize,
    pub x0: usize,
    pub xf: usize,
    pub t0: usize,
    pub tf: usize,
}

impl PhaseLayout {
    pub fn node_x(&self, e: usize, q: usize) -> usize {
        self.xs + (e * self.p + q) * self.n_x
    }

    pub fn node_u(&self, e: usize, q: usize) -> usize {
        self.us + (e * self.p + q) * self.n_u
    }

    fn len(&self) -> usize {
        self.n_elements * self.p * (self.n_x + self.n_u) + 2 * self.n_x + 2
    }

    /// Per-element block width used for coloured differencing.
    fn local_width(&self) -> usize {
        self.p * (self.n_x + self.n_u)
    }

    fn local_index(&self, e: usize, l: usize) -> usize {
        let px = self.p * self.n_x;
        if l < px {
            self.xs + e * px + l
        } else {
            self.us + e * self.p * self.n_u + (l - px)
        }
    }
}

/// Which variables a constraint row can depend on besides global ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowTag {
    /// Element `e` of `phase` and the element before it.
    Element { phase: usize, e: usize },
    Global,
}

#[derive(Debug, Clone, Copy)]
struct FlybyData {
    mu: f64,
    rp_min: f64,
}

/// The assembled program over `y = [phase blocks…, static parameters…]`,
/// each phase block being `[x_s, u_s, x₀ᵇ, x_fᵇ, t₀, t_f]`.
#[derive(Debug)]
pub struct TranscribedNlp {
    phases: Vec<Phase>,
    links: Vec<Link>,
    layouts: Vec<PhaseLayout>,
    bases: Vec<ElementBasis>,
    /// Static parameter index of each link.
    link_param: Vec<Option<usize>>,
    flyby: Vec<Option<FlybyData>>,
    params: usize,
    n: usize,
    n_eq: usize,
    n_ineq: usize,
    eq_tags: Vec<RowTag>,
    ineq_tags: Vec<RowTag>,
    /// Smallest allowed phase duration.
    pub min_duration: f64,
    /// Relative step for the coloured finite-difference Jacobian.
    pub fd_step: f64,
}

/// Joins phases and links into a [`TranscribedNlp`].
pub fn assemble(phases: Vec<Phase>, links: Vec<Link>) -> Result<TranscribedNlp, DfetError> {
    if phases.is_empty() {
        return Err(DfetError::Assembly("no phases".into()));
    }
    for (i, ph) in phases.iter().enumerate() {
        ph.validate().map_err(|e| DfetError::Assembly(format!("phase {i}: {e}")))?;
    }
    let mut layouts = Vec::with_capacity(phases.len());
    let mut offset = 0;
    for ph in &phases {
        let (ne, p, nx, nu) = (ph.mesh.n_elements(), ph.mesh.p, ph.dynamics.n_x(), ph.dynamics.n_u());
        let xs = offset;
        let us = xs + ne * p * nx;
        let x0 = us + ne * p * nu;
        let l = PhaseLayout {
            n_elements: ne,
            p,
            n_x: nx,
            n_u: nu,
            xs,
            us,
            x0,
            xf: x0 + nx,
            t0: x0 + 2 * nx,
            tf: x0 + 2 * nx + 1,
        };
        offset += l.len();
        layouts.push(l);
    }
    let mut link_param = Vec::with_capacity(links.len());
    let mut flyby = Vec::with_capacity(links.len());
    let mut params = 0;
    for (k, link) in links.iter().enumerate() {
        let (from, to) = link.ends();
        if from >= phases.len() || to >= phases.len() || from == to {
            return Err(DfetError::Assembly(format!("link {k} references phases {from} -> {to}")));
        }
        let (nf, nt) = (phases[from].dynamics.n_x(), phases[to].dynamics.n_x());
        if nf != nt {
            return Err(DfetError::Assembly(format!("link {k} joins phases with different state sizes")));
        }
        match link {
            Link::Continuity { .. } => {
                link_param.push(None);
                flyby.push(None);
            }
            Link::SwingBy { body, .. } => {
                if nf < 6 {
                    return Err(DfetError::Assembly(format!("link {k}: swing-by needs position and velocity states")));
                }
                let (mu, rp_min) = phases[from]
                    .dynamics
                    .flyby_body(body)
                    .map_err(|e| DfetError::Assembly(format!("link {k}: {e}")))?;
                phases[from]
                    .dynamics
                    .body_state(body, phases[from].tf.0)
                    .map_err(|e| DfetError::Assembly(format!("link {k}: {e}")))?;
                link_param.push(Some(offset + params));
                flyby.push(Some(FlybyData { mu, rp_min }));
                params += 1;
            }
        }
    }
    for (i, ph) in phases.iter().enumerate() {
        for bc in &ph.boundary {
            let BoundaryCondition::AtBody { end, body, .. } = bc;
            let t = if *end == End::Initial { ph.t0.0 } else { ph.tf.0 };
            if ph.dynamics.n_x() < 6 {
                return Err(DfetError::Assembly(format!("phase {i}: body conditions need position and velocity states")));
            }
            ph.dynamics
                .body_state(body, t)
                .map_err(|e| DfetError::Assembly(format!("phase {i}: {e}")))?;
        }
    }

    let mut eq_tags = Vec::new();
    let mut ineq_tags = Vec::new();
    for (i, (ph, l)) in phases.iter().zip(&layouts).enumerate() {
        for e in 0..l.n_elements {
            eq_tags.extend(std::iter::repeat_n(RowTag::Element { phase: i, e }, l.p * l.n_x));
        }
        eq_tags.extend(std::iter::repeat_n(RowTag::Element { phase: i, e: l.n_elements }, l.n_x));
        for e in 0..l.n_elements {
            ineq_tags.extend(std::iter::repeat_n(RowTag::Element { phase: i, e }, l.p * ph.dynamics.n_path()));
        }
        ineq_tags.push(RowTag::Global);
        for bc in &ph.boundary {
            let BoundaryCondition::AtBody { v_inf_max, .. } = bc;
            eq_tags.extend([RowTag::Global; 3]);
            match v_inf_max {
                Some(v) if *v == 0.0 => eq_tags.extend([RowTag::Global; 3]),
                Some(_) => ineq_tags.push(RowTag::Global),
                None => {}
            }
        }
    }
    for link in &links {
        let nx = phases[link.ends().0].dynamics.n_x();
        let rows = match link {
            Link::Continuity { .. } => nx + 1,
            Link::SwingBy { .. } => 1 + 3 + 3 + (nx - 6) + 2,
        };
        eq_tags.extend(std::iter::repeat_n(RowTag::Global, rows));
    }
    let bases = phases.iter().map(|ph| ElementBasis::new(ph.mesh.p)).collect();
    Ok(TranscribedNlp {
        n: offset + params,
        n_eq: eq_tags.len(),
        n_ineq: ineq_tags.len(),
        eq_tags,
        ineq_tags,
        phases,
        links,
        layouts,
        bases,
        link_param,
        flyby,
        params,
        min_duration: 1e-6,
        fd_step: 1e-7,
    })
}

/// State, control and time at one Gauss node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSolution {
    pub t0: f64,
    pub tf: f64,
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    pub nodes: Vec<NodeSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfetSolution {
    pub y: Vec<f64>,
    pub phases: Vec<PhaseSolution>,
    /// Static parameters (swing-by pericentre radii) in link order.
    pub params: Vec<f64>,
    pub report: NlpReport,
}

/// Guess for one phase as functions of time.
pub struct PhaseGuess<'a> {
    pub t0: f64,
    pub tf: f64,
    pub state: &'a dyn Fn(f64) -> Vec<f64>,
    pub control: &'a dyn Fn(f64) -> Vec<f64>,
}

impl TranscribedNlp {
    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    /// Replaces the objective of phase `i`.
    pub fn set_objective(&mut self, i: usize, objective: PhaseObjective) -> Result<(), DfetError> {
        let nx = self.layouts[i].n_x;
        if let PhaseObjective::MaxFinal(c) = objective {
            if c >= nx {
                return Err(DfetError::Invalid(format!("objective state index {c} out of range")));
            }
        }
        self.phases[i].objective = objective;
        Ok(())
    }

    pub fn layout(&self, phase: usize) -> &PhaseLayout {
        &self.layouts[phase]
    }

    pub fn n_params(&self) -> usize {
        self.params
    }

    /// Index in `y` of the static parameter of link `k`, if it has one.
    pub fn param_index(&self, k: usize) -> Option<usize> {
        self.link_param.get(k).copied().flatten()
    }

    /// Element start time and length.
    fn element_span(&self, i: usize, e: usize, t0: f64, tf: f64) -> (f64, f64) {
        let b = &self.phases[i].mesh.boundaries;
        (t0 + b[e] * (tf - t0), (b[e + 1] - b[e]) * (tf - t0))
    }

    /// Gauss-node times of phase `i` for the given end times.
    pub fn node_times(&self, i: usize, t0: f64, tf: f64) -> Vec<f64> {
        let basis = &self.bases[i];
        (0..self.layouts[i].n_elements)
            .flat_map(|e| {
                let (ta, h) = self.element_span(i, e, t0, tf);
                basis.gauss.iter().map(move |g| ta + 0.5 * (g + 1.0) * h)
            })
            .collect()
    }

    /// Builds `y` by sampling each phase guess at its Gauss nodes; swing-by
    /// radii start at `params` (link order) or twice their floor.
    pub fn initial_guess(&self, guesses: &[PhaseGuess<'_>], params: &[f64]) -> Result<Vec<f64>, DfetError> {
        if guesses.len() != self.phases.len() {
            return Err(DfetError::Invalid(format!(
                "{} phase guesses for {} phases",
                guesses.len(),
                self.phases.len()
            )));
        }
        let mut y = vec![0.0; self.n];
        for (i, g) in guesses.iter().enumerate() {
            let l = &self.layouts[i];
            let times = self.node_times(i, g.t0, g.tf);
            let sized = |v: Vec<f64>, n: usize| {
                if v.len() == n {
                    Ok(v)
                } else {
                    Err(DfetError::Invalid(format!("phase {i} guess has {} entries, expected {n}", v.len())))
                }
            };
            for (k, &t) in times.iter().enumerate() {
                let x = sized((g.state)(t), l.n_x)?;
                let u = sized((g.control)(t), l.n_u)?;
                y[l.xs + k * l.n_x..l.xs + (k + 1) * l.n_x].copy_from_slice(&x);
                y[l.us + k * l.n_u..l.us + (k + 1) * l.n_u].copy_from_slice(&u);
            }
            y[l.x0..l.x0 + l.n_x].copy_from_slice(&sized((g.state)(g.t0), l.n_x)?);
            y[l.xf..l.xf + l.n_x].copy_from_slice(&sized((g.state)(g.tf), l.n_x)?);
            y[l.t0] = g.t0;
            y[l.tf] = g.tf;
        }
        let mut next = 0;
        for (k, idx) in self.link_param.iter().enumerate() {
            if let Some(idx) = idx {
                let floor = self.flyby[k].map_or(1.0, |f| f.rp_min);
                y[*idx] = params.get(next).copied().unwrap_or(2.0 * floor);
                next += 1;
            }
        }
        Ok(y)
    }

    /// Variable bounds.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::NEG_INFINITY; self.n];
        let mut hi = vec![f64::INFINITY; self.n];
        for (ph, l) in self.phases.iter().zip(&self.layouts) {
            for k in 0..l.n_elements * l.p {
                for c in 0..l.n_x {
                    (lo[l.xs + k * l.n_x + c], hi[l.xs + k * l.n_x + c]) = ph.states[c];
                }
                for c in 0..l.n_u {
                    (lo[l.us + k * l.n_u + c], hi[l.us + k * l.n_u + c]) = ph.controls[c];
                }
            }
            for c in 0..l.n_x {
                (lo[l.x0 + c], hi[l.x0 + c]) = ph.x0[c];
                (lo[l.xf + c], hi[l.xf + c]) = ph.xf[c];
            }
            (lo[l.t0], hi[l.t0]) = ph.t0;
            (lo[l.tf], hi[l.tf]) = ph.tf;
        }
        for (k, idx) in self.link_param.iter().enumerate() {
            if let (Some(idx), Some(f)) = (idx, self.flyby[k]) {
                lo[*idx] = f.rp_min;
                hi[*idx] = 100.0 * f.rp_min;
            }
        }
        (lo, hi)
    }

    /// Writes the residuals and path constraints of phase `i`.
    fn phase_rows(&self, i: usize, y: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let (ph, l, basis) = (&self.phases[i], &self.layouts[i], &self.bases[i]);
        let dynamics = ph.dynamics.as_ref();
        let (nx, nu, p) = (l.n_x, l.n_u, l.p);
        let (t0, tf) = (y[l.t0], y[l.tf]);
        let (res, rest) = eq.split_at_mut(l.n_elements * p * nx);
        let rights: Vec<Vec<f64>> = res
            .par_chunks_mut(p * nx)
            .enumerate()
            .map(|(e, r)| {
                let (ta, h) = self.element_span(i, e, t0, tf);
                let xs = &y[l.node_x(e, 0)..l.node_x(e, 0) + p * nx];
                let us = &y[l.node_u(e, 0)..l.node_u(e, 0) + p * nu];
                let mut xr = vec![0.0; nx];
                let mut work = ElementWork::new(nx, p);
                element_residual(dynamics, basis, ta, h, &vec![0.0; nx], xs, us, r, &mut xr, &mut work);
                xr
            })
            .collect();
        for e in 0..l.n_elements {
            let left = if e == 0 { &y[l.x0..l.x0 + nx] } else { &rights[e - 1][..] };
            for c in 0..nx {
                res[e * p * nx + c] += left[c];
            }
        }
        let last = &rights[l.n_elements - 1];
        for c in 0..nx {
            rest[c] = y[l.xf + c] - last[c];
        }
        let np = dynamics.n_path();
        if np > 0 {
            let times = self.node_times(i, t0, tf);
            for (k, &t) in times.iter().enumerate() {
                dynamics.path(
                    t,
                    &y[l.xs + k * nx..l.xs + (k + 1) * nx],
                    &y[l.us + k * nu..l.us + (k + 1) * nu],
                    &mut ineq[k * np..(k + 1) * np],
                );
            }
        }
        ineq[times_len(l, np)] = tf - t0 - self.min_duration;
    }

    /// Boundary-condition rows of phase `i`; returns rows used.
    fn boundary_rows(&self, i: usize, y: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> (usize, usize) {
        let (ph, l) = (&self.phases[i], &self.layouts[i]);
        let (mut ne, mut ni) = (0, 0);
        for bc in &ph.boundary {
            let BoundaryCondition::AtBody { end, body, v_inf_max } = bc;
            let (xi, ti) = match end {
                End::Initial => (l.x0, l.t0),
                End::Final => (l.xf, l.tf),
            };
            let r = Vector3::from_column_slice(&y[xi..xi + 3]);
            let v = Vector3::from_column_slice(&y[xi + 3..xi + 6]);
            let (rb, vb) = ph
                .dynamics
                .body_state(body, y[ti])
                .unwrap_or((Vector3::repeat(f64::NAN), Vector3::repeat(f64::NAN)));
            let dr = r - rb;
            eq[ne..ne + 3].copy_from_slice(dr.as_slice());
            ne += 3;
            let dv = v - vb;
            match v_inf_max {
                Some(vm) if *vm == 0.0 => {
                    eq[ne..ne + 3].copy_from_slice(dv.as_slice());
                    ne += 3;
                }
                Some(vm) => {
                    ineq[ni] = vm * vm - dv.norm_squared();
                    ni += 1;
                }
                None => {}
            }
        }
        (ne, ni)
    }

    /// Link rows for link `k`; returns rows used.
    fn link_rows(&self, k: usize, y: &[f64], eq: &mut [f64]) -> usize {
        let (from, to) = self.links[k].ends();
        let (lf, lt) = (&self.layouts[from], &self.layouts[to]);
        let nx = lf.n_x;
        let xf = &y[lf.xf..lf.xf + nx];
        let x0 = &y[lt.x0..lt.x0 + nx];
        eq[0] = y[lt.t0] - y[lf.tf];
        match &self.links[k] {
            Link::Continuity { .. } => {
                for c in 0..nx {
                    eq[1 + c] = x0[c] - xf[c];
                }
                nx + 1
            }
            Link::SwingBy { body, .. } => {
                let (rb, vb) = self.phases[from]
                    .dynamics
                    .body_state(body, y[lf.tf])
                    .unwrap_or((Vector3::repeat(f64::NAN), Vector3::repeat(f64::NAN)));
                let rf = Vector3::from_column_slice(&xf[..3]);
                let r0 = Vector3::from_column_slice(&x0[..3]);
                eq[1..4].copy_from_slice((rf - rb).as_slice());
                eq[4..7].copy_from_slice((r0 - rb).as_slice());
                for c in 6..nx {
                    eq[7 + c - 6] = x0[c] - xf[c];
                }
                let vin = Vector3::from_column_slice(&xf[3..6]) - vb;
                let vout = Vector3::from_column_slice(&x0[3..6]) - vb;
                let (a, b) = (vin.norm(), vout.norm());
                let f = self.flyby[k].expect("swing-by link has flyby data");
                let rp = y[self.link_param[k].expect("swing-by link has a parameter")];
                let beta = 2.0 * (f.mu / (f.mu + a * a * rp)).asin();
                let turn = vin.cross(&vout).norm().atan2(vin.dot(&vout));
                let base = 7 + nx - 6;
                eq[base] = (b - a) / a.max(1e-12);
                eq[base + 1] = turn - beta;
                base + 2
            }
        }
    }

    fn fill(&self, y: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let (mut re, mut ri) = (0, 0);
        for i in 0..self.phases.len() {
            let l = &self.layouts[i];
            let np = self.phases[i].dynamics.n_path();
            let ne = l.n_elements * l.p * l.n_x + l.n_x;
            let ni = times_len(l, np) + 1;
            self.phase_rows(i, y, &mut eq[re..re + ne], &mut ineq[ri..ri + ni]);
            re += ne;
            ri += ni;
            let (be, bi) = self.boundary_rows(i, y, &mut eq[re..], &mut ineq[ri..]);
            re += be;
            ri += bi;
        }
        for k in 0..self.links.len() {
            re += self.link_rows(k, y, &mut eq[re..]);
        }
        debug_assert_eq!((re, ri), (self.n_eq, self.n_ineq));
    }

    fn control_energy(&self, i: usize, y: &[f64]) -> f64 {
        let (l, basis) = (&self.layouts[i], &self.bases[i]);
        let (t0, tf) = (y[l.t0], y[l.tf]);
        let mut j = 0.0;
        for e in 0..l.n_elements {
            let (_, h) = self.element_span(i, e, t0, tf);
            for q in 0..l.p {
                let u = &y[l.node_u(e, q)..l.node_u(e, q) + l.n_u];
                j += 0.25 * h * basis.weights[q] * u.iter().map(|v| v * v).sum::<f64>();
            }
        }
        j
    }

    /// Colour groups for the Jacobian: element variables two elements apart
    /// never share a row.
    fn colors(&self) -> Vec<ColorGroup> {
        let mut groups = Vec::new();
        for (i, l) in self.layouts.iter().enumerate() {
            for parity in 0..2 {
                for loc in 0..l.local_width() {
                    let vars: Vec<usize> = (parity..l.n_elements).step_by(2).map(|e| l.local_index(e, loc)).collect();
                    if !vars.is_empty() {
                        groups.push((Some((i, parity, loc)), vars));
                    }
                }
            }
            for j in l.x0..l.tf + 1 {
                groups.push((None, vec![j]));
            }
        }
        for j in self.n - self.params..self.n {
            groups.push((None, vec![j]));
        }
        groups
    }

    /// Splits `y` into per-phase solutions and static parameters.
    pub fn unpack(&self, y: &[f64]) -> (Vec<PhaseSolution>, Vec<f64>) {
        let phases = self
            .layouts
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let times = self.node_times(i, y[l.t0], y[l.tf]);
                PhaseSolution {
                    t0: y[l.t0],
                    tf: y[l.tf],
                    x0: y[l.x0..l.x0 + l.n_x].to_vec(),
                    xf: y[l.xf..l.xf + l.n_x].to_vec(),
                    nodes: times
                        .iter()
                        .enumerate()
                        .map(|(k, &t)| NodeSample {
                            t,
                            x: y[l.xs + k * l.n_x..l.xs + (k + 1) * l.n_x].to_vec(),
                            u: y[l.us + k * l.n_u..l.us + (k + 1) * l.n_u].to_vec(),
                        })
                        .collect(),
                }
            })
            .collect();
        (phases, y[self.n - self.params..].to_vec())
    }

    /// Largest violation of equalities, inequalities and bounds at `y`.
    pub fn infeasibility(&self, y: &[f64]) -> f64 {
        let mut eq = vec![0.0; self.n_eq];
        let mut ineq = vec![0.0; self.n_ineq];
        self.fill(y, &mut eq, &mut ineq);
        let (lo, hi) = self.bounds();
        let b = (0..self.n).fold(0.0_f64, |a, j| a.max(lo[j] - y[j]).max(y[j] - hi[j]));
        let v = eq.iter().fold(b, |a, v| a.max(v.abs()));
        ineq.iter().fold(v, |a, v| a.max(-v))
    }
}

fn times_len(l: &PhaseLayout, n_path: usize) -> usize {
    l.n_elements * l.p * n_path
}

impl NlpProblem for TranscribedNlp {
    fn dim(&self) -> usize {
        self.n
    }

    fn n_eq(&self) -> usize {
        self.n_eq
    }

    fn n_ineq(&self) -> usize {
        self.n_ineq
    }

    fn objective(&self, y: &[f64]) -> f64 {
        let mut j = 0.0;
        for (i, (ph, l)) in self.phases.iter().zip(&self.layouts).enumerate() {
            j += match ph.objective {
                PhaseObjective::None => 0.0,
                PhaseObjective::MaxFinal(c) => -y[l.xf + c],
                PhaseObjective::MinTime => y[l.tf] - y[l.t0],
                PhaseObjective::ControlEnergy => self.control_energy(i, y),
            };
        }
        j
    }

    fn constraints(&self, y: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        self.fill(y, eq, ineq);
    }

    fn gradient(&self, y: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.n];
        for (i, (ph, l)) in self.phases.iter().zip(&self.layouts).enumerate() {
            match ph.objective {
                PhaseObjective::None => {}
                PhaseObjective::MaxFinal(c) => g[l.xf + c] -= 1.0,
                PhaseObjective::MinTime => {
                    g[l.tf] += 1.0;
                    g[l.t0] -= 1.0;
                }
                PhaseObjective::ControlEnergy => {
                    let (t0, tf) = (y[l.t0], y[l.tf]);
                    let basis = &self.bases[i];
                    for e in 0..l.n_elements {
                        let (_, h) = self.element_span(i, e, t0, tf);
                        for q in 0..l.p {
                            let k = l.node_u(e, q);
                            for c in 0..l.n_u {
                                g[k + c] += 0.5 * h * basis.weights[q] * y[k + c];
                            }
                        }
                    }
                    let j = self.control_energy(i, y);
                    g[l.tf] += j / (tf - t0);
                    g[l.t0] -= j / (tf - t0);
                }
            }
        }
        Some(g)
    }

    fn jacobian(&self, y: &[f64]) -> Option<DMatrix<f64>> {
        let m = self.n_eq + self.n_ineq;
        let groups = self.colors();
        let columns: Vec<Vec<f64>> = groups
            .par_iter()
            .map(|(_, vars)| {
                let mut yp = y.to_vec();
                let mut ym = y.to_vec();
                for &j in vars {
                    let h = self.fd_step * y[j].abs().max(1.0);
                    yp[j] += h;
                    ym[j] -= h;
                }
                let mut cp = vec![0.0; m];
                let mut cm = vec![0.0; m];
                {
                    let (e, i) = cp.split_at_mut(self.n_eq);
                    self.fill(&yp, e, i);
                }
                {
                    let (e, i) = cm.split_at_mut(self.n_eq);
                    self.fill(&ym, e, i);
                }
                cp.iter().zip(&cm).map(|(a, b)| a - b).collect()
            })
            .collect();
        let mut jac = DMatrix::zeros(m, self.n);
        for ((key, vars), diff) in groups.iter().zip(&columns) {
            match key {
                None => {
                    let j = vars[0];
                    let h = 2.0 * self.fd_step * y[j].abs().max(1.0);
                    for r in 0..m {
                        jac[(r, j)] = diff[r] / h;
                    }
                }
                Some((phase, parity, loc)) => {
                    let l = &self.layouts[*phase];
                    for r in 0..m {
                        if diff[r] == 0.0 {
                            continue;
                        }
                        let tag = if r < self.n_eq { self.eq_tags[r] } else { self.ineq_tags[r - self.n_eq] };
                        let RowTag::Element { phase: rp, e } = tag else {
                            continue;
                        };
                        if rp != *phase {
                            continue;
                        }
                        let owner = if e % 2 == *parity { Some(e) } else { e.checked_sub(1) };
                        let Some(owner) = owner.filter(|&o| o < l.n_elements) else {
                            continue;
                        };
                        let j = l.local_index(owner, *loc);
                        jac[(r, j)] = diff[r] / (2.0 * self.fd_step * y[j].abs().max(1.0));
                    }
                }
            }
        }
        Some(jac)
    }
}

/// Solves the assembled program from `y0`.
pub fn optimize_nlp(nlp: &TranscribedNlp, y0: &[f64], options: &NlpOptions) -> Result<DfetSolution, DfetError> {
    if y0.len() != nlp.n {
        return Err(DfetError::Invalid(format!("initial guess has {} entries, expected {}", y0.len(), nlp.n)));
    }
    let (lower, upper) = nlp.bounds();
    let spec = NlpSpec {
        lower,
        upper,
        scale: vec![1.0; nlp.n],
        options: options.clone(),
    };
    let sol = minimize(nlp, &spec, y0)?;
    let (phases, params) = nlp.unpack(&sol.x);
    Ok(DfetSolution {
        y: sol.x,
        phases,
        params,
        report: sol.report,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dfet::{Dynamics, Mesh};

    /// `ẍ = u`
    struct DoubleIntegrator;

    impl Dynamics for DoubleIntegrator {
        fn n_x(&self) -> usize {
            2
        }
        fn n_u(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = x[1];
            out[1] = u[0];
        }
    }

    fn transfer_phase(mesh: Mesh, t0: f64, tf: f64) -> Phase {
        let mut ph = Phase::new(Arc::new(DoubleIntegrator), mesh, t0, tf);
        ph.objective = PhaseObjective::ControlEnergy;
        ph
    }

    fn zero_guess(nlp: &TranscribedNlp) -> Vec<f64> {
        let times: Vec<(f64, f64)> = nlp.phases().iter().map(|p| (p.t0.0, p.tf.0)).collect();
        let state = |t: f64| vec![t, 1.0];
        let control = |_: f64| vec![0.0];
        let guesses: Vec<PhaseGuess> = times
            .iter()
            .map(|&(t0, tf)| PhaseGuess {
                t0,
                tf,
                state: &state,
                control: &control,
            })
            .collect();
        nlp.initial_guess(&guesses, &[]).unwrap()
    }

    fn options() -> NlpOptions {
        NlpOptions {
            feasibility_tol: 1e-10,
            stationarity_tol: 1e-7,
            ..NlpOptions::default()
        }
    }

    #[test]
    fn variable_count_matches_layout() {
        let ph = transfer_phase(Mesh::uniform(6, 4), 0.0, 1.0);
        let nlp = assemble(vec![ph.clone(), ph], vec![Link::Continuity { from: 0, to: 1 }]).unwrap();
        let per = 6 * 4 * (2 + 1) + 2 * 2 + 2;
        assert_eq!(nlp.dim(), 2 * per);
        assert_eq!(nlp.n_eq(), 2 * (6 * 4 * 2 + 2) + 3);
        assert_eq!(nlp.n_ineq(), 2);
    }

    #[test]
    fn dangling_link_is_rejected() {
        let ph = transfer_phase(Mesh::uniform(2, 2), 0.0, 1.0);
        let err = assemble(vec![ph], vec![Link::Continuity { from: 0, to: 1 }]).unwrap_err();
        assert!(matches!(err, DfetError::Assembly(_)));
    }

    /// Rest-to-rest transfer over unit distance and time: `u = 6 − 12t`,
    /// `∫ ½u² dt = 6`.
    #[test]
    fn minimum_energy_transfer_matches_analytic() {
        let mut ph = transfer_phase(Mesh::uniform(4, 4), 0.0, 1.0);
        ph.fix_initial(&[0.0, 0.0]);
        ph.fix_final(&[1.0, 0.0]);
        let nlp = assemble(vec![ph], vec![]).unwrap();
        let sol = optimize_nlp(&nlp, &zero_guess(&nlp), &options()).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report);
        assert!((sol.report.objective - 6.0).abs() < 1e-8, "{}", sol.report.objective);
        for n in &sol.phases[0].nodes {
            assert!((n.u[0] - (6.0 - 12.0 * n.t)).abs() < 1e-6);
        }
    }

    #[test]
    fn linked_phases_match_single_refined_phase() {
        let mut a = transfer_phase(Mesh::uniform(3, 3), 0.0, 0.4);
        a.fix_initial(&[0.0, 0.0]);
        let mut b = transfer_phase(Mesh::uniform(3, 3), 0.4, 1.0);
        b.fix_final(&[1.0, 0.0]);
        let split = assemble(vec![a, b], vec![Link::Continuity { from: 0, to: 1 }]).unwrap();
        let two = optimize_nlp(&split, &zero_guess(&split), &options()).unwrap();

        let mut whole = transfer_phase(
            Mesh {
                boundaries: vec![0.0, 0.4 / 3.0, 0.8 / 3.0, 0.4, 0.6, 0.8, 1.0],
                p: 3,
            },
            0.0,
            1.0,
        );
        whole.fix_initial(&[0.0, 0.0]);
        whole.fix_final(&[1.0, 0.0]);
        let single = assemble(vec![whole], vec![]).unwrap();
        let one = optimize_nlp(&single, &zero_guess(&single), &options()).unwrap();
        assert!(two.report.converged && one.report.converged, "{:?} {:?}", two.report, one.report);
        assert!((two.report.objective - one.report.objective).abs() < 1e-8);
    }

    #[test]
    fn coloured_jacobian_matches_dense_differences() {
        let mut a = transfer_phase(Mesh::uniform(5, 3), 0.0, 0.5);
        a.fix_initial(&[0.0, 0.0]);
        a.tf = (0.3, 0.7);
        let mut b = transfer_phase(Mesh::uniform(4, 2), 0.5, 1.0);
        b.t0 = (0.3, 0.7);
        let nlp = assemble(vec![a, b], vec![Link::Continuity { from: 0, to: 1 }]).unwrap();
        let mut y = zero_guess(&nlp);
        for (k, v) in y.iter_mut().enumerate() {
            *v += 0.01 * (k as f64).sin();
        }
        let jac = nlp.jacobian(&y).unwrap();
        let m = nlp.n_eq() + nlp.n_ineq();
        for j in 0..nlp.dim() {
            let h = 1e-7 * y[j].abs().max(1.0);
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            let (mut ep, mut ip) = (vec![0.0; nlp.n_eq()], vec![0.0; nlp.n_ineq()]);
            let (mut em, mut im) = (ep.clone(), ip.clone());
            nlp.constraints(&yp, &mut ep, &mut ip);
            nlp.constraints(&ym, &mut em, &mut im);
            let cp: Vec<f64> = ep.into_iter().chain(ip).collect();
            let cm: Vec<f64> = em.into_iter().chain(im).collect();
            for r in 0..m {
                let d = (cp[r] - cm[r]) / (2.0 * h);
                assert!((jac[(r, j)] - d).abs() < 1e-7, "row {r} col {j}: {} vs {d}", jac[(r, j)]);
            }
        }
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let mut ph = transfer_phase(Mesh::uniform(3, 3), 0.0, 1.0);
        ph.tf = (0.5, 2.0);
        let nlp = assemble(vec![ph], vec![]).unwrap();
        let mut y = zero_guess(&nlp);
        for (k, v) in y.iter_mut().enumerate() {
            *v += 0.3 * (k as f64).cos();
        }
        let g = nlp.gradient(&y).unwrap();
        for j in 0..nlp.dim() {
            let h = 1e-6;
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            let d = (nlp.objective(&yp) - nlp.objective(&ym)) / (2.0 * h);
            assert!((g[j] - d).abs() <= 1e-6 * (1.0 + d.abs()), "{j}: {} vs {d}", g[j]);
        }
    }
}
